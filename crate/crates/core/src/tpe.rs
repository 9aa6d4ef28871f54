//! Search for the best draft vocabulary size.
//!
//! [`optimize_tpe`] is a univariate Tree-structured Parzen Estimator over the
//! integer interval `[k_min, k_max]`; [`optimize_exhaustive`] scans every `k`
//! and serves as the reference answer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::CoverageCurve;
use crate::latency::ArchitectureProfile;
use crate::objective::{Objective, ObjectiveConfig, TrialEvaluation};

/// Quantile split: the best `min(ceil(fraction * n), cap)` of `n` trials form
/// the "good" set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRule {
    pub fraction: f64,
    pub cap: usize,
}

impl Default for GammaRule {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            cap: 25,
        }
    }
}

impl GammaRule {
    pub fn n_good(&self, n: usize) -> usize {
        ((self.fraction * n as f64).ceil() as usize)
            .min(self.cap)
            .min(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub n_trials: usize,
    pub n_startup_trials: usize,
    pub gamma: GammaRule,
    pub n_candidates: usize,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            n_trials: 100,
            n_startup_trials: 10,
            gamma: GammaRule::default(),
            n_candidates: 24,
            seed: 0,
        }
    }
}

impl TpeConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_startup_trials >= self.n_trials {
            return Err(Error::InvalidConfig(format!(
                "n_startup_trials = {} must be below n_trials = {}",
                self.n_startup_trials, self.n_trials
            )));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidConfig("n_candidates must be >= 1".into()));
        }
        if !(self.gamma.fraction > 0.0 && self.gamma.fraction <= 1.0) || self.gamma.cap == 0 {
            return Err(Error::InvalidConfig(
                "gamma fraction must be in (0, 1] and its cap >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampledBy {
    StartupRandom,
    Tpe,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    #[serde(flatten)]
    pub evaluation: TrialEvaluation,
    pub sampled_by: SampledBy,
}

impl TrialRecord {
    pub fn k(&self) -> u64 {
        self.evaluation.k
    }

    pub fn score(&self) -> f64 {
        self.evaluation.penalized_utility
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub k_star: u64,
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

/// Higher score first, then smaller `k`, then earlier trial.
fn rank_cmp(a: &TrialRecord, b: &TrialRecord) -> std::cmp::Ordering {
    b.score()
        .total_cmp(&a.score())
        .then(a.k().cmp(&b.k()))
        .then(a.index.cmp(&b.index))
}

/// Picks the best trial; fails if none satisfied the coverage constraint.
pub fn select_best(trials: &[TrialRecord], cfg: &ObjectiveConfig) -> Result<TrialRecord> {
    let best = trials
        .iter()
        .min_by(|a, b| rank_cmp(a, b))
        .copied()
        .ok_or_else(|| Error::InvalidConfig("study has no trials".into()))?;
    if !best.evaluation.feasible {
        let top = trials
            .iter()
            .max_by(|a, b| {
                a.evaluation
                    .coverage
                    .total_cmp(&b.evaluation.coverage)
                    .then(b.k().cmp(&a.k()))
            })
            .expect("non-empty");
        return Err(Error::InfeasibleStudy {
            c_min: cfg.c_min,
            max_coverage: top.evaluation.coverage,
            k_at_max: top.k(),
        });
    }
    Ok(best)
}

fn finish(trials: Vec<TrialRecord>, cfg: &ObjectiveConfig) -> Result<StudyResult> {
    let best = select_best(&trials, cfg)?;
    Ok(StudyResult {
        k_star: best.k(),
        best,
        trials,
    })
}

/// Evaluates every `k` in `[k_min, k_max]`.
pub fn optimize_exhaustive(
    curve: &CoverageCurve,
    profile: &ArchitectureProfile,
    obj: ObjectiveConfig,
) -> Result<StudyResult> {
    let objective = Objective::new(curve, profile, obj)?;
    let trials = (obj.k_min..=obj.k_max)
        .enumerate()
        .map(|(index, k)| {
            Ok(TrialRecord {
                index,
                evaluation: objective.evaluate(k)?,
                sampled_by: SampledBy::Exhaustive,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish(trials, &obj)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mixture of truncated Gaussians (one per observation) plus a uniform prior
/// over the search interval, each with weight `1 / (n + 1)`.
#[derive(Debug, Clone)]
pub(crate) struct ParzenEstimator {
    low: f64,
    high: f64,
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    /// Probability mass of each Gaussian inside `[low, high]`.
    norms: Vec<f64>,
    weight: f64,
}

impl ParzenEstimator {
    pub(crate) fn fit(observations: &[f64], low: f64, high: f64) -> Self {
        let width = high - low;
        let min_sigma = 0.01 * width;
        let mut mus = observations.to_vec();
        mus.sort_by(f64::total_cmp);
        let n = mus.len();
        let sigmas: Vec<f64> = (0..n)
            .map(|i| {
                let left = if i == 0 {
                    mus[i] - low
                } else {
                    mus[i] - mus[i - 1]
                };
                let right = if i + 1 == n {
                    high - mus[i]
                } else {
                    mus[i + 1] - mus[i]
                };
                left.max(right).clamp(min_sigma, width)
            })
            .collect();
        let norms = mus
            .iter()
            .zip(&sigmas)
            .map(|(&mu, &s)| {
                (std_normal_cdf((high - mu) / s) - std_normal_cdf((low - mu) / s)).max(1e-300)
            })
            .collect();
        Self {
            low,
            high,
            mus,
            sigmas,
            norms,
            weight: 1.0 / (n as f64 + 1.0),
        }
    }

    pub(crate) fn pdf(&self, x: f64) -> f64 {
        if x < self.low || x > self.high {
            return 0.0;
        }
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let gaussians: f64 = self
            .mus
            .iter()
            .zip(&self.sigmas)
            .zip(&self.norms)
            .map(|((&mu, &s), &z)| {
                let u = (x - mu) / s;
                inv_sqrt_2pi * (-0.5 * u * u).exp() / (s * z)
            })
            .sum();
        self.weight * (gaussians + 1.0 / (self.high - self.low))
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let n = self.mus.len();
        let pick = rng.random_range(0..=n);
        if pick == n {
            return rng.random_range(self.low..=self.high);
        }
        let (mu, s) = (self.mus[pick], self.sigmas[pick]);
        for _ in 0..64 {
            let z: f64 = rng.sample(StandardNormal);
            let x = mu + s * z;
            if (self.low..=self.high).contains(&x) {
                return x;
            }
        }
        mu
    }
}

/// Runs a seeded TPE study over `k`.
///
/// The first `n_startup_trials` draw `k` uniformly. Afterwards each trial
/// splits the history into the best `gamma(n)` trials and the rest, fits a
/// Parzen estimator to each, draws `n_candidates` points from the good
/// estimator and evaluates the candidate with the largest density ratio.
pub fn optimize_tpe(
    curve: &CoverageCurve,
    profile: &ArchitectureProfile,
    obj: ObjectiveConfig,
    tpe: TpeConfig,
) -> Result<StudyResult> {
    tpe.validate()?;
    let objective = Objective::new(curve, profile, obj)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tpe.seed);
    let low = obj.k_min as f64 - 0.5;
    let high = obj.k_max as f64 + 0.5;
    let to_k = |x: f64| (x.round() as u64).clamp(obj.k_min, obj.k_max);

    let mut trials: Vec<TrialRecord> = Vec::with_capacity(tpe.n_trials);
    for index in 0..tpe.n_trials {
        let (k, sampled_by) = if index < tpe.n_startup_trials || trials.is_empty() {
            (
                rng.random_range(obj.k_min..=obj.k_max),
                SampledBy::StartupRandom,
            )
        } else {
            (
                suggest(&trials, &tpe, low, high, to_k, &mut rng),
                SampledBy::Tpe,
            )
        };
        trials.push(TrialRecord {
            index,
            evaluation: objective.evaluate(k)?,
            sampled_by,
        });
    }
    finish(trials, &obj)
}

fn suggest(
    trials: &[TrialRecord],
    tpe: &TpeConfig,
    low: f64,
    high: f64,
    to_k: impl Fn(f64) -> u64,
    rng: &mut ChaCha8Rng,
) -> u64 {
    let mut ranked: Vec<&TrialRecord> = trials.iter().collect();
    ranked.sort_by(|a, b| rank_cmp(a, b));
    let n_good = tpe.gamma.n_good(ranked.len()).max(1);
    let (good, bad) = ranked.split_at(n_good);
    let xs = |set: &[&TrialRecord]| set.iter().map(|t| t.k() as f64).collect::<Vec<_>>();
    let l = ParzenEstimator::fit(&xs(good), low, high);
    let g = ParzenEstimator::fit(&xs(bad), low, high);

    let mut best: Option<(f64, u64)> = None;
    for _ in 0..tpe.n_candidates {
        let k = to_k(l.sample(rng));
        let x = k as f64;
        let score = l.pdf(x).ln() - g.pdf(x).ln();
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, k));
        }
    }
    best.expect("n_candidates >= 1").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::FrequencyTable;
    use crate::latency::ComponentFlops;
    use approx::assert_abs_diff_eq;

    fn toy() -> (CoverageCurve, ArchitectureProfile) {
        let t = FrequencyTable::from_counts(10, [(5, 3), (7, 2), (9, 1)]).unwrap();
        let p = ArchitectureProfile::new(
            "toy",
            4,
            10,
            1,
            ComponentFlops {
                feature_fusion: 2,
                attention: 3,
                ffn: 3,
            },
        )
        .unwrap();
        (CoverageCurve::new(&t), p)
    }

    fn cfg(alpha: f64, c_min: f64, k_min: u64, k_max: u64) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha,
            c_min,
            k_min,
            k_max,
            penalty_value: -1.0,
        }
    }

    /// Utility of the toy problem, written out from the definitions.
    fn toy_utility(k: u64) -> f64 {
        let mass = [0.0, 3.0, 5.0, 6.0];
        let cov = mass[k.min(3) as usize] / 6.0;
        let red = 1.0 - (8.0 + 8.0 * k as f64) / 88.0;
        0.5 * cov + 0.5 * red
    }

    #[test]
    fn exhaustive_toy_argmax() {
        let (c, p) = toy();
        let study = optimize_exhaustive(&c, &p, cfg(0.5, 0.0, 1, 10)).unwrap();
        assert_eq!(study.k_star, 3);
        assert_eq!(study.trials.len(), 10);
        for t in &study.trials {
            assert_abs_diff_eq!(t.evaluation.utility, toy_utility(t.k()), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            study.trials[0].evaluation.utility,
            0.659_090_909,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            study.trials[1].evaluation.utility,
            0.780_303_030,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            study.trials[2].evaluation.utility,
            0.818_181_818,
            epsilon = 1e-6
        );
        let tail: Vec<f64> = study.trials[2..]
            .iter()
            .map(|t| t.evaluation.utility)
            .collect();
        assert!(tail.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn exhaustive_alpha_extremes() {
        let (c, p) = toy();
        // coverage saturates at k = 3; ties resolved toward smaller k
        assert_eq!(
            optimize_exhaustive(&c, &p, cfg(1.0, 0.0, 1, 10))
                .unwrap()
                .k_star,
            3
        );
        assert_eq!(
            optimize_exhaustive(&c, &p, cfg(0.0, 0.0, 2, 10))
                .unwrap()
                .k_star,
            2
        );
    }

    #[test]
    fn exhaustive_infeasible_reports_max_coverage() {
        let (c, p) = toy();
        let err = optimize_exhaustive(&c, &p, cfg(0.5, 0.9, 1, 2)).unwrap_err();
        match err {
            Error::InfeasibleStudy {
                max_coverage,
                k_at_max,
                ..
            } => {
                assert_abs_diff_eq!(max_coverage, 5.0 / 6.0);
                assert_eq!(k_at_max, 2);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn tpe_single_point_domain() {
        let (c, p) = toy();
        let study = optimize_tpe(&c, &p, cfg(0.5, 0.0, 4, 4), TpeConfig::with_seed(1)).unwrap();
        assert!(study.trials.iter().all(|t| t.k() == 4));
        assert_eq!(study.k_star, 4);
        assert_eq!(study.trials.len(), 100);
    }

    #[test]
    fn tpe_finds_toy_optimum() {
        let (c, p) = toy();
        for seed in 0..5 {
            let study =
                optimize_tpe(&c, &p, cfg(0.5, 0.0, 1, 10), TpeConfig::with_seed(seed)).unwrap();
            assert_eq!(study.k_star, 3);
        }
    }

    #[test]
    fn startup_trials_follow_seeded_uniform_stream() {
        let (c, p) = toy();
        let tpe = TpeConfig::with_seed(42);
        let study = optimize_tpe(&c, &p, cfg(0.5, 0.0, 1, 10), tpe).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let expected: Vec<u64> = (0..10).map(|_| rng.random_range(1..=10u64)).collect();
        let got: Vec<u64> = study.trials[..10].iter().map(|t| t.k()).collect();
        assert_eq!(got, expected);
        assert!(study.trials[..10]
            .iter()
            .all(|t| t.sampled_by == SampledBy::StartupRandom));
        assert!(study.trials[10..]
            .iter()
            .all(|t| t.sampled_by == SampledBy::Tpe));
    }

    #[test]
    fn best_tie_breaking() {
        let eval = |k, u| TrialEvaluation {
            k,
            coverage: 1.0,
            reduction: 0.0,
            utility: u,
            feasible: true,
            penalized_utility: u,
        };
        let rec = |index, k, u| TrialRecord {
            index,
            evaluation: eval(k, u),
            sampled_by: SampledBy::Tpe,
        };
        let trials = vec![
            rec(0, 7, 0.5),
            rec(1, 5, 0.5),
            rec(2, 5, 0.5),
            rec(3, 9, 0.4),
        ];
        let best = select_best(&trials, &cfg(0.5, 0.0, 1, 10)).unwrap();
        assert_eq!((best.index, best.k()), (1, 5));
    }

    #[test]
    fn gamma_rule() {
        let g = GammaRule::default();
        assert_eq!(g.n_good(10), 1);
        assert_eq!(g.n_good(11), 2);
        assert_eq!(g.n_good(99), 10);
        assert_eq!(g.n_good(1000), 25);
    }

    #[test]
    fn config_validation() {
        let bad = TpeConfig {
            n_startup_trials: 100,
            ..TpeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TpeConfig {
            n_candidates: 0,
            ..TpeConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TpeConfig::default().validate().is_ok());
    }

    #[test]
    fn parzen_density_integrates_to_one() {
        let est = ParzenEstimator::fit(&[3.0, 3.0, 40.0, 99.0], 0.5, 100.5);
        let steps = 200_000;
        let h = 100.0 / steps as f64;
        let integral: f64 = (0..steps)
            .map(|i| est.pdf(0.5 + (i as f64 + 0.5) * h) * h)
            .sum();
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-4);
        assert_eq!(est.pdf(0.0), 0.0);
    }

    #[test]
    fn parzen_samples_stay_in_bounds() {
        let est = ParzenEstimator::fit(&[1.0, 100.0], 0.5, 100.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let x = est.sample(&mut rng);
            assert!((0.5..=100.5).contains(&x));
        }
    }
}
