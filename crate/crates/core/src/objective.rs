//! Coverage/latency utility and its constraint-penalized form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::CoverageCurve;
use crate::latency::ArchitectureProfile;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_C_MIN: f64 = 0.9;
pub const DEFAULT_K_MIN: u64 = 256;
pub const DEFAULT_PENALTY: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Weight on coverage; `1 - alpha` weights latency reduction.
    pub alpha: f64,
    /// Minimum coverage; the bound is inclusive.
    pub c_min: f64,
    pub k_min: u64,
    pub k_max: u64,
    /// Score assigned to infeasible trials.
    pub penalty_value: f64,
}

impl ObjectiveConfig {
    /// Defaults for a vocabulary of size `vocab_size`: alpha 0.5, c_min 0.9,
    /// search over `[min(256, V), V]`.
    pub fn defaults_for(vocab_size: u64) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            c_min: DEFAULT_C_MIN,
            k_min: DEFAULT_K_MIN.min(vocab_size).max(1),
            k_max: vocab_size,
            penalty_value: DEFAULT_PENALTY,
        }
    }

    pub fn validate(&self, vocab_size: u64) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} not in [0, 1]",
                self.alpha
            )));
        }
        if !unit(self.c_min) {
            return Err(Error::InvalidConfig(format!(
                "c_min = {} not in [0, 1]",
                self.c_min
            )));
        }
        if self.k_min < 1 {
            return Err(Error::InvalidConfig("k_min must be >= 1".into()));
        }
        if self.k_min > self.k_max {
            return Err(Error::InvalidConfig(format!(
                "k_min = {} exceeds k_max = {}",
                self.k_min, self.k_max
            )));
        }
        if self.k_max > vocab_size {
            return Err(Error::InvalidConfig(format!(
                "k_max = {} exceeds the vocabulary size {vocab_size}",
                self.k_max
            )));
        }
        if !self.penalty_value.is_finite() {
            return Err(Error::InvalidConfig("penalty value must be finite".into()));
        }
        Ok(())
    }
}

/// Everything computed for one candidate vocabulary size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEvaluation {
    pub k: u64,
    pub coverage: f64,
    pub reduction: f64,
    pub utility: f64,
    pub feasible: bool,
    pub penalized_utility: f64,
}

impl TrialEvaluation {
    pub fn penalized_utility(&self) -> f64 {
        self.penalized_utility
    }
}

/// `U(k) = alpha * C(k) + (1 - alpha) * R(k)`.
pub fn utility_value(alpha: f64, coverage: f64, reduction: f64) -> f64 {
    alpha * coverage + (1.0 - alpha) * reduction
}

/// Penalized utility: `utility` when `coverage >= c_min`, otherwise the
/// penalty value.
pub fn penalized_utility(coverage: f64, utility: f64, cfg: &ObjectiveConfig) -> f64 {
    if coverage >= cfg.c_min {
        utility
    } else {
        cfg.penalty_value
    }
}

/// A validated (curve, profile, config) triple that scores vocabulary sizes.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    curve: &'a CoverageCurve,
    profile: &'a ArchitectureProfile,
    cfg: ObjectiveConfig,
}

impl<'a> Objective<'a> {
    pub fn new(
        curve: &'a CoverageCurve,
        profile: &'a ArchitectureProfile,
        cfg: ObjectiveConfig,
    ) -> Result<Self> {
        if curve.vocab_size() != profile.vocab_size() {
            return Err(Error::VocabSizeMismatch {
                left: curve.vocab_size(),
                right: profile.vocab_size(),
            });
        }
        cfg.validate(profile.vocab_size())?;
        if curve.total() == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            curve,
            profile,
            cfg,
        })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn curve(&self) -> &'a CoverageCurve {
        self.curve
    }

    pub fn profile(&self) -> &'a ArchitectureProfile {
        self.profile
    }

    pub fn evaluate(&self, k: u64) -> Result<TrialEvaluation> {
        if k < self.cfg.k_min || k > self.cfg.k_max {
            return Err(Error::KOutOfBounds {
                k,
                k_min: self.cfg.k_min,
                k_max: self.cfg.k_max,
            });
        }
        let coverage = self.curve.coverage_at(k)?;
        let reduction = self.profile.latency_reduction(k)?;
        let utility = utility_value(self.cfg.alpha, coverage, reduction);
        Ok(TrialEvaluation {
            k,
            coverage,
            reduction,
            utility,
            feasible: coverage >= self.cfg.c_min,
            penalized_utility: penalized_utility(coverage, utility, &self.cfg),
        })
    }
}

/// One-shot evaluation of a single `k`.
pub fn utility(
    curve: &CoverageCurve,
    profile: &ArchitectureProfile,
    cfg: ObjectiveConfig,
    k: u64,
) -> Result<TrialEvaluation> {
    Objective::new(curve, profile, cfg)?.evaluate(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::FrequencyTable;
    use crate::latency::ComponentFlops;
    use approx::assert_abs_diff_eq;

    pub(crate) fn toy() -> (CoverageCurve, ArchitectureProfile) {
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

    fn cfg(alpha: f64, c_min: f64) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha,
            c_min,
            k_min: 1,
            k_max: 10,
            penalty_value: -1.0,
        }
    }

    #[test]
    fn alpha_extremes() {
        let (c, p) = toy();
        for k in 1..=10 {
            let e = utility(&c, &p, cfg(1.0, 0.0), k).unwrap();
            assert_eq!(e.utility, e.coverage);
            let e = utility(&c, &p, cfg(0.0, 0.0), k).unwrap();
            assert_eq!(e.utility, e.reduction);
        }
    }

    #[test]
    fn operating_point_arithmetic() {
        assert_abs_diff_eq!(utility_value(0.5, 0.937, 0.575), 0.756, epsilon = 1e-12);
    }

    #[test]
    fn penalty_branch() {
        let c = cfg(0.5, 0.9);
        assert_eq!(penalized_utility(0.95, 0.7, &c), 0.7);
        assert_eq!(penalized_utility(0.50, 0.7, &c), -1.0);
        assert_eq!(penalized_utility(0.9, 0.7, &c), 0.7);
    }

    #[test]
    fn boundary_is_inclusive() {
        let (c, p) = toy();
        // C(1) = 0.5 exactly
        let e = utility(&c, &p, cfg(0.5, 0.5), 1).unwrap();
        assert!(e.feasible);
        assert_eq!(e.penalized_utility, e.utility);
    }

    #[test]
    fn toy_values() {
        let (c, p) = toy();
        let o = Objective::new(&c, &p, cfg(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(
            o.evaluate(1).unwrap().utility,
            0.25 + 0.5 * (1.0 - 16.0 / 88.0),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            o.evaluate(2).unwrap().utility,
            0.5 * 5.0 / 6.0 + 0.5 * (1.0 - 24.0 / 88.0),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            o.evaluate(3).unwrap().utility,
            0.5 + 0.5 * (1.0 - 32.0 / 88.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn out_of_bounds_and_invalid_configs() {
        let (c, p) = toy();
        let mut k = cfg(0.5, 0.0);
        k.k_min = 2;
        let o = Objective::new(&c, &p, k).unwrap();
        assert!(matches!(o.evaluate(1), Err(Error::KOutOfBounds { .. })));
        assert!(matches!(o.evaluate(11), Err(Error::KOutOfBounds { .. })));

        for bad in [
            ObjectiveConfig {
                alpha: 1.5,
                ..cfg(0.5, 0.0)
            },
            ObjectiveConfig {
                c_min: -0.1,
                ..cfg(0.5, 0.0)
            },
            ObjectiveConfig {
                k_min: 0,
                ..cfg(0.5, 0.0)
            },
            ObjectiveConfig {
                k_min: 5,
                k_max: 4,
                ..cfg(0.5, 0.0)
            },
            ObjectiveConfig {
                k_max: 11,
                ..cfg(0.5, 0.0)
            },
        ] {
            assert!(Objective::new(&c, &p, bad).is_err(), "{bad:?}");
        }
        let empty = CoverageCurve::new(&FrequencyTable::empty(10));
        assert!(matches!(
            Objective::new(&empty, &p, cfg(0.5, 0.0)),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn utility_is_affine_in_alpha() {
        let (c, p) = toy();
        for k in 1..=10 {
            let base = utility(&c, &p, cfg(0.0, 0.0), k).unwrap();
            for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let e = utility(&c, &p, cfg(alpha, 0.0), k).unwrap();
                let affine = base.reduction + alpha * (base.coverage - base.reduction);
                assert_abs_diff_eq!(e.utility, affine, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn feasible_region_is_an_up_set() {
        let (c, p) = toy();
        for c_min in [0.0, 0.4, 0.5, 0.6, 5.0 / 6.0, 0.9, 1.0] {
            let o = Objective::new(&c, &p, cfg(0.5, c_min)).unwrap();
            let feas: Vec<bool> = (1..=10).map(|k| o.evaluate(k).unwrap().feasible).collect();
            let boundary = feas.iter().position(|&f| f).unwrap();
            assert!(feas[..boundary].iter().all(|f| !f));
            assert!(feas[boundary..].iter().all(|&f| f));
        }
    }

    #[test]
    fn defaults_clamp_k_min() {
        let d = ObjectiveConfig::defaults_for(100);
        assert_eq!((d.k_min, d.k_max), (100, 100));
        let d = ObjectiveConfig::defaults_for(128_256);
        assert_eq!(
            (d.k_min, d.k_max, d.alpha, d.c_min),
            (256, 128_256, 0.5, 0.9)
        );
    }
}
