//! Analysis surfaces: utility curves, the coverage/reduction Pareto front,
//! held-out coverage reports and the sample-size stability sweep.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{write_file_atomic, VocabularyArtifact};
use crate::error::{Error, Result};
use crate::frequency::{CoverageCurve, FrequencyTable};
use crate::latency::ArchitectureProfile;
use crate::objective::{Objective, ObjectiveConfig};
use crate::synth::RecordSource;
use crate::tpe::{optimize_tpe, TpeConfig};
use crate::TokenId;

pub const DEFAULT_MISSING_TOP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: u64,
    pub coverage: f64,
    pub reduction: f64,
    pub utility: f64,
    pub feasible: bool,
}

/// Which `k` values to put on a curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KSelection {
    Explicit(Vec<u64>),
    /// `k_min, k_min + stride, ...`, always ending at `k_max`.
    Stride(u64),
}

impl KSelection {
    fn resolve(&self, cfg: &ObjectiveConfig) -> Result<BTreeSet<u64>> {
        match self {
            KSelection::Explicit(ks) => Ok(ks.iter().copied().collect()),
            KSelection::Stride(0) => Err(Error::InvalidConfig("stride must be >= 1".into())),
            KSelection::Stride(s) => {
                let mut ks: BTreeSet<u64> = (cfg.k_min..=cfg.k_max).step_by(*s as usize).collect();
                ks.insert(cfg.k_max);
                Ok(ks)
            }
        }
    }
}

/// One point per requested `k`, ascending.
pub fn emit_curves(objective: &Objective<'_>, ks: &KSelection) -> Result<Vec<CurvePoint>> {
    ks.resolve(objective.config())?
        .into_iter()
        .map(|k| {
            let e = objective.evaluate(k)?;
            Ok(CurvePoint {
                k,
                coverage: e.coverage,
                reduction: e.reduction,
                utility: e.utility,
                feasible: e.feasible,
            })
        })
        .collect()
}

/// Points not dominated in (coverage, reduction), both maximized, ascending
/// by `k`.
pub fn pareto_front(points: &[CurvePoint]) -> Vec<CurvePoint> {
    let mut sorted: Vec<CurvePoint> = points.to_vec();
    sorted.sort_by(|a, b| {
        b.coverage
            .total_cmp(&a.coverage)
            .then(b.reduction.total_cmp(&a.reduction))
            .then(a.k.cmp(&b.k))
    });
    let mut front = Vec::new();
    let mut best_reduction = f64::NEG_INFINITY;
    let mut last: Option<(f64, f64)> = None;
    for p in sorted {
        // exact duplicates of a kept point are dominated by neither; keep one
        if last == Some((p.coverage, p.reduction)) {
            continue;
        }
        if p.reduction > best_reduction {
            best_reduction = p.reduction;
            last = Some((p.coverage, p.reduction));
            front.push(p);
        }
    }
    front.sort_by_key(|p| p.k);
    front
}

/// `k,coverage,reduction,utility,feasible` rows with a header line.
pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "coverage", "reduction", "utility", "feasible"])
        .expect("in-memory csv");
    for p in points {
        w.write_record([
            p.k.to_string(),
            p.coverage.to_string(),
            p.reduction.to_string(),
            p.utility.to_string(),
            p.feasible.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv")
}

pub fn write_curves_csv(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    write_file_atomic(path, curves_csv(points).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingToken {
    pub id: TokenId,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// How well a kept vocabulary covers a stream of generated tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total_tokens: u64,
    /// Fraction of token occurrences inside the vocabulary.
    pub freq_coverage: f64,
    pub unique_tokens: u64,
    /// Fraction of distinct tokens inside the vocabulary.
    pub unique_coverage: f64,
    /// Most frequent tokens outside the vocabulary, by count then id.
    pub missing_top: Vec<MissingToken>,
}

/// Optional id -> text map used to label missing tokens.
#[derive(Debug, Clone, Default)]
pub struct TokenTextMap(HashMap<TokenId, String>);

impl TokenTextMap {
    /// Reads JSONL lines of the form `{"id": 12, "text": "foo"}`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            id: TokenId,
            text: String,
        }
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut map = HashMap::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("token map line {}: {e}", n + 1)))?;
            map.insert(l.id, l.text);
        }
        Ok(Self(map))
    }

    pub fn get(&self, id: TokenId) -> Option<&str> {
        self.0.get(&id).map(String::as_str)
    }
}

impl FromIterator<(TokenId, String)> for TokenTextMap {
    fn from_iter<T: IntoIterator<Item = (TokenId, String)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

pub fn evaluate_coverage<I>(
    artifact: &VocabularyArtifact,
    tokens: I,
    missing_top: usize,
    texts: Option<&TokenTextMap>,
) -> Result<CoverageReport>
where
    I: IntoIterator<Item = TokenId>,
{
    let vocab_size = artifact.vocab_size();
    let mut counts: HashMap<TokenId, u64> = HashMap::new();
    for t in tokens {
        if u64::from(t) >= vocab_size {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab_size,
            });
        }
        *counts.entry(t).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyStream);
    }
    let total: u64 = counts.values().sum();
    let mut covered = 0u64;
    let mut covered_unique = 0u64;
    let mut missing: Vec<(TokenId, u64)> = Vec::new();
    for (&t, &c) in &counts {
        if artifact.contains(t) {
            covered += c;
            covered_unique += 1;
        } else {
            missing.push((t, c));
        }
    }
    missing.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    missing.truncate(missing_top);
    Ok(CoverageReport {
        total_tokens: total,
        freq_coverage: covered as f64 / total as f64,
        unique_tokens: counts.len() as u64,
        unique_coverage: covered_unique as f64 / counts.len() as f64,
        missing_top: missing
            .into_iter()
            .map(|(id, count)| MissingToken {
                id,
                count,
                text: texts.and_then(|m| m.get(id)).map(str::to_owned),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub sample_size: usize,
    pub seed: u64,
    pub k_star: u64,
}

/// Record indices of a uniform subsample without replacement, ascending.
/// The full corpus is returned unchanged when `size` equals its length.
pub fn subsample_indices(n_records: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > n_records {
        return Err(Error::SizeExceedsCorpus {
            size,
            records: n_records,
        });
    }
    if size == n_records {
        return Ok((0..n_records).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut idx = rand::seq::index::sample(&mut rng, n_records, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Frequency table over the given records of `source`.
pub fn table_for_records<S: RecordSource + ?Sized>(
    source: &S,
    indices: &[usize],
    vocab_size: u64,
) -> Result<FrequencyTable> {
    let build = |chunk: &[usize]| {
        let mut tokens = Vec::new();
        for &i in chunk {
            source.record_tokens(i, &mut tokens);
        }
        crate::frequency::build_frequency_table([tokens], vocab_size)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        indices
            .par_chunks(4096)
            .map(build)
            .try_reduce(|| FrequencyTable::empty(vocab_size), |a, b| a.merge(&b))
    }
    #[cfg(not(feature = "parallel"))]
    {
        build(indices)
    }
}

/// Re-optimizes `k` on record subsamples of each size, once per seed. The
/// seed drives both the subsample and the TPE study. Output is ordered by
/// `(size, seed)`.
pub fn stability_sweep<S: RecordSource + ?Sized>(
    source: &S,
    sizes: &[usize],
    seeds: &[u64],
    profile: &ArchitectureProfile,
    obj: ObjectiveConfig,
    tpe: TpeConfig,
) -> Result<Vec<StabilityPoint>> {
    if let Some(&size) = sizes.iter().find(|&&s| s > source.record_count()) {
        return Err(Error::SizeExceedsCorpus {
            size,
            records: source.record_count(),
        });
    }
    let mut jobs: Vec<(usize, u64)> = sizes
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    jobs.sort_unstable();
    jobs.dedup();

    let run = |&(sample_size, seed): &(usize, u64)| -> Result<StabilityPoint> {
        let idx = subsample_indices(source.record_count(), sample_size, seed)?;
        let table = table_for_records(source, &idx, profile.vocab_size())?;
        let curve = CoverageCurve::new(&table);
        let study = optimize_tpe(&curve, profile, obj, TpeConfig { seed, ..tpe })?;
        log::info!("sweep size={sample_size} seed={seed} k*={}", study.k_star);
        Ok(StabilityPoint {
            sample_size,
            seed,
            k_star: study.k_star,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(run).collect()
    }
}

/// `sample_size,seed,k_star` rows with a header line.
pub fn stability_csv(points: &[StabilityPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_size", "seed", "k_star"])
        .expect("in-memory csv");
    for p in points {
        w.write_record([
            p.sample_size.to_string(),
            p.seed.to_string(),
            p.k_star.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv")
}

pub fn write_stability_csv(path: impl AsRef<Path>, points: &[StabilityPoint]) -> Result<()> {
    write_file_atomic(path, stability_csv(points).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::{ArtifactMetadata, Provenance};
    use crate::latency::ComponentFlops;

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

    fn cfg(alpha: f64) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha,
            c_min: 0.0,
            k_min: 1,
            k_max: 10,
            penalty_value: -1.0,
        }
    }

    fn artifact(kept: Vec<TokenId>, v: u64) -> VocabularyArtifact {
        VocabularyArtifact::from_kept(
            kept,
            v,
            ArtifactMetadata {
                coverage: 0.0,
                reduction: 0.0,
                alpha: None,
                c_min: None,
                corpus_fingerprint: String::new(),
                provenance: Provenance::Manual,
                tool_version: String::new(),
            },
        )
        .unwrap()
    }

    #[test]
    fn full_vocab_point() {
        let (c, p) = toy();
        let o = Objective::new(&c, &p, cfg(0.7)).unwrap();
        let pts = emit_curves(&o, &KSelection::Explicit(vec![10])).unwrap();
        assert_eq!(
            pts,
            vec![CurvePoint {
                k: 10,
                coverage: 1.0,
                reduction: 0.0,
                utility: 0.7,
                feasible: true
            }]
        );
    }

    #[test]
    fn toy_curve_peaks_at_three() {
        let (c, p) = toy();
        let o = Objective::new(&c, &p, cfg(0.5)).unwrap();
        let pts = emit_curves(&o, &KSelection::Stride(1)).unwrap();
        assert_eq!(pts.len(), 10);
        let best = pts
            .iter()
            .max_by(|a, b| a.utility.total_cmp(&b.utility))
            .unwrap();
        assert_eq!(best.k, 3);
    }

    #[test]
    fn stride_includes_k_max_and_is_sorted() {
        let (c, p) = toy();
        let o = Objective::new(&c, &p, cfg(0.5)).unwrap();
        let ks: Vec<u64> = emit_curves(&o, &KSelection::Stride(4))
            .unwrap()
            .iter()
            .map(|p| p.k)
            .collect();
        assert_eq!(ks, vec![1, 5, 9, 10]);
        let ks: Vec<u64> = emit_curves(&o, &KSelection::Explicit(vec![7, 2, 7]))
            .unwrap()
            .iter()
            .map(|p| p.k)
            .collect();
        assert_eq!(ks, vec![2, 7]);
        assert!(matches!(
            emit_curves(&o, &KSelection::Explicit(vec![11])),
            Err(Error::KOutOfBounds { .. })
        ));
    }

    #[test]
    fn pareto_drops_saturated_points() {
        let (c, p) = toy();
        let o = Objective::new(&c, &p, cfg(0.5)).unwrap();
        let pts = emit_curves(&o, &KSelection::Stride(1)).unwrap();
        let front: Vec<u64> = pareto_front(&pts).iter().map(|p| p.k).collect();
        assert_eq!(front, vec![1, 2, 3]);
    }

    #[test]
    fn coverage_report_example() {
        let a = artifact(vec![5, 7], 10);
        let r = evaluate_coverage(&a, [5, 5, 7, 9], 50, None).unwrap();
        assert_eq!(r.total_tokens, 4);
        assert_eq!(r.freq_coverage, 0.75);
        assert_eq!(r.unique_tokens, 3);
        assert!((r.unique_coverage - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            r.missing_top,
            vec![MissingToken {
                id: 9,
                count: 1,
                text: None
            }]
        );
    }

    #[test]
    fn full_vocab_report() {
        let a = artifact((0..10).collect(), 10);
        let r = evaluate_coverage(&a, [1, 1, 3, 9, 0], 50, None).unwrap();
        assert_eq!((r.freq_coverage, r.unique_coverage), (1.0, 1.0));
        assert!(r.missing_top.is_empty());
    }

    #[test]
    fn missing_tokens_ranked_truncated_and_labelled() {
        let a = artifact(vec![0], 10);
        let texts: TokenTextMap = [(4, "<<".to_string())].into_iter().collect();
        let r = evaluate_coverage(&a, [3, 4, 4, 2, 3, 0, 6], 2, Some(&texts)).unwrap();
        let ids: Vec<_> = r.missing_top.iter().map(|m| (m.id, m.count)).collect();
        assert_eq!(ids, vec![(3, 2), (4, 2)]);
        assert_eq!(r.missing_top[1].text.as_deref(), Some("<<"));
    }

    #[test]
    fn coverage_errors() {
        let a = artifact(vec![0], 10);
        assert!(matches!(
            evaluate_coverage(&a, [], 5, None),
            Err(Error::EmptyStream)
        ));
        assert!(matches!(
            evaluate_coverage(&a, [10], 5, None),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn subsample_is_without_replacement() {
        let idx = subsample_indices(100, 30, 4).unwrap();
        assert_eq!(idx.len(), 30);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 100));
        assert_eq!(subsample_indices(5, 5, 9).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(
            subsample_indices(5, 6, 0),
            Err(Error::SizeExceedsCorpus { .. })
        ));
    }

    #[test]
    fn sweep_full_size_matches_direct_study() {
        let (_, p) = toy();
        let records: Vec<Vec<TokenId>> = vec![vec![5, 5, 7], vec![9], vec![5, 7, 1], vec![2, 2, 5]];
        let obj = cfg(0.5);
        let tpe = TpeConfig::with_seed(3);
        let pts = stability_sweep(&records, &[4, 1], &[3, 8], &p, obj, tpe).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(
            pts.iter()
                .map(|p| (p.sample_size, p.seed))
                .collect::<Vec<_>>(),
            vec![(1, 3), (1, 8), (4, 3), (4, 8)]
        );
        let table = crate::frequency::build_frequency_table(&records, 10).unwrap();
        let direct = optimize_tpe(&CoverageCurve::new(&table), &p, obj, tpe).unwrap();
        assert_eq!(pts[2].k_star, direct.k_star);
        assert!(pts.iter().all(|p| (1..=10).contains(&p.k_star)));
        assert!(matches!(
            stability_sweep(&records, &[5], &[0], &p, obj, tpe),
            Err(Error::SizeExceedsCorpus { .. })
        ));
    }
}
