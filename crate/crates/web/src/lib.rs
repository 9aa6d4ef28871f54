//! wasm-bindgen bindings behind `www/index.html`. Every export returns a JSON
//! string so the page needs no generated TypeScript glue beyond `JSON.parse`.

use serde::Serialize;
use vocab_pareto::{
    build_frequency_table, emit_curves, optimize_tpe, pareto_front, ArchitectureProfile,
    CoverageCurve, CurvePoint, KSelection, Objective, ObjectiveConfig, Result, TpeConfig,
    ZipfCorpus,
};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

/// FLOPs breakdown of the built-in Llama-3-8B draft head at vocabulary size `k`.
pub fn breakdown_json(k: u64) -> Result<String> {
    Ok(to_json(
        &ArchitectureProfile::llama3_8b_eagle3().breakdown(k)?,
    ))
}

#[wasm_bindgen]
pub fn flops_breakdown(k: u64) -> std::result::Result<String, JsError> {
    breakdown_json(k).map_err(js_err)
}

#[derive(Serialize)]
struct CurveView {
    points: Vec<CurvePoint>,
    pareto: Vec<CurvePoint>,
    best: Option<CurvePoint>,
}

#[derive(Serialize)]
struct StudyView {
    k_star: u64,
    coverage: f64,
    reduction: f64,
    utility: f64,
    trials: Vec<(u64, f64)>,
}

/// A synthetic Zipf corpus counted once, with the draft profile resized to
/// its vocabulary.
#[wasm_bindgen]
pub struct Demo {
    curve: CoverageCurve,
    profile: ArchitectureProfile,
}

impl Demo {
    pub fn build(vocab_size: u64, exponent: f64, n_tokens: usize, seed: u64) -> Result<Demo> {
        let corpus = ZipfCorpus::new(vocab_size, exponent, 0, 1..=1, seed)?;
        let table = build_frequency_table([corpus.sample_tokens(n_tokens)], vocab_size)?;
        Ok(Demo {
            curve: CoverageCurve::new(&table),
            profile: ArchitectureProfile::llama3_8b_eagle3().with_vocab_size(vocab_size)?,
        })
    }

    fn config(&self, alpha: f64, c_min: f64) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha,
            c_min,
            ..ObjectiveConfig::defaults_for(self.profile.vocab_size())
        }
    }

    pub fn curve_json(&self, alpha: f64, c_min: f64, n_points: u64) -> Result<String> {
        let cfg = self.config(alpha, c_min);
        let obj = Objective::new(&self.curve, &self.profile, cfg)?;
        let stride = ((cfg.k_max - cfg.k_min) / n_points.max(1)).max(1);
        let points = emit_curves(&obj, &KSelection::Stride(stride))?;
        let best = points
            .iter()
            .filter(|p| p.feasible)
            .max_by(|a, b| a.utility.total_cmp(&b.utility))
            .copied();
        Ok(to_json(&CurveView {
            pareto: pareto_front(&points),
            points,
            best,
        }))
    }

    pub fn study_json(&self, alpha: f64, c_min: f64, n_trials: usize, seed: u64) -> Result<String> {
        let tpe = TpeConfig {
            n_trials,
            ..TpeConfig::with_seed(seed)
        };
        let study = optimize_tpe(&self.curve, &self.profile, self.config(alpha, c_min), tpe)?;
        let e = &study.best.evaluation;
        Ok(to_json(&StudyView {
            k_star: study.k_star,
            coverage: e.coverage,
            reduction: e.reduction,
            utility: e.utility,
            trials: study.trials.iter().map(|t| (t.k(), t.score())).collect(),
        }))
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        vocab_size: u64,
        exponent: f64,
        n_tokens: usize,
        seed: u64,
    ) -> std::result::Result<Demo, JsError> {
        Demo::build(vocab_size, exponent, n_tokens, seed).map_err(js_err)
    }

    /// About `n_points` evenly spaced curve points plus their Pareto front.
    pub fn curve(
        &self,
        alpha: f64,
        c_min: f64,
        n_points: u64,
    ) -> std::result::Result<String, JsError> {
        self.curve_json(alpha, c_min, n_points).map_err(js_err)
    }

    /// A TPE study; `trials` lists `(k, penalized utility)` in sampling order.
    pub fn optimize(
        &self,
        alpha: f64,
        c_min: f64,
        n_trials: usize,
        seed: u64,
    ) -> std::result::Result<String, JsError> {
        self.study_json(alpha, c_min, n_trials, seed)
            .map_err(js_err)
    }
}
