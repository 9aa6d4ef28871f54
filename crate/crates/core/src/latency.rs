//! FLOPs model of an EAGLE-style draft model.
//!
//! The draft forward pass is a feature-fusion projection, one decoder layer
//! (attention + FFN) and an LM head. Only the LM head, at `2·d·k` FLOPs,
//! depends on the draft vocabulary size `k`; everything else is a fixed cost.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the shipped LLaMA-3-8B EAGLE-3 profile.
pub const LLAMA3_8B_EAGLE3: &str = "llama3-8b-eagle3";

/// Fixed (vocabulary-independent) component costs, in FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentFlops {
    pub feature_fusion: u64,
    pub attention: u64,
    pub ffn: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureProfile {
    name: String,
    hidden_dim: u64,
    vocab_size: u64,
    fused_layers: u64,
    flops: ComponentFlops,
}

/// On-disk profile. `flops.feature_fusion` may be omitted and is then derived
/// from the fusion projection shape; attention and FFN must be given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub name: String,
    pub hidden_dim: u64,
    pub vocab_size: u64,
    pub fused_layers: u64,
    pub flops: FlopsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlopsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_fusion: Option<u64>,
    pub attention: u64,
    pub ffn: u64,
}

/// FLOPs of a dense linear layer `in_dim -> out_dim` for one token.
pub fn linear_flops(in_dim: u64, out_dim: u64) -> u64 {
    2 * in_dim * out_dim
}

impl ArchitectureProfile {
    pub fn new(
        name: impl Into<String>,
        hidden_dim: u64,
        vocab_size: u64,
        fused_layers: u64,
        flops: ComponentFlops,
    ) -> Result<Self> {
        let fields = [
            ("hidden_dim", hidden_dim),
            ("vocab_size", vocab_size),
            ("fused_layers", fused_layers),
            ("flops.feature_fusion", flops.feature_fusion),
            ("flops.attention", flops.attention),
            ("flops.ffn", flops.ffn),
        ];
        if let Some((field, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!(
                "profile field {field} must be > 0"
            )));
        }
        if vocab_size > i32::MAX as u64 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {vocab_size} exceeds the 2^31 - 1 index-buffer limit"
            )));
        }
        Ok(Self {
            name: name.into(),
            hidden_dim,
            vocab_size,
            fused_layers,
            flops,
        })
    }

    pub fn from_config(cfg: ProfileConfig) -> Result<Self> {
        let feature_fusion = cfg
            .flops
            .feature_fusion
            .unwrap_or_else(|| linear_flops(cfg.fused_layers * cfg.hidden_dim, cfg.hidden_dim));
        Self::new(
            cfg.name,
            cfg.hidden_dim,
            cfg.vocab_size,
            cfg.fused_layers,
            ComponentFlops {
                feature_fusion,
                attention: cfg.flops.attention,
                ffn: cfg.flops.ffn,
            },
        )
    }

    /// The LLaMA-3-8B EAGLE-3 draft: d = 4096, V = 128,256, three fused
    /// target layers, fixed components 100.7M / 436.2M / 50.3M FLOPs.
    pub fn llama3_8b_eagle3() -> Self {
        Self::new(
            LLAMA3_8B_EAGLE3,
            4096,
            128_256,
            3,
            ComponentFlops {
                feature_fusion: 100_700_000,
                attention: 436_200_000,
                ffn: 50_300_000,
            },
        )
        .expect("built-in profile is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            LLAMA3_8B_EAGLE3 => Some(Self::llama3_8b_eagle3()),
            _ => None,
        }
    }

    /// Resolves a built-in name or reads a profile config file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let cfg: ProfileConfig =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("profile: {e}")))?;
        Self::from_config(cfg)
    }

    /// Same architecture with a different full vocabulary size.
    pub fn with_vocab_size(&self, vocab_size: u64) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.hidden_dim,
            vocab_size,
            self.fused_layers,
            self.flops,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hidden_dim(&self) -> u64 {
        self.hidden_dim
    }

    pub fn vocab_size(&self) -> u64 {
        self.vocab_size
    }

    pub fn fused_layers(&self) -> u64 {
        self.fused_layers
    }

    pub fn component_flops(&self) -> ComponentFlops {
        self.flops
    }

    pub fn fixed_flops(&self) -> u64 {
        self.flops.feature_fusion + self.flops.attention + self.flops.ffn
    }

    fn check_k(&self, k: u64) -> Result<()> {
        if k > self.vocab_size {
            return Err(Error::KTooLarge {
                k,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }

    pub fn lm_head_flops(&self, k: u64) -> Result<u64> {
        self.check_k(k)?;
        Ok(linear_flops(self.hidden_dim, k))
    }

    /// Relative FLOPs saved at draft vocabulary `k` versus the full vocabulary:
    /// `1 - (F_fixed + 2dk) / (F_fixed + 2dV)`.
    pub fn latency_reduction(&self, k: u64) -> Result<f64> {
        self.check_k(k)?;
        // 2d(V - k) / (F + 2dV): same quantity, exactly zero at k = V
        let saved = linear_flops(self.hidden_dim, self.vocab_size - k);
        let full = self.fixed_flops() + linear_flops(self.hidden_dim, self.vocab_size);
        Ok(saved as f64 / full as f64)
    }

    /// Upper end of the reduction range, attained at `k = 0`.
    pub fn max_latency_reduction(&self) -> f64 {
        self.latency_reduction(0).expect("k = 0 is always valid")
    }

    pub fn breakdown(&self, k: u64) -> Result<FlopsBreakdown> {
        let lm_head = self.lm_head_flops(k)?;
        let ComponentFlops {
            feature_fusion,
            attention,
            ffn,
        } = self.flops;
        let total = feature_fusion + attention + ffn + lm_head;
        let frac = |x: u64| x as f64 / total as f64;
        Ok(FlopsBreakdown {
            k,
            feature_fusion,
            attention,
            ffn,
            lm_head,
            total,
            fractions: ComponentFractions {
                feature_fusion: frac(feature_fusion),
                attention: frac(attention),
                ffn: frac(ffn),
                lm_head: frac(lm_head),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentFractions {
    pub feature_fusion: f64,
    pub attention: f64,
    pub ffn: f64,
    pub lm_head: f64,
}

impl ComponentFractions {
    pub fn sum(&self) -> f64 {
        self.feature_fusion + self.attention + self.ffn + self.lm_head
    }
}

/// Per-component FLOPs of one draft forward pass at vocabulary size `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub k: u64,
    pub feature_fusion: u64,
    pub attention: u64,
    pub ffn: u64,
    pub lm_head: u64,
    pub total: u64,
    pub fractions: ComponentFractions,
}
