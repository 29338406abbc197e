use serde::{Deserialize, Serialize};

use crate::error::{HktError, Result};

fn default_kernel() -> usize {
    3
}

/// Architecture hyperparameters. Derived per-level sizes follow the fixed
/// schedule: T_l = floor(T / s^l), d_l = max(d / 2^l, 32), d_k = d / H,
/// d_k^(l) = max(d_k / 2^l, 16).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_levels: usize,
    pub stride: usize,
    pub n_layers: usize,
    #[serde(default = "default_kernel")]
    pub conv_kernel: usize,
    #[serde(default)]
    pub dropout: f64,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub causal: bool,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(HktError::Config("zero-sized model dimension".into()));
        }
        if self.n_levels < 1 {
            return Err(HktError::Config("n_levels must be >= 1".into()));
        }
        if self.stride < 2 {
            return Err(HktError::Config("stride must be >= 2".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(HktError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        let needed = self.stride.pow(self.n_levels as u32 - 1) + 1;
        if self.max_seq_len < needed {
            return Err(HktError::Config(format!(
                "max_seq_len {} < s^(L-1)+1 = {} for L={}, s={}",
                self.max_seq_len, needed, self.n_levels, self.stride
            )));
        }
        if self.conv_kernel < 1 {
            return Err(HktError::Config("conv_kernel must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HktError::Config("dropout must be in [0, 1)".into()));
        }
        if self.vocab_size == 0 || self.n_classes == 0 {
            return Err(HktError::Config("empty vocabulary or class set".into()));
        }
        Ok(())
    }

    /// Sequence length at level l for an input of length t.
    pub fn t_l(&self, t: usize, l: usize) -> usize {
        t / self.stride.pow(l as u32)
    }

    /// Channel width at level l.
    pub fn d_l(&self, l: usize) -> usize {
        (self.d_model >> l).max(32.min(self.d_model))
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Key/query width at level l.
    pub fn d_k_l(&self, l: usize) -> usize {
        (self.d_k() >> l).max(16.min(self.d_k()))
    }

    /// Canonical key-sorted textual form used in checkpoint headers.
    pub fn canonical_map(&self) -> String {
        let mut pairs = vec![
            ("causal", self.causal.to_string()),
            ("conv_kernel", self.conv_kernel.to_string()),
            ("d_model", self.d_model.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("max_seq_len", self.max_seq_len.to_string()),
            ("n_classes", self.n_classes.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_levels", self.n_levels.to_string()),
            ("stride", self.stride.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_canonical_map(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HktError::Parse {
                pos: i,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| HktError::Parse {
                pos: 0,
                msg: format!("missing config key {k}"),
            })
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|e| HktError::Parse {
                pos: 0,
                msg: format!("bad value for {k}: {e}"),
            })
        };
        let cfg = ModelConfig {
            d_model: parse_usize("d_model")?,
            n_heads: parse_usize("n_heads")?,
            n_levels: parse_usize("n_levels")?,
            stride: parse_usize("stride")?,
            n_layers: parse_usize("n_layers")?,
            conv_kernel: parse_usize("conv_kernel")?,
            dropout: get("dropout")?.parse().map_err(|e| HktError::Parse {
                pos: 0,
                msg: format!("bad value for dropout: {e}"),
            })?,
            vocab_size: parse_usize("vocab_size")?,
            n_classes: parse_usize("n_classes")?,
            causal: get("causal")? == "true",
            max_seq_len: parse_usize("max_seq_len")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
