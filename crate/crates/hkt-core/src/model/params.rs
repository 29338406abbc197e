use std::collections::BTreeMap;

use super::config::ModelConfig;
use crate::error::{HktError, Result};
use crate::gradcore::Tensor;
use crate::numkit::Prng;

/// Named parameter store. BTreeMap keeps iteration order canonical, which the
/// checkpoint writer and the optimizer state rely on.
#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| HktError::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| HktError::Config(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }
}

fn normal(shape: Vec<usize>, fan_in: usize, prng: &mut Prng) -> Tensor {
    Tensor::randn(shape, 1.0 / (fan_in as f64).sqrt(), prng)
}

/// Fresh random initialisation. Weight matrices ~ Normal(0, 1/fan_in);
/// fusion logits start at zero so lambda is uniform and every beta is 0.5.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Params> {
    cfg.validate()?;
    let mut prng = Prng::new(seed);
    let mut p = Params::new();
    let (d, h, levels, k) = (cfg.d_model, cfg.n_heads, cfg.n_levels, cfg.conv_kernel);
    let dh = d / h;

    p.insert("embed.table", normal(vec![cfg.vocab_size, d], d, &mut prng));

    for i in 0..cfg.n_layers {
        let pre = format!("layer{i}");
        for part in ["ln1", "ln2"] {
            p.insert(format!("{pre}.{part}.gain"), Tensor::filled(vec![1, d], 1.0));
            p.insert(format!("{pre}.{part}.bias"), Tensor::zeros(vec![1, d]));
        }
        p.insert(format!("{pre}.attn.gamma"), Tensor::zeros(vec![1, levels]));
        p.insert(
            format!("{pre}.attn.gamma_tilde"),
            Tensor::zeros(vec![1, h * levels]),
        );
        for l in 0..levels {
            let dl = cfg.d_l(l);
            let dkl = cfg.d_k_l(l);
            let lp = format!("{pre}.attn.level{l}");
            p.insert(format!("{lp}.wq"), normal(vec![dkl, dl], dl, &mut prng));
            p.insert(format!("{lp}.wk"), normal(vec![dkl, dl], dl, &mut prng));
            p.insert(format!("{lp}.wv"), normal(vec![d, dl], dl, &mut prng));
            p.insert(format!("{lp}.wo"), normal(vec![d, d], d, &mut prng));
            if l >= 1 {
                let dprev = cfg.d_l(l - 1);
                let dp = format!("{pre}.attn.down{l}");
                p.insert(format!("{dp}.dw"), normal(vec![k, dprev], k, &mut prng));
                p.insert(format!("{dp}.pw"), normal(vec![dl, dprev], dprev, &mut prng));
                p.insert(format!("{dp}.pw_bias"), Tensor::zeros(vec![1, dl]));
                p.insert(format!("{dp}.ln.gain"), Tensor::filled(vec![1, dl], 1.0));
                p.insert(format!("{dp}.ln.bias"), Tensor::zeros(vec![1, dl]));
            }
        }
        for hh in 0..h {
            p.insert(
                format!("{pre}.attn.head{hh}.conv"),
                normal(vec![k, dh], k, &mut prng),
            );
        }
        p.insert(format!("{pre}.attn.alpha.w1"), normal(vec![d, d], d, &mut prng));
        p.insert(format!("{pre}.attn.alpha.b1"), Tensor::zeros(vec![1, d]));
        p.insert(
            format!("{pre}.attn.alpha.w2"),
            normal(vec![levels, d], d, &mut prng),
        );
        p.insert(format!("{pre}.attn.alpha.b2"), Tensor::zeros(vec![1, levels]));

        p.insert(format!("{pre}.ffn.w1"), normal(vec![4 * d, d], d, &mut prng));
        p.insert(format!("{pre}.ffn.b1"), Tensor::zeros(vec![1, 4 * d]));
        p.insert(format!("{pre}.ffn.w2"), normal(vec![d, 4 * d], 4 * d, &mut prng));
        p.insert(format!("{pre}.ffn.b2"), Tensor::zeros(vec![1, d]));
    }

    p.insert("final.gain", Tensor::filled(vec![1, d], 1.0));
    p.insert("final.bias", Tensor::zeros(vec![1, d]));
    p.insert("cls.w", normal(vec![cfg.n_classes, d], d, &mut prng));
    p.insert("cls.b", Tensor::zeros(vec![1, cfg.n_classes]));
    p.insert("probe.w", normal(vec![1, d], d, &mut prng));
    p.insert("probe.b", Tensor::zeros(vec![1, 1]));
    Ok(p)
}
