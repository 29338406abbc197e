use std::cell::Cell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::config::ModelConfig;
use super::params::{init_params, Params};
use crate::error::{HktError, Result};
use crate::gradcore::{Tape, Tensor, Var};
use crate::numkit::Prng;

/// Architecture plus parameter values. Frozen instances are safe to share
/// across threads for inference; updates require exclusive access.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Params,
}

impl Model {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        let params = init_params(&cfg, seed)?;
        Ok(Model { cfg, params })
    }

    /// Binds every parameter as a differentiable leaf on the tape.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundModel<'t> {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect();
        BoundModel {
            cfg: self.cfg.clone(),
            vars,
            tape,
            score_entries: Cell::new(0),
            score_macs: Cell::new(0),
        }
    }
}

/// Forward-pass switches. Defaults reproduce the full architecture; the
/// overrides implement the reduction endpoints and the ablation rows.
#[derive(Debug, Clone, Default)]
pub struct ForwardOpts {
    /// Replace softmax(gamma) with a fixed simplex vector.
    pub lambda_override: Option<Vec<f64>>,
    /// Force every hybrid gate to a constant instead of sigma(gamma_tilde).
    pub beta_override: Option<f64>,
    /// Ablation: uniform output fusion instead of the learned alpha(X).
    pub alpha_uniform: bool,
    /// Enables dropout (requires an rng in the call).
    pub train: bool,
    /// Capture intermediate values for the diagnostics suite.
    pub collect_trace: bool,
}

/// Detached intermediate values from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// X^(l) for l = 0..L, shapes T_l x d_l.
    pub level_reprs: Vec<Tensor>,
    /// S^(l), shapes T_l x T_l.
    pub level_scores: Vec<Tensor>,
    /// Fused T x T score matrix (pre-softmax).
    pub fused: Tensor,
    pub lambda: Vec<f64>,
    /// Output fusion weights, [1 x L] or [T x L].
    pub alpha: Tensor,
}

/// One model bound to one tape; single forward + backward per instance.
pub struct BoundModel<'t> {
    cfg: ModelConfig,
    vars: BTreeMap<String, Var<'t>>,
    tape: &'t Tape,
    /// Score-matrix entries computed (sum of T_l^2 over layers and levels).
    pub score_entries: Cell<u64>,
    /// Multiply-accumulates spent on score entries (entries times d_k^(l)).
    pub score_macs: Cell<u64>,
}

impl<'t> BoundModel<'t> {
    pub fn var(&self, name: &str) -> Var<'t> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(n, v)| v.grad().map(|g| (n.clone(), g)))
            .collect()
    }

    pub fn embed(&self, tokens: &[usize]) -> Result<Var<'t>> {
        self.var("embed.table").embedding_lookup(tokens)
    }

    /// Full encoder stack: input [T x d] to representations [T x d].
    pub fn encode(
        &self,
        x0: Var<'t>,
        opts: &ForwardOpts,
        mut rng: Option<&mut Prng>,
    ) -> Result<(Var<'t>, Option<Trace>)> {
        let mut x = x0;
        let mut trace = opts.collect_trace.then(Trace::default);
        for i in 0..self.cfg.n_layers {
            let pre = format!("layer{i}");
            let h = x.layernorm(
                &self.var(&format!("{pre}.ln1.gain")),
                &self.var(&format!("{pre}.ln1.bias")),
            )?;
            let a = self.attention(h, i, opts, &mut trace)?;
            let a = self.maybe_dropout(a, opts, rng.as_deref_mut());
            x = x.add(&a)?;
            let h2 = x.layernorm(
                &self.var(&format!("{pre}.ln2.gain")),
                &self.var(&format!("{pre}.ln2.bias")),
            )?;
            let f = h2
                .matmul(&self.var(&format!("{pre}.ffn.w1")).transpose())?
                .add_bias(&self.var(&format!("{pre}.ffn.b1")))?
                .gelu()
                .matmul(&self.var(&format!("{pre}.ffn.w2")).transpose())?
                .add_bias(&self.var(&format!("{pre}.ffn.b2")))?;
            let f = self.maybe_dropout(f, opts, rng.as_deref_mut());
            x = x.add(&f)?;
        }
        let out = x.layernorm(&self.var("final.gain"), &self.var("final.bias"))?;
        Ok((out, trace))
    }

    fn maybe_dropout(
        &self,
        v: Var<'t>,
        opts: &ForwardOpts,
        rng: Option<&mut Prng>,
    ) -> Var<'t> {
        match (opts.train, rng) {
            (true, Some(r)) if self.cfg.dropout > 0.0 => v.dropout(self.cfg.dropout, r),
            _ => v,
        }
    }

    /// Hierarchical attention block on a normalised input h: [T x d].
    pub fn attention(
        &self,
        h: Var<'t>,
        layer: usize,
        opts: &ForwardOpts,
        trace: &mut Option<Trace>,
    ) -> Result<Var<'t>> {
        let cfg = &self.cfg;
        let pre = format!("layer{layer}.attn");
        let t = h.shape()[0];
        let levels = cfg.n_levels;
        let heads = cfg.n_heads;
        let dh = cfg.d_model / heads;

        // downsampling cascade
        let mut stack: Vec<Var<'t>> = vec![h];
        for l in 1..levels {
            let dp = format!("{pre}.down{l}");
            let prev = stack[l - 1];
            let coarse = prev
                .conv1d_causal_depthwise(&self.var(&format!("{dp}.dw")), None, cfg.stride)?
                .matmul(&self.var(&format!("{dp}.pw")).transpose())?
                .add_bias(&self.var(&format!("{dp}.pw_bias")))?
                .layernorm(
                    &self.var(&format!("{dp}.ln.gain")),
                    &self.var(&format!("{dp}.ln.bias")),
                )?
                .gelu();
            if coarse.shape()[0] == 0 {
                return Err(HktError::Config(format!(
                    "sequence length {t} too short for {levels} levels at stride {}",
                    cfg.stride
                )));
            }
            stack.push(coarse);
        }

        // per-level scores
        let mut scores = Vec::with_capacity(levels);
        for (l, xl) in stack.iter().enumerate() {
            let dkl = cfg.d_k_l(l);
            let q = xl.matmul(&self.var(&format!("{pre}.level{l}.wq")).transpose())?;
            let k = xl.matmul(&self.var(&format!("{pre}.level{l}.wk")).transpose())?;
            let s = q.matmul(&k.transpose())?.scale(1.0 / (dkl as f64).sqrt());
            let tl = xl.shape()[0];
            self.score_entries
                .set(self.score_entries.get() + (tl * tl) as u64);
            self.score_macs
                .set(self.score_macs.get() + (tl * tl * dkl) as u64);
            scores.push(s);
        }

        let lambda = match &opts.lambda_override {
            Some(lam) => self
                .tape
                .constant(Tensor::matrix(1, levels, lam.clone())?),
            None => self.var(&format!("{pre}.gamma")).softmax_rows(None)?,
        };

        let fused = Var::fuse_scores(&scores, &lambda, cfg.stride, t, cfg.causal)?;
        let mask = cfg.causal.then(|| {
            Rc::new(
                (0..t * t)
                    .map(|idx| idx % t > idx / t)
                    .collect::<Vec<bool>>(),
            )
        });
        let p = fused.softmax_rows(mask)?;

        // hybrid heads per level, then output fusion
        let gamma_tilde = self.var(&format!("{pre}.gamma_tilde"));
        let mut level_outs = Vec::with_capacity(levels);
        for (l, xl) in stack.iter().enumerate() {
            let f = cfg.stride.pow(l as u32);
            let v = xl
                .matmul(&self.var(&format!("{pre}.level{l}.wv")).transpose())?
                .upsample_rows(f, t);
            let mut head_outs = Vec::with_capacity(heads);
            for hh in 0..heads {
                let slice = v.slice_cols(hh * dh, dh);
                let attn_branch = p.matmul(&slice)?;
                let conv_branch = slice.conv1d_causal_depthwise(
                    &self.var(&format!("{pre}.head{hh}.conv")),
                    None,
                    1,
                )?;
                let gate = match opts.beta_override {
                    Some(b) => self
                        .tape
                        .constant(Tensor::matrix(1, 2, vec![b, 1.0 - b])?),
                    None => {
                        let beta = gamma_tilde.slice_cols(hh * levels + l, 1).sigmoid();
                        Var::concat_cols(&[beta, beta.scale(-1.0).add_scalar(1.0)])
                    }
                };
                head_outs.push(Var::rowwise_weighted_sum(
                    &[attn_branch, conv_branch],
                    &gate,
                )?);
            }
            let a = Var::concat_cols(&head_outs);
            level_outs.push(a.matmul(&self.var(&format!("{pre}.level{l}.wo")).transpose())?);
        }

        let alpha = if opts.alpha_uniform {
            self.tape
                .constant(Tensor::filled(vec![1, levels], 1.0 / levels as f64))
        } else {
            let pooled = if cfg.causal {
                h.prefix_mean_rows()
            } else {
                h.mean_rows()
            };
            pooled
                .matmul(&self.var(&format!("{pre}.alpha.w1")).transpose())?
                .add_bias(&self.var(&format!("{pre}.alpha.b1")))?
                .gelu()
                .matmul(&self.var(&format!("{pre}.alpha.w2")).transpose())?
                .add_bias(&self.var(&format!("{pre}.alpha.b2")))?
                .softmax_rows(None)?
        };
        let out = Var::rowwise_weighted_sum(&level_outs, &alpha)?;

        if let Some(tr) = trace {
            tr.layers.push(LayerTrace {
                level_reprs: stack.iter().map(|v| v.value()).collect(),
                level_scores: scores.iter().map(|v| v.value()).collect(),
                fused: fused.value(),
                lambda: lambda.value().data().to_vec(),
                alpha: alpha.value(),
            });
        }
        Ok(out)
    }

    /// Classification logits from token ids: [1 x n_classes].
    pub fn logits_from_tokens(
        &self,
        tokens: &[usize],
        opts: &ForwardOpts,
        rng: Option<&mut Prng>,
    ) -> Result<(Var<'t>, Option<Trace>)> {
        let x0 = self.embed(tokens)?;
        let (enc, trace) = self.encode(x0, opts, rng)?;
        let logits = enc
            .mean_rows()
            .matmul(&self.var("cls.w").transpose())?
            .add_bias(&self.var("cls.b"))?;
        Ok((logits, trace))
    }

    /// Per-position logits [T x n_classes] from a continuous input, used by
    /// the leakage certificates (no pooling, so position t is testable).
    pub fn position_logits(&self, x0: Var<'t>, opts: &ForwardOpts) -> Result<Var<'t>> {
        let (enc, _) = self.encode(x0, opts, None)?;
        enc.matmul(&self.var("cls.w").transpose())?
            .add_bias(&self.var("cls.b"))
    }

    /// Scalar regression head over the pooled representation.
    pub fn regression_scalar(&self, x0: Var<'t>, opts: &ForwardOpts) -> Result<Var<'t>> {
        let (enc, _) = self.encode(x0, opts, None)?;
        enc.mean_rows()
            .matmul(&self.var("probe.w").transpose())?
            .add_bias(&self.var("probe.b"))
    }
}
