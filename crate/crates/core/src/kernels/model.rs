//! Desk-scale multimodal decoder: visual projection, token concatenation,
//! `L` pre-norm blocks, final RMSNorm and a frozen output head.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{
    block_backward, block_forward, concat_visual, cross_entropy_forward_backward, linear, rmsnorm_backward,
    rmsnorm_forward, stage_trainable_set, AttentionParams, BiasTuneParams, BlockGrads, BlockParams, FfnParams,
    Gradients, KernelError, ParameterStore, RmsNormParams, Stage, Tensor, TunedLinear, TunedLinearGrad, DEFAULT_EPS,
};

/// Mean and standard deviation of the stage-3 `α` initialization.
pub const ALPHA_INIT: (f64, f64) = (1.0, 0.02);

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub num_blocks: usize,
    pub d: usize,
    pub vocab: usize,
    pub ffn_width: usize,
    /// Width of the fused visual features fed to the projection.
    pub visual_in: usize,
    pub stage: Stage,
}

impl KernelConfig {
    /// `d = 8`, `V = 16`, two blocks.
    pub fn desk(stage: Stage) -> Self {
        Self { num_blocks: 2, d: 8, vocab: 16, ffn_width: 16, visual_in: 6, stage }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let dims = [self.num_blocks, self.d, self.vocab, self.ffn_width, self.visual_in];
        if dims.contains(&0) {
            return Err(KernelError::Shape(format!("kernel config has a zero extent: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// `V_p = [fused_layers | fused_scales] Pᵀ + b`.
pub fn project_visual(fused_layers: &Tensor, fused_scales: &Tensor, p: &ProjectionParams) -> Result<Tensor, KernelError> {
    let f = concat_visual(fused_layers, fused_scales)?;
    p.weight.expect_cols(f.cols(), "visual projection")?;
    linear(&f, &p.weight, Some(&p.bias))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub embeddings: Tensor,
    pub n_visual: usize,
    pub n_language: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.n_visual + self.n_language
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Visual rows first, then language rows.
pub fn concat_multimodal(visual: &Tensor, language: &Tensor) -> Result<TokenSequence, KernelError> {
    let n_visual = if visual.is_empty() { 0 } else { visual.rows() };
    let n_language = if language.is_empty() { 0 } else { language.rows() };
    if n_language > 0 && n_visual > 0 && visual.cols() != language.cols() {
        return Err(KernelError::Shape(format!("visual width {} vs language width {}", visual.cols(), language.cols())));
    }
    let parts: Vec<&Tensor> = [visual, language].into_iter().filter(|t| !t.is_empty()).collect();
    let embeddings = if parts.is_empty() { Tensor::zeros(&[0, visual.cols()]) } else { Tensor::vstack(&parts)? };
    Ok(TokenSequence { embeddings, n_visual, n_language })
}

/// Position `p` predicts the language token at `p + 1`; visual positions
/// before the last one and the final position are unsupervised.
pub fn shifted_targets(n_visual: usize, tokens: &[usize]) -> Vec<Option<usize>> {
    (0..n_visual + tokens.len()).map(|p| (p + 1).checked_sub(n_visual).and_then(|i| tokens.get(i).copied())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelInput {
    /// Fused visual features `[N_v × visual_in]`.
    pub visual: Tensor,
    pub tokens: Vec<usize>,
    /// One entry per position of the concatenated sequence.
    pub targets: Vec<Option<usize>>,
}

impl KernelInput {
    pub fn new(visual: Tensor, tokens: Vec<usize>) -> Self {
        let targets = shifted_targets(visual.rows(), &tokens);
        Self { visual, tokens, targets }
    }

    /// Random visual features and tokens for desk-scale checks.
    pub fn random(config: &KernelConfig, n_visual: usize, n_language: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visual = Tensor::from_fn(&[n_visual, config.visual_in], |_| StandardNormal.sample(&mut rng));
        let tokens = (0..n_language).map(|_| rng.random_range(0..config.vocab)).collect();
        Self::new(visual, tokens)
    }
}

pub struct Forward {
    pub logits: Tensor,
    pub sequence: TokenSequence,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: KernelConfig,
    pub params: ParameterStore,
}

fn block_prefix(l: usize) -> String {
    format!("blocks.{l}")
}

impl Model {
    /// Weights `~ N(0, 1/d_in)`, attention biases and RMSNorm scales slightly
    /// off their neutral values, bias-tune vectors at identity (or drawn for
    /// stage 3). Trainability follows `config.stage`.
    pub fn init(config: KernelConfig, seed: u64) -> Result<Self, KernelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |shape: &[usize], mean: f64, std: f64| -> Tensor {
            let dist = Normal::new(mean, std).expect("positive std");
            Tensor::from_fn(shape, |_| dist.sample(&mut rng))
        };
        let (d, v, f) = (config.d, config.vocab, config.ffn_width);
        let mut s = ParameterStore::new();
        let w = |d_in: usize| 1.0 / (d_in as f64).sqrt();
        s.insert("projection.weight", normal(&[d, config.visual_in], 0.0, w(config.visual_in)), false)?;
        s.insert("projection.bias", normal(&[d], 0.0, 0.1), false)?;
        s.insert("embed.weight", normal(&[v, d], 0.0, 1.0), false)?;
        for l in 0..config.num_blocks {
            let p = block_prefix(l);
            s.insert(format!("{p}.attn_norm.gamma"), normal(&[d], 1.0, 0.1), false)?;
            for name in ["q", "k", "v"] {
                s.insert(format!("{p}.attn.{name}.weight"), normal(&[d, d], 0.0, w(d)), false)?;
                s.insert(format!("{p}.attn.{name}.bias"), normal(&[d], 0.0, 0.1), false)?;
                s.insert(format!("{p}.attn.{name}.alpha"), Tensor::filled(&[d], 1.0), false)?;
                s.insert(format!("{p}.attn.{name}.beta"), Tensor::zeros(&[d]), false)?;
            }
            s.insert(format!("{p}.ffn_norm.gamma"), normal(&[d], 1.0, 0.1), false)?;
            for (name, d_out, d_in) in [("gate", f, d), ("up", f, d), ("down", d, f)] {
                s.insert(format!("{p}.ffn.{name}.weight"), normal(&[d_out, d_in], 0.0, w(d_in)), false)?;
                s.insert(format!("{p}.ffn.{name}.alpha"), Tensor::filled(&[d_out], 1.0), false)?;
                s.insert(format!("{p}.ffn.{name}.beta"), Tensor::zeros(&[d_out]), false)?;
            }
        }
        s.insert("final_norm.gamma", normal(&[d], 1.0, 0.1), false)?;
        s.insert("lm_head.weight", normal(&[v, d], 0.0, w(d)), false)?;

        let stage = config.stage;
        let mut model = Self { config, params: s };
        model.config.stage = Stage::AlignmentPretrain;
        model.enter_stage(stage, seed ^ 0x5eed_a1fa)?;
        Ok(model)
    }

    /// Switches the trainable set. Entering stage 3 draws every `α` from
    /// `N(1, 0.02²)` and zeroes every `β`.
    pub fn enter_stage(&mut self, stage: Stage, seed: u64) -> Result<(), KernelError> {
        if stage == Stage::InstructionTuning && self.config.stage != Stage::InstructionTuning {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = Normal::new(ALPHA_INIT.0, ALPHA_INIT.1).expect("positive std");
            let names: Vec<String> = self.params.names().map(str::to_owned).collect();
            for name in names {
                let p = self.params.get_mut(&name)?;
                if name.ends_with(".alpha") {
                    p.tensor.data_mut().iter_mut().for_each(|a| *a = dist.sample(&mut rng));
                } else if name.ends_with(".beta") {
                    p.tensor.data_mut().iter_mut().for_each(|b| *b = 0.0);
                }
            }
        }
        let set = self.trainable_set_for(stage);
        self.params.set_trainable(&set)?;
        self.config.stage = stage;
        Ok(())
    }

    pub fn trainable_set_for(&self, stage: Stage) -> BTreeSet<String> {
        stage_trainable_set(stage, self.params.names())
    }

    fn vec(&self, name: &str) -> Result<Vec<f64>, KernelError> {
        Ok(self.params.tensor(name)?.data().to_vec())
    }

    fn tuned(&self, prefix: &str, with_bias: bool) -> Result<TunedLinear, KernelError> {
        Ok(TunedLinear {
            weight: self.params.tensor(&format!("{prefix}.weight"))?.clone(),
            bias: if with_bias { Some(self.vec(&format!("{prefix}.bias"))?) } else { None },
            tune: BiasTuneParams { alpha: self.vec(&format!("{prefix}.alpha"))?, beta: self.vec(&format!("{prefix}.beta"))? },
        })
    }

    pub fn block_params(&self, l: usize) -> Result<BlockParams, KernelError> {
        let p = block_prefix(l);
        let norm = |n: &str| -> Result<RmsNormParams, KernelError> {
            Ok(RmsNormParams { gamma: self.vec(&format!("{p}.{n}.gamma"))?, eps: DEFAULT_EPS })
        };
        Ok(BlockParams {
            attn_norm: norm("attn_norm")?,
            attn: AttentionParams {
                q: self.tuned(&format!("{p}.attn.q"), true)?,
                k: self.tuned(&format!("{p}.attn.k"), true)?,
                v: self.tuned(&format!("{p}.attn.v"), true)?,
                causal: true,
            },
            ffn_norm: norm("ffn_norm")?,
            ffn: FfnParams {
                gate: self.tuned(&format!("{p}.ffn.gate"), false)?,
                up: self.tuned(&format!("{p}.ffn.up"), false)?,
                down: self.tuned(&format!("{p}.ffn.down"), false)?,
            },
        })
    }

    pub fn projection(&self) -> Result<ProjectionParams, KernelError> {
        Ok(ProjectionParams { weight: self.params.tensor("projection.weight")?.clone(), bias: self.vec("projection.bias")? })
    }

    /// Rows of the frozen embedding table.
    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Tensor, KernelError> {
        let table = self.params.tensor("embed.weight")?;
        let (v, d) = (table.rows(), table.cols());
        let mut data = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            if t >= v {
                return Err(KernelError::TokenOutOfVocab { token: t, vocab: v });
            }
            data.extend_from_slice(table.row(t));
        }
        Ok(Tensor::from_fn(&[tokens.len(), d], |i| data[i]))
    }

    fn check_input(&self, input: &KernelInput) -> Result<(), KernelError> {
        let n_visual = if input.visual.is_empty() { 0 } else { input.visual.rows() };
        if n_visual > 0 {
            input.visual.expect_cols(self.config.visual_in, "visual features")?;
        }
        let n = n_visual + input.tokens.len();
        if n == 0 {
            return Err(KernelError::Shape("empty input sequence".into()));
        }
        if input.targets.len() != n {
            return Err(KernelError::Shape(format!("{} targets for {n} positions", input.targets.len())));
        }
        Ok(())
    }

    fn sequence(&self, input: &KernelInput) -> Result<TokenSequence, KernelError> {
        self.check_input(input)?;
        let p = self.projection()?;
        let vp = if input.visual.is_empty() {
            Tensor::zeros(&[0, self.config.d])
        } else {
            linear(&input.visual, &p.weight, Some(&p.bias))?
        };
        concat_multimodal(&vp, &self.embed_tokens(&input.tokens)?)
    }

    pub fn forward(&self, input: &KernelInput) -> Result<Forward, KernelError> {
        let sequence = self.sequence(input)?;
        let mut x = sequence.embeddings.clone();
        for l in 0..self.config.num_blocks {
            x = block_forward(&x, &self.block_params(l)?)?.0;
        }
        let norm = RmsNormParams { gamma: self.vec("final_norm.gamma")?, eps: DEFAULT_EPS };
        let h = rmsnorm_forward(&x, &norm)?.0;
        let logits = h.matmul_t(self.params.tensor("lm_head.weight")?)?;
        Ok(Forward { logits, sequence })
    }

    pub fn loss(&self, input: &KernelInput) -> Result<f64, KernelError> {
        let fwd = self.forward(input)?;
        Ok(cross_entropy_forward_backward(&fwd.logits, &input.targets)?.0)
    }

    /// Loss and the gradient of every parameter, frozen or not.
    pub fn loss_and_all_grads(&self, input: &KernelInput) -> Result<(f64, Gradients), KernelError> {
        let seq = self.sequence(input)?;
        let mut x = seq.embeddings.clone();
        let mut caches = Vec::with_capacity(self.config.num_blocks);
        let mut blocks = Vec::with_capacity(self.config.num_blocks);
        for l in 0..self.config.num_blocks {
            let bp = self.block_params(l)?;
            let (y, cache) = block_forward(&x, &bp)?;
            x = y;
            caches.push(cache);
            blocks.push(bp);
        }
        let norm = RmsNormParams { gamma: self.vec("final_norm.gamma")?, eps: DEFAULT_EPS };
        let (h, norm_cache) = rmsnorm_forward(&x, &norm)?;
        let head = self.params.tensor("lm_head.weight")?;
        let logits = h.matmul_t(head)?;
        let (loss, dlogits) = cross_entropy_forward_backward(&logits, &input.targets)?;
        if !loss.is_finite() {
            return Err(KernelError::NonFinite("loss".into()));
        }

        let mut g = Gradients::new();
        g.insert("lm_head.weight".into(), dlogits.t_matmul(&h)?);
        let dh = dlogits.matmul(head)?;
        let (mut dx, dgamma) = rmsnorm_backward(&dh, &norm, &norm_cache);
        g.insert("final_norm.gamma".into(), Tensor::vector(dgamma));
        for l in (0..self.config.num_blocks).rev() {
            let (dprev, bg) = block_backward(&dx, &blocks[l], &caches[l]);
            insert_block_grads(&mut g, l, bg);
            dx = dprev;
        }

        let nv = seq.n_visual;
        let d = self.config.d;
        let dvp = dx.slice_rows(0, nv);
        if nv > 0 {
            g.insert("projection.weight".into(), dvp.t_matmul(&input.visual)?);
            g.insert("projection.bias".into(), Tensor::vector(dvp.sum_rows()));
        } else {
            g.insert("projection.weight".into(), Tensor::zeros(&[d, self.config.visual_in]));
            g.insert("projection.bias".into(), Tensor::zeros(&[d]));
        }
        let mut dembed = Tensor::zeros(&[self.config.vocab, d]);
        for (i, &t) in input.tokens.iter().enumerate() {
            for (o, v) in dembed.row_mut(t).iter_mut().zip(dx.row(nv + i)) {
                *o += v;
            }
        }
        g.insert("embed.weight".into(), dembed);
        Ok((loss, g))
    }

    /// Loss and gradients restricted to the currently trainable parameters.
    pub fn loss_and_grads(&self, input: &KernelInput) -> Result<(f64, Gradients), KernelError> {
        let (loss, mut g) = self.loss_and_all_grads(input)?;
        let trainable = self.params.trainable_names();
        g.retain(|k, _| trainable.contains(k));
        Ok((loss, g))
    }
}

fn insert_tuned(g: &mut Gradients, prefix: String, t: TunedLinearGrad) {
    let d = t.alpha.len();
    g.insert(format!("{prefix}.weight"), t.weight);
    if let Some(b) = t.bias {
        g.insert(format!("{prefix}.bias"), Tensor::vector(b));
    }
    g.insert(format!("{prefix}.alpha"), Tensor::vector(t.alpha));
    g.insert(format!("{prefix}.beta"), Tensor::from_fn(&[d], |i| t.beta[i]));
}

fn insert_block_grads(g: &mut Gradients, l: usize, b: BlockGrads) {
    let p = block_prefix(l);
    g.insert(format!("{p}.attn_norm.gamma"), Tensor::vector(b.attn_norm_gamma));
    g.insert(format!("{p}.ffn_norm.gamma"), Tensor::vector(b.ffn_norm_gamma));
    for (name, t) in [("q", b.q), ("k", b.k), ("v", b.v)] {
        insert_tuned(g, format!("{p}.attn.{name}"), t);
    }
    for (name, t) in [("gate", b.gate), ("up", b.up), ("down", b.down)] {
        insert_tuned(g, format!("{p}.ffn.{name}"), t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_rows() {
        let vp = Tensor::from_fn(&[3, 4], |i| i as f64);
        let lp = Tensor::from_fn(&[5, 4], |i| -(i as f64));
        let x = concat_multimodal(&vp, &lp).unwrap();
        assert_eq!((x.n_visual, x.n_language, x.embeddings.rows()), (3, 5, 8));
        assert_eq!(x.embeddings.slice_rows(0, 3), vp);
        let only = concat_multimodal(&vp, &Tensor::zeros(&[0, 4])).unwrap();
        assert_eq!(only.embeddings, vp);
        assert!(concat_multimodal(&vp, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn targets_shift() {
        assert_eq!(shifted_targets(2, &[5, 6, 7]), vec![None, Some(5), Some(6), Some(7), None]);
        assert_eq!(shifted_targets(0, &[5, 6]), vec![Some(6), None]);
    }

    #[test]
    fn stage3_init() {
        let m = Model::init(KernelConfig::desk(Stage::InstructionTuning), 3).unwrap();
        let a = m.params.tensor("blocks.0.attn.q.alpha").unwrap();
        assert!(a.data().iter().all(|v| (v - 1.0).abs() < 0.2 && *v != 1.0));
        let t = m.params.trainable_names();
        assert!(t.iter().all(|n| n.ends_with(".alpha") || n.ends_with(".beta")));
        assert!(!t.is_empty());
    }
}
