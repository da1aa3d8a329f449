//! Forward and backward passes for the transformer pieces. Every `*_forward`
//! returns the output plus whatever its `*_backward` needs.

use serde::{Deserialize, Serialize};

use super::{KernelError, Tensor};

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsNormParams {
    pub gamma: Vec<f64>,
    pub eps: f64,
}

impl RmsNormParams {
    pub fn ones(d: usize) -> Self {
        Self { gamma: vec![1.0; d], eps: DEFAULT_EPS }
    }
}

pub struct RmsNormCache {
    normed: Tensor,
    inv_rms: Vec<f64>,
}

pub fn rmsnorm_forward(x: &Tensor, p: &RmsNormParams) -> Result<(Tensor, RmsNormCache), KernelError> {
    let d = p.gamma.len();
    x.expect_cols(d, "rmsnorm")?;
    if p.eps < 0.0 {
        return Err(KernelError::Shape("rmsnorm eps must be non-negative".into()));
    }
    let mut normed = x.clone();
    let mut inv_rms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = normed.row_mut(i);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let denom = (ms + p.eps).sqrt();
        let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
        row.iter_mut().for_each(|v| *v *= inv);
        inv_rms.push(inv);
    }
    let mut y = normed.clone();
    for i in 0..y.rows() {
        for (v, g) in y.row_mut(i).iter_mut().zip(&p.gamma) {
            *v *= g;
        }
    }
    Ok((y, RmsNormCache { normed, inv_rms }))
}

/// `y = x / sqrt(mean(x²) + ε) · γ`, row-wise.
pub fn rmsnorm(x: &Tensor, p: &RmsNormParams) -> Result<Tensor, KernelError> {
    Ok(rmsnorm_forward(x, p)?.0)
}

/// Returns `(dx, dγ)`.
pub fn rmsnorm_backward(dy: &Tensor, p: &RmsNormParams, c: &RmsNormCache) -> (Tensor, Vec<f64>) {
    let d = p.gamma.len();
    let mut dgamma = vec![0.0; d];
    let mut dx = Tensor::zeros(dy.shape());
    for i in 0..dy.rows() {
        let n = c.normed.row(i);
        let dn: Vec<f64> = dy.row(i).iter().zip(&p.gamma).map(|(a, g)| a * g).collect();
        for j in 0..d {
            dgamma[j] += dy.row(i)[j] * n[j];
        }
        let dot = dn.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = c.inv_rms[i] * (dn[j] - n[j] * dot);
        }
    }
    (dx, dgamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTuneParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BiasTuneParams {
    pub fn identity(d_out: usize) -> Self {
        Self { alpha: vec![1.0; d_out], beta: vec![0.0; d_out] }
    }
}

/// A linear layer `x Wᵀ + b` (W is `[d_out × d_in]`) wrapped in a bias-tune
/// adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedLinear {
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
    pub tune: BiasTuneParams,
}

impl TunedLinear {
    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    fn check(&self) -> Result<(), KernelError> {
        let d = self.d_out();
        let bias_ok = self.bias.as_ref().is_none_or(|b| b.len() == d);
        if !bias_ok || self.tune.alpha.len() != d || self.tune.beta.len() != d {
            return Err(KernelError::Shape(format!("tuned linear with {d} outputs has mismatched vectors")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedLinearGrad {
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

pub struct LinearCache {
    input: Tensor,
    /// `x Wᵀ + b + β`, before the α scale.
    pre_scale: Tensor,
}

/// Plain affine map `x Wᵀ + b`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&[f64]>) -> Result<Tensor, KernelError> {
    let mut y = x.matmul_t(w)?;
    if let Some(b) = b {
        if b.len() != w.rows() {
            return Err(KernelError::Shape(format!("bias of length {} for {} outputs", b.len(), w.rows())));
        }
        for i in 0..y.rows() {
            for (v, bb) in y.row_mut(i).iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    Ok(y)
}

pub fn tuned_linear_forward(x: &Tensor, l: &TunedLinear) -> Result<(Tensor, LinearCache), KernelError> {
    l.check()?;
    let mut pre = linear(x, &l.weight, l.bias.as_deref())?;
    for i in 0..pre.rows() {
        for (v, b) in pre.row_mut(i).iter_mut().zip(&l.tune.beta) {
            *v += b;
        }
    }
    let mut y = pre.clone();
    for i in 0..y.rows() {
        for (v, a) in y.row_mut(i).iter_mut().zip(&l.tune.alpha) {
            *v *= a;
        }
    }
    Ok((y, LinearCache { input: x.clone(), pre_scale: pre }))
}

/// `y = α ⊙ (x Wᵀ + b + β)`. With `α = 1`, `β = 0` the result equals
/// [`linear`] exactly.
pub fn bias_tuned_linear(x: &Tensor, l: &TunedLinear) -> Result<Tensor, KernelError> {
    Ok(tuned_linear_forward(x, l)?.0)
}

pub fn tuned_linear_backward(dy: &Tensor, l: &TunedLinear, c: &LinearCache) -> (Tensor, TunedLinearGrad) {
    let d = l.d_out();
    let mut dz = dy.clone();
    let mut dalpha = vec![0.0; d];
    for i in 0..dz.rows() {
        let pre = c.pre_scale.row(i);
        for (j, v) in dz.row_mut(i).iter_mut().enumerate() {
            dalpha[j] += *v * pre[j];
            *v *= l.tune.alpha[j];
        }
    }
    let dbeta = dz.sum_rows();
    let dw = dz.t_matmul(&c.input).expect("shapes checked in forward");
    let dx = dz.matmul(&l.weight).expect("shapes checked in forward");
    let grad = TunedLinearGrad { weight: dw, bias: l.bias.as_ref().map(|_| dbeta.clone()), alpha: dalpha, beta: dbeta };
    (dx, grad)
}

/// Row-wise softmax. Entries of `mask` set to `false` receive weight 0.
pub fn softmax_rows(s: &Tensor, mask: impl Fn(usize, usize) -> bool) -> Tensor {
    let mut p = s.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| mask(i, *j))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            *v = if mask(i, j) { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Single-head attention projections. Only q/k/v carry a standard bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub q: TunedLinear,
    pub k: TunedLinear,
    pub v: TunedLinear,
    pub causal: bool,
}

/// SwiGLU feed-forward: `down(silu(gate(x)) ⊙ up(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnParams {
    pub gate: TunedLinear,
    pub up: TunedLinear,
    pub down: TunedLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub attn_norm: RmsNormParams,
    pub attn: AttentionParams,
    pub ffn_norm: RmsNormParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub attn_norm_gamma: Vec<f64>,
    pub q: TunedLinearGrad,
    pub k: TunedLinearGrad,
    pub v: TunedLinearGrad,
    pub ffn_norm_gamma: Vec<f64>,
    pub gate: TunedLinearGrad,
    pub up: TunedLinearGrad,
    pub down: TunedLinearGrad,
}

pub struct BlockCache {
    attn_norm: RmsNormCache,
    q: (Tensor, LinearCache),
    k: (Tensor, LinearCache),
    v: (Tensor, LinearCache),
    probs: Tensor,
    ffn_norm: RmsNormCache,
    gate: (Tensor, LinearCache),
    up: (Tensor, LinearCache),
    down: LinearCache,
}

impl BlockCache {
    /// Attention weights `[N × N]`.
    pub fn attention_probs(&self) -> &Tensor {
        &self.probs
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn block_forward(x: &Tensor, p: &BlockParams) -> Result<(Tensor, BlockCache), KernelError> {
    let d = p.attn_norm.gamma.len();
    x.expect_cols(d, "attention block")?;
    for l in [&p.attn.q, &p.attn.k, &p.attn.v] {
        if l.d_in() != d || l.d_out() != d {
            return Err(KernelError::Shape(format!("attention projections must be {d}x{d}")));
        }
    }
    let (a, attn_norm) = rmsnorm_forward(x, &p.attn_norm)?;
    let q = tuned_linear_forward(&a, &p.attn.q)?;
    let k = tuned_linear_forward(&a, &p.attn.k)?;
    let v = tuned_linear_forward(&a, &p.attn.v)?;
    let scores = q.0.matmul_t(&k.0)?.scale(1.0 / (d as f64).sqrt());
    let causal = p.attn.causal;
    let probs = softmax_rows(&scores, |i, j| !causal || j <= i);
    let h = x.add(&probs.matmul(&v.0)?)?;

    let (b, ffn_norm) = rmsnorm_forward(&h, &p.ffn_norm)?;
    let gate = tuned_linear_forward(&b, &p.ffn.gate)?;
    let up = tuned_linear_forward(&b, &p.ffn.up)?;
    let mut z = gate.0.clone();
    for (zv, uv) in z.data_mut().iter_mut().zip(up.0.data()) {
        *zv = *zv * sigmoid(*zv) * uv;
    }
    let (out_ffn, down) = tuned_linear_forward(&z, &p.ffn.down)?;
    let out = h.add(&out_ffn)?;
    Ok((out, BlockCache { attn_norm, q, k, v, probs, ffn_norm, gate, up, down }))
}

/// Pre-norm block: `h = x + Attn(RMSNorm(x))`, `y = h + FFN(RMSNorm(h))`,
/// with `Attn = softmax(QKᵀ/√d) V`.
pub fn attention_block(x: &Tensor, p: &BlockParams) -> Result<Tensor, KernelError> {
    Ok(block_forward(x, p)?.0)
}

pub fn block_backward(dout: &Tensor, p: &BlockParams, c: &BlockCache) -> (Tensor, BlockGrads) {
    let d = p.attn_norm.gamma.len();
    // FFN branch
    let (dz, down) = tuned_linear_backward(dout, &p.ffn.down, &c.down);
    let mut dgate_out = dz.clone();
    let mut dup_out = dz;
    for i in 0..dgate_out.len() {
        let g = c.gate.0.data()[i];
        let u = c.up.0.data()[i];
        let s = sigmoid(g);
        let dzv = dgate_out.data()[i];
        dup_out.data_mut()[i] = dzv * g * s;
        dgate_out.data_mut()[i] = dzv * u * s * (1.0 + g * (1.0 - s));
    }
    let (db_gate, gate) = tuned_linear_backward(&dgate_out, &p.ffn.gate, &c.gate.1);
    let (db_up, up) = tuned_linear_backward(&dup_out, &p.ffn.up, &c.up.1);
    let db = db_gate.add(&db_up).expect("same shape");
    let (dh_norm, ffn_norm_gamma) = rmsnorm_backward(&db, &p.ffn_norm, &c.ffn_norm);
    let mut dh = dout.clone();
    dh.add_assign(&dh_norm);

    // attention branch
    let probs = &c.probs;
    let dv = probs.t_matmul(&dh).expect("shapes");
    let dp = dh.matmul_t(&c.v.0).expect("shapes");
    let mut ds = dp.clone();
    for i in 0..ds.rows() {
        let prow = probs.row(i);
        let dot: f64 = prow.iter().zip(dp.row(i)).map(|(a, b)| a * b).sum();
        for (j, v) in ds.row_mut(i).iter_mut().enumerate() {
            *v = prow[j] * (*v - dot);
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let dq = ds.matmul(&c.k.0).expect("shapes").scale(scale);
    let dk = ds.t_matmul(&c.q.0).expect("shapes").scale(scale);
    let (da_q, q) = tuned_linear_backward(&dq, &p.attn.q, &c.q.1);
    let (da_k, k) = tuned_linear_backward(&dk, &p.attn.k, &c.k.1);
    let (da_v, v) = tuned_linear_backward(&dv, &p.attn.v, &c.v.1);
    let mut da = da_q;
    da.add_assign(&da_k);
    da.add_assign(&da_v);
    let (dx_norm, attn_norm_gamma) = rmsnorm_backward(&da, &p.attn_norm, &c.attn_norm);
    let mut dx = dh;
    dx.add_assign(&dx_norm);
    (dx, BlockGrads { attn_norm_gamma, q, k, v, ffn_norm_gamma, gate, up, down })
}

/// Mean negative log-likelihood over positions with a target, plus its
/// gradient with respect to the logits.
pub fn cross_entropy_forward_backward(logits: &Tensor, targets: &[Option<usize>]) -> Result<(f64, Tensor), KernelError> {
    let (n, vocab) = (logits.rows(), logits.cols());
    if targets.len() != n {
        return Err(KernelError::Shape(format!("{} targets for {n} positions", targets.len())));
    }
    let supervised = targets.iter().filter(|t| t.is_some()).count();
    if supervised == 0 {
        return Err(KernelError::Shape("no supervised positions".into()));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    let inv = 1.0 / supervised as f64;
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        if t >= vocab {
            return Err(KernelError::TokenOutOfVocab { token: t, vocab });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[t];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = (row[j] - lse).exp() * inv;
        }
        grad.row_mut(i)[t] -= inv;
    }
    Ok((loss * inv, grad))
}

pub fn next_token_cross_entropy(logits: &Tensor, targets: &[Option<usize>]) -> Result<f64, KernelError> {
    Ok(cross_entropy_forward_backward(logits, targets)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(weight: Tensor, bias: Option<Vec<f64>>) -> TunedLinear {
        let d = weight.rows();
        TunedLinear { weight, bias, tune: BiasTuneParams::identity(d) }
    }

    #[test]
    fn rmsnorm_cases() {
        let p = RmsNormParams { gamma: vec![1.0; 4], eps: 0.0 };
        let y = rmsnorm(&Tensor::filled(&[1, 4], 3.5), &p).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let z = rmsnorm(&Tensor::zeros(&[2, 4]), &RmsNormParams::ones(4)).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tuned_linear_cases() {
        let x = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let mut l = tl(Tensor::identity(3), None);
        l.tune = BiasTuneParams { alpha: vec![2.0; 3], beta: vec![1.0; 3] };
        assert_eq!(bias_tuned_linear(&x, &l).unwrap().data(), [3.0, 0.0, 6.0]);
    }

    #[test]
    fn single_token_block() {
        let d = 3;
        let w = |s: f64| Tensor::from_fn(&[d, d], |i| s * (i as f64 - 4.0) / 7.0);
        let p = BlockParams {
            attn_norm: RmsNormParams::ones(d),
            attn: AttentionParams {
                q: tl(w(1.0), Some(vec![0.1; d])),
                k: tl(w(-0.5), Some(vec![0.0; d])),
                v: tl(w(0.3), Some(vec![0.2; d])),
                causal: true,
            },
            ffn_norm: RmsNormParams::ones(d),
            ffn: FfnParams { gate: tl(Tensor::zeros(&[4, d]), None), up: tl(Tensor::zeros(&[4, d]), None), down: tl(Tensor::zeros(&[d, 4]), None) },
        };
        let x = Tensor::matrix(1, d, vec![0.3, -0.7, 1.1]).unwrap();
        let (y, cache) = block_forward(&x, &p).unwrap();
        assert_eq!(cache.attention_probs().data(), [1.0]);
        let vpath = bias_tuned_linear(&rmsnorm(&x, &p.attn_norm).unwrap(), &p.attn.v).unwrap();
        assert_eq!(y, x.add(&vpath).unwrap());
    }

    #[test]
    fn uniform_logits_loss() {
        let logits = Tensor::zeros(&[3, 8]);
        let l = next_token_cross_entropy(&logits, &[Some(1), None, Some(7)]).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-15);
        assert!(next_token_cross_entropy(&logits, &[Some(8), None, None]).is_err());
        let mut sharp = Tensor::zeros(&[1, 4]);
        sharp.data_mut()[2] = 60.0;
        assert!(next_token_cross_entropy(&sharp, &[Some(2)]).unwrap() < 1e-20);
    }
}
