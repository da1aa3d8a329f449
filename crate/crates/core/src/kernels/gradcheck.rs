//! Central-difference gradient checking and the stage freeze check.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{AdamW, AdamWConfig, Gradients, KernelError, KernelInput, Model, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub h: f64,
    pub threshold: f64,
    /// Denominator floor for the relative error, so gradients that are
    /// analytically zero are compared on an absolute scale.
    pub floor: f64,
    /// Perturbs the analytic gradients before comparison (negative control).
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, threshold: 1e-4, floor: 1e-5, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<ParamCheck>,
    pub options: GradcheckOptions,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("parameter\telements\tmax_abs_error\tmax_rel_error\tstatus\n");
        for e in &self.entries {
            let status = if e.passed { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{}\t{}\t{:.3e}\t{:.3e}\t{status}", e.name, e.elements, e.max_abs_error, e.max_rel_error);
        }
        s
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if !diff.is_finite() {
        return f64::INFINITY;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic[name]` with central differences of `loss` for every
/// element of every parameter in `names`. The store is restored afterwards.
pub fn gradcheck(
    store: &mut ParameterStore,
    names: &BTreeSet<String>,
    analytic: &Gradients,
    opts: &GradcheckOptions,
    mut loss: impl FnMut(&ParameterStore) -> Result<f64, KernelError>,
) -> Result<GradcheckReport, KernelError> {
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let grad = analytic.get(name).ok_or_else(|| KernelError::UnknownParameter(name.clone()))?;
        let n = store.tensor(name)?.len();
        if grad.len() != n {
            return Err(KernelError::Shape(format!("gradient for {name} has {} values, parameter {n}", grad.len())));
        }
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for i in 0..n {
            let orig = store.tensor(name)?.data()[i];
            let mut eval = |v: f64, s: &mut ParameterStore| -> f64 {
                s.get_mut(name).expect("present").tensor.data_mut()[i] = v;
                loss(s).ok().filter(|l| l.is_finite()).unwrap_or(f64::NAN)
            };
            let plus = eval(orig + opts.h, store);
            let minus = eval(orig - opts.h, store);
            store.get_mut(name)?.tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let mut a = grad.data()[i];
            if opts.corrupt {
                a = a * 1.1 + 1e-3;
            }
            let abs = (a - numeric).abs();
            max_abs = if abs.is_finite() { max_abs.max(abs) } else { f64::INFINITY };
            max_rel = max_rel.max(relative_error(a, numeric, opts.floor));
        }
        entries.push(ParamCheck {
            name: name.clone(),
            elements: n,
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed: max_rel.is_finite() && max_rel <= opts.threshold,
        });
    }
    Ok(GradcheckReport { entries, options: *opts })
}

/// Gradient check of the full model for the given parameter names.
pub fn gradcheck_model(
    model: &Model,
    input: &KernelInput,
    names: &BTreeSet<String>,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport, KernelError> {
    let (_, analytic) = model.loss_and_all_grads(input)?;
    let mut store = model.params.clone();
    let config = model.config.clone();
    gradcheck(&mut store, names, &analytic, opts, |s| {
        Model { config: config.clone(), params: s.clone() }.loss(input)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreezeReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Frozen parameters whose bits changed.
    pub changed_frozen: Vec<String>,
    /// Trainable parameters that moved at all.
    pub moved_trainable: usize,
}

impl FreezeReport {
    pub fn passed(&self) -> bool {
        self.changed_frozen.is_empty() && self.moved_trainable > 0
    }
}

fn bits(store: &ParameterStore, name: &str) -> Vec<u64> {
    store.tensor(name).map(|t| t.data().iter().map(|v| v.to_bits()).collect()).unwrap_or_default()
}

/// Runs `steps` AdamW updates on the model's trainable set and compares every
/// parameter bitwise with its starting value.
pub fn freeze_invariance(
    model: &mut Model,
    input: &KernelInput,
    steps: usize,
    config: AdamWConfig,
) -> Result<FreezeReport, KernelError> {
    let before = model.params.clone();
    let mut opt = AdamW::new(config);
    let initial_loss = model.loss(input)?;
    for _ in 0..steps {
        let (_, g) = model.loss_and_grads(input)?;
        opt.step(&mut model.params, &g)?;
    }
    let final_loss = model.loss(input)?;
    let mut changed_frozen = Vec::new();
    let mut moved_trainable = 0;
    for p in before.iter() {
        let same = bits(&before, &p.name) == bits(&model.params, &p.name);
        match (p.trainable, same) {
            (false, false) => changed_frozen.push(p.name.clone()),
            (true, false) => moved_trainable += 1,
            _ => {}
        }
    }
    Ok(FreezeReport { steps, initial_loss, final_loss, changed_frozen, moved_trainable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{linear, Tensor};

    #[test]
    fn linear_fragment_is_near_exact() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin()), true).unwrap();
        let x = Tensor::from_fn(&[2, 4], |i| (i as f64 * 0.91).cos());
        let c = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0);
        // loss = Σ c ⊙ (x Wᵀ), so dW = cᵀ x
        let loss = |s: &ParameterStore| -> Result<f64, KernelError> {
            let y = linear(&x, s.tensor("w")?, None)?;
            Ok(y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum())
        };
        let analytic: Gradients = [("w".to_string(), c.t_matmul(&x).unwrap())].into();
        let names: BTreeSet<String> = ["w".to_string()].into();
        let r = gradcheck(&mut s, &names, &analytic, &GradcheckOptions::default(), loss).unwrap();
        assert!(r.passed());
        assert!(r.max_rel_error() < 1e-8, "{}", r.max_rel_error());
        let bad = GradcheckOptions { corrupt: true, ..Default::default() };
        assert!(!gradcheck(&mut s, &names, &analytic, &bad, loss).unwrap().passed());
    }
}
