//! Named parameter tensors, their gradients, and the Adam optimizer state.
//!
//! Parameters are partitioned into three disjoint groups by name prefix:
//! `base.*` (the slow guidance policy), `proj.*` (the token projector) and
//! `adapt.*` (the fast local adapter). Training stages differ only in which
//! groups an update touches, expressed as a [`ParamSubset`].

use super::tensor::Tensor;
use super::NnError;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Guidance policy parameters.
    Base,
    /// Token projector parameters.
    Projector,
    /// Local adapter parameters.
    Adapter,
}

impl ParamGroup {
    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Base => "base.",
            ParamGroup::Projector => "proj.",
            ParamGroup::Adapter => "adapt.",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamGroup> {
        [ParamGroup::Base, ParamGroup::Projector, ParamGroup::Adapter]
            .into_iter()
            .find(|g| name.starts_with(g.prefix()))
    }
}

/// Which parameter groups an update step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSubset {
    pub base: bool,
    pub projector: bool,
    pub adapter: bool,
}

impl ParamSubset {
    /// Everything: the end-to-end stage.
    pub const ALL: ParamSubset = ParamSubset { base: true, projector: true, adapter: true };
    /// Adapter and projector only, guidance policy frozen: the first stage.
    pub const STAGE1: ParamSubset = ParamSubset { base: false, projector: true, adapter: true };
    /// Guidance policy only: its imitation pre-training.
    pub const BASE_ONLY: ParamSubset = ParamSubset { base: true, projector: false, adapter: false };

    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Base => self.base,
            ParamGroup::Projector => self.projector,
            ParamGroup::Adapter => self.adapter,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    group: ParamGroup,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// All learnable tensors of the stack, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, group: ParamGroup, value: Tensor) {
        assert!(
            name.starts_with(group.prefix()),
            "parameter name {name:?} must carry its group prefix"
        );
        assert!(!self.index.contains_key(name), "duplicate parameter {name:?}");
        let (r, c) = (value.rows, value.cols);
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            group,
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn group_at(&self, idx: usize) -> ParamGroup {
        self.params[idx].group
    }

    pub fn value_at(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn value_of(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn value_of_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.index_of(name)?;
        Some(&mut self.params[i].value)
    }

    pub fn grad_of(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].grad)
    }

    pub fn add_grad_at(&mut self, idx: usize, delta: &Tensor) {
        let p = &mut self.params[idx];
        assert!(p.grad.same_shape(delta), "gradient shape mismatch for {}", p.name);
        for (g, d) in p.grad.data.iter_mut().zip(&delta.data) {
            *g += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Count of scalar parameters in a subset.
    pub fn scalar_count(&self, subset: ParamSubset) -> usize {
        self.params
            .iter()
            .filter(|p| subset.contains(p.group))
            .map(|p| p.value.len())
            .sum()
    }

    /// One Adam update over `subset` from the accumulated gradients, with
    /// bias correction. The shared step counter advances once per call.
    pub fn adam_step(&mut self, cfg: &AdamConfig, subset: ParamSubset) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            if !subset.contains(p.group) {
                continue;
            }
            for i in 0..p.value.data.len() {
                let g = p.grad.data[i];
                p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
                p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = p.m.data[i] / bc1;
                let vhat = p.v.data[i] / bc2;
                p.value.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }

    /// Non-finite check across values (a cheap post-update tripwire).
    pub fn check_finite(&self) -> Result<(), NnError> {
        for p in &self.params {
            if !p.value.all_finite() {
                return Err(NnError::NumericalBlowup);
            }
        }
        Ok(())
    }

    /// Iterate `(name, group, value)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamGroup, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), p.group, &p.value))
    }

    /// Reset optimizer state (moments and step counter), keeping values.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in &mut self.params {
            p.m.fill(0.0);
            p.v.fill(0.0);
        }
    }

    /// Bitwise equality of parameter values (not optimizer state).
    pub fn values_identical(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.same_shape(&b.value)
                    && a.value.data.iter().zip(&b.value.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With a constant gradient g, the bias-corrected first step is
        // -lr * g / (|g| + eps), i.e. almost exactly -lr * sign(g).
        let mut s = ParamStore::new();
        s.add("base.w", ParamGroup::Base, Tensor::from_vec(1, 2, vec![1.0, 2.0]));
        let idx = s.index_of("base.w").unwrap();
        s.add_grad_at(idx, &Tensor::from_vec(1, 2, vec![0.5, -3.0]));
        let cfg = AdamConfig::with_lr(0.01);
        s.adam_step(&cfg, ParamSubset::ALL);
        let v = s.value_of("base.w").unwrap();
        assert!((v.data[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((v.data[1] - (2.0 + 0.01)).abs() < 1e-6);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn subset_freezes_groups() {
        let mut s = ParamStore::new();
        s.add("base.w", ParamGroup::Base, Tensor::from_vec(1, 1, vec![1.0]));
        s.add("adapt.w", ParamGroup::Adapter, Tensor::from_vec(1, 1, vec![1.0]));
        for name in ["base.w", "adapt.w"] {
            let i = s.index_of(name).unwrap();
            s.add_grad_at(i, &Tensor::from_vec(1, 1, vec![1.0]));
        }
        s.adam_step(&AdamConfig::with_lr(0.1), ParamSubset::STAGE1);
        assert_eq!(s.value_of("base.w").unwrap().data[0], 1.0);
        assert!(s.value_of("adapt.w").unwrap().data[0] < 1.0);
    }

    #[test]
    fn group_prefixes_are_enforced() {
        let r = std::panic::catch_unwind(|| {
            let mut s = ParamStore::new();
            s.add("oops.w", ParamGroup::Base, Tensor::zeros(1, 1));
        });
        assert!(r.is_err());
    }

    #[test]
    fn identical_seeds_stay_bit_identical() {
        let build = || {
            let mut s = ParamStore::new();
            s.add("base.w", ParamGroup::Base, Tensor::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
            for _ in 0..3 {
                let i = s.index_of("base.w").unwrap();
                s.add_grad_at(i, &Tensor::from_vec(2, 2, vec![0.05, -0.1, 0.2, 0.0]));
                s.adam_step(&AdamConfig::with_lr(0.02), ParamSubset::ALL);
                s.zero_grads();
            }
            s
        };
        assert!(build().values_identical(&build()));
    }
}
