//! Parameter storage and first-order optimizers.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graph::{Gradients, ParamId};
use super::tensor::{check_finite, Tensor};
use super::NumericsError;

/// Named parameters. Values are shared snapshots; an update copies a tensor
/// only while a tape still holds the previous snapshot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<ParamId, Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ParamId, value: Tensor) {
        self.map.insert(id, Arc::new(value));
    }

    pub fn get(&self, id: &ParamId) -> Option<&Arc<Tensor>> {
        self.map.get(id)
    }

    pub fn contains(&self, id: &ParamId) -> bool {
        self.map.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Arc<Tensor>)> {
        self.map.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ParamId> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub(crate) fn get_mut(&mut self, id: &ParamId) -> Option<&mut Tensor> {
        self.map.get_mut(id).map(Arc::make_mut)
    }

    /// Copy of the listed parameters only.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a ParamId>) -> ParamStore {
        let map = ids
            .into_iter()
            .filter_map(|id| self.map.get(id).map(|t| (id.clone(), t.clone())))
            .collect();
        ParamStore { map }
    }

    /// Overwrites entries present in `other`; shapes must match.
    pub fn overwrite_from(&mut self, other: &ParamStore) -> Result<(), NumericsError> {
        for (id, t) in &other.map {
            match self.map.get(id) {
                Some(cur) if cur.shape() == t.shape() => {
                    self.map.insert(id.clone(), t.clone());
                }
                Some(cur) => {
                    return Err(NumericsError::ShapeMismatch {
                        op: "overwrite",
                        left: cur.shape().to_vec(),
                        right: t.shape().to_vec(),
                    })
                }
                None => return Err(NumericsError::UnknownParam(id.to_string())),
            }
        }
        Ok(())
    }
}

impl FromIterator<(ParamId, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (ParamId, Tensor)>>(iter: I) -> Self {
        Self {
            map: iter.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step counter of an Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<ParamId, Tensor>,
    pub second_moment: BTreeMap<ParamId, Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }
}

/// Selectable update rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam(AdamConfig),
    /// Plain `w ← w − η∇ℓ`.
    Sgd {
        lr: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam(AdamConfig::default())
    }
}

impl OptimizerKind {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerKind::Adam(c) => c.lr,
            OptimizerKind::Sgd { lr } => *lr,
        }
    }
}

/// Optimizer with its state.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adam(OptimizerState),
    Sgd { lr: f64, step: u64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam(c) => Optimizer::Adam(OptimizerState::new(c)),
            OptimizerKind::Sgd { lr } => Optimizer::Sgd { lr, step: 0 },
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Adam(s) => s.step,
            Optimizer::Sgd { step, .. } => *step,
        }
    }

    /// Applies one update. Parameters without a gradient entry are untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<(), NumericsError> {
        for (id, g) in grads {
            let p = params
                .get(id)
                .ok_or_else(|| NumericsError::UnknownParam(id.to_string()))?;
            if p.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "optimizer",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        match self {
            Optimizer::Sgd { lr, step } => {
                *step += 1;
                for (id, g) in grads {
                    let p = params.get_mut(id).expect("checked above");
                    for (w, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= *lr * gv;
                    }
                    check_finite("sgd", p.data())?;
                }
            }
            Optimizer::Adam(state) => adam_step(params, grads, state)?,
        }
        Ok(())
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut OptimizerState) -> Result<(), NumericsError> {
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (id, g) in grads {
        let shape = g.shape();
        let m = state
            .first_moment
            .entry(id.clone())
            .or_insert_with(|| Tensor::zeros(shape));
        if m.shape() != shape {
            return Err(NumericsError::ShapeMismatch {
                op: "adam moment",
                left: m.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let v = state
            .second_moment
            .entry(id.clone())
            .or_insert_with(|| Tensor::zeros(shape));
        if v.shape() != shape {
            return Err(NumericsError::ShapeMismatch {
                op: "adam moment",
                left: v.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let p = params
            .get_mut(id)
            .ok_or_else(|| NumericsError::UnknownParam(id.to_string()))?;
        if p.shape() != shape {
            return Err(NumericsError::ShapeMismatch {
                op: "adam",
                left: p.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let gd = g.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        check_finite("adam", p.data())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let id = ParamId::new("w");
        let store = [(id.clone(), Tensor::scalar(w).unwrap())].into_iter().collect();
        (store, id)
    }

    fn grad(id: &ParamId, g: f64) -> Gradients {
        [(id.clone(), Tensor::scalar(g).unwrap())].into_iter().collect()
    }

    #[test]
    fn zero_gradient_leaves_parameter_and_advances_counter() {
        let (mut store, id) = scalar_store(1.5);
        let mut opt = Optimizer::new(OptimizerKind::Adam(AdamConfig::with_lr(0.1)));
        opt.step(&mut store, &grad(&id, 0.0)).unwrap();
        assert_eq!(store.get(&id).unwrap().item(), 1.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let (mut store, id) = scalar_store(0.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam(AdamConfig::with_lr(0.1)));
        opt.step(&mut store, &grad(&id, 1.0)).unwrap();
        // m_hat = v_hat = 1 after bias correction: w = -0.1 / (1 + 1e-8)
        let w = store.get(&id).unwrap().item();
        assert!((w + 0.1).abs() < 1e-8, "w = {w}");
    }

    #[test]
    fn two_steps_descend_a_convex_quadratic() {
        // loss(w) = (w - 3)^2, gradient 2(w - 3)
        let loss = |w: f64| (w - 3.0) * (w - 3.0);
        for kind in [
            OptimizerKind::Adam(AdamConfig::with_lr(0.1)),
            OptimizerKind::Sgd { lr: 0.1 },
        ] {
            let (mut store, id) = scalar_store(0.0);
            let mut opt = Optimizer::new(kind);
            let mut prev = loss(0.0);
            for _ in 0..2 {
                let w = store.get(&id).unwrap().item();
                opt.step(&mut store, &grad(&id, 2.0 * (w - 3.0))).unwrap();
                let now = loss(store.get(&id).unwrap().item());
                assert!(now < prev);
                prev = now;
            }
        }
    }

    #[test]
    fn params_without_gradients_are_unchanged() {
        let a = ParamId::new("a");
        let b = ParamId::new("b");
        let mut store: ParamStore = [
            (a.clone(), Tensor::scalar(1.0).unwrap()),
            (b.clone(), Tensor::scalar(2.0).unwrap()),
        ]
        .into_iter()
        .collect();
        let mut opt = Optimizer::new(OptimizerKind::default());
        opt.step(&mut store, &grad(&a, 1.0)).unwrap();
        assert_eq!(store.get(&b).unwrap().item(), 2.0);
        assert_ne!(store.get(&a).unwrap().item(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut store, id) = scalar_store(0.0);
        let g: Gradients = [(id.clone(), Tensor::zeros(&[2]))].into_iter().collect();
        let mut opt = Optimizer::new(OptimizerKind::default());
        assert!(opt.step(&mut store, &g).is_err());
    }

    #[test]
    fn sgd_matches_plain_gradient_step() {
        let (mut store, id) = scalar_store(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd { lr: 0.5 });
        opt.step(&mut store, &grad(&id, 0.4)).unwrap();
        assert_eq!(store.get(&id).unwrap().item(), 0.8);
    }
}
