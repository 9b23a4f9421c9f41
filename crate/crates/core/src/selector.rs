//! Per-node peer selection.
//!
//! Each neighbor `k` gets a membership weight `w_k` and a selection
//! probability `beta_k = sigmoid(w_k)`. The node maximizes
//!
//! ```text
//! sum(beta_k * gain_k) / sum(beta_k * energy_k) + theta * |w|_2
//! ```
//!
//! by plain gradient ascent, then keeps every neighbor with `beta_k` at or
//! above the certainty threshold. The ratio alone is maximized by a single
//! neighbor; the norm term rewards pushing weights away from zero, which
//! locks in neighbors that start out selected and so widens the peer set as
//! `theta` grows.

use alloc::vec::Vec;

use crate::math::{norm, sigmoid};
use crate::{Error, NodeId, Result};

/// One node's view of its neighborhood for this round.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionInstance {
    neighbor_ids: Vec<NodeId>,
    gains: Vec<f64>,
    energies: Vec<f64>,
}

impl SelectionInstance {
    /// `gains` are scaled gains in `[0, 1)`, `energies` scaled energies in `(0, 1]`.
    pub fn new(neighbor_ids: Vec<NodeId>, gains: Vec<f64>, energies: Vec<f64>) -> Result<Self> {
        if neighbor_ids.is_empty() {
            return Err(Error::invalid("selection instance", "needs at least one neighbor"));
        }
        if gains.len() != neighbor_ids.len() || energies.len() != neighbor_ids.len() {
            return Err(Error::invalid("selection instance", "ids, gains, energies differ in length"));
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("selection instance", "gains must be finite and >= 0"));
        }
        if energies.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::invalid("selection instance", "energies must be finite and > 0"));
        }
        Ok(Self {
            neighbor_ids,
            gains,
            energies,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.is_empty()
    }

    pub fn neighbor_ids(&self) -> &[NodeId] {
        &self.neighbor_ids
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn all_gains_zero(&self) -> bool {
        self.gains.iter().all(|&g| g == 0.0)
    }

    /// Same instance with every energy multiplied by `factor`.
    pub fn with_scaled_energies(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.neighbor_ids.clone(),
            self.gains.clone(),
            self.energies.iter().map(|e| e * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorConfig {
    /// Weight of the `|w|_2` reward.
    pub theta: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Certainty threshold on `beta`.
    pub threshold: f64,
    /// Starting value of every `w_k`.
    pub init_w: f64,
    pub rule: AscentRule,
}

/// How each ascent step turns the gradient into a move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AscentRule {
    /// `w += step_size * grad`
    Plain,
    /// Adam moments with the usual decay rates; `step_size` is the base rate.
    /// Each coordinate moves at a pace independent of the gradient scale.
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-12;

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid("theta", "must be finite and >= 0"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("selector steps", "must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("selector step_size", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("selector threshold", "must lie in (0, 1)"));
        }
        if !self.init_w.is_finite() {
            return Err(Error::invalid("selector init_w", "must be finite"));
        }
        Ok(())
    }
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            theta: 0.02,
            steps: 500,
            step_size: 0.1,
            threshold: 0.5,
            init_w: 0.1,
            rule: AscentRule::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDecision {
    /// `sigmoid(w_k)` per neighbor, in instance order.
    pub betas: Vec<f64>,
    /// Chosen neighbor ids, ascending.
    pub selected: Vec<NodeId>,
    pub objective_value: f64,
    /// No neighbor would gain anything, so the node stays silent this round.
    pub skipped: bool,
}

impl SelectionDecision {
    pub fn num_selected(&self) -> usize {
        self.selected.len()
    }
}

/// Ratio of selected gain to selected energy plus `theta * |w|_2`.
pub fn objective(w: &[f64], inst: &SelectionInstance, theta: f64) -> f64 {
    debug_assert_eq!(w.len(), inst.len());
    let (num, den) = w
        .iter()
        .zip(inst.gains.iter().zip(&inst.energies))
        .fold((0.0, 0.0), |(n, d), (&wk, (&g, &e))| {
            let b = sigmoid(wk);
            (n + b * g, d + b * e)
        });
    num / den + theta * norm(w)
}

/// Gradient of [`objective`]. At `w = 0` the norm contributes nothing.
pub fn objective_grad(w: &[f64], inst: &SelectionInstance, theta: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(w.len());
    objective_grad_into(w, inst, theta, &mut grad);
    grad
}

fn objective_grad_into(w: &[f64], inst: &SelectionInstance, theta: f64, grad: &mut Vec<f64>) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&wk, (&g, &e)) in w.iter().zip(inst.gains.iter().zip(&inst.energies)) {
        let b = sigmoid(wk);
        num += b * g;
        den += b * e;
    }
    let ratio = num / den;
    let w_norm = norm(w);
    grad.clear();
    for (&wk, (&g, &e)) in w.iter().zip(inst.gains.iter().zip(&inst.energies)) {
        let b = sigmoid(wk);
        let mut d = b * (1.0 - b) * (g - ratio * e) / den;
        if w_norm > 0.0 {
            d += theta * wk / w_norm;
        }
        grad.push(d);
    }
}

/// Gradient ascent from `w = init_w`, then thresholding.
///
/// An empty threshold set falls back to the single most probable neighbor.
/// When no neighbor has a positive gain the decision is empty and `skipped`.
pub fn optimize(inst: &SelectionInstance, cfg: &SelectorConfig) -> SelectionDecision {
    if inst.all_gains_zero() {
        let beta = sigmoid(cfg.init_w);
        return SelectionDecision {
            betas: alloc::vec![beta; inst.len()],
            selected: Vec::new(),
            objective_value: 0.0,
            skipped: true,
        };
    }
    let mut w = alloc::vec![cfg.init_w; inst.len()];
    let mut grad = Vec::with_capacity(inst.len());
    let mut m = alloc::vec![0.0; inst.len()];
    let mut v = alloc::vec![0.0; inst.len()];
    let (mut decay1, mut decay2) = (1.0, 1.0);
    for _ in 0..cfg.steps {
        objective_grad_into(&w, inst, cfg.theta, &mut grad);
        match cfg.rule {
            AscentRule::Plain => {
                for (wk, g) in w.iter_mut().zip(&grad) {
                    *wk += cfg.step_size * g;
                }
            }
            AscentRule::Adam => {
                decay1 *= ADAM_BETA1;
                decay2 *= ADAM_BETA2;
                for k in 0..w.len() {
                    let g = grad[k];
                    m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                    v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = m[k] / (1.0 - decay1);
                    let v_hat = v[k] / (1.0 - decay2);
                    w[k] += cfg.step_size * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
                }
            }
        }
    }
    let betas: Vec<f64> = w.iter().map(|&x| sigmoid(x)).collect();
    let mut selected: Vec<NodeId> = betas
        .iter()
        .zip(&inst.neighbor_ids)
        .filter(|(b, _)| **b >= cfg.threshold)
        .map(|(_, &id)| id)
        .collect();
    if selected.is_empty() {
        let best = (0..w.len()).fold(0, |best, k| if w[k] > w[best] { k } else { best });
        selected.push(inst.neighbor_ids[best]);
    }
    selected.sort_unstable();
    SelectionDecision {
        objective_value: objective(&w, inst, cfg.theta),
        betas,
        selected,
        skipped: false,
    }
}

/// `k` neighbors with gains uniform on `[0, 1)` and energies uniform on
/// `(0, 1]`, ids `0..k`.
pub fn uniform_instance<R: rand::Rng + ?Sized>(k: usize, rng: &mut R) -> Result<SelectionInstance> {
    let gains = (0..k).map(|_| rng.random::<f64>()).collect();
    let energies = (0..k).map(|_| 1.0 - rng.random::<f64>()).collect();
    SelectionInstance::new((0..k).collect(), gains, energies)
}

/// Non-optimizing policies used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselinePolicy {
    /// Never transmit.
    Isolated,
    /// Transmit to every neighbor.
    Broadcast,
}

pub fn baseline_policy(kind: BaselinePolicy, inst: &SelectionInstance) -> SelectionDecision {
    let (beta, selected) = match kind {
        BaselinePolicy::Isolated => (0.0, Vec::new()),
        BaselinePolicy::Broadcast => {
            let mut ids = inst.neighbor_ids.clone();
            ids.sort_unstable();
            (1.0, ids)
        }
    };
    let objective_value = if selected.is_empty() {
        0.0
    } else {
        inst.gains.iter().sum::<f64>() / inst.energies.iter().sum::<f64>()
    };
    SelectionDecision {
        betas: alloc::vec![beta; inst.len()],
        selected,
        objective_value,
        skipped: false,
    }
}

/// Largest neighborhood [`best_subset_exhaustive`] accepts.
pub const EXHAUSTIVE_LIMIT: usize = 24;

/// Enumerates every nonempty subset and returns the one with the highest
/// `sum(gain) / sum(energy)`, ids ascending. Ties go to the smaller subset,
/// then to the lower bitmask.
pub fn best_subset_exhaustive(inst: &SelectionInstance) -> Result<(Vec<NodeId>, f64)> {
    let k = inst.len();
    if k > EXHAUSTIVE_LIMIT {
        return Err(Error::invalid(
            "selection instance",
            alloc::format!("{k} neighbors exceed the exhaustive search limit {EXHAUSTIVE_LIMIT}"),
        ));
    }
    let mut best_mask = 0u32;
    let mut best_value = f64::NEG_INFINITY;
    let mut best_size = usize::MAX;
    for mask in 1u32..(1 << k) {
        let mut g = 0.0;
        let mut e = 0.0;
        for i in 0..k {
            if mask & (1 << i) != 0 {
                g += inst.gains[i];
                e += inst.energies[i];
            }
        }
        let value = g / e;
        let size = mask.count_ones() as usize;
        if value > best_value || (value == best_value && size < best_size) {
            best_value = value;
            best_mask = mask;
            best_size = size;
        }
    }
    let mut ids: Vec<NodeId> = (0..k)
        .filter(|i| best_mask & (1 << i) != 0)
        .map(|i| inst.neighbor_ids[i])
        .collect();
    ids.sort_unstable();
    Ok((ids, best_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn inst(gains: &[f64], energies: &[f64]) -> SelectionInstance {
        SelectionInstance::new((0..gains.len()).collect(), gains.to_vec(), energies.to_vec()).unwrap()
    }

    fn cfg(theta: f64) -> SelectorConfig {
        SelectorConfig {
            theta,
            ..SelectorConfig::default()
        }
    }

    #[test]
    fn instance_validation() {
        assert!(SelectionInstance::new(vec![], vec![], vec![]).is_err());
        assert!(SelectionInstance::new(vec![1], vec![0.5], vec![0.0]).is_err());
        assert!(SelectionInstance::new(vec![1], vec![-0.1], vec![0.5]).is_err());
        assert!(SelectionInstance::new(vec![1, 2], vec![0.5], vec![0.5]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(-1.0).validate().is_err());
        assert!(SelectorConfig { threshold: 1.0, ..cfg(0.0) }.validate().is_err());
        assert!(SelectorConfig { steps: 0, ..cfg(0.0) }.validate().is_err());
        assert!(cfg(0.02).validate().is_ok());
    }

    #[test]
    fn objective_with_zero_gains_is_the_regularizer() {
        let i = inst(&[0.0, 0.0], &[0.3, 0.9]);
        let w = [0.6, -0.8];
        assert!((objective(&w, &i, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_neighbor_ratio_ignores_weight() {
        let i = inst(&[0.4], &[0.8]);
        for w in [-3.0, 0.0, 2.5] {
            assert!((objective(&[w], &i, 0.0) - 0.5).abs() < 1e-15);
            assert!((objective(&[w], &i, 0.1) - (0.5 + 0.1 * f64::abs(w))).abs() < 1e-15);
            assert_eq!(objective_grad(&[w], &i, 0.0), [0.0]);
        }
    }

    #[test]
    fn objective_at_origin() {
        let i = inst(&[0.8, 0.2], &[0.4, 0.9]);
        let v = objective(&[0.0, 0.0], &i, 0.0);
        assert!((v - 0.5 / 0.65).abs() < 1e-15, "{v}");
    }

    #[test]
    fn symmetric_instance_has_zero_gradient() {
        let i = inst(&[0.3; 4], &[0.6; 4]);
        let g = objective_grad(&[0.2, -1.0, 0.7, 0.0], &i, 0.0);
        assert!(g.iter().all(|x| x.abs() < 1e-16), "{g:?}");
    }

    #[test]
    fn subgradient_at_origin_is_ratio_only() {
        let i = inst(&[0.8, 0.2], &[0.4, 0.9]);
        assert_eq!(objective_grad(&[0.0, 0.0], &i, 0.0), objective_grad(&[0.0, 0.0], &i, 5.0));
    }

    #[test]
    fn picks_the_best_ratio_without_regularization() {
        let i = inst(&[0.9, 0.5, 0.1], &[0.9, 0.3, 0.2]);
        let d = optimize(&i, &cfg(0.0));
        assert_eq!(d.selected, [1]);
        assert_eq!(best_subset_exhaustive(&i).unwrap().0, [1]);
        assert!(!d.skipped);
    }

    #[test]
    fn all_zero_gains_skip_transmission() {
        let d = optimize(&inst(&[0.0, 0.0, 0.0], &[0.2, 0.4, 0.9]), &cfg(0.02));
        assert!(d.skipped);
        assert!(d.selected.is_empty());
    }

    #[test]
    fn baselines() {
        let i = SelectionInstance::new(vec![9, 3, 4, 1, 7], vec![0.1; 5], vec![0.5; 5]).unwrap();
        assert_eq!(baseline_policy(BaselinePolicy::Broadcast, &i).selected, [1, 3, 4, 7, 9]);
        assert_eq!(baseline_policy(BaselinePolicy::Isolated, &i).num_selected(), 0);
        // broadcasting is the all-ones membership: its value is the full ratio
        let full = baseline_policy(BaselinePolicy::Broadcast, &i);
        assert!((full.objective_value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_limit() {
        let i = inst(&[0.1; 25], &[0.5; 25]);
        assert!(best_subset_exhaustive(&i).is_err());
    }

    #[test]
    fn larger_theta_never_shrinks_a_typical_selection() {
        let i = inst(
            &[0.9, 0.5, 0.6, 0.2, 0.5, 0.3, 0.8, 0.1],
            &[0.5, 0.4, 0.9, 0.3, 0.6, 0.8, 0.7, 0.2],
        );
        let counts: Vec<usize> = [0.0, 0.02, 0.1, 0.5]
            .iter()
            .map(|&t| optimize(&i, &cfg(t)).num_selected())
            .collect();
        assert_eq!(counts[0], 1);
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
        assert_eq!(counts[3], 8);
    }

    fn instance_strategy() -> impl Strategy<Value = SelectionInstance> {
        (1usize..=30).prop_flat_map(|k| {
            (
                proptest::collection::vec(0.0f64..1.0, k),
                proptest::collection::vec(0.01f64..1.0, k),
            )
                .prop_map(|(g, e)| inst(&g, &e))
        })
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(
            i in instance_strategy(),
            theta in 0.0f64..0.2,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, crate::rng::Stream::Instances, 0);
            let w: Vec<f64> = (0..i.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = objective_grad(&w, &i, theta);
            let h = 1e-5;
            for k in 0..w.len() {
                let mut wp = w.clone();
                wp[k] += h;
                let mut wm = w.clone();
                wm[k] -= h;
                let fd = (objective(&wp, &i, theta) - objective(&wm, &i, theta)) / (2.0 * h);
                let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-4);
                prop_assert!(err < 1e-4, "k {}: analytic {} fd {}", k, g[k], fd);
            }
        }

        #[test]
        fn decision_respects_selection_bounds(i in instance_strategy(), theta in 0.0f64..0.2) {
            let d = optimize(&i, &cfg(theta));
            if i.all_gains_zero() {
                prop_assert!(d.selected.is_empty());
            } else {
                prop_assert!(!d.selected.is_empty() && d.selected.len() <= i.len());
            }
            prop_assert_eq!(d.clone(), optimize(&i, &cfg(theta)));
        }

        #[test]
        fn exhaustive_optimum_is_energy_scale_invariant(
            i in instance_strategy().prop_filter("small", |i| i.len() <= 10),
            factor in 0.01f64..100.0,
        ) {
            let a = best_subset_exhaustive(&i).unwrap().0;
            let b = best_subset_exhaustive(&i.with_scaled_energies(factor).unwrap()).unwrap().0;
            prop_assert_eq!(a, b);
        }
    }
}
