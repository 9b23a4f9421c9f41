//! Knowledge gain: how much a neighbor stands to learn from a sender's model,
//! measured by how much worse the neighbor's loss is.
//!
//! Also hosts the checks for the averaging inequalities that motivate it:
//! averaging a weaker model (further from the optimum) with a stronger one
//! never leaves the weaker side worse off, while the stronger side can lose.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::{distance, midpoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainParams {
    /// Slope of the exponential scaling.
    pub mu: f64,
}

impl GainParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid("mu", "must be positive and finite"));
        }
        Ok(Self { mu })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainValue {
    /// `max(l_receiver - l_sender, 0)`
    pub raw: f64,
    /// `1 - exp(-mu * raw)`, in `[0, 1)`.
    pub scaled: f64,
}

/// Gain of `receiver` when it gets the sender's model.
pub fn knowledge_gain(l_sender: f64, l_receiver: f64, params: &GainParams) -> GainValue {
    let raw = (l_receiver - l_sender).max(0.0);
    GainValue {
        raw,
        scaled: scale_gain(raw, params.mu),
    }
}

/// `1 - exp(-mu * raw)` computed without cancellation near zero.
pub fn scale_gain(raw: f64, mu: f64) -> f64 {
    -libm::expm1(-mu * raw)
}

/// Truth values of the three inequalities, with `w_agg = (w1 + w2) / 2`:
///
/// * `closer_than_weaker`: `|w* - w_agg| <= |w* - w2|`
/// * `lower_bound`: `|w* - w1| - |w2 - w1| / 2 <= |w* - w_agg|`
/// * `upper_bound`: `|w* - w_agg| <= |w* - w1| + |w2 - w1| / 2`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AveragingBounds {
    pub closer_than_weaker: bool,
    pub lower_bound: bool,
    pub upper_bound: bool,
}

impl AveragingBounds {
    pub fn all(&self) -> bool {
        self.closer_than_weaker && self.lower_bound && self.upper_bound
    }

    pub fn violations(&self) -> usize {
        [self.closer_than_weaker, self.lower_bound, self.upper_bound]
            .iter()
            .filter(|ok| !**ok)
            .count()
    }
}

/// Relative slack used by [`check_averaging_bounds`].
pub const BOUNDS_TOLERANCE: f64 = 1e-9;

/// `a <= b` up to `tol` relative to the larger magnitude.
fn le(a: f64, b: f64, tol: f64) -> bool {
    a <= b + tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Evaluates the averaging inequalities for a triple where `w1` is at least as
/// close to `w_star` as `w2` (callers order the pair first).
pub fn check_averaging_bounds(w_star: &[f64], w1: &[f64], w2: &[f64]) -> Result<AveragingBounds> {
    check_averaging_bounds_with_tolerance(w_star, w1, w2, BOUNDS_TOLERANCE)
}

pub fn check_averaging_bounds_with_tolerance(
    w_star: &[f64],
    w1: &[f64],
    w2: &[f64],
    tol: f64,
) -> Result<AveragingBounds> {
    if w1.len() != w_star.len() || w2.len() != w_star.len() {
        return Err(Error::invalid("triple", "vectors must share one dimension"));
    }
    let d1 = distance(w_star, w1);
    let d2 = distance(w_star, w2);
    if !le(d1, d2, tol) {
        return Err(Error::Ordering { d1, d2 });
    }
    let agg = midpoint(w1, w2);
    let d_agg = distance(w_star, &agg);
    let half_gap = distance(w2, w1) / 2.0;
    Ok(AveragingBounds {
        closer_than_weaker: le(d_agg, d2, tol),
        lower_bound: le(d1 - half_gap, d_agg, tol),
        upper_bound: le(d_agg, d1 + half_gap, tol),
    })
}

/// Whether averaging moved the stronger model `w1` away from `w_star`.
pub fn stronger_model_harmed(w_star: &[f64], w1: &[f64], w2: &[f64]) -> bool {
    distance(w_star, &midpoint(w1, w2)) > distance(w_star, w1)
}

/// A random `(w_star, w1, w2)` triple in `dim` dimensions, ordered so `w1`
/// is the closer model. Coordinates are Gaussian with a per-vector scale
/// spread over several orders of magnitude, so both nearly-equal and very
/// unequal pairs occur.
pub fn random_triple<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let draw = |rng: &mut R| -> Vec<f64> {
        let scale = libm::pow(10.0, rng.random_range(-3.0..3.0));
        (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let w_star = draw(rng);
    let mut w1 = draw(rng);
    let mut w2 = draw(rng);
    for v in [&mut w1, &mut w2] {
        v.iter_mut().zip(&w_star).for_each(|(x, s)| *x += s);
    }
    if distance(&w_star, &w1) > distance(&w_star, &w2) {
        core::mem::swap(&mut w1, &mut w2);
    }
    (w_star, w1, w2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::Rng;

    #[test]
    fn gain_examples() {
        let p = GainParams::new(2.0).unwrap();
        assert_eq!(knowledge_gain(0.7, 0.7, &p), GainValue { raw: 0.0, scaled: 0.0 });
        assert_eq!(knowledge_gain(0.9, 0.2, &p).raw, 0.0);
        let g = knowledge_gain(0.5, 1.5, &p);
        assert_eq!(g.raw, 1.0);
        assert!((g.scaled - 0.864_664_716_763_387_3).abs() < 1e-15);
        assert!(GainParams::new(0.0).is_err());
    }

    #[test]
    fn scaled_gain_is_monotone_and_bounded() {
        let mut prev = 0.0;
        for i in 1..200 {
            let s = scale_gain(i as f64 * 0.05, 2.0);
            assert!(s > prev && s < 1.0);
            prev = s;
        }
        assert!(scale_gain(1.0, 3.0) > scale_gain(1.0, 2.0));
        assert!(scale_gain(1e-300, 2.0) > 0.0);
    }

    #[test]
    fn hand_evaluated_triple() {
        let b = check_averaging_bounds(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0]).unwrap();
        assert!(b.all());
    }

    #[test]
    fn identical_models_are_trivially_fine() {
        let b = check_averaging_bounds(&[0.3, -1.0], &[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert!(b.all());
    }

    #[test]
    fn wrong_order_is_rejected() {
        let r = check_averaging_bounds(&[0.0], &[3.0], &[1.0]);
        assert!(matches!(r, Err(Error::Ordering { .. })));
        assert!(check_averaging_bounds(&[0.0], &[3.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn random_triples_satisfy_bounds() {
        let mut rng = crate::rng::stream(17, crate::rng::Stream::Instances, 0);
        for _ in 0..10_000 {
            let draw = |rng: &mut crate::rng::SimRng| -> Vec<f64> {
                (0..50).map(|_| rng.random_range(-5.0..5.0)).collect()
            };
            let ws = draw(&mut rng);
            let (mut a, mut b) = (draw(&mut rng), draw(&mut rng));
            if distance(&ws, &a) > distance(&ws, &b) {
                core::mem::swap(&mut a, &mut b);
            }
            assert!(check_averaging_bounds(&ws, &a, &b).unwrap().all());
        }
    }

    #[test]
    fn random_triples_are_ordered() {
        let mut rng = crate::rng::stream(3, crate::rng::Stream::Instances, 0);
        for dim in [1, 2, 10] {
            for _ in 0..200 {
                let (s, a, b) = random_triple(dim, &mut rng);
                assert_eq!((s.len(), a.len(), b.len()), (dim, dim, dim));
                assert!(distance(&s, &a) <= distance(&s, &b));
                assert!(check_averaging_bounds(&s, &a, &b).unwrap().all());
            }
        }
    }

    #[test]
    fn stronger_model_can_be_harmed() {
        // w1 sits on the optimum; any distinct w2 drags the average away.
        assert!(stronger_model_harmed(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]));
        assert!(!stronger_model_harmed(&[0.0], &[1.0], &[-1.0]));
    }
}
