//! Reach-avoid stage cost with a recentred barrier over forbidden regions.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::{RegionShape, RoiSet};
use crate::scltl::ObservationId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("point lies inside or on forbidden region {obs} (h = {h})")]
    BarrierDomain { obs: usize, h: f64 },
    #[error("input weight R must be symmetric positive definite")]
    NotPositiveDefinite,
    #[error("invalid cost parameter: {0}")]
    InvalidParameter(String),
}

/// Weights of `r(e, μ) = Q(e) + μᵀRμ + B(e)` with `Q(e) = q_scale ‖e‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q_scale: f64,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    r_min_eig: f64,
    barrier_scale: f64,
}

impl CostSpec {
    pub fn new(q_scale: f64, r: DMatrix<f64>, barrier_scale: f64) -> Result<Self, CostError> {
        if !(q_scale > 0.0) || !q_scale.is_finite() {
            return Err(CostError::InvalidParameter("Q_scale must be positive".into()));
        }
        if !(barrier_scale >= 0.0) || !barrier_scale.is_finite() {
            return Err(CostError::InvalidParameter("barrier_scale must be non-negative".into()));
        }
        if !r.is_square() || (&r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
            return Err(CostError::NotPositiveDefinite);
        }
        let r_min_eig = r.clone().symmetric_eigen().eigenvalues.min();
        if !(r_min_eig > 0.0) {
            return Err(CostError::NotPositiveDefinite);
        }
        let r_inv = r.clone().cholesky().ok_or(CostError::NotPositiveDefinite)?.inverse();
        Ok(Self { q_scale, r, r_inv, r_min_eig, barrier_scale })
    }

    pub fn q_scale(&self) -> f64 {
        self.q_scale
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn r_min_eig(&self) -> f64 {
        self.r_min_eig
    }

    pub fn barrier_scale(&self) -> f64 {
        self.barrier_scale
    }

    pub fn state_cost(&self, e: &DVector<f64>) -> f64 {
        self.q_scale * e.norm_squared()
    }

    pub fn input_cost(&self, mu: &DVector<f64>) -> f64 {
        mu.dot(&(&self.r * mu))
    }
}

#[derive(Debug, Clone)]
struct BarrierTerm {
    obs: ObservationId,
    shape: RegionShape,
    b_goal: f64,
    grad_b_goal: DVector<f64>,
}

/// `B(e) = scale Σ_o (b_o(z(e)) - b_o(x_d) - ∇b_o(x_d) e)²` with `b_o = -1/h_o`.
#[derive(Debug, Clone)]
pub struct RecenteredBarrier {
    x_d: DVector<f64>,
    terms: Vec<BarrierTerm>,
    scale: f64,
}

/// Barrier value and gradient at one point.
#[derive(Debug, Clone)]
pub struct BarrierEval {
    pub value: f64,
    pub grad: DVector<f64>,
}

impl BarrierEval {
    /// `B̄ = B / (1 + B)`.
    pub fn bounded(&self) -> f64 {
        self.value / (1.0 + self.value)
    }

    /// `∇B̄ = ∇B / (1 + B)²`.
    pub fn bounded_grad(&self) -> DVector<f64> {
        &self.grad / (1.0 + self.value).powi(2)
    }
}

impl RecenteredBarrier {
    /// Barrier over the regions of `forbidden` that exist in `rois`.
    pub fn new(
        rois: &RoiSet,
        forbidden: &BTreeSet<ObservationId>,
        x_d: DVector<f64>,
        scale: f64,
    ) -> Result<Self, CostError> {
        let mut terms = Vec::new();
        for &obs in forbidden {
            let Some(roi) = rois.get(obs) else { continue };
            let h = roi.shape.h(&x_d);
            if h >= 0.0 {
                return Err(CostError::BarrierDomain { obs: obs.0, h });
            }
            terms.push(BarrierTerm {
                obs,
                b_goal: -1.0 / h,
                grad_b_goal: roi.shape.grad_h(&x_d) / (h * h),
                shape: roi.shape.clone(),
            });
        }
        Ok(Self { x_d, terms, scale })
    }

    /// A barrier with no forbidden regions; identically zero.
    pub fn empty(x_d: DVector<f64>) -> Self {
        Self { x_d, terms: Vec::new(), scale: 0.0 }
    }

    pub fn goal(&self) -> &DVector<f64> {
        &self.x_d
    }

    pub fn forbidden(&self) -> impl Iterator<Item = ObservationId> + '_ {
        self.terms.iter().map(|t| t.obs)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Smallest `-h_o(z(e))` over forbidden regions; positive means clear.
    pub fn clearance(&self, e: &DVector<f64>) -> f64 {
        let x = e + &self.x_d;
        self.terms.iter().map(|t| -t.shape.h(&x)).fold(f64::INFINITY, f64::min)
    }

    pub fn evaluate(&self, e: &DVector<f64>) -> Result<BarrierEval, CostError> {
        let x = e + &self.x_d;
        let mut value = 0.0;
        let mut grad = DVector::zeros(e.len());
        for t in &self.terms {
            let h = t.shape.h(&x);
            if h >= 0.0 || !h.is_finite() {
                return Err(CostError::BarrierDomain { obs: t.obs.0, h });
            }
            let phi = -1.0 / h - t.b_goal - t.grad_b_goal.dot(e);
            let grad_b = t.shape.grad_h(&x) / (h * h);
            value += phi * phi;
            grad += (grad_b - &t.grad_b_goal) * (2.0 * phi);
        }
        Ok(BarrierEval { value: self.scale * value, grad: grad * self.scale })
    }

    pub fn value(&self, e: &DVector<f64>) -> Result<f64, CostError> {
        Ok(self.evaluate(e)?.value)
    }

    /// `B̄(y) = B(y) / (1 + B(y))`, in `[0, 1)`.
    pub fn bounded(&self, y: &DVector<f64>) -> Result<f64, CostError> {
        Ok(self.evaluate(y)?.bounded())
    }

    pub fn bounded_grad(&self, y: &DVector<f64>) -> Result<DVector<f64>, CostError> {
        Ok(self.evaluate(y)?.bounded_grad())
    }
}

/// `r(e, μ) = Q(e) + μᵀRμ + B(e)`.
pub fn stage_cost(
    cost: &CostSpec,
    barrier: &RecenteredBarrier,
    e: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<f64, CostError> {
    Ok(cost.state_cost(e) + cost.input_cost(mu) + barrier.value(e)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::Roi;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn obs(i: usize) -> ObservationId {
        ObservationId(i)
    }

    /// Forbidden disks at (-2.6, 0.9) and (-0.6, -1.4), both radius 0.5.
    const DISKS: [(f64, f64, f64); 2] = [(-2.6, 0.9, 0.5), (-0.6, -1.4, 0.5)];

    fn rois() -> RoiSet {
        RoiSet::new(vec![
            Roi::disk(obs(0), "o1", v(&[-1.5, 0.0]), 0.5),
            Roi::disk(obs(3), "o4", v(&[DISKS[0].0, DISKS[0].1]), DISKS[0].2),
            Roi::disk(obs(4), "o5", v(&[DISKS[1].0, DISKS[1].1]), DISKS[1].2),
        ])
        .unwrap()
    }

    fn barrier(scale: f64) -> RecenteredBarrier {
        RecenteredBarrier::new(&rois(), &[obs(3), obs(4)].into(), v(&[-1.5, 0.0]), scale).unwrap()
    }

    /// Term-by-term evaluation with plain scalars.
    fn reference_barrier(e: [f64; 2], xd: [f64; 2], scale: f64) -> f64 {
        let mut total = 0.0;
        for (cx, cy, r) in DISKS {
            let h = |p: [f64; 2]| r - ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            let b = |p: [f64; 2]| -1.0 / h(p);
            let dist = ((xd[0] - cx).powi(2) + (xd[1] - cy).powi(2)).sqrt();
            let hd = h(xd);
            // ∇b = ∇h / h², ∇h = -(x - c)/‖x - c‖
            let gx = -(xd[0] - cx) / dist / (hd * hd);
            let gy = -(xd[1] - cy) / dist / (hd * hd);
            let z = [e[0] + xd[0], e[1] + xd[1]];
            let term = b(z) - b(xd) - (gx * e[0] + gy * e[1]);
            total += term * term;
        }
        scale * total
    }

    #[test]
    fn vanishes_at_goal_and_without_forbidden_regions() {
        let b = barrier(1.0);
        assert_eq!(b.value(&v(&[0.0, 0.0])).unwrap(), 0.0);
        let none = RecenteredBarrier::new(&rois(), &BTreeSet::new(), v(&[-1.5, 0.0]), 1.0).unwrap();
        for p in [[0.3, 0.1], [-1.0, 2.0]] {
            assert_eq!(none.value(&v(&p)).unwrap(), 0.0);
        }
    }

    #[test]
    fn matches_reference_evaluation() {
        let b = barrier(0.01);
        for e in [[0.4, 0.6], [-0.5, 0.3], [0.9, -0.8], [0.05, 0.02]] {
            let got = b.value(&v(&e)).unwrap();
            let want = reference_barrier(e, [-1.5, 0.0], 0.01);
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn ignores_non_forbidden_regions() {
        let extra = RoiSet::new(vec![
            Roi::disk(obs(0), "o1", v(&[-1.5, 0.0]), 0.5),
            Roi::disk(obs(1), "o2", v(&[0.0, 1.5]), 0.5),
            Roi::disk(obs(3), "o4", v(&[DISKS[0].0, DISKS[0].1]), DISKS[0].2),
            Roi::disk(obs(4), "o5", v(&[DISKS[1].0, DISKS[1].1]), DISKS[1].2),
        ])
        .unwrap();
        let with = RecenteredBarrier::new(&extra, &[obs(3), obs(4)].into(), v(&[-1.5, 0.0]), 1.0).unwrap();
        let e = v(&[0.7, 0.4]);
        assert_eq!(with.value(&e).unwrap(), barrier(1.0).value(&e).unwrap());
    }

    #[test]
    fn rejects_points_in_forbidden_regions() {
        let b = barrier(1.0);
        let inside = v(&[DISKS[0].0 + 1.5, DISKS[0].1]);
        assert!(matches!(b.value(&inside), Err(CostError::BarrierDomain { obs: 3, .. })));
        let on_edge = v(&[DISKS[0].0 + 1.5 + 0.5, DISKS[0].1]);
        assert!(b.value(&on_edge).is_err());
    }

    #[test]
    fn bounded_barrier_rises_toward_one_approaching_boundary() {
        let b = barrier(0.01);
        // ray from the goal toward the centre of o4, stopping short of its edge
        let xd = v(&[-1.5, 0.0]);
        let c = v(&[DISKS[0].0, DISKS[0].1]);
        let dir = (&c - &xd).normalize();
        let reach = (&c - &xd).norm() - DISKS[0].2;
        let mut last = -1.0;
        for k in 1..=60 {
            let s = reach * (1.0 - 0.5f64.powi(k / 3 + 1)) * (k as f64 / 60.0).sqrt();
            let val = b.bounded(&(&dir * s)).unwrap();
            assert!(val >= last, "not monotone at step {k}");
            assert!(val < 1.0);
            last = val;
        }
        let near = b.bounded(&(&dir * (reach - 1e-6))).unwrap();
        assert!(near > 0.999_999);
    }

    #[test]
    fn bounded_gradient_matches_central_differences() {
        let b = barrier(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xd = v(&[-1.5, 0.0]);
        let mut checked = 0;
        while checked < 100 {
            let e = v(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            if b.clearance(&e) < 0.05 {
                continue;
            }
            let analytic = b.bounded_grad(&e).unwrap();
            let step = 1e-6;
            let mut fd = DVector::zeros(2);
            for i in 0..2 {
                let mut up = e.clone();
                up[i] += step;
                let mut dn = e.clone();
                dn[i] -= step;
                fd[i] = (b.bounded(&up).unwrap() - b.bounded(&dn).unwrap()) / (2.0 * step);
            }
            let scale = analytic.norm().max(1e-3);
            assert!((analytic - &fd).norm() / scale < 1e-5, "at {:?}", (&e + &xd).as_slice());
            checked += 1;
        }
    }

    #[test]
    fn stage_cost_examples() {
        let cost = CostSpec::new(1.0, DMatrix::identity(2, 2) * 2.0, 0.01).unwrap();
        let empty = RecenteredBarrier::empty(v(&[0.0, 0.0]));
        assert_eq!(stage_cost(&cost, &empty, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(stage_cost(&cost, &empty, &v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 3.0);
        let b = barrier(cost.barrier_scale());
        let unscaled = barrier(1.0);
        let e = v(&[0.5, 0.5]);
        assert_relative_eq!(b.value(&e).unwrap(), 0.01 * unscaled.value(&e).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn cost_is_bounded_below_by_input_term() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cost = CostSpec::new(1.0, r, 0.01).unwrap();
        let b = barrier(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let e = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            if b.clearance(&e) <= 0.0 {
                continue;
            }
            let mu = v(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
            let c = stage_cost(&cost, &b, &e, &mu).unwrap();
            assert!(c >= cost.r_min_eig() * mu.norm_squared() - 1e-12);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(CostSpec::new(1.0, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), 1.0).is_err());
        assert!(CostSpec::new(1.0, -DMatrix::<f64>::identity(2, 2), 1.0).is_err());
        assert!(CostSpec::new(0.0, DMatrix::identity(2, 2), 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn extra_allowed_regions_leave_barrier_unchanged(x in -3.0..1.0f64, y in -2.5..2.5f64, cx in 0.8..3.0f64) {
                let e = v(&[x, y]);
                let base = barrier(1.0);
                prop_assume!(base.clearance(&e) > 0.0);
                let extra = RoiSet::new(vec![
                    Roi::disk(obs(0), "o1", v(&[-1.5, 0.0]), 0.5),
                    Roi::disk(obs(1), "o2", v(&[cx, 2.0]), 0.5),
                    Roi::disk(obs(3), "o4", v(&[DISKS[0].0, DISKS[0].1]), DISKS[0].2),
                    Roi::disk(obs(4), "o5", v(&[DISKS[1].0, DISKS[1].1]), DISKS[1].2),
                ])
                .unwrap();
                let with = RecenteredBarrier::new(&extra, &[obs(3), obs(4)].into(), v(&[-1.5, 0.0]), 1.0).unwrap();
                prop_assert_eq!(with.value(&e).unwrap(), base.value(&e).unwrap());
            }

            #[test]
            fn input_cost_dominates_smallest_weight(
                l in prop::array::uniform3(-2.0..2.0f64),
                mu in prop::array::uniform2(-5.0..5.0f64),
                e in prop::array::uniform2(-0.5..0.5f64),
            ) {
                let lower = DMatrix::from_row_slice(2, 2, &[l[0].abs() + 0.1, 0.0, l[1], l[2].abs() + 0.1]);
                let cost = CostSpec::new(1.0, &lower * lower.transpose(), 0.01).unwrap();
                let mu = v(&mu);
                let c = stage_cost(&cost, &barrier(0.01), &v(&e), &mu).unwrap();
                prop_assert!(c >= cost.r_min_eig() * mu.norm_squared() * (1.0 - 1e-12));
            }
        }
    }
}
