//! State-following kernel critic and actor for the current reach-avoid
//! problem, trained on on-policy and extrapolated Bellman errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostSpec, RecenteredBarrier};
use crate::plant::AuxiliarySystem;
use crate::sysid::{max_eigenvalue, min_eigenvalue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdpError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("critic gain lost positive definiteness (min eigenvalue {0:e})")]
    GammaNotSpd(f64),
    #[error("invalid learning parameter: {0}")]
    InvalidParameter(String),
}

/// Kernel family used by critic and actor.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// `σ_i(y) = yᵀ c_i(e)`, `c_i(e) = e + ν(e) d_i` with `d_i` the vertices of
    /// a regular simplex and `ν(e) = a eᵀe / (1 + eᵀe)`.
    Staf { offsets: Vec<DVector<f64>>, a: f64 },
    /// `σ(y) = yᵀy`. Probes sit at a fixed distance `a` from `e`.
    Quadratic { n: usize, a: f64 },
}

/// Unit vectors to the `n + 1` vertices of a regular simplex centred at 0.
pub fn simplex_offsets(n: usize) -> Vec<DVector<f64>> {
    (0..=n)
        .map(|k| {
            // Helmert coordinates of the k-th corner of the standard simplex
            let d = DVector::from_fn(n, |j, _| {
                let j1 = (j + 1) as f64;
                let norm = (j1 * (j1 + 1.0)).sqrt();
                if k <= j {
                    1.0 / norm
                } else if k == j + 1 {
                    -j1 / norm
                } else {
                    0.0
                }
            });
            d.normalize()
        })
        .collect()
}

impl Basis {
    pub fn staf(n: usize, a: f64) -> Self {
        Basis::Staf { offsets: simplex_offsets(n), a }
    }

    pub fn len(&self) -> usize {
        match self {
            Basis::Staf { offsets, .. } => offsets.len(),
            Basis::Quadratic { .. } => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Basis::Staf { offsets, .. } => offsets[0].len(),
            Basis::Quadratic { n, .. } => *n,
        }
    }

    /// Shaping radius `ν(e)`; constant for the quadratic basis.
    pub fn radius(&self, e: &DVector<f64>) -> f64 {
        match self {
            Basis::Staf { a, .. } => {
                let s = e.norm_squared();
                a * s / (1.0 + s)
            }
            Basis::Quadratic { a, .. } => *a,
        }
    }

    pub fn centers(&self, e: &DVector<f64>) -> Vec<DVector<f64>> {
        match self {
            Basis::Staf { offsets, .. } => {
                let nu = self.radius(e);
                offsets.iter().map(|d| e + d * nu).collect()
            }
            Basis::Quadratic { n, .. } => vec![DVector::zeros(*n)],
        }
    }

    pub fn sigma(&self, y: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        match self {
            Basis::Staf { .. } => {
                let c = self.centers(e);
                DVector::from_iterator(c.len(), c.iter().map(|ci| y.dot(ci)))
            }
            Basis::Quadratic { .. } => DVector::from_element(1, y.norm_squared()),
        }
    }

    /// `∇_y σ`, an `L × n` matrix.
    pub fn grad(&self, y: &DVector<f64>, e: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Basis::Staf { .. } => {
                let c = self.centers(e);
                DMatrix::from_fn(c.len(), y.len(), |i, j| c[i][j])
            }
            Basis::Quadratic { .. } => DMatrix::from_fn(1, y.len(), |_, j| 2.0 * y[j]),
        }
    }

    /// Extrapolation points `e_i(e, t)`: `N` probes rotating at `omega` in a
    /// coordinate plane, evenly phased, at radius `ν(e)` from `e`.
    pub fn sample_offpolicy(&self, e: &DVector<f64>, t: f64, count: usize, omega: f64) -> Vec<DVector<f64>> {
        let n = e.len();
        let nu = self.radius(e);
        (0..count)
            .map(|i| {
                let phase = omega * t + std::f64::consts::TAU * i as f64 / count as f64;
                let mut dir = DVector::zeros(n);
                if n == 1 {
                    dir[0] = phase.cos();
                } else {
                    dir[i % n] += phase.cos();
                    dir[(i + 1) % n] += phase.sin();
                }
                e + dir * nu
            })
            .collect()
    }
}

/// Everything that defines the current optimal control problem.
#[derive(Debug, Clone, Copy)]
pub struct Ocp<'a> {
    pub aux: &'a AuxiliarySystem,
    pub barrier: &'a RecenteredBarrier,
    pub cost: &'a CostSpec,
}

/// `V̂(y, e) = Ŵ_cᵀσ(y, c(e)) + B̄(y)`.
pub fn value_hat(
    basis: &Basis,
    barrier: &RecenteredBarrier,
    y: &DVector<f64>,
    e: &DVector<f64>,
    wc: &DVector<f64>,
) -> Result<f64, AdpError> {
    Ok(wc.dot(&basis.sigma(y, e)) + barrier.bounded(y)?)
}

/// `∇_y V̂` as a column vector.
pub fn value_grad(
    basis: &Basis,
    barrier: &RecenteredBarrier,
    y: &DVector<f64>,
    e: &DVector<f64>,
    wc: &DVector<f64>,
) -> Result<DVector<f64>, AdpError> {
    Ok(basis.grad(y, e).tr_mul(wc) + barrier.bounded_grad(y)?)
}

/// `μ̂(y, e) = -½ R⁻¹ G(y)ᵀ (∇σᵀŴ_a + ∇B̄ᵀ)`.
pub fn policy_hat(
    basis: &Basis,
    ocp: Ocp<'_>,
    y: &DVector<f64>,
    e: &DVector<f64>,
    wa: &DVector<f64>,
) -> Result<DVector<f64>, AdpError> {
    let grad_bbar = ocp.barrier.bounded_grad(y)?;
    Ok(policy_from(basis, ocp, y, e, wa, &grad_bbar))
}

fn policy_from(
    basis: &Basis,
    ocp: Ocp<'_>,
    y: &DVector<f64>,
    e: &DVector<f64>,
    wa: &DVector<f64>,
    grad_bbar: &DVector<f64>,
) -> DVector<f64> {
    let g = ocp.aux.input_matrix(y);
    let p = basis.grad(y, e).tr_mul(wa) + grad_bbar;
    -(ocp.cost.r_inv() * g.tr_mul(&p)) * 0.5
}

/// Bellman error and regressor terms at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanSample {
    pub delta: f64,
    pub omega: DVector<f64>,
    pub rho: f64,
    pub mu: DVector<f64>,
    /// `∇σ G R⁻¹ Gᵀ ∇σᵀ`
    pub g_sigma: DMatrix<f64>,
}

impl BellmanSample {
    /// `Λ = ωωᵀ / ρ²`.
    pub fn lambda(&self) -> DMatrix<f64> {
        &self.omega * self.omega.transpose() / (self.rho * self.rho)
    }
}

/// `δ = r(y, μ̂) + ∇V̂ (F̂(y, θ̂) + G(y) μ̂)` with its regressor
/// `ω = ∇σ (F̂ + G μ̂)` and `ρ = 1 + γ₁ ωᵀω`.
#[allow(clippy::too_many_arguments)]
pub fn bellman_error(
    basis: &Basis,
    ocp: Ocp<'_>,
    y: &DVector<f64>,
    e: &DVector<f64>,
    wc: &DVector<f64>,
    wa: &DVector<f64>,
    theta_hat: &DMatrix<f64>,
    gamma1: f64,
) -> Result<BellmanSample, AdpError> {
    let bar = ocp.barrier.evaluate(y)?;
    let grad_bbar = bar.bounded_grad();
    let mu = policy_from(basis, ocp, y, e, wa, &grad_bbar);
    let g = ocp.aux.input_matrix(y);
    let flow = ocp.aux.drift_hat(y, theta_hat) + &g * &mu;
    let gs = basis.grad(y, e);
    let omega = &gs * &flow;
    let r = ocp.cost.state_cost(y) + ocp.cost.input_cost(&mu) + bar.value;
    let delta = r + wc.dot(&omega) + grad_bbar.dot(&flow);
    let gr = &g * ocp.cost.r_inv() * g.transpose();
    let g_sigma = &gs * gr * gs.transpose();
    let rho = 1.0 + gamma1 * omega.norm_squared();
    Ok(BellmanSample { delta, omega, rho, mu, g_sigma })
}

/// Learning gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdpGains {
    pub kc1: f64,
    pub kc2: f64,
    pub ka1: f64,
    pub ka2: f64,
    pub gamma1: f64,
    pub beta: f64,
    /// Forgetting is suspended while `λ_max(Γ)` exceeds this.
    pub gamma_cap: f64,
}

impl AdpGains {
    pub fn validate(&self) -> Result<(), AdpError> {
        let named = [
            ("kc1", self.kc1),
            ("kc2", self.kc2),
            ("ka1", self.ka1),
            ("ka2", self.ka2),
            ("gamma1", self.gamma1),
            ("beta", self.beta),
            ("gamma_cap", self.gamma_cap),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(AdpError::InvalidParameter(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Time derivatives of the learner. The gain is carried as its inverse,
/// which evolves linearly: `d(Γ⁻¹)/dt = k_c1 Λ + (k_c2/N) ΣΛ_i - βΓ⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerRates {
    pub d_wc: DVector<f64>,
    pub d_gamma_inv: DMatrix<f64>,
    pub d_wa: DVector<f64>,
}

pub fn learner_rates(
    gains: &AdpGains,
    gamma: &DMatrix<f64>,
    gamma_inv: &DMatrix<f64>,
    wc: &DVector<f64>,
    wa: &DVector<f64>,
    on: &BellmanSample,
    off: &[BellmanSample],
) -> LearnerRates {
    let l = wc.len();
    let nf = off.len().max(1) as f64;
    let mut wc_dir = &on.omega * (gains.kc1 * on.delta / (on.rho * on.rho));
    let mut info = on.lambda() * gains.kc1;
    let mut coupling = on.g_sigma.tr_mul(wa) * (gains.kc1 * on.omega.dot(wc) / (4.0 * on.rho * on.rho));
    for s in off {
        let r2 = s.rho * s.rho;
        wc_dir += &s.omega * (gains.kc2 * s.delta / (nf * r2));
        info += s.lambda() * (gains.kc2 / nf);
        coupling += s.g_sigma.tr_mul(wa) * (gains.kc2 * s.omega.dot(wc) / (4.0 * nf * r2));
    }
    let forget = if max_eigenvalue(gamma) <= gains.gamma_cap { gains.beta } else { 0.0 };
    let d_gamma_inv = info - gamma_inv * forget;
    let d_wc = -(gamma * wc_dir);
    let d_wa = -(wa - wc) * gains.ka1 - wa * gains.ka2 + coupling;
    debug_assert_eq!(d_wa.len(), l);
    LearnerRates { d_wc, d_gamma_inv, d_wa }
}

/// Critic and actor weights with the critic's least-squares gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub wc: DVector<f64>,
    pub wa: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

impl Learner {
    pub fn new(wc: DVector<f64>, wa: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self, AdpError> {
        if wc.len() != wa.len() || gamma.shape() != (wc.len(), wc.len()) {
            return Err(AdpError::InvalidParameter("weight and gain dimensions disagree".into()));
        }
        let mut l = Self { wc, wa, gamma };
        symmetrize_spd(&mut l.gamma)?;
        Ok(l)
    }

    /// One step of the critic law. The gain is advanced in inverse form and
    /// the weights then use the updated gain.
    pub fn critic_step(
        &mut self,
        gains: &AdpGains,
        on: &BellmanSample,
        off: &[BellmanSample],
        dt: f64,
    ) -> Result<(), AdpError> {
        let gamma_inv = spd_inverse(&self.gamma)?;
        let rates = learner_rates(gains, &self.gamma, &gamma_inv, &self.wc, &self.wa, on, off);
        let mut next_inv = gamma_inv + rates.d_gamma_inv * dt;
        symmetrize_spd(&mut next_inv)?;
        self.gamma = spd_inverse(&next_inv)?;
        symmetrize_spd(&mut self.gamma)?;
        let rates = learner_rates(gains, &self.gamma, &next_inv, &self.wc, &self.wa, on, off);
        self.wc += rates.d_wc * dt;
        Ok(())
    }

    /// One explicit step of the actor law against the current critic.
    pub fn actor_step(&mut self, gains: &AdpGains, on: &BellmanSample, off: &[BellmanSample], dt: f64) {
        let gamma_inv = DMatrix::zeros(self.gamma.nrows(), self.gamma.ncols());
        let rates = learner_rates(gains, &self.gamma, &gamma_inv, &self.wc, &self.wa, on, off);
        self.wa += rates.d_wa * dt;
    }
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, AdpError> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| AdpError::GammaNotSpd(min_eigenvalue(m)))
}

pub(crate) fn symmetrize_spd(m: &mut DMatrix<f64>) -> Result<(), AdpError> {
    let sym = (&*m + m.transpose()) * 0.5;
    *m = sym;
    let lo = min_eigenvalue(m);
    if !(lo > 0.0) {
        return Err(AdpError::GammaNotSpd(lo));
    }
    Ok(())
}

/// Lower excitation levels of the critic regressors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    /// Smallest `λ_min((1/N) ∫_t^{t+T} ΣΛ_i)` over windows.
    pub c1: f64,
    /// Smallest instantaneous `λ_min((1/N) ΣΛ_i)`.
    pub c2: f64,
    /// Smallest `λ_min(∫_t^{t+T} Λ)` over windows.
    pub c3: f64,
    pub windows: usize,
}

/// Records `Λ` and `(1/N) ΣΛ_i` along a run.
#[derive(Debug, Clone, Default)]
pub struct ExcitationMonitor {
    times: Vec<f64>,
    on: Vec<DMatrix<f64>>,
    off: Vec<DMatrix<f64>>,
}

impl ExcitationMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn record(&mut self, t: f64, on: &BellmanSample, off: &[BellmanSample]) {
        let l = on.omega.len();
        let mut avg = DMatrix::zeros(l, l);
        for s in off {
            avg += s.lambda();
        }
        if !off.is_empty() {
            avg /= off.len() as f64;
        }
        self.record_matrices(t, on.lambda(), avg);
    }

    pub fn record_matrices(&mut self, t: f64, on: DMatrix<f64>, off_mean: DMatrix<f64>) {
        self.times.push(t);
        self.on.push(on);
        self.off.push(off_mean);
    }

    /// Sliding windows of length `window` starting at every sample. When the
    /// record is shorter than one window the whole record is used.
    pub fn report(&self, window: f64) -> Option<ExcitationReport> {
        let n = self.times.len();
        if n < 2 {
            return None;
        }
        let l = self.on[0].nrows();
        let prefix = |mats: &[DMatrix<f64>]| {
            let mut acc = vec![DMatrix::zeros(l, l)];
            for k in 1..n {
                let h = 0.5 * (self.times[k] - self.times[k - 1]);
                let next = &acc[k - 1] + (&mats[k] + &mats[k - 1]) * h;
                acc.push(next);
            }
            acc
        };
        let on_int = prefix(&self.on);
        let off_int = prefix(&self.off);
        let c2 = self.off.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min).max(0.0);
        let mut c1 = f64::INFINITY;
        let mut c3 = f64::INFINITY;
        let mut windows = 0;
        let mut end = 0;
        for start in 0..n {
            while end < n && self.times[end] - self.times[start] < window - 1e-12 {
                end += 1;
            }
            if end >= n {
                if windows > 0 {
                    break;
                }
                end = n - 1;
            }
            c1 = c1.min(min_eigenvalue(&(&off_int[end] - &off_int[start])));
            c3 = c3.min(min_eigenvalue(&(&on_int[end] - &on_int[start])));
            windows += 1;
            if end == n - 1 && self.times[end] - self.times[start] < window - 1e-12 {
                break;
            }
        }
        Some(ExcitationReport { c1: c1.max(0.0), c2, c3: c3.max(0.0), windows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{ControlAffinePlant, PlantModel};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    struct Lqr {
        aux: AuxiliarySystem,
        barrier: RecenteredBarrier,
        cost: CostSpec,
        theta: DMatrix<f64>,
        a: f64,
        b: f64,
        q: f64,
        r: f64,
    }

    impl Lqr {
        fn new(a: f64, b: f64, q: f64, r: f64) -> Self {
            let plant = ControlAffinePlant::new(PlantModel::Linear1d { a, b }).unwrap();
            let theta = plant.ground_truth().theta();
            Self {
                aux: AuxiliarySystem::at_goal(&plant, v(&[0.0])).unwrap(),
                barrier: RecenteredBarrier::empty(v(&[0.0])),
                cost: CostSpec::new(q, DMatrix::from_element(1, 1, r), 0.0).unwrap(),
                theta,
                a,
                b,
                q,
                r,
            }
        }

        fn ocp(&self) -> Ocp<'_> {
            Ocp { aux: &self.aux, barrier: &self.barrier, cost: &self.cost }
        }

        /// Positive root of `q + 2ap - b²p²/r = 0`.
        fn riccati(&self) -> f64 {
            self.r * (self.a + (self.a * self.a + self.b * self.b * self.q / self.r).sqrt()) / (self.b * self.b)
        }
    }

    #[test]
    fn simplex_offsets_are_regular() {
        for n in 1..=4 {
            let d = simplex_offsets(n);
            assert_eq!(d.len(), n + 1);
            let sum = d.iter().fold(DVector::zeros(n), |acc, x| acc + x);
            assert!(sum.norm() < 1e-12);
            for i in 0..=n {
                assert_relative_eq!(d[i].norm(), 1.0, epsilon = 1e-12);
                for j in 0..i {
                    assert_relative_eq!(d[i].dot(&d[j]), -1.0 / n as f64, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn staf_centres_and_gradient() {
        let basis = Basis::staf(2, 0.7);
        let e = v(&[0.3, -0.4]);
        let c = basis.centers(&e);
        assert_relative_eq!(basis.radius(&e), 0.7 * 0.25 / 1.25, epsilon = 1e-15);
        for i in 0..3 {
            for j in 0..i {
                assert!((&c[i] - &c[j]).norm() > 1e-3);
            }
        }
        assert_eq!(basis.radius(&v(&[0.0, 0.0])), 0.0);
        let y = v(&[1.0, 2.0]);
        let h = 1e-6;
        let g = basis.grad(&y, &e);
        for j in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            let fd = (basis.sigma(&yp, &e) - basis.sigma(&ym, &e)) / (2.0 * h);
            for i in 0..3 {
                assert_relative_eq!(g[(i, j)], fd[i], epsilon = 1e-8);
                assert_relative_eq!(g[(i, j)], c[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn value_examples() {
        let basis = Basis::staf(2, 0.7);
        let b = RecenteredBarrier::empty(v(&[0.0, 0.0]));
        let e = v(&[0.5, 0.5]);
        assert_eq!(value_hat(&basis, &b, &e, &e, &DVector::zeros(3)).unwrap(), 0.0);
        let w = DVector::from_element(3, 4.0);
        let s = basis.sigma(&e, &e).sum();
        assert_relative_eq!(value_hat(&basis, &b, &e, &e, &w).unwrap(), 4.0 * s, epsilon = 1e-14);

        let lqr = Lqr::new(-1.0, 1.0, 1.0, 1.0);
        let quad = Basis::Quadratic { n: 1, a: 0.5 };
        let p = lqr.riccati();
        let y = v(&[0.8]);
        assert_relative_eq!(value_hat(&quad, &lqr.barrier, &y, &y, &v(&[p])).unwrap(), p * 0.64, epsilon = 1e-14);
    }

    #[test]
    fn initial_weights_give_proportional_feedback() {
        let plant = ControlAffinePlant::new(PlantModel::Benchmark2d).unwrap();
        let aux = AuxiliarySystem::at_goal(&plant, v(&[0.0, 0.0])).unwrap();
        let barrier = RecenteredBarrier::empty(v(&[0.0, 0.0]));
        let cost = CostSpec::new(1.0, DMatrix::identity(2, 2) * 2.0, 0.01).unwrap();
        let ocp = Ocp { aux: &aux, barrier: &barrier, cost: &cost };
        let basis = Basis::staf(2, 0.7);
        let e = v(&[-0.4, 0.9]);
        let mu = policy_hat(&basis, ocp, &e, &e, &DVector::from_element(3, 4.0)).unwrap();
        let expected = -(aux.input_matrix(&e).transpose() * &e) * 3.0;
        assert_relative_eq!(mu, expected, epsilon = 1e-12);
        assert_eq!(policy_hat(&basis, ocp, &e, &e, &DVector::zeros(3)).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn lqr_policy_and_residual() {
        let lqr = Lqr::new(0.5, 2.0, 3.0, 0.7);
        let quad = Basis::Quadratic { n: 1, a: 0.5 };
        let p = lqr.riccati();
        let w = v(&[p]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let y = v(&[rng.gen_range(-3.0..3.0)]);
            let mu = policy_hat(&quad, lqr.ocp(), &y, &y, &w).unwrap();
            assert_relative_eq!(mu[0], -lqr.b * p / lqr.r * y[0], epsilon = 1e-12);
            let s = bellman_error(&quad, lqr.ocp(), &y, &y, &w, &w, &lqr.theta, 1.0).unwrap();
            assert!(s.delta.abs() < 1e-8, "{}", s.delta);
        }
    }

    #[test]
    fn bellman_error_at_origin_is_input_cost() {
        let lqr = Lqr::new(-1.0, 1.0, 1.0, 2.0);
        let quad = Basis::Quadratic { n: 1, a: 0.5 };
        let z = v(&[0.0]);
        let s = bellman_error(&quad, lqr.ocp(), &z, &z, &v(&[1.0]), &v(&[3.0]), &lqr.theta, 1.0).unwrap();
        assert_relative_eq!(s.delta, lqr.cost.input_cost(&s.mu), epsilon = 1e-15);
        assert!(s.delta >= 0.0);
    }

    #[test]
    fn bellman_error_matches_independent_assembly() {
        use crate::cost::stage_cost;
        use crate::plant::{Roi, RoiSet};
        use crate::scltl::ObservationId;
        use std::collections::BTreeSet;

        let plant = ControlAffinePlant::new(PlantModel::Benchmark2d).unwrap();
        let rois = RoiSet::new(vec![
            Roi::disk(ObservationId(0), "o1", v(&[-1.5, 0.0]), 0.5),
            Roi::disk(ObservationId(3), "o4", v(&[-2.6, 0.9]), 0.5),
        ])
        .unwrap();
        let aux = crate::plant::retarget(&plant, &rois, ObservationId(0)).unwrap();
        let forbidden: BTreeSet<_> = [ObservationId(3)].into();
        let barrier = RecenteredBarrier::new(&rois, &forbidden, aux.goal().clone(), 0.01).unwrap();
        let cost = CostSpec::new(1.0, DMatrix::identity(2, 2) * 2.0, 0.01).unwrap();
        let ocp = Ocp { aux: &aux, barrier: &barrier, cost: &cost };
        let basis = Basis::staf(2, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-2.0..2.0));
        let wc = v(&[1.0, 3.0, -0.5]);
        let wa = v(&[2.0, 0.5, 4.0]);
        let mut checked = 0;
        while checked < 50 {
            let e = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            if barrier.clearance(&e) < 0.05 {
                continue;
            }
            let y = basis.sample_offpolicy(&e, rng.gen_range(0.0..1.0), 1, 10.0 * std::f64::consts::PI).remove(0);
            if barrier.clearance(&y) < 0.05 {
                continue;
            }
            let s = bellman_error(&basis, ocp, &y, &e, &wc, &wa, &theta, 1.0).unwrap();
            let mu = policy_hat(&basis, ocp, &y, &e, &wa).unwrap();
            let r = stage_cost(&cost, &barrier, &y, &mu).unwrap();
            let flow = aux.drift_hat(&y, &theta) + aux.input_matrix(&y) * &mu;
            let dv = value_grad(&basis, &barrier, &y, &e, &wc).unwrap();
            let delta = r + dv.dot(&flow);
            assert!((s.delta - delta).abs() <= 1e-12 * delta.abs().max(1.0), "{} vs {}", s.delta, delta);
            let eig = s.g_sigma.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() > -1e-10);
            assert!((&s.g_sigma - s.g_sigma.transpose()).amax() < 1e-12);
            checked += 1;
        }
    }

    #[test]
    fn probes() {
        let basis = Basis::staf(2, 0.7);
        let z = v(&[0.0, 0.0]);
        assert_eq!(basis.sample_offpolicy(&z, 0.3, 1, 5.0)[0], z);
        let e = v(&[0.5, -1.0]);
        let w = 10.0 * std::f64::consts::PI;
        let p0 = basis.sample_offpolicy(&e, 0.37, 1, w).remove(0);
        let p1 = basis.sample_offpolicy(&e, 0.37 + std::f64::consts::PI / w, 1, w).remove(0);
        assert_relative_eq!((&p0 - &e), -(&p1 - &e), epsilon = 1e-12);
        assert_relative_eq!((&p0 - &e).norm(), basis.radius(&e), epsilon = 1e-12);
        let three = basis.sample_offpolicy(&e, 0.1, 3, w);
        assert_eq!(three.len(), 3);
    }

    fn gains() -> AdpGains {
        AdpGains { kc1: 0.001, kc2: 0.25, ka1: 1.2, ka2: 0.01, gamma1: 1.0, beta: 0.003, gamma_cap: 15.0 }
    }

    fn sample(omega: DVector<f64>, delta: f64) -> BellmanSample {
        let l = omega.len();
        BellmanSample {
            rho: 1.0 + omega.norm_squared(),
            delta,
            omega,
            mu: DVector::zeros(1),
            g_sigma: DMatrix::zeros(l, l),
        }
    }

    #[test]
    fn zero_error_only_forgets() {
        let mut learner = Learner::new(v(&[1.0, 2.0]), v(&[1.0, 2.0]), DMatrix::identity(2, 2) * 5.0).unwrap();
        let on = sample(DVector::zeros(2), 0.0);
        learner.critic_step(&gains(), &on, std::slice::from_ref(&on), 0.01).unwrap();
        assert_eq!(learner.wc, v(&[1.0, 2.0]));
        assert!(max_eigenvalue(&learner.gamma) > 5.0);
        let g = AdpGains { ka2: 0.0, ..gains() };
        learner.actor_step(&g, &on, std::slice::from_ref(&on), 0.01);
        assert_eq!(learner.wa, v(&[1.0, 2.0]));
    }

    #[test]
    fn gain_stays_symmetric_in_corridor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut learner =
            Learner::new(DVector::from_element(3, 4.0), DVector::from_element(3, 4.0), DMatrix::identity(3, 3) * 15.0)
                .unwrap();
        let g = gains();
        for k in 0..5000 {
            let t = k as f64 * 0.001;
            let on = sample(DVector::from_fn(3, |i, _| (t * (i + 1) as f64).sin()), rng.gen_range(-1.0..1.0));
            let off = sample(DVector::from_fn(3, |i, _| (31.4 * t + i as f64).cos()), rng.gen_range(-1.0..1.0));
            learner.critic_step(&g, &on, &[off], 0.001).unwrap();
            let asym = (&learner.gamma - learner.gamma.transpose()).amax();
            assert!(asym <= 1e-12);
            assert!(min_eigenvalue(&learner.gamma) > 0.0);
            assert!(max_eigenvalue(&learner.gamma) <= 15.0 * (1.0 + 1e-5));
        }
    }

    #[test]
    fn actor_tracks_frozen_critic() {
        let mut learner = Learner::new(v(&[1.0, -2.0, 0.5]), v(&[5.0, 5.0, 5.0]), DMatrix::identity(3, 3)).unwrap();
        let g = AdpGains { ka1: 50.0, ..gains() };
        let on = sample(DVector::zeros(3), 0.0);
        let mut gap = (&learner.wa - &learner.wc).norm();
        for _ in 0..200 {
            learner.actor_step(&g, &on, &[], 0.001);
            let next = (&learner.wa - &learner.wc).norm();
            assert!(next < gap);
            gap = next;
        }
    }

    #[test]
    fn lqr_critic_converges_to_riccati() {
        let lqr = Lqr::new(-1.0, 1.0, 1.0, 1.0);
        let quad = Basis::Quadratic { n: 1, a: 0.7 };
        let p = lqr.riccati();
        let g = AdpGains { kc1: 0.5, kc2: 5.0, ka1: 5.0, ka2: 0.0, gamma1: 1.0, beta: 0.1, gamma_cap: 10.0 };
        let mut learner = Learner::new(v(&[0.1]), v(&[0.1]), DMatrix::identity(1, 1) * 10.0).unwrap();
        let w = 10.0 * std::f64::consts::PI;
        let mut e = v(&[1.0]);
        let dt = 0.001;
        for k in 0..20000 {
            let t = k as f64 * dt;
            let on = bellman_error(&quad, lqr.ocp(), &e, &e, &learner.wc, &learner.wa, &lqr.theta, g.gamma1).unwrap();
            let off: Vec<_> = quad
                .sample_offpolicy(&e, t, 1, w)
                .iter()
                .map(|y| {
                    bellman_error(&quad, lqr.ocp(), y, &e, &learner.wc, &learner.wa, &lqr.theta, g.gamma1).unwrap()
                })
                .collect();
            learner.critic_step(&g, &on, &off, dt).unwrap();
            learner.actor_step(&g, &on, &off, dt);
            e += (lqr.aux.drift_hat(&e, &lqr.theta) + lqr.aux.input_matrix(&e) * &on.mu) * dt;
        }
        assert!((learner.wc[0] - p).abs() < 0.02 * p, "{} vs {}", learner.wc[0], p);
    }

    #[test]
    fn excitation_monitor_cases() {
        let mut zero = ExcitationMonitor::new();
        for k in 0..100 {
            zero.record_matrices(k as f64 * 0.01, DMatrix::zeros(2, 2), DMatrix::zeros(2, 2));
        }
        let r = zero.report(0.5).unwrap();
        assert_eq!((r.c1, r.c2, r.c3), (0.0, 0.0, 0.0));

        // rotating regressor excites both directions over a window
        let mut rot = ExcitationMonitor::new();
        let mut fixed = ExcitationMonitor::new();
        for k in 0..1000 {
            let t = k as f64 * 0.001;
            let w = v(&[(10.0 * t).cos(), (10.0 * t).sin()]);
            rot.record_matrices(t, DMatrix::zeros(2, 2), &w * w.transpose());
            let s = v(&[1.0, 0.5]);
            fixed.record_matrices(t, DMatrix::zeros(2, 2), &s * s.transpose());
        }
        let r = rot.report(0.5).unwrap();
        assert!(r.c1 > 0.05, "{r:?}");
        assert!(r.c2 < 1e-9);
        assert!(fixed.report(0.5).unwrap().c1 < 1e-9);
        assert!(ExcitationMonitor::new().report(1.0).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn gain_corridor_holds_for_any_regressors(
                omegas in prop::collection::vec((prop::array::uniform3(-20.0..20.0f64), -5.0..5.0f64), 1..200),
                kc2 in 0.0..5.0f64,
                beta in 0.0..2.0f64,
            ) {
                let g = AdpGains { kc2, beta, ..gains() };
                let dt = 0.001;
                let mut learner = Learner::new(DVector::from_element(3, 4.0), DVector::from_element(3, 4.0), DMatrix::identity(3, 3) * 15.0).unwrap();
                for (w, d) in &omegas {
                    let on = sample(v(w), *d);
                    let off = sample(v(&[w[2], w[0], -w[1]]), -d);
                    learner.critic_step(&g, &on, &[off], dt).unwrap();
                    prop_assert!(min_eigenvalue(&learner.gamma) > 0.0);
                    prop_assert!(max_eigenvalue(&learner.gamma) <= 15.0 / (1.0 - beta * dt) * (1.0 + 1e-9));
                    prop_assert!(learner.wc.iter().all(|x| x.is_finite()));
                }
            }
        }
    }
}
