//! Integral concurrent learning of the drift weights from a history stack of
//! windowed input/output integrals.

use std::convert::Infallible;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ode::rk4_step;
use crate::plant::ControlAffinePlant;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SysIdError {
    #[error("window spans {span} s but {window} s are required")]
    WindowTooShort { span: f64, window: f64 },
    #[error("gain matrix lost positive definiteness (min eigenvalue {0:e})")]
    GammaNotSpd(f64),
    #[error("malformed stack record on line {0}")]
    BadRecord(usize),
    #[error("invalid identification parameter: {0}")]
    InvalidParameter(String),
}

/// One recorded window: `∫Y(x)dτ`, `∫g(x)u dτ` and the state increment.
#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry {
    pub y_int: DVector<f64>,
    pub u_int: DVector<f64>,
    pub dx: DVector<f64>,
    pub t: f64,
}

/// A state sample used to build stack entries.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub t: f64,
    pub x: DVector<f64>,
    /// `Y(x)`
    pub y: DVector<f64>,
    /// `g(x) u`
    pub gu: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct HistoryStack {
    capacity: usize,
    window: f64,
    entries: Vec<StackEntry>,
}

impl HistoryStack {
    pub fn new(capacity: usize, window: f64) -> Result<Self, SysIdError> {
        if capacity == 0 {
            return Err(SysIdError::InvalidParameter("stack capacity must be positive".into()));
        }
        if !(window > 0.0) {
            return Err(SysIdError::InvalidParameter("integration window must be positive".into()));
        }
        Ok(Self { capacity, window, entries: Vec::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// `Σ 𝒴_i 𝒴_iᵀ`, or `None` when empty.
    pub fn gram(&self) -> Option<DMatrix<f64>> {
        let first = self.entries.first()?;
        let p = first.y_int.len();
        let mut g = DMatrix::zeros(p, p);
        for e in &self.entries {
            g.ger(1.0, &e.y_int, &e.y_int, 1.0);
        }
        Some(g)
    }

    /// Smallest eigenvalue of the stack Gram matrix; zero when empty.
    pub fn excitation_level(&self) -> f64 {
        self.gram().map_or(0.0, |g| min_eigenvalue(&g).max(0.0))
    }

    /// Integrates a window of samples with the trapezoidal rule and offers the
    /// result to the stack. Returns whether it was stored.
    pub fn accumulate(&mut self, samples: &[WindowSample]) -> Result<bool, SysIdError> {
        let (first, last) = match (samples.first(), samples.last()) {
            (Some(f), Some(l)) if samples.len() >= 2 => (f, l),
            _ => return Err(SysIdError::WindowTooShort { span: 0.0, window: self.window }),
        };
        let span = last.t - first.t;
        // windows that start at t = 0 are allowed to be shorter
        if span + 1e-9 < self.window && first.t > 0.0 {
            return Err(SysIdError::WindowTooShort { span, window: self.window });
        }
        let mut y_int = DVector::zeros(first.y.len());
        let mut u_int = DVector::zeros(first.gu.len());
        for pair in samples.windows(2) {
            let h = 0.5 * (pair[1].t - pair[0].t);
            y_int += (&pair[0].y + &pair[1].y) * h;
            u_int += (&pair[0].gu + &pair[1].gu) * h;
        }
        Ok(self.offer(StackEntry { y_int, u_int, dx: &last.x - &first.x, t: last.t }))
    }

    /// Appends while there is room. Once full, replaces the entry whose swap
    /// gives the largest minimum eigenvalue, only if that strictly improves it.
    pub fn offer(&mut self, entry: StackEntry) -> bool {
        if !self.is_full() {
            self.entries.push(entry);
            return true;
        }
        let gram = self.gram().expect("full stack is non-empty");
        let current = min_eigenvalue(&gram);
        let mut best: Option<(usize, f64)> = None;
        for (i, old) in self.entries.iter().enumerate() {
            let mut g = gram.clone();
            g.ger(-1.0, &old.y_int, &old.y_int, 1.0);
            g.ger(1.0, &entry.y_int, &entry.y_int, 1.0);
            let lam = min_eigenvalue(&g);
            if best.is_none_or(|(_, b)| lam > b) {
                best = Some((i, lam));
            }
        }
        match best {
            Some((i, lam)) if lam > current * (1.0 + 1e-12) + 1e-300 => {
                self.entries[i] = entry;
                true
            }
            _ => false,
        }
    }

    /// Line-delimited numeric dump: a `# p1 n` header, then
    /// `t y_int.. u_int.. dx..` per entry.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let (p, n) = self.entries.first().map_or((0, 0), |e| (e.y_int.len(), e.dx.len()));
        let _ = writeln!(out, "# {p} {n} {} {}", self.capacity, self.window);
        for e in &self.entries {
            let mut fields = vec![e.t];
            fields.extend(e.y_int.iter());
            fields.extend(e.u_int.iter());
            fields.extend(e.dx.iter());
            let line: Vec<String> = fields.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_records(text: &str) -> Result<Self, SysIdError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(SysIdError::BadRecord(1))?;
        let head: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
        if head.len() != 4 {
            return Err(SysIdError::BadRecord(1));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| SysIdError::BadRecord(1));
        let p = parse_usize(head[0])?;
        let n = parse_usize(head[1])?;
        let capacity = parse_usize(head[2])?;
        let window: f64 = head[3].parse().map_err(|_| SysIdError::BadRecord(1))?;
        let mut stack = HistoryStack::new(capacity, window)?;
        for (idx, line) in lines {
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|_| SysIdError::BadRecord(idx + 1))?;
            if vals.len() != 1 + p + 2 * n || stack.is_full() {
                return Err(SysIdError::BadRecord(idx + 1));
            }
            stack.entries.push(StackEntry {
                t: vals[0],
                y_int: DVector::from_column_slice(&vals[1..1 + p]),
                u_int: DVector::from_column_slice(&vals[1 + p..1 + p + n]),
                dx: DVector::from_column_slice(&vals[1 + p + n..]),
            });
        }
        Ok(stack)
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub(crate) fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.max()
}

/// Gains of the identification law.
#[derive(Debug, Clone, PartialEq)]
pub struct IclGains {
    pub k_theta: f64,
    pub beta_theta: f64,
    /// Forgetting is suspended while `λ_max(Γ_θ)` exceeds this.
    pub gamma_cap: f64,
    /// Radius of the Frobenius ball the estimate is projected onto.
    pub theta_max: f64,
}

/// Estimate `θ̂` with its least-squares gain `Γ_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimator {
    pub theta_hat: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub gains: IclGains,
}

/// Rates of `θ̂` and `Γ_θ` under the integral concurrent learning law.
pub fn icl_rates(
    gains: &IclGains,
    theta_hat: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    stack: &HistoryStack,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, n) = theta_hat.shape();
    let mut corr = DMatrix::zeros(p, n);
    let mut gram = DMatrix::zeros(p, p);
    for e in stack.entries() {
        let residual = &e.dx - &e.u_int - theta_hat.tr_mul(&e.y_int);
        corr.ger(1.0, &e.y_int, &residual, 1.0);
        gram.ger(1.0, &e.y_int, &e.y_int, 1.0);
    }
    let d_theta = gamma * corr * gains.k_theta;
    let forget = if max_eigenvalue(gamma) <= gains.gamma_cap { gains.beta_theta } else { 0.0 };
    let d_gamma = gamma * forget - gamma * gram * gamma * gains.k_theta;
    (d_theta, d_gamma)
}

/// Radially rescales `theta` onto the Frobenius ball of radius `max`.
pub fn project(theta: &mut DMatrix<f64>, max: f64) {
    let norm = theta.norm();
    if norm > max {
        *theta *= max / norm;
    }
}

/// Restores exact symmetry and checks positive definiteness.
pub(crate) fn symmetrize_spd(m: &mut DMatrix<f64>) -> Result<(), SysIdError> {
    let sym = (&*m + m.transpose()) * 0.5;
    *m = sym;
    let lo = min_eigenvalue(m);
    if !(lo > 0.0) {
        return Err(SysIdError::GammaNotSpd(lo));
    }
    Ok(())
}

impl ThetaEstimator {
    pub fn new(theta_hat: DMatrix<f64>, gamma: DMatrix<f64>, gains: IclGains) -> Result<Self, SysIdError> {
        let mut est = Self { theta_hat, gamma, gains };
        symmetrize_spd(&mut est.gamma)?;
        project(&mut est.theta_hat, est.gains.theta_max);
        Ok(est)
    }

    /// One step of both laws. `Γ_θ` is advanced in information form and
    /// `θ̂` then uses the updated gain.
    pub fn icl_step(&mut self, stack: &HistoryStack, dt: f64) -> Result<(), SysIdError> {
        let info = spd_inverse(&self.gamma)?;
        let (_, d_info) = icl_info_rates(&self.gains, &self.theta_hat, &self.gamma, &info, stack);
        let mut info = info + d_info * dt;
        symmetrize_spd(&mut info)?;
        self.gamma = spd_inverse(&info)?;
        symmetrize_spd(&mut self.gamma)?;
        let (d_theta, _) = icl_info_rates(&self.gains, &self.theta_hat, &self.gamma, &info, stack);
        self.theta_hat += d_theta * dt;
        project(&mut self.theta_hat, self.gains.theta_max);
        Ok(())
    }
}

/// Rates of `θ̂` and of `Γ_θ⁻¹`, which obeys the linear law
/// `d(Γ_θ⁻¹)/dt = k_θ Σ𝒴𝒴ᵀ - β_θ Γ_θ⁻¹`.
pub fn icl_info_rates(
    gains: &IclGains,
    theta_hat: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    gamma_inv: &DMatrix<f64>,
    stack: &HistoryStack,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, n) = theta_hat.shape();
    let mut corr = DMatrix::zeros(p, n);
    let mut gram = DMatrix::zeros(p, p);
    for e in stack.entries() {
        let residual = &e.dx - &e.u_int - theta_hat.tr_mul(&e.y_int);
        corr.ger(1.0, &e.y_int, &residual, 1.0);
        gram.ger(1.0, &e.y_int, &e.y_int, 1.0);
    }
    let forget = if max_eigenvalue(gamma) <= gains.gamma_cap { gains.beta_theta } else { 0.0 };
    (gamma * corr * gains.k_theta, gram * gains.k_theta - gamma_inv * forget)
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, SysIdError> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| SysIdError::GammaNotSpd(min_eigenvalue(m)))
}

/// Draws an initial estimate with entries uniform in `[-range, range]`.
pub fn random_theta(p1: usize, n: usize, range: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(p1, n, |_, _| rng.gen_range(-range..range))
}

/// Records a history stack from independent excitation experiments on the
/// plant: random initial states in `[-spread, spread]ⁿ`, sum-of-sines inputs,
/// one integration window each. Four times `capacity` candidates are offered.
pub fn record_prepopulated_stack(
    plant: &ControlAffinePlant,
    capacity: usize,
    window: f64,
    dt: f64,
    spread: f64,
    seed: u64,
) -> Result<HistoryStack, SysIdError> {
    let mut stack = HistoryStack::new(capacity, window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = plant.state_dim();
    let m = plant.input_dim();
    let steps = (window / dt).round().max(1.0) as usize;
    let h = window / steps as f64;
    let truth = plant.ground_truth();
    for _ in 0..4 * capacity {
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-spread..spread));
        let amp: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let freq: Vec<f64> = (0..m).map(|_| rng.gen_range(1.0..10.0)).collect();
        let phase: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let input = |t: f64| DVector::from_fn(m, |j, _| amp[j] * (freq[j] * t + phase[j]).sin());
        let rhs = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>, Infallible> {
            Ok(truth.drift(x) + plant.input_matrix(x) * input(t))
        };
        let sample = |t: f64, x: &DVector<f64>| WindowSample {
            t,
            y: plant.basis(x),
            gu: plant.input_matrix(x) * input(t),
            x: x.clone(),
        };
        let mut x = x0;
        let mut samples = Vec::with_capacity(steps + 1);
        samples.push(sample(window, &x));
        for k in 0..steps {
            let t = window + k as f64 * h;
            x = rk4_step(&x, t, h, rhs).expect("infallible");
            samples.push(sample(t + h, &x));
        }
        stack.accumulate(&samples)?;
    }
    Ok(stack)
}
