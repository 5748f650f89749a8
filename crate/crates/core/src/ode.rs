//! Fixed-step classical Runge-Kutta integration.

use nalgebra::DVector;

/// State that supports `self + h * d`.
pub trait OdeState: Sized {
    fn axpy(&self, h: f64, d: &Self) -> Self;
}

impl OdeState for DVector<f64> {
    fn axpy(&self, h: f64, d: &Self) -> Self {
        self + d * h
    }
}

/// One RK4 step of `ṡ = f(t, s)`.
pub fn rk4_step<S, E>(state: &S, t: f64, dt: f64, mut f: impl FnMut(f64, &S) -> Result<S, E>) -> Result<S, E>
where
    S: OdeState,
{
    let k1 = f(t, state)?;
    let k2 = f(t + 0.5 * dt, &state.axpy(0.5 * dt, &k1))?;
    let k3 = f(t + 0.5 * dt, &state.axpy(0.5 * dt, &k2))?;
    let k4 = f(t + dt, &state.axpy(dt, &k3))?;
    Ok(state.axpy(dt / 6.0, &k1).axpy(dt / 3.0, &k2).axpy(dt / 3.0, &k3).axpy(dt / 6.0, &k4))
}
