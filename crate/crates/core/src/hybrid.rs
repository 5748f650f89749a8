//! The hybrid closed loop: plant flow with online identification and
//! learning, automaton jumps when the target region is reached, and offline
//! monitors over the resulting log.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adp::{
    self, bellman_error, learner_rates, value_hat, AdpError, BellmanSample, ExcitationMonitor, ExcitationReport, Ocp,
};
use crate::automaton::{
    compile, compute_dta, select_target, AutomatonError, DtaTable, Fsa, SelectionContext, StateId, Target,
};
use crate::cost::{CostError, RecenteredBarrier};
use crate::ode::{rk4_step, OdeState};
use crate::plant::{retarget, AuxiliarySystem, PlantError, RoiSet};
use crate::scenario::{Resolved, Scenario, ScenarioError};
use crate::scltl::{parse_formula, Formula, ObservationId};
use crate::sysid::{
    self, icl_info_rates, max_eigenvalue, min_eigenvalue, project, random_theta, record_prepopulated_stack,
    HistoryStack, SysIdError, WindowSample,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Adp(#[from] AdpError),
    #[error(transparent)]
    SysId(#[from] SysIdError),
    #[error("state became non-finite at t = {t} ({what})")]
    NumericalBlowup { t: f64, what: String },
    #[error("more than {0} jumps")]
    TooManyJumps(usize),
}

/// A scenario with its compiled automaton.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub resolved: Resolved,
    pub formula: Formula,
    pub fsa: Fsa,
    pub dta: DtaTable,
}

impl Setup {
    pub fn new(scenario: &Scenario) -> Result<Self, EngineError> {
        let resolved = scenario.resolve()?;
        let text = scenario.formula.as_deref().unwrap_or_default();
        let formula = parse_formula(text, &resolved.alphabet)
            .map_err(|e| ScenarioError::Validation { field: "formula".into(), reason: e.to_string() })?;
        let fsa = compile(&formula, &resolved.alphabet)?;
        let dta = compute_dta(&fsa);
        Ok(Self { scenario: scenario.clone(), resolved, formula, fsa, dta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub j: usize,
    pub x: Vec<f64>,
    pub s: usize,
    /// Current target observation; `None` once accepted.
    pub target: Option<String>,
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    pub delta: f64,
    pub vhat: f64,
    pub e_norm: f64,
    pub theta_err: f64,
    pub theta_hat: Vec<f64>,
    pub wc: Vec<f64>,
    pub wa: Vec<f64>,
    pub w_gap: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_theta_min: f64,
    pub gamma_theta_max: f64,
    pub stack_excitation: f64,
    /// Smallest `-h_o(x)` over regions forbidden at `s`.
    pub clearance: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    /// Jump count after the jump.
    pub j: usize,
    pub from: usize,
    pub to: usize,
    pub consumed: String,
    pub next: Option<String>,
    pub vd_before: u32,
    pub vd_after: u32,
    pub vhat_before: f64,
    pub vhat_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: String,
    pub config_hash: String,
    pub scenario: Scenario,
    pub alphabet: Vec<String>,
    pub initial_state: usize,
    pub accepting_states: Vec<usize>,
    pub theta_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub samples: Vec<Sample>,
    pub jumps: Vec<JumpRecord>,
    /// Excitation before acceptance.
    pub excitation: Option<ExcitationReport>,
    /// Excitation over the whole run, for information.
    pub excitation_full: Option<ExcitationReport>,
}

impl TrajectoryLog {
    /// The observations consumed at jumps, in order.
    pub fn word(&self) -> Vec<String> {
        self.jumps.iter().map(|j| j.consumed.clone()).collect()
    }
}

#[derive(Debug, Clone)]
struct FlowState {
    x: DVector<f64>,
    theta: DMatrix<f64>,
    theta_info: DMatrix<f64>,
    wc: DVector<f64>,
    critic_info: DMatrix<f64>,
    wa: DVector<f64>,
}

impl OdeState for FlowState {
    fn axpy(&self, h: f64, d: &Self) -> Self {
        Self {
            x: &self.x + &d.x * h,
            theta: &self.theta + &d.theta * h,
            theta_info: &self.theta_info + &d.theta_info * h,
            wc: &self.wc + &d.wc * h,
            critic_info: &self.critic_info + &d.critic_info * h,
            wa: &self.wa + &d.wa * h,
        }
    }
}

impl FlowState {
    fn all_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.theta.iter().all(|v| v.is_finite())
            && self.theta_info.iter().all(|v| v.is_finite())
            && self.wc.iter().all(|v| v.is_finite())
            && self.critic_info.iter().all(|v| v.is_finite())
            && self.wa.iter().all(|v| v.is_finite())
    }
}

/// Discrete part of the hybrid state with the problem it induces.
#[derive(Debug, Clone)]
struct Mode {
    s: StateId,
    target: Target,
    aux: AuxiliarySystem,
    barrier: RecenteredBarrier,
    consumed: usize,
}

/// Optional inputs to a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the configured initial history stack.
    pub initial_stack: Option<HistoryStack>,
}

/// Result of a run: the log and the final history stack.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub stack: HistoryStack,
}

struct Engine<'a> {
    setup: &'a Setup,
    truth_theta: DMatrix<f64>,
    stack: HistoryStack,
}

impl Engine<'_> {
    fn r(&self) -> &Resolved {
        &self.setup.resolved
    }

    fn ocp<'m>(&'m self, mode: &'m Mode) -> Ocp<'m> {
        Ocp { aux: &mode.aux, barrier: &mode.barrier, cost: &self.setup.resolved.cost }
    }

    fn gamma_of(info: &DMatrix<f64>) -> Result<DMatrix<f64>, EngineError> {
        Ok(adp::spd_inverse(info)?)
    }

    fn probes(&self, mode: &Mode, e: &DVector<f64>, t: f64, st: &FlowState) -> Result<Vec<BellmanSample>, EngineError> {
        let cfg = &self.setup.scenario.adp;
        let mut out = Vec::with_capacity(cfg.n);
        for y in self.r().basis.sample_offpolicy(e, t, cfg.n, cfg.omega_probe) {
            // probes that fall in a forbidden region are skipped
            if mode.barrier.clearance(&y) <= 0.0 {
                continue;
            }
            out.push(bellman_error(
                &self.r().basis,
                self.ocp(mode),
                &y,
                e,
                &st.wc,
                &st.wa,
                &st.theta,
                self.r().adp.gamma1,
            )?);
        }
        Ok(out)
    }

    fn rhs(&self, mode: &Mode, t: f64, st: &FlowState) -> Result<FlowState, EngineError> {
        let r = self.r();
        let e = mode.aux.to_error(&st.x);
        let on = bellman_error(&r.basis, self.ocp(mode), &e, &e, &st.wc, &st.wa, &st.theta, r.adp.gamma1)?;
        let u = mode.aux.steady_input(&st.theta) + &on.mu;
        let x_dot = r.plant.ground_truth().drift(&st.x) + r.plant.input_matrix(&st.x) * &u;
        let off = self.probes(mode, &e, t, st)?;
        let gamma_c = Self::gamma_of(&st.critic_info)?;
        let rates = learner_rates(&r.adp, &gamma_c, &st.critic_info, &st.wc, &st.wa, &on, &off);
        let (d_theta, d_theta_info) = if self.setup.scenario.sysid.exact {
            (
                DMatrix::zeros(st.theta.nrows(), st.theta.ncols()),
                DMatrix::zeros(st.theta_info.nrows(), st.theta_info.ncols()),
            )
        } else {
            let gamma_t = Self::gamma_of(&st.theta_info)?;
            icl_info_rates(&r.icl, &st.theta, &gamma_t, &st.theta_info, &self.stack)
        };
        Ok(FlowState {
            x: x_dot,
            theta: d_theta,
            theta_info: d_theta_info,
            wc: rates.d_wc,
            critic_info: rates.d_gamma_inv,
            wa: rates.d_wa,
        })
    }

    fn mode_for(&self, s: StateId, target: Target, prev: Option<&Mode>, consumed: usize) -> Result<Mode, EngineError> {
        let r = self.r();
        let aux = match (target, prev) {
            (Target::Observe(o), _) => retarget(&r.plant, &r.rois, o)?,
            (Target::Done, Some(p)) => p.aux.clone(),
            (Target::Done, None) => AuxiliarySystem::at_goal(&r.plant, r.x0.clone())?,
        };
        let forbidden = self.setup.fsa.forbidden(s);
        let barrier = RecenteredBarrier::new(&r.rois, &forbidden, aux.goal().clone(), r.cost.barrier_scale())?;
        Ok(Mode { s, target, aux, barrier, consumed })
    }

    fn select(&self, s: StateId, consumed: usize, x: &DVector<f64>) -> Result<Target, EngineError> {
        let rois = &self.r().rois;
        let dist = |o: ObservationId| rois.get(o).map_or(f64::INFINITY, |roi| (x - &roi.goal).norm());
        let ctx = SelectionContext { consumed, roi_distance: Some(&dist) };
        Ok(select_target(&self.setup.fsa, &self.setup.dta, s, &self.r().tiebreak, &ctx)?)
    }

    fn vhat(&self, mode: &Mode, st: &FlowState) -> Result<f64, EngineError> {
        if mode.target == Target::Done {
            return Ok(0.0);
        }
        let e = mode.aux.to_error(&st.x);
        Ok(value_hat(&self.r().basis, &mode.barrier, &e, &e, &st.wc)?)
    }

    fn name(&self, o: ObservationId) -> String {
        self.r().alphabet.name(o).to_string()
    }

    fn target_name(&self, t: Target) -> Option<String> {
        match t {
            Target::Observe(o) => Some(self.name(o)),
            Target::Done => None,
        }
    }
}

/// Runs the scenario to `t_max`, or until the settle window after acceptance
/// has elapsed.
pub fn run(scenario: &Scenario) -> Result<TrajectoryLog, EngineError> {
    let setup = Setup::new(scenario)?;
    Ok(run_setup(&setup, RunOptions::default())?.log)
}

pub fn run_setup(setup: &Setup, options: RunOptions) -> Result<RunOutput, EngineError> {
    let sc = &setup.scenario;
    let r = &setup.resolved;
    let p1 = r.plant.basis_len();
    let n = r.plant.state_dim();
    let truth_theta = r.plant.ground_truth().theta();

    let stack = match options.initial_stack {
        Some(s) => s,
        None if sc.sysid.prepopulate && !sc.sysid.exact => record_prepopulated_stack(
            &r.plant,
            sc.sysid.m,
            sc.sysid.dt_window,
            sc.sysid.dt_window / 200.0,
            sc.sysid.prepopulate_spread,
            sc.sysid.seed,
        )?,
        None => HistoryStack::new(sc.sysid.m, sc.sysid.dt_window)?,
    };
    let mut engine = Engine { setup, truth_theta: truth_theta.clone(), stack };

    let theta0 = if sc.sysid.exact {
        truth_theta.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let mut t0 = random_theta(p1, n, sc.sysid.theta0_range, &mut rng);
        project(&mut t0, sc.sysid.theta_max);
        t0
    };
    let l = r.basis.len();
    let mut st = FlowState {
        x: r.x0.clone(),
        theta: theta0,
        theta_info: DMatrix::identity(p1, p1) / sc.sysid.gamma0,
        wc: r.wc0.clone(),
        critic_info: DMatrix::identity(l, l) / sc.adp.gamma0,
        wa: r.wa0.clone(),
    };

    let s0 = setup.fsa.initial();
    let target0 = engine.select(s0, 0, &st.x)?;
    let mut mode = engine.mode_for(s0, target0, None, 0)?;
    let mut accepted_at = if setup.fsa.is_accepting(s0) { Some(0.0) } else { None };

    let header = LogHeader {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: sc.config_hash(),
        scenario: sc.clone(),
        alphabet: r.alphabet.names().to_vec(),
        initial_state: s0.0,
        accepting_states: setup.fsa.states().filter(|&s| setup.fsa.is_accepting(s)).map(|s| s.0).collect(),
        theta_true: truth_theta.iter().copied().collect(),
    };
    let mut samples = Vec::new();
    let mut jumps = Vec::new();
    let mut monitor_pre = ExcitationMonitor::new();
    let mut monitor_full = ExcitationMonitor::new();
    let mut window: Vec<WindowSample> = Vec::new();

    let dt = sc.dt;
    let steps = (sc.t_max / dt).round() as usize;
    let settle_steps = (sc.settle / dt).round() as usize;
    let mut accept_step: Option<usize> = accepted_at.map(|_| 0);
    let mut j = 0usize;

    for k in 0..=steps {
        let t = k as f64 * dt;

        // jumps at sample resolution, possibly several at one instant
        while let Target::Observe(o) = mode.target {
            let roi = r.rois.get(o).ok_or(PlantError::MissingRegion(o.0))?;
            if roi.h(&st.x) < 0.0 {
                break;
            }
            if j >= sc.max_jumps {
                return Err(EngineError::TooManyJumps(sc.max_jumps));
            }
            let from = mode.s;
            let to = setup.fsa.step(from, o).ok_or(AutomatonError::UndefinedTransition { state: from, obs: o.0 })?;
            let vhat_before = engine.vhat(&mode, &st)?;
            let consumed = mode.consumed + 1;
            let next = engine.select(to, consumed, &st.x)?;
            let next_mode = engine.mode_for(to, next, Some(&mode), consumed)?;
            j += 1;
            let vhat_after = engine.vhat(&next_mode, &st)?;
            jumps.push(JumpRecord {
                t,
                j,
                from: from.0,
                to: to.0,
                consumed: engine.name(o),
                next: engine.target_name(next),
                vd_before: setup.dta.get(from).unwrap_or(u32::MAX),
                vd_after: setup.dta.get(to).unwrap_or(u32::MAX),
                vhat_before,
                vhat_after,
            });
            mode = next_mode;
            if setup.fsa.is_accepting(to) && accepted_at.is_none() {
                accepted_at = Some(t);
                accept_step = Some(k);
            }
        }

        // sample record
        let e = mode.aux.to_error(&st.x);
        let on = bellman_error(&r.basis, engine.ocp(&mode), &e, &e, &st.wc, &st.wa, &st.theta, r.adp.gamma1)?;
        let u = mode.aux.steady_input(&st.theta) + &on.mu;
        let off = engine.probes(&mode, &e, t, &st)?;
        if accepted_at.is_none() {
            monitor_pre.record(t, &on, &off);
        }
        monitor_full.record(t, &on, &off);
        let gamma_c = Engine::gamma_of(&st.critic_info)?;
        let gamma_t = Engine::gamma_of(&st.theta_info)?;
        let forbidden: BTreeSet<ObservationId> = setup.fsa.forbidden(mode.s);
        samples.push(Sample {
            t,
            j,
            x: st.x.iter().copied().collect(),
            s: mode.s.0,
            target: engine.target_name(mode.target),
            u: u.iter().copied().collect(),
            mu: on.mu.iter().copied().collect(),
            delta: on.delta,
            vhat: engine.vhat(&mode, &st)?,
            e_norm: e.norm(),
            theta_err: (&engine.truth_theta - &st.theta).norm(),
            theta_hat: st.theta.iter().copied().collect(),
            wc: st.wc.iter().copied().collect(),
            wa: st.wa.iter().copied().collect(),
            w_gap: (&st.wc - &st.wa).norm(),
            gamma_min: min_eigenvalue(&gamma_c),
            gamma_max: max_eigenvalue(&gamma_c),
            gamma_theta_min: min_eigenvalue(&gamma_t),
            gamma_theta_max: max_eigenvalue(&gamma_t),
            stack_excitation: engine.stack.excitation_level(),
            clearance: clearance(&r.rois, &forbidden, &st.x),
            accepted: accepted_at.is_some(),
        });

        if k == steps || accept_step.is_some_and(|a| k >= a + settle_steps) {
            break;
        }

        // online history stack windows
        if !sc.sysid.exact {
            window.push(WindowSample {
                t,
                x: st.x.clone(),
                y: r.plant.basis(&st.x),
                gu: r.plant.input_matrix(&st.x) * &u,
            });
            let span = t - window[0].t;
            if span + 1e-9 >= sc.sysid.dt_window {
                engine.stack.accumulate(&window)?;
                let last = window.pop().expect("window is non-empty");
                window.clear();
                window.push(last);
            }
        }

        let mut next = rk4_step(&st, t, dt, |tau, s: &FlowState| engine.rhs(&mode, tau, s))?;
        project(&mut next.theta, sc.sysid.theta_max);
        adp::symmetrize_spd(&mut next.critic_info)?;
        sysid::symmetrize_spd(&mut next.theta_info)?;
        if !next.all_finite() {
            return Err(EngineError::NumericalBlowup { t: t + dt, what: "flow state".into() });
        }
        st = next;
    }

    let window_len = sc.adp.excitation_window;
    let log = TrajectoryLog {
        header,
        samples,
        jumps,
        excitation: monitor_pre.report(window_len),
        excitation_full: monitor_full.report(window_len),
    };
    Ok(RunOutput { log, stack: engine.stack })
}

fn clearance(rois: &RoiSet, forbidden: &BTreeSet<ObservationId>, x: &DVector<f64>) -> Option<f64> {
    forbidden.iter().filter_map(|&o| rois.get(o)).map(|roi| -roi.h(x)).reduce(f64::min)
}

/// Whether and when the run reached an accepting automaton state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub t: Option<f64>,
    pub j: Option<usize>,
    /// The consumed word is accepted by the automaton.
    pub word_accepted: bool,
}

pub fn check_eventuality(log: &TrajectoryLog, fsa: &Fsa) -> Verdict {
    let first = log.samples.iter().find(|s| fsa.is_accepting(StateId(s.s)));
    let word: Option<Vec<ObservationId>> = log.word().iter().map(|w| fsa.alphabet().lookup(w)).collect();
    let word_accepted = word.is_some_and(|w| fsa.accepts(&w));
    Verdict { accepted: first.is_some(), t: first.map(|s| s.t), j: first.map(|s| s.j), word_accepted }
}

/// Numerical check of the hybrid barrier certificate conditions along a log.
/// Conditions involving the optimal value use the learned one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub jumps: usize,
    /// `V_d` drops by at least one at every jump.
    pub vd_decreases: bool,
    /// Witness weight of the learned value in the surrogate.
    pub lambda: f64,
    /// `V_d + λ V̂` decreases across every jump.
    pub surrogate_decreases: bool,
    /// Smallest distance margin to a forbidden region; `None` if none applied.
    pub min_clearance: Option<f64>,
    pub clearance_ok: bool,
}

impl CertificateReport {
    pub fn holds(&self) -> bool {
        self.vd_decreases && self.surrogate_decreases && self.clearance_ok
    }
}

pub fn check_certificate(log: &TrajectoryLog, fsa: &Fsa, dta: &DtaTable, rois: &RoiSet) -> CertificateReport {
    let vd = |s: usize| dta.get(StateId(s)).map(f64::from);
    let mut vd_decreases = true;
    let mut lambda: f64 = 1.0;
    let mut deltas = Vec::new();
    for jump in &log.jumps {
        match (vd(jump.from), vd(jump.to)) {
            (Some(a), Some(b)) => {
                let dvd = b - a;
                if dvd > -1.0 {
                    vd_decreases = false;
                }
                let dv = jump.vhat_after - jump.vhat_before;
                lambda = lambda.min(0.5 * dvd.abs() / dv.max(1.0));
                deltas.push((dvd, dv));
            }
            _ => vd_decreases = false,
        }
    }
    let lambda = lambda.clamp(f64::MIN_POSITIVE, 1.0);
    let surrogate_decreases = vd_decreases && deltas.iter().all(|(dvd, dv)| dvd + lambda * dv < 0.0);
    let min_clearance = log
        .samples
        .iter()
        .filter_map(|s| clearance(rois, &fsa.forbidden(StateId(s.s)), &DVector::from_column_slice(&s.x)))
        .reduce(f64::min);
    CertificateReport {
        jumps: log.jumps.len(),
        vd_decreases,
        lambda,
        surrogate_decreases,
        min_clearance,
        clearance_ok: min_clearance.is_none_or(|c| c > 0.0),
    }
}

/// Monotone time, unit jump increments, and jumps only where recorded.
pub fn check_time_domain(log: &TrajectoryLog) -> bool {
    let samples_ok = log.samples.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        b.t >= a.t && (b.j == a.j || log.jumps.iter().any(|jr| jr.j == b.j && jr.t <= b.t && jr.t >= a.t))
    });
    let jumps_ok =
        log.jumps.iter().enumerate().all(|(i, jr)| jr.j == i + 1) && log.jumps.windows(2).all(|w| w[1].t >= w[0].t);
    samples_ok && jumps_ok
}

/// Largest values of the logged error signals; all finite means bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundedness {
    pub finite: bool,
    pub max_e_norm: f64,
    pub max_theta_err: f64,
    pub max_w_gap: f64,
}

pub fn check_boundedness(log: &TrajectoryLog) -> Boundedness {
    let mut b = Boundedness { finite: true, max_e_norm: 0.0, max_theta_err: 0.0, max_w_gap: 0.0 };
    for s in &log.samples {
        let values = s.x.iter().chain(&s.u).chain(&s.wc).chain(&s.wa).chain(&s.theta_hat);
        if !values.copied().chain([s.delta, s.e_norm, s.theta_err, s.w_gap]).all(f64::is_finite) {
            b.finite = false;
        }
        b.max_e_norm = b.max_e_norm.max(s.e_norm);
        b.max_theta_err = b.max_theta_err.max(s.theta_err);
        b.max_w_gap = b.max_w_gap.max(s.w_gap);
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_D: &str = r#"
formula = "F goal"
plant = "linear1d"
x0 = [1.0]
t_max = 3.0
settle = 0.2
linear1d = { a = -1.0, b = 1.0 }
roi = [{ name = "goal", center = [0.0], radius = 0.1 }]
adp = { basis = "quadratic", wc0 = 1.0, wa0 = 1.0, gamma0 = 5.0 }
sysid = { prepopulate = false }
"#;

    fn scenario(text: &str) -> Scenario {
        Scenario::from_toml_str(text).unwrap()
    }

    #[test]
    fn reaches_goal_and_stops_after_settle() {
        let log = run(&scenario(ONE_D)).unwrap();
        let setup = Setup::new(&scenario(ONE_D)).unwrap();
        let v = check_eventuality(&log, &setup.fsa);
        assert!(v.accepted && v.word_accepted);
        assert_eq!(v.j, Some(1));
        let t_acc = v.t.unwrap();
        let last = log.samples.last().unwrap().t;
        assert!((last - (t_acc + 0.2)).abs() < 1e-9);
        assert!(check_time_domain(&log));
        assert_eq!(log.word(), vec!["goal".to_string()]);
        let cert = check_certificate(&log, &setup.fsa, &setup.dta, &setup.resolved.rois);
        assert!(cert.holds(), "{cert:?}");
        assert!(check_boundedness(&log).finite);
    }

    #[test]
    fn starting_inside_target_jumps_at_zero() {
        let text = ONE_D.replace("x0 = [1.0]", "x0 = [0.05]");
        let log = run(&scenario(&text)).unwrap();
        assert_eq!(log.jumps.len(), 1);
        assert_eq!(log.jumps[0].t, 0.0);
        assert_eq!(log.samples[0].j, 1);
    }

    #[test]
    fn accepting_first_sample_gives_zero_time() {
        let setup = Setup::new(&scenario(ONE_D)).unwrap();
        let mut log = run(&scenario(ONE_D)).unwrap();
        let accepting = log.header.accepting_states[0];
        log.samples[0].s = accepting;
        log.jumps.clear();
        let v = check_eventuality(&log, &setup.fsa);
        assert_eq!((v.accepted, v.t, v.j), (true, Some(0.0), Some(0)));
        let cert = check_certificate(&log, &setup.fsa, &setup.dta, &setup.resolved.rois);
        assert!(cert.vd_decreases && cert.surrogate_decreases);
        assert_eq!(cert.jumps, 0);
    }

    #[test]
    fn true_formula_needs_one_observation() {
        let text = ONE_D.replace("F goal", "T");
        let log = run(&scenario(&text)).unwrap();
        assert_eq!(log.jumps.len(), 1);
        assert!(!log.samples[0].accepted);
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let text = r#"
formula = "F goal"
plant = "custom-basis"
x0 = [1.0, 1.0]
t_max = 0.2
custom_basis = { monomials = [[1, 0]], theta = [[0.0, 0.0]], g = [[1.0], [0.0]] }
roi = [{ name = "goal", center = [3.0, 3.0], radius = 0.1 }]
adp = { wc0 = 0.0, wa0 = 0.0, kc1 = 0.0, kc2 = 0.0, ka1 = 0.0, ka2 = 0.0, beta = 0.0 }
sysid = { exact = true }
"#;
        let log = run(&scenario(text)).unwrap();
        // the only input acts on x1 and both weights are zero
        for s in &log.samples {
            assert_eq!(s.x, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn identical_runs_are_identical() {
        let a = run(&scenario(ONE_D)).unwrap();
        let b = run(&scenario(ONE_D)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn initial_stack_can_be_supplied() {
        let setup = Setup::new(&scenario(ONE_D)).unwrap();
        let first = run_setup(&setup, RunOptions::default()).unwrap();
        assert!(!first.stack.is_empty());
        let again = run_setup(&setup, RunOptions { initial_stack: Some(first.stack.clone()) }).unwrap();
        assert!(again.log.samples[0].stack_excitation > 0.0);
    }
}
