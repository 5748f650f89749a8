use ltlsynth::automaton::{compile as compile_fsa, compute_dta, StateId};
use ltlsynth::cost::RecenteredBarrier;
use ltlsynth::hybrid::{check_eventuality, run_setup, RunOptions, Setup};
use ltlsynth::scenario::{Scenario, TiebreakKind};
use ltlsynth::scltl::{parse_formula, Alphabet};
use nalgebra::DVector;
use serde::Serialize;

pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/benchmark2d.toml");

#[derive(Serialize)]
pub struct StateInfo {
    pub id: usize,
    pub accepting: bool,
    /// Distance to acceptance; `None` when unreachable.
    pub dta: Option<u32>,
    pub forbidden: Vec<String>,
}

#[derive(Serialize)]
pub struct Transition {
    pub from: usize,
    pub obs: String,
    pub to: usize,
}

#[derive(Serialize)]
pub struct Compiled {
    pub initial: usize,
    pub states: Vec<StateInfo>,
    pub transitions: Vec<Transition>,
    pub dot: String,
}

pub fn compile(formula: &str, alphabet: &str) -> Result<String, String> {
    let names: Vec<&str> = alphabet.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let alpha = Alphabet::new(&names).map_err(|e| e.to_string())?;
    let phi = parse_formula(formula, &alpha).map_err(|e| e.to_string())?;
    let fsa = compile_fsa(&phi, &alpha).map_err(|e| e.to_string())?;
    let dta = compute_dta(&fsa);
    let states = fsa
        .states()
        .map(|s| StateInfo {
            id: s.index(),
            accepting: fsa.is_accepting(s),
            dta: dta.get(s),
            forbidden: fsa.forbidden(s).into_iter().map(|o| alpha.name(o).to_string()).collect(),
        })
        .collect();
    let fsa_ref = &fsa;
    let transitions = fsa
        .states()
        .flat_map(|s| alpha.ids().filter_map(move |o| fsa_ref.step(s, o).map(|t| (s, o, t))))
        .map(|(s, o, t)| Transition { from: s.index(), obs: alpha.name(o).to_string(), to: t.index() })
        .collect();
    let out = Compiled { initial: fsa.initial().index(), states, transitions, dot: fsa.export_dot() };
    Ok(serde_json::to_string(&out).expect("serialisable"))
}

#[derive(Serialize)]
pub struct Region {
    pub name: String,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Serialize)]
pub struct JumpInfo {
    pub t: f64,
    pub consumed: String,
    pub from: usize,
    pub to: usize,
}

#[derive(Serialize)]
pub struct Simulation {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub s: Vec<usize>,
    pub theta_err: Vec<f64>,
    pub wc: Vec<Vec<f64>>,
    pub jumps: Vec<JumpInfo>,
    pub regions: Vec<Region>,
    pub accepted: bool,
    pub t_accept: Option<f64>,
    pub word: Vec<String>,
}

fn load(scenario_toml: &str) -> Result<Scenario, String> {
    Scenario::from_toml_str(scenario_toml).map_err(|e| e.to_string())
}

fn regions(sc: &Scenario) -> Vec<Region> {
    sc.roi.iter().map(|r| Region { name: r.name.clone(), center: r.center.clone(), radius: r.radius }).collect()
}

pub fn simulate(scenario_toml: &str, word: &str, stride: usize) -> Result<String, String> {
    let mut sc = load(scenario_toml)?;
    let word: Vec<String> = word.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if !word.is_empty() {
        sc.word = Some(word);
        sc.tiebreak = TiebreakKind::FixedWord;
    }
    let setup = Setup::new(&sc).map_err(|e| e.to_string())?;
    let log = run_setup(&setup, RunOptions::default()).map_err(|e| e.to_string())?.log;
    let verdict = check_eventuality(&log, &setup.fsa);
    let stride = stride.max(1);
    let mut picked: Vec<_> = log.samples.iter().step_by(stride).collect();
    if (log.samples.len() - 1) % stride != 0 {
        picked.extend(log.samples.last());
    }
    let out = Simulation {
        t: picked.iter().map(|s| s.t).collect(),
        x: picked.iter().map(|s| s.x.clone()).collect(),
        s: picked.iter().map(|s| s.s).collect(),
        theta_err: picked.iter().map(|s| s.theta_err).collect(),
        wc: picked.iter().map(|s| s.wc.clone()).collect(),
        jumps: log
            .jumps
            .iter()
            .map(|j| JumpInfo { t: j.t, consumed: j.consumed.clone(), from: j.from, to: j.to })
            .collect(),
        regions: regions(&sc),
        accepted: verdict.accepted,
        t_accept: verdict.t,
        word: log.word(),
    };
    Ok(serde_json::to_string(&out).expect("serialisable"))
}

#[derive(Serialize)]
pub struct Field {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `ys` then `xs`; `None` inside a forbidden region.
    pub values: Vec<Option<f64>>,
    pub forbidden: Vec<String>,
    pub goal: Vec<f64>,
    pub regions: Vec<Region>,
}

pub fn barrier_field(scenario_toml: &str, state: usize, target: &str, n: usize) -> Result<String, String> {
    let sc = load(scenario_toml)?;
    let setup = Setup::new(&sc).map_err(|e| e.to_string())?;
    let r = &setup.resolved;
    if r.plant.state_dim() != 2 {
        return Err("barrier fields are drawn for planar plants only".into());
    }
    if state >= setup.fsa.num_states() {
        return Err(format!("automaton has no state {state}"));
    }
    let obs = r.alphabet.lookup(target).ok_or_else(|| format!("unknown observation `{target}`"))?;
    let roi = r.rois.get(obs).ok_or_else(|| format!("`{target}` has no region"))?;
    let forbidden = setup.fsa.forbidden(StateId(state));
    let goal = roi.goal.clone();
    let barrier =
        RecenteredBarrier::new(&r.rois, &forbidden, goal.clone(), r.cost.barrier_scale()).map_err(|e| e.to_string())?;

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for spec in sc.roi.iter() {
        for k in 0..2 {
            lo[k] = lo[k].min(spec.center[k] - spec.radius);
            hi[k] = hi[k].max(spec.center[k] + spec.radius);
        }
    }
    for k in 0..2 {
        lo[k] = lo[k].min(sc.x0[k]);
        hi[k] = hi[k].max(sc.x0[k]);
    }
    let n = n.clamp(2, 400);
    let axis = |k: usize| -> Vec<f64> {
        let pad = 0.15 * (hi[k] - lo[k]).max(1.0);
        (0..n).map(|i| lo[k] - pad + (hi[k] - lo[k] + 2.0 * pad) * i as f64 / (n - 1) as f64).collect()
    };
    let (xs, ys) = (axis(0), axis(1));
    let mut values = Vec::with_capacity(n * n);
    for &y in &ys {
        for &x in &xs {
            let e = DVector::from_vec(vec![x - goal[0], y - goal[1]]);
            values.push(barrier.bounded(&e).ok());
        }
    }
    let out = Field {
        xs,
        ys,
        values,
        forbidden: forbidden.into_iter().map(|o| r.alphabet.name(o).to_string()).collect(),
        goal: goal.iter().copied().collect(),
        regions: regions(&sc),
    };
    Ok(serde_json::to_string(&out).expect("serialisable"))
}
