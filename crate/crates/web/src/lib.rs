//! Browser bindings. Every operation returns a JSON string; the plain
//! functions in [`api`] do the work and are usable natively.

use wasm_bindgen::prelude::*;

pub mod api;

/// The shipped benchmark scenario, as TOML.
#[wasm_bindgen]
pub fn default_scenario() -> String {
    api::DEFAULT_SCENARIO.to_string()
}

#[wasm_bindgen]
pub fn compile_formula(formula: &str, alphabet: &str) -> Result<String, JsError> {
    api::compile(formula, alphabet).map_err(|e| JsError::new(&e))
}

/// Runs a scenario. `word` overrides the visit order when non-empty;
/// every `stride`-th sample is returned.
#[wasm_bindgen]
pub fn simulate(scenario_toml: &str, word: &str, stride: usize) -> Result<String, JsError> {
    api::simulate(scenario_toml, word, stride).map_err(|e| JsError::new(&e))
}

/// Bounded barrier over an `n`×`n` grid for automaton state `state` while
/// heading to the region named `target`.
#[wasm_bindgen]
pub fn barrier_field(scenario_toml: &str, state: usize, target: &str, n: usize) -> Result<String, JsError> {
    api::barrier_field(scenario_toml, state, target, n).map_err(|e| JsError::new(&e))
}
