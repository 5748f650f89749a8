use ltlsynth_web::api::{barrier_field, compile, simulate, DEFAULT_SCENARIO};
use serde_json::Value;

fn json(text: String) -> Value {
    serde_json::from_str(&text).unwrap()
}

#[test]
fn compile_reports_states_transitions_and_distances() {
    let out = json(compile("F(o1 & F o2)", "o1, o2").unwrap());
    let dta: Vec<u64> = out["states"].as_array().unwrap().iter().map(|s| s["dta"].as_u64().unwrap()).collect();
    assert_eq!(dta, [2, 1, 0]);
    assert_eq!(out["transitions"].as_array().unwrap().len(), 6);
    assert!(out["dot"].as_str().unwrap().starts_with("digraph"));
}

#[test]
fn compile_errors_are_messages() {
    assert!(compile("F o3", "o1,o2").unwrap_err().contains("o3"));
    assert!(compile("o1 & !o1", "o1").unwrap_err().contains("empty language"));
}

#[test]
fn benchmark_simulation_is_accepted_in_either_order() {
    for (word, expect) in [("", ["o1", "o2", "o3"]), ("o2,o1,o3", ["o2", "o1", "o3"])] {
        let out = json(simulate(DEFAULT_SCENARIO, word, 10).unwrap());
        assert_eq!(out["accepted"], true);
        assert_eq!(out["word"], serde_json::json!(expect));
        let t = out["t"].as_array().unwrap();
        assert_eq!(t.len(), 501);
        assert!((t.last().unwrap().as_f64().unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(out["regions"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn barrier_field_masks_forbidden_disks() {
    let fsa = json(compile(
        "((!o4 & !o5) U (o1 & ((!o4 & !o5) U (o2 & ((!o4 & !o5) U o3))))) | ((!o4 & !o5) U (o2 & ((!o4 & !o5) U (o1 & ((!o4 & !o5) U o3)))))",
        "o1,o2,o3,o4,o5",
    )
    .unwrap());
    let initial = fsa["initial"].as_u64().unwrap() as usize;
    let out = json(barrier_field(DEFAULT_SCENARIO, initial, "o1", 41).unwrap());
    let values = out["values"].as_array().unwrap();
    assert_eq!(values.len(), 41 * 41);
    assert!(values.iter().any(Value::is_null));
    let finite: Vec<f64> = values.iter().filter_map(Value::as_f64).collect();
    assert!(finite.iter().all(|v| (0.0..1.0).contains(v)));
    let forbidden: Vec<&str> = out["forbidden"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(forbidden.contains(&"o4") && forbidden.contains(&"o5"));

    assert!(barrier_field(DEFAULT_SCENARIO, 99, "o1", 10).is_err());
    assert!(barrier_field(DEFAULT_SCENARIO, initial, "o9", 10).is_err());
}
