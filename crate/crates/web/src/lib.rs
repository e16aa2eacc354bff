//! Browser bindings: each export takes plain values and returns a JSON string.

use polylock::bench::{gen_bench, BenchSpec};
use polylock::bind::synthesize;
use polylock::dfg::OpType;
use polylock::fixtures::example_graph;
use polylock::lock::{insert_sbs, LockConfig};
use polylock::polysb::{Behavior, CorruptionPolicy, RoutingMode, SbKey};
use polylock::sched::schedule_secure;
use polylock::sim::error_rate;
use polylock::word::{width_mask, Word};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn fail(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn mode_name(b: Behavior) -> &'static str {
    match b.mode() {
        RoutingMode::Parallel => "parallel",
        RoutingMode::Cross => "cross",
        RoutingMode::Corrupt { .. } => "corrupt",
    }
}

fn word(w: Word) -> Value {
    json!({ "value": w.value, "unknown": w.unknown })
}

/// Resolves one 8-bit key (`C1P1C2P2C3P3C4P4`) and routes two 8-bit words through it.
#[wasm_bindgen]
pub fn resolve_key(bits: &str, x: u8, y: u8, policy: &str) -> Result<String, JsValue> {
    let key: SbKey = bits.parse().map_err(fail)?;
    let policy: CorruptionPolicy = policy.parse().map_err(fail)?;
    let b = Behavior::of(key);
    let transistors: Vec<Value> = (0..4)
        .map(|t| {
            let p = key.transistor(t);
            json!({ "cg": p.cg, "pg": p.pg, "on": p.conducts() })
        })
        .collect();
    let (z, w) = b.route(
        Word::known(x as u64),
        Word::known(y as u64),
        policy,
        width_mask(8),
    );
    Ok(json!({
        "key": key.to_string(),
        "transistors": transistors,
        "z_drivers": b.z.to_string(),
        "w_drivers": b.w.to_string(),
        "mode": mode_name(b),
        "class": b.index(),
        "z": word(z),
        "w": word(w),
    })
    .to_string())
}

/// The 16 behaviour classes with the keys in each.
#[wasm_bindgen]
pub fn key_partition() -> String {
    let classes: Vec<Value> = (0..Behavior::COUNT)
        .map(|i| {
            let b = Behavior::from_index(i);
            let keys: Vec<String> = SbKey::all().filter(|&k| Behavior::of(k) == b).map(|k| k.to_string()).collect();
            json!({ "class": i, "z": b.z.to_string(), "w": b.w.to_string(), "mode": mode_name(b), "keys": keys })
        })
        .collect();
    json!({ "classes": classes }).to_string()
}

/// Schedules the six-operation example graph at `latency` steps.
#[wasm_bindgen]
pub fn schedule_example(latency: u32) -> Result<String, JsValue> {
    let g = example_graph();
    let s = schedule_secure(&g, latency).map_err(fail)?;
    let nodes: Vec<Value> = (0..g.node_count())
        .map(|v| {
            let f = s.frames[v];
            let w = s.weights[v];
            let preds: Vec<&str> = g
                .predecessors(v)
                .iter()
                .map(|&u| g.node(u).id.as_str())
                .collect();
            json!({
                "id": g.node(v).id,
                "op": g.op(v).name(),
                "step": s.step(v),
                "asap": f.asap,
                "alap": f.alap,
                "po": w.po,
                "fo": w.fo,
                "w": w.w,
                "preds": preds,
            })
        })
        .collect();
    let syn = synthesize(&g, latency, 8).map_err(fail)?;
    let fus: Vec<Value> = OpType::ALL
        .iter()
        .map(|&op| json!({ "op": op.name(), "count": syn.fus.fu_count(op) }))
        .collect();
    Ok(json!({ "latency": latency, "critical_path": g.critical_path_len(), "nodes": nodes, "fus": fus }).to_string())
}

/// Error rate against overhead budget for one random benchmark of `ops` operations.
#[wasm_bindgen]
pub fn error_rate_curve(
    ops: usize,
    seed: u32,
    trials: u32,
    max_budget: u32,
) -> Result<String, JsValue> {
    let latency = (ops as u32 / 4).max(3);
    let spec = BenchSpec::new("demo", latency, ops, ops + ops / 2, (ops / 8).max(1));
    let g = gen_bench(&spec, seed as u64).map_err(fail)?;
    let syn = synthesize(&g, latency, 8).map_err(fail)?;
    let mut points = Vec::new();
    for budget in (0..=max_budget).step_by(5) {
        let cfg = LockConfig {
            budget_pct: budget as f64,
            seed: seed as u64,
            ..LockConfig::default()
        };
        let d = insert_sbs(&syn.netlist, &cfg).map_err(fail)?;
        let r = error_rate(&d, trials as u64, seed as u64).map_err(fail)?;
        points.push(json!({
            "budget": budget,
            "sbs": d.sb_count(),
            "overhead": d.overhead_pct,
            "error_rate": r.error_rate,
        }));
    }
    Ok(json!({ "ops": ops, "latency": latency, "points": points }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_key_passes_words_through() {
        let v: Value =
            serde_json::from_str(&resolve_key("00100111", 5, 9, "wired_or").unwrap()).unwrap();
        assert_eq!(v["mode"], "parallel");
        assert_eq!(v["z"]["value"], 5);
        assert_eq!(v["w"]["value"], 9);
    }

    #[test]
    fn partition_has_sixteen_classes_of_sixteen() {
        let v: Value = serde_json::from_str(&key_partition()).unwrap();
        let classes = v["classes"].as_array().unwrap();
        assert_eq!(classes.len(), 16);
        assert!(classes
            .iter()
            .all(|c| c["keys"].as_array().unwrap().len() == 16));
    }

    #[test]
    fn example_schedule_reports_every_node() {
        let v: Value = serde_json::from_str(&schedule_example(4).unwrap()).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 6);
    }

    #[test]
    fn curve_starts_at_zero() {
        let v: Value = serde_json::from_str(&error_rate_curve(20, 1, 100, 10).unwrap()).unwrap();
        let pts = v["points"].as_array().unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0]["error_rate"], 0.0);
    }
}
