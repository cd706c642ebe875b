//! Deterministic report construction: every float is rounded to 12
//! significant digits before serialization and all collections are emitted
//! in fixed (node-id) order, so identical inputs produce byte-identical
//! reports.

use serde_json::{json, Map, Value};

use treehedge_core::dynprog::{BackwardSolution, DualCertificate, MartingaleMeasure, Strategy};
use treehedge_core::market::{NodeId, ScenarioTree, ValidationReport};
use treehedge_core::superhedge::GammaCurve;

pub const SCHEMA_VERSION: &str = "1";

/// Rounds to 12 significant digits; normalizes negative zero.
pub fn sig(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return x;
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        0.0
    } else {
        rounded
    }
}

pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(sig(x))
    } else if x.is_infinite() && x > 0.0 {
        json!("inf")
    } else if x.is_infinite() {
        json!("-inf")
    } else {
        json!("nan")
    }
}

pub fn vec_num(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn strategy_json(tree: &ScenarioTree, strategy: &Strategy) -> Value {
    let h: Vec<Value> = tree
        .interior()
        .map(|id| {
            json!({
                "node": id,
                "h": vec_num(strategy.h_at(id)),
            })
        })
        .collect();
    let mut obj = Map::new();
    obj.insert("h".into(), Value::Array(h));
    if !strategy.alpha.is_empty() {
        obj.insert("alpha".into(), vec_num(&strategy.alpha));
    }
    Value::Object(obj)
}

fn measure_json(tree: &ScenarioTree, measure: &MartingaleMeasure) -> Value {
    let kernels: Vec<Value> = tree
        .interior()
        .map(|id| {
            let k = measure.kernels[id].as_ref().expect("interior kernel");
            json!({
                "node": id,
                "weights": vec_num(k.as_slice()),
                "unvisited": measure.unvisited.contains(&id),
            })
        })
        .collect();
    let leaf_law: Vec<Value> = tree
        .leaves()
        .iter()
        .zip(&measure.leaf_law)
        .map(|(&id, &w)| json!({"leaf": id, "mass": num(w)}))
        .collect();
    json!({"kernels": kernels, "leaf_law": leaf_law})
}

pub fn certificate_json(tree: &ScenarioTree, cert: &DualCertificate) -> Value {
    let per_node: Vec<Value> = cert
        .entropy
        .per_node
        .iter()
        .map(|(&id, &h)| json!({"node": id, "entropy": num(h)}))
        .collect();
    json!({
        "measure": measure_json(tree, &cert.measure),
        "entropy_total": num(cert.entropy.total),
        "entropy_per_node": per_node,
        "dual_value": num(cert.dual_value),
        "attained": cert.attained,
    })
}

pub fn solve_report(
    config: Value,
    tree: &ScenarioTree,
    sol: &BackwardSolution,
    alpha: Option<(&[f64], &[f64])>,
    force: bool,
) -> Value {
    let mut per_node: Vec<Value> = Vec::new();
    for node in tree.nodes() {
        let mut entry = Map::new();
        entry.insert("node".into(), json!(node.id));
        entry.insert("value".into(), num(sol.value_field.values[node.id]));
        if !node.is_leaf() {
            entry.insert(
                "h".into(),
                vec_num(sol.strategy.h[node.id].as_deref().unwrap_or(&[])),
            );
            entry.insert(
                "kernel".into(),
                vec_num(
                    sol.certificate.measure.kernels[node.id]
                        .as_ref()
                        .map(|k| k.as_slice())
                        .unwrap_or(&[]),
                ),
            );
            entry.insert(
                "entropy".into(),
                num(*sol.certificate.entropy.per_node.get(&node.id).unwrap_or(&0.0)),
            );
            entry.insert(
                "residual".into(),
                num(sol.value_field.residuals[node.id]),
            );
        }
        per_node.push(Value::Object(entry));
    }
    let gap = (sol.value - sol.certificate.dual_value).abs();
    let mut report = Map::new();
    report.insert("schema_version".into(), json!(SCHEMA_VERSION));
    report.insert("config".into(), config);
    report.insert("primal".into(), num(sol.value));
    report.insert("dual".into(), num(sol.certificate.dual_value));
    report.insert("gap".into(), num(gap));
    let mut strategy = strategy_json(tree, &sol.strategy);
    if let Some((a, residuals)) = alpha {
        if let Value::Object(map) = &mut strategy {
            map.insert("alpha".into(), vec_num(a));
        }
        report.insert("calibration_residuals".into(), vec_num(residuals));
    }
    report.insert("strategy".into(), strategy);
    report.insert(
        "certificate".into(),
        certificate_json(tree, &sol.certificate),
    );
    report.insert("per_node".into(), Value::Array(per_node));
    if force {
        report.insert(
            "banner".into(),
            json!("forced run: per-node no-arbitrage unchecked, duality not guaranteed"),
        );
    }
    Value::Object(report)
}

pub fn curve_report(config: Value, curve: &GammaCurve) -> Value {
    let rows: Vec<Value> = curve
        .gammas
        .iter()
        .zip(&curve.prices)
        .map(|(&g, &p)| {
            json!({
                "gamma": num(g),
                "price": num(p),
                "bound": num(curve.pi_star - p),
            })
        })
        .collect();
    json!({
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "curve": rows,
        "pi_star": num(curve.pi_star),
        "terminal_gap": num(curve.terminal_gap),
        "entropy_bound": num(curve.entropy_bound),
    })
}

pub fn validation_json(report: &ValidationReport) -> Value {
    let issues: Vec<Value> = report
        .issues
        .iter()
        .map(|d| {
            json!({
                "node": d.node.map(|n| n as i64),
                "message": d.message,
            })
        })
        .collect();
    Value::Array(issues)
}

pub fn na_report(config: Value, verdicts: &[(NodeId, Option<Vec<f64>>)]) -> Value {
    let rows: Vec<Value> = verdicts
        .iter()
        .map(|(id, witness)| match witness {
            Some(h) => json!({"node": id, "verdict": "arbitrage", "witness": vec_num(h)}),
            None => json!({"node": id, "verdict": "no-arbitrage"}),
        })
        .collect();
    json!({
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "nodes": rows,
        "arbitrage": verdicts.iter().any(|(_, w)| w.is_some()),
    })
}

pub fn error_report(config: Value, kind: &str, message: &str) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "error": {"kind": kind, "message": message},
    })
}
