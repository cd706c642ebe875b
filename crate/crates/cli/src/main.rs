//! Command-line front door: parse market specs, dispatch solver commands,
//! emit machine-first reports.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 arbitrage detected,
//! 3 solver non-convergence.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use treehedge_core::arbitrage::{na_check, NaVerdict, NodeMarket};
use treehedge_core::dynprog::backward_solve;
use treehedge_core::error::Error;
use treehedge_core::market::{
    validate_spec, ClaimVector, Market, NodeId, OptionSet, TreeSpec,
};
use treehedge_core::models::{
    robust_binomial, robust_blackscholes, wasserstein_ball, BinomialSpec, BlackScholesSpec,
    WassersteinSpec,
};
use treehedge_core::semistatic::{solve_with_options_mode, AlphaMode};
use treehedge_core::superhedge::{gamma_curve, superhedge_price};
use treehedge_core::SolverConfig;

#[derive(Parser)]
#[command(
    name = "treehedge",
    version,
    about = "Robust exponential-utility valuation and hedging on scenario trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Market spec file (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Additional option payoffs: JSON array of {leaf: payoff} maps,
    /// appended to any options embedded in the spec.
    #[arg(long)]
    options: Option<PathBuf>,
    /// Certified primal/dual gap tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol_gap: f64,
    /// Linear-program decision tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol_lp: f64,
    /// Skip the per-node no-arbitrage gate; the report then carries a
    /// "duality not guaranteed" banner.
    #[arg(long)]
    force: bool,
    /// Write the report to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Human-readable rendering instead of the machine report.
    #[arg(long)]
    pretty: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the no-arbitrage condition at every node.
    CheckNa(CommonArgs),
    /// Robust valuation with optimal dynamic strategy and dual certificate.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Optimize static positions by nested per-option scalar
        /// minimizations instead of the joint search (cross-check mode).
        #[arg(long)]
        induction: bool,
    },
    /// Superhedging price over calibrated martingale measures.
    Superhedge(CommonArgs),
    /// Entropic price curve along increasing risk aversions.
    Curve {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated strictly increasing risk aversions.
        #[arg(long, allow_hyphen_values = true)]
        gammas: String,
        /// Also write plot data (columns gamma, price, bound) to this file.
        #[arg(long)]
        plot_out: Option<PathBuf>,
    },
    /// Generate a market spec consumable by `solve`.
    Gen {
        #[command(subcommand)]
        model: GenCommand,
        /// Write the spec to this file instead of stdout.
        #[arg(long, global = true)]
        out: Option<PathBuf>,
        /// Seed for randomized claims (`--claim random:<range>`).
        #[arg(long, global = true, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum GenCommand {
    /// Interval-parameter binomial tree.
    Binomial {
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long, default_value_t = 0.0)]
        s0: f64,
        #[arg(long, default_value_t = 0.4)]
        p_lo: f64,
        #[arg(long, default_value_t = 0.6)]
        p_hi: f64,
        #[arg(long, default_value_t = -1.0)]
        down_lo: f64,
        #[arg(long, default_value_t = -1.0)]
        down_hi: f64,
        #[arg(long, default_value_t = 1.0)]
        up_lo: f64,
        #[arg(long, default_value_t = 1.0)]
        up_hi: f64,
        /// Grid points per parameter interval (2 = corners only).
        #[arg(long, default_value_t = 2)]
        grid: usize,
        /// Claim: "zero", "call:<strike>" or "random:<range>".
        #[arg(long, default_value = "zero")]
        claim: String,
    },
    /// Discretized Black-Scholes model with drift and law uncertainty.
    Blackscholes {
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        #[arg(long, default_value_t = 1.0)]
        s0: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 0.0)]
        mu_lo: f64,
        #[arg(long, default_value_t = 0.0)]
        mu_hi: f64,
        #[arg(long, default_value_t = 2)]
        drift_grid: usize,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        /// Transport-ball radius around the discretized return law.
        #[arg(long, default_value_t = 0.0)]
        radius: f64,
        /// Comma-separated return grid (must straddle zero).
        #[arg(long, allow_hyphen_values = true, default_value = "-0.4,-0.2,0.0,0.2,0.4")]
        return_grid: String,
        #[arg(long, default_value = "zero")]
        claim: String,
    },
    /// One-period market with Wasserstein-ball ambiguity on given atoms.
    Wasserstein {
        #[arg(long, default_value_t = 0.0)]
        s0: f64,
        /// Comma-separated child stock values.
        #[arg(long, allow_hyphen_values = true, default_value = "1.0,0.0,-1.0")]
        atoms: String,
        /// Comma-separated center probabilities over the atoms.
        #[arg(long, allow_hyphen_values = true, default_value = "0.3,0.4,0.3")]
        center: String,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        /// Transport cost is |distance|^order.
        #[arg(long, default_value_t = 1.0)]
        order: f64,
        #[arg(long, default_value = "zero")]
        claim: String,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            kind: "parse",
            message: message.into(),
            code: 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match root_error(&e) {
            Error::Arbitrage { .. } => ("arbitrage", 2),
            Error::Infeasible(_) => ("infeasible", 2),
            Error::NoConvergence(_)
            | Error::Diverging(_)
            | Error::GapExceeded(_)
            | Error::LpFailure(_)
            | Error::BudgetExceeded(_) => ("non-convergence", 3),
            _ => ("parse", 1),
        };
        Failure {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

fn root_error(e: &Error) -> &Error {
    match e {
        Error::AtNode { source, .. } => root_error(source),
        other => other,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not failures.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (config, common, run): (Value, Option<CommonArgs>, _) = match cli.command {
        Command::CheckNa(common) => (
            config_json("check-na", &common, &[]),
            Some(common.clone()),
            run_check_na(common),
        ),
        Command::Solve { common, induction } => (
            config_json("solve", &common, &[("induction", json!(induction))]),
            Some(common.clone()),
            run_solve(common, induction),
        ),
        Command::Superhedge(common) => (
            config_json("superhedge", &common, &[]),
            Some(common.clone()),
            run_superhedge(common),
        ),
        Command::Curve {
            common,
            gammas,
            plot_out,
        } => (
            config_json("curve", &common, &[("gammas", json!(gammas.clone()))]),
            Some(common.clone()),
            run_curve(common, gammas, plot_out),
        ),
        Command::Gen { model, out, seed } => {
            let config = json!({"command": "gen", "seed": seed});
            let result = run_gen(model, seed).map(|spec| {
                let text = serde_json::to_string_pretty(&spec).expect("spec serializes");
                (json!({"spec": "written"}), text, 0u8)
            });
            return match result {
                Ok((_, text, code)) => {
                    if let Err(e) = write_output(out.as_deref(), &(text + "\n")) {
                        eprintln!("{e}");
                        return ExitCode::from(1);
                    }
                    ExitCode::from(code)
                }
                Err(f) => {
                    let report = report::error_report(config, f.kind, &f.message);
                    println!("{}", serde_json::to_string(&report).unwrap());
                    ExitCode::from(f.code)
                }
            };
        }
    };
    match run {
        Ok((body, code)) => {
            let rendered = if common.as_ref().is_some_and(|c| c.pretty) {
                pretty_render(&body)
            } else {
                serde_json::to_string(&body).expect("report serializes") + "\n"
            };
            let out = common.as_ref().and_then(|c| c.out.clone());
            if let Err(e) = write_output(out.as_deref(), &rendered) {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            ExitCode::from(code)
        }
        Err(f) => {
            let report = report::error_report(config, f.kind, &f.message);
            println!("{}", serde_json::to_string(&report).unwrap());
            ExitCode::from(f.code)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn config_json(command: &str, common: &CommonArgs, extra: &[(&str, Value)]) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("command".into(), json!(command));
    obj.insert("input".into(), json!(common.input.display().to_string()));
    if let Some(o) = &common.options {
        obj.insert("options".into(), json!(o.display().to_string()));
    }
    obj.insert("tol_gap".into(), json!(common.tol_gap));
    obj.insert("tol_lp".into(), json!(common.tol_lp));
    obj.insert("tol_entropy".into(), json!(1e-10));
    obj.insert("force".into(), json!(common.force));
    if let Some(o) = &common.out {
        obj.insert("out".into(), json!(o.display().to_string()));
    }
    for (k, v) in extra {
        obj.insert((*k).into(), v.clone());
    }
    Value::Object(obj)
}

fn solver_config(common: &CommonArgs) -> SolverConfig {
    SolverConfig {
        tol_gap: common.tol_gap,
        tol_lp: common.tol_lp,
        force: common.force,
        ..SolverConfig::default()
    }
}

fn load_market(common: &CommonArgs) -> Result<Market, Failure> {
    let text = std::fs::read_to_string(&common.input)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", common.input.display())))?;
    let spec: TreeSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("malformed spec: {e}")))?;
    let validation = validate_spec(&spec);
    if !validation.is_ok() {
        let rendered = serde_json::to_string(&report::validation_json(&validation)).unwrap();
        return Err(Failure::usage(format!("spec failed validation: {rendered}")));
    }
    let mut market = Market::from_spec(&spec).map_err(Failure::from)?;
    if let Some(path) = &common.options {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
        let maps: Vec<std::collections::BTreeMap<String, f64>> = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("malformed options file: {e}")))?;
        for map in maps {
            let mut values = vec![0.0; market.tree.leaves().len()];
            for (key, v) in map {
                let id: NodeId = key
                    .parse()
                    .map_err(|_| Failure::usage(format!("option key {key:?} is not a node id")))?;
                let pos = market.tree.leaf_position(id).ok_or_else(|| {
                    Failure::usage(format!("option key {id} is not a leaf id"))
                })?;
                values[pos] = v;
            }
            market
                .options
                .payoffs
                .push(ClaimVector::new(values).map_err(Failure::from)?);
        }
    }
    Ok(market)
}

fn run_check_na(common: CommonArgs) -> Result<(Value, u8), Failure> {
    let market = load_market(&common)?;
    let config = config_json("check-na", &common, &[]);
    let mut verdicts = Vec::new();
    let mut any = false;
    for id in market.tree.interior() {
        let m = NodeMarket::from_tree(&market.tree, id, market.ambiguity_at(id))
            .map_err(Failure::from)?;
        match na_check(&m).map_err(Failure::from)? {
            NaVerdict::NoArbitrage => verdicts.push((id, None)),
            NaVerdict::Arbitrage { witness } => {
                any = true;
                verdicts.push((id, Some(witness)));
            }
        }
    }
    let body = report::na_report(config, &verdicts);
    Ok((body, if any { 2 } else { 0 }))
}

fn run_solve(common: CommonArgs, induction: bool) -> Result<(Value, u8), Failure> {
    let market = load_market(&common)?;
    let cfg = solver_config(&common);
    let config = config_json("solve", &common, &[("induction", json!(induction))]);
    let body = if market.options.e() == 0 {
        let sol = backward_solve(&market.tree, &market.ambiguity, &market.claim, &cfg)?;
        report::solve_report(config, &market.tree, &sol, None, common.force)
    } else {
        let mode = if induction {
            AlphaMode::Induction
        } else {
            AlphaMode::Joint
        };
        let sol = solve_with_options_mode(
            &market.tree,
            &market.ambiguity,
            &market.claim,
            &market.options,
            &cfg,
            mode,
        )?;
        // Rebuild the backward view at the optimal static position for the
        // per-node table.
        let mut shifted = market.claim.clone();
        for (a, g) in sol.strategy.alpha.iter().zip(&market.options.payoffs) {
            shifted = shifted.axpy(*a, g).map_err(Failure::from)?;
        }
        let inner = backward_solve(
            &market.tree,
            &market.ambiguity,
            &shifted,
            &SolverConfig {
                force: true,
                ..cfg.clone()
            },
        )?;
        report::solve_report(
            config,
            &market.tree,
            &inner,
            Some((&sol.strategy.alpha, &sol.calibration_residuals)),
            common.force,
        )
    };
    Ok((body, 0))
}

fn run_superhedge(common: CommonArgs) -> Result<(Value, u8), Failure> {
    let market = load_market(&common)?;
    let cfg = solver_config(&common);
    let config = config_json("superhedge", &common, &[]);
    let sh = superhedge_price(
        &market.tree,
        &market.ambiguity,
        &market.claim,
        &market.options,
        &cfg,
    )?;
    let kernels: Vec<Value> = market
        .tree
        .interior()
        .map(|id| {
            let k = sh.witness.kernels[id].as_ref().expect("interior kernel");
            json!({
                "node": id,
                "weights": report::vec_num(k.as_slice()),
                "unvisited": sh.witness.unvisited.contains(&id),
            })
        })
        .collect();
    let leaf_law: Vec<Value> = market
        .tree
        .leaves()
        .iter()
        .zip(&sh.witness.leaf_law)
        .map(|(&id, &w)| json!({"leaf": id, "mass": report::num(w)}))
        .collect();
    let body = json!({
        "schema_version": report::SCHEMA_VERSION,
        "config": config,
        "pi": report::num(sh.pi),
        "witness": {"kernels": kernels, "leaf_law": leaf_law},
        "hedge_available": sh.hedge.is_some(),
    });
    Ok((body, 0))
}

fn run_curve(
    common: CommonArgs,
    gammas: String,
    plot_out: Option<PathBuf>,
) -> Result<(Value, u8), Failure> {
    let market = load_market(&common)?;
    let cfg = solver_config(&common);
    let config = config_json("curve", &common, &[("gammas", json!(gammas.clone()))]);
    let gammas = parse_list(&gammas).map_err(Failure::usage)?;
    let curve = gamma_curve(
        &market.tree,
        &market.ambiguity,
        &market.claim,
        &market.options,
        &gammas,
        &cfg,
    )?;
    if let Some(path) = plot_out {
        let mut text = String::from("gamma\tprice\tbound\n");
        for (g, p) in curve.gammas.iter().zip(&curve.prices) {
            text.push_str(&format!(
                "{}\t{}\t{}\n",
                report::sig(*g),
                report::sig(*p),
                report::sig(curve.pi_star - p)
            ));
        }
        std::fs::write(&path, text)
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok((report::curve_report(config, &curve), 0))
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number {t:?}: {e}"))
        })
        .collect()
}

/// Tiny deterministic generator for randomized claims.
struct XorShift(u64);

impl XorShift {
    fn next_unit(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn claim_values(
    spec: &str,
    seed: u64,
    tree: &treehedge_core::market::ScenarioTree,
) -> Result<Vec<f64>, Failure> {
    let leaves = tree.leaves();
    if spec == "zero" {
        return Ok(vec![0.0; leaves.len()]);
    }
    if let Some(strike) = spec.strip_prefix("call:") {
        let k: f64 = strike
            .parse()
            .map_err(|e| Failure::usage(format!("bad strike {strike:?}: {e}")))?;
        return Ok(leaves
            .iter()
            .map(|&l| (tree.node(l).stock[0] - k).max(0.0))
            .collect());
    }
    if let Some(range) = spec.strip_prefix("random:") {
        let r: f64 = range
            .parse()
            .map_err(|e| Failure::usage(format!("bad range {range:?}: {e}")))?;
        let mut gen = XorShift(seed.wrapping_add(0x9e37_79b9_7f4a_7c15).max(1));
        return Ok(leaves
            .iter()
            .map(|_| (2.0 * gen.next_unit() - 1.0) * r)
            .collect());
    }
    Err(Failure::usage(format!(
        "unknown claim spec {spec:?}; use zero, call:<strike> or random:<range>"
    )))
}

fn run_gen(model: GenCommand, seed: u64) -> Result<TreeSpec, Failure> {
    let (tree, ambiguity, claim_spec) = match model {
        GenCommand::Binomial {
            horizon,
            s0,
            p_lo,
            p_hi,
            down_lo,
            down_hi,
            up_lo,
            up_hi,
            grid,
            claim,
        } => {
            let spec = BinomialSpec {
                horizon,
                s0,
                p: (p_lo, p_hi),
                down: (down_lo, down_hi),
                up: (up_lo, up_hi),
                grid,
            };
            let (tree, ambiguity) = robust_binomial(&spec)?;
            (tree, ambiguity, claim)
        }
        GenCommand::Blackscholes {
            horizon,
            s0,
            dt,
            mu_lo,
            mu_hi,
            drift_grid,
            sigma,
            radius,
            return_grid,
            claim,
        } => {
            let spec = BlackScholesSpec {
                horizon,
                s0,
                dt,
                drift: (mu_lo, mu_hi),
                drift_grid,
                sigma,
                radius,
                return_grid: parse_list(&return_grid).map_err(Failure::usage)?,
            };
            let (tree, ambiguity) = robust_blackscholes(&spec)?;
            (tree, ambiguity, claim)
        }
        GenCommand::Wasserstein {
            s0,
            atoms,
            center,
            radius,
            order,
            claim,
        } => {
            let atoms = parse_list(&atoms).map_err(Failure::usage)?;
            let center = parse_list(&center).map_err(Failure::usage)?;
            let metric: Vec<Vec<f64>> = atoms
                .iter()
                .map(|&x| atoms.iter().map(|&y| (x - y).abs()).collect())
                .collect();
            let set = wasserstein_ball(&WassersteinSpec {
                center,
                radius,
                order,
                metric,
            })?;
            let mut parents = vec![None];
            let mut stocks = vec![vec![s0]];
            for &a in &atoms {
                parents.push(Some(0));
                stocks.push(vec![a]);
            }
            let tree = treehedge_core::market::ScenarioTree::from_parents(1, 1, parents, stocks)?;
            let mut ambiguity = vec![None; tree.len()];
            ambiguity[0] = Some(set);
            (tree, ambiguity, claim)
        }
    };
    let claim = ClaimVector::new(claim_values(&claim_spec, seed, &tree)?)?;
    let market = Market::new(tree, ambiguity, claim, OptionSet::empty())?;
    Ok(market.to_spec())
}

fn pretty_render(body: &Value) -> String {
    let mut out = String::new();
    let get = |k: &str| body.get(k);
    if let Some(nodes) = get("nodes").and_then(|v| v.as_array()) {
        out.push_str("node  verdict\n");
        for row in nodes {
            out.push_str(&format!(
                "{:>4}  {}\n",
                row["node"],
                row["verdict"].as_str().unwrap_or("?")
            ));
        }
        return out;
    }
    if let Some(curve) = get("curve").and_then(|v| v.as_array()) {
        out.push_str("gamma         price          bound\n");
        for row in curve {
            out.push_str(&format!(
                "{:<12}  {:<13}  {}\n",
                row["gamma"], row["price"], row["bound"]
            ));
        }
        out.push_str(&format!("pi_star: {}\n", body["pi_star"]));
        return out;
    }
    if let Some(pi) = get("pi") {
        out.push_str(&format!("superhedging price: {pi}\n"));
        return out;
    }
    if let Some(primal) = get("primal") {
        out.push_str(&format!(
            "primal: {primal}\ndual:   {}\ngap:    {}\n",
            body["dual"], body["gap"]
        ));
        if let Some(strategy) = get("strategy") {
            if let Some(rows) = strategy.get("h").and_then(|v| v.as_array()) {
                out.push_str("node  strategy\n");
                for row in rows {
                    out.push_str(&format!("{:>4}  {}\n", row["node"], row["h"]));
                }
            }
            if let Some(alpha) = strategy.get("alpha") {
                out.push_str(&format!("alpha: {alpha}\n"));
            }
        }
        if let Some(banner) = get("banner") {
            out.push_str(&format!("warning: {}\n", banner.as_str().unwrap_or("")));
        }
        return out;
    }
    serde_json::to_string_pretty(body).unwrap_or_default() + "\n"
}
