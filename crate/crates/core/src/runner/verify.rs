//! Randomized verification of the convergence analysis.
//!
//! Each check instance becomes one JSON record; `summary.csv` tallies passes
//! per check. Instance parameters are drawn from a stream seeded by the run
//! seed, so reports are reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, VerifySpec};
use super::experiment::RunError;
use crate::optim::HyperParams;
use crate::sampling::RngStream;
use crate::theory::{
    check_lemma43, check_lemma44, check_regret, random_gradient_trace, regret_bound_rhs, run_online_convex,
    ConvexProblem, TraceSpec,
};

/// Sampling rates cycled through by the random instances.
pub const RATES: [f64; 4] = [0.2, 0.5, 0.8, 1.0];

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub check: &'static str,
    pub instance: usize,
    pub holds: bool,
    pub params: Value,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckTally {
    pub check: &'static str,
    pub instances: usize,
    pub passed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub records: Vec<CheckRecord>,
}

impl VerifyReport {
    /// Pass counts per check name, in first-seen order.
    pub fn tallies(&self) -> Vec<CheckTally> {
        let mut out: Vec<CheckTally> = Vec::new();
        for r in &self.records {
            let tally = match out.iter_mut().find(|t| t.check == r.check) {
                Some(t) => t,
                None => {
                    out.push(CheckTally {
                        check: r.check,
                        instances: 0,
                        passed: 0,
                    });
                    out.last_mut().unwrap()
                }
            };
            tally.instances += 1;
            tally.passed += usize::from(r.holds);
        }
        out
    }

    pub fn tally(&self, check: &str) -> Option<CheckTally> {
        self.tallies().into_iter().find(|t| t.check == check)
    }

    pub fn all_hold(&self) -> bool {
        self.records.iter().all(|r| r.holds)
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| RunError::Io { path: p, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut jsonl = String::new();
        for r in &self.records {
            jsonl.push_str(&serde_json::to_string(r).expect("records serialize"));
            jsonl.push('\n');
        }
        let p = dir.join("reports.jsonl");
        fs::write(&p, jsonl).map_err(io(&p))?;
        let mut csv = String::from("check,instances,passed,failed\n");
        for t in self.tallies() {
            writeln!(csv, "{},{},{},{}", t.check, t.instances, t.passed, t.instances - t.passed).unwrap();
        }
        let p = dir.join("summary.csv");
        fs::write(&p, csv).map_err(io(&p))
    }
}

fn trace_spec(rng: &mut RngStream, v: &VerifySpec, instance: usize) -> TraceSpec {
    TraceSpec {
        steps: 1 + rng.below(v.max_steps),
        dim: 1 + rng.below(v.max_dim),
        s: RATES[instance % RATES.len()],
        g_inf: rng.uniform(v.g_inf_min, v.g_inf_max),
    }
}

fn spec_json(spec: &TraceSpec) -> Value {
    json!({ "steps": spec.steps, "dim": spec.dim, "s": spec.s, "g_inf": spec.g_inf })
}

/// Summation inequality on `n` random traces.
pub fn verify_lemma43(rng: &mut RngStream, v: &VerifySpec, n: usize) -> Vec<CheckRecord> {
    (0..n)
        .map(|i| {
            let spec = trace_spec(rng, v, i);
            let trace = random_gradient_trace(rng, spec);
            let r = check_lemma43(&trace);
            let worst = r
                .coords
                .iter()
                .map(|c| (c.lhs_sampled - c.lhs_full).max(c.lhs_full - c.rhs))
                .fold(f64::NEG_INFINITY, f64::max);
            CheckRecord {
                check: "lemma43",
                instance: i,
                holds: r.holds,
                params: spec_json(&spec),
                details: json!({ "worst_violation": worst, "coords": r.coords }),
            }
        })
        .collect()
}

/// Moment-sum chain on `n` random traces; one record for the whole chain and
/// one per link.
pub fn verify_lemma44(
    rng: &mut RngStream,
    v: &VerifySpec,
    hp: &HyperParams,
    n: usize,
) -> Result<Vec<CheckRecord>, RunError> {
    let mut out = Vec::new();
    for i in 0..n {
        let spec = trace_spec(rng, v, i);
        let trace = random_gradient_trace(rng, spec);
        let r = check_lemma44(&trace, hp.beta1, hp.beta2, hp.lambda, hp.epsilon)?;
        let params = json!({
            "trace": spec_json(&spec),
            "beta1": hp.beta1, "beta2": hp.beta2, "lambda": hp.lambda, "epsilon": hp.epsilon,
        });
        let link = |name: &'static str, f: fn(&crate::theory::Lemma44Coord) -> bool| CheckRecord {
            check: name,
            instance: i,
            holds: r.coords.iter().all(f),
            params: params.clone(),
            details: Value::Null,
        };
        out.push(CheckRecord {
            check: "lemma44",
            instance: i,
            holds: r.holds,
            params: params.clone(),
            details: serde_json::to_value(&r).expect("report serializes"),
        });
        out.push(link("lemma44.sampled_le_full", |c| c.sampled_le_full));
        out.push(link("lemma44.full_le_bound_sampled", |c| c.full_le_bound_sampled));
        out.push(link("lemma44.bound_sampled_le_bound_full", |c| c.bound_sampled_le_bound_full));
        out.push(link("lemma44.per_sequence_bounds", |c| {
            c.sampled_le_own_bound && c.full_le_own_bound
        }));
    }
    Ok(out)
}

/// Regret bound and average-regret trend on `n` online convex instances,
/// alternating quadratic and logistic streams.
pub fn verify_regret(
    rng: &mut RngStream,
    v: &VerifySpec,
    hp: &HyperParams,
    n: usize,
) -> Result<Vec<CheckRecord>, RunError> {
    let mut out = Vec::new();
    for i in 0..n {
        let dim = 1 + rng.below(v.max_dim);
        let (problem, theta0) = if i % 2 == 0 {
            let weights = (0..dim).map(|_| rng.uniform(0.5, 2.0)).collect();
            let optimum = (0..dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let theta0: Vec<f64> = (0..dim).map(|_| rng.uniform(-3.0, 3.0)).collect();
            (ConvexProblem::quadratic(weights, optimum)?, theta0)
        } else {
            let problem = ConvexProblem::random_logistic(rng, dim, 100, 0.1)?;
            let theta0: Vec<f64> = (0..dim).map(|_| rng.uniform(-3.0, 3.0)).collect();
            (problem, theta0)
        };
        let hp = HyperParams {
            alpha: rng.uniform(0.05, 0.5),
            s: RATES[(i / 2) % RATES.len()],
            ..hp.clone()
        };
        let mut run_rng = rng.fork();
        let run = run_online_convex(&problem, &hp, &theta0, v.regret_horizon, &mut run_rng)?;
        let bound = regret_bound_rhs(&run.bound_inputs, &run.gradients)?;
        let check = check_regret(&run.regret, bound.total());
        let with_d = check_regret(&run.regret, bound.total_with_d());
        let (first, last) = run.regret.decile_means();
        let params = json!({
            "problem": problem.name(), "dim": dim, "horizon": v.regret_horizon,
            "alpha": hp.alpha, "s": hp.s, "beta1": hp.beta1, "beta2": hp.beta2, "lambda": hp.lambda,
        });
        out.push(CheckRecord {
            check: "regret_bound",
            instance: i,
            holds: check.holds,
            params: params.clone(),
            details: json!({ "check": check, "bound": bound, "inputs": run.bound_inputs }),
        });
        out.push(CheckRecord {
            check: "regret_bound_with_d",
            instance: i,
            holds: with_d.holds,
            params: params.clone(),
            details: json!({ "check": with_d }),
        });
        out.push(CheckRecord {
            check: "regret_decile_trend",
            instance: i,
            holds: last < first,
            params,
            details: json!({ "first_decile_mean": first, "last_decile_mean": last }),
        });
    }
    Ok(out)
}

/// Runs every check at the sizes in `cfg.verify`.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyReport, RunError> {
    cfg.validate()?;
    let v = &cfg.verify;
    let mut master = RngStream::new(cfg.seed);
    let mut rng43 = master.fork();
    let mut rng44 = master.fork();
    let mut rng_regret = master.fork();
    let mut records = verify_lemma43(&mut rng43, v, v.lemma43_traces);
    records.extend(verify_lemma44(&mut rng44, v, &cfg.hp, v.lemma44_traces)?);
    records.extend(verify_regret(&mut rng_regret, v, &cfg.hp, v.regret_instances)?);
    let report = VerifyReport { records };
    if let Some(dir) = &cfg.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}
