use std::path::Path;

use serde::Serialize;

use super::{Command, Flags, Manifest, OutDir, RunConfig, RunnerError};
use crate::chain::{
    contraction_coefficient, transience_verdict, validate_open, Chain, ChainDocument, TransienceVerdict,
    ValidationReport, VerdictOptions,
};
use crate::des::{self, empirical_rates, pooled_mean_in_system, PooledMean, Probe, SimStats};
use crate::network::NetworkSpec;
use crate::nlmp::{self, InitialState, NlmpRun};
use crate::ph::{self, Independence, PhReport};
use crate::service::{validate_regularity, RegularityReport};
use crate::trace::{detect_flattening_over, Flattening};
use crate::traffic::{check_underload, solve_traffic, LoadReport, TrafficSolution};

#[derive(Serialize)]
struct ChainOutput {
    verdict: TransienceVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<ValidationReport>,
    /// `max_i Σ_j (P^m)_ij` for a finite chain with `m` states.
    #[serde(skip_serializing_if = "Option::is_none")]
    contraction: Option<f64>,
}

#[derive(Serialize)]
struct TrafficOutput<'a> {
    solution: &'a TrafficSolution,
    load: &'a LoadReport,
}

#[derive(Serialize)]
struct ReplicationSummary<'a> {
    seed: u64,
    mean_in_system: f64,
    mean_queue: &'a [f64],
    queue_marginals: Vec<Vec<f64>>,
    events: u64,
    exogenous: u64,
    exits: u64,
    in_system: u64,
    flow_balanced: bool,
    fifo_violations: u64,
    conservation_violations: u64,
    routed: &'a [Vec<u64>],
}

#[derive(Serialize)]
struct SimOutput<'a> {
    pooled: PooledMean,
    replications: Vec<ReplicationSummary<'a>>,
}

#[derive(Serialize)]
struct Convergence<'a> {
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    flattening: Option<&'a Flattening>,
    #[serde(skip_serializing_if = "Option::is_none")]
    not_converged: Option<String>,
    /// `max_i |λ̂_i − V̄_i| / V̄_i` for open networks.
    #[serde(skip_serializing_if = "Option::is_none")]
    traffic_mismatch: Option<f64>,
    dt: f64,
    steps: usize,
    total_customers: f64,
}

#[derive(Serialize)]
struct PipelineOutput<'a> {
    load: &'a LoadReport,
    stages: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled_mean_in_system: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    independence: Option<&'a Independence>,
}

fn network(cfg: &RunConfig) -> Result<&NetworkSpec, RunnerError> {
    let spec = cfg
        .network
        .as_ref()
        .ok_or_else(|| RunnerError::Config("this command needs a network section".into()))?;
    spec.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
    Ok(spec)
}

fn traffic(cfg: &RunConfig, out: &OutDir) -> Result<(TrafficSolution, LoadReport), RunnerError> {
    let spec = network(cfg)?;
    let t = &cfg.traffic;
    let exo = if spec.is_closed() { vec![0.0; spec.types()] } else { spec.exogenous.clone() };
    let sol = solve_traffic(&exo, &spec.routing, t.tol, t.max_terms).map_err(|e| RunnerError::stage("traffic", e))?;
    let load = check_underload(&sol.vbar, &spec.service_means(), t.margin);
    out.json("traffic.json", &TrafficOutput { solution: &sol, load: &load })?;
    Ok((sol, load))
}

fn chain(cfg: &RunConfig, out: &OutDir) -> Result<Vec<String>, RunnerError> {
    let (doc, opts) = match (&cfg.chain, &cfg.network) {
        (Some(c), _) => (c.chain.clone(), c.options.clone()),
        (None, Some(n)) => (ChainDocument::Finite(n.routing.to_document()), VerdictOptions::default()),
        (None, None) => return Err(RunnerError::Config("chain needs a chain or network section".into())),
    };
    let chain = Chain::try_from(doc).map_err(|e| RunnerError::Config(e.to_string()))?;
    let verdict = transience_verdict(&chain, &opts).map_err(|e| RunnerError::stage("chain", e))?;
    let (validation, contraction) = match &chain {
        Chain::Finite(p) => (Some(validate_open(p)), Some(contraction_coefficient(p, p.dim()))),
        Chain::Countable(_) => (None, None),
    };
    let line = format!("zero-only invariant measure: {:?} ({:?})", verdict.zero_only_invariant, verdict.method);
    out.json("chain_verdict.json", &ChainOutput { verdict, validation, contraction })?;
    Ok(vec![line])
}

fn validate_dist(cfg: &RunConfig, out: &OutDir) -> Result<Vec<String>, RunnerError> {
    let laws = match (&cfg.distributions, &cfg.network) {
        (Some(d), _) => d.clone(),
        (None, Some(n)) => n.services.clone(),
        (None, None) => return Err(RunnerError::Config("validate-dist needs distributions or a network".into())),
    };
    let mut lines = Vec::new();
    let mut reports: Vec<RegularityReport> = Vec::new();
    for (i, d) in laws.iter().enumerate() {
        d.validate().map_err(|e| RunnerError::Config(format!("distribution {}: {e}", i + 1)))?;
        let r = validate_regularity(d, &cfg.regularity);
        lines.push(format!("{} {}: {:?}", i + 1, r.family, r.overall));
        reports.push(r);
    }
    out.json("regularity.json", &reports)?;
    Ok(lines)
}

/// Refuses overloaded open networks unless forced.
fn gate(load: &LoadReport, spec: &NetworkSpec, flags: &Flags) -> Result<(), RunnerError> {
    if !spec.is_closed() && !load.underloaded && !flags.force {
        return Err(RunnerError::Overloaded { rho_max: load.rho_max() });
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &OutDir) -> Result<Vec<SimStats>, RunnerError> {
    let spec = network(cfg)?;
    let sc = cfg.simulate.clone().unwrap_or_default();
    let mut opts = sc.options.clone();
    if opts.probes.is_empty() {
        opts = opts.with_probes(spec.types(), sc.probes_per_type.min(spec.servers));
    }
    let seeds: Vec<u64> = (0..sc.replications.max(1) as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let runs = des::replicate(spec, &opts, &seeds).map_err(|e| RunnerError::stage("simulate", e))?;
    for r in &runs {
        let tr = empirical_rates(r, opts.bin_width);
        out.with_file(&format!("sim_rates_{}.csv", r.seed), |f| tr.write_csv(f).map_err(|e| e.to_string()))?;
    }
    out.with_file("sim_interarrivals.csv", |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["seed", "type", "server", "gap"]).map_err(|e| e.to_string())?;
        for r in &runs {
            for (p, Probe { ty, server }) in r.probes.iter().enumerate() {
                for g in r.inter_arrivals(p) {
                    w.write_record([r.seed.to_string(), (ty + 1).to_string(), (server + 1).to_string(), g.to_string()])
                        .map_err(|e| e.to_string())?;
                }
            }
        }
        w.flush().map_err(|e| e.to_string())
    })?;
    let summary = SimOutput {
        pooled: pooled_mean_in_system(&runs),
        replications: runs
            .iter()
            .map(|r| ReplicationSummary {
                seed: r.seed,
                mean_in_system: r.mean_in_system,
                mean_queue: &r.mean_queue,
                queue_marginals: (0..r.types).map(|i| r.queue_marginal(i)).collect(),
                events: r.events,
                exogenous: r.exogenous,
                exits: r.exits,
                in_system: r.in_system,
                flow_balanced: r.flow_balanced(),
                fifo_violations: r.fifo_violations,
                conservation_violations: r.conservation_violations,
                routed: &r.routed,
            })
            .collect(),
    };
    out.json("sim_summary.json", &summary)?;
    Ok(runs)
}

struct NlmpResult {
    run: NlmpRun,
    flattening: Option<Flattening>,
    independence: Option<Independence>,
}

fn nlmp(cfg: &RunConfig, vbar: &[f64], out: &OutDir) -> Result<NlmpResult, RunnerError> {
    let spec = network(cfg)?;
    let nc = cfg.nlmp.clone().unwrap_or_default();
    let m = spec.types();
    let init = nc.initial.clone().unwrap_or_else(|| vec![InitialState::Empty; m]);
    let stage = |e: nlmp::NlmpError| RunnerError::stage("nlmp", e);
    let run = nlmp::integrate(spec, nc.horizon, &init, &nc.options).map_err(stage)?;
    out.with_file("nlmp_trace.csv", |f| run.trace.write_csv(f).map_err(|e| e.to_string()))?;
    out.with_file("nlmp_measures.csv", |f| run.write_measures_csv(f).map_err(|e| e.to_string()))?;
    let flat = detect_flattening_over(&run.trace, nc.flatten_window, nc.flatten_tol);
    let mismatch = match (&flat, spec.is_closed()) {
        (Ok(f), false) => Some(
            f.lambda_hat
                .iter()
                .zip(vbar)
                .map(|(l, v)| if *v > 0.0 { (l - v).abs() / v } else { l.abs() })
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    out.json(
        "nlmp_convergence.json",
        &Convergence {
            converged: flat.is_ok(),
            flattening: flat.as_ref().ok(),
            not_converged: flat.as_ref().err().map(|e| e.to_string()),
            traffic_mismatch: mismatch,
            dt: run.dt,
            steps: run.steps,
            total_customers: run.total_customers(),
        },
    )?;
    let flattening = flat.ok();
    if let (true, Some(f)) = (nc.stationary, &flattening) {
        let profiles = f
            .lambda_hat
            .iter()
            .zip(&spec.services)
            .map(|(&l, d)| nlmp::stationary_single_node(l, d, &nc.options))
            .collect::<Result<Vec<_>, _>>()
            .map_err(stage)?;
        out.json("nlmp_stationary.json", &profiles)?;
    }
    let independence = match &nc.compare_initial {
        Some(other) => {
            let b = nlmp::integrate(spec, nc.horizon, other, &nc.options).map_err(stage)?;
            let v = ph::initial_state_independence(&run.trace, &b.trace, nc.independence_warmup, nc.independence_tol)
                .map_err(|e| RunnerError::stage("nlmp", e))?;
            out.json("nlmp_independence.json", &v)?;
            Some(v)
        }
        None => None,
    };
    Ok(NlmpResult {
        run,
        flattening,
        independence,
    })
}

fn verify(cfg: &RunConfig, runs: &[SimStats], vbar: &[f64], divergence: Option<f64>, out: &OutDir) -> Result<Vec<PhReport>, RunnerError> {
    let spec = network(cfg)?;
    let vc = cfg.verify.clone().unwrap_or_default();
    let reference = if vc.reference && !spec.is_closed() {
        let opts = cfg.nlmp.as_ref().map(|n| n.options.clone()).unwrap_or_default();
        let nus = vbar
            .iter()
            .zip(&spec.services)
            .map(|(&l, d)| nlmp::stationary_single_node(l, d, &opts))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| RunnerError::stage("verify-ph", e))?;
        Some(nus)
    } else {
        None
    };
    let reports: Vec<PhReport> = runs
        .iter()
        .map(|r| {
            let mut rep = ph::report(r, reference.as_deref(), &vc.options);
            rep.divergence = divergence;
            rep
        })
        .collect();
    out.json("ph_report.json", &reports)?;
    let names: Vec<String> = reports.iter().map(|r| format!("{}-{}", vc.experiment, r.seed)).collect();
    out.with_file("ph_summary.csv", |f| {
        PhReport::write_summary_csv(names.iter().map(String::as_str).zip(&reports), f).map_err(|e| e.to_string())
    })?;
    Ok(reports)
}

/// Runs one subcommand against an already-loaded config. Returns short
/// human-readable result lines.
pub fn run_command(command: Command, cfg: &RunConfig, out: &Path, flags: &Flags) -> Result<Vec<String>, RunnerError> {
    let out = OutDir::create(out)?;
    out.json("manifest.json", &Manifest::new(command, cfg))?;
    match command {
        Command::Chain => chain(cfg, &out),
        Command::ValidateDist => validate_dist(cfg, &out),
        Command::Traffic => {
            let (sol, load) = traffic(cfg, &out)?;
            Ok(vec![format!("V̄ = {:?}, ρ = {:?}, underloaded: {}", sol.vbar, load.rho, load.underloaded)])
        }
        Command::Simulate => {
            let (_, load) = traffic(cfg, &out)?;
            gate(&load, network(cfg)?, flags)?;
            let runs = simulate(cfg, &out)?;
            Ok(vec![format!("mean in system {:.6}", pooled_mean_in_system(&runs).mean)])
        }
        Command::Nlmp => {
            let (sol, load) = traffic(cfg, &out)?;
            gate(&load, network(cfg)?, flags)?;
            let r = nlmp(cfg, &sol.vbar, &out)?;
            Ok(vec![match &r.flattening {
                Some(f) => format!("λ̂ = {:?}", f.lambda_hat),
                None => "rates did not flatten".into(),
            }])
        }
        Command::VerifyPh => {
            let (sol, load) = traffic(cfg, &out)?;
            gate(&load, network(cfg)?, flags)?;
            let runs = simulate(cfg, &out)?;
            let reports = verify(cfg, &runs, &sol.vbar, None, &out)?;
            Ok(reports
                .iter()
                .map(|r| format!("seed {}: median KS {:.4}, dispersion {:.3}", r.seed, r.median_ks, r.mean_dispersion))
                .collect())
        }
        Command::Pipeline => pipeline(cfg, &out, flags),
    }
}

fn pipeline(cfg: &RunConfig, out: &OutDir, flags: &Flags) -> Result<Vec<String>, RunnerError> {
    let spec = network(cfg)?;
    let (sol, load) = traffic(cfg, out)?;
    let mut stages = vec!["validate", "traffic", "underload"];
    let wants_work = cfg.simulate.is_some() || cfg.nlmp.is_some();
    let mut lines = vec![format!("ρ = {:?}, underloaded: {}", load.rho, load.underloaded)];
    let write = |stages: Vec<&'static str>, lambda_hat, pooled, independence| {
        out.json(
            "pipeline.json",
            &PipelineOutput {
                load: &load,
                stages,
                lambda_hat,
                pooled_mean_in_system: pooled,
                independence,
            },
        )
    };
    if wants_work {
        if let Err(e) = gate(&load, spec, flags) {
            write(stages, None, None, None)?;
            return Err(e);
        }
    }
    let nl = match cfg.nlmp {
        Some(_) => {
            stages.push("nlmp");
            Some(nlmp(cfg, &sol.vbar, out)?)
        }
        None => None,
    };
    let mut pooled = None;
    if cfg.simulate.is_some() {
        stages.push("simulate");
        let runs = simulate(cfg, out)?;
        pooled = Some(pooled_mean_in_system(&runs).mean);
        stages.push("verify-ph");
        let div = nl.as_ref().and_then(|n| n.independence.as_ref()).map(|i| i.divergence);
        let reports = verify(cfg, &runs, &sol.vbar, div, out)?;
        lines.extend(reports.iter().map(|r| format!("seed {}: median KS {:.4}", r.seed, r.median_ks)));
    }
    let lambda_hat = nl.as_ref().and_then(|n| n.flattening.as_ref()).map(|f| f.lambda_hat.clone());
    if let Some(l) = &lambda_hat {
        lines.push(format!("λ̂ = {l:?}"));
    }
    if let Some(n) = &nl {
        lines.push(format!("nlmp steps {}", n.run.steps));
    }
    write(stages, lambda_hat, pooled, nl.as_ref().and_then(|n| n.independence.as_ref()))?;
    Ok(lines)
}
