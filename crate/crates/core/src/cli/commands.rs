use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::input::{parse_grid_l, parse_grid_x, read_dataset, read_exposure_library, InputOptions};
use super::output::{
    read_draws, schema_writer, write_draws, write_json, write_surface, write_susceptibility, ChainSeed, RunManifest,
    StoredDraws, DIAGNOSTICS_SCHEMA, METRICS_SCHEMA, REPLICATES_SCHEMA,
};
use super::{ChainArgs, FitArgs, SimulateArgs, SummarizeArgs, SummaryArgs};
use crate::config::{ModelConfig, PerLag};
use crate::data::LaggedDataset;
use crate::error::{Error, Result};
use crate::inference::{
    gelman_rubin_draws, percent_change, quantile_sorted, summarize_matrices, susceptibility_from_indicators,
    SurfaceSummary, SusceptibilityProfile,
};
use crate::mcmc::{run_chains, ChainDiagnostics, ChainOutput, PreparedModel};
use crate::priors::selection_prior_from_interval;
use crate::simstudy::{
    evaluate_metrics, evaluation_grid_l, evaluation_grid_x, informative_priors, run_replicate,
    synthetic_exposure_library, true_effect_lags, truth_surface, MetricsReport, Scenario,
};

fn load_config(args: &ChainArgs) -> Result<ModelConfig> {
    let mut cfg = match &args.config {
        Some(p) => ModelConfig::from_json(&fs::read_to_string(p)?)?,
        None => ModelConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.chains {
        cfg.chains = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = args.thin {
        cfg.thinning = v;
    }
    Ok(cfg)
}

fn thread_pool(threads: Option<usize>, default: usize) -> Result<rayon::ThreadPool> {
    let n = threads.unwrap_or(default).max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::param(format!("cannot start {n} worker threads: {e}")))
}

/// 25 points from the 1st to the 99th percentile of the exposures.
fn default_grid_x(data: &LaggedDataset) -> Vec<f64> {
    let mut v: Vec<f64> = data.exposures().column(0).iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&v, 0.01);
    let hi = quantile_sorted(&v, 0.99);
    if hi <= lo {
        return vec![lo];
    }
    (0..25).map(|k| lo + (hi - lo) * k as f64 / 24.0).collect()
}

fn summarize_stored(draws: &StoredDraws, opts: &SummaryArgs) -> Result<(SurfaceSummary, SusceptibilityProfile)> {
    if !(0.0..=1.0).contains(&opts.threshold) {
        return Err(Error::param(format!(
            "threshold {} is not a probability",
            opts.threshold
        )));
    }
    let refs: Vec<_> = draws.surfaces.iter().collect();
    let mut surface = summarize_matrices(
        &refs,
        &draws.grid_x,
        &draws.grid_l,
        opts.level,
        opts.epsilon,
        opts.style.into(),
    )?;
    if opts.percent_change {
        surface = surface.map(percent_change);
    }
    let ind: Vec<&[bool]> = draws.indicators.iter().map(Vec::as_slice).collect();
    let sus = susceptibility_from_indicators(&ind, opts.threshold)?;
    Ok((surface, sus))
}

fn stored_from_chains(chains: &[ChainOutput], grid_x: &[f64], grid_l: &[usize]) -> StoredDraws {
    let all = chains.iter().flat_map(|c| c.draws.iter());
    StoredDraws {
        grid_x: grid_x.to_vec(),
        grid_l: grid_l.to_vec(),
        keys: all.clone().map(|d| (d.chain, d.iteration)).collect(),
        surfaces: all.clone().map(|d| d.surface.clone()).collect(),
        indicators: all.map(|d| d.lag_effects.clone()).collect(),
    }
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    schema: &'static str,
    median_rhat: Option<f64>,
    max_rhat: Option<f64>,
    retained_draws: usize,
    chains: Vec<&'a ChainDiagnostics>,
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut manifest = RunManifest::start("fit");
    manifest.add_input(&args.data)?;
    if let Some(p) = &args.chain.config {
        manifest.add_input(p)?;
    }
    let mut cfg = load_config(&args.chain)?;
    if let Some(l) = args.lags {
        cfg.lag_count = l;
    }
    if let Some(f) = args.family {
        cfg.outcome_family = f.into();
    }
    let opts = InputOptions {
        lag_count: cfg.lag_count,
        calendar_covariates: args.calendar_covariates,
        negate_exposure: args.negate_exposure,
    };
    let data = read_dataset(&args.data, &opts)?;
    let resolved = cfg.resolve(&data)?;
    let grid_x = match &args.grid_x {
        Some(s) => parse_grid_x(s)?,
        None => default_grid_x(&data),
    };
    let grid_l = match &args.grid_l {
        Some(s) => parse_grid_l(s, cfg.lag_count)?,
        None => (0..=cfg.lag_count).collect(),
    };
    manifest.config = serde_json::to_value(&resolved)?;
    manifest.seeds = (0..resolved.chains)
        .map(|c| ChainSeed {
            chain: c,
            seed: resolved.seed,
            stream: c as u64,
        })
        .collect();
    manifest.extra = json!({
        "rows_used": data.n(),
        "covariate_columns": data.covariates().ncols(),
        "negate_exposure": args.negate_exposure,
        "calendar_covariates": args.calendar_covariates,
        "grid_x": grid_x,
        "grid_l": grid_l,
        "level": args.summary.level,
        "epsilon": args.summary.epsilon,
        "threshold": args.summary.threshold,
        "percent_change": args.summary.percent_change,
    });

    let model = PreparedModel::new(data, resolved, &grid_x, &grid_l)?;
    let pool = thread_pool(args.chain.threads, model.config.chains)?;
    let chains = pool.install(|| run_chains(&model))?;

    let stored = stored_from_chains(&chains, &grid_x, &grid_l);
    let (surface, sus) = summarize_stored(&stored, &args.summary)?;
    let per_chain: Vec<_> = chains.iter().map(|c| c.draws.as_slice()).collect();
    let rhat = gelman_rubin_draws(&per_chain).ok();
    let median_rhat = rhat.as_ref().map(|g| g.median);
    match median_rhat {
        Some(r) if r > args.rhat_threshold => {
            eprintln!(
                "warning: median R-hat {r:.3} exceeds {}; chains may not have converged",
                args.rhat_threshold
            )
        }
        None => log::info!("R-hat needs at least two chains of 10 or more draws"),
        _ => {}
    }

    fs::create_dir_all(&args.out)?;
    write_surface(&args.out.join("surface.csv"), &surface)?;
    write_susceptibility(&args.out.join("susceptibility.csv"), &sus)?;
    write_json(
        &args.out.join("diagnostics.json"),
        &Diagnostics {
            schema: DIAGNOSTICS_SCHEMA,
            median_rhat,
            max_rhat: rhat.map(|g| g.map.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            retained_draws: stored.keys.len(),
            chains: chains.iter().map(|c| &c.diagnostics).collect(),
        },
    )?;
    if args.write_draws {
        write_draws(&args.out.join("draws"), &stored)?;
    }
    manifest.finish(&args.out.join("manifest.json"))
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let mut manifest = RunManifest::start("summarize");
    let draws = read_draws(&args.draws)?;
    let (surface, sus) = summarize_stored(&draws, &args.summary)?;
    fs::create_dir_all(&args.out)?;
    write_surface(&args.out.join("surface.csv"), &surface)?;
    write_susceptibility(&args.out.join("susceptibility.csv"), &sus)?;
    manifest.extra = json!({
        "draws": args.draws.display().to_string(),
        "level": args.summary.level,
        "epsilon": args.summary.epsilon,
        "threshold": args.summary.threshold,
        "percent_change": args.summary.percent_change,
    });
    manifest.finish(&args.out.join("manifest.json"))
}

fn write_metrics(path: &Path, labels: &[String], reports: &[MetricsReport]) -> Result<()> {
    let mut w = schema_writer(path, METRICS_SCHEMA)?;
    let mut header = vec!["metric".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    let rhat = |r: &MetricsReport| {
        let mut v: Vec<f64> = r.per_replicate.iter().filter_map(|p| p.median_rhat).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            String::new()
        } else {
            quantile_sorted(&v, 0.5).to_string()
        }
    };
    type Column = Box<dyn Fn(&MetricsReport) -> String>;
    let rows: [(&str, Column); 6] = [
        ("rmse", Box::new(|r| r.rmse.to_string())),
        ("coverage", Box::new(|r| r.coverage.to_string())),
        ("ci_width", Box::new(|r| r.ci_width.to_string())),
        ("precision", Box::new(|r| r.precision.to_string())),
        ("precision_undefined", Box::new(|r| r.precision_undefined.to_string())),
        ("median_rhat", Box::new(rhat)),
    ];
    for (name, f) in rows.iter() {
        let mut rec = vec![name.to_string()];
        rec.extend(reports.iter().map(f));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_replicates(path: &Path, labels: &[String], reports: &[MetricsReport]) -> Result<()> {
    let mut w = schema_writer(path, REPLICATES_SCHEMA)?;
    w.write_record([
        "scenario",
        "replicate",
        "rmse",
        "coverage",
        "ci_width",
        "precision",
        "declared",
        "median_rhat",
    ])?;
    for (label, rep) in labels.iter().zip(reports) {
        for r in &rep.per_replicate {
            let declared: Vec<String> = r.declared.iter().map(|l| l.to_string()).collect();
            w.write_record(&[
                label.clone(),
                r.replicate.to_string(),
                r.rmse.to_string(),
                r.coverage.to_string(),
                r.ci_width.to_string(),
                r.precision.map_or(String::new(), |p| p.to_string()),
                declared.join(";"),
                r.median_rhat.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.replicates == 0 {
        return Err(Error::param("replicates must be at least 1"));
    }
    let mut manifest = RunManifest::start("simulate");
    let mut base = load_config(&args.chain)?;
    base.lag_count = args.lags;
    let library = match &args.library {
        Some(p) => {
            manifest.add_input(p)?;
            read_exposure_library(p)?
        }
        None => synthetic_exposure_library(5000, base.seed),
    };
    let mut scenarios = Vec::new();
    for &fx in &args.fx {
        for &fl in &args.fl {
            for &noise in &args.noise {
                let mut s = Scenario::new(fx, fl, noise, base.seed);
                s.n = args.n;
                s.lag_count = args.lags;
                scenarios.push(s);
            }
        }
    }
    let grid_x = evaluation_grid_x();
    let grid_l = evaluation_grid_l(args.lags);
    let pool = thread_pool(args.chain.threads, base.chains)?;

    let mut labels = Vec::new();
    let mut reports = Vec::new();
    let mut priors = Vec::new();
    for sc in &scenarios {
        let mut cfg = base.clone();
        if args.informative {
            informative_priors(&mut cfg, sc.fl);
            let intervals = match &cfg.gamma_prior_intervals {
                Some(PerLag::Each(v)) => v.clone(),
                _ => Vec::new(),
            };
            let moments = intervals
                .iter()
                .map(|&(lo, hi)| selection_prior_from_interval(lo, hi))
                .collect::<Result<Vec<_>>>()?;
            priors.push(json!({
                "scenario": sc.label(),
                "gamma_prior_mean": moments.iter().map(|m| m.0).collect::<Vec<_>>(),
                "gamma_prior_var": moments.iter().map(|m| m.1).collect::<Vec<_>>(),
                "dirichlet_weights": cfg.dirichlet_weights,
            }));
        }
        let runs = pool.install(|| {
            (0..args.replicates)
                .into_par_iter()
                .map(|k| run_replicate(sc, &library, &cfg, k))
                .collect::<Result<Vec<_>>>()
        })?;
        let summaries: Vec<_> = runs.into_iter().map(|r| r.summary).collect();
        let truth = truth_surface(sc.fx, sc.fl, &grid_x, &grid_l);
        let report = evaluate_metrics(&summaries, &truth, &true_effect_lags(sc.fl))?;
        log::info!(
            "{}: rmse {:.3} coverage {:.3} precision {:.3}",
            sc.label(),
            report.rmse,
            report.coverage,
            report.precision
        );
        labels.push(sc.label());
        reports.push(report);
    }

    fs::create_dir_all(&args.out)?;
    write_metrics(&args.out.join("metrics.csv"), &labels, &reports)?;
    write_replicates(&args.out.join("replicates.csv"), &labels, &reports)?;
    manifest.config = serde_json::to_value(&base)?;
    manifest.seeds = (0..args.replicates)
        .flat_map(|k| {
            let seed = base.seed.wrapping_add(k as u64);
            (0..base.chains).map(move |c| ChainSeed {
                chain: c,
                seed,
                stream: c as u64,
            })
        })
        .collect();
    manifest.extra = json!({
        "scenarios": scenarios,
        "replicates": args.replicates,
        "library": if args.library.is_some() { "file" } else { "synthetic" },
        "informative": args.informative,
        "informative_priors": priors,
    });
    manifest.finish(&args.out.join("manifest.json"))
}
