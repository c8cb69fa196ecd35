use crate::config::{
    self, DiagnoseConfig, FiniteDConfig, LvSimulateConfig, OptimizeConfig, PilotCommandConfig,
    TheoryGridConfig,
};
use crate::output::Outputs;
use crate::{Cli, Command};
use anyhow::{bail, Context, Result};
use psmrwm::diagnostics::{
    ks_against_gaussian, m2_bootstrap_bands, mgf_curves, qq_against_gaussian, variance_vs_m_slope,
    write_qq_csv, NoiseSample,
};
use psmrwm::filter::{lv_synthesize_data, LvParams};
use psmrwm::limit::{gaussian_acceptance, theory_grid, GridEntry, McConfig};
use psmrwm::noise::read_column_csv;
use psmrwm::par::Execution;
use psmrwm::rng::{mix, stream};
use psmrwm::study::{pilot_run, run_study, NoiseReport, StudyConfig};
use psmrwm::tuning::{
    optimize_ell_given_sigma2, optimize_finite_d_many, optimize_sar_joint,
    optimize_sigma2_given_ell, optimize_with_overhead,
};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::TheoryGrid => finish(
            cli,
            config::load(TheoryGridConfig::default(), cfg)?,
            theory_grid_cmd,
        ),
        Command::Optimize => finish(
            cli,
            config::load(OptimizeConfig::default(), cfg)?,
            optimize_cmd,
        ),
        Command::FiniteD => finish(
            cli,
            config::load(FiniteDConfig::default(), cfg)?,
            finite_d_cmd,
        ),
        Command::LvSimulate => finish(
            cli,
            config::load(LvSimulateConfig::default(), cfg)?,
            lv_simulate_cmd,
        ),
        Command::Pilot => {
            let base = PilotCommandConfig {
                study: study_base(cli),
                ..Default::default()
            };
            finish(cli, config::load(base, cfg)?, pilot_cmd)
        }
        Command::PmrwmRun => finish(cli, config::load(study_base(cli), cfg)?, study_cmd),
        Command::Diagnose => finish(
            cli,
            config::load(DiagnoseConfig::default(), cfg)?,
            diagnose_cmd,
        ),
    }
}

fn study_base(cli: &Cli) -> StudyConfig {
    if cli.paper_scale {
        StudyConfig::full_scale()
    } else {
        StudyConfig::default()
    }
}

fn execution(cli: &Cli) -> Execution {
    if cli.threads == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn finish<T: Serialize>(
    cli: &Cli,
    config: T,
    body: fn(&Cli, &T, &mut Outputs) -> Result<()>,
) -> Result<Vec<PathBuf>> {
    let name = cli.command.name();
    let mut out = Outputs::new(
        &cli.out,
        name,
        cli.seed,
        config::hash(&config)?,
        cli.stamp.as_deref(),
    )?;
    body(cli, &config, &mut out)?;
    out.finish(name, cli.config.as_deref(), serde_json::to_value(&config)?)
}

fn num(v: f64) -> String {
    v.to_string()
}

fn theory_grid_cmd(cli: &Cli, c: &TheoryGridConfig, out: &mut Outputs) -> Result<()> {
    let ells = c.ell.points();
    let sigmas = c.sigma.points();
    let mc = McConfig {
        exec: execution(cli),
        ..McConfig::new(c.mc_budget, cli.seed)
    };
    let mut w = out.csv(None)?;
    w.write_record([
        "family",
        "ell",
        "sigma2",
        "alpha",
        "alpha_se",
        "esjd",
        "j_rel",
        "eff",
        "alpha_max",
        "status",
    ])?;
    for (k, family) in c.families.iter().enumerate() {
        let fam_mc = McConfig {
            seed: mix(cli.seed, k as u64),
            ..mc
        };
        for entry in theory_grid(*family, &ells, &sigmas, &fam_mc)? {
            match entry {
                GridEntry::Row(r) => w.write_record([
                    family.name().to_string(),
                    num(r.ell),
                    num(r.sigma2),
                    num(r.alpha),
                    num(r.alpha_se),
                    num(r.esjd),
                    num(r.j_rel),
                    num(r.eff),
                    num(r.alpha_max),
                    "ok".into(),
                ])?,
                GridEntry::Skipped {
                    ell,
                    sigma2,
                    reason,
                } => {
                    let mut rec = vec![family.name().to_string(), num(ell), num(sigma2)];
                    rec.extend(std::iter::repeat_n(String::new(), 6));
                    rec.push(format!("skipped: {reason}"));
                    w.write_record(rec)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Conditional {
    given: f64,
    optimum: f64,
    alpha: f64,
}

fn optimize_cmd(_: &Cli, c: &OptimizeConfig, out: &mut Outputs) -> Result<()> {
    let joint = optimize_sar_joint(c.tol)?;
    let ell_given_sigma2 = c
        .sigma2
        .iter()
        .map(|&s2| {
            let ell = optimize_ell_given_sigma2(s2, c.tol)?;
            Ok(Conditional {
                given: s2,
                optimum: ell,
                alpha: gaussian_acceptance(ell, s2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma2_given_ell = c
        .ell
        .iter()
        .map(|&ell| {
            let s2 = optimize_sigma2_given_ell(ell, c.tol)?;
            Ok(Conditional {
                given: ell,
                optimum: s2,
                alpha: gaussian_acceptance(ell, s2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let overhead = c
        .t_rat
        .iter()
        .map(|&t| Ok(optimize_with_overhead(t, c.tol)?))
        .collect::<Result<Vec<_>>>()?;
    out.json(
        None,
        &serde_json::json!({
            "joint": joint,
            "ell_given_sigma2": ell_given_sigma2,
            "sigma2_given_ell": sigma2_given_ell,
            "overhead": overhead,
        }),
    )
}

fn finite_d_cmd(cli: &Cli, c: &FiniteDConfig, out: &mut Outputs) -> Result<()> {
    let rows = optimize_finite_d_many(&c.dims, c.tol, execution(cli))?;
    let mut w = out.csv(None)?;
    w.write_record(["d", "ell_opt", "sigma2_opt", "alpha_opt", "eff_opt"])?;
    for r in rows {
        w.write_record([
            r.d.unwrap_or(0).to_string(),
            num(r.ell_opt),
            num(r.sigma2_opt),
            num(r.alpha_at_opt),
            num(r.eff_at_opt),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn lv_simulate_cmd(cli: &Cli, c: &LvSimulateConfig, out: &mut Outputs) -> Result<()> {
    let params = LvParams::new(c.x)?;
    let ds = lv_synthesize_data(&params, c.u0, c.t_max, c.dt, &mut stream(cli.seed, 0))?;
    let mut w = out.csv(None)?;
    w.write_record(["t", "y1", "y2", "u1", "u2"])?;
    for ((t, y), u) in ds.data.times().iter().zip(ds.data.values()).zip(&ds.latent) {
        w.write_record([
            num(*t),
            num(y[0]),
            num(y[1]),
            u[0].to_string(),
            u[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn pilot_cmd(cli: &Cli, c: &PilotCommandConfig, out: &mut Outputs) -> Result<()> {
    let result = pilot_run(&c.study, &c.pilot, cli.seed)?;
    let mut study = c.study.clone();
    result.apply(&mut study);
    out.json(None, &result)?;
    // ready to pass to pmrwm-run --config
    out.json(Some("study-config"), &study)
}

fn study_cmd(cli: &Cli, c: &StudyConfig, out: &mut Outputs) -> Result<()> {
    let report = run_study(c, cli.seed, execution(cli))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out.json(None, &report)?;
    let mut w = out.csv(Some("cells"))?;
    w.write_record([
        "m",
        "gamma",
        "lambda",
        "n_iters",
        "acceptance",
        "acceptance_se",
        "predicted_acceptance",
        "esjd",
        "min_ess",
        "total_cost",
        "ess_per_cost",
        "ess_per_second",
    ])?;
    for cell in &report.cells {
        w.write_record([
            cell.m.to_string(),
            num(cell.gamma),
            num(cell.lambda),
            cell.n_iters.to_string(),
            num(cell.acceptance),
            num(cell.acceptance_se),
            num(cell.predicted_acceptance),
            num(cell.esjd),
            num(cell.min_ess),
            num(cell.total_cost),
            num(cell.ess_per_cost),
            num(cell.ess_per_second),
        ])?;
    }
    w.flush()?;
    for (cell, trace) in report.cells.iter().zip(&report.traces) {
        trace.write_csv(out.raw_csv(Some(&format!("trace-m{}-g{}", cell.m, cell.gamma)))?)?;
    }
    for s in &report.noise_samples {
        s.write_csv(out.raw_csv(Some(&format!("noise-m{}", s.m)))?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseSummary {
    noise: Vec<NoiseReport>,
    ks_passes: Vec<bool>,
    variance_slope: Option<(f64, f64)>,
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    match base.and_then(Path::parent) {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path,
    }
}

fn diagnose_cmd(cli: &Cli, c: &DiagnoseConfig, out: &mut Outputs) -> Result<()> {
    if c.noise.is_empty() {
        bail!("config lists no noise files");
    }
    let base = cli.config.as_deref();
    let samples = c
        .noise
        .iter()
        .map(|n| {
            let path = resolve(base, &n.path);
            let draws =
                read_column_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(NoiseSample::from_log_estimates(draws, n.m, Vec::new())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let l_hat = match &c.l_hat {
        Some(p) => Some(read_column_csv(&resolve(base, p))?),
        None => None,
    };
    for (k, s) in samples.iter().enumerate() {
        write_qq_csv(
            &qq_against_gaussian(s),
            out.raw_csv(Some(&format!("qq-m{}", s.m)))?,
        )?;
        if let Some(l) = &l_hat {
            let curves = mgf_curves(l, s, &c.t_grid, c.shift)?;
            curves.write_csv(out.raw_csv(Some(&format!("mgf-m{}", s.m)))?)?;
            let bands = m2_bootstrap_bands(
                l,
                s,
                &c.t_grid,
                c.shift,
                c.bootstrap,
                0.95,
                &mut stream(cli.seed, k as u64),
            )?;
            let mut w = out.csv(Some(&format!("mgf-bands-m{}", s.m)))?;
            w.write_record(["t", "lower", "upper", "std_error"])?;
            for i in 0..bands.t_grid.len() {
                w.write_record(
                    [
                        bands.t_grid[i],
                        bands.lower[i],
                        bands.upper[i],
                        bands.std_error[i],
                    ]
                    .map(num),
                )?;
            }
            w.flush()?;
        }
    }
    let summary = DiagnoseSummary {
        noise: samples.iter().map(NoiseReport::from_sample).collect(),
        ks_passes: samples
            .iter()
            .map(|s| ks_against_gaussian(s, 0.01).passes)
            .collect(),
        variance_slope: variance_vs_m_slope(&samples).ok(),
    };
    out.json(None, &summary)
}
