//! Command-line front end.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::error::{Error, Result};
use crate::experiments::{
    bounds_check, convergence_study, localization_sweep, weak_strong_probe, ConvergenceSetup, ExactSolution,
};
use crate::init::{mode_perturbation, InitialData};
use crate::io::config::{localization_profile, parse_config, RunConfig};
use crate::io::{write_diagnostics_csv, write_snapshot};
use crate::kernels::{certify_positive_definite, check_detailed_balance, default_pd_tolerance, Verdict};
use crate::scheme::{estimate_lambda, simulate, Mode, SchemeConfig, Trajectory};

#[derive(Debug, Parser)]
#[command(name = "nlxdiff", version, about = "Nonlocal cross-diffusion simulator on the periodic torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for random initial data; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate the configured model and write diagnostics.
    Simulate,
    /// Integrate the local system with the configured interaction matrix.
    LocalSimulate,
    /// Detailed-balance and positive-definiteness certificate of the kernel.
    CheckKernel,
    /// Nonlocal-to-local distances over `[localization] epsilons`.
    LocalizationSweep,
    /// Relative-entropy comparison of perturbed and unperturbed runs.
    UniquenessProbe,
    /// Checks the exponential min/max envelope along a trajectory.
    BoundsCheck,
    /// Observed temporal and spatial orders.
    Convergence,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let Some(path) = cli.config.clone() else {
        eprintln!("error: --config <path> is required");
        return 2;
    };
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            warn!("could not configure thread pool: {e}");
        }
    }
    match parse_config(&path).and_then(|cfg| run(cli.command, &cfg, &cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn output_dir(cfg: &RunConfig, cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .output
        .clone()
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn finish_trajectory(traj: &Trajectory, cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_diagnostics_csv(traj, &dir.join("diagnostics.csv"))?;
    if cfg.output.snapshots {
        for (k, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
            write_snapshot(s, *t, &dir.join(format!("snapshot_{k:05}.nlxd")))?;
        }
    }
    if let Some(d) = traj.diagnostics.last() {
        println!(
            "t = {:.6}  steps = {}  H1 = {:.12e}  min = {:.6e}  max = {:.6e}",
            d.time,
            traj.diagnostics.len() - 1,
            d.entropy.h1,
            d.entropy.min_density,
            d.entropy.max_density
        );
    }
    match &traj.error {
        Some(e) => Err(e.clone()),
        None => Ok(()),
    }
}

/// Dispatches one subcommand.
pub fn run(command: Command, cfg: &RunConfig, cli: &Cli) -> Result<()> {
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    let dir = output_dir(cfg, cli)?;
    match command {
        Command::Simulate | Command::LocalSimulate => {
            let mode = if command == Command::LocalSimulate { Mode::Local } else { cfg.model.mode };
            let params = cfg.params_in(mode)?;
            let u0 = cfg.initial_state(cli.seed)?;
            let traj = simulate(&u0, &params, &cfg.scheme, &cfg.output_times())?;
            finish_trajectory(&traj, cfg, &dir)
        }
        Command::CheckKernel => {
            let k = cfg.kernel()?;
            let pi = cfg.measure()?;
            let tol = default_pd_tolerance(&k);
            println!("family: {}", cfg.kernel_spec()?.family.name());
            println!("pi: {:?}", pi.values());
            println!("detailed_balance_residual: {:e}", check_detailed_balance(&k, &pi));
            let cert = certify_positive_definite(&k, &pi, tol)?;
            let verdict = match cert.verdict {
                Verdict::PositiveDefinite => "positive_definite",
                Verdict::NotPositiveDefinite => "not_positive_definite",
                Verdict::Inconclusive => "inconclusive",
            };
            println!("verdict: {verdict}");
            println!("min_multiplier_eig: {:e}", cert.min_multiplier_eig);
            println!("normalized_min: {:e}", cert.normalized_min);
            println!("tolerance: {:e}", cert.tolerance);
            if let Some(w) = &cert.witness {
                println!("witness_mode: {:?}", &w.mode[..k.grid().dim()]);
                if let Some(field) = cert.witness_field(k.grid()) {
                    write_snapshot(&field, 0.0, &dir.join("witness.nlxd"))?;
                }
            }
            Ok(())
        }
        Command::LocalizationSweep => {
            let l = cfg
                .localization
                .as_ref()
                .ok_or_else(|| Error::ConfigInvalid(vec!["localization section is required".into()]))?;
            let u0 = cfg.initial_state(cli.seed)?;
            let rep = localization_sweep(
                &l.epsilons,
                &cfg.interaction()?,
                &cfg.measure()?,
                &u0,
                cfg.model.sigma,
                localization_profile(l)?,
                &cfg.scheme,
                &cfg.output_times(),
            )?;
            let mut text = String::from("epsilon,distance_l1,distance_l2\n");
            for ((e, d1), d2) in rep.epsilons.iter().zip(&rep.distances_l1).zip(&rep.distances_l2) {
                text.push_str(&format!("{},{},{}\n", num(*e), num(*d1), num(*d2)));
            }
            write_text(&dir.join("localization.csv"), &text)?;
            print!("{text}");
            println!("monotone: {}", rep.monotone);
            if let Some(s) = rep.l1_slope {
                println!("l1_slope: {s:.4}");
            }
            Ok(())
        }
        Command::UniquenessProbe => {
            let q = cfg
                .uniqueness
                .clone()
                .ok_or_else(|| Error::ConfigInvalid(vec!["uniqueness section is required".into()]))?;
            let params = cfg.params()?;
            let u0 = cfg.initial_state(cli.seed)?;
            let grid = *u0.grid();
            let pert = mode_perturbation(grid, u0.species_count(), q.amplitude, &q.mode);
            let pert = pert.axpy(1.0, &crate::grid::FieldSet::constant(grid, &vec![q.offset; u0.species_count()]))?;
            let cross = SchemeConfig {
                variant: q.cross_variant.unwrap_or(cfg.scheme.variant),
                newton_tol: q.cross_newton_tol.unwrap_or(cfg.scheme.newton_tol),
                flux_average: q.cross_flux_average.unwrap_or(cfg.scheme.flux_average),
                ..cfg.scheme.clone()
            };
            let rep = weak_strong_probe(&u0, &pert, &params, &cfg.scheme, &cfg.output_times(), Some(&cross))?;
            let mut text = String::from("time,rel_entropy,ckp_bound,l1_distance\n");
            for k in 0..rep.times.len() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    num(rep.times[k]),
                    num(rep.rel_entropy[k]),
                    num(rep.ckp_bound[k]),
                    num(rep.l1_distances[k])
                ));
            }
            write_text(&dir.join("uniqueness.csv"), &text)?;
            println!("ckp_holds: {}", rep.ckp_holds(1e-12));
            println!("same_init_max_distance: {:e}", rep.same_init_max_distance);
            if let Some(c) = rep.gronwall_fit_c {
                println!("gronwall_fit_c: {c:.6}");
            }
            Ok(())
        }
        Command::BoundsCheck => {
            let params = cfg.params_in(Mode::Nonlocal)?;
            let u0 = cfg.initial_state(cli.seed)?;
            let scale = cfg.bounds.as_ref().map_or(1.0, |b| b.lambda_scale);
            let k = params.kernel.as_ref().expect("nonlocal parameters carry a kernel");
            let lambda = scale * estimate_lambda(k, &u0, &params.pi)?;
            let traj = simulate(&u0, &params, &cfg.scheme, &cfg.output_times())?;
            write_diagnostics_csv(&traj, &dir.join("diagnostics.csv"))?;
            if let Some(e) = traj.error {
                return Err(e);
            }
            let rep = bounds_check(&traj, lambda, u0.min(), u0.max());
            println!("lambda: {lambda:e}");
            println!("checked: {}", rep.checked);
            match rep.first_violation {
                None => {
                    println!("bounds: pass");
                    Ok(())
                }
                Some(v) => {
                    println!("bounds: fail");
                    Err(Error::InvalidScheme(format!(
                        "bound violated at t = {} (species {}, value {:e}, envelope [{:e}, {:e}])",
                        v.time, v.species, v.value, v.lower, v.upper
                    )))
                }
            }
        }
        Command::Convergence => {
            let c = cfg
                .convergence
                .clone()
                .ok_or_else(|| Error::ConfigInvalid(vec!["convergence section is required".into()]))?;
            let exact = heat_reference(cfg);
            let make = |g: crate::grid::TorusGrid| {
                let mut local = cfg.clone();
                local.grid.cells = g.cells();
                local.params()
            };
            let setup = ConvergenceSetup {
                dim: cfg.grid.dim,
                period: cfg.grid.period,
                make_params: &make,
                initial: cfg.initial.clone(),
                config: cfg.scheme.clone(),
                temporal_cells: c.temporal_cells.unwrap_or(cfg.grid.cells),
                exact: exact.as_ref().map(|b| b.as_ref() as &ExactSolution),
            };
            let rep = convergence_study(&c.taus, &c.cells, &setup)?;
            let mut text = String::from("kind,resolution,error\n");
            for (t, e) in rep.taus.iter().zip(&rep.temporal_errors) {
                text.push_str(&format!("time,{},{}\n", num(*t), num(*e)));
            }
            for (n, e) in rep.cells.iter().zip(&rep.spatial_errors) {
                text.push_str(&format!("space,{n},{}\n", num(*e)));
            }
            write_text(&dir.join("convergence.csv"), &text)?;
            print!("{text}");
            println!("reference: {}", if rep.exact_reference { "exact" } else { "finest run" });
            if let Some(o) = rep.temporal_order {
                println!("temporal_order: {o:.4}");
            }
            if let Some(o) = rep.spatial_order {
                println!("spatial_order: {o:.4}");
            }
            Ok(())
        }
    }
}

/// Exact solution for decoupled heat equations started from a single mode.
fn heat_reference(cfg: &RunConfig) -> Option<Box<ExactSolution>> {
    if !cfg.interaction().ok()?.is_zero() {
        return None;
    }
    let InitialData::SingleMode { base, amplitude, mode } = &cfg.initial else {
        return None;
    };
    let (base, amplitude, mode) = (base.clone(), *amplitude, mode.clone());
    let l = cfg.grid.period;
    let sigma = cfg.model.sigma;
    let two_pi = 2.0 * std::f64::consts::PI;
    let k2: f64 = mode.iter().map(|m| (two_pi * *m as f64 / l).powi(2)).sum();
    info!("using the exact heat solution as convergence reference");
    Some(Box::new(move |i: usize, x: [f64; 2], t: f64| {
        let phase: f64 = mode.iter().enumerate().map(|(a, m)| *m as f64 * x[a]).sum();
        base[i] * (1.0 + amplitude * (-sigma * k2 * t).exp() * (two_pi * phase / l).cos())
    }))
}
