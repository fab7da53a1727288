use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use dbarlab::config::Config;
use dbarlab::dtn::{assemble_dtn, PerturbMode};
use dbarlab::forward::ForwardSolver;
use dbarlab::grid::{sobolev_norm_m1, weighted_fourier_norm, EnergyContext, SpatialGrid, C64};
use dbarlab::harness::{fit_log_bound, run_roundtrip, sweep_delta, sweep_energy, SweepReport, SweepSettings};
use dbarlab::io::{self, with_suffix, FieldValues};
use dbarlab::rh::{reconstruct_v, Route};
use dbarlab::scattering::compute_scattering;
use dbarlab::{Error, Result};

#[derive(Parser)]
#[command(name = "dbarlab", version, about = "Fixed-energy inverse scattering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Faddeev solution μ(·, k(λ)) at `forward.lambda = re, im`.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dirichlet-to-Neumann map on `dtn.n_b` boundary nodes.
    Dtn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scattering data r and ρ.
    Scatter {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Potential from a scattering file, or a full round trip from a config.
    Reconstruct {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        scat: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Points per side of the output grid.
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Half-width of the output grid.
        #[arg(long, default_value_t = 1.5)]
        half_width: f64,
        #[arg(long, default_value = "spectral_dz")]
        route: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction error against DtN perturbations of decreasing size.
    SweepDelta {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction error of a potential pair over increasing energies.
    SweepEnergy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quick checks with known answers.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dbarlab: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Forward { config, out } => forward(&Config::load(&config)?, &out),
        Command::Dtn { config, out } => dtn(&Config::load(&config)?, &out),
        Command::Scatter { config, out } => scatter(&Config::load(&config)?, &out),
        Command::Reconstruct {
            scat,
            config,
            grid,
            half_width,
            route,
            out,
        } => match (scat, config) {
            (Some(scat), _) => reconstruct(&scat, SpatialGrid::new(grid, half_width)?, Route::parse(&route)?, &out),
            (None, Some(config)) => roundtrip(&Config::load(&config)?, &out),
            (None, None) => Err(Error::Config("reconstruct needs --scat or --config".into())),
        },
        Command::SweepDelta { config, out } => run_sweep_delta(&Config::load(&config)?, &out),
        Command::SweepEnergy { config, out } => run_sweep_energy(&Config::load(&config)?, &out),
        Command::Selftest => selftest(),
    }
}

type Meta = Vec<(String, String)>;

fn meta_header(command: &str, cfg: Option<&Config>) -> Meta {
    let mut meta = vec![
        ("program".to_string(), "dbarlab".to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("command".to_string(), command.to_string()),
    ];
    if let Some(cfg) = cfg {
        meta.extend(cfg.entries().map(|(k, v)| (format!("config.{k}"), v.to_string())));
    }
    meta
}

fn push(meta: &mut Meta, key: &str, value: impl ToString) {
    meta.push((key.to_string(), value.to_string()));
}

/// Wall time goes to its own file so the other artifacts stay reproducible.
fn write_timing(out: &Path, started: Instant) -> Result<()> {
    std::fs::write(with_suffix(out, "timing"), format!("wall_seconds = {:.3}\n", started.elapsed().as_secs_f64()))?;
    Ok(())
}

fn energy_of(cfg: &Config) -> Result<EnergyContext> {
    let e = match cfg.get("experiment.E") {
        Some(_) => cfg.f64_or("experiment.E", 0.0)?,
        None => *cfg
            .require_list("experiment.E_list")?
            .first()
            .ok_or_else(|| Error::Config("experiment.E_list is empty".into()))?,
    };
    EnergyContext::new(e)
}

fn forward(cfg: &Config, out: &Path) -> Result<()> {
    let started = Instant::now();
    let v = cfg.potential("potential")?;
    let energy = energy_of(cfg)?;
    let l = cfg.list_or("forward.lambda", &[2.0, 0.0])?;
    if l.len() != 2 {
        return Err(Error::Config("forward.lambda needs two numbers: re, im".into()));
    }
    let sol = ForwardSolver::new(&v, energy).solve_lambda(C64::new(l[0], l[1]))?;
    io::write_field(&with_suffix(out, "potential.bin"), v.grid, &FieldValues::Real(v.values.clone()))?;
    io::write_field(&with_suffix(out, "mu.bin"), v.grid, &FieldValues::Complex(sol.mu.values.clone()))?;
    io::write_field_csv(&with_suffix(out, "mu.csv"), v.grid, &sol.mu.values)?;
    let alpha = cfg.f64_or("norm.alpha", 0.5)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("norm.alpha = {alpha} is outside (0, 1)")));
    }
    let mut meta = meta_header("forward", Some(cfg));
    push(&mut meta, "norm.sup", format!("{:e}", v.sup_norm()));
    push(&mut meta, "norm.m1", format!("{:e}", sobolev_norm_m1(&v, v.m)));
    push(&mut meta, "norm.alpha_m", format!("{:e}", weighted_fourier_norm(&v, v.m, alpha)));
    push(&mut meta, "iterations", sol.iterations);
    push(&mut meta, "residual", format!("{:e}", sol.residual));
    io::write_metadata(&with_suffix(out, "meta"), &meta)?;
    write_timing(out, started)
}

fn dtn(cfg: &Config, out: &Path) -> Result<()> {
    let started = Instant::now();
    let v = cfg.potential("potential")?;
    let op = assemble_dtn(&v, energy_of(cfg)?, cfg.usize_or("dtn.n_b", 64)?)?;
    io::write_dtn(&with_suffix(out, "dtn.bin"), &op)?;
    io::write_dtn_csv(&with_suffix(out, "dtn.csv"), &op)?;
    io::write_metadata(&with_suffix(out, "meta"), &meta_header("dtn", Some(cfg)))?;
    write_timing(out, started)
}

fn scatter(cfg: &Config, out: &Path) -> Result<()> {
    let started = Instant::now();
    let v = cfg.potential("potential")?;
    let run = compute_scattering(&v, energy_of(cfg)?, &cfg.spectral_grid()?, None)?;
    io::write_scattering(&with_suffix(out, "scat"), &run.data)?;
    io::write_scattering_csv(out, &run.data)?;
    let mut meta = meta_header("scatter", Some(cfg));
    push(&mut meta, "rho_gap", format!("{:e}", run.data.rho_gap));
    push(&mut meta, "contraction", run.data.contraction);
    push(&mut meta, "exceptional_nodes", run.data.exceptional.len());
    push(&mut meta, "unresolved_nodes", run.data.unresolved.len());
    io::write_metadata(&with_suffix(out, "meta"), &meta)?;
    write_timing(out, started)
}

fn reconstruct(scat: &Path, grid: SpatialGrid, route: Route, out: &Path) -> Result<()> {
    let started = Instant::now();
    let data = io::read_scattering(scat)?;
    let rec = reconstruct_v(&data, grid, route, None)?;
    io::write_field(&with_suffix(out, "v.bin"), grid, &FieldValues::Complex(rec.v_rec.values.clone()))?;
    io::write_field_csv(&with_suffix(out, "v.csv"), grid, &rec.v_rec.values)?;
    let mut meta = meta_header("reconstruct", None);
    push(&mut meta, "scat", scat.display());
    push(&mut meta, "route", route.name());
    push(&mut meta, "E", data.energy.e);
    push(&mut meta, "grid.n", grid.n);
    push(&mut meta, "grid.L", grid.half_width);
    push(&mut meta, "max_residual", format!("{:e}", rec.max_residual));
    push(&mut meta, "imag_sup", format!("{:e}", rec.imag_sup));
    push(&mut meta, "sup_v", format!("{:e}", rec.v_rec.sup_norm()));
    io::write_metadata(&with_suffix(out, "meta"), &meta)?;
    write_timing(out, started)
}

fn roundtrip(cfg: &Config, out: &Path) -> Result<()> {
    let started = Instant::now();
    let report = run_roundtrip(cfg)?;
    let grid = report.potential.grid;
    let rec = &report.reconstruction;
    io::write_scattering(&with_suffix(out, "scat"), &report.data)?;
    io::write_field(&with_suffix(out, "v.bin"), grid, &FieldValues::Complex(rec.v_rec.values.clone()))?;
    io::write_field_csv(&with_suffix(out, "v.csv"), grid, &rec.v_rec.values)?;
    let mut meta = meta_header("reconstruct", Some(cfg));
    push(&mut meta, "route", rec.route.name());
    push(&mut meta, "sup_error", format!("{:e}", report.sup_error));
    push(&mut meta, "relative_error", format!("{:e}", report.relative_error));
    push(&mut meta, "max_residual", format!("{:e}", rec.max_residual));
    push(&mut meta, "imag_sup", format!("{:e}", rec.imag_sup));
    push(&mut meta, "rho_gap", format!("{:e}", report.data.rho_gap));
    push(&mut meta, "contraction", report.data.contraction);
    io::write_metadata(&with_suffix(out, "meta"), &meta)?;
    write_timing(out, started)
}

fn perturb_mode(cfg: &Config) -> Result<PerturbMode> {
    let seed = cfg.u64_or("experiment.seed", 1)?;
    match cfg.str_or("experiment.perturb", "rank_one") {
        "rank_one" => Ok(PerturbMode::RankOne { seed }),
        "random_uniform" => Ok(PerturbMode::RandomUniform { seed }),
        other => Err(Error::Config(format!("unknown perturbation '{other}'"))),
    }
}

fn write_report(out: &Path, mut meta: Meta, report: &SweepReport) -> Result<()> {
    std::fs::write(with_suffix(out, "csv"), report.to_csv())?;
    match report.fitted_c1 {
        Some(c1) => push(&mut meta, "fitted_C1", format!("{c1:e}")),
        None => push(&mut meta, "fitted_C1", "undefined"),
    }
    push(&mut meta, "fit_residual", format!("{:e}", report.fit_residual));
    for (k, v) in &report.monotonicity_flags {
        push(&mut meta, &format!("flag.{k}"), v);
    }
    for (i, r) in report.records.iter().enumerate() {
        for (k, v) in &r.diagnostics {
            push(&mut meta, &format!("record.{i}.{k}"), format!("{v:e}"));
        }
    }
    io::write_metadata(&with_suffix(out, "meta"), &meta)
}

fn run_sweep_delta(cfg: &Config, out: &Path) -> Result<()> {
    let started = Instant::now();
    let v1 = cfg.potential("potential")?;
    let settings = SweepSettings::from_config(cfg)?;
    let deltas = cfg.require_list("experiment.delta_list")?;
    let mode = perturb_mode(cfg)?;
    let report = sweep_delta(&v1, energy_of(cfg)?.e, &deltas, &mode, &settings)?;
    let mut meta = meta_header("sweep-delta", Some(cfg));
    push(&mut meta, "seed", cfg.u64_or("experiment.seed", 1)?);
    if let Ok(fit) = fit_log_bound(&report.records, settings.m) {
        push(&mut meta, "log_fit.C2", format!("{:e}", fit.c2));
        push(&mut meta, "log_fit.alpha_hat", fit.alpha_hat);
        push(&mut meta, "log_fit.alpha_expected", fit.alpha_expected);
    }
    write_report(out, meta, &report)?;
    write_timing(out, started)
}

fn run_sweep_energy(cfg: &Config, out: &Path) -> Result<()> {
    let started = Instant::now();
    let v1 = cfg.potential("potential")?;
    let v2 = cfg.potential("potential2")?;
    let settings = SweepSettings::from_config(cfg)?;
    let energies = cfg.require_list("experiment.E_list")?;
    let report = sweep_energy(&v1, &v2, &energies, &settings)?;
    write_report(out, meta_header("sweep-energy", Some(cfg)), &report)?;
    write_timing(out, started)
}

fn selftest() -> Result<()> {
    let mut failed = 0;
    for (name, check) in dbarlab::selftest::checks() {
        match check() {
            Ok(()) => println!("ok    {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    if failed > 0 {
        return Err(Error::SelfTestFailed(failed));
    }
    Ok(())
}
