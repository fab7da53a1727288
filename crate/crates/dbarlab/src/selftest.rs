//! Fast checks whose answers are known exactly, run by `dbarlab selftest`.

use std::collections::BTreeMap;

use crate::config::Config;
use crate::dtn::{assemble_dtn, perturb_dtn, PerturbMode};
use crate::error::{Error, Result};
use crate::forward::ForwardSolver;
use crate::grid::{EnergyContext, PotentialField, SpatialGrid, SpectralGrid, C64};
use crate::harness::{bound_shape, fit_bound, StabilityRecord};
use crate::rh::{cauchy_boundary, cauchy_solid, reconstruct_v, BoundarySide, CauchyPlan, Route};
use crate::scattering::{compute_scattering, ScatteringData};

pub type Check = fn() -> Result<()>;

pub fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("config round trip", config_round_trip),
        ("zero potential gives mu = 1", free_forward),
        ("zero potential has zero scattering data", free_scattering),
        ("free data reconstruct to zero", free_reconstruction),
        ("Cauchy transforms of trivial data", trivial_cauchy),
        ("zero perturbation keeps the map", zero_perturbation),
        ("single-scale envelope fit", single_scale_fit),
    ]
}

fn ensure(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Format(format!("check failed: {what}")))
    }
}

fn small() -> Result<(PotentialField, EnergyContext, SpectralGrid)> {
    let v = PotentialField::zero(SpatialGrid::new(32, 1.5)?);
    Ok((v, EnergyContext::new(25.0)?, SpectralGrid::new(4.0, 8, 8, 32, 1e-3)?))
}

fn config_round_trip() -> Result<()> {
    let cfg = Config::parse("# sample\ngrid.n = 32\nexperiment.delta_list = 1e-1, 1e-2\n")?;
    ensure(Config::parse(&cfg.to_text())? == cfg, "parse(to_text) is the identity")?;
    ensure(cfg.list_or("experiment.delta_list", &[])? == vec![0.1, 0.01], "list parsing")
}

fn free_forward() -> Result<()> {
    let (v, energy, _) = small()?;
    let sol = ForwardSolver::new(&v, energy).solve_lambda(C64::new(2.0, 0.5))?;
    ensure(sol.mu.values.iter().all(|m| *m == C64::new(1.0, 0.0)), "mu identically one")
}

fn free_scattering() -> Result<()> {
    let (v, energy, grid) = small()?;
    let data = compute_scattering(&v, energy, &grid, None)?.data;
    ensure(data.r_values.iter().chain(&data.rho.values).all(|z| z.norm() == 0.0), "r and rho vanish")
}

fn free_reconstruction() -> Result<()> {
    let (v, energy, grid) = small()?;
    let rec = reconstruct_v(&ScatteringData::free(energy, grid), v.grid, Route::SpectralDz, Some(&v))?;
    ensure(rec.v_rec.sup_norm() == 0.0, "reconstruction vanishes")
}

fn trivial_cauchy() -> Result<()> {
    let grid = SpectralGrid::new(4.0, 8, 8, 32, 1e-3)?;
    let zero = cauchy_solid(&CauchyPlan::new(&grid), &vec![C64::new(0.0, 0.0); grid.n_nodes()])?;
    ensure(zero.iter().all(|z| z.norm() == 0.0), "transform of zero")?;
    let ones = vec![C64::new(1.0, 0.0); 16];
    let l = C64::from_polar(1.0, 0.4);
    ensure((cauchy_boundary(&ones, BoundarySide::Plus, l) - 1.0).norm() < 1e-13, "inner limit of a constant")?;
    ensure(cauchy_boundary(&ones, BoundarySide::Minus, l).norm() < 1e-13, "outer limit of a constant")
}

fn zero_perturbation() -> Result<()> {
    let (v, energy, _) = small()?;
    let phi = assemble_dtn(&v, energy, 64)?;
    let pert = perturb_dtn(&phi, 0.0, &PerturbMode::RankOne { seed: 1 })?;
    ensure(pert.delta == 0.0 && pert.operator.matrix == phi.matrix, "identical map at delta = 0")
}

fn single_scale_fit() -> Result<()> {
    let record = |err: f64| StabilityRecord {
        e: 100.0,
        delta: 1e-3,
        tau: 1.0,
        sup_error: err,
        bound_value: 0.0,
        diagnostics: BTreeMap::new(),
    };
    let records = [record(1.0), record(3.0), record(2.0)];
    let (c1, _) = fit_bound(&records, 3, 1.0)?;
    let expected = 3.0 / bound_shape(100.0, 1e-3, 1.0, 3);
    ensure((c1 - expected).abs() <= 1e-12 * expected, "C1 = max error / shape")
}
