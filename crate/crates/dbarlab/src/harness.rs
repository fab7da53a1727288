//! Stability experiments: perturbed-data reconstructions, sweeps over the
//! DtN distance and over the energy, and envelope fits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::Config;
use crate::dtn::{assemble_dtn, opnorm_linf, BoundaryOperator, PerturbMode, perturb_dtn};
use crate::error::{Error, Result, Stage};
use crate::grid::{EnergyContext, GridId, PotentialField, SpatialGrid, SpectralGrid, DOMAIN_RADIUS, C64};
use crate::rh::{reconstruct_v, ReconstructionResult, Route};
use crate::scattering::{
    compute_scattering, diff_b_from_dtn, diff_f_from_dtn, r_of_lambda, rho_from_f, BoundaryTraces, ScatteringData,
    ScatteringRun, TorusKernel,
};
use crate::stats::linear_fit;

/// Diameter of the unit disc, the l in the truncation radius.
const DIAMETER: f64 = 2.0 * DOMAIN_RADIUS;

/// One experiment row.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRecord {
    pub e: f64,
    /// Measured DtN distance.
    pub delta: f64,
    pub tau: f64,
    /// sup over D of the reconstruction difference.
    pub sup_error: f64,
    /// Fitted envelope at this record; zero until a fit is made.
    pub bound_value: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub records: Vec<StabilityRecord>,
    /// None when the envelope fit is undefined (fewer than three records or
    /// all errors zero).
    pub fitted_c1: Option<f64>,
    /// max sup_error / envelope before the constant is raised to majorize.
    pub fit_residual: f64,
    pub monotonicity_flags: BTreeMap<String, bool>,
}

impl SweepReport {
    /// `E,delta,tau,sup_error,bound_value,flag`, 17 significant digits. The
    /// flag column is the conjunction of the monotonicity flags.
    pub fn to_csv(&self) -> String {
        let flag = self.monotonicity_flags.values().all(|&b| b);
        let mut s = String::from("E,delta,tau,sup_error,bound_value,flag\n");
        for r in &self.records {
            writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.e, r.delta, r.tau, r.sup_error, r.bound_value, flag
            )
            .unwrap();
        }
        s
    }
}

/// Grids and exponents shared by the sweeps.
#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub spectral: SpectralGrid,
    pub n_b: usize,
    pub route: Route,
    pub tau: f64,
    pub m: u32,
}

impl SweepSettings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let tau = cfg.f64_or("experiment.tau", 1.0)?;
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("experiment.tau = {tau} is outside (0, 1]")));
        }
        Ok(SweepSettings {
            spectral: cfg.spectral_grid()?,
            n_b: cfg.usize_or("dtn.n_b", 64)?,
            route: Route::parse(cfg.str_or("experiment.route", "spectral_dz"))?,
            tau,
            m: cfg.usize_or("experiment.m", 3)? as u32,
        })
    }
}

/// E δ^τ + (√E + (1 - τ) log(3 + 1/δ))^{-(m-2)}.
pub fn bound_shape(e: f64, delta: f64, tau: f64, m: u32) -> f64 {
    let decay = if delta == 0.0 && tau < 1.0 {
        0.0
    } else {
        let log_term = if tau < 1.0 { (1.0 - tau) * (3.0 + 1.0 / delta).ln() } else { 0.0 };
        (e.sqrt() + log_term).powf(-(m as f64 - 2.0))
    };
    e * delta.powf(tau) + decay
}

/// a = 1 + κ log(3 + 1/δ)/√E with κ = (1 - τ)/(4(l + 1)); data are trusted
/// on 1/a < |λ| < a.
pub fn truncation_radius(e: f64, delta: f64, tau: f64) -> f64 {
    let kappa = (1.0 - tau) / (4.0 * (DIAMETER + 1.0));
    1.0 + kappa * (3.0 + 1.0 / delta).ln() / e.sqrt()
}

fn in_annulus(rho: f64, a: f64) -> bool {
    1.0 / a < rho && rho < a
}

fn stage(e: Error, s: Stage) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => other.at(s),
    }
}

/// sup over nodes in D of |a - b|.
pub fn sup_in_domain(a: &ReconstructionResult, b: &ReconstructionResult) -> f64 {
    let grid = match a.v_rec.grid_id {
        GridId::Spatial { n, half_width } => SpatialGrid { n, half_width },
        _ => unreachable!("reconstructions live on spatial grids"),
    };
    (0..grid.len())
        .filter(|&i| {
            let (x, y) = grid.point(i);
            x.hypot(y) < DOMAIN_RADIUS
        })
        .map(|i| (a.v_rec.values[i] - b.v_rec.values[i]).norm())
        .fold(0.0, f64::max)
}

/// Scattering data of the perturbed map `phi2`, obtained from the first
/// potential's data through the DtN difference identities. With the second
/// potential's traces the identities are exact; without them ψ₂ ≈ ψ₁. For
/// δ > 0 the amplitude is kept only on the annulus of [`truncation_radius`]
/// and set to zero elsewhere.
pub fn perturbed_data(
    first: &ScatteringRun,
    phi1: &BoundaryOperator,
    phi2: &BoundaryOperator,
    second_traces: Option<&BoundaryTraces>,
    delta: f64,
    tau: f64,
) -> Result<(ScatteringData, BTreeMap<String, f64>)> {
    let mut diag = BTreeMap::new();
    if delta == 0.0 {
        return Ok((first.data.clone(), diag));
    }
    let t1 = first
        .traces
        .as_ref()
        .ok_or_else(|| Error::Config("perturbed data need boundary traces".into()))?;
    let t2 = second_traces.unwrap_or(t1);
    let data = &first.data;
    let grid = &data.grid;
    let nt = grid.n_theta();
    let e = data.energy.e;
    let a = truncation_radius(e, delta, tau);
    let b_tilde: Vec<C64> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|idx| {
            let (ir, j) = (idx / nt, idx % nt);
            if !in_annulus(grid.radii[ir], a) {
                return C64::new(0.0, 0.0);
            }
            // ψ(·, k̄) lives at 1/λ̄: mirrored radius, same angle
            let mirror = grid.mirror_radius(ir) * nt + j;
            let (u, w) = (&t1.annulus[mirror], &t2.annulus[idx]);
            if u.is_empty() || w.is_empty() {
                return data.b_values[idx];
            }
            data.b_values[idx] + diff_b_from_dtn(phi1, phi2, u, w)
        })
        .collect();
    let mut delta_r_a = 0.0f64;
    for (idx, (bt, b1)) in b_tilde.iter().zip(&data.b_values).enumerate() {
        if in_annulus(grid.radii[idx / nt], a) {
            delta_r_a = delta_r_a.max(r_of_lambda(bt - b1, grid.node(idx))?.norm());
        }
    }
    let n = data.rho.n;
    let f1 = &first.torus.f;
    let f_values: Vec<C64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (p, q) = (idx / n, idx % n);
            // φ⁺(·, -k(λ')) is the outgoing solution at the antipode of λ'
            f1.values[idx] + diff_f_from_dtn(phi1, phi2, &t1.outgoing[(q + n / 2) % n], &t2.outgoing[p])
        })
        .collect();
    let f_tilde = TorusKernel {
        n,
        kind: f1.kind,
        values: f_values,
    };
    let rho = rho_from_f(&f_tilde).map_err(|e| stage(e, Stage::Scattering))?;
    let mut out = ScatteringData::from_parts(data.energy, grid.clone(), b_tilde, rho.rho)?;
    out.exceptional = data.exceptional.clone();
    out.unresolved = data.unresolved.clone();
    out.rho_gap = rho.relative_gap;
    out.contraction = rho.contraction;
    diag.insert("a".into(), a);
    diag.insert("delta_r_a".into(), delta_r_a);
    diag.insert("contraction".into(), rho.contraction);
    diag.insert("rho_gap".into(), rho.relative_gap);
    Ok((out, diag))
}

struct Baseline {
    run: ScatteringRun,
    phi: BoundaryOperator,
    rec: ReconstructionResult,
}

fn baseline(v: &PotentialField, energy: EnergyContext, s: &SweepSettings, with_traces: bool) -> Result<Baseline> {
    let phi = assemble_dtn(v, energy, s.n_b).map_err(|e| stage(e, Stage::Dtn))?;
    let run = compute_scattering(v, energy, &s.spectral, with_traces.then_some(s.n_b))
        .map_err(|e| stage(e, Stage::Scattering))?;
    let rec = reconstruct_v(&run.data, v.grid, s.route, Some(v))?;
    Ok(Baseline { run, phi, rec })
}

fn finish(mut records: Vec<StabilityRecord>, flags: BTreeMap<String, bool>, s: &SweepSettings) -> SweepReport {
    let (fitted_c1, fit_residual) = match fit_bound(&records, s.m, s.tau) {
        Ok((c1, res)) => (Some(c1), res),
        Err(_) => (None, 0.0),
    };
    if let Some(c1) = fitted_c1 {
        for r in &mut records {
            r.bound_value = c1 * bound_shape(r.e, r.delta, r.tau, s.m);
        }
    }
    SweepReport {
        records,
        fitted_c1,
        fit_residual,
        monotonicity_flags: flags,
    }
}

/// Reconstruction error against DtN perturbations of size δ at one energy.
/// The error is measured against the reconstruction from unperturbed data.
pub fn sweep_delta(
    v1: &PotentialField,
    e: f64,
    deltas: &[f64],
    mode: &PerturbMode,
    s: &SweepSettings,
) -> Result<SweepReport> {
    if deltas.iter().any(|&d| !(d >= 0.0)) || deltas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("delta list must be nonnegative and sorted".into()));
    }
    let energy = EnergyContext::new(e)?;
    let base = baseline(v1, energy, s, true)?;
    let mut records = deltas
        .par_iter()
        .map(|&target| -> Result<StabilityRecord> {
            let pert = perturb_dtn(&base.phi, target, mode)?;
            let (data, mut diagnostics) = perturbed_data(&base.run, &base.phi, &pert.operator, None, pert.delta, s.tau)?;
            let rec = reconstruct_v(&data, v1.grid, s.route, None)?;
            diagnostics.insert("max_residual".into(), rec.max_residual);
            diagnostics.insert("delta_target".into(), target);
            Ok(StabilityRecord {
                e,
                delta: pert.delta,
                tau: s.tau,
                sup_error: sup_in_domain(&rec, &base.rec),
                bound_value: 0.0,
                diagnostics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let mut flags = BTreeMap::new();
    flags.insert(
        "error_nondecreasing_in_delta".into(),
        records.windows(2).all(|w| w[1].sup_error >= w[0].sup_error),
    );
    Ok(finish(records, flags, s))
}

/// Largest ratio of measured δ across a sweep beyond which the energy trend
/// is not attributed to the energy alone.
pub const DELTA_DRIFT: f64 = 2.0;

/// For each energy, the second potential's data are rebuilt from the first
/// potential's data and the DtN difference, then truncated as in
/// [`perturbed_data`]; the error is measured against the reconstruction
/// from the second potential's own data.
pub fn sweep_energy(v1: &PotentialField, v2: &PotentialField, energies: &[f64], s: &SweepSettings) -> Result<SweepReport> {
    if energies.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("energy list must be strictly increasing".into()));
    }
    let records = energies
        .iter()
        .map(|&e| -> Result<StabilityRecord> {
            let energy = EnergyContext::new(e)?;
            let first = baseline(v1, energy, s, true)?;
            let second = baseline(v2, energy, s, true)?;
            let delta = opnorm_linf(&second.phi.difference(&first.phi), s.n_b);
            let (data, mut diagnostics) = perturbed_data(
                &first.run,
                &first.phi,
                &second.phi,
                second.run.traces.as_ref(),
                delta,
                s.tau,
            )?;
            let rec = reconstruct_v(&data, v2.grid, s.route, None)?;
            diagnostics.insert("max_residual".into(), rec.max_residual);
            diagnostics.insert("direct_error_first".into(), first.rec.error_vs_truth.unwrap_or(0.0));
            diagnostics.insert("direct_error_second".into(), second.rec.error_vs_truth.unwrap_or(0.0));
            Ok(StabilityRecord {
                e,
                delta,
                tau: s.tau,
                sup_error: sup_in_domain(&rec, &second.rec),
                bound_value: 0.0,
                diagnostics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let deltas: Vec<f64> = records.iter().map(|r| r.delta).collect();
    let (lo, hi) = deltas.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &d| (l.min(d), h.max(d)));
    let comparable = records.is_empty() || hi <= DELTA_DRIFT * lo;
    let decreasing = records.windows(2).all(|w| w[1].sup_error < w[0].sup_error);
    let mut flags = BTreeMap::new();
    flags.insert("delta_within_factor_2".into(), comparable);
    flags.insert("error_decreasing_in_energy".into(), comparable && decreasing);
    Ok(finish(records, flags, s))
}

/// Least-squares C₁ for the envelope C₁·[bound_shape]. Returns the constant
/// raised just enough to majorize every record, and the ratio
/// max sup_error/envelope of the plain least-squares constant.
pub fn fit_bound(records: &[StabilityRecord], m: u32, tau: f64) -> Result<(f64, f64)> {
    if records.len() < 3 {
        return Err(Error::Config(format!("envelope fit needs at least 3 records, got {}", records.len())));
    }
    if records.iter().all(|r| r.sup_error == 0.0) {
        return Err(Error::DegenerateFit);
    }
    let shapes: Vec<f64> = records.iter().map(|r| bound_shape(r.e, r.delta, tau, m)).collect();
    let num: f64 = records.iter().zip(&shapes).map(|(r, s)| r.sup_error * s).sum();
    let den: f64 = shapes.iter().map(|s| s * s).sum();
    if den == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let c_ls = num / den;
    let residual = records
        .iter()
        .zip(&shapes)
        .map(|(r, s)| if r.sup_error == 0.0 { 0.0 } else { r.sup_error / (c_ls * s) })
        .fold(0.0, f64::max);
    Ok((c_ls * residual.max(1.0), residual))
}

/// Fit of sup_error ≈ C₂ (log(3 + 1/δ))^{-α}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogFit {
    pub c2: f64,
    pub alpha_hat: f64,
    /// m - 2, the exponent the estimate predicts.
    pub alpha_expected: f64,
}

pub fn fit_log_bound(records: &[StabilityRecord], m: u32) -> Result<LogFit> {
    let usable: Vec<&StabilityRecord> = records.iter().filter(|r| r.delta > 0.0).collect();
    let (lo, hi) = usable
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(r.delta), h.max(r.delta)));
    if usable.len() < 4 || hi < 100.0 * lo {
        return Err(Error::InsufficientSpan);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = usable
        .iter()
        .filter(|r| r.sup_error > 0.0)
        .map(|r| ((3.0 + 1.0 / r.delta).ln().ln(), r.sup_error.ln()))
        .unzip();
    let (slope, intercept) = linear_fit(&x, &y).ok_or(Error::DegenerateFit)?;
    Ok(LogFit {
        c2: intercept.exp(),
        alpha_hat: -slope,
        alpha_expected: m as f64 - 2.0,
    })
}

/// Outcome of a single forward-and-back run.
#[derive(Clone, Debug)]
pub struct RoundtripReport {
    pub potential: PotentialField,
    pub data: ScatteringData,
    pub reconstruction: ReconstructionResult,
    /// sup |Re v_rec - v| over D.
    pub sup_error: f64,
    /// sup_error / sup |v|, or sup_error for the zero potential.
    pub relative_error: f64,
}

/// Potential from `potential.*`, energy `experiment.E` (or the first of
/// `experiment.E_list`), then scattering data and reconstruction.
pub fn run_roundtrip(cfg: &Config) -> Result<RoundtripReport> {
    let v = cfg.potential("potential")?;
    let e = match cfg.get("experiment.E") {
        Some(_) => cfg.f64_or("experiment.E", 0.0)?,
        None => *cfg
            .require_list("experiment.E_list")?
            .first()
            .ok_or_else(|| Error::Config("experiment.E_list is empty".into()))?,
    };
    let energy = EnergyContext::new(e)?;
    let route = Route::parse(cfg.str_or("experiment.route", "spectral_dz"))?;
    let run = compute_scattering(&v, energy, &cfg.spectral_grid()?, None).map_err(|e| stage(e, Stage::Scattering))?;
    let reconstruction = reconstruct_v(&run.data, v.grid, route, Some(&v))?;
    let sup_error = reconstruction.error_vs_truth.unwrap_or(0.0);
    let scale = v.sup_norm();
    Ok(RoundtripReport {
        relative_error: if scale > 0.0 { sup_error / scale } else { sup_error },
        sup_error,
        potential: v,
        data: run.data,
        reconstruction,
    })
}
