//! Scattering data: the amplitude b and the ∂̄ coefficient r on the spectral
//! annulus, the torus kernels f, h±, h₁, h₂ and the jump kernel ρ.

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;

use crate::dense::DenseLu;
use crate::dtn::BoundaryOperator;
use crate::error::{Error, Result, Stage};
use crate::forward::{lambda_to_k, real_k, ForwardSolution, ForwardSolver};
use crate::grid::{EnergyContext, PotentialField, SpectralGrid, DOMAIN_RADIUS, C64};
use crate::stats::loglog_slope;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const FOURIER_NORM: f64 = 1.0 / (4.0 * PI * PI);
/// Two ρ solutions further apart than this (relative) are rejected.
pub const RHO_CONSISTENCY: f64 = 1e-2;
/// Torus solves with a larger condition estimate are treated as singular.
pub const TORUS_CONDITION: f64 = 1e8;

/// (2π)⁻² ∫ e^{i(k_in - k_out)·x} v(x) μ(x) dx by grid quadrature.
pub fn pairing(v: &PotentialField, mu: &[C64], k_in: [C64; 2], k_out: [C64; 2]) -> C64 {
    let q = [k_in[0] - k_out[0], k_in[1] - k_out[1]];
    let grid = v.grid;
    let mut acc = C64::new(0.0, 0.0);
    for idx in v.active_nodes() {
        let (x, y) = grid.point(idx);
        acc += (I * (q[0] * x + q[1] * y)).exp() * v.values[idx] * mu[idx];
    }
    acc * grid.cell_area() * FOURIER_NORM
}

/// b(λ) from a solved μ(·, k(λ)).
pub fn b_from_solution(v: &PotentialField, sol: &ForwardSolution) -> C64 {
    pairing(v, &sol.mu.values, sol.k, [-sol.k[0].conj(), -sol.k[1].conj()])
}

/// Generalized scattering amplitude b(λ, E).
pub fn compute_b(v: &PotentialField, lambda: C64, energy: EnergyContext) -> Result<C64> {
    let solver = ForwardSolver::new(v, energy);
    let sol = solver.solve_lambda(lambda)?;
    Ok(b_from_solution(v, &sol))
}

/// r(λ) = (π/λ̄) sgn(|λ|² - 1) b.
pub fn r_of_lambda(b: C64, lambda: C64) -> Result<C64> {
    if lambda.norm() == 0.0 {
        return Err(Error::ZeroLambda);
    }
    let s = lambda.norm_sqr() - 1.0;
    if s.abs() <= 4.0 * f64::EPSILON {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(PI / lambda.conj() * s.signum() * b)
}

/// Unimodular phase carrying r(λ) to r(z, λ).
pub fn r_phase(z: C64, lambda: C64, energy: &EnergyContext) -> C64 {
    let w = 0.5 * energy.sqrt_e * (1.0 + 1.0 / lambda.norm_sqr()) * 2.0 * (z * lambda.conj()).re;
    C64::from_polar(1.0, -w)
}

pub fn r_of_z_lambda(r: C64, z: C64, lambda: C64, energy: &EnergyContext) -> Result<C64> {
    if lambda.norm() == 0.0 {
        return Err(Error::ZeroLambda);
    }
    Ok(r * r_phase(z, lambda, energy))
}

/// Phase carrying ρ(λ, λ') to ρ(λ, λ', z) for unit λ, λ'.
pub fn rho_phase(lambda: C64, lambda_p: C64, z: C64, energy: &EnergyContext) -> C64 {
    let w = 0.5 * energy.sqrt_e * ((lambda_p - lambda) * z.conj() + (1.0 / lambda_p - 1.0 / lambda) * z);
    (I * w).exp()
}

pub fn rho_of_z(rho: C64, lambda: C64, lambda_p: C64, z: C64, energy: &EnergyContext) -> C64 {
    rho * rho_phase(lambda, lambda_p, z, energy)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TorusKind {
    F,
    HPlus,
    HMinus,
    H1,
    H2,
    Rho,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// Kernel on T_N × T_N, row-major in (λ, λ'), nodes e^{2πij/N}.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusKernel {
    pub n: usize,
    pub kind: TorusKind,
    pub values: Vec<C64>,
}

impl TorusKernel {
    pub fn zeros(n: usize, kind: TorusKind) -> Self {
        TorusKernel {
            n,
            kind,
            values: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn get(&self, a: usize, b: usize) -> C64 {
        self.values[a * self.n + b]
    }

    pub fn node(&self, a: usize) -> C64 {
        C64::from_polar(1.0, 2.0 * PI * a as f64 / self.n as f64)
    }

    /// Arc-length quadrature weight |dλ|.
    pub fn weight(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// sqrt(Σ |K|² w²), the discrete L²(T×T) norm.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() * self.weight()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Log–log slope of max|K| at fixed angular separation against
    /// 1 + E|λ - λ'|², over separations where that quantity is at least `floor`.
    pub fn decay_slope(&self, energy: &EnergyContext, floor: f64) -> Option<f64> {
        let n = self.n;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for d in 1..=n / 2 {
            let chord = 2.0 * (PI * d as f64 / n as f64).sin();
            let arg = 1.0 + energy.e * chord * chord;
            if arg < floor {
                continue;
            }
            let peak = (0..n)
                .flat_map(|a| [self.get(a, (a + d) % n), self.get(a, (a + n - d) % n)])
                .fold(0.0f64, |m, z| m.max(z.norm()));
            xs.push(arg);
            ys.push(peak);
        }
        loglog_slope(&xs, &ys)
    }
}

/// Sign of sin(2π d/n) for the integer separation d, with 0 on the diagonal
/// and the antipode.
fn sin_sign(d: isize, n: usize) -> f64 {
    let d = d.rem_euclid(n as isize) as usize;
    if d == 0 || 2 * d == n {
        0.0
    } else if 2 * d < n {
        1.0
    } else {
        -1.0
    }
}

/// Heaviside step with θ(0) = 1/2.
fn heaviside(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else if s < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// h₁, h₂ from h±. With s = sign of (1/i)(λ'/λ - λ/λ') = 2 sin(arg λ' - arg λ):
/// h₁ = θ(-s)h₊ - θ(s)h₋ and h₂ = θ(-s)h₋ - θ(s)h₊.
pub fn h12_from_hpm(h_plus: &TorusKernel, h_minus: &TorusKernel) -> Result<(TorusKernel, TorusKernel)> {
    let n = h_plus.n;
    if h_minus.n != n {
        return Err(Error::InvalidGrid("h± on different torus grids".into()));
    }
    let mut h1 = TorusKernel::zeros(n, TorusKind::H1);
    let mut h2 = TorusKernel::zeros(n, TorusKind::H2);
    for a in 0..n {
        for b in 0..n {
            let s = sin_sign(b as isize - a as isize, n);
            let (tm, tp) = (heaviside(-s), heaviside(s));
            let (hp, hm) = (h_plus.get(a, b), h_minus.get(a, b));
            h1.values[a * n + b] = tm * hp - tp * hm;
            h2.values[a * n + b] = tm * hm - tp * hp;
        }
    }
    Ok((h1, h2))
}

/// Dense solve with a condition check; returns X with A X = B.
fn checked_solve(a: &Mat<C64>, rhs: &Mat<C64>, what: &str) -> Result<Mat<C64>> {
    let lu = DenseLu::<C64>::new(a);
    let cond = lu.condition_estimate();
    if !cond.is_finite() || cond > TORUS_CONDITION {
        return Err(Error::SingularSystem {
            what: what.into(),
            cond,
        });
    }
    Ok(lu.solve(rhs))
}

/// Hilbert–Schmidt norm of a discrete integral operator whose entries
/// already carry the quadrature weight; bounds its L² operator norm.
fn hilbert_schmidt(m: &Mat<C64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            acc += m[(i, j)].norm_sqr();
        }
    }
    acc.sqrt()
}

/// Solution of a torus equation together with the measured norm of its
/// integral part.
#[derive(Clone, Debug)]
pub struct TorusSolve {
    pub kernel: TorusKernel,
    pub contraction: f64,
}

/// h± from f through h(λ,λ') - πi ∫ h(λ,λ'') θ[±2 sin(arg λ'' - arg λ)] f(λ'',λ') |dλ''| = f(λ,λ').
pub fn hpm_from_f(f: &TorusKernel, side: Side) -> Result<TorusSolve> {
    let n = f.n;
    let w = f.weight();
    let sgn = if side == Side::Plus { 1.0 } else { -1.0 };
    let kind = if side == Side::Plus { TorusKind::HPlus } else { TorusKind::HMinus };
    let rows: Vec<Result<(Vec<C64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mask: Vec<C64> = (0..n)
                .map(|c| I * PI * w * heaviside(sgn * sin_sign(c as isize - a as isize, n)))
                .collect();
            // integral part P(c, b) = mask_c f(c, b); the row equation is h (I - P) = f_a
            let p = Mat::<C64>::from_fn(n, n, |c, b| mask[c] * f.get(c, b));
            let at = Mat::<C64>::from_fn(n, n, |b, c| if b == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) } - p[(c, b)]);
            let rhs = Mat::<C64>::from_fn(n, 1, |b, _| f.get(a, b));
            let x = checked_solve(&at, &rhs, "h± equation")?;
            Ok(((0..n).map(|b| x[(b, 0)]).collect(), hilbert_schmidt(&p)))
        })
        .collect();
    let mut values = Vec::with_capacity(n * n);
    let mut contraction = 0.0f64;
    for row in rows {
        let (vals, c) = row?;
        values.extend(vals);
        contraction = contraction.max(c);
    }
    Ok(TorusSolve {
        kernel: TorusKernel { n, kind, values },
        contraction,
    })
}

/// One of the two ρ equations: ρ + πi ∫ ρ(λ,λ'') θ[±2 sin(arg λ' - arg λ'')] h(λ'',λ') |dλ''| = -πi h(λ,λ').
fn rho_equation(h: &TorusKernel, sgn: f64) -> Result<TorusSolve> {
    let n = h.n;
    let w = h.weight();
    let m = Mat::<C64>::from_fn(n, n, |c, b| {
        I * PI * w * heaviside(sgn * sin_sign(b as isize - c as isize, n)) * h.get(c, b)
    });
    // R (I + M) = -πi H, solved through the transpose for all rows at once
    let at = Mat::<C64>::from_fn(n, n, |b, c| if b == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) } + m[(c, b)]);
    let rhs = Mat::<C64>::from_fn(n, n, |b, a| -I * PI * h.get(a, b));
    let x = checked_solve(&at, &rhs, "rho equation")?;
    let values = (0..n * n).map(|idx| x[(idx % n, idx / n)]).collect();
    Ok(TorusSolve {
        kernel: TorusKernel {
            n,
            kind: TorusKind::Rho,
            values,
        },
        contraction: hilbert_schmidt(&m),
    })
}

/// ρ from both equations; the first is returned, the second is a cross-check.
#[derive(Clone, Debug)]
pub struct RhoSolve {
    pub rho: TorusKernel,
    pub relative_gap: f64,
    pub contraction: f64,
}

pub fn solve_rho(h1: &TorusKernel, h2: &TorusKernel) -> Result<RhoSolve> {
    let first = rho_equation(h1, 1.0)?;
    let second = rho_equation(h2, -1.0)?;
    let scale = first.kernel.sup_norm();
    let gap = first
        .kernel
        .values
        .iter()
        .zip(&second.kernel.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
    let relative_gap = if scale > 0.0 { gap / scale } else { gap };
    if relative_gap > RHO_CONSISTENCY && gap > 1e-14 {
        return Err(Error::InconsistentPair(relative_gap));
    }
    Ok(RhoSolve {
        rho: first.kernel,
        relative_gap,
        contraction: first.contraction.max(second.contraction),
    })
}

/// (2π)⁻² ∮ u (Φ₂ - Φ₁) w over the unit circle, with the boundary weight.
fn boundary_pairing(u: &[C64], delta_phi: &[C64], w: &[C64]) -> C64 {
    let n = u.len();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let row: C64 = (0..n).map(|j| delta_phi[i * n + j] * w[j]).sum();
        acc += u[i] * row;
    }
    acc * (2.0 * PI / n as f64) * FOURIER_NORM
}

/// b₂(λ) - b₁(λ) from the DtN difference: ψ₁(·, k̄) and ψ₂(·, k) traces.
pub fn diff_b_from_dtn(phi1: &BoundaryOperator, phi2: &BoundaryOperator, psi1_conj_k: &[C64], psi2_k: &[C64]) -> C64 {
    boundary_pairing(psi1_conj_k, &phi2.difference(phi1), psi2_k)
}

/// f₂(λ, λ') - f₁(λ, λ') from φ₁⁺(·, -k(λ')) and φ₂⁺(·, k(λ)) traces.
pub fn diff_f_from_dtn(phi1: &BoundaryOperator, phi2: &BoundaryOperator, phi1_minus_kp: &[C64], phi2_k: &[C64]) -> C64 {
    boundary_pairing(phi1_minus_kp, &phi2.difference(phi1), phi2_k)
}

/// Dirichlet traces of the Faddeev solutions on ∂D, kept for the DtN identities.
#[derive(Clone, Debug)]
pub struct BoundaryTraces {
    pub n_b: usize,
    /// ψ(·, k(λ)) per annulus node (empty for exceptional nodes).
    pub annulus: Vec<Vec<C64>>,
    /// φ⁺(·, k(λ)) per circle node.
    pub outgoing: Vec<Vec<C64>>,
}

/// Torus kernels of one potential.
#[derive(Clone, Debug)]
pub struct TorusData {
    pub f: TorusKernel,
    pub h_plus: TorusKernel,
    pub h_minus: TorusKernel,
    pub h1: TorusKernel,
    pub h2: TorusKernel,
}

/// Everything the reconstruction needs.
#[derive(Clone, Debug)]
pub struct ScatteringData {
    pub energy: EnergyContext,
    pub grid: SpectralGrid,
    pub b_values: Vec<C64>,
    pub r_values: Vec<C64>,
    pub rho: TorusKernel,
    /// Annulus node indices where the forward solve failed; r is zero there.
    pub exceptional: Vec<usize>,
    /// Annulus node indices whose frequency √E(|λ| + 1/|λ|) exceeds the
    /// spatial grid's Nyquist limit; r is zero there.
    pub unresolved: Vec<usize>,
    /// Relative gap between the two ρ equations.
    pub rho_gap: f64,
    /// Norm of the integral part of the ρ equations.
    pub contraction: f64,
    /// Fitted log-log decay slope of |ρ| in 1 + E|λ - λ'|².
    pub rho_decay_slope: Option<f64>,
}

impl ScatteringData {
    /// Data of the zero potential.
    pub fn free(energy: EnergyContext, grid: SpectralGrid) -> Self {
        let n = grid.n_nodes();
        let nc = grid.n_circle();
        ScatteringData {
            energy,
            b_values: vec![C64::new(0.0, 0.0); n],
            r_values: vec![C64::new(0.0, 0.0); n],
            rho: TorusKernel::zeros(nc, TorusKind::Rho),
            grid,
            exceptional: Vec::new(),
            unresolved: Vec::new(),
            rho_gap: 0.0,
            contraction: 0.0,
            rho_decay_slope: None,
        }
    }

    /// Keeps r as given and recovers b from it.
    pub fn from_r(energy: EnergyContext, grid: SpectralGrid, r_values: Vec<C64>, rho: TorusKernel) -> Result<Self> {
        let b_values = r_values
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let l = grid.node(i);
                r * l.conj() * (l.norm_sqr() - 1.0).signum() / PI
            })
            .collect();
        let mut data = Self::from_parts(energy, grid, b_values, rho)?;
        data.r_values = r_values;
        Ok(data)
    }

    /// Rebuilds r from b and checks finiteness.
    pub fn from_parts(energy: EnergyContext, grid: SpectralGrid, b_values: Vec<C64>, rho: TorusKernel) -> Result<Self> {
        if b_values.len() != grid.n_nodes() || rho.n != grid.n_circle() {
            return Err(Error::InvalidGrid("scattering data does not match the spectral grid".into()));
        }
        if b_values.iter().chain(&rho.values).any(|z| !z.is_finite()) {
            return Err(Error::Format("non-finite scattering datum".into()));
        }
        let r_values = b_values
            .iter()
            .enumerate()
            .map(|(i, &b)| r_of_lambda(b, grid.node(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScatteringData {
            energy,
            grid,
            b_values,
            r_values,
            rho,
            exceptional: Vec::new(),
            unresolved: Vec::new(),
            rho_gap: 0.0,
            contraction: 0.0,
            rho_decay_slope: None,
        })
    }
}

/// Full output of [`compute_scattering`].
#[derive(Clone, Debug)]
pub struct ScatteringRun {
    pub data: ScatteringData,
    pub torus: TorusData,
    pub traces: Option<BoundaryTraces>,
}

/// Annulus node paired with `idx` by λ → -1/λ̄.
pub fn conjugate_node(grid: &SpectralGrid, idx: usize) -> usize {
    let nt = grid.n_theta();
    let (ir, j) = (idx / nt, idx % nt);
    grid.mirror_radius(ir) * nt + (j + nt / 2) % nt
}

/// The grid quadratures resolve the phases only when √E·diam(D)/n < π/4.
pub fn check_phase_resolution(v: &PotentialField, energy: &EnergyContext) -> Result<()> {
    let ratio = energy.sqrt_e * 2.0 * DOMAIN_RADIUS / v.grid.n as f64;
    if ratio >= PI / 4.0 {
        return Err(Error::InvalidGrid(format!(
            "grid of {} nodes does not resolve phases at E = {} (sqrt(E) diam/n = {ratio:.3})",
            v.grid.n, energy.e
        )));
    }
    Ok(())
}

/// f, h± and the circle traces. Real potentials only: the minus-side
/// solutions at θ + π are conjugates of the plus-side ones at θ.
fn torus_kernels(solver: &ForwardSolver, n_c: usize, n_b: Option<usize>) -> Result<(TorusData, Option<Vec<Vec<C64>>>)> {
    let v = &solver.potential;
    let energy = solver.energy();
    let angles: Vec<f64> = (0..n_c).map(|j| 2.0 * PI * j as f64 / n_c as f64).collect();
    let ks: Vec<[C64; 2]> = angles.iter().map(|&t| real_k(t, &energy)).collect();
    let active = v.active_nodes();
    // e^{-i k_b · x} over the support
    let out_phase: Vec<Vec<C64>> = ks
        .iter()
        .map(|k| {
            active
                .iter()
                .map(|&idx| {
                    let (x, y) = v.grid.point(idx);
                    (-I * (k[0] * x + k[1] * y)).exp()
                })
                .collect()
        })
        .collect();
    let scale = v.grid.cell_area() * FOURIER_NORM;
    let row = |mu: &[C64], k: [C64; 2]| -> Vec<C64> {
        let u: Vec<C64> = active
            .iter()
            .map(|&idx| {
                let (x, y) = v.grid.point(idx);
                (I * (k[0] * x + k[1] * y)).exp() * v.values[idx] * mu[idx] * scale
            })
            .collect();
        out_phase.iter().map(|ph| ph.iter().zip(&u).map(|(a, b)| a * b).sum()).collect()
    };
    let outgoing: Vec<Result<(Vec<C64>, Option<Vec<C64>>)>> = (0..n_c)
        .into_par_iter()
        .map(|a| {
            let sol = solver.outgoing(angles[a])?;
            Ok((row(&sol.mu.values, ks[a]), n_b.map(|nb| solver.boundary_trace(&sol, nb))))
        })
        .collect();
    let half = n_c / 2;
    let sides: Vec<Result<(Vec<C64>, Vec<C64>, Vec<C64>, Vec<C64>)>> = (0..half)
        .into_par_iter()
        .map(|a| {
            let (plus, minus) = solver.mu_pm_limit(angles[a])?;
            let plus_conj: Vec<C64> = plus.mu.values.iter().map(|z| z.conj()).collect();
            let minus_conj: Vec<C64> = minus.mu.values.iter().map(|z| z.conj()).collect();
            let b = a + half;
            Ok((
                row(&plus.mu.values, ks[a]),
                row(&minus.mu.values, ks[a]),
                row(&minus_conj, ks[b]),
                row(&plus_conj, ks[b]),
            ))
        })
        .collect();
    let mut f = TorusKernel::zeros(n_c, TorusKind::F);
    let mut traces = n_b.map(|_| Vec::with_capacity(n_c));
    for (a, res) in outgoing.into_iter().enumerate() {
        let (vals, tr) = res?;
        f.values[a * n_c..(a + 1) * n_c].copy_from_slice(&vals);
        if let (Some(t), Some(tr)) = (traces.as_mut(), tr) {
            t.push(tr);
        }
    }
    let mut h_plus = TorusKernel::zeros(n_c, TorusKind::HPlus);
    let mut h_minus = TorusKernel::zeros(n_c, TorusKind::HMinus);
    for (a, res) in sides.into_iter().enumerate() {
        let (p, m, p_opp, m_opp) = res?;
        let b = a + half;
        h_plus.values[a * n_c..(a + 1) * n_c].copy_from_slice(&p);
        h_minus.values[a * n_c..(a + 1) * n_c].copy_from_slice(&m);
        h_plus.values[b * n_c..(b + 1) * n_c].copy_from_slice(&p_opp);
        h_minus.values[b * n_c..(b + 1) * n_c].copy_from_slice(&m_opp);
    }
    let (h1, h2) = h12_from_hpm(&h_plus, &h_minus)?;
    Ok((
        TorusData {
            f,
            h_plus,
            h_minus,
            h1,
            h2,
        },
        traces,
    ))
}

/// True when the plane wave e^{i(k + k̄)·x} of node radius ρ is resolved by
/// the spatial grid: √E(ρ + 1/ρ) h < π.
pub fn frequency_resolved(rho: f64, energy: &EnergyContext, h: f64) -> bool {
    energy.sqrt_e * (rho + 1.0 / rho) * h < PI
}

/// Annulus nodes beyond the grid's Nyquist limit.
pub fn unresolved_nodes(grid: &SpectralGrid, energy: &EnergyContext, h: f64) -> Vec<usize> {
    (0..grid.n_nodes())
        .filter(|&i| !frequency_resolved(grid.radii[i / grid.n_theta()], energy, h))
        .collect()
}

/// b on the annulus, with boundary traces when `n_b` is given. Solves only
/// |λ| > 1 and fills the rest by b(-1/λ̄) = conj b(λ). Unresolved nodes
/// are skipped and keep b = 0.
fn annulus_amplitudes(
    solver: &ForwardSolver,
    grid: &SpectralGrid,
    n_b: Option<usize>,
) -> (Vec<C64>, Vec<usize>, Option<Vec<Vec<C64>>>) {
    let nt = grid.n_theta();
    let h = solver.potential.grid.h();
    let energy = solver.energy();
    let outer: Vec<usize> = (grid.n_radii() / 2 * nt..grid.n_nodes())
        .filter(|&i| frequency_resolved(grid.radii[i / nt], &energy, h))
        .collect();
    let solved: Vec<Option<(C64, Option<Vec<C64>>)>> = outer
        .par_iter()
        .map(|&idx| {
            let sol = solver.solve_lambda(grid.node(idx)).ok()?;
            let b = b_from_solution(&solver.potential, &sol);
            Some((b, n_b.map(|nb| solver.boundary_trace(&sol, nb))))
        })
        .collect();
    let mut b_values = vec![C64::new(0.0, 0.0); grid.n_nodes()];
    let mut exceptional = Vec::new();
    let mut traces = n_b.map(|_| vec![Vec::new(); grid.n_nodes()]);
    for (&idx, res) in outer.iter().zip(solved) {
        let partner = conjugate_node(grid, idx);
        match res {
            Some((b, tr)) => {
                b_values[idx] = b;
                b_values[partner] = b.conj();
                if let (Some(t), Some(tr)) = (traces.as_mut(), tr) {
                    t[partner] = tr.iter().map(|z| z.conj()).collect();
                    t[idx] = tr;
                }
            }
            None => {
                exceptional.push(idx);
                exceptional.push(partner);
            }
        }
    }
    exceptional.sort_unstable();
    (b_values, exceptional, traces)
}

/// Scattering data of a real potential. With `n_b`, also keeps the boundary
/// traces needed by the DtN difference identities.
pub fn compute_scattering(
    v: &PotentialField,
    energy: EnergyContext,
    grid: &SpectralGrid,
    n_b: Option<usize>,
) -> Result<ScatteringRun> {
    grid.check_symmetric()?;
    if grid.n_theta() % 2 != 0 || grid.n_circle() % 2 != 0 {
        return Err(Error::InvalidGrid("angular counts must be even".into()));
    }
    check_phase_resolution(v, &energy)?;
    let solver = ForwardSolver::new(v, energy);
    let (b_values, exceptional, annulus_traces) = annulus_amplitudes(&solver, grid, n_b);
    let (torus, outgoing_traces) = torus_kernels(&solver, grid.n_circle(), n_b).map_err(|e| e.at(Stage::Scattering))?;
    let rho = solve_rho(&torus.h1, &torus.h2).map_err(|e| e.at(Stage::Scattering))?;
    let mut data = ScatteringData::from_parts(energy, grid.clone(), b_values, rho.rho)?;
    data.exceptional = exceptional;
    data.unresolved = unresolved_nodes(grid, &energy, v.grid.h());
    data.rho_gap = rho.relative_gap;
    data.contraction = rho.contraction;
    data.rho_decay_slope = data.rho.decay_slope(&energy, 4.0);
    let traces = match (annulus_traces, outgoing_traces, n_b) {
        (Some(annulus), Some(outgoing), Some(n_b)) => Some(BoundaryTraces { n_b, annulus, outgoing }),
        _ => None,
    };
    Ok(ScatteringRun { data, torus, traces })
}

/// ρ from f alone, through h± and h₁, h₂.
pub fn rho_from_f(f: &TorusKernel) -> Result<RhoSolve> {
    let hp = hpm_from_f(f, Side::Plus)?;
    let hm = hpm_from_f(f, Side::Minus)?;
    let (h1, h2) = h12_from_hpm(&hp.kernel, &hm.kernel)?;
    let mut out = solve_rho(&h1, &h2)?;
    out.contraction = out.contraction.max(hp.contraction).max(hm.contraction);
    Ok(out)
}

/// Converts a node of the annulus to its k.
pub fn annulus_k(grid: &SpectralGrid, idx: usize, energy: &EnergyContext) -> Result<[C64; 2]> {
    lambda_to_k(grid.node(idx), energy)
}

fn check_unit(lambda: C64) -> Result<()> {
    if (lambda.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("|λ| = {} is not 1", lambda.norm())));
    }
    Ok(())
}

/// Single entry f(λ, λ') of the scattering amplitude, |λ| = |λ'| = 1.
pub fn compute_f(v: &PotentialField, lambda: C64, lambda_p: C64, energy: EnergyContext) -> Result<C64> {
    check_unit(lambda)?;
    check_unit(lambda_p)?;
    let solver = ForwardSolver::new(v, energy);
    let sol = solver.outgoing(lambda.arg())?;
    Ok(pairing(v, &sol.mu.values, sol.k, real_k(lambda_p.arg(), &energy)))
}

/// Single entry h±(λ, λ') from the one-sided limits of μ at λ.
pub fn compute_h_pm(v: &PotentialField, lambda: C64, lambda_p: C64, side: Side, energy: EnergyContext) -> Result<C64> {
    check_unit(lambda)?;
    check_unit(lambda_p)?;
    let solver = ForwardSolver::new(v, energy);
    let (plus, minus) = solver.mu_pm_limit(lambda.arg())?;
    let sol = match side {
        Side::Plus => plus,
        Side::Minus => minus,
    };
    Ok(pairing(v, &sol.mu.values, sol.k, real_k(lambda_p.arg(), &energy)))
}

/// Trapezoid value of ∫_T (1 + E|λ - λ'|²)^{-m/2} |dλ'| at λ = 1.
pub fn circle_decay_integral(energy: &EnergyContext, m: u32, n: usize) -> f64 {
    let w = 2.0 * PI / n as f64;
    (0..n)
        .map(|j| {
            let chord = 2.0 * (PI * j as f64 / n as f64).sin();
            (1.0 + energy.e * chord * chord).powf(-(m as f64) / 2.0)
        })
        .sum::<f64>()
        * w
}
