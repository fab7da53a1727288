//! The ∂̄ problem in λ at fixed z and the reconstruction v = 2i√E ∂_z μ₋₁.
//!
//! μ(z, ·) solves ∂μ/∂λ̄ = r(z, λ) μ̄ off the unit circle, jumps by
//! K = μ₊ - μ₋ = ∫ ρ(λ, λ', z) μ₋(λ') |dλ'| across it, and tends to 1 at
//! infinity. Writing μ = e + W with W = C[K] + ∂̄⁻¹(r W̄), the unknowns (W, K)
//! satisfy one real-linear system that is solved by GMRES.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result, Stage};
use crate::grid::{ComplexField, EnergyContext, PotentialField, SpatialGrid, SpectralGrid, DOMAIN_RADIUS, C64};
use crate::krylov::{gmres, GmresParams};
use crate::scattering::ScatteringData;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Tolerance and iteration cap for every solve in this module.
pub fn rh_params() -> GmresParams {
    GmresParams {
        restart: 30,
        tol: 1e-9,
        max_iter: 300,
    }
}

/// Signed Fourier index of FFT slot q.
fn signed_mode(q: usize, n: usize) -> isize {
    if q < n / 2 {
        q as isize
    } else {
        q as isize - n as isize
    }
}

fn slot(m: isize, n: usize) -> usize {
    m.rem_euclid(n as isize) as usize
}

/// ρ ∫_a^b (ρ/s)^m ds / ρ^0, written with ratios that stay ≤ 1 where used.
fn power_segment(m: isize, rho: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if m == 1 {
        rho * (b / a).ln()
    } else {
        let p = (m - 1) as i32;
        rho * ((rho / b).powi(p) - (rho / a).powi(p)) / (1 - m) as f64
    }
}

/// Solid Cauchy transform ∂̄⁻¹f(λ) = -(1/π) ∫ f(η)/(η - λ) dA(η) on the
/// polar annulus grid.
///
/// Each ring is expanded in angular modes; mode n of f feeds mode n - 1 of
/// the result through a one-dimensional radial integral, evaluated exactly
/// for data that are constant on each cell. The disc inside the grid is
/// filled by extending each mode as s^{|n|}; data beyond the outer radius are
/// treated as zero.
pub struct CauchyPlan {
    pub grid: SpectralGrid,
    edges: Vec<f64>,
    /// [m slot][i][j]: weight of cell j in output ring i.
    node_weights: Vec<f64>,
    /// [m slot][i]: weight of the inner-disc extension.
    inner_weights: Vec<f64>,
    circle_weights: Vec<f64>,
    circle_inner: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CauchyPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CauchyPlan({}x{})", self.grid.n_radii(), self.grid.n_theta())
    }
}

impl CauchyPlan {
    pub fn new(grid: &SpectralGrid) -> Self {
        let nr = grid.n_radii();
        let nt = grid.n_theta();
        let edges = grid.edges();
        let mut node_weights = vec![0.0; nt * nr * nr];
        let mut inner_weights = vec![0.0; nt * nr];
        let mut circle_weights = vec![0.0; nt * nr];
        let mut circle_inner = vec![0.0; nt];
        let mut plan = CauchyPlan {
            grid: grid.clone(),
            edges,
            node_weights: Vec::new(),
            inner_weights: Vec::new(),
            circle_weights: Vec::new(),
            circle_inner: Vec::new(),
            fwd: FftPlanner::new().plan_fft_forward(nt),
            inv: FftPlanner::new().plan_fft_inverse(nt),
        };
        for q in 0..nt {
            let m = signed_mode(q, nt);
            for i in 0..nr {
                let (w, inner) = plan.radial_weights(m, grid.radii[i]);
                node_weights[(q * nr + i) * nr..(q * nr + i + 1) * nr].copy_from_slice(&w);
                inner_weights[q * nr + i] = inner;
            }
            let (w, inner) = plan.radial_weights(m, 1.0);
            circle_weights[q * nr..(q + 1) * nr].copy_from_slice(&w);
            circle_inner[q] = inner;
        }
        plan.node_weights = node_weights;
        plan.inner_weights = inner_weights;
        plan.circle_weights = circle_weights;
        plan.circle_inner = circle_inner;
        plan
    }

    /// Weights taking input mode m + 1 (per cell, plus the inner disc) to
    /// output mode m at radius ρ.
    fn radial_weights(&self, m: isize, rho: f64) -> (Vec<f64>, f64) {
        let nr = self.grid.n_radii();
        let e = &self.edges;
        let mut w = vec![0.0; nr];
        let mut inner = 0.0;
        if m >= 0 {
            for j in 0..nr {
                w[j] = -2.0 * power_segment(m, rho, e[j].max(rho), e[j + 1]);
            }
        } else {
            for j in 0..nr {
                w[j] = 2.0 * power_segment(m, rho, e[j], e[j + 1].min(rho));
            }
            let n_abs = (-(m + 1)) as i32;
            let a = e[0];
            if rho > a {
                inner = 2.0 * rho * (a / rho).powi((1 - m) as i32) * (a / self.grid.radii[0]).powi(n_abs)
                    / (n_abs as f64 - m as f64 + 1.0);
            }
        }
        (w, inner)
    }

    fn nt(&self) -> usize {
        self.grid.n_theta()
    }

    fn nr(&self) -> usize {
        self.grid.n_radii()
    }

    /// Angular Fourier coefficients per ring, [i][q].
    pub fn modes(&self, f: &[C64]) -> Vec<C64> {
        let nt = self.nt();
        let mut buf = f.to_vec();
        for ring in buf.chunks_mut(nt) {
            self.fwd.process(ring);
        }
        let s = 1.0 / nt as f64;
        buf.iter_mut().for_each(|z| *z *= s);
        buf
    }

    /// Output mode coefficients [i][q] for input modes.
    fn transform_modes(&self, fm: &[C64]) -> Vec<C64> {
        let (nr, nt) = (self.nr(), self.nt());
        let mut out = vec![ZERO; nr * nt];
        for q in 0..nt {
            let m = signed_mode(q, nt);
            if m + 1 == (nt / 2) as isize {
                continue; // input would be the Nyquist mode
            }
            let qin = slot(m + 1, nt);
            let inner_val = fm[qin];
            for i in 0..nr {
                let w = &self.node_weights[(q * nr + i) * nr..(q * nr + i + 1) * nr];
                let mut acc = inner_val * self.inner_weights[q * nr + i];
                for j in 0..nr {
                    acc += fm[j * nt + qin] * w[j];
                }
                out[i * nt + q] = acc;
            }
        }
        out
    }

    fn synthesize(&self, mut coeffs: Vec<C64>) -> Vec<C64> {
        for ring in coeffs.chunks_mut(self.nt()) {
            self.inv.process(ring);
        }
        coeffs
    }

    /// ∂̄⁻¹f at the annulus nodes.
    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        let fm = self.modes(f);
        self.synthesize(self.transform_modes(&fm))
    }

    /// Output modes on the unit circle (the transform is continuous there).
    fn circle_modes(&self, fm: &[C64]) -> Vec<C64> {
        let (nr, nt) = (self.nr(), self.nt());
        let mut out = vec![ZERO; nt];
        for q in 0..nt {
            let m = signed_mode(q, nt);
            if m + 1 == (nt / 2) as isize {
                continue;
            }
            let qin = slot(m + 1, nt);
            let w = &self.circle_weights[q * nr..(q + 1) * nr];
            let mut acc = fm[qin] * self.circle_inner[q];
            for j in 0..nr {
                acc += fm[j * nt + qin] * w[j];
            }
            out[q] = acc;
        }
        out
    }

    /// ∂̄⁻¹f at the circle angles 2πj/n_c.
    pub fn apply_on_circle(&self, f: &[C64], n_c: usize) -> Vec<C64> {
        let cm = self.circle_modes(&self.modes(f));
        let nt = self.nt();
        (0..n_c)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / n_c as f64;
                (0..nt)
                    .map(|q| cm[q] * C64::from_polar(1.0, signed_mode(q, nt) as f64 * th))
                    .sum()
            })
            .collect()
    }

    /// ∂̄⁻¹f at an arbitrary nonzero λ.
    pub fn evaluate(&self, f: &[C64], lambda: C64) -> C64 {
        self.evaluate_modes(&self.modes(f), lambda)
    }

    fn evaluate_modes(&self, fm: &[C64], lambda: C64) -> C64 {
        let (nr, nt) = (self.nr(), self.nt());
        let (rho, phi) = (lambda.norm(), lambda.arg());
        let mut acc = ZERO;
        for q in 0..nt {
            let m = signed_mode(q, nt);
            if m + 1 == (nt / 2) as isize {
                continue;
            }
            let qin = slot(m + 1, nt);
            let (w, inner) = self.radial_weights(m, rho);
            let mut c = fm[qin] * inner;
            for j in 0..nr {
                c += fm[j * nt + qin] * w[j];
            }
            acc += c * C64::from_polar(1.0, m as f64 * phi);
        }
        acc
    }

    /// (1/π) ∫ f dA, the coefficient of 1/λ in ∂̄⁻¹f at infinity.
    pub fn first_moment(&self, f: &[C64]) -> C64 {
        let fm = self.modes(f);
        let nt = self.nt();
        let e = &self.edges;
        let mut acc = fm[0] * e[0] * e[0];
        for j in 0..self.nr() {
            acc += fm[j * nt] * (e[j + 1] * e[j + 1] - e[j] * e[j]);
        }
        acc
    }

    /// Fraction of ∫|f| dA carried by the outermost ring.
    pub fn tail_fraction(&self, f: &[C64]) -> f64 {
        let nt = self.nt();
        let areas = self.grid.cell_areas();
        let total: f64 = f.iter().enumerate().map(|(i, z)| z.norm() * areas[i / nt]).sum();
        if total == 0.0 {
            return 0.0;
        }
        let last = self.nr() - 1;
        let outer: f64 = f[last * nt..].iter().map(|z| z.norm() * areas[last]).sum();
        outer / total
    }
}

/// Mass fraction beyond which a datum is considered not to decay.
pub const TAIL_LIMIT: f64 = 1e-6;

/// ∂̄⁻¹f at the annulus nodes, with the decay check.
pub fn cauchy_solid(plan: &CauchyPlan, f: &[C64]) -> Result<Vec<C64>> {
    let tail = plan.tail_fraction(f);
    if tail > TAIL_LIMIT {
        return Err(Error::TailTooHeavy(tail));
    }
    Ok(plan.apply(f))
}

/// -(ζ - λ)/π ∫ f(η)/((η - λ)(ζ - η)) dA(η) at the given points.
/// Partial fractions turn it into ∂̄⁻¹f(λ) - ∂̄⁻¹f(ζ), which avoids
/// sampling the pole at the anchor.
pub fn cauchy_solid_anchored(plan: &CauchyPlan, f: &[C64], anchor: C64, at: &[C64]) -> Result<Vec<C64>> {
    let tail = plan.tail_fraction(f);
    if tail > TAIL_LIMIT {
        return Err(Error::TailTooHeavy(tail));
    }
    let fm = plan.modes(f);
    let base = plan.evaluate_modes(&fm, anchor);
    Ok(at
        .iter()
        .map(|&l| if l == anchor { ZERO } else { plan.evaluate_modes(&fm, l) - base })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundarySide {
    /// From inside the unit disc.
    Plus,
    /// From outside.
    Minus,
}

/// Fourier coefficients of circle samples, signed order via [`signed_mode`].
fn circle_coeffs(u: &[C64]) -> Vec<C64> {
    let n = u.len();
    let mut buf = u.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter_mut().for_each(|z| *z /= n as f64);
    buf
}

/// (2πi)⁻¹ ∮ u(ζ)/(ζ - λ) dζ for u sampled at 2πj/N. On |λ| = 1 the side
/// selects the inner or outer limit; off the circle it is ignored.
pub fn cauchy_boundary(u: &[C64], side: BoundarySide, lambda: C64) -> C64 {
    let c = circle_coeffs(u);
    cauchy_boundary_coeffs(&c, side, lambda)
}

fn cauchy_boundary_coeffs(c: &[C64], side: BoundarySide, lambda: C64) -> C64 {
    let n = c.len();
    let rho = lambda.norm();
    let inside = if (rho - 1.0).abs() <= 1e-14 {
        side == BoundarySide::Plus
    } else {
        rho < 1.0
    };
    let mut acc = ZERO;
    for (q, &cq) in c.iter().enumerate() {
        let m = signed_mode(q, n);
        if inside && m >= 0 {
            acc += cq * lambda.powi(m as i32);
        } else if !inside && m < 0 {
            acc -= cq * lambda.powi(m as i32);
        }
    }
    acc
}

/// Everything solved at one spatial point z.
#[derive(Clone, Debug)]
pub struct RhWorkspace {
    pub z: C64,
    /// r(λ, z) at the annulus nodes.
    pub r_z: Vec<C64>,
    /// μ(z, λ) at the annulus nodes.
    pub mu: Vec<C64>,
    /// K = μ₊ - μ₋ at the circle nodes.
    pub k_jump: Vec<C64>,
    /// μ₋ on the circle.
    pub mu_minus: Vec<C64>,
    pub mu_minus1: C64,
    pub iterations: usize,
    pub residual: f64,
}

/// Which of the two pole-normalized auxiliary functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxKind {
    X1,
    X2,
}

/// Solver for the ∂̄ problem of one scattering data set.
#[derive(Debug)]
pub struct RhSolver {
    pub data: ScatteringData,
    pub plan: CauchyPlan,
    pub params: GmresParams,
    nodes: Vec<C64>,
}

fn realify(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

fn complexify(x: &[f64]) -> Vec<C64> {
    x.chunks(2).map(|p| C64::new(p[0], p[1])).collect()
}

impl RhSolver {
    pub fn new(data: &ScatteringData) -> Self {
        RhSolver {
            plan: CauchyPlan::new(&data.grid),
            nodes: data.grid.nodes(),
            data: data.clone(),
            params: rh_params(),
        }
    }

    pub fn energy(&self) -> EnergyContext {
        self.data.energy
    }

    /// r(λ, z) at the annulus nodes.
    pub fn build_r_z(&self, z: C64) -> Vec<C64> {
        let se = self.data.energy.sqrt_e;
        self.data
            .r_values
            .iter()
            .zip(&self.nodes)
            .map(|(&r, &l)| {
                if r == ZERO {
                    ZERO
                } else {
                    let w = se * (1.0 + 1.0 / l.norm_sqr()) * (z * l.conj()).re;
                    r * C64::from_polar(1.0, -w)
                }
            })
            .collect()
    }

    /// Unimodular factors u(λ) = e^{i√E Re(λ z̄)} with ρ(λ, λ', z) = ρ(λ, λ') u(λ')/u(λ).
    fn circle_phase(&self, z: C64) -> Vec<C64> {
        let n = self.data.rho.n;
        let se = self.data.energy.sqrt_e;
        (0..n)
            .map(|a| {
                let l = C64::from_polar(1.0, 2.0 * PI * a as f64 / n as f64);
                C64::from_polar(1.0, se * (l * z.conj()).re)
            })
            .collect()
    }

    /// Solves u - ∂̄⁻¹(r ū) = rhs at the annulus nodes.
    fn solve_conjugate_linear(&self, r_z: &[C64], rhs: &[C64], what: &str) -> Result<(Vec<C64>, usize)> {
        let op = |x: &[f64]| -> Vec<f64> {
            let u = complexify(x);
            let ru: Vec<C64> = u.iter().zip(r_z).map(|(a, r)| r * a.conj()).collect();
            let cu = self.plan.apply(&ru);
            realify(&u.iter().zip(&cu).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let b = realify(rhs);
        let out = gmres(op, &b, b.clone(), self.params);
        if !out.converged {
            return Err(Error::NoConvergence {
                what: what.into(),
                iterations: out.iterations,
                residual: out.rel_residual,
            });
        }
        Ok((complexify(&out.x), out.iterations))
    }

    /// e = 1 - (1/π) ∫ r(ζ, z) ē(ζ)/(ζ - λ) dA(ζ).
    pub fn solve_e(&self, r_z: &[C64]) -> Result<Vec<C64>> {
        let one = vec![C64::new(1.0, 0.0); r_z.len()];
        if r_z.iter().all(|&r| r == ZERO) {
            return Ok(one);
        }
        Ok(self.solve_conjugate_linear(r_z, &one, "e equation")?.0)
    }

    /// X₁ or X₂ with pole at the circle point ζ, returned at the annulus
    /// nodes. The pole 1/(2(ζ-λ)) (or 1/(2i(ζ-λ))) is split off and the
    /// bounded remainder solved for.
    pub fn solve_x(&self, r_z: &[C64], zeta: C64, which: AuxKind) -> Result<Vec<C64>> {
        let scale = match which {
            AuxKind::X1 => C64::new(0.5, 0.0),
            AuxKind::X2 => C64::new(0.0, -0.5),
        };
        let pole: Vec<C64> = self.nodes.iter().map(|&l| scale / (zeta - l)).collect();
        if r_z.iter().all(|&r| r == ZERO) {
            return Ok(pole);
        }
        let src: Vec<C64> = pole.iter().zip(r_z).map(|(p, r)| r * p.conj()).collect();
        let rhs = self.plan.apply(&src);
        let (rem, _) = self.solve_conjugate_linear(r_z, &rhs, "X equation")?;
        Ok(pole.iter().zip(&rem).map(|(p, q)| p + q).collect())
    }

    /// Ω₁ = X₁ + iX₂ and Ω₂ = X₁ - iX₂ with pole at ζ.
    pub fn solve_omegas(&self, r_z: &[C64], zeta: C64) -> Result<(Vec<C64>, Vec<C64>)> {
        let x1 = self.solve_x(r_z, zeta, AuxKind::X1)?;
        let x2 = self.solve_x(r_z, zeta, AuxKind::X2)?;
        let o1 = x1.iter().zip(&x2).map(|(a, b)| a + I * b).collect();
        let o2 = x1.iter().zip(&x2).map(|(a, b)| a - I * b).collect();
        Ok((o1, o2))
    }

    /// μ₋₁ from e, the Ω family and a solved jump K:
    /// (1/π)∫ r ē dA + (2πi)⁻¹ ∮ (ω₁ K dζ - ω₂ K̄ dζ̄), where ω_k(ζ) is the
    /// 1/λ coefficient of Ω_k(λ, ζ). One pair of X solves per circle node.
    pub fn mu_minus1_from_omegas(&self, ws: &RhWorkspace) -> Result<C64> {
        let e = self.solve_e(&ws.r_z)?;
        let re: Vec<C64> = e.iter().zip(&ws.r_z).map(|(a, r)| r * a.conj()).collect();
        let mut acc = self.plan.first_moment(&re);
        let nc = ws.k_jump.len();
        let w = 2.0 * PI / nc as f64;
        for (a, &k) in ws.k_jump.iter().enumerate() {
            let zeta = C64::from_polar(1.0, 2.0 * PI * a as f64 / nc as f64);
            let (o1, o2) = self.solve_omegas(&ws.r_z, zeta)?;
            // Ω₁ = 1/(ζ - λ) + ∂̄⁻¹(r Ω̄₂) and Ω₂ = ∂̄⁻¹(r Ω̄₁)
            let moment = |o: &[C64]| -> C64 {
                let src: Vec<C64> = o.iter().zip(&ws.r_z).map(|(x, r)| r * x.conj()).collect();
                self.plan.first_moment(&src)
            };
            let omega1 = -1.0 + moment(&o2);
            let omega2 = moment(&o1);
            let dzeta = I * zeta * w;
            acc += (omega1 * k * dzeta - omega2 * k.conj() * dzeta.conj()) / (2.0 * PI * I);
        }
        Ok(acc)
    }

    /// C[K] at the annulus nodes from the circle coefficients of K.
    fn boundary_cauchy_on_annulus(&self, kc: &[C64]) -> Vec<C64> {
        let (nr, nt) = (self.data.grid.n_radii(), self.data.grid.n_theta());
        let nc = kc.len();
        let mut coeffs = vec![ZERO; nr * nt];
        for i in 0..nr {
            let rho = self.data.grid.radii[i];
            for (q, &c) in kc.iter().enumerate() {
                let m = signed_mode(q, nc);
                let inside = rho < 1.0;
                if inside == (m >= 0) {
                    let v = c * rho.powi(m as i32);
                    coeffs[i * nt + slot(m, nt)] += if inside { v } else { -v };
                }
            }
        }
        self.plan.synthesize(coeffs)
    }

    /// Solves the coupled system for μ and K at z.
    pub fn solve_at(&self, z: C64) -> Result<RhWorkspace> {
        let r_z = self.build_r_z(z);
        let nc = self.data.rho.n;
        let na = r_z.len();
        let free_r = r_z.iter().all(|&r| r == ZERO);
        let free_rho = self.data.rho.values.iter().all(|&r| r == ZERO);
        if free_r && free_rho {
            return Ok(RhWorkspace {
                z,
                r_z,
                mu: vec![C64::new(1.0, 0.0); na],
                k_jump: vec![ZERO; nc],
                mu_minus: vec![C64::new(1.0, 0.0); nc],
                mu_minus1: ZERO,
                iterations: 0,
                residual: 0.0,
            });
        }
        let u = self.circle_phase(z);
        let w = 2.0 * PI / nc as f64;
        let rho = &self.data.rho.values;
        // ∫ ρ(λ_a, λ_b, z) g_b |dλ_b|
        let jump_of = |g: &[C64]| -> Vec<C64> {
            let gu: Vec<C64> = g.iter().zip(&u).map(|(a, b)| a * b).collect();
            (0..nc)
                .map(|a| {
                    let row = &rho[a * nc..(a + 1) * nc];
                    row.iter().zip(&gu).map(|(x, y)| x * y).sum::<C64>() * w / u[a]
                })
                .collect()
        };
        // unknowns: μ - 1 at the nodes, then K on the circle
        let apply = |mu1: &[C64], k: &[C64]| -> (Vec<C64>, Vec<C64>, Vec<C64>) {
            let f: Vec<C64> = mu1.iter().zip(&r_z).map(|(m, r)| r * (C64::new(1.0, 0.0) + m).conj()).collect();
            let cf = self.plan.apply(&f);
            let cf_circle = self.plan.apply_on_circle(&f, nc);
            let kc = circle_coeffs(k);
            let ck = self.boundary_cauchy_on_annulus(&kc);
            let ck_minus = (0..nc)
                .map(|a| {
                    let l = C64::from_polar(1.0, 2.0 * PI * a as f64 / nc as f64);
                    cauchy_boundary_coeffs(&kc, BoundarySide::Minus, l)
                })
                .collect::<Vec<_>>();
            let mu_minus: Vec<C64> = (0..nc).map(|a| C64::new(1.0, 0.0) + cf_circle[a] + ck_minus[a]).collect();
            let first: Vec<C64> = (0..na).map(|i| mu1[i] - cf[i] - ck[i]).collect();
            let jump = jump_of(&mu_minus);
            let second: Vec<C64> = k.iter().zip(&jump).map(|(a, b)| a - b).collect();
            (first, second, mu_minus)
        };
        // residual form F(x) = 0 is affine; GMRES needs A x = b with b = -F(0)
        let zero_a = vec![ZERO; na];
        let zero_c = vec![ZERO; nc];
        let (f0a, f0c, _) = apply(&zero_a, &zero_c);
        let b: Vec<f64> = realify(&f0a.iter().chain(&f0c).map(|z| -z).collect::<Vec<_>>());
        let op = |x: &[f64]| -> Vec<f64> {
            let xc = complexify(x);
            let (fa, fc, _) = apply(&xc[..na], &xc[na..]);
            let out: Vec<C64> = fa
                .iter()
                .zip(&f0a)
                .map(|(a, b)| a - b)
                .chain(fc.iter().zip(&f0c).map(|(a, b)| a - b))
                .collect();
            realify(&out)
        };
        let out = gmres(op, &b, vec![0.0; b.len()], self.params);
        if !out.converged {
            return Err(Error::NoConvergence {
                what: "mu/K system".into(),
                iterations: out.iterations,
                residual: out.rel_residual,
            });
        }
        let xc = complexify(&out.x);
        let (fa, fc, mu_minus) = apply(&xc[..na], &xc[na..]);
        let residual = fa.iter().chain(&fc).fold(0.0f64, |m, z| m.max(z.norm()));
        let mu: Vec<C64> = xc[..na].iter().map(|m| C64::new(1.0, 0.0) + m).collect();
        let k_jump = xc[na..].to_vec();
        let rmu: Vec<C64> = mu.iter().zip(&r_z).map(|(m, r)| r * m.conj()).collect();
        let mu_minus1 = self.plan.first_moment(&rmu) - circle_coeffs(&k_jump)[nc - 1];
        Ok(RhWorkspace {
            z,
            r_z,
            mu,
            k_jump,
            mu_minus,
            mu_minus1,
            iterations: out.iterations,
            residual,
        })
    }

    /// μ(z, λ) for λ off the unit circle, from a solved workspace.
    pub fn assemble_mu(&self, ws: &RhWorkspace, lambda: C64) -> C64 {
        let f: Vec<C64> = ws.mu.iter().zip(&ws.r_z).map(|(m, r)| r * m.conj()).collect();
        C64::new(1.0, 0.0) + self.plan.evaluate(&f, lambda) + cauchy_boundary(&ws.k_jump, BoundarySide::Plus, lambda)
    }

    /// μ₋₁(z).
    pub fn mu_minus1_at(&self, z: C64) -> Result<C64> {
        Ok(self.solve_at(z)?.mu_minus1)
    }

    /// ∂_z μ₋₁ from the product-rule formula: the phase derivative of r(ζ, z)
    /// against μ̄, conj(∂_z̄ μ) against r, and -(2πi)⁻¹∮ ∂_z K dζ. The
    /// z-derivatives of μ and K come from central differences of neighbouring
    /// workspaces at distance `step`.
    pub fn dz_mu_minus1_abc(&self, z: C64, step: f64) -> Result<AbcTerms> {
        let ws = self.solve_at(z)?;
        let se = self.data.energy.sqrt_e;
        let shifted = |dz: C64| self.solve_at(z + dz);
        let (xp, xm) = (shifted(C64::new(step, 0.0))?, shifted(C64::new(-step, 0.0))?);
        let (yp, ym) = (shifted(C64::new(0.0, step))?, shifted(C64::new(0.0, -step))?);
        // ∂_z = (∂_x - i∂_y)/2, ∂_z̄ = (∂_x + i∂_y)/2
        let d = |p: &[C64], m: &[C64], q: &[C64], n: &[C64], sgn: f64| -> Vec<C64> {
            (0..p.len())
                .map(|i| ((p[i] - m[i]) + I * sgn * (q[i] - n[i])) / (4.0 * step))
                .collect()
        };
        let dzbar_mu = d(&xp.mu, &xm.mu, &yp.mu, &ym.mu, 1.0);
        let dz_k = d(&xp.k_jump, &xm.k_jump, &yp.k_jump, &ym.k_jump, -1.0);
        let phase_term: Vec<C64> = self
            .nodes
            .iter()
            .zip(&ws.r_z)
            .zip(&ws.mu)
            .map(|((&l, &r), &m)| r * (-0.5 * I * se * (1.0 / l + l.conj())) * m.conj())
            .collect();
        let mu_term: Vec<C64> = ws.r_z.iter().zip(&dzbar_mu).map(|(r, d)| r * d.conj()).collect();
        let nc = dz_k.len();
        Ok(AbcTerms {
            volume_phase: self.plan.first_moment(&phase_term),
            volume_mu: self.plan.first_moment(&mu_term),
            circle: -circle_coeffs(&dz_k)[nc - 1],
        })
    }
}

/// The three pieces of ∂_z μ₋₁ in the product-rule route.
#[derive(Clone, Copy, Debug)]
pub struct AbcTerms {
    pub volume_phase: C64,
    pub volume_mu: C64,
    pub circle: C64,
}

impl AbcTerms {
    pub fn total(&self) -> C64 {
        self.volume_phase + self.volume_mu + self.circle
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    SpectralDz,
    AbcFormula,
}

impl Route {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spectral_dz" => Ok(Route::SpectralDz),
            "abc" | "abc_formula" => Ok(Route::AbcFormula),
            other => Err(Error::Config(format!("unknown route '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Route::SpectralDz => "spectral_dz",
            Route::AbcFormula => "abc_formula",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub v_rec: ComplexField,
    pub mu_minus1: ComplexField,
    pub route: Route,
    pub error_vs_truth: Option<f64>,
    /// sup |Im v_rec|.
    pub imag_sup: f64,
    pub max_residual: f64,
}

/// Step for the z-differences of the product-rule route.
pub const ABC_STEP: f64 = 1e-4;

/// Reconstructs v on the grid inside D. μ₋₁ is computed on the nodes within
/// reach of a fourth-order difference stencil centred in D; v_rec is zero
/// outside D.
pub fn reconstruct_v(
    data: &ScatteringData,
    grid: SpatialGrid,
    route: Route,
    truth: Option<&PotentialField>,
) -> Result<ReconstructionResult> {
    let solver = RhSolver::new(data);
    let n = grid.n;
    let h = grid.h();
    let reach = DOMAIN_RADIUS + 2.0 * h * 2f64.sqrt() + 1e-12;
    let len = grid.len();
    let inside = |idx: usize| {
        let (x, y) = grid.point(idx);
        x.hypot(y) < DOMAIN_RADIUS
    };
    let needed: Vec<usize> = (0..len)
        .filter(|&idx| {
            let (x, y) = grid.point(idx);
            match route {
                Route::SpectralDz => x.hypot(y) < reach,
                Route::AbcFormula => x.hypot(y) < DOMAIN_RADIUS,
            }
        })
        .collect();
    let annotate = |idx: usize, e: Error, eq: &str| {
        let (x, y) = grid.point(idx);
        e.at(Stage::Reconstruction {
            z: (x, y),
            equation: eq.into(),
        })
    };
    let se = data.energy.sqrt_e;
    let mut mu_m1 = vec![ZERO; len];
    let mut v = vec![ZERO; len];
    let mut max_residual = 0.0f64;
    match route {
        Route::SpectralDz => {
            let solved: Vec<Result<(C64, f64)>> = needed
                .par_iter()
                .map(|&idx| {
                    solver
                        .solve_at(grid.z(idx))
                        .map(|ws| (ws.mu_minus1, ws.residual))
                        .map_err(|e| annotate(idx, e, "mu/K system"))
                })
                .collect();
            for (&idx, res) in needed.iter().zip(solved) {
                let (m, r) = res?;
                mu_m1[idx] = m;
                max_residual = max_residual.max(r);
            }
            let dx = fd4(&mu_m1, n, h, true);
            let dy = fd4(&mu_m1, n, h, false);
            for idx in 0..len {
                if inside(idx) {
                    v[idx] = 2.0 * I * se * 0.5 * (dx[idx] - I * dy[idx]);
                }
            }
        }
        Route::AbcFormula => {
            let solved: Vec<Result<(C64, C64)>> = needed
                .par_iter()
                .map(|&idx| {
                    let z = grid.z(idx);
                    let ws = solver.solve_at(z).map_err(|e| annotate(idx, e, "mu/K system"))?;
                    let abc = solver
                        .dz_mu_minus1_abc(z, ABC_STEP)
                        .map_err(|e| annotate(idx, e, "derivative systems"))?;
                    Ok((ws.mu_minus1, abc.total()))
                })
                .collect();
            for (&idx, res) in needed.iter().zip(solved) {
                let (m, d) = res?;
                mu_m1[idx] = m;
                v[idx] = 2.0 * I * se * d;
            }
        }
    }
    let imag_sup = v.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let error_vs_truth = truth.map(|t| {
        v.iter()
            .zip(&t.values)
            .fold(0.0f64, |m, (a, &b)| m.max((a.re - b).abs()))
    });
    Ok(ReconstructionResult {
        v_rec: ComplexField::new(v, grid.id())?,
        mu_minus1: ComplexField::new(mu_m1, grid.id())?,
        route,
        error_vs_truth,
        imag_sup,
        max_residual,
    })
}

/// Fourth-order central difference; nodes whose stencil leaves the grid get 0.
pub fn fd4(f: &[C64], n: usize, h: f64, along_x: bool) -> Vec<C64> {
    let mut out = vec![ZERO; n * n];
    for iy in 2..n.saturating_sub(2) {
        for ix in 2..n.saturating_sub(2) {
            let at = |o: isize| -> C64 {
                let (jx, jy) = if along_x {
                    (ix as isize + o, iy as isize)
                } else {
                    (ix as isize, iy as isize + o)
                };
                f[jy as usize * n + jx as usize]
            };
            out[iy * n + ix] = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
        }
    }
    out
}
