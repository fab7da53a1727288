//! Dirichlet-to-Neumann map of (-Δ + v - E) on the unit disc.
//!
//! The interior problem is discretized by polar collocation: Chebyshev in
//! r ∈ [-1, 1] (using u(-r, θ) = u(r, θ + π), so no node sits at the
//! origin) and Fourier in θ, with the θ nodes equal to the boundary nodes.
//! The Neumann trace is ∂_r u at r = 1 from the Chebyshev derivative.

use std::f64::consts::PI;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseLu;
use crate::error::{Error, Result};
use crate::grid::{interpolate, EnergyContext, PotentialField, C64};

/// Smallest accepted number of boundary nodes.
pub const MIN_BOUNDARY_NODES: usize = 64;
/// Interior solves with a larger condition estimate are treated as singular.
pub const DIRICHLET_CONDITION: f64 = 1e8;

/// Dense map from Dirichlet samples to Neumann samples at θ_j = 2πj/N_b.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryOperator {
    pub n_b: usize,
    pub energy: EnergyContext,
    /// Row-major N_b × N_b.
    pub matrix: Vec<C64>,
}

impl BoundaryOperator {
    pub fn new(n_b: usize, energy: EnergyContext, matrix: Vec<C64>) -> Result<Self> {
        if matrix.len() != n_b * n_b {
            return Err(Error::InvalidGrid(format!("{} entries for N_b = {n_b}", matrix.len())));
        }
        if matrix.iter().any(|z| !z.is_finite()) {
            return Err(Error::Format("non-finite DtN entry".into()));
        }
        Ok(BoundaryOperator { n_b, energy, matrix })
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.matrix[i * self.n_b + j]
    }

    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        self.matrix
            .chunks(self.n_b)
            .map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Entry-wise difference self - other.
    pub fn difference(&self, other: &BoundaryOperator) -> Vec<C64> {
        self.matrix.iter().zip(&other.matrix).map(|(a, b)| a - b).collect()
    }

    pub fn angles(&self) -> Vec<f64> {
        boundary_angles(self.n_b)
    }
}

pub fn boundary_angles(n_b: usize) -> Vec<f64> {
    (0..n_b).map(|j| 2.0 * PI * j as f64 / n_b as f64).collect()
}

/// Discrete L∞ → L∞ norm of a sample-to-sample matrix (row-major, n×n).
///
/// With (Δf)(x_i) = Σ_j K(x_i, x_j) f_j (2π/N_b), the quadrature weights are
/// already inside the matrix, so the weighted row sum of K is the plain
/// absolute row sum.
pub fn opnorm_linf(diff: &[C64], n: usize) -> f64 {
    diff.chunks(n)
        .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Chebyshev points cos(πj/N) and the differentiation matrix.
fn chebyshev(n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let x: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect();
    let c = |j: usize| if j == 0 || j == n { 2.0 } else { 1.0 };
    let mut d = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                let sgn = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                d[i][j] = c(i) / c(j) * sgn / (x[i] - x[j]);
            }
        }
        d[i][i] = -(0..=n).filter(|&j| j != i).map(|j| d[i][j]).sum::<f64>();
    }
    (x, d)
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

/// Radial Chebyshev order used by default: odd, grows with √E and N_b.
pub fn default_radial_order(energy: &EnergyContext, n_b: usize) -> usize {
    let n = 16 + (2.0 * energy.sqrt_e).ceil() as usize + n_b / 2;
    n | 1
}

/// Φ(E) for the potential, with N_b boundary nodes.
pub fn assemble_dtn(v: &PotentialField, energy: EnergyContext, n_b: usize) -> Result<BoundaryOperator> {
    assemble_dtn_with_order(v, energy, n_b, default_radial_order(&energy, n_b))
}

/// Φ(E) with an explicit (odd) radial Chebyshev order.
pub fn assemble_dtn_with_order(
    v: &PotentialField,
    energy: EnergyContext,
    n_b: usize,
    radial_order: usize,
) -> Result<BoundaryOperator> {
    if n_b < MIN_BOUNDARY_NODES || n_b % 2 != 0 {
        return Err(Error::InvalidGrid(format!("N_b must be even and >= {MIN_BOUNDARY_NODES}, got {n_b}")));
    }
    if radial_order % 2 == 0 || radial_order < 5 {
        return Err(Error::InvalidGrid(format!("radial order must be odd and >= 5, got {radial_order}")));
    }
    let nt = n_b;
    let half = nt / 2;
    let (x, d1) = chebyshev(radial_order);
    let d2 = matmul(&d1, &d1);
    let m = (radial_order + 1) / 2; // nodes with r > 0, index 0 is r = 1
    let n_r = radial_order;
    // second θ-derivative on the periodic grid
    let ht = 2.0 * PI / nt as f64;
    let dtt = |l: usize, q: usize| -> f64 {
        let k = (l as isize - q as isize).rem_euclid(nt as isize) as usize;
        if k == 0 {
            -PI * PI / (3.0 * ht * ht) - 1.0 / 6.0
        } else {
            let s = (k as f64 * ht / 2.0).sin();
            let sgn = if k % 2 == 0 { 1.0 } else { -1.0 };
            -sgn / (2.0 * s * s)
        }
    };
    let angles = boundary_angles(nt);
    let n_int = (m - 1) * nt;
    let idx = |i: usize, l: usize| (i - 1) * nt + l;
    // interior operator -Δ + v - E and its coupling to the boundary data
    let mut a = Mat::<f64>::zeros(n_int, n_int);
    let mut coupling = Mat::<f64>::zeros(n_int, nt);
    for i in 1..m {
        let r = x[i];
        for l in 0..nt {
            let row = idx(i, l);
            let opp = (l + half) % nt;
            let vv = interpolate(&v.values, v.grid, r * angles[l].cos(), r * angles[l].sin());
            a[(row, row)] += vv - energy.e;
            for j in 0..m {
                // same side, then the mirrored node -x_j at θ + π
                let same = -(d2[i][j] + d1[i][j] / r);
                let mirror = -(d2[i][n_r - j] + d1[i][n_r - j] / r);
                if j == 0 {
                    coupling[(row, l)] -= same;
                    coupling[(row, opp)] -= mirror;
                } else {
                    a[(row, idx(j, l))] += same;
                    a[(row, idx(j, opp))] += mirror;
                }
            }
            for q in 0..nt {
                a[(row, idx(i, q))] -= dtt(l, q) / (r * r);
            }
        }
    }
    let lu = DenseLu::<f64>::new(&a);
    let cond = lu.condition_estimate();
    if !cond.is_finite() || cond > DIRICHLET_CONDITION {
        return Err(Error::DirichletEigenvalueHit(cond));
    }
    let interior = lu.solve(&coupling);
    // Neumann data: ∂_r u at r = 1
    let mut matrix = vec![C64::new(0.0, 0.0); nt * nt];
    for l in 0..nt {
        let opp = (l + half) % nt;
        let row = &mut matrix[l * nt..(l + 1) * nt];
        row[l] += d1[0][0];
        row[opp] += d1[0][n_r];
        for j in 1..m {
            let (ws, wm) = (d1[0][j], d1[0][n_r - j]);
            for q in 0..nt {
                row[q] += ws * interior[(idx(j, l), q)] + wm * interior[(idx(j, opp), q)];
            }
        }
    }
    BoundaryOperator::new(nt, energy, matrix)
}

/// How a DtN map is perturbed for stability experiments.
#[derive(Clone, Debug)]
pub enum PerturbMode {
    /// Independent uniform entries in [-1, 1] + i[-1, 1], rescaled.
    RandomUniform { seed: u64 },
    /// Outer product of two random unit-modulus vectors, rescaled.
    RankOne { seed: u64 },
    /// The map of another potential; δ is measured, not prescribed.
    SecondPotential(Box<PotentialField>),
}

/// A perturbed map together with its re-measured distance.
#[derive(Clone, Debug)]
pub struct PerturbedDtn {
    pub operator: BoundaryOperator,
    pub delta: f64,
}

pub fn perturb_dtn(phi: &BoundaryOperator, delta_target: f64, mode: &PerturbMode) -> Result<PerturbedDtn> {
    if !(delta_target >= 0.0) {
        return Err(Error::Config(format!("delta must be nonnegative, got {delta_target}")));
    }
    let n = phi.n_b;
    let raw: Vec<C64> = match mode {
        PerturbMode::SecondPotential(v2) => {
            let op = assemble_dtn(v2, phi.energy, n)?;
            let delta = opnorm_linf(&op.difference(phi), n);
            return Ok(PerturbedDtn { operator: op, delta });
        }
        PerturbMode::RandomUniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n * n)
                .map(|_| C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)))
                .collect()
        }
        PerturbMode::RankOne { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut unit = || C64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI));
            let u: Vec<C64> = (0..n).map(|_| unit()).collect();
            let w: Vec<C64> = (0..n).map(|_| unit()).collect();
            u.iter().flat_map(|&a| w.iter().map(move |&b| a * b)).collect()
        }
    };
    if delta_target == 0.0 {
        return Ok(PerturbedDtn {
            operator: phi.clone(),
            delta: 0.0,
        });
    }
    let scale = delta_target / opnorm_linf(&raw, n);
    let matrix: Vec<C64> = phi.matrix.iter().zip(&raw).map(|(a, d)| a + d * scale).collect();
    let operator = BoundaryOperator::new(n, phi.energy, matrix)?;
    let delta = opnorm_linf(&operator.difference(phi), n);
    Ok(PerturbedDtn { operator, delta })
}
