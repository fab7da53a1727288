//! Faddeev solutions μ(x, k) of μ = 1 + G(k)[vμ] and their boundary traces.

pub mod kernel;

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, EnergyContext, PotentialField, SpectralGrid, C64};
use crate::krylov::{gmres, GmresParams};
pub use kernel::{FaddeevKernel, KernelFactory, KernelMode};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Condition estimates above this flag an exceptional point.
pub const EXCEPTIONAL_CONDITION: f64 = 1e8;

/// k(λ) = (√E/2)(λ + 1/λ, i(1/λ - λ)), a point of the variety k·k = E.
pub fn lambda_to_k(lambda: C64, energy: &EnergyContext) -> Result<[C64; 2]> {
    if lambda.norm() == 0.0 || !lambda.is_finite() {
        return Err(Error::ZeroLambda);
    }
    let s = 0.5 * energy.sqrt_e;
    let inv = 1.0 / lambda;
    Ok([(lambda + inv) * s, I * (inv - lambda) * s])
}

/// Inverse of [`lambda_to_k`]: λ = (k1 + i k2)/√E.
pub fn k_to_lambda(k: [C64; 2], energy: &EnergyContext) -> C64 {
    (k[0] + I * k[1]) / energy.sqrt_e
}

/// Real k on the circle |λ| = 1 at angle θ.
pub fn real_k(theta: f64, energy: &EnergyContext) -> [C64; 2] {
    [
        C64::new(energy.sqrt_e * theta.cos(), 0.0),
        C64::new(energy.sqrt_e * theta.sin(), 0.0),
    ]
}

#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub k: [C64; 2],
    pub mu: ComplexField,
    pub iterations: usize,
    pub residual: f64,
    pub condition_estimate: f64,
}

/// Solver for one potential at one energy; reuses the energy tables.
#[derive(Clone, Debug)]
pub struct ForwardSolver {
    pub potential: PotentialField,
    pub factory: KernelFactory,
    pub params: GmresParams,
}

impl ForwardSolver {
    pub fn new(potential: &PotentialField, energy: EnergyContext) -> Self {
        ForwardSolver {
            potential: potential.clone(),
            factory: KernelFactory::new(potential.grid, energy),
            params: GmresParams::default(),
        }
    }

    pub fn energy(&self) -> EnergyContext {
        self.factory.energy
    }

    /// Solves with a prepared kernel.
    pub fn solve_with(&self, kernel: &FaddeevKernel) -> Result<ForwardSolution> {
        let grid = self.potential.grid;
        let len = grid.len();
        let v = &self.potential.values;
        let one = vec![C64::new(1.0, 0.0); len];
        if self.potential.is_zero() {
            return Ok(ForwardSolution {
                k: kernel.k,
                mu: ComplexField::new(one, grid.id())?,
                iterations: 0,
                residual: 0.0,
                condition_estimate: 1.0,
            });
        }
        let op = |x: &[C64]| -> Vec<C64> {
            let vx: Vec<C64> = x.iter().zip(v).map(|(a, &b)| a * b).collect();
            let gx = kernel.apply(&vx);
            x.iter().zip(gx).map(|(a, b)| a - b).collect()
        };
        let out = gmres(op, &one, one.clone(), self.params);
        let residual = self.residual(kernel, &out.x);
        if !out.converged {
            return Err(Error::NoConvergence {
                what: "Lippmann-Schwinger".into(),
                iterations: out.iterations,
                residual: out.rel_residual,
            });
        }
        if out.condition_estimate > EXCEPTIONAL_CONDITION {
            return Err(Error::SingularSystem {
                what: "Lippmann-Schwinger".into(),
                cond: out.condition_estimate,
            });
        }
        Ok(ForwardSolution {
            k: kernel.k,
            mu: ComplexField::new(out.x, grid.id())?,
            iterations: out.iterations,
            residual,
            condition_estimate: out.condition_estimate,
        })
    }

    /// ‖μ - 1 - G[vμ]‖_∞ over the grid.
    pub fn residual(&self, kernel: &FaddeevKernel, mu: &[C64]) -> f64 {
        let vx: Vec<C64> = mu.iter().zip(&self.potential.values).map(|(a, &b)| a * b).collect();
        let gx = kernel.apply(&vx);
        mu.iter().zip(gx).map(|(m, g)| (m - 1.0 - g).norm()).fold(0.0, f64::max)
    }

    pub fn solve(&self, k: [C64; 2], mode: KernelMode) -> Result<ForwardSolution> {
        let kernel = self.factory.kernel(k, mode);
        self.solve_with(&kernel)
    }

    /// μ(·, k(λ)) for λ off the unit circle.
    pub fn solve_lambda(&self, lambda: C64) -> Result<ForwardSolution> {
        let k = lambda_to_k(lambda, &self.energy())?;
        if (lambda.norm() - 1.0).abs() < 1e-14 {
            return Err(Error::Config("λ on the unit circle needs a directional limit".into()));
        }
        self.solve(k, KernelMode::Variety)
    }

    /// (μ₊, μ₋) at λ = e^{iθ}(1 ∓ h): the inner and outer one-sided values.
    pub fn mu_pm(&self, theta: f64, offset_h: f64) -> Result<(ForwardSolution, ForwardSolution)> {
        let unit = C64::from_polar(1.0, theta);
        let plus = self.solve_lambda(unit * (1.0 - offset_h))?;
        let minus = self.solve_lambda(unit * (1.0 + offset_h))?;
        Ok((plus, minus))
    }

    /// Exact one-sided limits at |λ| = 1, directions ±k^⊥.
    pub fn mu_pm_limit(&self, theta: f64) -> Result<(ForwardSolution, ForwardSolution)> {
        let k = real_k(theta, &self.energy());
        let perp = [-theta.sin(), theta.cos()];
        let plus = self.solve(k, KernelMode::Directional(perp))?;
        let minus = self.solve(k, KernelMode::Directional([-perp[0], -perp[1]]))?;
        Ok((plus, minus))
    }

    /// μ_γ(·, k) for real k. With `eps`, the limit is regularized on the
    /// variety at k√(1 + ε²/E) + iεγ, which requires γ ⊥ k.
    pub fn mu_gamma(&self, k: [f64; 2], gamma: [f64; 2], eps: Option<f64>) -> Result<ForwardSolution> {
        let energy = self.energy();
        let kn = k[0].hypot(k[1]);
        if (kn - energy.sqrt_e).abs() > 1e-9 * energy.sqrt_e {
            return Err(Error::Config(format!("|k| = {kn} is not √E")));
        }
        let gn = gamma[0].hypot(gamma[1]);
        if gn == 0.0 {
            return Err(Error::Config("zero direction".into()));
        }
        match eps {
            None => self.solve([C64::new(k[0], 0.0), C64::new(k[1], 0.0)], KernelMode::Directional(gamma)),
            Some(e) => {
                if (gamma[0] * k[0] + gamma[1] * k[1]).abs() > 1e-12 * kn * gn {
                    return Err(Error::Config("regularized limits need γ ⊥ k".into()));
                }
                let s = (1.0 + e * e / energy.e).sqrt();
                let kk = [
                    C64::new(s * k[0], e * gamma[0] / gn),
                    C64::new(s * k[1], e * gamma[1] / gn),
                ];
                self.solve(kk, KernelMode::Variety)
            }
        }
    }

    /// Outgoing solution φ⁺ = μ_γ with γ = k/|k|.
    pub fn outgoing(&self, theta: f64) -> Result<ForwardSolution> {
        let k = real_k(theta, &self.energy());
        self.solve(k, KernelMode::Directional([theta.cos(), theta.sin()]))
    }

    /// ψ = e^{ik·x} μ at the points (cos θ_j, sin θ_j), j < n_b.
    pub fn boundary_trace(&self, sol: &ForwardSolution, n_b: usize) -> Vec<C64> {
        let grid = self.potential.grid;
        (0..n_b)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / n_b as f64;
                let (x, y) = (th.cos(), th.sin());
                let mu = crate::grid::interpolate(&sol.mu.values, grid, x, y);
                (I * (sol.k[0] * x + sol.k[1] * y)).exp() * mu
            })
            .collect()
    }

    /// Spectral-grid nodes where the solve fails or is ill-conditioned.
    pub fn detect_exceptional(&self, grid: &SpectralGrid) -> Vec<C64> {
        grid.nodes()
            .into_iter()
            .filter(|&l| self.solve_lambda(l).is_err())
            .collect()
    }
}

/// Solves μ = 1 + G(k)[vμ] for k on the variety.
pub fn solve_mu(v: &PotentialField, k: [C64; 2], energy: EnergyContext) -> Result<ForwardSolution> {
    ForwardSolver::new(v, energy).solve(k, KernelMode::Variety)
}

