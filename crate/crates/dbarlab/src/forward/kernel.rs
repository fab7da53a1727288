//! The Faddeev Green's function g(x, k) = e^{-ikx} G(x, k).
//!
//! For k on the complex variety k·k = E write k = K e1 + i τ e2 with e1 ⊥ e2
//! unit vectors and κ = √E. In the rotated frame x = x1 e1 + x2 e2,
//!
//! ```text
//! G = -(i/4) H0(κ|x|) + (i/4π) ∫_0^π e^{iκ(x1 cos φ + x2 sin φ)} dφ
//!     + (1/2π) ∫_0^T cos(κ x1 cosh t) e^{-κ x2 sinh t} dt,   cosh T = K/κ
//! ```
//!
//! Every correction term is a plane wave, so sampling on a grid is separable.
//! Where τ x2 is large this form cancels badly, and the kernel is evaluated
//! from the decaying half-line integral
//!
//! ```text
//! g = -(1/2π) e^{-iK x1} ∫_0^∞ cos(x1 q(s)) e^{-x2 s} ds / q(s),  q = √(κ² + (s+τ)²)
//! ```
//!
//! along a rotated ray with Gauss-Laguerre nodes.
//!
//! For real k the one-sided limit from direction γ replaces the half circle
//! by the arc {u : γ·(κu - k) > 0}.

use std::f64::consts::PI;

use crate::fft::{wrap_offset, Convolver, Fft2};
use crate::grid::{EnergyContext, SpatialGrid, C64};
use crate::special::{hankel0, laguerre, legendre, sinc};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Beyond this value of τ x2 the far representation is used.
const FAR_THRESHOLD: f64 = 8.0;
const LAGUERRE_NODES: usize = 40;

/// How the kernel is continued onto real k.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelMode {
    /// k on the complex variety with nonzero imaginary part.
    Variety,
    /// Real k, boundary value approached from direction γ.
    Directional([f64; 2]),
}

#[derive(Clone, Debug)]
struct FarField {
    e1: [f64; 2],
    e2: [f64; 2],
    kpar: f64,
    tau: f64,
    kappa: f64,
    x2_min: f64,
}

/// Pointwise representation: Hankel part plus plane waves, or the far form.
#[derive(Clone, Debug)]
pub struct KernelRepr {
    pub k: [C64; 2],
    pub kappa: f64,
    /// (weight, wavevector) pairs, each contributing w e^{i b·x}.
    pub waves: Vec<(C64, [C64; 2])>,
    far: Option<FarField>,
    laguerre: Vec<(f64, f64)>,
}

fn dot2(b: [C64; 2], x: (f64, f64)) -> C64 {
    b[0] * x.0 + b[1] * x.1
}

impl KernelRepr {
    /// Builds the representation accurate for |x| <= r_max.
    pub fn new(k: [C64; 2], energy: &EnergyContext, mode: KernelMode, r_max: f64) -> Self {
        let kappa = energy.sqrt_e;
        let mut waves = Vec::new();
        let mut far = None;
        match mode {
            KernelMode::Variety => {
                let kr = [k[0].re, k[1].re];
                let ki = [k[0].im, k[1].im];
                let kpar = kr[0].hypot(kr[1]);
                let tau = ki[0].hypot(ki[1]);
                let e2 = if tau > 0.0 { [ki[0] / tau, ki[1] / tau] } else { [-kr[1] / kpar, kr[0] / kpar] };
                let e1 = if kpar > 0.0 { [kr[0] / kpar, kr[1] / kpar] } else { [e2[1], -e2[0]] };
                let to_plane = |a1: C64, a2: C64| -> [C64; 2] {
                    [a1 * e1[0] + a2 * e2[0] - k[0], a1 * e1[1] + a2 * e2[1] - k[1]]
                };
                let n_phi = 16 + (0.8 * kappa * r_max * PI / 2.0).ceil() as usize;
                for (phi, w) in legendre(n_phi, 0.0, PI) {
                    let b = to_plane(C64::new(kappa * phi.cos(), 0.0), C64::new(kappa * phi.sin(), 0.0));
                    waves.push((I * (w / (4.0 * PI)), b));
                }
                let t_max = (kpar / kappa).max(1.0).acosh();
                if t_max > 0.0 {
                    let n_t = 16 + (0.8 * (tau + kpar) * r_max * t_max / 2.0).ceil() as usize;
                    for (t, w) in legendre(n_t, 0.0, t_max) {
                        let (c, s) = (kappa * t.cosh(), kappa * t.sinh());
                        let wt = C64::new(w / (4.0 * PI), 0.0);
                        waves.push((wt, to_plane(C64::new(c, 0.0), C64::new(0.0, s))));
                        waves.push((wt, to_plane(C64::new(-c, 0.0), C64::new(0.0, s))));
                    }
                }
                if tau > 0.0 && FAR_THRESHOLD / tau < r_max {
                    far = Some(FarField {
                        e1,
                        e2,
                        kpar,
                        tau,
                        kappa,
                        x2_min: FAR_THRESHOLD / tau,
                    });
                }
            }
            KernelMode::Directional(gamma) => {
                let gn = gamma[0].hypot(gamma[1]);
                let g = [gamma[0] / gn, gamma[1] / gn];
                let c0 = ((g[0] * k[0].re + g[1] * k[1].re) / kappa).clamp(-1.0, 1.0);
                let half = c0.acos();
                if half > 0.0 {
                    let center = g[1].atan2(g[0]);
                    let n_phi = 16 + (0.8 * kappa * r_max * half).ceil() as usize;
                    for (phi, w) in legendre(n_phi, center - half, center + half) {
                        let b = [C64::new(kappa * phi.cos(), 0.0) - k[0], C64::new(kappa * phi.sin(), 0.0) - k[1]];
                        waves.push((I * (w / (4.0 * PI)), b));
                    }
                }
            }
        }
        let laguerre = if far.is_some() { laguerre(LAGUERRE_NODES) } else { Vec::new() };
        KernelRepr {
            k,
            kappa,
            waves,
            far,
            laguerre,
        }
    }

    fn in_far(&self, x: (f64, f64)) -> bool {
        match &self.far {
            Some(f) => x.0 * f.e2[0] + x.1 * f.e2[1] > f.x2_min,
            None => false,
        }
    }

    fn far_value(&self, x: (f64, f64)) -> C64 {
        let f = self.far.as_ref().unwrap();
        let x1 = x.0 * f.e1[0] + x.1 * f.e1[1];
        let x2 = x.0 * f.e2[0] + x.1 * f.e2[1];
        // ∫_0^∞ e^{i x1 q(s) - x2 s} ds/q(s) along s = u/(x2 - i x1); F is its real part
        let c = C64::new(x2, -x1);
        let mut acc = C64::new(0.0, 0.0);
        for &(u, w) in &self.laguerre {
            let s = u / c;
            let q = (f.kappa * f.kappa + (s + f.tau) * (s + f.tau)).sqrt();
            acc += (I * x1 * (q - s)).exp() / q * w;
        }
        let big_f = (acc / c).re;
        -(C64::new(0.0, -f.kpar * x1)).exp() * (big_f / (2.0 * PI))
    }

    /// Smooth part of g (everything but the Hankel term) in the near region.
    pub fn smooth_part(&self, x: (f64, f64)) -> C64 {
        self.waves.iter().map(|&(w, b)| w * (I * dot2(b, x)).exp()).sum()
    }

    /// g(x, k) for x ≠ 0.
    pub fn evaluate(&self, x: (f64, f64)) -> C64 {
        if self.in_far(x) {
            return self.far_value(x);
        }
        let r = x.0.hypot(x.1);
        let phase = (-I * dot2(self.k, x)).exp();
        phase * (-0.25 * I) * hankel0(self.kappa * r) + self.smooth_part(x)
    }
}

/// Energy-dependent tables shared by all kernels on one grid.
#[derive(Clone, Debug)]
pub struct KernelFactory {
    pub grid: SpatialGrid,
    pub energy: EnergyContext,
    /// -(i/4) H0(κ r) at doubled-grid offsets (wrap order), zero at the origin.
    hankel: Vec<C64>,
    /// Polar quadrature of the self cell: (x, y, weight · -(i/4)H0(κr)/h²).
    self_cell: Vec<(f64, f64, C64)>,
    plan: Fft2,
}

impl KernelFactory {
    pub fn new(grid: SpatialGrid, energy: EnergyContext) -> Self {
        let n = grid.n;
        let m = 2 * n;
        let h = grid.h();
        let kappa = energy.sqrt_e;
        let mut hankel = vec![C64::new(0.0, 0.0); m * m];
        for jj in 0..m {
            for ii in 0..m {
                let (dx, dy) = (wrap_offset(ii, n) as f64 * h, wrap_offset(jj, n) as f64 * h);
                let r = dx.hypot(dy);
                if r > 0.0 {
                    hankel[jj * m + ii] = -0.25 * I * hankel0(kappa * r);
                }
            }
        }
        // square [-h/2, h/2]² as four quarter-turns of the triangle |φ| <= π/4,
        // radius substituted r = R s² to tame the logarithm
        let mut self_cell = Vec::new();
        let sq = legendre(16, 0.0, 1.0);
        for quarter in 0..4 {
            let rot = quarter as f64 * PI / 2.0;
            for (phi, wphi) in legendre(16, -PI / 4.0, PI / 4.0) {
                let big_r = 0.5 * h / phi.cos();
                for &(s, ws) in &sq {
                    let r = big_r * s * s;
                    let jac = 2.0 * big_r * s * r;
                    let ang = phi + rot;
                    let val = -0.25 * I * hankel0(kappa * r) * (wphi * ws * jac / (h * h));
                    self_cell.push((r * ang.cos(), r * ang.sin(), val));
                }
            }
        }
        KernelFactory {
            grid,
            energy,
            hankel,
            self_cell,
            plan: Fft2::new(m),
        }
    }

    /// Largest offset between two grid nodes.
    pub fn r_max(&self) -> f64 {
        2.0 * self.grid.half_width * std::f64::consts::SQRT_2
    }

    pub fn kernel(&self, k: [C64; 2], mode: KernelMode) -> FaddeevKernel {
        // g(x, -k̄) = conj g(x, k): sample one member of each pair so the
        // symmetry holds to the last bit
        let canonical = k[0].re > 0.0 || (k[0].re == 0.0 && k[1].re >= 0.0);
        if mode == KernelMode::Variety && !canonical {
            let partner = self.kernel([-k[0].conj(), -k[1].conj()], mode);
            let samples: Vec<C64> = partner.samples.iter().map(|z| z.conj()).collect();
            let conv = Convolver::new(self.grid.n, &samples, self.grid.h().powi(2), self.plan.clone());
            return FaddeevKernel {
                k,
                mode,
                energy: self.energy,
                grid: self.grid,
                repr: KernelRepr::new(k, &self.energy, mode, self.r_max()),
                samples,
                conv,
            };
        }
        let repr = KernelRepr::new(k, &self.energy, mode, self.r_max());
        let n = self.grid.n;
        let m = 2 * n;
        let h = self.grid.h();
        let offs: Vec<f64> = (0..m).map(|i| wrap_offset(i, n) as f64 * h).collect();
        let ex: Vec<C64> = offs.iter().map(|&d| (-I * k[0] * d).exp()).collect();
        let ey: Vec<C64> = offs.iter().map(|&d| (-I * k[1] * d).exp()).collect();
        let mut samples = vec![C64::new(0.0, 0.0); m * m];
        for jj in 0..m {
            let row = &mut samples[jj * m..(jj + 1) * m];
            for ii in 0..m {
                row[ii] = self.hankel[jj * m + ii] * ex[ii] * ey[jj];
            }
        }
        let mut wx = vec![C64::new(0.0, 0.0); m];
        for &(w, b) in &repr.waves {
            for ii in 0..m {
                wx[ii] = (I * b[0] * offs[ii]).exp();
            }
            for jj in 0..m {
                let c = w * (I * b[1] * offs[jj]).exp();
                let row = &mut samples[jj * m..(jj + 1) * m];
                for ii in 0..m {
                    row[ii] += c * wx[ii];
                }
            }
        }
        if repr.far.is_some() {
            for jj in 0..m {
                for ii in 0..m {
                    let x = (offs[ii], offs[jj]);
                    if repr.in_far(x) {
                        samples[jj * m + ii] = repr.far_value(x);
                    }
                }
            }
        }
        samples[0] = self.self_average(&repr);
        let conv = Convolver::new(n, &samples, h * h, self.plan.clone());
        FaddeevKernel {
            k,
            mode,
            energy: self.energy,
            grid: self.grid,
            repr,
            samples,
            conv,
        }
    }

    /// Cell average of g over the node's own cell.
    fn self_average(&self, repr: &KernelRepr) -> C64 {
        let k = repr.k;
        let h = self.grid.h();
        let singular: C64 = self
            .self_cell
            .iter()
            .map(|&(x, y, val)| val * (-I * (k[0] * x + k[1] * y)).exp())
            .sum();
        let smooth: C64 = repr
            .waves
            .iter()
            .map(|&(w, b)| w * sinc(b[0] * (0.5 * h)) * sinc(b[1] * (0.5 * h)))
            .sum();
        singular + smooth
    }
}

/// Sampled Faddeev kernel on one spatial grid.
#[derive(Clone, Debug)]
pub struct FaddeevKernel {
    pub k: [C64; 2],
    pub mode: KernelMode,
    pub energy: EnergyContext,
    pub grid: SpatialGrid,
    pub repr: KernelRepr,
    samples: Vec<C64>,
    conv: Convolver,
}

impl FaddeevKernel {
    /// Kernel value used for node offset (di, dj), self cell averaged.
    pub fn sample(&self, di: isize, dj: isize) -> C64 {
        let n = self.grid.n as isize;
        let m = 2 * n;
        let ii = di.rem_euclid(m) as usize;
        let jj = dj.rem_euclid(m) as usize;
        self.samples[jj * m as usize + ii]
    }

    /// Pointwise g(x, k), x ≠ 0.
    pub fn evaluate(&self, x: (f64, f64)) -> C64 {
        self.repr.evaluate(x)
    }

    /// (G f)(x_a) = h² Σ_b g(x_a - x_b) f_b on the grid.
    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        self.conv.apply(f)
    }
}
