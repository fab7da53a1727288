//! Spatial and spectral grids, sampled fields and the norms used by the
//! decay checks.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Radius of the domain D (the unit disc).
pub const DOMAIN_RADIUS: f64 = 1.0;

/// Uniform n×n node grid on [-L, L)², node (ix, iy) at (-L + ix h, -L + iy h).
///
/// Nodes are stored row-major with `iy` as the slow index. The node spacing is
/// `2L/n`, so the origin is a node when n is even.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialGrid {
    pub n: usize,
    pub half_width: f64,
}

impl SpatialGrid {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 16 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n = {n} must be even and >= 16")));
        }
        if !(half_width >= DOMAIN_RADIUS) || !half_width.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "half width {half_width} must cover the unit disc"
            )));
        }
        Ok(SpatialGrid { n, half_width })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h()
    }

    pub fn point(&self, idx: usize) -> (f64, f64) {
        (self.coord(idx % self.n), self.coord(idx / self.n))
    }

    pub fn z(&self, idx: usize) -> C64 {
        let (x, y) = self.point(idx);
        C64::new(x, y)
    }

    pub fn id(&self) -> GridId {
        GridId::Spatial {
            n: self.n,
            half_width: self.half_width,
        }
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }
}

/// Identifies the node set a [`ComplexField`] is sampled on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridId {
    Spatial { n: usize, half_width: f64 },
    Annulus { n_radii: usize, n_theta: usize },
    Circle { n: usize },
}

impl GridId {
    pub fn len(&self) -> usize {
        match *self {
            GridId::Spatial { n, .. } => n * n,
            GridId::Annulus { n_radii, n_theta } => n_radii * n_theta,
            GridId::Circle { n } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Complex samples on a registered grid. Entries are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub values: Vec<C64>,
    pub grid_id: GridId,
}

impl ComplexField {
    pub fn new(values: Vec<C64>, grid_id: GridId) -> Result<Self> {
        if values.len() != grid_id.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} samples, grid expects {}",
                values.len(),
                grid_id.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Format("non-finite field sample".into()));
        }
        Ok(ComplexField { values, grid_id })
    }

    pub fn constant(c: C64, grid_id: GridId) -> Self {
        ComplexField {
            values: vec![c; grid_id.len()],
            grid_id,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// Real potential sampled on a spatial grid, zero outside the disc.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
    pub support_mask: Vec<bool>,
    /// Smoothness tag used by decay checks.
    pub m: u32,
    pub d_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialKind {
    Zero,
    Bump,
    TwoBumps,
    CustomSamples,
}

impl PotentialKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PotentialKind::Zero),
            "bump" => Ok(PotentialKind::Bump),
            "two_bumps" => Ok(PotentialKind::TwoBumps),
            "custom_samples" => Ok(PotentialKind::CustomSamples),
            other => Err(Error::Config(format!("unknown potential kind '{other}'"))),
        }
    }
}

/// C∞ cutoff bump `a exp(1 - 1/(1 - s²))`, s = |x - c|/R, peak value a at c.
pub fn bump_profile(amplitude: f64, radius: f64, center: (f64, f64), x: f64, y: f64) -> f64 {
    let s2 = ((x - center.0).powi(2) + (y - center.1).powi(2)) / (radius * radius);
    if s2 >= 1.0 {
        0.0
    } else {
        amplitude * (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

fn check_bump(radius: f64, center: (f64, f64)) -> Result<()> {
    let reach = center.0.hypot(center.1) + radius;
    if !(radius > 0.0) || reach >= DOMAIN_RADIUS {
        return Err(Error::SupportViolatesD(reach));
    }
    Ok(())
}

/// Builds a potential on `grid`.
///
/// Parameters by kind:
/// * `bump`: amplitude, radius, optional center x, center y
/// * `two_bumps`: a1, r1, c1x, c1y, a2, r2, c2x, c2y
/// * `custom_samples`: n² row-major samples (zeroed outside the disc)
pub fn build_potential(kind: PotentialKind, params: &[f64], grid: SpatialGrid) -> Result<PotentialField> {
    let n2 = grid.len();
    let support_mask: Vec<bool> = (0..n2)
        .map(|idx| {
            let (x, y) = grid.point(idx);
            x.hypot(y) < DOMAIN_RADIUS
        })
        .collect();
    let mut values = vec![0.0; n2];
    match kind {
        PotentialKind::Zero => {}
        PotentialKind::Bump => {
            if params.len() < 2 {
                return Err(Error::Config("bump needs amplitude and radius".into()));
            }
            let center = (
                params.get(2).copied().unwrap_or(0.0),
                params.get(3).copied().unwrap_or(0.0),
            );
            check_bump(params[1], center)?;
            for (idx, v) in values.iter_mut().enumerate() {
                let (x, y) = grid.point(idx);
                *v = bump_profile(params[0], params[1], center, x, y);
            }
        }
        PotentialKind::TwoBumps => {
            if params.len() < 8 {
                return Err(Error::Config("two_bumps needs 8 parameters".into()));
            }
            let c1 = (params[2], params[3]);
            let c2 = (params[6], params[7]);
            check_bump(params[1], c1)?;
            check_bump(params[5], c2)?;
            for (idx, v) in values.iter_mut().enumerate() {
                let (x, y) = grid.point(idx);
                *v = bump_profile(params[0], params[1], c1, x, y)
                    + bump_profile(params[4], params[5], c2, x, y);
            }
        }
        PotentialKind::CustomSamples => {
            if params.len() != n2 {
                return Err(Error::Config(format!(
                    "custom_samples needs {n2} values, got {}",
                    params.len()
                )));
            }
            if params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("non-finite potential sample".into()));
            }
            values.copy_from_slice(params);
        }
    }
    for (v, inside) in values.iter_mut().zip(&support_mask) {
        if !inside {
            *v = 0.0;
        }
    }
    Ok(PotentialField {
        grid,
        values,
        support_mask,
        m: 3,
        d_radius: DOMAIN_RADIUS,
    })
}

impl PotentialField {
    pub fn zero(grid: SpatialGrid) -> Self {
        build_potential(PotentialKind::Zero, &[], grid).expect("zero potential is always valid")
    }

    pub fn with_smoothness(mut self, m: u32) -> Self {
        self.m = m;
        self
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Indices of nodes where the potential is nonzero.
    pub fn active_nodes(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i] != 0.0).collect()
    }

    /// Grid quadrature of the potential.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }
}

/// Positive energy with cached square root.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyContext {
    pub e: f64,
    pub sqrt_e: f64,
}

impl EnergyContext {
    pub fn new(e: f64) -> Result<Self> {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::Config(format!("energy must be positive, got {e}")));
        }
        Ok(EnergyContext { e, sqrt_e: e.sqrt() })
    }
}

/// Polar discretization of the spectral plane.
///
/// Radii are midpoints of geometric cells `[exp(u_i), exp(u_{i+1})]` with
/// `u_i = -ln λmax + iΔ`, so the grid is symmetric under λ → 1/λ and the
/// unit circle falls on a cell edge.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGrid {
    pub radii: Vec<f64>,
    pub angles: Vec<f64>,
    pub circle_angles: Vec<f64>,
    pub offset_h: f64,
    pub lambda_max: f64,
}

impl SpectralGrid {
    pub fn new(lambda_max: f64, n_radii: usize, n_theta: usize, n_circle: usize, offset_h: f64) -> Result<Self> {
        if !(lambda_max > 1.0) || n_radii < 2 || n_radii % 2 != 0 || n_theta < 4 || n_circle < 4 {
            return Err(Error::InvalidGrid(format!(
                "spectral grid needs lambda_max > 1 and an even radius count (got {lambda_max}, {n_radii})"
            )));
        }
        let du = 2.0 * lambda_max.ln() / n_radii as f64;
        let radii: Vec<f64> = (0..n_radii)
            .map(|i| (-lambda_max.ln() + (i as f64 + 0.5) * du).exp())
            .collect();
        let gap = 1.0 - radii[n_radii / 2 - 1];
        if !(offset_h > 0.0 && offset_h < gap) {
            return Err(Error::InvalidGrid(format!(
                "offset_h = {offset_h} must lie in (0, {gap})"
            )));
        }
        let angles = (0..n_theta).map(|j| 2.0 * PI * j as f64 / n_theta as f64).collect();
        let circle_angles = (0..n_circle).map(|j| 2.0 * PI * j as f64 / n_circle as f64).collect();
        Ok(SpectralGrid {
            radii,
            angles,
            circle_angles,
            offset_h,
            lambda_max,
        })
    }

    pub fn default_grid() -> Self {
        SpectralGrid::new(8.0, 64, 64, 256, 1e-3).expect("default spectral grid is valid")
    }

    pub fn n_radii(&self) -> usize {
        self.radii.len()
    }

    pub fn n_theta(&self) -> usize {
        self.angles.len()
    }

    pub fn n_circle(&self) -> usize {
        self.circle_angles.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_radii() * self.n_theta()
    }

    pub fn lambda_min(&self) -> f64 {
        1.0 / self.lambda_max
    }

    /// Logarithmic cell width.
    pub fn log_step(&self) -> f64 {
        2.0 * self.lambda_max.ln() / self.n_radii() as f64
    }

    /// Cell edges, `n_radii + 1` values from λmin to λmax.
    pub fn edges(&self) -> Vec<f64> {
        let du = self.log_step();
        (0..=self.n_radii())
            .map(|i| (-self.lambda_max.ln() + i as f64 * du).exp())
            .collect()
    }

    /// Annulus node, index `i_r * n_theta + j`.
    pub fn node(&self, idx: usize) -> C64 {
        let nt = self.n_theta();
        C64::from_polar(self.radii[idx / nt], self.angles[idx % nt])
    }

    pub fn nodes(&self) -> Vec<C64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    pub fn circle_node(&self, j: usize) -> C64 {
        C64::from_polar(1.0, self.circle_angles[j])
    }

    pub fn circle_nodes(&self) -> Vec<C64> {
        (0..self.n_circle()).map(|j| self.circle_node(j)).collect()
    }

    /// Area of the polar cell of radial index `i_r` (one angular slot).
    pub fn cell_area(&self, i_r: usize) -> f64 {
        let e = self.edges();
        0.5 * (e[i_r + 1].powi(2) - e[i_r].powi(2)) * 2.0 * PI / self.n_theta() as f64
    }

    pub fn cell_areas(&self) -> Vec<f64> {
        let e = self.edges();
        let dth = 2.0 * PI / self.n_theta() as f64;
        (0..self.n_radii())
            .map(|i| 0.5 * (e[i + 1].powi(2) - e[i].powi(2)) * dth)
            .collect()
    }

    /// Radial index mirrored under λ → 1/λ̄.
    pub fn mirror_radius(&self, i_r: usize) -> usize {
        self.n_radii() - 1 - i_r
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let n = self.n_radii();
        for i in 0..n {
            if (self.radii[i] * self.radii[n - 1 - i] - 1.0).abs() > 1e-12 {
                return Err(Error::GridNotSymmetric);
            }
        }
        Ok(())
    }

    pub fn annulus_id(&self) -> GridId {
        GridId::Annulus {
            n_radii: self.n_radii(),
            n_theta: self.n_theta(),
        }
    }

    pub fn circle_id(&self) -> GridId {
        GridId::Circle { n: self.n_circle() }
    }
}

fn fd1(f: &[f64], n: usize, h: f64, along_x: bool) -> Vec<f64> {
    let get = |ix: isize, iy: isize| -> f64 {
        if ix < 0 || iy < 0 || ix >= n as isize || iy >= n as isize {
            0.0
        } else {
            f[iy as usize * n + ix as usize]
        }
    };
    let mut out = vec![0.0; n * n];
    for iy in 0..n as isize {
        for ix in 0..n as isize {
            let (dx, dy) = if along_x { (1, 0) } else { (0, 1) };
            let v = -get(ix + 2 * dx, iy + 2 * dy) + 8.0 * get(ix + dx, iy + dy)
                - 8.0 * get(ix - dx, iy - dy)
                + get(ix - 2 * dx, iy - 2 * dy);
            out[iy as usize * n + ix as usize] = v / (12.0 * h);
        }
    }
    out
}

/// `max_{|J| <= m} ||∂^J v||_{L¹}` with fourth-order centered differences.
pub fn sobolev_norm_m1(v: &PotentialField, m: u32) -> f64 {
    let n = v.grid.n;
    let h = v.grid.h();
    let da = v.grid.cell_area();
    let mut best = 0.0f64;
    // x-derivatives of every order first, then y-derivatives on top
    let mut dx = v.values.clone();
    for a in 0..=m {
        let mut d = dx.clone();
        for b in 0..=(m - a) {
            let l1 = d.iter().map(|x| x.abs()).sum::<f64>() * da;
            best = best.max(l1);
            if b < m - a {
                d = fd1(&d, n, h, false);
            }
        }
        if a < m {
            dx = fd1(&dx, n, h, true);
        }
    }
    best
}

/// Fourier transform (2π)^{-2}∫e^{ipx}v e^{iξx}dx on the FFT lattice p = (π/L)·k.
fn fourier_on_lattice(v: &PotentialField, shift: (f64, f64)) -> Vec<C64> {
    let n = v.grid.n;
    let l = v.grid.half_width;
    let mut buf: Vec<C64> = (0..n * n)
        .map(|idx| {
            let (x, y) = v.grid.point(idx);
            C64::from_polar(v.values[idx], shift.0 * x + shift.1 * y)
        })
        .collect();
    fft2(&mut buf, n, true);
    let dp = PI / l;
    let scale = v.grid.cell_area() / (4.0 * PI * PI);
    for iy in 0..n {
        for ix in 0..n {
            let px = lattice_freq(ix, n) * dp;
            let py = lattice_freq(iy, n) * dp;
            // node 0 sits at -L, not at the origin
            buf[iy * n + ix] *= C64::from_polar(scale, -(px + py) * l);
        }
    }
    buf
}

pub(crate) fn lattice_freq(i: usize, n: usize) -> f64 {
    if i < n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// In-place 2-D FFT of a row-major n×n buffer; `inverse` uses e^{+i}, unnormalized.
pub(crate) fn fft2(buf: &mut [C64], n: usize, inverse: bool) {
    crate::fft::Fft2::new(n).process(buf, inverse);
}

/// Weighted Hölder norm ‖(1+|p|²)^{m/2} v̂‖_α over the FFT lattice and eight
/// shift directions with |ξ| ∈ {1/4, 1/2, 1}.
pub fn weighted_fourier_norm(v: &PotentialField, m: u32, alpha: f64) -> f64 {
    let n = v.grid.n;
    let dp = PI / v.grid.half_width;
    let weight = |px: f64, py: f64| (1.0 + px * px + py * py).powf(m as f64 / 2.0);
    let base = fourier_on_lattice(v, (0.0, 0.0));
    let w0: Vec<C64> = (0..n * n)
        .map(|idx| {
            let px = lattice_freq(idx % n, n) * dp;
            let py = lattice_freq(idx / n, n) * dp;
            base[idx] * weight(px, py)
        })
        .collect();
    let mut holder = vec![0.0f64; n * n];
    for dir in 0..8 {
        let ang = PI * dir as f64 / 4.0;
        for &s in &[0.25, 0.5, 1.0] {
            let xi = (s * ang.cos(), s * ang.sin());
            let shifted = fourier_on_lattice(v, xi);
            for idx in 0..n * n {
                let px = lattice_freq(idx % n, n) * dp + xi.0;
                let py = lattice_freq(idx / n, n) * dp + xi.1;
                let d = (shifted[idx] * weight(px, py) - w0[idx]).norm() / s.powf(alpha);
                holder[idx] = holder[idx].max(d);
            }
        }
    }
    (0..n * n).fold(0.0, |best, idx| best.max(w0[idx].norm() + holder[idx]))
}

/// ‖f‖_{L^p(|λ|<=1)} + ‖|λ|^{-ν} f(λ/|λ|²)‖_{L^p(|λ|<=1)} by polar quadrature.
///
/// The disc inside λmin is covered by extending the innermost (resp.
/// outermost) ring as a constant; it is skipped when the weight is not
/// integrable there.
pub fn lp_nu_norm(f: &ComplexField, grid: &SpectralGrid, p: f64, nu: f64) -> Result<f64> {
    grid.check_symmetric()?;
    if f.values.len() != grid.n_nodes() {
        return Err(Error::InvalidGrid("field is not on this spectral grid".into()));
    }
    let nr = grid.n_radii();
    let nt = grid.n_theta();
    let edges = grid.edges();
    let dth = 2.0 * PI / nt as f64;
    // ∫ t^{1-νp} dt over a radial cell
    let radial = |a: f64, b: f64| -> f64 {
        let s = 2.0 - nu * p;
        if s.abs() < 1e-14 {
            (b / a).ln()
        } else {
            (b.powf(s) - a.powf(s)) / s
        }
    };
    let ring_sum = |i_r: usize| -> f64 {
        (0..nt).map(|j| f.values[i_r * nt + j].norm().powf(p)).sum::<f64>() * dth
    };
    let mut inner = 0.0;
    let mut outer = 0.0;
    for i in 0..nr / 2 {
        inner += ring_sum(i) * 0.5 * (edges[i + 1].powi(2) - edges[i].powi(2));
        // outer ring mirrored into the unit disc
        outer += ring_sum(grid.mirror_radius(i)) * radial(edges[i], edges[i + 1]);
    }
    inner += ring_sum(0) * 0.5 * edges[0].powi(2);
    if nu * p < 2.0 {
        let s = 2.0 - nu * p;
        outer += ring_sum(nr - 1) * edges[0].powf(s) / s;
    }
    Ok(inner.powf(1.0 / p) + outer.powf(1.0 / p))
}

const STENCIL: usize = 8;

fn lagrange_weights(t: f64) -> [f64; STENCIL] {
    let mut w = [1.0; STENCIL];
    for (j, wj) in w.iter_mut().enumerate() {
        for m in 0..STENCIL {
            if m != j {
                *wj *= (t - m as f64) / (j as f64 - m as f64);
            }
        }
    }
    w
}

/// Eight-point tensor Lagrange interpolation of a grid field.
pub fn interpolate<T>(values: &[T], grid: SpatialGrid, x: f64, y: f64) -> T
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = grid.n;
    let h = grid.h();
    let base = |c: f64| -> (usize, f64) {
        let u = (c + grid.half_width) / h;
        let i0 = (u.floor() as isize - (STENCIL as isize / 2 - 1)).clamp(0, (n - STENCIL) as isize) as usize;
        (i0, u - i0 as f64)
    };
    let (ix, tx) = base(x);
    let (iy, ty) = base(y);
    let wx = lagrange_weights(tx);
    let wy = lagrange_weights(ty);
    let mut acc = T::default();
    for (b, &wyb) in wy.iter().enumerate() {
        let row = &values[(iy + b) * n + ix..(iy + b) * n + ix + STENCIL];
        let mut s = T::default();
        for (v, &w) in row.iter().zip(&wx) {
            s = s + *v * w;
        }
        acc = acc + s * wyb;
    }
    acc
}
