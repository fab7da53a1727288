//! Bessel functions and quadrature rules.

use crate::grid::C64;
use gauss_quad::{GaussLaguerre, GaussLegendre};
use std::num::NonZeroUsize;

/// Returns (J0(x), Y0(x)) for x > 0.
pub fn bessel_j0_y0(x: f64) -> (f64, f64) {
    let (j, y, _, _) = puruspe::besseljy(0.0, x);
    (j, y)
}

/// Returns (J1(x), Y1(x)) for x > 0.
pub fn bessel_j1_y1(x: f64) -> (f64, f64) {
    let (j, y, _, _) = puruspe::besseljy(1.0, x);
    (j, y)
}

/// Integer-order Bessel function and its derivative.
pub fn bessel_jn_dn(n: u32, x: f64) -> (f64, f64) {
    let (j, _, dj, _) = puruspe::besseljy(n as f64, x);
    (j, dj)
}

/// H0^(1)(x) = J0 + i Y0.
pub fn hankel0(x: f64) -> C64 {
    let (j, y) = bessel_j0_y0(x);
    C64::new(j, y)
}

/// Gauss-Legendre nodes and weights mapped to [a, b].
pub fn legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Gauss-Laguerre nodes and weights for the weight e^{-u} on [0, inf).
pub fn laguerre(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLaguerre::new(NonZeroUsize::new(n.max(1)).unwrap(), 0.0.try_into().unwrap());
    rule.as_node_weight_pairs().to_vec()
}

/// sin(z)/z for complex z.
pub fn sinc(z: C64) -> C64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        C64::new(1.0, 0.0) - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}
