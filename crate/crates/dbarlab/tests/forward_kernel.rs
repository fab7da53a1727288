use dbarlab::forward::kernel::{KernelMode, KernelRepr};
use dbarlab::forward::lambda_to_k;
use dbarlab::grid::{EnergyContext, C64};
use dbarlab::special::hankel0;
use std::f64::consts::PI;

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn repr_at(lambda: C64, e: f64) -> (KernelRepr, [C64; 2]) {
    let energy = EnergyContext::new(e).unwrap();
    let k = lambda_to_k(lambda, &energy).unwrap();
    (KernelRepr::new(k, &energy, KernelMode::Variety, 4.3), k)
}

// G = e^{ikx} g solves (Δ + E) G = 0 away from the origin
fn helmholtz_residual(repr: &KernelRepr, k: [C64; 2], e: f64, x: (f64, f64)) -> f64 {
    let big_g = |p: (f64, f64)| (I * (k[0] * p.0 + k[1] * p.1)).exp() * repr.evaluate(p);
    let d = (0.02 * x.0.hypot(x.1)).min(2e-3);
    let c = big_g(x);
    // fourth-order five-point second differences on each axis
    let second = |ex: f64, ey: f64| {
        -big_g((x.0 + 2.0 * d * ex, x.1 + 2.0 * d * ey)) + big_g((x.0 + d * ex, x.1 + d * ey)) * 16.0 - c * 30.0
            + big_g((x.0 - d * ex, x.1 - d * ey)) * 16.0
            - big_g((x.0 - 2.0 * d * ex, x.1 - 2.0 * d * ey))
    };
    let lap = (second(1.0, 0.0) + second(0.0, 1.0)) / (12.0 * d * d);
    // compare against the size of the terms that should cancel
    (lap + c * e).norm() / (e * c.norm()).max(1e-300)
}

#[test]
fn kernel_solves_helmholtz_off_origin() {
    let points = [(0.3, 0.1), (-0.7, 0.4), (1.2, -0.9), (-2.0, -1.5), (0.05, 0.02), (2.5, 2.5), (-3.0, 2.0)];
    for &(lam, e) in &[
        (C64::new(0.5, 0.2), 25.0),
        (C64::new(-0.9, 0.3), 100.0),
        (C64::new(3.0, -1.0), 100.0),
        (C64::new(0.0, 0.2), 100.0),
    ] {
        let (repr, k) = repr_at(lam, e);
        for &x in &points {
            let res = helmholtz_residual(&repr, k, e, x);
            assert!(res < 5e-4, "λ={lam} E={e} x={x:?} residual {res:e}");
        }
    }
}

#[test]
fn directional_kernel_solves_helmholtz() {
    let e = 100.0;
    let energy = EnergyContext::new(e).unwrap();
    let th: f64 = 0.7;
    let k = [C64::new(10.0 * th.cos(), 0.0), C64::new(10.0 * th.sin(), 0.0)];
    for gamma in [[1.0, 0.3], [-th.sin(), th.cos()], [0.2, -1.0]] {
        let repr = KernelRepr::new(k, &energy, KernelMode::Directional(gamma), 4.3);
        for &x in &[(0.4, -0.2), (-1.1, 0.9), (2.0, 1.0)] {
            let res = helmholtz_residual(&repr, k, e, x);
            assert!(res < 5e-4, "γ={gamma:?} x={x:?} residual {res:e}");
        }
    }
}

// the near and far representations agree where both are usable
#[test]
fn near_and_far_forms_agree() {
    for &(lam, e) in &[(C64::new(0.2, 0.1), 100.0), (C64::new(4.0, 1.0), 100.0), (C64::new(0.15, 0.0), 25.0)] {
        let (repr, k) = repr_at(lam, e);
        let kappa = e.sqrt();
        let ki = [k[0].im, k[1].im];
        let tau = ki[0].hypot(ki[1]);
        let e2 = [ki[0] / tau, ki[1] / tau];
        let e1 = [e2[1], -e2[0]];
        for &(x1, t2) in &[(0.0, 9.0), (0.5, 10.0), (-1.0, 9.5), (1.7, 11.0)] {
            let x2 = t2 / tau;
            let x = (x1 * e1[0] + x2 * e2[0], x1 * e1[1] + x2 * e2[1]);
            if x.0.hypot(x.1) > 4.3 {
                continue;
            }
            let r = x.0.hypot(x.1);
            let near = (-I * (k[0] * x.0 + k[1] * x.1)).exp() * (-0.25 * I) * hankel0(kappa * r) + repr.smooth_part(x);
            let far = repr.evaluate(x);
            let err = (near - far).norm();
            assert!(err < 1e-7 * (1.0 + far.norm()), "λ={lam} x={x:?} near {near} far {far}");
        }
    }
}

// ∮ ∂_n G ds over a small circle tends to 1
#[test]
fn kernel_has_unit_flux() {
    for &(lam, e) in &[(C64::new(0.6, 0.3), 100.0), (C64::new(2.0, 0.0), 25.0)] {
        let (repr, k) = repr_at(lam, e);
        let big_g = |p: (f64, f64)| (I * (k[0] * p.0 + k[1] * p.1)).exp() * repr.evaluate(p);
        // the enclosed -E∫G is O(ρ² log ρ)
        let rho = 1e-4;
        let d = 1e-7;
        let m = 64;
        let mut flux = C64::new(0.0, 0.0);
        for j in 0..m {
            let th = 2.0 * PI * j as f64 / m as f64;
            let (c, s) = (th.cos(), th.sin());
            let dn = (big_g(((rho + d) * c, (rho + d) * s)) - big_g(((rho - d) * c, (rho - d) * s))) / (2.0 * d);
            flux += dn * (2.0 * PI * rho / m as f64);
        }
        assert!((flux - 1.0).norm() < 1e-4, "flux {flux}");
    }
}

#[test]
fn kernel_reflection_and_conjugation_symmetries() {
    let e = 100.0;
    let energy = EnergyContext::new(e).unwrap();
    let lam = C64::new(1.4, 0.5);
    let k = lambda_to_k(lam, &energy).unwrap();
    let neg = [-k[0], -k[1]];
    let negbar = [-k[0].conj(), -k[1].conj()];
    let rk = KernelRepr::new(k, &energy, KernelMode::Variety, 4.3);
    let rneg = KernelRepr::new(neg, &energy, KernelMode::Variety, 4.3);
    let rnb = KernelRepr::new(negbar, &energy, KernelMode::Variety, 4.3);
    for &x in &[(0.3, 0.2), (-1.0, 0.5), (2.2, -1.9), (0.01, -0.03)] {
        let g = rk.evaluate(x);
        let gm = rneg.evaluate((-x.0, -x.1));
        assert!((g - gm).norm() < 1e-9 * (1.0 + g.norm()), "reflection at {x:?}: {g} vs {gm}");
        let gc = rnb.evaluate(x);
        assert!((g.conj() - gc).norm() < 1e-9 * (1.0 + g.norm()), "conjugation at {x:?}");
    }
}

// g is bounded; a spurious homogeneous term would grow like e^{τ|x|}
#[test]
fn kernel_stays_bounded() {
    for &(lam, e) in &[(C64::new(0.125, 0.0), 100.0), (C64::new(0.0, 6.0), 100.0), (C64::new(0.3, -0.3), 400.0)] {
        let (repr, _) = repr_at(lam, e);
        let mut worst = 0.0f64;
        for i in 0..40 {
            for j in 0..40 {
                let x = (-3.0 + 6.0 * i as f64 / 39.0 + 0.013, -3.0 + 6.0 * j as f64 / 39.0);
                worst = worst.max(repr.evaluate(x).norm());
            }
        }
        assert!(worst < 1.0, "λ={lam} max |g| = {worst}");
    }
}

// approaching the circle from inside gives the +k^⊥ one-sided limit
#[test]
fn offset_kernels_converge_to_directional_limit() {
    let e = 100.0;
    let energy = EnergyContext::new(e).unwrap();
    let th: f64 = 1.1;
    let kr = [C64::new(10.0 * th.cos(), 0.0), C64::new(10.0 * th.sin(), 0.0)];
    let limit = KernelRepr::new(kr, &energy, KernelMode::Directional([-th.sin(), th.cos()]), 4.3);
    let x = (0.8, -0.5);
    let target = limit.evaluate(x);
    let mut last = f64::INFINITY;
    for h in [1e-2, 1e-3, 1e-4] {
        let k = lambda_to_k(C64::from_polar(1.0 - h, th), &energy).unwrap();
        let r = KernelRepr::new(k, &energy, KernelMode::Variety, 4.3);
        let diff = (r.evaluate(x) - target).norm();
        assert!(diff < last, "h={h}: {diff:e} not below {last:e}");
        last = diff;
    }
    assert!(last < 1e-3);
}

#[test]
fn lambda_to_k_examples() {
    let e4 = EnergyContext::new(4.0).unwrap();
    let k = lambda_to_k(C64::new(1.0, 0.0), &e4).unwrap();
    assert!((k[0] - 2.0).norm() < 1e-15 && k[1].norm() < 1e-15);
    let k = lambda_to_k(C64::new(0.0, 1.0), &e4).unwrap();
    assert!(k[0].norm() < 1e-15 && (k[1] - 2.0).norm() < 1e-15);
    assert!(lambda_to_k(C64::new(0.0, 0.0), &e4).is_err());
    let e = EnergyContext::new(37.0).unwrap();
    for lam in [C64::new(0.3, -2.0), C64::new(-5.0, 0.1), C64::new(0.01, 0.02)] {
        let k = lambda_to_k(lam, &e).unwrap();
        let s = k[0] * k[0] + k[1] * k[1];
        assert!((s - 37.0).norm() < 1e-12 * (1.0 + (k[0] * k[0]).norm()));
        assert!((dbarlab::forward::k_to_lambda(k, &e) - lam).norm() < 1e-12 * lam.norm());
    }
}

#[test]
fn sampled_kernel_conjugation_symmetry() {
    use dbarlab::forward::KernelFactory;
    use dbarlab::grid::SpatialGrid;
    let energy = EnergyContext::new(100.0).unwrap();
    let factory = KernelFactory::new(SpatialGrid::new(32, 1.5).unwrap(), energy);
    let k = lambda_to_k(C64::new(0.7, 0.45), &energy).unwrap();
    let a = factory.kernel(k, KernelMode::Variety);
    let b = factory.kernel([-k[0].conj(), -k[1].conj()], KernelMode::Variety);
    let mut worst = 0.0f64;
    for di in -32..32 {
        for dj in -32..32 {
            let (x, y) = (a.sample(di, dj), b.sample(di, dj));
            worst = worst.max((x.conj() - y).norm() / (1.0 + x.norm()));
        }
    }
    assert!(worst < 1e-12, "{worst:e}");
}

// sup |g| on the sampled grid drops as |Im k| doubles
#[test]
fn kernel_decays_with_imaginary_part() {
    use dbarlab::forward::KernelFactory;
    use dbarlab::grid::SpatialGrid;
    let energy = EnergyContext::new(25.0).unwrap();
    let factory = KernelFactory::new(SpatialGrid::new(32, 1.5).unwrap(), energy);
    let mut last = f64::INFINITY;
    // |Im k| = (√E/2)(r - 1/r) along the imaginary λ axis
    for tau in [2.0, 4.0, 8.0, 16.0] {
        let s = tau / energy.sqrt_e;
        let r = s + (s * s + 1.0).sqrt();
        let k = lambda_to_k(C64::new(0.0, r), &energy).unwrap();
        let ker = factory.kernel(k, KernelMode::Variety);
        let mut sup = 0.0f64;
        for di in -32..32 {
            for dj in -32..32 {
                if (di, dj) != (0, 0) {
                    sup = sup.max(ker.sample(di, dj).norm());
                }
            }
        }
        assert!(sup < last, "τ={tau}: {sup} not below {last}");
        last = sup;
    }
}
