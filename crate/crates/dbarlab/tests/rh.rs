use std::f64::consts::PI;
use std::sync::OnceLock;

use dbarlab::forward::ForwardSolver;
use dbarlab::grid::{build_potential, bump_profile, EnergyContext, PotentialField, PotentialKind, SpatialGrid, SpectralGrid, C64};
use dbarlab::rh::*;
use dbarlab::scattering::{compute_scattering, rho_of_z, ScatteringData};
use dbarlab::special::legendre;
use dbarlab::stats::loglog_slope;
use dbarlab::Error;

const I: C64 = C64 { re: 0.0, im: 1.0 };
// integrability exponent used for the estimate slopes
const P: f64 = 4.0;

fn grid64() -> SpatialGrid {
    SpatialGrid::new(64, 1.5).unwrap()
}

fn bump(amp: f64) -> PotentialField {
    build_potential(PotentialKind::Bump, &[amp, 0.5], grid64()).unwrap()
}

fn sup(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

fn data_for(amp: f64, e: f64, grid: &SpectralGrid) -> ScatteringData {
    compute_scattering(&bump(amp), EnergyContext::new(e).unwrap(), grid, None)
        .unwrap()
        .data
}

// bump at E = 50 on a mid-sized annulus
fn main_data() -> &'static ScatteringData {
    static DATA: OnceLock<ScatteringData> = OnceLock::new();
    DATA.get_or_init(|| data_for(1.0, 50.0, &SpectralGrid::new(8.0, 48, 64, 256, 1e-3).unwrap()))
}

fn main_solver() -> &'static RhSolver {
    static SOLVER: OnceLock<RhSolver> = OnceLock::new();
    SOLVER.get_or_init(|| RhSolver::new(main_data()))
}

fn test_z() -> C64 {
    // a node of the 64-point grid inside the bump
    grid64().z(37 * 64 + 26)
}

// interior rings on which the z-dependent phase of r has angular frequency
// √E|z|(ρ + 1/ρ) below a quarter of the ring size
fn resolved_rings(data: &ScatteringData, z: C64) -> Vec<usize> {
    let limit = data.grid.n_theta() as f64 / 4.0;
    (1..data.grid.n_radii() - 1)
        .filter(|&ir| {
            let rho = data.grid.radii[ir];
            data.energy.sqrt_e * z.norm() * (rho + 1.0 / rho) <= limit
        })
        .collect()
}

fn gaussian(grid: &SpectralGrid) -> Vec<C64> {
    grid.nodes()
        .iter()
        .map(|l| C64::new((-(l - C64::new(0.3, 0.2)).norm_sqr()).exp(), 0.5 * (-l.norm_sqr()).exp()))
        .collect()
}

#[test]
fn disc_indicator_transform_is_closed_form() {
    let grid = SpectralGrid::default_grid();
    let plan = CauchyPlan::new(&grid);
    let nodes = grid.nodes();
    let f: Vec<C64> = nodes.iter().map(|l| C64::new(if l.norm() < 1.0 { 1.0 } else { 0.0 }, 0.0)).collect();
    let out = cauchy_solid(&plan, &f).unwrap();
    let err = nodes
        .iter()
        .zip(&out)
        .map(|(l, u)| {
            let exact = if l.norm() < 1.0 { l.conj() } else { 1.0 / l };
            (u - exact).norm()
        })
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "sup error {err}");
    let zero = cauchy_solid(&plan, &vec![C64::new(0.0, 0.0); grid.n_nodes()]).unwrap();
    assert!(zero.iter().all(|z| z.norm() == 0.0));
    let heavy = vec![C64::new(1.0, 0.0); grid.n_nodes()];
    assert!(matches!(cauchy_solid(&plan, &heavy), Err(Error::TailTooHeavy(_))));
}

#[test]
fn transform_of_compact_data_decays_outside() {
    let grid = SpectralGrid::default_grid();
    let plan = CauchyPlan::new(&grid);
    let nodes = grid.nodes();
    let f: Vec<C64> = nodes
        .iter()
        .map(|l| if l.norm() < 1.0 { C64::new(1.0 + l.re, l.im * l.re) } else { C64::new(0.0, 0.0) })
        .collect();
    let out = plan.apply(&f);
    let nt = grid.n_theta();
    let (mut radii, mut peaks) = (Vec::new(), Vec::new());
    for ir in grid.n_radii() / 2..grid.n_radii() {
        radii.push(grid.radii[ir]);
        peaks.push(sup(&out[ir * nt..(ir + 1) * nt]));
    }
    let slope = loglog_slope(&radii, &peaks).unwrap();
    assert!(slope <= 0.75 * (2.0 / P - 1.0), "slope {slope}");
}

#[test]
fn anchored_transform_vanishes_at_its_anchor() {
    let grid = SpectralGrid::default_grid();
    let plan = CauchyPlan::new(&grid);
    let zeta = C64::from_polar(1.0, 0.3);
    let dists: Vec<f64> = (0..8).map(|i| 0.1 * 0.5f64.powi(i)).collect();
    let inward = C64::from_polar(1.0, 0.3 + PI + 0.4);
    let at: Vec<C64> = std::iter::once(zeta).chain(dists.iter().map(|&d| zeta + d * inward)).collect();
    let smooth = cauchy_solid_anchored(&plan, &gaussian(&grid), zeta, &at).unwrap();
    assert!(smooth[0].norm() <= 1e-10);
    // disc indicator: ∂̄⁻¹ is λ̄ inside, so the anchored transform is λ̄ - ζ̄
    let disc: Vec<C64> = grid
        .nodes()
        .iter()
        .map(|l| C64::new(if l.norm() < 1.0 { 1.0 } else { 0.0 }, 0.0))
        .collect();
    let out = cauchy_solid_anchored(&plan, &disc, zeta, &at).unwrap();
    assert!(out[0].norm() <= 1e-10);
    for (l, u) in at.iter().zip(&out).skip(1) {
        let exact = l.conj() - zeta.conj();
        assert!((u - exact).norm() <= 1e-3, "{u} vs {exact}");
    }
    for values in [&smooth, &out] {
        let size: Vec<f64> = values[1..].iter().map(|z| z.norm()).collect();
        let slope = loglog_slope(&dists, &size).unwrap();
        assert!(slope >= 0.75 * (1.0 - 2.0 / P), "slope near the anchor {slope}");
    }
    let zero = cauchy_solid_anchored(&plan, &vec![C64::new(0.0, 0.0); grid.n_nodes()], zeta, &at).unwrap();
    assert!(zero.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn boundary_transform_of_simple_data() {
    let n = 64;
    let thetas: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
    let ones = vec![C64::new(1.0, 0.0); n];
    let fifth: Vec<C64> = thetas.iter().map(|&t| C64::from_polar(1.0, 5.0 * t)).collect();
    let smooth: Vec<C64> = thetas.iter().map(|&t| C64::new(t.cos().exp(), 0.0)).collect();
    for (j, &t) in thetas.iter().enumerate().step_by(5) {
        let l = C64::from_polar(1.0, t);
        assert!((cauchy_boundary(&ones, BoundarySide::Plus, l) - 1.0).norm() < 1e-13);
        assert!(cauchy_boundary(&ones, BoundarySide::Minus, l).norm() < 1e-13);
        assert!((cauchy_boundary(&fifth, BoundarySide::Plus, l) - l.powi(5)).norm() < 1e-12);
        assert!(cauchy_boundary(&fifth, BoundarySide::Minus, l).norm() < 1e-12);
        let jump = cauchy_boundary(&smooth, BoundarySide::Plus, l) - cauchy_boundary(&smooth, BoundarySide::Minus, l);
        assert!((jump - smooth[j]).norm() <= 1e-3 * smooth[j].norm(), "Plemelj at {t}");
    }
    // off the circle the side is irrelevant
    let inside = C64::new(0.3, -0.2);
    assert!((cauchy_boundary(&ones, BoundarySide::Minus, inside) - 1.0).norm() < 1e-13);
    assert!(cauchy_boundary(&ones, BoundarySide::Plus, C64::new(2.0, 1.0)).norm() < 1e-13);
}

#[test]
fn free_data_collapse() {
    let grid = SpectralGrid::new(4.0, 16, 16, 64, 1e-3).unwrap();
    let data = ScatteringData::free(EnergyContext::new(25.0).unwrap(), grid.clone());
    let solver = RhSolver::new(&data);
    let z = C64::new(0.2, -0.4);
    let r_z = solver.build_r_z(z);
    assert!(r_z.iter().all(|r| r.norm() == 0.0));
    assert!(solver.solve_e(&r_z).unwrap().iter().all(|e| *e == C64::new(1.0, 0.0)));
    let zeta = C64::from_polar(1.0, 0.7);
    let x1 = solver.solve_x(&r_z, zeta, AuxKind::X1).unwrap();
    let x2 = solver.solve_x(&r_z, zeta, AuxKind::X2).unwrap();
    for ((l, a), b) in grid.nodes().iter().zip(&x1).zip(&x2) {
        assert_eq!(*a, 1.0 / (2.0 * (zeta - l)));
        assert!((b - 1.0 / (2.0 * I * (zeta - l))).norm() <= 1e-15 * b.norm());
    }
    let ws = solver.solve_at(z).unwrap();
    assert!(ws.k_jump.iter().all(|k| k.norm() == 0.0));
    assert_eq!(ws.mu_minus1, C64::new(0.0, 0.0));
    assert_eq!(solver.assemble_mu(&ws, C64::new(2.0, 0.5)), C64::new(1.0, 0.0));
    let terms = solver.dz_mu_minus1_abc(z, ABC_STEP).unwrap();
    assert_eq!(terms.total(), C64::new(0.0, 0.0));
    let rec = reconstruct_v(&data, SpatialGrid::new(16, 1.5).unwrap(), Route::SpectralDz, None).unwrap();
    assert!(rec.v_rec.values.iter().all(|v| v.norm() == 0.0));
    assert!(rec.mu_minus1.values.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn spectral_phase_keeps_modulus_and_winds_once() {
    let data = main_data();
    let solver = main_solver();
    let energy = data.energy;
    let base = solver.build_r_z(C64::new(0.0, 0.0));
    assert_eq!(base, data.r_values);
    let shifted = solver.build_r_z(C64::new(0.4, -0.3));
    for (a, b) in base.iter().zip(&shifted) {
        assert!((a.norm() - b.norm()).abs() <= 1e-14 * a.norm().max(1e-300));
    }
    // along the direction of λ the phase turns by 2π over 2π/(√E(|λ| + 1/|λ|))
    let idx = 40 * data.grid.n_theta() + 5;
    let lambda = data.grid.node(idx);
    let period = 2.0 * PI / (energy.sqrt_e * (lambda.norm() + 1.0 / lambda.norm()));
    let dir = lambda / lambda.norm();
    let steps = 400;
    let mut turned = 0.0;
    let mut prev = base[idx];
    for s in 1..=steps {
        let z = dir * (period * s as f64 / steps as f64);
        let cur = solver.build_r_z(z)[idx];
        turned += (cur / prev).arg();
        prev = cur;
    }
    assert!((turned.abs() / (2.0 * PI) - 1.0).abs() < 0.05, "turned {turned}");
}

#[test]
fn e_satisfies_its_dbar_equation() {
    let data = main_data();
    let solver = main_solver();
    let r_z = solver.build_r_z(test_z());
    let e = solver.solve_e(&r_z).unwrap();
    let src: Vec<C64> = r_z.iter().zip(&e).map(|(r, x)| r * x.conj()).collect();
    let nodes = data.grid.nodes();
    let nt = data.grid.n_theta();
    let mut worst = 0.0f64;
    for ir in resolved_rings(data, test_z()) {
        for j in (0..nt).step_by(3) {
            let idx = ir * nt + j;
            let l = nodes[idx];
            let h = 1e-5 * l.norm();
            let at = |d: C64| C64::new(1.0, 0.0) + solver.plan.evaluate(&src, l + d);
            let dbar = ((at(C64::new(h, 0.0)) - at(C64::new(-h, 0.0))) + I * (at(C64::new(0.0, h)) - at(C64::new(0.0, -h)))) / (4.0 * h);
            worst = worst.max((dbar - r_z[idx] * e[idx].conj()).norm());
        }
    }
    assert!(worst <= 1e-3 * sup(&r_z), "residual {worst} vs sup r {}", sup(&r_z));
    // decay of e - 1 at the outer rim
    let (mut radii, mut dev) = (Vec::new(), Vec::new());
    for ir in data.grid.n_radii() - 8..data.grid.n_radii() {
        radii.push(data.grid.radii[ir]);
        dev.push(e[ir * nt..(ir + 1) * nt].iter().fold(0.0f64, |m, x| m.max((x - 1.0).norm())));
    }
    let slope = loglog_slope(&radii, &dev).unwrap();
    assert!(slope <= 0.75 * (2.0 / P - 1.0), "slope {slope}");
}

#[test]
fn auxiliary_functions_have_the_prescribed_poles() {
    let data = main_data();
    let solver = main_solver();
    let r_z = solver.build_r_z(test_z());
    let zeta = data.grid.circle_node(10);
    let x1 = solver.solve_x(&r_z, zeta, AuxKind::X1).unwrap();
    let x2 = solver.solve_x(&r_z, zeta, AuxKind::X2).unwrap();
    let (o1, o2) = solver.solve_omegas(&r_z, zeta).unwrap();
    for i in 0..x1.len() {
        assert!((o1[i] + o2[i] - 2.0 * x1[i]).norm() <= 1e-14 * x1[i].norm());
        assert!((o1[i] - o2[i] - 2.0 * I * x2[i]).norm() <= 1e-14 * x2[i].norm());
    }
    let nodes = data.grid.nodes();
    let nearest = (0..nodes.len())
        .min_by(|&a, &b| (nodes[a] - zeta).norm().total_cmp(&(nodes[b] - zeta).norm()))
        .unwrap();
    let d = zeta - nodes[nearest];
    assert!((d * x1[nearest] - 0.5).norm() <= 0.05 * 0.5);
    assert!((d * x2[nearest] - 1.0 / (2.0 * I)).norm() <= 0.05 * 0.5);
}

#[test]
fn assembled_mu_solves_the_dbar_equation() {
    let data = main_data();
    let solver = main_solver();
    let ws = solver.solve_at(test_z()).unwrap();
    assert!(ws.residual < 1e-6, "system residual {}", ws.residual);
    let nodes = data.grid.nodes();
    let nt = data.grid.n_theta();
    let mut worst = 0.0f64;
    for ir in resolved_rings(data, test_z()) {
        for j in (0..nt).step_by(5) {
            let idx = ir * nt + j;
            let l = nodes[idx];
            let h = 1e-5 * l.norm();
            let at = |d: C64| solver.assemble_mu(&ws, l + d);
            let dbar = ((at(C64::new(h, 0.0)) - at(C64::new(-h, 0.0))) + I * (at(C64::new(0.0, h)) - at(C64::new(0.0, -h)))) / (4.0 * h);
            worst = worst.max((dbar - ws.r_z[idx] * at(C64::new(0.0, 0.0)).conj()).norm());
            assert!((at(C64::new(0.0, 0.0)) - ws.mu[idx]).norm() < 1e-6);
        }
    }
    assert!(worst <= 1e-2 * sup(&ws.r_z), "residual {worst} vs sup r {}", sup(&ws.r_z));
}

#[test]
fn assembled_mu_jumps_by_the_circle_integral() {
    let data = main_data();
    let solver = main_solver();
    let z = test_z();
    let ws = solver.solve_at(z).unwrap();
    let n = data.rho.n;
    let w = 2.0 * PI / n as f64;
    let circle: Vec<C64> = (0..n).map(|a| data.grid.circle_node(a)).collect();
    let eps = 1e-7;
    let inner: Vec<C64> = circle.iter().map(|&l| solver.assemble_mu(&ws, l * (1.0 - eps))).collect();
    let outer: Vec<C64> = circle.iter().map(|&l| solver.assemble_mu(&ws, l * (1.0 + eps))).collect();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for a in 0..n {
        let integral: C64 = (0..n)
            .map(|b| rho_of_z(data.rho.get(a, b), circle[a], circle[b], z, &data.energy) * outer[b])
            .sum::<C64>()
            * w;
        let jump = inner[a] - outer[a];
        worst = worst.max((jump - integral).norm());
        scale = scale.max(jump.norm());
    }
    assert!(worst <= 1e-2 * scale, "jump residual {worst} of {scale}");
}

#[test]
fn jump_matches_forward_one_sided_limits() {
    let data = main_data();
    let solver = main_solver();
    let grid = grid64();
    let idx = 37 * 64 + 26;
    let ws = solver.solve_at(grid.z(idx)).unwrap();
    let forward = ForwardSolver::new(&bump(1.0), data.energy);
    let n = data.rho.n;
    let mut worst = 0.0f64;
    for a in (0..n).step_by(16) {
        let (plus, minus) = forward.mu_pm_limit(2.0 * PI * a as f64 / n as f64).unwrap();
        let direct = plus.mu.values[idx] - minus.mu.values[idx];
        worst = worst.max((ws.k_jump[a] - direct).norm());
    }
    let scale = sup(&ws.k_jump);
    assert!(worst <= 1e-2 * scale, "K differs by {worst} of {scale}");
}

#[test]
fn first_moment_agrees_with_the_omega_formula() {
    let data = data_for(1.0, 50.0, &SpectralGrid::new(8.0, 32, 16, 64, 1e-3).unwrap());
    let solver = RhSolver::new(&data);
    let ws = solver.solve_at(C64::new(0.2, -0.1)).unwrap();
    let via_omegas = solver.mu_minus1_from_omegas(&ws).unwrap();
    let err = (via_omegas - ws.mu_minus1).norm() / ws.mu_minus1.norm();
    assert!(err < 1e-2, "{via_omegas} vs {}", ws.mu_minus1);
}

// smaller grids for the energy trends
fn trend_data(e: f64) -> ScatteringData {
    data_for(1.0, e, &SpectralGrid::new(8.0, 32, 32, 128, 1e-3).unwrap())
}

#[test]
fn jump_shrinks_with_energy() {
    // nodes near the rim of the bump, where the jump is largest
    let ring = [(38, 38), (39, 31), (26, 38), (25, 26), (38, 25), (32, 39), (31, 25)];
    let grid = grid64();
    let mut k_norms = Vec::new();
    for e in [50.0, 200.0] {
        let data = trend_data(e);
        let solver = RhSolver::new(&data);
        let mut peak = 0.0f64;
        for (ix, iy) in ring {
            let ws = solver.solve_at(grid.z(iy * 64 + ix)).unwrap();
            peak = peak.max(sup(&ws.k_jump));
        }
        k_norms.push(peak);
    }
    let ratio = k_norms[1] / k_norms[0];
    assert!((ratio - 0.5).abs() <= 0.125, "K norms {k_norms:?}");
}

#[test]
fn omega_deviation_is_bounded_in_energy() {
    let mut omega_scaled = Vec::new();
    let m = 3.0;
    for e in [25.0, 100.0] {
        let data = trend_data(e);
        let solver = RhSolver::new(&data);
        let r_z = solver.build_r_z(C64::new(0.0, 0.0));
        let zeta = C64::new(1.0, 0.0);
        let (o1, _) = solver.solve_omegas(&r_z, zeta).unwrap();
        let dev = data
            .grid
            .nodes()
            .iter()
            .zip(&o1)
            .map(|(l, o)| (o - 1.0 / (zeta - l)).norm() * (zeta - l).norm().powf(2.0 / P))
            .fold(0.0, f64::max);
        omega_scaled.push(dev * e.powf(m / 2.0));
    }
    assert!(omega_scaled[1] <= 1.25 * omega_scaled[0], "scaled Ω deviations {omega_scaled:?}");
}

// Born limit for a radial potential: μ₋₁ = ∂_z⁻¹v/(2i√E), and the Cauchy
// transform of a radial profile is (2/z̄)∫₀^|z| v(s)s ds
fn born_first_moment(amp: f64, z: C64, sqrt_e: f64) -> C64 {
    let mass: f64 = legendre(64, 0.0, z.norm())
        .iter()
        .map(|&(s, w)| w * s * bump_profile(amp, 0.5, (0.0, 0.0), s, 0.0))
        .sum();
    2.0 * mass / z.conj() / (2.0 * I * sqrt_e)
}

#[test]
fn born_first_moment_matches_closed_form() {
    let t = 1e-3;
    let e = 100.0;
    let data = data_for(t, e, &SpectralGrid::new(8.0, 32, 64, 128, 1e-3).unwrap());
    let solver = RhSolver::new(&data);
    let grid = grid64();
    for idx in [37 * 64 + 26, 31 * 64 + 39] {
        let z = grid.z(idx);
        let ws = solver.solve_at(z).unwrap();
        let oracle = born_first_moment(t, z, data.energy.sqrt_e);
        let err = (ws.mu_minus1 - oracle).norm() / oracle.norm();
        assert!(err < 1e-2, "z = {z}: {} vs {oracle}", ws.mu_minus1);
        // the conj(∂_z̄ μ) term is second order in the amplitude
        let terms = solver.dz_mu_minus1_abc(z, ABC_STEP).unwrap();
        assert!(terms.volume_mu.norm() <= 0.1 * (terms.volume_phase + terms.circle).norm(), "{terms:?}");
        let (x, y) = grid.point(idx);
        let dz_born = bump_profile(t, 0.5, (0.0, 0.0), x, y) / (2.0 * I * data.energy.sqrt_e);
        assert!((terms.total() - dz_born).norm() <= 2e-2 * dz_born.norm(), "{} vs {dz_born}", terms.total());
    }
}

#[test]
fn reconstruction_is_real_and_routes_agree() {
    let data = main_data();
    let solver = main_solver();
    let grid = SpatialGrid::new(32, 1.5).unwrap();
    let truth = build_potential(PotentialKind::Bump, &[1.0, 0.5], grid).unwrap();
    let rec = reconstruct_v(data, grid, Route::SpectralDz, Some(&truth)).unwrap();
    assert!(rec.imag_sup <= 1e-2 * truth.sup_norm(), "imaginary part {}", rec.imag_sup);
    let err = rec.error_vs_truth.unwrap();
    assert!(err <= 0.1 * truth.sup_norm(), "round trip error {err}");
    let scale = rec.v_rec.sup_norm();
    let mut worst = 0.0f64;
    for (ix, iy) in [(16, 16), (18, 14), (13, 19), (20, 20), (11, 16), (16, 22)] {
        let idx = iy * 32 + ix;
        let d = solver.dz_mu_minus1_abc(grid.z(idx), ABC_STEP).unwrap().total();
        let v = 2.0 * I * data.energy.sqrt_e * d;
        worst = worst.max((v - rec.v_rec.values[idx]).norm());
    }
    assert!(worst <= 2e-2 * scale, "routes differ by {worst} of {scale}");
}

#[test]
fn zero_jump_kernel_gives_zero_jump() {
    let mut data = main_data().clone();
    data.rho.values.iter_mut().for_each(|r| *r = C64::new(0.0, 0.0));
    let solver = RhSolver::new(&data);
    let ws = solver.solve_at(test_z()).unwrap();
    assert!(sup(&ws.k_jump) <= 1e-12, "{}", sup(&ws.k_jump));
    assert!(Route::parse("spectral_dz").is_ok() && Route::parse("abc").is_ok());
    assert!(Route::parse("fft").is_err());
}
