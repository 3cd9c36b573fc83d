mod common;

use proptest::prelude::*;
use qvi_core::extremal::t_rho_lipschitz;
use qvi_core::obstacle::ObstacleMap;
use qvi_core::vi::{solve_s, solve_t_rho};
use qvi_core::*;

fn space(n: usize) -> DiscreteSpace64 {
    DiscreteSpace64::laplace(n).unwrap()
}

fn field(v: Vec<f64>) -> Field64 {
    Field::new(v).unwrap()
}

fn dual(v: Vec<f64>) -> DualField64 {
    DualField::new(v).unwrap()
}

const N: usize = 16;

fn nodal(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, N)
}

fn obstacle_map(s: &DiscreteSpace64, scale: f64) -> InverseLaplacianObstacle<f64> {
    InverseLaplacianObstacle::with_scale_offset(s, scale, s.interpolate(|_| 0.05)).unwrap()
}

fn viol(a: &Field64, b: &Field64) -> f64 {
    fem::order_violation(a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penalty_sandwich(r in -50.0f64..50.0, e in -9.0f64..2.0) {
        let rho = 10f64.powf(e);
        let gap = r.max(0.0) - sigma(rho, r);
        prop_assert!(gap >= 0.0 && gap <= rho / 2.0, "r={r} rho={rho} gap={gap}");
        let d = sigma_prime(rho, r);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn penalty_monotone(r1 in -5.0f64..5.0, r2 in -5.0f64..5.0, e in -6.0f64..0.0, k in 1.0f64..50.0) {
        let rho = 10f64.powf(e);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(sigma(rho, lo) <= sigma(rho, hi));
        prop_assert!(sigma(rho, r1) >= sigma(rho * k, r1));
    }

    #[test]
    fn t_rho_increasing_in_data(
        f in nodal(0.0, 20.0), df in nodal(0.0, 5.0),
        phi in nodal(-0.5, 0.5), dphi in nodal(0.0, 0.3),
        e in -4.0f64..-1.0, scale in 0.0f64..8.0,
    ) {
        let s = space(N);
        let map = obstacle_map(&s, scale);
        let rho = 10f64.powf(e);
        let g = s.lumped_load(&field(f));
        let f_hi = &g + &s.lumped_load(&field(df));
        let psi = field(phi);
        let phi_hi = &psi + &field(dphi);
        let o = vi::SolverOptions::tight();
        let lo = solve_t_rho(&s, rho, &g, &psi, &map, None, &o).unwrap().solution;
        let hi = solve_t_rho(&s, rho, &f_hi, &phi_hi, &map, None, &o).unwrap().solution;
        prop_assert!(viol(&lo, &hi) <= TOL_ORD);
    }

    #[test]
    fn t_rho_increasing_in_rho_and_above_vi(
        f in nodal(0.0, 20.0), phi in nodal(-0.5, 0.5), e in -5.0f64..-1.0, k in 1.0f64..20.0,
    ) {
        let s = space(N);
        let map = obstacle_map(&s, 4.0);
        let rho = 10f64.powf(e);
        let g = s.lumped_load(&field(f));
        let phi = field(phi);
        let o = vi::SolverOptions::tight();
        let t_rho = solve_t_rho(&s, rho, &g, &phi, &map, None, &o).unwrap().solution;
        let t_kappa = solve_t_rho(&s, rho * k, &g, &phi, &map, None, &o).unwrap().solution;
        let vi = solve_s(&s, &g, &map.eval(&phi).unwrap(), &o).unwrap().solution;
        prop_assert!(viol(&t_rho, &t_kappa) <= TOL_ORD);
        prop_assert!(viol(&vi, &t_rho) <= TOL_ORD);
    }

    #[test]
    fn t_rho_lipschitz_in_data(
        f in nodal(0.0, 20.0), g in nodal(0.0, 20.0),
        phi in nodal(-0.5, 0.5), psi in nodal(-0.5, 0.5), e in -4.0f64..0.0,
    ) {
        let s = space(N);
        let map = obstacle_map(&s, 3.0);
        let rho = 10f64.powf(e);
        let (f, g) = (s.lumped_load(&field(f)), s.lumped_load(&field(g)));
        let (phi, psi) = (field(phi), field(psi));
        let o = vi::SolverOptions::tight();
        let u = solve_t_rho(&s, rho, &f, &phi, &map, None, &o).unwrap().solution;
        let v = solve_t_rho(&s, rho, &g, &psi, &map, None, &o).unwrap().solution;
        let (a, b) = t_rho_lipschitz(s.coercivity(), s.boundedness());
        let rhs = a * s.dual_norm(&(&f - &g)).unwrap()
            + b * s.v_dist(&map.eval(&phi).unwrap(), &map.eval(&psi).unwrap()).unwrap();
        prop_assert!(s.v_dist(&u, &v).unwrap() <= rhs * (1.0 + 1e-10) + 1e-13);
    }

    #[test]
    fn extremal_order(top in 5.0f64..30.0, frac in nodal(0.0, 1.0), e in -4.0f64..-1.0, scale in 0.0f64..6.0) {
        let s = space(N);
        let map = obstacle_map(&s, scale);
        let bound = s.load_of(|_| top);
        let iv = make_interval_from_bound(&s, &bound, &map, 1.0, &Default::default()).unwrap();
        let f = dual(bound.iter().zip(&frac).map(|(b, t)| b * t).collect());
        let rho = 10f64.powf(e);
        let o = ExtremalOptions::tight();
        let m_rho = iterate_extremal(&s, rho, &f, &iv, Branch::Min, &map, &o).unwrap();
        let big_rho = iterate_extremal(&s, rho, &f, &iv, Branch::Max, &map, &o).unwrap();
        let m = iterate_extremal(&s, 0.0, &f, &iv, Branch::Min, &map, &o).unwrap();
        let big = iterate_extremal(&s, 0.0, &f, &iv, Branch::Max, &map, &o).unwrap();
        prop_assert!(m_rho.monotone && big_rho.monotone && m.monotone && big.monotone);
        prop_assert!(viol(&m_rho.solution, &big_rho.solution) <= TOL_ORD);
        prop_assert!(viol(&m.solution, &big.solution) <= TOL_ORD);
        prop_assert!(viol(&big.solution, &big_rho.solution) <= TOL_ORD);
        prop_assert!(viol(&m.solution, &m_rho.solution) <= TOL_ORD);
        prop_assert!(viol(&iv.sub, &m.solution) <= TOL_ORD && viol(&big_rho.solution, &iv.sup) <= TOL_ORD);
    }

    #[test]
    fn inverse_laplacian_map_increasing(u in nodal(-1.0, 1.0), du in nodal(0.0, 1.0), scale in 0.0f64..10.0) {
        let s = space(N);
        let map = obstacle_map(&s, scale);
        let u = field(u);
        let v = &u + &field(du);
        prop_assert!(viol(&map.eval(&u).unwrap(), &map.eval(&v).unwrap()) <= 1e-14);
    }

    #[test]
    fn thermo_map_increasing(u in nodal(-0.2, 1.2), du in nodal(0.0, 0.5)) {
        let s = space(N);
        let map = ThermoformingObstacle::new(&s).unwrap();
        let u = field(u);
        let v = &u + &field(du);
        prop_assert!(viol(&map.eval(&u).unwrap(), &map.eval(&v).unwrap()) <= TOL_ORD);
    }

    #[test]
    fn pdas_matches_dense_qp(
        coeff in prop::collection::vec(0.2f64..5.0, 9),
        f in prop::collection::vec(-30.0f64..30.0, 8),
        psi in prop::collection::vec(-0.3f64..0.3, 8),
    ) {
        let s = DiscreteSpace64::assemble(8, |x| coeff[((x * 9.0) as usize).min(8)]).unwrap();
        let f = dual(f);
        let oracle = common::dense_qp(&common::dense(s.stiffness()), &f, &psi);
        let u = solve_s(&s, &f, &field(psi), &vi::SolverOptions::default()).unwrap().solution;
        let err = u.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10, "err {err:e}");
    }

    #[test]
    fn tridiagonal_solve_matches_lu(diag_shift in 0.0f64..10.0, rhs in prop::collection::vec(-5.0f64..5.0, 8)) {
        let s = space(8);
        let a = s.stiffness().add_diagonal(&[diag_shift; 8]).unwrap();
        let x = a.solve(&rhs).unwrap();
        let oracle = common::dense(&a).lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for (p, q) in x.iter().zip(oracle.iter()) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn lattice_operations(a in nodal(-3.0, 3.0), b in nodal(-3.0, 3.0)) {
        let (a, b) = (field(a), field(b));
        let lo = inf(&a, &b);
        let hi = sup(&a, &b);
        prop_assert!(order_leq(&lo, &a, 0.0) && order_leq(&a, &hi, 0.0));
        prop_assert!((&(&lo + &hi) - &(&a + &b)).max_abs() <= 1e-15);
        prop_assert!((&pos_part(&(&a - &b)) - &(&hi - &b)).max_abs() <= 1e-15);
    }
}

#[test]
fn single_precision_tracks_double() {
    let s64 = space(32);
    let s32 = DiscreteSpace::<f32>::laplace(32).unwrap();
    let psi64 = s64.interpolate(|x| 0.05 + 0.1 * x);
    let psi32 = s32.interpolate(|x| 0.05 + 0.1 * x);
    let u64 = solve_s(&s64, &s64.load_of(|_| 8.0), &psi64, &Default::default())
        .unwrap()
        .solution;
    let u32 = solve_s(&s32, &s32.load_of(|_| 8.0), &psi32, &Default::default())
        .unwrap()
        .solution;
    let err = u64
        .iter()
        .zip(u32.iter())
        .map(|(a, &b)| (a - b as f64).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn condition_number_grows_like_h_squared() {
    // κ(L) ≈ 4/(π h)² for the Dirichlet Laplacian; logged for reference.
    for n in [16, 64, 256] {
        let s = space(n);
        let m = common::dense(s.laplacian());
        let ev = m.symmetric_eigenvalues();
        let kappa = ev.max() / ev.min();
        let h = s.h();
        let predicted = 4.0 / (std::f64::consts::PI * h).powi(2);
        eprintln!("n = {n}: kappa = {kappa:.3e}, 4/(pi h)^2 = {predicted:.3e}");
        assert!((kappa / predicted - 1.0).abs() < 0.05);
    }
}
