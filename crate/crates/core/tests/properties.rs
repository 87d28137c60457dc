use hflab::bundle::{gauge_apply, make_constant_connection, monodromy, projection_wrt};
use hflab::flow::{energy, tension};
use hflab::jholder::{determinant_defect, graded, semisimplify, Tolerances};
use hflab::matcore::{adjoint_wrt, expm, herm_split, inner_k, logm_principal, norm_sq_k, BackgroundMetric};
use hflab::{BaseGrid, CMat, GaugeField, RepFamily, TieBreak, C64};
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = C64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| C64::new(re, im))
}

fn mat(r: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec(complex(), r * r).prop_map(move |v| CMat::from_fn(r, r, |i, j| v[i * r + j]))
}

fn sized_mat() -> impl Strategy<Value = CMat> {
    (1usize..=5).prop_flat_map(mat)
}

/// `X^† X + I`, comfortably positive definite.
fn metric(r: usize) -> impl Strategy<Value = BackgroundMetric> {
    mat(r).prop_map(move |x| BackgroundMetric::new(&(&x.dagger() * &x) + &CMat::identity(r)).unwrap())
}

fn unitary(r: usize) -> impl Strategy<Value = CMat> {
    mat(r).prop_map(|x| {
        let h = (&x + &x.dagger()).scale(0.5);
        expm(&h.scale_c(C64::new(0.0, 3.0)))
    })
}

fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
    (a - b).frob_norm() <= tol * (1.0 + a.frob_norm().max(b.frob_norm()))
}

/// `S · diag · S⁻¹` with one or two generators and repeated characters.
fn diagonalizable_family() -> impl Strategy<Value = RepFamily> {
    (1usize..=5, any::<bool>()).prop_flat_map(|(r, two)| {
        let chars = prop::collection::vec((0usize..3, 0usize..3), r);
        (chars, mat(r)).prop_map(move |(idx, x)| {
            let s = &CMat::identity(r) + &x.scale(0.2);
            let s_inv = s.inverse().unwrap();
            let pick = |i: usize| C64::new(1.0 + i as f64, 0.5 * i as f64);
            let d1 = CMat::diag(&idx.iter().map(|&(a, _)| pick(a)).collect::<Vec<_>>());
            let d2 = CMat::diag(&idx.iter().map(|&(_, b)| pick(b).conj()).collect::<Vec<_>>());
            let conj = |d: &CMat| &(&s * d) * &s_inv;
            let gens = if two { vec![conj(&d1), conj(&d2)] } else { vec![conj(&d1)] };
            RepFamily::new(gens, &Tolerances::exact()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_is_an_involutive_antihomomorphism((k, a, b) in (1usize..=4).prop_flat_map(|r| (metric(r), mat(r), mat(r)))) {
        let aa = adjoint_wrt(&adjoint_wrt(&a, &k), &k);
        prop_assert!(close(&aa, &a, 1e-10));
        let lhs = adjoint_wrt(&(&a * &b), &k);
        let rhs = &adjoint_wrt(&b, &k) * &adjoint_wrt(&a, &k);
        prop_assert!(close(&lhs, &rhs, 1e-10));
    }

    #[test]
    fn herm_split_parts((k, m) in (1usize..=4).prop_flat_map(|r| (metric(r), mat(r)))) {
        let (u, psi) = herm_split(&m, &k);
        prop_assert!(close(&(&u + &psi), &m, 1e-12));
        prop_assert!(close(&adjoint_wrt(&u, &k), &(-&u), 1e-10));
        prop_assert!(close(&adjoint_wrt(&psi, &k), &psi, 1e-10));
    }

    #[test]
    fn inner_k_is_positive_and_conjugate_symmetric((k, a, b) in (1usize..=4).prop_flat_map(|r| (metric(r), mat(r), mat(r)))) {
        let n = norm_sq_k(&a, &k);
        prop_assert!(n >= 0.0);
        prop_assert!((n == 0.0) == (a.frob_norm() == 0.0));
        let ab = inner_k(&a, &b, &k);
        let ba = inner_k(&b, &a, &k);
        prop_assert!((ab - ba.conj()).norm() <= 1e-10 * (1.0 + ab.norm()));
    }

    #[test]
    fn expm_logm_round_trip_on_positive_spectra(
        (q, logs) in (1usize..=5).prop_flat_map(|r| (unitary(r), prop::collection::vec(-3.0..3.0f64, r)))
    ) {
        let lam: Vec<f64> = logs.iter().map(|x| 10f64.powf(*x)).collect();
        let h = &(&q * &CMat::diag_real(&lam)) * &q.dagger();
        let l = logm_principal(&h).unwrap();
        let back = expm(&l);
        prop_assert!(close(&back, &h, 1e-10), "{}", (&back - &h).frob_norm());
    }

    #[test]
    fn logm_expm_round_trip_small(m in sized_mat()) {
        let x = m.scale(0.5);
        prop_assert!(close(&logm_principal(&expm(&x)).unwrap(), &x, 1e-10));
    }

    #[test]
    fn constant_gauge_conjugates_monodromy(c in mat(2), s in mat(2)) {
        let grid = BaseGrid::circle(16).unwrap();
        let sigma = &CMat::identity(2) + &s.scale(0.3);
        let a = make_constant_connection(grid, &[c]).unwrap();
        let b = gauge_apply(&GaugeField::constant(grid, &sigma).unwrap(), &a).unwrap();
        let expect = &(&sigma * &monodromy(&a, 0, 0).unwrap()) * &sigma.inverse().unwrap();
        prop_assert!(close(&monodromy(&b, 0, 0).unwrap(), &expect, 1e-10));
    }

    #[test]
    fn unitary_gauge_preserves_energy_and_conjugates_tension(c in mat(2), u in unitary(2), phase in 0.0..6.0f64) {
        let grid = BaseGrid::circle(16).unwrap();
        let k = BackgroundMetric::identity(2);
        let a = make_constant_connection(grid, &[c]).unwrap();
        // x-dependent unitary gauge: u · diag(e^{2πi x}, 1)
        let g = GaugeField::from_fn(grid, 2, |x| {
            let z = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * x[0] + phase);
            &u * &CMat::diag(&[z, C64::new(1.0, 0.0)])
        }).unwrap();
        let b = gauge_apply(&g, &a).unwrap();
        let ea = energy(&a, &k);
        // The central difference of a pure phase is still skew, so ψ only rotates.
        prop_assert!((energy(&b, &k) - ea).abs() <= 1e-10 * (1.0 + ea));
        let g0 = GaugeField::constant(grid, &u).unwrap();
        let b0 = gauge_apply(&g0, &a).unwrap();
        prop_assert!((energy(&b0, &k) - ea).abs() <= 1e-12 * (1.0 + ea));
        let (ta, tb) = (tension(&a, &k), tension(&b0, &k));
        for (x, y) in ta.iter().zip(&tb) {
            prop_assert!(close(&(&(&u * x) * &u.dagger()), y, 1e-10));
        }
    }

    #[test]
    fn projections_are_idempotent_and_self_adjoint(
        (basis, h) in (2usize..=4).prop_flat_map(|r| (1..r).prop_flat_map(move |m| (
            prop::collection::vec(complex(), r * m).prop_map(move |v| CMat::from_fn(r, m, |i, j| v[i * m + j])),
            metric(r),
        )))
    ) {
        let b = &basis + &CMat::from_fn(basis.rows(), basis.cols(), |i, j| C64::new(if i == j { 2.0 } else { 0.0 }, 0.0));
        let pi = projection_wrt(&b, h.matrix()).unwrap();
        prop_assert!(close(&(&pi * &pi), &pi, 1e-10));
        prop_assert!(close(&(&pi * &b), &b, 1e-10));
        let hp = h.matrix() * &pi;
        prop_assert!(close(&hp.dagger(), &hp, 1e-10));
    }

    #[test]
    fn graded_is_basis_and_tie_break_independent(fam in diagonalizable_family(), seed in mat(5)) {
        let r = fam.rank();
        let tol = Tolerances::exact();
        let k = BackgroundMetric::identity(r);
        let g = graded(&fam, &k, &tol, TieBreak::Ascending).unwrap();
        let alt = graded(&fam, &k, &tol, TieBreak::Descending).unwrap();
        let x = seed.columns(0, r);
        let x = CMat::from_fn(r, r, |i, j| x[(i, j)]);
        let q = expm(&(&x + &x.dagger()).scale_c(C64::new(0.0, 1.5)));
        let rebased: Vec<CMat> = fam.generators().iter().map(|m| &(&q.dagger() * m) * &q).collect();
        let gq = graded(&RepFamily::new(rebased, &tol).unwrap(), &k, &tol, TieBreak::Ascending).unwrap();
        prop_assert!(g.distance(&alt).unwrap() <= 1e-8);
        prop_assert!(g.distance(&gq).unwrap() <= 1e-8);
        prop_assert!(determinant_defect(&fam, &g) <= 1e-8);
    }

    #[test]
    fn semisimplify_is_idempotent(fam in diagonalizable_family()) {
        let tol = Tolerances::exact();
        let once = semisimplify(&fam, &tol).unwrap();
        let twice = semisimplify(&once, &tol).unwrap();
        prop_assert_eq!(once.generators(), twice.generators());
    }
}
