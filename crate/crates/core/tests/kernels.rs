use nlxdiff::grid::{lp_norm, integrate};
use nlxdiff::kernels::{certify_positive_definite, check_detailed_balance, solve_reversible_measure, Verdict};
use nlxdiff::nonlocal::{convolve, convolve_direct};
use nlxdiff::*;
use proptest::prelude::*;

fn grid1(n: usize) -> TorusGrid {
    TorusGrid::new(1, n, 1.0).unwrap()
}

fn field(g: TorusGrid, vals: &[f64]) -> Field {
    Field::new(g, vals.to_vec()).unwrap()
}

fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolution_is_linear(k in vals(32), u in vals(32), v in vals(32), a in -3.0..3.0f64) {
        let g = grid1(32);
        let k = field(g, &k);
        let (fu, fv) = (field(g, &u), field(g, &v));
        let comb = fu.zip_map(&fv, |x, y| a * x + y).unwrap();
        let lhs = convolve(&k, &comb).unwrap();
        let cu = convolve(&k, &fu).unwrap();
        let cv = convolve(&k, &fv).unwrap();
        for i in 0..32 {
            let rhs = a * cu.values()[i] + cv.values()[i];
            prop_assert!((lhs.values()[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn convolution_commutes_with_shifts(k in vals(24), u in vals(24), s in -30isize..30) {
        let g = grid1(24);
        let k = field(g, &k);
        let u = field(g, &u);
        let a = convolve(&k, &u.shifted([s, 0])).unwrap();
        let b = convolve(&k, &u).unwrap().shifted([s, 0]);
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn fft_matches_direct_sum_2d(k in vals(64), u in vals(64)) {
        let g = TorusGrid::new(2, 8, 2.0).unwrap();
        let (k, u) = (field(g, &k), field(g, &u));
        let a = convolve(&k, &u).unwrap();
        let b = convolve_direct(&k, &u, false).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn young_inequality(k in vals(40), u in vals(40), p in 1.0..6.0f64) {
        let g = grid1(40);
        let (k, u) = (field(g, &k), field(g, &u));
        let lhs = lp_norm(&convolve(&k, &u).unwrap(), p).unwrap();
        let rhs = lp_norm(&k, 1.0).unwrap() * lp_norm(&u, p).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn lp_triangle_inequality(u in vals(30), v in vals(30), p in 1.0..8.0f64) {
        let g = grid1(30);
        let (u, v) = (field(g, &u), field(g, &v));
        let s = u.zip_map(&v, |a, b| a + b).unwrap();
        let lhs = lp_norm(&s, p).unwrap();
        prop_assert!(lhs <= (lp_norm(&u, p).unwrap() + lp_norm(&v, p).unwrap()) * (1.0 + 1e-12));
    }

    #[test]
    fn solved_measure_balances_random_matrices(a01 in 0.05..3.0f64, a10 in 0.05..3.0f64, d in 0.0..2.0f64) {
        let a = InteractionMatrix::new(vec![vec![d, a01], vec![a10, 1.0]]).unwrap();
        let pi = solve_reversible_measure(&a).unwrap();
        prop_assert!((pi.get(0) * a01 - pi.get(1) * a10).abs() <= 1e-12);
        let spec = KernelSpec { family: KernelFamily::Gaussian { epsilon: 0.1 }, interaction: a };
        let k = KernelRaster::build(&spec, grid1(32)).unwrap();
        prop_assert!(check_detailed_balance(&k, &pi) <= 1e-12);
    }
}

#[test]
fn gaussian_raster_has_unit_mass() {
    for (dim, n) in [(1, 256), (2, 64)] {
        let g = TorusGrid::new(dim, n, 1.0).unwrap();
        let spec = KernelSpec {
            family: KernelFamily::Gaussian { epsilon: 0.05 },
            interaction: InteractionMatrix::identity(1),
        };
        let k = KernelRaster::build(&spec, g).unwrap();
        assert!((integrate(k.raster(0, 0)) - 1.0).abs() < 1e-8, "dim {dim}");
    }
}

#[test]
fn gaussian_is_positive_definite_but_indicator_is_not() {
    let g = grid1(256);
    let pi = ReversibleMeasure::uniform(1);
    let mk = |family| KernelRaster::build(&KernelSpec { family, interaction: InteractionMatrix::identity(1) }, g).unwrap();
    let gauss = mk(KernelFamily::Gaussian { epsilon: 0.05 });
    let cert = certify_positive_definite(&gauss, &pi, 1e-10).unwrap();
    assert_eq!(cert.verdict, Verdict::PositiveDefinite);
    let ind = mk(KernelFamily::IndicatorBall { radius: 0.1 });
    let cert = certify_positive_definite(&ind, &pi, 1e-10).unwrap();
    assert_eq!(cert.verdict, Verdict::NotPositiveDefinite);
    let w = cert.witness_field(&g).unwrap();
    assert!(kernels::quadratic_form(&ind, &pi, &w).unwrap() < 0.0);
}

#[test]
fn unbalanced_kernel_is_refused() {
    let a = InteractionMatrix::new(vec![vec![1.0, 2.0], vec![1.0, 1.0]]).unwrap();
    let spec = KernelSpec { family: KernelFamily::Gaussian { epsilon: 0.1 }, interaction: a };
    let k = KernelRaster::build(&spec, grid1(32)).unwrap();
    let pi = ReversibleMeasure::uniform(2);
    assert!(matches!(
        certify_positive_definite(&k, &pi, 1e-10),
        Err(Error::DetailedBalanceViolated { .. })
    ));
}
