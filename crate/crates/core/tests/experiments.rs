use nlxdiff::entropy::{ckp_lower_bound, relative_entropy};
use nlxdiff::experiments::{bounds_check, convergence_study, localization_sweep, weak_strong_probe, ConvergenceSetup};
use nlxdiff::init::{mode_perturbation, InitialData};
use nlxdiff::kernels::solve_reversible_measure;
use nlxdiff::scheme::{estimate_lambda, simulate};
use nlxdiff::*;
use proptest::prelude::*;

fn grid() -> TorusGrid {
    TorusGrid::new(1, 64, 1.0).unwrap()
}

fn u0(seed: u64) -> FieldSet {
    InitialData::RandomPositive { base: vec![1.0, 1.0], amplitude: 0.5, modes: 3, seed }
        .generate(grid(), None)
        .unwrap()
}

fn model() -> ModelParams {
    let a = InteractionMatrix::new(vec![vec![1.0, 0.5], vec![0.25, 1.0]]).unwrap();
    let pi = solve_reversible_measure(&a).unwrap();
    let spec = KernelSpec { family: KernelFamily::Gaussian { epsilon: 0.1 }, interaction: a };
    ModelParams::nonlocal(0.1, KernelRaster::build(&spec, grid()).unwrap(), pi).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_entropy_dominates_ckp(seed in 0u64..500, amp in 0.0..0.45f64, m in 1i64..6, w in 0.1..0.9f64) {
        let u = u0(seed);
        let v = u.axpy(1.0, &mode_perturbation(grid(), 2, amp, &[m])).unwrap();
        let pi = ReversibleMeasure::new(vec![w, 1.0 - w]).unwrap();
        let h = relative_entropy(&v, &u, &pi).unwrap();
        let c = ckp_lower_bound(&v, &u, &pi).unwrap();
        prop_assert!(h >= c - 1e-14, "{h} < {c}");
    }
}

#[test]
fn zero_interaction_localizes_exactly() {
    let cfg = SchemeConfig { tau: 2e-3, t_end: 0.02, ..Default::default() };
    let rep = localization_sweep(
        &[0.2, 0.1],
        &InteractionMatrix::zeros(2),
        &ReversibleMeasure::uniform(2),
        &u0(4),
        0.1,
        MollifierProfile::Gaussian,
        &cfg,
        &[],
    )
    .unwrap();
    for d in rep.distances_l1.iter().chain(&rep.distances_l2) {
        assert!(*d < 1e-12, "{rep:?}");
    }
}

#[test]
fn halving_perturbation_quarters_initial_relative_entropy() {
    let p = model();
    let cfg = SchemeConfig { tau: 2e-3, t_end: 0.01, ..Default::default() };
    let h0 = |amp| {
        let pert = mode_perturbation(grid(), 2, amp, &[2]);
        weak_strong_probe(&u0(1), &pert, &p, &cfg, &[], None).unwrap().rel_entropy[0]
    };
    let ratio = h0(2e-3) / h0(1e-3);
    assert!((ratio - 4.0).abs() < 0.01, "{ratio}");
}

#[test]
fn probe_reports_ckp_along_the_run() {
    let p = model();
    let cfg = SchemeConfig { tau: 2e-3, t_end: 0.04, ..Default::default() };
    let pert = mode_perturbation(grid(), 2, 1e-2, &[1]);
    let rep = weak_strong_probe(&u0(2), &pert, &p, &cfg, &[0.01, 0.02, 0.03], None).unwrap();
    assert_eq!(rep.times.len(), 5);
    assert!(rep.ckp_holds(0.0));
    assert!(rep.same_init_max_distance < 1e-12);
    assert!(rep.rel_entropy.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn bounds_hold_on_a_short_run() {
    let p = model();
    let u = u0(6);
    let k = p.kernel.as_ref().unwrap();
    let lambda = estimate_lambda(k, &u, &p.pi).unwrap();
    let cfg = SchemeConfig { tau: 1e-3, t_end: 0.05, ..Default::default() };
    let traj = simulate(&u, &p, &cfg, &[]).unwrap();
    let rep = bounds_check(&traj, lambda, u.min(), u.max());
    assert!(rep.pass, "{rep:?}");
    assert_eq!(rep.checked, 2 * traj.diagnostics.len());
}

#[test]
fn convergence_needs_three_nested_resolutions() {
    let make = |_: TorusGrid| ModelParams::local(0.1, InteractionMatrix::zeros(1), ReversibleMeasure::uniform(1));
    let setup = ConvergenceSetup {
        dim: 1,
        period: 1.0,
        make_params: &make,
        initial: InitialData::SingleMode { base: vec![1.0], amplitude: 0.1, mode: vec![1] },
        config: SchemeConfig { tau: 1e-3, t_end: 0.01, ..Default::default() },
        temporal_cells: 32,
        exact: None,
    };
    assert!(convergence_study(&[1e-3, 5e-4, 2.5e-4], &[16, 32], &setup).is_err());
    assert!(convergence_study(&[1e-3, 5e-4, 2.5e-4], &[16, 24, 48], &setup).is_err());
}
