use std::sync::Arc;

use proptest::prelude::*;

use fracplap::energy::{ConstraintSet, FunctionalSpec, KernelScaling};
use fracplap::fields::{
    make_full_blowup_sequence, ExponentField, Forcing, ProblemData, TimeFactor, WeightField,
};
use fracplap::flow::{implicit_step, solve_cauchy, StepConfig};
use fracplap::grid::{build_interval_grid, build_mask, build_pair_table, PairTable};
use fracplap::sum::{dist_h, dot_h};
use fracplap::vnorm::{check_norm_modular, luxemburg, DEFAULT_BISECTION_TOL};

const N: usize = 8;

fn pairs() -> Arc<PairTable> {
    let g = build_interval_grid(N, 0.0, 1.0).unwrap();
    Arc::new(build_pair_table(&g, 0.5).unwrap())
}

fn ramp(lo: f64, hi: f64) -> ExponentField {
    let g = build_interval_grid(N, 0.0, 1.0).unwrap();
    fracplap::checks::distance_ramp(&g, lo, hi).unwrap()
}

fn specs() -> Vec<FunctionalSpec> {
    let pt = pairs();
    let g = build_interval_grid(N, 0.0, 1.0).unwrap();
    let w = Arc::new(WeightField::uniform(N, 0.5, TimeFactor::Affine { offset: 1.0, slope: 0.5 }, 2.0, 1.0).unwrap());
    let mask = Arc::new(build_mask(&g, |x| x[0] > 0.3 && x[0] < 0.7, true).unwrap());
    vec![
        FunctionalSpec::variable_p(pt.clone(), Arc::new(ramp(1.5, 4.0)), KernelScaling::Gagliardo).unwrap(),
        FunctionalSpec::variable_p(pt.clone(), Arc::new(ramp(2.0, 3.0)), KernelScaling::HolderOrder).unwrap(),
        FunctionalSpec::weighted_constant_p(pt.clone(), 3.0, w, KernelScaling::Gagliardo).unwrap(),
        FunctionalSpec::mixed_o(pt, Arc::new(ExponentField::constant(N, 2.5).unwrap()), mask, KernelScaling::Gagliardo)
            .unwrap(),
    ]
}

fn state() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, N)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_energies_are_convex(u in state(), v in state(), theta in 0.01f64..0.99) {
        for spec in specs() {
            let m: Vec<f64> = u.iter().zip(&v).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let lhs = spec.smooth_eval(&m, 0.3).unwrap();
            let rhs = theta * spec.smooth_eval(&u, 0.3).unwrap() + (1.0 - theta) * spec.smooth_eval(&v, 0.3).unwrap();
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()), "{:?}: {lhs} > {rhs}", spec.kind());
        }
    }

    #[test]
    fn gradients_are_monotone(u in state(), v in state()) {
        for spec in specs() {
            let (gu, gv) = (spec.grad(&u, 0.3).unwrap(), spec.grad(&v, 0.3).unwrap());
            let s: f64 = (0..N).map(|i| (gu[i] - gv[i]) * (u[i] - v[i])).sum();
            prop_assert!(s >= -1e-12, "{:?}: {s}", spec.kind());
        }
    }

    #[test]
    fn projection_is_nonexpansive_and_feasible(u in state(), v in state()) {
        let pt = pairs();
        let cs = ConstraintSet::k_inf(&pt);
        let h = pt.weights();
        let pu = cs.project(&u, 1e-12, 1_000_000).unwrap().state;
        let pv = cs.project(&v, 1e-12, 1_000_000).unwrap().state;
        prop_assert!(cs.membership(&pu, 1e-9));
        prop_assert!(dist_h(&pu, &pv, h) <= dist_h(&u, &v, h) + 1e-9);
        let again = cs.project(&pu, 1e-12, 1_000_000).unwrap().state;
        prop_assert!(dist_h(&again, &pu, h) <= 1e-9);
    }

    #[test]
    fn projection_obeys_obtuse_angle(u in state(), v in state()) {
        // <v - P v, z - P v>_h <= 0 for feasible z
        let pt = pairs();
        let cs = ConstraintSet::k_inf(&pt);
        let h = pt.weights();
        let pv = cs.project(&v, 1e-13, 1_000_000).unwrap().state;
        let z = cs.project(&u, 1e-13, 1_000_000).unwrap().state;
        let r: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
        let d: Vec<f64> = z.iter().zip(&pv).map(|(a, b)| a - b).collect();
        prop_assert!(dot_h(&r, &d, h) <= 1e-9);
    }

    #[test]
    fn norm_modular_relations(u in state(), scale in -2.0f64..2.0) {
        let u: Vec<f64> = u.iter().map(|x| x * 10f64.powf(scale)).collect();
        prop_assume!(u.windows(2).any(|w| w[0] != w[1]));
        let rep = check_norm_modular(&u, &pairs(), &ramp(2.0, 4.0), 1e-9).unwrap();
        prop_assert!(rep.bounds_ok.iter().all(|&b| b), "{rep:?}");
    }

    #[test]
    fn luxemburg_is_homogeneous(u in state(), lam in 0.1f64..10.0) {
        prop_assume!(u.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-3));
        let (pt, p) = (pairs(), ramp(2.0, 4.0));
        let tol = DEFAULT_BISECTION_TOL;
        let a = luxemburg(&u.iter().map(|x| lam * x).collect::<Vec<_>>(), &pt, &p, tol).unwrap();
        let b = lam * luxemburg(&u, &pt, &p, tol).unwrap();
        prop_assert!((a - b).abs() <= 2.0 * tol * b);
    }

    #[test]
    fn recovery_bound_on_feasible_states(u in state()) {
        let pt = pairs();
        let cs = ConstraintSet::k_inf(&pt);
        let u = cs.project(&u, 1e-12, 1_000_000).unwrap().state;
        let seq = make_full_blowup_sequence(&ramp(2.0, 3.0), &[2.0, 4.0, 8.0], 0.5).unwrap();
        let measure = KernelScaling::HolderOrder.measure(&pt);
        for f in &seq.fields {
            let spec = FunctionalSpec::variable_p(pt.clone(), Arc::new(f.clone()), KernelScaling::HolderOrder).unwrap();
            // projection is tol-feasible, so allow the matching slack
            prop_assert!(spec.eval(&u, 0.0).unwrap() <= measure / f.p_minus() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn implicit_step_is_a_contraction(a in state(), b in state(), fa in state()) {
        let spec = &specs()[0];
        let h = pairs().weights().to_vec();
        let cfg = StepConfig::new(0.05);
        let ua = implicit_step(spec, &a, 0.05, &fa, &cfg).unwrap().state;
        let ub = implicit_step(spec, &b, 0.05, &fa, &cfg).unwrap().state;
        prop_assert!(dist_h(&ua, &ub, &h) <= dist_h(&a, &b, &h) + 1e-8);
    }

    #[test]
    fn unforced_flow_dissipates(u0 in state()) {
        let spec = &specs()[1];
        let data = ProblemData::new(0.25, Forcing::Zero, u0).unwrap();
        let tr = solve_cauchy(spec, &data, &StepConfig::new(1.0 / 32.0)).unwrap();
        let e: Vec<f64> = tr.states.iter().map(|u| spec.eval(u, 0.0).unwrap()).collect();
        prop_assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{e:?}");
    }

    #[test]
    fn exponent_sequences_scale_pairwise(c in 1.0f64..4.0) {
        let base = ramp(2.0, 3.0);
        let seq = make_full_blowup_sequence(&base, &[c, 2.0 * c, 4.0 * c], 0.5).unwrap();
        prop_assert!(seq.report.minus_increasing);
        for (k, f) in seq.fields.iter().enumerate() {
            let factor = c * 2f64.powi(k as i32);
            for i in 0..N {
                for j in 0..N {
                    prop_assert_eq!(f.get(i, j), f.get(j, i));
                    if i != j {
                        prop_assert!((f.get(i, j) - factor * base.get(i, j)).abs() <= 1e-12 * f.get(i, j));
                    }
                }
            }
        }
    }
}
