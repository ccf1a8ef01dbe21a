//! Quantitative checks shared by the `validate` subcommand and the
//! acceptance suite. Each check returns a [`CheckOutcome`]; none panics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::json;

use crate::energy::{ConstraintSet, FunctionalSpec, KernelScaling};
use crate::error::Result;
use crate::fields::{
    make_full_blowup_sequence, ExponentField, Forcing, ProblemData, TimeFactor, WeightField,
};
use crate::flow::{
    continuous_dependence_check, implicit_step, solve_cauchy, solve_periodic, solve_stationary, PeriodicConfig,
    StepConfig,
};
use crate::grid::{build_interval_grid, build_mask, build_pair_table, Grid, PairTable};
use crate::sum::{dist_h, dot_h};
use crate::vnorm::{check_norm_modular, luxemburg, NORM_MODULAR_REL_TOL};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: serde_json::Value,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String, metrics: serde_json::Value) -> Self {
        Self { name: name.into(), passed, detail, metrics }
    }

    /// One line: `PASS name: detail`.
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        })
        .collect()
}

/// `p(x,y)` rising linearly in `|x - y|` from `lo` at the closest pair to
/// `hi` at the farthest, so `p- = lo` and `p+ = hi` over distinct nodes.
pub fn distance_ramp(grid: &Grid, lo: f64, hi: f64) -> Result<ExponentField> {
    let pts = grid.nodes();
    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            if i != j {
                let d = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                dmin = dmin.min(d);
                dmax = dmax.max(d);
            }
        }
    }
    let span = (dmax - dmin).max(f64::MIN_POSITIVE);
    ExponentField::from_fn(grid, |x, y| {
        let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let r = ((d - dmin) / span).clamp(0.0, 1.0);
        lo + (hi - lo) * r
    })
}

fn ramp_setup(n: usize, lo: f64, hi: f64) -> Result<(Grid, Arc<PairTable>, Arc<ExponentField>)> {
    let g = build_interval_grid(n, 0.0, 1.0)?;
    let pt = Arc::new(build_pair_table(&g, 0.5)?);
    let p = Arc::new(distance_ramp(&g, lo, hi)?);
    Ok((g, pt, p))
}

/// Gradient against central differences of `eval` on random states.
pub fn gradient_consistency(n: usize, states: usize, seed: u64, tol: f64) -> Result<CheckOutcome> {
    let (_, pt, p) = ramp_setup(n, 2.0, 4.0)?;
    let spec = FunctionalSpec::variable_p(pt, p.clone(), KernelScaling::Gagliardo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let u = gaussian(&mut rng, n, 1.0);
        let g = spec.grad(&u, 0.0)?;
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut err: f64 = 0.0;
        for k in 0..n {
            let eps = 1e-5 * (1.0 + u[k].abs());
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += eps;
            dn[k] -= eps;
            let fd = (spec.eval(&up, 0.0)? - spec.eval(&dn, 0.0)?) / (2.0 * eps);
            err = err.max((fd - g[k]).abs());
        }
        worst = worst.max(err / gmax.max(f64::MIN_POSITIVE));
    }
    Ok(CheckOutcome::new(
        "gradient_consistency",
        worst <= tol,
        format!("{states} states, n={n}, p in [{}, {}]: max relative error {worst:.3e} (tol {tol:e})", p.p_minus(), p.p_plus()),
        json!({ "max_relative_error": worst, "tol": tol }),
    ))
}

/// Norm-modular inequalities and homogeneity of the Luxemburg seminorm.
pub fn norm_modular_suite(n: usize, states: usize, seed: u64) -> Result<CheckOutcome> {
    let (_, pt, p) = ramp_setup(n, 2.0, 4.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = crate::vnorm::DEFAULT_BISECTION_TOL;
    let mut bound_failures = 0;
    let mut worst_hom: f64 = 0.0;
    for k in 0..states {
        // spread the scale so norms fall on both sides of 1
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let u = gaussian(&mut rng, n, scale);
        let rep = check_norm_modular(&u, &pt, &p, NORM_MODULAR_REL_TOL)?;
        if !rep.bounds_ok.iter().all(|&b| b) {
            bound_failures += 1;
        }
        let lam = if k % 2 == 0 { 3.7 } else { -0.23 };
        let scaled: Vec<f64> = u.iter().map(|x| lam * x).collect();
        let a = luxemburg(&scaled, &pt, &p, tol)?;
        let b = lam.abs() * luxemburg(&u, &pt, &p, tol)?;
        worst_hom = worst_hom.max((a - b).abs() / b.max(f64::MIN_POSITIVE));
    }
    // each norm is within tol / p- of its exact value in relative terms
    let hom_tol = 2.0 * tol;
    Ok(CheckOutcome::new(
        "norm_modular",
        bound_failures == 0 && worst_hom <= hom_tol,
        format!("{states} states: {bound_failures} bound failures at rel tol {NORM_MODULAR_REL_TOL:e}; homogeneity error {worst_hom:.3e} (tol {hom_tol:e})"),
        json!({ "bound_failures": bound_failures, "homogeneity_error": worst_hom }),
    ))
}

/// Discrete nonexpansiveness estimate on random perturbation pairs.
pub fn continuous_dependence(n: usize, pairs: usize, seed: u64, eps: f64) -> Result<CheckOutcome> {
    let g = build_interval_grid(n, 0.0, 1.0)?;
    let pt = Arc::new(build_pair_table(&g, 0.5)?);
    let spec =
        FunctionalSpec::variable_p(pt, Arc::new(ExponentField::constant(n, 3.0)?), KernelScaling::Gagliardo)?;
    let cfg = StepConfig { inner_tol: 1e-12, ..StepConfig::new(1.0 / 32.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut tightest = f64::INFINITY;
    for k in 0..pairs {
        let u1 = gaussian(&mut rng, n, 1.0);
        let du = gaussian(&mut rng, n, 0.1);
        let u2: Vec<f64> = u1.iter().zip(&du).map(|(a, b)| a + b).collect();
        let f1 = gaussian(&mut rng, n, 1.0);
        let f2: Vec<f64> = if k % 2 == 0 { f1.clone() } else { f1.iter().map(|x| x + 0.2).collect() };
        let d1 = ProblemData::new(0.5, Forcing::constant(f1), u1)?;
        let d2 = ProblemData::new(0.5, Forcing::constant(f2), u2)?;
        let rep = continuous_dependence_check(&spec, &d1, &d2, &cfg, eps)?;
        for (l, r) in rep.lhs.iter().zip(&rep.rhs) {
            tightest = tightest.min(r - l);
        }
        if let Some(i) = rep.first_violation {
            failures.push((k, i));
        }
    }
    Ok(CheckOutcome::new(
        "continuous_dependence",
        failures.is_empty(),
        format!("{pairs} pairs, n={n}, p=3: {} violations, smallest slack {tightest:.3e}", failures.len()),
        json!({ "violations": failures, "smallest_slack": tightest }),
    ))
}

/// Max-over-time error of implicit Euler on the two-node linear problem,
/// for `dt, dt/2, dt/4`. The difference obeys `D' = -8 D`.
pub fn euler_order(dt0: f64) -> Result<CheckOutcome> {
    let g = build_interval_grid(2, 0.0, 1.0)?;
    let pt = Arc::new(build_pair_table(&g, 0.5)?);
    let w = Arc::new(WeightField::uniform(2, 1.0, TimeFactor::Constant { value: 1.0 }, 1.0, 1.0)?);
    let spec = FunctionalSpec::weighted_constant_p(pt.clone(), 2.0, w, KernelScaling::Gagliardo)?;
    let data = ProblemData::new(1.0, Forcing::Zero, vec![1.0, 0.0])?;
    let h = pt.weights();
    let mut errors = Vec::new();
    for level in 0..3 {
        let dt = dt0 / f64::from(1 << level);
        let tr = solve_cauchy(&spec, &data, &StepConfig { inner_tol: 1e-13, ..StepConfig::new(dt) })?;
        let mut e: f64 = 0.0;
        for (t, u) in tr.times.iter().zip(&tr.states) {
            let d = (-8.0 * t).exp();
            let exact = [0.5 + 0.5 * d, 0.5 - 0.5 * d];
            e = e.max(dist_h(u, &exact, h));
        }
        errors.push(e);
    }
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    let ok = ratios.iter().all(|r| (1.7..=2.3).contains(r));
    Ok(CheckOutcome::new(
        "euler_order",
        ok,
        format!("errors {:.3e}, {:.3e}, {:.3e}; ratios {:.3}, {:.3} (want [1.7, 2.3])", errors[0], errors[1], errors[2], ratios[0], ratios[1]),
        json!({ "errors": errors, "ratios": ratios }),
    ))
}

/// `Phi_j(u) <= sum h_i h_j / p_j-` on projected states, with no slack.
pub fn recovery_bound(grid: &Grid, s: f64, base: &ExponentField, schedule: &[f64], states: usize, seed: u64) -> Result<CheckOutcome> {
    let pt = Arc::new(build_pair_table(grid, s)?);
    let seq = make_full_blowup_sequence(base, schedule, 0.1)?;
    let kinf = ConstraintSet::k_inf(&pt);
    let measure = pt.product_measure();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pt.n();
    let mut failures = 0;
    let mut worst_ratio: f64 = 0.0;
    let specs: Vec<FunctionalSpec> = seq
        .fields
        .iter()
        .map(|f| FunctionalSpec::variable_p(pt.clone(), Arc::new(f.clone()), KernelScaling::HolderOrder))
        .collect::<Result<_>>()?;
    for k in 0..states {
        let raw = gaussian(&mut rng, n, 0.5 + k as f64 / states as f64 * 3.0);
        let u = kinf.project(&raw, 1e-12, 100_000 * n)?.state;
        for (spec, f) in specs.iter().zip(&seq.fields) {
            let v = spec.eval(&u, 0.0)?;
            let bound = measure / f.p_minus();
            worst_ratio = worst_ratio.max(v / bound);
            if !(v <= bound) {
                failures += 1;
            }
        }
    }
    let minus: Vec<f64> = seq.fields.iter().map(|f| f.p_minus()).collect();
    Ok(CheckOutcome::new(
        "recovery_bound",
        failures == 0,
        format!("{states} states x p- = {minus:?}: {failures} failures, largest value/bound {worst_ratio:.4}"),
        json!({ "failures": failures, "max_ratio": worst_ratio, "p_minus": minus }),
    ))
}

/// Periodic problems: zero forcing, constant forcing against the
/// stationary state, and the weight hypothesis gate.
pub fn periodic_suite(n: usize) -> Result<CheckOutcome> {
    let g = build_interval_grid(n, 0.0, 1.0)?;
    let pt = Arc::new(build_pair_table(&g, 0.5)?);
    let pcfg = PeriodicConfig { fp_tol: 1e-10, ..PeriodicConfig::default() };
    let cfg = StepConfig { inner_tol: 1e-12, ..StepConfig::new(1.0 / 32.0) };
    let mut zero_iters = Vec::new();
    let mut zero_ok = true;
    for p in [2.0, 4.0, 8.0] {
        let spec = FunctionalSpec::variable_p(pt.clone(), Arc::new(ExponentField::constant(n, p)?), KernelScaling::Gagliardo)?;
        let sol = solve_periodic(&spec, &Forcing::Zero, 1.0, &cfg, &pcfg)?;
        let h = pt.weights();
        let size = sol.trajectory.sup_norm(h);
        zero_ok &= sol.iterations <= 3 && size <= 1e-10;
        zero_iters.push(sol.iterations);
    }
    // mean-zero constant forcing
    let f: Vec<f64> = g.nodes().iter().map(|x| (2.0 * std::f64::consts::PI * x[0]).cos()).collect();
    let mut stationary_err: f64 = 0.0;
    for p in [2.0, 3.0] {
        let spec = FunctionalSpec::variable_p(pt.clone(), Arc::new(ExponentField::constant(n, p)?), KernelScaling::Gagliardo)?;
        let st = solve_stationary(&spec, &f, 0.0, 1e-13, 500)?;
        let sol = solve_periodic(&spec, &Forcing::constant(f.clone()), 1.0, &cfg, &pcfg)?;
        for u in &sol.trajectory.states {
            for (a, b) in u.iter().zip(&st.state) {
                stationary_err = stationary_err.max((a - b).abs());
            }
        }
    }
    let up = WeightField::uniform(n, 1.0, TimeFactor::Affine { offset: 1.0, slope: 0.5 }, 2.0, 1.0)?;
    let down = WeightField::uniform(n, 1.0, TimeFactor::Affine { offset: 1.5, slope: -0.5 }, 2.0, 1.0)?;
    let gate_ok = up.periodic_hypothesis_holds() && !down.periodic_hypothesis_holds();
    let down_spec = FunctionalSpec::weighted_constant_p(pt.clone(), 2.0, Arc::new(down), KernelScaling::Gagliardo)?;
    let rejected = solve_periodic(&down_spec, &Forcing::Zero, 1.0, &cfg, &pcfg).is_err();
    let ok = zero_ok && stationary_err <= 1e-6 && gate_ok && rejected;
    Ok(CheckOutcome::new(
        "periodic",
        ok,
        format!(
            "(a) zero forcing iterations {zero_iters:?}; (b) max deviation from stationary state {stationary_err:.3e}; (c) validator accepts increasing sigma: {}, rejects decreasing: {}",
            up.periodic_hypothesis_holds(),
            rejected && !down_spec.weight().unwrap().periodic_hypothesis_holds()
        ),
        json!({ "zero_iterations": zero_iters, "stationary_error": stationary_err, "gate_ok": gate_ok && rejected }),
    ))
}

/// A `K^t`-feasible datum for every `t` is a fixed point of the indicator flow.
pub fn constrained_stationarity(n: usize) -> Result<CheckOutcome> {
    let g = build_interval_grid(n, 0.0, 1.0)?;
    let pt = Arc::new(build_pair_table(&g, 0.5)?);
    let sigma = TimeFactor::Sinusoidal { mean: 1.5, amplitude: 0.5, omega: 3.0, phase: 0.2 };
    let w = Arc::new(WeightField::uniform(n, 1.0, sigma, 2.0, 1.0)?);
    // feasible at the largest sigma means feasible for all t
    let tightest = WeightField::uniform(n, 1.0, TimeFactor::Constant { value: sigma.range(1.0).1 }, 2.0, 1.0)?;
    let cs = ConstraintSet::k_t(&pt, &tightest, 0.0)?;
    let raw: Vec<f64> = g.nodes().iter().map(|x| 3.0 * (5.0 * x[0]).sin()).collect();
    let u0 = cs.project(&raw, 1e-12, 100_000 * n)?.state;
    let spec = FunctionalSpec::indicator_kt(pt, w)?;
    let data = ProblemData::new(1.0, Forcing::Zero, u0.clone())?;
    let tr = solve_cauchy(&spec, &data, &StepConfig::new(1.0 / 64.0))?;
    let moved = tr.states.iter().filter(|u| **u != u0).count();
    Ok(CheckOutcome::new(
        "constrained_stationarity",
        moved == 0,
        format!("{} stored states, {moved} differ from u0", tr.states.len()),
        json!({ "moved": moved }),
    ))
}

/// `phi(u^{k+1}) <= phi(u^k) + inner_tol` for every time-constant functional.
pub fn energy_dissipation(n: usize, seed: u64) -> Result<CheckOutcome> {
    let (g, pt, p) = ramp_setup(n, 2.0, 4.0)?;
    let inner_tol = 1e-10;
    let cfg = StepConfig { inner_tol, ..StepConfig::new(1.0 / 64.0) };
    let w = Arc::new(WeightField::uniform(n, 0.8, TimeFactor::Constant { value: 1.0 }, 1.0, 1.0)?);
    let mask = Arc::new(build_mask(&g, |x| x[0] > 0.25 && x[0] < 0.75, true)?);
    let kappa = Arc::new(ExponentField::constant(n, 2.0)?);
    let specs = vec![
        ("weighted_constant_p", FunctionalSpec::weighted_constant_p(pt.clone(), 3.0, w.clone(), KernelScaling::Gagliardo)?),
        ("variable_p", FunctionalSpec::variable_p(pt.clone(), p.clone(), KernelScaling::Gagliardo)?),
        ("variable_p_holder", FunctionalSpec::variable_p(pt.clone(), p, KernelScaling::HolderOrder)?),
        ("indicator_kt", FunctionalSpec::indicator_kt(pt.clone(), w)?),
        ("indicator_kinf", FunctionalSpec::indicator_kinf(pt.clone())),
        ("mixed_o", FunctionalSpec::mixed_o(pt.clone(), kappa, mask, KernelScaling::Gagliardo)?),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = gaussian(&mut rng, n, 1.0);
    let mut worst = f64::NEG_INFINITY;
    let mut bad = Vec::new();
    for (name, spec) in &specs {
        let data = ProblemData::new(0.5, Forcing::Zero, u0.clone())?;
        let tr = solve_cauchy(spec, &data, &cfg)?;
        for k in 0..tr.steps() {
            let (a, b) = (tr.stats[k].energy, tr.stats[k + 1].energy);
            let rise = match (a, b) {
                (Some(a), Some(b)) => b - a,
                _ => f64::INFINITY,
            };
            worst = worst.max(rise);
            if rise > inner_tol {
                bad.push(format!("{name}@{k}"));
                break;
            }
        }
    }
    Ok(CheckOutcome::new(
        "energy_dissipation",
        bad.is_empty(),
        format!("{} functionals, largest energy increase {worst:.3e} (tol {inner_tol:e})", specs.len()),
        json!({ "violations": bad, "largest_increase": worst }),
    ))
}

/// Convexity along segments and monotonicity of the gradient.
pub fn convexity_monotonicity(n: usize, samples: usize, seed: u64) -> Result<CheckOutcome> {
    let (g, pt, p) = ramp_setup(n, 1.5, 4.0)?;
    let mask = Arc::new(build_mask(&g, |x| x[0] > 0.25 && x[0] < 0.75, true)?);
    let w = Arc::new(WeightField::uniform(n, 1.0, TimeFactor::Constant { value: 1.0 }, 1.0, 1.0)?);
    let specs = [
        FunctionalSpec::variable_p(pt.clone(), p.clone(), KernelScaling::Gagliardo)?,
        FunctionalSpec::weighted_constant_p(pt.clone(), 2.5, w, KernelScaling::HolderOrder)?,
        FunctionalSpec::mixed_o(pt.clone(), p, mask, KernelScaling::Gagliardo)?,
    ];
    let h = pt.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut convex_fail, mut mono_fail) = (0, 0);
    for _ in 0..samples {
        let u = gaussian(&mut rng, n, 0.3);
        let v = gaussian(&mut rng, n, 0.3);
        let th: f64 = rng.random_range(0.01..0.99);
        let m: Vec<f64> = u.iter().zip(&v).map(|(a, b)| th * a + (1.0 - th) * b).collect();
        for spec in &specs {
            let (eu, ev, em) = (spec.eval(&u, 0.0)?, spec.eval(&v, 0.0)?, spec.eval(&m, 0.0)?);
            if em.is_finite() && em > th * eu + (1.0 - th) * ev + 1e-12 {
                convex_fail += 1;
            }
            let gu = spec.grad(&u, 0.0)?;
            let gv = spec.grad(&v, 0.0)?;
            let dg: Vec<f64> = gu.iter().zip(&gv).zip(h).map(|((a, b), w)| (a - b) / w).collect();
            let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            if dot_h(&dg, &du, h) < -1e-12 {
                mono_fail += 1;
            }
        }
    }
    Ok(CheckOutcome::new(
        "convexity_monotonicity",
        convex_fail == 0 && mono_fail == 0,
        format!("{samples} samples x 3 functionals: {convex_fail} convexity and {mono_fail} monotonicity failures"),
        json!({ "convexity_failures": convex_fail, "monotonicity_failures": mono_fail }),
    ))
}

/// Projection is idempotent and nonexpansive in the h inner product.
pub fn projection_properties(n: usize, samples: usize, seed: u64) -> Result<CheckOutcome> {
    let g = build_interval_grid(n, 0.0, 1.0)?;
    let pt = build_pair_table(&g, 0.5)?;
    let cs = ConstraintSet::k_inf(&pt);
    let h = pt.weights();
    let tol = 1e-11;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut idem, mut expand) = (0, 0);
    for _ in 0..samples {
        let v1 = gaussian(&mut rng, n, 2.0);
        let v2 = gaussian(&mut rng, n, 2.0);
        let p1 = cs.project(&v1, tol, 100_000 * n)?.state;
        let p2 = cs.project(&v2, tol, 100_000 * n)?.state;
        // p1 is only tol-feasible, so a second pass may nudge it by about tol
        if dist_h(&cs.project(&p1, tol, 100_000 * n)?.state, &p1, h) > 1e-9 {
            idem += 1;
        }
        if dist_h(&p1, &p2, h) > dist_h(&v1, &v2, h) + 1e-9 {
            expand += 1;
        }
    }
    Ok(CheckOutcome::new(
        "projection",
        idem == 0 && expand == 0,
        format!("{samples} pairs: {idem} idempotence and {expand} nonexpansiveness failures"),
        json!({ "idempotence_failures": idem, "expansion_failures": expand }),
    ))
}

/// The two-node linear step against its closed form, and a feasible
/// indicator step returned unchanged.
pub fn step_oracles() -> Result<CheckOutcome> {
    let g = build_interval_grid(2, 0.0, 1.0)?;
    let pt = Arc::new(build_pair_table(&g, 0.5)?);
    let w = Arc::new(WeightField::uniform(2, 1.0, TimeFactor::Constant { value: 1.0 }, 1.0, 1.0)?);
    let spec = FunctionalSpec::weighted_constant_p(pt.clone(), 2.0, w, KernelScaling::Gagliardo)?;
    let dt = 0.1;
    let (up, f) = ([0.4, -0.6], [1.0, 2.0]);
    let out = implicit_step(&spec, &up, dt, &f, &StepConfig::new(dt))?;
    let a = 4.0 * dt;
    let b = [up[0] + dt * f[0], up[1] + dt * f[1]];
    let det = 1.0 + 2.0 * a;
    let exact = [((1.0 + a) * b[0] + a * b[1]) / det, (a * b[0] + (1.0 + a) * b[1]) / det];
    let err = (out.state[0] - exact[0]).abs().max((out.state[1] - exact[1]).abs());
    let ind = FunctionalSpec::indicator_kinf(pt);
    let moved = implicit_step(&ind, &[0.0, 0.0], dt, &[1.0, 0.0], &StepConfig::new(dt))?.state;
    let ok = err < 1e-12 && moved == vec![dt, 0.0];
    Ok(CheckOutcome::new(
        "step_oracles",
        ok,
        format!("linear step error {err:.3e}; feasible indicator step exact: {}", moved == vec![dt, 0.0]),
        json!({ "linear_error": err }),
    ))
}

/// Every check at the given scale; used by `validate`.
pub fn run_all(seed: u64, quick: bool) -> Result<Vec<CheckOutcome>> {
    let states = if quick { 40 } else { 200 };
    let g32 = build_interval_grid(32, 0.0, 1.0)?;
    let base = distance_ramp(&g32, 2.0, 3.0)?;
    Ok(vec![
        gradient_consistency(16, states, seed, 1e-6)?,
        norm_modular_suite(16, if quick { 200 } else { 1000 }, seed)?,
        continuous_dependence(16, if quick { 10 } else { 50 }, seed, 1e-8)?,
        euler_order(1.0 / 64.0)?,
        recovery_bound(&g32, 0.5, &base, &[2.0, 4.0, 8.0, 16.0, 32.0], if quick { 20 } else { 100 }, seed)?,
        periodic_suite(8)?,
        constrained_stationarity(16)?,
        energy_dissipation(16, seed)?,
        convexity_monotonicity(12, states, seed)?,
        projection_properties(12, if quick { 20 } else { 100 }, seed)?,
        step_oracles()?,
    ])
}
