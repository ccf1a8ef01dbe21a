//! Drivers for the large-exponent experiments: full blow-up, periodic
//! blow-up, partial blow-up (mixed problem) and Mosco diagnostics.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{vi_residual, ConstraintSet, FunctionalSpec, KernelScaling};
use crate::error::{LabError, Result};
use crate::fields::{BlowupMode, ExponentField, ExponentSequence, Forcing, ProblemData, WeightField};
use crate::flow::{solve_cauchy, solve_periodic, PeriodicConfig, StepConfig, Trajectory};
use crate::grid::{PairTable, SubdomainMask};
use crate::sum::{dist_h, norm_h};
use crate::vnorm::{holder_sup, luxemburg_where, DEFAULT_BISECTION_TOL};

/// Projection tolerance of VI probes; moves a residual by about |w| times this.
const VI_PROJ_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlowupConfig {
    pub step: StepConfig,
    #[serde(default)]
    pub scaling: KernelScaling,
    /// Random test vectors per stored time in VI residual checks.
    #[serde(default = "default_vi_samples")]
    pub vi_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Time exponent of the energy-space distance on complement pairs.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub periodic: PeriodicConfig,
}

fn default_vi_samples() -> usize {
    8
}

fn default_sigma() -> f64 {
    2.0
}

impl BlowupConfig {
    pub fn new(step: StepConfig) -> Self {
        Self {
            step,
            scaling: KernelScaling::HolderOrder,
            vi_samples: default_vi_samples(),
            seed: 0,
            sigma: default_sigma(),
            periodic: PeriodicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageMetrics {
    pub j: usize,
    pub p_minus: f64,
    pub p_plus: f64,
    /// `max_k |u_j(t_k) - u_inf(t_k)|_h`.
    pub sup_t_dist: f64,
    /// `sqrt(sum_k dt t_{k+1} |D u_j - D u_inf|_h^2)` over difference quotients.
    pub weighted_deriv_dist: f64,
    /// `sqrt(sum_k dt (|e_{k+1}|_h^2 + |D u_j - D u_inf|_h^2))`.
    pub w12_dist: f64,
    /// Analytic recovery bound minus the stage energy of its initial datum.
    pub recovery_margin: f64,
    pub initial_energy: f64,
    pub energy_trace: Vec<f64>,
    /// Distance to the unweighted (`K_inf`) limit flow; only for weighted runs.
    pub sup_t_dist_kinf: Option<f64>,
    /// Energy-space distance on complement pairs; partial blow-up only.
    pub complement_dist: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitDiagnostics {
    pub constraint: String,
    pub membership_ok: bool,
    pub max_violation: f64,
    pub sup_norm: f64,
    /// VI residual at each stored time `t_1..t_K`.
    pub vi_residuals: Vec<f64>,
    pub max_vi_residual: f64,
    /// Largest `vi / (1 + |w|_h)` over stored times.
    pub max_relative_vi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixedDiagnostics {
    /// Complement PDE residual per step (nodes outside `O`).
    pub complement_residuals: Vec<f64>,
    /// Smallest relative margin `1 - |G_s u|` over `O^2` per stored time.
    pub o2_margins: Vec<f64>,
    /// Quasi-VI residual per step with the cross-pair flux included in `w`.
    pub quasi_vi_residuals: Vec<f64>,
    /// Same with `w = f - du/dt` only.
    pub quasi_vi_literal: Vec<f64>,
    /// `Phi_j(u0)` minus the complement energy of `u0` tends to 0.
    pub initial_share_vanishes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub mode: String,
    pub stages: Vec<StageMetrics>,
    pub limit: LimitDiagnostics,
    pub mixed: Option<MixedDiagnostics>,
    /// The initial energies vanish along the sequence, so the full
    /// derivative distance is reported.
    pub w12_triggered: bool,
    pub sup_dist_decreasing: bool,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
    #[serde(skip)]
    pub limit_trajectory: Option<Trajectory>,
}

impl ConvergenceReport {
    /// Columns `j,p_minus,sup_t_dist,weighted_deriv_dist,w12_dist,recovery_margin`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["j", "p_minus", "sup_t_dist", "weighted_deriv_dist", "w12_dist", "recovery_margin"])?;
        for s in &self.stages {
            w.write_record([
                s.j.to_string(),
                s.p_minus.to_string(),
                s.sup_t_dist.to_string(),
                s.weighted_deriv_dist.to_string(),
                s.w12_dist.to_string(),
                s.recovery_margin.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Time metrics between a stage trajectory and the limit.
pub fn trajectory_metrics(a: &Trajectory, b: &Trajectory, h: &[f64]) -> Result<(f64, f64, f64)> {
    a.check_compatible(b)?;
    let sup = a.sup_distance(b, h)?;
    // plain sums: rounding is monotone, so wderiv <= sqrt(T) w12 survives exactly
    let mut wderiv = 0.0;
    let mut w12 = 0.0;
    for k in 0..a.steps() {
        let dd = dist_h(&a.derivative(k), &b.derivative(k), h);
        let term = a.dt * dd * dd;
        let e = dist_h(&a.states[k + 1], &b.states[k + 1], h);
        wderiv += a.times[k + 1] * term;
        w12 += term + a.dt * e * e;
    }
    Ok((sup, wderiv.sqrt(), w12.sqrt()))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn finite_energy_trace(tr: &Trajectory) -> Vec<f64> {
    tr.stats.iter().map(|s| s.energy.unwrap_or(f64::INFINITY)).collect()
}

fn check_sequence(seq: &ExponentSequence, mode: BlowupMode, n: usize) -> Result<()> {
    if seq.mode != mode {
        return Err(LabError::Config(format!("expected a {mode:?} sequence, got {:?}", seq.mode)));
    }
    if seq.is_empty() || seq.fields.iter().any(|f| f.n() != n) {
        return Err(LabError::Config("exponent sequence does not match the grid".into()));
    }
    Ok(())
}

/// Membership and VI residual of a constrained trajectory at every stored
/// time, `w = f_avg - (u^{k+1} - u^k)/dt`.
pub fn limit_diagnostics(
    label: &str,
    constraint_at: &(dyn Fn(f64) -> Result<ConstraintSet> + Sync),
    tr: &Trajectory,
    forcing: &Forcing,
    cfg: &BlowupConfig,
    h: &[f64],
) -> Result<LimitDiagnostics> {
    let n = h.len();
    let mut viol: f64 = 0.0;
    let mut member = true;
    for k in 0..=tr.steps() {
        let cs = constraint_at(tr.times[k])?;
        viol = viol.max(cs.max_violation(&tr.states[k]));
        member &= cs.membership(&tr.states[k], 1e-8);
    }
    let per_step: Vec<(f64, f64)> = (1..=tr.steps())
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            let cs = constraint_at(tr.times[k])?;
            let f = cfg.step.forcing_sample(forcing, tr.times[k - 1], tr.times[k], n);
            let d = tr.derivative(k - 1);
            let w: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a - b).collect();
            let seed = cfg.seed.wrapping_add(k as u64);
            let r = vi_residual(&cs, &tr.states[k], &w, cfg.vi_samples, seed, VI_PROJ_TOL, 100_000 * n)?;
            Ok((r, r / (1.0 + norm_h(&w, h))))
        })
        .collect::<Result<_>>()?;
    let vis: Vec<f64> = per_step.iter().map(|p| p.0).collect();
    let rel = per_step.iter().map(|p| p.1).fold(0.0, f64::max);
    let max_vi = vis.iter().copied().fold(0.0, f64::max);
    Ok(LimitDiagnostics {
        constraint: label.into(),
        membership_ok: member,
        max_violation: viol,
        sup_norm: tr.sup_norm(h),
        vi_residuals: vis,
        max_vi_residual: max_vi,
        max_relative_vi: rel,
    })
}

/// `u_{p_j} -> u_inf` for `p_j -> inf` on all pairs. With a weight, each
/// stage uses the weighted energy at constant exponent `p_j-` and the limit
/// is the `K^t` flow; without, the variable-exponent energy and `K_inf`.
pub fn run_full_blowup(
    pairs: Arc<PairTable>,
    seq: &ExponentSequence,
    weight: Option<Arc<WeightField>>,
    data: &ProblemData,
    cfg: &BlowupConfig,
) -> Result<ConvergenceReport> {
    check_sequence(seq, BlowupMode::FullBlowup, pairs.n())?;
    let h = pairs.weights().to_vec();
    let mut notes = Vec::new();
    let limit_spec = match &weight {
        Some(w) => FunctionalSpec::indicator_kt(pairs.clone(), w.clone())?,
        None => FunctionalSpec::indicator_kinf(pairs.clone()),
    };
    let limit = solve_cauchy(&limit_spec, data, &cfg.step)?;
    let kinf_limit = match &weight {
        Some(_) => {
            notes.push(
                "weighted stages: the energy is linear in A, so its pointwise limit constrains |G_s u| <= 1; \
                 sup_t_dist_kinf reports the distance to that flow"
                    .into(),
            );
            Some(solve_cauchy(&FunctionalSpec::indicator_kinf(pairs.clone()), data, &cfg.step)?)
        }
        None => None,
    };

    let stage_specs: Vec<FunctionalSpec> = seq
        .fields
        .iter()
        .map(|f| match &weight {
            Some(w) => FunctionalSpec::weighted_constant_p(pairs.clone(), f.p_minus(), w.clone(), cfg.scaling),
            None => FunctionalSpec::variable_p(pairs.clone(), Arc::new(f.clone()), cfg.scaling),
        })
        .collect::<Result<_>>()?;

    let solved: Vec<(Trajectory, StageMetrics)> = stage_specs
        .par_iter()
        .enumerate()
        .map(|(j, spec)| -> Result<(Trajectory, StageMetrics)> {
            let tr = solve_cauchy(spec, data, &cfg.step)?;
            let (sup, wderiv, w12) = trajectory_metrics(&tr, &limit, &h)?;
            let field = &seq.fields[j];
            let p_minus = field.p_minus();
            let bound = weighted_measure(spec, weight.as_deref()) / p_minus;
            let e0 = spec.eval(&data.u0, 0.0)?;
            let sup_kinf = match &kinf_limit {
                Some(k) => Some(tr.sup_distance(k, &h)?),
                None => None,
            };
            let metrics = StageMetrics {
                j,
                p_minus,
                p_plus: field.p_plus(),
                sup_t_dist: sup,
                weighted_deriv_dist: wderiv,
                w12_dist: w12,
                recovery_margin: bound - e0,
                initial_energy: e0,
                energy_trace: finite_energy_trace(&tr),
                sup_t_dist_kinf: sup_kinf,
                complement_dist: None,
            };
            Ok((tr, metrics))
        })
        .collect::<Result<_>>()?;

    let (trajectories, stages): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let w12_triggered = stages.iter().all(|s| s.recovery_margin >= 0.0)
        || stages.last().is_some_and(|s| s.initial_energy == 0.0);
    let sups: Vec<f64> = stages.iter().map(|s| s.sup_t_dist).collect();
    let label = if weight.is_some() { "K^t" } else { "K_inf" };
    let constraint_at = |t: f64| -> Result<ConstraintSet> {
        Ok(limit_spec.constraint_set(t)?.expect("indicator has a constraint"))
    };
    let diag = limit_diagnostics(label, &constraint_at, &limit, &data.forcing, cfg, &h)?;
    Ok(ConvergenceReport {
        mode: "full_blowup".into(),
        sup_dist_decreasing: strictly_decreasing(&sups) || sups.iter().all(|&s| s == 0.0),
        stages,
        limit: diag,
        mixed: None,
        w12_triggered,
        notes,
        trajectories,
        limit_trajectory: Some(limit),
    })
}

/// `sum_{i != j} A_ij w_ij` with `A` at its largest over time, for the
/// recovery bound of a stage functional.
fn weighted_measure(spec: &FunctionalSpec, weight: Option<&WeightField>) -> f64 {
    match weight {
        None => spec.pair_measure(),
        Some(w) => {
            let pt = spec.pairs();
            let (_, smax) = w.sigma().range(w.horizon());
            let scaling = match spec {
                FunctionalSpec::WeightedConstantP { scaling, .. } => *scaling,
                _ => KernelScaling::Gagliardo,
            };
            let mut acc = 0.0;
            for (i, j) in pt.ordered_pairs() {
                acc += w.spatial(i, j) * smax * scaling.ln_weight(pt, i, j).exp();
            }
            acc
        }
    }
}

/// Periodic problems along the sequence against one periodic solution of
/// the `K^t` limit. Limit solutions need not be unique, so a non-monotone
/// distance sequence is reported, not treated as failure.
pub fn run_periodic_blowup(
    pairs: Arc<PairTable>,
    seq: &ExponentSequence,
    weight: Arc<WeightField>,
    forcing: &Forcing,
    cfg: &BlowupConfig,
) -> Result<ConvergenceReport> {
    check_sequence(seq, BlowupMode::FullBlowup, pairs.n())?;
    if !weight.periodic_hypothesis_holds() {
        return Err(LabError::Config("periodic blow-up needs A(., ., 0) <= A(., ., T)".into()));
    }
    if let Some(f) = seq.fields.iter().find(|f| f.p_minus() < 2.0) {
        return Err(LabError::Config(format!("periodic stages need exponents >= 2, got {}", f.p_minus())));
    }
    let horizon = weight.horizon();
    let h = pairs.weights().to_vec();
    let limit_spec = FunctionalSpec::indicator_kt(pairs.clone(), weight.clone())?;
    let limit = solve_periodic(&limit_spec, forcing, horizon, &cfg.step, &cfg.periodic)?;
    let kinf = solve_periodic(&FunctionalSpec::indicator_kinf(pairs.clone()), forcing, horizon, &cfg.step, &cfg.periodic)?;
    let solved: Vec<(Trajectory, StageMetrics)> = seq
        .fields
        .par_iter()
        .enumerate()
        .map(|(j, field)| -> Result<(Trajectory, StageMetrics)> {
            let spec = FunctionalSpec::weighted_constant_p(pairs.clone(), field.p_minus(), weight.clone(), cfg.scaling)?;
            let sol = solve_periodic(&spec, forcing, horizon, &cfg.step, &cfg.periodic)?;
            let tr = sol.trajectory;
            let (sup, wderiv, w12) = trajectory_metrics(&tr, &limit.trajectory, &h)?;
            let bound = weighted_measure(&spec, Some(&weight)) / field.p_minus();
            let e0 = spec.eval(tr.initial(), 0.0)?;
            let m = StageMetrics {
                j,
                p_minus: field.p_minus(),
                p_plus: field.p_plus(),
                sup_t_dist: sup,
                weighted_deriv_dist: wderiv,
                w12_dist: w12,
                recovery_margin: bound - e0,
                initial_energy: e0,
                energy_trace: finite_energy_trace(&tr),
                sup_t_dist_kinf: Some(tr.sup_distance(&kinf.trajectory, &h)?),
                complement_dist: None,
            };
            Ok((tr, m))
        })
        .collect::<Result<_>>()?;
    let (trajectories, stages): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let sups: Vec<f64> = stages.iter().map(|s| s.sup_t_dist).collect();
    let decreasing = strictly_decreasing(&sups) || sups.iter().all(|&s| s == 0.0);
    let mut notes = vec![format!(
        "limit periodic solution found after {} Picard iterations{}",
        limit.iterations,
        if limit.averaged { " (averaged)" } else { "" }
    )];
    if !decreasing {
        notes.push("distance sequence is not monotone; convergence holds only along subsequences".into());
    }
    let constraint_at = |t: f64| -> Result<ConstraintSet> {
        Ok(limit_spec.constraint_set(t)?.expect("indicator has a constraint"))
    };
    let diag = limit_diagnostics("K^t", &constraint_at, &limit.trajectory, forcing, cfg, &h)?;
    Ok(ConvergenceReport {
        mode: "periodic_blowup".into(),
        stages,
        limit: diag,
        mixed: None,
        w12_triggered: false,
        sup_dist_decreasing: decreasing,
        notes,
        trajectories,
        limit_trajectory: Some(limit.trajectory),
    })
}

/// Exponents blow up on `O x O` only; the limit is the mixed problem.
pub fn run_partial_blowup(
    pairs: Arc<PairTable>,
    seq: &ExponentSequence,
    mask: Arc<SubdomainMask>,
    data: &ProblemData,
    cfg: &BlowupConfig,
) -> Result<ConvergenceReport> {
    check_sequence(seq, BlowupMode::PartialBlowup, pairs.n())?;
    if mask.len() != pairs.n() {
        return Err(LabError::Config("mask does not match the grid".into()));
    }
    let n = pairs.n();
    let h = pairs.weights().to_vec();
    // complement exponents are shared by every stage
    let kappa = Arc::new(seq.fields[0].clone());
    let limit_spec = FunctionalSpec::mixed_o(pairs.clone(), kappa.clone(), mask.clone(), cfg.scaling)?;
    let limit = solve_cauchy(&limit_spec, data, &cfg.step)?;
    let outside = |i: usize| !mask.is_inside(i);
    let complement = |i: usize, j: usize| !mask.in_o_squared(i, j);

    let solved: Vec<(Trajectory, StageMetrics)> = seq
        .fields
        .par_iter()
        .enumerate()
        .map(|(j, field)| -> Result<(Trajectory, StageMetrics)> {
            let spec = FunctionalSpec::variable_p(pairs.clone(), Arc::new(field.clone()), cfg.scaling)?;
            let tr = solve_cauchy(&spec, data, &cfg.step)?;
            let (sup, wderiv, w12) = trajectory_metrics(&tr, &limit, &h)?;
            let part = field.partial_extrema().expect("partial fields carry extrema");
            let e0 = spec.eval(&data.u0, 0.0)?;
            let comp0 = limit_spec.smooth_eval(&data.u0, 0.0)?;
            let inner_measure: f64 = pairs
                .ordered_pairs()
                .filter(|&(a, b)| mask.in_o_squared(a, b))
                .map(|(a, b)| cfg.scaling.ln_weight(&pairs, a, b).exp())
                .sum();
            let bound = comp0 + inner_measure / part.inner_minus;
            // L^sigma in time of the complement Luxemburg distance
            let mut acc = 0.0;
            for k in 1..=tr.steps() {
                let d: Vec<f64> = tr.states[k].iter().zip(&limit.states[k]).map(|(a, b)| a - b).collect();
                let nrm = luxemburg_where(&d, &pairs, field, DEFAULT_BISECTION_TOL, complement)?;
                acc += tr.dt * nrm.powf(cfg.sigma);
            }
            let m = StageMetrics {
                j,
                p_minus: part.inner_minus,
                p_plus: part.inner_plus,
                sup_t_dist: sup,
                weighted_deriv_dist: wderiv,
                w12_dist: w12,
                recovery_margin: bound - e0,
                initial_energy: e0,
                energy_trace: finite_energy_trace(&tr),
                sup_t_dist_kinf: None,
                complement_dist: Some(acc.powf(1.0 / cfg.sigma)),
            };
            Ok((tr, m))
        })
        .collect::<Result<_>>()?;
    let (trajectories, stages): (Vec<_>, Vec<_>) = solved.into_iter().unzip();

    let o_sq = ConstraintSet::o_squared(&pairs, &mask);
    let per_step: Vec<[f64; 4]> = (0..limit.steps())
        .into_par_iter()
        .map(|k| -> Result<[f64; 4]> {
            let (t0, t1) = (limit.times[k], limit.times[k + 1]);
            let u1 = &limit.states[k + 1];
            let f = cfg.step.forcing_sample(&data.forcing, t0, t1, n);
            let du = limit.derivative(k);
            let g = limit_spec.grad(u1, t1)?;
            let r: Vec<f64> = (0..n).map(|i| if outside(i) { du[i] + g[i] / h[i] - f[i] } else { 0.0 }).collect();
            let anchored = ConstraintSet::k_inf_o(&pairs, &mask, u1)?;
            let seed = cfg.seed.wrapping_add(k as u64);
            let w: Vec<f64> = (0..n).map(|i| f[i] - du[i] - g[i] / h[i]).collect();
            let wl: Vec<f64> = (0..n).map(|i| f[i] - du[i]).collect();
            Ok([
                norm_h(&r, &h),
                o_sq.min_relative_margin(u1),
                vi_residual(&anchored, u1, &w, cfg.vi_samples, seed, VI_PROJ_TOL, 100_000 * n)?,
                vi_residual(&anchored, u1, &wl, cfg.vi_samples, seed, VI_PROJ_TOL, 100_000 * n)?,
            ])
        })
        .collect::<Result<_>>()?;
    let comp_res: Vec<f64> = per_step.iter().map(|r| r[0]).collect();
    let mut margins = vec![o_sq.min_relative_margin(&limit.states[0])];
    margins.extend(per_step.iter().map(|r| r[1]));
    let qvi: Vec<f64> = per_step.iter().map(|r| r[2]).collect();
    let qvi_lit: Vec<f64> = per_step.iter().map(|r| r[3]).collect();
    // the O^2 share of Phi_j(u0) vanishes along the sequence
    let comp0 = limit_spec.smooth_eval(&data.u0, 0.0)?;
    let excess: Vec<f64> = stages.iter().map(|s| (s.initial_energy - comp0).abs()).collect();
    let initial_share_vanishes = o_sq.membership(&data.u0, 1e-9)
        && excess.last().is_some_and(|&e| e <= excess[0] || e <= 1e-12);
    let sups: Vec<f64> = stages.iter().map(|s| s.sup_t_dist).collect();
    let constraint_at = |_: f64| -> Result<ConstraintSet> { Ok(o_sq.clone()) };
    let mut diag = limit_diagnostics("O^2", &constraint_at, &limit, &data.forcing, cfg, &h)?;
    // the plain VI does not apply with a finite complement energy; the quasi-VI replaces it
    diag.vi_residuals = qvi.clone();
    diag.max_vi_residual = qvi.iter().copied().fold(0.0, f64::max);
    diag.max_relative_vi = f64::NAN;
    let notes = vec![
        "quasi_vi_residuals use w = f - du/dt - (complement flux)/h; quasi_vi_literal drops the flux across O x (complement)".into(),
    ];
    Ok(ConvergenceReport {
        mode: "partial_blowup".into(),
        sup_dist_decreasing: strictly_decreasing(&sups) || sups.iter().all(|&s| s == 0.0),
        stages,
        limit: diag,
        mixed: Some(MixedDiagnostics {
            complement_residuals: comp_res,
            o2_margins: margins,
            quasi_vi_residuals: qvi,
            quasi_vi_literal: qvi_lit,
            initial_share_vanishes,
        }),
        w12_triggered: initial_share_vanishes,
        notes,
        trajectories,
        limit_trajectory: Some(limit),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoscoConfig {
    #[serde(default = "default_mosco_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scaling: KernelScaling,
    /// Energy level counted as divergence for infeasible limits.
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
    /// Hölder quotient of the infeasible probe.
    #[serde(default = "default_infeasible_sup")]
    pub infeasible_sup: f64,
}

fn default_mosco_samples() -> usize {
    100
}

fn default_threshold() -> f64 {
    1e3
}

fn default_infeasible_sup() -> f64 {
    1.5
}

impl Default for MoscoConfig {
    fn default() -> Self {
        Self {
            samples: default_mosco_samples(),
            seed: 0,
            scaling: KernelScaling::HolderOrder,
            divergence_threshold: default_threshold(),
            infeasible_sup: default_infeasible_sup(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryRow {
    pub sample: usize,
    pub j: usize,
    pub p_minus: f64,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LiminfRow {
    pub sample: usize,
    pub tail_min: f64,
    pub limit_value: f64,
    pub allowance: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceRow {
    pub holder_sup: f64,
    /// `None` where the guarded evaluation overflowed.
    pub values: Vec<Option<f64>>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MoscoReport {
    pub recovery: Vec<RecoveryRow>,
    pub recovery_all_hold: bool,
    pub liminf: Vec<LiminfRow>,
    pub liminf_all_hold: bool,
    pub divergence: DivergenceRow,
}

/// Recovery and liminf diagnostics for `Phi_j -> Phi_inf` on sampled states.
/// For a partial sequence `mask` selects `O` and the limit is the mixed functional.
pub fn mosco_diagnostics(
    pairs: Arc<PairTable>,
    seq: &ExponentSequence,
    mask: Option<Arc<SubdomainMask>>,
    cfg: &MoscoConfig,
) -> Result<MoscoReport> {
    let n = pairs.n();
    if seq.is_empty() || seq.fields.iter().any(|f| f.n() != n) {
        return Err(LabError::Config("exponent sequence does not match the grid".into()));
    }
    let h = pairs.weights().to_vec();
    let partial = seq.mode == BlowupMode::PartialBlowup;
    let (feasible, limit_spec) = match (&mask, partial) {
        (Some(m), true) => (
            ConstraintSet::o_squared(&pairs, m),
            Some(FunctionalSpec::mixed_o(pairs.clone(), Arc::new(seq.fields[0].clone()), m.clone(), cfg.scaling)?),
        ),
        (None, true) => return Err(LabError::Config("partial Mosco diagnostics need a mask".into())),
        _ => (ConstraintSet::k_inf(&pairs), None),
    };
    let limit_value = |u: &[f64]| -> Result<f64> {
        match &limit_spec {
            Some(s) => s.eval(u, 0.0),
            None => Ok(if feasible.membership(u, 1e-9) { 0.0 } else { f64::INFINITY }),
        }
    };
    let specs: Vec<FunctionalSpec> = seq
        .fields
        .iter()
        .map(|f| FunctionalSpec::variable_p(pairs.clone(), Arc::new(f.clone()), cfg.scaling))
        .collect::<Result<_>>()?;
    let minus: Vec<f64> = seq
        .fields
        .iter()
        .map(|f| if partial { f.partial_extrema().map_or(f.p_minus(), |e| e.inner_minus) } else { f.p_minus() })
        .collect();
    let inner_measure: f64 = match &mask {
        Some(m) if partial => pairs
            .ordered_pairs()
            .filter(|&(a, b)| m.in_o_squared(a, b))
            .map(|(a, b)| cfg.scaling.ln_weight(&pairs, a, b).exp())
            .sum(),
        _ => cfg.scaling.measure(&pairs),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut recovery = Vec::new();
    let mut liminf = Vec::new();
    for sample in 0..cfg.samples {
        let amp = 0.5 + 2.0 * (sample as f64 / cfg.samples.max(1) as f64);
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                amp * z
            })
            .collect();
        let u = feasible.project(&raw, 1e-12, 100_000 * n)?.state;
        let base = limit_value(&u)?;
        for (j, spec) in specs.iter().enumerate() {
            let value = spec.eval(&u, 0.0)?;
            let bound = base + inner_measure / minus[j];
            recovery.push(RecoveryRow { sample, j, p_minus: minus[j], value, bound, holds: value <= bound });
        }
        // u_j = u + delta_j z with delta_j -> 0
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zn = norm_h(&z, &h).max(f64::MIN_POSITIVE);
        let slope = match &limit_spec {
            Some(s) => {
                let g = s.grad(&u, 0.0)?;
                norm_h(&g.iter().zip(&h).map(|(a, w)| a / w).collect::<Vec<_>>(), &h)
            }
            None => 0.0,
        };
        let tail_from = specs.len() / 2;
        let mut tail_min = f64::INFINITY;
        let mut allowance: f64 = 0.0;
        for (j, spec) in specs.iter().enumerate().skip(tail_from) {
            let delta = 1e-3 / minus[j];
            let uj: Vec<f64> = u.iter().zip(&z).map(|(a, b)| a + delta * b / zn).collect();
            let v = match spec.eval(&uj, 0.0) {
                Ok(v) => v,
                Err(LabError::Overflow { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            tail_min = tail_min.min(v);
            // first-order change of the limit functional along the perturbation
            allowance = allowance.max(slope * delta * 1.01 + 1e-12);
        }
        let holds = tail_min >= base - allowance;
        liminf.push(LiminfRow { sample, tail_min, limit_value: base, allowance, holds });
    }

    // infeasible probe: rescale a random state to the configured Hölder quotient
    let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let hs = holder_sup(&raw, &pairs)?;
    let u: Vec<f64> = raw.iter().map(|x| x * cfg.infeasible_sup / hs.max(f64::MIN_POSITIVE)).collect();
    let mut values = Vec::with_capacity(specs.len());
    for spec in &specs {
        values.push(match spec.eval(&u, 0.0) {
            Ok(v) => Some(v),
            Err(LabError::Overflow { .. }) => None,
            Err(e) => return Err(e),
        });
    }
    let diverged = match values.last() {
        Some(None) => true,
        Some(Some(v)) => *v > cfg.divergence_threshold,
        None => false,
    };
    Ok(MoscoReport {
        recovery_all_hold: recovery.iter().all(|r| r.holds),
        recovery,
        liminf_all_hold: liminf.iter().all(|r| r.holds),
        liminf,
        divergence: DivergenceRow { holder_sup: cfg.infeasible_sup, values, diverged },
    })
}

/// The schedule's exponent fields as a plain list, for callers that only
/// need `p_j-`.
pub fn schedule_minus(seq: &ExponentSequence) -> Vec<f64> {
    seq.fields.iter().map(ExponentField::p_minus).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_full_blowup_sequence, make_partial_blowup_sequence};
    use crate::grid::{build_interval_grid, build_mask, build_pair_table};

    fn setup(n: usize) -> (Arc<PairTable>, ExponentSequence) {
        let g = build_interval_grid(n, 0.0, 1.0).unwrap();
        let pt = Arc::new(build_pair_table(&g, 0.5).unwrap());
        let base = ExponentField::constant(n, 2.0).unwrap();
        let seq = make_full_blowup_sequence(&base, &[2.0, 4.0, 8.0], 0.1).unwrap();
        (pt, seq)
    }

    #[test]
    fn zero_data_gives_zero_metrics() {
        let (pt, seq) = setup(6);
        let data = ProblemData::new(0.25, Forcing::Zero, vec![0.0; 6]).unwrap();
        let rep = run_full_blowup(pt, &seq, None, &data, &BlowupConfig::new(StepConfig::new(1.0 / 16.0))).unwrap();
        for s in &rep.stages {
            assert_eq!((s.sup_t_dist, s.weighted_deriv_dist, s.w12_dist), (0.0, 0.0, 0.0));
        }
        assert!(rep.limit.membership_ok);
        assert_eq!(rep.limit.max_vi_residual, 0.0);
    }

    #[test]
    fn weighted_derivative_never_exceeds_scaled_w12() {
        let (pt, seq) = setup(6);
        let f = Forcing::constant(vec![1.0, -1.0, 0.5, -0.5, 0.25, -0.25]);
        let data = ProblemData::new(0.5, f, vec![0.0; 6]).unwrap();
        let rep = run_full_blowup(pt, &seq, None, &data, &BlowupConfig::new(StepConfig::new(1.0 / 32.0))).unwrap();
        for s in &rep.stages {
            assert!(s.weighted_deriv_dist <= 0.5f64.sqrt() * s.w12_dist);
            assert!(s.recovery_margin >= 0.0);
        }
        let mut buf = Vec::new();
        rep.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("j,p_minus,sup_t_dist,weighted_deriv_dist,w12_dist,recovery_margin\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn partial_zero_data_has_zero_residuals() {
        let n = 8;
        let g = build_interval_grid(n, 0.0, 1.0).unwrap();
        let pt = Arc::new(build_pair_table(&g, 0.5).unwrap());
        let mask = Arc::new(build_mask(&g, |x| x[0] > 0.25 && x[0] < 0.75, true).unwrap());
        let kappa = ExponentField::constant(n, 2.0).unwrap();
        let seq = make_partial_blowup_sequence(&mask, &kappa, &kappa, &[2.0, 4.0], 0.1).unwrap();
        let data = ProblemData::new(0.25, Forcing::Zero, vec![0.0; n]).unwrap();
        let rep = run_partial_blowup(pt, &seq, mask, &data, &BlowupConfig::new(StepConfig::new(1.0 / 16.0))).unwrap();
        let mixed = rep.mixed.unwrap();
        assert!(mixed.complement_residuals.iter().all(|&r| r == 0.0));
        assert!(mixed.quasi_vi_residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn mosco_zero_and_divergence() {
        let (pt, seq) = setup(6);
        let cfg = MoscoConfig { samples: 10, ..MoscoConfig::default() };
        let rep = mosco_diagnostics(pt, &seq, None, &cfg).unwrap();
        assert!(rep.recovery_all_hold);
        assert!(rep.liminf_all_hold);
        let vals: Vec<f64> = rep.divergence.values.iter().map(|v| v.unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn periodic_blowup_zero_forcing() {
        let (pt, seq) = setup(4);
        let w = Arc::new(
            WeightField::uniform(4, 1.0, crate::fields::TimeFactor::Affine { offset: 1.0, slope: 0.5 }, 2.0, 1.0)
                .unwrap(),
        );
        let rep =
            run_periodic_blowup(pt, &seq, w, &Forcing::Zero, &BlowupConfig::new(StepConfig::new(0.125))).unwrap();
        assert!(rep.stages.iter().all(|s| s.sup_t_dist == 0.0));
    }
}
