//! Convex energies driving the flows, their gradients, and the constraint
//! sets of the limit problems.
//!
//! A smooth energy is a sum over unordered pairs `i < j` of
//! `2 (c_ij / p_ij) q_ij^{p_ij} w_ij` where `q_ij = |u_i - u_j| / d_ij^s`,
//! `c_ij` is the weight `A(x_i, x_j, t)` (1 when unweighted) and `w_ij` the
//! pair measure selected by [`KernelScaling`]. The factor 2 accounts for the
//! two orderings of each pair.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{ExponentField, WeightField};
use crate::grid::{PairTable, SubdomainMask};
use crate::sum::{dot_h, NeumaierSum};
use crate::vnorm::guarded_power;

/// Which pair measure multiplies `q^p`.
///
/// `Gagliardo` uses `mu_ij = h_i h_j / d_ij^N`, i.e. the kernel
/// `|x - y|^{-(N + s p)}` at fixed `s`. `HolderOrder` uses `h_i h_j`, the
/// kernel `|x - y|^{-s p}`, which keeps the Hölder order of the limit
/// constraint fixed while `p` grows. Both families share the same limit
/// constraint set on a fixed grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelScaling {
    #[default]
    Gagliardo,
    HolderOrder,
}

impl KernelScaling {
    #[inline]
    pub fn ln_weight(self, pt: &PairTable, i: usize, j: usize) -> f64 {
        match self {
            KernelScaling::Gagliardo => pt.mu(i, j).ln(),
            KernelScaling::HolderOrder => (pt.weights()[i] * pt.weights()[j]).ln(),
        }
    }

    /// Sum of the pair measure over ordered off-diagonal pairs.
    pub fn measure(self, pt: &PairTable) -> f64 {
        match self {
            KernelScaling::Gagliardo => pt.mu_measure(),
            KernelScaling::HolderOrder => pt.product_measure(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    WeightedConstantP,
    VariableP,
    IndicatorKt,
    IndicatorKinf,
    MixedO,
}

/// The convex functional `phi^t` of a flow.
#[derive(Debug, Clone)]
pub enum FunctionalSpec {
    /// `sum (A_ij(t) / p) q^p w`.
    WeightedConstantP {
        pairs: Arc<PairTable>,
        p: f64,
        weight: Arc<WeightField>,
        scaling: KernelScaling,
    },
    /// `sum (1 / p_ij) q^{p_ij} w`.
    VariableP {
        pairs: Arc<PairTable>,
        exponent: Arc<ExponentField>,
        scaling: KernelScaling,
    },
    /// Indicator of `|u_i - u_j| <= d_ij^s / A_ij(t)`.
    IndicatorKt { pairs: Arc<PairTable>, weight: Arc<WeightField> },
    /// Indicator of `|u_i - u_j| <= d_ij^s`.
    IndicatorKinf { pairs: Arc<PairTable> },
    /// Finite energy on pairs outside `O x O` plus the indicator of the
    /// Hölder constraint on `O x O`.
    MixedO {
        pairs: Arc<PairTable>,
        exponent: Arc<ExponentField>,
        mask: Arc<SubdomainMask>,
        scaling: KernelScaling,
    },
}

/// Membership tolerance used when an indicator is evaluated.
pub const INDICATOR_TOL: f64 = 1e-9;

impl FunctionalSpec {
    pub fn weighted_constant_p(
        pairs: Arc<PairTable>,
        p: f64,
        weight: Arc<WeightField>,
        scaling: KernelScaling,
    ) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(LabError::Validation(format!("exponent {p} must be finite and exceed 1")));
        }
        if weight.n() != pairs.n() {
            return Err(LabError::Validation("weight field does not match the grid".into()));
        }
        Ok(FunctionalSpec::WeightedConstantP { pairs, p, weight, scaling })
    }

    pub fn variable_p(pairs: Arc<PairTable>, exponent: Arc<ExponentField>, scaling: KernelScaling) -> Result<Self> {
        if exponent.n() != pairs.n() {
            return Err(LabError::Validation("exponent field does not match the grid".into()));
        }
        Ok(FunctionalSpec::VariableP { pairs, exponent, scaling })
    }

    pub fn indicator_kt(pairs: Arc<PairTable>, weight: Arc<WeightField>) -> Result<Self> {
        if weight.n() != pairs.n() {
            return Err(LabError::Validation("weight field does not match the grid".into()));
        }
        Ok(FunctionalSpec::IndicatorKt { pairs, weight })
    }

    pub fn indicator_kinf(pairs: Arc<PairTable>) -> Self {
        FunctionalSpec::IndicatorKinf { pairs }
    }

    pub fn mixed_o(
        pairs: Arc<PairTable>,
        exponent: Arc<ExponentField>,
        mask: Arc<SubdomainMask>,
        scaling: KernelScaling,
    ) -> Result<Self> {
        if exponent.n() != pairs.n() || mask.len() != pairs.n() {
            return Err(LabError::Validation("mixed functional fields do not match the grid".into()));
        }
        if !mask.is_mixed() {
            return Err(LabError::Config("mixed functional needs a mixed subdomain mask".into()));
        }
        Ok(FunctionalSpec::MixedO { pairs, exponent, mask, scaling })
    }

    pub fn kind(&self) -> FunctionalKind {
        match self {
            FunctionalSpec::WeightedConstantP { .. } => FunctionalKind::WeightedConstantP,
            FunctionalSpec::VariableP { .. } => FunctionalKind::VariableP,
            FunctionalSpec::IndicatorKt { .. } => FunctionalKind::IndicatorKt,
            FunctionalSpec::IndicatorKinf { .. } => FunctionalKind::IndicatorKinf,
            FunctionalSpec::MixedO { .. } => FunctionalKind::MixedO,
        }
    }

    pub fn pairs(&self) -> &PairTable {
        match self {
            FunctionalSpec::WeightedConstantP { pairs, .. }
            | FunctionalSpec::VariableP { pairs, .. }
            | FunctionalSpec::IndicatorKt { pairs, .. }
            | FunctionalSpec::IndicatorKinf { pairs }
            | FunctionalSpec::MixedO { pairs, .. } => pairs,
        }
    }

    pub fn n(&self) -> usize {
        self.pairs().n()
    }

    pub fn weights(&self) -> &[f64] {
        self.pairs().weights()
    }

    /// Has a finite smooth part and no constraint.
    pub fn is_smooth(&self) -> bool {
        matches!(self, FunctionalSpec::WeightedConstantP { .. } | FunctionalSpec::VariableP { .. })
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self, FunctionalSpec::IndicatorKt { .. } | FunctionalSpec::IndicatorKinf { .. })
    }

    pub fn weight(&self) -> Option<&WeightField> {
        match self {
            FunctionalSpec::WeightedConstantP { weight, .. } | FunctionalSpec::IndicatorKt { weight, .. } => {
                Some(weight)
            }
            _ => None,
        }
    }

    pub fn time_dependent(&self) -> bool {
        self.weight().is_some_and(|w| !w.is_time_constant())
    }

    /// Smallest exponent of the smooth part, if any.
    pub fn smooth_exponent_minus(&self) -> Option<f64> {
        match self {
            FunctionalSpec::WeightedConstantP { p, .. } => Some(*p),
            FunctionalSpec::VariableP { exponent, .. } => Some(exponent.p_minus()),
            FunctionalSpec::MixedO { exponent, mask, .. } => {
                exponent.extrema_where(|i, j| !mask.in_o_squared(i, j)).map(|e| e.0)
            }
            _ => None,
        }
    }

    /// Constraint set at time `t`, if the functional has one.
    pub fn constraint_set(&self, t: f64) -> Result<Option<ConstraintSet>> {
        Ok(match self {
            FunctionalSpec::IndicatorKt { pairs, weight } => Some(ConstraintSet::k_t(pairs, weight, t)?),
            FunctionalSpec::IndicatorKinf { pairs } => Some(ConstraintSet::k_inf(pairs)),
            FunctionalSpec::MixedO { pairs, mask, .. } => Some(ConstraintSet::o_squared(pairs, mask)),
            _ => None,
        })
    }

    fn check_state(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n() {
            return Err(LabError::Validation(format!(
                "state has {} entries, grid has {}",
                u.len(),
                self.n()
            )));
        }
        if let Some(k) = u.iter().position(|x| !x.is_finite()) {
            return Err(LabError::Numeric(format!("state entry {k} is not finite")));
        }
        Ok(())
    }

    /// Visit every unordered pair of the smooth part with its exponent and
    /// `ln(2 c_ij w_ij)`.
    fn for_smooth_pairs<F>(&self, t: f64, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, usize, f64, f64) -> Result<()>,
    {
        let pt = self.pairs();
        let n = pt.n();
        match self {
            FunctionalSpec::WeightedConstantP { p, weight, scaling, .. } => {
                weight.check_time(t)?;
                let sigma = weight.sigma().eval(t);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let c = weight.spatial(i, j) * sigma;
                        visit(i, j, *p, (2.0 * c).ln() + scaling.ln_weight(pt, i, j))?;
                    }
                }
            }
            FunctionalSpec::VariableP { exponent, scaling, .. } => {
                for i in 0..n {
                    for j in (i + 1)..n {
                        visit(i, j, exponent.get(i, j), std::f64::consts::LN_2 + scaling.ln_weight(pt, i, j))?;
                    }
                }
            }
            FunctionalSpec::MixedO { exponent, mask, scaling, .. } => {
                for i in 0..n {
                    for j in (i + 1)..n {
                        if mask.in_o_squared(i, j) {
                            continue;
                        }
                        visit(i, j, exponent.get(i, j), std::f64::consts::LN_2 + scaling.ln_weight(pt, i, j))?;
                    }
                }
            }
            FunctionalSpec::IndicatorKt { .. } | FunctionalSpec::IndicatorKinf { .. } => {}
        }
        Ok(())
    }

    /// The finite (smooth) part of the energy; 0 for pure indicators.
    pub fn smooth_eval(&self, u: &[f64], t: f64) -> Result<f64> {
        self.check_state(u)?;
        let pt = self.pairs();
        let mut acc = NeumaierSum::new();
        self.for_smooth_pairs(t, |i, j, p, ln_cw| {
            let q = (u[i] - u[j]).abs() / pt.dist_pow_s(i, j);
            acc.add(guarded_power(i, j, q, p, ln_cw - p.ln())?);
            Ok(())
        })?;
        let v = acc.value();
        if !v.is_finite() {
            return Err(LabError::Numeric("energy sum overflowed".into()));
        }
        Ok(v)
    }

    /// Energy at time `t`; `f64::INFINITY` outside the effective domain.
    pub fn eval(&self, u: &[f64], t: f64) -> Result<f64> {
        let smooth = self.smooth_eval(u, t)?;
        if let Some(cs) = self.constraint_set(t)? {
            if !cs.membership(u, INDICATOR_TOL) {
                return Ok(f64::INFINITY);
            }
        }
        Ok(smooth)
    }

    /// Euclidean gradient of the smooth part:
    /// `g_i = 2 sum_j c_ij |u_i - u_j|^{p-2} (u_i - u_j) w_ij / d_ij^{s p}`.
    pub fn grad(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        if self.is_indicator() {
            return Err(LabError::Config("indicator functionals have no gradient; use project".into()));
        }
        self.check_state(u)?;
        let pt = self.pairs();
        let s = pt.s();
        let mut g = vec![0.0; self.n()];
        self.for_smooth_pairs(t, |i, j, p, ln_cw| {
            let diff = u[i] - u[j];
            let q = diff.abs() / pt.dist_pow_s(i, j);
            // q^{p-1} * 2 c w / d^s
            let mag = guarded_power(i, j, q, p - 1.0, ln_cw - s * pt.dist(i, j).ln())?;
            let v = mag.copysign(diff);
            if diff != 0.0 {
                g[i] += v;
                g[j] -= v;
            }
            Ok(())
        })?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(LabError::Numeric("gradient overflowed".into()));
        }
        Ok(g)
    }

    /// Euclidean Hessian of the smooth part. Where `p < 2` and a difference
    /// vanishes the curvature is unbounded; quotients are floored at
    /// `q_floor` there so the matrix stays finite and positive semidefinite.
    pub fn hessian(&self, u: &[f64], t: f64, q_floor: f64) -> Result<DMatrix<f64>> {
        self.check_state(u)?;
        let pt = self.pairs();
        let s = pt.s();
        let n = self.n();
        let mut hm = DMatrix::<f64>::zeros(n, n);
        self.for_smooth_pairs(t, |i, j, p, ln_cw| {
            let mut q = (u[i] - u[j]).abs() / pt.dist_pow_s(i, j);
            let c = if p == 2.0 {
                (ln_cw - 2.0 * s * pt.dist(i, j).ln()).exp()
            } else {
                if p < 2.0 {
                    q = q.max(q_floor);
                }
                guarded_power(i, j, q, p - 2.0, ln_cw + (p - 1.0).ln() - 2.0 * s * pt.dist(i, j).ln())?
            };
            hm[(i, i)] += c;
            hm[(j, j)] += c;
            hm[(i, j)] -= c;
            hm[(j, i)] -= c;
            Ok(())
        })?;
        Ok(hm)
    }

    /// Sum of the pair measure of the smooth part's scaling over all ordered
    /// off-diagonal pairs (used by the recovery bound).
    pub fn pair_measure(&self) -> f64 {
        match self {
            FunctionalSpec::WeightedConstantP { scaling, .. }
            | FunctionalSpec::VariableP { scaling, .. }
            | FunctionalSpec::MixedO { scaling, .. } => scaling.measure(self.pairs()),
            _ => KernelScaling::Gagliardo.measure(self.pairs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `|G_s u| <= 1 / A(., ., t)` on all pairs.
    Kt { t: f64 },
    /// `|G_s u| <= 1` on all pairs.
    Kinf,
    /// `|G_s u| <= 1` on `O x O` and `u = anchor` outside `O`.
    KinfO,
    /// `|G_s u| <= 1` on `O x O` only.
    OSquared,
}

/// `|u_i - u_j| <= bound` for one unordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Slab {
    pub i: usize,
    pub j: usize,
    pub bound: f64,
}

/// Polyhedron of pair slabs, optionally intersected with equality pins.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSet {
    kind: ConstraintKind,
    h: Vec<f64>,
    slabs: Vec<Slab>,
    pins: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Projection {
    pub state: Vec<f64>,
    pub sweeps: usize,
    pub max_violation: f64,
    pub last_move: f64,
}

pub const DEFAULT_PROJECTION_TOL: f64 = 1e-10;

impl ConstraintSet {
    pub fn k_t(pairs: &PairTable, weight: &WeightField, t: f64) -> Result<Self> {
        weight.check_time(t)?;
        let sigma = weight.sigma().eval(t);
        let slabs = pairs
            .unordered_pairs()
            .map(|(i, j)| Slab { i, j, bound: pairs.dist_pow_s(i, j) / (weight.spatial(i, j) * sigma) })
            .collect();
        Ok(Self::from_parts(ConstraintKind::Kt { t }, pairs.weights().to_vec(), slabs, Vec::new()))
    }

    pub fn k_inf(pairs: &PairTable) -> Self {
        let slabs = pairs
            .unordered_pairs()
            .map(|(i, j)| Slab { i, j, bound: pairs.dist_pow_s(i, j) })
            .collect();
        Self::from_parts(ConstraintKind::Kinf, pairs.weights().to_vec(), slabs, Vec::new())
    }

    pub fn o_squared(pairs: &PairTable, mask: &SubdomainMask) -> Self {
        let slabs = pairs
            .unordered_pairs()
            .filter(|&(i, j)| mask.in_o_squared(i, j))
            .map(|(i, j)| Slab { i, j, bound: pairs.dist_pow_s(i, j) })
            .collect();
        Self::from_parts(ConstraintKind::OSquared, pairs.weights().to_vec(), slabs, Vec::new())
    }

    /// `K_{inf,O}(anchor)`: Hölder bound on `O x O`, `z = anchor` outside `O`.
    pub fn k_inf_o(pairs: &PairTable, mask: &SubdomainMask, anchor: &[f64]) -> Result<Self> {
        if anchor.len() != pairs.n() || anchor.iter().any(|x| !x.is_finite()) {
            return Err(LabError::Validation("anchor must be a finite nodal vector".into()));
        }
        let mut cs = Self::o_squared(pairs, mask);
        cs.kind = ConstraintKind::KinfO;
        cs.pins = (0..pairs.n()).filter(|&i| !mask.is_inside(i)).map(|i| (i, anchor[i])).collect();
        Ok(cs)
    }

    fn from_parts(kind: ConstraintKind, h: Vec<f64>, slabs: Vec<Slab>, pins: Vec<(usize, f64)>) -> Self {
        debug_assert!(slabs.iter().all(|s| s.bound > 0.0 && s.bound.is_finite()));
        Self { kind, h, slabs, pins }
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn slabs(&self) -> &[Slab] {
        &self.slabs
    }

    pub fn pins(&self) -> &[(usize, f64)] {
        &self.pins
    }

    pub fn weights(&self) -> &[f64] {
        &self.h
    }

    /// Smallest slack `bound - |u_i - u_j|` over all slabs, scaled by the
    /// bound (negative when violated). `+inf` when there are no slabs.
    pub fn min_relative_margin(&self, u: &[f64]) -> f64 {
        self.slabs
            .iter()
            .map(|s| (s.bound - (u[s.i] - u[s.j]).abs()) / s.bound)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute excess `|u_i - u_j| - bound` or pin mismatch, floored at 0.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let slab = self
            .slabs
            .iter()
            .map(|s| (u[s.i] - u[s.j]).abs() - s.bound)
            .fold(0.0, f64::max);
        let pin = self.pins.iter().map(|&(i, v)| (u[i] - v).abs()).fold(0.0, f64::max);
        slab.max(pin)
    }

    pub fn membership(&self, u: &[f64], tol: f64) -> bool {
        self.slabs
            .iter()
            .all(|s| (u[s.i] - u[s.j]).abs() <= s.bound * (1.0 + tol))
            && self.pins.iter().all(|&(i, v)| (u[i] - v).abs() <= tol * (1.0 + v.abs()))
    }

    /// h-weighted Euclidean projection by Dykstra's algorithm over the
    /// slab family. Pins act on nodes no slab touches and are applied
    /// directly. `tol` is floored at a few ulps of the largest input entry.
    pub fn project(&self, v: &[f64], tol: f64, max_iter: usize) -> Result<Projection> {
        if v.len() != self.h.len() {
            return Err(LabError::Validation("projection input has the wrong length".into()));
        }
        let mut x = v.to_vec();
        for &(i, val) in &self.pins {
            x[i] = val;
        }
        let mut incr = vec![[0.0f64; 2]; self.slabs.len()];
        let mut prev = x.clone();
        let h = &self.h;
        // below a few ulps of the input the sweeps only shuffle rounding noise
        let scale = x.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        let tol = tol.max(16.0 * f64::EPSILON * scale);
        for sweep in 1..=max_iter.max(1) {
            for (s, y) in self.slabs.iter().zip(incr.iter_mut()) {
                let a = x[s.i] + y[0];
                let b = x[s.j] + y[1];
                let diff = a - b;
                let (na, nb) = if diff.abs() > s.bound {
                    let excess = diff.abs() - s.bound;
                    let wsum = h[s.i] + h[s.j];
                    let shift = excess.copysign(diff);
                    (a - shift * h[s.j] / wsum, b + shift * h[s.i] / wsum)
                } else {
                    (a, b)
                };
                y[0] = a - na;
                y[1] = b - nb;
                x[s.i] = na;
                x[s.j] = nb;
            }
            let moved = x.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let viol = self.max_violation(&x);
            if viol <= tol && moved <= tol {
                return Ok(Projection { state: x, sweeps: sweep, max_violation: viol, last_move: moved });
            }
            prev.copy_from_slice(&x);
        }
        Err(LabError::NonConvergence {
            what: "Dykstra projection".into(),
            iterations: max_iter,
            residual: self.max_violation(&x),
        })
    }
}

/// Largest `<w, v - u>_h` over sampled feasible `v`; the variational
/// inequality `<w, v - u>_h <= 0` holds up to the returned value.
///
/// Test vectors are projections of `u + tau w` for a ladder of `tau`, plus
/// projections of random Gaussian perturbations of `u` at random scales.
/// Probes stay within a tenth of the state's scale: the set is a polyhedron,
/// so any violating direction is already feasible near `u`, and Dykstra's
/// sweep count grows with the distance to the set.
pub fn vi_residual(
    cs: &ConstraintSet,
    u: &[f64],
    w: &[f64],
    samples: usize,
    seed: u64,
    proj_tol: f64,
    proj_max_iter: usize,
) -> Result<f64> {
    let h = cs.weights();
    let n = u.len();
    if w.len() != n || h.len() != n {
        return Err(LabError::Validation("vi_residual inputs disagree on length".into()));
    }
    let wnorm = dot_h(w, w, h).sqrt();
    let scale = 1.0 + u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut best: f64 = 0.0;
    let mut probe = |v: Vec<f64>| -> Result<()> {
        let p = cs.project(&v, proj_tol, proj_max_iter)?;
        let d: Vec<f64> = p.state.iter().zip(u).map(|(a, b)| a - b).collect();
        best = best.max(dot_h(w, &d, h));
        Ok(())
    };
    if wnorm > 0.0 {
        for tau in [1e-4, 1e-3, 1e-2, 1e-1] {
            let step = tau * scale / wnorm;
            probe(u.iter().zip(w).map(|(a, b)| a + step * b).collect())?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let r = scale * 10f64.powf(rng.random_range(-4.0..-1.0));
        let v = u
            .iter()
            .map(|a| {
                let z: f64 = rng.sample(StandardNormal);
                a + r * z
            })
            .collect();
        probe(v)?;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TimeFactor;
    use crate::grid::{build_interval_grid, build_mask, build_pair_table};

    fn two_node() -> Arc<PairTable> {
        Arc::new(build_pair_table(&build_interval_grid(2, 0.0, 1.0).unwrap(), 0.5).unwrap())
    }

    fn unit_weight(n: usize) -> Arc<WeightField> {
        Arc::new(WeightField::uniform(n, 1.0, TimeFactor::Constant { value: 1.0 }, 1.0, 1.0).unwrap())
    }

    #[test]
    fn constants_have_zero_energy_and_gradient() {
        let pt = two_node();
        let spec = FunctionalSpec::weighted_constant_p(pt, 3.0, unit_weight(2), KernelScaling::Gagliardo).unwrap();
        assert_eq!(spec.eval(&[2.0, 2.0], 0.0).unwrap(), 0.0);
        assert_eq!(spec.grad(&[2.0, 2.0], 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_node_energy_and_gradient() {
        let pt = two_node();
        let spec = FunctionalSpec::weighted_constant_p(pt, 2.0, unit_weight(2), KernelScaling::Gagliardo).unwrap();
        assert!((spec.eval(&[0.0, 1.0], 0.0).unwrap() - 1.0).abs() < 1e-14);
        let g = spec.grad(&[0.0, 1.0], 0.0).unwrap();
        assert!((g[0] + 2.0).abs() < 1e-14 && (g[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn indicator_outside_is_infinite() {
        let g = build_interval_grid(2, 0.0, 2.0).unwrap();
        let pt = Arc::new(build_pair_table(&g, 0.5).unwrap());
        let spec = FunctionalSpec::indicator_kinf(pt);
        assert_eq!(spec.eval(&[0.0, 1.2], 0.0).unwrap(), f64::INFINITY);
        assert_eq!(spec.eval(&[0.0, 1.0], 0.0).unwrap(), 0.0);
        assert!(spec.grad(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn membership_boundary_cases() {
        let g = build_interval_grid(2, 0.0, 2.0).unwrap();
        let pt = build_pair_table(&g, 0.5).unwrap();
        let cs = ConstraintSet::k_inf(&pt);
        assert!(cs.membership(&[4.0, 4.0], 1e-9));
        assert!(cs.membership(&[0.0, 1.0], 1e-9));
        assert!(!cs.membership(&[0.0, 1.01], 1e-9));
    }

    #[test]
    fn projection_examples() {
        // d = 1 so bound = 1 for any s
        let g = build_interval_grid(2, 0.0, 2.0).unwrap();
        let pt = build_pair_table(&g, 0.3).unwrap();
        let cs = ConstraintSet::k_inf(&pt);
        let p = cs.project(&[0.0, 2.0], 1e-12, 100).unwrap();
        assert!((p.state[0] - 0.5).abs() < 1e-15 && (p.state[1] - 1.5).abs() < 1e-15);

        let feasible = [0.2, 0.7];
        assert_eq!(cs.project(&feasible, 1e-12, 100).unwrap().state, feasible.to_vec());

        let uneven = ConstraintSet::from_parts(
            ConstraintKind::Kinf,
            vec![1.0, 3.0],
            vec![Slab { i: 0, j: 1, bound: 1.0 }],
            vec![],
        );
        let p = uneven.project(&[0.0, 2.0], 1e-12, 100).unwrap();
        assert!((p.state[0] - 0.75).abs() < 1e-15 && (p.state[1] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn projection_reports_non_convergence() {
        let g = build_interval_grid(8, 0.0, 1.0).unwrap();
        let pt = build_pair_table(&g, 0.5).unwrap();
        let cs = ConstraintSet::k_inf(&pt);
        let v: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 5.0 } else { -5.0 }).collect();
        assert!(matches!(cs.project(&v, 1e-14, 1), Err(LabError::NonConvergence { .. })));
    }

    #[test]
    fn k_inf_o_pins_outside_nodes() {
        let g = build_interval_grid(8, 0.0, 1.0).unwrap();
        let pt = build_pair_table(&g, 0.5).unwrap();
        let mask = build_mask(&g, |x| x[0] > 0.25 && x[0] < 0.75, true).unwrap();
        let anchor: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let cs = ConstraintSet::k_inf_o(&pt, &mask, &anchor).unwrap();
        let v = vec![3.0; 8];
        let p = cs.project(&v, 1e-12, 1000).unwrap();
        for i in [0, 1, 6, 7] {
            assert_eq!(p.state[i], anchor[i]);
        }
        assert!(cs.membership(&p.state, 1e-9));
    }

    #[test]
    fn vi_residual_flags_interior_force() {
        let g = build_interval_grid(3, 0.0, 1.0).unwrap();
        let pt = build_pair_table(&g, 0.5).unwrap();
        let cs = ConstraintSet::k_inf(&pt);
        let u = [0.0, 0.01, 0.0];
        assert_eq!(vi_residual(&cs, &u, &[0.0; 3], 20, 7, 1e-12, 10_000).unwrap(), 0.0);
        let r = vi_residual(&cs, &u, &[1.0, 0.0, 0.0], 20, 7, 1e-12, 10_000).unwrap();
        assert!(r > 1e-3, "residual {r}");
    }

    #[test]
    fn vi_residual_vanishes_at_projection() {
        // u = P(v) satisfies <v - u, z - u>_h <= 0 for all feasible z
        let g = build_interval_grid(6, 0.0, 1.0).unwrap();
        let pt = build_pair_table(&g, 0.5).unwrap();
        let cs = ConstraintSet::k_inf(&pt);
        let v = [2.0, -1.0, 0.5, 1.5, -2.0, 0.0];
        let u = cs.project(&v, 1e-13, 100_000).unwrap().state;
        let w: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - b).collect();
        let r = vi_residual(&cs, &u, &w, 50, 3, 1e-13, 100_000).unwrap();
        assert!(r <= 1e-9, "residual {r}");
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let g = build_interval_grid(5, 0.0, 1.0).unwrap();
        let pt = Arc::new(build_pair_table(&g, 0.5).unwrap());
        let p = Arc::new(ExponentField::from_fn(&g, |x, y| 2.5 + (x[0] - y[0]).abs()).unwrap());
        let spec = FunctionalSpec::variable_p(pt, p, KernelScaling::Gagliardo).unwrap();
        let u = [0.1, -0.3, 0.4, 0.0, 0.25];
        let hm = spec.hessian(&u, 0.0, 1e-8).unwrap();
        let eps = 1e-6;
        for k in 0..5 {
            let mut up = u;
            let mut dn = u;
            up[k] += eps;
            dn[k] -= eps;
            let gp = spec.grad(&up, 0.0).unwrap();
            let gm = spec.grad(&dn, 0.0).unwrap();
            for i in 0..5 {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!((fd - hm[(i, k)]).abs() <= 1e-5 * (1.0 + hm[(i, k)].abs()));
            }
        }
    }
}
