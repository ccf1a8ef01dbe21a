//! Variable-exponent calculus on the discrete pair space.
//!
//! The modular is `rho(u) = sum_{i != j} (|u_i - u_j| / d_ij^s)^{p_ij} mu_ij`
//! and the Luxemburg seminorm is the scale `lambda` with `rho(u/lambda) = 1`.
//! Every power is evaluated as `exp(p ln q + ln mu)` so that large exponents
//! fail loudly instead of saturating to infinity.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::fields::ExponentField;
use crate::grid::PairTable;
use crate::sum::{compensated_sum, NeumaierSum};

/// Largest finite value of `ln(term)` that can be exponentiated.
pub(crate) const LN_MAX: f64 = 709.782712893384;

/// `q^p * exp(ln_w)` with the overflow guard. `q = 0` contributes 0.
#[inline]
pub(crate) fn guarded_power(i: usize, j: usize, q: f64, p: f64, ln_w: f64) -> Result<f64> {
    if q == 0.0 {
        return Ok(0.0);
    }
    let ln_term = p * q.ln() + ln_w;
    if ln_term > LN_MAX || ln_term.is_nan() {
        return Err(LabError::Overflow { i, j, quotient: q, exponent: p });
    }
    Ok(ln_term.exp())
}

fn check_finite(u: &[f64]) -> Result<()> {
    if let Some(k) = u.iter().position(|x| !x.is_finite()) {
        return Err(LabError::Numeric(format!("state entry {k} is not finite")));
    }
    Ok(())
}

/// `max_{i != j} |u_i - u_j| / d_ij^s`.
pub fn holder_sup(u: &[f64], pt: &PairTable) -> Result<f64> {
    check_finite(u)?;
    let mut best: f64 = 0.0;
    for (i, j) in pt.unordered_pairs() {
        best = best.max((u[i] - u[j]).abs() / pt.dist_pow_s(i, j));
    }
    Ok(best)
}

/// Hölder quotient `(u_i - u_j) / d_ij^s`.
#[inline]
pub fn holder_quotient(u: &[f64], pt: &PairTable, i: usize, j: usize) -> f64 {
    (u[i] - u[j]) / pt.dist_pow_s(i, j)
}

/// Modular of `u / lambda` restricted to pairs accepted by `keep`, with
/// `ln_lambda = ln(lambda)`.
pub fn modular_scaled_where<F>(
    u: &[f64],
    pt: &PairTable,
    p: &ExponentField,
    ln_lambda: f64,
    keep: F,
) -> Result<f64>
where
    F: Fn(usize, usize) -> bool,
{
    check_finite(u)?;
    let n = pt.n();
    let mut acc = NeumaierSum::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if !keep(i, j) {
                continue;
            }
            let q = (u[i] - u[j]).abs() / pt.dist_pow_s(i, j);
            if q == 0.0 {
                continue;
            }
            let pij = p.get(i, j);
            // both orderings carry the same term
            let t = guarded_power(i, j, q, pij, pt.mu(i, j).ln() + std::f64::consts::LN_2 - pij * ln_lambda)?;
            acc.add(t);
        }
    }
    let v = acc.value();
    if !v.is_finite() {
        return Err(LabError::Numeric("modular sum overflowed".into()));
    }
    Ok(v)
}

/// `rho_{s,p}(u)` over all off-diagonal pairs.
pub fn modular(u: &[f64], pt: &PairTable, p: &ExponentField) -> Result<f64> {
    modular_scaled_where(u, pt, p, 0.0, |_, _| true)
}

pub fn modular_where<F: Fn(usize, usize) -> bool>(
    u: &[f64],
    pt: &PairTable,
    p: &ExponentField,
    keep: F,
) -> Result<f64> {
    modular_scaled_where(u, pt, p, 0.0, keep)
}

pub const DEFAULT_BISECTION_TOL: f64 = 1e-10;

/// Luxemburg seminorm over all pairs.
pub fn luxemburg(u: &[f64], pt: &PairTable, p: &ExponentField, tol: f64) -> Result<f64> {
    luxemburg_where(u, pt, p, tol, |_, _| true)
}

/// Solve `rho(u / lambda) = 1` by bisection on `ln lambda`.
pub fn luxemburg_where<F>(u: &[f64], pt: &PairTable, p: &ExponentField, tol: f64, keep: F) -> Result<f64>
where
    F: Fn(usize, usize) -> bool + Copy,
{
    if !(tol > 0.0) {
        return Err(LabError::Config(format!("bisection tolerance must be positive, got {tol}")));
    }
    if modular_where(u, pt, p, keep)? == 0.0 {
        return Ok(0.0);
    }
    // overflow at a probe means rho(u/lambda) is astronomically above 1
    let rho = |ln_l: f64| -> Result<f64> {
        match modular_scaled_where(u, pt, p, ln_l, keep) {
            Ok(v) => Ok(v),
            Err(LabError::Overflow { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let step = std::f64::consts::LN_2;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let r0 = rho(0.0)?;
    if r0 > 1.0 {
        let mut k = 0;
        loop {
            hi += step;
            let r = rho(hi)?;
            if r <= 1.0 {
                break;
            }
            lo = hi;
            k += 1;
            if k > 4000 {
                return Err(LabError::Numeric("luxemburg bracket failed (growing)".into()));
            }
        }
    } else {
        let mut k = 0;
        loop {
            lo -= step;
            let r = rho(lo)?;
            if r >= 1.0 {
                break;
            }
            hi = lo;
            k += 1;
            if k > 4000 {
                return Err(LabError::Numeric("luxemburg bracket failed (shrinking)".into()));
            }
        }
    }
    // invariant: rho(lo) >= 1 >= rho(hi)
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let r = rho(mid)?;
        if (r - 1.0).abs() <= tol {
            return Ok(mid.exp());
        }
        if r > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            return Ok(mid.exp());
        }
    }
    Err(LabError::Numeric("luxemburg bisection did not terminate".into()))
}

/// Outcome of the norm-modular comparison for one state.
#[derive(Debug, Clone, Serialize)]
pub struct ModularReport {
    pub rho: f64,
    pub luxemburg: f64,
    pub p_minus: f64,
    pub p_plus: f64,
    /// `|rho(u / ||u||) - 1|`.
    pub unit_residual: f64,
    /// Item 1: `rho(u/||u||) = 1`; item 2: bounds for `||u|| >= 1`;
    /// item 3: bounds for `||u|| <= 1`.
    pub bounds_ok: [bool; 3],
}

pub const NORM_MODULAR_REL_TOL: f64 = 1e-9;

/// Check the three norm-modular relations at relative tolerance 1e-9.
pub fn check_norm_modular(u: &[f64], pt: &PairTable, p: &ExponentField, tol: f64) -> Result<ModularReport> {
    let rho = modular(u, pt, p)?;
    let lux = luxemburg(u, pt, p, tol)?;
    let (pm, pp) = (p.p_minus(), p.p_plus());
    if lux == 0.0 {
        return Ok(ModularReport {
            rho,
            luxemburg: 0.0,
            p_minus: pm,
            p_plus: pp,
            unit_residual: 0.0,
            bounds_ok: [true, true, rho == 0.0],
        });
    }
    let unit_residual = (modular_scaled_where(u, pt, p, lux.ln(), |_, _| true)? - 1.0).abs();
    let le = |a: f64, b: f64| a <= b * (1.0 + NORM_MODULAR_REL_TOL) + f64::MIN_POSITIVE;
    let item1 = unit_residual <= NORM_MODULAR_REL_TOL.max(tol);
    let item2 = lux < 1.0 || (le(lux.powf(pm), rho) && le(rho, lux.powf(pp)));
    let item3 = lux > 1.0 || (le(lux.powf(pp), rho) && le(rho, lux.powf(pm)));
    Ok(ModularReport {
        rho,
        luxemburg: lux,
        p_minus: pm,
        p_plus: pp,
        unit_residual,
        bounds_ok: [item1, item2, item3],
    })
}

/// Single-integral modular `sum_i |u_i / lambda|^{eta_i} h_i`.
fn node_modular(u: &[f64], eta: &[f64], h: &[f64], ln_lambda: f64) -> Result<f64> {
    let mut acc = NeumaierSum::new();
    for i in 0..u.len() {
        let a = u[i].abs();
        if a == 0.0 {
            continue;
        }
        acc.add(guarded_power(i, i, a, eta[i], h[i].ln() - eta[i] * ln_lambda)?);
    }
    Ok(acc.value())
}

/// Luxemburg norm of `L^{eta(.)}` on the nodes.
pub fn node_luxemburg(u: &[f64], eta: &[f64], h: &[f64], tol: f64) -> Result<f64> {
    if node_modular(u, eta, h, 0.0)? == 0.0 {
        return Ok(0.0);
    }
    let rho = |ln_l: f64| -> Result<f64> {
        match node_modular(u, eta, h, ln_l) {
            Ok(v) => Ok(v),
            Err(LabError::Overflow { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut guard = 0;
    while rho(lo)? < 1.0 {
        lo -= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(LabError::Numeric("node luxemburg bracket failed".into()));
        }
    }
    while rho(hi)? > 1.0 {
        hi += 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(LabError::Numeric("node luxemburg bracket failed".into()));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let r = rho(mid)?;
        if (r - 1.0).abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            return Ok(mid.exp());
        }
        if r > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(LabError::Numeric("node luxemburg bisection did not terminate".into()))
}

/// Both sides of the variable-exponent Hölder inequality.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderPairing {
    pub pairing: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `|<u, v>_h| <= (1/eta- + 1/eta'-) ||u||_{eta} ||v||_{eta'}` with the
/// conjugate exponent `eta' = eta / (eta - 1)` taken pointwise.
pub fn holder_pairing(u: &[f64], v: &[f64], eta: &[f64], h: &[f64], tol: f64) -> Result<HolderPairing> {
    if let Some(k) = eta.iter().position(|&e| !(e > 1.0 && e.is_finite())) {
        return Err(LabError::Domain(format!("exponent {} at node {k} must exceed 1", eta[k])));
    }
    let conj: Vec<f64> = eta.iter().map(|e| e / (e - 1.0)).collect();
    let eta_minus = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let conj_minus = conj.iter().copied().fold(f64::INFINITY, f64::min);
    let pairing = compensated_sum(u.iter().zip(v).zip(h).map(|((a, b), w)| a * b * w)).abs();
    let bound = (1.0 / eta_minus + 1.0 / conj_minus)
        * node_luxemburg(u, eta, h, tol)?
        * node_luxemburg(v, &conj, h, tol)?;
    // the norms carry bisection error of order tol / eta
    let holds = pairing <= bound * (1.0 + 10.0 * tol) + 1e-300;
    Ok(HolderPairing { pairing, bound, holds })
}

pub fn holder_pairing_check(u: &[f64], v: &[f64], eta: &[f64], h: &[f64], tol: f64) -> Result<bool> {
    Ok(holder_pairing(u, v, eta, h, tol)?.holds)
}
