//! Exponent, weight, forcing and initial-data fields on a grid.

use std::f64::consts::PI;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Grid, Point, SubdomainMask};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentKind {
    Constant,
    Tabulated,
    PartialBlowup,
}

/// Extrema of a partial blow-up field split by pair class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialExtrema {
    /// Extrema of the fixed exponent on pairs outside `O x O`.
    pub kappa_minus: f64,
    pub kappa_plus: f64,
    /// Extrema of the growing exponent on `O x O`.
    pub inner_minus: f64,
    pub inner_plus: f64,
}

/// Symmetric exponent table `p_ij > 1` over node pairs.
///
/// Extrema are taken over off-diagonal pairs, the only ones entering any
/// pair sum.
#[derive(Debug, Clone, Serialize)]
pub struct ExponentField {
    kind: ExponentKind,
    n: usize,
    values: Vec<f64>,
    p_minus: f64,
    p_plus: f64,
    partial: Option<PartialExtrema>,
}

impl ExponentField {
    pub fn constant(n: usize, p: f64) -> Result<Self> {
        Self::build(ExponentKind::Constant, n, vec![p; n * n], None)
    }

    /// Tabulate `p(x, y)` on the grid. `profile` must be symmetric.
    pub fn from_fn<F>(grid: &Grid, profile: F) -> Result<Self>
    where
        F: Fn(Point, Point) -> f64,
    {
        let n = grid.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = profile(grid.node(i), grid.node(j));
            }
        }
        Self::tabulated(n, values)
    }

    /// Row-major `n x n` table; rejected unless symmetric within 1e-12.
    pub fn tabulated(n: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(ExponentKind::Tabulated, n, values, None)
    }

    /// Load `(i, j, value)` rows. Missing mirror entries are filled from the
    /// given one; present mirrors must agree within 1e-12.
    pub fn load_csv<R: Read>(reader: R, n: usize) -> Result<Self> {
        let values = load_symmetric_table(reader, n)?;
        Self::tabulated(n, values)
    }

    fn build(
        kind: ExponentKind,
        n: usize,
        values: Vec<f64>,
        partial: Option<PartialExtrema>,
    ) -> Result<Self> {
        if n < 2 || values.len() != n * n {
            return Err(LabError::Validation(format!(
                "exponent table must be {n}x{n} with n >= 2, got {} entries",
                values.len()
            )));
        }
        let mut p_minus = f64::INFINITY;
        let mut p_plus = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                let p = values[i * n + j];
                if !p.is_finite() {
                    return Err(LabError::Validation(format!("exponent at ({i},{j}) is not finite")));
                }
                if (p - values[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(LabError::Validation(format!(
                        "exponent table not symmetric at ({i},{j}): {p} vs {}",
                        values[j * n + i]
                    )));
                }
                if i != j {
                    p_minus = p_minus.min(p);
                    p_plus = p_plus.max(p);
                }
            }
        }
        if p_minus <= 1.0 {
            return Err(LabError::Validation(format!("exponent minimum {p_minus} must exceed 1")));
        }
        let mut values = values;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = values[i * n + j];
                values[j * n + i] = v;
            }
        }
        Ok(Self { kind, n, values, p_minus, p_plus, partial })
    }

    pub fn kind(&self) -> ExponentKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p_minus(&self) -> f64 {
        self.p_minus
    }

    pub fn p_plus(&self) -> f64 {
        self.p_plus
    }

    pub fn is_constant(&self) -> bool {
        self.p_minus == self.p_plus
    }

    pub fn partial_extrema(&self) -> Option<PartialExtrema> {
        self.partial
    }

    /// `(p+)^(1/p-)`, which must tend to 1 along a blow-up sequence.
    pub fn spread_ratio(&self) -> f64 {
        self.p_plus.powf(1.0 / self.p_minus)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let kind = if self.kind == ExponentKind::Constant {
            ExponentKind::Constant
        } else {
            ExponentKind::Tabulated
        };
        Self::build(kind, self.n, self.values.iter().map(|p| p * factor).collect(), None)
    }

    /// Extrema restricted to pairs accepted by `keep`.
    pub fn extrema_where<F: Fn(usize, usize) -> bool>(&self, keep: F) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && keep(i, j) {
                    let p = self.get(i, j);
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupMode {
    FullBlowup,
    PartialBlowup,
}

/// What the validator found on a finite exponent sequence.
#[derive(Debug, Clone, Serialize)]
pub struct SequenceReport {
    /// Minimum of the growing part per stage (`p_j-` or `kappa_j-`).
    pub growing_minus: Vec<f64>,
    /// `(p_j+)^(1/p_j-)` (or the `kappa_j` analogue) per stage.
    pub spread_ratio: Vec<f64>,
    pub minus_increasing: bool,
    pub ratio_decreasing: bool,
    /// Last spread ratio within `epsilon` of 1.
    pub final_ratio_within_epsilon: bool,
    pub epsilon: f64,
    /// All divergence checks pass and there are at least two stages.
    pub diverging: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentSequence {
    pub mode: BlowupMode,
    pub fields: Vec<ExponentField>,
    pub schedule: Vec<f64>,
    pub report: SequenceReport,
}

impl ExponentSequence {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(LabError::Config("empty blow-up schedule".into()));
    }
    if schedule.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(LabError::Config("schedule factors must be positive and finite".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Config("schedule must be strictly increasing".into()));
    }
    Ok(())
}

fn sequence_report(minus: Vec<f64>, ratio: Vec<f64>, epsilon: f64) -> SequenceReport {
    let minus_increasing = minus.windows(2).all(|w| w[1] > w[0]);
    let ratio_decreasing = ratio.windows(2).all(|w| w[1] < w[0]);
    let final_ratio_within_epsilon = ratio.last().is_some_and(|r| (r - 1.0).abs() <= epsilon);
    let diverging = minus.len() >= 2 && minus_increasing && ratio_decreasing;
    SequenceReport {
        growing_minus: minus,
        spread_ratio: ratio,
        minus_increasing,
        ratio_decreasing,
        final_ratio_within_epsilon,
        epsilon,
        diverging,
    }
}

/// `p_j = schedule_j * base` on every pair.
pub fn make_full_blowup_sequence(
    base: &ExponentField,
    schedule: &[f64],
    epsilon: f64,
) -> Result<ExponentSequence> {
    check_schedule(schedule)?;
    let fields = schedule
        .iter()
        .map(|&c| base.scaled(c))
        .collect::<Result<Vec<_>>>()?;
    let minus = fields.iter().map(|f| f.p_minus()).collect();
    let ratio = fields.iter().map(|f| f.spread_ratio()).collect();
    Ok(ExponentSequence {
        mode: BlowupMode::FullBlowup,
        fields,
        schedule: schedule.to_vec(),
        report: sequence_report(minus, ratio, epsilon),
    })
}

/// `p_j = schedule_j * inner_base` on `O x O`, `kappa` elsewhere.
pub fn make_partial_blowup_sequence(
    mask: &SubdomainMask,
    kappa: &ExponentField,
    inner_base: &ExponentField,
    schedule: &[f64],
    epsilon: f64,
) -> Result<ExponentSequence> {
    check_schedule(schedule)?;
    let n = kappa.n();
    if mask.len() != n || inner_base.n() != n {
        return Err(LabError::Config("mask and exponent fields disagree on node count".into()));
    }
    if !mask.is_mixed() {
        return Err(LabError::Config(
            "partial blow-up needs nonempty O^2 and complement pair classes".into(),
        ));
    }
    let (kappa_minus, kappa_plus) = kappa
        .extrema_where(|i, j| !mask.in_o_squared(i, j))
        .expect("complement pairs checked nonempty");
    let mut fields = Vec::with_capacity(schedule.len());
    let mut minus = Vec::with_capacity(schedule.len());
    let mut ratio = Vec::with_capacity(schedule.len());
    for &c in schedule {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = if mask.in_o_squared(i, j) {
                    c * inner_base.get(i, j)
                } else {
                    kappa.get(i, j)
                };
            }
        }
        let mut field = ExponentField::build(ExponentKind::PartialBlowup, n, values, None)?;
        let (inner_minus, inner_plus) = field
            .extrema_where(|i, j| mask.in_o_squared(i, j))
            .expect("O^2 pairs checked nonempty");
        field.partial = Some(PartialExtrema { kappa_minus, kappa_plus, inner_minus, inner_plus });
        minus.push(inner_minus);
        ratio.push(inner_plus.powf(1.0 / inner_minus));
        fields.push(field);
    }
    Ok(ExponentSequence {
        mode: BlowupMode::PartialBlowup,
        fields,
        schedule: schedule.to_vec(),
        report: sequence_report(minus, ratio, epsilon),
    })
}

/// Closed-form positive time factor of the separable weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeFactor {
    Constant { value: f64 },
    /// `offset + slope * t`
    Affine { offset: f64, slope: f64 },
    /// `mean + amplitude * sin(omega t + phase)` with `mean > |amplitude|`.
    Sinusoidal { mean: f64, amplitude: f64, omega: f64, phase: f64 },
}

impl TimeFactor {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeFactor::Constant { value } => value,
            TimeFactor::Affine { offset, slope } => offset + slope * t,
            TimeFactor::Sinusoidal { mean, amplitude, omega, phase } => {
                mean + amplitude * (omega * t + phase).sin()
            }
        }
    }

    /// Exact extrema over `[0, horizon]`.
    pub fn range(&self, horizon: f64) -> (f64, f64) {
        match *self {
            TimeFactor::Constant { value } => (value, value),
            TimeFactor::Affine { .. } => {
                let (a, b) = (self.eval(0.0), self.eval(horizon));
                (a.min(b), a.max(b))
            }
            TimeFactor::Sinusoidal { mean, amplitude, omega, phase } => {
                let (mut lo, mut hi) = (self.eval(0.0), self.eval(0.0));
                let end = self.eval(horizon);
                lo = lo.min(end);
                hi = hi.max(end);
                if omega != 0.0 {
                    // critical points: omega t + phase = pi/2 + k pi
                    let (a0, a1) = {
                        let a = phase;
                        let b = omega * horizon + phase;
                        (a.min(b), a.max(b))
                    };
                    let mut k = ((a0 - PI / 2.0) / PI).ceil();
                    while PI / 2.0 + k * PI <= a1 {
                        let v = mean + amplitude * (PI / 2.0 + k * PI).sin();
                        lo = lo.min(v);
                        hi = hi.max(v);
                        k += 1.0;
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Positivity on the whole horizon follows from the closed form.
    fn certify_positive(&self, horizon: f64) -> Result<()> {
        let ok = match *self {
            TimeFactor::Sinusoidal { mean, amplitude, .. } => mean > amplitude.abs(),
            _ => self.range(horizon).0 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Validation(format!(
                "time factor {self:?} is not positive on [0, {horizon}]"
            )))
        }
    }
}

/// Separable weight `A(x_i, x_j, t) = a_ij * sigma(t)` with `0 < A <= a0`.
#[derive(Debug, Clone, Serialize)]
pub struct WeightField {
    n: usize,
    a: Vec<f64>,
    sigma: TimeFactor,
    a0: f64,
    horizon: f64,
}

impl WeightField {
    pub fn new(n: usize, a: Vec<f64>, sigma: TimeFactor, a0: f64, horizon: f64) -> Result<Self> {
        if a.len() != n * n {
            return Err(LabError::Validation("weight table has the wrong size".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(LabError::Validation(format!("horizon must be positive, got {horizon}")));
        }
        for i in 0..n {
            for j in 0..n {
                let v = a[i * n + j];
                if i != j && !(v > 0.0 && v.is_finite()) {
                    return Err(LabError::Validation(format!("weight a({i},{j}) = {v} must be positive")));
                }
                if (v - a[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(LabError::Validation(format!("weight table not symmetric at ({i},{j})")));
                }
            }
        }
        sigma.certify_positive(horizon)?;
        let a_max = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j])
            .fold(0.0, f64::max);
        let sigma_max = sigma.range(horizon).1;
        if a_max * sigma_max > a0 * (1.0 + 1e-12) {
            return Err(LabError::Validation(format!(
                "weight bound violated: max a * max sigma = {} > a0 = {a0}",
                a_max * sigma_max
            )));
        }
        Ok(Self { n, a, sigma, a0, horizon })
    }

    pub fn uniform(n: usize, a: f64, sigma: TimeFactor, a0: f64, horizon: f64) -> Result<Self> {
        Self::new(n, vec![a; n * n], sigma, a0, horizon)
    }

    pub fn load_csv<R: Read>(reader: R, n: usize, sigma: TimeFactor, a0: f64, horizon: f64) -> Result<Self> {
        let a = load_symmetric_table(reader, n)?;
        Self::new(n, a, sigma, a0, horizon)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn sigma(&self) -> TimeFactor {
        self.sigma
    }

    #[inline]
    pub fn spatial(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    /// `a_ij * sigma(t)`; `t` must lie in `[0, T]`.
    pub fn weight_eval(&self, i: usize, j: usize, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.spatial(i, j) * self.sigma.eval(t))
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(LabError::Domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// `A(., ., 0) <= A(., ., T)`, required by the periodic blow-up experiments.
    pub fn periodic_hypothesis_holds(&self) -> bool {
        self.sigma.eval(0.0) <= self.sigma.eval(self.horizon)
    }

    /// `sigma` takes its minimum at the returned time on `[0, T]`.
    pub fn sigma_min(&self) -> f64 {
        self.sigma.range(self.horizon).0
    }

    pub fn is_time_constant(&self) -> bool {
        match self.sigma {
            TimeFactor::Constant { .. } => true,
            TimeFactor::Affine { slope, .. } => slope == 0.0,
            TimeFactor::Sinusoidal { amplitude, omega, .. } => amplitude == 0.0 || omega == 0.0,
        }
    }
}

/// Time dependence of a separable forcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// `offset + amplitude * sin(omega t + phase)`
    Sinusoid { offset: f64, amplitude: f64, omega: f64, phase: f64 },
    /// Indicator of `[start, end)`.
    Pulse { start: f64, end: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Sinusoid { offset, amplitude, omega, phase } => {
                offset + amplitude * (omega * t + phase).sin()
            }
            TimeProfile::Pulse { start, end } => {
                if t >= start && t < end {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact integral over `[t0, t1]`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            TimeProfile::Constant => t1 - t0,
            TimeProfile::Sinusoid { offset, amplitude, omega, phase } => {
                let base = offset * (t1 - t0);
                if omega == 0.0 {
                    base + amplitude * phase.sin() * (t1 - t0)
                } else {
                    base - amplitude / omega * ((omega * t1 + phase).cos() - (omega * t0 + phase).cos())
                }
            }
            TimeProfile::Pulse { start, end } => (t1.min(end) - t0.max(start)).max(0.0),
        }
    }
}

/// Forcing `f(x_i, t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Forcing {
    Zero,
    /// `space_i * profile(t)`
    Separable { space: Vec<f64>, profile: TimeProfile },
    /// Samples at strictly increasing `times`, linear in between and held
    /// constant outside.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl Forcing {
    pub fn constant(space: Vec<f64>) -> Self {
        Forcing::Separable { space, profile: TimeProfile::Constant }
    }

    pub fn table(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(LabError::Validation("forcing table needs matching, nonempty samples".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Validation("forcing sample times must increase".into()));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n || v.iter().any(|x| !x.is_finite())) {
            return Err(LabError::Validation("forcing samples must be finite and equal length".into()));
        }
        Ok(Forcing::Table { times, values })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::Separable { space, .. } => space.iter().all(|&x| x == 0.0),
            Forcing::Table { values, .. } => values.iter().flatten().all(|&x| x == 0.0),
        }
    }

    pub fn is_time_constant(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::Separable { profile, .. } => matches!(profile, TimeProfile::Constant),
            Forcing::Table { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Forcing::Zero => Ok(()),
            Forcing::Separable { space, .. } => {
                if space.len() != n || space.iter().any(|x| !x.is_finite()) {
                    Err(LabError::Validation("forcing profile must be finite with one value per node".into()))
                } else {
                    Ok(())
                }
            }
            Forcing::Table { values, .. } => {
                if values[0].len() != n {
                    Err(LabError::Validation("forcing table width differs from node count".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn at(&self, t: f64, n: usize) -> Vec<f64> {
        match self {
            Forcing::Zero => vec![0.0; n],
            Forcing::Separable { space, profile } => {
                let c = profile.eval(t);
                space.iter().map(|x| x * c).collect()
            }
            Forcing::Table { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0].clone()
                } else if k == times.len() {
                    values[k - 1].clone()
                } else {
                    let (t0, t1) = (times[k - 1], times[k]);
                    let w = (t - t0) / (t1 - t0);
                    values[k - 1]
                        .iter()
                        .zip(&values[k])
                        .map(|(a, b)| a + w * (b - a))
                        .collect()
                }
            }
        }
    }

    /// Mean of `f` over `[t0, t1]`, exact for every variant.
    pub fn average(&self, t0: f64, t1: f64, n: usize) -> Vec<f64> {
        let len = t1 - t0;
        if len <= 0.0 {
            return self.at(t1, n);
        }
        match self {
            Forcing::Zero => vec![0.0; n],
            Forcing::Separable { space, profile } => {
                let c = profile.integral(t0, t1) / len;
                space.iter().map(|x| x * c).collect()
            }
            Forcing::Table { times, .. } => {
                // piecewise linear: integrate exactly by trapezoids on the
                // union of sample times and the interval ends
                let mut knots = vec![t0];
                knots.extend(times.iter().copied().filter(|&s| s > t0 && s < t1));
                knots.push(t1);
                let mut acc = vec![0.0; n];
                for w in knots.windows(2) {
                    let (fa, fb) = (self.at(w[0], n), self.at(w[1], n));
                    for i in 0..n {
                        acc[i] += 0.5 * (fa[i] + fb[i]) * (w[1] - w[0]);
                    }
                }
                acc.into_iter().map(|x| x / len).collect()
            }
        }
    }
}

/// Horizon, forcing and initial datum of one evolution problem.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemData {
    pub horizon: f64,
    pub forcing: Forcing,
    pub u0: Vec<f64>,
}

impl ProblemData {
    pub fn new(horizon: f64, forcing: Forcing, u0: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(LabError::Validation(format!("horizon must be positive, got {horizon}")));
        }
        if u0.iter().any(|x| !x.is_finite()) {
            return Err(LabError::Validation("initial datum must be finite".into()));
        }
        forcing.validate(u0.len())?;
        Ok(Self { horizon, forcing, u0 })
    }

    pub fn n(&self) -> usize {
        self.u0.len()
    }
}

fn load_symmetric_table<R: Read>(reader: R, n: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut values = vec![f64::NAN; n * n];
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(LabError::Validation(format!("expected 3 columns (i, j, value), got {}", rec.len())));
        }
        let parse_idx = |k: usize| -> Result<usize> {
            rec[k]
                .parse::<usize>()
                .map_err(|e| LabError::Validation(format!("bad index {:?}: {e}", &rec[k])))
        };
        let (i, j) = (parse_idx(0)?, parse_idx(1)?);
        let v: f64 = rec[2]
            .parse()
            .map_err(|e| LabError::Validation(format!("bad value {:?}: {e}", &rec[2])))?;
        if i >= n || j >= n {
            return Err(LabError::Validation(format!("index ({i},{j}) out of range for n = {n}")));
        }
        values[i * n + j] = v;
    }
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (values[i * n + j], values[j * n + i]);
            match (a.is_nan(), b.is_nan()) {
                (true, true) if i != j => {
                    return Err(LabError::Validation(format!("missing entry for pair ({i},{j})")));
                }
                (true, true) => {}
                (true, false) => values[i * n + j] = b,
                (false, true) => values[j * n + i] = a,
                (false, false) => {
                    if (a - b).abs() > SYMMETRY_TOL {
                        return Err(LabError::Validation(format!(
                            "table not symmetric at ({i},{j}): mismatch {:e}",
                            (a - b).abs()
                        )));
                    }
                    let m = 0.5 * (a + b);
                    values[i * n + j] = m;
                    values[j * n + i] = m;
                }
            }
        }
    }
    // diagonal entries never enter a pair sum; fill gaps with the smallest
    // off-diagonal value so the table stays finite
    let fill = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| values[i * n + j])
        .fold(f64::INFINITY, f64::min);
    for i in 0..n {
        if values[i * n + i].is_nan() {
            values[i * n + i] = fill;
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_interval_grid, build_mask};

    #[test]
    fn doubling_schedule_on_constant_base() {
        let base = ExponentField::constant(4, 2.0).unwrap();
        let seq = make_full_blowup_sequence(&base, &[2.0, 4.0, 8.0, 16.0, 32.0], 0.1).unwrap();
        assert_eq!(seq.report.growing_minus, vec![4.0, 8.0, 16.0, 32.0, 64.0]);
        let expected: Vec<f64> = [4.0f64, 8.0, 16.0, 32.0, 64.0].iter().map(|p| p.powf(1.0 / p)).collect();
        assert_eq!(seq.report.spread_ratio, expected);
        assert!((seq.report.spread_ratio[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(seq.report.diverging);
        assert!(seq.report.final_ratio_within_epsilon);
    }

    #[test]
    fn single_stage_sequence_is_not_diverging() {
        let base = ExponentField::constant(3, 2.0).unwrap();
        let seq = make_full_blowup_sequence(&base, &[1.0], 0.1).unwrap();
        assert_eq!(seq.fields[0].p_minus(), 2.0);
        assert_eq!(seq.fields[0].p_plus(), 2.0);
        assert!(!seq.report.diverging);
    }

    #[test]
    fn profiled_base_ratio_decreases() {
        let g = build_interval_grid(16, 0.0, 1.0).unwrap();
        // p in [2, 3]: p+/p- = 1.5
        let base = ExponentField::from_fn(&g, |x, y| {
            2.0 + (std::f64::consts::PI * (x[0] + y[0]) / 2.0).sin().powi(2)
        })
        .unwrap();
        assert!(base.p_plus() / base.p_minus() <= 1.5 + 1e-12);
        let seq = make_full_blowup_sequence(&base, &[1.0, 2.0, 4.0, 8.0, 16.0], 0.2).unwrap();
        assert!(seq.report.ratio_decreasing);
        assert!(seq.report.minus_increasing);
    }

    #[test]
    fn exponent_at_most_one_is_rejected() {
        let base = ExponentField::constant(3, 2.0).unwrap();
        assert!(matches!(
            make_full_blowup_sequence(&base, &[0.25, 1.0], 0.1),
            Err(LabError::Validation(_))
        ));
        assert!(make_full_blowup_sequence(&base, &[2.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn asymmetric_table_is_rejected() {
        let mut v = vec![2.0; 9];
        v[1] = 2.5;
        assert!(ExponentField::tabulated(3, v).is_err());
    }

    #[test]
    fn partial_sequence_extrema() {
        let g = build_interval_grid(8, 0.0, 1.0).unwrap();
        let mask = build_mask(&g, |x| x[0] > 0.25 && x[0] < 0.75, true).unwrap();
        let kappa = ExponentField::constant(8, 2.0).unwrap();
        let sched: Vec<f64> = (1..=4).map(|j| 2f64.powi(j)).collect();
        let seq = make_partial_blowup_sequence(&mask, &kappa, &kappa, &sched, 0.5).unwrap();
        assert_eq!(seq.report.growing_minus, vec![4.0, 8.0, 16.0, 32.0]);
        for f in &seq.fields {
            let pe = f.partial_extrema().unwrap();
            assert_eq!((pe.kappa_minus, pe.kappa_plus), (2.0, 2.0));
        }
        assert!(seq.report.diverging);

        let degenerate = make_partial_blowup_sequence(&mask, &kappa, &kappa, &[1.0], 0.5).unwrap();
        assert!(!degenerate.report.diverging);
    }

    #[test]
    fn partial_kappa_plus_is_max_over_complement() {
        let g = build_interval_grid(8, 0.0, 1.0).unwrap();
        let mask = build_mask(&g, |x| x[0] > 0.25 && x[0] < 0.75, true).unwrap();
        let kappa = ExponentField::from_fn(&g, |x, y| 2.0 + (x[0] - y[0]).abs()).unwrap();
        let unit = ExponentField::constant(8, 4.0).unwrap();
        let seq = make_partial_blowup_sequence(&mask, &kappa, &unit, &[1.0, 4.0, 16.0], 0.5).unwrap();
        let pe = seq.fields[0].partial_extrema().unwrap();
        // farthest complement pair: nodes 0 and 7, distance 7/8
        assert!((pe.kappa_plus - (2.0 + 0.875)).abs() < 1e-12);
        assert_eq!(seq.report.growing_minus, vec![4.0, 16.0, 64.0]);
    }

    #[test]
    fn partial_needs_mixed_mask() {
        let kappa = ExponentField::constant(4, 2.0).unwrap();
        let mask = SubdomainMask::from_flags(vec![false; 4]);
        assert!(matches!(
            make_partial_blowup_sequence(&mask, &kappa, &kappa, &[1.0, 2.0], 0.1),
            Err(LabError::Config(_))
        ));
    }

    #[test]
    fn weight_products() {
        let unit = WeightField::uniform(2, 1.0, TimeFactor::Constant { value: 1.0 }, 1.0, 1.0).unwrap();
        assert_eq!(unit.weight_eval(0, 1, 0.3).unwrap(), 1.0);

        let w = WeightField::new(
            2,
            vec![0.0, 0.5, 0.5, 0.0],
            TimeFactor::Affine { offset: 1.0, slope: 0.5 },
            1.0,
            1.0,
        )
        .unwrap();
        assert!((w.weight_eval(0, 1, 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(w.weight_eval(0, 1, 1.5), Err(LabError::Domain(_))));
    }

    #[test]
    fn weight_rejects_vanishing_sigma() {
        let r = WeightField::uniform(2, 1.0, TimeFactor::Affine { offset: 0.0, slope: 1.0 }, 2.0, 1.0);
        assert!(matches!(r, Err(LabError::Validation(_))));
    }

    #[test]
    fn weight_rejects_bound_violation() {
        let r = WeightField::uniform(2, 1.0, TimeFactor::Affine { offset: 1.0, slope: 1.0 }, 1.5, 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn periodic_hypothesis_gate() {
        let up = WeightField::uniform(3, 0.5, TimeFactor::Affine { offset: 1.0, slope: 0.5 }, 1.0, 1.0).unwrap();
        assert!(up.periodic_hypothesis_holds());
        let down = WeightField::uniform(3, 0.5, TimeFactor::Affine { offset: 1.5, slope: -0.5 }, 1.0, 1.0).unwrap();
        assert!(!down.periodic_hypothesis_holds());
    }

    #[test]
    fn sinusoid_range_is_exact() {
        let s = TimeFactor::Sinusoidal { mean: 2.0, amplitude: 1.0, omega: 2.0 * PI, phase: 0.0 };
        let (lo, hi) = s.range(1.0);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        let (lo, hi) = s.range(0.1);
        assert!(lo == 2.0 && (hi - s.eval(0.1)).abs() < 1e-15);
    }

    #[test]
    fn forcing_averages_are_exact() {
        let f = Forcing::Separable {
            space: vec![1.0, -2.0],
            profile: TimeProfile::Sinusoid { offset: 0.0, amplitude: 1.0, omega: 2.0 * PI, phase: 0.0 },
        };
        let avg = f.average(0.0, 1.0, 2);
        assert!(avg.iter().all(|x| x.abs() < 1e-15));

        let pulse = Forcing::Separable { space: vec![3.0], profile: TimeProfile::Pulse { start: 0.25, end: 0.5 } };
        assert!((pulse.average(0.0, 1.0, 1)[0] - 0.75).abs() < 1e-15);

        let table = Forcing::table(vec![0.0, 1.0], vec![vec![0.0], vec![2.0]]).unwrap();
        assert!((table.average(0.0, 1.0, 1)[0] - 1.0).abs() < 1e-15);
        assert!((table.at(0.25, 1)[0] - 0.5).abs() < 1e-15);
        assert_eq!(table.at(5.0, 1)[0], 2.0);
    }

    #[test]
    fn csv_loader_symmetrizes_and_checks() {
        let text = "i,j,value\n0,1,3.0\n0,2,2.5\n1,2,4.0\n";
        let f = ExponentField::load_csv(text.as_bytes(), 3).unwrap();
        assert_eq!(f.get(1, 0), 3.0);
        assert_eq!(f.p_minus(), 2.5);
        assert_eq!(f.p_plus(), 4.0);

        let bad = "i,j,value\n0,1,3.0\n1,0,3.1\n";
        assert!(ExponentField::load_csv(bad.as_bytes(), 2).is_err());
        let missing = "i,j,value\n0,1,3.0\n";
        assert!(ExponentField::load_csv(missing.as_bytes(), 3).is_err());
    }
}
