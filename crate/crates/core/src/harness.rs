//! Config ingestion, experiment dispatch and artifact persistence.
//!
//! A run writes everything through one [`ArtifactWriter`], which hashes each
//! file and lists it in `manifest.json`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::checks::{self, CheckOutcome};
use crate::energy::{ConstraintSet, FunctionalKind, FunctionalSpec, KernelScaling};
use crate::error::{LabError, Result};
use crate::fields::{
    make_full_blowup_sequence, make_partial_blowup_sequence, ExponentField, ExponentSequence, Forcing,
    ProblemData, TimeFactor, TimeProfile, WeightField,
};
use crate::flow::{
    solve_cauchy, solve_periodic, ForcingSampling, InnerMethod, PeriodicConfig, StepConfig,
};
use crate::grid::{build_interval_grid, build_mask, build_pair_table, build_rect_grid, Grid, PairTable, SubdomainMask};
use crate::limits::{
    mosco_diagnostics, run_full_blowup, run_partial_blowup, run_periodic_blowup, BlowupConfig, ConvergenceReport,
    MoscoConfig,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridBlock,
    #[serde(default)]
    pub fields: FieldsBlock,
    pub solver: SolverBlock,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Cells along x.
    pub n: usize,
    /// Cells along y when `dim = 2`; defaults to `n`.
    #[serde(default)]
    pub ny: Option<usize>,
    #[serde(default = "one")]
    pub dim: usize,
    /// `[lo, hi]` per axis; the unit interval or square by default.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    pub s: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsBlock {
    #[serde(default)]
    pub exponent: Option<ExponentSpec>,
    #[serde(default)]
    pub weight: Option<WeightSpec>,
    #[serde(default)]
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub u0: U0Spec,
    #[serde(default)]
    pub mask: Option<MaskSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExponentSpec {
    Constant { value: f64 },
    /// `base + slope * max(|x - y| - shift, 0)`
    Distance {
        base: f64,
        #[serde(default = "unit")]
        slope: f64,
        #[serde(default)]
        shift: f64,
    },
    /// CSV with columns `i, j, value`, symmetric.
    Table { path: PathBuf },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// Uniform spatial factor; ignored when `path` is set.
    #[serde(default = "unit")]
    pub a: f64,
    /// CSV with columns `i, j, value`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub a0: f64,
    #[serde(default = "unit_factor")]
    pub sigma: TimeFactor,
}

fn unit_factor() -> TimeFactor {
    TimeFactor::Constant { value: 1.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveShape {
    Sin,
    Cos,
}

/// A nodal vector.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialSpec {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `amplitude * shape(2 pi frequency x + phase)` in the first coordinate.
    Wave {
        shape: WaveShape,
        amplitude: f64,
        #[serde(default = "unit")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    Values { values: Vec<f64> },
    /// CSV with columns `node, value`.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    #[default]
    Zero,
    Separable {
        space: SpatialSpec,
        #[serde(default = "constant_profile")]
        profile: TimeProfile,
    },
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

fn constant_profile() -> TimeProfile {
    TimeProfile::Constant
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct U0Spec {
    #[serde(default)]
    pub space: SpatialSpec,
    /// Project onto the constraint set of the mode's limit problem.
    #[serde(default)]
    pub project: bool,
}

/// The box `lower < x < upper` selects `O`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Exponent on the complement pairs.
    pub kappa: ExponentSpec,
    /// Scaled by the schedule on `O x O`.
    pub inner_base: ExponentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub dt: f64,
    #[serde(default = "inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "inner_max_iter")]
    pub inner_max_iter: usize,
    #[serde(default)]
    pub method: InnerMethod,
    #[serde(default = "proj_tol")]
    pub proj_tol: f64,
    #[serde(default)]
    pub proj_max_iter: usize,
    #[serde(default)]
    pub sampling: ForcingSampling,
    #[serde(default)]
    pub periodic: PeriodicConfig,
}

fn inner_tol() -> f64 {
    StepConfig::new(1.0).inner_tol
}

fn inner_max_iter() -> usize {
    StepConfig::new(1.0).inner_max_iter
}

fn proj_tol() -> f64 {
    StepConfig::new(1.0).proj_tol
}

impl SolverBlock {
    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            dt: self.dt,
            inner_tol: self.inner_tol,
            inner_max_iter: self.inner_max_iter,
            inner_method: self.method,
            proj_tol: self.proj_tol,
            proj_max_iter: self.proj_max_iter,
            sampling: self.sampling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cauchy,
    Periodic,
    FullBlowup,
    PeriodicBlowup,
    PartialBlowup,
    Mosco,
    Validate,
}

impl Mode {
    fn label(self) -> &'static str {
        match self {
            Mode::Cauchy => "cauchy",
            Mode::Periodic => "periodic",
            Mode::FullBlowup => "full_blowup",
            Mode::PeriodicBlowup => "periodic_blowup",
            Mode::PartialBlowup => "partial_blowup",
            Mode::Mosco => "mosco",
            Mode::Validate => "validate",
        }
    }

    fn is_sequence(self) -> bool {
        matches!(self, Mode::FullBlowup | Mode::PeriodicBlowup | Mode::PartialBlowup | Mode::Mosco)
    }

    /// What the mode instantiates, in words.
    fn statement(self) -> &'static str {
        match self {
            Mode::Cauchy => "well-posedness of the subdifferential flow (single solve)",
            Mode::Periodic => "time-periodic solution of the flow via the Poincare map",
            Mode::FullBlowup => {
                "full blow-up experiment: p_j(x,y)-Laplacian flows converge to the K_inf constrained flow"
            }
            Mode::PeriodicBlowup => "periodic blow-up experiment: periodic solutions converge to a K^t periodic solution",
            Mode::PartialBlowup => {
                "partial blow-up experiment: exponents diverge on O x O only; the limit is the mixed quasi-variational problem"
            }
            Mode::Mosco => "Mosco convergence diagnostics: recovery bound, liminf inequality, divergence off K_inf",
            Mode::Validate => "invariant suite",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub mode: Mode,
    #[serde(default = "unit")]
    pub horizon: f64,
    /// Functional for `cauchy` and `periodic`; `variable_p` by default.
    #[serde(default)]
    pub functional: Option<FunctionalKind>,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Pair weight of the energies; `holder_order` for sequence modes and
    /// `gagliardo` otherwise.
    #[serde(default)]
    pub scaling: Option<KernelScaling>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_vi_samples")]
    pub vi_samples: usize,
    /// Random states for `mosco`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Time exponent of the complement distance in `partial_blowup`.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Reduced sample counts for `validate`.
    #[serde(default)]
    pub quick: bool,
}

fn default_schedule() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0, 32.0]
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_vi_samples() -> usize {
    8
}

fn default_samples() -> usize {
    100
}

fn default_sigma() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Write per-stage trajectory CSVs.
    #[serde(default = "yes")]
    pub trajectories: bool,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: default_directory(), trajectories: true }
    }
}

/// A parsed config with the text it came from and the directory relative
/// paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(Self { config, text: text.to_string(), base_dir })
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

impl ExperimentConfig {
    /// Ranges and per-mode completeness.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.n < 2 && g.dim == 1 {
            return Err(LabError::Config("grid.n must be at least 2".into()));
        }
        if g.n == 0 || g.ny == Some(0) {
            return Err(LabError::Config("grid sizes must be positive".into()));
        }
        if g.dim != 1 && g.dim != 2 {
            return Err(LabError::Config(format!("grid.dim must be 1 or 2, got {}", g.dim)));
        }
        if let Some(b) = &g.bounds {
            if b.len() != g.dim || b.iter().any(|[lo, hi]| !(lo < hi)) {
                return Err(LabError::Config("grid.bounds needs one increasing [lo, hi] per axis".into()));
            }
        }
        if !(g.s > 0.0 && g.s < 1.0) {
            return Err(LabError::Config(format!("grid.s must lie in (0, 1), got {}", g.s)));
        }
        let sv = &self.solver;
        if !(sv.dt > 0.0 && sv.dt.is_finite()) {
            return Err(LabError::Config(format!("solver.dt must be positive, got {}", sv.dt)));
        }
        if !(sv.inner_tol > 0.0) || !(sv.proj_tol > 0.0) || sv.inner_max_iter == 0 {
            return Err(LabError::Config("solver tolerances and iteration caps must be positive".into()));
        }
        let e = &self.experiment;
        if !(e.horizon > 0.0 && e.horizon.is_finite()) {
            return Err(LabError::Config(format!("experiment.horizon must be positive, got {}", e.horizon)));
        }
        if !(e.epsilon > 0.0) || !(e.sigma >= 1.0) {
            return Err(LabError::Config("experiment.epsilon must be positive and sigma >= 1".into()));
        }
        if e.mode.is_sequence() {
            if e.schedule.len() < 2 {
                return Err(LabError::Config("experiment.schedule needs at least two stages".into()));
            }
            if e.schedule.windows(2).any(|w| w[1] <= w[0]) || e.schedule.iter().any(|c| !(*c > 0.0)) {
                return Err(LabError::Config("experiment.schedule must be positive and strictly increasing".into()));
            }
        }
        let f = &self.fields;
        let needs_exponent = match e.mode {
            Mode::Cauchy | Mode::Periodic => matches!(
                self.functional(),
                FunctionalKind::VariableP | FunctionalKind::WeightedConstantP | FunctionalKind::MixedO
            ),
            Mode::FullBlowup | Mode::PeriodicBlowup => true,
            Mode::Mosco => f.mask.is_none(),
            Mode::PartialBlowup | Mode::Validate => false,
        };
        if needs_exponent && f.exponent.is_none() {
            return Err(LabError::Config(format!("mode {} needs fields.exponent", e.mode.label())));
        }
        let needs_weight = e.mode == Mode::PeriodicBlowup
            || (matches!(e.mode, Mode::Cauchy | Mode::Periodic)
                && matches!(self.functional(), FunctionalKind::WeightedConstantP | FunctionalKind::IndicatorKt));
        if needs_weight && f.weight.is_none() {
            return Err(LabError::Config(format!("mode {} needs fields.weight", e.mode.label())));
        }
        let needs_mask = e.mode == Mode::PartialBlowup
            || (matches!(e.mode, Mode::Cauchy | Mode::Periodic) && self.functional() == FunctionalKind::MixedO);
        if needs_mask && f.mask.is_none() {
            return Err(LabError::Config(format!("mode {} needs fields.mask", e.mode.label())));
        }
        if let Some(m) = &f.mask {
            if m.lower.len() != g.dim || m.upper.len() != g.dim {
                return Err(LabError::Config("fields.mask bounds need one entry per axis".into()));
            }
        }
        Ok(())
    }

    pub fn functional(&self) -> FunctionalKind {
        self.experiment.functional.unwrap_or(FunctionalKind::VariableP)
    }

    pub fn scaling(&self) -> KernelScaling {
        self.experiment.scaling.unwrap_or(if self.experiment.mode.is_sequence() {
            KernelScaling::HolderOrder
        } else {
            KernelScaling::Gagliardo
        })
    }

    pub fn step_count(&self) -> f64 {
        self.experiment.horizon / self.solver.dt
    }
}

/// Grid-level objects built from a config.
pub struct Setup {
    pub grid: Grid,
    pub pairs: Arc<PairTable>,
    pub exponent: Option<ExponentField>,
    pub weight: Option<Arc<WeightField>>,
    pub forcing: Forcing,
    pub u0: Vec<f64>,
    pub mask: Option<Arc<SubdomainMask>>,
    pub kappa: Option<ExponentField>,
    pub inner_base: Option<ExponentField>,
}

pub fn build_setup(lc: &LoadedConfig) -> Result<Setup> {
    let cfg = &lc.config;
    let g = &cfg.grid;
    let grid = match g.dim {
        1 => {
            let [lo, hi] = g.bounds.as_ref().map_or([0.0, 1.0], |b| b[0]);
            build_interval_grid(g.n, lo, hi)?
        }
        _ => {
            let b = g.bounds.clone().unwrap_or_else(|| vec![[0.0, 1.0]; 2]);
            build_rect_grid(g.n, g.ny.unwrap_or(g.n), (b[0][0], b[0][1]), (b[1][0], b[1][1]))?
        }
    };
    let n = grid.len();
    let pairs = Arc::new(build_pair_table(&grid, g.s)?);
    let f = &cfg.fields;
    let exponent = f.exponent.as_ref().map(|e| exponent_field(lc, &grid, e)).transpose()?;
    let weight = match &f.weight {
        Some(w) => {
            let field = match &w.path {
                Some(p) => WeightField::load_csv(open(lc, p)?, n, w.sigma, w.a0, cfg.experiment.horizon)?,
                None => WeightField::uniform(n, w.a, w.sigma, w.a0, cfg.experiment.horizon)?,
            };
            Some(Arc::new(field))
        }
        None => None,
    };
    let forcing = match &f.forcing {
        ForcingSpec::Zero => Forcing::Zero,
        ForcingSpec::Separable { space, profile } => Forcing::Separable {
            space: spatial(lc, &grid, space)?,
            profile: *profile,
        },
        ForcingSpec::Table { times, values } => Forcing::table(times.clone(), values.clone())?,
    };
    forcing.validate(n)?;
    let (mask, kappa, inner_base) = match &f.mask {
        Some(m) => {
            let inside = |x: [f64; 2]| (0..g.dim).all(|a| x[a] > m.lower[a] && x[a] < m.upper[a]);
            let mask = build_mask(&grid, inside, true)?;
            (
                Some(Arc::new(mask)),
                Some(exponent_field(lc, &grid, &m.kappa)?),
                Some(exponent_field(lc, &grid, &m.inner_base)?),
            )
        }
        None => (None, None, None),
    };
    let mut u0 = spatial(lc, &grid, &f.u0.space)?;
    if f.u0.project {
        if let Some(cs) = limit_constraint(cfg, &pairs, weight.as_deref(), mask.as_deref())? {
            u0 = cs.project(&u0, 1e-12, cfg.solver.step_config().projection_iterations(n))?.state;
        }
    }
    Ok(Setup { grid, pairs, exponent, weight, forcing, u0, mask, kappa, inner_base })
}

/// The set `u0.project` targets.
fn limit_constraint(
    cfg: &ExperimentConfig,
    pairs: &PairTable,
    weight: Option<&WeightField>,
    mask: Option<&SubdomainMask>,
) -> Result<Option<ConstraintSet>> {
    let mixed = cfg.experiment.mode == Mode::PartialBlowup
        || (matches!(cfg.experiment.mode, Mode::Cauchy | Mode::Periodic) && cfg.functional() == FunctionalKind::MixedO);
    if mixed {
        let m = mask.ok_or_else(|| LabError::Config("projection onto O^2 needs fields.mask".into()))?;
        return Ok(Some(ConstraintSet::o_squared(pairs, m)));
    }
    Ok(match (cfg.experiment.mode, weight) {
        (Mode::FullBlowup | Mode::PeriodicBlowup, Some(w)) => Some(ConstraintSet::k_t(pairs, w, 0.0)?),
        (Mode::Cauchy | Mode::Periodic, Some(w)) if cfg.functional() == FunctionalKind::IndicatorKt => {
            Some(ConstraintSet::k_t(pairs, w, 0.0)?)
        }
        _ => Some(ConstraintSet::k_inf(pairs)),
    })
}

fn open(lc: &LoadedConfig, p: &Path) -> Result<fs::File> {
    let path = lc.resolve(p);
    fs::File::open(&path).map_err(|e| LabError::Config(format!("cannot open {}: {e}", path.display())))
}

fn exponent_field(lc: &LoadedConfig, grid: &Grid, spec: &ExponentSpec) -> Result<ExponentField> {
    match spec {
        ExponentSpec::Constant { value } => ExponentField::constant(grid.len(), *value),
        ExponentSpec::Distance { base, slope, shift } => ExponentField::from_fn(grid, |x, y| {
            let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            base + slope * (d - shift).max(0.0)
        }),
        ExponentSpec::Table { path } => ExponentField::load_csv(open(lc, path)?, grid.len()),
    }
}

fn spatial(lc: &LoadedConfig, grid: &Grid, spec: &SpatialSpec) -> Result<Vec<f64>> {
    let n = grid.len();
    let v = match spec {
        SpatialSpec::Zero => vec![0.0; n],
        SpatialSpec::Constant { value } => vec![*value; n],
        SpatialSpec::Wave { shape, amplitude, frequency, phase } => grid
            .nodes()
            .iter()
            .map(|x| {
                let arg = 2.0 * PI * frequency * x[0] + phase;
                amplitude
                    * match shape {
                        WaveShape::Sin => arg.sin(),
                        WaveShape::Cos => arg.cos(),
                    }
            })
            .collect(),
        SpatialSpec::Values { values } => values.clone(),
        SpatialSpec::Csv { path } => {
            let mut rdr = csv::Reader::from_reader(open(lc, path)?);
            let mut v = vec![f64::NAN; n];
            for rec in rdr.deserialize::<(usize, f64)>() {
                let (i, x) = rec?;
                if i >= n {
                    return Err(LabError::Config(format!("node {i} out of range in {}", path.display())));
                }
                v[i] = x;
            }
            v
        }
    };
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(LabError::Config(format!("nodal vector needs {n} finite entries")));
    }
    Ok(v)
}

fn functional_spec(cfg: &ExperimentConfig, setup: &Setup) -> Result<FunctionalSpec> {
    let pairs = setup.pairs.clone();
    let scaling = cfg.scaling();
    let need_exp = || {
        setup
            .exponent
            .clone()
            .map(Arc::new)
            .ok_or_else(|| LabError::Config("functional needs fields.exponent".into()))
    };
    let need_weight = || setup.weight.clone().ok_or_else(|| LabError::Config("functional needs fields.weight".into()));
    match cfg.functional() {
        FunctionalKind::VariableP => FunctionalSpec::variable_p(pairs, need_exp()?, scaling),
        FunctionalKind::WeightedConstantP => {
            let p = need_exp()?;
            if !p.is_constant() {
                return Err(LabError::Config("weighted_constant_p needs a constant exponent".into()));
            }
            FunctionalSpec::weighted_constant_p(pairs, p.p_minus(), need_weight()?, scaling)
        }
        FunctionalKind::IndicatorKt => FunctionalSpec::indicator_kt(pairs, need_weight()?),
        FunctionalKind::IndicatorKinf => Ok(FunctionalSpec::indicator_kinf(pairs)),
        FunctionalKind::MixedO => {
            let mask = setup.mask.clone().ok_or_else(|| LabError::Config("mixed_o needs fields.mask".into()))?;
            let kappa = setup.kappa.clone().map(Arc::new).map_or_else(need_exp, Ok)?;
            FunctionalSpec::mixed_o(pairs, kappa, mask, scaling)
        }
    }
}

fn sequence(cfg: &ExperimentConfig, setup: &Setup) -> Result<ExponentSequence> {
    let e = &cfg.experiment;
    match (&setup.mask, &setup.kappa, &setup.inner_base) {
        (Some(m), Some(k), Some(b)) if e.mode != Mode::FullBlowup && e.mode != Mode::PeriodicBlowup => {
            make_partial_blowup_sequence(m, k, b, &e.schedule, e.epsilon)
        }
        _ => {
            let base = setup
                .exponent
                .as_ref()
                .ok_or_else(|| LabError::Config("blow-up needs fields.exponent".into()))?;
            make_full_blowup_sequence(base, &e.schedule, e.epsilon)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Sole writer of a run directory.
pub struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry { path: rel.into(), bytes: bytes.len(), sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write_bytes(rel, &buf)
    }

    pub fn write_with<F>(&mut self, rel: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write_bytes(rel, &buf)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(&mut self, meta: serde_json::Value) -> Result<()> {
        let mut doc = meta;
        doc["manifest_version"] = json!(MANIFEST_VERSION);
        doc["files"] = serde_json::to_value(&self.files)?;
        let mut buf = serde_json::to_vec_pretty(&doc)?;
        buf.push(b'\n');
        fs::write(self.dir.join("manifest.json"), buf)?;
        Ok(())
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
    /// Headline verdict of the mode (checks passed, distances decreasing, ...).
    pub ok: bool,
    pub lines: Vec<String>,
}

/// Runs the configured mode and writes its artifacts. On error the run
/// directory still receives `error.json` and a manifest.
pub fn run(lc: &LoadedConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut lc = lc.clone();
    if let Some(seed) = opts.seed {
        lc.config.experiment.seed = seed;
    }
    let dir = opts.out.clone().unwrap_or_else(|| lc.config.output.directory.clone());
    let mut writer = ArtifactWriter::create(&dir)?;
    let start = Instant::now();
    let result = dispatch(&lc, &mut writer);
    let mut meta = json!({
        "program": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": lc.sha256(),
        "mode": lc.config.experiment.mode.label(),
        "seed": lc.config.experiment.seed,
        "threads": opts.threads.unwrap_or_else(rayon::current_num_threads),
    });
    match result {
        Ok((ok, lines)) => {
            meta["status"] = json!(if ok { "ok" } else { "failed_checks" });
            meta["wall_time_s"] = json!(start.elapsed().as_secs_f64());
            writer.finish(meta)?;
            Ok(RunOutcome {
                dir,
                files: writer.files().iter().map(|f| f.path.clone()).collect(),
                ok,
                lines,
            })
        }
        Err(err) => {
            writer.write_json("error.json", &error_report(&err))?;
            meta["status"] = json!("error");
            meta["wall_time_s"] = json!(start.elapsed().as_secs_f64());
            writer.finish(meta)?;
            Err(err)
        }
    }
}

pub fn error_report(err: &LabError) -> serde_json::Value {
    json!({ "kind": err.kind(), "exit_code": err.exit_code(), "message": err.to_string() })
}

fn dispatch(lc: &LoadedConfig, w: &mut ArtifactWriter) -> Result<(bool, Vec<String>)> {
    let cfg = &lc.config;
    if cfg.experiment.mode == Mode::Validate {
        return validate_into(cfg.experiment.seed, cfg.experiment.quick, w);
    }
    let setup = build_setup(lc)?;
    let e = &cfg.experiment;
    let step = cfg.solver.step_config();
    let data = ProblemData::new(e.horizon, setup.forcing.clone(), setup.u0.clone())?;
    let mut bcfg = BlowupConfig::new(step.clone());
    bcfg.scaling = cfg.scaling();
    bcfg.vi_samples = e.vi_samples;
    bcfg.seed = e.seed;
    bcfg.sigma = e.sigma;
    bcfg.periodic = cfg.solver.periodic.clone();
    let keep = cfg.output.trajectories;
    match e.mode {
        Mode::Cauchy => {
            let spec = functional_spec(cfg, &setup)?;
            let tr = solve_cauchy(&spec, &data, &step)?;
            let h = setup.pairs.weights();
            w.write_with("trajectory.csv", |b| tr.write_csv(b))?;
            let report = json!({
                "mode": "cauchy",
                "functional": spec.kind(),
                "steps": tr.steps(),
                "sup_norm": tr.sup_norm(h),
                "final_state": tr.last(),
                "stats": tr.stats_json(),
            });
            w.write_json("report.json", &report)?;
            Ok((true, vec![format!("cauchy: {} steps, sup_t |u|_h = {:.6e}", tr.steps(), tr.sup_norm(h))]))
        }
        Mode::Periodic => {
            let spec = functional_spec(cfg, &setup)?;
            let sol = solve_periodic(&spec, &setup.forcing, e.horizon, &step, &cfg.solver.periodic)?;
            w.write_with("trajectory.csv", |b| sol.trajectory.write_csv(b))?;
            let report = json!({
                "mode": "periodic",
                "functional": spec.kind(),
                "iterations": sol.iterations,
                "gaps": sol.gaps,
                "averaged": sol.averaged,
                "stats": sol.trajectory.stats_json(),
            });
            w.write_json("report.json", &report)?;
            Ok((true, vec![format!(
                "periodic: {} Picard iterations, final gap {:.3e}",
                sol.iterations,
                sol.gaps.last().copied().unwrap_or(0.0)
            )]))
        }
        Mode::FullBlowup | Mode::PeriodicBlowup | Mode::PartialBlowup => {
            let seq = sequence(cfg, &setup)?;
            let report = match e.mode {
                Mode::FullBlowup => run_full_blowup(setup.pairs.clone(), &seq, setup.weight.clone(), &data, &bcfg)?,
                Mode::PeriodicBlowup => {
                    let weight = setup.weight.clone().ok_or_else(|| LabError::Config("needs fields.weight".into()))?;
                    run_periodic_blowup(setup.pairs.clone(), &seq, weight, &setup.forcing, &bcfg)?
                }
                _ => {
                    let mask = setup.mask.clone().ok_or_else(|| LabError::Config("needs fields.mask".into()))?;
                    run_partial_blowup(setup.pairs.clone(), &seq, mask, &data, &bcfg)?
                }
            };
            write_convergence(w, &seq, &report, keep)?;
            Ok((report.sup_dist_decreasing, convergence_lines(&report)))
        }
        Mode::Mosco => {
            let seq = sequence(cfg, &setup)?;
            let mcfg = MoscoConfig { samples: e.samples, seed: e.seed, scaling: cfg.scaling(), ..MoscoConfig::default() };
            let rep = mosco_diagnostics(setup.pairs.clone(), &seq, setup.mask.clone(), &mcfg)?;
            w.write_with("recovery.csv", |b| {
                let mut wr = csv::Writer::from_writer(b);
                for r in &rep.recovery {
                    wr.serialize(r)?;
                }
                wr.flush()?;
                Ok(())
            })?;
            w.write_json("report.json", &json!({ "mode": "mosco", "sequence": seq.report, "diagnostics": rep }))?;
            let ok = rep.recovery_all_hold && rep.liminf_all_hold && rep.divergence.diverged;
            Ok((ok, vec![format!(
                "mosco: recovery {}, liminf {}, divergence {}",
                rep.recovery_all_hold, rep.liminf_all_hold, rep.divergence.diverged
            )]))
        }
        Mode::Validate => unreachable!("handled above"),
    }
}

fn write_convergence(
    w: &mut ArtifactWriter,
    seq: &ExponentSequence,
    report: &ConvergenceReport,
    keep_trajectories: bool,
) -> Result<()> {
    w.write_with("summary.csv", |b| report.write_summary_csv(b))?;
    w.write_json("report.json", &json!({ "sequence": seq.report, "convergence": report }))?;
    if keep_trajectories {
        for (j, tr) in report.trajectories.iter().enumerate() {
            w.write_with(&format!("stages/stage_{j}.csv"), |b| tr.write_csv(b))?;
        }
        if let Some(tr) = &report.limit_trajectory {
            w.write_with("stages/limit.csv", |b| tr.write_csv(b))?;
        }
    }
    Ok(())
}

fn convergence_lines(report: &ConvergenceReport) -> Vec<String> {
    let mut lines: Vec<String> = report
        .stages
        .iter()
        .map(|s| {
            format!(
                "stage {}: p- = {}, sup_t dist = {:.4e}, sqrt(t) du/dt dist = {:.4e}, w12 = {:.4e}",
                s.j, s.p_minus, s.sup_t_dist, s.weighted_deriv_dist, s.w12_dist
            )
        })
        .collect();
    lines.push(format!("sup_t distance decreasing: {}", report.sup_dist_decreasing));
    lines
}

/// Runs the invariant suite and writes `checks.json`.
pub fn validate_into(seed: u64, quick: bool, w: &mut ArtifactWriter) -> Result<(bool, Vec<String>)> {
    let outcomes = checks::run_all(seed, quick)?;
    w.write_json("checks.json", &outcomes)?;
    Ok((outcomes.iter().all(|c| c.passed), outcomes.iter().map(CheckOutcome::line).collect()))
}

/// The resolved experiment in words.
pub fn describe(lc: &LoadedConfig) -> Result<String> {
    let cfg = &lc.config;
    let e = &cfg.experiment;
    let mut out = String::new();
    let _ = writeln!(out, "mode: {} ({})", e.mode.label(), e.mode.statement());
    if e.mode == Mode::Validate {
        let _ = writeln!(out, "checks: 11 invariant suites, seed {}, quick {}", e.seed, e.quick);
        return Ok(out);
    }
    let setup = build_setup(lc)?;
    let n = setup.grid.len();
    let _ = writeln!(out, "grid: {n} nodes, dim {}, s = {}", cfg.grid.dim, cfg.grid.s);
    let _ = writeln!(out, "ordered pairs: {}", n * (n - 1));
    let _ = writeln!(
        out,
        "time: horizon {}, dt {}, {} steps per solve",
        e.horizon,
        cfg.solver.dt,
        cfg.step_count().round()
    );
    let _ = writeln!(out, "pair weight: {:?}", cfg.scaling());
    if let Some(m) = &setup.mask {
        let _ = writeln!(
            out,
            "mask: {} nodes in O, |O^2| = {} ordered pairs, complement = {} ordered pairs",
            m.inside_count(),
            m.o_squared_pair_count(),
            m.complement_pair_count()
        );
    }
    if e.mode.is_sequence() {
        let seq = sequence(cfg, &setup)?;
        let _ = writeln!(out, "stages: {}", seq.len());
        for (j, f) in seq.fields.iter().enumerate() {
            match f.partial_extrema() {
                Some(p) => {
                    let _ = writeln!(
                        out,
                        "  stage {j}: O^2 exponent in [{}, {}], complement in [{}, {}]",
                        p.inner_minus, p.inner_plus, p.kappa_minus, p.kappa_plus
                    );
                }
                None => {
                    let _ = writeln!(out, "  stage {j}: exponent in [{}, {}]", f.p_minus(), f.p_plus());
                }
            }
        }
        if e.mode != Mode::Mosco {
            let _ = writeln!(out, "solves: {} (stages plus limit)", seq.len() + 1);
        }
    } else {
        let _ = writeln!(out, "stages: 1 (functional {:?})", cfg.functional());
        if let Some(p) = &setup.exponent {
            let _ = writeln!(out, "  exponent in [{}, {}]", p.p_minus(), p.p_plus());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[grid]\nn = 4\ns = 0.5\n\n[solver]\ndt = 0.25\n\n";

    fn load(text: &str) -> Result<LoadedConfig> {
        LoadedConfig::from_str(text, PathBuf::new())
    }

    #[test]
    fn bundled_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let mut count = 0;
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "toml") {
                let lc = LoadedConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
                build_setup(&lc).unwrap();
                count += 1;
            }
        }
        assert!(count >= 6);
    }

    #[test]
    fn partial_mode_needs_a_mask() {
        let err = load(&format!("{BASE}[experiment]\nmode = \"partial_blowup\"\n")).unwrap_err();
        assert!(matches!(err, LabError::Config(ref m) if m.contains("fields.mask")), "{err}");
    }

    #[test]
    fn decreasing_schedule_is_rejected() {
        let text = format!(
            "{BASE}[fields.exponent]\nkind = \"constant\"\nvalue = 2.0\n\n[experiment]\nmode = \"full_blowup\"\nschedule = [4, 2]\n"
        );
        assert_eq!(load(&text).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn wave_and_distance_fields_resolve() {
        let text = format!(
            "{BASE}[fields.exponent]\nkind = \"distance\"\nbase = 2.0\nslope = 4.0\nshift = 0.25\n\n\
             [fields.u0]\nspace = {{ kind = \"wave\", shape = \"cos\", amplitude = 2.0 }}\n\n\
             [experiment]\nmode = \"cauchy\"\n"
        );
        let setup = build_setup(&load(&text).unwrap()).unwrap();
        // nodes 1/8, 3/8, 5/8, 7/8
        let p = setup.exponent.unwrap();
        assert_eq!(p.get(0, 1), 2.0);
        assert!((p.get(0, 3) - (2.0 + 4.0 * 0.5)).abs() < 1e-15);
        let expect = 2.0 * (2.0 * PI / 8.0).cos();
        assert!((setup.u0[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn projected_u0_lands_in_k_inf() {
        let text = format!(
            "{BASE}[fields.exponent]\nkind = \"constant\"\nvalue = 2.0\n\n\
             [fields.u0]\nspace = {{ kind = \"values\", values = [0.0, 5.0, -5.0, 0.0] }}\nproject = true\n\n\
             [experiment]\nmode = \"full_blowup\"\n"
        );
        let setup = build_setup(&load(&text).unwrap()).unwrap();
        assert!(ConstraintSet::k_inf(&setup.pairs).membership(&setup.u0, 1e-9));
    }

    #[test]
    fn scaling_defaults_follow_mode() {
        let seq = load(&format!(
            "{BASE}[fields.exponent]\nkind = \"constant\"\nvalue = 2.0\n\n[experiment]\nmode = \"mosco\"\n"
        ))
        .unwrap();
        assert_eq!(seq.config.scaling(), KernelScaling::HolderOrder);
        let single = load(&format!(
            "{BASE}[fields.exponent]\nkind = \"constant\"\nvalue = 2.0\n\n[experiment]\nmode = \"cauchy\"\n"
        ))
        .unwrap();
        assert_eq!(single.config.scaling(), KernelScaling::Gagliardo);
    }

    #[test]
    fn writer_tracks_rewrites_once() {
        let tmp = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(tmp.path()).unwrap();
        w.write_bytes("a.txt", b"1").unwrap();
        w.write_bytes("a.txt", b"2").unwrap();
        w.write_bytes("sub/b.txt", b"3").unwrap();
        w.finish(json!({})).unwrap();
        let paths: Vec<&str> = w.files().iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["a.txt", "sub/b.txt"]);
        assert_eq!(fs::read(tmp.path().join("a.txt")).unwrap(), b"2");
    }
}
