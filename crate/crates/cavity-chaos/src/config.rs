//! Experiment configuration files.
//!
//! A configuration is a TOML document with a `[model]` and a `[field]` table,
//! optional `[atom]`, `[integrator]` and `[output]` tables, and one block
//! named after the experiment it drives. Unknown keys are rejected. Every
//! default is filled in on load, so serializing a loaded config gives the
//! fully resolved parameter set.

use std::path::{Path, PathBuf};

use cavity_chaos_core::chaos::{LyapunovConfig, MapAxis, MapParameter, ZoutZinSetup};
use cavity_chaos_core::integrator::{Direction, EventFunction, EventSpec, Tolerances};
use cavity_chaos_core::scattering::{BinSpec, CavityGeometry, ScanConfig, SingularityRule};
use cavity_chaos_core::sweep::Spacing;
use cavity_chaos_core::{AtomPreparation, FieldPreparation, Scenario};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Population inversion against time.
    Rabi,
    /// Maximal Lyapunov exponent over a two-parameter grid.
    Lyapmap,
    /// Section points of several trajectories.
    Poincare,
    /// Final inversion against a fine scan of the initial inversion.
    Zoutzin,
    /// Exit-time scan and zoom chain.
    Fractal,
    /// Exit-time histogram with tail fits.
    Exitstats,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Rabi => "rabi",
            ExperimentKind::Lyapmap => "lyapmap",
            ExperimentKind::Poincare => "poincare",
            ExperimentKind::Zoutzin => "zoutzin",
            ExperimentKind::Fractal => "fractal",
            ExperimentKind::Exitstats => "exitstats",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment this file is written for; checked against the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub model: ModelSection,
    pub field: FieldSection,
    #[serde(default)]
    pub atom: AtomSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi: Option<RabiBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapmap: Option<LyapmapBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poincare: Option<PoincareBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoutzin: Option<ZoutzinBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractal: Option<FractalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exitstats: Option<ExitstatsBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub delta: f64,
    pub alpha: f64,
    /// Highest photon-number manifold carried; omitted means the smallest
    /// truncation with a discarded tail below 1e-12.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_p0")]
    pub p0: f64,
}

fn default_p0() -> f64 {
    50.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSection {
    Fock { n: usize },
    Coherent { mean: f64 },
    BoseEinstein { mean: f64 },
}

impl From<FieldSection> for FieldPreparation {
    fn from(f: FieldSection) -> Self {
        match f {
            FieldSection::Fock { n } => FieldPreparation::Fock { n },
            FieldSection::Coherent { mean } => FieldPreparation::Coherent { mean },
            FieldSection::BoseEinstein { mean } => FieldPreparation::BoseEinstein { mean },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AtomSection {
    #[default]
    Excited,
    /// Incoherent mixture with initial inversion `z_in`.
    Superposition { z_in: f64 },
}

impl From<AtomSection> for AtomPreparation {
    fn from(a: AtomSection) -> Self {
        match a {
            AtomSection::Excited => AtomPreparation::Excited,
            AtomSection::Superposition { z_in } => AtomPreparation::Superposition { z_in },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Omitted means `0.05 / sqrt(top + 1)` for the highest carried level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
}

fn default_rel_tol() -> f64 {
    1e-10
}

fn default_abs_tol() -> f64 {
    1e-12
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            max_step: None,
        }
    }
}

impl From<IntegratorSection> for Tolerances {
    fn from(s: IntegratorSection) -> Self {
        Tolerances {
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            max_step: s.max_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: Format,
    /// Relative paths are taken from the working directory; `--out` wins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum RabiDynamics {
    /// Atom at rest in a mode of constant amplitude.
    Motionless,
    /// Atom moving through the standing wave.
    #[default]
    Moving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RabiBlock {
    #[serde(default)]
    pub dynamics: RabiDynamics,
    /// Mode amplitude seen by a motionless atom.
    #[serde(default = "one")]
    pub coupling: f64,
    pub t_max: f64,
    pub dt: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SpacingName {
    #[default]
    Linear,
    Log,
}

impl From<SpacingName> for Spacing {
    fn from(s: SpacingName) -> Self {
        match s {
            SpacingName::Linear => Spacing::Linear,
            SpacingName::Log => Spacing::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum ParameterName {
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "alpha")]
    Alpha,
    /// Fock photon number or mean photon number.
    #[serde(rename = "n")]
    PhotonNumber,
    #[serde(rename = "p0")]
    Momentum,
}

impl From<ParameterName> for MapParameter {
    fn from(p: ParameterName) -> Self {
        match p {
            ParameterName::Delta => MapParameter::Delta,
            ParameterName::Alpha => MapParameter::Alpha,
            ParameterName::PhotonNumber => MapParameter::PhotonNumber,
            ParameterName::Momentum => MapParameter::Momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AxisBlock {
    pub parameter: ParameterName,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: SpacingName,
}

impl AxisBlock {
    pub fn to_axis(&self) -> MapAxis {
        MapAxis::new(
            self.parameter.into(),
            self.min,
            self.max,
            self.count,
            self.spacing.into(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LyapmapBlock {
    pub x: AxisBlock,
    pub y: AxisBlock,
    #[serde(default = "default_d0")]
    pub d0: f64,
    #[serde(default = "one")]
    pub renorm_interval: f64,
    #[serde(default = "default_horizon")]
    pub t_total: f64,
    /// Omitted means 10% of `t_total`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_discard: Option<f64>,
}

fn default_d0() -> f64 {
    1e-8
}

fn default_horizon() -> f64 {
    2e4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SectionFunction {
    /// Sum of the `v` components over the ladder.
    #[default]
    SumV,
    /// Crossings of `x = target`.
    Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum DirectionName {
    #[default]
    Rising,
    Falling,
    Any,
}

impl From<DirectionName> for Direction {
    fn from(d: DirectionName) -> Self {
        match d {
            DirectionName::Rising => Direction::Rising,
            DirectionName::Falling => Direction::Falling,
            DirectionName::Any => Direction::Any,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PoincareBlock {
    /// One trajectory per initial momentum.
    pub p0: Vec<f64>,
    pub t_max: f64,
    #[serde(default)]
    pub section: SectionFunction,
    #[serde(default)]
    pub direction: DirectionName,
    /// Crossing position for `section = "position"`.
    #[serde(default)]
    pub target: f64,
}

impl PoincareBlock {
    pub fn event(&self) -> EventSpec {
        let function = match self.section {
            SectionFunction::SumV => EventFunction::SumV,
            SectionFunction::Position => EventFunction::Position { target: self.target },
        };
        EventSpec::new(function, self.direction.into(), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ZoutzinBlock {
    pub z_min: f64,
    pub z_max: f64,
    pub step: f64,
    /// Observation time; zero reports the prepared inversion.
    pub tau_obs: f64,
}

impl ZoutzinBlock {
    /// Grid from `z_min` in steps of `step`, ending exactly at `z_max`.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.z_max - self.z_min) / self.step).round() as usize;
        (0..=n)
            .map(|i| {
                if i == n {
                    self.z_max
                } else {
                    self.z_min + i as f64 * self.step
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub x_left: f64,
    pub x_right: f64,
    pub central_node: f64,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        let g = CavityGeometry::default();
        Self {
            x_left: g.x_left,
            x_right: g.x_right,
            central_node: g.central_node,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SingularityBlock {
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_factor() -> f64 {
    SingularityRule::default().factor
}

fn default_floor() -> f64 {
    SingularityRule::default().floor
}

fn default_window() -> usize {
    SingularityRule::default().window
}

impl Default for SingularityBlock {
    fn default() -> Self {
        Self {
            factor: default_factor(),
            floor: default_floor(),
            window: default_window(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RefineBlock {
    pub max_depth: usize,
    pub max_children: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FractalBlock {
    /// Zoom chain; each interval must lie inside the previous one.
    pub intervals: Vec<[f64; 2]>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_horizon")]
    pub t_max: f64,
    #[serde(default)]
    pub geometry: GeometryBlock,
    #[serde(default)]
    pub singularity: SingularityBlock,
    /// Adaptive refinement below the last interval of the chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineBlock>,
}

fn default_resolution() -> usize {
    2000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BinsBlock {
    #[serde(default = "default_bins")]
    pub count: usize,
    #[serde(default = "log_spacing")]
    pub spacing: SpacingName,
    /// Omitted spans the detected exit times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

fn default_bins() -> usize {
    40
}

fn log_spacing() -> SpacingName {
    SpacingName::Log
}

impl Default for BinsBlock {
    fn default() -> Self {
        Self {
            count: default_bins(),
            spacing: log_spacing(),
            range: None,
        }
    }
}

impl BinsBlock {
    pub fn to_spec(&self) -> BinSpec {
        BinSpec {
            count: self.count,
            spacing: self.spacing.into(),
            range: self.range.map(|[a, b]| (a, b)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExitstatsBlock {
    pub p0_min: f64,
    pub p0_max: f64,
    pub samples: usize,
    #[serde(default = "default_horizon")]
    pub t_max: f64,
    #[serde(default)]
    pub geometry: GeometryBlock,
    #[serde(default)]
    pub bins: BinsBlock,
    /// Exit-time window of the tail fits.
    #[serde(default = "default_fit_range")]
    pub fit_range: [f64; 2],
}

fn default_fit_range() -> [f64; 2] {
    [300.0, 4000.0]
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ExperimentConfig {
    /// Parses and validates TOML text. `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate_common()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config tables always serialize")
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            delta: self.model.delta,
            alpha: self.model.alpha,
            n_max: self.model.n_max,
            field: self.field.into(),
            atom: self.atom.into(),
            x0: self.model.x0,
            p0: self.model.p0,
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        self.integrator.into()
    }

    fn validate_common(&self) -> Result<()> {
        let s = self.scenario();
        s.params()?;
        s.field.validate()?;
        s.atom.validate()?;
        self.tolerances().validate()?;
        check(self.model.x0.is_finite(), "model.x0 must be finite")?;
        check(self.model.p0.is_finite(), "model.p0 must be finite")?;
        Ok(())
    }

    /// Checks that the block for `kind` is present and consistent.
    pub fn validate_for(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(declared) = self.experiment {
            if declared != kind {
                return Err(Error::KindMismatch {
                    declared,
                    requested: kind,
                });
            }
        }
        let missing = || Error::MissingBlock(kind.name());
        match kind {
            ExperimentKind::Rabi => {
                let b = self.rabi.as_ref().ok_or_else(missing)?;
                check(positive(b.t_max), "rabi.t_max must be positive")?;
                check(positive(b.dt), "rabi.dt must be positive")?;
                check(b.coupling.is_finite(), "rabi.coupling must be finite")?;
            }
            ExperimentKind::Lyapmap => {
                let b = self.lyapmap.as_ref().ok_or_else(missing)?;
                b.x.to_axis().spec.validate()?;
                b.y.to_axis().spec.validate()?;
                check(
                    b.x.parameter != b.y.parameter,
                    "lyapmap axes must vary different parameters",
                )?;
                self.lyapunov_config()?.validate()?;
            }
            ExperimentKind::Poincare => {
                let b = self.poincare.as_ref().ok_or_else(missing)?;
                check(!b.p0.is_empty(), "poincare.p0 must list at least one momentum")?;
                check(b.p0.iter().all(|p| p.is_finite()), "poincare.p0 must be finite")?;
                check(positive(b.t_max), "poincare.t_max must be positive")?;
            }
            ExperimentKind::Zoutzin => {
                let b = self.zoutzin.as_ref().ok_or_else(missing)?;
                check(
                    matches!(self.field, FieldSection::Fock { .. }),
                    "zoutzin needs a fock field",
                )?;
                check(positive(b.step), "zoutzin.step must be positive")?;
                check(
                    -1.0 <= b.z_min && b.z_min <= b.z_max && b.z_max <= 1.0,
                    "zoutzin needs -1 <= z_min <= z_max <= 1",
                )?;
                check(
                    b.tau_obs >= 0.0 && b.tau_obs.is_finite(),
                    "zoutzin.tau_obs must be non-negative",
                )?;
            }
            ExperimentKind::Fractal => {
                let b = self.fractal.as_ref().ok_or_else(missing)?;
                check(!b.intervals.is_empty(), "fractal.intervals must not be empty")?;
                for [lo, hi] in &b.intervals {
                    check(
                        lo.is_finite() && hi.is_finite() && lo < hi,
                        "fractal intervals need lo < hi",
                    )?;
                }
                for w in b.intervals.windows(2) {
                    check(
                        w[0][0] <= w[1][0] && w[1][1] <= w[0][1],
                        "each fractal interval must lie inside the previous one",
                    )?;
                }
                check(b.resolution >= 2, "fractal.resolution must be at least 2")?;
                check(b.singularity.window >= 1, "fractal.singularity.window must be positive")?;
                self.scan_config(b.t_max, b.geometry, b.singularity).validate()?;
            }
            ExperimentKind::Exitstats => {
                let b = self.exitstats.as_ref().ok_or_else(missing)?;
                check(b.samples >= 1, "exitstats.samples must be positive")?;
                check(
                    b.p0_min.is_finite() && b.p0_max.is_finite() && b.p0_min <= b.p0_max,
                    "exitstats needs p0_min <= p0_max",
                )?;
                check(
                    b.samples == 1 || b.p0_min < b.p0_max,
                    "exitstats needs p0_min < p0_max for several samples",
                )?;
                check(b.bins.count >= 1, "exitstats.bins.count must be positive")?;
                if let Some([lo, hi]) = b.bins.range {
                    check(lo < hi, "exitstats.bins.range needs lo < hi")?;
                    check(
                        b.bins.spacing == SpacingName::Linear || lo > 0.0,
                        "log bins need a positive range",
                    )?;
                }
                check(
                    0.0 < b.fit_range[0] && b.fit_range[0] < b.fit_range[1],
                    "exitstats.fit_range needs 0 < lo < hi",
                )?;
                self.scan_config(b.t_max, b.geometry, SingularityBlock::default())
                    .validate()?;
            }
        }
        Ok(())
    }

    pub fn lyapunov_config(&self) -> Result<LyapunovConfig> {
        let b = self.lyapmap.as_ref().ok_or(Error::MissingBlock("lyapmap"))?;
        Ok(LyapunovConfig {
            d0: b.d0,
            renorm_interval: b.renorm_interval,
            t_total: b.t_total,
            t_discard: b.t_discard,
            tolerances: self.tolerances(),
        })
    }

    pub fn scan_config(&self, t_max: f64, g: GeometryBlock, s: SingularityBlock) -> ScanConfig {
        ScanConfig {
            geometry: CavityGeometry {
                x_left: g.x_left,
                x_right: g.x_right,
                central_node: g.central_node,
            },
            t_max,
            tolerances: self.tolerances(),
            singularity: SingularityRule {
                factor: s.factor,
                floor: s.floor,
                window: s.window,
            },
        }
    }

    pub fn zoutzin_setup(&self) -> Result<ZoutZinSetup> {
        let b = self.zoutzin.as_ref().ok_or(Error::MissingBlock("zoutzin"))?;
        let FieldSection::Fock { n } = self.field else {
            return Err(invalid("zoutzin needs a fock field"));
        };
        Ok(ZoutZinSetup {
            delta: self.model.delta,
            alpha: self.model.alpha,
            n,
            x0: self.model.x0,
            p0: self.model.p0,
            tau_obs: b.tau_obs,
            tolerances: self.tolerances(),
        })
    }
}

/// JSON Schema of the configuration format.
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const FRACTAL: &str = r#"
experiment = "fractal"

[model]
delta = 0.4
alpha = 1e-3

[field]
kind = "fock"
n = 10

[atom]
kind = "superposition"
z_in = 0.0

[fractal]
intervals = [[8.0, 80.0], [64.1, 64.6]]
"#;

    #[test]
    fn defaults_are_filled() {
        let c = ExperimentConfig::from_toml(FRACTAL, "test").unwrap();
        c.validate_for(ExperimentKind::Fractal).unwrap();
        assert_eq!(c.model.p0, 50.0);
        assert_eq!(c.integrator.rel_tol, 1e-10);
        assert_eq!(c.integrator.abs_tol, 1e-12);
        let f = c.fractal.as_ref().unwrap();
        assert_eq!(f.resolution, 2000);
        assert_eq!(f.t_max, 2e4);
        assert_eq!(f.singularity.factor, 10.0);
        assert_eq!(c.output.format, Format::Csv);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::from_toml(FRACTAL, "test").unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml(), "echo").unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let text = FRACTAL.replace("alpha = 1e-3", "alpha = 1e-3\nalhpa = 2");
        let err = ExperimentConfig::from_toml(&text, "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml"), "{msg}");
        assert!(msg.contains("alhpa"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn missing_block_and_kind_mismatch() {
        let c = ExperimentConfig::from_toml(FRACTAL, "test").unwrap();
        assert!(matches!(
            c.validate_for(ExperimentKind::Exitstats),
            Err(Error::KindMismatch { .. })
        ));
        let mut c = c;
        c.experiment = None;
        assert!(matches!(
            c.validate_for(ExperimentKind::Exitstats),
            Err(Error::MissingBlock("exitstats"))
        ));
    }

    #[test]
    fn nested_intervals_are_enforced() {
        let text = FRACTAL.replace("[64.1, 64.6]", "[64.1, 90.0]");
        let c = ExperimentConfig::from_toml(&text, "test").unwrap();
        assert!(c.validate_for(ExperimentKind::Fractal).is_err());
    }

    #[test]
    fn model_errors_surface_on_load() {
        let text = FRACTAL.replace("alpha = 1e-3", "alpha = -1.0");
        assert!(matches!(
            ExperimentConfig::from_toml(&text, "test"),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn zoutzin_grid_hits_both_ends() {
        let b = ZoutzinBlock {
            z_min: 0.9998,
            z_max: 1.0,
            step: 1e-5,
            tau_obs: 200.0,
        };
        let g = b.grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.9998);
        assert_eq!(g[20], 1.0);
    }
}
