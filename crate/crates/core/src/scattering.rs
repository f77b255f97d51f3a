//! Exit-time scattering: atoms injected at the cavity centre are followed
//! until they reach a detector, and the exit time is studied as a function of
//! the initial momentum.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::dynamics::RhsKind;
use crate::integrator::{integrate, Direction, EventFunction, EventSpec, IntegratorConfig, Termination, Tolerances};
use crate::math;
use crate::model::{HybridState, ModelParams, Scenario};
use crate::sweep::{AxisSpec, Executor, Spacing};
use crate::{Error, Result};

/// Momentum below which a node crossing is treated as grazing and not counted.
pub const GRAZING_MOMENTUM: f64 = 1e-12;

/// Detector positions and the node whose crossings are counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityGeometry {
    pub x_left: f64,
    pub x_right: f64,
    pub central_node: f64,
}

impl Default for CavityGeometry {
    fn default() -> Self {
        Self {
            x_left: -PI / 2.0,
            x_right: 1.5 * PI,
            central_node: PI / 2.0,
        }
    }
}

impl CavityGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x_left < 0.0
            && self.x_right > 0.0
            && self.x_left < self.central_node
            && self.central_node < self.x_right;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "geometry",
                reason: "need x_left < 0 < x_right with the central node strictly between",
            })
        }
    }

    /// Interior nodes of the standing wave, the zeros of `cos x`.
    pub fn nodes(&self) -> Vec<f64> {
        let first = math::floor(self.x_left / PI - 0.5) as i64;
        (first..)
            .map(|k| (k as f64 + 0.5) * PI)
            .skip_while(|&x| x <= self.x_left)
            .take_while(|&x| x < self.x_right)
            .collect()
    }

    fn events(&self) -> [EventSpec; 3] {
        [
            EventSpec::new(
                EventFunction::Position { target: self.x_left },
                Direction::Falling,
                true,
            ),
            EventSpec::new(
                EventFunction::Position { target: self.x_right },
                Direction::Rising,
                true,
            ),
            EventSpec::new(
                EventFunction::Position {
                    target: self.central_node,
                },
                Direction::Any,
                false,
            ),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Left,
    Right,
    /// Trapped until the horizon, or the integration failed.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitRecord {
    pub p0: f64,
    /// Time of detection; the horizon for trapped atoms, NaN on failure.
    pub exit_time: f64,
    pub detector: Detector,
    /// Transversal crossings of the central node before detection.
    pub m: u32,
    pub drift_flagged: bool,
    pub failure: Option<Error>,
}

impl ExitRecord {
    pub fn detected(&self) -> bool {
        self.detector != Detector::None
    }

    pub fn trapped(&self) -> bool {
        self.detector == Detector::None && self.failure.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// Detected after `m` crossings of the central node.
    Trajectory {
        m: u32,
    },
    Trapped,
    Failed,
}

pub fn classify_trajectory(record: &ExitRecord) -> Classification {
    if record.failure.is_some() {
        Classification::Failed
    } else if record.detected() {
        Classification::Trajectory { m: record.m }
    } else {
        Classification::Trapped
    }
}

/// A scan point is singular when it is trapped or its exit time exceeds
/// `max(factor * local median, floor)`; the median runs over the detected
/// exit times within `window` grid points centred on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularityRule {
    pub factor: f64,
    pub floor: f64,
    pub window: usize,
}

impl Default for SingularityRule {
    fn default() -> Self {
        Self {
            factor: 10.0,
            floor: 2000.0,
            window: 21,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub geometry: CavityGeometry,
    /// Trapping horizon.
    pub t_max: f64,
    pub tolerances: Tolerances,
    pub singularity: SingularityRule,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            geometry: CavityGeometry::default(),
            t_max: 2e4,
            tolerances: Tolerances::default(),
            singularity: SingularityRule::default(),
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        IntegratorConfig::new(self.t_max)
            .with_tolerances(self.tolerances)
            .validate()
    }
}

struct Prepared {
    rhs: RhsKind,
    params: ModelParams,
    init: HybridState,
}

fn prepare(base: &Scenario, config: &ScanConfig) -> Result<Prepared> {
    config.validate()?;
    let (params, init) = base.prepare()?;
    Ok(Prepared {
        rhs: RhsKind::for_field(&base.field),
        params,
        init,
    })
}

fn run_point(prep: &Prepared, p0: f64, config: &ScanConfig) -> ExitRecord {
    let mut init = prep.init.clone();
    init.p = p0;
    let integ = IntegratorConfig::new(config.t_max).with_tolerances(config.tolerances);
    match integrate(prep.rhs, &prep.params, &init, &integ, &config.geometry.events()) {
        Ok(traj) => {
            let m = traj
                .events
                .iter()
                .filter(|h| h.event == 2 && h.state.p.abs() > GRAZING_MOMENTUM)
                .count() as u32;
            let detector = match traj.termination {
                Termination::Event(0) => Detector::Left,
                Termination::Event(_) => Detector::Right,
                Termination::Horizon => Detector::None,
            };
            ExitRecord {
                p0,
                exit_time: traj.final_t,
                detector,
                m,
                drift_flagged: traj.drift_flagged,
                failure: None,
            }
        }
        Err(e) => ExitRecord {
            p0,
            exit_time: f64::NAN,
            detector: Detector::None,
            m: 0,
            drift_flagged: false,
            failure: Some(e),
        },
    }
}

/// Exit record for each initial momentum. `base.p0` is replaced by the grid
/// values; the atom starts at `base.x0`. Integration failures are recorded in
/// the affected record and do not stop the scan.
pub fn exit_scan<E: Executor>(
    p0: &[f64],
    base: &Scenario,
    config: &ScanConfig,
    executor: &E,
) -> Result<Vec<ExitRecord>> {
    if p0.is_empty() {
        return Err(Error::InvalidParameter {
            name: "p0",
            reason: "grid is empty",
        });
    }
    let prep = prepare(base, config)?;
    Ok(executor.map_indexed(p0.len(), |i| run_point(&prep, p0[i], config)))
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[k]
    } else {
        0.5 * (values[k - 1] + values[k])
    })
}

/// Singular flag per record under `rule`. Failed records are not singular.
pub fn singular_points(records: &[ExitRecord], rule: &SingularityRule) -> Vec<bool> {
    let half = rule.window / 2;
    let mut window = Vec::with_capacity(rule.window + 1);
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.failure.is_some() {
                return false;
            }
            if !r.detected() {
                return true;
            }
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(records.len());
            window.clear();
            window.extend(records[lo..hi].iter().filter(|q| q.detected()).map(|q| q.exit_time));
            let med = median(&mut window).unwrap_or(r.exit_time);
            r.exit_time > (rule.factor * med).max(rule.floor)
        })
        .collect()
}

/// Whether the stretch between neighbouring grid points `i` and `i + 1` is
/// unresolved: the crossing count or the detector changes, or either end is
/// singular or failed.
fn pair_unresolved(records: &[ExitRecord], singular: &[bool], i: usize) -> bool {
    let (a, b) = (&records[i], &records[i + 1]);
    a.m != b.m
        || a.detector != b.detector
        || singular[i]
        || singular[i + 1]
        || a.failure.is_some()
        || b.failure.is_some()
}

/// Smooth segments shorter than this many neighbouring pairs are not counted.
pub const MIN_SMOOTH_PAIRS: usize = 3;

/// One level of the exit-time zoom: a scanned momentum interval, the parts
/// of it that are not resolved at this grid spacing, and refinements of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoomNode {
    pub p_lo: f64,
    pub p_hi: f64,
    pub resolution: usize,
    pub depth: usize,
    pub records: Vec<ExitRecord>,
    pub singular: Vec<bool>,
    /// Merged runs of unresolved neighbouring pairs, as momentum intervals.
    pub unresolved: Vec<(f64, f64)>,
    /// Runs of at least [`MIN_SMOOTH_PAIRS`] resolved pairs.
    pub smooth: Vec<(f64, f64)>,
    pub children: Vec<ZoomNode>,
}

impl ZoomNode {
    pub fn new(p_lo: f64, p_hi: f64, resolution: usize, depth: usize) -> Self {
        Self {
            p_lo,
            p_hi,
            resolution,
            depth,
            records: Vec::new(),
            singular: Vec::new(),
            unresolved: Vec::new(),
            smooth: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        AxisSpec::linear("p0", self.p_lo, self.p_hi, self.resolution).values()
    }

    fn validate(&self) -> Result<()> {
        if self.p_lo.is_nan() || self.p_hi.is_nan() || self.p_lo >= self.p_hi || self.resolution < 2 {
            return Err(Error::InvalidParameter {
                name: "zoom interval",
                reason: "need p_lo < p_hi and at least two points",
            });
        }
        Ok(())
    }

    /// Fill the structural fields from `records` taken on [`ZoomNode::grid`].
    pub fn analyse(&mut self, records: Vec<ExitRecord>, rule: &SingularityRule) {
        self.singular = singular_points(&records, rule);
        self.unresolved.clear();
        self.smooth.clear();
        let p: Vec<f64> = records.iter().map(|r| r.p0).collect();
        let mut run_start: Option<(usize, bool)> = None;
        let pairs = records.len().saturating_sub(1);
        for i in 0..=pairs {
            let state = (i < pairs).then(|| pair_unresolved(&records, &self.singular, i));
            match (run_start, state) {
                (Some((_, kind)), Some(s)) if s == kind => {}
                _ => {
                    if let Some((start, kind)) = run_start {
                        let span = (p[start], p[i]);
                        if kind {
                            self.unresolved.push(span);
                        } else if i - start >= MIN_SMOOTH_PAIRS {
                            self.smooth.push(span);
                        }
                    }
                    run_start = state.map(|s| (i, s));
                }
            }
        }
        self.records = records;
    }

    pub fn singular_count(&self) -> usize {
        self.singular.iter().filter(|&&s| s).count()
    }

    /// Mean exit time over detected records.
    pub fn mean_exit_time(&self) -> Option<f64> {
        mean_exit_time(&self.records)
    }
}

pub fn mean_exit_time(records: &[ExitRecord]) -> Option<f64> {
    let (sum, n) = records
        .iter()
        .filter(|r| r.detected())
        .fold((0.0, 0usize), |(s, n), r| (s + r.exit_time, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefineLimits {
    pub max_depth: usize,
    /// Unresolved intervals refined per node, widest first.
    pub max_children: usize,
}

/// Scan `node` at its resolution and recursively refine its widest unresolved
/// intervals until `limits.max_depth`.
pub fn refine_interval<E: Executor>(
    mut node: ZoomNode,
    base: &Scenario,
    config: &ScanConfig,
    limits: &RefineLimits,
    executor: &E,
) -> Result<ZoomNode> {
    node.validate()?;
    let records = exit_scan(&node.grid(), base, config, executor)?;
    node.analyse(records, &config.singularity);
    if node.depth < limits.max_depth {
        let mut targets = node.unresolved.clone();
        targets.sort_by(|a, b| (b.1 - b.0).total_cmp(&(a.1 - a.0)).then(a.0.total_cmp(&b.0)));
        targets.truncate(limits.max_children);
        targets.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (lo, hi) in targets {
            let child = ZoomNode::new(lo, hi, node.resolution, node.depth + 1);
            node.children
                .push(refine_interval(child, base, config, limits, executor)?);
        }
    }
    Ok(node)
}

/// Scan each interval of an explicit zoom chain; each must lie inside the
/// previous one.
pub fn zoom_chain<E: Executor>(
    intervals: &[(f64, f64)],
    resolution: usize,
    base: &Scenario,
    config: &ScanConfig,
    executor: &E,
) -> Result<Vec<ZoomNode>> {
    for w in intervals.windows(2) {
        if w[1].0 < w[0].0 || w[1].1 > w[0].1 {
            return Err(Error::InvalidParameter {
                name: "zoom chain",
                reason: "every interval must be nested in the previous one",
            });
        }
    }
    let limits = RefineLimits {
        max_depth: 0,
        max_children: 0,
    };
    intervals
        .iter()
        .enumerate()
        .map(|(depth, &(lo, hi))| {
            refine_interval(
                ZoomNode::new(lo, hi, resolution, depth),
                base,
                config,
                &limits,
                executor,
            )
        })
        .collect()
}

/// Second differences of the exit time over consecutive detected triples
/// with a common detector and crossing count, in units of time per momentum².
pub fn curvature(records: &[ExitRecord]) -> Vec<(f64, f64)> {
    records
        .windows(3)
        .filter(|w| {
            w.iter().all(|r| r.detected())
                && w[0].m == w[1].m
                && w[1].m == w[2].m
                && w[0].detector == w[1].detector
                && w[1].detector == w[2].detector
        })
        .map(|w| {
            let h = 0.5 * (w[2].p0 - w[0].p0);
            let d2 = (w[2].exit_time - 2.0 * w[1].exit_time + w[0].exit_time) / (h * h);
            (w[1].p0, d2)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    pub count: usize,
    pub spacing: Spacing,
    /// `None` spans the detected exit times.
    pub range: Option<(f64, f64)>,
}

/// Exit-time histogram. Masses are fractions of all non-failed records, so
/// the bin masses, the trapped fraction and the out-of-range fractions add up
/// to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitTimePdf {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mass: Vec<f64>,
    /// Mass per unit exit time.
    pub density: Vec<f64>,
    pub total: u64,
    pub trapped: u64,
    pub failed: u64,
    pub underflow: u64,
    pub overflow: u64,
}

impl ExitTimePdf {
    /// Arithmetic or geometric bin centres to match the spacing.
    pub fn centers(&self, spacing: Spacing) -> Vec<f64> {
        self.edges
            .windows(2)
            .map(|w| match spacing {
                Spacing::Linear => 0.5 * (w[0] + w[1]),
                Spacing::Log => math::sqrt(w[0] * w[1]),
            })
            .collect()
    }

    pub fn trapped_fraction(&self) -> f64 {
        self.trapped as f64 / self.total as f64
    }
}

pub fn exit_time_histogram(records: &[ExitRecord], bins: &BinSpec) -> Result<ExitTimePdf> {
    if bins.count == 0 {
        return Err(Error::InvalidParameter {
            name: "bins",
            reason: "count must be positive",
        });
    }
    let times: Vec<f64> = records.iter().filter(|r| r.detected()).map(|r| r.exit_time).collect();
    if times.is_empty() {
        return Err(Error::NoDetectedRecords);
    }
    let (mut lo, mut hi) = bins.range.unwrap_or_else(|| {
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    if lo == hi {
        lo *= 1.0 - 1e-6;
        hi *= 1.0 + 1e-6;
    }
    let axis = AxisSpec {
        name: "T".into(),
        min: lo,
        max: hi,
        count: bins.count + 1,
        spacing: bins.spacing,
    };
    axis.validate()?;
    let edges = axis.values();
    let mut counts = alloc::vec![0u64; bins.count];
    let (mut underflow, mut overflow) = (0, 0);
    for &t in &times {
        if t < lo {
            underflow += 1;
        } else if t > hi {
            overflow += 1;
        } else {
            let k = edges.partition_point(|&e| e <= t).clamp(1, bins.count);
            counts[k - 1] += 1;
        }
    }
    let trapped = records.iter().filter(|r| r.trapped()).count() as u64;
    let failed = records.iter().filter(|r| r.failure.is_some()).count() as u64;
    let total = times.len() as u64 + trapped;
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let density = mass
        .iter()
        .zip(edges.windows(2))
        .map(|(m, w)| m / (w[1] - w[0]))
        .collect();
    Ok(ExitTimePdf {
        edges,
        counts,
        mass,
        density,
        total,
        trapped,
        failed,
        underflow,
        overflow,
    })
}

/// Straight-line fit of `ln density` against a transformed exit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    /// Power-law exponent or exponential rate (negative for decay).
    pub slope: f64,
    pub intercept: f64,
    /// Sum of squared residuals of `ln density`.
    pub residual: f64,
    pub bins: usize,
}

pub const MIN_FIT_BINS: usize = 5;

fn fit_tail(pdf: &ExitTimePdf, spacing: Spacing, range: (f64, f64), abscissa: impl Fn(f64) -> f64) -> Result<TailFit> {
    let pts: Vec<(f64, f64)> = pdf
        .centers(spacing)
        .into_iter()
        .zip(&pdf.density)
        .filter(|&(t, &d)| t >= range.0 && t <= range.1 && d > 0.0)
        .map(|(t, &d)| (abscissa(t), math::ln(d)))
        .collect();
    if pts.len() < MIN_FIT_BINS {
        return Err(Error::InsufficientBins {
            needed: MIN_FIT_BINS,
            found: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    Ok(TailFit {
        slope,
        intercept,
        residual,
        bins: pts.len(),
    })
}

/// Power-law exponent `gamma` of `P(T) ~ T^gamma` from bins whose centre lies
/// in `range`; empty bins are skipped.
pub fn tail_exponent(pdf: &ExitTimePdf, spacing: Spacing, range: (f64, f64)) -> Result<TailFit> {
    fit_tail(pdf, spacing, range, math::ln)
}

/// Exponential fit `P(T) ~ exp(slope T)` over the same bins as
/// [`tail_exponent`], for comparing residuals.
pub fn exponential_tail(pdf: &ExitTimePdf, spacing: Spacing, range: (f64, f64)) -> Result<TailFit> {
    fit_tail(pdf, spacing, range, |t| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p0: f64, t: f64, detector: Detector, m: u32) -> ExitRecord {
        ExitRecord {
            p0,
            exit_time: t,
            detector,
            m,
            drift_flagged: false,
            failure: None,
        }
    }

    #[test]
    fn default_geometry_nodes() {
        let g = CavityGeometry::default();
        g.validate().unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 1);
        assert!((nodes[0] - PI / 2.0).abs() < 1e-15);
        let wide = CavityGeometry {
            x_left: -2.0 * PI,
            x_right: 2.0 * PI,
            central_node: PI / 2.0,
        };
        assert_eq!(wide.nodes().len(), 4);
    }

    #[test]
    fn classification() {
        assert_eq!(
            classify_trajectory(&rec(1.0, 10.0, Detector::Right, 1)),
            Classification::Trajectory { m: 1 }
        );
        assert_eq!(
            classify_trajectory(&rec(1.0, 2e4, Detector::None, 3)),
            Classification::Trapped
        );
    }

    #[test]
    fn singular_rule_uses_local_median_and_floor() {
        let mut rs: Vec<_> = (0..30).map(|i| rec(i as f64, 300.0, Detector::Right, 1)).collect();
        rs[10].exit_time = 5000.0;
        rs[20].exit_time = 1500.0;
        rs[25].detector = Detector::None;
        let s = singular_points(&rs, &SingularityRule::default());
        assert!(s[10]);
        assert!(!s[20], "below the floor");
        assert!(s[25]);
        assert_eq!(s.iter().filter(|&&b| b).count(), 2);
    }

    #[test]
    fn analyse_splits_smooth_and_unresolved() {
        let mut rs: Vec<_> = (0..12).map(|i| rec(i as f64, 100.0, Detector::Right, 1)).collect();
        for r in &mut rs[6..] {
            r.m = 2;
        }
        let mut node = ZoomNode::new(0.0, 11.0, 12, 0);
        node.analyse(rs, &SingularityRule::default());
        assert_eq!(node.unresolved, [(5.0, 6.0)]);
        assert_eq!(node.smooth, [(0.0, 5.0), (6.0, 11.0)]);
    }

    #[test]
    fn constant_stretch_has_no_unresolved_parts() {
        let rs: Vec<_> = (0..50)
            .map(|i| rec(i as f64, 100.0 + i as f64, Detector::Left, 0))
            .collect();
        let mut node = ZoomNode::new(0.0, 49.0, 50, 0);
        node.analyse(rs, &SingularityRule::default());
        assert!(node.unresolved.is_empty());
        assert_eq!(node.smooth, [(0.0, 49.0)]);
    }

    #[test]
    fn identical_times_fill_one_bin() {
        let rs: Vec<_> = (0..7).map(|i| rec(i as f64, 42.0, Detector::Right, 1)).collect();
        for spacing in [Spacing::Linear, Spacing::Log] {
            let pdf = exit_time_histogram(
                &rs,
                &BinSpec {
                    count: 10,
                    spacing,
                    range: None,
                },
            )
            .unwrap();
            assert_eq!(pdf.counts.iter().filter(|&&c| c > 0).count(), 1);
            assert_eq!(pdf.mass.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn histogram_needs_a_detection() {
        let rs = [rec(1.0, 2e4, Detector::None, 0)];
        let bins = BinSpec {
            count: 3,
            spacing: Spacing::Linear,
            range: None,
        };
        assert_eq!(exit_time_histogram(&rs, &bins), Err(Error::NoDetectedRecords));
    }

    #[test]
    fn too_few_bins_for_a_fit() {
        let rs: Vec<_> = (1..=4)
            .map(|i| rec(i as f64, 100.0 * i as f64, Detector::Right, 1))
            .collect();
        let pdf = exit_time_histogram(
            &rs,
            &BinSpec {
                count: 4,
                spacing: Spacing::Log,
                range: None,
            },
        )
        .unwrap();
        assert!(matches!(
            tail_exponent(&pdf, Spacing::Log, (0.0, 1e9)),
            Err(Error::InsufficientBins { needed: 5, .. })
        ));
    }
}
