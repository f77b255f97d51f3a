//! Chaos diagnostics: maximal Lyapunov exponents and maps of them, Poincaré
//! sections, and the sensitivity of the final inversion to the initial one.

use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{pack, ModelSystem, RhsKind};
use crate::integrator::{
    integrate, Direction, Dop853, EventFunction, EventSpec, IntegratorConfig, OdeSystem, Tolerances,
};
use crate::math;
use crate::model::{population_inversion, AtomPreparation, FieldPreparation, HybridState, ModelParams, Scenario};
use crate::sweep::{AxisSpec, Executor, Spacing};
use crate::{Error, Result};

/// Separation growth within one renormalisation interval that counts as
/// leaving the linear regime.
const MAX_GROWTH: f64 = 1e6;
const MAX_RETRIES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConfig {
    pub d0: f64,
    pub renorm_interval: f64,
    pub t_total: f64,
    /// `None` discards the first 10% of `t_total`.
    pub t_discard: Option<f64>,
    pub tolerances: Tolerances,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            d0: 1e-8,
            renorm_interval: 1.0,
            t_total: 2e4,
            t_discard: None,
            tolerances: Tolerances::default(),
        }
    }
}

impl LyapunovConfig {
    pub fn discard(&self) -> f64 {
        self.t_discard.unwrap_or(0.1 * self.t_total)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return bad("d0", "must be positive");
        }
        if !(self.renorm_interval > 0.0 && self.renorm_interval.is_finite()) {
            return bad("renorm_interval", "must be positive");
        }
        let discard = self.discard();
        if !(discard >= 0.0 && self.t_total > discard && self.t_total.is_finite()) {
            return bad("t_total", "must exceed t_discard >= 0");
        }
        self.tolerances.validate()
    }
}

/// Fiducial and perturbed copies integrated as one system, so both see the
/// same step sequence.
struct Pair<'a> {
    sys: &'a ModelSystem,
    n: usize,
}

impl OdeSystem for Pair<'_> {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let (y1, y2) = y.split_at(self.n);
        let (d1, d2) = dy.split_at_mut(self.n);
        self.sys.eval(t, y1, d1);
        self.sys.eval(t, y2, d2);
    }
}

fn separation(y: &[f64], n: usize) -> f64 {
    let (a, b) = y.split_at(n);
    math::sqrt(a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum())
}

/// Maximal Lyapunov exponent by repeated renormalisation of a finite
/// separation (Benettin's method).
///
/// The perturbation starts along `(1, ..., 1) / sqrt(dim)` over the packed
/// state `(x, p, triples...)`. If the separation grows by more than a factor
/// of `1e6` within one interval, the interval is halved and the run restarted.
pub fn max_lyapunov(rhs: RhsKind, init: &HybridState, params: &ModelParams, config: &LyapunovConfig) -> Result<f64> {
    config.validate()?;
    let sys = ModelSystem::new(rhs, params)?;
    let y0 = pack(init, sys.layout())?;
    let mut interval = config.renorm_interval;
    for _ in 0..=MAX_RETRIES {
        match benettin(&sys, &y0, interval, config) {
            Err(Error::SeparationOverflow { .. }) => interval *= 0.5,
            other => return other,
        }
    }
    Err(Error::SeparationOverflow { retries: MAX_RETRIES })
}

fn benettin(sys: &ModelSystem, y0: &[f64], interval: f64, config: &LyapunovConfig) -> Result<f64> {
    let n = y0.len();
    let pair = Pair { sys, n };
    let mut y = vec![0.0; 2 * n];
    let offset = config.d0 / math::sqrt(n as f64);
    for i in 0..n {
        y[i] = y0[i];
        y[n + i] = y0[i] + offset;
    }
    let tol = &config.tolerances;
    let h_max = tol.max_step_for(sys.layout().top_level());
    let mut stepper = Dop853::new(&pair, 0.0, &y, tol.rel_tol, tol.abs_tol, h_max)?;
    let discard = config.discard();
    let mut log_sum = 0.0;
    let mut kept = 0.0;
    let mut k = 1u64;
    let mut t_prev = 0.0;
    loop {
        let target = (k as f64 * interval).min(config.t_total);
        while stepper.t() < target {
            stepper.step(target)?;
        }
        let d = separation(stepper.y(), n);
        if !d.is_finite() || d > MAX_GROWTH * config.d0 {
            return Err(Error::SeparationOverflow { retries: 0 });
        }
        if t_prev >= discard {
            log_sum += math::ln(d / config.d0);
            kept += target - t_prev;
        }
        y.copy_from_slice(stepper.y());
        let scale = config.d0 / d;
        for i in 0..n {
            y[n + i] = y[i] + (y[n + i] - y[i]) * scale;
        }
        stepper.reset_state(&y)?;
        if target >= config.t_total {
            break;
        }
        t_prev = target;
        k += 1;
    }
    if kept <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "t_discard",
            reason: "leaves no renormalisation interval to average",
        });
    }
    Ok(log_sum / kept)
}

/// Scenario entry varied along a map axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapParameter {
    Delta,
    Alpha,
    /// Fock photon number (rounded) or mean photon number.
    PhotonNumber,
    Momentum,
}

impl MapParameter {
    pub fn name(&self) -> &'static str {
        match self {
            MapParameter::Delta => "delta",
            MapParameter::Alpha => "alpha",
            MapParameter::PhotonNumber => "n",
            MapParameter::Momentum => "p0",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            MapParameter::Delta,
            MapParameter::Alpha,
            MapParameter::PhotonNumber,
            MapParameter::Momentum,
        ]
        .into_iter()
        .find(|p| p.name() == name)
    }

    pub fn apply(&self, scenario: &mut Scenario, value: f64) {
        match self {
            MapParameter::Delta => scenario.delta = value,
            MapParameter::Alpha => scenario.alpha = value,
            MapParameter::Momentum => scenario.p0 = value,
            MapParameter::PhotonNumber => {
                scenario.field = match scenario.field {
                    FieldPreparation::Fock { .. } => FieldPreparation::Fock {
                        n: math::floor(value.max(0.0) + 0.5) as usize,
                    },
                    FieldPreparation::Coherent { .. } => FieldPreparation::Coherent { mean: value },
                    FieldPreparation::BoseEinstein { .. } => FieldPreparation::BoseEinstein { mean: value },
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapAxis {
    pub parameter: MapParameter,
    pub spec: AxisSpec,
}

impl MapAxis {
    pub fn new(parameter: MapParameter, min: f64, max: f64, count: usize, spacing: Spacing) -> Self {
        let mut spec = AxisSpec::linear(parameter.name(), min, max, count);
        spec.spacing = spacing;
        Self { parameter, spec }
    }
}

/// Scalar values over a two-parameter grid, stored row by row: the value at
/// `(ix, iy)` is `values[iy * x.count + ix]`. Failed cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub x: MapAxis,
    pub y: MapAxis,
    pub values: Vec<Option<f64>>,
}

impl GridMap {
    pub fn shape(&self) -> (usize, usize) {
        (self.x.spec.count, self.y.spec.count)
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        self.values[iy * self.x.spec.count + ix]
    }

    /// Values with the x index fixed.
    pub fn column(&self, ix: usize) -> Vec<Option<f64>> {
        (0..self.y.spec.count).map(|iy| self.get(ix, iy)).collect()
    }

    pub fn row(&self, iy: usize) -> &[Option<f64>] {
        let nx = self.x.spec.count;
        &self.values[iy * nx..(iy + 1) * nx]
    }
}

/// The scenario for one map cell.
pub fn map_cell(x: &MapAxis, y: &MapAxis, base: &Scenario, ix: usize, iy: usize) -> Scenario {
    let mut s = *base;
    x.parameter.apply(&mut s, x.spec.value(ix));
    y.parameter.apply(&mut s, y.spec.value(iy));
    s
}

/// Lyapunov exponent on every cell of a grid. Cells are independent; a
/// failing cell is recorded as `None`.
pub fn lyapunov_map<E: Executor>(
    x: &MapAxis,
    y: &MapAxis,
    base: &Scenario,
    config: &LyapunovConfig,
    executor: &E,
) -> Result<GridMap> {
    x.spec.validate()?;
    y.spec.validate()?;
    config.validate()?;
    let nx = x.spec.count;
    let values = executor.map_indexed(nx * y.spec.count, |k| {
        let cell = map_cell(x, y, base, k % nx, k / nx);
        let (params, init) = cell.prepare().ok()?;
        max_lyapunov(RhsKind::for_field(&cell.field), &init, &params, config).ok()
    });
    Ok(GridMap {
        x: x.clone(),
        y: y.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionPoint {
    /// Position wrapped to `[-pi, pi)`.
    pub x: f64,
    pub p: f64,
    /// Index of the initial state that produced the point.
    pub trajectory: usize,
    pub t: f64,
}

/// The default surface of section: `sum_n v_n = 0`, crossed upwards.
pub fn default_section() -> EventSpec {
    EventSpec::new(EventFunction::SumV, Direction::Rising, false)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub points: Vec<SectionPoint>,
    /// Trajectories whose integration failed, with the error.
    pub failures: Vec<(usize, Error)>,
}

/// Crossings of `section` by each trajectory up to `t_max`. The section is
/// always treated as non-terminal. Event functions that vanish identically
/// never register, because a crossing needs a strict sign change.
pub fn poincare_section<E: Executor>(
    inits: &[HybridState],
    rhs: RhsKind,
    params: &ModelParams,
    t_max: f64,
    section: &EventSpec,
    tolerances: &Tolerances,
    executor: &E,
) -> Section {
    let event = EventSpec {
        terminal: false,
        ..*section
    };
    let config = IntegratorConfig::new(t_max).with_tolerances(*tolerances);
    let runs = executor.map_indexed(inits.len(), |i| {
        integrate(rhs, params, &inits[i], &config, &[event]).map(|traj| {
            traj.events
                .iter()
                .map(|hit| SectionPoint {
                    x: math::wrap_angle(hit.state.x),
                    p: hit.state.p,
                    trajectory: i,
                    t: hit.t,
                })
                .collect::<Vec<_>>()
        })
    });
    let mut out = Section::default();
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(points) => out.points.extend(points),
            Err(e) => out.failures.push((i, e)),
        }
    }
    out
}

/// Number of occupied boxes when `[-pi, pi) x [p_lo, p_hi]` is cut into
/// `bins x bins` boxes. Points outside the momentum range are ignored.
pub fn box_occupancy(points: &[SectionPoint], p_lo: f64, p_hi: f64, bins: usize) -> usize {
    use core::f64::consts::TAU;
    let mut grid = vec![false; bins * bins];
    let to_bin = |v: f64, lo: f64, width: f64| {
        let b = math::floor((v - lo) / width * bins as f64);
        (b.max(0.0) as usize).min(bins - 1)
    };
    for pt in points {
        if pt.p < p_lo || pt.p > p_hi {
            continue;
        }
        let ix = to_bin(pt.x, -core::f64::consts::PI, TAU);
        let ip = to_bin(pt.p, p_lo, p_hi - p_lo);
        grid[ip * bins + ix] = true;
    }
    grid.iter().filter(|&&b| b).count()
}

/// Final inversion observed at `tau_obs` for a Fock field of `n` photons and
/// an atom prepared with inversion `z_in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoutZinSetup {
    pub delta: f64,
    pub alpha: f64,
    pub n: usize,
    pub x0: f64,
    pub p0: f64,
    pub tau_obs: f64,
    pub tolerances: Tolerances,
}

impl ZoutZinSetup {
    pub fn scenario(&self, z_in: f64) -> Scenario {
        Scenario {
            delta: self.delta,
            alpha: self.alpha,
            n_max: None,
            field: FieldPreparation::Fock { n: self.n },
            atom: AtomPreparation::Superposition { z_in },
            x0: self.x0,
            p0: self.p0,
        }
    }

    pub fn z_out(&self, z_in: f64) -> Result<f64> {
        let scenario = self.scenario(z_in);
        let (params, init) = scenario.prepare()?;
        if self.tau_obs == 0.0 {
            return Ok(population_inversion(&init));
        }
        let config = IntegratorConfig::new(self.tau_obs).with_tolerances(self.tolerances);
        let traj = integrate(RhsKind::for_field(&scenario.field), &params, &init, &config, &[])?;
        Ok(population_inversion(&traj.final_state))
    }
}

/// `z_out` for every `z_in`; failed points are `None`.
pub fn zout_zin_scan<E: Executor>(z_in: &[f64], setup: &ZoutZinSetup, executor: &E) -> Result<Vec<Option<f64>>> {
    if !(setup.tau_obs >= 0.0 && setup.tau_obs.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "tau_obs",
            reason: "must be non-negative",
        });
    }
    Ok(executor.map_indexed(z_in.len(), |i| setup.z_out(z_in[i]).ok()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::Sequential;

    fn fock_scenario(delta: f64) -> Scenario {
        Scenario {
            delta,
            alpha: 1e-3,
            n_max: None,
            field: FieldPreparation::Fock { n: 10 },
            atom: AtomPreparation::Superposition { z_in: 0.0 },
            x0: 0.0,
            p0: 50.0,
        }
    }

    fn short(t_total: f64) -> LyapunovConfig {
        LyapunovConfig {
            t_total,
            ..LyapunovConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(LyapunovConfig::default().validate().is_ok());
        let mut c = LyapunovConfig::default();
        c.t_discard = Some(c.t_total);
        assert!(c.validate().is_err());
        c.t_discard = None;
        c.d0 = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn pair_system_duplicates_rhs() {
        let (params, init) = fock_scenario(0.4).prepare().unwrap();
        let sys = ModelSystem::new(RhsKind::FockReduced { n: 10 }, &params).unwrap();
        let y = pack(&init, sys.layout()).unwrap();
        let n = y.len();
        let mut yy = y.clone();
        yy.extend_from_slice(&y);
        let mut d = vec![0.0; 2 * n];
        Pair { sys: &sys, n }.eval(0.0, &yy, &mut d);
        assert_eq!(d[..n], d[n..]);
    }

    #[test]
    fn one_by_one_map_is_a_single_estimate() {
        let base = fock_scenario(0.4);
        let cfg = short(200.0);
        let x = MapAxis::new(MapParameter::Delta, 0.4, 0.4, 1, Spacing::Linear);
        let y = MapAxis::new(MapParameter::Alpha, 1e-3, 1e-3, 1, Spacing::Log);
        let map = lyapunov_map(&x, &y, &base, &cfg, &Sequential).unwrap();
        let (params, init) = base.prepare().unwrap();
        let direct = max_lyapunov(RhsKind::FockReduced { n: 10 }, &init, &params, &cfg).unwrap();
        assert_eq!(map.values, [Some(direct)]);
    }

    #[test]
    fn photon_axis_rounds_fock_numbers() {
        let mut s = fock_scenario(0.0);
        MapParameter::PhotonNumber.apply(&mut s, 6.6);
        assert_eq!(s.field, FieldPreparation::Fock { n: 7 });
        assert_eq!(MapParameter::from_name("p0"), Some(MapParameter::Momentum));
    }

    #[test]
    fn occupancy_counts_distinct_boxes() {
        let pt = |x, p| SectionPoint {
            x,
            p,
            trajectory: 0,
            t: 0.0,
        };
        let pts = [pt(0.0, 1.0), pt(0.01, 1.0), pt(-3.0, 0.0), pt(3.0, 2.0)];
        assert_eq!(box_occupancy(&pts, 0.0, 2.0, 4), 3);
    }

    #[test]
    fn zero_observation_time_returns_prepared_inversion() {
        let setup = ZoutZinSetup {
            delta: 0.4,
            alpha: 1e-3,
            n: 10,
            x0: 0.0,
            p0: 50.0,
            tau_obs: 0.0,
            tolerances: Tolerances::default(),
        };
        let z = [-1.0, -0.3, 0.0, 0.7, 1.0];
        let out = zout_zin_scan(&z, &setup, &Sequential).unwrap();
        for (zi, zo) in z.iter().zip(out) {
            let zo = zo.unwrap();
            assert!((zo - zi).abs() <= f64::EPSILON * zi.abs().max(0.5), "{zi} {zo}");
        }
    }
}
