//! Adaptive integration of the model equations with event location and
//! conservation monitoring.
//!
//! The stepper is the 8th-order Dormand-Prince pair with a 7th-order dense
//! output ([`dop853`]). [`integrate`] drives it over `[0, t_max]`, samples the
//! solution on a requested grid, locates sign changes of event functions on the
//! dense interpolant and stops at the first terminal event.

pub mod dop853;
mod tableau;

use alloc::vec::Vec;

use crate::dynamics::{pack, unpack, Layout, ModelSystem, RhsKind, StateView};
use crate::math;
use crate::model::{bloch_norms, energy_integral, jc_energy_integral, HybridState, ModelParams};
use crate::{Error, Result};

pub use dop853::{DenseSegment, Dop853, StepStats};

/// Drift of any integral of motion above this marks a trajectory as suspect.
pub const DRIFT_WARNING: f64 = 1e-6;

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<S: OdeSystem + ?Sized> OdeSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (**self).eval(t, y, dy)
    }
}

/// Continuous representation of a solution over one step.
pub trait Interpolant {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, out: &mut [f64]);
}

/// Cubic Hermite interpolant through two points with derivatives.
#[derive(Debug, Clone)]
pub struct CubicHermite {
    pub t0: f64,
    pub t1: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
}

impl Interpolant for CubicHermite {
    fn dim(&self) -> usize {
        self.y0.len()
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for (i, o) in out.iter_mut().enumerate() {
            *o = h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
    }
}

/// Error tolerances and step cap shared by every driver in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// `None` uses [`default_max_step`] for the highest carried level.
    pub max_step: Option<f64>,
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        IntegratorConfig::new(1.0).with_tolerances(*self).validate()
    }

    pub fn max_step_for(&self, top_level: usize) -> f64 {
        self.max_step.unwrap_or_else(|| default_max_step(top_level))
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: None,
        }
    }
}

/// Where [`integrate`] records samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// Initial and final states only.
    Endpoints,
    /// Every `dt` from zero up to the stopping time.
    Uniform { dt: f64 },
    /// The given strictly increasing times that fall before the stopping time.
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// `None` uses [`default_max_step`] for the highest carried level.
    pub max_step: Option<f64>,
    pub t_max: f64,
    pub output: Output,
}

impl IntegratorConfig {
    pub fn new(t_max: f64) -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: None,
            t_max,
            output: Output::Endpoints,
        }
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.rel_tol = tol.rel_tol;
        self.abs_tol = tol.abs_tol;
        self.max_step = tol.max_step;
        self
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
        }
    }

    pub fn with_output(mut self, output: Output) -> Self {
        self.output = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.rel_tol) || !positive(self.abs_tol) {
            return Err(Error::InvalidParameter {
                name: "tolerance",
                reason: "rel_tol and abs_tol must be positive",
            });
        }
        if !positive(self.t_max) {
            return Err(Error::InvalidParameter {
                name: "t_max",
                reason: "must be positive",
            });
        }
        if let Some(h) = self.max_step {
            if !positive(h) {
                return Err(Error::InvalidParameter {
                    name: "max_step",
                    reason: "must be positive",
                });
            }
        }
        match &self.output {
            Output::Endpoints => {}
            Output::Uniform { dt } => {
                if !positive(*dt) {
                    return Err(Error::InvalidParameter {
                        name: "output.dt",
                        reason: "must be positive",
                    });
                }
            }
            Output::Times(ts) => {
                if ts.iter().any(|t| !t.is_finite() || *t < 0.0) || ts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidParameter {
                        name: "output.times",
                        reason: "must be non-negative and strictly increasing",
                    });
                }
            }
        }
        Ok(())
    }

    /// Step cap for a system whose highest carried level is `top_level`.
    pub fn max_step_for(&self, top_level: usize) -> f64 {
        self.max_step.unwrap_or_else(|| default_max_step(top_level))
    }
}

/// `0.05 / sqrt(n + 1)`: a fraction of the fastest Rabi period at level `n`.
pub fn default_max_step(top_level: usize) -> f64 {
    0.05 / math::sqrt(top_level as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Any,
}

impl Direction {
    /// Strict sign change from `g0` to `g1`. A start exactly on zero is not a
    /// crossing, so a root hit at a step end is reported once.
    pub fn crosses(self, g0: f64, g1: f64) -> bool {
        let rising = g0 < 0.0 && g1 >= 0.0;
        let falling = g0 > 0.0 && g1 <= 0.0;
        match self {
            Direction::Rising => rising,
            Direction::Falling => falling,
            Direction::Any => rising || falling,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EventFunction {
    /// `x - target`.
    Position {
        target: f64,
    },
    /// Sum of `v_n` over the ladder.
    SumV,
    Custom(fn(&StateView<'_>, f64) -> f64),
}

impl EventFunction {
    pub fn eval(&self, view: &StateView<'_>, t: f64) -> f64 {
        match *self {
            EventFunction::Position { target } => view.x() - target,
            EventFunction::SumV => view.sum_v(),
            EventFunction::Custom(g) => g(view, t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EventSpec {
    pub function: EventFunction,
    pub direction: Direction,
    pub terminal: bool,
}

impl EventSpec {
    pub fn new(function: EventFunction, direction: Direction, terminal: bool) -> Self {
        Self {
            function,
            direction,
            terminal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: HybridState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub t: f64,
    /// Index into the event list passed to [`integrate`].
    pub event: usize,
    pub state: HybridState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Horizon,
    /// Stopped by the terminal event with this index.
    Event(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: RhsKind,
    pub samples: Vec<Sample>,
    /// Sorted by time.
    pub events: Vec<EventHit>,
    pub termination: Termination,
    pub final_t: f64,
    pub final_state: HybridState,
    pub stats: StepStats,
    /// Some integral of motion drifted by more than [`DRIFT_WARNING`]
    /// between the initial and the final state.
    pub drift_flagged: bool,
}

/// Largest drifts of the integrals of motion along a trajectory's samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConservationReport {
    pub energy: f64,
    /// Largest drift of any single `R_n`.
    pub level_norm: f64,
    pub total_norm: f64,
}

impl ConservationReport {
    pub fn max(&self) -> f64 {
        self.energy.max(self.level_norm).max(self.total_norm)
    }
}

struct Integrals {
    energy: f64,
    norms: Vec<f64>,
    total: f64,
}

fn integrals(kind: RhsKind, state: &HybridState, params: &ModelParams) -> Integrals {
    let energy = match kind {
        RhsKind::JaynesCummings { f } => jc_energy_integral(&state.ladder, params.delta, f),
        _ => energy_integral(state, params),
    };
    let (norms, total) = bloch_norms(state);
    Integrals { energy, norms, total }
}

fn drift(a: &Integrals, b: &Integrals) -> ConservationReport {
    let level_norm = a
        .norms
        .iter()
        .zip(&b.norms)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    ConservationReport {
        energy: (a.energy - b.energy).abs(),
        level_norm,
        total_norm: (a.total - b.total).abs(),
    }
}

/// Drift of energy and Bloch norms over the samples, measured against the first.
pub fn conservation_report(traj: &Trajectory, params: &ModelParams) -> ConservationReport {
    let Some(first) = traj.samples.first() else {
        return ConservationReport::default();
    };
    let reference = integrals(traj.kind, &first.state, params);
    let mut report = ConservationReport::default();
    for s in &traj.samples[1..] {
        let d = drift(&reference, &integrals(traj.kind, &s.state, params));
        report.energy = report.energy.max(d.energy);
        report.level_norm = report.level_norm.max(d.level_norm);
        report.total_norm = report.total_norm.max(d.total_norm);
    }
    report
}

/// Root of an event function inside `[t_lo, t_hi]` on an interpolant.
///
/// Requires a sign change in the event's direction between the interpolated
/// end values; returns [`Error::NoSignChange`] otherwise.
pub fn locate_event<I: Interpolant + ?Sized>(
    t_lo: f64,
    t_hi: f64,
    interp: &I,
    layout: Layout,
    event: &EventSpec,
) -> Result<f64> {
    let mut buf = alloc::vec![0.0; interp.dim()];
    let mut g = |t: f64| {
        interp.eval(t, &mut buf);
        event.function.eval(&StateView::new(&buf, layout), t)
    };
    let g_lo = g(t_lo);
    let g_hi = g(t_hi);
    if !event.direction.crosses(g_lo, g_hi) {
        return Err(Error::NoSignChange { lo: t_lo, hi: t_hi });
    }
    Ok(find_root(t_lo, g_lo, t_hi, g_hi, g))
}

/// Illinois-modified regula falsi with a bisection fallback, for
/// `g(a) < 0 <= g(b)` or `g(a) > 0 >= g(b)`.
pub(crate) fn find_root(mut a: f64, mut ga: f64, mut b: f64, mut gb: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
    if gb == 0.0 {
        return b;
    }
    let tol = 1e-13 + 4.0 * f64::EPSILON * a.abs().max(b.abs());
    // -1: a was kept last time, +1: b was kept
    let mut side = 0i8;
    for iter in 0..200 {
        if b - a <= tol {
            break;
        }
        let mut c = (a * gb - b * ga) / (gb - ga);
        // every fourth iteration, or when the secant leaves the bracket, bisect
        if iter % 4 == 3 || !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let gc = g(c);
        if gc == 0.0 {
            return c;
        }
        if (gc < 0.0) == (ga < 0.0) {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    // report the end on the far side of the root so the crossing has happened
    b
}

/// Integrate `init` under `kind` from `t = 0` to `config.t_max` or the first
/// terminal event.
pub fn integrate(
    kind: RhsKind,
    params: &ModelParams,
    init: &HybridState,
    config: &IntegratorConfig,
    events: &[EventSpec],
) -> Result<Trajectory> {
    config.validate()?;
    let sys = ModelSystem::new(kind, params)?;
    let layout = sys.layout();
    let n_max = params.n_max;
    if init.ladder.len() != n_max + 1 {
        return Err(Error::InvalidParameter {
            name: "init",
            reason: "ladder length must be n_max + 1",
        });
    }
    let y0 = pack(init, layout)?;
    let h_max = config.max_step_for(layout.top_level());
    let mut stepper = Dop853::new(&sys, 0.0, &y0, config.rel_tol, config.abs_tol, h_max)?;

    let mut g_prev: Vec<f64> = events
        .iter()
        .map(|e| e.function.eval(&StateView::new(&y0, layout), 0.0))
        .collect();
    let mut g_new = g_prev.clone();

    let sample_times: Vec<f64> = match &config.output {
        Output::Endpoints => Vec::new(),
        Output::Uniform { dt } => {
            let count = math::floor(config.t_max / dt) as usize;
            (0..=count).map(|k| k as f64 * dt).collect()
        }
        Output::Times(ts) => ts.iter().copied().filter(|&t| t <= config.t_max).collect(),
    };
    let mut samples = Vec::new();
    let mut next_sample = 0;
    if matches!(config.output, Output::Endpoints) {
        samples.push(Sample {
            t: 0.0,
            state: init.clone(),
        });
    }
    while next_sample < sample_times.len() && sample_times[next_sample] <= 0.0 {
        samples.push(Sample {
            t: sample_times[next_sample],
            state: init.clone(),
        });
        next_sample += 1;
    }

    let mut hits: Vec<EventHit> = Vec::new();
    let mut termination = Termination::Horizon;
    let mut buf = alloc::vec![0.0; layout.dim()];
    let final_t;
    let mut final_y = y0.clone();

    loop {
        stepper.step(config.t_max)?;
        let t_old = stepper.t_old();
        let t_new = stepper.t();
        for (gv, e) in g_new.iter_mut().zip(events) {
            *gv = e.function.eval(&StateView::new(stepper.y(), layout), t_new);
        }

        // locate every crossing inside the step, then keep those up to the
        // earliest terminal one
        let mut step_hits: Vec<(f64, usize)> = Vec::new();
        for (i, e) in events.iter().enumerate() {
            if e.direction.crosses(g_prev[i], g_new[i]) {
                let seg = stepper.dense();
                let t_hit = find_root(t_old, g_prev[i], t_new, g_new[i], |t| {
                    seg.eval(t, &mut buf);
                    e.function.eval(&StateView::new(&buf, layout), t)
                });
                step_hits.push((t_hit, i));
            }
        }
        step_hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let stop = step_hits.iter().position(|&(_, i)| events[i].terminal).map(|k| {
            step_hits.truncate(k + 1);
            step_hits[k]
        });
        let t_end = match stop {
            Some((t, _)) => t,
            None => t_new,
        };

        for &(t, i) in &step_hits {
            let state = if t == t_new {
                unpack(stepper.y(), layout, n_max)
            } else {
                stepper.dense().eval(t, &mut buf);
                unpack(&buf, layout, n_max)
            };
            hits.push(EventHit { t, event: i, state });
        }

        while next_sample < sample_times.len() && sample_times[next_sample] <= t_end {
            let t = sample_times[next_sample];
            let state = if t == t_new {
                unpack(stepper.y(), layout, n_max)
            } else {
                stepper.dense().eval(t, &mut buf);
                unpack(&buf, layout, n_max)
            };
            samples.push(Sample { t, state });
            next_sample += 1;
        }

        if let Some((t, i)) = stop {
            termination = Termination::Event(i);
            final_t = t;
            if t == t_new {
                final_y.copy_from_slice(stepper.y());
            } else {
                stepper.dense().eval(t, &mut final_y);
            }
            break;
        }
        if t_new >= config.t_max {
            final_t = t_new;
            final_y.copy_from_slice(stepper.y());
            break;
        }
        core::mem::swap(&mut g_prev, &mut g_new);
    }

    let final_state = unpack(&final_y, layout, n_max);
    if matches!(config.output, Output::Endpoints) {
        samples.push(Sample {
            t: final_t,
            state: final_state.clone(),
        });
    }
    let d = drift(&integrals(kind, init, params), &integrals(kind, &final_state, params));
    Ok(Trajectory {
        kind,
        samples,
        events: hits,
        termination,
        final_t,
        final_state,
        stats: stepper.stats(),
        drift_flagged: d.max() > DRIFT_WARNING,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlochTriple;
    use core::f64::consts::PI;

    struct Line {
        speed: f64,
    }
    impl Interpolant for Line {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, t: f64, out: &mut [f64]) {
            out[0] = self.speed * t;
            out[1] = 0.0;
        }
    }

    const FLIGHT: Layout = Layout {
        first_level: 0,
        levels: 0,
    };

    #[test]
    fn linear_root() {
        let e = EventSpec::new(EventFunction::Position { target: 1.5 * PI }, Direction::Rising, true);
        let t = locate_event(90.0, 100.0, &Line { speed: 0.05 }, FLIGHT, &e).unwrap();
        assert!((t - 30.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn first_node_of_free_flight() {
        fn node(v: &StateView<'_>, _t: f64) -> f64 {
            libm::cos(v.x())
        }
        let e = EventSpec::new(EventFunction::Custom(node), Direction::Falling, false);
        let speed = 0.001 * 50.0;
        let t = locate_event(20.0, 40.0, &Line { speed }, FLIGHT, &e).unwrap();
        assert!((t - PI / (2.0 * speed)).abs() < 1e-10);
    }

    #[test]
    fn wrong_direction_is_rejected() {
        let e = EventSpec::new(EventFunction::Position { target: 1.0 }, Direction::Falling, true);
        let err = locate_event(0.0, 100.0, &Line { speed: 0.05 }, FLIGHT, &e).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    #[test]
    fn crossing_rule_is_strict_at_start() {
        assert!(Direction::Rising.crosses(-1.0, 0.0));
        assert!(!Direction::Rising.crosses(0.0, 1.0));
        assert!(Direction::Any.crosses(1.0, -1.0));
        assert!(!Direction::Falling.crosses(-1.0, 1.0));
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let p = |t: f64| t * t * t - 2.0 * t + 0.5;
        let dp = |t: f64| 3.0 * t * t - 2.0;
        let h = CubicHermite {
            t0: 0.0,
            t1: 2.0,
            y0: alloc::vec![p(0.0)],
            y1: alloc::vec![p(2.0)],
            f0: alloc::vec![dp(0.0)],
            f1: alloc::vec![dp(2.0)],
        };
        let mut out = [0.0];
        for k in 0..=20 {
            let t = 0.1 * k as f64;
            h.eval(t, &mut out);
            assert!((out[0] - p(t)).abs() < 1e-12);
        }
    }

    fn excited_fock(n: usize, p0: f64) -> HybridState {
        let mut ladder = alloc::vec![BlochTriple::ZERO; n + 1];
        ladder[n].z = 1.0;
        HybridState { x: 0.0, p: p0, ladder }
    }

    #[test]
    fn uniform_samples_are_strictly_increasing() {
        let params = ModelParams::new(0.3, 1e-3, 4).unwrap();
        let cfg = IntegratorConfig::new(5.0).with_output(Output::Uniform { dt: 0.5 });
        let traj = integrate(RhsKind::HybridLadder, &params, &excited_fock(4, 20.0), &cfg, &[]).unwrap();
        assert_eq!(traj.samples.len(), 11);
        assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(traj.termination, Termination::Horizon);
        assert_eq!(traj.final_t, 5.0);
        assert!(!traj.drift_flagged);
    }

    #[test]
    fn terminal_event_stops_and_trims_samples() {
        let params = ModelParams::new(0.0, 1e-3, 3).unwrap();
        let cfg = IntegratorConfig::new(200.0).with_output(Output::Uniform { dt: 10.0 });
        let exit = EventSpec::new(EventFunction::Position { target: 1.5 * PI }, Direction::Rising, true);
        let traj = integrate(RhsKind::HybridLadder, &params, &excited_fock(3, 50.0), &cfg, &[exit]).unwrap();
        assert_eq!(traj.termination, Termination::Event(0));
        assert!((traj.final_t - 30.0 * PI).abs() < 1e-8);
        assert_eq!(traj.events.len(), 1);
        assert!(traj.samples.last().unwrap().t <= traj.final_t);
    }

    #[test]
    fn empty_report_for_empty_samples() {
        let params = ModelParams::new(0.0, 1e-3, 1).unwrap();
        let traj = Trajectory {
            kind: RhsKind::HybridLadder,
            samples: Vec::new(),
            events: Vec::new(),
            termination: Termination::Horizon,
            final_t: 0.0,
            final_state: excited_fock(1, 0.0),
            stats: StepStats::default(),
            drift_flagged: false,
        };
        assert_eq!(conservation_report(&traj, &params), ConservationReport::default());
    }
}
