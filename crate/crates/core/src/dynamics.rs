//! Equations of motion and their closed-form solutions.
//!
//! Three right-hand sides share one packed layout `[x, p, u, v, z, u, v, z, ...]`:
//!
//! * [`RhsKind::JaynesCummings`]: motionless atom at a fixed mode amplitude `f`;
//!   `x` and `p` are frozen.
//! * [`RhsKind::HybridLadder`]: classical motion coupled to the whole ladder.
//! * [`RhsKind::FockReduced`]: the same flow restricted to the two triples
//!   `n - 1` and `n` populated by a Fock field.
//!
//! Signs follow the standing-wave convention in which the coupling enters as
//! `+2 sqrt(n+1) z cos x` in `v'`. The motionless system keeps the generic
//! amplitude `f` as an argument, `v' = -delta u - 2 sqrt(n+1) f z`, so the
//! cavity shape `f = -cos x` maps one onto the other.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::integrator::OdeSystem;
use crate::math;
use crate::model::{BlochTriple, HybridState, ModelParams};
use crate::{Error, Result};

/// Which equations of motion to integrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhsKind {
    /// Motionless atom; `f` is the constant mode amplitude.
    JaynesCummings {
        f: f64,
    },
    HybridLadder,
    /// Fock field with `n` photons; only triples `n - 1` and `n` are carried.
    FockReduced {
        n: usize,
    },
}

/// Which slice of the ladder is carried in the packed vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Photon number of the first packed triple.
    pub first_level: usize,
    /// Number of packed triples.
    pub levels: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        2 + 3 * self.levels
    }

    /// Photon number of the last packed triple.
    pub fn top_level(&self) -> usize {
        self.first_level + self.levels - 1
    }
}

impl RhsKind {
    /// The cheapest exact flow for a field: the two-triple reduction for Fock
    /// states, the full ladder otherwise.
    pub fn for_field(field: &crate::model::FieldPreparation) -> Self {
        match *field {
            crate::model::FieldPreparation::Fock { n } => RhsKind::FockReduced { n },
            _ => RhsKind::HybridLadder,
        }
    }

    pub fn layout(&self, n_max: usize) -> Layout {
        match *self {
            RhsKind::JaynesCummings { .. } | RhsKind::HybridLadder => Layout {
                first_level: 0,
                levels: n_max + 1,
            },
            RhsKind::FockReduced { n: 0 } => Layout {
                first_level: 0,
                levels: 1,
            },
            RhsKind::FockReduced { n } => Layout {
                first_level: n - 1,
                levels: 2,
            },
        }
    }
}

/// Pack `state` into the flat vector for `layout`. Fails if the state has
/// population outside the packed levels.
pub fn pack(state: &HybridState, layout: Layout) -> Result<Vec<f64>> {
    let end = layout.first_level + layout.levels;
    if end > state.ladder.len() {
        return Err(Error::InvalidParameter {
            name: "state",
            reason: "ladder shorter than the requested layout",
        });
    }
    let outside = state.ladder[..layout.first_level]
        .iter()
        .chain(&state.ladder[end..])
        .any(|t| *t != BlochTriple::ZERO);
    if outside {
        return Err(Error::InvalidParameter {
            name: "state",
            reason: "reduced dynamics needs support only on the packed triples",
        });
    }
    let mut y = Vec::with_capacity(layout.dim());
    y.push(state.x);
    y.push(state.p);
    for t in &state.ladder[layout.first_level..end] {
        y.extend_from_slice(&[t.u, t.v, t.z]);
    }
    Ok(y)
}

/// Expand a packed vector back into a full ladder of `n_max + 1` triples.
pub fn unpack(y: &[f64], layout: Layout, n_max: usize) -> HybridState {
    let mut ladder = alloc::vec![BlochTriple::ZERO; n_max + 1];
    for (k, c) in y[2..].chunks_exact(3).enumerate() {
        ladder[layout.first_level + k] = BlochTriple::new(c[0], c[1], c[2]);
    }
    HybridState {
        x: y[0],
        p: y[1],
        ladder,
    }
}

/// Read-only view of a packed state, handed to event functions.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub y: &'a [f64],
    pub layout: Layout,
}

impl<'a> StateView<'a> {
    pub fn new(y: &'a [f64], layout: Layout) -> Self {
        Self { y, layout }
    }

    pub fn x(&self) -> f64 {
        self.y[0]
    }

    pub fn p(&self) -> f64 {
        self.y[1]
    }

    /// `(n, triple)` for every packed level.
    pub fn triples(&self) -> impl Iterator<Item = (usize, BlochTriple)> + 'a {
        let first = self.layout.first_level;
        self.y[2..]
            .chunks_exact(3)
            .enumerate()
            .map(move |(k, c)| (first + k, BlochTriple::new(c[0], c[1], c[2])))
    }

    pub fn sum_v(&self) -> f64 {
        self.y[2..].chunks_exact(3).map(|c| c[1]).sum()
    }

    pub fn inversion(&self) -> f64 {
        self.y[2..].chunks_exact(3).map(|c| c[2]).sum()
    }
}

/// A right-hand side bound to parameters and a layout, ready for the integrator.
#[derive(Debug, Clone)]
pub struct ModelSystem {
    kind: RhsKind,
    delta: f64,
    alpha: f64,
    layout: Layout,
    /// `sqrt(n + 1)` for every packed level.
    coupling: Vec<f64>,
}

impl ModelSystem {
    pub fn new(kind: RhsKind, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if let RhsKind::FockReduced { n } = kind {
            if n > params.n_max {
                return Err(Error::FockAboveTruncation { n, n_max: params.n_max });
            }
        }
        let layout = kind.layout(params.n_max);
        let coupling = (0..layout.levels)
            .map(|k| math::sqrt((layout.first_level + k) as f64 + 1.0))
            .collect();
        Ok(Self {
            kind,
            delta: params.delta,
            alpha: params.alpha,
            layout,
            coupling,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn kind(&self) -> RhsKind {
        self.kind
    }
}

impl OdeSystem for ModelSystem {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        match self.kind {
            RhsKind::JaynesCummings { f } => jc_kernel(self.delta, f, &self.coupling, y, dy),
            RhsKind::HybridLadder => hybrid_kernel(self.delta, self.alpha, &self.coupling, y, dy),
            RhsKind::FockReduced { n } if n >= 1 => fock_kernel(self.delta, self.alpha, n, y, dy),
            // Fock(0): only triple 0 exists, which is the hybrid flow on one level
            RhsKind::FockReduced { .. } => hybrid_kernel(self.delta, self.alpha, &self.coupling, y, dy),
        }
    }
}

#[inline]
fn jc_kernel(delta: f64, f: f64, coupling: &[f64], y: &[f64], dy: &mut [f64]) {
    dy[0] = 0.0;
    dy[1] = 0.0;
    for ((g, t), d) in coupling
        .iter()
        .zip(y[2..].chunks_exact(3))
        .zip(dy[2..].chunks_exact_mut(3))
    {
        let gf = 2.0 * g * f;
        d[0] = delta * t[1];
        d[1] = -delta * t[0] - gf * t[2];
        d[2] = gf * t[1];
    }
}

#[inline]
fn hybrid_kernel(delta: f64, alpha: f64, coupling: &[f64], y: &[f64], dy: &mut [f64]) {
    let (s, c) = math::sin_cos(y[0]);
    let mut force = 0.0;
    for ((g, t), d) in coupling
        .iter()
        .zip(y[2..].chunks_exact(3))
        .zip(dy[2..].chunks_exact_mut(3))
    {
        force += g * t[0];
        let gc = 2.0 * g * c;
        d[0] = delta * t[1];
        d[1] = -delta * t[0] + gc * t[2];
        d[2] = -gc * t[1];
    }
    dy[0] = alpha * y[1];
    dy[1] = -force * s;
}

/// The eight-equation Fock system written out term by term.
#[inline]
fn fock_kernel(delta: f64, alpha: f64, n: usize, y: &[f64], dy: &mut [f64]) {
    let sn = math::sqrt(n as f64);
    let sn1 = math::sqrt(n as f64 + 1.0);
    let (s, c) = math::sin_cos(y[0]);
    let (u_lo, v_lo, z_lo) = (y[2], y[3], y[4]);
    let (u_hi, v_hi, z_hi) = (y[5], y[6], y[7]);
    dy[0] = alpha * y[1];
    dy[1] = -(sn * u_lo + sn1 * u_hi) * s;
    dy[2] = delta * v_lo;
    dy[3] = -delta * u_lo + 2.0 * sn * z_lo * c;
    dy[4] = -2.0 * sn * v_lo * c;
    dy[5] = delta * v_hi;
    dy[6] = -delta * u_hi + 2.0 * sn1 * z_hi * c;
    dy[7] = -2.0 * sn1 * v_hi * c;
}

/// Derivative of a motionless ladder at fixed mode amplitude `f`.
pub fn rhs_jc(ladder: &[BlochTriple], params: &ModelParams, f: f64) -> Vec<BlochTriple> {
    ladder
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let gf = 2.0 * math::sqrt(n as f64 + 1.0) * f;
            BlochTriple {
                u: params.delta * t.v,
                v: -params.delta * t.u - gf * t.z,
                z: gf * t.v,
            }
        })
        .collect()
}

/// Derivative of the full hybrid state, returned in state form.
pub fn rhs_hybrid(state: &HybridState, params: &ModelParams) -> HybridState {
    let coupling: Vec<f64> = (0..state.ladder.len()).map(|n| math::sqrt(n as f64 + 1.0)).collect();
    let y = state.to_vec();
    let mut dy = alloc::vec![0.0; y.len()];
    hybrid_kernel(params.delta, params.alpha, &coupling, &y, &mut dy);
    HybridState::from_slice(&dy)
}

/// State of the reduced Fock system: motion plus triples `n - 1` and `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockState {
    pub x: f64,
    pub p: f64,
    pub lower: BlochTriple,
    pub upper: BlochTriple,
}

impl FockState {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.x,
            self.p,
            self.lower.u,
            self.lower.v,
            self.lower.z,
            self.upper.u,
            self.upper.v,
            self.upper.z,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            x: a[0],
            p: a[1],
            lower: BlochTriple::new(a[2], a[3], a[4]),
            upper: BlochTriple::new(a[5], a[6], a[7]),
        }
    }
}

/// Derivative of the eight-equation Fock system; `n` must be at least 1.
pub fn rhs_fock(state: &FockState, params: &ModelParams, n: usize) -> Result<FockState> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "the reduced Fock system needs n >= 1; Fock(0) carries triple 0 only",
        });
    }
    let y = state.to_array();
    let mut dy = [0.0; 8];
    fock_kernel(params.delta, params.alpha, n, &y, &mut dy);
    Ok(FockState::from_array(dy))
}

/// n-photon Rabi frequency `sqrt(delta^2 + 4 (n+1) f^2)`.
pub fn rabi_frequency(n: usize, delta: f64, f: f64) -> f64 {
    math::sqrt(delta * delta + 4.0 * (n as f64 + 1.0) * f * f)
}

/// Exact inversion `z(tau)` of the motionless system started from `ladder`.
///
/// This is the solution of [`rhs_jc`]: the coherence `u_n(0)` enters through
/// the conserved combination `2 sqrt(n+1) f u_n - delta z_n`.
pub fn jc_inversion_exact(ladder: &[BlochTriple], delta: f64, f: f64, tau: f64) -> f64 {
    let mut z = 0.0;
    for (n, t) in ladder.iter().enumerate() {
        let omega = rabi_frequency(n, delta, f);
        if omega == 0.0 {
            z += t.z;
            continue;
        }
        let g = 2.0 * math::sqrt(n as f64 + 1.0) * f;
        let (s, c) = math::sin_cos(omega * tau);
        let o2 = omega * omega;
        z += -t.u * delta * g * (1.0 - c) / o2 + t.v * g * s / omega + t.z * (delta * delta + g * g * c) / o2;
    }
    z
}

/// Exact resonant inversion for an atom injected at `x = 0` with no initial
/// coherence (`u_n(0) = v_n(0) = 0`); only the `z` entries of `ladder` are read.
pub fn resonant_inversion_exact(ladder: &[BlochTriple], alpha: f64, p0: f64, tau: f64) -> f64 {
    let speed = alpha * p0;
    // accumulated coupling phase per unit sqrt(n+1): int_0^tau 2 cos(speed s) ds
    let phase = if speed == 0.0 {
        2.0 * tau
    } else {
        2.0 * math::sin(speed * tau) / speed
    };
    ladder
        .iter()
        .enumerate()
        .map(|(n, t)| t.z * math::cos(math::sqrt(n as f64 + 1.0) * phase))
        .sum()
}

/// Exit time of a resonant atom injected at `x = 0`: it crosses `3 pi / 2`
/// moving right or `-pi / 2` moving left.
pub fn resonant_exit_time(p0: f64, alpha: f64) -> Result<f64> {
    if p0 > 0.0 {
        Ok(3.0 * PI / (2.0 * alpha * p0))
    } else if p0 < 0.0 {
        Ok(PI / (2.0 * alpha * -p0))
    } else {
        Err(Error::ZeroMomentum)
    }
}

/// Time over which an initial spread `delta_z_in` grows to `delta_z` at rate `lambda`.
pub fn predictability_horizon(lambda: f64, delta_z: f64, delta_z_in: f64) -> Result<f64> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: "must be positive",
        });
    }
    if !(delta_z_in > 0.0 && delta_z > delta_z_in) {
        return Err(Error::InvalidParameter {
            name: "delta_z",
            reason: "need delta_z > delta_z_in > 0",
        });
    }
    Ok(math::ln(delta_z / delta_z_in) / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{energy_integral, jc_energy_integral};
    use core::f64::consts::{E, FRAC_PI_2};
    use proptest::prelude::*;

    fn params(delta: f64, alpha: f64, n_max: usize) -> ModelParams {
        ModelParams::new(delta, alpha, n_max).unwrap()
    }

    #[test]
    fn jc_rhs_examples() {
        let p = params(0.0, 1e-3, 3);
        let ladder = [BlochTriple::new(0.3, 0.0, 0.1), BlochTriple::new(-0.2, 0.0, 0.4)];
        assert!(rhs_jc(&ladder, &p, 0.8).iter().all(|d| d.u == 0.0));

        let p = params(0.7, 1e-3, 3);
        let d = rhs_jc(&ladder, &p, 0.0);
        assert_eq!(d[0].v, -0.7 * 0.3);
        assert_eq!(d[1].z, 0.0);

        let p = params(0.0, 1e-3, 3);
        let d = rhs_jc(&[BlochTriple::new(0.0, 0.0, 1.0)], &p, 1.0);
        assert_eq!(d[0], BlochTriple::new(0.0, -2.0, 0.0));
    }

    #[test]
    fn hybrid_rhs_examples() {
        let p = params(0.4, 1e-3, 2);
        let free = HybridState {
            x: 0.3,
            p: 5.0,
            ladder: alloc::vec![
                BlochTriple::new(0.0, 0.2, 0.1),
                BlochTriple::new(0.0, -0.1, 0.3),
                BlochTriple::ZERO
            ],
        };
        assert_eq!(rhs_hybrid(&free, &p).p, 0.0);

        let at_origin = HybridState {
            x: 0.0,
            p: 5.0,
            ladder: alloc::vec![BlochTriple::new(0.3, 0.2, 0.1); 3],
        };
        assert_eq!(rhs_hybrid(&at_origin, &p).p, 0.0);

        let at_node = HybridState {
            x: FRAC_PI_2,
            ..at_origin.clone()
        };
        let d = rhs_hybrid(&at_node, &p);
        for (t, dt) in at_node.ladder.iter().zip(&d.ladder) {
            assert!((dt.v + 0.4 * t.u).abs() < 1e-15);
            assert!(dt.z.abs() < 1e-15);
        }
    }

    /// Straight transcription of the hybrid equations, evaluated with std math.
    fn hybrid_by_hand(s: &HybridState, delta: f64, alpha: f64) -> HybridState {
        let mut force = 0.0;
        let mut ladder = alloc::vec::Vec::new();
        for (n, t) in s.ladder.iter().enumerate() {
            let g = ((n + 1) as f64).sqrt();
            force += g * t.u;
            ladder.push(BlochTriple {
                u: delta * t.v,
                v: -delta * t.u + 2.0 * g * t.z * s.x.cos(),
                z: -2.0 * g * t.v * s.x.cos(),
            });
        }
        HybridState {
            x: alpha * s.p,
            p: -force * s.x.sin(),
            ladder,
        }
    }

    #[test]
    fn hybrid_matches_hand_evaluation() {
        let pts = [
            (0.37, 12.5, [0.1, -0.2, 0.3, 0.05, 0.4, -0.1]),
            (2.9, -40.0, [-0.3, 0.1, 0.2, 0.2, -0.1, 0.1]),
            (-1.2, 3.3, [0.0, 0.5, -0.5, 0.0, 0.0, 0.0]),
            (5.5, 64.2, [0.2, 0.2, 0.2, -0.2, -0.2, 0.1]),
            (0.001, 0.0, [0.45, 0.0, 0.05, 0.3, 0.3, -0.3]),
        ];
        let p = params(0.4, 1e-3, 1);
        for (x, mom, l) in pts {
            let s = HybridState {
                x,
                p: mom,
                ladder: alloc::vec![BlochTriple::new(l[0], l[1], l[2]), BlochTriple::new(l[3], l[4], l[5])],
            };
            let a = rhs_hybrid(&s, &p);
            let b = hybrid_by_hand(&s, 0.4, 1e-3);
            assert!((a.x - b.x).abs() < 1e-15 && (a.p - b.p).abs() < 1e-14);
            for (ta, tb) in a.ladder.iter().zip(&b.ladder) {
                assert!((ta.u - tb.u).abs() < 1e-14);
                assert!((ta.v - tb.v).abs() < 1e-14);
                assert!((ta.z - tb.z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fock_rhs_examples() {
        let p = params(0.0, 1e-3, 10);
        let s = FockState {
            x: 0.4,
            p: 20.0,
            lower: BlochTriple::new(0.0, 0.0, -0.5),
            upper: BlochTriple::new(0.0, 0.0, 0.5),
        };
        let d = rhs_fock(&s, &p, 10).unwrap();
        assert_eq!(d.p, 0.0);
        assert_eq!(d.lower.u, 0.0);
        assert_eq!(d.upper.u, 0.0);
        assert!(rhs_fock(&s, &p, 0).is_err());
    }

    #[test]
    fn rabi_frequency_values() {
        assert_eq!(rabi_frequency(0, 0.0, 1.0), 2.0);
        assert!((rabi_frequency(10, 0.4, 1.0) - 44.16f64.sqrt()).abs() < 1e-14);
        assert!((rabi_frequency(10, 0.4, 1.0) - 6.64530).abs() < 1e-5);
        assert_eq!(rabi_frequency(7, -0.3, 0.0), 0.3);
    }

    #[test]
    fn jc_exact_special_cases() {
        let ladder = [BlochTriple::new(0.1, -0.2, 0.3), BlochTriple::new(0.0, 0.4, -0.1)];
        assert!((jc_inversion_exact(&ladder, 0.3, 0.9, 0.0) - 0.2).abs() < 1e-15);

        let mut excited = alloc::vec![BlochTriple::ZERO; 11];
        excited[10].z = 1.0;
        for tau in [0.0, 0.7, 3.1, 25.0] {
            let want = (2.0 * 11f64.sqrt() * tau).cos();
            assert!((jc_inversion_exact(&excited, 0.0, 1.0, tau) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn jc_exact_matches_taylor_expansion_of_rhs() {
        // z(h) ~ z + h z' + h^2/2 z'' with z' and z'' from the ODE.
        let t = BlochTriple::new(0.3, -0.4, 0.5);
        let (delta, f) = (0.6, 0.8);
        let g = 2.0 * f;
        let zp = g * t.v;
        let zpp = g * (-delta * t.u - g * t.z);
        let h = 1e-4;
        let taylor = t.z + h * zp + 0.5 * h * h * zpp;
        let exact = jc_inversion_exact(&[t], delta, f, h);
        assert!((exact - taylor).abs() < 1e-11);
    }

    #[test]
    fn resonant_exact_properties() {
        let mut ladder = alloc::vec![BlochTriple::ZERO; 11];
        ladder[10].z = 1.0;
        assert_eq!(resonant_inversion_exact(&ladder, 1e-3, 50.0, 0.0), 1.0);
        let period = PI / (1e-3 * 50.0);
        assert!((period - 20.0 * PI).abs() < 1e-12);
        for tau in [3.0, 17.5, 41.0] {
            let a = resonant_inversion_exact(&ladder, 1e-3, 50.0, tau);
            let b = resonant_inversion_exact(&ladder, 1e-3, 50.0, tau + period);
            assert!((a - b).abs() < 1e-9);
        }
        for r in 0..4 {
            let v = resonant_inversion_exact(&ladder, 1e-3, 50.0, r as f64 * period);
            assert!((v - 1.0).abs() < 1e-9);
        }
        // p0 = 0 reduces to the motionless resonant solution with f = 1
        let a = resonant_inversion_exact(&ladder, 1e-3, 0.0, 2.3);
        let b = jc_inversion_exact(&ladder, 0.0, 1.0, 2.3);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn resonant_exit_times() {
        assert!((resonant_exit_time(50.0, 1e-3).unwrap() - 30.0 * PI).abs() < 1e-9);
        assert!((resonant_exit_time(50.0, 1e-3).unwrap() - 94.2478).abs() < 1e-4);
        assert!((resonant_exit_time(-50.0, 1e-3).unwrap() - 10.0 * PI).abs() < 1e-9);
        assert_eq!(resonant_exit_time(0.0, 1e-3), Err(Error::ZeroMomentum));
        // first node crossing for p0 = 50
        assert!((FRAC_PI_2 / (1e-3 * 50.0) - 31.4).abs() < 0.05);
    }

    #[test]
    fn predictability_values() {
        assert!((predictability_horizon(1.0, E, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let tp = predictability_horizon(0.5, 2.0, 1e-4).unwrap();
        assert!((tp - 2.0 * (2e4f64).ln()).abs() < 1e-12);
        assert!((tp - 19.81).abs() < 0.01);
        assert!(tp > 5.0 && tp < 50.0);
        assert!(predictability_horizon(0.0, 2.0, 1e-4).is_err());
        assert!(predictability_horizon(0.5, 1e-4, 1e-4).is_err());
        assert!(predictability_horizon(0.5, 1.0, -1.0).is_err());
    }

    #[test]
    fn reduced_layouts() {
        assert_eq!(
            RhsKind::FockReduced { n: 10 }.layout(10),
            Layout {
                first_level: 9,
                levels: 2
            }
        );
        assert_eq!(RhsKind::FockReduced { n: 0 }.layout(3).dim(), 5);
        assert_eq!(RhsKind::HybridLadder.layout(3).dim(), 14);
    }

    fn triple() -> impl Strategy<Value = BlochTriple> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(u, v, z)| BlochTriple::new(u, v, z))
    }

    proptest! {
        #[test]
        fn tangency_all_kinds(
            x in -10.0..10.0f64,
            mom in -80.0..80.0f64,
            delta in -2.0..2.0f64,
            f in -1.5..1.5f64,
            ladder in proptest::collection::vec(triple(), 2..6),
        ) {
            let p = params(delta, 1e-3, ladder.len() - 1);
            let s = HybridState { x, p: mom, ladder: ladder.clone() };
            let dh = rhs_hybrid(&s, &p);
            let dj = rhs_jc(&ladder, &p, f);
            for ((t, a), b) in ladder.iter().zip(&dh.ladder).zip(&dj) {
                let scale = 1.0 + delta.abs() + 2.0 * ((ladder.len()) as f64).sqrt() * (1.0 + f.abs());
                prop_assert!((t.u * a.u + t.v * a.v + t.z * a.z).abs() < 1e-14 * scale);
                prop_assert!((t.u * b.u + t.v * b.v + t.z * b.z).abs() < 1e-14 * scale);
            }
            let fs = FockState { x, p: mom, lower: ladder[0], upper: ladder[1] };
            let df = rhs_fock(&fs, &p, 1).unwrap();
            for (t, d) in [(fs.lower, df.lower), (fs.upper, df.upper)] {
                prop_assert!((t.u * d.u + t.v * d.v + t.z * d.z).abs() < 1e-13);
            }
        }

        #[test]
        fn energy_gradient_orthogonal_to_flow(
            x in -10.0..10.0f64,
            mom in -80.0..80.0f64,
            delta in -2.0..2.0f64,
            alpha in 1e-4..1e-2f64,
            ladder in proptest::collection::vec(triple(), 1..5),
        ) {
            let p = params(delta, alpha, ladder.len().max(2) - 1);
            let s = HybridState { x, p: mom, ladder: ladder.clone() };
            let d = rhs_hybrid(&s, &p);
            // grad W . f computed from the analytic partial derivatives
            let (sx, cx) = (x.sin(), x.cos());
            let mut dot = 0.0;
            let mut coupling = 0.0;
            for (n, (t, dt)) in ladder.iter().zip(&d.ladder).enumerate() {
                let g = ((n + 1) as f64).sqrt();
                coupling += g * t.u;
                dot += -g * cx * dt.u - 0.5 * delta * dt.z;
            }
            dot += coupling * sx * d.x + alpha * mom * d.p;
            prop_assert!(dot.abs() < 1e-11);
            let _ = energy_integral(&s, &p);
        }

        #[test]
        fn jc_energy_orthogonal_to_flow(
            delta in -2.0..2.0f64,
            f in -1.5..1.5f64,
            ladder in proptest::collection::vec(triple(), 1..5),
        ) {
            let p = params(delta, 1e-3, 1);
            let d = rhs_jc(&ladder, &p, f);
            let dot: f64 = d.iter().enumerate().map(|(n, dt)| {
                ((n + 1) as f64).sqrt() * f * dt.u - 0.5 * delta * dt.z
            }).sum();
            prop_assert!(dot.abs() < 1e-12);
            let _ = jc_energy_integral(&ladder, delta, f);
        }
    }
}
