//! Domain types, initial-state preparation and the integrals of motion.
//!
//! Triple `n` couples the product states `|2, n>` (excited atom, `n` photons)
//! and `|1, n+1>` (ground atom, `n+1` photons). A ladder is stored densely for
//! `n = 0..=n_max`.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::math;
use crate::{Error, Result};

/// Largest photon-number tail that may be discarded by truncation.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Physical control parameters in units of the vacuum Rabi frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Atom-field detuning `(omega_a - omega_f) / Omega_0`.
    pub delta: f64,
    /// Recoil frequency `hbar k^2 / (m Omega_0)`.
    pub alpha: f64,
    /// Highest retained photon-number manifold.
    pub n_max: usize,
}

impl ModelParams {
    pub fn new(delta: f64, alpha: f64, n_max: usize) -> Result<Self> {
        let params = Self { delta, alpha, n_max };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "must be positive and finite",
            });
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "delta",
                reason: "must be finite",
            });
        }
        if self.n_max < 1 {
            return Err(Error::InvalidParameter {
                name: "n_max",
                reason: "must be at least 1",
            });
        }
        Ok(())
    }

    /// Parameters with `n_max` picked by [`FieldPreparation::default_truncation`].
    pub fn for_field(delta: f64, alpha: f64, field: &FieldPreparation) -> Result<Self> {
        Self::new(delta, alpha, field.default_truncation()?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlochTriple {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl BlochTriple {
    pub const ZERO: Self = Self { u: 0.0, v: 0.0, z: 0.0 };

    pub const fn new(u: f64, v: f64, z: f64) -> Self {
        Self { u, v, z }
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.u * self.u + self.v * self.v + self.z * self.z)
    }
}

/// Classical centre-of-mass pair plus the quantum ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    /// Position in units of the inverse wave number.
    pub x: f64,
    /// Momentum in units of the photon momentum.
    pub p: f64,
    pub ladder: Vec<BlochTriple>,
}

impl HybridState {
    pub fn n_max(&self) -> usize {
        self.ladder.len().saturating_sub(1)
    }

    /// Flat layout `[x, p, u_0, v_0, z_0, u_1, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 + 3 * self.ladder.len());
        out.push(self.x);
        out.push(self.p);
        for t in &self.ladder {
            out.extend_from_slice(&[t.u, t.v, t.z]);
        }
        out
    }

    /// Inverse of [`HybridState::to_vec`]; trailing elements that do not form a
    /// whole triple are ignored.
    pub fn from_slice(y: &[f64]) -> Self {
        let ladder = y[2..]
            .chunks_exact(3)
            .map(|c| BlochTriple::new(c[0], c[1], c[2]))
            .collect();
        Self {
            x: y[0],
            p: y[1],
            ladder,
        }
    }
}

/// Initial quantum state of the cavity mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldPreparation {
    Fock { n: usize },
    Coherent { mean: f64 },
    BoseEinstein { mean: f64 },
}

impl FieldPreparation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FieldPreparation::Fock { .. } => Ok(()),
            FieldPreparation::Coherent { mean } | FieldPreparation::BoseEinstein { mean } => {
                if mean > 0.0 && mean.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "mean",
                        reason: "mean photon number must be positive",
                    })
                }
            }
        }
    }

    /// Probability of finding `n` photons.
    pub fn photon_probability(&self, n: usize) -> f64 {
        match *self {
            FieldPreparation::Fock { n: k } => {
                if n == k {
                    1.0
                } else {
                    0.0
                }
            }
            FieldPreparation::Coherent { mean } => {
                let nf = n as f64;
                math::exp(-mean + nf * math::ln(mean) - math::ln_gamma(nf + 1.0))
            }
            FieldPreparation::BoseEinstein { mean } => {
                let nf = n as f64;
                math::exp(nf * math::ln(mean) - (nf + 1.0) * math::ln(1.0 + mean))
            }
        }
    }

    /// Probability mass above `n_max`, summed directly term by term.
    pub fn tail_probability(&self, n_max: usize) -> f64 {
        match *self {
            FieldPreparation::Fock { n } => {
                if n > n_max {
                    1.0
                } else {
                    0.0
                }
            }
            FieldPreparation::BoseEinstein { mean } => {
                // geometric tail in closed form
                let r = mean / (1.0 + mean);
                math::exp((n_max as f64 + 1.0) * math::ln(r))
            }
            FieldPreparation::Coherent { mean } => {
                let mut tail = 0.0;
                let mut n = n_max + 1;
                loop {
                    let p = self.photon_probability(n);
                    tail += p;
                    // past the mode the terms decrease monotonically
                    if (n as f64) > mean && p < tail * 1e-17 {
                        break;
                    }
                    if p == 0.0 && (n as f64) > mean {
                        break;
                    }
                    n += 1;
                }
                tail
            }
        }
    }

    /// Smallest `n_max` whose discarded tail is below [`TAIL_TOLERANCE`].
    pub fn default_truncation(&self) -> Result<usize> {
        self.validate()?;
        match *self {
            FieldPreparation::Fock { n } => Ok(n.max(1)),
            FieldPreparation::Coherent { .. } | FieldPreparation::BoseEinstein { .. } => {
                let mut n_max = 1;
                while self.tail_probability(n_max) >= TAIL_TOLERANCE {
                    n_max += 1;
                    if n_max > 1_000_000 {
                        return Err(Error::InvalidParameter {
                            name: "mean",
                            reason: "photon distribution too wide to truncate",
                        });
                    }
                }
                Ok(n_max)
            }
        }
    }
}

/// Initial electronic state of the atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AtomPreparation {
    Excited,
    /// `|a|^2 = (1 + z_in)/2`, `|b|^2 = (1 - z_in)/2`, no initial coherence.
    Superposition {
        z_in: f64,
    },
}

impl AtomPreparation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AtomPreparation::Excited => Ok(()),
            AtomPreparation::Superposition { z_in } => {
                if (-1.0..=1.0).contains(&z_in) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "z_in",
                        reason: "initial inversion must lie in [-1, 1]",
                    })
                }
            }
        }
    }

    /// Initial inversion of the atom.
    pub fn inversion(&self) -> f64 {
        match *self {
            AtomPreparation::Excited => 1.0,
            AtomPreparation::Superposition { z_in } => z_in,
        }
    }
}

/// Bloch triple of the amplitude pair `a` (on `|2,n>`) and `b` (on `|1,n+1>`).
pub fn bloch_from_amplitudes(a: Complex64, b: Complex64) -> BlochTriple {
    let ab = a * b.conj();
    BlochTriple {
        u: 2.0 * ab.re,
        v: -2.0 * ab.im,
        z: a.norm_sqr() - b.norm_sqr(),
    }
}

pub fn prepare_initial_state(
    field: &FieldPreparation,
    atom: &AtomPreparation,
    x0: f64,
    p0: f64,
    n_max: usize,
) -> Result<HybridState> {
    field.validate()?;
    atom.validate()?;
    let mut ladder = vec![BlochTriple::ZERO; n_max + 1];
    match (*field, *atom) {
        (FieldPreparation::Fock { n }, atom) => {
            if n > n_max {
                return Err(Error::FockAboveTruncation { n, n_max });
            }
            let z_in = atom.inversion();
            let excited = (1.0 + z_in) / 2.0;
            let ground = (1.0 - z_in) / 2.0;
            if n == 0 {
                if ground != 0.0 {
                    return Err(Error::MissingLowerTriple { n });
                }
            } else {
                ladder[n - 1].z = -ground;
            }
            ladder[n].z = excited;
        }
        (field, AtomPreparation::Excited) => {
            let tail = field.tail_probability(n_max);
            if tail >= TAIL_TOLERANCE {
                return Err(Error::TruncationTail {
                    n_max,
                    tail,
                    limit: TAIL_TOLERANCE,
                });
            }
            for (n, t) in ladder.iter_mut().enumerate() {
                t.z = field.photon_probability(n);
            }
        }
        (_, AtomPreparation::Superposition { .. }) => {
            return Err(Error::UnsupportedPreparation(
                "superposition atoms are only defined for Fock fields",
            ));
        }
    }
    Ok(HybridState { x: x0, p: p0, ladder })
}

/// Total atomic population inversion `sum_n z_n`.
pub fn population_inversion(state: &HybridState) -> f64 {
    state.ladder.iter().map(|t| t.z).sum()
}

/// Total energy of the hybrid system; conserved by the hybrid flow.
pub fn energy_integral(state: &HybridState, params: &ModelParams) -> f64 {
    let c = math::cos(state.x);
    let mut coupling = 0.0;
    let mut inversion = 0.0;
    for (n, t) in state.ladder.iter().enumerate() {
        coupling += math::sqrt(n as f64 + 1.0) * t.u;
        inversion += t.z;
    }
    0.5 * params.alpha * state.p * state.p - coupling * c - 0.5 * params.delta * inversion
}

/// Energy of the motionless Jaynes-Cummings system at fixed mode amplitude `f`.
pub fn jc_energy_integral(ladder: &[BlochTriple], delta: f64, f: f64) -> f64 {
    let mut coupling = 0.0;
    let mut inversion = 0.0;
    for (n, t) in ladder.iter().enumerate() {
        coupling += math::sqrt(n as f64 + 1.0) * t.u;
        inversion += t.z;
    }
    coupling * f - 0.5 * delta * inversion
}

/// Per-manifold Bloch radii `R_n` and their sum.
pub fn bloch_norms(state: &HybridState) -> (Vec<f64>, f64) {
    let norms: Vec<f64> = state.ladder.iter().map(BlochTriple::norm).collect();
    let total = norms.iter().sum();
    (norms, total)
}

/// Everything needed to start one trajectory: parameters, preparations and
/// the initial classical pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub delta: f64,
    pub alpha: f64,
    /// `None` picks [`FieldPreparation::default_truncation`].
    pub n_max: Option<usize>,
    pub field: FieldPreparation,
    pub atom: AtomPreparation,
    pub x0: f64,
    pub p0: f64,
}

impl Scenario {
    pub fn params(&self) -> Result<ModelParams> {
        let n_max = match self.n_max {
            Some(n) => n,
            None => self.field.default_truncation()?,
        };
        ModelParams::new(self.delta, self.alpha, n_max)
    }

    pub fn initial_state(&self, params: &ModelParams) -> Result<HybridState> {
        prepare_initial_state(&self.field, &self.atom, self.x0, self.p0, params.n_max)
    }

    /// Parameters and initial state together.
    pub fn prepare(&self) -> Result<(ModelParams, HybridState)> {
        let params = self.params()?;
        let state = self.initial_state(&params)?;
        Ok((params, state))
    }
}
