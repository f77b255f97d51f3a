//! Explicit Runge-Kutta 8(5,3) stepper with step-size control and dense output.

use alloc::vec;
use alloc::vec::Vec;

use super::tableau::{A, B, C, D, E3, E5, STAGES, STAGES_EXTENDED};
use super::{Interpolant, OdeSystem};
use crate::math;
use crate::{Error, Result};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub rhs_evals: u64,
    pub accepted: u64,
    pub rejected: u64,
}

/// Dense output over one accepted step: a degree-7 polynomial per component.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    t_old: f64,
    h: f64,
    y_old: Vec<f64>,
    /// Seven coefficient rows of length `n`, row-major.
    coeffs: Vec<f64>,
}

impl DenseSegment {
    pub fn t_old(&self) -> f64 {
        self.t_old
    }

    pub fn t_new(&self) -> f64 {
        self.t_old + self.h
    }
}

impl Interpolant for DenseSegment {
    fn dim(&self) -> usize {
        self.y_old.len()
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let n = self.y_old.len();
        let x = (t - self.t_old) / self.h;
        let x1 = 1.0 - x;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (k, row) in (0..7).rev().enumerate() {
                acc += self.coeffs[row * n + i];
                acc *= if k % 2 == 0 { x } else { x1 };
            }
            *o = self.y_old[i] + acc;
        }
    }
}

/// `out = base + h * sum_j a[j] k_j` over the first `s` stage rows.
fn combine(base: &[f64], k: &[f64], a: &[f64], s: usize, h: f64, out: &mut [f64]) {
    let n = base.len();
    out.copy_from_slice(base);
    for (j, &aj) in a.iter().enumerate().take(s) {
        if aj != 0.0 {
            let ha = h * aj;
            for (o, kj) in out.iter_mut().zip(&k[j * n..(j + 1) * n]) {
                *o += ha * kj;
            }
        }
    }
}

/// Adaptive stepper bound to one system. The last accepted step stays
/// available for dense evaluation until the next call to [`Dop853::step`].
pub struct Dop853<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    n: usize,
    rtol: f64,
    atol: f64,
    h_max: f64,
    t: f64,
    y: Vec<f64>,
    /// Derivative at `(t, y)`; first-same-as-last with the previous step.
    f: Vec<f64>,
    h_abs: f64,
    t_old: f64,
    y_old: Vec<f64>,
    h_old: f64,
    /// Stage derivatives, `STAGES_EXTENDED` rows of length `n`.
    k: Vec<f64>,
    y_new: Vec<f64>,
    work: Vec<f64>,
    /// Error-estimate scratch rows.
    e5: Vec<f64>,
    e3: Vec<f64>,
    dense: DenseSegment,
    dense_valid: bool,
    stats: StepStats,
}

impl<'a, S: OdeSystem + ?Sized> Dop853<'a, S> {
    pub fn new(sys: &'a S, t0: f64, y0: &[f64], rtol: f64, atol: f64, h_max: f64) -> Result<Self> {
        let n = sys.dim();
        if y0.len() != n {
            return Err(Error::InvalidParameter {
                name: "y0",
                reason: "length does not match the system dimension",
            });
        }
        if !(rtol > 0.0 && atol > 0.0 && h_max > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tolerances",
                reason: "rtol, atol and max_step must be positive",
            });
        }
        let mut f = vec![0.0; n];
        sys.eval(t0, y0, &mut f);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: t0 });
        }
        let mut stepper = Self {
            sys,
            n,
            rtol,
            atol,
            h_max,
            t: t0,
            y: y0.to_vec(),
            f,
            h_abs: 0.0,
            t_old: t0,
            y_old: y0.to_vec(),
            h_old: 0.0,
            k: vec![0.0; STAGES_EXTENDED * n],
            y_new: vec![0.0; n],
            work: vec![0.0; n],
            e5: vec![0.0; n],
            e3: vec![0.0; n],
            dense: DenseSegment {
                t_old: t0,
                h: 0.0,
                y_old: vec![0.0; n],
                coeffs: vec![0.0; 7 * n],
            },
            dense_valid: false,
            stats: StepStats {
                rhs_evals: 1,
                ..StepStats::default()
            },
        };
        stepper.h_abs = stepper.initial_step();
        Ok(stepper)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t_old(&self) -> f64 {
        self.t_old
    }

    pub fn y_old(&self) -> &[f64] {
        &self.y_old
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// Replace the current state at the current time, e.g. after a
    /// renormalisation. The step-size proposal is kept.
    pub fn reset_state(&mut self, y: &[f64]) -> Result<()> {
        self.y.copy_from_slice(y);
        self.sys.eval(self.t, &self.y, &mut self.f);
        self.stats.rhs_evals += 1;
        self.dense_valid = false;
        if self.f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: self.t });
        }
        Ok(())
    }

    fn rms_scaled(&self, v: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for (vi, yi) in v.iter().zip(y) {
            let sc = self.atol + yi.abs() * self.rtol;
            s += (vi / sc) * (vi / sc);
        }
        math::sqrt(s / self.n as f64)
    }

    fn initial_step(&mut self) -> f64 {
        let d0 = self.rms_scaled(&self.y, &self.y);
        let d1 = self.rms_scaled(&self.f, &self.y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.h_max);
        for i in 0..self.n {
            self.work[i] = self.y[i] + h0 * self.f[i];
        }
        let mut f1 = vec![0.0; self.n];
        self.sys.eval(self.t + h0, &self.work, &mut f1);
        self.stats.rhs_evals += 1;
        for (a, b) in f1.iter_mut().zip(&self.f) {
            *a -= b;
        }
        let d2 = self.rms_scaled(&f1, &self.y) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            math::powf(0.01 / d1.max(d2), 1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(self.h_max)
    }

    /// Trial step of size `h`; fills `y_new` and all stage rows including the
    /// derivative at the new point (row `STAGES`). Returns the scaled error norm.
    fn trial(&mut self, h: f64) -> f64 {
        let n = self.n;
        self.k[..n].copy_from_slice(&self.f);
        for s in 1..STAGES {
            combine(&self.y, &self.k, &A[s], s, h, &mut self.work);
            let row = &mut self.k[s * n..(s + 1) * n];
            self.sys.eval(self.t + C[s] * h, &self.work, row);
        }
        combine(&self.y, &self.k, &B, STAGES, h, &mut self.y_new);
        {
            let row = &mut self.k[STAGES * n..(STAGES + 1) * n];
            self.sys.eval(self.t + h, &self.y_new, row);
        }
        self.stats.rhs_evals += STAGES as u64;

        self.e5.fill(0.0);
        self.e3.fill(0.0);
        for j in 0..=STAGES {
            let row = &self.k[j * n..(j + 1) * n];
            if E5[j] != 0.0 {
                for (e, kj) in self.e5.iter_mut().zip(row) {
                    *e += E5[j] * kj;
                }
            }
            if E3[j] != 0.0 {
                for (e, kj) in self.e3.iter_mut().zip(row) {
                    *e += E3[j] * kj;
                }
            }
        }
        let mut err5 = 0.0;
        let mut err3 = 0.0;
        for i in 0..n {
            let scale = self.atol + self.y[i].abs().max(self.y_new[i].abs()) * self.rtol;
            let (a, b) = (self.e5[i] / scale, self.e3[i] / scale);
            err5 += a * a;
            err3 += b * b;
        }
        if err5 == 0.0 && err3 == 0.0 {
            return 0.0;
        }
        let denom = err5 + 0.01 * err3;
        h.abs() * err5 / math::sqrt(denom * n as f64)
    }

    /// Take one accepted step, never passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<()> {
        let min_step = 10.0 * (next_up(self.t) - self.t);
        let mut h_abs = self.h_abs.min(self.h_max).max(min_step);
        let mut rejected = false;
        loop {
            if h_abs < min_step {
                return Err(Error::StepSizeUnderflow { t: self.t, h: h_abs });
            }
            let mut h = h_abs;
            let mut t_new = self.t + h;
            let clipped = t_new >= t_limit;
            if clipped {
                t_new = t_limit;
                h = t_new - self.t;
            }
            let err = self.trial(h);
            if !err.is_finite() || self.y_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t: self.t });
            }
            if err < 1.0 {
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * math::powf(err, ERROR_EXPONENT)).min(MAX_FACTOR)
                };
                if rejected {
                    factor = factor.min(1.0);
                }
                // a step shortened to hit t_limit says nothing about the natural size
                self.h_abs = if clipped { h_abs.max(h * factor) } else { h * factor };
                self.stats.accepted += 1;
                core::mem::swap(&mut self.y_old, &mut self.y);
                core::mem::swap(&mut self.y, &mut self.y_new);
                self.f.copy_from_slice(&self.k[STAGES * self.n..(STAGES + 1) * self.n]);
                self.t_old = self.t;
                self.h_old = h;
                self.t = t_new;
                self.dense_valid = false;
                return Ok(());
            }
            self.stats.rejected += 1;
            rejected = true;
            h_abs = h * (SAFETY * math::powf(err, ERROR_EXPONENT)).max(MIN_FACTOR);
        }
    }

    /// Dense output over the last accepted step.
    pub fn dense(&mut self) -> &DenseSegment {
        if !self.dense_valid {
            self.build_dense();
        }
        &self.dense
    }

    fn build_dense(&mut self) {
        let n = self.n;
        let h = self.h_old;
        for s in STAGES + 1..STAGES_EXTENDED {
            combine(&self.y_old, &self.k, &A[s], s, h, &mut self.work);
            let row = &mut self.k[s * n..(s + 1) * n];
            self.sys.eval(self.t_old + C[s] * h, &self.work, row);
        }
        self.stats.rhs_evals += (STAGES_EXTENDED - STAGES - 1) as u64;

        let coeffs = &mut self.dense.coeffs;
        for i in 0..n {
            let dy = self.y[i] - self.y_old[i];
            let f_old = self.k[i];
            coeffs[i] = dy;
            coeffs[n + i] = h * f_old - dy;
            coeffs[2 * n + i] = 2.0 * dy - h * (self.f[i] + f_old);
            for (r, d_row) in D.iter().enumerate() {
                let mut acc = 0.0;
                for (j, &d) in d_row.iter().enumerate() {
                    if d != 0.0 {
                        acc += d * self.k[j * n + i];
                    }
                }
                coeffs[(3 + r) * n + i] = h * acc;
            }
        }
        self.dense.t_old = self.t_old;
        self.dense.h = h;
        self.dense.y_old.copy_from_slice(&self.y_old);
        self.dense_valid = true;
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Harmonic;
    impl OdeSystem for Harmonic {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0] + libm::cos(t);
        }
    }

    #[test]
    fn tableau_row_sums_match_nodes() {
        for s in 1..STAGES_EXTENDED {
            let sum: f64 = A[s].iter().sum();
            assert!((sum - C[s]).abs() < 1e-13, "stage {s}");
        }
        assert!((B.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let mut st = Dop853::new(&Harmonic, 0.0, &[1.0, 0.0], 1e-11, 1e-13, 1.0).unwrap();
        let t_end = 20.0 * core::f64::consts::PI;
        while st.t() < t_end {
            st.step(t_end).unwrap();
        }
        assert_eq!(st.t(), t_end);
        assert!((st.y()[0] - 1.0).abs() < 1e-9);
        assert!(st.y()[1].abs() < 1e-9);
    }

    #[test]
    fn dense_output_tracks_solution() {
        let mut st = Dop853::new(&Harmonic, 0.0, &[1.0, 0.0], 1e-10, 1e-12, 0.5).unwrap();
        let mut out = [0.0; 2];
        let mut worst: f64 = 0.0;
        while st.t() < 10.0 {
            st.step(10.0).unwrap();
            let seg = st.dense();
            for k in 0..=10 {
                let t = seg.t_old() + (seg.t_new() - seg.t_old()) * k as f64 / 10.0;
                seg.eval(t, &mut out);
                worst = worst.max((out[0] - libm::cos(t)).abs());
                worst = worst.max((out[1] + libm::sin(t)).abs());
            }
        }
        assert!(worst < 1e-8, "dense error {worst}");
    }

    #[test]
    fn dense_endpoints_match_step() {
        let mut st = Dop853::new(&Decay, 0.0, &[2.0], 1e-9, 1e-12, 0.3).unwrap();
        st.step(5.0).unwrap();
        let (t0, t1) = (st.t_old(), st.t());
        let y0 = st.y_old()[0];
        let y1 = st.y()[0];
        let seg = st.dense();
        let mut out = [0.0];
        seg.eval(t0, &mut out);
        assert!((out[0] - y0).abs() < 1e-15);
        seg.eval(t1, &mut out);
        assert!((out[0] - y1).abs() < 1e-14);
    }

    #[test]
    fn tighter_tolerance_is_more_accurate() {
        let exact = |t: f64| {
            // y' = -y + cos t, y(0) = 2
            0.5 * (libm::cos(t) + libm::sin(t)) + 1.5 * libm::exp(-t)
        };
        let mut errs = alloc::vec::Vec::new();
        for rtol in [1e-6, 1e-9, 1e-12] {
            let mut st = Dop853::new(&Decay, 0.0, &[2.0], rtol, rtol * 1e-2, 1.0).unwrap();
            while st.t() < 8.0 {
                st.step(8.0).unwrap();
            }
            errs.push((st.y()[0] - exact(8.0)).abs());
        }
        assert!(errs[2] < errs[0]);
        assert!(errs[2] < 1e-11);
    }
}
