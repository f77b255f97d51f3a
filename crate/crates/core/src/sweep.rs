//! Fan-out of independent tasks with results kept in index order.

use alloc::vec::Vec;

/// Runs `f(0..n)` and returns the results in index order, however the work is
/// scheduled.
pub trait Executor: Sync {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every task on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// How grid points are spaced along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    /// Uniform in `log10`; both ends must be positive.
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    pub name: alloc::string::String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl AxisSpec {
    pub fn linear(name: &str, min: f64, max: f64, count: usize) -> Self {
        Self {
            name: name.into(),
            min,
            max,
            count,
            spacing: Spacing::Linear,
        }
    }

    pub fn log(name: &str, min: f64, max: f64, count: usize) -> Self {
        Self {
            spacing: Spacing::Log,
            ..Self::linear(name, min, max, count)
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |reason| Err(crate::Error::InvalidParameter { name: "axis", reason });
        if self.count == 0 {
            return bad("count must be positive");
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.max < self.min {
            return bad("bounds must be finite with min <= max");
        }
        if self.count > 1 && self.max == self.min {
            return bad("a multi-point axis needs min < max");
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return bad("log spacing needs positive bounds");
        }
        Ok(())
    }

    /// Grid value `i` of `count`; the ends are hit exactly.
    pub fn value(&self, i: usize) -> f64 {
        if self.count == 1 {
            return self.min;
        }
        if i + 1 == self.count {
            return self.max;
        }
        let s = i as f64 / (self.count - 1) as f64;
        match self.spacing {
            Spacing::Linear => self.min + s * (self.max - self.min),
            Spacing::Log => {
                let (a, b) = (crate::math::log10(self.min), crate::math::log10(self.max));
                crate::math::powf(10.0, a + s * (b - a))
            }
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_keeps_order() {
        let v = Sequential.map_indexed(5, |i| i * i);
        assert_eq!(v, [0, 1, 4, 9, 16]);
    }

    #[test]
    fn axis_ends_are_exact() {
        let a = AxisSpec::log("alpha", 1e-4, 1e-2, 16);
        let v = a.values();
        assert_eq!(v[0], 1e-4);
        assert_eq!(v[15], 1e-2);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        let l = AxisSpec::linear("delta", -2.0, 2.0, 5);
        assert_eq!(l.values(), [-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn axis_validation() {
        assert!(AxisSpec::log("a", 0.0, 1.0, 3).validate().is_err());
        assert!(AxisSpec::linear("a", 1.0, 0.0, 3).validate().is_err());
        assert!(AxisSpec::linear("a", 1.0, 1.0, 1).validate().is_ok());
    }
}
