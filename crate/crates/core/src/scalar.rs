//! Scalar abstraction for the analytical models.
//!
//! Timing, power and sweep arithmetic is written against [`Real`] so the same
//! model runs in `f32` (fast sweeps) or `f64` (reference reports).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Real")
    }

    fn count(v: u64) -> Self {
        Self::from_u64(v).expect("u64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Geometric mean of strictly positive values; `None` when empty or when a
/// value is not positive.
pub fn geomean<T: Real>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut n = 0u64;
    let mut log_sum = T::zero();
    for v in values {
        if !(v > T::zero()) || !v.is_finite() {
            return None;
        }
        log_sum = log_sum + v.ln();
        n += 1;
    }
    if n == 0 {
        return None;
    }
    Some((log_sum / T::count(n)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geomean_of_powers() {
        let g = geomean([1.0_f64, 4.0, 16.0]).unwrap();
        assert!((g - 4.0).abs() < 1e-12);
        let g32 = geomean([2.0_f32, 8.0]).unwrap();
        assert!((g32 - 4.0).abs() < 1e-5);
    }

    #[test]
    fn geomean_rejects_non_positive() {
        assert!(geomean([1.0_f64, 0.0]).is_none());
        assert!(geomean(Vec::<f64>::new()).is_none());
    }
}
