//! Central finite differences.
//!
//! The analytic gradients and Jacobians in this crate are the easiest place
//! to introduce a transcription error, so every one of them is checked
//! against these routines in the test suites, and the linearization module
//! exposes a verified entry point built on them.

use nalgebra::{DMatrix, DVector};

use crate::real::Real;

/// Central-difference gradient of a scalar function.
pub fn gradient<T: Real, F>(f: F, x: &DVector<T>, h: T) -> DVector<T>
where
    F: Fn(&DVector<T>) -> T,
{
    let mut g = DVector::zeros(x.len());
    let two = T::from_f64_lossy(2.0);
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (two * h);
    }
    g
}

/// Central-difference Jacobian of a vector function.
pub fn jacobian<T: Real, F>(f: F, x: &DVector<T>, h: T) -> DMatrix<T>
where
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let two = T::from_f64_lossy(2.0);
    let f0 = f(x);
    let mut j = DMatrix::zeros(f0.len(), x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (f(&xp) - f(&xm)) / (two * h);
        j.set_column(i, &col);
    }
    j
}

/// Step size scaled to the argument: `h0 * max(1, |x|)`.
pub fn scaled_step<T: Real>(x: &DVector<T>, h0: T) -> T {
    h0 * x.norm().max(T::one())
}

/// Relative Frobenius distance `|a - b| / max(|a|, floor)`.
pub fn relative_error<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let denom = a.norm().max(T::one());
    (a - b).norm() / denom
}
