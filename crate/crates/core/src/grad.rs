//! Forward-mode differentiation.
//!
//! [`Dual<N>`] carries a value and `N` directional derivatives. Every model
//! in this crate (ODE right-hand sides, the solver, parameter transforms) is
//! written against the [`Scalar`] trait, so the same code runs on plain `f64`
//! for simulation and on `Dual<N>` when parameter sensitivities are needed.
//!
//! The tangent width is a compile-time constant. Callers with a runtime
//! parameter count pick the smallest supported width with
//! [`with_tangent_width!`](crate::with_tangent_width); unused slots stay zero.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Numeric type the solver and models are generic over.
///
/// A scalar is viewed as `PARTS` real components: component 0 is the value,
/// the rest are tangents. Linear operations with real coefficients act on
/// each component independently, which is what the implicit solver relies on.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + PartialEq
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign<f64>
    + Sum
{
    const PARTS: usize;

    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn part(&self, i: usize) -> f64;
    fn set_part(&mut self, i: usize, v: f64);

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// Smaller of the two; the left operand wins ties.
    fn min(self, other: Self) -> Self;
    /// Larger of the two; the left operand wins ties.
    fn max(self, other: Self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn is_finite(&self) -> bool {
        (0..Self::PARTS).all(|i| self.part(i).is_finite())
    }

    /// Saturating Hill activation `z / (k + z)`.
    fn hill(self, k: Self) -> Self {
        self / (k + self)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    const PARTS: usize = 1;

    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn part(&self, i: usize) -> f64 {
        debug_assert_eq!(i, 0);
        *self
    }
    #[inline]
    fn set_part(&mut self, i: usize, v: f64) {
        debug_assert_eq!(i, 0);
        *self = v;
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

/// Value plus `N` directional derivatives.
#[derive(Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub tangent: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub const fn constant(value: f64) -> Self {
        Self {
            value,
            tangent: [0.0; N],
        }
    }

    /// Variable seeded along basis direction `slot`.
    pub fn variable(value: f64, slot: usize) -> Self {
        let mut tangent = [0.0; N];
        tangent[slot] = 1.0;
        Self { value, tangent }
    }

    #[inline]
    fn chain(self, value: f64, deriv: f64) -> Self {
        let mut tangent = self.tangent;
        for t in &mut tangent {
            *t *= deriv;
        }
        Self { value, tangent }
    }

    pub fn try_div(self, rhs: Self) -> Result<Self> {
        if rhs.value == 0.0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self / rhs)
    }

    pub fn try_ln(self) -> Result<Self> {
        if self.value <= 0.0 || self.value.is_nan() {
            return Err(Error::LogDomain(self.value));
        }
        Ok(Scalar::ln(self))
    }

    pub fn powi(self, n: i32) -> Self {
        let v = self.value.powi(n);
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.value.powi(n - 1)
        };
        self.chain(v, d)
    }
}

impl<const N: usize> Default for Dual<N> {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl<const N: usize> Debug for Dual<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({:?}, {:?})", self.value, &self.tangent[..])
    }
}

impl<const N: usize> Display for Dual<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)?;
        for (i, t) in self.tangent.iter().enumerate() {
            if *t != 0.0 {
                write!(f, " + {t}ε{i}")?;
            }
        }
        Ok(())
    }
}

/// Seeds each value as an independent variable: element `i` gets the `i`-th
/// basis vector as its tangent.
///
/// # Panics
///
/// If `values.len() > N`.
pub fn lift_params<const N: usize>(values: &[f64]) -> Vec<Dual<N>> {
    assert!(
        values.len() <= N,
        "{} parameters do not fit a tangent width of {N}",
        values.len()
    );
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::variable(v, i))
        .collect()
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.value += rhs.value;
        for (a, b) in self.tangent.iter_mut().zip(rhs.tangent.iter()) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.value -= rhs.value;
        for (a, b) in self.tangent.iter_mut().zip(rhs.tangent.iter()) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut tangent = [0.0; N];
        for ((t, a), b) in tangent
            .iter_mut()
            .zip(self.tangent.iter())
            .zip(rhs.tangent.iter())
        {
            *t = a * rhs.value + self.value * b;
        }
        Self {
            value: self.value * rhs.value,
            tangent,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let value = self.value / rhs.value;
        let inv = 1.0 / rhs.value;
        let mut tangent = [0.0; N];
        for ((t, a), b) in tangent
            .iter_mut()
            .zip(self.tangent.iter())
            .zip(rhs.tangent.iter())
        {
            *t = (a - value * b) * inv;
        }
        Self { value, tangent }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.value = -self.value;
        for t in &mut self.tangent {
            *t = -*t;
        }
        self
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.value += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.value -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.value *= rhs;
        for t in &mut self.tangent {
            *t *= rhs;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(mut self, rhs: f64) -> Self {
        self.value /= rhs;
        for t in &mut self.tangent {
            *t /= rhs;
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> MulAssign<f64> for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: f64) {
        *self = *self * rhs;
    }
}

impl<const N: usize> DivAssign<f64> for Dual<N> {
    #[inline]
    fn div_assign(&mut self, rhs: f64) {
        *self = *self / rhs;
    }
}

impl<const N: usize> Sum for Dual<N> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::constant(0.0), |a, b| a + b)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    const PARTS: usize = N + 1;

    #[inline]
    fn constant(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }
    #[inline]
    fn part(&self, i: usize) -> f64 {
        if i == 0 {
            self.value
        } else {
            self.tangent[i - 1]
        }
    }
    #[inline]
    fn set_part(&mut self, i: usize, v: f64) {
        if i == 0 {
            self.value = v;
        } else {
            self.tangent[i - 1] = v;
        }
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }
    #[inline]
    fn abs(self) -> Self {
        // d|x|/dx at 0 taken as +1 (the branch x >= 0)
        if self.value < 0.0 {
            -self
        } else {
            self
        }
    }
    #[inline]
    fn min(self, other: Self) -> Self {
        if other.value < self.value {
            other
        } else {
            self
        }
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if other.value > self.value {
            other
        } else {
            self
        }
    }
}

/// Expands `$body` with `$n` bound to the smallest supported tangent width
/// that holds `$count` directions. Evaluates to `None` when `$count` exceeds
/// the widest supported width (64).
#[macro_export]
macro_rules! with_tangent_width {
    ($count:expr, $n:ident => $body:expr) => {{
        let count: usize = $count;
        // Widths fit a single perceptron (6 slots) and the 2+1 network (18).
        if count <= 6 {
            const $n: usize = 6;
            Some($body)
        } else if count <= 12 {
            const $n: usize = 12;
            Some($body)
        } else if count <= 18 {
            const $n: usize = 18;
            Some($body)
        } else if count <= 24 {
            const $n: usize = 24;
            Some($body)
        } else if count <= 32 {
            const $n: usize = 32;
            Some($body)
        } else if count <= 64 {
            const $n: usize = 64;
            Some($body)
        } else {
            None
        }
    }};
}

/// Largest parameter count [`with_tangent_width!`] supports.
pub const MAX_TANGENTS: usize = 64;

/// Outcome of comparing one gradient coordinate against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// False when one-sided differences disagree, i.e. the function has a
    /// kink (a min/max switch) within `h` of the point.
    pub smooth: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    /// Worst relative error over smooth coordinates.
    pub max_rel_error: f64,
    pub non_smooth: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative discrepancy used throughout the gradient audits.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// A coordinate is flagged non-smooth when the forward and backward
/// one-sided differences differ by more than `kink_tol` (relative); such
/// coordinates are reported but excluded from `max_rel_error`.
pub fn gradcheck<F>(
    f: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
    kink_tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::DimensionMismatch {
            expected: point.len(),
            got: analytic.len(),
        });
    }
    let f0 = f(point)?;
    let mut x = point.to_vec();
    let mut coords = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let fp = f(&x)?;
        x[i] = point[i] - h;
        let fm = f(&x)?;
        x[i] = point[i];
        let numeric = (fp - fm) / (2.0 * h);
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        let smooth = relative_error(forward, backward) <= kink_tol;
        coords.push(CoordCheck {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_error: relative_error(analytic[i], numeric),
            smooth,
        });
    }
    let max_rel_error = coords
        .iter()
        .filter(|c| c.smooth)
        .map(|c| c.rel_error)
        .fold(0.0, f64::max);
    let non_smooth = coords.iter().filter(|c| !c.smooth).count();
    Ok(GradCheckReport {
        coords,
        max_rel_error,
        non_smooth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lift_seeds_basis() {
        let d = lift_params::<2>(&[2.0, 3.0]);
        assert_eq!(d[0].value, 2.0);
        assert_eq!(d[0].tangent, [1.0, 0.0]);
        assert_eq!(d[1].tangent, [0.0, 1.0]);
        let single = lift_params::<1>(&[2.0]);
        assert_eq!(single[0], Dual { value: 2.0, tangent: [1.0] });
        assert!(lift_params::<3>(&[]).is_empty());
    }

    #[test]
    #[should_panic]
    fn lift_rejects_overflow() {
        lift_params::<1>(&[1.0, 2.0]);
    }

    #[test]
    fn square_derivative() {
        let x = Dual::<1>::variable(3.0, 0);
        assert_eq!((x * x).tangent[0], 6.0);
    }

    #[test]
    fn hill_quotient_rule() {
        let z = Dual::<1>::variable(0.8, 0);
        let k = Dual::constant(0.8);
        let y = z.hill(k);
        assert_relative_eq!(y.value, 0.5);
        assert_relative_eq!(y.tangent[0], 0.3125, max_relative = 1e-15);
        // central differences
        let h = 1e-6;
        let fd = ((0.8 + h) / (1.6 + h) - (0.8 - h) / (1.6 - h)) / (2.0 * h);
        assert_relative_eq!(y.tangent[0], fd, max_relative = 1e-8);
    }

    #[test]
    fn abs_branch() {
        let x = Dual::<1>::variable(-2.0, 0);
        assert_eq!(x.abs().tangent[0], -1.0);
        assert_eq!(x.abs().value, 2.0);
    }

    #[test]
    fn min_max_leftmost_on_ties() {
        let a = Dual::<2>::variable(1.0, 0);
        let b = Dual::<2>::variable(1.0, 1);
        assert_eq!(a.min(b).tangent, [1.0, 0.0]);
        assert_eq!(a.max(b).tangent, [1.0, 0.0]);
        assert_eq!(b.min(a).tangent, [0.0, 1.0]);
    }

    #[test]
    fn constant_has_zero_tangent() {
        let c = Dual::<3>::constant(4.2);
        let x = Dual::<3>::variable(1.5, 1);
        let y = (c * c).exp() / c + c.sqrt();
        assert_eq!(y.tangent, [0.0; 3]);
        assert_eq!((x * 0.0 + c).tangent, [0.0; 3]);
    }

    #[test]
    fn checked_errors() {
        let x = Dual::<1>::variable(1.0, 0);
        assert_eq!(x.try_div(Dual::constant(0.0)), Err(Error::DivisionByZero));
        assert_eq!(
            Dual::<1>::constant(-1.0).try_ln(),
            Err(Error::LogDomain(-1.0))
        );
        assert!(x.try_ln().is_ok());
    }

    #[test]
    fn elementary_functions_match_calculus() {
        let x = Dual::<1>::variable(0.7, 0);
        assert_relative_eq!(x.exp().tangent[0], 0.7f64.exp());
        assert_relative_eq!(Scalar::ln(x).tangent[0], 1.0 / 0.7);
        assert_relative_eq!(x.sqrt().tangent[0], 0.5 / 0.7f64.sqrt());
        assert_relative_eq!(x.powi(3).tangent[0], 3.0 * 0.49);
    }

    #[test]
    fn gradcheck_polynomial() {
        let f = |x: &[f64]| Ok(x[0].powi(3) + 2.0 * x[0] * x[1] - x[1].powi(2));
        let p = [1.3, -0.4];
        let g = [3.0 * 1.3f64.powi(2) + 2.0 * -0.4, 2.0 * 1.3 + 0.8];
        let rep = gradcheck(f, &p, &g, 1e-5, 1e-3).unwrap();
        assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
        assert_eq!(rep.non_smooth, 0);
    }

    #[test]
    fn gradcheck_flags_kink() {
        let f = |x: &[f64]| Ok(x[0].abs());
        let rep = gradcheck(f, &[0.0], &[1.0], 1e-4, 1e-3).unwrap();
        assert_eq!(rep.non_smooth, 1);
        assert!(!rep.coords[0].smooth);
        assert_eq!(rep.max_rel_error, 0.0);
    }

    #[test]
    fn width_dispatch() {
        assert_eq!(with_tangent_width!(18, N => N), Some(18));
        assert_eq!(with_tangent_width!(19, N => N), Some(24));
        assert_eq!(with_tangent_width!(0, N => N), Some(6));
        assert_eq!(with_tangent_width!(65, N => N), None);
    }
}
