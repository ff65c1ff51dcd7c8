//! Forward-mode dual numbers.
//!
//! A [`Dual`] carries a primal value together with its directional derivative
//! along one seed direction. The renderer and the residual builder are written
//! once against the [`Real`] trait and instantiated with `f64` for plain
//! evaluation or with `Dual` to obtain Jacobian-vector products without ever
//! forming the Jacobian.
//!
//! Branches (comparisons, `min`/`max`, clamps) are decided on primal values
//! only, so the tangent follows whichever piece the primal computation took.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Scalar interface shared by `f64` and [`Dual`].
pub trait Real:
    Copy
    + Send
    + Sync
    + fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + Sum
{
    fn cst(v: f64) -> Self;
    /// Primal value.
    fn v(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// Minimum by primal value; ties return `self`.
    fn min(self, other: Self) -> Self;
    /// Maximum by primal value; ties return `self`.
    fn max(self, other: Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn is_finite(self) -> bool;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn v(self) -> f64 {
        self
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
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
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
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Value plus tangent along a single seed direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    #[inline]
    pub const fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }

    #[inline]
    pub const fn constant(value: f64) -> Self {
        Self { value, tangent: 0.0 }
    }

    #[inline]
    pub const fn variable(value: f64) -> Self {
        Self { value, tangent: 1.0 }
    }
}

impl fmt::Display for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.value, self.tangent)
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.tangent * rhs.value + self.value * rhs.tangent,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let q = self.value / rhs.value;
        Dual::new(q, (self.tangent - q * rhs.tangent) / rhs.value)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: f64) -> Dual {
        Dual::new(self.value + rhs, self.tangent)
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: f64) -> Dual {
        Dual::new(self.value - rhs, self.tangent)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: f64) -> Dual {
        Dual::new(self.value * rhs, self.tangent * rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: f64) -> Dual {
        Dual::new(self.value / rhs, self.tangent / rhs)
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for Dual {
            #[inline]
            fn $m(&mut self, rhs: Dual) {
                *self = *self $op rhs;
            }
        }
    };
}

assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl Sum for Dual {
    fn sum<I: Iterator<Item = Dual>>(iter: I) -> Dual {
        iter.fold(Dual::constant(0.0), |a, b| a + b)
    }
}

impl Real for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn v(self) -> f64 {
        self.value
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        Dual::new(e, e * self.tangent)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.value.ln(), self.tangent / self.value)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        Dual::new(s, self.tangent / (2.0 * s))
    }
    #[inline]
    fn abs(self) -> Self {
        if self.value > 0.0 {
            self
        } else if self.value < 0.0 {
            -self
        } else {
            // abs'(0) := 0
            Dual::new(0.0, 0.0)
        }
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual::constant(1.0);
        }
        Dual::new(
            self.value.powi(n),
            n as f64 * self.value.powi(n - 1) * self.tangent,
        )
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
    #[inline]
    fn is_finite(self) -> bool {
        self.value.is_finite() && self.tangent.is_finite()
    }
}

/// Operations accepted by [`dual_elementary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Min,
    Max,
    PowInt(i32),
    Lt,
    Le,
    Gt,
    Ge,
}

/// Applies one elementary operation. Binary ops take `b`; comparisons return
/// a constant `0.0` / `1.0` indicator computed on primal values.
pub fn dual_elementary(op: ElementaryOp, a: Dual, b: Option<Dual>) -> Result<Dual> {
    use ElementaryOp::*;
    let rhs = || {
        b.ok_or_else(|| Error::InvalidInput(format!("{op:?} needs a second operand")))
    };
    let indicator = |c: bool| Dual::constant(if c { 1.0 } else { 0.0 });
    Ok(match op {
        Add => a + rhs()?,
        Sub => a - rhs()?,
        Mul => a * rhs()?,
        Div => a / rhs()?,
        Neg => -a,
        Exp => a.exp(),
        Ln => a.ln(),
        Sqrt => a.sqrt(),
        Abs => a.abs(),
        Min => a.min(rhs()?),
        Max => a.max(rhs()?),
        PowInt(n) => a.powi(n),
        Lt => indicator(a.value < rhs()?.value),
        Le => indicator(a.value <= rhs()?.value),
        Gt => indicator(a.value > rhs()?.value),
        Ge => indicator(a.value >= rhs()?.value),
    })
}

/// Pairs every parameter with its entry of the direction `v`.
pub fn seed_direction(x: &[f64], v: &[f64]) -> Result<Vec<Dual>> {
    if x.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: v.len(),
        });
    }
    Ok(x.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect())
}
