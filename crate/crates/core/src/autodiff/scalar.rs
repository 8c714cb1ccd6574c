use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Arithmetic carrier used by tape evaluation.
///
/// `f64` gives plain reverse mode; [`Dual`] gives forward-over-reverse when
/// the reverse sweep itself runs in dual arithmetic.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(v: f64) -> Self;
    fn primal(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn powc(self, p: f64) -> Self;
    fn is_finite(self) -> bool;
}

/// `x^p` that stays exact for small integral exponents.
pub(crate) fn pow_f64(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn primal(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powc(self, p: f64) -> Self {
        pow_f64(self, p)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// First-order forward-mode number `primal + tangent·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub primal: f64,
    pub tangent: f64,
}

impl Dual {
    pub fn new(primal: f64, tangent: f64) -> Self {
        Self { primal, tangent }
    }

    pub fn constant(primal: f64) -> Self {
        Self::new(primal, 0.0)
    }

    pub fn variable(primal: f64) -> Self {
        Self::new(primal, 1.0)
    }

    fn chain(self, value: f64, derivative: f64) -> Self {
        Self::new(value, derivative * self.tangent)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.primal * rhs.primal,
            self.tangent * rhs.primal + self.primal * rhs.tangent,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let q = self.primal / rhs.primal;
        Dual::new(q, (self.tangent - q * rhs.tangent) / rhs.primal)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.primal, -self.tangent)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        self.primal += rhs.primal;
        self.tangent += rhs.tangent;
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn primal(self) -> f64 {
        self.primal
    }
    fn exp(self) -> Self {
        let e = self.primal.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.primal.ln(), 1.0 / self.primal)
    }
    fn sin(self) -> Self {
        self.chain(self.primal.sin(), self.primal.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.primal.cos(), -self.primal.sin())
    }
    fn tanh(self) -> Self {
        let t = self.primal.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn powc(self, p: f64) -> Self {
        let value = pow_f64(self.primal, p);
        // d/dx x^0 is 0 everywhere, including x = 0
        let derivative = if p == 0.0 {
            0.0
        } else {
            p * pow_f64(self.primal, p - 1.0)
        };
        if self.tangent == 0.0 {
            return Dual::new(value, 0.0);
        }
        self.chain(value, derivative)
    }
    fn is_finite(self) -> bool {
        self.primal.is_finite() && self.tangent.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_is_exact_on_polynomials() {
        // d/dx [(x^2 + 3)(2x - 1)] = 2x(2x - 1) + 2(x^2 + 3)
        for &x in &[-2.0, -0.5, 0.0, 1.0, 3.0] {
            let d = Dual::variable(x);
            let f = (d * d + Dual::constant(3.0)) * (Dual::constant(2.0) * d - Dual::constant(1.0));
            assert_eq!(f.primal, (x * x + 3.0) * (2.0 * x - 1.0));
            assert_eq!(f.tangent, 2.0 * x * (2.0 * x - 1.0) + 2.0 * (x * x + 3.0));
        }
    }

    #[test]
    fn chain_rule_on_integer_power() {
        let d = Dual::variable(3.0);
        let f = d.powc(3.0);
        assert_eq!(f.primal, 27.0);
        assert_eq!(f.tangent, 27.0);
    }

    #[test]
    fn quotient_rule() {
        let x = Dual::variable(2.0);
        let f = Dual::constant(1.0) / x;
        assert_eq!(f.primal, 0.5);
        assert_eq!(f.tangent, -0.25);
    }

    #[test]
    fn zero_exponent_has_zero_derivative_at_origin() {
        let f = Dual::variable(0.0).powc(0.0);
        assert_eq!(f, Dual::new(1.0, 0.0));
    }
}
