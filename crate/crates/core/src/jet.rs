//! Value plus partial derivatives with respect to the five stencil values
//! `[centre, x-, x+, y-, y+]` of one component at one node.

use std::ops::{Add, Mul, Neg, Sub};

use crate::scalar::{expm1_over, Real};

pub(crate) const STENCIL: usize = 5;
pub(crate) const CENTRE: usize = 0;

/// Stencil slot of the neighbour along `axis` in direction `step` (±1).
pub(crate) fn slot(axis: usize, step: isize) -> usize {
    1 + 2 * axis + usize::from(step > 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Jet<T> {
    pub value: T,
    pub grad: [T; STENCIL],
}

impl<T: Real> Jet<T> {
    pub fn constant(value: T) -> Self {
        Jet { value, grad: [T::zero(); STENCIL] }
    }

    pub fn seed(value: T, slot: usize) -> Self {
        let mut grad = [T::zero(); STENCIL];
        grad[slot] = T::one();
        Jet { value, grad }
    }

    pub fn scale(self, s: T) -> Self {
        Jet { value: self.value * s, grad: self.grad.map(|g| g * s) }
    }

    /// Chain rule with outer derivative `slope`.
    fn compose(self, value: T, slope: T) -> Self {
        Jet { value, grad: self.grad.map(|g| g * slope) }
    }

    pub fn abs(self) -> Self {
        let slope = if self.value > T::zero() {
            T::one()
        } else if self.value < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        self.compose(self.value.abs(), slope)
    }

    /// Square root with the derivative set to zero at the origin.
    pub fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        let slope = if r > T::zero() { T::half() / r } else { T::zero() };
        self.compose(r, slope)
    }

    /// `(e^{m x} - 1) / m`.
    pub fn expm1_over(self, m: T) -> Self {
        let slope = (m * self.value).exp();
        self.compose(expm1_over(m, self.value), slope)
    }
}

impl<T: Real> Add for Jet<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut grad = self.grad;
        for (g, h) in grad.iter_mut().zip(o.grad) {
            *g += h;
        }
        Jet { value: self.value + o.value, grad }
    }
}

impl<T: Real> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<T: Real> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet { value: -self.value, grad: self.grad.map(|g| -g) }
    }
}

impl<T: Real> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut grad = [T::zero(); STENCIL];
        for (k, g) in grad.iter_mut().enumerate() {
            *g = self.grad[k] * o.value + o.grad[k] * self.value;
        }
        Jet { value: self.value * o.value, grad }
    }
}
