//! Small fixed-size vectors for the ray tracer and device-plane geometry.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction; `None` for a zero or non-finite vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn is_unit(self, tol: T) -> bool {
        (self.norm() - T::one()).abs() <= tol
    }

    /// Rodrigues rotation of `self` by `angle` about the unit `axis`.
    pub fn rotated(self, axis: Self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        self * c + axis.cross(self) * s + axis * (axis.dot(self) * (T::one() - c))
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()), U::lit(self.z.as_f64()))
    }
}

impl<T: Real> Vec2<T> {
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }
}

macro_rules! impl_ops {
    ($V:ident { $($f:ident),+ }) => {
        impl<T: Real> Add for $V<T> {
            type Output = Self;
            fn add(self, o: Self) -> Self { $V { $($f: self.$f + o.$f),+ } }
        }
        impl<T: Real> Sub for $V<T> {
            type Output = Self;
            fn sub(self, o: Self) -> Self { $V { $($f: self.$f - o.$f),+ } }
        }
        impl<T: Real> Mul<T> for $V<T> {
            type Output = Self;
            fn mul(self, s: T) -> Self { $V { $($f: self.$f * s),+ } }
        }
        impl<T: Real> Div<T> for $V<T> {
            type Output = Self;
            fn div(self, s: T) -> Self { $V { $($f: self.$f / s),+ } }
        }
        impl<T: Real> Neg for $V<T> {
            type Output = Self;
            fn neg(self) -> Self { $V { $($f: -self.$f),+ } }
        }
        impl<T: Real> AddAssign for $V<T> {
            fn add_assign(&mut self, o: Self) { $(self.$f = self.$f + o.$f;)+ }
        }
        impl<T: Real> SubAssign for $V<T> {
            fn sub_assign(&mut self, o: Self) { $(self.$f = self.$f - o.$f;)+ }
        }
    };
}

impl_ops!(Vec3 { x, y, z });
impl_ops!(Vec2 { x, y });
