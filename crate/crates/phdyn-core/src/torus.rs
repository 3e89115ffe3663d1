//! Phase-space arithmetic: points on flat tori T^d (d = 2..4) and on the
//! bounded cylinder [0,1] x T^2, tangent vectors, and the wrapped metric.
//!
//! Every coordinate lives in [0,1); metric computations use the shortest
//! representative of the difference. The cylinder keeps coordinate 0 plain
//! (no wrap), which is how the gluing blocks see their phase space.

use crate::error::{PhdynError, Result};
use crate::linalg::MAX_DIM;

/// Which coordinates wrap. `Cylinder` leaves coordinate 0 on [0,1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Torus,
    Cylinder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint {
    c: [f64; MAX_DIM],
    dim: u8,
    domain: Domain,
}

/// Reduce to [0,1). `1.0f64 % 1.0` is 0, but `(-eps) % 1.0` is negative,
/// hence the second pass.
#[inline]
pub fn wrap1(x: f64) -> f64 {
    let mut r = x % 1.0;
    if r < 0.0 {
        r += 1.0;
    }
    if r >= 1.0 {
        r = 0.0;
    }
    r
}

/// Shortest representative of a difference, in [-1/2, 1/2).
#[inline]
pub fn wrap_diff(d: f64) -> f64 {
    let mut r = (d + 0.5) % 1.0;
    if r < 0.0 {
        r += 1.0;
    }
    r - 0.5
}

impl TorusPoint {
    /// Wrap raw coordinates onto the torus. Rejects non-finite input.
    pub fn wrap(raw: &[f64]) -> Result<Self> {
        Self::wrap_in(raw, Domain::Torus)
    }

    pub fn wrap_in(raw: &[f64], domain: Domain) -> Result<Self> {
        let dim = raw.len();
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(PhdynError::Invalid(format!("dimension {dim} outside 2..=4")));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(PhdynError::NonFinite("TorusPoint::wrap"));
        }
        let mut c = [0.0; MAX_DIM];
        for (i, &x) in raw.iter().enumerate() {
            c[i] = if i == 0 && domain == Domain::Cylinder {
                x.clamp(0.0, 1.0)
            } else {
                wrap1(x)
            };
        }
        Ok(TorusPoint { c, dim: dim as u8, domain })
    }

    /// Infallible constructor for already-finite data (hot loops).
    #[inline]
    pub fn from_wrapped(raw: [f64; MAX_DIM], dim: usize, domain: Domain) -> Self {
        let mut c = [0.0; MAX_DIM];
        for i in 0..dim {
            c[i] = if i == 0 && domain == Domain::Cylinder {
                raw[i].clamp(0.0, 1.0)
            } else {
                wrap1(raw[i])
            };
        }
        TorusPoint { c, dim: dim as u8, domain }
    }

    pub fn origin(dim: usize) -> Self {
        TorusPoint { c: [0.0; MAX_DIM], dim: dim as u8, domain: Domain::Torus }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn raw(&self) -> [f64; MAX_DIM] {
        self.c
    }

    /// Shortest-representative difference `self - other` as a tangent vector.
    #[inline]
    pub fn diff(&self, other: &TorusPoint) -> TangentVector {
        debug_assert_eq!(self.dim, other.dim);
        let mut d = [0.0; MAX_DIM];
        for i in 0..self.dim as usize {
            d[i] = if i == 0 && self.domain == Domain::Cylinder {
                self.c[i] - other.c[i]
            } else {
                wrap_diff(self.c[i] - other.c[i])
            };
        }
        TangentVector { v: d, dim: self.dim }
    }

    /// Wrapped Euclidean distance.
    #[inline]
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        self.diff(other).norm()
    }

    /// Translate by a tangent vector and re-wrap.
    #[inline]
    pub fn translate(&self, v: &TangentVector) -> TorusPoint {
        let mut raw = self.c;
        for i in 0..self.dim as usize {
            raw[i] += v.v[i];
        }
        TorusPoint::from_wrapped(raw, self.dim as usize, self.domain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector {
    v: [f64; MAX_DIM],
    dim: u8,
}

impl TangentVector {
    pub fn new(components: &[f64]) -> Self {
        let mut v = [0.0; MAX_DIM];
        v[..components.len()].copy_from_slice(components);
        TangentVector { v, dim: components.len() as u8 }
    }

    #[inline]
    pub fn from_raw(v: [f64; MAX_DIM], dim: usize) -> Self {
        TangentVector { v, dim: dim as u8 }
    }

    pub fn zero(dim: usize) -> Self {
        TangentVector { v: [0.0; MAX_DIM], dim: dim as u8 }
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = [0.0; MAX_DIM];
        v[axis] = 1.0;
        TangentVector { v, dim: dim as u8 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn components(&self) -> &[f64] {
        &self.v[..self.dim as usize]
    }

    #[inline]
    pub fn raw(&self) -> [f64; MAX_DIM] {
        self.v
    }

    #[inline]
    pub fn dot(&self, other: &TangentVector) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim as usize {
            s += self.v[i] * other.v[i];
        }
        s
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn scale(&self, s: f64) -> TangentVector {
        let mut v = self.v;
        for x in v.iter_mut().take(self.dim as usize) {
            *x *= s;
        }
        TangentVector { v, dim: self.dim }
    }

    #[inline]
    pub fn add(&self, other: &TangentVector) -> TangentVector {
        let mut v = self.v;
        for i in 0..self.dim as usize {
            v[i] += other.v[i];
        }
        TangentVector { v, dim: self.dim }
    }

    #[inline]
    pub fn sub(&self, other: &TangentVector) -> TangentVector {
        let mut v = self.v;
        for i in 0..self.dim as usize {
            v[i] -= other.v[i];
        }
        TangentVector { v, dim: self.dim }
    }

    pub fn normalized(&self) -> TangentVector {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize the zero vector");
        self.scale(1.0 / n)
    }

    /// Unsigned angle to another vector, in [0, pi/2] (directions, not
    /// orientations).
    pub fn line_angle(&self, other: &TangentVector) -> f64 {
        let c = (self.dot(other) / (self.norm() * other.norm())).abs().min(1.0);
        c.acos()
    }
}

/// Metric ball used as the deformation support and occupation target.
#[derive(Clone, Copy, Debug)]
pub struct BoxDomain {
    pub center: TorusPoint,
    pub radius: f64,
}

impl BoxDomain {
    pub fn new(center: TorusPoint, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(PhdynError::Invalid(format!("ball radius {radius} must be positive")));
        }
        Ok(BoxDomain { center, radius })
    }

    #[inline]
    pub fn contains(&self, x: &TorusPoint) -> bool {
        x.distance(&self.center) < self.radius
    }
}
