//! The differentiable self-maps every other module consumes: evaluation,
//! Jacobians, and (exact or Newton) inverses.
//!
//! All shipped families are "integer-linear plus compactly supported
//! perturbation", so inverses warm-start from the exact linear inverse.

use crate::error::{PhdynError, Result};
use crate::linalg::{Mat, MAX_DIM};
use crate::torus::{wrap1, Domain, TangentVector, TorusPoint};

pub const NEWTON_MAX_ITERS: u32 = 100;

/// Declared splitting dimensions (stable, center, unstable).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitDims {
    pub s: usize,
    pub c: usize,
    pub u: usize,
}

impl SplitDims {
    pub fn total(&self) -> usize {
        self.s + self.c + self.u
    }
}

// ---------------------------------------------------------------------------
// 2x2 integer hyperbolic matrices (torus factors and block bases)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Anosov2 {
    pub m: [[i64; 2]; 2],
}

impl Anosov2 {
    pub fn new(m: [[i64; 2]; 2]) -> Result<Self> {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() != 1 {
            return Err(PhdynError::ConstructionRejected(format!(
                "2x2 matrix {m:?} has |det| = {} != 1",
                det.abs()
            )));
        }
        let a = Anosov2 { m };
        let (hi, lo) = a.eigenvalues();
        if !(hi > 1.0 && lo.abs() < 1.0 && hi.is_finite()) {
            return Err(PhdynError::ConstructionRejected(format!(
                "2x2 matrix {m:?} is not hyperbolic with positive expanding eigenvalue"
            )));
        }
        Ok(a)
    }

    pub fn det(&self) -> i64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// (expanding, contracting) eigenvalues by the quadratic formula.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let tr = (self.m[0][0] + self.m[1][1]) as f64;
        let det = self.det() as f64;
        let disc = (tr * tr - 4.0 * det).sqrt();
        let a = 0.5 * (tr + disc);
        let b = 0.5 * (tr - disc);
        if a.abs() >= b.abs() {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Unit eigenvector for the given eigenvalue.
    pub fn eigenvector(&self, lambda: f64) -> [f64; 2] {
        let a = self.m[0][0] as f64 - lambda;
        let b = self.m[0][1] as f64;
        let c = self.m[1][0] as f64;
        let d = self.m[1][1] as f64 - lambda;
        // null vector of [[a,b],[c,d]]; pick the better-conditioned row
        let (x, y) = if a.abs() + b.abs() >= c.abs() + d.abs() {
            (-b, a)
        } else {
            (-d, c)
        };
        let n = (x * x + y * y).sqrt();
        [x / n, y / n]
    }

    pub fn inverse(&self) -> Anosov2 {
        let det = self.det();
        // adjugate over det; det = +-1 keeps entries integral
        Anosov2 {
            m: [
                [self.m[1][1] * det, -self.m[0][1] * det],
                [-self.m[1][0] * det, self.m[0][0] * det],
            ],
        }
    }

    #[inline]
    pub fn apply(&self, y: f64, z: f64) -> (f64, f64) {
        (
            wrap1(self.m[0][0] as f64 * y + self.m[0][1] as f64 * z),
            wrap1(self.m[1][0] as f64 * y + self.m[1][1] as f64 * z),
        )
    }
}

// ---------------------------------------------------------------------------
// Linear toral automorphisms
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LinearMap {
    pub matrix: Mat,
    pub inverse: Mat,
    pub dims: SplitDims,
    pub label: String,
}

impl LinearMap {
    pub fn new(int_rows: &[Vec<i64>], dims: SplitDims, label: &str) -> Result<Self> {
        let d = int_rows.len();
        let mut m = Mat::zeros(d);
        for (i, r) in int_rows.iter().enumerate() {
            if r.len() != d {
                return Err(PhdynError::Invalid("ragged matrix".into()));
            }
            for (j, &x) in r.iter().enumerate() {
                m.a[i][j] = x as f64;
            }
        }
        let det = m.det();
        if (det.abs() - 1.0).abs() > 1e-9 {
            return Err(PhdynError::ConstructionRejected(format!(
                "|det| = {} != 1 for {label}",
                det.abs()
            )));
        }
        // integer inverse via column solves, rounded back to integers
        let mut inv = Mat::zeros(d);
        for j in 0..d {
            let mut e = [0.0; MAX_DIM];
            e[j] = 1.0;
            let x = m
                .solve(&e)
                .ok_or_else(|| PhdynError::ConstructionRejected("singular matrix".into()))?;
            for i in 0..d {
                inv.a[i][j] = x[i].round();
            }
        }
        let check = m.mul(&inv);
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                if (check.a[i][j] - want).abs() > 1e-9 {
                    return Err(PhdynError::ConstructionRejected(
                        "inverse is not integral".into(),
                    ));
                }
            }
        }
        Ok(LinearMap { matrix: m, inverse: inv, dims, label: label.to_string() })
    }

    #[inline]
    pub fn apply(&self, x: &TorusPoint) -> TorusPoint {
        TorusPoint::from_wrapped(self.matrix.matvec(&x.raw()), x.dim(), x.domain())
    }
}

// ---------------------------------------------------------------------------
// One-parameter deformation of the T^3 seed through a center pitchfork
// ---------------------------------------------------------------------------

/// Parameters of the deformed map and its diagnostics.
///
/// `t` is the deformation strength; the center derivative at `p0` along the
/// center eigendirection is `lambda_c - t`, so the bifurcation happens at
/// `t0 = lambda_c - 1`.
#[derive(Clone, Copy, Debug)]
pub struct DaParams {
    pub t: f64,
    pub delta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub eta_c: f64,
    pub l_seg: f64,
    pub tau0: f64,
}

#[derive(Clone, Debug)]
pub struct DaMap {
    pub base: LinearMap,
    pub params: DaParams,
    pub p0: TorusPoint,
    pub evals: [f64; 3],      // lambda_s < lambda_c < lambda_u
    pub evecs: [[f64; MAX_DIM]; 3], // unit eigenvectors, same order
}

/// Quintic smoothstep on [0,1].
#[inline]
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

#[inline]
fn smoothstep_d(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    30.0 * u * u * (1.0 - u) * (1.0 - u)
}

/// C^2 bump: 1 on [0, 1/2], 0 on [1, inf).
#[inline]
pub fn bump(r: f64) -> f64 {
    1.0 - smoothstep(2.0 * r - 1.0)
}

#[inline]
pub fn bump_d(r: f64) -> f64 {
    -2.0 * smoothstep_d(2.0 * r - 1.0)
}

impl DaMap {
    /// Scalar displacement h(x) and its gradient; both vanish outside the
    /// support ball.
    #[inline]
    fn h_and_grad(&self, x: &TorusPoint) -> (f64, TangentVector) {
        let d = x.diff(&self.p0);
        let r = d.norm();
        let delta = self.params.delta;
        if r >= delta {
            return (0.0, TangentVector::zero(3));
        }
        let vc = TangentVector::from_raw(self.evecs[1], 3);
        let ct = d.dot(&vc);
        let two_pi = std::f64::consts::TAU;
        let s = (two_pi * ct).sin() / two_pi;
        let cs = (two_pi * ct).cos();
        let rr = r / delta;
        let h = bump(rr) * s;
        // radial part is zero where the bump is flat, including around r = 0
        let mut grad = vc.scale(bump(rr) * cs);
        if r > 0.0 {
            let radial = d.scale(1.0 / r);
            grad = grad.add(&radial.scale(bump_d(rr) / delta * s));
        }
        (h, grad)
    }

    #[inline]
    pub fn apply(&self, x: &TorusPoint) -> TorusPoint {
        let lin = self.base.matrix.matvec(&x.raw());
        let (h, _) = self.h_and_grad(x);
        let mut out = lin;
        if h != 0.0 {
            let vc = self.evecs[1];
            for i in 0..3 {
                out[i] -= self.params.t * h * vc[i];
            }
        }
        TorusPoint::from_wrapped(out, 3, Domain::Torus)
    }

    #[inline]
    pub fn jacobian(&self, x: &TorusPoint) -> Mat {
        let (_, grad) = self.h_and_grad(x);
        let mut j = self.base.matrix;
        let vc = self.evecs[1];
        let g = grad.raw();
        for i in 0..3 {
            for k in 0..3 {
                j.a[i][k] -= self.params.t * vc[i] * g[k];
            }
        }
        j
    }

    /// Center-leaf return map through p0: the leaf is the straight line
    /// p0 + s*v_c, invariant because the displacement is parallel to v_c.
    pub fn center_return(&self, s: f64) -> f64 {
        let two_pi = std::f64::consts::TAU;
        let lc = self.evals[1];
        lc * s - self.params.t * bump(s.abs() / self.params.delta) * (two_pi * s).sin() / two_pi
    }

    pub fn center_return_d(&self, s: f64) -> f64 {
        let two_pi = std::f64::consts::TAU;
        let lc = self.evals[1];
        let r = s.abs() / self.params.delta;
        let dsign = if s >= 0.0 { 1.0 } else { -1.0 };
        lc - self.params.t
            * (bump_d(r) * dsign / self.params.delta * (two_pi * s).sin() / two_pi
                + bump(r) * (two_pi * s).cos())
    }
}

// ---------------------------------------------------------------------------
// Gluing blocks on [0,1] x T^2
// ---------------------------------------------------------------------------

/// Skew product over a 2-torus automorphism with an x-displacement that
/// vanishes on both boundary tori, plus an optional shear of the torus
/// factor driven by x:
///   (x, y, z) -> (x + kappa*sin(2*pi*x)*(drift + cos(2*pi*y)),
///                 A(y, z) + shear*sin(2*pi*x)*(1, 0)).
/// `drift = 0, shear = 0` is the plain surrogate; `drift > 0` repels the
/// boundary fibers and attracts the mid fiber, which pins one physical
/// measure per block; `shear != 0` couples the center to the hyperbolic
/// factor both ways, which can push the measured center exponent positive.
#[derive(Clone, Copy, Debug)]
pub struct BlockMap {
    pub kappa: f64,
    pub drift: f64,
    pub shear: f64,
    pub a2: Anosov2,
}

impl BlockMap {
    pub fn new(kappa: f64, drift: f64, a2: Anosov2) -> Result<Self> {
        Self::with_shear(kappa, drift, 0.0, a2)
    }

    pub fn with_shear(kappa: f64, drift: f64, shear: f64, a2: Anosov2) -> Result<Self> {
        let two_pi = std::f64::consts::TAU;
        if !(kappa >= 0.0 && kappa.is_finite() && drift >= 0.0 && drift.is_finite())
            || !shear.is_finite()
        {
            return Err(PhdynError::ConstructionRejected(
                "kappa/drift must be finite and >= 0, shear finite".into(),
            ));
        }
        if 1.0 - two_pi * kappa * (drift + 1.0) <= 0.0 {
            return Err(PhdynError::ConstructionRejected(format!(
                "kappa = {kappa} too large: x-derivative 1 - 2*pi*kappa*(drift+1) not positive"
            )));
        }
        // keep the x-solve monotone after eliminating the sheared torus
        // factor: the cross term is bounded by (2 pi)^2 kappa |shear| |Ainv|
        let ainv_max = a2
            .inverse()
            .m
            .iter()
            .flatten()
            .map(|v| v.abs() as f64)
            .fold(0.0f64, f64::max);
        if 1.0 - two_pi * kappa * (drift + 1.0) - two_pi * two_pi * kappa * shear.abs() * ainv_max
            <= 0.0
        {
            return Err(PhdynError::ConstructionRejected(format!(
                "shear = {shear} too large for kappa = {kappa}: inverse solve loses monotonicity"
            )));
        }
        Ok(BlockMap { kappa, drift, shear, a2 })
    }

    #[inline]
    fn displacement(&self, x: f64, y: f64) -> f64 {
        let two_pi = std::f64::consts::TAU;
        self.kappa * (two_pi * x).sin() * (self.drift + (two_pi * y).cos())
    }

    #[inline]
    pub fn apply(&self, p: &TorusPoint) -> TorusPoint {
        let two_pi = std::f64::consts::TAU;
        let c = p.raw();
        let (mut y, z) = self.a2.apply(c[1], c[2]);
        if self.shear != 0.0 {
            y = crate::torus::wrap1(y + self.shear * (two_pi * c[0]).sin());
        }
        TorusPoint::from_wrapped([c[0] + self.displacement(c[0], c[1]), y, z, 0.0], 3, p.domain())
    }

    #[inline]
    pub fn jacobian(&self, p: &TorusPoint) -> Mat {
        let two_pi = std::f64::consts::TAU;
        let c = p.raw();
        let mut j = Mat::zeros(3);
        j.a[0][0] =
            1.0 + two_pi * self.kappa * (two_pi * c[0]).cos() * (self.drift + (two_pi * c[1]).cos());
        j.a[0][1] = -two_pi * self.kappa * (two_pi * c[0]).sin() * (two_pi * c[1]).sin();
        j.a[1][0] = two_pi * self.shear * (two_pi * c[0]).cos();
        j.a[1][1] = self.a2.m[0][0] as f64;
        j.a[1][2] = self.a2.m[0][1] as f64;
        j.a[2][1] = self.a2.m[1][0] as f64;
        j.a[2][2] = self.a2.m[1][1] as f64;
        j
    }

    /// Exact inverse. The torus factor inverts integrally once the shear
    /// (a function of x alone) is subtracted, and the remaining scalar
    /// equation in x is monotone by construction, so Newton with a
    /// bisection bracket always lands.
    pub fn inverse(&self, p: &TorusPoint) -> Result<TorusPoint> {
        let two_pi = std::f64::consts::TAU;
        let c = p.raw();
        let ainv = self.a2.inverse();
        let yz_at = |x: f64| {
            let y_pre = crate::torus::wrap1(c[1] - self.shear * (two_pi * x).sin());
            ainv.apply(y_pre, c[2])
        };
        let target = c[0];
        let g = |x: f64| x + self.displacement(x, yz_at(x).0);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = target.clamp(0.0, 1.0);
        for _ in 0..NEWTON_MAX_ITERS {
            let r = g(x) - target;
            if r.abs() < 1e-14 {
                let (y, z) = yz_at(x);
                return TorusPoint::wrap_in(&[x, y, z], p.domain());
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            // secant-free damped step with the dominant derivative term
            let (y, _) = yz_at(x);
            let gd = 1.0
                + two_pi * self.kappa * (two_pi * x).cos() * (self.drift + (two_pi * y).cos());
            let step = x - r / gd;
            x = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        }
        let res = (g(x) - target).abs();
        if res < 1e-10 {
            let (y, z) = yz_at(x);
            return TorusPoint::wrap_in(&[x, y, z], p.domain());
        }
        Err(PhdynError::NewtonDiverged { iters: NEWTON_MAX_ITERS, residual: res })
    }
}

// ---------------------------------------------------------------------------
// Piecewise-conjugated gluings on T^3
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GluedBlock {
    pub lambda: f64,
    pub tau: f64,
    pub map: BlockMap,
    pub inverted: bool,
}

#[derive(Clone, Debug)]
pub struct GluedMap {
    pub blocks: Vec<GluedBlock>,
    /// False when adjacent boundary restrictions disagree (mixed inverted
    /// gluings); the interface tori are still invariant so the dynamics is
    /// well defined off a measure-zero set.
    pub continuous: bool,
}

impl GluedMap {
    #[inline]
    fn block_index(&self, x: f64) -> usize {
        let mut idx = self.blocks.len() - 1;
        for (i, b) in self.blocks.iter().enumerate() {
            if x < b.tau {
                break;
            }
            idx = i;
        }
        idx
    }

    #[inline]
    fn to_local(b: &GluedBlock, p: &TorusPoint) -> TorusPoint {
        let c = p.raw();
        let xi = ((c[0] - b.tau) / b.lambda).clamp(0.0, 1.0);
        TorusPoint::from_wrapped([xi, c[1], c[2], 0.0], 3, Domain::Cylinder)
    }

    #[inline]
    fn from_local(b: &GluedBlock, w: &TorusPoint) -> TorusPoint {
        let c = w.raw();
        TorusPoint::from_wrapped([b.lambda * c[0] + b.tau, c[1], c[2], 0.0], 3, Domain::Torus)
    }

    pub fn apply(&self, p: &TorusPoint) -> TorusPoint {
        let b = &self.blocks[self.block_index(p.raw()[0])];
        let local = Self::to_local(b, p);
        let w = if b.inverted {
            b.map.inverse(&local).expect("monotone block inverse cannot fail")
        } else {
            b.map.apply(&local)
        };
        Self::from_local(b, &w)
    }

    pub fn jacobian(&self, p: &TorusPoint) -> Mat {
        let b = &self.blocks[self.block_index(p.raw()[0])];
        let local = Self::to_local(b, p);
        let jb = if b.inverted {
            let pre = b.map.inverse(&local).expect("monotone block inverse cannot fail");
            let j = b.map.jacobian(&pre);
            invert_mat(&j).expect("block jacobian is invertible")
        } else {
            b.map.jacobian(&local)
        };
        // conjugation by the x-squeeze: scale row 0 by lambda, column 0 by 1/lambda
        let mut j = jb;
        j.a[0][1] *= b.lambda;
        j.a[0][2] *= b.lambda;
        j.a[1][0] /= b.lambda;
        j.a[2][0] /= b.lambda;
        j
    }

    pub fn inverse(&self, p: &TorusPoint) -> Result<TorusPoint> {
        let b = &self.blocks[self.block_index(p.raw()[0])];
        let local = Self::to_local(b, p);
        let w = if b.inverted { b.map.apply(&local) } else { b.map.inverse(&local)? };
        Ok(Self::from_local(b, &w))
    }

    pub fn interfaces(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.tau).collect()
    }
}

pub fn invert_mat(m: &Mat) -> Option<Mat> {
    let mut inv = Mat::zeros(m.dim);
    for j in 0..m.dim {
        let mut e = [0.0; MAX_DIM];
        e[j] = 1.0;
        let x = m.solve(&e)?;
        for i in 0..m.dim {
            inv.a[i][j] = x[i];
        }
    }
    Some(inv)
}

// ---------------------------------------------------------------------------
// Products of two 2-torus automorphisms on T^4
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct ProductMap {
    pub a1: Anosov2,
    pub a2: Anosov2,
}

impl ProductMap {
    #[inline]
    pub fn apply(&self, p: &TorusPoint) -> TorusPoint {
        let c = p.raw();
        let (x1, x2) = self.a1.apply(c[0], c[1]);
        let (y1, y2) = self.a2.apply(c[2], c[3]);
        TorusPoint::from_wrapped([x1, x2, y1, y2], 4, Domain::Torus)
    }

    pub fn jacobian(&self) -> Mat {
        let mut j = Mat::zeros(4);
        for r in 0..2 {
            for c in 0..2 {
                j.a[r][c] = self.a1.m[r][c] as f64;
                j.a[2 + r][2 + c] = self.a2.m[r][c] as f64;
            }
        }
        j
    }
}

// ---------------------------------------------------------------------------
// The map interface
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum DynSystem {
    Linear(LinearMap),
    DerivedAnosov(Box<DaMap>),
    Block(BlockMap),
    Glued(GluedMap),
    Product(ProductMap),
    Identity { dim: usize },
}

impl DynSystem {
    pub fn dim(&self) -> usize {
        match self {
            DynSystem::Linear(m) => m.matrix.dim,
            DynSystem::DerivedAnosov(_) => 3,
            DynSystem::Block(_) => 3,
            DynSystem::Glued(_) => 3,
            DynSystem::Product(_) => 4,
            DynSystem::Identity { dim } => *dim,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            DynSystem::Block(_) => Domain::Cylinder,
            _ => Domain::Torus,
        }
    }

    /// Declared splitting dimensions, fastest bundle last.
    pub fn split_dims(&self) -> SplitDims {
        match self {
            DynSystem::Linear(m) => m.dims,
            DynSystem::DerivedAnosov(_) => SplitDims { s: 1, c: 1, u: 1 },
            DynSystem::Block(_) | DynSystem::Glued(_) => SplitDims { s: 1, c: 1, u: 1 },
            DynSystem::Product(_) => SplitDims { s: 2, c: 1, u: 1 },
            DynSystem::Identity { dim } => SplitDims { s: 0, c: *dim, u: 0 },
        }
    }

    #[inline]
    pub fn apply(&self, x: &TorusPoint) -> TorusPoint {
        match self {
            DynSystem::Linear(m) => m.apply(x),
            DynSystem::DerivedAnosov(m) => m.apply(x),
            DynSystem::Block(m) => m.apply(x),
            DynSystem::Glued(m) => m.apply(x),
            DynSystem::Product(m) => m.apply(x),
            DynSystem::Identity { .. } => *x,
        }
    }

    pub fn apply_n(&self, x: &TorusPoint, n: usize) -> TorusPoint {
        let mut p = *x;
        for _ in 0..n {
            p = self.apply(&p);
        }
        p
    }

    #[inline]
    pub fn jacobian(&self, x: &TorusPoint) -> Mat {
        match self {
            DynSystem::Linear(m) => m.matrix,
            DynSystem::DerivedAnosov(m) => m.jacobian(x),
            DynSystem::Block(m) => m.jacobian(x),
            DynSystem::Glued(m) => m.jacobian(x),
            DynSystem::Product(m) => m.jacobian(),
            DynSystem::Identity { dim } => Mat::identity(*dim),
        }
    }

    pub fn inverse(&self, y: &TorusPoint) -> Result<TorusPoint> {
        match self {
            DynSystem::Linear(m) => {
                Ok(TorusPoint::from_wrapped(m.inverse.matvec(&y.raw()), y.dim(), y.domain()))
            }
            DynSystem::DerivedAnosov(m) => {
                let guess =
                    TorusPoint::from_wrapped(m.base.inverse.matvec(&y.raw()), 3, Domain::Torus);
                newton_inverse(self, y, &guess, 1e-12)
            }
            DynSystem::Block(m) => m.inverse(y),
            DynSystem::Glued(m) => m.inverse(y),
            DynSystem::Product(m) => {
                let c = y.raw();
                let (x1, x2) = m.a1.inverse().apply(c[0], c[1]);
                let (y1, y2) = m.a2.inverse().apply(c[2], c[3]);
                Ok(TorusPoint::from_wrapped([x1, x2, y1, y2], 4, Domain::Torus))
            }
            DynSystem::Identity { .. } => Ok(*y),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DynSystem::Linear(m) => m.label.clone(),
            DynSystem::DerivedAnosov(m) => format!("da(t={:.6})", m.params.t),
            DynSystem::Block(m) => {
                format!("block(kappa={}, drift={})", m.kappa, m.drift)
            }
            DynSystem::Glued(g) => format!("glued(k={})", g.blocks.len()),
            DynSystem::Product(_) => "product_anosov".into(),
            DynSystem::Identity { dim } => format!("identity(d={dim})"),
        }
    }
}

/// Newton iteration for `f(x) = y`, warm-started from `guess`.
/// Caps at [`NEWTON_MAX_ITERS`] and reports the final residual on failure.
pub fn newton_inverse(
    f: &DynSystem,
    y: &TorusPoint,
    guess: &TorusPoint,
    tol: f64,
) -> Result<TorusPoint> {
    let mut x = *guess;
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITERS {
        let r = f.apply(&x).diff(y);
        residual = r.norm();
        if residual < tol {
            return Ok(x);
        }
        let j = f.jacobian(&x);
        let step = j
            .solve(&r.raw())
            .ok_or(PhdynError::NewtonDiverged { iters: NEWTON_MAX_ITERS, residual })?;
        x = x.translate(&TangentVector::from_raw(step, x.dim()).scale(-1.0));
    }
    Err(PhdynError::NewtonDiverged { iters: NEWTON_MAX_ITERS, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_point(rng: &mut ChaCha8Rng, dim: usize) -> TorusPoint {
        let raw: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        TorusPoint::wrap(&raw).unwrap()
    }

    #[test]
    fn newton_inverse_on_identity_is_identity() {
        let f = DynSystem::Identity { dim: 3 };
        let y = TorusPoint::wrap(&[0.3, 0.3, 0.3]).unwrap();
        let x = newton_inverse(&f, &y, &y, 1e-12).unwrap();
        assert!(x.distance(&y) < 1e-15);
    }

    #[test]
    fn newton_inverse_matches_exact_linear_inverse() {
        let (f, _) = systems::make_linear_anosov_t3();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let y = rand_point(&mut rng, 3);
            let exact = f.inverse(&y).unwrap();
            let guess = rand_point(&mut rng, 3);
            // global Newton from a random guess may land on another preimage
            // representative; warm-start from a nearby perturbation instead
            let mut near = exact.raw();
            near[0] += 1e-3 * (guess.raw()[0] - 0.5);
            near[1] += 1e-3;
            let near = TorusPoint::from_wrapped(near, 3, Domain::Torus);
            let x = newton_inverse(&f, &y, &near, 1e-12).unwrap();
            assert!(x.distance(&exact) < 1e-10);
        }
    }

    #[test]
    fn da_at_zero_deformation_matches_linear_inverse() {
        let (lin, _) = systems::make_linear_anosov_t3();
        let da = systems::make_da(systems::DaConfig { t_offset_from_t0: None, t: Some(0.0), ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let y = rand_point(&mut rng, 3);
            let a = lin.inverse(&y).unwrap();
            let b = da.inverse(&y).unwrap();
            assert!(a.distance(&b) < 1e-10);
        }
    }

    #[test]
    fn round_trip_all_shipped_systems() {
        let sys: Vec<DynSystem> = vec![
            systems::make_linear_anosov_t3().0,
            systems::make_da(systems::DaConfig::default()).unwrap(),
            systems::make_surrogate_block(0.05, systems::CAT_MAP).unwrap(),
            systems::make_drift_block(0.05, 0.5, systems::CAT_MAP).unwrap(),
            systems::make_glued_uniform(3, 0.05, 0.5, false).unwrap(),
            systems::make_product_anosov([[3, 2], [1, 1]], [[2, 1], [1, 1]]).unwrap().0,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for f in &sys {
            for _ in 0..1000 {
                let raw: Vec<f64> = (0..f.dim()).map(|_| rng.gen::<f64>()).collect();
                let x = TorusPoint::wrap_in(&raw, f.domain()).unwrap();
                let y = f.apply(&x);
                let back = f.inverse(&y).unwrap_or_else(|e| panic!("{}: {e}", f.name()));
                assert!(
                    back.distance(&x) < 1e-9,
                    "{} round trip {:e}",
                    f.name(),
                    back.distance(&x)
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let sys: Vec<DynSystem> = vec![
            systems::make_linear_anosov_t3().0,
            systems::make_da(systems::DaConfig::default()).unwrap(),
            systems::make_drift_block(0.05, 0.5, systems::CAT_MAP).unwrap(),
            systems::make_glued_uniform(2, 0.05, 0.5, false).unwrap(),
            systems::make_product_anosov([[3, 2], [1, 1]], [[2, 1], [1, 1]]).unwrap().0,
        ];
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in &sys {
            let interfaces: Vec<f64> = match f {
                DynSystem::Glued(g) => g.interfaces(),
                _ => vec![],
            };
            let mut checked = 0;
            while checked < 100 {
                let raw: Vec<f64> = (0..f.dim()).map(|_| rng.gen::<f64>()).collect();
                // keep clear of the non-smooth gluing interfaces and the
                // cylinder edges where central differences step outside
                if interfaces.iter().any(|t| (raw[0] - t).abs() < 1e-3)
                    || (f.domain() == Domain::Cylinder && (raw[0] < 1e-3 || raw[0] > 1.0 - 1e-3))
                {
                    continue;
                }
                let x = TorusPoint::wrap_in(&raw, f.domain()).unwrap();
                let j = f.jacobian(&x);
                for col in 0..f.dim() {
                    let mut fwd = x.raw();
                    let mut bwd = x.raw();
                    fwd[col] += h;
                    bwd[col] -= h;
                    let pf = TorusPoint::from_wrapped(fwd, f.dim(), f.domain());
                    let pb = TorusPoint::from_wrapped(bwd, f.dim(), f.domain());
                    let d = f.apply(&pf).diff(&f.apply(&pb));
                    for row in 0..f.dim() {
                        let fd = d.components()[row] / (2.0 * h);
                        assert!(
                            (fd - j.a[row][col]).abs() < 1e-4,
                            "{} jac[{row}][{col}] analytic {} vs fd {}",
                            f.name(),
                            j.a[row][col],
                            fd
                        );
                    }
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn chain_rule_on_linear_systems() {
        let (f, _) = systems::make_linear_anosov_t3();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = rand_point(&mut rng, 3);
            let fx = f.apply(&x);
            let lhs = f.jacobian(&fx).mul(&f.jacobian(&x));
            // two-step map equals matrix square for the linear system
            let j2 = f.jacobian(&x).mul(&f.jacobian(&x));
            for i in 0..3 {
                for jj in 0..3 {
                    assert_relative_eq!(lhs.a[i][jj], j2.a[i][jj], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn anosov2_eigen_data() {
        let a = Anosov2::new([[2, 1], [1, 1]]).unwrap();
        let (hi, lo) = a.eigenvalues();
        assert_relative_eq!(hi, (3.0 + 5.0f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(hi * lo, 1.0, epsilon = 1e-12);
        let v = a.eigenvector(hi);
        // A v = hi v
        let av0 = 2.0 * v[0] + v[1];
        let av1 = v[0] + v[1];
        assert_relative_eq!(av0, hi * v[0], epsilon = 1e-10);
        assert_relative_eq!(av1, hi * v[1], epsilon = 1e-10);
    }
}
