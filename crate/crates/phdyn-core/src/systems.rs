//! Constructors for the concrete diffeomorphism families: the T^3 linear
//! seed, its one-parameter center-pitchfork deformation, gluing blocks on
//! [0,1] x T^2 and their piecewise conjugations, and products of 2-torus
//! automorphisms on T^4.

use crate::error::{PhdynError, Result};
use crate::linalg::{min_conorm, Mat, MAX_DIM};
use crate::system::{
    Anosov2, BlockMap, DaMap, DaParams, DynSystem, GluedBlock, GluedMap, LinearMap, ProductMap,
    SplitDims,
};
use crate::torus::{Domain, TangentVector, TorusPoint};

pub const CAT_MAP: [[i64; 2]; 2] = [[2, 1], [1, 1]];

/// Seed matrix: companion matrix of t^3 - 5 t^2 + 6 t - 1. Its spectrum
/// straddles 1/3, 1 and 3, which is what the deformation needs.
pub const SEED_T3: [[i64; 3]; 3] = [[0, 0, 1], [1, 0, -6], [0, 1, 5]];

/// Validated linear automorphism with its spectrum and unit eigenbasis.
#[derive(Clone, Debug)]
pub struct LinearAnosovSpec {
    pub matrix: Vec<Vec<i64>>,
    pub eigenvalues: Vec<f64>,
    pub eigenbasis: Vec<TangentVector>,
}

/// Characteristic polynomial coefficients of a 3x3 matrix,
/// p(t) = t^3 + c2 t^2 + c1 t + c0, via trace identities.
fn char_poly_3(m: &Mat) -> [f64; 3] {
    let tr = m.a[0][0] + m.a[1][1] + m.a[2][2];
    let m2 = m.mul(m);
    let tr2 = m2.a[0][0] + m2.a[1][1] + m2.a[2][2];
    let c2 = -tr;
    let c1 = 0.5 * (tr * tr - tr2);
    let c0 = -m.det();
    [c0, c1, c2]
}

/// Bisection to machine precision on a bracketing interval.
pub fn bisect_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "bisection bracket does not straddle a root");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All real roots of a cubic isolated by a sign scan plus bisection.
pub fn cubic_real_roots(c: [f64; 3]) -> Vec<f64> {
    let p = |t: f64| t * t * t + c[2] * t * t + c[1] * t + c[0];
    let bound = 1.0 + c.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let n = 20_000;
    let mut roots = Vec::new();
    let mut prev_t = -bound;
    let mut prev_v = p(prev_t);
    for i in 1..=n {
        let t = -bound + 2.0 * bound * i as f64 / n as f64;
        let v = p(t);
        if prev_v == 0.0 {
            roots.push(prev_t);
        } else if prev_v * v < 0.0 {
            roots.push(bisect_root(p, prev_t, t));
        }
        prev_t = t;
        prev_v = v;
    }
    roots
}

fn unit_eigenvector_3(m: &Mat, lambda: f64) -> TangentVector {
    // null direction of (M - lambda I) from the smallest right singular vector
    let mut shifted = m.to_na();
    for i in 0..3 {
        shifted[(i, i)] -= lambda;
    }
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let row = vt.row(2);
    let mut v = [row[0], row[1], row[2], 0.0];
    // deterministic sign: first component of largest magnitude is positive
    let lead = (0..3).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap();
    if v[lead] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    TangentVector::from_raw(v, 3).normalized()
}

/// The T^3 seed automorphism together with its validated spectrum.
pub fn make_linear_anosov_t3() -> (DynSystem, LinearAnosovSpec) {
    let rows: Vec<Vec<i64>> = SEED_T3.iter().map(|r| r.to_vec()).collect();
    let lin = LinearMap::new(&rows, SplitDims { s: 1, c: 1, u: 1 }, "linear_anosov_t3")
        .expect("seed matrix is unimodular");
    let coeffs = char_poly_3(&lin.matrix);
    let mut roots = cubic_real_roots(coeffs);
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(roots.len(), 3, "seed spectrum must be real and simple");
    assert!(
        roots[0] < 1.0 / 3.0 && 1.0 < roots[1] && roots[1] < 3.0 && 3.0 < roots[2],
        "seed spectrum must straddle 1/3, 1, 3"
    );
    let basis: Vec<TangentVector> =
        roots.iter().map(|&l| unit_eigenvector_3(&lin.matrix, l)).collect();
    let spec = LinearAnosovSpec { matrix: rows, eigenvalues: roots, eigenbasis: basis };
    (DynSystem::Linear(lin), spec)
}

/// Deformation parameters; `t` may be given directly or as an offset from
/// the bifurcation value t0 = lambda_c - 1.
#[derive(Clone, Copy, Debug)]
pub struct DaConfig {
    pub t: Option<f64>,
    pub t_offset_from_t0: Option<f64>,
    pub delta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub eta_c: f64,
    pub l_seg: f64,
    pub tau0: f64,
}

impl Default for DaConfig {
    fn default() -> Self {
        DaConfig {
            t: None,
            t_offset_from_t0: Some(0.2),
            delta: 0.1,
            beta: 0.25,
            alpha: 0.55,
            eta_c: 1.55,
            l_seg: 0.2,
            tau0: 0.6,
        }
    }
}

/// Largest admissible offset above t0; beyond it the family is not shipped.
pub const DA_T_OFFSET_MAX: f64 = 0.3;
const DA_INJECTIVITY_GRID: usize = 40;
const DA_MIN_SINGULAR: f64 = 0.01;

pub fn make_da(cfg: DaConfig) -> Result<DynSystem> {
    let (lin, spec) = make_linear_anosov_t3();
    let lc = spec.eigenvalues[1];
    let t0 = lc - 1.0;
    let t = match (cfg.t, cfg.t_offset_from_t0) {
        (Some(t), None) => t,
        (None, Some(off)) => t0 + off,
        (Some(t), Some(_)) => {
            // explicit t wins; offsets are a convenience for recipes
            t
        }
        (None, None) => {
            return Err(PhdynError::Invalid("neither t nor t_offset_from_t0 given".into()))
        }
    };
    if !(0.0..=t0 + DA_T_OFFSET_MAX + 1e-12).contains(&t) {
        return Err(PhdynError::ConstructionRejected(format!(
            "t = {t} outside the shipped range [0, t0 + {DA_T_OFFSET_MAX}]"
        )));
    }
    if !(cfg.beta > 0.0 && cfg.beta < 1.0 && cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(PhdynError::ConstructionRejected("alpha, beta must lie in (0,1)".into()));
    }
    let lambda_rate = 3.0f64.powf(1.0 - cfg.alpha) * (1.0 - cfg.beta).powf(cfg.alpha);
    if lambda_rate <= 1.0 {
        return Err(PhdynError::ConstructionRejected(format!(
            "3^(1-alpha)*(1-beta)^alpha = {lambda_rate} must exceed 1"
        )));
    }
    if !(cfg.eta_c > 1.0 && cfg.eta_c <= lc + 1e-12) {
        return Err(PhdynError::ConstructionRejected(format!(
            "eta_c = {} must lie in (1, lambda_c = {lc:.6}]",
            cfg.eta_c
        )));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 0.5) {
        return Err(PhdynError::ConstructionRejected("delta must lie in (0, 1/2)".into()));
    }
    if !(cfg.l_seg > 0.0 && cfg.tau0 > 0.0 && cfg.tau0 < 1.0) {
        return Err(PhdynError::ConstructionRejected("l_seg > 0 and tau0 in (0,1) required".into()));
    }
    let base = match lin {
        DynSystem::Linear(l) => l,
        _ => unreachable!(),
    };
    let da = DaMap {
        base,
        params: DaParams {
            t,
            delta: cfg.delta,
            beta: cfg.beta,
            alpha: cfg.alpha,
            eta_c: cfg.eta_c,
            l_seg: cfg.l_seg,
            tau0: cfg.tau0,
        },
        p0: TorusPoint::origin(3),
        evals: [spec.eigenvalues[0], spec.eigenvalues[1], spec.eigenvalues[2]],
        evecs: [spec.eigenbasis[0].raw(), spec.eigenbasis[1].raw(), spec.eigenbasis[2].raw()],
    };
    if t > 0.0 {
        // deformation lives inside the ball; sweep a lattice covering it
        let g = DA_INJECTIVITY_GRID;
        for ix in 0..g {
            for iy in 0..g {
                for iz in 0..g {
                    let p = TorusPoint::from_wrapped(
                        [
                            (ix as f64 + 0.5) / g as f64,
                            (iy as f64 + 0.5) / g as f64,
                            (iz as f64 + 0.5) / g as f64,
                            0.0,
                        ],
                        3,
                        Domain::Torus,
                    );
                    if p.distance(&da.p0) > cfg.delta + 0.05 {
                        continue;
                    }
                    let sv = min_conorm(&da.jacobian(&p));
                    if sv <= DA_MIN_SINGULAR {
                        return Err(PhdynError::ConstructionRejected(format!(
                            "injectivity sweep failed at {:?}: min singular value {sv:.3e}",
                            p.coords()
                        )));
                    }
                }
            }
        }
    }
    Ok(DynSystem::DerivedAnosov(Box::new(da)))
}

/// Convenience: the deformed map at the shipped parameters.
pub fn shipped_da() -> DynSystem {
    make_da(DaConfig::default()).expect("shipped parameters validate")
}

pub fn da_support_ball(f: &DynSystem) -> crate::torus::BoxDomain {
    match f {
        DynSystem::DerivedAnosov(m) => {
            crate::torus::BoxDomain::new(m.p0, m.params.delta).unwrap()
        }
        _ => panic!("not a deformed system"),
    }
}

/// The squeezing/sliding affine reparametrization of the first coordinate:
/// (x, y, z) -> (lambda x + tau, y, z).
pub fn l_squeeze(lambda: f64, tau: f64, p: &TorusPoint) -> Result<TorusPoint> {
    if !(lambda > 0.0 && lambda <= 1.0 && tau >= 0.0 && tau <= 1.0 - lambda + 1e-15) {
        return Err(PhdynError::Invalid(format!(
            "need 0 < lambda <= 1 and 0 <= tau <= 1 - lambda, got lambda={lambda}, tau={tau}"
        )));
    }
    let c = p.raw();
    Ok(TorusPoint::from_wrapped([lambda * c[0] + tau, c[1], c[2], 0.0], 3, Domain::Torus))
}

pub fn l_squeeze_inv(lambda: f64, tau: f64, p: &TorusPoint) -> TorusPoint {
    let c = p.raw();
    TorusPoint::from_wrapped([(c[0] - tau) / lambda, c[1], c[2], 0.0], 3, Domain::Cylinder)
}

/// Block with the plain symmetric displacement; reduces to (x, A(y,z)) at
/// kappa = 0 and fixes both boundary tori.
pub fn make_surrogate_block(kappa: f64, a: [[i64; 2]; 2]) -> Result<DynSystem> {
    Ok(DynSystem::Block(BlockMap::new(kappa, 0.0, Anosov2::new(a)?)?))
}

/// Block with a drifted displacement whose mid fiber is the unique
/// attractor; used by the measure-counting experiments.
pub fn make_drift_block(kappa: f64, drift: f64, a: [[i64; 2]; 2]) -> Result<DynSystem> {
    Ok(DynSystem::Block(BlockMap::new(kappa, drift, Anosov2::new(a)?)?))
}

/// Block with two-way coupling between the interval factor and the torus
/// factor; the shear feeds hyperbolic expansion into the center direction.
pub fn make_shear_block(
    kappa: f64,
    drift: f64,
    shear: f64,
    a: [[i64; 2]; 2],
) -> Result<DynSystem> {
    Ok(DynSystem::Block(BlockMap::with_shear(kappa, drift, shear, Anosov2::new(a)?)?))
}

/// One block of a gluing, in spec form.
#[derive(Clone, Debug)]
pub struct BlockSpec {
    pub map: BlockMap,
    pub lambda: f64,
    pub tau: f64,
    pub inverted: bool,
}

pub fn make_glued(mut blocks: Vec<BlockSpec>) -> Result<DynSystem> {
    if blocks.is_empty() {
        return Err(PhdynError::ConstructionRejected("gluing needs at least one block".into()));
    }
    blocks.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
    let mut edge = 0.0;
    for b in &blocks {
        if (b.tau - edge).abs() > 1e-12 || b.lambda <= 0.0 {
            return Err(PhdynError::ConstructionRejected(format!(
                "block intervals must tile [0,1): gap at tau = {edge}"
            )));
        }
        edge += b.lambda;
    }
    if (edge - 1.0).abs() > 1e-12 {
        return Err(PhdynError::ConstructionRejected(format!(
            "block intervals cover [0, {edge}), not [0,1)"
        )));
    }
    let a0 = blocks[0].map.a2;
    if blocks.iter().any(|b| b.map.a2 != a0) {
        return Err(PhdynError::ConstructionRejected(
            "mismatched boundary maps: all blocks must share the same torus automorphism".into(),
        ));
    }
    let continuous = blocks.iter().all(|b| b.inverted == blocks[0].inverted);
    Ok(DynSystem::Glued(GluedMap {
        blocks: blocks
            .into_iter()
            .map(|b| GluedBlock { lambda: b.lambda, tau: b.tau, map: b.map, inverted: b.inverted })
            .collect(),
        continuous,
    }))
}

/// k equal copies of one block.
pub fn make_glued_uniform(k: usize, kappa: f64, drift: f64, inverted: bool) -> Result<DynSystem> {
    let map = BlockMap::new(kappa, drift, Anosov2::new(CAT_MAP)?)?;
    let blocks = (0..k)
        .map(|i| BlockSpec {
            map,
            lambda: 1.0 / k as f64,
            tau: i as f64 / k as f64,
            inverted,
        })
        .collect();
    make_glued(blocks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FepsVariant {
    Single,
    TwoBlocks,
}

/// Conjugated block on [0, 1-eps) with either the literal product map or a
/// second block on [1-eps, 1). The product tail is the kappa = 0 block, so
/// the piece really is (x, A(y,z)) there, not an approximation.
pub fn make_f_epsilon(
    epsilon: f64,
    kappa: f64,
    drift: f64,
    kappa2: f64,
    variant: FepsVariant,
) -> Result<DynSystem> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PhdynError::ConstructionRejected("epsilon must lie in (0,1)".into()));
    }
    let a2 = Anosov2::new(CAT_MAP)?;
    let head = BlockSpec {
        map: BlockMap::new(kappa, drift, a2)?,
        lambda: 1.0 - epsilon,
        tau: 0.0,
        inverted: false,
    };
    let tail_map = match variant {
        FepsVariant::Single => BlockMap::new(0.0, 0.0, a2)?,
        FepsVariant::TwoBlocks => BlockMap::new(kappa2, drift, a2)?,
    };
    let tail = BlockSpec { map: tail_map, lambda: epsilon, tau: 1.0 - epsilon, inverted: false };
    make_glued(vec![head, tail])
}

/// Recorded splitting of a product system.
#[derive(Clone, Debug)]
pub struct ProductSplitting {
    pub unstable: TangentVector,
    pub center: TangentVector,
    pub stable: [TangentVector; 2],
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Product of two 2-torus automorphisms; requires the first factor to
/// expand strictly faster so the second factor's expansion is the center.
pub fn make_product_anosov(
    a1: [[i64; 2]; 2],
    a2: [[i64; 2]; 2],
) -> Result<(DynSystem, ProductSplitting)> {
    let m1 = Anosov2::new(a1)?;
    let m2 = Anosov2::new(a2)?;
    let (l1, s1) = m1.eigenvalues();
    let (l2, s2) = m2.eigenvalues();
    if !(l1 > l2 && l2 > 1.0) {
        return Err(PhdynError::ConstructionRejected(format!(
            "need unstable eigenvalues lambda1 > lambda2 > 1, got {l1:.6} and {l2:.6}"
        )));
    }
    let e = |v: [f64; 2], hi: bool| -> TangentVector {
        let mut raw = [0.0; MAX_DIM];
        if hi {
            raw[0] = v[0];
            raw[1] = v[1];
        } else {
            raw[2] = v[0];
            raw[3] = v[1];
        }
        TangentVector::from_raw(raw, 4)
    };
    let split = ProductSplitting {
        unstable: e(m1.eigenvector(l1), true),
        center: e(m2.eigenvector(l2), false),
        stable: [e(m1.eigenvector(s1), true), e(m2.eigenvector(s2), false)],
        lambda1: l1,
        lambda2: l2,
    };
    Ok((DynSystem::Product(ProductMap { a1: m1, a2: m2 }), split))
}
