//! Basin cartography: Birkhoff averages of a fixed observable set over a
//! grid of initial points, convergence gating, deterministic reference
//! clustering (the cluster count is the number of detected physical
//! measures), openness probes, and scans across system families.

use crate::error::{PhdynError, Result};
use crate::system::DynSystem;
use crate::torus::{wrap_diff, TorusPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Convergence gate: the averages at n and n/2 must agree to this in
/// max-norm before a point participates in clustering.
pub const EPS_CONV: f64 = 0.01;

#[derive(Clone, Debug)]
enum ObsKind {
    Trig,
    TrigBlocks { k: usize },
}

/// Named bounded observables evaluated along orbits.
#[derive(Clone, Debug)]
pub struct ObservableSet {
    pub names: Vec<String>,
    dim: usize,
    kind: ObsKind,
}

impl ObservableSet {
    /// cos and sin of each angular coordinate.
    pub fn trig(dim: usize) -> Self {
        let mut names = Vec::new();
        for i in 0..dim {
            names.push(format!("cos_x{i}"));
            names.push(format!("sin_x{i}"));
        }
        ObservableSet { names, dim, kind: ObsKind::Trig }
    }

    /// Trig set plus one smoothed indicator per x-block of a k-gluing.
    pub fn trig_with_blocks(dim: usize, k: usize) -> Self {
        let mut set = Self::trig(dim);
        for i in 0..k {
            set.names.push(format!("block_{i}"));
        }
        set.kind = ObsKind::TrigBlocks { k };
        set
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn eval(&self, p: &TorusPoint, out: &mut [f64]) {
        let two_pi = std::f64::consts::TAU;
        let mut j = 0;
        for i in 0..self.dim {
            let (s, c) = (two_pi * p.raw()[i]).sin_cos();
            out[j] = c;
            out[j + 1] = s;
            j += 2;
        }
        if let ObsKind::TrigBlocks { k } = self.kind {
            for b in 0..k {
                let center = (b as f64 + 0.5) / k as f64;
                let d = wrap_diff(p.raw()[0] - center).abs();
                out[j] = (1.0 - 2.0 * k as f64 * d).clamp(0.0, 1.0);
                j += 1;
            }
        }
    }
}

/// Observable averages at the full and half horizon.
#[derive(Clone, Debug)]
pub struct BirkhoffVector {
    pub avg: Vec<f64>,
    pub half_avg: Vec<f64>,
    pub converged: bool,
}

pub fn birkhoff_vector(
    f: &DynSystem,
    x: &TorusPoint,
    n: usize,
    obs: &ObservableSet,
    eps_conv: f64,
) -> BirkhoffVector {
    assert!(n >= 2, "need at least two steps to gate convergence");
    let m = obs.len();
    let mut sum = vec![0.0; m];
    let mut half = vec![0.0; m];
    let mut vals = vec![0.0; m];
    let half_n = n / 2;
    let mut p = *x;
    for step in 0..n {
        obs.eval(&p, &mut vals);
        for i in 0..m {
            sum[i] += vals[i];
        }
        if step + 1 == half_n {
            half.copy_from_slice(&sum);
        }
        p = f.apply(&p);
    }
    let avg: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let half_avg: Vec<f64> = half.iter().map(|s| s / half_n as f64).collect();
    let gap = avg
        .iter()
        .zip(&half_avg)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    BirkhoffVector { avg, half_avg, converged: gap < eps_conv }
}

/// Labeled grid of Birkhoff vectors. Label 0 marks unconverged points;
/// converged points carry 1-based cluster labels.
#[derive(Clone, Debug)]
pub struct BasinMap {
    pub points: Vec<TorusPoint>,
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<BirkhoffVector>,
    pub labels: Vec<u32>,
    pub cluster_count: usize,
    pub references: Vec<Vec<f64>>,
    pub tol: f64,
    pub horizon: usize,
}

/// Tiny fixed irrational shifts applied to grid coordinates. Exact cell
/// centers are small-denominator dyadics, and integer toral maps keep those
/// exactly periodic even in floating point, so their time averages lock
/// onto short periodic orbits instead of the generic statistics.
const GRID_SHIFT: [f64; 4] = [
    2.071067811865475e-4,
    2.320508075688773e-4,
    2.360679774997897e-4,
    2.645751311064591e-4,
];

/// Cell-centered slice grid {x} x {y} x {~0.5 ...} for d >= 2, with the
/// de-periodizing shift.
pub fn slice_grid(dim: usize, res: usize) -> Vec<TorusPoint> {
    let mut pts = Vec::with_capacity(res * res);
    for iy in 0..res {
        for ix in 0..res {
            let mut raw = [0.5; crate::linalg::MAX_DIM];
            raw[0] = (ix as f64 + 0.5) / res as f64;
            raw[1] = (iy as f64 + 0.5) / res as f64;
            for i in 0..dim {
                raw[i] += GRID_SHIFT[i];
            }
            pts.push(TorusPoint::from_wrapped(raw, dim, crate::torus::Domain::Torus));
        }
    }
    pts
}

/// Deterministic first-fit clustering against a growing reference list,
/// in fixed point order. Rejects tolerances inside the convergence noise.
pub fn cluster_vectors(
    vectors: &[BirkhoffVector],
    tol: f64,
    eps_conv: f64,
) -> Result<(Vec<u32>, Vec<Vec<f64>>, usize)> {
    if tol <= eps_conv {
        return Err(PhdynError::Invalid(format!(
            "cluster tolerance {tol} must exceed the convergence gate {eps_conv}"
        )));
    }
    let mut labels = vec![0u32; vectors.len()];
    let mut refs: Vec<Vec<f64>> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        if !v.converged {
            continue;
        }
        let mut assigned = None;
        for (r, reference) in refs.iter().enumerate() {
            let gap = v
                .avg
                .iter()
                .zip(reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if gap < tol {
                assigned = Some(r as u32 + 1);
                break;
            }
        }
        labels[i] = match assigned {
            Some(l) => l,
            None => {
                refs.push(v.avg.clone());
                refs.len() as u32
            }
        };
    }
    let count = refs.len();
    Ok((labels, refs, count))
}

/// Assign a fresh vector to the nearest existing reference, 0 if none is
/// within tolerance or the vector has not converged.
pub fn assign_label(map: &BasinMap, v: &BirkhoffVector) -> u32 {
    if !v.converged {
        return 0;
    }
    let mut best = 0u32;
    let mut best_gap = map.tol;
    for (r, reference) in map.references.iter().enumerate() {
        let gap = v
            .avg
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if gap < best_gap {
            best = r as u32 + 1;
            best_gap = gap;
        }
    }
    best
}

/// Full pipeline: slice grid, parallel Birkhoff averages, clustering.
pub fn basin_map(
    f: &DynSystem,
    res: usize,
    horizon: usize,
    obs: &ObservableSet,
    tol: f64,
) -> Result<BasinMap> {
    let points = slice_grid(f.dim(), res);
    let vectors: Vec<BirkhoffVector> = points
        .par_iter()
        .map(|p| birkhoff_vector(f, p, horizon, obs, EPS_CONV))
        .collect();
    let (labels, references, cluster_count) = cluster_vectors(&vectors, tol, EPS_CONV)?;
    Ok(BasinMap {
        points,
        width: res,
        height: res,
        vectors,
        labels,
        cluster_count,
        references,
        tol,
        horizon,
    })
}

/// Stability of labels under small perturbations of interior points.
#[derive(Clone, Debug)]
pub struct OpennessReport {
    /// per cluster: (label, probed, label-stable)
    pub per_cluster: Vec<(u32, usize, usize)>,
    pub overall_stable_fraction: f64,
    pub radii: Vec<f64>,
}

/// Interior points are grid points whose 4-neighborhood shares the label.
fn interior_indices(map: &BasinMap, label: u32) -> Vec<usize> {
    let (w, h) = (map.width, map.height);
    let mut out = Vec::new();
    for iy in 0..h {
        for ix in 0..w {
            let i = iy * w + ix;
            if map.labels[i] != label {
                continue;
            }
            let neighbors = [
                iy * w + (ix + 1) % w,
                iy * w + (ix + w - 1) % w,
                ((iy + 1) % h) * w + ix,
                ((iy + h - 1) % h) * w + ix,
            ];
            if neighbors.iter().all(|&j| map.labels[j] == label) {
                out.push(i);
            }
        }
    }
    out
}

pub fn basin_openness_probe(
    f: &DynSystem,
    map: &BasinMap,
    obs: &ObservableSet,
    samples_per_cluster: usize,
    radii: &[f64],
    seed: u64,
) -> OpennessReport {
    let mut jobs: Vec<(u32, TorusPoint, f64, u64)> = Vec::new();
    let mut stream = 0u64;
    for label in 1..=map.cluster_count as u32 {
        let interior = interior_indices(map, label);
        if interior.is_empty() {
            continue;
        }
        let step = (interior.len() / samples_per_cluster).max(1);
        for (count, idx) in interior.iter().step_by(step).enumerate() {
            if count >= samples_per_cluster {
                break;
            }
            for &r in radii {
                jobs.push((label, map.points[*idx], r, stream));
                stream += 1;
            }
        }
    }
    let results: Vec<(u32, bool)> = jobs
        .par_iter()
        .map(|&(label, p, r, stream)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let dim = f.dim();
            let mut dir = [0.0; crate::linalg::MAX_DIM];
            loop {
                let mut norm = 0.0;
                for d in dir.iter_mut().take(dim) {
                    *d = rng.gen::<f64>() * 2.0 - 1.0;
                    norm += *d * *d;
                }
                if norm > 1e-4 && norm <= 1.0 {
                    let n = norm.sqrt();
                    for d in dir.iter_mut().take(dim) {
                        *d /= n;
                    }
                    break;
                }
            }
            let moved = p.translate(&crate::torus::TangentVector::from_raw(dir, dim).scale(r));
            let v = birkhoff_vector(f, &moved, map.horizon, obs, EPS_CONV);
            (label, assign_label(map, &v) == label)
        })
        .collect();
    let mut per: Vec<(u32, usize, usize)> = Vec::new();
    for label in 1..=map.cluster_count as u32 {
        let probed = results.iter().filter(|(l, _)| *l == label).count();
        let stable = results.iter().filter(|(l, s)| *l == label && *s).count();
        if probed > 0 {
            per.push((label, probed, stable));
        }
    }
    let total: usize = per.iter().map(|(_, p, _)| p).sum();
    let stable: usize = per.iter().map(|(_, _, s)| s).sum();
    OpennessReport {
        per_cluster: per,
        overall_stable_fraction: if total > 0 { stable as f64 / total as f64 } else { 1.0 },
        radii: radii.to_vec(),
    }
}

/// Detected measure count for each member of a family.
pub fn uniqueness_scan(
    family: &[(String, DynSystem)],
    res: usize,
    horizon: usize,
    obs: &ObservableSet,
    tol: f64,
) -> Result<Vec<(String, usize)>> {
    family
        .iter()
        .map(|(name, f)| Ok((name.clone(), basin_map(f, res, horizon, obs, tol)?.cluster_count)))
        .collect()
}
