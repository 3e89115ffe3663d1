//! Scalar time-average diagnostics along orbits: central exponent series,
//! non-uniform-expansion statistics on the center-unstable bundle,
//! occupation fractions of a target ball, integrated log-expansion
//! functionals against histogram measures, and the subsequence-average
//! inequality used to pass between full and strided time averages.

use crate::error::{PhdynError, Result};
use crate::linalg::{svd2_extremes, Mat};
use crate::measures::{measure_distance, pushforward_histogram, HistogramMeasure};
use crate::splitting::{OrbitCocycle, DEFAULT_CONVERGENCE_STEPS};
use crate::system::DynSystem;
use crate::torus::{BoxDomain, TorusPoint};
use rayon::prelude::*;

/// Tail fraction of the horizon over which liminf/limsup proxies are taken.
pub const TAIL_WINDOW_FRACTION: f64 = 0.25;

fn tail_range(horizon: usize) -> std::ops::RangeInclusive<usize> {
    let start = ((horizon as f64) * (1.0 - TAIL_WINDOW_FRACTION)).ceil() as usize;
    start.max(1)..=horizon
}

/// Per-step expansion factors along the covariant center direction and the
/// per-step minimal expansion of the center-unstable restriction, shared by
/// the exponent and expansion statistics.
///
/// Restricted conorms use the splitting-adapted metric (covariant
/// subbundles declared orthogonal, Euclidean inside each bundle); the
/// one-step conorm of the center-unstable restriction is then the smaller
/// of the per-bundle multipliers and multiplies exactly along orbits.
struct CenterTrack {
    /// log m(Df^n|E^c) for n = 1..=horizon (cumulative)
    center_log: Vec<f64>,
    /// log m(Df|E^cu) at each orbit point, per step
    cu_min_step: Vec<f64>,
    /// the orbit points x_0..x_horizon
    points: Vec<TorusPoint>,
}

fn center_track(f: &DynSystem, x: &TorusPoint, horizon: usize) -> Result<CenterTrack> {
    let dims = f.split_dims();
    let dcu = dims.c + dims.u;
    let runway = DEFAULT_CONVERGENCE_STEPS;
    let cocycle = OrbitCocycle::compute(f, x, horizon + runway, runway, dcu)?;
    let mut center_log = Vec::with_capacity(horizon);
    if dims.c == 1 {
        let growth = cocycle.covariant_growth(dims.u, horizon);
        let mut acc = 0.0;
        for g in growth {
            acc += g.ln();
            center_log.push(acc);
        }
    } else {
        // multi-dimensional center: accumulate restricted products in the
        // covariant frame and take singular extremes per prefix
        let coords: Vec<Vec<[f64; crate::linalg::MAX_DIM]>> =
            (dims.u..dcu).map(|col| cocycle.covariant_coordinates(col)).collect();
        let k = dims.c;
        let d = f.dim();
        let mut bases: Vec<Vec<crate::torus::TangentVector>> = Vec::with_capacity(horizon + 1);
        for j in 0..=horizon {
            let vs: Vec<crate::torus::TangentVector> =
                coords.iter().map(|c| cocycle.direction(j, &c[j])).collect();
            bases.push(crate::splitting::orthonormal_copy(&vs));
        }
        let mut prod = Mat::identity(k.max(2));
        let mut log_scale = 0.0;
        for j in 0..horizon {
            let jac = f.jacobian(&cocycle.points[j]);
            let mut step = Mat::identity(k.max(2));
            for (ci, v) in bases[j].iter().enumerate() {
                let pushed = jac.matvec(&v.raw());
                for (ri, w) in bases[j + 1].iter().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += w.raw()[i] * pushed[i];
                    }
                    step.a[ri][ci] = acc;
                }
            }
            prod = step.mul(&prod);
            let scale =
                prod.a.iter().take(k).flat_map(|r| r.iter().take(k)).fold(0.0f64, |m, v| m.max(v.abs()));
            if scale > 0.0 && !(1e-100..=1e100).contains(&scale) {
                for r in 0..k {
                    for c in 0..k {
                        prod.a[r][c] /= scale;
                    }
                }
                log_scale += scale.ln();
            }
            let svs = prod.singular_values();
            center_log.push(log_scale + svs[k - 1].ln());
        }
    }
    // per-bundle one-step multipliers; the unstable bundle heads the flag,
    // so for a 1-D unstable the covariant growth is just the leading
    // triangular diagonal
    let mut cu_min_step = vec![f64::INFINITY; horizon];
    if dims.c >= 1 {
        let growth = if dims.c == 1 {
            cocycle.covariant_growth(dims.u, horizon)
        } else {
            let mut g = Vec::with_capacity(horizon);
            let mut prev = 0.0;
            for (n, &s) in center_log.iter().enumerate() {
                // multi-dimensional centers only ship as degenerate test
                // doubles; per-step conorm from consecutive prefixes
                g.push((s - prev).exp());
                let _ = n;
                prev = s;
            }
            g
        };
        for (j, g) in growth.iter().enumerate() {
            cu_min_step[j] = cu_min_step[j].min(*g);
        }
    }
    if dims.u >= 1 {
        let growth = if dims.u == 1 {
            cocycle.covariant_growth(0, horizon)
        } else {
            let mut g = Vec::with_capacity(horizon);
            for j in 0..horizon {
                let r = &cocycle.transitions[j];
                let mut block = Mat::identity(dims.u.max(2));
                for i in 0..dims.u {
                    for jj in 0..dims.u {
                        block.a[i][jj] = r.a[i][jj];
                    }
                }
                g.push(svd2_extremes(block.a[0][0], block.a[0][1], block.a[1][0], block.a[1][1]).1);
            }
            g
        };
        for (j, g) in growth.iter().enumerate() {
            cu_min_step[j] = cu_min_step[j].min(*g);
        }
    }
    let points = cocycle.points[..=horizon].to_vec();
    Ok(CenterTrack { center_log, cu_min_step, points })
}

/// Finite-time central exponent series lambda^c_n = (1/n) log m(Df^n|E^c).
#[derive(Clone, Debug)]
pub struct ExponentSeries {
    pub x0: TorusPoint,
    /// values[n-1] = lambda^c_n
    pub values: Vec<f64>,
    pub horizon: usize,
    pub last: f64,
    /// running min over the tail window (liminf proxy)
    pub liminf_proxy: f64,
    /// running max over the tail window (limsup proxy)
    pub limsup_proxy: f64,
}

pub fn central_exponent(f: &DynSystem, x: &TorusPoint, horizon: usize) -> Result<ExponentSeries> {
    if horizon == 0 {
        return Err(PhdynError::Invalid("horizon must be positive".into()));
    }
    let track = center_track(f, x, horizon)?;
    let values: Vec<f64> =
        track.center_log.iter().enumerate().map(|(i, &s)| s / (i + 1) as f64).collect();
    let tail = tail_range(horizon);
    let tail_vals = &values[tail.start() - 1..*tail.end()];
    let liminf_proxy = tail_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let limsup_proxy = tail_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(ExponentSeries {
        x0: *x,
        last: *values.last().unwrap(),
        values,
        horizon,
        liminf_proxy,
        limsup_proxy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NueVerdict {
    /// tail max of the Birkhoff sums is below -c0: holds for all late times
    NuePass,
    /// only the tail min is below -c0: holds along a subsequence
    WnuePassOnly,
    Fail,
}

/// Birkhoff sums S_n of log |(Df|E^cu)^{-1}| along the orbit, with the
/// threshold verdict. |(Df|E^cu)^{-1}| is 1/m(Df|E^cu) per step.
#[derive(Clone, Debug)]
pub struct NueStat {
    pub x0: TorusPoint,
    /// sums[n-1] = S_n
    pub sums: Vec<f64>,
    pub c0: f64,
    pub verdict: NueVerdict,
    pub tail_max: f64,
    pub tail_min: f64,
}

pub fn nue_statistic(f: &DynSystem, x: &TorusPoint, horizon: usize, c0: f64) -> Result<NueStat> {
    if horizon == 0 || !(c0 > 0.0) {
        return Err(PhdynError::Invalid("need horizon >= 1 and c0 > 0".into()));
    }
    let track = center_track(f, x, horizon)?;
    let mut sums = Vec::with_capacity(horizon);
    let mut acc = 0.0;
    for (i, m) in track.cu_min_step.iter().enumerate() {
        acc -= m.ln();
        sums.push(acc / (i + 1) as f64);
    }
    let tail = tail_range(horizon);
    let tail_vals = &sums[tail.start() - 1..*tail.end()];
    let tail_max = tail_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail_min = tail_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let verdict = if tail_max <= -c0 {
        NueVerdict::NuePass
    } else if tail_min <= -c0 {
        NueVerdict::WnuePassOnly
    } else {
        NueVerdict::Fail
    };
    Ok(NueStat { x0: *x, sums, c0, verdict, tail_max, tail_min })
}

/// Occupation fractions of a ball along the orbit and the horizons at
/// which the fraction reaches the threshold.
#[derive(Clone, Debug)]
pub struct OccupationStats {
    pub x0: TorusPoint,
    /// fractions[k-1] = |{j < k : f^j(x) in V}| / k
    pub fractions: Vec<f64>,
    pub alpha: f64,
    /// in_m[k-1]: fraction at horizon k reaches alpha
    pub in_m: Vec<bool>,
}

pub fn occupation(
    f: &DynSystem,
    x: &TorusPoint,
    ball: &BoxDomain,
    horizon: usize,
    alpha: f64,
) -> OccupationStats {
    let mut fractions = Vec::with_capacity(horizon);
    let mut in_m = Vec::with_capacity(horizon);
    let mut p = *x;
    let mut count = 0usize;
    for k in 1..=horizon {
        if ball.contains(&p) {
            count += 1;
        }
        let frac = count as f64 / k as f64;
        fractions.push(frac);
        in_m.push(frac >= alpha);
        p = f.apply(&p);
    }
    OccupationStats { x0: *x, fractions, alpha, in_m }
}

/// One expansion budget: per-step log rates granted outside and inside
/// the ball.
#[derive(Clone, Copy, Debug)]
pub struct ScanBudget {
    pub outside_log: f64,
    pub inside_log: f64,
}

/// Per-point summary of the occupation/expansion mechanism scan.
#[derive(Clone, Debug)]
pub struct MechanismPoint {
    /// some horizon k >= k_min had occupation fraction >= alpha
    pub in_union: bool,
    pub final_fraction: f64,
    /// min over n in [k_min, horizon] of lambda^c_n
    pub min_tail_exponent: f64,
    /// per budget: max over n of (budget_n - n*lambda^c_n)/n
    pub max_slack: Vec<f64>,
}

/// Fused orbit scan: occupation counting plus center-exponent accounting
/// against per-step expansion budgets, one pass per point.
pub fn expansion_occupation_scan(
    f: &DynSystem,
    points: &[TorusPoint],
    ball: &BoxDomain,
    horizon: usize,
    alpha: f64,
    k_min: usize,
    budgets: &[ScanBudget],
) -> Result<Vec<MechanismPoint>> {
    let results: Vec<Result<MechanismPoint>> = points
        .par_iter()
        .map(|x| {
            let track = center_track(f, x, horizon)?;
            let mut count = 0usize;
            let mut in_union = false;
            let mut min_tail = f64::INFINITY;
            let mut max_slack = vec![f64::NEG_INFINITY; budgets.len()];
            for n in 1..=horizon {
                if ball.contains(&track.points[n - 1]) {
                    count += 1;
                }
                let frac = count as f64 / n as f64;
                let lam_n = track.center_log[n - 1] / n as f64;
                if n >= k_min {
                    if frac >= alpha {
                        in_union = true;
                    }
                    min_tail = min_tail.min(lam_n);
                }
                for (b, budget) in budgets.iter().enumerate() {
                    let want =
                        (n - count) as f64 * budget.outside_log + count as f64 * budget.inside_log;
                    max_slack[b] = max_slack[b].max((want - track.center_log[n - 1]) / n as f64);
                }
            }
            Ok(MechanismPoint {
                in_union,
                final_fraction: count as f64 / horizon as f64,
                min_tail_exponent: min_tail,
                max_slack,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Integrated log-expansion of the center restriction against a histogram
/// measure, for every step count up to n_max.
#[derive(Clone, Debug)]
pub struct LnSeries {
    /// values[n-1] = integral of log m(Df^n|E^c) d mu
    pub values: Vec<f64>,
    /// values[n_max-1]/n_max, the per-step rate at the largest horizon
    pub lambda_estimate: f64,
    /// max over n of the cell-center vs subcell-refined difference
    pub quad_error: f64,
    pub invariance_defect: f64,
    pub invariance_warned: bool,
}

pub const INVARIANCE_WARN_TV: f64 = 0.05;

pub fn ln_functional(f: &DynSystem, mu: &HistogramMeasure, n_max: usize) -> Result<LnSeries> {
    if n_max == 0 {
        return Err(PhdynError::Invalid("need at least one step".into()));
    }
    let pushed = pushforward_histogram(f, mu, 2);
    let invariance_defect = measure_distance(mu, &pushed)?;
    let cells: Vec<(usize, f64)> = mu
        .mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 1e-15)
        .map(|(i, &m)| (i, m))
        .collect();
    let per_cell: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = cells
        .par_iter()
        .map(|&(idx, m)| {
            let center = mu.cell_center(idx);
            let track = center_track(f, &center, n_max)?;
            // refinement: average the integrand over 2^d subcell centers
            let cell = 1.0 / mu.res as f64;
            let d = mu.dim;
            let corners = 1usize << d;
            let mut refined = vec![0.0; n_max];
            for corner in 0..corners {
                let mut raw = center.raw();
                for i in 0..d {
                    let off = if corner >> i & 1 == 1 { 0.25 } else { -0.25 };
                    raw[i] += off * cell;
                }
                let p = TorusPoint::from_wrapped(raw, d, mu.domain);
                let sub = center_track(f, &p, n_max)?;
                for n in 0..n_max {
                    refined[n] += sub.center_log[n] / corners as f64;
                }
            }
            Ok((m, track.center_log, refined))
        })
        .collect();
    let mut values = vec![0.0; n_max];
    let mut refined_total = vec![0.0; n_max];
    for r in per_cell {
        let (m, center_logs, refined) = r?;
        for n in 0..n_max {
            values[n] += m * center_logs[n];
            refined_total[n] += m * refined[n];
        }
    }
    let quad_error = values
        .iter()
        .zip(&refined_total)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(LnSeries {
        lambda_estimate: values[n_max - 1] / n_max as f64,
        values,
        quad_error,
        invariance_defect,
        invariance_warned: invariance_defect > INVARIANCE_WARN_TV,
    })
}

/// Finite-sequence comparison between the full prefix averages and the
/// per-offset strided prefix averages. With both sides taken as prefix
/// maxima over a common window count the inequality is exact.
#[derive(Clone, Copy, Debug)]
pub struct SeqLemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// trailing entries dropped to reach a multiple of the stride
    pub truncated: usize,
}

pub fn seq_limsup_bound(a: &[f64], stride: usize) -> Result<SeqLemmaCheck> {
    if stride == 0 {
        return Err(PhdynError::Invalid("stride must be positive".into()));
    }
    let windows = a.len() / stride;
    if windows == 0 {
        return Err(PhdynError::Invalid(format!(
            "sequence of length {} too short for stride {stride}",
            a.len()
        )));
    }
    let truncated = a.len() - windows * stride;
    let mut lhs = f64::NEG_INFINITY;
    let mut acc = 0.0;
    for m in 1..=windows {
        for k in (m - 1) * stride..m * stride {
            acc += a[k];
        }
        lhs = lhs.max(acc / (m * stride) as f64);
    }
    let mut rhs = f64::NEG_INFINITY;
    for offset in 0..stride {
        let mut sum = 0.0;
        for m in 1..=windows {
            sum += a[(m - 1) * stride + offset];
            rhs = rhs.max(sum / m as f64);
        }
    }
    Ok(SeqLemmaCheck { lhs, rhs, holds: lhs <= rhs + 1e-12, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;
    use crate::torus::TorusPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seed_center_exponent_is_flat_at_log_lambda_c() {
        let (f, spec) = systems::make_linear_anosov_t3();
        let want = spec.eigenvalues[1].ln();
        let x = TorusPoint::wrap(&[0.21, 0.43, 0.65]).unwrap();
        let series = central_exponent(&f, &x, 200).unwrap();
        for v in &series.values {
            assert!((v - want).abs() < 1e-9, "{v} vs {want}");
        }
        assert!((series.liminf_proxy - want).abs() < 1e-9);
        assert!((series.limsup_proxy - want).abs() < 1e-9);
    }

    #[test]
    fn product_center_exponent_is_second_factor_rate() {
        let (f, split) = systems::make_product_anosov([[3, 2], [1, 1]], [[2, 1], [1, 1]]).unwrap();
        let want = split.lambda2.ln();
        let x = TorusPoint::wrap(&[0.17, 0.39, 0.58, 0.91]).unwrap();
        let series = central_exponent(&f, &x, 100).unwrap();
        assert!((series.last - want).abs() < 1e-9, "{} vs {want}", series.last);
    }

    #[test]
    fn zero_kappa_block_center_exponent_vanishes() {
        let g = systems::make_surrogate_block(0.0, systems::CAT_MAP).unwrap();
        let x = TorusPoint::wrap_in(&[0.37, 0.21, 0.74], crate::torus::Domain::Cylinder).unwrap();
        let series = central_exponent(&g, &x, 100).unwrap();
        for v in &series.values {
            assert!(v.abs() < 1e-13, "center exponent {v} should vanish");
        }
    }

    #[test]
    fn nue_on_seed_passes_with_constant_sums() {
        let (f, spec) = systems::make_linear_anosov_t3();
        let x = TorusPoint::wrap(&[0.81, 0.13, 0.47]).unwrap();
        let stat = nue_statistic(&f, &x, 200, 0.2).unwrap();
        assert_eq!(stat.verdict, NueVerdict::NuePass);
        let want = -spec.eigenvalues[1].ln();
        for s in &stat.sums {
            assert!((s - want).abs() < 1e-9);
        }
    }

    #[test]
    fn nue_fails_identically_in_the_product_tail() {
        let f = systems::make_f_epsilon(0.2, 0.05, 0.5, 0.0, systems::FepsVariant::Single).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let x = TorusPoint::wrap(&[0.8 + 0.2 * rng.gen::<f64>(), rng.gen(), rng.gen()]).unwrap();
            let stat = nue_statistic(&f, &x, 300, 0.05).unwrap();
            assert_eq!(stat.verdict, NueVerdict::Fail);
            for s in &stat.sums {
                assert!(s.abs() < 1e-9, "sum {s} should vanish in the product region");
            }
        }
    }

    #[test]
    fn sign_bridge_on_the_seed() {
        // with a one-dimensional center whose expansion is the weakest in
        // the center-unstable bundle, S_n = -lambda^c_n exactly
        let (f, _) = systems::make_linear_anosov_t3();
        let x = TorusPoint::wrap(&[0.33, 0.57, 0.29]).unwrap();
        let series = central_exponent(&f, &x, 100).unwrap();
        let stat = nue_statistic(&f, &x, 100, 0.1).unwrap();
        for (s, l) in stat.sums.iter().zip(&series.values) {
            assert!((s + l).abs() < 1e-12);
        }
    }

    #[test]
    fn occupation_at_the_fixed_point_is_total() {
        let f = systems::shipped_da();
        let ball = systems::da_support_ball(&f);
        let stats = occupation(&f, &ball.center, &ball, 100, 0.9);
        assert!(stats.fractions.iter().all(|&fr| fr == 1.0));
        assert!(stats.in_m.iter().all(|&b| b));
    }

    #[test]
    fn occupation_of_a_never_visiting_orbit_is_zero() {
        let (f, _) = systems::make_linear_anosov_t3();
        let center = TorusPoint::wrap(&[0.5, 0.5, 0.5]).unwrap();
        let ball = crate::torus::BoxDomain::new(center, 0.05).unwrap();
        // the origin is fixed and far from the ball
        let stats = occupation(&f, &TorusPoint::origin(3), &ball, 200, 0.1);
        assert!(stats.fractions.iter().all(|&fr| fr == 0.0));
        assert!(stats.in_m.iter().all(|&b| !b));
    }

    #[test]
    fn ln_on_seed_with_uniform_measure_is_linear_in_n() {
        let (f, spec) = systems::make_linear_anosov_t3();
        let mu = HistogramMeasure::uniform(3, 8, crate::torus::Domain::Torus);
        let series = ln_functional(&f, &mu, 8).unwrap();
        let lc = spec.eigenvalues[1].ln();
        for (n, v) in series.values.iter().enumerate() {
            assert!((v - (n + 1) as f64 * lc).abs() < 1e-6, "L_{} = {v}", n + 1);
        }
        assert!(!series.invariance_warned);
        assert!((series.lambda_estimate - lc).abs() < 1e-7);
    }

    #[test]
    fn ln_on_identity_vanishes() {
        let f = crate::system::DynSystem::Identity { dim: 3 };
        let mut mu = HistogramMeasure::zeros(3, 8, crate::torus::Domain::Torus);
        mu.add(&TorusPoint::wrap(&[0.3, 0.1, 0.7]).unwrap(), 0.6);
        mu.add(&TorusPoint::wrap(&[0.9, 0.5, 0.2]).unwrap(), 0.4);
        let series = ln_functional(&f, &mu, 5).unwrap();
        for v in &series.values {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn seq_lemma_constant_and_alternating() {
        let c = vec![1.7; 30];
        let r = seq_limsup_bound(&c, 3).unwrap();
        assert!((r.lhs - 1.7).abs() < 1e-12 && (r.rhs - 1.7).abs() < 1e-12 && r.holds);
        let alt: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let r = seq_limsup_bound(&alt, 2).unwrap();
        assert!((r.lhs - 0.5).abs() < 1e-12, "lhs {}", r.lhs);
        assert!((r.rhs - 1.0).abs() < 1e-12, "rhs {}", r.rhs);
        assert!(r.holds);
    }

    #[test]
    fn seq_lemma_holds_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let len = rng.gen_range(10..400);
            let a: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            for stride in [2, 3, 5] {
                let r = seq_limsup_bound(&a, stride).unwrap();
                assert!(r.holds, "violation: lhs {} rhs {}", r.lhs, r.rhs);
            }
        }
    }

    #[test]
    fn seq_lemma_records_truncation() {
        let a = vec![1.0; 11];
        let r = seq_limsup_bound(&a, 3).unwrap();
        assert_eq!(r.truncated, 2);
    }

    #[test]
    fn center_cocycle_is_additive_along_orbits() {
        let f = systems::shipped_da();
        let x = TorusPoint::wrap(&[0.42, 0.17, 0.93]).unwrap();
        let (a, n) = (7, 20);
        let fa = f.apply_n(&x, a);
        let full = central_exponent(&f, &x, n).unwrap();
        let head = central_exponent(&f, &x, a).unwrap();
        let tail = central_exponent(&f, &fa, n - a).unwrap();
        let lhs = n as f64 * full.values[n - 1];
        let rhs = a as f64 * head.values[a - 1] + (n - a) as f64 * tail.values[n - a - 1];
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
