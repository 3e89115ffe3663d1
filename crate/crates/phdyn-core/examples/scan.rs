// Development scan of the shipped families (not part of the test suite).
use phdyn_core::basins::{basin_map, ObservableSet};
use phdyn_core::ergodic::{central_exponent, expansion_occupation_scan, ScanBudget};
use phdyn_core::measures::{grow_usegment, measure_distance, pesin_sinai, HistogramMeasure};
use phdyn_core::splitting::{center_one_step_stats, certify_ph};
use phdyn_core::systems;
use phdyn_core::torus::{Domain, TorusPoint};

fn block_exponent(f: &phdyn_core::DynSystem, label: &str) {
    let mut exps = Vec::new();
    for (i, x0) in [[0.23, 0.37, 0.51], [0.61, 0.13, 0.77], [0.41, 0.83, 0.29]].iter().enumerate() {
        let x = TorusPoint::wrap(x0).unwrap();
        let s = central_exponent(f, &x, 200_000).unwrap();
        exps.push(s.last);
        if i == 0 {
            println!("  {label}: exponent sample {:+.5} (liminf {:+.5} limsup {:+.5})", s.last, s.liminf_proxy, s.limsup_proxy);
        }
    }
    println!("  {label}: exponents {:?}", exps.iter().map(|e| format!("{e:+.5}")).collect::<Vec<_>>());
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "blocks" || which == "all" {
        println!("== block central exponents (glued k=1 on T^3) ==");
        let sym = systems::make_glued_uniform(1, 0.05, 0.0, false).unwrap();
        block_exponent(&sym, "symmetric");
        let inv = systems::make_glued_uniform(1, 0.05, 0.0, true).unwrap();
        block_exponent(&inv, "inverted symmetric");
        let drift = systems::make_glued_uniform(1, 0.05, 0.5, false).unwrap();
        block_exponent(&drift, "drift 0.5");

        println!("== cluster counts ==");
        let obs = ObservableSet::trig(3);
        for (name, f) in [
            ("sym k=1", systems::make_glued_uniform(1, 0.05, 0.0, false).unwrap()),
            ("inv k=1", systems::make_glued_uniform(1, 0.05, 0.0, true).unwrap()),
            ("drift k=1", systems::make_glued_uniform(1, 0.05, 0.5, false).unwrap()),
            ("drift k=2", systems::make_glued_uniform(2, 0.05, 0.5, false).unwrap()),
            ("drift k=3", systems::make_glued_uniform(3, 0.05, 0.5, false).unwrap()),
        ] {
            let map = basin_map(&f, 24, 60_000, &obs, 0.05).unwrap();
            let unconv = map.labels.iter().filter(|&&l| l == 0).count();
            println!("  {name}: l = {} (unconverged {unconv}/{})", map.cluster_count, map.labels.len());
        }
        println!("== mixed-sign gluing (first inverted, second plain) ==");
        let a2 = phdyn_core::system::Anosov2::new(systems::CAT_MAP).unwrap();
        let bm = phdyn_core::system::BlockMap::new(0.05, 0.0, a2).unwrap();
        let mixed = systems::make_glued(vec![
            systems::BlockSpec { map: bm, lambda: 1.0 / 3.0, tau: 0.0, inverted: true },
            systems::BlockSpec { map: bm, lambda: 2.0 / 3.0, tau: 1.0 / 3.0, inverted: false },
        ])
        .unwrap();
        for x0 in [[0.15, 0.27, 0.61], [0.7, 0.43, 0.19]] {
            let x = TorusPoint::wrap(&x0).unwrap();
            let s = central_exponent(&mixed, &x, 200_000).unwrap();
            println!("  x0 = {:?}: exponent {:+.5}", x0, s.last);
        }
    }

    if which == "shear" || which == "all" {
        println!("== sheared block exponents (glued k=1) ==");
        let a2 = phdyn_core::system::Anosov2::new(systems::CAT_MAP).unwrap();
        for kappa in [0.03, 0.05, 0.08] {
            for shear in [0.1, 0.2, 0.3, 0.5, 0.8] {
                let bm = match phdyn_core::system::BlockMap::with_shear(kappa, 0.0, shear, a2) {
                    Ok(b) => b,
                    Err(_) => {
                        println!("  kappa {kappa} shear {shear}: rejected");
                        continue;
                    }
                };
                let f = systems::make_glued(vec![systems::BlockSpec {
                    map: bm,
                    lambda: 1.0,
                    tau: 0.0,
                    inverted: false,
                }])
                .unwrap();
                // round-trip sanity
                let x = TorusPoint::wrap(&[0.321, 0.654, 0.987]).unwrap();
                let y = f.apply(&x);
                let back = f.inverse(&y).unwrap();
                assert!(back.distance(&x) < 1e-9, "round trip failed");
                let mut line = format!("  kappa {kappa} shear {shear}: exponents");
                for x0 in [[0.23, 0.37, 0.51], [0.61, 0.13, 0.77]] {
                    let s = central_exponent(&f, &TorusPoint::wrap(&x0).unwrap(), 100_000).unwrap();
                    line += &format!(" {:+.5}", s.last);
                }
                println!("{line}");
            }
        }
    }

    if which == "da" || which == "all" {
        println!("== deformed map certificate (grid 30, n 20) ==");
        let f = systems::shipped_da();
        let t0 = std::time::Instant::now();
        let cert = certify_ph(&f, 30, 20).unwrap();
        println!(
            "  lambda = {:?}\n  mu     = {:?}\n  C = {:.3}, {:?}",
            cert.lambda,
            cert.mu,
            cert.c_const,
            t0.elapsed()
        );
        let ball = systems::da_support_ball(&f);
        let t0 = std::time::Instant::now();
        let floor = center_one_step_stats(&f, 30, &ball).unwrap();
        println!(
            "  center one-step: min inside {:.6} (count {}), min outside {:.6}, max {:.6}, {:?}",
            floor.min_inside, floor.inside_count, floor.min_outside, floor.max_anywhere, t0.elapsed()
        );

        println!("== occupation/expansion scan (1000 pts, horizon 2000) ==");
        let seg = grow_usegment(&f, &TorusPoint::wrap(&[0.37, 0.22, 0.81]).unwrap(), 0.2).unwrap();
        let pts = seg.sample_points(1000);
        let (lc, beta): (f64, f64) = (1.554958132087369, 0.25);
        let budgets = [
            ScanBudget { outside_log: 3.0f64.ln(), inside_log: (1.0 - beta).ln() },
            ScanBudget { outside_log: lc.ln(), inside_log: (1.0 - beta).ln() },
        ];
        let t0 = std::time::Instant::now();
        let scan = expansion_occupation_scan(&f, &pts, &ball, 2000, 0.55, 1000, &budgets).unwrap();
        let in_union = scan.iter().filter(|p| p.in_union).count();
        let min_tail = scan.iter().map(|p| p.min_tail_exponent).fold(f64::INFINITY, f64::min);
        let worst_lit = scan.iter().map(|p| p.max_slack[0]).fold(f64::NEG_INFINITY, f64::max);
        let worst_eta = scan.iter().map(|p| p.max_slack[1]).fold(f64::NEG_INFINITY, f64::max);
        let max_frac = scan.iter().map(|p| p.final_fraction).fold(0.0f64, f64::max);
        println!(
            "  in_union {in_union}/1000, min tail exponent {min_tail:.4} (log lambda = 0.3362), max final fraction {max_frac:.4}"
        );
        println!("  worst literal(log3) slack/step {worst_lit:.4}; worst eta_c slack/step {worst_eta:.3e}; {:?}", t0.elapsed());
    }

    if which == "gibbs" || which == "all" {
        println!("== averaged pushforward on the seed (n=200, grid 20) ==");
        let (f, _) = systems::make_linear_anosov_t3();
        let x = TorusPoint::wrap(&[0.3123, 0.7234, 0.1345]).unwrap();
        let t0 = std::time::Instant::now();
        let seg = grow_usegment(&f, &x, 1.5).unwrap();
        let out = pesin_sinai(&f, &seg, 200, 20).unwrap();
        let u = HistogramMeasure::uniform(3, 20, Domain::Torus);
        println!(
            "  tv(uniform) = {:.4}, pushforward defect = {:.4}, distortion {:.2}, {:?}",
            measure_distance(&out.measure, &u).unwrap(),
            out.pushforward_defect,
            out.max_distortion,
            t0.elapsed()
        );
    }
}
