//! Statistical checks of the walk, Green, sandpile and IDLA layers against
//! exact solves and elementary laws.

use std::sync::Arc;

use sgidla::constants::{ALPHA, BETA};
use sgidla::fluctuations::{fit_power_law, settled_fraction, settled_fraction_unchecked};
use sgidla::green::{
    diagonal_green_bound_check, exit_time_lower_constant, expected_exit_time_exact, harnack_ratio, GreenSolver,
};
use sgidla::idla::{grow, outer_bound_iteration};
use sgidla::sandpile::odometer_lower_bound_audit;
use sgidla::walk::{estimate_exit_time, run_until, step, RngStream, StopRule, StreamSource};
use sgidla::{Gasket, GraphFamily, Vertex};

#[test]
fn one_and_two_step_laws() {
    let f = GraphFamily::DoubledSG;
    let nb = f.neighbors(Vertex::ORIGIN).unwrap();
    let draws = 1_000_000u32;
    let mut rng = RngStream::new(2024, 0);
    let mut counts = [0u32; 4];
    let mut returns = 0u32;
    for _ in 0..draws {
        let w = step(&f, Vertex::ORIGIN, &mut rng).unwrap();
        counts[nb.iter().position(|&x| x == w).unwrap()] += 1;
        if step(&f, w, &mut rng).unwrap().is_origin() {
            returns += 1;
        }
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.25).abs() < 0.003, "{counts:?}");
    }
    assert!((returns as f64 / draws as f64 - 0.25).abs() < 0.003, "{returns}");
}

#[test]
fn first_of_is_decided_by_one_step() {
    let g = Gasket::doubled();
    let f = GraphFamily::DoubledSG;
    let z = f.neighbors(Vertex::ORIGIN).unwrap()[2];
    let ball = Arc::new(g.ball(Vertex::ORIGIN, 1).unwrap());
    let rule = StopRule::FirstOf(vec![StopRule::HitVertex(z), StopRule::HitBoundary(ball)]);
    let trials = 100_000u64;
    let mut hits = 0u64;
    for t in 0..trials {
        let out = run_until(&f, Vertex::ORIGIN, &rule, &mut RngStream::new(9, t), 10).unwrap();
        assert_eq!(out.steps, 1);
        if out.fired == 0 {
            hits += 1;
        }
    }
    assert!((hits as f64 / trials as f64 - 0.25).abs() < 0.01);
}

#[test]
fn simulated_exit_times_match_the_exact_solve() {
    let g = Gasket::doubled();
    let unit = estimate_exit_time(&g, Vertex::ORIGIN, 1, 1000, 1).unwrap();
    assert_eq!((unit.mean, unit.stderr), (1.0, 0.0));

    let exact = expected_exit_time_exact(&g, 4).unwrap();
    for (k, x) in [Vertex::ORIGIN, Vertex::right(2, 0), Vertex::left(1, 2)].into_iter().enumerate() {
        let est = estimate_exit_time(&g, x, 4, 40_000, 50 + k as u64).unwrap();
        let e = exact.value(x).unwrap();
        assert!(est.z_score(e) < 3.0, "{x}: {} vs {e}", est.mean);
    }
}

#[test]
fn exit_time_growth_and_lower_constant() {
    let g = Gasket::doubled();
    let pts: Vec<(f64, f64)> = (2..=6)
        .map(|k| {
            let n = 1u32 << k;
            (n as f64, expected_exit_time_exact(&g, n).unwrap().value(Vertex::ORIGIN).unwrap())
        })
        .collect();
    let (slope, _, _) = fit_power_law(&pts).unwrap();
    assert!((slope - BETA).abs() <= 0.15, "slope {slope}");

    let c: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| exit_time_lower_constant(&g, n).unwrap()).collect();
    let (lo, hi) = c.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    println!("c1 over n = 8..64: {c:?}");
    assert!(lo > 0.0 && hi / lo < 2.0);

    // sampled starting points at n = 32
    let n = 32;
    let ball = g.ball(Vertex::ORIGIN, n).unwrap();
    let mut ratios = Vec::new();
    for (k, &x) in ball.members().iter().step_by(97).enumerate() {
        let d = g.distance_to_inner_boundary(&ball, x).unwrap();
        if d == 0 {
            continue;
        }
        let est = estimate_exit_time(&g, x, n, 400, 300 + k as u64).unwrap();
        ratios.push(est.mean / (d as f64).powf(BETA));
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    println!("n = 32: min mean/d^beta over {} points = {min_ratio:.3}", ratios.len());
    assert!(min_ratio >= 0.5 * lo);
}

#[test]
fn harnack_constant_is_stable_across_seeds() {
    let f = GraphFamily::DoubledSG;
    let a = harnack_ratio(&f, Vertex::ORIGIN, 4, 100, 1).unwrap().worst_ratio;
    let b = harnack_ratio(&f, Vertex::ORIGIN, 4, 100, 2).unwrap().worst_ratio;
    println!("Harnack C: {a:.3}, {b:.3}");
    assert!(a.max(b) / a.min(b) <= 2.0);
}

#[test]
fn diagonal_green_scales_like_the_gap_exponent() {
    let g = Gasket::doubled();
    let ratios: Vec<f64> = [4u32, 8, 16, 32, 64]
        .iter()
        .map(|&n| GreenSolver::new(&g, n).unwrap().diagonal(Vertex::ORIGIN).unwrap() / (n as f64).powf(BETA - ALPHA))
        .collect();
    println!("g(o,o)/n^(beta-alpha): {ratios:?}");
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi / lo < 2.0);
    let rows = diagonal_green_bound_check(&g, 2).unwrap();
    assert!(rows.iter().filter(|r| r.boundary_distance > 0).all(|r| r.green >= 1.0));
}

#[test]
fn odometer_lower_bound_exponent() {
    let g = Gasket::doubled();
    let small = odometer_lower_bound_audit(&g, 8, &[1], 1e-9).unwrap();
    assert!(small.rows[0].min_odometer > 0.0);
    let a = odometer_lower_bound_audit(&g, 64, &[2, 4, 8, 16], 1e-9).unwrap();
    let slope = a.slope.unwrap();
    println!(
        "odometer min slope {slope:.3}; {} monotonicity violations (max {:.2e})",
        a.monotonicity_violations.len(),
        a.max_violation
    );
    assert!(slope >= BETA - 0.3);
}

#[test]
fn full_clusters_nearly_fill_the_ball() {
    let g = Gasket::doubled();
    let n = 32;
    let ball = g.ball(Vertex::ORIGIN, n).unwrap();
    let bn = ball.len() as u64;
    let trials = 50u64;
    let mut total = 0.0;
    for t in 0..trials {
        let c = grow(&g, bn, &mut StreamSource::new(1000 + t)).unwrap();
        total += c.vertices().filter(|&v| ball.contains(v)).count() as f64 / bn as f64;
    }
    let mean = total / trials as f64;
    assert!((0.9..=1.0).contains(&mean), "{mean}");

    let runs: Vec<Vec<usize>> = (0..20)
        .map(|r| {
            let run = outer_bound_iteration(&g, n, &mut StreamSource::new(500 + r)).unwrap();
            run.steps.iter().map(|s| s.paused).collect()
        })
        .collect();
    let depth = runs.iter().map(Vec::len).max().unwrap_or(0);
    let means: Vec<f64> = (0..depth)
        .map(|j| runs.iter().map(|r| r.get(j).copied().unwrap_or(0) as f64).sum::<f64>() / runs.len() as f64)
        .collect();
    println!("mean paused counts by stage at n = 32: {means:?}");
}

#[test]
fn settled_fraction_is_bounded_below_and_mirror_symmetric() {
    let g = Gasket::doubled();
    let e = settled_fraction(&g, 32, 16, 200, 7).unwrap();
    println!("settled fraction n = 32, k = 16: {:.3} ± {:.3}", e.mean, e.stderr);
    assert!(e.mean >= 0.05);

    let right: Vec<Vertex> = [Vertex::right(4, 0), Vertex::right(0, 6), Vertex::right(5, 2)]
        .into_iter()
        .filter(|&v| GraphFamily::DoubledSG.contains(v))
        .cycle()
        .take(12)
        .collect();
    assert!(!right.is_empty());
    let left: Vec<Vertex> = right.iter().map(|v| v.mirrored()).collect();
    let a = settled_fraction_unchecked(&g, 16, &right, 300, 11).unwrap();
    let b = settled_fraction_unchecked(&g, 16, &left, 300, 12).unwrap();
    let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() < 4.0 * se.max(1e-12), "{} vs {}", a.mean, b.mean);
}
