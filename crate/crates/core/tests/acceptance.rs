//! Acceptance criteria 1-12, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the report is always printed.
//! Positional arguments filter criteria by name; `--ignored` or
//! `SGIDLA_FULL_SWEEP=1` adds the release-gate sweep up to n = 512.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sgidla::constants::{ALPHA, BETA};
use sgidla::fluctuations::{
    annulus_audit, annulus_growth, fit_exponent, fit_power_law, lbg_tail_check, lbg_tail_unchecked,
    random_centers, sweep, volume_growth_ratios, Field, Statistic, SweepConfig, SweepRow,
};
use sgidla::graph::oracle_audit;
use sgidla::green::{expected_exit_time_exact, GreenSolver};
use sgidla::idla::{abelian_test, ltilde_estimate, ml_estimate, verify_inclusions};
use sgidla::sandpile::{odometer_lower_bound_audit, stabilize, SandState, ToppleSchedule, DEFAULT_TOL};
use sgidla::{Gasket, GraphFamily, Vertex};

type Check = fn() -> (bool, String);

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: Check,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn c01_volume_law() -> (bool, String) {
    let g = Gasket::doubled();
    let bad: Vec<u32> = (0..=10u32).filter(|&k| g.ball_volume(1 << k) as u64 != 3u64.pow(k + 1) + 2).collect();
    (bad.is_empty(), format!("k = 0..10, mismatches at {bad:?}"))
}

fn c02_degree_regularity() -> (bool, String) {
    let g = Gasket::doubled();
    let ball = g.ball(Vertex::ORIGIN, 1 << 10).unwrap();
    let f = GraphFamily::DoubledSG;
    let bad = ball.members().iter().filter(|&&v| f.degree(v).unwrap() != 4).count();
    (bad == 0, format!("{} vertices of B(1024), {bad} with degree != 4", ball.len()))
}

fn c03_oracle_equivalence() -> (bool, String) {
    let a = oracle_audit(8).unwrap();
    (
        a.mismatches.is_empty(),
        format!("|V_8| = {}, |E_8| = {}, {} mismatches", a.vertices, a.edges, a.mismatches.len()),
    )
}

fn c04_exact_ball() -> (bool, String) {
    let g = Gasket::doubled();
    let mut ok = true;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for n in [1u32, 2, 4, 8, 16, 32] {
        let s0 = SandState::point_mass(g.family(), g.ball_volume(n) as f64).unwrap();
        let s = stabilize(&s0, &ToppleSchedule::ParallelSweep, DEFAULT_TOL).unwrap();
        let ball = g.ball(Vertex::ORIGIN, n).unwrap();
        let inside = ball.members().iter().map(|&v| (s.mass_of(v) - 1.0).abs()).fold(0.0, f64::max);
        let outside = s.iter().filter(|(v, _, _)| !ball.contains(*v)).map(|(_, m, _)| m).fold(0.0, f64::max);
        let boundary = ball.inner_boundary().iter().map(|&v| s.odometer_of(v)).fold(0.0, f64::max);
        ok &= inside < 1e-6 && outside < 1e-6 && boundary < 1e-6;
        worst = (worst.0.max(inside), worst.1.max(outside), worst.2.max(boundary));
    }
    (
        ok,
        format!("max |mass-1| on ball {:.1e}, max mass outside {:.1e}, max odometer on inner boundary {:.1e}", worst.0, worst.1, worst.2),
    )
}

fn c05_closed_form() -> (bool, String) {
    let mut worst = 0.0f64;
    for k in 0..=5u32 {
        let s0 = SandState::point_mass(&GraphFamily::DoubledSG, 3f64.powi(k as i32 + 1)).unwrap();
        let s = stabilize(&s0, &ToppleSchedule::ParallelSweep, DEFAULT_TOL).unwrap();
        let expect = 2.0 * 5f64.powi(k as i32);
        worst = worst.max((s.odometer_of(Vertex::ORIGIN) - expect).abs() / expect);
    }
    (worst <= 1e-6, format!("k = 0..5, max relative error {worst:.2e}"))
}

fn c06_green_odometer_identity() -> (bool, String) {
    let g = Gasket::doubled();
    let mut worst = 0.0f64;
    for n in [2u32, 4, 8, 16] {
        let bn = g.ball_volume(n) as f64;
        let s0 = SandState::point_mass(g.family(), bn).unwrap();
        let u = stabilize(&s0, &ToppleSchedule::ParallelSweep, 1e-11).unwrap();
        let gs = GreenSolver::new(&g, n).unwrap();
        for &z in g.ball(Vertex::ORIGIN, n).unwrap().members() {
            let col = gs.column(z).unwrap();
            let lhs = bn * col.value(Vertex::ORIGIN).unwrap() - col.iter().map(|(_, x)| x).sum::<f64>();
            worst = worst.max((lhs - u.odometer_of(z)).abs());
        }
    }
    (worst <= 1e-6, format!("n = 2,4,8,16, all z in B(n), tol 1e-11, max deviation {worst:.2e}"))
}

fn distance_three_vertex(g: &Gasket) -> Vertex {
    let og = g.origin_graph(4);
    (0..og.len() as u32).find(|&i| og.dist(i) == 3).map(|i| og.vertex(i)).unwrap()
}

fn c07_counter_expectations() -> (bool, String) {
    let g = Gasket::doubled();
    let n = 8;
    let z = distance_three_vertex(&g);
    let gs = GreenSolver::new(&g, n).unwrap();
    let gzz = gs.diagonal(z).unwrap();
    let exact_m = g.ball_volume(n) as f64 * gs.column(z).unwrap().value(Vertex::ORIGIN).unwrap() / gzz;
    let exact_lt = gs.exit_times().unwrap().value(z).unwrap() / gzz;
    let ml = ml_estimate(&g, n, z, 10_000, 701).unwrap();
    let lt = ltilde_estimate(&g, n, z, 10_000, 702).unwrap();
    let (zm, zl) = (ml.m.z_score(exact_m), lt.z_score(exact_lt));
    (
        zm.abs() <= 3.0 && zl.abs() <= 3.0,
        format!(
            "z = {z}: E M = {exact_m:.4} vs {:.4} (z-score {zm:+.2}), E L~ = {exact_lt:.4} vs {:.4} (z-score {zl:+.2})",
            ml.m.mean, lt.mean
        ),
    )
}

fn c08_ml_invariant() -> (bool, String) {
    let g = Gasket::doubled();
    let z = distance_three_vertex(&g);
    let ml = ml_estimate(&g, 8, z, 10_000, 801).unwrap();
    (
        ml.invariant_violations == 0 && ml.m_below_l == 0,
        format!("{} runs, {} with z outside the cluster and M != L, {} with M < L", ml.runs, ml.invariant_violations, ml.m_below_l),
    )
}

fn c09_abelian() -> (bool, String) {
    let g = Gasket::doubled();
    let r = abelian_test(&g, 2, 100_000, 901).unwrap();
    (
        r.passed(1e-3),
        format!("n = 2, 1e5 runs each, chi2 = {:.2} on {} df, p = {:.4}", r.test.statistic, r.test.df, r.test.p_value),
    )
}

fn c10_lbg() -> (bool, String) {
    let mut ok = true;
    let mut out = String::new();
    for big_n in [1_000u64, 10_000] {
        for gamma in [0.1, 0.2, 0.3, 0.4] {
            let r = lbg_tail_check(big_n, 0.5, gamma, 100_000, big_n ^ (gamma * 10.0) as u64).unwrap();
            ok &= r.passed;
            let _ = write!(out, "N={big_n} g={gamma}: {:.2e}<={:.2e}; ", r.empirical, r.bound);
        }
    }
    let control = lbg_tail_unchecked(10_000, 0.5, 0.0, 100_000, 1).unwrap();
    let _ = write!(out, "gamma=0 control {:.3} (not gated)", control.empirical);
    (ok, out)
}

fn partial_sweep_config() -> SweepConfig {
    SweepConfig { radii: vec![16, 32, 64, 128], trials: 20, master_seed: 1101, ..SweepConfig::default() }
}

fn sweep_verdict(g: &Gasket, rows: &[SweepRow]) -> (bool, String) {
    let mut ok = rows.iter().all(|r| !r.failed() && !r.anomalous());
    let mut out = String::new();
    for (field, limit) in [(Field::InnerDefect, 0.8), (Field::OuterExcess, 1.0)] {
        for stat in [Statistic::Max, Statistic::Mean] {
            match fit_exponent(rows, field, stat) {
                Ok(f) => {
                    ok &= f.slope < limit;
                    let _ = write!(out, "{field:?}/{stat:?} slope {:.3} (< {limit}); ", f.slope);
                }
                Err(e) => {
                    ok = false;
                    let _ = write!(out, "{field:?}/{stat:?} {e}; ");
                }
            }
        }
    }
    // set-theoretic spot check of the inclusions on every hundredth row
    for r in rows.iter().step_by(100) {
        let c = sgidla::idla::grow(g, g.ball_volume(r.n) as u64, &mut sgidla::walk::StreamSource::new(r.seed)).unwrap();
        let st = sgidla::idla::radii(&c).unwrap();
        ok &= st.r_in == r.r_in.unwrap() && verify_inclusions(g, &c, &st).unwrap();
    }
    (ok, out)
}

fn c11_scaling() -> (bool, String) {
    let g = Gasket::doubled();
    let pts: Vec<(f64, f64)> = (2..=7u32)
        .map(|k| {
            let n = 1u32 << k;
            (n as f64, expected_exit_time_exact(&g, n).unwrap().value(Vertex::ORIGIN).unwrap())
        })
        .collect();
    let (exit_slope, _, _) = fit_power_law(&pts).unwrap();
    let odo = odometer_lower_bound_audit(&g, 64, &[2, 4, 8, 16], DEFAULT_TOL).unwrap();
    let odo_slope = odo.slope.unwrap_or(f64::NAN);
    let rows = sweep(&g, &partial_sweep_config()).unwrap();
    let (sweep_ok, sweep_text) = sweep_verdict(&g, &rows);
    let ok = (exit_slope - BETA).abs() <= 0.2 && odo_slope >= BETA - 0.3 && sweep_ok;
    (
        ok,
        format!(
            "exit-time slope {exit_slope:.3} (beta {BETA:.3}), odometer slope {odo_slope:.3}, partial sweep n<=128 x20: {sweep_text}"
        ),
    )
}

fn c12_volume_and_annulus() -> (bool, String) {
    let g = Gasket::doubled();
    let centers = random_centers(&g, 1 << 9, 200, 1201);
    let ratios = volume_growth_ratios(&g, &centers, &[4, 8, 16, 32]).unwrap();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let mut annulus_ok = true;
    let mut worst = 0.0f64;
    for n in 64..=512u32 {
        for eps in [0.125, 0.25] {
            let (count, bound) = annulus_growth(&g, n, eps).unwrap();
            annulus_ok &= count as f64 <= bound;
            worst = worst.max(count as f64 / bound);
        }
    }
    let audit = annulus_audit(&g, 1, 0).unwrap();
    let audit_ok = audit.exact == 6 && (audit.formula - 26.4).abs() < 1e-9;
    let ok = hi / lo <= 10.0 && annulus_ok && audit_ok;
    (
        ok,
        format!(
            "V_alpha ratios in [{lo:.3}, {hi:.3}] (C/c = {:.2}, alpha {ALPHA:.4}); annulus count/bound max {worst:.3} for n = 64..512; audit m=1,k=0 exact {} vs formula {}",
            hi / lo,
            audit.exact,
            audit.formula
        ),
    )
}

fn full_sweep() -> (bool, String) {
    let g = Gasket::doubled();
    let cfg = SweepConfig { master_seed: 1102, ..SweepConfig::default() };
    let rows = sweep(&g, &cfg).unwrap();
    let (ok, text) = sweep_verdict(&g, &rows);
    (ok, format!("radii {:?} x {}: {text}", cfg.radii, cfg.trials))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var("SGIDLA_FULL_SWEEP").is_ok_and(|v| v == "1");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();

    let mut criteria = vec![
        Criterion { id: 1, name: "c01_volume_law", budget: secs(10), check: c01_volume_law },
        Criterion { id: 2, name: "c02_degree_regularity", budget: secs(30), check: c02_degree_regularity },
        Criterion { id: 3, name: "c03_oracle_equivalence", budget: secs(60), check: c03_oracle_equivalence },
        Criterion { id: 4, name: "c04_exact_ball", budget: secs(300), check: c04_exact_ball },
        Criterion { id: 5, name: "c05_closed_form", budget: secs(300), check: c05_closed_form },
        Criterion { id: 6, name: "c06_green_odometer_identity", budget: secs(120), check: c06_green_odometer_identity },
        Criterion { id: 7, name: "c07_counter_expectations", budget: secs(600), check: c07_counter_expectations },
        Criterion { id: 8, name: "c08_ml_invariant", budget: secs(600), check: c08_ml_invariant },
        Criterion { id: 9, name: "c09_abelian", budget: secs(600), check: c09_abelian },
        Criterion { id: 10, name: "c10_lbg", budget: secs(300), check: c10_lbg },
        Criterion { id: 11, name: "c11_scaling", budget: secs(1200), check: c11_scaling },
        Criterion { id: 12, name: "c12_volume_and_annulus", budget: secs(60), check: c12_volume_and_annulus },
    ];
    if full {
        criteria.push(Criterion { id: 11, name: "c11_full_sweep", budget: secs(4 * 3600), check: full_sweep });
    }
    if args.iter().any(|a| a == "--list") {
        for c in &criteria {
            println!("{}: test", c.name);
        }
        return ExitCode::SUCCESS;
    }
    let selected: Vec<&Criterion> = criteria
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str())))
        .collect();
    if selected.is_empty() {
        return ExitCode::SUCCESS;
    }

    let mut failed = 0;
    for c in &selected {
        let start = Instant::now();
        let (passed, detail) = match catch_unwind(AssertUnwindSafe(c.check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let ok = passed && in_time;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {} [{:.1}s of {}s{}]: {detail}",
            c.id,
            if ok { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
