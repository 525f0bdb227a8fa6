//! Exact oracles computed here by dense linear algebra and outcome-tree
//! enumeration, checked against the library's solvers and simulators.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use sgidla::green::{green, DirichletSolver, DirichletSystem};
use sgidla::idla::{grow, grow_stopped, radii, Cluster, StoppedState};
use sgidla::walk::{derive_seed, StreamSource};
use sgidla::{Gasket, Vertex};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        let piv = a[col][col];
        assert!(piv.abs() > 1e-300, "singular system");
        for r in 0..n {
            if r != col && a[r][col] != 0.0 {
                let f = a[r][col] / piv;
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                for k in 0..b[r].len() {
                    b[r][k] -= f * b[col][k];
                }
            }
        }
    }
    for r in 0..n {
        let piv = a[r][r];
        for x in &mut b[r] {
            *x /= piv;
        }
    }
    b
}

/// Harmonic measure from `start` of the outer boundary of the finite set
/// `inside`: `P_start(first step outside inside lands on y)`.
fn exit_distribution(g: &Gasket, inside: &BTreeSet<Vertex>, start: Vertex) -> BTreeMap<Vertex, f64> {
    assert!(inside.contains(&start));
    let idx: HashMap<Vertex, usize> = inside.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut outer: Vec<Vertex> = inside
        .iter()
        .flat_map(|&v| g.neighbors(v).unwrap().into_iter())
        .filter(|w| !inside.contains(w))
        .collect();
    outer.sort();
    outer.dedup();
    let oidx: HashMap<Vertex, usize> = outer.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = inside.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![vec![0.0; outer.len()]; n];
    for (&v, &i) in &idx {
        let nb = g.neighbors(v).unwrap();
        let p = 1.0 / nb.len() as f64;
        a[i][i] += 1.0;
        for w in nb {
            match idx.get(&w) {
                Some(&j) => a[i][j] -= p,
                None => b[i][oidx[&w]] += p,
            }
        }
    }
    let h = dense_solve(a, b);
    let row = &h[idx[&start]];
    outer.iter().zip(row).map(|(&y, &p)| (y, p)).collect()
}

/// Exact law of the IDLA cluster after `k` particles, by enumerating the
/// outcome tree with exact settling distributions.
fn idla_law(g: &Gasket, k: usize) -> BTreeMap<BTreeSet<Vertex>, f64> {
    let mut law: BTreeMap<BTreeSet<Vertex>, f64> = BTreeMap::new();
    law.insert([Vertex::ORIGIN].into_iter().collect(), 1.0);
    for _ in 1..k {
        let mut next = BTreeMap::new();
        for (a, p) in law {
            for (y, q) in exit_distribution(g, &a, Vertex::ORIGIN) {
                let mut b = a.clone();
                b.insert(y);
                *next.entry(b).or_insert(0.0) += p * q;
            }
        }
        law = next;
    }
    law
}

#[test]
fn five_particle_law_matches_the_outcome_tree() {
    let g = Gasket::doubled();
    let law = idla_law(&g, 5);
    assert!((law.values().sum::<f64>() - 1.0).abs() < 1e-12);
    let ball: BTreeSet<Vertex> = g.ball(Vertex::ORIGIN, 1).unwrap().members().iter().copied().collect();
    let p_exact = law.get(&ball).copied().unwrap_or(0.0);
    assert!(p_exact > 0.0 && p_exact < 1.0, "{p_exact}");

    let runs = 100_000u64;
    let hits = (0..runs)
        .filter(|&r| {
            let c = grow(&g, 5, &mut StreamSource::new(derive_seed(77, r))).unwrap();
            c.vertices().collect::<BTreeSet<_>>() == ball
        })
        .count() as f64;
    let p_hat = hits / runs as f64;
    let se = (p_exact * (1.0 - p_exact) / runs as f64).sqrt();
    println!("P(cluster = B(1)) exact {p_exact:.6}, simulated {p_hat:.6} (se {se:.2e})");
    assert!((p_hat - p_exact).abs() < 3.0 * se);

    // the defect law at n = 1 is the same event
    let zero_defect = (0..2000u64)
        .map(|r| radii(&grow(&g, 5, &mut StreamSource::new(derive_seed(5, r))).unwrap()).unwrap())
        .filter(|s| s.inner_defect == 0 && s.outer_excess == 0)
        .count() as f64
        / 2000.0;
    assert!((zero_defect - p_exact).abs() < 4.0 * (p_exact * (1.0 - p_exact) / 2000.0).sqrt());
}

#[test]
fn paused_positions_follow_the_exit_distribution() {
    let g = Gasket::doubled();
    let n = 4;
    let ball: BTreeSet<Vertex> = g.ball(Vertex::ORIGIN, n).unwrap().members().iter().copied().collect();
    let exact = exit_distribution(&g, &ball, Vertex::ORIGIN);
    let full = Cluster::from_vertices(&g, &ball.iter().copied().collect::<Vec<_>>()).unwrap();
    let trials = 100_000usize;
    let st = grow_stopped(
        &g,
        StoppedState::new(full),
        &vec![Vertex::ORIGIN; trials],
        Some(n),
        &mut StreamSource::new(13),
    )
    .unwrap();
    assert_eq!(st.paused.len(), trials);
    assert_eq!(st.cluster.len(), ball.len());
    let mut counts: BTreeMap<Vertex, usize> = BTreeMap::new();
    for v in &st.paused {
        *counts.entry(*v).or_default() += 1;
    }
    assert!(counts.keys().all(|v| exact.contains_key(v)));
    for (y, &p) in &exact {
        let p_hat = counts.get(y).copied().unwrap_or(0) as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((p_hat - p).abs() < 3.0 * se, "{y}: {p_hat} vs {p}");
    }
}

#[test]
fn green_function_matches_a_dense_inverse() {
    let g = Gasket::doubled();
    let n = 4;
    let b = g.ball(Vertex::ORIGIN, n).unwrap();
    let interior: BTreeSet<Vertex> = b.members().iter().filter(|&&v| !b.is_inner_boundary(v)).copied().collect();
    let verts: Vec<Vertex> = interior.iter().copied().collect();
    let idx: HashMap<Vertex, usize> = verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let m = verts.len();
    let mut a = vec![vec![0.0; m]; m];
    for (i, &v) in verts.iter().enumerate() {
        let nb = g.neighbors(v).unwrap();
        a[i][i] = 1.0;
        for w in nb.iter() {
            if let Some(&j) = idx.get(w) {
                a[i][j] -= 1.0 / nb.len() as f64;
            }
        }
    }
    let eye: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let inv = dense_solve(a, eye);
    for &z in verts.iter().step_by(3) {
        let t = green(&g, n, z).unwrap();
        for (x, val) in t.iter() {
            let oracle = idx.get(&x).map(|&i| inv[i][idx[&z]]).unwrap_or(0.0);
            assert!((val - oracle).abs() < 1e-10, "g({x},{z}) = {val} vs {oracle}");
        }
    }
}

#[test]
fn dirichlet_solution_matches_dense_solve_with_boundary_data() {
    let g = Gasket::doubled();
    let sys = DirichletSystem::for_ball(&g, 6).unwrap();
    let solver = DirichletSolver::new(sys).unwrap();
    let s = solver.system();
    let bv: Vec<f64> = (0..s.boundary().len()).map(|i| (i % 7) as f64 * 0.5).collect();
    let rhs: Vec<f64> = (0..s.interior().len()).map(|i| -((i % 3) as f64)).collect();
    let sol = solver.solve(&rhs, &bv).unwrap();

    let gr = s.graph();
    let m = s.interior().len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![vec![0.0; 1]; m];
    for (r, &i) in s.interior().iter().enumerate() {
        let nb = gr.neighbors(i);
        let p = 1.0 / nb.len() as f64;
        a[r][r] -= 1.0;
        b[r][0] = rhs[r];
        for &j in nb {
            match (s.row_of(j), s.boundary_slot_of(j)) {
                (Some(c), _) => a[r][c] += p,
                (None, Some(k)) => b[r][0] -= p * bv[k],
                _ => panic!("interior vertex with a neighbor outside the closed system"),
            }
        }
    }
    let x = dense_solve(a, b);
    for (r, &i) in s.interior().iter().enumerate() {
        assert!((sol.value_at(i).unwrap() - x[r][0]).abs() < 1e-9);
    }
}
