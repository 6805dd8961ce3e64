use driftsafe::conic::{solve, ConicProblem, ConicStatus, SolveOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// min f·x  s.t.  G x ≤ h,  |x_i| ≤ box,  ‖A_j x + b_j‖ ≤ c_j·x + d_j.
#[derive(Clone)]
struct Socp {
    f: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    bound: f64,
    socs: Vec<(DMatrix<f64>, DVector<f64>, DVector<f64>, f64)>,
}

/// Random bounded instance and a strictly feasible point of it.
fn random_socp(rng: &mut ChaCha8Rng) -> (Socp, DVector<f64>) {
    let n = rng.random_range(2..8);
    let m = rng.random_range(0..6);
    let n_soc = rng.random_range(1..4);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let x0 = gauss(n, 1).column(0).into_owned();
    let f = gauss(n, 1).column(0).into_owned();
    let g = gauss(m, n);
    let slack = gauss(m, 1).column(0).map(|v: f64| v.abs() + 0.1);
    let h = &g * &x0 + slack;
    let mut socs = Vec::new();
    for _ in 0..n_soc {
        let k = rng.random_range(1..4);
        let a = DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let c = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let d = (&a * &x0 + &b).norm() - c.dot(&x0) + rng.random_range(0.1..1.0);
        socs.push((a, b, c, d));
    }
    (Socp { f, g, h, bound: 3.0, socs }, x0)
}

/// Build the conic model with auxiliary cone variables.
fn to_conic(s: &Socp, row_order: &[usize]) -> ConicProblem {
    let n = s.f.len();
    let mut p = ConicProblem::new(n);
    p.objective.copy_from_slice(s.f.as_slice());
    for i in 0..n {
        p.set_bounds(i, Some(-s.bound), Some(s.bound));
    }
    for &r in row_order {
        let coefs: Vec<(usize, f64)> = (0..n).map(|j| (j, s.g[(r, j)])).collect();
        p.add_le(&coefs, s.h[r]);
    }
    for (a, b, c, d) in &s.socs {
        let t = p.add_var();
        let mut row: Vec<(usize, f64)> = (0..n).map(|j| (j, -c[j])).collect();
        row.push((t, 1.0));
        p.add_eq(&row, *d);
        let mut tuple = vec![t];
        for i in 0..a.nrows() {
            let w = p.add_var();
            let mut row: Vec<(usize, f64)> = (0..n).map(|j| (j, -a[(i, j)])).collect();
            row.push((w, 1.0));
            p.add_eq(&row, b[i]);
            tuple.push(w);
        }
        p.add_cone(tuple);
    }
    p
}

/// Barrier value, gradient and Hessian at `x` scaled by `t`, or None
/// outside the domain.
fn barrier(s: &Socp, x: &DVector<f64>, t: f64) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    let mut val = t * s.f.dot(x);
    let mut grad = &s.f * t;
    let mut hess = DMatrix::zeros(n, n);
    let mut linear = |a: DVector<f64>, slack: f64| -> Option<()> {
        if slack <= 0.0 {
            return None;
        }
        val -= slack.ln();
        grad += &a / slack;
        hess += &a * a.transpose() / (slack * slack);
        Some(())
    };
    for r in 0..s.g.nrows() {
        let a = s.g.row(r).transpose();
        linear(a.clone(), s.h[r] - a.dot(x))?;
    }
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        linear(e.clone(), s.bound - x[i])?;
        linear(-e, s.bound + x[i])?;
    }
    for (a, b, c, d) in &s.socs {
        let sv = c.dot(x) + d;
        let w = a * x + b;
        let q = sv * sv - w.norm_squared();
        if sv <= 0.0 || q <= 0.0 {
            return None;
        }
        let dq = c * (2.0 * sv) - a.transpose() * &w * 2.0;
        let d2q = c * c.transpose() * 2.0 - a.transpose() * a * 2.0;
        val -= q.ln();
        grad -= &dq / q;
        hess += &dq * dq.transpose() / (q * q) - d2q / q;
    }
    Some((val, grad, hess))
}

/// Independent oracle: barrier path-following with damped Newton steps.
fn barrier_solve(s: &Socp, x0: DVector<f64>) -> f64 {
    let n_barriers = (s.g.nrows() + 2 * s.f.len() + 2 * s.socs.len()) as f64;
    let mut x = x0;
    let mut t = 1.0;
    while n_barriers / t > 1e-11 {
        for _ in 0..200 {
            let (v, g, h) = barrier(s, &x, t).expect("iterate stays interior");
            let step = h.cholesky().expect("barrier Hessian is positive definite").solve(&-&g);
            let decrement = -g.dot(&step);
            if decrement / 2.0 < 1e-12 {
                break;
            }
            let mut alpha = 1.0;
            loop {
                let trial = &x + &step * alpha;
                if let Some((vt, _, _)) = barrier(s, &trial, t) {
                    if vt <= v - 0.25 * alpha * decrement {
                        x = trial;
                        break;
                    }
                }
                alpha *= 0.5;
                assert!(alpha > 1e-14, "line search failed");
            }
        }
        t *= 10.0;
    }
    s.f.dot(&x)
}

#[test]
fn random_socps_match_the_barrier_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for instance in 0..100 {
        let (s, start) = random_socp(&mut rng);
        let order: Vec<usize> = (0..s.g.nrows()).collect();
        let sol = solve(&to_conic(&s, &order), &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, ConicStatus::Optimal);
        let oracle = barrier_solve(&s, start);
        assert!(
            (sol.objective - oracle).abs() <= 1e-6 * oracle.abs().max(1.0),
            "instance {instance}: {} vs {oracle}",
            sol.objective
        );
    }
}

#[test]
fn row_order_does_not_change_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (s, _) = random_socp(&mut rng);
        let forward: Vec<usize> = (0..s.g.nrows()).collect();
        let reversed: Vec<usize> = forward.iter().rev().copied().collect();
        let a = solve(&to_conic(&s, &forward), &SolveOptions::default()).unwrap();
        let b = solve(&to_conic(&s, &reversed), &SolveOptions::default()).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.abs().max(1.0), "{} vs {}", a.objective, b.objective);
    }
}

#[test]
fn objective_scaling_scales_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (s, _) = random_socp(&mut rng);
        let order: Vec<usize> = (0..s.g.nrows()).collect();
        let base = solve(&to_conic(&s, &order), &SolveOptions::default()).unwrap();
        let alpha = rng.random_range(0.1..10.0);
        let scaled = Socp { f: &s.f * alpha, ..s.clone() };
        let sol = solve(&to_conic(&scaled, &order), &SolveOptions::default()).unwrap();
        assert!((sol.objective - alpha * base.objective).abs() <= 1e-7 * (alpha * base.objective).abs().max(1.0));
        let n = s.f.len();
        let dx = (0..n).map(|i| (sol.x[i] - base.x[i]).powi(2)).sum::<f64>().sqrt();
        assert!(dx < 1e-4, "argmin moved by {dx}");
    }
}

#[test]
fn epigraph_slack_equals_the_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let k = rng.random_range(1..6);
        let u: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut p = ConicProblem::new(k);
        for (i, v) in u.iter().enumerate() {
            p.add_eq(&[(i, 1.0)], *v);
        }
        let t = p.add_epigraph_norm(&(0..k).collect::<Vec<_>>()).unwrap();
        p.objective[t] = 1.0;
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((sol.x[t] - norm).abs() <= 1e-8 * norm.max(1.0), "{} vs {norm}", sol.x[t]);
    }
}

#[test]
fn problems_round_trip_through_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (s, _) = random_socp(&mut rng);
    let p = to_conic(&s, &(0..s.g.nrows()).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("problem.json");
    p.dump_json(&path).unwrap();
    assert_eq!(ConicProblem::load_json(&path).unwrap(), p);
}
