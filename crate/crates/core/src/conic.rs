//! Second-order cone program model and solver contract.
//!
//! A [`ConicProblem`] is a linear objective over `n_vars` variables with
//! sparse linear equalities, inequalities `A·x ≤ b`, second-order cones
//! `‖v‖ ≤ t` given as index tuples `(t, v₁, v₂, …)` and simple variable
//! bounds. [`solve`] hands the problem to the Clarabel interior-point solver;
//! nothing outside this module depends on the backend.

use std::collections::BTreeMap;
use std::path::Path;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sparse rows `Σ coef·x[col] (=|≤) rhs`, stored as triplets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRows {
    /// `(row, col, value)`.
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

impl SparseRows {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    fn push(&mut self, coefs: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.rhs.len();
        self.triplets.extend(coefs.iter().map(|&(c, v)| (row, c, v)));
        self.rhs.push(rhs);
        row
    }

    /// Merge duplicate `(row, col)` entries and drop exact zeros.
    fn canonicalize(&mut self) {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(r, c, v) in &self.triplets {
            *merged.entry((r, c)).or_insert(0.0) += v;
        }
        self.triplets = merged.into_iter().filter(|(_, v)| *v != 0.0).map(|((r, c), v)| (r, c, v)).collect();
    }

    /// `A·x − b` per row.
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.rhs.iter().map(|b| -b).collect();
        for &(r, c, v) in &self.triplets {
            out[r] += v * x[c];
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub equalities: SparseRows,
    /// Rows of `A_in·x ≤ b_in`.
    pub inequalities: SparseRows,
    /// Index tuples `(t, v₁, …)` meaning `‖v‖ ≤ t`.
    pub cones: Vec<Vec<usize>>,
    /// `(lower, upper)` per variable.
    pub bounds: Vec<(Option<f64>, Option<f64>)>,
}

impl ConicProblem {
    pub fn new(n_vars: usize) -> Self {
        Self { n_vars, objective: vec![0.0; n_vars], bounds: vec![(None, None); n_vars], ..Default::default() }
    }

    /// Append a free variable and return its index.
    pub fn add_var(&mut self) -> usize {
        self.n_vars += 1;
        self.objective.push(0.0);
        self.bounds.push((None, None));
        self.n_vars - 1
    }

    pub fn add_eq(&mut self, coefs: &[(usize, f64)], rhs: f64) -> usize {
        self.equalities.push(coefs, rhs)
    }

    /// `Σ coef·x ≤ rhs`.
    pub fn add_le(&mut self, coefs: &[(usize, f64)], rhs: f64) -> usize {
        self.inequalities.push(coefs, rhs)
    }

    /// `Σ coef·x ≥ rhs`.
    pub fn add_ge(&mut self, coefs: &[(usize, f64)], rhs: f64) -> usize {
        let negated: Vec<(usize, f64)> = coefs.iter().map(|&(c, v)| (c, -v)).collect();
        self.inequalities.push(&negated, -rhs)
    }

    pub fn add_cone(&mut self, tuple: Vec<usize>) {
        self.cones.push(tuple);
    }

    pub fn set_bounds(&mut self, var: usize, lower: Option<f64>, upper: Option<f64>) {
        self.bounds[var] = (lower, upper);
    }

    /// Add a slack `t ≥ ‖x[indices]‖` and return its index. The slack gets a
    /// zero objective coefficient; the caller decides how to weight it.
    pub fn add_epigraph_norm(&mut self, indices: &[usize]) -> Result<usize> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_vars) {
            return Err(Error::Dimension(format!("index {bad} out of range for {} variables", self.n_vars)));
        }
        let t = self.add_var();
        self.bounds[t] = (Some(0.0), None);
        let mut tuple = Vec::with_capacity(indices.len() + 1);
        tuple.push(t);
        tuple.extend_from_slice(indices);
        self.cones.push(tuple);
        Ok(t)
    }

    /// Check indices and shapes; merges duplicate triplets.
    pub fn canonicalize(&mut self) -> Result<()> {
        if self.objective.len() != self.n_vars || self.bounds.len() != self.n_vars {
            return Err(Error::Dimension("objective or bounds length differs from n_vars".into()));
        }
        for rows in [&self.equalities, &self.inequalities] {
            for &(r, c, v) in &rows.triplets {
                if r >= rows.rhs.len() || c >= self.n_vars || !v.is_finite() {
                    return Err(Error::Dimension(format!("bad triplet ({r}, {c}, {v})")));
                }
            }
            if rows.rhs.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numerical("non-finite right-hand side".into()));
            }
        }
        for cone in &self.cones {
            if cone.len() < 2 || cone.iter().any(|&i| i >= self.n_vars) {
                return Err(Error::Dimension(format!("bad cone tuple {cone:?}")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("non-finite objective coefficient".into()));
        }
        self.equalities.canonicalize();
        self.inequalities.canonicalize();
        Ok(())
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for r in self.equalities.residuals(x) {
            worst = worst.max(r.abs());
        }
        for r in self.inequalities.residuals(x) {
            worst = worst.max(r);
        }
        for cone in &self.cones {
            let norm = cone[1..].iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
            worst = worst.max(norm - x[cone[0]]);
        }
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if let Some(lo) = lo {
                worst = worst.max(lo - x[i]);
            }
            if let Some(hi) = hi {
                worst = worst.max(x[i] - hi);
            }
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Write a self-describing JSON dump for offline reproduction.
    pub fn dump_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest constraint violation of `x`, recomputed from the model.
    pub max_residual: f64,
    pub iterations: u32,
    /// Backend status text.
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Relative feasibility and duality-gap tolerance.
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

/// Solve a conic problem. The input is not modified.
pub fn solve(problem: &ConicProblem, opts: &SolveOptions) -> Result<ConicSolution> {
    let mut p = problem.clone();
    p.canonicalize()?;
    let n = p.n_vars;

    // Stack rows in cone order: zero, nonnegative, then one SOC block per cone.
    let mut rows: Vec<usize> = Vec::new();
    let mut cols: Vec<usize> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let mut offset = 0;
    for &(r, c, v) in &p.equalities.triplets {
        rows.push(offset + r);
        cols.push(c);
        vals.push(v);
    }
    b.extend_from_slice(&p.equalities.rhs);
    offset += p.equalities.len();
    if !p.equalities.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(p.equalities.len()));
    }

    let mut n_nonneg = 0;
    for &(r, c, v) in &p.inequalities.triplets {
        rows.push(offset + r);
        cols.push(c);
        vals.push(v);
    }
    b.extend_from_slice(&p.inequalities.rhs);
    n_nonneg += p.inequalities.len();
    for (i, (lo, hi)) in p.bounds.iter().enumerate() {
        if let Some(lo) = lo {
            rows.push(offset + n_nonneg);
            cols.push(i);
            vals.push(-1.0);
            b.push(-lo);
            n_nonneg += 1;
        }
        if let Some(hi) = hi {
            rows.push(offset + n_nonneg);
            cols.push(i);
            vals.push(1.0);
            b.push(*hi);
            n_nonneg += 1;
        }
    }
    offset += n_nonneg;
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }

    for cone in &p.cones {
        for (k, &var) in cone.iter().enumerate() {
            rows.push(offset + k);
            cols.push(var);
            vals.push(-1.0);
            b.push(0.0);
        }
        offset += cone.len();
        cones.push(SupportedConeT::SecondOrderConeT(cone.len()));
    }

    let m = offset;
    let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
    let quad = CscMatrix::<f64>::zeros((n, n));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_feas(opts.tol)
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .build()
        .map_err(|e| Error::Numerical(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&quad, &p.objective, &a, &b, &cones, settings)
        .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
    solver.solve();

    let sol = &solver.solution;
    let x = sol.x.clone();
    let max_residual = if x.iter().all(|v| v.is_finite()) { p.max_violation(&x) } else { f64::INFINITY };
    let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let status = match sol.status {
        SolverStatus::Solved => ConicStatus::Optimal,
        SolverStatus::AlmostSolved if max_residual <= opts.tol.sqrt() * scale => ConicStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => ConicStatus::Infeasible,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => ConicStatus::MaxIter,
        _ => ConicStatus::NumericalError,
    };
    Ok(ConicSolution {
        status,
        objective: p.objective_value(&x),
        x,
        max_residual,
        iterations: sol.iterations,
        detail: format!("{:?}", sol.status),
    })
}
