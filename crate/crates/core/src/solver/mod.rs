//! Small-scale convex solver for the inner subproblems of the MM and SSUM
//! loops.
//!
//! A [`ConvexProgram`] maximizes a concave objective
//!
//! ```text
//! affine(x) + sum_a w_a ln det(C_a + sum_t K_t X_t K_t^H + sum_s x_s G_s),   w_a >= 0
//! ```
//!
//! over Hermitian PSD matrix variables `X_v`, floored scalar variables and
//! nonnegative rate variables, subject to constraints `convex(x) <= bound`
//! whose left-hand side is an affine function minus nonnegative multiples of
//! the same log-det atoms. The method is a logarithmic barrier scheme with
//! damped Newton centering; see [`solve`].

mod barrier;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::serial::cmat_serde;

pub use barrier::solve;

/// Reference to a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    Psd(usize),
    Scalar(usize),
    Rate(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdVar {
    pub dim: usize,
    pub label: String,
}

/// Scalar variable constrained to `x >= floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVar {
    pub floor: f64,
    pub label: String,
}

/// `constant + sum tr(G_v X_v) + sum c_s x_s` with Hermitian `G_v`.
#[derive(Debug, Clone, Default)]
pub struct Affine {
    pub constant: f64,
    pub psd_terms: Vec<(usize, CMat)>,
    pub scalar_terms: Vec<(Var, f64)>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            constant: c,
            ..Default::default()
        }
    }

    pub fn add_trace(&mut self, var: usize, coeff: CMat) -> &mut Self {
        self.psd_terms.push((var, coeff));
        self
    }

    pub fn add_scalar(&mut self, var: Var, coeff: f64) -> &mut Self {
        self.scalar_terms.push((var, coeff));
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.constant *= s;
        for (_, g) in &mut self.psd_terms {
            *g *= linalg::c(s, 0.0);
        }
        for (_, a) in &mut self.scalar_terms {
            *a *= s;
        }
        self
    }

    pub fn extend(&mut self, other: Affine) {
        self.constant += other.constant;
        self.psd_terms.extend(other.psd_terms);
        self.scalar_terms.extend(other.scalar_terms);
    }
}

/// `weight * ln det(constant + sum_t K_t X_t K_t^H + sum_s x_s G_s)`.
#[derive(Debug, Clone)]
pub struct LogDet {
    pub weight: f64,
    pub constant: CMat,
    pub psd_terms: Vec<(usize, CMat)>,
    pub scalar_terms: Vec<(Var, CMat)>,
}

impl LogDet {
    pub fn new(weight: f64, constant: CMat) -> Self {
        LogDet {
            weight,
            constant,
            psd_terms: Vec::new(),
            scalar_terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn with_congruence(mut self, var: usize, k: CMat) -> Self {
        self.psd_terms.push((var, k));
        self
    }

    pub fn with_scalar(mut self, var: Var, g: CMat) -> Self {
        self.scalar_terms.push((var, g));
        self
    }
}

/// Concave expression `affine + sum log_dets`.
#[derive(Debug, Clone, Default)]
pub struct ConcaveExpr {
    pub affine: Affine,
    pub log_dets: Vec<LogDet>,
}

/// Convex expression `affine - sum log_dets`.
#[derive(Debug, Clone, Default)]
pub struct ConvexExpr {
    pub affine: Affine,
    pub neg_log_dets: Vec<LogDet>,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub lhs: ConvexExpr,
    pub bound: f64,
    pub label: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub psd_vars: Vec<PsdVar>,
    pub scalar_vars: Vec<ScalarVar>,
    pub rate_vars: Vec<String>,
    pub objective: ConcaveExpr,
    pub constraints: Vec<Constraint>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_psd(&mut self, dim: usize, label: impl Into<String>) -> usize {
        self.psd_vars.push(PsdVar {
            dim,
            label: label.into(),
        });
        self.psd_vars.len() - 1
    }

    pub fn add_scalar(&mut self, floor: f64, label: impl Into<String>) -> Var {
        self.scalar_vars.push(ScalarVar {
            floor,
            label: label.into(),
        });
        Var::Scalar(self.scalar_vars.len() - 1)
    }

    pub fn add_rate(&mut self, label: impl Into<String>) -> Var {
        self.rate_vars.push(label.into());
        Var::Rate(self.rate_vars.len() - 1)
    }

    pub fn add_constraint(&mut self, lhs: ConvexExpr, bound: f64, label: impl Into<String>) {
        self.constraints.push(Constraint {
            lhs,
            bound,
            label: label.into(),
        });
    }

    /// Structural checks: variable references, shapes, Hermitian constants
    /// and nonnegative atom weights (the latter makes the objective concave
    /// and every constraint convex).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProgram(msg));
        for (k, v) in self.psd_vars.iter().enumerate() {
            if v.dim == 0 {
                return bad(format!("psd variable {k} ({}) has dimension 0", v.label));
            }
        }
        for (k, v) in self.scalar_vars.iter().enumerate() {
            if !v.floor.is_finite() {
                return bad(format!("scalar variable {k} ({}) has a non-finite floor", v.label));
            }
        }
        self.check_affine(&self.objective.affine, "objective")?;
        for atom in &self.objective.log_dets {
            self.check_log_det(atom, "objective")?;
        }
        for c in &self.constraints {
            if !c.bound.is_finite() {
                return bad(format!("constraint {}: non-finite bound", c.label));
            }
            self.check_affine(&c.lhs.affine, &c.label)?;
            for atom in &c.lhs.neg_log_dets {
                self.check_log_det(atom, &c.label)?;
            }
        }
        Ok(())
    }

    fn check_var(&self, var: Var, ctx: &str) -> Result<()> {
        let ok = match var {
            Var::Psd(k) => k < self.psd_vars.len(),
            Var::Scalar(k) => k < self.scalar_vars.len(),
            Var::Rate(k) => k < self.rate_vars.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidProgram(format!("{ctx}: undeclared variable {var:?}")))
        }
    }

    fn check_affine(&self, a: &Affine, ctx: &str) -> Result<()> {
        if !a.constant.is_finite() {
            return Err(Error::InvalidProgram(format!("{ctx}: non-finite constant")));
        }
        for (v, g) in &a.psd_terms {
            self.check_var(Var::Psd(*v), ctx)?;
            let n = self.psd_vars[*v].dim;
            if g.shape() != (n, n) {
                return Err(Error::InvalidProgram(format!("{ctx}: trace coefficient shape")));
            }
            if linalg::max_abs_diff(g, &g.adjoint()) > 1e-9 * (1.0 + g.norm()) {
                return Err(Error::InvalidProgram(format!("{ctx}: trace coefficient is not Hermitian")));
            }
        }
        for (v, c) in &a.scalar_terms {
            if matches!(v, Var::Psd(_)) {
                return Err(Error::InvalidProgram(format!("{ctx}: scalar coefficient on a matrix variable")));
            }
            self.check_var(*v, ctx)?;
            if !c.is_finite() {
                return Err(Error::InvalidProgram(format!("{ctx}: non-finite coefficient")));
            }
        }
        Ok(())
    }

    fn check_log_det(&self, atom: &LogDet, ctx: &str) -> Result<()> {
        let m = atom.dim();
        if !(atom.weight >= 0.0 && atom.weight.is_finite()) {
            return Err(Error::InvalidProgram(format!(
                "{ctx}: log-det weight {} breaks convexity",
                atom.weight
            )));
        }
        let herm = |g: &CMat| linalg::max_abs_diff(g, &g.adjoint()) <= 1e-9 * (1.0 + g.norm());
        if atom.constant.shape() != (m, m) || !herm(&atom.constant) {
            return Err(Error::InvalidProgram(format!("{ctx}: log-det constant must be square Hermitian")));
        }
        for (v, k) in &atom.psd_terms {
            self.check_var(Var::Psd(*v), ctx)?;
            if k.shape() != (m, self.psd_vars[*v].dim) {
                return Err(Error::InvalidProgram(format!(
                    "{ctx}: congruence factor is {}x{}, expected {}x{}",
                    k.nrows(),
                    k.ncols(),
                    m,
                    self.psd_vars[*v].dim
                )));
            }
        }
        for (v, g) in &atom.scalar_terms {
            if matches!(v, Var::Psd(_)) {
                return Err(Error::InvalidProgram(format!("{ctx}: scalar term on a matrix variable")));
            }
            self.check_var(*v, ctx)?;
            if g.shape() != (m, m) || !herm(g) {
                return Err(Error::InvalidProgram(format!("{ctx}: scalar log-det coefficient must be {m}x{m} Hermitian")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    #[serde(with = "cmat_serde::vec")]
    pub psd_values: Vec<CMat>,
    pub scalar_values: Vec<f64>,
    pub rate_values: Vec<f64>,
    pub objective_value: f64,
    /// Duality-gap bound of the last barrier stage combined with the Newton
    /// decrement of its centering step.
    pub kkt_residual: f64,
    pub status: SolveStatus,
    pub newton_steps: usize,
}

impl Solution {
    pub fn value(&self, var: Var) -> f64 {
        match var {
            Var::Scalar(k) => self.scalar_values[k],
            Var::Rate(k) => self.rate_values[k],
            Var::Psd(_) => panic!("matrix variable has no scalar value"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tolerance: f64,
    /// Cap on the total number of Newton steps.
    pub max_iterations: usize,
    pub record_iterates: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            max_iterations: 500,
            record_iterates: false,
        }
    }
}

/// One Newton step of the barrier method, for solver regression dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub phase_one: bool,
    pub barrier_weight: f64,
    pub newton_step: usize,
    pub objective: f64,
    pub decrement: f64,
    pub step_size: f64,
}

/// Solution together with the optional iterate log.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Solution,
    pub iterates: Vec<IterateRecord>,
}

impl SolveReport {
    /// Iterates as JSON lines.
    pub fn iterates_jsonl(&self) -> String {
        self.iterates
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Evaluates the objective of `program` at `point` (`None` outside the
/// domain of a log-det atom).
pub fn objective_at(program: &ConvexProgram, point: &Solution) -> Option<f64> {
    eval_concave(&program.objective.affine, &program.objective.log_dets, point)
}

/// Values of every constraint left-hand side at `point`.
pub fn constraint_values(program: &ConvexProgram, point: &Solution) -> Vec<Option<f64>> {
    program
        .constraints
        .iter()
        .map(|c| {
            let mut v = affine_at(&c.lhs.affine, point);
            for atom in &c.lhs.neg_log_dets {
                v -= atom.weight * log_det_at(atom, point)?;
            }
            Some(v)
        })
        .collect()
}

fn affine_at(a: &Affine, p: &Solution) -> f64 {
    let mut v = a.constant;
    for (k, g) in &a.psd_terms {
        v += linalg::trace_of_product(g, &p.psd_values[*k]);
    }
    for (var, c) in &a.scalar_terms {
        v += c * p.value(*var);
    }
    v
}

fn log_det_at(atom: &LogDet, p: &Solution) -> Option<f64> {
    let mut a = atom.constant.clone();
    for (k, factor) in &atom.psd_terms {
        a += factor * &p.psd_values[*k] * factor.adjoint();
    }
    for (var, g) in &atom.scalar_terms {
        a += g * linalg::c(p.value(*var), 0.0);
    }
    linalg::ln_det_pd(&linalg::hermitian_part(&a)).ok()
}

fn eval_concave(affine: &Affine, atoms: &[LogDet], p: &Solution) -> Option<f64> {
    let mut v = affine_at(affine, p);
    for atom in atoms {
        v += atom.weight * log_det_at(atom, p)?;
    }
    Some(v)
}

#[cfg(test)]
mod tests;
