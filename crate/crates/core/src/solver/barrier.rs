use std::collections::BTreeMap;

use nalgebra::{Cholesky, DVector};

use super::{
    Affine, ConvexProgram, IterateRecord, LogDet, Solution, SolveReport, SolveStatus, SolverOptions, Var,
};
use crate::error::{Error, Result};
use crate::linalg::{self, coord_list, push_congruence_columns, CMat, Coord, RMat};

const BARRIER_GROWTH: f64 = 10.0;
const CENTERING_TOLERANCE: f64 = 1e-10;
const ARMIJO: f64 = 0.01;
const MIN_STEP: f64 = 1e-12;
/// Phase one stops once every constraint holds with this margin.
const PHASE_ONE_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone)]
struct Layout {
    psd_offsets: Vec<usize>,
    psd_dims: Vec<usize>,
    scalar_offset: usize,
    scalar_floors: Vec<f64>,
    rate_offset: usize,
    num_rates: usize,
    slack: Option<usize>,
    len: usize,
}

impl Layout {
    fn new(program: &ConvexProgram, with_slack: bool) -> Self {
        let mut off = 0;
        let mut psd_offsets = Vec::with_capacity(program.psd_vars.len());
        for v in &program.psd_vars {
            psd_offsets.push(off);
            off += linalg::herm_dim(v.dim);
        }
        let scalar_offset = off;
        off += program.scalar_vars.len();
        let rate_offset = off;
        off += program.rate_vars.len();
        let slack = with_slack.then_some(off);
        if with_slack {
            off += 1;
        }
        Layout {
            psd_offsets,
            psd_dims: program.psd_vars.iter().map(|v| v.dim).collect(),
            scalar_offset,
            scalar_floors: program.scalar_vars.iter().map(|v| v.floor).collect(),
            rate_offset,
            num_rates: program.rate_vars.len(),
            slack,
            len: off,
        }
    }

    fn scalar_index(&self, var: Var) -> usize {
        match var {
            Var::Scalar(k) => self.scalar_offset + k,
            Var::Rate(k) => self.rate_offset + k,
            Var::Psd(_) => unreachable!("validated"),
        }
    }

    fn psd_range(&self, v: usize) -> std::ops::Range<usize> {
        let start = self.psd_offsets[v];
        start..start + linalg::herm_dim(self.psd_dims[v])
    }

    fn matrices(&self, x: &[f64]) -> Vec<CMat> {
        (0..self.psd_dims.len())
            .map(|v| linalg::from_coords(&x[self.psd_range(v)], self.psd_dims[v]))
            .collect()
    }

    fn pack(&self, psd: &[CMat], scalars: &[f64], rates: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.len];
        for (v, m) in psd.iter().enumerate() {
            x[self.psd_range(v)].copy_from_slice(&linalg::coords_of(m));
        }
        x[self.scalar_offset..self.scalar_offset + scalars.len()].copy_from_slice(scalars);
        x[self.rate_offset..self.rate_offset + rates.len()].copy_from_slice(rates);
        x
    }

    /// Barrier degree of the domain constraints.
    fn domain_degree(&self) -> usize {
        self.psd_dims.iter().sum::<usize>() + self.scalar_floors.len() + self.num_rates
    }
}

/// Congruence factor shared by several matrix variables inside one atom.
#[derive(Debug, Clone)]
struct KGroup {
    k: CMat,
    vars: Vec<usize>,
    local: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Atom {
    weight: f64,
    constant: CMat,
    kgroups: Vec<KGroup>,
    scalars: Vec<(usize, usize, CMat)>,
    cols: Vec<usize>,
    plan: usize,
}

/// `constant + dot(grad, x) + sum atoms`.
#[derive(Debug, Clone)]
struct Concave {
    constant: f64,
    grad: Vec<f64>,
    atoms: Vec<Atom>,
}

struct Compiled {
    layout: Layout,
    coords: BTreeMap<usize, Vec<Coord>>,
    objective: Concave,
    /// Each entry must stay strictly positive.
    constraints: Vec<Concave>,
    plans: Vec<Vec<usize>>,
    psd_plans: Vec<usize>,
    dense_plan: usize,
}

struct PlanTable(Vec<Vec<usize>>);

impl PlanTable {
    fn id(&mut self, cols: &[usize]) -> usize {
        if let Some(p) = self.0.iter().position(|c| c == cols) {
            return p;
        }
        self.0.push(cols.to_vec());
        self.0.len() - 1
    }
}

fn compile_affine(layout: &Layout, a: &Affine, sign: f64, grad: &mut [f64]) -> f64 {
    for (v, g) in &a.psd_terms {
        let r = layout.psd_range(*v);
        let mut buf = vec![0.0; r.len()];
        linalg::trace_functional(g, &mut buf);
        for (slot, b) in grad[r].iter_mut().zip(buf) {
            *slot += sign * b;
        }
    }
    for (var, c) in &a.scalar_terms {
        grad[layout.scalar_index(*var)] += sign * c;
    }
    sign * a.constant
}

fn compile_atom(layout: &Layout, plans: &mut PlanTable, src: &LogDet) -> Atom {
    let mut cols = Vec::new();
    let mut psd_local: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kgroups: Vec<KGroup> = Vec::new();
    for (v, k) in &src.psd_terms {
        let local = *psd_local.entry(*v).or_insert_with(|| {
            let at = cols.len();
            cols.extend(layout.psd_range(*v));
            at
        });
        match kgroups.iter_mut().find(|g| g.k == *k) {
            Some(g) => {
                g.vars.push(*v);
                g.local.push(local);
            }
            None => kgroups.push(KGroup {
                k: k.clone(),
                vars: vec![*v],
                local: vec![local],
            }),
        }
    }
    let mut scalar_local: BTreeMap<usize, usize> = BTreeMap::new();
    let mut scalars = Vec::new();
    for (var, g) in &src.scalar_terms {
        let idx = layout.scalar_index(*var);
        let local = *scalar_local.entry(idx).or_insert_with(|| {
            cols.push(idx);
            cols.len() - 1
        });
        scalars.push((idx, local, g.clone()));
    }
    let plan = plans.id(&cols);
    Atom {
        weight: src.weight,
        constant: src.constant.clone(),
        kgroups,
        scalars,
        cols,
        plan,
    }
}

fn compile_concave(
    layout: &Layout,
    plans: &mut PlanTable,
    affine: &Affine,
    affine_sign: f64,
    offset: f64,
    atoms: &[LogDet],
) -> Concave {
    let mut grad = vec![0.0; layout.len];
    let constant = offset + compile_affine(layout, affine, affine_sign, &mut grad);
    Concave {
        constant,
        grad,
        atoms: atoms
            .iter()
            .filter(|a| a.weight > 0.0)
            .map(|a| compile_atom(layout, plans, a))
            .collect(),
    }
}

impl Compiled {
    fn main(program: &ConvexProgram) -> Self {
        let layout = Layout::new(program, false);
        let mut plans = PlanTable(Vec::new());
        let objective = compile_concave(
            &layout,
            &mut plans,
            &program.objective.affine,
            1.0,
            0.0,
            &program.objective.log_dets,
        );
        let constraints = program
            .constraints
            .iter()
            .map(|c| compile_concave(&layout, &mut plans, &c.lhs.affine, -1.0, c.bound, &c.lhs.neg_log_dets))
            .collect();
        Self::finish(layout, plans, objective, constraints)
    }

    /// Maximize `-s` subject to `g_c(x) + s > 0` and a box around the
    /// domain that keeps the auxiliary problem bounded.
    fn phase_one(program: &ConvexProgram, box_bound: f64) -> Self {
        let layout = Layout::new(program, true);
        let s = layout.slack.expect("slack present");
        let mut plans = PlanTable(Vec::new());
        let mut objective = Concave {
            constant: 0.0,
            grad: vec![0.0; layout.len],
            atoms: Vec::new(),
        };
        objective.grad[s] = -1.0;
        let mut constraints: Vec<Concave> = program
            .constraints
            .iter()
            .map(|c| {
                let mut g = compile_concave(&layout, &mut plans, &c.lhs.affine, -1.0, c.bound, &c.lhs.neg_log_dets);
                g.grad[s] += 1.0;
                g
            })
            .collect();
        for v in 0..layout.psd_dims.len() {
            let mut grad = vec![0.0; layout.len];
            let r = layout.psd_range(v);
            for d in 0..layout.psd_dims[v] {
                grad[r.start + d] = -1.0;
            }
            constraints.push(Concave {
                constant: box_bound,
                grad,
                atoms: Vec::new(),
            });
        }
        for idx in layout.scalar_offset..layout.rate_offset + layout.num_rates {
            let mut grad = vec![0.0; layout.len];
            grad[idx] = -1.0;
            constraints.push(Concave {
                constant: box_bound,
                grad,
                atoms: Vec::new(),
            });
        }
        Self::finish(layout, plans, objective, constraints)
    }

    fn finish(layout: Layout, mut plans: PlanTable, objective: Concave, constraints: Vec<Concave>) -> Self {
        let psd_plans = (0..layout.psd_dims.len())
            .map(|v| plans.id(&layout.psd_range(v).collect::<Vec<_>>()))
            .collect();
        let dense_plan = plans.id(&(0..layout.len).collect::<Vec<_>>());
        let mut coords = BTreeMap::new();
        let mut dims: Vec<usize> = layout.psd_dims.clone();
        for c in std::iter::once(&objective).chain(&constraints) {
            for a in &c.atoms {
                dims.extend(a.kgroups.iter().map(|g| g.k.ncols()));
            }
        }
        for d in dims {
            coords.entry(d).or_insert_with(|| coord_list(d));
        }
        Compiled {
            layout,
            coords,
            objective,
            constraints,
            plans: plans.0,
            psd_plans,
            dense_plan,
        }
    }

    fn degree(&self) -> f64 {
        (self.layout.domain_degree() + self.constraints.len()) as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A = C + sum K (sum X) K^H + sum x_s G_s` and its Cholesky factor.
fn atom_factor(atom: &Atom, mats: &[CMat], x: &[f64]) -> Option<CMat> {
    let mut a = atom.constant.clone();
    for g in &atom.kgroups {
        let mut sum = mats[g.vars[0]].clone();
        for v in &g.vars[1..] {
            sum += &mats[*v];
        }
        a += &g.k * sum * g.k.adjoint();
    }
    for (idx, _, gm) in &atom.scalars {
        a += gm * linalg::c(x[*idx], 0.0);
    }
    linalg::cholesky_lower(&linalg::hermitian_part(&a))
}

fn ln_det_from_factor(l: &CMat) -> f64 {
    2.0 * (0..l.nrows()).map(|r| l[(r, r)].re.ln()).sum::<f64>()
}

/// `ln det A` and the Jacobian whose columns are `hvec(L^{-1} dA/dx_p L^{-H})`
/// over the atom's local columns.
fn atom_jacobian(atom: &Atom, coords: &BTreeMap<usize, Vec<Coord>>, l: &CMat) -> RMat {
    let m = l.nrows();
    let rows = linalg::herm_dim(m);
    let mut jac = RMat::zeros(rows, atom.cols.len());
    for g in &atom.kgroups {
        let u = l.solve_lower_triangular(&g.k).expect("nonsingular factor");
        let n = g.k.ncols();
        let cs = &coords[&n];
        if g.vars.len() == 1 {
            push_congruence_columns(&u, cs, &mut jac, g.local[0]);
        } else {
            let mut block = RMat::zeros(rows, cs.len());
            push_congruence_columns(&u, cs, &mut block, 0);
            for &local in &g.local {
                let mut dst = jac.columns_mut(local, cs.len());
                dst += &block;
            }
        }
    }
    let mut buf = vec![0.0; rows];
    for (_, local, gm) in &atom.scalars {
        let y = l.solve_lower_triangular(gm).expect("nonsingular factor");
        let f = l.solve_lower_triangular(&y.adjoint()).expect("nonsingular factor").adjoint();
        linalg::hvec(&linalg::hermitian_part(&f), &mut buf);
        for (r, b) in buf.iter().enumerate() {
            jac[(r, *local)] += b;
        }
    }
    jac
}

/// Gradient of `ln det A` with respect to the local columns.
fn diag_sums(jac: &RMat, m: usize) -> Vec<f64> {
    (0..jac.ncols()).map(|p| (0..m).map(|r| jac[(r, p)]).sum()).collect()
}

struct Derivatives {
    grad: Vec<f64>,
    hess: RMat,
}

struct RowStacks {
    rows: Vec<Vec<f64>>,
}

impl RowStacks {
    fn new(plans: usize) -> Self {
        RowStacks {
            rows: vec![Vec::new(); plans],
        }
    }

    fn push_scaled(&mut self, plan: usize, jac: &RMat, scale: f64) {
        let buf = &mut self.rows[plan];
        for r in 0..jac.nrows() {
            buf.extend((0..jac.ncols()).map(|c| scale * jac[(r, c)]));
        }
    }
}

impl Compiled {
    fn concave_value(&self, c: &Concave, mats: &[CMat], x: &[f64]) -> Option<f64> {
        let mut v = c.constant + dot(&c.grad, x);
        for a in &c.atoms {
            let l = atom_factor(a, mats, x)?;
            v += a.weight * ln_det_from_factor(&l);
        }
        Some(v)
    }

    fn objective_value(&self, x: &[f64]) -> Option<f64> {
        let mats = self.layout.matrices(x);
        self.concave_value(&self.objective, &mats, x)
    }

    /// Domain barrier value, `None` outside the open domain.
    fn domain_value(&self, mats: &[CMat], x: &[f64]) -> Option<f64> {
        let lay = &self.layout;
        let mut v = 0.0;
        for m in mats {
            v -= ln_det_from_factor(&linalg::cholesky_lower(m)?);
        }
        for (k, floor) in lay.scalar_floors.iter().enumerate() {
            let gap = x[lay.scalar_offset + k] - floor;
            if !(gap > 0.0) {
                return None;
            }
            v -= gap.ln();
        }
        for k in 0..lay.num_rates {
            let r = x[lay.rate_offset + k];
            if !(r > 0.0) {
                return None;
            }
            v -= r.ln();
        }
        Some(v)
    }

    /// Barrier function `-t f0 + phi`, `None` outside the strict interior.
    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mats = self.layout.matrices(x);
        let mut v = self.domain_value(&mats, x)?;
        for c in &self.constraints {
            let g = self.concave_value(c, &mats, x)?;
            if !(g > 0.0) {
                return None;
            }
            v -= g.ln();
        }
        let f0 = self.concave_value(&self.objective, &mats, x)?;
        Some(v - t * f0)
    }

    fn strictly_feasible(&self, x: &[f64]) -> bool {
        self.value(x, 0.0).is_some()
    }

    /// Gradient and Hessian of the barrier function at an interior point.
    fn derivatives(&self, x: &[f64], t: f64) -> Derivatives {
        let lay = &self.layout;
        let n = lay.len;
        let mats = lay.matrices(x);
        let mut grad = vec![0.0; n];
        let mut hess = RMat::zeros(n, n);
        let mut stacks = RowStacks::new(self.plans.len());

        let atom_terms = |c: &Concave, grad_out: &mut [f64], row_scale: f64, grad_scale: f64, stacks: &mut RowStacks| {
            for a in &c.atoms {
                let l = atom_factor(a, &mats, x).expect("interior point");
                let jac = atom_jacobian(a, &self.coords, &l);
                let gl = diag_sums(&jac, l.nrows());
                for (col, gv) in a.cols.iter().zip(gl) {
                    grad_out[*col] += grad_scale * a.weight * gv;
                }
                stacks.push_scaled(a.plan, &jac, (row_scale * a.weight).sqrt());
            }
        };

        // objective: -t f0
        for (gi, ai) in grad.iter_mut().zip(&self.objective.grad) {
            *gi -= t * ai;
        }
        atom_terms(&self.objective, &mut grad, t, -t, &mut stacks);

        // constraints: -ln g
        for c in &self.constraints {
            let g = self.concave_value(c, &mats, x).expect("interior point");
            let mut dg = c.grad.clone();
            atom_terms(c, &mut dg, 1.0 / g, 1.0, &mut stacks);
            for (gi, d) in grad.iter_mut().zip(&dg) {
                *gi -= d / g;
            }
            stacks.rows[self.dense_plan].extend(dg.iter().map(|d| d / g));
        }

        // domain: -ln det X, -ln(x - floor), -ln r
        for (v, m) in mats.iter().enumerate() {
            let l = linalg::cholesky_lower(m).expect("interior point");
            let u = l
                .solve_lower_triangular(&linalg::identity(m.nrows()))
                .expect("nonsingular factor");
            let cs = &self.coords[&m.nrows()];
            let mut jac = RMat::zeros(linalg::herm_dim(m.nrows()), cs.len());
            push_congruence_columns(&u, cs, &mut jac, 0);
            let gl = diag_sums(&jac, m.nrows());
            for (col, gv) in lay.psd_range(v).zip(gl) {
                grad[col] -= gv;
            }
            stacks.push_scaled(self.psd_plans[v], &jac, 1.0);
        }
        for (k, floor) in lay.scalar_floors.iter().enumerate() {
            let idx = lay.scalar_offset + k;
            let gap = x[idx] - floor;
            grad[idx] -= 1.0 / gap;
            hess[(idx, idx)] += 1.0 / (gap * gap);
        }
        for k in 0..lay.num_rates {
            let idx = lay.rate_offset + k;
            grad[idx] -= 1.0 / x[idx];
            hess[(idx, idx)] += 1.0 / (x[idx] * x[idx]);
        }

        for (plan, buf) in stacks.rows.iter().enumerate() {
            if buf.is_empty() {
                continue;
            }
            let cols = &self.plans[plan];
            let k = cols.len();
            let j = RMat::from_row_slice(buf.len() / k, k, buf);
            let jtj = j.tr_mul(&j);
            for (b, &cb) in cols.iter().enumerate() {
                for (a, &ca) in cols.iter().enumerate() {
                    hess[(ca, cb)] += jtj[(a, b)];
                }
            }
        }
        Derivatives { grad, hess }
    }
}

/// Solves `H d = -g`, regularizing the diagonal if `H` is numerically
/// indefinite.
fn newton_direction(d: &Derivatives) -> Option<Vec<f64>> {
    let n = d.grad.len();
    let rhs = DVector::from_iterator(n, d.grad.iter().map(|g| -g));
    let scale = (0..n).map(|i| d.hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut h = d.hess.clone();
        for i in 0..n {
            h[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(h) {
            let sol = ch.solve(&rhs);
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol.iter().copied().collect());
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

struct Run<'a> {
    problem: &'a Compiled,
    options: &'a SolverOptions,
    phase_one: bool,
    steps: usize,
    records: Vec<IterateRecord>,
}

enum Outcome {
    Converged,
    Budget,
    EarlyExit,
}

struct Final {
    x: Vec<f64>,
    t: f64,
    decrement: f64,
    outcome: Outcome,
}

impl Run<'_> {
    /// Barrier method from a strictly feasible `x`; `early_exit` is checked
    /// after every Newton step.
    fn barrier(&mut self, mut x: Vec<f64>, early_exit: impl Fn(&[f64]) -> bool) -> Final {
        let degree = self.problem.degree();
        let mut t = 1.0;
        let mut decrement = f64::INFINITY;
        loop {
            // centering
            loop {
                if early_exit(&x) {
                    return Final {
                        x,
                        t,
                        decrement,
                        outcome: Outcome::EarlyExit,
                    };
                }
                if self.steps >= self.options.max_iterations {
                    return Final {
                        x,
                        t,
                        decrement,
                        outcome: Outcome::Budget,
                    };
                }
                let d = self.problem.derivatives(&x, t);
                let Some(dir) = newton_direction(&d) else {
                    break;
                };
                let lambda_sq = -dot(&d.grad, &dir);
                decrement = lambda_sq.max(0.0) / 2.0;
                if decrement <= CENTERING_TOLERANCE {
                    break;
                }
                let f = self.problem.value(&x, t).expect("interior point");
                let slope = dot(&d.grad, &dir);
                let mut alpha = 1.0;
                let mut next = None;
                while alpha >= MIN_STEP {
                    let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
                    if let Some(fc) = self.problem.value(&cand, t) {
                        if fc <= f + ARMIJO * alpha * slope + 1e-13 * f.abs() {
                            next = Some(cand);
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                self.steps += 1;
                let Some(cand) = next else {
                    break;
                };
                x = cand;
                if self.options.record_iterates {
                    let objective = self.problem.objective_value(&x).unwrap_or(f64::NAN);
                    self.records.push(IterateRecord {
                        phase_one: self.phase_one,
                        barrier_weight: t,
                        newton_step: self.steps,
                        objective,
                        decrement,
                        step_size: alpha,
                    });
                }
            }
            if degree / t <= self.options.tolerance {
                return Final {
                    x,
                    t,
                    decrement,
                    outcome: Outcome::Converged,
                };
            }
            t *= BARRIER_GROWTH;
        }
    }
}

fn default_point(layout: &Layout) -> Vec<f64> {
    let psd: Vec<CMat> = layout.psd_dims.iter().map(|&n| linalg::identity(n)).collect();
    let scalars: Vec<f64> = layout.scalar_floors.iter().map(|f| f + 1.0_f64.max(f.abs())).collect();
    layout.pack(&psd, &scalars, &vec![1.0; layout.num_rates])
}

/// Moves a warm start into the open domain.
fn interior_warm_point(layout: &Layout, warm: &Solution) -> Option<Vec<f64>> {
    if warm.psd_values.len() != layout.psd_dims.len()
        || warm.scalar_values.len() != layout.scalar_floors.len()
        || warm.rate_values.len() != layout.num_rates
    {
        return None;
    }
    let mut psd = Vec::with_capacity(warm.psd_values.len());
    for (m, &n) in warm.psd_values.iter().zip(&layout.psd_dims) {
        if m.shape() != (n, n) {
            return None;
        }
        let mut h = linalg::hermitian_part(m);
        if linalg::cholesky_lower(&h).is_none() {
            let lift = 1e-8 * (1.0 + linalg::real_trace(&h).abs() / n as f64) - linalg::min_eigenvalue(&h).min(0.0);
            h += linalg::scaled_identity(n, lift);
        }
        psd.push(h);
    }
    let scalars: Vec<f64> = warm
        .scalar_values
        .iter()
        .zip(&layout.scalar_floors)
        .map(|(&s, &f)| s.max(f + 1e-8 * (1.0 + f.abs())))
        .collect();
    let rates: Vec<f64> = warm.rate_values.iter().map(|&r| r.max(1e-8)).collect();
    Some(layout.pack(&psd, &scalars, &rates))
}

fn unpack(layout: &Layout, x: &[f64]) -> (Vec<CMat>, Vec<f64>, Vec<f64>) {
    (
        layout.matrices(x),
        x[layout.scalar_offset..layout.scalar_offset + layout.scalar_floors.len()].to_vec(),
        x[layout.rate_offset..layout.rate_offset + layout.num_rates].to_vec(),
    )
}

/// Maximizes `program` with a phase-one / log-barrier interior-point method.
///
/// The barrier weight starts at 1 and grows tenfold per stage until the
/// duality-gap bound (barrier degree over weight) falls below
/// `options.tolerance`. Each stage is centered with damped Newton steps and
/// a backtracking line search that rejects points outside the open domain.
/// A warm start outside the strict interior triggers phase one from the
/// nearest interior lift of the warm point.
pub fn solve(program: &ConvexProgram, warm_start: Option<&Solution>, options: &SolverOptions) -> Result<SolveReport> {
    program.validate()?;
    if !(options.tolerance > 0.0) || options.max_iterations == 0 {
        return Err(Error::InvalidArgument(
            "solver tolerance must be positive and max_iterations at least 1".into(),
        ));
    }
    let main = Compiled::main(program);
    let lay = &main.layout;
    let mut records = Vec::new();
    let mut steps = 0;

    let start = warm_start
        .and_then(|w| interior_warm_point(lay, w))
        .filter(|x| main.domain_value(&lay.matrices(x), x).is_some())
        .unwrap_or_else(|| default_point(lay));

    let start = if main.strictly_feasible(&start) {
        start
    } else {
        let mats = lay.matrices(&start);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for c in &main.constraints {
            let g = main.concave_value(c, &mats, &start).ok_or_else(|| {
                Error::InvalidProgram("a log-det atom is singular at the starting point".into())
            })?;
            worst = worst.max(-g);
            scale = scale.max(g.abs());
        }
        for v in start.iter() {
            scale = scale.max(v.abs());
        }
        let aux = Compiled::phase_one(program, 1e6 * scale);
        let mut x1 = start.clone();
        x1.push(worst + 1.0);
        let slack = aux.layout.slack.expect("slack present");
        let mut run = Run {
            problem: &aux,
            options,
            phase_one: true,
            steps: 0,
            records: Vec::new(),
        };
        let fin = run.barrier(x1, |x| x[slack] < -PHASE_ONE_MARGIN);
        steps += run.steps;
        records.append(&mut run.records);
        let mut x = fin.x;
        let s = x.pop().expect("slack present");
        if !(s < 0.0 && main.strictly_feasible(&x)) {
            let (psd, scalars, rates) = unpack(lay, &x);
            return Ok(SolveReport {
                solution: Solution {
                    psd_values: psd,
                    scalar_values: scalars,
                    rate_values: rates,
                    objective_value: f64::NAN,
                    kkt_residual: f64::INFINITY,
                    status: SolveStatus::Infeasible,
                    newton_steps: steps,
                },
                iterates: records,
            });
        }
        x
    };

    let mut run = Run {
        problem: &main,
        options,
        phase_one: false,
        steps,
        records,
    };
    let fin = run.barrier(start, |_| false);
    let status = match fin.outcome {
        Outcome::Converged => SolveStatus::Optimal,
        Outcome::Budget | Outcome::EarlyExit => SolveStatus::MaxIterations,
    };
    let objective_value = main.objective_value(&fin.x).expect("interior point");
    let (psd, scalars, rates) = unpack(lay, &fin.x);
    let mut solution = Solution {
        psd_values: psd,
        scalar_values: scalars,
        rate_values: rates,
        objective_value,
        kkt_residual: main.degree() / fin.t + fin.decrement.min(f64::MAX),
        status,
        newton_steps: run.steps,
    };
    if let Some(w) = warm_start {
        if let Some(wv) = warm_value_if_feasible(program, w) {
            if wv > solution.objective_value {
                solution.psd_values = w.psd_values.clone();
                solution.scalar_values = w.scalar_values.clone();
                solution.rate_values = w.rate_values.clone();
                solution.objective_value = wv;
            }
        }
    }
    Ok(SolveReport {
        solution,
        iterates: run.records,
    })
}

/// Objective at a warm start that satisfies every constraint and domain
/// condition (PSD to -1e-9).
fn warm_value_if_feasible(program: &ConvexProgram, w: &Solution) -> Option<f64> {
    if w.psd_values.len() != program.psd_vars.len()
        || w.scalar_values.len() != program.scalar_vars.len()
        || w.rate_values.len() != program.rate_vars.len()
    {
        return None;
    }
    for (m, v) in w.psd_values.iter().zip(&program.psd_vars) {
        if m.shape() != (v.dim, v.dim) || linalg::min_eigenvalue(m) < -1e-9 {
            return None;
        }
    }
    if w.scalar_values.iter().zip(&program.scalar_vars).any(|(s, v)| *s < v.floor) {
        return None;
    }
    if w.rate_values.iter().any(|r| *r < 0.0) {
        return None;
    }
    for (c, val) in program.constraints.iter().zip(super::constraint_values(program, w)) {
        if !(val? <= c.bound) {
            return None;
        }
    }
    super::objective_at(program, w)
}
