use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linalg::{identity, scaled_identity, LN_2};

fn one(x: f64) -> CMat {
    scaled_identity(1, x)
}

/// Convex subproblem of the scalar CAP design, expanded at `(v_hat, q_hat)`.
fn scalar_cap_program(v_hat: f64, q_hat: f64, cap: f64, power: f64) -> (ConvexProgram, usize, Var) {
    let mut p = ConvexProgram::new();
    let v = p.add_psd(1, "v");
    let q = p.add_scalar(1e-10, "q");
    // log2(1 + v + q) - linearized log2(1 + q)
    let mut aff = Affine::constant(-(1.0 + q_hat).log2() + q_hat / ((1.0 + q_hat) * LN_2));
    aff.add_scalar(q, -1.0 / ((1.0 + q_hat) * LN_2));
    p.objective = ConcaveExpr {
        affine: aff,
        log_dets: vec![LogDet::new(1.0 / LN_2, one(1.0)).with_congruence(v, one(1.0)).with_scalar(q, one(1.0))],
    };
    // linearized log2(v + q) - log2 q <= cap
    let s = v_hat + q_hat;
    let mut fh = Affine::constant(s.log2() - 1.0 / LN_2);
    fh.add_trace(v, one(1.0 / (s * LN_2))).add_scalar(q, 1.0 / (s * LN_2));
    p.add_constraint(
        ConvexExpr {
            affine: fh,
            neg_log_dets: vec![LogDet::new(1.0 / LN_2, one(0.0)).with_scalar(q, one(1.0))],
        },
        cap,
        "fronthaul",
    );
    let mut pw = Affine::default();
    pw.add_trace(v, one(1.0)).add_scalar(q, 1.0);
    p.add_constraint(ConvexExpr { affine: pw, neg_log_dets: vec![] }, power, "power");
    (p, v, q)
}

#[test]
fn scalar_cap_fixed_point() {
    // both constraints bind: q = P 2^{-C}, v = P (1 - 2^{-C})
    let (cap, power) = (2.0, 10.0);
    let q_star = power * 2f64.powf(-cap);
    let v_star = power - q_star;
    let (p, v, q) = scalar_cap_program(v_star, q_star, cap, power);
    let sol = solve(&p, None, &SolverOptions::default()).unwrap().solution;
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.psd_values[v][(0, 0)].re - v_star).abs() < 1e-3, "{:?}", sol);
    assert!((sol.value(q) - q_star).abs() < 1e-3);
    let rate = 11f64.log2() - 3.5f64.log2();
    assert!((sol.objective_value - rate).abs() < 1e-3);
    assert!(sol.kkt_residual <= 1e-6 + 1e-9);
}

#[test]
fn scalar_cap_iterated_expansion_reaches_the_fixed_point() {
    let (mut vh, mut qh) = (1.0, 1.0);
    let mut warm: Option<Solution> = None;
    for _ in 0..60 {
        let (p, v, q) = scalar_cap_program(vh, qh, 2.0, 10.0);
        let sol = solve(&p, warm.as_ref(), &SolverOptions::default()).unwrap().solution;
        vh = sol.psd_values[v][(0, 0)].re;
        qh = sol.value(q);
        warm = Some(sol);
    }
    assert!((vh - 7.5).abs() < 1e-3 && (qh - 2.5).abs() < 1e-3, "{vh} {qh}");
}

#[test]
fn symmetric_water_filling() {
    let n = 3;
    let p_tot = 6.0;
    let mut p = ConvexProgram::new();
    let v = p.add_psd(n, "V");
    p.objective.log_dets.push(LogDet::new(1.0 / LN_2, identity(n)).with_congruence(v, identity(n)));
    let mut tr = Affine::default();
    tr.add_trace(v, identity(n));
    p.add_constraint(ConvexExpr { affine: tr, neg_log_dets: vec![] }, p_tot, "trace");
    let sol = solve(&p, None, &SolverOptions::default()).unwrap().solution;
    assert_eq!(sol.status, SolveStatus::Optimal);
    let target = scaled_identity(n, p_tot / n as f64);
    assert!(linalg::max_abs_diff(&sol.psd_values[v], &target) < 1e-3);
    assert!((sol.objective_value - 3.0 * 3f64.log2()).abs() < 1e-5);
}

#[test]
fn contradictory_constraints_are_infeasible() {
    let mut p = ConvexProgram::new();
    let r = p.add_rate("r");
    p.objective.affine.add_scalar(r, 1.0);
    let mut lo = Affine::default();
    lo.add_scalar(r, -1.0);
    p.add_constraint(ConvexExpr { affine: lo, neg_log_dets: vec![] }, -1.0, "r >= 1");
    let mut hi = Affine::default();
    hi.add_scalar(r, 1.0);
    p.add_constraint(ConvexExpr { affine: hi, neg_log_dets: vec![] }, 0.0, "r <= 0");
    let sol = solve(&p, None, &SolverOptions::default()).unwrap().solution;
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn structural_errors_are_reported() {
    let mut p = ConvexProgram::new();
    let v = p.add_psd(2, "V");
    p.objective.log_dets.push(LogDet::new(1.0, identity(2)).with_congruence(v, identity(3)));
    assert!(matches!(solve(&p, None, &SolverOptions::default()), Err(Error::InvalidProgram(_))));

    let mut p = ConvexProgram::new();
    let v = p.add_psd(2, "V");
    p.objective.log_dets.push(LogDet::new(-1.0, identity(2)).with_congruence(v, identity(2)));
    assert!(p.validate().is_err());

    let mut p = ConvexProgram::new();
    p.objective.affine.add_scalar(Var::Rate(3), 1.0);
    assert!(p.validate().is_err());
}

#[test]
fn iteration_cap_returns_feasible_iterate() {
    let (p, _, _) = scalar_cap_program(7.5, 2.5, 2.0, 10.0);
    let opts = SolverOptions {
        max_iterations: 3,
        ..Default::default()
    };
    let sol = solve(&p, None, &opts).unwrap().solution;
    assert_eq!(sol.status, SolveStatus::MaxIterations);
    for (c, val) in p.constraints.iter().zip(constraint_values(&p, &sol)) {
        assert!(val.unwrap() <= c.bound + 1e-6);
    }
}

#[test]
fn identical_programs_give_identical_solutions() {
    let (p, _, _) = scalar_cap_program(3.0, 1.0, 2.0, 10.0);
    let opts = SolverOptions {
        record_iterates: true,
        ..Default::default()
    };
    let a = solve(&p, None, &opts).unwrap();
    let b = solve(&p, None, &opts).unwrap();
    assert_eq!(
        serde_json::to_string(&a.solution).unwrap(),
        serde_json::to_string(&b.solution).unwrap()
    );
    assert_eq!(a.iterates_jsonl(), b.iterates_jsonl());
    assert!(!a.iterates.is_empty());
    let first: IterateRecord = serde_json::from_str(a.iterates_jsonl().lines().next().unwrap()).unwrap();
    assert_eq!(first, a.iterates[0]);
}

#[test]
fn warm_start_is_never_worse() {
    let (p, _, _) = scalar_cap_program(5.0, 2.0, 2.0, 10.0);
    let cold = solve(&p, None, &SolverOptions::default()).unwrap().solution;
    let warm = solve(&p, Some(&cold), &SolverOptions::default()).unwrap().solution;
    assert!(warm.objective_value >= cold.objective_value - 1e-6);
}

/// `max log2 det(I + H X H^H)` s.t. `tr X <= P`, solved by water-filling
/// on the eigenvalues of `H^H H`.
fn water_filling_oracle(h: &CMat, power: f64) -> f64 {
    let (gains, _) = linalg::hermitian_eigen(&(h.adjoint() * h));
    let gains: Vec<f64> = gains.into_iter().filter(|g| *g > 1e-12).collect();
    let alloc = |mu: f64| -> f64 { gains.iter().map(|g| (mu - 1.0 / g).max(0.0)).sum() };
    let (mut lo, mut hi) = (0.0, power + gains.iter().map(|g| 1.0 / g).fold(0.0, f64::max) + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc(mid) > power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    gains.iter().map(|g| (1.0 + g * (lo - 1.0 / g).max(0.0)).log2()).sum()
}

/// `max w1 ln(1 + a v) + w2 ln s - k s` s.t. `v + s <= P`: dense grid in
/// `v` with the inner maximizer over `s` in closed form, then local refinement.
fn grid_oracle(a: f64, w1: f64, w2: f64, k: f64, power: f64) -> f64 {
    let f = |v: f64| {
        let s = (w2 / k).min(power - v);
        w1 * (1.0 + a * v).ln() + w2 * s.ln() - k * s
    };
    let n = 20_000;
    let h = power / n as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..n {
        let val = f(i as f64 * h);
        if val > best.1 {
            best = (i, val);
        }
    }
    let (mut lo, mut hi) = (best.0.saturating_sub(1) as f64 * h, ((best.0 + 1) as f64 * h).min(power - 1e-12));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    f(0.5 * (lo + hi)).max(best.1)
}

#[test]
fn random_programs_match_independent_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let opts = SolverOptions::default();
        if case % 2 == 0 {
            let rows = rng.random_range(1..=4);
            let cols = rng.random_range(1..=4);
            let h = linalg::complex_gaussian(rows, cols, &mut rng);
            let power = rng.random_range(0.5..20.0);
            let mut p = ConvexProgram::new();
            let x = p.add_psd(cols, "X");
            p.objective.log_dets.push(LogDet::new(1.0 / LN_2, identity(rows)).with_congruence(x, h.clone()));
            let mut tr = Affine::default();
            tr.add_trace(x, identity(cols));
            p.add_constraint(ConvexExpr { affine: tr, neg_log_dets: vec![] }, power, "trace");
            let sol = solve(&p, None, &opts).unwrap().solution;
            let oracle = water_filling_oracle(&h, power);
            assert!((sol.objective_value - oracle).abs() < 1e-3, "case {case}: {} vs {oracle}", sol.objective_value);
            assert!(linalg::min_eigenvalue(&sol.psd_values[x]) >= -1e-9);
            assert!(linalg::real_trace(&sol.psd_values[x]) <= power + 1e-6);
        } else {
            let a: f64 = rng.random_range(0.1..5.0);
            let w1 = rng.random_range(0.1..2.0);
            let w2 = rng.random_range(0.1..2.0);
            let k = rng.random_range(0.1..2.0);
            let power = rng.random_range(1.0..10.0);
            let mut p = ConvexProgram::new();
            let v = p.add_psd(1, "v");
            let s = p.add_scalar(0.0, "s");
            p.objective.affine.add_scalar(s, -k);
            p.objective.log_dets.push(LogDet::new(w1, one(1.0)).with_congruence(v, one(a.sqrt())));
            p.objective.log_dets.push(LogDet::new(w2, one(0.0)).with_scalar(s, one(1.0)));
            let mut pw = Affine::default();
            pw.add_trace(v, one(1.0)).add_scalar(s, 1.0);
            p.add_constraint(ConvexExpr { affine: pw, neg_log_dets: vec![] }, power, "power");
            let sol = solve(&p, None, &opts).unwrap().solution;
            let oracle = grid_oracle(a, w1, w2, k, power);
            assert!((sol.objective_value - oracle).abs() < 1e-3, "case {case}: {} vs {oracle}", sol.objective_value);
            let used = sol.psd_values[v][(0, 0)].re + sol.value(s);
            assert!(used <= power + 1e-6);
        }
    }
}

#[test]
fn shared_congruence_factor_matches_separate_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = linalg::complex_gaussian(2, 3, &mut rng);
    let build = || {
        let mut p = ConvexProgram::new();
        let x = p.add_psd(3, "X");
        let y = p.add_psd(3, "Y");
        p.objective
            .log_dets
            .push(LogDet::new(1.0, identity(2)).with_congruence(x, h.clone()).with_congruence(y, h.clone()));
        let mut tr = Affine::default();
        tr.add_trace(x, identity(3)).add_trace(y, scaled_identity(3, 2.0));
        p.add_constraint(ConvexExpr { affine: tr, neg_log_dets: vec![] }, 4.0, "power");
        p
    };
    let a = solve(&build(), None, &SolverOptions::default()).unwrap().solution;
    assert_eq!(a.status, SolveStatus::Optimal);
    // all power goes to the cheaper variable
    assert!(linalg::real_trace(&a.psd_values[1]) < 1e-4);
    assert!((linalg::real_trace(&a.psd_values[0]) - 4.0).abs() < 1e-4);
}
