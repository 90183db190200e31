use super::*;
use crate::geometry::{build_statistics, place_nodes, FixedChannel};
use crate::linalg::scaled_identity;

fn scalar_config(cap: f64, power: f64) -> SystemConfig {
    SystemConfig::homogeneous(1, 1, 1, 1, cap, power, 20)
}

fn unit_channel(num_mss: usize) -> ChannelRealization {
    ChannelRealization::new(vec![1], vec![scaled_identity(1, 1.0); num_mss]).unwrap()
}

fn assert_feasible(config: &SystemConfig, sol: &CapSolution) {
    for rec in &sol.trace {
        for s in rec.fronthaul_slack.iter().chain(&rec.power_slack) {
            assert!(*s >= -1e-6, "iterate {}/{} violates a constraint: {rec:?}", rec.outer, rec.inner);
        }
    }
    let (f, p) = cap_slacks(config, &sol.covariance, &sol.quantization).unwrap();
    assert!(f.iter().chain(&p).all(|s| *s >= -1e-6));
}

#[test]
fn init_matches_bisection_oracle() {
    let cfg = scalar_config(2.0, 10.0);
    let (v, q) = init_cap(&cfg).unwrap();
    // v + sigma = 9 and log2((v + sigma) / sigma) = 1.8
    let sigma = 9.0 * 2f64.powf(-1.8);
    assert!((q.variances[0] - sigma).abs() < 1e-8);
    assert!((v.blocks[0][(0, 0)].re - (9.0 - sigma)).abs() < 1e-8);
    let (f, p) = cap_slacks(&cfg, &v, &q).unwrap();
    assert!((f[0] - 0.2).abs() < 1e-8 && (p[0] - 1.0).abs() < 1e-8);
}

#[test]
fn init_is_feasible_on_a_random_network() {
    let cfg = SystemConfig::homogeneous(3, 4, 2, 1, 3.0, 10.0, 20);
    let (v, q) = init_cap(&cfg).unwrap();
    let (f, p) = cap_slacks(&cfg, &v, &q).unwrap();
    for i in 0..3 {
        assert!((f[i] - 0.3).abs() < 1e-8);
        assert!((p[i] - 1.0).abs() < 1e-8);
    }
}

#[test]
fn init_rejects_a_vanishing_power_budget() {
    let cfg = scalar_config(2.0, 1e-11);
    assert!(matches!(init_cap(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn scalar_perfect_csi_reaches_the_closed_form() {
    let cfg = scalar_config(2.0, 10.0);
    let sol = optimize_cap_perfect(&cfg, &unit_channel(1), &SsumOptions {
        inner_max: 200,
        inner_tolerance: 1e-9,
        ..Default::default()
    })
    .unwrap();
    let v = sol.covariance.blocks[0][(0, 0)].re;
    let s = sol.quantization.variances[0];
    assert!((v - 7.5).abs() < 1e-3 && (s - 2.5).abs() < 1e-3, "v = {v}, sigma = {s}");
    assert_feasible(&cfg, &sol);
}

#[test]
fn scalar_stochastic_csi_reaches_the_closed_form() {
    let cfg = scalar_config(2.0, 10.0);
    let model = FixedChannel(unit_channel(1));
    let sol = optimize_cap_stochastic(&cfg, &model, &SsumOptions {
        outer_iterations: 60,
        ..Default::default()
    })
    .unwrap();
    let v = sol.covariance.blocks[0][(0, 0)].re;
    let s = sol.quantization.variances[0];
    assert!((v - 7.5).abs() < 1e-3 && (s - 2.5).abs() < 1e-3, "v = {v}, sigma = {s}");
    assert_feasible(&cfg, &sol);
    assert_eq!(sol.sample_count, 60);
}

#[test]
fn zero_channel_keeps_the_initialization() {
    let cfg = SystemConfig::homogeneous(2, 2, 2, 1, 2.0, 10.0, 20);
    let h = ChannelRealization::new(vec![2, 2], vec![linalg::zeros(1, 4); 2]).unwrap();
    let sol = optimize_cap_perfect(&cfg, &h, &SsumOptions::default()).unwrap();
    let (v0, q0) = init_cap(&cfg).unwrap();
    assert_eq!(sol.covariance, v0);
    assert_eq!(sol.quantization, q0);
    assert!(sol.trace.iter().all(|r| r.objective == 0.0));
}

#[test]
fn zero_fronthaul_gives_the_zero_solution() {
    let cfg = SystemConfig::homogeneous(2, 2, 2, 1, 0.0, 10.0, 20);
    let geo = place_nodes(&cfg, 3);
    let stats = build_statistics(&geo, &cfg).unwrap();
    let opts = SsumOptions {
        outer_iterations: 3,
        ..Default::default()
    };
    let sol = optimize_cap_stochastic(&cfg, &stats, &opts).unwrap();
    assert!(sol.covariance.is_zero());
    assert!(sol.trace.iter().all(|r| r.objective == 0.0));
}

#[test]
fn zero_weights_give_a_constant_zero_trace() {
    let mut cfg = SystemConfig::homogeneous(2, 2, 1, 1, 2.0, 10.0, 20);
    cfg.rate_weights = vec![0.0, 0.0];
    let geo = place_nodes(&cfg, 9);
    let stats = build_statistics(&geo, &cfg).unwrap();
    let opts = SsumOptions {
        outer_iterations: 3,
        ..Default::default()
    };
    let sol = optimize_cap_stochastic(&cfg, &stats, &opts).unwrap();
    assert!(sol.trace.iter().all(|r| r.surrogate_objective == 0.0 && r.objective == 0.0));
    assert_feasible(&cfg, &sol);
}

#[test]
fn symmetric_statistics_give_symmetric_covariances() {
    // two scalar RUs, two MSs with identical degenerate statistics; the
    // surrogate subproblem around the symmetric initialization is symmetric
    // (later MM steps may leave the saddle, since serving one MS is better)
    let cfg = SystemConfig::homogeneous(2, 2, 1, 1, 2.0, 10.0, 20);
    let row = CMat::from_row_slice(1, 2, &[linalg::c(1.0, 0.0), linalg::c(0.6, 0.3)]);
    let model = FixedChannel(ChannelRealization::new(vec![1, 1], vec![row.clone(), row]).unwrap());
    let opts = SsumOptions {
        outer_iterations: 1,
        inner_max: 1,
        ..Default::default()
    };
    let sol = optimize_cap_stochastic(&cfg, &model, &opts).unwrap();
    let (a, b) = (&sol.covariance.blocks[0], &sol.covariance.blocks[1]);
    assert!(linalg::max_abs_diff(a, b) < 1e-2, "{a} vs {b}");
    assert_feasible(&cfg, &sol);
}

#[test]
fn inner_surrogate_objective_is_nondecreasing() {
    let cfg = SystemConfig::homogeneous(2, 2, 2, 1, 2.0, 10.0, 20);
    let geo = place_nodes(&cfg, 11);
    let stats = build_statistics(&geo, &cfg).unwrap();
    let opts = SsumOptions {
        outer_iterations: 4,
        seed: 2,
        ..Default::default()
    };
    let sol = optimize_cap_stochastic(&cfg, &stats, &opts).unwrap();
    for w in sol.trace.windows(2) {
        if w[0].outer == w[1].outer {
            assert!(w[1].surrogate_objective >= w[0].surrogate_objective - 1e-8);
        }
    }
    assert_feasible(&cfg, &sol);
    let again = optimize_cap_stochastic(&cfg, &stats, &opts).unwrap();
    assert_eq!(serde_json::to_string(&sol).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn perfect_csi_trace_is_monotone_and_feasible() {
    let cfg = SystemConfig::homogeneous(4, 4, 2, 1, 4.0, 10.0, 20);
    let geo = place_nodes(&cfg, 5);
    let stats = build_statistics(&geo, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = stats.draw(&mut rng);
    let t0 = std::time::Instant::now();
    let sol = optimize_cap_perfect(&cfg, &h, &SsumOptions::default()).unwrap();
    eprintln!("desk-scale CAP block: {:?}, {} iterates", t0.elapsed(), sol.trace.len());
    for w in sol.trace.windows(2) {
        assert!(w[1].objective >= w[0].objective - 1e-6);
    }
    assert!(sol.trace.last().unwrap().objective > sol.trace[0].objective);
    assert_feasible(&cfg, &sol);
}
