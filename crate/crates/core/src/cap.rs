//! Compression-after-precoding design: per-block MM for instantaneous CSI
//! and stochastic successive upper-bound minimization (SSUM) with inner MM
//! iterations for stochastic CSI.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::design::{Builder, Extracted};
use crate::error::{Error, Result};
use crate::geometry::{ChannelModel, ChannelRealization};
use crate::linalg::{self, CMat};
use crate::signal::{self, PrecoderCovariance, QuantizationProfile, QUANTIZATION_FLOOR};
use crate::solver::{self, ConvexExpr, SolveStatus, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsumOptions {
    /// Channel draws of the stochastic designs.
    pub outer_iterations: usize,
    /// Relative change of the surrogate objective that ends the inner loop.
    pub inner_tolerance: f64,
    pub inner_max: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for SsumOptions {
    fn default() -> Self {
        SsumOptions {
            outer_iterations: 100,
            inner_tolerance: 1e-4,
            inner_max: 20,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

impl SsumOptions {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 || self.inner_max == 0 {
            return Err(Error::InvalidArgument("iteration counts must be at least 1".into()));
        }
        if !(self.inner_tolerance > 0.0) {
            return Err(Error::InvalidArgument("inner_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// One accepted iterate of an optimizer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner: usize,
    /// Objective of the convex subproblem just solved (bits).
    pub surrogate_objective: f64,
    /// True weighted sum-rate: on the block channel for instantaneous CSI,
    /// averaged over the draws so far for stochastic CSI.
    pub objective: f64,
    /// `C̄_i` minus the fronthaul load of each RU.
    pub fronthaul_slack: Vec<f64>,
    /// `P̄_i` minus the transmit power of each RU.
    pub power_slack: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapSolution {
    pub covariance: PrecoderCovariance,
    pub quantization: QuantizationProfile,
    pub trace: Vec<IterationRecord>,
    /// Channel draws consumed (1 for a single block).
    pub sample_count: usize,
}

impl CapSolution {
    pub fn surrogate_objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.surrogate_objective).collect()
    }
}

/// Feasible starting point: per RU, `V_j^0` carries `beta_i I` on the RU's
/// antennas for every MS, with `N_M beta_i + sigma_i^2 = 0.9 P̄_i / N_{t,i}`
/// (power at 90% of budget) and `sigma_i^2` set by bisection so that the
/// fronthaul rate equals `0.9 C̄_i`. RUs with `C̄_i = 0` stay silent with
/// the variance at the floor.
pub fn init_cap(config: &SystemConfig) -> Result<(PrecoderCovariance, QuantizationProfile)> {
    config.validate()?;
    let tx = &config.tx_antennas_per_ru;
    let total = config.total_tx();
    let nm = config.num_mss as f64;
    let mut beta_diag = vec![0.0; total];
    let mut sigma = vec![QUANTIZATION_FLOOR; config.num_rus];
    for i in 0..config.num_rus {
        let n = tx[i];
        let cap = config.fronthaul_capacity[i];
        if cap == 0.0 {
            continue;
        }
        let s = 0.9 * config.power_budget[i] / n as f64;
        if s <= QUANTIZATION_FLOOR {
            return Err(Error::InvalidConfig(format!(
                "RU {i}: power budget {} leaves no room above the quantization floor",
                config.power_budget[i]
            )));
        }
        let sig = bisect_variance(n, s, 0.9 * cap);
        sigma[i] = sig;
        let off = config.tx_offset(i);
        for d in &mut beta_diag[off..off + n] {
            *d = (s - sig) / nm;
        }
    }
    let beta = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        total,
        beta_diag.iter().map(|&b| linalg::c(b, 0.0)),
    ));
    Ok((
        PrecoderCovariance::cap(vec![beta; config.num_mss]),
        QuantizationProfile::new(sigma, QUANTIZATION_FLOOR)?,
    ))
}

/// Variance `sigma^2` at which an RU whose per-antenna covariance plus
/// variance is `s` (signal `s - sigma^2` on every antenna) has fronthaul rate
/// `target`, found by bisection on the log scale; the floor when even the
/// floor gives a lower rate.
pub(crate) fn bisect_variance(n: usize, s: f64, target: f64) -> f64 {
    let rate = |sig: f64| -> f64 {
        let v = PrecoderCovariance::cap(vec![linalg::scaled_identity(n, s - sig)]);
        let q = QuantizationProfile {
            variances: vec![sig],
            floor: 0.0,
        };
        signal::cap_fronthaul_rate(&v, &q, 0, &[n]).expect("positive variance")
    };
    if rate(QUANTIZATION_FLOOR) <= target {
        return QUANTIZATION_FLOOR;
    }
    // rate decreases from rate(floor) > target to rate(s) = 0
    let (mut lo, mut hi) = (QUANTIZATION_FLOOR.ln(), s.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    hi.exp()
}

/// Fronthaul and power slacks of a CAP point.
pub fn cap_slacks(config: &SystemConfig, v: &PrecoderCovariance, q: &QuantizationProfile) -> Result<(Vec<f64>, Vec<f64>)> {
    let tx = &config.tx_antennas_per_ru;
    let mut fronthaul = Vec::with_capacity(config.num_rus);
    let mut power = Vec::with_capacity(config.num_rus);
    for i in 0..config.num_rus {
        fronthaul.push(config.fronthaul_capacity[i] - signal::cap_fronthaul_rate(v, q, i, tx)?);
        power.push(config.power_budget[i] - signal::transmit_power(v, q, i, tx));
    }
    Ok((fronthaul, power))
}

pub(crate) fn check_channel(config: &SystemConfig, h: &ChannelRealization) -> Result<()> {
    if h.tx_antennas != config.tx_antennas_per_ru || h.num_mss() != config.num_mss {
        return Err(Error::DimensionMismatch("channel does not match the configuration".into()));
    }
    for j in 0..config.num_mss {
        if h.ms(j).nrows() != config.rx_antennas_per_ms[j] {
            return Err(Error::DimensionMismatch(format!("MS {j}: receive antenna count")));
        }
    }
    Ok(())
}

/// Columns of the identity on the antennas of the listed RUs.
pub(crate) fn antenna_embedding(config: &SystemConfig, rus: &[usize]) -> CMat {
    let cols: usize = rus.iter().map(|&i| config.tx_antennas_per_ru[i]).sum();
    let mut e = linalg::zeros(config.total_tx(), cols);
    let mut col = 0;
    for &i in rus {
        let off = config.tx_offset(i);
        for a in 0..config.tx_antennas_per_ru[i] {
            e[(off + a, col)] = linalg::c(1.0, 0.0);
            col += 1;
        }
    }
    e
}

/// Embedding onto the RUs with positive fronthaul capacity.
fn active_embedding(config: &SystemConfig) -> Option<CMat> {
    let active: Vec<usize> = (0..config.num_rus).filter(|&i| config.fronthaul_capacity[i] > 0.0).collect();
    (!active.is_empty()).then(|| antenna_embedding(config, &active))
}

struct CapProblem<'a> {
    config: &'a SystemConfig,
    embedding: CMat,
}

/// Current CAP iterate in embedded form.
#[derive(Clone)]
struct Point {
    embedded: Vec<CMat>,
    sigma: Vec<f64>,
}

impl Point {
    fn from_init(v: &PrecoderCovariance, q: &QuantizationProfile) -> Self {
        Point {
            embedded: v.blocks.clone(),
            sigma: q.variances.clone(),
        }
    }

    fn from_extracted(e: &Extracted) -> Self {
        Point {
            embedded: e.embedded.clone(),
            sigma: e.sigma.clone(),
        }
    }

    fn total(&self) -> CMat {
        let mut it = self.embedded.iter();
        let first = it.next().expect("at least one MS").clone();
        it.fold(first, |acc, m| acc + m)
    }

    fn covariance(&self) -> PrecoderCovariance {
        PrecoderCovariance::cap(self.embedded.clone())
    }

    fn quantization(&self) -> QuantizationProfile {
        QuantizationProfile {
            variances: self.sigma.clone(),
            floor: QUANTIZATION_FLOOR,
        }
    }
}

impl CapProblem<'_> {
    fn builder(&self) -> Builder {
        let cfg = self.config;
        let embeddings = vec![Some(self.embedding.clone()); cfg.num_mss];
        let sigma: Vec<Option<f64>> = cfg
            .fronthaul_capacity
            .iter()
            .map(|&c| if c > 0.0 { None } else { Some(QUANTIZATION_FLOOR) })
            .collect();
        Builder::new(&cfg.tx_antennas_per_ru, &embeddings, &sigma, QUANTIZATION_FLOOR, false)
    }

    /// Linearized fronthaul and power constraints around `at`.
    fn add_constraints(&self, b: &mut Builder, at: &Point) -> Result<()> {
        let cfg = self.config;
        let total = at.total();
        for i in 0..cfg.num_rus {
            if cfg.fronthaul_capacity[i] > 0.0 {
                let lhs = b.fronthaul_surrogate(&total, at.sigma[i], i, 1.0)?;
                b.program.add_constraint(lhs, cfg.fronthaul_capacity[i], format!("fronthaul{i}"));
            }
            let (affine, fixed) = b.power(i);
            b.program.add_constraint(
                ConvexExpr {
                    affine,
                    neg_log_dets: vec![],
                },
                cfg.power_budget[i] - fixed,
                format!("power{i}"),
            );
        }
        Ok(())
    }

    fn record(&self, outer: usize, inner: usize, surrogate: f64, objective: f64, at: &Point) -> Result<IterationRecord> {
        let (fronthaul_slack, power_slack) = cap_slacks(self.config, &at.covariance(), &at.quantization())?;
        Ok(IterationRecord {
            outer,
            inner,
            surrogate_objective: surrogate,
            objective,
            fronthaul_slack,
            power_slack,
        })
    }
}

pub(crate) fn solve_step(b: &Builder, warm: &solver::Solution, options: &SolverOptions, context: impl Fn() -> String) -> Result<solver::Solution> {
    let report = solver::solve(&b.program, Some(warm), options).map_err(|e| e.in_context(context()))?;
    if report.solution.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible.in_context(context()));
    }
    Ok(report.solution)
}

fn zero_solution(config: &SystemConfig, v: PrecoderCovariance, q: QuantizationProfile) -> Result<CapSolution> {
    let (fronthaul_slack, power_slack) = cap_slacks(config, &v, &q)?;
    Ok(CapSolution {
        covariance: v,
        quantization: q,
        trace: vec![IterationRecord {
            outer: 0,
            inner: 0,
            surrogate_objective: 0.0,
            objective: 0.0,
            fronthaul_slack,
            power_slack,
        }],
        sample_count: 1,
    })
}

pub(crate) fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-12)
}

/// Per-block MM for a known channel: the rate surrogates and fronthaul
/// linearization are re-expanded at every iterate, and an iterate is kept
/// only if it raises the true weighted sum-rate.
pub fn optimize_cap_perfect(config: &SystemConfig, h: &ChannelRealization, options: &SsumOptions) -> Result<CapSolution> {
    options.validate()?;
    check_channel(config, h)?;
    let (v0, q0) = init_cap(config)?;
    let Some(embedding) = active_embedding(config) else {
        return zero_solution(config, v0, q0);
    };
    let problem = CapProblem { config, embedding };
    let weights = &config.rate_weights;
    let mut at = Point::from_init(&v0, &q0);
    let mut objective = signal::weighted_sum_rate(h, &at.covariance(), &at.quantization(), weights);
    let mut trace = vec![problem.record(0, 0, objective, objective, &at)?];
    let mut warm = None;
    for r in 1..=options.inner_max {
        let mut b = problem.builder();
        for j in 0..config.num_mss {
            let (affine, atom) = b.rate_surrogate(h, &at.embedded, &at.sigma, j, weights[j])?;
            b.program.objective.affine.extend(affine);
            b.program.objective.log_dets.extend(atom);
        }
        problem.add_constraints(&mut b, &at)?;
        let start = warm.take().unwrap_or_else(|| b.warm_point(&at.embedded, &at.sigma, &[]));
        let sol = solve_step(&b, &start, &options.solver, || format!("CAP MM iteration {r}"))?;
        let next = Point::from_extracted(&b.extract(&sol));
        let value = signal::weighted_sum_rate(h, &next.covariance(), &next.quantization(), weights);
        if !(value > objective) {
            break;
        }
        let change = relative_change(value, objective);
        at = next;
        objective = value;
        trace.push(problem.record(0, r, sol.objective_value, value, &at)?);
        warm = Some(sol);
        if r >= 2 && change < options.inner_tolerance {
            break;
        }
    }
    Ok(CapSolution {
        covariance: at.covariance(),
        quantization: at.quantization(),
        trace,
        sample_count: 1,
    })
}

/// Stochastic-CSI design. Outer iteration `n` draws `H^(n)` from `model`
/// and adds the rate surrogates expanded at the previous outer iterate to
/// the running average; the inner loop re-linearizes the fronthaul
/// constraints until the surrogate objective settles (at least two inner
/// iterations).
pub fn optimize_cap_stochastic<M: ChannelModel>(config: &SystemConfig, model: &M, options: &SsumOptions) -> Result<CapSolution> {
    options.validate()?;
    config.validate()?;
    if model.tx_antennas() != config.tx_antennas_per_ru.as_slice() || model.rx_antennas() != config.rx_antennas_per_ms {
        return Err(Error::DimensionMismatch("channel model does not match the configuration".into()));
    }
    let (v0, q0) = init_cap(config)?;
    let Some(embedding) = active_embedding(config) else {
        let mut sol = zero_solution(config, v0, q0)?;
        sol.sample_count = options.outer_iterations;
        return Ok(sol);
    };
    let problem = CapProblem { config, embedding };
    let weights = &config.rate_weights;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut draws: Vec<(ChannelRealization, Point)> = Vec::with_capacity(options.outer_iterations);
    let mut at = Point::from_init(&v0, &q0);
    let mut trace = Vec::new();
    let mut warm: Option<solver::Solution> = None;

    for n in 1..=options.outer_iterations {
        let h = model.draw(&mut rng);
        draws.push((h, at.clone()));
        let scale = 1.0 / n as f64;
        let mut previous: Option<f64> = None;
        for r in 1..=options.inner_max {
            let mut b = problem.builder();
            for (h_l, point_l) in &draws {
                for j in 0..config.num_mss {
                    let (affine, atom) = b.rate_surrogate(h_l, &point_l.embedded, &point_l.sigma, j, scale * weights[j])?;
                    b.program.objective.affine.extend(affine);
                    b.program.objective.log_dets.extend(atom);
                }
            }
            problem.add_constraints(&mut b, &at)?;
            let start = warm.take().unwrap_or_else(|| b.warm_point(&at.embedded, &at.sigma, &[]));
            let sol = solve_step(&b, &start, &options.solver, || format!("CAP SSUM outer {n} inner {r}"))?;
            let surrogate = sol.objective_value;
            at = Point::from_extracted(&b.extract(&sol));
            let ergodic = draws
                .iter()
                .map(|(h_l, _)| signal::weighted_sum_rate(h_l, &at.covariance(), &at.quantization(), weights))
                .sum::<f64>()
                * scale;
            trace.push(problem.record(n, r, surrogate, ergodic, &at)?);
            warm = Some(sol);
            let done = previous.is_some_and(|p| relative_change(surrogate, p) < options.inner_tolerance);
            previous = Some(surrogate);
            if r >= 2 && done {
                break;
            }
        }
    }
    Ok(CapSolution {
        covariance: at.covariance(),
        quantization: at.quantization(),
        trace,
        sample_count: options.outer_iterations,
    })
}

#[cfg(test)]
mod tests;
