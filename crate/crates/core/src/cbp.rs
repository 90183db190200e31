//! Compression-before-precoding design: MS-to-RU clustering, the
//! stochastic-CSI SSUM design with noiseless precoder transfer, and per-block
//! MM for instantaneous CSI with quantized precoders.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cap::{antenna_embedding, bisect_variance, check_channel, relative_change, solve_step, IterationRecord, SsumOptions};
use crate::config::SystemConfig;
use crate::design::Builder;
use crate::error::{Error, Result};
use crate::geometry::{ChannelModel, ChannelRealization};
use crate::linalg::{self, CMat};
use crate::signal::{self, PrecoderCovariance, QuantizationProfile, QUANTIZATION_FLOOR};
use crate::solver::{Affine, ConvexExpr};

/// Which MSs each RU serves (`M_i`) and which RUs serve each MS (`B_j`),
/// both in ascending index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub served_mss: Vec<Vec<usize>>,
    pub serving_rus: Vec<Vec<usize>>,
    pub cluster_size: usize,
}

impl ClusterAssignment {
    /// Each RU picks the `cluster_size` MSs with the largest score
    /// (`scores[j][i]` for MS `j`, RU `i`), ties going to the lower index.
    pub fn from_scores(scores: &[Vec<f64>], num_rus: usize, cluster_size: usize) -> Result<Self> {
        if cluster_size == 0 {
            return Err(Error::InvalidArgument("cluster size must be at least 1".into()));
        }
        if scores.iter().any(|row| row.len() != num_rus) {
            return Err(Error::DimensionMismatch("one score per RU is required".into()));
        }
        let num_mss = scores.len();
        let mut served_mss = Vec::with_capacity(num_rus);
        let mut serving_rus = vec![Vec::new(); num_mss];
        for i in 0..num_rus {
            let mut order: Vec<usize> = (0..num_mss).collect();
            order.sort_by(|&a, &b| scores[b][i].total_cmp(&scores[a][i]).then(a.cmp(&b)));
            let mut chosen: Vec<usize> = order.into_iter().take(cluster_size).collect();
            chosen.sort_unstable();
            for &j in &chosen {
                serving_rus[j].push(i);
            }
            served_mss.push(chosen);
        }
        Ok(ClusterAssignment {
            served_mss,
            serving_rus,
            cluster_size,
        })
    }

    /// Every RU serves every MS.
    pub fn full(num_rus: usize, num_mss: usize) -> Self {
        ClusterAssignment {
            served_mss: vec![(0..num_mss).collect(); num_rus],
            serving_rus: vec![(0..num_rus).collect(); num_mss],
            cluster_size: num_mss,
        }
    }

    pub fn num_rus(&self) -> usize {
        self.served_mss.len()
    }

    pub fn num_mss(&self) -> usize {
        self.serving_rus.len()
    }

    /// MSs served by no RU.
    pub fn unserved(&self) -> Vec<usize> {
        (0..self.num_mss()).filter(|&j| self.serving_rus[j].is_empty()).collect()
    }

    /// `E_j`: columns of the identity on the antennas of the RUs in `B_j`.
    pub fn embeddings(&self, config: &SystemConfig) -> Vec<CMat> {
        self.serving_rus.iter().map(|b| antenna_embedding(config, b)).collect()
    }

    /// The assignment with RUs of zero fronthaul capacity removed, since
    /// they cannot receive any data stream.
    pub fn restricted_to_active(&self, config: &SystemConfig) -> ClusterAssignment {
        let active = |i: usize| config.fronthaul_capacity[i] > 0.0;
        ClusterAssignment {
            served_mss: (0..self.num_rus())
                .map(|i| if active(i) { self.served_mss[i].clone() } else { Vec::new() })
                .collect(),
            serving_rus: self
                .serving_rus
                .iter()
                .map(|b| b.iter().copied().filter(|&i| active(i)).collect())
                .collect(),
            cluster_size: self.cluster_size,
        }
    }

    fn check(&self, config: &SystemConfig) -> Result<()> {
        if self.num_rus() != config.num_rus || self.num_mss() != config.num_mss {
            return Err(Error::DimensionMismatch("cluster assignment does not match the configuration".into()));
        }
        for (i, m) in self.served_mss.iter().enumerate() {
            for &j in m {
                if j >= self.num_mss() || !self.serving_rus[j].contains(&i) {
                    return Err(Error::InvalidArgument(format!("RU {i} and MS {j} disagree on the cluster")));
                }
            }
        }
        for (j, b) in self.serving_rus.iter().enumerate() {
            for &i in b {
                if i >= self.num_rus() || !self.served_mss[i].contains(&j) {
                    return Err(Error::InvalidArgument(format!("RU {i} and MS {j} disagree on the cluster")));
                }
            }
        }
        Ok(())
    }
}

/// Clustering by the instantaneous Frobenius norms `||H_ji||_F`.
pub fn assign_clusters_instantaneous(h: &ChannelRealization, cluster_size: usize) -> Result<ClusterAssignment> {
    let scores: Vec<Vec<f64>> = (0..h.num_mss())
        .map(|j| (0..h.num_rus()).map(|i| linalg::frobenius_sq(&h.block(j, i))).collect())
        .collect();
    ClusterAssignment::from_scores(&scores, h.num_rus(), cluster_size)
}

/// Clustering by the average gains `E ||H_ji||_F^2 = N_{r,j} tr(Sigma_T,ji)`,
/// fixed for the whole coding block.
pub fn assign_clusters_stochastic<M: ChannelModel>(model: &M, cluster_size: usize) -> Result<ClusterAssignment> {
    let num_rus = model.tx_antennas().len();
    let num_mss = model.rx_antennas().len();
    let scores: Vec<Vec<f64>> = (0..num_mss)
        .map(|j| (0..num_rus).map(|i| model.mean_link_gain(j, i)).collect())
        .collect();
    ClusterAssignment::from_scores(&scores, num_rus, cluster_size)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CbpSolution {
    /// Per-MS covariances on the antennas of the serving RUs.
    pub covariance: PrecoderCovariance,
    /// Data rates carried on the fronthaul, bits per channel use.
    pub rates: Vec<f64>,
    /// Precoder quantization variances (instantaneous-CSI design only).
    pub quantization: Option<QuantizationProfile>,
    pub trace: Vec<IterationRecord>,
    pub sample_count: usize,
}

impl CbpSolution {
    pub fn surrogate_objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.surrogate_objective).collect()
    }
}

/// Fronthaul slack `C̄_i - sum_{j in M_i} R_j - C_i / T` (the last term only
/// with quantized precoders) and power slack of every RU.
pub fn cbp_slacks(
    config: &SystemConfig,
    clusters: &ClusterAssignment,
    covariance: &PrecoderCovariance,
    rates: &[f64],
    quantization: Option<&QuantizationProfile>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tx = &config.tx_antennas_per_ru;
    let noiseless = QuantizationProfile::noiseless(config.num_rus);
    let q = quantization.unwrap_or(&noiseless);
    let mut fronthaul = Vec::with_capacity(config.num_rus);
    let mut power = Vec::with_capacity(config.num_rus);
    for i in 0..config.num_rus {
        let mut load: f64 = clusters.served_mss[i].iter().map(|&j| rates[j]).sum();
        if quantization.is_some() {
            load += signal::cbp_precoder_fronthaul_rate(covariance, q, i, tx, config.coherence_length)?;
        }
        fronthaul.push(config.fronthaul_capacity[i] - load);
        power.push(config.power_budget[i] - signal::transmit_power(covariance, q, i, tx));
    }
    Ok((fronthaul, power))
}

/// Starting covariances: RU `i` spreads `0.9 P̄_i` evenly over its antennas
/// and the MSs it serves. With quantized precoders the variance is set by
/// bisection so that the precoder rate `C_i / T` uses 10% of `C̄_i`.
fn init_cbp(config: &SystemConfig, clusters: &ClusterAssignment, quantized: bool) -> Result<(Vec<CMat>, Vec<f64>)> {
    let total = config.total_tx();
    let mut sigma = vec![if quantized { QUANTIZATION_FLOOR } else { 0.0 }; config.num_rus];
    let mut beta = vec![0.0; config.num_rus];
    for i in 0..config.num_rus {
        let served = clusters.served_mss[i].len();
        if served == 0 {
            continue;
        }
        let n = config.tx_antennas_per_ru[i];
        let s = 0.9 * config.power_budget[i] / n as f64;
        if s <= QUANTIZATION_FLOOR {
            return Err(Error::InvalidConfig(format!(
                "RU {i}: power budget {} leaves no room above the quantization floor",
                config.power_budget[i]
            )));
        }
        if quantized {
            let target = 0.1 * config.fronthaul_capacity[i] * config.coherence_length as f64;
            sigma[i] = bisect_variance(n, s, target);
        }
        beta[i] = (s - sigma[i]) / served as f64;
    }
    let embedded = (0..config.num_mss)
        .map(|j| {
            let mut v = linalg::zeros(total, total);
            for &i in &clusters.serving_rus[j] {
                let off = config.tx_offset(i);
                for a in off..off + config.tx_antennas_per_ru[i] {
                    v[(a, a)] = linalg::c(beta[i], 0.0);
                }
            }
            v
        })
        .collect();
    Ok((embedded, sigma))
}

struct CbpProblem<'a> {
    config: &'a SystemConfig,
    clusters: ClusterAssignment,
    embeddings: Vec<Option<CMat>>,
    full_embeddings: Vec<CMat>,
}

impl<'a> CbpProblem<'a> {
    fn new(config: &'a SystemConfig, clusters: &ClusterAssignment) -> Result<Self> {
        config.validate()?;
        clusters.check(config)?;
        let clusters = clusters.restricted_to_active(config);
        let full_embeddings = clusters.embeddings(config);
        let embeddings = full_embeddings
            .iter()
            .map(|e| (e.ncols() > 0).then(|| e.clone()))
            .collect();
        Ok(CbpProblem {
            config,
            clusters,
            embeddings,
            full_embeddings,
        })
    }

    fn any_served(&self) -> bool {
        self.embeddings.iter().any(Option::is_some)
    }

    fn covariance(&self, embedded: &[CMat]) -> PrecoderCovariance {
        let blocks = embedded
            .iter()
            .zip(&self.full_embeddings)
            .map(|(v, e)| linalg::hermitian_part(&(e.adjoint() * v * e)))
            .collect();
        PrecoderCovariance::cbp(blocks, self.full_embeddings.clone()).expect("shapes agree")
    }

    fn objective(&self, b: &mut Builder) {
        for (j, r) in b.rates.clone().into_iter().enumerate() {
            if let Some(r) = r {
                b.program.objective.affine.add_scalar(r, self.config.rate_weights[j]);
            }
        }
    }

    fn power_constraints(&self, b: &mut Builder) {
        for i in 0..self.config.num_rus {
            if self.clusters.served_mss[i].is_empty() {
                continue;
            }
            let (affine, fixed) = b.power(i);
            b.program.add_constraint(
                ConvexExpr {
                    affine,
                    neg_log_dets: vec![],
                },
                self.config.power_budget[i] - fixed,
                format!("power{i}"),
            );
        }
    }

    fn rate_sum(&self, b: &Builder, i: usize) -> Affine {
        let mut a = Affine::default();
        for &j in &self.clusters.served_mss[i] {
            if let Some(r) = b.rates[j] {
                a.add_scalar(r, 1.0);
            }
        }
        a
    }

    fn record(
        &self,
        outer: usize,
        inner: usize,
        surrogate: f64,
        objective: f64,
        embedded: &[CMat],
        rates: &[f64],
        q: Option<&QuantizationProfile>,
    ) -> Result<IterationRecord> {
        let (fronthaul_slack, power_slack) = cbp_slacks(self.config, &self.clusters, &self.covariance(embedded), rates, q)?;
        Ok(IterationRecord {
            outer,
            inner,
            surrogate_objective: surrogate,
            objective,
            fronthaul_slack,
            power_slack,
        })
    }

    fn weighted(&self, rates: &[f64]) -> f64 {
        rates.iter().zip(&self.config.rate_weights).map(|(r, w)| r * w).sum()
    }
}

/// Stochastic-CSI design: the precoders reach the RUs without quantization
/// noise and the fronthaul carries only the data streams. Outer iteration
/// `n` draws `H^(n)` and solves one convex problem in the covariances and
/// rates, with each rate bounded by the running average of the rate
/// surrogates.
pub fn optimize_cbp_stochastic<M: ChannelModel>(
    config: &SystemConfig,
    model: &M,
    clusters: &ClusterAssignment,
    options: &SsumOptions,
) -> Result<CbpSolution> {
    options.validate()?;
    if model.tx_antennas() != config.tx_antennas_per_ru.as_slice() || model.rx_antennas() != config.rx_antennas_per_ms {
        return Err(Error::DimensionMismatch("channel model does not match the configuration".into()));
    }
    let problem = CbpProblem::new(config, clusters)?;
    let (mut embedded, _) = init_cbp(config, &problem.clusters, false)?;
    let mut rates = vec![0.0; config.num_mss];
    let mut trace = vec![problem.record(0, 0, 0.0, 0.0, &embedded, &rates, None)?];
    if !problem.any_served() {
        return Ok(CbpSolution {
            covariance: problem.covariance(&embedded),
            rates,
            quantization: None,
            trace,
            sample_count: options.outer_iterations,
        });
    }
    let zeros = vec![0.0; config.num_rus];
    let pinned = vec![Some(0.0); config.num_rus];
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut draws: Vec<(ChannelRealization, Vec<CMat>)> = Vec::with_capacity(options.outer_iterations);
    let mut warm = None;
    let noiseless = QuantizationProfile::noiseless(config.num_rus);

    for n in 1..=options.outer_iterations {
        let h = model.draw(&mut rng);
        draws.push((h, embedded.clone()));
        let scale = 1.0 / n as f64;
        let mut b = Builder::new(&config.tx_antennas_per_ru, &problem.embeddings, &pinned, 0.0, true);
        problem.objective(&mut b);
        for j in 0..config.num_mss {
            let Some(r) = b.rates[j] else { continue };
            let mut lhs = ConvexExpr::default();
            lhs.affine.add_scalar(r, 1.0);
            for (h_l, v_l) in &draws {
                let (affine, atom) = b.rate_surrogate(h_l, v_l, &zeros, j, scale)?;
                lhs.affine.extend(affine.scaled(-1.0));
                lhs.neg_log_dets.extend(atom);
            }
            b.program.add_constraint(lhs, 0.0, format!("rate{j}"));
        }
        for i in 0..config.num_rus {
            if !problem.clusters.served_mss[i].is_empty() {
                let lhs = ConvexExpr {
                    affine: problem.rate_sum(&b, i),
                    neg_log_dets: vec![],
                };
                b.program.add_constraint(lhs, config.fronthaul_capacity[i], format!("fronthaul{i}"));
            }
        }
        problem.power_constraints(&mut b);
        let start = warm.take().unwrap_or_else(|| b.warm_point(&embedded, &zeros, &rates));
        let sol = solve_step(&b, &start, &options.solver, || format!("CBP SSUM outer {n}"))?;
        let ext = b.extract(&sol);
        embedded = ext.embedded;
        rates = ext.rates;
        let cov = problem.covariance(&embedded);
        let delivered: Vec<f64> = (0..config.num_mss)
            .map(|j| {
                let mean = draws
                    .iter()
                    .map(|(h_l, _)| signal::cbp_user_rate(h_l, &cov, &noiseless, j))
                    .sum::<f64>()
                    * scale;
                rates[j].min(mean)
            })
            .collect();
        trace.push(problem.record(n, 1, sol.objective_value, problem.weighted(&delivered), &embedded, &rates, None)?);
        warm = Some(sol);
    }
    Ok(CbpSolution {
        covariance: problem.covariance(&embedded),
        rates,
        quantization: None,
        trace,
        sample_count: options.outer_iterations,
    })
}

/// Instantaneous-CSI design for one block: MM over covariances, precoder
/// quantization variances and rates, with each rate bounded by its
/// surrogate and each RU's fronthaul shared between the data streams and the
/// quantized precoder amortized over `coherence` channel uses.
pub fn optimize_cbp_perfect(
    config: &SystemConfig,
    h: &ChannelRealization,
    clusters: &ClusterAssignment,
    coherence: u64,
    options: &SsumOptions,
) -> Result<CbpSolution> {
    optimize_cbp_perfect_with(config, h, clusters, coherence, options, None)
}

/// [`optimize_cbp_perfect`] with the option of pinning every precoder
/// quantization variance.
pub fn optimize_cbp_perfect_with(
    config: &SystemConfig,
    h: &ChannelRealization,
    clusters: &ClusterAssignment,
    coherence: u64,
    options: &SsumOptions,
    pinned_variance: Option<f64>,
) -> Result<CbpSolution> {
    options.validate()?;
    if coherence == 0 {
        return Err(Error::InvalidArgument("coherence length must be at least 1".into()));
    }
    if let Some(v) = pinned_variance {
        if !(v >= QUANTIZATION_FLOOR && v.is_finite()) {
            return Err(Error::BelowFloor {
                value: v,
                floor: QUANTIZATION_FLOOR,
            });
        }
    }
    let mut cfg = config.clone();
    cfg.coherence_length = coherence;
    let config = &cfg;
    check_channel(config, h)?;
    let problem = CbpProblem::new(config, clusters)?;
    let (mut embedded, mut sigma) = init_cbp(config, &problem.clusters, true)?;
    let sigma_spec: Vec<Option<f64>> = (0..config.num_rus)
        .map(|i| {
            if problem.clusters.served_mss[i].is_empty() {
                Some(QUANTIZATION_FLOOR)
            } else {
                pinned_variance
            }
        })
        .collect();
    for (s, spec) in sigma.iter_mut().zip(&sigma_spec) {
        if let Some(v) = spec {
            *s = *v;
        }
    }
    let profile = |sigma: &[f64]| QuantizationProfile {
        variances: sigma.to_vec(),
        floor: QUANTIZATION_FLOOR,
    };
    let mut rates = vec![0.0; config.num_mss];
    let mut objective = 0.0;
    let mut trace = vec![problem.record(0, 0, 0.0, 0.0, &embedded, &rates, Some(&profile(&sigma)))?];
    if !problem.any_served() {
        return Ok(CbpSolution {
            covariance: problem.covariance(&embedded),
            rates,
            quantization: Some(profile(&sigma)),
            trace,
            sample_count: 1,
        });
    }
    let inv_t = 1.0 / coherence as f64;
    let mut warm = None;
    for r in 1..=options.inner_max {
        let mut b = Builder::new(&config.tx_antennas_per_ru, &problem.embeddings, &sigma_spec, QUANTIZATION_FLOOR, true);
        problem.objective(&mut b);
        for j in 0..config.num_mss {
            let Some(rv) = b.rates[j] else { continue };
            let (affine, atom) = b.rate_surrogate(h, &embedded, &sigma, j, 1.0)?;
            let mut lhs = ConvexExpr {
                affine: affine.scaled(-1.0),
                neg_log_dets: atom.into_iter().collect(),
            };
            lhs.affine.add_scalar(rv, 1.0);
            b.program.add_constraint(lhs, 0.0, format!("rate{j}"));
        }
        let total = embedded.iter().skip(1).fold(embedded[0].clone(), |acc, m| acc + m);
        for i in 0..config.num_rus {
            if problem.clusters.served_mss[i].is_empty() {
                continue;
            }
            let mut lhs = b.fronthaul_surrogate(&total, sigma[i], i, inv_t)?;
            lhs.affine.extend(problem.rate_sum(&b, i));
            b.program.add_constraint(lhs, config.fronthaul_capacity[i], format!("fronthaul{i}"));
        }
        problem.power_constraints(&mut b);
        let start = warm.take().unwrap_or_else(|| b.warm_point(&embedded, &sigma, &rates));
        let sol = solve_step(&b, &start, &options.solver, || format!("CBP MM iteration {r}"))?;
        let ext = b.extract(&sol);
        let value = problem.weighted(&ext.rates);
        if !(value > objective) {
            break;
        }
        let change = relative_change(value, objective);
        embedded = ext.embedded;
        sigma = ext.sigma;
        rates = ext.rates;
        objective = value;
        trace.push(problem.record(0, r, sol.objective_value, value, &embedded, &rates, Some(&profile(&sigma)))?);
        warm = Some(sol);
        if r >= 2 && change < options.inner_tolerance {
            break;
        }
    }
    Ok(CbpSolution {
        covariance: problem.covariance(&embedded),
        rates,
        quantization: Some(profile(&sigma)),
        trace,
        sample_count: 1,
    })
}
