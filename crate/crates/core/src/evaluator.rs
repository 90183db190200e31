//! Rank reduction from covariances to precoders and Monte Carlo estimates of
//! the ergodic weighted sum-rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cap::{optimize_cap_perfect, CapSolution, SsumOptions};
use crate::cbp::{assign_clusters_instantaneous, optimize_cbp_perfect, CbpSolution};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{ChannelModel, ChannelRealization};
use crate::linalg::{self, CMat};
use crate::signal::{self, PrecoderCovariance, QuantizationProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Cap,
    Cbp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Csi {
    Perfect,
    Stochastic,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Cap => "cap",
            Scheme::Cbp => "cbp",
        })
    }
}

impl std::fmt::Display for Csi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Csi::Perfect => "perfect",
            Csi::Stochastic => "stochastic",
        })
    }
}

/// Per-MS precoders `W_j`, already multiplied by the common scale `gamma`.
/// With CBP the matrices live on the serving antennas and `embeddings`
/// places them in the full transmit dimension.
#[derive(Debug, Clone)]
pub struct Precoder {
    pub matrices: Vec<CMat>,
    pub embeddings: Option<Vec<CMat>>,
    pub gamma: f64,
    /// Set when the covariances were all zero and `gamma` is undefined.
    pub zero: bool,
}

impl Precoder {
    /// `W_j W_j^H` in the same form as the covariances it came from.
    pub fn covariance(&self) -> PrecoderCovariance {
        let blocks = self.matrices.iter().map(|w| linalg::hermitian_part(&(w * w.adjoint()))).collect();
        match &self.embeddings {
            None => PrecoderCovariance::cap(blocks),
            Some(e) => PrecoderCovariance::cbp(blocks, e.clone()).expect("shapes agree"),
        }
    }

    /// `W_j` on the full transmit dimension.
    pub fn embedded(&self, j: usize) -> CMat {
        match &self.embeddings {
            None => self.matrices[j].clone(),
            Some(e) => &e[j] * &self.matrices[j],
        }
    }
}

fn quantized_rate(v: &PrecoderCovariance, q: &QuantizationProfile, i: usize, tx: &[usize]) -> f64 {
    if q.variances[i] > 0.0 {
        signal::cap_fronthaul_rate(v, q, i, tx).unwrap_or(f64::INFINITY)
    } else {
        0.0
    }
}

/// Keeps the `M_j` dominant eigenmodes of each covariance and applies one
/// common scale so that the most loaded RU meets its power budget. When the
/// scale exceeds one it is reduced until no RU's quantization rate rises
/// above its value at the original covariances.
pub fn rank_reduce(v: &PrecoderCovariance, q: &QuantizationProfile, config: &SystemConfig) -> Result<Precoder> {
    if v.num_mss() != config.num_mss || q.variances.len() != config.num_rus {
        return Err(Error::DimensionMismatch("covariances do not match the configuration".into()));
    }
    let tx = &config.tx_antennas_per_ru;
    let matrices: Vec<CMat> = v
        .blocks
        .iter()
        .zip(&config.streams_per_ms)
        .map(|(block, &m)| {
            let (vals, vecs) = linalg::hermitian_eigen(block);
            let m = m.min(vals.len());
            let mut w = linalg::zeros(block.nrows(), m);
            for k in 0..m {
                let s = vals[k].max(0.0).sqrt();
                for r in 0..block.nrows() {
                    w[(r, k)] = vecs[(r, k)] * s;
                }
            }
            w
        })
        .collect();
    let mut pre = Precoder {
        matrices,
        embeddings: v.embeddings.clone(),
        gamma: 1.0,
        zero: false,
    };
    let reduced = pre.covariance();
    let noiseless = QuantizationProfile::noiseless(config.num_rus);
    let mut gamma = f64::INFINITY;
    for i in 0..config.num_rus {
        let signal = signal::transmit_power(&reduced, &noiseless, i, tx);
        if signal > 0.0 {
            let room = (config.power_budget[i] - tx[i] as f64 * q.variances[i]).max(0.0);
            gamma = gamma.min((room / signal).sqrt());
        }
    }
    if !gamma.is_finite() || gamma == 0.0 {
        for w in &mut pre.matrices {
            w.fill(linalg::c(0.0, 0.0));
        }
        pre.gamma = 0.0;
        pre.zero = true;
        return Ok(pre);
    }
    if gamma > 1.0 {
        let limits: Vec<f64> = (0..config.num_rus).map(|i| quantized_rate(v, q, i, tx)).collect();
        let fits = |g: f64| {
            let scaled = PrecoderCovariance {
                blocks: reduced.blocks.iter().map(|b| b * linalg::c(g * g, 0.0)).collect(),
                embeddings: reduced.embeddings.clone(),
            };
            (0..config.num_rus).all(|i| quantized_rate(&scaled, q, i, tx) <= limits[i] + 1e-9)
        };
        if !fits(gamma) {
            let (mut lo, mut hi) = (1.0, gamma);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if fits(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            gamma = lo;
        }
    }
    for w in &mut pre.matrices {
        *w *= linalg::c(gamma, 0.0);
    }
    pre.gamma = gamma;
    Ok(pre)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicEstimate {
    /// Weighted sum-rate, bits per channel use.
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Mean rate of each MS (delivered rate for CBP).
    pub per_ms: Vec<f64>,
    /// Stream rates committed by a stochastic CBP design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committed: Option<Vec<f64>>,
}

impl ErgodicEstimate {
    fn from_samples(values: &[f64], per_ms: Vec<f64>, committed: Option<Vec<f64>>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        ErgodicEstimate {
            mean: mean.max(0.0),
            std_error: (var / n).sqrt(),
            samples: values.len(),
            per_ms,
            committed,
        }
    }
}

/// What gets evaluated: a fixed stochastic-CSI design, or a per-block
/// optimizer rerun on every instantaneous channel.
#[derive(Debug, Clone, Copy)]
pub enum Design<'a> {
    CapStochastic(&'a CapSolution),
    CbpStochastic(&'a CbpSolution),
    CapPerfect(&'a SsumOptions),
    CbpPerfect { cluster_size: usize, options: &'a SsumOptions },
}

impl Design<'_> {
    pub fn scheme(&self) -> Scheme {
        match self {
            Design::CapStochastic(_) | Design::CapPerfect(_) => Scheme::Cap,
            Design::CbpStochastic(_) | Design::CbpPerfect { .. } => Scheme::Cbp,
        }
    }

    pub fn csi(&self) -> Csi {
        match self {
            Design::CapStochastic(_) | Design::CbpStochastic(_) => Csi::Stochastic,
            Design::CapPerfect(_) | Design::CbpPerfect { .. } => Csi::Perfect,
        }
    }
}

/// Channel draw `k` of an evaluation run; every sample has its own stream so
/// the draws do not depend on how the work is split.
pub fn evaluation_channel<M: ChannelModel>(model: &M, seed: u64, k: usize) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    model.draw(&mut rng)
}

fn user_rates(h: &ChannelRealization, pre: &Precoder, q: &QuantizationProfile, num_mss: usize) -> Vec<f64> {
    let cov = pre.covariance();
    (0..num_mss).map(|j| signal::cap_user_rate(h, &cov, q, j)).collect()
}

fn weighted(config: &SystemConfig, rates: &[f64]) -> f64 {
    rates.iter().zip(&config.rate_weights).map(|(r, w)| r * w).sum()
}

/// Monte Carlo estimate of the ergodic weighted sum-rate over `samples`
/// channel draws seeded by `seed` (use a seed different from the one that
/// trained a stochastic design).
///
/// Stochastic designs are rank-reduced once and held fixed. Perfect-CSI
/// designs are re-optimized on every draw (CBP clusters recomputed from the
/// draw) and the rank-reduced result is evaluated on that draw. CBP rates
/// are delivered as `min(R_j, achievable)`, per draw with perfect CSI and
/// against the ergodic achievable rate with stochastic CSI.
pub fn ergodic_sum_rate<M: ChannelModel>(
    config: &SystemConfig,
    design: Design<'_>,
    model: &M,
    samples: usize,
    seed: u64,
) -> Result<ErgodicEstimate> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {samples}")));
    }
    config.validate()?;
    let nm = config.num_mss;
    let per_sample: Vec<Vec<f64>> = match design {
        Design::CapStochastic(sol) => {
            let pre = rank_reduce(&sol.covariance, &sol.quantization, config)?;
            (0..samples)
                .into_par_iter()
                .map(|k| user_rates(&evaluation_channel(model, seed, k), &pre, &sol.quantization, nm))
                .collect()
        }
        Design::CbpStochastic(sol) => {
            let noiseless = QuantizationProfile::noiseless(config.num_rus);
            let q = sol.quantization.as_ref().unwrap_or(&noiseless);
            let pre = rank_reduce(&sol.covariance, q, config)?;
            let rates: Vec<Vec<f64>> = (0..samples)
                .into_par_iter()
                .map(|k| user_rates(&evaluation_channel(model, seed, k), &pre, q, nm))
                .collect();
            return Ok(delivered_stochastic(config, &rates, &sol.rates));
        }
        Design::CapPerfect(options) => (0..samples)
            .into_par_iter()
            .map(|k| {
                let h = evaluation_channel(model, seed, k);
                let sol = optimize_cap_perfect(config, &h, options).map_err(|e| e.in_context(format!("evaluation draw {k}")))?;
                let pre = rank_reduce(&sol.covariance, &sol.quantization, config)?;
                Ok(user_rates(&h, &pre, &sol.quantization, nm))
            })
            .collect::<Result<_>>()?,
        Design::CbpPerfect { cluster_size, options } => (0..samples)
            .into_par_iter()
            .map(|k| {
                let h = evaluation_channel(model, seed, k);
                let clusters = assign_clusters_instantaneous(&h, cluster_size)?;
                let sol = optimize_cbp_perfect(config, &h, &clusters, config.coherence_length, options)
                    .map_err(|e| e.in_context(format!("evaluation draw {k}")))?;
                let q = sol.quantization.clone().expect("quantized design");
                let pre = rank_reduce(&sol.covariance, &q, config)?;
                let achievable = user_rates(&h, &pre, &q, nm);
                Ok(achievable.iter().zip(&sol.rates).map(|(a, r)| a.min(*r).max(0.0)).collect())
            })
            .collect::<Result<_>>()?,
    };
    let values: Vec<f64> = per_sample.iter().map(|r| weighted(config, r)).collect();
    let per_ms = (0..nm)
        .map(|j| per_sample.iter().map(|r| r[j]).sum::<f64>() / samples as f64)
        .collect();
    Ok(ErgodicEstimate::from_samples(&values, per_ms, None))
}

/// Delivered rates `min(R_j, mean achievable)`. MSs limited by their
/// achievable rate contribute their per-draw rates to the sample values, the
/// others the constant `R_j`.
fn delivered_stochastic(config: &SystemConfig, rates: &[Vec<f64>], committed: &[f64]) -> ErgodicEstimate {
    let n = rates.len() as f64;
    let means: Vec<f64> = (0..config.num_mss)
        .map(|j| rates.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let limited: Vec<bool> = means.iter().zip(committed).map(|(m, r)| m < r).collect();
    let values: Vec<f64> = rates
        .iter()
        .map(|r| {
            (0..config.num_mss)
                .map(|j| config.rate_weights[j] * if limited[j] { r[j] } else { committed[j] })
                .sum()
        })
        .collect();
    let per_ms = means.iter().zip(committed).map(|(m, r)| m.min(*r)).collect();
    ErgodicEstimate::from_samples(&values, per_ms, Some(committed.to_vec()))
}
