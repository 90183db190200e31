//! Network layout, one-ring spatial correlation and Kronecker channel draws.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::serial::cmat_serde;

/// Number of Gauss-Legendre nodes used for every one-ring integral.
pub const ONE_RING_QUADRATURE_NODES: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub ru_positions: Vec<[f64; 2]>,
    pub ms_positions: Vec<[f64; 2]>,
}

impl NetworkGeometry {
    pub fn distance(&self, ms: usize, ru: usize) -> f64 {
        let [xr, yr] = self.ru_positions[ru];
        let [xm, ym] = self.ms_positions[ms];
        (xm - xr).hypot(ym - yr)
    }

    /// Angle of the RU -> MS displacement measured from the x-axis.
    pub fn bearing(&self, ms: usize, ru: usize) -> f64 {
        let [xr, yr] = self.ru_positions[ru];
        let [xm, ym] = self.ms_positions[ms];
        (ym - yr).atan2(xm - xr)
    }
}

/// Drops RUs and MSs i.i.d. uniformly on `[0, area_side]^2`.
pub fn place_nodes(config: &SystemConfig, seed: u64) -> NetworkGeometry {
    let side = config.area_side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
            .collect()
    };
    let ru_positions = draw(config.num_rus);
    let ms_positions = draw(config.num_mss);
    NetworkGeometry {
        ru_positions,
        ms_positions,
    }
}

/// `1 / (1 + (d / d0)^eta)`.
pub fn path_loss(d: f64, d0: f64, eta: f64) -> Result<f64> {
    if !(d0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reference distance must be positive, got {d0}"
        )));
    }
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be nonnegative, got {d}"
        )));
    }
    Ok(1.0 / (1.0 + (d / d0).powf(eta)))
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn quadrature_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(ONE_RING_QUADRATURE_NODES))
}

/// Transmit correlation of a half-wavelength ULA under the one-ring model:
/// entry `(m, n)` is `alpha / (2 delta)` times the integral of
/// `exp(-i pi (m - n) sin(phi))` over `[theta - delta, theta + delta]`.
pub fn one_ring_covariance(theta: f64, delta: f64, alpha: f64, n_ant: usize) -> Result<CMat> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "angular spread must be positive, got {delta}"
        )));
    }
    if n_ant == 0 {
        return Err(Error::InvalidArgument("antenna count must be positive".into()));
    }
    let (nodes, weights) = quadrature_rule();
    // Toeplitz: only the lag m - n matters
    let lag_value = |lag: usize| -> num_complex::Complex64 {
        if lag == 0 {
            return c(alpha, 0.0);
        }
        let k = PI * lag as f64;
        let mut acc = c(0.0, 0.0);
        for (x, w) in nodes.iter().zip(weights) {
            let phase = -k * (theta + delta * x).sin();
            acc += c(phase.cos(), phase.sin()) * *w;
        }
        acc * (0.5 * alpha)
    };
    let lags: Vec<_> = (0..n_ant).map(lag_value).collect();
    let mut sigma = CMat::from_fn(n_ant, n_ant, |m, n| {
        if m >= n {
            lags[m - n]
        } else {
            lags[n - m].conj()
        }
    });
    sigma = linalg::hermitian_part(&sigma);
    if n_ant > 1 && linalg::min_eigenvalue(&sigma) < 0.0 {
        sigma = linalg::psd_clamp(&sigma);
    }
    Ok(sigma)
}

/// Second-order description of the link from RU `i` to MS `j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkStatistics {
    #[serde(with = "cmat_serde")]
    pub tx_correlation: CMat,
    #[serde(with = "cmat_serde")]
    pub rx_correlation: CMat,
    pub pathloss: f64,
    pub aoa: f64,
    pub spread: f64,
}

/// The CU's stochastic CSI: Kronecker correlation for every (MS, RU) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelStatistics {
    pub tx_antennas: Vec<usize>,
    pub rx_antennas: Vec<usize>,
    /// Row-major over (MS, RU): entry `j * num_rus + i`.
    pub links: Vec<LinkStatistics>,
    #[serde(skip)]
    factors: OnceLock<Vec<(CMat, CMat)>>,
}

impl ChannelStatistics {
    pub fn new(tx_antennas: Vec<usize>, rx_antennas: Vec<usize>, links: Vec<LinkStatistics>) -> Result<Self> {
        let stats = ChannelStatistics {
            tx_antennas,
            rx_antennas,
            links,
            factors: OnceLock::new(),
        };
        stats.check()?;
        Ok(stats)
    }

    fn check(&self) -> Result<()> {
        if self.links.len() != self.num_rus() * self.num_mss() {
            return Err(Error::DimensionMismatch(format!(
                "{} links for {} MSs x {} RUs",
                self.links.len(),
                self.num_mss(),
                self.num_rus()
            )));
        }
        for j in 0..self.num_mss() {
            for i in 0..self.num_rus() {
                let l = self.link(j, i);
                let (nt, nr) = (self.tx_antennas[i], self.rx_antennas[j]);
                if l.tx_correlation.shape() != (nt, nt) || l.rx_correlation.shape() != (nr, nr) {
                    return Err(Error::DimensionMismatch(format!("link ({j}, {i}) correlation shapes")));
                }
            }
        }
        Ok(())
    }

    pub fn num_rus(&self) -> usize {
        self.tx_antennas.len()
    }

    pub fn num_mss(&self) -> usize {
        self.rx_antennas.len()
    }

    pub fn link(&self, ms: usize, ru: usize) -> &LinkStatistics {
        &self.links[ms * self.num_rus() + ru]
    }

    /// `E ||H_ji||_F^2 = tr(Sigma_R) tr(Sigma_T)`; equals `N_r tr(Sigma_T)`
    /// for uncorrelated receive antennas.
    pub fn mean_link_gain(&self, ms: usize, ru: usize) -> f64 {
        let l = self.link(ms, ru);
        linalg::real_trace(&l.rx_correlation) * linalg::real_trace(&l.tx_correlation)
    }

    fn factors(&self) -> &[(CMat, CMat)] {
        self.factors.get_or_init(|| {
            self.links
                .iter()
                .map(|l| (linalg::psd_sqrt(&l.rx_correlation), linalg::psd_sqrt(&l.tx_correlation)))
                .collect()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stats: ChannelStatistics = serde_json::from_str(text)?;
        stats.check()?;
        Ok(stats)
    }
}

/// Distances, path losses, bearings and one-ring correlations for every
/// (MS, RU) pair of a layout.
pub fn build_statistics(geometry: &NetworkGeometry, config: &SystemConfig) -> Result<ChannelStatistics> {
    config.validate()?;
    if geometry.ru_positions.len() != config.num_rus || geometry.ms_positions.len() != config.num_mss {
        return Err(Error::DimensionMismatch("geometry does not match configuration".into()));
    }
    let mut links = Vec::with_capacity(config.num_rus * config.num_mss);
    for j in 0..config.num_mss {
        for i in 0..config.num_rus {
            let d = geometry.distance(j, i);
            let pathloss = path_loss(d, config.ref_distance, config.pathloss_exponent)?;
            let spread = if d > 0.0 {
                (config.scattering_radius / d).atan()
            } else {
                FRAC_PI_2
            };
            let aoa = geometry.bearing(j, i);
            let nt = config.tx_antennas_per_ru[i];
            let nr = config.rx_antennas_per_ms[j];
            links.push(LinkStatistics {
                tx_correlation: one_ring_covariance(aoa, spread, pathloss, nt)?,
                rx_correlation: linalg::identity(nr),
                pathloss,
                aoa,
                spread,
            });
        }
    }
    ChannelStatistics::new(config.tx_antennas_per_ru.clone(), config.rx_antennas_per_ms.clone(), links)
}

/// Channel matrices of one coherence block, stored per MS as the stacked
/// `H_j = [H_j1, .., H_jNR]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub tx_antennas: Vec<usize>,
    #[serde(with = "cmat_serde::vec")]
    pub per_ms: Vec<CMat>,
}

impl ChannelRealization {
    pub fn new(tx_antennas: Vec<usize>, per_ms: Vec<CMat>) -> Result<Self> {
        let nt: usize = tx_antennas.iter().sum();
        if per_ms.iter().any(|h| h.ncols() != nt) {
            return Err(Error::DimensionMismatch(format!("every H_j must have {nt} columns")));
        }
        Ok(ChannelRealization { tx_antennas, per_ms })
    }

    /// Assembles a realization from the per-link blocks `blocks[j][i] = H_ji`.
    pub fn from_blocks(blocks: Vec<Vec<CMat>>) -> Result<Self> {
        let tx_antennas: Vec<usize> = blocks
            .first()
            .map(|row| row.iter().map(|b| b.ncols()).collect())
            .unwrap_or_default();
        let mut per_ms = Vec::with_capacity(blocks.len());
        for row in &blocks {
            let nr = row.first().map(|b| b.nrows()).unwrap_or(0);
            let nt: usize = tx_antennas.iter().sum();
            let mut h = linalg::zeros(nr, nt);
            let mut off = 0;
            for (b, &w) in row.iter().zip(&tx_antennas) {
                if b.shape() != (nr, w) {
                    return Err(Error::DimensionMismatch("inconsistent channel blocks".into()));
                }
                h.view_mut((0, off), (nr, w)).copy_from(b);
                off += w;
            }
            per_ms.push(h);
        }
        ChannelRealization::new(tx_antennas, per_ms)
    }

    pub fn num_rus(&self) -> usize {
        self.tx_antennas.len()
    }

    pub fn num_mss(&self) -> usize {
        self.per_ms.len()
    }

    pub fn total_tx(&self) -> usize {
        self.tx_antennas.iter().sum()
    }

    pub fn total_rx(&self) -> usize {
        self.per_ms.iter().map(|h| h.nrows()).sum()
    }

    pub fn ms(&self, j: usize) -> &CMat {
        &self.per_ms[j]
    }

    pub fn block(&self, ms: usize, ru: usize) -> CMat {
        let off: usize = self.tx_antennas[..ru].iter().sum();
        self.per_ms[ms].columns(off, self.tx_antennas[ru]).into_owned()
    }

    /// Full `N_r x N_t` channel.
    pub fn stacked(&self) -> CMat {
        let nr = self.total_rx();
        let mut h = linalg::zeros(nr, self.total_tx());
        let mut row = 0;
        for hj in &self.per_ms {
            h.rows_mut(row, hj.nrows()).copy_from(hj);
            row += hj.nrows();
        }
        h
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ChannelRealization = serde_json::from_str(text)?;
        ChannelRealization::new(r.tx_antennas, r.per_ms)
    }
}

/// Draws `H_ji = Sigma_R^{1/2} G Sigma_T^{1/2}` for every link, with `G`
/// i.i.d. CN(0, 1).
pub fn sample_channel<R: Rng + ?Sized>(stats: &ChannelStatistics, rng: &mut R) -> ChannelRealization {
    let factors = stats.factors();
    let nt: usize = stats.tx_antennas.iter().sum();
    let per_ms = (0..stats.num_mss())
        .map(|j| {
            let nr = stats.rx_antennas[j];
            let mut h = linalg::zeros(nr, nt);
            let mut off = 0;
            for i in 0..stats.num_rus() {
                let w = stats.tx_antennas[i];
                let (rx_sqrt, tx_sqrt) = &factors[j * stats.num_rus() + i];
                let g = linalg::complex_gaussian(nr, w, rng);
                h.view_mut((0, off), (nr, w)).copy_from(&(rx_sqrt * g * tx_sqrt));
                off += w;
            }
            h
        })
        .collect();
    ChannelRealization {
        tx_antennas: stats.tx_antennas.clone(),
        per_ms,
    }
}

/// Source of channel realizations available to the CU under stochastic CSI.
pub trait ChannelModel: Sync {
    fn tx_antennas(&self) -> &[usize];
    fn rx_antennas(&self) -> Vec<usize>;
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization;
    /// `E ||H_ji||_F^2`.
    fn mean_link_gain(&self, ms: usize, ru: usize) -> f64;
}

impl ChannelModel for ChannelStatistics {
    fn tx_antennas(&self) -> &[usize] {
        &self.tx_antennas
    }

    fn rx_antennas(&self) -> Vec<usize> {
        self.rx_antennas.clone()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        sample_channel(self, rng)
    }

    fn mean_link_gain(&self, ms: usize, ru: usize) -> f64 {
        ChannelStatistics::mean_link_gain(self, ms, ru)
    }
}

/// Degenerate statistics: every draw returns the same realization.
#[derive(Debug, Clone)]
pub struct FixedChannel(pub ChannelRealization);

impl ChannelModel for FixedChannel {
    fn tx_antennas(&self) -> &[usize] {
        &self.0.tx_antennas
    }

    fn rx_antennas(&self) -> Vec<usize> {
        self.0.per_ms.iter().map(|h| h.nrows()).collect()
    }

    fn draw<R: Rng + ?Sized>(&self, _rng: &mut R) -> ChannelRealization {
        self.0.clone()
    }

    fn mean_link_gain(&self, ms: usize, ru: usize) -> f64 {
        linalg::frobenius_sq(&self.0.block(ms, ru))
    }
}
