//! Closed-form rates, fronthaul rates and powers of the CAP and CBP signal
//! chains, with the locally tight convex surrogates used by the MM and SSUM
//! loops. All logarithms are base 2.
//!
//! Under the rank relaxation `W W^H` is replaced by `sum_k V_k`. For CBP the
//! per-MS covariance `Vt_j` lives on the antennas of the serving RUs and is
//! embedded as `E_j Vt_j E_j^H`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelRealization;
use crate::linalg::{self, c, CMat, LN_2};
use crate::serial::cmat_serde;

/// Smallest admissible quantization noise variance.
pub const QUANTIZATION_FLOOR: f64 = 1e-10;

/// Per-MS transmit covariances, optionally restricted to a cluster support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecoderCovariance {
    #[serde(with = "cmat_serde::vec")]
    pub blocks: Vec<CMat>,
    /// CBP embeddings `E_j` (`N_t x N_{t,B_j}`); `None` for CAP, where every
    /// block is already `N_t x N_t`.
    #[serde(with = "option_embeddings", default)]
    pub embeddings: Option<Vec<CMat>>,
}

mod option_embeddings {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(e: &Option<Vec<CMat>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match e {
            Some(v) => cmat_serde::vec::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<CMat>>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "cmat_serde::vec")] Vec<CMat>);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

impl PrecoderCovariance {
    pub fn cap(blocks: Vec<CMat>) -> Self {
        PrecoderCovariance {
            blocks,
            embeddings: None,
        }
    }

    pub fn cbp(blocks: Vec<CMat>, embeddings: Vec<CMat>) -> Result<Self> {
        if blocks.len() != embeddings.len() {
            return Err(Error::DimensionMismatch("one embedding per MS is required".into()));
        }
        for (j, (v, e)) in blocks.iter().zip(&embeddings).enumerate() {
            if v.nrows() != e.ncols() || v.ncols() != e.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "MS {j}: covariance {}x{} vs embedding {}x{}",
                    v.nrows(),
                    v.ncols(),
                    e.nrows(),
                    e.ncols()
                )));
            }
        }
        Ok(PrecoderCovariance {
            blocks,
            embeddings: Some(embeddings),
        })
    }

    pub fn zeros_cap(num_mss: usize, total_tx: usize) -> Self {
        PrecoderCovariance::cap(vec![linalg::zeros(total_tx, total_tx); num_mss])
    }

    pub fn num_mss(&self) -> usize {
        self.blocks.len()
    }

    /// `E_j V_j E_j^H` (or `V_j` for CAP).
    pub fn embedded(&self, j: usize) -> CMat {
        match &self.embeddings {
            None => self.blocks[j].clone(),
            Some(e) => &e[j] * &self.blocks[j] * e[j].adjoint(),
        }
    }

    /// `sum_k E_k V_k E_k^H`.
    pub fn total(&self) -> CMat {
        let mut it = (0..self.num_mss()).map(|j| self.embedded(j));
        let first = it.next().expect("at least one MS");
        it.fold(first, |acc, m| acc + m)
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|z| *z == c(0.0, 0.0)))
    }

    /// Smallest eigenvalue across blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(linalg::min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-RU quantization noise variances (`sigma_x^2` for CAP, `sigma_w^2`
/// for CBP).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationProfile {
    pub variances: Vec<f64>,
    pub floor: f64,
}

impl QuantizationProfile {
    pub fn new(variances: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative quantization floor {floor}")));
        }
        if let Some(&v) = variances.iter().find(|&&v| !(v >= floor)) {
            return Err(Error::BelowFloor { value: v, floor });
        }
        Ok(QuantizationProfile { variances, floor })
    }

    /// All-zero profile with zero floor (noise-free fronthaul).
    pub fn noiseless(num_rus: usize) -> Self {
        QuantizationProfile {
            variances: vec![0.0; num_rus],
            floor: 0.0,
        }
    }

    /// Block-diagonal `Omega = diag(sigma_1^2 I, .., sigma_NR^2 I)`.
    pub fn omega(&self, tx_antennas: &[usize]) -> CMat {
        let diag: Vec<_> = self
            .variances
            .iter()
            .zip(tx_antennas)
            .flat_map(|(&s, &n)| std::iter::repeat_n(c(s, 0.0), n))
            .collect();
        CMat::from_diagonal(&nalgebra::DVector::from_vec(diag))
    }

    fn checked(&self, i: usize) -> Result<f64> {
        let s = self.variances[i];
        if !(s >= self.floor) || !(s > 0.0) {
            return Err(Error::BelowFloor {
                value: s,
                floor: self.floor.max(f64::MIN_POSITIVE),
            });
        }
        Ok(s)
    }
}

/// Row selectors `D_i^r` (`N_t x N_{t,i}`) and column selectors `D_j^c`
/// (`N_r x N_{r,j}`).
#[derive(Debug, Clone)]
pub struct SelectionMatrices {
    pub rows: Vec<CMat>,
    pub cols: Vec<CMat>,
}

impl SelectionMatrices {
    pub fn new(tx_antennas: &[usize], rx_antennas: &[usize]) -> Self {
        let build = |dims: &[usize]| -> Vec<CMat> {
            let total: usize = dims.iter().sum();
            let mut off = 0;
            dims.iter()
                .map(|&n| {
                    let d = linalg::selector(total, off, n);
                    off += n;
                    d
                })
                .collect()
        };
        SelectionMatrices {
            rows: build(tx_antennas),
            cols: build(rx_antennas),
        }
    }
}

/// Snapshot around which the DC surrogates are expanded.
#[derive(Debug, Clone)]
pub struct SurrogateExpansionPoint {
    pub covariance: PrecoderCovariance,
    pub quantization: QuantizationProfile,
    pub channel: ChannelRealization,
}

/// First-order expansion of `log2 det` at `A`, evaluated at `B`:
/// `log2 det A + tr(A^{-1} (B - A)) / ln 2`.
pub fn linearize_logdet(a: &CMat, b: &CMat) -> Result<f64> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("linearize_logdet operands".into()));
    }
    let inv = linalg::inverse_pd(a)?;
    if linalg::min_eigenvalue(a) <= 1e-12 {
        return Err(Error::NotPositiveDefinite("expansion point".into()));
    }
    let diff = b - a;
    Ok(linalg::log2_det_pd(a)? + linalg::trace_of_product(&inv, &diff) / LN_2)
}

fn tx_offset(tx: &[usize], i: usize) -> usize {
    tx[..i].iter().sum()
}

fn ru_block(m: &CMat, tx: &[usize], i: usize) -> CMat {
    let off = tx_offset(tx, i);
    m.view((off, off), (tx[i], tx[i])).into_owned()
}

/// `I + H_j X H_j^H`.
fn i_plus_congruence(h: &CMat, x: &CMat) -> CMat {
    let n = h.nrows();
    linalg::hermitian_part(&(linalg::identity(n) + h * x * h.adjoint()))
}

/// `log2 det(I + H X H^H)` for PSD `X`; the argument is `>= I` so only a
/// non-PSD `X` can make it fail.
fn log2_det_i_plus(h: &CMat, x: &CMat) -> f64 {
    let a = i_plus_congruence(h, x);
    match linalg::log2_det_pd(&a) {
        Ok(v) => v,
        Err(_) => linalg::hermitian_eigen(&a).0.iter().map(|l| l.max(f64::MIN_POSITIVE).log2()).sum(),
    }
}

fn check_user(h: &ChannelRealization, v: &PrecoderCovariance, q: &QuantizationProfile, j: usize) {
    debug_assert!(j < h.num_mss() && v.num_mss() == h.num_mss());
    debug_assert_eq!(q.variances.len(), h.num_rus());
}

/// Achievable rate of MS `j` under CAP:
/// `log2 det(I + H_j (sum_k V_k + Omega) H_j^H) - log2 det(I + H_j (sum_{k != j} V_k + Omega) H_j^H)`.
pub fn cap_user_rate(h: &ChannelRealization, v: &PrecoderCovariance, q: &QuantizationProfile, j: usize) -> f64 {
    check_user(h, v, q, j);
    let omega = q.omega(&h.tx_antennas);
    let total = v.total() + &omega;
    let interference = &total - v.embedded(j);
    let hj = h.ms(j);
    (log2_det_i_plus(hj, &total) - log2_det_i_plus(hj, &interference)).max(0.0)
}

/// CBP counterpart of [`cap_user_rate`] with embedded covariances and the
/// precoder-quantization noise `Omega_w`.
pub fn cbp_user_rate(h: &ChannelRealization, vt: &PrecoderCovariance, q: &QuantizationProfile, j: usize) -> f64 {
    cap_user_rate(h, vt, q, j)
}

pub fn weighted_sum_rate(
    h: &ChannelRealization,
    v: &PrecoderCovariance,
    q: &QuantizationProfile,
    weights: &[f64],
) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(j, &w)| w * cap_user_rate(h, v, q, j))
        .sum()
}

/// Fronthaul rate of RU `i` under CAP:
/// `log2 det(D_i^T (sum_k V_k) D_i + sigma_i^2 I) - N_{t,i} log2 sigma_i^2`.
pub fn cap_fronthaul_rate(v: &PrecoderCovariance, q: &QuantizationProfile, i: usize, tx: &[usize]) -> Result<f64> {
    let s = q.checked(i)?;
    let n = tx[i];
    let block = ru_block(&v.total(), tx, i) + linalg::scaled_identity(n, s);
    Ok(linalg::log2_det_pd(&linalg::hermitian_part(&block))? - n as f64 * s.log2())
}

/// `tr(D_i^T (sum_k V_k) D_i) + N_{t,i} sigma_i^2`.
pub fn transmit_power(v: &PrecoderCovariance, q: &QuantizationProfile, i: usize, tx: &[usize]) -> f64 {
    let total = v.total();
    let off = tx_offset(tx, i);
    let signal: f64 = (off..off + tx[i]).map(|k| total[(k, k)].re).sum();
    signal + tx[i] as f64 * q.variances[i]
}

fn check_point(point: &SurrogateExpansionPoint, v: &PrecoderCovariance) -> Result<()> {
    let same = point.covariance.blocks.len() == v.blocks.len()
        && point
            .covariance
            .blocks
            .iter()
            .zip(&v.blocks)
            .all(|(a, b)| a.shape() == b.shape());
    if !same || point.quantization.variances.len() != point.channel.num_rus() {
        return Err(Error::DimensionMismatch("surrogate expansion point".into()));
    }
    Ok(())
}

/// Concave lower bound of the CAP rate of MS `j`: the first log-det term is
/// kept, the second is linearized at the expansion point.
pub fn cap_rate_surrogate(
    point: &SurrogateExpansionPoint,
    v: &PrecoderCovariance,
    q: &QuantizationProfile,
    j: usize,
) -> Result<f64> {
    check_point(point, v)?;
    let h = &point.channel;
    let hj = h.ms(j);
    let omega = q.omega(&h.tx_antennas);
    let total = v.total() + &omega;
    let interference = &total - v.embedded(j);

    let omega0 = point.quantization.omega(&h.tx_antennas);
    let total0 = point.covariance.total() + &omega0;
    let interference0 = &total0 - point.covariance.embedded(j);

    let first = log2_det_i_plus(hj, &total);
    let a = i_plus_congruence(hj, &interference0);
    let b = i_plus_congruence(hj, &interference);
    Ok(first - linearize_logdet(&a, &b)?)
}

/// Lower bound of the CBP rate of MS `j` (same structure as the CAP bound,
/// with embedded covariances; pass a noiseless profile for the
/// stochastic-CSI design where `sigma_w = 0`).
pub fn cbp_rate_surrogate(
    point: &SurrogateExpansionPoint,
    vt: &PrecoderCovariance,
    q: &QuantizationProfile,
    j: usize,
) -> Result<f64> {
    cap_rate_surrogate(point, vt, q, j)
}

/// Convex upper bound of the CAP fronthaul rate of RU `i`: the concave
/// `log2 det` term is linearized at the expansion point.
pub fn cap_fronthaul_surrogate(
    point: &SurrogateExpansionPoint,
    v: &PrecoderCovariance,
    q: &QuantizationProfile,
    i: usize,
) -> Result<f64> {
    check_point(point, v)?;
    let tx = &point.channel.tx_antennas;
    let s0 = point.quantization.checked(i)?;
    let s = q.checked(i)?;
    let n = tx[i];
    let a = linalg::hermitian_part(&(ru_block(&point.covariance.total(), tx, i) + linalg::scaled_identity(n, s0)));
    let b = linalg::hermitian_part(&(ru_block(&v.total(), tx, i) + linalg::scaled_identity(n, s)));
    Ok(linearize_logdet(&a, &b)? - n as f64 * s.log2())
}

/// Precoder-compression fronthaul rate of RU `i` under CBP, amortized over a
/// coherence block of `coherence` channel uses.
pub fn cbp_precoder_fronthaul_rate(
    vt: &PrecoderCovariance,
    q: &QuantizationProfile,
    i: usize,
    tx: &[usize],
    coherence: u64,
) -> Result<f64> {
    if coherence == 0 {
        return Err(Error::InvalidArgument("coherence length must be at least 1".into()));
    }
    Ok(cap_fronthaul_rate(vt, q, i, tx)? / coherence as f64)
}

/// Upper bound of [`cbp_precoder_fronthaul_rate`] (linearized like
/// [`cap_fronthaul_surrogate`]).
pub fn cbp_precoder_fronthaul_surrogate(
    point: &SurrogateExpansionPoint,
    vt: &PrecoderCovariance,
    q: &QuantizationProfile,
    i: usize,
    coherence: u64,
) -> Result<f64> {
    if coherence == 0 {
        return Err(Error::InvalidArgument("coherence length must be at least 1".into()));
    }
    Ok(cap_fronthaul_surrogate(point, vt, q, i)? / coherence as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> CMat {
        CMat::from_element(1, 1, c(x, 0.0))
    }

    fn scalar_channel(gains: &[f64]) -> ChannelRealization {
        ChannelRealization::new(vec![1], gains.iter().map(|&g| scalar(g)).collect()).unwrap()
    }

    fn q(vals: &[f64]) -> QuantizationProfile {
        QuantizationProfile::new(vals.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn linearize_logdet_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = linalg::random_psd(3, 5, &mut rng) + linalg::identity(3);
        let la = linalg::log2_det_pd(&a).unwrap();
        assert!((linearize_logdet(&a, &a).unwrap() - la).abs() < 1e-12);

        let b = linalg::random_psd(2, 2, &mut rng);
        let expect = (linalg::real_trace(&b) - 2.0) / LN_2;
        assert!((linearize_logdet(&linalg::identity(2), &b).unwrap() - expect).abs() < 1e-12);

        let v = linearize_logdet(&linalg::scaled_identity(2, 2.0), &linalg::identity(2)).unwrap();
        assert!((v - (2.0 - 1.0 / LN_2)).abs() < 1e-12);
        assert!((v - 0.557305).abs() < 1e-6);

        assert!(linearize_logdet(&linalg::zeros(2, 2), &b).is_err());
    }

    #[test]
    fn cap_user_rate_examples() {
        let h = scalar_channel(&[1.0]);
        let zero = PrecoderCovariance::cap(vec![scalar(0.0)]);
        assert_eq!(cap_user_rate(&h, &zero, &q(&[0.0]), 0), 0.0);
        let one = PrecoderCovariance::cap(vec![scalar(1.0)]);
        assert!((cap_user_rate(&h, &one, &q(&[0.0]), 0) - 1.0).abs() < 1e-12);

        let h2 = scalar_channel(&[1.0, 1.0]);
        let v = PrecoderCovariance::cap(vec![scalar(3.0), scalar(1.0)]);
        let r1 = cap_user_rate(&h2, &v, &q(&[0.0]), 0);
        assert!((r1 - (5f64.log2() - 1.0)).abs() < 1e-12);
        assert!((r1 - 1.32193).abs() < 1e-5);
    }

    #[test]
    fn fronthaul_and_power_examples() {
        let tx = [1];
        let zero = PrecoderCovariance::cap(vec![scalar(0.0)]);
        assert!(cap_fronthaul_rate(&zero, &q(&[0.3]), 0, &tx).unwrap().abs() < 1e-12);
        let one = PrecoderCovariance::cap(vec![scalar(1.0)]);
        assert!((cap_fronthaul_rate(&one, &q(&[1.0]), 0, &tx).unwrap() - 1.0).abs() < 1e-12);
        let three = PrecoderCovariance::cap(vec![scalar(3.0)]);
        assert!((cap_fronthaul_rate(&three, &q(&[1.0]), 0, &tx).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            cap_fronthaul_rate(&one, &QuantizationProfile { variances: vec![1e-12], floor: 1e-10 }, 0, &tx),
            Err(Error::BelowFloor { .. })
        ));

        assert_eq!(transmit_power(&zero, &q(&[0.0]), 0, &tx), 0.0);
        assert!((transmit_power(&one, &q(&[1.0]), 0, &tx) - 2.0).abs() < 1e-15);
        let v2 = PrecoderCovariance::cap(vec![linalg::identity(2)]);
        assert!((transmit_power(&v2, &q(&[0.5]), 0, &[2]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn cbp_examples() {
        let h = scalar_channel(&[1.0]);
        let e = vec![linalg::identity(1)];
        let zero = PrecoderCovariance::cbp(vec![scalar(0.0)], e.clone()).unwrap();
        assert_eq!(cbp_user_rate(&h, &zero, &q(&[0.0]), 0), 0.0);
        let ten = PrecoderCovariance::cbp(vec![scalar(10.0)], e.clone()).unwrap();
        assert!((cbp_user_rate(&h, &ten, &q(&[0.0]), 0) - 11f64.log2()).abs() < 1e-12);

        let one = PrecoderCovariance::cbp(vec![scalar(1.0)], e).unwrap();
        let r = cbp_precoder_fronthaul_rate(&one, &q(&[1.0]), 0, &[1], 20).unwrap();
        assert!((r - 0.05).abs() < 1e-12);
        let r1 = cbp_precoder_fronthaul_rate(&one, &q(&[1.0]), 0, &[1], 1).unwrap();
        assert!((r1 - cap_fronthaul_rate(&one, &q(&[1.0]), 0, &[1]).unwrap()).abs() < 1e-15);
        let big = cbp_precoder_fronthaul_rate(&one, &q(&[1.0]), 0, &[1], u64::MAX).unwrap();
        assert!(big < 1e-18);
        assert!(cbp_precoder_fronthaul_rate(&one, &q(&[1.0]), 0, &[1], 0).is_err());
    }

    struct Instance {
        tx: Vec<usize>,
        h: ChannelRealization,
        v: PrecoderCovariance,
        q: QuantizationProfile,
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
        let num_rus = rng.random_range(1..=2);
        let num_mss = rng.random_range(1..=2);
        let tx: Vec<usize> = (0..num_rus).map(|_| rng.random_range(1..=2)).collect();
        let nt: usize = tx.iter().sum();
        let per_ms = (0..num_mss)
            .map(|_| linalg::complex_gaussian(rng.random_range(1..=2), nt, rng))
            .collect();
        let h = ChannelRealization::new(tx.clone(), per_ms).unwrap();
        let v = PrecoderCovariance::cap((0..num_mss).map(|_| linalg::random_psd(nt, 1 + rng.random_range(0..nt), rng)).collect());
        let q = QuantizationProfile::new((0..num_rus).map(|_| 0.05 + rng.random::<f64>()).collect(), QUANTIZATION_FLOOR).unwrap();
        Instance { tx, h, v, q }
    }

    #[test]
    fn surrogates_are_tight_and_bound_the_true_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let base = random_instance(&mut rng);
            let point = SurrogateExpansionPoint {
                covariance: base.v.clone(),
                quantization: base.q.clone(),
                channel: base.h.clone(),
            };
            let other = random_instance_like(&base, &mut rng);
            for j in 0..base.v.num_mss() {
                let at = cap_rate_surrogate(&point, &base.v, &base.q, j).unwrap();
                assert!((at - cap_user_rate(&base.h, &base.v, &base.q, j)).abs() < 1e-9);
                let lb = cap_rate_surrogate(&point, &other.v, &other.q, j).unwrap();
                assert!(lb <= cap_user_rate(&base.h, &other.v, &other.q, j) + 1e-9);
            }
            for i in 0..base.tx.len() {
                let at = cap_fronthaul_surrogate(&point, &base.v, &base.q, i).unwrap();
                assert!((at - cap_fronthaul_rate(&base.v, &base.q, i, &base.tx).unwrap()).abs() < 1e-9);
                let ub = cap_fronthaul_surrogate(&point, &other.v, &other.q, i).unwrap();
                assert!(ub >= cap_fronthaul_rate(&other.v, &other.q, i, &base.tx).unwrap() - 1e-9);
            }
        }
    }

    fn random_instance_like(base: &Instance, rng: &mut ChaCha8Rng) -> Instance {
        let nt: usize = base.tx.iter().sum();
        Instance {
            tx: base.tx.clone(),
            h: base.h.clone(),
            v: PrecoderCovariance::cap(
                (0..base.v.num_mss()).map(|_| linalg::random_psd(nt, 1 + rng.random_range(0..nt), rng) * c(3.0 * rng.random::<f64>(), 0.0)).collect(),
            ),
            q: QuantizationProfile::new(base.tx.iter().map(|_| 0.01 + 2.0 * rng.random::<f64>()).collect(), QUANTIZATION_FLOOR).unwrap(),
        }
    }

    #[test]
    fn zero_snapshot_fronthaul_expansion_matches_hand_form() {
        let tx = [2];
        let s0 = 0.7;
        let point = SurrogateExpansionPoint {
            covariance: PrecoderCovariance::cap(vec![linalg::zeros(2, 2)]),
            quantization: q(&[s0]),
            channel: ChannelRealization::new(vec![2], vec![linalg::zeros(1, 2)]).unwrap(),
        };
        let s = 1.9;
        let got = cap_fronthaul_surrogate(&point, &PrecoderCovariance::cap(vec![linalg::zeros(2, 2)]), &q(&[s]), 0).unwrap();
        let n = tx[0] as f64;
        let expect = n * s0.log2() + (n / LN_2) * (s - s0) / s0 - n * s.log2();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn single_ms_surrogate_is_exact_with_fixed_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = ChannelRealization::new(vec![2], vec![linalg::complex_gaussian(1, 2, &mut rng)]).unwrap();
        let qq = q(&[0.4]);
        let point = SurrogateExpansionPoint {
            covariance: PrecoderCovariance::cap(vec![linalg::random_psd(2, 2, &mut rng)]),
            quantization: qq.clone(),
            channel: h.clone(),
        };
        let v = PrecoderCovariance::cap(vec![linalg::random_psd(2, 1, &mut rng)]);
        let s = cap_rate_surrogate(&point, &v, &qq, 0).unwrap();
        assert!((s - cap_user_rate(&h, &v, &qq, 0)).abs() < 1e-12);
    }

    #[test]
    fn fronthaul_rate_decreases_in_variance() {
        let v = PrecoderCovariance::cap(vec![linalg::scaled_identity(2, 1.5)]);
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let s = 0.01 * 1.5f64.powi(k);
            let r = cap_fronthaul_rate(&v, &q(&[s]), 0, &[2]).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn full_cluster_cbp_matches_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let inst = random_instance(&mut rng);
        let nt: usize = inst.tx.iter().sum();
        let cbp = PrecoderCovariance::cbp(inst.v.blocks.clone(), vec![linalg::identity(nt); inst.v.num_mss()]).unwrap();
        for j in 0..inst.v.num_mss() {
            let a = cap_user_rate(&inst.h, &inst.v, &inst.q, j);
            let b = cbp_user_rate(&inst.h, &cbp, &inst.q, j);
            assert!((a - b).abs() < 1e-12);
        }
        for i in 0..inst.tx.len() {
            let a = cap_fronthaul_rate(&inst.v, &inst.q, i, &inst.tx).unwrap();
            let b = cbp_precoder_fronthaul_rate(&cbp, &inst.q, i, &inst.tx, 1).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_zero_pattern() {
        let e = linalg::selector(4, 2, 2);
        let vt = PrecoderCovariance::cbp(vec![linalg::identity(2)], vec![e]).unwrap();
        let full = vt.embedded(0);
        for r in 0..4 {
            for s in 0..4 {
                if r < 2 || s < 2 {
                    assert_eq!(full[(r, s)], c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn selection_matrices_are_orthonormal_selectors() {
        let sel = SelectionMatrices::new(&[2, 1, 3], &[1, 2]);
        for d in sel.rows.iter().chain(&sel.cols) {
            let g = d.adjoint() * d;
            assert!(linalg::max_abs_diff(&g, &linalg::identity(d.ncols())) == 0.0);
            for col in 0..d.ncols() {
                assert_eq!(d.column(col).iter().filter(|z| z.re == 1.0).count(), 1);
            }
        }
    }

    #[test]
    fn covariance_json_round_trip() {
        let vt = PrecoderCovariance::cbp(vec![linalg::identity(2)], vec![linalg::selector(3, 1, 2)]).unwrap();
        let s = serde_json::to_string(&vt).unwrap();
        assert_eq!(serde_json::from_str::<PrecoderCovariance>(&s).unwrap(), vt);
        let v = PrecoderCovariance::cap(vec![linalg::identity(2)]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<PrecoderCovariance>(&s).unwrap(), v);
    }
}
