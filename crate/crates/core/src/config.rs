use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions, budgets and propagation parameters of one C-RAN cluster.
///
/// Per-RU vectors (`tx_antennas_per_ru`, `fronthaul_capacity`,
/// `power_budget`) have length `num_rus`; per-MS vectors have length
/// `num_mss`. Powers are linear and normalized to the unit noise power at
/// the receivers. Fronthaul capacities are in bits per downlink channel use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_rus: usize,
    pub num_mss: usize,
    pub tx_antennas_per_ru: Vec<usize>,
    pub rx_antennas_per_ms: Vec<usize>,
    pub streams_per_ms: Vec<usize>,
    /// Channel uses per coherence block.
    pub coherence_length: u64,
    pub fronthaul_capacity: Vec<f64>,
    pub power_budget: Vec<f64>,
    pub rate_weights: Vec<f64>,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    /// Reference distance of the path-loss law, meters.
    pub ref_distance: f64,
    pub pathloss_exponent: f64,
    /// Radius of the scatterer ring around each MS, meters.
    pub scattering_radius: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl SystemConfig {
    /// Homogeneous network with the propagation constants of the reference
    /// deployment (500 m square, d0 = 50 m, exponent 3, 10 m scattering
    /// radius), unit weights and one stream per receive antenna.
    pub fn homogeneous(
        num_rus: usize,
        num_mss: usize,
        tx_antennas: usize,
        rx_antennas: usize,
        fronthaul_capacity: f64,
        power_budget: f64,
        coherence_length: u64,
    ) -> Self {
        SystemConfig {
            num_rus,
            num_mss,
            tx_antennas_per_ru: vec![tx_antennas; num_rus],
            rx_antennas_per_ms: vec![rx_antennas; num_mss],
            streams_per_ms: vec![rx_antennas; num_mss],
            coherence_length,
            fronthaul_capacity: vec![fronthaul_capacity; num_rus],
            power_budget: vec![power_budget; num_rus],
            rate_weights: vec![1.0; num_mss],
            area_side: 500.0,
            ref_distance: 50.0,
            pathloss_exponent: 3.0,
            scattering_radius: 10.0,
        }
    }

    pub fn total_tx(&self) -> usize {
        self.tx_antennas_per_ru.iter().sum()
    }

    pub fn total_rx(&self) -> usize {
        self.rx_antennas_per_ms.iter().sum()
    }

    /// First row of RU `i` in the stacked transmit dimension.
    pub fn tx_offset(&self, i: usize) -> usize {
        self.tx_antennas_per_ru[..i].iter().sum()
    }

    pub fn rx_offset(&self, j: usize) -> usize {
        self.rx_antennas_per_ms[..j].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_rus == 0 || self.num_mss == 0 {
            return bad("at least one RU and one MS are required".into());
        }
        let per_ru = [
            ("tx_antennas_per_ru", self.tx_antennas_per_ru.len()),
            ("fronthaul_capacity", self.fronthaul_capacity.len()),
            ("power_budget", self.power_budget.len()),
        ];
        for (name, len) in per_ru {
            if len != self.num_rus {
                return bad(format!("{name} has length {len}, expected {}", self.num_rus));
            }
        }
        let per_ms = [
            ("rx_antennas_per_ms", self.rx_antennas_per_ms.len()),
            ("streams_per_ms", self.streams_per_ms.len()),
            ("rate_weights", self.rate_weights.len()),
        ];
        for (name, len) in per_ms {
            if len != self.num_mss {
                return bad(format!("{name} has length {len}, expected {}", self.num_mss));
            }
        }
        if self.tx_antennas_per_ru.iter().any(|&n| n == 0) {
            return bad("every RU needs at least one transmit antenna".into());
        }
        if self.rx_antennas_per_ms.iter().any(|&n| n == 0) {
            return bad("every MS needs at least one receive antenna".into());
        }
        for (j, (&m, &n)) in self.streams_per_ms.iter().zip(&self.rx_antennas_per_ms).enumerate() {
            if m == 0 || m > n {
                return bad(format!("MS {j}: streams {m} must be in 1..={n}"));
            }
        }
        let streams: usize = self.streams_per_ms.iter().sum();
        if streams > self.total_tx() {
            return bad(format!(
                "total streams {streams} exceed total transmit antennas {}",
                self.total_tx()
            ));
        }
        if self.coherence_length == 0 {
            return bad("coherence_length must be at least 1".into());
        }
        if self.fronthaul_capacity.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return bad("fronthaul capacities must be finite and nonnegative".into());
        }
        if self.power_budget.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad("power budgets must be finite and positive".into());
        }
        if self.rate_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("rate weights must be finite and nonnegative".into());
        }
        for (name, v) in [
            ("area_side", self.area_side),
            ("ref_distance", self.ref_distance),
            ("pathloss_exponent", self.pathloss_exponent),
            ("scattering_radius", self.scattering_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_db_is_ten() {
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
        assert!((db_to_linear(0.0) - 1.0).abs() < 1e-15);
        assert!((db_to_linear(20.0) - 100.0).abs() < 1e-10);
    }

    #[test]
    fn offsets_and_validation() {
        let mut cfg = SystemConfig::homogeneous(3, 2, 2, 1, 4.0, 10.0, 20);
        assert_eq!(cfg.total_tx(), 6);
        assert_eq!(cfg.tx_offset(2), 4);
        assert_eq!(cfg.rx_offset(1), 1);
        cfg.validate().unwrap();

        cfg.streams_per_ms[0] = 2;
        assert!(cfg.validate().is_err());
        cfg.streams_per_ms[0] = 1;
        cfg.power_budget[1] = 0.0;
        assert!(cfg.validate().is_err());
        cfg.power_budget[1] = 1.0;
        cfg.rate_weights[0] = 0.0;
        cfg.validate().unwrap();
    }
}
