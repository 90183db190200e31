//! Fixtures shared by the benchmarks.

use cran_core::{build_statistics, place_nodes, ChannelModel, ChannelRealization, ChannelStatistics, SystemConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 4 RUs with 2 antennas each, 4 single-antenna MSs, 10 dB, T = 20.
pub fn desk(fronthaul: f64) -> (SystemConfig, ChannelStatistics) {
    let cfg = SystemConfig::homogeneous(4, 4, 2, 1, fronthaul, 10.0, 20);
    let stats = build_statistics(&place_nodes(&cfg, 1), &cfg).expect("valid geometry");
    (cfg, stats)
}

pub fn draw(stats: &ChannelStatistics, seed: u64) -> ChannelRealization {
    stats.draw(&mut ChaCha8Rng::seed_from_u64(seed))
}
