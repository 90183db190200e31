//! Joint fronthaul compression and precoding design for the downlink of
//! cloud radio access networks (C-RANs) over block-ergodic fading.
//!
//! Two architectures are covered: compression-after-precoding (CAP), where
//! the central unit quantizes precoded baseband signals, and
//! compression-before-precoding (CBP), where it forwards data streams and
//! quantized precoders to the radio units. Each has an instantaneous-CSI
//! design (majorization-minimization per coherence block) and a
//! stochastic-CSI design (stochastic successive upper-bound minimization).

pub mod cap;
pub mod cbp;
pub mod config;
mod design;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod geometry;
pub mod linalg;
mod serial;
pub mod signal;
pub mod solver;

pub use cap::{cap_slacks, init_cap, optimize_cap_perfect, optimize_cap_stochastic, CapSolution, IterationRecord, SsumOptions};
pub use cbp::{
    assign_clusters_instantaneous, assign_clusters_stochastic, cbp_slacks, optimize_cbp_perfect,
    optimize_cbp_perfect_with, optimize_cbp_stochastic, CbpSolution, ClusterAssignment,
};
pub use config::{db_to_linear, SystemConfig};
pub use error::{Error, Result};
pub use geometry::{
    build_statistics, one_ring_covariance, path_loss, place_nodes, sample_channel, ChannelModel,
    ChannelRealization, ChannelStatistics, FixedChannel, LinkStatistics, NetworkGeometry,
};
pub use evaluator::{ergodic_sum_rate, rank_reduce, Csi, Design, ErgodicEstimate, Precoder, Scheme};
pub use experiment::{
    emit_results, read_results, replay, run_sweep, ExperimentSpec, ResultRow, Sidecar, SummaryRow, SweepOutput,
    SweepVariable,
};
pub use signal::{PrecoderCovariance, QuantizationProfile, SelectionMatrices, SurrogateExpansionPoint};
pub use solver::{ConvexProgram, Solution, SolveStatus, SolverOptions};
