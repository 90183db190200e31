//! Sweep experiments: a TOML spec expands into (grid point, variant,
//! geometry) tasks whose results are written as CSV tables plus a JSON
//! sidecar that is enough to replay the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cap::{optimize_cap_stochastic, SsumOptions};
use crate::cbp::{assign_clusters_stochastic, optimize_cbp_stochastic};
use crate::config::{db_to_linear, SystemConfig};
use crate::error::{Error, Result};
use crate::evaluator::{ergodic_sum_rate, Csi, Design, ErgodicEstimate, Scheme};
use crate::geometry::{build_statistics, place_nodes};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SIDECAR_FILE: &str = "sidecar.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    FronthaulCapacity,
    /// Per-RU power budget in dB.
    Power,
    Coherence,
    NumMss,
    RxAntennas,
}

impl std::fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepVariable::FronthaulCapacity => "fronthaul_capacity",
            SweepVariable::Power => "power",
            SweepVariable::Coherence => "coherence",
            SweepVariable::NumMss => "num_mss",
            SweepVariable::RxAntennas => "rx_antennas",
        })
    }
}

/// Homogeneous network description used by spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub num_rus: usize,
    pub num_mss: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub fronthaul_capacity: f64,
    pub power_db: f64,
    pub coherence_length: u64,
}

impl BaseConfig {
    pub fn system(&self) -> SystemConfig {
        SystemConfig::homogeneous(
            self.num_rus,
            self.num_mss,
            self.tx_antennas,
            self.rx_antennas,
            self.fronthaul_capacity,
            db_to_linear(self.power_db),
            self.coherence_length,
        )
    }

    /// The base with the sweep variable set to `value`.
    pub fn at(&self, variable: SweepVariable, value: f64) -> Result<SystemConfig> {
        let mut b = self.clone();
        let count = |v: f64| -> Result<u64> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e15 {
                Ok(v as u64)
            } else {
                Err(Error::InvalidConfig(format!("{variable} must be a positive integer, got {v}")))
            }
        };
        match variable {
            SweepVariable::FronthaulCapacity => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::InvalidConfig(format!("fronthaul capacity {value}")));
                }
                b.fronthaul_capacity = value;
            }
            SweepVariable::Power => {
                if !value.is_finite() {
                    return Err(Error::InvalidConfig(format!("power {value} dB")));
                }
                b.power_db = value;
            }
            SweepVariable::Coherence => b.coherence_length = count(value)?,
            SweepVariable::NumMss => b.num_mss = count(value)? as usize,
            SweepVariable::RxAntennas => b.rx_antennas = count(value)? as usize,
        }
        let cfg = b.system();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

fn default_geometries() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: BaseConfig,
    pub schemes: Vec<Scheme>,
    pub csi: Vec<Csi>,
    #[serde(default)]
    pub cluster_sizes: Vec<usize>,
    pub sweep: Sweep,
    #[serde(default = "default_geometries")]
    pub geometries: usize,
    /// Fresh channel draws per geometry for stochastic-CSI designs.
    pub evaluation_samples: usize,
    /// Coherence blocks per geometry for perfect-CSI designs, each one a
    /// full per-block optimization (defaults to `evaluation_samples`).
    #[serde(default)]
    pub perfect_samples: Option<usize>,
    /// Its `seed` is replaced by the per-cell training seed.
    #[serde(default)]
    pub optimizer: SsumOptions,
    #[serde(default)]
    pub seed: u64,
}

/// One scheme / CSI / cluster-size combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub scheme: Scheme,
    pub csi: Csi,
    pub cluster_size: Option<usize>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sweep.values.is_empty() {
            return bad("sweep grid is empty");
        }
        if self.schemes.is_empty() || self.csi.is_empty() {
            return bad("at least one scheme and one CSI model are required");
        }
        if self.schemes.contains(&Scheme::Cbp) && self.cluster_sizes.is_empty() {
            return bad("CBP needs at least one cluster size");
        }
        if self.cluster_sizes.contains(&0) {
            return bad("cluster sizes must be at least 1");
        }
        if self.geometries == 0 {
            return bad("geometries must be at least 1");
        }
        if self.evaluation_samples < 2 || self.perfect_samples.is_some_and(|n| n < 2) {
            return bad("sample counts must be at least 2");
        }
        self.optimizer.validate()?;
        for &v in &self.sweep.values {
            self.base.at(self.sweep.variable, v)?;
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            for &csi in &self.csi {
                match scheme {
                    Scheme::Cap => out.push(Variant {
                        scheme,
                        csi,
                        cluster_size: None,
                    }),
                    Scheme::Cbp => out.extend(self.cluster_sizes.iter().map(|&n| Variant {
                        scheme,
                        csi,
                        cluster_size: Some(n),
                    })),
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn perfect_samples(&self) -> usize {
        self.perfect_samples.unwrap_or(self.evaluation_samples)
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

const TAG_GEOMETRY: u64 = 1;
const TAG_TRAINING: u64 = 2;
const TAG_EVALUATION: u64 = 3;

/// Seeds of one (grid point, geometry) cell. Placement and evaluation draws
/// are shared by every variant and grid point so that comparisons are
/// paired; training draws are separate from evaluation draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub point: usize,
    pub geometry: usize,
    pub placement: u64,
    pub training: u64,
    pub evaluation: u64,
}

pub fn cell_seeds(master: u64, point: usize, geometry: usize) -> CellSeeds {
    CellSeeds {
        point,
        geometry,
        placement: derive(master, &[TAG_GEOMETRY, geometry as u64]),
        training: derive(master, &[TAG_TRAINING, geometry as u64, point as u64]),
        evaluation: derive(master, &[TAG_EVALUATION, geometry as u64]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub value: f64,
    pub scheme: Scheme,
    pub csi: Csi,
    pub cluster_size: Option<usize>,
    pub geometry: usize,
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// `ok`, or the error that stopped this task.
    pub status: String,
}

impl ResultRow {
    pub fn variant(&self) -> Variant {
        Variant {
            scheme: self.scheme,
            csi: self.csi,
            cluster_size: self.cluster_size,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Mean over geometries of one (grid point, variant), with the Monte Carlo
/// standard error `sqrt(sum se_g^2) / G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub value: f64,
    pub scheme: Scheme,
    pub csi: Csi,
    pub cluster_size: Option<usize>,
    pub geometries: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub value: f64,
    pub scheme: Scheme,
    pub csi: Csi,
    pub cluster_size: Option<usize>,
    pub geometry: usize,
    pub seconds: f64,
}

impl Timing {
    pub fn variant(&self) -> Variant {
        Variant {
            scheme: self.scheme,
            csi: self.csi,
            cluster_size: self.cluster_size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<Timing>,
}

impl SweepOutput {
    pub fn failures(&self) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| !r.is_ok()).collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut keys: Vec<(f64, Variant)> = Vec::new();
    for r in rows {
        let key = (r.value, r.variant());
        if !keys.iter().any(|k| k.0.to_bits() == key.0.to_bits() && k.1 == key.1) {
            keys.push(key);
        }
    }
    for (value, variant) in keys {
        let ok: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.value.to_bits() == value.to_bits() && r.variant() == variant && r.is_ok())
            .collect();
        let g = ok.len() as f64;
        let (mean, std_error) = if ok.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                ok.iter().map(|r| r.mean).sum::<f64>() / g,
                ok.iter().map(|r| r.std_error * r.std_error).sum::<f64>().sqrt() / g,
            )
        };
        out.push(SummaryRow {
            value,
            scheme: variant.scheme,
            csi: variant.csi,
            cluster_size: variant.cluster_size,
            geometries: ok.len(),
            mean,
            std_error,
        });
    }
    out
}

fn run_task(spec: &ExperimentSpec, config: &SystemConfig, variant: Variant, seeds: CellSeeds) -> Result<ErgodicEstimate> {
    let geometry = place_nodes(config, seeds.placement);
    let stats = build_statistics(&geometry, config)?;
    let options = SsumOptions {
        seed: seeds.training,
        ..spec.optimizer.clone()
    };
    match (variant.scheme, variant.csi) {
        (Scheme::Cap, Csi::Stochastic) => {
            let sol = optimize_cap_stochastic(config, &stats, &options)?;
            ergodic_sum_rate(config, Design::CapStochastic(&sol), &stats, spec.evaluation_samples, seeds.evaluation)
        }
        (Scheme::Cbp, Csi::Stochastic) => {
            let n_c = variant.cluster_size.expect("CBP variant has a cluster size");
            let clusters = assign_clusters_stochastic(&stats, n_c)?;
            let sol = optimize_cbp_stochastic(config, &stats, &clusters, &options)?;
            ergodic_sum_rate(config, Design::CbpStochastic(&sol), &stats, spec.evaluation_samples, seeds.evaluation)
        }
        (Scheme::Cap, Csi::Perfect) => {
            ergodic_sum_rate(config, Design::CapPerfect(&options), &stats, spec.perfect_samples(), seeds.evaluation)
        }
        (Scheme::Cbp, Csi::Perfect) => {
            let design = Design::CbpPerfect {
                cluster_size: variant.cluster_size.expect("CBP variant has a cluster size"),
                options: &options,
            };
            ergodic_sum_rate(config, design, &stats, spec.perfect_samples(), seeds.evaluation)
        }
    }
}

/// Runs every (grid point, variant, geometry) task on the current rayon
/// pool. Failed tasks become rows with an error status.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let variants = spec.variants();
    let mut tasks = Vec::new();
    for (p, &value) in spec.sweep.values.iter().enumerate() {
        for &variant in &variants {
            for g in 0..spec.geometries {
                tasks.push((p, value, variant, g));
            }
        }
    }
    let done: Vec<(ResultRow, Timing)> = tasks
        .par_iter()
        .map(|&(p, value, variant, g)| {
            let start = Instant::now();
            let config = spec.base.at(spec.sweep.variable, value).expect("validated grid");
            let seeds = cell_seeds(spec.seed, p, g);
            let (mean, std_error, samples, status) = match run_task(spec, &config, variant, seeds) {
                Ok(e) => (e.mean, e.std_error, e.samples, "ok".to_string()),
                Err(e) => (f64::NAN, f64::NAN, 0, e.to_string()),
            };
            let row = ResultRow {
                value,
                scheme: variant.scheme,
                csi: variant.csi,
                cluster_size: variant.cluster_size,
                geometry: g,
                mean,
                std_error,
                samples,
                status,
            };
            let timing = Timing {
                value,
                scheme: variant.scheme,
                csi: variant.csi,
                cluster_size: variant.cluster_size,
                geometry: g,
                seconds: start.elapsed().as_secs_f64(),
            };
            (row, timing)
        })
        .collect();
    let (rows, timings) = done.into_iter().unzip();
    Ok(SweepOutput { rows, timings })
}

/// Resolved spec and seeds of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: ExperimentSpec,
    pub variants: Vec<Variant>,
    pub seeds: Vec<CellSeeds>,
}

impl Sidecar {
    pub fn new(spec: &ExperimentSpec) -> Self {
        let seeds = (0..spec.sweep.values.len())
            .flat_map(|p| (0..spec.geometries).map(move |g| cell_seeds(spec.seed, p, g)))
            .collect();
        Sidecar {
            spec: spec.clone(),
            variants: spec.variants(),
            seeds,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
        sidecar.spec.validate()?;
        let fresh = Sidecar::new(&sidecar.spec);
        if fresh.seeds != sidecar.seeds || fresh.variants != sidecar.variants {
            return Err(Error::Format("sidecar seeds do not match its spec".into()));
        }
        Ok(sidecar)
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn fmt_nc(n: Option<usize>) -> String {
    n.map(|n| n.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], records: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for r in records {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub const RESULT_HEADER: [&str; 9] = [
    "value",
    "scheme",
    "csi",
    "cluster_size",
    "geometry",
    "mean",
    "std_error",
    "samples",
    "status",
];

/// Files written by [`emit_results`].
#[derive(Debug, Clone)]
pub struct Emitted {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub timings: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes the result, summary and timing tables and the sidecar into `dir`.
/// Rows are sorted by grid value, variant and geometry first.
pub fn emit_results(spec: &ExperimentSpec, output: &SweepOutput, dir: &Path) -> Result<Emitted> {
    if output.rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to write".into()));
    }
    fs::create_dir_all(dir)?;
    let mut rows = output.rows.clone();
    rows.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.variant().cmp(&b.variant()))
            .then(a.geometry.cmp(&b.geometry))
    });
    let mut timings = output.timings.clone();
    timings.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.variant().cmp(&b.variant()))
            .then(a.geometry.cmp(&b.geometry))
    });

    let out = Emitted {
        results: dir.join(RESULTS_FILE),
        summary: dir.join(SUMMARY_FILE),
        timings: dir.join(TIMINGS_FILE),
        sidecar: dir.join(SIDECAR_FILE),
    };
    write_csv(
        &out.results,
        &RESULT_HEADER,
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.value),
                r.scheme.to_string(),
                r.csi.to_string(),
                fmt_nc(r.cluster_size),
                r.geometry.to_string(),
                fmt_f64(r.mean),
                fmt_f64(r.std_error),
                r.samples.to_string(),
                r.status.clone(),
            ]
        }),
    )?;
    write_csv(
        &out.summary,
        &["value", "scheme", "csi", "cluster_size", "geometries", "mean", "std_error"],
        summarize(&rows).into_iter().map(|s| {
            vec![
                fmt_f64(s.value),
                s.scheme.to_string(),
                s.csi.to_string(),
                fmt_nc(s.cluster_size),
                s.geometries.to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.std_error),
            ]
        }),
    )?;
    write_csv(
        &out.timings,
        &["value", "scheme", "csi", "cluster_size", "geometry", "seconds"],
        timings.iter().map(|t| {
            vec![
                fmt_f64(t.value),
                t.scheme.to_string(),
                t.csi.to_string(),
                fmt_nc(t.cluster_size),
                t.geometry.to_string(),
                format!("{:.6}", t.seconds),
            ]
        }),
    )?;
    let sidecar = serde_json::to_string_pretty(&Sidecar::new(spec))?;
    fs::write(&out.sidecar, sidecar + "\n")?;
    Ok(out)
}

/// Parses a results table written by [`emit_results`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let fmt = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        if rec.len() != RESULT_HEADER.len() {
            return Err(fmt(format!("expected {} fields, got {}", RESULT_HEADER.len(), rec.len())));
        }
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| fmt(format!("{}: {e}", RESULT_HEADER[k])));
        let int = |k: usize| rec[k].parse::<usize>().map_err(|e| fmt(format!("{}: {e}", RESULT_HEADER[k])));
        let scheme = match &rec[1] {
            "cap" => Scheme::Cap,
            "cbp" => Scheme::Cbp,
            s => return Err(fmt(format!("unknown scheme {s}"))),
        };
        let csi = match &rec[2] {
            "perfect" => Csi::Perfect,
            "stochastic" => Csi::Stochastic,
            s => return Err(fmt(format!("unknown CSI model {s}"))),
        };
        rows.push(ResultRow {
            value: num(0)?,
            scheme,
            csi,
            cluster_size: if rec[3].is_empty() { None } else { Some(int(3)?) },
            geometry: int(4)?,
            mean: num(5)?,
            std_error: num(6)?,
            samples: int(7)?,
            status: rec[8].to_string(),
        });
    }
    Ok(rows)
}

/// Reruns the experiment recorded in a sidecar and writes it into `dir`.
pub fn replay(sidecar: &Path, dir: &Path) -> Result<(SweepOutput, Emitted)> {
    let sc = Sidecar::load(sidecar)?;
    let output = run_sweep(&sc.spec)?;
    let emitted = emit_results(&sc.spec, &output, dir)?;
    Ok((output, emitted))
}

#[cfg(test)]
mod tests;
