use super::*;

const TINY: &str = r#"
name = "tiny"
schemes = ["cap", "cbp"]
csi = ["stochastic"]
cluster_sizes = [1]
geometries = 1
evaluation_samples = 20
seed = 4

[base]
num_rus = 2
num_mss = 2
tx_antennas = 1
rx_antennas = 1
fronthaul_capacity = 2.0
power_db = 10.0
coherence_length = 20

[sweep]
variable = "fronthaul_capacity"
values = [1.0, 2.0]

[optimizer]
outer_iterations = 3
"#;

fn tiny() -> ExperimentSpec {
    ExperimentSpec::from_toml(TINY).unwrap()
}

#[test]
fn spec_parses_with_defaults() {
    let s = tiny();
    assert_eq!(s.optimizer.outer_iterations, 3);
    assert_eq!(s.optimizer.inner_max, 20);
    assert_eq!(s.perfect_samples(), 20);
    assert_eq!(s.variants().len(), 2);
    let cfg = s.base.at(SweepVariable::Power, 10.0).unwrap();
    assert!((cfg.power_budget[0] - 10.0).abs() < 1e-12);
}

#[test]
fn invalid_specs_are_rejected() {
    let cases = [
        ("values = [1.0, 2.0]", "values = []"),
        ("cluster_sizes = [1]", "cluster_sizes = []"),
        ("cluster_sizes = [1]", "cluster_sizes = [0]"),
        ("evaluation_samples = 20", "evaluation_samples = 1"),
        ("geometries = 1", "geometries = 0"),
        ("values = [1.0, 2.0]", "values = [-1.0]"),
        ("name = \"tiny\"", "name = \"tiny\"\nbogus = 1"),
    ];
    for (from, to) in cases {
        assert!(ExperimentSpec::from_toml(&TINY.replace(from, to)).is_err(), "{to}");
    }
    let mut s = tiny();
    s.sweep.variable = SweepVariable::Coherence;
    s.sweep.values = vec![2.5];
    assert!(s.validate().is_err());
}

#[test]
fn sweep_values_map_onto_the_config() {
    let s = tiny();
    let b = &BaseConfig {
        tx_antennas: 2,
        ..s.base.clone()
    };
    assert!(s.base.at(SweepVariable::NumMss, 3.0).is_err());
    assert_eq!(b.at(SweepVariable::Coherence, 7.0).unwrap().coherence_length, 7);
    let c = b.at(SweepVariable::NumMss, 3.0).unwrap();
    assert_eq!((c.num_mss, c.rate_weights.len()), (3, 3));
    let c = b.at(SweepVariable::RxAntennas, 2.0).unwrap();
    assert_eq!((c.rx_antennas_per_ms.clone(), c.streams_per_ms.clone()), (vec![2, 2], vec![2, 2]));
    assert_eq!(b.at(SweepVariable::FronthaulCapacity, 0.0).unwrap().fronthaul_capacity, vec![0.0, 0.0]);
}

#[test]
fn seeds_are_distinct_and_shared_where_intended() {
    let a = cell_seeds(1, 0, 0);
    let b = cell_seeds(1, 1, 0);
    let c = cell_seeds(1, 0, 1);
    assert_eq!(a.placement, b.placement);
    assert_eq!(a.evaluation, b.evaluation);
    assert_ne!(a.training, b.training);
    assert_ne!(a.placement, c.placement);
    assert_ne!(a.training, a.evaluation);
    assert_ne!(cell_seeds(2, 0, 0).placement, a.placement);
}

#[test]
fn one_point_one_variant_one_geometry_gives_one_row() {
    let mut s = tiny();
    s.schemes = vec![Scheme::Cap];
    s.sweep.values = vec![2.0];
    let out = run_sweep(&s).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert!(out.rows[0].is_ok(), "{}", out.rows[0].status);
    assert!(out.rows[0].mean > 0.0);
}

#[test]
fn results_round_trip_and_replay_byte_identically() {
    let s = tiny();
    let out = run_sweep(&s).unwrap();
    assert_eq!(out.rows.len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let first = emit_results(&s, &out, &dir.path().join("a")).unwrap();
    let parsed = read_results(&first.results).unwrap();
    let mut rows = out.rows.clone();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.variant().cmp(&b.variant())));
    assert_eq!(parsed, rows);
    let text = fs::read_to_string(&first.results).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULT_HEADER.join(","));
    assert_eq!(text.lines().count(), 5);

    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&first.sidecar).unwrap()).unwrap();
    assert_eq!(sidecar.seeds.len(), 2);
    assert_eq!(sidecar.seeds[1].training, cell_seeds(4, 1, 0).training);

    let (_, second) = replay(&first.sidecar, &dir.path().join("b")).unwrap();
    for (a, b) in [(&first.results, &second.results), (&first.summary, &second.summary), (&first.sidecar, &second.sidecar)] {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}

#[test]
fn failures_are_recorded_per_row() {
    let mut s = tiny();
    s.sweep.variable = SweepVariable::Power;
    s.sweep.values = vec![-200.0, 10.0];
    let out = run_sweep(&s).unwrap();
    assert_eq!(out.rows.len(), 4);
    let failed = out.failures();
    assert_eq!(failed.len(), 2);
    assert!(failed.iter().all(|r| r.value == -200.0 && r.mean.is_nan() && r.samples == 0));
    let summary = out.summary();
    assert!(summary.iter().filter(|r| r.value == 10.0).all(|r| r.geometries == 1 && r.mean > 0.0));
    assert!(summary.iter().filter(|r| r.value == -200.0).all(|r| r.geometries == 0 && r.mean.is_nan()));
}

#[test]
fn summary_combines_geometries() {
    let row = |g: usize, mean: f64, se: f64| ResultRow {
        value: 1.0,
        scheme: Scheme::Cap,
        csi: Csi::Perfect,
        cluster_size: None,
        geometry: g,
        mean,
        std_error: se,
        samples: 10,
        status: "ok".into(),
    };
    let mut bad = row(2, 0.0, 0.0);
    bad.status = "solver failed".into();
    let s = summarize(&[row(0, 1.0, 0.3), row(1, 3.0, 0.4), bad]);
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].geometries, 2);
    assert!((s[0].mean - 2.0).abs() < 1e-12);
    assert!((s[0].std_error - 0.25).abs() < 1e-12);
}

#[test]
fn empty_tables_are_not_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = SweepOutput { rows: vec![], timings: vec![] };
    assert!(emit_results(&tiny(), &out, dir.path()).is_err());
}
