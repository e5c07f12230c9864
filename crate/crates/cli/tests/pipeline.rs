use std::path::{Path, PathBuf};
use std::process::Command;

use sparse_stein_cli::config::{parse_config, parse_config_str, ExperimentConfig};
use sparse_stein_cli::pipeline::*;

const SMALL: &str = r#"
problem = "hyperelasticity"

[data]
count = 20

[architecture]
hidden = [5, 5]

[map]
epochs = 100

[inference]
particles = 5
iterations = 20

[evaluate]
path_points = 21
replicates = 50
"#;

const DEMO: &str = r#"
problem = "gaussian-demo"

[inference]
particles = 20
iterations = 100
lr = 0.05

[demo]
reference_samples = 2000
"#;

fn small(dir: &Path) -> ExperimentConfig {
    let mut c = parse_config_str(SMALL).unwrap();
    c.output_dir = dir.to_path_buf();
    c
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparse-stein"));
    c.env_remove("SPARSE_STEIN_OUTPUT_DIR").env_remove("SPARSE_STEIN_THREADS");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn identical_config_gives_identical_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_pipeline(&small(&tmp.path().join("a"))).unwrap();
    let b = run_pipeline(&small(&tmp.path().join("b"))).unwrap();
    assert_eq!(a.files, b.files);
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(a.files.len(), 6);
    for (name, hash) in &a.files {
        assert_eq!(&file_hash(&tmp.path().join("a").join(name)).unwrap(), hash);
    }
}

#[test]
fn rerun_reuses_completed_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let first = run_pipeline(&cfg).unwrap();
    let second = run_pipeline(&cfg).unwrap();
    assert!(second.stages.iter().all(|s| s.skipped));
    assert_eq!(first.files, second.files);

    let mut changed = cfg.clone();
    changed.evaluate.replicates = 60;
    let third = run_pipeline(&changed).unwrap();
    let rerun: Vec<&str> = third.stages.iter().filter(|s| !s.skipped).map(|s| s.name.as_str()).collect();
    assert_eq!(rerun, ["evaluate"]);
}

#[test]
fn tampered_artifact_is_rebuilt() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let first = run_pipeline(&cfg).unwrap();
    std::fs::write(tmp.path().join(SAMPLES_FILE), "garbage\n").unwrap();
    let second = run_pipeline(&cfg).unwrap();
    let rerun: Vec<&str> = second.stages.iter().filter(|s| !s.skipped).map(|s| s.name.as_str()).collect();
    assert_eq!(rerun, ["sample"]);
    assert_eq!(first.files, second.files);
}

#[test]
fn manifest_records_seeds_and_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_pipeline(&small(tmp.path())).unwrap();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["generate", "train-map", "sparsify", "sample", "evaluate"]);
    assert!(m.stages.iter().all(|s| s.seconds >= 0.0));
    assert_eq!(m.seeds["noise"], 7);
    assert_eq!(read_manifest(tmp.path()).unwrap(), m);
}

#[test]
fn gaussian_demo_emits_samples_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = parse_config_str(DEMO).unwrap();
    cfg.output_dir = tmp.path().to_path_buf();
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.files.len(), 2);
    let table = std::fs::read_to_string(tmp.path().join(DEMO_TABLE_FILE)).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "coordinate,mean,stdev,reference_mean,reference_stdev,w1");
    assert_eq!(lines.len(), 4);
}

#[test]
fn stage_failure_names_stage_and_keeps_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    // a huge L0 penalty closes every gate
    cfg.regularizer.lambda = 1e6;
    cfg.map.epochs = 300;
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, "sparsify");
    assert!(tmp.path().join(DATA_FILE).exists());
    assert!(tmp.path().join(MAP_FILE).exists());
    let m = read_manifest(tmp.path()).unwrap();
    assert_eq!(m.stages.len(), 2);
}

#[test]
fn isolated_stages_reproduce_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let config = write_config(tmp.path(), SMALL);
    let status = bin().args(["run", "-c"]).arg(&config).arg("--output-dir").arg(&full).status().unwrap();
    assert!(status.success());
    let m = read_manifest(&full).unwrap();

    // each stage sees only its declared inputs, copied into a fresh directory
    let steps: [(&str, &[&str], &str); 5] = [
        ("generate", &[], DATA_FILE),
        ("train-map", &[DATA_FILE], MAP_FILE),
        ("sparsify", &[MAP_FILE], SPARSE_FILE),
        ("sample", &[DATA_FILE, SPARSE_FILE], SAMPLES_FILE),
        ("evaluate", &[DATA_FILE, SPARSE_FILE, SAMPLES_FILE], TABLE_FILE),
    ];
    for (stage, inputs, output) in steps {
        let iso = tempfile::tempdir().unwrap();
        for f in inputs {
            std::fs::copy(full.join(f), iso.path().join(f)).unwrap();
        }
        let out = bin().arg(stage).arg("-c").arg(&config).arg("--output-dir").arg(iso.path()).output().unwrap();
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(file_hash(&iso.path().join(output)).unwrap(), m.files[output], "{stage}");
    }
}

#[test]
fn exit_codes_distinguish_config_and_stage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "problem = \"hyperelasticity\"\n[regularizer]\nlambda = -1.0\n");
    let out = bin().args(["run", "-c"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    let good = write_config(tmp.path(), SMALL);
    let out = bin()
        .arg("train-map")
        .arg("-c")
        .arg(&good)
        .arg("--output-dir")
        .arg(tmp.path().join("empty"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-map"));
}

#[test]
fn output_dir_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), DEMO);
    let target = tmp.path().join("from-env");
    let status = bin()
        .args(["run", "-c"])
        .arg(&config)
        .env("SPARSE_STEIN_OUTPUT_DIR", &target)
        .env("SPARSE_STEIN_THREADS", "1")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(target.join(MANIFEST_FILE).exists());
}

#[test]
fn plot_subcommand_writes_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("t.csv");
    std::fs::write(&table, "gamma,mean,stdev,w1\n0,1,0.1,0.2\n1,2,0.1,0.3\n").unwrap();
    let svg = tmp.path().join("t.svg");
    let status = bin().arg("plot").arg("--table").arg(&table).args(["--kind", "band", "-o"]).arg(&svg).status().unwrap();
    assert!(status.success());
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    std::fs::write(&table, "gamma,mean\n").unwrap();
    let out = bin().arg("plot").arg("--table").arg(&table).arg("-o").arg(&svg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reference_hyperelasticity_run_emits_path_table() {
    let tmp = tempfile::tempdir().unwrap();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/hyperelasticity.toml");
    let mut cfg = parse_config(&path).unwrap();
    cfg.output_dir = tmp.path().to_path_buf();
    let m = run_pipeline(&cfg).unwrap();
    let table = std::fs::read_to_string(tmp.path().join(TABLE_FILE)).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("gamma,mean,stdev,w1"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), cfg.evaluate.path_points);
    assert!(rows.iter().all(|r| r.len() == 4 && r[2] >= 0.0 && r[3] >= 0.0));
    let svg = std::fs::read_to_string(tmp.path().join(PLOT_FILE)).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polygon"));
    assert!(m.files.contains_key(PLOT_FILE));
}
