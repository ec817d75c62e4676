use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gibbslab::sampler::{sample_free_field, GaussianReference};
use gibbslab::{FourierField, Lattice, ModelSpec};
use gibbslab_cli::archive::{self, ArchiveError, ArchiveHeader};
use gibbslab_cli::config::ExperimentConfig;
use gibbslab_cli::report::Report;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gibbslab"));
    c.env_remove("GIBBSLAB_THREADS");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(format!("{name}.toml"));
    fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path) -> i32 {
    let out = bin().arg("run").arg(config).output().unwrap();
    out.status.code().unwrap_or(-1)
}

const GAUSSIAN: &str = r#"
kind = "sample"
seed = 4
[lattice]
n = 8
[model]
kind = "nls"
p = 4
lambda = 0.0
dim = 1
[sampler]
samples = 200
chains = 2
thin = 2
beta = 0.7
[output]
archive = "ens.gbl"
"#;

fn gp_samples(count: usize) -> (ArchiveHeader, Vec<FourierField>) {
    let lat = Lattice::square(4);
    let reference = GaussianReference::loop_measure(lat, 1.0);
    let samples: Vec<FourierField> = (0..count as u64).map(|i| sample_free_field(&reference, 9, i)).collect();
    let mut h = ArchiveHeader::new(lat, false, true, 9);
    h.reference = Some(reference);
    h.model = Some(ModelSpec::Gp {
        potential: gibbslab::Potential::cosine_pair(),
        lambda: 0.1,
        kappa: 0.0,
        rho: 1.0,
        b: 0.0,
    });
    (h, samples)
}

#[test]
fn gp_ensemble_roundtrips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gp.gbl");
    let (h, samples) = gp_samples(1000);
    archive::write(&path, &h, &samples).unwrap();
    let (back_h, back) = archive::read(&path).unwrap();
    assert_eq!(back_h.count, 1000);
    assert_eq!(back_h.model, h.model);
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }
}

#[test]
fn empty_ensemble_is_a_valid_archive() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.gbl");
    let (h, _) = gp_samples(0);
    archive::write(&path, &h, &[]).unwrap();
    let (back, samples) = archive::read(&path).unwrap();
    assert_eq!(back.count, 0);
    assert!(samples.is_empty());
    assert_eq!(bin().arg("inspect").arg(&path).status().unwrap().code(), Some(0));
}

#[test]
fn truncation_anywhere_is_a_checksum_error() {
    let (h, samples) = gp_samples(5);
    let bytes = archive::encode(&h, &samples).unwrap();
    // every cut past the fixed prefix must be caught, never a partial load
    for cut in (12..bytes.len()).step_by(37).chain([bytes.len() - 1]) {
        match archive::decode(&bytes[..cut]) {
            Err(ArchiveError::Checksum) => {}
            other => panic!("cut at {cut}: {:?}", other.map(|(h, s)| (h.count, s.len()))),
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.gbl");
    fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let out = bin().arg("inspect").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn free_sampler_accepts_everything_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gauss", GAUSSIAN);
    assert_eq!(run(&cfg), 0);
    let first = Report::read(&dir.path().join("gauss.json")).unwrap();
    assert_eq!(first.summary["acceptance"], serde_json::json!(1.0));
    assert_eq!(first.summary["samples"], serde_json::json!(200));
    assert_eq!(first.config_text, GAUSSIAN);
    assert_eq!(first.version, env!("CARGO_PKG_VERSION"));
    let csv1 = fs::read(dir.path().join("gauss.csv")).unwrap();
    let arc1 = fs::read(dir.path().join("ens.gbl")).unwrap();

    assert_eq!(run(&cfg), 0);
    let mut second = Report::read(&dir.path().join("gauss.json")).unwrap();
    second.created_unix = first.created_unix;
    assert_eq!(serde_json::to_string(&first).unwrap(), serde_json::to_string(&second).unwrap());
    assert_eq!(csv1, fs::read(dir.path().join("gauss.csv")).unwrap());
    assert_eq!(arc1, fs::read(dir.path().join("ens.gbl")).unwrap());

    let (h, samples) = archive::read(&dir.path().join("ens.gbl")).unwrap();
    assert_eq!(h.count, 200);
    assert_eq!(samples.len(), 200);
}

#[test]
fn lsi_at_half_threshold_passes() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
kind = "lsi"
seed = 7
[lattice]
n = 8
[model]
kind = "nls"
p = 4
lambda = 0.0027139602761340476
dim = 1
[domain]
kind = "mass_ball"
n = 4.0
[sampler]
samples = 2000
chains = 8
thin = 10
[lsi]
alpha = 0.5
"#;
    let cfg = write_config(dir.path(), "lsi", body);
    assert_eq!(run(&cfg), 0);
    let r = Report::read(&dir.path().join("lsi.json")).unwrap();
    assert_eq!(r.pass, Some(true));
    assert!(r.summary["alpha_hat"]["value"].as_f64().unwrap() > 0.5);
    // the same ensemble cannot support an absurd constant
    let cfg = write_config(dir.path(), "lsi-high", &body.replace("alpha = 0.5", "alpha = 100.0"));
    assert_eq!(run(&cfg), 1);
}

#[test]
fn schema_violations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "unknown", &GAUSSIAN.replace("beta = 0.7", "beta = 0.7\nbetta = 0.1"));
    let out = bin().arg("run").arg(&unknown).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("betta"));
    let missing = write_config(dir.path(), "missing", "kind = \"lsi\"\nseed = 1\n");
    assert_eq!(run(&missing), 2);
    let bad_kind = write_config(dir.path(), "kind", &GAUSSIAN.replace("\"sample\"", "\"plot\""));
    assert_eq!(run(&bad_kind), 2);
    assert_eq!(run(&dir.path().join("absent.toml")), 2);
    // nothing is written for rejected configs
    assert!(!dir.path().join("unknown.json").exists());
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // a strongly focusing flow with a coarse step leaves the implicit substep unable to settle
    let body = r#"
kind = "flow"
seed = 2
[lattice]
n = 8
[model]
kind = "nls"
p = 4
lambda = 200.0
dim = 1
[sampler]
samples = 4
chains = 1
thin = 1
beta = 1.0
[flow]
dt = 0.5
t_final = 1.0
nonlinear = "galerkin"
"#;
    let cfg = write_config(dir.path(), "blowup", body);
    assert_eq!(run(&cfg), 3);
}

#[test]
fn report_summarizes_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gauss", GAUSSIAN);
    assert_eq!(run(&cfg), 0);
    let body = r#"
kind = "convexity"
seed = 1
[lattice]
n = 8
[model]
kind = "kdv"
lambda = 0.1
[convexity]
pairs = 50
mass = 1.0
"#;
    assert_eq!(run(&write_config(dir.path(), "convex", body)), 0);
    fs::write(dir.path().join("unrelated.json"), "{\"x\": 1}").unwrap();
    let out = bin().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("convex\tconvexity"));
    assert!(text.contains("gauss\tsample"));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for e in fs::read_dir(&root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 10);
}
