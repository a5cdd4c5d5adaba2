use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spine::data::{load_csv, CsvSchema};
use spine::train::{evaluate, Loss};
use spine::Model;

fn spine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spine"))
        .args(args)
        .env_remove("SPINE_THREADS")
        .output()
        .expect("spawn spine")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(o: &Output, key: &str) -> f64 {
    let text = stdout(o);
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in output:\n{text}"));
    line.parse().unwrap()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> String {
        self.0.path().join(name).to_str().unwrap().to_string()
    }
}

fn sim_data(dir: &Dir) -> String {
    let p = dir.path("sim.csv");
    ok(spine(&["gen", "sim-reg", "--n", "200", "--noise", "0.1", "--seed", "7", "--out", &p]));
    p
}

fn trained(dir: &Dir, data: &str, epochs: &str) -> String {
    let m = dir.path(&format!("model{epochs}.json"));
    ok(spine(&[
        "train", "--data", data, "--structure", "head = uniform(lin, 4, 2)", "--a", "10", "--epochs", epochs,
        "--seed", "1", "--model-out", &m,
    ]));
    m
}

#[test]
fn train_prints_metrics_and_writes_outputs() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    let (m, h) = (dir.path("m.json"), dir.path("h.csv"));
    let o = ok(spine(&[
        "train", "--data", &data, "--structure", "head = uniform(lin, 4, 2)", "--a", "10", "--epochs", "200",
        "--model-out", &m, "--history-out", &h, "--split", "0.8",
    ]));
    assert!(value(&o, "best_mse_z") < value(&o, "final_mse_z") + 1e-12);
    assert!(value(&o, "test_mse_z").is_finite());
    let history = std::fs::read_to_string(&h).unwrap();
    assert!(history.starts_with("epoch,loss,metric\n"));
    assert_eq!(history.lines().count(), 201);
    Model::load(&m).unwrap();
}

#[test]
fn same_seed_same_output() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    let run = |threads: &str| {
        stdout(&ok(spine(&[
            "--threads", threads, "train", "--data", &data, "--structure", "head = uniform(sin, 3, 2)", "--epochs",
            "50", "--batch", "70", "--seed", "3",
        ])))
    };
    assert_eq!(run("1"), run("1"));
    assert_eq!(run("1"), run("2"));
}

#[test]
fn untrained_model_evaluates_to_its_baseline() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    let m = trained(&dir, &data, "0");
    let o = ok(spine(&["eval", "--model", &m, "--data", &data]));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let model = Model::load(&m).unwrap();
    let ds = load_csv(&data, &CsvSchema::default()).unwrap();
    let e = evaluate(&model, &ds, Loss::Mse).unwrap();
    assert_eq!(row[0], "data");
    assert_eq!(row[2].parse::<f64>().unwrap(), e.loss);
    assert_eq!(row[3].parse::<f64>().unwrap(), e.mse_z.unwrap());
}

#[test]
fn eval_against_noiseless_adds_a_row() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    let clean = dir.path("clean.csv");
    ok(spine(&["gen", "sim-reg", "--n", "200", "--noiseless", "--out", &clean]));
    let m = trained(&dir, &data, "100");
    let o = ok(spine(&["eval", "--model", &m, "--data", &data, "--against", &clean]));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("against,200,"));

    let other = dir.path("other.csv");
    ok(spine(&["gen", "sim-reg", "--n", "50", "--out", &other]));
    let o = spine(&["eval", "--model", &m, "--data", &data, "--against", &other]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_flags_and_typed_flags_win() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    let cfg = dir.path("run.toml");
    let h = dir.path("h.csv");
    std::fs::write(
        &cfg,
        format!("data = \"{data}\"\nstructure = \"head = uniform(lin, 2, 2)\"\nepochs = 30\nhistory_out = \"{h}\"\n"),
    )
    .unwrap();
    ok(spine(&["--config", &cfg, "train"]));
    assert_eq!(std::fs::read_to_string(&h).unwrap().lines().count(), 31);
    ok(spine(&["--config", &cfg, "train", "--epochs", "5"]));
    assert_eq!(std::fs::read_to_string(&h).unwrap().lines().count(), 6);
}

#[test]
fn exit_codes_separate_usage_data_and_divergence() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    assert_eq!(spine(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(spine(&["train", "--data", &data, "--structure", "head = (lin"]).status.code(), Some(1));
    let missing = dir.path("missing.csv");
    let o = spine(&["train", "--data", &missing, "--structure", "head = (lin)"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    let o = spine(&["train", "--data", &data, "--structure", "head = uniform(quad, 2, 2)", "--lr", "1e300", "--epochs", "50"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(spine(&["--help"]).status.code(), Some(0));
}

#[test]
fn analysis_modes_write_their_files() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    let m = trained(&dir, &data, "100");
    for (mode, extra) in [("saliency", "agreement"), ("active", "expressed_components"), ("components", "grid_points")] {
        let out = dir.path(&format!("{mode}.out"));
        let o = ok(spine(&["analyze", "--model", &m, "--data", &data, "--mode", mode, "--out", &out, "--bins", "40"]));
        assert!(value(&o, extra).is_finite());
        assert!(Path::new(&out).metadata().unwrap().len() > 0);
    }
    let out = dir.path("perturb.csv");
    let o = ok(spine(&[
        "analyze", "--model", &m, "--data", &data, "--mode", "perturb", "--out", &out, "--bins", "20", "--draws", "8",
    ]));
    let local = value(&o, "mean_locality");
    assert!((0.0..=1.0).contains(&local));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + Model::load(&m).unwrap().theta.len());
}

#[test]
fn distill_and_target_report_before_and_after() {
    let dir = Dir::new();
    let data = sim_data(&dir);
    let m = trained(&dir, &data, "200");
    let out = dir.path("mm.json");
    let o = ok(spine(&["distill", "--model", &m, "--data", &data, "--epochs", "5", "--out", &out]));
    assert!(value(&o, "maxmin_after_loss").is_finite() && value(&o, "logexp_loss").is_finite());
    assert_eq!(Model::load(&out).unwrap().form, spine::Form::MaxMin);

    let (grown, report) = (dir.path("grown.json"), dir.path("report.csv"));
    let o = ok(spine(&[
        "target", "--model", &m, "--data", &data, "--auto", "--epochs", "20", "--out", &grown, "--report", &report,
    ]));
    assert!(value(&o, "replicated") >= 1.0);
    assert!(value(&o, "region_loss_after").is_finite());
    assert!(Model::load(&grown).unwrap().structure.polytopes.len() > Model::load(&m).unwrap().structure.polytopes.len());
    assert!(std::fs::read_to_string(&report).unwrap().starts_with("set,n,loss_before,loss_after\n"));

    let o = ok(spine(&["target", "--model", &m, "--data", &data, "--region", "x0:0.2:0.4", "--epochs", "5"]));
    assert!(stdout(&o).contains("region=x0:0.2:0.4"));
    assert_eq!(spine(&["target", "--model", &m, "--data", &data]).status.code(), Some(1));
}

#[test]
fn gen_writes_to_stdout_and_spiral_is_labelled() {
    let o = ok(spine(&["gen", "spiral", "--n", "10", "--seed", "1"]));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 21);
    let dir = Dir::new();
    let p = PathBuf::from(dir.path("s.csv"));
    std::fs::write(&p, &text).unwrap();
    let ds = load_csv(&p, &CsvSchema::default()).unwrap();
    assert_eq!(ds.num_classes(), Some(2));
}

#[test]
fn demo_counts_components() {
    let o = ok(spine(&["demo-maxmin-failure", "--epochs", "30", "--n", "200", "--unions", "4", "--intersections", "2"]));
    assert_eq!(value(&o, "components"), 8.0);
    assert!(value(&o, "maxmin_expressed") <= 8.0 && value(&o, "logexp_expressed") <= 8.0);
}
