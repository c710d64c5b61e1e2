use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use windcast::field::FieldFormat;
use windcast_cli::config::PipelineConfig;
use windcast_cli::lock::LOCK_FILE;
use windcast_cli::manifest::{Manifest, Status};
use windcast_cli::pipeline::{run_pipeline, Action, RunSummary, STAGES, SUMMARY_FILE};
use windcast_cli::sample::synthetic_wind;

const SMALL_CONFIG: &str = r#"
[run]
output_dir = "run"
seed = 5

[data]
source = "files"
field = "speeds.csv"
locations = "locations.csv"

[trend]
enabled = true
periods = [24.0]

[forecast]
n_train = 200
max_lead = 2

[knots]
n_red = 6

[esn]
m = 1
lambda = 10.0
batch = 12

[[esn.layers]]
n_h = 12
n_reduced = 12
nu = 0.2
eta_w = 0.1
eta_in = 0.1
pi_w = 0.2
pi_in = 0.3

[spde]
mesh_vertices = 60
fit_snapshots = 20
max_evals = 150

[calibrate]
level = 0.9
levels = [0.8, 0.9]
delta_step = 0.25
delta_max = 0.5

[power]
curve = "builtin:nordex-like"
"#;

struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        Self::with_config(SMALL_CONFIG)
    }

    fn with_config(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        let field = synthetic_wind(3, 260, 9).unwrap();
        field.write(dir.join("speeds.csv"), FieldFormat::Csv).unwrap();
        field.locations().write_csv(dir.join("locations.csv")).unwrap();
        std::fs::write(dir.join("config.toml"), config).unwrap();
        Self { _tmp: tmp, dir }
    }

    fn config_path(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    fn config(&self) -> PipelineConfig {
        let text = std::fs::read_to_string(self.config_path()).unwrap();
        PipelineConfig::from_str_with(&text, &self.dir, Vec::new()).unwrap()
    }

    fn run_dir(&self) -> PathBuf {
        self.dir.join("run")
    }

    fn cli(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_windcast"))
            .args(args)
            .current_dir(&self.dir)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

fn ran(summary: &RunSummary) -> Vec<&str> {
    summary.ran()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn second_run_is_fully_cached_and_deletions_rerun_only_descendants() {
    let ws = Workspace::new();
    let cfg = ws.config();

    let first = run_pipeline(&cfg, false).unwrap();
    assert_eq!(ran(&first), STAGES.to_vec());
    assert!(ws.run_dir().join(SUMMARY_FILE).exists());
    assert_eq!(first.forecasts.len(), 2);

    let second = run_pipeline(&cfg, false).unwrap();
    assert!(ran(&second).is_empty(), "nothing should be recomputed: {:?}", second.stages);
    assert!(second.stages.iter().all(|s| s.action == Action::Cached));

    std::fs::remove_file(ws.run_dir().join("knots/knots.csv")).unwrap();
    let third = run_pipeline(&cfg, false).unwrap();
    assert_eq!(ran(&third), vec!["knots", "esn", "spde", "calibrate", "power"]);
    assert_eq!(third.action("trend"), Some(Action::Cached));

    // A changed byte in an output counts as a stale stage.
    let model = ws.run_dir().join("spde/model.bin");
    let mut bytes = std::fs::read(&model).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&model, bytes).unwrap();
    let fourth = run_pipeline(&cfg, false).unwrap();
    assert_eq!(ran(&fourth), vec!["spde", "calibrate", "power"]);

    // A config edit reruns only the stages that read that section.
    let mut edited = cfg.clone();
    edited.power.price_usd_per_mwh = 55.0;
    let fifth = run_pipeline(&edited, false).unwrap();
    assert_eq!(ran(&fifth), vec!["power"]);

    let forced = run_pipeline(&edited, true).unwrap();
    assert_eq!(ran(&forced), STAGES.to_vec());
}

#[test]
fn cli_run_then_report_writes_the_documented_tables() {
    let ws = Workspace::new();
    let out = ws.cli(&["run", "--config", "config.toml"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for lead in 1..=2 {
        assert!(ws.run_dir().join(format!("spde/forecast_lead{lead}.csv")).exists());
    }

    let out = ws.cli(&["report", "--run", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = ws.run_dir().join("report");
    assert_eq!(
        first_line(&report.join("mspe_table.csv")),
        "method,lead_1_median,lead_1_iqr,lead_2_median,lead_2_iqr"
    );
    let table = std::fs::read_to_string(report.join("mspe_table.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("B-ESN,")));
    assert!(table.lines().any(|l| l.starts_with("PER,")));
    assert_eq!(first_line(&report.join("error_map.csv")), "location,x,y,lead,mspe_model,mspe_persistence");
    // 9 locations at each of 2 leads plus the header.
    assert_eq!(std::fs::read_to_string(report.join("error_map.csv")).unwrap().lines().count(), 19);
    assert!(first_line(&report.join("coverage_table.csv")).starts_with("lead,expected,calibrated_median"));
    assert_eq!(
        first_line(&report.join("energy_table.csv")),
        "model,lead_1_kwh,lead_2_kwh,total_kwh,total_cost_usd"
    );
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(index["absent"].as_array().unwrap().len(), 0);
}

#[test]
fn unknown_config_field_exits_with_code_2() {
    let ws = Workspace::with_config(&SMALL_CONFIG.replace("n_red = 6", "n_red = 6\nbogus = 1"));
    let out = ws.cli(&["run", "--config", "config.toml"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn missing_config_and_bad_override_exit_with_code_2() {
    let ws = Workspace::new();
    let out = ws.cli(&["run", "--config", "nope.toml"]);
    assert_eq!(code(&out), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_windcast"))
        .args(["run", "--config", "config.toml"])
        .current_dir(&ws.dir)
        .env("WINDCAST__KNOTS__N_RED", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn degenerate_geometry_exits_with_code_3_and_blocks_later_stages() {
    let ws = Workspace::new();
    // Put every site on one line: the mesh cannot be triangulated.
    let text = std::fs::read_to_string(ws.dir.join("locations.csv")).unwrap();
    let mut lines = text.lines();
    let mut collinear = format!("{}\n", lines.next().unwrap());
    for (i, line) in lines.enumerate() {
        let id = line.split(',').next().unwrap();
        collinear.push_str(&format!("{id},{},0.5\n", i as f64 * 0.1));
    }
    std::fs::write(ws.dir.join("locations.csv"), collinear).unwrap();

    let out = ws.cli(&["run", "--config", "config.toml"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("stage spde failed"));

    let manifest = Manifest::load(&ws.run_dir()).unwrap();
    assert_eq!(manifest.get("esn").unwrap().status, Status::Ok);
    assert_eq!(manifest.get("spde").unwrap().status, Status::Failed);
    assert_eq!(manifest.get("calibrate").unwrap().status, Status::Blocked);
    assert_eq!(manifest.get("power").unwrap().status, Status::Blocked);
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(ws.run_dir().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(summary.error.is_some());
}

#[test]
fn corrupt_input_exits_with_code_4() {
    let ws = Workspace::new();
    let text = std::fs::read_to_string(ws.dir.join("speeds.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[3] = lines[3].replacen(',', ",not-a-number,", 1);
    std::fs::write(ws.dir.join("speeds.csv"), lines.join("\n")).unwrap();
    let out = ws.cli(&["run", "--config", "config.toml"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));

    let out = ws.cli(&["esn", "forecast", "--model", "missing.bin", "--series", "speeds.csv", "--out", "x"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn a_held_lock_refuses_a_second_run() {
    let ws = Workspace::new();
    std::fs::create_dir_all(ws.run_dir()).unwrap();
    std::fs::write(ws.run_dir().join(LOCK_FILE), "12345\n").unwrap();
    let out = ws.cli(&["run", "--config", "config.toml"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("locked"));
    // The lock belongs to someone else and must survive.
    assert!(ws.run_dir().join(LOCK_FILE).exists());
    assert!(!ws.run_dir().join("trend").exists());
}

#[test]
fn lock_is_released_after_a_run() {
    let ws = Workspace::new();
    let out = ws.cli(&["trend", "--config", "config.toml"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!ws.run_dir().join(LOCK_FILE).exists());
    assert!(ws.run_dir().join("trend/residuals.bin").exists());
    assert!(!ws.run_dir().join("knots").exists());
}

#[test]
fn lorenz_bench_records_feed_the_boxplot_report() {
    let ws = Workspace::new();
    std::fs::write(
        ws.dir.join("bench.toml"),
        r#"
max_lead = 2
[system]
n = 16
n_times = 300
n_train = 240
transient = 100
[esn]
lambda = 1.0
batch = 10
[[esn.layers]]
n_h = 20
n_reduced = 20
nu = 0.5
eta_w = 0.1
eta_in = 0.1
pi_w = 0.2
pi_in = 0.2
"#,
    )
    .unwrap();
    let out = ws.cli(&["bench", "lorenz96", "--config", "bench.toml", "--nsim", "2", "--seed", "4", "--out", "bench"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["records.json", "records.csv", "summary.json"] {
        assert!(ws.dir.join("bench").join(f).exists(), "{f}");
    }
    let out = ws.cli(&["report", "--run", "bench", "--out", "bench-report"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let boxplot = std::fs::read_to_string(ws.dir.join("bench-report/boxplot.csv")).unwrap();
    assert_eq!(boxplot.lines().next().unwrap(), "method,lead,seed,mspe");
    // 4 methods, 2 leads, 2 replicates.
    assert_eq!(boxplot.lines().count(), 1 + 4 * 2 * 2);
}
