use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
[system]
preset = "ou"
gamma = 1.0
eta = 0.6
b = 0.2

[cost]
horizon = 0.5
q = [0.1]
r = [0.1]
q_terminal = [0.001]

[codec]
family = "width"
phi = 0.1
delta_theta = 0.05
p = 0.5

[codec.grid]
min = 0.2
max = 2.0
points = 3

[run]
dt = 0.001
n_samples = 40
seed = 5

[mmse]
n_samples = 4
burn_in = 0.2
window = 0.5

[demo]
episodes = 6

[observation]
f = [[1.0]]
g = [[0.5]]
"#;

struct Run {
    dir: tempfile::TempDir,
    out: PathBuf,
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn invoke(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskcode"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn run_ok(cmd: &str, text: &str, extra: &[&str]) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let output = invoke(cmd, &config, &out, extra);
    assert!(output.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&output.stderr));
    Run { dir, out }
}

fn exit_code(cmd: &str, text: &str) -> i32 {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), text);
    invoke(cmd, &config, &dir.path().join("out"), &[]).status.code().unwrap()
}

/// Header names and data rows of a table, skipping the `#` block.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (header, rows) = table(path);
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    rows.into_iter().map(|r| r[i].clone()).collect()
}

fn lookup(path: &Path, key: &str) -> String {
    let (_, rows) = table(path);
    rows.into_iter().find(|r| r[0] == key).unwrap_or_else(|| panic!("no key {key}"))[1].clone()
}

#[test]
fn riccati_table_spans_the_grid_and_ends_at_terminal_cost() {
    let run = run_ok("riccati", BASE, &[]);
    let path = run.out.join("riccati.csv");
    let (header, rows) = table(&path);
    assert_eq!(header, ["t", "s_0_0", "noise_integral"]);
    assert_eq!(rows.len(), 501);
    let last = rows.last().unwrap();
    assert_eq!(last[0].parse::<f64>().unwrap(), 0.5);
    assert_eq!(last[1].parse::<f64>().unwrap(), 0.001);
    assert_eq!(last[2].parse::<f64>().unwrap(), 0.0);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# config_sha256 = ")));
    assert!(run.out.join("manifest.toml").exists());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let first = run_ok("sweep-width", BASE, &[]);
    let curve = first.out.join("curve.csv");
    let text = std::fs::read_to_string(&curve).unwrap();
    let echoed: String = text
        .lines()
        .skip_while(|l| *l != "# --- config ---")
        .skip(1)
        .take_while(|l| *l != "# --- end config ---")
        .map(|l| format!("{}\n", l.strip_prefix("# ").unwrap_or("")))
        .collect();
    let second = run_ok("sweep-width", &echoed, &[]);
    for name in ["curve.csv", "summary.csv", "manifest.toml"] {
        assert_eq!(
            std::fs::read(first.out.join(name)).unwrap(),
            std::fs::read(second.out.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let _ = (first.dir, second.dir);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let a = run_ok("filter-demo", BASE, &["--seed", "5"]);
    let b = run_ok("filter-demo", BASE, &[]);
    let c = run_ok("filter-demo", BASE, &["--seed", "6"]);
    let read = |r: &Run| std::fs::read(r.out.join("episode.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn filter_demo_tables_are_consistent() {
    let run = run_ok("filter-demo", BASE, &[]);
    let episode = run.out.join("episode.csv");
    let (header, rows) = table(&episode);
    assert_eq!(header, ["t", "x0", "mu0", "sigma0", "u0", "spikes"]);
    assert_eq!(rows.len(), 501);
    let spikes: usize = column(&episode, "spikes").iter().map(|s| s.parse::<usize>().unwrap()).sum();
    let coverage = run.out.join("coverage.csv");
    assert_eq!(column(&coverage, "spikes")[0].parse::<usize>().unwrap(), spikes);
    assert_eq!(column(&coverage, "episode").len(), 6);
    let summary = run.out.join("demo_summary.csv");
    assert_eq!(lookup(&summary, "episodes"), "6");
    let rate: f64 = lookup(&summary, "population_rate").parse().unwrap();
    assert!((rate - (2.0 * std::f64::consts::PI).sqrt() * 0.5 * 0.1 / 0.05).abs() < 1e-9);
}

#[test]
fn silent_channels_carry_no_information() {
    let silent = BASE.replace("phi = 0.1", "phi = 0.0").replace("f = [[1.0]]", "f = [[0.0]]");
    let text = format!("{silent}\n[mi]\nmode = \"time\"\ntimes = [0.1, 0.3, 0.5]\n");
    let run = run_ok("mi", &text, &[]);
    let mi = run.out.join("mi.csv");
    for name in ["mi_poisson", "mi_poisson_std_err", "mi_kalman"] {
        let values = column(&mi, name);
        assert_eq!(values.len(), 3);
        assert!(values.iter().all(|v| v.parse::<f64>().unwrap() == 0.0), "{name}: {values:?}");
    }
}

#[test]
fn mi_grid_matches_sweep_column() {
    let text = format!("{BASE}\n[mi]\nmode = \"grid\"\n");
    let mi = run_ok("mi", &text, &[]);
    let sweep = run_ok("sweep-width", &text, &[]);
    assert_eq!(column(&mi.out.join("mi.csv"), "mi_poisson"), column(&sweep.out.join("curve.csv"), "mi"));
}

#[test]
fn sweep_writes_summary_and_plot() {
    let run = run_ok("sweep-width", BASE, &["--plot", "--method", "meanfield"]);
    let (_, rows) = table(&run.out.join("curve.csv"));
    assert_eq!(rows.len(), 3);
    let summary = run.out.join("summary.csv");
    assert_eq!(lookup(&summary, "method"), "meanfield");
    assert_eq!(lookup(&summary, "partial"), "false");
    let svg = std::fs::read_to_string(run.out.join("curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(!run.out.join("errors.csv").exists());
}

#[test]
fn record_times_is_opt_in() {
    let plain = run_ok("riccati", BASE, &[]);
    let timed = run_ok("riccati", BASE, &["--record-times"]);
    let manifest = |r: &Run| std::fs::read_to_string(r.out.join("manifest.toml")).unwrap();
    assert!(!manifest(&plain).contains("started_unix"));
    assert!(manifest(&timed).contains("started_unix"));
}

#[test]
fn malformed_configs_exit_with_two() {
    assert_eq!(exit_code("riccati", &BASE.replace("gamma = 1.0", "gamma = 1.0\ngama = 2.0")), 2);
    assert_eq!(exit_code("riccati", &BASE.replace("dt = 0.001", "dt = -0.001")), 2);
    assert_eq!(exit_code("riccati", "[system\n"), 2);
    assert_eq!(exit_code("sweep-aniso", BASE), 2);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(invoke("riccati", &missing, &dir.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn numerical_blow_up_exits_with_three() {
    let text = BASE.replace("q_terminal = [0.001]", "q_terminal = [1e13]");
    assert_eq!(exit_code("riccati", &text), 3);
}
