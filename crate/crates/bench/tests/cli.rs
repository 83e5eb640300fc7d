use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pnlk_bench::record::TIMING_COLUMNS;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pnlk"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "pnlk {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn config(&self, name: &str, text: &str) -> String {
        std::fs::write(self.path(name), text).unwrap();
        name.to_string()
    }

    fn corpus(&self, count: usize) -> &'static str {
        self.ok(&["gen-corpus", "--dir", "corpus", "--count", &count.to_string()]);
        "corpus"
    }

    fn weights(&self) -> &'static str {
        self.ok(&["gen-weights", "--out", "w.pnlk", "--seed", "3"]);
        "w.pnlk"
    }
}

fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn table_file(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    table(&std::fs::read_to_string(path).unwrap())
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].clone()).collect()
}

fn without_timing(text: &str) -> Vec<Vec<String>> {
    let (header, rows) = table(text);
    let keep: Vec<usize> = (0..header.len())
        .filter(|i| !TIMING_COLUMNS.contains(&header[*i].as_str()))
        .collect();
    rows.iter().map(|r| keep.iter().map(|i| r[*i].clone()).collect()).collect()
}

const SMALL: &str = "[pair]\nn_points = 128\n";

#[test]
fn register_is_deterministic_apart_from_timing() {
    let ws = Workspace::new();
    let corpus = ws.corpus(2);
    let w = ws.weights();
    let cfg = ws.config("small.toml", SMALL);
    let template = format!("{corpus}/001_torus.off");
    for method in ["icp", "pointnetlk-float"] {
        let args = [
            "--config", &cfg, "--seed", "5", "register", "--template", &template, "--angle", "20", "--method", method,
            "--weights", w,
        ];
        let a = ws.ok(&args);
        let b = ws.ok(&args);
        assert_eq!(a.lines().count(), 2);
        assert_eq!(without_timing(&a), without_timing(&b), "{method}");
        let mut other = args;
        other[3] = "6";
        let c = ws.ok(&other);
        assert_ne!(without_timing(&a), without_timing(&c));
    }
}

#[test]
fn zero_angle_icp_is_exact_without_translation() {
    let ws = Workspace::new();
    let corpus = ws.corpus(3);
    let cfg = ws.config("still.toml", "[pair]\nn_points = 200\ntranslation_bound = 0.0\nresampling = \"shared\"\n");
    let out = ws.ok(&[
        "--config", &cfg, "register", "--template", &format!("{corpus}/002_cylinder.off"), "--angle", "0", "--method", "icp",
    ]);
    let (h, rows) = table(&out);
    let rot: f64 = column(&h, &rows, "rot_error_deg")[0].parse().unwrap();
    assert!(rot < 1e-6, "{rot}");
}

#[test]
fn quantized_and_float_rows_are_tagged() {
    let ws = Workspace::new();
    let corpus = ws.corpus(1);
    let w = ws.weights();
    let cfg = ws.config("small.toml", SMALL);
    let template = format!("{corpus}/000_ellipsoid.off");
    let quant = ws.ok(&[
        "--config", &cfg, "register", "--template", &template, "--method", "pointnetlk-quant", "--qbits", "16", "--weights", w,
    ]);
    let float = ws.ok(&["--config", &cfg, "register", "--template", &template, "--method", "pointnetlk-float", "--weights", w]);
    let (h, q) = table(&quant);
    let (_, f) = table(&float);
    assert_eq!(column(&h, &q, "method"), ["pointnetlk-quant"]);
    assert_eq!(column(&h, &q, "qformat"), ["16"]);
    assert_eq!(column(&h, &f, "method"), ["pointnetlk-float"]);
    assert_eq!(column(&h, &f, "qformat"), [""]);
}

#[test]
fn register_accepts_csv_clouds_without_ground_truth() {
    let ws = Workspace::new();
    let corpus = ws.corpus(1);
    let cfg = ws.config("small.toml", SMALL);
    ws.ok(&["--config", &cfg, "--out-dir", "pair", "gen-pair", "--template", &format!("{corpus}/000_ellipsoid.off"), "--angle", "10"]);
    for f in ["template.csv", "source.csv", "gt.csv"] {
        assert!(ws.path("pair").join(f).exists(), "{f}");
    }
    let out = ws.ok(&["register", "--template", "pair/template.csv", "--source", "pair/source.csv", "--method", "icp"]);
    let (h, rows) = table(&out);
    assert_eq!(column(&h, &rows, "rot_error_deg"), [""]);
    assert_eq!(column(&h, &rows, "n_points"), ["128"]);
}

#[test]
fn missing_inputs_fail_with_a_message() {
    let ws = Workspace::new();
    let corpus = ws.corpus(1);
    let out = ws.run(&["register", "--template", &format!("{corpus}/000_ellipsoid.off")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-weights"));

    let out = ws.run(&["quant-eval", "--corpus", corpus]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("gen-weights") && msg.contains("trainer"), "{msg}");

    std::fs::create_dir(ws.path("empty")).unwrap();
    let out = ws.run(&["sweep-angle", "--corpus", "empty", "--methods", "icp"]);
    assert!(!out.status.success());

    let out = ws.run(&["register", "--template", "nope.off", "--method", "icp"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.off"));
}

#[test]
fn sweep_has_one_row_per_method_and_angle() {
    let ws = Workspace::new();
    let corpus = ws.corpus(2);
    let w = ws.weights();
    let cfg = ws.config("tiny.toml", "[pair]\nn_points = 48\n[lk]\nmax_iterations = 3\n");
    let out = ws.ok(&[
        "--config", &cfg, "--out-dir", "o", "sweep-angle", "--corpus", corpus, "--weights", w, "--angles", "0,45,90",
        "--trials", "2",
    ]);
    let (h, rows) = table(&out);
    assert_eq!(rows.len(), 3 * 3);
    assert!(column(&h, &rows, "models").iter().all(|m| m == "2"));
    assert!(column(&h, &rows, "trials").iter().all(|t| t == "2"));
    assert_eq!(table_file(&ws.path("o/sweep_angle_runs.v1.csv")).1.len(), 3 * 3 * 2 * 2);
    assert_eq!(table_file(&ws.path("o/sweep_angle.v1.csv")).1, rows);
    let svg = std::fs::read_to_string(ws.path("o/sweep_angle_rot.svg")).unwrap();
    assert!(svg.contains("Per-model means"));

    let again = ws.ok(&[
        "--config", &cfg, "--jobs", "1", "--format", "csv", "--out-dir", "o2", "sweep-angle", "--corpus", corpus,
        "--weights", w, "--angles", "0,45,90", "--trials", "2",
    ]);
    assert_eq!(out, again);
    assert!(!ws.path("o2/sweep_angle_rot.svg").exists());
}

#[test]
fn icp_error_grows_with_initial_angle() {
    let ws = Workspace::new();
    let corpus = ws.corpus(20);
    let cfg = ws.config("icp.toml", "[pair]\nn_points = 256\n");
    let out = ws.ok(&["--config", &cfg, "--format", "csv", "sweep-angle", "--corpus", corpus, "--methods", "icp", "--angles", "10,80"]);
    let (h, rows) = table(&out);
    let err: Vec<f64> = column(&h, &rows, "mean_rot_error_deg").iter().map(|v| v.parse().unwrap()).collect();
    assert!(err[0] <= err[1], "{err:?}");
}

#[test]
fn quant_eval_rows_and_summary() {
    let ws = Workspace::new();
    let corpus = ws.corpus(2);
    let w = ws.weights();
    let cfg = ws.config("tiny.toml", "[pair]\nn_points = 64\n[lk]\nmax_iterations = 2\n");
    let out = ws.ok(&[
        "--config", &cfg, "--out-dir", "o", "quant-eval", "--corpus", corpus, "--weights", w, "--formats", "8,12,16",
        "--angles", "0,30",
    ]);
    let (h, rows) = table_file(&ws.path("o/quant_eval.v1.csv"));
    assert_eq!(rows.len(), 3 * 2);
    assert_eq!(column(&h, &rows, "total_bits"), ["16", "16", "24", "24", "32", "32"]);
    assert!(out.contains("# feature deviation non-increasing in n: yes"));
    assert!(ws.path("o/quant_eval_feature.svg").exists());
}

#[test]
fn scaling_writes_times_and_fit() {
    let ws = Workspace::new();
    let out = ws.ok(&["--out-dir", "o", "scaling", "--methods", "icp", "--sizes", "64,128,256"]);
    assert!(out.contains("# icp log-log slope"));
    let (h, rows) = table_file(&ws.path("o/scaling.v1.csv"));
    assert_eq!(rows.len(), 3);
    assert!(column(&h, &rows, "iterations").iter().all(|i| i == "20"));
    let secs: Vec<f64> = column(&h, &rows, "seconds").iter().map(|v| v.parse().unwrap()).collect();
    assert!(secs.iter().all(|s| *s > 0.0));
    assert_eq!(table_file(&ws.path("o/scaling_fit.v1.csv")).1.len(), 1);
    assert!(ws.path("o/scaling.svg").exists());

    assert!(!ws.run(&["scaling", "--methods", "icp", "--sizes", "64,128"]).status.success());
}

#[test]
fn profile_shares_sum_to_one_hundred() {
    let ws = Workspace::new();
    let out = ws.ok(&["--out-dir", "o", "profile", "--method", "icp", "--n-points", "2048"]);
    let (h, rows) = table(&out);
    let shares: Vec<f64> = column(&h, &rows, "share_pct").iter().map(|v| v.parse().unwrap()).collect();
    assert!((shares.iter().sum::<f64>() - 100.0).abs() <= 1.0);
    let phases = column(&h, &rows, "phase");
    let nn = shares[phases.iter().position(|p| p == "correspondence").unwrap()];
    assert!(nn > 50.0, "{nn}");
    assert_eq!(table_file(&ws.path("o/profile.v1.csv")).1, rows);
}

#[test]
fn accel_reports_bottleneck_and_infeasible_budgets() {
    let ws = Workspace::new();
    let out = ws.ok(&["--out-dir", "o", "accel", "--n-points", "1024"]);
    assert!(out.lines().any(|l| l.starts_with("FC(128,1024)") && l.contains("10.28") && l.contains("bottleneck")));
    let (h, rows) = table_file(&ws.path("o/accel_modules.v1.csv"));
    assert_eq!(rows.len(), 11);
    assert_eq!(column(&h, &rows, "bottleneck").iter().filter(|b| *b == "true").count(), 1);

    let (h, rows) = table_file(&ws.path("o/accel_ablation.v1.csv"));
    let total = |design: &str| -> f64 {
        let i = column(&h, &rows, "design").iter().position(|d| d == design).unwrap();
        column(&h, &rows, "total_us")[i].parse().unwrap()
    };
    assert!(total("naive") / total("inter-intra") > 30.0);

    ws.ok(&["--out-dir", "o2", "accel", "--n-points", "2048"]);
    let steady = |dir: &str| -> f64 {
        let (h, rows) = table_file(&ws.path(dir).join("accel_ablation.v1.csv"));
        let i = column(&h, &rows, "design").iter().position(|d| d == "inter-intra").unwrap();
        let t: f64 = column(&h, &rows, "total_us")[i].parse().unwrap();
        let fill: f64 = column(&h, &rows, "fill_us")[i].parse().unwrap();
        t - fill
    };
    let ratio = steady("o2") / steady("o");
    assert!((ratio - 2.0).abs() < 0.02, "{ratio}");

    let out = ws.ok(&["--out-dir", "o3", "accel", "--board", "ultra96v2", "--explore", "--span", "0"]);
    assert!(out.contains("infeasible"), "{out}");
    assert!(table_file(&ws.path("o3/accel_explore.v1.csv")).1.is_empty());
}

#[test]
fn weights_info_describes_generated_blob() {
    let ws = Workspace::new();
    ws.ok(&["gen-weights", "--out", "q.pnlk", "--width", "f64", "--qbits", "12"]);
    let out = ws.ok(&["weights-info", "--weights", "q.pnlk"]);
    assert!(out.contains("qformat Q12.11"), "{out}");
    assert!(out.contains("F64"));
    assert!(out.contains("128 -> 1024"));
    std::fs::write(ws.path("bad.pnlk"), b"PNLK").unwrap();
    assert!(!ws.run(&["weights-info", "--weights", "bad.pnlk"]).status.success());
}
