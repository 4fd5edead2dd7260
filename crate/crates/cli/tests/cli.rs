use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use ubd::audit::AuditReport;
use ubd::imaging::save_mask_channel;
use ubd::phantom::{cell_predictions, run_grid, CorpusConfig, PhantomCorpus};
use ubd::rca::RcaParams;
use ubd_cli::commands::{audit_results, estimate_dataset};
use ubd_cli::manifest::{load_dataset, Manifest};

const SMALL: &str = "[corpus]\nn_test = 8\nn_reference = 6\n";
const SEED: u64 = 11;

fn ubd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubd"))
        .args(args)
        .env_remove("UBD_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Exports the small phantom corpus into `data/`, optionally with the
    /// predictions of one grid cell.
    fn export(&self, cell: Option<&str>) -> Manifest {
        let (cfg, data, seed) = (self.path("small.toml"), self.path("data"), SEED.to_string());
        let mut args = vec![
            "gen-phantoms",
            "--config",
            s(&cfg),
            "--seed",
            &seed,
            "--out",
            s(&data),
        ];
        if let Some(c) = cell {
            args.extend(["--cell", c]);
        }
        ok(&ubd(&args));
        Manifest::read(&data.join("manifest.json")).unwrap()
    }

    fn write_manifest(&self, name: &str, m: &Manifest) -> PathBuf {
        let p = self.path("data").join(name);
        fs::write(&p, m.to_json()).unwrap();
        p
    }

    fn run(&self, cmd: &str, manifest: &Path, out: &str, extra: &[&str]) -> Output {
        let (cfg, out) = (self.path("small.toml"), self.path(out));
        let mut args = vec![
            cmd,
            "--manifest",
            s(manifest),
            "--config",
            s(&cfg),
            "--out",
            s(&out),
        ];
        args.extend(extra);
        ubd(&args)
    }
}

fn small_corpus() -> CorpusConfig {
    CorpusConfig {
        seed: SEED,
        n_test: 8,
        n_reference: 6,
        ..CorpusConfig::default()
    }
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn audit_through_cli_matches_in_process_api() {
    let ws = Workspace::new();
    ws.export(Some("12,3"));
    let manifest = ws.path("data/manifest.json");
    let stdout = ok(&ws.run("audit", &manifest, "out", &[]));
    assert!(
        stdout.contains("positive means sex=M is segmented better"),
        "{stdout}"
    );

    let ds = load_dataset(&manifest).unwrap();
    let results = estimate_dataset(&ds, &RcaParams::default()).unwrap();
    let expected = audit_results(&results, "sex", "M").unwrap();
    let written: AuditReport =
        serde_json::from_str(&fs::read_to_string(ws.path("out/audit.json")).unwrap()).unwrap();
    assert_eq!(written, expected);
    for f in [
        "audit.csv",
        "scatter.svg",
        "estimates.csv",
        "estimates.json",
    ] {
        assert!(ws.path("out").join(f).is_file(), "{f} missing");
    }
}

#[test]
fn exported_grid_cell_reproduces_in_process_gap_signs() {
    let ws = Workspace::new();
    let (i, j) = (12, 3);
    ws.export(Some(&format!("{i},{j}")));
    ok(&ws.run("audit", &ws.path("data/manifest.json"), "out", &[]));
    let written: AuditReport =
        serde_json::from_str(&fs::read_to_string(ws.path("out/audit.json")).unwrap()).unwrap();

    let corpus = PhantomCorpus::generate(&small_corpus()).unwrap();
    let grid = run_grid(
        &corpus.test,
        &corpus.reference_db().unwrap(),
        &RcaParams::default(),
        SEED,
    )
    .unwrap();
    let cell = grid.cell(i, j).unwrap();
    let truth = written.delta_true.as_ref().unwrap();
    for s in &grid.structures {
        assert_eq!(
            cell.delta_rca[s].signum(),
            written.delta_rca[s].signum(),
            "{s} estimated gap"
        );
        assert_eq!(
            cell.delta_true[s].signum(),
            truth[s].signum(),
            "{s} true gap"
        );
        // masks survive the PNG round trip exactly
        assert!((cell.delta_true[s] - truth[s]).abs() < 1e-12);
    }

    // exported predictions are exactly the in-process ones
    let preds = cell_predictions(&corpus.test, SEED, i, j).unwrap();
    let ds = load_dataset(&ws.path("data/manifest.json")).unwrap();
    for (case, pred) in ds.targets.iter().zip(&preds) {
        assert_eq!(case.prediction.as_ref().unwrap(), pred, "{}", case.id);
    }
}

#[test]
fn missing_image_fails_without_partial_output() {
    let ws = Workspace::new();
    let mut m = ws.export(Some("6,6"));
    m.cases[2].image = "images/nowhere.png".into();
    let manifest = ws.write_manifest("broken.json", &m);
    fs::create_dir_all(ws.path("out")).unwrap();
    fs::write(ws.path("out/estimates.csv"), "previous\n").unwrap();

    let out = ws.run("estimate", &manifest, "out", &[]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("nowhere.png") && stderr.contains(&m.cases[2].id),
        "{stderr}"
    );
    assert_eq!(
        fs::read_to_string(ws.path("out/estimates.csv")).unwrap(),
        "previous\n"
    );
    assert_eq!(fs::read_dir(ws.path("out")).unwrap().count(), 1);
}

#[test]
fn duplicated_reference_scores_near_one() {
    let ws = Workspace::new();
    let mut m = ws.export(None);
    let reference = m.cases.iter().find(|c| c.reference).unwrap().clone();
    m.cases.retain(|c| c.reference);
    let mut dup = reference.clone();
    dup.id = "duplicate".into();
    dup.reference = false;
    dup.prediction = reference.ground_truth.clone();
    dup.ground_truth.clear();
    m.cases.push(dup);
    let manifest = ws.write_manifest("dup.json", &m);

    ok(&ws.run("estimate", &manifest, "out", &["--k", "1"]));
    let mut rows = csv::Reader::from_path(ws.path("out/estimates.csv")).unwrap();
    let mut n = 0;
    for row in rows.records() {
        let row = row.unwrap();
        assert_eq!(&row[0], "duplicate");
        assert_eq!(&row[3], "1");
        let v: f64 = row[2].parse().unwrap();
        assert!(v >= 0.95, "{}: {v}", &row[1]);
        n += 1;
    }
    assert_eq!(n, 2);
    let json = read_json(ws.path("out/estimates.json"));
    assert_eq!(
        json[0]["per_reference"][0]["reference_id"],
        reference.id.as_str()
    );
}

#[test]
fn empty_predictions_score_zero() {
    let ws = Workspace::new();
    let mut m = ws.export(None);
    let blank = ws.path("data/blank.png");
    save_mask_channel(&blank, 64, 64, &vec![false; 64 * 64]).unwrap();
    for c in m.cases.iter_mut().filter(|c| !c.reference) {
        c.prediction = m
            .structures
            .iter()
            .map(|s| (s.clone(), "blank.png".into()))
            .collect();
    }
    let manifest = ws.write_manifest("blank.json", &m);
    ok(&ws.run("estimate", &manifest, "out", &[]));
    let text = fs::read_to_string(ws.path("out/estimates.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("case_id,structure,dsc_rca,k_used,aggregator")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 16);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[2], "0.0", "{row}");
        assert_eq!(fields[4], "mean");
    }
}

#[test]
fn audit_without_ground_truth_is_unsupervised() {
    let ws = Workspace::new();
    let mut m = ws.export(Some("10,4"));
    for c in m.cases.iter_mut().filter(|c| !c.reference) {
        c.ground_truth.clear();
    }
    let manifest = ws.write_manifest("nogt.json", &m);
    let stdout = ok(&ws.run("audit", &manifest, "out", &[]));
    assert!(!stdout.contains("delta_true"), "{stdout}");
    let json = read_json(ws.path("out/audit.json"));
    let obj = json.as_object().unwrap();
    for key in ["delta_true", "pearson_r", "sign_agreement", "fitted_slope"] {
        assert!(!obj.contains_key(key), "{key} present");
    }
    assert!(obj["delta_rca"]["lung"].is_f64());
    assert!(!ws.path("out/scatter.svg").exists());
    let csv = fs::read_to_string(ws.path("out/audit.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",,,"), "{csv}");
}

#[test]
fn identical_groups_have_zero_gap() {
    let ws = Workspace::new();
    let mut m = ws.export(Some("7,7"));
    let targets: Vec<_> = m.cases.iter().filter(|c| !c.reference).cloned().collect();
    m.cases.retain(|c| c.reference);
    for (sex, suffix) in [("M", "m"), ("F", "f")] {
        for t in &targets {
            let mut c = t.clone();
            c.id = format!("{}-{suffix}", t.id);
            c.attributes.insert("sex".into(), sex.into());
            m.cases.push(c);
        }
    }
    let manifest = ws.write_manifest("twins.json", &m);
    let stdout = ok(&ws.run("audit", &manifest, "out", &[]));
    for s in ["lung", "heart"] {
        let line = stdout
            .lines()
            .find(|l| l.trim_start().starts_with(s))
            .unwrap();
        assert!(
            line.contains("delta_rca +0.0000") && line.contains("delta_true +0.0000"),
            "{line}"
        );
    }
    let json = read_json(ws.path("out/audit.json"));
    assert_eq!(json["delta_rca"]["lung"], 0.0);
    assert_eq!(json["delta_rca"]["heart"], 0.0);
}

#[test]
fn input_errors_exit_one() {
    let ws = Workspace::new();
    ws.export(Some("6,6"));
    let manifest = ws.path("data/manifest.json");
    for extra in [
        &["--attribute", "age"][..],
        &["--positive-group", "X"],
        &["--k", "0"],
        &["--aggregator", "median"],
    ] {
        let out = ws.run("audit", &manifest, "out", extra);
        assert_eq!(out.status.code(), Some(1), "{extra:?}");
    }
    fs::write(ws.path("bad.toml"), "k = \"five\"\n").unwrap();
    let out = ubd(&[
        "synthetic-grid",
        "--config",
        s(&ws.path("bad.toml")),
        "--out",
        s(&ws.path("g")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!ws.path("out").exists() && !ws.path("g").exists());
}

#[test]
fn synthetic_grid_is_byte_identical_across_runs_and_threads() {
    let ws = Workspace::new();
    let cfg = ws.path("small.toml");
    let run = |out: &str, threads: &str| {
        let out = ws.path(out);
        ok(&ubd(&[
            "synthetic-grid",
            "--config",
            s(&cfg),
            "--seed",
            "5",
            "--threads",
            threads,
            "--out",
            s(&out),
        ]));
        out
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    for f in [
        "grid_true.csv",
        "grid_rca.csv",
        "summary.json",
        "heatmap_true.svg",
        "heatmap_rca.svg",
        "grid_scatter.svg",
    ] {
        let first = fs::read(a.join(f)).unwrap();
        assert_eq!(
            first,
            fs::read(b.join(f)).unwrap(),
            "{f} differs between runs"
        );
        assert_eq!(
            first,
            fs::read(c.join(f)).unwrap(),
            "{f} differs between thread counts"
        );
    }
    let text = fs::read_to_string(a.join("grid_true.csv")).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("structure,male_level,female_level,delta_true")
    );
    assert_eq!(text.lines().count(), 1 + 2 * 144);
    let summary = read_json(a.join("summary.json"));
    assert_eq!(summary["diagnostics"].as_array().unwrap().len(), 4);
    let thresholds: Vec<f64> = summary["diagnostics"][0]["sign_agreement"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["threshold"].as_f64().unwrap())
        .collect();
    assert_eq!(thresholds, [0.0, 0.01, 0.02]);
    // no stray staging directories
    assert_eq!(fs::read_dir(&a).unwrap().count(), 6);
}
