//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use ubd::audit::{audit, pearson, AuditCase};
use ubd::imaging::{
    affine_to_field, compose_fields, resample_image, warp_mask, AffineTransform2D,
    DisplacementField, Image, LabelMask,
};
use ubd::metrics::dsc;
use ubd::phantom::{
    degrade, generate_phantom, CorpusConfig, DegradationLevel, PhantomCorpus, PhantomSpec, Sex,
};
use ubd::rca::{Aggregator, PreparedAtlas, RcaParams};
use ubd::registration::{register, RegistrationConfig};

const N: usize = 64;
const CASE_BUDGET: Duration = Duration::from_secs(5);
const GRID_BUDGET: Duration = Duration::from_secs(30 * 60);
const GRID_THREADS: &str = "8";
const GRID_SEED: &str = "2023";
const THRESHOLDS: [f64; 3] = [0.0, 0.01, 0.02];
const MIN_AGREEMENT: [f64; 3] = [0.80, 0.85, 0.90];
const MIN_PEARSON: f64 = 0.7;
const AGGREGATOR_SLACK: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn phantom(seed: u64, sex: Sex) -> (Image, LabelMask) {
    generate_phantom(&PhantomSpec::new(seed, N, sex)).unwrap()
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> (T, Duration) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    pool.install(|| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    })
}

fn bump(cx: f64, cy: f64, amp: [f64; 2], sigma: f64) -> DisplacementField {
    DisplacementField::from_fn(N, N, |x, y| {
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        let g = (-r2 / (2.0 * sigma * sigma)).exp();
        [amp[0] * g, amp[1] * g]
    })
    .unwrap()
}

fn foreground_epe(mask: &LabelMask, a: &DisplacementField, b: &DisplacementField) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..N {
        for x in 0..N {
            if (0..mask.structures().len()).any(|c| mask.get(c, x, y)) {
                let ([ax, ay], [bx, by]) = (a.get(x, y), b.get(x, y));
                sum += (ax - bx).hypot(ay - by);
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn registration_recovery() -> Outcome {
    let cfg = RegistrationConfig::default();
    let mut pass = true;
    let mut notes = Vec::new();
    let mut slowest = Duration::ZERO;

    let (moving, _) = phantom(1, Sex::M);
    let fixed = resample_image(&moving, &DisplacementField::uniform(N, N, 3.0, -2.0)).unwrap();
    let (r, dt) = single_threaded(|| register(&moving, &fixed, &cfg).unwrap());
    let [tx, ty] = r.affine.translation();
    let err = (tx - 3.0).abs().max((ty + 2.0).abs());
    pass &= err <= 0.5;
    slowest = slowest.max(dt);
    notes.push(format!("translation ({tx:.2}, {ty:.2}) err {err:.2}px"));

    let (moving, _) = phantom(2, Sex::F);
    let rot = AffineTransform2D::from_rotation_degrees(5.0).unwrap();
    let fixed = resample_image(&moving, &affine_to_field(&rot, N, N)).unwrap();
    let (r, dt) = single_threaded(|| register(&moving, &fixed, &cfg).unwrap());
    let deg = r.affine.rotation_degrees();
    pass &= (deg - 5.0).abs() <= 1.0;
    slowest = slowest.max(dt);
    notes.push(format!("rotation {deg:.2} deg"));

    for (seed, sex) in [(3, Sex::M), (4, Sex::F)] {
        let (moving, mask) = phantom(seed, sex);
        let truth = bump(24.0, 30.0, [4.0, 0.0], 8.0);
        let fixed = resample_image(&moving, &truth).unwrap();
        let (r, dt) = single_threaded(|| register(&moving, &fixed, &cfg).unwrap());
        let epe = foreground_epe(&mask, &r.field, &truth);
        pass &= epe <= 1.0;
        slowest = slowest.max(dt);
        notes.push(format!("bump {sex} epe {epe:.3}px"));
    }
    pass &= slowest < CASE_BUDGET;
    notes.push(format!(
        "slowest case {:.2}s single-threaded",
        slowest.as_secs_f64()
    ));
    Outcome::new(pass, notes.join("; "))
}

fn rca_correlation() -> Outcome {
    let corpus = PhantomCorpus::generate(&CorpusConfig {
        n_test: 10,
        n_reference: 12,
        ..CorpusConfig::default()
    })
    .unwrap();
    let db = corpus.reference_db().unwrap();
    let params = RcaParams::default();
    let levels = [1u8, 3, 5, 7, 9, 12];
    let mut truth: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut estimate: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, case) in corpus.test.iter().enumerate() {
        let atlas = PreparedAtlas::new(&case.id, &case.image, &db, &params).unwrap();
        for &level in &levels {
            let pred = degrade(
                &case.mask,
                &DegradationLevel::schedule(level).unwrap(),
                100 + i as u64,
            );
            let t = dsc(&pred, &case.mask).unwrap();
            let e = atlas.score(&pred, &db, Aggregator::Mean).unwrap().aggregate;
            for (s, v) in t.per_structure() {
                truth.entry(s.clone()).or_default().push(*v);
                estimate
                    .entry(s.clone())
                    .or_default()
                    .push(e.get(s).unwrap());
            }
        }
    }
    let mut pass = true;
    let mut notes = Vec::new();
    for (s, t) in &truth {
        let r = pearson(t, &estimate[s]).unwrap_or(f64::NAN);
        pass &= t.len() >= 50 && r >= MIN_PEARSON;
        notes.push(format!("{s} r {r:.3} over {} pairs", t.len()));
    }
    Outcome::new(pass, notes.join("; "))
}

fn invariants() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok && !failures.iter().any(|f| f == what) {
            failures.push(what.to_string());
        }
    };
    let mut checked = 0usize;
    for seed in 0..12u64 {
        let sex = if seed % 2 == 0 { Sex::M } else { Sex::F };
        let (image, gt) = phantom(seed, sex);
        let a = degrade(
            &gt,
            &DegradationLevel::schedule(1 + (seed % 12) as u8).unwrap(),
            seed,
        );
        let b = degrade(
            &gt,
            &DegradationLevel::schedule(12 - (seed % 12) as u8).unwrap(),
            seed + 50,
        );

        // Dice: symmetry, bounds, self-overlap, empty conventions
        let (ab, ba) = (dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
        check(ab == ba, "dice symmetry");
        check(
            ab.per_structure()
                .iter()
                .all(|(_, v)| (0.0..=1.0).contains(v)),
            "dice bounds",
        );
        check(
            dsc(&a, &a)
                .unwrap()
                .per_structure()
                .iter()
                .all(|(_, v)| *v == 1.0),
            "dice self",
        );
        let empty = LabelMask::empty(N, N, gt.structures().to_vec()).unwrap();
        check(
            dsc(&empty, &empty)
                .unwrap()
                .per_structure()
                .iter()
                .all(|(_, v)| *v == 1.0),
            "dice empty/empty = 1",
        );
        check(
            dsc(&empty, &gt)
                .unwrap()
                .per_structure()
                .iter()
                .all(|(_, v)| *v == 0.0),
            "dice empty/non-empty = 0",
        );

        // warping: identity and binarity
        let zero = DisplacementField::zeros(N, N);
        check(warp_mask(&gt, &zero).unwrap() == gt, "warp identity (mask)");
        check(
            resample_image(&image, &zero).unwrap() == image,
            "warp identity (image)",
        );
        let (sx, sy) = (1 + seed as usize % 3, seed as usize % 2);
        let shifted =
            warp_mask(&gt, &DisplacementField::uniform(N, N, sx as f64, sy as f64)).unwrap();
        let exact = (0..gt.structures().len()).all(|c| {
            (0..N - sy)
                .all(|y| (0..N - sx).all(|x| shifted.get(c, x, y) == gt.get(c, x + sx, y + sy)))
        });
        check(
            exact && shifted.structures() == gt.structures(),
            "warp binarity under integer shifts",
        );

        // composition identity laws
        let f = compose_fields(
            &bump(30.0, 30.0, [seed as f64 / 4.0, -1.0], 7.0),
            &DisplacementField::uniform(N, N, 0.5, 0.25),
        )
        .unwrap();
        check(
            compose_fields(&f, &zero).unwrap() == f,
            "compose right identity",
        );
        check(
            compose_fields(&zero, &f).unwrap() == f,
            "compose left identity",
        );
        checked += 1;
    }

    // audit antisymmetry and mean bounds on real estimates
    let corpus = PhantomCorpus::generate(&CorpusConfig {
        n_test: 8,
        n_reference: 8,
        ..CorpusConfig::default()
    })
    .unwrap();
    let db = corpus.reference_db().unwrap();
    let params = RcaParams::default();
    let mut cases = Vec::new();
    for (i, case) in corpus.test.iter().enumerate() {
        let atlas = PreparedAtlas::new(&case.id, &case.image, &db, &params).unwrap();
        let pred = degrade(
            &case.mask,
            &DegradationLevel::schedule(2 + i as u8).unwrap(),
            i as u64,
        );
        let mean = atlas.score(&pred, &db, Aggregator::Mean).unwrap();
        let max = atlas.score(&pred, &db, Aggregator::Max).unwrap();
        for s in case.mask.structures() {
            let per: Vec<f64> = mean
                .per_reference
                .iter()
                .map(|(_, d)| d.get(s).unwrap())
                .collect();
            let lo = per.iter().copied().fold(f64::INFINITY, f64::min);
            let (m, hi) = (
                mean.aggregate.get(s).unwrap(),
                max.aggregate.get(s).unwrap(),
            );
            check(lo <= m + 1e-12 && m <= hi + 1e-12, "min <= mean <= max");
        }
        cases.push(AuditCase::from_estimate(
            &mean,
            case.attributes(),
            Some(dsc(&pred, &case.mask).unwrap()),
        ));
    }
    let (m, f) = (
        audit(&cases, "sex", "M").unwrap(),
        audit(&cases, "sex", "F").unwrap(),
    );
    for (s, d) in &m.delta_rca {
        check(
            (d + f.delta_rca[s]).abs() < 1e-12,
            "audit antisymmetry (estimated)",
        );
        let (tm, tf) = (
            m.delta_true.as_ref().unwrap()[s],
            f.delta_true.as_ref().unwrap()[s],
        );
        check((tm + tf).abs() < 1e-12, "audit antisymmetry (true)");
    }

    let detail = if failures.is_empty() {
        format!("dice, warp, compose laws on {checked} phantoms; audit antisymmetry and mean bounds on {} estimates", cases.len())
    } else {
        format!("violated: {}", failures.join(", "))
    };
    Outcome::new(failures.is_empty(), detail)
}

fn run_grid_cli(out: &Path, threads: &str) -> Duration {
    let t = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_ubd"))
        .args([
            "synthetic-grid",
            "--seed",
            GRID_SEED,
            "--k",
            "5",
            "--threads",
            threads,
            "--out",
        ])
        .arg(out)
        .env_remove("UBD_THREADS")
        .stdout(Stdio::null())
        .status()
        .expect("ubd runs");
    assert!(status.success(), "synthetic-grid failed: {status}");
    t.elapsed()
}

fn agreement(d: &Value, threshold: f64) -> Option<f64> {
    d["sign_agreement"]
        .as_array()?
        .iter()
        .find(|a| a["threshold"].as_f64() == Some(threshold))?["fraction"]
        .as_f64()
}

fn diagnostics<'a>(summary: &'a Value, aggregator: &str) -> Vec<&'a Value> {
    summary["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|d| d["aggregator"] == aggregator)
        .collect()
}

fn grid_sign_agreement(summary: &Value, elapsed: Duration) -> Outcome {
    let mut pass =
        summary["n_male"].as_u64().unwrap_or(0) + summary["n_female"].as_u64().unwrap_or(0) >= 40;
    let mut notes = Vec::new();
    for d in diagnostics(summary, "mean") {
        let a: Vec<f64> = THRESHOLDS
            .iter()
            .map(|&t| agreement(d, t).unwrap_or(f64::NAN))
            .collect();
        pass &= a.iter().zip(MIN_AGREEMENT).all(|(v, min)| *v >= min);
        pass &= a.windows(2).all(|w| w[1] >= w[0]);
        notes.push(format!(
            "{} {:.3}/{:.3}/{:.3}",
            d["structure"].as_str().unwrap(),
            a[0],
            a[1],
            a[2]
        ));
    }
    pass &= elapsed < GRID_BUDGET;
    notes.push(format!(
        "grid {:.1}s at {GRID_THREADS} threads",
        elapsed.as_secs_f64()
    ));
    Outcome::new(pass, notes.join("; "))
}

fn gap_correlation(summary: &Value) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for d in diagnostics(summary, "mean") {
        let slope = d["slope"].as_f64().unwrap_or(f64::NAN);
        let r = d["pearson_r"].as_f64().unwrap_or(f64::NAN);
        pass &= slope > 0.0 && r >= MIN_PEARSON && d["n_pairs"] == 144;
        notes.push(format!(
            "{} slope {slope:.3} r {r:.4}",
            d["structure"].as_str().unwrap()
        ));
    }
    Outcome::new(pass, notes.join("; "))
}

fn aggregator_robustness(summary: &Value) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for (mean, max) in diagnostics(summary, "mean")
        .into_iter()
        .zip(diagnostics(summary, "max"))
    {
        let (a, b) = (
            agreement(mean, 0.02).unwrap_or(f64::NAN),
            agreement(max, 0.02).unwrap_or(f64::NAN),
        );
        pass &= a >= b - AGGREGATOR_SLACK;
        let verdict = if a > b {
            "mean better"
        } else if a == b {
            "tie"
        } else {
            "max better"
        };
        notes.push(format!(
            "{} mean {a:.3} vs max {b:.3} ({verdict})",
            mean["structure"].as_str().unwrap()
        ));
    }
    Outcome::new(pass, notes.join("; "))
}

fn determinism(a: &Path, b: &Path, c: &Path) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for f in ["grid_true.csv", "grid_rca.csv"] {
        let first = fs::read(a.join(f)).unwrap();
        let rerun = first == fs::read(b.join(f)).unwrap();
        let threads = first == fs::read(c.join(f)).unwrap();
        pass &= rerun && threads;
        notes.push(format!(
            "{f} rerun {} threads 1 vs {GRID_THREADS} {}",
            same(rerun),
            same(threads)
        ));
    }
    Outcome::new(pass, notes.join("; "))
}

fn same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "DIFFERENT"
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );

    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "registration recovery", registration_recovery()),
        (2, "RCA correlation fidelity", rca_correlation()),
    ];
    let elapsed = run_grid_cli(&a, GRID_THREADS);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    results.push((
        3,
        "grid sign agreement",
        grid_sign_agreement(&summary, elapsed),
    ));
    results.push((4, "gap-correlation positivity", gap_correlation(&summary)));
    results.push((5, "aggregator robustness", aggregator_robustness(&summary)));
    results.push((6, "invariant suites", invariants()));
    run_grid_cli(&b, GRID_THREADS);
    run_grid_cli(&c, "1");
    results.push((7, "determinism", determinism(&a, &b, &c)));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
