//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Suites 1–4 are dataset independent and gate the exit status. Targets
//! 5–11 run on `$TRUSTFORGE_INTEL_DATA/{data.txt,mote_locs.txt}` when set,
//! otherwise on a simulated 54-mote, 3-day deployment; their failures are
//! reported but only gate the exit status with `TRUSTFORGE_STRICT=1`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use trustforge::eval::{evaluate, Cell, EvalConfig, EvalData, EvalReport, Grouping, TargetStatus};
use trustforge::features::{
    band_features, belief_plausibility, canberra, dct_coeffs, default_focal_sets, pearson, pmf, FeatureConfig,
    FeatureKind,
};
use trustforge::ingest::{ingest, parse_layout, parse_readings, IngestConfig, Layout, SensorReading};
use trustforge::models::{gmm_fit, kmeans_fit, labelprop_fit, GmmParams, Hyperparameters, KMeansParams, LabelPropParams, Mlp, ModelKind};
use trustforge::seed;
use trustforge::simulate::{simulate, SimConfig};
use trustforge::synth::{drift_values, rwi_values, DriftConfig, RwiConfig, SynthMethod};
use trustforge::topology::{select_neighbors, trustworthy_series, DEFAULT_NEIGHBORS, DEFAULT_PHYSICAL_CANDIDATES};

const RWI_SLOPE_REL: f64 = 1e-9;
const RWI_IDENTITY_ABS: f64 = 1e-9;
const DCT_LINEARITY_REL: f64 = 1e-9;
const PEARSON_AFFINE_ABS: f64 = 1e-12;
const GRADIENT_REL: f64 = 1e-5;
const MONOTONE_SLACK: f64 = 1e-9;

const MLP_MIN: f64 = 0.85;
const SVM_MLP_GAP: f64 = 0.05;
const VIA_KMEANS_GAP: f64 = 0.02;
const UNSUPERVISED_MARGIN: f64 = 0.10;
const STD_MAX: f64 = 0.02;
const LABELPROP_GAP: f64 = 0.05;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) {
    println!("criterion {:>2}: {} ({})", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Least-squares slope through the first point.
fn slope_oracle(anchor: f64, rest: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (j, v) in rest.iter().enumerate() {
        let t = (j + 1) as f64;
        num += t * (v - anchor);
        den += t * t;
    }
    num / den
}

fn boundaries(n: usize, m: usize) -> Vec<usize> {
    (0..=m + 1)
        .map(|j| ((j * (n - 1)) as f64 / (m + 1) as f64).round() as usize)
        .collect()
}

fn criterion_rwi() -> Outcome {
    let mut rng = seed::rng(101);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..200 {
        let n = rng.gen_range(30..=1440);
        let m = rng.gen_range(0..=10.min(n - 2));
        let base = rng.gen_range(10.0..30.0);
        let walk = Normal::new(0.0, rng.gen_range(0.01..0.5)).unwrap();
        let mut x = vec![base];
        for _ in 1..n {
            let last = *x.last().unwrap();
            x.push(last + walk.sample(&mut rng));
        }
        let sigma = if case % 10 == 0 { 0.0 } else { rng.gen_range(0.01..2.0) };
        let out = rwi_values(&x, m, sigma, &mut seed::rng(case)).unwrap();
        if out.len() != n || out[0] != x[0] {
            failures.push(format!("case {case}: length or anchor"));
            continue;
        }
        let b = boundaries(n, m);
        for w in b.windows(2) {
            let (p, q) = (w[0], w[1]);
            let want = slope_oracle(out[p], &x[p + 1..=q]);
            let got = slope_oracle(out[p], &out[p + 1..=q]);
            let err = (want - got).abs() / want.abs().max(got.abs()).max(1.0);
            worst = worst.max(err);
            if err > RWI_SLOPE_REL {
                failures.push(format!("case {case} segment {p}..{q}: {got} vs {want}"));
            }
        }
    }
    // exactly linear input with no walk is a fixed point
    for m in [0, 3, 10] {
        let x: Vec<f64> = (0..500).map(|i| 4.0 - 0.013 * i as f64).collect();
        let out = rwi_values(&x, m, 0.0, &mut seed::rng(1)).unwrap();
        if x.iter().zip(&out).any(|(a, b)| (a - b).abs() > RWI_IDENTITY_ABS) {
            failures.push(format!("linear input not reproduced with M={m}"));
        }
    }
    let out = rwi_values(&[2.0, 4.0, 6.0, 8.0, 10.0], 0, 0.0, &mut seed::rng(0)).unwrap();
    if out != [2.0, 4.0, 6.0, 8.0, 10.0] {
        failures.push(format!("[2,4,6,8,10] gave {out:?}"));
    }
    let out = rwi_values(&[0.0, 1.0, 0.0, 1.0, 0.0], 0, 0.0, &mut seed::rng(0)).unwrap();
    let want = [0.0, 2.0 / 15.0, 4.0 / 15.0, 6.0 / 15.0, 8.0 / 15.0];
    if out.iter().zip(want).any(|(a, b)| (a - b).abs() > 1e-15) {
        failures.push(format!("[0,1,0,1,0] gave {out:?}"));
    }
    Outcome {
        id: 1,
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("200 instances, worst slope error {worst:.1e}")
        } else {
            failures.join("; ")
        },
    }
}

fn naive_dct(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..m)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos())
                .sum()
        })
        .collect()
}

fn criterion_features() -> Outcome {
    let mut rng = seed::rng(202);
    let mut failures = Vec::new();
    for trial in 0..50 {
        let x: Vec<f64> = (0..120).map(|_| rng.gen_range(-5.0..30.0)).collect();
        let y: Vec<f64> = (0..120).map(|_| rng.gen_range(-5.0..30.0)).collect();
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (dx, dy, dm) = (dct_coeffs(&x, 100).unwrap(), dct_coeffs(&y, 100).unwrap(), dct_coeffs(&mix, 100).unwrap());
        let reference = naive_dct(&x, 100);
        for k in 0..100 {
            if !rel_close(dm[k], a * dx[k] + b * dy[k], DCT_LINEARITY_REL) || !rel_close(dx[k], reference[k], DCT_LINEARITY_REL) {
                failures.push(format!("DCT trial {trial} coefficient {k}"));
                break;
            }
        }
        let r = pearson(&x, &y).unwrap();
        let scale = rng.gen_range(0.1..10.0) * if trial % 2 == 0 { 1.0 } else { -1.0 };
        let shifted: Vec<f64> = x.iter().map(|v| scale * v + 7.0).collect();
        let r2 = pearson(&shifted, &y).unwrap();
        if !(-1.0..=1.0).contains(&r) || (r2 - r.signum() * scale.signum() * r.abs()).abs() > PEARSON_AFFINE_ABS {
            failures.push(format!("Pearson trial {trial}: {r} vs {r2}"));
        }
        let u: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        let w: Vec<f64> = y.iter().map(|v| v.abs()).collect();
        if canberra(&u, &w).unwrap() != canberra(&w, &u).unwrap() || canberra(&u, &u).unwrap() != 0.0 || canberra(&u, &w).unwrap() <= 0.0 {
            failures.push(format!("Canberra trial {trial}"));
        }
    }
    let constant = vec![21.5; 120];
    let bands = band_features(&dct_coeffs(&constant, 100).unwrap(), 10).unwrap();
    if bands[1..].iter().any(|b| b.abs() > 1e-9) || !rel_close(bands[0], 21.5 * 120.0 / 10.0, 1e-12) {
        failures.push(format!("constant bands {bands:?}"));
    }
    let four = dct_coeffs(&[2.0; 4], 4).unwrap();
    if !rel_close(four[0], 8.0, 1e-15) || four[1..].iter().any(|v| v.abs() > 1e-12) {
        failures.push(format!("constant N=4 gave {four:?}"));
    }
    let basis: Vec<f64> = (0..4).map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / 4.0).cos()).collect();
    let c = dct_coeffs(&basis, 4).unwrap();
    if (c[1] - 2.0).abs() > 1e-12 || [c[0], c[2], c[3]].iter().any(|v| v.abs() > 1e-12) {
        failures.push(format!("cosine basis gave {c:?}"));
    }
    if canberra(&[1.0, 0.0, 2.0], &[3.0, 0.0, 2.0]).unwrap() != 0.5 {
        failures.push("Canberra [1,0,2] vs [3,0,2] != 0.5".into());
    }
    let edges: Vec<f64> = (0..=10).map(|i| i as f64).collect();
    let sets = default_focal_sets(10)[..10].to_vec();
    let (bel_a, _) = belief_plausibility(&pmf(&[0.5, 1.5, 0.2], &edges).unwrap(), &sets).unwrap();
    let (bel_b, _) = belief_plausibility(&pmf(&[7.5, 8.5, 9.5, 9.9], &edges).unwrap(), &sets).unwrap();
    if canberra(&bel_a, &bel_b).unwrap() != 5.0 {
        failures.push("disjoint belief distance != 5".into());
    }
    let drift_case = |cap: f64| {
        let cfg = DriftConfig {
            drift_constant: 0.5,
            noise_std: 0.0,
            drift_cap: cap,
            rng_seed: 0,
        };
        drift_values(&[10.0, 10.0, 10.0], &cfg, &mut seed::rng(0)).unwrap()
    };
    if drift_case(f64::INFINITY) != [10.5, 11.0, 11.5] || drift_case(1.0) != [10.5, 11.0, 11.0] {
        failures.push("drift hand examples".into());
    }
    Outcome {
        id: 2,
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "DCT linearity and reference, bands, Pearson, Canberra, belief distances, drift examples".into()
        } else {
            failures.join("; ")
        },
    }
}

fn mixture(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| (0..dim).map(|d| noise.sample(rng) + if i % 3 == 0 && d == 0 { 4.0 } else { 0.0 }).collect())
        .collect()
}

fn criterion_optimizers() -> Outcome {
    let mut rng = seed::rng(303);
    let mut failures = Vec::new();
    for trial in 0..5 {
        let x = mixture(300, 3, &mut rng);
        let km = kmeans_fit(&x, &KMeansParams::default(), trial).unwrap();
        if km.inertia_history.windows(2).any(|w| w[1] > w[0] * (1.0 + MONOTONE_SLACK)) {
            failures.push(format!("k-means inertia rose: {:?}", km.inertia_history));
        }
        let gmm = gmm_fit(&x, &GmmParams::default(), trial).unwrap();
        if gmm.log_likelihood.windows(2).any(|w| w[1] < w[0] - MONOTONE_SLACK * w[0].abs().max(1.0)) {
            failures.push(format!("GMM log-likelihood fell: {:?}", gmm.log_likelihood));
        }
    }

    let mut worst = 0.0f64;
    for net in 0..20 {
        let inputs = rng.gen_range(1..=5);
        let hidden = rng.gen_range(1..=4);
        let mut model = Mlp::new(inputs, hidden, &mut seed::rng(1000 + net));
        let x: Vec<Vec<f64>> = (0..8).map(|_| (0..inputs).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let rows: Vec<usize> = (0..8).collect();
        let (_, grad) = model.loss_and_gradient(&x, &y, &rows);
        let p = model.params();
        for k in 0..p.len() {
            let h = 1e-6;
            let mut q = p.clone();
            q[k] = p[k] + h;
            model.set_params(&q);
            let up = model.loss(&x, &y, &rows);
            q[k] = p[k] - h;
            model.set_params(&q);
            let down = model.loss(&x, &y, &rows);
            model.set_params(&p);
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grad[k]).abs() / numeric.abs().max(grad[k].abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    if worst > GRADIENT_REL {
        failures.push(format!("MLP gradient error {worst:.2e}"));
    }

    let x = mixture(200, 2, &mut rng);
    let labels: Vec<Option<u8>> = x
        .iter()
        .enumerate()
        .map(|(i, r)| (i % 10 == 0).then(|| u8::from(r[0] > 2.0)))
        .collect();
    let lp = labelprop_fit(&x, &labels, &LabelPropParams::default()).unwrap();
    let clamped = labels
        .iter()
        .zip(&lp.scores)
        .all(|(l, s)| l.is_none_or(|c| *s == if c == 0 { [1.0, 0.0] } else { [0.0, 1.0] }));
    if !clamped || !lp.converged {
        failures.push(format!("label propagation clamped={clamped} converged={}", lp.converged));
    }
    Outcome {
        id: 3,
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("inertia and likelihood monotone; worst gradient error {worst:.1e} over 20 nets; propagation converged in {} steps", lp.iterations)
        } else {
            failures.join("; ")
        },
    }
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, fs::read(&path).unwrap()));
    }
    out.sort();
    out
}

fn criterion_demo() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut seconds = Vec::new();
    for d in &dirs {
        let started = Instant::now();
        let status = Command::new(env!("CARGO_BIN_EXE_trustforge"))
            .env_remove("TRUSTFORGE_SEED")
            .args(["demo", "--out"])
            .arg(d.path())
            .output()
            .unwrap();
        seconds.push(started.elapsed().as_secs_f64());
        if !status.status.success() {
            return Outcome {
                id: 4,
                pass: false,
                detail: format!("demo failed: {}", String::from_utf8_lossy(&status.stderr)),
            };
        }
    }
    let features = [files_under(&dirs[0].path().join("features")), files_under(&dirs[1].path().join("features"))];
    let mut compared = features[0].len();
    let mut same = features[0] == features[1] && compared == 4;
    for name in ["report.json", "plot_data.csv", "summary.csv"] {
        let a = fs::read(dirs[0].path().join("eval").join(name)).unwrap();
        let b = fs::read(dirs[1].path().join("eval").join(name)).unwrap();
        same &= a == b;
        compared += 1;
    }
    Outcome {
        id: 4,
        pass: same,
        detail: format!(
            "{compared} files compared byte for byte; demo took {:.0} s and {:.0} s",
            seconds[0], seconds[1]
        ),
    }
}

fn load_data() -> (String, Vec<SensorReading>, Layout) {
    match std::env::var("TRUSTFORGE_INTEL_DATA") {
        Ok(dir) => {
            let dir = Path::new(&dir);
            let readings = parse_readings(std::io::BufReader::new(fs::File::open(dir.join("data.txt")).unwrap()))
                .unwrap()
                .readings;
            let layout = parse_layout(std::io::BufReader::new(fs::File::open(dir.join("mote_locs.txt")).unwrap()))
                .unwrap()
                .layout;
            (format!("dataset at {}", dir.display()), readings, layout)
        }
        Err(_) => {
            let config = SimConfig::default();
            let sim = simulate(&config).unwrap();
            (
                format!("simulated {} motes over {} days (seed {})", config.sensors, config.days, config.seed),
                sim.readings,
                sim.layout,
            )
        }
    }
}

fn cell<'a>(r: &'a EvalReport, model: ModelKind, kind: FeatureKind, train: &str, test: &str) -> &'a Cell {
    r.cells
        .iter()
        .find(|c| c.model == model && c.features == kind && c.train_synth == train && c.test_synth == test)
        .unwrap_or_else(|| panic!("missing cell {model}/{kind}/{train}->{test}"))
}

fn quantitative(report: &EvalReport) -> Vec<Outcome> {
    use FeatureKind::{Correlation as Corr, Dst};
    use ModelKind::*;
    let rc = |m| cell(report, m, Corr, "rwi", "rwi").mean;
    let mut out = Vec::new();

    let (mlp, svm) = (rc(Mlp), rc(LinearSvm));
    out.push(Outcome {
        id: 5,
        pass: mlp >= MLP_MIN && (mlp - svm).abs() <= SVM_MLP_GAP,
        detail: format!("MLP {mlp:.4} (need >= {MLP_MIN}), SVM {svm:.4} (need within {SVM_MLP_GAP})"),
    });

    let mut gap6: f64 = 0.0;
    for kind in [Corr, Dst] {
        for m in ["rwi", "drift"] {
            let g = (cell(report, SvmViaKMeans, kind, m, m).mean - cell(report, KMeans, kind, m, m).mean).abs();
            gap6 = gap6.max(g);
        }
    }
    out.push(Outcome {
        id: 6,
        pass: gap6 <= VIA_KMEANS_GAP,
        detail: format!("largest |svm-via-kmeans - kmeans| {gap6:.4} (limit {VIA_KMEANS_GAP})"),
    });

    let best_sup = mlp.max(svm);
    let best_unsup = rc(KMeans).max(rc(Gmm));
    out.push(Outcome {
        id: 7,
        pass: best_unsup <= best_sup - UNSUPERVISED_MARGIN,
        detail: format!("best unsupervised {best_unsup:.4}, best supervised {best_sup:.4} (margin {UNSUPERVISED_MARGIN})"),
    });

    let mut violations = Vec::new();
    for m in ModelKind::ALL {
        for s in ["rwi", "drift"] {
            let (c, d) = (cell(report, m, Corr, s, s).mean, cell(report, m, Dst, s, s).mean);
            if c < d {
                violations.push(format!("{m}/{s} {c:.3}<{d:.3}"));
            }
        }
    }
    out.push(Outcome {
        id: 8,
        pass: violations.is_empty(),
        detail: format!("{} of 12 matched cells have correlation below DST {:?}", violations.len(), violations),
    });

    let mut parts = Vec::new();
    let mut ok9 = true;
    for m in [LinearSvm, Mlp, LabelProp] {
        let (a, b) = (cell(report, m, Corr, "rwi", "drift").mean, cell(report, m, Corr, "drift", "rwi").mean);
        ok9 &= a > b;
        parts.push(format!("{m} {a:.4} vs {b:.4}"));
    }
    out.push(Outcome {
        id: 9,
        pass: ok9,
        detail: format!("rwi->drift vs drift->rwi: {}", parts.join(", ")),
    });

    let worst = report
        .cells
        .iter()
        .map(|c| {
            let n = c.accuracies.len() as f64;
            let mean = c.accuracies.iter().sum::<f64>() / n;
            let var = c.accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var.sqrt(), format!("{}/{}/{}->{}", c.model, c.features, c.train_synth, c.test_synth))
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    let over = report
        .cells
        .iter()
        .filter(|c| c.std.unwrap_or(0.0) > STD_MAX)
        .count();
    out.push(Outcome {
        id: 10,
        pass: worst.0 <= STD_MAX,
        detail: format!("largest std {:.4} at {} ({over} of {} cells above {STD_MAX})", worst.0, worst.1, report.cells.len()),
    });

    let lp = rc(LabelProp);
    out.push(Outcome {
        id: 11,
        pass: lp >= best_sup - LABELPROP_GAP,
        detail: format!("label propagation {lp:.4}, best supervised {best_sup:.4} (gap limit {LABELPROP_GAP})"),
    });
    out
}

fn main() {
    let started = Instant::now();
    let mut suites = vec![criterion_rwi(), criterion_features(), criterion_optimizers()];
    suites.iter().for_each(line);
    let demo = criterion_demo();
    line(&demo);
    suites.push(demo);

    let (source, readings, layout) = load_data();
    let grid = IngestConfig::default();
    let data = ingest(&readings, &grid).unwrap();
    let series = trustworthy_series(&data.instances, grid.step);
    let neighbors = select_neighbors(&layout, &series, DEFAULT_PHYSICAL_CANDIDATES, DEFAULT_NEIGHBORS).unwrap();
    let config = EvalConfig {
        models: ModelKind::ALL.to_vec(),
        feature_kinds: vec![FeatureKind::Correlation, FeatureKind::Dst],
        methods: vec![SynthMethod::Rwi(RwiConfig::default()), SynthMethod::Drift(DriftConfig::default())],
        cross: vec![("rwi".into(), "drift".into()), ("drift".into(), "rwi".into())],
        folds: 10,
        grouping: Grouping::Rows,
        realizations: 10,
        base_seed: 7,
        hyper: Hyperparameters::default(),
        features: FeatureConfig::for_step(grid.step),
    };
    let eval_started = Instant::now();
    let (report, _) = evaluate(
        &EvalData {
            instances: &data.instances,
            neighbors: &neighbors,
            stats: &data.stats,
        },
        &config,
    )
    .unwrap();
    println!(
        "quantitative targets on {source}: {} instances, {} cells, 10 realizations x 10 folds, {:.0} s",
        report.dataset.instances,
        report.cells.len(),
        eval_started.elapsed().as_secs_f64()
    );
    let targets = quantitative(&report);
    targets.iter().for_each(line);

    // the report must flag exactly the failing targets
    let flags_agree = targets.iter().all(|t| {
        report
            .targets
            .iter()
            .find(|r| r.id == t.id)
            .is_some_and(|r| (r.status == TargetStatus::Pass) == t.pass)
    });
    println!(
        "report flags {} the independent checks",
        if flags_agree { "agree with" } else { "DISAGREE with" }
    );

    let suites_ok = suites.iter().all(|o| o.pass);
    let targets_ok = targets.iter().all(|o| o.pass);
    let strict = std::env::var("TRUSTFORGE_STRICT").is_ok_and(|v| v == "1");
    println!(
        "suites 1-4: {}; targets 5-11: {} of 7 met; total {:.0} s",
        if suites_ok { "all pass" } else { "FAILED" },
        targets.iter().filter(|o| o.pass).count(),
        started.elapsed().as_secs_f64()
    );
    if !suites_ok || !flags_agree || (strict && !targets_ok) {
        std::process::exit(1);
    }
}
