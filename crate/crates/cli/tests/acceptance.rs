//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criteria 1-5 are exact property checks. Criteria 6-11 train on the default
//! synthetic dataset with three training seeds; each holds when it is met on
//! at least two of them.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use support::*;
use xmodal_core::encoder::{init_params, EncoderParams, EncoderSpec, Side};
use xmodal_core::eval::{ranks_both_directions, recall_at_k, subset_protocol_latents, RetrievalReport};
use xmodal_core::experiment::{compare_scenarios, evaluate_clamped, sweep_lambda, EvalSettings};
use xmodal_core::loss::LossConfig;
use xmodal_core::math::{Matrix, RngSeed};
use xmodal_core::mining::{
    aggregate_adaptive, aggregate_average, pairwise_term, triplet_term, BatchForward, Direction, Strategy, Triplet,
    TripletKind, TripletPlan,
};
use xmodal_core::optim::classification_term;
use xmodal_core::{generate_synthetic, train, Scenario, Splits, SyntheticSpec, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];
const REQUIRED_SEEDS: usize = 2;
const PROPERTY_BUDGET: Duration = Duration::from_secs(5 * 60);
const REPRODUCTION_BUDGET: Duration = Duration::from_secs(45 * 60);

struct Verdict {
    name: String,
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<Verdict>, name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(Verdict {
        name: name.to_string(),
        pass,
        detail,
    });
}

// ---------------------------------------------------------------- 1

const GRAD_INSTANCES: usize = 50;
const GRAD_TOLERANCE: f64 = 1e-4;
const KINK: f64 = 1e-4;

/// Returns (analytic, numeric) for one seeded instance, or `None` when the
/// instance sits within `KINK` of a hinge or ReLU kink or has no gradient.
fn gradient_instance(loss: &str, seed: u64) -> Option<(EncoderParams, EncoderParams)> {
    let mut rng = RngSeed(seed).rng();
    let spec = random_spec(&mut rng);
    let n_classes = 3;
    let params = random_params(&spec, (loss == "classification").then_some(n_classes), seed);
    let mut batch = random_batch(&mut rng, 3, spec.input_dim_a, spec.input_dim_b, n_classes, 0.0);
    batch.labels = vec![Some(0), Some(0), Some(1)];
    let inputs: Vec<(Side, &[f64])> = (0..3)
        .flat_map(|i| {
            [
                (Side::A, batch.features(Side::A, i)),
                (Side::B, batch.features(Side::B, i)),
            ]
        })
        .collect();
    if relu_margin(&params, &inputs) < KINK {
        return None;
    }
    let view = batch.view();
    let fwd = BatchForward::new(&params, &view).unwrap();
    let latents = |p: &EncoderParams, side: Side| -> Vec<Vec<f64>> {
        (0..3)
            .map(|i| naive_forward(p, side, batch.features(side, i)))
            .collect()
    };
    let (analytic, numeric) = match loss {
        "instance" | "semantic" => {
            let direction = if rng.random_bool(0.5) {
                Direction::AtoB
            } else {
                Direction::BtoA
            };
            let t = if loss == "instance" {
                Triplet {
                    query: 0,
                    positive: 0,
                    negative: rng.random_range(1..3),
                    kind: TripletKind::Instance,
                    direction,
                }
            } else {
                Triplet {
                    query: 0,
                    positive: 1,
                    negative: 2,
                    kind: TripletKind::Semantic,
                    direction,
                }
            };
            let alpha = rng.random_range(0.1..1.0);
            let (qs, cs) = sides(direction);
            let raw = |p: &EncoderParams| {
                let (zq, zc) = (latents(p, qs), latents(p, cs));
                naive_cosine_distance(&zq[t.query], &zc[t.positive]) + alpha
                    - naive_cosine_distance(&zq[t.query], &zc[t.negative])
            };
            if raw(&params) < KINK {
                return None;
            }
            let numeric = fd_gradient(&params, |p| raw(p).max(0.0));
            (triplet_term(&params, &fwd, &[t], alpha).unwrap().0, numeric)
        }
        "pairwise" => {
            let alpha_pos = rng.random_range(0.05..0.5);
            let alpha_neg = rng.random_range(0.6..1.4);
            let terms = |p: &EncoderParams| -> Vec<f64> {
                let (za, zb) = (latents(p, Side::A), latents(p, Side::B));
                let mut out = Vec::new();
                for (zq, zc) in [(&za, &zb), (&zb, &za)] {
                    for q in 0..3 {
                        for c in 0..3 {
                            let d = naive_cosine_distance(&zq[q], &zc[c]);
                            out.push(if q == c { d - alpha_pos } else { alpha_neg - d });
                        }
                    }
                }
                out
            };
            let raws = terms(&params);
            if raws.iter().any(|r| r.abs() < KINK) {
                return None;
            }
            let numeric = fd_gradient(&params, |p| terms(p).iter().map(|r| r.max(0.0)).sum());
            (pairwise_term(&params, &fwd, alpha_pos, alpha_neg).unwrap().0, numeric)
        }
        "classification" => {
            let head = |p: &EncoderParams, z: &[f64], label: usize| {
                let h = p.head.as_ref().unwrap();
                let scores: Vec<f64> = (0..n_classes)
                    .map(|c| h.bias[c] + z.iter().enumerate().map(|(k, v)| h.weight.get(c, k) * v).sum::<f64>())
                    .collect();
                scores.iter().map(|s| s.exp()).sum::<f64>().ln() - scores[label]
            };
            let mean_ce = |p: &EncoderParams| {
                let mut total = 0.0;
                for side in [Side::A, Side::B] {
                    for (i, z) in latents(p, side).iter().enumerate() {
                        total += head(p, z, batch.labels[i].unwrap());
                    }
                }
                total / 6.0
            };
            let numeric = fd_gradient(&params, mean_ce);
            (classification_term(&params, &fwd, &view).unwrap().0, numeric)
        }
        _ => unreachable!(),
    };
    (numeric.norm() > 1e-6).then_some((analytic, numeric))
}

fn criterion_gradients() -> (bool, String) {
    let mut parts = Vec::new();
    let mut pass = true;
    for loss in ["instance", "semantic", "pairwise", "classification"] {
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for seed in 0..40 * GRAD_INSTANCES as u64 {
            let Some((a, n)) = gradient_instance(loss, seed) else {
                continue;
            };
            let e = relative_error(&a, &n);
            worst = worst.max(e);
            failures += usize::from(e > GRAD_TOLERANCE);
            checked += 1;
            if checked == GRAD_INSTANCES {
                break;
            }
        }
        pass &= checked == GRAD_INSTANCES && failures == 0;
        parts.push(format!("{loss} {checked} instances, worst rel err {worst:.1e}"));
    }
    (pass, parts.join("; "))
}

// ---------------------------------------------------------------- 2

fn criterion_mining_oracle() -> (bool, String) {
    let mut worst: f64 = 0.0;
    let mut count_mismatch = 0;
    for seed in 0..200 {
        let mut rng = RngSeed(10_000 + seed).rng();
        let spec = random_spec(&mut rng);
        let params = random_params(&spec, None, seed);
        let n = rng.random_range(2..=8);
        let batch = random_batch(&mut rng, n, spec.input_dim_a, spec.input_dim_b, 3, 0.3);
        let config = LossConfig {
            alpha: rng.random_range(0.1..0.8),
            lambda: rng.random_range(0.1..1.0),
            ..LossConfig::default()
        };
        let plan = TripletPlan::build(&batch.labels, true, true, &mut rng);
        let view = batch.view();
        for strategy in [Strategy::Adaptive, Strategy::Average] {
            let got = match strategy {
                Strategy::Adaptive => aggregate_adaptive(&params, &view, &plan, &config),
                Strategy::Average => aggregate_average(&params, &view, &plan, &config),
            }
            .unwrap();
            let want = brute_force_aggregate(&params, &batch, &plan.semantic, &config, strategy, true);
            if (got.beta_r, got.beta_s) != (want.beta_r, want.beta_s) {
                count_mismatch += 1;
            }
            worst = worst.max(got.update.max_abs_diff(&want.update));
        }
    }
    (
        worst <= 1e-10 && count_mismatch == 0,
        format!("200 batches x 2 strategies, max abs diff {worst:.1e}, count mismatches {count_mismatch}"),
    )
}

// ---------------------------------------------------------------- 3

fn identity_params(dim: usize) -> EncoderParams {
    let mut params = init_params(&EncoderSpec::new(dim, dim, dim), None, RngSeed(0)).unwrap();
    for side in [Side::A, Side::B] {
        let layer = &mut params.branch_mut(side).layers[0];
        layer.weight = Matrix::identity(dim);
        layer.bias = vec![0.0; dim];
    }
    params
}

fn criterion_degenerate() -> (bool, String) {
    // features class_unit + item_unit through identity encoders: matching
    // distance 0, same class 0.5, otherwise 1
    let classes = [Some(0), Some(0), Some(1), Some(1), None, Some(2), Some(2), None];
    let n = classes.len();
    let dim = n + 3;
    let features: Vec<Vec<f64>> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut x = vec![0.0; dim];
            x[i] = 1.0;
            if let Some(c) = c {
                x[n + c] = 1.0;
            }
            x
        })
        .collect();
    let batch = OwnedBatch {
        features_a: features.clone(),
        features_b: features,
        labels: classes.to_vec(),
    };
    let params = identity_params(dim);
    let view = batch.view();
    let mut zero_ok = true;
    for seed in 0..10 {
        let plan = TripletPlan::build(&batch.labels, true, true, &mut RngSeed(seed).rng());
        for g in [
            aggregate_adaptive(&params, &view, &plan, &LossConfig::default()).unwrap(),
            aggregate_average(&params, &view, &plan, &LossConfig::default()).unwrap(),
        ] {
            zero_ok &= g.beta_r == 0 && g.beta_s == 0 && g.update.norm() == 0.0;
        }
    }

    let mut equal = 0;
    for seed in 0..50 {
        let mut rng = RngSeed(20_000 + seed).rng();
        let spec = random_spec(&mut rng);
        let params = random_params(&spec, None, seed);
        let n = rng.random_range(2..=8);
        let batch = random_batch(&mut rng, n, spec.input_dim_a, spec.input_dim_b, 2, 0.2);
        let config = LossConfig {
            alpha: 2.5,
            ..LossConfig::default()
        };
        let plan = TripletPlan::build(&batch.labels, true, true, &mut rng);
        let view = batch.view();
        let ad = aggregate_adaptive(&params, &view, &plan, &config).unwrap();
        let av = aggregate_average(&params, &view, &plan, &config).unwrap();
        equal += usize::from(ad.update == av.update && ad.beta_r == ad.total_r && ad.beta_s == ad.total_s);
    }
    (
        zero_ok && equal == 50,
        format!("satisfied batches zero: {zero_ok}; all-active batches identical: {equal}/50"),
    )
}

// ---------------------------------------------------------------- 4

fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngSeed(seed).rng();
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

fn criterion_evaluation() -> (bool, String) {
    let a = gaussian_rows(300, 8, 1);
    let perfect = subset_protocol_latents(&a, &a, 100, 5, RngSeed(3)).unwrap();
    let perfect_ok = [&perfect.a_to_b, &perfect.b_to_a]
        .iter()
        .all(|d| d.medr.mean == 1.0 && d.r1.mean == 100.0);

    let mut medrs = Vec::new();
    for seed in 0..10 {
        let r = subset_protocol_latents(
            &gaussian_rows(1000, 32, 2 * seed + 100),
            &gaussian_rows(1000, 32, 2 * seed + 101),
            1000,
            1,
            RngSeed(seed),
        )
        .unwrap();
        medrs.push(r.mean_medr());
    }
    let random_medr = medrs.iter().sum::<f64>() / medrs.len() as f64;
    let random_ok = (440.0..=560.0).contains(&random_medr);

    let b = gaussian_rows(300, 8, 2);
    let (ab, ba) = ranks_both_directions(&a, &b).unwrap();
    let monotone = [&ab, &ba]
        .iter()
        .all(|r| (1..300).all(|k| recall_at_k(r, k) <= recall_at_k(r, k + 1)));
    let mut scale_ok = true;
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let scaled: Vec<Vec<f64>> = b.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        scale_ok &= ranks_both_directions(&a, &scaled).unwrap() == (ab.clone(), ba.clone());
    }
    (
        perfect_ok && random_ok && monotone && scale_ok,
        format!(
            "perfect model MedR 1/R@1 100: {perfect_ok}; random MedR {random_medr:.1} in [440, 560]: {random_ok}; \
             R@K monotone: {monotone}; scale invariant: {scale_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_determinism(dir: &Path) -> (bool, String) {
    let bin = env!("CARGO_BIN_EXE_xmodal");
    let run = |args: &[&str]| {
        let o = Command::new(bin).args(args).env_remove("RUST_LOG").output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };
    let data = dir.join("data");
    run(&["gen", "--out", data.to_str().unwrap()]);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let ckpt = dir.join(format!("run{k}.ckpt"));
        let log = dir.join(format!("run{k}.log"));
        let stdout = run(&[
            "train",
            "--train-data",
            data.join("train.tsv").to_str().unwrap(),
            "--validation-data",
            data.join("validation.tsv").to_str().unwrap(),
            "--epochs",
            "5",
            "--seed",
            "11",
            "--out",
            ckpt.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
        ]);
        outputs.push((stdout, fs::read(&log).unwrap(), fs::read(&ckpt).unwrap()));
    }
    let same = outputs[0] == outputs[1];
    (
        same,
        format!(
            "two 5-epoch train runs: logs identical {}, checkpoints identical {} ({} bytes)",
            outputs[0].1 == outputs[1].1,
            outputs[0].2 == outputs[1].2,
            outputs[0].2.len()
        ),
    )
}

// ---------------------------------------------------------------- 6-11

struct SeedRuns {
    seed: u64,
    reports: Vec<(Scenario, RetrievalReport)>,
    min_norm_ratio: f64,
    val_medr_03: f64,
    val_medr_09: f64,
    noiseless: RetrievalReport,
}

impl SeedRuns {
    fn report(&self, s: Scenario) -> &RetrievalReport {
        &self.reports.iter().find(|r| r.0 == s).unwrap().1
    }

    /// Test MedR per direction.
    fn medr(&self, s: Scenario) -> [f64; 2] {
        let r = self.report(s);
        [r.a_to_b.medr.mean, r.b_to_a.medr.mean]
    }
}

fn default_spec(splits: &Splits) -> EncoderSpec {
    EncoderSpec::new(splits.train.dim_a, splits.train.dim_b, 64)
}

fn run_seed(data: &Splits, noiseless: &Splits, seed: u64) -> SeedRuns {
    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let spec = default_spec(data);
    let scenarios = [
        Scenario::Adamine,
        Scenario::AdamineIns,
        Scenario::AdamineInsCls,
        Scenario::AdamineAvg,
        Scenario::Pwpp,
        Scenario::AdamineSem,
    ];
    let runs = compare_scenarios(
        &base,
        &spec,
        &scenarios,
        &data.train,
        &data.validation,
        &data.test,
        EvalSettings::default(),
    )
    .unwrap();
    let adamine = &runs[0];
    let min_norm_ratio = adamine
        .history
        .steps
        .iter()
        .map(|s| s.norm_ratio())
        .fold(f64::INFINITY, f64::min);
    let sweep = sweep_lambda(&base, &spec, &[0.3, 0.9], &data.train, &data.validation).unwrap();

    let clean = train(&base, &default_spec(noiseless), &noiseless.train, &noiseless.validation).unwrap();
    SeedRuns {
        seed,
        reports: runs.iter().map(|r| (r.scenario, r.report.clone())).collect(),
        min_norm_ratio,
        val_medr_03: sweep[0].val_medr(),
        val_medr_09: sweep[1].val_medr(),
        noiseless: evaluate_clamped(&clean.params, &noiseless.test, EvalSettings::default()).unwrap(),
    }
}

fn fmt2(m: [f64; 2]) -> String {
    format!("{}/{}", m[0], m[1])
}

/// Applies `check` to every seed; passes on at least `REQUIRED_SEEDS`.
fn over_seeds(runs: &[SeedRuns], check: impl Fn(&SeedRuns) -> (bool, String)) -> (bool, String) {
    let mut held = 0;
    let mut parts = Vec::new();
    for r in runs {
        let (ok, detail) = check(r);
        held += usize::from(ok);
        parts.push(format!("seed {} {} [{detail}]", r.seed, if ok { "ok" } else { "no" }));
    }
    (
        held >= REQUIRED_SEEDS,
        format!("{held}/{} seeds; {}", runs.len(), parts.join("; ")),
    )
}

fn main() {
    let mut results = Vec::new();
    let tmp = tempfile::tempdir().unwrap();

    let start = Instant::now();
    let (p, d) = criterion_gradients();
    report(&mut results, "1 gradient correctness", p, d);
    let (p, d) = criterion_mining_oracle();
    report(&mut results, "2 mining oracle equivalence", p, d);
    let (p, d) = criterion_degenerate();
    report(&mut results, "3 degenerate updates", p, d);
    let (p, d) = criterion_evaluation();
    report(&mut results, "4 evaluation correctness", p, d);
    let (p, d) = criterion_determinism(tmp.path());
    report(&mut results, "5 determinism", p, d);
    let elapsed = start.elapsed();
    report(
        &mut results,
        "property suite runtime",
        elapsed < PROPERTY_BUDGET,
        format!("{:.1}s (budget {}s)", elapsed.as_secs_f64(), PROPERTY_BUDGET.as_secs()),
    );

    let start = Instant::now();
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let noiseless = generate_synthetic(&SyntheticSpec {
        within_class_noise: 0.0,
        cross_modal_noise: 0.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    println!(
        "INFO test split has {} pairs; the 1000-pair subset is clamped to it",
        data.test.len()
    );
    let mut runs = Vec::new();
    for seed in SEEDS {
        let t = Instant::now();
        runs.push(run_seed(&data, &noiseless, seed));
        println!("INFO seed {seed}: 9 training runs in {:.1}s", t.elapsed().as_secs_f64());
    }

    let le = |x: [f64; 2], y: [f64; 2]| x[0] <= y[0] && x[1] <= y[1];
    let lt = |x: [f64; 2], y: [f64; 2]| x[0] < y[0] && x[1] < y[1];

    let (p, d) = over_seeds(&runs, |r| {
        let (a, c, i) = (
            r.medr(Scenario::Adamine),
            r.medr(Scenario::AdamineInsCls),
            r.medr(Scenario::AdamineIns),
        );
        (
            le(a, c) && le(c, i) && lt(a, i),
            format!("adamine {} ins_cls {} ins {}", fmt2(a), fmt2(c), fmt2(i)),
        )
    });
    report(&mut results, "6 semantic benefit", p, d);

    let (p, d) = over_seeds(&runs, |r| {
        let (a, v) = (r.medr(Scenario::Adamine), r.medr(Scenario::AdamineAvg));
        (
            lt(a, v) && r.min_norm_ratio >= 1.0,
            format!(
                "adamine {} avg {} min norm ratio {:.3}",
                fmt2(a),
                fmt2(v),
                r.min_norm_ratio
            ),
        )
    });
    report(&mut results, "7 adaptive benefit", p, d);

    let (p, d) = over_seeds(&runs, |r| {
        let (i, w) = (r.medr(Scenario::AdamineIns), r.medr(Scenario::Pwpp));
        (le(i, w), format!("ins {} pwpp {}", fmt2(i), fmt2(w)))
    });
    report(&mut results, "8 triplet vs pairwise", p, d);

    let (p, d) = over_seeds(&runs, |r| {
        let (s, i) = (r.medr(Scenario::AdamineSem), r.medr(Scenario::AdamineIns));
        (
            s[0] > 2.0 * i[0] && s[1] > 2.0 * i[1],
            format!("sem {} ins {}", fmt2(s), fmt2(i)),
        )
    });
    report(&mut results, "9 semantic-only degradation", p, d);

    let (p, d) = over_seeds(&runs, |r| {
        (
            r.val_medr_09 >= r.val_medr_03,
            format!("val MedR lambda 0.3 {} lambda 0.9 {}", r.val_medr_03, r.val_medr_09),
        )
    });
    report(&mut results, "10 lambda sweep shape", p, d);

    let (p, d) = over_seeds(&runs, |r| {
        let a = r.medr(Scenario::Adamine);
        let n = [r.noiseless.a_to_b.medr.mean, r.noiseless.b_to_a.medr.mean];
        (
            a[0] <= 5.0 && a[1] <= 5.0 && n == [1.0, 1.0],
            format!("default {} noiseless {}", fmt2(a), fmt2(n)),
        )
    });
    report(&mut results, "11 absolute sanity", p, d);
    let (p, d) = over_seeds(&runs, |r| {
        let a = r.medr(Scenario::Adamine);
        (a[0] <= 5.0 && a[1] <= 5.0, fmt2(a))
    });
    println!("INFO 11a default data alone: {} {d}", if p { "holds" } else { "fails" });
    let (p, d) = over_seeds(&runs, |r| {
        let n = [r.noiseless.a_to_b.medr.mean, r.noiseless.b_to_a.medr.mean];
        (n == [1.0, 1.0], fmt2(n))
    });
    println!(
        "INFO 11b noiseless data alone: {} {d}",
        if p { "holds" } else { "fails" }
    );

    let elapsed = start.elapsed();
    report(
        &mut results,
        "reproduction suite runtime",
        elapsed < REPRODUCTION_BUDGET,
        format!(
            "{:.1}s (budget {}s)",
            elapsed.as_secs_f64(),
            REPRODUCTION_BUDGET.as_secs()
        ),
    );

    let failed: Vec<&Verdict> = results.iter().filter(|v| !v.pass).collect();
    println!("SUMMARY {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        for v in &failed {
            eprintln!("failed: {} ({})", v.name, v.detail);
        }
        std::process::exit(1);
    }
}
