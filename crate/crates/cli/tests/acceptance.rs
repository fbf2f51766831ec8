//! Acceptance criteria. Each criterion prints one PASS/FAIL line with its
//! measurements; the process fails if any criterion does.

#![allow(clippy::needless_range_loop)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use emm::corpus::{synthesize_corpus, BetaSupport, Corpus, Example, Instance, SynthConfig};
use emm::eval::{clamp_ks, evaluate, topk_f1};
use emm::inference::{e_step, update_gamma, InferenceMode};
use emm::learning::{fit, train};
use emm::margin::{box_bound, cutting_plane, restricted_objective, solve_qp, Constraint};
use emm::model::{example_elbo, BetaTable, ModelParams, TrainConfig, MODE_MAX_MARGIN};
use emm::numerics::{digamma, log_gamma, trigamma};
use emm::oracle::{exact_log_likelihood, root_bisection_eq10, LabelTerm, PointParams};
use emm::predict::{predict_caption, predict_captions, PredictionResult};
use emm::Matrix;
use log::{Level, LevelFilter, Log, Metadata, Record};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Capture(Mutex<Vec<String>>);

impl Log for Capture {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= Level::Warn
    }
    fn log(&self, r: &Record) {
        if self.enabled(r.metadata()) {
            self.0.lock().unwrap().push(r.args().to_string());
        }
    }
    fn flush(&self) {}
}

static WARNINGS: Capture = Capture(Mutex::new(Vec::new()));

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn labelled(mut cfg: SynthConfig) -> SynthConfig {
    cfg.w = vec![15.0; cfg.num_tags];
    cfg.label_bias = -4.5;
    cfg
}

fn special_functions() -> Verdict {
    use std::f64::consts::{LN_2, PI};
    let euler = 0.577_215_664_901_532_9;
    let refs: [(&str, f64, f64); 9] = [
        ("digamma(1)", digamma(1.0).unwrap(), -euler),
        ("digamma(0.5)", digamma(0.5).unwrap(), -euler - 2.0 * LN_2),
        ("digamma(2)", digamma(2.0).unwrap(), 1.0 - euler),
        ("digamma(10)", digamma(10.0).unwrap(), 2.251_752_589_066_721),
        ("trigamma(1)", trigamma(1.0).unwrap(), PI * PI / 6.0),
        ("trigamma(0.5)", trigamma(0.5).unwrap(), PI * PI / 2.0),
        ("log_gamma(5)", log_gamma(5.0).unwrap(), 24f64.ln()),
        ("log_gamma(0.5)", log_gamma(0.5).unwrap(), PI.sqrt().ln()),
        ("log_gamma(1)", log_gamma(1.0).unwrap(), 0.0),
    ];
    let worst_ref = refs.iter().map(|(_, a, b)| (a - b).abs()).fold(0.0, f64::max);
    let bad: Vec<&str> = refs
        .iter()
        .filter(|(_, a, b)| (a - b).abs() > 1e-10)
        .map(|r| r.0)
        .collect();

    let mut rng = StdRng::seed_from_u64(1);
    let mut worst_rec: f64 = 0.0;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(1e-3..100.0);
        let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
        let t = trigamma(x + 1.0).unwrap() - trigamma(x).unwrap() + 1.0 / (x * x);
        let g = log_gamma(x + 1.0).unwrap() - log_gamma(x).unwrap() - x.ln();
        let scale = [1.0 / x, 1.0 / (x * x), log_gamma(x).unwrap().abs()]
            .iter()
            .fold(1.0f64, |m, v| m.max(*v));
        worst_rec = worst_rec.max(d.abs().max(t.abs()).max(g.abs()) / scale);
    }
    verdict(
        bad.is_empty() && worst_rec <= 1e-10,
        format!("worst reference error {worst_ref:.1e} (off: {bad:?}), worst recurrence error {worst_rec:.1e}"),
    )
}

fn shape_solver() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2);
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = rng.random_range(0.0..20.0);
        let l = rng.random_range(0.1..10.0);
        let r = rng.random_range(0.1..10.0);
        let a = update_gamma(s, l, r, &cfg).unwrap();
        let b = root_bisection_eq10(s, l, r).unwrap();
        worst = worst.max((a - b).abs());
    }
    let mut worst_forced: f64 = 0.0;
    for _ in 0..100 {
        let s = rng.random_range(0.0..20.0);
        let l: f64 = rng.random_range(0.1..10.0);
        worst_forced = worst_forced.max((update_gamma(s, l, 1.0 / l, &cfg).unwrap() - (s + 1.0)).abs());
    }
    verdict(
        worst <= 1e-8 && worst_forced <= 1e-10,
        format!("max |newton - bisection| {worst:.1e}, max forced-root error {worst_forced:.1e}"),
    )
}

fn criterion3_corpus() -> Corpus {
    synthesize_corpus(&SynthConfig::uniform(10, 50, 200, 7)).unwrap().0
}

fn criterion3_config() -> TrainConfig {
    // A tolerance that is never met keeps the loop running all 50 iterations.
    TrainConfig {
        em_max_iters: 50,
        elbo_rel_tol: 1e-15,
        ..TrainConfig::default()
    }
}

fn monotone_bound(model: &mut Option<ModelParams>) -> Verdict {
    let corpus = criterion3_corpus();
    let out = fit(&corpus, &criterion3_config()).unwrap();
    let records = &out.trace.records;
    let worst_sweep = records
        .iter()
        .map(|r| r.worst_sweep_change)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_iter = records
        .windows(2)
        .map(|p| (p[0].objective - p[1].objective) / p[0].objective.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    *model = Some(out.params);
    verdict(
        records.len() == 50 && worst_sweep <= 1e-8 && worst_iter <= 1e-8,
        format!(
            "{} iterations, worst relative decrease per sweep {worst_sweep:.1e}, per iteration {worst_iter:.1e}",
            records.len()
        ),
    )
}

fn bound_below_oracle() -> Verdict {
    let mut rng = StdRng::seed_from_u64(4);
    let cfg = TrainConfig {
        elbo_rel_tol: 1e-12,
        estep_max_iters: 10_000,
        ..TrainConfig::default()
    };
    let mut gaps = Vec::new();
    for _ in 0..20 {
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let point = PointParams {
            lambda: (0..2).map(|_| rng.random_range(0.1..10.0)).collect(),
            beta: Matrix::from_rows(&rows),
            w: vec![0.0; 2],
        };
        let instances: Vec<Instance> = (0..2)
            .map(|_| {
                let counts: Vec<(usize, u32)> = (0..3)
                    .map(|d| (d, rng.random_range(0..4u32)))
                    .filter(|c| c.1 > 0)
                    .collect();
                Instance::new(if counts.is_empty() { vec![(0, 1)] } else { counts }).unwrap()
            })
            .collect();
        let example = Example::new("tiny", instances, vec![0]).unwrap();
        let params = ModelParams::with_point_beta(point.lambda.clone(), &point.beta, point.w.clone());
        let beta = BetaTable::point(&point.beta);
        let state = e_step(&example, &params, &beta, None, InferenceMode::Test, &cfg).unwrap();
        let bound = example_elbo(&params, &beta, &example, &state, None, false).total();
        let exact = exact_log_likelihood(&example, &point, LabelTerm::Exclude).unwrap();
        gaps.push(exact - bound);
    }
    let violations = gaps.iter().filter(|&&g| g < -1e-6).count();
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[9] + sorted[10]) / 2.0;
    verdict(
        violations == 0,
        format!(
            "median gap (exact - bound) {median:.4}, min {:.4}, {violations} of 20 instances with bound above the exact value",
            sorted[0]
        ),
    )
}

fn sparsity(model: Option<&ModelParams>) -> Verdict {
    let Some(params) = model else {
        return verdict(false, "criterion 3 produced no model".into());
    };
    let corpus = criterion3_corpus();
    let cfg = criterion3_config();
    let beta = BetaTable::expected(&params.mu);
    let (mut agree, mut total) = (0, 0);
    for ex in &corpus.examples {
        let st = e_step(ex, params, &beta, None, InferenceMode::Train, &cfg).unwrap();
        let sums = st.phi_sums();
        for c in 0..corpus.num_tags {
            let lhs = st.gamma[c] - 1.0;
            let rhs = sums[c] - (params.lambda[c] * st.rho[c] - 1.0) / trigamma(st.gamma[c]).unwrap();
            let tie = lhs.abs() < 1e-8 && rhs.abs() < 1e-8;
            agree += usize::from(tie || lhs.signum() == rhs.signum());
            total += 1;
        }
    }

    let mut synth = labelled(SynthConfig::uniform(50, 200, 500, 11));
    synth.instances = (2, 4);
    let (big, truth) = synthesize_corpus(&synth).unwrap();
    let distinct = truth
        .z
        .iter()
        .map(|z| {
            let mut z = z.clone();
            z.sort_unstable();
            z.dedup();
            z.len() as f64
        })
        .sum::<f64>()
        / big.len() as f64;
    let cfg = TrainConfig::default();
    let (trained, _) = train(&big, &cfg).unwrap();
    let preds = predict_captions(&big, &trained, &cfg).unwrap();
    let support = preds.iter().map(|p| p.support.len() as f64).sum::<f64>() / preds.len() as f64;
    verdict(
        agree == total && support < 25.0,
        format!(
            "sign consistency {agree}/{total}; true tags per example {distinct:.2}, labels per example {:.2}, mean support {support:.2} of 50",
            big.mean_labels_per_example()
        ),
    )
}

fn dual_value(ws: &[Constraint], alpha: &[f64], nu1: f64, c: usize) -> f64 {
    let w = weights(ws, alpha, nu1, c);
    alpha.iter().sum::<f64>() - 0.5 * nu1 * w.iter().map(|x| x * x).sum::<f64>()
}

fn weights(ws: &[Constraint], alpha: &[f64], nu1: f64, c: usize) -> Vec<f64> {
    let mut w = vec![0.0; c];
    for (k, a) in ws.iter().zip(alpha) {
        w[k.i] += a * k.a_i / nu1;
        w[k.j] -= a * k.a_j / nu1;
    }
    w
}

fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b, mut best) = (lo, hi, lo);
    for _ in 0..6 {
        let step = (b - a) / 1000.0;
        best = (0..=1000)
            .map(|t| a + step * t as f64)
            .max_by(|x, y| f(*x).total_cmp(&f(*y)))
            .unwrap();
        a = (best - step).max(lo);
        b = (best + step).min(hi);
    }
    best
}

fn pg_reference(ws: &[Constraint], upper: &[f64], nu1: f64, c: usize) -> Vec<f64> {
    let step = nu1 / ws.iter().map(|k| k.norm_sq()).sum::<f64>().max(1e-12);
    let mut alpha = vec![0.0; ws.len()];
    let mut prev = alpha.clone();
    for t in 1..=200_000 {
        let mom = (t as f64 - 1.0) / (t as f64 + 2.0);
        let look: Vec<f64> = alpha.iter().zip(&prev).map(|(a, b)| a + mom * (a - b)).collect();
        let w = weights(ws, &look, nu1, c);
        prev = alpha.clone();
        for (idx, k) in ws.iter().enumerate() {
            alpha[idx] = (look[idx] + step * (1.0 - k.margin(&w))).clamp(0.0, upper[idx]);
        }
    }
    alpha
}

fn qp_correctness() -> Verdict {
    let mut rng = StdRng::seed_from_u64(6);
    let mut worst_grid: f64 = 0.0;
    for case in 0..12 {
        let (ai, aj, nu1, c) = match case {
            0 => (1.0, 1.0, 1.0, 10.0),
            1 => (1.0, 1.0, 1.0, 0.1),
            _ => (
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
                rng.random_range(0.1..5.0),
                rng.random_range(0.01..5.0),
            ),
        };
        let ws = [Constraint {
            n: 0,
            i: 0,
            j: 1,
            a_i: ai,
            a_j: aj,
        }];
        let sol = solve_qp(&ws, nu1, c, &[(1, 1)], 2, None, 100_000, 1e-12).unwrap();
        let closed = c.min(nu1 / (ai * ai + aj * aj));
        let grid = grid_argmax(|a| dual_value(&ws, &[a], nu1, 2), 0.0, c);
        worst_grid = worst_grid
            .max((sol.alpha[0] - grid).abs())
            .max((sol.alpha[0] - closed).abs());
    }

    let (mut worst_kkt, mut worst_obj, mut box_ok): (f64, f64, bool) = (0.0, 0.0, true);
    for _ in 0..20 {
        let (n, c) = (rng.random_range(2..12), rng.random_range(3..8));
        let labels: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut tags: Vec<usize> = (0..c).collect();
                for i in (1..c).rev() {
                    tags.swap(i, rng.random_range(0..=i));
                }
                tags.truncate(rng.random_range(1..c));
                tags
            })
            .collect();
        let sizes: Vec<(usize, usize)> = labels.iter().map(|y| (y.len(), c - y.len())).collect();
        let mut ws = Vec::new();
        for (nn, y) in labels.iter().enumerate() {
            let zbar: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
            for &i in y {
                for j in (0..c).filter(|j| !y.contains(j)) {
                    ws.push(Constraint {
                        n: nn,
                        i,
                        j,
                        a_i: zbar[i],
                        a_j: zbar[j],
                    });
                }
            }
        }
        for i in (1..ws.len()).rev() {
            ws.swap(i, rng.random_range(0..=i));
        }
        ws.truncate(rng.random_range(1..=50));
        let (nu1, nu2) = (rng.random_range(0.05..3.0), rng.random_range(0.1..50.0));
        let sol = solve_qp(&ws, nu1, nu2, &sizes, c, None, 1_000_000, 1e-10).unwrap();
        worst_kkt = worst_kkt.max(sol.kkt_residual);
        let upper: Vec<f64> = ws.iter().map(|k| box_bound(nu2, n, sizes[k.n])).collect();
        box_ok &= sol.alpha.iter().zip(&upper).all(|(a, u)| (0.0..=*u).contains(a));
        let reference = weights(&ws, &pg_reference(&ws, &upper, nu1, c), nu1, c);
        let ours = restricted_objective(&ws, &sol.w, nu1, nu2, &sizes);
        let theirs = restricted_objective(&ws, &reference, nu1, nu2, &sizes);
        worst_obj = worst_obj.max((ours - theirs).abs());
    }

    let (corpus, _) = synthesize_corpus(&labelled(SynthConfig::uniform(8, 40, 80, 16))).unwrap();
    let mut cfg = TrainConfig {
        nu2: 10.0,
        ..TrainConfig::default()
    };
    cfg.mode = MODE_MAX_MARGIN.into();
    let params = emm::learning::initial_params(&corpus, &cfg);
    let beta = BetaTable::expected(&params.mu);
    let states: Vec<_> = corpus
        .examples
        .iter()
        .map(|ex| e_step(ex, &params, &beta, None, InferenceMode::Train, &cfg).unwrap())
        .collect();
    let res = cutting_plane(&corpus, &states, &[0.0; 8], None, &cfg).unwrap();
    let worst_round = res
        .rounds
        .iter()
        .map(|r| r.after - r.before)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        worst_grid <= 1e-6 && worst_kkt <= 1e-6 && box_ok && worst_obj <= 1e-4 && worst_round <= 1e-9,
        format!(
            "single-constraint error {worst_grid:.1e}, worst KKT residual {worst_kkt:.1e}, duals in box {box_ok}, \
             objective gap to reference {worst_obj:.1e}, {} cutting-plane rounds with worst increase {worst_round:.1e}",
            res.rounds.len()
        ),
    )
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn recovery() -> Verdict {
    let mut synth = labelled(SynthConfig::uniform(20, 200, 1000, 13));
    synth.beta_support = BetaSupport::Disjoint;
    let (corpus, truth) = synthesize_corpus(&synth).unwrap();
    let (params, _) = train(&corpus, &TrainConfig::default()).unwrap();
    let c = corpus.num_tags;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..c {
        for b in 0..c {
            pairs.push((cosine(params.mu.row(a), truth.beta.row(b)), a, b));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let (mut used_a, mut used_b, mut matched) = (vec![false; c], vec![false; c], Vec::new());
    for (s, a, b) in pairs {
        if !used_a[a] && !used_b[b] {
            used_a[a] = true;
            used_b[b] = true;
            matched.push(s);
        }
    }
    let good = matched.iter().filter(|&&s| s >= 0.8).count();
    let min = matched.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        good * 5 >= c * 4,
        format!("{good}/{c} tags matched with cosine >= 0.8 (lowest {min:.3})"),
    )
}

fn top3(corpus: &Corpus, params: &ModelParams, cfg: &TrainConfig) -> f64 {
    evaluate(corpus, params, &[3], cfg, 0).unwrap()[0].f1
}

fn margin_vs_mle() -> Verdict {
    let mut diffs = Vec::new();
    let (mut mm_sum, mut mle_sum) = (0.0, 0.0);
    for seed in 1..=5 {
        let (corpus, _) = synthesize_corpus(&labelled(SynthConfig::uniform(30, 100, 700, 100 + seed))).unwrap();
        let train_part = corpus.subset(&(0..500).collect::<Vec<_>>());
        let test_part = corpus.subset(&(500..700).collect::<Vec<_>>());
        let mle_cfg = TrainConfig::default();
        let mm_cfg = TrainConfig {
            mode: MODE_MAX_MARGIN.into(),
            ..TrainConfig::default()
        };
        let (mle, _) = train(&train_part, &mle_cfg).unwrap();
        let (mm, _) = train(&train_part, &mm_cfg).unwrap();
        let (a, b) = (top3(&test_part, &mm, &mm_cfg), top3(&test_part, &mle, &mle_cfg));
        mm_sum += a;
        mle_sum += b;
        diffs.push(format!("{:+.4}", a - b));
    }
    let (mm, mle) = (mm_sum / 5.0, mle_sum / 5.0);
    verdict(
        mm >= mle - 0.02,
        format!(
            "mean top-3 F1 max-margin {mm:.4} vs MLE {mle:.4}; per-seed difference [{}]",
            diffs.join(", ")
        ),
    )
}

fn metric_unit() -> Verdict {
    let ranked = |tags: Vec<usize>| PredictionResult {
        id: String::new(),
        tag_scores: vec![],
        raw_scores: vec![],
        ranked_tags: tags,
        support: vec![],
    };
    let results = [ranked(vec![1, 3, 0, 2, 4]), ranked(vec![3, 4, 0, 1, 2])];
    let f1 = topk_f1(&results, &[vec![1, 2], vec![3]], 2).unwrap();
    let before = WARNINGS.0.lock().unwrap().len();
    let clamped = clamp_ks(&[3, 5, 7], 5);
    let warned = WARNINGS.0.lock().unwrap()[before..].iter().any(|w| w.contains("k = 7"));
    verdict(
        f1 == 4.0 / 7.0 && clamped == [3, 5, 5] && warned,
        format!(
            "top-2 F1 {f1:.16} (4/7 = {:.16}); k 7 of 5 tags clamps to {} with warning {warned}",
            4.0 / 7.0,
            clamped[2]
        ),
    )
}

fn emm_bin(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_emm"))
        .args(args)
        .env("EMM_LOG", "error")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn determinism_and_equivariance() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let path = |n: &str| d.join(n).to_str().unwrap().to_string();
    let synth = |name: &str| {
        emm_bin(&[
            "synth",
            "--tags",
            "8",
            "--features",
            "40",
            "--examples",
            "120",
            "--seed",
            "7",
            "--out",
            &path(name),
        ])
    };
    synth("a.jsonl");
    synth("b.jsonl");
    let corpora =
        read(d, "a.jsonl") == read(d, "b.jsonl") && read(d, "a.jsonl.truth.json") == read(d, "b.jsonl.truth.json");

    let mut checkpoints = true;
    let mut metrics = true;
    let mut predictions = true;
    for mode in ["mle", "max-margin"] {
        let model = |t: &str| path(&format!("{mode}-{t}.ckpt"));
        for t in ["1", "4"] {
            emm_bin(&[
                "--threads",
                t,
                "train",
                "--corpus",
                &path("a.jsonl"),
                "--mode",
                mode,
                "--em-iters",
                "10",
                "--out",
                &model(t),
            ]);
            emm_bin(&[
                "--threads",
                t,
                "predict",
                "--corpus",
                &path("a.jsonl"),
                "--model",
                &model(t),
                "--out",
                &path(&format!("{mode}-{t}.pred")),
            ]);
            emm_bin(&[
                "--threads",
                t,
                "eval",
                "--corpus",
                &path("a.jsonl"),
                "--model",
                &model(t),
                "--k",
                "1,3,5",
                "--folds",
                "5",
                "--seed",
                "7",
                "--em-iters",
                "5",
                "--out",
                &path(&format!("{mode}-{t}.metrics")),
                "--csv",
                &path(&format!("{mode}-{t}.csv")),
            ]);
        }
        let same = |ext: &str| read(d, &format!("{mode}-1.{ext}")) == read(d, &format!("{mode}-4.{ext}"));
        checkpoints &= same("ckpt");
        predictions &= same("pred");
        metrics &= same("metrics") && same("csv");
    }

    // Equivariance on a five-tag fixture. A tolerance that is never met
    // fixes the sweep counts, so rounding noise cannot flip a stopping test.
    let (fixture, _) = synthesize_corpus(&SynthConfig::uniform(5, 20, 60, 10)).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let cfg = TrainConfig {
        em_max_iters: 10,
        elbo_rel_tol: 1e-13,
        ..TrainConfig::default()
    };
    let (params, _) = train(&fixture, &cfg).unwrap();
    let (p_params, _) = train(&fixture.permute_tags(&perm), &cfg).unwrap();
    let expect = params.permute_tags(&perm);
    let mut worst: f64 = 0.0;
    for (a, b) in [(&p_params.lambda, &expect.lambda), (&p_params.w, &expect.w)] {
        worst = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / y.abs().max(1e-3))
            .fold(worst, f64::max);
    }
    worst = p_params
        .mu
        .as_slice()
        .iter()
        .zip(expect.mu.as_slice())
        .map(|(x, y)| (x - y).abs() / y.abs())
        .fold(worst, f64::max);
    for ex in &fixture.examples {
        let a = predict_caption(ex, &params, &cfg).unwrap();
        let b = predict_caption(&ex.relabel(&perm), &p_params, &cfg).unwrap();
        for (t, &s) in a.raw_scores.iter().enumerate() {
            worst = worst.max((b.raw_scores[perm[t]] - s).abs() / s.abs().max(1e-3));
        }
    }
    let equivariant = worst <= 1e-6;
    verdict(
        corpora && checkpoints && predictions && metrics && equivariant,
        format!(
            "identical corpora {corpora}, checkpoints {checkpoints}, predictions {predictions}, metrics {metrics} \
             across --threads 1/4; worst relative equivariance error {worst:.1e} (MLE training and prediction)"
        ),
    )
}

fn main() {
    log::set_logger(&WARNINGS).unwrap();
    log::set_max_level(LevelFilter::Warn);
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));

    let mut model: Option<ModelParams> = None;
    let mut results = Vec::new();
    let mut run = |id: u32, name: &str, limit: Duration, f: &mut dyn FnMut() -> Verdict| {
        if filter
            .as_deref()
            .is_some_and(|p| !name.contains(p) && p != id.to_string())
        {
            return;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let pass = v.pass && took <= limit;
        println!(
            "{} criterion {id:>2} {name}: {}; {:.2} s (limit {} s)",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        results.push(pass);
    };
    let s = Duration::from_secs;
    run(1, "special functions", s(1), &mut special_functions);
    run(2, "shape equation solver", s(5), &mut shape_solver);
    run(3, "bound monotonicity", s(60), &mut || monotone_bound(&mut model));
    run(4, "bound below exact likelihood", s(30), &mut bound_below_oracle);
    if model.is_none() && filter.is_some() {
        let out = fit(&criterion3_corpus(), &criterion3_config());
        model = out.ok().map(|o| o.params);
    }
    run(5, "sparsity", s(300), &mut || sparsity(model.as_ref()));
    run(6, "QP correctness", s(30), &mut qp_correctness);
    run(7, "parameter recovery", s(300), &mut recovery);
    run(8, "max-margin vs MLE", s(600), &mut margin_vs_mle);
    run(9, "metric unit check", s(1), &mut metric_unit);
    run(
        10,
        "determinism and equivariance",
        s(300),
        &mut determinism_and_equivariance,
    );

    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
