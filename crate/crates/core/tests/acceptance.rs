//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.
//!
//! Reference values are computed here with plain loops, independently of
//! the library code under test.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cafkt::data::ClassProfile;
use cafkt::distill::{alignment_report, pretrain};
use cafkt::eval::{concat_classifiers, PathEvaluator};
use cafkt::fed::{aggregate, cdb_apply, icp_apply, ActiveClassSet, Aggregation, ClientUpdate, Method, Weighting};
use cafkt::losses::{ce_logit_gradient, classifier_ce_gradient, kd_loss_and_grad, KdTerms};
use cafkt::model::NORMALIZE_EPS;
use cafkt::pipeline::{build_encoders, federate_domain, generate_domains, run_pretraining, ExperimentConfig, Pretrained};
use cafkt::privacy::{clip_schedule, DPConfig};
use cafkt::{ClassifierWeights, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 3] = [42, 21, 98];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn ref_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn ref_logits(w: &Matrix, f: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|c| w.row(c).iter().zip(f).map(|(a, b)| a * b).sum())
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1

fn cdb_invariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut softmax_err, mut idem_err, mut mean_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let c = rng.random_range(2..=40);
        let f = rng.random_range(1..=48);
        let scale = rng.random_range(0.01..5.0);
        let w = ClassifierWeights::new(normal_matrix(c, f, scale, &mut rng)).unwrap();
        let x: Vec<f64> = normal_matrix(1, f, 1.0, &mut rng).into_vec();

        let centered = cdb_apply(&w);
        let p0 = ref_softmax(&ref_logits(&w.weight, &x));
        let p1 = ref_softmax(&ref_logits(&centered.weight, &x));
        softmax_err = softmax_err.max(max_abs_diff(&p0, &p1));

        let twice = cdb_apply(&centered);
        idem_err = idem_err.max(max_abs_diff(twice.weight.as_slice(), centered.weight.as_slice()));

        for j in 0..f {
            let m: f64 = (0..c).map(|r| centered.weight.row(r)[j]).sum::<f64>() / c as f64;
            mean_err = mean_err.max(m.abs());
        }
    }
    verdict(
        softmax_err <= 1e-9 && idem_err <= 1e-12 && mean_err <= 1e-12,
        format!("softmax {softmax_err:.1e}, idempotence {idem_err:.1e}, class mean {mean_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 2

fn icp_boundaries() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut frozen_ok, mut identity_ok, mut blend_err) = (true, true, 0.0f64);
    for _ in 0..500 {
        let c = rng.random_range(2..=30);
        let f = rng.random_range(1..=32);
        let cur = ClassifierWeights::new(normal_matrix(c, f, 1.0, &mut rng)).unwrap();
        let prev = ClassifierWeights::new(normal_matrix(c, f, 1.0, &mut rng)).unwrap();
        let labels: Vec<usize> = (0..rng.random_range(0..=c)).map(|_| rng.random_range(0..c)).collect();
        let active = ActiveClassSet::from_labels(&labels);

        let frozen = icp_apply(&cur, &prev, &active, 0.0).unwrap();
        let same = icp_apply(&cur, &prev, &active, 1.0).unwrap();
        identity_ok &= same.weight.as_slice() == cur.weight.as_slice();
        for r in 0..c {
            let want = if labels.contains(&r) { cur.weight.row(r) } else { prev.weight.row(r) };
            frozen_ok &= frozen.weight.row(r) == want;
        }

        let eta = rng.random_range(0.0..1.0);
        let got = icp_apply(&cur, &prev, &active, eta).unwrap();
        for r in 0..c {
            for j in 0..f {
                let want = if labels.contains(&r) {
                    cur.weight.row(r)[j]
                } else {
                    eta * cur.weight.row(r)[j] + (1.0 - eta) * prev.weight.row(r)[j]
                };
                blend_err = blend_err.max((got.weight.row(r)[j] - want).abs());
            }
        }
    }
    verdict(
        frozen_ok && identity_ok && blend_err <= 1e-15,
        format!("eta=0 frozen bitwise: {frozen_ok}, eta=1 identity: {identity_ok}, blend error {blend_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

const FD_STEP: f64 = 1e-6;

/// `‖analytic − numeric‖∞ / ‖numeric‖∞` with a central-difference numeric gradient.
fn fd_relative_error(analytic: &Matrix, x: &Matrix, loss: impl Fn(&Matrix) -> f64) -> f64 {
    let mut numeric = vec![0.0; x.as_slice().len()];
    for (i, g) in numeric.iter_mut().enumerate() {
        let mut plus = x.clone();
        plus.as_mut_slice()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.as_mut_slice()[i] -= FD_STEP;
        *g = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
    }
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    max_abs_diff(analytic.as_slice(), &numeric) / scale
}

fn ref_ce(w: &Matrix, x: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let z = ref_logits(w, x.row(b));
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64
}

fn ref_kd_l2(s: &Matrix, t: &Matrix) -> f64 {
    let sum: f64 = s.as_slice().iter().zip(t.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    sum / s.as_slice().len() as f64
}

fn ref_kd_cos(s: &Matrix, t: &Matrix) -> f64 {
    let mut total = 0.0;
    for b in 0..s.rows() {
        let (u, v) = (s.row(b), t.row(b));
        let dot: f64 = u.iter().zip(v).map(|(a, c)| a * c).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        total += 1.0 - dot / (nu * nv);
    }
    total / s.rows() as f64
}

fn gradient_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ce_w, mut ce_z, mut l2, mut cos) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let l2_only = KdTerms { l1: false, l2: true, cos: false };
    let cos_only = KdTerms { l1: false, l2: false, cos: true };
    for _ in 0..100 {
        let b = rng.random_range(1..=8);
        let c = rng.random_range(2..=10);
        let f = rng.random_range(2..=12);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();

        let w = normal_matrix(c, f, 1.0, &mut rng);
        let x = normal_matrix(b, f, 1.0, &mut rng);
        let (_, g) = classifier_ce_gradient(&ClassifierWeights::new(w.clone()).unwrap(), &x, &labels).unwrap();
        ce_w = ce_w.max(fd_relative_error(&g, &w, |w| ref_ce(w, &x, &labels)));

        // with respect to the logits themselves: CE through an identity decoder
        let z = normal_matrix(b, c, 2.0, &mut rng);
        let (_, gz) = ce_logit_gradient(&z, &labels).unwrap();
        let eye = Matrix::identity(c);
        ce_z = ce_z.max(fd_relative_error(&gz, &z, |z| ref_ce(&eye, z, &labels)));

        let s = normal_matrix(b, f, 1.0, &mut rng);
        let t = normal_matrix(b, f, 1.0, &mut rng);
        let (_, gs) = kd_loss_and_grad(&s, &t, l2_only).unwrap();
        l2 = l2.max(fd_relative_error(&gs, &s, |s| ref_kd_l2(s, &t)));
        let (_, gc) = kd_loss_and_grad(&s, &t, cos_only).unwrap();
        cos = cos.max(fd_relative_error(&gc, &s, |s| ref_kd_cos(s, &t)));
    }
    let worst = ce_w.max(ce_z).max(l2).max(cos);
    verdict(
        worst < 1e-4,
        format!("max rel. error: CE/decoder {ce_w:.1e}, CE/logits {ce_z:.1e}, KD-L2 {l2:.1e}, KD-cos {cos:.1e}"),
    )
}

// ---------------------------------------------------------------- 4

fn aggregation_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut err = 0.0f64;
    for _ in 0..500 {
        let k = rng.random_range(1..=20);
        let c = rng.random_range(2..=20);
        let f = rng.random_range(1..=32);
        let mut updates: Vec<ClientUpdate> = (0..k)
            .map(|id| ClientUpdate {
                client_id: id * 3 + 1,
                weights: ClassifierWeights::new(normal_matrix(c, f, 1.0, &mut rng)).unwrap(),
                sample_count: rng.random_range(1..=500),
            })
            .collect();
        // the server must not depend on arrival order
        for i in (1..updates.len()).rev() {
            updates.swap(i, rng.random_range(0..=i));
        }
        let prev = ClassifierWeights::zeros(c, f);
        let got = aggregate(&updates, Aggregation::FedAvg, Weighting::Samples, &prev).unwrap();

        let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
        for i in 0..c * f {
            let mut acc = 0.0;
            for u in &updates {
                acc += u.sample_count as f64 * u.weights.weight.as_slice()[i];
            }
            err = err.max((got.weights.weight.as_slice()[i] - acc / total).abs());
        }
    }
    verdict(err <= 1e-12, format!("max deviation from naive weighted mean {err:.1e} over 500 sets"))
}

// ---------------------------------------------------------------- 5

fn realizable_distillation() -> Verdict {
    let mut worst_kd = 0.0f64;
    let mut worst_cos = 1.0f64;
    let mut samples = 0;
    for seed in SEEDS {
        let mut cfg = ExperimentConfig::default().with_seed(seed);
        cfg.model.realizable = true;
        cfg.pretrain.epochs = 60;
        cfg.pretrain.batch_size = 32;
        let data = generate_domains(&cfg).unwrap();
        let public = &data[0].public;
        samples = public.len();
        let enc = build_encoders(&cfg.model, cfg.input_dim().unwrap(), cfg.total_classes(), seed).unwrap();
        let out = pretrain(&enc.teacher, &enc.student, &enc.translator, &enc.classifier, public, &cfg.pretrain, None).unwrap();
        let kd = out.history.last().unwrap().loss.kd_total();
        let align = alignment_report(&enc.teacher, &enc.student, &out.translator, public).unwrap();
        worst_kd = worst_kd.max(kd);
        worst_cos = worst_cos.min(align.mean_cosine);
    }
    verdict(
        samples == 1000 && worst_kd < 1e-3 && worst_cos >= 0.999,
        format!("{samples} samples, 60 epochs: worst KD total {worst_kd:.2e}, worst mean cosine {worst_cos:.6}"),
    )
}

// ------------------------------------------------- synthetic benchmark

fn benchmark(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    let d = &mut cfg.domains[0];
    d.num_classes = 20;
    d.input_dim = 32;
    d.samples_per_class = 100;
    d.profile = ClassProfile::Zipf(1.0);
    d.cluster_noise_sigma = 1.0;
    d.latent_dim = Some(12);
    cfg.public_per_class = 50;
    cfg.alpha = 1.0;
    cfg.model.student_dim = 16;
    cfg.model.feature_dim = 32;
    cfg.pretrain.epochs = 300;
    cfg.pretrain.batch_size = 64;
    cfg.pretrain.lr_max = 0.005;
    cfg.pretrain.lambda = 0.5;
    let fed = &mut cfg.federation;
    fed.num_clients = 20;
    fed.active_per_round = 5;
    fed.rounds = 200;
    fed.local_epochs = 10;
    fed.batch_size = 8;
    fed.lr_max = 0.005;
    fed.eta = 0.05;
    cfg.federation = cfg.federation.clone().with_method(Method::FedPromo);
    cfg.eval_every = cfg.federation.rounds;
    cfg.with_seed(seed)
}

/// Pretraining does not depend on the federation settings or on α, so it is shared.
fn pretrained(seed: u64) -> &'static Pretrained {
    static CACHE: OnceLock<Vec<(u64, Pretrained)>> = OnceLock::new();
    let all = CACHE.get_or_init(|| SEEDS.iter().map(|&s| (s, run_pretraining(&benchmark(s)).unwrap())).collect());
    &all.iter().find(|(s, _)| *s == seed).expect("seed in the benchmark set").1
}

struct RunResult {
    server: f64,
    client: f64,
    max_clip_excess: f64,
}

fn federate(cfg: &ExperimentConfig, pre: &Pretrained, domain: usize) -> RunResult {
    let init = pre.domain_decoder(cfg, domain).unwrap();
    let out = federate_domain(
        cfg,
        &pre.encoders.teacher,
        pre.student(),
        &pre.outcome.translator,
        &pre.data[domain],
        domain,
        &init,
        None,
    )
    .unwrap();
    let last = out.metrics.last().unwrap();
    let rounds = cfg.federation.rounds;
    let mut excess = f64::NEG_INFINITY;
    for r in &out.metrics.rounds {
        if let Some(clipped) = r.max_clipped_norm {
            let t = std::f64::consts::FRAC_PI_2 * r.round as f64 / rounds as f64;
            let schedule = 12.6f64.min(26.9 * t.cos() * t.cos());
            excess = excess.max(clipped - schedule);
        }
    }
    RunResult {
        server: last.server.unwrap().top1,
        client: last.client.unwrap().top1,
        max_clip_excess: excess,
    }
}

/// Mean final server top-1 over the seed set after `tweak` is applied to the benchmark.
fn mean_server(tweak: impl Fn(&mut ExperimentConfig)) -> (f64, f64) {
    let mut acc = 0.0;
    let mut excess = f64::NEG_INFINITY;
    for seed in SEEDS {
        let mut cfg = benchmark(seed);
        tweak(&mut cfg);
        let r = federate(&cfg, pretrained(seed), 0);
        acc += r.server;
        excess = excess.max(r.max_clip_excess);
    }
    (acc / SEEDS.len() as f64, excess)
}

fn with_method(m: Method) -> impl Fn(&mut ExperimentConfig) {
    move |cfg| cfg.federation = cfg.federation.clone().with_method(m)
}

fn pts(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

// ---------------------------------------------------------------- 6

fn fedpromo_vs_fedavg() -> Verdict {
    let (promo, _) = mean_server(with_method(Method::FedPromo));
    let (avg, _) = mean_server(with_method(Method::FedAvg));
    verdict(
        promo - avg >= 0.03,
        format!("FedPromo {} vs FedAvg {} (gap {} pts)", pts(promo), pts(avg), pts(promo - avg)),
    )
}

// ---------------------------------------------------------------- 7

fn server_plug_gap() -> Verdict {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let mut cfg = benchmark(seed);
        cfg.model.realizable = true;
        cfg.domains[0].latent_dim = None;
        let pre = run_pretraining(&cfg).unwrap();
        let r = federate(&cfg, &pre, 0);
        worst = worst.max((r.server - r.client).abs());
        detail.push(format!("{} / {}", pts(r.server), pts(r.client)));
    }
    verdict(
        worst <= 0.005,
        format!("server / client per seed: {}; worst gap {} pts", detail.join(", "), pts(worst)),
    )
}

// ---------------------------------------------------------------- 8

fn dp_trend() -> Verdict {
    let eps = [f64::INFINITY, 50.0, 10.0, 5.0, 2.5, 1.0];
    let mut accs = Vec::new();
    let mut excess = f64::NEG_INFINITY;
    for &e in &eps {
        let (a, x) = mean_server(|cfg| {
            cfg.federation.dp = if e.is_finite() { DPConfig::with_epsilon(e) } else { DPConfig::default() };
        });
        accs.push(a);
        excess = excess.max(x);
    }
    let monotone = accs.windows(2).all(|w| w[1] <= w[0] + 0.01);
    let at_zero = clip_schedule(0, 200, &DPConfig::default()).unwrap();
    let listed: Vec<String> = eps.iter().zip(&accs).map(|(e, a)| format!("{e}: {}", pts(*a))).collect();
    verdict(
        monotone && excess <= 1e-12 && at_zero == 12.6,
        format!(
            "{}; clipped norm minus schedule at most {excess:.1e}; schedule(0) = {at_zero}",
            listed.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 9

fn dropout_robustness() -> Verdict {
    let (base, _) = mean_server(|_| {});
    let mut worst = 0.0f64;
    let mut listed = vec![format!("0: {}", pts(base))];
    for p in [0.1, 0.3, 0.5] {
        let (a, _) = mean_server(|cfg| cfg.federation.dropout_prob = p);
        worst = worst.max(base - a);
        listed.push(format!("{p}: {}", pts(a)));
    }
    verdict(
        worst <= 0.02,
        format!("{}; worst drop {} pts", listed.join(", "), pts(worst)),
    )
}

// ---------------------------------------------------------------- 10

fn alpha_trend() -> Verdict {
    let mut rows = Vec::new();
    let mut ordered = true;
    let mut drops = Vec::new();
    for m in [Method::FedPromo, Method::FedAvg] {
        let accs: Vec<f64> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&alpha| {
                mean_server(|cfg| {
                    with_method(m)(cfg);
                    cfg.alpha = alpha;
                })
                .0
            })
            .collect();
        ordered &= accs[0] < accs[1] && accs[1] < accs[2];
        let drop = (accs[1] - accs[0]) / accs[1];
        drops.push(drop);
        rows.push(format!(
            "{m} {}/{}/{} (drop {:.1}%)",
            pts(accs[0]),
            pts(accs[1]),
            pts(accs[2]),
            100.0 * drop
        ));
    }
    verdict(ordered && drops[0] < drops[1], format!("alpha 0.1/1/10: {}", rows.join("; ")))
}

// ---------------------------------------------------------------- 11

fn multi_domain_concat() -> Verdict {
    let mut ordered = true;
    let mut gaps = Vec::new();
    for seed in SEEDS {
        let mut cfg = benchmark(seed);
        let mut second = cfg.domains[0].clone();
        second.domain_id = 1;
        cfg.domains.push(second);
        let pre = run_pretraining(&cfg).unwrap();
        let decoders: Vec<ClassifierWeights> = (0..2)
            .map(|k| {
                let init = pre.domain_decoder(&cfg, k).unwrap();
                federate_domain(&cfg, &pre.encoders.teacher, pre.student(), &pre.outcome.translator, &pre.data[k], k, &init, None)
                    .unwrap()
                    .decoder
            })
            .collect();
        let concat = concat_classifiers(&decoders).unwrap();
        for (k, d) in pre.data.iter().enumerate() {
            let ev = PathEvaluator::new(&pre.encoders.teacher, pre.student(), &pre.outcome.translator, &d.val, NORMALIZE_EPS).unwrap();
            let acc = concat.domain_accuracy(k, &ev.server_features, &ev.labels).unwrap();
            ordered &= acc.agnostic_top1 <= acc.specific_top1;
            gaps.push(acc.specific_top1 - acc.agnostic_top1);
        }
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    verdict(
        ordered && mean_gap <= 0.10,
        format!(
            "agnostic <= specific in all {} cases: {ordered}; mean gap {} pts, worst {} pts",
            gaps.len(),
            pts(mean_gap),
            pts(worst)
        ),
    )
}

// ---------------------------------------------------------------- 12

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cafkt(args: &[&str], out: &Path, envs: &[(&str, &str)]) -> Result<(), String> {
    let cfg = workspace_root().join("configs/benchmark.cfg");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cafkt"));
    cmd.args(args).arg("--config").arg(&cfg).arg("--out").arg(out);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let o = cmd.output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("pretrain");
    if let Err(e) = cafkt(&["pretrain"], &base, &[]) {
        return verdict(false, format!("pretrain failed: {e}"));
    }
    let ckpt = base.join("pretrain.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    type Run<'a> = (&'a str, &'a [&'a str], &'a [(&'a str, &'a str)]);
    let runs: [Run; 3] = [
        ("parallel_a", &["--set", "run.parallel=true"], &[("RAYON_NUM_THREADS", "4")]),
        ("parallel_b", &["--set", "run.parallel=true"], &[("RAYON_NUM_THREADS", "3")]),
        ("serial", &["--set", "run.parallel=false"], &[]),
    ];
    let mut artifacts = Vec::new();
    for (name, extra, envs) in runs {
        let out = dir.path().join(name);
        let mut args = vec!["federate", "--checkpoint", ckpt];
        args.extend_from_slice(extra);
        if let Err(e) = cafkt(&args, &out, envs) {
            return verdict(false, format!("{name} federate failed: {e}"));
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        artifacts.push((read("metrics.csv"), read("federated.ckpt")));
    }
    let same = artifacts.windows(2).all(|w| w[0] == w[1]);
    let metric_bytes = artifacts[0].0.len();
    let ckpt_bytes = artifacts[0].1.len();
    verdict(
        same,
        format!(
            "3 federate runs (2 forced-parallel, 1 serial): metrics.csv ({metric_bytes} B) and federated.ckpt ({ckpt_bytes} B) identical: {same}"
        ),
    )
}

type Criterion = (u32, &'static str, u64, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "CDB invariance", 1, cdb_invariance),
        (2, "ICP boundaries", 1, icp_boundaries),
        (3, "gradient correctness", 10, gradient_checks),
        (4, "aggregation oracle", 1, aggregation_oracle),
        (5, "realizable distillation", 30, realizable_distillation),
        (6, "FedPromo vs FedAvg", 120, fedpromo_vs_fedavg),
        (7, "server-plug gap", 120, server_plug_gap),
        (8, "DP trend", 600, dp_trend),
        (9, "dropout robustness", 300, dropout_robustness),
        (10, "alpha heterogeneity trend", 300, alpha_trend),
        (11, "multi-domain concat", 120, multi_domain_concat),
        (12, "determinism", 120, determinism),
    ];
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        let t = Instant::now();
        let v = run();
        let elapsed = t.elapsed();
        let in_time = elapsed < Duration::from_secs(budget);
        let pass = v.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "[{}] {id:>2} {name}: {} ({:.2}s of {budget}s{})",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
