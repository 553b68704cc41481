//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line even when output is captured elsewhere.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::Synth;
use vexrec::attention::{AttentionForward, AttentionParams};
use vexrec::checkpoint;
use vexrec::data::{RegionGrid, RegionLabelSet, RegionalFeatureStore};
use vexrec::eval::{
    evaluate, hit_ratio, ndcg, precision_recall_f1, random_baseline, region_explanation_score, rouge_n, EvalInputs,
    F1Mode, RecommendationList,
};
use vexrec::gradcheck::{run_gradcheck, GradcheckOptions};
use vexrec::gru::{context_gate_beta, gru_step_standard, gru_step_visual, word_distribution};
use vexrec::numerics::DenseVector;
use vexrec::params::{InitScheme, ModelParams, Variant};
use vexrec::trainer::{backprop_text_to_attention, joint_objective, ObjectiveInputs, TrainConfig, Trainer};
use vexrec::vecf::{bce_objective, LabeledPair, PairForward};

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn bits(p: &ModelParams) -> Vec<u64> {
    p.flatten().as_slice().iter().map(|x| x.to_bits()).collect()
}

fn gradient_suite() {
    let start = Instant::now();
    let opts = GradcheckOptions::default();
    assert_eq!(opts.seeds, 50);
    let report = run_gradcheck(&opts).unwrap();
    let elapsed = start.elapsed();
    let expected = ModelParams::zeros(opts.variant, opts.dims).groups_present();
    let seen: Vec<_> = report.groups.iter().map(|g| g.group).collect();
    assert_eq!(seen, expected, "every parameter group is checked");
    assert!(report.passed(), "\n{}", report.to_table());
    for g in &report.groups {
        assert!(g.worst_rel_error < 1e-4, "{}: {}", g.group.name(), g.worst_rel_error);
    }
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
}

fn normalization_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut fallbacks = 0;
    for i in 0..10_000 {
        let h = rng.gen_range(1..=49);
        let d = rng.gen_range(1..=8);
        let features: Vec<f64> = (0..h * d).map(|_| rng.gen_range(0.0..3.0)).collect();
        let mut params = AttentionParams {
            w_user: random_vec(&mut rng, 4, 1.0).into(),
            w_region: random_vec(&mut rng, d, 1.0).into(),
            bias: rng.gen_range(-1.0..1.0),
        };
        // Every fourth map has strictly negative pre-activations everywhere.
        if i % 4 == 0 {
            params.bias = -1e3;
        }
        let user = random_vec(&mut rng, 4, 1.0);
        let fwd = AttentionForward::compute(&user, RegionGrid::new(h, d, &features).unwrap(), &params);
        assert!(fwd.alpha.iter().all(|&a| a >= 0.0), "map {i}");
        let sum: f64 = fwd.alpha.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "map {i}: sum {sum}");
        if fwd.fallback {
            fallbacks += 1;
            assert!(fwd.alpha.iter().all(|&a| a == fwd.alpha[0]));
        }
    }
    assert!(fallbacks >= 2500, "only {fallbacks} fallback maps");

    let mut dims = vexrec::gradcheck::FIXTURE_DIMS;
    for i in 0..10_000u64 {
        dims.z = 1 + (i % 7) as usize;
        dims.vocab = 3 + (i % 40) as usize;
        let params = ModelParams::init(Variant::ReCf, dims, InitScheme::Scaled, i).unwrap();
        let gru = &params.text().unwrap().gru;
        let h: DenseVector = random_vec(&mut rng, dims.z, 5.0).into();
        let p = word_distribution(&h, gru).unwrap();
        assert!(p.as_slice().iter().all(|&x| x >= 0.0));
        let sum: f64 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "distribution {i}: sum {sum}");
    }
}

fn reduction_identities() {
    let s = Synth::default_split();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..100 {
        let cfg = TrainConfig::default();
        let params = ModelParams::init(Variant::ReVecf, s.dims(&cfg), InitScheme::Scaled, seed).unwrap();
        let text = params.text().unwrap();
        let z = text.gru.u_z.rows();
        let d = text.gru.v_z.cols();
        let h: DenseVector = random_vec(&mut rng, z, 1.0).into();
        let word = rng.gen_range(0..s.vocab.size());
        let visual = gru_step_visual(&h, word, &DenseVector::zeros(d), &text.gru).unwrap();
        let plain = gru_step_standard(&h, word, &text.gru).unwrap();
        let to_bits = |v: &DenseVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(to_bits(&visual), to_bits(&plain), "seed {seed}");

        let mut gate = text.gate.clone();
        gate.w_hidden = DenseVector::zeros(z);
        assert_eq!(context_gate_beta(&h, &gate), 0.5);
    }

    for variant in [Variant::Vecf, Variant::ReVecf] {
        let cfg = TrainConfig {
            variant,
            ..TrainConfig::default()
        };
        for seed in 0..10 {
            let params = ModelParams::init(variant, s.dims(&cfg), InitScheme::UnitUniform, seed).unwrap();
            let batch: Vec<LabeledPair> = (0..s.split.train.len())
                .map(|u| LabeledPair {
                    user: u,
                    item: *s.split.train[u].choose(&mut rng).unwrap(),
                    label: rng.gen(),
                })
                .collect();
            let inputs = ObjectiveInputs {
                features: Some(&s.ds.features),
                reviews: &s.train_reviews,
                end_token: s.vocab.end_index(),
                delta: 0.0,
                lambda: 1e-4,
            };
            let (joint, jg) = joint_objective(&batch, &params, &inputs).unwrap();
            let (bce, bg) = bce_objective(&batch, &params, Some(&s.ds.features), 1e-4).unwrap();
            assert_eq!(joint.to_bits(), bce.to_bits(), "{variant} seed {seed}");
            assert_eq!(bits(&jg), bits(&bg), "{variant} seed {seed}");
        }
    }
}

fn oracle_prf(recs: &[RecommendationList], truth: &[Vec<usize>]) -> (f64, f64, f64, f64, f64) {
    let (mut p, mut r, mut f, mut hit, mut users) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (u, t) in truth.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        users += 1.0;
        let list = recs.iter().find(|l| l.user == u).map(|l| l.items.clone()).unwrap_or_default();
        let mut common = 0usize;
        for j in &list {
            for k in t {
                if j == k {
                    common += 1;
                }
            }
        }
        let pu = if list.is_empty() { 0.0 } else { common as f64 / list.len() as f64 };
        let ru = common as f64 / t.len() as f64;
        p += pu;
        r += ru;
        if common > 0 {
            f += 2.0 * pu * ru / (pu + ru);
            hit += 1.0;
        }
    }
    let (p, r) = (p / users, r / users);
    let f1_of_avg = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1_of_avg, f / users, hit / users)
}

fn oracle_ndcg(recs: &[RecommendationList], truth: &[Vec<usize>], n: usize) -> f64 {
    let (mut total, mut users) = (0.0, 0.0);
    for (u, t) in truth.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        users += 1.0;
        let list = recs.iter().find(|l| l.user == u).map(|l| l.items.clone()).unwrap_or_default();
        let mut dcg = 0.0;
        for (pos, j) in list.iter().enumerate().take(n) {
            if t.contains(j) {
                dcg += std::f64::consts::LN_2 / ((pos + 2) as f64).ln();
            }
        }
        let mut ideal = 0.0;
        for pos in 0..n.min(t.len()) {
            ideal += std::f64::consts::LN_2 / ((pos + 2) as f64).ln();
        }
        total += dcg / ideal;
    }
    total / users
}

fn oracle_rouge(pred: &[usize], gold: &[usize], n: usize) -> (f64, f64) {
    let distinct = |s: &[usize]| {
        let mut grams: Vec<Vec<usize>> = Vec::new();
        for i in 0..(s.len() + 1).saturating_sub(n) {
            let g = s[i..i + n].to_vec();
            if !grams.contains(&g) {
                grams.push(g);
            }
        }
        grams
    };
    let (a, b) = (distinct(pred), distinct(gold));
    if a.is_empty() || b.is_empty() {
        return (0.0, 0.0);
    }
    let common = a.iter().filter(|g| b.contains(g)).count() as f64;
    (common / a.len() as f64, common / b.len() as f64)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn metric_oracle_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fixture in 0..1000 {
        let users = rng.gen_range(1..=10);
        let items = rng.gen_range(2..=20);
        let n = rng.gen_range(1..=items.min(10));
        let mut truth = Vec::new();
        let mut recs = Vec::new();
        for u in 0..users {
            let mut pool: Vec<usize> = (0..items).collect();
            pool.shuffle(&mut rng);
            truth.push(pool[..rng.gen_range(0..=items / 2)].to_vec());
            if rng.gen_bool(0.9) {
                pool.shuffle(&mut rng);
                recs.push(RecommendationList::new(u, pool[..rng.gen_range(1..=n)].to_vec()));
            }
        }
        if truth.iter().all(|t| t.is_empty()) {
            truth[0].push(0);
        }
        let (p, r, f_avg, f_users, hr) = oracle_prf(&recs, &truth);
        let a = precision_recall_f1(&recs, &truth, F1Mode::OfAverages).unwrap();
        let b = precision_recall_f1(&recs, &truth, F1Mode::AverageOfUsers).unwrap();
        assert!(close(a.precision, p) && close(a.recall, r), "fixture {fixture}");
        assert!(close(a.f1, f_avg) && close(b.f1, f_users), "fixture {fixture}");
        assert!(close(hit_ratio(&recs, &truth).unwrap(), hr), "fixture {fixture}");
        let nd = ndcg(&recs, &truth, n).unwrap();
        assert!(close(nd, oracle_ndcg(&recs, &truth, n)), "fixture {fixture}");

        let vocab = rng.gen_range(1..=8);
        let pred: Vec<usize> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0..vocab)).collect();
        let gold: Vec<usize> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0..vocab)).collect();
        for order in [1, 2] {
            let got = rouge_n(&pred, &gold, order);
            let (op, or) = oracle_rouge(&pred, &gold, order);
            let of = if op + or == 0.0 { 0.0 } else { 2.0 * op * or / (op + or) };
            assert!(close(got.precision, op) && close(got.recall, or) && close(got.f1, of), "fixture {fixture}");
        }
    }

    let recs = [RecommendationList::new(0, vec![4, 7, 9])];
    let nd = ndcg(&recs, &[vec![7]], 3).unwrap();
    assert!(close(nd, 1.0 / 3f64.log2()), "{nd}");
    let r = rouge_n(&["a", "b", "c"], &["a", "b", "d"], 2);
    assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
}

fn learning_sanity() {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let s = Synth::default_split();
    let c = &s.ds.interactions;
    assert_eq!((c.num_users(), c.num_items()), (30, 60));
    assert_eq!((s.ds.features.regions(), s.ds.features.dim(), s.ds.planted.len()), (16, 8, 2));
    let cfg = TrainConfig {
        variant: Variant::ReVecf,
        epochs: 200,
        ..TrainConfig::default()
    };
    let (f1, mass) = pool.install(|| {
        let mut trainer = Trainer::new(cfg.clone(), s.train_data()).unwrap();
        let mut params = trainer.init_params(s.dims(&cfg)).unwrap();
        trainer.train(&mut params, cfg.epochs, |_| {}).unwrap();
        let inputs = EvalInputs {
            features: Some(&s.ds.features),
            train: &s.split.train,
            test: &s.split.test,
            n: 5,
            f1_mode: F1Mode::OfAverages,
            test_reviews: &[],
            end_token: s.vocab.end_index(),
            max_review_len: 10,
            labels: None,
        };
        let f1 = evaluate(&params, &inputs).unwrap().get("f1@5").unwrap();
        let v = &params.vecf;
        let mut mass = 0.0;
        for g in &s.ds.ground_truth {
            let fwd = AttentionForward::compute(v.user_emb.row(g.user), s.ds.features.item(g.item), &v.attention);
            mass += g.regions.iter().map(|&k| fwd.alpha[k]).sum::<f64>();
        }
        (f1, mass / s.ds.ground_truth.len() as f64)
    });
    let baseline = random_baseline(&s.split.train, &s.split.test, c.num_items(), 5).unwrap().f1;
    let planted = s.ds.planted[0].len() as f64;
    let elapsed = start.elapsed();
    println!("    f1@5 {f1:.4} vs baseline {baseline:.4}; planted mass {mass:.3}; {elapsed:.1?}");
    assert!(f1 >= 3.0 * baseline, "f1@5 {f1} < 3 x {baseline}");
    assert!(mass >= 2.0 * planted / 16.0, "planted mass {mass}");
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
}

fn backprop_probe() {
    let s = Synth::default_split();
    let mut live = 0;
    for (i, review) in s.reviews.iter().filter(|r| s.split.is_train(r.user, r.item)).take(20).enumerate() {
        for init in [InitScheme::UnitUniform, InitScheme::Scaled] {
            for variant in [Variant::ReVecf, Variant::ReCf] {
                let cfg = TrainConfig {
                    variant,
                    ..TrainConfig::default()
                };
                let features = variant.uses_images().then_some(&s.ds.features);
                let mut dims = s.dims(&cfg);
                if features.is_none() {
                    dims.regions = 0;
                }
                let params = ModelParams::init(variant, dims, init, i as u64).unwrap();
                let probe = backprop_text_to_attention(&params, features, review, s.vocab.end_index()).unwrap();
                let norm = probe.attention_grad_norm.unwrap();
                if variant == Variant::ReCf {
                    assert_eq!(norm, 0.0);
                    continue;
                }
                // With fewer than two positive pre-activations the map is a
                // constant (uniform or one-hot) and carries no gradient.
                let fwd = PairForward::compute(&params, features, review.user, review.item);
                let active = fwd.attention.unwrap().pre.iter().filter(|&&x| x > 0.0).count();
                if active < 2 {
                    assert_eq!(norm, 0.0);
                } else {
                    assert!(norm > 0.0, "review {i} {init}");
                    live += 1;
                }
            }
        }
    }
    assert!(live >= 20, "only {live} live attention maps");
}

/// Label-set size: two cells with probability 0.66, three with 0.34.
fn label_size(rng: &mut ChaCha8Rng) -> usize {
    if rng.gen_bool(0.66) {
        2
    } else {
        3
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    (k - 1..n)
        .flat_map(|last| {
            subsets(last, k - 1).into_iter().map(move |mut s| {
                s.push(last);
                s
            })
        })
        .collect()
}

fn region_calibration() {
    let cells = 25;
    // Zero attention weights fall back to the uniform map.
    let flat = vec![0.5; cells];
    let uniform = AttentionForward::compute(&[0.0; 4], RegionGrid::new(cells, 1, &flat).unwrap(), &AttentionParams::zeros(4, 1));
    assert!(uniform.fallback);

    // With every weight tied, the top five are cells 0..5.
    let f1_of = |labels: &[usize]| {
        let hits = labels.iter().filter(|&&c| c < 5).count() as f64;
        let (p, r) = (hits / 5.0, hits / labels.len() as f64);
        if hits == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    let mut expected = 0.0;
    let mut second = 0.0;
    for (size, prob) in [(2, 0.66), (3, 0.34)] {
        let all = subsets(cells, size);
        for s in &all {
            let f = f1_of(s);
            expected += prob * f / all.len() as f64;
            second += prob * f * f / all.len() as f64;
        }
    }
    let trials = 100_000;
    let sigma = ((second - expected * expected) / trials as f64).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let all: Vec<usize> = (0..cells).collect();
    let mut total = 0.0;
    for _ in 0..trials {
        let size = label_size(&mut rng);
        let chosen: Vec<usize> = all.choose_multiple(&mut rng, size).copied().collect();
        let labels = RegionLabelSet::new(0, 0, 5, chosen).unwrap();
        total += region_explanation_score(&uniform.alpha, &labels, 5).unwrap().f1;
    }
    let mean = total / trials as f64;
    println!("    region F1@5 Monte Carlo {mean:.5}, exact {expected:.5}, sigma {sigma:.2e}");
    assert!((mean - expected).abs() <= 3.0 * sigma, "{mean} vs {expected} (sigma {sigma})");

    // A 10x10 attention grid whose mass sits on the fine cells under labeled
    // coarse cells.
    for _ in 0..200 {
        let size = label_size(&mut rng);
        let chosen: Vec<usize> = all.choose_multiple(&mut rng, size).copied().collect();
        let labels = RegionLabelSet::new(0, 0, 5, chosen).unwrap();
        let features: Vec<f64> = (0..100)
            .map(|c| {
                let coarse = (c / 10 / 2) * 5 + (c % 10) / 2;
                if labels.cells.contains(&coarse) {
                    rng.gen_range(0.5..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let params = AttentionParams {
            w_user: DenseVector::zeros(4),
            w_region: vec![1.0].into(),
            bias: 0.0,
        };
        let fwd = AttentionForward::compute(&[0.0; 4], RegionGrid::new(100, 1, &features).unwrap(), &params);
        assert!(!fwd.fallback);
        let score = region_explanation_score(&fwd.alpha, &labels, 5).unwrap();
        assert_eq!(score.precision, 1.0);
    }
}

fn determinism_and_persistence() {
    let s = Synth::default_split();
    let cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || {
        let mut trainer = Trainer::new(cfg.clone(), s.train_data()).unwrap();
        let mut params = trainer.init_params(s.dims(&cfg)).unwrap();
        let report = trainer.train(&mut params, 5, |_| {}).unwrap();
        (report, params)
    };
    let (ra, pa) = run();
    let (rb, pb) = run();
    assert!(ra.same_trajectory(&rb));
    assert_eq!(bits(&pa), bits(&pb));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.vxcp");
    checkpoint::save(&pa, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(bits(&back), bits(&pa));
    assert_eq!(back, pa);

    assert!(RegionalFeatureStore::from_bytes(&common::valid_vxrf()).is_ok());
    let malformed = common::malformed_vxrf();
    assert_eq!(malformed.len(), 8);
    for (what, bytes) in malformed {
        assert!(RegionalFeatureStore::from_bytes(&bytes).is_err(), "accepted: {what}");
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 8] = [
        ("gradient suite", gradient_suite),
        ("normalization suite", normalization_suite),
        ("reduction identities", reduction_identities),
        ("metric oracle suite", metric_oracle_suite),
        ("learning sanity", learning_sanity),
        ("backprop-path probe", backprop_probe),
        ("region-evaluation calibration", region_calibration),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("PASS  {name} ({:.1?})", start.elapsed()),
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
