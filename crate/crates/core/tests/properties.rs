//! Property tests for the invariants each module promises.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lift_core::labels::{
    build_vocabulary, encode_target, normalize_label, CategoryTable, GroundTruth, Label, ManifestRecord, Split,
    TargetSource, Task, Vocabulary,
};
use lift_core::metrics::{build_report, mae, obo, partial_credit, EvalRecord};
use lift_core::model::{
    forward_with_cache, predict_count, softmax, Model, ModelConfig, PatchGrid, PredictionDistribution, TokenSequence,
};
use lift_core::motion_image::{
    downsample, encode, interpolate_chain, normalize_coordinates, smooth, EncoderConfig, MotionImage, KINEMATIC_CHAINS,
};
use lift_core::skeleton::{landmark, mediapipe_to_h36m, MediapipeSequence, Point3, SkeletonSequence};
use lift_core::synthgen::{gen_motion, primitive, to_mediapipe, SynthSpec, DEFAULT_PRIMITIVES};
use lift_core::training::{make_batches, split_dataset};

fn point() -> impl Strategy<Value = Point3> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

/// Independent evaluator: walk the polyline with a dense parameter and read
/// it at the requested abscissa.
fn dense_eval(points: &[Point3], x: f64) -> Point3 {
    let p = points.len();
    let mut seg = 0;
    while seg + 2 < p && (seg + 1) as f64 <= x {
        seg += 1;
    }
    let t = x - seg as f64;
    let (a, b) = (points[seg], points[seg + 1]);
    [0, 1, 2].map(|d| (1.0 - t) * a[d] + t * b[d])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interpolation_matches_dense_evaluator(points in prop::collection::vec(point(), 2..8), m in 2usize..100) {
        let out = interpolate_chain(&points, m).unwrap();
        prop_assert_eq!(out.len(), m);
        let span = (points.len() - 1) as f64;
        for (i, got) in out.iter().enumerate() {
            let want = dense_eval(&points, span * i as f64 / (m - 1) as f64);
            for d in 0..3 {
                prop_assert!((got[d] - want[d]).abs() <= 1e-9, "i={} d={} {} vs {}", i, d, got[d], want[d]);
            }
        }
    }

    #[test]
    fn count_metrics_match_brute_force(pairs in prop::collection::vec((1u32..31, 1u32..31), 1..40)) {
        let (gt, pred): (Vec<u32>, Vec<u32>) = pairs.iter().copied().unzip();
        let mut within = 0usize;
        let mut abs = 0u64;
        for (&g, &p) in gt.iter().zip(&pred) {
            if g.abs_diff(p) <= 1 {
                within += 1;
            }
            abs += g.abs_diff(p) as u64;
        }
        prop_assert_eq!(obo(&gt, &pred).unwrap(), within as f64 / gt.len() as f64);
        prop_assert_eq!(mae(&gt, &pred).unwrap(), abs as f64 / gt.len() as f64);
        prop_assert_eq!(mae(&gt, &pred).unwrap() == 0.0, gt == pred);
    }
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        logits in prop::collection::vec(-50.0..50.0f64, 1..40),
        shift in -100.0..100.0f64,
    ) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_count_ignores_order_preserving_rescaling(
        logits in prop::collection::vec(-5.0..5.0f64, 43),
        power in 0.2..5.0f64,
    ) {
        let v = vocab();
        let dist = PredictionDistribution::from_logits(&logits);
        let mut probs = dist.probs.clone();
        for i in v.count_indices() {
            probs[i] = probs[i].powf(power) * 0.5;
        }
        prop_assert_eq!(predict_count(&PredictionDistribution { probs }, &v), predict_count(&dist, &v));
    }

    #[test]
    fn partial_credit_never_rises_with_tau(
        logits in prop::collection::vec(-5.0..5.0f64, 43),
        mut taus in prop::collection::vec(0.0..1.0f64, 2..6),
    ) {
        let v = vocab();
        let dist = PredictionDistribution::from_logits(&logits);
        let gt = Label { words: vec!["left".into(), "lunge".into()] };
        taus.sort_by(f64::total_cmp);
        let credits: Vec<f64> = taus.iter().map(|&t| partial_credit(&dist, &gt, &v, t)).collect();
        prop_assert!(credits.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn report_is_permutation_invariant(seed in any::<u64>(), n in 1usize..30) {
        let v = vocab();
        let records = random_records(&v, seed, n);
        let mut shuffled = records.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(build_report(&records, &v, 0.05).unwrap(), build_report(&shuffled, &v, 0.05).unwrap());
    }

    #[test]
    fn normalization_is_idempotent(raw in "[A-Za-z0-9 +&'-]{1,24}") {
        if let Ok(once) = normalize_label(&raw) {
            prop_assert_eq!(normalize_label(&once.text()).unwrap(), once);
        }
    }

    #[test]
    fn vocabulary_ignores_label_order(seed in any::<u64>()) {
        let mut labels: Vec<Label> = DEFAULT_PRIMITIVES.iter().map(|p| normalize_label(p).unwrap()).collect();
        let a = build_vocabulary(&labels, &CategoryTable::default());
        use rand::seq::SliceRandom;
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(build_vocabulary(&labels, &CategoryTable::default()), a);
    }

    #[test]
    fn detection_target_support_is_the_label_words(idx in 0usize..8) {
        let v = vocab();
        let label = normalize_label(DEFAULT_PRIMITIVES[idx]).unwrap();
        let t = encode_target(TargetSource::Label(&label), &v).unwrap();
        let support: BTreeSet<&str> = t.support().into_iter().map(|i| v.class(i)).collect();
        let words: BTreeSet<&str> = label.words.iter().map(String::as_str).filter(|w| v.index_of(w).is_some()).collect();
        prop_assert_eq!(support, words);
        let table = CategoryTable::default();
        for i in t.support() {
            prop_assert_eq!(t.values[i], table.weight(v.class(i)));
        }
    }

    #[test]
    fn split_assigns_whole_videos(n in 10usize..80, seed in any::<u64>(), f0 in 0.5..0.9f64) {
        let f1 = (1.0 - f0) / 2.0;
        let records: Vec<ManifestRecord> = (0..n).map(manifest_record).collect();
        let split = split_dataset(&records, [f0, f1, 1.0 - f0 - f1], seed).unwrap();
        prop_assert_eq!(split.len(), n);
        for (a, b) in records.iter().zip(&split) {
            prop_assert_eq!(&a.id, &b.id);
        }
        let count = |s| split.iter().filter(|r| r.split == s).count() as f64;
        prop_assert!((count(Split::Train) - f0 * n as f64).abs() <= 1.0);
        prop_assert!((count(Split::Val) - f1 * n as f64).abs() <= 1.0);
    }

    #[test]
    fn batches_cover_every_sample_once_and_mix_tasks(
        tasks in prop::collection::vec(prop::bool::ANY, 1..120),
        batch_size in 2usize..40,
        seed in any::<u64>(),
    ) {
        let tasks: Vec<Task> = tasks.into_iter().map(|c| if c { Task::Counting } else { Task::Detection }).collect();
        let batches = make_batches(&tasks, batch_size, seed, 1);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..tasks.len()).collect::<Vec<_>>());
        let both = tasks.contains(&Task::Counting) && tasks.contains(&Task::Detection);
        let minority = tasks.iter().filter(|&&t| t == Task::Counting).count().min(
            tasks.iter().filter(|&&t| t == Task::Detection).count());
        let full = batches.iter().filter(|b| b.len() == batch_size).count();
        if both && minority >= full {
            for b in batches.iter().filter(|b| b.len() == batch_size) {
                prop_assert!(b.iter().any(|&i| tasks[i] == Task::Counting));
                prop_assert!(b.iter().any(|&i| tasks[i] == Task::Detection));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn encoder_geometry(prim in 0usize..8, count in 1u32..9, scale in 0.85..1.15f64, seed in any::<u64>()) {
        let (seq, cfg) = synthetic(prim, count, scale, seed);
        let image = encode(&seq, &cfg).unwrap();
        check_geometry(&seq, &cfg, &image)?;
        prop_assert_eq!(encode(&seq, &cfg).unwrap(), image);
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), len in 1usize..6) {
        let cfg = ModelConfig {
            embed_dim: 16, num_layers: 2, num_heads: 2, patch_size: 4, max_text_len: 6,
            text_vocab_size: 12, num_classes: 5, image_height: 8, image_width: 8, seed, init_std: 0.5,
            ..Default::default()
        };
        let model = Model::new(cfg.clone()).unwrap();
        let mut image = MotionImage::zeros(8, 8, "x");
        for (i, p) in image.pixels.iter_mut().enumerate() {
            *p = ((i as u64).wrapping_mul(seed | 1) % 97) as f64 / 97.0;
        }
        let patches = PatchGrid::from_image(&image, &cfg).unwrap();
        let tokens = TokenSequence((0..len as u32).map(|t| 1 + t % 11).collect());
        let cache = forward_with_cache(&cfg, &model.params, &patches, &tokens).unwrap();
        for layer in 0..cfg.num_layers {
            let (probs, rows) = cache.attention(layer);
            let keys = probs.len() / (cfg.num_heads * rows);
            for row in probs.chunks_exact(keys) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
        let again = forward_with_cache(&cfg, &model.params, &patches, &tokens).unwrap();
        prop_assert_eq!(again.logits, cache.logits);
    }

    #[test]
    fn mediapipe_conversion_keeps_midpoints(prim in 0usize..8, seed in any::<u64>(), jitter in 0.0..0.05f64) {
        let (seq, _) = synthetic(prim, 3, 1.0, seed);
        let mut mp = to_mediapipe(&seq);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::RngExt;
        for f in mp.frames.iter_mut() {
            for p in f.iter_mut() {
                for v in p.iter_mut() {
                    *v += rng.random_range(-jitter..=jitter);
                }
            }
        }
        check_midpoints(&mp)?;
    }
}

fn check_midpoints(mp: &MediapipeSequence) -> Result<(), TestCaseError> {
    let h = mediapipe_to_h36m(mp).unwrap();
    prop_assert!(h.validate().is_valid());
    for (lm, f) in mp.frames.iter().zip(&h.frames) {
        let mid = |a: Point3, b: Point3| [0, 1, 2].map(|d| (a[d] + b[d]) / 2.0);
        let root = mid(lm[landmark::LEFT_HIP], lm[landmark::RIGHT_HIP]);
        let thorax = mid(lm[landmark::LEFT_SHOULDER], lm[landmark::RIGHT_SHOULDER]);
        let spine = mid(root, thorax);
        for (joint, want) in [(0usize, root), (8, thorax), (7, spine)] {
            for d in 0..3 {
                prop_assert!((f[joint][d] - want[d]).abs() <= 1e-12);
            }
        }
    }
    Ok(())
}

fn synthetic(prim: usize, count: u32, scale: f64, seed: u64) -> (SkeletonSequence, EncoderConfig) {
    let spec = SynthSpec::default();
    let p = primitive(DEFAULT_PRIMITIVES[prim]).unwrap();
    let (seq, _, _) = gen_motion(&p, count, scale, &spec, &mut ChaCha8Rng::seed_from_u64(seed), "prop").unwrap();
    (seq, EncoderConfig::default())
}

fn check_geometry(
    seq: &SkeletonSequence,
    cfg: &EncoderConfig,
    image: &MotionImage,
) -> Result<(), TestCaseError> {
    prop_assert_eq!(image.valid_rows, 320);
    prop_assert!(image.valid_cols <= 640);
    prop_assert_eq!(image.padding_mass(), 0.0);
    let reduced = normalize_coordinates(&downsample(&smooth(seq, cfg.smooth_window).unwrap(), cfg.downsample_factor).unwrap(), cfg);
    prop_assert_eq!(reduced.frames.len(), image.valid_cols);
    let m = cfg.points_per_chain;
    for (col, frame) in reduced.frames.iter().enumerate() {
        for (c, chain) in KINEMATIC_CHAINS.iter().enumerate() {
            let first = frame[chain.joints[0].index()];
            let last = frame[chain.joints[chain.joints.len() - 1].index()];
            for (row, want) in [(c * m, first), (c * m + m - 1, last)] {
                let got = image.pixel(row, col);
                for d in 0..3 {
                    prop_assert!((got[d] - want[d]).abs() <= 1e-9);
                }
            }
        }
    }
    Ok(())
}

fn vocab() -> Vocabulary {
    let labels: Vec<Label> = DEFAULT_PRIMITIVES.iter().map(|p| normalize_label(p).unwrap()).collect();
    build_vocabulary(&labels, &CategoryTable::default())
}

fn manifest_record(i: usize) -> ManifestRecord {
    ManifestRecord {
        id: format!("v{i}"),
        skeleton_path: format!("v{i}.jsonl"),
        label_raw: "squat".into(),
        label_norm: "squat".into(),
        count: 3,
        split: Split::Train,
        subject: None,
    }
}

fn random_records(v: &Vocabulary, seed: u64, n: usize) -> Vec<EvalRecord> {
    use rand::RngExt;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let logits: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-4.0..4.0)).collect();
            let dist = PredictionDistribution::from_logits(&logits);
            let (task, gt) = if rng.random_bool(0.5) {
                (Task::Counting, GroundTruth::Count(rng.random_range(3..9)))
            } else {
                let p = DEFAULT_PRIMITIVES[rng.random_range(0..8)];
                (Task::Detection, GroundTruth::Label(normalize_label(p).unwrap()))
            };
            EvalRecord::new(format!("s{i}"), format!("v{i}"), task, "q".into(), gt, dist, v, 0.05)
        })
        .collect()
}
