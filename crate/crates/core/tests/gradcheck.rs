//! Analytic gradients against central finite differences on a tiny model.

use lift_core::labels::TargetVector;
use lift_core::model::{loss, Model, ModelConfig, Parameters, TokenSequence};
use lift_core::motion_image::MotionImage;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(num_layers: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        num_layers,
        num_heads: 2,
        patch_size: 2,
        max_text_len: 6,
        text_vocab_size: 10,
        num_classes: 4,
        image_height: 8,
        image_width: 8,
        init_std: 0.3,
        seed: 11,
        ..Default::default()
    }
}

fn fixture(cfg: &ModelConfig) -> (Model, MotionImage, TokenSequence, TargetVector) {
    let mut model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Move gains and biases off their 1/0 initialization so they get
    // generic gradients.
    for (_, t) in model.params.named_mut() {
        for v in t.data.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let mut image = MotionImage::zeros(8, 8, "g");
    // Leave the bottom rows zero so patch elision is exercised.
    for r in 0..5 {
        for c in 0..8 {
            image.set_pixel(r, c, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)]);
        }
    }
    let tokens = TokenSequence(vec![1, 4, 7, 4, 9]);
    let target = TargetVector { values: vec![1.0, 0.4, 0.0, 0.1] };
    (model, image, tokens, target)
}

fn check(num_layers: usize) {
    let cfg = tiny_config(num_layers);
    let (model, image, tokens, target) = fixture(&cfg);
    let analytic = model.backward(&image, &tokens, &target).unwrap();

    let h = 1e-5;
    let mut probe = model.clone();
    let mut numeric = Parameters::zeros(&cfg);
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = model.params.named()[ti].1.len();
        for i in 0..len {
            let orig = model.params.named()[ti].1.data[i];
            probe.params.named_mut()[ti].1.data[i] = orig + h;
            let lp = loss(&probe.forward_image(&image, &tokens).unwrap(), &target).unwrap();
            probe.params.named_mut()[ti].1.data[i] = orig - h;
            let lm = loss(&probe.forward_image(&image, &tokens).unwrap(), &target).unwrap();
            probe.params.named_mut()[ti].1.data[i] = orig;
            numeric.named_mut()[ti].1.data[i] = (lp - lm) / (2.0 * h);
        }
        let a = &analytic.named()[ti].1.data;
        let n = &numeric.named()[ti].1.data;
        let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        // The key bias has an exactly zero gradient (softmax is shift
        // invariant), so the floor keeps finite-difference noise from dominating.
        let rel = diff / (na + nn).max(1e-6);
        assert!(rel <= 1e-4, "{name}: relative error {rel:e} (|a|={na:e}, |n|={nn:e})");
    }
}

#[test]
fn gradients_match_finite_differences_one_layer() {
    check(1);
}

#[test]
fn gradients_match_finite_differences_two_layers() {
    check(2);
}

#[test]
fn padding_tokens_after_start_do_not_break_gradients() {
    let cfg = tiny_config(1);
    let (model, image, _, target) = fixture(&cfg);
    let g = model.backward(&image, &TokenSequence(vec![1]), &target).unwrap();
    assert!(g.first_non_finite().is_none());
}
