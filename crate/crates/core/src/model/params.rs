use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub patch_size: usize,
    pub max_text_len: usize,
    pub text_vocab_size: usize,
    pub num_classes: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Feed-forward width as a multiple of `embed_dim`.
    pub ffn_mult: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 192,
            num_layers: 4,
            num_heads: 4,
            patch_size: 32,
            max_text_len: 24,
            text_vocab_size: 64,
            num_classes: 32,
            image_height: 384,
            image_width: 640,
            ffn_mult: 4,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.embed_dim * self.ffn_mult
    }

    pub fn patch_rows(&self) -> usize {
        self.image_height / self.patch_size
    }

    pub fn patch_cols(&self) -> usize {
        self.image_width / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.patch_rows() * self.patch_cols()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// Joint sequence length for a question of `text_len` tokens.
    pub fn sequence_len(&self, text_len: usize) -> usize {
        text_len + self.num_patches()
    }

    /// A narrow, shallow variant that trains in minutes on one CPU core.
    pub fn small() -> Self {
        ModelConfig { embed_dim: 64, num_layers: 2, num_heads: 4, patch_size: 32, ..Default::default() }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.patch_size == 0
            || !self.image_height.is_multiple_of(self.patch_size)
            || !self.image_width.is_multiple_of(self.patch_size)
        {
            return fail(format!(
                "image {}x{} not divisible by patch size {}",
                self.image_height, self.image_width, self.patch_size
            ));
        }
        if self.max_text_len == 0 || self.text_vocab_size < 3 || self.num_classes == 0 {
            return fail("text length, text vocabulary and class count must be positive".into());
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All trainable tensors. Weight matrices are stored `in x out` so a layer is `x * W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub text_embed: Tensor,
    pub text_pos: Tensor,
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub patch_pos: Tensor,
    pub type_embed: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_ln_g: Tensor,
    pub final_ln_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

impl LayerParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.ffn_dim();
        LayerParams {
            ln1_g: Tensor::zeros(&[d]),
            ln1_b: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
            ln2_g: Tensor::zeros(&[d]),
            ln2_b: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, f]),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::zeros(&[f, d]),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        macro_rules! collect {
            ($($f:ident),*) => { vec![$((stringify!($f), &self.$f)),*] };
        }
        layer_fields!(collect)
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        macro_rules! collect {
            ($($f:ident),*) => { vec![$((stringify!($f), &mut self.$f)),*] };
        }
        layer_fields!(collect)
    }
}

impl Parameters {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        Parameters {
            text_embed: Tensor::zeros(&[cfg.text_vocab_size, d]),
            text_pos: Tensor::zeros(&[cfg.max_text_len, d]),
            patch_w: Tensor::zeros(&[cfg.patch_dim(), d]),
            patch_b: Tensor::zeros(&[d]),
            patch_pos: Tensor::zeros(&[cfg.num_patches(), d]),
            type_embed: Tensor::zeros(&[2, d]),
            layers: (0..cfg.num_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            final_ln_g: Tensor::zeros(&[d]),
            final_ln_b: Tensor::zeros(&[d]),
            head_w: Tensor::zeros(&[d, cfg.num_classes]),
            head_b: Tensor::zeros(&[cfg.num_classes]),
        }
    }

    /// Seeded initialization: N(0, init_std) weights and embeddings, zero
    /// biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut p = Parameters::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.init_std).expect("init_std is finite");
        for (name, t) in p.named_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.ends_with("_g") {
                t.fill(1.0);
            } else if leaf.starts_with('b') || leaf.ends_with("_b") {
                t.fill(0.0);
            } else {
                t.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
        p
    }

    /// Tensors with stable dotted names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("text_embed".into(), &self.text_embed),
            ("text_pos".into(), &self.text_pos),
            ("patch_w".into(), &self.patch_w),
            ("patch_b".into(), &self.patch_b),
            ("patch_pos".into(), &self.patch_pos),
            ("type_embed".into(), &self.type_embed),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.named().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.push(("final_ln_g".into(), &self.final_ln_g));
        out.push(("final_ln_b".into(), &self.final_ln_b));
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("text_embed".into(), &mut self.text_embed),
            ("text_pos".into(), &mut self.text_pos),
            ("patch_w".into(), &mut self.patch_w),
            ("patch_b".into(), &mut self.patch_b),
            ("patch_pos".into(), &mut self.patch_pos),
            ("type_embed".into(), &mut self.type_embed),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.named_mut().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.push(("final_ln_g".into(), &mut self.final_ln_g));
        out.push(("final_ln_b".into(), &mut self.final_ln_b));
        out.push(("head_w".into(), &mut self.head_w));
        out.push(("head_b".into(), &mut self.head_b));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_(&mut self) {
        for (_, t) in self.named_mut() {
            t.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.named_mut() {
            t.scale(factor);
        }
    }

    /// Name of the first tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named().into_iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let reference = Parameters::zeros(cfg);
        let mine = self.named();
        let theirs = reference.named();
        if mine.len() != theirs.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, found {}",
                theirs.len(),
                mine.len()
            )));
        }
        for ((name, a), (_, b)) in mine.iter().zip(&theirs) {
            if a.shape != b.shape {
                return Err(ModelError::Config(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    a.shape, b.shape
                )));
            }
        }
        Ok(())
    }
}
