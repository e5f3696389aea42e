use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::{ScoreKind, ScoreMatrix};
use crate::math::log_normalize;

const MODEL_MAGIC: &str = "kwseq-model";
const MODEL_VERSION: u32 = 1;

/// Network shape; the input dimension comes from the features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Splice radius: frames `t - context ..= t + context` form one input.
    pub context: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { context: 2, hidden: vec![64, 64] }
    }
}

/// Dense layer, row-major `out × in` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o] as f64;
            for (w, v) in row.iter().zip(x) {
                acc += *w as f64 * v;
            }
            out.push(acc);
        }
    }
}

/// Splice + ReLU hidden layers + log-softmax frame classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClassifier {
    pub input_dim: usize,
    pub context: usize,
    /// Output frame-rate divisor applied by [`FrameClassifier::forward`].
    pub subsample: usize,
    pub unit_names: Vec<String>,
    pub layers: Vec<Layer>,
    /// Free-form metadata stored in the model header (topology, priors, ...).
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    input_dim: usize,
    context: usize,
    subsample: usize,
    layer_sizes: Vec<usize>,
    units: Vec<String>,
    num_params: usize,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

/// Per-frame activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct FrameCache {
    /// Input and every hidden activation (post-ReLU).
    activations: Vec<Vec<f64>>,
    /// Output log-posteriors.
    log_post: Vec<f64>,
}

/// f64 gradient accumulator shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &FrameClassifier) -> Self {
        Self { layers: model.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect() }
    }

    pub fn add(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, v)| *a += v);
            b.iter_mut().zip(ob).for_each(|(a, v)| *a += v);
        }
    }
}

impl FrameClassifier {
    fn sizes(input: usize, hidden: &[usize], outputs: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(hidden);
        s.push(outputs);
        s
    }

    /// All-zero network (uniform output).
    pub fn zeros(input_dim: usize, config: &ModelConfig, unit_names: Vec<String>) -> Self {
        let sizes = Self::sizes(input_dim * (2 * config.context + 1), &config.hidden, unit_names.len());
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { input_dim, context: config.context, subsample: 1, unit_names, layers, meta: Default::default() }
    }

    /// He-initialized network; biases start at zero.
    pub fn new(input_dim: usize, config: &ModelConfig, unit_names: Vec<String>, seed: u64) -> Self {
        let mut model = Self::zeros(input_dim, config, unit_names);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let normal = Normal::new(0.0, (2.0 / layer.inputs as f64).sqrt()).unwrap();
            layer.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng) as f32);
        }
        model
    }

    pub fn num_units(&self) -> usize {
        self.unit_names.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Number of output frames for `frames` input frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.subsample.max(1))
    }

    fn splice(&self, features: &ScoreMatrix, t: usize, out: &mut Vec<f64>) {
        out.clear();
        let c = self.context as isize;
        let last = features.frames() as isize - 1;
        for o in -c..=c {
            let s = (t as isize + o).clamp(0, last) as usize;
            out.extend_from_slice(features.row(s));
        }
    }

    fn check(&self, features: &ScoreMatrix) -> Result<()> {
        if features.units() != self.input_dim {
            return Err(KwsError::DimensionMismatch { expected: self.input_dim, got: features.units() });
        }
        Ok(())
    }

    fn frame(&self, features: &ScoreMatrix, t: usize, keep: bool) -> FrameCache {
        let mut x = Vec::new();
        self.splice(features, t, &mut x);
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut out = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&x, &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let prev = std::mem::replace(&mut x, std::mem::take(&mut out));
            if keep {
                activations.push(prev);
            }
        }
        log_normalize(&mut x);
        FrameCache { activations, log_post: x }
    }

    /// Log-posteriors for every `subsample`-th frame.
    pub fn forward(&self, features: &ScoreMatrix) -> Result<ScoreMatrix> {
        self.check(features)?;
        let rows: Vec<Vec<f64>> = (0..features.frames())
            .step_by(self.subsample.max(1))
            .map(|t| self.frame(features, t, false).log_post)
            .collect();
        if rows.is_empty() {
            return Ok(ScoreMatrix::zeros(0, self.num_units(), ScoreKind::LogPosterior));
        }
        ScoreMatrix::from_rows(&rows, ScoreKind::LogPosterior)
    }

    /// As [`FrameClassifier::forward`], keeping what backpropagation needs.
    pub fn forward_cached(&self, features: &ScoreMatrix) -> Result<(ScoreMatrix, Vec<FrameCache>)> {
        self.check(features)?;
        let caches: Vec<FrameCache> =
            (0..features.frames()).step_by(self.subsample.max(1)).map(|t| self.frame(features, t, true)).collect();
        let rows: Vec<Vec<f64>> = caches.iter().map(|c| c.log_post.clone()).collect();
        let scores = if rows.is_empty() {
            ScoreMatrix::zeros(0, self.num_units(), ScoreKind::LogPosterior)
        } else {
            ScoreMatrix::from_rows(&rows, ScoreKind::LogPosterior)?
        };
        Ok((scores, caches))
    }

    /// Accumulates parameter gradients given `dLoss/d log y` for each cached frame.
    pub fn backward(&self, caches: &[FrameCache], grad: &ScoreMatrix, into: &mut Gradients) -> Result<()> {
        if grad.frames() != caches.len() {
            return Err(KwsError::LengthMismatch { expected: caches.len(), got: grad.frames() });
        }
        for (cache, g) in caches.iter().zip(grad.rows()) {
            // softmax Jacobian: dz_j = g_j - y_j * sum_k g_k
            let total: f64 = g.iter().sum();
            let mut delta: Vec<f64> = g.iter().zip(&cache.log_post).map(|(gj, ly)| gj - ly.exp() * total).collect();
            for (i, layer) in self.layers.iter().enumerate().rev() {
                let input = &cache.activations[i];
                let (gw, gb) = &mut into.layers[i];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
                }
                if i == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * *w as f64);
                }
                // ReLU derivative from the stored post-activation
                prev.iter_mut().zip(input).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0
                    }
                });
                delta = prev;
            }
        }
        Ok(())
    }

    /// Plain SGD step `w -= lr * scale * g`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64, scale: f64) {
        if lr == 0.0 {
            return;
        }
        let step = lr * scale;
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.iter_mut().zip(gw).for_each(|(w, g)| *w = (*w as f64 - step * g) as f32);
            layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b = (*b as f64 - step * g) as f32);
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut layer_sizes = vec![self.layers[0].inputs];
        layer_sizes.extend(self.layers.iter().map(|l| l.outputs));
        let header = Header {
            format: MODEL_MAGIC.into(),
            version: MODEL_VERSION,
            input_dim: self.input_dim,
            context: self.context,
            subsample: self.subsample,
            layer_sizes,
            units: self.unit_names.clone(),
            num_params: self.num_params(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let h: Header = serde_json::from_str(line.trim_end())?;
        if h.format != MODEL_MAGIC || h.version != MODEL_VERSION {
            return Err(KwsError::Format(format!("not a model file (format {} v{})", h.format, h.version)));
        }
        if h.layer_sizes.len() < 2
            || h.layer_sizes[0] != h.input_dim * (2 * h.context + 1)
            || *h.layer_sizes.last().unwrap() != h.units.len()
        {
            return Err(KwsError::Format("inconsistent layer sizes".into()));
        }
        let mut layers: Vec<Layer> = h.layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        let total: usize = layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if total != h.num_params {
            return Err(KwsError::Format(format!("header says {} parameters, shape gives {total}", h.num_params)));
        }
        let mut buf = [0u8; 4];
        for l in &mut layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                input.read_exact(&mut buf).map_err(|_| KwsError::Format("truncated parameter blob".into()))?;
                *v = f32::from_le_bytes(buf);
            }
        }
        if input.read(&mut buf)? != 0 {
            return Err(KwsError::Format("trailing bytes after parameters".into()));
        }
        Ok(Self {
            input_dim: h.input_dim,
            context: h.context,
            subsample: h.subsample.max(1),
            unit_names: h.units,
            layers,
            meta: h.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
