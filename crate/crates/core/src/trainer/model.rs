use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;
use crate::scalar::Scalar;

/// Encoders that ship with the workbench. Pretrained transformer checkpoints
/// are not bundled; these small encoders share the tokenizer interface so
/// every pipeline stage runs on CPU.
pub const REGISTERED_ENCODERS: [&str; 3] = ["tiny", "tiny-large", "tiny-multilingual"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub id: String,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Number of dense tanh layers above the pooled embedding.
    pub layers: usize,
    pub min_word_freq: usize,
    /// Whole-word pieces in the vocabulary; 0 keeps it character level.
    pub max_words: usize,
}

pub fn encoder_spec(id: &str) -> Result<EncoderSpec> {
    let spec = |embed_dim, hidden_dim, layers, max_words| EncoderSpec {
        id: id.to_owned(),
        embed_dim,
        hidden_dim,
        layers,
        min_word_freq: 1,
        max_words,
    };
    match id {
        "tiny" => Ok(spec(32, 32, 2, 8000)),
        "tiny-large" => Ok(spec(64, 64, 3, 16000)),
        "tiny-multilingual" => Ok(spec(32, 32, 2, 0)),
        other => Err(Error::Config(format!(
            "encoder `{other}` is not installed; registered encoders: {}. \
             Pick one of these in encoder_id or add a registry entry.",
            REGISTERED_ENCODERS.join(", ")
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    inputs: usize,
    outputs: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    vocab: usize,
    dim: usize,
    layers: Vec<Dense>,
    head: Dense,
    total: usize,
}

impl Layout {
    fn new(spec: &EncoderSpec, vocab: usize) -> Self {
        let mut off = vocab * spec.embed_dim;
        let mut dense = |inputs: usize, outputs: usize| {
            let d = Dense {
                w: off,
                b: off + inputs * outputs,
                inputs,
                outputs,
            };
            off += inputs * outputs + outputs;
            d
        };
        let mut layers = Vec::with_capacity(spec.layers);
        let mut width = spec.embed_dim;
        for _ in 0..spec.layers {
            layers.push(dense(width, spec.hidden_dim));
            width = spec.hidden_dim;
        }
        let head = dense(width, NUM_CLASSES);
        Self {
            vocab,
            dim: spec.embed_dim,
            layers,
            head,
            total: off,
        }
    }
}

/// Mean-pooled subword embeddings, a stack of tanh layers and four
/// independent sigmoid heads. Parameters live in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyEncoder<T> {
    spec: EncoderSpec,
    layout: Layout,
    params: Vec<T>,
}

/// Activations of one forward pass, kept for backpropagation.
pub(crate) struct Trace<T> {
    acts: Vec<Vec<T>>,
    pub logits: [T; NUM_CLASSES],
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn affine<T: Scalar>(params: &[T], d: &Dense, x: &[T], out: &mut Vec<T>) {
    out.clear();
    for o in 0..d.outputs {
        let row = &params[d.w + o * d.inputs..d.w + (o + 1) * d.inputs];
        let mut acc = params[d.b + o];
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        out.push(acc);
    }
}

impl<T: Scalar> TinyEncoder<T> {
    /// Xavier-uniform dense layers, small uniform embeddings, zero biases.
    pub fn init<R: Rng>(spec: EncoderSpec, vocab: usize, rng: &mut R) -> Self {
        let layout = Layout::new(&spec, vocab);
        let mut params = vec![T::zero(); layout.total];
        for p in &mut params[..vocab * spec.embed_dim] {
            *p = T::lit(rng.random_range(-0.5..0.5));
        }
        for d in layout.layers.iter().chain(std::iter::once(&layout.head)) {
            let bound = (6.0 / (d.inputs + d.outputs) as f64).sqrt();
            for p in &mut params[d.w..d.w + d.inputs * d.outputs] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
        }
        Self { spec, layout, params }
    }

    pub fn from_params(spec: EncoderSpec, vocab: usize, params: Vec<T>) -> Result<Self> {
        let layout = Layout::new(&spec, vocab);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "weights hold {} values, encoder `{}` with vocabulary {vocab} needs {}",
                params.len(),
                spec.id,
                layout.total
            )));
        }
        Ok(Self { spec, layout, params })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.layout.vocab
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Static input-embedding row of one subword id.
    pub fn embedding_row(&self, id: u32) -> Option<&[T]> {
        let id = id as usize;
        (id < self.layout.vocab).then(|| &self.params[id * self.layout.dim..(id + 1) * self.layout.dim])
    }

    pub(crate) fn forward(&self, ids: &[u32]) -> Trace<T> {
        let dim = self.layout.dim;
        let mut x0 = vec![T::zero(); dim];
        if !ids.is_empty() {
            for &id in ids {
                let row = &self.params[id as usize * dim..(id as usize + 1) * dim];
                for (a, r) in x0.iter_mut().zip(row) {
                    *a += *r;
                }
            }
            let n = T::from_count(ids.len());
            x0.iter_mut().for_each(|v| *v /= n);
        }
        let mut acts = Vec::with_capacity(self.layout.layers.len() + 1);
        acts.push(x0);
        let mut buf = Vec::new();
        for d in &self.layout.layers {
            affine(&self.params, d, acts.last().expect("input"), &mut buf);
            acts.push(buf.iter().map(|v| v.tanh()).collect());
        }
        affine(&self.params, &self.layout.head, acts.last().expect("input"), &mut buf);
        let mut logits = [T::zero(); NUM_CLASSES];
        logits.copy_from_slice(&buf);
        Trace { acts, logits }
    }

    pub fn probs(&self, ids: &[u32]) -> [T; NUM_CLASSES] {
        self.forward(ids).logits.map(sigmoid)
    }

    /// Accumulates the parameter gradient of one sample into `grad`, given
    /// the loss gradient with respect to the logits.
    pub(crate) fn backward(&self, ids: &[u32], trace: &Trace<T>, dlogits: &[T; NUM_CLASSES], grad: &mut [T]) {
        let head = &self.layout.head;
        let top = trace.acts.last().expect("activations");
        let mut dx = vec![T::zero(); head.inputs];
        for (o, &dz) in dlogits.iter().enumerate() {
            grad[head.b + o] += dz;
            let w = head.w + o * head.inputs;
            for i in 0..head.inputs {
                grad[w + i] += dz * top[i];
                dx[i] += dz * self.params[w + i];
            }
        }
        for (l, d) in self.layout.layers.iter().enumerate().rev() {
            let out = &trace.acts[l + 1];
            let input = &trace.acts[l];
            let da: Vec<T> = dx.iter().zip(out).map(|(&g, &y)| g * (T::one() - y * y)).collect();
            let mut dprev = vec![T::zero(); d.inputs];
            for (o, &g) in da.iter().enumerate() {
                grad[d.b + o] += g;
                let w = d.w + o * d.inputs;
                for i in 0..d.inputs {
                    grad[w + i] += g * input[i];
                    dprev[i] += g * self.params[w + i];
                }
            }
            dx = dprev;
        }
        if ids.is_empty() {
            return;
        }
        let dim = self.layout.dim;
        let n = T::from_count(ids.len());
        for &id in ids {
            let row = &mut grad[id as usize * dim..(id as usize + 1) * dim];
            for (g, &v) in row.iter_mut().zip(&dx) {
                *g += v / n;
            }
        }
    }
}

/// Decoupled-weight-decay Adam over a flat parameter buffer.
#[derive(Clone, Debug)]
pub(crate) struct AdamW<T> {
    lr: T,
    weight_decay: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr: T::lit(lr),
            weight_decay: T::lit(weight_decay),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let bc1 = T::one() - self.beta1.powi(self.step);
        let bc2 = T::one() - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}
