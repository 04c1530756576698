//! Dense tanh MLP with hand-written reverse mode.
//!
//! Weights of layer `l` are stored as a `(fan_in, fan_out)` matrix so a batch
//! forward pass is `X · W + b`. The flat parameter layout is, for each layer
//! in order, `W` in row-major order followed by `b`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::ScalingFactors;

/// Outputs: derivatives for the first M−1 segments at a node of degree ≤ 4.
pub const OUTPUT_SIZE: usize = 3;
/// (t, x, y, G₁..G₄).
pub const STANDARD_INPUTS: usize = 7;
/// Far-end coordinates of up to four incident segments.
pub const EXTENDED_INPUTS: usize = 8;

const MAGIC: &[u8; 8] = b"EMSMLP01";

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Per-feature multipliers applied to raw inputs before the first layer.
    pub input_scale: Vec<f64>,
}

/// Activations kept from a batch forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the scaled input; `activations[l]` the output of layer l.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("at least one layer")
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArchitecture("need at least an input and an output layer".into()));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArchitecture(format!("zero-width layer in {layer_sizes:?}")));
    }
    if *layer_sizes.last().unwrap() != OUTPUT_SIZE {
        return Err(Error::InvalidArchitecture(format!(
            "output width must be {OUTPUT_SIZE}, got {}",
            layer_sizes.last().unwrap()
        )));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_xavier(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound));
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        input_scale: vec![1.0; layer_sizes[0]],
    })
}

/// `[n_in, hidden × layers, 3]`.
pub fn architecture(n_in: usize, hidden: usize, layers: usize) -> Vec<usize> {
    let mut sizes = vec![n_in];
    sizes.extend(std::iter::repeat_n(hidden, layers));
    sizes.push(OUTPUT_SIZE);
    sizes
}

impl MlpModel {
    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = params[at];
                at += 1;
            }
            for v in b.iter_mut() {
                *v = params[at];
                at += 1;
            }
        }
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<MlpModel> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                got: width,
            });
        }
        Ok(())
    }

    /// Batch forward pass over rows of `inputs`, keeping activations.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(inputs.ncols())?;
        let scale = ndarray::ArrayView1::from(&self.input_scale[..]);
        let mut a = &inputs * &scale;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(a);
            a = z;
        }
        activations.push(a);
        Ok(ForwardCache { activations })
    }

    pub fn forward(&self, input: &[f64]) -> Result<[f64; OUTPUT_SIZE]> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let cache = self.forward_batch(x)?;
        let out = cache.output();
        Ok([out[[0, 0]], out[[0, 1]], out[[0, 2]]])
    }

    /// Reverse pass: gradient of `Σ upstream ⊙ output` with respect to the
    /// flat parameters (summed over the batch) and to each raw input row.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                got: upstream.len(),
            });
        }
        let n_layers = self.weights.len();
        let mut grads_w: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut grads_b: Vec<Array1<f64>> = Vec::with_capacity(n_layers);
        let mut delta = upstream.to_owned();
        for l in (0..n_layers).rev() {
            let a_in = &cache.activations[l];
            grads_w.push(a_in.t().dot(&delta));
            grads_b.push(delta.sum_axis(Axis(0)));
            let mut back = delta.dot(&self.weights[l].t());
            if l > 0 {
                // a_in = tanh(z) for hidden layers.
                back.zip_mut_with(a_in, |d, &a| *d *= 1.0 - a * a);
            }
            delta = back;
        }
        grads_w.reverse();
        grads_b.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads_w.iter().zip(&grads_b) {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        let scale = ndarray::ArrayView1::from(&self.input_scale[..]);
        delta *= &scale;
        Ok((flat, delta))
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64; OUTPUT_SIZE]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let cache = self.forward_batch(x)?;
        let up = ArrayView2::from_shape((1, OUTPUT_SIZE), &upstream[..]).expect("contiguous row");
        let (g, dx) = self.backward_batch(&cache, up)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }
}

/// Metadata written next to a binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub layer_sizes: Vec<usize>,
    pub n_params: usize,
    pub seed: u64,
    pub scaling: ScalingFactors,
    pub input_scale: Vec<f64>,
    /// Horizon the model was trained for, in seconds of (effective) time.
    pub t_steady_s: f64,
    pub parameterized: bool,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Binary layout: magic, u32 layer count, u32 sizes, u64 parameter count,
/// then little-endian f64 parameters. Metadata goes to `<path>.json`.
pub fn save_checkpoint(model: &MlpModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * model.n_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(model.layer_sizes.len() as u32).to_le_bytes());
    for &n in &model.layer_sizes {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(model.n_params() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    let meta = CheckpointMeta {
        layer_sizes: model.layer_sizes.clone(),
        n_params: model.n_params(),
        input_scale: model.input_scale.clone(),
        ..meta.clone()
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn corrupt(msg: &str) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()))
}

/// Load a checkpoint; `expected` (if given) must equal the stored layer sizes.
pub fn load_checkpoint(path: &Path, expected: Option<&[usize]>) -> Result<(MlpModel, CheckpointMeta)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("not an emstress checkpoint"));
    }
    let mut at = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| corrupt("truncated checkpoint"))?;
        at += n;
        Ok(s)
    };
    let n_layers = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut sizes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        sizes.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
    }
    if let Some(exp) = expected {
        if exp != sizes.as_slice() {
            return Err(Error::ArchitectureMismatch {
                expected: exp.to_vec(),
                found: sizes,
            });
        }
    }
    if sizes != meta.layer_sizes {
        return Err(corrupt("checkpoint and sidecar disagree on layer sizes"));
    }
    let n_params = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    let mut model = init_xavier(&sizes, 0)?;
    model.set_params(&params)?;
    if meta.input_scale.len() != model.n_inputs() {
        return Err(corrupt("input scale length does not match input layer"));
    }
    model.input_scale = meta.input_scale.clone();
    Ok((model, meta))
}
