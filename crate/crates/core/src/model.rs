//! A deliberately small point-cloud classifier with exact manual gradients:
//! shared per-point MLP 3→64→128→256 (ReLU), coordinate-wise max-pool over
//! points, head 256→128→C. Everything is f64 and deterministic: the max-pool
//! breaks ties toward the lowest point index, batch GEMMs accumulate in a
//! fixed order, and all randomness comes from explicit rng arguments.
//!
//! Batches are stacked into one (ΣK)×d matrix with per-sample offsets, so
//! samples of different sizes (after SOR/SRS) batch together and the heavy
//! lifting stays in a handful of GEMMs.

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::geometry::PointCloud;
use crate::preprocess::{run_pipeline, PipelineSpec};
use crate::rng::{self, Rng};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// (fan_in, fan_out) per layer; layers 0–2 are per-point, 3–4 the head.
pub fn layer_dims(n_classes: usize) -> [(usize, usize); 5] {
    [(3, 64), (64, 128), (128, 256), (256, 128), (128, n_classes)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyModel {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl TinyModel {
    /// Glorot-uniform weights (±√(6/(fan_in+fan_out))), zero biases.
    pub fn init(n_classes: usize, rng: &mut Rng) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let mut weights = Vec::with_capacity(5);
        let mut biases = Vec::with_capacity(5);
        for (fan_in, fan_out) in layer_dims(n_classes) {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Array2::zeros((fan_in, fan_out));
            for r in 0..fan_in {
                for c in 0..fan_out {
                    w[[r, c]] = rng.random_range(-bound..bound);
                }
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(TinyModel { weights, biases })
    }

    /// All-zero parameters (predicts class 0 everywhere); test scaffolding.
    pub fn zeros(n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let dims = layer_dims(n_classes);
        Ok(TinyModel {
            weights: dims.iter().map(|&(i, o)| Array2::zeros((i, o))).collect(),
            biases: dims.iter().map(|&(_, o)| Array1::zeros(o)).collect(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.biases[4].len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != 5 || self.biases.len() != 5 {
            return Err(Error::invalid_state("model must have exactly 5 layers"));
        }
        let dims = layer_dims(self.n_classes());
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            if self.weights[l].dim() != (fan_in, fan_out) || self.biases[l].len() != fan_out {
                return Err(Error::invalid_state(format!("layer {l} has inconsistent shapes")));
            }
            if self.weights[l].iter().any(|v| !v.is_finite()) || self.biases[l].iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid_state(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn forward_batch(&self, clouds: &[PointCloud]) -> Result<ForwardCache> {
        if clouds.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut offsets = Vec::with_capacity(clouds.len() + 1);
        offsets.push(0usize);
        for c in clouds {
            offsets.push(offsets.last().unwrap() + c.len());
        }
        let total = *offsets.last().unwrap();
        let mut x = Array2::zeros((total, 3));
        for (b, cloud) in clouds.iter().enumerate() {
            for (k, p) in cloud.points().iter().enumerate() {
                let row = offsets[b] + k;
                x[[row, 0]] = p.x;
                x[[row, 1]] = p.y;
                x[[row, 2]] = p.z;
            }
        }
        let relu = |a: Array2<f64>| a.mapv(|v| if v > 0.0 { v } else { 0.0 });
        let h1 = relu(x.dot(&self.weights[0]) + &self.biases[0]);
        let h2 = relu(h1.dot(&self.weights[1]) + &self.biases[1]);
        let h3 = relu(h2.dot(&self.weights[2]) + &self.biases[2]);
        let n_batch = clouds.len();
        let n_feat = h3.ncols();
        let mut g = Array2::zeros((n_batch, n_feat));
        let mut argmax = vec![0usize; n_batch * n_feat];
        for b in 0..n_batch {
            let lo = offsets[b];
            let hi = offsets[b + 1];
            for c in 0..n_feat {
                let mut best = h3[[lo, c]];
                let mut best_row = lo;
                for row in lo + 1..hi {
                    // strict > keeps the lowest point index on ties
                    if h3[[row, c]] > best {
                        best = h3[[row, c]];
                        best_row = row;
                    }
                }
                g[[b, c]] = best;
                argmax[b * n_feat + c] = best_row;
            }
        }
        let h4 = relu(g.dot(&self.weights[3]) + &self.biases[3]);
        let z = h4.dot(&self.weights[4]) + &self.biases[4];
        Ok(ForwardCache { x, h1, h2, h3, offsets, g, argmax, h4, z })
    }

    /// Single-sample forward: logits plus the cache backward needs.
    pub fn forward(&self, cloud: &PointCloud) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(std::slice::from_ref(cloud))?;
        let logits = cache.z.row(0).to_vec();
        Ok((logits, cache))
    }

    /// Argmax class, ties toward the lowest class index.
    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let (logits, _) = self.forward(cloud)?;
        Ok(argmax_lowest(&logits))
    }

    /// The 256-d pooled descriptor (the max-pool output).
    pub fn features(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let cache = self.forward_batch(std::slice::from_ref(cloud))?;
        Ok(cache.g.row(0).to_vec())
    }

    /// Mean cross-entropy over the batch plus exact gradients; also reports
    /// how many of the batch the pre-update model got right.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<(f64, Gradients, usize)> {
        let n_batch = labels.len();
        let n_classes = self.n_classes();
        if cache.offsets.len() != n_batch + 1
            || cache.z.dim() != (n_batch, n_classes)
            || cache.h3.ncols() != self.weights[2].ncols()
            || cache.x.nrows() != *cache.offsets.last().unwrap()
        {
            return Err(Error::invalid_state("forward cache does not match this model/batch"));
        }
        if labels.iter().any(|&y| y >= n_classes) {
            return Err(Error::invalid("label out of range"));
        }
        let mut loss = 0.0;
        let mut correct = 0;
        let mut dz = Array2::zeros((n_batch, n_classes));
        for b in 0..n_batch {
            let row = cache.z.row(b);
            let zmax = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = zmax + row.iter().map(|&v| (v - zmax).exp()).sum::<f64>().ln();
            loss += lse - row[labels[b]];
            if argmax_lowest(row.as_slice().unwrap()) == labels[b] {
                correct += 1;
            }
            for c in 0..n_classes {
                dz[[b, c]] = (row[c] - lse).exp();
            }
            dz[[b, labels[b]]] -= 1.0;
        }
        loss /= n_batch as f64;
        dz /= n_batch as f64;

        let gw5 = cache.h4.t().dot(&dz);
        let gb5 = dz.sum_axis(Axis(0));
        let mut dh4 = dz.dot(&self.weights[4].t());
        mask_relu(&mut dh4, &cache.h4);
        let gw4 = cache.g.t().dot(&dh4);
        let gb4 = dh4.sum_axis(Axis(0));
        let dg = dh4.dot(&self.weights[3].t());

        let n_feat = cache.h3.ncols();
        let mut dh3 = Array2::zeros(cache.h3.dim());
        for b in 0..n_batch {
            for c in 0..n_feat {
                let row = cache.argmax[b * n_feat + c];
                if cache.h3[[row, c]] > 0.0 {
                    dh3[[row, c]] = dg[[b, c]];
                }
            }
        }
        let gw3 = cache.h2.t().dot(&dh3);
        let gb3 = dh3.sum_axis(Axis(0));
        let mut dh2 = dh3.dot(&self.weights[2].t());
        mask_relu(&mut dh2, &cache.h2);
        let gw2 = cache.h1.t().dot(&dh2);
        let gb2 = dh2.sum_axis(Axis(0));
        let mut dh1 = dh2.dot(&self.weights[1].t());
        mask_relu(&mut dh1, &cache.h1);
        let gw1 = cache.x.t().dot(&dh1);
        let gb1 = dh1.sum_axis(Axis(0));

        Ok((
            loss,
            Gradients {
                weights: vec![gw1, gw2, gw3, gw4, gw5],
                biases: vec![gb1, gb2, gb3, gb4, gb5],
            },
            correct,
        ))
    }
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn mask_relu(grad: &mut Array2<f64>, activated: &Array2<f64>) {
    grad.zip_mut_with(activated, |g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Activations a backward pass needs, stacked over the batch.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub x: Array2<f64>,
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub h3: Array2<f64>,
    /// sample b owns stacked rows offsets[b]..offsets[b+1]
    pub offsets: Vec<usize>,
    pub g: Array2<f64>,
    /// flattened (batch, feature) → winning stacked row
    pub argmax: Vec<usize>,
    pub h4: Array2<f64>,
    pub z: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &TinyModel) -> Self {
        AdamState {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(model: &mut TinyModel, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.weights.len() != 5 || grads.biases.len() != 5 {
        return Err(Error::invalid_state("gradient layer count mismatch"));
    }
    for l in 0..5 {
        if grads.weights[l].dim() != model.weights[l].dim() || grads.biases[l].len() != model.biases[l].len() {
            return Err(Error::invalid_state(format!("gradient shape mismatch at layer {l}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mh = *m / bc1;
        let vh = *v / bc2;
        *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
    };
    for l in 0..5 {
        ndarray::Zip::from(&mut model.weights[l])
            .and(&grads.weights[l])
            .and(&mut state.m_w[l])
            .and(&mut state.v_w[l])
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut model.biases[l])
            .and(&grads.biases[l])
            .and(&mut state.m_b[l])
            .and(&mut state.v_b[l])
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub pipeline: PipelineSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 60, batch_size: 32, lr: 1e-3, seed: 0, pipeline: PipelineSpec::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// Train from a fresh Glorot init: per epoch, shuffle, push every sample
/// through the pipeline (fresh draws unless the pipeline pins one stream),
/// then batched forward/backward/Adam. The rng seeds the init, the shuffles,
/// and the per-sample pipeline streams, so one seed pins the whole run.
pub fn train(
    dataset: &LabeledDataset,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<(TinyModel, Vec<EpochStats>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut model = TinyModel::init(dataset.n_classes(), rng)?;
    let mut adam = AdamState::new(&model);
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let fixed_pipeline_seed: u64 = rng.random();
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let epoch_seed = if config.pipeline.reseed_per_epoch {
            rng.random()
        } else {
            fixed_pipeline_seed
        };
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let processed = apply_pipeline_batch(dataset, batch, &config.pipeline, epoch_seed)?;
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.samples[i].label).collect();
            let cache = model.forward_batch(&processed)?;
            let (loss, grads, batch_correct) = model.backward(&cache, &labels)?;
            adam_step(&mut model, &grads, &mut adam, config.lr)?;
            loss_sum += loss * batch.len() as f64;
            correct += batch_correct;
        }
        stats.push(EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
        });
    }
    Ok((model, stats))
}

/// Pipeline application for one batch, parallel across samples, each with an
/// rng stream derived from (epoch seed, dataset index).
fn apply_pipeline_batch(
    dataset: &LabeledDataset,
    batch: &[usize],
    pipeline: &PipelineSpec,
    epoch_seed: u64,
) -> Result<Vec<PointCloud>> {
    let results = map_indexed(ExecMode::default_mode(), batch.len(), |j| {
        let i = batch[j];
        let mut stream = rng::derive(epoch_seed, &[i as u64]);
        run_pipeline(&dataset.samples[i].cloud, pipeline, &mut stream)
    });
    results.into_iter().collect()
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"PBCKPT\x00\x01";

/// Versioned binary checkpoint: magic+version, class count, then each layer's
/// shape and parameters as little-endian f64.
pub fn save_checkpoint(path: &Path, model: &TinyModel) -> Result<()> {
    model.validate()?;
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&(model.n_classes() as u64).to_le_bytes()).map_err(io)?;
    for l in 0..5 {
        let (rows, cols) = model.weights[l].dim();
        w.write_all(&(rows as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(cols as u64).to_le_bytes()).map_err(io)?;
        for v in model.weights[l].iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&(model.biases[l].len() as u64).to_le_bytes()).map_err(io)?;
        for v in model.biases[l].iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TinyModel> {
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let bad = |msg: &str| Error::Parse { path: path.to_path_buf(), line: 0, msg: msg.into() };
    let mut r = fs::File::open(path).map_err(io)?;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic/version)"));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut fs::File| -> Result<u64> {
        r.read_exact(&mut u64buf).map_err(io)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let n_classes = read_u64(&mut r)? as usize;
    let dims = layer_dims(n_classes);
    let mut weights = Vec::with_capacity(5);
    let mut biases = Vec::with_capacity(5);
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if (rows, cols) != (fan_in, fan_out) {
            return Err(bad(&format!("layer {l} shape {rows}x{cols} does not match architecture")));
        }
        let mut w = Array2::zeros((rows, cols));
        let mut fbuf = [0u8; 8];
        for v in w.iter_mut() {
            r.read_exact(&mut fbuf).map_err(io)?;
            *v = f64::from_le_bytes(fbuf);
        }
        let blen = read_u64(&mut r)? as usize;
        if blen != fan_out {
            return Err(bad(&format!("layer {l} bias length {blen} does not match architecture")));
        }
        let mut b = Array1::zeros(blen);
        for v in b.iter_mut() {
            r.read_exact(&mut fbuf).map_err(io)?;
            *v = f64::from_le_bytes(fbuf);
        }
        weights.push(w);
        biases.push(b);
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing).map_err(io)?;
    if !trailing.is_empty() {
        return Err(bad("trailing bytes after parameters"));
    }
    let model = TinyModel { weights, biases };
    model.validate()?;
    Ok(model)
}
