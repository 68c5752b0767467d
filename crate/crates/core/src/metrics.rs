//! Evaluation metrics: Chamfer distance (deformation magnitude), attack
//! success rate, and clean accuracy.

use crate::dataset::{apply_trigger, LabeledDataset};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::geometry::{kdtree::KdTree, PointCloud};
use crate::model::TinyModel;
use crate::preprocess::{run_pipeline, PipelineSpec};
use crate::rng;
use crate::trigger::TriggerSpec;
use serde::{Deserialize, Serialize};

/// Everything one evaluation produces. `cd_x100` is the scaled mean Chamfer
/// distance of the triggered samples (100× the raw value, the conventional
/// reporting unit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub asr: f64,
    pub cd_x100: f64,
    pub per_class_acc: Vec<f64>,
    pub n_samples: usize,
    pub n_non_target: usize,
}

pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_distance_with_mode(a, b, ExecMode::default_mode())
}

/// Non-squared Chamfer distance: the sum of the two directed mean
/// nearest-neighbor distances.
pub fn chamfer_distance_with_mode(a: &PointCloud, b: &PointCloud, mode: ExecMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance needs nonempty clouds"));
    }
    let tree_a = KdTree::build(a.points());
    let tree_b = KdTree::build(b.points());
    let a_to_b = map_indexed(mode, a.len(), |i| tree_b.nearest_distance(&a.points()[i]));
    let b_to_a = map_indexed(mode, b.len(), |i| tree_a.nearest_distance(&b.points()[i]));
    let mut da = 0.0;
    for d in &a_to_b {
        da += d;
    }
    let mut db = 0.0;
    for d in &b_to_a {
        db += d;
    }
    Ok(da / a.len() as f64 + db / b.len() as f64)
}

/// Top-1 accuracy on unmodified samples.
pub fn clean_accuracy(model: &TinyModel, testset: &LabeledDataset) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let preds = predictions(model, testset)?;
    let correct = preds
        .iter()
        .zip(&testset.samples)
        .filter(|(&p, s)| p == s.label)
        .count();
    Ok(correct as f64 / testset.len() as f64)
}

/// Per-class top-1 accuracy; classes with no test samples report 0.
pub fn per_class_accuracy(model: &TinyModel, testset: &LabeledDataset) -> Result<Vec<f64>> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let preds = predictions(model, testset)?;
    let c = testset.n_classes();
    let mut correct = vec![0usize; c];
    let mut total = vec![0usize; c];
    for (&p, s) in preds.iter().zip(&testset.samples) {
        total[s.label] += 1;
        if p == s.label {
            correct[s.label] += 1;
        }
    }
    Ok((0..c)
        .map(|i| if total[i] == 0 { 0.0 } else { correct[i] as f64 / total[i] as f64 })
        .collect())
}

fn predictions(model: &TinyModel, testset: &LabeledDataset) -> Result<Vec<usize>> {
    map_indexed(ExecMode::default_mode(), testset.len(), |i| {
        model.predict(&testset.samples[i].cloud)
    })
    .into_iter()
    .collect()
}

/// Fraction of triggered non-target samples the model sends to the target
/// class. The trigger (and any inference-time pipeline) draws per-sample
/// streams from `seed`, so the number is reproducible.
pub fn attack_success_rate(
    model: &TinyModel,
    testset: &LabeledDataset,
    trigger: &TriggerSpec,
    target: usize,
    inference_pipeline: &PipelineSpec,
    seed: u64,
) -> Result<f64> {
    if target >= testset.n_classes() {
        return Err(Error::invalid("target class out of range"));
    }
    let non_target: Vec<usize> = (0..testset.len())
        .filter(|&i| testset.samples[i].label != target)
        .collect();
    if non_target.is_empty() {
        return Err(Error::invalid("test set has no non-target samples"));
    }
    let preds: Result<Vec<usize>> = map_indexed(ExecMode::default_mode(), non_target.len(), |j| {
        let i = non_target[j];
        let triggered = apply_trigger(trigger, &testset.samples[i].cloud, seed, i as u64)?;
        let processed = if inference_pipeline.is_identity() {
            triggered
        } else {
            let mut stream = rng::derive(seed, &[0xa5f, i as u64]);
            run_pipeline(&triggered, inference_pipeline, &mut stream)?
        };
        model.predict(&processed)
    })
    .into_iter()
    .collect();
    let preds = preds?;
    let hits = preds.iter().filter(|&&p| p == target).count();
    Ok(hits as f64 / non_target.len() as f64)
}

/// Mean CD×100 between each poisoned sample and its clean original; `None`
/// when nothing is poisoned.
pub fn mean_poison_cd_x100(original: &LabeledDataset, poisoned: &LabeledDataset) -> Result<Option<f64>> {
    if original.len() != poisoned.len() {
        return Err(Error::invalid("datasets have different sizes"));
    }
    let idx: Vec<usize> = (0..poisoned.len()).filter(|&i| poisoned.poison_mask[i]).collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let cds: Result<Vec<f64>> = map_indexed(ExecMode::default_mode(), idx.len(), |j| {
        let i = idx[j];
        chamfer_distance(&original.samples[i].cloud, &poisoned.samples[i].cloud)
    })
    .into_iter()
    .collect();
    let cds = cds?;
    Ok(Some(100.0 * cds.iter().sum::<f64>() / cds.len() as f64))
}
