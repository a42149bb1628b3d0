//! Probing attention heads for a context-sufficiency signal: collect tapped
//! activations over cumulative contexts, train one bias-free logistic probe
//! per head, rank heads by validation F1, and select the top k.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::chunking::{plan_chunks, ChunkingSpec};
use crate::model::{HeadTap, KvCache, Model, ModelError};
use crate::ops::sigmoid;
use crate::rng;
use crate::tasks::{derive_labels, TaskError, TaskInstance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid probe parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// One labeled probing example: tapped activations at the final token of a
/// cumulative context.
#[derive(Debug, Clone)]
pub struct ActivationExample {
    pub features: BTreeMap<HeadTap, Vec<f32>>,
    pub label: u8,
    pub task_id: String,
    pub chunk_index: usize,
}

/// Bias-free logistic probe over one head's activation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub theta: Vec<f64>,
}

impl ProbeParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: f64 = self.theta.iter().zip(x).map(|(t, v)| t * v).sum();
        sigmoid(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    pub validation_f1: f64,
}

/// For each task and each cumulative context C_i, one example: tapped
/// activations at C_i's final token (computed with cache reuse), labeled by
/// whether the gold span has been covered.
pub fn collect_activations(
    model: &Model<f32>,
    tasks: &[TaskInstance],
    plan_spec: &ChunkingSpec,
    taps: &[HeadTap],
) -> Result<Vec<ActivationExample>, ProbeError> {
    if taps.is_empty() {
        return Err(ProbeError::Parameter("taps must be non-empty".into()));
    }
    let per_task: Result<Vec<Vec<ActivationExample>>, ProbeError> = tasks
        .par_iter()
        .map(|task| {
            let plan = plan_chunks(task.context.len(), plan_spec, Some(&task.context))
                .map_err(TaskError::from)?;
            let labels = derive_labels(task, &plan)?;
            let mut cache = KvCache::new(&model.config);
            model.forward(&crate::tasks::query_prefix(task), &mut cache, &[])?;
            let mut out = Vec::with_capacity(plan.count());
            for i in 1..=plan.count() {
                let delta = plan.delta(i).map_err(TaskError::from)?;
                let fwd = model.forward(&task.context[delta], &mut cache, taps)?;
                out.push(ActivationExample {
                    features: fwd.taps,
                    label: labels.labels()[i - 1],
                    task_id: task.id.clone(),
                    chunk_index: i,
                });
            }
            Ok(out)
        })
        .collect();
    Ok(per_task?.into_iter().flatten().collect())
}

/// Feature matrix for one head, in example order.
pub fn head_features(examples: &[ActivationExample], tap: HeadTap) -> Vec<Vec<f64>> {
    examples
        .iter()
        .map(|e| e.features[&tap].iter().map(|&v| v as f64).collect())
        .collect()
}

/// Concatenated feature vector for one tap map, in head-list order.
pub fn concat_features_single(
    taps: &BTreeMap<HeadTap, Vec<f32>>,
    heads: &[HeadTap],
) -> Vec<f64> {
    heads
        .iter()
        .flat_map(|h| taps[h].iter().map(|&v| v as f64))
        .collect()
}

/// Concatenated feature layout over a fixed head list (the ensemble input).
pub fn concat_features(examples: &[ActivationExample], heads: &[HeadTap]) -> Vec<Vec<f64>> {
    examples
        .iter()
        .map(|e| {
            heads
                .iter()
                .flat_map(|h| e.features[h].iter().map(|&v| v as f64))
                .collect()
        })
        .collect()
}

/// Deterministic 4:1 split by task id: all examples of one task land on the
/// same side, so validation measures generalization to unseen tasks.
pub fn grouped_split(task_ids: &[String], seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::Rng;
    let mut unique: Vec<&String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for id in task_ids {
        if seen.insert(id) {
            unique.push(id);
        }
    }
    let mut order: Vec<usize> = (0..unique.len()).collect();
    let mut r = rng::substream(seed, "probe-split");
    for i in (1..order.len()).rev() {
        order.swap(i, r.gen_range(0..=i));
    }
    let n_train = (unique.len() * 4).div_ceil(5);
    let train_set: std::collections::HashSet<&String> =
        order[..n_train].iter().map(|&i| unique[i]).collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, id) in task_ids.iter().enumerate() {
        if train_set.contains(id) {
            train.push(i);
        } else {
            val.push(i);
        }
    }
    (train, val)
}

/// Mean logistic loss and its gradient for a bias-free probe.
pub fn probe_loss_and_grad(theta: &[f64], features: &[Vec<f64>], labels: &[u8]) -> (f64, Vec<f64>) {
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (x, &y) in features.iter().zip(labels) {
        let z: f64 = theta.iter().zip(x).map(|(t, v)| t * v).sum();
        let p = sigmoid(z);
        let yf = y as f64;
        let zc = z.clamp(-30.0, 30.0);
        loss += (1.0 + (-zc).exp()).ln() + zc * (1.0 - yf);
        let d = p - yf;
        for (g, &v) in grad.iter_mut().zip(x) {
            *g += d * v;
        }
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    (loss / n, grad)
}

fn f1_binary(preds: &[u8], gold: &[u8]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fnn = 0usize;
    for (&p, &g) in preds.iter().zip(gold) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fnn += 1,
            _ => {}
        }
    }
    if 2 * tp + fp + fnn == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub params: ProbeParams,
    pub validation_f1: f64,
    pub train_f1: f64,
}

/// Full-batch gradient descent on the logistic loss; 4:1 train/validation
/// split grouped by task.
pub fn train_probe(
    features: &[Vec<f64>],
    labels: &[u8],
    task_ids: &[String],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainedProbe, ProbeError> {
    if features.is_empty() || features.len() != labels.len() || features.len() != task_ids.len() {
        return Err(ProbeError::Parameter(
            "features, labels, and task ids must be equal-length and non-empty".into(),
        ));
    }
    let dim = features[0].len();
    let (train_idx, val_idx) = grouped_split(task_ids, seed);
    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| features[i].clone()).collect();
    let train_y: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
    let classes: std::collections::HashSet<u8> = train_y.iter().copied().collect();
    if classes.len() < 2 {
        return Err(ProbeError::DegenerateData(
            "training split must contain both classes".into(),
        ));
    }

    let mut theta = vec![0.0; dim];
    for _ in 0..epochs {
        let (_, grad) = probe_loss_and_grad(&theta, &train_x, &train_y);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= lr * g;
        }
    }
    let params = ProbeParams { theta };
    let predict_set = |idx: &[usize]| -> (Vec<u8>, Vec<u8>) {
        let preds = idx
            .iter()
            .map(|&i| u8::from(params.predict(&features[i]) >= 0.5))
            .collect();
        let gold = idx.iter().map(|&i| labels[i]).collect();
        (preds, gold)
    };
    let (vp, vg) = predict_set(&val_idx);
    let (tp, tg) = predict_set(&train_idx);
    Ok(TrainedProbe {
        params,
        validation_f1: f1_binary(&vp, &vg),
        train_f1: f1_binary(&tp, &tg),
    })
}

/// Probe every attention head and score it by validation F1. The examples
/// must carry all-head features.
pub fn probe_all_heads(
    model: &Model<f32>,
    examples: &[ActivationExample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<HeadScore>, ProbeError> {
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let task_ids: Vec<String> = examples.iter().map(|e| e.task_id.clone()).collect();
    let heads: Vec<HeadTap> = (0..model.config.n_layers)
        .flat_map(|l| (0..model.config.n_heads).map(move |h| HeadTap { layer: l, head: h }))
        .collect();
    heads
        .par_iter()
        .map(|tap| {
            let feats = head_features(examples, *tap);
            let trained = train_probe(&feats, &labels, &task_ids, epochs, lr, seed)?;
            Ok(HeadScore {
                layer: tap.layer,
                head: tap.head,
                validation_f1: trained.validation_f1,
            })
        })
        .collect()
}

/// All heads of a model, in (layer, head) order.
pub fn all_heads(config: &crate::model::ModelConfig) -> Vec<HeadTap> {
    (0..config.n_layers)
        .flat_map(|l| (0..config.n_heads).map(move |h| HeadTap { layer: l, head: h }))
        .collect()
}

/// Top-k heads by validation F1, ties broken by (layer, head) ascending.
pub fn select_heads(scores: &[HeadScore], k: usize) -> Vec<HeadTap> {
    let mut sorted: Vec<&HeadScore> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        b.validation_f1
            .partial_cmp(&a.validation_f1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (a.layer, a.head).cmp(&(b.layer, b.head)))
    });
    sorted
        .into_iter()
        .take(k)
        .map(|s| HeadTap {
            layer: s.layer,
            head: s.head,
        })
        .collect()
}
