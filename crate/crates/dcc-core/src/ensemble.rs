//! The sufficiency classifier: a pool of lightweight base learners
//! (logistic regressions and depth-limited decision trees) scored by mean
//! stratified-CV AUC; the top performers form the ensemble, whose confidence
//! is the arithmetic mean of member probabilities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::HeadTap;
use crate::ops::sigmoid;
use crate::probe::grouped_split;
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid ensemble parameter: {0}")]
    Parameter(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

/// Stratified fold assignment: per-class counts across folds differ by at
/// most one. Returns fold index per example.
pub fn stratified_kfold(
    labels: &[u8],
    n_folds: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, EnsembleError> {
    if n_folds < 2 {
        return Err(EnsembleError::Parameter("need at least 2 folds".into()));
    }
    let mut assignment = vec![0usize; labels.len()];
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < n_folds {
            return Err(EnsembleError::Parameter(format!(
                "class {class} has {} examples, fewer than {n_folds} folds",
                idx.len()
            )));
        }
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        for (pos, &example) in idx.iter().enumerate() {
            assignment[example] = pos % n_folds;
        }
    }
    Ok(assignment)
}

/// Rank-sum AUC: the probability that a random positive outranks a random
/// negative, ties counted 1/2.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EnsembleError> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EnsembleError::UndefinedMetric(
            "AUC needs both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups
    let mut rank = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            rank[o] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len())
        .filter(|&i| labels[i] == 1)
        .map(|i| rank[i])
        .sum();
    let p = pos as f64;
    let n = neg as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
}

impl LogisticModel {
    fn fit(dim: usize, lr: f64, l2: f64, epochs: usize, x: &[&[f64]], y: &[u8]) -> Self {
        let mut w = vec![0.0f64; dim];
        let mut b = 0.0f64;
        let n = x.len() as f64;
        for _ in 0..epochs {
            let mut gw = vec![0.0f64; dim];
            let mut gb = 0.0f64;
            for (xi, &yi) in x.iter().zip(y) {
                let z = b + w.iter().zip(*xi).map(|(a, c)| a * c).sum::<f64>();
                let d = sigmoid(z) - yi as f64;
                for (g, &v) in gw.iter_mut().zip(*xi) {
                    *g += d * v;
                }
                gb += d;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= lr * (g / n + l2 * *wi);
            }
            b -= lr * gb / n;
        }
        LogisticModel {
            weights: w,
            bias: b,
            lr,
            l2,
            epochs,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let z = self.bias
            + self
                .weights
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>();
        sigmoid(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Positive-class probability at a leaf (Laplace smoothed).
    pub prob: f64,
    pub leaf: bool,
}

/// CART-style binary tree with Gini splits and a depth cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl DecisionTree {
    fn fit(max_depth: usize, min_leaf: usize, x: &[&[f64]], y: &[u8]) -> Self {
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            max_depth,
            min_leaf,
        };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, y, &idx, 0);
        tree
    }

    fn leaf(&mut self, y: &[u8], idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| y[i] == 1).count();
        let prob = (pos as f64 + 1.0) / (idx.len() as f64 + 2.0);
        self.nodes.push(TreeNode {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            prob,
            leaf: true,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, x: &[&[f64]], y: &[u8], idx: &[usize], depth: usize) -> usize {
        let pos = idx.iter().filter(|&&i| y[i] == 1).count();
        if depth >= self.max_depth || pos == 0 || pos == idx.len() || idx.len() < 2 * self.min_leaf
        {
            return self.leaf(y, idx);
        }
        let dim = x[0].len();
        let parent_gini = gini(pos, idx.len());
        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        let mut sorted = idx.to_vec();
        for f in 0..dim {
            sorted.sort_by(|&a, &b| x[a][f].partial_cmp(&x[b][f]).unwrap());
            let mut left_pos = 0usize;
            for split in 1..sorted.len() {
                if y[sorted[split - 1]] == 1 {
                    left_pos += 1;
                }
                if x[sorted[split]][f] == x[sorted[split - 1]][f] {
                    continue;
                }
                if split < self.min_leaf || sorted.len() - split < self.min_leaf {
                    continue;
                }
                let right_pos = pos - left_pos;
                let w_left = split as f64 / sorted.len() as f64;
                let imp = w_left * gini(left_pos, split)
                    + (1.0 - w_left) * gini(right_pos, sorted.len() - split);
                if best.map_or(imp < parent_gini - 1e-12, |(b, _, _)| imp < b - 1e-12) {
                    let thr = (x[sorted[split - 1]][f] + x[sorted[split]][f]) / 2.0;
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(y, idx);
        };
        let (li, ri): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| x[i][feature] <= threshold);
        let left = self.grow(x, y, &li, depth + 1);
        let right = self.grow(x, y, &ri, depth + 1);
        self.nodes.push(TreeNode {
            feature,
            threshold,
            left,
            right,
            prob: 0.0,
            leaf: false,
        });
        self.nodes.len() - 1
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut node = self.nodes.len() - 1; // root is pushed last
        loop {
            let n = &self.nodes[node];
            if n.leaf {
                return n.prob;
            }
            node = if x[n.feature] <= n.threshold {
                n.left
            } else {
                n.right
            };
        }
    }
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseLearner {
    Logistic(LogisticModel),
    Tree(DecisionTree),
}

impl BaseLearner {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        match self {
            BaseLearner::Logistic(m) => m.predict_proba(x),
            BaseLearner::Tree(t) => t.predict_proba(x),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BaseLearner::Logistic(_) => "logistic",
            BaseLearner::Tree(_) => "decision-tree",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LearnerSpec {
    Logistic { lr: f64, l2: f64, epochs: usize },
    Tree { max_depth: usize, min_leaf: usize },
}

impl LearnerSpec {
    fn fit(&self, x: &[&[f64]], y: &[u8]) -> BaseLearner {
        match *self {
            LearnerSpec::Logistic { lr, l2, epochs } => {
                BaseLearner::Logistic(LogisticModel::fit(x[0].len(), lr, l2, epochs, x, y))
            }
            LearnerSpec::Tree {
                max_depth,
                min_leaf,
            } => BaseLearner::Tree(DecisionTree::fit(max_depth, min_leaf, x, y)),
        }
    }
}

/// The default pool: four logistic learners with varied step size and L2,
/// four trees with depths 2..=5.
pub fn default_pool(epochs: usize) -> Vec<LearnerSpec> {
    vec![
        LearnerSpec::Logistic { lr: 0.5, l2: 0.0, epochs },
        LearnerSpec::Logistic { lr: 0.5, l2: 1e-3, epochs },
        LearnerSpec::Logistic { lr: 0.2, l2: 1e-2, epochs },
        LearnerSpec::Logistic { lr: 0.2, l2: 1e-1, epochs },
        LearnerSpec::Tree { max_depth: 2, min_leaf: 3 },
        LearnerSpec::Tree { max_depth: 3, min_leaf: 3 },
        LearnerSpec::Tree { max_depth: 4, min_leaf: 3 },
        LearnerSpec::Tree { max_depth: 5, min_leaf: 3 },
    ]
}

/// Provenance of the training data, stored with the artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub dataset_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub learner: BaseLearner,
    pub spec: LearnerSpec,
    pub cv_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<EnsembleMember>,
    /// Selected heads, in feature-concatenation order.
    pub heads: Vec<HeadTap>,
    /// Mean CV AUC per pool entry, in pool order.
    pub pool_cv_auc: Vec<f64>,
    pub validation_f1: f64,
    pub best_member_validation_f1: f64,
    pub fingerprint: DataFingerprint,
}

impl EnsembleModel {
    /// Mean member probability that the current cumulative context is
    /// sufficient.
    pub fn confidence(&self, features: &[f64]) -> f64 {
        let sum: f64 = self
            .members
            .iter()
            .map(|m| m.learner.predict_proba(features))
            .sum();
        sum / self.members.len() as f64
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }
}

/// Threshold rule: sufficient iff the confidence reaches tau (inclusive).
pub fn decide(confidence: f64, tau: f64) -> u8 {
    u8::from(confidence >= tau)
}

fn f1_from_preds(preds: &[u8], gold: &[u8]) -> f64 {
    let tp = preds
        .iter()
        .zip(gold)
        .filter(|&(&p, &g)| p == 1 && g == 1)
        .count();
    let fp = preds
        .iter()
        .zip(gold)
        .filter(|&(&p, &g)| p == 1 && g == 0)
        .count();
    let fnn = preds
        .iter()
        .zip(gold)
        .filter(|&(&p, &g)| p == 0 && g == 1)
        .count();
    if 2 * tp + fp + fnn == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
    }
}

/// Build the ensemble: split 4:1 by task, score the pool by mean stratified
/// CV AUC on the training side, retrain the top `select` members on the full
/// training side, and evaluate on the held-out side.
#[allow(clippy::too_many_arguments)]
pub fn build_ensemble(
    features: &[Vec<f64>],
    labels: &[u8],
    task_ids: &[String],
    heads: &[HeadTap],
    pool: &[LearnerSpec],
    select: usize,
    n_folds: usize,
    seed: u64,
    fingerprint: DataFingerprint,
) -> Result<EnsembleModel, EnsembleError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(EnsembleError::Parameter(
            "features and labels must be equal-length and non-empty".into(),
        ));
    }
    if pool.len() < select || select == 0 {
        return Err(EnsembleError::Parameter(format!(
            "pool of {} cannot supply {select} members",
            pool.len()
        )));
    }
    let (train_idx, val_idx) = grouped_split(task_ids, seed);
    let train_y: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
    if !train_y.contains(&0) || !train_y.contains(&1) {
        return Err(EnsembleError::DegenerateData(
            "training split must contain both classes".into(),
        ));
    }

    let mut fold_rng = rng::substream(seed, "ensemble-folds");
    let folds = stratified_kfold(&train_y, n_folds, &mut fold_rng)?;

    let pool_cv_auc: Vec<f64> = pool
        .par_iter()
        .map(|spec| {
            let mut aucs = Vec::with_capacity(n_folds);
            for fold in 0..n_folds {
                let mut fit_x: Vec<&[f64]> = Vec::new();
                let mut fit_y: Vec<u8> = Vec::new();
                let mut held_x: Vec<&[f64]> = Vec::new();
                let mut held_y: Vec<u8> = Vec::new();
                for (pos, &i) in train_idx.iter().enumerate() {
                    if folds[pos] == fold {
                        held_x.push(&features[i]);
                        held_y.push(labels[i]);
                    } else {
                        fit_x.push(&features[i]);
                        fit_y.push(labels[i]);
                    }
                }
                let learner = spec.fit(&fit_x, &fit_y);
                let scores: Vec<f64> = held_x.iter().map(|x| learner.predict_proba(x)).collect();
                aucs.push(auc(&scores, &held_y)?);
            }
            Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
        })
        .collect::<Result<Vec<f64>, EnsembleError>>()?;

    // top `select` by CV AUC, ties broken by pool order
    let mut ranked: Vec<usize> = (0..pool.len()).collect();
    ranked.sort_by(|&a, &b| {
        pool_cv_auc[b]
            .partial_cmp(&pool_cv_auc[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let chosen = &ranked[..select];

    let fit_x: Vec<&[f64]> = train_idx.iter().map(|&i| features[i].as_slice()).collect();
    let members: Vec<EnsembleMember> = chosen
        .par_iter()
        .map(|&pi| EnsembleMember {
            learner: pool[pi].fit(&fit_x, &train_y),
            spec: pool[pi],
            cv_auc: pool_cv_auc[pi],
        })
        .collect();

    let model = EnsembleModel {
        members,
        heads: heads.to_vec(),
        pool_cv_auc,
        validation_f1: 0.0,
        best_member_validation_f1: 0.0,
        fingerprint,
    };
    let mut model = model;
    let val_gold: Vec<u8> = val_idx.iter().map(|&i| labels[i]).collect();
    let ens_preds: Vec<u8> = val_idx
        .iter()
        .map(|&i| u8::from(model.confidence(&features[i]) >= 0.5))
        .collect();
    model.validation_f1 = f1_from_preds(&ens_preds, &val_gold);
    model.best_member_validation_f1 = model
        .members
        .iter()
        .map(|m| {
            let preds: Vec<u8> = val_idx
                .iter()
                .map(|&i| u8::from(m.learner.predict_proba(&features[i]) >= 0.5))
                .collect();
            f1_from_preds(&preds, &val_gold)
        })
        .fold(0.0, f64::max);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn kfold_exact_divisibility() {
        let labels: Vec<u8> = [vec![1u8; 10], vec![0u8; 10]].concat();
        let folds = stratified_kfold(&labels, 5, &mut rng(1)).unwrap();
        for f in 0..5 {
            let pos = (0..20).filter(|&i| folds[i] == f && labels[i] == 1).count();
            let neg = (0..20).filter(|&i| folds[i] == f && labels[i] == 0).count();
            assert_eq!((pos, neg), (2, 2));
        }
    }

    #[test]
    fn kfold_remainder_spreads_by_one() {
        let labels = vec![1u8; 11];
        let mut l = labels;
        l.extend(vec![0u8; 10]);
        let folds = stratified_kfold(&l, 5, &mut rng(2)).unwrap();
        let mut counts = [0usize; 5];
        for (i, &f) in folds.iter().enumerate() {
            if l[i] == 1 {
                counts[f] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 2 || c == 3));
        assert_eq!(counts.iter().sum::<usize>(), 11);
    }

    #[test]
    fn kfold_is_deterministic_and_partitions() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        let a = stratified_kfold(&labels, 5, &mut rng(3)).unwrap();
        let b = stratified_kfold(&labels, 5, &mut rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&f| f < 5));
        assert_eq!(a.len(), labels.len());
    }

    #[test]
    fn kfold_small_class_is_rejected() {
        let labels = [vec![1u8; 3], vec![0u8; 20]].concat();
        assert!(stratified_kfold(&labels, 5, &mut rng(4)).is_err());
    }

    #[test]
    fn auc_known_values() {
        assert_eq!(auc(&[0.2, 0.4, 0.6, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        let v = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        let t = auc(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]).unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle_and_is_rank_invariant() {
        let mut r = rng(5);
        for _ in 0..300 {
            let n = r.gen_range(2..12);
            let scores: Vec<f64> = (0..n).map(|_| (r.gen_range(0..6) as f64) / 5.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2) as u8).collect();
            if !labels.contains(&0) || !labels.contains(&1) {
                continue;
            }
            // exhaustive pairwise count
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        den += 1.0;
                        if scores[i] > scores[j] {
                            num += 1.0;
                        } else if scores[i] == scores[j] {
                            num += 0.5;
                        }
                    }
                }
            }
            let got = auc(&scores, &labels).unwrap();
            assert!((got - num / den).abs() < 1e-10, "{scores:?} {labels:?}");
            // strictly increasing transform leaves AUC unchanged
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            let got2 = auc(&transformed, &labels).unwrap();
            assert!((got - got2).abs() < 1e-10);
        }
    }

    #[test]
    fn decide_thresholding() {
        assert_eq!(decide(0.75, 0.75), 1);
        assert_eq!(decide(0.2, 0.0), 1);
        assert_eq!(decide(0.999, 1.0), 0);
        // monotone in confidence, antitone in tau
        assert!(decide(0.8, 0.5) >= decide(0.3, 0.5));
        assert!(decide(0.8, 0.9) <= decide(0.8, 0.5));
    }

    #[test]
    fn tree_fits_threshold_pattern_deterministically() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64 / 40.0, ((i * 7) % 11) as f64])
            .collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let t1 = DecisionTree::fit(3, 2, &refs, &y);
        let t2 = DecisionTree::fit(3, 2, &refs, &y);
        assert_eq!(t1, t2);
        for (xi, &yi) in x.iter().zip(&y) {
            let p = t1.predict_proba(xi);
            assert!((0.0..=1.0).contains(&p));
            assert_eq!(u8::from(p >= 0.5), yi);
        }
    }

    fn synthetic_ensemble_data(
        n_tasks: usize,
        seed: u64,
    ) -> (Vec<Vec<f64>>, Vec<u8>, Vec<String>) {
        // noisy linear signal in 8 dims, grouped into tasks of 10 examples
        let mut r = rng(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ids = Vec::new();
        for t in 0..n_tasks {
            for _ in 0..10 {
                let x: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
                let signal = x[0] + 0.5 * x[1] + r.gen_range(-0.4..0.4);
                ys.push(u8::from(signal > 0.0));
                xs.push(x);
                ids.push(format!("task{t}"));
            }
        }
        (xs, ys, ids)
    }

    #[test]
    fn ensemble_confidence_is_member_mean() {
        // hand-built members with fixed outputs via degenerate trees
        let leaf = |p: f64| {
            BaseLearner::Tree(DecisionTree {
                nodes: vec![TreeNode {
                    feature: 0,
                    threshold: 0.0,
                    left: 0,
                    right: 0,
                    prob: p,
                    leaf: true,
                }],
                max_depth: 1,
                min_leaf: 1,
            })
        };
        let model = EnsembleModel {
            members: [0.6, 0.8, 1.0, 0.6]
                .into_iter()
                .map(|p| EnsembleMember {
                    learner: leaf(p),
                    spec: LearnerSpec::Tree { max_depth: 1, min_leaf: 1 },
                    cv_auc: 0.5,
                })
                .collect(),
            heads: vec![],
            pool_cv_auc: vec![],
            validation_f1: 0.0,
            best_member_validation_f1: 0.0,
            fingerprint: DataFingerprint { dataset_hash: "0".into(), seed: 0 },
        };
        assert!((model.confidence(&[0.0]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn build_ensemble_selects_top_by_auc_and_tracks_quality() {
        let (xs, ys, ids) = synthetic_ensemble_data(40, 7);
        let model = build_ensemble(
            &xs,
            &ys,
            &ids,
            &[],
            &default_pool(150),
            4,
            5,
            11,
            DataFingerprint { dataset_hash: "t".into(), seed: 11 },
        )
        .unwrap();
        assert_eq!(model.ensemble_size(), 4);
        // selected members' mean CV AUC is at least the pool median
        let mut sorted = model.pool_cv_auc.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = (sorted[3] + sorted[4]) / 2.0;
        let selected_mean: f64 =
            model.members.iter().map(|m| m.cv_auc).sum::<f64>() / model.members.len() as f64;
        assert!(selected_mean >= median);
        // regression guard on the ensemble-vs-member gap
        assert!(
            model.validation_f1 >= model.best_member_validation_f1 - 0.02,
            "ensemble {} vs best member {}",
            model.validation_f1,
            model.best_member_validation_f1
        );
        // probabilities bounded
        for x in xs.iter().take(20) {
            let c = model.confidence(x);
            assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn build_ensemble_rejects_degenerate_labels() {
        let (xs, _, ids) = synthetic_ensemble_data(10, 8);
        let ys = vec![1u8; xs.len()];
        assert!(build_ensemble(
            &xs,
            &ys,
            &ids,
            &[],
            &default_pool(50),
            4,
            5,
            1,
            DataFingerprint { dataset_hash: "t".into(), seed: 1 },
        )
        .is_err());
    }

    #[test]
    fn ensemble_is_deterministic() {
        let (xs, ys, ids) = synthetic_ensemble_data(30, 9);
        let fp = DataFingerprint { dataset_hash: "t".into(), seed: 2 };
        let a = build_ensemble(&xs, &ys, &ids, &[], &default_pool(100), 4, 5, 2, fp.clone())
            .unwrap();
        let b = build_ensemble(&xs, &ys, &ids, &[], &default_pool(100), 4, 5, 2, fp).unwrap();
        assert_eq!(a, b);
    }
}
