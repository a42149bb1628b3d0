//! The dynamic context cutoff inference loop and the comparison policies:
//! full context, fixed-rate truncation, BM25 top-k chunk retrieval, and the
//! gold-label oracle cutoff.
//!
//! Every episode owns a private KV cache; each context token passes through
//! the model at most once per episode.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::chunking::{plan_chunks, ChunkError, ChunkPlan, ChunkingSpec};
use crate::ensemble::{decide, EnsembleModel};
use crate::model::{HeadTap, KvCache, Model, ModelError};
use crate::probe::concat_features_single;
use crate::tasks::{self, TaskError, TaskInstance, TokenId};

pub const POLICY_CUTOFF: &str = "cutoff";
pub const POLICY_FULL: &str = "full";
pub const POLICY_STATIC: &str = "static";
pub const POLICY_BM25: &str = "bm25";
pub const POLICY_ORACLE: &str = "oracle";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("engine configuration error: {0}")]
    Config(String),
    #[error("invalid engine parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Cutoff policy settings. The taps must match the ensemble's head set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub tau: f64,
    pub chunking: ChunkingSpec,
    pub taps: Vec<HeadTap>,
    pub max_answer_tokens: usize,
}

impl CutoffConfig {
    pub fn validate(&self, ensemble: &EnsembleModel) -> Result<(), EngineError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(EngineError::Parameter(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if self.taps != ensemble.heads {
            return Err(EngineError::Config(
                "configured taps do not match the ensemble's head set".into(),
            ));
        }
        Ok(())
    }
}

/// Wall time per phase, in seconds: (a) context forwarding, (b) classifier
/// scoring, (c) generation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub forward_s: f64,
    pub classify_s: f64,
    pub generate_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub chunk_index: usize,
    pub confidence: f64,
    pub decision: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffTrace {
    pub task_id: String,
    pub policy: String,
    pub tau: f64,
    /// Chosen cutoff index (m under fallback); 0 for policies without one.
    pub k: usize,
    pub m: usize,
    pub steps: Vec<StepRecord>,
    pub tokens_processed: usize,
    pub tokens_full: usize,
    pub phase_times: PhaseTimes,
}

impl CutoffTrace {
    pub fn confidences(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.confidence).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub generated: Vec<TokenId>,
    pub exact_match: bool,
    pub policy: String,
}

/// Exact match on the answer span after trimming terminator tokens.
fn matches_answer(generated: &[TokenId], answer: &[TokenId]) -> bool {
    let trimmed: Vec<TokenId> = generated
        .iter()
        .copied()
        .filter(|&t| t != tasks::ANSWER_END)
        .collect();
    trimmed == answer
}

/// Forward the restated query and decode greedily.
fn answer_phase(
    model: &Model<f32>,
    cache: &mut KvCache<f32>,
    task: &TaskInstance,
    max_answer_tokens: usize,
) -> Result<(Vec<TokenId>, f64), EngineError> {
    let t0 = Instant::now();
    let generated = model.generate(
        cache,
        &tasks::answer_trigger(task),
        max_answer_tokens,
        tasks::ANSWER_END,
    )?;
    Ok((generated, t0.elapsed().as_secs_f64()))
}

fn finish(
    task: &TaskInstance,
    policy: &str,
    tau: f64,
    k: usize,
    m: usize,
    steps: Vec<StepRecord>,
    context_tokens_processed: usize,
    generated: Vec<TokenId>,
    phase_times: PhaseTimes,
) -> (AnswerResult, CutoffTrace) {
    let result = AnswerResult {
        exact_match: matches_answer(&generated, &task.answer),
        generated,
        policy: policy.to_string(),
    };
    let trace = CutoffTrace {
        task_id: task.id.clone(),
        policy: policy.to_string(),
        tau,
        k,
        m,
        steps,
        tokens_processed: context_tokens_processed + result.generated.len(),
        tokens_full: task.context.len() + result.generated.len(),
        phase_times,
    };
    (result, trace)
}

/// Dynamic context cutoff: stream chunks through the cache, score each
/// cumulative context, stop at the first confidence ≥ tau, then generate
/// from the reused cache. Falls back to the full context when no chunk
/// suffices.
pub fn run_cutoff(
    model: &Model<f32>,
    ensemble: &EnsembleModel,
    task: &TaskInstance,
    config: &CutoffConfig,
) -> Result<(AnswerResult, CutoffTrace), EngineError> {
    config.validate(ensemble)?;
    let plan = plan_chunks(task.context.len(), &config.chunking, Some(&task.context))?;
    let m = plan.count();
    let mut times = PhaseTimes::default();
    let mut cache = KvCache::new(&model.config);

    let t0 = Instant::now();
    model.forward(&tasks::query_prefix(task), &mut cache, &[])?;
    times.forward_s += t0.elapsed().as_secs_f64();

    let mut steps = Vec::with_capacity(m);
    let mut k = m;
    let mut fired = false;
    for i in 1..=m {
        let delta = plan.delta(i)?;
        let t0 = Instant::now();
        let fwd = model.forward(&task.context[delta], &mut cache, &config.taps)?;
        times.forward_s += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let features = concat_features_single(&fwd.taps, &ensemble.heads);
        let confidence = ensemble.confidence(&features);
        let decision = decide(confidence, config.tau);
        times.classify_s += t1.elapsed().as_secs_f64();
        steps.push(StepRecord {
            chunk_index: i,
            confidence,
            decision,
        });
        if decision == 1 {
            k = i;
            fired = true;
            break;
        }
    }
    // single-visit accounting: every context token up to the cutoff has been
    // forwarded exactly once
    debug_assert_eq!(
        cache.cached_len(),
        tasks::query_prefix(task).len() + plan.boundaries()[k - 1]
    );
    let _ = fired;

    let (generated, gen_s) = answer_phase(model, &mut cache, task, config.max_answer_tokens)?;
    times.generate_s = gen_s;
    let processed = plan.boundaries()[k - 1];
    Ok(finish(
        task,
        POLICY_CUTOFF,
        config.tau,
        k,
        m,
        steps,
        processed,
        generated,
        times,
    ))
}

/// Single pass over the whole context, then decode.
pub fn run_full(
    model: &Model<f32>,
    task: &TaskInstance,
    max_answer_tokens: usize,
) -> Result<(AnswerResult, CutoffTrace), EngineError> {
    let mut times = PhaseTimes::default();
    let mut cache = KvCache::new(&model.config);
    let t0 = Instant::now();
    model.forward(&tasks::query_prefix(task), &mut cache, &[])?;
    model.forward(&task.context, &mut cache, &[])?;
    times.forward_s = t0.elapsed().as_secs_f64();
    let (generated, gen_s) = answer_phase(model, &mut cache, task, max_answer_tokens)?;
    times.generate_s = gen_s;
    Ok(finish(
        task,
        POLICY_FULL,
        f64::NAN,
        0,
        0,
        Vec::new(),
        task.context.len(),
        generated,
        times,
    ))
}

/// Keep the first round(rho·len) context tokens, then decode.
pub fn run_static_truncate(
    model: &Model<f32>,
    task: &TaskInstance,
    keep_fraction: f64,
    max_answer_tokens: usize,
) -> Result<(AnswerResult, CutoffTrace), EngineError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(EngineError::Parameter(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    let keep = ((keep_fraction * task.context.len() as f64).round_ties_even() as usize)
        .min(task.context.len());
    let mut times = PhaseTimes::default();
    let mut cache = KvCache::new(&model.config);
    let t0 = Instant::now();
    model.forward(&tasks::query_prefix(task), &mut cache, &[])?;
    if keep > 0 {
        model.forward(&task.context[..keep], &mut cache, &[])?;
    }
    times.forward_s = t0.elapsed().as_secs_f64();
    let (generated, gen_s) = answer_phase(model, &mut cache, task, max_answer_tokens)?;
    times.generate_s = gen_s;
    Ok(finish(
        task,
        POLICY_STATIC,
        f64::NAN,
        0,
        0,
        Vec::new(),
        keep,
        generated,
        times,
    ))
}

/// Classic BM25 with k1 = 1.2, b = 0.75 and idf = ln((N−n+0.5)/(n+0.5)+1).
pub fn bm25_scores(chunks: &[&[TokenId]], query: &[TokenId]) -> Vec<f64> {
    const K1: f64 = 1.2;
    const B: f64 = 0.75;
    let n_docs = chunks.len() as f64;
    let avgdl = chunks.iter().map(|c| c.len() as f64).sum::<f64>() / n_docs;
    let mut terms: Vec<TokenId> = query.to_vec();
    terms.sort_unstable();
    terms.dedup();
    let mut scores = vec![0.0f64; chunks.len()];
    for term in terms {
        let df = chunks.iter().filter(|c| c.contains(&term)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let idf = ((n_docs - df + 0.5) / (df + 0.5) + 1.0).ln();
        for (d, chunk) in chunks.iter().enumerate() {
            let tf = chunk.iter().filter(|&&t| t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let dl = chunk.len() as f64;
            scores[d] += idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * dl / avgdl));
        }
    }
    scores
}

/// Rank chunks against the query with BM25, keep the top k_docs in original
/// order, concatenate, and decode.
pub fn run_bm25_topk(
    model: &Model<f32>,
    task: &TaskInstance,
    chunking: &ChunkingSpec,
    k_docs: usize,
    max_answer_tokens: usize,
) -> Result<(AnswerResult, CutoffTrace), EngineError> {
    if k_docs == 0 {
        return Err(EngineError::Parameter("k_docs must be >= 1".into()));
    }
    let plan = plan_chunks(task.context.len(), chunking, Some(&task.context))?;
    let m = plan.count();
    let chunks: Vec<&[TokenId]> = (1..=m)
        .map(|i| &task.context[plan.delta(i).expect("in range")])
        .collect();

    let t_rank = Instant::now();
    let scores = bm25_scores(&chunks, &task.query);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order.into_iter().take(k_docs.min(m)).collect();
    selected.sort_unstable();
    let classify_s = t_rank.elapsed().as_secs_f64();

    let mut kept: Vec<TokenId> = Vec::new();
    for &c in &selected {
        kept.extend_from_slice(chunks[c]);
    }

    let mut times = PhaseTimes {
        classify_s,
        ..PhaseTimes::default()
    };
    let mut cache = KvCache::new(&model.config);
    let t0 = Instant::now();
    model.forward(&tasks::query_prefix(task), &mut cache, &[])?;
    model.forward(&kept, &mut cache, &[])?;
    times.forward_s = t0.elapsed().as_secs_f64();
    let (generated, gen_s) = answer_phase(model, &mut cache, task, max_answer_tokens)?;
    times.generate_s = gen_s;
    let processed = kept.len();
    Ok(finish(
        task,
        POLICY_BM25,
        f64::NAN,
        k_docs.min(m),
        m,
        Vec::new(),
        processed,
        generated,
        times,
    ))
}

/// Cut at the first chunk whose gold-derived label is 1: the minimal-token
/// reference policy.
pub fn run_oracle(
    model: &Model<f32>,
    task: &TaskInstance,
    chunking: &ChunkingSpec,
    max_answer_tokens: usize,
) -> Result<(AnswerResult, CutoffTrace), EngineError> {
    let plan = plan_chunks(task.context.len(), chunking, Some(&task.context))?;
    let labels = tasks::derive_labels(task, &plan)?;
    let k = labels.first_sufficient();
    let m = plan.count();
    let steps: Vec<StepRecord> = (1..=k)
        .map(|i| StepRecord {
            chunk_index: i,
            confidence: labels.labels()[i - 1] as f64,
            decision: u8::from(i == k),
        })
        .collect();

    let mut times = PhaseTimes::default();
    let mut cache = KvCache::new(&model.config);
    let t0 = Instant::now();
    model.forward(&tasks::query_prefix(task), &mut cache, &[])?;
    let prefix = plan.cumulative(k)?;
    model.forward(&task.context[prefix], &mut cache, &[])?;
    times.forward_s = t0.elapsed().as_secs_f64();
    let (generated, gen_s) = answer_phase(model, &mut cache, task, max_answer_tokens)?;
    times.generate_s = gen_s;
    let processed = plan.boundaries()[k - 1];
    Ok(finish(
        task,
        POLICY_ORACLE,
        f64::NAN,
        k,
        m,
        steps,
        processed,
        generated,
        times,
    ))
}
