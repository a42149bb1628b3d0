//! Training-corpus construction for the desk-scale model.
//!
//! Two sequence families share one vocabulary and one skill set:
//!
//! * episode sequences mirror the inference layout exactly — query prefix,
//!   a possibly truncated context, the restated query, then the answer, or
//!   the UNKNOWN token when the visible prefix cannot resolve the query.
//!   Truncation at random token depths teaches the model to answer at every
//!   cutoff position and makes "can I answer yet" a trained computation;
//! * dense retrieval sequences interleave many query/answer blocks into one
//!   statement stream, giving the copy circuit far more gradient signal per
//!   forward pass than single-answer episodes.
//!
//! All loss stays on answer positions.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::TrainExample;
use crate::tasks::{
    self, gen_multi_hop_instance, gen_single_hop_instance, resolve, TaskError, TokenId,
    ANSWER_END, KEY_BASE, KEY_COUNT, QUERY_MARK, STMT_SEP, STMT_TOKENS, UNKNOWN, VALUE_BASE,
    VALUE_COUNT,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub size: usize,
    pub min_statements: usize,
    pub max_statements: usize,
    /// Fraction of episode sequences built on multi-hop chain contexts.
    pub multi_hop_fraction: f64,
    /// Fraction of the corpus made of dense multi-query sequences.
    pub dense_fraction: f64,
    /// Among episode sequences, the probability of keeping the full context.
    pub full_context_fraction: f64,
    pub chain_len: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            size: 40_000,
            min_statements: 3,
            max_statements: 34,
            multi_hop_fraction: 0.5,
            dense_fraction: 0.45,
            full_context_fraction: 0.45,
            chain_len: 2,
        }
    }
}

fn random_value(rng: &mut ChaCha8Rng) -> TokenId {
    VALUE_BASE + rng.gen_range(0..VALUE_COUNT)
}

/// Episode sequence: prefix ‖ ctx[..depth] ‖ trigger ‖ (answer | UNKNOWN) ‖ end.
fn episode_example(spec: &CorpusSpec, rng: &mut ChaCha8Rng, idx: usize) -> TrainExample {
    let multi = rng.gen_bool(spec.multi_hop_fraction);
    let lo = if multi {
        spec.min_statements.max(spec.chain_len + 2)
    } else {
        spec.min_statements
    };
    let n = rng.gen_range(lo..=spec.max_statements);
    let seed: u64 = rng.gen();
    let task = if multi {
        gen_multi_hop_instance(n * STMT_TOKENS, spec.chain_len, seed, format!("ep-{idx}"))
    } else {
        gen_single_hop_instance(n * STMT_TOKENS, seed, format!("ep-{idx}"))
    }
    .expect("corpus parameters are in range");

    let depth = if rng.gen_bool(spec.full_context_fraction) {
        task.context.len()
    } else {
        rng.gen_range(1..=task.context.len())
    };
    let visible = &task.context[..depth];
    let answer = resolve(visible, &task.query).unwrap_or(UNKNOWN);

    let mut tokens = tasks::query_prefix(&task);
    tokens.extend_from_slice(visible);
    tokens.extend_from_slice(&tasks::answer_trigger(&task));
    let answer_pos = tokens.len();
    tokens.push(answer);
    tokens.push(ANSWER_END);
    TrainExample {
        tokens,
        target_positions: vec![answer_pos, answer_pos + 1],
    }
}

/// Dense sequence: a statement stream with interleaved query/answer blocks
/// `? k a ;` at random depths; `a` is the resolved value when the visible
/// prefix suffices, UNKNOWN otherwise.
fn dense_example(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> TrainExample {
    let n = rng.gen_range(spec.min_statements.max(4)..=spec.max_statements);
    // heads are distinct; a fraction of slots pair up into two-step chains
    let mut head_pool: Vec<TokenId> = (0..KEY_COUNT).map(|k| KEY_BASE + k).collect();
    for i in (1..head_pool.len()).rev() {
        head_pool.swap(i, rng.gen_range(0..=i));
    }
    let heads = &head_pool[..n];

    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let n_pairs = if spec.multi_hop_fraction > 0.0 {
        (n * 2 / 5) / 2
    } else {
        0
    };
    let mut second: Vec<TokenId> = vec![0; n];
    for p in 0..n_pairs {
        let a = order[2 * p];
        let b = order[2 * p + 1];
        second[a] = heads[b];
        second[b] = random_value(rng);
    }
    for &s in &order[2 * n_pairs..] {
        second[s] = random_value(rng);
    }

    let context: Vec<TokenId> = (0..n)
        .flat_map(|s| [heads[s], second[s], STMT_SEP])
        .collect();

    // query blocks after a random subset of statements (and one at the end)
    let n_queries = (n / 2).max(1);
    let mut insert_after: Vec<usize> = (0..n).collect();
    for i in (1..insert_after.len()).rev() {
        insert_after.swap(i, rng.gen_range(0..=i));
    }
    let mut insert_points: Vec<usize> = insert_after[..n_queries.min(n)].to_vec();
    insert_points.sort_unstable();

    let mut tokens: Vec<TokenId> = Vec::with_capacity(n * STMT_TOKENS + n_queries * 4);
    let mut target_positions = Vec::with_capacity(n_queries * 2);
    let mut next_insert = 0usize;
    for s in 0..n {
        tokens.extend_from_slice(&context[s * STMT_TOKENS..(s + 1) * STMT_TOKENS]);
        while next_insert < insert_points.len() && insert_points[next_insert] == s {
            next_insert += 1;
            let key = heads[rng.gen_range(0..n)];
            let visible = &context[..(s + 1) * STMT_TOKENS];
            let answer = resolve(visible, &[QUERY_MARK, key]).unwrap_or(UNKNOWN);
            tokens.push(QUERY_MARK);
            tokens.push(key);
            target_positions.push(tokens.len());
            tokens.push(answer);
            target_positions.push(tokens.len());
            tokens.push(ANSWER_END);
        }
    }
    TrainExample {
        tokens,
        target_positions,
    }
}

/// Build the full training corpus from a master seed. Deterministic.
pub fn build_training_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<TrainExample>, TaskError> {
    if spec.min_statements < 3 || spec.max_statements < spec.min_statements {
        return Err(TaskError::Parameter(
            "corpus statement range must be at least 3..=min".into(),
        ));
    }
    if spec.max_statements > KEY_COUNT as usize {
        return Err(TaskError::Parameter(format!(
            "max_statements {} exceeds the key alphabet {KEY_COUNT}",
            spec.max_statements
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..spec.size)
        .map(|i| {
            if rng.gen_bool(spec.dense_fraction) {
                dense_example(spec, &mut rng)
            } else {
                episode_example(spec, &mut rng, i)
            }
        })
        .collect())
}
