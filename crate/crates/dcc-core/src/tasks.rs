//! Synthetic long-context retrieval tasks over a closed token vocabulary.
//!
//! A context is a stream of key–value statements `k v .`; the query names a
//! key and the answer is the value it resolves to, following reference
//! chains for multi-hop instances. Gold spans are known by construction, so
//! exact-match evaluation needs no external judge.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunking::{ChunkError, ChunkPlan};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const QUERY_MARK: TokenId = 1;
pub const STMT_SEP: TokenId = 2;
pub const ANSWER_END: TokenId = 3;
/// Emitted by the model when the streamed context cannot yet resolve the
/// query; only ever a training target for truncated-context episodes.
pub const UNKNOWN: TokenId = 4;
pub const KEY_BASE: TokenId = 8;
pub const KEY_COUNT: u32 = 240;
pub const VALUE_BASE: TokenId = KEY_BASE + KEY_COUNT;
pub const VALUE_COUNT: u32 = 240;

/// Tokens per key–value statement: key, value, separator.
pub const STMT_TOKENS: usize = 3;

/// Smallest vocabulary that can hold the task language.
pub const MIN_VOCAB: usize = (VALUE_BASE + VALUE_COUNT) as usize;

pub fn is_key(t: TokenId) -> bool {
    (KEY_BASE..VALUE_BASE).contains(&t)
}

pub fn is_value(t: TokenId) -> bool {
    (VALUE_BASE..VALUE_BASE + VALUE_COUNT).contains(&t)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task parameter: {0}")]
    Parameter(String),
    #[error("chunk plan does not match the task context: {0}")]
    Plan(#[from] ChunkError),
    #[error("dataset io failed for {path}: {message}")]
    Io { path: String, message: String },
}

/// One retrieval task: context, query, answer, and the end of the gold span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub context: Vec<TokenId>,
    pub query: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    /// Context index of the last token of the gold information span.
    pub gold_end: usize,
    pub hops: u32,
    pub seed: u64,
}

impl TaskInstance {
    /// Number of context tokens.
    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    /// Normalized gold location in [0, 1).
    pub fn gold_location(&self) -> f64 {
        self.gold_end as f64 / self.context.len() as f64
    }
}

/// Per-chunk sufficiency labels: a prefix of 0s followed by 1s.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficiencyLabels {
    labels: Vec<u8>,
}

impl SufficiencyLabels {
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// 1-based index of the first sufficient chunk.
    pub fn first_sufficient(&self) -> usize {
        self.labels.iter().position(|&l| l == 1).unwrap() + 1
    }
}

/// Chunk containing the gold end and all later chunks are sufficient.
pub fn derive_labels(task: &TaskInstance, plan: &ChunkPlan) -> Result<SufficiencyLabels, TaskError> {
    if plan.context_len() != task.context.len() {
        return Err(TaskError::Plan(ChunkError::LengthMismatch {
            plan_len: plan.context_len(),
            context_len: task.context.len(),
        }));
    }
    if task.gold_end >= task.context.len() {
        return Err(TaskError::Parameter(format!(
            "gold_end {} outside context of length {}",
            task.gold_end,
            task.context.len()
        )));
    }
    let labels = plan
        .boundaries()
        .iter()
        .map(|&b| u8::from(b > task.gold_end))
        .collect();
    Ok(SufficiencyLabels { labels })
}

fn statement_capacity(ctx_len: usize) -> usize {
    ctx_len / STMT_TOKENS
}

/// Resolve a query against a context by brute-force scanning: build the
/// statement map and follow key references until a value token is reached.
/// Returns None when the chain is incomplete. This is the independent
/// answer oracle used by tests and by the oracle policy checks.
pub fn resolve(context: &[TokenId], query: &[TokenId]) -> Option<TokenId> {
    let mut pairs = Vec::new();
    let mut i = 0;
    while i + 1 < context.len() {
        if is_key(context[i]) {
            pairs.push((context[i], context[i + 1]));
        }
        // statements are fixed-width triples
        i += STMT_TOKENS;
    }
    let lookup = |k: TokenId| pairs.iter().find(|(h, _)| *h == k).map(|(_, v)| *v);
    let mut cur = *query.iter().find(|t| is_key(**t))?;
    for _ in 0..pairs.len() + 1 {
        match lookup(cur) {
            Some(v) if is_value(v) => return Some(v),
            Some(k) => cur = k,
            None => return None,
        }
    }
    None
}

struct SlotAssignment {
    /// (slot, head, second) triples, one per statement slot.
    statements: Vec<(usize, TokenId, TokenId)>,
}

fn build_context(n_stmts: usize, assignment: &SlotAssignment) -> Vec<TokenId> {
    let mut ctx = vec![PAD; n_stmts * STMT_TOKENS];
    for &(slot, head, second) in &assignment.statements {
        ctx[slot * STMT_TOKENS] = head;
        ctx[slot * STMT_TOKENS + 1] = second;
        ctx[slot * STMT_TOKENS + 2] = STMT_SEP;
    }
    ctx
}

fn random_value(rng: &mut ChaCha8Rng) -> TokenId {
    VALUE_BASE + rng.gen_range(0..VALUE_COUNT)
}

/// Generate one single-hop instance. Exactly one statement carries the
/// queried key; the gold slot is uniform over the interior of the context
/// (matching the target mean/std of the gold-location distribution).
///
/// Accepts any context that holds at least three statements; shorter
/// contexts than the dataset ops allow are useful for the training corpus,
/// where the model must learn to answer at every cutoff position.
pub fn gen_single_hop_instance(
    ctx_len: usize,
    seed: u64,
    id: String,
) -> Result<TaskInstance, TaskError> {
    let n = statement_capacity(ctx_len);
    if n < 3 {
        return Err(TaskError::Parameter(format!(
            "ctx_len {ctx_len} holds fewer than 3 statements"
        )));
    }
    if n > KEY_COUNT as usize {
        return Err(TaskError::Parameter(format!(
            "ctx_len {ctx_len} needs {n} distinct keys but the alphabet has {KEY_COUNT}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads: Vec<TokenId> = sample(&mut rng, KEY_COUNT as usize, n)
        .into_iter()
        .map(|k| KEY_BASE + k as TokenId)
        .collect();
    let gold_slot = rng.gen_range(1..=n - 2);
    let statements = (0..n)
        .map(|s| (s, heads[s], random_value(&mut rng)))
        .collect();
    let assignment = SlotAssignment { statements };
    let context = build_context(n, &assignment);
    let answer_token = context[gold_slot * STMT_TOKENS + 1];
    Ok(TaskInstance {
        id,
        query: vec![QUERY_MARK, heads[gold_slot]],
        answer: vec![answer_token],
        gold_end: gold_slot * STMT_TOKENS + 1,
        hops: 1,
        context,
        seed,
    })
}

/// Generate one multi-hop instance: a reference chain of `chain_len`
/// statements ending in a value, scattered before a uniformly placed final
/// link, plus plain and chained distractors.
pub fn gen_multi_hop_instance(
    ctx_len: usize,
    chain_len: usize,
    seed: u64,
    id: String,
) -> Result<TaskInstance, TaskError> {
    let n = statement_capacity(ctx_len);
    if chain_len < 2 {
        return Err(TaskError::Parameter(format!(
            "chain_len must be >= 2, got {chain_len}"
        )));
    }
    if n < chain_len + 2 || n > KEY_COUNT as usize {
        return Err(TaskError::Parameter(format!(
            "ctx_len {ctx_len} cannot hold a {chain_len}-link chain plus distractors"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads: Vec<TokenId> = sample(&mut rng, KEY_COUNT as usize, n)
        .into_iter()
        .map(|k| KEY_BASE + k as TokenId)
        .collect();

    // The latest-position chain link lands uniformly in the interior; all
    // other links scatter uniformly before it.
    let gold_slot = rng.gen_range(chain_len - 1..=n - 2);
    let mut chain_slots: Vec<usize> = sample(&mut rng, gold_slot, chain_len - 1)
        .into_iter()
        .collect();
    chain_slots.push(gold_slot);
    chain_slots.sort_unstable();
    // Random assignment of chain positions (first link, second link, ...)
    // onto the chosen slots.
    let mut order: Vec<usize> = (0..chain_len).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }

    let answer_token = random_value(&mut rng);
    let mut statements: Vec<(usize, TokenId, TokenId)> = Vec::with_capacity(n);
    // chain statement j: head = heads[slot of link j], second = head of link
    // j+1 (or the answer value for the last link)
    for (j, &slot) in order.iter().enumerate() {
        let s = chain_slots[slot];
        let next = if j + 1 < chain_len {
            heads[chain_slots[order[j + 1]]]
        } else {
            answer_token
        };
        statements.push((s, heads[s], next));
    }
    let query_key = heads[chain_slots[order[0]]];

    // Distractors: pair up a fraction of the remaining slots into two-step
    // reference chains so that "find the statement whose second token is a
    // key" is not a usable shortcut; the rest map straight to values.
    let mut rest: Vec<usize> = (0..n).filter(|s| !chain_slots.contains(s)).collect();
    for i in (1..rest.len()).rev() {
        rest.swap(i, rng.gen_range(0..=i));
    }
    let n_pairs = (rest.len() * 2 / 5) / 2;
    for p in 0..n_pairs {
        let a = rest[2 * p];
        let b = rest[2 * p + 1];
        statements.push((a, heads[a], heads[b]));
        statements.push((b, heads[b], random_value(&mut rng)));
    }
    for &s in &rest[2 * n_pairs..] {
        statements.push((s, heads[s], random_value(&mut rng)));
    }

    let assignment = SlotAssignment { statements };
    let context = build_context(n, &assignment);
    Ok(TaskInstance {
        id,
        query: vec![QUERY_MARK, query_key],
        answer: vec![answer_token],
        gold_end: gold_slot * STMT_TOKENS + 1,
        hops: chain_len as u32,
        context,
        seed,
    })
}

/// Generate `n` single-hop instances with per-instance seeds split off the
/// supplied RNG. Dataset-level contract: `ctx_len` must be at least 32.
pub fn gen_single_hop(
    n: usize,
    ctx_len: usize,
    rng: &mut ChaCha8Rng,
    id_prefix: &str,
) -> Result<Vec<TaskInstance>, TaskError> {
    if ctx_len < 32 {
        return Err(TaskError::Parameter(format!(
            "ctx_len must be >= 32 tokens, got {ctx_len}"
        )));
    }
    (0..n)
        .map(|i| {
            let seed: u64 = rng.gen();
            gen_single_hop_instance(ctx_len, seed, format!("{id_prefix}-{i:05}"))
        })
        .collect()
}

/// Generate `n` multi-hop key–value chain instances.
pub fn gen_multi_hop_kv(
    n: usize,
    ctx_len: usize,
    chain_len: usize,
    rng: &mut ChaCha8Rng,
    id_prefix: &str,
) -> Result<Vec<TaskInstance>, TaskError> {
    (0..n)
        .map(|i| {
            let seed: u64 = rng.gen();
            gen_multi_hop_instance(ctx_len, chain_len, seed, format!("{id_prefix}-{i:05}"))
        })
        .collect()
}

/// Disjoint 80/10/10 id split, shuffled deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

pub fn split_dataset(tasks: &[TaskInstance], rng: &mut ChaCha8Rng) -> Result<DatasetSplit, TaskError> {
    if tasks.len() < 10 {
        return Err(TaskError::Parameter(format!(
            "need at least 10 tasks to split, got {}",
            tasks.len()
        )));
    }
    let mut ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.gen_range(0..=i));
    }
    let n = ids.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        validation,
        test,
    })
}

/// Write one JSON record per line. Bit-exact across platforms.
pub fn write_dataset(path: &Path, tasks: &[TaskInstance]) -> Result<(), TaskError> {
    let io_err = |e: std::io::Error| TaskError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    for t in tasks {
        let line = serde_json::to_string(t).expect("task serializes");
        writeln!(f, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<TaskInstance>, TaskError> {
    let io_err = |m: String| TaskError::Io {
        path: path.display().to_string(),
        message: m,
    };
    let f = fs::File::open(path).map_err(|e| io_err(e.to_string()))?;
    let mut tasks = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| io_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        tasks.push(serde_json::from_str(&line).map_err(|e| io_err(e.to_string()))?);
    }
    Ok(tasks)
}

/// Tokens forwarded before the context: the query plus a statement
/// separator. The query precedes the context so that sufficiency is
/// assessable while the context streams in.
pub fn query_prefix(task: &TaskInstance) -> Vec<TokenId> {
    let mut p = task.query.clone();
    p.push(STMT_SEP);
    p
}

/// Tokens that prompt the answer after the (possibly truncated) context:
/// the query restated. Prediction happens at its final token.
pub fn answer_trigger(task: &TaskInstance) -> Vec<TokenId> {
    task.query.clone()
}

/// Full training/inference sequence:
/// query-prefix ‖ context ‖ query-restatement ‖ answer ‖ terminator.
pub fn full_sequence(task: &TaskInstance) -> Vec<TokenId> {
    let prefix = query_prefix(task);
    let trigger = answer_trigger(task);
    let mut seq = Vec::with_capacity(
        prefix.len() + task.context.len() + trigger.len() + task.answer.len() + 1,
    );
    seq.extend_from_slice(&prefix);
    seq.extend_from_slice(&task.context);
    seq.extend_from_slice(&trigger);
    seq.extend_from_slice(&task.answer);
    seq.push(ANSWER_END);
    seq
}

/// Index of the first answer token within `full_sequence(task)`.
pub fn answer_start(task: &TaskInstance) -> usize {
    query_prefix(task).len() + task.context.len() + answer_trigger(task).len()
}
