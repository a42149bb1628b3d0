//! Partitioning a context into ordered, non-overlapping chunks and the
//! nested cumulative prefixes over them.

use serde::{Deserialize, Serialize};

use crate::tasks::TokenId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChunkError {
    #[error("invalid chunking parameter: {0}")]
    Parameter(String),
    #[error("chunk index {index} out of range 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("plan covers {plan_len} tokens but context has {context_len}")]
    LengthMismatch { plan_len: usize, context_len: usize },
}

/// How to partition a context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", content = "value", rename_all = "lowercase")]
pub enum ChunkingSpec {
    /// Each chunk holds roughly this fraction of the tokens; ceil(1/p) chunks.
    Percent(f64),
    /// Fixed chunk size in tokens; the last chunk may be short.
    Fixed(usize),
    /// Split after each occurrence of a separator token; the trailing
    /// remainder forms the final chunk.
    Boundary(TokenId),
}

impl ChunkingSpec {
    pub fn validate(&self) -> Result<(), ChunkError> {
        match self {
            ChunkingSpec::Percent(p) if !(*p > 0.0 && *p <= 1.0) => Err(ChunkError::Parameter(
                format!("percent must be in (0, 1], got {p}"),
            )),
            ChunkingSpec::Fixed(0) => {
                Err(ChunkError::Parameter("fixed size must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Strictly increasing chunk end offsets; the last equals the context length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPlan {
    boundaries: Vec<usize>,
}

impl ChunkPlan {
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Number of chunks m.
    pub fn count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn context_len(&self) -> usize {
        *self.boundaries.last().expect("plan is never empty")
    }

    /// Token range [0, boundary_i) of the cumulative context C_i, 1-based.
    pub fn cumulative(&self, i: usize) -> Result<std::ops::Range<usize>, ChunkError> {
        if i == 0 || i > self.count() {
            return Err(ChunkError::IndexOutOfRange {
                index: i,
                count: self.count(),
            });
        }
        Ok(0..self.boundaries[i - 1])
    }

    /// Token range of chunk i alone (C_i minus C_{i-1}), 1-based.
    pub fn delta(&self, i: usize) -> Result<std::ops::Range<usize>, ChunkError> {
        if i == 0 || i > self.count() {
            return Err(ChunkError::IndexOutOfRange {
                index: i,
                count: self.count(),
            });
        }
        let start = if i == 1 { 0 } else { self.boundaries[i - 2] };
        Ok(start..self.boundaries[i - 1])
    }

    /// 1-based index of the chunk containing token position `pos`.
    pub fn chunk_of(&self, pos: usize) -> Result<usize, ChunkError> {
        if pos >= self.context_len() {
            return Err(ChunkError::IndexOutOfRange {
                index: pos,
                count: self.context_len(),
            });
        }
        Ok(self.boundaries.iter().position(|&b| b > pos).unwrap() + 1)
    }
}

/// Build a chunk plan for a context of `context_len` tokens. The Boundary
/// strategy needs the token stream itself.
pub fn plan_chunks(
    context_len: usize,
    spec: &ChunkingSpec,
    context: Option<&[TokenId]>,
) -> Result<ChunkPlan, ChunkError> {
    spec.validate()?;
    if context_len == 0 {
        return Err(ChunkError::Parameter("context must be non-empty".into()));
    }
    let boundaries = match *spec {
        ChunkingSpec::Percent(p) => {
            let m = ((1.0 / p).ceil() as usize).max(1).min(context_len);
            if m == 1 {
                vec![context_len]
            } else {
                // Fixed step on the p-grid; the final chunk absorbs the
                // remainder. Capped so that exactly m non-empty chunks fit.
                let cap = (context_len - 1) / (m - 1);
                let step = ((p * context_len as f64).round_ties_even() as usize)
                    .max(1)
                    .min(cap);
                let mut b: Vec<usize> = (1..m).map(|i| i * step).collect();
                b.push(context_len);
                b
            }
        }
        ChunkingSpec::Fixed(t) => {
            let mut b: Vec<usize> = (1..=(context_len / t)).map(|i| i * t).collect();
            if *b.last().unwrap_or(&0) != context_len {
                b.push(context_len);
            }
            b
        }
        ChunkingSpec::Boundary(sep) => {
            let tokens = context.ok_or_else(|| {
                ChunkError::Parameter("boundary strategy requires the token stream".into())
            })?;
            if tokens.len() != context_len {
                return Err(ChunkError::LengthMismatch {
                    plan_len: tokens.len(),
                    context_len,
                });
            }
            let mut b: Vec<usize> = tokens
                .iter()
                .enumerate()
                .filter(|(_, &t)| t == sep)
                .map(|(i, _)| i + 1)
                .collect();
            if *b.last().unwrap_or(&0) != context_len {
                b.push(context_len);
            }
            b
        }
    };
    debug_assert!(boundaries.windows(2).all(|w| w[0] < w[1]));
    Ok(ChunkPlan { boundaries })
}
