//! Incremental forward pass over a KV cache, with per-head activation taps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ops::{dot, layer_norm, matmul_into, matmul_nt_into, softmax_in_place};
use crate::tasks::TokenId;
use crate::tensor::{Scalar, Tensor};

use super::{KvCache, Model, ModelError};

/// Identifies one attention head.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct HeadTap {
    pub layer: usize,
    pub head: usize,
}

/// Logits for the new positions and the tapped head activations at the final
/// new position (the head's attention output before the output projection).
#[derive(Debug, Clone)]
pub struct ForwardOutput<T = f32> {
    pub logits: Tensor<T>,
    pub taps: BTreeMap<HeadTap, Vec<T>>,
}

pub(crate) fn add_bias_rows<T: Scalar>(x: &mut [T], bias: &[T]) {
    let n = bias.len();
    for row in x.chunks_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn axpy<T: Scalar>(a: T, xs: &[T], ys: &mut [T]) {
    for (y, &x) in ys.iter_mut().zip(xs) {
        *y += a * x;
    }
}

impl<T: Scalar> Model<T> {
    /// Process `new_tokens` on top of `cache`, extending it in place.
    /// Position t attends to all cached and new positions ≤ t.
    pub fn forward(
        &self,
        new_tokens: &[TokenId],
        cache: &mut KvCache<T>,
        taps: &[HeadTap],
    ) -> Result<ForwardOutput<T>, ModelError> {
        let cfg = &self.config;
        if new_tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let old_len = cache.cached_len();
        let needed = old_len + new_tokens.len();
        if needed > cfg.max_positions {
            return Err(ModelError::Capacity {
                needed,
                max: cfg.max_positions,
            });
        }
        for tap in taps {
            if tap.layer >= cfg.n_layers || tap.head >= cfg.n_heads {
                return Err(ModelError::TapOutOfRange {
                    layer: tap.layer,
                    head: tap.head,
                });
            }
        }
        debug_assert_eq!(cache.row_width(), cfg.d_model, "cache built for this config");

        let d = cfg.d_model;
        let dh = cfg.d_head();
        let t_new = new_tokens.len();
        let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

        // embeddings
        let mut x = Tensor::zeros(&[t_new, d]);
        for (t, &tok) in new_tokens.iter().enumerate() {
            let tok = tok as usize;
            if tok >= cfg.vocab_size {
                return Err(ModelError::Config(format!(
                    "token id {tok} outside vocab {}",
                    cfg.vocab_size
                )));
            }
            let row = x.row_mut(t);
            let te = self.tok_emb.value.row(tok);
            let pe = self.pos_emb.value.row(old_len + t);
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }

        let mut tap_out: BTreeMap<HeadTap, Vec<T>> = BTreeMap::new();
        let mut scores: Vec<T> = Vec::new();

        for (l, block) in self.blocks.iter().enumerate() {
            let (h_norm, _) = layer_norm(
                &x,
                block.ln1.gain.value.data(),
                block.ln1.bias.value.data(),
                super::ln_eps(),
            );
            let mut q = Tensor::zeros(&[t_new, d]);
            let mut k = Tensor::zeros(&[t_new, d]);
            let mut v = Tensor::zeros(&[t_new, d]);
            matmul_into(h_norm.data(), block.wq.value.data(), q.data_mut(), t_new, d, d);
            matmul_into(h_norm.data(), block.wk.value.data(), k.data_mut(), t_new, d, d);
            matmul_into(h_norm.data(), block.wv.value.data(), v.data_mut(), t_new, d, d);

            let layer_kv = &mut cache.layers[l];
            layer_kv.k.extend_from_slice(k.data());
            layer_kv.v.extend_from_slice(v.data());

            let mut attn = Tensor::zeros(&[t_new, d]);
            for t in 0..t_new {
                let abs = old_len + t;
                let q_row = q.row(t);
                for head in 0..cfg.n_heads {
                    let col = head * dh;
                    let qh = &q_row[col..col + dh];
                    scores.clear();
                    for s in 0..=abs {
                        let kh = &layer_kv.k[s * d + col..s * d + col + dh];
                        scores.push(dot(qh, kh) * inv_sqrt_dh);
                    }
                    softmax_in_place(&mut scores);
                    let out = &mut attn.row_mut(t)[col..col + dh];
                    for (s, &w) in scores.iter().enumerate() {
                        let vh = &layer_kv.v[s * d + col..s * d + col + dh];
                        axpy(w, vh, out);
                    }
                }
            }

            // taps read the pre-projection head outputs at the last position
            let last = attn.row(t_new - 1);
            for tap in taps.iter().filter(|tp| tp.layer == l) {
                let col = tap.head * dh;
                tap_out.insert(*tap, last[col..col + dh].to_vec());
            }

            let mut proj = Tensor::zeros(&[t_new, d]);
            matmul_into(attn.data(), block.wo.value.data(), proj.data_mut(), t_new, d, d);
            for (xi, pi) in x.data_mut().iter_mut().zip(proj.data()) {
                *xi += *pi;
            }

            let (h2, _) = layer_norm(
                &x,
                block.ln2.gain.value.data(),
                block.ln2.bias.value.data(),
                super::ln_eps(),
            );
            let mut f1 = Tensor::zeros(&[t_new, cfg.d_ff]);
            matmul_into(h2.data(), block.w1.value.data(), f1.data_mut(), t_new, d, cfg.d_ff);
            add_bias_rows(f1.data_mut(), block.b1.value.data());
            for z in f1.data_mut().iter_mut() {
                *z = crate::ops::gelu(*z);
            }
            let mut f2 = Tensor::zeros(&[t_new, d]);
            matmul_into(f1.data(), block.w2.value.data(), f2.data_mut(), t_new, cfg.d_ff, d);
            add_bias_rows(f2.data_mut(), block.b2.value.data());
            for (xi, fi) in x.data_mut().iter_mut().zip(f2.data()) {
                *xi += *fi;
            }
        }

        cache.note_appended(t_new);

        let (xf, _) = layer_norm(
            &x,
            self.ln_f.gain.value.data(),
            self.ln_f.bias.value.data(),
            super::ln_eps(),
        );
        // output head tied to the token embeddings: logits = xf · tok_embᵀ
        let mut logits = Tensor::zeros(&[t_new, cfg.vocab_size]);
        matmul_nt_into(
            xf.data(),
            self.tok_emb.value.data(),
            logits.data_mut(),
            t_new,
            d,
            cfg.vocab_size,
        );
        Ok(ForwardOutput {
            logits,
            taps: tap_out,
        })
    }

    /// Speculative forward: process `peek_tokens` as if appended after the
    /// cache, but leave the cache untouched. Used to score a sufficiency
    /// prompt against a cumulative context without committing it to the
    /// episode's token stream.
    pub fn forward_peek(
        &self,
        peek_tokens: &[TokenId],
        cache: &KvCache<T>,
        taps: &[HeadTap],
    ) -> Result<ForwardOutput<T>, ModelError> {
        let cfg = &self.config;
        if peek_tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let old_len = cache.cached_len();
        let needed = old_len + peek_tokens.len();
        if needed > cfg.max_positions {
            return Err(ModelError::Capacity {
                needed,
                max: cfg.max_positions,
            });
        }
        for tap in taps {
            if tap.layer >= cfg.n_layers || tap.head >= cfg.n_heads {
                return Err(ModelError::TapOutOfRange {
                    layer: tap.layer,
                    head: tap.head,
                });
            }
        }

        let d = cfg.d_model;
        let dh = cfg.d_head();
        let t_new = peek_tokens.len();
        let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

        let mut x = Tensor::zeros(&[t_new, d]);
        for (t, &tok) in peek_tokens.iter().enumerate() {
            let tok = tok as usize;
            if tok >= cfg.vocab_size {
                return Err(ModelError::Config(format!(
                    "token id {tok} outside vocab {}",
                    cfg.vocab_size
                )));
            }
            let row = x.row_mut(t);
            let te = self.tok_emb.value.row(tok);
            let pe = self.pos_emb.value.row(old_len + t);
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }

        let mut tap_out: BTreeMap<HeadTap, Vec<T>> = BTreeMap::new();
        let mut scores: Vec<T> = Vec::new();

        for (l, block) in self.blocks.iter().enumerate() {
            let (h_norm, _) = layer_norm(
                &x,
                block.ln1.gain.value.data(),
                block.ln1.bias.value.data(),
                super::ln_eps(),
            );
            let mut q = Tensor::zeros(&[t_new, d]);
            let mut k = Tensor::zeros(&[t_new, d]);
            let mut v = Tensor::zeros(&[t_new, d]);
            matmul_into(h_norm.data(), block.wq.value.data(), q.data_mut(), t_new, d, d);
            matmul_into(h_norm.data(), block.wk.value.data(), k.data_mut(), t_new, d, d);
            matmul_into(h_norm.data(), block.wv.value.data(), v.data_mut(), t_new, d, d);

            let layer_kv = &cache.layers[l];
            let mut attn = Tensor::zeros(&[t_new, d]);
            for t in 0..t_new {
                let q_row = q.row(t);
                for head in 0..cfg.n_heads {
                    let col = head * dh;
                    let qh = &q_row[col..col + dh];
                    scores.clear();
                    // cached positions first, then local peek positions ≤ t
                    for s in 0..old_len {
                        let kh = &layer_kv.k[s * d + col..s * d + col + dh];
                        scores.push(dot(qh, kh) * inv_sqrt_dh);
                    }
                    for s in 0..=t {
                        let kh = &k.row(s)[col..col + dh];
                        scores.push(dot(qh, kh) * inv_sqrt_dh);
                    }
                    softmax_in_place(&mut scores);
                    let out = &mut attn.row_mut(t)[col..col + dh];
                    for (s, &w) in scores.iter().take(old_len).enumerate() {
                        let vh = &layer_kv.v[s * d + col..s * d + col + dh];
                        axpy(w, vh, out);
                    }
                    for (s, &w) in scores.iter().skip(old_len).enumerate() {
                        let vh = &v.row(s)[col..col + dh];
                        axpy(w, vh, out);
                    }
                }
            }

            let last = attn.row(t_new - 1);
            for tap in taps.iter().filter(|tp| tp.layer == l) {
                let col = tap.head * dh;
                tap_out.insert(*tap, last[col..col + dh].to_vec());
            }

            let mut proj = Tensor::zeros(&[t_new, d]);
            matmul_into(attn.data(), block.wo.value.data(), proj.data_mut(), t_new, d, d);
            for (xi, pi) in x.data_mut().iter_mut().zip(proj.data()) {
                *xi += *pi;
            }

            let (h2, _) = layer_norm(
                &x,
                block.ln2.gain.value.data(),
                block.ln2.bias.value.data(),
                super::ln_eps(),
            );
            let mut f1 = Tensor::zeros(&[t_new, cfg.d_ff]);
            matmul_into(h2.data(), block.w1.value.data(), f1.data_mut(), t_new, d, cfg.d_ff);
            add_bias_rows(f1.data_mut(), block.b1.value.data());
            for z in f1.data_mut().iter_mut() {
                *z = crate::ops::gelu(*z);
            }
            let mut f2 = Tensor::zeros(&[t_new, d]);
            matmul_into(f1.data(), block.w2.value.data(), f2.data_mut(), t_new, cfg.d_ff, d);
            add_bias_rows(f2.data_mut(), block.b2.value.data());
            for (xi, fi) in x.data_mut().iter_mut().zip(f2.data()) {
                *xi += *fi;
            }
        }

        let (xf, _) = layer_norm(
            &x,
            self.ln_f.gain.value.data(),
            self.ln_f.bias.value.data(),
            super::ln_eps(),
        );
        let mut logits = Tensor::zeros(&[t_new, cfg.vocab_size]);
        matmul_nt_into(
            xf.data(),
            self.tok_emb.value.data(),
            logits.data_mut(),
            t_new,
            d,
            cfg.vocab_size,
        );
        Ok(ForwardOutput {
            logits,
            taps: tap_out,
        })
    }

    /// Greedy decoding on top of the cache: forward `prompt_tail`, then emit
    /// argmax tokens until `stop` or `max_new`. The stop token, when
    /// produced, is included in the output.
    pub fn generate(
        &self,
        cache: &mut KvCache<T>,
        prompt_tail: &[TokenId],
        max_new: usize,
        stop: TokenId,
    ) -> Result<Vec<TokenId>, ModelError> {
        if prompt_tail.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut out = Vec::new();
        let mut last = self.forward(prompt_tail, cache, &[])?;
        for _ in 0..max_new {
            let row = last.logits.row(last.logits.rows() - 1);
            let mut best = 0usize;
            let mut best_score = T::neg_infinity();
            for (i, &s) in row.iter().enumerate() {
                if s > best_score {
                    best_score = s;
                    best = i;
                }
            }
            let tok = best as TokenId;
            out.push(tok);
            if tok == stop {
                break;
            }
            last = self.forward(&[tok], cache, &[])?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 32,
            d_ff: 64,
            vocab_size: 64,
            max_positions: 128,
            seed,
        }
    }

    fn all_taps(cfg: &ModelConfig) -> Vec<HeadTap> {
        (0..cfg.n_layers)
            .flat_map(|l| (0..cfg.n_heads).map(move |h| HeadTap { layer: l, head: h }))
            .collect()
    }

    fn random_tokens(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<TokenId> {
        (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect()
    }

    #[test]
    fn split_forward_matches_single_pass() {
        let cfg = tiny_config(3);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tokens = random_tokens(&mut rng, 48, cfg.vocab_size);
        let taps = all_taps(&cfg);

        let mut full_cache = KvCache::new(&cfg);
        let full = model.forward(&tokens, &mut full_cache, &taps).unwrap();

        for split in [1usize, 7, 24, 47] {
            let mut cache = KvCache::new(&cfg);
            model.forward(&tokens[..split], &mut cache, &[]).unwrap();
            let part = model.forward(&tokens[split..], &mut cache, &taps).unwrap();
            assert_eq!(cache.cached_len(), tokens.len());
            let last_full = full.logits.row(tokens.len() - 1);
            let last_part = part.logits.row(tokens.len() - split - 1);
            let max_diff = last_full
                .iter()
                .zip(last_part)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_diff < 1e-4, "split {split}: logits diff {max_diff}");
            for (tap, vec_full) in &full.taps {
                let vec_part = &part.taps[tap];
                let d = vec_full
                    .iter()
                    .zip(vec_part)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                assert!(d < 1e-4, "split {split} tap {tap:?}: diff {d}");
            }
        }
    }

    #[test]
    fn one_token_extends_cache_to_one() {
        let cfg = tiny_config(1);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let mut cache = KvCache::new(&cfg);
        model.forward(&[5], &mut cache, &[]).unwrap();
        assert_eq!(cache.cached_len(), 1);
    }

    #[test]
    fn taps_cover_all_heads_with_head_dim_vectors() {
        let cfg = tiny_config(2);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let mut cache = KvCache::new(&cfg);
        let taps = all_taps(&cfg);
        let out = model.forward(&[1, 2, 3], &mut cache, &taps).unwrap();
        assert_eq!(out.taps.len(), cfg.n_layers * cfg.n_heads);
        assert!(out.taps.values().all(|v| v.len() == cfg.d_head()));
        // requested taps only
        let mut cache2 = KvCache::new(&cfg);
        let one = model
            .forward(&[1, 2, 3], &mut cache2, &[HeadTap { layer: 1, head: 2 }])
            .unwrap();
        assert_eq!(one.taps.len(), 1);
    }

    #[test]
    fn empty_input_and_capacity_errors() {
        let cfg = tiny_config(4);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let mut cache = KvCache::new(&cfg);
        assert!(matches!(
            model.forward(&[], &mut cache, &[]),
            Err(ModelError::EmptyInput)
        ));
        let long = vec![0u32; cfg.max_positions + 1];
        assert!(matches!(
            model.forward(&long, &mut cache, &[]),
            Err(ModelError::Capacity { .. })
        ));
    }

    #[test]
    fn causality_later_tokens_do_not_change_earlier_logits() {
        let cfg = tiny_config(6);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tokens = random_tokens(&mut rng, 20, cfg.vocab_size);
        let mut modified = tokens.clone();
        modified[19] = (modified[19] + 1) % cfg.vocab_size as u32;

        let mut c1 = KvCache::new(&cfg);
        let a = model.forward(&tokens, &mut c1, &[]).unwrap();
        let mut c2 = KvCache::new(&cfg);
        let b = model.forward(&modified, &mut c2, &[]).unwrap();
        for t in 0..19 {
            assert_eq!(a.logits.row(t), b.logits.row(t), "position {t}");
        }
    }

    #[test]
    fn peek_matches_committed_forward_and_leaves_cache_untouched() {
        let cfg = tiny_config(21);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let prefix = random_tokens(&mut rng, 30, cfg.vocab_size);
        let peek = random_tokens(&mut rng, 3, cfg.vocab_size);
        let taps = all_taps(&cfg);

        let mut cache = KvCache::new(&cfg);
        model.forward(&prefix, &mut cache, &[]).unwrap();
        let peeked = model.forward_peek(&peek, &cache, &taps).unwrap();
        assert_eq!(cache.cached_len(), prefix.len());

        // committed forward on a fresh cache gives the same logits and taps
        let mut cache2 = KvCache::new(&cfg);
        model.forward(&prefix, &mut cache2, &[]).unwrap();
        let committed = model.forward(&peek, &mut cache2, &taps).unwrap();
        assert_eq!(peeked.logits.data(), committed.logits.data());
        for (tap, a) in &peeked.taps {
            assert_eq!(a, &committed.taps[tap]);
        }

        // peeking twice is idempotent
        let again = model.forward_peek(&peek, &cache, &[]).unwrap();
        assert_eq!(again.logits.data(), peeked.logits.data());
    }

    #[test]
    fn greedy_generation_is_deterministic_and_matches_plain_forward() {
        let cfg = tiny_config(7);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let prefix = [3u32, 1, 4, 1, 5];
        let tail = [9u32, 2];

        let mut c1 = KvCache::new(&cfg);
        model.forward(&prefix, &mut c1, &[]).unwrap();
        let g1 = model.generate(&mut c1, &tail, 6, 0).unwrap();

        let mut c2 = KvCache::new(&cfg);
        model.forward(&prefix, &mut c2, &[]).unwrap();
        let g2 = model.generate(&mut c2, &tail, 6, 0).unwrap();
        assert_eq!(g1, g2);

        // no-cache oracle: forward(prefix ‖ tail) then decode step by step
        let mut c3 = KvCache::new(&cfg);
        let joint: Vec<u32> = prefix.iter().chain(tail.iter()).copied().collect();
        let out = model.forward(&joint, &mut c3, &[]).unwrap();
        let row = out.logits.row(joint.len() - 1);
        let first = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0 as u32;
        assert_eq!(g1[0], first);

        // degenerate bound
        let mut c4 = KvCache::new(&cfg);
        assert!(model.generate(&mut c4, &tail, 0, 0).unwrap().is_empty());
    }
}
