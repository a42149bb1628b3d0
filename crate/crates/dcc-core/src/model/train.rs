//! Training: full-sequence forward with stashed activations and a
//! hand-derived backward pass. Loss is next-token cross entropy restricted to
//! answer positions; context and query positions are masked out.
//!
//! Batch items are processed in a fixed number of groups so gradients can be
//! computed in parallel yet merge in a fixed order; results do not depend on
//! thread count.

use rayon::prelude::*;

use crate::ops::{
    dot, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul_into, matmul_nt_into,
    matmul_tn_into, softmax_backward_row, softmax_in_place, LayerNormStash,
};
use crate::rng;
use crate::tasks::TokenId;
use crate::tensor::{Scalar, Tensor};

use super::forward::add_bias_rows;
use super::{ln_eps, Model, ModelError};

/// One training sequence. `target_positions` lists the indices of tokens
/// whose prediction contributes to the loss (answer tokens); every other
/// position is masked out.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub tokens: Vec<TokenId>,
    pub target_positions: Vec<usize>,
}

impl TrainExample {
    /// Convenience form: loss on predicting `tokens[answer_start..]`.
    pub fn from_answer_span(tokens: Vec<TokenId>, answer_start: usize) -> Self {
        let target_positions = (answer_start..tokens.len()).collect();
        TrainExample {
            tokens,
            target_positions,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            steps: 1200,
            batch_size: 16,
            lr: 1.5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 50,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

/// Number of sequential gradient-accumulation groups per step. Fixed (not
/// tied to the thread count) so results are reproducible on any machine.
const GRAD_GROUPS: usize = 4;

struct LnGrads<T> {
    gain: Tensor<T>,
    bias: Tensor<T>,
}

struct BlockGrads<T> {
    ln1: LnGrads<T>,
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wo: Tensor<T>,
    ln2: LnGrads<T>,
    w1: Tensor<T>,
    b1: Tensor<T>,
    w2: Tensor<T>,
    b2: Tensor<T>,
}

struct Grads<T> {
    tok_emb: Tensor<T>,
    pos_emb: Tensor<T>,
    blocks: Vec<BlockGrads<T>>,
    ln_f: LnGrads<T>,
}

impl<T: Scalar> Grads<T> {
    fn zeros_like(model: &Model<T>) -> Self {
        let z = |p: &crate::optim::Parameter<T>| Tensor::zeros(p.value.shape());
        Grads {
            tok_emb: z(&model.tok_emb),
            pos_emb: z(&model.pos_emb),
            blocks: model
                .blocks
                .iter()
                .map(|b| BlockGrads {
                    ln1: LnGrads {
                        gain: z(&b.ln1.gain),
                        bias: z(&b.ln1.bias),
                    },
                    wq: z(&b.wq),
                    wk: z(&b.wk),
                    wv: z(&b.wv),
                    wo: z(&b.wo),
                    ln2: LnGrads {
                        gain: z(&b.ln2.gain),
                        bias: z(&b.ln2.bias),
                    },
                    w1: z(&b.w1),
                    b1: z(&b.b1),
                    w2: z(&b.w2),
                    b2: z(&b.b2),
                })
                .collect(),
            ln_f: LnGrads {
                gain: z(&model.ln_f.gain),
                bias: z(&model.ln_f.bias),
            },
        }
    }

    /// Declaration order, matching `Model::params_mut`.
    fn flat(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            out.extend([
                &b.ln1.gain,
                &b.ln1.bias,
                &b.wq,
                &b.wk,
                &b.wv,
                &b.wo,
                &b.ln2.gain,
                &b.ln2.bias,
                &b.w1,
                &b.b1,
                &b.w2,
                &b.b2,
            ]);
        }
        out.extend([&self.ln_f.gain, &self.ln_f.bias]);
        out
    }
}

struct LayerStash<T> {
    ln1: LayerNormStash<T>,
    h: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Per-head attention probabilities; row t holds entries 0..=t.
    probs: Vec<Tensor<T>>,
    attn: Tensor<T>,
    ln2: LayerNormStash<T>,
    h2: Tensor<T>,
    f1: Tensor<T>,
    act: Tensor<T>,
}

/// Forward pass over one training sequence, stashing what backward needs.
/// Returns the stashes, the final normalized hidden states, and its stash.
fn train_forward<T: Scalar>(
    model: &Model<T>,
    tokens: &[TokenId],
) -> (Vec<LayerStash<T>>, Tensor<T>, LayerNormStash<T>) {
    let cfg = &model.config;
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let s = tokens.len();
    let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

    let mut x = Tensor::zeros(&[s, d]);
    for (t, &tok) in tokens.iter().enumerate() {
        let row = x.row_mut(t);
        let te = model.tok_emb.value.row(tok as usize);
        let pe = model.pos_emb.value.row(t);
        for j in 0..d {
            row[j] = te[j] + pe[j];
        }
    }

    let mut stashes = Vec::with_capacity(cfg.n_layers);
    for block in &model.blocks {
        let (h, ln1) = layer_norm(
            &x,
            block.ln1.gain.value.data(),
            block.ln1.bias.value.data(),
            ln_eps(),
        );
        let mut q = Tensor::zeros(&[s, d]);
        let mut k = Tensor::zeros(&[s, d]);
        let mut v = Tensor::zeros(&[s, d]);
        matmul_into(h.data(), block.wq.value.data(), q.data_mut(), s, d, d);
        matmul_into(h.data(), block.wk.value.data(), k.data_mut(), s, d, d);
        matmul_into(h.data(), block.wv.value.data(), v.data_mut(), s, d, d);

        let mut probs: Vec<Tensor<T>> = (0..cfg.n_heads).map(|_| Tensor::zeros(&[s, s])).collect();
        let mut attn = Tensor::zeros(&[s, d]);
        for head in 0..cfg.n_heads {
            let col = head * dh;
            let p = &mut probs[head];
            for t in 0..s {
                let qh = &q.row(t)[col..col + dh];
                let row = &mut p.row_mut(t)[..=t];
                for (sj, cell) in row.iter_mut().enumerate() {
                    *cell = dot(qh, &k.row(sj)[col..col + dh]) * inv_sqrt_dh;
                }
                softmax_in_place(row);
            }
            for t in 0..s {
                // borrow dance: read probabilities row, write attn row
                for sj in 0..=t {
                    let w = p.row(t)[sj];
                    let vh = &v.row(sj)[col..col + dh];
                    let out = &mut attn.row_mut(t)[col..col + dh];
                    for (o, &vv) in out.iter_mut().zip(vh) {
                        *o += w * vv;
                    }
                }
            }
        }

        let mut proj = Tensor::zeros(&[s, d]);
        matmul_into(attn.data(), block.wo.value.data(), proj.data_mut(), s, d, d);
        for (xi, pi) in x.data_mut().iter_mut().zip(proj.data()) {
            *xi += *pi;
        }

        let (h2, ln2) = layer_norm(
            &x,
            block.ln2.gain.value.data(),
            block.ln2.bias.value.data(),
            ln_eps(),
        );
        let mut f1 = Tensor::zeros(&[s, cfg.d_ff]);
        matmul_into(h2.data(), block.w1.value.data(), f1.data_mut(), s, d, cfg.d_ff);
        add_bias_rows(f1.data_mut(), block.b1.value.data());
        let mut act = f1.clone();
        for z in act.data_mut().iter_mut() {
            *z = gelu(*z);
        }
        let mut f2 = Tensor::zeros(&[s, d]);
        matmul_into(act.data(), block.w2.value.data(), f2.data_mut(), s, cfg.d_ff, d);
        add_bias_rows(f2.data_mut(), block.b2.value.data());
        for (xi, fi) in x.data_mut().iter_mut().zip(f2.data()) {
            *xi += *fi;
        }

        stashes.push(LayerStash {
            ln1,
            h,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            h2,
            f1,
            act,
        });
    }

    let (xf, lnf) = layer_norm(
        &x,
        model.ln_f.gain.value.data(),
        model.ln_f.bias.value.data(),
        ln_eps(),
    );
    (stashes, xf, lnf)
}

/// Logits over the full sequence via the training-path forward. Used by the
/// equivalence test against the cached inference path.
#[cfg(test)]
fn train_path_logits<T: Scalar>(model: &Model<T>, tokens: &[TokenId]) -> Tensor<T> {
    let cfg = &model.config;
    let (_, xf, _) = train_forward(model, tokens);
    let s = tokens.len();
    let mut logits = Tensor::zeros(&[s, cfg.vocab_size]);
    matmul_nt_into(
        xf.data(),
        model.tok_emb.value.data(),
        logits.data_mut(),
        s,
        cfg.d_model,
        cfg.vocab_size,
    );
    logits
}

/// Forward + backward for one example. Gradients (scaled by `inv_scale`)
/// accumulate into `g`; returns the unscaled sum of per-position losses.
fn item_grads<T: Scalar>(
    model: &Model<T>,
    ex: &TrainExample,
    inv_scale: T,
    g: &mut Grads<T>,
) -> f64 {
    let cfg = &model.config;
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let s = ex.tokens.len();
    let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

    let (stashes, xf, lnf) = train_forward(model, &ex.tokens);

    // row r predicts tokens[r + 1]; one row per target position
    let rows: Vec<usize> = ex.target_positions.iter().map(|&q| q - 1).collect();
    let n_rows = rows.len();
    let mut xf_rows = Tensor::zeros(&[n_rows, d]);
    for (i, &r) in rows.iter().enumerate() {
        xf_rows.row_mut(i).copy_from_slice(xf.row(r));
    }
    let mut logits = Tensor::zeros(&[n_rows, cfg.vocab_size]);
    matmul_nt_into(
        xf_rows.data(),
        model.tok_emb.value.data(),
        logits.data_mut(),
        n_rows,
        d,
        cfg.vocab_size,
    );

    let mut loss_sum = 0.0f64;
    let mut dlogits = logits;
    for (i, &r) in rows.iter().enumerate() {
        let target = ex.tokens[r + 1] as usize;
        let lrow = dlogits.row_mut(i);
        let max = lrow.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &v in lrow.iter() {
            sum += (v - max).exp();
        }
        loss_sum += (sum.ln() + max - lrow[target]).to_f64();
        softmax_in_place(lrow);
        lrow[target] -= T::one();
        for v in lrow.iter_mut() {
            *v *= inv_scale;
        }
    }

    // tied output head and final layer norm:
    // logits = xf_rows · Eᵀ  ⇒  dE += dlogitsᵀ · xf_rows, dxf = dlogits · E
    matmul_tn_into(
        dlogits.data(),
        xf_rows.data(),
        g.tok_emb.data_mut(),
        n_rows,
        cfg.vocab_size,
        d,
    );
    let mut dxf = Tensor::zeros(&[s, d]);
    {
        let mut dxf_rows = Tensor::zeros(&[n_rows, d]);
        matmul_into(
            dlogits.data(),
            model.tok_emb.value.data(),
            dxf_rows.data_mut(),
            n_rows,
            cfg.vocab_size,
            d,
        );
        for (i, &r) in rows.iter().enumerate() {
            dxf.row_mut(r).copy_from_slice(dxf_rows.row(i));
        }
    }
    let mut dx = layer_norm_backward(
        &lnf,
        model.ln_f.gain.value.data(),
        &dxf,
        g.ln_f.gain.data_mut(),
        g.ln_f.bias.data_mut(),
    );

    for (l, block) in model.blocks.iter().enumerate().rev() {
        let st = &stashes[l];
        let bg = &mut g.blocks[l];

        // feed-forward: x_out = x_mid + (gelu(h2·W1 + b1))·W2 + b2
        let df2 = &dx;
        matmul_tn_into(
            st.act.data(),
            df2.data(),
            bg.w2.data_mut(),
            s,
            cfg.d_ff,
            d,
        );
        for t in 0..s {
            for (bj, &dj) in bg.b2.data_mut().iter_mut().zip(df2.row(t)) {
                *bj += dj;
            }
        }
        let mut da = Tensor::zeros(&[s, cfg.d_ff]);
        matmul_nt_into(df2.data(), block.w2.value.data(), da.data_mut(), s, d, cfg.d_ff);
        let mut df1 = da;
        for (z, &pre) in df1.data_mut().iter_mut().zip(st.f1.data()) {
            *z *= gelu_grad(pre);
        }
        matmul_tn_into(st.h2.data(), df1.data(), bg.w1.data_mut(), s, d, cfg.d_ff);
        for t in 0..s {
            for (bj, &dj) in bg.b1.data_mut().iter_mut().zip(df1.row(t)) {
                *bj += dj;
            }
        }
        let mut dh2 = Tensor::zeros(&[s, d]);
        matmul_nt_into(df1.data(), block.w1.value.data(), dh2.data_mut(), s, cfg.d_ff, d);
        let dx_ln2 = layer_norm_backward(
            &st.ln2,
            block.ln2.gain.value.data(),
            &dh2,
            bg.ln2.gain.data_mut(),
            bg.ln2.bias.data_mut(),
        );
        // dx_mid = dx (residual) + LN2 path
        for (xi, li) in dx.data_mut().iter_mut().zip(dx_ln2.data()) {
            *xi += *li;
        }

        // attention: x_mid = x_in + attn·Wo
        let do_ = &dx;
        matmul_tn_into(st.attn.data(), do_.data(), bg.wo.data_mut(), s, d, d);
        let mut dattn = Tensor::zeros(&[s, d]);
        matmul_nt_into(do_.data(), block.wo.value.data(), dattn.data_mut(), s, d, d);

        let mut dq = Tensor::zeros(&[s, d]);
        let mut dk = Tensor::zeros(&[s, d]);
        let mut dv = Tensor::zeros(&[s, d]);
        let mut dp_row: Vec<T> = vec![T::zero(); s];
        for head in 0..cfg.n_heads {
            let col = head * dh;
            let p = &st.probs[head];
            for t in 0..s {
                let doh = &dattn.row(t)[col..col + dh];
                let prow = &p.row(t)[..=t];
                // dV[j] += P[t,j]·dOh; dP[t,j] = ⟨dOh, V[j]⟩
                for sj in 0..=t {
                    let vh = &st.v.row(sj)[col..col + dh];
                    dp_row[sj] = dot(doh, vh);
                    let dvh = &mut dv.row_mut(sj)[col..col + dh];
                    let w = prow[sj];
                    for (dvi, &di) in dvh.iter_mut().zip(doh) {
                        *dvi += w * di;
                    }
                }
                softmax_backward_row(prow, &mut dp_row[..=t]);
                // scores were scaled by 1/sqrt(dh)
                let qh: Vec<T> = st.q.row(t)[col..col + dh].to_vec();
                for sj in 0..=t {
                    let ds = dp_row[sj] * inv_sqrt_dh;
                    if ds == T::zero() {
                        continue;
                    }
                    let kh = &st.k.row(sj)[col..col + dh];
                    let dqh = &mut dq.row_mut(t)[col..col + dh];
                    for (dqi, &ki) in dqh.iter_mut().zip(kh) {
                        *dqi += ds * ki;
                    }
                    let dkh = &mut dk.row_mut(sj)[col..col + dh];
                    for (dki, &qi) in dkh.iter_mut().zip(&qh) {
                        *dki += ds * qi;
                    }
                }
            }
        }

        matmul_tn_into(st.h.data(), dq.data(), bg.wq.data_mut(), s, d, d);
        matmul_tn_into(st.h.data(), dk.data(), bg.wk.data_mut(), s, d, d);
        matmul_tn_into(st.h.data(), dv.data(), bg.wv.data_mut(), s, d, d);
        let mut dh_pre = Tensor::zeros(&[s, d]);
        matmul_nt_into(dq.data(), block.wq.value.data(), dh_pre.data_mut(), s, d, d);
        matmul_nt_into(dk.data(), block.wk.value.data(), dh_pre.data_mut(), s, d, d);
        matmul_nt_into(dv.data(), block.wv.value.data(), dh_pre.data_mut(), s, d, d);
        let dx_ln1 = layer_norm_backward(
            &st.ln1,
            block.ln1.gain.value.data(),
            &dh_pre,
            bg.ln1.gain.data_mut(),
            bg.ln1.bias.data_mut(),
        );
        for (xi, li) in dx.data_mut().iter_mut().zip(dx_ln1.data()) {
            *xi += *li;
        }
    }

    // embeddings
    for (t, &tok) in ex.tokens.iter().enumerate() {
        let dr = dx.row(t);
        let te = g.tok_emb.row_mut(tok as usize);
        for (a, &b) in te.iter_mut().zip(dr) {
            *a += b;
        }
        let pe = g.pos_emb.row_mut(t);
        for (a, &b) in pe.iter_mut().zip(dr) {
            *a += b;
        }
    }

    loss_sum
}

fn validate_corpus<T: Scalar>(model: &Model<T>, corpus: &[TrainExample]) -> Result<(), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::Config("training corpus is empty".into()));
    }
    for ex in corpus {
        if ex.tokens.len() > model.config.max_positions {
            return Err(ModelError::Capacity {
                needed: ex.tokens.len(),
                max: model.config.max_positions,
            });
        }
        if ex.target_positions.is_empty()
            || ex
                .target_positions
                .iter()
                .any(|&q| q == 0 || q >= ex.tokens.len())
        {
            return Err(ModelError::Config(format!(
                "target positions {:?} out of range for sequence of {}",
                ex.target_positions,
                ex.tokens.len()
            )));
        }
        if let Some(&t) = ex.tokens.iter().find(|&&t| t as usize >= model.config.vocab_size) {
            return Err(ModelError::Config(format!(
                "token {t} outside vocab {}",
                model.config.vocab_size
            )));
        }
    }
    Ok(())
}

/// Train in place; returns the per-step mean loss curve.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    corpus: &[TrainExample],
    hyper: &TrainHyper,
) -> Result<Vec<f64>, ModelError> {
    use rand::Rng;
    validate_corpus(model, corpus)?;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut sampler = rng::substream(hyper.seed, "train-batches");
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(hyper.steps);

    for step in 0..hyper.steps {
        let mut batch = Vec::with_capacity(hyper.batch_size);
        for _ in 0..hyper.batch_size {
            if cursor >= order.len() {
                for i in (1..order.len()).rev() {
                    order.swap(i, sampler.gen_range(0..=i));
                }
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let total_positions: usize = batch
            .iter()
            .map(|&i| corpus[i].target_positions.len())
            .sum();
        let inv = T::from_f64(1.0 / total_positions as f64);

        let group_size = batch.len().div_ceil(GRAD_GROUPS);
        let partials: Vec<(Grads<T>, f64)> = batch
            .par_chunks(group_size)
            .map(|idxs| {
                let mut g = Grads::zeros_like(model);
                let mut loss = 0.0;
                for &i in idxs {
                    loss += item_grads(model, &corpus[i], inv, &mut g);
                }
                (g, loss)
            })
            .collect();

        let mut loss_step = 0.0;
        {
            let mut params = model.params_mut();
            for (g, l) in &partials {
                loss_step += l;
                for (p, gt) in params.iter_mut().zip(g.flat()) {
                    for (a, &b) in p.grad.data_mut().iter_mut().zip(gt.data()) {
                        *a += b;
                    }
                }
            }
        }
        loss_step /= total_positions as f64;
        assert!(loss_step.is_finite(), "loss diverged at step {step}");

        if let Some(clip) = hyper.grad_clip {
            let mut sq = 0.0f64;
            for p in model.params() {
                for &gv in p.grad.data() {
                    let x = gv.to_f64();
                    sq += x * x;
                }
            }
            let norm = sq.sqrt();
            if std::env::var("DCC_DEBUG_GRAD").is_ok() && step % 50 == 0 {
                eprintln!("step {step}: grad norm {norm:.3}");
            }
            if norm > clip {
                let scale = T::from_f64(clip / norm);
                for p in model.params_mut() {
                    for gv in p.grad.data_mut() {
                        *gv *= scale;
                    }
                }
            }
        }

        let warm = if hyper.warmup_steps > 0 {
            ((step + 1) as f64 / hyper.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let adam = crate::optim::AdamHyper {
            lr: T::from_f64(hyper.lr * warm),
            beta1: T::from_f64(hyper.beta1),
            beta2: T::from_f64(hyper.beta2),
            eps: T::from_f64(hyper.eps),
        };
        for p in model.params_mut() {
            crate::optim::adam_step(p, &adam);
        }
        losses.push(loss_step);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KvCache, ModelConfig};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            vocab_size: 64,
            max_positions: 64,
            seed,
        }
    }

    fn toy_corpus(n: usize, len: usize, vocab: u32, seed: u64) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                TrainExample::from_answer_span(
                    (0..len).map(|_| rng.gen_range(0..vocab)).collect(),
                    len - 3,
                )
            })
            .collect()
    }

    #[test]
    fn train_path_matches_inference_path() {
        let cfg = tiny_config(11);
        let model: Model<f32> = Model::new(cfg.clone()).unwrap();
        let tokens: Vec<u32> = vec![5, 9, 13, 2, 40, 7, 7, 1];
        let logits_train = train_path_logits(&model, &tokens);
        let mut cache = KvCache::new(&cfg);
        let out = model.forward(&tokens, &mut cache, &[]).unwrap();
        let diff = logits_train.max_abs_diff(&out.logits);
        assert!(diff < 1e-4, "paths differ by {diff}");
    }

    #[test]
    fn loss_decreases_on_learnable_corpus() {
        let cfg = tiny_config(12);
        let mut model: Model<f32> = Model::new(cfg).unwrap();
        let corpus = toy_corpus(8, 12, 64, 3);
        let hyper = TrainHyper {
            steps: 30,
            batch_size: 8,
            lr: 3e-3,
            warmup_steps: 5,
            seed: 3,
            ..TrainHyper::default()
        };
        let losses = train(&mut model, &corpus, &hyper).unwrap();
        assert_eq!(losses.len(), 30);
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn memorizes_ten_examples() {
        let cfg = tiny_config(13);
        let mut model: Model<f32> = Model::new(cfg).unwrap();
        let corpus = toy_corpus(10, 10, 64, 4);
        let hyper = TrainHyper {
            steps: 400,
            batch_size: 10,
            lr: 3e-3,
            warmup_steps: 20,
            seed: 4,
            ..TrainHyper::default()
        };
        let losses = train(&mut model, &corpus, &hyper).unwrap();
        let final_loss = *losses.last().unwrap();
        assert!(final_loss < 0.05, "final loss {final_loss}");
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config(14);
        let corpus = toy_corpus(6, 10, 64, 5);
        let hyper = TrainHyper {
            steps: 5,
            batch_size: 4,
            seed: 6,
            ..TrainHyper::default()
        };
        let mut m1: Model<f32> = Model::new(cfg.clone()).unwrap();
        let l1 = train(&mut m1, &corpus, &hyper).unwrap();
        let mut m2: Model<f32> = Model::new(cfg).unwrap();
        let l2 = train(&mut m2, &corpus, &hyper).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(m1.tok_emb.value, m2.tok_emb.value);
    }

    #[test]
    fn corpus_validation() {
        let cfg = tiny_config(15);
        let mut model: Model<f32> = Model::new(cfg).unwrap();
        let hyper = TrainHyper {
            steps: 1,
            batch_size: 1,
            ..TrainHyper::default()
        };
        assert!(train(&mut model, &[], &hyper).is_err());
        let bad = vec![TrainExample::from_answer_span(vec![1, 2, 3], 3)];
        assert!(train(&mut model, &bad, &hyper).is_err());
        let oob = vec![TrainExample::from_answer_span(vec![1, 200, 3], 1)];
        assert!(train(&mut model, &oob, &hyper).is_err());
        let zero = vec![TrainExample {
            tokens: vec![1, 2, 3],
            target_positions: vec![0],
        }];
        assert!(train(&mut model, &zero, &hyper).is_err());
    }

    /// End-to-end finite-difference check of the whole backward pass on a
    /// tiny f64 model: sampled coordinates of every parameter tensor.
    #[test]
    fn whole_model_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 12,
            vocab_size: 20,
            max_positions: 16,
            seed: 17,
        };
        let mut model: Model<f64> = Model::new(cfg).unwrap();
        let ex = TrainExample::from_answer_span(vec![3, 7, 1, 19, 4, 4, 11, 2, 9, 6], 7);
        let mut grads = Grads::zeros_like(&model);
        item_grads(&model, &ex, 1.0, &mut grads);

        let n_params = model.params().len();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eps = 1e-4;
        for pi in 0..n_params {
            let numel = model.params()[pi].value.numel();
            // a few random coordinates per tensor
            for _ in 0..3.min(numel) {
                let ci = rng.gen_range(0..numel);
                let orig = model.params()[pi].value.data()[ci];

                model.params_mut()[pi].value.data_mut()[ci] = orig + eps;
                let mut scratch = Grads::zeros_like(&model);
                let up = item_grads(&model, &ex, 1.0, &mut scratch);

                model.params_mut()[pi].value.data_mut()[ci] = orig - eps;
                let mut scratch = Grads::zeros_like(&model);
                let down = item_grads(&model, &ex, 1.0, &mut scratch);

                model.params_mut()[pi].value.data_mut()[ci] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.flat()[pi].data()[ci];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "param {pi} coord {ci}: fd={fd} analytic={an}"
                );
            }
        }
    }
}

