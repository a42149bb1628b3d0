// Scratch profiling of forward/backward phase costs. Temporary.

use std::time::Instant;

use dcc_core::model::{KvCache, Model, ModelConfig, TrainExample};
use dcc_core::ops::matmul_into;
use dcc_core::tensor::Tensor;

fn main() {
    let cfg = ModelConfig::default();
    let model: Model<f32> = Model::new(cfg.clone()).unwrap();
    let s = 61usize;
    let tokens: Vec<u32> = (0..s as u32).map(|i| (i * 7) % 488).collect();

    // raw matmul throughput: [61x128]·[128x128]
    let a = Tensor::<f32>::from_vec(&[s, 128], vec![0.5; s * 128]).unwrap();
    let b = Tensor::<f32>::from_vec(&[128, 128], vec![0.25; 128 * 128]).unwrap();
    let mut c = vec![0f32; s * 128];
    let n = 2000;
    let t0 = Instant::now();
    for _ in 0..n {
        c.iter_mut().for_each(|x| *x = 0.0);
        matmul_into(a.data(), b.data(), &mut c, s, 128, 128);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gflops = (2.0 * s as f64 * 128.0 * 128.0 * n as f64) / dt / 1e9;
    println!("matmul_into [61x128]x[128x128]: {gflops:.2} GFLOP/s single-thread");

    // full inference forward
    let t0 = Instant::now();
    let reps = 200;
    for _ in 0..reps {
        let mut cache = KvCache::new(&cfg);
        model.forward(&tokens, &mut cache, &[]).unwrap();
    }
    println!(
        "inference forward {s} tokens: {:.2} ms",
        1000.0 * t0.elapsed().as_secs_f64() / reps as f64
    );

    // training forward+backward via a 1-step, 1-item train call is awkward;
    // time item-level speed through the public train() instead
    let ex = TrainExample {
        tokens: tokens.clone(),
        answer_start: s - 2,
    };
    let corpus = vec![ex];
    let hyper = dcc_core::model::TrainHyper {
        steps: 100,
        batch_size: 1,
        lr: 0.0,
        warmup_steps: 1,
        grad_clip: None,
        seed: 0,
        ..Default::default()
    };
    let mut m2: Model<f32> = Model::new(cfg).unwrap();
    let t0 = Instant::now();
    dcc_core::model::train(&mut m2, &corpus, &hyper).unwrap();
    println!(
        "train step (batch=1, S={s}): {:.2} ms",
        1000.0 * t0.elapsed().as_secs_f64() / 100.0
    );

    let corpus16: Vec<TrainExample> = (0..16)
        .map(|_| TrainExample {
            tokens: tokens.clone(),
            answer_start: s - 2,
        })
        .collect();
    let hyper16 = dcc_core::model::TrainHyper {
        steps: 20,
        batch_size: 16,
        lr: 0.0,
        warmup_steps: 1,
        grad_clip: None,
        seed: 0,
        ..Default::default()
    };
    let mut m3: Model<f32> = Model::new(ModelConfig::default()).unwrap();
    let t0 = Instant::now();
    dcc_core::model::train(&mut m3, &corpus16, &hyper16).unwrap();
    println!(
        "train step (batch=16, S={s}): {:.2} ms",
        1000.0 * t0.elapsed().as_secs_f64() / 20.0
    );
}

// appended: batch scaling probe invoked via env var
