// Scratch experiment: training speed + learnability. Temporary.

use std::time::Instant;

use dcc_core::corpus::{build_training_corpus, CorpusSpec};
use dcc_core::model::{train, KvCache, Model, ModelConfig, TrainHyper};
use dcc_core::tasks::{self, TaskInstance};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn exact_match(model: &Model<f32>, task: &TaskInstance) -> bool {
    let mut cache = KvCache::new(&model.config);
    let mut prompt = tasks::query_prefix(task);
    prompt.extend_from_slice(&task.context);
    model.forward(&prompt, &mut cache, &[]).unwrap();
    let gen = model
        .generate(&mut cache, &tasks::answer_trigger(task), 4, tasks::ANSWER_END)
        .unwrap();
    let trimmed: Vec<u32> = gen
        .iter()
        .copied()
        .filter(|&t| t != tasks::ANSWER_END)
        .collect();
    trimmed == task.answer
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(400);
    let corpus_n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20000);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(32);
    let n_lo: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(3);
    let n_hi: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(34);
    let multi_frac: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let eval_n: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(30);
    let dense_frac: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(0.45);
    let clip: f64 = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let warmup: usize = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(50);

    let spec = CorpusSpec {
        size: corpus_n,
        min_statements: n_lo,
        max_statements: n_hi,
        multi_hop_fraction: multi_frac,
        dense_fraction: dense_frac,
        ..CorpusSpec::default()
    };
    let corpus = build_training_corpus(&spec, 42).unwrap();
    let mean_len: f64 =
        corpus.iter().map(|c| c.tokens.len() as f64).sum::<f64>() / corpus.len() as f64;
    let mean_targets: f64 = corpus
        .iter()
        .map(|c| c.target_positions.len() as f64)
        .sum::<f64>()
        / corpus.len() as f64;
    println!(
        "corpus {} sequences, mean len {:.1}, mean targets {:.1}",
        corpus.len(),
        mean_len,
        mean_targets
    );

    let mut model: Model<f32> = Model::new(ModelConfig::default()).unwrap();
    let hyper = TrainHyper {
        steps,
        batch_size: batch,
        lr,
        warmup_steps: warmup,
        grad_clip: if clip > 0.0 { Some(clip) } else { None },
        seed: 7,
        ..TrainHyper::default()
    };
    let t0 = Instant::now();
    let losses = train(&mut model, &corpus, &hyper).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "{} steps in {:.1}s ({:.0} ms/step)",
        steps,
        dt,
        1000.0 * dt / steps as f64
    );
    for (i, chunk) in losses.chunks(50).enumerate() {
        let m: f64 = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:4}..{:4}: mean loss {:.4}", i * 50, i * 50 + chunk.len(), m);
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(1234);
    let single: Vec<TaskInstance> = (0..120)
        .map(|i| {
            tasks::gen_single_hop_instance(eval_n * 3, eval_rng.gen(), format!("es-{i}")).unwrap()
        })
        .collect();
    let multi: Vec<TaskInstance> = (0..120)
        .map(|i| {
            tasks::gen_multi_hop_instance(eval_n * 3, 2, eval_rng.gen(), format!("em-{i}"))
                .unwrap()
        })
        .collect();
    let t1 = Instant::now();
    let acc_s =
        single.iter().filter(|t| exact_match(&model, t)).count() as f64 / single.len() as f64;
    let acc_m =
        multi.iter().filter(|t| exact_match(&model, t)).count() as f64 / multi.len() as f64;
    println!(
        "single-hop acc {:.3}  multi-hop acc {:.3}  (eval {:.1}s)",
        acc_s,
        acc_m,
        t1.elapsed().as_secs_f64()
    );
}
