// Micro-world retrieval probe: can the architecture learn content-based
// lookup at all? Temporary diagnostic.

use dcc_core::model::{train, Model, ModelConfig, TrainExample, TrainHyper};
use dcc_core::tasks::{ANSWER_END, KEY_BASE, QUERY_MARK, STMT_SEP, VALUE_BASE};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(300);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let n_keys: u32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5);
    let n_stmts: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let corpus: Vec<TrainExample> = (0..20000)
        .map(|_| {
            // n_stmts statements with distinct keys, then ? k v ;
            let mut keys: Vec<u32> = (0..n_keys).map(|i| KEY_BASE + i).collect();
            for i in (1..keys.len()).rev() {
                keys.swap(i, rng.gen_range(0..=i));
            }
            let mut tokens = Vec::new();
            let mut vals = Vec::new();
            for s in 0..n_stmts {
                let v = VALUE_BASE + rng.gen_range(0..n_keys);
                tokens.extend_from_slice(&[keys[s], v, STMT_SEP]);
                vals.push(v);
            }
            let qi = rng.gen_range(0..n_stmts);
            tokens.push(QUERY_MARK);
            tokens.push(keys[qi]);
            let ans_pos = tokens.len();
            tokens.push(vals[qi]);
            tokens.push(ANSWER_END);
            TrainExample {
                tokens,
                target_positions: vec![ans_pos],
            }
        })
        .collect();

    let mut model: Model<f32> = Model::new(ModelConfig::default()).unwrap();
    let hyper = TrainHyper {
        steps,
        batch_size: 32,
        lr,
        warmup_steps: 50,
        grad_clip: Some(5.0),
        seed: 7,
        ..TrainHyper::default()
    };
    let losses = train(&mut model, &corpus, &hyper).unwrap();
    for (i, chunk) in losses.chunks(25).enumerate() {
        let m: f64 = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:4}..{:4}: loss {:.4}", i * 25, i * 25 + chunk.len(), m);
    }
    println!("chance level: ln({n_keys}) = {:.4}", (n_keys as f64).ln());
}
