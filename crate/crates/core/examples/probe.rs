use ovrun_core::corpus::{self, AccessForm, GenConfig, Level};
use ovrun_core::encoding::Encoder;
use ovrun_core::metrics;
use ovrun_core::model::{ForwardOptions, ModelParams};
use ovrun_core::training::{self, TrainConfig};

fn arg<T: std::str::FromStr>(name: &str, default: T) -> T {
    let args: Vec<String> = std::env::args().collect();
    args.iter().position(|a| a == name)
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let epochs: usize = arg("--epochs", 100);
    let batch: usize = arg("--batch", 32);
    let clip: f64 = arg("--clip", 0.0);
    let lr: f64 = arg("--lr", 1e-2);
    let chunk: usize = arg("--eval-every", 25);
    let mask = std::env::args().any(|a| a == "--mask");
    let opts = ForwardOptions { mask_padding: mask, ..ForwardOptions::default() };
    println!("epochs={epochs} batch={batch} clip={clip} lr={lr} mask={mask}");

    let train_corpus = corpus::generate_corpus(&GenConfig { level: Level::L4, num_samples: 10_000, seed: 42, ..GenConfig::default() }).unwrap();
    let encoder = Encoder::fit(&train_corpus, 30).unwrap();
    let data = encoder.encode_corpus(&train_corpus).unwrap();

    let mut tests = Vec::new();
    for (i, level) in Level::ALL.iter().enumerate() {
        let c = corpus::generate_corpus(&GenConfig { level: *level, num_samples: 1000, seed: 43 + i as u64, ..GenConfig::default() }).unwrap();
        let e = encoder.encode_corpus(&c).unwrap();
        tests.push((level, c, e));
    }

    let mut params = ModelParams::init(encoder.vocab.len(), 32, 30, 3, 42);
    let t1 = std::time::Instant::now();
    for round in 0..epochs.div_ceil(chunk) {
        let n = chunk.min(epochs - round * chunk);
        let cfg = TrainConfig { epochs: n, seed: 42 + round as u64 * 1000, mask_padding: mask, batch_size: batch, learning_rate: lr,
            grad_clip: (clip > 0.0).then_some(clip), ..TrainConfig::default() };
        let out = training::train(&data, params.clone(), &cfg).unwrap();
        params = out.snapshots.iter().max_by_key(|s| s.epoch).unwrap().params.clone();
        let last = out.history.last().unwrap();
        print!("ep {:4} train {:.3}/{:.4} |", (round * chunk) + n, last.train_accuracy, last.train_loss);
        for (level, _, enc) in &tests {
            let rep = metrics::evaluate(&[&params], enc, Some(**level), opts).unwrap();
            print!(" L{} {:.3}/{:.3} |", level.as_u8(), rep.accuracy, rep.auc);
        }
        // strcpy-only accuracy on L2
        let (_, c2, e2) = &tests[1];
        let mut sc = (0, 0);
        for (s, e) in c2.iter().zip(e2) {
            if s.meta.access_form != AccessForm::Strcpy { continue; }
            sc.1 += 1;
            if ovrun_core::model::forward_with(e, &params, opts).unwrap().prediction() == s.label { sc.0 += 1; }
        }
        println!(" strcpy {:.3} ({:.0}s)", sc.0 as f64 / sc.1 as f64, t1.elapsed().as_secs_f64());
    }
}
