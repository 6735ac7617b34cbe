use ovrun_core::corpus::{self, AccessForm, GenConfig, Level};
use ovrun_core::encoding::Encoder;
use ovrun_core::model::{forward_with, ForwardOptions, ModelParams};
use ovrun_core::training::{self, TrainConfig};

fn arg<T: std::str::FromStr>(name: &str, default: T) -> T {
    let args: Vec<String> = std::env::args().collect();
    args.iter().position(|a| a == name)
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let seeds: u64 = arg("--seeds", 6);
    let form = if std::env::args().any(|a| a == "--direct") { AccessForm::Direct } else { AccessForm::Strcpy };
    let level = if std::env::args().any(|a| a == "--l3") { Level::L3 } else { Level::L2 };
    let epochs: usize = arg("--epochs", 100);
    let scale: f64 = arg("--scale", 1.0);
    let ls: usize = arg("--ls", 0);
    let clip: f64 = arg("--clip", 0.0);

    let big = corpus::generate_corpus(&GenConfig { level, num_samples: 30_000, seed: 7, ..GenConfig::default() }).unwrap();
    let train: Vec<_> = big.iter().filter(|s| s.meta.access_form == form && (!std::env::args().any(|a| a == "--ind") || s.meta.used_indirect_alloc)).take(8000).cloned().collect();
    let test_src = corpus::generate_corpus(&GenConfig { level, num_samples: 8000, seed: 1007, ..GenConfig::default() }).unwrap();
    let test: Vec<_> = test_src.iter().filter(|s| s.meta.access_form == form && (!std::env::args().any(|a| a == "--ind") || s.meta.used_indirect_alloc)).take(1000).cloned().collect();

    // Which test (dest,src) pairs were seen in training?
    let seen: std::collections::HashSet<(i64, i64)> = train.iter().map(|s| (s.meta.dest_size, s.meta.access_size)).collect();
    let unseen_count = test.iter().filter(|s| !seen.contains(&(s.meta.dest_size, s.meta.access_size))).count();
    println!("strcpy: train {} test {} (unseen pairs in test: {})", train.len(), test.len(), unseen_count);
    println!("epochs={epochs} scale={scale} ls={ls} clip={clip}");

    let encoder = Encoder::fit(&train, 30).unwrap();
    let data = encoder.encode_corpus(&train).unwrap();
    let test_enc = encoder.encode_corpus(&test).unwrap();

    for seed in 0..seeds {
        let mut params = ModelParams::init(encoder.vocab.len(), 32, 30, 3, seed);
        if scale != 1.0 {
            params.e_val *= scale;
            params.e_addr *= scale;
            params.w_out *= scale;
            params.b_out *= scale;
        }
        let cfg = TrainConfig { epochs, linear_start_epochs: ls, seed,
            grad_clip: (clip > 0.0).then_some(clip), ..TrainConfig::default() };
        let out = training::train(&data, params, &cfg).unwrap();
        let best = &out.snapshots[0];
        let opts = ForwardOptions::default();
        let mut seen_ok = (0usize, 0usize);
        let mut unseen_ok = (0usize, 0usize);
        for (s, e) in test.iter().zip(&test_enc) {
            let ok = forward_with(e, &best.params, opts).unwrap().prediction() == s.label;
            let bucket = if seen.contains(&(s.meta.dest_size, s.meta.access_size)) { &mut seen_ok } else { &mut unseen_ok };
            bucket.1 += 1;
            if ok { bucket.0 += 1; }
        }
        println!("seed {seed}: train_err {:.3} (ep {:3}) | test seen {:.3} unseen {:.3} overall {:.3}",
            best.train_error, best.epoch,
            seen_ok.0 as f64 / seen_ok.1 as f64,
            unseen_ok.0 as f64 / unseen_ok.1 as f64,
            (seen_ok.0 + unseen_ok.0) as f64 / test.len() as f64);
    }
}
