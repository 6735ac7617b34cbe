use ovrun_core::corpus::{self, AccessForm, GenConfig, Level};
use ovrun_core::encoding::Encoder;
use ovrun_core::metrics;
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
    let epochs: usize = arg("--epochs", 100);
    let batch: usize = arg("--batch", 32);
    let scale: f64 = arg("--scale", 1.0);
    let seed: u64 = arg("--seed", 42);
    let clip: f64 = arg("--clip", 0.0);
    let ls: usize = arg("--ls", 0);
    let wd: f64 = arg("--wd", 0.0);
    let mask = std::env::args().any(|a| a == "--mask");
    let opts = ForwardOptions { mask_padding: mask, ..ForwardOptions::default() };
    println!("epochs={epochs} batch={batch} scale={scale} seed={seed} mask={mask} ls={ls} clip={clip} wd={wd}");

    let train_corpus: Vec<_> = if std::env::args().any(|a| a == "--tilt") {
        let counts = [1750usize, 2250, 3000, 3000];
        Level::ALL.iter().enumerate().flat_map(|(i, level)| {
            corpus::generate_corpus(&GenConfig { level: *level, num_samples: counts[i], seed: 42 + 100 * i as u64, ..GenConfig::default() }).unwrap()
        }).collect()
    } else if std::env::args().any(|a| a == "--level-mix") {
        Level::ALL.iter().enumerate().flat_map(|(i, level)| {
            corpus::generate_corpus(&GenConfig { level: *level, num_samples: 2500, seed: 42 + 100 * i as u64, ..GenConfig::default() }).unwrap()
        }).collect()
    } else {
        corpus::generate_corpus(&GenConfig { level: Level::L4, num_samples: 10_000, seed: 42, ..GenConfig::default() }).unwrap()
    };
    let encoder = Encoder::fit(&train_corpus, 30).unwrap();
    let data = encoder.encode_corpus(&train_corpus).unwrap();

    let mut tests = Vec::new();
    for (i, level) in Level::ALL.iter().enumerate() {
        let c = corpus::generate_corpus(&GenConfig { level: *level, num_samples: 1000, seed: 43 + i as u64, ..GenConfig::default() }).unwrap();
        let e = encoder.encode_corpus(&c).unwrap();
        tests.push((level, c, e));
    }

    let mut params = ModelParams::init(encoder.vocab.len(), 32, 30, 3, seed);
    params.e_val *= scale;
    params.e_addr *= scale;
    params.w_out *= scale;
    params.b_out *= scale;

    let cfg = TrainConfig { epochs, batch_size: batch, seed, mask_padding: mask,
        linear_start_epochs: ls, grad_clip: (clip > 0.0).then_some(clip), weight_decay: (wd > 0.0).then_some(wd), ..TrainConfig::default() };
    let t = std::time::Instant::now();
    let out = training::train(&data, params, &cfg).unwrap();
    let last = out.history.last().unwrap();
    println!("train {:.3}/{:.4} at ep {} ({:.0}s)", last.train_accuracy, last.train_loss, last.epoch, t.elapsed().as_secs_f64());

    let snaps: Vec<&ModelParams> = out.snapshots.iter().map(|s| &s.params).collect();
    for (level, _, enc) in &tests {
        let rep = metrics::evaluate(&snaps, enc, Some(**level), opts).unwrap();
        print!("L{} acc {:.3} auc {:.3} | ", level.as_u8(), rep.accuracy, rep.auc);
    }
    println!();
    // per-form accuracy on L4 test with best snapshot
    let best = &out.snapshots[0].params;
    let (_, c4, e4) = &tests[3];
    for form in [AccessForm::Direct, AccessForm::Strcpy, AccessForm::Memcpy] {
        let mut ok = 0; let mut n = 0;
        for (s, e) in c4.iter().zip(e4) {
            if s.meta.access_form != form { continue; }
            n += 1;
            if forward_with(e, best, opts).unwrap().prediction() == s.label { ok += 1; }
        }
        print!("{form}: {:.3} ({n})  ", ok as f64 / n as f64);
    }
    println!();
}
