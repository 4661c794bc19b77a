use trunet_core::metrics::macro_scores;
use trunet_core::models::{build, ModelConfig, ModelKind};
use trunet_core::phantom::{generate_sample, PhantomSpec};
use trunet_core::training::*;

fn main() {
    let kind = match std::env::args().nth(1).as_deref() {
        Some("unet") => ModelKind::ResUnet,
        _ => ModelKind::TruNet,
    };
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let model = build::<f32>(&ModelConfig::toy(kind), 1).unwrap();
    let sample = generate_sample(&PhantomSpec::default(), 0, 1).unwrap();
    let cfg = TrainConfig {
        epochs: steps,
        rotate_prob: 0.0,
        flip_prob: 0.0,
        max_iters: Some(steps),
        ..Default::default()
    };
    let data = vec![sample.clone()];
    let t0 = std::time::Instant::now();
    let mut last_print = 0usize;
    fit(&model, &data, &[], &cfg, None, Some(&mut |row: &EpochRow| {
        if row.epoch - last_print >= 50 || row.epoch <= 2 {
            last_print = row.epoch;
            let pred = infer_labels(&model, &sample, InputMode::Downsample, 32, None).unwrap();
            let (d, _) = macro_scores(&pred, &sample.labels, 6).unwrap();
            println!("step {:4}  loss {:.4}  train-dss {:.4}  ({:.0}s)", row.epoch, row.train_loss, d, t0.elapsed().as_secs_f64());
        }
    })).unwrap();
    let pred = infer_labels(&model, &sample, InputMode::Downsample, 32, None).unwrap();
    let (d, h) = macro_scores(&pred, &sample.labels, 6).unwrap();
    println!("final: dss {d:.4} hd95 {h:.2} after {steps} steps, {:.0}s", t0.elapsed().as_secs_f64());
    for c in 1..6u8 {
        let dc = trunet_core::metrics::dice_score(&pred, &sample.labels, c).unwrap();
        let n = sample.labels.voxels.iter().filter(|&&v| v == c).count();
        println!("  class {c}: dice {dc:.4} ({n} voxels)");
    }
}
