use std::time::Instant;
use trunet_core::models::{build, ModelConfig, ModelKind};
use trunet_core::phantom::{generate_sample, PhantomSpec};
use trunet_core::tensor::Tensor;
use trunet_core::training::*;

fn time_model(kind: ModelKind) {
    let cfg = ModelConfig::toy(kind);
    let model = build::<f32>(&cfg, 1).unwrap();
    println!("{kind:?}: {} parameters", model.param_count());
    let sample = generate_sample(&PhantomSpec::default(), 0, 1).unwrap();
    let params = model.named_parameters();
    let mut adam = AdamState::new(&params);
    let labels = sample.labels.voxels.clone();
    let x = Tensor::from_vec(&[1, 1, 32, 32, 32], standardize(&sample.intensity));
    // warmup + timed steps
    let t0 = Instant::now();
    let mut n = 0;
    while t0.elapsed().as_secs_f64() < 8.0 && n < 20 {
        let probs = model.forward(&x).unwrap();
        let loss = dice_ce_loss(&probs, &labels, true).unwrap();
        loss.backward().unwrap();
        adam.update(&params, 0.01);
        for (_, p) in &params { p.zero_grad(); }
        n += 1;
        if n == 3 {
            println!("  loss after 3 steps: {}", loss.item());
        }
    }
    println!("  {:.3} s/step over {} steps", t0.elapsed().as_secs_f64() / n as f64, n);
    // inference timing
    let t1 = Instant::now();
    let pred = infer_labels(&model, &sample, InputMode::Downsample, 32, None).unwrap();
    println!("  inference: {:.3} s", t1.elapsed().as_secs_f64());
    let t2 = Instant::now();
    let (d, h) = trunet_core::metrics::macro_scores(&pred, &sample.labels, 6).unwrap();
    println!("  metrics: {:.3} s (dss {d:.3}, hd95 {h:.1})", t2.elapsed().as_secs_f64());
}

fn main() {
    time_model(ModelKind::TruNet);
    time_model(ModelKind::ResUnet);
}
