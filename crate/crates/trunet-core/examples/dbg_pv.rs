use trunet_core::models::{build, ModelConfig, ModelKind};
use trunet_core::phantom::{generate_sample, PhantomSpec};
use trunet_core::tensor::Tensor;
use trunet_core::training::*;

fn main() {
    let model = build::<f32>(&ModelConfig::toy(ModelKind::TruNet), 1).unwrap();
    let sample = generate_sample(&PhantomSpec::default(), 0, 1).unwrap();
    let params = model.named_parameters();
    let mut adam = AdamState::new(&params);
    let labels = sample.labels.voxels.clone();
    let x = Tensor::from_vec(&[1, 1, 32, 32, 32], standardize(&sample.intensity));
    let n = 32 * 32 * 32;
    for step in 0..500 {
        let probs = model.forward(&x).unwrap();
        if step % 25 == 0 || step + 1 == 500 {
            let pd = probs.data();
            for class in [4usize, 5] {
                let mut p_true_sum = 0.0f64;
                let mut cnt = 0usize;
                let mut mass = 0.0f64;
                let mut winners = [0usize; 6];
                for i in 0..n {
                    mass += pd[class * n + i] as f64;
                    if labels[i] == class as u8 {
                        p_true_sum += pd[class * n + i] as f64;
                        cnt += 1;
                        let mut best = 0usize;
                        for c in 1..6 {
                            if pd[c * n + i] > pd[best * n + i] {
                                best = c;
                            }
                        }
                        winners[best] += 1;
                    }
                }
                println!(
                    "step {step:3} class {class}: p@true {:.2e}, mass {:.1e}, winners {:?}",
                    p_true_sum / cnt as f64, mass, winners
                );
            }
        }
        let loss = dice_ce_loss(&probs, &labels, true).unwrap();
        loss.backward().unwrap();
        adam.update(&params, poly_lr(0.01, step, 500, 0.9) as f32);
        for (_, p) in &params {
            p.zero_grad();
        }
    }
}
