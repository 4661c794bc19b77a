//! Registry of finite-difference gradient checks covering every
//! differentiable primitive and the composite blocks. Used by the
//! `gradcheck` CLI command and the acceptance suite.
//!
//! All checks run in double precision on small random shapes. Inputs for
//! kinked activations (relu, prelu, maxpool) are sampled away from their
//! non-differentiable points so the central difference is meaningful.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{Bottleneck, BottleneckSpec, DecoderStage, ViTLayer};
use crate::tensor::gradcheck::{finite_diff_check, probe_loss, GradCheckReport};
use crate::tensor::Tensor;
use crate::training::dice_ce_loss;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

pub struct CheckResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tensor with every element at least `margin` away from zero,
/// for activations with a kink at the origin.
fn randn_off_zero(shape: &[usize], margin: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let t = Tensor::<f64>::randn(shape, 1.0, r);
    let data = t
        .to_vec()
        .into_iter()
        .map(|v| if v.abs() < margin { margin * v.signum() + if v == 0.0 { margin } else { 0.0 } } else { v })
        .collect();
    Tensor::from_vec(shape, data)
}

type CheckFn = fn() -> GradCheckReport;

fn check_conv3d() -> GradCheckReport {
    let mut r = rng(101);
    let x = Tensor::<f64>::randn(&[1, 2, 4, 4, 4], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[3, 2, 3, 3, 3], 0.5, &mut r);
    let b = Tensor::<f64>::randn(&[3], 0.2, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].conv3d(&xs[1], Some(&xs[2]), 1, 1).unwrap(), 1),
        &[x, w, b],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_conv3d_strided() -> GradCheckReport {
    let mut r = rng(102);
    let x = Tensor::<f64>::randn(&[2, 1, 4, 4, 4], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[2, 1, 3, 3, 3], 0.5, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].conv3d(&xs[1], None, 2, 1).unwrap(), 2),
        &[x, w],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_trilinear_upsample() -> GradCheckReport {
    let mut r = rng(103);
    let x = Tensor::<f64>::randn(&[1, 2, 3, 3, 3], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].trilinear_upsample(2).unwrap(), 3),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_matmul() -> GradCheckReport {
    let mut r = rng(104);
    let a = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut r);
    let b = Tensor::<f64>::randn(&[2, 4, 2], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].matmul(&xs[1]).unwrap(), 4),
        &[a, b],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_matmul_shared_weight() -> GradCheckReport {
    let mut r = rng(105);
    let a = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[4, 5], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].matmul(&xs[1]).unwrap(), 5),
        &[a, w],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_softmax() -> GradCheckReport {
    let mut r = rng(106);
    let x = Tensor::<f64>::randn(&[2, 5, 3], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].softmax(1).unwrap(), 6),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_group_norm() -> GradCheckReport {
    let mut r = rng(107);
    let x = Tensor::<f64>::randn(&[1, 4, 2, 2, 2], 1.0, &mut r);
    let g = Tensor::<f64>::randn(&[4], 0.5, &mut r);
    let b = Tensor::<f64>::randn(&[4], 0.5, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].group_norm(2, &xs[1], &xs[2], 1e-5).unwrap(), 7),
        &[x, g, b],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_layer_norm() -> GradCheckReport {
    let mut r = rng(108);
    let x = Tensor::<f64>::randn(&[3, 6], 1.0, &mut r);
    let g = Tensor::<f64>::randn(&[6], 0.5, &mut r);
    let b = Tensor::<f64>::randn(&[6], 0.5, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].layer_norm(&xs[1], &xs[2], 1e-5).unwrap(), 8),
        &[x, g, b],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_relu() -> GradCheckReport {
    let mut r = rng(109);
    let x = randn_off_zero(&[2, 3, 4], 0.05, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].relu(), 9),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_prelu() -> GradCheckReport {
    let mut r = rng(110);
    let x = randn_off_zero(&[1, 3, 2, 2], 0.05, &mut r);
    let alpha = Tensor::<f64>::randn(&[3], 0.3, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].prelu(&xs[1]).unwrap(), 10),
        &[x, alpha],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_gelu() -> GradCheckReport {
    let mut r = rng(111);
    let x = Tensor::<f64>::randn(&[2, 5], 1.5, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].gelu(), 11),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_elementwise() -> GradCheckReport {
    let mut r = rng(112);
    let a = Tensor::<f64>::randn(&[2, 3], 1.0, &mut r);
    let b = randn_off_zero(&[2, 3], 0.3, &mut r);
    finite_diff_check(
        |xs| {
            let sum = xs[0].add(&xs[1]).unwrap();
            let diff = xs[0].sub(&xs[1]).unwrap();
            let prod = xs[0].mul(&xs[1]).unwrap();
            let quot = xs[0].div(&xs[1]).unwrap();
            probe_loss(&sum, 12)
                .add(&probe_loss(&diff, 13))
                .unwrap()
                .add(&probe_loss(&prod, 14))
                .unwrap()
                .add(&probe_loss(&quot, 15))
                .unwrap()
        },
        &[a, b],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_add_broadcast() -> GradCheckReport {
    let mut r = rng(113);
    let x = Tensor::<f64>::randn(&[2, 4, 3], 1.0, &mut r);
    let bias = Tensor::<f64>::randn(&[3], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].add_broadcast(&xs[1]).unwrap(), 16),
        &[x, bias],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_concat() -> GradCheckReport {
    let mut r = rng(114);
    let a = Tensor::<f64>::randn(&[1, 2, 3], 1.0, &mut r);
    let b = Tensor::<f64>::randn(&[1, 4, 3], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&Tensor::concat(&[&xs[0], &xs[1]], 1).unwrap(), 17),
        &[a, b],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_maxpool3d() -> GradCheckReport {
    let mut r = rng(115);
    let x = Tensor::<f64>::randn(&[1, 2, 4, 4, 4], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].maxpool3d(2, 2, 0).unwrap(), 18),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_maxpool3d_padded() -> GradCheckReport {
    let mut r = rng(116);
    let x = Tensor::<f64>::randn(&[1, 1, 4, 4, 4], 1.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].maxpool3d(3, 2, 1).unwrap(), 19),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_reshape_permute() -> GradCheckReport {
    let mut r = rng(117);
    let x = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut r);
    finite_diff_check(
        |xs| {
            let y = xs[0]
                .permute(&[2, 0, 1])
                .unwrap()
                .reshape(&[4, 6])
                .unwrap();
            probe_loss(&y, 20)
        },
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_reductions() -> GradCheckReport {
    let mut r = rng(118);
    let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
    finite_diff_check(
        |xs| {
            xs[0]
                .sum_all()
                .scale(0.25)
                .add(&xs[0].mean_all())
                .unwrap()
                .add(&xs[0].clamp_min(-0.2).sum_all())
                .unwrap()
        },
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_ln_scalars() -> GradCheckReport {
    let mut r = rng(119);
    let x = Tensor::<f64>::rand_uniform(&[6], 0.5, 3.0, &mut r);
    finite_diff_check(
        |xs| probe_loss(&xs[0].ln(), 21).add_scalar(1.0).scale(2.0),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_bottleneck() -> GradCheckReport {
    let mut r = rng(120);
    let spec = BottleneckSpec {
        in_channels: 4,
        mid_channels: 2,
        out_channels: 8,
        stride: 2,
    };
    let block = Bottleneck::<f64>::new(spec, &mut r).unwrap();
    let x = Tensor::<f64>::randn(&[1, 4, 4, 4, 4], 1.0, &mut r);
    finite_diff_check(
        move |xs| probe_loss(&block.forward(&xs[0]).unwrap(), 22),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_vit_layer() -> GradCheckReport {
    let mut r = rng(121);
    let layer = ViTLayer::<f64>::new(8, 16, 2, &mut r).unwrap();
    let x = Tensor::<f64>::randn(&[1, 4, 8], 1.0, &mut r);
    finite_diff_check(
        move |xs| probe_loss(&layer.forward(&xs[0]).unwrap(), 23),
        &[x],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_decoder_stage() -> GradCheckReport {
    let mut r = rng(122);
    let stage = DecoderStage::<f64>::new(3, 2, 4, &mut r);
    let x = Tensor::<f64>::randn(&[1, 3, 2, 2, 2], 1.0, &mut r);
    let skip = Tensor::<f64>::randn(&[1, 2, 4, 4, 4], 1.0, &mut r);
    finite_diff_check(
        move |xs| probe_loss(&stage.forward(&xs[0], Some(&xs[1])).unwrap(), 24),
        &[x, skip],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

fn check_dice_ce_loss() -> GradCheckReport {
    let mut r = rng(123);
    let logits = Tensor::<f64>::randn(&[1, 3, 4, 4, 4], 1.0, &mut r);
    let labels: Vec<u8> = (0..64).map(|i| (i % 3) as u8).collect();
    finite_diff_check(
        move |xs| {
            let probs = xs[0].softmax(1).unwrap();
            dice_ce_loss(&probs, &labels, true).unwrap()
        },
        &[logits],
        GRADCHECK_EPS,
        GRADCHECK_TOL,
    )
}

const CHECKS: &[(&str, CheckFn)] = &[
    ("conv3d", check_conv3d),
    ("conv3d_strided", check_conv3d_strided),
    ("trilinear_upsample", check_trilinear_upsample),
    ("matmul", check_matmul),
    ("matmul_shared_weight", check_matmul_shared_weight),
    ("softmax", check_softmax),
    ("group_norm", check_group_norm),
    ("layer_norm", check_layer_norm),
    ("relu", check_relu),
    ("prelu", check_prelu),
    ("gelu", check_gelu),
    ("elementwise", check_elementwise),
    ("add_broadcast", check_add_broadcast),
    ("concat", check_concat),
    ("maxpool3d", check_maxpool3d),
    ("maxpool3d_padded", check_maxpool3d_padded),
    ("reshape_permute", check_reshape_permute),
    ("reductions", check_reductions),
    ("ln", check_ln_scalars),
    ("bottleneck", check_bottleneck),
    ("vit_layer", check_vit_layer),
    ("decoder_stage", check_decoder_stage),
    ("dice_ce_loss", check_dice_ce_loss),
];

/// Names of every registered check.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs all checks (or the one matching `filter`).
pub fn run_checks(filter: Option<&str>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|(name, _)| filter.map_or(true, |f| *name == f))
        .map(|(name, f)| CheckResult {
            name,
            report: f(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_and_composite_passes() {
        let results = run_checks(None);
        assert_eq!(results.len(), CHECKS.len());
        for r in &results {
            assert!(
                r.report.pass,
                "{} failed with max_rel_err {}",
                r.name, r.report.max_rel_err
            );
        }
    }

    #[test]
    fn filter_selects_single_check() {
        let results = run_checks(Some("conv3d"));
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].name, "conv3d");
    }
}
