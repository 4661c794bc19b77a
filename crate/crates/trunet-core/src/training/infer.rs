//! Whole-volume inference: runs the trained model per its input mode and
//! maps the predicted labels back to the original grid.

use crate::error::{usage_err, Result};
use crate::metrics::VoxelBox;
use crate::models::Model;
use crate::nn::argmax_channels;
use crate::resample::{nearest_resize, trilinear_resize};
use crate::tensor::{no_grad, Tensor};
use crate::volume::{LabelVolume, VolumeSample};

use super::preprocess::{crop_grid, standardize, InputMode};

fn forward_grid(model: &Model<f32>, grid: &[f32], extent: usize) -> Result<Tensor<f32>> {
    let x = Tensor::from_vec(&[1, 1, extent, extent, extent], standardize(grid));
    no_grad(|| model.forward(&x))
}

/// Predicts a label volume at the sample's original extents.
pub fn infer_labels(
    model: &Model<f32>,
    sample: &VolumeSample,
    mode: InputMode,
    target: usize,
    region: Option<&VoxelBox>,
) -> Result<LabelVolume> {
    let extents = sample.extents();
    let t3 = [target; 3];
    match mode {
        InputMode::Downsample => {
            let grid = trilinear_resize(&sample.intensity, extents, t3);
            let probs = forward_grid(model, &grid, target)?;
            let pred = argmax_channels(&probs);
            Ok(LabelVolume {
                extents,
                voxels: nearest_resize(&pred, t3, extents),
                spacing_mm: sample.spacing_mm(),
            })
        }
        InputMode::CropThenDownsample => {
            let region =
                region.ok_or_else(|| usage_err!("crop mode needs a bounding box for inference"))?;
            if (0..3).any(|d| region.hi[d] >= extents[d]) {
                return Err(usage_err!(
                    "bounding box {:?}..{:?} exceeds volume extents {:?}",
                    region.lo,
                    region.hi,
                    extents
                ));
            }
            let size = region.extents();
            let cropped = crop_grid(&sample.intensity, extents, region.lo, size);
            let grid = trilinear_resize(&cropped, size, t3);
            let probs = forward_grid(model, &grid, target)?;
            let pred = argmax_channels(&probs);
            let box_pred = nearest_resize(&pred, t3, size);
            let mut voxels = vec![0u8; sample.labels.numel()];
            for x in 0..size[0] {
                for y in 0..size[1] {
                    let src = (x * size[1] + y) * size[2];
                    let dst = ((x + region.lo[0]) * extents[1] + y + region.lo[1]) * extents[2]
                        + region.lo[2];
                    voxels[dst..dst + size[2]].copy_from_slice(&box_pred[src..src + size[2]]);
                }
            }
            Ok(LabelVolume {
                extents,
                voxels,
                spacing_mm: sample.spacing_mm(),
            })
        }
        InputMode::Patches => {
            let num_classes = model.config().num_classes;
            if extents.iter().any(|&e| e < target) {
                return Err(usage_err!(
                    "volume {:?} smaller than the {} inference tile",
                    extents,
                    target
                ));
            }
            // Tile offsets striding by the tile size, last tile clamped to
            // the far edge; overlapping probabilities are averaged.
            let offsets = |e: usize| -> Vec<usize> {
                let mut v: Vec<usize> = (0..e / target).map(|k| k * target).collect();
                if e % target != 0 {
                    v.push(e - target);
                }
                v
            };
            let n = sample.labels.numel();
            let mut prob_acc = vec![0.0f32; n * num_classes];
            let mut counts = vec![0u16; n];
            for &ox in &offsets(extents[0]) {
                for &oy in &offsets(extents[1]) {
                    for &oz in &offsets(extents[2]) {
                        let lo = [ox, oy, oz];
                        let tile = crop_grid(&sample.intensity, extents, lo, t3);
                        let probs = forward_grid(model, &tile, target)?;
                        let pd = probs.data();
                        for x in 0..target {
                            for y in 0..target {
                                for z in 0..target {
                                    let tile_i = (x * target + y) * target + z;
                                    let vol_i = ((x + ox) * extents[1] + y + oy) * extents[2]
                                        + z
                                        + oz;
                                    for c in 0..num_classes {
                                        prob_acc[c * n + vol_i] +=
                                            pd[c * target * target * target + tile_i];
                                    }
                                    counts[vol_i] += 1;
                                }
                            }
                        }
                    }
                }
            }
            let mut voxels = vec![0u8; n];
            for i in 0..n {
                debug_assert!(counts[i] > 0);
                let mut best = prob_acc[i];
                let mut best_c = 0u8;
                for c in 1..num_classes {
                    let v = prob_acc[c * n + i];
                    if v > best {
                        best = v;
                        best_c = c as u8;
                    }
                }
                voxels[i] = best_c;
            }
            Ok(LabelVolume {
                extents,
                voxels,
                spacing_mm: sample.spacing_mm(),
            })
        }
    }
}
