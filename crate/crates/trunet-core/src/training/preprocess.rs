//! Input preparation: the three input modes mapping an acquired volume
//! onto the cubic model grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};
use crate::metrics::VoxelBox;
use crate::resample::{nearest_resize, trilinear_resize};
use crate::volume::{LabelVolume, VolumeSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Resize the whole volume to the target extent.
    #[default]
    Downsample,
    /// Train on random target-sized sub-volumes; infer on a tiling.
    Patches,
    /// Crop to the (localized) ROI box first, then resize.
    CropThenDownsample,
}

/// One training input on the model grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainInput {
    pub intensity: Vec<f32>,
    pub labels: LabelVolume,
    /// Patch origin within the source volume (patches mode; zero otherwise).
    pub offset: [usize; 3],
}

pub(crate) fn crop_grid<TV: Copy>(
    src: &[TV],
    extents: [usize; 3],
    lo: [usize; 3],
    size: [usize; 3],
) -> Vec<TV> {
    let mut out = Vec::with_capacity(size.iter().product());
    for x in lo[0]..lo[0] + size[0] {
        for y in lo[1]..lo[1] + size[1] {
            let base = (x * extents[1] + y) * extents[2] + lo[2];
            out.extend_from_slice(&src[base..base + size[2]]);
        }
    }
    out
}

fn pad_to<TV: Copy>(src: &[TV], extents: [usize; 3], target: [usize; 3], fill: TV) -> Vec<TV> {
    let mut out = vec![fill; target.iter().product()];
    for x in 0..extents[0] {
        for y in 0..extents[1] {
            let src_base = (x * extents[1] + y) * extents[2];
            let dst_base = (x * target[1] + y) * target[2];
            out[dst_base..dst_base + extents[2]]
                .copy_from_slice(&src[src_base..src_base + extents[2]]);
        }
    }
    out
}

fn scaled_spacing(spacing: [f64; 3], from: [usize; 3], to: usize) -> [f64; 3] {
    [
        spacing[0] * from[0] as f64 / to as f64,
        spacing[1] * from[1] as f64 / to as f64,
        spacing[2] * from[2] as f64 / to as f64,
    ]
}

/// Maps one (possibly augmented) sample onto the `target^3` model grid for
/// training. `region` is required only by the crop mode; `rng` is consumed
/// only by the patches mode.
pub fn preprocess_train(
    sample: &VolumeSample,
    mode: InputMode,
    target: usize,
    region: Option<&VoxelBox>,
    rng: &mut ChaCha8Rng,
) -> Result<TrainInput> {
    let extents = sample.extents();
    let t3 = [target; 3];
    match mode {
        InputMode::Downsample => Ok(TrainInput {
            intensity: trilinear_resize(&sample.intensity, extents, t3),
            labels: LabelVolume {
                extents: t3,
                voxels: nearest_resize(&sample.labels.voxels, extents, t3),
                spacing_mm: scaled_spacing(sample.spacing_mm(), extents, target),
            },
            offset: [0; 3],
        }),
        InputMode::Patches => {
            let (intensity, labels, extents) = if extents.iter().any(|&e| e < target) {
                log::warn!(
                    "volume {:?} smaller than the {} patch; padding with background",
                    extents,
                    target
                );
                let padded = [
                    extents[0].max(target),
                    extents[1].max(target),
                    extents[2].max(target),
                ];
                let fill = sample.intensity.iter().copied().fold(f32::INFINITY, f32::min);
                (
                    pad_to(&sample.intensity, extents, padded, fill),
                    pad_to(&sample.labels.voxels, extents, padded, 0u8),
                    padded,
                )
            } else {
                (
                    sample.intensity.clone(),
                    sample.labels.voxels.clone(),
                    extents,
                )
            };
            let offset = [
                rng.gen_range(0..=extents[0] - target),
                rng.gen_range(0..=extents[1] - target),
                rng.gen_range(0..=extents[2] - target),
            ];
            Ok(TrainInput {
                intensity: crop_grid(&intensity, extents, offset, t3),
                labels: LabelVolume {
                    extents: t3,
                    voxels: crop_grid(&labels, extents, offset, t3),
                    spacing_mm: sample.spacing_mm(),
                },
                offset,
            })
        }
        InputMode::CropThenDownsample => {
            let region = region
                .ok_or_else(|| usage_err!("crop mode needs a bounding box for the volume"))?;
            if (0..3).any(|d| region.hi[d] >= extents[d]) {
                return Err(usage_err!(
                    "bounding box {:?}..{:?} exceeds volume extents {:?}",
                    region.lo,
                    region.hi,
                    extents
                ));
            }
            let size = region.extents();
            let cropped_i = crop_grid(&sample.intensity, extents, region.lo, size);
            let cropped_l = crop_grid(&sample.labels.voxels, extents, region.lo, size);
            Ok(TrainInput {
                intensity: trilinear_resize(&cropped_i, size, t3),
                labels: LabelVolume {
                    extents: t3,
                    voxels: nearest_resize(&cropped_l, size, t3),
                    spacing_mm: scaled_spacing(sample.spacing_mm(), size, target),
                },
                offset: region.lo,
            })
        }
    }
}

/// Per-volume z-score normalization applied right before the network.
pub fn standardize(grid: &[f32]) -> Vec<f32> {
    let n = grid.len() as f64;
    let mean = grid.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = grid
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(1e-6);
    grid.iter()
        .map(|&v| ((v as f64 - mean) / std) as f32)
        .collect()
}
