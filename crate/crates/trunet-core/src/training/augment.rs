//! Training-time augmentation: random small rotation about a random axis
//! and random mirroring, each applied with its own probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::resample::{flip, rotate_nearest, rotate_trilinear};
use crate::volume::{LabelVolume, VolumeSample};

/// Draw order is fixed: rotation coin, (axis, angle) when it hits, flip
/// coin, axis when it hits. Intensities resample trilinearly, labels
/// nearest-neighbour; voxels rotated out of the field take the volume's
/// minimum intensity / background label. Spacing is preserved.
pub fn augment(
    sample: &VolumeSample,
    rotate_max_deg: f64,
    rotate_prob: f64,
    flip_prob: f64,
    rng: &mut ChaCha8Rng,
) -> VolumeSample {
    let extents = sample.extents();
    let mut intensity = sample.intensity.clone();
    let mut labels = sample.labels.voxels.clone();

    if rng.gen::<f64>() < rotate_prob {
        let axis = rng.gen_range(0..3usize);
        let theta = rng.gen_range(-rotate_max_deg..rotate_max_deg).to_radians();
        let fill = intensity.iter().copied().fold(f32::INFINITY, f32::min);
        intensity = rotate_trilinear(&intensity, extents, axis, theta, fill);
        labels = rotate_nearest(&labels, extents, axis, theta, 0);
    }
    if rng.gen::<f64>() < flip_prob {
        let axis = rng.gen_range(0..3usize);
        intensity = flip(&intensity, extents, axis);
        labels = flip(&labels, extents, axis);
    }

    VolumeSample {
        intensity,
        labels: LabelVolume {
            extents,
            voxels: labels,
            spacing_mm: sample.spacing_mm(),
        },
        patient_id: sample.patient_id,
        timepoint: sample.timepoint,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_sample, PhantomSpec};
    use rand::SeedableRng;

    fn sample() -> VolumeSample {
        generate_sample(&PhantomSpec::default(), 0, 1).unwrap()
    }

    #[test]
    fn zero_probabilities_return_sample_unchanged() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&s, 20.0, 0.0, 0.0, &mut rng);
        assert_eq!(out, s);
    }

    #[test]
    fn extents_and_label_set_are_preserved() {
        let s = sample();
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&s, 20.0, 0.5, 0.5, &mut rng);
            assert_eq!(out.extents(), s.extents());
            assert_eq!(out.spacing_mm(), s.spacing_mm());
            // Never invents labels.
            for &v in &out.labels.voxels {
                assert!(s.labels.voxels.contains(&v));
            }
        }
    }

    #[test]
    fn forced_flip_is_undone_by_flipping_back() {
        let s = sample();
        // flip_prob 1, rotate_prob 0: the only randomness left is the axis.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment(&s, 20.0, 0.0, 1.0, &mut rng);
        assert_ne!(out, s);
        // One of the three axes restores the original.
        let restored = (0..3).any(|axis| {
            flip(&out.labels.voxels, s.extents(), axis) == s.labels.voxels
                && flip(&out.intensity, s.extents(), axis) == s.intensity
        });
        assert!(restored);
    }

    #[test]
    fn augmentation_is_deterministic_per_seed() {
        let s = sample();
        let a = augment(&s, 20.0, 0.7, 0.7, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(&s, 20.0, 0.7, 0.7, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
