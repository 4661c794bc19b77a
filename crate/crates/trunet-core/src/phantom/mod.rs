//! Deterministic synthetic "heart-like" 4-D dataset: five non-overlapping
//! geometric primitives per patient (large LV ellipsoid, adjacent LA
//! ellipsoid, lobed LAA protrusion, curved AA tube, 2-4 thin PV tubes),
//! deformed by a smooth periodic factor over the cardiac cycle so that
//! timepoint 1 and the mid-cycle timepoint are maximally dissimilar.
//!
//! Everything is a pure function of (seed, patient, timepoint).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Result};
use crate::volume::{LabelVolume, Split, VolumeSample};

/// Splitmix-style stream derivation so parallel generation cannot change
/// results.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags {
        x = x.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(t);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        x = z ^ (z >> 31);
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub extent: usize,
    pub num_patients: usize,
    pub timepoints: usize,
    pub seed: u64,
    /// Scales the intensity gap between blood pool and background; lowering
    /// it reproduces the low-contrast failure mode qualitatively.
    pub contrast_level: f64,
    pub noise_sd: f64,
    pub spacing_mm: [f64; 3],
    pub val_patients: usize,
    pub test_patients: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            extent: 32,
            num_patients: 12,
            timepoints: 5,
            seed: 7,
            contrast_level: 1.0,
            noise_sd: 0.04,
            spacing_mm: [1.0, 1.0, 1.0],
            val_patients: 2,
            test_patients: 2,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extent < 32 {
            return Err(config_err!(
                "phantom extent must be at least 32, got {}",
                self.extent
            ));
        }
        if self.timepoints == 0 {
            return Err(config_err!("phantom needs at least one timepoint"));
        }
        if self.num_patients == 0 {
            return Err(config_err!("phantom needs at least one patient"));
        }
        if self.val_patients + self.test_patients >= self.num_patients {
            return Err(config_err!(
                "{} patients cannot cover {} val + {} test",
                self.num_patients,
                self.val_patients,
                self.test_patients
            ));
        }
        if !(self.contrast_level > 0.0) || self.noise_sd < 0.0 {
            return Err(config_err!("contrast must be positive, noise_sd nonnegative"));
        }
        Ok(())
    }
}

/// Periodic deformation parameter: 1 at timepoint 1, -1 at the mid-cycle
/// timepoint, period `timepoints`.
pub fn deformation_phase(timepoint: usize, timepoints: usize) -> f64 {
    (2.0 * std::f64::consts::PI * (timepoint as f64 - 1.0) / timepoints as f64).cos()
}

struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
    label: u8,
}

struct Tube {
    points: Vec<[f64; 3]>,
    radius: f64,
    label: u8,
}

struct Geometry {
    ellipsoids: Vec<Ellipsoid>,
    tubes: Vec<Tube>,
}

fn bezier(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], t: f64) -> [f64; 3] {
    let u = 1.0 - t;
    [
        u * u * p0[0] + 2.0 * u * t * p1[0] + t * t * p2[0],
        u * u * p0[1] + 2.0 * u * t * p1[1] + t * t * p2[1],
        u * u * p0[2] + 2.0 * u * t * p1[2] + t * t * p2[2],
    ]
}

/// Patient-specific geometry at a given cycle phase. Jitters are drawn in a
/// fixed order from the patient stream, independent of the timepoint.
fn geometry(spec: &PhantomSpec, patient: u32, phase: f64) -> Geometry {
    let e = spec.extent as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[patient as u64, 0x6E0]));
    fn jitter(rng: &mut ChaCha8Rng, amount: f64) -> f64 {
        1.0 + rng.gen_range(-amount..amount)
    }
    fn shift(rng: &mut ChaCha8Rng, amount: f64, e: f64) -> f64 {
        rng.gen_range(-amount..amount) * e
    }

    // Cardiac-cycle scaling: chambers contract mid-cycle, vessels barely.
    let chamber = 1.0 + 0.10 * phase;
    let vessel = 1.0 + 0.02 * phase;
    let sway = 0.012 * e * phase;

    let lv_center = [
        0.40 * e + shift(&mut rng, 0.02, e) + sway,
        0.52 * e + shift(&mut rng, 0.02, e),
        0.50 * e + shift(&mut rng, 0.02, e),
    ];
    let lv_semi = [
        0.155 * e * jitter(&mut rng, 0.08) * chamber,
        0.125 * e * jitter(&mut rng, 0.08) * chamber,
        0.125 * e * jitter(&mut rng, 0.08) * chamber,
    ];
    let la_center = [
        lv_center[0] + (lv_semi[0] + 0.115 * e) * 0.96,
        lv_center[1] + 0.04 * e + shift(&mut rng, 0.01, e),
        lv_center[2] + shift(&mut rng, 0.01, e),
    ];
    let la_semi = [
        0.105 * e * jitter(&mut rng, 0.08) * chamber,
        0.095 * e * jitter(&mut rng, 0.08) * chamber,
        0.095 * e * jitter(&mut rng, 0.08) * chamber,
    ];

    // LAA: two overlapping lobes protruding from the LA, painted after it
    // so only the part outside the LA keeps the LAA label.
    let laa_dir = [0.25, -0.80, 0.40f64];
    let norm = laa_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let laa_r = 0.085 * e * jitter(&mut rng, 0.10) * chamber;
    let laa_c1 = [
        la_center[0] + laa_dir[0] / norm * (la_semi[0] * 0.75 + 0.55 * laa_r),
        la_center[1] + laa_dir[1] / norm * (la_semi[1] * 0.75 + 0.55 * laa_r),
        la_center[2] + laa_dir[2] / norm * (la_semi[2] * 0.75 + 0.55 * laa_r),
    ];
    let laa_c2 = [
        laa_c1[0] + 0.04 * e,
        laa_c1[1] - 0.05 * e,
        laa_c1[2] + 0.03 * e,
    ];

    // AA: curved tube leaving the LV "upward" (negative y).
    let aa_radius = 0.062 * e * jitter(&mut rng, 0.08) * vessel;
    let aa0 = [lv_center[0] + 0.02 * e, lv_center[1] - lv_semi[1] * 0.8, lv_center[2]];
    let aa1 = [aa0[0] + 0.07 * e, aa0[1] - 0.14 * e, aa0[2] - 0.02 * e];
    let aa2 = [aa0[0] + 0.17 * e, aa0[1] - 0.22 * e, aa0[2] - 0.05 * e];
    let aa_points: Vec<[f64; 3]> = (0..=24).map(|i| bezier(aa0, aa1, aa2, i as f64 / 24.0)).collect();

    // PV: 2-4 thin straight tubes entering the LA from behind (+x).
    let n_pv = rng.gen_range(2..=4usize);
    let mut tubes = vec![Tube {
        points: aa_points,
        radius: aa_radius,
        label: 4,
    }];
    let pv_radius = (0.055 * e * vessel).max(1.6);
    let pv_dirs = [
        [0.85, -0.35, 0.40],
        [0.85, 0.35, -0.40],
        [0.80, 0.45, 0.40],
        [0.80, -0.45, -0.40],
    ];
    for dir in pv_dirs.iter().take(n_pv) {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
        let start = [
            la_center[0] + d[0] * la_semi[0] * 0.85,
            la_center[1] + d[1] * la_semi[1] * 0.85,
            la_center[2] + d[2] * la_semi[2] * 0.85,
        ];
        let len = 0.17 * e * jitter(&mut rng, 0.10);
        let points: Vec<[f64; 3]> = (0..=12)
            .map(|i| {
                let t = i as f64 / 12.0;
                [
                    start[0] + d[0] * len * t,
                    start[1] + d[1] * len * t,
                    start[2] + d[2] * len * t,
                ]
            })
            .collect();
        tubes.push(Tube {
            points,
            radius: pv_radius,
            label: 5,
        });
    }

    Geometry {
        ellipsoids: vec![
            Ellipsoid {
                center: lv_center,
                semi: lv_semi,
                label: 1,
            },
            Ellipsoid {
                center: la_center,
                semi: la_semi,
                label: 2,
            },
            Ellipsoid {
                center: laa_c1,
                semi: [laa_r; 3],
                label: 3,
            },
            Ellipsoid {
                center: laa_c2,
                semi: [laa_r * 0.8; 3],
                label: 3,
            },
        ],
        tubes,
    }
}

/// Paints labels with first-writer-wins priority (LV, LA, then vessels and
/// the LAA lobes claim only background), which keeps labels disjoint by
/// construction.
fn paint_labels(spec: &PhantomSpec, geo: &Geometry) -> Vec<u8> {
    let e = spec.extent;
    let mut labels = vec![0u8; e * e * e];
    let paint_ellipsoid = |labels: &mut Vec<u8>, el: &Ellipsoid| {
        let lo = |c: f64, s: f64| ((c - s).floor().max(0.0)) as usize;
        let hi = |c: f64, s: f64| ((c + s).ceil().min(e as f64 - 1.0)) as usize;
        for x in lo(el.center[0], el.semi[0])..=hi(el.center[0], el.semi[0]) {
            for y in lo(el.center[1], el.semi[1])..=hi(el.center[1], el.semi[1]) {
                for z in lo(el.center[2], el.semi[2])..=hi(el.center[2], el.semi[2]) {
                    let dx = (x as f64 - el.center[0]) / el.semi[0];
                    let dy = (y as f64 - el.center[1]) / el.semi[1];
                    let dz = (z as f64 - el.center[2]) / el.semi[2];
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        let i = (x * e + y) * e + z;
                        if labels[i] == 0 {
                            labels[i] = el.label;
                        }
                    }
                }
            }
        }
    };
    // Chambers first (labels 1, 2), then the LAA lobes (3).
    for el in &geo.ellipsoids {
        paint_ellipsoid(&mut labels, el);
    }
    for tube in &geo.tubes {
        let r = tube.radius;
        let fe = e as f64 - 1.0;
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for p in &tube.points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d] - r);
                hi[d] = hi[d].max(p[d] + r);
            }
        }
        let clamp = |v: f64| v.clamp(0.0, fe) as usize;
        for x in clamp(lo[0].floor())..=clamp(hi[0].ceil()) {
            for y in clamp(lo[1].floor())..=clamp(hi[1].ceil()) {
                for z in clamp(lo[2].floor())..=clamp(hi[2].ceil()) {
                    let p = [x as f64, y as f64, z as f64];
                    let mut best = f64::INFINITY;
                    for q in &tube.points {
                        let d = (p[0] - q[0]).powi(2)
                            + (p[1] - q[1]).powi(2)
                            + (p[2] - q[2]).powi(2);
                        best = best.min(d);
                    }
                    if best.sqrt() <= r {
                        let i = (x * e + y) * e + z;
                        if labels[i] == 0 {
                            labels[i] = tube.label;
                        }
                    }
                }
            }
        }
    }
    labels
}

/// Intensity base level per label, before contrast scaling.
const BASE_LEVEL: [f64; 6] = [0.15, 1.0, 0.92, 0.84, 1.08, 0.76];

/// Generates one timepoint of one patient.
pub fn generate_sample(spec: &PhantomSpec, patient: u32, timepoint: u32) -> Result<VolumeSample> {
    spec.validate()?;
    let phase = deformation_phase(timepoint as usize, spec.timepoints);
    let geo = geometry(spec, patient, phase);
    let labels = paint_labels(spec, &geo);

    // Every primitive must survive the painting priority with a usable mass.
    for class in 1..=5u8 {
        let count = labels.iter().filter(|&&v| v == class).count();
        if count < 8 {
            return Err(data_err!(
                "phantom patient {} t{}: primitive for label {} placed only {} voxels (needs 8); extent {} is too tight for this geometry",
                patient,
                timepoint,
                class,
                count,
                spec.extent
            ));
        }
    }

    let e = spec.extent;
    let contrast = spec.contrast_level
        * (1.0
            + 0.1 * {
                let mut r =
                    ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[patient as u64, 0xC0]));
                r.gen_range(-1.0..1.0)
            });
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        &[patient as u64, timepoint as u64, 0x4015],
    ));
    let mut intensity = Vec::with_capacity(labels.len());
    for x in 0..e {
        for y in 0..e {
            for z in 0..e {
                let i = (x * e + y) * e + z;
                let base = BASE_LEVEL[labels[i] as usize];
                let gradient = 0.05 * (x + y + z) as f64 / (3.0 * e as f64);
                let n: f64 = noise.sample::<f64, _>(rand_distr::StandardNormal) * spec.noise_sd;
                intensity.push((base * contrast + gradient + n) as f32);
            }
        }
    }
    Ok(VolumeSample {
        intensity,
        labels: LabelVolume::new([e, e, e], labels, spec.spacing_mm)?,
        patient_id: patient,
        timepoint,
    })
}

/// Patient-level split assignment. Patients with fewer timepoints than the
/// full cycle are forced into the test set; the rest are shuffled by seed.
pub fn split_patients(
    patient_timepoints: &[(u32, usize)],
    full_timepoints: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> Result<HashMap<u32, Split>> {
    let short: Vec<u32> = patient_timepoints
        .iter()
        .filter(|(_, t)| *t < full_timepoints)
        .map(|(id, _)| *id)
        .collect();
    if short.len() > test {
        return Err(config_err!(
            "{} short-cycle patients exceed the {} test slots",
            short.len(),
            test
        ));
    }
    if val + test >= patient_timepoints.len() {
        return Err(config_err!(
            "cannot split {} patients into {} val + {} test + train",
            patient_timepoints.len(),
            val,
            test
        ));
    }
    let mut rest: Vec<u32> = patient_timepoints
        .iter()
        .filter(|(_, t)| *t >= full_timepoints)
        .map(|(id, _)| *id)
        .collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5D117]));
    rest.shuffle(&mut rng);

    let mut out = HashMap::new();
    for id in &short {
        out.insert(*id, Split::Test);
    }
    let mut rest = rest.into_iter();
    for _ in short.len()..test {
        out.insert(rest.next().unwrap(), Split::Test);
    }
    for _ in 0..val {
        out.insert(rest.next().unwrap(), Split::Val);
    }
    for id in rest {
        out.insert(id, Split::Train);
    }
    Ok(out)
}

/// Generates the full dataset with per-patient split assignment.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Vec<VolumeSample>, HashMap<u32, Split>)> {
    spec.validate()?;
    let patients: Vec<(u32, usize)> = (0..spec.num_patients as u32)
        .map(|p| (p, spec.timepoints))
        .collect();
    let splits = split_patients(
        &patients,
        spec.timepoints,
        spec.val_patients,
        spec.test_patients,
        spec.seed,
    )?;
    let mut samples = Vec::with_capacity(spec.num_patients * spec.timepoints);
    for p in 0..spec.num_patients as u32 {
        for t in 1..=spec.timepoints as u32 {
            samples.push(generate_sample(spec, p, t)?);
        }
    }
    Ok((samples, splits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice_score;

    #[test]
    fn generation_is_deterministic() {
        let spec = PhantomSpec::default();
        let a = generate_sample(&spec, 3, 2).unwrap();
        let b = generate_sample(&spec, 3, 2).unwrap();
        assert_eq!(a, b);
        assert!(a
            .intensity
            .iter()
            .zip(&b.intensity)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn all_labels_present_with_mass() {
        let spec = PhantomSpec {
            num_patients: 4,
            timepoints: 3,
            val_patients: 1,
            test_patients: 1,
            ..Default::default()
        };
        for p in 0..4 {
            for t in 1..=3 {
                let s = generate_sample(&spec, p, t).unwrap();
                for class in 1..=5u8 {
                    let n = s.labels.voxels.iter().filter(|&&v| v == class).count();
                    assert!(n >= 8, "patient {p} t{t} label {class}: {n} voxels");
                }
                let bg = s.labels.voxels.iter().filter(|&&v| v == 0).count();
                assert!(bg * 2 > s.labels.numel(), "background below half");
                assert!(s.labels.voxels.iter().all(|&v| v <= 5));
            }
        }
    }

    #[test]
    fn cycle_extremes_are_most_dissimilar() {
        let spec = PhantomSpec {
            timepoints: 20,
            ..Default::default()
        };
        let t1 = generate_sample(&spec, 0, 1).unwrap();
        let t2 = generate_sample(&spec, 0, 2).unwrap();
        let t11 = generate_sample(&spec, 0, 11).unwrap();
        let near = dice_score(&t1.labels, &t2.labels, 1).unwrap();
        let far = dice_score(&t1.labels, &t11.labels, 1).unwrap();
        assert!(far < near, "far {far} should be below near {near}");
    }

    #[test]
    fn deformation_phase_is_periodic_and_extremal() {
        for t in 1..=20 {
            let a = deformation_phase(t, 20);
            let b = deformation_phase(t + 20, 20);
            assert!((a - b).abs() < 1e-12);
        }
        assert!((deformation_phase(1, 20) - 1.0).abs() < 1e-12);
        assert!((deformation_phase(11, 20) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_contrast_shrinks_aorta_background_gap() {
        let hi = PhantomSpec::default();
        let lo = PhantomSpec {
            contrast_level: 0.4,
            ..Default::default()
        };
        let gap = |spec: &PhantomSpec| {
            let s = generate_sample(spec, 0, 1).unwrap();
            let mean = |class: u8| {
                let (mut acc, mut n) = (0.0f64, 0usize);
                for (i, &l) in s.labels.voxels.iter().enumerate() {
                    if l == class {
                        acc += s.intensity[i] as f64;
                        n += 1;
                    }
                }
                acc / n as f64
            };
            mean(4) - mean(0)
        };
        assert!(gap(&lo) < gap(&hi));
    }

    #[test]
    fn short_cycle_patients_forced_into_test() {
        let patients = vec![(0, 20), (1, 7), (2, 20), (3, 20), (4, 13), (5, 20)];
        let splits = split_patients(&patients, 20, 1, 2, 9).unwrap();
        assert_eq!(splits[&1], Split::Test);
        assert_eq!(splits[&4], Split::Test);
        let trains = splits.values().filter(|&&s| s == Split::Train).count();
        assert_eq!(trains, 3);
        // No patient in two splits: map keys are unique by construction;
        // verify totals.
        assert_eq!(splits.len(), 6);
    }

    #[test]
    fn too_many_short_patients_is_an_error() {
        let patients = vec![(0, 7), (1, 7), (2, 20), (3, 20)];
        assert!(split_patients(&patients, 20, 1, 1, 9).is_err());
    }
}
