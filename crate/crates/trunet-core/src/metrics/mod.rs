//! Volumetric evaluation: per-ROI Dice and HD95, connected-component
//! post-processing, bounding boxes, and the aggregated report.

mod boxes;
mod components;
mod dice;
mod hausdorff;

pub use boxes::{bounding_box, tight_box, VoxelBox};
pub use components::{
    connected_components, retain_clusters, Component, ComponentSet, Connectivity, PV_CLASS,
};
pub use dice::dice_score;
pub use hausdorff::{hd95, surface_voxels, volume_diagonal_mm};

use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};
use crate::exec;
use crate::volume::LabelVolume;

/// Cardiac ROI names for the 6-class label set; other class counts fall
/// back to generic names.
pub fn roi_name(class_id: u8, num_classes: usize) -> String {
    const NAMES: [&str; 5] = ["LV", "LA", "LAA", "AA", "PV"];
    if num_classes == 6 && (1..=5).contains(&class_id) {
        NAMES[class_id as usize - 1].to_string()
    } else {
        format!("class{class_id}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeRoiRow {
    pub volume_id: String,
    pub roi: String,
    pub class_id: u8,
    pub dss: f64,
    pub hd95_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoiSummary {
    pub roi: String,
    pub class_id: u8,
    pub dss_mean: f64,
    pub dss_sd: f64,
    pub hd95_mean: f64,
    pub hd95_sd: f64,
}

/// Per-volume rows plus per-ROI means/SDs and the macro averages over the
/// foreground ROIs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<VolumeRoiRow>,
    pub per_roi: Vec<RoiSummary>,
    pub macro_dss: f64,
    pub macro_hd95: f64,
    pub cluster_removal_applied: bool,
}

impl MetricsReport {
    /// CSV with the per-volume rows followed by a per-ROI summary block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("volume_id,roi,dss,hd95_mm\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.volume_id, r.roi, r.dss, r.hd95_mm
            ));
        }
        s.push_str("\nsummary,roi,dss_mean,dss_sd,hd95_mean,hd95_sd\n");
        for r in &self.per_roi {
            s.push_str(&format!(
                "summary,{},{:.6},{:.6},{:.6},{:.6}\n",
                r.roi, r.dss_mean, r.dss_sd, r.hd95_mean, r.hd95_sd
            ));
        }
        s.push_str(&format!(
            "summary,macro,{:.6},,{:.6},\n",
            self.macro_dss, self.macro_hd95
        ));
        s
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates predictions against references: per-volume, per-ROI DSS and
/// HD95, per-ROI means/SDs over volumes, and macro averages over the
/// foreground ROIs. `apply_cluster_removal` runs `retain_clusters` on each
/// prediction first. Volumes are processed independently (and in parallel).
pub fn evaluate(
    preds: &[LabelVolume],
    truths: &[LabelVolume],
    volume_ids: &[String],
    num_classes: usize,
    apply_cluster_removal: bool,
    connectivity: Connectivity,
) -> Result<MetricsReport> {
    if preds.len() != truths.len() || preds.len() != volume_ids.len() {
        return Err(usage_err!(
            "evaluate needs aligned lists, got {} predictions, {} references, {} ids",
            preds.len(),
            truths.len(),
            volume_ids.len()
        ));
    }
    if preds.is_empty() {
        return Err(usage_err!("evaluate called with no volumes"));
    }
    let classes: Vec<u8> = (1..num_classes as u8).collect();
    let per_volume: Vec<Result<Vec<(f64, f64)>>> = exec::map_range(preds.len(), |i| {
        let pred = if apply_cluster_removal {
            retain_clusters(&preds[i], connectivity)
        } else {
            preds[i].clone()
        };
        classes
            .iter()
            .map(|&c| Ok((dice_score(&pred, &truths[i], c)?, hd95(&pred, &truths[i], c)?)))
            .collect()
    });

    let mut rows = Vec::new();
    let mut by_class: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); classes.len()];
    for (i, vol) in per_volume.into_iter().enumerate() {
        let vol = vol?;
        for (k, &(dss, hd)) in vol.iter().enumerate() {
            rows.push(VolumeRoiRow {
                volume_id: volume_ids[i].clone(),
                roi: roi_name(classes[k], num_classes),
                class_id: classes[k],
                dss,
                hd95_mm: hd,
            });
            by_class[k].0.push(dss);
            by_class[k].1.push(hd);
        }
    }
    let per_roi: Vec<RoiSummary> = classes
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let (dss_mean, dss_sd) = mean_sd(&by_class[k].0);
            let (hd95_mean, hd95_sd) = mean_sd(&by_class[k].1);
            RoiSummary {
                roi: roi_name(c, num_classes),
                class_id: c,
                dss_mean,
                dss_sd,
                hd95_mean,
                hd95_sd,
            }
        })
        .collect();
    let macro_dss = per_roi.iter().map(|r| r.dss_mean).sum::<f64>() / per_roi.len() as f64;
    let macro_hd95 = per_roi.iter().map(|r| r.hd95_mean).sum::<f64>() / per_roi.len() as f64;
    Ok(MetricsReport {
        rows,
        per_roi,
        macro_dss,
        macro_hd95,
        cluster_removal_applied: apply_cluster_removal,
    })
}

/// Macro DSS/HD95 of a single prediction, for validation tracking.
pub fn macro_scores(pred: &LabelVolume, truth: &LabelVolume, num_classes: usize) -> Result<(f64, f64)> {
    let mut dss = 0.0;
    let mut hd = 0.0;
    let fg = (num_classes - 1) as f64;
    for c in 1..num_classes as u8 {
        dss += dice_score(pred, truth, c)?;
        hd += hd95(pred, truth, c)?;
    }
    Ok((dss / fg, hd / fg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(extents: [usize; 3], voxels: Vec<u8>) -> LabelVolume {
        LabelVolume::new(extents, voxels, [1.0; 3]).unwrap()
    }

    fn phantom_like() -> LabelVolume {
        // All five foreground classes present as separated slabs.
        let e = [20, 4, 4];
        let mut v = vec![0u8; 20 * 16];
        for class in 1..=5u8 {
            let x0 = (class as usize - 1) * 4;
            for x in x0..x0 + 2 {
                for y in 0..2 {
                    for z in 0..2 {
                        v[(x * 4 + y) * 4 + z] = class;
                    }
                }
            }
        }
        vol(e, v)
    }

    #[test]
    fn perfect_prediction_scores_perfectly() {
        let t = phantom_like();
        let report = evaluate(
            &[t.clone(), t.clone()],
            &[t.clone(), t.clone()],
            &["a".into(), "b".into()],
            6,
            false,
            Connectivity::TwentySix,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 10);
        assert!(report.rows.iter().all(|r| r.dss == 1.0 && r.hd95_mm == 0.0));
        assert_eq!(report.macro_dss, 1.0);
        assert_eq!(report.macro_hd95, 0.0);
    }

    #[test]
    fn macro_is_mean_of_per_roi_means() {
        let t = phantom_like();
        let mut p = t.clone();
        // Remove one class entirely from the prediction.
        for v in p.voxels.iter_mut() {
            if *v == 3 {
                *v = 0;
            }
        }
        let report = evaluate(
            &[p],
            &[t],
            &["a".into()],
            6,
            false,
            Connectivity::TwentySix,
        )
        .unwrap();
        let mean: f64 = report.per_roi.iter().map(|r| r.dss_mean).sum::<f64>() / 5.0;
        assert!((report.macro_dss - mean).abs() < 1e-12);
        assert!(report.macro_dss < 1.0);
    }

    #[test]
    fn cluster_removal_drops_far_spurious_cluster_and_never_raises_hd95() {
        // Truth: one LV slab. Prediction: the same slab plus a distant
        // one-voxel LV cluster. The removed cluster is farther from the
        // truth surface than every retained voxel, so removal cannot raise
        // HD95 (here it strictly lowers it).
        let e = [30, 4, 4];
        let mut truth = vec![0u8; 30 * 16];
        let mut pred = vec![0u8; 30 * 16];
        for x in 0..3 {
            for y in 0..2 {
                for z in 0..2 {
                    truth[(x * 4 + y) * 4 + z] = 1;
                    pred[(x * 4 + y) * 4 + z] = 1;
                }
            }
        }
        pred[(29 * 4 + 3) * 4 + 3] = 1; // far spurious cluster
        let tv = vol(e, truth);
        let pv = vol(e, pred);
        let kept = evaluate(
            &[pv.clone()],
            &[tv.clone()],
            &["a".into()],
            6,
            false,
            Connectivity::TwentySix,
        )
        .unwrap();
        let removed = evaluate(
            &[pv],
            &[tv],
            &["a".into()],
            6,
            true,
            Connectivity::TwentySix,
        )
        .unwrap();
        let hd_kept = kept.rows[0].hd95_mm;
        let hd_removed = removed.rows[0].hd95_mm;
        assert!(hd_removed <= hd_kept);
        assert!(hd_removed < hd_kept, "{hd_removed} vs {hd_kept}");
        assert!(removed.rows[0].dss > kept.rows[0].dss);
    }

    #[test]
    fn empty_inputs_are_usage_errors() {
        assert!(evaluate(&[], &[], &[], 6, false, Connectivity::TwentySix).is_err());
    }

    #[test]
    fn csv_contains_rows_and_summary() {
        let t = phantom_like();
        let report = evaluate(
            &[t.clone()],
            &[t],
            &["vol0".into()],
            6,
            false,
            Connectivity::TwentySix,
        )
        .unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("volume_id,roi,dss,hd95_mm"));
        assert!(csv.contains("vol0,LV,"));
        assert!(csv.contains("summary,PV,"));
        assert!(csv.contains("summary,macro,"));
    }
}
