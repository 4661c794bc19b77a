//! 3-D connected components by breadth-first flood fill, and the
//! small-cluster removal rule.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Six,
    #[default]
    TwentySix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub size: usize,
    /// Smallest linear voxel index; the deterministic tie-breaker.
    pub min_index: usize,
}

/// Flood-fill partition of a binary mask. `labels[i]` is 0 for background
/// and `k + 1` for membership in `components[k]`; components are sorted by
/// decreasing size, ties broken by smallest linear voxel index.
pub struct ComponentSet {
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

pub fn connected_components(
    mask: &[bool],
    extents: [usize; 3],
    connectivity: Connectivity,
) -> ComponentSet {
    let [ex, ey, ez] = extents;
    assert_eq!(mask.len(), ex * ey * ez);
    let mut provisional = vec![0u32; mask.len()];
    let mut comps: Vec<Component> = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..mask.len() {
        if !mask[start] || provisional[start] != 0 {
            continue;
        }
        let id = comps.len() as u32 + 1;
        let mut size = 0usize;
        provisional[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let x = i / (ey * ez);
            let y = (i / ez) % ey;
            let z = i % ez;
            let mut visit = |nx: isize, ny: isize, nz: isize| {
                if nx < 0 || ny < 0 || nz < 0 {
                    return;
                }
                let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                if nx >= ex || ny >= ey || nz >= ez {
                    return;
                }
                let j = (nx * ey + ny) * ez + nz;
                if mask[j] && provisional[j] == 0 {
                    provisional[j] = id;
                    queue.push_back(j);
                }
            };
            let (xi, yi, zi) = (x as isize, y as isize, z as isize);
            match connectivity {
                Connectivity::Six => {
                    visit(xi - 1, yi, zi);
                    visit(xi + 1, yi, zi);
                    visit(xi, yi - 1, zi);
                    visit(xi, yi + 1, zi);
                    visit(xi, yi, zi - 1);
                    visit(xi, yi, zi + 1);
                }
                Connectivity::TwentySix => {
                    for dx in -1..=1 {
                        for dy in -1..=1 {
                            for dz in -1..=1 {
                                if dx == 0 && dy == 0 && dz == 0 {
                                    continue;
                                }
                                visit(xi + dx, yi + dy, zi + dz);
                            }
                        }
                    }
                }
            }
        }
        comps.push(Component {
            size,
            min_index: start,
        });
    }

    // Sort by decreasing size, then by first-seen voxel; remap labels.
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by(|&a, &b| {
        comps[b]
            .size
            .cmp(&comps[a].size)
            .then(comps[a].min_index.cmp(&comps[b].min_index))
    });
    let mut remap = vec![0u32; comps.len() + 1];
    for (new_rank, &old) in order.iter().enumerate() {
        remap[old + 1] = new_rank as u32 + 1;
    }
    let labels = provisional.into_iter().map(|p| remap[p as usize]).collect();
    let components = order.into_iter().map(|i| comps[i]).collect();
    ComponentSet { labels, components }
}

/// Class id of the pulmonary veins, the one label whose ground truth is
/// legitimately multi-component.
pub const PV_CLASS: u8 = 5;

/// Post-processing cluster rule: every foreground class keeps only its
/// largest connected component, except the PV class which keeps every
/// component at least half as large (in voxels) as its largest.
pub fn retain_clusters(pred: &LabelVolume, connectivity: Connectivity) -> LabelVolume {
    let mut out = pred.clone();
    let mut classes: Vec<u8> = pred.voxels.iter().copied().filter(|&v| v != 0).collect();
    classes.sort_unstable();
    classes.dedup();
    for class_id in classes {
        let mask = pred.class_mask(class_id);
        let set = connected_components(&mask, pred.extents, connectivity);
        if set.components.len() <= 1 {
            continue;
        }
        let largest = set.components[0].size;
        let keep: Vec<bool> = set
            .components
            .iter()
            .map(|c| {
                if class_id == PV_CLASS {
                    // size >= ceil(largest / 2)
                    2 * c.size >= largest
                } else {
                    false
                }
            })
            .enumerate()
            .map(|(k, keep_pv)| k == 0 || keep_pv)
            .collect();
        for (i, &comp_label) in set.labels.iter().enumerate() {
            if comp_label > 0 && !keep[comp_label as usize - 1] {
                out.voxels[i] = 0;
            }
        }
    }
    out
}
