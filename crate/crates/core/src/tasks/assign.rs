use super::bbox::bbox_encode;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// IoU thresholds for labelling proposals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssignConfig {
    /// Minimum IoU for a foreground label.
    pub fg_iou: f64,
    /// Background range `[bg_lo, bg_hi)`; below `bg_lo` the region is ignored.
    pub bg_lo: f64,
    pub bg_hi: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            fg_iou: 0.5,
            bg_lo: 0.1,
            bg_hi: 0.5,
        }
    }
}

/// Per-region supervision. `labels[m]` is `None` for ignored regions,
/// `Some(0)` for background and `Some(k)` (k ≥ 1) for class `k − 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionTargets {
    pub labels: Vec<Option<usize>>,
    pub deltas: Vec<Option<[f64; 4]>>,
}

impl RegionTargets {
    pub fn num_foreground(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, Some(k) if *k > 0))
            .count()
    }

    /// One-hot label rows over `classes + 1` columns; ignored regions are
    /// treated as background.
    pub fn one_hot(&self, classes: usize) -> Vec<f64> {
        let k1 = classes + 1;
        let mut rows = vec![0.0; self.labels.len() * k1];
        for (m, l) in self.labels.iter().enumerate() {
            rows[m * k1 + l.unwrap_or(0)] = 1.0;
        }
        rows
    }
}

/// Labels each region with the class of its highest-IoU ground truth
/// (lowest index on ties). `gts` holds `(class, box)` with 0-based classes.
pub fn assign_regions(
    regions: &[BBox],
    gts: &[(usize, BBox)],
    cfg: &AssignConfig,
) -> Result<RegionTargets> {
    if regions.is_empty() {
        return Err(Error::InvalidArgument("assign_regions: no regions".into()));
    }
    let mut out = RegionTargets {
        labels: Vec::with_capacity(regions.len()),
        deltas: Vec::with_capacity(regions.len()),
    };
    for r in regions {
        let mut best: Option<(usize, f64)> = None;
        for (g, (_, gt)) in gts.iter().enumerate() {
            let o = iou(r, gt);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        let (label, delta) = match best {
            Some((g, o)) if o >= cfg.fg_iou => {
                let (class, gt) = &gts[g];
                (Some(class + 1), Some(bbox_encode(r, gt)?))
            }
            Some((_, o)) if o >= cfg.bg_lo && o < cfg.bg_hi => (Some(0), None),
            _ => (None, None),
        };
        out.labels.push(label);
        out.deltas.push(delta);
    }
    Ok(out)
}
