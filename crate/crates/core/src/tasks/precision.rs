use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    /// Index of the image the detection belongs to.
    pub image: usize,
    pub class: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMethod {
    /// Area under the monotone precision envelope at every recall point.
    #[default]
    AllPoint,
    /// Mean of the envelope sampled at recall 0, 0.1, …, 1.
    ElevenPoint,
}

/// AP of a ranked list of hit/miss flags with `n_pos` positives in total.
pub fn ap_from_ranked(hits: &[bool], n_pos: usize, method: ApMethod) -> f64 {
    if n_pos == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_pos as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // Envelope: best precision at this or any deeper rank.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match method {
        ApMethod::AllPoint => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                ap += (r - prev) * p;
                prev = *r;
            }
            ap
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|i| {
                    let level = i as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= level - 1e-12)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

/// Orders by descending score; equal scores keep their input order.
pub(crate) fn rank(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Average precision for one class. Each detection, in score order,
/// matches the still-unmatched ground truth in its image with the highest
/// IoU at or above `iou_thresh`; otherwise (including duplicates) it is a
/// false positive. `gts` holds `(image, box)`.
pub fn average_precision(
    dets: &[Detection],
    gts: &[(usize, BBox)],
    iou_thresh: f64,
    method: ApMethod,
) -> f64 {
    let mut matched = vec![false; gts.len()];
    let hits: Vec<bool> = rank(dets)
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, (img, gt)) in gts.iter().enumerate() {
                if *img != d.image || matched[g] {
                    continue;
                }
                let o = iou(&d.bbox, gt);
                if o >= iou_thresh && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, _)) => {
                    matched[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    ap_from_ranked(&hits, gts.len(), method)
}

/// Greedy non-maximum suppression: keeps detections in score order and
/// drops any whose IoU with a kept one exceeds `iou_thresh`. Returns kept
/// indices in score order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for i in rank(dets) {
        if keep
            .iter()
            .all(|&k| iou(&dets[k].bbox, &dets[i].bbox) <= iou_thresh)
        {
            keep.push(i);
        }
    }
    keep
}
