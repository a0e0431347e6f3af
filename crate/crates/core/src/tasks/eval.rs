//! Dataset-level metrics: classification mAP over images, detection AP
//! per class after class-wise NMS.

use super::bbox::bbox_decode;
use super::precision::{ap_from_ranked, average_precision, nms, rank, ApMethod, Detection};
use super::{DET_IOU, NMS_IOU, PART_IOU};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

/// Region-head output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPrediction {
    /// `M×(K+1)` row-stochastic scores, column 0 = background.
    pub scores: Tensor,
    /// `M×4(K+1)` box deltas.
    pub deltas: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImagePrediction {
    pub cls: Option<Vec<f64>>,
    pub det: Option<RegionPrediction>,
    pub part: Option<RegionPrediction>,
}

/// Ground truth needed for scoring one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub width: f64,
    pub height: f64,
    pub proposals: Vec<BBox>,
    pub img_label: Vec<f64>,
    pub objects: Vec<(usize, BBox)>,
    pub parts: Vec<(usize, BBox)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub n_cls: usize,
    pub n_part: usize,
    pub det_iou: f64,
    pub part_iou: f64,
    pub nms_iou: f64,
    pub method: ApMethod,
}

impl EvalConfig {
    pub fn new(n_cls: usize, n_part: usize) -> Self {
        Self {
            n_cls,
            n_part,
            det_iou: DET_IOU,
            part_iou: PART_IOU,
            nms_iou: NMS_IOU,
            method: ApMethod::AllPoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAps {
    pub per_class: Vec<f64>,
}

impl ClassAps {
    pub fn mean(&self) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.iter().sum::<f64>() / self.per_class.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub cls: Option<ClassAps>,
    pub det: Option<ClassAps>,
    pub part: Option<ClassAps>,
}

impl Metrics {
    pub fn cls_map(&self) -> Option<f64> {
        self.cls.as_ref().map(ClassAps::mean)
    }

    pub fn det_ap(&self) -> Option<f64> {
        self.det.as_ref().map(ClassAps::mean)
    }

    pub fn part_ap(&self) -> Option<f64> {
        self.part.as_ref().map(ClassAps::mean)
    }
}

/// Decoded, clipped and NMS-filtered detections of one image, per class.
pub(crate) fn region_detections(
    image: usize,
    pred: &RegionPrediction,
    truth: &SceneTruth,
    classes: usize,
    nms_iou: f64,
) -> Result<Vec<Vec<Detection>>> {
    let k1 = classes + 1;
    let rows = truth.proposals.len();
    if pred.scores.shape() != [rows, k1] || pred.deltas.shape() != [rows, 4 * k1] {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            left: pred.scores.shape().to_vec(),
            right: vec![rows, k1],
        });
    }
    let mut out = vec![Vec::new(); classes];
    for (c, per_class) in out.iter_mut().enumerate() {
        let col = c + 1;
        let mut dets = Vec::with_capacity(rows);
        for (m, proposal) in truth.proposals.iter().enumerate() {
            let d = &pred.deltas.row(m)[4 * col..4 * col + 4];
            let decoded = bbox_decode(proposal, &[d[0], d[1], d[2], d[3]])?;
            let Some(bbox) = decoded.clip(truth.width, truth.height) else {
                continue;
            };
            dets.push(Detection {
                image,
                class: c,
                bbox,
                score: pred.scores.row(m)[col],
            });
        }
        *per_class = nms(&dets, nms_iou).into_iter().map(|i| dets[i]).collect();
    }
    Ok(out)
}

fn detection_aps(
    preds: &[ImagePrediction],
    truths: &[SceneTruth],
    pick: impl Fn(&ImagePrediction) -> Option<&RegionPrediction>,
    gt: impl Fn(&SceneTruth) -> &[(usize, BBox)],
    classes: usize,
    iou_thresh: f64,
    cfg: &EvalConfig,
) -> Result<Option<ClassAps>> {
    let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); classes];
    let mut gts: Vec<Vec<(usize, BBox)>> = vec![Vec::new(); classes];
    for (i, (p, t)) in preds.iter().zip(truths).enumerate() {
        let Some(rp) = pick(p) else { return Ok(None) };
        for (c, d) in region_detections(i, rp, t, classes, cfg.nms_iou)?
            .into_iter()
            .enumerate()
        {
            dets[c].extend(d);
        }
        for &(c, b) in gt(t) {
            gts[c].push((i, b));
        }
    }
    let per_class = (0..classes)
        .map(|c| average_precision(&dets[c], &gts[c], iou_thresh, cfg.method))
        .collect();
    Ok(Some(ClassAps { per_class }))
}

/// Metrics over a dataset. A task is scored only when every prediction
/// carries it.
pub fn evaluate(
    preds: &[ImagePrediction],
    truths: &[SceneTruth],
    cfg: &EvalConfig,
) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "evaluate: {} predictions for {} scenes",
            preds.len(),
            truths.len()
        )));
    }
    let cls = if preds.iter().all(|p| p.cls.is_some()) {
        let mut per_class = Vec::with_capacity(cfg.n_cls);
        for c in 0..cfg.n_cls {
            let ranked: Vec<Detection> = preds
                .iter()
                .enumerate()
                .map(|(i, p)| Detection {
                    image: i,
                    class: c,
                    bbox: BBox {
                        x1: 0.0,
                        y1: 0.0,
                        x2: 1.0,
                        y2: 1.0,
                    },
                    score: p.cls.as_ref().unwrap()[c],
                })
                .collect();
            let hits: Vec<bool> = rank(&ranked)
                .into_iter()
                .map(|i| truths[i].img_label[c] > 0.5)
                .collect();
            let n_pos = truths.iter().filter(|t| t.img_label[c] > 0.5).count();
            per_class.push(ap_from_ranked(&hits, n_pos, cfg.method));
        }
        Some(ClassAps { per_class })
    } else {
        None
    };
    let det = detection_aps(
        preds,
        truths,
        |p| p.det.as_ref(),
        |t| &t.objects,
        cfg.n_cls,
        cfg.det_iou,
        cfg,
    )?;
    let part = if cfg.n_part > 0 {
        detection_aps(
            preds,
            truths,
            |p| p.part.as_ref(),
            |t| &t.parts,
            cfg.n_part,
            cfg.part_iou,
            cfg,
        )?
    } else {
        None
    };
    Ok(Metrics { cls, det, part })
}
