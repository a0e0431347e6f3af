use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::tensor::SeedStream;

use super::scene::{Scene, MIN_BOX_SIDE};

/// Candidate regions of one image, fixed for all iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub boxes: Vec<BBox>,
}

impl RegionSet {
    /// Rejects degenerate boxes and boxes that miss the image.
    pub fn new(boxes: Vec<BBox>, width: f64, height: f64) -> Result<Self> {
        for b in &boxes {
            b.validate()?;
            if b.x2 <= 0.0 || b.y2 <= 0.0 || b.x1 >= width || b.y1 >= height {
                return Err(Error::InvalidArgument(format!(
                    "region {b:?} outside {width}×{height}"
                )));
            }
        }
        Ok(Self { boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalConfig {
    /// Half-width of the uniform relative scale and translation jitter.
    pub jitter: f64,
    /// Every ground-truth box gets one proposal at least this close.
    pub min_iou: f64,
    /// Shares of the non-guaranteed proposals drawn as jittered
    /// ground truth and as uniformly random boxes; sliding windows fill
    /// the rest.
    pub jittered_share: f64,
    pub random_share: f64,
    pub window_sides: [usize; 3],
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            jitter: 0.15,
            min_iou: 0.7,
            jittered_share: 0.5,
            random_share: 0.25,
            window_sides: [12, 24, 40],
        }
    }
}

fn jittered(gt: &BBox, j: f64, w: f64, h: f64, s: &mut SeedStream) -> Option<BBox> {
    let (cx, cy) = gt.center();
    let bw = gt.width() * (1.0 + s.gen_range(-j, j));
    let bh = gt.height() * (1.0 + s.gen_range(-j, j));
    let cx = cx + gt.width() * s.gen_range(-j, j);
    let cy = cy + gt.height() * s.gen_range(-j, j);
    let b = BBox {
        x1: cx - 0.5 * bw,
        y1: cy - 0.5 * bh,
        x2: cx + 0.5 * bw,
        y2: cy + 0.5 * bh,
    };
    b.clip(w, h)
}

fn random_box(w: f64, h: f64, s: &mut SeedStream) -> BBox {
    let bw = s.gen_range(MIN_BOX_SIDE, w);
    let bh = s.gen_range(MIN_BOX_SIDE, h);
    let x = s.gen_range(0.0, w - bw);
    let y = s.gen_range(0.0, h - bh);
    BBox {
        x1: x,
        y1: y,
        x2: x + bw,
        y2: y + bh,
    }
}

fn windows(sides: &[usize], w: usize, h: usize) -> Vec<BBox> {
    let mut out = Vec::new();
    for &side in sides.iter().filter(|&&k| k <= w && k <= h) {
        let step = (side / 2).max(1);
        let mut y = 0;
        while y + side <= h {
            let mut x = 0;
            while x + side <= w {
                out.push(BBox {
                    x1: x as f64,
                    y1: y as f64,
                    x2: (x + side) as f64,
                    y2: (y + side) as f64,
                });
                x += step;
            }
            y += step;
        }
    }
    out
}

/// `m` proposals for a scene with the default mixture.
pub fn propose_regions(scene: &Scene, m: usize, seed: u64) -> Result<RegionSet> {
    propose_regions_with(scene, m, seed, &ProposalConfig::default())
}

/// One jittered copy of every object and part box within `min_iou` of it,
/// then jittered ground truth, random boxes and sliding windows in the
/// configured shares, shuffled. All boxes are clipped to the canvas.
pub fn propose_regions_with(
    scene: &Scene,
    m: usize,
    seed: u64,
    cfg: &ProposalConfig,
) -> Result<RegionSet> {
    let gts: Vec<BBox> = scene
        .objects
        .iter()
        .map(|o| o.bbox)
        .chain(scene.parts.iter().map(|p| p.bbox))
        .collect();
    if m < gts.len() || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "propose_regions: M = {m} but the scene has {} ground-truth boxes",
            gts.len()
        )));
    }
    let (w, h) = (scene.width() as f64, scene.height() as f64);
    let mut s = SeedStream::new(seed);
    let mut boxes = Vec::with_capacity(m);
    for gt in &gts {
        let hit = (0..64)
            .filter_map(|_| jittered(gt, cfg.jitter, w, h, &mut s))
            .find(|b| iou(b, gt) >= cfg.min_iou);
        boxes.push(hit.unwrap_or(*gt));
    }
    let rest = m - gts.len();
    let n_jit = if gts.is_empty() {
        0
    } else {
        ((rest as f64 * cfg.jittered_share).round() as usize).min(rest)
    };
    let n_rand = ((rest as f64 * cfg.random_share).round() as usize).min(rest - n_jit);
    for _ in 0..n_jit {
        let gt = &gts[s.gen_index(gts.len())];
        let b = (0..64)
            .find_map(|_| jittered(gt, cfg.jitter, w, h, &mut s))
            .unwrap_or(*gt);
        boxes.push(b);
    }
    for _ in 0..n_rand {
        boxes.push(random_box(w, h, &mut s));
    }
    let grid = windows(&cfg.window_sides, scene.width(), scene.height());
    if grid.is_empty() {
        while boxes.len() < m {
            boxes.push(random_box(w, h, &mut s));
        }
    } else {
        let order = s.permutation(grid.len());
        let n_win = m - boxes.len();
        boxes.extend((0..n_win).map(|i| grid[order[i % grid.len()]]));
    }
    let order = s.permutation(m);
    let boxes = order.into_iter().map(|i| boxes[i]).collect();
    RegionSet::new(boxes, w, h)
}
