use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::{SeedStream, Tensor};

/// Smallest admissible side of any object or part box, in pixels.
pub const MIN_BOX_SIDE: f64 = 6.0;

const BACKGROUND: f64 = 0.5;
const PLACEMENT_TRIES: usize = 200;
const LAYOUT_RESTARTS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub parts_per_class: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object side lengths are drawn uniformly from whole pixels in
    /// `[min_side, max_side]`.
    pub min_side: usize,
    pub max_side: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_classes: 5,
            parts_per_class: 2,
            min_objects: 1,
            max_objects: 3,
            min_side: 20,
            max_side: 30,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn n_part_classes(&self) -> usize {
        self.n_classes * self.parts_per_class
    }

    /// Part `p` of an object spans the vertical slot `[p, p+1)·h/P`,
    /// shrunk by a fifth of the slot at both ends, and the middle 70% of
    /// the width.
    fn part_height(&self, object_height: f64) -> f64 {
        0.6 * object_height / self.parts_per_class as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1".into());
        }
        if self.min_objects > self.max_objects {
            return bad(format!(
                "objects range {}..={} is empty",
                self.min_objects, self.max_objects
            ));
        }
        if self.min_side > self.max_side || (self.min_side as f64) < MIN_BOX_SIDE {
            return bad(format!(
                "object sides {}..={} must be ordered and at least {MIN_BOX_SIDE}",
                self.min_side, self.max_side
            ));
        }
        if self.parts_per_class > 0 {
            let h = self.part_height(self.min_side as f64);
            let w = 0.7 * self.min_side as f64;
            if h < MIN_BOX_SIDE || w < MIN_BOX_SIDE {
                return bad(format!(
                    "parts of a {0}×{0} object would be {w}×{h} px",
                    self.min_side
                ));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {}", self.noise_std));
        }
        // A grid of max-size cells always admits a non-overlapping layout.
        let cells = (self.width / self.max_side) * (self.height / self.max_side);
        if self.max_objects > 0 && cells < self.max_objects {
            return bad(format!(
                "{} objects of side {} cannot be placed on {}×{}",
                self.max_objects, self.max_side, self.width, self.height
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub class: usize,
    pub bbox: BBox,
    /// Index into the scene's objects.
    pub parent: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `H×W×3` pixels in `[0, 1]`.
    pub image: Tensor,
    pub objects: Vec<Object>,
    pub parts: Vec<Part>,
    pub img_label: Vec<f64>,
}

impl Scene {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn object_targets(&self) -> Vec<(usize, BBox)> {
        self.objects.iter().map(|o| (o.class, o.bbox)).collect()
    }

    pub fn part_targets(&self) -> Vec<(usize, BBox)> {
        self.parts.iter().map(|p| (p.class, p.bbox)).collect()
    }

    /// Checks label consistency, part containment and box validity.
    pub fn validate(&self, spec: &SceneSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("scene: {m}")));
        if self.image.shape() != [spec.height, spec.width, 3] {
            return bad(format!("image shape {:?}", self.image.shape()));
        }
        let (w, h) = (spec.width as f64, spec.height as f64);
        let mut label = vec![0.0; spec.n_classes];
        for o in &self.objects {
            o.bbox.validate()?;
            if o.class >= spec.n_classes
                || o.bbox.x1 < 0.0
                || o.bbox.y1 < 0.0
                || o.bbox.x2 > w
                || o.bbox.y2 > h
            {
                return bad(format!("object {o:?} out of range"));
            }
            if o.bbox.width() < MIN_BOX_SIDE || o.bbox.height() < MIN_BOX_SIDE {
                return bad(format!("object {o:?} too small"));
            }
            label[o.class] = 1.0;
        }
        if label != self.img_label {
            return bad(format!(
                "img_label {:?} disagrees with objects",
                self.img_label
            ));
        }
        for p in &self.parts {
            p.bbox.validate()?;
            let Some(parent) = self.objects.get(p.parent) else {
                return bad(format!("part {p:?} has no parent"));
            };
            if !parent.bbox.strictly_contains(&p.bbox) {
                return bad(format!("part {p:?} not inside its parent"));
            }
            if p.class / spec.parts_per_class.max(1) != parent.class
                || p.class >= spec.n_part_classes()
            {
                return bad(format!(
                    "part {p:?} class does not belong to object class {}",
                    parent.class
                ));
            }
            if p.bbox.width() < MIN_BOX_SIDE - 1e-9 || p.bbox.height() < MIN_BOX_SIDE - 1e-9 {
                return bad(format!("part {p:?} too small"));
            }
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("pixel outside [0, 1]".into());
        }
        Ok(())
    }
}

/// Class colour: evenly spaced hues at fixed saturation and value.
pub(crate) fn class_color(class: usize, n_classes: usize) -> [f64; 3] {
    let hue = 6.0 * class as f64 / n_classes as f64;
    let (s, v) = (0.85, 0.9);
    let f = hue - hue.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match hue.floor() as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Part colour: the object colour pulled halfway toward white for even
/// part indices and toward black for odd ones.
fn part_color(base: [f64; 3], part: usize) -> [f64; 3] {
    let target = if part.is_multiple_of(2) { 1.0 } else { 0.0 };
    base.map(|c| 0.5 * (c + target))
}

fn paint(image: &mut [f64], width: usize, b: &BBox, color: [f64; 3]) {
    // Pixel (x, y) is covered when its centre lies inside the box.
    let x0 = (b.x1 - 0.5).ceil().max(0.0) as usize;
    let y0 = (b.y1 - 0.5).ceil().max(0.0) as usize;
    let x1 = ((b.x2 - 0.5).ceil().max(0.0) as usize).min(width);
    let y1 = (b.y2 - 0.5).ceil().max(0.0) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let i = (y * width + x) * 3;
            if i + 3 <= image.len() {
                image[i..i + 3].copy_from_slice(&color);
            }
        }
    }
}

fn overlaps(a: &BBox, b: &BBox) -> bool {
    a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2
}

fn sample_layout(spec: &SceneSpec, n: usize, s: &mut SeedStream) -> Vec<BBox> {
    let side = |s: &mut SeedStream| {
        (spec.min_side + s.gen_index(spec.max_side - spec.min_side + 1)) as f64
    };
    for _ in 0..LAYOUT_RESTARTS {
        let mut boxes: Vec<BBox> = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..PLACEMENT_TRIES {
                let (w, h) = (side(s), side(s));
                let x = s.gen_index(spec.width - w as usize + 1) as f64;
                let y = s.gen_index(spec.height - h as usize + 1) as f64;
                let b = BBox {
                    x1: x,
                    y1: y,
                    x2: x + w,
                    y2: y + h,
                };
                if boxes.iter().all(|o| !overlaps(o, &b)) {
                    boxes.push(b);
                    break;
                }
            }
        }
        if boxes.len() == n {
            return boxes;
        }
    }
    // Fall back to distinct cells of a max-side grid, which validate()
    // guarantees exist.
    let cols = spec.width / spec.max_side;
    let cells = cols * (spec.height / spec.max_side);
    s.permutation(cells)
        .into_iter()
        .take(n)
        .map(|c| {
            let (w, h) = (side(s), side(s));
            let x = ((c % cols) * spec.max_side) as f64;
            let y = ((c / cols) * spec.max_side) as f64;
            BBox {
                x1: x,
                y1: y,
                x2: x + w,
                y2: y + h,
            }
        })
        .collect()
}

fn parts_of(spec: &SceneSpec, object: &Object, parent: usize) -> Vec<Part> {
    let b = object.bbox;
    let (w, h) = (b.width(), b.height());
    let slot = h / spec.parts_per_class.max(1) as f64;
    (0..spec.parts_per_class)
        .map(|p| {
            let top = b.y1 + p as f64 * slot + 0.2 * slot;
            let bbox = BBox {
                x1: b.x1 + 0.15 * w,
                y1: top,
                x2: b.x2 - 0.15 * w,
                y2: top + spec.part_height(h),
            };
            Part {
                class: object.class * spec.parts_per_class + p,
                bbox,
                parent,
            }
        })
        .collect()
}

pub(crate) fn generate_with(spec: &SceneSpec, s: &mut SeedStream) -> Result<Scene> {
    spec.validate()?;
    let n = spec.min_objects + s.gen_index(spec.max_objects - spec.min_objects + 1);
    let boxes = sample_layout(spec, n, s);
    let objects: Vec<Object> = boxes
        .into_iter()
        .map(|bbox| Object {
            class: s.gen_index(spec.n_classes),
            bbox,
        })
        .collect();
    let parts: Vec<Part> = objects
        .iter()
        .enumerate()
        .flat_map(|(i, o)| parts_of(spec, o, i))
        .collect();

    let mut image = vec![BACKGROUND; spec.height * spec.width * 3];
    let mut img_label = vec![0.0; spec.n_classes];
    for o in &objects {
        let color = class_color(o.class, spec.n_classes);
        paint(&mut image, spec.width, &o.bbox, color);
        img_label[o.class] = 1.0;
    }
    for p in &parts {
        let base = class_color(objects[p.parent].class, spec.n_classes);
        paint(
            &mut image,
            spec.width,
            &p.bbox,
            part_color(base, p.class % spec.parts_per_class),
        );
    }
    if spec.noise_std > 0.0 {
        for v in &mut image {
            *v = (*v + s.gen_gaussian(0.0, spec.noise_std)).clamp(0.0, 1.0);
        }
    }
    Ok(Scene {
        image: Tensor::new(vec![spec.height, spec.width, 3], image)?,
        objects,
        parts,
        img_label,
    })
}

/// One scene, fully determined by `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    generate_with(spec, &mut SeedStream::new(seed))
}

/// Scenes `first..first+count` of the stream seeded by `spec.seed`. Each
/// scene uses its own sub-stream, so any index range is reproducible on
/// its own.
pub fn generate_scenes(spec: &SceneSpec, first: usize, count: usize) -> Result<Vec<Scene>> {
    (first..first + count)
        .map(|i| generate_with(spec, &mut SeedStream::derived(spec.seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_objects_gives_blank_scene() {
        let spec = SceneSpec {
            min_objects: 0,
            max_objects: 0,
            ..Default::default()
        };
        let s = generate_scene(&spec, 3).unwrap();
        assert!(s.objects.is_empty() && s.parts.is_empty());
        assert_eq!(s.img_label, vec![0.0; 5]);
        let mean = s.image.data().iter().sum::<f64>() / s.image.numel() as f64;
        assert!((mean - BACKGROUND).abs() < 0.01);
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, 11).unwrap();
        let b = generate_scene(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert!(a
            .image
            .data()
            .iter()
            .zip(b.image.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, generate_scene(&spec, 12).unwrap());
    }

    #[test]
    fn thousand_scenes_are_valid() {
        let spec = SceneSpec::default();
        let scenes = generate_scenes(&spec, 0, 1000).unwrap();
        let mut co_occurring = 0;
        for (i, s) in scenes.iter().enumerate() {
            s.validate(&spec)
                .unwrap_or_else(|e| panic!("scene {i}: {e}"));
            assert_eq!(s.parts.len(), 2 * s.objects.len());
            for (a, oa) in s.objects.iter().enumerate() {
                for ob in &s.objects[a + 1..] {
                    assert!(!overlaps(&oa.bbox, &ob.bbox));
                }
            }
            co_occurring += (s.img_label.iter().sum::<f64>() > 1.0) as usize;
        }
        assert!(co_occurring > 100, "{co_occurring}");
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let cases = [
            SceneSpec {
                max_objects: 5,
                ..Default::default()
            },
            SceneSpec {
                min_side: 8,
                ..Default::default()
            },
            SceneSpec {
                max_side: 70,
                ..Default::default()
            },
            SceneSpec {
                min_objects: 4,
                max_objects: 3,
                ..Default::default()
            },
            SceneSpec {
                n_classes: 0,
                ..Default::default()
            },
        ];
        for spec in cases {
            assert!(
                matches!(generate_scene(&spec, 0), Err(Error::InfeasibleSpec(_))),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn parts_are_painted_in_their_colours() {
        let spec = SceneSpec {
            noise_std: 0.0,
            min_objects: 1,
            max_objects: 1,
            ..Default::default()
        };
        let s = generate_scene(&spec, 5).unwrap();
        let base = class_color(s.objects[0].class, spec.n_classes);
        for p in &s.parts {
            let (cx, cy) = p.bbox.center();
            let i = (cy as usize * spec.width + cx as usize) * 3;
            assert_eq!(&s.image.data()[i..i + 3], &part_color(base, p.class % 2));
        }
    }
}
