//! Dataset files. Body layout, all little-endian:
//!
//! ```text
//! spec:   height, width, n_classes, parts_per_class, min_objects,
//!         max_objects, min_side, max_side (u64); noise_std (f64); seed (u64)
//! count:  u64
//! scene:  height u64, width u64, pixels f64[h·w·3],
//!         n_objects u64, { class u64, x1 y1 x2 y2 f64 }*,
//!         n_parts u64,   { class u64, parent u64, x1 y1 x2 y2 f64 }*,
//!         n_labels u64,  label f64*
//! ```

use std::fs;
use std::path::Path;

use super::scene::{Object, Part, Scene, SceneSpec};
use crate::codec::{Reader, Writer};
use crate::error::Result;
use crate::geometry::BBox;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"MNDS";
pub const DATASET_VERSION: u32 = 1;

fn put_box(w: &mut Writer, b: &BBox) {
    w.f64s(&b.as_array());
}

fn get_box(r: &mut Reader<'_>) -> Result<BBox> {
    let v = r.f64s(4)?;
    BBox::new(v[0], v[1], v[2], v[3])
}

pub fn dataset_to_bytes(spec: &SceneSpec, scenes: &[Scene]) -> Vec<u8> {
    let mut w = Writer::default();
    for v in [
        spec.height,
        spec.width,
        spec.n_classes,
        spec.parts_per_class,
        spec.min_objects,
        spec.max_objects,
        spec.min_side,
        spec.max_side,
    ] {
        w.usize(v);
    }
    w.f64(spec.noise_std);
    w.u64(spec.seed);
    w.usize(scenes.len());
    for s in scenes {
        w.usize(s.height());
        w.usize(s.width());
        w.f64s(s.image.data());
        w.usize(s.objects.len());
        for o in &s.objects {
            w.usize(o.class);
            put_box(&mut w, &o.bbox);
        }
        w.usize(s.parts.len());
        for p in &s.parts {
            w.usize(p.class);
            w.usize(p.parent);
            put_box(&mut w, &p.bbox);
        }
        w.usize(s.img_label.len());
        w.f64s(&s.img_label);
    }
    w.seal(DATASET_MAGIC, DATASET_VERSION)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<(SceneSpec, Vec<Scene>)> {
    let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION, "dataset")?;
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let spec = SceneSpec {
        height: dims[0],
        width: dims[1],
        n_classes: dims[2],
        parts_per_class: dims[3],
        min_objects: dims[4],
        max_objects: dims[5],
        min_side: dims[6],
        max_side: dims[7],
        noise_std: r.f64()?,
        seed: r.u64()?,
    };
    let n = r.count(24)?;
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        let h = r.usize()?;
        let w = r.usize()?;
        let pixels = r.f64s(h.saturating_mul(w).saturating_mul(3))?;
        let image = Tensor::new(vec![h, w, 3], pixels)?;
        let n_obj = r.count(40)?;
        let mut objects = Vec::with_capacity(n_obj);
        for _ in 0..n_obj {
            let class = r.usize()?;
            objects.push(Object {
                class,
                bbox: get_box(&mut r)?,
            });
        }
        let n_parts = r.count(48)?;
        let mut parts = Vec::with_capacity(n_parts);
        for _ in 0..n_parts {
            let class = r.usize()?;
            let parent = r.usize()?;
            parts.push(Part {
                class,
                parent,
                bbox: get_box(&mut r)?,
            });
        }
        let n_labels = r.count(8)?;
        let img_label = r.f64s(n_labels)?;
        scenes.push(Scene {
            image,
            objects,
            parts,
            img_label,
        });
    }
    r.finish()?;
    Ok((spec, scenes))
}

pub fn write_dataset(path: impl AsRef<Path>, spec: &SceneSpec, scenes: &[Scene]) -> Result<()> {
    fs::write(path, dataset_to_bytes(spec, scenes))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(SceneSpec, Vec<Scene>)> {
    dataset_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::synthdata::generate_scenes;
    use crate::tensor::SeedStream;

    fn bitwise_eq(a: &[Scene], b: &[Scene]) -> bool {
        a == b
            && a.iter().zip(b).all(|(x, y)| {
                x.image
                    .data()
                    .iter()
                    .zip(y.image.data())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }

    #[test]
    fn round_trip_through_a_file() {
        let spec = SceneSpec {
            seed: 42,
            ..Default::default()
        };
        let scenes = generate_scenes(&spec, 0, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.mnds");
        write_dataset(&path, &spec, &scenes).unwrap();
        let (spec2, scenes2) = read_dataset(&path).unwrap();
        assert_eq!(spec2, spec);
        assert!(bitwise_eq(&scenes, &scenes2));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let spec = SceneSpec::default();
        let (s, scenes) = dataset_from_bytes(&dataset_to_bytes(&spec, &[])).unwrap();
        assert_eq!(s, spec);
        assert!(scenes.is_empty());
    }

    #[test]
    fn corrupted_pixel_fails_the_checksum() {
        let spec = SceneSpec::default();
        let mut bytes = dataset_to_bytes(&spec, &generate_scenes(&spec, 0, 2).unwrap());
        let i = 16 + 8 * 10 + 8 + 16 + 100;
        bytes[i] ^= 0x10;
        assert!(matches!(
            dataset_from_bytes(&bytes),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn random_corruption_and_truncation_are_detected() {
        let spec = SceneSpec::default();
        let bytes = dataset_to_bytes(&spec, &generate_scenes(&spec, 0, 2).unwrap());
        let mut s = SeedStream::new(8);
        for _ in 0..300 {
            let mut b = bytes.clone();
            let i = s.gen_index(b.len());
            b[i] ^= 1 << s.gen_index(8);
            assert!(dataset_from_bytes(&b).is_err(), "flip at {i}");
        }
        for _ in 0..50 {
            let cut = s.gen_index(bytes.len());
            assert!(
                matches!(dataset_from_bytes(&bytes[..cut]), Err(Error::Truncated(_))),
                "cut {cut}"
            );
        }
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(
            dataset_from_bytes(&b),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
