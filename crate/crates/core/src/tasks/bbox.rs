use crate::error::{Error, Result};
use crate::geometry::BBox;

fn check_positive(b: &BBox, what: &str) -> Result<()> {
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what}: non-positive size {b:?}"
        )));
    }
    Ok(())
}

/// Regression target `(tx, ty, tw, th)` taking `proposal` to `gt`, in
/// centre/size form.
pub fn bbox_encode(proposal: &BBox, gt: &BBox) -> Result<[f64; 4]> {
    check_positive(proposal, "bbox_encode proposal")?;
    check_positive(gt, "bbox_encode gt")?;
    let (px, py) = proposal.center();
    let (gx, gy) = gt.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    Ok([
        (gx - px) / pw,
        (gy - py) / ph,
        (gt.width() / pw).ln(),
        (gt.height() / ph).ln(),
    ])
}

/// Inverse of [`bbox_encode`].
pub fn bbox_decode(proposal: &BBox, deltas: &[f64; 4]) -> Result<BBox> {
    check_positive(proposal, "bbox_decode proposal")?;
    let (px, py) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let cx = px + deltas[0] * pw;
    let cy = py + deltas[1] * ph;
    let w = pw * deltas[2].exp();
    let h = ph * deltas[3].exp();
    BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let p = b(3.0, 4.0, 10.0, 9.0);
        assert_eq!(bbox_encode(&p, &p).unwrap(), [0.0; 4]);
    }

    #[test]
    fn hand_derived_shift() {
        let t = bbox_encode(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert_eq!(t, [0.5, 0.5, 0.0, 0.0]);
        let back = bbox_decode(&b(0.0, 0.0, 2.0, 2.0), &t).unwrap();
        assert_eq!(back, b(1.0, 1.0, 3.0, 3.0));
    }

    #[test]
    fn non_positive_width_rejected() {
        let bad = BBox {
            x1: 1.0,
            y1: 0.0,
            x2: 1.0,
            y2: 2.0,
        };
        assert!(bbox_encode(&bad, &b(0.0, 0.0, 1.0, 1.0)).is_err());
        assert!(bbox_decode(&bad, &[0.0; 4]).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(
            px in -50.0..50.0f64, py in -50.0..50.0f64, pw in 0.5..40.0f64, ph in 0.5..40.0f64,
            gx in -50.0..50.0f64, gy in -50.0..50.0f64, gw in 0.5..40.0f64, gh in 0.5..40.0f64,
        ) {
            let p = b(px, py, px + pw, py + ph);
            let g = b(gx, gy, gx + gw, gy + gh);
            let d = bbox_decode(&p, &bbox_encode(&p, &g).unwrap()).unwrap();
            for (x, y) in d.as_array().iter().zip(g.as_array()) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
