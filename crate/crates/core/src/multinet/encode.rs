//! Task encoders: map a task's label back onto the `H×W` feature grid.

use crate::error::{Error, Result};
use crate::geometry::{feature_span, BBox};
use crate::tensor::{BackwardCtx, Op, Tape, Tensor, Var};

struct BroadcastOp {
    x: Var,
    k: usize,
}

impl Op for BroadcastOp {
    fn name(&self) -> &'static str {
        "encode_cls"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let dx = ctx.grad_mut(self.x);
        for cell in g.chunks(self.k) {
            dx.iter_mut().zip(cell).for_each(|(d, v)| *d += v);
        }
    }
}

struct HeatmapOp {
    x: Var,
    /// Source index into `x` for each output element, `usize::MAX` where
    /// the zero floor won.
    argmax: Vec<usize>,
}

impl Op for HeatmapOp {
    fn name(&self) -> &'static str {
        "encode_regions"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let dx = ctx.grad_mut(self.x);
        for (&src, g) in self.argmax.iter().zip(g) {
            if src != usize::MAX {
                dx[src] += g;
            }
        }
    }
}

impl Tape {
    /// `r[u, v, c] = x[c]` on an `h×w` grid.
    pub fn encode_cls(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xs = self.value(x);
        if xs.shape().len() != 1 {
            return Err(Error::InvalidShape {
                op: "encode_cls",
                msg: format!("expected a vector, got {:?}", xs.shape()),
            });
        }
        let k = xs.numel();
        let out = xs.data().repeat(h * w);
        let req = self.requires_grad(x);
        Ok(self.record(
            Tensor::from_parts(vec![h, w, k], out),
            req,
            BroadcastOp { x, k },
        ))
    }

    /// Heat map `r[u, v, c] = max({x[m, c] : cell (u, v) ∈ box m} ∪ {0})`
    /// over an `h×w` grid. A box covers the cells given by [`feature_span`]
    /// at `stride`. Ties go to the lowest box index.
    pub fn encode_regions(
        &mut self,
        x: Var,
        boxes: &[BBox],
        h: usize,
        w: usize,
        stride: usize,
    ) -> Result<Var> {
        let xs = self.value(x);
        let [m, k] = xs.shape()[..] else {
            return Err(Error::InvalidShape {
                op: "encode_regions",
                msg: format!("expected M×K scores, got {:?}", xs.shape()),
            });
        };
        if m != boxes.len() {
            return Err(Error::ShapeMismatch {
                op: "encode_regions",
                left: vec![m, k],
                right: vec![boxes.len()],
            });
        }
        if stride == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "encode_regions: grid {h}×{w}, stride {stride}"
            )));
        }
        let xd = xs.data();
        let mut out = vec![0.0; h * w * k];
        let mut argmax = vec![usize::MAX; h * w * k];
        for (b, bx) in boxes.iter().enumerate() {
            bx.validate()?;
            let (x0, x1) = feature_span(bx.x1, bx.x2, stride, w);
            let (y0, y1) = feature_span(bx.y1, bx.y2, stride, h);
            let row = &xd[b * k..(b + 1) * k];
            for u in y0..y1 {
                for v in x0..x1 {
                    let o = (u * w + v) * k;
                    for c in 0..k {
                        if row[c] > out[o + c] {
                            out[o + c] = row[c];
                            argmax[o + c] = b * k + c;
                        }
                    }
                }
            }
        }
        let req = self.requires_grad(x);
        Ok(self.record(
            Tensor::from_parts(vec![h, w, k], out),
            req,
            HeatmapOp { x, argmax },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};
    use crate::tensor::SeedStream;

    #[test]
    fn broadcast_cases() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![0.2, 0.8]));
        let r = t.encode_cls(x, 2, 2).unwrap();
        assert_eq!(t.value(r).data(), &[0.2, 0.8, 0.2, 0.8, 0.2, 0.8, 0.2, 0.8]);
        let z = t.constant(Tensor::zeros(&[3]));
        let r = t.encode_cls(z, 4, 5).unwrap();
        assert!(t.value(r).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn broadcast_is_identical_across_cells() {
        let mut s = SeedStream::new(0);
        let mut t = Tape::new();
        for _ in 0..20 {
            let k = 1 + s.gen_index(6);
            let x = t.constant(Tensor::from_vec(
                (0..k).map(|_| s.gen_range(0.0, 1.0)).collect(),
            ));
            let r = t.encode_cls(x, 3, 4).unwrap();
            let d = t.value(r).data();
            assert!(d.chunks(k).all(|cell| cell == &d[..k]));
        }
    }

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn uncovered_cells_are_zero_and_full_box_copies_its_row() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap());
        let r = t
            .encode_regions(x, &[b(0.0, 0.0, 8.0, 8.0)], 4, 4, 8)
            .unwrap();
        let d = t.value(r).data();
        assert_eq!(&d[..2], &[0.3, 0.7]);
        assert!(d[2..].iter().all(|&v| v == 0.0));
        let r = t
            .encode_regions(x, &[b(0.0, 0.0, 32.0, 32.0)], 4, 4, 8)
            .unwrap();
        assert!(t.value(r).data().chunks(2).all(|c| c == [0.3, 0.7]));
    }

    /// Per-cell enumeration: for each cell, the set of boxes whose
    /// footprint contains it, written out with explicit bounds.
    fn brute_force(x: &Tensor, boxes: &[BBox], h: usize, w: usize, stride: usize) -> Vec<f64> {
        let k = x.cols();
        let s = stride as f64;
        let mut out = Vec::new();
        for u in 0..h {
            for v in 0..w {
                let covering: Vec<usize> = (0..boxes.len())
                    .filter(|&m| {
                        let bx = &boxes[m];
                        let start =
                            |lo: f64, n: usize| ((lo / s).floor().max(0.0) as usize).min(n - 1);
                        let (sx, sy) = (start(bx.x1, w), start(bx.y1, h));
                        let ex = ((bx.x2 / s).ceil() as usize).clamp(sx + 1, w);
                        let ey = ((bx.y2 / s).ceil() as usize).clamp(sy + 1, h);
                        (sy..ey).contains(&u) && (sx..ex).contains(&v)
                    })
                    .collect();
                for c in 0..k {
                    out.push(covering.iter().map(|&m| x.row(m)[c]).fold(0.0, f64::max));
                }
            }
        }
        out
    }

    #[test]
    fn heatmap_matches_per_cell_enumeration() {
        let mut s = SeedStream::new(21);
        let mut t = Tape::new();
        for case in 0..100 {
            let (h, w, stride) = (2 + case % 7, 3 + case % 5, 1 + case % 8);
            let m = 1 + s.gen_index(6);
            let k = 1 + s.gen_index(4);
            let boxes: Vec<BBox> = (0..m)
                .map(|_| {
                    let x1 = s.gen_range(0.0, (w * stride) as f64 - 0.5);
                    let y1 = s.gen_range(0.0, (h * stride) as f64 - 0.5);
                    b(
                        x1,
                        y1,
                        s.gen_range(x1 + 0.25, (w * stride) as f64),
                        s.gen_range(y1 + 0.25, (h * stride) as f64),
                    )
                })
                .collect();
            let probs = Tensor::new(
                vec![m, k],
                (0..m * k).map(|_| s.gen_range(0.0, 1.0)).collect(),
            )
            .unwrap();
            let x = t.constant(probs.clone());
            let r = t.encode_regions(x, &boxes, h, w, stride).unwrap();
            assert_eq!(
                t.value(r).data(),
                &brute_force(&probs, &boxes, h, w, stride)[..],
                "case {case}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let boxes = [
            b(0.0, 0.0, 20.0, 12.0),
            b(6.0, 4.0, 30.0, 30.0),
            b(10.0, 10.0, 16.0, 18.0),
        ];
        for seed in 0..5 {
            let inputs = [
                random_tensor(&[3, 4], seed),
                random_tensor(&[4, 4, 4], seed + 9),
            ];
            let err = check_gradients(&inputs, |t, v| {
                let p = t.softmax_rows(v[0])?;
                let r = t.encode_regions(p, &boxes, 4, 4, 8)?;
                let y = t.mul(r, v[1])?;
                Ok(t.sum(y))
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
            let inputs = [
                random_tensor(&[3], seed),
                random_tensor(&[2, 3, 3], seed + 1),
            ];
            let err = check_gradients(&inputs, |t, v| {
                let p = t.sigmoid(v[0]);
                let r = t.encode_cls(p, 2, 3)?;
                let y = t.mul(r, v[1])?;
                Ok(t.sum(y))
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }
}
