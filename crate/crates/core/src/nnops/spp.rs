//! Spatial pyramid pooling of image-space boxes on a feature map.
//!
//! A box is mapped to feature cells with [`feature_span`] (floor start, ceil
//! end, at least one cell). The covered region is split into a `G×G` grid;
//! bin `i` along an axis of length `n` covers `[⌊i·n/G⌋, ⌊(i+1)·n/G⌋)`,
//! widened to one cell when empty. Each bin is max-pooled per channel.

use super::hwc;
use crate::error::{Error, Result};
use crate::geometry::{feature_span, BBox};
use crate::tensor::{BackwardCtx, Op, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SppGrid {
    pub grid: usize,
    /// Image pixels per feature cell.
    pub feature_stride: usize,
}

impl Default for SppGrid {
    fn default() -> Self {
        Self {
            grid: 6,
            feature_stride: 8,
        }
    }
}

impl SppGrid {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.feature_stride == 0 {
            return Err(Error::InvalidArgument(format!("invalid SPP grid {self:?}")));
        }
        Ok(())
    }
}

/// Bin boundaries along one axis, as absolute feature indices.
pub(crate) fn bins(start: usize, end: usize, grid: usize) -> Vec<(usize, usize)> {
    let n = end - start;
    (0..grid)
        .map(|i| {
            let lo = i * n / grid;
            let hi = ((i + 1) * n / grid).max(lo + 1);
            (start + lo, start + hi)
        })
        .collect()
}

struct SppOp {
    h: Var,
    argmax: Vec<usize>,
}

impl Op for SppOp {
    fn name(&self) -> &'static str {
        "spp_pool"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let dh = ctx.grad_mut(self.h);
        for (&src, g) in self.argmax.iter().zip(g) {
            dh[src] += g;
        }
    }
}

impl Tape {
    /// Pools every box into a `G·G·C` row: output shape `[M, G·G·C]`, with
    /// per-row layout `(bin_y, bin_x, channel)`.
    pub fn spp_pool(&mut self, h: Var, boxes: &[BBox], grid: SppGrid) -> Result<Var> {
        grid.validate()?;
        let (fh, fw, c) = hwc(self, h, "spp_pool")?;
        if boxes.is_empty() {
            return Err(Error::InvalidArgument("spp_pool: no boxes".into()));
        }
        let g = grid.grid;
        let row_len = g * g * c;
        let hv = self.value(h).data();
        let mut out = vec![f64::NEG_INFINITY; boxes.len() * row_len];
        let mut argmax = vec![0usize; boxes.len() * row_len];
        for (m, b) in boxes.iter().enumerate() {
            b.validate()?;
            let (x0, x1) = feature_span(b.x1, b.x2, grid.feature_stride, fw);
            let (y0, y1) = feature_span(b.y1, b.y2, grid.feature_stride, fh);
            let xbins = bins(x0, x1, g);
            for (by, &(ys, ye)) in bins(y0, y1, g).iter().enumerate() {
                for (bx, &(xs, xe)) in xbins.iter().enumerate() {
                    let o = m * row_len + (by * g + bx) * c;
                    for y in ys..ye {
                        for x in xs..xe {
                            let i = (y * fw + x) * c;
                            for ch in 0..c {
                                if hv[i + ch] > out[o + ch] {
                                    out[o + ch] = hv[i + ch];
                                    argmax[o + ch] = i + ch;
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![boxes.len(), row_len], out);
        let req = self.requires_grad(h);
        Ok(self.record(out, req, SppOp { h, argmax }))
    }

    /// Single-box form with a `G×G×C` output.
    pub fn spp_pool_one(&mut self, h: Var, b: &BBox, grid: SppGrid) -> Result<Var> {
        let c = self.shape(h).last().copied().unwrap_or(0);
        let rows = self.spp_pool(h, std::slice::from_ref(b), grid)?;
        self.reshape(rows, &[grid.grid, grid.grid, c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};
    use crate::tensor::SeedStream;

    /// Per-bin max computed from first principles: for each bin, collect all
    /// covered cells by explicit membership test.
    fn naive(h: &Tensor, b: &BBox, g: usize, stride: usize) -> Vec<f64> {
        let [fh, fw, c] = h.shape()[..] else { panic!() };
        let s = stride as f64;
        let clampspan = |lo: f64, hi: f64, n: usize| {
            let mut a = (lo / s).floor() as i64;
            let mut e = (hi / s).ceil() as i64;
            a = a.clamp(0, n as i64 - 1);
            e = e.clamp(a + 1, n as i64);
            (a as usize, e as usize)
        };
        let (x0, x1) = clampspan(b.x1, b.x2, fw);
        let (y0, y1) = clampspan(b.y1, b.y2, fh);
        let mut out = Vec::new();
        for by in 0..g {
            for bx in 0..g {
                let inside = |v: usize, lo: usize, hi: usize, i: usize| {
                    let n = hi - lo;
                    let a = lo + (i * n) / g;
                    let e = (lo + ((i + 1) * n) / g).max(a + 1);
                    v >= a && v < e
                };
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    for y in 0..fh {
                        for x in 0..fw {
                            if inside(y, y0, y1, by) && inside(x, x0, x1, bx) {
                                best = best.max(h.data()[(y * fw + x) * c + ch]);
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
        out
    }

    fn random_box(s: &mut SeedStream, size: f64) -> BBox {
        let x1 = s.gen_range(0.0, size - 1.0);
        let y1 = s.gen_range(0.0, size - 1.0);
        let x2 = s.gen_range(x1 + 0.5, size);
        let y2 = s.gen_range(y1 + 0.5, size);
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn full_box_with_unit_stride_is_identity() {
        let x = random_tensor(&[6, 6, 3], 4);
        let mut t = Tape::new();
        let h = t.constant(x.clone());
        let b = BBox::new(0.0, 0.0, 6.0, 6.0).unwrap();
        let y = t
            .spp_pool_one(
                h,
                &b,
                SppGrid {
                    grid: 6,
                    feature_stride: 1,
                },
            )
            .unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn constant_map_gives_constant_output() {
        let mut t = Tape::new();
        let h = t.constant(Tensor::full(&[8, 8, 2], 0.3));
        let mut s = SeedStream::new(1);
        for _ in 0..20 {
            let b = random_box(&mut s, 64.0);
            let y = t.spp_pool(h, &[b], SppGrid::default()).unwrap();
            assert!(t.value(y).data().iter().all(|&v| v == 0.3));
        }
    }

    #[test]
    fn matches_naive_per_bin_max() {
        let x = random_tensor(&[12, 12, 4], 7);
        let mut s = SeedStream::new(99);
        let mut t = Tape::new();
        let h = t.constant(x.clone());
        for case in 0..100 {
            let stride = 1 + case % 4;
            let b = random_box(&mut s, 12.0 * stride as f64);
            let grid = SppGrid {
                grid: 1 + case % 6,
                feature_stride: stride,
            };
            let y = t.spp_pool(h, &[b], grid).unwrap();
            assert_eq!(
                t.value(y).data(),
                &naive(&x, &b, grid.grid, stride)[..],
                "case {case}"
            );
        }
    }

    #[test]
    fn output_shape_is_independent_of_box_size() {
        let mut t = Tape::new();
        let h = t.constant(random_tensor(&[8, 8, 5], 1));
        for b in [
            (0.0, 0.0, 1.0, 1.0),
            (3.0, 7.0, 40.0, 12.0),
            (0.0, 0.0, 64.0, 64.0),
        ] {
            let b = BBox::new(b.0, b.1, b.2, b.3).unwrap();
            let y = t.spp_pool_one(h, &b, SppGrid::default()).unwrap();
            assert_eq!(t.shape(y), &[6, 6, 5]);
        }
    }

    #[test]
    fn degenerate_box_is_an_error() {
        let mut t = Tape::new();
        let h = t.constant(Tensor::zeros(&[4, 4, 1]));
        let b = BBox {
            x1: 2.0,
            y1: 2.0,
            x2: 2.0,
            y2: 5.0,
        };
        assert!(t.spp_pool(h, &[b], SppGrid::default()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut s = SeedStream::new(3);
        for seed in 0..5 {
            let boxes: Vec<BBox> = (0..3).map(|_| random_box(&mut s, 32.0)).collect();
            let grid = SppGrid {
                grid: 3,
                feature_stride: 4,
            };
            let inputs = [
                random_tensor(&[8, 8, 2], seed),
                random_tensor(&[3, 18], seed + 5),
            ];
            let err = check_gradients(&inputs, |t, v| {
                let y = t.spp_pool(v[0], &boxes, grid)?;
                let y = t.mul(y, v[1])?;
                Ok(t.sum(y))
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }
}
