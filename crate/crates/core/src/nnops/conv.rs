//! 2-D cross-correlation lowered to a matrix product over image patches.

use super::hwc;
use crate::error::{Error, Result};
use crate::tensor::{gemm, BackwardCtx, Op, Tape, Tensor, Var};

/// Convolution over `H×W×Cin` maps with `k×k×Cin×Cout` filters.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub filters: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    /// Input offset of patch element `(ky, kx)` for output `(oy, ox)`.
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            return None;
        }
        Some((iy as usize * self.w + ix as usize) * self.cin)
    }
}

fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let plen = g.patch_len();
    let mut cols = vec![0.0; g.ho * g.wo * plen];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * plen..][..plen];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some(src) = g.source(oy, ox, ky, kx) {
                        let dst = (ky * g.k + kx) * g.cin;
                        row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let plen = g.patch_len();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * plen..][..plen];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some(dst) = g.source(oy, ox, ky, kx) {
                        let src = (ky * g.k + kx) * g.cin;
                        dx[dst..dst + g.cin]
                            .iter_mut()
                            .zip(&row[src..src + g.cin])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    x: Var,
    filters: Var,
    bias: Var,
    geom: Geometry,
    cols: Vec<f64>,
}

impl Op for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let geom = &self.geom;
        let (npix, plen, cout) = (geom.ho * geom.wo, geom.patch_len(), geom.cout);
        if ctx.wants(self.filters) {
            gemm(
                plen,
                npix,
                cout,
                &self.cols,
                true,
                g,
                false,
                ctx.grad_mut(self.filters),
                1.0,
            );
        }
        if ctx.wants(self.bias) {
            let db = ctx.grad_mut(self.bias);
            for row in g.chunks(cout) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
        }
        if ctx.wants(self.x) {
            let f = ctx.value(self.filters).data();
            let mut dcols = vec![0.0; npix * plen];
            gemm(npix, cout, plen, g, false, f, true, &mut dcols, 0.0);
            col2im_add(&dcols, geom, ctx.grad_mut(self.x));
        }
    }
}

impl Tape {
    pub fn conv2d(&mut self, x: Var, layer: &ConvLayer) -> Result<Var> {
        let (h, w, cin) = hwc(self, x, "conv2d")?;
        let fshape = self.shape(layer.filters).to_vec();
        let [k, k2, fcin, cout] = fshape[..] else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("filters must be k×k×Cin×Cout, got {fshape:?}"),
            });
        };
        if k != k2 || k == 0 || layer.stride == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("bad kernel {fshape:?} / stride {}", layer.stride),
            });
        }
        if fcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: vec![h, w, cin],
                right: fshape,
            });
        }
        if self.shape(layer.bias) != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: vec![cout],
                right: self.shape(layer.bias).to_vec(),
            });
        }
        let pad = layer.padding;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!(
                    "kernel {k} larger than padded input {}×{}",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            });
        }
        let geom = Geometry {
            h,
            w,
            cin,
            k,
            cout,
            stride: layer.stride,
            pad,
            ho: (h + 2 * pad - k) / layer.stride + 1,
            wo: (w + 2 * pad - k) / layer.stride + 1,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let npix = geom.ho * geom.wo;
        let bias = self.value(layer.bias).data();
        let mut out = Vec::with_capacity(npix * cout);
        for _ in 0..npix {
            out.extend_from_slice(bias);
        }
        gemm(
            npix,
            geom.patch_len(),
            cout,
            &cols,
            false,
            self.value(layer.filters).data(),
            false,
            &mut out,
            1.0,
        );
        let out = Tensor::from_parts(vec![geom.ho, geom.wo, cout], out);
        let req = self.any_requires(&[x, layer.filters, layer.bias]);
        let keep_cols = self.requires_grad(layer.filters);
        let op = Conv2dOp {
            x,
            filters: layer.filters,
            bias: layer.bias,
            geom,
            cols: if keep_cols { cols } else { Vec::new() },
        };
        Ok(self.record(out, req, op))
    }
}
