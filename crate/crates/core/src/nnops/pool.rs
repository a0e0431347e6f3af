use super::hwc;
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Op, Tape, Tensor, Var};

/// Routes each output gradient to the input element that won the max.
struct ArgmaxRouteOp {
    x: Var,
    argmax: Vec<usize>,
    name: &'static str,
}

impl Op for ArgmaxRouteOp {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let dx = ctx.grad_mut(self.x);
        for (&src, g) in self.argmax.iter().zip(g) {
            dx[src] += g;
        }
    }
}

impl Tape {
    /// Channelwise max over `window×window` patches. Ties resolve to the
    /// first element in row-major window order.
    pub fn max_pool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (h, w, c) = hwc(self, x, "max_pool2d")?;
        if window == 0 || stride == 0 || window > h || window > w {
            return Err(Error::InvalidShape {
                op: "max_pool2d",
                msg: format!("window {window} / stride {stride} invalid for {h}×{w}"),
            });
        }
        let (ho, wo) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let xv = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; ho * wo * c];
        let mut argmax = vec![0usize; ho * wo * c];
        for oy in 0..ho {
            for ox in 0..wo {
                let o = (oy * wo + ox) * c;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = ((oy * stride + ky) * w + ox * stride + kx) * c;
                        for ch in 0..c {
                            if xv[i + ch] > out[o + ch] {
                                out[o + ch] = xv[i + ch];
                                argmax[o + ch] = i + ch;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![ho, wo, c], out);
        let req = self.requires_grad(x);
        Ok(self.record(
            out,
            req,
            ArgmaxRouteOp {
                x,
                argmax,
                name: "max_pool2d",
            },
        ))
    }

    /// Channelwise max over all spatial cells: `H×W×C → C`.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = hwc(self, x, "global_max_pool")?;
        let xv = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for cell in 0..h * w {
            for ch in 0..c {
                let i = cell * c + ch;
                if xv[i] > out[ch] {
                    out[ch] = xv[i];
                    argmax[ch] = i;
                }
            }
        }
        let out = Tensor::from_parts(vec![c], out);
        let req = self.requires_grad(x);
        Ok(self.record(
            out,
            req,
            ArgmaxRouteOp {
                x,
                argmax,
                name: "global_max_pool",
            },
        ))
    }
}
