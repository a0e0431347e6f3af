use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Op, Tape, Tensor, Var};

struct SigmoidOp {
    x: Var,
}

impl Op for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let y = ctx.out_value().data();
        ctx.grad_mut(self.x)
            .iter_mut()
            .zip(g.iter().zip(y))
            .for_each(|(d, (g, y))| *d += g * y * (1.0 - y));
    }
}

struct SoftmaxRowsOp {
    x: Var,
    cols: usize,
}

impl Op for SoftmaxRowsOp {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let y = ctx.out_value().data();
        let k = self.cols;
        let dx = ctx.grad_mut(self.x);
        for ((dx, g), y) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
            let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
            for j in 0..k {
                dx[j] += y[j] * (g[j] - dot);
            }
        }
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of one row, written into `out`.
pub(crate) fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

impl Tape {
    pub fn relu(&mut self, x: Var) -> Var {
        self.max_scalar(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
        );
        let req = self.requires_grad(x);
        self.record(out, req, SigmoidOp { x })
    }

    /// Row-wise softmax of an `M×K` matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::InvalidShape {
                op: "softmax_rows",
                msg: format!("expected M×K, got {:?}", xv.shape()),
            });
        }
        let cols = xv.cols();
        let mut data = vec![0.0; xv.numel()];
        for (row, out) in xv.data().chunks(cols).zip(data.chunks_mut(cols)) {
            softmax_into(row, out);
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let req = self.requires_grad(x);
        Ok(self.record(out, req, SoftmaxRowsOp { x, cols }))
    }
}
