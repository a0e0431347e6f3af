use crate::error::{Error, Result};
use crate::tensor::{gemm, BackwardCtx, Op, Tape, Tensor, Var};

/// Affine map `x·W + b` with `W: Din×Dout`.
#[derive(Clone, Copy, Debug)]
pub struct FCLayer {
    pub weight: Var,
    pub bias: Var,
}

struct LinearOp {
    x: Var,
    weight: Var,
    bias: Var,
    m: usize,
    k: usize,
    n: usize,
}

impl Op for LinearOp {
    fn name(&self) -> &'static str {
        "fully_connected"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let (m, k, n) = (self.m, self.k, self.n);
        if ctx.wants(self.weight) {
            let x = ctx.value(self.x).data();
            gemm(k, m, n, x, true, g, false, ctx.grad_mut(self.weight), 1.0);
        }
        if ctx.wants(self.bias) {
            let db = ctx.grad_mut(self.bias);
            for row in g.chunks(n) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
        }
        if ctx.wants(self.x) {
            let w = ctx.value(self.weight).data();
            gemm(m, n, k, g, false, w, true, ctx.grad_mut(self.x), 1.0);
        }
    }
}

impl Tape {
    /// Dense layer on a vector `[Din]` or a batch of rows `[M, Din]`.
    pub fn fully_connected(&mut self, x: Var, layer: &FCLayer) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (m, k, vector) = match xs[..] {
            [k] => (1, k, true),
            [m, k] => (m, k, false),
            _ => {
                return Err(Error::InvalidShape {
                    op: "fully_connected",
                    msg: format!("input must be [Din] or [M, Din], got {xs:?}"),
                })
            }
        };
        let ws = self.shape(layer.weight).to_vec();
        if ws.len() != 2 || ws[0] != k {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                left: xs,
                right: ws,
            });
        }
        let n = ws[1];
        if self.shape(layer.bias) != [n] {
            return Err(Error::ShapeMismatch {
                op: "fully_connected bias",
                left: vec![n],
                right: self.shape(layer.bias).to_vec(),
            });
        }
        let bias = self.value(layer.bias).data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(layer.weight).data(),
            false,
            &mut out,
            1.0,
        );
        let shape = if vector { vec![n] } else { vec![m, n] };
        let out = Tensor::from_parts(shape, out);
        let req = self.any_requires(&[x, layer.weight, layer.bias]);
        let op = LinearOp {
            x,
            weight: layer.weight,
            bias: layer.bias,
            m,
            k,
            n,
        };
        Ok(self.record(out, req, op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};

    #[test]
    fn identity_and_zero_weights() {
        let x = Tensor::from_vec(vec![0.5, -1.5, 2.0]);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let id = FCLayer {
            weight: t.constant(Tensor::eye(3)),
            bias: t.constant(Tensor::zeros(&[3])),
        };
        let y = t.fully_connected(xv, &id).unwrap();
        assert_eq!(t.value(y), &x);

        let b = Tensor::from_vec(vec![1.0, 2.0]);
        let zero = FCLayer {
            weight: t.constant(Tensor::zeros(&[3, 2])),
            bias: t.constant(b.clone()),
        };
        let y = t.fully_connected(xv, &zero).unwrap();
        assert_eq!(t.value(y), &b);
    }

    #[test]
    fn dimension_mismatch() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[4]));
        let l = FCLayer {
            weight: t.constant(Tensor::zeros(&[3, 2])),
            bias: t.constant(Tensor::zeros(&[2])),
        };
        assert!(t.fully_connected(x, &l).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let rows = 1 + seed as usize;
            let inputs = [
                random_tensor(&[rows, 4], seed),
                random_tensor(&[4, 3], seed + 1),
                random_tensor(&[3], seed + 2),
            ];
            let err = check_gradients(&inputs, |t, v| {
                let y = t.fully_connected(
                    v[0],
                    &FCLayer {
                        weight: v[1],
                        bias: v[2],
                    },
                )?;
                let y = t.mul(y, y)?;
                Ok(t.sum(y))
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }
}
