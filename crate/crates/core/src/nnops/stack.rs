use super::hwc;
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Op, Tape, Tensor, Var};

struct StackOp {
    parts: Vec<(Var, usize)>,
    total: usize,
}

impl Op for StackOp {
    fn name(&self) -> &'static str {
        "stack_channels"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let mut offset = 0;
        for &(v, c) in &self.parts {
            if ctx.wants(v) {
                let dx = ctx.grad_mut(v);
                for (cell, dst) in dx.chunks_mut(c).enumerate() {
                    let src = &g[cell * self.total + offset..][..c];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            offset += c;
        }
    }
}

impl Tape {
    /// Concatenates `H×W×Cᵢ` maps along channels, in argument order.
    pub fn stack_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::InvalidArgument("stack_channels: no inputs".into()));
        };
        let (h, w, _) = hwc(self, first, "stack_channels")?;
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (hi, wi, ci) = hwc(self, v, "stack_channels")?;
            if (hi, wi) != (h, w) {
                return Err(Error::ShapeMismatch {
                    op: "stack_channels",
                    left: self.shape(first).to_vec(),
                    right: self.shape(v).to_vec(),
                });
            }
            parts.push((v, ci));
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(h * w * total);
        for cell in 0..h * w {
            for &(v, c) in &parts {
                out.extend_from_slice(&self.value(v).data()[cell * c..(cell + 1) * c]);
            }
        }
        let out = Tensor::from_parts(vec![h, w, total], out);
        let req = self.any_requires(inputs);
        Ok(self.record(out, req, StackOp { parts, total }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};

    #[test]
    fn single_input_is_identity() {
        let a = random_tensor(&[3, 2, 4], 1);
        let mut t = Tape::new();
        let v = t.constant(a.clone());
        let s = t.stack_channels(&[v]).unwrap();
        assert_eq!(t.value(s), &a);
    }

    #[test]
    fn channel_order_follows_arguments() {
        let a = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 2, 2], (10..18).map(f64::from).collect()).unwrap();
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a), t.constant(b));
        let s = t.stack_channels(&[va, vb]).unwrap();
        assert_eq!(t.shape(s), &[2, 2, 3]);
        assert_eq!(
            t.value(s).data(),
            &[1.0, 10.0, 11.0, 2.0, 12.0, 13.0, 3.0, 14.0, 15.0, 4.0, 16.0, 17.0]
        );
    }

    #[test]
    fn spatial_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 2, 1]));
        let b = t.constant(Tensor::zeros(&[2, 3, 1]));
        assert!(t.stack_channels(&[a, b]).is_err());
    }

    #[test]
    fn gradient_slices_back_to_sources() {
        for seed in 0..5 {
            let inputs = [
                random_tensor(&[3, 2, 2], seed),
                random_tensor(&[3, 2, 1], seed + 1),
                random_tensor(&[3, 2, 3], seed + 2),
                random_tensor(&[3, 2, 6], seed + 3),
            ];
            let err = check_gradients(&inputs, |t, v| {
                let s = t.stack_channels(&[v[0], v[1], v[2]])?;
                let y = t.mul(s, v[3])?;
                Ok(t.sum(y))
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }
}
