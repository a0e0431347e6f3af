//! Elementwise arithmetic, matrix product, reshape and reductions.

use super::{gemm, BackwardCtx, Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryOp {
    kind: Binary,
    a: Var,
    b: Var,
}

impl Op for BinaryOp {
    fn name(&self) -> &'static str {
        match self.kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let (av, bv) = (ctx.value(self.a).data(), ctx.value(self.b).data());
        if ctx.wants(self.a) {
            let ga = ctx.grad_mut(self.a);
            match self.kind {
                Binary::Add | Binary::Sub => ga.iter_mut().zip(g).for_each(|(x, g)| *x += g),
                Binary::Mul => ga
                    .iter_mut()
                    .zip(g.iter().zip(bv))
                    .for_each(|(x, (g, b))| *x += g * b),
            }
        }
        if ctx.wants(self.b) {
            let gb = ctx.grad_mut(self.b);
            match self.kind {
                Binary::Add => gb.iter_mut().zip(g).for_each(|(x, g)| *x += g),
                Binary::Sub => gb.iter_mut().zip(g).for_each(|(x, g)| *x -= g),
                Binary::Mul => gb
                    .iter_mut()
                    .zip(g.iter().zip(av))
                    .for_each(|(x, (g, a))| *x += g * a),
            }
        }
    }
}

struct ScaleOp {
    x: Var,
    factor: f64,
}

impl Op for ScaleOp {
    fn name(&self) -> &'static str {
        "mul_scalar"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let f = self.factor;
        ctx.grad_mut(self.x)
            .iter_mut()
            .zip(g)
            .for_each(|(x, g)| *x += f * g);
    }
}

/// Passes the gradient through unchanged (scalar add, reshape).
struct IdentityOp {
    x: Var,
    name: &'static str,
}

impl Op for IdentityOp {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        ctx.grad_mut(self.x)
            .iter_mut()
            .zip(g)
            .for_each(|(x, g)| *x += g);
    }
}

struct MaxScalarOp {
    x: Var,
    floor: f64,
}

impl Op for MaxScalarOp {
    fn name(&self) -> &'static str {
        "max_scalar"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let xv = ctx.value(self.x).data();
        let floor = self.floor;
        ctx.grad_mut(self.x)
            .iter_mut()
            .zip(g.iter().zip(xv))
            .for_each(|(d, (g, x))| {
                if *x > floor {
                    *d += g;
                }
            });
    }
}

struct MatMulOp {
    a: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
}

impl Op for MatMulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad();
        let (m, k, n) = (self.m, self.k, self.n);
        let (av, bv) = (ctx.value(self.a).data(), ctx.value(self.b).data());
        if ctx.wants(self.a) {
            // dA = G·Bᵀ
            gemm(m, n, k, g, false, bv, true, ctx.grad_mut(self.a), 1.0);
        }
        if ctx.wants(self.b) {
            // dB = Aᵀ·G
            gemm(k, m, n, av, true, g, false, ctx.grad_mut(self.b), 1.0);
        }
    }
}

struct SumOp {
    x: Var,
    scale: f64,
}

impl Op for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad()[0] * self.scale;
        ctx.grad_mut(self.x).iter_mut().for_each(|x| *x += g);
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tape {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let op = BinaryOp { kind, a, b };
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op.name(), av, bv)?;
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let req = self.any_requires(&[a, b]);
        Ok(self.record(out, req, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v + s).collect(),
        );
        let req = self.requires_grad(x);
        self.record(
            out,
            req,
            IdentityOp {
                x,
                name: "add_scalar",
            },
        )
    }

    pub fn mul_scalar(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v * factor).collect(),
        );
        let req = self.requires_grad(x);
        self.record(out, req, ScaleOp { x, factor })
    }

    /// `max(x, floor)` elementwise; the gradient is zero where `x ≤ floor`.
    pub fn max_scalar(&mut self, x: Var, floor: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data()
                .iter()
                .map(|&v| if v > floor { v } else { floor })
                .collect(),
        );
        let req = self.requires_grad(x);
        self.record(out, req, MaxScalarOp { x, floor })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut data, 0.0);
        let out = Tensor::from_parts(vec![m, n], data);
        let req = self.any_requires(&[a, b]);
        Ok(self.record(out, req, MatMulOp { a, b, m, k, n }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let req = self.requires_grad(x);
        Ok(self.record(out, req, IdentityOp { x, name: "reshape" }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, 1.0)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        self.reduce(x, 1.0 / n)
    }

    fn reduce(&mut self, x: Var, scale: f64) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        let out = Tensor::scalar(total * scale);
        let req = self.requires_grad(x);
        self.record(out, req, SumOp { x, scale })
    }

    /// Sum of scalar nodes. An empty list yields a constant zero.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter().copied();
        let Some(first) = iter.next() else {
            return Ok(self.constant(Tensor::scalar(0.0)));
        };
        iter.try_fold(first, |acc, t| self.add(acc, t))
    }

    /// Copy of `x` cut off from gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};

    #[test]
    fn add_and_identity() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
        let d = t.add_scalar(a, 0.0);
        assert_eq!(t.value(d), t.value(a));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 2]));
        let msg = t.mul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        assert!(t.matmul(a, a).is_err());
    }

    #[test]
    fn matmul_small_cases() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![2.0]]).unwrap());
        let b = t.constant(Tensor::from_rows(&[vec![3.0]]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[6.0]);

        let m = random_tensor(&[3, 4], 1);
        let x = t.constant(m.clone());
        let i = t.constant(Tensor::eye(4));
        let y = t.matmul(x, i).unwrap();
        assert_eq!(t.value(y), &m);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let mut t = Tape::new();
        let xv = random_tensor(&[5], 3);
        let x = t.param(xv.clone());
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        for (g, v) in t.grad(x).unwrap().iter().zip(xv.data()) {
            assert!((g - 2.0 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn unrelated_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_vec(vec![1.0, 2.0]));
        let y = t.param(Tensor::from_vec(vec![3.0]));
        let loss = t.sum(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad_tensor(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn gradients_accumulate_and_are_linear() {
        let xv = random_tensor(&[2, 3], 11);
        let wv = random_tensor(&[3, 2], 12);

        let run = |which: u8| {
            let mut t = Tape::new();
            let x = t.param(xv.clone());
            let w = t.constant(wv.clone());
            let y = t.matmul(x, w).unwrap();
            let l1 = t.sum(y);
            let sq = t.mul(x, x).unwrap();
            let l2 = t.mean(sq);
            match which {
                0 => {
                    let l = t.add(l1, l2).unwrap();
                    t.backward(l).unwrap();
                }
                _ => {
                    t.backward(l1).unwrap();
                    t.backward(l2).unwrap();
                }
            }
            t.grad_tensor(x)
        };
        let joint = run(0);
        let split = run(1);
        for (a, b) in joint.data().iter().zip(split.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_grads_resets_leaves() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_vec(vec![1.0]));
        let l = t.mul_scalar(x, 3.0);
        t.backward(l).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
        t.zero_grads();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_vec(vec![2.0]));
        let d = t.detach(x);
        let y = t.mul(x, d).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn elementwise_and_matmul_gradients_match_finite_differences() {
        for seed in 0..5 {
            let shape = [2 + seed as usize % 3, 3];
            let inputs = [
                random_tensor(&shape, seed),
                random_tensor(&shape, seed + 100),
            ];
            let err = check_gradients(&inputs, |t, v| {
                let p = t.mul(v[0], v[1])?;
                let q = t.sub(p, v[1])?;
                let r = t.add(q, v[0])?;
                let s = t.max_scalar(r, 0.1);
                let s = t.mul_scalar(s, 1.7);
                let s = t.add_scalar(s, 0.3);
                Ok(t.sum(s))
            })
            .unwrap();
            assert!(err <= 1e-6, "seed {seed}: {err}");

            let inputs = [
                random_tensor(&[4, 3], seed),
                random_tensor(&[3, 2], seed + 7),
            ];
            let err = check_gradients(&inputs, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum(y2))
            })
            .unwrap();
            assert!(err <= 1e-6, "matmul seed {seed}: {err}");
        }
    }

    #[test]
    fn two_layer_composition_matches_finite_differences() {
        let inputs = [
            random_tensor(&[3, 4], 21),
            random_tensor(&[4, 5], 22),
            random_tensor(&[5, 2], 23),
        ];
        let err = check_gradients(&inputs, |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.max_scalar(h, 0.0);
            let y = t.matmul(h, v[2])?;
            let y = t.mul(y, y)?;
            Ok(t.mean(y))
        })
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}
