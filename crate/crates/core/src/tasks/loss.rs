//! Scalar training losses recorded on the tape.

use super::assign::RegionTargets;
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Op, Tape, Tensor, Var};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `ln max(p, PROB_FLOOR)` that keeps NaN.
fn floored_ln(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR.ln()
    } else {
        p.ln()
    }
}

struct BceOp {
    pred: Var,
    gt: Vec<f64>,
}

impl Op for BceOp {
    fn name(&self) -> &'static str {
        "bce_multilabel"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad()[0];
        let p = ctx.value(self.pred).data();
        let dp = ctx.grad_mut(self.pred);
        for ((d, &p), &y) in dp.iter_mut().zip(p).zip(&self.gt) {
            // d/dp of −[y ln p + (1−y) ln(1−p)], zero where a clamp is active.
            let mut v = 0.0;
            if y > 0.0 && p > PROB_FLOOR {
                v -= y / p;
            }
            if y < 1.0 && 1.0 - p > PROB_FLOOR {
                v += (1.0 - y) / (1.0 - p);
            }
            *d += g * v;
        }
    }
}

struct SoftmaxCeOp {
    scores: Var,
    labels: Vec<Option<usize>>,
    cols: usize,
    count: usize,
}

impl Op for SoftmaxCeOp {
    fn name(&self) -> &'static str {
        "softmax_ce"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad()[0] / self.count as f64;
        let p = ctx.value(self.scores).data();
        let cols = self.cols;
        let dp = ctx.grad_mut(self.scores);
        for (m, l) in self.labels.iter().enumerate() {
            if let Some(k) = *l {
                let i = m * cols + k;
                if p[i] > PROB_FLOOR {
                    dp[i] -= g / p[i];
                }
            }
        }
    }
}

struct SmoothL1Op {
    deltas: Var,
    /// `(flat index into deltas, residual)` for every supervised coordinate.
    residuals: Vec<(usize, f64)>,
    count: usize,
}

impl Op for SmoothL1Op {
    fn name(&self) -> &'static str {
        "smooth_l1"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let g = ctx.out_grad()[0] / self.count as f64;
        let dd = ctx.grad_mut(self.deltas);
        for &(i, r) in &self.residuals {
            dd[i] += g * if r.abs() < 1.0 { r } else { r.signum() };
        }
    }
}

pub(crate) fn smooth_l1_value(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

impl Tape {
    /// Multi-label negative log-likelihood
    /// `−Σ_c [y_c ln p_c + (1 − y_c) ln(1 − p_c)]` over sigmoid outputs.
    pub fn bce_multilabel(&mut self, pred: Var, gt: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != gt.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_multilabel",
                left: p.shape().to_vec(),
                right: vec![gt.len()],
            });
        }
        if let Some(bad) = gt.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bce_multilabel: non-binary target {bad}"
            )));
        }
        let loss: f64 = p
            .data()
            .iter()
            .zip(gt)
            .map(|(&p, &y)| -(y * floored_ln(p) + (1.0 - y) * floored_ln(1.0 - p)))
            .sum();
        let req = self.requires_grad(pred);
        Ok(self.record(
            Tensor::scalar(loss),
            req,
            BceOp {
                pred,
                gt: gt.to_vec(),
            },
        ))
    }

    /// Mean of `−ln p[m, label_m]` over labelled rows of a row-stochastic
    /// `M×(K+1)` matrix. Unlabelled (`None`) rows are skipped; with no
    /// labelled rows the loss is 0.
    pub fn softmax_ce(&mut self, scores: Var, labels: &[Option<usize>]) -> Result<Var> {
        let p = self.value(scores);
        if p.shape().len() != 2 || p.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_ce",
                left: p.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let cols = p.cols();
        let mut total = 0.0;
        let mut count = 0;
        for (m, l) in labels.iter().enumerate() {
            if let Some(k) = *l {
                if k >= cols {
                    return Err(Error::InvalidArgument(format!(
                        "softmax_ce: label {k} out of range 0..{cols}"
                    )));
                }
                total -= floored_ln(p.data()[m * cols + k]);
                count += 1;
            }
        }
        if count == 0 {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let req = self.requires_grad(scores);
        let op = SoftmaxCeOp {
            scores,
            labels: labels.to_vec(),
            cols,
            count,
        };
        Ok(self.record(Tensor::scalar(total / count as f64), req, op))
    }

    /// Smooth-L1 over the class-specific deltas of foreground regions,
    /// summed over coordinates and divided by the foreground count.
    pub fn smooth_l1(&mut self, deltas: Var, targets: &RegionTargets) -> Result<Var> {
        let d = self.value(deltas);
        let rows = targets.labels.len();
        if d.shape().len() != 2 || d.shape()[0] != rows || !d.cols().is_multiple_of(4) {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1",
                left: d.shape().to_vec(),
                right: vec![rows, 4],
            });
        }
        let cols = d.cols();
        let mut residuals = Vec::new();
        let mut count = 0;
        for (m, (l, t)) in targets.labels.iter().zip(&targets.deltas).enumerate() {
            let (Some(k), Some(t)) = (*l, t) else {
                continue;
            };
            if k == 0 {
                continue;
            }
            if 4 * k + 4 > cols {
                return Err(Error::InvalidArgument(format!(
                    "smooth_l1: class {k} beyond {cols} columns"
                )));
            }
            count += 1;
            for (j, tj) in t.iter().enumerate() {
                let i = m * cols + 4 * k + j;
                residuals.push((i, d.data()[i] - tj));
            }
        }
        if count == 0 {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let total: f64 = residuals.iter().map(|&(_, r)| smooth_l1_value(r)).sum();
        let req = self.requires_grad(deltas);
        let op = SmoothL1Op {
            deltas,
            residuals,
            count,
        };
        Ok(self.record(Tensor::scalar(total / count as f64), req, op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};

    #[test]
    fn nan_predictions_give_nan_losses() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::from_vec(vec![f64::NAN, 0.5]));
        let l = t.bce_multilabel(p, &[1.0, 0.0]).unwrap();
        assert!(t.value(l).item().is_nan());
        let s = t.constant(Tensor::from_rows(&[vec![f64::NAN, 0.5]]).unwrap());
        let l = t.softmax_ce(s, &[Some(0)]).unwrap();
        assert!(t.value(l).item().is_nan());
    }

    #[test]
    fn bce_cases() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::full(&[4], 0.5));
        let l = t.bce_multilabel(p, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((t.value(l).item() - 4.0 * 2f64.ln()).abs() < 1e-14);

        let p = t.constant(Tensor::from_vec(vec![1.0 - 1e-15, 1e-15]));
        let l = t.bce_multilabel(p, &[1.0, 0.0]).unwrap();
        assert!(t.value(l).item() < 1e-13);

        assert!(t.bce_multilabel(p, &[0.5, 0.0]).is_err());
        assert!(t.bce_multilabel(p, &[1.0]).is_err());
    }

    #[test]
    fn bce_gradient_through_sigmoid() {
        for seed in 0..5 {
            let gt: Vec<f64> = (0..5).map(|i| ((i + seed) % 2) as f64).collect();
            let err = check_gradients(&[random_tensor(&[5], seed)], |t, v| {
                let p = t.sigmoid(v[0]);
                t.bce_multilabel(p, &gt)
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }

    #[test]
    fn softmax_ce_cases() {
        let mut t = Tape::new();
        let u = t.constant(Tensor::full(&[3, 4], 0.25));
        let l = t.softmax_ce(u, &[Some(0), Some(3), Some(1)]).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-14);

        let one_hot = t.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let l = t.softmax_ce(one_hot, &[Some(1), Some(0)]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        assert!(t.softmax_ce(u, &[Some(4), None, None]).is_err());
        let l = t.softmax_ce(u, &[None, None, None]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn softmax_ce_gradient() {
        for seed in 0..5 {
            let labels = [Some(1), None, Some(0), Some(3)];
            let err = check_gradients(&[random_tensor(&[4, 4], seed)], |t, v| {
                let p = t.softmax_rows(v[0])?;
                t.softmax_ce(p, &labels)
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }

    fn targets() -> RegionTargets {
        RegionTargets {
            labels: vec![Some(1), Some(0), None, Some(2)],
            deltas: vec![
                Some([0.1, -0.2, 0.05, 0.3]),
                None,
                None,
                Some([1.5, -2.0, 0.0, 0.2]),
            ],
        }
    }

    #[test]
    fn smooth_l1_cases() {
        assert_eq!(smooth_l1_value(1.0), 0.5);
        assert_eq!(smooth_l1_value(-1.0), 0.5);
        assert!((smooth_l1_value(1.0 - 1e-12) - 0.5).abs() < 1e-11);

        let tg = targets();
        let mut d = Tensor::zeros(&[4, 12]);
        for (m, t) in tg.deltas.iter().enumerate() {
            if let (Some(k), Some(t)) = (tg.labels[m], t) {
                d.data_mut()[m * 12 + 4 * k..m * 12 + 4 * k + 4].copy_from_slice(t);
            }
        }
        let mut t = Tape::new();
        let dv = t.constant(d);
        let l = t.smooth_l1(dv, &tg).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let none = RegionTargets {
            labels: vec![Some(0); 4],
            deltas: vec![None; 4],
        };
        let l = t.smooth_l1(dv, &none).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn smooth_l1_gradient() {
        let tg = targets();
        for seed in 0..5 {
            let err = check_gradients(&[random_tensor(&[4, 12], seed)], |t, v| {
                t.smooth_l1(v[0], &tg)
            })
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }

    #[test]
    fn losses_are_non_negative() {
        let mut t = Tape::new();
        for seed in 0..20 {
            let x = t.constant(random_tensor(&[3, 5], seed));
            let p = t.softmax_rows(x).unwrap();
            let l = t.softmax_ce(p, &[Some(0), Some(2), Some(4)]).unwrap();
            assert!(t.value(l).item() >= 0.0);
            let v = t.reshape(x, &[15]).unwrap();
            let s = t.sigmoid(v);
            let gt: Vec<f64> = (0..15).map(|i| (i % 3 == 0) as u8 as f64).collect();
            let l = t.bce_multilabel(s, &gt).unwrap();
            assert!(t.value(l).item() >= 0.0);
        }
    }
}
