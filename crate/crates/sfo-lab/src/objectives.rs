//! Training losses: supervised flow matching and the pairwise subject
//! fidelity objective.
//!
//! The pairwise loss scores each (positive, negative) target pair with the
//! same noise draw and the same timestep, compares how much the policy
//! prefers the positive over the negative against the same preference under
//! a frozen reference, and penalizes the policy when its preference margin
//! is worse: `mean softplus(beta * (delta_policy - delta_ref))` where
//! `delta = err_pos - err_neg` and each `err` is the per-example mean over
//! data dimensions of the squared velocity error.
//!
//! Gradients are restricted to a caller-chosen scope; the reference pass
//! never contributes gradient.

use std::collections::BTreeSet;

use crate::adapters::{AdapterStack, StackGrads, TrainScope};
use crate::error::{Error, Result};
use crate::flow::{interpolate, CondLayout};
use crate::numcore::{Matrix, RngStream};
use crate::schedule::TimestepDist;
use crate::world::{ConditionPair, Quadruplet};

/// A batch of comparison pairs. Each pair shares one noise vector and one
/// timestep between its positive and negative targets.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadBatch {
    pub x_pos: Vec<Vec<f64>>,
    pub x_neg: Vec<Vec<f64>>,
    pub cond: Vec<ConditionPair>,
    pub eps: Vec<Vec<f64>>,
    pub t: Vec<f64>,
}

impl QuadBatch {
    pub fn new(
        x_pos: Vec<Vec<f64>>,
        x_neg: Vec<Vec<f64>>,
        cond: Vec<ConditionPair>,
        eps: Vec<Vec<f64>>,
        t: Vec<f64>,
    ) -> Result<QuadBatch> {
        let n = x_pos.len();
        if n == 0 {
            return Err(Error::invalid("quad_batch", "empty batch"));
        }
        if x_neg.len() != n || cond.len() != n || eps.len() != n || t.len() != n {
            return Err(Error::shape(
                "quad_batch",
                format!("{n} rows in every column"),
                format!(
                    "neg {}, cond {}, eps {}, t {}",
                    x_neg.len(),
                    cond.len(),
                    eps.len(),
                    t.len()
                ),
            ));
        }
        let d = x_pos[0].len();
        for i in 0..n {
            if x_pos[i].len() != d || x_neg[i].len() != d || eps[i].len() != d {
                return Err(Error::shape(
                    "quad_batch.row",
                    format!("width {d}"),
                    format!(
                        "pos {}, neg {}, eps {}",
                        x_pos[i].len(),
                        x_neg[i].len(),
                        eps[i].len()
                    ),
                ));
            }
            if !(0.0..=1.0).contains(&t[i]) {
                return Err(Error::invalid("quad_batch.t", format!("t = {} outside [0, 1]", t[i])));
            }
        }
        Ok(QuadBatch {
            x_pos,
            x_neg,
            cond,
            eps,
            t,
        })
    }

    /// Draws shared (t, eps) for each record from per-pair child streams, so
    /// the batch is a pure function of `base` and the record order.
    pub fn draw(records: &[&Quadruplet], dist: &TimestepDist, base: RngStream) -> Result<QuadBatch> {
        let mut x_pos = Vec::with_capacity(records.len());
        let mut x_neg = Vec::with_capacity(records.len());
        let mut cond = Vec::with_capacity(records.len());
        let mut eps = Vec::with_capacity(records.len());
        let mut t = Vec::with_capacity(records.len());
        for (i, q) in records.iter().enumerate() {
            let mut rng = base.split(i as u64);
            t.push(dist.sample_t(&mut rng));
            eps.push(rng.normal_vec(q.x_tgt.len()));
            x_pos.push(q.x_tgt.clone());
            x_neg.push(q.x_neg.clone());
            cond.push(q.cond.clone());
        }
        QuadBatch::new(x_pos, x_neg, cond, eps, t)
    }

    pub fn len(&self) -> usize {
        self.x_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_pos.is_empty()
    }
}

/// Per-pair diagnostics for one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerms {
    pub err_pos_policy: f64,
    pub err_neg_policy: f64,
    pub err_pos_ref: f64,
    pub err_neg_ref: f64,
    pub delta_policy: f64,
    pub delta_ref: f64,
    pub inner: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOut {
    pub value: f64,
    pub per_example: Vec<PairTerms>,
}

impl LossOut {
    pub fn mean_delta_policy(&self) -> f64 {
        mean(self.per_example.iter().map(|p| p.delta_policy))
    }

    pub fn mean_delta_ref(&self) -> f64 {
        mean(self.per_example.iter().map(|p| p.delta_ref))
    }

    pub fn mean_inner(&self) -> f64 {
        mean(self.per_example.iter().map(|p| p.inner))
    }

    /// Fraction of pairs where the policy prefers the positive more than the
    /// reference does.
    pub fn implicit_accuracy(&self) -> f64 {
        let hits = self.per_example.iter().filter(|p| p.inner < 0.0).count();
        hits as f64 / self.per_example.len() as f64
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in it {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Numerically stable `ln(1 + e^x)`; exact `x` for large positive arguments.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar oracle for the pairwise loss on a single pair with known errors.
pub fn sfo_value_from_errors(
    err_pos_policy: f64,
    err_neg_policy: f64,
    err_pos_ref: f64,
    err_neg_ref: f64,
    beta: f64,
) -> f64 {
    let inner = (err_pos_policy - err_neg_policy) - (err_pos_ref - err_neg_ref);
    softplus(beta * inner)
}

/// One noised forward pass over the positive and negative halves of a quad
/// batch. Row i is the positive of pair i, row B+i the negative; both share
/// `(t[i], eps[i])`.
struct PairPass {
    input: Matrix,
    residual: Matrix,
    err_pos: Vec<f64>,
    err_neg: Vec<f64>,
}

fn pair_pass(
    stack: &AdapterStack,
    enabled: &BTreeSet<String>,
    layout: &CondLayout,
    quad: &QuadBatch,
) -> Result<PairPass> {
    let b = quad.len();
    let d = quad.x_pos[0].len();
    if layout.data_dim != d {
        return Err(Error::shape("pair_pass", format!("data_dim {}", layout.data_dim), format!("{d}")));
    }
    let mut x_rows: Vec<Vec<f64>> = Vec::with_capacity(2 * b);
    let mut targets = Matrix::zeros(2 * b, d);
    for (half, xs) in [(0usize, &quad.x_pos), (b, &quad.x_neg)] {
        for i in 0..b {
            let p = interpolate(&xs[i], &quad.eps[i], quad.t[i])?;
            targets.row_mut(half + i).copy_from_slice(&p.velocity_target);
            x_rows.push(p.x_t);
        }
    }
    let x_refs: Vec<&[f64]> = x_rows.iter().map(|r| r.as_slice()).collect();
    let mut ts = Vec::with_capacity(2 * b);
    ts.extend_from_slice(&quad.t);
    ts.extend_from_slice(&quad.t);
    let mut conds: Vec<&ConditionPair> = Vec::with_capacity(2 * b);
    conds.extend(quad.cond.iter());
    conds.extend(quad.cond.iter());
    let input = layout.pack(&x_refs, &ts, &conds)?;
    let pred = stack.forward_with(enabled, &input)?;
    let mut residual = pred;
    residual.add_scaled(&targets, -1.0);
    let row_err = |r: usize| -> f64 {
        let row = residual.row(r);
        row.iter().map(|v| v * v).sum::<f64>() / d as f64
    };
    let err_pos: Vec<f64> = (0..b).map(row_err).collect();
    let err_neg: Vec<f64> = (b..2 * b).map(row_err).collect();
    Ok(PairPass {
        input,
        residual,
        err_pos,
        err_neg,
    })
}

/// Per-example preference margin `err_pos - err_neg` under one model view.
pub fn delta(
    stack: &AdapterStack,
    enabled: &BTreeSet<String>,
    layout: &CondLayout,
    quad: &QuadBatch,
) -> Result<Vec<f64>> {
    let pass = pair_pass(stack, enabled, layout, quad)?;
    Ok(pass
        .err_pos
        .iter()
        .zip(&pass.err_neg)
        .map(|(p, n)| p - n)
        .collect())
}

/// Supervised flow-matching loss: mean over batch and data dimensions of the
/// squared velocity error, with gradients restricted to `scope`.
pub fn sft_loss(
    stack: &AdapterStack,
    enabled: &BTreeSet<String>,
    layout: &CondLayout,
    scope: &TrainScope,
    x_tgt: &[&[f64]],
    conds: &[&ConditionPair],
    t: &[f64],
    eps: &[&[f64]],
) -> Result<(f64, StackGrads)> {
    let b = x_tgt.len();
    if b == 0 {
        return Err(Error::invalid("sft_loss", "empty batch"));
    }
    if conds.len() != b || t.len() != b || eps.len() != b {
        return Err(Error::shape(
            "sft_loss",
            format!("{b} rows in every column"),
            format!("conds {}, t {}, eps {}", conds.len(), t.len(), eps.len()),
        ));
    }
    let d = layout.data_dim;
    let mut x_rows: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut targets = Matrix::zeros(b, d);
    for i in 0..b {
        let p = interpolate(x_tgt[i], eps[i], t[i])?;
        targets.row_mut(i).copy_from_slice(&p.velocity_target);
        x_rows.push(p.x_t);
    }
    let x_refs: Vec<&[f64]> = x_rows.iter().map(|r| r.as_slice()).collect();
    let input = layout.pack(&x_refs, t, conds)?;
    let pred = stack.forward_with(enabled, &input)?;
    let mut residual = pred;
    residual.add_scaled(&targets, -1.0);
    let denom = (b * d) as f64;
    let value = residual.data().iter().map(|v| v * v).sum::<f64>() / denom;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "sft_loss value".to_string(),
            index: 0,
        });
    }
    let mut upstream = residual;
    upstream.scale(2.0 / denom);
    let (grads, _) = stack.backward_scoped(enabled, scope, &input, &upstream)?;
    Ok((value, grads))
}

/// Pairwise preference loss with a frozen reference pass.
///
/// `stack`/`policy_enabled` define the policy; `ref_stack`/`ref_enabled` the
/// reference (usually the same stack under a smaller adapter set, or a frozen
/// snapshot). Gradients are taken through the policy pass only and restricted
/// to `scope`.
#[allow(clippy::too_many_arguments)]
pub fn sfo_loss(
    stack: &AdapterStack,
    policy_enabled: &BTreeSet<String>,
    ref_stack: &AdapterStack,
    ref_enabled: &BTreeSet<String>,
    layout: &CondLayout,
    scope: &TrainScope,
    quad: &QuadBatch,
    beta: f64,
) -> Result<(LossOut, StackGrads)> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid("sfo_loss.beta", "must be finite and > 0"));
    }
    let b = quad.len();
    let d = quad.x_pos[0].len();
    let policy = pair_pass(stack, policy_enabled, layout, quad)?;
    let reference = pair_pass(ref_stack, ref_enabled, layout, quad)?;
    let mut per_example = Vec::with_capacity(b);
    let mut value = 0.0;
    for i in 0..b {
        let delta_policy = policy.err_pos[i] - policy.err_neg[i];
        let delta_ref = reference.err_pos[i] - reference.err_neg[i];
        let inner = delta_policy - delta_ref;
        if !inner.is_finite() {
            return Err(Error::NonFinite {
                context: "sfo_loss inner".to_string(),
                index: i,
            });
        }
        value += softplus(beta * inner);
        per_example.push(PairTerms {
            err_pos_policy: policy.err_pos[i],
            err_neg_policy: policy.err_neg[i],
            err_pos_ref: reference.err_pos[i],
            err_neg_ref: reference.err_neg[i],
            delta_policy,
            delta_ref,
            inner,
        });
    }
    value /= b as f64;
    // d(loss)/d(residual_pos[i]) = sigmoid(beta inner_i) beta / B * 2 r / d,
    // negated on the negative half; the reference pass gets no gradient.
    let mut upstream = policy.residual.clone();
    for i in 0..b {
        let w = sigmoid(beta * per_example[i].inner) * beta / b as f64 * 2.0 / d as f64;
        for v in upstream.row_mut(i) {
            *v *= w;
        }
        for v in upstream.row_mut(b + i) {
            *v *= -w;
        }
    }
    let (grads, _) = stack.backward_scoped(policy_enabled, scope, &policy.input, &upstream)?;
    Ok((LossOut { value, per_example }, grads))
}
