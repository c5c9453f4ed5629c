use crate::error::{shape_err, Result};
use crate::numerics::Tensor4;
use crate::train::{Param, ParamKind};

/// Mean softmax cross-entropy over a batch of `[N, K, 1, 1]` logits and its
/// gradient `(softmax - onehot) / N`.
pub fn softmax_ce(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let [n, k, h, w] = logits.dims();
    if h != 1 || w != 1 || n != labels.len() {
        return shape_err(format!("logits {:?} with {} labels", logits.dims(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return shape_err(format!("label {bad} outside {k} classes"));
    }
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits.data()[b * k..(b + 1) * k];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        let lse = mx + sum.ln();
        loss += lse - row[label];
        for (j, g) in grad[b * k..(b + 1) * k].iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, Tensor4::new([n, k, 1, 1], grad)?))
}

/// Number of rows whose arg-max logit equals the label.
pub fn correct_count(logits: &Tensor4, labels: &[usize]) -> usize {
    let k = logits.c();
    labels
        .iter()
        .enumerate()
        .filter(|(b, &l)| {
            let row = &logits.data()[b * k..(b + 1) * k];
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if *v > row[best] { j } else { best });
            arg == l
        })
        .count()
}

fn decayed(p: &Param, include_transforms: bool) -> bool {
    p.trainable && (p.kind == ParamKind::Weight || (include_transforms && p.kind == ParamKind::Transform))
}

/// Adds `λ0 Σ‖w‖²` over weights (and transforms when asked) to the
/// parameter gradients and returns the penalty.
pub fn add_l2(params: &mut [&mut Param], lambda0: f64, include_transforms: bool) -> f64 {
    if lambda0 == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for p in params.iter_mut().filter(|p| decayed(p, include_transforms)) {
        total += p.sq_norm();
        for (g, v) in p.grad.iter_mut().zip(&p.value) {
            *g += 2.0 * lambda0 * v;
        }
    }
    lambda0 * total
}

/// Cross-entropy plus the L2 penalty; parameter gradients of the penalty
/// are accumulated, the logit gradient is returned.
pub fn loss_weights(
    logits: &Tensor4,
    labels: &[usize],
    params: &mut [&mut Param],
    lambda0: f64,
    include_transforms: bool,
) -> Result<(f64, Tensor4)> {
    let (ce, grad) = softmax_ce(logits, labels)?;
    Ok((ce + add_l2(params, lambda0, include_transforms), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor4::zeros([3, 5, 1, 1]);
        let (l, _) = softmax_ce(&logits, &[0, 2, 4]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Tensor4::new([2, 3, 1, 1], vec![0.3, -1.2, 2.0, 0.5, 0.1, -0.4]).unwrap();
        let labels = [2, 0];
        let (_, g) = softmax_ce(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..6 {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let fd = (softmax_ce(&p, &labels).unwrap().0 - softmax_ce(&m, &labels).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-9, "{fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn l2_skips_transforms_by_default() {
        let mut w = Param::new("w", ParamKind::Weight, vec![2], vec![1.0, 2.0]);
        let mut t = Param::new("t", ParamKind::Transform, vec![1], vec![3.0]);
        let pen = add_l2(&mut [&mut w, &mut t], 0.5, false);
        assert_eq!(pen, 2.5);
        assert_eq!(w.grad, vec![1.0, 2.0]);
        assert_eq!(t.grad, vec![0.0]);
        let pen = add_l2(&mut [&mut w, &mut t], 0.5, true);
        assert_eq!(pen, 7.0);
        assert_eq!(add_l2(&mut [&mut w], 0.0, true), 0.0);
    }
}
