//! Softmax with temperature, Shannon entropy, and cross-entropy.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{input, param, shape, Result};

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(param(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    Ok(())
}

/// Max-subtracted `softmax(logits / t)` written into `out`.
fn softmax_into(logits: ArrayView1<'_, f64>, t: f64, out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits.iter()) {
        *o = ((z - max) / t).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `softmax(logits / t)` for a single logit vector.
pub fn softmax_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    if logits.is_empty() {
        return Err(input("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(input("logits must be finite"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(ArrayView1::from(logits), t, &mut out);
    Ok(out)
}

/// Row-wise `softmax(logits / t)` of an `N × C` logit matrix.
pub fn softmax_rows(logits: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
    check_temperature(t)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(input("logits must be finite"));
    }
    let mut out = Array2::zeros(logits.raw_dim());
    for (row, mut dst) in logits.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        softmax_into(
            row,
            t,
            dst.as_slice_mut().expect("fresh array is contiguous"),
        );
    }
    Ok(out)
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Mean negative log-likelihood of the true class.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

/// Cross-entropy together with its gradient with respect to the logits.
pub fn cross_entropy_with_grad(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(shape(format!("{} labels for {} rows", labels.len(), n)));
    }
    if n == 0 {
        return Err(input("cross-entropy of an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(input(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = softmax_rows(logits, 1.0)?;
    let mut loss = 0.0;
    for (k, (row, &y)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_sum = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[y];
        grad[[k, y]] -= 1.0;
    }
    grad /= n as f64;
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn equal_logits_are_uniform() {
        assert_eq!(
            softmax_temperature(&[0.0, 0.0], 3.0).unwrap(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn ln2_logit_gives_two_thirds() {
        let p = softmax_temperature(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn huge_temperature_is_near_uniform() {
        let p = softmax_temperature(&[4.0, -3.0, 0.5, 9.0], 1e6).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_temperature_and_logits() {
        assert!(softmax_temperature(&[1.0], 0.0).is_err());
        assert!(softmax_temperature(&[1.0], -2.0).is_err());
        assert!(softmax_temperature(&[f64::NAN, 1.0], 1.0).is_err());
        assert!(softmax_temperature(&[f64::INFINITY, 1.0], 1.0).is_err());
    }

    #[test]
    fn cross_entropy_scalar_cases() {
        assert_abs_diff_eq!(
            cross_entropy(array![[0.0, 0.0]].view(), &[0]).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert!(cross_entropy(array![[60.0, -60.0]].view(), &[0]).unwrap() < 1e-12);
        assert_abs_diff_eq!(
            cross_entropy(array![[1.0, -1.0]].view(), &[1]).unwrap(),
            (1.0 + 2f64.exp()).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        assert!(cross_entropy(array![[0.0, 0.0]].view(), &[2]).is_err());
        assert!(cross_entropy(array![[0.0, 0.0]].view(), &[0, 1]).is_err());
    }

    #[test]
    fn entropy_of_one_hot_is_zero() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(entropy(&[0.2; 5]), 5f64.ln(), epsilon = 1e-15);
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-30.0..30.0f64, 2..8)
    }

    proptest! {
        #[test]
        fn softmax_is_a_positive_distribution(z in logits_strategy(), t in 0.5..50.0f64) {
            let p = softmax_temperature(&z, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }

        #[test]
        fn softmax_is_shift_invariant(z in logits_strategy(), shift in -100.0..100.0f64, t in 0.1..10.0f64) {
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let a = softmax_temperature(&z, t).unwrap();
            let b = softmax_temperature(&shifted, t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn entropy_grows_with_temperature(z in logits_strategy(), t in 0.1..10.0f64, dt in 0.01..10.0f64) {
            let spread = z.iter().cloned().fold(f64::MIN, f64::max) - z.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-6);
            let lo = entropy(&softmax_temperature(&z, t).unwrap());
            let hi = entropy(&softmax_temperature(&z, t + dt).unwrap());
            prop_assert!(hi >= lo - 1e-12);
        }
    }
}
