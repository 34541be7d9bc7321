//! Selection of the likelihood mode in which the observation mechanism
//! classifies correctly more often than not, on average over subjects.
//!
//! The two modes are related by [`ParameterSet::transpose`]. A fit is kept
//! when its average sensitivity and specificity both exceed 0.5; otherwise the
//! transposed set is returned.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{average_classification_rates, ObservedDataset, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub flipped: bool,
    /// Neither orientation has both averages above 0.5.
    pub ambiguous: bool,
    pub pre_sens: f64,
    pub pre_spec: f64,
    pub post_sens: f64,
    pub post_spec: f64,
}

pub fn correct_label_switching(
    params: &ParameterSet,
    data: &ObservedDataset,
) -> Result<(ParameterSet, CorrectionReport)> {
    let pre = average_classification_rates(params, data)?;
    if pre.diagonally_dominant() {
        return Ok((
            params.clone(),
            CorrectionReport {
                flipped: false,
                ambiguous: false,
                pre_sens: pre.sens,
                pre_spec: pre.spec,
                post_sens: pre.sens,
                post_spec: pre.spec,
            },
        ));
    }

    let transposed = params.transpose();
    let post = average_classification_rates(&transposed, data)?;
    let ambiguous = !post.diagonally_dominant();
    // Ties keep the input orientation so the correction stays idempotent.
    let flip = !ambiguous || post.sens + post.spec > pre.sens + pre.spec;
    let (chosen, rates) = if flip {
        (transposed, post)
    } else {
        (params.clone(), pre)
    };
    Ok((
        chosen,
        CorrectionReport {
            flipped: flip,
            ambiguous,
            pre_sens: pre.sens,
            pre_spec: pre.spec,
            post_sens: rates.sens,
            post_spec: rates.spec,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{logit, observed_loglik, Class};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn data(n: usize) -> ObservedDataset {
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.37).sin() * 2.0);
        let z = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.73).cos().abs() * 2.0);
        let y = (0..n)
            .map(|i| if i % 5 < 3 { Class::One } else { Class::Two })
            .collect();
        ObservedDataset::new(y, x, z).unwrap()
    }

    /// Intercept-only observation mechanism so averages are exact.
    fn intercept_data(n: usize) -> ObservedDataset {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
        let z = DMatrix::zeros(n, 0);
        ObservedDataset::new(vec![Class::One; n], x, z).unwrap()
    }

    #[test]
    fn dominant_set_is_unchanged() {
        let d = intercept_data(20);
        let p = ParameterSet::new(vec![1.0, -2.0], vec![logit(0.856)], vec![logit(1.0 - 0.853)]);
        let (c, r) = correct_label_switching(&p, &d).unwrap();
        assert_eq!(c, p);
        assert!(!r.flipped && !r.ambiguous);
        assert!((r.pre_sens - 0.856).abs() < 1e-12);
        assert!((r.pre_spec - 0.853).abs() < 1e-12);
    }

    #[test]
    fn low_rates_are_transposed() {
        let d = intercept_data(20);
        let good = ParameterSet::new(vec![0.5, -1.0], vec![logit(0.85)], vec![logit(0.14)]);
        let bad = good.transpose();
        let (c, r) = correct_label_switching(&bad, &d).unwrap();
        assert!((r.pre_sens - 0.14).abs() < 1e-12);
        assert!((r.pre_spec - 0.15).abs() < 1e-12);
        assert!(r.flipped && !r.ambiguous);
        assert!(r.post_sens > 0.5 && r.post_spec > 0.5);
        assert_eq!(c, good);
    }

    #[test]
    fn ambiguous_picks_larger_sum() {
        let d = intercept_data(10);
        // sens 0.3, spec 0.6: transposed has sens 0.4, spec 0.7.
        let p = ParameterSet::new(vec![0.2, 0.1], vec![logit(0.3)], vec![logit(0.4)]);
        let (c, r) = correct_label_switching(&p, &d).unwrap();
        assert!(r.ambiguous && r.flipped);
        assert_eq!(c, p.transpose());
        let (c2, r2) = correct_label_switching(&c, &d).unwrap();
        assert!(r2.ambiguous && !r2.flipped);
        assert_eq!(c2, c);
    }

    fn coef() -> impl Strategy<Value = f64> {
        -3.0f64..3.0
    }

    proptest! {
        #[test]
        fn idempotent_and_likelihood_preserving(
            b in (coef(), coef()), g1 in (coef(), coef()), g2 in (coef(), coef())
        ) {
            let d = data(40);
            let p = ParameterSet::new(vec![b.0, b.1], vec![g1.0, g1.1], vec![g2.0, g2.1]);
            let (once, r1) = correct_label_switching(&p, &d).unwrap();
            let (twice, _) = correct_label_switching(&once, &d).unwrap();
            prop_assert_eq!(&once, &twice);
            let before = observed_loglik(&p, &d).unwrap();
            let after = observed_loglik(&once, &d).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
            let either = average_classification_rates(&p, &d).unwrap().diagonally_dominant()
                || average_classification_rates(&p.transpose(), &d).unwrap().diagonally_dominant();
            if either {
                prop_assert!(!r1.ambiguous);
                prop_assert!(r1.post_sens > 0.5 && r1.post_spec > 0.5);
            }
        }
    }
}
