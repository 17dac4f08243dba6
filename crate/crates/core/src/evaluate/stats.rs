use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::EvaluateError;
use crate::util::{mean, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p_two_tailed: f64,
    pub df: usize,
    pub mean_difference: f64,
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom:
/// `I_{df / (df + t^2)}(df / 2, 1 / 2)`.
pub fn student_t_two_tailed_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired t-test of `a - b` over matched folds.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<PairedTTest, EvaluateError> {
    if a.len() != b.len() {
        return Err(EvaluateError::LengthMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(EvaluateError::TooFewFolds(a.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sd = sample_std(&d);
    let m = mean(&d);
    if sd <= 1e-12 * m.abs().max(1.0) {
        return Err(EvaluateError::DegenerateDifferences);
    }
    let k = d.len() as f64;
    let t = m / (sd / k.sqrt());
    Ok(PairedTTest {
        t,
        p_two_tailed: student_t_two_tailed_p(t, k - 1.0),
        df: d.len() - 1,
        mean_difference: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-tailed tail mass of the t density by composite Simpson's rule
    /// after substituting x = tan(theta), normalized by the total mass so no
    /// gamma function is involved.
    fn simpson_two_tailed(t: f64, df: f64) -> f64 {
        let density = |x: f64| (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let integrand = |theta: f64| {
            let c = theta.cos();
            density(theta.tan()) / (c * c)
        };
        let simpson = |a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = integrand(a) + integrand(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * integrand(a + i as f64 * h);
            }
            s * h / 3.0
        };
        let edge = std::f64::consts::FRAC_PI_2 - 1e-9;
        let total = 2.0 * simpson(0.0, edge, 20_000);
        let tail = 2.0 * simpson(t.abs().atan(), edge, 20_000);
        tail / total
    }

    #[test]
    fn matches_numerical_integration() {
        for (t, df) in [(2.776, 4.0), (3.364, 4.0), (1.0, 1.0), (0.5, 10.0), (4.0, 7.0)] {
            let p = student_t_two_tailed_p(t, df);
            let oracle = simpson_two_tailed(t, df);
            assert!((p - oracle).abs() < 1e-6, "t={t} df={df}: {p} vs {oracle}");
        }
    }

    #[test]
    fn critical_value_for_four_df() {
        assert!((student_t_two_tailed_p(2.776, 4.0) - 0.050).abs() <= 0.002);
    }

    #[test]
    fn constant_difference_is_degenerate() {
        let b = [0.6, 0.7, 0.65, 0.72, 0.69];
        let a: Vec<f64> = b.iter().map(|x| x + 0.05).collect();
        assert!(matches!(paired_ttest(&a, &b), Err(EvaluateError::DegenerateDifferences)));
        assert!(matches!(paired_ttest(&[1.0], &[0.0]), Err(EvaluateError::TooFewFolds(1))));
    }

    #[test]
    fn swapping_negates_t() {
        let a = [0.74, 0.70, 0.78, 0.69, 0.76];
        let b = [0.68, 0.66, 0.70, 0.67, 0.69];
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-12);
        assert!((ab.p_two_tailed - ba.p_two_tailed).abs() < 1e-15);
        assert_eq!(ab.df, 4);
        assert!(ab.t > 0.0);
    }

    proptest! {
        #[test]
        fn p_decreases_with_abs_t(t1 in 0.0f64..20.0, t2 in 0.0f64..20.0, df in 1usize..30) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let p_lo = student_t_two_tailed_p(lo, df as f64);
            let p_hi = student_t_two_tailed_p(hi, df as f64);
            prop_assert!(p_hi <= p_lo + 1e-15);
            prop_assert!(p_lo > 0.0 && p_lo <= 1.0);
            prop_assert!((student_t_two_tailed_p(-lo, df as f64) - p_lo).abs() < 1e-15);
        }
    }
}
