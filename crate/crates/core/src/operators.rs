//! Thresholding operators and the support-selection schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::shrink;

fn check_theta(theta: f64) -> Result<()> {
    if theta >= 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("threshold must be finite and >= 0, got {theta}")))
    }
}

/// Componentwise `sign(v)·max(|v| − θ, 0)`.
pub fn soft_threshold(v: &[f64], theta: f64) -> Result<Vec<f64>> {
    check_theta(theta)?;
    Ok(v.iter().map(|&x| shrink(x, theta)).collect())
}

/// Indices of the `count` largest magnitudes, lower index first on ties.
/// Returned in increasing index order.
pub fn select_support(v: &[f64], count: usize) -> Vec<usize> {
    let count = count.min(v.len());
    if count == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    let by_rank = |&a: &usize, &b: &usize| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b));
    if count < v.len() {
        idx.select_nth_unstable_by(count - 1, by_rank);
    }
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

/// Writes the selection mask for `v` into `mask`.
pub(crate) fn selection_mask(v: &[f64], count: usize, mask: &mut [bool]) {
    mask.iter_mut().for_each(|m| *m = false);
    for i in select_support(v, count) {
        mask[i] = true;
    }
}

/// Thresholding with support selection.
///
/// Entries above `θ` in magnitude pass unchanged when they are among the
/// `count` largest, and are shrunk by `θ` otherwise. Entries with
/// `|v_i| ≤ θ` become zero whether selected or not.
pub fn ss_threshold(v: &[f64], theta: f64, count: usize) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let mut mask = vec![false; v.len()];
    selection_mask(v, count, &mut mask);
    Ok(v
        .iter()
        .zip(&mask)
        .map(|(&x, &sel)| ss_scalar(x, theta, sel))
        .collect())
}

#[inline]
pub(crate) fn ss_scalar(x: f64, theta: f64, selected: bool) -> f64 {
    if x.abs() <= theta {
        0.0
    } else if selected {
        x
    } else {
        shrink(x, theta)
    }
}

/// Per-layer trusted-support percentages `p^k = min(p·k, p_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportSchedule {
    pub p: f64,
    pub p_max: f64,
    pub n: usize,
}

impl SupportSchedule {
    pub fn new(p: f64, p_max: f64, n: usize) -> Result<Self> {
        if !(p >= 0.0) || !(0.0..=100.0).contains(&p_max) {
            return Err(Error::Config(format!(
                "support schedule needs p >= 0 and 0 <= p_max <= 100, got p={p} p_max={p_max}"
            )));
        }
        Ok(Self { p, p_max, n })
    }

    /// A schedule that never selects anything.
    pub fn none(n: usize) -> Self {
        Self { p: 0.0, p_max: 0.0, n }
    }

    pub fn percent(&self, k: usize) -> f64 {
        (self.p * k as f64).min(self.p_max)
    }

    /// `floor(p^k · n / 100)`. The small offset absorbs representation error
    /// in products such as `1.2 * 5`.
    pub fn pk_count(&self, k: usize) -> usize {
        let c = (self.percent(k) * self.n as f64 / 100.0 + 1e-9).floor() as usize;
        c.min(self.n)
    }

    pub fn counts(&self, layers: usize) -> Vec<usize> {
        (0..layers).map(|k| self.pk_count(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[2.0, -0.5, 0.3], 0.5).unwrap(), vec![1.5, 0.0, 0.0]);
        let v = [1.0, -3.0, 0.0, 1e-300];
        assert_eq!(soft_threshold(&v, 0.0).unwrap(), v.to_vec());
        assert!(soft_threshold(&v, -0.1).is_err());
        assert!(soft_threshold(&v, f64::NAN).is_err());
    }

    #[test]
    fn select_support_examples() {
        assert_eq!(select_support(&[3.0, 1.0, -0.4], 1), vec![0]);
        assert_eq!(select_support(&[1.0, 1.0], 1), vec![0]);
        assert_eq!(select_support(&[1.0, -5.0], 0), Vec::<usize>::new());
        assert_eq!(select_support(&[1.0, -5.0], 7), vec![0, 1]);
    }

    #[test]
    fn ss_threshold_examples() {
        assert_eq!(ss_threshold(&[3.0, 1.0, -0.4], 0.5, 1).unwrap(), vec![3.0, 0.5, 0.0]);
        // Selected but inside the dead zone is still zeroed.
        assert_eq!(ss_threshold(&[0.4, 0.1], 0.5, 2).unwrap(), vec![0.0, 0.0]);
        let v = [0.2, -3.0, 1.5];
        assert_eq!(ss_threshold(&v, 0.0, 2).unwrap(), v.to_vec());
        assert_eq!(ss_threshold(&v, 0.7, 0).unwrap(), soft_threshold(&v, 0.7).unwrap());
        assert!(ss_threshold(&v, -1.0, 1).is_err());
    }

    #[test]
    fn pk_count_examples() {
        let s = SupportSchedule::new(1.2, 12.0, 500).unwrap();
        assert_eq!(s.pk_count(5), 30);
        assert_eq!(s.pk_count(16), 60);
        assert_eq!(s.pk_count(0), 0);
        assert!(SupportSchedule::new(1.0, 101.0, 5).is_err());
        assert!(SupportSchedule::new(-1.0, 10.0, 5).is_err());
    }

    fn vecs(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn soft_threshold_matches_scalar_oracle(v in vecs(20), theta in 0.0f64..5.0) {
            let out = soft_threshold(&v, theta).unwrap();
            for (o, x) in out.iter().zip(&v) {
                let expect = if x.abs() > theta { x.abs() - theta } else { 0.0 };
                prop_assert!((o.abs() - expect).abs() < 1e-12);
                prop_assert!(*o == 0.0 || o.signum() == x.signum());
            }
        }

        #[test]
        fn soft_threshold_is_nonexpansive(a in vecs(16), b in vecs(16), theta in 0.0f64..3.0) {
            let ta = soft_threshold(&a, theta).unwrap();
            let tb = soft_threshold(&b, theta).unwrap();
            let d_out: f64 = ta.iter().zip(&tb).map(|(x, y)| (x - y).powi(2)).sum();
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn select_support_matches_sort_oracle(v in vecs(100), count in 0usize..120) {
            let mut order: Vec<usize> = (0..v.len()).collect();
            order.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap().then(a.cmp(&b)));
            let mut expect: Vec<usize> = order.into_iter().take(count).collect();
            expect.sort_unstable();
            prop_assert_eq!(select_support(&v, count), expect);
        }

        #[test]
        fn selection_is_nested(v in prop::collection::vec(-3i32..3, 30), count in 0usize..30) {
            // Integer-valued entries force plenty of ties.
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let small = select_support(&v, count);
            let big = select_support(&v, count + 1);
            prop_assert_eq!(small.len(), count.min(v.len()));
            prop_assert!(small.iter().all(|i| big.contains(i)));
        }

        #[test]
        fn ss_threshold_properties(v in vecs(40), theta in 0.0f64..4.0, count in 0usize..40) {
            let out = ss_threshold(&v, theta, count).unwrap();
            let sel = select_support(&v, count);
            for (i, (&o, &x)) in out.iter().zip(&v).enumerate() {
                prop_assert!(o.abs() <= x.abs());
                prop_assert!(o == 0.0 || o.signum() == x.signum());
                if sel.contains(&i) && x.abs() > theta {
                    prop_assert_eq!(o, x);
                }
            }
            let plain = soft_threshold(&v, theta).unwrap();
            let none = ss_threshold(&v, theta, 0).unwrap();
            prop_assert!(plain.iter().zip(&none).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
