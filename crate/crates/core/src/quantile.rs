//! Empirical quantiles by linear interpolation of order statistics
//! (`h = (n - 1) p + 1`, Hyndman-Fan type 7).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Type-7 quantile of an already sorted, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

pub fn sort_values(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

/// Type-7 quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("quantile of an empty sample".into()));
    }
    let mut v = values.to_vec();
    sort_values(&mut v);
    Ok(quantile_sorted(&v, p))
}

/// Sorted sample representing an empirical quantile function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    sorted: Vec<f64>,
}

impl QuantileTable {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("quantile table needs at least one value".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("quantile table values must be finite".into()));
        }
        sort_values(&mut values);
        Ok(QuantileTable { sorted: values })
    }

    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p)
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// The quantile function evaluated on `len` evenly spaced probabilities
    /// `k / (len - 1)`. A table resampled to its own length is unchanged.
    pub fn resampled(&self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![self.quantile(0.5)];
        }
        (0..len)
            .map(|k| self.quantile(k as f64 / (len - 1) as f64))
            .collect()
    }

    /// Quantile averaging across tables on a common grid of `max len` points.
    pub fn average(tables: &[QuantileTable]) -> Result<QuantileTable> {
        let len = tables
            .iter()
            .map(|t| t.len())
            .max()
            .ok_or_else(|| Error::Argument("no quantile tables to average".into()))?;
        let mut acc = vec![0.0; len];
        for t in tables {
            for (a, q) in acc.iter_mut().zip(t.resampled(len)) {
                *a += q;
            }
        }
        let m = tables.len() as f64;
        QuantileTable::new(acc.into_iter().map(|a| a / m).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_quartiles() {
        let t = QuantileTable::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(t.quantile(0.25), -0.5);
        assert_eq!(t.quantile(0.75), 0.5);
        assert_eq!(t.quantile(0.0), -1.0);
        assert_eq!(t.quantile(1.0), 1.0);
    }

    #[test]
    fn matches_r_type_seven() {
        // quantile(c(3, 1, 4, 1, 5, 9, 2, 6), c(.1, .25, .5, .9), type = 7)
        let x = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let expect = [1.0, 1.75, 3.5, 6.9];
        for (p, e) in [0.1, 0.25, 0.5, 0.9].iter().zip(expect) {
            assert!((quantile(&x, *p).unwrap() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_to_own_length_is_identity() {
        let t = QuantileTable::new(vec![0.3, -2.0, 1.5, 0.0, 7.0]).unwrap();
        assert_eq!(t.resampled(5), t.values());
        let avg = QuantileTable::average(&[t.clone(), t.clone()]).unwrap();
        assert_eq!(avg, t);
    }
}
