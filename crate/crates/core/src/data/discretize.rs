use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{DiscreteVariable, State};

/// One bin `[low, high)`; the last bin of a [`Binning`] is closed on the right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub midpoint: f64,
}

/// Contiguous bins covering `[bins[0].low, bins[last].high]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    bins: Vec<Bin>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    /// Equal-width bins over a fixed range, or over the observed range when `range` is absent.
    EqualWidth {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<(f64, f64)>,
    },
    EqualFrequency,
}

impl Binning {
    fn from_edges(edges: &[f64]) -> Self {
        let bins = edges
            .windows(2)
            .map(|e| Bin {
                low: e[0],
                high: e[1],
                midpoint: 0.5 * (e[0] + e[1]),
            })
            .collect();
        Binning { bins }
    }

    pub fn equal_width(low: f64, high: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("bin count must be at least 1".into()));
        }
        if !(low.is_finite() && high.is_finite()) || high < low {
            return Err(Error::InvalidArgument(format!("invalid bin range [{low}, {high}]")));
        }
        if high == low {
            return Ok(Binning::from_edges(&[low, high]));
        }
        let width = (high - low) / k as f64;
        let mut edges: Vec<f64> = (0..k).map(|i| low + width * i as f64).collect();
        edges.push(high);
        Ok(Binning::from_edges(&edges))
    }

    /// Quantile bins. Returns the binning and whether `k` had to be reduced
    /// because the sample has too few distinct values.
    pub fn equal_frequency(values: &[f64], k: usize) -> Result<(Self, bool)> {
        if k == 0 {
            return Err(Error::InvalidArgument("bin count must be at least 1".into()));
        }
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sorted = values.to_vec();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite value in column".into()));
        }
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut edges = vec![sorted[0]];
        for i in 1..k {
            let e = sorted[i * n / k];
            if e > *edges.last().unwrap() {
                edges.push(e);
            }
        }
        let max = sorted[n - 1];
        if max > *edges.last().unwrap() || edges.len() == 1 {
            edges.push(max);
        }
        let reduced = edges.len() - 1 < k;
        Ok((Binning::from_edges(&edges), reduced))
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Bin index of `v`. Values below the first bin map to it, values above the last to it.
    pub fn assign(&self, v: f64) -> usize {
        let last = self.bins.len() - 1;
        self.bins[..last].partition_point(|b| b.high <= v)
    }

    pub fn labels(&self) -> Vec<String> {
        let last = self.bins.len() - 1;
        self.bins
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let close = if i == last { ']' } else { ')' };
                format!("[{},{}{close}", b.low, b.high)
            })
            .collect()
    }

    /// A variable whose states are these bins, valued at their midpoints.
    pub fn variable(&self, name: &str) -> Result<DiscreteVariable> {
        let states = self
            .labels()
            .into_iter()
            .zip(&self.bins)
            .map(|(label, b)| State {
                label,
                value: Some(b.midpoint),
            })
            .collect();
        DiscreteVariable::from_states(name, states)
    }
}

/// Bins a numeric column, returning state indices and the binning used.
pub fn discretize(values: &[f64], method: Method, k: usize) -> Result<(Vec<u32>, Binning)> {
    let binning = match method {
        Method::EqualWidth { range: Some((lo, hi)) } => Binning::equal_width(lo, hi, k)?,
        Method::EqualWidth { range: None } => {
            if values.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Binning::equal_width(lo, hi, k)?
        }
        Method::EqualFrequency => {
            let (b, reduced) = Binning::equal_frequency(values, k)?;
            if reduced {
                log::warn!("equal-frequency binning reduced from {k} to {} bins", b.len());
            }
            b
        }
    };
    let idx = values.iter().map(|&v| binning.assign(v) as u32).collect();
    Ok((idx, binning))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_width_halves() {
        let values: Vec<f64> = (0..10).map(f64::from).collect();
        let (idx, b) = discretize(&values, Method::EqualWidth { range: None }, 2).unwrap();
        assert_eq!(b.bins()[0], Bin { low: 0.0, high: 4.5, midpoint: 2.25 });
        assert_eq!(b.bins()[1], Bin { low: 4.5, high: 9.0, midpoint: 6.75 });
        assert_eq!(idx, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(b.labels(), vec!["[0,4.5)", "[4.5,9]"]);
    }

    #[test]
    fn last_bin_is_closed_and_outliers_clamp() {
        let b = Binning::equal_width(0.0, 1.0, 4).unwrap();
        assert_eq!(b.assign(1.0), 3);
        assert_eq!(b.assign(0.25), 1);
        assert_eq!(b.assign(-3.0), 0);
        assert_eq!(b.assign(7.0), 3);
    }

    #[test]
    fn constant_column_occupies_one_bin() {
        let values = vec![3.5; 20];
        for k in [1, 3, 10] {
            for method in [Method::EqualWidth { range: None }, Method::EqualFrequency] {
                let (idx, _) = discretize(&values, method, k).unwrap();
                assert!(idx.iter().all(|&i| i == idx[0]));
            }
        }
        let (b, reduced) = Binning::equal_frequency(&values, 4).unwrap();
        assert!(reduced);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn equal_frequency_on_skewed_sample() {
        let values: Vec<f64> = (1..=1003).map(|i| (i as f64 * 0.37).exp().ln().powi(3)).collect();
        let (idx, b) = discretize(&values, Method::EqualFrequency, 4).unwrap();
        assert_eq!(b.len(), 4);
        let mut counts = [0usize; 4];
        for i in idx {
            counts[i as usize] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn variable_carries_midpoints() {
        let v = Binning::equal_width(0.0, 45000.0, 50).unwrap().variable("Y0").unwrap();
        assert_eq!(v.cardinality(), 50);
        assert_eq!(v.representatives().unwrap()[0], 450.0);
    }

    #[test]
    fn bad_arguments() {
        assert!(Binning::equal_width(1.0, 0.0, 2).is_err());
        assert!(Binning::equal_width(0.0, 1.0, 0).is_err());
        assert!(Binning::equal_frequency(&[], 2).is_err());
    }
}
