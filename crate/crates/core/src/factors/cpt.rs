use crate::dataset::DiscreteDataset;
use crate::error::{Error, Result};

use super::Factor;

/// Conditional probability table `P(child | parents)` from weighted counts.
///
/// Every cell receives `smoothing` pseudo-counts. A parent assignment with no
/// mass at all (no rows and zero smoothing) gets a uniform row.
pub fn estimate_cpt<S: AsRef<str>>(
    data: &DiscreteDataset,
    child: &str,
    parents: &[S],
    smoothing: f64,
) -> Result<Factor> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be finite and non-negative, got {smoothing}"
        )));
    }
    let child_var = data.variable(child)?.clone();
    let child_col = data.column(child)?;
    let mut scope = Vec::with_capacity(parents.len() + 1);
    let mut cols = Vec::with_capacity(parents.len());
    for p in parents {
        let p = p.as_ref();
        scope.push(data.variable(p)?.clone());
        cols.push(data.column(p)?);
    }
    let k = child_var.cardinality();
    let n_parent: usize = scope.iter().map(|v| v.cardinality()).product();
    let cards: Vec<usize> = scope.iter().map(|v| v.cardinality()).collect();
    scope.push(child_var);

    let mut counts = vec![smoothing; n_parent * k];
    for row in 0..data.n_rows() {
        let mut idx = 0usize;
        for (col, &card) in cols.iter().zip(&cards) {
            idx = idx * card + col[row] as usize;
        }
        counts[idx * k + child_col[row] as usize] += data.weight(row);
    }
    for block in counts.chunks_mut(k) {
        let total: f64 = block.iter().sum();
        if total > 0.0 {
            block.iter_mut().for_each(|c| *c /= total);
        } else {
            block.iter_mut().for_each(|c| *c = 1.0 / k as f64);
        }
    }
    Factor::new(scope, counts)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::factors::DiscreteVariable;

    fn dataset(cols: &[(&str, usize, Vec<u32>)], weights: Option<Vec<f64>>) -> DiscreteDataset {
        let vars = cols
            .iter()
            .map(|(n, k, _)| DiscreteVariable::indexed(*n, *k).unwrap())
            .collect();
        let columns: BTreeMap<String, Vec<u32>> =
            cols.iter().map(|(n, _, c)| (n.to_string(), c.clone())).collect();
        DiscreteDataset::new(vars, columns, weights).unwrap()
    }

    #[test]
    fn point_mass_without_smoothing() {
        let d = dataset(&[("A", 3, vec![1, 1, 1, 1])], None);
        let f = estimate_cpt::<&str>(&d, "A", &[], 0.0).unwrap();
        assert_eq!(f.values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn unseen_parent_assignment_is_uniform() {
        let d = dataset(&[("A", 2, vec![0, 0, 0]), ("B", 3, vec![2, 0, 2])], None);
        let f = estimate_cpt(&d, "B", &["A"], 1.0).unwrap();
        let row = f.reduce("A", "1").unwrap();
        for v in row.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let seen = f.reduce("A", "0").unwrap();
        // counts (1+1, 0+1, 2+1) / 6
        assert_eq!(seen.values(), &[2.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0]);
    }

    #[test]
    fn rows_sum_to_one() {
        let d = dataset(
            &[("A", 2, vec![0, 1, 1, 0, 1]), ("B", 2, vec![1, 1, 0, 0, 1]), ("C", 3, vec![0, 2, 2, 1, 0])],
            Some(vec![1.0, 2.0, 0.5, 3.0, 1.5]),
        );
        let f = estimate_cpt(&d, "C", &["A", "B"], 0.3).unwrap();
        for a in ["0", "1"] {
            for b in ["0", "1"] {
                let row = f.reduce("A", a).unwrap().reduce("B", b).unwrap();
                assert!((row.total() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_preserving_split_is_invisible() {
        let whole = dataset(&[("A", 2, vec![0, 1]), ("B", 2, vec![1, 0])], Some(vec![3.0, 1.0]));
        let split = dataset(
            &[("A", 2, vec![0, 0, 1]), ("B", 2, vec![1, 1, 0])],
            Some(vec![1.5, 1.5, 1.0]),
        );
        let a = estimate_cpt(&whole, "B", &["A"], 1.0).unwrap();
        let b = estimate_cpt(&split, "B", &["A"], 1.0).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn errors() {
        let d = dataset(&[("A", 2, vec![0])], None);
        assert!(matches!(estimate_cpt::<&str>(&d, "A", &[], -1.0), Err(Error::InvalidArgument(_))));
        let empty = dataset(&[("A", 2, vec![])], None);
        assert!(matches!(estimate_cpt::<&str>(&empty, "A", &[], 1.0), Err(Error::EmptyDataset)));
        assert!(estimate_cpt(&d, "A", &["Q"], 1.0).is_err());
    }
}
