//! Column-oriented table of discretised unit records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::DiscreteVariable;

/// Where a dataset came from and what was done to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub transforms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDataset {
    variables: BTreeMap<String, DiscreteVariable>,
    columns: BTreeMap<String, Vec<u32>>,
    weights: Option<Vec<f64>>,
    rows: usize,
    pub provenance: Provenance,
}

impl DiscreteDataset {
    /// Builds a dataset from a variable catalog and one state-index column per variable.
    pub fn new(
        variables: Vec<DiscreteVariable>,
        columns: BTreeMap<String, Vec<u32>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let variables: BTreeMap<String, DiscreteVariable> = variables
            .into_iter()
            .map(|v| (v.name().to_string(), v))
            .collect();
        let rows = columns.values().next().map_or(0, Vec::len);
        for (name, col) in &columns {
            let var = variables
                .get(name)
                .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
            if col.len() != rows {
                return Err(Error::InvalidArgument(format!(
                    "column `{name}` has {} rows, expected {rows}",
                    col.len()
                )));
            }
            if let Some(&bad) = col.iter().find(|&&s| s as usize >= var.cardinality()) {
                return Err(Error::InvalidArgument(format!(
                    "column `{name}` holds state {bad} but `{name}` has {} states",
                    var.cardinality()
                )));
            }
        }
        if let Some(missing) = variables.keys().find(|k| !columns.contains_key(*k)) {
            return Err(Error::MissingColumn(missing.clone()));
        }
        if let Some(w) = &weights {
            if w.len() != rows {
                return Err(Error::InvalidArgument(format!(
                    "{} weights for {rows} rows",
                    w.len()
                )));
            }
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument("weights must be positive".into()));
            }
        }
        Ok(DiscreteDataset {
            variables,
            columns,
            weights,
            rows,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn variables(&self) -> impl Iterator<Item = &DiscreteVariable> {
        self.variables.values()
    }

    pub fn variable(&self, name: &str) -> Result<&DiscreteVariable> {
        self.variables
            .get(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&[u32]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, row: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[row])
    }

    /// Copy with one column replaced; the variable catalog is unchanged.
    pub fn with_column(&self, name: &str, column: Vec<u32>) -> Result<Self> {
        let var = self.variable(name)?;
        if column.len() != self.rows {
            return Err(Error::InvalidArgument(format!(
                "replacement column has {} rows, expected {}",
                column.len(),
                self.rows
            )));
        }
        if column.iter().any(|&s| s as usize >= var.cardinality()) {
            return Err(Error::InvalidArgument(format!("state out of range for `{name}`")));
        }
        let mut out = self.clone();
        out.columns.insert(name.to_string(), column);
        Ok(out)
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|(k, col)| (k.clone(), indices.iter().map(|&i| col[i]).collect()))
            .collect();
        let weights = self
            .weights
            .as_ref()
            .map(|w| indices.iter().map(|&i| w[i]).collect());
        DiscreteDataset {
            variables: self.variables.clone(),
            columns,
            weights,
            rows: indices.len(),
            provenance: self.provenance.clone(),
        }
    }

    /// Restricts the dataset to the named columns.
    pub fn project<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut variables = Vec::new();
        let mut columns = BTreeMap::new();
        for n in names {
            let n = n.as_ref();
            variables.push(self.variable(n)?.clone());
            columns.insert(n.to_string(), self.column(n)?.to_vec());
        }
        let mut out = DiscreteDataset::new(variables, columns, self.weights.clone())?;
        out.rows = self.rows;
        out.provenance = self.provenance.clone();
        Ok(out)
    }
}
