//! Household records: ingest, derivation, resampling, discretisation and
//! dataset snapshots.

mod discretize;
mod raw;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DiscreteDataset, Provenance};
use crate::error::{Error, Result};
use crate::factors::DiscreteVariable;

pub use discretize::{discretize, Bin, Binning, Method};
pub use raw::{
    derive_variables, filter_main_fuel_gas, ingest_csv, stratified_resample, Column, ColumnKind,
    ColumnSpec, RawRecordTable, RejectedRow, Schema,
};

const WEIGHT_COLUMN: &str = "_weight";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnBinning {
    pub column: String,
    #[serde(flatten)]
    pub method: Method,
    pub bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub per_stratum: usize,
    pub seed: u64,
}

/// How raw household records become a discrete dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparePlan {
    pub numeric: Vec<ColumnBinning>,
    pub categorical: Vec<String>,
    /// Drop non-gas rows when a `main_fuel` column is present.
    pub filter_gas: bool,
    /// Weighted resampling per `year`; when absent, survey weights (if any)
    /// are carried into the dataset as row weights.
    pub resample: Option<ResamplePlan>,
}

impl Default for PreparePlan {
    fn default() -> Self {
        let width = |column: &str, lo: f64, hi: f64, bins: usize| ColumnBinning {
            column: column.into(),
            method: Method::EqualWidth { range: Some((lo, hi)) },
            bins,
        };
        let freq = |column: &str| ColumnBinning {
            column: column.into(),
            method: Method::EqualFrequency,
            bins: 10,
        };
        PreparePlan {
            numeric: vec![
                width("Y0", 0.0, 45_000.0, 50),
                // one-point bins centred on whole percentages
                width("W", -0.005, 0.245, 25),
                freq("V1"),
                freq("V7"),
                freq("V9"),
                freq("V10"),
            ],
            categorical: ["X", "V0", "V2", "V3", "V4", "V5", "V6", "V8"]
                .into_iter()
                .map(String::from)
                .collect(),
            filter_gas: true,
            resample: Some(ResamplePlan {
                per_stratum: 60_000,
                seed: 0,
            }),
        }
    }
}

/// Discrete dataset plus the bins used for each numeric column.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub dataset: DiscreteDataset,
    pub bins: BTreeMap<String, Binning>,
}

fn treatment_label(s: &str) -> Option<&'static str> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" => Some("true"),
        "false" | "0" | "no" | "n" => Some("false"),
        _ => None,
    }
}

/// Runs filter, derivation, resampling and discretisation in that order.
pub fn prepare(raw: &RawRecordTable, plan: &PreparePlan, source: &str) -> Result<Prepared> {
    let mut t = raw.clone();
    if plan.filter_gas && t.has_column("main_fuel") {
        t = filter_main_fuel_gas(&t)?;
    }
    t = derive_variables(&t)?;
    let mut seed = None;
    if let Some(r) = &plan.resample {
        if t.has_column("weight") {
            let strata = t.has_column("year").then_some("year");
            t = stratified_resample(&t, "weight", r.per_stratum, strata, r.seed)?;
            seed = Some(r.seed);
        }
    }
    if t.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weights = if seed.is_none() && t.has_column("weight") {
        Some(t.numeric("weight")?.to_vec())
    } else {
        None
    };

    let mut variables = Vec::new();
    let mut columns = BTreeMap::new();
    let mut bins = BTreeMap::new();
    for cb in &plan.numeric {
        let (idx, b) = discretize(t.numeric(&cb.column)?, cb.method, cb.bins)?;
        variables.push(b.variable(&cb.column)?);
        columns.insert(cb.column.clone(), idx);
        t.log.push(format!("discretize {} {:?} k={}", cb.column, cb.method, b.len()));
        bins.insert(cb.column.clone(), b);
    }
    for name in &plan.categorical {
        let values = t.categorical(name)?;
        let var = if name == "X" {
            DiscreteVariable::binary("X")
        } else {
            let labels: BTreeSet<&str> = values.iter().map(String::as_str).collect();
            DiscreteVariable::new(name.as_str(), labels)?
        };
        let idx = values
            .iter()
            .map(|v| {
                let label = if name == "X" {
                    treatment_label(v).ok_or_else(|| Error::UnknownState {
                        variable: name.clone(),
                        state: v.clone(),
                    })?
                } else {
                    v.as_str()
                };
                Ok(var.state_index(label)? as u32)
            })
            .collect::<Result<Vec<u32>>>()?;
        variables.push(var);
        columns.insert(name.clone(), idx);
    }
    let provenance = Provenance {
        source: source.to_string(),
        seed,
        transforms: t.log.clone(),
    };
    let dataset = DiscreteDataset::new(variables, columns, weights)?.with_provenance(provenance);
    Ok(Prepared { dataset, bins })
}

/// JSON sidecar stored next to a snapshot CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub rows: usize,
    pub variables: Vec<DiscreteVariable>,
    #[serde(default)]
    pub bins: BTreeMap<String, Binning>,
    pub weighted: bool,
    pub provenance: Provenance,
}

/// Path of the sidecar belonging to a snapshot CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the dataset as a CSV of state labels plus a JSON sidecar.
pub fn write_snapshot(dataset: &DiscreteDataset, bins: &BTreeMap<String, Binning>, csv_path: &Path) -> Result<()> {
    let names: Vec<&str> = dataset.variables().map(|v| v.name()).collect();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
    let mut header: Vec<&str> = names.clone();
    if dataset.weights().is_some() {
        header.push(WEIGHT_COLUMN);
    }
    w.write_record(&header)?;
    let cols: Vec<(&DiscreteVariable, &[u32])> = names
        .iter()
        .map(|n| Ok((dataset.variable(n)?, dataset.column(n)?)))
        .collect::<Result<_>>()?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for row in 0..dataset.n_rows() {
        record.clear();
        record.extend(cols.iter().map(|(v, c)| v.label(c[row] as usize).to_string()));
        if let Some(ws) = dataset.weights() {
            record.push(format!("{}", ws[row]));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    let meta = SnapshotMeta {
        rows: dataset.n_rows(),
        variables: dataset.variables().cloned().collect(),
        bins: bins.clone(),
        weighted: dataset.weights().is_some(),
        provenance: dataset.provenance.clone(),
    };
    let mut out = BufWriter::new(File::create(sidecar_path(csv_path))?);
    serde_json::to_writer_pretty(&mut out, &meta)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`].
pub fn read_snapshot(csv_path: &Path) -> Result<(DiscreteDataset, SnapshotMeta)> {
    let meta: SnapshotMeta = serde_json::from_reader(BufReader::new(File::open(sidecar_path(csv_path))?))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
    let header = reader.headers()?.clone();
    let catalog: BTreeMap<&str, &DiscreteVariable> = meta.variables.iter().map(|v| (v.name(), v)).collect();
    let mut slots: Vec<Option<&DiscreteVariable>> = Vec::with_capacity(header.len());
    for h in header.iter() {
        if h == WEIGHT_COLUMN {
            slots.push(None);
        } else {
            slots.push(Some(catalog.get(h).copied().ok_or_else(|| Error::UnknownVariable(h.to_string()))?));
        }
    }
    let mut columns: BTreeMap<String, Vec<u32>> =
        meta.variables.iter().map(|v| (v.name().to_string(), Vec::with_capacity(meta.rows))).collect();
    let mut weights = meta.weighted.then(|| Vec::with_capacity(meta.rows));
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        for (cell, slot) in record.iter().zip(&slots) {
            match slot {
                Some(var) => {
                    let idx = var.state_index(cell).map_err(|_| Error::Parse {
                        line: i + 2,
                        column: 0,
                        message: format!("`{cell}` is not a state of `{}`", var.name()),
                    })?;
                    columns.get_mut(var.name()).unwrap().push(idx as u32);
                }
                None => {
                    let w: f64 = cell.parse().map_err(|_| Error::Parse {
                        line: i + 2,
                        column: 0,
                        message: format!("bad weight `{cell}`"),
                    })?;
                    if let Some(ws) = weights.as_mut() {
                        ws.push(w);
                    }
                }
            }
        }
    }
    let dataset = DiscreteDataset::new(meta.variables.clone(), columns, weights)?
        .with_provenance(meta.provenance.clone());
    if dataset.n_rows() != meta.rows {
        return Err(Error::InvalidArgument(format!(
            "snapshot has {} rows, sidecar says {}",
            dataset.n_rows(),
            meta.rows
        )));
    }
    Ok((dataset, meta))
}
