use std::collections::BTreeMap;
use std::io::Read;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "yes")]
    pub required: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    fn col(name: &str, kind: ColumnKind, required: bool) -> ColumnSpec {
        ColumnSpec {
            name: name.to_string(),
            kind,
            required,
        }
    }

    /// Household-record layout: money in £/yr, gas price in £/kWh.
    ///
    /// | column      | kind        | meaning                                  |
    /// |-------------|-------------|------------------------------------------|
    /// | `X`         | categorical | walls insulated (`true`/`false`)         |
    /// | `V0`..`V6`, `V8` | categorical | dwelling and household descriptors   |
    /// | `V1`        | numeric     | space heating gas cost                   |
    /// | `V7`        | numeric     | household income                         |
    /// | `V9`        | numeric     | gas unit price                           |
    /// | `V10`       | numeric     | other gas and electricity costs          |
    /// | `main_fuel` | categorical | main heating fuel (optional)             |
    /// | `year`      | categorical | survey year, the resampling stratum (optional) |
    /// | `weight`    | numeric     | survey weight (optional)                 |
    pub fn households() -> Self {
        use ColumnKind::*;
        let mut columns = vec![Self::col("X", Categorical, true)];
        for c in ["V0", "V2", "V3", "V4", "V5", "V6", "V8"] {
            columns.push(Self::col(c, Categorical, true));
        }
        for c in ["V1", "V7", "V9", "V10"] {
            columns.push(Self::col(c, Numeric, true));
        }
        columns.push(Self::col("main_fuel", Categorical, false));
        columns.push(Self::col("year", Categorical, false));
        columns.push(Self::col("weight", Numeric, false));
        Schema { columns }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

/// A row dropped during ingest or derivation, with its 1-based line number in
/// the source file (header is line 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Typed columns as read from a household file, before discretisation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecordTable {
    columns: BTreeMap<String, Column>,
    /// Source line of each row, kept through filtering and resampling.
    lines: Vec<usize>,
    pub rejected: Vec<RejectedRow>,
    pub log: Vec<String>,
}

impl RawRecordTable {
    pub fn new(columns: BTreeMap<String, Column>) -> Result<Self> {
        let rows = columns.values().next().map_or(0, Column::len);
        if let Some((name, _)) = columns.iter().find(|(_, c)| c.len() != rows) {
            return Err(Error::InvalidArgument(format!("column `{name}` has a different length")));
        }
        Ok(RawRecordTable {
            columns,
            lines: (2..rows + 2).collect(),
            rejected: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.columns.get(name) {
            Some(Column::Numeric(v)) => Ok(v),
            Some(Column::Categorical(_)) => Err(Error::InvalidArgument(format!("column `{name}` is not numeric"))),
            None => Err(Error::MissingColumn(name.to_string())),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<&[String]> {
        match self.columns.get(name) {
            Some(Column::Categorical(v)) => Ok(v),
            Some(Column::Numeric(_)) => Err(Error::InvalidArgument(format!("column `{name}` is not categorical"))),
            None => Err(Error::MissingColumn(name.to_string())),
        }
    }

    pub fn insert(&mut self, name: &str, column: Column) -> Result<()> {
        if column.len() != self.n_rows() {
            return Err(Error::InvalidArgument(format!("column `{name}` has a different length")));
        }
        self.columns.insert(name.to_string(), column);
        Ok(())
    }

    fn select(&self, rows: &[usize]) -> RawRecordTable {
        RawRecordTable {
            columns: self.columns.iter().map(|(k, c)| (k.clone(), c.select(rows))).collect(),
            lines: rows.iter().map(|&i| self.lines[i]).collect(),
            rejected: self.rejected.clone(),
            log: self.log.clone(),
        }
    }

    /// Source line numbers of the current rows.
    pub fn lines(&self) -> &[usize] {
        &self.lines
    }
}

/// Reads a CSV with a header row. Columns outside `schema` are ignored; rows
/// whose numeric cells fail to parse are rejected and listed.
pub fn ingest_csv<R: Read>(source: R, schema: &Schema) -> Result<RawRecordTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = reader.headers()?.clone();
    let mut positions = Vec::new();
    for spec in &schema.columns {
        match header.iter().position(|h| h == spec.name) {
            Some(p) => positions.push((spec, p)),
            None if spec.required => return Err(Error::MissingColumn(spec.name.clone())),
            None => {}
        }
    }
    let mut columns: BTreeMap<String, Column> = positions
        .iter()
        .map(|(spec, _)| {
            let col = match spec.kind {
                ColumnKind::Numeric => Column::Numeric(Vec::new()),
                ColumnKind::Categorical => Column::Categorical(Vec::new()),
            };
            (spec.name.clone(), col)
        })
        .collect();
    let mut lines = Vec::new();
    let mut rejected = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let mut parsed: Vec<Result<f64, String>> = Vec::with_capacity(positions.len());
        let mut bad = None;
        for (spec, p) in &positions {
            let cell = record.get(*p).unwrap_or("");
            if spec.kind == ColumnKind::Numeric {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => parsed.push(Ok(v)),
                    _ => {
                        bad = Some(format!("column `{}`: cannot read `{cell}` as a number", spec.name));
                        break;
                    }
                }
            } else {
                parsed.push(Err(cell.to_string()));
            }
        }
        if let Some(reason) = bad {
            rejected.push(RejectedRow { line, reason });
            continue;
        }
        for ((spec, _), value) in positions.iter().zip(parsed) {
            match (columns.get_mut(&spec.name).unwrap(), value) {
                (Column::Numeric(c), Ok(v)) => c.push(v),
                (Column::Categorical(c), Err(s)) => c.push(s),
                _ => unreachable!(),
            }
        }
        lines.push(line);
    }
    let n = lines.len();
    let mut log = vec![format!("ingest rows={n} rejected={}", rejected.len())];
    if !rejected.is_empty() {
        log::warn!("{} rows rejected while reading input", rejected.len());
        log.push(format!(
            "rejected lines {}",
            rejected.iter().map(|r| r.line.to_string()).collect::<Vec<_>>().join(",")
        ));
    }
    Ok(RawRecordTable {
        columns,
        lines,
        rejected,
        log,
    })
}

/// Adds `Y0 = V1 / V9` (kWh/yr) and `W = (V1 + V10) / V7` clamped to `[0, 1]`.
/// Rows with a non-positive price or income are dropped and recorded.
pub fn derive_variables(t: &RawRecordTable) -> Result<RawRecordTable> {
    let (v1, v7, v9, v10) = (t.numeric("V1")?, t.numeric("V7")?, t.numeric("V9")?, t.numeric("V10")?);
    let mut keep = Vec::with_capacity(t.n_rows());
    let mut rejected = t.rejected.clone();
    for i in 0..t.n_rows() {
        if v9[i] <= 0.0 {
            rejected.push(RejectedRow {
                line: t.lines[i],
                reason: format!("non-positive gas price {}", v9[i]),
            });
        } else if v7[i] <= 0.0 {
            rejected.push(RejectedRow {
                line: t.lines[i],
                reason: format!("non-positive income {}", v7[i]),
            });
        } else {
            keep.push(i);
        }
    }
    let dropped = t.n_rows() - keep.len();
    let mut y0 = Vec::with_capacity(keep.len());
    let mut w = Vec::with_capacity(keep.len());
    let mut clamped = 0usize;
    for &i in &keep {
        y0.push(v1[i] / v9[i]);
        let raw = (v1[i] + v10[i]) / v7[i];
        let c = raw.clamp(0.0, 1.0);
        if c != raw {
            clamped += 1;
        }
        w.push(c);
    }
    let mut out = t.select(&keep);
    out.rejected = rejected;
    out.insert("Y0", Column::Numeric(y0))?;
    out.insert("W", Column::Numeric(w))?;
    out.log.push(format!("derive Y0=V1/V9 W=(V1+V10)/V7 rejected={dropped} clamped={clamped}"));
    Ok(out)
}

/// Keeps rows whose `main_fuel` is gas (case-insensitive).
pub fn filter_main_fuel_gas(t: &RawRecordTable) -> Result<RawRecordTable> {
    let fuel = t.categorical("main_fuel")?;
    let keep: Vec<usize> = (0..t.n_rows())
        .filter(|&i| fuel[i].eq_ignore_ascii_case("gas"))
        .collect();
    let excluded = t.n_rows() - keep.len();
    let fraction = if t.is_empty() { 0.0 } else { excluded as f64 / t.n_rows() as f64 };
    let mut out = t.select(&keep);
    out.log.push(format!("filter main_fuel=gas excluded={excluded} fraction={fraction:.4}"));
    log::info!("excluded {excluded} non-gas rows ({:.1}%)", 100.0 * fraction);
    if out.is_empty() {
        log::warn!("no gas-heated rows remain");
    }
    Ok(out)
}

/// Draws `n_per_stratum` rows with replacement from each stratum, with
/// probability proportional to weight. Strata are visited in sorted order and
/// each gets its own random stream, so the output depends only on `seed`.
pub fn stratified_resample(
    t: &RawRecordTable,
    weight_column: &str,
    n_per_stratum: usize,
    strata_column: Option<&str>,
    seed: u64,
) -> Result<RawRecordTable> {
    let weights = t.numeric(weight_column)?;
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::InvalidArgument(format!("weight {w} is not positive")));
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    match strata_column {
        Some(c) => {
            for (i, s) in t.categorical(c)?.iter().enumerate() {
                strata.entry(s.as_str()).or_default().push(i);
            }
        }
        None => {
            strata.insert("", (0..t.n_rows()).collect());
        }
    }
    if strata.is_empty() {
        return Err(Error::EmptyStratum("no rows to resample".into()));
    }
    let mut picked = Vec::with_capacity(strata.len() * n_per_stratum);
    for (stream, (_, rows)) in strata.iter().enumerate() {
        let dist = WeightedIndex::new(rows.iter().map(|&i| weights[i]))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        picked.extend((0..n_per_stratum).map(|_| rows[dist.sample(&mut rng)]));
    }
    let mut out = t.select(&picked);
    out.log.push(format!(
        "resample weight={weight_column} strata={} per_stratum={n_per_stratum} seed={seed}",
        strata_column.unwrap_or("-")
    ));
    Ok(out)
}
