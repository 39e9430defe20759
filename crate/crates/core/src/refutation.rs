//! Placebo-treatment and random-subsample robustness checks.

use std::io::Write;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DiscreteDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefutationKind {
    Placebo,
    Subsample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefutationReport {
    pub kind: RefutationKind,
    pub n: usize,
    pub effects: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub ci_low_1pct: f64,
    pub ci_high_99pct: f64,
    pub p_value: f64,
    pub baseline_ate: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

impl RefutationReport {
    fn new(kind: RefutationKind, effects: Vec<f64>, baseline_ate: f64, seed: u64, fraction: Option<f64>) -> Self {
        let mean = mean(&effects);
        let p_value = match kind {
            RefutationKind::Placebo => placebo_p_value(&effects, baseline_ate),
            RefutationKind::Subsample => subsample_p_value(&effects, baseline_ate),
        };
        RefutationReport {
            kind,
            n: effects.len(),
            mean,
            median: percentile(&effects, 50.0),
            ci_low_1pct: percentile(&effects, 1.0),
            ci_high_99pct: percentile(&effects, 99.0),
            p_value,
            baseline_ate,
            seed,
            fraction,
            effects,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One-column CSV of the repetition effects.
    pub fn write_effects_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["effect"])?;
        for e in &self.effects {
            w.write_record([e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Linear-interpolation percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 100.0) / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// `(1 + #{|e_i| >= |baseline|}) / (1 + n)`.
pub fn placebo_p_value(effects: &[f64], baseline: f64) -> f64 {
    let hits = effects.iter().filter(|e| e.abs() >= baseline.abs()).count();
    (1 + hits) as f64 / (1 + effects.len()) as f64
}

/// `(1 + #{|e_i - m| >= |baseline - m|}) / (1 + n)` with `m` the mean effect.
pub fn subsample_p_value(effects: &[f64], baseline: f64) -> f64 {
    let m = mean(effects);
    let hits = effects.iter().filter(|e| (*e - m).abs() >= (baseline - m).abs()).count();
    (1 + hits) as f64 / (1 + effects.len()) as f64
}

/// Independent generator for repetition `i`, identical however repetitions are scheduled.
fn repetition_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn run<P, F>(n: usize, pipeline: &P, make: F) -> Result<Vec<f64>>
where
    P: Fn(&DiscreteDataset) -> Result<f64> + Sync,
    F: Fn(usize) -> Result<DiscreteDataset> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            make(i)
                .and_then(|d| pipeline(&d))
                .map_err(|e| Error::Repetition {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Re-estimates with the treatment column shuffled `n` times.
pub fn placebo_test<P>(pipeline: &P, data: &DiscreteDataset, treatment: &str, n: usize, seed: u64) -> Result<RefutationReport>
where
    P: Fn(&DiscreteDataset) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("repetition count must be at least 1".into()));
    }
    let baseline = pipeline(data)?;
    let column = data.column(treatment)?.to_vec();
    let effects = run(n, pipeline, |i| {
        let mut shuffled = column.clone();
        shuffled.shuffle(&mut repetition_rng(seed, i));
        data.with_column(treatment, shuffled)
    })?;
    Ok(RefutationReport::new(RefutationKind::Placebo, effects, baseline, seed, None))
}

/// Re-estimates on `n` subsamples of `floor(fraction * rows)` rows drawn without replacement.
pub fn subsample_test<P>(pipeline: &P, data: &DiscreteDataset, n: usize, fraction: f64, seed: u64) -> Result<RefutationReport>
where
    P: Fn(&DiscreteDataset) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("repetition count must be at least 1".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let rows = data.n_rows();
    let take = (fraction * rows as f64).floor() as usize;
    if take == 0 {
        return Err(Error::EmptyDataset);
    }
    let baseline = pipeline(data)?;
    let effects = run(n, pipeline, |i| {
        let mut idx = sample(&mut repetition_rng(seed, i), rows, take).into_vec();
        idx.sort_unstable();
        Ok(data.select_rows(&idx))
    })?;
    Ok(RefutationReport::new(RefutationKind::Subsample, effects, baseline, seed, Some(fraction)))
}
