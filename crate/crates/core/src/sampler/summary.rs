//! Posterior summaries: medians, central credible intervals, diagnostics.

use std::io::{Read, Write};

use super::diagnostics::{ess_bulk, split_rhat};
use super::{PosteriorDraws, SamplerError};

/// Quantile of sorted data by inclusive linear interpolation: position
/// `(n − 1)·q` between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn sort_values(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub median: f64,
    pub ci50: (f64, f64),
    pub ci90: (f64, f64),
    /// `None` when undefined (zero variance or too few draws).
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
}

impl ParameterSummary {
    /// Summary of a pooled draw set without diagnostics.
    pub fn from_draws(name: impl Into<String>, draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sort_values(&mut sorted);
        Self {
            name: name.into(),
            median: quantile_sorted(&sorted, 0.5),
            ci50: (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)),
            ci90: (quantile_sorted(&sorted, 0.05), quantile_sorted(&sorted, 0.95)),
            rhat: None,
            ess_bulk: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub parameters: Vec<ParameterSummary>,
    pub divergence_count: usize,
}

pub const MIN_SUMMARY_DRAWS: usize = 100;

pub fn summarize(draws: &PosteriorDraws) -> Result<PosteriorSummary, SamplerError> {
    let total = draws.n_chains() * draws.n_draws();
    if total < MIN_SUMMARY_DRAWS {
        return Err(SamplerError::Contract(format!(
            "summaries need at least {MIN_SUMMARY_DRAWS} draws, got {total}"
        )));
    }
    let mut parameters = Vec::with_capacity(draws.dim());
    for (k, name) in draws.parameter_names().iter().enumerate() {
        let chains = draws.chains_for(k);
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let pooled = chains.concat();
        let mut summary = ParameterSummary::from_draws(name.clone(), &pooled);
        if draws.n_draws() >= 4 {
            summary.rhat = split_rhat(&refs)?;
        }
        if draws.n_draws() >= 8 {
            summary.ess_bulk = ess_bulk(&refs)?;
        }
        parameters.push(summary);
    }
    Ok(PosteriorSummary {
        parameters,
        divergence_count: draws.divergence_count(),
    })
}

const SUMMARY_HEADER: [&str; 8] = [
    "parameter", "median", "ci50_lo", "ci50_hi", "ci90_lo", "ci90_hi", "rhat", "ess_bulk",
];

/// Marker written for undefined diagnostics.
pub const UNDEFINED: &str = "NA";

pub(crate) fn format_optional(value: Option<f64>) -> String {
    value.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

fn parse_optional(text: &str) -> Option<Option<f64>> {
    if text == UNDEFINED {
        Some(None)
    } else {
        text.parse().ok().map(Some)
    }
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Entries whose name starts with `kind[`, e.g. `b` or `theta`.
    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a ParameterSummary> + 'a {
        self.parameters
            .iter()
            .filter(move |p| super::split_parameter_name(&p.name).is_some_and(|(k, _)| k == kind))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SamplerError> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(SUMMARY_HEADER)?;
        for p in &self.parameters {
            writer.write_record([
                p.name.clone(),
                p.median.to_string(),
                p.ci50.0.to_string(),
                p.ci50.1.to_string(),
                p.ci90.0.to_string(),
                p.ci90.1.to_string(),
                format_optional(p.rhat),
                format_optional(p.ess_bulk),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a summary CSV. The divergence count is not part of the file
    /// and comes back as zero.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SamplerError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().ne(SUMMARY_HEADER) {
            return Err(SamplerError::Format(format!(
                "summary header must be `{}`",
                SUMMARY_HEADER.join(",")
            )));
        }
        let mut parameters = Vec::new();
        for row in reader.records() {
            let row = row?;
            let bad = || SamplerError::Format(format!("malformed summary row: {row:?}"));
            let num = |k: usize| row[k].parse::<f64>().map_err(|_| bad());
            parameters.push(ParameterSummary {
                name: row[0].to_string(),
                median: num(1)?,
                ci50: (num(2)?, num(3)?),
                ci90: (num(4)?, num(5)?),
                rhat: parse_optional(&row[6]).ok_or_else(bad)?,
                ess_bulk: parse_optional(&row[7]).ok_or_else(bad)?,
            });
        }
        Ok(Self {
            parameters,
            divergence_count: 0,
        })
    }
}
