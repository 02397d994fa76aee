//! Posterior sampling for the 2PL model.
//!
//! Each chain runs the No-U-Turn sampler with a diagonal metric. Warmup
//! adapts the step size by dual averaging and the metric over doubling
//! windows; both are frozen afterwards. Chains are seeded from the master
//! seed and the chain index only, so running them in parallel gives the
//! same output as running them in order.

mod adapt;
pub mod diagnostics;
mod map;
mod nuts;
pub mod summary;

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{IngestError, ResponseMatrix};
use crate::model::{ModelError, PriorConfig, Posterior};

pub use diagnostics::{ess_bulk, potential_scale_reduction, split_rhat};
pub use map::{map_estimate, map_estimate_with, MapResult};
pub use nuts::{LogDensity, TransitionStats};
pub use summary::{quantile_sorted, summarize, ParameterSummary, PosteriorSummary};

use adapt::{DualAveraging, MetricAdaptation};
use nuts::{Integrator, PhasePoint};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("chain {chain}: no finite starting point after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
    #[error("optimization hit a non-finite objective after {iterations} iterations")]
    NonFinite {
        iterations: usize,
        last_point: crate::model::ParameterPoint,
    },
    #[error("{0}")]
    Contract(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] IngestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub draws_per_chain: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_leapfrog_steps: usize,
    pub master_seed: u64,
    pub divergence_energy_threshold: f64,
    /// Multiplies the adapted step size once warmup ends. Only useful for
    /// probing the integrator; leave at 1.
    pub step_size_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            draws_per_chain: 5000,
            warmup: 1000,
            target_accept: 0.8,
            max_leapfrog_steps: 1024,
            master_seed: 0,
            divergence_energy_threshold: 1000.0,
            step_size_scale: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |msg: &str| Err(SamplerError::Config(msg.to_string()));
        if self.chains == 0 {
            return fail("chains must be at least 1");
        }
        if self.draws_per_chain == 0 {
            return fail("draws_per_chain must be at least 1");
        }
        if self.warmup == 0 {
            return fail("warmup must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail("target_accept must lie in (0, 1)");
        }
        if self.max_leapfrog_steps == 0 {
            return fail("max_leapfrog_steps must be at least 1");
        }
        if !(self.divergence_energy_threshold > 0.0) {
            return fail("divergence_energy_threshold must be positive");
        }
        if !(self.step_size_scale > 0.0 && self.step_size_scale.is_finite()) {
            return fail("step_size_scale must be positive");
        }
        Ok(())
    }

    /// Deepest trajectory whose `2^depth − 1` leapfrog steps fit the budget.
    fn max_depth(&self) -> usize {
        (usize::BITS - (self.max_leapfrog_steps + 1).leading_zeros() - 1) as usize
    }
}

/// Per-draw sampler statistics, kept in memory only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplerStats {
    /// chains × draws, row-major
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<usize>,
    /// Frozen step size per chain.
    pub step_size: Vec<f64>,
}

/// Post-warmup draws on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    parameter_names: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    /// chain-major, then draw, then parameter
    values: Vec<f64>,
    divergent: Vec<bool>,
    seed_used: u64,
    stats: Option<SamplerStats>,
}

/// Splits `kind[label]` into `(kind, label)`.
pub fn split_parameter_name(name: &str) -> Option<(&str, &str)> {
    let open = name.find('[')?;
    let inner = name[open + 1..].strip_suffix(']')?;
    Some((&name[..open], inner))
}

pub fn parameter_names(data: &ResponseMatrix) -> Vec<String> {
    let items = data.items().iter();
    items
        .clone()
        .map(|l| format!("a[{l}]"))
        .chain(items.map(|l| format!("b[{l}]")))
        .chain(data.persons().iter().map(|l| format!("theta[{l}]")))
        .collect()
}

impl PosteriorDraws {
    pub fn from_parts(
        parameter_names: Vec<String>,
        n_chains: usize,
        n_draws: usize,
        values: Vec<f64>,
        divergent: Vec<bool>,
        seed_used: u64,
    ) -> Result<Self, SamplerError> {
        let dim = parameter_names.len();
        if values.len() != n_chains * n_draws * dim || divergent.len() != n_chains * n_draws {
            return Err(SamplerError::Contract("draw array dimensions disagree".into()));
        }
        for (k, name) in parameter_names.iter().enumerate() {
            if split_parameter_name(name).is_some_and(|(kind, _)| kind == "a")
                && values.iter().skip(k).step_by(dim.max(1)).any(|&v| !(v > 0.0))
            {
                return Err(SamplerError::Contract(format!("{name} has non-positive draws")));
            }
        }
        Ok(Self {
            parameter_names,
            n_chains,
            n_draws,
            values,
            divergent,
            seed_used,
            stats: None,
        })
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.parameter_names
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn dim(&self) -> usize {
        self.parameter_names.len()
    }

    pub fn seed_used(&self) -> u64 {
        self.seed_used
    }

    pub fn stats(&self) -> Option<&SamplerStats> {
        self.stats.as_ref()
    }

    pub fn value(&self, chain: usize, draw: usize, param: usize) -> f64 {
        self.values[(chain * self.n_draws + draw) * self.dim() + param]
    }

    /// All parameters of one draw.
    pub fn draw(&self, chain: usize, draw: usize) -> &[f64] {
        let start = (chain * self.n_draws + draw) * self.dim();
        &self.values[start..start + self.dim()]
    }

    pub fn is_divergent(&self, chain: usize, draw: usize) -> bool {
        self.divergent[chain * self.n_draws + draw]
    }

    pub fn divergence_count(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    /// Per-chain traces of one parameter.
    pub fn chains_for(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|t| self.value(c, t, param)).collect())
            .collect()
    }

    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.chains_for(param).concat()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SamplerError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "iteration".into(), "divergent".into()];
        header.extend(self.parameter_names.iter().cloned());
        writer.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for c in 0..self.n_chains {
            for t in 0..self.n_draws {
                row.clear();
                row.push(c.to_string());
                row.push(t.to_string());
                row.push(u8::from(self.is_divergent(c, t)).to_string());
                row.extend(self.draw(c, t).iter().map(f64::to_string));
                writer.write_record(&row)?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a draws CSV; rows must be grouped by chain with iterations
    /// counting up from zero.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SamplerError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() < 4 || &headers[0] != "chain" || &headers[1] != "iteration" || &headers[2] != "divergent" {
            return Err(SamplerError::Format(
                "draws header must start with `chain,iteration,divergent`".into(),
            ));
        }
        let names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
        let (mut values, mut divergent) = (Vec::new(), Vec::new());
        let mut shape: Vec<usize> = Vec::new();
        for row in reader.records() {
            let row = row?;
            let bad = || SamplerError::Format(format!("malformed draws row: {row:?}"));
            let chain: usize = row[0].parse().map_err(|_| bad())?;
            let iteration: usize = row[1].parse().map_err(|_| bad())?;
            if chain == shape.len() && iteration == 0 {
                shape.push(0);
            }
            if chain + 1 != shape.len() || iteration != shape[chain] {
                return Err(bad());
            }
            shape[chain] += 1;
            divergent.push(match &row[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            });
            for k in 0..names.len() {
                values.push(row[3 + k].parse::<f64>().map_err(|_| bad())?);
            }
        }
        let n_draws = shape.first().copied().unwrap_or(0);
        if shape.is_empty() || shape.iter().any(|&n| n != n_draws) {
            return Err(SamplerError::Format("chains must have equal, non-zero lengths".into()));
        }
        Self::from_parts(names, shape.len(), n_draws, values, divergent, 0)
    }
}

fn chain_rng(master_seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain as u64);
    rng
}

pub(crate) const MAX_INIT_ATTEMPTS: usize = 100;

/// Uniform draw in `[−2, 2]^d` with a finite density and gradient.
pub(crate) fn initial_point<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    density: &D,
    rng: &mut R,
    chain: usize,
) -> Result<Vec<f64>, SamplerError> {
    let mut grad = vec![0.0; density.dim()];
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<f64> = (0..density.dim()).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let lp = density.log_density_and_gradient(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(q);
        }
    }
    Err(SamplerError::Initialization {
        chain,
        attempts: MAX_INIT_ATTEMPTS,
    })
}

struct ChainOutput {
    /// unconstrained draws, draw-major
    draws: Vec<f64>,
    divergent: Vec<bool>,
    accept_stat: Vec<f64>,
    tree_depth: Vec<usize>,
    step_size: f64,
}

fn run_chain<D: LogDensity + Sync + ?Sized>(
    density: &D,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput, SamplerError> {
    let mut rng = chain_rng(config.master_seed, chain);
    let dim = density.dim();
    let q0 = initial_point(density, &mut rng, chain)?;
    let mut z = PhasePoint::new(density, q0);

    let mut integrator = Integrator {
        density,
        inv_metric: vec![1.0; dim],
        step: 1.0,
    };
    integrator.find_reasonable_step(&z, &mut rng);
    let mut step_adapt = DualAveraging::new(config.target_accept, integrator.step);
    let mut metric_adapt = MetricAdaptation::new(dim, config.warmup);
    let max_depth = config.max_depth();
    let threshold = config.divergence_energy_threshold;

    for _ in 0..config.warmup {
        let (next, stats) = integrator.transition(&z, max_depth, threshold, &mut rng);
        z = next;
        integrator.step = step_adapt.update(stats.accept_stat);
        if let Some(inv_metric) = metric_adapt.observe(&z.q) {
            integrator.inv_metric = inv_metric;
            integrator.find_reasonable_step(&z, &mut rng);
            step_adapt.restart(integrator.step);
        }
    }
    integrator.step = step_adapt.final_step() * config.step_size_scale;

    let mut out = ChainOutput {
        draws: Vec::with_capacity(config.draws_per_chain * dim),
        divergent: Vec::with_capacity(config.draws_per_chain),
        accept_stat: Vec::with_capacity(config.draws_per_chain),
        tree_depth: Vec::with_capacity(config.draws_per_chain),
        step_size: integrator.step,
    };
    for _ in 0..config.draws_per_chain {
        let (next, stats) = integrator.transition(&z, max_depth, threshold, &mut rng);
        z = next;
        out.draws.extend_from_slice(&z.q);
        out.divergent.push(stats.divergent);
        out.accept_stat.push(stats.accept_stat);
        out.tree_depth.push(stats.depth);
    }
    Ok(out)
}

pub const MAX_PARAMETERS: usize = 10_000;

/// Draws from the posterior of the 2PL model for `data`.
pub fn sample(
    data: &ResponseMatrix,
    priors: &PriorConfig,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    data.validate_shape()?;
    let posterior = Posterior::new(data, *priors)?;
    let dim = posterior.dim();
    if dim > MAX_PARAMETERS {
        return Err(SamplerError::Config(format!(
            "model has {dim} parameters, limit is {MAX_PARAMETERS}"
        )));
    }

    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(&posterior, config, c))
        .collect::<Result<_, _>>()?;

    let n_items = data.n_items();
    let mut values = Vec::with_capacity(config.chains * config.draws_per_chain * dim);
    let mut stats = SamplerStats::default();
    let mut divergent = Vec::new();
    for out in outputs {
        for draw in out.draws.chunks(dim) {
            values.extend(draw[..n_items].iter().map(|l| l.exp()));
            values.extend_from_slice(&draw[n_items..]);
        }
        divergent.extend(out.divergent);
        stats.accept_stat.extend(out.accept_stat);
        stats.tree_depth.extend(out.tree_depth);
        stats.step_size.push(out.step_size);
    }
    let mut draws = PosteriorDraws::from_parts(
        parameter_names(data),
        config.chains,
        config.draws_per_chain,
        values,
        divergent,
        config.master_seed,
    )?;
    draws.stats = Some(stats);
    Ok(draws)
}
