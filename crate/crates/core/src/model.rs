//! Bayesian two-parameter logistic model.
//!
//! Success probability of person `p` on item `i` is
//! `σ(a_i (θ_p − b_i))`, so higher ability raises and higher difficulty
//! lowers the chance of success. Observed successes are
//! `Binomial(N_ip, σ(..))`, with priors
//!
//! * `a_i ~ HalfNormal(0, a_scale)`
//! * `b_i ~ Normal(0, b_scale)`
//! * `θ_p ~ Normal(0, theta_scale)`
//!
//! The sampler works on the unconstrained vector `(log a, b, θ)`; the
//! density therefore carries the log-Jacobian `Σ log a_i`.
//!
//! Dropped constants: the log binomial coefficients, `−log(s·√(2π))` for
//! every Normal term and `log 2 − log(s·√(2π))` for every Half-Normal term.
//! What remains per parameter is `−x²/(2s²)`, plus `log a_i` for the
//! Jacobian, plus `y·log π + (N−y)·log(1−π)` per cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::ingest::ResponseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("non-finite or out-of-domain input: {0}")]
    Domain(String),
    #[error("dimension mismatch: point has {point_items} items and {point_persons} persons, data has {data_items} and {data_persons}")]
    DimensionMismatch {
        point_items: usize,
        point_persons: usize,
        data_items: usize,
        data_persons: usize,
    },
    #[error("prior scales must be positive and finite")]
    InvalidPrior,
}

/// Logistic function, stable for large `|x|`.
#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow or cancellation.
#[inline]
pub(crate) fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that a person of ability `theta` succeeds on an item with
/// discrimination `a` and difficulty `b`.
pub fn success_probability(a: f64, b: f64, theta: f64) -> Result<f64, ModelError> {
    if !(a.is_finite() && a > 0.0) {
        return Err(ModelError::Domain(format!("discrimination a = {a}")));
    }
    if !(b.is_finite() && theta.is_finite()) {
        return Err(ModelError::Domain(format!("b = {b}, theta = {theta}")));
    }
    Ok(logistic(a * (theta - b)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub a_scale: f64,
    pub b_scale: f64,
    pub theta_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            a_scale: 5.0,
            b_scale: 5.0,
            theta_scale: 5.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |s: f64| s.is_finite() && s > 0.0;
        if ok(self.a_scale) && ok(self.b_scale) && ok(self.theta_scale) {
            Ok(())
        } else {
            Err(ModelError::InvalidPrior)
        }
    }
}

/// One assignment of all model parameters, discrimination on the log scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint {
    pub log_a: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ParameterPoint {
    pub fn zeros(n_items: usize, n_persons: usize) -> Self {
        Self {
            log_a: vec![0.0; n_items],
            b: vec![0.0; n_items],
            theta: vec![0.0; n_persons],
        }
    }

    /// Builds a point from constrained discriminations.
    pub fn from_constrained(a: &[f64], b: Vec<f64>, theta: Vec<f64>) -> Result<Self, ModelError> {
        if a.len() != b.len() {
            return Err(ModelError::Domain("a and b lengths differ".into()));
        }
        if let Some(bad) = a.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(ModelError::Domain(format!("discrimination a = {bad}")));
        }
        let point = Self {
            log_a: a.iter().map(|a| a.ln()).collect(),
            b,
            theta,
        };
        point.check_finite()?;
        Ok(point)
    }

    /// Splits a flat `(log_a, b, theta)` vector.
    pub fn from_flat(flat: &[f64], n_items: usize, n_persons: usize) -> Self {
        assert_eq!(flat.len(), 2 * n_items + n_persons, "flat vector length");
        Self {
            log_a: flat[..n_items].to_vec(),
            b: flat[n_items..2 * n_items].to_vec(),
            theta: flat[2 * n_items..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.dim());
        flat.extend_from_slice(&self.log_a);
        flat.extend_from_slice(&self.b);
        flat.extend_from_slice(&self.theta);
        flat
    }

    pub fn n_items(&self) -> usize {
        self.b.len()
    }

    pub fn n_persons(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.n_items() + self.n_persons()
    }

    pub fn a(&self) -> Vec<f64> {
        self.log_a.iter().map(|l| l.exp()).collect()
    }

    fn check_finite(&self) -> Result<(), ModelError> {
        let all = self.log_a.iter().chain(&self.b).chain(&self.theta);
        if all.clone().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::Domain("parameter point has non-finite entries".into()))
        }
    }

    fn check_matches(&self, data: &ResponseMatrix) -> Result<(), ModelError> {
        if self.log_a.len() != data.n_items()
            || self.b.len() != data.n_items()
            || self.theta.len() != data.n_persons()
        {
            return Err(ModelError::DimensionMismatch {
                point_items: self.b.len(),
                point_persons: self.theta.len(),
                data_items: data.n_items(),
                data_persons: data.n_persons(),
            });
        }
        Ok(())
    }
}

/// Joint log-density over the flat unconstrained vector, used by the
/// samplers and optimizers.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    data: &'a ResponseMatrix,
    priors: PriorConfig,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &'a ResponseMatrix, priors: PriorConfig) -> Result<Self, ModelError> {
        priors.validate()?;
        Ok(Self { data, priors })
    }

    pub fn data(&self) -> &ResponseMatrix {
        self.data
    }

    pub fn priors(&self) -> PriorConfig {
        self.priors
    }

    pub fn dim(&self) -> usize {
        2 * self.data.n_items() + self.data.n_persons()
    }

    /// Likelihood part only: `Σ y log π + (N − y) log(1 − π)`.
    pub fn log_likelihood(&self, flat: &[f64]) -> f64 {
        let (ni, np) = (self.data.n_items(), self.data.n_persons());
        let (log_a, rest) = flat.split_at(ni);
        let (b, theta) = rest.split_at(ni);
        let attempts = self.data.attempts_flat();
        let successes = self.data.successes_flat();
        let mut total = 0.0;
        for i in 0..ni {
            let a = log_a[i].exp();
            for p in 0..np {
                let n = attempts[i * np + p];
                if n == 0 {
                    continue;
                }
                let y = successes[i * np + p] as f64;
                let x = a * (theta[p] - b[i]);
                total += y * log_logistic(x) + (n as f64 - y) * log_logistic(-x);
            }
        }
        total
    }

    fn log_prior(&self, flat: &[f64]) -> f64 {
        let ni = self.data.n_items();
        let (log_a, rest) = flat.split_at(ni);
        let (b, theta) = rest.split_at(ni);
        let quad = |xs: &[f64], s: f64| -xs.iter().map(|x| x * x).sum::<f64>() / (2.0 * s * s);
        let a_terms: f64 = log_a
            .iter()
            .map(|&l| {
                let a = l.exp();
                -a * a / (2.0 * self.priors.a_scale * self.priors.a_scale) + l
            })
            .sum();
        a_terms + quad(b, self.priors.b_scale) + quad(theta, self.priors.theta_scale)
    }

    pub fn log_density(&self, flat: &[f64]) -> f64 {
        self.log_likelihood(flat) + self.log_prior(flat)
    }

    /// Writes the gradient into `grad` and returns the log-density.
    pub fn log_density_and_gradient(&self, flat: &[f64], grad: &mut [f64]) -> f64 {
        let (ni, np) = (self.data.n_items(), self.data.n_persons());
        debug_assert_eq!(flat.len(), self.dim());
        debug_assert_eq!(grad.len(), self.dim());
        let (log_a, rest) = flat.split_at(ni);
        let (b, theta) = rest.split_at(ni);
        let (g_log_a, g_rest) = grad.split_at_mut(ni);
        let (g_b, g_theta) = g_rest.split_at_mut(ni);

        let (sa2, sb2, st2) = (
            self.priors.a_scale * self.priors.a_scale,
            self.priors.b_scale * self.priors.b_scale,
            self.priors.theta_scale * self.priors.theta_scale,
        );
        let mut total = 0.0;
        for p in 0..np {
            g_theta[p] = -theta[p] / st2;
            total -= theta[p] * theta[p] / (2.0 * st2);
        }

        let attempts = self.data.attempts_flat();
        let successes = self.data.successes_flat();
        for i in 0..ni {
            let a = log_a[i].exp();
            let mut d_log_a = 1.0 - a * a / sa2;
            let mut d_b = -b[i] / sb2;
            total += log_a[i] - a * a / (2.0 * sa2) - b[i] * b[i] / (2.0 * sb2);
            for p in 0..np {
                let n = attempts[i * np + p];
                if n == 0 {
                    continue;
                }
                let n = n as f64;
                let y = successes[i * np + p] as f64;
                let diff = theta[p] - b[i];
                let x = a * diff;
                total += y * log_logistic(x) + (n - y) * log_logistic(-x);
                // d/dx of the cell log-likelihood
                let r = y - n * logistic(x);
                d_log_a += r * x;
                d_b -= r * a;
                g_theta[p] += r * a;
            }
            g_log_a[i] = d_log_a;
            g_b[i] = d_b;
        }
        total
    }
}

/// Log posterior density of `point` up to the documented constants.
pub fn log_posterior(
    point: &ParameterPoint,
    data: &ResponseMatrix,
    priors: &PriorConfig,
) -> Result<f64, ModelError> {
    point.check_matches(data)?;
    Ok(Posterior::new(data, *priors)?.log_density(&point.to_flat()))
}

/// Gradient of [`log_posterior`] in `(log_a, b, theta)` order.
pub fn grad_log_posterior(
    point: &ParameterPoint,
    data: &ResponseMatrix,
    priors: &PriorConfig,
) -> Result<Vec<f64>, ModelError> {
    point.check_matches(data)?;
    let posterior = Posterior::new(data, *priors)?;
    let mut grad = vec![0.0; point.dim()];
    posterior.log_density_and_gradient(&point.to_flat(), &mut grad);
    Ok(grad)
}

/// Draws successes for every cell of `template` (its attempt counts are
/// used, its success counts ignored) from the model at `truth`.
pub fn simulate_responses(
    truth: &ParameterPoint,
    template: &ResponseMatrix,
    seed: u64,
) -> Result<ResponseMatrix, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_responses_with(truth, template, &mut rng)
}

pub fn simulate_responses_with<R: Rng + ?Sized>(
    truth: &ParameterPoint,
    template: &ResponseMatrix,
    rng: &mut R,
) -> Result<ResponseMatrix, ModelError> {
    truth.check_matches(template)?;
    truth.check_finite()?;
    let a = truth.a();
    let np = template.n_persons();
    let mut successes = Vec::with_capacity(template.attempts_flat().len());
    for (cell, &n) in template.attempts_flat().iter().enumerate() {
        let (i, p) = (cell / np, cell % np);
        let prob = success_probability(a[i], truth.b[i], truth.theta[p])?;
        let y = if n == 0 {
            0
        } else {
            Binomial::new(n as u64, prob)
                .map_err(|e| ModelError::Domain(e.to_string()))?
                .sample(rng) as u32
        };
        successes.push(y);
    }
    ResponseMatrix::new(
        template.items().to_vec(),
        template.persons().to_vec(),
        template.attempts_flat().to_vec(),
        successes,
    )
    .map_err(|e| ModelError::Domain(e.to_string()))
}
