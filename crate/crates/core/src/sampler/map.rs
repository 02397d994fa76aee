//! Posterior mode by limited-memory quasi-Newton ascent with a backtracking
//! line search. Used for quick point estimates; it says nothing about
//! uncertainty.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{initial_point, SamplerError};
use crate::ingest::ResponseMatrix;
use crate::model::{ParameterPoint, Posterior, PriorConfig};

/// Stop once every gradient component is below this in magnitude.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

const MEMORY: usize = 7;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub point: ParameterPoint,
    /// `true` when the gradient tolerance was met, `false` when the
    /// iteration budget ran out or the line search stalled.
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
    pub log_posterior: f64,
    pub initial_log_posterior: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Two-loop recursion; returns an ascent direction for the gradient `g`.
fn lbfgs_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    // work on the negated objective so the textbook formulas apply
    let mut q: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let alpha = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * yi;
        }
        alphas.push((alpha, rho));
    }
    if let Some((s, y)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|x| *x *= gamma);
    }
    for ((s, y), (alpha, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha - beta) * si;
        }
    }
    q.iter().map(|x| -x).collect()
}

/// Posterior mode starting from the sampler's seeded initialization.
pub fn map_estimate(
    data: &ResponseMatrix,
    priors: &PriorConfig,
    seed: u64,
    max_iterations: usize,
) -> Result<MapResult, SamplerError> {
    data.validate_shape()?;
    let posterior = Posterior::new(data, *priors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = initial_point(&posterior, &mut rng, 0)?;
    let start = ParameterPoint::from_flat(&q0, data.n_items(), data.n_persons());
    map_estimate_with(data, priors, start, max_iterations)
}

/// Posterior mode from an explicit starting point.
pub fn map_estimate_with(
    data: &ResponseMatrix,
    priors: &PriorConfig,
    start: ParameterPoint,
    max_iterations: usize,
) -> Result<MapResult, SamplerError> {
    if max_iterations == 0 {
        return Err(SamplerError::Config("max_iterations must be at least 1".into()));
    }
    let posterior = Posterior::new(data, *priors)?;
    let (n_items, n_persons) = (data.n_items(), data.n_persons());
    if start.n_items() != n_items || start.n_persons() != n_persons {
        return Err(SamplerError::Contract("starting point does not match the data".into()));
    }
    let dim = posterior.dim();
    let mut x = start.to_flat();
    let mut grad = vec![0.0; dim];
    let mut f = posterior.log_density_and_gradient(&x, &mut grad);
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SamplerError::NonFinite {
            iterations: 0,
            last_point: start,
        });
    }
    let initial = f;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(MEMORY);
    let mut trial_grad = vec![0.0; dim];
    let mut iterations = 0;
    let mut converged = max_norm(&grad) < GRADIENT_TOLERANCE;

    while !converged && iterations < max_iterations {
        iterations += 1;
        let mut direction = lbfgs_direction(&grad, &history);
        if !(dot(&direction, &grad) > 0.0) {
            history.clear();
            direction = grad.clone();
        }
        let accepted = loop {
            let slope = dot(&direction, &grad);
            let mut t = if history.is_empty() {
                (1.0 / max_norm(&direction)).min(1.0)
            } else {
                1.0
            };
            let mut saw_finite = false;
            let mut found = None;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + t * di).collect();
                let f_trial = posterior.log_density_and_gradient(&trial, &mut trial_grad);
                let finite = f_trial.is_finite() && trial_grad.iter().all(|g| g.is_finite());
                saw_finite |= finite;
                if finite && f_trial >= f + ARMIJO * t * slope {
                    found = Some((trial, f_trial));
                    break;
                }
                t *= 0.5;
            }
            match found {
                Some(step) => break Some(step),
                None if !saw_finite => {
                    return Err(SamplerError::NonFinite {
                        iterations,
                        last_point: ParameterPoint::from_flat(&x, n_items, n_persons),
                    })
                }
                // retry once along the plain gradient before giving up
                None if !history.is_empty() => {
                    history.clear();
                    direction = grad.clone();
                }
                None => break None,
            }
        };
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // y for the negated objective: −∇f_new − (−∇f)
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| b - a).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y));
        }
        x = x_new;
        f = f_new;
        grad.copy_from_slice(&trial_grad);
        converged = max_norm(&grad) < GRADIENT_TOLERANCE;
    }

    Ok(MapResult {
        point: ParameterPoint::from_flat(&x, n_items, n_persons),
        converged,
        iterations,
        gradient_max_norm: max_norm(&grad),
        log_posterior: f,
        initial_log_posterior: initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior_only() -> ResponseMatrix {
        ResponseMatrix::new(
            vec!["f1".into(), "f2".into(), "f3".into()],
            vec!["A".into(), "B".into(), "C".into()],
            vec![0; 9],
            vec![0; 9],
        )
        .unwrap()
    }

    #[test]
    fn prior_only_converges_to_prior_modes() {
        let result = map_estimate(&prior_only(), &PriorConfig::default(), 11, 500).unwrap();
        assert!(result.converged);
        for v in result.point.b.iter().chain(&result.point.theta) {
            assert!(v.abs() < 1e-4, "{v}");
        }
        // with the log-Jacobian the log-scale mode sits at a = scale
        for a in result.point.a() {
            assert!((a - 5.0).abs() < 1e-4, "{a}");
        }
    }

    #[test]
    fn ascent_from_initialization() {
        let data = ResponseMatrix::new(
            vec!["f1".into(), "f2".into()],
            vec!["A".into(), "B".into(), "C".into()],
            vec![20; 6],
            vec![18, 10, 2, 15, 5, 1],
        )
        .unwrap();
        let result = map_estimate(&data, &PriorConfig::default(), 2, 1000).unwrap();
        assert!(result.log_posterior >= result.initial_log_posterior);
        assert!(result.converged, "{result:?}");
        assert!(result.gradient_max_norm < GRADIENT_TOLERANCE);
        // persons ordered by success rate
        let th = &result.point.theta;
        assert!(th[0] > th[1] && th[1] > th[2]);
    }

    #[test]
    fn iteration_budget_is_reported() {
        let result = map_estimate(&prior_only(), &PriorConfig::default(), 11, 1).unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations, 1);
    }

    #[test]
    fn direction_without_history_is_gradient() {
        let g = [1.0, -2.0];
        assert_eq!(lbfgs_direction(&g, &VecDeque::new()), vec![1.0, -2.0]);
    }
}
