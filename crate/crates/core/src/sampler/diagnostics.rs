//! Convergence diagnostics: split potential scale reduction and
//! autocorrelation-based effective sample size.
//!
//! Both return `Ok(None)` when the draws have zero variance, which callers
//! report as "undefined" rather than as a converged value.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::SamplerError;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn check_chains(chains: &[&[f64]], min_len: usize) -> Result<usize, SamplerError> {
    let n = chains.first().map_or(0, |c| c.len());
    if chains.is_empty() || chains.iter().any(|c| c.len() != n) {
        return Err(SamplerError::Contract(
            "diagnostics need at least one chain, all of equal length".into(),
        ));
    }
    if n < min_len {
        return Err(SamplerError::Contract(format!(
            "diagnostics need at least {min_len} draws per chain, got {n}"
        )));
    }
    Ok(n)
}

/// Potential scale reduction over the given sequences, which must all have
/// the same length `n ≥ 2` (at least two sequences).
///
/// With `W` the mean unbiased within-sequence variance and `B` the variance
/// of sequence means times `n`, the pooled estimate is
/// `V = (n−1)/n · W + B/n` and `R̂ = sqrt(V / ((n−1)/n · W))`. The
/// denominator is the plug-in within variance, so `R̂ ≥ 1` and `R̂ = 1`
/// exactly when all sequence means agree.
pub fn potential_scale_reduction(sequences: &[&[f64]]) -> Result<Option<f64>, SamplerError> {
    let n = check_chains(sequences, 2)?;
    if sequences.len() < 2 {
        return Err(SamplerError::Contract("need at least two sequences".into()));
    }
    let n_f = n as f64;
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let w = mean(&sequences.iter().map(|s| sample_variance(s)).collect::<Vec<_>>());
    let b = n_f * sample_variance(&means);
    if !(w > 0.0) {
        return Ok(None);
    }
    let within = (n_f - 1.0) / n_f * w;
    Ok(Some(((within + b / n_f) / within).sqrt()))
}

/// Split-R̂: every chain is cut into two halves (the middle draw of an odd
/// chain is dropped) before computing the potential scale reduction.
pub fn split_rhat(chains: &[&[f64]]) -> Result<Option<f64>, SamplerError> {
    let n = check_chains(chains, 4)?;
    let half = n / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect();
    potential_scale_reduction(&halves)
}

/// Biased autocovariance `Σ (x_i − m)(x_{i+t} − m) / n` for every lag.
fn autocovariance(xs: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs
        .iter()
        .map(|x| Complex::new(x - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size of the pooled chains.
///
/// Autocorrelations are combined across chains, summed in consecutive
/// pairs until the first negative pair (Geyer's initial positive
/// sequence), and forced monotone. The result is capped at `chains × n`.
pub fn ess_bulk(chains: &[&[f64]]) -> Result<Option<f64>, SamplerError> {
    let n = check_chains(chains, 8)?;
    let n_chains = chains.len();
    let n_f = n as f64;
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, &mut planner)).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();

    let mean_var = acov.iter().map(|a| a[0] * n_f / (n_f - 1.0)).sum::<f64>() / n_chains as f64;
    let mut var_plus = mean_var * (n_f - 1.0) / n_f;
    if n_chains > 1 {
        var_plus += sample_variance(&chain_means);
    }
    if !(var_plus > 0.0) || !(mean_var > 0.0) {
        return Ok(None);
    }

    let rho = |t: usize| {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / n_chains as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };

    // pair sums Γ_k = ρ_{2k} + ρ_{2k+1}, with ρ_0 = 1
    let mut pairs = Vec::new();
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair < 0.0 {
            break;
        }
        pairs.push(pair);
        t += 2;
    }
    for k in 1..pairs.len() {
        if pairs[k] > pairs[k - 1] {
            pairs[k] = pairs[k - 1];
        }
    }
    // 1 + 2 Σ_{t≥1} ρ_t  =  2 Σ_k Γ_k − 1
    let tau = 2.0 * pairs.iter().sum::<f64>() - 1.0;
    let total = n_chains as f64 * n_f;
    Ok(Some((total / tau.max(f64::MIN_POSITIVE)).min(total)))
}
