//! No-U-Turn transition with multinomial trajectory sampling and a
//! diagonal Euclidean metric.
//!
//! The trajectory doubles in a random direction until the generalized
//! U-turn criterion fires on the whole trajectory or on either of the two
//! extended halves, a leaf diverges, or the depth limit is reached.

use rand::Rng;
use rand_distr::StandardNormal;

/// Target density on an unconstrained space.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Returns `log p(q)` and writes its gradient into `grad`.
    fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for crate::model::Posterior<'_> {
    fn dim(&self) -> usize {
        crate::model::Posterior::dim(self)
    }

    fn log_density_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        crate::model::Posterior::log_density_and_gradient(self, q, grad)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    pub fn new<D: LogDensity + ?Sized>(density: &D, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let log_density = density.log_density_and_gradient(&q, &mut grad);
        Self {
            p: vec![0.0; q.len()],
            q,
            grad,
            log_density,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_density.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub divergent: bool,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub energy: f64,
}

pub(crate) struct Integrator<'a, D: ?Sized> {
    pub density: &'a D,
    pub inv_metric: Vec<f64>,
    pub step: f64,
}

impl<D: LogDensity + ?Sized> Integrator<'_, D> {
    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    pub fn hamiltonian(&self, z: &PhasePoint) -> f64 {
        let h = -z.log_density + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, z: &mut PhasePoint, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    pub fn leapfrog(&self, z: &mut PhasePoint, step: f64) {
        let half = 0.5 * step;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += step * m * p;
        }
        z.log_density = self.density.log_density_and_gradient(&z.q, &mut z.grad);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Endpoint data of a trajectory segment, in integration order.
#[derive(Debug, Clone)]
struct Span {
    rho: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    v_beg: Vec<f64>,
    v_end: Vec<f64>,
}

impl Span {
    fn reversed(&self) -> Span {
        Span {
            rho: self.rho.clone(),
            p_beg: self.p_end.clone(),
            p_end: self.p_beg.clone(),
            v_beg: self.v_end.clone(),
            v_end: self.v_beg.clone(),
        }
    }
}

fn no_u_turn(v_minus: &[f64], v_plus: &[f64], rho: &[f64]) -> bool {
    dot(v_plus, rho) > 0.0 && dot(v_minus, rho) > 0.0
}

/// Joins two adjacent segments (`first` then `second`); `None` on a U-turn.
fn merge(first: &Span, second: &Span) -> Option<Span> {
    let rho = add(&first.rho, &second.rho);
    let ok = no_u_turn(&first.v_beg, &second.v_end, &rho)
        && no_u_turn(&first.v_beg, &second.v_beg, &add(&first.rho, &second.p_beg))
        && no_u_turn(&first.v_end, &second.v_end, &add(&second.rho, &first.p_end));
    ok.then(|| Span {
        rho,
        p_beg: first.p_beg.clone(),
        p_end: second.p_end.clone(),
        v_beg: first.v_beg.clone(),
        v_end: second.v_end.clone(),
    })
}

struct Subtree {
    span: Span,
    proposal: PhasePoint,
    log_weight: f64,
}

struct TreeContext {
    h0: f64,
    max_delta_h: f64,
    n_leapfrog: usize,
    sum_accept: f64,
    divergent: bool,
}

impl<D: LogDensity + ?Sized> Integrator<'_, D> {
    fn build_tree<R: Rng + ?Sized>(
        &self,
        depth: usize,
        z: &mut PhasePoint,
        direction: f64,
        ctx: &mut TreeContext,
        rng: &mut R,
    ) -> Option<Subtree> {
        if depth == 0 {
            self.leapfrog(z, direction * self.step);
            ctx.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            let delta = ctx.h0 - h;
            if h - ctx.h0 > ctx.max_delta_h || !z.is_finite() {
                ctx.divergent = true;
            }
            ctx.sum_accept += if delta > 0.0 { 1.0 } else { delta.exp() };
            if ctx.divergent {
                return None;
            }
            let v = self.velocity(&z.p);
            return Some(Subtree {
                span: Span {
                    rho: z.p.clone(),
                    p_beg: z.p.clone(),
                    p_end: z.p.clone(),
                    v_beg: v.clone(),
                    v_end: v,
                },
                proposal: z.clone(),
                log_weight: delta,
            });
        }

        let left = self.build_tree(depth - 1, z, direction, ctx, rng)?;
        let right = self.build_tree(depth - 1, z, direction, ctx, rng)?;
        let log_weight = log_add_exp(left.log_weight, right.log_weight);
        let take_right = rng.random::<f64>() < (right.log_weight - log_weight).exp();
        let span = merge(&left.span, &right.span)?;
        Some(Subtree {
            span,
            proposal: if take_right { right.proposal } else { left.proposal },
            log_weight,
        })
    }

    /// One NUTS transition from `current`.
    pub fn transition<R: Rng + ?Sized>(
        &self,
        current: &PhasePoint,
        max_depth: usize,
        max_delta_h: f64,
        rng: &mut R,
    ) -> (PhasePoint, TransitionStats) {
        let mut start = current.clone();
        self.sample_momentum(&mut start, rng);
        let h0 = self.hamiltonian(&start);
        let v0 = self.velocity(&start.p);

        let mut ctx = TreeContext {
            h0,
            max_delta_h,
            n_leapfrog: 0,
            sum_accept: 0.0,
            divergent: false,
        };
        // trajectory stored left to right
        let mut trajectory = Span {
            rho: start.p.clone(),
            p_beg: start.p.clone(),
            p_end: start.p.clone(),
            v_beg: v0.clone(),
            v_end: v0,
        };
        let mut left_end = start.clone();
        let mut right_end = start.clone();
        let mut sample = start;
        let mut log_weight = 0.0;
        let mut depth = 0;

        while depth < max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let (z, direction) = if forward {
                (&mut right_end, 1.0)
            } else {
                (&mut left_end, -1.0)
            };
            let Some(subtree) = self.build_tree(depth, z, direction, &mut ctx, rng) else {
                break;
            };
            depth += 1;

            // biased progressive sampling favors the new subtree
            if subtree.log_weight > log_weight
                || rng.random::<f64>() < (subtree.log_weight - log_weight).exp()
            {
                sample = subtree.proposal;
            }
            log_weight = log_add_exp(log_weight, subtree.log_weight);

            let merged = if forward {
                merge(&trajectory, &subtree.span)
            } else {
                merge(&trajectory.reversed(), &subtree.span).map(|s| s.reversed())
            };
            match merged {
                Some(span) => trajectory = span,
                None => break,
            }
        }

        let stats = TransitionStats {
            accept_stat: if ctx.n_leapfrog > 0 {
                ctx.sum_accept / ctx.n_leapfrog as f64
            } else {
                0.0
            },
            divergent: ctx.divergent,
            depth,
            n_leapfrog: ctx.n_leapfrog,
            energy: self.hamiltonian(&sample),
        };
        (sample, stats)
    }

    /// Doubles or halves the step until a single leapfrog step crosses an
    /// acceptance probability of 0.8.
    pub fn find_reasonable_step<R: Rng + ?Sized>(&mut self, z: &PhasePoint, rng: &mut R) {
        let threshold = 0.8f64.ln();
        let trial = |step: f64, rng: &mut R| {
            let mut point = z.clone();
            self.sample_momentum(&mut point, rng);
            let h0 = self.hamiltonian(&point);
            self.leapfrog(&mut point, step);
            h0 - self.hamiltonian(&point)
        };
        let mut step = self.step;
        let direction = if trial(step, rng) > threshold { 1 } else { -1 };
        for _ in 0..100 {
            let delta = trial(step, rng);
            let crossed = if direction == 1 {
                !(delta > threshold)
            } else {
                !(delta < threshold)
            };
            if crossed {
                break;
            }
            let next = if direction == 1 { step * 2.0 } else { step * 0.5 };
            if !(next > 1e-10 && next < 1e7) {
                break;
            }
            step = next;
        }
        self.step = step;
    }
}
