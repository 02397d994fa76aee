//! Warmup adaptation: dual-averaging step size and windowed diagonal metric.

/// Nesterov dual averaging of `log(step)` toward a target acceptance rate.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(target: f64, initial_step: f64) -> Self {
        let mut da = Self {
            target,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        da.restart(initial_step);
        da
    }

    pub fn restart(&mut self, initial_step: f64) {
        self.mu = (10.0 * initial_step).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let accept_stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / GAMMA;
        let x_eta = self.counter.powf(-KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Step size to freeze after warmup.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variance.
#[derive(Debug, Clone)]
struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }
}

/// Three-phase warmup schedule: a fast initial buffer, slow windows of
/// doubling length that estimate the metric, and a fast terminal buffer.
#[derive(Debug, Clone)]
pub(crate) struct MetricAdaptation {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
    counter: usize,
    estimator: RunningVariance,
}

const BASE_WINDOW: usize = 25;

impl MetricAdaptation {
    pub fn new(dim: usize, warmup: usize) -> Self {
        let init_buffer = warmup * 15 / 100;
        let term_buffer = warmup / 10;
        let window = BASE_WINDOW.min(warmup.saturating_sub(init_buffer + term_buffer));
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size: window,
            next_window_end: (init_buffer + window).saturating_sub(1),
            counter: 0,
            estimator: RunningVariance::new(dim),
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn at_window_end(&self) -> bool {
        self.counter == self.next_window_end && self.counter != self.warmup
    }

    fn advance_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window_end == last {
            return;
        }
        self.window_size *= 2;
        self.next_window_end = self.counter + self.window_size;
        if self.next_window_end != last && self.next_window_end + 2 * self.window_size >= last + 1 {
            self.next_window_end = last;
        }
    }

    /// Records one warmup position; returns a new inverse metric at the
    /// end of each slow window.
    pub fn observe(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.window_size == 0 {
            self.counter += 1;
            return None;
        }
        let mut updated = None;
        if self.in_window() {
            self.estimator.add(q);
        }
        if self.at_window_end() {
            self.advance_window();
            let n = self.estimator.n as f64;
            if self.estimator.n >= 2 {
                let shrink = n / (n + 5.0);
                let inv_metric = self
                    .estimator
                    .m2
                    .iter()
                    .map(|m2| shrink * m2 / (n - 1.0) + 1e-3 * (5.0 / (n + 5.0)))
                    .collect();
                updated = Some(inv_metric);
            }
            self.estimator.restart();
        }
        self.counter += 1;
        updated
    }
}
