#![allow(dead_code)]

use std::path::PathBuf;

use irtbench::ingest::ResponseMatrix;
use irtbench::model::ParameterPoint;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

/// Ranks with ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && xs[order[end + 1]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            ranks[k] = avg;
        }
        start = end + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Known parameters of the 20-item, 15-person synthetic fixture, in
/// `a[·]`, `b[·]`, `theta[·]` order as listed in the file.
pub struct Truth {
    pub items: Vec<String>,
    pub persons: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Truth {
    pub fn load() -> Self {
        let text = std::fs::read_to_string(fixture("truth_20x15.csv")).unwrap();
        let mut t = Truth { items: vec![], persons: vec![], a: vec![], b: vec![], theta: vec![] };
        for line in text.lines().skip(1) {
            let (name, value) = line.split_once(',').unwrap();
            let value: f64 = value.parse().unwrap();
            let (kind, label) = name.trim_end_matches(']').split_once('[').unwrap();
            match kind {
                "a" => {
                    t.items.push(label.to_string());
                    t.a.push(value);
                }
                "b" => t.b.push(value),
                _ => {
                    t.persons.push(label.to_string());
                    t.theta.push(value);
                }
            }
        }
        t
    }

    pub fn point(&self) -> ParameterPoint {
        ParameterPoint::from_constrained(&self.a, self.b.clone(), self.theta.clone()).unwrap()
    }

    /// `(name, value)` for every parameter, named like the sampler output.
    pub fn named(&self) -> Vec<(String, f64)> {
        let a = self.items.iter().zip(&self.a).map(|(l, v)| (format!("a[{l}]"), *v));
        let b = self.items.iter().zip(&self.b).map(|(l, v)| (format!("b[{l}]"), *v));
        let t = self.persons.iter().zip(&self.theta).map(|(l, v)| (format!("theta[{l}]"), *v));
        a.chain(b).chain(t).collect()
    }

    pub fn template(&self, attempts: u32) -> ResponseMatrix {
        let cells = self.items.len() * self.persons.len();
        ResponseMatrix::new(self.items.clone(), self.persons.clone(), vec![attempts; cells], vec![0; cells]).unwrap()
    }
}

pub fn zero_matrix(n_items: usize, n_persons: usize) -> ResponseMatrix {
    let cells = n_items * n_persons;
    ResponseMatrix::new(labels("f", n_items), labels("p", n_persons), vec![0; cells], vec![0; cells]).unwrap()
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    irtbench::sampler::ParameterSummary::from_draws("x", xs).median
}
