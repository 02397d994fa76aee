//! Item characteristic curves, item and test information, and the standard
//! error of measurement, evaluated on an ability grid.

use std::io::{Read, Write};

use thiserror::Error;

use crate::model::{logistic, ModelError};
use crate::sampler::summary::sort_values;
use crate::sampler::{quantile_sorted, split_parameter_name, PosteriorDraws, PosteriorSummary};

#[derive(Debug, Error)]
pub enum InformationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evenly spaced abilities from `lo` to `hi`. `hi` is included when it
/// falls on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbilityGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for AbilityGrid {
    fn default() -> Self {
        Self {
            lo: -6.0,
            hi: 6.0,
            step: 0.05,
        }
    }
}

pub const MAX_GRID_INTERVALS: f64 = 1e6;

impl AbilityGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self, InformationError> {
        let grid = Self { lo, hi, step };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), InformationError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(InformationError::Contract(format!(
                "grid bounds must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if !(self.step > 0.0 && (self.hi - self.lo) / self.step <= MAX_GRID_INTERVALS) {
            return Err(InformationError::Contract(format!(
                "grid step {} is not positive or gives more than {MAX_GRID_INTERVALS} intervals",
                self.step
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        // tolerate rounding so that e.g. [-6, 6] by 0.05 keeps its endpoint
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.lo + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Icc,
    ItemInfo,
    TestInfo,
    Sem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: CurveKind,
}

fn check_item(a: f64, b: f64) -> Result<(), ModelError> {
    if !(a.is_finite() && a > 0.0) {
        return Err(ModelError::Domain(format!("discrimination a = {a}")));
    }
    if !b.is_finite() {
        return Err(ModelError::Domain(format!("difficulty b = {b}")));
    }
    Ok(())
}

/// `a² P Q` at one ability, with `P Q` formed as `σ(x) σ(−x)` so that it
/// stays accurate in the tails.
#[inline]
pub fn item_information_at(a: f64, b: f64, theta: f64) -> f64 {
    let x = a * (theta - b);
    a * a * logistic(x) * logistic(-x)
}

pub fn icc(a: f64, b: f64, grid: &AbilityGrid) -> Result<InformationCurve, InformationError> {
    check_item(a, b)?;
    grid.validate()?;
    let points = grid.points();
    let values = points.iter().map(|t| logistic(a * (t - b))).collect();
    Ok(InformationCurve {
        grid: points,
        values,
        kind: CurveKind::Icc,
    })
}

pub fn item_information(a: f64, b: f64, grid: &AbilityGrid) -> Result<InformationCurve, InformationError> {
    check_item(a, b)?;
    grid.validate()?;
    let points = grid.points();
    let values = points.iter().map(|&t| item_information_at(a, b, t)).collect();
    Ok(InformationCurve {
        grid: points,
        values,
        kind: CurveKind::ItemInfo,
    })
}

/// Sum of item information over the items, assuming local independence.
pub fn test_information(items: &[(f64, f64)], grid: &AbilityGrid) -> Result<InformationCurve, InformationError> {
    if items.is_empty() {
        return Err(InformationError::Contract("test information needs at least one item".into()));
    }
    let mut total = InformationCurve {
        grid: grid.points(),
        values: vec![0.0; grid.len()],
        kind: CurveKind::TestInfo,
    };
    for &(a, b) in items {
        let curve = item_information(a, b, grid)?;
        for (t, v) in total.values.iter_mut().zip(&curve.values) {
            *t += v;
        }
    }
    Ok(total)
}

/// Information at or below this is treated as none: the SEM is unbounded.
pub const INFORMATION_FLOOR: f64 = 1e-12;

/// `1/√I` pointwise; `+∞` where the information is negligible.
pub fn sem(test_info: &InformationCurve) -> Result<InformationCurve, InformationError> {
    if test_info.kind != CurveKind::TestInfo {
        return Err(InformationError::Contract("SEM is defined from a test information curve".into()));
    }
    let values = test_info
        .values
        .iter()
        .map(|&i| if i <= INFORMATION_FLOOR { f64::INFINITY } else { 1.0 / i.sqrt() })
        .collect();
    Ok(InformationCurve {
        grid: test_info.grid.clone(),
        values,
        kind: CurveKind::Sem,
    })
}

impl InformationCurve {
    /// `theta,value` rows; an unbounded SEM is written as `inf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), InformationError> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["theta", "value"])?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            writer.write_record([t.to_string(), v.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, kind: CurveKind) -> Result<Self, InformationError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut curve = Self {
            grid: Vec::new(),
            values: Vec::new(),
            kind,
        };
        for row in reader.deserialize::<(f64, f64)>() {
            let (t, v) = row?;
            curve.grid.push(t);
            curve.values.push(v);
        }
        Ok(curve)
    }

    /// Grid point with the largest value (first one on ties).
    pub fn argmax(&self) -> Option<(f64, f64)> {
        self.grid
            .iter()
            .zip(&self.values)
            .fold(None, |best: Option<(f64, f64)>, (&t, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((t, v)),
            })
    }
}

/// Calibrated item: label, discrimination, difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemParameters {
    pub label: String,
    pub a: f64,
    pub b: f64,
}

/// Pointwise lower and upper envelope (5% and 95%) plus the pointwise
/// median across posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub items: Vec<ItemParameters>,
    pub item_curves: Vec<InformationCurve>,
    pub test_info: InformationCurve,
    pub sem: InformationCurve,
    /// Per-item envelopes, then the test information envelope.
    pub item_envelopes: Option<Vec<Envelope>>,
    pub test_envelope: Option<Envelope>,
}

/// Information curves for point-estimated items.
pub fn curves_for_items(items: Vec<ItemParameters>, grid: &AbilityGrid) -> Result<CurveSet, InformationError> {
    let item_curves = items
        .iter()
        .map(|it| item_information(it.a, it.b, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(f64, f64)> = items.iter().map(|it| (it.a, it.b)).collect();
    let test_info = test_information(&pairs, grid)?;
    let sem = sem(&test_info)?;
    Ok(CurveSet {
        items,
        item_curves,
        test_info,
        sem,
        item_envelopes: None,
        test_envelope: None,
    })
}

/// Items in summary order, taken from the `a[·]` and `b[·]` medians.
pub fn items_from_summary(summary: &PosteriorSummary) -> Result<Vec<ItemParameters>, InformationError> {
    let mut items = Vec::new();
    for p in summary.of_kind("a") {
        let (_, label) = split_parameter_name(&p.name).expect("filtered by kind");
        let b = summary.get(&format!("b[{label}]")).ok_or_else(|| {
            InformationError::Contract(format!("summary has a[{label}] but no b[{label}]"))
        })?;
        items.push(ItemParameters {
            label: label.to_string(),
            a: p.median,
            b: b.median,
        });
    }
    if items.is_empty() {
        return Err(InformationError::Contract("summary contains no item parameters".into()));
    }
    Ok(items)
}

fn envelope(mut samples: Vec<Vec<f64>>) -> Envelope {
    let mut env = Envelope {
        lower: Vec::with_capacity(samples.len()),
        median: Vec::with_capacity(samples.len()),
        upper: Vec::with_capacity(samples.len()),
    };
    for column in samples.iter_mut() {
        sort_values(column);
        env.lower.push(quantile_sorted(column, 0.05));
        env.median.push(quantile_sorted(column, 0.5));
        env.upper.push(quantile_sorted(column, 0.95));
    }
    env
}

/// Curves at the posterior-median item parameters. With `with_envelope`,
/// every pooled draw is also evaluated and pointwise 90% bands are added.
pub fn median_curves(
    draws: &PosteriorDraws,
    grid: &AbilityGrid,
    with_envelope: bool,
) -> Result<CurveSet, InformationError> {
    grid.validate()?;
    let mut columns = Vec::new();
    let mut items = Vec::new();
    for (k, name) in draws.parameter_names().iter().enumerate() {
        let Some(("a", label)) = split_parameter_name(name) else {
            continue;
        };
        let b_index = draws
            .index_of(&format!("b[{label}]"))
            .ok_or_else(|| InformationError::Contract(format!("draws have {name} but no b[{label}]")))?;
        let median = |idx: usize| {
            let mut pooled = draws.pooled(idx);
            sort_values(&mut pooled);
            quantile_sorted(&pooled, 0.5)
        };
        items.push(ItemParameters {
            label: label.to_string(),
            a: median(k),
            b: median(b_index),
        });
        columns.push((k, b_index));
    }
    if items.is_empty() {
        return Err(InformationError::Contract("draws contain no item parameters".into()));
    }
    if draws.n_chains() * draws.n_draws() == 0 {
        return Err(InformationError::Contract("no draws".into()));
    }
    let mut set = curves_for_items(items, grid)?;
    if !with_envelope {
        return Ok(set);
    }

    let points = grid.points();
    let n_total = draws.n_chains() * draws.n_draws();
    let mut test_samples = vec![vec![0.0; n_total]; points.len()];
    let mut item_envelopes = Vec::with_capacity(columns.len());
    for &(ka, kb) in &columns {
        let a = draws.pooled(ka);
        let b = draws.pooled(kb);
        let mut samples = vec![vec![0.0; n_total]; points.len()];
        for (g, &t) in points.iter().enumerate() {
            for d in 0..n_total {
                let v = item_information_at(a[d], b[d], t);
                samples[g][d] = v;
                test_samples[g][d] += v;
            }
        }
        item_envelopes.push(envelope(samples));
    }
    set.item_envelopes = Some(item_envelopes);
    set.test_envelope = Some(envelope(test_samples));
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(curve: &InformationCurve, theta: f64) -> f64 {
        let k = curve.grid.iter().position(|t| (t - theta).abs() < 1e-9).unwrap();
        curve.values[k]
    }

    #[test]
    fn default_grid_keeps_endpoints() {
        let g = AbilityGrid::default();
        let pts = g.points();
        assert_eq!(pts.len(), 241);
        assert_eq!(pts[0], -6.0);
        assert!((pts[240] - 6.0).abs() < 1e-12);
        assert_eq!(AbilityGrid::new(-6.0, 6.0, 0.01).unwrap().len(), 1201);
    }

    #[test]
    fn grid_validation() {
        assert!(AbilityGrid::new(1.0, 1.0, 0.1).is_err());
        assert!(AbilityGrid::new(0.0, 1.0, 0.0).is_err());
        assert!(AbilityGrid::new(0.0, 1.0, 1e-7).is_err());
    }

    #[test]
    fn icc_values() {
        let g = AbilityGrid::default();
        assert_eq!(at(&icc(1.0, 0.0, &g).unwrap(), 0.0), 0.5);
        assert!((at(&icc(3.7, 1.0, &g).unwrap(), 1.0) - 0.5).abs() < 1e-12);
        // from an independent mpmath evaluation
        assert!((at(&icc(3.0, -1.0, &g).unwrap(), 0.0) - 0.952_574_126_822_433_2).abs() < 1e-12);
        assert!(icc(0.0, 0.0, &g).is_err());
    }

    #[test]
    fn item_information_values() {
        let g = AbilityGrid::default();
        assert!((at(&item_information(2.0, 0.0, &g).unwrap(), 0.0) - 1.0).abs() < 1e-15);
        let sym = item_information(1.0, 0.0, &g).unwrap();
        assert!((at(&sym, 1.3) - at(&sym, -1.3)).abs() < 1e-15);
        let v = at(&item_information(1.5, 1.0, &g).unwrap(), 0.0);
        assert!((v - 0.335_579_517_158_248_93).abs() < 1e-12, "{v}");
        assert!(item_information(-1.0, 0.0, &g).is_err());
    }

    #[test]
    fn test_information_values() {
        let g = AbilityGrid::default();
        let two = test_information(&[(2.0, 0.0), (2.0, 0.0)], &g).unwrap();
        assert!((at(&two, 0.0) - 2.0).abs() < 1e-15);
        let three = test_information(&[(1.0, -1.0), (1.0, 0.0), (1.0, 1.0)], &g).unwrap();
        assert!((at(&three, 0.0) - 0.643_223_866_482_963_71).abs() < 1e-12);
        let single = test_information(&[(1.2, 0.4)], &g).unwrap();
        assert_eq!(single.values, item_information(1.2, 0.4, &g).unwrap().values);
        assert!(test_information(&[], &g).is_err());
    }

    #[test]
    fn sem_values() {
        let curve = InformationCurve {
            grid: vec![0.0, 1.0, 2.0],
            values: vec![4.0, 1.0, 0.0],
            kind: CurveKind::TestInfo,
        };
        let s = sem(&curve).unwrap();
        assert_eq!(s.values, vec![0.5, 1.0, f64::INFINITY]);
        assert!(sem(&InformationCurve { kind: CurveKind::Icc, ..curve }).is_err());
    }

    #[test]
    fn csv_round_trip_with_infinity() {
        let curve = InformationCurve {
            grid: vec![-1.0, 0.5],
            values: vec![0.25, f64::INFINITY],
            kind: CurveKind::Sem,
        };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "theta,value\n-1,0.25\n0.5,inf\n");
        assert_eq!(InformationCurve::read_csv(buf.as_slice(), CurveKind::Sem).unwrap(), curve);
    }

    fn draws(values: &[(f64, f64)]) -> PosteriorDraws {
        let flat: Vec<f64> = values.iter().flat_map(|&(a, b)| [a, b]).collect();
        PosteriorDraws::from_parts(
            vec!["a[f1]".into(), "b[f1]".into()],
            1,
            values.len(),
            flat,
            vec![false; values.len()],
            0,
        )
        .unwrap()
    }

    #[test]
    fn median_of_two_draws() {
        let g = AbilityGrid::default();
        let set = median_curves(&draws(&[(1.0, 0.0), (3.0, 0.0)]), &g, false).unwrap();
        assert_eq!(set.items[0].a, 2.0);
        let (peak_at, peak) = set.item_curves[0].argmax().unwrap();
        assert!(peak_at.abs() < 1e-12 && (peak - 1.0).abs() < 1e-15);
    }

    #[test]
    fn concentrated_draws_match_point_curves() {
        let g = AbilityGrid::default();
        let set = median_curves(&draws(&[(1.7, -0.3); 10]), &g, true).unwrap();
        assert_eq!(set.item_curves[0], item_information(1.7, -0.3, &g).unwrap());
        let env = &set.item_envelopes.as_ref().unwrap()[0];
        assert_eq!(env.lower, set.item_curves[0].values);
        assert_eq!(env.upper, set.item_curves[0].values);
    }

    #[test]
    fn envelope_contains_pointwise_median() {
        let g = AbilityGrid::new(-3.0, 3.0, 0.25).unwrap();
        let spread: Vec<(f64, f64)> = (0..40).map(|k| (0.5 + 0.07 * k as f64, -1.0 + 0.05 * k as f64)).collect();
        let set = median_curves(&draws(&spread), &g, true).unwrap();
        for env in set.item_envelopes.iter().flatten().chain(set.test_envelope.iter()) {
            for k in 0..env.median.len() {
                assert!(env.lower[k] <= env.median[k] && env.median[k] <= env.upper[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn peak_sits_at_difficulty(a in 0.5f64..4.0, b in -4.0f64..4.0) {
            let g = AbilityGrid::default();
            let (t, _) = item_information(a, b, &g).unwrap().argmax().unwrap();
            prop_assert!((t - b).abs() <= g.step / 2.0 + 1e-9);
        }

        #[test]
        fn icc_is_monotone(a in 0.1f64..5.0, b in -5.0f64..5.0) {
            let c = icc(a, b, &AbilityGrid::default()).unwrap();
            prop_assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn sem_is_antitone(x in 1e-9f64..1e3, y in 1e-9f64..1e3) {
            let curve = InformationCurve { grid: vec![0.0, 1.0], values: vec![x, y], kind: CurveKind::TestInfo };
            let s = sem(&curve).unwrap().values;
            prop_assert!((x <= y) == (s[0] >= s[1]) || x == y);
        }
    }
}
