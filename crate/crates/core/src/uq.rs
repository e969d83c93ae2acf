//! Uncertainty evaluation: coverage calibration error, reliability curves,
//! AUROC for OOD detection, isotonic recalibration, the composite benchmark
//! score and error-vs-sd scatter data.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UqError {
    #[error("no data")]
    NoData,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("all nominal levels identical; cannot fit a calibration map")]
    DegenerateCalibration,
    #[error("min-max normalization needs a cohort of at least two models")]
    DegenerateNormalization,
}

pub const DEFAULT_LEVELS: usize = 100;
pub const EV_TO_KCAL_MOL: f64 = 23.06;
/// (E_RMSE, F_RMSE, E_CE, F_CE, AUROC).
pub const SCORE_WEIGHTS: [f64; 5] = [0.25, 0.25, 0.125, 0.125, 0.25];
pub const SCATTER_QUANTILES: [f64; 4] = [0.25, 0.5, 0.75, 0.95];

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `p_j = j / (m + 1)`, `j = 1..m`.
pub fn levels(m: usize) -> Vec<f64> {
    (1..=m).map(|j| j as f64 / (m + 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub levels: Vec<f64>,
    pub observed: Vec<f64>,
}

impl ReliabilityCurve {
    /// Mean squared gap between nominal and observed coverage.
    pub fn calibration_error(&self) -> f64 {
        let m = self.levels.len() as f64;
        self.levels
            .iter()
            .zip(&self.observed)
            .map(|(p, o)| (p - o) * (p - o))
            .sum::<f64>()
            / m
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,observed")?;
        for (p, o) in self.levels.iter().zip(&self.observed) {
            writeln!(w, "{p},{o}")?;
        }
        Ok(())
    }
}

fn check_pairs(residuals: &[f64], sd: &[f64]) -> Result<(), UqError> {
    if residuals.is_empty() || sd.is_empty() {
        return Err(UqError::NoData);
    }
    if residuals.len() != sd.len() {
        return Err(UqError::ShapeMismatch(format!(
            "{} residuals, {} sds",
            residuals.len(),
            sd.len()
        )));
    }
    if residuals.len() < 2 {
        return Err(UqError::TooFewPoints { need: 2, got: 1 });
    }
    if let Some(s) = sd.iter().find(|s| !(**s > 0.0)) {
        return Err(UqError::BadInput(format!("predicted sd {s}")));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(UqError::BadInput("non-finite residual".into()));
    }
    Ok(())
}

/// Probability integral transform `Φ(r / σ)` per point.
pub fn pit_values(residuals: &[f64], sd: &[f64]) -> Result<Vec<f64>, UqError> {
    check_pairs(residuals, sd)?;
    let n = std_normal();
    Ok(residuals
        .iter()
        .zip(sd)
        .map(|(r, s)| n.cdf(r / s))
        .collect())
}

/// Fraction of PIT values inside the central interval of each nominal mass.
pub fn reliability_from_pit(u: &[f64], m: usize) -> Result<ReliabilityCurve, UqError> {
    if u.is_empty() || m == 0 {
        return Err(UqError::NoData);
    }
    let mut dev: Vec<f64> = u.iter().map(|x| (x - 0.5).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let n = dev.len() as f64;
    let lv = levels(m);
    let observed = lv
        .iter()
        .map(|p| dev.partition_point(|d| *d <= p / 2.0) as f64 / n)
        .collect();
    Ok(ReliabilityCurve {
        levels: lv,
        observed,
    })
}

pub fn reliability_curve(residuals: &[f64], sd: &[f64], m: usize) -> Result<ReliabilityCurve, UqError> {
    reliability_from_pit(&pit_values(residuals, sd)?, m)
}

pub fn calibration_error(residuals: &[f64], sd: &[f64], m: usize) -> Result<f64, UqError> {
    Ok(reliability_curve(residuals, sd, m)?.calibration_error())
}

/// Mann–Whitney estimate of P(OOD score > ID score), ties counted ½.
pub fn auroc(scores_id: &[f64], scores_ood: &[f64]) -> Result<f64, UqError> {
    if scores_id.is_empty() || scores_ood.is_empty() {
        return Err(UqError::NoData);
    }
    if scores_id.iter().chain(scores_ood).any(|x| x.is_nan()) {
        return Err(UqError::BadInput("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_id
        .iter()
        .map(|&x| (x, false))
        .chain(scores_ood.iter().map(|&x| (x, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the rank sum keeps mid-ranks integral
    let mut rank2_ood: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        rank2_ood += mid2 * all[i..=j].iter().filter(|x| x.1).count() as u128;
        i = j + 1;
    }
    let n1 = scores_ood.len() as u128;
    let n0 = scores_id.len() as u128;
    let u2 = rank2_ood - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n0 * n1) as f64)
}

/// Monotone map from nominal to calibrated cumulative levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub knots: Vec<(f64, f64)>,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        CalibrationMap {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }
}

/// Weighted pool-adjacent-violators: the non-decreasing sequence closest to
/// `y` in weighted least squares.
pub fn isotonic_pav(y: &[f64], w: &[f64]) -> Vec<f64> {
    // blocks of (value, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (v1, w1, c1) = blocks[blocks.len() - 1];
            let (v0, w0, c0) = blocks[blocks.len() - 2];
            if v0 <= v1 {
                break;
            }
            blocks.pop();
            let wt = w0 + w1;
            *blocks.last_mut().unwrap() = ((v0 * w0 + v1 * w1) / wt, wt, c0 + c1);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, c)| std::iter::repeat_n(v, c))
        .collect()
}

/// Fits `p ↦ P̂(p)` where `p_i = Φ(r_i/σ_i)` and `P̂` is the empirical CDF of
/// the `p_i`, by isotonic regression; endpoints pinned to 0 and 1.
pub fn recalibrate_fit(residuals: &[f64], sd: &[f64]) -> Result<CalibrationMap, UqError> {
    if residuals.len() < 10 && !residuals.is_empty() && residuals.len() == sd.len() {
        return Err(UqError::TooFewPoints {
            need: 10,
            got: residuals.len(),
        });
    }
    let mut p = pit_values(residuals, sd)?;
    p.sort_by(f64::total_cmp);
    if p[0] == p[p.len() - 1] {
        return Err(UqError::DegenerateCalibration);
    }
    let n = p.len() as f64;
    // unique levels with the empirical CDF at each (count of p_j ≤ p)
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    let mut i = 0;
    while i < p.len() {
        let mut j = i;
        while j + 1 < p.len() && p[j + 1] == p[i] {
            j += 1;
        }
        xs.push(p[i]);
        ys.push((j + 1) as f64 / n);
        ws.push((j - i + 1) as f64);
        i = j + 1;
    }
    let fit = isotonic_pav(&ys, &ws);
    let mut knots = vec![(0.0, 0.0)];
    for (x, y) in xs.into_iter().zip(fit) {
        if x > 0.0 && x < 1.0 {
            knots.push((x, y.clamp(0.0, 1.0)));
        }
    }
    knots.push((1.0, 1.0));
    Ok(CalibrationMap { knots })
}

/// Piecewise-linear interpolation between knots; `p` is clamped to [0, 1].
pub fn recalibrate_apply(map: &CalibrationMap, p: f64) -> f64 {
    let k = &map.knots;
    let p = p.clamp(0.0, 1.0);
    let i = k.partition_point(|(x, _)| *x <= p);
    if i == 0 {
        return k[0].1;
    }
    if i == k.len() {
        return k[k.len() - 1].1;
    }
    let (x0, y0) = k[i - 1];
    let (x1, y1) = k[i];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (p - x0) / (x1 - x0)
}

/// Reliability curve of the recalibrated PIT values `R(Φ(r/σ))`.
pub fn recalibrated_curve(
    map: &CalibrationMap,
    residuals: &[f64],
    sd: &[f64],
    m: usize,
) -> Result<ReliabilityCurve, UqError> {
    let u: Vec<f64> = pit_values(residuals, sd)?
        .into_iter()
        .map(|p| recalibrate_apply(map, p))
        .collect();
    reliability_from_pit(&u, m)
}

pub fn recalibrated_calibration_error(
    map: &CalibrationMap,
    residuals: &[f64],
    sd: &[f64],
    m: usize,
) -> Result<f64, UqError> {
    Ok(recalibrated_curve(map, residuals, sd, m)?.calibration_error())
}

/// Raw metrics of one model. RMSEs in eV and eV/Å.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub e_rmse: f64,
    pub f_rmse: f64,
    pub e_ce: f64,
    pub f_ce: f64,
    pub auroc: f64,
}

/// Min/max of each CE column over the compared models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortNormalization {
    pub e_ce_min: f64,
    pub e_ce_max: f64,
    pub f_ce_min: f64,
    pub f_ce_max: f64,
}

impl CohortNormalization {
    pub fn from_cohort(rows: &[MetricRow]) -> Result<Self, UqError> {
        if rows.len() < 2 {
            return Err(UqError::DegenerateNormalization);
        }
        let fold = |f: fn(&MetricRow) -> f64| {
            rows.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            })
        };
        let (e_ce_min, e_ce_max) = fold(|r| r.e_ce);
        let (f_ce_min, f_ce_max) = fold(|r| r.f_ce);
        Ok(CohortNormalization {
            e_ce_min,
            e_ce_max,
            f_ce_min,
            f_ce_max,
        })
    }
}

fn min_max(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Normalized terms (E_RMSE, F_RMSE in kcal/mol, min–max CEs, 1 − AUROC).
pub fn normalized_terms(row: &MetricRow, ctx: &CohortNormalization) -> [f64; 5] {
    [
        row.e_rmse * EV_TO_KCAL_MOL,
        row.f_rmse * EV_TO_KCAL_MOL,
        min_max(row.e_ce, ctx.e_ce_min, ctx.e_ce_max),
        min_max(row.f_ce, ctx.f_ce_min, ctx.f_ce_max),
        1.0 - row.auroc,
    ]
}

pub fn composite_score(row: &MetricRow, ctx: &CohortNormalization) -> f64 {
    normalized_terms(row, ctx)
        .iter()
        .zip(SCORE_WEIGHTS)
        .map(|(t, w)| t * w)
        .sum()
}

/// Scores of every model, normalized against the cohort itself.
pub fn composite_scores(rows: &[MetricRow]) -> Result<Vec<f64>, UqError> {
    let ctx = CohortNormalization::from_cohort(rows)?;
    Ok(rows.iter().map(|r| composite_score(r, &ctx)).collect())
}

/// `Φ⁻¹((1 + q)/2)`: the q-quantile of |z| for z ~ N(0, 1).
pub fn half_normal_quantile(q: f64) -> f64 {
    std_normal().inverse_cdf(0.5 * (1.0 + q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterData {
    /// (predicted sd, |error|)
    pub points: Vec<(f64, f64)>,
    /// (q, slope): the reference band is |e| = slope · σ.
    pub bands: Vec<(f64, f64)>,
}

impl ScatterData {
    pub fn band(&self, q: f64, sigma: f64) -> Option<f64> {
        self.bands.iter().find(|b| b.0 == q).map(|b| b.1 * sigma)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sd,abs_error")?;
        for (s, e) in &self.points {
            writeln!(w, "{s},{e}")?;
        }
        Ok(())
    }
}

pub fn error_scatter(pred_mean: &[f64], pred_sd: &[f64], labels: &[f64]) -> Result<ScatterData, UqError> {
    if pred_mean.is_empty() {
        return Err(UqError::NoData);
    }
    if pred_mean.len() != pred_sd.len() || pred_mean.len() != labels.len() {
        return Err(UqError::ShapeMismatch("scatter inputs differ in length".into()));
    }
    Ok(ScatterData {
        points: pred_sd
            .iter()
            .zip(pred_mean.iter().zip(labels))
            .map(|(s, (m, y))| (*s, (y - m).abs()))
            .collect(),
        bands: SCATTER_QUANTILES
            .iter()
            .map(|&q| (q, half_normal_quantile(q)))
            .collect(),
    })
}

pub fn rmse(pred: &[f64], labels: &[f64]) -> Result<f64, UqError> {
    if pred.is_empty() {
        return Err(UqError::NoData);
    }
    if pred.len() != labels.len() {
        return Err(UqError::ShapeMismatch("rmse inputs differ in length".into()));
    }
    let s: f64 = pred.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(metric: impl Into<String>, value: f64) -> Self {
        MetricRecord {
            metric: metric.into(),
            value,
        }
    }
}

/// One JSON object per line.
pub fn write_metrics<W: Write>(mut w: W, records: &[MetricRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}
