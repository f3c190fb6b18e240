//! Pixel-level scoring and grid search over the solver weights.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{write_atomic, BinaryMask, GrayImage};
use crate::pipeline::{compute_priors, detect_with_priors, prepare, PipelineConfig, Priors};
use crate::synth::{DefectKind, Sample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Ground-truth set pixels are the positive class.
pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::dims(gt.dims(), pred.dims()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Rates are `None` when their denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f: Option<f64>,
    pub gamma: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: ConfusionCounts, gamma: f64) -> MetricsReport {
    let tpr = ratio(c.tp, c.tp + c.fn_);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let g2 = gamma * gamma;
    let f = match (tpr, ppv) {
        (Some(r), Some(p)) if r + g2 * p > 0.0 => Some((g2 + 1.0) * r * p / (r + g2 * p)),
        _ => None,
    };
    MetricsReport {
        counts: c,
        tpr,
        fpr: ratio(c.fp, c.fp + c.tn),
        ppv,
        npv: ratio(c.tn, c.tn + c.fn_),
        f,
        gamma,
    }
}

/// One image of an evaluation set.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub kind: DefectKind,
    pub image: GrayImage,
    pub gt: BinaryMask,
}

impl From<&Sample> for EvalItem {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.meta.id.clone(),
            kind: s.meta.kind,
            image: s.image.clone(),
            gt: s.gt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub id: String,
    pub kind: DefectKind,
    pub lambda: f64,
    pub beta: f64,
    pub report: MetricsReport,
}

/// f used for averaging: an undefined f on an image with defects means
/// nothing was found, and counts as 0.
pub fn f_or_zero(r: &MetricsReport) -> f64 {
    r.f.unwrap_or(0.0)
}

fn score(item: &EvalItem, priors: Priors, cfg: &PipelineConfig) -> Result<ImageScore> {
    let img = prepare(&item.image, cfg);
    let d = detect_with_priors(&img, priors, cfg)?;
    let s = cfg.solver();
    Ok(ImageScore {
        id: item.id.clone(),
        kind: item.kind,
        lambda: s.lambda,
        beta: s.beta,
        report: metrics(confusion(&d.segmentation.defect_mask, &item.gt)?, 1.0),
    })
}

fn priors_for(items: &[EvalItem], cfg: &PipelineConfig) -> Vec<Result<Priors>> {
    items
        .par_iter()
        .map(|it| compute_priors(&prepare(&it.image, cfg), cfg))
        .collect()
}

/// Runs the pipeline on every item; results keep input order.
pub fn evaluate(items: &[EvalItem], cfg: &PipelineConfig) -> Vec<Result<ImageScore>> {
    if let Err(e) = cfg.validate() {
        return items.iter().map(|_| Err(Error::Config(e.to_string()))).collect();
    }
    let priors = priors_for(items, cfg);
    items
        .par_iter()
        .zip(priors)
        .map(|(it, p)| score(it, p?, cfg))
        .collect()
}

/// Mean f per defect kind plus an `"all"` entry.
pub fn class_means(scores: &[ImageScore]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in scores {
        for key in [s.kind.to_string(), "all".to_string()] {
            let e = acc.entry(key).or_default();
            e.0 += f_or_zero(&s.report);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub lambda: f64,
    pub beta: f64,
    /// Macro-averaged f; `None` when any image failed.
    pub mean_f: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridResult {
    pub best_lambda: f64,
    pub best_beta: f64,
    pub best_mean_f: f64,
    pub cells: Vec<GridCell>,
    pub rows: Vec<ImageScore>,
}

/// Exhaustive scan over `lambdas x betas`. Priors do not depend on the
/// solver weights and are computed once per image.
pub fn grid_search(items: &[EvalItem], lambdas: &[f64], betas: &[f64], base: &PipelineConfig) -> Result<GridResult> {
    if items.is_empty() || lambdas.is_empty() || betas.is_empty() {
        return Err(Error::invalid("grid", "dataset and both grids must be non-empty"));
    }
    base.validate()?;
    let priors = priors_for(items, base);
    let cells: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| betas.iter().map(move |&b| (l, b))).collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..items.len()).map(move |i| (c, i))).collect();
    let outcomes: Vec<Result<ImageScore>> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let (lambda, beta) = cells[c];
            let cfg = PipelineConfig {
                lambda: Some(lambda),
                beta: Some(beta),
                ..base.clone()
            };
            let p = priors[i].as_ref().map_err(|e| Error::Config(e.to_string()))?.clone();
            score(&items[i], p, &cfg)
        })
        .collect();

    let mut table = Vec::with_capacity(cells.len());
    let mut rows = Vec::new();
    for (c, chunk) in outcomes.chunks(items.len()).enumerate() {
        let (lambda, beta) = cells[c];
        let mut sum = 0.0;
        let mut error = None;
        for r in chunk {
            match r {
                Ok(s) => {
                    sum += f_or_zero(&s.report);
                    rows.push(s.clone());
                }
                Err(e) => {
                    error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if let Some(e) = &error {
            log::warn!("grid cell lambda={lambda} beta={beta} excluded: {e}");
        }
        table.push(GridCell {
            lambda,
            beta,
            mean_f: error.is_none().then(|| sum / items.len() as f64),
            error,
        });
    }

    let best = table
        .iter()
        .filter_map(|c| c.mean_f.map(|f| (f, c.lambda, c.beta)))
        .min_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        })
        .ok_or_else(|| Error::Config("every grid cell failed".into()))?;
    Ok(GridResult {
        best_lambda: best.1,
        best_beta: best.2,
        best_mean_f: best.0,
        cells: table,
        rows,
    })
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    id: &'a str,
    kind: DefectKind,
    lambda: f64,
    beta: f64,
    tpr: Option<f64>,
    fpr: Option<f64>,
    ppv: Option<f64>,
    npv: Option<f64>,
    f: Option<f64>,
}

/// One CSV row per image score; undefined metrics are empty fields.
pub fn scores_csv(rows: &[ImageScore]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(ScoreRow {
            id: &r.id,
            kind: r.kind,
            lambda: r.lambda,
            beta: r.beta,
            tpr: r.report.tpr,
            fpr: r.report.fpr,
            ppv: r.report.ppv,
            npv: r.report.npv,
            f: r.report.f,
        })?;
    }
    wtr.into_inner().map_err(|e| Error::Dataset(e.to_string()))
}

pub fn write_scores(rows: &[ImageScore], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &scores_csv(rows)?)
}
