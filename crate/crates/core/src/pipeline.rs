//! Calibration and validation workflows: model specs, k-fold plans,
//! cross-validation with pooled out-of-fold predictions, channel
//! combination studies, model comparisons and stability series.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clarke::{ceg_report, CegReport};
use crate::dnn::fit_dnn;
use crate::lm::LmConfig;
use crate::metrics::{full_report, MetricsReport};
use crate::model_io::CalibrationModel;
use crate::regression::{fit_logistic, fit_mpr, fit_svr, SvrParams};
use crate::table::{opt, Table};
use crate::{ChannelSet, Cohort, Dataset, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mpr3,
    Mpr4,
    Logistic,
    Svr,
    Dnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Mpr3,
        ModelKind::Mpr4,
        ModelKind::Logistic,
        ModelKind::Svr,
        ModelKind::Dnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mpr3 => "mpr3",
            ModelKind::Mpr4 => "mpr4",
            ModelKind::Logistic => "logistic",
            ModelKind::Svr => "svr",
            ModelKind::Dnn => "dnn",
        }
    }

    pub fn degree(self) -> Option<u8> {
        match self {
            ModelKind::Mpr3 => Some(3),
            ModelKind::Mpr4 => Some(4),
            _ => None,
        }
    }

    pub fn from_degree(degree: u8) -> Result<Self> {
        match degree {
            3 => Ok(ModelKind::Mpr3),
            4 => Ok(ModelKind::Mpr4),
            d => Err(Error::InvalidArgument(format!("degree must be 3 or 4, got {d}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model {s:?} (expected mpr3, mpr4, logistic, svr or dnn)"))
    }
}

/// Everything needed to fit one model on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub channels: ChannelSet,
    pub lm: LmConfig,
    pub svr: SvrParams,
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, channels: ChannelSet) -> Self {
        ModelSpec {
            kind,
            channels,
            lm: LmConfig::default(),
            svr: SvrParams::default(),
            hidden: vec![10],
        }
    }

    pub fn fit(&self, train: &Dataset) -> Result<CalibrationModel> {
        Ok(match self.kind {
            ModelKind::Mpr3 | ModelKind::Mpr4 => {
                CalibrationModel::Mpr(fit_mpr(train, self.channels, self.kind.degree().unwrap())?)
            }
            ModelKind::Logistic => CalibrationModel::Logistic(fit_logistic(train, self.channels, &self.lm)?),
            ModelKind::Svr => CalibrationModel::Svr(fit_svr(train, self.channels, &self.svr)?),
            ModelKind::Dnn => CalibrationModel::Dnn(fit_dnn(train, self.channels, &self.hidden, &self.lm)?.model),
        })
    }
}

pub fn predict_all(model: &CalibrationModel, ds: &Dataset) -> Result<Vec<f64>> {
    ds.records.iter().map(|r| model.predict_record(r)).collect()
}

/// Scores of a model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub ceg: CegReport,
}

pub fn evaluate(model: &CalibrationModel, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predicted = predict_all(model, ds)?;
    let reference = ds.targets();
    Ok(Evaluation {
        metrics: full_report(&reference, &predicted)?,
        ceg: ceg_report(&reference, &predicted)?,
    })
}

/// Fold assignment per record index of the dataset it was built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Record indices in each fold, ascending.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (i, &f) in self.assignments.iter().enumerate() {
            folds[f].push(i);
        }
        folds
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        self.folds().iter().map(Vec::len).collect()
    }

    /// Indices outside `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Stratified k-fold plan (see [`kfold_split_with`]).
pub fn kfold_split(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    kfold_split_with(ds, k, seed, true)
}

/// Orders records by sample id, optionally groups them by cohort, shuffles
/// each group with `seed`, and deals the concatenation round-robin into
/// `k` folds. The plan depends only on the set of records, not on their
/// order in `ds`.
pub fn kfold_split_with(ds: &Dataset, k: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > ds.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds dataset size {}", ds.len())));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.records[a].sample_id.cmp(&ds.records[b].sample_id));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dealt = Vec::with_capacity(ds.len());
    if stratified {
        for cohort in Cohort::ALL {
            let mut group: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| ds.records[i].cohort == *cohort)
                .collect();
            group.shuffle(&mut rng);
            dealt.extend(group);
        }
    } else {
        order.shuffle(&mut rng);
        dealt = order;
    }

    let mut assignments = vec![0; ds.len()];
    for (pos, &i) in dealt.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        stratified,
        assignments,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledPrediction {
    pub sample_id: String,
    #[serde(rename = "ref")]
    pub reference: f64,
    #[serde(rename = "pred")]
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub model: ModelKind,
    pub channels: ChannelSet,
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Metrics over all out-of-fold predictions at once.
    pub pooled: Option<MetricsReport>,
    pub folds: Vec<FoldResult>,
    /// Out-of-fold predictions, ordered by sample id.
    pub predictions: Vec<PooledPrediction>,
}

impl CrossValReport {
    pub fn failed_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.error.is_some()).count()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["fold", "n_test", "mARD %", "AvgE %", "MAD", "RMSE"]);
        for f in &self.folds {
            match &f.metrics {
                Some(m) => t.row([
                    f.fold.to_string(),
                    f.n_test.to_string(),
                    format!("{:.2}", m.mard),
                    format!("{:.2}", m.avge),
                    format!("{:.2}", m.mad),
                    format!("{:.2}", m.rmse),
                ]),
                None => t.row([f.fold.to_string(), f.n_test.to_string(), "failed".into()]),
            };
        }
        if let Some(m) = &self.pooled {
            t.row([
                "pooled".to_string(),
                m.n.to_string(),
                format!("{:.2}", m.mard),
                format!("{:.2}", m.avge),
                format!("{:.2}", m.mad),
                format!("{:.2}", m.rmse),
            ]);
        }
        t
    }
}

pub fn crossval(ds: &Dataset, spec: &ModelSpec, k: usize, seed: u64) -> Result<CrossValReport> {
    crossval_with(ds, spec, k, seed, true)
}

/// Trains on each fold's complement and predicts the fold. Folds run in
/// parallel; failures are recorded per fold.
pub fn crossval_with(ds: &Dataset, spec: &ModelSpec, k: usize, seed: u64, stratified: bool) -> Result<CrossValReport> {
    // canonical order, so training sets are bit-identical however the input was shuffled
    let sorted = ds.canonical();
    let ds = &sorted;
    let plan = kfold_split_with(ds, k, seed, stratified)?;
    let folds = plan.folds();
    let outcomes: Vec<(FoldResult, Vec<(usize, f64)>)> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let test = &folds[fold];
            let train_idx = plan.complement(fold);
            let result = spec.fit(&ds.subset(&train_idx)).and_then(|model| {
                let test_ds = ds.subset(test);
                let predicted = predict_all(&model, &test_ds)?;
                let metrics = full_report(&test_ds.targets(), &predicted)?;
                Ok((metrics, predicted))
            });
            let (metrics, error, preds) = match result {
                Ok((m, p)) => (Some(m), None, test.iter().copied().zip(p).collect()),
                Err(e) => (None, Some(e.to_string()), Vec::new()),
            };
            let fr = FoldResult {
                fold,
                n_train: train_idx.len(),
                n_test: test.len(),
                metrics,
                error,
            };
            (fr, preds)
        })
        .collect();

    let mut pooled: Vec<(usize, f64)> = Vec::with_capacity(ds.len());
    let mut fold_results = Vec::with_capacity(k);
    for (fr, preds) in outcomes {
        fold_results.push(fr);
        pooled.extend(preds);
    }
    pooled.sort_by(|a, b| ds.records[a.0].sample_id.cmp(&ds.records[b.0].sample_id));
    let predictions: Vec<PooledPrediction> = pooled
        .iter()
        .map(|&(i, p)| PooledPrediction {
            sample_id: ds.records[i].sample_id.clone(),
            reference: ds.records[i].ref_glucose,
            predicted: p,
        })
        .collect();
    let reference: Vec<f64> = predictions.iter().map(|p| p.reference).collect();
    let predicted: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
    let pooled = if predictions.is_empty() {
        None
    } else {
        Some(full_report(&reference, &predicted)?)
    };
    Ok(CrossValReport {
        model: spec.kind,
        channels: spec.channels,
        k,
        seed,
        stratified,
        pooled,
        folds: fold_results,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub model: ModelKind,
    pub channels: ChannelSet,
    pub train: Option<MetricsReport>,
    pub validation: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub train_id: String,
    pub validation_id: String,
    pub rows: Vec<StudyRow>,
    /// Row with the lowest validation mARD.
    pub best: Option<usize>,
}

impl StudyResult {
    pub fn row(&self, model: ModelKind, channels: ChannelSet) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.model == model && r.channels == channels)
    }

    pub fn validation_mard(&self, model: ModelKind, channels: ChannelSet) -> Option<f64> {
        self.row(model, channels)?.validation.as_ref().map(|m| m.mard)
    }

    /// One block per scored split, one line per row, flagging the best.
    pub fn table(&self) -> Table {
        let mut t = Table::new(["model", "channels", "split", "R²", "mARD %", "AvgE %", "MAD", "RMSE", ""]);
        for (i, row) in self.rows.iter().enumerate() {
            let mark = if self.best == Some(i) { "*" } else { "" };
            for (split, m) in [("train", &row.train), ("validation", &row.validation)] {
                match m {
                    Some(m) => t.row([
                        row.model.to_string(),
                        row.channels.to_string(),
                        split.to_string(),
                        opt(m.r_squared, 2),
                        format!("{:.2}", m.mard),
                        format!("{:.2}", m.avge),
                        format!("{:.2}", m.mad),
                        format!("{:.2}", m.rmse),
                        if split == "validation" { mark.to_string() } else { String::new() },
                    ]),
                    None => {
                        let mut cells = vec![row.model.to_string(), row.channels.to_string(), split.to_string()];
                        cells.extend(std::iter::repeat_n("-".to_string(), 5));
                        cells.push(row.error.clone().unwrap_or_default());
                        t.row(cells)
                    }
                };
            }
        }
        t
    }
}

fn score_cell(spec: &ModelSpec, train: &Dataset, val: &Dataset) -> StudyRow {
    let mut row = StudyRow {
        model: spec.kind,
        channels: spec.channels,
        train: None,
        validation: None,
        error: None,
    };
    let model = match spec.fit(train) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(format!("fit: {e}"));
            return row;
        }
    };
    // each split is scored on its own so one failure keeps the other
    let mut errors = Vec::new();
    for (split, ds, slot) in [("train", train, &mut row.train), ("validation", val, &mut row.validation)] {
        match evaluate(&model, ds) {
            Ok(ev) => *slot = Some(ev.metrics),
            Err(e) => errors.push(format!("{split}: {e}")),
        }
    }
    if !errors.is_empty() {
        row.error = Some(errors.join("; "));
    }
    row
}

fn collect_study(train_id: &str, validation_id: &str, specs: Vec<ModelSpec>, train: &Dataset, val: &Dataset) -> StudyResult {
    let rows: Vec<StudyRow> = specs.par_iter().map(|s| score_cell(s, train, val)).collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.validation.as_ref().map(|m| (i, m.mard)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    StudyResult {
        train_id: train_id.into(),
        validation_id: validation_id.into(),
        rows,
        best,
    }
}

/// MPR over every channel set and each requested degree, trained on
/// `train` and scored on both sets. Rows are ordered by degree, then
/// channel set.
pub fn run_channel_study(train: &Dataset, val: &Dataset, degrees: &[u8], ids: (&str, &str)) -> Result<StudyResult> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut specs = Vec::new();
    for &d in degrees {
        let kind = ModelKind::from_degree(d)?;
        specs.extend(ChannelSet::ALL.iter().map(|&c| ModelSpec::new(kind, c)));
    }
    Ok(collect_study(ids.0, ids.1, specs, train, val))
}

/// Logistic, SVR, DNN and MPR3 on the channel set of `base`, each trained
/// on `train` and scored on both sets.
pub fn compare_models(train: &Dataset, val: &Dataset, base: &ModelSpec, ids: (&str, &str)) -> Result<StudyResult> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let specs = [ModelKind::Logistic, ModelKind::Svr, ModelKind::Dnn, ModelKind::Mpr3]
        .into_iter()
        .map(|kind| ModelSpec { kind, ..base.clone() })
        .collect();
    Ok(collect_study(ids.0, ids.1, specs, train, val))
}

/// Largest deviation still counted as stable, mg/dl.
pub const STABILITY_THRESHOLD: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub timestamp: i64,
    #[serde(rename = "ref")]
    pub reference: f64,
    #[serde(rename = "pred")]
    pub predicted: f64,
    /// `|pred − ref|`.
    pub deviation: f64,
    /// Change in prediction since the previous point.
    pub delta_pred: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub points: Vec<StabilityPoint>,
    pub mean_abs_deviation: f64,
    pub max_abs_deviation: f64,
    /// Last reference minus first.
    pub reference_drift: f64,
    pub threshold: f64,
    pub stable: bool,
}

pub fn stability_report(series: &[(i64, f64, f64)], threshold: f64) -> Result<StabilityReport> {
    if series.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: series.len(),
        });
    }
    if let Some(w) = series.windows(2).find(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidInput(format!(
            "timestamps must increase strictly ({} then {})",
            w[0].0, w[1].0
        )));
    }
    let points: Vec<StabilityPoint> = series
        .iter()
        .enumerate()
        .map(|(i, &(timestamp, reference, predicted))| StabilityPoint {
            timestamp,
            reference,
            predicted,
            deviation: (predicted - reference).abs(),
            delta_pred: (i > 0).then(|| predicted - series[i - 1].2),
        })
        .collect();
    let n = points.len();
    let mean = points.iter().map(|p| p.deviation).sum::<f64>() / n as f64;
    let max = points.iter().map(|p| p.deviation).fold(0.0, f64::max);
    Ok(StabilityReport {
        n,
        mean_abs_deviation: mean,
        max_abs_deviation: max,
        reference_drift: series[n - 1].1 - series[0].1,
        threshold,
        stable: max <= threshold,
        points,
    })
}
