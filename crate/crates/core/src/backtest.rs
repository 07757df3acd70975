//! Walk-forward evaluation with monthly refits and quantile long/short portfolios.
//!
//! Months are labelled by the month whose return is being predicted. For target
//! month `m` the model sees inputs dated `m - 1` and is trained on the
//! `train_window` sample sets whose targets were realized in `m - train_window`
//! through `m - 1`, i.e. inputs dated `m - train_window - 1 ..= m - 2`. Nothing
//! stored at a date `>= m` is read.

use crate::baseline::{ols_fit, LinearModel};
use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::factors::{build_samples, Sample, LAGS};
use crate::month::Month;
use crate::net::{
    init_network, stack_inputs, train, Activation, Layer, Network, NetworkSpec, TrainConfig,
};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "deep_model_1")]
    Deep1,
    #[serde(rename = "deep_model_2")]
    Deep2,
    #[serde(rename = "linear")]
    Linear,
    /// Network with caller-chosen hidden widths.
    #[serde(rename = "custom")]
    Custom(Vec<usize>),
}

impl ModelKind {
    /// Network architecture for the deep variants; `None` for the linear baseline.
    pub fn network_spec(&self, input_dim: usize, seed: u64) -> Option<NetworkSpec> {
        match self {
            ModelKind::Deep1 => Some(NetworkSpec {
                input_dim,
                ..NetworkSpec::deep_model_1(seed)
            }),
            ModelKind::Deep2 => Some(NetworkSpec {
                input_dim,
                ..NetworkSpec::deep_model_2(seed)
            }),
            ModelKind::Custom(hidden) => Some(NetworkSpec::new(input_dim, hidden.clone(), 1, seed)),
            ModelKind::Linear => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelKind::Deep1 => "deep_model_1".into(),
            ModelKind::Deep2 => "deep_model_2".into(),
            ModelKind::Linear => "linear".into(),
            ModelKind::Custom(h) => format!(
                "custom_{}",
                h.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardConfig {
    pub train_window: usize,
    pub start_month: Month,
    pub end_month: Month,
    pub model_kind: ModelKind,
    pub quantiles: usize,
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ridge_lambda: f64,
}

impl WalkForwardConfig {
    pub fn new(start_month: Month, end_month: Month, model_kind: ModelKind) -> Self {
        Self {
            train_window: 60,
            start_month,
            end_month,
            model_kind,
            quantiles: 5,
            seed: 0,
            train: TrainConfig::default(),
            ridge_lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.start_month > self.end_month {
            return bad(format!(
                "start_month {} is after end_month {}",
                self.start_month, self.end_month
            ));
        }
        if self.train_window == 0 {
            return bad("train_window must be >= 1".into());
        }
        if self.quantiles < 2 {
            return bad(format!("quantiles must be >= 2, got {}", self.quantiles));
        }
        if !(self.ridge_lambda >= 0.0) {
            return bad("ridge_lambda must be >= 0".into());
        }
        if let Some(spec) = self.model_kind.network_spec(1, 0) {
            spec.validate()?;
            self.train.validate()?;
        }
        Ok(())
    }

    /// Earliest target month the panel starting at `first` can support.
    pub fn first_feasible(&self, first: Month) -> Month {
        let max_lag = *LAGS.iter().max().expect("non-empty");
        first.offset(self.train_window as i32 + max_lag + 1)
    }

    pub fn target_months(&self) -> Vec<Month> {
        (0..=self.end_month.since(self.start_month))
            .map(|i| self.start_month.offset(i))
            .collect()
    }
}

/// Outcome for one stock in one month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockOutcome {
    pub stock_id: String,
    pub predicted: f64,
    pub realized: f64,
    /// 1 = highest predictions.
    pub bucket: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthResult {
    pub month: Month,
    pub quantiles: usize,
    pub stocks: Vec<StockOutcome>,
    pub long_short_return: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mae: f64,
    pub rmse: f64,
    pub ann_return: f64,
    /// `None` with fewer than two months.
    pub ann_vol: Option<f64>,
    /// `None` when volatility is zero or undefined.
    pub sharpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: WalkForwardConfig,
    pub months: Vec<MonthResult>,
    #[serde(flatten)]
    pub summary: Summary,
    /// `predicted - realized` for every stock-month, in month then stock order.
    pub residuals: Vec<f64>,
}

/// A model fitted for one walk-forward month.
///
/// Serialized untagged, so the JSON is either a network file or a linear model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FittedModel {
    Deep(Network<f64>),
    Linear(LinearModel),
}

impl FittedModel {
    pub fn input_dim(&self) -> usize {
        match self {
            FittedModel::Deep(net) => net.input_dim(),
            FittedModel::Linear(m) => m.coefficients.len(),
        }
    }

    pub fn predict_samples(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        match self {
            FittedModel::Deep(net) => {
                let x = stack_inputs(samples, net.input_dim())?;
                Ok(net.predict_batch(&x)?.to_vec())
            }
            FittedModel::Linear(model) => samples.iter().map(|s| model.predict(&s.input)).collect(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Deep(net) => net.predict(x),
            FittedModel::Linear(model) => model.predict(x),
        }
    }

    /// The model as a network; a linear model becomes a single affine layer.
    pub fn to_network(&self) -> Result<Network<f64>> {
        match self {
            FittedModel::Deep(net) => Ok(net.clone()),
            FittedModel::Linear(m) => {
                let dim = m.coefficients.len();
                let layer = Layer {
                    weights: Array2::from_shape_vec((1, dim), m.coefficients.clone())
                        .expect("one row of coefficients"),
                    bias: Array1::from_vec(vec![m.intercept]),
                };
                Network::from_layers(vec![layer], Activation::Relu)
            }
        }
    }
}

/// SplitMix64 finalizer; derives per-month seeds from the run seed.
fn mix_seed(seed: u64, salt: i64) -> u64 {
    let mut z = seed ^ (salt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits the configured model on `samples`, seeded for `target` month.
pub fn fit_model(
    config: &WalkForwardConfig,
    samples: &[Sample],
    target: Month,
) -> Result<FittedModel> {
    let dim = samples
        .first()
        .ok_or(Error::Empty("training window"))?
        .input
        .len();
    let month_seed = mix_seed(config.seed, target.ordinal() as i64);
    match config.model_kind.network_spec(dim, month_seed) {
        Some(spec) => {
            let net = init_network::<f64>(&spec)?;
            let tc = TrainConfig {
                seed: mix_seed(month_seed, 1),
                ..config.train.clone()
            };
            Ok(FittedModel::Deep(train(&net, samples, &tc)?))
        }
        None => Ok(FittedModel::Linear(ols_fit(samples, config.ridge_lambda)?)),
    }
}

/// Training samples for target month `m` (see module docs for the window).
pub fn training_window(
    cache: &BTreeMap<Month, Vec<Sample>>,
    config: &WalkForwardConfig,
    target: Month,
) -> Vec<Sample> {
    let lo = target.offset(-(config.train_window as i32) - 1);
    let hi = target.offset(-2);
    cache
        .range(lo..=hi)
        .flat_map(|(_, s)| s.iter().cloned())
        .collect()
}

/// Fits the model [`walk_forward`] would use for `target`, straight from the panel.
/// Returns the model and the number of training samples.
pub fn fit_for_month(
    panel: &PanelDataset,
    config: &WalkForwardConfig,
    target: Month,
) -> Result<(FittedModel, usize)> {
    config.validate()?;
    let first = panel.first_month().ok_or(Error::Empty("panel"))?;
    let first_feasible = config.first_feasible(first);
    if target < first_feasible {
        return Err(Error::InsufficientHistory {
            requested: target,
            first_feasible,
        });
    }
    let lo = target.offset(-(config.train_window as i32) - 1);
    let samples: Vec<Sample> = (0..=target.offset(-2).since(lo))
        .into_par_iter()
        .flat_map_iter(|i| build_samples(panel, lo.offset(i)).samples)
        .collect();
    if samples.is_empty() {
        return Err(Error::Empty("training window"));
    }
    let n = samples.len();
    Ok((fit_model(config, &samples, target)?, n))
}

pub fn walk_forward(panel: &PanelDataset, config: &WalkForwardConfig) -> Result<BacktestReport> {
    config.validate()?;
    let first = panel.first_month().ok_or(Error::Empty("panel"))?;
    let last = panel.last_month().expect("non-empty panel");
    let first_feasible = config.first_feasible(first);
    if config.start_month < first_feasible {
        return Err(Error::InsufficientHistory {
            requested: config.start_month,
            first_feasible,
        });
    }
    if config.end_month.offset(-1) > last {
        return Err(Error::InvalidConfig(format!(
            "end_month {} needs inputs dated {}, panel ends at {last}",
            config.end_month,
            config.end_month.offset(-1)
        )));
    }

    let lo = config.start_month.offset(-(config.train_window as i32) - 1);
    let hi = config.end_month.offset(-1);
    let cache: BTreeMap<Month, Vec<Sample>> = (0..=hi.since(lo))
        .into_par_iter()
        .map(|i| {
            let as_of = lo.offset(i);
            (as_of, build_samples(panel, as_of).samples)
        })
        .collect();

    let months = config
        .target_months()
        .into_par_iter()
        .map(|m| run_month(&cache, config, m))
        .collect::<Result<Vec<_>>>()?;

    let summary = summarize(&months)?;
    let residuals = months
        .iter()
        .flat_map(|m| m.stocks.iter().map(|s| s.predicted - s.realized))
        .collect();
    Ok(BacktestReport {
        config: config.clone(),
        months,
        summary,
        residuals,
    })
}

fn run_month(
    cache: &BTreeMap<Month, Vec<Sample>>,
    config: &WalkForwardConfig,
    target: Month,
) -> Result<MonthResult> {
    let train_set = training_window(cache, config, target);
    if train_set.is_empty() {
        return Err(Error::Empty("training window"));
    }
    let model = fit_model(config, &train_set, target)?;
    let test = cache
        .get(&target.offset(-1))
        .map(Vec::as_slice)
        .unwrap_or(&[]);
    if test.len() < config.quantiles {
        return Err(Error::TooFewStocks {
            context: "quantile portfolio",
            required: config.quantiles,
            actual: test.len(),
        });
    }
    let predicted = model.predict_samples(test)?;
    let keyed: Vec<(&str, f64)> = test
        .iter()
        .zip(&predicted)
        .map(|(s, &p)| (s.stock_id.as_str(), p))
        .collect();
    let buckets = quantile_assign(&keyed, config.quantiles)?;
    let stocks: Vec<StockOutcome> = test
        .iter()
        .zip(predicted)
        .zip(buckets)
        .map(|((s, p), b)| StockOutcome {
            stock_id: s.stock_id.clone(),
            predicted: p,
            realized: s.target,
            bucket: b,
        })
        .collect();
    let (mae, rmse) = errors(&stocks);
    let mut result = MonthResult {
        month: target,
        quantiles: config.quantiles,
        stocks,
        long_short_return: 0.0,
        mae,
        rmse,
        n_train: train_set.len(),
    };
    result.long_short_return = long_short_return(&result);
    Ok(result)
}

fn errors(stocks: &[StockOutcome]) -> (f64, f64) {
    let n = stocks.len() as f64;
    let (abs, sq) = stocks.iter().fold((0.0, 0.0), |(a, s), o| {
        let e = o.predicted - o.realized;
        (a + e.abs(), s + e * e)
    });
    (abs / n, (sq / n).sqrt())
}

/// Buckets `1..=q` by descending prediction, ties broken by ascending stock id.
///
/// Bucket sizes differ by at most one; the first `n % q` buckets get the extra stock.
/// The result is aligned with `predictions`.
pub fn quantile_assign(predictions: &[(&str, f64)], q: usize) -> Result<Vec<usize>> {
    let n = predictions.len();
    if q == 0 {
        return Err(Error::InvalidConfig("quantiles must be >= 1".into()));
    }
    if n < q {
        return Err(Error::TooFewStocks {
            context: "quantile_assign",
            required: q,
            actual: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ia, pa) = predictions[a];
        let (ib, pb) = predictions[b];
        pb.partial_cmp(&pa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ia.cmp(ib))
    });
    let (base, extra) = (n / q, n % q);
    let mut buckets = vec![0; n];
    let mut pos = 0;
    for k in 0..q {
        let size = base + usize::from(k < extra);
        for &i in &order[pos..pos + size] {
            buckets[i] = k + 1;
        }
        pos += size;
    }
    Ok(buckets)
}

/// Equal-weight mean realized return of bucket 1 minus that of the bottom bucket.
pub fn long_short_return(month: &MonthResult) -> f64 {
    let mean_of = |b: usize| {
        let (sum, n) = month
            .stocks
            .iter()
            .filter(|s| s.bucket == b)
            .fold((0.0, 0usize), |(sum, n), s| (sum + s.realized, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    mean_of(1) - mean_of(month.quantiles)
}

/// Sharpe ratio of monthly returns, annualized: `12 mean / (sqrt(12) sd)`.
pub fn sharpe_ratio(monthly: &[f64]) -> Result<f64> {
    let (ann_return, ann_vol) = annualize(monthly)?;
    let vol = ann_vol.ok_or(Error::TooFewMonths(monthly.len()))?;
    if vol == 0.0 {
        return Err(Error::ZeroVolatility);
    }
    Ok(ann_return / vol)
}

fn annualize(monthly: &[f64]) -> Result<(f64, Option<f64>)> {
    let mean = crate::stats::mean(monthly).ok_or(Error::Empty("summarize"))?;
    let vol = crate::stats::sample_std(monthly).map(|sd| 12f64.sqrt() * sd);
    Ok((12.0 * mean, vol))
}

/// Table-style metrics over the months of a backtest.
///
/// MAE and RMSE are computed per month and then averaged across months.
pub fn summarize(months: &[MonthResult]) -> Result<Summary> {
    if months.is_empty() {
        return Err(Error::Empty("summarize"));
    }
    let ls: Vec<f64> = months.iter().map(|m| m.long_short_return).collect();
    let (ann_return, ann_vol) = annualize(&ls)?;
    let n = months.len() as f64;
    Ok(Summary {
        mae: months.iter().map(|m| m.mae).sum::<f64>() / n,
        rmse: months.iter().map(|m| m.rmse).sum::<f64>() / n,
        ann_return,
        ann_vol,
        sharpe: sharpe_ratio(&ls).ok(),
    })
}

pub const SUMMARY_HEADER: [&str; 6] = [
    "model",
    "Return [%]",
    "Volatility [%]",
    "Sharpe Ratio",
    "MAE",
    "RMSE",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BacktestReport {
    /// One row per month: `month,long_short_return,mae,rmse`.
    pub fn write_months_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["month", "long_short_return", "mae", "rmse"])?;
        for m in &self.months {
            w.write_record([
                m.month.to_string(),
                m.long_short_return.to_string(),
                m.mae.to_string(),
                m.rmse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Header [`SUMMARY_HEADER`] and one row; return and volatility in percent.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        w.write_record(self.summary_record())?;
        w.flush()?;
        Ok(())
    }

    /// The summary row matching [`SUMMARY_HEADER`].
    pub fn summary_record(&self) -> [String; 6] {
        let s = &self.summary;
        [
            self.config.model_kind.label(),
            (100.0 * s.ann_return).to_string(),
            opt(s.ann_vol.map(|v| 100.0 * v)),
            opt(s.sharpe),
            s.mae.to_string(),
            s.rmse.to_string(),
        ]
    }

    /// The metric row as printed by the CLI.
    pub fn metric_row(&self) -> String {
        let s = &self.summary;
        let fmt = |v: Option<f64>, scale: f64| {
            v.map(|x| format!("{:.2}", scale * x))
                .unwrap_or_else(|| "n/a".into())
        };
        format!(
            "{:<14} Return[%]={:.2} Volatility[%]={} Sharpe={} MAE={:.4} RMSE={:.4}",
            self.config.model_kind.label(),
            100.0 * s.ann_return,
            fmt(s.ann_vol, 100.0),
            fmt(s.sharpe, 1.0),
            s.mae,
            s.rmse
        )
    }
}
