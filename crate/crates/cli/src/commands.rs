use crate::config::{echo, usage, Globals};
use anyhow::Context;
use deepfactor::attribution::{aggregate_stock, factor_correlations, mean_relevance};
use deepfactor::backtest::{
    fit_for_month, quantile_assign, walk_forward, BacktestReport, FittedModel, ModelKind,
    WalkForwardConfig, SUMMARY_HEADER,
};
use deepfactor::data::{
    emit_panel, generate_synthetic, load_panel, GroundTruthKind, PanelDataset, SynthSpec,
};
use deepfactor::factors::{build_inputs, input_label, FactorMap, INPUT_DIM, N_DESCRIPTORS};
use deepfactor::lrp::{relevance, DEFAULT_STABILIZER};
use deepfactor::net::TrainConfig;
use deepfactor::{Month, RelevanceVector64};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub stocks: usize,
    pub months: usize,
    pub truth: GroundTruthKind,
    pub noise: f64,
    pub persistence: f64,
    pub start: Month,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthSpec::default();
        Self {
            stocks: d.n_stocks,
            months: d.n_months,
            truth: d.ground_truth,
            noise: d.noise_sigma,
            persistence: d.persistence,
            start: d.start_month,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Deep1,
    Deep2,
    Linear,
}

/// Panel and model settings shared by `backtest` and `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub panel: Option<PathBuf>,
    pub standardize: bool,
    pub model: ModelChoice,
    /// Overrides the hidden widths of the deep models.
    pub hidden: Option<Vec<usize>>,
    pub train_window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ridge: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            panel: None,
            standardize: false,
            model: ModelChoice::Deep1,
            hidden: None,
            train_window: 60,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            ridge: 0.0,
        }
    }
}

impl ModelSettings {
    fn kind(&self) -> anyhow::Result<ModelKind> {
        match (&self.hidden, self.model) {
            (Some(_), ModelChoice::Linear) => {
                Err(usage("--hidden does not apply to the linear model"))
            }
            (Some(h), _) => Ok(ModelKind::Custom(h.clone())),
            (None, ModelChoice::Deep1) => Ok(ModelKind::Deep1),
            (None, ModelChoice::Deep2) => Ok(ModelKind::Deep2),
            (None, ModelChoice::Linear) => Ok(ModelKind::Linear),
        }
    }

    fn walk_forward_config(
        &self,
        globals: &Globals,
        start: Month,
        end: Month,
        quantiles: usize,
    ) -> anyhow::Result<WalkForwardConfig> {
        let mut cfg = WalkForwardConfig::new(start, end, self.kind()?);
        cfg.train_window = self.train_window;
        cfg.quantiles = quantiles;
        cfg.seed = globals.seed;
        cfg.ridge_lambda = self.ridge;
        cfg.train = TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        };
        Ok(cfg)
    }

    fn load(&self) -> anyhow::Result<PanelDataset> {
        let path = self
            .panel
            .as_deref()
            .ok_or_else(|| usage("--panel is required"))?;
        open_panel(path, self.standardize)
    }
}

/// The layer widths of the configured network, for the echoed config.
fn network_widths(kind: &ModelKind) -> Map<String, Value> {
    let spec = kind.network_spec(INPUT_DIM, 0);
    let network = json!({
        "label": kind.label(),
        "hidden_dims": spec.as_ref().map(|s| s.hidden_dims.clone()),
        "widths": spec.as_ref().map(|s| s.widths()),
    });
    Map::from_iter([("network".to_string(), network)])
}

fn open_panel(path: &Path, standardize: bool) -> anyhow::Result<PanelDataset> {
    let panel = load_panel(path).with_context(|| format!("loading panel {}", path.display()))?;
    if panel.is_empty() {
        anyhow::bail!("panel {} has no rows", path.display());
    }
    if standardize {
        Ok(panel.standardize()?)
    } else {
        Ok(panel)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    info!("writing {}", path.display());
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    info!("writing {}", path.display());
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn synth(globals: &Globals, s: &SynthSettings) -> anyhow::Result<()> {
    let spec = SynthSpec {
        n_stocks: s.stocks,
        n_months: s.months,
        ground_truth: s.truth,
        noise_sigma: s.noise,
        seed: globals.seed,
        start_month: s.start,
        persistence: s.persistence,
    };
    spec.validate()?;
    echo(globals, "synth", s, Map::new())?;
    let syn = generate_synthetic(&spec)?;
    emit_panel(&syn.panel, &globals.out.join("panel.csv"))?;
    write_json(&globals.out.join("ground_truth.json"), &syn.truth)?;
    println!(
        "synthetic panel: {} stocks x {} months from {}, {} rows",
        s.stocks,
        s.months,
        s.start,
        syn.panel.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestSettings {
    #[serde(flatten)]
    pub model: ModelSettings,
    /// First target month; defaults to the first feasible one.
    pub start: Option<Month>,
    /// Last target month; defaults to the month after the panel ends.
    pub end: Option<Month>,
    pub quantiles: usize,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        Self {
            model: ModelSettings::default(),
            start: None,
            end: None,
            quantiles: 5,
        }
    }
}

pub fn backtest(globals: &Globals, mut s: BacktestSettings) -> anyhow::Result<()> {
    let panel = s.model.load()?;
    let first = panel.first_month().expect("non-empty panel");
    let last = panel.last_month().expect("non-empty panel");
    let probe = s
        .model
        .walk_forward_config(globals, first, first, s.quantiles)?;
    let start = *s.start.get_or_insert(probe.first_feasible(first));
    let end = *s.end.get_or_insert(last.offset(1));
    let cfg = s
        .model
        .walk_forward_config(globals, start, end, s.quantiles)?;
    cfg.validate()?;
    echo(globals, "backtest", &s, network_widths(&cfg.model_kind))?;

    let report = walk_forward(&panel, &cfg)?;
    write_json(&globals.out.join("report.json"), &report)?;
    report.write_months_csv(create(&globals.out.join("months.csv"))?)?;
    report.write_summary_csv(create(&globals.out.join("summary.csv"))?)?;
    println!("{} months, {start} to {end}", report.months.len());
    println!("{}", report.metric_row());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainSettings {
    #[serde(flatten)]
    pub model: ModelSettings,
    /// Target month the model predicts; defaults to the month after the panel ends.
    pub month: Option<Month>,
}

pub fn train(globals: &Globals, mut s: TrainSettings) -> anyhow::Result<()> {
    let panel = s.model.load()?;
    let month = *s
        .month
        .get_or_insert(panel.last_month().expect("non-empty panel").offset(1));
    let cfg = s.model.walk_forward_config(globals, month, month, 2)?;
    cfg.validate()?;
    echo(globals, "train", &s, network_widths(&cfg.model_kind))?;

    let (model, n) = fit_for_month(&panel, &cfg, month)?;
    write_json(&globals.out.join("model.json"), &model)?;
    println!(
        "{} for {month}, trained on {n} samples",
        cfg.model_kind.label()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    /// A `model.json` written by `train`.
    pub model_file: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub standardize: bool,
    /// Target month; inputs are taken from the month before.
    pub month: Option<Month>,
    /// `stock:<ID>` or `top-quintile`.
    pub target: String,
    pub quantiles: usize,
    pub stabilizer: f64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            model_file: None,
            panel: None,
            standardize: false,
            month: None,
            target: "top-quintile".into(),
            quantiles: 5,
            stabilizer: DEFAULT_STABILIZER,
        }
    }
}

enum Target {
    Stock(String),
    TopBucket,
}

impl Target {
    fn parse(s: &str) -> anyhow::Result<Self> {
        match s.split_once(':') {
            Some(("stock", id)) if !id.is_empty() => Ok(Target::Stock(id.to_string())),
            _ if s == "top-quintile" => Ok(Target::TopBucket),
            _ => Err(usage(format!(
                "--target must be stock:<ID> or top-quintile, got {s:?}"
            ))),
        }
    }
}

pub fn explain(globals: &Globals, mut s: ExplainSettings) -> anyhow::Result<()> {
    let target = Target::parse(&s.target)?;
    if s.stabilizer.is_nan() || s.stabilizer < 0.0 {
        return Err(usage("--stabilizer must be >= 0"));
    }
    if s.quantiles < 2 {
        return Err(usage("--quantiles must be >= 2"));
    }
    let model_path = s
        .model_file
        .clone()
        .ok_or_else(|| usage("--model-file is required"))?;
    let panel_path = s
        .panel
        .clone()
        .ok_or_else(|| usage("--panel is required"))?;
    let model: FittedModel = read_json(&model_path)?;
    let net = model.to_network()?;
    if net.input_dim() != INPUT_DIM {
        anyhow::bail!(
            "model expects {} inputs, the factor input has {INPUT_DIM}",
            net.input_dim()
        );
    }
    let panel = open_panel(&panel_path, s.standardize)?;
    let month = *s
        .month
        .get_or_insert(panel.last_month().expect("non-empty panel").offset(1));
    echo(globals, "explain", &s, Map::new())?;

    let as_of = month.offset(-1);
    let rows = build_inputs(&panel, as_of).rows;
    if rows.is_empty() {
        anyhow::bail!("no stock has complete inputs dated {as_of}");
    }
    let traces = rows
        .iter()
        .map(|r| net.forward(&r.input))
        .collect::<Result<Vec<_>, _>>()?;
    let predicted: Vec<f64> = traces.iter().map(|t| t.output()).collect();

    let chosen: Vec<usize> = match &target {
        Target::Stock(id) => {
            let i = rows
                .iter()
                .position(|r| &r.stock_id == id)
                .ok_or_else(|| deepfactor::Error::UnknownStock(format!("{id} at {as_of}")))?;
            vec![i]
        }
        Target::TopBucket => {
            let keyed: Vec<(&str, f64)> = rows
                .iter()
                .zip(&predicted)
                .map(|(r, &p)| (r.stock_id.as_str(), p))
                .collect();
            let buckets = quantile_assign(&keyed, s.quantiles)?;
            (0..rows.len()).filter(|&i| buckets[i] == 1).collect()
        }
    };
    let relevances = chosen
        .iter()
        .map(|&i| relevance(&net, &traces[i], s.stabilizer))
        .collect::<Result<Vec<_>, _>>()?;

    let mut table: Vec<(String, RelevanceVector64)> = chosen
        .iter()
        .map(|&i| rows[i].stock_id.clone())
        .zip(relevances.iter().cloned())
        .collect();
    let map = FactorMap::default();
    let attribution = match &target {
        Target::Stock(id) => aggregate_stock(&relevances[0], &map, id)?,
        Target::TopBucket => {
            let scope = "portfolio:Q1";
            let mean = mean_relevance(&relevances)?;
            table.push((scope.to_string(), mean.clone()));
            aggregate_stock(&mean, &map, scope)?
        }
    };
    write_relevance_csv(&globals.out.join("relevance.csv"), &table)?;
    write_json(&globals.out.join("attribution.json"), &attribution)?;
    attribution.write_csv(create(&globals.out.join("attribution.csv"))?)?;

    let lag0: Vec<[f64; N_DESCRIPTORS]> = rows
        .iter()
        .map(|r| std::array::from_fn(|d| r.input[d]))
        .collect();
    match factor_correlations(&predicted, &lag0, &map) {
        Ok(c) => write_json(&globals.out.join("correlations.json"), &c)?,
        Err(e) => log::warn!("skipping rank correlations: {e}"),
    }

    println!(
        "{} at {month} (inputs dated {as_of}), {} stock(s)",
        attribution.scope,
        chosen.len()
    );
    for (g, p) in &attribution.per_factor {
        println!("  {:<9} {p:6.2}%", g.name());
    }
    Ok(())
}

fn write_relevance_csv(path: &Path, table: &[(String, RelevanceVector64)]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![
        "stock_id".to_string(),
        "predicted".into(),
        "bias_absorbed".into(),
    ];
    header.extend((0..INPUT_DIM).map(input_label));
    w.write_record(&header)?;
    for (scope, rv) in table {
        let mut rec = vec![
            scope.clone(),
            rv.predicted.to_string(),
            rv.bias_absorbed.to_string(),
        ];
        rec.extend(rv.per_input.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ReportSettings {
    /// `report.json` files written by `backtest`.
    pub reports: Vec<PathBuf>,
}

pub fn report(globals: &Globals, s: &ReportSettings) -> anyhow::Result<()> {
    if s.reports.is_empty() {
        return Err(usage("at least one report file is required"));
    }
    echo(globals, "report", s, Map::new())?;
    let reports = s
        .reports
        .iter()
        .map(|p| read_json::<BacktestReport>(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(create(&globals.out.join("summary.csv"))?);
    w.write_record(SUMMARY_HEADER)?;
    for r in &reports {
        w.write_record(r.summary_record())?;
        println!("{}", r.metric_row());
    }
    w.flush()?;
    Ok(())
}
