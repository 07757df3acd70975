//! Stock-by-month panel, its CSV form, and a synthetic generator with known ground truth.

use crate::error::{Error, Result};
use crate::factors::{standardize_cross_section, Descriptor, DescriptorVector, N_DESCRIPTORS};
use crate::month::Month;
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

/// Months needed before the first walk-forward target: 60 training sets, 12 months
/// of lags, and the month holding the prediction inputs.
pub const MIN_WALK_FORWARD_MONTHS: usize = 73;

/// One (month, stock) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: [Option<f64>; N_DESCRIPTORS],
    /// Return realized over the following month.
    pub fwd_return: Option<f64>,
}

/// Observations keyed by month, then stock id.
///
/// The realized return of month `t` is, by construction, the forward return
/// recorded at `t - 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelDataset {
    observations: BTreeMap<Month, BTreeMap<String, Observation>>,
    stocks: BTreeSet<String>,
    /// Whether descriptor values are cross-sectionally standardized.
    pub standardized: bool,
}

impl PanelDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, month: Month, stock: &str, obs: Observation) -> Result<()> {
        let row = self.observations.entry(month).or_default();
        if row.contains_key(stock) {
            return Err(Error::DuplicateRow {
                month,
                stock: stock.to_string(),
            });
        }
        row.insert(stock.to_string(), obs);
        self.stocks.insert(stock.to_string());
        Ok(())
    }

    pub fn get(&self, month: Month, stock: &str) -> Option<&Observation> {
        self.observations.get(&month)?.get(stock)
    }

    pub fn get_mut(&mut self, month: Month, stock: &str) -> Option<&mut Observation> {
        self.observations.get_mut(&month)?.get_mut(stock)
    }

    /// Months with at least one observation, increasing.
    pub fn months(&self) -> Vec<Month> {
        self.observations.keys().copied().collect()
    }

    pub fn first_month(&self) -> Option<Month> {
        self.observations.keys().next().copied()
    }

    pub fn last_month(&self) -> Option<Month> {
        self.observations.keys().next_back().copied()
    }

    pub fn stocks(&self) -> &BTreeSet<String> {
        &self.stocks
    }

    /// Stock ids observed at `month`, ascending.
    pub fn stocks_at(&self, month: Month) -> impl Iterator<Item = &str> {
        self.observations
            .get(&month)
            .into_iter()
            .flat_map(|row| row.keys().map(String::as_str))
    }

    pub fn cross_section(&self, month: Month) -> impl Iterator<Item = (&str, &Observation)> {
        self.observations
            .get(&month)
            .into_iter()
            .flat_map(|row| row.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn descriptors(&self, month: Month, stock: &str) -> Option<DescriptorVector> {
        self.get(month, stock).map(|o| DescriptorVector {
            as_of: month,
            values: o.values,
        })
    }

    /// Return realized during `month`: the forward return recorded one month earlier.
    pub fn realized_return(&self, month: Month, stock: &str) -> Option<f64> {
        self.get(month.offset(-1), stock)?.fwd_return
    }

    pub fn len(&self) -> usize {
        self.observations.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Calendar months missing between the first and last observed month.
    pub fn month_gaps(&self) -> Vec<Month> {
        let (Some(first), Some(last)) = (self.first_month(), self.last_month()) else {
            return Vec::new();
        };
        (0..=last.since(first))
            .map(|i| first.offset(i))
            .filter(|m| !self.observations.contains_key(m))
            .collect()
    }

    /// Copy with every month's cross-section winsorized, z-scored and zero-imputed.
    pub fn standardize(&self) -> Result<PanelDataset> {
        let mut out = self.clone();
        for (&month, row) in &self.observations {
            let slice: Vec<DescriptorVector> = row
                .values()
                .map(|o| DescriptorVector {
                    as_of: month,
                    values: o.values,
                })
                .collect();
            let std = standardize_cross_section(&slice)?;
            let target = out.observations.get_mut(&month).expect("same keys");
            for (obs, v) in target.values_mut().zip(std.vectors) {
                obs.values = v.values;
            }
        }
        out.standardized = true;
        Ok(out)
    }
}

fn header() -> Vec<String> {
    let mut h = vec!["date".to_string(), "stock_id".to_string()];
    h.extend(Descriptor::ALL.iter().map(|d| d.name().to_string()));
    h.push("fwd_return".to_string());
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the panel as CSV sorted by (date, stock_id); missing cells are empty.
pub fn write_panel<W: Write>(panel: &PanelDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for (month, row) in &panel.observations {
        for (stock, obs) in row {
            let mut rec = Vec::with_capacity(N_DESCRIPTORS + 3);
            rec.push(month.to_string());
            rec.push(stock.clone());
            rec.extend(obs.values.iter().map(|&v| cell(v)));
            rec.push(cell(obs.fwd_return));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_panel(panel: &PanelDataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_panel(panel, std::io::BufWriter::new(f))
}

/// Parses a panel CSV. Column order is free; the column set must match exactly.
pub fn read_panel<R: Read>(input: R) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let cols: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expected = header();
    let unexpected: Vec<&str> = cols
        .iter()
        .filter(|c| !expected.contains(c))
        .map(String::as_str)
        .collect();
    let missing: Vec<&str> = expected
        .iter()
        .filter(|c| !cols.contains(c))
        .map(String::as_str)
        .collect();
    if !unexpected.is_empty() || !missing.is_empty() || cols.len() != expected.len() {
        return Err(Error::SchemaMismatch {
            unexpected: unexpected.join(", "),
            missing: missing.join(", "),
        });
    }
    let pos = |name: &str| cols.iter().position(|c| c == name).expect("validated");
    let date_col = pos("date");
    let stock_col = pos("stock_id");
    let ret_col = pos("fwd_return");
    let desc_cols: Vec<usize> = Descriptor::ALL.iter().map(|d| pos(d.name())).collect();

    let mut panel = PanelDataset::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        let month: Month = rec[date_col]
            .parse()
            .map_err(|e: Error| parse_err(e.to_string()))?;
        let stock = rec[stock_col].trim();
        if stock.is_empty() {
            return Err(parse_err("empty stock_id".into()));
        }
        let num = |col: usize, name: &str| -> Result<Option<f64>> {
            let s = rec[col].trim();
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(format!("column {name}: cannot parse {s:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("column {name}: non-finite value {s:?}")));
            }
            Ok(Some(v))
        };
        let mut values = [None; N_DESCRIPTORS];
        for (d, &c) in Descriptor::ALL.iter().zip(&desc_cols) {
            values[d.index()] = num(c, d.name())?;
        }
        let fwd_return = num(ret_col, "fwd_return")?;
        panel.insert(month, stock, Observation { values, fwd_return })?;
    }
    Ok(panel)
}

/// Loads and validates a panel CSV, logging any calendar gaps.
pub fn load_panel(path: &Path) -> Result<PanelDataset> {
    let f = std::fs::File::open(path)?;
    let panel = read_panel(std::io::BufReader::new(f))?;
    let gaps = panel.month_gaps();
    if !gaps.is_empty() {
        warn!(
            "{}: {} month(s) missing, first {}",
            path.display(),
            gaps.len(),
            gaps[0]
        );
    }
    Ok(panel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruthKind {
    Linear,
    Nonlinear,
}

/// The return-generating function of a synthetic panel, over lag-0 standardized descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroundTruth {
    /// `intercept + sum(coefficient * descriptor)`.
    Linear {
        intercept: f64,
        coefficients: BTreeMap<Descriptor, f64>,
    },
    /// `c_value * tanh(2 * value) + c_interaction * momentum * quality - c_risk * risk^2`.
    Nonlinear {
        c_value: f64,
        c_interaction: f64,
        c_risk: f64,
        value: Descriptor,
        momentum: Descriptor,
        quality: Descriptor,
        risk: Descriptor,
    },
}

impl GroundTruth {
    pub fn for_kind(kind: GroundTruthKind) -> Self {
        match kind {
            GroundTruthKind::Linear => GroundTruth::Linear {
                intercept: 0.005,
                coefficients: BTreeMap::from([
                    (Descriptor::Vol60, -0.01),
                    (Descriptor::Roe, 0.02),
                    (Descriptor::Mom12_1, 0.01),
                    (Descriptor::Pbr, 0.015),
                    (Descriptor::Cap, -0.005),
                ]),
            },
            GroundTruthKind::Nonlinear => GroundTruth::Nonlinear {
                c_value: 0.04,
                c_interaction: 0.04,
                c_risk: 0.02,
                value: Descriptor::Pbr,
                momentum: Descriptor::Mom12_1,
                quality: Descriptor::Roe,
                risk: Descriptor::Vol60,
            },
        }
    }

    pub fn kind(&self) -> GroundTruthKind {
        match self {
            GroundTruth::Linear { .. } => GroundTruthKind::Linear,
            GroundTruth::Nonlinear { .. } => GroundTruthKind::Nonlinear,
        }
    }

    pub fn evaluate(&self, x: &[f64; N_DESCRIPTORS]) -> f64 {
        match self {
            GroundTruth::Linear {
                intercept,
                coefficients,
            } => {
                intercept
                    + coefficients
                        .iter()
                        .map(|(d, c)| c * x[d.index()])
                        .sum::<f64>()
            }
            GroundTruth::Nonlinear {
                c_value,
                c_interaction,
                c_risk,
                value,
                momentum,
                quality,
                risk,
            } => {
                let r = x[risk.index()];
                c_value * (2.0 * x[value.index()]).tanh()
                    + c_interaction * x[momentum.index()] * x[quality.index()]
                    - c_risk * r * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_stocks: usize,
    pub n_months: usize,
    pub ground_truth: GroundTruthKind,
    pub noise_sigma: f64,
    pub seed: u64,
    pub start_month: Month,
    /// AR(1) coefficient of each raw descriptor process.
    pub persistence: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_stocks: 500,
            n_months: 120,
            ground_truth: GroundTruthKind::Nonlinear,
            noise_sigma: 0.05,
            seed: 0,
            start_month: Month::new(2000, 1).expect("valid month"),
            persistence: 0.9,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_stocks < 2 {
            return bad(format!("n_stocks must be >= 2, got {}", self.n_stocks));
        }
        if self.n_months < MIN_WALK_FORWARD_MONTHS {
            return bad(format!(
                "n_months must be >= {MIN_WALK_FORWARD_MONTHS} for walk-forward use, got {}",
                self.n_months
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.persistence.abs() < 1.0) {
            return bad(format!(
                "persistence must lie in (-1, 1), got {}",
                self.persistence
            ));
        }
        Ok(())
    }
}

/// A generated panel together with the function that produced its returns.
#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: PanelDataset,
    pub truth: GroundTruth,
    pub spec: SynthSpec,
}

/// Stock ids `S0000`, `S0001`, ... so lexical order matches numeric order.
pub fn synthetic_stock_id(i: usize) -> String {
    format!("S{i:04}")
}

/// Generates AR(1) descriptors per stock, standardizes each month, and sets
/// `fwd_return = truth(lag-0 descriptors) + noise_sigma * N(0, 1)`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticPanel> {
    spec.validate()?;
    let truth = GroundTruth::for_kind(spec.ground_truth);
    let mut desc_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);

    let rho = spec.persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let ids: Vec<String> = (0..spec.n_stocks).map(synthetic_stock_id).collect();
    let mut state: Vec<[f64; N_DESCRIPTORS]> = (0..spec.n_stocks)
        .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut desc_rng)))
        .collect();

    let mut panel = PanelDataset::new();
    for t in 0..spec.n_months {
        let month = spec.start_month.offset(t as i32);
        if t > 0 {
            for s in state.iter_mut() {
                for v in s.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut desc_rng);
                    *v = rho * *v + innov * e;
                }
            }
        }
        let slice: Vec<DescriptorVector> = state
            .iter()
            .map(|s| DescriptorVector {
                as_of: month,
                values: s.map(Some),
            })
            .collect();
        let std = standardize_cross_section(&slice)?;
        for (id, v) in ids.iter().zip(&std.vectors) {
            let x = v.complete().expect("standardized slice is complete");
            let noise: f64 = StandardNormal.sample(&mut noise_rng);
            let fwd = truth.evaluate(&x) + spec.noise_sigma * noise;
            panel.insert(
                month,
                id,
                Observation {
                    values: v.values,
                    fwd_return: Some(fwd),
                },
            )?;
        }
    }
    panel.standardized = true;
    Ok(SyntheticPanel {
        panel,
        truth,
        spec: spec.clone(),
    })
}
