//! Factor descriptors, cross-sectional standardization, and 80-wide sample layout.

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::month::Month;
use crate::scalar::Scalar;
use crate::stats;
use serde::{Deserialize, Serialize};
use std::fmt;

pub const N_DESCRIPTORS: usize = 16;
/// Lags, in months, of the descriptor blocks in a sample input, most recent first.
pub const LAGS: [i32; 5] = [0, 3, 6, 9, 12];
pub const INPUT_DIM: usize = N_DESCRIPTORS * LAGS.len();

/// Trailing window for the volatility, beta, skew and long-horizon momentum descriptors.
pub const LONG_WINDOW: usize = 60;
/// Trailing window for the illiquidity average.
pub const ILLIQ_WINDOW: usize = 12;

/// Winsorization half-width in MAD-scaled units.
pub const WINSOR_LIMIT: f64 = 3.0;
/// Consistency constant turning a MAD into a normal-equivalent standard deviation.
const MAD_SCALE: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Descriptor {
    #[serde(rename = "60VOL")]
    Vol60,
    #[serde(rename = "BETA")]
    Beta,
    #[serde(rename = "SKEW")]
    Skew,
    #[serde(rename = "ROE")]
    Roe,
    #[serde(rename = "ROA")]
    Roa,
    #[serde(rename = "ACCRUALS")]
    Accruals,
    #[serde(rename = "LEVERAGE")]
    Leverage,
    #[serde(rename = "12-1MOM")]
    Mom12_1,
    #[serde(rename = "1MOM")]
    Mom1,
    #[serde(rename = "60MOM")]
    Mom60,
    #[serde(rename = "PSR")]
    Psr,
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "PBR")]
    Pbr,
    #[serde(rename = "PCFR")]
    Pcfr,
    #[serde(rename = "CAP")]
    Cap,
    #[serde(rename = "ILLIQ")]
    Illiq,
}

impl Descriptor {
    pub const ALL: [Descriptor; N_DESCRIPTORS] = [
        Descriptor::Vol60,
        Descriptor::Beta,
        Descriptor::Skew,
        Descriptor::Roe,
        Descriptor::Roa,
        Descriptor::Accruals,
        Descriptor::Leverage,
        Descriptor::Mom12_1,
        Descriptor::Mom1,
        Descriptor::Mom60,
        Descriptor::Psr,
        Descriptor::Per,
        Descriptor::Pbr,
        Descriptor::Pcfr,
        Descriptor::Cap,
        Descriptor::Illiq,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Descriptor::Vol60 => "60VOL",
            Descriptor::Beta => "BETA",
            Descriptor::Skew => "SKEW",
            Descriptor::Roe => "ROE",
            Descriptor::Roa => "ROA",
            Descriptor::Accruals => "ACCRUALS",
            Descriptor::Leverage => "LEVERAGE",
            Descriptor::Mom12_1 => "12-1MOM",
            Descriptor::Mom1 => "1MOM",
            Descriptor::Mom60 => "60MOM",
            Descriptor::Psr => "PSR",
            Descriptor::Per => "PER",
            Descriptor::Pbr => "PBR",
            Descriptor::Pcfr => "PCFR",
            Descriptor::Cap => "CAP",
            Descriptor::Illiq => "ILLIQ",
        }
    }

    pub fn from_name(name: &str) -> Option<Descriptor> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FactorGroup {
    Risk,
    Quality,
    Momentum,
    Value,
    Size,
}

impl FactorGroup {
    pub const ALL: [FactorGroup; 5] = [
        FactorGroup::Risk,
        FactorGroup::Quality,
        FactorGroup::Momentum,
        FactorGroup::Value,
        FactorGroup::Size,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorGroup::Risk => "Risk",
            FactorGroup::Quality => "Quality",
            FactorGroup::Momentum => "Momentum",
            FactorGroup::Value => "Value",
            FactorGroup::Size => "Size",
        }
    }
}

impl fmt::Display for FactorGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Assignment of each descriptor to one factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorMap {
    groups: [FactorGroup; N_DESCRIPTORS],
}

impl Default for FactorMap {
    fn default() -> Self {
        use FactorGroup::*;
        Self {
            groups: [
                Risk, Risk, Risk, Quality, Quality, Quality, Quality, Momentum, Momentum, Momentum,
                Value, Value, Value, Value, Size, Size,
            ],
        }
    }
}

impl FactorMap {
    pub fn new(groups: [FactorGroup; N_DESCRIPTORS]) -> Self {
        Self { groups }
    }

    pub fn factor_of(&self, d: Descriptor) -> FactorGroup {
        self.groups[d.index()]
    }

    /// Factor of a position in the 80-wide sample input.
    pub fn factor_of_input(&self, input_index: usize) -> FactorGroup {
        self.groups[input_index % N_DESCRIPTORS]
    }

    pub fn members(&self, g: FactorGroup) -> impl Iterator<Item = Descriptor> + '_ {
        Descriptor::ALL
            .into_iter()
            .filter(move |d| self.groups[d.index()] == g)
    }

    pub fn group_sizes(&self) -> [usize; 5] {
        let mut sizes = [0; 5];
        for g in self.groups {
            sizes[g.index()] += 1;
        }
        sizes
    }
}

/// Fundamentals known at the end of one month.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Fundamentals {
    pub net_income: Option<f64>,
    pub net_assets: Option<f64>,
    pub operating_profit: Option<f64>,
    pub total_assets: Option<f64>,
    pub operating_cashflow: Option<f64>,
    pub total_liabilities: Option<f64>,
    pub sales: Option<f64>,
    pub market_value: Option<f64>,
}

/// Raw monthly inputs for one stock on a contiguous month index.
///
/// `monthly_returns[t]` is the simple return realized during `months[t]`;
/// `fundamentals[t]` holds the latest values known at the end of that month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStockSeries {
    pub stock_id: String,
    pub months: Vec<Month>,
    pub monthly_returns: Vec<f64>,
    pub market_returns: Vec<f64>,
    pub trading_volume: Vec<f64>,
    pub fundamentals: Vec<Fundamentals>,
}

impl RawStockSeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.months.len();
        for (name, len) in [
            ("monthly_returns", self.monthly_returns.len()),
            ("market_returns", self.market_returns.len()),
            ("trading_volume", self.trading_volume.len()),
            ("fundamentals", self.fundamentals.len()),
        ] {
            if len != n {
                return Err(Error::InvalidConfig(format!(
                    "{}: {name} has {len} entries, index has {n}",
                    self.stock_id
                )));
            }
        }
        if self.months.windows(2).any(|w| w[1] != w[0].offset(1)) {
            return Err(Error::InvalidConfig(format!(
                "{}: month index is not contiguous",
                self.stock_id
            )));
        }
        Ok(())
    }

    fn position(&self, as_of: Month) -> Result<usize> {
        let first = *self.months.first().ok_or(Error::UnknownMonth(as_of))?;
        let t = as_of.since(first);
        if t < 0 || t as usize >= self.months.len() {
            return Err(Error::UnknownMonth(as_of));
        }
        Ok(t as usize)
    }
}

/// The 16 descriptors of one stock at one month; `None` marks a missing value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVector {
    pub as_of: Month,
    pub values: [Option<f64>; N_DESCRIPTORS],
}

impl DescriptorVector {
    pub fn get(&self, d: Descriptor) -> Option<f64> {
        self.values[d.index()]
    }

    /// All values, if none is missing.
    pub fn complete(&self) -> Option<[f64; N_DESCRIPTORS]> {
        let mut out = [0.0; N_DESCRIPTORS];
        for (o, v) in out.iter_mut().zip(&self.values) {
            *o = (*v)?;
        }
        Some(out)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    let (n, d) = (num?, den?);
    if d == 0.0 {
        return None;
    }
    finite(n / d)
}

/// Trailing window of `len` values ending at index `t` inclusive, if complete and finite.
fn trailing(xs: &[f64], t: usize, len: usize) -> Option<&[f64]> {
    if t + 1 < len {
        return None;
    }
    let w = &xs[t + 1 - len..=t];
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// One descriptor for `series` as of the end of `as_of`, using no later data.
///
/// `Ok(None)` means the value is missing: incomplete window, zero denominator,
/// zero variance, or a missing input.
pub fn compute_descriptor(
    kind: Descriptor,
    series: &RawStockSeries,
    as_of: Month,
) -> Result<Option<f64>> {
    series.validate()?;
    let t = series.position(as_of)?;
    let r = &series.monthly_returns;
    let f = &series.fundamentals[t];
    let value = match kind {
        Descriptor::Vol60 => trailing(r, t, LONG_WINDOW).and_then(stats::sample_std),
        Descriptor::Beta => {
            let y = trailing(r, t, LONG_WINDOW);
            let x = trailing(&series.market_returns, t, LONG_WINDOW);
            y.zip(x).and_then(|(y, x)| stats::ols_slope(y, x))
        }
        Descriptor::Skew => trailing(r, t, LONG_WINDOW).and_then(stats::skewness),
        Descriptor::Roe => ratio(f.net_income, f.net_assets),
        Descriptor::Roa => ratio(f.operating_profit, f.total_assets),
        Descriptor::Accruals => f
            .operating_cashflow
            .zip(f.operating_profit)
            .and_then(|(c, p)| finite(c - p)),
        Descriptor::Leverage => ratio(f.total_liabilities, f.total_assets),
        // months -12..-2: the eleven months before the most recent one
        Descriptor::Mom12_1 => {
            if t == 0 {
                None
            } else {
                trailing(r, t - 1, 11).map(stats::compound_return)
            }
        }
        Descriptor::Mom1 => trailing(r, t, 1).map(|w| w[0]),
        Descriptor::Mom60 => trailing(r, t, LONG_WINDOW).map(stats::compound_return),
        Descriptor::Psr => ratio(f.sales, f.market_value),
        Descriptor::Per => ratio(f.net_income, f.market_value),
        Descriptor::Pbr => ratio(f.net_assets, f.market_value),
        Descriptor::Pcfr => ratio(f.operating_cashflow, f.market_value),
        Descriptor::Cap => f
            .market_value
            .filter(|&mv| mv > 0.0)
            .and_then(|mv| finite(mv.ln())),
        Descriptor::Illiq => {
            let rw = trailing(r, t, ILLIQ_WINDOW);
            let vw = trailing(&series.trading_volume, t, ILLIQ_WINDOW);
            match rw.zip(vw) {
                Some((rw, vw)) if vw.iter().all(|&v| v > 0.0) => {
                    let ratios: Vec<f64> = rw.iter().zip(vw).map(|(r, v)| r.abs() / v).collect();
                    stats::mean(&ratios).and_then(finite)
                }
                _ => None,
            }
        }
    };
    Ok(value.and_then(finite))
}

pub fn compute_descriptors(series: &RawStockSeries, as_of: Month) -> Result<DescriptorVector> {
    let mut values = [None; N_DESCRIPTORS];
    for d in Descriptor::ALL {
        values[d.index()] = compute_descriptor(d, series, as_of)?;
    }
    Ok(DescriptorVector { as_of, values })
}

/// Output of [`standardize_cross_section`].
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedSlice {
    /// Same order as the input; every value present.
    pub vectors: Vec<DescriptorVector>,
    /// `imputed[s][d]` is true where a missing input was filled with 0.
    pub imputed: Vec<[bool; N_DESCRIPTORS]>,
}

/// Winsorizes each descriptor at `median ± 3 * 1.4826 * MAD`, z-scores it across
/// the slice (sample standard deviation), then fills missing cells with 0.
///
/// Winsorization is skipped for a column whose MAD is zero.
pub fn standardize_cross_section(slice: &[DescriptorVector]) -> Result<StandardizedSlice> {
    let mut vectors = slice.to_vec();
    let mut imputed = vec![[false; N_DESCRIPTORS]; slice.len()];
    for d in Descriptor::ALL {
        let col = d.index();
        let present: Vec<(usize, f64)> = slice
            .iter()
            .enumerate()
            .filter_map(|(s, v)| v.values[col].filter(|x| x.is_finite()).map(|x| (s, x)))
            .collect();
        if present.len() < 2 {
            return Err(Error::TooFewValues {
                descriptor: d.name(),
                count: present.len(),
            });
        }
        let raw: Vec<f64> = present.iter().map(|&(_, x)| x).collect();
        let clipped = winsorize(&raw);
        let mean = stats::mean(&clipped).expect("non-empty");
        let sd = stats::sample_std(&clipped).expect("at least two values");
        if !(sd > 0.0) {
            return Err(Error::DegenerateColumn(d.name()));
        }
        for v in vectors.iter_mut() {
            v.values[col] = None;
        }
        for (&(s, _), x) in present.iter().zip(&clipped) {
            vectors[s].values[col] = Some((x - mean) / sd);
        }
        for (s, v) in vectors.iter_mut().enumerate() {
            if v.values[col].is_none() {
                v.values[col] = Some(0.0);
                imputed[s][col] = true;
            }
        }
    }
    Ok(StandardizedSlice { vectors, imputed })
}

fn winsorize(xs: &[f64]) -> Vec<f64> {
    let med = stats::median(xs).expect("non-empty");
    let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
    let mad = stats::median(&dev).expect("non-empty");
    if mad == 0.0 {
        return xs.to_vec();
    }
    let half = WINSOR_LIMIT * MAD_SCALE * mad;
    xs.iter().map(|x| x.clamp(med - half, med + half)).collect()
}

/// One training pair: five stacked descriptor blocks and the next month's return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Sample<F = f64> {
    pub stock_id: String,
    pub as_of: Month,
    pub input: Vec<F>,
    pub target: F,
}

impl<F: Scalar> Sample<F> {
    /// A sample with no stock or date attached; handy for plain regression data.
    pub fn from_xy(input: Vec<F>, target: F) -> Self {
        Self {
            stock_id: String::new(),
            as_of: Month::new(1970, 1).expect("valid month"),
            input,
            target,
        }
    }
}

/// A sample input with no target attached (prediction time).
#[derive(Debug, Clone, PartialEq)]
pub struct InputRow {
    pub stock_id: String,
    pub as_of: Month,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SkipReason {
    IncompleteHistory,
    MissingTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub stock_id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputSet {
    pub rows: Vec<InputRow>,
    pub skipped: Vec<Skipped>,
}

/// Stacks the descriptor blocks at lags 0, 3, 6, 9, 12; `None` if any cell is missing.
pub fn stack_lags(panel: &PanelDataset, stock: &str, as_of: Month) -> Option<Vec<f64>> {
    let mut input = Vec::with_capacity(INPUT_DIM);
    for lag in LAGS {
        let obs = panel.get(as_of.offset(-lag), stock)?;
        for v in obs.values {
            input.push(v.filter(|x| x.is_finite())?);
        }
    }
    Some(input)
}

/// Inputs for every stock present at `as_of` with complete lag history.
pub fn build_inputs(panel: &PanelDataset, as_of: Month) -> InputSet {
    let mut set = InputSet::default();
    for stock in panel.stocks_at(as_of) {
        match stack_lags(panel, stock, as_of) {
            Some(input) => set.rows.push(InputRow {
                stock_id: stock.to_string(),
                as_of,
                input,
            }),
            None => set.skipped.push(Skipped {
                stock_id: stock.to_string(),
                reason: SkipReason::IncompleteHistory,
            }),
        }
    }
    set
}

/// Training samples at `as_of`: complete lag history plus a known forward return.
pub fn build_samples(panel: &PanelDataset, as_of: Month) -> SampleSet {
    let inputs = build_inputs(panel, as_of);
    let mut set = SampleSet {
        samples: Vec::with_capacity(inputs.rows.len()),
        skipped: inputs.skipped,
    };
    for row in inputs.rows {
        match panel
            .get(as_of, &row.stock_id)
            .and_then(|o| o.fwd_return)
            .filter(|r| r.is_finite())
        {
            Some(target) => set.samples.push(Sample {
                stock_id: row.stock_id,
                as_of,
                input: row.input,
                target,
            }),
            None => set.skipped.push(Skipped {
                stock_id: row.stock_id,
                reason: SkipReason::MissingTarget,
            }),
        }
    }
    set
}

/// Splits an 80-wide input back into its five descriptor blocks (lag 0 first).
pub fn unpack_input(input: &[f64]) -> Result<[[f64; N_DESCRIPTORS]; 5]> {
    if input.len() != INPUT_DIM {
        return Err(Error::DimensionMismatch {
            context: "unpack_input",
            expected: INPUT_DIM,
            actual: input.len(),
        });
    }
    let mut blocks = [[0.0; N_DESCRIPTORS]; 5];
    for (b, chunk) in blocks.iter_mut().zip(input.chunks_exact(N_DESCRIPTORS)) {
        b.copy_from_slice(chunk);
    }
    Ok(blocks)
}

/// Column label of an input position, e.g. `ROE@lag3`.
pub fn input_label(index: usize) -> String {
    let d = Descriptor::ALL[index % N_DESCRIPTORS];
    format!("{}@lag{}", d.name(), LAGS[index / N_DESCRIPTORS])
}
