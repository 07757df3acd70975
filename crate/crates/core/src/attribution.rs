//! Factor-level views of relevance scores and rank correlations with predictions.

use crate::error::{Error, Result};
use crate::factors::{Descriptor, FactorGroup, FactorMap, INPUT_DIM, N_DESCRIPTORS};
use crate::lrp::RelevanceVector;
use crate::scalar::Scalar;
use crate::stats;
use log::warn;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Share of absolute relevance per factor, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FactorAttribution<F = f64> {
    /// A stock id, or e.g. `portfolio:Q1`.
    pub scope: String,
    pub per_factor: BTreeMap<FactorGroup, F>,
}

impl<F: Scalar> FactorAttribution<F> {
    pub fn get(&self, g: FactorGroup) -> F {
        self.per_factor.get(&g).copied().unwrap_or_else(F::zero)
    }

    pub fn total(&self) -> F {
        self.per_factor.values().copied().sum()
    }

    /// Plot-ready `factor,percentage` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["factor", "percentage"])?;
        for (g, p) in &self.per_factor {
            w.write_record([g.name().to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sums `|relevance|` over every (descriptor, lag) cell of each factor and
/// normalizes to percentages.
pub fn aggregate_stock<F: Scalar>(
    relevance: &RelevanceVector<F>,
    factor_map: &FactorMap,
    scope: &str,
) -> Result<FactorAttribution<F>> {
    if relevance.per_input.len() != INPUT_DIM {
        return Err(Error::DimensionMismatch {
            context: "aggregate_stock",
            expected: INPUT_DIM,
            actual: relevance.per_input.len(),
        });
    }
    let mut mass = [F::zero(); 5];
    for (i, r) in relevance.per_input.iter().enumerate() {
        mass[factor_map.factor_of_input(i).index()] += r.abs();
    }
    let total: F = mass.iter().copied().sum();
    if !(total > F::zero()) || !total.is_finite() {
        return Err(Error::DegenerateTotal);
    }
    let hundred = F::of(100.0);
    let per_factor = FactorGroup::ALL
        .iter()
        .map(|&g| (g, hundred * mass[g.index()] / total))
        .collect();
    Ok(FactorAttribution {
        scope: scope.to_string(),
        per_factor,
    })
}

/// Element-wise mean of relevance vectors (prediction and bias share included).
pub fn mean_relevance<F: Scalar>(relevances: &[RelevanceVector<F>]) -> Result<RelevanceVector<F>> {
    let first = relevances
        .first()
        .ok_or(Error::Empty("aggregate_portfolio"))?;
    let dim = first.per_input.len();
    let mut per_input = vec![F::zero(); dim];
    let (mut predicted, mut bias) = (F::zero(), F::zero());
    for r in relevances {
        if r.per_input.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "aggregate_portfolio",
                expected: dim,
                actual: r.per_input.len(),
            });
        }
        for (acc, &v) in per_input.iter_mut().zip(&r.per_input) {
            *acc += v;
        }
        predicted += r.predicted;
        bias += r.bias_absorbed;
    }
    let n = F::of_usize(relevances.len());
    per_input.iter_mut().for_each(|v| *v /= n);
    Ok(RelevanceVector {
        per_input,
        predicted: predicted / n,
        bias_absorbed: bias / n,
    })
}

/// Attribution of a portfolio: mean relevance over its stocks, then [`aggregate_stock`].
pub fn aggregate_portfolio<F: Scalar>(
    relevances: &[RelevanceVector<F>],
    factor_map: &FactorMap,
    scope: &str,
) -> Result<FactorAttribution<F>> {
    aggregate_stock(&mean_relevance(relevances)?, factor_map, scope)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub spearman: f64,
    pub kendall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCorrelation {
    /// Plain mean over the factor's non-constant descriptors.
    pub per_factor: BTreeMap<FactorGroup, RankCorrelation>,
    pub per_descriptor: BTreeMap<Descriptor, RankCorrelation>,
    /// Descriptors constant across the stocks, left out of the factor means.
    pub excluded: Vec<Descriptor>,
}

/// Spearman and Kendall tau-b between each descriptor and the predictions,
/// averaged per factor.
pub fn factor_correlations(
    predictions: &[f64],
    descriptors: &[[f64; N_DESCRIPTORS]],
    factor_map: &FactorMap,
) -> Result<FactorCorrelation> {
    let n = predictions.len();
    if descriptors.len() != n {
        return Err(Error::DimensionMismatch {
            context: "factor_correlations",
            expected: n,
            actual: descriptors.len(),
        });
    }
    if n < 3 {
        return Err(Error::TooFewStocks {
            context: "factor_correlations",
            required: 3,
            actual: n,
        });
    }
    let mut per_descriptor = BTreeMap::new();
    let mut excluded = Vec::new();
    for d in Descriptor::ALL {
        let col: Vec<f64> = descriptors.iter().map(|row| row[d.index()]).collect();
        match (
            stats::spearman(&col, predictions),
            stats::kendall_tau_b(&col, predictions),
        ) {
            (Some(spearman), Some(kendall)) => {
                per_descriptor.insert(d, RankCorrelation { spearman, kendall });
            }
            _ => {
                warn!("descriptor {d} or the predictions are constant; excluded");
                excluded.push(d);
            }
        }
    }
    if per_descriptor.is_empty() {
        return Err(Error::DegenerateColumn("predictions"));
    }
    let mut per_factor = BTreeMap::new();
    for g in FactorGroup::ALL {
        let members: Vec<&RankCorrelation> = factor_map
            .members(g)
            .filter_map(|d| per_descriptor.get(&d))
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        per_factor.insert(
            g,
            RankCorrelation {
                spearman: members.iter().map(|c| c.spearman).sum::<f64>() / k,
                kendall: members.iter().map(|c| c.kendall).sum::<f64>() / k,
            },
        );
    }
    Ok(FactorCorrelation {
        per_factor,
        per_descriptor,
        excluded,
    })
}
