//! Layer-wise relevance propagation for [`Network`] predictions.
//!
//! Relevance starts at the output as the raw prediction and is pushed down one
//! layer at a time. Neuron `j` in the upper layer sends input `i` the message
//! `z_ij = w_ji * a_i`, normalized by `d_j = sum_k z_kj + b_j`:
//!
//! ```text
//! R_i = sum_j z_ij / (d_j + eps * sign(d_j)) * R_j
//! ```
//!
//! The share of `R_j` not passed down (the bias term plus whatever the stabilizer
//! `eps` swallows) is booked as a leak, so `sum(lower) + leak == sum(upper)` holds
//! at every layer. Relevance may be negative.

use crate::error::{Error, Result};
use crate::net::{ForwardTrace, Network};
use crate::scalar::Scalar;
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub const DEFAULT_STABILIZER: f64 = 1e-9;

/// Relevance scores of one layer's neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LayerRelevance<F> {
    pub scores: Vec<F>,
}

impl<F: Scalar> LayerRelevance<F> {
    pub fn total(&self) -> F {
        self.scores.iter().copied().sum()
    }
}

/// Per-input decomposition of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RelevanceVector<F> {
    pub per_input: Vec<F>,
    pub predicted: F,
    pub bias_absorbed: F,
}

impl<F: Scalar> RelevanceVector<F> {
    /// `sum(per_input) + bias_absorbed - predicted`; zero up to rounding.
    pub fn conservation_gap(&self) -> F {
        self.per_input.iter().copied().sum::<F>() + self.bias_absorbed - self.predicted
    }
}

/// Relevance at every layer, bottom (input) first, plus the per-layer leaks.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTrace<F> {
    /// `layers[0]` is the input layer, `layers.last()` the output layer.
    pub layers: Vec<LayerRelevance<F>>,
    /// `leaks[l]` is the relevance absorbed while crossing weight layer `l`.
    pub leaks: Vec<F>,
}

/// Redistributes `upper` relevance onto the inputs of one affine layer.
///
/// `weights` is `fan_out x fan_in`. Returns the lower relevance and the bias leak.
/// With `stabilizer == 0`, a neuron whose denominator is exactly zero while
/// carrying non-zero relevance is an error.
pub fn propagate_layer<F: Scalar>(
    weights: ArrayView2<F>,
    bias: ArrayView1<F>,
    lower_activations: ArrayView1<F>,
    upper: &LayerRelevance<F>,
    stabilizer: F,
) -> Result<(LayerRelevance<F>, F)> {
    let (fan_out, fan_in) = weights.dim();
    let check = |context, expected, actual| {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    };
    check(
        "propagate_layer: activations",
        fan_in,
        lower_activations.len(),
    )?;
    check("propagate_layer: relevance", fan_out, upper.scores.len())?;
    check("propagate_layer: bias", fan_out, bias.len())?;
    if stabilizer < F::zero() || !stabilizer.is_finite() {
        return Err(Error::InvalidConfig(
            "stabilizer must be finite and >= 0".into(),
        ));
    }

    let mut lower = Array1::<F>::zeros(fan_in);
    let mut leak = F::zero();
    for (j, &r_j) in upper.scores.iter().enumerate() {
        if r_j == F::zero() {
            continue;
        }
        let row = weights.row(j);
        let d_j = row.dot(&lower_activations) + bias[j];
        let sign = if d_j < F::zero() { -F::one() } else { F::one() };
        let denom = d_j + stabilizer * sign;
        if denom == F::zero() {
            return Err(Error::ZeroDenominator {
                layer: 0,
                neuron: j,
            });
        }
        let scale = r_j / denom;
        let mut passed = F::zero();
        for (i, (&w, &a)) in row.iter().zip(lower_activations).enumerate() {
            let share = w * a * scale;
            lower[i] += share;
            passed += share;
        }
        leak += r_j - passed;
    }
    Ok((
        LayerRelevance {
            scores: lower.to_vec(),
        },
        leak,
    ))
}

/// Relevance at every layer for the prediction recorded in `trace`.
pub fn relevance_trace<F: Scalar>(
    net: &Network<F>,
    trace: &ForwardTrace<F>,
    stabilizer: F,
) -> Result<RelevanceTrace<F>> {
    let n = net.layers().len();
    if trace.activations.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            context: "relevance: trace depth",
            expected: n + 1,
            actual: trace.activations.len(),
        });
    }
    let mut layers = vec![LayerRelevance { scores: Vec::new() }; n + 1];
    let mut leaks = vec![F::zero(); n];
    layers[n] = LayerRelevance {
        scores: trace.output_vector().to_vec(),
    };
    for l in (0..n).rev() {
        let layer = &net.layers()[l];
        let (lower, leak) = propagate_layer(
            layer.weights.view(),
            layer.bias.view(),
            trace.activations[l].view(),
            &layers[l + 1],
            stabilizer,
        )
        .map_err(|e| match e {
            Error::ZeroDenominator { neuron, .. } => Error::ZeroDenominator { layer: l, neuron },
            other => other,
        })?;
        layers[l] = lower;
        leaks[l] = leak;
    }
    Ok(RelevanceTrace { layers, leaks })
}

/// Decomposes the prediction in `trace` into per-input relevance.
pub fn relevance<F: Scalar>(
    net: &Network<F>,
    trace: &ForwardTrace<F>,
    stabilizer: F,
) -> Result<RelevanceVector<F>> {
    let rt = relevance_trace(net, trace, stabilizer)?;
    let predicted = trace.output_vector().iter().copied().sum();
    Ok(RelevanceVector {
        per_input: rt.layers[0].scores.clone(),
        predicted,
        bias_absorbed: rt.leaks.iter().copied().sum(),
    })
}

/// Forward pass plus [`relevance`] with the default stabilizer.
pub fn explain<F: Scalar>(net: &Network<F>, x: &[F]) -> Result<RelevanceVector<F>> {
    let trace = net.forward(x)?;
    relevance(net, &trace, F::of(DEFAULT_STABILIZER))
}
