//! Independent reference implementations used by the integration and acceptance tests.
//!
//! Everything here is written with plain loops and textbook formulas so that it
//! shares no code path with the library under test.

#![allow(dead_code)]

use deepfactor::factors::{Fundamentals, RawStockSeries};
use deepfactor::net::{Activation, Layer, Network};
use deepfactor::Month;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_layers(rng: &mut ChaCha8Rng, widths: &[usize], with_bias: bool) -> Vec<Layer<f64>> {
    widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            Layer {
                weights: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    rng.random_range(-bound..bound)
                }),
                bias: if with_bias {
                    Array1::from_shape_simple_fn(fan_out, || rng.random_range(-0.5..0.5))
                } else {
                    Array1::zeros(fan_out)
                },
            }
        })
        .collect()
}

pub fn random_net(rng: &mut ChaCha8Rng, widths: &[usize], with_bias: bool) -> Network<f64> {
    Network::from_layers(random_layers(rng, widths, with_bias), Activation::Relu).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Activations of every layer, input first, by explicit loops.
pub fn oracle_forward(layers: &[Layer<f64>], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    for (l, layer) in layers.iter().enumerate() {
        let prev = &acts[l];
        let (rows, cols) = layer.weights.dim();
        let mut next = vec![0.0; rows];
        for j in 0..rows {
            let mut z = layer.bias[j];
            for i in 0..cols {
                z += layer.weights[[j, i]] * prev[i];
            }
            next[j] = if l + 1 < layers.len() { z.max(0.0) } else { z };
        }
        acts.push(next);
    }
    acts
}

pub fn oracle_output(layers: &[Layer<f64>], x: &[f64]) -> f64 {
    oracle_forward(layers, x).last().unwrap()[0]
}

/// Relevance of every layer (input first) and the per-layer leaks, computed by
/// summing individual messages `z_ij / (d_j + eps sign d_j) * R_j`.
pub fn oracle_lrp(layers: &[Layer<f64>], x: &[f64], eps: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let acts = oracle_forward(layers, x);
    let n = layers.len();
    let mut rel = vec![Vec::new(); n + 1];
    let mut leaks = vec![0.0; n];
    rel[n] = acts[n].clone();
    for l in (0..n).rev() {
        let w = &layers[l].weights;
        let b = &layers[l].bias;
        let a = &acts[l];
        let (rows, cols) = w.dim();
        let mut lower = vec![0.0; cols];
        let mut passed_total = 0.0;
        let mut upper_total = 0.0;
        for j in 0..rows {
            let r_j = rel[l + 1][j];
            upper_total += r_j;
            if r_j == 0.0 {
                continue;
            }
            let mut d = b[j];
            for i in 0..cols {
                d += w[[j, i]] * a[i];
            }
            let s = if d >= 0.0 { 1.0 } else { -1.0 };
            let denom = d + eps * s;
            for i in 0..cols {
                let msg = w[[j, i]] * a[i] / denom * r_j;
                lower[i] += msg;
                passed_total += msg;
            }
        }
        leaks[l] = upper_total - passed_total;
        rel[l] = lower;
    }
    (rel, leaks)
}

/// Central finite-difference gradient of `(f(x) - y)^2` with respect to every
/// weight and bias, laid out layer by layer as (weights row-major, bias).
pub fn fd_gradient(
    layers: &[Layer<f64>],
    x: &[f64],
    y: f64,
    h: f64,
) -> Vec<(Array2<f64>, Array1<f64>)> {
    let loss = |ls: &[Layer<f64>]| {
        let e = oracle_output(ls, x) - y;
        e * e
    };
    let mut work = layers.to_vec();
    let mut out = Vec::new();
    for l in 0..layers.len() {
        let (rows, cols) = layers[l].weights.dim();
        let mut gw = Array2::zeros((rows, cols));
        for j in 0..rows {
            for i in 0..cols {
                let orig = work[l].weights[[j, i]];
                work[l].weights[[j, i]] = orig + h;
                let up = loss(&work);
                work[l].weights[[j, i]] = orig - h;
                let down = loss(&work);
                work[l].weights[[j, i]] = orig;
                gw[[j, i]] = (up - down) / (2.0 * h);
            }
        }
        let mut gb = Array1::zeros(rows);
        for j in 0..rows {
            let orig = work[l].bias[j];
            work[l].bias[j] = orig + h;
            let up = loss(&work);
            work[l].bias[j] = orig - h;
            let down = loss(&work);
            work[l].bias[j] = orig;
            gb[j] = (up - down) / (2.0 * h);
        }
        out.push((gw, gb));
    }
    out
}

/// Smallest |pre-activation| over all hidden units, used to keep finite
/// differences away from ReLU kinks.
pub fn min_hidden_margin(layers: &[Layer<f64>], x: &[f64]) -> f64 {
    let acts = oracle_forward(layers, x);
    let mut margin = f64::INFINITY;
    for l in 0..layers.len() - 1 {
        let w = &layers[l].weights;
        for j in 0..w.nrows() {
            let mut z = layers[l].bias[j];
            for i in 0..w.ncols() {
                z += w[[j, i]] * acts[l][i];
            }
            margin = margin.min(z.abs());
        }
    }
    margin
}

/// Least squares with intercept via Householder QR on `[1 | X]`.
/// Returns `(intercept, coefficients)`.
pub fn qr_least_squares(x: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len();
    let p = x[0].len() + 1;
    // column-major copy of the design
    let mut a: Vec<Vec<f64>> = (0..p)
        .map(|c| {
            (0..n)
                .map(|r| if c == 0 { 1.0 } else { x[r][c - 1] })
                .collect()
        })
        .collect();
    let mut b = y.to_vec();
    for k in 0..p {
        let norm = (k..n).map(|r| a[k][r] * a[k][r]).sum::<f64>().sqrt();
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (0..n).map(|r| if r < k { 0.0 } else { a[k][r] }).collect();
        v[k] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        if vv == 0.0 {
            continue;
        }
        for col in a.iter_mut().skip(k) {
            let dot: f64 = (k..n).map(|r| v[r] * col[r]).sum();
            let f = 2.0 * dot / vv;
            for r in k..n {
                col[r] -= f * v[r];
            }
        }
        let dot: f64 = (k..n).map(|r| v[r] * b[r]).sum();
        let f = 2.0 * dot / vv;
        for r in k..n {
            b[r] -= f * v[r];
        }
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = b[k];
        for c in k + 1..p {
            s -= a[c][k] * beta[c];
        }
        beta[k] = s / a[k][k];
    }
    (beta[0], beta[1..].to_vec())
}

/// Kendall tau-b by enumerating every pair.
pub fn brute_kendall(x: &[f64], y: &[f64]) -> f64 {
    let (mut conc, mut disc, mut tie_x_only, mut tie_y_only) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tie_x_only += 1;
            } else if dy == 0.0 {
                tie_y_only += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let num = conc as f64 - disc as f64;
    let den = ((conc + disc + tie_y_only) * (conc + disc + tie_x_only)) as f64;
    num / den.sqrt()
}

/// Average ranks by counting, 1-based.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

// ---- descriptor oracles -------------------------------------------------

pub fn o_mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

pub fn o_sd(xs: &[f64]) -> f64 {
    let m = o_mean(xs);
    let mut s = 0.0;
    for x in xs {
        s += (x - m).powi(2);
    }
    (s / (xs.len() as f64 - 1.0)).sqrt()
}

/// `cov(y, x) / var(x)` from raw cross-products.
pub fn o_beta(y: &[f64], x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxy, mut sxx) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sx += x[i];
        sy += y[i];
        sxy += x[i] * y[i];
        sxx += x[i] * x[i];
    }
    (sxy - sx * sy / n) / (sxx - sx * sx / n)
}

/// `n / ((n-1)(n-2)) * sum(((x - mean) / s)^3)` with the sample standard deviation `s`.
pub fn o_skew(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = o_mean(xs);
    let s = o_sd(xs);
    let mut acc = 0.0;
    for x in xs {
        acc += ((x - m) / s).powi(3);
    }
    n / ((n - 1.0) * (n - 2.0)) * acc
}

pub fn o_compound(rs: &[f64]) -> f64 {
    let mut g = 1.0;
    for r in rs {
        g *= 1.0 + r;
    }
    g - 1.0
}

pub fn o_illiq(rs: &[f64], vol: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..rs.len() {
        s += rs[i].abs() / vol[i];
    }
    s / rs.len() as f64
}

/// A random raw series of `len` months starting 2000-01 with complete fundamentals.
pub fn random_series(rng: &mut ChaCha8Rng, len: usize) -> RawStockSeries {
    let start = Month::new(2000, 1).unwrap();
    let mut f = || Fundamentals {
        net_income: Some(rng.random_range(-5.0..20.0)),
        net_assets: Some(rng.random_range(10.0..200.0)),
        operating_profit: Some(rng.random_range(-5.0..30.0)),
        total_assets: Some(rng.random_range(50.0..500.0)),
        operating_cashflow: Some(rng.random_range(-10.0..40.0)),
        total_liabilities: Some(rng.random_range(0.0..300.0)),
        sales: Some(rng.random_range(10.0..900.0)),
        market_value: Some(rng.random_range(5.0..5000.0)),
    };
    let fundamentals = (0..len).map(|_| f()).collect();
    RawStockSeries {
        stock_id: "X".into(),
        months: (0..len as i32).map(|i| start.offset(i)).collect(),
        monthly_returns: (0..len).map(|_| rng.random_range(-0.2..0.25)).collect(),
        market_returns: (0..len).map(|_| rng.random_range(-0.1..0.12)).collect(),
        trading_volume: (0..len).map(|_| rng.random_range(1e3..1e7)).collect(),
        fundamentals,
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
