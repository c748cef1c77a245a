//! Wilcoxon signed-rank test for paired samples.

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest effective sample size for which the automatic method is exact.
pub const EXACT_MAX_N: usize = 25;

/// How zero differences are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroPolicy {
    /// Drop zeros, then rank.
    #[default]
    Discard,
    /// Rank with zeros included, then drop the zeros' ranks.
    Pratt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    /// Exact up to [`EXACT_MAX_N`] effective pairs, normal beyond.
    #[default]
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonOptions {
    pub zero_policy: ZeroPolicy,
    pub alpha: f64,
    pub method: MethodChoice,
}

impl Default for WilcoxonOptions {
    fn default() -> Self {
        WilcoxonOptions {
            zero_policy: ZeroPolicy::Discard,
            alpha: 0.05,
            method: MethodChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub w_statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
    pub zero_policy: ZeroPolicy,
    pub alpha: f64,
    pub significant: bool,
    /// Set when every difference is zero; the p-value is then 1.
    pub degenerate: bool,
}

/// Midranks (1-based) of `values`, doubled so that ties stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, times two.
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test of `x − y`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], opts: &WilcoxonOptions) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::validation("paired samples are empty"));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("differences must be finite"));
    }

    // (doubled rank, sign) of each nonzero difference.
    let signed: Vec<(u64, bool)> = match opts.zero_policy {
        ZeroPolicy::Discard => {
            let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
            let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
            doubled_midranks(&abs).into_iter().zip(nz.iter().map(|&v| v > 0.0)).collect()
        }
        ZeroPolicy::Pratt => {
            let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
            doubled_midranks(&abs)
                .into_iter()
                .zip(&d)
                .filter(|(_, &v)| v != 0.0)
                .map(|(r, &v)| (r, v > 0.0))
                .collect()
        }
    };
    let n = signed.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method: WilcoxonMethod::Exact,
            zero_policy: opts.zero_policy,
            alpha: opts.alpha,
            significant: false,
            degenerate: true,
        });
    }

    let plus2: u64 = signed.iter().filter(|s| s.1).map(|s| s.0).sum();
    let minus2: u64 = signed.iter().filter(|s| !s.1).map(|s| s.0).sum();
    let w2 = plus2.min(minus2);

    let method = match opts.method {
        MethodChoice::Auto if n <= EXACT_MAX_N => WilcoxonMethod::Exact,
        MethodChoice::Auto => WilcoxonMethod::NormalApprox,
        MethodChoice::Exact => WilcoxonMethod::Exact,
        MethodChoice::NormalApprox => WilcoxonMethod::NormalApprox,
    };
    let ranks: Vec<u64> = signed.iter().map(|s| s.0).collect();
    let p_value = match method {
        WilcoxonMethod::Exact => exact_p(&ranks, w2)?,
        WilcoxonMethod::NormalApprox => {
            if n < 5 {
                return Err(Error::validation(format!(
                    "normal approximation needs at least 5 nonzero differences, got {n}"
                )));
            }
            normal_p(&ranks, w2)
        }
    };
    Ok(WilcoxonResult {
        w_statistic: w2 as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        p_value,
        n_effective: n,
        method,
        zero_policy: opts.zero_policy,
        alpha: opts.alpha,
        significant: p_value < opts.alpha,
        degenerate: false,
    })
}

/// `2·P(W+ ≤ w)` over all `2^n` equally likely sign assignments, counted by
/// dynamic programming over the (doubled) rank sums.
fn exact_p(doubled_ranks: &[u64], w2: u64) -> Result<f64> {
    let n = doubled_ranks.len();
    if n > 60 {
        return Err(Error::validation(format!("exact enumeration limited to 60 pairs, got {n}")));
    }
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let at_or_below: u64 = counts[..=w2 as usize].iter().sum();
    let p = 2.0 * at_or_below as f64 / (n as f64).exp2();
    Ok(p.min(1.0))
}

/// Normal approximation with tie-aware variance and continuity correction.
fn normal_p(doubled_ranks: &[u64], w2: u64) -> f64 {
    let mean: f64 = doubled_ranks.iter().map(|&r| r as f64 / 2.0).sum::<f64>() / 2.0;
    let var: f64 = doubled_ranks
        .iter()
        .map(|&r| (r as f64 / 2.0).powi(2))
        .sum::<f64>()
        / 4.0;
    let w = w2 as f64 / 2.0;
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}
