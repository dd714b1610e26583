//! Closed-form delay model for transport coding over a Kleinrock-type
//! channel.
//!
//! Per-packet delay is exponential with mean `t(x) = a / (1 - x)` where the
//! prefactor `a = λ / (μ c γ)` is fixed and `x` is the load seen by the
//! channel. An uncoded k-packet message waits for the maximum of `k` such
//! delays; a k-of-n coded message waits for the k-th smallest of `n`, but
//! the channel load rises from `ρ` to `ρ / R` with `R = k / n`.
//!
//! Every ratio reported here is independent of `γ`; absolute delays are not,
//! and are labelled as such by callers.

use thiserror::Error;

use crate::transport::CodeConfig;

/// Loads closer than this to a pole are treated as saturated.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

/// Default normalisation factor, in 1/s. Puts `a = ρ · 1 ms`.
pub const DEFAULT_GAMMA: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("parameter {name} must be {requirement}, got {value}")]
    Parameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("load {load} saturates the channel")]
    Saturated { load: f64 },
    #[error("coded load infeasible: rho={rho} >= R={rate}")]
    CodedInfeasible { rho: f64, rate: f64 },
    #[error("harmonic range invalid: lo={lo}, hi={hi}")]
    HarmonicRange { lo: usize, hi: usize },
    #[error("invalid code k={k}, n={n}")]
    Code { k: usize, n: usize },
    #[error("no feasible redundancy for rho={rho}, k={k}, n_max={n_max}")]
    NoFeasibleRedundancy { rho: f64, k: usize, n_max: usize },
}

fn positive(name: &'static str, value: f64) -> Result<f64, AnalyticsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(AnalyticsError::Parameter {
            name,
            requirement: "positive and finite",
            value,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticalParams {
    /// Packet arrival rate λ, packets/s. Zero is accepted as an idle channel.
    pub lambda: f64,
    /// Service parameter μ per capacity unit.
    pub mu: f64,
    /// Capacity c.
    pub c: f64,
    /// Normalisation γ, 1/s.
    pub gamma: f64,
}

impl AnalyticalParams {
    pub fn new(lambda: f64, mu: f64, c: f64, gamma: f64) -> Result<Self, AnalyticsError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(AnalyticsError::Parameter {
                name: "lambda",
                requirement: "non-negative and finite",
                value: lambda,
            });
        }
        Ok(AnalyticalParams {
            lambda,
            mu: positive("mu", mu)?,
            c: positive("c", c)?,
            gamma: positive("gamma", gamma)?,
        })
    }

    /// Parameters realising channel load `rho` on a 10^4 packets/s channel
    /// with the given `gamma`.
    pub fn at_load(rho: f64, gamma: f64) -> Result<Self, AnalyticsError> {
        let mu_c = 1e4;
        Self::new(rho * mu_c, mu_c, 1.0, gamma)
    }

    /// True when λ = 0: every delay is zero and gains are 0/0.
    pub fn is_idle(&self) -> bool {
        self.lambda == 0.0
    }

    /// a = λ / (μ c γ), seconds.
    pub fn prefactor(&self) -> f64 {
        self.lambda / (self.mu * self.c * self.gamma)
    }
}

/// ρ = λ / (μ c).
pub fn channel_load(params: &AnalyticalParams) -> f64 {
    params.lambda / (params.mu * params.c)
}

/// t(x) = a / (1 - x) with the fixed prefactor of `params`.
pub fn mean_packet_delay(params: &AnalyticalParams, load_arg: f64) -> Result<f64, AnalyticsError> {
    if load_arg.is_nan() || load_arg < 0.0 {
        return Err(AnalyticsError::Parameter {
            name: "load",
            requirement: "non-negative",
            value: load_arg,
        });
    }
    if load_arg >= 1.0 - FEASIBILITY_MARGIN {
        return Err(AnalyticsError::Saturated { load: load_arg });
    }
    Ok(params.prefactor() / (1.0 - load_arg))
}

/// Σ_{i=lo}^{hi} 1/i, summed from the small terms up.
pub fn harmonic_partial(lo: usize, hi: usize) -> Result<f64, AnalyticsError> {
    if lo < 1 || lo > hi {
        return Err(AnalyticsError::HarmonicRange { lo, hi });
    }
    Ok((lo..=hi).rev().map(|i| 1.0 / i as f64).sum())
}

fn code(k: usize, n: usize) -> Result<CodeConfig, AnalyticsError> {
    CodeConfig::new(k, n).map_err(|_| AnalyticsError::Code { k, n })
}

/// E[T_{k:k}] = t(ρ) · H_k.
pub fn expected_uncoded_delay(params: &AnalyticalParams, k: usize) -> Result<f64, AnalyticsError> {
    code(k, k)?;
    let t = mean_packet_delay(params, channel_load(params))?;
    Ok(t * harmonic_partial(1, k)?)
}

/// E[T_{k:n}] = t(ρ/R) · Σ_{i=n-k+1}^{n} 1/i = a · R/(R-ρ) · Σ.
pub fn expected_coded_delay(
    params: &AnalyticalParams,
    code: CodeConfig,
) -> Result<f64, AnalyticsError> {
    let rho = channel_load(params);
    let rate = code.rate();
    if rho >= rate - FEASIBILITY_MARGIN {
        return Err(AnalyticsError::CodedInfeasible { rho, rate });
    }
    let t = mean_packet_delay(params, rho / rate)?;
    Ok(t * harmonic_partial(code.n() - code.k() + 1, code.n())?)
}

/// f = (1 - ρ/R)/(1 - ρ) · H_k / Σ_{i=n-k+1}^{n} 1/i.
pub fn gain(rho: f64, k: usize, n: usize) -> Result<f64, AnalyticsError> {
    let c = code(k, n)?;
    if rho.is_nan() || rho < 0.0 {
        return Err(AnalyticsError::Parameter {
            name: "rho",
            requirement: "non-negative",
            value: rho,
        });
    }
    if rho >= 1.0 - FEASIBILITY_MARGIN {
        return Err(AnalyticsError::Saturated { load: rho });
    }
    let rate = c.rate();
    if rho >= rate - FEASIBILITY_MARGIN {
        return Err(AnalyticsError::CodedInfeasible { rho, rate });
    }
    let congestion = (1.0 - rho / rate) / (1.0 - rho);
    Ok(congestion * harmonic_partial(1, k)? / harmonic_partial(n - k + 1, n)?)
}

/// Exhaustive search over `n ∈ [k, n_max]`; ties go to the smaller `n`.
pub fn optimal_redundancy(
    rho: f64,
    k: usize,
    n_max: usize,
) -> Result<(usize, f64), AnalyticsError> {
    if n_max < k {
        return Err(AnalyticsError::Code { k, n: n_max });
    }
    let mut best: Option<(usize, f64)> = None;
    for n in k..=n_max {
        match gain(rho, k, n) {
            Ok(f) => {
                if best.is_none_or(|(_, bf)| f > bf) {
                    best = Some((n, f));
                }
            }
            Err(AnalyticsError::CodedInfeasible { .. }) => continue,
            Err(e @ AnalyticsError::Saturated { .. }) => return Err(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or(AnalyticsError::NoFeasibleRedundancy { rho, k, n_max })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainRow {
    pub n: usize,
    pub rate: f64,
    pub t_uncoded: Option<f64>,
    pub t_coded: Option<f64>,
    pub gain: Option<f64>,
}

impl GainRow {
    pub fn feasible(&self) -> bool {
        self.gain.is_some()
    }
}

/// One row per `n ∈ [k, n_max]`; infeasible rows carry no delays.
/// Absolute delays use `gamma`.
pub fn gain_curve(
    rho: f64,
    k: usize,
    n_max: usize,
    gamma: f64,
) -> Result<Vec<GainRow>, AnalyticsError> {
    let params = AnalyticalParams::at_load(rho, gamma)?;
    let t_unc = expected_uncoded_delay(&params, k).ok();
    Ok((k..=n_max)
        .map(|n| {
            let c = code(k, n).expect("n >= k");
            let t_cod = t_unc.and(expected_coded_delay(&params, c).ok());
            let gain = t_cod.and_then(|_| gain(rho, k, n).ok());
            GainRow {
                n,
                rate: c.rate(),
                t_uncoded: t_unc,
                t_coded: t_cod,
                gain,
            }
        })
        .collect())
}
