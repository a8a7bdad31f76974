//! Magnitude interpretation via signal variance: officeholder fixed
//! effects, the noise-corrected cross-officeholder variance within state,
//! and the translation of an election-year effect into standard-deviation
//! units and percentiles of the behavior distribution.
//!
//! The three steps: estimate a mean outcome level per district attorney
//! tenure (with period effects partialled out); measure how much those
//! levels vary within state (the mean squared deviation about state means,
//! weighted by observation counts); then subtract the part of that
//! variation owed to sampling noise (the weighted mean squared standard
//! error). What remains is the signal variance `gamma^2`. An effect of `x`
//! log points then corresponds to moving `x / sqrt(gamma^2)` standard
//! deviations along the within-state distribution of officeholder behavior,
//! reported as a percentile under a normal reference distribution.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::design::{self, RowSet};
use crate::panel::{PanelDataset, PanelError};
use crate::regress::WeightSpec;

#[derive(Debug, Error)]
pub enum MagnitudeError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("{count} observation(s) have no district attorney tenure assignment")]
    UnmappedObservations { count: usize },
    #[error("fixed-effect iteration did not converge after {0} sweeps")]
    NonConvergence(usize),
    #[error("signal variance is zero or negative after noise correction; standard-deviation units are undefined")]
    ZeroSignal,
    #[error("gamma^2 must be positive, got {0}")]
    BadGammaSq(f64),
    #[error("need at least {need} district attorneys, found {found}")]
    TooFewDas { need: usize, found: usize },
    #[error("tenure map io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("tenure map parse error at line {line}: {message}")]
    MapParse { line: usize, message: String },
}

/// Assignment of observations to district attorney tenures.
#[derive(Debug, Clone)]
pub enum DaTenureMap {
    /// Derive tenures from each county's election calendar: one tenure per
    /// district per term, labeled `district:term_index`.
    Synthetic,
    /// Explicit spans loaded from a CSV of
    /// `district_id,start_year,end_year,da_id` (inclusive years).
    Explicit(Vec<TenureSpan>),
}

#[derive(Debug, Clone)]
pub struct TenureSpan {
    pub district_id: String,
    pub start: i64,
    pub end: i64,
    pub da_id: String,
}

impl DaTenureMap {
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self, MagnitudeError> {
        let text = std::fs::read_to_string(path)?;
        let mut spans = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 && line.starts_with("district_id") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(MagnitudeError::MapParse {
                    line: i + 1,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<i64>().map_err(|_| MagnitudeError::MapParse {
                    line: i + 1,
                    message: format!("non-integer year `{s}`"),
                })
            };
            spans.push(TenureSpan {
                district_id: fields[0].to_string(),
                start: parse(fields[1])?,
                end: parse(fields[2])?,
                da_id: fields[3].to_string(),
            });
        }
        Ok(DaTenureMap::Explicit(spans))
    }

    /// Tenure id for observation `i`, or `None` if unmapped.
    fn assign(&self, data: &PanelDataset, i: usize) -> Option<String> {
        let obs = &data.observations()[i];
        match self {
            DaTenureMap::Synthetic => {
                let cal = data.calendars().get(&obs.county_id)?;
                Some(format!("{}:{}", obs.district_id, cal.term_index(obs.period)))
            }
            DaTenureMap::Explicit(spans) => {
                let year = obs.period / data.frequency().periods_per_year();
                spans
                    .iter()
                    .find(|s| s.district_id == obs.district_id && s.start <= year && year <= s.end)
                    .map(|s| s.da_id.clone())
            }
        }
    }
}

/// Per-tenure estimates from the two-way (tenure + period) decomposition.
#[derive(Debug, Clone)]
pub struct DaEffects {
    pub ids: Vec<String>,
    pub mu: Vec<f64>,
    pub se: Vec<f64>,
    pub n_obs: Vec<usize>,
    /// Observation-count weight used downstream.
    pub weight: Vec<f64>,
    pub state: Vec<usize>,
    pub state_ids: Vec<String>,
    /// Set for tenures with fewer than 2 observations, whose standard
    /// errors carry no information.
    pub unreliable: Vec<bool>,
}

/// Weighted two-way decomposition of the outcome into district attorney
/// tenure means and period effects, by coordinate descent on the weighted
/// least-squares objective. Period effects are normalized to weighted mean
/// zero, so tenure means keep the outcome's level. Standard errors come
/// from the weighted-mean form over each tenure's residuals; tenures with a
/// single observation keep their estimate but are flagged unreliable.
pub fn da_fixed_effects(
    data: &PanelDataset,
    map: &DaTenureMap,
    outcome: &str,
    weights: WeightSpec,
) -> Result<DaEffects, MagnitudeError> {
    let outcome_idx = data.outcome_index(outcome)?;
    let rows = RowSet::all(data);
    let n = rows.len();

    let mut da_ids: Vec<String> = Vec::new();
    let mut da_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut assign = Vec::with_capacity(n);
    let mut unmapped = 0usize;
    for &i in &rows.rows {
        match map.assign(data, i) {
            Some(id) => {
                let next = da_ids.len();
                let idx = *da_index.entry(id.clone()).or_insert_with(|| {
                    da_ids.push(id);
                    next
                });
                assign.push(idx);
            }
            None => {
                unmapped += 1;
                assign.push(usize::MAX);
            }
        }
    }
    if unmapped > 0 {
        return Err(MagnitudeError::UnmappedObservations { count: unmapped });
    }
    let n_das = da_ids.len();

    let w = design::weight_vector(data, weights, &rows);
    let y: Vec<f64> = rows.rows.iter().map(|&i| data.observations()[i].outcomes[outcome_idx]).collect();
    let (period_ids, n_periods) = {
        let mut map = BTreeMap::new();
        let mut out = Vec::with_capacity(n);
        for &i in &rows.rows {
            let next = map.len();
            out.push(*map.entry(data.observations()[i].period).or_insert(next));
        }
        (out, map.len())
    };

    let mut da_wsum = vec![0.0f64; n_das];
    let mut period_wsum = vec![0.0f64; n_periods];
    for r in 0..n {
        da_wsum[assign[r]] += w[r];
        period_wsum[period_ids[r]] += w[r];
    }

    let mut mu = vec![0.0f64; n_das];
    let mut lambda = vec![0.0f64; n_periods];
    let max_sweeps = 20_000;
    let mut converged = false;
    let y_scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for _ in 0..max_sweeps {
        // mu update given lambda.
        let mut acc = vec![0.0f64; n_das];
        for r in 0..n {
            acc[assign[r]] += w[r] * (y[r] - lambda[period_ids[r]]);
        }
        for d in 0..n_das {
            mu[d] = acc[d] / da_wsum[d];
        }
        // lambda update given mu.
        let mut lacc = vec![0.0f64; n_periods];
        for r in 0..n {
            lacc[period_ids[r]] += w[r] * (y[r] - mu[assign[r]]);
        }
        for t in 0..n_periods {
            lambda[t] = lacc[t] / period_wsum[t];
        }
        // Optimality: residuals must have zero weighted mean within every
        // tenure and period group. Staggered tenure blocks make this system
        // slowly convergent, so measure the solution, not the step size.
        let mut worst = 0.0f64;
        let mut macc = vec![0.0f64; n_das];
        for r in 0..n {
            macc[assign[r]] += w[r] * (y[r] - mu[assign[r]] - lambda[period_ids[r]]);
        }
        for d in 0..n_das {
            worst = worst.max((macc[d] / da_wsum[d]).abs());
        }
        if worst < 1e-12 * y_scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MagnitudeError::NonConvergence(max_sweeps));
    }
    // Normalize: period effects to weighted mean zero, level into mu.
    let total_w: f64 = w.iter().sum();
    let lambda_mean = (0..n)
        .map(|r| w[r] * lambda[period_ids[r]])
        .sum::<f64>()
        / total_w;
    for l in lambda.iter_mut() {
        *l -= lambda_mean;
    }
    for m in mu.iter_mut() {
        *m += lambda_mean;
    }

    // Standard error of each tenure mean: estimate the within-tenure error
    // variance with the weighted Bessel correction (fitting the tenure's own
    // mean shrinks its residuals, badly so under skewed weights), then map
    // through the weight design effect sum(w^2)/sum(w)^2. Tenures with one
    // observation get SE 0 and an unreliable flag.
    let mut swe2 = vec![0.0f64; n_das];
    let mut sw2 = vec![0.0f64; n_das];
    let mut counts = vec![0usize; n_das];
    for r in 0..n {
        let e = y[r] - mu[assign[r]] - lambda[period_ids[r]];
        let d = assign[r];
        swe2[d] += w[r] * e * e;
        sw2[d] += w[r] * w[r];
        counts[d] += 1;
    }
    let se: Vec<f64> = (0..n_das)
        .map(|d| {
            if counts[d] < 2 {
                return 0.0;
            }
            let bessel = da_wsum[d] - sw2[d] / da_wsum[d];
            if bessel <= 0.0 {
                return 0.0;
            }
            let sigma_sq = swe2[d] / bessel;
            (sigma_sq * sw2[d] / (da_wsum[d] * da_wsum[d])).sqrt()
        })
        .collect();
    let unreliable: Vec<bool> = counts.iter().map(|c| *c < 2).collect();

    // State of each tenure, from its first observation.
    let mut state = vec![usize::MAX; n_das];
    for r in 0..n {
        let d = assign[r];
        if state[d] == usize::MAX {
            state[d] = data.state_index(rows.rows[r]);
        }
    }
    let state_ids: Vec<String> = (0..data.n_states())
        .map(|s| {
            data.observations()[(0..data.n_obs()).find(|&i| data.state_index(i) == s).unwrap()]
                .state_id
                .clone()
        })
        .collect();

    let weight: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
    Ok(DaEffects { ids: da_ids, mu, se, n_obs: counts, weight, state, state_ids, unreliable })
}

/// Noise-corrected within-state variance of officeholder effects.
#[derive(Debug, Clone, Copy)]
pub struct SignalVariance {
    pub gamma_sq: f64,
    /// Weighted mean squared deviation of the effects about state means.
    pub raw_variance: f64,
    /// Weighted mean of the squared standard errors.
    pub mean_sq_se: f64,
    /// Set when the noise correction exceeded the raw variance and the
    /// estimate was clamped at zero.
    pub clamped: bool,
}

/// `gamma^2 = max(0, raw - mean SE^2)`: the observation-count-weighted mean
/// squared deviation of tenure effects about their state means, minus the
/// average squared sampling error. Tenures flagged unreliable (a single
/// observation) are excluded: their sampling variance is unknown, so they
/// cannot be noise-corrected.
pub fn signal_variance(effects: &DaEffects) -> Result<SignalVariance, MagnitudeError> {
    let keep: Vec<usize> =
        (0..effects.mu.len()).filter(|&i| !effects.unreliable[i]).collect();
    if keep.len() < 2 {
        return Err(MagnitudeError::TooFewDas { need: 2, found: keep.len() });
    }
    let n_states = effects.state_ids.len().max(1);
    let mut state_w = vec![0.0f64; n_states];
    let mut state_acc = vec![0.0f64; n_states];
    for &i in &keep {
        state_w[effects.state[i]] += effects.weight[i];
        state_acc[effects.state[i]] += effects.weight[i] * effects.mu[i];
    }
    let mut raw_num = 0.0;
    let mut se_num = 0.0;
    let mut w_total = 0.0;
    for &i in &keep {
        let mean = state_acc[effects.state[i]] / state_w[effects.state[i]];
        let r = effects.mu[i] - mean;
        raw_num += effects.weight[i] * r * r;
        se_num += effects.weight[i] * effects.se[i] * effects.se[i];
        w_total += effects.weight[i];
    }
    let raw_variance = raw_num / w_total;
    let mean_sq_se = se_num / w_total;
    let gamma_sq = (raw_variance - mean_sq_se).max(0.0);
    Ok(SignalVariance { gamma_sq, raw_variance, mean_sq_se, clamped: raw_variance < mean_sq_se })
}

#[derive(Debug, Clone, Copy)]
pub struct MagnitudeReport {
    /// Effect in log points.
    pub effect: f64,
    pub gamma_sq: f64,
    /// effect / sqrt(gamma^2).
    pub sd_units: f64,
    /// 100 * Phi(sd_units): where a median officeholder would land after
    /// shifting by the effect, under a normal reference distribution.
    pub percentile: f64,
}

/// Standard normal CDF, accurate to better than 1e-12.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Translates an effect into standard-deviation units of the within-state
/// officeholder distribution and the corresponding percentile.
pub fn to_sd_and_percentile(effect: f64, gamma_sq: f64) -> Result<MagnitudeReport, MagnitudeError> {
    if !(gamma_sq > 0.0) {
        if gamma_sq == 0.0 {
            return Err(MagnitudeError::ZeroSignal);
        }
        return Err(MagnitudeError::BadGammaSq(gamma_sq));
    }
    let sd_units = effect / gamma_sq.sqrt();
    let percentile = 100.0 * normal_cdf(sd_units);
    Ok(MagnitudeReport { effect, gamma_sq, sd_units, percentile })
}
