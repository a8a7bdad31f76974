//! Dynamic and static difference-in-differences estimators over relative
//! time from the nearest election.
//!
//! The dynamic estimator regresses an outcome on indicators for each
//! relative time, absorbing fixed effects, weighting by population, and
//! clustering at the district level. Annual runs normalize against a single
//! omitted relative year (the election year by default); monthly runs
//! normalize against the block of months furthest from the election, and
//! estimate a window of months around it. Coefficients are reported in log
//! points: an estimate `a` corresponds to a multiplicative effect `e^a`.

use thiserror::Error;

use crate::design::{self, FeSet, RowSet};
use crate::panel::{Frequency, PanelDataset, PanelError};
use crate::regress::{self, AbsorbOptions, Design, RegressError, WeightSpec};

/// Default estimated window of months around the election for monthly runs;
/// months outside it form the omitted (normalized) category.
pub const MONTHLY_WINDOW: (i64, i64) = (-19, 12);

#[derive(Debug, Error)]
pub enum EventStudyError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("no observations at relative time {0}")]
    EmptyCell(i64),
    #[error("relative-time indicator k={0} dropped as collinear; path is not identified under this FE set")]
    CollinearCell(i64),
    #[error("normalization k*={k} outside the relative-time range [{lo}, {hi}]")]
    BadNormalization { k: i64, lo: i64, hi: i64 },
    #[error("estimation window [{lo}, {hi}] invalid for relative-time range [{rlo}, {rhi}]")]
    BadWindow { lo: i64, hi: i64, rlo: i64, rhi: i64 },
    #[error("omitted category is empty: window covers every relative time")]
    OmittedEmpty,
    #[error("monthly path requires monthly data")]
    NotMonthly,
    #[error("no rows left after excluding rows with missing controls")]
    NoRows,
}

/// Specification for the relative-time estimators.
#[derive(Debug, Clone)]
pub struct EventStudySpec {
    pub outcome: String,
    /// Omitted relative time for annual runs. Ignored by monthly runs,
    /// which normalize against the out-of-window month block.
    pub normalize_k: i64,
    pub fe: FeSet,
    pub controls: Vec<String>,
    pub weights: WeightSpec,
    /// Estimated window of relative months for monthly data; defaults to
    /// `MONTHLY_WINDOW`.
    pub window: Option<(i64, i64)>,
}

impl EventStudySpec {
    pub fn new(outcome: impl Into<String>) -> Self {
        Self {
            outcome: outcome.into(),
            normalize_k: 0,
            fe: FeSet::state_period(),
            controls: Vec::new(),
            weights: WeightSpec::Population,
            window: None,
        }
    }
}

/// One point of the coefficient path. Normalized entries are identically
/// zero by construction.
#[derive(Debug, Clone, Copy)]
pub struct KPoint {
    pub k: i64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub normalized: bool,
}

#[derive(Debug, Clone)]
pub struct EventStudyEstimate {
    /// Full cycle of relative times in ascending order, including the
    /// normalized entries with zero estimate and zero SE.
    pub points: Vec<KPoint>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub control_rows_dropped: usize,
    pub outcome: String,
}

impl EventStudyEstimate {
    pub fn point(&self, k: i64) -> Option<&KPoint> {
        self.points.iter().find(|p| p.k == k)
    }
}

#[derive(Debug, Clone)]
pub struct StaticEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// e^estimate, the multiplicative reading of a log-point effect.
    pub multiplicative_effect: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub control_rows_dropped: usize,
    pub weighted_ssr: f64,
}

/// The set of relative times whose indicators enter the regression, and the
/// full cycle range, per the dataset frequency and spec.
fn estimated_ks(
    data: &PanelDataset,
    spec: &EventStudySpec,
) -> Result<(Vec<i64>, i64, i64), EventStudyError> {
    let t = data.half_term();
    let (lo, hi) = (-t, t - 1);
    match data.frequency() {
        Frequency::Annual => {
            if spec.normalize_k < lo || spec.normalize_k > hi {
                return Err(EventStudyError::BadNormalization { k: spec.normalize_k, lo, hi });
            }
            Ok(((lo..=hi).filter(|k| *k != spec.normalize_k).collect(), lo, hi))
        }
        Frequency::Monthly => {
            let (wlo, whi) = spec.window.unwrap_or(MONTHLY_WINDOW);
            if wlo > whi || wlo < lo || whi > hi {
                return Err(EventStudyError::BadWindow { lo: wlo, hi: whi, rlo: lo, rhi: hi });
            }
            if wlo == lo && whi == hi {
                return Err(EventStudyError::OmittedEmpty);
            }
            Ok(((wlo..=whi).collect(), lo, hi))
        }
    }
}

fn build_design(
    data: &PanelDataset,
    spec: &EventStudySpec,
    regressors: &[(String, Vec<f64>)],
    rows: &RowSet,
    outcome_idx: usize,
) -> Design {
    let y = design::outcome_vector(data, outcome_idx, rows);
    let weights = design::weight_vector(data, spec.weights, rows);
    let fe = design::fe_groups(data, spec.fe, rows);
    let (cluster_ids, n_clusters) = design::district_clusters(data, rows);
    let mut names = Vec::with_capacity(regressors.len());
    let mut cols = Vec::with_capacity(regressors.len());
    for (name, col) in regressors {
        names.push(name.clone());
        cols.push(col.clone());
    }
    Design { y, names, cols, weights, fe, cluster_ids, n_clusters }
}

fn control_regressors(
    data: &PanelDataset,
    spec: &EventStudySpec,
) -> Result<(Vec<usize>, RowSet), EventStudyError> {
    let control_idx: Vec<usize> = spec
        .controls
        .iter()
        .map(|c| data.control_index(c))
        .collect::<Result<_, _>>()?;
    let rows = RowSet::with_controls(data, &control_idx);
    if rows.is_empty() {
        return Err(EventStudyError::NoRows);
    }
    Ok((control_idx, rows))
}

fn indicator_name(k: i64) -> String {
    format!("k={k}")
}

/// Dynamic relative-time path: regresses the outcome on indicators for each
/// estimated relative time plus fixed effects and controls, and reports the
/// full cycle with the omitted category pinned at zero.
pub fn fit_dynamic(
    data: &PanelDataset,
    spec: &EventStudySpec,
) -> Result<EventStudyEstimate, EventStudyError> {
    let outcome_idx = data.outcome_index(&spec.outcome)?;
    let (ks, lo, hi) = estimated_ks(data, spec)?;
    let (control_idx, rows) = control_regressors(data, spec)?;

    // Every relative-time cell of the cycle must be populated, including the
    // omitted category the path is read against.
    let mut counts = std::collections::BTreeMap::new();
    for &i in &rows.rows {
        *counts.entry(data.rel_time(i)).or_insert(0usize) += 1;
    }
    match data.frequency() {
        Frequency::Annual => {
            for k in lo..=hi {
                if counts.get(&k).copied().unwrap_or(0) == 0 {
                    return Err(EventStudyError::EmptyCell(k));
                }
            }
        }
        Frequency::Monthly => {
            for &k in &ks {
                if counts.get(&k).copied().unwrap_or(0) == 0 {
                    return Err(EventStudyError::EmptyCell(k));
                }
            }
            let omitted_rows: usize = (lo..=hi)
                .filter(|k| !ks.contains(k))
                .map(|k| counts.get(&k).copied().unwrap_or(0))
                .sum();
            if omitted_rows == 0 {
                return Err(EventStudyError::OmittedEmpty);
            }
        }
    }

    let mut regressors: Vec<(String, Vec<f64>)> = ks
        .iter()
        .map(|&k| {
            let col: Vec<f64> =
                rows.rows.iter().map(|&i| if data.rel_time(i) == k { 1.0 } else { 0.0 }).collect();
            (indicator_name(k), col)
        })
        .collect();
    regressors.extend(design::control_columns(data, &control_idx, &rows));

    let d = build_design(data, spec, &regressors, &rows, outcome_idx);
    let fit = regress::fit_clustered(&d, &AbsorbOptions::default())?;

    for dropped in &fit.dropped {
        if let Some(k) = ks.iter().find(|k| indicator_name(**k) == dropped.name) {
            return Err(EventStudyError::CollinearCell(*k));
        }
    }

    let mut points = Vec::with_capacity((hi - lo + 1) as usize);
    for k in lo..=hi {
        if let Some(est) = fit.coefficient(&indicator_name(k)) {
            let se = fit.se_of(&indicator_name(k)).unwrap();
            points.push(KPoint {
                k,
                estimate: est,
                se,
                ci_low: est - 2.0 * se,
                ci_high: est + 2.0 * se,
                normalized: false,
            });
        } else {
            points.push(KPoint { k, estimate: 0.0, se: 0.0, ci_low: 0.0, ci_high: 0.0, normalized: true });
        }
    }

    Ok(EventStudyEstimate {
        points,
        n_obs: fit.n_obs,
        n_clusters: fit.n_clusters,
        control_rows_dropped: rows.control_rows_dropped,
        outcome: spec.outcome.clone(),
    })
}

/// Static difference-in-differences: a single election-period indicator.
pub fn fit_static(
    data: &PanelDataset,
    spec: &EventStudySpec,
) -> Result<StaticEstimate, EventStudyError> {
    let outcome_idx = data.outcome_index(&spec.outcome)?;
    let (control_idx, rows) = control_regressors(data, spec)?;

    let treated: Vec<f64> =
        rows.rows.iter().map(|&i| if data.rel_time(i) == 0 { 1.0 } else { 0.0 }).collect();
    let n_treated = treated.iter().filter(|v| **v == 1.0).count();
    if n_treated == 0 {
        return Err(EventStudyError::EmptyCell(0));
    }
    if n_treated == treated.len() {
        return Err(EventStudyError::OmittedEmpty);
    }

    let mut regressors = vec![("election".to_string(), treated)];
    regressors.extend(design::control_columns(data, &control_idx, &rows));
    let d = build_design(data, spec, &regressors, &rows, outcome_idx);
    let fit = regress::fit_clustered(&d, &AbsorbOptions::default())?;
    let estimate = fit
        .coefficient("election")
        .ok_or(EventStudyError::CollinearCell(0))?;
    let se = fit.se_of("election").unwrap();
    Ok(StaticEstimate {
        estimate,
        se,
        ci_low: estimate - 2.0 * se,
        ci_high: estimate + 2.0 * se,
        multiplicative_effect: estimate.exp(),
        n_obs: fit.n_obs,
        n_clusters: fit.n_clusters,
        control_rows_dropped: rows.control_rows_dropped,
        weighted_ssr: fit.weighted_ssr,
    })
}

/// Monthly relative-time path: year-month fixed effects, coefficients for
/// the estimated window, everything else normalized to zero.
pub fn monthly_path(
    data: &PanelDataset,
    spec: &EventStudySpec,
) -> Result<EventStudyEstimate, EventStudyError> {
    if data.frequency() != Frequency::Monthly {
        return Err(EventStudyError::NotMonthly);
    }
    fit_dynamic(data, spec)
}
