//! Cycle-shape fits: a LOESS smoother over relative-time coefficient paths
//! and a fixed-period sinusoid over the panel itself.
//!
//! The sinusoid's period is never estimated; it is the term length (4 years
//! annual, 48 months monthly). With the period fixed, `A sin(theta + phi)`
//! expands to `a sin(theta) + b cos(theta)`, which is linear: one weighted
//! least-squares pass yields `A = sqrt(a^2 + b^2)` and `phi = atan2(b, a)`
//! in `[0, 2*pi)`, with standard errors by the delta method from the
//! clustered covariance of `(a, b)`. No initial values, no iteration, no
//! convergence failures.

use thiserror::Error;

use crate::design::{self, FeSet, RowSet};
use crate::panel::{PanelDataset, PanelError};
use crate::regress::{self, AbsorbOptions, Design, RegressError, WeightSpec};

#[derive(Debug, Error)]
pub enum CycleError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("need at least {need} points for degree {degree}, got {got}")]
    TooFewPoints { need: usize, degree: usize, got: usize },
    #[error("span {span} leaves only {got} usable neighbors at x = {at} (need {need})")]
    InsufficientNeighbors { span: f64, at: f64, got: usize, need: usize },
    #[error("span must be in (0, 1], got {0}")]
    BadSpan(f64),
    #[error("degree must be 1 or 2, got {0}")]
    BadDegree(usize),
    #[error("nonpositive point weight {0}")]
    BadWeight(f64),
    #[error("no smoothed value at relative time {0}; refit with a window covering it")]
    NoGridValue(i64),
    #[error("degenerate (a, b) covariance; amplitude uncertainty undefined")]
    DegenerateVcov,
}

/// A fitted local-polynomial smoother, sampled on the distinct input grid.
#[derive(Debug, Clone)]
pub struct LoessFit {
    pub span: f64,
    pub degree: usize,
    /// (x, fitted value) at each distinct input x, ascending.
    pub grid: Vec<(f64, f64)>,
}

impl LoessFit {
    pub fn value_at(&self, x: f64) -> Option<f64> {
        self.grid.iter().find(|(gx, _)| *gx == x).map(|(_, v)| *v)
    }
}

/// Tricube kernel on [0, 1).
fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        return 0.0;
    }
    let t = 1.0 - u * u * u;
    t * t * t
}

/// Weighted local polynomial regression with a tricube kernel over the
/// span-nearest neighbors, combined multiplicatively with the observation
/// weights. A span of 1 uses every point with uniform kernel weight, so
/// degree-1 smoothing reproduces the global weighted least-squares line.
pub fn loess_fit(
    points: &[(f64, f64, f64)],
    span: f64,
    degree: usize,
) -> Result<LoessFit, CycleError> {
    if !(degree == 1 || degree == 2) {
        return Err(CycleError::BadDegree(degree));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(CycleError::BadSpan(span));
    }
    let n = points.len();
    if n < degree + 2 {
        return Err(CycleError::TooFewPoints { need: degree + 2, degree, got: n });
    }
    if let Some((_, _, w)) = points.iter().find(|(_, _, w)| !(*w > 0.0)) {
        return Err(CycleError::BadWeight(*w));
    }

    let mut grid: Vec<f64> = points.iter().map(|(x, _, _)| *x).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let global = span >= 1.0;
    let q = ((span * n as f64).ceil() as usize).clamp(degree + 2, n);

    let mut fitted = Vec::with_capacity(grid.len());
    let mut order: Vec<usize> = (0..n).collect();
    for &x0 in &grid {
        let (weights, used): (Vec<f64>, Vec<usize>) = if global {
            ((0..n).map(|i| points[i].2).collect(), (0..n).collect())
        } else {
            order.sort_by(|&a, &b| {
                let da = (points[a].0 - x0).abs();
                let db = (points[b].0 - x0).abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            let neighbors = &order[..q];
            let d_max = (points[neighbors[q - 1]].0 - x0).abs();
            let mut w = Vec::with_capacity(q);
            for &i in neighbors {
                let d = (points[i].0 - x0).abs();
                let kernel = if d_max == 0.0 { 1.0 } else { tricube(d / d_max) };
                w.push(kernel * points[i].2);
            }
            (w, neighbors.to_vec())
        };

        let positive = weights.iter().filter(|w| **w > 0.0).count();
        if positive < degree + 1 {
            return Err(CycleError::InsufficientNeighbors {
                span,
                at: x0,
                got: positive,
                need: degree + 1,
            });
        }

        // Weighted polynomial in (x - x0); the fitted value is the intercept.
        let p = degree + 1;
        let mut xtx = vec![0.0f64; p * p];
        let mut xty = vec![0.0f64; p];
        for (w, &i) in weights.iter().zip(&used) {
            let dx = points[i].0 - x0;
            let mut basis = [1.0, 0.0, 0.0];
            basis[1] = dx;
            if degree == 2 {
                basis[2] = dx * dx;
            }
            for r in 0..p {
                for c in 0..p {
                    xtx[r * p + c] += w * basis[r] * basis[c];
                }
                xty[r] += w * basis[r] * points[i].1;
            }
        }
        let beta = solve_small(&mut xtx, &mut xty, p).ok_or(CycleError::InsufficientNeighbors {
            span,
            at: x0,
            got: positive,
            need: degree + 1,
        })?;
        fitted.push((x0, beta[0]));
    }

    Ok(LoessFit { span, degree, grid: fitted })
}

/// Gaussian elimination with partial pivoting for the tiny local systems.
fn solve_small(a: &mut [f64], b: &mut [f64], p: usize) -> Option<Vec<f64>> {
    for col in 0..p {
        let mut piv = col;
        for r in (col + 1)..p {
            if a[r * p + col].abs() > a[piv * p + col].abs() {
                piv = r;
            }
        }
        if a[piv * p + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..p {
                a.swap(col * p + c, piv * p + c);
            }
            b.swap(col, piv);
        }
        for r in (col + 1)..p {
            let f = a[r * p + col] / a[col * p + col];
            for c in col..p {
                a[r * p + c] -= f * a[col * p + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0f64; p];
    for r in (0..p).rev() {
        let mut acc = b[r];
        for c in (r + 1)..p {
            acc -= a[r * p + c] * x[c];
        }
        x[r] = acc / a[r * p + r];
    }
    Some(x)
}

#[derive(Debug, Clone)]
pub struct SinusoidSpec {
    pub outcome: String,
    pub fe: FeSet,
    pub weights: WeightSpec,
}

impl SinusoidSpec {
    pub fn new(outcome: impl Into<String>) -> Self {
        Self { outcome: outcome.into(), fe: FeSet::state_period(), weights: WeightSpec::Population }
    }
}

#[derive(Debug, Clone)]
pub struct SinusoidFit {
    /// Cycle amplitude, nonnegative.
    pub amplitude: f64,
    /// Phase in [0, 2*pi); zero when the amplitude vanishes.
    pub phase: f64,
    /// Fixed period in panel periods (the term length).
    pub period: i64,
    pub se_amplitude: f64,
    /// Undefined when the amplitude is (numerically) zero.
    pub se_phase: Option<f64>,
    pub ssr: f64,
    /// Linearized coefficients: a multiplies sin, b multiplies cos.
    pub a: f64,
    pub b: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

impl SinusoidFit {
    /// The fitted cycle component at relative time k.
    pub fn value_at(&self, k: i64) -> f64 {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / self.period as f64;
        self.amplitude * (theta + self.phase).sin()
    }
}

/// Fits `A sin(2 pi k / L + phi)` to the outcome with fixed effects
/// absorbed, by the exact linearization in (sin, cos). The fixed period
/// makes the problem linear, so there is nothing to initialize or iterate.
pub fn sinusoid_fit(data: &PanelDataset, spec: &SinusoidSpec) -> Result<SinusoidFit, CycleError> {
    let outcome_idx = data.outcome_index(&spec.outcome)?;
    let rows = RowSet::all(data);
    let period = data.term_length();

    let thetas: Vec<f64> = rows
        .rows
        .iter()
        .map(|&i| 2.0 * std::f64::consts::PI * data.rel_time(i) as f64 / period as f64)
        .collect();
    let sin_col: Vec<f64> = thetas.iter().map(|t| t.sin()).collect();
    let cos_col: Vec<f64> = thetas.iter().map(|t| t.cos()).collect();

    let y = design::outcome_vector(data, outcome_idx, &rows);
    let weights = design::weight_vector(data, spec.weights, &rows);
    let fe = design::fe_groups(data, spec.fe, &rows);
    let (cluster_ids, n_clusters) = design::district_clusters(data, &rows);
    let d = Design {
        y,
        names: vec!["sin".into(), "cos".into()],
        cols: vec![sin_col, cos_col],
        weights,
        fe,
        cluster_ids,
        n_clusters,
    };
    let absorbed = regress::absorb_fe(&d, &AbsorbOptions::default())?;
    let fit = regress::wls_fit(&absorbed)?;
    if fit.kept.len() != 2 {
        return Err(CycleError::DegenerateVcov);
    }
    let a = coefficient_value(&fit, "sin");
    let b = coefficient_value(&fit, "cos");
    let vcov = regress::cluster_vcov(&fit, &absorbed)?;

    let amplitude = a.hypot(b);
    let scale = absorbed.y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if amplitude <= 1e-12 * scale {
        return Ok(SinusoidFit {
            amplitude: 0.0,
            phase: 0.0,
            period,
            se_amplitude: vcov.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).sqrt(),
            se_phase: None,
            ssr: fit.weighted_ssr,
            a,
            b,
            n_obs: fit.n_obs,
            n_clusters,
        });
    }

    // Delta method: A = hypot(a, b), phi = atan2(b, a).
    let ga = [a / amplitude, b / amplitude];
    let gphi = [-b / (amplitude * amplitude), a / (amplitude * amplitude)];
    let quad = |g: [f64; 2], v: &nalgebra::DMatrix<f64>| {
        g[0] * g[0] * v[(0, 0)] + 2.0 * g[0] * g[1] * v[(0, 1)] + g[1] * g[1] * v[(1, 1)]
    };
    let var_a = quad(ga, &vcov);
    let var_phi = quad(gphi, &vcov);
    if !(var_a.is_finite() && var_phi.is_finite()) {
        return Err(CycleError::DegenerateVcov);
    }

    let mut phase = b.atan2(a).rem_euclid(2.0 * std::f64::consts::PI);
    if phase >= 2.0 * std::f64::consts::PI {
        phase = 0.0;
    }
    Ok(SinusoidFit {
        amplitude,
        phase,
        period,
        se_amplitude: var_a.max(0.0).sqrt(),
        se_phase: Some(var_phi.max(0.0).sqrt()),
        ssr: fit.weighted_ssr,
        a,
        b,
        n_obs: fit.n_obs,
        n_clusters,
    })
}

fn coefficient_value(fit: &regress::WlsFit, name: &str) -> f64 {
    fit.names.iter().position(|n| n == name).map(|i| fit.coefficients[i]).unwrap_or(0.0)
}

#[derive(Debug, Clone)]
pub struct TransformFit {
    pub beta: f64,
    pub se: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Rows excluded because their relative time has no smoothed value.
    pub rows_outside_grid: usize,
}

/// Optional second stage: regress the outcome on the smoothed relative-time
/// transformation `f(k)` (plus fixed effects). Rows whose relative time is
/// not on the smoother's grid are excluded and counted.
pub fn transform_regression(
    data: &PanelDataset,
    loess: &LoessFit,
    spec: &SinusoidSpec,
) -> Result<TransformFit, CycleError> {
    let outcome_idx = data.outcome_index(&spec.outcome)?;
    let all = RowSet::all(data);
    let mut kept = Vec::new();
    let mut f_col = Vec::new();
    let mut outside = 0usize;
    for &i in &all.rows {
        match loess.value_at(data.rel_time(i) as f64) {
            Some(v) => {
                kept.push(i);
                f_col.push(v);
            }
            None => outside += 1,
        }
    }
    if kept.is_empty() {
        return Err(CycleError::NoGridValue(0));
    }
    let rows = RowSet { rows: kept, control_rows_dropped: 0 };

    let y = design::outcome_vector(data, outcome_idx, &rows);
    let weights = design::weight_vector(data, spec.weights, &rows);
    let fe = design::fe_groups(data, spec.fe, &rows);
    let (cluster_ids, n_clusters) = design::district_clusters(data, &rows);
    let d = Design {
        y,
        names: vec!["f_of_k".into()],
        cols: vec![f_col],
        weights,
        fe,
        cluster_ids,
        n_clusters,
    };
    let fit = regress::fit_clustered(&d, &AbsorbOptions::default())?;
    let beta = fit.coefficient("f_of_k").ok_or(CycleError::DegenerateVcov)?;
    let se = fit.se_of("f_of_k").unwrap();
    Ok(TransformFit { beta, se, n_obs: fit.n_obs, n_clusters, rows_outside_grid: outside })
}
