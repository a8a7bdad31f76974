//! Weighted least squares with fixed-effect absorption, rank handling, and
//! cluster-robust variance. This sits under every estimator in the crate.
//!
//! Fixed effects are absorbed by iterated weighted within-group demeaning
//! (alternating projections) instead of dummy expansion, so county-level
//! effects with thousands of levels stay cheap. The absorbed system is then
//! solved by a column-pivoted Householder QR on the square-root-weighted
//! design; columns whose pivot falls below `1e-10` times the leading pivot
//! are dropped and reported rather than silently regularized.
//!
//! All reductions run in a fixed row order, so identical inputs produce
//! bit-identical results.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("design has no rows")]
    EmptyDesign,
    #[error("design length mismatch: {0}")]
    LengthMismatch(String),
    #[error("weight at row {0} must be positive and finite")]
    BadWeight(usize),
    #[error("non-finite value in column `{0}`")]
    NonFinite(String),
    #[error("fixed-effect absorption did not converge after {0} sweeps")]
    NonConvergence(usize),
    #[error("all {0} regressor columns were dropped as collinear or zero")]
    AllColumnsDropped(usize),
    #[error("clustered variance needs at least 2 clusters, found {0}")]
    SingleCluster(usize),
    #[error("model is saturated: {n_obs} observations for {df_model} parameters")]
    Saturated { n_obs: usize, df_model: usize },
}

/// Which column weights each observation in estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSpec {
    Population,
    Unit,
}

/// One fixed-effect dimension as dense group ids per observation.
#[derive(Debug, Clone)]
pub struct FeGroups {
    pub name: String,
    pub ids: Vec<usize>,
    pub n_groups: usize,
}

/// A fully materialized regression problem: outcome, named regressor
/// columns, observation weights, fixed-effect dimensions to absorb, and the
/// clustering assignment for the sandwich variance.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: Vec<f64>,
    pub names: Vec<String>,
    pub cols: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub fe: Vec<FeGroups>,
    pub cluster_ids: Vec<usize>,
    pub n_clusters: usize,
}

impl Design {
    fn validate(&self) -> Result<(), RegressError> {
        let n = self.y.len();
        if n == 0 {
            return Err(RegressError::EmptyDesign);
        }
        if self.names.len() != self.cols.len() {
            return Err(RegressError::LengthMismatch("names vs columns".into()));
        }
        for (name, col) in self.names.iter().zip(&self.cols) {
            if col.len() != n {
                return Err(RegressError::LengthMismatch(format!("column `{name}`")));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(RegressError::NonFinite(name.clone()));
            }
        }
        if self.weights.len() != n {
            return Err(RegressError::LengthMismatch("weights".into()));
        }
        if let Some(i) = self.weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(RegressError::BadWeight(i));
        }
        if self.cluster_ids.len() != n {
            return Err(RegressError::LengthMismatch("cluster ids".into()));
        }
        for fe in &self.fe {
            if fe.ids.len() != n {
                return Err(RegressError::LengthMismatch(format!("fe `{}`", fe.name)));
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::NonFinite("outcome".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AbsorbOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for AbsorbOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_sweeps: 1000 }
    }
}

/// The design after fixed effects have been partialled out of the outcome
/// and every regressor column.
#[derive(Debug, Clone)]
pub struct AbsorbedDesign {
    pub y: Vec<f64>,
    pub names: Vec<String>,
    pub cols: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub cluster_ids: Vec<usize>,
    pub n_clusters: usize,
    /// Degrees of freedom consumed by the absorbed effects (intercept plus
    /// levels-minus-one per dimension); zero when no effects are absorbed.
    pub absorbed_df: usize,
    pub sweeps: usize,
}

/// Weighted within-group demeaning of the outcome and all regressors,
/// iterated across dimensions until every within-group weighted mean is
/// below tolerance. A single dimension converges in one pass; singleton
/// groups demean to exactly zero and stay in the sample.
pub fn absorb_fe(design: &Design, opts: &AbsorbOptions) -> Result<AbsorbedDesign, RegressError> {
    design.validate()?;
    let n = design.y.len();
    let mut y = design.y.clone();
    let mut cols = design.cols.clone();

    let absorbed_df = if design.fe.is_empty() {
        0
    } else {
        1 + design.fe.iter().map(|fe| fe.n_groups.saturating_sub(1)).sum::<usize>()
    };

    let mut sweeps = 0;
    if !design.fe.is_empty() {
        let group_wsum: Vec<Vec<f64>> = design
            .fe
            .iter()
            .map(|fe| {
                let mut sums = vec![0.0; fe.n_groups];
                for i in 0..n {
                    sums[fe.ids[i]] += design.weights[i];
                }
                sums
            })
            .collect();

        let mut scratch = vec![0.0; design.fe.iter().map(|f| f.n_groups).max().unwrap_or(0)];
        loop {
            for (fe, wsum) in design.fe.iter().zip(&group_wsum) {
                demean_once(&mut y, design, fe, wsum, &mut scratch);
                for col in cols.iter_mut() {
                    demean_once(col, design, fe, wsum, &mut scratch);
                }
            }
            sweeps += 1;
            let mut worst = 0.0f64;
            for (fe, wsum) in design.fe.iter().zip(&group_wsum) {
                worst = worst.max(max_group_mean(&y, design, fe, wsum, &mut scratch));
                for col in &cols {
                    worst = worst.max(max_group_mean(col, design, fe, wsum, &mut scratch));
                }
            }
            if worst < opts.tolerance {
                break;
            }
            if sweeps >= opts.max_sweeps {
                return Err(RegressError::NonConvergence(sweeps));
            }
        }
    }

    Ok(AbsorbedDesign {
        y,
        names: design.names.clone(),
        cols,
        weights: design.weights.clone(),
        cluster_ids: design.cluster_ids.clone(),
        n_clusters: design.n_clusters,
        absorbed_df,
        sweeps,
    })
}

fn demean_once(values: &mut [f64], design: &Design, fe: &FeGroups, wsum: &[f64], scratch: &mut [f64]) {
    let sums = &mut scratch[..fe.n_groups];
    sums.fill(0.0);
    for (i, v) in values.iter().enumerate() {
        sums[fe.ids[i]] += design.weights[i] * v;
    }
    for (g, s) in sums.iter_mut().enumerate() {
        *s /= wsum[g];
    }
    for (i, v) in values.iter_mut().enumerate() {
        *v -= sums[fe.ids[i]];
    }
}

fn max_group_mean(values: &[f64], design: &Design, fe: &FeGroups, wsum: &[f64], scratch: &mut [f64]) -> f64 {
    let sums = &mut scratch[..fe.n_groups];
    sums.fill(0.0);
    for (i, v) in values.iter().enumerate() {
        sums[fe.ids[i]] += design.weights[i] * v;
    }
    sums.iter().zip(wsum).map(|(s, w)| (s / w).abs()).fold(0.0, f64::max)
}

/// Relative pivot threshold for declaring a column collinear.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

/// Solved weighted least squares on an absorbed design.
#[derive(Debug, Clone)]
pub struct WlsFit {
    /// Kept regressor names, in original column order.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Indices of kept columns in the absorbed design.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedColumn>,
    /// (X'WX)^-1 over kept columns.
    pub bread_inv: DMatrix<f64>,
    /// Unweighted residuals y - x.beta on the absorbed scale.
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub weighted_ssr: f64,
    pub n_obs: usize,
    /// Kept regressors plus absorbed degrees of freedom.
    pub df_model: usize,
}

/// Minimizes sum of w_i (y_i - x_i b)^2 by a column-pivoted Householder QR
/// of the square-root-weighted design. Collinear columns (pivot below
/// `PIVOT_TOLERANCE` times the leading pivot) are dropped and reported;
/// ties in the pivot search resolve to the lowest column index, so drops
/// are deterministic.
pub fn wls_fit(absorbed: &AbsorbedDesign) -> Result<WlsFit, RegressError> {
    let n = absorbed.y.len();
    let p = absorbed.cols.len();
    if n == 0 {
        return Err(RegressError::EmptyDesign);
    }
    if p == 0 {
        return Err(RegressError::AllColumnsDropped(0));
    }

    let sqrt_w: Vec<f64> = absorbed.weights.iter().map(|w| w.sqrt()).collect();
    let mut a: Vec<Vec<f64>> = absorbed
        .cols
        .iter()
        .map(|col| col.iter().zip(&sqrt_w).map(|(v, s)| v * s).collect())
        .collect();
    let mut qty: Vec<f64> = absorbed.y.iter().zip(&sqrt_w).map(|(v, s)| v * s).collect();

    let max_rank = p.min(n);
    let mut perm: Vec<usize> = (0..p).collect();
    let mut r_diag = vec![0.0f64; max_rank];
    let mut rank = 0usize;
    let mut leading_pivot = 0.0f64;

    for step in 0..max_rank {
        // Pivot: remaining column with the largest residual norm; ties go to
        // the lowest index so duplicated columns drop their later copies.
        let mut best = step;
        let mut best_norm = residual_norm2(&a[step], step);
        for j in (step + 1)..p {
            let norm = residual_norm2(&a[j], step);
            if norm > best_norm {
                best = j;
                best_norm = norm;
            }
        }
        let pivot_norm = best_norm.sqrt();
        if step == 0 {
            leading_pivot = pivot_norm;
        }
        if pivot_norm < PIVOT_TOLERANCE * leading_pivot || pivot_norm == 0.0 {
            break;
        }
        a.swap(step, best);
        perm.swap(step, best);

        // Householder reflection zeroing column `step` below the diagonal.
        let x0 = a[step][step];
        let alpha = -x0.signum() * pivot_norm;
        let mut v: Vec<f64> = a[step][step..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        a[step][step] = alpha;
        for x in a[step][step + 1..].iter_mut() {
            *x = 0.0;
        }
        if vtv > 0.0 {
            let beta = 2.0 / vtv;
            for col in a.iter_mut().skip(step + 1) {
                let dot: f64 = v.iter().zip(&col[step..]).map(|(vi, ci)| vi * ci).sum();
                let scale = beta * dot;
                for (vi, ci) in v.iter().zip(col[step..].iter_mut()) {
                    *ci -= scale * vi;
                }
            }
            let dot: f64 = v.iter().zip(&qty[step..]).map(|(vi, ci)| vi * ci).sum();
            let scale = beta * dot;
            for (vi, ci) in v.iter().zip(qty[step..].iter_mut()) {
                *ci -= scale * vi;
            }
        }
        r_diag[step] = alpha;
        rank = step + 1;
    }

    if rank == 0 {
        return Err(RegressError::AllColumnsDropped(p));
    }

    // Back-substitute R[0..rank, 0..rank] b = qty[0..rank] in pivot order.
    let mut beta_pivot = vec![0.0f64; rank];
    for i in (0..rank).rev() {
        let mut acc = qty[i];
        for j in (i + 1)..rank {
            acc -= a[j][i] * beta_pivot[j];
        }
        beta_pivot[i] = acc / r_diag[i];
    }

    // Invert R, then bread = R^-1 R^-T (still in pivot order).
    let mut r_inv = DMatrix::<f64>::zeros(rank, rank);
    for j in (0..rank).rev() {
        r_inv[(j, j)] = 1.0 / r_diag[j];
        for i in (0..j).rev() {
            let mut acc = 0.0;
            for l in (i + 1)..=j {
                acc += a[l][i] * r_inv[(l, j)];
            }
            r_inv[(i, j)] = -acc / r_diag[i];
        }
    }
    let bread_pivot = &r_inv * r_inv.transpose();

    // Present kept columns in their original order.
    let mut kept: Vec<usize> = perm[..rank].to_vec();
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by_key(|&i| kept[i]);
    kept.sort_unstable();
    let coefficients: Vec<f64> = order.iter().map(|&i| beta_pivot[i]).collect();
    let names: Vec<String> = kept.iter().map(|&c| absorbed.names[c].clone()).collect();
    let mut bread_inv = DMatrix::<f64>::zeros(rank, rank);
    for (i_new, &i_old) in order.iter().enumerate() {
        for (j_new, &j_old) in order.iter().enumerate() {
            bread_inv[(i_new, j_new)] = bread_pivot[(i_old, j_old)];
        }
    }

    let mut dropped_idx: Vec<usize> = perm[rank..].to_vec();
    dropped_idx.sort_unstable();
    let dropped: Vec<DroppedColumn> = dropped_idx
        .iter()
        .map(|&c| DroppedColumn {
            name: absorbed.names[c].clone(),
            reason: "collinear with retained columns (pivot below tolerance)".into(),
        })
        .collect();

    let mut fitted = vec![0.0f64; n];
    for (&c, b) in kept.iter().zip(&coefficients) {
        let col = &absorbed.cols[c];
        for i in 0..n {
            fitted[i] += col[i] * b;
        }
    }
    let mut residuals = vec![0.0f64; n];
    let mut weighted_ssr = 0.0f64;
    for i in 0..n {
        let e = absorbed.y[i] - fitted[i];
        residuals[i] = e;
        weighted_ssr += absorbed.weights[i] * e * e;
    }

    Ok(WlsFit {
        names,
        coefficients,
        kept,
        dropped,
        bread_inv,
        residuals,
        fitted,
        weighted_ssr,
        n_obs: n,
        df_model: rank + absorbed.absorbed_df,
    })
}

/// CR1 cluster sandwich: bread * (sum_g s_g s_g') * bread scaled by
/// G/(G-1) * (N-1)/(N-K), with s_g the within-cluster sum of w_i x_i e_i.
pub fn cluster_vcov(fit: &WlsFit, absorbed: &AbsorbedDesign) -> Result<DMatrix<f64>, RegressError> {
    let g = absorbed.n_clusters;
    if g < 2 {
        return Err(RegressError::SingleCluster(g));
    }
    let n = fit.n_obs;
    let k = fit.kept.len();
    if n <= fit.df_model {
        return Err(RegressError::Saturated { n_obs: n, df_model: fit.df_model });
    }

    let mut scores = vec![0.0f64; g * k];
    for i in 0..n {
        let we = absorbed.weights[i] * fit.residuals[i];
        let row = absorbed.cluster_ids[i] * k;
        for (j, &c) in fit.kept.iter().enumerate() {
            scores[row + j] += we * absorbed.cols[c][i];
        }
    }
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for gi in 0..g {
        let s = &scores[gi * k..(gi + 1) * k];
        for a in 0..k {
            for b in a..k {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }

    let scale = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - fit.df_model as f64));
    let vcov = &fit.bread_inv * meat * &fit.bread_inv * scale;
    Ok(symmetrize(vcov))
}

/// Heteroskedasticity-robust (HC0) sandwich, no small-sample scaling.
pub fn hc0_vcov(fit: &WlsFit, absorbed: &AbsorbedDesign) -> DMatrix<f64> {
    let n = fit.n_obs;
    let k = fit.kept.len();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let we = absorbed.weights[i] * fit.residuals[i];
        for (a, &ca) in fit.kept.iter().enumerate() {
            let xa = absorbed.cols[ca][i] * we;
            for (b, &cb) in fit.kept.iter().enumerate().skip(a) {
                meat[(a, b)] += xa * absorbed.cols[cb][i] * we;
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    symmetrize(&fit.bread_inv * meat * &fit.bread_inv)
}

/// Classical variance sigma^2 (X'WX)^-1 with sigma^2 the weighted SSR over
/// residual degrees of freedom. Used as the naive benchmark the clustered
/// correction is compared against.
pub fn iid_vcov(fit: &WlsFit) -> Result<DMatrix<f64>, RegressError> {
    if fit.n_obs <= fit.df_model {
        return Err(RegressError::Saturated { n_obs: fit.n_obs, df_model: fit.df_model });
    }
    let sigma2 = fit.weighted_ssr / (fit.n_obs - fit.df_model) as f64;
    Ok(&fit.bread_inv * sigma2)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn residual_norm2(col: &[f64], from_row: usize) -> f64 {
    col[from_row..].iter().map(|v| v * v).sum()
}

/// A fit bundled with its clustered variance: what estimator modules consume.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub dropped: Vec<DroppedColumn>,
    pub weighted_ssr: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub df_model: usize,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.se[i])
    }
}

/// Absorb, solve, and attach the CR1 clustered variance in one call.
pub fn fit_clustered(design: &Design, opts: &AbsorbOptions) -> Result<FitResult, RegressError> {
    let absorbed = absorb_fe(design, opts)?;
    let fit = wls_fit(&absorbed)?;
    let vcov = cluster_vcov(&fit, &absorbed)?;
    let se: Vec<f64> = (0..fit.kept.len()).map(|i| vcov[(i, i)].sqrt()).collect();
    Ok(FitResult {
        names: fit.names.clone(),
        coefficients: fit.coefficients.clone(),
        se,
        vcov,
        dropped: fit.dropped.clone(),
        weighted_ssr: fit.weighted_ssr,
        n_obs: fit.n_obs,
        n_clusters: design.n_clusters,
        df_model: fit.df_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(y: Vec<f64>, cols: Vec<(&str, Vec<f64>)>, weights: Vec<f64>) -> Design {
        let n = y.len();
        Design {
            y,
            names: cols.iter().map(|(n, _)| n.to_string()).collect(),
            cols: cols.into_iter().map(|(_, c)| c).collect(),
            weights,
            fe: vec![],
            cluster_ids: (0..n).collect(),
            n_clusters: n,
        }
    }

    #[test]
    fn demeaning_one_dimension() {
        let mut d = design(vec![1.0, 3.0, 5.0], vec![("x", vec![0.0, 0.0, 0.0])], vec![1.0; 3]);
        d.fe.push(FeGroups { name: "g".into(), ids: vec![0, 0, 1], n_groups: 2 });
        let absorbed = absorb_fe(&d, &AbsorbOptions::default()).unwrap();
        assert_eq!(absorbed.y, vec![-1.0, 1.0, 0.0]);
        assert_eq!(absorbed.sweeps, 1);
    }

    #[test]
    fn demeaning_is_idempotent() {
        let mut d = design(
            vec![-1.0, 1.0, 0.0],
            vec![("x", vec![0.5, -0.5, 0.0])],
            vec![1.0; 3],
        );
        d.fe.push(FeGroups { name: "g".into(), ids: vec![0, 0, 1], n_groups: 2 });
        let absorbed = absorb_fe(&d, &AbsorbOptions::default()).unwrap();
        assert_eq!(absorbed.y, vec![-1.0, 1.0, 0.0]);
        assert_eq!(absorbed.cols[0], vec![0.5, -0.5, 0.0]);
    }

    #[test]
    fn exact_proportional_fit() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = design(y, vec![("x", x)], vec![0.5, 1.0, 2.0, 3.0]);
        let fit = wls_fit(&absorb_fe(&d, &AbsorbOptions::default()).unwrap()).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!(fit.weighted_ssr < 1e-20);
    }

    #[test]
    fn three_point_normal_equation_value() {
        // Explicit normal-equation oracle for y on x (no intercept, unit
        // weights): beta = sum(xy) / sum(x^2).
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 4.0];
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let oracle = sxy / sxx;
        assert!((oracle - 17.0 / 14.0).abs() < 1e-15);

        let d = design(y, vec![("x", x)], vec![1.0; 3]);
        let fit = wls_fit(&absorb_fe(&d, &AbsorbOptions::default()).unwrap()).unwrap();
        assert!((fit.coefficients[0] - 17.0 / 14.0).abs() < 1e-14);
    }

    #[test]
    fn duplicated_column_is_dropped_and_reported() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let y = vec![1.1, 1.9, 3.2, 3.8, 5.1];
        let d = design(
            y.clone(),
            vec![("x", x.clone()), ("x_copy", x.clone())],
            vec![1.0; 5],
        );
        let fit = wls_fit(&absorb_fe(&d, &AbsorbOptions::default()).unwrap()).unwrap();
        assert_eq!(fit.names, vec!["x".to_string()]);
        assert_eq!(fit.dropped.len(), 1);
        assert_eq!(fit.dropped[0].name, "x_copy");

        // Dropping the collinear copy leaves fitted values unchanged.
        let clean = design(y, vec![("x", x)], vec![1.0; 5]);
        let clean_fit = wls_fit(&absorb_fe(&clean, &AbsorbOptions::default()).unwrap()).unwrap();
        for (a, b) in fit.fitted.iter().zip(&clean_fit.fitted) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn unit_weight_fit_matches_pseudo_inverse_oracle() {
        // Oracle: beta = pinv(X) y via SVD, an independent algebraic route.
        let n = 12;
        let x1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let x2: Vec<f64> = (0..n).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let ones = vec![1.0; n];
        let y: Vec<f64> = (0..n)
            .map(|i| 0.5 + 1.5 * x1[i] - 0.8 * x2[i] + ((i * 7 % 5) as f64) * 0.01)
            .collect();

        let mut xmat = DMatrix::<f64>::zeros(n, 3);
        for i in 0..n {
            xmat[(i, 0)] = ones[i];
            xmat[(i, 1)] = x1[i];
            xmat[(i, 2)] = x2[i];
        }
        let yvec = nalgebra::DVector::from_column_slice(&y);
        let pinv = xmat.svd(true, true).pseudo_inverse(1e-13).unwrap();
        let oracle = pinv * yvec;

        let d = design(y, vec![("one", ones), ("x1", x1), ("x2", x2)], vec![1.0; n]);
        let fit = wls_fit(&absorb_fe(&d, &AbsorbOptions::default()).unwrap()).unwrap();
        for j in 0..3 {
            assert!(
                (fit.coefficients[j] - oracle[j]).abs() < 1e-10,
                "coef {j}: {} vs {}",
                fit.coefficients[j],
                oracle[j]
            );
        }
    }

    fn clustered_toy() -> Design {
        // 8 clusters x 3 rows; x varies at the cluster level plus a within
        // perturbation, y has a cluster error component.
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut ones = Vec::new();
        let mut cluster = Vec::new();
        for g in 0..8usize {
            let zg = (g as f64 * 1.3).sin();
            let ug = (g as f64 * 0.9).cos() * 0.5;
            for r in 0..3usize {
                let xi = zg + (r as f64 - 1.0) * 0.1;
                x.push(xi);
                ones.push(1.0);
                y.push(0.3 + 1.0 * xi + ug + ((g * 3 + r) as f64 * 0.37).sin() * 0.05);
                cluster.push(g);
            }
        }
        Design {
            y,
            names: vec!["one".into(), "x".into()],
            cols: vec![ones, x],
            weights: vec![1.0; 24],
            fe: vec![],
            cluster_ids: cluster,
            n_clusters: 8,
        }
    }

    #[test]
    fn own_cluster_equals_hc0_times_small_sample_factor() {
        let mut d = clustered_toy();
        d.cluster_ids = (0..d.y.len()).collect();
        d.n_clusters = d.y.len();
        let absorbed = absorb_fe(&d, &AbsorbOptions::default()).unwrap();
        let fit = wls_fit(&absorbed).unwrap();
        let vc = cluster_vcov(&fit, &absorbed).unwrap();
        let hc = hc0_vcov(&fit, &absorbed);
        let n = fit.n_obs as f64;
        let k = fit.df_model as f64;
        let factor = (n / (n - 1.0)) * ((n - 1.0) / (n - k));
        for i in 0..2 {
            for j in 0..2 {
                assert!((vc[(i, j)] - hc[(i, j)] * factor).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn within_cluster_duplication_inflates_clustered_se() {
        // Duplicate each row within its cluster: perfectly dependent rows.
        let base = clustered_toy();
        let mut d = base.clone();
        let n = base.y.len();
        for i in 0..n {
            d.y.push(base.y[i]);
            d.cols[0].push(base.cols[0][i]);
            d.cols[1].push(base.cols[1][i]);
            d.weights.push(1.0);
            d.cluster_ids.push(base.cluster_ids[i]);
        }
        let absorbed = absorb_fe(&d, &AbsorbOptions::default()).unwrap();
        let fit = wls_fit(&absorbed).unwrap();
        let clustered = cluster_vcov(&fit, &absorbed).unwrap();
        let naive = iid_vcov(&fit).unwrap();
        assert!(
            clustered[(1, 1)].sqrt() > naive[(1, 1)].sqrt(),
            "clustered SE should exceed the iid-formula SE on dependent rows"
        );
    }

    #[test]
    fn weight_rescaling_changes_nothing() {
        let mut d = clustered_toy();
        d.weights = (0..d.y.len()).map(|i| 1.0 + (i % 5) as f64).collect();
        let absorbed = absorb_fe(&d, &AbsorbOptions::default()).unwrap();
        let fit = wls_fit(&absorbed).unwrap();
        let vc = cluster_vcov(&fit, &absorbed).unwrap();

        let mut scaled = d.clone();
        for w in scaled.weights.iter_mut() {
            *w *= 37.5;
        }
        let absorbed2 = absorb_fe(&scaled, &AbsorbOptions::default()).unwrap();
        let fit2 = wls_fit(&absorbed2).unwrap();
        let vc2 = cluster_vcov(&fit2, &absorbed2).unwrap();
        for j in 0..2 {
            assert!((fit.coefficients[j] - fit2.coefficients[j]).abs() < 1e-10);
            assert!((vc[(j, j)].sqrt() - vc2[(j, j)].sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn vcov_is_symmetric_psd() {
        let d = clustered_toy();
        let absorbed = absorb_fe(&d, &AbsorbOptions::default()).unwrap();
        let fit = wls_fit(&absorbed).unwrap();
        let vc = cluster_vcov(&fit, &absorbed).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((vc[(i, j)] - vc[(j, i)]).abs() < 1e-14);
            }
        }
        let eigen = vc.clone().symmetric_eigen();
        for ev in eigen.eigenvalues.iter() {
            assert!(*ev > -1e-10, "eigenvalue {ev} below PSD tolerance");
        }
    }

    #[test]
    fn two_fe_dimensions_match_dense_dummies_small_case() {
        // 6-row panel, two FE dimensions, one regressor.
        let y = vec![1.0, 2.0, 3.5, 2.0, 4.0, 5.5];
        let x = vec![0.0, 1.0, 2.0, 0.5, 1.5, 3.0];
        let dim1 = vec![0usize, 0, 1, 1, 2, 2];
        let dim2 = vec![0usize, 1, 0, 1, 0, 1];
        let w = vec![1.0, 2.0, 1.0, 1.5, 1.0, 0.5];

        let mut absorbed_design = design(y.clone(), vec![("x", x.clone())], w.clone());
        absorbed_design.fe.push(FeGroups { name: "a".into(), ids: dim1.clone(), n_groups: 3 });
        absorbed_design.fe.push(FeGroups { name: "b".into(), ids: dim2.clone(), n_groups: 2 });
        let fit_absorbed =
            wls_fit(&absorb_fe(&absorbed_design, &AbsorbOptions::default()).unwrap()).unwrap();

        // Dense route: explicit indicator columns, collinearity handled by the
        // rank rule.
        let mut cols: Vec<(&str, Vec<f64>)> = vec![("x", x)];
        let d1_cols: Vec<Vec<f64>> = (0..3)
            .map(|g| dim1.iter().map(|&i| if i == g { 1.0 } else { 0.0 }).collect())
            .collect();
        let d2_cols: Vec<Vec<f64>> = (0..2)
            .map(|g| dim2.iter().map(|&i| if i == g { 1.0 } else { 0.0 }).collect())
            .collect();
        let names = ["a0", "a1", "a2", "b0", "b1"];
        for (j, c) in d1_cols.into_iter().chain(d2_cols).enumerate() {
            cols.push((names[j], c));
        }
        let dense = design(y, cols, w);
        let fit_dense = wls_fit(&absorb_fe(&dense, &AbsorbOptions::default()).unwrap()).unwrap();

        let beta_abs = fit_absorbed.coefficients[0];
        let beta_dense = fit_dense.coefficient_named("x");
        assert!(
            (beta_abs - beta_dense).abs() < 1e-8 * beta_dense.abs().max(1.0),
            "absorbed {beta_abs} vs dense {beta_dense}"
        );
    }

    impl WlsFit {
        fn coefficient_named(&self, name: &str) -> f64 {
            let i = self.names.iter().position(|n| n == name).unwrap();
            self.coefficients[i]
        }
    }

    #[test]
    fn error_paths() {
        let d = design(vec![], vec![], vec![]);
        assert!(matches!(absorb_fe(&d, &AbsorbOptions::default()), Err(RegressError::EmptyDesign)));

        let zero_col = design(vec![1.0, 2.0], vec![("z", vec![0.0, 0.0])], vec![1.0, 1.0]);
        let absorbed = absorb_fe(&zero_col, &AbsorbOptions::default()).unwrap();
        assert!(matches!(wls_fit(&absorbed), Err(RegressError::AllColumnsDropped(_))));

        let mut single = clustered_toy();
        single.cluster_ids = vec![0; single.y.len()];
        single.n_clusters = 1;
        let absorbed = absorb_fe(&single, &AbsorbOptions::default()).unwrap();
        let fit = wls_fit(&absorbed).unwrap();
        assert!(matches!(cluster_vcov(&fit, &absorbed), Err(RegressError::SingleCluster(1))));
    }

    #[test]
    fn non_convergence_reports_sweep_count() {
        let mut d = design(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![("x", vec![1.0, 0.0, 0.0, 1.0])],
            vec![1.0, 2.0, 3.0, 4.0],
        );
        d.fe.push(FeGroups { name: "a".into(), ids: vec![0, 0, 1, 1], n_groups: 2 });
        d.fe.push(FeGroups { name: "b".into(), ids: vec![0, 1, 0, 1], n_groups: 2 });
        let strict = AbsorbOptions { tolerance: 1e-300, max_sweeps: 3 };
        assert!(matches!(absorb_fe(&d, &strict), Err(RegressError::NonConvergence(3))));
    }
}
