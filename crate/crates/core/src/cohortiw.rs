//! Heterogeneity-robust cohort aggregation: cohort-by-relative-time
//! treatment effects from one saturated interaction regression, sample-share
//! weighting into a single aggregate, cluster pairs-bootstrap standard
//! errors, and a constructive demonstration of why the naive static
//! regression needs the correction.
//!
//! Cohorts are counties sharing an election-calendar offset. The saturated
//! regression interacts cohort indicators with relative-time indicators
//! (election year omitted), with state and period effects absorbed;
//! identification requires cohorts to vary within states. The aggregate
//!
//! ```text
//! v_g = (1/|g|) sum_{k in g} sum_e catt(e, k) * share(e | k)
//! ```
//!
//! averages the cohort effects with nonnegative shares that sum to one at
//! each relative time, where shares are the cohorts' weight mass among
//! observations at that relative time. Because the election year is the
//! omitted category, a negative `v_g` means the election year is relatively
//! high: the election-year effect in log points is `-v_g`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::design::{self, FeSet, RowSet};
use crate::dgp::{self, DgpError, EffectSpec, SimConfig};
use crate::eventstudy::{self, EventStudyError, EventStudySpec};
use crate::panel::{Frequency, PanelDataset, PanelError};
use crate::regress::{self, AbsorbOptions, Design, RegressError, WeightSpec};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    EventStudy(#[from] EventStudyError),
    #[error("no observations in the omitted election-year category")]
    NoElectionRows,
    #[error("every cohort cell at relative time {0} is empty or dropped")]
    AllCellsEmpty(i64),
    #[error("bootstrap needs at least 2 replications, got {0}")]
    TooFewReps(usize),
    #[error("bootstrap needs at least 2 districts, got {0}")]
    TooFewClusters(usize),
    #[error("bootstrap exhausted redraws: {redraws} redraw rounds for {reps} replications")]
    RedrawExhausted { redraws: usize, reps: usize },
    #[error("negative-weight construction failed after {attempts} attempts")]
    ConstructionFailed { attempts: usize },
}

#[derive(Debug, Clone)]
pub struct CattSpec {
    pub outcome: String,
    pub fe: FeSet,
    pub weights: WeightSpec,
}

impl CattSpec {
    pub fn new(outcome: impl Into<String>) -> Self {
        Self { outcome: outcome.into(), fe: FeSet::state_period(), weights: WeightSpec::Population }
    }
}

/// One cohort-by-relative-time cell.
#[derive(Debug, Clone, Copy)]
pub struct CattCell {
    pub cohort: i64,
    pub k: i64,
    pub estimate: f64,
    pub se: f64,
    /// Weight-mass share of this cohort among observations at `k`,
    /// renormalized over estimable cells. Filled by aggregation.
    pub share: f64,
}

#[derive(Debug, Clone)]
pub struct CattFit {
    pub cells: Vec<CattCell>,
    /// (cohort, k) pairs with no observations, excluded with a warning.
    pub empty_cells: Vec<(i64, i64)>,
    /// (cohort, k) pairs whose interaction column was dropped as collinear.
    pub collinear_cells: Vec<(i64, i64)>,
    pub n_obs: usize,
    pub n_clusters: usize,
}

/// Aggregated cohort effects.
#[derive(Debug, Clone)]
pub struct CohortAggregate {
    pub cells: Vec<CattCell>,
    /// Sample-share-weighted average of the cell estimates over `g`, the
    /// non-election relative times. Negative values mean the election year
    /// is relatively high.
    pub vg: f64,
    /// Number of relative times aggregated (|g|).
    pub n_relative_times: usize,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub warnings: Vec<String>,
}

impl CohortAggregate {
    /// Election-year effect in log points under the omitted-category sign
    /// convention.
    pub fn election_year_effect(&self) -> f64 {
        -self.vg
    }
}

fn interaction_name(cohort: i64, k: i64) -> String {
    format!("e={cohort},k={k}")
}

/// Shared machinery for the full-sample fit and bootstrap replicates.
struct CattEngine<'a> {
    data: &'a PanelDataset,
    spec: &'a CattSpec,
    outcome_idx: usize,
    ks: Vec<i64>,
    cohorts: Vec<i64>,
}

struct CattSolution {
    /// (cohort, k) -> (estimate, weight mass).
    cells: BTreeMap<(i64, i64), (f64, f64)>,
    empty_cells: Vec<(i64, i64)>,
    collinear_cells: Vec<(i64, i64)>,
    fit: regress::FitResult,
}

impl<'a> CattEngine<'a> {
    fn new(data: &'a PanelDataset, spec: &'a CattSpec) -> Result<Self, CohortError> {
        let outcome_idx = data.outcome_index(&spec.outcome)?;
        let t = data.half_term();
        let ks: Vec<i64> = (-t..t).filter(|k| *k != 0).collect();
        let cohorts = data.cohort_labels_distinct();
        Ok(Self { data, spec, outcome_idx, ks, cohorts })
    }

    /// Fits the saturated interaction regression on a row multiset. Each
    /// entry pairs an observation index with a replicate-local cluster id.
    fn solve(
        &self,
        rows: &[(usize, usize)],
        n_clusters: usize,
        want_se: bool,
    ) -> Result<CattSolution, CohortError> {
        let data = self.data;
        let obs = data.observations();

        let mut mass: BTreeMap<(i64, i64), f64> = BTreeMap::new();
        let mut election_rows = 0usize;
        for &(i, _) in rows {
            let w = match self.spec.weights {
                WeightSpec::Population => obs[i].population,
                WeightSpec::Unit => 1.0,
            };
            let k = data.rel_time(i);
            if k == 0 {
                election_rows += 1;
            } else {
                *mass.entry((data.cohort_label(i), k)).or_insert(0.0) += w;
            }
        }
        if election_rows == 0 {
            return Err(CohortError::NoElectionRows);
        }

        let mut live_cells: Vec<(i64, i64)> = Vec::new();
        let mut empty_cells: Vec<(i64, i64)> = Vec::new();
        for &e in &self.cohorts {
            for &k in &self.ks {
                if mass.get(&(e, k)).copied().unwrap_or(0.0) > 0.0 {
                    live_cells.push((e, k));
                } else {
                    empty_cells.push((e, k));
                }
            }
        }

        let n = rows.len();
        let mut names = Vec::with_capacity(live_cells.len());
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(live_cells.len());
        let cell_pos: BTreeMap<(i64, i64), usize> =
            live_cells.iter().enumerate().map(|(j, c)| (*c, j)).collect();
        for &(e, k) in &live_cells {
            names.push(interaction_name(e, k));
            cols.push(vec![0.0; n]);
        }
        for (r, &(i, _)) in rows.iter().enumerate() {
            let k = data.rel_time(i);
            if k == 0 {
                continue;
            }
            if let Some(&j) = cell_pos.get(&(data.cohort_label(i), k)) {
                cols[j][r] = 1.0;
            }
        }

        let y: Vec<f64> = rows.iter().map(|&(i, _)| obs[i].outcomes[self.outcome_idx]).collect();
        let weights: Vec<f64> = rows
            .iter()
            .map(|&(i, _)| match self.spec.weights {
                WeightSpec::Population => obs[i].population,
                WeightSpec::Unit => 1.0,
            })
            .collect();
        let cluster_ids: Vec<usize> = rows.iter().map(|&(_, c)| c).collect();

        let mut fe = Vec::new();
        if self.spec.fe.state {
            let (ids, ng) = densify(rows.iter().map(|&(i, _)| data.state_index(i)));
            fe.push(regress::FeGroups { name: "state".into(), ids, n_groups: ng });
        }
        if self.spec.fe.county {
            let (ids, ng) = densify(rows.iter().map(|&(i, _)| data.county_index(i)));
            fe.push(regress::FeGroups { name: "county".into(), ids, n_groups: ng });
        }
        if self.spec.fe.period {
            let (ids, ng) = densify(rows.iter().map(|&(i, _)| obs[i].period));
            fe.push(regress::FeGroups { name: "period".into(), ids, n_groups: ng });
        }

        let d = Design { y, names, cols, weights, fe, cluster_ids, n_clusters };
        let (fit, collinear_names) = if want_se {
            let f = regress::fit_clustered(&d, &AbsorbOptions::default())?;
            let dn: Vec<String> = f.dropped.iter().map(|x| x.name.clone()).collect();
            (f, dn)
        } else {
            // Point estimates only (bootstrap replicates): skip the sandwich.
            let absorbed = regress::absorb_fe(&d, &AbsorbOptions::default())?;
            let f = regress::wls_fit(&absorbed)?;
            let dn: Vec<String> = f.dropped.iter().map(|x| x.name.clone()).collect();
            let k = f.kept.len();
            (
                regress::FitResult {
                    names: f.names,
                    coefficients: f.coefficients,
                    se: vec![f64::NAN; k],
                    vcov: nalgebra::DMatrix::zeros(k, k),
                    dropped: f.dropped,
                    weighted_ssr: f.weighted_ssr,
                    n_obs: f.n_obs,
                    n_clusters,
                    df_model: f.df_model,
                },
                dn,
            )
        };

        let mut cells = BTreeMap::new();
        let mut collinear_cells = Vec::new();
        for &(e, k) in &live_cells {
            let name = interaction_name(e, k);
            if collinear_names.contains(&name) {
                collinear_cells.push((e, k));
            } else if let Some(est) = fit.coefficient(&name) {
                cells.insert((e, k), (est, mass[&(e, k)]));
            }
        }
        Ok(CattSolution { cells, empty_cells, collinear_cells, fit })
    }

    /// Share-weighted aggregate over the solution's cells. `None` when some
    /// relative time has no estimable cell.
    fn aggregate(&self, solution: &CattSolution) -> Option<f64> {
        let mut sum = 0.0;
        for &k in &self.ks {
            let total: f64 = self
                .cohorts
                .iter()
                .filter_map(|&e| solution.cells.get(&(e, k)).map(|(_, m)| m))
                .sum();
            if total <= 0.0 {
                return None;
            }
            let mut acc = 0.0;
            for &e in &self.cohorts {
                if let Some((est, m)) = solution.cells.get(&(e, k)) {
                    acc += est * (m / total);
                }
            }
            sum += acc;
        }
        Some(sum / self.ks.len() as f64)
    }
}

fn densify<K: Ord>(ids: impl Iterator<Item = K>) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut out = Vec::new();
    for id in ids {
        let next = map.len();
        out.push(*map.entry(id).or_insert(next));
    }
    (out, map.len())
}

fn full_sample_rows(data: &PanelDataset) -> (Vec<(usize, usize)>, usize) {
    let rows = RowSet::all(data);
    let (cluster_ids, n_clusters) = design::district_clusters(data, &rows);
    (rows.rows.into_iter().zip(cluster_ids).collect(), n_clusters)
}

/// Cohort-by-relative-time effects from the saturated interaction
/// regression, relative to the omitted election year.
pub fn fit_catt(data: &PanelDataset, spec: &CattSpec) -> Result<CattFit, CohortError> {
    let engine = CattEngine::new(data, spec)?;
    let (rows, n_clusters) = full_sample_rows(data);
    let solution = engine.solve(&rows, n_clusters, true)?;
    let mut cells = Vec::with_capacity(solution.cells.len());
    for (&(e, k), &(est, _)) in &solution.cells {
        let name = interaction_name(e, k);
        let se = solution.fit.se_of(&name).unwrap_or(f64::NAN);
        cells.push(CattCell { cohort: e, k, estimate: est, se, share: 0.0 });
    }
    Ok(CattFit {
        cells,
        empty_cells: solution.empty_cells,
        collinear_cells: solution.collinear_cells,
        n_obs: solution.fit.n_obs,
        n_clusters,
    })
}

/// Fits the saturated regression and aggregates it into `v_g` with
/// weight-mass shares matching the estimation weights, renormalized over
/// estimable cells at each relative time.
pub fn interaction_weighted(
    data: &PanelDataset,
    spec: &CattSpec,
) -> Result<CohortAggregate, CohortError> {
    let engine = CattEngine::new(data, spec)?;
    let (rows, n_clusters) = full_sample_rows(data);
    let solution = engine.solve(&rows, n_clusters, true)?;

    let mut warnings = Vec::new();
    for &(e, k) in &solution.empty_cells {
        warnings.push(format!(
            "cell (cohort {e}, k={k}) has no observations; excluded and shares renormalized"
        ));
    }
    for &(e, k) in &solution.collinear_cells {
        warnings.push(format!(
            "cell (cohort {e}, k={k}) dropped as collinear; excluded and shares renormalized"
        ));
    }

    let mut cells = Vec::new();
    let mut vg = 0.0;
    for &k in &engine.ks {
        let total: f64 = engine
            .cohorts
            .iter()
            .filter_map(|&e| solution.cells.get(&(e, k)).map(|(_, m)| m))
            .sum();
        if total <= 0.0 {
            return Err(CohortError::AllCellsEmpty(k));
        }
        for &e in &engine.cohorts {
            if let Some(&(est, m)) = solution.cells.get(&(e, k)) {
                let share = m / total;
                let name = interaction_name(e, k);
                let se = solution.fit.se_of(&name).unwrap_or(f64::NAN);
                cells.push(CattCell { cohort: e, k, estimate: est, se, share });
                vg += est * share;
            }
        }
    }
    vg /= engine.ks.len() as f64;

    Ok(CohortAggregate {
        cells,
        vg,
        n_relative_times: engine.ks.len(),
        n_obs: solution.fit.n_obs,
        n_clusters,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct BootstrapSe {
    pub se: f64,
    pub reps: usize,
    pub seed: u64,
    /// Replicates redrawn because a relative time lost every cell.
    pub redraws: usize,
    pub vg_replicates: Vec<f64>,
}

/// Cluster pairs bootstrap for `v_g`: districts are resampled with
/// replacement, the aggregate recomputed per replicate, and the standard
/// error is the standard deviation across replicates. Each replicate owns
/// an RNG stream keyed by (seed, replicate, attempt), so results are
/// deterministic regardless of scheduling; replicates that lose an entire
/// relative time are redrawn, with a hard cap of ten redraw rounds per
/// replicate.
pub fn bootstrap_se(
    data: &PanelDataset,
    spec: &CattSpec,
    reps: usize,
    seed: u64,
) -> Result<BootstrapSe, CohortError> {
    if reps < 2 {
        return Err(CohortError::TooFewReps(reps));
    }
    let n_districts = data.n_districts();
    if n_districts < 2 {
        return Err(CohortError::TooFewClusters(n_districts));
    }
    let engine = CattEngine::new(data, spec)?;
    // Surface specification problems on the full sample before resampling;
    // replicate-level failures after this point are degeneracies to redraw.
    {
        let (rows, n) = full_sample_rows(data);
        let solution = engine.solve(&rows, n, false)?;
        if engine.aggregate(&solution).is_none() {
            let k = engine
                .ks
                .iter()
                .copied()
                .find(|k| {
                    engine.cohorts.iter().all(|e| !solution.cells.contains_key(&(*e, *k)))
                })
                .unwrap_or(0);
            return Err(CohortError::AllCellsEmpty(k));
        }
    }

    // Row indices per district, in canonical order.
    let mut district_rows: Vec<Vec<usize>> = vec![Vec::new(); n_districts];
    for i in 0..data.n_obs() {
        district_rows[data.district_index(i)].push(i);
    }

    const MAX_ATTEMPTS: usize = 10;
    let results: Vec<Result<(f64, usize), CohortError>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            use rand::{Rng, SeedableRng};
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(mix(seed, rep as u64, attempt as u64));
                let mut rows: Vec<(usize, usize)> = Vec::with_capacity(data.n_obs());
                for draw in 0..n_districts {
                    let d = rng.random_range(0..n_districts);
                    for &i in &district_rows[d] {
                        rows.push((i, draw));
                    }
                }
                // A resample can lose the omitted category, a whole relative
                // time, the cohort mixing that identifies the interactions,
                // or enough variation to estimate at all; every such
                // degeneracy is a redraw.
                match engine.solve(&rows, n_districts, false) {
                    Ok(solution) if solution.collinear_cells.is_empty() => {
                        if let Some(vg) = engine.aggregate(&solution) {
                            return Ok((vg, attempt));
                        }
                    }
                    Ok(_) | Err(CohortError::Regress(_)) | Err(CohortError::NoElectionRows) => {}
                    Err(other) => return Err(other),
                }
            }
            Err(CohortError::RedrawExhausted { redraws: MAX_ATTEMPTS, reps })
        })
        .collect();

    let mut vgs = Vec::with_capacity(reps);
    let mut redraws = 0usize;
    for r in results {
        let (vg, attempts) = r?;
        vgs.push(vg);
        redraws += attempts;
    }
    let mean = vgs.iter().sum::<f64>() / vgs.len() as f64;
    let var = vgs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vgs.len() - 1) as f64;
    Ok(BootstrapSe { se: var.sqrt(), reps, seed, redraws, vg_replicates: vgs })
}

fn mix(seed: u64, rep: u64, attempt: u64) -> u64 {
    let mut z = seed
        ^ rep.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ attempt.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything the command-line report needs for one outcome row.
#[derive(Debug, Clone)]
pub struct IwReport {
    pub outcome: String,
    pub aggregate: CohortAggregate,
    pub bootstrap: BootstrapSe,
}

pub fn interaction_weighted_with_se(
    data: &PanelDataset,
    spec: &CattSpec,
    reps: usize,
    seed: u64,
) -> Result<IwReport, CohortError> {
    let aggregate = interaction_weighted(data, spec)?;
    let bootstrap = bootstrap_se(data, spec, reps, seed)?;
    Ok(IwReport { outcome: spec.outcome.clone(), aggregate, bootstrap })
}

/// One cell of the naive regression's implicit weighting.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitWeight {
    pub cohort: i64,
    pub k: i64,
    pub weight: f64,
    pub true_cell_effect: f64,
}

#[derive(Debug, Clone)]
pub struct NegativeWeightReport {
    /// Naive static two-way fixed-effects estimate of the election-year
    /// effect, in log points.
    pub naive_static: f64,
    /// Raw interaction-weighted aggregate (omitted-category convention).
    pub vg: f64,
    /// Election-year effect implied by the aggregate: -vg.
    pub iw_effect: f64,
    /// Common true election-year effect of every cohort.
    pub truth: f64,
    pub cohort_true_effects: Vec<(i64, f64)>,
    /// Implicit weight the naive regression places on each cohort-by-k cell.
    pub implicit_weights: Vec<ImplicitWeight>,
    pub min_weight: f64,
    pub attempts: usize,
}

#[derive(Debug, Clone)]
pub struct NegativeWeightParams {
    /// True election-year effect shared by all cohorts (log points).
    pub true_effect: f64,
    /// Candidate district counts per cohort within each state.
    pub count_grids: Vec<[usize; 4]>,
    /// Target naive estimates to try, as multiples of the true effect.
    pub target_multiples: Vec<f64>,
    pub states: usize,
    pub years: i64,
    pub start_year: i64,
}

impl Default for NegativeWeightParams {
    fn default() -> Self {
        Self {
            true_effect: 0.05,
            count_grids: vec![[4, 4, 1, 1], [5, 3, 1, 1], [4, 3, 2, 1]],
            target_multiples: vec![-0.6, -1.0, -0.3],
            states: 6,
            years: 12,
            start_year: 1986,
        }
    }
}

/// Builds a noiseless staggered panel on which the naive static two-way
/// fixed-effects estimate has the opposite sign of every cohort's true
/// election-year effect, while the interaction-weighted aggregate stays on
/// the truth. The construction combines unequal cohort sizes with
/// cohort-specific zero-sum paths over the non-election years: the zero-sum
/// constraint keeps every cohort's election-year level equal (so the common
/// true effect is unambiguous), and the size imbalance makes the naive
/// regression's implicit weights on off-election cells negative exactly
/// where the paths load.
pub fn negative_weight_demo(
    params: &NegativeWeightParams,
) -> Result<NegativeWeightReport, CohortError> {
    let tau = params.true_effect;
    let mut attempts = 0usize;

    for counts in &params.count_grids {
        for &target_mult in &params.target_multiples {
            attempts += 1;
            let total: usize = counts.iter().sum();
            let shares: [f64; 4] = std::array::from_fn(|e| counts[e] as f64 / total as f64);

            // Implicit cell weights of the naive regression in the balanced
            // cyclic design: c(e,k) = S_e ((1-S_e)/3 - S_{(e+k) mod 4}).
            let c = |e: usize, k: i64| -> f64 {
                let j = ((e as i64 + k).rem_euclid(4)) as usize;
                shares[e] * ((1.0 - shares[e]) / 3.0 - shares[j])
            };
            let ks = [-2i64, -1, 1];
            // Per cohort: ramp -M at the largest weight, +M at the smallest,
            // 0 at the middle; zero-sum by construction.
            let mut spread_total = 0.0;
            let mut patterns: [[f64; 3]; 4] = [[0.0; 3]; 4];
            for e in 0..4 {
                let cs: Vec<f64> = ks.iter().map(|&k| c(e, k)).collect();
                let (mut hi, mut lo) = (0usize, 0usize);
                for j in 1..3 {
                    if cs[j] > cs[hi] {
                        hi = j;
                    }
                    if cs[j] < cs[lo] {
                        lo = j;
                    }
                }
                if hi == lo {
                    continue;
                }
                patterns[e][hi] = -1.0;
                patterns[e][lo] = 1.0;
                spread_total += cs[hi] - cs[lo];
            }
            if spread_total <= 0.0 {
                continue;
            }
            let denom: f64 = shares.iter().map(|s| s * (1.0 - s)).sum();
            let target = target_mult * tau;
            let ramp = (tau - target) * denom / spread_total;

            let mut offsets = Vec::new();
            let mut paths = Vec::new();
            for e in 0..4 {
                for _ in 0..counts[e] {
                    offsets.push(e as i64);
                    let mut path = BTreeMap::new();
                    path.insert(0i64, tau);
                    for (j, &k) in ks.iter().enumerate() {
                        path.insert(k, ramp * patterns[e][j]);
                    }
                    paths.push(path);
                }
            }

            let config = SimConfig {
                states: params.states,
                districts_per_state: total,
                counties_per_district: 1,
                start_year: params.start_year,
                years: params.years,
                frequency: Frequency::Annual,
                term_years: 4,
                cohort_offsets: offsets,
                effects: EffectSpec::PerCohort(paths),
                sin_amplitude: 0.0,
                sin_phase: 0.0,
                outcomes: vec![("admissions_per_1000".into(), 1.68)],
                state_fe_sd: 0.0,
                period_fe_sd: 0.0,
                district_sd: 0.0,
                da_effect_sd: 0.0,
                idio_sd: 0.0,
                pop_log_mean: 10.0,
                pop_log_sd: 0.0,
                emit_controls: false,
                seed: 7,
            };
            let (panel, truth) = dgp::simulate_panel(&config)?;
            let logged = panel.derive_log("admissions_per_1000")?;

            let naive =
                eventstudy::fit_static(&logged, &EventStudySpec::new("log_admissions_per_1000"))?;
            let iw = interaction_weighted(&logged, &CattSpec::new("log_admissions_per_1000"))?;

            let cohort_true_effects: Vec<(i64, f64)> = truth
                .paths_by_cohort
                .iter()
                .map(|(label, path)| {
                    let at = |k: i64| path.get(&k).copied().unwrap_or(0.0);
                    let mean_off = (at(-2) + at(-1) + at(1)) / 3.0;
                    (*label, at(0) - mean_off)
                })
                .collect();

            let implicit_weights = implicit_cell_weights(&logged, &truth.paths_by_cohort)?;
            let min_weight =
                implicit_weights.iter().map(|w| w.weight).fold(f64::INFINITY, f64::min);

            let all_true_positive = cohort_true_effects.iter().all(|(_, t)| *t > 0.0);
            let flipped = naive.estimate < 0.0;
            let vg_on_truth = (-iw.vg - tau).abs() <= 0.01;
            if all_true_positive && flipped && vg_on_truth && min_weight < 0.0 {
                return Ok(NegativeWeightReport {
                    naive_static: naive.estimate,
                    vg: iw.vg,
                    iw_effect: -iw.vg,
                    truth: tau,
                    cohort_true_effects,
                    implicit_weights,
                    min_weight,
                    attempts,
                });
            }
        }
    }
    Err(CohortError::ConstructionFailed { attempts })
}

/// Implicit weights the naive static regression places on each cohort-by-k
/// cell: with the election indicator residualized against the fixed
/// effects, the estimate is `sum_cells weight(cell) * mean(cell)`, so a
/// cell's weight is its share of `w * d_resid` over `sum w d_resid d`.
pub fn implicit_cell_weights(
    data: &PanelDataset,
    truth_paths: &BTreeMap<i64, BTreeMap<i64, f64>>,
) -> Result<Vec<ImplicitWeight>, CohortError> {
    let rows = RowSet::all(data);
    let treated: Vec<f64> =
        rows.rows.iter().map(|&i| if data.rel_time(i) == 0 { 1.0 } else { 0.0 }).collect();
    let weights = design::weight_vector(data, WeightSpec::Population, &rows);
    let fe = design::fe_groups(data, FeSet::state_period(), &rows);
    let (cluster_ids, n_clusters) = design::district_clusters(data, &rows);
    let d = Design {
        y: treated.clone(),
        names: vec!["election".into()],
        cols: vec![treated.clone()],
        weights: weights.clone(),
        fe,
        cluster_ids,
        n_clusters,
    };
    // Absorbing turns y (here the indicator itself) into the residualized
    // indicator.
    let absorbed = regress::absorb_fe(&d, &AbsorbOptions::default())?;
    let d_resid = &absorbed.y;

    let mut denom = 0.0;
    for r in 0..rows.rows.len() {
        denom += weights[r] * d_resid[r] * treated[r];
    }
    let mut by_cell: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    for (r, &i) in rows.rows.iter().enumerate() {
        *by_cell.entry((data.cohort_label(i), data.rel_time(i))).or_insert(0.0) +=
            weights[r] * d_resid[r];
    }
    Ok(by_cell
        .into_iter()
        .map(|((cohort, k), num)| {
            let true_cell_effect =
                truth_paths.get(&cohort).and_then(|p| p.get(&k).copied()).unwrap_or(0.0);
            ImplicitWeight { cohort, k, weight: num / denom, true_cell_effect }
        })
        .collect())
}
