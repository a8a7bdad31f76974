//! Ground-truth generation: a two-period model of prosecutor effort solved
//! in closed form, plus a county-panel simulator built on it. Every
//! estimator in the crate is validated against panels produced here, whose
//! true effect paths, signal variance, and cycle shape are sealed in a
//! [`TruthRecord`].
//!
//! The model: an official chooses effort `e1` (the period before an
//! election) and `e2` (the election period) against quadratic cost, with a
//! unitary per-effort return, wage `w`, discount `delta`, and a reelection
//! prize `V` scaled by the reelection probability. Sentencing intensity is
//! linear in effort, `s(e) = sigma * e`, and the reelection probability is
//! linear with a larger slope on election-period intensity:
//! `P = clamp(psi * (pi + alpha1 * s1 + alpha2 * s2), 0, 1 - EPS)`. The
//! linear form satisfies the maintained sign and curvature assumptions and
//! makes the first-order conditions solvable exactly:
//!
//! ```text
//! e1 = (1 + delta^2 psi alpha1 sigma V) / 2
//! e2 = (1 + delta   psi alpha2 sigma V) / 2
//! ```

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use thiserror::Error;

use crate::panel::{
    ElectionCalendar, Frequency, PanelDataset, PanelError, PanelObservation, ELECTION_MONTH,
};

/// Keeps the reelection probability strictly below one.
pub const CLAMP_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid agent parameters: {0}")]
    InvalidParams(String),
    #[error("optimal efforts reach the probability clamp (P = {p:.6}); shrink psi, V, or the alphas")]
    ClampRegion { p: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// Primitives of the two-period effort problem.
#[derive(Debug, Clone, Copy)]
pub struct AgentParams {
    /// Discount factor, in (0, 1].
    pub delta: f64,
    /// Value of reelection, positive.
    pub v: f64,
    /// Probability scale, nonnegative.
    pub psi: f64,
    /// Electoral safety shifter; enters the probability level only.
    pub pi: f64,
    /// Per-period wage; cancels from the first-order conditions.
    pub w: f64,
    /// Effort-to-intensity slope, positive.
    pub sigma: f64,
    /// Probability slope on pre-election intensity.
    pub alpha1: f64,
    /// Probability slope on election-period intensity; at least `alpha1`.
    pub alpha2: f64,
}

impl AgentParams {
    pub fn validate(&self) -> Result<(), DgpError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(DgpError::InvalidParams(format!("delta must be in (0,1], got {}", self.delta)));
        }
        if !(self.v > 0.0) {
            return Err(DgpError::InvalidParams(format!("V must be positive, got {}", self.v)));
        }
        if !(self.psi >= 0.0) {
            return Err(DgpError::InvalidParams(format!("psi must be nonnegative, got {}", self.psi)));
        }
        if !(self.sigma > 0.0) {
            return Err(DgpError::InvalidParams(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.alpha1 > 0.0) {
            return Err(DgpError::InvalidParams(format!("alpha1 must be positive, got {}", self.alpha1)));
        }
        // alpha1 = alpha2 is the boundary where the effort gap closes.
        if !(self.alpha2 >= self.alpha1) {
            return Err(DgpError::InvalidParams(format!(
                "alpha2 ({}) must be at least alpha1 ({})",
                self.alpha2, self.alpha1
            )));
        }
        Ok(())
    }

    /// Reelection probability at intensities (s1, s2).
    pub fn reelection_probability(&self, s1: f64, s2: f64) -> f64 {
        let raw = self.psi * (self.pi + self.alpha1 * s1 + self.alpha2 * s2);
        raw.clamp(0.0, 1.0 - CLAMP_EPS)
    }

    fn probability_is_interior(&self, s1: f64, s2: f64) -> bool {
        let raw = self.psi * (self.pi + self.alpha1 * s1 + self.alpha2 * s2);
        raw > 0.0 && raw < 1.0 - CLAMP_EPS
    }

    /// Payoff of the pre-election period problem as a function of e1.
    pub fn objective_period1(&self, e1: f64, e2: f64) -> f64 {
        -e1 * e1
            + self.w
            + e1
            + self.delta
                * self.delta
                * self.reelection_probability(self.sigma * e1, self.sigma * e2)
                * self.v
    }

    /// Payoff of the election-period problem as a function of e2.
    pub fn objective_period2(&self, e1: f64, e2: f64) -> f64 {
        -e2 * e2
            + self.w
            + e2
            + self.delta * self.reelection_probability(self.sigma * e1, self.sigma * e2) * self.v
    }
}

/// Optimal efforts and the implied sentencing intensities.
#[derive(Debug, Clone, Copy)]
pub struct AgentSolution {
    pub e1: f64,
    pub e2: f64,
    pub s1: f64,
    pub s2: f64,
}

impl AgentSolution {
    pub fn intensity_gap(&self) -> f64 {
        self.s2 - self.s1
    }
}

/// Closed-form solution of the first-order conditions. Errors if the
/// parameters push the reelection probability onto its clamp, where the
/// linear first-order conditions no longer describe the optimum.
pub fn solve_agent(params: &AgentParams) -> Result<AgentSolution, DgpError> {
    params.validate()?;
    let e1 =
        (1.0 + params.delta * params.delta * params.psi * params.alpha1 * params.sigma * params.v) / 2.0;
    let e2 = (1.0 + params.delta * params.psi * params.alpha2 * params.sigma * params.v) / 2.0;
    let s1 = params.sigma * e1;
    let s2 = params.sigma * e2;
    if params.psi > 0.0 && !params.probability_is_interior(s1, s2) {
        let p = params.reelection_probability(s1, s2);
        return Err(DgpError::ClampRegion { p });
    }
    Ok(AgentSolution { e1, e2, s1, s2 })
}

/// Closed-form intensity gap `s2 - s1` as an affine function of
/// `k = alpha2 - alpha1` holding the other primitives fixed:
/// `gap = slope * k + intercept` with `slope = sigma^2 delta psi V / 2` and
/// `intercept = sigma^2 delta psi V alpha1 (1 - delta) / 2`.
pub fn gap_affine_coefficients(params: &AgentParams) -> (f64, f64) {
    let base = params.sigma * params.sigma * params.delta * params.psi * params.v / 2.0;
    (base, base * params.alpha1 * (1.0 - params.delta))
}

/// Maximizes one period's objective numerically: coarse scan to bracket,
/// then golden-section refinement.
fn maximize_objective(f: impl Fn(f64) -> f64, upper: f64) -> f64 {
    let n_scan = 400usize;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=n_scan {
        let x = upper * i as f64 / n_scan as f64;
        let v = f(x);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut lo = upper * best_i.saturating_sub(1) as f64 / n_scan as f64;
    let mut hi = upper * (best_i + 1).min(n_scan) as f64 / n_scan as f64;
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..90 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Numerical solution of the two period problems by alternating golden-
/// section best responses from a neutral start. An independent check on the
/// closed form; with the linear probability the cross-dependence vanishes
/// in the interior, so a few rounds suffice.
pub fn solve_agent_numeric(params: &AgentParams) -> Result<AgentSolution, DgpError> {
    params.validate()?;
    let amax = params.alpha1.max(params.alpha2);
    let upper = 1.0 + params.psi * amax * params.sigma * params.v;
    let mut e1 = 0.25 * upper;
    let mut e2 = 0.25 * upper;
    for _ in 0..4 {
        e1 = maximize_objective(|x| params.objective_period1(x, e2), upper);
        e2 = maximize_objective(|x| params.objective_period2(e1, x), upper);
    }
    Ok(AgentSolution { e1, e2, s1: params.sigma * e1, s2: params.sigma * e2 })
}

#[derive(Debug, Clone)]
pub struct Prop1Report {
    pub points: usize,
    pub violations: usize,
    pub min_gap: f64,
    /// Largest |closed-form effort - numerical maximizer effort| seen.
    pub max_numeric_deviation: f64,
}

/// Sweeps a parameter grid asserting the election-period intensity exceeds
/// the prior period's at every point; optionally cross-checks the closed
/// form against the numerical maximizer at each point.
pub fn check_proposition1(grid: &[AgentParams], numeric_check: bool) -> Result<Prop1Report, DgpError> {
    let mut violations = 0usize;
    let mut min_gap = f64::INFINITY;
    let mut max_dev = 0.0f64;
    for params in grid {
        let sol = solve_agent(params)?;
        let gap = sol.intensity_gap();
        if !(gap > 0.0) {
            violations += 1;
        }
        if gap < min_gap {
            min_gap = gap;
        }
        if numeric_check {
            let num = solve_agent_numeric(params)?;
            max_dev = max_dev.max((sol.e1 - num.e1).abs()).max((sol.e2 - num.e2).abs());
        }
    }
    Ok(Prop1Report { points: grid.len(), violations, min_gap, max_numeric_deviation: max_dev })
}

/// The 10^4-point grid used by the acceptance suite: 10 discount factors on
/// [0.05, 1], 10 reelection values on [0.1, 10], 10 base slopes, 10 slope
/// gaps. The fixed psi and pi keep the probability interior everywhere.
pub fn default_prop1_grid() -> Vec<AgentParams> {
    let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / 9.0;
    let mut grid = Vec::with_capacity(10_000);
    for di in 0..10 {
        for vi in 0..10 {
            for ai in 0..10 {
                for gi in 0..10 {
                    grid.push(AgentParams {
                        delta: lin(0.05, 1.0, di),
                        v: lin(0.1, 10.0, vi),
                        psi: 0.2,
                        pi: 0.1,
                        w: 1.0,
                        sigma: 1.0,
                        alpha1: lin(0.02, 0.2, ai),
                        alpha2: lin(0.02, 0.2, ai) + lin(0.01, 0.2, gi),
                    });
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone)]
pub struct Prop2Report {
    /// (alpha2 - alpha1, intensity gap) pairs along the sweep.
    pub gaps: Vec<(f64, f64)>,
    pub strictly_increasing: bool,
    pub slope: f64,
    pub intercept: f64,
    /// Largest |gap - (slope*k + intercept)| along the sweep.
    pub max_affine_error: f64,
}

/// Sweeps the slope difference `k = alpha2 - alpha1` holding everything
/// else fixed, and checks the intensity gap against its pinned affine form.
pub fn check_proposition2(base: &AgentParams, ks: &[f64]) -> Result<Prop2Report, DgpError> {
    let (slope, intercept) = gap_affine_coefficients(base);
    let mut gaps = Vec::with_capacity(ks.len());
    let mut max_err = 0.0f64;
    for &k in ks {
        if k < 0.0 {
            return Err(DgpError::InvalidParams(format!("sweep value k={k} must be nonnegative")));
        }
        let params = AgentParams { alpha2: base.alpha1 + k, ..*base };
        let sol = solve_agent(&params)?;
        let gap = sol.intensity_gap();
        max_err = max_err.max((gap - (slope * k + intercept)).abs());
        gaps.push((k, gap));
    }
    let strictly_increasing = gaps.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(Prop2Report { gaps, strictly_increasing, slope, intercept, max_affine_error: max_err })
}

/// True effect paths over relative time, in log points.
#[derive(Debug, Clone)]
pub enum EffectSpec {
    /// One path shared by every cohort; keys are relative times, missing
    /// keys mean zero.
    Homogeneous(BTreeMap<i64, f64>),
    /// One path per cohort offset slot, aligned with
    /// `SimConfig::cohort_offsets`.
    PerCohort(Vec<BTreeMap<i64, f64>>),
}

impl EffectSpec {
    pub fn none() -> Self {
        EffectSpec::Homogeneous(BTreeMap::new())
    }

    /// Election-year bump of `size` log points, zero elsewhere.
    pub fn bump(size: f64) -> Self {
        let mut path = BTreeMap::new();
        path.insert(0, size);
        EffectSpec::Homogeneous(path)
    }

    fn path_for_slot(&self, slot: usize) -> &BTreeMap<i64, f64> {
        match self {
            EffectSpec::Homogeneous(path) => path,
            EffectSpec::PerCohort(paths) => &paths[slot],
        }
    }

    fn at(&self, slot: usize, k: i64) -> f64 {
        self.path_for_slot(slot).get(&k).copied().unwrap_or(0.0)
    }
}

/// Simulator configuration. Outcomes are generated as
/// `baseline * exp(state FE + period FE + path(k) + A sin(2 pi k / L + phi)
/// + DA effect + district noise + idiosyncratic noise)`, so a regression on
/// the log outcome reads effects directly in log points.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub states: usize,
    pub districts_per_state: usize,
    pub counties_per_district: usize,
    pub start_year: i64,
    pub years: i64,
    pub frequency: Frequency,
    pub term_years: i64,
    /// Election-year offsets (mod term) assigned round-robin to districts
    /// within each state, so cohorts mix within every state.
    pub cohort_offsets: Vec<i64>,
    pub effects: EffectSpec,
    pub sin_amplitude: f64,
    pub sin_phase: f64,
    /// Outcome columns as (name, baseline mean of the level rate).
    pub outcomes: Vec<(String, f64)>,
    pub state_fe_sd: f64,
    pub period_fe_sd: f64,
    /// Time-invariant district-level noise; drives within-cluster error
    /// correlation.
    pub district_sd: f64,
    /// Per district-term effect; its square is the within-state signal
    /// variance a magnitude analysis should recover.
    pub da_effect_sd: f64,
    pub idio_sd: f64,
    pub pop_log_mean: f64,
    pub pop_log_sd: f64,
    /// Emit synthetic control columns (white share, income per capita).
    pub emit_controls: bool,
    pub seed: u64,
}

impl SimConfig {
    /// Small, fast, fully specified baseline the tests perturb.
    pub fn baseline() -> Self {
        Self {
            states: 10,
            districts_per_state: 8,
            counties_per_district: 1,
            start_year: 1986,
            years: 12,
            frequency: Frequency::Annual,
            term_years: 4,
            cohort_offsets: vec![0, 1, 2, 3],
            effects: EffectSpec::none(),
            sin_amplitude: 0.0,
            sin_phase: 0.0,
            outcomes: vec![
                ("admissions_per_1000".into(), 1.68),
                ("months_per_1000".into(), 141.73),
            ],
            state_fe_sd: 0.05,
            period_fe_sd: 0.03,
            district_sd: 0.05,
            da_effect_sd: 0.0,
            idio_sd: 0.10,
            pop_log_mean: 10.0,
            pop_log_sd: 1.0,
            emit_controls: false,
            seed: 20_260_101,
        }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let err = |msg: String| Err(DgpError::InvalidConfig(msg));
        if self.states == 0 || self.districts_per_state == 0 || self.counties_per_district == 0 {
            return err("states, districts_per_state, counties_per_district must be positive".into());
        }
        if self.years < 1 {
            return err(format!("years must be positive, got {}", self.years));
        }
        if self.term_years < 2 || self.term_years % 2 != 0 {
            return err(format!("term_years must be even and at least 2, got {}", self.term_years));
        }
        if self.cohort_offsets.is_empty() {
            return err("cohort_offsets must be nonempty".into());
        }
        for &o in &self.cohort_offsets {
            if o < 0 || o >= self.term_years {
                return err(format!("cohort offset {o} outside [0, {})", self.term_years));
            }
        }
        if let EffectSpec::PerCohort(paths) = &self.effects {
            if paths.len() != self.cohort_offsets.len() {
                return err(format!(
                    "{} cohort paths for {} cohort offsets",
                    paths.len(),
                    self.cohort_offsets.len()
                ));
            }
        }
        if self.outcomes.is_empty() {
            return err("at least one outcome column required".into());
        }
        for (name, baseline) in &self.outcomes {
            if !(*baseline > 0.0) {
                return err(format!("baseline for `{name}` must be positive, got {baseline}"));
            }
        }
        for (name, sd) in [
            ("state_fe_sd", self.state_fe_sd),
            ("period_fe_sd", self.period_fe_sd),
            ("district_sd", self.district_sd),
            ("da_effect_sd", self.da_effect_sd),
            ("idio_sd", self.idio_sd),
            ("pop_log_sd", self.pop_log_sd),
            ("sin_amplitude", self.sin_amplitude),
        ] {
            if !(sd >= 0.0) || !sd.is_finite() {
                return err(format!("{name} must be a nonnegative number, got {sd}"));
            }
        }
        Ok(())
    }

    fn term_length_periods(&self) -> i64 {
        self.term_years * self.frequency.periods_per_year()
    }
}

/// Sealed ground truth of a simulated panel, for oracle comparisons.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    /// True path per cohort label (first election year at or after start).
    pub paths_by_cohort: BTreeMap<i64, BTreeMap<i64, f64>>,
    /// Set when every cohort shares one path.
    pub homogeneous_path: Option<BTreeMap<i64, f64>>,
    /// Population share of each cohort label.
    pub cohort_shares: BTreeMap<i64, f64>,
    /// Share-weighted average of (path(k) - path(0)) over k != 0: what the
    /// interaction-weighted aggregate estimates under the omitted-election-
    /// year convention.
    pub vg_truth: f64,
    /// Within-state variance of the district-term effects.
    pub gamma_sq: f64,
    /// Realized officeholder effects keyed `district:term_index`, matching
    /// the synthetic tenure ids the magnitude analysis derives.
    pub da_effects: BTreeMap<String, f64>,
    pub sin_amplitude: f64,
    pub sin_phase: f64,
    pub seed: u64,
}

const TAG_STATE: u64 = 0x5354;
const TAG_PERIOD: u64 = 0x5045;
const TAG_DISTRICT: u64 = 0x4449;
const TAG_COUNTY: u64 = 0x434f;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn substream(seed: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix((tag << 32) ^ idx)))
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).unwrap().sample(rng)
}

/// Generates a county-by-period panel plus its sealed truth. Deterministic:
/// the same config yields a bit-identical dataset, with every random draw
/// tied to a (seed, entity) substream rather than a shared sequence.
pub fn simulate_panel(config: &SimConfig) -> Result<(PanelDataset, TruthRecord), DgpError> {
    config.validate()?;
    let ppy = config.frequency.periods_per_year();
    let term_periods = config.term_length_periods();
    let first_period = config.start_year * ppy;
    let n_periods = config.years * ppy;
    let periods: Vec<i64> = (0..n_periods).map(|j| first_period + j).collect();
    let window = (periods[0], *periods.last().unwrap());

    let state_fe: Vec<f64> = (0..config.states)
        .map(|s| normal(&mut substream(config.seed, TAG_STATE, s as u64), config.state_fe_sd))
        .collect();
    let period_fe: Vec<f64> = (0..n_periods as usize)
        .map(|t| normal(&mut substream(config.seed, TAG_PERIOD, t as u64), config.period_fe_sd))
        .collect();

    // Jensen correction so the level mean hits the configured baseline.
    let total_var = config.state_fe_sd.powi(2)
        + config.period_fe_sd.powi(2)
        + config.district_sd.powi(2)
        + config.da_effect_sd.powi(2)
        + config.idio_sd.powi(2);
    let log_baselines: Vec<f64> =
        config.outcomes.iter().map(|(_, b)| b.ln() - total_var / 2.0).collect();

    let n_counties = config.states * config.districts_per_state * config.counties_per_district;
    let mut observations = Vec::with_capacity(n_counties * n_periods as usize);
    let mut calendars = BTreeMap::new();
    let mut cohort_pop: BTreeMap<i64, f64> = BTreeMap::new();
    let mut true_da_effects: BTreeMap<String, f64> = BTreeMap::new();

    for s in 0..config.states {
        for d in 0..config.districts_per_state {
            let district_global = s * config.districts_per_state + d;
            let slot = d % config.cohort_offsets.len();
            let offset_years = config.cohort_offsets[slot];
            let cohort_label = config.start_year + offset_years;
            let offset_period = match config.frequency {
                Frequency::Annual => (config.start_year + offset_years).rem_euclid(term_periods),
                Frequency::Monthly => ((config.start_year + offset_years) * 12
                    + (ELECTION_MONTH as i64 - 1))
                    .rem_euclid(term_periods),
            };
            let calendar = ElectionCalendar::from_offset(offset_period, term_periods, window)?;

            let mut drng = substream(config.seed, TAG_DISTRICT, district_global as u64);
            let district_noise = normal(&mut drng, config.district_sd);
            // One effect per officeholder tenure in the window, in term order.
            let term_lo = calendar.term_index(window.0);
            let term_hi = calendar.term_index(window.1);
            let da_effects: BTreeMap<i64, f64> =
                (term_lo..=term_hi).map(|j| (j, normal(&mut drng, config.da_effect_sd))).collect();
            for (j, eff) in &da_effects {
                true_da_effects.insert(format!("d{district_global:04}:{j}"), *eff);
            }

            for c in 0..config.counties_per_district {
                let county_global = district_global * config.counties_per_district + c;
                let county_id = format!("c{county_global:05}");
                let mut crng = substream(config.seed, TAG_COUNTY, county_global as u64);
                let population = if config.pop_log_sd == 0.0 {
                    config.pop_log_mean.exp()
                } else {
                    LogNormal::new(config.pop_log_mean, config.pop_log_sd)
                        .map_err(|e| DgpError::InvalidConfig(e.to_string()))?
                        .sample(&mut crng)
                };
                let (white_share, income) = if config.emit_controls {
                    (
                        Some(crng.random_range(0.3..0.95)),
                        Some(crng.random_range(15_000.0..60_000.0)),
                    )
                } else {
                    (None, None)
                };
                calendars.insert(county_id.clone(), calendar.clone());
                *cohort_pop.entry(cohort_label).or_insert(0.0) += population;

                for (t_idx, &period) in periods.iter().enumerate() {
                    let k = crate::panel::relative_time(period, &calendar)
                        .expect("generated window is covered")
                        .value();
                    let cycle = config.sin_amplitude
                        * ((2.0 * std::f64::consts::PI * k as f64 / term_periods as f64)
                            + config.sin_phase)
                            .sin();
                    let shared = state_fe[s]
                        + period_fe[t_idx]
                        + config.effects.at(slot, k)
                        + cycle
                        + district_noise
                        + da_effects[&calendar.term_index(period)];
                    let outcomes: Vec<f64> = log_baselines
                        .iter()
                        .map(|lb| {
                            let idio = normal(&mut crng, config.idio_sd);
                            (lb + shared + idio).exp()
                        })
                        .collect();
                    observations.push(PanelObservation {
                        county_id: county_id.clone(),
                        state_id: format!("s{s:03}"),
                        district_id: format!("d{district_global:04}"),
                        period,
                        population,
                        outcomes,
                        controls: if config.emit_controls {
                            vec![white_share, income]
                        } else {
                            vec![]
                        },
                    });
                }
            }
        }
    }

    let outcome_names: Vec<String> = config.outcomes.iter().map(|(n, _)| n.clone()).collect();
    let control_names = if config.emit_controls {
        vec!["ctrl_white_share".to_string(), "ctrl_income_pc".to_string()]
    } else {
        vec![]
    };
    let dataset =
        PanelDataset::new(config.frequency, outcome_names, control_names, observations, calendars)?;

    let total_pop: f64 = cohort_pop.values().sum();
    let cohort_shares: BTreeMap<i64, f64> =
        cohort_pop.iter().map(|(l, p)| (*l, p / total_pop)).collect();

    let mut paths_by_cohort = BTreeMap::new();
    for (slot, &offset_years) in config.cohort_offsets.iter().enumerate() {
        paths_by_cohort
            .insert(config.start_year + offset_years, config.effects.path_for_slot(slot).clone());
    }

    let half = term_periods / 2;
    let mut vg_sum = 0.0;
    let mut vg_terms = 0usize;
    for k in -half..half {
        if k == 0 {
            continue;
        }
        let mut acc = 0.0;
        for (label, share) in &cohort_shares {
            let path = &paths_by_cohort[label];
            let at = |kk: i64| path.get(&kk).copied().unwrap_or(0.0);
            acc += share * (at(k) - at(0));
        }
        vg_sum += acc;
        vg_terms += 1;
    }
    let vg_truth = if vg_terms > 0 { vg_sum / vg_terms as f64 } else { 0.0 };

    let truth = TruthRecord {
        homogeneous_path: match &config.effects {
            EffectSpec::Homogeneous(p) => Some(p.clone()),
            EffectSpec::PerCohort(_) => None,
        },
        paths_by_cohort,
        cohort_shares,
        vg_truth,
        gamma_sq: config.da_effect_sd * config.da_effect_sd,
        da_effects: true_da_effects,
        sin_amplitude: config.sin_amplitude,
        sin_phase: config.sin_phase,
        seed: config.seed,
    };
    Ok((dataset, truth))
}
