//! County-by-period panel data: ingestion, validation, election calendars,
//! relative time, and derived outcome columns.
//!
//! Periods are integers: calendar years for annual data, `year * 12 +
//! (month - 1)` for monthly data. Relative time `k` counts periods from the
//! nearest election, lands in `[-T, T-1]` with `T` equal to half the term
//! length, and resolves exact midpoints to the upcoming election so that
//! `k = -T`; `+T` and `-T` label the same period of the cycle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

/// Month (1-12) that anchors election periods when data is monthly.
/// General elections fall in November.
pub const ELECTION_MONTH: u32 = 11;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("missing required column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("columns `{0}` and `{1}` both present; exactly one may define election timing")]
    ConflictingCalendarColumns(String, String),
    #[error("no election timing column found (need `{0}` or `{1}`)")]
    NoCalendarColumn(String, String),
    #[error("{} row(s) failed validation:\n{}", .0.len(), format_issues(.0))]
    InvalidRows(Vec<RowIssue>),
    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),
    #[error("unknown control `{0}`")]
    UnknownControl(String),
    #[error("county `{county}`: period {period} not within half a term of any listed election")]
    UncoveredPeriod { county: String, period: i64 },
    #[error("invalid election calendar: {0}")]
    InvalidCalendar(String),
    #[error("outcome `{outcome}` must be positive to take logs; {count} nonpositive value(s)")]
    NonPositiveForLog { outcome: String, count: usize },
    #[error("negative sentence length {0} without life flag")]
    NegativeMonths(f64),
    #[error("dataset has no observations")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One validation failure, tied to a 1-based data row of the input file.
#[derive(Debug, Clone)]
pub struct RowIssue {
    pub row: usize,
    pub message: String,
}

fn format_issues(issues: &[RowIssue]) -> String {
    let mut out = String::new();
    for issue in issues.iter().take(20) {
        let _ = writeln!(out, "  row {}: {}", issue.row, issue.message);
    }
    if issues.len() > 20 {
        let _ = writeln!(out, "  ... and {} more", issues.len() - 20);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frequency {
    Annual,
    Monthly,
}

impl Frequency {
    /// Periods per year: 1 for annual data, 12 for monthly.
    pub fn periods_per_year(self) -> i64 {
        match self {
            Frequency::Annual => 1,
            Frequency::Monthly => 12,
        }
    }
}

/// Relative time from the nearest election, in `[-T, T-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelativeTime(pub i64);

impl RelativeTime {
    pub fn value(self) -> i64 {
        self.0
    }
}

/// Election schedule for a single county: a term length `L` (in periods)
/// and the sorted election periods, spaced exactly `L` apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectionCalendar {
    term_length: i64,
    elections: Vec<i64>,
}

impl ElectionCalendar {
    pub fn new(term_length: i64, mut elections: Vec<i64>) -> Result<Self, PanelError> {
        if term_length < 2 || term_length % 2 != 0 {
            return Err(PanelError::InvalidCalendar(format!(
                "term length must be a positive even number of periods, got {term_length}"
            )));
        }
        if elections.is_empty() {
            return Err(PanelError::InvalidCalendar("no election periods listed".into()));
        }
        elections.sort_unstable();
        elections.dedup();
        for pair in elections.windows(2) {
            if pair[1] - pair[0] != term_length {
                return Err(PanelError::InvalidCalendar(format!(
                    "consecutive elections {} and {} are {} periods apart, expected {}",
                    pair[0],
                    pair[1],
                    pair[1] - pair[0],
                    term_length
                )));
            }
        }
        Ok(Self { term_length, elections })
    }

    /// Calendar whose elections fall on every period congruent to `offset`
    /// (mod term length), listed so the whole `window` is covered.
    pub fn from_offset(
        offset: i64,
        term_length: i64,
        window: (i64, i64),
    ) -> Result<Self, PanelError> {
        if window.1 < window.0 {
            return Err(PanelError::InvalidCalendar("empty period window".into()));
        }
        let lo = window.0 - term_length;
        let hi = window.1 + term_length;
        let first = lo + (offset - lo).rem_euclid(term_length);
        let elections: Vec<i64> = (0..).map(|j| first + j * term_length).take_while(|e| *e <= hi).collect();
        Self::new(term_length, elections)
    }

    pub fn term_length(&self) -> i64 {
        self.term_length
    }

    /// Half the term length; relative time spans `[-T, T-1]`.
    pub fn half_term(&self) -> i64 {
        self.term_length / 2
    }

    pub fn elections(&self) -> &[i64] {
        &self.elections
    }

    /// Election-period residue modulo the term length.
    pub fn offset(&self) -> i64 {
        self.elections[0].rem_euclid(self.term_length)
    }

    pub fn first_election_at_or_after(&self, period: i64) -> i64 {
        period + (self.offset() - period).rem_euclid(self.term_length)
    }

    /// Index of the officeholder tenure containing `period`. Tenures are the
    /// term ending at each election: the span `(election - L, election]`.
    pub fn term_index(&self, period: i64) -> i64 {
        (period - self.offset() + self.term_length - 1).div_euclid(self.term_length)
    }
}

/// Relative time of `period` under `calendar`: distance to the nearest
/// listed election, with midpoint ties assigned to the upcoming election
/// and `+T` folded onto `-T`.
pub fn relative_time(period: i64, calendar: &ElectionCalendar) -> Result<RelativeTime, PanelError> {
    let t = calendar.half_term();
    let elections = calendar.elections();
    let idx = elections.partition_point(|e| *e <= period);
    let prev = idx.checked_sub(1).map(|i| elections[i]);
    let next = elections.get(idx).copied();
    let k = match (prev, next) {
        (Some(p), Some(n)) => {
            if n - period <= period - p {
                period - n
            } else {
                period - p
            }
        }
        (Some(p), None) => period - p,
        (None, Some(n)) => period - n,
        (None, None) => unreachable!("calendar is never empty"),
    };
    // +T and -T are the same point of the cycle; report the pre-election side.
    let k = if k == t { -t } else { k };
    if k < -t || k >= t {
        return Err(PanelError::UncoveredPeriod { county: String::new(), period });
    }
    Ok(RelativeTime(k))
}

/// Life sentences and death penalties are coded as 1200 months (100 years).
pub fn code_sentence_months(raw_months: f64, life_flag: bool) -> Result<f64, PanelError> {
    if life_flag {
        return Ok(1200.0);
    }
    if raw_months < 0.0 {
        return Err(PanelError::NegativeMonths(raw_months));
    }
    Ok(raw_months)
}

/// One county-period row. Outcome and control values are stored positionally,
/// aligned with the owning dataset's declared `outcome_names` and
/// `control_names`; a `None` control is a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelObservation {
    pub county_id: String,
    pub state_id: String,
    pub district_id: String,
    pub period: i64,
    pub population: f64,
    pub outcomes: Vec<f64>,
    pub controls: Vec<Option<f64>>,
}

/// Immutable county-by-period panel with per-county election calendars and
/// precomputed relative times, cohort labels, and dense group indices.
///
/// Observations are kept in a canonical order (county id, then period) so
/// that per-row input order never affects downstream arithmetic.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    frequency: Frequency,
    term_length: i64,
    outcome_names: Vec<String>,
    control_names: Vec<String>,
    observations: Vec<PanelObservation>,
    calendars: BTreeMap<String, ElectionCalendar>,
    period_range: (i64, i64),
    // Derived, aligned with `observations`.
    rel_time: Vec<i64>,
    cohort_labels: Vec<i64>,
    county_idx: Vec<usize>,
    state_idx: Vec<usize>,
    district_idx: Vec<usize>,
    county_ids: Vec<String>,
    state_ids: Vec<String>,
    district_ids: Vec<String>,
}

impl PanelDataset {
    pub fn new(
        frequency: Frequency,
        outcome_names: Vec<String>,
        control_names: Vec<String>,
        observations: Vec<PanelObservation>,
        calendars: BTreeMap<String, ElectionCalendar>,
    ) -> Result<Self, PanelError> {
        let mut issues = Vec::new();
        validate_observations(&observations, &outcome_names, &control_names, &mut issues);
        if observations.is_empty() {
            return Err(PanelError::Empty);
        }
        let term_length = match calendars.values().next() {
            Some(cal) => cal.term_length(),
            None => return Err(PanelError::InvalidCalendar("no county calendars".into())),
        };
        for cal in calendars.values() {
            if cal.term_length() != term_length {
                return Err(PanelError::InvalidCalendar(
                    "mixed term lengths across counties are not supported".into(),
                ));
            }
        }
        if !issues.is_empty() {
            return Err(PanelError::InvalidRows(issues));
        }
        Self::assemble(frequency, term_length, outcome_names, control_names, observations, calendars)
    }

    /// Shared tail of construction; assumes row-level validation already ran.
    fn assemble(
        frequency: Frequency,
        term_length: i64,
        outcome_names: Vec<String>,
        control_names: Vec<String>,
        mut observations: Vec<PanelObservation>,
        calendars: BTreeMap<String, ElectionCalendar>,
    ) -> Result<Self, PanelError> {
        observations.sort_by(|a, b| a.county_id.cmp(&b.county_id).then(a.period.cmp(&b.period)));
        let mut seen = BTreeSet::new();
        let mut issues = Vec::new();
        for (i, obs) in observations.iter().enumerate() {
            if !seen.insert((obs.county_id.clone(), obs.period)) {
                issues.push(RowIssue {
                    row: i + 1,
                    message: format!(
                        "duplicate (county, period) key ({}, {})",
                        obs.county_id, obs.period
                    ),
                });
            }
        }
        if !issues.is_empty() {
            return Err(PanelError::InvalidRows(issues));
        }

        let min_period = observations.iter().map(|o| o.period).min().unwrap();
        let max_period = observations.iter().map(|o| o.period).max().unwrap();

        let mut county_ids = Vec::new();
        let mut state_ids = Vec::new();
        let mut district_ids = Vec::new();
        let mut county_map = BTreeMap::new();
        let mut state_map = BTreeMap::new();
        let mut district_map = BTreeMap::new();
        let mut county_idx = Vec::with_capacity(observations.len());
        let mut state_idx = Vec::with_capacity(observations.len());
        let mut district_idx = Vec::with_capacity(observations.len());
        let mut rel_time = Vec::with_capacity(observations.len());
        let mut cohort_labels = Vec::with_capacity(observations.len());

        for obs in &observations {
            let cal = calendars.get(&obs.county_id).ok_or_else(|| {
                PanelError::InvalidCalendar(format!("no calendar for county {}", obs.county_id))
            })?;
            let k = relative_time(obs.period, cal).map_err(|_| PanelError::UncoveredPeriod {
                county: obs.county_id.clone(),
                period: obs.period,
            })?;
            rel_time.push(k.value());
            let anchor = cal.first_election_at_or_after(min_period);
            cohort_labels.push(match frequency {
                Frequency::Annual => anchor,
                Frequency::Monthly => anchor.div_euclid(12),
            });

            county_idx.push(intern(&mut county_map, &mut county_ids, &obs.county_id));
            state_idx.push(intern(&mut state_map, &mut state_ids, &obs.state_id));
            district_idx.push(intern(&mut district_map, &mut district_ids, &obs.district_id));
        }

        Ok(Self {
            frequency,
            term_length,
            outcome_names,
            control_names,
            observations,
            calendars,
            period_range: (min_period, max_period),
            rel_time,
            cohort_labels,
            county_idx,
            state_idx,
            district_idx,
            county_ids,
            state_ids,
            district_ids,
        })
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn term_length(&self) -> i64 {
        self.term_length
    }

    pub fn half_term(&self) -> i64 {
        self.term_length / 2
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[PanelObservation] {
        &self.observations
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn control_names(&self) -> &[String] {
        &self.control_names
    }

    pub fn period_range(&self) -> (i64, i64) {
        self.period_range
    }

    pub fn calendars(&self) -> &BTreeMap<String, ElectionCalendar> {
        &self.calendars
    }

    pub fn outcome_index(&self, name: &str) -> Result<usize, PanelError> {
        self.outcome_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PanelError::UnknownOutcome(name.to_string()))
    }

    pub fn control_index(&self, name: &str) -> Result<usize, PanelError> {
        self.control_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PanelError::UnknownControl(name.to_string()))
    }

    /// Relative time of observation `i`, in `[-T, T-1]`.
    pub fn rel_time(&self, i: usize) -> i64 {
        self.rel_time[i]
    }

    /// Cohort label of observation `i`: the county's first election year at
    /// or after the panel start (counties sharing an election offset share a
    /// label).
    pub fn cohort_label(&self, i: usize) -> i64 {
        self.cohort_labels[i]
    }

    pub fn county_index(&self, i: usize) -> usize {
        self.county_idx[i]
    }

    pub fn state_index(&self, i: usize) -> usize {
        self.state_idx[i]
    }

    pub fn district_index(&self, i: usize) -> usize {
        self.district_idx[i]
    }

    pub fn n_counties(&self) -> usize {
        self.county_ids.len()
    }

    pub fn n_states(&self) -> usize {
        self.state_ids.len()
    }

    pub fn n_districts(&self) -> usize {
        self.district_ids.len()
    }

    pub fn district_ids(&self) -> &[String] {
        &self.district_ids
    }

    pub fn cohort_labels_distinct(&self) -> Vec<i64> {
        let set: BTreeSet<i64> = self.cohort_labels.iter().copied().collect();
        set.into_iter().collect()
    }

    /// Appends a `log1p_<name>` outcome column holding `ln(1 + x)`; the
    /// original column is retained and the row count is unchanged.
    pub fn apply_log1p(&self, outcome: &str) -> Result<PanelDataset, PanelError> {
        let idx = self.outcome_index(outcome)?;
        let mut out = self.clone();
        out.outcome_names.push(format!("log1p_{outcome}"));
        for obs in &mut out.observations {
            let x = obs.outcomes[idx];
            obs.outcomes.push(x.ln_1p());
        }
        Ok(out)
    }

    /// Appends a `log_<name>` outcome column holding `ln(x)`. Errors if any
    /// value is nonpositive; use `apply_log1p` for zero-heavy outcomes.
    pub fn derive_log(&self, outcome: &str) -> Result<PanelDataset, PanelError> {
        let idx = self.outcome_index(outcome)?;
        let bad = self.observations.iter().filter(|o| o.outcomes[idx] <= 0.0).count();
        if bad > 0 {
            return Err(PanelError::NonPositiveForLog { outcome: outcome.to_string(), count: bad });
        }
        let mut out = self.clone();
        out.outcome_names.push(format!("log_{outcome}"));
        for obs in &mut out.observations {
            let x = obs.outcomes[idx];
            obs.outcomes.push(x.ln());
        }
        Ok(out)
    }

    /// Writes the dataset in the loadable CSV schema. Election timing is
    /// emitted as a `next_election_year` column so any window round-trips.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), PanelError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let monthly = self.frequency == Frequency::Monthly;
        let mut header = vec!["county_id", "state_id", "district_id", "year"];
        if monthly {
            header.push("month");
        }
        header.push("population");
        let mut header: Vec<String> = header.into_iter().map(String::from).collect();
        header.extend(self.outcome_names.iter().cloned());
        header.push("next_election_year".to_string());
        header.extend(self.control_names.iter().cloned());
        writeln!(w, "{}", header.join(","))?;

        for obs in &self.observations {
            let cal = &self.calendars[&obs.county_id];
            let (year, month) = match self.frequency {
                Frequency::Annual => (obs.period, 0),
                Frequency::Monthly => (obs.period.div_euclid(12), obs.period.rem_euclid(12) + 1),
            };
            let next_election_year = match self.frequency {
                Frequency::Annual => cal.first_election_at_or_after(obs.period),
                Frequency::Monthly => cal.first_election_at_or_after(obs.period).div_euclid(12),
            };
            let mut fields = vec![obs.county_id.clone(), obs.state_id.clone(), obs.district_id.clone()];
            fields.push(year.to_string());
            if monthly {
                fields.push(month.to_string());
            }
            fields.push(format!("{}", obs.population));
            for v in &obs.outcomes {
                fields.push(format!("{v}"));
            }
            fields.push(next_election_year.to_string());
            for c in &obs.controls {
                fields.push(match c {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                });
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn intern(map: &mut BTreeMap<String, usize>, table: &mut Vec<String>, id: &str) -> usize {
    if let Some(&i) = map.get(id) {
        return i;
    }
    let i = table.len();
    map.insert(id.to_string(), i);
    table.push(id.to_string());
    i
}

fn validate_observations(
    observations: &[PanelObservation],
    outcome_names: &[String],
    control_names: &[String],
    issues: &mut Vec<RowIssue>,
) {
    for (i, obs) in observations.iter().enumerate() {
        let row = i + 1;
        if !(obs.population > 0.0) {
            issues.push(RowIssue {
                row,
                message: format!("population must be positive, got {}", obs.population),
            });
        }
        if obs.district_id.is_empty() {
            issues.push(RowIssue { row, message: "empty district id (clustering unit)".into() });
        }
        if obs.outcomes.len() != outcome_names.len() {
            issues.push(RowIssue {
                row,
                message: format!(
                    "expected {} outcome values, got {}",
                    outcome_names.len(),
                    obs.outcomes.len()
                ),
            });
            continue;
        }
        for (j, v) in obs.outcomes.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                issues.push(RowIssue {
                    row,
                    message: format!("outcome `{}` must be a nonnegative rate, got {v}", outcome_names[j]),
                });
            }
        }
        if obs.controls.len() != control_names.len() {
            issues.push(RowIssue {
                row,
                message: format!(
                    "expected {} control values, got {}",
                    control_names.len(),
                    obs.controls.len()
                ),
            });
        }
    }
}

/// Column-name mapping for CSV ingestion. The default matches the fixed
/// schema `county_id,state_id,district_id,year,month,population,
/// admissions_per_1000,months_per_1000,election_year,next_election_year,
/// ctrl_white_share,ctrl_income_pc`; `month` and the controls are optional,
/// and exactly one of the two election columns may appear.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub county: String,
    pub state: String,
    pub district: String,
    pub year: String,
    pub month: String,
    pub population: String,
    pub outcomes: Vec<String>,
    pub election_flag: String,
    pub next_election: String,
    pub controls: Vec<String>,
    /// Term length in years.
    pub term_years: i64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            county: "county_id".into(),
            state: "state_id".into(),
            district: "district_id".into(),
            year: "year".into(),
            month: "month".into(),
            population: "population".into(),
            outcomes: vec!["admissions_per_1000".into(), "months_per_1000".into()],
            election_flag: "election_year".into(),
            next_election: "next_election_year".into(),
            controls: vec!["ctrl_white_share".into(), "ctrl_income_pc".into()],
            term_years: 4,
        }
    }
}

struct RawRow {
    county: String,
    state: String,
    district: String,
    year: i64,
    month: Option<i64>,
    population: f64,
    outcomes: Vec<f64>,
    controls: Vec<Option<f64>>,
    election_flag: Option<i64>,
    next_election: Option<i64>,
}

/// Loads and validates a panel CSV. Row-level failures are collected into a
/// single error report naming each offending row; nothing is silently
/// dropped.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<PanelDataset, PanelError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let county_c = col(&schema.county).ok_or_else(|| PanelError::MissingColumn(schema.county.clone()))?;
    let state_c = col(&schema.state).ok_or_else(|| PanelError::MissingColumn(schema.state.clone()))?;
    let district_c =
        col(&schema.district).ok_or_else(|| PanelError::MissingColumn(schema.district.clone()))?;
    let year_c = col(&schema.year).ok_or_else(|| PanelError::MissingColumn(schema.year.clone()))?;
    let pop_c = col(&schema.population)
        .ok_or_else(|| PanelError::MissingColumn(schema.population.clone()))?;
    let month_c = col(&schema.month);
    let flag_c = col(&schema.election_flag);
    let next_c = col(&schema.next_election);
    match (flag_c, next_c) {
        (Some(_), Some(_)) => {
            return Err(PanelError::ConflictingCalendarColumns(
                schema.election_flag.clone(),
                schema.next_election.clone(),
            ))
        }
        (None, None) => {
            return Err(PanelError::NoCalendarColumn(
                schema.election_flag.clone(),
                schema.next_election.clone(),
            ))
        }
        _ => {}
    }
    let mut outcome_cols = Vec::new();
    for name in &schema.outcomes {
        outcome_cols.push(col(name).ok_or_else(|| PanelError::MissingColumn(name.clone()))?);
    }
    // Controls are optional columns: load whichever are present.
    let control_pairs: Vec<(String, usize)> = schema
        .controls
        .iter()
        .filter_map(|name| col(name).map(|c| (name.clone(), c)))
        .collect();

    let frequency = if month_c.is_some() { Frequency::Monthly } else { Frequency::Annual };
    let ppy = frequency.periods_per_year();
    let term_length = schema.term_years * ppy;

    let mut issues: Vec<RowIssue> = Vec::new();
    let mut rows: Vec<RawRow> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let parse_f64 = |c: usize, name: &str, issues: &mut Vec<RowIssue>| -> Option<f64> {
            match field(c).parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    issues.push(RowIssue {
                        row,
                        message: format!("non-numeric value `{}` in column `{name}`", field(c)),
                    });
                    None
                }
            }
        };
        let parse_i64 = |c: usize, name: &str, issues: &mut Vec<RowIssue>| -> Option<i64> {
            match field(c).parse::<i64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    issues.push(RowIssue {
                        row,
                        message: format!("non-integer value `{}` in column `{name}`", field(c)),
                    });
                    None
                }
            }
        };

        let year = parse_i64(year_c, &schema.year, &mut issues);
        let month = match month_c {
            Some(c) => match parse_i64(c, &schema.month, &mut issues) {
                Some(m) if (1..=12).contains(&m) => Some(m),
                Some(m) => {
                    issues.push(RowIssue { row, message: format!("month {m} outside 1..=12") });
                    None
                }
                None => None,
            },
            None => None,
        };
        let population = parse_f64(pop_c, &schema.population, &mut issues);
        if let Some(p) = population {
            if !(p > 0.0) {
                issues.push(RowIssue { row, message: format!("population must be positive, got {p}") });
            }
        }
        let mut outcomes = Vec::with_capacity(outcome_cols.len());
        for (c, name) in outcome_cols.iter().zip(&schema.outcomes) {
            match parse_f64(*c, name, &mut issues) {
                Some(v) if v >= 0.0 && v.is_finite() => outcomes.push(v),
                Some(v) => {
                    issues.push(RowIssue {
                        row,
                        message: format!("outcome `{name}` must be a nonnegative rate, got {v}"),
                    });
                }
                None => {}
            }
        }
        let mut controls = Vec::with_capacity(control_pairs.len());
        for (name, c) in &control_pairs {
            let raw = field(*c);
            if raw.is_empty() {
                controls.push(None);
            } else {
                match raw.parse::<f64>() {
                    Ok(v) => controls.push(Some(v)),
                    Err(_) => {
                        issues.push(RowIssue {
                            row,
                            message: format!("non-numeric value `{raw}` in column `{name}`"),
                        });
                        controls.push(None);
                    }
                }
            }
        }
        let election_flag = match flag_c {
            Some(c) => match parse_i64(c, &schema.election_flag, &mut issues) {
                Some(v) if v == 0 || v == 1 => Some(v),
                Some(v) => {
                    issues.push(RowIssue {
                        row,
                        message: format!("`{}` must be 0 or 1, got {v}", schema.election_flag),
                    });
                    None
                }
                None => None,
            },
            None => None,
        };
        let next_election = match next_c {
            Some(c) => parse_i64(c, &schema.next_election, &mut issues),
            None => None,
        };

        let (Some(year), Some(population)) = (year, population) else { continue };
        if outcomes.len() != outcome_cols.len() {
            continue;
        }
        rows.push(RawRow {
            county: field(county_c).to_string(),
            state: field(state_c).to_string(),
            district: field(district_c).to_string(),
            year,
            month,
            population,
            outcomes,
            controls,
            election_flag,
            next_election,
        });
    }

    if frequency == Frequency::Monthly {
        for (i, r) in rows.iter().enumerate() {
            if r.month.is_none() {
                issues.push(RowIssue { row: i + 1, message: "missing month in monthly file".into() });
            }
        }
    }

    // Election offsets per county (in years), from whichever column is present.
    let mut offsets: BTreeMap<String, i64> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        let claimed = match (r.election_flag, r.next_election) {
            (Some(1), _) => Some(r.year),
            (_, Some(next)) => {
                if next < r.year || next - r.year > schema.term_years {
                    issues.push(RowIssue {
                        row,
                        message: format!(
                            "next election year {next} not within a term of year {}",
                            r.year
                        ),
                    });
                    None
                } else {
                    Some(next)
                }
            }
            _ => None,
        };
        if let Some(e) = claimed {
            let offset = e.rem_euclid(schema.term_years);
            match offsets.get(&r.county) {
                None => {
                    offsets.insert(r.county.clone(), offset);
                }
                Some(&o) if o != offset => {
                    issues.push(RowIssue {
                        row,
                        message: format!(
                            "county {} election years are not {}-year periodic",
                            r.county, schema.term_years
                        ),
                    });
                }
                _ => {}
            }
        }
    }
    // Flag rows must be consistent with the inferred offset.
    if flag_c.is_some() {
        for (i, r) in rows.iter().enumerate() {
            if let (Some(flag), Some(&offset)) = (r.election_flag, offsets.get(&r.county)) {
                let is_election_year = r.year.rem_euclid(schema.term_years) == offset;
                if (flag == 1) != is_election_year {
                    issues.push(RowIssue {
                        row: i + 1,
                        message: format!(
                            "election_year flag {flag} inconsistent with county {} cycle",
                            r.county
                        ),
                    });
                }
            }
        }
    }
    for r in &rows {
        if !offsets.contains_key(&r.county) {
            issues.push(RowIssue {
                row: 0,
                message: format!("county {} has no election timing information", r.county),
            });
            offsets.insert(r.county.clone(), 0); // placeholder; error already recorded
        }
    }

    if !issues.is_empty() {
        issues.sort_by_key(|i| i.row);
        issues.dedup_by(|a, b| a.row == b.row && a.message == b.message);
        return Err(PanelError::InvalidRows(issues));
    }
    if rows.is_empty() {
        return Err(PanelError::Empty);
    }

    let control_names: Vec<String> = control_pairs.iter().map(|(n, _)| n.clone()).collect();
    let observations: Vec<PanelObservation> = rows
        .iter()
        .map(|r| {
            let period = match frequency {
                Frequency::Annual => r.year,
                Frequency::Monthly => r.year * 12 + (r.month.unwrap() - 1),
            };
            PanelObservation {
                county_id: r.county.clone(),
                state_id: r.state.clone(),
                district_id: r.district.clone(),
                period,
                population: r.population,
                outcomes: r.outcomes.clone(),
                controls: r.controls.clone(),
            }
        })
        .collect();

    let min_period = observations.iter().map(|o| o.period).min().unwrap();
    let max_period = observations.iter().map(|o| o.period).max().unwrap();
    let mut calendars = BTreeMap::new();
    for (county, offset_year) in &offsets {
        let offset = match frequency {
            Frequency::Annual => *offset_year,
            Frequency::Monthly => {
                // Election periods anchor to the general-election month.
                (offset_year * 12 + (ELECTION_MONTH as i64 - 1)).rem_euclid(term_length)
            }
        };
        calendars.insert(
            county.clone(),
            ElectionCalendar::from_offset(offset, term_length, (min_period, max_period))?,
        );
    }

    PanelDataset::new(frequency, schema.outcomes.clone(), control_names, observations, calendars)
}
