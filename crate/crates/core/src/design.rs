//! Bridges panel datasets to concrete regression designs: fixed-effect
//! group construction, weight vectors, district clustering, and control
//! handling (rows missing a requested control are excluded and counted,
//! never imputed).

use crate::panel::PanelDataset;
use crate::regress::{FeGroups, WeightSpec};

/// Which fixed-effect dimensions to absorb. `period` is the year for annual
/// data and the year-month for monthly data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeSet {
    pub state: bool,
    pub county: bool,
    pub period: bool,
}

impl FeSet {
    /// State and period effects: the default specification.
    pub fn state_period() -> Self {
        Self { state: true, county: false, period: true }
    }

    /// County and period effects: the robustness variant.
    pub fn county_period() -> Self {
        Self { state: false, county: true, period: true }
    }

    /// State effects only.
    pub fn state_only() -> Self {
        Self { state: true, county: false, period: false }
    }

    pub fn is_empty(&self) -> bool {
        !(self.state || self.county || self.period)
    }
}

impl Default for FeSet {
    fn default() -> Self {
        Self::state_period()
    }
}

/// Rows retained for estimation after control filtering, with everything
/// the design assembly needs precomputed over that subset.
pub struct RowSet {
    /// Observation indices into the dataset, in canonical dataset order.
    pub rows: Vec<usize>,
    /// Rows excluded because a requested control was missing.
    pub control_rows_dropped: usize,
}

impl RowSet {
    pub fn all(data: &PanelDataset) -> Self {
        Self { rows: (0..data.n_obs()).collect(), control_rows_dropped: 0 }
    }

    /// Keeps rows where every requested control is present.
    pub fn with_controls(data: &PanelDataset, control_idx: &[usize]) -> Self {
        if control_idx.is_empty() {
            return Self::all(data);
        }
        let mut rows = Vec::with_capacity(data.n_obs());
        let mut dropped = 0;
        for (i, obs) in data.observations().iter().enumerate() {
            if control_idx.iter().all(|&c| obs.controls[c].is_some()) {
                rows.push(i);
            } else {
                dropped += 1;
            }
        }
        Self { rows, control_rows_dropped: dropped }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Densifies arbitrary group keys over a row subset.
fn densify<K: Ord>(ids: impl Iterator<Item = K>) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    let mut out = Vec::new();
    for id in ids {
        let next = map.len();
        let dense = *map.entry(id).or_insert(next);
        out.push(dense);
    }
    (out, map.len())
}

pub fn fe_groups(data: &PanelDataset, fe: FeSet, rows: &RowSet) -> Vec<FeGroups> {
    let mut dims = Vec::new();
    if fe.state {
        let (ids, n) = densify(rows.rows.iter().map(|&i| data.state_index(i)));
        dims.push(FeGroups { name: "state".into(), ids, n_groups: n });
    }
    if fe.county {
        let (ids, n) = densify(rows.rows.iter().map(|&i| data.county_index(i)));
        dims.push(FeGroups { name: "county".into(), ids, n_groups: n });
    }
    if fe.period {
        let (ids, n) = densify(rows.rows.iter().map(|&i| data.observations()[i].period));
        dims.push(FeGroups { name: "period".into(), ids, n_groups: n });
    }
    dims
}

pub fn weight_vector(data: &PanelDataset, spec: WeightSpec, rows: &RowSet) -> Vec<f64> {
    match spec {
        WeightSpec::Population => {
            rows.rows.iter().map(|&i| data.observations()[i].population).collect()
        }
        WeightSpec::Unit => vec![1.0; rows.len()],
    }
}

/// District clustering over the row subset: dense ids plus cluster count.
pub fn district_clusters(data: &PanelDataset, rows: &RowSet) -> (Vec<usize>, usize) {
    densify(rows.rows.iter().map(|&i| data.district_index(i)))
}

pub fn outcome_vector(data: &PanelDataset, outcome_idx: usize, rows: &RowSet) -> Vec<f64> {
    rows.rows.iter().map(|&i| data.observations()[i].outcomes[outcome_idx]).collect()
}

pub fn control_columns(
    data: &PanelDataset,
    control_idx: &[usize],
    rows: &RowSet,
) -> Vec<(String, Vec<f64>)> {
    control_idx
        .iter()
        .map(|&c| {
            let name = data.control_names()[c].clone();
            let col = rows
                .rows
                .iter()
                .map(|&i| data.observations()[i].controls[c].expect("rows were filtered on controls"))
                .collect();
            (name, col)
        })
        .collect()
}
