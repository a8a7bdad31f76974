//! Panel event-study estimation around election cycles.
//!
//! The crate has two halves. The estimation half ingests county-by-period
//! panels of sentencing outcomes and runs difference-in-differences
//! estimators over relative time from the nearest election: a dynamic
//! coefficient path, a static election-year contrast, a cohort
//! interaction-weighted aggregate robust to effect heterogeneity, a
//! signal-variance magnitude translation, and cycle-shape fits (LOESS and a
//! fixed-period sinusoid). The simulation half generates synthetic panels
//! from a two-period model of prosecutor effort with known ground truth, so
//! every estimator can be validated end to end.

pub mod cohortiw;
pub mod cyclefit;
pub mod design;
pub mod dgp;
pub mod eventstudy;
pub mod magnitude;
pub mod panel;
pub mod regress;

pub use design::FeSet;
pub use panel::{ElectionCalendar, Frequency, PanelDataset, PanelObservation, RelativeTime};
pub use regress::{Design, FitResult, WeightSpec};
