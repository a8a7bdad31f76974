//! Output emission: estimate/report JSON documents, plot CSVs, the text
//! table, and the run manifest. JSON is the canonical form; the CSVs are
//! derived views printed with shortest round-trip float formatting so they
//! re-parse to identical values.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use cyclestudy_core::cohortiw::IwReport;
use cyclestudy_core::dgp::TruthRecord;
use cyclestudy_core::eventstudy::{EventStudyEstimate, StaticEstimate};

#[derive(Serialize)]
pub struct CoefficientRow {
    pub k: i64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Serialize)]
pub struct EstimateDoc {
    pub spec: serde_json::Value,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub coefficients: Vec<CoefficientRow>,
}

pub fn estimate_doc(est: &EventStudyEstimate, spec: serde_json::Value) -> EstimateDoc {
    EstimateDoc {
        spec,
        n_obs: est.n_obs,
        n_clusters: est.n_clusters,
        coefficients: est
            .points
            .iter()
            .map(|p| CoefficientRow {
                k: p.k,
                estimate: p.estimate,
                se: p.se,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
            })
            .collect(),
    }
}

pub fn static_doc(est: &StaticEstimate, spec: serde_json::Value) -> EstimateDoc {
    EstimateDoc {
        spec,
        n_obs: est.n_obs,
        n_clusters: est.n_clusters,
        coefficients: vec![CoefficientRow {
            k: 0,
            estimate: est.estimate,
            se: est.se,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
        }],
    }
}

pub fn write_plot_csv(path: &Path, rows: &[CoefficientRow]) -> std::io::Result<()> {
    let mut out = String::from("k,estimate,se,ci_low,ci_high\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.k, r.estimate, r.se, r.ci_low, r.ci_high));
    }
    std::fs::write(path, out)
}

#[derive(Serialize)]
pub struct IwCell {
    pub cohort: i64,
    pub k: i64,
    pub estimate: f64,
    pub share: f64,
}

#[derive(Serialize)]
pub struct IwDoc {
    pub outcome: String,
    pub vg: f64,
    pub se: f64,
    pub reps: usize,
    pub seed: u64,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub warnings: Vec<String>,
    pub cells: Vec<IwCell>,
}

pub fn iw_doc(report: &IwReport) -> IwDoc {
    IwDoc {
        outcome: report.outcome.clone(),
        vg: report.aggregate.vg,
        se: report.bootstrap.se,
        reps: report.bootstrap.reps,
        seed: report.bootstrap.seed,
        n_obs: report.aggregate.n_obs,
        n_clusters: report.aggregate.n_clusters,
        warnings: report.aggregate.warnings.clone(),
        cells: report
            .aggregate
            .cells
            .iter()
            .map(|c| IwCell { cohort: c.cohort, k: c.k, estimate: c.estimate, share: c.share })
            .collect(),
    }
}

/// Display section and row label for an outcome column name.
pub fn outcome_labels(name: &str) -> (String, String) {
    let (section, rest) = if let Some(rest) = name.strip_prefix("admissions") {
        ("Admissions / 1000 Pop.".to_string(), rest)
    } else if let Some(rest) = name.strip_prefix("months") {
        ("Sentenced Months / 1000 Pop.".to_string(), rest)
    } else {
        return (name.to_string(), name.to_string());
    };
    let row = match rest.trim_start_matches('_').trim_end_matches("per_1000").trim_end_matches('_') {
        "" => "All Offenses".to_string(),
        "violent" => "Violent Offenses".to_string(),
        "property" => "Property Offenses".to_string(),
        "drug" => "Drug Offenses".to_string(),
        other => other.to_string(),
    };
    (section, row)
}

/// Reads an aggregate under the omitted-election-year convention: negative
/// values mean a relatively high election year.
pub fn election_effect_note(vg: f64) -> String {
    format!("election-year effect {:+.1} log points (approx.)", -vg * 100.0)
}

/// Text table of aggregates by outcome: one section per outcome family,
/// point estimates to three decimals with bootstrap standard errors to four
/// in parentheses, and a sign-convention reading per row underneath.
pub fn render_iw_table(rows: &[(String, f64, f64)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:40} {:>12}  {:>14}\n", "", "CATT (v_g)", "Bootstrap SE"));
    out.push_str(&format!("{:40} {:>12}  {:>14}\n", "", "(log points)", ""));
    let mut current_section = String::new();
    for (outcome, vg, se) in rows {
        let (section, label) = outcome_labels(outcome);
        if section != current_section {
            out.push_str(&format!("{section}\n"));
            current_section = section;
        }
        out.push_str(&format!("   {:37} {:>12.3}  {:>14}\n", label, vg, format!("({se:.4})")));
    }
    out.push_str("\nEstimates are relative to the omitted election year.\n");
    for (outcome, vg, _) in rows {
        out.push_str(&format!("  {outcome}: {}\n", election_effect_note(*vg)));
    }
    out
}

#[derive(Serialize)]
pub struct TruthDoc {
    pub paths_by_cohort: std::collections::BTreeMap<i64, std::collections::BTreeMap<i64, f64>>,
    pub homogeneous_path: Option<std::collections::BTreeMap<i64, f64>>,
    pub cohort_shares: std::collections::BTreeMap<i64, f64>,
    pub vg_truth: f64,
    pub gamma_sq: f64,
    pub da_effects: std::collections::BTreeMap<String, f64>,
    pub sin_amplitude: f64,
    pub sin_phase: f64,
    pub seed: u64,
}

pub fn truth_doc(truth: &TruthRecord) -> TruthDoc {
    TruthDoc {
        paths_by_cohort: truth.paths_by_cohort.clone(),
        homogeneous_path: truth.homogeneous_path.clone(),
        cohort_shares: truth.cohort_shares.clone(),
        vg_truth: truth.vg_truth,
        gamma_sq: truth.gamma_sq,
        da_effects: truth.da_effects.clone(),
        sin_amplitude: truth.sin_amplitude,
        sin_phase: truth.sin_phase,
        seed: truth.seed,
    }
}

/// Written last: its presence signals a complete run.
#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub spec: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_ms: u128,
}

pub struct ManifestBuilder {
    subcommand: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    spec: serde_json::Value,
    seed: Option<u64>,
    started: std::time::Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, spec: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            spec,
            seed: None,
            started: std::time::Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Serializes `doc` to pretty JSON at `dir/name` and records it.
    pub fn write_json<T: Serialize>(&mut self, dir: &Path, name: &str, doc: &T) -> std::io::Result<PathBuf> {
        let path = dir.join(name);
        let mut text = serde_json::to_string_pretty(doc)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        self.outputs.push(path.display().to_string());
        Ok(path)
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `manifest.json` into `dir` as the final artifact of the run.
    pub fn finish(self, dir: &Path) -> std::io::Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            inputs: self.inputs,
            outputs: self.outputs,
            spec: self.spec,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_ms: self.started.elapsed().as_millis(),
        };
        let path = dir.join("manifest.json");
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, &manifest)?;
        writeln!(writer)?;
        writer.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_renders_eight_rows_with_fixture_formatting() {
        let rows = vec![
            ("admissions_per_1000".to_string(), -0.045, 0.0117),
            ("admissions_violent_per_1000".to_string(), -0.032, 0.0107),
            ("admissions_property_per_1000".to_string(), -0.020, 0.0119),
            ("admissions_drug_per_1000".to_string(), -0.076, 0.0146),
            ("months_per_1000".to_string(), -0.037, 0.0116),
            ("months_violent_per_1000".to_string(), -0.012, 0.0105),
            ("months_property_per_1000".to_string(), -0.015, 0.0109),
            ("months_drug_per_1000".to_string(), -0.072, 0.0162),
        ];
        let table = render_iw_table(&rows);
        assert!(table.contains("Admissions / 1000 Pop."));
        assert!(table.contains("Sentenced Months / 1000 Pop."));
        // Three decimals on the estimate, four on the standard error.
        let all = table.lines().find(|l| l.contains("All Offenses")).unwrap();
        assert!(all.contains("-0.045"), "{all}");
        assert!(all.contains("(0.0117)"), "{all}");
        assert!(table.contains("Drug Offenses"));
        // A negative aggregate reads as a positive election-year effect.
        assert!(table.contains("election-year effect +4.5 log points (approx.)"), "{table}");
    }

    #[test]
    fn sign_convention_reading() {
        assert_eq!(election_effect_note(-0.045), "election-year effect +4.5 log points (approx.)");
        assert_eq!(election_effect_note(0.02), "election-year effect -2.0 log points (approx.)");
    }

    #[test]
    fn outcome_label_mapping() {
        assert_eq!(
            outcome_labels("admissions_per_1000"),
            ("Admissions / 1000 Pop.".into(), "All Offenses".into())
        );
        assert_eq!(
            outcome_labels("months_drug_per_1000"),
            ("Sentenced Months / 1000 Pop.".into(), "Drug Offenses".into())
        );
        assert_eq!(outcome_labels("custom"), ("custom".into(), "custom".into()));
    }
}
