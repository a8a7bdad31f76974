//! Subcommand implementations. Each command reads its inputs, runs the
//! corresponding estimator stack, writes JSON (canonical) plus derived CSV
//! or text views, and finishes by writing the run manifest.

use std::path::{Path, PathBuf};

use serde_json::json;

use cyclestudy_core::cohortiw::{self, CattSpec, CohortError};
use cyclestudy_core::cyclefit::{self, CycleError, SinusoidSpec};
use cyclestudy_core::dgp::{self, DgpError};
use cyclestudy_core::eventstudy::{self, EventStudyError, EventStudySpec};
use cyclestudy_core::magnitude::{self, DaTenureMap, MagnitudeError};
use cyclestudy_core::panel::{self, CsvSchema, PanelDataset, PanelError};
use cyclestudy_core::{FeSet, Frequency, WeightSpec};

use crate::output::{self, ManifestBuilder};
use crate::{CliError, FrequencyArg, Mode, Weights};

impl From<PanelError> for CliError {
    fn from(err: PanelError) -> Self {
        CliError::Input(err.to_string())
    }
}

impl From<EventStudyError> for CliError {
    fn from(err: EventStudyError) -> Self {
        match err {
            EventStudyError::Panel(inner) => CliError::Input(inner.to_string()),
            EventStudyError::BadNormalization { .. }
            | EventStudyError::BadWindow { .. }
            | EventStudyError::NotMonthly => CliError::Input(err.to_string()),
            other => CliError::Estimation(other.to_string()),
        }
    }
}

impl From<CohortError> for CliError {
    fn from(err: CohortError) -> Self {
        match err {
            CohortError::Panel(inner) => CliError::Input(inner.to_string()),
            CohortError::TooFewReps(_) => CliError::Input(err.to_string()),
            other => CliError::Estimation(other.to_string()),
        }
    }
}

impl From<MagnitudeError> for CliError {
    fn from(err: MagnitudeError) -> Self {
        match err {
            MagnitudeError::Panel(inner) => CliError::Input(inner.to_string()),
            MagnitudeError::Io(inner) => CliError::Input(inner.to_string()),
            MagnitudeError::MapParse { .. } | MagnitudeError::UnmappedObservations { .. } => {
                CliError::Input(err.to_string())
            }
            other => CliError::Estimation(other.to_string()),
        }
    }
}

impl From<CycleError> for CliError {
    fn from(err: CycleError) -> Self {
        match err {
            CycleError::Panel(inner) => CliError::Input(inner.to_string()),
            CycleError::BadSpan(_) | CycleError::BadDegree(_) => CliError::Input(err.to_string()),
            other => CliError::Estimation(other.to_string()),
        }
    }
}

impl From<DgpError> for CliError {
    fn from(err: DgpError) -> Self {
        match err {
            DgpError::Panel(inner) => CliError::Input(inner.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Input(err.to_string())
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", dir.display())))
}

fn load_panel(input: &Path) -> Result<PanelDataset, CliError> {
    if !input.exists() {
        return Err(CliError::Input(format!("input file {} does not exist", input.display())));
    }
    Ok(panel::load_csv(input, &CsvSchema::default())?)
}

pub fn simulate(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Input(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let config = crate::config::parse_sim_config(&text)
        .map_err(|e| CliError::Input(format!("config {}: {e}", config_path.display())))?;
    ensure_dir(out)?;

    let (panel, truth) = dgp::simulate_panel(&config)?;

    let spec_echo = json!({
        "config": config_path.display().to_string(),
        "states": config.states,
        "districts_per_state": config.districts_per_state,
        "counties_per_district": config.counties_per_district,
        "years": config.years,
        "start_year": config.start_year,
        "frequency": match config.frequency { Frequency::Annual => "annual", Frequency::Monthly => "monthly" },
        "outcomes": config.outcomes.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
    });
    let mut manifest = ManifestBuilder::new("simulate", spec_echo);
    manifest.input(config_path);
    manifest.seed(config.seed);

    let panel_path = out.join("panel.csv");
    panel.write_csv(&panel_path)?;
    manifest.record(&panel_path);
    manifest.write_json(out, "truth.json", &output::truth_doc(&truth))?;
    manifest.finish(out)?;
    Ok(())
}

pub struct EstimateArgs {
    pub input: PathBuf,
    pub outcome: String,
    pub mode: Mode,
    pub fe: String,
    pub normalize: i64,
    pub log1p: bool,
    pub controls: Option<String>,
    pub cluster: String,
    pub weights: Weights,
    pub out: PathBuf,
}

fn parse_fe(fe: &str) -> Result<FeSet, CliError> {
    match fe.replace(' ', "").as_str() {
        "state,year" | "state,period" => Ok(FeSet::state_period()),
        "county,year" | "county,period" => Ok(FeSet::county_period()),
        "state" => Ok(FeSet::state_only()),
        other => Err(CliError::Input(format!(
            "unsupported --fe `{other}`; use state,year or county,year"
        ))),
    }
}

fn fe_echo(fe: FeSet) -> String {
    let mut parts = Vec::new();
    if fe.state {
        parts.push("state");
    }
    if fe.county {
        parts.push("county");
    }
    if fe.period {
        parts.push("year");
    }
    parts.join(",")
}

pub fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    if args.cluster != "district" {
        return Err(CliError::Input(format!(
            "unsupported --cluster `{}`; district is the clustering unit",
            args.cluster
        )));
    }
    let mut data = load_panel(&args.input)?;
    let mut outcome = args.outcome.clone();
    if args.log1p {
        data = data.apply_log1p(&outcome)?;
        outcome = format!("log1p_{outcome}");
    }
    let fe = parse_fe(&args.fe)?;
    let controls: Vec<String> = args
        .controls
        .as_deref()
        .map(|c| c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default();

    let mut spec = EventStudySpec::new(outcome.clone());
    spec.normalize_k = args.normalize;
    spec.fe = fe;
    spec.controls = controls.clone();
    spec.weights = match args.weights {
        Weights::Population => WeightSpec::Population,
        Weights::Unit => WeightSpec::Unit,
    };

    ensure_dir(&args.out)?;
    let spec_echo = json!({
        "mode": match args.mode { Mode::Dynamic => "dynamic", Mode::Static => "static" },
        "outcome": outcome,
        "fe": fe_echo(fe),
        "normalize": args.normalize,
        "weights": match args.weights { Weights::Population => "population", Weights::Unit => "unit" },
        "cluster": "district",
        "log1p": args.log1p,
        "controls": controls,
    });
    let mut manifest = ManifestBuilder::new("estimate", spec_echo.clone());
    manifest.input(&args.input);

    let doc = match args.mode {
        Mode::Dynamic => {
            let est = eventstudy::fit_dynamic(&data, &spec)?;
            output::estimate_doc(&est, spec_echo)
        }
        Mode::Static => {
            let est = eventstudy::fit_static(&data, &spec)?;
            let mut echo = spec_echo;
            echo["multiplicative_effect"] = json!(est.multiplicative_effect);
            output::static_doc(&est, echo)
        }
    };
    manifest.write_json(&args.out, "estimate.json", &doc)?;
    let plot_path = args.out.join("plot.csv");
    output::write_plot_csv(&plot_path, &doc.coefficients)?;
    manifest.record(&plot_path);
    manifest.finish(&args.out)?;
    Ok(())
}

pub fn iw(
    input: &Path,
    reps: usize,
    seed: u64,
    outcomes: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let data = load_panel(input)?;
    let names: Vec<String> = match outcomes {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => data.outcome_names().to_vec(),
    };
    if names.is_empty() {
        return Err(CliError::Input("no outcomes requested".into()));
    }
    ensure_dir(out)?;

    let mut docs = Vec::with_capacity(names.len());
    let mut table_rows = Vec::with_capacity(names.len());
    for name in &names {
        let spec = CattSpec::new(name.clone());
        let report = cohortiw::interaction_weighted_with_se(&data, &spec, reps, seed)?;
        table_rows.push((name.clone(), report.aggregate.vg, report.bootstrap.se));
        docs.push(output::iw_doc(&report));
    }

    let spec_echo = json!({
        "outcomes": names,
        "reps": reps,
        "seed": seed,
        "weights": "population",
        "fe": "state,year",
        "cluster": "district",
    });
    let mut manifest = ManifestBuilder::new("iw", spec_echo);
    manifest.input(input);
    manifest.seed(seed);
    manifest.write_json(out, "iw.json", &json!({ "reports": docs }))?;
    let table_path = out.join("table.txt");
    std::fs::write(&table_path, output::render_iw_table(&table_rows))?;
    manifest.record(&table_path);
    manifest.finish(out)?;
    Ok(())
}

pub fn magnitude(
    effect: Option<f64>,
    gamma_sq: Option<f64>,
    from_panel: Option<&Path>,
    da_map: Option<&Path>,
    outcome: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (report, clamp_flag, spec_echo, inputs) = match (effect, gamma_sq, from_panel) {
        (Some(effect), Some(gamma_sq), None) => {
            let report = magnitude::to_sd_and_percentile(effect, gamma_sq)?;
            let echo = json!({ "mode": "mapping", "effect": effect, "gamma_sq": gamma_sq });
            (report, false, echo, Vec::<PathBuf>::new())
        }
        (None, None, Some(panel_path)) => {
            let data = load_panel(panel_path)?;
            let map = match da_map {
                Some(path) => DaTenureMap::from_csv(path)?,
                None => DaTenureMap::Synthetic,
            };
            let effects =
                magnitude::da_fixed_effects(&data, &map, outcome, WeightSpec::Population)?;
            let sv = magnitude::signal_variance(&effects)?;
            let static_fit = eventstudy::fit_static(&data, &EventStudySpec::new(outcome))?;
            let report = magnitude::to_sd_and_percentile(static_fit.estimate, sv.gamma_sq)?;
            let echo = json!({
                "mode": "from-panel",
                "outcome": outcome,
                "da_map": da_map.map(|p| p.display().to_string()),
                "raw_variance": sv.raw_variance,
                "mean_sq_se": sv.mean_sq_se,
                "static_effect": static_fit.estimate,
            });
            let mut inputs = vec![panel_path.to_path_buf()];
            if let Some(m) = da_map {
                inputs.push(m.to_path_buf());
            }
            (report, sv.clamped, echo, inputs)
        }
        _ => {
            return Err(CliError::Input(
                "provide either --effect with --gamma-sq, or --from-panel".into(),
            ))
        }
    };

    let doc = json!({
        "effect": report.effect,
        "gamma_sq": report.gamma_sq,
        "sd_units": report.sd_units,
        "percentile": report.percentile,
        "clamped": clamp_flag,
    });
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            let mut manifest = ManifestBuilder::new("magnitude", spec_echo);
            for path in &inputs {
                manifest.input(path);
            }
            manifest.write_json(dir, "magnitude.json", &doc)?;
            manifest.finish(dir)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&doc).expect("serializable")),
    }
    Ok(())
}

pub fn cycle(
    input: &Path,
    frequency: FrequencyArg,
    span: f64,
    degree: usize,
    outcome: &str,
    out: &Path,
) -> Result<(), CliError> {
    let data = load_panel(input)?;
    let expected = match frequency {
        FrequencyArg::Annual => Frequency::Annual,
        FrequencyArg::Monthly => Frequency::Monthly,
    };
    if data.frequency() != expected {
        return Err(CliError::Input(format!(
            "--frequency does not match the input panel ({})",
            match data.frequency() {
                Frequency::Annual => "annual",
                Frequency::Monthly => "monthly",
            }
        )));
    }
    ensure_dir(out)?;

    let es_spec = EventStudySpec::new(outcome);
    let path = match expected {
        Frequency::Annual => eventstudy::fit_dynamic(&data, &es_spec)?,
        Frequency::Monthly => eventstudy::monthly_path(&data, &es_spec)?,
    };
    // Annual paths plot the normalized election year at zero, so it belongs
    // in the smoothed curve; monthly paths omit the out-of-window block
    // entirely.
    let points: Vec<(f64, f64, f64)> = path
        .points
        .iter()
        .filter(|p| expected == Frequency::Annual || !p.normalized)
        .map(|p| (p.k as f64, p.estimate, 1.0))
        .collect();
    let loess = cyclefit::loess_fit(&points, span, degree)?;
    let sinusoid = cyclefit::sinusoid_fit(&data, &SinusoidSpec::new(outcome))?;
    let transform = cyclefit::transform_regression(&data, &loess, &SinusoidSpec::new(outcome))?;

    let spec_echo = json!({
        "outcome": outcome,
        "frequency": match expected { Frequency::Annual => "annual", Frequency::Monthly => "monthly" },
        "span": span,
        "degree": degree,
    });
    let mut manifest = ManifestBuilder::new("cycle", spec_echo);
    manifest.input(input);

    let doc = json!({
        "A": sinusoid.amplitude,
        "phi": sinusoid.phase,
        "se_A": sinusoid.se_amplitude,
        "se_phi": sinusoid.se_phase,
        "ssr": sinusoid.ssr,
        "period": sinusoid.period,
        "loess": { "span": loess.span, "degree": loess.degree },
        "transform": {
            "beta": transform.beta,
            "se": transform.se,
            "rows_outside_grid": transform.rows_outside_grid,
        },
    });
    manifest.write_json(out, "cycle.json", &doc)?;

    let curve_path = out.join("curve.csv");
    let mut curve = String::from("k,loess,sinusoid\n");
    for (x, fitted) in &loess.grid {
        let k = *x as i64;
        curve.push_str(&format!("{k},{fitted},{}\n", sinusoid.value_at(k)));
    }
    std::fs::write(&curve_path, curve)?;
    manifest.record(&curve_path);
    manifest.finish(out)?;
    Ok(())
}
