//! Simulation config files: `[section]` headers with `key = value` lines,
//! `#` comments. Every key is optional and overrides the built-in baseline,
//! so a minimal config is just a seed. Unknown sections or keys are errors
//! that name the offender.

use std::collections::BTreeMap;

use cyclestudy_core::dgp::{EffectSpec, SimConfig};
use cyclestudy_core::Frequency;

pub fn parse_sim_config(text: &str) -> Result<SimConfig, String> {
    let mut config = SimConfig::baseline();
    let mut outcomes: Option<Vec<(String, f64)>> = None;
    let mut homogeneous_path: Option<BTreeMap<i64, f64>> = None;
    let mut cohort_paths: BTreeMap<usize, BTreeMap<i64, f64>> = BTreeMap::new();

    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(format!("line {}: malformed section header `{line}`", lineno + 1));
            }
            section = line[1..line.len() - 1].trim().to_string();
            match section.as_str() {
                "panel" | "effects" | "outcomes" | "noise" | "population" | "run" => {}
                other => return Err(format!("line {}: unknown section [{other}]", lineno + 1)),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected `key = value`, got `{line}`", lineno + 1));
        };
        let key = key.trim();
        let value = value.trim();
        let fail = |msg: String| format!("line {}: key `{key}`: {msg}", lineno + 1);

        let parse_usize =
            |v: &str| v.parse::<usize>().map_err(|_| fail(format!("expected an integer, got `{v}`")));
        let parse_i64 =
            |v: &str| v.parse::<i64>().map_err(|_| fail(format!("expected an integer, got `{v}`")));
        let parse_f64 =
            |v: &str| v.parse::<f64>().map_err(|_| fail(format!("expected a number, got `{v}`")));
        let parse_u64 =
            |v: &str| v.parse::<u64>().map_err(|_| fail(format!("expected an integer, got `{v}`")));

        match (section.as_str(), key) {
            ("panel", "states") => config.states = parse_usize(value)?,
            ("panel", "districts_per_state") => config.districts_per_state = parse_usize(value)?,
            ("panel", "counties_per_district") => config.counties_per_district = parse_usize(value)?,
            ("panel", "start_year") => config.start_year = parse_i64(value)?,
            ("panel", "years") => config.years = parse_i64(value)?,
            ("panel", "term_years") => config.term_years = parse_i64(value)?,
            ("panel", "frequency") => {
                config.frequency = match value {
                    "annual" => Frequency::Annual,
                    "monthly" => Frequency::Monthly,
                    other => return Err(fail(format!("expected annual or monthly, got `{other}`"))),
                }
            }
            ("panel", "cohort_offsets") => {
                let mut offsets = Vec::new();
                for piece in value.split(',') {
                    offsets.push(
                        piece
                            .trim()
                            .parse::<i64>()
                            .map_err(|_| fail(format!("bad offset `{piece}`")))?,
                    );
                }
                config.cohort_offsets = offsets;
            }
            ("effects", "path") => homogeneous_path = Some(parse_path(value).map_err(fail)?),
            ("effects", "sin_amplitude") => config.sin_amplitude = parse_f64(value)?,
            ("effects", "sin_phase") => config.sin_phase = parse_f64(value)?,
            ("effects", k) if k.starts_with("cohort_path_") => {
                let slot = k["cohort_path_".len()..]
                    .parse::<usize>()
                    .map_err(|_| fail("expected cohort_path_<slot>".into()))?;
                cohort_paths.insert(slot, parse_path(value).map_err(fail)?);
            }
            ("outcomes", name) => {
                outcomes.get_or_insert_with(Vec::new).push((name.to_string(), parse_f64(value)?));
            }
            ("noise", "state_fe_sd") => config.state_fe_sd = parse_f64(value)?,
            ("noise", "period_fe_sd") => config.period_fe_sd = parse_f64(value)?,
            ("noise", "district_sd") => config.district_sd = parse_f64(value)?,
            ("noise", "da_effect_sd") => config.da_effect_sd = parse_f64(value)?,
            ("noise", "idio_sd") => config.idio_sd = parse_f64(value)?,
            ("population", "log_mean") => config.pop_log_mean = parse_f64(value)?,
            ("population", "log_sd") => config.pop_log_sd = parse_f64(value)?,
            ("run", "seed") => config.seed = parse_u64(value)?,
            ("run", "emit_controls") => {
                config.emit_controls = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(fail(format!("expected true or false, got `{other}`"))),
                }
            }
            ("", k) => return Err(format!("key `{k}` appears before any [section]")),
            (s, k) => return Err(format!("unknown key `{k}` in section [{s}]")),
        }
    }

    if let Some(outcomes) = outcomes {
        config.outcomes = outcomes;
    }
    if !cohort_paths.is_empty() {
        if homogeneous_path.is_some() {
            return Err("`path` and `cohort_path_*` keys are mutually exclusive".into());
        }
        let slots = config.cohort_offsets.len();
        let mut paths = Vec::with_capacity(slots);
        for slot in 0..slots {
            match cohort_paths.remove(&slot) {
                Some(p) => paths.push(p),
                None => return Err(format!("missing key `cohort_path_{slot}` (one per cohort offset)")),
            }
        }
        if let Some((slot, _)) = cohort_paths.into_iter().next() {
            return Err(format!("key `cohort_path_{slot}` has no matching cohort offset"));
        }
        config.effects = EffectSpec::PerCohort(paths);
    } else if let Some(path) = homogeneous_path {
        config.effects = EffectSpec::Homogeneous(path);
    }

    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

/// Parses `k:value, k:value` relative-time paths.
fn parse_path(value: &str) -> Result<BTreeMap<i64, f64>, String> {
    let mut path = BTreeMap::new();
    for piece in value.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let Some((k, v)) = piece.split_once(':') else {
            return Err(format!("expected k:value, got `{piece}`"));
        };
        let k = k.trim().parse::<i64>().map_err(|_| format!("bad relative time `{k}`"))?;
        let v = v.trim().parse::<f64>().map_err(|_| format!("bad value `{v}`"))?;
        path.insert(k, v);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_baseline() {
        let config = parse_sim_config("[run]\nseed = 9\n").unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.states, SimConfig::baseline().states);
    }

    #[test]
    fn full_config_round_trips_values() {
        let text = "\
[panel]
states = 4
districts_per_state = 6
years = 8
start_year = 1990
cohort_offsets = 0, 2

[effects]
path = -2:-0.02, 0:0.0, 1:-0.04
sin_amplitude = 0.05

[outcomes]
admissions_per_1000 = 1.68

[noise]
idio_sd = 0.2

[population]
log_sd = 0.5

[run]
seed = 77
";
        let config = parse_sim_config(text).unwrap();
        assert_eq!(config.states, 4);
        assert_eq!(config.cohort_offsets, vec![0, 2]);
        assert_eq!(config.outcomes.len(), 1);
        assert_eq!(config.sin_amplitude, 0.05);
        match &config.effects {
            EffectSpec::Homogeneous(p) => assert_eq!(p[&1], -0.04),
            _ => panic!("expected homogeneous path"),
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_sim_config("[noise]\nwobble = 3\n").unwrap_err();
        assert!(err.contains("wobble"), "{err}");
        let err = parse_sim_config("[nope]\nx = 1\n").unwrap_err();
        assert!(err.contains("nope"), "{err}");
    }

    #[test]
    fn per_cohort_paths_must_cover_slots() {
        let text = "[panel]\ncohort_offsets = 0,1\n[effects]\ncohort_path_0 = 0:0.05\n";
        let err = parse_sim_config(text).unwrap_err();
        assert!(err.contains("cohort_path_1"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected_with_key() {
        let err = parse_sim_config("[panel]\nyears = many\n").unwrap_err();
        assert!(err.contains("years"), "{err}");
        let err = parse_sim_config("[run]\nseed = -1\n").unwrap_err();
        assert!(err.contains("seed"), "{err}");
    }
}
