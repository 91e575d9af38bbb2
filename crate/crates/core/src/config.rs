//! TOML run configuration.
//!
//! ```toml
//! preset = "paper_4plus1"
//! master_seed = 2024
//! threads = 0
//! output_dir = "out"
//! approaches = ["ind_a", "unpl", "pl1", "pl2"]
//!
//! [design]            # overrides on top of the preset
//! alpha = 0.1
//!
//! [calibration]
//! method = "rcap"
//! scenarios = ["Sc 1", "Sc 2", "Sc 3", "Sc 4", "Sc 5"]
//! replicates = 10000
//!
//! [study]
//! kind = "fixed"
//! scenarios = ["Sc 1", [0.4, 0.4, 0.2, 0.2, 0.3], { p = [0.2, 0.2, 0.2, 0.2, 0.4], weight = 2, label = "mine" }]
//! replicates = 10000
//! ```
//!
//! Without a preset the `[design]` table must be complete, except that
//! `priors` defaults to the reference priors for the design's q0 and `mcmc`
//! to the default sampler settings. Scenario entries are labels of the
//! design's standard scenarios, bare rate vectors, or tables.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::approaches::ApproachKind;
use crate::calibration::{CalibrationMethod, CalibrationSpec, Criterion};
use crate::error::{Error, Result};
use crate::model::{global_null, standard_scenarios, PriorSpec, Scenario, TrialDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioEntry {
    Label(String),
    Rates(Vec<f64>),
    Full {
        p: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub method: CalibrationMethod,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Fixed,
    RandomTruth,
    TimingSweep,
    TwoPlusTwo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: StudyKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Random truth: rates of the existing baskets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing: Option<Vec<f64>>,
    /// Random truth: new-basket rate interval `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    /// Timing sweep: new-basket sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_new: Option<Vec<u32>>,
}

fn default_replicates() -> usize {
    10_000
}

/// Configuration file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub approaches: Vec<ApproachKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Study settings with scenarios resolved.
#[derive(Debug, Clone)]
pub struct Study {
    pub kind: StudyKind,
    pub scenarios: Vec<Scenario>,
    pub replicates: usize,
    pub existing: Option<Vec<f64>>,
    pub interval: Option<(f64, f64)>,
    pub n_new: Option<Vec<u32>>,
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct Run {
    pub design: TrialDesign,
    pub approaches: Vec<ApproachKind>,
    pub calibration: Option<CalibrationSpec>,
    pub study: Option<Study>,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub master_seed: u64,
}

/// 1-based line of byte offset `pos` in `src`.
fn line_at(src: &str, pos: usize) -> usize {
    src[..pos.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line where `[table]` or `key =` first appears, for anchoring errors.
fn line_of(src: &str, needle: &str) -> Option<usize> {
    src.lines().position(|l| {
        let t = l.trim_start();
        t.starts_with(&format!("[{needle}]")) || t.starts_with(&format!("{needle} ")) || t.starts_with(&format!("{needle}="))
    })
    .map(|i| i + 1)
}

fn anchored(src: &str, section: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) | Error::Domain(m) | Error::Parse(m) => m,
        other => other.to_string(),
    };
    match line_of(src, section) {
        Some(line) => Error::Parse(format!("line {line}: [{section}] {msg}")),
        None => Error::Parse(format!("[{section}] {msg}")),
    }
}

fn merge(base: &mut Table, overrides: &Table) {
    for (k, v) in overrides {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> Result<Table> {
    match Value::try_from(v).map_err(|e| Error::Parse(e.to_string()))? {
        Value::Table(t) => Ok(t),
        _ => Err(Error::Parse("expected a table".into())),
    }
}

impl RunConfig {
    pub fn parse(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => Error::Parse(format!("line {}: {msg}", line_at(src, span.start))),
                None => Error::Parse(msg),
            }
        })
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, String)> {
        let src = std::fs::read_to_string(path)?;
        Ok((Self::parse(&src)?, src))
    }

    /// Recover the effective configuration stored in a provenance file.
    pub fn from_provenance(json: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(json)?;
        let cfg = v
            .get("config")
            .and_then(|c| c.as_str())
            .ok_or_else(|| Error::Parse("provenance has no 'config' string".into()))?;
        Self::parse(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    fn design(&self) -> Result<TrialDesign> {
        let mut table = match &self.preset {
            Some(name) => {
                let d = TrialDesign::preset(name).ok_or_else(|| {
                    Error::config(format!(
                        "unknown preset '{name}' (expected paper_4plus1 or paper_2plus2)"
                    ))
                })?;
                to_table(&d)?
            }
            None => {
                let mut t = Table::new();
                t.insert("mcmc".into(), Value::Table(to_table(&crate::model::McmcSettings::default())?));
                let approach = self.approaches.first().copied().unwrap_or(ApproachKind::Pl1);
                t.insert("approach".into(), Value::String(approach.as_str().into()));
                t
            }
        };
        if let Some(o) = &self.design {
            let preset_has_priors = table.contains_key("priors");
            let overrides_shape = ["k0", "k_new", "q0"].iter().any(|k| o.contains_key(*k));
            if preset_has_priors && overrides_shape && !o.contains_key("priors") {
                // resized or re-centred designs get fresh reference priors
                table.remove("priors");
            }
            merge(&mut table, o);
        }
        if !table.contains_key("priors") {
            let q0 = table.get("q0").and_then(Value::as_float);
            let k0 = table.get("k0").and_then(Value::as_integer);
            let k_new = table.get("k_new").and_then(Value::as_integer);
            if let (Some(q0), Some(k0), Some(k_new)) = (q0, k0, k_new) {
                if q0 > 0.0 && q0 < 1.0 && k0 >= 0 && k_new >= 0 {
                    let p = PriorSpec::reference(q0, (k0 + k_new) as usize);
                    table.insert("priors".into(), Value::Table(to_table(&p)?));
                }
            }
        }
        let design: TrialDesign =
            Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        design.validate()?;
        Ok(design)
    }

    /// Validate and fill defaults. Errors carry the line of the offending
    /// table in `src` when it can be found.
    pub fn resolve(&self, src: &str) -> Result<Run> {
        let design = self.design().map_err(|e| anchored(src, "design", e))?;
        let approaches =
            if self.approaches.is_empty() { vec![design.approach] } else { self.approaches.clone() };
        for &a in &approaches {
            design.validate_for(a).map_err(|e| anchored(src, "approaches", e))?;
        }
        let standard = standard_scenarios(&design);
        let resolve_list = |entries: &[ScenarioEntry]| -> Result<Vec<Scenario>> {
            entries.iter().map(|e| resolve_entry(e, &standard)).collect()
        };

        let calibration = self
            .calibration
            .as_ref()
            .map(|c| -> Result<CalibrationSpec> {
                let scenarios = if c.scenarios.is_empty() {
                    match c.method {
                        CalibrationMethod::GlobalNull => vec![global_null(&design)],
                        _ => return Err(Error::config("rcap calibration needs a scenario list")),
                    }
                } else {
                    resolve_list(&c.scenarios)?
                };
                let spec = CalibrationSpec {
                    method: c.method,
                    scenarios,
                    replicates: c.replicates,
                    alpha: c.alpha.unwrap_or(design.alpha),
                    criterion: Criterion::TypeOne,
                };
                spec.validate(&design)?;
                Ok(spec)
            })
            .transpose()
            .map_err(|e| anchored(src, "calibration", e))?;

        let study = self
            .study
            .as_ref()
            .map(|s| -> Result<Study> {
                let scenarios = if s.scenarios.is_empty() { standard.clone() } else { resolve_list(&s.scenarios)? };
                for sc in &scenarios {
                    sc.validate(design.k())?;
                }
                if s.replicates == 0 {
                    return Err(Error::config("study.replicates must be at least 1"));
                }
                let interval = s.interval.map(|[lo, hi]| (lo, hi));
                match s.kind {
                    StudyKind::RandomTruth => {
                        if s.existing.is_none() || interval.is_none() {
                            return Err(Error::config("random_truth needs 'existing' and 'interval'"));
                        }
                    }
                    StudyKind::TimingSweep => {
                        let max_n = design.existing().map(|b| design.n[b]).max().unwrap_or(0);
                        let n_new = s.n_new.as_deref().unwrap_or(&[]);
                        if let Some(bad) = n_new.iter().find(|&&n| n < 1 || n > max_n) {
                            return Err(Error::config(format!("n_new value {bad} outside 1..={max_n}")));
                        }
                    }
                    StudyKind::TwoPlusTwo => {
                        if design.k0 != 2 || design.k_new != 2 {
                            return Err(Error::config("two_plus_two needs k0 = 2 and k_new = 2"));
                        }
                    }
                    StudyKind::Fixed => {}
                }
                Ok(Study {
                    kind: s.kind,
                    scenarios,
                    replicates: s.replicates,
                    existing: s.existing.clone(),
                    interval,
                    n_new: s.n_new.clone(),
                })
            })
            .transpose()
            .map_err(|e| anchored(src, "study", e))?;

        Ok(Run {
            design,
            approaches,
            calibration,
            study,
            output_dir: self.output_dir.clone(),
            threads: self.threads,
            master_seed: self.master_seed,
        })
    }
}

fn resolve_entry(entry: &ScenarioEntry, standard: &[Scenario]) -> Result<Scenario> {
    match entry {
        ScenarioEntry::Label(l) => standard
            .iter()
            .find(|s| &s.label == l)
            .cloned()
            .ok_or_else(|| Error::config(format!("unknown scenario label '{l}'"))),
        ScenarioEntry::Rates(p) => Ok(Scenario::new(rates_label(p), p.clone())),
        ScenarioEntry::Full { p, weight, label } => Ok(Scenario {
            p: p.clone(),
            weight: weight.unwrap_or(1),
            label: label.clone().unwrap_or_else(|| rates_label(p)),
        }),
    }
}

fn rates_label(p: &[f64]) -> String {
    format!("({})", p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

fn explicit(s: &Scenario) -> ScenarioEntry {
    ScenarioEntry::Full { p: s.p.clone(), weight: Some(s.weight), label: Some(s.label.clone()) }
}

impl Run {
    /// Fully explicit configuration equivalent to this run.
    pub fn to_config(&self) -> Result<RunConfig> {
        Ok(RunConfig {
            preset: None,
            master_seed: self.master_seed,
            threads: self.threads,
            output_dir: self.output_dir.clone(),
            approaches: self.approaches.clone(),
            design: Some(to_table(&self.design)?),
            calibration: self.calibration.as_ref().map(|c| CalibrationConfig {
                method: c.method,
                scenarios: c.scenarios.iter().map(explicit).collect(),
                replicates: c.replicates,
                alpha: Some(c.alpha),
            }),
            study: self.study.as_ref().map(|s| StudyConfig {
                kind: s.kind,
                scenarios: s.scenarios.iter().map(explicit).collect(),
                replicates: s.replicates,
                existing: s.existing.clone(),
                interval: s.interval.map(|(lo, hi)| [lo, hi]),
                n_new: s.n_new.clone(),
            }),
        })
    }

    pub fn effective_toml(&self) -> Result<String> {
        self.to_config()?.to_toml()
    }
}

/// Parse and resolve a configuration in one step.
pub fn load_run(src: &str) -> Result<Run> {
    RunConfig::parse(src)?.resolve(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
preset = "paper_4plus1"
master_seed = 7
approaches = ["ind_a", "pl1"]

[calibration]
method = "rcap"
scenarios = ["Sc 1", "Sc 2", "Sc 3", "Sc 4", "Sc 5"]
replicates = 2000

[study]
kind = "fixed"
scenarios = ["Sc 1", [0.4, 0.4, 0.2, 0.2, 0.3], { p = [0.2, 0.2, 0.2, 0.2, 0.4], weight = 2, label = "mine" }]
replicates = 100
"#;

    #[test]
    fn resolves_labels_vectors_and_tables() {
        let run = load_run(BASIC).unwrap();
        assert_eq!(run.design, TrialDesign::paper_4plus1());
        let cal = run.calibration.unwrap();
        assert_eq!(cal.scenarios.len(), 5);
        assert_eq!(cal.alpha, 0.1);
        let study = run.study.unwrap();
        assert_eq!(study.scenarios[0].p, vec![0.2; 5]);
        assert_eq!(study.scenarios[1].p[4], 0.3);
        assert_eq!(study.scenarios[2].weight, 2);
        assert_eq!(study.scenarios[2].label, "mine");
    }

    #[test]
    fn effective_config_round_trips() {
        let first = load_run(BASIC).unwrap().effective_toml().unwrap();
        let second = load_run(&first).unwrap().effective_toml().unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn missing_q0_is_rejected_with_line() {
        let src = "master_seed = 1\n\n[design]\nk0 = 2\nk_new = 1\nn = [10, 10, 5]\nq1 = 0.4\nalpha = 0.1\n";
        let err = load_run(src).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("q0"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = load_run("master_seed = 1\nthreads = = 2\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn global_null_with_non_null_scenario_rejected() {
        let src = "preset = \"paper_4plus1\"\n[calibration]\nmethod = \"global_null\"\nscenarios = [\"Sc 2\"]\n";
        let err = load_run(src).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn global_null_defaults_scenario() {
        let src = "preset = \"paper_4plus1\"\n[calibration]\nmethod = \"global_null\"\n";
        let cal = load_run(src).unwrap().calibration.unwrap();
        assert_eq!(cal.scenarios[0].p, vec![0.2; 5]);
    }

    #[test]
    fn unknown_keys_and_labels_rejected() {
        assert!(load_run("preset = \"paper_4plus1\"\nbogus = 1\n").is_err());
        let src = "preset = \"paper_4plus1\"\n[study]\nkind = \"fixed\"\nscenarios = [\"Sc 99\"]\n";
        assert!(load_run(src).is_err());
        assert!(load_run("preset = \"paper_9\"\n").is_err());
    }

    #[test]
    fn design_overrides_refresh_priors() {
        let src = "preset = \"paper_4plus1\"\n[design]\nk0 = 3\nn = [20, 20, 20, 10]\n";
        let run = load_run(src).unwrap();
        assert_eq!(run.design.k(), 4);
        assert_eq!(run.design.priors.pi.len(), 4);
    }

    #[test]
    fn sweep_range_checked() {
        let src = "preset = \"paper_4plus1\"\n[study]\nkind = \"timing_sweep\"\nn_new = [0, 4]\n";
        assert!(load_run(src).is_err());
        let src = "preset = \"paper_4plus1\"\n[study]\nkind = \"timing_sweep\"\nn_new = [25]\n";
        assert!(load_run(src).is_err());
    }

    #[test]
    fn provenance_round_trip() {
        let eff = load_run(BASIC).unwrap().effective_toml().unwrap();
        let json = serde_json::json!({ "config": eff }).to_string();
        let back = RunConfig::from_provenance(&json).unwrap();
        assert_eq!(back.to_toml().unwrap(), eff);
    }
}
