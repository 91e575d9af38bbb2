//! Output files: cutoff CSVs, provenance JSON, long-format operating
//! characteristics and per-figure data tables. Numbers are written with six
//! decimals and percentages on the 0-100 scale.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::approaches::{ApproachKind, CutoffSet};
use crate::calibration::CalibrationMethod;
use crate::error::{Error, Result};
use crate::inference::{Family, PosteriorResult};
use crate::model::TrialDesign;
use crate::simulator::{DiscrepancyRecord, OperatingCharacteristics, SweepPoint};

pub fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn opt6(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

#[derive(Debug, Serialize, Deserialize)]
struct CutoffRow {
    approach: ApproachKind,
    basket: usize,
    delta: String,
    method: CalibrationMethod,
    scenario_set: String,
    seed: u64,
    replicates: usize,
}

const LABEL_SEP: &str = ";";

/// Write cutoff sets, one row per (approach, basket).
pub fn write_cutoffs<W: Write>(w: W, sets: &[CutoffSet]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for set in sets {
        for (b, &d) in set.delta.iter().enumerate() {
            out.serialize(CutoffRow {
                approach: set.approach,
                basket: b + 1,
                delta: fmt6(d),
                method: set.method,
                scenario_set: set.scenario_labels.join(LABEL_SEP),
                seed: set.seed,
                replicates: set.replicates,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read cutoff sets in file order of first appearance. Baskets must run
/// 1, 2, ... within each approach.
pub fn read_cutoffs<R: Read>(r: R) -> Result<Vec<CutoffSet>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut sets: Vec<CutoffSet> = Vec::new();
    for (i, row) in rdr.deserialize::<CutoffRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse(format!("cutoffs line {line}: {e}")))?;
        let delta: f64 = row
            .delta
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("cutoffs line {line}: bad delta '{}'", row.delta)))?;
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Parse(format!("cutoffs line {line}: delta {delta} outside [0, 1]")));
        }
        let labels: Vec<String> = if row.scenario_set.is_empty() {
            Vec::new()
        } else {
            row.scenario_set.split(LABEL_SEP).map(str::to_string).collect()
        };
        match sets.iter_mut().find(|s| s.approach == row.approach) {
            Some(set) => {
                if row.basket != set.delta.len() + 1 {
                    return Err(Error::Parse(format!(
                        "cutoffs line {line}: expected basket {} for {}",
                        set.delta.len() + 1,
                        row.approach
                    )));
                }
                set.delta.push(delta);
            }
            None => {
                if row.basket != 1 {
                    return Err(Error::Parse(format!(
                        "cutoffs line {line}: {} must start at basket 1",
                        row.approach
                    )));
                }
                sets.push(CutoffSet {
                    approach: row.approach,
                    delta: vec![delta],
                    method: row.method,
                    scenario_labels: labels,
                    seed: row.seed,
                    replicates: row.replicates,
                });
            }
        }
    }
    if sets.is_empty() {
        return Err(Error::Parse("cutoffs file has no rows".into()));
    }
    Ok(sets)
}

/// Cutoffs for each requested approach, checked against the design.
pub fn select_cutoffs(
    sets: &[CutoffSet],
    approaches: &[ApproachKind],
    design: &TrialDesign,
) -> Result<Vec<CutoffSet>> {
    approaches
        .iter()
        .map(|&a| {
            let set = sets
                .iter()
                .find(|s| s.approach == a)
                .ok_or_else(|| Error::config(format!("no cutoffs for approach {a}")))?;
            set.validate(design.k())?;
            Ok(set.clone())
        })
        .collect()
}

/// Provenance stamped next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub software: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    /// Effective configuration as TOML.
    pub config: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibrations: Vec<CalibrationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_new: Option<u32>,
    pub cutoffs: CutoffSet,
}

impl Provenance {
    pub fn new(command: &str, master_seed: u64, config: String) -> Self {
        Provenance {
            software: "basket-core".into(),
            version: crate::VERSION.into(),
            command: command.into(),
            master_seed,
            config,
            calibrations: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

const OC_HEADER: [&str; 8] =
    ["study", "scenario", "approach", "basket", "metric", "value", "n_replicates", "seed"];

fn oc_rows(study: &str, oc: &OperatingCharacteristics, seed: u64) -> Vec<[String; 8]> {
    let row = |basket: String, metric: &str, v: f64| {
        [
            study.to_string(),
            oc.scenario.clone(),
            oc.arm(),
            basket,
            metric.to_string(),
            fmt6(v),
            oc.n_replicates.to_string(),
            seed.to_string(),
        ]
    };
    let mut rows = Vec::new();
    for b in 0..oc.pct_reject.len() {
        rows.push(row((b + 1).to_string(), "pct_reject", oc.pct_reject[b]));
        rows.push(row((b + 1).to_string(), "mean_estimate", oc.mean_estimate[b]));
        rows.push(row((b + 1).to_string(), "sd_estimate", oc.sd_estimate[b]));
    }
    rows.push(row("all".into(), "fwer", oc.fwer));
    rows.push(row("all".into(), "pct_all_correct", oc.pct_all_correct));
    rows
}

/// Long-format operating characteristics.
pub fn write_oc<W: Write>(w: W, study: &str, ocs: &[OperatingCharacteristics], seed: u64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(OC_HEADER)?;
    for oc in ocs {
        for r in oc_rows(study, oc, seed) {
            out.write_record(&r)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Long-format operating characteristics for a timing sweep, with the
/// new-basket size as a leading column.
pub fn write_sweep_oc<W: Write>(w: W, points: &[SweepPoint], seed: u64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["n_new"];
    header.extend(OC_HEADER);
    out.write_record(&header)?;
    for p in points {
        for oc in &p.oc {
            for r in oc_rows("timing_sweep", oc, seed) {
                let mut rec = vec![p.n_new.to_string()];
                rec.extend(r);
                out.write_record(&rec)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_cutoffs<W: Write>(w: W, points: &[SweepPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n_new", "approach", "basket", "delta", "method", "seed"])?;
    for p in points {
        for set in &p.cutoffs {
            for (b, &d) in set.delta.iter().enumerate() {
                out.write_record([
                    p.n_new.to_string(),
                    set.approach.to_string(),
                    (b + 1).to_string(),
                    fmt6(d),
                    set.method.to_string(),
                    set.seed.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-basket rejection rates with the truth, one row per (scenario, arm,
/// basket): the bars of the calibration-method comparison.
pub fn write_figure2<W: Write>(
    w: W,
    design: &TrialDesign,
    truths: &BTreeMap<String, Vec<f64>>,
    ocs: &[OperatingCharacteristics],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "approach", "method", "basket", "basket_class", "truth", "effective", "pct_reject"])?;
    for oc in ocs {
        let truth = truths.get(&oc.scenario);
        for (b, &r) in oc.pct_reject.iter().enumerate() {
            let p = truth.map(|t| t[b]);
            out.write_record([
                oc.scenario.clone(),
                oc.approach.to_string(),
                oc.method.to_string(),
                (b + 1).to_string(),
                if design.is_new(b) { "new" } else { "existing" }.to_string(),
                opt6(p),
                p.map(|p| (p > design.q0).to_string()).unwrap_or_default(),
                fmt6(r),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Discrepancy analysis between pairs of arms.
pub fn write_figure3<W: Write>(w: W, records: &[DiscrepancyRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["approach_a", "approach_b", "basket_class", "n_discrepant", "prop_correct_a", "prop_correct_b", "diff"])?;
    for r in records {
        out.write_record([
            r.arm_a.clone(),
            r.arm_b.clone(),
            r.basket_class.as_str().to_string(),
            r.n_discrepant.to_string(),
            opt6(r.prop_correct_a),
            opt6(r.prop_correct_b),
            opt6(r.diff),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Raw chains as long-format CSV, one row per kept draw and basket. `mu` and
/// `sigma` are blank for independent fits, `delta` for non-EXNEX fits.
pub fn write_chains<W: Write>(w: W, fits: &[(String, PosteriorResult)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fit", "iteration", "basket", "theta", "delta", "mu", "sigma"])?;
    for (name, fit) in fits {
        let Some(chain) = &fit.chain else { continue };
        let hyper = fit.family != Family::Independent;
        for (it, theta) in chain.theta.iter().enumerate() {
            for (pos, &t) in theta.iter().enumerate() {
                let delta = match fit.family {
                    Family::Exnex => u8::from(chain.delta[it][pos]).to_string(),
                    _ => String::new(),
                };
                let (mu, sigma) = if hyper { (fmt6(chain.mu[it]), fmt6(chain.sigma[it])) } else { Default::default() };
                out.write_record([
                    name.clone(),
                    (it + 1).to_string(),
                    (fit.baskets[pos] + 1).to_string(),
                    fmt6(t),
                    delta,
                    mu,
                    sigma,
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Mean rejection rate over the baskets of one class that are null
/// (`effective == false`) or effective in `truth`; `None` if there are none.
pub fn class_rate(
    design: &TrialDesign,
    truth: &[f64],
    oc: &OperatingCharacteristics,
    new: bool,
    effective: bool,
) -> Option<f64> {
    let rates: Vec<f64> = (0..design.k())
        .filter(|&b| design.is_new(b) == new && (truth[b] > design.q0) == effective)
        .map(|b| oc.pct_reject[b])
        .collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Error and power against new-basket size, for new (`new = true`, the
/// new-basket panels) or existing baskets.
pub fn write_sweep_figure<W: Write>(
    w: W,
    design: &TrialDesign,
    truths: &BTreeMap<String, Vec<f64>>,
    points: &[SweepPoint],
    new: bool,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n_new", "scenario", "approach", "method", "metric", "value"])?;
    for p in points {
        for oc in &p.oc {
            let Some(truth) = truths.get(&oc.scenario) else { continue };
            for (metric, effective) in [("type_one_error", false), ("power", true)] {
                if let Some(v) = class_rate(design, truth, oc, new, effective) {
                    out.write_record([
                        p.n_new.to_string(),
                        oc.scenario.clone(),
                        oc.approach.to_string(),
                        oc.method.to_string(),
                        metric.to_string(),
                        fmt6(v),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Fixed-width summary for the terminal.
pub fn summary_table(ocs: &[OperatingCharacteristics]) -> String {
    let mut s = String::new();
    let k = ocs.first().map_or(0, |o| o.pct_reject.len());
    s.push_str(&format!("{:<24} {:<18}", "scenario", "approach"));
    for b in 1..=k {
        s.push_str(&format!(" {:>7}", format!("B{b}")));
    }
    s.push_str(&format!(" {:>7} {:>8}\n", "FWER", "correct"));
    for oc in ocs {
        s.push_str(&format!("{:<24} {:<18}", oc.scenario, oc.arm()));
        for r in &oc.pct_reject {
            s.push_str(&format!(" {r:>7.2}"));
        }
        s.push_str(&format!(" {:>7.2} {:>8.2}\n", oc.fwer, oc.pct_all_correct));
    }
    s
}
