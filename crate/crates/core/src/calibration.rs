//! Cutoff calibration under the global null or robustly across several
//! weighted truth scenarios.
//!
//! For every scenario and replicate the approach's calibration model is fitted
//! and each basket's `P(p_k > q0 | data)` is appended to that basket's pool
//! `weight` times whenever the criterion holds for the basket's true rate. The
//! cutoff is the upper `(1 - alpha)` order statistic of the pool. Baskets of
//! equal size fitted by the same model then share the cutoff of the basket
//! that satisfied the criterion most often.
//!
//! Replicate streams are `stream / scenario content key / replicate`, the same
//! paths the fixed study uses, so evaluating on the calibration scenarios with
//! the calibration seed reuses the calibration datasets.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approaches::{fit_cell, unpl_cutoff_assignment, ApproachKind, CutoffSet, FitPlan};
use crate::error::{Error, Result};
use crate::model::{generate_data, Scenario, TrialDesign};
use crate::stream::StreamSeed;

/// Replicates handed to the worker pool at a time.
pub(crate) const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    GlobalNull,
    Rcap,
    /// Cutoffs supplied directly.
    Fixed,
}

impl CalibrationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMethod::GlobalNull => "global_null",
            CalibrationMethod::Rcap => "rcap",
            CalibrationMethod::Fixed => "fixed",
        }
    }
}

impl fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_null" => Ok(CalibrationMethod::GlobalNull),
            "rcap" => Ok(CalibrationMethod::Rcap),
            "fixed" => Ok(CalibrationMethod::Fixed),
            _ => Err(Error::config(format!(
                "unknown calibration method '{s}' (expected global_null or rcap)"
            ))),
        }
    }
}

/// Which baskets of a scenario feed the calibration pool.
#[derive(Debug, Clone, Copy, Default)]
pub enum Criterion {
    /// Baskets whose true rate is at most q0.
    #[default]
    TypeOne,
    /// Arbitrary predicate on (0-based basket, true rate, q0).
    Custom(fn(usize, f64, f64) -> bool),
}

impl Criterion {
    pub fn holds(&self, basket: usize, p: f64, q0: f64) -> bool {
        match self {
            Criterion::TypeOne => p <= q0,
            Criterion::Custom(f) => f(basket, p, q0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationSpec {
    pub method: CalibrationMethod,
    pub scenarios: Vec<Scenario>,
    pub replicates: usize,
    pub alpha: f64,
    pub criterion: Criterion,
}

impl CalibrationSpec {
    pub fn global_null(design: &TrialDesign, replicates: usize) -> Self {
        CalibrationSpec {
            method: CalibrationMethod::GlobalNull,
            scenarios: vec![crate::model::global_null(design)],
            replicates,
            alpha: design.alpha,
            criterion: Criterion::TypeOne,
        }
    }

    pub fn rcap(scenarios: Vec<Scenario>, replicates: usize, alpha: f64) -> Self {
        CalibrationSpec {
            method: CalibrationMethod::Rcap,
            scenarios,
            replicates,
            alpha,
            criterion: Criterion::TypeOne,
        }
    }

    pub fn validate(&self, design: &TrialDesign) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("calibration needs at least one replicate"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("calibration needs at least one scenario"));
        }
        for s in &self.scenarios {
            s.validate(design.k())?;
        }
        match self.method {
            CalibrationMethod::GlobalNull => {
                if self.scenarios.len() != 1 || !self.scenarios[0].p.iter().all(|&p| (p - design.q0).abs() < 1e-12) {
                    return Err(Error::config(
                        "global_null calibration takes exactly one scenario with every rate at q0",
                    ));
                }
            }
            CalibrationMethod::Rcap => {}
            CalibrationMethod::Fixed => {
                return Err(Error::config("fixed cutoffs are not calibrated"));
            }
        }
        Ok(())
    }
}

/// Upper order statistic at rank `ceil(level * N)` of the sorted values.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("quantile level must lie in (0, 1), got {level}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("quantile of a sample containing NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let exact = level * n as f64;
    // 0.9 * 10 evaluates to 9.000000000000002; snap near-integers first
    let rank = if (exact - exact.round()).abs() < 1e-9 { exact.round() } else { exact.ceil() };
    let rank = (rank as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Replace each basket's cutoff with that of its equal-size group's
/// representative: the member satisfying the criterion in the most scenarios
/// (counted by weight), lowest index on ties.
pub fn equal_size_group_rule(
    n: &[u32],
    scenarios: &[Scenario],
    criterion: Criterion,
    q0: f64,
    deltas: &[f64],
) -> Vec<f64> {
    let sources = vec![0usize; n.len()];
    let scenarios: Vec<(&Scenario, u32)> = scenarios.iter().map(|s| (s, s.weight)).collect();
    let reps = representatives(n, &sources, &scenarios, criterion, q0);
    reps.iter().map(|&r| deltas[r]).collect()
}

/// Representative basket for every basket, grouping by (source, size). The
/// count for a basket is the total weight of the scenarios where the
/// criterion holds for it.
fn representatives(
    n: &[u32],
    sources: &[usize],
    scenarios: &[(&Scenario, u32)],
    criterion: Criterion,
    q0: f64,
) -> Vec<usize> {
    let counts: Vec<u64> = (0..n.len())
        .map(|k| {
            scenarios
                .iter()
                .filter(|(s, _)| criterion.holds(k, s.p[k], q0))
                .map(|&(_, w)| u64::from(w))
                .sum()
        })
        .collect();
    (0..n.len())
        .map(|k| {
            (0..n.len())
                .filter(|&j| n[j] == n[k] && sources[j] == sources[k])
                .max_by_key(|&j| (counts[j], std::cmp::Reverse(j)))
                .unwrap()
        })
        .collect()
}

/// Baskets whose posterior probabilities come from different models during
/// calibration get different sources, so they never share a group.
fn sources(approach: ApproachKind, design: &TrialDesign) -> Vec<usize> {
    (0..design.k())
        .map(|b| usize::from(approach.splits_existing_and_new() && design.is_new(b)))
        .collect()
}

/// Effective weight of each scenario for `approach`. UNPL calibrates a model
/// of the existing baskets only, so scenarios that agree on the existing
/// baskets collapse into their first occurrence, which carries the summed
/// weight; the others get weight 0.
fn effective_weights(approach: ApproachKind, design: &TrialDesign, scenarios: &[Scenario]) -> Vec<u32> {
    if approach != ApproachKind::Unpl {
        return scenarios.iter().map(|s| s.weight).collect();
    }
    let existing = |s: &Scenario| s.p[..design.k0].to_vec();
    let mut w = vec![0u32; scenarios.len()];
    for s in scenarios {
        let first = scenarios.iter().position(|t| existing(t) == existing(s)).unwrap();
        w[first] += s.weight;
    }
    w
}

/// Calibrate one approach. See [`calibrate_many`].
pub fn calibrate(
    spec: &CalibrationSpec,
    design: &TrialDesign,
    approach: ApproachKind,
    stream: StreamSeed,
) -> Result<CutoffSet> {
    Ok(calibrate_many(spec, design, &[approach], stream)?.remove(0))
}

/// Calibrate several approaches from the same simulated datasets. Fits shared
/// between approaches are computed once per dataset.
pub fn calibrate_many(
    spec: &CalibrationSpec,
    design: &TrialDesign,
    approaches: &[ApproachKind],
    stream: StreamSeed,
) -> Result<Vec<CutoffSet>> {
    spec.validate(design)?;
    if spec.replicates < 1_000 {
        log::warn!("calibrating with {} replicates per scenario", spec.replicates);
    }
    for &a in approaches {
        design.validate_for(a)?;
    }
    let k = design.k();
    let plan = FitPlan::for_calibration(approaches.iter().copied());

    let weights: Vec<Vec<u32>> =
        approaches.iter().map(|&a| effective_weights(a, design, &spec.scenarios)).collect();

    // pools[approach][basket]
    let mut pools: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k]; approaches.len()];
    for (m, scenario) in spec.scenarios.iter().enumerate() {
        let contributing: Vec<bool> =
            (0..k).map(|b| spec.criterion.holds(b, scenario.p[b], design.q0)).collect();
        if !contributing.iter().any(|&c| c) {
            log::info!("scenario '{}' has no basket meeting the criterion", scenario.label);
            continue;
        }
        if weights.iter().all(|w| w[m] == 0) {
            continue;
        }
        let scenario_stream = stream.child(scenario.key());
        let mut start = 0;
        while start < spec.replicates {
            let end = (start + CHUNK).min(spec.replicates);
            let chunk: Vec<Vec<Vec<Option<f64>>>> = (start..end)
                .into_par_iter()
                .map(|r| {
                    let rep = scenario_stream.child(r as u64);
                    let data = generate_data(scenario, &design.n, rep)?;
                    let fits = fit_cell(plan, &data, design, rep)?;
                    approaches.iter().map(|&a| fits.calibration_probs(a, design)).collect()
                })
                .collect::<Result<_>>()?;
            for per_approach in chunk {
                for ((pool, probs), w) in pools.iter_mut().zip(per_approach).zip(&weights) {
                    for (b, q) in probs.into_iter().enumerate() {
                        if let (true, Some(q)) = (contributing[b], q) {
                            pool[b].extend(std::iter::repeat(q).take(w[m] as usize));
                        }
                    }
                }
            }
            start = end;
        }
    }

    let level = 1.0 - spec.alpha;
    approaches
        .iter()
        .zip(pools.iter().zip(&weights))
        .map(|(&approach, (pool, w))| {
            let src = sources(approach, design);
            let used: Vec<(&Scenario, u32)> = spec.scenarios.iter().zip(w.iter().copied()).collect();
            let reps = representatives(&design.n, &src, &used, spec.criterion, design.q0);
            let calibrated = |b: usize| approach != ApproachKind::Unpl || !design.is_new(b);
            let mut delta = vec![f64::NAN; k];
            for b in (0..k).filter(|&b| calibrated(b)) {
                let r = reps[b];
                if pool[r].is_empty() {
                    return Err(Error::CalibrationInfeasible { basket: r + 1 });
                }
                delta[b] = empirical_quantile(&pool[r], level)?;
            }
            if approach == ApproachKind::Unpl {
                let existing: Vec<usize> = design.existing().collect();
                let ex_delta: Vec<f64> = existing.iter().map(|&b| delta[b]).collect();
                let ex_n: Vec<u32> = existing.iter().map(|&b| design.n[b]).collect();
                for b in design.new_baskets() {
                    delta[b] = unpl_cutoff_assignment(&ex_delta, &ex_n, design.n[b])?;
                }
            }
            Ok(CutoffSet {
                approach,
                delta,
                method: spec.method,
                scenario_labels: spec.scenarios.iter().map(|s| s.label.clone()).collect(),
                seed: stream.value(),
                replicates: spec.replicates,
            })
        })
        .collect()
}
