//! Monte Carlo studies: fixed truth scenarios, random new-basket truth with
//! pairwise discrepancy analysis, timing-of-addition sweeps and the 2+2
//! configuration.
//!
//! Each replicate draws its data once from `stream / scenario key / r` and
//! every arm (an approach with its cutoffs) analyses that same dataset. Fits
//! shared between arms are computed once. Replicates run in parallel in
//! chunks and are folded into the aggregates in replicate order, so results do
//! not depend on the thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::approaches::{fit_cell, ApproachKind, CutoffSet, FitPlan};
use crate::calibration::{calibrate_many, CalibrationMethod, CalibrationSpec, CHUNK};
use crate::error::{Error, Result};
use crate::inference::PosteriorResult;
use crate::model::{generate_data, Scenario, TrialDesign};
use crate::stream::{content_key, keys, StreamSeed};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingCharacteristics {
    pub scenario: String,
    pub approach: ApproachKind,
    pub method: CalibrationMethod,
    /// Percentage of replicates declaring each basket effective.
    pub pct_reject: Vec<f64>,
    /// Percentage of replicates with at least one false efficacy claim.
    pub fwer: f64,
    /// Percentage of replicates with every basket classified correctly.
    pub pct_all_correct: f64,
    /// Mean and SD across replicates of the posterior mean response rate.
    pub mean_estimate: Vec<f64>,
    pub sd_estimate: Vec<f64>,
    pub n_replicates: usize,
}

impl OperatingCharacteristics {
    pub fn arm(&self) -> String {
        format!("{}/{}", self.approach, self.method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BasketClass {
    Existing,
    New,
    All,
}

impl BasketClass {
    pub const ALL: [BasketClass; 3] = [BasketClass::Existing, BasketClass::New, BasketClass::All];

    pub fn as_str(self) -> &'static str {
        match self {
            BasketClass::Existing => "existing",
            BasketClass::New => "new",
            BasketClass::All => "all",
        }
    }

    fn contains(self, design: &TrialDesign, b: usize) -> bool {
        match self {
            BasketClass::Existing => !design.is_new(b),
            BasketClass::New => design.is_new(b),
            BasketClass::All => true,
        }
    }
}

/// Comparison of two arms over the basket decisions on which they disagree.
/// Exactly one of two differing decisions is correct, so the two proportions
/// sum to one. They are `None` when the arms never disagree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyRecord {
    pub arm_a: String,
    pub arm_b: String,
    pub basket_class: BasketClass,
    pub n_discrepant: usize,
    pub prop_correct_a: Option<f64>,
    pub prop_correct_b: Option<f64>,
    pub diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomTruthResult {
    pub oc: Vec<OperatingCharacteristics>,
    pub discrepancies: Vec<DiscrepancyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n_new: u32,
    pub cutoffs: Vec<CutoffSet>,
    pub oc: Vec<OperatingCharacteristics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub cutoffs: Vec<CutoffSet>,
    pub oc: Vec<OperatingCharacteristics>,
}

/// Per-arm tallies for one scenario.
#[derive(Debug, Clone)]
struct Tally {
    reject: Vec<usize>,
    fwer: usize,
    all_correct: usize,
    est_sum: Vec<f64>,
    est_sq: Vec<f64>,
}

impl Tally {
    fn new(k: usize) -> Self {
        Tally { reject: vec![0; k], fwer: 0, all_correct: 0, est_sum: vec![0.0; k], est_sq: vec![0.0; k] }
    }

    fn finish(
        &self,
        scenario: &str,
        arm: &CutoffSet,
        replicates: usize,
    ) -> OperatingCharacteristics {
        let r = replicates as f64;
        let pct = |c: usize| 100.0 * c as f64 / r;
        let mean: Vec<f64> = self.est_sum.iter().map(|s| s / r).collect();
        let sd = self
            .est_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                if replicates < 2 {
                    0.0
                } else {
                    ((sq - r * m * m) / (r - 1.0)).max(0.0).sqrt()
                }
            })
            .collect();
        OperatingCharacteristics {
            scenario: scenario.to_string(),
            approach: arm.approach,
            method: arm.method,
            pct_reject: self.reject.iter().map(|&c| pct(c)).collect(),
            fwer: pct(self.fwer),
            pct_all_correct: pct(self.all_correct),
            mean_estimate: mean,
            sd_estimate: sd,
            n_replicates: replicates,
        }
    }
}

/// Discrepancy counts for an unordered pair of arms, per basket class.
#[derive(Debug, Clone, Default)]
struct PairTally {
    discrepant: [usize; 3],
    first_correct: [usize; 3],
}

struct Replicate {
    truth: Vec<f64>,
    /// Decisions and point estimates per arm.
    arms: Vec<(Vec<bool>, Vec<f64>)>,
}

struct Engine<'a> {
    design: &'a TrialDesign,
    arms: &'a [CutoffSet],
    plan: FitPlan,
}

impl<'a> Engine<'a> {
    fn new(design: &'a TrialDesign, arms: &'a [CutoffSet]) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::config("no approaches to simulate"));
        }
        design.validate()?;
        for a in arms {
            design.validate_for(a.approach)?;
            a.validate(design.k())?;
        }
        Ok(Engine { design, arms, plan: FitPlan::for_analysis(arms.iter().map(|a| a.approach)) })
    }

    fn replicate(&self, truth: Vec<f64>, rep: StreamSeed) -> Result<Replicate> {
        let scenario = Scenario::new("", truth);
        let data = generate_data(&scenario, &self.design.n, rep)?;
        let fits = fit_cell(self.plan, &data, self.design, rep)?;
        let arms = self
            .arms
            .iter()
            .map(|arm| {
                let view = fits.analysis_view(arm.approach, self.design)?;
                let reject = view.prob.iter().zip(&arm.delta).map(|(p, d)| p > d).collect();
                Ok((reject, view.mean))
            })
            .collect::<Result<_>>()?;
        Ok(Replicate { truth: scenario.p, arms })
    }

    /// Run `replicates` replicates whose truth comes from `truth(rep stream)`
    /// and fold them into per-arm and per-pair tallies in replicate order.
    fn run(
        &self,
        replicates: usize,
        stream: StreamSeed,
        truth: impl Fn(StreamSeed) -> Result<Vec<f64>> + Sync,
    ) -> Result<(Vec<Tally>, Vec<PairTally>)> {
        if replicates == 0 {
            return Err(Error::config("at least one replicate is required"));
        }
        let k = self.design.k();
        let q0 = self.design.q0;
        let n_arms = self.arms.len();
        let mut tallies = vec![Tally::new(k); n_arms];
        let mut pairs = vec![PairTally::default(); n_arms * n_arms];
        let mut start = 0;
        while start < replicates {
            let end = (start + CHUNK).min(replicates);
            let chunk: Vec<Replicate> = (start..end)
                .into_par_iter()
                .map(|r| {
                    let rep = stream.child(r as u64);
                    self.replicate(truth(rep)?, rep)
                })
                .collect::<Result<_>>()?;
            for rep in chunk {
                let effective: Vec<bool> = rep.truth.iter().map(|&p| p > q0).collect();
                for (t, (reject, est)) in tallies.iter_mut().zip(&rep.arms) {
                    let mut false_claim = false;
                    let mut all_correct = true;
                    for b in 0..k {
                        if reject[b] {
                            t.reject[b] += 1;
                            false_claim |= !effective[b];
                        }
                        all_correct &= reject[b] == effective[b];
                        t.est_sum[b] += est[b];
                        t.est_sq[b] += est[b] * est[b];
                    }
                    t.fwer += usize::from(false_claim);
                    t.all_correct += usize::from(all_correct);
                }
                for i in 0..n_arms {
                    for j in i + 1..n_arms {
                        let (a, b) = (&rep.arms[i].0, &rep.arms[j].0);
                        let pt = &mut pairs[i * n_arms + j];
                        for basket in (0..k).filter(|&x| a[x] != b[x]) {
                            let first_right = a[basket] == effective[basket];
                            for (c, class) in BasketClass::ALL.iter().enumerate() {
                                if class.contains(self.design, basket) {
                                    pt.discrepant[c] += 1;
                                    pt.first_correct[c] += usize::from(first_right);
                                }
                            }
                        }
                    }
                }
            }
            start = end;
        }
        Ok((tallies, pairs))
    }

    fn discrepancies(&self, pairs: &[PairTally]) -> Vec<DiscrepancyRecord> {
        let n_arms = self.arms.len();
        let mut out = Vec::new();
        for i in 0..n_arms {
            for j in 0..n_arms {
                if i == j {
                    continue;
                }
                let (lo, hi) = (i.min(j), i.max(j));
                let pt = &pairs[lo * n_arms + hi];
                for (c, &class) in BasketClass::ALL.iter().enumerate() {
                    let n = pt.discrepant[c];
                    let lo_right = pt.first_correct[c];
                    let right_i = if i == lo { lo_right } else { n - lo_right };
                    let (pa, pb) = if n == 0 {
                        (None, None)
                    } else {
                        let pa = right_i as f64 / n as f64;
                        (Some(pa), Some((n - right_i) as f64 / n as f64))
                    };
                    out.push(DiscrepancyRecord {
                        arm_a: self.arms[i].arm(),
                        arm_b: self.arms[j].arm(),
                        basket_class: class,
                        n_discrepant: n,
                        prop_correct_a: pa,
                        prop_correct_b: pb,
                        diff: pa.zip(pb).map(|(a, b)| a - b),
                    });
                }
            }
        }
        out
    }
}

/// Operating characteristics of every arm in every scenario, scenario-major.
pub fn run_fixed_study(
    design: &TrialDesign,
    cutoffs: &[CutoffSet],
    scenarios: &[Scenario],
    replicates: usize,
    stream: StreamSeed,
) -> Result<Vec<OperatingCharacteristics>> {
    let engine = Engine::new(design, cutoffs)?;
    for s in scenarios {
        s.validate(design.k())?;
    }
    let mut out = Vec::with_capacity(scenarios.len() * cutoffs.len());
    for s in scenarios {
        log::info!("simulating scenario '{}' ({replicates} replicates)", s.label);
        let (tallies, _) =
            engine.run(replicates, stream.child(s.key()), |_| Ok(s.p.clone()))?;
        out.extend(tallies.iter().zip(cutoffs).map(|(t, arm)| t.finish(&s.label, arm, replicates)));
    }
    Ok(out)
}

/// Existing baskets at fixed rates; each replicate draws every new basket's
/// rate uniformly from `[lo, hi)`.
pub fn run_random_truth_study(
    design: &TrialDesign,
    existing: &[f64],
    interval: (f64, f64),
    cutoffs: &[CutoffSet],
    replicates: usize,
    stream: StreamSeed,
) -> Result<RandomTruthResult> {
    let engine = Engine::new(design, cutoffs)?;
    let (lo, hi) = interval;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::config(format!("interval must satisfy 0 < lo < hi < 1, got [{lo}, {hi}]")));
    }
    if existing.len() != design.k0 {
        return Err(Error::config(format!(
            "{} existing rates given for {} existing baskets",
            existing.len(),
            design.k0
        )));
    }
    let mut key_material = existing.to_vec();
    key_material.extend([f64::NAN, lo, hi]);
    let label = format!(
        "existing ({}) new U[{lo}, {hi})",
        existing.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
    );
    let dist = rand_distr::Uniform::new(lo, hi).map_err(|e| Error::domain(e.to_string()))?;
    let (tallies, pairs) = engine.run(replicates, stream.child(content_key(&key_material)), |rep| {
        let truth_stream = rep.child(keys::TRUTH);
        let mut p = existing.to_vec();
        for b in design.new_baskets() {
            p.push(truth_stream.child(b as u64 + 1).rng().sample(dist));
        }
        Ok(p)
    })?;
    Ok(RandomTruthResult {
        oc: tallies.iter().zip(cutoffs).map(|(t, arm)| t.finish(&label, arm, replicates)).collect(),
        discrepancies: engine.discrepancies(&pairs),
    })
}

/// For each new-basket size, recalibrate every approach on the resized design
/// and evaluate it on `scenarios`. Calibration and evaluation use the
/// `CALIBRATION` and `SIMULATION` children of `stream`, which do not depend
/// on the new-basket size.
pub fn run_timing_sweep(
    design: &TrialDesign,
    approaches: &[ApproachKind],
    n_new_values: &[u32],
    calibration: &CalibrationSpec,
    scenarios: &[Scenario],
    replicates: usize,
    stream: StreamSeed,
) -> Result<Vec<SweepPoint>> {
    if design.k_new == 0 {
        return Err(Error::config("a timing sweep needs at least one new basket"));
    }
    let max_n = design.existing().map(|b| design.n[b]).max().unwrap_or(0);
    if n_new_values.is_empty() {
        return Err(Error::config("no new-basket sizes to sweep"));
    }
    if let Some(bad) = n_new_values.iter().find(|&&n| n < 1 || n > max_n) {
        return Err(Error::config(format!("new-basket size {bad} outside 1..={max_n}")));
    }
    n_new_values
        .iter()
        .map(|&n_new| {
            log::info!("timing sweep: new-basket size {n_new}");
            let d = design.with_new_size(n_new);
            let cutoffs = calibrate_many(calibration, &d, approaches, stream.child(keys::CALIBRATION))?;
            let oc = run_fixed_study(&d, &cutoffs, scenarios, replicates, stream.child(keys::SIMULATION))?;
            Ok(SweepPoint { n_new, cutoffs, oc })
        })
        .collect()
}

/// Calibrate and evaluate a design with two existing and two new baskets.
pub fn run_two_plus_two_study(
    design: &TrialDesign,
    approaches: &[ApproachKind],
    calibration: &CalibrationSpec,
    scenarios: &[Scenario],
    replicates: usize,
    stream: StreamSeed,
) -> Result<StudyResult> {
    if design.k0 != 2 || design.k_new != 2 {
        return Err(Error::config(format!(
            "the 2+2 study needs two existing and two new baskets, got {} + {}",
            design.k0, design.k_new
        )));
    }
    let cutoffs = calibrate_many(calibration, design, approaches, stream.child(keys::CALIBRATION))?;
    let oc = run_fixed_study(design, &cutoffs, scenarios, replicates, stream.child(keys::SIMULATION))?;
    Ok(StudyResult { cutoffs, oc })
}

/// Fits, with raw draws, behind the first replicate of `scenario` in a
/// fixed study run from `master`. Keyed by model scope.
pub fn debug_replicate(
    design: &TrialDesign,
    approaches: &[ApproachKind],
    scenario: &Scenario,
    master: StreamSeed,
) -> Result<Vec<(String, PosteriorResult)>> {
    let mut d = design.clone();
    d.mcmc.keep_chain = true;
    let rep = master.child(keys::SIMULATION).child(scenario.key()).child(0);
    let data = generate_data(scenario, &d.n, rep)?;
    let fits = fit_cell(FitPlan::for_analysis(approaches.iter().copied()), &data, &d, rep)?;
    Ok([("existing", fits.existing), ("all", fits.all), ("independent", fits.independent), ("new", fits.new_exnex)]
        .into_iter()
        .filter_map(|(name, f)| f.map(|f| (name.to_string(), f)))
        .collect())
}
