//! Strategies for analysing a trial that adds baskets, and the decisions they
//! produce.
//!
//! | approach | existing baskets        | new baskets                  |
//! |----------|-------------------------|------------------------------|
//! | `ind_a`  | EXNEX on existing       | independent model per basket |
//! | `ind_b`  | EXNEX on existing       | second EXNEX on new baskets  |
//! | `unpl`   | EXNEX on all baskets    | EXNEX on all baskets         |
//! | `pl1`    | EXNEX on all baskets    | EXNEX on all baskets         |
//! | `pl2`    | EXNEX on existing       | EXNEX on all baskets         |
//!
//! UNPL differs from PL1 only in calibration: its existing-basket cutoffs come
//! from the existing-only model and new baskets borrow the cutoff of the
//! existing basket closest in sample size.
//!
//! All fits for one dataset draw from fixed sub-streams of the replicate
//! stream (one per model scope), so approaches that share a model share the
//! fit exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationMethod;
use crate::error::{Error, Result};
use crate::inference::{fit, ModelKind, PosteriorResult};
use crate::model::{BasketData, TrialDesign};
use crate::stream::{keys, StreamSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproachKind {
    IndA,
    IndB,
    Unpl,
    Pl1,
    Pl2,
}

impl ApproachKind {
    pub const ALL: [ApproachKind; 5] = [
        ApproachKind::IndA,
        ApproachKind::IndB,
        ApproachKind::Unpl,
        ApproachKind::Pl1,
        ApproachKind::Pl2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ApproachKind::IndA => "ind_a",
            ApproachKind::IndB => "ind_b",
            ApproachKind::Unpl => "unpl",
            ApproachKind::Pl1 => "pl1",
            ApproachKind::Pl2 => "pl2",
        }
    }

    /// Model fits needed to analyse data.
    pub(crate) fn analysis_fits(self) -> FitPlan {
        match self {
            ApproachKind::IndA => FitPlan { existing: true, independent: true, ..FitPlan::NONE },
            ApproachKind::IndB => FitPlan { existing: true, new_exnex: true, ..FitPlan::NONE },
            ApproachKind::Unpl | ApproachKind::Pl1 => FitPlan { all: true, ..FitPlan::NONE },
            ApproachKind::Pl2 => FitPlan { existing: true, all: true, ..FitPlan::NONE },
        }
    }

    /// Model fits needed to calibrate cutoffs.
    pub(crate) fn calibration_fits(self) -> FitPlan {
        match self {
            ApproachKind::Unpl => FitPlan { existing: true, ..FitPlan::NONE },
            other => other.analysis_fits(),
        }
    }

    /// Whether new and existing baskets take their posterior probabilities
    /// from different models during calibration. Equal-size groups never
    /// span two models.
    pub(crate) fn splits_existing_and_new(self) -> bool {
        !matches!(self, ApproachKind::Pl1)
    }
}

impl fmt::Display for ApproachKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApproachKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ApproachKind::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown approach '{s}' (expected one of ind_a, ind_b, unpl, pl1, pl2)"
                ))
            })
    }
}

/// Calibrated cutoffs for one approach, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSet {
    pub approach: ApproachKind,
    /// Cutoff per basket, existing baskets first.
    pub delta: Vec<f64>,
    pub method: CalibrationMethod,
    pub scenario_labels: Vec<String>,
    /// Stream seed the calibration ran under.
    pub seed: u64,
    pub replicates: usize,
}

impl CutoffSet {
    /// Cutoffs set by hand rather than by calibration.
    pub fn fixed(approach: ApproachKind, delta: Vec<f64>) -> Self {
        CutoffSet {
            approach,
            delta,
            method: CalibrationMethod::Fixed,
            scenario_labels: Vec::new(),
            seed: 0,
            replicates: 0,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.delta.len() != k {
            return Err(Error::config(format!(
                "{} cutoffs have {} baskets but the design has {k}",
                self.approach,
                self.delta.len()
            )));
        }
        if let Some(d) = self.delta.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::config(format!("{} cutoff {d} outside [0, 1]", self.approach)));
        }
        Ok(())
    }

    /// Arm label used in study outputs, e.g. `pl1/rcap`.
    pub fn arm(&self) -> String {
        format!("{}/{}", self.approach, self.method)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    /// True where the treatment is declared effective.
    pub reject: Vec<bool>,
    /// Posterior probabilities the decisions were based on.
    pub prob: Vec<f64>,
}

impl DecisionVector {
    pub fn from_probs(prob: Vec<f64>, delta: &[f64]) -> Self {
        let reject = prob.iter().zip(delta).map(|(p, d)| p > d).collect();
        DecisionVector { reject, prob }
    }
}

/// Cutoff for a new basket under UNPL: the cutoff of the existing basket whose
/// sample size is closest to `n_new`, lowest index on ties.
pub fn unpl_cutoff_assignment(existing_deltas: &[f64], n_existing: &[u32], n_new: u32) -> Result<f64> {
    if existing_deltas.is_empty() || existing_deltas.len() != n_existing.len() {
        return Err(Error::config(
            "unpl cutoff assignment needs one cutoff per existing basket and at least one basket",
        ));
    }
    let best = n_existing
        .iter()
        .enumerate()
        .min_by_key(|&(i, &n)| ((n as i64 - n_new as i64).abs(), i))
        .map(|(i, _)| i)
        .unwrap();
    Ok(existing_deltas[best])
}

/// Which model fits a dataset needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct FitPlan {
    pub existing: bool,
    pub all: bool,
    pub independent: bool,
    pub new_exnex: bool,
}

impl FitPlan {
    pub const NONE: FitPlan =
        FitPlan { existing: false, all: false, independent: false, new_exnex: false };

    pub fn union(self, o: FitPlan) -> FitPlan {
        FitPlan {
            existing: self.existing || o.existing,
            all: self.all || o.all,
            independent: self.independent || o.independent,
            new_exnex: self.new_exnex || o.new_exnex,
        }
    }

    pub fn for_analysis(approaches: impl IntoIterator<Item = ApproachKind>) -> FitPlan {
        approaches.into_iter().fold(FitPlan::NONE, |p, a| p.union(a.analysis_fits()))
    }

    pub fn for_calibration(approaches: impl IntoIterator<Item = ApproachKind>) -> FitPlan {
        approaches.into_iter().fold(FitPlan::NONE, |p, a| p.union(a.calibration_fits()))
    }
}

/// Fits for one dataset, each from its own sub-stream of the replicate stream.
#[derive(Debug, Clone, Default)]
pub(crate) struct CellFits {
    pub existing: Option<PosteriorResult>,
    pub all: Option<PosteriorResult>,
    pub independent: Option<PosteriorResult>,
    pub new_exnex: Option<PosteriorResult>,
}

pub(crate) fn fit_cell(
    plan: FitPlan,
    data: &BasketData,
    design: &TrialDesign,
    replicate: StreamSeed,
) -> Result<CellFits> {
    let fits = replicate.child(keys::FIT);
    let existing: Vec<usize> = design.existing().collect();
    let new: Vec<usize> = design.new_baskets().collect();
    let all: Vec<usize> = (0..design.k()).collect();
    let run = |model: ModelKind, key: u64| {
        fit(&model, data, &design.priors, design.q0, &design.mcmc, fits.child(key))
    };
    let mut out = CellFits::default();
    if plan.existing {
        out.existing = Some(run(ModelKind::Exnex(existing), keys::EXISTING_FIT)?);
    }
    if plan.all {
        out.all = Some(run(ModelKind::Exnex(all), keys::ALL_FIT)?);
    }
    if !new.is_empty() {
        if plan.independent {
            out.independent = Some(run(ModelKind::Independent(new.clone()), keys::INDEPENDENT_FIT)?);
        }
        if plan.new_exnex {
            out.new_exnex = Some(run(ModelKind::Exnex(new), keys::NEW_FIT)?);
        }
    }
    Ok(out)
}

/// Per-basket posterior probability and posterior mean of `p` as seen by one
/// approach.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ApproachView {
    pub prob: Vec<f64>,
    pub mean: Vec<f64>,
}

fn take(fit: &Option<PosteriorResult>, k: usize) -> Result<(f64, f64)> {
    let f = fit.as_ref().ok_or_else(|| Error::config("required model fit is missing"))?;
    let i = f
        .position(k)
        .ok_or_else(|| Error::config(format!("basket {} missing from fit", k + 1)))?;
    Ok((f.prob_exceed_null[i], f.post_mean_p[i]))
}

impl CellFits {
    /// Analysis-time view for `approach`.
    pub fn analysis_view(&self, approach: ApproachKind, design: &TrialDesign) -> Result<ApproachView> {
        let k = design.k();
        let mut prob = Vec::with_capacity(k);
        let mut mean = Vec::with_capacity(k);
        for b in 0..k {
            let new = design.is_new(b);
            let source = match (approach, new) {
                (ApproachKind::Unpl | ApproachKind::Pl1, _) => &self.all,
                (_, false) => &self.existing,
                (ApproachKind::IndA, true) => &self.independent,
                (ApproachKind::IndB, true) => &self.new_exnex,
                (ApproachKind::Pl2, true) => &self.all,
            };
            let (p, m) = take(source, b)?;
            prob.push(p);
            mean.push(m);
        }
        Ok(ApproachView { prob, mean })
    }

    /// Calibration-time posterior probabilities for `approach`. UNPL only
    /// calibrates existing baskets; its new-basket entries are `None`.
    pub fn calibration_probs(
        &self,
        approach: ApproachKind,
        design: &TrialDesign,
    ) -> Result<Vec<Option<f64>>> {
        if approach == ApproachKind::Unpl {
            return (0..design.k())
                .map(|b| {
                    if design.is_new(b) {
                        Ok(None)
                    } else {
                        take(&self.existing, b).map(|(p, _)| Some(p))
                    }
                })
                .collect();
        }
        Ok(self.analysis_view(approach, design)?.prob.into_iter().map(Some).collect())
    }
}

/// Analyse one dataset under `approach`: fit the models it needs from the
/// replicate stream and compare each basket's `P(p_k > q0 | data)` with its
/// cutoff (strictly greater rejects).
pub fn analyze(
    approach: ApproachKind,
    data: &BasketData,
    design: &TrialDesign,
    cutoffs: &CutoffSet,
    stream: StreamSeed,
) -> Result<DecisionVector> {
    design.validate_for(approach)?;
    cutoffs.validate(design.k())?;
    if data.len() != design.k() {
        return Err(Error::config(format!(
            "data has {} baskets, design has {}",
            data.len(),
            design.k()
        )));
    }
    let fits = fit_cell(approach.analysis_fits(), data, design, stream)?;
    let view = fits.analysis_view(approach, design)?;
    Ok(DecisionVector::from_probs(view.prob, &cutoffs.delta))
}

impl TrialDesign {
    pub(crate) fn validate_for(&self, approach: ApproachKind) -> Result<()> {
        self.validate()?;
        if approach == ApproachKind::IndB && self.k_new < 2 {
            return Err(Error::config("ind_b requires at least two new baskets"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::McmcSettings;

    fn fast_design() -> TrialDesign {
        let mut d = TrialDesign::paper_4plus1();
        d.mcmc = McmcSettings { burn_in: 500, samples: 2_000, ..Default::default() };
        d
    }

    #[test]
    fn strict_comparison() {
        let d = DecisionVector::from_probs(vec![0.95, 0.9030, 0.5], &[0.9030, 0.9030, 0.9]);
        assert_eq!(d.reject, vec![true, false, false]);
    }

    #[test]
    fn unpl_nearest_size() {
        let deltas = [0.8599; 4];
        assert_eq!(unpl_cutoff_assignment(&deltas, &[24; 4], 14).unwrap(), 0.8599);
        let deltas = [0.1, 0.2, 0.3];
        assert_eq!(unpl_cutoff_assignment(&deltas, &[10, 20, 30], 20).unwrap(), 0.2);
        assert_eq!(unpl_cutoff_assignment(&deltas[..2], &[10, 30], 20).unwrap(), 0.1);
        assert!(unpl_cutoff_assignment(&[], &[], 20).is_err());
    }

    #[test]
    fn approach_names_round_trip() {
        for a in ApproachKind::ALL {
            assert_eq!(a.as_str().parse::<ApproachKind>().unwrap(), a);
        }
        assert!("pl3".parse::<ApproachKind>().is_err());
    }

    #[test]
    fn ind_and_pl2_agree_on_existing_baskets() {
        let design = fast_design();
        let data = BasketData::new(vec![9, 5, 4, 8, 2], design.n.clone()).unwrap();
        let cut = CutoffSet::fixed(ApproachKind::IndA, vec![0.9; 5]);
        let s = StreamSeed::new(17);
        let ind = analyze(ApproachKind::IndA, &data, &design, &cut, s).unwrap();
        let pl2 = analyze(ApproachKind::Pl2, &data, &design, &cut, s).unwrap();
        let pl1 = analyze(ApproachKind::Pl1, &data, &design, &cut, s).unwrap();
        assert_eq!(ind.prob[..4], pl2.prob[..4]);
        assert_eq!(ind.reject[..4], pl2.reject[..4]);
        assert_eq!(pl1.prob[4], pl2.prob[4]);
    }

    #[test]
    fn analyze_is_repeatable() {
        let design = fast_design();
        let data = BasketData::new(vec![9, 5, 4, 8, 2], design.n.clone()).unwrap();
        let cut = CutoffSet::fixed(ApproachKind::Unpl, vec![0.9; 5]);
        let s = StreamSeed::new(3);
        let a = analyze(ApproachKind::Unpl, &data, &design, &cut, s).unwrap();
        let b = analyze(ApproachKind::Unpl, &data, &design, &cut, s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_cutoffs_rejected() {
        let design = fast_design();
        let data = BasketData::new(vec![1; 5], design.n.clone()).unwrap();
        let cut = CutoffSet::fixed(ApproachKind::Pl1, vec![0.9; 4]);
        assert!(analyze(ApproachKind::Pl1, &data, &design, &cut, StreamSeed::new(1)).is_err());
    }

    #[test]
    fn ind_b_needs_two_new_baskets() {
        let design = fast_design();
        let data = BasketData::new(vec![1; 5], design.n.clone()).unwrap();
        let cut = CutoffSet::fixed(ApproachKind::IndB, vec![0.9; 5]);
        assert!(analyze(ApproachKind::IndB, &data, &design, &cut, StreamSeed::new(1)).is_err());
    }
}
