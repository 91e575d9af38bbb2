//! Trial design, priors, truth scenarios and data generation.
//!
//! Baskets are indexed existing-first: positions `0..k0` are the baskets open
//! from the start of the trial and `k0..k0 + k_new` are the ones added later.
//! Public APIs that talk about "basket k" use 1-based numbering to match the
//! output files; internal vectors are 0-based.
//!
//! Every normal distribution is parameterised by mean and *variance*.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::approaches::ApproachKind;
use crate::error::{Error, Result};
use crate::stream::{content_key, keys, StreamSeed};

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// NEX prior mean and variance on the logit scale for a plausible response
/// rate guess `rho`: `m = logit(rho)`, `nu = 1/rho + 1/(1 - rho)`.
pub fn nex_params(rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("nex guess must lie in (0, 1), got {rho}")));
    }
    Ok((logit(rho), 1.0 / rho + 1.0 / (1.0 - rho)))
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in (0, 1), got {p}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    /// Independent-model prior mean on logit(p).
    pub ind_mean: f64,
    /// Independent-model prior variance on logit(p).
    pub ind_var: f64,
    /// Prior mean of the exchangeable-component mean `mu`.
    pub mu_mean: f64,
    /// Prior variance of `mu`.
    pub mu_var: f64,
    /// Scale of the half-normal prior on the between-basket SD `sigma`.
    pub sigma_prior: f64,
    /// Plausible response-rate guess per basket, defines the NEX priors.
    pub nex_guess: Vec<f64>,
    /// Prior probability that each basket is exchangeable.
    pub pi: Vec<f64>,
}

impl PriorSpec {
    /// Priors used in the reference simulations: N(logit q0, 100) for the
    /// independent model and for `mu`, half-normal(0, 1) on `sigma`, NEX guess
    /// 0.3 and exchangeability weight 0.5 for every basket.
    pub fn reference(q0: f64, k: usize) -> Self {
        PriorSpec {
            ind_mean: logit(q0),
            ind_var: 100.0,
            mu_mean: logit(q0),
            mu_var: 100.0,
            sigma_prior: 1.0,
            nex_guess: vec![0.3; k],
            pi: vec![0.5; k],
        }
    }

    /// NEX mean and variance for 0-based basket `k`.
    pub fn nex(&self, k: usize) -> Result<(f64, f64)> {
        let rho = *self
            .nex_guess
            .get(k)
            .ok_or_else(|| Error::config(format!("no nex_guess for basket {}", k + 1)))?;
        nex_params(rho)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (name, v) in [
            ("ind_var", self.ind_var),
            ("mu_var", self.mu_var),
            ("sigma_prior", self.sigma_prior),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.ind_mean.is_finite() || !self.mu_mean.is_finite() {
            return Err(Error::config("prior means must be finite"));
        }
        if self.nex_guess.len() != k || self.pi.len() != k {
            return Err(Error::config(format!(
                "nex_guess and pi need one entry per basket ({k}), got {} and {}",
                self.nex_guess.len(),
                self.pi.len()
            )));
        }
        for &rho in &self.nex_guess {
            check_prob("nex_guess", rho)?;
        }
        for &pi in &self.pi {
            if !(0.0..=1.0).contains(&pi) {
                return Err(Error::config(format!("pi must lie in [0, 1], got {pi}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    /// Seed for standalone fits; studies derive their own sub-streams.
    pub seed: u64,
    pub proposal_sd_init: f64,
    /// Keep the raw draws in the result (diagnostic dumps only).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub keep_chain: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            burn_in: 5_000,
            samples: 10_000,
            thin: 1,
            seed: 1,
            proposal_sd_init: 1.0,
            keep_chain: false,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("mcmc.samples must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::config("mcmc.thin must be at least 1"));
        }
        if !(self.proposal_sd_init > 0.0 && self.proposal_sd_init.is_finite()) {
            return Err(Error::config("mcmc.proposal_sd_init must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDesign {
    /// Number of baskets open from the start.
    pub k0: usize,
    /// Number of baskets added part-way through.
    pub k_new: usize,
    /// Final sample size per basket, existing baskets first.
    pub n: Vec<u32>,
    pub q0: f64,
    pub q1: f64,
    /// Marginal response rate; descriptive only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q2: Option<f64>,
    pub alpha: f64,
    pub priors: PriorSpec,
    pub approach: ApproachKind,
    pub mcmc: McmcSettings,
}

impl TrialDesign {
    /// Four existing baskets of 24 patients plus one new basket of 14.
    pub fn paper_4plus1() -> Self {
        TrialDesign {
            k0: 4,
            k_new: 1,
            n: vec![24, 24, 24, 24, 14],
            q0: 0.2,
            q1: 0.4,
            q2: Some(0.3),
            alpha: 0.1,
            priors: PriorSpec::reference(0.2, 5),
            approach: ApproachKind::Pl1,
            mcmc: McmcSettings::default(),
        }
    }

    /// Two existing baskets of 24 patients plus two new baskets of 14.
    pub fn paper_2plus2() -> Self {
        TrialDesign {
            k0: 2,
            k_new: 2,
            n: vec![24, 24, 14, 14],
            q0: 0.2,
            q1: 0.4,
            q2: Some(0.3),
            alpha: 0.1,
            priors: PriorSpec::reference(0.2, 4),
            approach: ApproachKind::IndA,
            mcmc: McmcSettings::default(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper_4plus1" => Some(Self::paper_4plus1()),
            "paper_2plus2" => Some(Self::paper_2plus2()),
            _ => None,
        }
    }

    pub fn k(&self) -> usize {
        self.k0 + self.k_new
    }

    pub fn existing(&self) -> std::ops::Range<usize> {
        0..self.k0
    }

    pub fn new_baskets(&self) -> std::ops::Range<usize> {
        self.k0..self.k()
    }

    pub fn is_new(&self, k: usize) -> bool {
        k >= self.k0
    }

    /// Copy of the design with every new basket resized to `n_new`.
    pub fn with_new_size(&self, n_new: u32) -> Self {
        let mut d = self.clone();
        for k in d.new_baskets() {
            d.n[k] = n_new;
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.k0 < 1 {
            return Err(Error::config("k0 must be at least 1"));
        }
        if self.n.len() != self.k() {
            return Err(Error::config(format!(
                "n has {} entries but k0 + k_new = {}",
                self.n.len(),
                self.k()
            )));
        }
        check_prob("q0", self.q0)?;
        check_prob("q1", self.q1)?;
        if self.q0 >= self.q1 {
            return Err(Error::config(format!(
                "q0 must be below q1 (q0 = {}, q1 = {})",
                self.q0, self.q1
            )));
        }
        if let Some(q2) = self.q2 {
            check_prob("q2", q2)?;
        }
        check_prob("alpha", self.alpha)?;
        if self.approach == ApproachKind::IndB && self.k_new < 2 {
            return Err(Error::config("ind_b requires at least two new baskets"));
        }
        self.priors.validate(self.k())?;
        self.mcmc.validate()
    }

    fn is_reference(&self, k0: usize, k_new: usize) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        self.k0 == k0 && self.k_new == k_new && close(self.q0, 0.2) && close(self.q1, 0.4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// True response rate per basket.
    pub p: Vec<f64>,
    /// Integer importance weight used by robust calibration.
    pub weight: u32,
    pub label: String,
}

impl Scenario {
    pub fn new(label: impl Into<String>, p: Vec<f64>) -> Self {
        Scenario { p, weight: 1, label: label.into() }
    }

    pub fn with_weight(mut self, weight: u32) -> Self {
        self.weight = weight;
        self
    }

    /// Stream key; depends on the rates only, not on weight or label.
    pub fn key(&self) -> u64 {
        content_key(&self.p)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.p.len() != k {
            return Err(Error::config(format!(
                "scenario '{}' has {} rates but the design has {k} baskets",
                self.label,
                self.p.len()
            )));
        }
        for &p in &self.p {
            check_prob(&format!("scenario '{}' rate", self.label), p)?;
        }
        if self.weight == 0 {
            return Err(Error::config(format!("scenario '{}' has weight 0", self.label)));
        }
        Ok(())
    }

    /// True when basket `k` (0-based) is ineffective, `p <= q0`.
    pub fn is_null(&self, k: usize, q0: f64) -> bool {
        self.p[k] <= q0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasketData {
    pub y: Vec<u32>,
    pub n: Vec<u32>,
}

impl BasketData {
    pub fn new(y: Vec<u32>, n: Vec<u32>) -> Result<Self> {
        let d = BasketData { y, n };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.n.len() {
            return Err(Error::domain(format!(
                "y has {} entries, n has {}",
                self.y.len(),
                self.n.len()
            )));
        }
        if let Some(k) = (0..self.y.len()).find(|&k| self.y[k] > self.n[k]) {
            return Err(Error::domain(format!(
                "basket {}: {} responses out of {} patients",
                k + 1,
                self.y[k],
                self.n[k]
            )));
        }
        Ok(())
    }

    /// Sub-dataset for the given 0-based baskets.
    pub fn select(&self, idx: &[usize]) -> BasketData {
        BasketData {
            y: idx.iter().map(|&k| self.y[k]).collect(),
            n: idx.iter().map(|&k| self.n[k]).collect(),
        }
    }
}

/// Draw `y_k ~ Binomial(n_k, p_k)` independently per basket. Basket `k` uses
/// the sub-stream `stream / DATA / (k + 1)`, so its draw does not depend on
/// how many other baskets the scenario has.
pub fn generate_data(scenario: &Scenario, n: &[u32], stream: StreamSeed) -> Result<BasketData> {
    if scenario.p.len() != n.len() {
        return Err(Error::domain(format!(
            "scenario has {} rates but {} sample sizes were given",
            scenario.p.len(),
            n.len()
        )));
    }
    let data_stream = stream.child(keys::DATA);
    let mut y = Vec::with_capacity(n.len());
    for (k, (&p, &nk)) in scenario.p.iter().zip(n).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("response rate must lie in (0, 1), got {p}")));
        }
        if nk == 0 {
            y.push(0);
            continue;
        }
        let mut rng = data_stream.child(k as u64 + 1).rng();
        let dist = Binomial::new(nk as u64, p).map_err(|e| Error::domain(e.to_string()))?;
        y.push(dist.sample(&mut rng) as u32);
    }
    Ok(BasketData { y, n: n.to_vec() })
}

const TABLE_4PLUS1: [[f64; 5]; 16] = [
    [0.2, 0.2, 0.2, 0.2, 0.2],
    [0.4, 0.2, 0.2, 0.2, 0.2],
    [0.4, 0.4, 0.2, 0.2, 0.2],
    [0.4, 0.4, 0.4, 0.2, 0.2],
    [0.4, 0.4, 0.4, 0.4, 0.2],
    [0.4, 0.4, 0.4, 0.4, 0.4],
    [0.2, 0.2, 0.2, 0.2, 0.4],
    [0.4, 0.2, 0.2, 0.2, 0.4],
    [0.4, 0.4, 0.2, 0.2, 0.4],
    [0.4, 0.4, 0.4, 0.2, 0.4],
    [0.3, 0.2, 0.2, 0.2, 0.2],
    [0.3, 0.3, 0.2, 0.2, 0.2],
    [0.3, 0.2, 0.2, 0.2, 0.3],
    [0.3, 0.3, 0.2, 0.2, 0.3],
    [0.4, 0.3, 0.2, 0.2, 0.3],
    [0.4, 0.3, 0.3, 0.2, 0.3],
];

const TABLE_2PLUS2: [[f64; 4]; 9] = [
    [0.2, 0.2, 0.2, 0.2],
    [0.4, 0.2, 0.2, 0.2],
    [0.4, 0.4, 0.2, 0.2],
    [0.4, 0.4, 0.4, 0.2],
    [0.2, 0.2, 0.4, 0.2],
    [0.4, 0.2, 0.4, 0.2],
    [0.2, 0.2, 0.4, 0.4],
    [0.4, 0.2, 0.4, 0.4],
    [0.4, 0.4, 0.4, 0.4],
];

/// Standard truth scenarios for a design, labelled "Sc 1", "Sc 2", ...
///
/// The 4+1 reference design (q0 = 0.2, q1 = 0.4, q2 = 0.3) gets its sixteen
/// fixed scenarios and the 2+2 reference design its nine. Any other design
/// gets every global and partial null over {q0, q1}: all 2^K rate vectors
/// except the all-effective one, ordered by the bit pattern with basket 1 as
/// the lowest bit.
pub fn standard_scenarios(design: &TrialDesign) -> Vec<Scenario> {
    let label = |i: usize| format!("Sc {}", i + 1);
    if design.is_reference(4, 1) && design.q2.is_some_and(|q2| (q2 - 0.3).abs() < 1e-12) {
        return TABLE_4PLUS1
            .iter()
            .enumerate()
            .map(|(i, p)| Scenario::new(label(i), p.to_vec()))
            .collect();
    }
    if design.is_reference(2, 2) {
        return TABLE_2PLUS2
            .iter()
            .enumerate()
            .map(|(i, p)| Scenario::new(label(i), p.to_vec()))
            .collect();
    }
    let k = design.k();
    let all_effective = (1u64 << k) - 1;
    (0..all_effective)
        .map(|mask| {
            let p = (0..k)
                .map(|b| if mask >> b & 1 == 1 { design.q1 } else { design.q0 })
                .collect();
            Scenario::new(label(mask as usize), p)
        })
        .collect()
}

/// All-q0 scenario for the design.
pub fn global_null(design: &TrialDesign) -> Scenario {
    Scenario::new("global null", vec![design.q0; design.k()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nex_params_reference_values() {
        let (m, nu) = nex_params(0.3).unwrap();
        assert!((m - (-0.8473)).abs() < 5e-5);
        assert!((nu - 4.7619).abs() < 5e-5);
        let (m, nu) = nex_params(0.5).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(nu, 4.0);
        let (m, nu) = nex_params(0.2).unwrap();
        assert!((m - (-1.386294)).abs() < 1e-6);
        assert!((nu - 6.25).abs() < 1e-12);
    }

    #[test]
    fn nex_params_rejects_boundary() {
        for rho in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(nex_params(rho), Err(Error::Domain(_))), "{rho}");
        }
    }

    #[test]
    fn empty_basket_has_no_responses() {
        let sc = Scenario::new("x", vec![0.2, 0.4]);
        let d = generate_data(&sc, &[0, 10], StreamSeed::new(3)).unwrap();
        assert_eq!(d.y[0], 0);
        assert!(d.y[1] <= 10);
    }

    #[test]
    fn near_certain_response_fills_basket() {
        let sc = Scenario::new("x", vec![0.999]);
        let full = (0..2000u64)
            .filter(|&r| {
                generate_data(&sc, &[24], StreamSeed::new(11).child(r)).unwrap().y[0] == 24
            })
            .count();
        // 0.999^24 = 0.9763; allow 4 binomial SDs below.
        assert!(full as f64 / 2000.0 >= 0.9763 - 4.0 * (0.9763 * 0.0237 / 2000f64).sqrt());
    }

    #[test]
    fn binomial_mean_matches_rate() {
        let sc = Scenario::new("x", vec![0.2, 0.2, 0.2, 0.2, 0.2]);
        let n = [24, 24, 24, 24, 14];
        let total: u64 = (0..10_000u64)
            .map(|r| generate_data(&sc, &n, StreamSeed::new(5).child(r)).unwrap().y[4] as u64)
            .sum();
        let mean = total as f64 / (10_000.0 * 14.0);
        assert!((mean - 0.2).abs() < 0.003, "{mean}");
    }

    #[test]
    fn data_for_a_basket_ignores_other_baskets() {
        let s = StreamSeed::new(99);
        let a = generate_data(&Scenario::new("a", vec![0.2, 0.2, 0.2, 0.2]), &[24; 4], s).unwrap();
        let b = generate_data(
            &Scenario::new("b", vec![0.2, 0.2, 0.2, 0.2, 0.4]),
            &[24, 24, 24, 24, 7],
            s,
        )
        .unwrap();
        assert_eq!(a.y[..], b.y[..4]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let sc = Scenario::new("x", vec![0.2, 0.2]);
        assert!(generate_data(&sc, &[10], StreamSeed::new(1)).is_err());
        let bad = Scenario::new("x", vec![1.0]);
        assert!(generate_data(&bad, &[10], StreamSeed::new(1)).is_err());
    }

    #[test]
    fn reference_scenarios() {
        let sc = standard_scenarios(&TrialDesign::paper_4plus1());
        assert_eq!(sc.len(), 16);
        assert_eq!(sc[0].p, vec![0.2; 5]);
        assert_eq!(sc[4].p, vec![0.4, 0.4, 0.4, 0.4, 0.2]);
        assert_eq!(sc[15].p, vec![0.4, 0.3, 0.3, 0.2, 0.3]);
        assert_eq!(sc[15].label, "Sc 16");
        for s in &sc[..5] {
            assert!((0..5).any(|k| s.is_null(k, 0.2)));
        }
        let two = standard_scenarios(&TrialDesign::paper_2plus2());
        assert_eq!(two.len(), 9);
        assert_eq!(two[8].p, vec![0.4; 4]);
    }

    #[test]
    fn generic_scenarios_cover_nulls() {
        let mut d = TrialDesign::paper_2plus2();
        d.q0 = 0.1;
        d.q1 = 0.3;
        let sc = standard_scenarios(&d);
        assert_eq!(sc.len(), 15);
        assert_eq!(sc[0].p, vec![0.1; 4]);
        assert_eq!(sc[1].p, vec![0.3, 0.1, 0.1, 0.1]);
        assert!(sc.iter().all(|s| s.p.iter().any(|&p| p == 0.1)));
    }

    #[test]
    fn design_validation() {
        let mut d = TrialDesign::paper_4plus1();
        assert!(d.validate().is_ok());
        d.q1 = 0.1;
        assert!(d.validate().is_err());
        let mut d = TrialDesign::paper_4plus1();
        d.approach = ApproachKind::IndB;
        assert!(d.validate().is_err());
        let mut d = TrialDesign::paper_4plus1();
        d.priors.pi.pop();
        assert!(d.validate().is_err());
    }
}
