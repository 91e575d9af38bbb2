//! Posterior fits for the independent, BHM and EXNEX models.

mod quadrature;
mod sampler;

use serde::Serialize;

pub use quadrature::oracle_independent;

use crate::error::{Error, Result};
use crate::model::{logit, BasketData, McmcSettings, PriorSpec};
use crate::stream::StreamSeed;
use sampler::{BasketInput, SamplerInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    Independent,
    Bhm,
    Exnex,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Independent => "independent",
            Family::Bhm => "bhm",
            Family::Exnex => "exnex",
        }
    }
}

/// Model family plus the 0-based baskets included in the fit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Independent(Vec<usize>),
    Bhm(Vec<usize>),
    Exnex(Vec<usize>),
}

impl ModelKind {
    pub fn family(&self) -> Family {
        match self {
            ModelKind::Independent(_) => Family::Independent,
            ModelKind::Bhm(_) => Family::Bhm,
            ModelKind::Exnex(_) => Family::Exnex,
        }
    }

    pub fn scope(&self) -> &[usize] {
        match self {
            ModelKind::Independent(s) | ModelKind::Bhm(s) | ModelKind::Exnex(s) => s,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Sampling-phase acceptance rate of each basket's log-odds update.
    pub accept_theta: Vec<f64>,
    pub accept_sigma: Option<f64>,
    /// Batch-means effective sample size per basket log-odds.
    pub ess_theta: Vec<f64>,
    pub ess_mu: Option<f64>,
    pub ess_log_sigma: Option<f64>,
    pub warnings: Vec<String>,
}

/// Raw kept draws, recorded only when `McmcSettings::keep_chain` is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChainDump {
    pub theta: Vec<Vec<f64>>,
    pub delta: Vec<Vec<bool>>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorResult {
    pub family: Family,
    /// 0-based trial index of each fitted basket; the per-basket vectors
    /// below follow this order.
    pub baskets: Vec<usize>,
    /// Posterior probability that the response rate exceeds q0.
    pub prob_exceed_null: Vec<f64>,
    pub post_mean_p: Vec<f64>,
    pub post_sd_p: Vec<f64>,
    /// Posterior mean of the exchangeability indicator (EXNEX only).
    pub post_prob_ex: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainDump>,
}

impl PosteriorResult {
    /// Position of trial basket `k` within this result.
    pub fn position(&self, k: usize) -> Option<usize> {
        self.baskets.iter().position(|&b| b == k)
    }

    pub fn prob(&self, k: usize) -> Option<f64> {
        self.position(k).map(|i| self.prob_exceed_null[i])
    }

    pub fn mean(&self, k: usize) -> Option<f64> {
        self.position(k).map(|i| self.post_mean_p[i])
    }
}

/// Fit `model` to the baskets in its scope. `data` and `priors` cover the
/// whole trial; basket `k` draws from sub-stream `k + 1` of `stream`.
pub fn fit(
    model: &ModelKind,
    data: &BasketData,
    priors: &PriorSpec,
    q0: f64,
    mcmc: &McmcSettings,
    stream: StreamSeed,
) -> Result<PosteriorResult> {
    let labels: Vec<u64> = model.scope().iter().map(|&k| k as u64 + 1).collect();
    fit_with_labels(model, data, priors, q0, mcmc, stream, &labels)
}

/// As [`fit`] but with explicit stream labels for the baskets in scope.
pub fn fit_with_labels(
    model: &ModelKind,
    data: &BasketData,
    priors: &PriorSpec,
    q0: f64,
    mcmc: &McmcSettings,
    stream: StreamSeed,
    labels: &[u64],
) -> Result<PosteriorResult> {
    data.validate()?;
    mcmc.validate()?;
    let scope = model.scope();
    let family = model.family();
    if scope.is_empty() {
        return Err(Error::domain("model scope is empty"));
    }
    if labels.len() != scope.len() {
        return Err(Error::domain("one stream label per basket in scope is required"));
    }
    if let Some(&k) = scope.iter().find(|&&k| k >= data.len()) {
        return Err(Error::domain(format!("basket {} is outside the data", k + 1)));
    }
    {
        let mut seen = scope.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != scope.len() {
            return Err(Error::domain("model scope lists a basket twice"));
        }
    }
    if family == Family::Bhm && scope.len() < 2 {
        return Err(Error::domain("a hierarchical fit needs at least two baskets"));
    }
    if !(q0 > 0.0 && q0 < 1.0) {
        return Err(Error::domain(format!("q0 must lie in (0, 1), got {q0}")));
    }
    if !(priors.ind_var > 0.0 && priors.mu_var > 0.0 && priors.sigma_prior > 0.0) {
        return Err(Error::domain("prior variances must be positive"));
    }

    let mut baskets = Vec::with_capacity(scope.len());
    for (&k, &key) in scope.iter().zip(labels) {
        let (own_mean, own_var, pi) = match family {
            Family::Independent => (priors.ind_mean, priors.ind_var, 0.0),
            Family::Bhm => (priors.mu_mean, priors.mu_var, 1.0),
            Family::Exnex => {
                let (m, v) = priors.nex(k)?;
                let pi = *priors
                    .pi
                    .get(k)
                    .ok_or_else(|| Error::domain(format!("no pi for basket {}", k + 1)))?;
                if !(0.0..=1.0).contains(&pi) {
                    return Err(Error::domain(format!("pi must lie in [0, 1], got {pi}")));
                }
                (m, v, pi)
            }
        };
        baskets.push(BasketInput { y: data.y[k], n: data.n[k], key, pi, own_mean, own_var });
    }
    let input = SamplerInput {
        family,
        baskets,
        mu_mean: priors.mu_mean,
        mu_var: priors.mu_var,
        sigma_scale: priors.sigma_prior,
        threshold: logit(q0),
    };
    let out = sampler::run(&input, mcmc, stream)?;
    for w in &out.diagnostics.warnings {
        log::debug!("{w}");
    }
    Ok(PosteriorResult {
        family,
        baskets: scope.to_vec(),
        prob_exceed_null: out.prob_exceed,
        post_mean_p: out.mean_p,
        post_sd_p: out.sd_p,
        post_prob_ex: out.prob_ex,
        diagnostics: out.diagnostics,
        chain: out.chain,
    })
}

fn all(data: &BasketData) -> Vec<usize> {
    (0..data.len()).collect()
}

/// Independent model for every basket: `theta_k ~ N(ind_mean, ind_var)`.
pub fn fit_independent(
    data: &BasketData,
    priors: &PriorSpec,
    q0: f64,
    mcmc: &McmcSettings,
    stream: StreamSeed,
) -> Result<PosteriorResult> {
    fit(&ModelKind::Independent(all(data)), data, priors, q0, mcmc, stream)
}

/// Hierarchical model over every basket: `theta_k ~ N(mu, sigma^2)`,
/// `mu ~ N(mu_mean, mu_var)`, `sigma ~ HalfNormal(sigma_prior)`.
pub fn fit_bhm(
    data: &BasketData,
    priors: &PriorSpec,
    q0: f64,
    mcmc: &McmcSettings,
    stream: StreamSeed,
) -> Result<PosteriorResult> {
    fit(&ModelKind::Bhm(all(data)), data, priors, q0, mcmc, stream)
}

/// EXNEX mixture over the baskets in `scope`.
pub fn fit_exnex(
    data: &BasketData,
    priors: &PriorSpec,
    q0: f64,
    scope: &[usize],
    mcmc: &McmcSettings,
    stream: StreamSeed,
) -> Result<PosteriorResult> {
    fit(&ModelKind::Exnex(scope.to_vec()), data, priors, q0, mcmc, stream)
}
