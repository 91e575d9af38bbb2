//! Metropolis-within-Gibbs sampler shared by the independent, BHM and EXNEX
//! models.
//!
//! State per basket is the logit response rate `theta` and, for EXNEX, the
//! exchangeability indicator `delta`. The exchangeable component has a common
//! mean `mu` (conjugate normal update) and SD `sigma` (random walk on
//! `log sigma`, half-normal prior). A second `log sigma` move rescales the
//! exchangeable deviations `theta - mu` along with it, which keeps the chain
//! moving when the baskets are pulled tightly together, and a final move
//! shifts `mu` with the exchangeable baskets. Proposal SDs follow a Robbins-Monro
//! recursion towards 44% acceptance during burn-in and are frozen afterwards.
//!
//! Each basket draws from its own sub-stream keyed by a caller-supplied label,
//! and sums over baskets run in label order, so permuting the baskets together
//! with their labels permutes the output exactly.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{expit, logit, McmcSettings};
use crate::stream::{keys, StreamRng, StreamSeed};

use super::{ChainDump, Diagnostics, Family};

const TARGET_ACCEPT: f64 = 0.44;
const ADAPT_EXPONENT: f64 = 0.6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SIGMA_INIT: f64 = 0.5;
/// Cheap centred `log sigma` updates per sweep; they touch no likelihood terms.
const SIGMA_SUBSTEPS: usize = 4;
const SPREAD_SUBSTEPS: usize = 2;

/// Softplus `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// One basket as seen by the sampler.
#[derive(Debug, Clone)]
pub(crate) struct BasketInput {
    pub y: u32,
    pub n: u32,
    /// Stream label.
    pub key: u64,
    /// Exchangeability prior probability (EXNEX only).
    pub pi: f64,
    /// Mean and variance of the basket-specific prior (NEX component for
    /// EXNEX, the whole prior for the independent model).
    pub own_mean: f64,
    pub own_var: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SamplerInput {
    pub family: Family,
    pub baskets: Vec<BasketInput>,
    pub mu_mean: f64,
    pub mu_var: f64,
    pub sigma_scale: f64,
    /// Threshold on theta, i.e. logit(q0).
    pub threshold: f64,
}

pub(crate) struct SamplerOutput {
    pub prob_exceed: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub sd_p: Vec<f64>,
    pub prob_ex: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub chain: Option<ChainDump>,
}

/// Adaptive random-walk scale.
#[derive(Debug, Clone, Copy)]
struct Scale {
    log_sd: f64,
    sd: f64,
    steps: u32,
}

impl Scale {
    fn new(sd: f64) -> Self {
        Scale { log_sd: sd.ln(), sd, steps: 0 }
    }

    #[inline]
    fn sd(&self) -> f64 {
        self.sd
    }

    #[inline]
    fn adapt(&mut self, accepted: bool) {
        self.steps += 1;
        let gain = gain(self.steps);
        let hit = if accepted { 1.0 } else { 0.0 };
        self.log_sd = (self.log_sd + gain * (hit - TARGET_ACCEPT)).clamp(-12.0, 6.0);
        self.sd = self.log_sd.exp();
    }
}

const GAIN_TABLE_LEN: usize = 1 << 16;

#[inline]
fn gain(step: u32) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..GAIN_TABLE_LEN).map(|t| (t.max(1) as f64).powf(-ADAPT_EXPONENT)).collect()
    });
    table
        .get(step as usize)
        .copied()
        .unwrap_or_else(|| (step as f64).powf(-ADAPT_EXPONENT))
}

/// Metropolis acceptance test; `u` is always drawn so the stream position
/// does not depend on the outcome.
#[inline]
fn accept(rng: &mut StreamRng, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Running sums for the kept draws of one scalar, with batch means for ESS.
#[derive(Debug, Clone)]
struct Tally {
    sum: f64,
    sum_sq: f64,
    batch: Vec<f64>,
    batch_size: usize,
    count: usize,
}

impl Tally {
    fn new(batch_size: usize) -> Self {
        Tally { sum: 0.0, sum_sq: 0.0, batch: Vec::new(), batch_size, count: 0 }
    }

    #[inline]
    fn push(&mut self, x: f64) {
        if self.count % self.batch_size == 0 {
            self.batch.push(0.0);
        }
        *self.batch.last_mut().unwrap() += x;
        self.sum += x;
        self.sum_sq += x * x;
        self.count += 1;
    }

    /// Batch-means effective sample size, capped at the number of draws.
    fn ess(&self) -> f64 {
        let n = self.count as f64;
        let full = self.count / self.batch_size;
        if full < 2 {
            return n;
        }
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        if var <= 1e-300 {
            return n;
        }
        let b = self.batch_size as f64;
        let means: Vec<f64> = self.batch[..full].iter().map(|s| s / b).collect();
        let bm = means.iter().sum::<f64>() / full as f64;
        let bvar = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (full as f64 - 1.0);
        let tau = b * bvar / var;
        if tau <= 0.0 {
            n
        } else {
            (n / tau).min(n)
        }
    }
}

struct BasketState {
    theta: f64,
    /// Constant part of the NEX log weight minus `ln pi`, and `1 / (2 v)`.
    nex_const: f64,
    nex_half_prec: f64,
    /// Cached `y * theta - n * softplus(theta)`.
    loglik: f64,
    delta: bool,
    /// Index 0: NEX/own prior, 1: EX component.
    scales: [Scale; 2],
    rng: StreamRng,
    accepted: usize,
    proposed: usize,
}

pub(crate) fn run(
    input: &SamplerInput,
    mcmc: &McmcSettings,
    stream: StreamSeed,
) -> Result<SamplerOutput> {
    let k = input.baskets.len();
    let has_hyper = input.family != Family::Independent;
    let sample_delta = input.family == Family::Exnex;
    let name = input.family.name();

    // Canonical order for sums over baskets.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| input.baskets[i].key);

    let mut baskets: Vec<BasketState> = input
        .baskets
        .iter()
        .map(|b| {
            let theta = logit((b.y as f64 + 0.5) / (b.n as f64 + 1.0));
            let nex_const = if b.pi > 0.0 && b.pi < 1.0 {
                (1.0 - b.pi).ln() - b.pi.ln() - 0.5 * (LN_2PI + b.own_var.ln())
            } else {
                0.0
            };
            BasketState {
                theta,
                nex_const,
                nex_half_prec: 0.5 / b.own_var,
                loglik: b.y as f64 * theta - b.n as f64 * softplus(theta),
                delta: input.family != Family::Independent,
                scales: [Scale::new(mcmc.proposal_sd_init); 2],
                rng: stream.child(b.key).rng(),
                accepted: 0,
                proposed: 0,
            }
        })
        .collect();
    let mut hyper_rng = stream.child(keys::HYPER).rng();
    let mut mu = input.mu_mean;
    let mut log_sigma = SIGMA_INIT.ln();
    let mut sigma_scale = Scale::new(mcmc.proposal_sd_init);
    let mut spread_scale = Scale::new(mcmc.proposal_sd_init);
    let mut shift_scale = Scale::new(mcmc.proposal_sd_init);
    let (mut sigma_acc, mut sigma_prop) = (0usize, 0usize);
    let mut rescaled = vec![(0.0, 0.0); k];

    let kept_target = mcmc.samples;
    let batch = ((kept_target as f64).sqrt().floor() as usize).max(1);
    let mut theta_tally: Vec<Tally> = (0..k).map(|_| Tally::new(batch)).collect();
    let mut mu_tally = Tally::new(batch);
    let mut sigma_tally = Tally::new(batch);
    let mut exceed = vec![0usize; k];
    let mut p_sum = vec![0.0; k];
    let mut p_sq = vec![0.0; k];
    let mut ex_count = vec![0usize; k];
    let mut chain = mcmc.keep_chain.then(ChainDump::default);

    let total = mcmc.burn_in + mcmc.samples * mcmc.thin;
    for iter in 0..total {
        let adapting = iter < mcmc.burn_in;
        if iter == mcmc.burn_in {
            for b in baskets.iter_mut() {
                b.accepted = 0;
                b.proposed = 0;
            }
            sigma_acc = 0;
            sigma_prop = 0;
        }
        let sigma = log_sigma.exp();
        let sigma2 = sigma * sigma;

        // (1) exchangeability indicators
        if sample_delta {
            let ln_ex_norm = -0.5 * (LN_2PI + 2.0 * log_sigma);
            let ex_half_prec = 0.5 / sigma2;
            for (b, inp) in baskets.iter_mut().zip(&input.baskets) {
                let u: f64 = b.rng.random();
                b.delta = if inp.pi >= 1.0 {
                    true
                } else if inp.pi <= 0.0 {
                    false
                } else {
                    let d_ex = b.theta - mu;
                    let d_nex = b.theta - inp.own_mean;
                    // log odds of NEX against EX
                    let log_odds = b.nex_const - d_nex * d_nex * b.nex_half_prec - ln_ex_norm
                        + d_ex * d_ex * ex_half_prec;
                    u * (1.0 + log_odds.exp()) < 1.0
                };
            }
        }

        // (2) basket log-odds
        for (b, inp) in baskets.iter_mut().zip(&input.baskets) {
            let (prior_mean, prior_var, slot) = if b.delta {
                (mu, sigma2, 1)
            } else {
                (inp.own_mean, inp.own_var, 0)
            };
            let z = normal(&mut b.rng);
            let proposal = b.theta + b.scales[slot].sd() * z;
            let ll_new = inp.y as f64 * proposal - inp.n as f64 * softplus(proposal);
            let d_new = proposal - prior_mean;
            let d_old = b.theta - prior_mean;
            let log_ratio = ll_new - b.loglik - (d_new * d_new - d_old * d_old) / (2.0 * prior_var);
            if log_ratio.is_nan() || log_ratio == f64::INFINITY {
                return Err(Error::NonFinite { model: name, iteration: iter });
            }
            let accept = accept(&mut b.rng, log_ratio);
            if accept {
                b.theta = proposal;
                b.loglik = ll_new;
                b.accepted += 1;
            }
            b.proposed += 1;
            if adapting {
                b.scales[slot].adapt(accept);
            }
        }

        if has_hyper {
            // (3) common mean, conjugate given the exchangeable baskets
            let mut n_ex = 0usize;
            let mut sum_ex = 0.0;
            for &i in &order {
                if baskets[i].delta {
                    n_ex += 1;
                    sum_ex += baskets[i].theta;
                }
            }
            let prec = 1.0 / input.mu_var + n_ex as f64 / sigma2;
            let mean = (input.mu_mean / input.mu_var + sum_ex / sigma2) / prec;
            mu = mean + normal(&mut hyper_rng) / prec.sqrt();

            // (4) between-basket SD on the log scale
            let mut ss = 0.0;
            for &i in &order {
                if baskets[i].delta {
                    let d = baskets[i].theta - mu;
                    ss += d * d;
                }
            }
            let s0sq = input.sigma_scale * input.sigma_scale;
            let log_target = |ls: f64| {
                let s2 = (2.0 * ls).exp();
                -s2 / (2.0 * s0sq) - n_ex as f64 * ls - ss / (2.0 * s2) + ls
            };
            let mut current = log_target(log_sigma);
            for _ in 0..SIGMA_SUBSTEPS {
                let proposal = log_sigma + sigma_scale.sd() * normal(&mut hyper_rng);
                let target = log_target(proposal);
                let log_ratio = target - current;
                if log_ratio.is_nan() {
                    return Err(Error::NonFinite { model: name, iteration: iter });
                }
                let took = accept(&mut hyper_rng, log_ratio);
                if took {
                    log_sigma = proposal;
                    current = target;
                    sigma_acc += 1;
                }
                sigma_prop += 1;
                if adapting {
                    sigma_scale.adapt(took);
                }
            }

            // (5) log sigma again, holding the standardised deviations fixed
            if n_ex > 0 {
                for _ in 0..SPREAD_SUBSTEPS {
                    let step = spread_scale.sd() * normal(&mut hyper_rng);
                    let factor = step.exp();
                    let mut log_ratio = 0.0;
                    for &i in &order {
                        let b = &baskets[i];
                        if b.delta {
                            let inp = &input.baskets[i];
                            let t = mu + (b.theta - mu) * factor;
                            let ll = inp.y as f64 * t - inp.n as f64 * softplus(t);
                            log_ratio += ll - b.loglik;
                            rescaled[i] = (t, ll);
                        }
                    }
                    let old_s2 = (2.0 * log_sigma).exp();
                    let new_s2 = old_s2 * factor * factor;
                    log_ratio += step - (new_s2 - old_s2) / (2.0 * s0sq);
                    if log_ratio.is_nan() {
                        return Err(Error::NonFinite { model: name, iteration: iter });
                    }
                    let moved = accept(&mut hyper_rng, log_ratio);
                    if moved {
                        log_sigma += step;
                        for (b, &(t, ll)) in baskets.iter_mut().zip(&rescaled) {
                            if b.delta {
                                b.theta = t;
                                b.loglik = ll;
                            }
                        }
                    }
                    if adapting {
                        spread_scale.adapt(moved);
                    }
                }

                // (6) mu and the exchangeable baskets shifted together
                let step = shift_scale.sd() * normal(&mut hyper_rng);
                let mut log_ratio = 0.0;
                for &i in &order {
                    let b = &baskets[i];
                    if b.delta {
                        let inp = &input.baskets[i];
                        let t = b.theta + step;
                        let ll = inp.y as f64 * t - inp.n as f64 * softplus(t);
                        log_ratio += ll - b.loglik;
                        rescaled[i] = (t, ll);
                    }
                }
                let (d_old, d_new) = (mu - input.mu_mean, mu + step - input.mu_mean);
                log_ratio -= (d_new * d_new - d_old * d_old) / (2.0 * input.mu_var);
                if log_ratio.is_nan() {
                    return Err(Error::NonFinite { model: name, iteration: iter });
                }
                let moved = accept(&mut hyper_rng, log_ratio);
                if moved {
                    mu += step;
                    for (b, &(t, ll)) in baskets.iter_mut().zip(&rescaled) {
                        if b.delta {
                            b.theta = t;
                            b.loglik = ll;
                        }
                    }
                }
                if adapting {
                    shift_scale.adapt(moved);
                }
            }
        }

        if !adapting && (iter - mcmc.burn_in + 1) % mcmc.thin == 0 {
            for (i, b) in baskets.iter().enumerate() {
                if b.theta > input.threshold {
                    exceed[i] += 1;
                }
                let p = expit(b.theta);
                p_sum[i] += p;
                p_sq[i] += p * p;
                if b.delta {
                    ex_count[i] += 1;
                }
                theta_tally[i].push(b.theta);
            }
            if has_hyper {
                mu_tally.push(mu);
                sigma_tally.push(log_sigma);
            }
            if let Some(c) = chain.as_mut() {
                c.theta.push(baskets.iter().map(|b| b.theta).collect());
                c.delta.push(baskets.iter().map(|b| b.delta).collect());
                c.mu.push(mu);
                c.sigma.push(log_sigma.exp());
            }
        }
    }

    let kept = mcmc.samples as f64;
    let mean_p: Vec<f64> = p_sum.iter().map(|s| s / kept).collect();
    let sd_p = p_sq
        .iter()
        .zip(&mean_p)
        .map(|(sq, m)| (sq / kept - m * m).max(0.0).sqrt())
        .collect();

    let accept_theta: Vec<f64> = baskets
        .iter()
        .map(|b| b.accepted as f64 / b.proposed.max(1) as f64)
        .collect();
    let accept_sigma = has_hyper.then(|| sigma_acc as f64 / sigma_prop.max(1) as f64);
    let mut warnings = Vec::new();
    for (i, &a) in accept_theta.iter().enumerate() {
        if !(0.1..=0.6).contains(&a) {
            warnings.push(format!(
                "{name}: theta acceptance {a:.3} for basket label {} outside [0.1, 0.6]",
                input.baskets[i].key
            ));
        }
    }
    if let Some(a) = accept_sigma {
        if !(0.1..=0.6).contains(&a) {
            warnings.push(format!("{name}: sigma acceptance {a:.3} outside [0.1, 0.6]"));
        }
    }

    Ok(SamplerOutput {
        prob_exceed: exceed.iter().map(|&c| c as f64 / kept).collect(),
        mean_p,
        sd_p,
        prob_ex: sample_delta.then(|| ex_count.iter().map(|&c| c as f64 / kept).collect()),
        diagnostics: Diagnostics {
            accept_theta,
            accept_sigma,
            ess_theta: theta_tally.iter().map(Tally::ess).collect(),
            ess_mu: has_hyper.then(|| mu_tally.ess()),
            ess_log_sigma: has_hyper.then(|| sigma_tally.ess()),
            warnings,
        },
        chain,
    })
}
