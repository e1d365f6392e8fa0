//! One-dimensional density estimators: Gaussian mixtures fit by EM and
//! Gaussian-kernel density estimates.
//!
//! All log-densities are evaluated with log-sum-exp and are finite for finite
//! inputs. Standard deviations and bandwidths are floored at `1e-4`, which
//! matters for ReLU-derived features that are exactly zero for most samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normal_log_pdf, population_std};

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const BANDWIDTH_FLOOR: f64 = 1e-4;

/// Components whose responsibility mass falls below this fraction of N are
/// considered dead.
const DEAD_COMPONENT_FRACTION: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the total log-likelihood improves by less than this.
    pub tol: f64,
    pub sigma_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            sigma_floor: SIGMA_FLOOR,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: f64, sigma: f64) -> Self {
        Self {
            weight,
            mean,
            sigma,
        }
    }
}

/// A 1-D Gaussian mixture in canonical form: components sorted by mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm1D {
    components: Vec<GaussianComponent>,
}

impl Gmm1D {
    /// Validates and canonicalizes a set of components. Weights must sum to
    /// one within `1e-9`.
    pub fn new(mut components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("mixture needs at least one component"));
        }
        for c in &components {
            if !(c.weight.is_finite() && (0.0..=1.0).contains(&c.weight)) {
                return Err(Error::invalid(format!(
                    "component weight {} not in [0, 1]",
                    c.weight
                )));
            }
            if !c.mean.is_finite() || !(c.sigma.is_finite() && c.sigma > 0.0) {
                return Err(Error::invalid(format!(
                    "component mean {} / sigma {} invalid",
                    c.mean, c.sigma
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("component weights sum to {total}")));
        }
        sort_canonical(&mut components);
        Ok(Self { components })
    }

    pub(crate) fn from_sorted_unchecked(components: Vec<GaussianComponent>) -> Self {
        Self { components }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        gmm_log_pdf(self, x)
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    /// Per-component responsibility-weighted accumulators of `samples` under
    /// the current parameters (one E-step).
    pub fn accumulate(&self, samples: &[f64]) -> Vec<ComponentStats> {
        let mut stats = vec![ComponentStats::default(); self.components.len()];
        let mut terms = vec![0.0; self.components.len()];
        for &x in samples {
            let lse = component_log_terms(&self.components, x, &mut terms);
            for (acc, &t) in stats.iter_mut().zip(&terms) {
                let r = (t - lse).exp();
                acc.weight_sum += r;
                acc.sum += r * x;
                acc.sum_sq += r * x * x;
            }
        }
        stats
    }

    /// M-step from merged accumulators. Returns the refit mixture and the
    /// accumulators, both permuted into canonical (mean-sorted) order.
    /// Components with no mass keep their previous location and scale and
    /// get weight zero.
    pub fn refit_from_stats(
        &self,
        stats: &[ComponentStats],
        sigma_floor: f64,
    ) -> Result<(Self, Vec<ComponentStats>)> {
        if stats.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                expected: self.components.len(),
                found: stats.len(),
            });
        }
        let total: f64 = stats.iter().map(|s| s.weight_sum).sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Empty("accumulators hold no mass"));
        }
        let mut paired: Vec<(GaussianComponent, ComponentStats)> = stats
            .iter()
            .zip(&self.components)
            .map(|(s, prev)| {
                let comp = if s.weight_sum > 0.0 {
                    let mean = s.sum / s.weight_sum;
                    let var = (s.sum_sq / s.weight_sum - mean * mean).max(0.0);
                    GaussianComponent::new(s.weight_sum / total, mean, var.sqrt().max(sigma_floor))
                } else {
                    GaussianComponent::new(0.0, prev.mean, prev.sigma)
                };
                (comp, *s)
            })
            .collect();
        paired.sort_by(|a, b| canonical_order(&a.0, &b.0));
        let (mut components, stats): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
        normalize_weights(&mut components);
        Ok((Self { components }, stats))
    }
}

/// Responsibility-weighted sufficient statistics of one mixture component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub weight_sum: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ComponentStats {
    pub fn merge(&self, other: &ComponentStats) -> ComponentStats {
        ComponentStats {
            weight_sum: self.weight_sum + other.weight_sum,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }
}

/// Gaussian-kernel density estimate over stored sample values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kde1D {
    centers: Vec<f64>,
    bandwidth: f64,
}

impl Kde1D {
    pub fn new(centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Empty("kde needs at least one center"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("kde centers must be finite"));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!(
                "bandwidth {bandwidth} must be positive"
            )));
        }
        Ok(Self {
            centers,
            bandwidth: bandwidth.max(BANDWIDTH_FLOOR),
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        kde_log_pdf(self, x)
    }

    pub fn mean(&self) -> f64 {
        crate::math::mean(&self.centers)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensityModel {
    Gmm(Gmm1D),
    Kde(Kde1D),
}

impl DensityModel {
    pub fn log_pdf(&self, x: f64) -> f64 {
        log_pdf(self, x)
    }

    /// Mean of the represented distribution.
    pub fn mean(&self) -> f64 {
        match self {
            DensityModel::Gmm(g) => g.mean(),
            DensityModel::Kde(k) => k.mean(),
        }
    }

    pub fn as_gmm(&self) -> Option<&Gmm1D> {
        match self {
            DensityModel::Gmm(g) => Some(g),
            DensityModel::Kde(_) => None,
        }
    }

    pub fn as_kde(&self) -> Option<&Kde1D> {
        match self {
            DensityModel::Kde(k) => Some(k),
            DensityModel::Gmm(_) => None,
        }
    }
}

pub fn log_pdf(model: &DensityModel, x: f64) -> f64 {
    match model {
        DensityModel::Gmm(g) => gmm_log_pdf(g, x),
        DensityModel::Kde(k) => kde_log_pdf(k, x),
    }
}

pub fn gmm_log_pdf(model: &Gmm1D, x: f64) -> f64 {
    let terms = model
        .components
        .iter()
        .map(|c| c.weight.ln() + normal_log_pdf(x, c.mean, c.sigma));
    streaming_log_sum_exp(terms).max(f64::MIN)
}

pub fn kde_log_pdf(model: &Kde1D, x: f64) -> f64 {
    let h = model.bandwidth;
    let lse = streaming_log_sum_exp(model.centers.iter().map(|&c| normal_log_pdf(x, c, h)));
    (lse - (model.centers.len() as f64).ln()).max(f64::MIN)
}

/// Two-pass log-sum-exp over a cloneable iterator, avoiding an allocation.
fn streaming_log_sum_exp<I>(terms: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Number of components actually fit for `n` samples: never more than one
/// component per two samples.
pub fn effective_components(n: usize, s_requested: usize) -> usize {
    s_requested.min((n / 2).max(1))
}

/// Diagnostics of one EM run.
#[derive(Clone, Debug, PartialEq)]
pub struct FitTrace {
    /// Total training log-likelihood at the initial parameters and after
    /// every M-step.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Accepted dead-component reinitializations.
    pub rescues: usize,
}

/// Fits a 1-D GMM with EM from a deterministic quantile initialization.
///
/// Quantile initialization does not consume `seed`; it is accepted so that
/// every fit is addressed by an explicit seed.
pub fn fit_gmm(samples: &[f64], s_requested: usize, seed: u64, config: &EmConfig) -> Result<Gmm1D> {
    fit_gmm_traced(samples, s_requested, seed, config).map(|(g, _)| g)
}

pub fn fit_gmm_traced(
    samples: &[f64],
    s_requested: usize,
    _seed: u64,
    config: &EmConfig,
) -> Result<(Gmm1D, FitTrace)> {
    if samples.is_empty() {
        return Err(Error::Empty("cannot fit a mixture to zero samples"));
    }
    if s_requested == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::record(pos, "sample is not finite"));
    }
    let n = samples.len();
    let s = effective_components(n, s_requested);
    let floor = config.sigma_floor;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let init_sigma = population_std(samples).max(floor);
    let mut components: Vec<GaussianComponent> = (0..s)
        .map(|i| {
            let q = (i as f64 + 0.5) / s as f64;
            GaussianComponent::new(1.0 / s as f64, quantile_sorted(&sorted, q), init_sigma)
        })
        .collect();

    let mut resp = vec![0.0; n * s];
    let mut sample_ll = vec![0.0; n];
    let mut ll = e_step(&components, samples, &mut resp, &mut sample_ll);
    let mut trace = FitTrace {
        log_likelihoods: vec![ll],
        iterations: 0,
        converged: false,
        rescues: 0,
    };

    for _ in 0..config.max_iter {
        trace.iterations += 1;
        let masses = m_step(&mut components, samples, &resp, floor);

        let dead: Vec<usize> = masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m < DEAD_COMPONENT_FRACTION * n as f64)
            .map(|(i, _)| i)
            .collect();

        let mut next_resp = vec![0.0; n * s];
        let mut next_sample_ll = vec![0.0; n];
        let mut next_ll = e_step(&components, samples, &mut next_resp, &mut next_sample_ll);

        if !dead.is_empty() {
            // Candidate: move each dead component onto the worst-explained
            // samples (under the previous parameters), keep it only if the
            // likelihood does not drop.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| sample_ll[a].total_cmp(&sample_ll[b]).then(a.cmp(&b)));
            let mut candidate = components.clone();
            for (slot, &d) in dead.iter().enumerate() {
                let x = samples[order[slot % n]];
                candidate[d] = GaussianComponent::new(1.0 / n as f64, x, init_sigma);
            }
            normalize_weights(&mut candidate);
            let mut cand_resp = vec![0.0; n * s];
            let mut cand_sample_ll = vec![0.0; n];
            let cand_ll = e_step(&candidate, samples, &mut cand_resp, &mut cand_sample_ll);
            if cand_ll >= next_ll {
                components = candidate;
                next_resp = cand_resp;
                next_sample_ll = cand_sample_ll;
                next_ll = cand_ll;
                trace.rescues += 1;
            }
        }

        let improvement = next_ll - ll;
        resp = next_resp;
        sample_ll = next_sample_ll;
        ll = next_ll;
        trace.log_likelihoods.push(ll);
        if improvement < config.tol {
            trace.converged = true;
            break;
        }
    }

    sort_canonical(&mut components);
    normalize_weights(&mut components);
    Ok((Gmm1D::from_sorted_unchecked(components), trace))
}

/// Fills `resp` (row-major n x s) and per-sample log-likelihoods; returns
/// the total log-likelihood.
fn e_step(
    components: &[GaussianComponent],
    samples: &[f64],
    resp: &mut [f64],
    sample_ll: &mut [f64],
) -> f64 {
    let s = components.len();
    let mut terms = vec![0.0; s];
    let mut total = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let lse = component_log_terms(components, x, &mut terms);
        for (r, &t) in resp[i * s..(i + 1) * s].iter_mut().zip(&terms) {
            *r = (t - lse).exp();
        }
        sample_ll[i] = lse;
        total += lse;
    }
    total
}

/// Returns the per-component responsibility masses.
fn m_step(
    components: &mut [GaussianComponent],
    samples: &[f64],
    resp: &[f64],
    floor: f64,
) -> Vec<f64> {
    let s = components.len();
    let n = samples.len() as f64;
    let mut masses = vec![0.0; s];
    for (j, comp) in components.iter_mut().enumerate() {
        let mass: f64 = (0..samples.len()).map(|i| resp[i * s + j]).sum();
        masses[j] = mass;
        if mass > 0.0 {
            let mean = samples
                .iter()
                .enumerate()
                .map(|(i, &x)| resp[i * s + j] * x)
                .sum::<f64>()
                / mass;
            let var = samples
                .iter()
                .enumerate()
                .map(|(i, &x)| resp[i * s + j] * (x - mean) * (x - mean))
                .sum::<f64>()
                / mass;
            *comp = GaussianComponent::new(mass / n, mean, var.sqrt().max(floor));
        } else {
            comp.weight = 0.0;
        }
    }
    normalize_weights(components);
    masses
}

/// Writes `ln w_s + ln N(x; mu_s, sigma_s)` into `terms`, returns their
/// log-sum-exp.
fn component_log_terms(components: &[GaussianComponent], x: f64, terms: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (t, c) in terms.iter_mut().zip(components) {
        *t = c.weight.ln() + normal_log_pdf(x, c.mean, c.sigma);
        max = max.max(*t);
    }
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn normalize_weights(components: &mut [GaussianComponent]) {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight /= total;
    }
}

fn canonical_order(a: &GaussianComponent, b: &GaussianComponent) -> std::cmp::Ordering {
    a.mean
        .total_cmp(&b.mean)
        .then(a.sigma.total_cmp(&b.sigma))
        .then(a.weight.total_cmp(&b.weight))
}

fn sort_canonical(components: &mut [GaussianComponent]) {
    components.sort_by(canonical_order);
}

/// Linear-interpolation quantile of already sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Silverman's rule of thumb `1.06 * std * N^(-1/5)` with the population
/// standard deviation. Not floored.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    1.06 * population_std(samples) * (samples.len() as f64).powf(-0.2)
}

/// Stores every sample as a kernel center. Without an explicit bandwidth,
/// Silverman's rule is applied. The result is floored at [`BANDWIDTH_FLOOR`].
pub fn fit_kde(samples: &[f64], bandwidth: Option<f64>) -> Result<Kde1D> {
    if samples.is_empty() {
        return Err(Error::Empty("cannot fit a kde to zero samples"));
    }
    if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::record(pos, "sample is not finite"));
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => return Err(Error::invalid(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(samples),
    };
    Ok(Kde1D {
        centers: samples.to_vec(),
        bandwidth: h.max(BANDWIDTH_FLOOR),
    })
}
