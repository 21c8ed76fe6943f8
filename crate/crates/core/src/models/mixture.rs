//! Gaussian mixture with a fixed number of components under the Jeffreys prior.
//!
//! The chain moves on an unconstrained vector
//! `u = (log(w_1/w_k), .., log(w_{k-1}/w_k), mu_1, .., mu_k, log sigma_1, .., log sigma_k)`.
//! The Fisher information, and hence the prior, lives in the free
//! parameterization `(w_1, .., w_{k-1}, mu, sigma)`; the change of variables
//! contributes `sum_i log w_i + sum_i log sigma_i`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::quadrature::Quadrature;
use super::Model;
use crate::error::{Error, Result};
use crate::kernel::ProposalKernel;
use crate::target::{CostTier, FactorizedTarget, ParamVector};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const EIGEN_FLOOR: f64 = 1e-12;
const EIGEN_NEGATIVE: f64 = -1e-8;

#[cfg(test)]
thread_local! {
    pub(crate) static FISHER_CALLS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// How the second parameter of each component in the reference mixture is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleConvention {
    #[default]
    Variance,
    StdDev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl MixtureParams {
    /// `0.10 N(-10, 2) + 0.65 N(0, 5) + 0.25 N(15, 5)`.
    pub fn reference(convention: ScaleConvention) -> Self {
        let scales = [2.0f64, 5.0, 5.0];
        let sds = match convention {
            ScaleConvention::Variance => scales.iter().map(|v| v.sqrt()).collect(),
            ScaleConvention::StdDev => scales.to_vec(),
        };
        Self {
            weights: vec![0.10, 0.65, 0.25],
            means: vec![-10.0, 0.0, 15.0],
            sds,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn is_valid(&self) -> bool {
        let k = self.k();
        k >= 1
            && self.means.len() == k
            && self.sds.len() == k
            && self.weights.iter().all(|w| *w > 0.0 && w.is_finite())
            && self.sds.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.means.iter().all(|m| m.is_finite())
            && (self.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }

    pub fn from_unconstrained(u: &[f64], k: usize) -> Self {
        assert_eq!(u.len(), 3 * k - 1, "unconstrained vector has length 3k - 1");
        let etas = &u[..k - 1];
        let top = etas.iter().copied().fold(0.0f64, f64::max);
        let mut weights: Vec<f64> = etas.iter().map(|e| (e - top).exp()).collect();
        weights.push((-top).exp());
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            weights,
            means: u[k - 1..2 * k - 1].to_vec(),
            sds: u[2 * k - 1..].iter().map(|s| s.exp()).collect(),
        }
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let k = self.k();
        let last = self.weights[k - 1].ln();
        let mut u: Vec<f64> = self.weights[..k - 1].iter().map(|w| w.ln() - last).collect();
        u.extend(&self.means);
        u.extend(self.sds.iter().map(|s| s.ln()));
        u
    }

    /// Log absolute Jacobian of `u -> (w_1..w_{k-1}, mu, sigma)`.
    pub fn log_jacobian(&self) -> f64 {
        self.weights.iter().map(|w| w.ln()).sum::<f64>() + self.sds.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// Free-parameter count `3k - 1`.
    pub fn free_len(&self) -> usize {
        3 * self.k() - 1
    }
}

/// Per-component pieces of `log(w_i N(x; mu_i, sigma_i^2))`.
struct Components {
    offset: Vec<f64>,
    means: Vec<f64>,
    half_prec: Vec<f64>,
}

impl Components {
    fn new(psi: &MixtureParams) -> Self {
        Self {
            offset: psi
                .weights
                .iter()
                .zip(&psi.sds)
                .map(|(w, s)| w.ln() - s.ln() - HALF_LN_2PI)
                .collect(),
            means: psi.means.clone(),
            half_prec: psi.sds.iter().map(|s| 0.5 / (s * s)).collect(),
        }
    }

    /// Per-component log terms into `buf`, returning their log-sum-exp.
    #[inline]
    fn log_terms(&self, x: f64, buf: &mut [f64]) -> f64 {
        let mut top = f64::NEG_INFINITY;
        for i in 0..buf.len() {
            let d = x - self.means[i];
            buf[i] = self.offset[i] - d * d * self.half_prec[i];
            top = top.max(buf[i]);
        }
        if top == f64::NEG_INFINITY {
            return top;
        }
        top + buf.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
    }

    fn loglik(&self, xs: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.means.len()];
        xs.iter().map(|&x| self.log_terms(x, &mut buf)).sum()
    }
}

/// `log sum_i w_i N(x; mu_i, sigma_i^2)`; `-inf` if `psi` violates its constraints.
pub fn mixture_logpdf(psi: &MixtureParams, x: f64) -> f64 {
    if !psi.is_valid() {
        return f64::NEG_INFINITY;
    }
    let comps = Components::new(psi);
    comps.log_terms(x, &mut vec![0.0; psi.k()])
}

fn score_into(psi: &MixtureParams, comps: &Components, x: f64, buf: &mut [f64], out: &mut [f64]) -> f64 {
    let k = psi.k();
    let lf = comps.log_terms(x, buf);
    let resp: Vec<f64> = buf.iter().map(|v| (v - lf).exp()).collect();
    let last = resp[k - 1] / psi.weights[k - 1];
    for i in 0..k - 1 {
        out[i] = resp[i] / psi.weights[i] - last;
    }
    for i in 0..k {
        let d = x - psi.means[i];
        let s = psi.sds[i];
        out[k - 1 + i] = resp[i] * d / (s * s);
        out[2 * k - 1 + i] = resp[i] * (d * d / (s * s * s) - 1.0 / s);
    }
    lf
}

/// Gradient of `log f(x; psi)` in the free parameterization.
pub fn mixture_score(psi: &MixtureParams, x: f64) -> Vec<f64> {
    let comps = Components::new(psi);
    let mut out = vec![0.0; psi.free_len()];
    score_into(psi, &comps, x, &mut vec![0.0; psi.k()], &mut out);
    out
}

/// Integration range covering ten of the widest component's scales past the extreme means.
pub fn integration_range(psi: &MixtureParams) -> (f64, f64) {
    let widest = psi.sds.iter().copied().fold(0.0f64, f64::max);
    let lo = psi.means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = psi.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo - 10.0 * widest, hi + 10.0 * widest)
}

/// `I(psi) = int s(x) s(x)^T f(x) dx`, row-major `(3k-1) x (3k-1)`.
pub fn fisher_info(psi: &MixtureParams, quad: &Quadrature) -> Result<DMatrix<f64>> {
    #[cfg(test)]
    FISHER_CALLS.with(|c| c.set(c.get() + 1));
    if !psi.is_valid() {
        return Err(Error::InvalidArgument("mixture parameters off the constraint set".into()));
    }
    let m = psi.free_len();
    let (a, b) = integration_range(psi);
    let (nodes, weights) = quad.grid(a, b)?;
    let comps = Components::new(psi);
    let mut buf = vec![0.0; psi.k()];
    let mut s = vec![0.0; m];
    let mut acc = vec![0.0; m * m];
    for (&x, &w) in nodes.iter().zip(&weights) {
        let lf = score_into(psi, &comps, x, &mut buf, &mut s);
        let wf = w * lf.exp();
        if wf == 0.0 {
            continue;
        }
        for i in 0..m {
            let si = wf * s[i];
            for j in i..m {
                acc[i * m + j] += si * s[j];
            }
        }
    }
    let mut info = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            info[(i, j)] = acc[i * m + j];
            info[(j, i)] = acc[i * m + j];
        }
    }
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Fisher information entry".into()));
    }
    Ok(info)
}

/// `0.5 log det I(psi)` with eigenvalues floored at 1e-12.
pub fn jeffreys_logprior(psi: &MixtureParams, quad: &Quadrature) -> Result<f64> {
    let info = fisher_info(psi, quad)?;
    let eig = SymmetricEigen::new(info).eigenvalues;
    if let Some(bad) = eig.iter().find(|v| **v < EIGEN_NEGATIVE) {
        return Err(Error::Numerical(format!("Fisher information has eigenvalue {bad}")));
    }
    let value = 0.5 * eig.iter().map(|v| v.max(EIGEN_FLOOR).ln()).sum::<f64>();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical("log det is not finite".into()))
    }
}

/// Ancestral sampling from `psi`.
pub fn simulate_mixture_from(psi: &MixtureParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 || !psi.is_valid() {
        return Err(Error::InvalidArgument("need n >= 1 and valid parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut c = 0;
            let mut cum = psi.weights[0];
            while u >= cum && c + 1 < psi.k() {
                c += 1;
                cum += psi.weights[c];
            }
            let z: f64 = rng.sample(StandardNormal);
            psi.means[c] + psi.sds[c] * z
        })
        .collect())
}

/// Sample of size `n` from the reference three-component mixture (variances 2, 5, 5).
pub fn simulate_mixture(n: usize, seed: u64) -> Result<Vec<f64>> {
    simulate_mixture_from(&MixtureParams::reference(ScaleConvention::Variance), n, seed)
}

#[derive(Clone, Debug)]
pub struct MixtureModel {
    data: Arc<Vec<f64>>,
    k: usize,
    pub quadrature: Quadrature,
    /// Leading observations paired with the prior in the expensive factor.
    head: usize,
    pub init: MixtureParams,
    /// Multiplier on the asymptotic per-coordinate posterior scales.
    pub proposal_factor: f64,
}

impl MixtureModel {
    pub fn new(data: Vec<f64>, init: MixtureParams, quadrature: Quadrature) -> Result<Self> {
        let n = data.len();
        if n < 50 {
            return Err(Error::InvalidArgument(format!(
                "mixture needs at least 50 observations for a nonempty head block, got {n}"
            )));
        }
        if !init.is_valid() {
            return Err(Error::InvalidArgument("initial mixture parameters invalid".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite observation".into()));
        }
        Ok(Self {
            data: Arc::new(data),
            k: init.k(),
            quadrature,
            head: (0.02 * n as f64).floor() as usize,
            init,
            proposal_factor: 0.5,
        })
    }

    /// Moves the first `floor(fraction * n)` observations into the expensive factor.
    pub fn with_head_fraction(mut self, fraction: f64) -> Result<Self> {
        let head = (fraction * self.data.len() as f64).floor() as usize;
        if !(fraction > 0.0 && fraction < 1.0) || head == 0 {
            return Err(Error::InvalidArgument(format!(
                "head fraction {fraction} leaves the expensive likelihood block empty"
            )));
        }
        self.head = head;
        Ok(self)
    }

    pub fn head_len(&self) -> usize {
        self.head
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// The two-factor split: bulk likelihood (cheap), then head likelihood with the
/// Jeffreys prior and the Jacobian (expensive). A failed Fisher computation is a rejection.
pub fn mixture_da_factors(model: &MixtureModel) -> Result<FactorizedTarget> {
    let k = model.k;
    let head = model.head;
    let bulk_data = model.data.clone();
    let head_data = model.data.clone();
    let quad = model.quadrature;
    FactorizedTarget::builder(3 * k - 1)
        .factor("likelihood-bulk", CostTier::Cheap, move |u: &[f64]| {
            let psi = MixtureParams::from_unconstrained(u, k);
            if !psi.is_valid() {
                return f64::NEG_INFINITY;
            }
            Components::new(&psi).loglik(&bulk_data[head..])
        })
        .factor("jeffreys-head", CostTier::Expensive, move |u: &[f64]| {
            let psi = MixtureParams::from_unconstrained(u, k);
            if !psi.is_valid() {
                return f64::NEG_INFINITY;
            }
            match jeffreys_logprior(&psi, &quad) {
                Ok(prior) => Components::new(&psi).loglik(&head_data[..head]) + prior + psi.log_jacobian(),
                Err(_) => f64::NEG_INFINITY,
            }
        })
        .build()
}

impl Model for MixtureModel {
    fn name(&self) -> &'static str {
        "mixture"
    }

    fn dimension(&self) -> usize {
        3 * self.k - 1
    }

    fn target(&self) -> Result<FactorizedTarget> {
        mixture_da_factors(self)
    }

    fn reference_log_density(&self, u: &[f64]) -> f64 {
        let psi = MixtureParams::from_unconstrained(u, self.k);
        if !psi.is_valid() {
            return f64::NEG_INFINITY;
        }
        let lik: f64 = self.data.iter().map(|&x| mixture_logpdf(&psi, x)).sum();
        match jeffreys_logprior(&psi, &self.quadrature) {
            Ok(prior) => lik + prior + psi.log_jacobian(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn initial_state(&self) -> ParamVector {
        ParamVector::new(self.init.to_unconstrained())
    }

    /// Diagonal random walk from the asymptotic posterior scales at the initial point.
    fn default_kernel(&self) -> Result<ProposalKernel> {
        let n = self.data.len() as f64;
        let k = self.k;
        let w = &self.init.weights;
        let mut sds = Vec::with_capacity(3 * k - 1);
        for i in 0..k - 1 {
            sds.push((1.0 / (n * w[i]) + 1.0 / (n * w[k - 1])).sqrt());
        }
        for i in 0..k {
            sds.push(self.init.sds[i] / (n * w[i]).sqrt());
        }
        for i in 0..k {
            sds.push(1.0 / (2.0 * n * w[i]).sqrt());
        }
        sds.iter_mut().for_each(|s| *s *= self.proposal_factor);
        ProposalKernel::diagonal(&sds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::models::testing::check_factor_sum;

    fn reference() -> MixtureParams {
        MixtureParams::reference(ScaleConvention::Variance)
    }

    fn random_psi(rng: &mut ChaCha8Rng, k: usize) -> MixtureParams {
        let mut weights: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MixtureParams {
            weights,
            means: (0..k).map(|_| 20.0 * rng.random::<f64>() - 10.0).collect(),
            sds: (0..k).map(|_| 0.5 + 3.0 * rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn single_component_is_gaussian() {
        let psi = MixtureParams {
            weights: vec![1.0],
            means: vec![1.5],
            sds: vec![2.0],
        };
        for x in [-3.0, 0.0, 1.5, 7.0] {
            let direct = -0.5 * ((x - 1.5) / 2.0f64).powi(2) - 2.0f64.ln() - 0.5 * (2.0 * PI).ln();
            assert!((mixture_logpdf(&psi, x) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_components_collapse() {
        let one = MixtureParams {
            weights: vec![1.0],
            means: vec![0.3],
            sds: vec![1.7],
        };
        let two = MixtureParams {
            weights: vec![0.5, 0.5],
            means: vec![0.3, 0.3],
            sds: vec![1.7, 1.7],
        };
        for x in [-2.0, 0.3, 4.0] {
            assert!((mixture_logpdf(&one, x) - mixture_logpdf(&two, x)).abs() < 1e-14);
        }
    }

    #[test]
    fn reference_mixture_at_zero_matches_three_term_sum() {
        let psi = reference();
        let direct: f64 = (0..3)
            .map(|i| {
                let (w, m, s) = (psi.weights[i], psi.means[i], psi.sds[i]);
                w * (-0.5 * ((0.0 - m) / s).powi(2)).exp() / (s * (2.0 * PI).sqrt())
            })
            .sum();
        assert!((mixture_logpdf(&psi, 0.0) - direct.ln()).abs() < 1e-14);
    }

    #[test]
    fn constraint_violation_is_rejection() {
        let mut psi = reference();
        psi.sds[1] = -1.0;
        assert_eq!(mixture_logpdf(&psi, 0.0), f64::NEG_INFINITY);
        let mut psi = reference();
        psi.weights[0] = 0.5;
        assert_eq!(mixture_logpdf(&psi, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn unconstrained_round_trip_and_jacobian() {
        let psi = reference();
        let back = MixtureParams::from_unconstrained(&psi.to_unconstrained(), 3);
        for (a, b) in psi.weights.iter().chain(&psi.means).chain(&psi.sds).zip(back.weights.iter().chain(&back.means).chain(&back.sds)) {
            assert!((a - b).abs() < 1e-14);
        }
        // Jacobian determinant by central differences of u -> (w_1, w_2, mu, sigma).
        let u = psi.to_unconstrained();
        let free = |u: &[f64]| {
            let p = MixtureParams::from_unconstrained(u, 3);
            let mut v = p.weights[..2].to_vec();
            v.extend(&p.means);
            v.extend(&p.sds);
            v
        };
        let h = 1e-6;
        let mut jac = DMatrix::<f64>::zeros(8, 8);
        for j in 0..8 {
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[j] += h;
            dn[j] -= h;
            let (fu, fd) = (free(&up), free(&dn));
            for i in 0..8 {
                jac[(i, j)] = (fu[i] - fd[i]) / (2.0 * h);
            }
        }
        assert!((jac.determinant().abs().ln() - psi.log_jacobian()).abs() < 1e-6);
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..100 {
            let k = 1 + case % 3;
            let psi = random_psi(&mut rng, k);
            let x = 30.0 * rng.random::<f64>() - 15.0;
            let score = mixture_score(&psi, x);
            let h = 1e-6;
            for j in 0..psi.free_len() {
                let bump = |delta: f64| {
                    let mut p = psi.clone();
                    if j < k - 1 {
                        p.weights[j] += delta;
                        p.weights[k - 1] -= delta;
                    } else if j < 2 * k - 1 {
                        p.means[j - (k - 1)] += delta;
                    } else {
                        p.sds[j - (2 * k - 1)] += delta;
                    }
                    mixture_logpdf(&p, x)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - score[j]).abs() < 1e-6, "case {case} coord {j}: {fd} vs {}", score[j]);
            }
        }
    }

    #[test]
    fn single_gaussian_fisher_information() {
        for (mu, s) in [(0.0, 1.0), (3.0, 0.4), (-7.0, 5.0)] {
            let psi = MixtureParams {
                weights: vec![1.0],
                means: vec![mu],
                sds: vec![s],
            };
            let info = fisher_info(&psi, &Quadrature::default()).unwrap();
            assert!((info[(0, 0)] - 1.0 / (s * s)).abs() < 1e-6);
            assert!((info[(1, 1)] - 2.0 / (s * s)).abs() < 1e-6);
            assert!(info[(0, 1)].abs() < 1e-6);
        }
    }

    #[test]
    fn fisher_information_is_symmetric() {
        let info = fisher_info(&reference(), &Quadrature::default()).unwrap();
        assert!((&info - info.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn refinement_converges() {
        let psi = reference();
        let q = Quadrature::default();
        let a = jeffreys_logprior(&psi, &q).unwrap();
        let b = jeffreys_logprior(&psi, &q.refined()).unwrap();
        assert!((a - b).abs() <= 1e-6);
    }

    #[test]
    fn refinement_error_decreases_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let psi = random_psi(&mut rng, 3);
            let exact = fisher_info(&psi, &Quadrature { panels: 512, order: 8 }).unwrap();
            let scale = exact.amax();
            let mut last = f64::INFINITY;
            for panels in [2, 4, 8, 16, 32] {
                let approx = fisher_info(&psi, &Quadrature { panels, order: 8 }).unwrap();
                let err = (&approx - &exact).amax();
                assert!(err <= last || err < 1e-12 * scale, "panels {panels}: {err} after {last}");
                last = err;
            }
        }
    }

    #[test]
    fn jeffreys_single_gaussian() {
        let q = Quadrature::default();
        let at = |s: f64| {
            jeffreys_logprior(
                &MixtureParams {
                    weights: vec![1.0],
                    means: vec![0.0],
                    sds: vec![s],
                },
                &q,
            )
            .unwrap()
        };
        assert!((at(1.5) - 0.5 * (2.0 / 1.5f64.powi(4)).ln()).abs() < 1e-6);
        assert!(at(0.5) > at(1.0) && at(1.0) > at(2.0));
        // Doubling the scale (and with it the integration grid) shifts by -2 log 2.
        assert!((at(2.4) - at(1.2) + 2.0 * 2.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn non_finite_fisher_is_rejection() {
        let psi = MixtureParams {
            weights: vec![0.5, 0.5],
            means: vec![-1e308, 1e308],
            sds: vec![1.0, 1.0],
        };
        assert!(jeffreys_logprior(&psi, &Quadrature::default()).is_err());
    }

    #[test]
    fn simulation_frequencies_and_mean() {
        let n = 100_000;
        let xs = simulate_mixture(n, 21).unwrap();
        assert_eq!(xs, simulate_mixture(n, 21).unwrap());
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = 0.1 * (2.0 + 100.0) + 0.65 * 5.0 + 0.25 * (5.0 + 225.0) - 2.75f64.powi(2);
        assert!((mean - 2.75).abs() < 3.0 * (var / n as f64).sqrt(), "mean {mean}");
        // Component frequencies via the same ancestral draw of the component label.
        let psi = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let u: f64 = rng.random();
            let c = if u < psi.weights[0] { 0 } else if u < psi.weights[0] + psi.weights[1] { 1 } else { 2 };
            counts[c] += 1;
            let _: f64 = rng.sample(StandardNormal);
        }
        for (c, w) in counts.iter().zip(&psi.weights) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.01);
        }
    }

    fn reference_model() -> MixtureModel {
        MixtureModel::new(simulate_mixture(1000, 5).unwrap(), reference(), Quadrature::default()).unwrap()
    }

    #[test]
    fn head_block_is_two_percent() {
        assert_eq!(reference_model().head_len(), 20);
        assert!(MixtureModel::new(vec![0.0; 49], reference(), Quadrature::default()).is_err());
    }

    #[test]
    fn likelihood_parts_sum_to_full() {
        let m = reference_model();
        let psi = reference();
        let comps = Components::new(&psi);
        let parts = comps.loglik(&m.data()[20..]) + comps.loglik(&m.data()[..20]);
        let full: f64 = m.data().iter().map(|&x| mixture_logpdf(&psi, x)).sum();
        assert!((parts - full).abs() < 1e-12 * full.abs().max(1.0) + 1e-12);
    }

    #[test]
    fn factors_sum_to_reference() {
        check_factor_sum(&reference_model(), 0.1, 1000, 1e-10);
    }

    #[test]
    fn bulk_rejection_skips_fisher_information() {
        use crate::delayed::delayed_accept;
        use crate::schedule::make_schedule;
        use crate::target::ChainPoint;
        let m = reference_model();
        let target = m.target().unwrap();
        let sched = make_schedule(1, 8, 2).unwrap();
        let cur = ChainPoint::new(&target, m.initial_state()).unwrap();
        let mut far = m.initial_state();
        far[2] += 5.0; // shove a mean far away: bulk likelihood collapses
        let before = FISHER_CALLS.with(|c| c.get());
        for t in 0..50 {
            let out = delayed_accept(&target, &[0, 1], &cur, &far, t, &sched).unwrap();
            assert!(!out.accepted && out.stages_evaluated == 1);
        }
        assert_eq!(FISHER_CALLS.with(|c| c.get()), before);
    }
}
