//! Gevrey-type weighted norms and gap-space membership.
//!
//! The weighted norm is `sum_k lambda_k^{4 alpha} u_k^2 exp(r phi(lambda_k))`.
//! A state belongs to the gap space for a sequence `{rho_n}` and exponent
//! `beta` when, for every `n`, the tail over `lambda_k > rho_n` with weight
//! `exp(rho_n^beta phi(lambda_k))` stays below `rho_n`. All sums are carried
//! in log-domain arithmetic: with `beta = 3` the weights overflow doubles
//! immediately, but their logarithms stay tiny.
//!
//! Membership is truncation-relative: once `rho_n` passes the largest
//! eigenvalue every check is vacuous, and reports say so explicitly instead
//! of claiming anything asymptotic.

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::logsum::LogSum;
use crate::spectrum::{CoefficientVector, Spectrum};

/// The weight `phi: [0, inf) -> (0, inf)` in all exponential factors.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFunction {
    /// `phi(sigma) = 1 + sigma`.
    Affine,
    /// `phi(sigma) = sigma`. Positive only for `sigma > 0`; usable with
    /// spectra bounded away from zero.
    Linear,
    /// `phi(sigma) = (1 + sigma)^{1/s}`.
    Gevrey { s: f64 },
    /// `phi(sigma) = (1 + sigma)^p`.
    Power { p: f64 },
    /// `phi(sigma) = 1 + ln(1 + sigma)`.
    Log,
}

impl WeightFunction {
    pub fn eval(&self, sigma: f64) -> f64 {
        debug_assert!(sigma >= 0.0);
        match self {
            WeightFunction::Affine => 1.0 + sigma,
            WeightFunction::Linear => sigma,
            WeightFunction::Gevrey { s } => (1.0 + sigma).powf(1.0 / s),
            WeightFunction::Power { p } => (1.0 + sigma).powf(*p),
            WeightFunction::Log => 1.0 + sigma.ln_1p(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            WeightFunction::Affine => "affine".into(),
            WeightFunction::Linear => "linear".into(),
            WeightFunction::Gevrey { s } => format!("gevrey:{s}"),
            WeightFunction::Power { p } => format!("power:{p}"),
            WeightFunction::Log => "log".into(),
        }
    }

    /// Parses `"affine"`, `"linear"`, `"gevrey:S"`, `"power:P"`, `"log"`.
    pub fn parse(name: &str) -> Result<Self> {
        let bad = Error::InvalidArgument;
        match name.split_once(':') {
            None => match name {
                "affine" => Ok(WeightFunction::Affine),
                "linear" => Ok(WeightFunction::Linear),
                "log" => Ok(WeightFunction::Log),
                other => Err(bad(format!("unknown weight function `{other}`"))),
            },
            Some(("gevrey", s)) => {
                let s: f64 = s
                    .parse()
                    .map_err(|_| bad(format!("bad gevrey index `{s}`")))?;
                if !(s > 0.0) {
                    return Err(bad("gevrey index must be > 0".into()));
                }
                Ok(WeightFunction::Gevrey { s })
            }
            Some(("power", p)) => {
                let p: f64 = p
                    .parse()
                    .map_err(|_| bad(format!("bad power exponent `{p}`")))?;
                if !(p > 0.0) {
                    return Err(bad("power exponent must be > 0".into()));
                }
                Ok(WeightFunction::Power { p })
            }
            Some((other, _)) => Err(bad(format!("unknown weight function `{other}`"))),
        }
    }
}

/// A strictly increasing positive sequence `{rho_n}` with gaps of at least 1,
/// the finite prefix of a sequence diverging to infinity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSequence {
    rhos: Vec<f64>,
    /// True when the prefix came from a construction that can always append
    /// further terms (for a finite spectrum the tail conditions eventually
    /// become vacuous, so the recursion never stalls).
    extendable: bool,
}

impl GapSequence {
    pub fn new(rhos: Vec<f64>, extendable: bool) -> Result<Self> {
        if rhos.is_empty() {
            return Err(Error::InvalidArgument("gap sequence is empty".into()));
        }
        if !(rhos[0] > 0.0) {
            return Err(Error::InvalidArgument(
                "gap sequence terms must be positive".into(),
            ));
        }
        if rhos.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite {
                context: "gap sequence".into(),
            });
        }
        if rhos.windows(2).any(|w| w[1] < w[0] + 1.0 - 1e-9) {
            return Err(Error::InvalidArgument(
                "gap sequence must increase by at least 1 per term".into(),
            ));
        }
        Ok(GapSequence { rhos, extendable })
    }

    pub fn len(&self) -> usize {
        self.rhos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhos.is_empty()
    }

    pub fn rho(&self, n: usize) -> f64 {
        self.rhos[n]
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn last(&self) -> f64 {
        *self.rhos.last().expect("nonempty")
    }

    pub fn extendable(&self) -> bool {
        self.extendable
    }

    /// Every other term starting at `offset` (0 = even-indexed subsequence).
    pub fn every_other(&self, offset: usize) -> Result<GapSequence> {
        GapSequence::new(
            self.rhos.iter().skip(offset).step_by(2).cloned().collect(),
            self.extendable,
        )
    }
}

impl<'de> Deserialize<'de> for GapSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            rhos: Vec<f64>,
            extendable: bool,
        }
        let raw = Raw::deserialize(deserializer)?;
        GapSequence::new(raw.rhos, raw.extendable).map_err(serde::de::Error::custom)
    }
}

/// `sum_k lambda_k^{4 alpha} u_k^2 exp(r phi(lambda_k))`, accumulated in log
/// domain. The result stays representable as long as each term's *logarithm*
/// fits in a double.
pub fn gevrey_norm_sq(
    spec: &Spectrum,
    u: &CoefficientVector,
    phi: &WeightFunction,
    r: f64,
    alpha: f64,
) -> Result<LogSum> {
    spec.check_len(u)?;
    if !(r > 0.0) {
        return Err(Error::InvalidArgument("gevrey norm requires r > 0".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument("alpha must be >= 0".into()));
    }
    weighted_tail(spec, u, phi, r, alpha, 0)
}

/// Log-domain sum over modes starting at index `from`.
pub(crate) fn weighted_tail(
    spec: &Spectrum,
    u: &CoefficientVector,
    phi: &WeightFunction,
    r: f64,
    alpha: f64,
    from: usize,
) -> Result<LogSum> {
    let mut acc = LogSum::ZERO;
    for (l, c) in spec.lambdas()[from..].iter().zip(&u.coeffs()[from..]) {
        if *c == 0.0 {
            continue;
        }
        // ln(lambda^{4 alpha} u^2 e^{r phi}) = 4 alpha ln lambda + 2 ln|u| + r phi.
        let power_ln = if alpha == 0.0 { 0.0 } else { 4.0 * alpha * l.ln() };
        let ln_term = power_ln + 2.0 * c.abs().ln() + r * phi.eval(*l);
        if ln_term.is_nan() {
            return Err(Error::NonFinite {
                context: format!("weighted term at lambda = {l}"),
            });
        }
        acc.add_ln_term(ln_term);
    }
    Ok(acc)
}

/// Log-domain sum of `lambda_k^{4 alpha} u_k^2 exp(r phi(lambda_k))` over
/// the modes with `lambda_k > threshold`.
pub fn weighted_tail_above(
    spec: &Spectrum,
    u: &CoefficientVector,
    phi: &WeightFunction,
    r: f64,
    alpha: f64,
    threshold: f64,
) -> Result<LogSum> {
    spec.check_len(u)?;
    weighted_tail(spec, u, phi, r, alpha, spec.first_above(threshold))
}

/// One gap-space tail check: is
/// `sum_{lambda_k > rho_n} lambda_k^{4 alpha} u_k^2 exp(rho_n^beta phi)` at
/// most `rho_n`?
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipEntry {
    pub n: usize,
    pub rho: f64,
    /// Natural log of the tail; `None` when the tail is exactly zero.
    pub log_tail: Option<f64>,
    pub pass: bool,
    /// True when no eigenvalue exceeds `rho_n`, so the check holds because
    /// of the truncation rather than the data.
    pub vacuous: bool,
}

/// Per-sequence membership report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipReport {
    pub alpha: f64,
    pub beta: f64,
    /// Entries for every `n` with a nonempty tail.
    pub entries: Vec<MembershipEntry>,
    /// All `n >= vacuous_from` have empty tails (pass by truncation).
    pub vacuous_from: Option<usize>,
    /// Length of the sequence prefix the check covered.
    pub checked: usize,
    pub all_pass: bool,
}

/// Checks the gap-space tail condition for each term of `rho`.
pub fn gm_membership(
    spec: &Spectrum,
    u: &CoefficientVector,
    phi: &WeightFunction,
    rho: &GapSequence,
    alpha: f64,
    beta: f64,
) -> Result<MembershipReport> {
    spec.check_len(u)?;
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument("beta must be >= 0".into()));
    }
    let mut entries = Vec::new();
    let mut vacuous_from = None;
    let mut all_pass = true;
    for n in 0..rho.len() {
        let rho_n = rho.rho(n);
        let from = spec.first_above(rho_n);
        if from == spec.len() {
            // rho_n clears the whole spectrum; so does every later term.
            vacuous_from = Some(n);
            break;
        }
        let r = rho_n.powf(beta);
        let tail = weighted_tail(spec, u, phi, r, alpha, from)?;
        let pass = tail.at_most(rho_n);
        all_pass &= pass;
        entries.push(MembershipEntry {
            n,
            rho: rho_n,
            log_tail: if tail.is_zero() {
                None
            } else {
                Some(tail.ln())
            },
            pass,
            vacuous: false,
        });
    }
    Ok(MembershipReport {
        alpha,
        beta,
        entries,
        vacuous_from,
        checked: rho.len(),
        all_pass,
    })
}

/// Grid-certified constant for the strictly hyperbolic compatibility
/// condition: the smallest `Lambda` with
/// `sigma omega(1/sigma) <= Lambda phi(sigma)` over the grid.
pub fn lambda_for_strict(
    omega: &crate::modulus::ContinuityModulus,
    phi: &WeightFunction,
    sigma_grid: &[f64],
) -> Result<f64> {
    let mut best = 0.0f64;
    for &s in sigma_grid.iter().filter(|s| **s > 0.0) {
        let ratio = s * omega.eval(1.0 / s) / phi.eval(s);
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                context: format!("strict compatibility ratio at sigma = {s}"),
            });
        }
        best = best.max(ratio);
    }
    Ok(best)
}

/// Grid-certified constant for the weakly hyperbolic compatibility
/// condition: the smallest `Lambda` with
/// `sigma <= Lambda phi(sigma / sqrt(omega(1/sigma)))` over the grid.
pub fn lambda_for_weak(
    omega: &crate::modulus::ContinuityModulus,
    phi: &WeightFunction,
    sigma_grid: &[f64],
) -> Result<f64> {
    let mut best = 0.0f64;
    for &s in sigma_grid.iter().filter(|s| **s > 0.0) {
        let w = omega.eval(1.0 / s);
        let ratio = s / phi.eval(s / w.sqrt());
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                context: format!("weak compatibility ratio at sigma = {s}"),
            });
        }
        best = best.max(ratio);
    }
    Ok(best)
}

/// The default grid for the compatibility estimators.
pub fn default_sigma_grid() -> Vec<f64> {
    crate::modulus::log_grid(1e-6, 1e6, 1000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modulus::ContinuityModulus;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_term_norm_is_exp() {
        let spec = Spectrum::new(vec![1.0]).unwrap();
        let u = CoefficientVector::new(vec![1.0]);
        let n = gevrey_norm_sq(&spec, &u, &WeightFunction::Linear, 1.0, 0.0).unwrap();
        assert_relative_eq!(n.value(), std::f64::consts::E, max_relative = 1e-12);
    }

    #[test]
    fn zero_vector_has_zero_norm() {
        let spec = Spectrum::new(vec![1.0, 2.0]).unwrap();
        let u = CoefficientVector::zeros(2);
        let n = gevrey_norm_sq(&spec, &u, &WeightFunction::Affine, 2.0, 0.75).unwrap();
        assert!(n.is_zero());
    }

    #[test]
    fn log_domain_matches_naive_summation() {
        let spec = Spectrum::new(vec![1.0, 2.0]).unwrap();
        let u = CoefficientVector::new(vec![1.0, 1.0]);
        let n = gevrey_norm_sq(&spec, &u, &WeightFunction::Linear, 2.0, 0.25).unwrap();
        let naive = 1.0 * (2.0f64).exp() + 2.0 * (4.0f64).exp();
        assert_relative_eq!(n.value(), naive, max_relative = 1e-12);
    }

    #[test]
    fn huge_weights_stay_representable() {
        // beta = 3-style weight: r = rho^3 = 1000, phi affine up to 33
        // puts single-term exponents past 3e4 without overflow.
        let spec = Spectrum::interval_laplacian(32);
        let u = CoefficientVector::new(vec![1e-3; 32]);
        let n = gevrey_norm_sq(&spec, &u, &WeightFunction::Affine, 1000.0, 0.75).unwrap();
        assert!(n.is_representable());
        assert!(n.ln() > 1e4);
        assert!(!n.value().is_finite());
    }

    #[test]
    fn membership_trivial_when_supported_below_rho0() {
        let spec = Spectrum::new(vec![1.0, 2.0, 3.0]).unwrap();
        let u = CoefficientVector::new(vec![1.0, 2.0, 3.0]);
        let rho = GapSequence::new(vec![4.0, 5.0, 6.0], true).unwrap();
        let rep = gm_membership(&spec, &u, &WeightFunction::Affine, &rho, 0.75, 2.0).unwrap();
        assert!(rep.all_pass);
        assert_eq!(rep.vacuous_from, Some(0));
        assert!(rep.entries.is_empty());
    }

    #[test]
    fn membership_single_high_mode_fails() {
        // lambda = 10, u = 1, rho_0 = 2, beta = 1, phi linear:
        // tail_0 = 10^{4 alpha} e^{20} > 2.
        let spec = Spectrum::new(vec![10.0]).unwrap();
        let u = CoefficientVector::new(vec![1.0]);
        let rho = GapSequence::new(vec![2.0, 30.0], true).unwrap();
        let rep = gm_membership(&spec, &u, &WeightFunction::Linear, &rho, 0.75, 1.0).unwrap();
        assert!(!rep.all_pass);
        assert_eq!(rep.entries.len(), 1);
        let e = &rep.entries[0];
        assert!(!e.pass && !e.vacuous);
        assert_relative_eq!(
            e.log_tail.unwrap(),
            3.0 * 10f64.ln() + 20.0,
            max_relative = 1e-12
        );
        assert_eq!(rep.vacuous_from, Some(1));
    }

    #[test]
    fn lambda_strict_examples() {
        let grid = default_sigma_grid();
        // omega = id, phi = 1 + sigma: sup 1/(1+sigma) -> 1 as sigma -> 0.
        let l = lambda_for_strict(&ContinuityModulus::Lipschitz, &WeightFunction::Affine, &grid)
            .unwrap();
        assert_relative_eq!(l, 1.0, max_relative = 1e-5);
        // omega = x^a, phi = (1+sigma)^{1-a}: ratio stays below 1.
        let a = 0.5;
        let l = lambda_for_strict(
            &ContinuityModulus::hoelder(a).unwrap(),
            &WeightFunction::Power { p: 1.0 - a },
            &grid,
        )
        .unwrap();
        assert!(l <= 1.0 + 1e-12, "Lambda = {l}");
    }

    #[test]
    fn lambda_weak_bounded_for_matched_pair() {
        let grid = default_sigma_grid();
        // omega = id: condition reads sigma <= Lambda phi(sigma^{3/2});
        // phi = (1+s)^{2/3} keeps the ratio at most 1.
        let l = lambda_for_weak(
            &ContinuityModulus::Lipschitz,
            &WeightFunction::Power { p: 2.0 / 3.0 },
            &grid,
        )
        .unwrap();
        assert!(l <= 1.0 + 1e-9 && l > 0.9, "Lambda = {l}");
    }

    #[test]
    fn degenerate_single_point_grid() {
        let l = lambda_for_weak(
            &ContinuityModulus::Lipschitz,
            &WeightFunction::Affine,
            &[1.0],
        )
        .unwrap();
        // sigma = 1: omega(1) = 1, ratio = 1 / phi(1) = 1/2.
        assert_relative_eq!(l, 0.5, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn norm_monotone_in_r_and_alpha(
            r1 in 0.1f64..5.0, dr in 0.0f64..5.0,
            a1 in 0.0f64..1.5, da in 0.0f64..1.5,
            coeffs in prop::collection::vec(-2.0f64..2.0, 6),
        ) {
            // Spectra with lambda_k >= 1 make the norm monotone in alpha too.
            let spec = Spectrum::interval_laplacian(6);
            let u = CoefficientVector::new(coeffs);
            let phi = WeightFunction::Affine;
            let base = gevrey_norm_sq(&spec, &u, &phi, r1, a1).unwrap();
            let more_r = gevrey_norm_sq(&spec, &u, &phi, r1 + dr, a1).unwrap();
            let more_a = gevrey_norm_sq(&spec, &u, &phi, r1, a1 + da).unwrap();
            prop_assert!(more_r.ln() >= base.ln() - 1e-12);
            prop_assert!(more_a.ln() >= base.ln() - 1e-12);
        }

        #[test]
        fn log_domain_agrees_with_naive_when_finite(
            r in 0.1f64..3.0,
            alpha in 0.0f64..1.0,
            coeffs in prop::collection::vec(-2.0f64..2.0, 5),
        ) {
            let spec = Spectrum::interval_laplacian(5);
            let u = CoefficientVector::new(coeffs.clone());
            let phi = WeightFunction::Affine;
            let naive: f64 = spec
                .lambdas()
                .iter()
                .zip(&coeffs)
                .map(|(l, c)| l.powf(4.0 * alpha) * c * c * (r * phi.eval(*l)).exp())
                .sum();
            prop_assume!(naive.is_finite());
            let log_based = gevrey_norm_sq(&spec, &u, &phi, r, alpha).unwrap().value();
            if naive == 0.0 {
                prop_assert!(log_based == 0.0);
            } else {
                prop_assert!((log_based - naive).abs() <= 1e-12 * naive);
            }
        }
    }
}
