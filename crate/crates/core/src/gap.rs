//! Constructive spectral-gap decomposition.
//!
//! Given data `(u0, u1)` with finite weighted norms for every `r`, a
//! recursion produces a gap sequence `{rho_n}`: each next term is pushed far
//! enough out that the two data tails beyond it, weighted at the *previous*
//! term, fall below that previous term. Splitting the spectrum into the
//! resulting bands and giving alternate bands to two components yields two
//! states, each of which passes the gap-space membership test with every
//! other term of the sequence. Their sum reconstructs the data exactly,
//! coefficient by coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{
    gm_membership, weighted_tail, GapSequence, MembershipReport, WeightFunction,
};
use crate::spectrum::{CoefficientVector, Spectrum, StatePair};

/// Knobs for the sequence recursion.
#[derive(Debug, Clone, Serialize)]
pub struct RhoBuildOptions {
    /// `rho_0`. The recursion's chain of inequalities needs every term
    /// positive, so the seed must be > 0 (default 1).
    pub rho_seed: f64,
    /// Grid step for the search for the next admissible term (default 1).
    pub grid_step: f64,
    /// Number of terms to build.
    pub n_max: usize,
    /// Cap on grid-search iterations per term; with a finite spectrum the
    /// tails vanish once the candidate clears `lambda_max`, so the cap only
    /// guards pathological weights.
    pub search_cap: usize,
}

impl Default for RhoBuildOptions {
    fn default() -> Self {
        RhoBuildOptions {
            rho_seed: 1.0,
            grid_step: 1.0,
            n_max: 64,
            search_cap: 10_000_000,
        }
    }
}

/// Builds the recursive gap sequence for `pair`.
///
/// `rho_{n+1}` is the smallest `rho_n + 1 + j * grid_step` (integer `j >= 0`)
/// such that both
///
/// ```text
/// sum_{lambda_k >= rho_{n+1}} u0_k^2 lambda_k^3 exp(rho_n^beta phi(lambda_k)) <= rho_n
/// sum_{lambda_k >= rho_{n+1}} u1_k^2 lambda_k   exp(rho_n^beta phi(lambda_k)) <= rho_n
/// ```
///
/// hold; tails are evaluated in log domain.
pub fn build_rho_sequence(
    spec: &Spectrum,
    pair: &StatePair,
    phi: &WeightFunction,
    beta: f64,
    opts: &RhoBuildOptions,
) -> Result<GapSequence> {
    spec.check_len(&pair.u0)?;
    if !(opts.rho_seed > 0.0) {
        return Err(Error::InvalidArgument("rho_seed must be > 0".into()));
    }
    if !(opts.grid_step > 0.0) {
        return Err(Error::InvalidArgument("grid_step must be > 0".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument("beta must be >= 0".into()));
    }
    if opts.n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be >= 1".into()));
    }

    let mut rhos = Vec::with_capacity(opts.n_max);
    rhos.push(opts.rho_seed);
    while rhos.len() < opts.n_max {
        let n = rhos.len() - 1;
        let rho_n = rhos[n];
        let r = rho_n.powf(beta);
        let mut candidate = rho_n + 1.0;
        let mut admissible = None;
        for _ in 0..=opts.search_cap {
            if tails_admissible(spec, pair, phi, r, rho_n, candidate)? {
                admissible = Some(candidate);
                break;
            }
            candidate += opts.grid_step;
        }
        match admissible {
            Some(next) => rhos.push(next),
            None => {
                return Err(Error::NoAdmissibleRho {
                    n: n + 1,
                    searched_up_to: candidate,
                })
            }
        }
    }
    GapSequence::new(rhos, true)
}

/// Both tail conditions at a candidate cut, compared in log domain.
fn tails_admissible(
    spec: &Spectrum,
    pair: &StatePair,
    phi: &WeightFunction,
    r: f64,
    budget: f64,
    cut: f64,
) -> Result<bool> {
    let from = spec.first_at_or_above(cut);
    let t0 = weighted_tail(spec, &pair.u0, phi, r, 0.75, from)?;
    if !t0.at_most(budget) {
        return Ok(false);
    }
    let t1 = weighted_tail(spec, &pair.u1, phi, r, 0.25, from)?;
    Ok(t1.at_most(budget))
}

/// Splits `pair` into banded components `(ubar, uhat)`.
///
/// The sequence terms cut the axis into consecutive bands
/// `[rho_i, rho_{i+1})`; the band index runs over the sequence and is
/// independent of the mode index. Modes in odd-start bands
/// `[rho_{2n+1}, rho_{2n+2})` go to `ubar`, modes in even-start bands to
/// `uhat`, and modes below `rho_0` also go to `uhat` (they sit below every
/// term of the odd subsequence, so they never enter its tails). Modes at or
/// beyond the last term stay in the last band. Each coefficient lands in
/// exactly one component, so `ubar + uhat` reconstructs `pair` bit-exactly.
pub fn split(spec: &Spectrum, pair: &StatePair, rho: &GapSequence) -> Result<(StatePair, StatePair)> {
    spec.check_len(&pair.u0)?;
    let k = spec.len();
    let mut bar = StatePair::zeros(k);
    let mut hat = StatePair::zeros(k);
    let mut bar0 = vec![0.0; k];
    let mut bar1 = vec![0.0; k];
    let mut hat0 = vec![0.0; k];
    let mut hat1 = vec![0.0; k];
    for (i, &l) in spec.lambdas().iter().enumerate() {
        // Largest band index with rho_i <= lambda; modes below rho_0 get
        // band "-1", which goes to uhat.
        let band = rho.rhos().partition_point(|r| *r <= l);
        let to_bar = band >= 1 && (band - 1) % 2 == 1;
        if to_bar {
            bar0[i] = pair.u0.coeffs()[i];
            bar1[i] = pair.u1.coeffs()[i];
        } else {
            hat0[i] = pair.u0.coeffs()[i];
            hat1[i] = pair.u1.coeffs()[i];
        }
    }
    bar.u0 = CoefficientVector::new(bar0);
    bar.u1 = CoefficientVector::new(bar1);
    hat.u0 = CoefficientVector::new(hat0);
    hat.u1 = CoefficientVector::new(hat1);
    Ok((bar, hat))
}

/// Membership reports for both components of a decomposition, at the
/// regularity pair (3/4 for positions, 1/4 for velocities).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionMembership {
    pub ubar_u0: MembershipReport,
    pub ubar_u1: MembershipReport,
    pub uhat_u0: MembershipReport,
    pub uhat_u1: MembershipReport,
}

impl DecompositionMembership {
    pub fn all_pass(&self) -> bool {
        self.ubar_u0.all_pass
            && self.ubar_u1.all_pass
            && self.uhat_u0.all_pass
            && self.uhat_u1.all_pass
    }
}

/// A certified decomposition: banded components, their sequences, and the
/// membership evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub ubar: StatePair,
    pub uhat: StatePair,
    /// The full recursion output; `rho_bar` and `rho_hat` are its even- and
    /// odd-indexed subsequences.
    pub rho_full: GapSequence,
    pub rho_bar: GapSequence,
    pub rho_hat: GapSequence,
    pub beta: f64,
    pub membership: DecompositionMembership,
    pub all_pass: bool,
}

/// Runs the full constructive decomposition and certifies both halves.
pub fn decompose(
    spec: &Spectrum,
    pair: &StatePair,
    phi: &WeightFunction,
    beta: f64,
    opts: &RhoBuildOptions,
) -> Result<Decomposition> {
    if opts.n_max < 2 {
        return Err(Error::InvalidArgument(
            "decomposition needs n_max >= 2".into(),
        ));
    }
    let rho_full = build_rho_sequence(spec, pair, phi, beta, opts)?;
    let (ubar, uhat) = split(spec, pair, &rho_full)?;
    let rho_bar = rho_full.every_other(0)?;
    let rho_hat = rho_full.every_other(1)?;
    let membership = DecompositionMembership {
        ubar_u0: gm_membership(spec, &ubar.u0, phi, &rho_bar, 0.75, beta)?,
        ubar_u1: gm_membership(spec, &ubar.u1, phi, &rho_bar, 0.25, beta)?,
        uhat_u0: gm_membership(spec, &uhat.u0, phi, &rho_hat, 0.75, beta)?,
        uhat_u1: gm_membership(spec, &uhat.u1, phi, &rho_hat, 0.25, beta)?,
    };
    let all_pass = membership.all_pass();
    Ok(Decomposition {
        ubar,
        uhat,
        rho_full,
        rho_bar,
        rho_hat,
        beta,
        membership,
        all_pass,
    })
}

/// On-disk form of a decomposition: the context (eigenvalues, weight name,
/// exponent) plus the full [`Decomposition`]. Written by the decompose
/// front-end and accepted back by the certification front-ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionCertificate {
    pub lambdas: Vec<f64>,
    pub phi: String,
    pub decomposition: Decomposition,
}

impl DecompositionCertificate {
    pub fn new(spec: &Spectrum, phi: &WeightFunction, decomposition: Decomposition) -> Self {
        DecompositionCertificate {
            lambdas: spec.lambdas().to_vec(),
            phi: phi.name(),
            decomposition,
        }
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::new(self.lambdas.clone())
    }

    pub fn phi(&self) -> Result<WeightFunction> {
        WeightFunction::parse(&self.phi)
    }
}
