//! Numerical replay of the a-priori energy estimates.
//!
//! For gap data the global bound rests on a chain of explicit constants, a
//! chosen sequence term `rho_n`, and per-mode energy inequalities for the
//! mollified linearization. This module computes the constants from their
//! closed-form definitions, selects `n`, scans the coupling
//! `<A^{3/4}u, A^{1/4}u'>` for threshold crossings, and checks the per-mode
//! differential and integrated inequalities along a simulated trajectory.
//! The expected outcome for certified data is that the threshold is never
//! reached on `[0, T]`.
//!
//! Two regimes:
//! - strict (`m >= nu > 0`): mollification scale `eps_k = 1/lambda_k`;
//! - weak (`m >= 0`): the mollified coefficient is shifted by `omega(eps)`
//!   and `eps_k = h^{-1}(1/lambda_k)` for `h(s) = s sqrt(omega(s))`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    c_trace, integrate, CubicHermite, DriftStats, EventSpec, IntegrateOptions, Nonlinearity,
    RunStatus, Trajectory,
};
use crate::error::{Error, Result};
use crate::modulus::{
    estimate_gamma0, mollify, ContinuityModulus, KernelShape, MollifierKernel, SampledFunction,
    DEFAULT_QUADRATURE_ORDER,
};
use crate::spaces::{
    default_sigma_grid, lambda_for_strict, lambda_for_weak, weighted_tail, GapSequence,
    WeightFunction,
};
use crate::spectrum::{Spectrum, StatePair};

/// Constants of the strictly hyperbolic estimate chain.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StrictConstants {
    pub nu: f64,
    /// `max m` over the invariant region `[0, H(0)/nu]`.
    pub mu: f64,
    pub gamma1: f64,
    pub h1: f64,
    pub gamma2: f64,
    pub hamiltonian0: f64,
    pub coupling0: f64,
}

/// Constants of the weakly hyperbolic estimate chain.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeakConstants {
    pub gamma3: f64,
    pub gamma4: f64,
    pub gamma5: f64,
    pub h2: f64,
    pub gamma6: f64,
    pub hamiltonian0: f64,
    pub coupling0: f64,
    pub u0_norm: f64,
}

/// The sequence term selected by [`pick_n`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChosenRho {
    pub n: usize,
    pub rho: f64,
}

/// `nu, mu, gamma1, H1, gamma2` from their defining formulas.
///
/// `mu` is a grid maximum of `m` over `[0, H(0)/nu]`;
/// `gamma1 = max(1, mu) max(1, 1/nu)`;
/// `H1 = max(|coupling(0)| + 1, (1 + 1/nu) H(0) + 2 gamma1 + 1)`;
/// `gamma2 = gamma0 L Lambda (2 H1 + 1)(1/nu + 1/sqrt(nu))`.
pub fn constants_strict(
    spec: &Spectrum,
    pair: &StatePair,
    m: &Nonlinearity,
    lambda: f64,
    gamma0: f64,
) -> Result<StrictConstants> {
    let nu = m.nu();
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument(
            "nonlinearity has nu = 0; use the weak path".into(),
        ));
    }
    let hamiltonian0 = crate::dynamics::hamiltonian(spec, m, &pair.u0, &pair.u1)?;
    let sigma_max = hamiltonian0 / nu;
    let grid_points = 4096;
    let mut mu = f64::NEG_INFINITY;
    for j in 0..=grid_points {
        let sigma = sigma_max * j as f64 / grid_points as f64;
        mu = mu.max(m.m(sigma));
    }
    let gamma1 = mu.max(1.0) * (1.0 / nu).max(1.0);
    let coupling0 = spec.coupling(&pair.u0, &pair.u1)?;
    let h1 = (coupling0.abs() + 1.0).max((1.0 + 1.0 / nu) * hamiltonian0 + 2.0 * gamma1 + 1.0);
    let (lipschitz, _) = m.continuity();
    let gamma2 = gamma0 * lipschitz * lambda * (2.0 * h1 + 1.0) * (1.0 / nu + 1.0 / nu.sqrt());
    Ok(StrictConstants {
        nu,
        mu,
        gamma1,
        h1,
        gamma2,
        hamiltonian0,
        coupling0,
    })
}

/// `gamma3..gamma6, H2` from their defining formulas. `traj` must cover
/// `[0, t_end/2]`; its coefficient monitor feeds the `max c` term of
/// `gamma4`, and the modulus term is `omega` at `h^{-1}(1)`.
pub fn constants_weak(
    spec: &Spectrum,
    pair: &StatePair,
    m: &Nonlinearity,
    lambda: f64,
    gamma0: f64,
    traj: &Trajectory,
    t_end: f64,
) -> Result<WeakConstants> {
    let (lipschitz, omega) = m.continuity();
    let omega1 = omega.eval(1.0);
    if !(omega1 > 0.0) {
        return Err(Error::InvalidArgument("omega(1) must be positive".into()));
    }
    let half = t_end / 2.0;
    if traj.duration() < half * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "trajectory covers [0, {}], need [0, {half}]",
            traj.duration()
        )));
    }
    let gamma3 = 1.0 + 1.0 / omega1;
    let max_c_half = traj
        .times()
        .iter()
        .zip(&traj.monitors().c)
        .filter(|(t, _)| **t <= half * (1.0 + 1e-12))
        .map(|(_, c)| *c)
        .fold(f64::NEG_INFINITY, f64::max);
    // omega is increasing, so max{omega(s) : s sqrt(omega(s)) <= 1} sits at
    // the boundary h(s) = 1.
    let sigma_star = h_inverse(&omega, 1.0)?;
    let gamma4 = max_c_half + omega.eval(sigma_star);
    let gamma5 = gamma3 * (1.0 + gamma4) * (lambda + 1.0);
    let hamiltonian0 = crate::dynamics::hamiltonian(spec, m, &pair.u0, &pair.u1)?;
    let coupling0 = spec.coupling(&pair.u0, &pair.u1)?;
    let u0_norm = pair.u0.norm_sq().sqrt();
    let h2 = (coupling0.abs() + 1.0).max((u0_norm + 1.0) * hamiltonian0.sqrt() + gamma5 + 1.0);
    let gamma6 = 1.0 + gamma0 * lipschitz * (2.0 * h2 + 1.0);
    Ok(WeakConstants {
        gamma3,
        gamma4,
        gamma5,
        h2,
        gamma6,
        hamiltonian0,
        coupling0,
        u0_norm,
    })
}

/// Inverts `h(sigma) = sigma sqrt(omega(sigma))` by bisection on an
/// auto-expanded bracket, to ~1e-13 relative accuracy.
pub fn h_inverse(omega: &ContinuityModulus, y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::InvalidArgument(
            "h_inverse needs a finite y > 0".into(),
        ));
    }
    let h = |sigma: f64| sigma * omega.eval(sigma).sqrt();
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    let mut guard = 0;
    while h(hi) < y {
        hi *= 2.0;
        guard += 1;
        if guard > 1100 {
            return Err(Error::BracketFailure {
                context: "h_inverse".into(),
                detail: format!("h({hi}) still below {y}; omega may vanish"),
            });
        }
    }
    guard = 0;
    while h(lo) > y {
        lo /= 2.0;
        guard += 1;
        if guard > 1100 {
            return Err(Error::BracketFailure {
                context: "h_inverse".into(),
                detail: format!("h({lo}) still above {y} toward 0"),
            });
        }
    }
    while hi - lo > 1e-13 * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if h(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The constraint family for [`pick_n`].
#[derive(Debug, Clone)]
pub enum PickConstraint<'a> {
    /// `rho_n >= max(gamma2 T, 1)`.
    Strict { gamma2: f64, t_end: f64 },
    /// `rho_n >= 1`, `sqrt(rho_n) >= T sqrt(H(0))`,
    /// `sqrt(rho_n) >= 4 gamma6 Lambda T`, `rho_n >= 2/(T sqrt(omega(T/2)))`.
    Weak {
        gamma6: f64,
        lambda: f64,
        t_end: f64,
        omega: &'a ContinuityModulus,
        hamiltonian0: f64,
    },
}

impl PickConstraint<'_> {
    /// `(name, lower bound on rho)` for each inequality.
    fn requirements(&self) -> Vec<(String, f64)> {
        match self {
            PickConstraint::Strict { gamma2, t_end } => vec![
                ("rho >= 1".into(), 1.0),
                ("rho >= gamma2*T".into(), gamma2 * t_end),
            ],
            PickConstraint::Weak {
                gamma6,
                lambda,
                t_end,
                omega,
                hamiltonian0,
            } => {
                let w_half = omega.eval(t_end / 2.0);
                vec![
                    ("rho >= 1".into(), 1.0),
                    (
                        "sqrt(rho) >= T*sqrt(H0)".into(),
                        t_end * t_end * hamiltonian0,
                    ),
                    (
                        "sqrt(rho) >= 4*gamma6*Lambda*T".into(),
                        (4.0 * gamma6 * lambda * t_end).powi(2),
                    ),
                    (
                        "rho >= 2/(T*sqrt(omega(T/2)))".into(),
                        2.0 / (t_end * w_half.sqrt()),
                    ),
                ]
            }
        }
    }
}

/// Smallest stored index satisfying every inequality of the constraint.
/// When the prefix is exhausted the error names the binding constraint.
pub fn pick_n(rho: &GapSequence, constraint: &PickConstraint<'_>) -> Result<ChosenRho> {
    let reqs = constraint.requirements();
    let mut required = 0.0f64;
    let mut binding = String::new();
    for (name, bound) in &reqs {
        if !bound.is_finite() {
            return Err(Error::NonFinite {
                context: format!("pick_n requirement {name}"),
            });
        }
        if *bound > required {
            required = *bound;
            binding = name.clone();
        }
    }
    for n in 0..rho.len() {
        if rho.rho(n) >= required {
            return Ok(ChosenRho { n, rho: rho.rho(n) });
        }
    }
    Err(Error::ExtendSequence {
        required_rho: required,
        binding,
        last_rho: rho.last(),
    })
}

/// Outcome of a coupling threshold scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdScan {
    /// The coupling stays strictly below the level on the whole trajectory
    /// (the theorem's predicted outcome for gap data).
    Never { level: f64, max_abs_coupling: f64 },
    CrossedAt { level: f64, t: f64 },
}

impl ThresholdScan {
    pub fn is_never(&self) -> bool {
        matches!(self, ThresholdScan::Never { .. })
    }

    /// The scan's time cap: crossing time, or `t_end` when never crossed.
    pub fn cap(&self, t_end: f64) -> f64 {
        match self {
            ThresholdScan::Never { .. } => t_end,
            ThresholdScan::CrossedAt { t, .. } => t.min(t_end),
        }
    }
}

/// First time `|coupling|` reaches `level` along the trajectory.
///
/// If the integrator already refined an event at this level its time is
/// reused. Otherwise the scan interpolates the coupling monitor with a cubic
/// Hermite per step (its exact derivative is available from the snapshots)
/// and bisects; accuracy is then interpolation-limited.
pub fn threshold_scan(traj: &Trajectory, level: f64) -> ThresholdScan {
    if let Some(ev) = traj.event() {
        if (ev.level - level).abs() <= 1e-12 * level.abs().max(1.0) {
            return ThresholdScan::CrossedAt { level, t: ev.t };
        }
    }
    let coupling = &traj.monitors().coupling;
    if coupling[0].abs() >= level {
        return ThresholdScan::CrossedAt { level, t: traj.time(0) };
    }
    let mut max_abs = coupling[0].abs();
    for i in 0..traj.len() - 1 {
        let herm = CubicHermite {
            t0: traj.time(i),
            t1: traj.time(i + 1),
            y0: coupling[i],
            y1: coupling[i + 1],
            d0: traj.coupling_rate(i),
            d1: traj.coupling_rate(i + 1),
        };
        let (_, interior_max) = herm.max_abs();
        max_abs = max_abs.max(interior_max);
        let end_hit = coupling[i + 1].abs() >= level;
        if end_hit || interior_max >= level {
            // Bracket the first crossing inside [t_i, t_hit].
            let t_hit = if end_hit {
                traj.time(i + 1)
            } else {
                herm.max_abs().0
            };
            let mut lo = traj.time(i);
            let mut hi = t_hit;
            if herm.eval(hi).abs() < level {
                // tangential interpolant brush without an actual crossing
                continue;
            }
            while hi - lo > 1e-12 * hi.abs().max(1.0) {
                let mid = 0.5 * (lo + hi);
                if herm.eval(mid).abs() >= level {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return ThresholdScan::CrossedAt { level, t: hi };
        }
    }
    ThresholdScan::Never {
        level,
        max_abs_coupling: max_abs,
    }
}

/// Result of one per-mode energy check.
#[derive(Debug, Clone, Serialize)]
pub struct ModeCheck {
    pub k: usize,
    pub lambda: f64,
    /// Mollification scale used for this mode.
    pub eps: f64,
    /// The compatibility inequality for this eigenvalue.
    pub lambda_condition_ok: bool,
    pub lambda_lhs: f64,
    pub lambda_rhs: f64,
    /// Pointwise bounds on the mollified coefficient
    /// (`nu <= c_eps <= mu` strict; `c_eps >= omega(eps)` weak).
    pub coefficient_bounds_ok: bool,
    /// Finite-difference differential inequality with discretization slack.
    pub derivative_ok: bool,
    pub derivative_max_excess: f64,
    /// Integrated (log-domain) bound at every snapshot.
    pub integrated_ok: bool,
    pub integrated_max_log_excess: f64,
    pub pass: bool,
}

/// Shared context for the strict per-mode check.
pub struct StrictModeParams<'a> {
    pub constants: &'a StrictConstants,
    pub chosen: ChosenRho,
    pub lambda: f64,
    pub omega: &'a ContinuityModulus,
    pub phi: &'a WeightFunction,
    pub trace: &'a SampledFunction,
    pub kernel: &'a MollifierKernel,
    /// Check bounds on `[0, t_cap]` (`min(S, T)`).
    pub t_cap: f64,
    pub tol: f64,
}

/// Shared context for the weak per-mode check.
pub struct WeakModeParams<'a> {
    pub constants: &'a WeakConstants,
    pub chosen: ChosenRho,
    pub lambda: f64,
    pub omega: &'a ContinuityModulus,
    pub phi: &'a WeightFunction,
    pub trace: &'a SampledFunction,
    pub kernel: &'a MollifierKernel,
    pub initial: &'a StatePair,
    pub t_cap: f64,
    pub tol: f64,
}

/// Mode energies and the finite-difference/integrated machinery shared by
/// both regimes.
struct ModeSeries {
    times: Vec<f64>,
    energy: Vec<f64>,
}

fn mode_series(
    traj: &Trajectory,
    k: usize,
    t_cap: f64,
    c_eps_at: &dyn Fn(f64) -> Result<f64>,
    bounds: &mut dyn FnMut(f64) -> bool,
) -> Result<(ModeSeries, bool)> {
    let lambda = traj.spectrum().lambda(k);
    let mut times = Vec::new();
    let mut energy = Vec::new();
    let mut bounds_ok = true;
    for i in 0..traj.len() {
        let t = traj.time(i);
        if t > t_cap * (1.0 + 1e-12) {
            break;
        }
        let ce = c_eps_at(t)?;
        bounds_ok &= bounds(ce);
        let u = traj.u(i)[k];
        let v = traj.v(i)[k];
        energy.push(v * v + lambda * lambda * ce * u * u);
        times.push(t);
    }
    Ok((ModeSeries { times, energy }, bounds_ok))
}

/// One-sided finite-difference check `E' <= rate * E + slack`.
///
/// The slack covers three error sources: integrator noise in the snapshots
/// (propagated at ~tol relative), interpolation noise of the coefficient
/// trace, and the O(h^2) truncation of the central difference whose scale
/// grows like the third time-derivative of the mode energy, (1+lambda)^3.
fn derivative_check(series: &ModeSeries, lambda: f64, rate: f64, tol: f64) -> (bool, f64) {
    let n = series.times.len();
    if n < 3 {
        return (true, 0.0);
    }
    let mut max_excess = f64::NEG_INFINITY;
    for i in 1..n - 1 {
        let span = series.times[i + 1] - series.times[i - 1];
        let h_loc = (series.times[i + 1] - series.times[i])
            .max(series.times[i] - series.times[i - 1]);
        let fd = (series.energy[i + 1] - series.energy[i - 1]) / span;
        let e_win = series.energy[i - 1]
            .max(series.energy[i])
            .max(series.energy[i + 1]);
        let curvature = (1.0 + lambda).powi(3) * e_win;
        let slack = 10.0 * (tol + h_loc * h_loc * curvature) + 200.0 * tol * e_win / span;
        let rhs = rate * series.energy[i] + slack;
        max_excess = max_excess.max(fd - rhs);
    }
    (max_excess <= 0.0, max_excess)
}

/// Strict per-mode check for `lambda_k > rho_n`:
/// (a) `lambda omega(1/lambda) <= Lambda phi(lambda)`;
/// (b) finite-difference `E' <= gamma2 rho_n phi(lambda) E` plus slack;
/// (c) `E(t) <= E(0) exp(rho_n^2 phi(lambda))` for `t <= t_cap`, compared in
///     log domain.
pub fn mode_energy_check_strict(
    traj: &Trajectory,
    k: usize,
    p: &StrictModeParams<'_>,
) -> Result<ModeCheck> {
    let lambda = traj.spectrum().lambda(k);
    if !(lambda > p.chosen.rho) {
        return Err(Error::InvalidArgument(format!(
            "mode check applies to lambda > rho_n; lambda_{k} = {lambda} <= {}",
            p.chosen.rho
        )));
    }
    let eps = 1.0 / lambda;
    let lambda_lhs = lambda * p.omega.eval(eps);
    let lambda_rhs = p.lambda * p.phi.eval(lambda);
    let lambda_condition_ok = lambda_lhs <= lambda_rhs * (1.0 + 1e-12);

    let (nu, mu) = (p.constants.nu, p.constants.mu);
    let guard = 1e-9 * (1.0 + mu);
    let c_eps_at = |t: f64| mollify(p.trace, p.kernel, eps, t);
    let mut bounds = |ce: f64| ce >= nu - guard && ce <= mu + guard;
    let (series, coefficient_bounds_ok) = mode_series(traj, k, p.t_cap, &c_eps_at, &mut bounds)?;

    let rate = p.constants.gamma2 * p.chosen.rho * p.phi.eval(lambda);
    let (derivative_ok, derivative_max_excess) = derivative_check(&series, lambda, rate, p.tol);

    // (c) in log domain: ln E(t) <= ln E(0) + rho^2 phi(lambda).
    let budget = p.chosen.rho * p.chosen.rho * p.phi.eval(lambda);
    let (integrated_ok, integrated_max_log_excess) = integrated_check(&series, budget);

    let pass = lambda_condition_ok && coefficient_bounds_ok && derivative_ok && integrated_ok;
    Ok(ModeCheck {
        k,
        lambda,
        eps,
        lambda_condition_ok,
        lambda_lhs,
        lambda_rhs,
        coefficient_bounds_ok,
        derivative_ok,
        derivative_max_excess,
        integrated_ok,
        integrated_max_log_excess,
        pass,
    })
}

fn integrated_check(series: &ModeSeries, log_budget: f64) -> (bool, f64) {
    let e0 = series.energy[0];
    let mut max_excess = f64::NEG_INFINITY;
    for &e in &series.energy {
        let excess = if e0 == 0.0 {
            if e == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        } else if e == 0.0 {
            f64::NEG_INFINITY
        } else {
            e.ln() - e0.ln() - log_budget
        };
        max_excess = max_excess.max(excess);
    }
    (max_excess <= 0.0, max_excess)
}

/// Weak per-mode check for `lambda_k > rho_n`:
/// (a) `lambda sqrt(omega(eps_k)) = 1/eps_k <= Lambda phi(lambda)` with
///     `eps_k = h^{-1}(1/lambda)`;
/// (b) finite-difference `E' <= 2 gamma6 rho^{5/2} Lambda phi(lambda) E`;
/// (c) `|u_k'|^2 + lambda^2 |u_k|^2 <=
///      gamma5 (|u1_k|^2 + lambda^2 |u0_k|^2) exp(rho^3 phi(lambda))`
///     at every snapshot, in log domain.
pub fn mode_energy_check_weak(
    traj: &Trajectory,
    k: usize,
    p: &WeakModeParams<'_>,
) -> Result<ModeCheck> {
    let lambda = traj.spectrum().lambda(k);
    if !(lambda > p.chosen.rho) {
        return Err(Error::InvalidArgument(format!(
            "mode check applies to lambda > rho_n; lambda_{k} = {lambda} <= {}",
            p.chosen.rho
        )));
    }
    let eps = h_inverse(p.omega, 1.0 / lambda)?;
    let w_eps = p.omega.eval(eps);
    let lambda_lhs = 1.0 / eps;
    let lambda_rhs = p.lambda * p.phi.eval(lambda);
    // Consistency of the inversion and the compatibility bound.
    let lambda_condition_ok = (lambda * w_eps.sqrt() * eps - 1.0).abs() <= 1e-9
        && lambda_lhs <= lambda_rhs * (1.0 + 1e-12);

    let c_eps_at = |t: f64| Ok(w_eps + mollify(p.trace, p.kernel, eps, t)?);
    let mut bounds = |ce: f64| ce >= w_eps * (1.0 - 1e-12);
    let (series, coefficient_bounds_ok) = mode_series(traj, k, p.t_cap, &c_eps_at, &mut bounds)?;

    let rate =
        2.0 * p.constants.gamma6 * p.chosen.rho.powf(2.5) * p.lambda * p.phi.eval(lambda);
    let (derivative_ok, derivative_max_excess) = derivative_check(&series, lambda, rate, p.tol);

    // (c): unweighted final bound against the initial data, in log domain.
    let u0k = p.initial.u0.coeffs()[k];
    let u1k = p.initial.u1.coeffs()[k];
    let initial_sq = u1k * u1k + lambda * lambda * u0k * u0k;
    let log_budget = p.chosen.rho.powi(3) * p.phi.eval(lambda);
    let mut max_excess = f64::NEG_INFINITY;
    let mut integrated_ok = true;
    for (i, &t) in series.times.iter().enumerate() {
        let _ = t;
        let u = traj.u(i)[k];
        let v = traj.v(i)[k];
        let unweighted = v * v + lambda * lambda * u * u;
        let excess = if initial_sq == 0.0 {
            if unweighted == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        } else if unweighted == 0.0 {
            f64::NEG_INFINITY
        } else {
            unweighted.ln() - (p.constants.gamma5 * initial_sq).ln() - log_budget
        };
        max_excess = max_excess.max(excess);
        integrated_ok &= excess <= 0.0;
    }

    let pass = lambda_condition_ok && coefficient_bounds_ok && derivative_ok && integrated_ok;
    Ok(ModeCheck {
        k,
        lambda,
        eps,
        lambda_condition_ok,
        lambda_lhs,
        lambda_rhs,
        coefficient_bounds_ok,
        derivative_ok,
        derivative_max_excess,
        integrated_ok,
        integrated_max_log_excess: max_excess,
        pass,
    })
}

/// Regime-specific inputs of [`tail_budget_check`].
#[derive(Debug, Clone, Copy)]
pub enum TailBudget {
    Strict {
        gamma1: f64,
        h1: f64,
        nu: f64,
        hamiltonian0: f64,
    },
    Weak {
        gamma5: f64,
        h2: f64,
        hamiltonian0: f64,
        u0_norm: f64,
        t_end: f64,
    },
}

/// Tail and low-mode budget report.
#[derive(Debug, Clone, Serialize)]
pub struct TailBudgetReport {
    /// Data-side tails at the chosen rho (the membership inequalities the
    /// whole chain rests on): `sum_{lambda > rho} lambda^3 u0^2 e^{rho^beta phi} <= rho`
    /// and the `lambda u1^2` analog.
    pub data_tail_34_ok: bool,
    pub data_tail_14_ok: bool,
    /// `sum_{lambda > rho} lambda (v^2 + lambda^2 u^2) <= 2 gamma rho` at
    /// every snapshot in `[0, t_cap]`.
    pub high_mode_ok: bool,
    pub high_mode_max: f64,
    pub high_mode_budget: f64,
    /// The regime's low-mode bound at every snapshot.
    pub low_mode_ok: bool,
    pub low_mode_max: f64,
    pub low_mode_budget: f64,
    /// `level - max |coupling|`: positive margin means the contradiction
    /// level was never approached.
    pub margin: f64,
    pub max_abs_coupling: f64,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// Verifies the weighted tail sums and low-mode bounds along a trajectory,
/// plus the data-side membership inequalities at the chosen term.
pub fn tail_budget_check(
    traj: &Trajectory,
    initial: &StatePair,
    phi: &WeightFunction,
    beta: f64,
    chosen: &ChosenRho,
    budget: &TailBudget,
    t_cap: f64,
) -> Result<TailBudgetReport> {
    let spec = traj.spectrum();
    let rho = chosen.rho;
    let from = spec.first_above(rho);
    let r = rho.powf(beta);
    let tail34 = weighted_tail(spec, &initial.u0, phi, r, 0.75, from)?;
    let tail14 = weighted_tail(spec, &initial.u1, phi, r, 0.25, from)?;
    let data_tail_34_ok = tail34.at_most(rho);
    let data_tail_14_ok = tail14.at_most(rho);

    let guard = 1.0 + 1e-9;
    let (high_budget, low_budget, level) = match budget {
        TailBudget::Strict {
            gamma1,
            h1,
            nu,
            hamiltonian0,
        } => (
            2.0 * gamma1 * rho,
            rho * (hamiltonian0 + hamiltonian0 / nu),
            h1 * rho,
        ),
        TailBudget::Weak {
            gamma5,
            h2,
            hamiltonian0,
            u0_norm,
            ..
        } => (
            2.0 * gamma5 * rho,
            rho.powf(2.5) * (u0_norm + 1.0) * hamiltonian0.sqrt(),
            h2 * rho.powf(2.5),
        ),
    };

    let lambdas = spec.lambdas();
    let mut high_max = 0.0f64;
    let mut low_max = 0.0f64;
    let mut max_coupling = 0.0f64;
    let mut violations = Vec::new();
    for i in 0..traj.len() {
        let t = traj.time(i);
        if t > t_cap * (1.0 + 1e-12) {
            break;
        }
        let u = traj.u(i);
        let v = traj.v(i);
        max_coupling = max_coupling.max(traj.monitors().coupling[i].abs());
        let mut high = 0.0;
        for j in from..lambdas.len() {
            let l = lambdas[j];
            high += l * (v[j] * v[j] + l * l * u[j] * u[j]);
        }
        high_max = high_max.max(high);
        if high > high_budget * guard && violations.len() < 8 {
            violations.push(format!("high-mode sum {high} > {high_budget} at t = {t}"));
        }
        let low = match budget {
            TailBudget::Strict { .. } => {
                let mut s = 0.0;
                for j in 0..from {
                    let l = lambdas[j];
                    s += l * (v[j] * v[j] + l * l * u[j] * u[j]);
                }
                s
            }
            TailBudget::Weak {
                hamiltonian0,
                u0_norm,
                t_end,
                ..
            } => {
                // the chain also needs |u(t)| <= |u0| + T sqrt(H0)
                let unorm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let ubound = u0_norm + t_end * hamiltonian0.sqrt();
                if unorm > ubound * guard && violations.len() < 8 {
                    violations.push(format!("|u(t)| = {unorm} > {ubound} at t = {t}"));
                }
                let mut s = 0.0;
                for j in 0..from {
                    let l = lambdas[j];
                    s += l * l * u[j] * v[j];
                }
                s.abs()
            }
        };
        low_max = low_max.max(low);
        if low > low_budget * guard && violations.len() < 8 {
            violations.push(format!("low-mode sum {low} > {low_budget} at t = {t}"));
        }
    }

    let high_mode_ok = high_max <= high_budget * guard;
    let low_mode_ok = low_max <= low_budget * guard && violations.is_empty();
    let pass = data_tail_34_ok && data_tail_14_ok && high_mode_ok && low_mode_ok;
    Ok(TailBudgetReport {
        data_tail_34_ok,
        data_tail_14_ok,
        high_mode_ok,
        high_mode_max: high_max,
        high_mode_budget: high_budget,
        low_mode_ok,
        low_mode_max: low_max,
        low_mode_budget: low_budget,
        margin: level - max_coupling,
        max_abs_coupling: max_coupling,
        violations,
        pass,
    })
}

/// Driver options shared by both certification paths.
#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub t_end: f64,
    pub tol: f64,
    pub max_step: Option<f64>,
    /// Resample step of the coefficient trace (default span / 4096).
    pub trace_step: Option<f64>,
    pub kernel_shape: KernelShape,
    pub kernel_order: usize,
    /// Override the grid-estimated compatibility constant.
    pub lambda_override: Option<f64>,
}

impl CertifyOptions {
    pub fn new(t_end: f64, tol: f64) -> Self {
        CertifyOptions {
            t_end,
            tol,
            max_step: None,
            trace_step: None,
            kernel_shape: KernelShape::Bump,
            kernel_order: DEFAULT_QUADRATURE_ORDER,
            lambda_override: None,
        }
    }
}

/// The membership exponent of the strict theorem.
pub const STRICT_BETA: f64 = 2.0;
/// The membership exponent of the weak theorem.
pub const WEAK_BETA: f64 = 3.0;

/// Full strict-regime certification report.
#[derive(Debug, Clone, Serialize)]
pub struct StrictReport {
    pub constants: StrictConstants,
    pub chosen: ChosenRho,
    pub lambda: f64,
    pub gamma0: f64,
    pub lipschitz: f64,
    pub omega: String,
    pub phi: String,
    pub threshold: ThresholdScan,
    pub t_cap: f64,
    pub modes: Vec<ModeCheck>,
    pub checked_modes: usize,
    pub tail: TailBudgetReport,
    pub drift: DriftStats,
    pub completed: bool,
    pub all_pass: bool,
}

/// Full weak-regime certification report.
#[derive(Debug, Clone, Serialize)]
pub struct WeakReport {
    pub constants: WeakConstants,
    pub chosen: ChosenRho,
    pub lambda: f64,
    pub gamma0: f64,
    pub lipschitz: f64,
    pub omega: String,
    pub phi: String,
    pub threshold: ThresholdScan,
    pub t_cap: f64,
    pub modes: Vec<ModeCheck>,
    pub checked_modes: usize,
    pub tail: TailBudgetReport,
    pub drift: DriftStats,
    pub completed: bool,
    pub all_pass: bool,
}

fn trace_step_for(opts: &CertifyOptions, span: f64) -> f64 {
    opts.trace_step.unwrap_or(span / 4096.0)
}

/// Replays the strictly hyperbolic estimate chain for `pair` with the gap
/// sequence `rho` (built at exponent [`STRICT_BETA`]).
pub fn certify_strict(
    spec: &Spectrum,
    pair: &StatePair,
    m: &Nonlinearity,
    phi: &WeightFunction,
    rho: &GapSequence,
    opts: &CertifyOptions,
) -> Result<StrictReport> {
    let (lipschitz, omega) = m.continuity();
    let lambda = match opts.lambda_override {
        Some(l) => l,
        None => lambda_for_strict(&omega, phi, &default_sigma_grid())?,
    };
    let kernel = MollifierKernel::new(opts.kernel_shape, opts.kernel_order)?;
    let gamma0 = estimate_gamma0(&kernel);
    let constants = constants_strict(spec, pair, m, lambda, gamma0)?;
    let chosen = pick_n(
        rho,
        &PickConstraint::Strict {
            gamma2: constants.gamma2,
            t_end: opts.t_end,
        },
    )?;
    let level = constants.h1 * chosen.rho;

    let mut iopts = IntegrateOptions::new(opts.t_end, opts.tol);
    iopts.max_step = opts.max_step;
    iopts.event = Some(EventSpec {
        coupling_level: level,
    });
    let run = integrate(spec, m, pair, &iopts)?;
    let traj = &run.trajectory;

    let threshold = threshold_scan(traj, level);
    let t_cap = threshold.cap(opts.t_end).min(traj.duration());
    let trace = c_trace(traj, m, trace_step_for(opts, t_cap), Some(t_cap))?;

    let mode_indices: Vec<usize> = (spec.first_above(chosen.rho)..spec.len()).collect();
    let params = StrictModeParams {
        constants: &constants,
        chosen,
        lambda,
        omega: &omega,
        phi,
        trace: &trace,
        kernel: &kernel,
        t_cap,
        tol: opts.tol,
    };
    let modes: Vec<ModeCheck> = mode_indices
        .par_iter()
        .map(|&k| mode_energy_check_strict(traj, k, &params))
        .collect::<Result<_>>()?;

    let tail = tail_budget_check(
        traj,
        pair,
        phi,
        STRICT_BETA,
        &chosen,
        &TailBudget::Strict {
            gamma1: constants.gamma1,
            h1: constants.h1,
            nu: constants.nu,
            hamiltonian0: constants.hamiltonian0,
        },
        t_cap,
    )?;

    let completed = matches!(run.status, RunStatus::Completed);
    let all_pass =
        completed && threshold.is_never() && modes.iter().all(|c| c.pass) && tail.pass;
    Ok(StrictReport {
        constants,
        chosen,
        lambda,
        gamma0,
        lipschitz,
        omega: omega.name(),
        phi: phi.name(),
        threshold,
        t_cap,
        checked_modes: modes.len(),
        modes,
        tail,
        drift: run.drift,
        completed,
        all_pass,
    })
}

/// Replays the weakly hyperbolic estimate chain for `pair` with the gap
/// sequence `rho` (built at exponent [`WEAK_BETA`]).
pub fn certify_weak(
    spec: &Spectrum,
    pair: &StatePair,
    m: &Nonlinearity,
    phi: &WeightFunction,
    rho: &GapSequence,
    opts: &CertifyOptions,
) -> Result<WeakReport> {
    let (lipschitz, omega) = m.continuity();
    let lambda = match opts.lambda_override {
        Some(l) => l,
        None => lambda_for_weak(&omega, phi, &default_sigma_grid())?,
    };
    let kernel = MollifierKernel::new(opts.kernel_shape, opts.kernel_order)?;
    let gamma0 = estimate_gamma0(&kernel);

    // The weak constants need the trajectory (max of c over [0, T/2]), so
    // integrate first; the threshold scan then runs on the stored monitors.
    let mut iopts = IntegrateOptions::new(opts.t_end, opts.tol);
    iopts.max_step = opts.max_step;
    let run = integrate(spec, m, pair, &iopts)?;
    let traj = &run.trajectory;

    let constants = constants_weak(spec, pair, m, lambda, gamma0, traj, opts.t_end)?;
    let chosen = pick_n(
        rho,
        &PickConstraint::Weak {
            gamma6: constants.gamma6,
            lambda,
            t_end: opts.t_end,
            omega: &omega,
            hamiltonian0: constants.hamiltonian0,
        },
    )?;
    let level = constants.h2 * chosen.rho.powf(2.5);

    let threshold = threshold_scan(traj, level);
    let t_cap = threshold.cap(opts.t_end).min(traj.duration());
    let trace = c_trace(traj, m, trace_step_for(opts, t_cap), Some(t_cap))?;

    let mode_indices: Vec<usize> = (spec.first_above(chosen.rho)..spec.len()).collect();
    let params = WeakModeParams {
        constants: &constants,
        chosen,
        lambda,
        omega: &omega,
        phi,
        trace: &trace,
        kernel: &kernel,
        initial: pair,
        t_cap,
        tol: opts.tol,
    };
    let modes: Vec<ModeCheck> = mode_indices
        .par_iter()
        .map(|&k| mode_energy_check_weak(traj, k, &params))
        .collect::<Result<_>>()?;

    let tail = tail_budget_check(
        traj,
        pair,
        phi,
        WEAK_BETA,
        &chosen,
        &TailBudget::Weak {
            gamma5: constants.gamma5,
            h2: constants.h2,
            hamiltonian0: constants.hamiltonian0,
            u0_norm: constants.u0_norm,
            t_end: opts.t_end,
        },
        t_cap,
    )?;

    let completed = matches!(run.status, RunStatus::Completed);
    let all_pass =
        completed && threshold.is_never() && modes.iter().all(|c| c.pass) && tail.pass;
    Ok(WeakReport {
        constants,
        chosen,
        lambda,
        gamma0,
        lipschitz,
        omega: omega.name(),
        phi: phi.name(),
        threshold,
        t_cap,
        checked_modes: modes.len(),
        modes,
        tail,
        drift: run.drift,
        completed,
        all_pass,
    })
}
