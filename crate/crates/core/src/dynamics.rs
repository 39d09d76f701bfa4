//! Galerkin dynamics for the nonlocal wave system.
//!
//! In eigencoordinates the problem is the ODE system
//!
//! ```text
//! u_k' = v_k,    v_k' = -m(sum_j lambda_j^2 u_j^2) lambda_k^2 u_k,
//! ```
//!
//! driven by the single nonlocal coefficient `c(t) = m(|A^{1/2}u|^2)`. The
//! integrator is an explicit embedded Runge-Kutta 5(4) pair (Dormand-Prince
//! coefficients) with PI step control; explicitness keeps the nonlocal sum to
//! one evaluation per stage, and the conserved Hamiltonian
//! `|u'|^2 + M(|A^{1/2}u|^2)` is monitored rather than enforced.

use std::io::Write;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::modulus::{ContinuityModulus, SampledFunction};
use crate::spectrum::{coupling_slices, CoefficientVector, Spectrum, StatePair};

/// The nonlinearity `m`, its hyperbolicity floor `nu`, its antiderivative
/// `M`, and the regularity data `(L, omega)` the certification replays need.
#[derive(Clone)]
pub struct Nonlinearity {
    kind: MKind,
}

#[derive(Clone)]
enum MKind {
    /// `m = 1` (linear wave equation).
    Linear,
    /// `m(sigma) = 1 + sigma`.
    Kirchhoff,
    /// `m(sigma) = sigma`.
    Degenerate,
    /// `m(sigma) = sigma^a`, `0 < a < 1`.
    HoelderDegenerate { a: f64 },
    Custom {
        name: String,
        m: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        nu: f64,
        lipschitz: f64,
        omega: ContinuityModulus,
        quad_tol: f64,
        /// Prefix integrals of `m` at integer multiples of a fixed stride,
        /// extended in order so cached values do not depend on call history.
        cache: Arc<Mutex<Vec<f64>>>,
    },
}

const CUSTOM_M_STRIDE: f64 = 1.0;

impl Nonlinearity {
    pub fn linear() -> Self {
        Nonlinearity { kind: MKind::Linear }
    }

    pub fn kirchhoff() -> Self {
        Nonlinearity {
            kind: MKind::Kirchhoff,
        }
    }

    pub fn degenerate() -> Self {
        Nonlinearity {
            kind: MKind::Degenerate,
        }
    }

    pub fn hoelder_degenerate(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidArgument(
                "hoelder-degenerate exponent must satisfy 0 < a < 1".into(),
            ));
        }
        Ok(Nonlinearity {
            kind: MKind::HoelderDegenerate { a },
        })
    }

    /// A user-supplied `m` with declared floor and `omega`-continuity data.
    /// The antiderivative is computed by adaptive Simpson quadrature at
    /// `quad_tol` (slave it to a tenth of the integrator tolerance).
    pub fn custom(
        name: impl Into<String>,
        m: impl Fn(f64) -> f64 + Send + Sync + 'static,
        nu: f64,
        lipschitz: f64,
        omega: ContinuityModulus,
        quad_tol: f64,
    ) -> Result<Self> {
        if !(nu >= 0.0) || !(lipschitz >= 0.0) || !(quad_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "custom nonlinearity needs nu >= 0, L >= 0, quad_tol > 0".into(),
            ));
        }
        Ok(Nonlinearity {
            kind: MKind::Custom {
                name: name.into(),
                m: Arc::new(m),
                nu,
                lipschitz,
                omega,
                quad_tol,
                cache: Arc::new(Mutex::new(vec![0.0])),
            },
        })
    }

    /// Parses `"linear"`, `"kirchhoff"`, `"degenerate"`,
    /// `"hoelder-degenerate:A"`.
    pub fn parse(name: &str) -> Result<Self> {
        match name.split_once(':') {
            None => match name {
                "linear" => Ok(Nonlinearity::linear()),
                "kirchhoff" => Ok(Nonlinearity::kirchhoff()),
                "degenerate" => Ok(Nonlinearity::degenerate()),
                other => Err(Error::InvalidArgument(format!(
                    "unknown nonlinearity `{other}`"
                ))),
            },
            Some(("hoelder-degenerate", a)) => {
                let a: f64 = a.parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad hoelder-degenerate exponent `{a}`"))
                })?;
                Nonlinearity::hoelder_degenerate(a)
            }
            Some((other, _)) => Err(Error::InvalidArgument(format!(
                "unknown nonlinearity `{other}`"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            MKind::Linear => "linear".into(),
            MKind::Kirchhoff => "kirchhoff".into(),
            MKind::Degenerate => "degenerate".into(),
            MKind::HoelderDegenerate { a } => format!("hoelder-degenerate:{a}"),
            MKind::Custom { name, .. } => name.clone(),
        }
    }

    pub fn m(&self, sigma: f64) -> f64 {
        debug_assert!(sigma >= 0.0);
        match &self.kind {
            MKind::Linear => 1.0,
            MKind::Kirchhoff => 1.0 + sigma,
            MKind::Degenerate => sigma,
            MKind::HoelderDegenerate { a } => sigma.powf(*a),
            MKind::Custom { m, .. } => m(sigma),
        }
    }

    /// Strict-hyperbolicity floor: `m(sigma) >= nu` for all `sigma`.
    pub fn nu(&self) -> f64 {
        match &self.kind {
            MKind::Linear | MKind::Kirchhoff => 1.0,
            MKind::Degenerate | MKind::HoelderDegenerate { .. } => 0.0,
            MKind::Custom { nu, .. } => *nu,
        }
    }

    /// `omega`-continuity data: `|m(a) - m(b)| <= L omega(|a - b|)`.
    pub fn continuity(&self) -> (f64, ContinuityModulus) {
        match &self.kind {
            MKind::Linear => (0.0, ContinuityModulus::Lipschitz),
            MKind::Kirchhoff | MKind::Degenerate => (1.0, ContinuityModulus::Lipschitz),
            MKind::HoelderDegenerate { a } => (
                1.0,
                ContinuityModulus::Power { exponent: *a },
            ),
            MKind::Custom {
                lipschitz, omega, ..
            } => (*lipschitz, omega.clone()),
        }
    }

    /// `M(sigma) = Int_0^sigma m`; closed form for presets, cached adaptive
    /// Simpson otherwise.
    pub fn antiderivative(&self, sigma: f64) -> Result<f64> {
        debug_assert!(sigma >= 0.0);
        match &self.kind {
            MKind::Linear => Ok(sigma),
            MKind::Kirchhoff => Ok(sigma + 0.5 * sigma * sigma),
            MKind::Degenerate => Ok(0.5 * sigma * sigma),
            MKind::HoelderDegenerate { a } => Ok(sigma.powf(a + 1.0) / (a + 1.0)),
            MKind::Custom {
                m, quad_tol, cache, ..
            } => {
                let idx = (sigma / CUSTOM_M_STRIDE).floor() as usize;
                let base = {
                    let mut cp = cache.lock().expect("antiderivative cache poisoned");
                    while cp.len() <= idx {
                        let j = cp.len();
                        let lo = (j - 1) as f64 * CUSTOM_M_STRIDE;
                        let hi = j as f64 * CUSTOM_M_STRIDE;
                        let seg = adaptive_simpson(m.as_ref(), lo, hi, *quad_tol)?;
                        let prev = cp[j - 1];
                        cp.push(prev + seg);
                    }
                    cp[idx]
                };
                let lo = idx as f64 * CUSTOM_M_STRIDE;
                Ok(base + adaptive_simpson(m.as_ref(), lo, sigma, *quad_tol)?)
            }
        }
    }
}

impl std::fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name())
            .field("nu", &self.nu())
            .finish()
    }
}

/// Recursive adaptive Simpson quadrature.
fn adaptive_simpson(f: &(dyn Fn(f64) -> f64 + Send + Sync), a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &(dyn Fn(f64) -> f64 + Send + Sync),
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        if !flm.is_finite() || !frm.is_finite() {
            return Err(Error::NonFinite {
                context: "adaptive Simpson sample".into(),
            });
        }
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    if !fa.is_finite() || !fm.is_finite() || !fb.is_finite() {
        return Err(Error::NonFinite {
            context: "adaptive Simpson sample".into(),
        });
    }
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// The Galerkin right-hand side: `du = v`,
/// `dv_k = -m(sum lambda^2 u^2) lambda_k^2 u_k`.
pub fn rhs(
    spec: &Spectrum,
    m: &Nonlinearity,
    u: &CoefficientVector,
    v: &CoefficientVector,
) -> Result<(CoefficientVector, CoefficientVector)> {
    spec.check_len(u)?;
    spec.check_len(v)?;
    let k = spec.len();
    let mut y = Vec::with_capacity(2 * k);
    y.extend_from_slice(u.coeffs());
    y.extend_from_slice(v.coeffs());
    let mut dy = vec![0.0; 2 * k];
    eval_rhs(spec.lambdas(), m, &y, &mut dy)?;
    let dv = dy.split_off(k);
    Ok((CoefficientVector::new(dy), CoefficientVector::new(dv)))
}

fn eval_rhs(lambdas: &[f64], m: &Nonlinearity, y: &[f64], dy: &mut [f64]) -> Result<f64> {
    let k = lambdas.len();
    let (u, v) = y.split_at(k);
    let sigma: f64 = lambdas.iter().zip(u).map(|(l, x)| l * l * x * x).sum();
    let c = m.m(sigma);
    if !c.is_finite() {
        return Err(Error::NonFinite {
            context: format!("m({sigma})"),
        });
    }
    let (du, dv) = dy.split_at_mut(k);
    du.copy_from_slice(v);
    for i in 0..k {
        dv[i] = -c * lambdas[i] * lambdas[i] * u[i];
    }
    Ok(c)
}

/// `H = |u'|^2 + M(|A^{1/2}u|^2)`; constant along exact solutions.
pub fn hamiltonian(
    spec: &Spectrum,
    m: &Nonlinearity,
    u: &CoefficientVector,
    v: &CoefficientVector,
) -> Result<f64> {
    spec.check_len(u)?;
    spec.check_len(v)?;
    let sigma = spec.sobolev_norm_sq(u, 0.5)?;
    Ok(v.norm_sq() + m.antiderivative(sigma)?)
}

/// Detect the first time `|<A^{3/4}u, A^{1/4}u'>|` reaches a level.
#[derive(Debug, Clone, Copy)]
pub struct EventSpec {
    pub coupling_level: f64,
}

/// A detected threshold crossing, refined to ~1e-10 relative time accuracy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CouplingEvent {
    pub level: f64,
    pub t: f64,
}

/// Per-snapshot scalar monitors.
#[derive(Debug, Clone, Default)]
pub struct Monitors {
    pub hamiltonian: Vec<f64>,
    pub norm_a12_sq: Vec<f64>,
    pub c: Vec<f64>,
    pub coupling: Vec<f64>,
}

/// Time-ordered accepted-step snapshots of `(t, u, u')` plus monitors.
#[derive(Debug, Clone)]
pub struct Trajectory {
    spectrum: Spectrum,
    times: Vec<f64>,
    /// Flat `[u_1..u_K, v_1..v_K]` per snapshot.
    states: Vec<f64>,
    monitors: Monitors,
    event: Option<CouplingEvent>,
}

impl Trajectory {
    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().expect("nonempty trajectory")
    }

    pub fn u(&self, i: usize) -> &[f64] {
        let k = self.spectrum.len();
        &self.states[2 * k * i..2 * k * i + k]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        let k = self.spectrum.len();
        &self.states[2 * k * i + k..2 * k * (i + 1)]
    }

    pub fn monitors(&self) -> &Monitors {
        &self.monitors
    }

    pub fn event(&self) -> Option<CouplingEvent> {
        self.event
    }

    pub fn state_pair(&self, i: usize) -> StatePair {
        StatePair {
            u0: CoefficientVector::new(self.u(i).to_vec()),
            u1: CoefficientVector::new(self.v(i).to_vec()),
        }
    }

    pub fn final_state(&self) -> StatePair {
        self.state_pair(self.len() - 1)
    }

    /// Time derivative of the coupling at snapshot `i`:
    /// `sum lambda^2 v^2 - c(t_i) sum lambda^4 u^2`.
    pub fn coupling_rate(&self, i: usize) -> f64 {
        let lambdas = self.spectrum.lambdas();
        let u = self.u(i);
        let v = self.v(i);
        let mut kinetic = 0.0;
        let mut quartic = 0.0;
        for (j, l) in lambdas.iter().enumerate() {
            let l2 = l * l;
            kinetic += l2 * v[j] * v[j];
            quartic += l2 * l2 * u[j] * u[j];
        }
        kinetic - self.monitors.c[i] * quartic
    }

    /// RFC-4180 CSV export: `t,H,normA12,c,coupling`, optionally followed by
    /// per-mode columns `u1..uK,v1..vK`.
    pub fn write_csv<W: Write>(&self, mut w: W, per_mode: bool) -> std::io::Result<()> {
        let k = self.spectrum.len();
        write!(w, "t,H,normA12,c,coupling")?;
        if per_mode {
            for j in 1..=k {
                write!(w, ",u{j}")?;
            }
            for j in 1..=k {
                write!(w, ",v{j}")?;
            }
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(
                w,
                "{},{},{},{},{}",
                self.times[i],
                self.monitors.hamiltonian[i],
                self.monitors.norm_a12_sq[i],
                self.monitors.c[i],
                self.monitors.coupling[i]
            )?;
            if per_mode {
                for x in self.u(i) {
                    write!(w, ",{x}")?;
                }
                for x in self.v(i) {
                    write!(w, ",{x}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// How an integration ended.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Step size underflowed (stiffness or blow-up); the trajectory holds
    /// everything accepted up to `t`.
    Stalled { t: f64 },
}

/// Hamiltonian drift bookkeeping over a run.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DriftStats {
    pub initial_hamiltonian: f64,
    pub max_abs_drift: f64,
    pub max_rel_drift: f64,
}

/// Integration result: trajectory plus status and drift statistics.
#[derive(Debug, Clone)]
pub struct Integration {
    pub trajectory: Trajectory,
    pub status: RunStatus,
    pub drift: DriftStats,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

impl Integration {
    pub fn completed(&self) -> bool {
        matches!(self.status, RunStatus::Completed)
    }
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub tol: f64,
    /// Hard cap on the step size (useful to force dense snapshots).
    pub max_step: Option<f64>,
    pub initial_step: Option<f64>,
    pub event: Option<EventSpec>,
}

impl IntegrateOptions {
    pub fn new(t_end: f64, tol: f64) -> Self {
        IntegrateOptions {
            t_end,
            tol,
            max_step: None,
            initial_step: None,
            event: None,
        }
    }
}

// Dormand-Prince 5(4) tableau (the system is autonomous, so the c-nodes
// never appear explicitly).
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (row 7 of A; the pair is FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Error weights `b5 - b4`.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper<'a> {
    lambdas: &'a [f64],
    m: &'a Nonlinearity,
    tol: f64,
    stages: [Vec<f64>; 7],
    ytmp: Vec<f64>,
}

struct StepOutcome {
    y_new: Vec<f64>,
    /// Scaled RMS error estimate (accept iff <= 1).
    err: f64,
    /// `c = m(...)` at the step end (from the FSAL stage).
    c_end: f64,
}

impl<'a> Stepper<'a> {
    fn new(lambdas: &'a [f64], m: &'a Nonlinearity, tol: f64) -> Self {
        let n = 2 * lambdas.len();
        Stepper {
            lambdas,
            m,
            tol,
            stages: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
        }
    }

    /// One 5(4) step of size `h` from `y`; `k1` must hold `f(y)`.
    fn step(&mut self, y: &[f64], k1: &[f64], h: f64) -> Result<StepOutcome> {
        let n = y.len();
        self.stages[0].copy_from_slice(k1);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += a * self.stages[j][i];
                }
                self.ytmp[i] = y[i] + h * acc;
            }
            let (head, tail) = self.stages.split_at_mut(s);
            let _ = head; // stages[..s] already filled
            let c = eval_rhs(self.lambdas, self.m, &self.ytmp, &mut tail[0])?;
            if s == 6 {
                // stage 7 is f at the step end (FSAL)
                let mut y_new = vec![0.0; n];
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, b) in B5.iter().enumerate() {
                        if *b != 0.0 {
                            acc += b * self.stages[j][i];
                        }
                    }
                    y_new[i] = y[i] + h * acc;
                }
                debug_assert_eq!(&y_new, &self.ytmp);
                let mut err_sq = 0.0;
                for i in 0..n {
                    let mut e = 0.0;
                    for (j, w) in E.iter().enumerate() {
                        if *w != 0.0 {
                            e += w * self.stages[j][i];
                        }
                    }
                    let sc = self.tol + self.tol * y[i].abs().max(y_new[i].abs());
                    err_sq += (h * e / sc).powi(2);
                }
                let err = (err_sq / n as f64).sqrt();
                return Ok(StepOutcome {
                    y_new,
                    err,
                    c_end: c,
                });
            }
        }
        unreachable!()
    }

    /// Step-start derivative (also returns `c`).
    fn derivative(&self, y: &[f64], dy: &mut [f64]) -> Result<f64> {
        eval_rhs(self.lambdas, self.m, y, dy)
    }
}

/// Integrates the Galerkin system over `[0, t_end]` with adaptive steps,
/// recording every accepted step. Event detection locates the first time
/// `|coupling|` reaches `event.coupling_level`, refined by bisection with
/// partial Runge-Kutta steps.
pub fn integrate(
    spec: &Spectrum,
    m: &Nonlinearity,
    initial: &StatePair,
    opts: &IntegrateOptions,
) -> Result<Integration> {
    spec.check_len(&initial.u0)?;
    spec.check_len(&initial.u1)?;
    if !(opts.t_end > 0.0) || !opts.t_end.is_finite() {
        return Err(Error::InvalidArgument("t_end must be finite and > 0".into()));
    }
    if !(opts.tol > 0.0) || !opts.tol.is_finite() {
        return Err(Error::InvalidArgument("tol must be finite and > 0".into()));
    }
    if let Some(ms) = opts.max_step {
        if !(ms > 0.0) {
            return Err(Error::InvalidArgument("max_step must be > 0".into()));
        }
    }

    let k = spec.len();
    let n = 2 * k;
    let lambdas = spec.lambdas();
    let mut stepper = Stepper::new(lambdas, m, opts.tol);

    let mut y = Vec::with_capacity(n);
    y.extend_from_slice(initial.u0.coeffs());
    y.extend_from_slice(initial.u1.coeffs());
    let mut t = 0.0f64;

    let mut k1 = vec![0.0; n];
    let c0 = stepper.derivative(&y, &mut k1)?;

    let mut traj = Trajectory {
        spectrum: spec.clone(),
        times: Vec::new(),
        states: Vec::new(),
        monitors: Monitors::default(),
        event: None,
    };
    let record = |traj: &mut Trajectory, t: f64, y: &[f64], c: f64| -> Result<f64> {
        let (u, v) = y.split_at(k);
        let sigma: f64 = lambdas.iter().zip(u).map(|(l, x)| l * l * x * x).sum();
        let ham = v.iter().map(|x| x * x).sum::<f64>() + m.antiderivative(sigma)?;
        let coup = coupling_slices(lambdas, u, v);
        traj.times.push(t);
        traj.states.extend_from_slice(y);
        traj.monitors.hamiltonian.push(ham);
        traj.monitors.norm_a12_sq.push(sigma);
        traj.monitors.c.push(c);
        traj.monitors.coupling.push(coup);
        Ok(ham)
    };

    let h0_val = record(&mut traj, 0.0, &y, c0)?;
    let mut max_abs_drift = 0.0f64;

    // Immediate event at t = 0.
    let mut event_armed = opts.event;
    if let Some(ev) = event_armed {
        if traj.monitors.coupling[0].abs() >= ev.coupling_level {
            traj.event = Some(CouplingEvent {
                level: ev.coupling_level,
                t: 0.0,
            });
            event_armed = None;
        }
    }

    // Initial step heuristic.
    let mut h = match opts.initial_step {
        Some(h) => h,
        None => initial_step_guess(&y, &k1, opts.tol, opts.t_end),
    };
    if let Some(ms) = opts.max_step {
        h = h.min(ms);
    }
    h = h.min(opts.t_end);

    // Hairer-style PI controller state.
    let mut facold = 1e-4f64;
    let mut last_rejected = false;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut status = RunStatus::Completed;

    while t < opts.t_end {
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1e-3);
        if h < h_min {
            status = RunStatus::Stalled { t };
            break;
        }
        let mut h_step = h;
        if t + h_step >= opts.t_end {
            h_step = opts.t_end - t;
        }
        let out = stepper.step(&y, &k1, h_step)?;
        if out.err <= 1.0 {
            // accept
            let t_new = t + h_step;
            let prev_coupling = *traj.monitors.coupling.last().unwrap();
            let ham = record(&mut traj, t_new, &out.y_new, out.c_end)?;
            max_abs_drift = max_abs_drift.max((ham - h0_val).abs());

            if let Some(ev) = event_armed {
                let i1 = traj.len() - 1;
                let found = locate_event(
                    &mut stepper,
                    &y,
                    &k1,
                    t,
                    h_step,
                    prev_coupling,
                    traj.monitors.coupling[i1],
                    traj.coupling_rate(i1 - 1),
                    traj.coupling_rate(i1),
                    ev.coupling_level,
                    lambdas,
                )?;
                if let Some(te) = found {
                    traj.event = Some(CouplingEvent {
                        level: ev.coupling_level,
                        t: te,
                    });
                    event_armed = None;
                }
            }

            // FSAL: stage 7 of the accepted step is f(y_new).
            k1.copy_from_slice(&stepper.stages[6]);
            y = out.y_new;
            t = t_new;
            accepted += 1;

            let err = out.err.max(1e-10);
            let fac11 = err.powf(0.17);
            let mut fac = fac11 / facold.powf(0.04);
            fac = (fac / 0.9).clamp(0.2, 5.0);
            let mut h_new = h_step / fac;
            if last_rejected {
                h_new = h_new.min(h_step);
            }
            if let Some(ms) = opts.max_step {
                h_new = h_new.min(ms);
            }
            h = h_new;
            facold = err;
            last_rejected = false;
        } else {
            rejected += 1;
            let fac11 = out.err.powf(0.17);
            h = h_step / (fac11 / 0.9).min(5.0);
            last_rejected = true;
        }
    }

    let denom = h0_val.abs().max(1e-30);
    Ok(Integration {
        trajectory: traj,
        status,
        drift: DriftStats {
            initial_hamiltonian: h0_val,
            max_abs_drift,
            max_rel_drift: max_abs_drift / denom,
        },
        steps_accepted: accepted,
        steps_rejected: rejected,
    })
}

/// Step-size guess from the scaled norms of the state and its derivative.
fn initial_step_guess(y: &[f64], dy: &[f64], tol: f64, t_end: f64) -> f64 {
    let n = y.len() as f64;
    let sc = |v: &[f64], w: &[f64]| -> f64 {
        v.iter()
            .zip(w)
            .map(|(a, b)| (a / (tol + tol * b.abs())).powi(2))
            .sum::<f64>()
            .sqrt()
            / n.sqrt()
    };
    let d0 = sc(y, y);
    let d1 = sc(dy, y);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    (100.0 * h0).min(t_end).min(h0.max(1e-6) * 100.0).max(1e-10)
}

/// Cubic Hermite data for a scalar monitor over one step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CubicHermite {
    pub t0: f64,
    pub t1: f64,
    pub y0: f64,
    pub y1: f64,
    pub d0: f64,
    pub d1: f64,
}

impl CubicHermite {
    pub(crate) fn eval(&self, t: f64) -> f64 {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y0
            + (s3 - 2.0 * s2 + s) * h * self.d0
            + (-2.0 * s3 + 3.0 * s2) * self.y1
            + (s3 - s2) * h * self.d1
    }

    /// Interior critical points (roots of the derivative), in (t0, t1).
    pub(crate) fn critical_points(&self) -> Vec<f64> {
        let h = self.t1 - self.t0;
        // p'(s) = 6(s^2 - s)(y0 - y1)/h ... easier with monomial coefficients:
        // p(s) = a s^3 + b s^2 + c s + d in the normalized variable.
        let a = 2.0 * (self.y0 - self.y1) + h * (self.d0 + self.d1);
        let b = -3.0 * (self.y0 - self.y1) - h * (2.0 * self.d0 + self.d1);
        let c = h * self.d0;
        // roots of 3a s^2 + 2b s + c
        let mut out = Vec::new();
        let (qa, qb, qc) = (3.0 * a, 2.0 * b, c);
        if qa.abs() < 1e-300 {
            if qb.abs() > 1e-300 {
                out.push(-qc / qb);
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                out.push((-qb + sq) / (2.0 * qa));
                out.push((-qb - sq) / (2.0 * qa));
            }
        }
        out.retain(|s| *s > 0.0 && *s < 1.0);
        out.iter().map(|s| self.t0 + s * h).collect()
    }

    /// Location and value of the maximum of |p| over [t0, t1].
    pub(crate) fn max_abs(&self) -> (f64, f64) {
        let mut best_t = self.t0;
        let mut best = self.y0.abs();
        for t in std::iter::once(self.t1).chain(self.critical_points()) {
            let v = self.eval(t).abs();
            if v > best {
                best = v;
                best_t = t;
            }
        }
        (best_t, best)
    }
}

/// Finds the earliest time in `(t0, t0 + h]` where `|coupling| >= level`,
/// if any, by bisection with partial Runge-Kutta steps from the step start.
#[allow(clippy::too_many_arguments)]
fn locate_event(
    stepper: &mut Stepper<'_>,
    y0: &[f64],
    k1: &[f64],
    t0: f64,
    h: f64,
    c_start: f64,
    c_end: f64,
    rate_start: f64,
    rate_end: f64,
    level: f64,
    lambdas: &[f64],
) -> Result<Option<f64>> {
    let k = lambdas.len();
    let coupling_at = |stepper: &mut Stepper<'_>, tau: f64| -> Result<f64> {
        if tau <= 0.0 {
            return Ok(c_start);
        }
        let out = stepper.step(y0, k1, tau)?;
        let (u, v) = out.y_new.split_at(k);
        Ok(coupling_slices(lambdas, u, v))
    };
    let g_end = c_end.abs() - level;

    // Bracket: either the endpoint is past the level, or a tangential brush
    // suggested by the Hermite interpolant.
    let mut lo = 0.0f64;
    let mut hi = if g_end >= 0.0 {
        h
    } else {
        let herm = CubicHermite {
            t0,
            t1: t0 + h,
            y0: c_start,
            y1: c_end,
            d0: rate_start,
            d1: rate_end,
        };
        let (_, vmax) = herm.max_abs();
        if vmax < level {
            return Ok(None);
        }
        // Fine scan for a point actually past the level.
        let mut found = None;
        let scans = 64;
        for j in 1..=scans {
            let tau = h * j as f64 / scans as f64;
            if coupling_at(stepper, tau)?.abs() >= level {
                found = Some((h * (j - 1) as f64 / scans as f64, tau));
                break;
            }
        }
        match found {
            Some((a, b)) => {
                lo = a;
                b
            }
            None => return Ok(None), // interpolant overshoot, no real crossing
        }
    };

    // |coupling(lo)| < level <= |coupling(hi)|; refine to 1e-10 relative.
    let tol_t = 1e-10 * (t0 + h).abs().max(1.0);
    while hi - lo > tol_t {
        let mid = 0.5 * (lo + hi);
        if coupling_at(stepper, mid)?.abs() >= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(t0 + hi))
}

/// The coefficient trace `c(t) = m(|A^{1/2}u(t)|^2)`, resampled on a uniform
/// grid of the requested step. `|A^{1/2}u|^2` is interpolated linearly
/// between accepted steps and `m` applied afterwards, so the trace replays
/// the definition exactly at snapshot times. An optional `t_cap` restricts
/// the trace to `[0, t_cap]`.
pub fn c_trace(
    traj: &Trajectory,
    m: &Nonlinearity,
    step: f64,
    t_cap: Option<f64>,
) -> Result<SampledFunction> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument(
            "c_trace needs a trajectory with at least 2 snapshots".into(),
        ));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("c_trace step must be > 0".into()));
    }
    let span = match t_cap {
        Some(cap) => cap.min(traj.duration()),
        None => traj.duration(),
    };
    if !(span > 0.0) {
        return Err(Error::InvalidArgument("c_trace span must be > 0".into()));
    }
    let n = ((span / step).ceil() as usize + 1).max(2);
    let times = traj.times();
    let norms = &traj.monitors().norm_a12_sq;
    let mut idx = 0usize;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = span * i as f64 / (n - 1) as f64;
            while idx + 2 < times.len() && times[idx + 1] < t {
                idx += 1;
            }
            let (t0, t1) = (times[idx], times[idx + 1]);
            let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            let sigma = norms[idx] * (1.0 - w) + norms[idx + 1] * w;
            m.m(sigma.max(0.0))
        })
        .collect();
    SampledFunction::new(span, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn single_mode(lambda: f64, u0: f64, v0: f64) -> (Spectrum, StatePair) {
        (
            Spectrum::new(vec![lambda]).unwrap(),
            StatePair::new(
                CoefficientVector::new(vec![u0]),
                CoefficientVector::new(vec![v0]),
            )
            .unwrap(),
        )
    }

    #[test]
    fn rhs_linear_wave_spot_value() {
        let (spec, pair) = single_mode(2.0, 1.0, 0.0);
        let (du, dv) = rhs(&spec, &Nonlinearity::linear(), &pair.u0, &pair.u1).unwrap();
        assert_eq!(du.coeffs(), &[0.0]);
        assert_eq!(dv.coeffs(), &[-4.0]);
    }

    #[test]
    fn rhs_degenerate_rest_state() {
        let spec = Spectrum::new(vec![1.0, 2.0]).unwrap();
        let u = CoefficientVector::zeros(2);
        let v = CoefficientVector::zeros(2);
        let (_, dv) = rhs(&spec, &Nonlinearity::degenerate(), &u, &v).unwrap();
        assert_eq!(dv.coeffs(), &[0.0, 0.0]);
    }

    #[test]
    fn hamiltonian_closed_form() {
        // m = 1 + sigma: M(sigma) = sigma + sigma^2/2; H = 0 + M(1) = 1.5.
        let (spec, pair) = single_mode(1.0, 1.0, 0.0);
        let h = hamiltonian(&spec, &Nonlinearity::kirchhoff(), &pair.u0, &pair.u1).unwrap();
        assert_relative_eq!(h, 1.5);
        let zero = StatePair::zeros(1);
        let h0 = hamiltonian(&spec, &Nonlinearity::kirchhoff(), &zero.u0, &zero.u1).unwrap();
        assert_eq!(h0, 0.0);
    }

    #[test]
    fn custom_antiderivative_matches_closed_form() {
        let custom = Nonlinearity::custom(
            "affine",
            |s| 1.0 + s,
            1.0,
            1.0,
            ContinuityModulus::Lipschitz,
            1e-12,
        )
        .unwrap();
        for sigma in [0.0, 0.3, 1.0, 2.7, 9.4] {
            assert_relative_eq!(
                custom.antiderivative(sigma).unwrap(),
                sigma + 0.5 * sigma * sigma,
                max_relative = 1e-10
            );
        }
        // M(0) = 0 and M' = m by central differences.
        assert_eq!(custom.antiderivative(0.0).unwrap(), 0.0);
        let d = 1e-5;
        let fd = (custom.antiderivative(2.0 + d).unwrap()
            - custom.antiderivative(2.0 - d).unwrap())
            / (2.0 * d);
        assert_relative_eq!(fd, 3.0, max_relative = 1e-8);
    }

    #[test]
    fn linear_single_mode_matches_cosine() {
        let (spec, pair) = single_mode(2.0, 1.0, 0.0);
        let opts = IntegrateOptions::new(std::f64::consts::PI, 1e-10);
        let run = integrate(&spec, &Nonlinearity::linear(), &pair, &opts).unwrap();
        assert!(run.completed());
        let end = run.trajectory.final_state();
        // u(pi) = cos(2 pi) = 1
        assert_abs_diff_eq!(end.u0.coeffs()[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn kernel_mode_moves_linearly() {
        let spec = Spectrum::new(vec![0.0, 2.0]).unwrap();
        let pair = StatePair::new(
            CoefficientVector::new(vec![0.5, 1.0]),
            CoefficientVector::new(vec![0.25, 0.0]),
        )
        .unwrap();
        let opts = IntegrateOptions::new(4.0, 1e-9);
        let run = integrate(&spec, &Nonlinearity::kirchhoff(), &pair, &opts).unwrap();
        let traj = &run.trajectory;
        for i in 0..traj.len() {
            let t = traj.time(i);
            assert_abs_diff_eq!(traj.u(i)[0], 0.5 + 0.25 * t, epsilon = 1e-12);
            assert_abs_diff_eq!(traj.v(i)[0], 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn adaptive_run_matches_fixed_step_rk4_oracle() {
        // Single-mode Kirchhoff oscillator against a brute-force fixed-step
        // RK4 integrator with a tiny step.
        let (spec, pair) = single_mode(1.0, 1.0, 0.5);
        let m = Nonlinearity::kirchhoff();

        // Oracle: classic RK4, h = 1e-4, comparing at a few checkpoints.
        let lambda: f64 = 1.0;
        let f = |y: [f64; 2]| {
            let sigma = lambda * lambda * y[0] * y[0];
            [y[1], -(1.0 + sigma) * lambda * lambda * y[0]]
        };
        let checkpoints = [2.5, 5.0, 7.5, 10.0];
        let mut y = [1.0f64, 0.5f64];
        let h = 1e-4f64;
        let mut t = 0.0f64;
        let mut oracle = Vec::new();
        for &cp in &checkpoints {
            let steps = ((cp - t) / h).round() as usize;
            let hh = (cp - t) / steps as f64;
            for _ in 0..steps {
                let k1 = f(y);
                let k2 = f([y[0] + 0.5 * hh * k1[0], y[1] + 0.5 * hh * k1[1]]);
                let k3 = f([y[0] + 0.5 * hh * k2[0], y[1] + 0.5 * hh * k2[1]]);
                let k4 = f([y[0] + hh * k3[0], y[1] + hh * k3[1]]);
                y[0] += hh / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
                y[1] += hh / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            }
            t = cp;
            oracle.push(y);
        }

        for (&cp, ora) in checkpoints.iter().zip(&oracle) {
            // locate the nearest snapshot at or before cp and re-integrate
            // the remainder with a fresh run to land exactly on cp
            let partial = integrate(&spec, &m, &pair, &IntegrateOptions::new(cp, 1e-9)).unwrap();
            let end = partial.trajectory.final_state();
            let du = (end.u0.coeffs()[0] - ora[0]).abs();
            let dv = (end.u1.coeffs()[0] - ora[1]).abs();
            assert!(
                du < 1e-7 && dv < 1e-7,
                "checkpoint {cp}: du = {du:.3e}, dv = {dv:.3e}"
            );
        }
    }

    #[test]
    fn hamiltonian_drift_within_budget() {
        let spec = Spectrum::interval_laplacian(8);
        let coeffs: Vec<f64> = spec.lambdas().iter().map(|l| (-l).exp()).collect();
        let pair = StatePair::new(
            CoefficientVector::new(coeffs.clone()),
            CoefficientVector::new(coeffs),
        )
        .unwrap();
        let tol = 1e-9;
        let run = integrate(
            &spec,
            &Nonlinearity::kirchhoff(),
            &pair,
            &IntegrateOptions::new(5.0, tol),
        )
        .unwrap();
        assert!(run.completed());
        assert!(
            run.drift.max_rel_drift <= 100.0 * tol,
            "drift {} too large",
            run.drift.max_rel_drift
        );
        // (est:u') and the strict-case (est:au) with nu = 1, allowing the
        // measured drift on top of the exact bounds.
        let h0 = run.drift.initial_hamiltonian;
        let slack = 1.0 + 100.0 * tol;
        for i in 0..run.trajectory.len() {
            let vsq: f64 = run.trajectory.v(i).iter().map(|x| x * x).sum();
            assert!(vsq <= h0 * slack);
            assert!(run.trajectory.monitors().norm_a12_sq[i] <= h0 * slack);
        }
    }

    #[test]
    fn coupling_matches_norm_derivative() {
        // d/dt |A^{1/2}u|^2 = 2 * coupling, checked by central differences.
        let spec = Spectrum::interval_laplacian(4);
        let coeffs: Vec<f64> = spec.lambdas().iter().map(|l| (-l).exp()).collect();
        let pair = StatePair::new(
            CoefficientVector::new(coeffs.clone()),
            CoefficientVector::new(coeffs),
        )
        .unwrap();
        let tol = 1e-9;
        let mut opts = IntegrateOptions::new(2.0, tol);
        opts.max_step = Some(1e-3);
        let run = integrate(&spec, &Nonlinearity::kirchhoff(), &pair, &opts).unwrap();
        let traj = &run.trajectory;
        let mon = traj.monitors();
        for i in 1..traj.len() - 1 {
            let dt = traj.time(i + 1) - traj.time(i - 1);
            let fd = (mon.norm_a12_sq[i + 1] - mon.norm_a12_sq[i - 1]) / dt;
            let scale = mon.coupling[i].abs().max(1.0);
            assert!(
                (fd - 2.0 * mon.coupling[i]).abs() <= 1e-4 * scale + 10.0 * tol,
                "mismatch at snapshot {i}: fd = {fd}, coupling = {}",
                mon.coupling[i]
            );
        }
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let spec = Spectrum::interval_laplacian(6);
        let coeffs: Vec<f64> = spec.lambdas().iter().map(|l| 0.5 * (-l).exp()).collect();
        let pair = StatePair::new(
            CoefficientVector::new(coeffs.clone()),
            CoefficientVector::new(coeffs),
        )
        .unwrap();
        let tol = 1e-10;
        let m = Nonlinearity::kirchhoff();
        let t_end = 3.0;
        let fwd = integrate(&spec, &m, &pair, &IntegrateOptions::new(t_end, tol)).unwrap();
        let end = fwd.trajectory.final_state();
        let back_pair = StatePair::new(
            end.u0.clone(),
            CoefficientVector::new(end.u1.coeffs().iter().map(|x| -x).collect()),
        )
        .unwrap();
        let back = integrate(&spec, &m, &back_pair, &IntegrateOptions::new(t_end, tol)).unwrap();
        let ret = back.trajectory.final_state();
        for i in 0..spec.len() {
            assert_abs_diff_eq!(ret.u0.coeffs()[i], pair.u0.coeffs()[i], epsilon = 100.0 * tol);
            assert_abs_diff_eq!(
                -ret.u1.coeffs()[i],
                pair.u1.coeffs()[i],
                epsilon = 100.0 * tol
            );
        }
    }

    #[test]
    fn event_detection_matches_closed_form() {
        // m = 1, lambda = 1, u0 = 1, u1 = 0: coupling = -cos t sin t,
        // |coupling| first hits 0.4 at t = asin(0.8)/2.
        let (spec, pair) = single_mode(1.0, 1.0, 0.0);
        let mut opts = IntegrateOptions::new(2.0, 1e-10);
        opts.event = Some(EventSpec {
            coupling_level: 0.4,
        });
        let run = integrate(&spec, &Nonlinearity::linear(), &pair, &opts).unwrap();
        let ev = run.trajectory.event().expect("event must fire");
        let expected = (0.8f64).asin() / 2.0;
        assert_abs_diff_eq!(ev.t, expected, epsilon = 1e-8);
    }

    #[test]
    fn tangential_event_at_the_coupling_maximum() {
        // Same setup, level exactly at the maximum 0.5 of |coupling|. The
        // touch is tangential, so numerically the threshold may or may not
        // register; either outcome must be consistent with the closed form.
        let (spec, pair) = single_mode(1.0, 1.0, 0.0);
        let mut opts = IntegrateOptions::new(2.0, 1e-10);
        opts.max_step = Some(1e-3);
        opts.event = Some(EventSpec {
            coupling_level: 0.5,
        });
        let run = integrate(&spec, &Nonlinearity::linear(), &pair, &opts).unwrap();
        match run.trajectory.event() {
            Some(ev) => {
                assert_abs_diff_eq!(ev.t, std::f64::consts::FRAC_PI_4, epsilon = 1e-5);
            }
            None => {
                // dense snapshots: the sampled max sits within ~|C''| h^2 / 8
                // of the true maximum 1/2
                let max_c = run
                    .trajectory
                    .monitors()
                    .coupling
                    .iter()
                    .fold(0.0f64, |a, b| a.max(b.abs()));
                assert!(max_c >= 0.5 - 1e-6, "max |coupling| = {max_c}");
            }
        }
    }

    #[test]
    fn event_at_time_zero_when_already_past_level() {
        let (spec, pair) = single_mode(2.0, 1.0, 1.0);
        // coupling(0) = lambda^2 u v = 4; level below that triggers at 0.
        let mut opts = IntegrateOptions::new(1.0, 1e-9);
        opts.event = Some(EventSpec {
            coupling_level: 2.0,
        });
        let run = integrate(&spec, &Nonlinearity::linear(), &pair, &opts).unwrap();
        assert_eq!(run.trajectory.event().unwrap().t, 0.0);
    }

    #[test]
    fn c_trace_replays_definition() {
        let (spec, pair) = single_mode(1.5, 0.8, 0.1);
        let m = Nonlinearity::kirchhoff();
        let run = integrate(&spec, &m, &pair, &IntegrateOptions::new(2.0, 1e-9)).unwrap();
        let trace = c_trace(&run.trajectory, &m, 1e-3, None).unwrap();
        // At snapshot times the trace equals m(lambda^2 u^2) exactly up to
        // the resample grid: compare at grid points nearest snapshots.
        let traj = &run.trajectory;
        for i in 0..traj.len() {
            let t = traj.time(i);
            let direct = m.m(traj.monitors().norm_a12_sq[i]);
            assert_relative_eq!(trace.eval(t), direct, max_relative = 1e-4);
        }
        // Constant presets give constant traces.
        let lin_run = integrate(
            &spec,
            &Nonlinearity::linear(),
            &pair,
            &IntegrateOptions::new(1.0, 1e-9),
        )
        .unwrap();
        let lin_trace = c_trace(&lin_run.trajectory, &Nonlinearity::linear(), 1e-2, None).unwrap();
        assert!(lin_trace.samples().iter().all(|c| *c == 1.0));
    }

    #[test]
    fn csv_export_shape() {
        let (spec, pair) = single_mode(1.0, 1.0, 0.0);
        let run = integrate(
            &spec,
            &Nonlinearity::linear(),
            &pair,
            &IntegrateOptions::new(0.5, 1e-6),
        )
        .unwrap();
        let mut buf = Vec::new();
        run.trajectory.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,H,normA12,c,coupling,u1,v1");
        assert_eq!(text.lines().count(), run.trajectory.len() + 1);
    }
}
