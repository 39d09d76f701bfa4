//! Continuity moduli and the convolution mollifier.
//!
//! A continuity modulus is a continuous increasing function
//! `omega: [0, inf) -> [0, inf)` with `omega(0) = 0` and
//! `omega(a + b) <= omega(a) + omega(b)`. The module ships the standard
//! presets, grid-based axiom checks, the three elementary inequalities every
//! modulus satisfies, and a quadrature mollifier
//! `f_eps(x) = Int f(x + eps s) rho(s) ds` over a smooth bump `rho` supported
//! in [-1, 1] with unit integral.
//!
//! Quadrature is a fixed composite Gauss-Legendre rule with one panel per
//! half-interval [-1, 0] and [0, 1]. Splitting at 0 keeps the rule exact for
//! the `|s|`-weighted kernel integrals behind [`estimate_gamma0`], and the
//! node set symmetric. The normalization constant is computed with the same
//! rule, so the discrete kernel weights form an exact convex combination and
//! the mollifier preserves bounds to rounding accuracy.

use serde::Serialize;

use crate::error::{Error, Result};

/// A continuity modulus `omega`, selected from the preset family.
#[derive(Debug, Clone, PartialEq)]
pub enum ContinuityModulus {
    /// `omega(x) = x`.
    Lipschitz,
    /// `omega(x) = x^exponent`. The hoelder presets use `0 < exponent < 1`;
    /// other exponents are constructible so the axiom checker has something
    /// to reject.
    Power { exponent: f64 },
    /// `omega(x) = x (1 + max(0, -ln x))`, clamped to `x` on `x >= 1`.
    LogLipschitz,
}

impl ContinuityModulus {
    /// The hoelder preset `omega(x) = x^a` with `0 < a < 1`.
    pub fn hoelder(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidArgument(
                "hoelder exponent must satisfy 0 < a < 1".into(),
            ));
        }
        Ok(ContinuityModulus::Power { exponent: a })
    }

    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        match self {
            ContinuityModulus::Lipschitz => x,
            ContinuityModulus::Power { exponent } => x.powf(*exponent),
            ContinuityModulus::LogLipschitz => {
                if x == 0.0 {
                    0.0
                } else if x < 1.0 {
                    x * (1.0 - x.ln())
                } else {
                    x
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            ContinuityModulus::Lipschitz => "lipschitz".into(),
            ContinuityModulus::Power { exponent } => {
                if *exponent > 0.0 && *exponent < 1.0 {
                    format!("hoelder:{exponent}")
                } else {
                    format!("power:{exponent}")
                }
            }
            ContinuityModulus::LogLipschitz => "log-lipschitz".into(),
        }
    }

    /// Parses `"lipschitz"`, `"hoelder:A"`, `"power:P"`, `"log-lipschitz"`.
    pub fn parse(name: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(m);
        match name.split_once(':') {
            None => match name {
                "lipschitz" => Ok(ContinuityModulus::Lipschitz),
                "log-lipschitz" => Ok(ContinuityModulus::LogLipschitz),
                other => Err(bad(format!("unknown continuity modulus `{other}`"))),
            },
            Some(("hoelder", a)) => {
                let a: f64 = a
                    .parse()
                    .map_err(|_| bad(format!("bad hoelder exponent `{a}`")))?;
                ContinuityModulus::hoelder(a)
            }
            Some(("power", p)) => {
                let p: f64 = p
                    .parse()
                    .map_err(|_| bad(format!("bad power exponent `{p}`")))?;
                if !(p > 0.0) || !p.is_finite() {
                    return Err(bad("power exponent must be positive".into()));
                }
                Ok(ContinuityModulus::Power { exponent: p })
            }
            Some((other, _)) => Err(bad(format!("unknown continuity modulus `{other}`"))),
        }
    }
}

/// Uniform samples of a continuous function on `[0, end]`, extended to the
/// whole line by its boundary values and evaluated by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    end: f64,
    samples: Vec<f64>,
}

impl SampledFunction {
    pub fn new(end: f64, samples: Vec<f64>) -> Result<Self> {
        if !(end > 0.0) || !end.is_finite() {
            return Err(Error::InvalidArgument(
                "sampled function needs a finite end > 0".into(),
            ));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(
                "sampled function needs at least 2 samples".into(),
            ));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                context: "sampled function values".into(),
            });
        }
        Ok(SampledFunction { end, samples })
    }

    pub fn from_fn(end: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("need at least 2 samples".into()));
        }
        let step = end / (n - 1) as f64;
        SampledFunction::new(end, (0..n).map(|i| f(step * i as f64)).collect())
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.end / (self.samples.len() - 1) as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Constant-left / constant-right extension, linear in between.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.samples[0];
        }
        if x >= self.end {
            return *self.samples.last().unwrap();
        }
        let h = self.step();
        let pos = x / h;
        let i = (pos.floor() as usize).min(self.samples.len() - 2);
        let frac = pos - i as f64;
        self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac
    }

    pub fn min_sample(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_sample(&self) -> f64 {
        self.samples
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence. Nodes come out in ascending order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root (counted from +1 side).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(x) and P_{n-1}(x) via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Shape of the bump used by [`MollifierKernel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// `C exp(-1/(1-s^2))` on (-1, 1): the standard smooth bump.
    Bump,
    /// `C (1-s^2)^2`: a polynomial hump, handy because its derived constants
    /// have closed forms.
    Quartic,
}

impl KernelShape {
    fn raw(self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            KernelShape::Bump => (-1.0 / (1.0 - s * s)).exp(),
            KernelShape::Quartic => {
                let t = 1.0 - s * s;
                t * t
            }
        }
    }

    fn raw_derivative(self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            KernelShape::Bump => {
                let t = 1.0 - s * s;
                (-1.0 / t).exp() * (-2.0 * s / (t * t))
            }
            KernelShape::Quartic => -4.0 * s * (1.0 - s * s),
        }
    }
}

/// A nonnegative kernel supported in [-1, 1] with unit integral, carried
/// together with the fixed quadrature rule used to evaluate it.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    shape: KernelShape,
    order: usize,
    /// Composite nodes on [-1, 1] (two Gauss-Legendre panels split at 0).
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Normalized kernel values and derivatives at the nodes.
    rho: Vec<f64>,
    drho: Vec<f64>,
    normalization: f64,
    sup_rho: f64,
    abs_drho_integral: f64,
    c1: f64,
    c2: f64,
}

pub const DEFAULT_QUADRATURE_ORDER: usize = 64;

impl MollifierKernel {
    /// Builds a kernel with `order` Gauss-Legendre nodes per half-interval.
    pub fn new(shape: KernelShape, order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidArgument(
                "quadrature order must be >= 2".into(),
            ));
        }
        let (x, w) = gauss_legendre(order);
        // Map one panel to [-1, 0] and one to [0, 1].
        let mut nodes = Vec::with_capacity(2 * order);
        let mut weights = Vec::with_capacity(2 * order);
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push((xi - 1.0) / 2.0);
            weights.push(wi / 2.0);
        }
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push((xi + 1.0) / 2.0);
            weights.push(wi / 2.0);
        }
        let raw_integral: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(s, w)| w * shape.raw(*s))
            .sum();
        if !(raw_integral > 0.0) {
            return Err(Error::NonFinite {
                context: "kernel normalization".into(),
            });
        }
        let normalization = 1.0 / raw_integral;
        let rho: Vec<f64> = nodes
            .iter()
            .map(|s| normalization * shape.raw(*s))
            .collect();
        let drho: Vec<f64> = nodes
            .iter()
            .map(|s| normalization * shape.raw_derivative(*s))
            .collect();
        let sup_rho = rho.iter().cloned().fold(0.0, f64::max);
        let abs_drho_integral: f64 = weights.iter().zip(&drho).map(|(w, d)| w * d.abs()).sum();
        let c1: f64 = weights
            .iter()
            .zip(nodes.iter().zip(&rho))
            .map(|(w, (s, r))| w * r * (1.0 + s.abs()))
            .sum();
        let c2: f64 = weights
            .iter()
            .zip(nodes.iter().zip(&drho))
            .map(|(w, (s, d))| w * d.abs() * (1.0 + s.abs()))
            .sum();
        Ok(MollifierKernel {
            shape,
            order,
            nodes,
            weights,
            rho,
            drho,
            normalization,
            sup_rho,
            abs_drho_integral,
            c1,
            c2,
        })
    }

    pub fn bump(order: usize) -> Result<Self> {
        MollifierKernel::new(KernelShape::Bump, order)
    }

    pub fn quartic(order: usize) -> Result<Self> {
        MollifierKernel::new(KernelShape::Quartic, order)
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "bump" => MollifierKernel::bump(DEFAULT_QUADRATURE_ORDER),
            "quartic" => MollifierKernel::quartic(DEFAULT_QUADRATURE_ORDER),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The normalized kernel at an arbitrary point.
    pub fn rho(&self, s: f64) -> f64 {
        self.normalization * self.shape.raw(s)
    }

    pub fn rho_prime(&self, s: f64) -> f64 {
        self.normalization * self.shape.raw_derivative(s)
    }

    /// Quadrature of the normalized kernel; equals 1 by construction.
    pub fn integral(&self) -> f64 {
        self.weights.iter().zip(&self.rho).map(|(w, r)| w * r).sum()
    }

    pub fn sup_rho(&self) -> f64 {
        self.sup_rho
    }

    pub fn abs_derivative_integral(&self) -> f64 {
        self.abs_drho_integral
    }
}

/// Report from [`check_modulus_axioms`].
#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub omega: String,
    pub zero_at_zero: bool,
    pub monotone: bool,
    pub subadditive: bool,
    /// First few violations, rendered for humans.
    pub violations: Vec<String>,
}

impl AxiomReport {
    pub fn pass(&self) -> bool {
        self.zero_at_zero && self.monotone && self.subadditive
    }
}

const AXIOM_GUARD: f64 = 1e-12;
const MAX_REPORTED_VIOLATIONS: usize = 8;

/// Checks `omega(0) = 0`, monotonicity, and subadditivity over all pairs of
/// grid points. Violations are reported, never thrown.
pub fn check_modulus_axioms(omega: &ContinuityModulus, grid: &[f64]) -> AxiomReport {
    let mut report = AxiomReport {
        omega: omega.name(),
        zero_at_zero: true,
        monotone: true,
        subadditive: true,
        violations: Vec::new(),
    };
    let note = |report: &mut AxiomReport, msg: String| {
        if report.violations.len() < MAX_REPORTED_VIOLATIONS {
            report.violations.push(msg);
        }
    };

    let w0 = omega.eval(0.0);
    if w0 != 0.0 {
        report.zero_at_zero = false;
        note(&mut report, format!("omega(0) = {w0}, expected 0"));
    }

    let mut xs: Vec<f64> = grid.iter().cloned().filter(|x| *x >= 0.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (wa, wb) = (omega.eval(a), omega.eval(b));
        if wb < wa - AXIOM_GUARD * wa.abs().max(1.0) {
            report.monotone = false;
            note(
                &mut report,
                format!("monotonicity: omega({a}) = {wa} > omega({b}) = {wb}"),
            );
        }
    }

    for (i, &a) in xs.iter().enumerate() {
        for &b in &xs[i..] {
            let lhs = omega.eval(a + b);
            let rhs = omega.eval(a) + omega.eval(b);
            if lhs > rhs + AXIOM_GUARD * rhs.abs().max(1.0) {
                report.subadditive = false;
                note(
                    &mut report,
                    format!("subadditivity: omega({a}+{b}) = {lhs} > {rhs}"),
                );
            }
        }
    }
    report
}

/// Report from [`check_omega_inequalities`].
#[derive(Debug, Clone, Serialize)]
pub struct OmegaInequalityReport {
    pub omega: String,
    /// `omega(lambda x) <= (1 + lambda) omega(x)`.
    pub scaling: bool,
    /// `omega(x) >= omega(1) x / (x + 1)`.
    pub lower_bound: bool,
    /// `1 + 1/omega(x) <= (1 + 1/omega(1)) (1 + 1/x)` for `x > 0`.
    pub reciprocal: bool,
    pub violations: Vec<String>,
}

impl OmegaInequalityReport {
    pub fn pass(&self) -> bool {
        self.scaling && self.lower_bound && self.reciprocal
    }
}

/// Verifies the three elementary modulus inequalities pointwise on grids.
pub fn check_omega_inequalities(
    omega: &ContinuityModulus,
    lambda_grid: &[f64],
    x_grid: &[f64],
) -> OmegaInequalityReport {
    let mut report = OmegaInequalityReport {
        omega: omega.name(),
        scaling: true,
        lower_bound: true,
        reciprocal: true,
        violations: Vec::new(),
    };
    let note = |report: &mut OmegaInequalityReport, msg: String| {
        if report.violations.len() < MAX_REPORTED_VIOLATIONS {
            report.violations.push(msg);
        }
    };
    let w1 = omega.eval(1.0);

    for &l in lambda_grid.iter().filter(|l| **l >= 0.0) {
        for &x in x_grid.iter().filter(|x| **x >= 0.0) {
            let lhs = omega.eval(l * x);
            let rhs = (1.0 + l) * omega.eval(x);
            if lhs > rhs * (1.0 + AXIOM_GUARD) + AXIOM_GUARD {
                report.scaling = false;
                note(
                    &mut report,
                    format!("scaling: omega({l}*{x}) = {lhs} > (1+{l})omega({x}) = {rhs}"),
                );
            }
        }
    }

    for &x in x_grid.iter().filter(|x| **x >= 0.0) {
        let lhs = omega.eval(x);
        let rhs = w1 * x / (x + 1.0);
        if lhs < rhs * (1.0 - AXIOM_GUARD) - AXIOM_GUARD {
            report.lower_bound = false;
            note(
                &mut report,
                format!("lower bound: omega({x}) = {lhs} < omega(1) x/(x+1) = {rhs}"),
            );
        }
    }

    for &x in x_grid.iter().filter(|x| **x > 0.0) {
        let wx = omega.eval(x);
        if wx <= 0.0 {
            report.reciprocal = false;
            note(&mut report, format!("reciprocal: omega({x}) = {wx} <= 0"));
            continue;
        }
        let lhs = 1.0 + 1.0 / wx;
        let rhs = (1.0 + 1.0 / w1) * (1.0 + 1.0 / x);
        if lhs > rhs * (1.0 + AXIOM_GUARD) {
            report.reciprocal = false;
            note(
                &mut report,
                format!("reciprocal: 1 + 1/omega({x}) = {lhs} > {rhs}"),
            );
        }
    }
    report
}

fn check_mollify_args(eps: f64, t: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument("mollifier eps must be > 0".into()));
    }
    if !t.is_finite() {
        return Err(Error::InvalidArgument(
            "mollifier evaluation point must be finite".into(),
        ));
    }
    Ok(())
}

/// `f_eps(t) = Int f(t + eps s) rho(s) ds` by the kernel's quadrature rule.
///
/// Because the discrete kernel weights sum to 1 exactly, the result is a
/// convex combination of values of `f`, so it preserves any bounds of `f`.
pub fn mollify(f: &SampledFunction, kernel: &MollifierKernel, eps: f64, t: f64) -> Result<f64> {
    check_mollify_args(eps, t)?;
    let mut acc = 0.0;
    for ((s, w), r) in kernel.nodes.iter().zip(&kernel.weights).zip(&kernel.rho) {
        let v = f.eval(t + eps * s);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("mollifier sample at t = {}", t + eps * s),
            });
        }
        acc += w * r * v;
    }
    Ok(acc)
}

/// `f_eps'(t)` through the kernel derivative:
/// `f_eps'(t) = -(1/eps) Int f(t + eps s) rho'(s) ds`
/// (integrating by parts moves the derivative onto `rho` at the cost of a
/// sign, since `rho` vanishes at the support boundary).
pub fn mollify_derivative(
    f: &SampledFunction,
    kernel: &MollifierKernel,
    eps: f64,
    t: f64,
) -> Result<f64> {
    check_mollify_args(eps, t)?;
    let mut acc = 0.0;
    for ((s, w), d) in kernel.nodes.iter().zip(&kernel.weights).zip(&kernel.drho) {
        let v = f.eval(t + eps * s);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("mollifier sample at t = {}", t + eps * s),
            });
        }
        acc += w * d * v;
    }
    Ok(-acc / eps)
}

/// A certified constant `gamma0` for the mollifier error and derivative
/// bounds: for every `f` that is `omega`-continuous with constant `H` and
/// every subadditive `omega`,
///
///   |f_eps(t) - f(t)|  <= gamma0 H omega(eps),
///   |f_eps'(t)|        <= gamma0 H omega(eps) / eps.
///
/// The bound follows from `omega(eps |s|) <= (1 + |s|) omega(eps)`:
/// `gamma0 = max(1 + Int rho(s)(1+|s|) ds, Int |rho'(s)|(1+|s|) ds)`,
/// with both integrals evaluated by the kernel's own quadrature rule so the
/// discrete inequalities hold exactly.
pub fn estimate_gamma0(kernel: &MollifierKernel) -> f64 {
    (1.0 + kernel.c1).max(kernel.c2)
}

/// One row of a mollifier property sweep at a fixed `eps`.
#[derive(Debug, Clone, Serialize)]
pub struct MollifierCheck {
    pub eps: f64,
    /// `sup_t |f_eps(t) - f(t)|` over the probe grid.
    pub sup_err: f64,
    /// `sup_t |f_eps'(t)|` over the probe grid.
    pub sup_deriv: f64,
    /// `gamma0 H omega(eps)`.
    pub err_bound: f64,
    /// `gamma0 H omega(eps) / eps`.
    pub deriv_bound: f64,
    pub pass: bool,
}

/// Sweeps the mollifier bounds over a list of `eps` values for a function
/// that is `omega`-continuous with constant `h_const`. Probes at the sample
/// points of `f` and their midpoints.
pub fn mollifier_property_sweep(
    f: &SampledFunction,
    h_const: f64,
    omega: &ContinuityModulus,
    kernel: &MollifierKernel,
    eps_list: &[f64],
) -> Result<Vec<MollifierCheck>> {
    let gamma0 = estimate_gamma0(kernel);
    let step = f.step();
    let probes: Vec<f64> = (0..f.len())
        .map(|i| i as f64 * step)
        .chain((0..f.len() - 1).map(|i| (i as f64 + 0.5) * step))
        .collect();
    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut sup_err = 0.0f64;
        let mut sup_deriv = 0.0f64;
        for &t in &probes {
            let fe = mollify(f, kernel, eps, t)?;
            let de = mollify_derivative(f, kernel, eps, t)?;
            sup_err = sup_err.max((fe - f.eval(t)).abs());
            sup_deriv = sup_deriv.max(de.abs());
        }
        let err_bound = gamma0 * h_const * omega.eval(eps);
        let deriv_bound = err_bound / eps;
        // 1e-9 relative guard for quadrature-of-interpolant rounding.
        let pass = sup_err <= err_bound * (1.0 + 1e-9) + 1e-300
            && sup_deriv <= deriv_bound * (1.0 + 1e-9) + 1e-300;
        out.push(MollifierCheck {
            eps,
            sup_err,
            sup_deriv,
            err_bound,
            deriv_bound,
            pass,
        });
    }
    Ok(out)
}

/// Log-spaced grid between `lo` and `hi` (inclusive), `n >= 2` points.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        let integ = |p: i32| -> f64 { x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p)).sum() };
        assert_relative_eq!(integ(0), 2.0, max_relative = 1e-14);
        assert_abs_diff_eq!(integ(1), 0.0, epsilon = 1e-15);
        assert_relative_eq!(integ(2), 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(integ(8), 2.0 / 9.0, max_relative = 1e-13); // deg 8 <= 2*5-1? no: 9 > 8, still exact
        // degree 2n-1 = 9 is the exactness limit
        assert_relative_eq!(integ(9), 0.0, max_relative = 1e-13);
    }

    #[test]
    fn gauss_legendre_matches_known_five_point_rule() {
        let (x, w) = gauss_legendre(5);
        assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-15);
        assert_relative_eq!(x[4], 0.906179845938664, max_relative = 1e-12);
        assert_relative_eq!(w[2], 128.0 / 225.0, max_relative = 1e-12);
    }

    #[test]
    fn kernels_have_unit_integral_and_vanish_at_support_boundary() {
        for kernel in [
            MollifierKernel::bump(DEFAULT_QUADRATURE_ORDER).unwrap(),
            MollifierKernel::quartic(DEFAULT_QUADRATURE_ORDER).unwrap(),
        ] {
            assert_relative_eq!(kernel.integral(), 1.0, max_relative = 1e-10);
            assert_eq!(kernel.rho(1.0), 0.0);
            assert_eq!(kernel.rho(-1.0), 0.0);
            assert!(kernel.sup_rho() > 0.0);
        }
    }

    #[test]
    fn lipschitz_passes_axioms() {
        let r = check_modulus_axioms(&ContinuityModulus::Lipschitz, &[0.0, 1.0, 2.0]);
        assert!(r.pass(), "{:?}", r.violations);
    }

    #[test]
    fn square_fails_subadditivity_at_one_one() {
        let omega = ContinuityModulus::Power { exponent: 2.0 };
        let r = check_modulus_axioms(&omega, &[1.0, 1.0]);
        assert!(!r.subadditive); // omega(2) = 4 > omega(1) + omega(1) = 2
        assert!(r.monotone && r.zero_at_zero);
    }

    #[test]
    fn sqrt_passes_axioms_on_dense_grid() {
        let omega = ContinuityModulus::hoelder(0.5).unwrap();
        let mut grid = log_grid(1e-6, 1e3, 120);
        grid.push(0.0);
        let r = check_modulus_axioms(&omega, &grid);
        assert!(r.pass(), "{:?}", r.violations);
    }

    #[test]
    fn log_lipschitz_passes_axioms() {
        let mut grid = log_grid(1e-8, 1e2, 150);
        grid.push(0.0);
        let r = check_modulus_axioms(&ContinuityModulus::LogLipschitz, &grid);
        assert!(r.pass(), "{:?}", r.violations);
    }

    #[test]
    fn omega_inequalities_spot_values() {
        // omega = sqrt: omega(4*1) = 2 <= (1+4) omega(1) = 5.
        let omega = ContinuityModulus::hoelder(0.5).unwrap();
        assert!(omega.eval(4.0) <= 5.0 * omega.eval(1.0));
        // omega = id at x = 1: 1 >= 1 * 1/2.
        assert!(ContinuityModulus::Lipschitz.eval(1.0) >= 0.5);
        let grid = log_grid(1e-6, 1e3, 80);
        let r = check_omega_inequalities(
            &ContinuityModulus::Power { exponent: 0.3 },
            &grid,
            &grid,
        );
        assert!(r.pass(), "{:?}", r.violations);
    }

    #[test]
    fn mollify_preserves_constants_and_bounds() {
        let kernel = MollifierKernel::bump(DEFAULT_QUADRATURE_ORDER).unwrap();
        let f = SampledFunction::new(4.0, vec![2.5; 40]).unwrap();
        for (eps, t) in [(0.1, 0.0), (1.0, 2.0), (0.5, 4.0), (2.0, -1.0)] {
            assert_relative_eq!(
                mollify(&f, &kernel, eps, t).unwrap(),
                2.5,
                max_relative = 1e-12
            );
            assert_abs_diff_eq!(
                mollify_derivative(&f, &kernel, eps, t).unwrap(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn mollify_of_linear_is_exact_at_interior_points() {
        // Even kernel kills the odd term: f(x) = x gives f_eps(5) = 5.
        let kernel = MollifierKernel::bump(DEFAULT_QUADRATURE_ORDER).unwrap();
        let f = SampledFunction::from_fn(10.0, 1001, |x| x).unwrap();
        assert_relative_eq!(
            mollify(&f, &kernel, 0.1, 5.0).unwrap(),
            5.0,
            max_relative = 1e-10
        );
        // Int s rho'(s) ds = -1, so the derivative form returns slope 1.
        assert_relative_eq!(
            mollify_derivative(&f, &kernel, 0.1, 5.0).unwrap(),
            1.0,
            max_relative = 1e-9
        );
        let quartic = MollifierKernel::quartic(DEFAULT_QUADRATURE_ORDER).unwrap();
        assert_relative_eq!(
            mollify_derivative(&f, &quartic, 0.1, 5.0).unwrap(),
            1.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn gamma0_for_quartic_kernel_matches_closed_form() {
        // C = 15/16; 1 + Int rho (1+|s|) = 1 + 21/16 = 2.3125;
        // Int |rho'| (1+|s|) = 46/16 = 2.875. Max is 2.875.
        let kernel = MollifierKernel::quartic(DEFAULT_QUADRATURE_ORDER).unwrap();
        assert_relative_eq!(estimate_gamma0(&kernel), 2.875, max_relative = 1e-10);
    }

    #[test]
    fn gamma0_for_bump_is_finite_deterministic_and_above_one() {
        let kernel = MollifierKernel::bump(DEFAULT_QUADRATURE_ORDER).unwrap();
        let g = estimate_gamma0(&kernel);
        assert!(g.is_finite() && g > 1.0);
        let again = estimate_gamma0(&MollifierKernel::bump(DEFAULT_QUADRATURE_ORDER).unwrap());
        assert_eq!(g, again);
    }

    #[test]
    fn property_sweep_holds_for_concave_generators() {
        // f = c + H * (interpolant of omega) is omega-continuous with
        // constant exactly H when omega is concave: the interpolant is
        // concave, vanishes at 0, and sits below omega.
        let kernel = MollifierKernel::bump(DEFAULT_QUADRATURE_ORDER).unwrap();
        let eps_list = [1e-3, 1e-2, 1e-1, 1.0];
        for omega in [
            ContinuityModulus::Lipschitz,
            ContinuityModulus::hoelder(0.5).unwrap(),
        ] {
            let h_const = 1.7;
            let f =
                SampledFunction::from_fn(4.0, 801, |x| 0.3 + h_const * omega.eval(x)).unwrap();
            let rows = mollifier_property_sweep(&f, h_const, &omega, &kernel, &eps_list).unwrap();
            for row in rows {
                assert!(
                    row.pass,
                    "omega = {}, eps = {}: sup_err = {} vs {}, sup_deriv = {} vs {}",
                    omega.name(),
                    row.eps,
                    row.sup_err,
                    row.err_bound,
                    row.sup_deriv,
                    row.deriv_bound
                );
            }
        }
    }
}
