//! Subcommand implementations. Every command writes JSON/CSV artifacts into
//! the output directory plus a `manifest.json` embedding the fully resolved
//! configuration, and returns the process exit code (0 all-pass, 1 reported
//! violation).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use kirchhoff_spectral::certify::{
    certify_strict, certify_weak, CertifyOptions, StrictReport, WeakReport, STRICT_BETA,
    WEAK_BETA,
};
use kirchhoff_spectral::dynamics::{integrate, EventSpec, IntegrateOptions, RunStatus};
use kirchhoff_spectral::gap::{
    decompose, Decomposition, DecompositionCertificate, RhoBuildOptions,
};
use kirchhoff_spectral::logsum::LogSum;
use kirchhoff_spectral::modulus::{
    check_modulus_axioms, check_omega_inequalities, estimate_gamma0, log_grid,
    mollifier_property_sweep, ContinuityModulus, MollifierKernel, SampledFunction,
};
use kirchhoff_spectral::spaces::{gevrey_norm_sq, gm_membership};
use kirchhoff_spectral::Error as CoreError;

use crate::config::ResolvedRun;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    command: &'a str,
    config: &'a crate::config::RunConfig,
    outputs: Vec<String>,
    summary: S,
}

fn write_json<S: Serialize>(dir: &Path, name: &str, value: &S) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {name}"))?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_manifest<S: Serialize>(
    dir: &Path,
    command: &str,
    config: &crate::config::RunConfig,
    outputs: &[PathBuf],
    summary: S,
) -> Result<()> {
    let manifest = Manifest {
        command,
        config,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        summary,
    };
    write_json(dir, "manifest.json", &manifest)?;
    Ok(())
}

fn say(quiet: bool, line: impl AsRef<str>) {
    if !quiet {
        println!("{}", line.as_ref());
    }
}

fn rho_options(run: &crate::config::RunSection) -> RhoBuildOptions {
    RhoBuildOptions {
        rho_seed: run.rho_seed,
        grid_step: run.grid_step,
        n_max: run.n_max,
        ..Default::default()
    }
}

fn certify_options(run: &crate::config::RunSection) -> CertifyOptions {
    let mut opts = CertifyOptions::new(run.t_end, run.tol);
    opts.max_step = run.max_step;
    opts.trace_step = run.trace_step;
    opts
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Serialize)]
struct SimulateSummary {
    status: RunStatus,
    snapshots: usize,
    steps_accepted: usize,
    steps_rejected: usize,
    initial_hamiltonian: f64,
    max_rel_drift: f64,
    drift_budget: f64,
    drift_ok: bool,
    event: Option<kirchhoff_spectral::dynamics::CouplingEvent>,
    pass: bool,
}

pub fn simulate(resolved: &ResolvedRun, out: &Path, quiet: bool) -> Result<i32> {
    let run = &resolved.config.run;
    let mut opts = IntegrateOptions::new(run.t_end, run.tol);
    opts.max_step = run.max_step;
    opts.event = run.threshold_level.map(|level| EventSpec {
        coupling_level: level,
    });
    let integration = integrate(
        &resolved.spectrum,
        &resolved.nonlinearity,
        &resolved.pair,
        &opts,
    )?;

    let csv_path = out.join("trajectory.csv");
    let mut buf = Vec::new();
    integration
        .trajectory
        .write_csv(&mut buf, resolved.config.output.per_mode_columns)?;
    fs::write(&csv_path, buf).with_context(|| format!("writing {}", csv_path.display()))?;

    let drift_budget = 100.0 * run.tol;
    let drift_ok = integration.drift.max_rel_drift <= drift_budget;
    let completed = integration.completed();
    let summary = SimulateSummary {
        status: integration.status,
        snapshots: integration.trajectory.len(),
        steps_accepted: integration.steps_accepted,
        steps_rejected: integration.steps_rejected,
        initial_hamiltonian: integration.drift.initial_hamiltonian,
        max_rel_drift: integration.drift.max_rel_drift,
        drift_budget,
        drift_ok,
        event: integration.trajectory.event(),
        pass: completed && drift_ok,
    };
    let pass = summary.pass;
    say(
        quiet,
        format!(
            "simulate: {} snapshots, rel drift {:.3e} (budget {:.3e}) -> {}",
            summary.snapshots,
            summary.max_rel_drift,
            drift_budget,
            if pass { "pass" } else { "VIOLATION" }
        ),
    );
    write_manifest(out, "simulate", &resolved.config, &[csv_path], summary)?;
    Ok(if pass { EXIT_PASS } else { EXIT_VIOLATION })
}

// ---------------------------------------------------------------------------
// decompose

#[derive(Serialize)]
struct DecomposeSummary {
    all_pass: bool,
    rho_terms: usize,
    rho_last: f64,
    reconstruction_exact: bool,
}

pub fn decompose_cmd(resolved: &ResolvedRun, out: &Path, quiet: bool) -> Result<i32> {
    let d = decompose(
        &resolved.spectrum,
        &resolved.pair,
        &resolved.phi,
        resolved.config.run.beta,
        &rho_options(&resolved.config.run),
    )?;
    let reconstruction_exact = reconstruction_is_exact(resolved, &d);
    let summary = DecomposeSummary {
        all_pass: d.all_pass && reconstruction_exact,
        rho_terms: d.rho_full.len(),
        rho_last: d.rho_full.last(),
        reconstruction_exact,
    };
    let pass = summary.all_pass;
    let cert = DecompositionCertificate::new(&resolved.spectrum, &resolved.phi, d);
    let cert_path = write_json(out, "decomposition.json", &cert)?;
    say(
        quiet,
        format!(
            "decompose: {} sequence terms, membership {} -> {}",
            summary.rho_terms,
            if cert.decomposition.all_pass {
                "certified"
            } else {
                "FAILED"
            },
            if pass { "pass" } else { "VIOLATION" }
        ),
    );
    write_manifest(out, "decompose", &resolved.config, &[cert_path], summary)?;
    Ok(if pass { EXIT_PASS } else { EXIT_VIOLATION })
}

fn reconstruction_is_exact(resolved: &ResolvedRun, d: &Decomposition) -> bool {
    let u0 = resolved.pair.u0.coeffs();
    let u1 = resolved.pair.u1.coeffs();
    (0..resolved.spectrum.len()).all(|i| {
        d.ubar.u0.coeffs()[i] + d.uhat.u0.coeffs()[i] == u0[i]
            && d.ubar.u1.coeffs()[i] + d.uhat.u1.coeffs()[i] == u1[i]
    })
}

// ---------------------------------------------------------------------------
// certify

/// Builds a decomposition whose sequence prefix is long enough for the
/// chosen regime, growing `n_max` when the selection asks for more terms.
fn decompose_until_pickable(
    resolved: &ResolvedRun,
    beta: f64,
    strict: bool,
    quiet: bool,
) -> Result<(Decomposition, CertifyHalves)> {
    let mut opts = rho_options(&resolved.config.run);
    let certify_opts = certify_options(&resolved.config.run);
    for _attempt in 0..16 {
        let d = decompose(
            &resolved.spectrum,
            &resolved.pair,
            &resolved.phi,
            beta,
            &opts,
        )?;
        match certify_halves(resolved, &d, strict, &certify_opts) {
            Ok(halves) => return Ok((d, halves)),
            Err(CertifyHalvesError::Extend {
                required_rho,
                last_rho,
            }) => {
                let missing = (required_rho - last_rho).max(1.0) / opts.grid_step;
                let extra = 2 * (missing.ceil() as usize) + 8;
                say(
                    quiet,
                    format!(
                        "certify: sequence needs rho >= {required_rho:.3}, extending n_max {} -> {}",
                        opts.n_max,
                        opts.n_max + extra
                    ),
                );
                opts.n_max += extra;
            }
            Err(CertifyHalvesError::Other(e)) => return Err(e),
        }
    }
    Err(anyhow!(
        "gap sequence still too short after 16 extensions; check the constants"
    ))
}

enum CertifyHalvesError {
    Extend { required_rho: f64, last_rho: f64 },
    Other(anyhow::Error),
}

impl From<CoreError> for CertifyHalvesError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ExtendSequence {
                required_rho,
                last_rho,
                ..
            } => CertifyHalvesError::Extend {
                required_rho,
                last_rho,
            },
            other => CertifyHalvesError::Other(other.into()),
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum HalfReport {
    Strict(Box<StrictReport>),
    Weak(Box<WeakReport>),
}

impl HalfReport {
    fn all_pass(&self) -> bool {
        match self {
            HalfReport::Strict(r) => r.all_pass,
            HalfReport::Weak(r) => r.all_pass,
        }
    }

    fn one_line(&self) -> String {
        match self {
            HalfReport::Strict(r) => format!(
                "strict: rho_n = {} (n = {}), threshold {}, {} modes checked, margin {:.3e}",
                r.chosen.rho,
                r.chosen.n,
                if r.threshold.is_never() {
                    "never reached"
                } else {
                    "CROSSED"
                },
                r.checked_modes,
                r.tail.margin
            ),
            HalfReport::Weak(r) => format!(
                "weak: rho_n = {} (n = {}), threshold {}, {} modes checked, margin {:.3e}",
                r.chosen.rho,
                r.chosen.n,
                if r.threshold.is_never() {
                    "never reached"
                } else {
                    "CROSSED"
                },
                r.checked_modes,
                r.tail.margin
            ),
        }
    }
}

struct CertifyHalves {
    ubar: HalfReport,
    uhat: HalfReport,
}

fn certify_halves(
    resolved: &ResolvedRun,
    d: &Decomposition,
    strict: bool,
    opts: &CertifyOptions,
) -> std::result::Result<CertifyHalves, CertifyHalvesError> {
    let spec = &resolved.spectrum;
    let m = &resolved.nonlinearity;
    let phi = &resolved.phi;
    let make = |pair, rho| -> std::result::Result<HalfReport, CertifyHalvesError> {
        if strict {
            Ok(HalfReport::Strict(Box::new(certify_strict(
                spec, pair, m, phi, rho, opts,
            )?)))
        } else {
            Ok(HalfReport::Weak(Box::new(certify_weak(
                spec, pair, m, phi, rho, opts,
            )?)))
        }
    };
    Ok(CertifyHalves {
        ubar: make(&d.ubar, &d.rho_bar)?,
        uhat: make(&d.uhat, &d.rho_hat)?,
    })
}

#[derive(Serialize)]
struct CertifySummary {
    regime: &'static str,
    decomposition_all_pass: bool,
    ubar_all_pass: bool,
    uhat_all_pass: bool,
    pass: bool,
}

pub fn certify_cmd(
    resolved: &ResolvedRun,
    strict: bool,
    certificate: Option<&Path>,
    out: &Path,
    quiet: bool,
) -> Result<i32> {
    let regime = if strict { "strict" } else { "weak" };
    let beta = if strict { STRICT_BETA } else { WEAK_BETA };
    if strict && !(resolved.nonlinearity.nu() > 0.0) {
        return Err(anyhow!(
            "/nonlinearity: `{}` has nu = 0; use certify-weak",
            resolved.nonlinearity.name()
        ));
    }

    let (d, halves, mut outputs) = match certificate {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading certificate {}", path.display()))?;
            let cert: DecompositionCertificate =
                serde_json::from_str(&text).context("parsing certificate")?;
            let spec = cert.spectrum()?;
            if spec != resolved.spectrum {
                return Err(anyhow!(
                    "certificate spectrum does not match the configured spectrum"
                ));
            }
            let halves = certify_halves(
                resolved,
                &cert.decomposition,
                strict,
                &certify_options(&resolved.config.run),
            )
            .map_err(|e| match e {
                CertifyHalvesError::Extend { required_rho, .. } => anyhow!(
                    "certificate sequence too short: need rho >= {required_rho}; \
                     re-run decompose with a larger n_max"
                ),
                CertifyHalvesError::Other(e) => e,
            })?;
            (cert.decomposition, halves, Vec::new())
        }
        None => {
            let (d, halves) = decompose_until_pickable(resolved, beta, strict, quiet)?;
            let cert =
                DecompositionCertificate::new(&resolved.spectrum, &resolved.phi, d.clone());
            let p = write_json(out, "decomposition.json", &cert)?;
            (d, halves, vec![p])
        }
    };

    outputs.push(write_json(out, "certify_ubar.json", &halves.ubar)?);
    outputs.push(write_json(out, "certify_uhat.json", &halves.uhat)?);

    let summary = CertifySummary {
        regime,
        decomposition_all_pass: d.all_pass,
        ubar_all_pass: halves.ubar.all_pass(),
        uhat_all_pass: halves.uhat.all_pass(),
        pass: d.all_pass && halves.ubar.all_pass() && halves.uhat.all_pass(),
    };
    say(quiet, format!("certify ubar {}", halves.ubar.one_line()));
    say(quiet, format!("certify uhat {}", halves.uhat.one_line()));
    say(
        quiet,
        format!(
            "certify-{regime}: {}",
            if summary.pass { "pass" } else { "VIOLATION" }
        ),
    );
    let pass = summary.pass;
    write_manifest(
        out,
        if strict { "certify-strict" } else { "certify-weak" },
        &resolved.config,
        &outputs,
        summary,
    )?;
    Ok(if pass { EXIT_PASS } else { EXIT_VIOLATION })
}

// ---------------------------------------------------------------------------
// check-modulus

#[derive(Serialize)]
struct ModulusReport {
    omega: String,
    kernel: String,
    gamma0: f64,
    axioms: kirchhoff_spectral::modulus::AxiomReport,
    inequalities: kirchhoff_spectral::modulus::OmegaInequalityReport,
    mollifier: Vec<kirchhoff_spectral::modulus::MollifierCheck>,
    pass: bool,
}

pub fn check_modulus(
    omega: &ContinuityModulus,
    kernel: &MollifierKernel,
    config: &crate::config::RunConfig,
    out: &Path,
    quiet: bool,
) -> Result<i32> {
    let mut grid = log_grid(1e-6, 1e3, 200);
    grid.push(0.0);
    let axioms = check_modulus_axioms(omega, &grid);
    let inequalities = check_omega_inequalities(omega, &grid, &grid);

    // Mollifier bounds on the canonical omega-continuous generator
    // f = 0.3 + omega interpolated on [0, 4] (H = 1 for concave presets).
    let f = SampledFunction::from_fn(4.0, 801, |x| 0.3 + omega.eval(x))?;
    let mollifier =
        mollifier_property_sweep(&f, 1.0, omega, kernel, &[1e-3, 1e-2, 1e-1, 1.0])?;

    let pass = axioms.pass() && inequalities.pass() && mollifier.iter().all(|c| c.pass);
    let report = ModulusReport {
        omega: omega.name(),
        kernel: format!("{:?}", kernel.shape()),
        gamma0: estimate_gamma0(kernel),
        axioms,
        inequalities,
        mollifier,
        pass,
    };
    say(
        quiet,
        format!(
            "check-modulus {}: axioms {}, inequalities {}, mollifier {} -> {}",
            report.omega,
            if report.axioms.pass() { "ok" } else { "FAIL" },
            if report.inequalities.pass() {
                "ok"
            } else {
                "FAIL"
            },
            if report.mollifier.iter().all(|c| c.pass) {
                "ok"
            } else {
                "FAIL"
            },
            if pass { "pass" } else { "VIOLATION" }
        ),
    );
    let path = write_json(out, "modulus_report.json", &report)?;
    write_manifest(out, "check-modulus", config, &[path], pass)?;
    Ok(if pass { EXIT_PASS } else { EXIT_VIOLATION })
}

// ---------------------------------------------------------------------------
// norms

#[derive(Serialize)]
struct NormValue {
    log: Option<f64>,
    decimal: kirchhoff_spectral::logsum::Decimal,
    finite: bool,
}

impl From<LogSum> for NormValue {
    fn from(s: LogSum) -> Self {
        NormValue {
            log: if s.is_zero() { None } else { Some(s.ln()) },
            decimal: s.decimal(),
            finite: s.is_representable(),
        }
    }
}

#[derive(Serialize)]
struct NormsReport {
    r: f64,
    beta: f64,
    u0_gevrey_34: NormValue,
    u1_gevrey_14: NormValue,
    u0_membership: kirchhoff_spectral::spaces::MembershipReport,
    u1_membership: kirchhoff_spectral::spaces::MembershipReport,
}

pub fn norms_cmd(resolved: &ResolvedRun, out: &Path, quiet: bool) -> Result<i32> {
    let run = &resolved.config.run;
    let rho = kirchhoff_spectral::gap::build_rho_sequence(
        &resolved.spectrum,
        &resolved.pair,
        &resolved.phi,
        run.beta,
        &rho_options(run),
    )?;
    let r = run.rho_seed.powf(run.beta).max(f64::MIN_POSITIVE);
    let report = NormsReport {
        r,
        beta: run.beta,
        u0_gevrey_34: gevrey_norm_sq(&resolved.spectrum, &resolved.pair.u0, &resolved.phi, r, 0.75)?
            .into(),
        u1_gevrey_14: gevrey_norm_sq(&resolved.spectrum, &resolved.pair.u1, &resolved.phi, r, 0.25)?
            .into(),
        u0_membership: gm_membership(
            &resolved.spectrum,
            &resolved.pair.u0,
            &resolved.phi,
            &rho,
            0.75,
            run.beta,
        )?,
        u1_membership: gm_membership(
            &resolved.spectrum,
            &resolved.pair.u1,
            &resolved.phi,
            &rho,
            0.25,
            run.beta,
        )?,
    };
    say(
        quiet,
        format!(
            "norms: |u0| at (r = {r}, alpha = 3/4) = {}, membership(u0) {}",
            report.u0_gevrey_34.decimal,
            if report.u0_membership.all_pass {
                "pass"
            } else {
                "fails (expected for data without gaps)"
            }
        ),
    );
    let path = write_json(out, "norms.json", &report)?;
    write_manifest(out, "norms", &resolved.config, &[path], ())?;
    Ok(EXIT_PASS)
}

// ---------------------------------------------------------------------------
// demo

#[derive(Serialize)]
struct DemoSummary {
    regime: &'static str,
    decomposition_all_pass: bool,
    ubar_all_pass: bool,
    uhat_all_pass: bool,
    pass: bool,
}

pub fn demo(resolved: &ResolvedRun, out: &Path, quiet: bool) -> Result<i32> {
    let strict = resolved.nonlinearity.nu() > 0.0;
    let regime = if strict { "strict" } else { "weak" };
    let beta = if strict { STRICT_BETA } else { WEAK_BETA };
    say(
        quiet,
        format!(
            "demo: decomposing {} modes, certifying via the {} path",
            resolved.spectrum.len(),
            regime
        ),
    );
    let (d, halves) = decompose_until_pickable(resolved, beta, strict, quiet)?;
    let cert = DecompositionCertificate::new(&resolved.spectrum, &resolved.phi, d.clone());
    let mut outputs = vec![write_json(out, "decomposition.json", &cert)?];

    // Simulate both halves over the full horizon and export the traces.
    let run = &resolved.config.run;
    for (name, pair) in [("ubar", &d.ubar), ("uhat", &d.uhat)] {
        let mut opts = IntegrateOptions::new(run.t_end, run.tol);
        opts.max_step = run.max_step;
        let integration = integrate(&resolved.spectrum, &resolved.nonlinearity, pair, &opts)?;
        let path = out.join(format!("{name}_trajectory.csv"));
        let mut buf = Vec::new();
        integration
            .trajectory
            .write_csv(&mut buf, resolved.config.output.per_mode_columns)?;
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }

    outputs.push(write_json(out, "certify_ubar.json", &halves.ubar)?);
    outputs.push(write_json(out, "certify_uhat.json", &halves.uhat)?);

    let summary = DemoSummary {
        regime,
        decomposition_all_pass: d.all_pass,
        ubar_all_pass: halves.ubar.all_pass(),
        uhat_all_pass: halves.uhat.all_pass(),
        pass: d.all_pass && halves.ubar.all_pass() && halves.uhat.all_pass(),
    };
    say(quiet, format!("demo ubar {}", halves.ubar.one_line()));
    say(quiet, format!("demo uhat {}", halves.uhat.one_line()));
    say(
        quiet,
        format!("demo: {}", if summary.pass { "pass" } else { "VIOLATION" }),
    );
    let pass = summary.pass;
    write_manifest(out, "demo", &resolved.config, &outputs, summary)?;
    Ok(if pass { EXIT_PASS } else { EXIT_VIOLATION })
}
