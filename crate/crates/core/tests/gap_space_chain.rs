//! Cross-module flows: decomposition feeding membership and certification.

use kirchhoff_spectral::certify::{certify_strict, CertifyOptions, STRICT_BETA};
use kirchhoff_spectral::gap::{build_rho_sequence, decompose, RhoBuildOptions};
use kirchhoff_spectral::spaces::{gm_membership, weighted_tail_above, WeightFunction};
use kirchhoff_spectral::spectrum::{CoefficientVector, Spectrum, StatePair};
use kirchhoff_spectral::dynamics::Nonlinearity;
use kirchhoff_spectral::Error;

fn gap_pair(spec: &Spectrum, p: f64) -> StatePair {
    let coeffs: Vec<f64> = spec.lambdas().iter().map(|l| (-l.powf(p)).exp()).collect();
    StatePair::new(
        CoefficientVector::new(coeffs.clone()),
        CoefficientVector::new(coeffs),
    )
    .unwrap()
}

#[test]
fn decomposition_membership_holds_for_several_weights() {
    let spec = Spectrum::interval_laplacian(48);
    let pair = gap_pair(&spec, 1.5);
    for (phi, beta) in [
        (WeightFunction::Linear, 2.0),
        (WeightFunction::Affine, 2.0),
        (WeightFunction::Power { p: 2.0 / 3.0 }, 3.0),
        (WeightFunction::Log, 1.0),
    ] {
        let d = decompose(
            &spec,
            &pair,
            &phi,
            beta,
            &RhoBuildOptions {
                n_max: 12,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(d.all_pass, "phi = {}, beta = {beta}", phi.name());
    }
}

#[test]
fn tail_is_monotone_in_the_weight_exponent() {
    // For any r <= rho_n^beta the partial tail is below the certified tail,
    // which is below rho_n.
    let spec = Spectrum::interval_laplacian(32);
    let pair = gap_pair(&spec, 1.5);
    let phi = WeightFunction::Affine;
    let beta = 2.0;
    let rho = build_rho_sequence(
        &spec,
        &pair,
        &phi,
        beta,
        &RhoBuildOptions {
            n_max: 10,
            ..Default::default()
        },
    )
    .unwrap();
    let report = gm_membership(&spec, &pair.u0, &phi, &rho, 0.75, beta).unwrap();
    for entry in &report.entries {
        let full = entry.log_tail.unwrap_or(f64::NEG_INFINITY);
        for frac in [0.25, 0.5, 1.0] {
            let r = entry.rho.powf(beta) * frac;
            let partial =
                weighted_tail_above(&spec, &pair.u0, &phi, r, 0.75, entry.rho).unwrap();
            assert!(
                partial.ln() <= full + 1e-12,
                "partial tail exceeds full at n = {}",
                entry.n
            );
        }
    }
}

#[test]
fn certify_retries_with_longer_sequences_until_pick_succeeds() {
    // The demo flow: build with a small n_max, let pick_n ask for more, and
    // extend until the strict certification goes through end to end.
    let spec = Spectrum::interval_laplacian(24);
    let pair = gap_pair(&spec, 1.5);
    let m = Nonlinearity::kirchhoff();
    let phi = WeightFunction::Affine;
    let mut opts = RhoBuildOptions {
        n_max: 4,
        ..Default::default()
    };
    let certify_opts = CertifyOptions::new(1.0, 1e-8);
    let mut attempts = 0;
    let report = loop {
        attempts += 1;
        assert!(attempts <= 12, "extension loop did not converge");
        let d = decompose(&spec, &pair, &phi, STRICT_BETA, &opts).unwrap();
        match certify_strict(&spec, &d.uhat, &m, &phi, &d.rho_hat, &certify_opts) {
            Ok(report) => break report,
            Err(Error::ExtendSequence {
                required_rho,
                last_rho,
                ..
            }) => {
                let missing = (required_rho - last_rho).max(1.0).ceil() as usize;
                opts.n_max += 2 * missing + 4;
            }
            Err(other) => panic!("unexpected error: {other}"),
        }
    };
    assert!(attempts >= 2, "test should exercise the extension path");
    assert!(report.all_pass, "threshold: {:?}", report.threshold);
    assert!(report.tail.margin > 0.0);
}
