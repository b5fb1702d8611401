//! Tape gradients against central differences through the full render,
//! the STFT magnitudes and the spectral loss.

mod common;

fn report(probes: &[common::Probe]) -> Vec<String> {
    probes
        .iter()
        .filter(|p| !p.agrees())
        .map(|p| format!("{}: analytic {:.6e} fd {:.6e}", p.tensor, p.analytic, p.fd))
        .collect()
}

#[test]
fn every_tensor_matches_small_step_differences() {
    // small enough that no PReLU input changes sign inside the step
    let mut model = common::generic_model(7);
    let probes = common::probe_all(&mut model, 1e-5, None, 4).unwrap();
    assert!(probes.len() > 400);
    let bad = report(&probes);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn smooth_network_matches_at_coarse_step() {
    let mut model = common::generic_model(11);
    common::linearize_prelu(&mut model);
    let probes = common::probe_all(&mut model, 1e-3, None, 5).unwrap();
    let bad = report(&probes);
    assert!(bad.is_empty(), "{bad:#?}");
}
