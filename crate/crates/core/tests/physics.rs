// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! End-to-end physical checks on the default presets.

use cavmem::config::RunConfig;
use cavmem::decay::free_decay;
use cavmem::noise::{amplitude_sweep, NoiseHarness};
use cavmem::optimizer::{max_violation, optimize};
use cavmem::pipeline::Setup;
use cavmem::retrieval::rebit_grid;

fn lifetime(cfg: RunConfig) -> f64 {
    let s = Setup::new(&cfg).unwrap();
    let (_, fit) = free_decay(&s.ensemble, &s.kernels, &s.sections, s.eta0(), 1000.0).unwrap();
    println!("free decay: {fit:?}");
    assert!(fit.r_squared > 0.9, "{fit:?}");
    fit.lifetime
}

#[test]
fn holes_stretch_the_free_decay_past_500_ns() {
    assert!(lifetime(RunConfig::case_b()) > 500.0);
}

#[test]
fn retrieval_error_grows_linearly_with_drive_noise() {
    let cfg = RunConfig::case_a();
    let s = Setup::new(&cfg).unwrap();
    let basis = s.basis().unwrap();
    let gram = s.gram(&basis).unwrap();
    let sol = optimize(&s.control_problem(&basis, &gram)).unwrap();
    assert!(max_violation(&sol.residuals) <= 1e-6);
    let h = NoiseHarness::new(&s.ensemble, &s.kernels, &basis, &gram, &sol).unwrap();
    let sw = amplitude_sweep(&h, &rebit_grid(11), &cfg.noise.amplitudes, s.eta0(), &s.noise_spec(0.05)).unwrap();
    println!("amplitude sweep R^2 {}", sw.r_squared);
    assert!(sw.r_squared > 0.95);
}
