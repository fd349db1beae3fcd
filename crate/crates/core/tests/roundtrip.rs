//! Corpus-scale round trip: synthesize frames, calibrate each, aggregate.

use rayon::prelude::*;
use stemsynth::calibration::{aggregate, calibrate_image, CalibrationConfig, ParamSet, ProfileStats};
use stemsynth::synthesis::{lattice_presets, synth_sample, SynthConfig};
use stemsynth::NoiseProfile;

const NAMES: [&str; 8] = [
    "b_atom",
    "bg_min",
    "bg_max",
    "scan_k",
    "scan_b",
    "pw_k",
    "pw_b",
    "pw_lambda",
];

/// Calibrates `n` frames drawn from `stats`; returns (recovered, generating) means.
fn run(stats: &ProfileStats, n: usize, seed: u64) -> ([f64; 8], [f64; 8]) {
    let cfg = SynthConfig::default();
    let ccfg = CalibrationConfig::default();
    let pairs: Vec<_> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let s = synth_sample(lattice_presets(), stats, &cfg, seed, i).unwrap();
            let r = calibrate_image(&s.noisy, s.profile.mode, &ccfg, &format!("frame {i}"), None);
            (r, s.profile)
        })
        .collect();
    let mut reports = Vec::new();
    let mut truth: Vec<NoiseProfile> = Vec::new();
    for (r, p) in pairs {
        match r {
            Ok(r) => {
                reports.push(r);
                truth.push(p);
            }
            Err(e) => eprintln!("calibration failed: {e}"),
        }
    }
    assert!(
        reports.len() >= n * 9 / 10,
        "only {} of {n} frames calibrated",
        reports.len()
    );
    let got = aggregate(&reports).unwrap().mean.values();
    let want = ProfileStats::from_profiles(&truth).unwrap().mean.values();
    for i in 0..8 {
        eprintln!("{:<10} recovered {:9.4}  generating {:9.4}", NAMES[i], got[i], want[i]);
    }
    (got, want)
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

#[test]
fn jittered_profile_aggregate() {
    // one generating profile, every parameter jittered by 5% per frame
    let mean = ParamSet {
        b_atom: 140.0,
        bg_min: 20.0,
        bg_max: 45.0,
        scan_k: 0.11,
        scan_b: 4.76,
        pw_k: 0.07,
        pw_b: 11.35,
        pw_lambda: 0.27,
    };
    let mut stats = ProfileStats::preset("haadf-real").unwrap();
    stats.mean = mean;
    stats.std = ParamSet::from_values(mean.values().map(|v| 0.05 * v));
    let (got, want) = run(&stats, 20, 3);
    for i in [0, 1, 4, 5, 6] {
        assert!(rel(got[i], want[i]) <= 0.05, "{}", NAMES[i]);
    }
    // scan k scatters about ±40% per frame, so it gets the ±20% round-trip
    // tolerance; the background maximum is the least stable extreme
    assert!(rel(got[2], want[2]) <= 0.15, "bg_max");
    assert!(rel(got[3], want[3]) <= 0.20, "scan_k");
    assert!((got[7] - want[7]).abs() <= 0.1, "pw_lambda");
}

#[test]
fn bf_profile_aggregate() {
    let stats = ProfileStats::preset("bf-real").unwrap();
    let (got, want) = run(&stats, 12, 9);
    assert!(rel(got[0], want[0]) <= 0.10, "b_atom");
    assert!(rel(got[6], want[6]) <= 0.15, "pw_b");
    assert!((got[7] - want[7]).abs() <= 0.1, "pw_lambda");
}
