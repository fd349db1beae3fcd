//! Fixtures shared by the criterion benchmarks in `benches/`.

use stemsynth::calibration::ProfileStats;
use stemsynth::synthesis::{lattice_presets, synth_sample, DatasetSample, SynthConfig};

/// One synthetic HAADF pair from the `haadf-real` preset.
pub fn haadf_sample(size: usize, index: u64) -> DatasetSample {
    let stats = ProfileStats::preset("haadf-real").expect("preset exists");
    let cfg = SynthConfig {
        size,
        ..Default::default()
    };
    synth_sample(lattice_presets(), &stats, &cfg, 42, index).expect("valid config")
}
