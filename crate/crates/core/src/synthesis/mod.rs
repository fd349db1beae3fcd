//! Atomic scenes, clean renders, labels and paired-dataset generation.

mod arrange;
mod dataset;
mod lattice;
mod render;

pub use arrange::{apply_defects, apply_embeddings, build_random, interstitial_candidates};
pub use dataset::{
    read_manifest, sample_profile, synth_dataset, synth_sample, DatasetSample, ManifestRow, SampleRecord, SynthConfig,
    MANIFEST_FILE,
};
pub use lattice::{build_periodic, lattice_preset, lattice_presets, LatticeSpec, MotifSite, Species};
pub use render::{gaussian_field, render_clean, render_detect_label, render_sr_label};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::Mode;

/// One atomic column in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSite {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    pub rel_brightness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arrangement {
    Periodic,
    /// Periodic lattice with sites deleted independently.
    Defects {
        p_delete: f64,
    },
    /// Periodic lattice with interstitial sites added.
    Embeddings {
        p_add: f64,
    },
    /// Fully random placement at `density` sites per square pixel.
    Random {
        density: f64,
    },
}

impl Arrangement {
    pub fn name(&self) -> &'static str {
        match self {
            Arrangement::Periodic => "periodic",
            Arrangement::Defects { .. } => "defects",
            Arrangement::Embeddings { .. } => "embeddings",
            Arrangement::Random { .. } => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub mode: Mode,
    /// Frame side in pixels.
    pub size: usize,
    /// Pixels per lattice unit.
    pub scale: f64,
    /// Lattice rotation in degrees.
    pub rotation: f64,
    /// Lattice origin shift in fractions of the basis vectors.
    #[serde(default)]
    pub offset: [f64; 2],
    pub arrangement: Arrangement,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::param("scene size must be positive"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::param(format!("scale must be positive, got {}", self.scale)));
        }
        match self.arrangement {
            Arrangement::Defects { p_delete: p } | Arrangement::Embeddings { p_add: p }
                if !(0.0..=1.0).contains(&p) =>
            {
                Err(Error::param(format!("probability must lie in [0, 1], got {p}")))
            }
            Arrangement::Random { density } if !(density > 0.0) => {
                Err(Error::param(format!("density must be positive, got {density}")))
            }
            _ => Ok(()),
        }
    }
}
