use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse-grid spacing of synthesized background value noise.
pub const DEFAULT_BG_LATTICE: f64 = 64.0;

/// Imaging mode; sets the polarity of atomic columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Bright atoms on a dark background.
    #[serde(rename = "HAADF", alias = "haadf")]
    Haadf,
    /// Dark atoms on a bright background.
    #[serde(rename = "BF", alias = "bf")]
    Bf,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Haadf => "HAADF",
            Mode::Bf => "BF",
        }
    }

    /// +1 when atoms add brightness, -1 when they remove it.
    pub fn sign(self) -> f64 {
        match self {
            Mode::Haadf => 1.0,
            Mode::Bf => -1.0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haadf" => Ok(Mode::Haadf),
            "bf" => Ok(Mode::Bf),
            _ => Err(Error::param(format!("unknown mode {s:?} (expected HAADF or BF)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanNoiseParams {
    /// Slope of the scan-noise std against gradient magnitude.
    pub k: f64,
    /// Intercept in image units.
    pub b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseParams {
    pub k: f64,
    pub b: f64,
    pub lambda: f64,
}

impl PointwiseParams {
    /// Pointwise std at pixel value `v`, clamped at zero.
    #[inline]
    pub fn sigma_at(&self, v: f64) -> f64 {
        (self.k * v + self.b).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    pub b_min: f64,
    pub b_max: f64,
    /// Value-noise lattice spacing in pixels.
    pub lattice: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "FlatProfile", into = "FlatProfile")]
pub struct NoiseProfile {
    pub b_atom: f64,
    pub background: BackgroundParams,
    pub scan: ScanNoiseParams,
    pub pointwise: PointwiseParams,
    pub mode: Mode,
}

/// Flat key-value form of [`NoiseProfile`] used in every serialized document.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatProfile {
    pub b_atom: f64,
    pub bg_min: f64,
    pub bg_max: f64,
    pub scan_k: f64,
    pub scan_b: f64,
    pub pw_k: f64,
    pub pw_b: f64,
    pub pw_lambda: f64,
    pub mode: Mode,
}

impl From<FlatProfile> for NoiseProfile {
    fn from(f: FlatProfile) -> Self {
        NoiseProfile {
            b_atom: f.b_atom,
            background: BackgroundParams {
                b_min: f.bg_min,
                b_max: f.bg_max,
                lattice: DEFAULT_BG_LATTICE,
            },
            scan: ScanNoiseParams {
                k: f.scan_k,
                b: f.scan_b,
            },
            pointwise: PointwiseParams {
                k: f.pw_k,
                b: f.pw_b,
                lambda: f.pw_lambda,
            },
            mode: f.mode,
        }
    }
}

impl From<NoiseProfile> for FlatProfile {
    fn from(p: NoiseProfile) -> Self {
        FlatProfile {
            b_atom: p.b_atom,
            bg_min: p.background.b_min,
            bg_max: p.background.b_max,
            scan_k: p.scan.k,
            scan_b: p.scan.b,
            pw_k: p.pointwise.k,
            pw_b: p.pointwise.b,
            pw_lambda: p.pointwise.lambda,
            mode: p.mode,
        }
    }
}

/// Names of the eight numeric profile fields, in serialization order.
pub const PROFILE_FIELDS: [&str; 8] = [
    "b_atom",
    "bg_min",
    "bg_max",
    "scan_k",
    "scan_b",
    "pw_k",
    "pw_b",
    "pw_lambda",
];

impl FlatProfile {
    pub fn values(&self) -> [f64; 8] {
        [
            self.b_atom,
            self.bg_min,
            self.bg_max,
            self.scan_k,
            self.scan_b,
            self.pw_k,
            self.pw_b,
            self.pw_lambda,
        ]
    }

    pub fn from_values(v: [f64; 8], mode: Mode) -> Self {
        FlatProfile {
            b_atom: v[0],
            bg_min: v[1],
            bg_max: v[2],
            scan_k: v[3],
            scan_b: v[4],
            pw_k: v[5],
            pw_b: v[6],
            pw_lambda: v[7],
            mode,
        }
    }
}

impl NoiseProfile {
    pub fn flat(&self) -> FlatProfile {
        (*self).into()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(m));
        if !(self.b_atom > 0.0) {
            return bad(format!("b_atom must be positive, got {}", self.b_atom));
        }
        let bg = &self.background;
        if !(0.0 <= bg.b_min && bg.b_min <= bg.b_max && bg.b_max <= 255.0) {
            return bad(format!(
                "background bounds must satisfy 0 <= min <= max <= 255, got [{}, {}]",
                bg.b_min, bg.b_max
            ));
        }
        if !(bg.lattice >= 2.0) {
            return bad(format!("background lattice must be >= 2, got {}", bg.lattice));
        }
        if !(self.scan.b >= 0.0) || !self.scan.k.is_finite() {
            return bad(format!("scan intercept must be >= 0, got {}", self.scan.b));
        }
        let pw = &self.pointwise;
        if !(pw.lambda > -0.5 && pw.lambda <= 1.0) {
            return bad(format!("lambda must lie in (-0.5, 1], got {}", pw.lambda));
        }
        if !(pw.sigma_raw(0.0) >= 0.0 && pw.sigma_raw(255.0) >= 0.0) {
            return bad(format!(
                "pointwise sigma must be non-negative on [0, 255] (k={}, b={})",
                pw.k, pw.b
            ));
        }
        Ok(())
    }
}

impl PointwiseParams {
    fn sigma_raw(&self, v: f64) -> f64 {
        self.k * v + self.b
    }
}
