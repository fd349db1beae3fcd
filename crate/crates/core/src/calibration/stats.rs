use serde::{Deserialize, Serialize};

use super::CalibrationReport;
use crate::error::{Error, Result};
use crate::noise::{FlatProfile, Mode, NoiseProfile};

/// The eight numeric profile parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub b_atom: f64,
    pub bg_min: f64,
    pub bg_max: f64,
    pub scan_k: f64,
    pub scan_b: f64,
    pub pw_k: f64,
    pub pw_b: f64,
    pub pw_lambda: f64,
}

impl ParamSet {
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

    pub fn from_values(v: [f64; 8]) -> Self {
        ParamSet {
            b_atom: v[0],
            bg_min: v[1],
            bg_max: v[2],
            scan_k: v[3],
            scan_b: v[4],
            pw_k: v[5],
            pw_b: v[6],
            pw_lambda: v[7],
        }
    }

    pub fn from_profile(p: &NoiseProfile) -> Self {
        let f: FlatProfile = p.flat();
        Self::from_values(f.values())
    }

    pub fn to_profile(&self, mode: Mode) -> NoiseProfile {
        FlatProfile::from_values(self.values(), mode).into()
    }
}

/// Corpus-level mean and spread of calibrated parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    pub mode: Mode,
    pub count: usize,
    pub mean: ParamSet,
    /// Sample standard deviation (zero for a single image).
    pub std: ParamSet,
    pub atom_brightness_min: f64,
    pub atom_brightness_max: f64,
    pub background_min: f64,
    pub background_max: f64,
}

impl ProfileStats {
    pub fn from_profiles(profiles: &[NoiseProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::param("cannot aggregate an empty set of profiles"))?;
        if profiles.iter().any(|p| p.mode != first.mode) {
            return Err(Error::param("cannot aggregate profiles of mixed modes"));
        }
        let n = profiles.len() as f64;
        let rows: Vec<[f64; 8]> = profiles.iter().map(|p| ParamSet::from_profile(p).values()).collect();
        let mut mean = [0.0; 8];
        let mut std = [0.0; 8];
        for i in 0..8 {
            mean[i] = rows.iter().map(|r| r[i]).sum::<f64>() / n;
            if profiles.len() > 1 {
                let ss: f64 = rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum();
                std[i] = (ss / (n - 1.0)).sqrt();
            }
        }
        let fold =
            |f: fn(&NoiseProfile) -> f64, init: f64, op: fn(f64, f64) -> f64| profiles.iter().map(f).fold(init, op);
        Ok(ProfileStats {
            mode: first.mode,
            count: profiles.len(),
            mean: ParamSet::from_values(mean),
            std: ParamSet::from_values(std),
            atom_brightness_min: fold(|p| p.b_atom, f64::INFINITY, f64::min),
            atom_brightness_max: fold(|p| p.b_atom, f64::NEG_INFINITY, f64::max),
            background_min: fold(|p| p.background.b_min, f64::INFINITY, f64::min),
            background_max: fold(|p| p.background.b_max, f64::NEG_INFINITY, f64::max),
        })
    }

    /// Built-in profile statistics: `haadf-real` or `bf-real`.
    pub fn preset(name: &str) -> Option<Self> {
        let (mode, mean, std, atom, bg) = match name {
            "haadf-real" => (
                Mode::Haadf,
                [130.0, 18.0, 45.0, 0.11, 4.76, 0.07, 11.35, 0.27],
                [30.0, 4.0, 10.0, 0.01, 0.4, 0.005, 0.8, 0.03],
                [63.44, 229.32],
                [10.38, 84.23],
            ),
            "bf-real" => (
                Mode::Bf,
                [110.0, 165.0, 215.0, 0.03, 7.85, 0.01, 17.03, 0.28],
                [25.0, 12.0, 10.0, 0.004, 0.6, 0.002, 1.2, 0.03],
                [51.60, 227.85],
                [121.24, 242.45],
            ),
            _ => return None,
        };
        Some(ProfileStats {
            mode,
            count: 1,
            mean: ParamSet::from_values(mean),
            std: ParamSet::from_values(std),
            atom_brightness_min: atom[0],
            atom_brightness_max: atom[1],
            background_min: bg[0],
            background_max: bg[1],
        })
    }

    pub const PRESET_NAMES: [&'static str; 2] = ["haadf-real", "bf-real"];
}

/// Mean and spread of per-image calibrations.
pub fn aggregate(reports: &[CalibrationReport]) -> Result<ProfileStats> {
    let profiles: Vec<NoiseProfile> = reports.iter().map(|r| r.profile).collect();
    ProfileStats::from_profiles(&profiles)
}
