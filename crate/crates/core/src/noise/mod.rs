//! Forward noise model: `noisy = clamp(clean + background + scan + pointwise)`.

mod generate;
mod params;
mod tukey;
mod value;

pub use generate::{
    apply_noise, gen_background, gen_pointwise_noise, gen_scan_noise, scan_unit_field, scan_unit_row, NoiseComponents,
    SCAN_LATTICES,
};
pub use params::{
    BackgroundParams, FlatProfile, Mode, NoiseProfile, PointwiseParams, ScanNoiseParams, DEFAULT_BG_LATTICE,
    PROFILE_FIELDS,
};
pub(crate) use tukey::quantile_from_logs;
pub use tukey::{sample_tukey, tukey_quantile, tukey_unit_std, TukeySampler};
pub use value::{value_noise_1d, value_noise_2d};
