//! Transmit schedules, local MI fields and image formation.
//!
//! The default image path renders PSF-shaped blobs directly on the pixel
//! grid ([`render`]). A small point-scatterer channel-data simulator with a
//! delay-and-sum beamformer ([`channel`]) is available for checks of the
//! image model at desk scale.

pub mod channel;
pub mod grid;
pub mod mi;
pub mod psf;
pub mod render;
pub mod sequence;

pub use grid::{FrameStack, Grid, Image, SequenceKind, StackMeta};
pub use mi::{derate_mi, focused_mi_field, plane_wave_mi_profile, Beam, FocusedBeam};
pub use psf::PsfModel;
pub use render::{ClutterField, Motion, Renderer, Scatterer};
pub use sequence::{
    build_awsalm_sequence, build_fast_awsalm_sequence, AwsalmConfig, FastAwsalmConfig, PulseSequence, TransmitEvent,
    TransmitKind,
};

/// Speed of sound in mm/µs (1540 m/s).
pub const SPEED_OF_SOUND_MM_US: f64 = 1.54;
/// Imaging centre frequency.
pub const CENTER_FREQUENCY_MHZ: f64 = 4.0;
/// Soft-tissue attenuation used for derating.
pub const ATTENUATION_DB_PER_MHZ_CM: f64 = 0.5;

/// Wavelength in mm at `freq_mhz` (0.385 mm at 4 MHz).
pub fn wavelength_mm(freq_mhz: f64) -> f64 {
    SPEED_OF_SOUND_MM_US / freq_mhz
}
