//! Super-localization chain: motion compensation, TGC, SVD clutter
//! suppression, Wiener and low-pass filtering, PSF estimation, sub-pixel
//! localization and tracking.

pub mod export;
pub mod localize;
pub mod lowpass;
pub mod motion;
pub mod psf_est;
pub mod svd;
pub mod tgc;
pub mod track;
pub mod wiener;

use std::time::Instant;

pub use localize::{localize, LocalizationEvent, LocalizeParams, Localizer};
pub use lowpass::lowpass_3d;
pub use motion::{motion_compensate, MotionReport};
pub use psf_est::{estimate_psf, PsfEstimate};
pub use svd::{cutoffs, svd_clutter_filter, svd_filter, SvdBlock, SvdMode};
pub use tgc::tgc_correct;
pub use track::{hungarian, track_events, Track, TrackParams, TrackPoint, TrackingResult};
pub use wiener::wiener_axial_temporal;

use crate::acoustics::grid::FrameStack;
use crate::acoustics::psf::PsfModel;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Maximum rigid shift in pixels; `None` skips motion compensation.
    pub motion_max_shift: Option<usize>,
    pub motion_reference: usize,
    /// Gain cap; `None` skips TGC.
    pub tgc_max_gain: Option<f64>,
    pub svd_mode: SvdMode,
    pub svd_low_frac: f64,
    pub svd_high_frac: f64,
    pub svd_rectify: bool,
    /// `(axial px, frames)`; `None` skips the Wiener filter.
    pub wiener_window: Option<(usize, usize)>,
    /// Fixed noise power, or `None` to estimate it.
    pub wiener_noise: Option<f64>,
    /// `(axial, lateral, temporal)` sigmas in pixels and frames.
    pub lowpass_sigma: (f64, f64, f64),
    /// PSF used for localization. Estimated from the data when `psf_samples > 0`.
    pub psf: PsfModel,
    pub psf_samples: usize,
    pub localize: LocalizeParams,
    pub track: TrackParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            motion_max_shift: None,
            motion_reference: 0,
            tgc_max_gain: None,
            svd_mode: SvdMode::Auto,
            svd_low_frac: 0.05,
            svd_high_frac: 0.95,
            svd_rectify: true,
            wiener_window: Some((5, 5)),
            wiener_noise: None,
            lowpass_sigma: (0.0, 0.0, 0.0),
            psf: PsfModel::FAST_AWSALM,
            psf_samples: 0,
            localize: LocalizeParams::default(),
            track: TrackParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.localize.validate()?;
        self.track.validate()?;
        if !(0.0..1.0).contains(&self.svd_low_frac) || !(self.svd_high_frac > self.svd_low_frac && self.svd_high_frac <= 1.0) {
            return Err(crate::Error::param("pipeline.svd_low", "need 0 <= low < high <= 1"));
        }
        let (a, b, c) = self.lowpass_sigma;
        if !(a >= 0.0 && b >= 0.0 && c >= 0.0) {
            return Err(crate::Error::param("pipeline.lowpass_sigma", "sigmas must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub events: Vec<Vec<LocalizationEvent>>,
    pub tracks: Vec<Track>,
    pub psf: Option<PsfModel>,
    pub motion: Option<MotionReport>,
    pub svd_blocks: Vec<SvdBlock>,
    pub wiener_noise: Option<f64>,
    /// Wall time per stage in seconds.
    pub timings: Vec<(&'static str, f64)>,
    pub greedy_fallback: bool,
}

impl PipelineOutput {
    pub fn n_events(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }
}

/// Runs the configured chain on `stack` in place.
pub fn run(stack: &mut FrameStack, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut out = PipelineOutput::default();
    if stack.nt == 0 || stack.grid.is_empty() {
        return Ok(out);
    }
    let mut clock = Instant::now();
    let mut lap = |out: &mut PipelineOutput, name: &'static str| {
        let s = clock.elapsed().as_secs_f64();
        log::info!("stage {name}: {s:.3} s");
        out.timings.push((name, s));
        clock = Instant::now();
    };

    if let Some(ms) = cfg.motion_max_shift {
        out.motion = Some(motion_compensate(stack, cfg.motion_reference, ms)?);
        lap(&mut out, "motion");
    }
    if let Some(g) = cfg.tgc_max_gain {
        tgc_correct(stack, g);
        lap(&mut out, "tgc");
    }
    out.svd_blocks = svd_filter(stack, cfg.svd_mode, cfg.svd_low_frac, cfg.svd_high_frac, cfg.svd_rectify)?;
    lap(&mut out, "svd");
    if let Some((wz, wt)) = cfg.wiener_window {
        let (wz, wt) = (wz.min(stack.grid.nz), wt.min(stack.nt));
        if wz >= 3 && wt >= 3 {
            out.wiener_noise = Some(wiener_axial_temporal(stack, wz, wt, cfg.wiener_noise)?);
        } else {
            log::warn!("stack too small for the Wiener window; skipped");
        }
        lap(&mut out, "wiener");
    }
    let (sz, sx, st) = cfg.lowpass_sigma;
    if sz > 0.0 || sx > 0.0 || st > 0.0 {
        lowpass_3d(stack, sz, sx, st)?;
        lap(&mut out, "lowpass");
    }
    let psf = if cfg.psf_samples > 0 {
        let est = estimate_psf(stack, cfg.psf_samples, &cfg.psf)?;
        lap(&mut out, "psf");
        est.psf
    } else {
        cfg.psf
    };
    out.psf = Some(psf);
    let loc = Localizer::new(stack.grid, psf, cfg.localize)?;
    out.events = loc.localize_stack(stack);
    lap(&mut out, "localize");
    let tr = track_events(&out.events, &stack.frame_times, &cfg.track)?;
    out.tracks = tr.tracks;
    out.greedy_fallback = tr.greedy_fallback;
    lap(&mut out, "track");
    Ok(out)
}
