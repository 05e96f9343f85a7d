/// FWHM of a unit-σ Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Separable anisotropic Gaussian point-spread function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfModel {
    pub fwhm_lateral_um: f64,
    pub fwhm_axial_um: f64,
    pub amplitude: f64,
}

impl PsfModel {
    /// Wire-calibrated PSF of the 5-angle compounded sequence.
    pub const AWSALM: PsfModel = PsfModel {
        fwhm_lateral_um: 543.0,
        fwhm_axial_um: 530.0,
        amplitude: 1.0,
    };

    /// Wire-calibrated PSF of the single-angle sequence.
    pub const FAST_AWSALM: PsfModel = PsfModel {
        fwhm_lateral_um: 487.0,
        fwhm_axial_um: 574.0,
        amplitude: 1.0,
    };

    pub fn new(fwhm_lateral_um: f64, fwhm_axial_um: f64) -> crate::Result<Self> {
        if !(fwhm_lateral_um > 0.0 && fwhm_axial_um > 0.0) {
            return Err(crate::Error::param("psf", "both FWHMs must be > 0"));
        }
        Ok(PsfModel {
            fwhm_lateral_um,
            fwhm_axial_um,
            amplitude: 1.0,
        })
    }

    pub fn sigma_lateral_mm(&self) -> f64 {
        self.fwhm_lateral_um * 1e-3 / FWHM_PER_SIGMA
    }

    pub fn sigma_axial_mm(&self) -> f64 {
        self.fwhm_axial_um * 1e-3 / FWHM_PER_SIGMA
    }

    /// Value at offset `(dz, dx)` mm from the centre.
    pub fn eval(&self, dz: f64, dx: f64) -> f64 {
        let a = dz / self.sigma_axial_mm();
        let b = dx / self.sigma_lateral_mm();
        self.amplitude * (-0.5 * (a * a + b * b)).exp()
    }
}
