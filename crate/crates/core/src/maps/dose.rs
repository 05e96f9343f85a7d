//! ROI intensity curves and dose-response normalization.

use std::collections::BTreeMap;

use crate::acoustics::grid::{FrameStack, Grid};
use crate::geometry::Polygon;
use crate::kinetics::Gas;
use crate::{Error, Result};

/// Pixel indices of a grid that fall inside a polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    pub indices: Vec<usize>,
}

impl RoiMask {
    pub fn new(grid: &Grid, roi: &Polygon) -> Result<Self> {
        Self::union(grid, std::slice::from_ref(roi))
    }

    /// Pixels inside any of `rois`, each counted once.
    pub fn union(grid: &Grid, rois: &[Polygon]) -> Result<Self> {
        let mut indices = Vec::new();
        for j in 0..grid.nx {
            for i in 0..grid.nz {
                let p = grid.point(i, j);
                if rois.iter().any(|r| r.contains(p)) {
                    indices.push(grid.index(i, j));
                }
            }
        }
        if indices.is_empty() {
            return Err(Error::param("analysis.roi", "ROI covers no pixels"));
        }
        Ok(RoiMask { indices })
    }

    pub fn mean(&self, frame: &[f32]) -> f64 {
        self.indices.iter().map(|&k| frame[k] as f64).sum::<f64>() / self.indices.len() as f64
    }
}

/// Mean ROI intensity of every frame.
pub fn roi_intensity_curve(stack: &FrameStack, roi: &Polygon) -> Result<Vec<f64>> {
    let mask = RoiMask::new(&stack.grid, roi)?;
    Ok((0..stack.nt).map(|f| mask.mean(stack.frame(f))).collect())
}

/// Acquisition key: gas and MI in thousandths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DoseKey {
    pub gas: Gas,
    pub mi_milli: u32,
}

impl DoseKey {
    pub const REFERENCE: DoseKey = DoseKey {
        gas: Gas::C4F10,
        mi_milli: 60,
    };

    pub fn new(gas: Gas, mi: f64) -> Self {
        DoseKey {
            gas,
            mi_milli: (mi * 1000.0).round() as u32,
        }
    }

    pub fn mi(&self) -> f64 {
        self.mi_milli as f64 / 1000.0
    }
}

/// Divides each mean intensity by its MI and by the MI-normalized C4F10
/// value at MI 0.06.
pub fn normalize_dose_response(values: &BTreeMap<DoseKey, f64>) -> Result<BTreeMap<DoseKey, f64>> {
    let r = DoseKey::REFERENCE;
    let reference = values
        .get(&r)
        .ok_or_else(|| Error::param("analysis.reference", "C4F10 at MI 0.06 is required for normalization"))?
        / r.mi();
    if !(reference > 0.0) {
        return Err(Error::Domain("reference acquisition has zero intensity".into()));
    }
    values
        .iter()
        .map(|(k, &v)| {
            if k.mi_milli == 0 {
                return Err(Error::param("analysis.mi", "MI must be > 0"));
            }
            Ok((*k, v / k.mi() / reference))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::grid::StackMeta;
    use crate::geometry::Point;

    #[test]
    fn reference_is_one() {
        let mut v = BTreeMap::new();
        v.insert(DoseKey::new(Gas::C4F10, 0.06), 3.0);
        v.insert(DoseKey::new(Gas::C3F8, 0.17), 17.0);
        let n = normalize_dose_response(&v).unwrap();
        assert_eq!(n[&DoseKey::REFERENCE], 1.0);
        assert!((n[&DoseKey::new(Gas::C3F8, 0.17)] - 2.0).abs() < 1e-12);
        v.remove(&DoseKey::REFERENCE);
        assert!(normalize_dose_response(&v).is_err());
    }

    #[test]
    fn zero_stack_gives_zero_curve() {
        let g = Grid::new(20, 20, 100.0, Point::default()).unwrap();
        let s = FrameStack::zeros(g, vec![0.0; 5], StackMeta::default());
        let roi = Polygon::rect(Point::new(0.5, 0.5), Point::new(1.5, 1.5));
        assert_eq!(roi_intensity_curve(&s, &roi).unwrap(), vec![0.0; 5]);
        let outside = Polygon::rect(Point::new(5.0, 5.0), Point::new(6.0, 6.0));
        assert!(roi_intensity_curve(&s, &outside).is_err());
    }
}
