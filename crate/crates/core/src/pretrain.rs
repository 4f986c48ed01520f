//! Key-point spatial losses, consistency losses between the two
//! reconstruction branches, and the weighted pre-training objective.
//!
//! The two branches are a ViT reconstructor and a UNETR++ reconstructor. Their
//! outputs (reconstructed volumes and predicted key points) are plain values
//! here; no model is involved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{masked_mse, mse, topo_loss};
use crate::volume::{KeyPointSet, PatchMask, Volume};

/// Balancing weights of the overall objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Share of the UNETR++ branch; the ViT branch gets `1 - lambda1`.
    pub lambda1: f64,
    /// Weight of the topological and spatial terms within each branch.
    pub lambda2: f64,
    /// Weight of the two consistency terms.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.5, lambda2: 0.1, lambda3: 0.1 }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2, lambda3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { lambda1, lambda2, lambda3 } = *self;
        if !(0.0..=1.0).contains(&lambda1) {
            return Err(Error::Config(format!("lambda1 must lie in [0, 1], got {lambda1}")));
        }
        if !(0.0..=0.5).contains(&lambda2) {
            return Err(Error::Config(format!("lambda2 must lie in [0, 0.5], got {lambda2}")));
        }
        if !(lambda3 >= 0.0 && lambda3.is_finite()) {
            return Err(Error::Config(format!("lambda3 must be finite and >= 0, got {lambda3}")));
        }
        Ok(())
    }

    /// Coefficients of the eight terms, in [`LossTerms`] field order.
    pub fn coefficients(&self) -> [f64; 8] {
        let Self { lambda1: l1, lambda2: l2, lambda3: l3 } = *self;
        [
            (1.0 - l1) * (1.0 - 2.0 * l2),
            (1.0 - l1) * l2,
            (1.0 - l1) * l2,
            l1 * (1.0 - 2.0 * l2),
            l1 * l2,
            l1 * l2,
            l3,
            l3,
        ]
    }
}

/// The eight unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub mse_vit: f64,
    pub topo_vit: f64,
    pub spa_vit: f64,
    pub mse_unetrpp: f64,
    pub topo_unetrpp: f64,
    pub spa_unetrpp: f64,
    pub spa_consis: f64,
    pub rec_consis: f64,
}

impl LossTerms {
    pub fn splat(x: f64) -> Self {
        Self::from_array([x; 8])
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.mse_vit,
            self.topo_vit,
            self.spa_vit,
            self.mse_unetrpp,
            self.topo_unetrpp,
            self.spa_unetrpp,
            self.spa_consis,
            self.rec_consis,
        ]
    }

    pub fn from_array(t: [f64; 8]) -> Self {
        Self {
            mse_vit: t[0],
            topo_vit: t[1],
            spa_vit: t[2],
            mse_unetrpp: t[3],
            topo_unetrpp: t[4],
            spa_unetrpp: t[5],
            spa_consis: t[6],
            rec_consis: t[7],
        }
    }
}

/// All eight terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse_vit: f64,
    pub topo_vit: f64,
    pub spa_vit: f64,
    pub mse_unetrpp: f64,
    pub topo_unetrpp: f64,
    pub spa_unetrpp: f64,
    pub spa_consis: f64,
    pub rec_consis: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            mse_vit: self.mse_vit,
            topo_vit: self.topo_vit,
            spa_vit: self.spa_vit,
            mse_unetrpp: self.mse_unetrpp,
            topo_unetrpp: self.topo_unetrpp,
            spa_unetrpp: self.spa_unetrpp,
            spa_consis: self.spa_consis,
            rec_consis: self.rec_consis,
        }
    }
}

/// Weighted sum of the eight terms.
pub fn overall_loss(terms: &LossTerms, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let values = terms.as_array();
    if let Some(bad) = values.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::Config(format!("loss terms must be finite and non-negative, got {bad}")));
    }
    let total = w.coefficients().iter().zip(values).map(|(c, t)| c * t).sum();
    Ok(LossBreakdown {
        mse_vit: terms.mse_vit,
        topo_vit: terms.topo_vit,
        spa_vit: terms.spa_vit,
        mse_unetrpp: terms.mse_unetrpp,
        topo_unetrpp: terms.topo_unetrpp,
        spa_unetrpp: terms.spa_unetrpp,
        spa_consis: terms.spa_consis,
        rec_consis: terms.rec_consis,
        total,
    })
}

fn keypoint_mse(a: &KeyPointSet, b: &KeyPointSet) -> f64 {
    let sum: f64 = a.coordinates().zip(b.coordinates()).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / 27.0
}

/// MSE between ground-truth and predicted key points, averaged over all 27
/// coordinates.
pub fn spatial_loss(truth: &KeyPointSet, predicted: &KeyPointSet) -> f64 {
    keypoint_mse(truth, predicted)
}

/// MSE between the key points predicted by the two branches.
pub fn spatial_consistency(vit: &KeyPointSet, unetrpp: &KeyPointSet) -> f64 {
    keypoint_mse(vit, unetrpp)
}

/// MSE between the two reconstructions over masked patches.
pub fn rec_consistency(vit: &Volume, unetrpp: &Volume, mask: &PatchMask) -> Result<f64> {
    Ok(masked_mse(vit, unetrpp, mask)?.value)
}

/// Everything needed to evaluate the objective on one crop.
#[derive(Debug, Clone, Copy)]
pub struct PretrainInputs<'a> {
    pub target: &'a Volume,
    pub recon_vit: &'a Volume,
    pub recon_unetrpp: &'a Volume,
    pub mask: &'a PatchMask,
    pub keypoints_truth: &'a KeyPointSet,
    pub keypoints_vit: &'a KeyPointSet,
    pub keypoints_unetrpp: &'a KeyPointSet,
    /// Reconstruction MSE over the whole volume instead of masked patches.
    pub full_mse: bool,
}

/// Computes all eight terms from volumes and key points.
pub fn compute_terms(inputs: &PretrainInputs<'_>) -> Result<LossTerms> {
    let reconstruction = |recon: &Volume| -> Result<f64> {
        if inputs.full_mse {
            mse(inputs.target, recon)
        } else {
            Ok(masked_mse(inputs.target, recon, inputs.mask)?.value)
        }
    };
    let (topo_vit, topo_unetrpp) = rayon::join(
        || topo_loss(inputs.target, inputs.recon_vit, false),
        || topo_loss(inputs.target, inputs.recon_unetrpp, false),
    );
    Ok(LossTerms {
        mse_vit: reconstruction(inputs.recon_vit)?,
        topo_vit: topo_vit?.value,
        spa_vit: spatial_loss(inputs.keypoints_truth, inputs.keypoints_vit),
        mse_unetrpp: reconstruction(inputs.recon_unetrpp)?,
        topo_unetrpp: topo_unetrpp?.value,
        spa_unetrpp: spatial_loss(inputs.keypoints_truth, inputs.keypoints_unetrpp),
        spa_consis: spatial_consistency(inputs.keypoints_vit, inputs.keypoints_unetrpp),
        rec_consis: rec_consistency(inputs.recon_vit, inputs.recon_unetrpp, inputs.mask)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::make_mask;

    fn constant_points(c: f64) -> KeyPointSet {
        KeyPointSet::new([[c; 3]; 9]).unwrap()
    }

    #[test]
    fn default_coefficients() {
        let c = LossWeights::default().coefficients();
        assert_eq!(c, [0.4, 0.05, 0.05, 0.4, 0.05, 0.05, 0.1, 0.1]);
    }

    #[test]
    fn all_ones_total() {
        let b = overall_loss(&LossTerms::splat(1.0), &LossWeights::default()).unwrap();
        assert!((b.total - 1.2).abs() < 1e-12);
    }

    #[test]
    fn lambda1_one_silences_vit_branch() {
        let w = LossWeights::new(1.0, 0.1, 0.1).unwrap();
        let c = w.coefficients();
        assert_eq!(&c[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn swapping_lambda1_swaps_branches() {
        let a = LossWeights::new(0.3, 0.2, 0.1).unwrap().coefficients();
        let b = LossWeights::new(0.7, 0.2, 0.1).unwrap().coefficients();
        for i in 0..3 {
            assert!((a[i] - b[i + 3]).abs() < 1e-15);
            assert!((a[i + 3] - b[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_invalid_weights_and_terms() {
        assert!(LossWeights::new(1.1, 0.1, 0.1).is_err());
        assert!(LossWeights::new(0.5, 0.6, 0.1).is_err());
        assert!(LossWeights::new(0.5, 0.1, -0.1).is_err());
        let mut t = LossTerms::splat(1.0);
        t.topo_vit = -1.0;
        assert!(overall_loss(&t, &LossWeights::default()).is_err());
    }

    #[test]
    fn spatial_loss_cases() {
        let p = constant_points(-0.5);
        assert_eq!(spatial_loss(&p, &p), 0.0);
        assert_eq!(spatial_loss(&p, &constant_points(0.5)), 1.0);

        let mut pts = *p.points();
        pts[8][0] += 0.3;
        let q = KeyPointSet::new(pts).unwrap();
        assert!((spatial_loss(&p, &q) - 0.09 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn spatial_consistency_cases() {
        let a = constant_points(0.25);
        let b = constant_points(-0.25);
        assert_eq!(spatial_consistency(&a, &a), 0.0);
        assert_eq!(spatial_consistency(&a, &b), 0.25);
        assert_eq!(spatial_consistency(&b, &a), spatial_consistency(&a, &b));
    }

    #[test]
    fn rec_consistency_only_sees_masked_patches() {
        let mask = make_mask([4, 4, 4], [2, 2, 2], 0.5, 11).unwrap();
        let a = Volume::filled([4, 4, 4], 0.2).unwrap();
        assert_eq!(rec_consistency(&a, &a, &mask).unwrap(), 0.0);

        let shifted_masked =
            Volume::from_fn([4, 4, 4], |x, y, z| if mask.is_voxel_masked([x, y, z]) { 1.2 } else { 0.2 }).unwrap();
        assert!((rec_consistency(&a, &shifted_masked, &mask).unwrap() - 1.0).abs() < 1e-15);

        let shifted_unmasked =
            Volume::from_fn([4, 4, 4], |x, y, z| if mask.is_voxel_masked([x, y, z]) { 0.2 } else { 5.0 }).unwrap();
        assert_eq!(rec_consistency(&a, &shifted_unmasked, &mask).unwrap(), 0.0);
    }
}
