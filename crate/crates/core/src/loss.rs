//! Topological loss between a volume and its reconstruction, and masked
//! reconstruction error.

use rayon::prelude::*;

use crate::diagram::{w2_distance, Matching, PersistenceDiagram};
use crate::error::{Error, Result};
use crate::filtration::{compute_persistence, Diagrams};
use crate::volume::{PatchMask, Volume};

/// Value of the topological loss, its per-dimension distances, and the
/// gradient with respect to the reconstructed volume when requested.
#[derive(Debug, Clone)]
pub struct TopoLossResult {
    /// `sqrt(w0^2 + w1^2 + w2^2)`.
    pub value: f64,
    pub per_dim_w2: [f64; 3],
    /// Derivative of `value` with respect to each voxel of the reconstruction.
    pub gradient: Option<Volume>,
    pub matchings: [Matching; 3],
    /// Diagrams of the reconstruction the matchings refer to (right side).
    pub recon_diagrams: Diagrams,
}

/// Topological loss between `target` and `recon`. The gradient, if asked
/// for, is taken with respect to `recon` only.
pub fn topo_loss(target: &Volume, recon: &Volume, want_gradient: bool) -> Result<TopoLossResult> {
    target.check_same_dims(recon)?;
    let (dt, dr) = rayon::join(|| compute_persistence(target), || compute_persistence(recon));
    topo_loss_from_diagrams(&dt, dr, want_gradient.then_some(recon.dims()))
}

/// Topological loss against precomputed target diagrams.
pub fn topo_loss_against(target: &Diagrams, recon: &Volume, want_gradient: bool) -> Result<TopoLossResult> {
    topo_loss_from_diagrams(target, compute_persistence(recon), want_gradient.then_some(recon.dims()))
}

/// Topological loss between two sets of diagrams. A gradient is produced
/// over a volume of `grad_dims` when given; the recon diagrams' vertices
/// must lie inside it.
pub fn topo_loss_from_diagrams(
    target: &Diagrams,
    recon: Diagrams,
    grad_dims: Option<[usize; 3]>,
) -> Result<TopoLossResult> {
    let solved: Vec<(f64, Matching)> =
        (0..3).into_par_iter().map(|k| w2_distance(&target[k], &recon[k])).collect::<Result<_>>()?;
    let total_sq: f64 = solved.iter().map(|(_, m)| m.total_sq_cost).sum();
    let value = total_sq.sqrt();
    let per_dim_w2 = [solved[0].0, solved[1].0, solved[2].0];
    let mut matchings = solved.into_iter().map(|(_, m)| m);
    let matchings = [matchings.next().unwrap(), matchings.next().unwrap(), matchings.next().unwrap()];

    let gradient = match grad_dims {
        None => None,
        Some(dims) => Some(route_gradient(target, &recon, &matchings, value, dims)?),
    };
    Ok(TopoLossResult { value, per_dim_w2, gradient, matchings, recon_diagrams: recon })
}

/// Sends the derivative of each matched cost term to the critical voxel of
/// the reconstruction-side coordinate it depends on.
fn route_gradient(
    target: &Diagrams,
    recon: &Diagrams,
    matchings: &[Matching; 3],
    value: f64,
    dims: [usize; 3],
) -> Result<Volume> {
    let [nx, ny, nz] = dims;
    let mut grad = vec![0.0; nx * ny * nz];
    if value == 0.0 {
        return Volume::new(dims, grad);
    }
    let index = |v: [usize; 3]| -> Result<usize> {
        if v[0] >= nx || v[1] >= ny || v[2] >= nz {
            return Err(Error::Shape(format!("critical vertex {v:?} outside volume {dims:?}")));
        }
        Ok(v[0] + nx * (v[1] + ny * v[2]))
    };
    let scale = 1.0 / (2.0 * value);
    for k in 0..3 {
        let (dt, dr): (&PersistenceDiagram, &PersistenceDiagram) = (&target[k], &recon[k]);
        for &pair in &matchings[k].pairs {
            match pair {
                (Some(i), Some(j)) => {
                    let (p, q) = (&dt.points()[i], &dr.points()[j]);
                    let (db, dd) = (q.birth - p.birth, q.death - p.death);
                    // ties go through the birth coordinate
                    if db.abs() >= dd.abs() {
                        grad[index(q.birth_vertex)?] += 2.0 * db * scale;
                    } else {
                        grad[index(q.death_vertex)?] += 2.0 * dd * scale;
                    }
                }
                (None, Some(j)) => {
                    let q = &dr.points()[j];
                    let half = (q.birth - q.death) / 2.0;
                    grad[index(q.birth_vertex)?] += half * scale;
                    grad[index(q.death_vertex)?] -= half * scale;
                }
                _ => {}
            }
        }
    }
    Volume::new(dims, grad)
}

/// Mean squared error over the voxels of masked patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedMse {
    pub value: f64,
    pub masked_voxels: usize,
}

impl MaskedMse {
    /// No patch was masked; `value` is reported as 0.
    pub fn is_degenerate(&self) -> bool {
        self.masked_voxels == 0
    }
}

pub fn masked_mse(target: &Volume, recon: &Volume, mask: &PatchMask) -> Result<MaskedMse> {
    target.check_same_dims(recon)?;
    mask.check_covers(target)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&a, &b), masked) in target.data().iter().zip(recon.data()).zip(mask.voxel_flags()) {
        if masked {
            let d = a - b;
            sum += d * d;
            count += 1;
        }
    }
    let value = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(MaskedMse { value, masked_voxels: count })
}

/// Mean squared error over every voxel.
pub fn mse(target: &Volume, recon: &Volume) -> Result<f64> {
    target.check_same_dims(recon)?;
    let sum: f64 = target.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / target.len() as f64)
}
