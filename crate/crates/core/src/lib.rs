//! Persistent homology of 3D volumes on cubical complexes, exact 2-Wasserstein
//! distances between persistence diagrams, and the loss terms used for
//! topology- and spatiality-aware masked-autoencoder pre-training.
//!
//! The main entry points are:
//!
//! * [`compute_persistence`] - super-level-set persistence in dimensions 0, 1 and 2,
//!   with the critical voxel of every birth and death recorded.
//! * [`w2_distance`] - exact 2-Wasserstein distance between two diagrams via
//!   min-cost perfect matching with diagonal augmentation.
//! * [`topo_loss`] - the topological loss between a volume and its
//!   reconstruction, with a gradient with respect to the reconstruction.
//! * [`pretrain`] - key-point spatial losses, consistency losses and the weighted
//!   pre-training objective.
//!
//! ```
//! use cubetop::{compute_persistence, Volume};
//!
//! let v = Volume::new([1, 1, 3], vec![5.0, 1.0, 5.0]).unwrap();
//! let diagrams = compute_persistence(&v);
//! assert_eq!(diagrams[0].len(), 2);
//! assert!(diagrams[1].is_empty() && diagrams[2].is_empty());
//! ```

pub mod diagram;
pub mod error;
pub mod filtration;
mod hungarian;
pub mod io;
pub mod loss;
pub mod pretrain;
pub mod selfcheck;
pub mod volume;

pub use diagram::{brute_force_w2, w2_distance, Matching, PersistenceDiagram};
pub use error::{Error, Result};
pub use filtration::{
    betti_at, build_filtration, compute_persistence, euler_characteristic_at, naive_persistence, Cell, Diagrams,
    FiltrationOrder, PersistencePair,
};
pub use loss::{masked_mse, topo_loss, MaskedMse, TopoLossResult};
pub use pretrain::{LossBreakdown, LossTerms, LossWeights};
pub use volume::{apply_mask, clip_normalize, crop_keypoints, make_mask, CropBox, KeyPointSet, PatchMask, Volume};
