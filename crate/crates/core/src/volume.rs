//! Dense 3D scalar volumes, intensity preprocessing, MAE-style patch masking
//! and crop key points.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A dense 3D scalar field stored in x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f64>,
    value_range: Option<(f64, f64)>,
}

impl Volume {
    /// Wraps `data` as a volume of the given dims. Every extent must be
    /// positive, the length must match and every value must be finite.
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("volume dims must be positive, got {dims:?}")));
        }
        let expected = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::Shape(format!("volume dims {dims:?} overflow")))?;
        if data.len() != expected {
            return Err(Error::Shape(format!("volume {dims:?} needs {expected} values, got {}", data.len())));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Shape(format!("non-finite value {} at index {i}", data[i])));
        }
        Ok(Self { dims, data, value_range: None })
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![value; n])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.value_range
    }

    pub fn with_value_range(mut self, range: Option<(f64, f64)>) -> Self {
        self.value_range = range;
        self
    }

    #[inline]
    pub fn index(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, at: [usize; 3]) -> f64 {
        self.data[self.index(at)]
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Applies `f` voxel-wise. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dims, self.data.iter().map(|&x| f(x)).collect())
    }

    pub(crate) fn check_same_dims(&self, other: &Volume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("volume dims differ: {:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }
}

/// Clamps every value to `[lo, hi]` and rescales it linearly onto `[0, 1]`.
pub fn clip_normalize(v: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange { lo, hi });
    }
    let width = hi - lo;
    let out = v.map(|x| (x.clamp(lo, hi) - lo) / width)?;
    Ok(out.with_value_range(Some((0.0, 1.0))))
}

/// A per-patch mask over a volume split into equal non-overlapping patches.
///
/// Flags are stored in patch-grid order, x fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    dims: [usize; 3],
    patch_size: [usize; 3],
    masked: Vec<bool>,
    seed: u64,
}

fn patch_grid(dims: [usize; 3], patch_size: [usize; 3]) -> Result<[usize; 3]> {
    let mut grid = [0; 3];
    for a in 0..3 {
        if dims[a] == 0 || patch_size[a] == 0 || !dims[a].is_multiple_of(patch_size[a]) {
            return Err(Error::Shape(format!("patch size {patch_size:?} does not divide dims {dims:?}")));
        }
        grid[a] = dims[a] / patch_size[a];
    }
    Ok(grid)
}

impl PatchMask {
    pub fn new(dims: [usize; 3], patch_size: [usize; 3], masked: Vec<bool>, seed: u64) -> Result<Self> {
        let grid = patch_grid(dims, patch_size)?;
        let n = grid.iter().product::<usize>();
        if masked.len() != n {
            return Err(Error::Shape(format!(
                "mask over {dims:?} with patches {patch_size:?} needs {n} flags, got {}",
                masked.len()
            )));
        }
        Ok(Self { dims, patch_size, masked, seed })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn patch_size(&self) -> [usize; 3] {
        self.patch_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flags(&self) -> &[bool] {
        &self.masked
    }

    /// Number of patches along each axis.
    pub fn grid(&self) -> [usize; 3] {
        [self.dims[0] / self.patch_size[0], self.dims[1] / self.patch_size[1], self.dims[2] / self.patch_size[2]]
    }

    pub fn num_patches(&self) -> usize {
        self.masked.len()
    }

    pub fn num_masked(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn num_masked_voxels(&self) -> usize {
        self.num_masked() * self.patch_size.iter().product::<usize>()
    }

    /// Patch-grid index of the patch containing voxel `(x, y, z)`.
    pub fn patch_of(&self, [x, y, z]: [usize; 3]) -> usize {
        let [gx, gy, _] = self.grid();
        let [px, py, pz] = self.patch_size;
        x / px + gx * (y / py + gy * (z / pz))
    }

    pub fn is_voxel_masked(&self, at: [usize; 3]) -> bool {
        self.masked[self.patch_of(at)]
    }

    /// One flag per voxel of the covered volume, x fastest.
    pub fn voxel_flags(&self) -> Vec<bool> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(self.is_voxel_masked([x, y, z]));
                }
            }
        }
        out
    }

    pub(crate) fn check_covers(&self, v: &Volume) -> Result<()> {
        if self.dims != v.dims() {
            return Err(Error::Shape(format!("mask covers {:?} but volume is {:?}", self.dims, v.dims())));
        }
        Ok(())
    }
}

/// Flags `round(ratio * num_patches)` patches, chosen by a seeded uniform
/// shuffle of the patch indices.
pub fn make_mask(dims: [usize; 3], patch_size: [usize; 3], ratio: f64, seed: u64) -> Result<PatchMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio must lie in [0, 1], got {ratio}")));
    }
    let grid = patch_grid(dims, patch_size)?;
    let n = grid.iter().product::<usize>();
    let count = ((ratio * n as f64).round() as usize).min(n);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut masked = vec![false; n];
    for &p in &order[..count] {
        masked[p] = true;
    }
    PatchMask::new(dims, patch_size, masked, seed)
}

/// Replaces every voxel inside a masked patch with `fill`.
pub fn apply_mask(v: &Volume, m: &PatchMask, fill: f64) -> Result<Volume> {
    m.check_covers(v)?;
    if !fill.is_finite() {
        return Err(Error::Config(format!("mask fill must be finite, got {fill}")));
    }
    let data = v.data().iter().zip(m.voxel_flags()).map(|(&x, masked)| if masked { fill } else { x }).collect();
    Ok(Volume::new(v.dims(), data)?.with_value_range(v.value_range()))
}

/// An axis-aligned crop inside a parent volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    origin: [usize; 3],
    size: [usize; 3],
    parent_dims: [usize; 3],
}

impl CropBox {
    pub fn new(origin: [usize; 3], size: [usize; 3], parent_dims: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if size[a] == 0 || parent_dims[a] == 0 {
                return Err(Error::Shape(format!("crop size {size:?} and parent {parent_dims:?} must be positive")));
            }
            if origin[a] + size[a] > parent_dims[a] {
                return Err(Error::Shape(format!(
                    "crop at {origin:?} of size {size:?} exceeds parent {parent_dims:?}"
                )));
            }
        }
        Ok(Self { origin, size, parent_dims })
    }

    pub fn origin(&self) -> [usize; 3] {
        self.origin
    }

    pub fn size(&self) -> [usize; 3] {
        self.size
    }

    pub fn parent_dims(&self) -> [usize; 3] {
        self.parent_dims
    }
}

/// Nine key points of a crop: the eight corners (x varying fastest) followed
/// by the center, in coordinates normalized to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPointSet {
    points: [[f64; 3]; 9],
}

impl KeyPointSet {
    pub const NUM_POINTS: usize = 9;

    /// Accepts any nine finite points inside `[-1, 1]^3`. Predicted key points
    /// need not have their center at the corner mean, so that is not checked.
    pub fn new(points: [[f64; 3]; 9]) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite() || c.abs() > 1.0) {
                return Err(Error::Shape(format!("key point {i} = {p:?} lies outside [-1, 1]")));
            }
        }
        Ok(Self { points })
    }

    pub fn from_slice(points: &[[f64; 3]]) -> Result<Self> {
        let points: [[f64; 3]; 9] = points
            .try_into()
            .map_err(|_| Error::Shape(format!("expected {} key points, got {}", Self::NUM_POINTS, points.len())))?;
        Self::new(points)
    }

    pub fn points(&self) -> &[[f64; 3]; 9] {
        &self.points
    }

    pub fn corners(&self) -> &[[f64; 3]] {
        &self.points[..8]
    }

    pub fn center(&self) -> [f64; 3] {
        self.points[8]
    }

    pub fn coordinates(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().flatten().copied()
    }
}

fn normalize_coord(c: usize, extent: usize) -> f64 {
    if extent <= 1 {
        return 0.0;
    }
    2.0 * c as f64 / (extent - 1) as f64 - 1.0
}

/// Ground-truth key points of a crop. Corners sit on the first and last
/// voxel of the crop along each axis.
pub fn crop_keypoints(c: &CropBox) -> KeyPointSet {
    let mut points = [[0.0; 3]; 9];
    for (i, p) in points.iter_mut().take(8).enumerate() {
        for a in 0..3 {
            let raw = c.origin[a] + if (i >> a) & 1 == 1 { c.size[a] - 1 } else { 0 };
            p[a] = normalize_coord(raw, c.parent_dims[a]);
        }
    }
    let mut center = [0.0; 3];
    for corner in &points[..8] {
        for a in 0..3 {
            center[a] += corner[a];
        }
    }
    points[8] = center.map(|s| s / 8.0);
    KeyPointSet { points }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_rejects_bad_input() {
        assert!(Volume::new([2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Volume::new([0, 2, 2], vec![]).is_err());
        assert!(Volume::new([1, 1, 2], vec![0.0, f64::NAN]).is_err());
        assert!(Volume::new([1, 1, 2], vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn index_and_coords_are_inverse() {
        let v = Volume::filled([3, 4, 5], 0.0).unwrap();
        for i in 0..v.len() {
            assert_eq!(v.index(v.coords(i)), i);
        }
        assert_eq!(v.index([1, 0, 0]), 1);
        assert_eq!(v.index([0, 1, 0]), 3);
        assert_eq!(v.index([0, 0, 1]), 12);
    }

    #[test]
    fn clip_normalize_values() {
        let v = Volume::new([1, 1, 4], vec![300.0, -175.0, 37.5, -1000.0]).unwrap();
        let out = clip_normalize(&v, -175.0, 250.0).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, 0.5, 0.0]);
        assert_eq!(out.value_range(), Some((0.0, 1.0)));
    }

    #[test]
    fn clip_normalize_rejects_empty_range() {
        let v = Volume::filled([1, 1, 1], 0.0).unwrap();
        assert!(matches!(clip_normalize(&v, 1.0, 1.0), Err(Error::InvalidRange { .. })));
        assert!(matches!(clip_normalize(&v, 2.0, 1.0), Err(Error::InvalidRange { .. })));
    }

    #[test]
    fn mask_counts() {
        let m = make_mask([96, 96, 96], [16, 16, 16], 0.5, 7).unwrap();
        assert_eq!(m.num_patches(), 216);
        assert_eq!(m.num_masked(), 108);
        assert_eq!(m.num_masked_voxels(), 108 * 16 * 16 * 16);

        let none = make_mask([96, 96, 96], [16, 16, 16], 0.0, 7).unwrap();
        assert_eq!(none.num_masked(), 0);
        let all = make_mask([96, 96, 96], [16, 16, 16], 1.0, 7).unwrap();
        assert_eq!(all.num_masked(), 216);
    }

    #[test]
    fn mask_is_deterministic_per_seed() {
        let a = make_mask([32, 32, 32], [8, 8, 8], 0.5, 42).unwrap();
        let b = make_mask([32, 32, 32], [8, 8, 8], 0.5, 42).unwrap();
        let c = make_mask([32, 32, 32], [8, 8, 8], 0.5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flags(), c.flags());
    }

    #[test]
    fn mask_rejects_non_divisible_dims_and_bad_ratio() {
        assert!(matches!(make_mask([10, 10, 10], [3, 5, 5], 0.5, 0), Err(Error::Shape(_))));
        assert!(matches!(make_mask([10, 10, 10], [5, 5, 5], 1.5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn apply_mask_zeroes_masked_patch_only() {
        let v = Volume::filled([4, 4, 4], 1.0).unwrap();
        let mut flags = vec![false; 8];
        flags[3] = true;
        let m = PatchMask::new([4, 4, 4], [2, 2, 2], flags, 0).unwrap();
        let out = apply_mask(&v, &m, 0.0).unwrap();
        for i in 0..out.len() {
            let at = out.coords(i);
            let expected = if at[0] >= 2 && at[1] >= 2 && at[2] < 2 { 0.0 } else { 1.0 };
            assert_eq!(out.data()[i], expected, "voxel {at:?}");
        }
        assert_eq!(out.data().iter().filter(|&&x| x == 0.0).count(), 8);
    }

    #[test]
    fn apply_mask_identity_for_empty_mask_and_idempotent() {
        let v = Volume::from_fn([8, 8, 8], |x, y, z| (x * 3 + y * 5 + z * 7) as f64).unwrap();
        let empty = make_mask([8, 8, 8], [4, 4, 4], 0.0, 1).unwrap();
        assert_eq!(apply_mask(&v, &empty, 0.0).unwrap(), v);

        let m = make_mask([8, 8, 8], [4, 4, 4], 0.5, 1).unwrap();
        let once = apply_mask(&v, &m, 0.0).unwrap();
        assert_eq!(apply_mask(&once, &m, 0.0).unwrap(), once);
    }

    #[test]
    fn apply_mask_rejects_incompatible_grid() {
        let v = Volume::filled([4, 4, 4], 1.0).unwrap();
        let m = make_mask([8, 8, 8], [4, 4, 4], 0.5, 0).unwrap();
        assert!(matches!(apply_mask(&v, &m, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn whole_volume_crop_hits_cube_corners() {
        let c = CropBox::new([0, 0, 0], [6, 4, 9], [6, 4, 9]).unwrap();
        let kp = crop_keypoints(&c);
        for (i, p) in kp.corners().iter().enumerate() {
            for a in 0..3 {
                let expected = if (i >> a) & 1 == 1 { 1.0 } else { -1.0 };
                assert_eq!(p[a], expected);
            }
        }
        assert_eq!(kp.center(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_voxel_crop_at_origin() {
        let c = CropBox::new([0, 0, 0], [1, 1, 1], [3, 3, 3]).unwrap();
        let kp = crop_keypoints(&c);
        assert!(kp.points().iter().all(|p| *p == [-1.0, -1.0, -1.0]));
    }

    #[test]
    fn off_center_crop_center() {
        // corners at voxels 1 and 2 of 5 map to -0.5 and 0.0
        let c = CropBox::new([1, 1, 1], [2, 2, 2], [5, 5, 5]).unwrap();
        assert_eq!(crop_keypoints(&c).center(), [-0.25, -0.25, -0.25]);
        // corners at voxels 1 and 3 of 5 are symmetric about the middle
        let c = CropBox::new([1, 1, 1], [3, 3, 3], [5, 5, 5]).unwrap();
        assert_eq!(crop_keypoints(&c).center(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_axis_maps_to_zero() {
        let c = CropBox::new([0, 0, 0], [2, 2, 1], [4, 4, 1]).unwrap();
        let kp = crop_keypoints(&c);
        assert!(kp.points().iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn crop_must_fit_parent() {
        assert!(CropBox::new([3, 0, 0], [2, 1, 1], [4, 4, 4]).is_err());
        assert!(CropBox::new([0, 0, 0], [0, 1, 1], [4, 4, 4]).is_err());
    }

    #[test]
    fn key_points_validate_range_and_count() {
        let mut pts = [[0.0; 3]; 9];
        assert!(KeyPointSet::new(pts).is_ok());
        pts[4][1] = 1.5;
        assert!(KeyPointSet::new(pts).is_err());
        assert!(KeyPointSet::from_slice(&[[0.0; 3]; 8]).is_err());
    }
}
