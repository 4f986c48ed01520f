//! Persistence diagrams and the exact 2-Wasserstein distance between them.
//!
//! Two diagrams are compared by a perfect matching in which every point may
//! also be sent to the diagonal. Points are compared in the L∞ norm and the
//! matching minimizes the sum of squared costs:
//!
//! * point to point: `max(|b - b'|, |d - d'|)^2`
//! * point to diagonal: `((b - d) / 2)^2`
//! * diagonal to diagonal: `0`

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::filtration::PersistencePair;
use crate::hungarian;

/// Largest number of points per diagram accepted by [`w2_distance`].
pub const MAX_MATCHING_POINTS: usize = 20_000;

/// Largest `|D| + |D'|` accepted by [`brute_force_w2`].
pub const BRUTE_FORCE_MAX_POINTS: usize = 8;

/// Points of one homology dimension, kept in canonical order: birth
/// descending, then death descending, essential classes first, then by
/// birth and death voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    dim: usize,
    points: Vec<PersistencePair>,
}

fn canonical_cmp(a: &PersistencePair, b: &PersistencePair) -> Ordering {
    let rev = |v: [usize; 3]| [v[2], v[1], v[0]];
    b.birth
        .total_cmp(&a.birth)
        .then(b.death.total_cmp(&a.death))
        .then(b.essential.cmp(&a.essential))
        .then(rev(a.birth_vertex).cmp(&rev(b.birth_vertex)))
        .then(rev(a.death_vertex).cmp(&rev(b.death_vertex)))
}

impl PersistenceDiagram {
    /// Validates that every point has the declared dimension, finite
    /// coordinates and `birth >= death`.
    pub fn new(dim: usize, points: Vec<PersistencePair>) -> Result<Self> {
        if dim > 2 {
            return Err(Error::Dimension(format!("diagram dimension must be 0..=2, got {dim}")));
        }
        for p in &points {
            if p.dim != dim {
                return Err(Error::Dimension(format!("point of dimension {} in a dimension-{dim} diagram", p.dim)));
            }
            if !p.birth.is_finite() || !p.death.is_finite() || p.birth < p.death {
                return Err(Error::Format(format!(
                    "invalid point (birth {}, death {}): need finite birth >= death",
                    p.birth, p.death
                )));
            }
        }
        Ok(Self::from_pairs_unchecked(dim, points))
    }

    pub(crate) fn from_pairs_unchecked(dim: usize, mut points: Vec<PersistencePair>) -> Self {
        points.sort_by(canonical_cmp);
        Self { dim, points }
    }

    /// A diagram of bare `(birth, death)` points with no voxel provenance.
    pub fn from_coords(dim: usize, coords: &[(f64, f64)]) -> Result<Self> {
        let points = coords
            .iter()
            .map(|&(birth, death)| PersistencePair {
                dim,
                birth,
                death,
                essential: false,
                birth_vertex: [0; 3],
                death_vertex: [0; 3],
            })
            .collect();
        Self::new(dim, points)
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, points: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[PersistencePair] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(birth, death)` of every point, in canonical order.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.birth, p.death)).collect()
    }
}

/// A perfect matching between two diagrams augmented with diagonal slots.
/// `None` on either side stands for the diagonal; diagonal-to-diagonal pairs
/// are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(Option<usize>, Option<usize>)>,
    pub total_sq_cost: f64,
}

impl Matching {
    /// Checks that every point of both sides is used exactly once.
    pub fn is_perfect_for(&self, left: usize, right: usize) -> bool {
        let mut seen_l = vec![0u32; left];
        let mut seen_r = vec![0u32; right];
        for &(i, j) in &self.pairs {
            match (i, j) {
                (None, None) => return false,
                (Some(i), _) if i >= left => return false,
                (_, Some(j)) if j >= right => return false,
                _ => {}
            }
            if let Some(i) = i {
                seen_l[i] += 1;
            }
            if let Some(j) = j {
                seen_r[j] += 1;
            }
        }
        seen_l.iter().chain(&seen_r).all(|&c| c == 1)
    }
}

#[inline]
pub(crate) fn point_cost(p: &PersistencePair, q: &PersistencePair) -> f64 {
    let c = (p.birth - q.birth).abs().max((p.death - q.death).abs());
    c * c
}

#[inline]
pub(crate) fn diagonal_cost(p: &PersistencePair) -> f64 {
    let half = (p.birth - p.death) / 2.0;
    half * half
}

impl Matching {
    /// Squared cost of one matched pair.
    pub fn pair_cost(
        pair: (Option<usize>, Option<usize>),
        left: &PersistenceDiagram,
        right: &PersistenceDiagram,
    ) -> f64 {
        match pair {
            (Some(i), Some(j)) => point_cost(&left.points[i], &right.points[j]),
            (Some(i), None) => diagonal_cost(&left.points[i]),
            (None, Some(j)) => diagonal_cost(&right.points[j]),
            (None, None) => 0.0,
        }
    }
}

fn check_same_dim(a: &PersistenceDiagram, b: &PersistenceDiagram) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::Dimension(format!(
            "cannot compare a dimension-{} diagram with a dimension-{} diagram",
            a.dim, b.dim
        )));
    }
    Ok(())
}

/// Exact 2-Wasserstein distance between two diagrams of the same dimension,
/// with the optimal matching.
pub fn w2_distance(d: &PersistenceDiagram, d2: &PersistenceDiagram) -> Result<(f64, Matching)> {
    check_same_dim(d, d2)?;
    let (n, m) = (d.len(), d2.len());
    if n > MAX_MATCHING_POINTS || m > MAX_MATCHING_POINTS {
        return Err(Error::TooLarge(format!(
            "diagrams of {n} and {m} points exceed the {MAX_MATCHING_POINTS}-point matching limit"
        )));
    }

    // Rows: points of `d`, then one diagonal slot per point of `d2`.
    // Columns: points of `d2`, then one diagonal slot per point of `d`.
    let left_diag: Vec<f64> = d.points.iter().map(diagonal_cost).collect();
    let right_diag: Vec<f64> = d2.points.iter().map(diagonal_cost).collect();
    let cost = |i: usize, j: usize| match (i < n, j < m) {
        (true, true) => point_cost(&d.points[i], &d2.points[j]),
        (true, false) => left_diag[i],
        (false, true) => right_diag[j],
        (false, false) => 0.0,
    };
    let assignment = hungarian::solve(n + m, cost);

    let mut pairs = Vec::with_capacity(n + m);
    let mut to_diagonal = Vec::new();
    for (i, &j) in assignment.iter().enumerate() {
        match (i < n, j < m) {
            (true, true) => pairs.push((Some(i), Some(j))),
            (true, false) => pairs.push((Some(i), None)),
            (false, true) => to_diagonal.push(j),
            (false, false) => {}
        }
    }
    to_diagonal.sort_unstable();
    pairs.extend(to_diagonal.into_iter().map(|j| (None, Some(j))));

    let total_sq_cost: f64 = pairs.iter().map(|&p| Matching::pair_cost(p, d, d2)).sum();
    Ok((total_sq_cost.sqrt(), Matching { pairs, total_sq_cost }))
}

/// 2-Wasserstein distance by exhaustive enumeration of every matching.
/// Limited to `|D| + |D'| <= 8`.
pub fn brute_force_w2(d: &PersistenceDiagram, d2: &PersistenceDiagram) -> Result<f64> {
    check_same_dim(d, d2)?;
    if d.len() + d2.len() > BRUTE_FORCE_MAX_POINTS {
        return Err(Error::TooLarge(format!(
            "brute force handles at most {BRUTE_FORCE_MAX_POINTS} points in total, got {}",
            d.len() + d2.len()
        )));
    }

    fn search(i: usize, d: &[PersistencePair], d2: &[PersistencePair], used: &mut [bool], acc: f64) -> f64 {
        if i == d.len() {
            let rest: f64 = d2.iter().zip(used.iter()).filter(|(_, &u)| !u).map(|(q, _)| diagonal_cost(q)).sum();
            return acc + rest;
        }
        let mut best = search(i + 1, d, d2, used, acc + diagonal_cost(&d[i]));
        for j in 0..d2.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(search(i + 1, d, d2, used, acc + point_cost(&d[i], &d2[j])));
                used[j] = false;
            }
        }
        best
    }

    let mut used = vec![false; d2.len()];
    Ok(search(0, &d.points, &d2.points, &mut used, 0.0).sqrt())
}
