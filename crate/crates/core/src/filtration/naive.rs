//! Unoptimized reference persistence, used as a test oracle.
//!
//! Cells are enumerated as explicit vertex sets, the full boundary matrix is
//! stored densely as bit columns, and every column is reduced left to right
//! without clearing or union-find.

use std::collections::HashMap;

use super::{Diagrams, PersistencePair};
use crate::diagram::PersistenceDiagram;
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Largest volume accepted by [`naive_persistence`].
pub const NAIVE_MAX_VOXELS: usize = 512;

struct RefCell {
    vertices: Vec<usize>,
    axes: Vec<usize>,
    id: usize,
    value: f64,
    critical: usize,
}

fn enumerate_cells(v: &Volume) -> Vec<RefCell> {
    let [nx, ny, nz] = v.dims();
    let (dx, dy) = (2 * nx - 1, 2 * ny - 1);
    let mut cells = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let base = [x, y, z];
                for subset in 0..8usize {
                    let axes: Vec<usize> = (0..3).filter(|a| subset >> a & 1 == 1).collect();
                    if axes.iter().any(|&a| base[a] + 1 >= v.dims()[a]) {
                        continue;
                    }
                    let mut vertices = Vec::new();
                    for corner in 0..1usize << axes.len() {
                        let mut p = base;
                        for (bit, &a) in axes.iter().enumerate() {
                            p[a] += corner >> bit & 1;
                        }
                        vertices.push(v.index(p));
                    }
                    vertices.sort_unstable();
                    let value = vertices.iter().map(|&i| v.data()[i]).fold(f64::INFINITY, f64::min);
                    let critical = *vertices.iter().filter(|&&i| v.data()[i] == value).max().unwrap();
                    let d = |a: usize| 2 * base[a] + (subset >> a & 1);
                    let id = d(0) + dx * (d(1) + dy * d(2));
                    cells.push(RefCell { vertices, axes, id, value, critical });
                }
            }
        }
    }
    cells.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.axes.len().cmp(&b.axes.len())).then(a.id.cmp(&b.id)));
    cells
}

fn boundary(cell: &RefCell, v: &Volume, index_of: &HashMap<Vec<usize>, usize>) -> Vec<usize> {
    let mut out = Vec::new();
    for &a in &cell.axes {
        let lo = cell.vertices.iter().map(|&i| v.coords(i)[a]).min().unwrap();
        for side in [lo, lo + 1] {
            let face: Vec<usize> = cell.vertices.iter().copied().filter(|&i| v.coords(i)[a] == side).collect();
            out.push(index_of[&face]);
        }
    }
    out
}

/// Persistence by plain column reduction of the full boundary matrix.
/// Limited to volumes of at most [`NAIVE_MAX_VOXELS`] voxels.
pub fn naive_persistence(v: &Volume) -> Result<Diagrams> {
    if v.len() > NAIVE_MAX_VOXELS {
        return Err(Error::TooLarge(format!(
            "naive persistence handles at most {NAIVE_MAX_VOXELS} voxels, got {}",
            v.len()
        )));
    }
    let cells = enumerate_cells(v);
    let n = cells.len();
    let words = n.div_ceil(64);
    let index_of: HashMap<Vec<usize>, usize> = cells.iter().enumerate().map(|(i, c)| (c.vertices.clone(), i)).collect();

    let mut columns: Vec<Vec<u64>> = cells
        .iter()
        .map(|c| {
            let mut col = vec![0u64; words];
            for f in boundary(c, v, &index_of) {
                col[f / 64] ^= 1 << (f % 64);
            }
            col
        })
        .collect();

    let low = |col: &[u64]| {
        col.iter().enumerate().rev().find(|(_, &w)| w != 0).map(|(i, &w)| i * 64 + 63 - w.leading_zeros() as usize)
    };

    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut pairs = Vec::new();
    for j in 0..n {
        while let Some(l) = low(&columns[j]) {
            match owner[l] {
                Some(k) => {
                    let (left, right) = columns.split_at_mut(j);
                    for (a, b) in right[0].iter_mut().zip(&left[k]) {
                        *a ^= b;
                    }
                }
                None => {
                    owner[l] = Some(j);
                    pairs.push((l, j));
                    break;
                }
            }
        }
    }

    let last_vertex = (0..n).rev().find(|&i| cells[i].axes.is_empty()).unwrap();
    let coords = |i: usize| v.coords(i);
    let mut points: [Vec<PersistencePair>; 3] = Default::default();
    for &(b, d) in &pairs {
        let dim = cells[b].axes.len();
        if dim > 2 || cells[b].value == cells[d].value {
            continue;
        }
        points[dim].push(PersistencePair {
            dim,
            birth: cells[b].value,
            death: cells[d].value,
            essential: false,
            birth_vertex: coords(cells[b].critical),
            death_vertex: coords(cells[d].critical),
        });
    }
    let mut killed = vec![false; n];
    for &(b, d) in &pairs {
        killed[b] = true;
        killed[d] = true;
    }
    for (i, cell) in cells.iter().enumerate() {
        let dim = cell.axes.len();
        if killed[i] || dim > 2 || low(&columns[i]).is_some() {
            continue;
        }
        points[dim].push(PersistencePair {
            dim,
            birth: cell.value,
            death: cells[last_vertex].value,
            essential: true,
            birth_vertex: coords(cell.critical),
            death_vertex: coords(cells[last_vertex].critical),
        });
    }
    let [p0, p1, p2] = points;
    Ok([
        PersistenceDiagram::from_pairs_unchecked(0, p0),
        PersistenceDiagram::from_pairs_unchecked(1, p1),
        PersistenceDiagram::from_pairs_unchecked(2, p2),
    ])
}
