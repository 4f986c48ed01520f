//! Cubical complex of a volume, its super-level-set filtration, and persistent
//! homology in dimensions 0, 1 and 2.
//!
//! Every voxel is a vertex of the complex. Cells are addressed on the
//! "doubled" grid of extent `2n - 1` per axis: a cell whose doubled coordinate
//! is odd along an axis spans that axis. A cell enters the filtration at the
//! minimum value of its vertices, so sweeping the threshold downwards adds
//! cells in the order (value descending, dimension ascending, id ascending).
//! Internally this is the sub-level filtration of the negated volume.

use std::cmp::Ordering;

use crate::diagram::PersistenceDiagram;
use crate::error::{Error, Result};
use crate::volume::Volume;

mod naive;

pub use naive::{naive_persistence, NAIVE_MAX_VOXELS};

/// The three persistence diagrams of a volume, indexed by homology dimension.
pub type Diagrams = [PersistenceDiagram; 3];

const NONE: u32 = u32::MAX;

/// Geometry of the cubical complex on the doubled grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Grid {
    pub dims: [usize; 3],
    pub ddims: [usize; 3],
    pub strides: [usize; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3]) -> Self {
        let ddims = dims.map(|n| 2 * n - 1);
        Self { dims, ddims, strides: [1, ddims[0], ddims[0] * ddims[1]] }
    }

    pub fn num_cells(&self) -> usize {
        self.ddims.iter().product()
    }

    #[inline]
    pub fn coords(&self, id: usize) -> [usize; 3] {
        [id % self.ddims[0], (id / self.ddims[0]) % self.ddims[1], id / self.strides[2]]
    }

    #[inline]
    pub fn dim_of(&self, id: usize) -> usize {
        self.coords(id).iter().filter(|&&c| c & 1 == 1).count()
    }

    #[inline]
    pub fn vertex_id(&self, [x, y, z]: [usize; 3]) -> usize {
        2 * x * self.strides[0] + 2 * y * self.strides[1] + 2 * z * self.strides[2]
    }

    /// Pushes the ids of the codimension-1 faces of `id` into `out`.
    #[inline]
    pub fn faces(&self, id: usize, out: &mut Vec<usize>) {
        let c = self.coords(id);
        for a in 0..3 {
            if c[a] & 1 == 1 {
                out.push(id - self.strides[a]);
                out.push(id + self.strides[a]);
            }
        }
    }
}

/// A cell of the cubical complex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub dim: usize,
    /// Lowest-index vertex of the cell.
    pub anchor: [usize; 3],
    /// Axes spanned by the cell.
    pub extent: [bool; 3],
    /// Linear index on the doubled grid, unique across all cells.
    pub id: usize,
}

impl Cell {
    fn from_id(grid: &Grid, id: usize) -> Self {
        let c = grid.coords(id);
        let extent = c.map(|x| x & 1 == 1);
        Self { dim: extent.iter().filter(|&&e| e).count(), anchor: c.map(|x| x / 2), extent, id }
    }

    /// The `2^dim` voxels spanned by the cell.
    pub fn vertices(&self) -> Vec<[usize; 3]> {
        let axes: Vec<usize> = (0..3).filter(|&a| self.extent[a]).collect();
        (0..1usize << axes.len())
            .map(|mask| {
                let mut v = self.anchor;
                for (bit, &a) in axes.iter().enumerate() {
                    if (mask >> bit) & 1 == 1 {
                        v[a] += 1;
                    }
                }
                v
            })
            .collect()
    }
}

/// Cells of the complex in super-level filtration order.
#[derive(Debug, Clone)]
pub struct FiltrationOrder {
    grid: Grid,
    /// Filtration value of each cell, by id.
    values: Vec<f64>,
    /// Voxel index of the vertex that enters last among each cell's vertices.
    critical: Vec<u32>,
    /// Cell ids in filtration order.
    order: Vec<u32>,
    /// Position of each cell id in `order`.
    position: Vec<u32>,
}

impl FiltrationOrder {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    /// The cell at position `pos` of the filtration.
    pub fn cell(&self, pos: usize) -> Cell {
        Cell::from_id(&self.grid, self.order[pos] as usize)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.order.iter().map(|&id| Cell::from_id(&self.grid, id as usize))
    }

    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }

    pub fn value_at(&self, pos: usize) -> f64 {
        self.values[self.order[pos] as usize]
    }

    pub fn position(&self, id: usize) -> usize {
        self.position[id] as usize
    }

    /// Voxel whose value sets the filtration value of cell `id`.
    pub fn critical_vertex(&self, id: usize) -> [usize; 3] {
        voxel_coords(self.grid.dims, self.critical[id] as usize)
    }

    /// Counts of cells by dimension.
    pub fn cell_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for id in 0..self.grid.num_cells() {
            counts[self.grid.dim_of(id)] += 1;
        }
        counts
    }
}

pub(crate) fn voxel_coords(dims: [usize; 3], index: usize) -> [usize; 3] {
    [index % dims[0], (index / dims[0]) % dims[1], index / (dims[0] * dims[1])]
}

/// Whether vertex `(va, ia)` enters the filtration no earlier than `(vb, ib)`.
#[inline]
fn enters_later(va: f64, ia: u32, vb: f64, ib: u32) -> bool {
    match va.total_cmp(&vb) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => ia >= ib,
    }
}

/// Filtration value and critical vertex of every cell, by id.
fn cell_values(v: &Volume) -> (Grid, Vec<f64>, Vec<u32>) {
    let grid = Grid::new(v.dims());
    let n = grid.num_cells();
    assert!(n < NONE as usize, "volume too large for 32-bit cell indices");
    let mut values = vec![0.0; n];
    let mut critical = vec![0u32; n];
    let [nx, ny, nz] = grid.dims;
    let [dx, dy, dz] = grid.ddims;
    let [_, sy, sz] = grid.strides;

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let id = grid.vertex_id([x, y, z]);
                let vi = v.index([x, y, z]);
                values[id] = v.data()[vi];
                critical[id] = vi as u32;
            }
        }
    }

    let mut merge = |id: usize, lo: usize, hi: usize| {
        let (a, b) = (lo, hi);
        let pick = if enters_later(values[a], critical[a], values[b], critical[b]) { a } else { b };
        values[id] = values[pick];
        critical[id] = critical[pick];
    };
    // x-edges, then everything odd in y, then everything odd in z
    for c in (0..dz).step_by(2) {
        for b in (0..dy).step_by(2) {
            for a in (1..dx).step_by(2) {
                let id = a + b * sy + c * sz;
                merge(id, id - 1, id + 1);
            }
        }
    }
    for c in (0..dz).step_by(2) {
        for b in (1..dy).step_by(2) {
            for a in 0..dx {
                let id = a + b * sy + c * sz;
                merge(id, id - sy, id + sy);
            }
        }
    }
    for c in (1..dz).step_by(2) {
        for b in 0..dy {
            for a in 0..dx {
                let id = a + b * sy + c * sz;
                merge(id, id - sz, id + sz);
            }
        }
    }
    (grid, values, critical)
}

/// Builds the cubical complex of `v` and orders its cells by
/// (value descending, dimension ascending, id ascending).
pub fn build_filtration(v: &Volume) -> FiltrationOrder {
    let (grid, values, critical) = cell_values(v);
    let n = grid.num_cells();

    // Sub-level order of the negated values.
    let keys: Vec<(f64, u8)> = (0..n).map(|id| (-values[id], grid.dim_of(id) as u8)).collect();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let (ka, kb) = (keys[a as usize], keys[b as usize]);
        ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(a.cmp(&b))
    });
    let mut position = vec![0u32; n];
    for (pos, &id) in order.iter().enumerate() {
        position[id as usize] = pos as u32;
    }
    FiltrationOrder { grid, values, critical, order, position }
}

/// A point of a persistence diagram together with the voxels whose values
/// determine its coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePair {
    pub dim: usize,
    pub birth: f64,
    pub death: f64,
    /// The class never dies; its death is set to the global minimum value.
    pub essential: bool,
    pub birth_vertex: [usize; 3],
    pub death_vertex: [usize; 3],
}

impl PersistencePair {
    pub fn persistence(&self) -> f64 {
        self.birth - self.death
    }
}

/// Birth/death positions in the filtration, before values are attached.
pub(crate) struct RawPairs {
    pub finite: Vec<(usize, u32, u32)>,
    pub essential: Vec<(usize, u32)>,
}

/// Symmetric difference of two ascending index lists.
fn xor_into(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
    /// Earliest filtration position in each root's component.
    eldest: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), rank: vec![0; n], eldest: (0..n as u32).collect() }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut a, mut b) = (a, b);
        if self.rank[a as usize] < self.rank[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        if self.rank[a as usize] == self.rank[b as usize] {
            self.rank[a as usize] += 1;
        }
        self.eldest[a as usize] = self.eldest[a as usize].min(self.eldest[b as usize]);
    }
}

/// Reduces the boundary matrix over GF(2), dimensions 3 down to 1 with
/// clearing. Edges are paired with vertices by union-find with the elder
/// rule, which yields the same pairing as column reduction.
pub(crate) fn reduce(f: &FiltrationOrder) -> RawPairs {
    let grid = &f.grid;
    let n = f.len();
    let dim_at: Vec<u8> = f.order.iter().map(|&id| grid.dim_of(id as usize) as u8).collect();

    let mut pivot_of_row = vec![NONE; n];
    let mut cleared = vec![false; n];
    let mut store: Vec<Vec<u32>> = Vec::new();
    let mut finite = Vec::new();
    let mut positive = vec![false; n];

    let mut faces = Vec::with_capacity(6);
    let mut work = Vec::new();
    let mut scratch = Vec::new();

    for dim in [3u8, 2] {
        for pos in 0..n {
            if dim_at[pos] != dim {
                continue;
            }
            if cleared[pos] {
                positive[pos] = true;
                continue;
            }
            faces.clear();
            grid.faces(f.order[pos] as usize, &mut faces);
            work.clear();
            work.extend(faces.iter().map(|&id| f.position[id]));
            work.sort_unstable();

            loop {
                let Some(&low) = work.last() else {
                    positive[pos] = true;
                    break;
                };
                let owner = pivot_of_row[low as usize];
                if owner == NONE {
                    pivot_of_row[low as usize] = store.len() as u32;
                    store.push(work.clone());
                    cleared[low as usize] = true;
                    finite.push((dim as usize - 1, low, pos as u32));
                    break;
                }
                xor_into(&work, &store[owner as usize], &mut scratch);
                std::mem::swap(&mut work, &mut scratch);
            }
        }
    }

    // Dimension 0 via union-find over vertices, in filtration order.
    let mut uf = UnionFind::new(n);
    for pos in 0..n {
        if dim_at[pos] != 1 {
            continue;
        }
        faces.clear();
        grid.faces(f.order[pos] as usize, &mut faces);
        let a = uf.find(f.position[faces[0]]);
        let b = uf.find(f.position[faces[1]]);
        if a == b {
            positive[pos] = true;
            continue;
        }
        let (ea, eb) = (uf.eldest[a as usize], uf.eldest[b as usize]);
        let younger = ea.max(eb);
        finite.push((0, younger, pos as u32));
        cleared[younger as usize] = true;
        uf.union(a, b);
    }
    for pos in 0..n {
        if dim_at[pos] == 0 {
            positive[pos] = true;
        }
    }

    // Positive cells that never became a pivot row are essential.
    let mut is_birth = vec![false; n];
    for &(_, b, _) in &finite {
        is_birth[b as usize] = true;
    }
    let essential = (0..n)
        .filter(|&pos| positive[pos] && !is_birth[pos] && dim_at[pos] <= 2)
        .map(|pos| (dim_at[pos] as usize, pos as u32))
        .collect();
    RawPairs { finite, essential }
}

/// Turns filtration positions into diagram points, dropping zero-persistence
/// finite pairs. Essential classes die at the last vertex of the filtration.
pub(crate) fn assemble(f: &FiltrationOrder, raw: &RawPairs) -> Diagrams {
    let mut points: [Vec<PersistencePair>; 3] = Default::default();
    let id_at = |pos: u32| f.order[pos as usize] as usize;
    for &(dim, b, d) in &raw.finite {
        if dim > 2 {
            continue;
        }
        let (bid, did) = (id_at(b), id_at(d));
        let (birth, death) = (f.values[bid], f.values[did]);
        if birth == death {
            continue;
        }
        points[dim].push(PersistencePair {
            dim,
            birth,
            death,
            essential: false,
            birth_vertex: f.critical_vertex(bid),
            death_vertex: f.critical_vertex(did),
        });
    }
    if !raw.essential.is_empty() {
        let last_vertex = (0..f.len())
            .rev()
            .map(|pos| f.order[pos] as usize)
            .find(|&id| f.grid.dim_of(id) == 0)
            .expect("complex has at least one vertex");
        for &(dim, b) in &raw.essential {
            let bid = id_at(b);
            points[dim].push(PersistencePair {
                dim,
                birth: f.values[bid],
                death: f.values[last_vertex],
                essential: true,
                birth_vertex: f.critical_vertex(bid),
                death_vertex: f.critical_vertex(last_vertex),
            });
        }
    }
    let [p0, p1, p2] = points;
    [
        PersistenceDiagram::from_pairs_unchecked(0, p0),
        PersistenceDiagram::from_pairs_unchecked(1, p1),
        PersistenceDiagram::from_pairs_unchecked(2, p2),
    ]
}

/// Persistence diagrams of the super-level-set filtration of `v` in
/// dimensions 0, 1 and 2.
pub fn compute_persistence(v: &Volume) -> Diagrams {
    let f = build_filtration(v);
    let raw = reduce(&f);
    assemble(&f, &raw)
}

/// Betti numbers `(β0, β1, β2)` of the super-level set `{f >= tau}`, read
/// off precomputed diagrams.
pub fn betti_from_diagrams(diagrams: &Diagrams, tau: f64) -> [usize; 3] {
    diagrams.each_ref().map(|d| d.points().iter().filter(|p| p.birth >= tau && (p.essential || tau > p.death)).count())
}

/// Betti numbers `(β0, β1, β2)` of the super-level set `{f >= tau}`.
pub fn betti_at(v: &Volume, tau: f64) -> [usize; 3] {
    betti_from_diagrams(&compute_persistence(v), tau)
}

/// Alternating count of the cells with filtration value `>= tau`.
pub fn euler_characteristic_at(v: &Volume, tau: f64) -> i64 {
    let (grid, values, _) = cell_values(v);
    values
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= tau)
        .map(|(id, _)| if grid.dim_of(id) % 2 == 0 { 1 } else { -1 })
        .sum()
}

/// Rejects volumes whose complex cannot be indexed with 32-bit cell ids.
pub fn check_size(v: &Volume) -> Result<()> {
    let cells: usize = v.dims().iter().map(|&n| 2 * n - 1).product();
    if cells >= NONE as usize {
        return Err(Error::TooLarge(format!("{cells} cells exceed the 32-bit cell index")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], data: &[f64]) -> Volume {
        Volume::new(dims, data.to_vec()).unwrap()
    }

    fn summary(d: &Diagrams) -> Vec<(usize, f64, f64, bool)> {
        d.iter().flat_map(|d| d.points().iter().map(|p| (p.dim, p.birth, p.death, p.essential))).collect()
    }

    #[test]
    fn cell_counts_of_2x2x2() {
        let f = build_filtration(&Volume::filled([2, 2, 2], 1.0).unwrap());
        assert_eq!(f.len(), 27);
        assert_eq!(f.cell_counts(), [8, 12, 6, 1]);
    }

    #[test]
    fn cell_count_formula() {
        let f = build_filtration(&Volume::filled([3, 4, 2], 0.0).unwrap());
        assert_eq!(f.len(), 5 * 7 * 3);
    }

    #[test]
    fn constant_volume_shares_one_value() {
        let f = build_filtration(&Volume::filled([3, 3, 3], 2.5).unwrap());
        assert!((0..f.len()).all(|p| f.value_at(p) == 2.5));
    }

    #[test]
    fn edge_takes_min_of_endpoints() {
        let f = build_filtration(&vol([1, 1, 3], &[5.0, 1.0, 5.0]));
        let edges: Vec<f64> = f.cells().filter(|c| c.dim == 1).map(|c| f.value(c.id)).collect();
        assert_eq!(edges, vec![1.0, 1.0]);
    }

    #[test]
    fn faces_precede_cofaces() {
        let v = Volume::from_fn([3, 4, 3], |x, y, z| ((x * 7 + y * 3 + z * 5) % 6) as f64).unwrap();
        let f = build_filtration(&v);
        let mut faces = Vec::new();
        for pos in 0..f.len() {
            let cell = f.cell(pos);
            faces.clear();
            f.grid.faces(cell.id, &mut faces);
            for &face in &faces {
                assert!(f.position(face) < pos);
            }
            let min = cell.vertices().iter().map(|&at| v.get(at)).fold(f64::INFINITY, f64::min);
            assert_eq!(f.value(cell.id), min);
        }
    }

    #[test]
    fn order_is_value_desc_dim_asc_id_asc() {
        let v = Volume::from_fn([3, 3, 2], |x, y, z| ((x + 2 * y + z) % 3) as f64).unwrap();
        let f = build_filtration(&v);
        for pos in 1..f.len() {
            let (a, b) = (f.cell(pos - 1), f.cell(pos));
            let key = |c: &Cell| (-f.value(c.id), c.dim, c.id);
            assert!(key(&a).partial_cmp(&key(&b)) == Some(Ordering::Less));
        }
    }

    #[test]
    fn critical_vertex_reproduces_value() {
        let v = Volume::from_fn([4, 3, 3], |x, y, z| ((x * 5 + y * 11 + z * 3) % 7) as f64).unwrap();
        let f = build_filtration(&v);
        for cell in f.cells() {
            let at = f.critical_vertex(cell.id);
            assert_eq!(v.get(at), f.value(cell.id));
            assert!(cell.vertices().contains(&at));
        }
    }

    #[test]
    fn three_voxel_line() {
        let d = compute_persistence(&vol([1, 1, 3], &[5.0, 1.0, 5.0]));
        assert_eq!(summary(&d), vec![(0, 5.0, 1.0, true), (0, 5.0, 1.0, false)]);
        let finite = d[0].points().iter().find(|p| !p.essential).unwrap();
        assert_eq!(finite.birth_vertex, [0, 0, 2]);
        assert_eq!(finite.death_vertex, [0, 0, 1]);
        let essential = d[0].points().iter().find(|p| p.essential).unwrap();
        assert_eq!(essential.birth_vertex, [0, 0, 0]);
        assert_eq!(essential.death_vertex, [0, 0, 1]);
    }

    #[test]
    fn constant_volume_has_single_essential_class() {
        let d = compute_persistence(&Volume::filled([3, 2, 4], 0.7).unwrap());
        assert_eq!(summary(&d), vec![(0, 0.7, 0.7, true)]);
    }

    #[test]
    fn hollow_shell_encloses_one_void() {
        let v = Volume::from_fn([5, 5, 5], |x, y, z| {
            let on_shell = [x, y, z].iter().any(|&c| c == 0 || c == 4);
            if on_shell {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let d = compute_persistence(&v);
        assert_eq!(summary(&d), vec![(0, 1.0, 0.0, true), (2, 1.0, 0.0, false)]);
        assert_eq!(betti_at(&v, 1.0), [1, 0, 1]);
        assert_eq!(betti_at(&v, 0.0), [1, 0, 0]);
    }

    #[test]
    fn betti_counts_components() {
        let v = Volume::from_fn([7, 3, 3], |x, y, z| {
            let inside = (1..=2).contains(&y) && (1..=2).contains(&z) || y == 1 && z == 1;
            if inside && (x == 1 || x == 2 || x == 5) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(betti_at(&v, 1.0)[0], 2);
        assert_eq!(betti_at(&v, 1.5), [0, 0, 0]);
        assert_eq!(betti_at(&v, 0.0), [1, 0, 0]);
    }

    #[test]
    fn euler_characteristic_extremes() {
        let v = Volume::from_fn([4, 3, 5], |x, y, z| (x + y * z) as f64).unwrap();
        assert_eq!(euler_characteristic_at(&v, v.min_value()), 1);
        assert_eq!(euler_characteristic_at(&v, v.max_value() + 1.0), 0);
    }

    #[test]
    fn matches_naive_on_small_patterns() {
        let v = Volume::from_fn([3, 4, 3], |x, y, z| ((x * 7 + y * 3 + z * 5) % 6) as f64).unwrap();
        let fast = summary(&compute_persistence(&v));
        let slow = summary(&naive_persistence(&v).unwrap());
        assert_eq!(fast, slow);
    }
}
