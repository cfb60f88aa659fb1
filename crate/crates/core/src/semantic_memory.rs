//! 3D semantic voxel memory and its projection to a 2D navigation map.

use crate::geometry::Box3;
use crate::vocab::ObjType;
use crate::world::{Cell, Observation, AGENT_HEIGHT};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub const VOXEL_SIZE: f64 = 0.25;

const EPS: f64 = 1e-9;

/// Voxel content. Unknown voxels are simply absent from the memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Free,
    Object(ObjType),
}

/// Integer voxel coordinate `(x, y, z)`.
pub type Voxel = [i32; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMemory {
    voxel_size: f64,
    /// Lattice size in voxels along x, y, z.
    extent: [i32; 3],
    cells: BTreeMap<Voxel, Label>,
}

impl VoxelMemory {
    pub fn new(voxel_size: f64, extent: [i32; 3]) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        Self { voxel_size, extent, cells: BTreeMap::new() }
    }

    /// Memory spanning a room of the given bounds.
    pub fn for_room(bounds: &Box3) -> Self {
        let m = bounds.max();
        let n = |v: f64| (v / VOXEL_SIZE - EPS).ceil() as i32;
        Self::new(VOXEL_SIZE, [n(m.x), n(m.y), n(m.z)])
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn extent(&self) -> [i32; 3] {
        self.extent
    }

    pub fn get(&self, v: Voxel) -> Option<Label> {
        self.cells.get(&v).copied()
    }

    pub fn labeled(&self) -> impl Iterator<Item = (Voxel, Label)> + '_ {
        self.cells.iter().map(|(v, l)| (*v, *l))
    }

    pub fn known_count(&self) -> usize {
        self.cells.len()
    }

    pub fn unknown_count(&self) -> usize {
        let [x, y, z] = self.extent;
        (x * y * z) as usize - self.cells.len()
    }

    /// Voxels inside the lattice that overlap `b` with positive volume.
    pub fn voxels_of(&self, b: &Box3) -> Vec<Voxel> {
        let vs = self.voxel_size;
        let (lo, hi) = (b.min(), b.max());
        let range = |l: f64, h: f64, n: i32| {
            let a = ((l / vs).floor() as i32).max(0);
            let z = ((h / vs).ceil() as i32).min(n);
            (a..z).filter(move |i| {
                let (c0, c1) = (*i as f64 * vs, (*i + 1) as f64 * vs);
                h.min(c1) - l.max(c0) > EPS
            })
        };
        let mut out = Vec::new();
        for x in range(lo.x, hi.x, self.extent[0]) {
            for y in range(lo.y, hi.y, self.extent[1]) {
                for z in range(lo.z, hi.z, self.extent[2]) {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    fn band_height(&self) -> i32 {
        ((AGENT_HEIGHT / self.voxel_size) - EPS).ceil() as i32
    }

    /// Write every visible object's voxels with its label (latest write
    /// wins) and mark the viewpoint column's band as free where unknown.
    pub fn integrate(&mut self, observation: &Observation) {
        for v in &observation.visible {
            for voxel in self.voxels_of(&v.bbox) {
                self.cells.insert(voxel, Label::Object(v.obj_type));
            }
        }
        let c = observation.viewpoint.cell;
        if c.x >= 0 && c.z >= 0 && c.x < self.extent[0] && c.z < self.extent[2] {
            for y in 0..self.band_height().min(self.extent[1]) {
                self.cells.entry([c.x, y, c.z]).or_insert(Label::Free);
            }
        }
    }

    pub fn project_2d(&self) -> SemanticMap2D {
        self.project_2d_with(true)
    }

    /// Collapse each vertical column into one map cell. A cell is blocked
    /// when an object voxel lies inside the agent's height band; columns
    /// with no information follow `unknown_traversable`.
    pub fn project_2d_with(&self, unknown_traversable: bool) -> SemanticMap2D {
        let [nx, _, nz] = self.extent;
        let band = self.band_height();
        let mut map = SemanticMap2D::empty(self.voxel_size, nx, nz, unknown_traversable);
        for (&[x, y, z], &label) in &self.cells {
            let cell = map.cell_mut(Cell::new(x, z)).expect("voxel inside extent");
            cell.labels.insert(label);
            if y < band && matches!(label, Label::Object(_)) {
                cell.blocked = true;
            }
        }
        map
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MapCell {
    /// Union of voxel labels in the column; empty means Unknown.
    pub labels: BTreeSet<Label>,
    pub blocked: bool,
}

impl MapCell {
    pub fn is_unknown(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn object_labels(&self) -> impl Iterator<Item = ObjType> + '_ {
        self.labels.iter().filter_map(|l| match l {
            Label::Object(t) => Some(*t),
            Label::Free => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap2D {
    pub cell_size: f64,
    pub nx: i32,
    pub nz: i32,
    pub unknown_traversable: bool,
    cells: Vec<MapCell>,
}

impl SemanticMap2D {
    pub fn empty(cell_size: f64, nx: i32, nz: i32, unknown_traversable: bool) -> Self {
        Self { cell_size, nx, nz, unknown_traversable, cells: vec![MapCell::default(); (nx * nz) as usize] }
    }

    /// Map with explicit blocked cells and no labels, handy for planning tests.
    pub fn from_blocked(nx: i32, nz: i32, blocked: impl IntoIterator<Item = Cell>) -> Self {
        let mut m = Self::empty(VOXEL_SIZE, nx, nz, true);
        for c in blocked {
            if let Some(cell) = m.cell_mut(c) {
                cell.blocked = true;
                cell.labels.insert(Label::Free);
            }
        }
        m
    }

    fn index(&self, c: Cell) -> Option<usize> {
        (c.x >= 0 && c.z >= 0 && c.x < self.nx && c.z < self.nz).then(|| (c.z * self.nx + c.x) as usize)
    }

    pub fn cell(&self, c: Cell) -> Option<&MapCell> {
        self.index(c).map(|i| &self.cells[i])
    }

    pub fn cell_mut(&mut self, c: Cell) -> Option<&mut MapCell> {
        self.index(c).map(|i| &mut self.cells[i])
    }

    pub fn contains(&self, c: Cell) -> bool {
        self.index(c).is_some()
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        match self.cell(c) {
            None => false,
            Some(cell) if cell.is_unknown() => self.unknown_traversable,
            Some(cell) => !cell.blocked,
        }
    }

    /// All cells in `(x, z)` order.
    pub fn cells(&self) -> impl Iterator<Item = (Cell, &MapCell)> + '_ {
        (0..self.nx).flat_map(move |x| {
            (0..self.nz).map(move |z| {
                let c = Cell::new(x, z);
                (c, self.cell(c).expect("in range"))
            })
        })
    }

    /// Cell-wise union of two maps over the same lattice.
    pub fn merge(&self, other: &SemanticMap2D) -> SemanticMap2D {
        assert_eq!((self.nx, self.nz), (other.nx, other.nz), "maps must share a lattice");
        let mut out = self.clone();
        for (a, b) in out.cells.iter_mut().zip(&other.cells) {
            a.labels.extend(b.labels.iter().copied());
            a.blocked |= b.blocked;
        }
        out
    }

    /// Text dump: a header line, then one row per z line. Tokens are `?`
    /// (unknown), `.` (free) or `+`-joined vocabulary indices; a trailing
    /// `^` marks labeled cells that are still traversable.
    pub fn dump(&self) -> String {
        let mut out = format!("# map nx={} nz={} cell_size={}\n", self.nx, self.nz, self.cell_size);
        for z in 0..self.nz {
            let row: Vec<String> = (0..self.nx)
                .map(|x| {
                    let cell = self.cell(Cell::new(x, z)).expect("in range");
                    if cell.is_unknown() {
                        return "?".to_owned();
                    }
                    let idx: Vec<String> = cell.object_labels().map(|t| t.index().to_string()).collect();
                    if idx.is_empty() {
                        return ".".to_owned();
                    }
                    let mut tok = idx.join("+");
                    if !cell.blocked {
                        tok.push('^');
                    }
                    tok
                })
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}
