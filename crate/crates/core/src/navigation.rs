//! Goal lookup in the 2D semantic map, all-pairs shortest paths over its
//! traversable cells, path planning to a goal and the SPL metric.

use crate::semantic_memory::SemanticMap2D;
use crate::vocab::ObjType;
use crate::world::Cell;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use thiserror::Error;

/// Step budgets evaluated by default.
pub const DEFAULT_BUDGETS: [u32; 2] = [25, 50];

const INF: u32 = u32::MAX / 2;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NavError {
    #[error("no traversable cell next to the goal is reachable from {0}")]
    Unreachable(Cell),
    #[error("start cell {0} is not traversable")]
    StartBlocked(Cell),
    #[error("empty goal set")]
    NoGoal,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("metric over an empty result list")]
    EmptyInput,
}

/// Cells whose label set contains `label`, in `(x, z)` order.
pub fn locate_label(map: &SemanticMap2D, label: ObjType) -> Vec<Cell> {
    map.cells().filter(|(_, c)| c.object_labels().any(|t| t == label)).map(|(c, _)| c).collect()
}

/// Distance and next-hop tables over the traversable cells of a map.
#[derive(Debug, Clone)]
pub struct ApspTables {
    nx: i32,
    nz: i32,
    node_of: Vec<u32>,
    cells: Vec<Cell>,
    dist: Vec<u32>,
    next: Vec<u32>,
}

impl ApspTables {
    fn node(&self, c: Cell) -> Option<usize> {
        if c.x < 0 || c.z < 0 || c.x >= self.nx || c.z >= self.nz {
            return None;
        }
        let n = self.node_of[(c.z * self.nx + c.x) as usize];
        (n != NONE).then_some(n as usize)
    }

    pub fn node_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        self.node(c).is_some()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Shortest 4-connected step count, `None` when disconnected or blocked.
    pub fn dist(&self, from: Cell, to: Cell) -> Option<u32> {
        let (u, v) = (self.node(from)?, self.node(to)?);
        let d = self.dist[u * self.cells.len() + v];
        (d < INF).then_some(d)
    }

    /// One optimal path including both endpoints.
    pub fn path(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        let n = self.cells.len();
        let (mut u, v) = (self.node(from)?, self.node(to)?);
        if self.dist[u * n + v] >= INF {
            return None;
        }
        let mut out = vec![self.cells[u]];
        while u != v {
            u = self.next[u * n + v] as usize;
            out.push(self.cells[u]);
        }
        Some(out)
    }
}

/// Floyd-Warshall over the traversable cells with unit 4-neighbor edges.
pub fn floyd_apsp(map: &SemanticMap2D) -> ApspTables {
    let mut node_of = vec![NONE; (map.nx * map.nz) as usize];
    let mut cells = Vec::new();
    for z in 0..map.nz {
        for x in 0..map.nx {
            let c = Cell::new(x, z);
            if map.is_traversable(c) {
                node_of[(z * map.nx + x) as usize] = cells.len() as u32;
                cells.push(c);
            }
        }
    }
    let n = cells.len();
    let mut dist = vec![INF; n * n];
    let mut next = vec![NONE; n * n];
    for (u, c) in cells.iter().enumerate() {
        dist[u * n + u] = 0;
        next[u * n + u] = u as u32;
        for nb in c.neighbors4() {
            if nb.x < 0 || nb.z < 0 || nb.x >= map.nx || nb.z >= map.nz {
                continue;
            }
            let v = node_of[(nb.z * map.nx + nb.x) as usize];
            if v != NONE {
                dist[u * n + v as usize] = 1;
                next[u * n + v as usize] = v;
            }
        }
    }

    let mut row_k = vec![0u32; n];
    for k in 0..n {
        row_k.copy_from_slice(&dist[k * n..(k + 1) * n]);
        for i in 0..n {
            let dik = dist[i * n + k];
            if dik >= INF {
                continue;
            }
            let hop = next[i * n + k];
            let row_i = &mut dist[i * n..(i + 1) * n];
            let next_i = &mut next[i * n..(i + 1) * n];
            for j in 0..n {
                let cand = dik + row_k[j];
                if cand < row_i[j] {
                    row_i[j] = cand;
                    next_i[j] = hop;
                }
            }
        }
    }

    ApspTables { nx: map.nx, nz: map.nz, node_of, cells, dist, next }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathPlan {
    pub cells: Vec<Cell>,
    pub length: u32,
}

impl PathPlan {
    pub fn start(&self) -> Cell {
        self.cells[0]
    }

    pub fn end(&self) -> Cell {
        *self.cells.last().expect("plans are never empty")
    }
}

/// Traversable cells 4-adjacent to any goal cell.
pub fn approach_cells(tables: &ApspTables, goal_cells: &[Cell]) -> BTreeSet<Cell> {
    goal_cells.iter().flat_map(|g| g.neighbors4()).filter(|c| tables.is_traversable(*c)).collect()
}

/// Shortest path from `start` to the nearest traversable cell next to any
/// goal cell; equal distances resolve to the smallest `(x, z)`.
pub fn plan_path(tables: &ApspTables, start: Cell, goal_cells: &[Cell]) -> Result<PathPlan, NavError> {
    if !tables.is_traversable(start) {
        return Err(NavError::StartBlocked(start));
    }
    if goal_cells.is_empty() {
        return Err(NavError::NoGoal);
    }
    let best = approach_cells(tables, goal_cells)
        .into_iter()
        .filter_map(|c| tables.dist(start, c).map(|d| (d, c)))
        .min()
        .ok_or(NavError::Unreachable(start))?;
    let cells = tables.path(start, best.1).expect("distance is finite");
    Ok(PathPlan { length: best.0, cells })
}

/// Step counts from one source cell over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfsDistances {
    nx: i32,
    nz: i32,
    dist: Vec<Option<u32>>,
}

impl BfsDistances {
    /// Steps to `c`, or `None` when outside the grid or unreachable.
    pub fn get(&self, c: Cell) -> Option<u32> {
        if c.x < 0 || c.z < 0 || c.x >= self.nx || c.z >= self.nz {
            return None;
        }
        self.dist[(c.x * self.nz + c.z) as usize]
    }
}

/// Single-source BFS over the `passable` cells of an `nx * nz` grid.
pub fn grid_bfs(nx: i32, nz: i32, start: Cell, passable: impl Fn(Cell) -> bool) -> BfsDistances {
    let idx = |c: Cell| (c.x * nz + c.z) as usize;
    let inside = |c: Cell| c.x >= 0 && c.z >= 0 && c.x < nx && c.z < nz;
    let mut dist = vec![None; (nx * nz).max(0) as usize];
    if inside(start) && passable(start) {
        dist[idx(start)] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            let d = dist[idx(c)].expect("queued cells have a distance");
            for nb in c.neighbors4() {
                if inside(nb) && dist[idx(nb)].is_none() && passable(nb) {
                    dist[idx(nb)] = Some(d + 1);
                    queue.push_back(nb);
                }
            }
        }
    }
    BfsDistances { nx, nz, dist }
}

/// Outcome of one navigation attempt, in lattice steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavResult {
    pub success: bool,
    /// Steps actually taken, `p`.
    pub path_taken: u32,
    /// Shortest possible steps, `ℓ`.
    pub shortest: u32,
    pub budget: u32,
}

impl NavResult {
    /// This episode's term of the SPL sum.
    pub fn spl_term(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let denom = self.path_taken.max(self.shortest);
        if denom == 0 {
            return 1.0;
        }
        self.shortest as f64 / denom as f64
    }
}

/// Success weighted by path length: `(1/N) Σ S_i ℓ_i / max(p_i, ℓ_i)`.
pub fn spl(results: &[NavResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(results.iter().map(NavResult::spl_term).sum::<f64>() / results.len() as f64)
}
