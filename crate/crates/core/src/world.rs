//! Discrete room model: objects with boxes and affordances, containment,
//! the agent on a floor lattice, the visibility predicate and execution
//! of the three manipulation actions.

use crate::geometry::{centroid_distance, iou3d, Box3, Vec3};
use crate::vocab::{ObjType, RoomType};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const CELL_SIZE: f64 = 0.25;
pub const VISIBILITY_DISTANCE: f64 = 1.5;
/// Full horizontal field of view, degrees.
pub const FIELD_OF_VIEW_DEG: f64 = 90.0;
pub const REACH_RADIUS: f64 = 1.0;
/// Objects whose bottom lies below this height block the floor cells under them.
pub const AGENT_HEIGHT: f64 = 1.0;
pub const CONTAINMENT_THRESHOLD: f64 = 0.9;
pub const SCENE_SCHEMA_VERSION: u32 = 1;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Floor lattice coordinate. Ordered by `(x, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub z: i32,
}

impl Cell {
    pub const fn new(x: i32, z: i32) -> Self {
        Self { x, z }
    }

    /// 4-neighbors in the fixed order +x, -x, +z, -z.
    pub fn neighbors4(self) -> [Cell; 4] {
        Heading::ALL.map(|h| self.step(h))
    }

    pub fn step(self, h: Heading) -> Cell {
        let (dx, dz) = h.delta();
        Cell::new(self.x + dx, self.z + dz)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.z.abs_diff(other.z)
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.manhattan(other) == 1
    }
}

impl From<[i32; 2]> for Cell {
    fn from(v: [i32; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.z]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::PosX, Heading::NegX, Heading::PosZ, Heading::NegZ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::PosX => (1, 0),
            Heading::NegX => (-1, 0),
            Heading::PosZ => (0, 1),
            Heading::NegZ => (0, -1),
        }
    }

    /// Heading from `from` to the 4-adjacent `to`.
    pub fn between(from: Cell, to: Cell) -> Option<Heading> {
        Heading::ALL.into_iter().find(|h| from.step(*h) == to)
    }

    /// Heading whose direction is closest to the planar vector `(dx, dz)`.
    /// Ties resolve in `ALL` order.
    pub fn facing(dx: f64, dz: f64) -> Heading {
        let mut best = Heading::PosX;
        let mut best_dot = f64::NEG_INFINITY;
        for h in Heading::ALL {
            let (hx, hz) = h.delta();
            let dot = hx as f64 * dx + hz as f64 * dz;
            if dot > best_dot + EPS {
                best = h;
                best_dot = dot;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub cell: Cell,
    pub heading: Heading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    #[serde(rename = "type")]
    pub obj_type: ObjType,
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub openable: bool,
    pub pickupable: bool,
    pub movable: bool,
    pub is_open: bool,
    pub parent_id: Option<ObjectId>,
}

impl ObjectInstance {
    /// Instance with the type's default affordances, closed and uncontained.
    pub fn of_type(id: impl Into<ObjectId>, obj_type: ObjType, bbox: Box3) -> Self {
        let info = obj_type.info();
        Self {
            id: id.into(),
            obj_type,
            bbox,
            openable: info.openable,
            pickupable: info.pickupable,
            movable: info.movable,
            is_open: false,
            parent_id: None,
        }
    }

    pub fn inside(mut self, parent: &ObjectId) -> Self {
        self.parent_id = Some(parent.clone());
        self
    }

    pub fn opened(mut self) -> Self {
        self.is_open = true;
        self
    }
}

impl From<String> for ObjectId {
    fn from(s: String) -> Self {
        ObjectId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub cell: Cell,
    pub heading: Heading,
    pub reach_radius: f64,
    #[serde(default)]
    pub inventory: Vec<ObjectId>,
}

impl AgentState {
    pub fn pose(&self) -> Pose {
        Pose { cell: self.cell, heading: self.heading }
    }
}

/// One object as seen in an observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: ObjectId,
    #[serde(rename = "type")]
    pub obj_type: ObjType,
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub parent_id: Option<ObjectId>,
}

impl From<&ObjectInstance> for VisibleObject {
    fn from(o: &ObjectInstance) -> Self {
        Self { id: o.id.clone(), obj_type: o.obj_type, bbox: o.bbox, parent_id: o.parent_id.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub viewpoint: Pose,
    /// Sorted by id.
    pub visible: Vec<VisibleObject>,
    pub timestamp: u64,
}

impl Observation {
    pub fn get(&self, id: &ObjectId) -> Option<&VisibleObject> {
        self.visible.iter().find(|v| &v.id == id)
    }

    pub fn contains(&self, id: &ObjectId) -> bool {
        self.get(id).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Open,
    Move,
    Pickup,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub target_id: ObjectId,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error("unknown target `{0}`")]
    UnknownTarget(ObjectId),
    #[error("target `{id}` is {distance:.3} m away, beyond reach")]
    OutOfReach { id: ObjectId, distance: f64 },
    #[error("{kind} is not afforded by `{id}`")]
    Unaffordable { kind: ActionKind, id: ObjectId },
    #[error("target `{0}` is inside a closed receptacle")]
    Occluded(ObjectId),
    #[error("no free neighbor cell to move `{0}` into")]
    NoFreeCell(ObjectId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("{to} is not adjacent to {from}")]
    NotAdjacent { from: Cell, to: Cell },
    #[error("{0} is not traversable")]
    Blocked(Cell),
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("object `{0}` lies outside the room bounds")]
    OutOfBounds(ObjectId),
    #[error("duplicate object id `{0}`")]
    DuplicateId(ObjectId),
    #[error("`{child}` references unknown parent `{parent}`")]
    UnknownParent { child: ObjectId, parent: ObjectId },
    #[error("`{child}` parent `{parent}` is not a receptacle")]
    NotReceptacle { child: ObjectId, parent: ObjectId },
    #[error("`{child}` is only {ratio:.3} inside `{parent}`")]
    WeakContainment { child: ObjectId, parent: ObjectId, ratio: f64 },
    #[error("containment cycle through `{0}`")]
    ContainmentCycle(ObjectId),
    #[error("`{a}` and `{b}` overlap with IoU {iou:.3}")]
    Overlap { a: ObjectId, b: ObjectId, iou: f64 },
    #[error("agent cell {0} is not traversable")]
    AgentBlocked(Cell),
    #[error("reach radius must be positive")]
    BadReach,
    #[error("room bounds must start at the origin and span whole cells")]
    BadBounds,
    #[error("unsupported scene schema version {0}")]
    SchemaVersion(u32),
    #[error("scene file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scene file: {0}")]
    Io(#[from] std::io::Error),
}

/// Floor lattice of `nx * nz` cells starting at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub cell_size: f64,
    pub nx: i32,
    pub nz: i32,
}

impl Grid {
    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.z >= 0 && c.x < self.nx && c.z < self.nz
    }

    pub fn center(&self, c: Cell) -> (f64, f64) {
        ((c.x as f64 + 0.5) * self.cell_size, (c.z as f64 + 0.5) * self.cell_size)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.nx).flat_map(move |x| (0..self.nz).map(move |z| Cell::new(x, z)))
    }

    pub fn cell_of(&self, x: f64, z: f64) -> Cell {
        Cell::new((x / self.cell_size).floor() as i32, (z / self.cell_size).floor() as i32)
    }

    /// Cells whose square overlaps the box footprint with positive area.
    pub fn footprint(&self, b: &Box3) -> Vec<Cell> {
        let (lo, hi) = (b.min(), b.max());
        let cs = self.cell_size;
        let x0 = ((lo.x / cs).floor() as i32).max(0);
        let z0 = ((lo.z / cs).floor() as i32).max(0);
        let x1 = ((hi.x / cs).ceil() as i32).min(self.nx);
        let z1 = ((hi.z / cs).ceil() as i32).min(self.nz);
        let mut out = Vec::new();
        for x in x0..x1 {
            for z in z0..z1 {
                let (cx0, cz0) = (x as f64 * cs, z as f64 * cs);
                let ox = hi.x.min(cx0 + cs) - lo.x.max(cx0);
                let oz = hi.z.min(cz0 + cs) - lo.z.max(cz0);
                if ox > EPS && oz > EPS {
                    out.push(Cell::new(x, z));
                }
            }
        }
        out
    }

    pub fn planar_distance(&self, c: Cell, p: Vec3) -> f64 {
        let (x, z) = self.center(c);
        ((p.x - x).powi(2) + (p.z - z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub scene_id: String,
    pub config_id: u32,
    pub room_type: RoomType,
    pub bounds: Box3,
    pub grid: Grid,
    pub objects: BTreeMap<ObjectId, ObjectInstance>,
    /// Objects removed from the room by Pickup, keyed by id.
    pub carried: BTreeMap<ObjectId, ObjectInstance>,
    pub agent: AgentState,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    schema_version: u32,
    scene_id: String,
    config_id: u32,
    room_type: RoomType,
    bounds: Box3,
    cell_size: f64,
    agent: AgentState,
    objects: Vec<ObjectInstance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    carried: Vec<ObjectInstance>,
}

impl World {
    /// Build and validate a world. `bounds` must start at the origin.
    pub fn new(
        scene_id: impl Into<String>,
        room_type: RoomType,
        bounds: Box3,
        objects: impl IntoIterator<Item = ObjectInstance>,
        agent: AgentState,
    ) -> Result<World, WorldError> {
        let grid = grid_for(&bounds, CELL_SIZE)?;
        let mut table = BTreeMap::new();
        for o in objects {
            if let Some(prev) = table.insert(o.id.clone(), o) {
                return Err(WorldError::DuplicateId(prev.id));
            }
        }
        let world = World {
            scene_id: scene_id.into(),
            config_id: 0,
            room_type,
            bounds,
            grid,
            objects: table,
            carried: BTreeMap::new(),
            agent,
            step: 0,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for o in self.objects.values() {
            if !self.bounds.contains_box(&o.bbox) {
                return Err(WorldError::OutOfBounds(o.id.clone()));
            }
            if let Some(pid) = &o.parent_id {
                let parent = self
                    .objects
                    .get(pid)
                    .ok_or_else(|| WorldError::UnknownParent { child: o.id.clone(), parent: pid.clone() })?;
                if !parent.obj_type.info().receptacle {
                    return Err(WorldError::NotReceptacle { child: o.id.clone(), parent: pid.clone() });
                }
                let ratio = o.bbox.containment_in(&parent.bbox);
                if ratio < CONTAINMENT_THRESHOLD {
                    return Err(WorldError::WeakContainment { child: o.id.clone(), parent: pid.clone(), ratio });
                }
            }
        }
        for o in self.objects.values() {
            let mut seen = BTreeSet::new();
            let mut cur = o;
            while let Some(pid) = &cur.parent_id {
                if !seen.insert(pid.clone()) || pid == &o.id {
                    return Err(WorldError::ContainmentCycle(o.id.clone()));
                }
                cur = &self.objects[pid];
            }
        }
        let top: Vec<_> = self.objects.values().filter(|o| o.parent_id.is_none()).collect();
        for (i, a) in top.iter().enumerate() {
            for b in &top[i + 1..] {
                let iou = iou3d(&a.bbox, &b.bbox);
                if iou > 0.5 {
                    return Err(WorldError::Overlap { a: a.id.clone(), b: b.id.clone(), iou });
                }
            }
        }
        if !(self.agent.reach_radius.is_finite() && self.agent.reach_radius > 0.0) {
            return Err(WorldError::BadReach);
        }
        if !self.is_traversable(self.agent.cell) {
            return Err(WorldError::AgentBlocked(self.agent.cell));
        }
        Ok(())
    }

    pub fn get(&self, id: &ObjectId) -> Option<&ObjectInstance> {
        self.objects.get(id)
    }

    pub fn object_count(&self) -> usize {
        self.objects.len() + self.carried.len()
    }

    pub fn count_of_type(&self, ty: ObjType) -> usize {
        self.objects.values().filter(|o| o.obj_type == ty).count()
    }

    fn blocks_floor(o: &ObjectInstance) -> bool {
        o.bbox.min().y < AGENT_HEIGHT
    }

    /// Cells blocked by any object reaching below agent height.
    pub fn occupied_cells(&self) -> BTreeSet<Cell> {
        self.objects.values().filter(|o| Self::blocks_floor(o)).flat_map(|o| self.grid.footprint(&o.bbox)).collect()
    }

    /// Snapshot of traversability for repeated queries on an unchanging world.
    pub fn free_mask(&self) -> FreeMask {
        let occupied = self.occupied_cells();
        let (nx, nz) = (self.grid.nx, self.grid.nz);
        let free = (0..nx).flat_map(|x| (0..nz).map(move |z| Cell::new(x, z))).map(|c| !occupied.contains(&c)).collect();
        FreeMask { nx, nz, free }
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        self.grid.contains(c)
            && !self.objects.values().any(|o| Self::blocks_floor(o) && self.grid.footprint(&o.bbox).contains(&c))
    }

    pub fn footprint_cells(&self, id: &ObjectId) -> Vec<Cell> {
        self.objects.get(id).map(|o| self.grid.footprint(&o.bbox)).unwrap_or_default()
    }

    /// True when some ancestor receptacle is closed.
    pub fn is_hidden(&self, id: &ObjectId) -> bool {
        let mut cur = self.objects.get(id);
        while let Some(o) = cur {
            match &o.parent_id {
                Some(pid) => {
                    let parent = &self.objects[pid];
                    if !parent.is_open {
                        return true;
                    }
                    cur = Some(parent);
                }
                None => return false,
            }
        }
        false
    }

    pub fn children<'a>(&'a self, id: &'a ObjectId) -> impl Iterator<Item = &'a ObjectInstance> + 'a {
        self.objects.values().filter(move |o| o.parent_id.as_ref() == Some(id))
    }

    fn descendants(&self, id: &ObjectId) -> BTreeSet<ObjectId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.clone()];
        while let Some(cur) = stack.pop() {
            for child in self.children(&cur) {
                if out.insert(child.id.clone()) {
                    stack.push(child.id.clone());
                }
            }
        }
        out
    }

    /// Whether a top-level object is in view from `pose`, ignoring containment.
    fn in_view(&self, pose: Pose, o: &ObjectInstance) -> bool {
        let c = o.bbox.center();
        let (ax, az) = self.grid.center(pose.cell);
        let (dx, dz) = (c.x - ax, c.z - az);
        let dist = (dx * dx + dz * dz).sqrt();
        if dist > VISIBILITY_DISTANCE + EPS {
            return false;
        }
        if dist < EPS {
            return true;
        }
        let (hx, hz) = pose.heading.delta();
        let cos = (hx as f64 * dx + hz as f64 * dz) / dist;
        cos >= (FIELD_OF_VIEW_DEG.to_radians() / 2.0).cos() - EPS
    }

    /// Visibility predicate: top-level objects by distance and frustum,
    /// contained objects when every enclosing receptacle is open and the
    /// outermost one is in view.
    pub fn is_visible(&self, pose: Pose, id: &ObjectId) -> bool {
        let Some(mut cur) = self.objects.get(id) else {
            return false;
        };
        while let Some(pid) = &cur.parent_id {
            let parent = &self.objects[pid];
            if !parent.is_open {
                return false;
            }
            cur = parent;
        }
        self.in_view(pose, cur)
    }

    pub fn observe(&self, pose: Pose) -> Observation {
        let visible = self.objects.values().filter(|o| self.is_visible(pose, &o.id)).map(VisibleObject::from).collect();
        Observation { viewpoint: pose, visible, timestamp: self.step }
    }

    pub fn observe_from_agent(&self) -> Observation {
        self.observe(self.agent.pose())
    }

    /// Move the agent one cell; the heading turns to the direction of motion.
    pub fn step_agent(&mut self, to: Cell) -> Result<(), StepError> {
        let from = self.agent.cell;
        let heading = Heading::between(from, to).ok_or(StepError::NotAdjacent { from, to })?;
        if !self.is_traversable(to) {
            return Err(StepError::Blocked(to));
        }
        self.agent.cell = to;
        self.agent.heading = heading;
        self.step += 1;
        Ok(())
    }

    pub fn turn_agent(&mut self, heading: Heading) {
        self.agent.heading = heading;
    }

    pub fn reach_distance(&self, id: &ObjectId) -> Option<f64> {
        self.objects.get(id).map(|o| self.grid.planar_distance(self.agent.cell, o.bbox.center()))
    }

    /// Execute a manipulation. On error the world is unchanged.
    pub fn apply_action(&mut self, action: &Action) -> Result<(), ActionError> {
        let id = &action.target_id;
        let target = self.objects.get(id).ok_or_else(|| ActionError::UnknownTarget(id.clone()))?;
        let distance = self.grid.planar_distance(self.agent.cell, target.bbox.center());
        if distance > self.agent.reach_radius + EPS {
            return Err(ActionError::OutOfReach { id: id.clone(), distance });
        }
        if self.is_hidden(id) {
            return Err(ActionError::Occluded(id.clone()));
        }
        let unaffordable = || ActionError::Unaffordable { kind: action.kind, id: id.clone() };
        match action.kind {
            ActionKind::Open => {
                if !target.openable {
                    return Err(unaffordable());
                }
                self.objects.get_mut(id).expect("checked").is_open = true;
            }
            ActionKind::Pickup => {
                if !target.pickupable || self.children(id).next().is_some() {
                    return Err(unaffordable());
                }
                let mut obj = self.objects.remove(id).expect("checked");
                obj.parent_id = None;
                self.carried.insert(id.clone(), obj);
                self.agent.inventory.push(id.clone());
            }
            ActionKind::Move => {
                if !target.movable {
                    return Err(unaffordable());
                }
                let offset = self.free_move_offset(id).ok_or_else(|| ActionError::NoFreeCell(id.clone()))?;
                let mut moved = self.descendants(id);
                moved.insert(id.clone());
                for mid in moved {
                    let o = self.objects.get_mut(&mid).expect("descendant exists");
                    o.bbox = o.bbox.translated(offset);
                }
            }
        }
        self.step += 1;
        Ok(())
    }

    /// First one-cell displacement (in +x, -x, +z, -z order) that keeps the
    /// object in the room, off the agent's cell and clear of other objects.
    fn free_move_offset(&self, id: &ObjectId) -> Option<Vec3> {
        let target = &self.objects[id];
        let family = {
            let mut f = self.descendants(id);
            f.insert(id.clone());
            f
        };
        let cs = self.grid.cell_size;
        Heading::ALL.into_iter().find_map(|h| {
            let (dx, dz) = h.delta();
            let offset = Vec3::new(dx as f64 * cs, 0.0, dz as f64 * cs);
            let candidate = target.bbox.translated(offset);
            if !self.bounds.contains_box(&candidate) {
                return None;
            }
            if Self::blocks_floor(target) && self.grid.footprint(&candidate).contains(&self.agent.cell) {
                return None;
            }
            let collides =
                self.objects.values().filter(|o| !family.contains(&o.id)).any(|o| candidate.intersection_volume(&o.bbox) > EPS);
            (!collides).then_some(offset)
        })
    }

    pub fn to_scene_json(&self) -> String {
        let file = SceneFile {
            schema_version: SCENE_SCHEMA_VERSION,
            scene_id: self.scene_id.clone(),
            config_id: self.config_id,
            room_type: self.room_type,
            bounds: self.bounds,
            cell_size: self.grid.cell_size,
            agent: self.agent.clone(),
            objects: self.objects.values().cloned().collect(),
            carried: self.carried.values().cloned().collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("scene serializes");
        text.push('\n');
        text
    }

    pub fn from_scene_json(text: &str) -> Result<World, WorldError> {
        let file: SceneFile = serde_json::from_str(text)?;
        if file.schema_version != SCENE_SCHEMA_VERSION {
            return Err(WorldError::SchemaVersion(file.schema_version));
        }
        let grid = grid_for(&file.bounds, file.cell_size)?;
        let mut objects = BTreeMap::new();
        for o in file.objects {
            if let Some(prev) = objects.insert(o.id.clone(), o) {
                return Err(WorldError::DuplicateId(prev.id));
            }
        }
        let world = World {
            scene_id: file.scene_id,
            config_id: file.config_id,
            room_type: file.room_type,
            bounds: file.bounds,
            grid,
            objects,
            carried: file.carried.into_iter().map(|o| (o.id.clone(), o)).collect(),
            agent: file.agent,
            step: 0,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: &Path) -> Result<World, WorldError> {
        World::from_scene_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_scene_json())?;
        Ok(())
    }

    /// Planar distance between two objects' centroids.
    pub fn distance_between(&self, a: &ObjectId, b: &ObjectId) -> Option<f64> {
        Some(centroid_distance(&self.objects.get(a)?.bbox, &self.objects.get(b)?.bbox))
    }
}

fn grid_for(bounds: &Box3, cell_size: f64) -> Result<Grid, WorldError> {
    let (lo, hi) = (bounds.min(), bounds.max());
    if lo.x != 0.0 || lo.y != 0.0 || lo.z != 0.0 || !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(WorldError::BadBounds);
    }
    let nx = hi.x / cell_size;
    let nz = hi.z / cell_size;
    if (nx - nx.round()).abs() > 1e-6 || (nz - nz.round()).abs() > 1e-6 {
        return Err(WorldError::BadBounds);
    }
    Ok(Grid { cell_size, nx: nx.round() as i32, nz: nz.round() as i32 })
}

/// Precomputed traversability of every grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeMask {
    nx: i32,
    nz: i32,
    free: Vec<bool>,
}

impl FreeMask {
    pub fn is_free(&self, c: Cell) -> bool {
        c.x >= 0 && c.z >= 0 && c.x < self.nx && c.z < self.nz && self.free[(c.x * self.nz + c.z) as usize]
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn bx(min: [f64; 3], max: [f64; 3]) -> Box3 {
        Box3::new(min, max).unwrap()
    }

    fn agent_at(x: i32, z: i32, heading: Heading) -> AgentState {
        AgentState { cell: Cell::new(x, z), heading, reach_radius: REACH_RADIUS, inventory: vec![] }
    }

    /// 4 m x 4 m kitchen: fridge holding an egg at x in [2.0, 2.75], a drawer,
    /// a book on the far side and a chair.
    pub fn fridge_world() -> World {
        let fridge = ObjectInstance::of_type("Fridge_01", ObjType::named("Fridge"), bx([2.0, 0.0, 1.0], [2.75, 1.8, 1.75]));
        let egg = ObjectInstance::of_type("Egg_01", ObjType::named("Egg"), bx([2.3, 0.5, 1.3], [2.35, 0.56, 1.35]))
            .inside(&"Fridge_01".into());
        let drawer = ObjectInstance::of_type("Drawer_01", ObjType::named("Drawer"), bx([0.75, 0.0, 1.0], [1.2, 0.6, 1.45]));
        let book = ObjectInstance::of_type("Book_01", ObjType::named("Book"), bx([3.7, 0.0, 3.7], [3.9, 0.04, 3.85]));
        let chair = ObjectInstance::of_type("Chair_01", ObjType::named("Chair"), bx([0.5, 0.0, 3.0], [0.95, 0.9, 3.45]));
        World::new(
            "test_kitchen",
            RoomType::Kitchen,
            bx([0.0; 3], [4.0, 2.5, 4.0]),
            [fridge, egg, drawer, book, chair],
            agent_at(6, 5, Heading::PosX),
        )
        .unwrap()
    }

    fn ids(obs: &Observation) -> Vec<&str> {
        obs.visible.iter().map(|v| v.id.as_str()).collect()
    }

    #[test]
    fn closed_receptacle_hides_contents_until_opened() {
        let mut w = fridge_world();
        let pose = w.agent.pose();
        // agent center (1.625, 1.375), fridge centroid (2.375, 1.375): 0.75 m ahead
        let before = w.observe(pose);
        assert!(before.contains(&"Fridge_01".into()));
        assert!(!before.contains(&"Egg_01".into()));

        w.apply_action(&Action { kind: ActionKind::Open, target_id: "Fridge_01".into() }).unwrap();
        let after = w.observe(pose);
        assert!(after.contains(&"Egg_01".into()));
        for id in ids(&before) {
            assert!(after.contains(&id.into()), "Open must not hide {id}");
        }
    }

    #[test]
    fn far_objects_are_not_visible() {
        let w = fridge_world();
        let pose = Pose { cell: Cell::new(0, 0), heading: Heading::PosZ };
        let obs = w.observe(pose);
        // Exhaustive check against the predicate's definition.
        for o in w.objects.values() {
            let d = w.grid.planar_distance(pose.cell, o.bbox.center());
            if d > VISIBILITY_DISTANCE {
                assert!(!obs.contains(&o.id), "{} at {d}", o.id);
            }
        }
        assert!(!obs.contains(&"Book_01".into()));
    }

    #[test]
    fn frustum_excludes_objects_behind() {
        let w = fridge_world();
        let facing_away = w.observe(Pose { cell: Cell::new(6, 5), heading: Heading::NegX });
        assert!(!facing_away.contains(&"Fridge_01".into()));
    }

    #[test]
    fn observe_is_pure() {
        let w = fridge_world();
        let pose = w.agent.pose();
        assert_eq!(w.observe(pose), w.observe(pose));
    }

    #[test]
    fn open_and_reach_errors() {
        let mut w = fridge_world();
        let open = |id: &str| Action { kind: ActionKind::Open, target_id: id.into() };
        // drawer centroid (0.975, 1.225) is ~0.67 m from the agent
        w.apply_action(&open("Drawer_01")).unwrap();
        assert!(w.objects[&ObjectId::from("Drawer_01")].is_open);
        // opening twice is a no-op success
        w.apply_action(&open("Drawer_01")).unwrap();

        let far = w.apply_action(&Action { kind: ActionKind::Pickup, target_id: "Book_01".into() });
        assert!(matches!(far, Err(ActionError::OutOfReach { .. })));
        assert!(matches!(w.apply_action(&open("Chair_02")), Err(ActionError::UnknownTarget(_))));
        let egg = w.apply_action(&Action { kind: ActionKind::Pickup, target_id: "Egg_01".into() });
        assert_eq!(egg, Err(ActionError::Occluded("Egg_01".into())));
    }

    #[test]
    fn unaffordable_actions_leave_world_unchanged() {
        let mut w = fridge_world();
        let before = w.clone();
        let r = w.apply_action(&Action { kind: ActionKind::Pickup, target_id: "Fridge_01".into() });
        assert!(matches!(r, Err(ActionError::Unaffordable { kind: ActionKind::Pickup, .. })));
        assert_eq!(w, before);
    }

    #[test]
    fn pickup_moves_object_to_inventory() {
        let mut w = fridge_world();
        w.apply_action(&Action { kind: ActionKind::Open, target_id: "Fridge_01".into() }).unwrap();
        let count = w.object_count();
        w.apply_action(&Action { kind: ActionKind::Pickup, target_id: "Egg_01".into() }).unwrap();
        assert_eq!(w.object_count(), count);
        assert!(w.get(&"Egg_01".into()).is_none());
        assert_eq!(w.agent.inventory, vec![ObjectId::from("Egg_01")]);
    }

    #[test]
    fn move_translates_one_cell_without_collision() {
        let mut w = fridge_world();
        w.agent.cell = Cell::new(3, 11);
        let before = w.objects[&ObjectId::from("Chair_01")].bbox;
        w.apply_action(&Action { kind: ActionKind::Move, target_id: "Chair_01".into() }).unwrap();
        let after = w.objects[&ObjectId::from("Chair_01")].bbox;
        let d = after.min() - before.min();
        assert!((d.norm() - CELL_SIZE).abs() < 1e-12);
        assert_eq!(after.extents(), before.extents());
        // Collision oracle: recompute every pairwise overlap.
        for o in w.objects.values().filter(|o| o.id.as_str() != "Chair_01") {
            assert_eq!(after.intersection_volume(&o.bbox), 0.0, "{}", o.id);
        }
        assert!(!w.grid.footprint(&after).contains(&w.agent.cell));
        // +x is free here, so it wins the tie order.
        assert!(d.x > 0.0);
    }

    #[test]
    fn move_skips_directions_blocked_by_agent() {
        let mut w = fridge_world();
        // chair footprint is cells x 2..=3, z 12..=13; stand just east of it
        w.agent.cell = Cell::new(4, 12);
        w.apply_action(&Action { kind: ActionKind::Move, target_id: "Chair_01".into() }).unwrap();
        let after = w.objects[&ObjectId::from("Chair_01")].bbox;
        assert!(after.min().x < 0.5, "expected -x displacement, got {:?}", after.min());
    }

    #[test]
    fn occupancy_and_steps() {
        let mut w = fridge_world();
        let occ = w.occupied_cells();
        assert!(occ.contains(&Cell::new(8, 4)));
        assert!(!occ.contains(&Cell::new(6, 5)));
        assert_eq!(w.step_agent(Cell::new(8, 5)), Err(StepError::NotAdjacent { from: Cell::new(6, 5), to: Cell::new(8, 5) }));
        assert_eq!(w.step_agent(Cell::new(7, 5)), Ok(()));
        assert_eq!(w.step_agent(Cell::new(8, 5)), Err(StepError::Blocked(Cell::new(8, 5))));
        assert_eq!(w.agent.heading, Heading::PosX);
    }

    #[test]
    fn validation_rejects_bad_worlds() {
        let w = fridge_world();
        let mut objs: Vec<_> = w.objects.values().cloned().collect();
        objs.push(
            ObjectInstance::of_type("Egg_02", ObjType::named("Egg"), bx([0.1, 0.1, 0.1], [0.2, 0.2, 0.2]))
                .inside(&"Fridge_01".into()),
        );
        let err = World::new("x", RoomType::Kitchen, w.bounds, objs, w.agent.clone()).unwrap_err();
        assert!(matches!(err, WorldError::WeakContainment { .. }));

        let mut objs: Vec<_> = w.objects.values().cloned().collect();
        objs.push(ObjectInstance::of_type("Fridge_02", ObjType::named("Fridge"), bx([2.05, 0.0, 1.0], [2.8, 1.8, 1.75])));
        let err = World::new("x", RoomType::Kitchen, w.bounds, objs, w.agent.clone()).unwrap_err();
        assert!(matches!(err, WorldError::Overlap { .. }));
    }

    #[test]
    fn scene_file_round_trip() {
        let w = fridge_world();
        let text = w.to_scene_json();
        let back = World::from_scene_json(&text).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_scene_json(), text);
    }

    #[test]
    fn facing_picks_closest_heading() {
        assert_eq!(Heading::facing(1.0, 0.2), Heading::PosX);
        assert_eq!(Heading::facing(-0.1, -2.0), Heading::NegZ);
        assert_eq!(Heading::facing(1.0, 1.0), Heading::PosX);
    }
}
