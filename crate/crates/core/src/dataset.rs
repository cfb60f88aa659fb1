//! Procedural scenes, episode generation, ground truth, persistence and
//! scene-level splits.

use crate::comprehension::{resolve, RecQuery, DEFAULT_SCORE_THRESHOLD};
use crate::geometry::Box3;
use crate::language::{parse_question, realize_question, unambiguous_res, QType, QuestionAst};
use crate::navigation::grid_bfs;
use crate::pipeline::{affordance, answer_question, shortest_to_target, stable_hash, sweep_poses, Answer, DEFAULT_MAX_COUNT};
use crate::scene_graph::{assign_relation, SceneGraph};
use crate::vocab::{ObjType, Placement, Relation, RoomType};
use crate::world::{
    Action, ActionKind, AgentState, Cell, Heading, ObjectId, ObjectInstance, Pose, World, WorldError, CELL_SIZE, REACH_RADIUS,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SCALE: usize = 12;
pub const DEFAULT_CONFIGS_PER_SCENE: u32 = 3;
pub const DEFAULT_EPISODES_PER_SCENE: usize = 34;
pub const DEFAULT_TRAIN_FRACTION: f64 = 100.0 / 120.0;
/// Target share of each question type.
pub const TYPE_PROPORTIONS: [(QType, f64); 3] = [(QType::Existence, 0.486), (QType::Counting, 0.194), (QType::Spatial, 0.320)];
pub const MIN_OBJECTS: usize = 8;
pub const MAX_OBJECTS: usize = 25;
/// Start cells are drawn this many steps or more from the arrival cell.
pub const MIN_START_DISTANCE: u32 = 4;
pub const MAX_START_DISTANCE: u32 = 45;

const ROOM_HEIGHT: f64 = 2.5;
const SCENE_ATTEMPTS: u64 = 64;
const START_TRIES: usize = 48;
const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("could not sample a valid {room_type:?} scene in {attempts} attempts")]
    GenerationFailure { room_type: RoomType, attempts: u64 },
    #[error("scene {scene_id} admits no valid {qtype} episode")]
    NoValidEpisode { scene_id: String, qtype: QType },
    #[error("a split needs at least 2 scenes, got {0}")]
    TooFewScenes(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("dataset line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("scene file {path}: {source}")]
    Scene { path: PathBuf, source: WorldError },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub scene_id: String,
    pub config_id: u32,
    pub qtype: QType,
    pub question: String,
    pub question_ast: QuestionAst,
    pub target_object_id: ObjectId,
    pub start: Pose,
    pub goal_cell: Cell,
    pub required_action: ActionKind,
    pub truth: Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub room_type: RoomType,
    pub split: Split,
    /// Scene files relative to the dataset directory, one per configuration.
    pub configs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub scale: usize,
    pub train_fraction: f64,
    pub scenes: Vec<SceneEntry>,
    pub episode_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub episodes: Vec<Episode>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum DatasetRecord {
    Manifest(DatasetManifest),
    Episode(Episode),
}

pub fn write_dataset(dataset: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, &DatasetRecord::Manifest(dataset.manifest.clone()))?;
    out.write_all(b"\n")?;
    for e in &dataset.episodes {
        serde_json::to_writer(&mut *out, &DatasetRecord::Episode(e.clone()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(input: impl BufRead) -> Result<Dataset, DatasetError> {
    let mut manifest: Option<DatasetManifest> = None;
    let mut episodes = Vec::new();
    let mut last = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        last = i + 1;
        let schema = |message: String| DatasetError::Schema { line: i + 1, message };
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        match rec {
            DatasetRecord::Manifest(m) => {
                if i != 0 {
                    return Err(schema("manifest must be the first record".into()));
                }
                if m.schema_version != DATASET_SCHEMA_VERSION {
                    return Err(schema(format!("unsupported schema version {}", m.schema_version)));
                }
                manifest = Some(m);
            }
            DatasetRecord::Episode(e) => {
                if manifest.is_none() {
                    return Err(schema("missing manifest record".into()));
                }
                episodes.push(e);
            }
        }
    }
    let manifest = manifest.ok_or(DatasetError::Schema { line: 1, message: "empty dataset file".into() })?;
    if episodes.len() != manifest.episode_count {
        return Err(DatasetError::Schema {
            line: last + 1,
            message: format!("expected {} episodes, found {}", manifest.episode_count, episodes.len()),
        });
    }
    Ok(Dataset { manifest, episodes })
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
        read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_dataset(self, &mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Load every configured world, keyed by `(scene_id, config_id)`.
    pub fn load_worlds(&self, dir: &Path) -> Result<BTreeMap<(String, u32), World>, DatasetError> {
        let mut out = BTreeMap::new();
        for s in &self.manifest.scenes {
            for rel in &s.configs {
                let path = dir.join(rel);
                let w = World::load(&path).map_err(|source| DatasetError::Scene { path: path.clone(), source })?;
                out.insert((w.scene_id.clone(), w.config_id), w);
            }
        }
        Ok(out)
    }
}

/// Scene-level train/test partition. The test share is
/// `floor(n * (1 - train_fraction))`, kept within `1..n`.
pub fn split(manifest: &DatasetManifest, train_fraction: f64) -> Result<DatasetManifest, DatasetError> {
    let n = manifest.scenes.len();
    if n < 2 {
        return Err(DatasetError::TooFewScenes(n));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    let test = ((n as f64 * (1.0 - train_fraction) + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stable_hash(manifest.seed, &["split"])));
    let test_set: BTreeSet<usize> = order[..test].iter().copied().collect();
    let mut out = manifest.clone();
    out.train_fraction = train_fraction;
    for (i, s) in out.scenes.iter_mut().enumerate() {
        s.split = if test_set.contains(&i) { Split::Test } else { Split::Train };
    }
    Ok(out)
}

fn in_room(ty: ObjType, room: RoomType) -> bool {
    let rooms = &ty.info().rooms;
    rooms.is_empty() || rooms.contains(&room)
}

fn types_where(room: RoomType, pred: impl Fn(ObjType) -> bool) -> Vec<ObjType> {
    ObjType::all().filter(|t| in_room(*t, room) && pred(*t)).collect()
}

/// Floor furniture every room of a type starts from.
fn core_furniture(room: RoomType) -> Vec<ObjType> {
    let names: &[&str] = match room {
        RoomType::Kitchen => &["Fridge", "CounterTop", "Sink"],
        RoomType::LivingRoom => &["Cabinet", "Sofa", "CoffeeTable"],
        RoomType::Bedroom => &["Dresser", "Bed", "SideTable"],
        RoomType::Bathroom => &["Cabinet", "Toilet", "CounterTop"],
    };
    names.iter().map(|n| ObjType::named(n)).collect()
}

struct Builder {
    nx: i32,
    nz: i32,
    objects: Vec<ObjectInstance>,
    counters: BTreeMap<ObjType, u32>,
    floor_cells: BTreeSet<Cell>,
}

fn r2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl Builder {
    fn next_id(&mut self, ty: ObjType) -> ObjectId {
        let n = self.counters.entry(ty).or_insert(0);
        *n += 1;
        ObjectId::new(format!("{}_{:02}", ty.name(), n))
    }

    fn cells_for(&self, size: f64) -> i32 {
        (size / CELL_SIZE - EPS).ceil() as i32
    }

    /// Drop a floor object on a cell-aligned spot with a free ring around it.
    fn place_floor(&mut self, ty: ObjType, rng: &mut ChaCha8Rng) -> bool {
        let [mut sx, sy, mut sz] = ty.info().size;
        if rng.random_bool(0.5) {
            std::mem::swap(&mut sx, &mut sz);
        }
        let (w, d) = (self.cells_for(sx), self.cells_for(sz));
        if w > self.nx || d > self.nz {
            return false;
        }
        for _ in 0..80 {
            let x0 = rng.random_range(0..=self.nx - w);
            let z0 = rng.random_range(0..=self.nz - d);
            let clear = (x0 - 1..x0 + w + 1).all(|x| (z0 - 1..z0 + d + 1).all(|z| !self.floor_cells.contains(&Cell::new(x, z))));
            if !clear {
                continue;
            }
            let (bx, bz) = (x0 as f64 * CELL_SIZE, z0 as f64 * CELL_SIZE);
            let bbox = Box3::new([bx, 0.0, bz], [r2(bx + sx), sy, r2(bz + sz)]).expect("positive size");
            for x in x0..x0 + w {
                for z in z0..z0 + d {
                    self.floor_cells.insert(Cell::new(x, z));
                }
            }
            let id = self.next_id(ty);
            self.objects.push(ObjectInstance::of_type(id, ty, bbox));
            return true;
        }
        false
    }

    fn collides(&self, b: &Box3) -> bool {
        self.objects.iter().any(|o| o.bbox.intersection_volume(b) > EPS)
    }

    /// Put a surface object on `support`, flush with an edge when asked.
    fn place_on(&mut self, ty: ObjType, support: usize, flush: bool, rng: &mut ChaCha8Rng) -> bool {
        let sb = self.objects[support].bbox;
        let [mut sx, sy, mut sz] = ty.info().size;
        if rng.random_bool(0.5) {
            std::mem::swap(&mut sx, &mut sz);
        }
        let (lo, hi) = (sb.min(), sb.max());
        if sx > hi.x - lo.x || sz > hi.z - lo.z {
            return false;
        }
        for _ in 0..30 {
            let mut x = r2(rng.random_range(lo.x..=hi.x - sx));
            let mut z = r2(rng.random_range(lo.z..=hi.z - sz));
            if flush {
                match rng.random_range(0..4) {
                    0 => x = lo.x,
                    1 => x = hi.x - sx,
                    2 => z = lo.z,
                    _ => z = hi.z - sz,
                }
            }
            let (x, z) = (x.clamp(lo.x, hi.x - sx), z.clamp(lo.z, hi.z - sz));
            let bbox = Box3::new([x, hi.y, z], [x + sx, hi.y + sy, z + sz]).expect("positive size");
            if self.collides(&bbox) {
                continue;
            }
            let id = self.next_id(ty);
            self.objects.push(ObjectInstance::of_type(id, ty, bbox));
            return true;
        }
        false
    }

    fn place_on_wall(&mut self, ty: ObjType, rng: &mut ChaCha8Rng) -> bool {
        let [w, h, t] = ty.info().size;
        let (mx, mz) = (self.nx as f64 * CELL_SIZE, self.nz as f64 * CELL_SIZE);
        for _ in 0..20 {
            let y = r2(rng.random_range(1.3..1.8));
            let wall = rng.random_range(0..4);
            let along = |len: f64, rng: &mut ChaCha8Rng| r2(rng.random_range(0.1..len - w - 0.1));
            let bbox = match wall {
                0 => {
                    let x = along(mx, rng);
                    Box3::new([x, y, 0.0], [x + w, y + h, t])
                }
                1 => {
                    let x = along(mx, rng);
                    Box3::new([x, y, mz - t], [x + w, y + h, mz])
                }
                2 => {
                    let z = along(mz, rng);
                    Box3::new([0.0, y, z], [t, y + h, z + w])
                }
                _ => {
                    let z = along(mz, rng);
                    Box3::new([mx - t, y, z], [mx, y + h, z + w])
                }
            }
            .expect("positive size");
            if self.collides(&bbox) {
                continue;
            }
            let id = self.next_id(ty);
            self.objects.push(ObjectInstance::of_type(id, ty, bbox));
            return true;
        }
        false
    }
}

/// Fill every receptacle with fresh contents, never exceeding `MAX_OBJECTS`
/// objects overall.
fn fill_contents(
    room: RoomType,
    base: &[ObjectInstance],
    counters: &BTreeMap<ObjType, u32>,
    rng: &mut ChaCha8Rng,
) -> Vec<ObjectInstance> {
    let mut objects: Vec<ObjectInstance> = base.iter().filter(|o| o.parent_id.is_none()).cloned().collect();
    let mut counters = counters.clone();
    let receptacles: Vec<ObjectInstance> = objects.iter().filter(|o| o.obj_type.info().receptacle).cloned().collect();
    for r in receptacles {
        let allowed: Vec<ObjType> = r.obj_type.info().holds.iter().copied().filter(|t| in_room(*t, room)).collect();
        let kinds = rng.random_range(0..=2usize).min(allowed.len());
        let picked: Vec<ObjType> = allowed.choose_multiple(rng, kinds).copied().collect();
        let (lo, hi) = (r.bbox.min(), r.bbox.max());
        let mut inside: Vec<Box3> = Vec::new();
        for ty in picked {
            let count = rng.random_range(1..=3);
            for _ in 0..count {
                if objects.len() >= MAX_OBJECTS {
                    break;
                }
                let [sx, sy, sz] = ty.info().size;
                let m = 0.01;
                if sx + 2.0 * m > hi.x - lo.x || sz + 2.0 * m > hi.z - lo.z || sy + 2.0 * m > hi.y - lo.y {
                    continue;
                }
                for _ in 0..30 {
                    let x = r2(rng.random_range(lo.x + m..=hi.x - sx - m));
                    let z = r2(rng.random_range(lo.z + m..=hi.z - sz - m));
                    let y = r2(lo.y + m);
                    let bbox = Box3::new([x, y, z], [x + sx, y + sy, z + sz]).expect("positive size");
                    if !r.bbox.contains_box(&bbox) || inside.iter().any(|b| b.intersection_volume(&bbox) > EPS) {
                        continue;
                    }
                    inside.push(bbox);
                    let n = counters.entry(ty).or_insert(0);
                    *n += 1;
                    let id = ObjectId::new(format!("{}_{:02}", ty.name(), n));
                    objects.push(ObjectInstance::of_type(id, ty, bbox).inside(&r.id));
                    break;
                }
            }
        }
    }
    objects
}

fn try_layout(room: RoomType, rng: &mut ChaCha8Rng) -> Option<(Builder, Box3)> {
    let nx = rng.random_range(14..=18);
    let nz = rng.random_range(14..=18);
    let bounds = Box3::new([0.0, 0.0, 0.0], [nx as f64 * CELL_SIZE, ROOM_HEIGHT, nz as f64 * CELL_SIZE]).ok()?;
    let mut b = Builder { nx, nz, objects: Vec::new(), counters: BTreeMap::new(), floor_cells: BTreeSet::new() };
    let drawer = ObjType::named("Drawer");
    let mut forced = core_furniture(room);
    forced.extend(std::iter::repeat_n(drawer, rng.random_range(2..=3)));
    for ty in forced {
        if !b.place_floor(ty, rng) {
            return None;
        }
    }
    let mut extras =
        types_where(room, |t| t.info().placement == Placement::Floor && !core_furniture(room).contains(&t) && t != drawer);
    extras.shuffle(rng);
    for ty in extras.into_iter().take(rng.random_range(2..=4)) {
        b.place_floor(ty, rng);
    }

    let supports: Vec<usize> = (0..b.objects.len()).filter(|&i| b.objects[i].obj_type.info().supports).collect();
    let surface_rec = types_where(room, |t| t.info().placement == Placement::Surface && t.info().receptacle);
    let surface_items = types_where(room, |t| t.info().placement == Placement::Surface && !t.info().receptacle);
    if !supports.is_empty() {
        for ty in surface_rec {
            if rng.random_bool(0.7) {
                let s = *supports.choose(rng).expect("non-empty");
                b.place_on(ty, s, true, rng);
            }
        }
        for &s in &supports {
            for _ in 0..rng.random_range(1..=3) {
                let ty = *surface_items.choose(rng)?;
                b.place_on(ty, s, rng.random_bool(0.5), rng);
            }
        }
    }
    let wall_items = types_where(room, |t| t.info().placement == Placement::Wall);
    for _ in 0..rng.random_range(0..=2) {
        if let Some(&ty) = wall_items.choose(rng) {
            b.place_on_wall(ty, rng);
        }
    }
    Some((b, bounds))
}

fn scene_ok(world: &World) -> bool {
    let n = world.object_count();
    if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n) {
        return false;
    }
    let openable = world.objects.values().filter(|o| o.openable && o.obj_type.info().receptacle).count();
    if openable < 2 {
        return false;
    }
    let mut per_type: BTreeMap<ObjType, usize> = BTreeMap::new();
    for o in world.objects.values() {
        *per_type.entry(o.obj_type).or_default() += 1;
    }
    if !per_type.values().any(|&c| c > 1) {
        return false;
    }
    let free = world.free_mask();
    let dist = grid_bfs(world.grid.nx, world.grid.nz, world.agent.cell, |c| free.is_free(c));
    let connected = world.grid.cells().all(|c| !free.is_free(c) || dist.get(c).is_some());
    if !connected {
        return false;
    }
    let mut seen = BTreeSet::new();
    for pose in sweep_poses(world) {
        for v in world.observe(pose).visible {
            seen.insert(v.id);
        }
    }
    world.objects.values().filter(|o| o.parent_id.is_none()).all(|o| seen.contains(&o.id))
}

fn scene_rng(seed: u64, room: RoomType, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash(seed, &[room.slug(), &attempt.to_string()]))
}

/// Base layout plus the id counters reached by its furniture.
fn sample_base(seed: u64, room: RoomType) -> Result<(World, BTreeMap<ObjType, u32>), DatasetError> {
    for attempt in 0..SCENE_ATTEMPTS {
        let mut rng = scene_rng(seed, room, attempt);
        let Some((b, bounds)) = try_layout(room, &mut rng) else {
            continue;
        };
        let objects = fill_contents(room, &b.objects, &b.counters, &mut rng);
        let free: Vec<Cell> =
            (0..b.nx).flat_map(|x| (0..b.nz).map(move |z| Cell::new(x, z))).filter(|c| !b.floor_cells.contains(c)).collect();
        let Some(&cell) = free.choose(&mut rng) else {
            continue;
        };
        let agent = AgentState { cell, heading: Heading::PosX, reach_radius: REACH_RADIUS, inventory: Vec::new() };
        let scene_id = format!("{}-{:016x}", room.slug(), seed);
        let Ok(world) = World::new(scene_id, room, bounds, objects, agent) else {
            continue;
        };
        if scene_ok(&world) {
            return Ok((world, b.counters));
        }
    }
    Err(DatasetError::GenerationFailure { room_type: room, attempts: SCENE_ATTEMPTS })
}

/// Deterministic procedural room of the given type.
pub fn sample_scene(seed: u64, room_type: RoomType) -> Result<World, DatasetError> {
    sample_base(seed, room_type).map(|(w, _)| w)
}

/// A scene in `configs` variants that differ only in receptacle contents.
pub fn sample_configs(seed: u64, room_type: RoomType, configs: u32) -> Result<Vec<World>, DatasetError> {
    let (base, counters) = sample_base(seed, room_type)?;
    let mut out = vec![base.clone()];
    for k in 1..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &[room_type.slug(), "config", &k.to_string()]));
        let furniture: Vec<ObjectInstance> = base.objects.values().filter(|o| o.parent_id.is_none()).cloned().collect();
        let objects = fill_contents(room_type, &furniture, &counters, &mut rng);
        let mut w = World::new(base.scene_id.clone(), room_type, base.bounds, objects, base.agent.clone())?;
        w.config_id = k;
        out.push(w);
    }
    Ok(out)
}

/// Oracle answer from the full world state, ignoring visibility.
pub fn ground_truth_answer(world: &World, episode: &Episode) -> Answer {
    truth_for(world, &episode.question_ast, &episode.target_object_id, DEFAULT_MAX_COUNT)
}

fn truth_for(world: &World, ast: &QuestionAst, target: &ObjectId, max_count: u32) -> Answer {
    match *ast {
        QuestionAst::Existence { obj1, .. } | QuestionAst::Counting { obj1, .. } => {
            let n = world.children(target).filter(|o| o.obj_type == obj1).count() as u32;
            if ast.qtype() == QType::Counting {
                Answer::Count(n.min(max_count))
            } else {
                Answer::YesNo(n > 0)
            }
        }
        QuestionAst::Spatial { obj1, relation, .. } => {
            let Some(anchor) = world.get(target) else {
                return Answer::YesNo(false);
            };
            Answer::YesNo(world.objects.values().any(|o| o.obj_type == obj1 && assign_relation(o, anchor) == Some(relation)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    ast: QuestionAst,
    target: ObjectId,
}

fn receptacle_candidates(world: &World, graph: &SceneGraph, counting: bool, rng: &mut ChaCha8Rng) -> Vec<Candidate> {
    let mut out = Vec::new();
    for r in world.objects.values().filter(|o| o.openable && o.obj_type.info().receptacle && !o.is_open) {
        let res: Vec<_> = unambiguous_res(graph, &r.id).into_iter().filter(|re| re.relation != Relation::In).collect();
        let present: BTreeSet<ObjType> = world.children(&r.id).map(|c| c.obj_type).collect();
        let mut absent: Vec<ObjType> =
            r.obj_type.info().holds.iter().copied().filter(|t| in_room(*t, world.room_type) && !present.contains(t)).collect();
        absent.shuffle(rng);
        let n_absent = if counting { 1 } else { present.len().max(1) };
        let asked: Vec<ObjType> = present.iter().copied().chain(absent.into_iter().take(n_absent)).collect();
        for re in &res {
            for &obj1 in &asked {
                let ast =
                    if counting { QuestionAst::Counting { obj1, re: *re } } else { QuestionAst::Existence { obj1, re: *re } };
                out.push(Candidate { ast, target: r.id.clone() });
            }
        }
    }
    out
}

fn spatial_candidates(world: &World, rng: &mut ChaCha8Rng) -> Vec<Candidate> {
    let present: Vec<ObjType> = world.objects.values().map(|o| o.obj_type).collect::<BTreeSet<_>>().into_iter().collect();
    let mut yes = Vec::new();
    let mut no = Vec::new();
    let anchors = world.objects.values().filter(|a| {
        a.parent_id.is_none() && a.obj_type.info().placement != Placement::Wall && world.count_of_type(a.obj_type) == 1
    });
    for a in anchors {
        let mut holding: BTreeSet<(ObjType, Relation)> = BTreeSet::new();
        for o in world.objects.values() {
            if o.obj_type == a.obj_type {
                continue;
            }
            if let Some(rel) = assign_relation(o, a) {
                holding.insert((o.obj_type, rel));
            }
        }
        for &(obj1, relation) in &holding {
            yes.push(Candidate { ast: QuestionAst::Spatial { obj1, relation, anchor: a.obj_type }, target: a.id.clone() });
        }
        for _ in 0..holding.len().max(1) {
            let obj1 = *present.choose(rng).expect("non-empty scene");
            let relation = *Relation::ALL.choose(rng).expect("non-empty");
            if obj1 != a.obj_type && !holding.contains(&(obj1, relation)) {
                no.push(Candidate { ast: QuestionAst::Spatial { obj1, relation, anchor: a.obj_type }, target: a.id.clone() });
            }
        }
    }
    no.truncate(yes.len().max(1));
    yes.extend(no);
    yes.dedup();
    yes
}

fn candidates(world: &World, graph: &SceneGraph, qtype: QType, rng: &mut ChaCha8Rng) -> Vec<Candidate> {
    let mut c = match qtype {
        QType::Existence => receptacle_candidates(world, graph, false, rng),
        QType::Counting => receptacle_candidates(world, graph, true, rng),
        QType::Spatial => spatial_candidates(world, rng),
    };
    c.shuffle(rng);
    c
}

/// Turn a candidate into an episode when a start pose exists from which the
/// question can be answered by navigating, looking and manipulating.
fn realize_candidate(world: &World, graph: &SceneGraph, cand: &Candidate, rng: &mut ChaCha8Rng) -> Option<Episode> {
    let target = world.get(&cand.target)?;
    let free = world.free_mask();
    let mut starts: Vec<Cell> = world.grid.cells().filter(|c| free.is_free(*c)).collect();
    starts.shuffle(rng);
    let mut tried: BTreeSet<Cell> = BTreeSet::new();
    for start in starts.into_iter().take(START_TRIES) {
        let Some((d, goal)) = shortest_to_target(world, start, &cand.target) else {
            continue;
        };
        if !(MIN_START_DISTANCE..=MAX_START_DISTANCE).contains(&d) || !tried.insert(goal) {
            continue;
        }
        if let Some((kind, truth)) = answerable_from(world, graph, cand, target, goal) {
            let heading = *Heading::ALL.choose(rng).expect("non-empty");
            return Some(Episode {
                episode_id: String::new(),
                scene_id: world.scene_id.clone(),
                config_id: world.config_id,
                qtype: cand.ast.qtype(),
                question: realize_question(&cand.ast),
                question_ast: cand.ast,
                target_object_id: cand.target.clone(),
                start: Pose { cell: start, heading },
                goal_cell: goal,
                required_action: kind,
                truth,
            });
        }
    }
    None
}

/// Checks that an agent standing on `goal` and facing the target localizes
/// it, can act on it and then sees enough to answer correctly, and that
/// receptacle questions cannot be answered before acting.
fn answerable_from(
    world: &World,
    graph: &SceneGraph,
    cand: &Candidate,
    target: &ObjectInstance,
    goal: Cell,
) -> Option<(ActionKind, Answer)> {
    let (gx, gz) = world.grid.center(goal);
    let c = target.bbox.center();
    let pose = Pose { cell: goal, heading: Heading::facing(c.x - gx, c.z - gz) };
    let mut w = world.clone();
    w.agent.cell = pose.cell;
    w.agent.heading = pose.heading;
    let obs_start = w.observe(pose);
    let query = match cand.ast.referring_expression() {
        Some(re) => RecQuery::from(re),
        None => RecQuery::subject_only(cand.ast.target_type()),
    };
    let (id, _) = resolve(&query, &obs_start, graph, DEFAULT_SCORE_THRESHOLD).ok()?;
    if id != cand.target {
        return None;
    }
    let kind = affordance(target.obj_type);
    w.apply_action(&Action { kind, target_id: id }).ok()?;
    let obs_end = w.observe(pose);
    let truth = truth_for(world, &cand.ast, &cand.target, DEFAULT_MAX_COUNT);
    let seen = answer_question(&cand.ast, &obs_start, &obs_end, graph, DEFAULT_SCORE_THRESHOLD, DEFAULT_MAX_COUNT).ok()?;
    if seen != truth {
        return None;
    }
    if cand.ast.qtype() != QType::Spatial {
        let before =
            answer_question(&cand.ast, &obs_start, &obs_start, graph, DEFAULT_SCORE_THRESHOLD, DEFAULT_MAX_COUNT).ok()?;
        if before != Answer::default_for(cand.ast.qtype()) {
            return None;
        }
    }
    Some((kind, truth))
}

/// One valid episode of the requested type, chosen by `seed`.
pub fn gen_episode(world: &World, qtype: QType, seed: u64) -> Result<Episode, DatasetError> {
    let graph = SceneGraph::from_world(world);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cands = candidates(world, &graph, qtype, &mut rng);
    cands
        .iter()
        .find_map(|c| realize_candidate(world, &graph, c, &mut rng))
        .map(|mut e| {
            e.episode_id = format!("{}-c{}-{}", world.scene_id, world.config_id, qtype.label().to_lowercase());
            e
        })
        .ok_or_else(|| DatasetError::NoValidEpisode { scene_id: world.scene_id.clone(), qtype })
}

/// Largest-remainder split of `total` episodes by type proportions.
pub fn type_quotas(total: usize) -> BTreeMap<QType, usize> {
    let raw: Vec<(QType, f64)> = TYPE_PROPORTIONS.iter().map(|&(q, p)| (q, p * total as f64)).collect();
    let mut out: BTreeMap<QType, usize> = raw.iter().map(|&(q, v)| (q, v.floor() as usize)).collect();
    let mut rest = total - out.values().sum::<usize>();
    let mut by_frac = raw.clone();
    by_frac.sort_by(|a, b| (b.1 - b.1.floor()).total_cmp(&(a.1 - a.1.floor())).then(a.0.cmp(&b.0)));
    for (q, _) in by_frac {
        if rest == 0 {
            break;
        }
        *out.get_mut(&q).expect("present") += 1;
        rest -= 1;
    }
    out
}

/// Episodes for one scene's configurations, picking round-robin across
/// configurations until each type's quota is met.
fn scene_episodes(worlds: &[World], quotas: &BTreeMap<QType, usize>, seed: u64) -> Vec<Episode> {
    let scene_id = &worlds[0].scene_id;
    let graphs: Vec<SceneGraph> = worlds.iter().map(SceneGraph::from_world).collect();
    let mut out = Vec::new();
    for (&qtype, &quota) in quotas {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &[scene_id, qtype.label()]));
        let mut pools: Vec<std::vec::IntoIter<Candidate>> =
            worlds.iter().zip(&graphs).map(|(w, g)| candidates(w, g, qtype, &mut rng).into_iter()).collect();
        let mut taken = 0;
        let mut asked: BTreeSet<(u32, String)> = BTreeSet::new();
        while taken < quota {
            let mut progressed = false;
            for (k, pool) in pools.iter_mut().enumerate() {
                if taken >= quota {
                    break;
                }
                for cand in pool.by_ref() {
                    let text = realize_question(&cand.ast);
                    if asked.contains(&(k as u32, text.clone())) {
                        continue;
                    }
                    if let Some(e) = realize_candidate(&worlds[k], &graphs[k], &cand, &mut rng) {
                        asked.insert((k as u32, text));
                        out.push(e);
                        taken += 1;
                        progressed = true;
                        break;
                    }
                }
            }
            if !progressed {
                break;
            }
        }
    }
    out.sort_by(|a, b| (a.config_id, a.qtype, &a.question).cmp(&(b.config_id, b.qtype, &b.question)));
    for (n, e) in out.iter_mut().enumerate() {
        e.episode_id = format!("{}-c{}-{:03}", e.scene_id, e.config_id, n);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    /// Number of scenes.
    pub scale: usize,
    pub configs_per_scene: u32,
    pub episodes_per_scene: usize,
    pub train_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: DEFAULT_SCALE,
            configs_per_scene: DEFAULT_CONFIGS_PER_SCENE,
            episodes_per_scene: DEFAULT_EPISODES_PER_SCENE,
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

/// Generated scenes: every configuration of every scene.
#[derive(Debug, Clone)]
pub struct SceneSet {
    pub scenes: Vec<Vec<World>>,
}

fn scene_seed(seed: u64, index: usize) -> u64 {
    stable_hash(seed, &["scene", &index.to_string()])
}

pub fn generate_scenes(cfg: &GenConfig) -> Result<SceneSet, DatasetError> {
    let scenes = (0..cfg.scale)
        .into_par_iter()
        .map(|i| {
            let room = RoomType::ALL[i % RoomType::ALL.len()];
            let mut worlds = sample_configs(scene_seed(cfg.seed, i), room, cfg.configs_per_scene)?;
            let id = format!("s{:03}-{}", i, room.slug());
            for w in &mut worlds {
                w.scene_id = id.clone();
            }
            Ok(worlds)
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(SceneSet { scenes })
}

fn scene_file(scene_id: &str, config: u32) -> String {
    format!("scenes/{scene_id}/config_{config}.json")
}

/// Scenes and episodes under type quotas that carry shortfalls over to later
/// scenes.
pub fn build_dataset(cfg: &GenConfig) -> Result<(Dataset, SceneSet), DatasetError> {
    let set = generate_scenes(cfg)?;
    let mut episodes = Vec::new();
    let mut have: BTreeMap<QType, usize> = QType::ALL.iter().map(|q| (*q, 0)).collect();
    for (i, worlds) in set.scenes.iter().enumerate() {
        let target = type_quotas(cfg.episodes_per_scene * (i + 1));
        let quotas: BTreeMap<QType, usize> = target.iter().map(|(q, n)| (*q, n.saturating_sub(have[q]))).collect();
        let eps = scene_episodes(worlds, &quotas, cfg.seed);
        for e in &eps {
            *have.get_mut(&e.qtype).expect("known type") += 1;
        }
        episodes.extend(eps);
    }
    episodes.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    let scenes = set
        .scenes
        .iter()
        .map(|ws| SceneEntry {
            scene_id: ws[0].scene_id.clone(),
            room_type: ws[0].room_type,
            split: Split::Train,
            configs: ws.iter().map(|w| scene_file(&w.scene_id, w.config_id)).collect(),
        })
        .collect();
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        seed: cfg.seed,
        scale: cfg.scale,
        train_fraction: cfg.train_fraction,
        scenes,
        episode_count: episodes.len(),
    };
    let manifest = if manifest.scenes.len() >= 2 { split(&manifest, cfg.train_fraction)? } else { manifest };
    Ok((Dataset { manifest, episodes }, set))
}

/// Write every scene configuration and its oracle graph under `dir/scenes`.
pub fn write_scenes(dir: &Path, set: &SceneSet) -> Result<(), DatasetError> {
    for worlds in &set.scenes {
        for w in worlds {
            let path = dir.join(scene_file(&w.scene_id, w.config_id));
            std::fs::create_dir_all(path.parent().expect("scene path has a parent"))?;
            w.save(&path)?;
            let graph = path.with_file_name(format!("graph_{}.json", w.config_id));
            std::fs::write(graph, SceneGraph::from_world(w).to_json())?;
        }
    }
    Ok(())
}

pub const DATASET_FILE: &str = "dataset.jsonl";

pub fn write_all(dir: &Path, dataset: &Dataset, set: &SceneSet) -> Result<PathBuf, DatasetError> {
    std::fs::create_dir_all(dir)?;
    write_scenes(dir, set)?;
    let path = dir.join(DATASET_FILE);
    dataset.save(&path)?;
    Ok(path)
}

/// Episode counts per question type.
pub fn type_counts(episodes: &[Episode]) -> BTreeMap<QType, usize> {
    let mut out: BTreeMap<QType, usize> = QType::ALL.iter().map(|q| (*q, 0)).collect();
    for e in episodes {
        *out.get_mut(&e.qtype).expect("known type") += 1;
    }
    out
}

/// Checks every stored episode against its world: the question parses to
/// the stored AST, the truth matches the oracle and, for RE questions, the
/// expression picks out the target among all objects.
pub fn audit_episode(world: &World, episode: &Episode) -> Result<(), String> {
    let ast = parse_question(&episode.question).map_err(|e| e.to_string())?;
    if ast != episode.question_ast {
        return Err("question does not parse to its stored AST".into());
    }
    if ground_truth_answer(world, episode) != episode.truth {
        return Err("stored truth differs from the oracle".into());
    }
    if let Some(re) = ast.referring_expression() {
        let graph = SceneGraph::from_world(world);
        let hits: Vec<_> = graph
            .nodes_of_type(re.subject_type)
            .filter(|n| graph.has_relation_to_type(&n.id, re.relation, re.anchor_type))
            .map(|n| n.id.clone())
            .collect();
        if hits != [episode.target_object_id.clone()] {
            return Err(format!("expression matches {hits:?}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_scene(11, RoomType::Kitchen).unwrap();
        let b = sample_scene(11, RoomType::Kitchen).unwrap();
        assert_eq!(a, b);
        let c = sample_scene(12, RoomType::Kitchen).unwrap();
        assert_ne!(a.objects, c.objects);
    }

    #[test]
    fn sampled_scenes_meet_postconditions() {
        for seed in 0..12 {
            for room in RoomType::ALL {
                let w = sample_scene(seed, room).unwrap();
                assert!((MIN_OBJECTS..=MAX_OBJECTS).contains(&w.object_count()));
                assert!(w.objects.values().filter(|o| o.openable).count() >= 2, "{}", w.scene_id);
                assert!(w.objects.values().all(|o| in_room(o.obj_type, room)));
            }
        }
    }

    #[test]
    fn configs_change_only_contents() {
        let ws = sample_configs(5, RoomType::Kitchen, 3).unwrap();
        let top = |w: &World| w.objects.values().filter(|o| o.parent_id.is_none()).cloned().collect::<Vec<_>>();
        assert_eq!(top(&ws[0]), top(&ws[1]));
        assert_eq!(top(&ws[0]), top(&ws[2]));
        assert_eq!(ws[2].config_id, 2);
    }

    #[test]
    fn quotas_follow_proportions() {
        let q = type_quotas(400);
        assert_eq!(q.values().sum::<usize>(), 400);
        assert_eq!(q[&QType::Existence], 194);
        assert_eq!(q[&QType::Counting], 78);
        assert_eq!(q[&QType::Spatial], 128);
    }

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            seed: 3,
            scale: n,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            scenes: (0..n)
                .map(|i| SceneEntry {
                    scene_id: format!("s{i}"),
                    room_type: RoomType::Kitchen,
                    split: Split::Train,
                    configs: vec![],
                })
                .collect(),
            episode_count: 0,
        }
    }

    #[test]
    fn split_sizes() {
        let count = |m: &DatasetManifest, s: Split| m.scenes.iter().filter(|e| e.split == s).count();
        let m = split(&manifest(120), DEFAULT_TRAIN_FRACTION).unwrap();
        assert_eq!((count(&m, Split::Train), count(&m, Split::Test)), (100, 20));
        let m = split(&manifest(12), DEFAULT_TRAIN_FRACTION).unwrap();
        assert_eq!((count(&m, Split::Train), count(&m, Split::Test)), (10, 2));
        assert!(matches!(split(&manifest(1), DEFAULT_TRAIN_FRACTION), Err(DatasetError::TooFewScenes(1))));
    }

    #[test]
    fn generated_episodes_pass_audit() {
        let ws = sample_configs(21, RoomType::Kitchen, 2).unwrap();
        let quotas = type_quotas(12);
        let eps = scene_episodes(&ws, &quotas, 21);
        assert!(!eps.is_empty());
        for e in &eps {
            audit_episode(&ws[e.config_id as usize], e).unwrap();
            if e.qtype != QType::Spatial {
                assert_eq!(e.required_action, ActionKind::Open);
                assert!(!ws[e.config_id as usize].get(&e.target_object_id).unwrap().is_open);
            }
        }
    }

    #[test]
    fn gen_episode_reports_missing_structure() {
        let w = sample_scene(2, RoomType::Bedroom).unwrap();
        let e = gen_episode(&w, QType::Existence, 9).unwrap();
        assert_eq!(e.truth, ground_truth_answer(&w, &e));
        let mut bare = w.clone();
        bare.objects.retain(|_, o| !o.openable && o.parent_id.is_none());
        assert!(matches!(gen_episode(&bare, QType::Counting, 9), Err(DatasetError::NoValidEpisode { .. })));
    }

    #[test]
    fn dataset_round_trip_and_truncation() {
        let cfg = GenConfig { scale: 2, episodes_per_scene: 6, configs_per_scene: 2, ..Default::default() };
        let (ds, _) = build_dataset(&cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(&buf[..]).unwrap(), ds);
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 20];
        match read_dataset(cut.as_bytes()) {
            Err(DatasetError::Schema { line, .. }) => assert_eq!(line, ds.episodes.len() + 1),
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
