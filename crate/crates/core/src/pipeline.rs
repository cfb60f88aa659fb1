//! End-to-end agent: navigate, localize, manipulate, answer; plus the
//! S_N / S_L / S_QA metrics.

use crate::comprehension::{jitter_box, resolve, resolve_scored, RecError, RecQuery, DEFAULT_SCORE_THRESHOLD};
use crate::dataset::Episode;
use crate::geometry::iou3d;
use crate::language::{parse_question, QType, QuestionAst};
use crate::navigation::{floyd_apsp, grid_bfs, locate_label, plan_path, spl, ApspTables, MetricsError, NavResult};
use crate::scene_graph::{assign_relation, SceneGraph};
use crate::semantic_memory::{SemanticMap2D, VoxelMemory};
use crate::vocab::{vocabulary, ObjType};
use crate::world::{Action, ActionKind, Cell, Heading, ObjectId, Observation, Pose, VisibleObject, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_MAX_COUNT: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    YesNo(bool),
    Count(u32),
}

impl Answer {
    /// Answer emitted when a stage fails.
    pub fn default_for(qtype: QType) -> Answer {
        match qtype {
            QType::Counting => Answer::Count(0),
            QType::Existence | QType::Spatial => Answer::YesNo(false),
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::YesNo(true) => f.write_str("yes"),
            Answer::YesNo(false) => f.write_str("no"),
            Answer::Count(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("unknown object type `{0}`")]
    UnknownType(String),
    #[error("question anchor could not be resolved: {0}")]
    UnresolvedAnchor(RecError),
}

/// Affordance lookup: openable → Open, pickupable → Pickup, else Move.
pub fn affordance(ty: ObjType) -> ActionKind {
    let info = ty.info();
    if info.openable {
        ActionKind::Open
    } else if info.pickupable {
        ActionKind::Pickup
    } else {
        ActionKind::Move
    }
}

pub fn classify_action(type_name: &str) -> Result<ActionKind, PipelineError> {
    ObjType::from_name(type_name).map(affordance).ok_or_else(|| PipelineError::UnknownType(type_name.to_owned()))
}

/// Union of two observations; objects seen in both keep their start state.
pub fn merge_observations(start: &Observation, end: &Observation) -> Observation {
    let mut by_id: BTreeMap<&ObjectId, &VisibleObject> = end.visible.iter().map(|v| (&v.id, v)).collect();
    for v in &start.visible {
        by_id.insert(&v.id, v);
    }
    Observation { viewpoint: start.viewpoint, visible: by_id.into_values().cloned().collect(), timestamp: end.timestamp }
}

/// Answer from the pre- and post-manipulation observations.
pub fn answer_question(
    ast: &QuestionAst,
    obs_start: &Observation,
    obs_end: &Observation,
    graph: &SceneGraph,
    score_threshold: f64,
    max_count: u32,
) -> Result<Answer, PipelineError> {
    let seen = merge_observations(obs_start, obs_end);
    match *ast {
        QuestionAst::Existence { obj1, re } | QuestionAst::Counting { obj1, re } => {
            let (anchor, _) =
                resolve(&RecQuery::from(re), &seen, graph, score_threshold).map_err(PipelineError::UnresolvedAnchor)?;
            let n = seen.visible.iter().filter(|v| v.obj_type == obj1 && v.parent_id.as_ref() == Some(&anchor)).count();
            Ok(match ast.qtype() {
                QType::Counting => Answer::Count((n as u32).min(max_count)),
                _ => Answer::YesNo(n > 0),
            })
        }
        QuestionAst::Spatial { obj1, relation, anchor } => {
            let (anchor_id, _) = resolve(&RecQuery::subject_only(anchor), &seen, graph, score_threshold)
                .map_err(PipelineError::UnresolvedAnchor)?;
            let a = seen.get(&anchor_id).expect("resolved id is visible");
            let hit = seen.visible.iter().any(|o| o.obj_type == obj1 && assign_relation(o, a) == Some(relation));
            Ok(Answer::YesNo(hit))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub seed: u64,
    pub budget: u32,
    pub noise_sigma: f64,
    pub label_flip: f64,
    pub score_threshold: f64,
    pub max_count: u32,
    /// When false the chosen action is classified but never executed.
    pub manipulate: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: 50,
            noise_sigma: 0.0,
            label_flip: 0.0,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            max_count: DEFAULT_MAX_COUNT,
            manipulate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("noise sigma must be finite and non-negative, got {0}")]
    Sigma(f64),
    #[error("label flip rate must lie in [0, 1], got {0}")]
    FlipRate(f64),
    #[error("score threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(ConfigError::Sigma(self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.label_flip) {
            return Err(ConfigError::FlipRate(self.label_flip));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold <= 1.0) {
            return Err(ConfigError::Threshold(self.score_threshold));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_sigma == 0.0 && self.label_flip == 0.0
    }
}

/// FNV-1a over the given parts, separated by a zero byte.
pub fn stable_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Agent-side sensing: box jitter and label flips applied to observations.
pub struct Perception {
    sigma: f64,
    flip: f64,
    rng: ChaCha8Rng,
}

impl Perception {
    pub fn new(sigma: f64, flip: f64, seed: u64) -> Self {
        Self { sigma, flip, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0.0, 0)
    }

    pub fn perceive(&mut self, mut obs: Observation) -> Observation {
        if self.sigma == 0.0 && self.flip == 0.0 {
            return obs;
        }
        let n = vocabulary().len() as u16;
        for v in &mut obs.visible {
            v.bbox = jitter_box(&v.bbox, self.sigma, &mut self.rng);
            if self.flip > 0.0 && n > 1 && self.rng.random_bool(self.flip) {
                let k = self.rng.random_range(0..n - 1);
                let k = if k >= v.obj_type.index() { k + 1 } else { k };
                v.obj_type = ObjType::all().nth(k as usize).expect("index in range");
            }
        }
        obs
    }
}

/// Viewpoints of the exploration sweep: every traversable cell in a
/// boustrophedon order, each with all four headings.
pub fn sweep_poses(world: &World) -> Vec<Pose> {
    let free = world.free_mask();
    let mut out = Vec::new();
    for x in 0..world.grid.nx {
        let zs: Vec<i32> = if x % 2 == 0 { (0..world.grid.nz).collect() } else { (0..world.grid.nz).rev().collect() };
        for z in zs {
            let cell = Cell::new(x, z);
            if free.is_free(cell) {
                out.extend(Heading::ALL.map(|heading| Pose { cell, heading }));
            }
        }
    }
    out
}

/// Knowledge gathered before any episode: semantic memory, its 2D map, the
/// scene graph of everything seen and the planner tables.
#[derive(Debug, Clone)]
pub struct Prior {
    pub memory: VoxelMemory,
    pub map: SemanticMap2D,
    pub graph: SceneGraph,
    pub tables: ApspTables,
}

pub fn build_prior(world: &World, perception: &mut Perception) -> Prior {
    let mut memory = VoxelMemory::for_room(&world.bounds);
    let mut graph = SceneGraph::new();
    for pose in sweep_poses(world) {
        let obs = perception.perceive(world.observe(pose));
        memory.integrate(&obs);
        graph.update(&obs);
    }
    let map = memory.project_2d();
    let tables = floyd_apsp(&map);
    Prior { memory, map, graph, tables }
}

/// Prior perception seed for one scene configuration.
pub fn prior_seed(seed: u64, scene_id: &str, config_id: u32) -> u64 {
    stable_hash(seed, &[scene_id, &config_id.to_string(), "prior"])
}

/// Cells from which the agent counts as arrived at `target`: traversable,
/// 4-adjacent to its footprint and within reach of its centroid.
pub fn arrival_cells(world: &World, target: &ObjectId) -> BTreeSet<Cell> {
    let Some(obj) = world.get(target) else {
        return BTreeSet::new();
    };
    let free = world.free_mask();
    world
        .grid
        .footprint(&obj.bbox)
        .iter()
        .flat_map(|c| c.neighbors4())
        .filter(|c| free.is_free(*c))
        .filter(|c| world.grid.planar_distance(*c, obj.bbox.center()) <= world.agent.reach_radius + 1e-9)
        .collect()
}

/// True shortest number of steps from `start` to an arrival cell, with the
/// arrival cell itself (smallest `(x, z)` among the nearest).
pub fn shortest_to_target(world: &World, start: Cell, target: &ObjectId) -> Option<(u32, Cell)> {
    let free = world.free_mask();
    let dist = grid_bfs(world.grid.nx, world.grid.nz, start, |c| free.is_free(c));
    arrival_cells(world, target).into_iter().filter_map(|c| dist.get(c).map(|d| (d, c))).min()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub qtype: QType,
    pub navigated: bool,
    pub localized: bool,
    pub answered_correctly: bool,
    pub nav: NavResult,
    pub chosen_action: Option<Action>,
    pub action_ok: bool,
    pub answer: Answer,
    pub truth: Answer,
    /// IoU between the localized box and the true target box.
    pub loc_iou: Option<f64>,
}

/// Human-readable account of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub start: Option<Cell>,
    pub path: Vec<Cell>,
    pub goal_cells: Vec<Cell>,
    pub log: Vec<String>,
}

impl Trace {
    fn note(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }
}

fn everything_seen(graph: &SceneGraph, viewpoint: Pose) -> Observation {
    Observation { viewpoint, visible: graph.nodes().cloned().collect(), timestamp: 0 }
}

fn localization_query(ast: &QuestionAst) -> RecQuery {
    match ast.referring_expression() {
        Some(re) => RecQuery::from(re),
        None => RecQuery::subject_only(ast.target_type()),
    }
}

pub fn run_episode(world: &World, prior: &Prior, episode: &Episode, config: &AgentConfig) -> EpisodeResult {
    run_episode_traced(world, prior, episode, config).0
}

pub fn run_episode_traced(world: &World, prior: &Prior, episode: &Episode, config: &AgentConfig) -> (EpisodeResult, Trace) {
    let mut trace = Trace::default();
    let mut world = world.clone();
    world.agent.cell = episode.start.cell;
    world.agent.heading = episode.start.heading;
    world.step = 0;
    let mut perception = Perception::new(config.noise_sigma, config.label_flip, stable_hash(config.seed, &[&episode.episode_id]));
    let shortest = shortest_to_target(&world, episode.start.cell, &episode.target_object_id).map_or(0, |s| s.0);
    let mut result = EpisodeResult {
        episode_id: episode.episode_id.clone(),
        qtype: episode.qtype,
        navigated: false,
        localized: false,
        answered_correctly: false,
        nav: NavResult { success: false, path_taken: 0, shortest, budget: config.budget },
        chosen_action: None,
        action_ok: false,
        answer: Answer::default_for(episode.qtype),
        truth: episode.truth,
        loc_iou: None,
    };
    trace.start = Some(episode.start.cell);
    trace.note(format!("question: {}", episode.question));

    let finish = |mut r: EpisodeResult, mut t: Trace| {
        r.answered_correctly = r.answer == r.truth;
        t.note(format!("answer: {}  truth: {}  correct: {}", r.answer, r.truth, r.answered_correctly));
        (r, t)
    };

    let ast = match parse_question(&episode.question) {
        Ok(ast) => ast,
        Err(e) => {
            trace.note(format!("parse failed: {e}"));
            return finish(result, trace);
        }
    };

    // Navigation goal: the footprint of the resolved instance when the prior
    // pins it down, otherwise every map cell carrying the target label.
    let target_type = ast.target_type();
    let seen = everything_seen(&prior.graph, episode.start);
    let goal_box = resolve(&localization_query(&ast), &seen, &prior.graph, config.score_threshold).ok().map(|r| r.1);
    let goal_cells: Vec<Cell> = match goal_box {
        Some(b) => world.grid.footprint(&b),
        None => locate_label(&prior.map, target_type),
    };
    trace.goal_cells = goal_cells.clone();
    trace.note(format!("target label {}: {} goal cell(s)", target_type.name(), goal_cells.len()));

    let plan = match plan_path(&prior.tables, episode.start.cell, &goal_cells) {
        Ok(plan) => plan,
        Err(e) => {
            trace.note(format!("planning failed: {e}"));
            return finish(result, trace);
        }
    };
    trace.note(format!("plan: {} steps to {}", plan.length, plan.end()));
    trace.path.push(episode.start.cell);
    let mut taken = 0u32;
    let mut completed = true;
    for &cell in &plan.cells[1..] {
        if taken >= config.budget {
            trace.note(format!("step budget {} exhausted", config.budget));
            completed = false;
            break;
        }
        if let Err(e) = world.step_agent(cell) {
            trace.note(format!("walk stopped: {e}"));
            completed = false;
            break;
        }
        taken += 1;
        trace.path.push(cell);
    }
    result.nav.path_taken = taken;
    let face = goal_box.map(|b| b.center()).unwrap_or_else(|| {
        let (x, z) = world.grid.center(plan.end());
        crate::geometry::Vec3::new(x, 0.0, z)
    });
    let (ax, az) = world.grid.center(world.agent.cell);
    if (face.x - ax).abs() + (face.z - az).abs() > 1e-9 {
        world.turn_agent(Heading::facing(face.x - ax, face.z - az));
    }
    let arrived = arrival_cells(&world, &episode.target_object_id).contains(&world.agent.cell);
    result.navigated = completed && arrived;
    result.nav.success = result.navigated;
    trace.note(format!(
        "navigation: p={} l={} at {} facing {:?} arrived={}",
        taken, shortest, world.agent.cell, world.agent.heading, result.navigated
    ));
    if !result.navigated {
        return finish(result, trace);
    }

    let mut graph = prior.graph.clone();
    let obs_start = perception.perceive(world.observe_from_agent());
    graph.update(&obs_start);
    trace.note(format!("I_start: {} visible", obs_start.visible.len()));
    let resolution = match resolve_scored(&localization_query(&ast), &obs_start, &graph, config.score_threshold) {
        Ok(r) => r,
        Err(e) => {
            trace.note(format!("localization failed: {e}"));
            return finish(result, trace);
        }
    };
    for s in &resolution.scores {
        trace.note(format!(
            "  score {:<18} subj={:.2} loc={:.2} rel={:.2} total={:.2}",
            s.candidate_id.as_str(),
            s.s_subject,
            s.s_location,
            s.s_relationship,
            s.total
        ));
    }
    result.loc_iou = world.get(&episode.target_object_id).map(|o| iou3d(&resolution.bbox, &o.bbox));
    result.localized = resolution.id == episode.target_object_id;
    trace.note(format!("localized {} (target {}) ok={}", resolution.id, episode.target_object_id, result.localized));
    if !result.localized {
        return finish(result, trace);
    }

    let perceived_type = obs_start.get(&resolution.id).expect("resolved id is visible").obj_type;
    let action = Action { kind: affordance(perceived_type), target_id: resolution.id.clone() };
    if config.manipulate {
        match world.apply_action(&action) {
            Ok(()) => result.action_ok = true,
            Err(e) => trace.note(format!("action failed: {e}")),
        }
    }
    trace.note(format!("action: {} {} executed={}", action.kind, action.target_id, result.action_ok));
    result.chosen_action = Some(action);

    let obs_end = perception.perceive(world.observe_from_agent());
    graph.update(&obs_end);
    trace.note(format!("I_end: {} visible", obs_end.visible.len()));
    match answer_question(&ast, &obs_start, &obs_end, &graph, config.score_threshold, config.max_count) {
        Ok(a) => result.answer = a,
        Err(e) => trace.note(format!("answering failed: {e}")),
    }
    finish(result, trace)
}

/// Run every episode against its configured world. Priors are built once
/// per scene configuration; episodes run in parallel and come back sorted
/// by id.
pub fn run_all(
    episodes: &[Episode],
    worlds: &BTreeMap<(String, u32), World>,
    config: &AgentConfig,
) -> Result<Vec<EpisodeResult>, MissingWorld> {
    use rayon::prelude::*;
    for e in episodes {
        if !worlds.contains_key(&(e.scene_id.clone(), e.config_id)) {
            return Err(MissingWorld { scene_id: e.scene_id.clone(), config_id: e.config_id });
        }
    }
    let needed: BTreeSet<&(String, u32)> =
        worlds.keys().filter(|k| episodes.iter().any(|e| e.scene_id == k.0 && e.config_id == k.1)).collect();
    let priors: BTreeMap<&(String, u32), Prior> = needed
        .into_par_iter()
        .map(|key| {
            let mut perception = Perception::new(config.noise_sigma, config.label_flip, prior_seed(config.seed, &key.0, key.1));
            (key, build_prior(&worlds[key], &mut perception))
        })
        .collect();
    let mut results: Vec<EpisodeResult> = episodes
        .par_iter()
        .map(|e| {
            let key = (e.scene_id.clone(), e.config_id);
            run_episode(&worlds[&key], &priors[&key], e, config)
        })
        .collect();
    results.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no world for scene {scene_id} configuration {config_id}")]
pub struct MissingWorld {
    pub scene_id: String,
    pub config_id: u32,
}

/// Fractions of successful episodes for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub n: usize,
    pub s_n: f64,
    pub s_l: f64,
    pub s_qa: f64,
    pub spl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: Rates,
    pub per_type: BTreeMap<QType, Rates>,
}

fn rates(results: &[&EpisodeResult]) -> Result<Rates, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = results.len();
    let frac = |f: fn(&EpisodeResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / n as f64;
    let navs: Vec<NavResult> = results.iter().map(|r| r.nav).collect();
    Ok(Rates {
        n,
        s_n: frac(|r| r.navigated),
        s_l: frac(|r| r.localized),
        s_qa: frac(|r| r.answered_correctly),
        spl: spl(&navs)?,
    })
}

pub fn eval_metrics(results: &[EpisodeResult]) -> Result<Metrics, MetricsError> {
    let all: Vec<&EpisodeResult> = results.iter().collect();
    let overall = rates(&all)?;
    let mut per_type = BTreeMap::new();
    for q in QType::ALL {
        let group: Vec<&EpisodeResult> = results.iter().filter(|r| r.qtype == q).collect();
        if !group.is_empty() {
            per_type.insert(q, rates(&group)?);
        }
    }
    Ok(Metrics { overall, per_type })
}

impl Metrics {
    /// Per-type and overall rows of S_N, S_L, S_QA and SPL.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>5} {:>7} {:>7} {:>7} {:>7}", "type", "n", "S_N", "S_L", "S_QA", "SPL");
        let mut row = |name: &str, r: &Rates| {
            let _ = writeln!(s, "{:<10} {:>5} {:>7.3} {:>7.3} {:>7.3} {:>7.3}", name, r.n, r.s_n, r.s_l, r.s_qa, r.spl);
        };
        for (q, r) in &self.per_type {
            row(q.label(), r);
        }
        row("ALL", &self.overall);
        s
    }
}

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ResultRecord {
    Header { schema_version: u32, dataset: String, config: AgentConfig },
    Episode(EpisodeResult),
    Aggregate(Metrics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub dataset: String,
    pub config: AgentConfig,
    pub episodes: Vec<EpisodeResult>,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("results file line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ResultsFile {
    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut line = |r: &ResultRecord| -> std::io::Result<()> {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")
        };
        line(&ResultRecord::Header {
            schema_version: RESULTS_SCHEMA_VERSION,
            dataset: self.dataset.clone(),
            config: self.config.clone(),
        })?;
        for e in &self.episodes {
            line(&ResultRecord::Episode(e.clone()))?;
        }
        if let Some(m) = &self.metrics {
            line(&ResultRecord::Aggregate(m.clone()))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ResultsError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(input: impl BufRead) -> Result<ResultsFile, ResultsError> {
        let mut header = None;
        let mut episodes = Vec::new();
        let mut metrics = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let schema = |message: String| ResultsError::Schema { line: i + 1, message };
            let rec: ResultRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
            match rec {
                ResultRecord::Header { schema_version, dataset, config } => {
                    if i != 0 {
                        return Err(schema("header must be the first record".into()));
                    }
                    if schema_version != RESULTS_SCHEMA_VERSION {
                        return Err(schema(format!("unsupported schema version {schema_version}")));
                    }
                    header = Some((dataset, config));
                }
                _ if header.is_none() => return Err(schema("missing header record".into())),
                ResultRecord::Episode(e) => episodes.push(e),
                ResultRecord::Aggregate(m) => metrics = Some(m),
            }
        }
        let (dataset, config) = header.ok_or(ResultsError::Schema { line: 0, message: "empty results file".into() })?;
        Ok(ResultsFile { dataset, config, episodes, metrics })
    }

    pub fn load(path: &Path) -> Result<ResultsFile, ResultsError> {
        ResultsFile::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Floor map of the true world with the trace's path drawn on top.
///
/// `#` blocked, `.` free, `*` path, `S` start, `E` end, `T` target footprint.
pub fn render_trace(world: &World, trace: &Trace, target: &ObjectId) -> String {
    let target_cells: BTreeSet<Cell> = world.footprint_cells(target).into_iter().collect();
    let path: BTreeSet<Cell> = trace.path.iter().copied().collect();
    let end = trace.path.last().copied();
    let mut s = String::new();
    for z in (0..world.grid.nz).rev() {
        for x in 0..world.grid.nx {
            let c = Cell::new(x, z);
            let ch = if Some(c) == trace.start {
                'S'
            } else if Some(c) == end {
                'E'
            } else if path.contains(&c) {
                '*'
            } else if target_cells.contains(&c) {
                'T'
            } else if world.is_traversable(c) {
                '.'
            } else {
                '#'
            };
            s.push(ch);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3;
    use crate::language::ReferringExpression;
    use crate::vocab::Relation;
    use crate::world::tests::{bx, fridge_world};

    fn t(name: &str) -> ObjType {
        ObjType::named(name)
    }

    #[test]
    fn affordances() {
        assert_eq!(classify_action("Fridge").unwrap(), ActionKind::Open);
        assert_eq!(classify_action("Chair").unwrap(), ActionKind::Move);
        assert_eq!(classify_action("Book").unwrap(), ActionKind::Pickup);
        assert_eq!(classify_action("Unicorn"), Err(PipelineError::UnknownType("Unicorn".into())));
    }

    fn vis(id: &str, ty: &str, b: Box3, parent: Option<&str>) -> VisibleObject {
        VisibleObject { id: id.into(), obj_type: t(ty), bbox: b, parent_id: parent.map(ObjectId::from) }
    }

    fn observation(mut visible: Vec<VisibleObject>) -> Observation {
        visible.sort_by(|a, b| a.id.cmp(&b.id));
        Observation { viewpoint: Pose { cell: Cell::new(0, 0), heading: Heading::PosX }, visible, timestamp: 0 }
    }

    #[test]
    fn counting_after_opening() {
        let fridge = vis("Fridge_01", "Fridge", bx([0.0, 0.0, 0.0], [0.7, 1.8, 0.7]), None);
        let sink = vis("Sink_01", "Sink", bx([1.0, 0.0, 0.0], [1.6, 0.9, 0.5]), None);
        let egg = |n: u32| {
            vis(
                &format!("Egg_0{n}"),
                "Egg",
                bx([0.1 * n as f64, 0.5, 0.1], [0.1 * n as f64 + 0.05, 0.56, 0.15]),
                Some("Fridge_01"),
            )
        };
        let start = observation(vec![fridge.clone(), sink.clone()]);
        let end = observation(vec![fridge.clone(), sink.clone(), egg(1), egg(2)]);
        let graph = SceneGraph::from_objects(&end.visible);
        let re = ReferringExpression { subject_type: t("Fridge"), relation: Relation::LeftOf, anchor_type: t("Sink") };
        let ast = QuestionAst::Counting { obj1: t("Egg"), re };
        // oracle: children of the fridge in the end frame
        let expected = end.visible.iter().filter(|v| v.parent_id == Some("Fridge_01".into())).count() as u32;
        assert_eq!(answer_question(&ast, &start, &end, &graph, 0.99, 10).unwrap(), Answer::Count(expected));
        assert_eq!(answer_question(&ast, &start, &end, &graph, 0.99, 1).unwrap(), Answer::Count(1));
        let ast = QuestionAst::Existence { obj1: t("Egg"), re };
        assert_eq!(answer_question(&ast, &start, &start, &graph, 0.99, 10).unwrap(), Answer::YesNo(false));
        let ast = QuestionAst::Existence { obj1: t("Egg"), re: ReferringExpression { anchor_type: t("Toaster"), ..re } };
        assert!(matches!(answer_question(&ast, &start, &end, &graph, 0.99, 10), Err(PipelineError::UnresolvedAnchor(_))));
    }

    #[test]
    fn spatial_uses_relation_predicate() {
        let table = vis("DiningTable_01", "DiningTable", bx([1.0, 0.0, 1.0], [1.95, 0.75, 1.95]), None);
        let cup = vis("Cup_01", "Cup", bx([1.2, 0.75, 1.2], [1.28, 0.85, 1.28]), None);
        let start = observation(vec![table.clone(), cup.clone()]);
        let graph = SceneGraph::from_objects(&start.visible);
        let on = QuestionAst::Spatial { obj1: t("Cup"), relation: Relation::On, anchor: t("DiningTable") };
        assert_eq!(assign_relation(&cup, &table), Some(Relation::On));
        assert_eq!(answer_question(&on, &start, &start, &graph, 0.99, 10).unwrap(), Answer::YesNo(true));
        let near = QuestionAst::Spatial { obj1: t("Cup"), relation: Relation::Near, anchor: t("DiningTable") };
        assert_eq!(answer_question(&near, &start, &start, &graph, 0.99, 10).unwrap(), Answer::YesNo(false));
        // the start frame wins over a later, moved copy of the same object
        let moved = vis("Cup_01", "Cup", bx([3.0, 0.0, 3.0], [3.08, 0.1, 3.08]), None);
        let end = observation(vec![table, moved]);
        assert_eq!(answer_question(&on, &start, &end, &graph, 0.99, 10).unwrap(), Answer::YesNo(true));
    }

    #[test]
    fn metrics_count_flags() {
        let mk = |id: &str, q: QType, n: bool, l: bool, a: bool| EpisodeResult {
            episode_id: id.into(),
            qtype: q,
            navigated: n,
            localized: l,
            answered_correctly: a,
            nav: NavResult { success: n, path_taken: 4, shortest: 2, budget: 50 },
            chosen_action: None,
            action_ok: false,
            answer: Answer::YesNo(false),
            truth: Answer::YesNo(false),
            loc_iou: None,
        };
        let rs = vec![
            mk("a", QType::Existence, true, false, true),
            mk("b", QType::Existence, false, false, false),
            mk("c", QType::Spatial, true, true, true),
            mk("d", QType::Counting, true, false, false),
        ];
        let m = eval_metrics(&rs).unwrap();
        assert_eq!((m.overall.s_n, m.overall.s_l, m.overall.s_qa), (0.75, 0.25, 0.5));
        assert_eq!(m.overall.spl, 0.375);
        let e = m.per_type[&QType::Existence];
        assert_eq!((e.n, e.s_n, e.s_l, e.s_qa), (2, 0.5, 0.0, 0.5));
        assert_eq!(eval_metrics(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn prior_map_matches_world_occupancy() {
        let w = fridge_world();
        let prior = build_prior(&w, &mut Perception::noiseless());
        for c in w.grid.cells() {
            assert_eq!(prior.map.is_traversable(c), w.is_traversable(c), "cell {c}");
        }
        assert!(prior.graph.node(&"Egg_01".into()).is_none(), "hidden contents stay unseen");
        assert!(prior.graph.node(&"Fridge_01".into()).is_some());
    }

    #[test]
    fn perception_is_seeded() {
        let w = fridge_world();
        let obs = w.observe(Pose { cell: Cell::new(6, 5), heading: Heading::PosX });
        let a = Perception::new(0.1, 0.3, 7).perceive(obs.clone());
        let b = Perception::new(0.1, 0.3, 7).perceive(obs.clone());
        assert_eq!(a, b);
        assert_eq!(Perception::noiseless().perceive(obs.clone()), obs);
    }

    #[test]
    fn answers_serialize_plainly() {
        assert_eq!(serde_json::to_string(&Answer::YesNo(true)).unwrap(), "true");
        assert_eq!(serde_json::to_string(&Answer::Count(3)).unwrap(), "3");
        assert_eq!(serde_json::from_str::<Answer>("2").unwrap(), Answer::Count(2));
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        assert!(AgentConfig { noise_sigma: -0.1, ..Default::default() }.validate().is_err());
        assert!(AgentConfig { label_flip: 1.5, ..Default::default() }.validate().is_err());
    }
}
