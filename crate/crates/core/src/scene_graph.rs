//! Incremental semantic scene graph.
//!
//! Nodes are observed objects; a directed edge `(subject, relation, anchor)`
//! carries the centroid distance `l` and the 3D IoU of the two boxes. Each
//! ordered pair has at most one edge, chosen by relation precedence.

use crate::geometry::{Box3, Vec3};
use crate::vocab::{ObjType, Relation};
use crate::world::{ObjectId, ObjectInstance, Observation, VisibleObject};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub use crate::geometry::{centroid_distance, iou3d};

/// Relations other than `in`/`on` require centroids at most this far apart.
pub const L_MAX: f64 = 1.5;
/// Largest bottom-to-top gap still counted as resting on a surface.
pub const CONTACT_GAP: f64 = 0.05;
/// Minimum share of the subject's footprint that must lie over the support.
pub const SUPPORT_OVERLAP: f64 = 0.5;

const EPS: f64 = 1e-9;

/// Anything with an identity, a box and an optional containing parent.
pub trait Spatial {
    fn object_id(&self) -> &ObjectId;
    fn bbox(&self) -> &Box3;
    fn parent(&self) -> Option<&ObjectId>;
}

impl Spatial for VisibleObject {
    fn object_id(&self) -> &ObjectId {
        &self.id
    }
    fn bbox(&self) -> &Box3 {
        &self.bbox
    }
    fn parent(&self) -> Option<&ObjectId> {
        self.parent_id.as_ref()
    }
}

impl Spatial for ObjectInstance {
    fn object_id(&self) -> &ObjectId {
        &self.id
    }
    fn bbox(&self) -> &Box3 {
        &self.bbox
    }
    fn parent(&self) -> Option<&ObjectId> {
        self.parent_id.as_ref()
    }
}

fn rests_on(top: &Box3, support: &Box3) -> bool {
    let gap = top.min().y - support.max().y;
    (-EPS..=CONTACT_GAP + EPS).contains(&gap) && top.footprint_overlap(support) >= SUPPORT_OVERLAP * top.footprint_area() - EPS
}

fn is_above(top: &Box3, bottom: &Box3) -> bool {
    top.min().y - bottom.max().y > CONTACT_GAP + EPS && top.footprint_overlap(bottom) > EPS
}

/// Relation of `subject` to `anchor`, or `None` when no relation applies.
///
/// Precedence: in, on, above, below, left_of/right_of, near. The reverse of
/// containment or support has no word in the vocabulary and yields `None`.
pub fn assign_relation(subject: &impl Spatial, anchor: &impl Spatial) -> Option<Relation> {
    if subject.object_id() == anchor.object_id() {
        return None;
    }
    if subject.parent() == Some(anchor.object_id()) {
        return Some(Relation::In);
    }
    if anchor.parent() == Some(subject.object_id()) {
        return None;
    }
    let (s, a) = (subject.bbox(), anchor.bbox());
    if rests_on(s, a) {
        return Some(Relation::On);
    }
    if rests_on(a, s) {
        return None;
    }
    if centroid_distance(s, a) > L_MAX {
        return None;
    }
    if is_above(s, a) {
        return Some(Relation::Above);
    }
    if is_above(a, s) {
        return Some(Relation::Below);
    }
    let d: Vec3 = s.center() - a.center();
    if d.x.abs() > d.z.abs() + EPS {
        return Some(if d.x < 0.0 { Relation::LeftOf } else { Relation::RightOf });
    }
    Some(Relation::Near)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub subject: ObjectId,
    pub relation: Relation,
    pub anchor: ObjectId,
    pub l: f64,
    pub s_iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph {
    nodes: BTreeMap<ObjectId, VisibleObject>,
    edges: BTreeMap<(ObjectId, ObjectId), Edge>,
}

#[derive(Serialize, Deserialize)]
struct GraphExport {
    nodes: Vec<VisibleObject>,
    edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph over a complete set of objects in one pass.
    pub fn from_objects<'a>(objects: impl IntoIterator<Item = &'a VisibleObject>) -> Self {
        let mut g = SceneGraph::new();
        for o in objects {
            g.nodes.insert(o.id.clone(), o.clone());
        }
        let ids: Vec<_> = g.nodes.keys().cloned().collect();
        for s in &ids {
            for a in &ids {
                g.recompute_pair(s, a);
            }
        }
        g
    }

    /// Oracle graph over every object in a world, visible or not.
    pub fn from_world(world: &crate::world::World) -> Self {
        let all: Vec<VisibleObject> = world.objects.values().map(VisibleObject::from).collect();
        Self::from_objects(&all)
    }

    /// Insert unseen objects, refresh changed ones and recompute every edge
    /// touching them. Returns the ids whose node state changed.
    pub fn update(&mut self, observation: &Observation) -> BTreeSet<ObjectId> {
        let mut changed = BTreeSet::new();
        for v in &observation.visible {
            if self.nodes.get(&v.id) != Some(v) {
                self.nodes.insert(v.id.clone(), v.clone());
                changed.insert(v.id.clone());
            }
        }
        if changed.is_empty() {
            return changed;
        }
        let ids: Vec<_> = self.nodes.keys().cloned().collect();
        for c in &changed {
            for other in &ids {
                self.recompute_pair(c, other);
                self.recompute_pair(other, c);
            }
        }
        changed
    }

    fn recompute_pair(&mut self, s: &ObjectId, a: &ObjectId) {
        let key = (s.clone(), a.clone());
        let (Some(sn), Some(an)) = (self.nodes.get(s), self.nodes.get(a)) else {
            return;
        };
        match assign_relation(sn, an) {
            Some(relation) => {
                let edge = Edge {
                    subject: s.clone(),
                    relation,
                    anchor: a.clone(),
                    l: centroid_distance(&sn.bbox, &an.bbox),
                    s_iou: iou3d(&sn.bbox, &an.bbox),
                };
                self.edges.insert(key, edge);
            }
            None => {
                self.edges.remove(&key);
            }
        }
    }

    pub fn node(&self, id: &ObjectId) -> Option<&VisibleObject> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &VisibleObject> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, subject: &ObjectId, anchor: &ObjectId) -> Option<&Edge> {
        self.edges.get(&(subject.clone(), anchor.clone()))
    }

    /// Outgoing edges of `subject`, ordered by anchor id.
    pub fn edges_from<'a>(&'a self, subject: &'a ObjectId) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.range((subject.clone(), ObjectId::new(""))..).take_while(move |((s, _), _)| s == subject).map(|(_, e)| e)
    }

    pub fn type_count(&self, ty: ObjType) -> usize {
        self.nodes.values().filter(|n| n.obj_type == ty).count()
    }

    pub fn nodes_of_type(&self, ty: ObjType) -> impl Iterator<Item = &VisibleObject> {
        self.nodes.values().filter(move |n| n.obj_type == ty)
    }

    /// True when `subject` has a `relation` edge to some node of `anchor_type`.
    pub fn has_relation_to_type(&self, subject: &ObjectId, relation: Relation, anchor_type: ObjType) -> bool {
        self.edges_from(subject)
            .any(|e| e.relation == relation && self.nodes.get(&e.anchor).is_some_and(|a| a.obj_type == anchor_type))
    }

    pub fn to_json(&self) -> String {
        let export = GraphExport { nodes: self.nodes.values().cloned().collect(), edges: self.edges.values().cloned().collect() };
        let mut s = serde_json::to_string_pretty(&export).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<SceneGraph, serde_json::Error> {
        let export: GraphExport = serde_json::from_str(text)?;
        Ok(SceneGraph {
            nodes: export.nodes.into_iter().map(|n| (n.id.clone(), n)).collect(),
            edges: export.edges.into_iter().map(|e| ((e.subject.clone(), e.anchor.clone()), e)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Cell, Heading, Pose};
    use proptest::prelude::*;

    fn obj(id: &str, ty: &str, min: [f64; 3], max: [f64; 3]) -> VisibleObject {
        VisibleObject { id: id.into(), obj_type: ObjType::named(ty), bbox: Box3::new(min, max).unwrap(), parent_id: None }
    }

    fn observation(objs: Vec<VisibleObject>) -> Observation {
        let mut visible = objs;
        visible.sort_by(|a, b| a.id.cmp(&b.id));
        Observation { viewpoint: Pose { cell: Cell::new(0, 0), heading: Heading::PosX }, visible, timestamp: 0 }
    }

    #[test]
    fn containment_dominates() {
        let fridge = obj("Fridge_01", "Fridge", [0.0; 3], [0.7, 1.8, 0.7]);
        let mut egg = obj("Egg_01", "Egg", [0.3, 0.5, 0.3], [0.35, 0.56, 0.35]);
        egg.parent_id = Some(fridge.id.clone());
        assert_eq!(assign_relation(&egg, &fridge), Some(Relation::In));
        assert_eq!(assign_relation(&fridge, &egg), None);
    }

    #[test]
    fn resting_on_a_surface() {
        let table = obj("DiningTable_01", "DiningTable", [0.0, 0.0, 0.0], [1.0, 0.75, 1.0]);
        // bottom 0.03 above the top, footprint fully over the table
        let cup = obj("Cup_01", "Cup", [0.4, 0.78, 0.4], [0.48, 0.88, 0.48]);
        assert_eq!(assign_relation(&cup, &table), Some(Relation::On));
        assert_eq!(assign_relation(&table, &cup), None);
        // half hanging off: overlap 0.04 of 0.08 wide is exactly 0.5
        let edge_cup = obj("Cup_02", "Cup", [0.96, 0.75, 0.4], [1.04, 0.85, 0.48]);
        assert_eq!(assign_relation(&edge_cup, &table), Some(Relation::On));
        let off_cup = obj("Cup_03", "Cup", [0.97, 0.75, 0.4], [1.05, 0.85, 0.48]);
        assert_ne!(assign_relation(&off_cup, &table), Some(Relation::On));
        // floating 0.2 above the top is `above`
        let hover = obj("Cup_04", "Cup", [0.4, 0.95, 0.4], [0.48, 1.05, 0.48]);
        assert_eq!(assign_relation(&hover, &table), Some(Relation::Above));
    }

    #[test]
    fn far_apart_objects_have_no_relation() {
        let a = obj("Mug_01", "Mug", [0.0, 0.0, 0.0], [0.1, 0.1, 0.1]);
        let b = obj("Mug_02", "Mug", [3.0, 0.0, 0.0], [3.1, 0.1, 0.1]);
        assert_eq!(assign_relation(&a, &b), None);
    }

    #[test]
    fn directional_relations_are_world_frame() {
        let a = obj("Chair_01", "Chair", [0.0, 0.0, 0.0], [0.45, 0.9, 0.45]);
        let b = obj("Stool_01", "Stool", [1.0, 0.0, 0.2], [1.35, 0.6, 0.55]);
        assert_eq!(assign_relation(&a, &b), Some(Relation::LeftOf));
        assert_eq!(assign_relation(&b, &a), Some(Relation::RightOf));
        let c = obj("Stool_02", "Stool", [0.0, 0.0, 1.0], [0.35, 0.6, 1.35]);
        assert_eq!(assign_relation(&a, &c), Some(Relation::Near));
    }

    #[test]
    fn drawer_below_toaster() {
        let drawer = obj("Drawer_01", "Drawer", [0.0, 0.0, 0.0], [0.45, 0.6, 0.45]);
        let toaster = obj("Toaster_01", "Toaster", [0.1, 0.9, 0.1], [0.4, 1.1, 0.3]);
        let mut g = SceneGraph::new();
        g.update(&observation(vec![toaster.clone(), drawer.clone()]));
        assert_eq!(g.node_count(), 2);
        let e = g.edge(&drawer.id, &toaster.id).unwrap();
        assert_eq!(e.relation, Relation::Below);
        assert_eq!(g.edge(&toaster.id, &drawer.id).unwrap().relation, Relation::Above);
        // Predicate oracle: vertical gap 0.3 > 0.05 with overlapping footprints.
        assert!(toaster.bbox.min().y - drawer.bbox.max().y > CONTACT_GAP);
        assert!(toaster.bbox.footprint_overlap(&drawer.bbox) > 0.0);
        assert!((e.l - centroid_distance(&drawer.bbox, &toaster.bbox)).abs() < 1e-15);
        assert_eq!(e.s_iou, 0.0);

        let snapshot = g.clone();
        let changed = g.update(&observation(vec![toaster, drawer]));
        assert!(changed.is_empty());
        assert_eq!(g, snapshot);
    }

    #[test]
    fn moved_object_edges_recomputed() {
        let chair = obj("Chair_01", "Chair", [0.0, 0.0, 0.0], [0.45, 0.9, 0.45]);
        let table = obj("DiningTable_01", "DiningTable", [0.75, 0.0, 0.0], [1.7, 0.75, 0.95]);
        let plant = obj("HousePlant_01", "HousePlant", [2.0, 0.0, 1.0], [2.4, 0.8, 1.4]);
        let cup = obj("Cup_01", "Cup", [1.0, 0.75, 0.3], [1.08, 0.85, 0.38]);
        let mut g = SceneGraph::new();
        g.update(&observation(vec![chair.clone(), table.clone(), plant.clone(), cup.clone()]));
        let before = g.clone();

        let mut moved = chair.clone();
        moved.bbox = moved.bbox.translated(Vec3::new(0.0, 0.0, 1.5));
        let changed = g.update(&observation(vec![moved.clone()]));
        assert_eq!(changed.into_iter().collect::<Vec<_>>(), vec![chair.id.clone()]);

        let rebuilt = SceneGraph::from_objects(&[moved, table, plant, cup]);
        assert_eq!(g, rebuilt);
        // Edges not touching the chair are untouched.
        for e in before.edges().filter(|e| e.subject != chair.id && e.anchor != chair.id) {
            assert_eq!(g.edge(&e.subject, &e.anchor), Some(e));
        }
    }

    #[test]
    fn export_round_trip() {
        let drawer = obj("Drawer_01", "Drawer", [0.0, 0.0, 0.0], [0.45, 0.6, 0.45]);
        let toaster = obj("Toaster_01", "Toaster", [0.1, 0.9, 0.1], [0.4, 1.1, 0.3]);
        let g = SceneGraph::from_objects(&[drawer, toaster]);
        let json = g.to_json();
        assert!(json.contains("\"relation\": \"below\""));
        assert_eq!(SceneGraph::from_json(&json).unwrap(), g);
    }

    fn arb_object(idx: usize) -> impl Strategy<Value = VisibleObject> {
        (0.0f64..3.0, 0.0f64..1.5, 0.0f64..3.0, 0.05f64..1.0, 0.05f64..1.0, 0.05f64..1.0)
            .prop_map(move |(x, y, z, w, h, d)| obj(&format!("Box_{idx:02}"), "Box", [x, y, z], [x + w, y + h, z + d]))
    }

    proptest! {
        #[test]
        fn directional_duality(a in arb_object(0), b in arb_object(1)) {
            let ab = assign_relation(&a, &b);
            let ba = assign_relation(&b, &a);
            prop_assert_eq!(ab == Some(Relation::LeftOf), ba == Some(Relation::RightOf));
            prop_assert_eq!(ab == Some(Relation::Above), ba == Some(Relation::Below));
            prop_assert_eq!(ab == Some(Relation::Near), ba == Some(Relation::Near));
        }

        #[test]
        fn edges_respect_distance_bound(objs in proptest::collection::vec((0usize..1).prop_flat_map(|_| arb_object(0)), 2..8)) {
            let objs: Vec<_> = objs.into_iter().enumerate().map(|(i, mut o)| { o.id = ObjectId::new(format!("Box_{i:02}")); o }).collect();
            let g = SceneGraph::from_objects(&objs);
            for e in g.edges() {
                prop_assert!(e.l <= L_MAX || matches!(e.relation, Relation::In | Relation::On));
                prop_assert!(e.l >= 0.0 && (0.0..=1.0).contains(&e.s_iou));
                prop_assert!(g.node(&e.subject).is_some() && g.node(&e.anchor).is_some());
            }
        }
    }
}
