//! Symbolic referring-expression comprehension.
//!
//! Each visible candidate gets three module scores (subject, location,
//! relationship) that are combined with weights uniform over the modules the
//! query actually uses. The location module has no counterpart in the
//! single-hop grammar and always carries weight 0.

use crate::geometry::{iou3d, Box3};
use crate::language::ReferringExpression;
use crate::navigation::MetricsError;
use crate::scene_graph::SceneGraph;
use crate::vocab::{ObjType, Relation};
use crate::world::{ObjectId, Observation, VisibleObject};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.99;

const EPS: f64 = 1e-9;

/// What a comprehension query asks for: a subject type, optionally tied to
/// an anchor type by a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecQuery {
    pub subject_type: ObjType,
    pub relationship: Option<(Relation, ObjType)>,
}

impl RecQuery {
    pub fn subject_only(subject_type: ObjType) -> Self {
        Self { subject_type, relationship: None }
    }

    /// Module weights `[subject, location, relationship]`.
    pub fn weights(&self) -> [f64; 3] {
        match self.relationship {
            Some(_) => [0.5, 0.0, 0.5],
            None => [1.0, 0.0, 0.0],
        }
    }
}

impl From<&ReferringExpression> for RecQuery {
    fn from(re: &ReferringExpression) -> Self {
        Self { subject_type: re.subject_type, relationship: Some((re.relation, re.anchor_type)) }
    }
}

impl From<ReferringExpression> for RecQuery {
    fn from(re: ReferringExpression) -> Self {
        Self::from(&re)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_id: ObjectId,
    pub s_subject: f64,
    pub s_location: f64,
    pub s_relationship: f64,
    pub weights: [f64; 3],
    pub total: f64,
}

impl CandidateScore {
    fn new(candidate_id: ObjectId, modules: [f64; 3], weights: [f64; 3]) -> Self {
        let total = modules.iter().zip(weights).map(|(s, w)| s * w).sum();
        Self { candidate_id, s_subject: modules[0], s_location: modules[1], s_relationship: modules[2], weights, total }
    }

    /// Same candidate with every module score multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.candidate_id.clone(), [self.s_subject * c, self.s_location * c, self.s_relationship * c], self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecError {
    #[error("no visible candidates")]
    NoCandidates,
    #[error("ambiguous expression: {0:?} tie for the best score")]
    Ambiguous(Vec<ObjectId>),
    #[error("no candidate reaches the score threshold")]
    NoMatch,
}

pub fn score_candidate(
    query: &RecQuery,
    candidate: &VisibleObject,
    observation: &Observation,
    graph: &SceneGraph,
) -> CandidateScore {
    let s_subject = if candidate.obj_type == query.subject_type { 1.0 } else { 0.0 };
    let s_relationship = match query.relationship {
        Some((relation, anchor_type)) => {
            let hit = graph
                .edges_from(&candidate.id)
                .any(|e| e.relation == relation && observation.get(&e.anchor).is_some_and(|a| a.obj_type == anchor_type));
            if hit {
                1.0
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    CandidateScore::new(candidate.id.clone(), [s_subject, 0.0, s_relationship], query.weights())
}

pub fn score_all(query: &RecQuery, observation: &Observation, graph: &SceneGraph) -> Vec<CandidateScore> {
    observation.visible.iter().map(|c| score_candidate(query, c, observation, graph)).collect()
}

/// Ids sharing the maximal total, in candidate order.
pub fn argmax(scores: &[CandidateScore]) -> Vec<ObjectId> {
    let best = scores.iter().map(|s| s.total).fold(f64::NEG_INFINITY, f64::max);
    scores.iter().filter(|s| (s.total - best).abs() <= EPS).map(|s| s.candidate_id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub id: ObjectId,
    pub bbox: Box3,
    pub scores: Vec<CandidateScore>,
}

/// Resolve against the visible candidates, keeping the per-candidate scores.
pub fn resolve_scored(
    query: &RecQuery,
    observation: &Observation,
    graph: &SceneGraph,
    threshold: f64,
) -> Result<Resolution, RecError> {
    if observation.visible.is_empty() {
        return Err(RecError::NoCandidates);
    }
    let scores = score_all(query, observation, graph);
    let best = argmax(&scores);
    if best.len() > 1 {
        let total = scores.iter().find(|s| s.candidate_id == best[0]).map_or(0.0, |s| s.total);
        if total + EPS < threshold {
            return Err(RecError::NoMatch);
        }
        return Err(RecError::Ambiguous(best));
    }
    let id = best.into_iter().next().ok_or(RecError::NoCandidates)?;
    let top = scores.iter().find(|s| s.candidate_id == id).expect("argmax comes from scores");
    if top.total + EPS < threshold {
        return Err(RecError::NoMatch);
    }
    let bbox = observation.get(&id).expect("candidate is visible").bbox;
    Ok(Resolution { id, bbox, scores })
}

pub fn resolve(
    query: &RecQuery,
    observation: &Observation,
    graph: &SceneGraph,
    threshold: f64,
) -> Result<(ObjectId, Box3), RecError> {
    resolve_scored(query, observation, graph, threshold).map(|r| (r.id, r.bbox))
}

/// Fraction of `(predicted, truth)` pairs whose IoU exceeds `x`.
pub fn prec_at(results: &[(Box3, Box3)], x: f64) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = results.iter().filter(|(p, t)| iou3d(p, t) > x).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Smallest extent a jittered box keeps along each axis.
pub const MIN_JITTER_EXTENT: f64 = 0.01;

/// Perturb both corners of `b` with independent Gaussian noise of standard
/// deviation `sigma`. Corners are re-sorted per axis and the box is kept at
/// least `MIN_JITTER_EXTENT` thick.
pub fn jitter_box(b: &Box3, sigma: f64, rng: &mut impl Rng) -> Box3 {
    if sigma <= 0.0 {
        return *b;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let (lo, hi): ([f64; 3], [f64; 3]) = (b.min().into(), b.max().into());
    let mut nlo = [0.0; 3];
    let mut nhi = [0.0; 3];
    for k in 0..3 {
        let a = lo[k] + normal.sample(rng);
        let c = hi[k] + normal.sample(rng);
        let (mut l, mut h) = (a.min(c), a.max(c));
        if h - l < MIN_JITTER_EXTENT {
            let mid = (l + h) / 2.0;
            l = mid - MIN_JITTER_EXTENT / 2.0;
            h = mid + MIN_JITTER_EXTENT / 2.0;
        }
        nlo[k] = l;
        nhi[k] = h;
    }
    Box3::new(nlo, nhi).expect("jittered box has positive extent")
}
