//! Closed template grammar for referring expressions and questions.
//!
//! ```text
//! RE        := "the" OBJ REL "the" OBJ
//! EXISTENCE := "Is there a" OBJ "in the" OBJ REL "the" OBJ "?"
//! COUNTING  := "How many" OBJ "are there in the" OBJ REL "the" OBJ "?"
//! SPATIAL   := "Is there a" OBJ REL "the" OBJ "?"
//! ```
//!
//! Object names and relation phrases come from the vocabulary and are
//! matched longest-first. Nouns are never inflected, so `realize` and
//! `parse` are exact inverses.

use crate::scene_graph::SceneGraph;
use crate::vocab::{vocabulary, ObjType, Relation};
use crate::world::ObjectId;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReferringExpression {
    pub subject_type: ObjType,
    pub relation: Relation,
    pub anchor_type: ObjType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QType {
    Existence,
    Counting,
    Spatial,
}

impl QType {
    pub const ALL: [QType; 3] = [QType::Existence, QType::Counting, QType::Spatial];

    pub fn label(self) -> &'static str {
        match self {
            QType::Existence => "EXISTENCE",
            QType::Counting => "COUNTING",
            QType::Spatial => "SPATIAL",
        }
    }
}

impl fmt::Display for QType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Parsed question. EXISTENCE and COUNTING ask about the contents of the
/// receptacle picked out by a referring expression; SPATIAL names a bare
/// relation to an anchor type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "qtype", rename_all = "UPPERCASE")]
pub enum QuestionAst {
    Existence { obj1: ObjType, re: ReferringExpression },
    Counting { obj1: ObjType, re: ReferringExpression },
    Spatial { obj1: ObjType, relation: Relation, anchor: ObjType },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstError {
    #[error("`{0}` is not a receptacle and cannot be asked about its contents")]
    NotReceptacle(ObjType),
}

impl QuestionAst {
    pub fn qtype(&self) -> QType {
        match self {
            QuestionAst::Existence { .. } => QType::Existence,
            QuestionAst::Counting { .. } => QType::Counting,
            QuestionAst::Spatial { .. } => QType::Spatial,
        }
    }

    pub fn obj1(&self) -> ObjType {
        match *self {
            QuestionAst::Existence { obj1, .. } | QuestionAst::Counting { obj1, .. } | QuestionAst::Spatial { obj1, .. } => obj1,
        }
    }

    pub fn referring_expression(&self) -> Option<&ReferringExpression> {
        match self {
            QuestionAst::Existence { re, .. } | QuestionAst::Counting { re, .. } => Some(re),
            QuestionAst::Spatial { .. } => None,
        }
    }

    /// Type of the object the agent must reach and manipulate.
    pub fn target_type(&self) -> ObjType {
        match *self {
            QuestionAst::Existence { re, .. } | QuestionAst::Counting { re, .. } => re.subject_type,
            QuestionAst::Spatial { anchor, .. } => anchor,
        }
    }

    pub fn validate(&self) -> Result<(), AstError> {
        match self.referring_expression() {
            Some(re) if !re.subject_type.info().receptacle => Err(AstError::NotReceptacle(re.subject_type)),
            _ => Ok(()),
        }
    }
}

/// Either form the grammar accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Utterance {
    Question(QuestionAst),
    Re(ReferringExpression),
}

fn re_body(re: &ReferringExpression) -> String {
    format!("{} {} the {}", re.subject_type.surface(), re.relation.surface(), re.anchor_type.surface())
}

pub fn realize_re(re: &ReferringExpression) -> String {
    format!("the {}", re_body(re))
}

pub fn realize_question(q: &QuestionAst) -> String {
    match q {
        QuestionAst::Existence { obj1, re } => format!("Is there a {} in the {}?", obj1.surface(), re_body(re)),
        QuestionAst::Counting { obj1, re } => format!("How many {} are there in the {}?", obj1.surface(), re_body(re)),
        QuestionAst::Spatial { obj1, relation, anchor } => {
            format!("Is there a {} {} the {}?", obj1.surface(), relation.surface(), anchor.surface())
        }
    }
}

pub fn realize(u: &Utterance) -> String {
    match u {
        Utterance::Question(q) => realize_question(q),
        Utterance::Re(re) => realize_re(re),
    }
}

/// Whitespace token count, with a trailing `?` attached to its word.
pub fn token_length(utterance: &str) -> usize {
    utterance.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut offset = 0;
        for word in src.split(' ') {
            if let Some(stem) = word.strip_suffix('?') {
                if !stem.is_empty() {
                    tokens.push((offset, stem));
                }
                tokens.push((offset + stem.len(), "?"));
            } else {
                tokens.push((offset, word));
            }
            offset += word.len() + 1;
        }
        Self { src, tokens, pos: 0 }
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.src.len(), |t| t.0)
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { position: self.here(), message: message.into() }
    }

    fn peek(&self, k: usize) -> Option<&'a str> {
        self.tokens.get(self.pos + k).map(|t| t.1)
    }

    fn expect(&mut self, words: &str) -> Result<(), ParseError> {
        for w in words.split(' ') {
            match self.peek(0) {
                Some(t) if t == w => self.pos += 1,
                Some(t) => return Err(self.error(format!("expected `{w}`, found `{t}`"))),
                None => return Err(self.error(format!("expected `{w}`, found end of input"))),
            }
        }
        Ok(())
    }

    fn at(&self, words: &str) -> bool {
        words.split(' ').enumerate().all(|(k, w)| self.peek(k) == Some(w))
    }

    /// Longest run of upcoming tokens accepted by `lookup`.
    fn longest<T>(&mut self, max_words: usize, what: &str, lookup: impl Fn(&str) -> Option<T>) -> Result<T, ParseError> {
        for n in (1..=max_words).rev() {
            let words: Option<Vec<&str>> = (0..n).map(|k| self.peek(k)).collect();
            if let Some(words) = words {
                if let Some(v) = lookup(&words.join(" ")) {
                    self.pos += n;
                    return Ok(v);
                }
            }
        }
        match self.peek(0) {
            Some(t) => Err(self.error(format!("unknown {what} `{t}`"))),
            None => Err(self.error(format!("expected {what}, found end of input"))),
        }
    }

    fn object(&mut self) -> Result<ObjType, ParseError> {
        let v = vocabulary();
        let max = v.types().map(|t| v.info(t).surface.split(' ').count()).max().unwrap_or(1);
        self.longest(max, "object type", |s| v.by_surface(s))
    }

    fn relation(&mut self) -> Result<Relation, ParseError> {
        let v = vocabulary();
        let max = Relation::ALL.iter().map(|r| v.relation_surface(*r).split(' ').count()).max().unwrap_or(1);
        self.longest(max, "relation", |s| Relation::ALL.into_iter().find(|r| v.relation_surface(*r) == s))
    }

    fn re_body(&mut self) -> Result<ReferringExpression, ParseError> {
        let subject_type = self.object()?;
        let relation = self.relation()?;
        self.expect("the")?;
        let anchor_type = self.object()?;
        Ok(ReferringExpression { subject_type, relation, anchor_type })
    }

    fn receptacle_re(&mut self) -> Result<ReferringExpression, ParseError> {
        let start = self.pos;
        let re = self.re_body()?;
        if !re.subject_type.info().receptacle {
            let position = self.tokens[start].0;
            return Err(ParseError { position, message: format!("`{}` is not a receptacle", re.subject_type.surface()) });
        }
        Ok(re)
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.peek(0) {
            None => Ok(()),
            Some(t) => Err(self.error(format!("unexpected trailing `{t}`"))),
        }
    }

    fn utterance(&mut self) -> Result<Utterance, ParseError> {
        let u = if self.at("the") {
            self.expect("the")?;
            Utterance::Re(self.re_body()?)
        } else if self.at("How many") {
            self.expect("How many")?;
            let obj1 = self.object()?;
            self.expect("are there in the")?;
            let re = self.receptacle_re()?;
            self.expect("?")?;
            Utterance::Question(QuestionAst::Counting { obj1, re })
        } else if self.at("Is there a") {
            self.expect("Is there a")?;
            let obj1 = self.object()?;
            let q = if self.at("in the") {
                // `in the X?` is SPATIAL; `in the X REL the Y?` is EXISTENCE.
                let save = self.pos;
                self.expect("in the")?;
                let anchor = self.object()?;
                if self.at("?") {
                    QuestionAst::Spatial { obj1, relation: Relation::In, anchor }
                } else {
                    self.pos = save + 2;
                    QuestionAst::Existence { obj1, re: self.receptacle_re()? }
                }
            } else {
                let relation = self.relation()?;
                self.expect("the")?;
                let anchor = self.object()?;
                QuestionAst::Spatial { obj1, relation, anchor }
            };
            self.expect("?")?;
            Utterance::Question(q)
        } else {
            return Err(self.error("expected `the`, `Is there a` or `How many`"));
        };
        self.finish()?;
        Ok(u)
    }
}

pub fn parse(utterance: &str) -> Result<Utterance, ParseError> {
    Parser::new(utterance).utterance()
}

pub fn parse_question(utterance: &str) -> Result<QuestionAst, ParseError> {
    match parse(utterance)? {
        Utterance::Question(q) => Ok(q),
        Utterance::Re(_) => Err(ParseError { position: 0, message: "expected a question, found a referring expression".into() }),
    }
}

/// All single-hop expressions that pick out `target` uniquely in `graph`:
/// the anchor type occurs once, and no other node of the target's type has
/// the same relation to that type.
pub fn unambiguous_res(graph: &SceneGraph, target: &ObjectId) -> Vec<ReferringExpression> {
    let Some(node) = graph.node(target) else {
        return Vec::new();
    };
    let mut out: Vec<ReferringExpression> = graph
        .edges_from(target)
        .filter_map(|e| {
            let anchor_type = graph.node(&e.anchor)?.obj_type;
            if graph.type_count(anchor_type) != 1 {
                return None;
            }
            let re = ReferringExpression { subject_type: node.obj_type, relation: e.relation, anchor_type };
            let matches =
                graph.nodes_of_type(node.obj_type).filter(|n| graph.has_relation_to_type(&n.id, e.relation, anchor_type)).count();
            (matches == 1).then_some(re)
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// First unambiguous expression for `target`, with its realization.
pub fn generate_re(graph: &SceneGraph, target: &ObjectId) -> Option<(ReferringExpression, String)> {
    unambiguous_res(graph, target).into_iter().next().map(|re| (re, realize_re(&re)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3;
    use crate::world::VisibleObject;
    use proptest::prelude::*;

    fn t(name: &str) -> ObjType {
        ObjType::named(name)
    }

    #[test]
    fn realize_templates() {
        let re = ReferringExpression { subject_type: t("Drawer"), relation: Relation::Below, anchor_type: t("Toaster") };
        assert_eq!(realize_re(&re), "the drawer below the toaster");
        let counting = QuestionAst::Counting {
            obj1: t("Egg"),
            re: ReferringExpression { subject_type: t("Fridge"), relation: Relation::Near, anchor_type: t("Sink") },
        };
        assert_eq!(realize_question(&counting), "How many egg are there in the fridge near the sink?");
        let spatial = QuestionAst::Spatial { obj1: t("Cup"), relation: Relation::On, anchor: t("DiningTable") };
        assert_eq!(realize_question(&spatial), "Is there a cup on the dining table?");
        let existence = QuestionAst::Existence {
            obj1: t("Fork"),
            re: ReferringExpression { subject_type: t("Drawer"), relation: Relation::LeftOf, anchor_type: t("CoffeeMachine") },
        };
        assert_eq!(realize_question(&existence), "Is there a fork in the drawer to the left of the coffee machine?");
    }

    #[test]
    fn parse_examples() {
        let cup = QuestionAst::Spatial { obj1: t("Cup"), relation: Relation::On, anchor: t("DiningTable") };
        assert_eq!(parse("Is there a cup on the dining table?").unwrap(), Utterance::Question(cup));
        let re = ReferringExpression { subject_type: t("Drawer"), relation: Relation::Below, anchor_type: t("Toaster") };
        assert_eq!(parse("the drawer below the toaster").unwrap(), Utterance::Re(re));
        let err = parse("Is there a unicorn near the table?").unwrap_err();
        assert_eq!(err.position, 11);
        assert!(err.message.contains("unicorn"));
    }

    #[test]
    fn in_relation_disambiguation() {
        let spatial = parse_question("Is there a egg in the fridge?").unwrap();
        assert_eq!(spatial, QuestionAst::Spatial { obj1: t("Egg"), relation: Relation::In, anchor: t("Fridge") });
        let existence = parse_question("Is there a egg in the fridge near the sink?").unwrap();
        assert_eq!(existence.qtype(), QType::Existence);
    }

    #[test]
    fn longest_match_for_multiword_names() {
        let q = parse_question("Is there a desk lamp near the desk?").unwrap();
        assert_eq!(q, QuestionAst::Spatial { obj1: t("DeskLamp"), relation: Relation::Near, anchor: t("Desk") });
        let q = parse_question("Is there a toilet paper to the right of the toilet?").unwrap();
        assert_eq!(q, QuestionAst::Spatial { obj1: t("ToiletPaper"), relation: Relation::RightOf, anchor: t("Toilet") });
    }

    #[test]
    fn rejects_out_of_grammar_strings() {
        for bad in [
            "",
            "Is there a cup on the dining table",
            "Is there a cup on the dining table? ",
            "Is there an apple on the desk?",
            "How many eggs are there in the fridge near the sink?",
            "How many egg are there in the desk near the sink?",
            "the drawer beside the toaster",
            "the drawer below the toaster extra",
            "Is  there a cup on the desk?",
        ] {
            assert!(parse(bad).is_err(), "accepted {bad:?}");
        }
    }

    fn node(id: &str, ty: &str, lo: [f64; 3], hi: [f64; 3]) -> VisibleObject {
        VisibleObject { id: id.into(), obj_type: t(ty), bbox: Box3::new(lo, hi).unwrap(), parent_id: None }
    }

    #[test]
    fn generate_re_picks_unique_edge() {
        // Two drawers; only the first sits under the toaster.
        let d1 = node("Drawer_01", "Drawer", [0.0, 0.0, 0.0], [0.45, 0.6, 0.45]);
        let d2 = node("Drawer_02", "Drawer", [3.0, 0.0, 3.0], [3.45, 0.6, 3.45]);
        let toaster = node("Toaster_01", "Toaster", [0.1, 0.9, 0.1], [0.4, 1.1, 0.3]);
        let g = SceneGraph::from_objects(&[d1, d2, toaster]);
        let (re, text) = generate_re(&g, &"Drawer_01".into()).unwrap();
        assert_eq!(re, ReferringExpression { subject_type: t("Drawer"), relation: Relation::Below, anchor_type: t("Toaster") });
        assert_eq!(text, "the drawer below the toaster");
        // Exhaustive resolver: exactly one drawer satisfies it.
        let hits: Vec<_> =
            g.nodes_of_type(t("Drawer")).filter(|n| g.has_relation_to_type(&n.id, re.relation, re.anchor_type)).collect();
        assert_eq!(hits.len(), 1);
        assert!(generate_re(&g, &"Drawer_02".into()).is_none());
    }

    #[test]
    fn symmetric_drawers_have_no_unambiguous_re() {
        let d1 = node("Drawer_01", "Drawer", [0.0, 0.0, 0.0], [0.45, 0.6, 0.45]);
        let d2 = node("Drawer_02", "Drawer", [0.0, 0.0, 1.0], [0.45, 0.6, 1.45]);
        // anchor sits midway along z so both drawers are `near`/`left_of` alike
        let plant = node("HousePlant_01", "HousePlant", [1.0, 0.0, 0.525], [1.4, 0.8, 0.925]);
        let g = SceneGraph::from_objects(&[d1, d2, plant]);
        assert_eq!(
            g.edge(&"Drawer_01".into(), &"HousePlant_01".into()).unwrap().relation,
            g.edge(&"Drawer_02".into(), &"HousePlant_01".into()).unwrap().relation
        );
        assert!(generate_re(&g, &"Drawer_01".into()).is_none());
        assert!(generate_re(&g, &"Drawer_02".into()).is_none());
    }

    #[test]
    fn unique_type_still_gets_an_re() {
        let fridge = node("Fridge_01", "Fridge", [0.0, 0.0, 0.0], [0.7, 1.8, 0.7]);
        let sink = node("Sink_01", "Sink", [1.0, 0.0, 0.0], [1.6, 0.9, 0.5]);
        let g = SceneGraph::from_objects(&[fridge, sink]);
        let (re, _) = generate_re(&g, &"Fridge_01".into()).unwrap();
        assert_eq!(re.anchor_type, t("Sink"));
    }

    pub(crate) fn arb_question() -> impl Strategy<Value = QuestionAst> {
        let all: Vec<ObjType> = ObjType::all().collect();
        let receptacles: Vec<ObjType> = ObjType::all().filter(|t| t.info().receptacle).collect();
        let obj = proptest::sample::select(all);
        let rec = proptest::sample::select(receptacles);
        let rel = proptest::sample::select(Relation::ALL.to_vec());
        (0..3u8, obj.clone(), rec, rel, obj).prop_map(|(k, o1, r, rel, o2)| {
            let re = ReferringExpression { subject_type: r, relation: rel, anchor_type: o2 };
            match k {
                0 => QuestionAst::Existence { obj1: o1, re },
                1 => QuestionAst::Counting { obj1: o1, re },
                _ => QuestionAst::Spatial { obj1: o1, relation: rel, anchor: o2 },
            }
        })
    }

    proptest! {
        #[test]
        fn question_round_trip(q in arb_question()) {
            let text = realize_question(&q);
            prop_assert_eq!(parse_question(&text).unwrap(), q);
            let n = token_length(&text);
            prop_assert!((6..=16).contains(&n), "{} has {} tokens", text, n);
        }
    }
}
