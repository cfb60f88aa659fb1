//! Object-type and relation vocabulary.
//!
//! The vocabulary is data: one JSON record per line, either an object type
//! (surface name, size, affordances, placement hints) or a relation surface
//! form. A default table ships with the crate; a replacement can be
//! installed once at startup with [`install`].

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

const DEFAULT_VOCABULARY: &str = include_str!("../data/vocabulary.jsonl");

static VOCABULARY: OnceLock<Vocabulary> = OnceLock::new();

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("duplicate object type `{0}`")]
    DuplicateType(String),
    #[error("duplicate surface form `{0}`")]
    DuplicateSurface(String),
    #[error("`{owner}` holds unknown type `{held}`")]
    UnknownHeld { owner: String, held: String },
    #[error("relation `{0}` has no surface form")]
    MissingRelation(&'static str),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("vocabulary already installed")]
    AlreadyInstalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoomType {
    Kitchen,
    LivingRoom,
    Bedroom,
    Bathroom,
}

impl RoomType {
    pub const ALL: [RoomType; 4] = [RoomType::Kitchen, RoomType::LivingRoom, RoomType::Bedroom, RoomType::Bathroom];

    pub fn slug(self) -> &'static str {
        match self {
            RoomType::Kitchen => "kitchen",
            RoomType::LivingRoom => "living",
            RoomType::Bedroom => "bedroom",
            RoomType::Bathroom => "bathroom",
        }
    }
}

/// Where the scene sampler may put an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Floor,
    Surface,
    Wall,
}

/// Spatial relation between a subject and an anchor object.
///
/// `LeftOf`/`RightOf` are world-frame: left means smaller `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    In,
    On,
    Above,
    Below,
    LeftOf,
    RightOf,
    Near,
}

impl Relation {
    /// Precedence order used when assigning relations.
    pub const ALL: [Relation; 7] =
        [Relation::In, Relation::On, Relation::Above, Relation::Below, Relation::LeftOf, Relation::RightOf, Relation::Near];

    pub fn id(self) -> &'static str {
        match self {
            Relation::In => "in",
            Relation::On => "on",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::Near => "near",
        }
    }

    pub fn from_id(id: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.id() == id)
    }

    pub fn inverse(self) -> Option<Relation> {
        match self {
            Relation::Above => Some(Relation::Below),
            Relation::Below => Some(Relation::Above),
            Relation::LeftOf => Some(Relation::RightOf),
            Relation::RightOf => Some(Relation::LeftOf),
            Relation::Near => Some(Relation::Near),
            Relation::In | Relation::On => None,
        }
    }

    /// Rendered words, e.g. `"to the left of"`.
    pub fn surface(self) -> &'static str {
        &vocabulary().relation_surface[self as usize]
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Static description of one object type.
#[derive(Debug, Clone)]
pub struct TypeInfo {
    pub name: String,
    pub surface: String,
    pub placement: Placement,
    /// Nominal extents (x, y, z) in meters.
    pub size: [f64; 3],
    pub openable: bool,
    pub receptacle: bool,
    pub pickupable: bool,
    pub movable: bool,
    pub supports: bool,
    pub holds: Vec<ObjType>,
    pub rooms: Vec<RoomType>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Object {
        id: String,
        surface: String,
        placement: Placement,
        size: [f64; 3],
        #[serde(default)]
        openable: bool,
        #[serde(default)]
        receptacle: bool,
        #[serde(default)]
        pickupable: bool,
        #[serde(default)]
        movable: bool,
        #[serde(default)]
        supports: bool,
        #[serde(default)]
        holds: Vec<String>,
        #[serde(default)]
        rooms: Vec<RoomType>,
    },
    Relation {
        id: String,
        surface: String,
    },
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    types: Vec<TypeInfo>,
    by_name: HashMap<String, ObjType>,
    by_surface: HashMap<String, ObjType>,
    relation_surface: Vec<String>,
}

impl Vocabulary {
    pub fn parse(text: &str) -> Result<Vocabulary, VocabError> {
        let mut types = Vec::new();
        let mut pending_holds = Vec::new();
        let mut by_name = HashMap::new();
        let mut by_surface = HashMap::new();
        let mut relation_surface: Vec<Option<String>> = vec![None; Relation::ALL.len()];

        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(line).map_err(|e| VocabError::Record { line: idx + 1, message: e.to_string() })?;
            match record {
                Record::Object {
                    id,
                    surface,
                    placement,
                    size,
                    openable,
                    receptacle,
                    pickupable,
                    movable,
                    supports,
                    holds,
                    rooms,
                } => {
                    if size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                        return Err(VocabError::Record { line: idx + 1, message: "size must be positive".into() });
                    }
                    let ty = ObjType(types.len() as u16);
                    if by_name.insert(id.clone(), ty).is_some() {
                        return Err(VocabError::DuplicateType(id));
                    }
                    if by_surface.insert(surface.clone(), ty).is_some() {
                        return Err(VocabError::DuplicateSurface(surface));
                    }
                    pending_holds.push(holds);
                    types.push(TypeInfo {
                        name: id,
                        surface,
                        placement,
                        size,
                        openable,
                        receptacle,
                        pickupable,
                        movable,
                        supports,
                        holds: Vec::new(),
                        rooms,
                    });
                }
                Record::Relation { id, surface } => {
                    let rel = Relation::from_id(&id).ok_or(VocabError::UnknownRelation(id))?;
                    relation_surface[rel as usize] = Some(surface);
                }
            }
        }

        for (ty, holds) in pending_holds.into_iter().enumerate() {
            for held in holds {
                let h = *by_name
                    .get(&held)
                    .ok_or_else(|| VocabError::UnknownHeld { owner: types[ty].name.clone(), held: held.clone() })?;
                types[ty].holds.push(h);
            }
        }

        let relation_surface = relation_surface
            .into_iter()
            .zip(Relation::ALL)
            .map(|(s, r)| s.ok_or(VocabError::MissingRelation(r.id())))
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Vocabulary { types, by_name, by_surface, relation_surface })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn info(&self, ty: ObjType) -> &TypeInfo {
        &self.types[ty.0 as usize]
    }

    pub fn by_name(&self, name: &str) -> Option<ObjType> {
        self.by_name.get(name).copied()
    }

    pub fn by_surface(&self, surface: &str) -> Option<ObjType> {
        self.by_surface.get(surface).copied()
    }

    pub fn types(&self) -> impl Iterator<Item = ObjType> + '_ {
        (0..self.types.len() as u16).map(ObjType)
    }

    pub fn relation_surface(&self, rel: Relation) -> &str {
        &self.relation_surface[rel as usize]
    }
}

/// Install a custom vocabulary. Must happen before the first lookup.
pub fn install(vocab: Vocabulary) -> Result<(), VocabError> {
    VOCABULARY.set(vocab).map_err(|_| VocabError::AlreadyInstalled)
}

pub fn vocabulary() -> &'static Vocabulary {
    VOCABULARY.get_or_init(|| Vocabulary::parse(DEFAULT_VOCABULARY).expect("bundled vocabulary is valid"))
}

/// Index of an object type in the active vocabulary.
///
/// Serialized by name so files stay readable and survive vocabulary
/// reordering.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjType(u16);

impl ObjType {
    pub fn from_name(name: &str) -> Option<ObjType> {
        vocabulary().by_name(name)
    }

    /// Panics when `name` is not in the vocabulary; intended for literals.
    pub fn named(name: &str) -> ObjType {
        Self::from_name(name).unwrap_or_else(|| panic!("unknown object type `{name}`"))
    }

    pub fn index(self) -> u16 {
        self.0
    }

    pub fn info(self) -> &'static TypeInfo {
        vocabulary().info(self)
    }

    pub fn name(self) -> &'static str {
        &self.info().name
    }

    pub fn surface(self) -> &'static str {
        &self.info().surface
    }

    pub fn all() -> impl Iterator<Item = ObjType> {
        vocabulary().types()
    }
}

impl fmt::Debug for ObjType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for ObjType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ObjType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ObjType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        ObjType::from_name(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown object type `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_vocabulary_has_sixty_types() {
        let v = vocabulary();
        assert_eq!(v.len(), 60);
        for rel in Relation::ALL {
            assert!(!v.relation_surface(rel).is_empty());
        }
        assert_eq!(Relation::LeftOf.surface(), "to the left of");
    }

    #[test]
    fn receptacles_are_openable_single_words() {
        for ty in ObjType::all() {
            let info = ty.info();
            if info.receptacle {
                assert!(info.openable, "{ty}");
                assert!(!info.surface.contains(' '), "{ty}");
                assert!(!info.holds.is_empty(), "{ty}");
            }
            assert!(info.surface.split(' ').count() <= 2, "{ty}");
        }
    }

    #[test]
    fn serde_by_name() {
        let fridge = ObjType::named("Fridge");
        assert_eq!(serde_json::to_string(&fridge).unwrap(), "\"Fridge\"");
        assert_eq!(serde_json::from_str::<ObjType>("\"Fridge\"").unwrap(), fridge);
        assert!(serde_json::from_str::<ObjType>("\"Unicorn\"").is_err());
        assert_eq!(serde_json::to_string(&Relation::LeftOf).unwrap(), "\"left_of\"");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"kind\":\"relation\",\"id\":\"in\",\"surface\":\"in\"}\n{\"kind\":\"object\"}\n";
        match Vocabulary::parse(text) {
            Err(VocabError::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let missing = "{\"kind\":\"relation\",\"id\":\"in\",\"surface\":\"in\"}\n";
        assert!(matches!(Vocabulary::parse(missing), Err(VocabError::MissingRelation(_))));
    }
}
