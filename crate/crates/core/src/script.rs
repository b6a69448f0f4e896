//! Structured story scripts: entity declarations plus an ordered list of shots
//! whose abstract prompts reference entities by bracketed identifier
//! (`[CH_01]`, `[SC_02]`, `[CH_01_blue_tshirt]`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityCategory {
    Character,
    Object,
    Scene,
}

impl EntityCategory {
    pub fn prefix(self) -> &'static str {
        match self {
            EntityCategory::Character => "CH",
            EntityCategory::Object => "OB",
            EntityCategory::Scene => "SC",
        }
    }

    fn from_prefix(prefix: &str) -> Option<Self> {
        match prefix {
            "CH" => Some(EntityCategory::Character),
            "OB" => Some(EntityCategory::Object),
            "SC" => Some(EntityCategory::Scene),
            _ => None,
        }
    }

    /// Characters and objects are subjects; scenes are backgrounds.
    pub fn is_subject(self) -> bool {
        !matches!(self, EntityCategory::Scene)
    }
}

/// Entity identifier such as `CH_01` or `CH_01_blue_tshirt`.
///
/// Ordering and equality follow the canonical string, which is also the order
/// used to lay out memory slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntityId {
    category: EntityCategory,
    index: u8,
    attribute: Option<String>,
    raw: String,
}

impl EntityId {
    pub fn new(category: EntityCategory, index: u8, attribute: Option<&str>) -> Result<Self> {
        let mut raw = format!("{}_{:02}", category.prefix(), index);
        if let Some(attr) = attribute {
            raw.push('_');
            raw.push_str(attr);
        }
        raw.parse()
    }

    pub fn category(&self) -> EntityCategory {
        self.category
    }

    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn attribute(&self) -> Option<&str> {
        self.attribute.as_deref()
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }
}

impl PartialOrd for EntityId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EntityId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.raw.cmp(&other.raw)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

fn id_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(CH|OB|SC)_([0-9]{2})((?:_[a-z0-9]+)*)$").expect("static identifier regex")
    })
}

impl FromStr for EntityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let caps = id_regex()
            .captures(s)
            .ok_or_else(|| Error::Schema(format!("malformed entity identifier `{s}`")))?;
        let category = EntityCategory::from_prefix(&caps[1]).expect("regex restricts prefix");
        let index: u8 = caps[2].parse().expect("two digits");
        if index == 0 {
            return Err(Error::Schema(format!(
                "entity index must be positive in `{s}`"
            )));
        }
        let suffix = &caps[3];
        let attribute = (!suffix.is_empty()).then(|| suffix[1..].to_string());
        Ok(EntityId {
            category,
            index,
            attribute,
            raw: s.to_string(),
        })
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDecl {
    pub id: EntityId,
    pub short_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub shot_num: u32,
    pub abstract_prompt: String,
    pub natural_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_frame_prompt: Option<String>,
}

/// A story script. Field names match the on-disk JSON document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryScript {
    pub story_name: String,
    pub story_overview: String,
    pub characters: Vec<EntityDecl>,
    pub objects: Vec<EntityDecl>,
    pub scenes: Vec<EntityDecl>,
    pub shots: Vec<Shot>,
}

impl StoryScript {
    /// All declarations in document order: characters, objects, scenes.
    pub fn declarations(&self) -> impl Iterator<Item = &EntityDecl> {
        self.characters
            .iter()
            .chain(self.objects.iter())
            .chain(self.scenes.iter())
    }

    pub fn declaration(&self, id: &EntityId) -> Option<&EntityDecl> {
        self.declarations().find(|d| &d.id == id)
    }

    pub fn description(&self, id: &EntityId) -> Option<&str> {
        self.declaration(id).map(|d| d.short_description.as_str())
    }

    pub fn shot(&self, shot_num: u32) -> Option<&Shot> {
        self.shots.iter().find(|s| s.shot_num == shot_num)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serialization is infallible")
    }
}

/// Result of scanning a prompt for bracketed identifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityRefs {
    pub ids: Vec<EntityId>,
    /// Bracketed tokens that are not valid identifiers, e.g. `[FOO_01]`.
    pub warnings: Vec<String>,
}

fn bracket_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").expect("static bracket regex"))
}

/// Returns the identifiers referenced in `prompt`, in first-occurrence order
/// and without duplicates. Unknown bracketed tokens are reported, not fatal.
pub fn extract_entity_refs(prompt: &str) -> EntityRefs {
    let mut refs = EntityRefs::default();
    let mut seen = BTreeSet::new();
    for caps in bracket_regex().captures_iter(prompt) {
        let token = &caps[1];
        match token.parse::<EntityId>() {
            Ok(id) => {
                if seen.insert(id.clone()) {
                    refs.ids.push(id);
                }
            }
            Err(_) => refs
                .warnings
                .push(format!("ignored bracketed token [{token}]")),
        }
    }
    refs
}

/// Checks every script invariant and returns one diagnostic per violation.
pub fn validate_script(script: &StoryScript) -> Vec<String> {
    let mut diagnostics = Vec::new();

    let mut counts: BTreeMap<&EntityId, usize> = BTreeMap::new();
    let groups = [
        (EntityCategory::Character, "characters", &script.characters),
        (EntityCategory::Object, "objects", &script.objects),
        (EntityCategory::Scene, "scenes", &script.scenes),
    ];
    for (category, list_name, decls) in groups {
        for decl in decls {
            *counts.entry(&decl.id).or_default() += 1;
            if decl.id.category() != category {
                diagnostics.push(format!("{} declared under {list_name}", decl.id));
            }
            if decl.short_description.trim().is_empty() {
                diagnostics.push(format!("empty short_description for {}", decl.id));
            }
        }
    }
    for (id, n) in &counts {
        if *n > 1 {
            diagnostics.push(format!("duplicate id {id}"));
        }
    }

    for (expected, shot) in (1u32..).zip(&script.shots) {
        if shot.shot_num != expected {
            diagnostics.push(format!(
                "non-contiguous shot numbering: shot {} at position {expected}",
                shot.shot_num
            ));
            break;
        }
    }

    for shot in &script.shots {
        for id in extract_entity_refs(&shot.abstract_prompt).ids {
            if !counts.contains_key(&id) {
                diagnostics.push(format!("shot {} references undeclared {id}", shot.shot_num));
            }
        }
    }
    diagnostics
}

/// Parses and validates a JSON story script.
pub fn parse_script(text: &str) -> Result<StoryScript> {
    let script: StoryScript = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => Error::Schema(e.to_string()),
            Category::Syntax | Category::Eof | Category::Io => Error::Syntax(e.to_string()),
        }
    })?;
    let diagnostics = validate_script(&script);
    if diagnostics.is_empty() {
        Ok(script)
    } else {
        Err(Error::Validation(diagnostics))
    }
}
