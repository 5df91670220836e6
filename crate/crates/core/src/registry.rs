//! The hierarchy label registry: an ordered list of address levels and their
//! partition into matcher branches ("groups").
//!
//! The registry is data, not code. The shipped default describes 21 levels
//! ordered coarse to fine and four groups (`ADMIN`, `ROAD`, `POI`, `DETAIL`);
//! any other registry file with the same schema can be loaded instead.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DEFAULT_REGISTRY_JSON: &str = include_str!("default_registry.json");

/// Dense index of a hierarchy level inside its registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelId(pub u8);

impl LevelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierLevel {
    pub id: LevelId,
    pub name: String,
    pub group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryFile {
    levels: Vec<HierLevel>,
    groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RegistryFile", into = "RegistryFile")]
pub struct LabelRegistry {
    levels: Vec<HierLevel>,
    groups: Vec<String>,
    by_name: HashMap<String, LevelId>,
    group_of: Vec<usize>,
    group_levels: Vec<Vec<LevelId>>,
}

impl TryFrom<RegistryFile> for LabelRegistry {
    type Error = Error;

    fn try_from(file: RegistryFile) -> Result<Self> {
        LabelRegistry::new(file.levels, file.groups)
    }
}

impl From<LabelRegistry> for RegistryFile {
    fn from(reg: LabelRegistry) -> Self {
        RegistryFile {
            levels: reg.levels,
            groups: reg.groups,
        }
    }
}

impl Default for LabelRegistry {
    fn default() -> Self {
        LabelRegistry::from_json_str(DEFAULT_REGISTRY_JSON).expect("shipped registry is valid")
    }
}

impl LabelRegistry {
    /// Builds a registry, checking that level ids are dense, names unique and
    /// that the groups partition the levels.
    pub fn new(mut levels: Vec<HierLevel>, groups: Vec<String>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Registry("registry has no levels".into()));
        }
        if levels.len() > u8::MAX as usize {
            return Err(Error::Registry(format!("too many levels: {}", levels.len())));
        }
        levels.sort_by_key(|l| l.id);
        let mut by_name = HashMap::new();
        for (i, level) in levels.iter().enumerate() {
            if level.id.index() != i {
                return Err(Error::Registry(format!(
                    "level ids must be dense from 0; found {} at position {i}",
                    level.id
                )));
            }
            if level.name.is_empty() || level.name.contains(char::is_whitespace) {
                return Err(Error::Registry(format!("bad level name {:?}", level.name)));
            }
            if by_name.insert(level.name.clone(), level.id).is_some() {
                return Err(Error::Registry(format!("duplicate level name {}", level.name)));
            }
        }
        let mut group_index = HashMap::new();
        for (i, g) in groups.iter().enumerate() {
            if group_index.insert(g.as_str(), i).is_some() {
                return Err(Error::Registry(format!("duplicate group {g}")));
            }
        }
        let mut group_of = Vec::with_capacity(levels.len());
        let mut group_levels = vec![Vec::new(); groups.len()];
        for level in &levels {
            let g = *group_index.get(level.group.as_str()).ok_or_else(|| {
                Error::Registry(format!(
                    "level {} names unknown group {}",
                    level.name, level.group
                ))
            })?;
            group_of.push(g);
            group_levels[g].push(level.id);
        }
        if let Some(empty) = group_levels.iter().position(Vec::is_empty) {
            return Err(Error::Registry(format!("group {} has no levels", groups[empty])));
        }
        Ok(LabelRegistry {
            levels,
            groups,
            by_name,
            group_of,
            group_levels,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("registry serializes")
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[HierLevel] {
        &self.levels
    }

    pub fn level_ids(&self) -> impl Iterator<Item = LevelId> + '_ {
        self.levels.iter().map(|l| l.id)
    }

    pub fn level(&self, id: LevelId) -> &HierLevel {
        &self.levels[id.index()]
    }

    pub fn name(&self, id: LevelId) -> &str {
        &self.levels[id.index()].name
    }

    pub fn level_by_name(&self, name: &str) -> Result<LevelId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Registry(format!("unknown level {name:?}")))
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn group_index(&self, name: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::Registry(format!("unknown group {name:?}")))
    }

    pub fn group_of(&self, id: LevelId) -> usize {
        self.group_of[id.index()]
    }

    /// Levels of group `g`, in registry order.
    pub fn group_levels(&self, g: usize) -> &[LevelId] {
        &self.group_levels[g]
    }

    /// Number of BIO tags: one `O` plus a `B-`/`I-` pair per level.
    pub fn tag_count(&self) -> usize {
        2 * self.levels.len() + 1
    }

    /// Stable content hash, used to detect registry mismatches between models.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json_string().as_bytes());
        crate::codec::hex(&digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_registry_shape() {
        let reg = LabelRegistry::default();
        assert_eq!(reg.len(), 21);
        assert_eq!(reg.tag_count(), 43);
        assert_eq!(reg.groups(), ["ADMIN", "ROAD", "POI", "DETAIL"]);
        for name in ["prov", "city", "district", "poi"] {
            reg.level_by_name(name).unwrap();
        }
    }

    #[test]
    fn groups_partition_levels() {
        let reg = LabelRegistry::default();
        let mut seen = vec![0usize; reg.len()];
        for g in 0..reg.groups().len() {
            assert!(!reg.group_levels(g).is_empty());
            for l in reg.group_levels(g) {
                seen[l.index()] += 1;
                assert_eq!(reg.group_of(*l), g);
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn json_round_trip() {
        let reg = LabelRegistry::default();
        let back = LabelRegistry::from_json_str(&reg.to_json_string()).unwrap();
        assert_eq!(reg, back);
        assert_eq!(reg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn rejects_bad_registries() {
        let lvl = |id, name: &str, group: &str| HierLevel {
            id: LevelId(id),
            name: name.into(),
            group: group.into(),
        };
        let err = LabelRegistry::new(vec![lvl(0, "a", "G"), lvl(2, "b", "G")], vec!["G".into()]);
        assert!(err.is_err(), "sparse ids");
        let err = LabelRegistry::new(vec![lvl(0, "a", "G"), lvl(1, "a", "G")], vec!["G".into()]);
        assert!(err.is_err(), "duplicate names");
        let err = LabelRegistry::new(vec![lvl(0, "a", "H")], vec!["G".into()]);
        assert!(err.is_err(), "unknown group");
        let err = LabelRegistry::new(vec![lvl(0, "a", "G")], vec!["G".into(), "H".into()]);
        assert!(err.is_err(), "empty group");
    }
}
