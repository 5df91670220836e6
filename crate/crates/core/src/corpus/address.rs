//! Canonical addresses sampled from the gazetteer, and their written forms.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, Role, ROOT_CHARS};
use crate::error::{Error, Result};
use crate::registry::LevelId;
use crate::types::{tokenize, TaggedAddress};

pub const MIN_LEVELS: usize = 3;
pub const MAX_LEVELS: usize = 10;

/// The entity an address ultimately points at: a POI, or a bare road
/// address when no POI is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Poi(usize),
    Road(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub level: LevelId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalAddress {
    pub site: Site,
    /// Present elements, sorted by level.
    pub elements: Vec<Element>,
}

impl CanonicalAddress {
    pub fn text(&self) -> String {
        self.elements.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn get(&self, level: LevelId) -> Option<&str> {
        self.elements
            .iter()
            .find(|e| e.level == level)
            .map(|e| e.name.as_str())
    }

    pub fn levels(&self) -> impl Iterator<Item = LevelId> + '_ {
        self.elements.iter().map(|e| e.level)
    }

    pub fn to_tagged(&self) -> TaggedAddress {
        Rendering::canonical(self).to_tagged()
    }
}

/// A written address: labeled element pieces (possibly using alternate
/// spellings or typos) interleaved with unlabeled clauses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendering {
    pub pieces: Vec<Piece>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    pub level: Option<LevelId>,
    /// Canonical name for labeled pieces.
    pub canonical: Option<String>,
}

impl Rendering {
    pub fn canonical(addr: &CanonicalAddress) -> Self {
        Rendering {
            pieces: addr
                .elements
                .iter()
                .map(|e| Piece {
                    text: e.name.clone(),
                    level: Some(e.level),
                    canonical: Some(e.name.clone()),
                })
                .collect(),
        }
    }

    pub fn text(&self) -> String {
        self.pieces.iter().map(|p| p.text.as_str()).collect()
    }

    pub fn to_tagged(&self) -> TaggedAddress {
        let pieces: Vec<(&str, Option<LevelId>)> =
            self.pieces.iter().map(|p| (p.text.as_str(), p.level)).collect();
        TaggedAddress::from_pieces(&pieces).expect("generated pieces align with graphemes")
    }

    pub fn labeled_count(&self) -> usize {
        self.pieces.iter().filter(|p| p.level.is_some()).count()
    }

    pub fn position_of(&self, level: LevelId) -> Option<usize> {
        self.pieces.iter().position(|p| p.level == Some(level))
    }

    /// Rewrites each element that has alternate writings with probability `p`.
    pub fn vary_writing<R: Rng>(&mut self, lex: &Lexicon, p: f64, rng: &mut R) {
        for piece in &mut self.pieces {
            let Some(canonical) = &piece.canonical else { continue };
            let alts = lex.aliases_of(canonical);
            if !alts.is_empty() && rng.gen_bool(p) {
                piece.text = alts.choose(rng).unwrap().clone();
            }
        }
    }

    /// Replaces one name character of one element by a different one.
    /// Returns (level, token index in the address, old, new).
    pub fn typo<R: Rng>(&mut self, rng: &mut R) -> Option<(LevelId, usize, String, String)> {
        let pool: Vec<char> = ROOT_CHARS.chars().collect();
        let mut candidates = Vec::new();
        let mut offset = 0;
        for (pi, piece) in self.pieces.iter().enumerate() {
            let tokens = tokenize(&piece.text);
            if piece.level.is_some() && tokens.len() >= 2 {
                for (ti, t) in tokens.iter().enumerate() {
                    if t.text.chars().count() == 1 && pool.contains(&t.text.chars().next().unwrap()) {
                        candidates.push((pi, ti, offset + ti));
                    }
                }
            }
            offset += tokens.len();
        }
        let &(pi, ti, global) = candidates.choose(rng)?;
        let piece = &mut self.pieces[pi];
        let mut tokens: Vec<String> = tokenize(&piece.text).into_iter().map(|t| t.text).collect();
        let old = tokens[ti].clone();
        let new = loop {
            let c = pool.choose(rng).unwrap().to_string();
            if c != old {
                break c;
            }
        };
        tokens[ti] = new.clone();
        piece.text = tokens.concat();
        Some((piece.level.unwrap(), global, old, new))
    }

    pub fn drop_level(&mut self, level: LevelId) -> bool {
        match self.position_of(level) {
            Some(i) => {
                self.pieces.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn insert_clause(&mut self, position: usize, clause: &str) {
        let position = position.min(self.pieces.len());
        self.pieces.insert(
            position,
            Piece {
                text: clause.to_string(),
                level: None,
                canonical: None,
            },
        );
    }

    /// Keeps only the pieces before the element at `cut`; returns the number
    /// of labeled elements kept.
    pub fn truncate_at(&mut self, cut: LevelId) -> usize {
        if let Some(i) = self.position_of(cut) {
            self.pieces.truncate(i);
        }
        self.labeled_count()
    }

    pub fn rewrite(&mut self, level: LevelId, text: &str) -> Option<String> {
        let i = self.position_of(level)?;
        Some(std::mem::replace(&mut self.pieces[i].text, text.to_string()))
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn pick_child(lex: &Lexicon, child: Option<LevelId>, parent_idx: usize, key: u64) -> Option<usize> {
    let child = child?;
    let children = lex.children(child, parent_idx);
    if children.is_empty() {
        None
    } else {
        Some(children[(splitmix(key) % children.len() as u64) as usize])
    }
}

/// Fixed upper chain of a site, as (level, pool index) pairs sorted by level.
pub fn site_chain(lex: &Lexicon, site: Site) -> Vec<(LevelId, usize)> {
    let lv = |r| lex.level_for(r);
    let road_l = lv(Role::Road).expect("road level");
    let mut chain = Vec::new();
    let (road, key) = match site {
        Site::Poi(p) => {
            let poi_l = lv(Role::Poi).expect("poi level");
            chain.push((poi_l, p));
            (lex.parent(poi_l, p).expect("poi has a road"), (p as u64) << 1)
        }
        Site::Road(r) => (r, ((r as u64) << 1) | 1),
    };
    chain.push((road_l, road));
    let district_l = lv(Role::District).expect("district level");
    let district = lex.parent(road_l, road).expect("road has a district");
    chain.push((district_l, district));
    let city_l = lv(Role::City).expect("city level");
    let city = lex.parent(district_l, district).expect("district has a city");
    chain.push((city_l, city));
    let prov_l = lv(Role::Prov).expect("prov level");
    chain.push((prov_l, lex.parent(city_l, city).expect("city has a province")));

    let town = pick_child(lex, lv(Role::Town), district, key ^ 0x11);
    if let Some(t) = town {
        chain.push((lv(Role::Town).unwrap(), t));
        if let Some(c) = pick_child(lex, lv(Role::Community), t, key ^ 0x22) {
            chain.push((lv(Role::Community).unwrap(), c));
        }
    }
    if let Some(d) = pick_child(lex, lv(Role::Devzone), district, key ^ 0x33) {
        chain.push((lv(Role::Devzone).unwrap(), d));
    }
    for (role, salt) in [(Role::VillageGroup, 0x44u64), (Role::Roadno, 0x55)] {
        if let Some(l) = lv(role) {
            let n = lex.pool(l).len() as u64;
            chain.push((l, (splitmix(key ^ salt) % n) as usize));
        }
    }
    chain.sort();
    chain
}

fn presence_probability(role: Role) -> f64 {
    match role {
        Role::Prov => 0.45,
        Role::City => 0.6,
        Role::District => 0.7,
        Role::Devzone => 0.12,
        Role::Town => 0.35,
        Role::Community => 0.25,
        Role::VillageGroup => 0.09,
        Role::Road => 0.85,
        Role::Roadno => 0.6,
        Role::Intersection | Role::Distance | Role::Assist => 0.09,
        Role::Poi => 1.0,
        Role::Subpoi => 0.2,
        Role::Houseno => 0.35,
        Role::Cellno | Role::Floorno => 0.2,
        Role::Roomno => 0.25,
        Role::Detail => 0.13,
        Role::Redundant | Role::Otherinfo => 0.09,
        Role::Aux => 0.1,
    }
}

/// Levels that must not be removed from an address of this site without
/// changing the entity it denotes.
pub fn essential_level(lex: &Lexicon, site: Site) -> LevelId {
    match site {
        Site::Poi(_) => lex.level_for(Role::Poi).unwrap(),
        Site::Road(_) => lex.level_for(Role::Road).unwrap(),
    }
}

/// Checks that the lexicon's registry defines the levels the gazetteer needs.
pub fn check_generatable(lex: &Lexicon) -> Result<()> {
    for role in [Role::Prov, Role::City, Role::District, Role::Road, Role::Poi] {
        if lex.level_for(role).is_none() {
            return Err(Error::Config(format!(
                "registry has no {role:?} level; the corpus generator needs it"
            )));
        }
    }
    Ok(())
}

pub fn sample_site<R: Rng>(lex: &Lexicon, rng: &mut R) -> Site {
    if rng.gen_bool(0.8) {
        Site::Poi(rng.gen_range(0..lex.pool(lex.level_for(Role::Poi).unwrap()).len()))
    } else {
        Site::Road(rng.gen_range(0..lex.pool(lex.level_for(Role::Road).unwrap()).len()))
    }
}

/// Samples which levels are present and names them. `forced` levels are
/// always kept (used by distractor generation).
pub fn address_for_site<R: Rng>(
    lex: &Lexicon,
    site: Site,
    forced: &[LevelId],
    rng: &mut R,
) -> CanonicalAddress {
    let chain = site_chain(lex, site);
    let essential = essential_level(lex, site);
    let road_l = lex.level_for(Role::Road).unwrap();
    let roadno_l = lex.level_for(Role::Roadno);
    let mut chosen: Vec<(LevelId, usize)> = Vec::new();
    for (i, role) in lex.roles.iter().enumerate() {
        let level = LevelId(i as u8);
        let mut p = presence_probability(*role);
        if level == essential || forced.contains(&level) {
            p = 1.0;
        } else if matches!(site, Site::Road(_)) && Some(level) == roadno_l {
            p = 0.9;
        } else if matches!(site, Site::Road(_)) && *role == Role::Poi {
            p = 0.0;
        }
        if !rng.gen_bool(p) {
            continue;
        }
        let idx = match chain.iter().find(|(l, _)| *l == level) {
            Some(&(_, idx)) => idx,
            None if role_is_chained(*role) => continue,
            None => rng.gen_range(0..lex.pool(level).len()),
        };
        chosen.push((level, idx));
    }
    if chosen.len() > MAX_LEVELS {
        let mut removable: Vec<LevelId> = chosen
            .iter()
            .map(|(l, _)| *l)
            .filter(|l| *l != essential && !forced.contains(l))
            .collect();
        removable.shuffle(rng);
        let excess = chosen.len() - MAX_LEVELS;
        let drop: Vec<LevelId> = removable.into_iter().take(excess).collect();
        chosen.retain(|(l, _)| !drop.contains(l));
    }
    if chosen.len() < MIN_LEVELS {
        let fill_order = [Role::District, Role::City, Role::Road, Role::Prov, Role::Town];
        for role in fill_order {
            if chosen.len() >= MIN_LEVELS {
                break;
            }
            let Some(level) = lex.level_for(role) else { continue };
            if chosen.iter().any(|(l, _)| *l == level) {
                continue;
            }
            if let Some(&(_, idx)) = chain.iter().find(|(l, _)| *l == level) {
                chosen.push((level, idx));
            }
        }
        chosen.sort();
    }
    debug_assert!(chosen.iter().any(|(l, _)| *l == essential || *l == road_l));
    CanonicalAddress {
        site,
        elements: chosen
            .into_iter()
            .map(|(level, idx)| Element {
                level,
                name: lex.pool(level)[idx].clone(),
            })
            .collect(),
    }
}

fn role_is_chained(role: Role) -> bool {
    matches!(
        role,
        Role::Prov
            | Role::City
            | Role::District
            | Role::Devzone
            | Role::Town
            | Role::Community
            | Role::Road
            | Role::Poi
    )
}

/// Samples one clean address: the canonical form and its gold tagging.
pub fn gen_address<R: Rng>(lex: &Lexicon, rng: &mut R) -> (CanonicalAddress, TaggedAddress) {
    let site = sample_site(lex, rng);
    let addr = address_for_site(lex, site, &[], rng);
    let tagged = addr.to_tagged();
    (addr, tagged)
}
