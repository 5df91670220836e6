//! Labeled address pairs built from controlled perturbations.
//!
//! Label rule: a perturbed copy of the same entity (typo, dropped upper
//! level, irrelevant clause, alternate writing) is an exact match (2); a
//! truncated copy, i.e. a strict ancestor, is a partial match (1); an
//! address of a different entity is a non-match (0).

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::address::{address_for_site, essential_level, site_chain, Rendering, Site};
use super::lexicon::{Lexicon, Role, ROOT_CHARS};
use crate::error::{Error, Result};
use crate::registry::LevelId;
use crate::types::{MatchLabel, MatchPair, TaggedAddress};

/// Probability that an element with alternate writings is written with one.
pub const WRITING_VARIATION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairKind {
    Typo,
    DropLevel,
    Redundancy,
    Alias,
    Truncate,
    Distractor,
}

impl PairKind {
    pub const ALL: [PairKind; 6] = [
        PairKind::Typo,
        PairKind::DropLevel,
        PairKind::Redundancy,
        PairKind::Alias,
        PairKind::Truncate,
        PairKind::Distractor,
    ];

    pub fn key(self) -> &'static str {
        match self {
            PairKind::Typo => "typo",
            PairKind::DropLevel => "drop",
            PairKind::Redundancy => "redundancy",
            PairKind::Alias => "alias",
            PairKind::Truncate => "truncate",
            PairKind::Distractor => "distractor",
        }
    }

    pub fn label(self) -> MatchLabel {
        match self {
            PairKind::Truncate => MatchLabel::Partial,
            PairKind::Distractor => MatchLabel::NoMatch,
            _ => MatchLabel::Exact,
        }
    }
}

/// Weights over pair kinds; must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub typo: f64,
    pub drop: f64,
    pub redundancy: f64,
    pub alias: f64,
    pub truncate: f64,
    pub distractor: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            typo: 0.08,
            drop: 0.08,
            redundancy: 0.07,
            alias: 0.12,
            truncate: 0.30,
            distractor: 0.35,
        }
    }
}

impl Mix {
    pub fn weight(&self, kind: PairKind) -> f64 {
        match kind {
            PairKind::Typo => self.typo,
            PairKind::DropLevel => self.drop,
            PairKind::Redundancy => self.redundancy,
            PairKind::Alias => self.alias,
            PairKind::Truncate => self.truncate,
            PairKind::Distractor => self.distractor,
        }
    }

    pub fn weights(&self) -> [f64; 6] {
        PairKind::ALL.map(|k| self.weight(k))
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("mix weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("mix weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Label distribution implied by the weights.
    pub fn label_distribution(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for kind in PairKind::ALL {
            out[kind.label().index()] += self.weight(kind);
        }
        out
    }
}

impl FromStr for Mix {
    type Err = Error;

    /// Parses `typo=0.2,drop=0.2,...`; unspecified kinds get weight 0.
    fn from_str(s: &str) -> Result<Self> {
        let mut mix = Mix {
            typo: 0.0,
            drop: 0.0,
            redundancy: 0.0,
            alias: 0.0,
            truncate: 0.0,
            distractor: 0.0,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad mix entry {part:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad mix weight {v:?}")))?;
            let slot = match k.trim() {
                "typo" => &mut mix.typo,
                "drop" | "drop_level" => &mut mix.drop,
                "redundancy" | "red" => &mut mix.redundancy,
                "alias" => &mut mix.alias,
                "truncate" => &mut mix.truncate,
                "distractor" => &mut mix.distractor,
                other => return Err(Error::Config(format!("unknown mix kind {other:?}"))),
            };
            *slot = v;
        }
        mix.validate()?;
        Ok(mix)
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = PairKind::ALL
            .iter()
            .map(|k| format!("{}={}", k.key(), self.weight(*k)))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Perturbation {
    Typo {
        side: Side,
        level: String,
        token: usize,
        from: String,
        to: String,
    },
    DropLevel {
        side: Side,
        level: String,
    },
    Redundancy {
        side: Side,
        clause: String,
    },
    Alias {
        side: Side,
        level: String,
        from: String,
        to: String,
    },
    Truncate {
        side: Side,
        cut: String,
        kept: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: PairKind,
    pub perturbations: Vec<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_prefix: Option<usize>,
    pub site_a: Site,
    pub site_b: Site,
}

impl Provenance {
    /// Re-derives the gold label from what was done to the pair.
    pub fn derived_label(&self) -> MatchLabel {
        if self.site_a != self.site_b || self.kind == PairKind::Distractor {
            MatchLabel::NoMatch
        } else if self
            .perturbations
            .iter()
            .any(|p| matches!(p, Perturbation::Truncate { .. }))
        {
            MatchLabel::Partial
        } else {
            MatchLabel::Exact
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedPair {
    pub pair: MatchPair,
    pub provenance: Provenance,
    pub gold_a: TaggedAddress,
    pub gold_b: TaggedAddress,
}

/// One JSONL line of a matching corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub a: String,
    pub b: String,
    pub label: MatchLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl From<&GeneratedPair> for PairRecord {
    fn from(g: &GeneratedPair) -> Self {
        PairRecord {
            a: g.pair.a.clone(),
            b: g.pair.b.clone(),
            label: g.pair.label,
            provenance: Some(g.provenance.clone()),
        }
    }
}

impl PairRecord {
    pub fn into_pair(self) -> Result<MatchPair> {
        MatchPair::new(self.a, self.b, self.label)
    }
}

const CLAUSE_TEMPLATES: &[&str] = &[
    "(不要放{}超市)",
    "(或者{}店)",
    "(请放{}门卫)",
    "(不是{}公司)",
    "(送到{}家)",
    "(转{}收)",
];

fn redundancy_clause<R: Rng>(rng: &mut R) -> String {
    let chars: Vec<char> = ROOT_CHARS.chars().collect();
    let root: String = (0..2).map(|_| *chars.choose(rng).unwrap()).collect();
    CLAUSE_TEMPLATES.choose(rng).unwrap().replace("{}", &root)
}

/// Inserts an irrelevant clause, usually at the end of the address.
pub fn add_redundancy<R: Rng>(r: &mut Rendering, rng: &mut R) -> String {
    let clause = redundancy_clause(rng);
    let pos = if rng.gen_bool(0.7) {
        r.pieces.len()
    } else {
        rng.gen_range(1..=r.pieces.len())
    };
    r.insert_clause(pos, &clause);
    clause
}

fn level_name(lex: &Lexicon, level: LevelId) -> String {
    lex.level_name(level).to_string()
}

fn apply_typo<R: Rng>(lex: &Lexicon, r: &mut Rendering, side: Side, rng: &mut R) -> Option<Perturbation> {
    let (level, token, from, to) = r.typo(rng)?;
    Some(Perturbation::Typo {
        side,
        level: level_name(lex, level),
        token,
        from,
        to,
    })
}

fn apply_alias<R: Rng>(lex: &Lexicon, r: &mut Rendering, side: Side, rng: &mut R) -> Option<Perturbation> {
    let candidates: Vec<(LevelId, Vec<String>)> = r
        .pieces
        .iter()
        .filter_map(|p| {
            let level = p.level?;
            let canonical = p.canonical.as_ref()?;
            let alts = lex.aliases_of(canonical);
            if alts.is_empty() {
                return None;
            }
            let writings: Vec<String> = std::iter::once(canonical.clone())
                .chain(alts.iter().cloned())
                .filter(|w| *w != p.text)
                .collect();
            Some((level, writings))
        })
        .collect();
    let (level, writings) = candidates.choose(rng)?;
    let to = writings.choose(rng)?.clone();
    let from = r.rewrite(*level, &to)?;
    Some(Perturbation::Alias {
        side,
        level: level_name(lex, *level),
        from,
        to,
    })
}

fn apply_drop<R: Rng>(
    lex: &Lexicon,
    r: &mut Rendering,
    site: Site,
    side: Side,
    rng: &mut R,
) -> Option<Perturbation> {
    if r.labeled_count() <= 2 {
        return None;
    }
    let essential = essential_level(lex, site);
    let candidates: Vec<LevelId> = r
        .pieces
        .iter()
        .filter_map(|p| p.level)
        .filter(|&l| {
            l != essential
                && matches!(
                    lex.role(l),
                    Role::Prov
                        | Role::City
                        | Role::District
                        | Role::Devzone
                        | Role::Town
                        | Role::Community
                        | Role::VillageGroup
                        | Role::Road
                        | Role::Roadno
                        | Role::Intersection
                        | Role::Distance
                        | Role::Assist
                )
        })
        .collect();
    let level = *candidates.choose(rng)?;
    r.drop_level(level);
    Some(Perturbation::DropLevel {
        side,
        level: level_name(lex, level),
    })
}

fn truncation_cuts(lex: &Lexicon, r: &Rendering) -> Vec<LevelId> {
    let labeled: Vec<LevelId> = r.pieces.iter().filter_map(|p| p.level).collect();
    labeled
        .iter()
        .enumerate()
        .filter(|(i, &l)| {
            *i >= 2
                && matches!(
                    lex.role(l),
                    Role::Road
                        | Role::Roadno
                        | Role::Poi
                        | Role::Subpoi
                        | Role::Houseno
                        | Role::Cellno
                        | Role::Floorno
                        | Role::Roomno
                        | Role::Detail
                )
        })
        .map(|(_, &l)| l)
        .collect()
}

fn apply_noise<R: Rng>(
    lex: &Lexicon,
    a: &mut Rendering,
    b: &mut Rendering,
    rng: &mut R,
) -> Option<Perturbation> {
    let side = if rng.gen_bool(0.5) { Side::A } else { Side::B };
    let r = match side {
        Side::A => a,
        Side::B => b,
    };
    match rng.gen_range(0..3) {
        0 => apply_typo(lex, r, side, rng),
        1 => apply_alias(lex, r, side, rng),
        _ => {
            let clause = add_redundancy(r, rng);
            Some(Perturbation::Redundancy { side, clause })
        }
    }
}

/// Draws one labeled pair. The kind is sampled from `mix`; when the sampled
/// address cannot carry that perturbation a fresh address is drawn.
pub fn gen_pair<R: Rng>(lex: &Lexicon, mix: &Mix, rng: &mut R) -> GeneratedPair {
    let dist = WeightedIndex::new(mix.weights()).expect("validated mix");
    let kind = PairKind::ALL[dist.sample(rng)];
    loop {
        if let Some(pair) = try_pair(lex, kind, rng) {
            return pair;
        }
    }
}

/// Draws one pair of the given kind, or `None` if the sampled address
/// admits no such perturbation.
pub fn try_pair<R: Rng>(lex: &Lexicon, kind: PairKind, rng: &mut R) -> Option<GeneratedPair> {
    let site = super::address::sample_site(lex, rng);
    let canon = address_for_site(lex, site, &[], rng);
    let mut a = Rendering::canonical(&canon);
    a.vary_writing(lex, WRITING_VARIATION, rng);
    let mut b = a.clone();
    let mut perturbations = Vec::new();
    let mut site_b = site;
    let mut shared_prefix = None;
    match kind {
        PairKind::Typo => perturbations.push(apply_typo(lex, &mut b, Side::B, rng)?),
        PairKind::DropLevel => perturbations.push(apply_drop(lex, &mut b, site, Side::B, rng)?),
        PairKind::Redundancy => {
            let clause = add_redundancy(&mut b, rng);
            perturbations.push(Perturbation::Redundancy { side: Side::B, clause });
        }
        PairKind::Alias => perturbations.push(apply_alias(lex, &mut b, Side::B, rng)?),
        PairKind::Truncate => {
            let cuts = truncation_cuts(lex, &a);
            let cut = *cuts.choose(rng)?;
            let side = if rng.gen_bool(0.5) { Side::A } else { Side::B };
            let target = match side {
                Side::A => &mut a,
                Side::B => &mut b,
            };
            let kept = target.truncate_at(cut);
            perturbations.push(Perturbation::Truncate {
                side,
                cut: level_name(lex, cut),
                kept,
            });
            if rng.gen_bool(0.5) {
                perturbations.extend(apply_noise(lex, &mut a, &mut b, rng));
            }
        }
        PairKind::Distractor => {
            let (other, k) = distractor(lex, &canon, rng)?;
            site_b = other.site;
            shared_prefix = Some(k);
            let mut rb = Rendering::canonical(&other);
            rb.vary_writing(lex, WRITING_VARIATION, rng);
            b = rb;
            if rng.gen_bool(0.5) {
                perturbations.extend(apply_noise(lex, &mut a, &mut b, rng));
            }
        }
    }
    let gold_a = a.to_tagged();
    let gold_b = b.to_tagged();
    if gold_a.text.is_empty() || gold_b.text.is_empty() {
        return None;
    }
    let provenance = Provenance {
        kind,
        perturbations,
        shared_prefix,
        site_a: site,
        site_b,
    };
    let label = provenance.derived_label();
    debug_assert_eq!(label, kind.label());
    Some(GeneratedPair {
        pair: MatchPair {
            a: gold_a.text.clone(),
            b: gold_b.text.clone(),
            label,
        },
        provenance,
        gold_a,
        gold_b,
    })
}

/// A different POI entity that shares a prefix of 0 to 3 upper levels with
/// `a`. Returns the address and the number of shared levels.
fn distractor<R: Rng>(
    lex: &Lexicon,
    a: &super::address::CanonicalAddress,
    rng: &mut R,
) -> Option<(super::address::CanonicalAddress, usize)> {
    let poi_l = lex.level_for(Role::Poi)?;
    let road_l = lex.level_for(Role::Road)?;
    let upper = |l: LevelId| {
        matches!(
            lex.role(l),
            Role::Prov | Role::City | Role::District | Role::Devzone | Role::Town | Role::Community
        ) || (l == road_l && matches!(a.site, Site::Poi(_)))
    };
    let leading: Vec<LevelId> = a.levels().take_while(|l| upper(*l)).take(3).collect();
    let chain_a = site_chain(lex, a.site);
    let a_road = chain_a.iter().find(|(l, _)| *l == road_l).map(|x| x.1);
    let mut k = rng.gen_range(0..=3usize).min(leading.len());
    loop {
        let kept = &leading[..k];
        let candidates: Vec<usize> = (0..lex.pool(poi_l).len())
            .filter(|&p| Site::Poi(p) != a.site)
            .filter(|&p| {
                let chain = site_chain(lex, Site::Poi(p));
                let road = chain.iter().find(|(l, _)| *l == road_l).map(|x| x.1);
                if matches!(a.site, Site::Road(_)) && road == a_road {
                    return false;
                }
                kept.iter().all(|l| {
                    let ia = chain_a.iter().find(|(x, _)| x == l).map(|x| x.1);
                    let ib = chain.iter().find(|(x, _)| x == l).map(|x| x.1);
                    ia.is_some() && ia == ib
                })
            })
            .collect();
        if let Some(&p) = candidates.choose(rng) {
            let b = address_for_site(lex, Site::Poi(p), kept, rng);
            return Some((b, k));
        }
        if k == 0 {
            return None;
        }
        k -= 1;
    }
}
