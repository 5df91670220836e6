//! Seeded gazetteer: per-level name pools, alternate writings, and a parent
//! tree (city under province, road under district, POI under road, ...) so
//! that generated addresses are internally consistent.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{LabelRegistry, LevelId};

/// Characters used for the roots of generated names and for typos.
pub const ROOT_CHARS: &str = "安白宝北滨昌长朝城川春大德东丰凤福富广贵国海汉和河恒红宏华惠吉佳嘉建江金锦京景静九康乐丽利莲良林临龙隆鹿罗茂梅美明南宁平浦齐旗青清庆泉仁荣瑞三沙山上尚胜盛石寿顺松泰唐天田通桐万旺威文西仙祥翔新信兴星秀旭阳洋业益银永玉裕元源月云泽兆振正中舟竹紫";

const MIN_POOL: usize = 20;

/// Semantic role of a level inside the generated world. Levels of the
/// registry are mapped to roles by name; unknown names become `Aux`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prov,
    City,
    District,
    Devzone,
    Town,
    Community,
    VillageGroup,
    Road,
    Roadno,
    Intersection,
    Distance,
    Assist,
    Poi,
    Subpoi,
    Houseno,
    Cellno,
    Floorno,
    Roomno,
    Detail,
    Redundant,
    Otherinfo,
    Aux,
}

impl Role {
    pub fn from_level_name(name: &str) -> Role {
        match name {
            "prov" => Role::Prov,
            "city" => Role::City,
            "district" => Role::District,
            "devzone" => Role::Devzone,
            "town" => Role::Town,
            "community" => Role::Community,
            "village_group" => Role::VillageGroup,
            "road" => Role::Road,
            "roadno" => Role::Roadno,
            "intersection" => Role::Intersection,
            "distance" => Role::Distance,
            "assist" => Role::Assist,
            "poi" => Role::Poi,
            "subpoi" => Role::Subpoi,
            "houseno" => Role::Houseno,
            "cellno" => Role::Cellno,
            "floorno" => Role::Floorno,
            "roomno" => Role::Roomno,
            "detail" => Role::Detail,
            "redundant" => Role::Redundant,
            "otherinfo" => Role::Otherinfo,
            _ => Role::Aux,
        }
    }

    /// Role of the gazetteer parent, when names of this role hang in the tree.
    fn parent(self) -> Option<Role> {
        match self {
            Role::City => Some(Role::Prov),
            Role::District => Some(Role::City),
            Role::Devzone | Role::Town | Role::Road => Some(Role::District),
            Role::Community => Some(Role::Town),
            Role::Poi => Some(Role::Road),
            _ => None,
        }
    }
}

const FIXED_ASSIST: &[&str] = &[
    "附近", "旁边", "对面", "隔壁", "东侧", "西侧", "南侧", "北侧", "楼下", "后面", "斜对面", "东门",
    "西门", "南门", "北门", "正门", "边上", "院内", "往东", "往西", "往南", "往北",
];
const FIXED_DETAIL: &[&str] = &[
    "信息科", "收发室", "前台", "门卫室", "财务部", "人事部", "仓库", "快递柜", "档案室", "会议室",
    "办公室", "化验室", "药房", "服务台", "值班室", "机房", "总经理室", "技术部", "销售部", "物业处",
    "传达室", "后勤部", "车间", "保安室",
];
const FIXED_REDUNDANT: &[&str] = &[
    "电话联系", "放门口", "送货上门", "请放前台", "工作日送", "周末勿送", "打电话", "轻拿轻放",
    "放快递柜", "代收点", "勿按门铃", "尽快送达", "到了电话", "放物业", "放保安室", "下午送", "上午送",
    "晚上送", "联系本人", "敲门即可",
];
const FIXED_OTHERINFO: &[&str] = &[
    "收件人", "王先生", "李女士", "张先生", "刘女士", "陈先生", "杨女士", "赵先生", "黄女士", "周先生",
    "吴女士", "徐先生", "孙女士", "胡先生", "朱女士", "高先生", "林女士", "何先生", "郭女士", "马先生",
];
const FIXED_SUBPOI: &[&str] = &[
    "A座", "B座", "C座", "D座", "E座", "F座", "G座", "H座", "东区", "西区", "南区", "北区", "中区",
    "一期", "二期", "三期", "四期", "五期", "住院部", "门诊部", "综合楼", "办公楼", "实验楼", "宿舍楼",
    "食堂",
];

const POI_SUFFIXES: &[&str] = &[
    "超市", "公司", "医院", "小区", "公馆", "大厦", "广场", "花园", "学校", "酒店", "中心", "商场",
    "饭店", "银行",
];

fn pool_size(role: Role) -> usize {
    match role {
        Role::Prov => 20,
        Role::City => 30,
        Role::District => 60,
        Role::Devzone => 30,
        Role::Town => 120,
        Role::Community => 160,
        Role::Road => 120,
        Role::Poi => 240,
        Role::Intersection => 30,
        _ => 30,
    }
}

fn root(rng: &mut ChaCha8Rng, chars: &[char], len: usize) -> String {
    (0..len).map(|_| *chars.choose(rng).unwrap()).collect()
}

/// Generates `n` unique names from `make`, retrying on collisions.
fn unique_names(
    rng: &mut ChaCha8Rng,
    n: usize,
    mut make: impl FnMut(&mut ChaCha8Rng) -> String,
) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        assert!(attempts < n * 1000, "name space exhausted");
        let name = make(rng);
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn names_for(role: Role, rng: &mut ChaCha8Rng, chars: &[char]) -> Vec<String> {
    let n = pool_size(role);
    let suffixed = |suffixes: &'static [&'static str]| {
        move |rng: &mut ChaCha8Rng| format!("{}{}", root(rng, chars, 2), suffixes.choose(rng).unwrap())
    };
    match role {
        Role::Prov => unique_names(rng, n, suffixed(&["省"])),
        Role::City => unique_names(rng, n, suffixed(&["市"])),
        Role::District => unique_names(rng, n, suffixed(&["区", "县"])),
        Role::Devzone => unique_names(rng, n, suffixed(&["开发区", "工业园", "高新区"])),
        Role::Town => unique_names(rng, n, suffixed(&["镇", "街道", "乡"])),
        Role::Community => unique_names(rng, n, suffixed(&["社区", "村"])),
        Role::Road => unique_names(rng, n, suffixed(&["路", "大道", "街", "巷"])),
        Role::Poi => unique_names(rng, n, |rng| {
            let len = if rng.gen_bool(0.7) { 2 } else { 3 };
            format!("{}{}", root(rng, chars, len), POI_SUFFIXES.choose(rng).unwrap())
        }),
        Role::Intersection => unique_names(rng, n, |rng| format!("与{}路口", root(rng, chars, 2))),
        Role::VillageGroup => (1..=n).map(|i| format!("{i}组")).collect(),
        Role::Roadno => (1..=300).map(|i| format!("{i}号")).collect(),
        Role::Distance => ["东", "西", "南", "北"]
            .iter()
            .flat_map(|d| (1..=10).map(move |k| format!("{d}{}米", k * 50)))
            .collect(),
        Role::Houseno => (1..=40)
            .flat_map(|i| [format!("{i}栋"), format!("{i}幢"), format!("{i}号楼")])
            .collect(),
        Role::Cellno => (1..=24).map(|i| format!("{i}单元")).collect(),
        Role::Floorno => (1..=33).flat_map(|i| [format!("{i}楼"), format!("{i}层")]).collect(),
        Role::Roomno => (1..=25)
            .flat_map(|f| (1..=6).map(move |r| format!("{f}{r:02}室")))
            .collect(),
        Role::Subpoi => FIXED_SUBPOI.iter().map(|s| s.to_string()).collect(),
        Role::Assist => FIXED_ASSIST.iter().map(|s| s.to_string()).collect(),
        Role::Detail => FIXED_DETAIL.iter().map(|s| s.to_string()).collect(),
        Role::Redundant => FIXED_REDUNDANT.iter().map(|s| s.to_string()).collect(),
        Role::Otherinfo => FIXED_OTHERINFO.iter().map(|s| s.to_string()).collect(),
        Role::Aux => unique_names(rng, n, suffixed(&["地"])),
    }
}

/// Name pools, alternate writings and the gazetteer tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub registry_fingerprint: String,
    pub level_names: Vec<String>,
    pub roles: Vec<Role>,
    /// Names per level id.
    pub pools: Vec<Vec<String>>,
    /// Canonical name -> alternate writings.
    pub aliases: BTreeMap<String, Vec<String>>,
    /// For levels that hang in the tree: index into the parent level's pool,
    /// one entry per name. Empty for free-standing levels.
    pub parents: Vec<Vec<usize>>,
}

impl Lexicon {
    pub fn level_for(&self, role: Role) -> Option<LevelId> {
        self.roles.iter().position(|&r| r == role).map(|i| LevelId(i as u8))
    }

    pub fn pool(&self, level: LevelId) -> &[String] {
        &self.pools[level.index()]
    }

    pub fn level_name(&self, level: LevelId) -> &str {
        &self.level_names[level.index()]
    }

    pub fn role(&self, level: LevelId) -> Role {
        self.roles[level.index()]
    }

    pub fn aliases_of(&self, canonical: &str) -> &[String] {
        self.aliases.get(canonical).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Children (pool indices) of `parent_idx` at `child` level.
    pub fn children(&self, child: LevelId, parent_idx: usize) -> Vec<usize> {
        self.parents[child.index()]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == parent_idx)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parent(&self, level: LevelId, idx: usize) -> Option<usize> {
        self.parents[level.index()].get(idx).copied()
    }

    pub fn validate(&self) -> Result<()> {
        let mut alias_owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, pool) in self.pools.iter().enumerate() {
            if pool.len() < MIN_POOL {
                return Err(Error::InvalidInput(format!("level {i} has only {} names", pool.len())));
            }
            let unique: BTreeSet<&String> = pool.iter().collect();
            if unique.len() != pool.len() {
                return Err(Error::InvalidInput(format!("level {i} has duplicate names")));
            }
        }
        for (canonical, alts) in &self.aliases {
            for alt in alts {
                if let Some(prev) = alias_owner.insert(alt, canonical) {
                    return Err(Error::InvalidInput(format!(
                        "alias {alt} maps to both {prev} and {canonical}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Builds the lexicon for `registry`, deterministically from `seed`.
pub fn gen_lexicon(seed: u64, registry: &LabelRegistry) -> Lexicon {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chars: Vec<char> = ROOT_CHARS.chars().collect();
    let roles: Vec<Role> = registry.levels().iter().map(|l| Role::from_level_name(&l.name)).collect();
    let pools: Vec<Vec<String>> = roles.iter().map(|&r| names_for(r, &mut rng, &chars)).collect();

    let level_of = |role: Role| roles.iter().position(|&r| r == role);
    let mut parents = vec![Vec::new(); roles.len()];
    for (i, role) in roles.iter().enumerate() {
        if let Some(p) = role.parent().and_then(level_of) {
            let n_parent = pools[p].len();
            // every parent gets at least one child when the child pool allows
            let mut assignment: Vec<usize> = (0..pools[i].len()).map(|k| k % n_parent).collect();
            assignment.shuffle(&mut rng);
            parents[i] = assignment;
        }
    }

    let mut taken: HashSet<String> = pools.iter().flatten().cloned().collect();
    let mut aliases = BTreeMap::new();
    for (i, role) in roles.iter().enumerate() {
        for name in &pools[i] {
            let alts = make_aliases(*role, name, &mut rng, &chars, &mut taken);
            if !alts.is_empty() {
                aliases.insert(name.clone(), alts);
            }
        }
    }

    Lexicon {
        registry_fingerprint: registry.fingerprint(),
        level_names: registry.levels().iter().map(|l| l.name.clone()).collect(),
        roles,
        pools,
        aliases,
        parents,
    }
}

fn split_suffix<'a>(name: &'a str, suffixes: &[&str]) -> Option<(&'a str, &'a str)> {
    suffixes
        .iter()
        .find_map(|s| name.strip_suffix(s).map(|root| (root, &name[root.len()..])))
}

fn make_aliases(
    role: Role,
    name: &str,
    rng: &mut ChaCha8Rng,
    chars: &[char],
    taken: &mut HashSet<String>,
) -> Vec<String> {
    let mut claim = |alt: String, out: &mut Vec<String>| {
        if alt.chars().count() >= 2 && taken.insert(alt.clone()) {
            out.push(alt);
        }
    };
    let mut out = Vec::new();
    match role {
        Role::Poi => {
            if !rng.gen_bool(0.5) {
                return out;
            }
            let (root_part, suffix) = split_suffix(name, POI_SUFFIXES).expect("poi names carry a suffix");
            // a shortened or re-suffixed writing
            let variant = if rng.gen_bool(0.5) {
                root_part.to_string()
            } else {
                let other = POI_SUFFIXES.iter().filter(|s| **s != suffix).collect::<Vec<_>>();
                format!("{root_part}{}", other.choose(rng).unwrap())
            };
            claim(variant, &mut out);
            // a colloquial name unrelated in spelling
            for _ in 0..20 {
                let before = out.len();
                claim(format!("{}{suffix}", root(rng, chars, 2)), &mut out);
                if out.len() > before {
                    break;
                }
            }
            if rng.gen_bool(0.3) {
                for _ in 0..20 {
                    let before = out.len();
                    claim(root(rng, chars, 3), &mut out);
                    if out.len() > before {
                        break;
                    }
                }
            }
        }
        Role::Road => {
            if rng.gen_bool(0.3) {
                if let Some((root_part, suffix)) = split_suffix(name, &["大道", "路", "街", "巷"]) {
                    let alt = if suffix == "路" {
                        format!("{root_part}公路")
                    } else {
                        format!("{root_part}路")
                    };
                    claim(alt, &mut out);
                }
            }
        }
        Role::City | Role::District
            if rng.gen_bool(0.4) => {
                let root_part = name.trim_end_matches(['市', '区', '县']);
                claim(root_part.to_string(), &mut out);
            }
        _ => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let reg = LabelRegistry::default();
        let a = serde_json::to_string(&gen_lexicon(1, &reg)).unwrap();
        let b = serde_json::to_string(&gen_lexicon(1, &reg)).unwrap();
        assert_eq!(a, b);
        let c = gen_lexicon(2, &reg);
        let a = gen_lexicon(1, &reg);
        let differs = a.pools.iter().zip(&c.pools).any(|(x, y)| x != y);
        assert!(differs);
    }

    #[test]
    fn pools_meet_postconditions() {
        let reg = LabelRegistry::default();
        let lex = gen_lexicon(3, &reg);
        lex.validate().unwrap();
        for pool in &lex.pools {
            assert!(pool.len() >= MIN_POOL);
            for name in pool {
                let n = name.chars().count();
                assert!((2..=6).contains(&n), "{name}");
            }
        }
        for alts in lex.aliases.values() {
            for alt in alts {
                let n = alt.chars().count();
                assert!((2..=6).contains(&n), "{alt}");
            }
        }
    }

    #[test]
    fn poi_group_aliases_are_common() {
        let reg = LabelRegistry::default();
        let lex = gen_lexicon(4, &reg);
        let poi_group = reg.group_index("POI").unwrap();
        let mut names = 0;
        let mut with_two = 0;
        for level in reg.group_levels(poi_group) {
            for name in lex.pool(*level) {
                names += 1;
                if lex.aliases_of(name).len() >= 2 {
                    with_two += 1;
                }
            }
        }
        assert!(with_two as f64 >= 0.3 * names as f64, "{with_two}/{names}");
    }

    #[test]
    fn tree_links_are_in_range() {
        let reg = LabelRegistry::default();
        let lex = gen_lexicon(5, &reg);
        let poi = lex.level_for(Role::Poi).unwrap();
        let road = lex.level_for(Role::Road).unwrap();
        assert_eq!(lex.parents[poi.index()].len(), lex.pool(poi).len());
        for &p in &lex.parents[poi.index()] {
            assert!(p < lex.pool(road).len());
        }
        // every road has at least one poi
        for r in 0..lex.pool(road).len() {
            assert!(!lex.children(poi, r).is_empty());
        }
    }
}
