//! Shared test helpers: a random multi-file workspace generator and a
//! brute-force substitution oracle that never touches the resolver.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use dsi::ConfigValue;
use indexmap::IndexMap;
use rand::Rng;
use rand::seq::SliceRandom;

pub const DEFAULTS: usize = 0;
pub const USER: usize = 1;
pub const OUT: usize = 2;

/// A generated workspace: one root-shaped tree per layer.
#[derive(Debug, Clone)]
pub struct GeneratedWorkspace {
    pub layers: [ConfigValue; 3],
    pub namespaces: Vec<String>,
    pub with_out: Vec<String>,
    pub references: usize,
    pub cyclic: bool,
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    keys_left: usize,
}

fn empty() -> ConfigValue {
    ConfigValue::empty_map()
}

fn leaf<R: Rng>(rng: &mut R) -> ConfigValue {
    match rng.gen_range(0..5) {
        0 => ConfigValue::Int(rng.gen_range(-1000..100_000)),
        1 => ConfigValue::Bool(rng.gen_bool(0.5)),
        2 => ConfigValue::Float(rng.gen_range(-500..500) as f64 / 8.0),
        _ => {
            let len = rng.gen_range(1..8);
            ConfigValue::String(
                (0..len)
                    .map(|_| (b'a' + rng.gen_range(0..26)) as char)
                    .collect(),
            )
        }
    }
}

fn layers_in(mask: u8) -> impl Iterator<Item = usize> {
    (0..3).filter(move |l| mask & (1 << l) != 0)
}

impl<R: Rng> Gen<'_, R> {
    fn subset(&mut self, mask: u8) -> u8 {
        let members: Vec<usize> = layers_in(mask).collect();
        loop {
            let mut m = 0u8;
            for l in &members {
                if self.rng.gen_bool(0.6) {
                    m |= 1 << l;
                }
            }
            if m != 0 {
                return m;
            }
        }
    }

    /// One node present in every layer of `mask`; `whole` forbids
    /// splitting descendants across layers (inside sequences).
    fn node(&mut self, depth: usize, mask: u8, whole: bool) -> [Option<ConfigValue>; 3] {
        let mut out: [Option<ConfigValue>; 3] = [None, None, None];
        let choice = if depth >= 8 || self.keys_left == 0 {
            0
        } else {
            self.rng.gen_range(0..4)
        };
        match choice {
            0 | 1 => {
                for l in layers_in(mask) {
                    out[l] = Some(leaf(self.rng));
                }
            }
            2 => {
                for l in layers_in(mask) {
                    out[l] = Some(empty());
                }
                let n = self.rng.gen_range(1..4).min(self.keys_left.max(1));
                for i in 0..n {
                    self.keys_left = self.keys_left.saturating_sub(1);
                    let child_mask = if whole { mask } else { self.subset(mask) };
                    let child = self.node(depth + 1, child_mask, whole);
                    for l in 0..3 {
                        if let (Some(ConfigValue::Map(m)), Some(c)) = (&mut out[l], &child[l]) {
                            m.insert(format!("k{i}"), c.clone());
                        }
                    }
                }
            }
            _ => {
                for l in layers_in(mask) {
                    out[l] = Some(ConfigValue::Seq(Vec::new()));
                }
                let n = self.rng.gen_range(1..4);
                for _ in 0..n {
                    self.keys_left = self.keys_left.saturating_sub(1);
                    let child = self.node(depth + 1, mask, true);
                    for l in 0..3 {
                        if let (Some(ConfigValue::Seq(s)), Some(c)) = (&mut out[l], &child[l]) {
                            s.push(c.clone());
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn set_at(tree: &mut ConfigValue, path: &[String], value: ConfigValue) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = tree;
    for seg in parents {
        cur = match cur {
            ConfigValue::Map(m) => m.get_mut(seg).expect("path exists"),
            ConfigValue::Seq(s) => &mut s[seg.parse::<usize>().unwrap()],
            _ => panic!("bad path"),
        };
    }
    match cur {
        ConfigValue::Map(m) => {
            m.insert(last.clone(), value);
        }
        ConfigValue::Seq(s) => s[last.parse::<usize>().unwrap()] = value,
        _ => panic!("bad path"),
    }
}

/// Leaves of one layer, keyed by path segments.
pub fn leaves(tree: &ConfigValue) -> Vec<(Vec<String>, ConfigValue)> {
    fn walk(v: &ConfigValue, at: &mut Vec<String>, out: &mut Vec<(Vec<String>, ConfigValue)>) {
        match v {
            ConfigValue::Map(m) if !m.is_empty() => {
                for (k, c) in m {
                    at.push(k.clone());
                    walk(c, at, out);
                    at.pop();
                }
            }
            ConfigValue::Seq(s) if !s.is_empty() => {
                for (i, c) in s.iter().enumerate() {
                    at.push(i.to_string());
                    walk(c, at, out);
                    at.pop();
                }
            }
            _ => {
                if !at.is_empty() {
                    out.push((at.clone(), v.clone()));
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, &mut Vec::new(), &mut out);
    out
}

/// Visible raw leaves: the highest layer wins per path.
pub fn visible(layers: &[ConfigValue; 3]) -> BTreeMap<Vec<String>, (usize, ConfigValue)> {
    let mut flat = BTreeMap::new();
    for layer in [DEFAULTS, USER, OUT] {
        for (path, v) in leaves(&layers[layer]) {
            flat.insert(path, (layer, v));
        }
    }
    // An empty mapping in one layer is overlaid by children in another.
    let interior: Vec<Vec<String>> = flat
        .keys()
        .filter(|p| flat.keys().any(|q| q.len() > p.len() && q.starts_with(p)))
        .cloned()
        .collect();
    for p in interior {
        flat.remove(&p);
    }
    flat
}

fn reference_text<R: Rng>(rng: &mut R, targets: &[Vec<String>]) -> String {
    if targets.len() == 1 && rng.gen_bool(0.5) {
        return format!("${{{}}}", targets[0].join("."));
    }
    let mut text = String::from("s");
    for t in targets {
        text.push_str(&format!("-${{{}}}", t.join(".")));
    }
    text
}

/// A random workspace with at most 6 files, 200 keys, 30 acyclic
/// references and depth 8; `cyclic` adds one reference cycle on top.
pub fn generate<R: Rng>(rng: &mut R, cyclic: bool) -> GeneratedWorkspace {
    loop {
        let ws = generate_once(rng, cyclic);
        if total_keys(&ws.layers) <= 200 {
            return ws;
        }
    }
}

fn generate_once<R: Rng>(rng: &mut R, cyclic: bool) -> GeneratedWorkspace {
    let n_files = rng.gen_range(1..=6);
    let mut layers = [empty(), empty(), empty()];
    let mut namespaces = Vec::new();
    let mut with_out = Vec::new();
    let mut files = 0;
    let mut g = Gen {
        rng,
        keys_left: 200,
    };
    let mut ns_index = 0;
    while files < n_files {
        let name = format!("ns{ns_index}");
        ns_index += 1;
        let has_out = files + 1 < n_files && g.rng.gen_bool(0.4);
        files += if has_out { 2 } else { 1 };
        let mask = (1 << USER) | if g.rng.gen_bool(0.5) { 1 << DEFAULTS } else { 0 };
        let budget = g.keys_left / 2;
        g.keys_left = budget.max(4);
        let mut node: [Option<ConfigValue>; 3] = [None, None, None];
        for l in layers_in(mask) {
            node[l] = Some(empty());
        }
        let n = g.rng.gen_range(1..5);
        for i in 0..n {
            let child_mask = g.subset(mask);
            let child = g.node(1, child_mask, false);
            for l in 0..3 {
                if let (Some(ConfigValue::Map(m)), Some(c)) = (&mut node[l], &child[l]) {
                    m.insert(format!("k{i}"), c.clone());
                }
            }
        }
        if has_out {
            let out_mask = (1 << OUT) | g.subset(mask);
            node[OUT] = Some(empty());
            let child = g.node(1, out_mask, false);
            let child = match &child[OUT] {
                Some(ConfigValue::Map(_)) => child,
                _ => {
                    // Out-files are mappings; wrap the generated node.
                    let mut wrapped: [Option<ConfigValue>; 3] = [None, None, None];
                    for l in layers_in(out_mask) {
                        let mut m = IndexMap::new();
                        m.insert("v".to_owned(), child[l].clone().unwrap());
                        wrapped[l] = Some(ConfigValue::Map(m));
                    }
                    wrapped
                }
            };
            for l in 0..3 {
                if let Some(c) = &child[l] {
                    let slot = node[l].get_or_insert_with(empty);
                    slot.as_map_mut().unwrap().insert("out".into(), c.clone());
                }
            }
            with_out.push(name.clone());
        }
        for l in 0..3 {
            if let Some(v) = node[l].take() {
                layers[l].as_map_mut().unwrap().insert(name.clone(), v);
            }
        }
        g.keys_left = 200usize.saturating_sub(total_keys(&layers)).max(1);
        namespaces.push(name);
    }

    // Turn visible user/default leaves into references, targets earlier in a
    // random order so the graph stays acyclic.
    let vis = visible(&layers);
    let mut order: Vec<Vec<String>> = vis
        .iter()
        .filter(|(_, (layer, v))| *layer != OUT && v.is_scalar())
        .map(|(p, _)| p.clone())
        .collect();
    let all_visible: Vec<Vec<String>> = vis.keys().cloned().collect();
    order.shuffle(rng);
    let max_refs = rng.gen_range(0..=30usize);
    let mut references = 0;
    let mut ref_slots = Vec::new();
    for i in 1..order.len() {
        if references >= max_refs {
            break;
        }
        if !rng.gen_bool(0.5) {
            continue;
        }
        let earlier: Vec<Vec<String>> = order[..i]
            .iter()
            .cloned()
            .chain(all_visible.iter().filter(|p| vis[*p].0 == OUT && vis[*p].1.is_scalar()).cloned())
            .collect();
        let k = rng.gen_range(1..=2);
        let targets: Vec<Vec<String>> = (0..k)
            .map(|_| earlier[rng.gen_range(0..earlier.len())].clone())
            .collect();
        let text = reference_text(rng, &targets);
        let layer = vis[&order[i]].0;
        set_at(&mut layers[layer], &order[i], ConfigValue::String(text));
        ref_slots.push(order[i].clone());
        references += 1;
    }

    let mut made_cycle = false;
    if cyclic && order.len() >= 2 {
        let k = rng.gen_range(1..=order.len().min(4));
        let mut members: Vec<Vec<String>> = order.clone();
        members.shuffle(rng);
        members.truncate(k);
        for (j, member) in members.iter().enumerate() {
            let next = members[(j + 1) % members.len()].clone();
            let text = reference_text(rng, &[next]);
            let layer = vis[member].0;
            set_at(&mut layers[layer], member, ConfigValue::String(text));
        }
        made_cycle = true;
    }

    GeneratedWorkspace {
        layers,
        namespaces,
        with_out,
        references,
        cyclic: made_cycle,
    }
}

fn total_keys(layers: &[ConfigValue; 3]) -> usize {
    fn count(v: &ConfigValue) -> usize {
        match v {
            ConfigValue::Map(m) => m.len() + m.values().map(count).sum::<usize>(),
            ConfigValue::Seq(s) => s.len() + s.iter().map(count).sum::<usize>(),
            _ => 0,
        }
    }
    layers.iter().map(count).sum()
}

fn yaml_text(v: &ConfigValue) -> String {
    serde_yaml::to_string(&v.to_yaml()).unwrap()
}

impl GeneratedWorkspace {
    /// Writes user and out files; the defaults tree is returned for
    /// `ConfigRoot::load`.
    pub fn write(&self, dir: &Path) -> ConfigValue {
        for ns in &self.namespaces {
            if let Some(tree) = self.layers[USER].get(ns) {
                std::fs::write(dir.join(format!("{ns}.yml")), yaml_text(tree)).unwrap();
            }
            if let Some(out) = self.layers[OUT].get(ns).and_then(|t| t.get("out")) {
                std::fs::write(dir.join(format!("{ns}.out.yml")), yaml_text(out)).unwrap();
            }
        }
        self.layers[DEFAULTS].clone()
    }
}

/// Canonical text of a scalar for the oracle.
fn oracle_text(v: &ConfigValue) -> String {
    match v {
        ConfigValue::Null => "null".into(),
        ConfigValue::Bool(b) => if *b { "true".into() } else { "false".into() },
        ConfigValue::Int(i) => format!("{i}"),
        ConfigValue::Float(x) => format!("{x:?}"),
        ConfigValue::String(s) => s.clone(),
        _ => panic!("oracle only splices scalars"),
    }
}

/// Repeatedly substitutes `${...}` until nothing changes. Returns `None`
/// when references remain (a cycle).
pub fn oracle_fixpoint(
    flat: &BTreeMap<String, ConfigValue>,
) -> Option<BTreeMap<String, ConfigValue>> {
    let mut values = flat.clone();
    loop {
        let mut changed = false;
        let snapshot = values.clone();
        for (path, v) in values.iter_mut() {
            let ConfigValue::String(s) = v else { continue };
            if !s.contains("${") {
                continue;
            }
            if s.starts_with("${") && s.ends_with('}') && s.matches("${").count() == 1 {
                let target = &s[2..s.len() - 1];
                let tv = snapshot.get(target).unwrap_or_else(|| panic!("{path} -> {target} missing"));
                if !matches!(tv, ConfigValue::String(t) if t.contains("${")) {
                    *v = tv.clone();
                    changed = true;
                }
                continue;
            }
            let mut text = String::new();
            let mut rest = s.as_str();
            let mut replaced = false;
            while let Some(start) = rest.find("${") {
                let end = start + rest[start..].find('}').unwrap();
                let target = &rest[start + 2..end];
                let tv = &snapshot[target];
                text.push_str(&rest[..start]);
                if matches!(tv, ConfigValue::String(t) if t.contains("${")) {
                    text.push_str(&rest[start..=end]);
                } else {
                    text.push_str(&oracle_text(tv));
                    replaced = true;
                }
                rest = &rest[end + 1..];
            }
            text.push_str(rest);
            if replaced {
                *v = ConfigValue::String(text);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let unresolved = values
        .values()
        .any(|v| matches!(v, ConfigValue::String(s) if s.contains("${")));
    (!unresolved).then_some(values)
}

/// The flat raw view the oracle starts from.
pub fn flat_raw(ws: &GeneratedWorkspace) -> BTreeMap<String, ConfigValue> {
    visible(&ws.layers)
        .into_iter()
        .map(|(p, (_, v))| (p.join("."), v))
        .collect()
}
