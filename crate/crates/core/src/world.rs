//! Tree-structured world: the root is the whole world, areas are internal
//! nodes and objects are leaves. Movement happens over an explicit adjacency
//! graph between leaf areas (areas with no sub-areas).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{prompts, LanguageModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("{0:?} is not an object")]
    NotAnObject(String),
    #[error("{0:?} is not an area")]
    NotAnArea(String),
    #[error("no path from {from:?} to {to:?}")]
    Unreachable { from: String, to: String },
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    World,
    Area,
    Object,
}

/// Scenario-file description of one node below the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    /// Name of the parent: the world name or an area name.
    pub parent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
}

/// Scenario-file description of the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    /// Undirected edges between leaf areas.
    #[serde(default)]
    pub adjacency: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldNode {
    pub name: String,
    pub kind: NodeKind,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
}

/// A change to an object's status, for perception and the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldEvent {
    pub area: String,
    pub object: String,
    pub status: String,
}

impl WorldEvent {
    pub fn describe(&self) -> String {
        format!("{} at {} is now {}", self.object, self.area, self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTree {
    nodes: Vec<WorldNode>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pending: Vec<WorldEvent>,
}

/// What an agent knows of the world when it is rendered for them.
#[derive(Debug, Clone, Copy)]
pub struct Visibility<'a> {
    pub visited: &'a BTreeSet<String>,
    pub full: bool,
}

impl WorldTree {
    pub fn from_spec(spec: &WorldSpec) -> Result<Self, WorldError> {
        let invalid = |m: String| WorldError::InvalidWorld(m);
        let mut nodes = vec![WorldNode {
            name: spec.name.clone(),
            kind: NodeKind::World,
            parent: None,
            children: Vec::new(),
            status: None,
        }];
        for n in &spec.nodes {
            if n.kind == NodeKind::World {
                return Err(invalid(format!("{:?}: only the root may be of kind world", n.name)));
            }
            if n.name.trim().is_empty() {
                return Err(invalid("node with empty name".into()));
            }
            nodes.push(WorldNode {
                name: n.name.clone(),
                kind: n.kind,
                parent: None,
                children: Vec::new(),
                status: match n.kind {
                    NodeKind::Object => Some(n.status.clone().unwrap_or_else(|| "idle".to_string())),
                    _ => None,
                },
            });
        }
        // areas are addressed by name everywhere, so area names are unique
        let mut area_names = BTreeSet::new();
        for n in nodes.iter().filter(|n| n.kind != NodeKind::Object) {
            if !area_names.insert(n.name.clone()) {
                return Err(invalid(format!("duplicate area name {:?}", n.name)));
            }
        }
        for (i, n) in spec.nodes.iter().enumerate() {
            let idx = i + 1;
            let parent = nodes
                .iter()
                .position(|p| p.kind != NodeKind::Object && p.name == n.parent)
                .ok_or_else(|| invalid(format!("{:?}: unknown parent {:?}", n.name, n.parent)))?;
            if n.kind == NodeKind::Object && nodes[parent].kind == NodeKind::World {
                return Err(invalid(format!("object {:?} must belong to an area", n.name)));
            }
            if nodes[parent].children.iter().any(|&c| nodes[c].name == n.name) {
                return Err(invalid(format!("duplicate name {:?} under {:?}", n.name, n.parent)));
            }
            nodes[idx].parent = Some(parent);
            nodes[parent].children.push(idx);
        }
        // parents are looked up by name, so a cycle cannot form: every parent
        // chain ends at the root unless some area lists itself
        for (i, n) in nodes.iter().enumerate().skip(1) {
            let mut seen = BTreeSet::new();
            let mut cur = i;
            while let Some(p) = nodes[cur].parent {
                if !seen.insert(p) {
                    return Err(invalid(format!("{:?} is part of a parent cycle", n.name)));
                }
                cur = p;
            }
            if cur != 0 {
                return Err(invalid(format!("{:?} is not connected to the root", n.name)));
            }
        }

        let mut tree = WorldTree {
            nodes,
            adjacency: BTreeMap::new(),
            pending: Vec::new(),
        };
        let leaves: BTreeSet<String> = tree.leaf_areas().into_iter().collect();
        if leaves.is_empty() {
            return Err(invalid("the world has no areas".into()));
        }
        for leaf in &leaves {
            tree.adjacency.insert(leaf.clone(), BTreeSet::new());
        }
        for [a, b] in &spec.adjacency {
            for end in [a, b] {
                if !leaves.contains(end) {
                    return Err(invalid(format!("adjacency endpoint {end:?} is not a leaf area")));
                }
            }
            if a == b {
                return Err(invalid(format!("self-loop on {a:?}")));
            }
            tree.adjacency.get_mut(a).unwrap().insert(b.clone());
            tree.adjacency.get_mut(b).unwrap().insert(a.clone());
        }
        let first = leaves.iter().next().unwrap();
        for leaf in &leaves {
            tree.find_path(first, leaf)
                .map_err(|_| invalid(format!("area {leaf:?} is unreachable from {first:?}")))?;
        }
        Ok(tree)
    }

    pub fn name(&self) -> &str {
        &self.nodes[0].name
    }

    fn index_of_area(&self, name: &str) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.kind != NodeKind::Object && n.name == name)
    }

    fn child_areas(&self, idx: usize) -> Vec<usize> {
        self.nodes[idx]
            .children
            .iter()
            .copied()
            .filter(|&c| self.nodes[c].kind == NodeKind::Area)
            .collect()
    }

    pub fn is_area(&self, name: &str) -> bool {
        self.index_of_area(name)
            .is_some_and(|i| self.nodes[i].kind == NodeKind::Area)
    }

    /// Areas without sub-areas, in scenario order. Agents occupy these.
    pub fn leaf_areas(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| n.kind == NodeKind::Area && self.child_areas(*i).is_empty())
            .map(|(_, n)| n.name.clone())
            .collect()
    }

    pub fn is_leaf_area(&self, name: &str) -> bool {
        self.adjacency.contains_key(name)
    }

    pub fn neighbors(&self, area: &str) -> impl Iterator<Item = &str> {
        self.adjacency
            .get(area)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    /// (object, status) pairs directly inside `area`, in scenario order.
    pub fn objects_in(&self, area: &str) -> Result<Vec<(&str, &str)>, WorldError> {
        let idx = self
            .index_of_area(area)
            .ok_or_else(|| WorldError::UnknownNode(area.to_string()))?;
        Ok(self.nodes[idx]
            .children
            .iter()
            .map(|&c| &self.nodes[c])
            .filter(|n| n.kind == NodeKind::Object)
            .map(|n| (n.name.as_str(), n.status.as_deref().unwrap_or("idle")))
            .collect())
    }

    pub fn object_status(&self, area: &str, object: &str) -> Result<&str, WorldError> {
        self.objects_in(area)?
            .into_iter()
            .find(|(name, _)| *name == object)
            .map(|(_, s)| s)
            .ok_or_else(|| WorldError::UnknownNode(format!("{area}/{object}")))
    }

    fn knows(&self, idx: usize, vis: Visibility<'_>) -> bool {
        if vis.full || vis.visited.contains(&self.nodes[idx].name) {
            return true;
        }
        self.child_areas(idx).into_iter().any(|c| self.knows(c, vis))
    }

    /// Indented outline of `node` (the world name or an area): child areas
    /// and objects with their status. Contents of areas the observer has not
    /// visited are omitted, except that the root's area list is always shown.
    pub fn render_subtree(&self, node: &str, vis: Visibility<'_>) -> Result<String, WorldError> {
        let idx = self
            .index_of_area(node)
            .ok_or_else(|| WorldError::UnknownNode(node.to_string()))?;
        let mut out = Vec::new();
        self.render_into(idx, 0, vis, true, &mut out);
        Ok(out.join("\n"))
    }

    fn render_into(&self, idx: usize, depth: usize, vis: Visibility<'_>, expand: bool, out: &mut Vec<String>) {
        let n = &self.nodes[idx];
        let pad = "  ".repeat(depth);
        match n.kind {
            NodeKind::Object => out.push(format!("{pad}- {} ({})", n.name, n.status.as_deref().unwrap_or("idle"))),
            NodeKind::World | NodeKind::Area => {
                out.push(format!("{pad}{}", n.name));
                if !expand {
                    return;
                }
                for &c in &n.children {
                    let child_expand = self.nodes[c].kind == NodeKind::Area && self.knows(c, vis);
                    self.render_into(c, depth + 1, vis, child_expand, out);
                }
            }
        }
    }

    /// Shortest path by hop count between leaf areas. Neighbors are expanded
    /// in lexicographic order, so among equal-length paths the
    /// lexicographically earliest discovery wins.
    pub fn find_path(&self, from: &str, to: &str) -> Result<Vec<String>, WorldError> {
        for end in [from, to] {
            if !self.adjacency.contains_key(end) {
                return Err(WorldError::NotAnArea(end.to_string()));
            }
        }
        if from == to {
            return Ok(vec![from.to_string()]);
        }
        let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(cur) = queue.pop_front() {
            for next in self.neighbors(cur) {
                if seen.insert(next) {
                    prev.insert(next, cur);
                    if next == to {
                        let mut path = vec![to.to_string()];
                        let mut at = to;
                        while let Some(&p) = prev.get(at) {
                            path.push(p.to_string());
                            at = p;
                        }
                        path.reverse();
                        return Ok(path);
                    }
                    queue.push_back(next);
                }
            }
        }
        Err(WorldError::Unreachable {
            from: from.to_string(),
            to: to.to_string(),
        })
    }

    /// Replaces an object's status and queues a world event.
    pub fn update_object_state(&mut self, area: &str, object: &str, status: &str) -> Result<WorldEvent, WorldError> {
        let area_idx = self
            .index_of_area(area)
            .ok_or_else(|| WorldError::UnknownNode(area.to_string()))?;
        let target = self.nodes[area_idx]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].name == object)
            .ok_or_else(|| WorldError::UnknownNode(format!("{area}/{object}")))?;
        if self.nodes[target].kind != NodeKind::Object {
            return Err(WorldError::NotAnObject(object.to_string()));
        }
        self.nodes[target].status = Some(status.to_string());
        let event = WorldEvent {
            area: area.to_string(),
            object: object.to_string(),
            status: status.to_string(),
        };
        self.pending.push(event.clone());
        Ok(event)
    }

    /// Drains world events queued since the last call.
    pub fn take_events(&mut self) -> Vec<WorldEvent> {
        std::mem::take(&mut self.pending)
    }
}

/// Outcome of a destination choice. `fallback` carries the reason when the
/// agent stayed put because no valid answer was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Destination {
    pub area: String,
    pub fallback: Option<String>,
}

fn matches_candidate<'a>(answer: &str, candidates: &[&'a str]) -> Option<&'a str> {
    let cleaned = answer
        .lines()
        .next()
        .unwrap_or("")
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '*')
        .trim();
    candidates.iter().copied().find(|c| c.eq_ignore_ascii_case(cleaned))
}

/// Picks a leaf area for `action` by descending the tree, asking at each
/// level with more than one child area. An unusable answer is retried once;
/// after that (or on a backend error) the agent stays in `current_area`.
pub fn choose_destination(
    name: &str,
    current_area: &str,
    action: &str,
    tree: &WorldTree,
    vis: Visibility<'_>,
    llm: &dyn LanguageModel,
) -> Destination {
    let stay = |reason: String| {
        log::warn!("{name}: destination for {action:?} unresolved ({reason}); staying in {current_area}");
        Destination {
            area: current_area.to_string(),
            fallback: Some(reason),
        }
    };
    let mut level = 0usize;
    loop {
        let children = tree.child_areas(level);
        match children.len() {
            0 => {
                return Destination {
                    area: tree.nodes[level].name.clone(),
                    fallback: None,
                }
            }
            1 => {
                level = children[0];
                continue;
            }
            _ => {}
        }
        let candidates: Vec<&str> = children.iter().map(|&c| tree.nodes[c].name.as_str()).collect();
        let known = match tree.render_subtree(&tree.nodes[level].name, vis) {
            Ok(k) => k,
            Err(e) => return stay(e.to_string()),
        };
        let request = match prompts::destination(name, current_area, action, &known, &candidates) {
            Ok(r) => r,
            Err(e) => return stay(e.to_string()),
        };
        let mut chosen = None;
        let mut last = String::new();
        for _ in 0..2 {
            match llm.complete(&request) {
                Ok(answer) => {
                    if let Some(c) = matches_candidate(&answer, &candidates) {
                        chosen = Some(c);
                        break;
                    }
                    last = format!("unknown area answer {answer:?}");
                }
                Err(e) => last = e.to_string(),
            }
        }
        match chosen {
            Some(c) => level = tree.index_of_area(c).expect("candidate exists"),
            None => return stay(last),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::BackendError;
    use crate::llm::{Embedding, PromptRequest, ScriptRow, ScriptTable, ScriptedBackend, TemplateId};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn area(name: &str, parent: &str) -> NodeSpec {
        NodeSpec {
            name: name.into(),
            kind: NodeKind::Area,
            parent: parent.into(),
            status: None,
        }
    }

    fn object(name: &str, parent: &str, status: &str) -> NodeSpec {
        NodeSpec {
            name: name.into(),
            kind: NodeKind::Object,
            parent: parent.into(),
            status: Some(status.into()),
        }
    }

    fn edge(a: &str, b: &str) -> [String; 2] {
        [a.into(), b.into()]
    }

    fn town() -> WorldTree {
        WorldTree::from_spec(&WorldSpec {
            name: "Smallville".into(),
            nodes: vec![
                area("cafe", "Smallville"),
                object("stove", "cafe", "on"),
                area("library", "Smallville"),
                object("shelf", "library", "tidy"),
                area("college", "Smallville"),
                area("lab", "college"),
                area("lecture hall", "college"),
                object("projector", "lab", "off"),
            ],
            adjacency: vec![
                edge("cafe", "library"),
                edge("library", "lab"),
                edge("lab", "lecture hall"),
            ],
        })
        .unwrap()
    }

    struct Counting(ScriptedBackend, AtomicUsize);

    impl LanguageModel for Counting {
        fn complete(&self, r: &PromptRequest) -> Result<String, BackendError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.complete(r)
        }

        fn embed(&self, t: &str) -> Result<Embedding, BackendError> {
            self.0.embed(t)
        }
    }

    fn llm(rows: Vec<ScriptRow>) -> Counting {
        Counting(
            ScriptedBackend::new(&ScriptTable::new(rows).with_stock_defaults(), 0).unwrap(),
            AtomicUsize::new(0),
        )
    }

    #[test]
    fn structure_queries() {
        let t = town();
        assert_eq!(t.leaf_areas(), vec!["cafe", "library", "lab", "lecture hall"]);
        assert!(!t.is_leaf_area("college"));
        assert_eq!(t.objects_in("cafe").unwrap(), vec![("stove", "on")]);
        assert_eq!(t.object_status("lab", "projector").unwrap(), "off");
    }

    #[test]
    fn invalid_worlds_rejected() {
        let mut spec = WorldSpec {
            name: "W".into(),
            nodes: vec![area("a", "W"), area("b", "W")],
            adjacency: vec![],
        };
        assert!(matches!(WorldTree::from_spec(&spec), Err(WorldError::InvalidWorld(_))));
        spec.adjacency.push(edge("a", "b"));
        assert!(WorldTree::from_spec(&spec).is_ok());
        spec.nodes.push(object("lamp", "W", "on"));
        assert!(WorldTree::from_spec(&spec).is_err());
        spec.nodes.pop();
        spec.nodes.push(object("lamp", "a", "on"));
        spec.nodes.push(object("lamp", "a", "off"));
        assert!(WorldTree::from_spec(&spec).is_err());
        spec.nodes.pop();
        spec.nodes.push(area("x", "lamp"));
        assert!(WorldTree::from_spec(&spec).is_err());
    }

    #[test]
    fn render_rules() {
        let t = town();
        let visited = BTreeSet::from(["cafe".to_string()]);
        let vis = Visibility {
            visited: &visited,
            full: false,
        };
        let text = t.render_subtree("Smallville", vis).unwrap();
        assert_eq!(text, t.render_subtree("Smallville", vis).unwrap());
        assert!(text.contains("cafe") && text.contains("library") && text.contains("college"));
        assert!(text.lines().any(|l| l.contains("stove") && l.contains("on")));
        assert!(!text.contains("shelf"));
        assert!(!text.contains("projector"));
        let full = t
            .render_subtree(
                "Smallville",
                Visibility {
                    visited: &visited,
                    full: true,
                },
            )
            .unwrap();
        assert!(full.contains("shelf") && full.contains("projector") && full.contains("lab"));
        assert!(matches!(t.render_subtree("moon", vis), Err(WorldError::UnknownNode(_))));
    }

    #[test]
    fn paths() {
        let t = town();
        assert_eq!(t.find_path("cafe", "cafe").unwrap(), vec!["cafe"]);
        assert_eq!(
            t.find_path("cafe", "lecture hall").unwrap(),
            vec!["cafe", "library", "lab", "lecture hall"]
        );
        assert!(matches!(t.find_path("cafe", "college"), Err(WorldError::NotAnArea(_))));
    }

    #[test]
    fn lexicographic_tie_break() {
        // two shortest routes a->d: via b and via c
        let t = WorldTree::from_spec(&WorldSpec {
            name: "W".into(),
            nodes: vec![area("a", "W"), area("c", "W"), area("b", "W"), area("d", "W")],
            adjacency: vec![edge("a", "c"), edge("a", "b"), edge("c", "d"), edge("b", "d")],
        })
        .unwrap();
        assert_eq!(t.find_path("a", "d").unwrap(), vec!["a", "b", "d"]);
    }

    #[test]
    fn object_updates() {
        let mut t = town();
        let visited = BTreeSet::new();
        let ev = t.update_object_state("cafe", "stove", "burning").unwrap();
        assert_eq!(ev.describe(), "stove at cafe is now burning");
        let text = t
            .render_subtree(
                "cafe",
                Visibility {
                    visited: &visited,
                    full: true,
                },
            )
            .unwrap();
        assert!(text.contains("burning"));
        assert_eq!(t.take_events().len(), 1);
        assert!(t.take_events().is_empty());
        assert!(matches!(
            t.update_object_state("college", "lab", "x"),
            Err(WorldError::NotAnObject(_))
        ));
        assert!(matches!(
            t.update_object_state("cafe", "oven", "x"),
            Err(WorldError::UnknownNode(_))
        ));
    }

    #[test]
    fn destination_single_area_needs_no_call() {
        let t = WorldTree::from_spec(&WorldSpec {
            name: "W".into(),
            nodes: vec![area("home", "W")],
            adjacency: vec![],
        })
        .unwrap();
        let b = llm(vec![]);
        let visited = BTreeSet::new();
        let d = choose_destination(
            "Eddy",
            "home",
            "sleeping",
            &t,
            Visibility {
                visited: &visited,
                full: false,
            },
            &b,
        );
        assert_eq!(d.area, "home");
        assert!(d.fallback.is_none());
        assert_eq!(b.1.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn destination_descends_and_matches() {
        let t = town();
        let b = llm(vec![
            ScriptRow::new(TemplateId::Destination, " Lab. ").contains("Areas to choose from: lab, lecture hall"),
            ScriptRow::new(TemplateId::Destination, "College").contains("running an experiment"),
            ScriptRow::new(TemplateId::Destination, "cafe").contains("Which area"),
        ]);
        let visited = BTreeSet::from(["cafe".to_string()]);
        let vis = Visibility {
            visited: &visited,
            full: false,
        };
        let d = choose_destination("Eddy", "cafe", "running an experiment", &t, vis, &b);
        assert_eq!(d.area, "lab");
        let d = choose_destination("Eddy", "library", "having coffee", &t, vis, &b);
        assert_eq!(d.area, "cafe");
    }

    #[test]
    fn destination_falls_back_after_retry() {
        let t = town();
        let b = llm(vec![
            ScriptRow::new(TemplateId::Destination, "the moon").contains("Which area")
        ]);
        let visited = BTreeSet::new();
        let d = choose_destination(
            "Eddy",
            "library",
            "stargazing",
            &t,
            Visibility {
                visited: &visited,
                full: false,
            },
            &b,
        );
        assert_eq!(d.area, "library");
        assert!(d.fallback.is_some());
        assert_eq!(b.1.load(Ordering::SeqCst), 2);
    }
}
