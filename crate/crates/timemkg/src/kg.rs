//! Multivariate knowledge graph: variable nodes, typed causal edges,
//! local/global triplet retrieval, and prompt assembly.
//!
//! The graph is built single-threaded (load or incremental inserts) and
//! is immutable afterwards; retrieval and prompt assembly take `&self`.
//! All iteration orders are sorted, so retrieval results and assembled
//! prompts are byte-deterministic for a fixed graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Placeholder that prompt templates must contain.
pub const TEMPLATE_PLACEHOLDER: &str = "{variable}";

/// Where a triplet came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Description,
    DomainKnowledge,
    ExpertExperience,
    ExternalExtractor,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance::DomainKnowledge
    }
}

/// A named series variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableNode {
    pub id: String,
    pub description: String,
    pub tags: BTreeSet<String>,
}

impl VariableNode {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            description: String::new(),
            tags: BTreeSet::new(),
        }
    }
}

/// Directed typed edge `head -relation-> tail`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub provenance: Provenance,
}

impl Triplet {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            provenance: Provenance::default(),
        }
    }

    fn dedup_key(&self) -> (String, String, String) {
        (self.head.clone(), self.relation.clone(), self.tail.clone())
    }

    /// Sort key used everywhere retrieval output is ordered.
    fn sort_key(&self) -> (String, String, String) {
        (self.relation.clone(), self.head.clone(), self.tail.clone())
    }
}

/// Retrieval result around one variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub center: String,
    pub triplets: Vec<Triplet>,
}

/// Assembled per-variable prompt text plus its content digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub variable_id: String,
    pub text: String,
    /// Hex SHA-256 of `text`, used as the cache key.
    pub hash: String,
}

impl PromptRecord {
    pub fn new(variable_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let hash = content_hash(&text);
        Self {
            variable_id: variable_id.into(),
            text,
            hash,
        }
    }
}

/// Hex SHA-256 digest of prompt text.
pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Directed multigraph of variable nodes and typed causal edges.
/// Duplicate `(head, relation, tail)` insertions collapse to one edge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mkg {
    nodes: BTreeMap<String, VariableNode>,
    edges: BTreeMap<(String, String, String), Triplet>,
    relation_vocab: BTreeSet<String>,
    reflexive_relations: BTreeSet<String>,
}

impl Mkg {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Option<&VariableNode> {
        self.nodes.get(id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    /// Edges in `(head, relation, tail)` order.
    pub fn edges(&self) -> impl Iterator<Item = &Triplet> {
        self.edges.values()
    }

    pub fn relation_vocab(&self) -> &BTreeSet<String> {
        &self.relation_vocab
    }

    /// Mark a relation as allowed to form self-loops.
    pub fn register_reflexive(&mut self, relation: impl Into<String>) {
        self.reflexive_relations.insert(relation.into());
    }

    /// Insert a node, or merge description/tags into an existing one.
    pub fn upsert_node(&mut self, node: VariableNode) {
        match self.nodes.get_mut(&node.id) {
            Some(existing) => {
                if existing.description.is_empty() {
                    existing.description = node.description;
                }
                existing.tags.extend(node.tags);
            }
            None => {
                self.nodes.insert(node.id.clone(), node);
            }
        }
    }

    /// Add an edge. With `auto_create`, missing endpoints become bare
    /// nodes; otherwise they are an error.
    pub fn add_triplet(&mut self, t: Triplet, auto_create: bool) -> Result<()> {
        if t.head == t.tail && !self.reflexive_relations.contains(&t.relation) {
            return Err(Error::Config(format!(
                "self-loop on `{}` via non-reflexive relation `{}`",
                t.head, t.relation
            )));
        }
        for endpoint in [&t.head, &t.tail] {
            if !self.nodes.contains_key(endpoint) {
                if auto_create {
                    self.upsert_node(VariableNode::new(endpoint.clone()));
                } else {
                    return Err(Error::UnknownNode(endpoint.clone()));
                }
            }
        }
        self.relation_vocab.insert(t.relation.clone());
        self.edges.insert(t.dedup_key(), t);
        Ok(())
    }

    fn require_node(&self, id: &str) -> Result<()> {
        if self.has_node(id) {
            Ok(())
        } else {
            Err(Error::UnknownNode(id.to_string()))
        }
    }

    /// Triplets directly incident to `v`, sorted by `(relation, head, tail)`.
    pub fn retrieve_local(&self, v: &str) -> Result<Subgraph> {
        self.require_node(v)?;
        let mut triplets: Vec<Triplet> = self
            .edges
            .values()
            .filter(|t| t.head == v || t.tail == v)
            .cloned()
            .collect();
        triplets.sort_by_key(Triplet::sort_key);
        Ok(Subgraph {
            center: v.to_string(),
            triplets,
        })
    }

    /// Triplets within `k` hops of `v` (undirected distance of the nearer
    /// endpoint) plus triplets whose head or tail shares at least one tag
    /// with `v`. Sorted and deduplicated within itself; overlap with the
    /// local set is the caller's concern.
    pub fn retrieve_global(&self, v: &str, k: usize) -> Result<Subgraph> {
        self.require_node(v)?;
        let dist = self.bfs_distances(v);
        let v_tags = &self.nodes[v].tags;
        let mut set: BTreeSet<Triplet> = BTreeSet::new();
        for t in self.edges.values() {
            let hop = dist
                .get(&t.head)
                .copied()
                .unwrap_or(usize::MAX)
                .min(dist.get(&t.tail).copied().unwrap_or(usize::MAX));
            let in_hops = hop <= k;
            let tag_match = !v_tags.is_empty()
                && [&t.head, &t.tail].iter().any(|id| {
                    self.nodes
                        .get(id.as_str())
                        .is_some_and(|n| !n.tags.is_disjoint(v_tags))
                });
            if in_hops || tag_match {
                set.insert(t.clone());
            }
        }
        let mut triplets: Vec<Triplet> = set.into_iter().collect();
        triplets.sort_by_key(Triplet::sort_key);
        Ok(Subgraph {
            center: v.to_string(),
            triplets,
        })
    }

    fn bfs_distances(&self, start: &str) -> BTreeMap<String, usize> {
        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in self.edges.values() {
            adjacency.entry(&t.head).or_default().push(&t.tail);
            adjacency.entry(&t.tail).or_default().push(&t.head);
        }
        let mut dist = BTreeMap::new();
        dist.insert(start.to_string(), 0usize);
        let mut queue = VecDeque::from([start]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur];
            if let Some(next) = adjacency.get(cur) {
                for &n in next {
                    if !dist.contains_key(n) {
                        dist.insert(n.to_string(), d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        dist
    }

    /// Query line plus retrieved triplets, one `[head] -> relation -> [tail]`
    /// per line: local triplets first, then global-only ones, each group
    /// sorted. Pure function of `(graph, v, template, k)`.
    pub fn assemble_prompt(&self, v: &str, template: &str, k: usize) -> Result<PromptRecord> {
        if !template.contains(TEMPLATE_PLACEHOLDER) {
            return Err(Error::BadTemplate);
        }
        self.require_node(v)?;
        let query = template.replace(TEMPLATE_PLACEHOLDER, v);
        let local = self.retrieve_local(v)?;
        let global = self.retrieve_global(v, k)?;
        let local_set: BTreeSet<&Triplet> = local.triplets.iter().collect();
        let mut text = query;
        for t in &local.triplets {
            text.push('\n');
            text.push_str(&render_triplet(t));
        }
        for t in &global.triplets {
            if !local_set.contains(t) {
                text.push('\n');
                text.push_str(&render_triplet(t));
            }
        }
        Ok(PromptRecord::new(v, text))
    }
}

fn render_triplet(t: &Triplet) -> String {
    format!("[{}] -> {} -> [{}]", t.head, t.relation, t.tail)
}

/// One line of the triplet file.
#[derive(Debug, Serialize, Deserialize)]
struct TripletLine {
    head: String,
    relation: String,
    tail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tags_head: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tags_tail: Vec<String>,
    #[serde(default)]
    provenance: Provenance,
}

/// Parse the JSON-Lines triplet format. `#`-prefixed and blank lines are
/// skipped; any other malformed line is an error carrying its 1-based
/// line number.
pub fn parse_mkg(input: &str) -> Result<Mkg> {
    let mut g = Mkg::new();
    for (idx, line) in input.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec: TripletLine = serde_json::from_str(trimmed)
            .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        if rec.head.is_empty() || rec.tail.is_empty() {
            return Err(Error::parse(idx + 1, "empty head or tail id"));
        }
        let mut head = VariableNode::new(rec.head.clone());
        head.tags.extend(rec.tags_head.iter().cloned());
        let mut tail = VariableNode::new(rec.tail.clone());
        tail.tags.extend(rec.tags_tail.iter().cloned());
        g.upsert_node(head);
        g.upsert_node(tail);
        g.add_triplet(
            Triplet {
                head: rec.head,
                relation: rec.relation,
                tail: rec.tail,
                provenance: rec.provenance,
            },
            false,
        )
        .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
    }
    Ok(g)
}

pub fn load_mkg(path: &Path) -> Result<Mkg> {
    let mut content = String::new();
    std::fs::File::open(path)?.read_to_string(&mut content)?;
    parse_mkg(&content)
}

/// Serialize in normalized form: edges sorted by `(head, relation, tail)`,
/// tags sorted, LF endings. `save(load(x))` is byte-stable.
pub fn mkg_to_string(g: &Mkg) -> String {
    let mut out = String::new();
    for t in g.edges() {
        let line = TripletLine {
            head: t.head.clone(),
            relation: t.relation.clone(),
            tail: t.tail.clone(),
            tags_head: g.node(&t.head).map_or_else(Vec::new, |n| {
                n.tags.iter().cloned().collect()
            }),
            tags_tail: g.node(&t.tail).map_or_else(Vec::new, |n| {
                n.tags.iter().cloned().collect()
            }),
            provenance: t.provenance,
        };
        out.push_str(&serde_json::to_string(&line).expect("triplet line serializes"));
        out.push('\n');
    }
    out
}

pub fn save_mkg(g: &Mkg, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(mkg_to_string(g).as_bytes())?;
    Ok(())
}
