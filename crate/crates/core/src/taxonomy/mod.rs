//! Material and category taxonomies.
//!
//! A taxonomy is a single rooted tree loaded from a tab-separated file:
//!
//! ```text
//! id<TAB>parent_id<TAB>display_name<TAB>alias,alias,...
//! ```
//!
//! The root has an empty `parent_id`. Blank lines and lines starting with `#`
//! are ignored. Children are always kept sorted by id, so every traversal is
//! independent of the sibling order in the file.

mod consistency;
mod losses;
mod matching;

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub use consistency::{project_consistent, HardLabel, MaterialLabelState, Projection};
pub use losses::{
    default_level_weights, hierarchical_accuracy, hierarchical_accuracy_conditional,
    hierarchical_ce, masked_bce, ConditionalPrediction, PROB_CLIP,
};
pub use matching::{match_material_string, normalize_material_string, MaterialMatch};

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyNode {
    pub id: String,
    pub display_name: String,
    pub parent: Option<usize>,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<TaxonomyNode>,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    root: usize,
    preorder: Vec<usize>,
}

impl Taxonomy {
    /// Builds a validated tree from `(id, parent_id, display_name, aliases)` tuples.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Option<String>, String, Vec<String>)>,
    {
        let raw: Vec<_> = entries.into_iter().collect();
        let mut index = HashMap::with_capacity(raw.len());
        for (i, (id, _, _, _)) in raw.iter().enumerate() {
            if id.is_empty() {
                return Err(tax_err("", "empty node id"));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(tax_err(id, "duplicate node id"));
            }
        }

        let mut nodes = Vec::with_capacity(raw.len());
        let mut roots = Vec::new();
        for (i, (id, parent, name, aliases)) in raw.into_iter().enumerate() {
            let parent = match parent {
                None => {
                    roots.push(i);
                    None
                }
                Some(p) if p == id => return Err(tax_err(&id, "cycle: node is its own parent")),
                Some(p) => match index.get(&p) {
                    Some(&pi) => Some(pi),
                    None => return Err(tax_err(&id, &format!("dangling parent {p:?}"))),
                },
            };
            nodes.push(TaxonomyNode {
                id,
                display_name: name,
                parent,
                aliases,
            });
        }

        let root = match roots.as_slice() {
            [r] => *r,
            [] if nodes.is_empty() => return Err(tax_err("", "taxonomy has no nodes")),
            [] => {
                // Every node has a parent, so the parent graph must contain a cycle.
                return Err(tax_err(&nodes[0].id, "cycle: no root node"));
            }
            many => {
                return Err(tax_err(
                    &nodes[many[1]].id,
                    &format!("multiple roots ({} and {})", nodes[many[0]].id, nodes[many[1]].id),
                ))
            }
        };

        let mut children = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                children[p].push(i);
            }
        }
        for c in children.iter_mut() {
            c.sort_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id));
        }

        let mut depth = vec![usize::MAX; nodes.len()];
        let mut preorder = Vec::with_capacity(nodes.len());
        let mut stack = vec![(root, 0usize)];
        while let Some((v, d)) = stack.pop() {
            depth[v] = d;
            preorder.push(v);
            for &c in children[v].iter().rev() {
                stack.push((c, d + 1));
            }
        }
        if preorder.len() != nodes.len() {
            let orphan = depth.iter().position(|&d| d == usize::MAX).unwrap_or(0);
            return Err(tax_err(&nodes[orphan].id, "cycle: node unreachable from root"));
        }

        Ok(Self {
            nodes,
            index,
            children,
            depth,
            root,
            preorder,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() < 3 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected at least 3 tab-separated columns, got {}", cols.len()),
                });
            }
            let id = cols[0].trim().to_string();
            let parent = Some(cols[1].trim()).filter(|p| !p.is_empty()).map(str::to_string);
            let name = cols[2].trim().to_string();
            let aliases = cols
                .get(3)
                .map(|a| {
                    a.split(',')
                        .map(|s| s.trim().to_lowercase())
                        .filter(|s| !s.is_empty())
                        .collect()
                })
                .unwrap_or_default();
            entries.push((id, parent, name, aliases));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, idx: usize) -> &TaxonomyNode {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.nodes[idx].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        self.nodes[idx].parent
    }

    /// Children of `idx`, sorted by id.
    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.children[idx].is_empty()
    }

    /// Root has depth 0.
    pub fn depth_of(&self, idx: usize) -> usize {
        self.depth[idx]
    }

    /// Number of levels in the tree (a lone root counts as 1).
    pub fn depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0) + 1
    }

    /// Nodes in root-first order, siblings by id.
    pub fn preorder(&self) -> &[usize] {
        &self.preorder
    }

    /// Nodes ordered so every child precedes its parent.
    pub fn postorder(&self) -> impl Iterator<Item = usize> + '_ {
        self.preorder.iter().rev().copied()
    }

    pub fn ancestors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.nodes[idx].parent, move |&p| self.nodes[p].parent)
    }

    pub fn is_descendant(&self, node: usize, ancestor: usize) -> bool {
        self.ancestors(node).any(|a| a == ancestor)
    }

    /// Root-first path of ids from the root to `idx`, inclusive.
    pub fn path_to(&self, idx: usize) -> Vec<String> {
        let mut path: Vec<String> = std::iter::once(idx)
            .chain(self.ancestors(idx))
            .map(|i| self.nodes[i].id.clone())
            .collect();
        path.reverse();
        path
    }

    /// Checks that `path` starts at the root and follows parent links.
    pub fn validate_path(&self, path: &[String]) -> Result<usize> {
        let first = path
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty taxonomy path".into()))?;
        let mut cur = self
            .index_of(first)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown taxonomy node {first:?}")))?;
        if cur != self.root {
            return Err(Error::InvalidArgument(format!(
                "path must start at root {:?}, got {first:?}",
                self.nodes[self.root].id
            )));
        }
        for id in &path[1..] {
            let next = self
                .index_of(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown taxonomy node {id:?}")))?;
            if self.nodes[next].parent != Some(cur) {
                return Err(Error::InvalidArgument(format!(
                    "{id:?} is not a child of {:?}",
                    self.nodes[cur].id
                )));
            }
            cur = next;
        }
        Ok(cur)
    }
}

fn tax_err(node: &str, message: &str) -> Error {
    Error::Taxonomy {
        node: node.to_string(),
        message: message.to_string(),
    }
}
