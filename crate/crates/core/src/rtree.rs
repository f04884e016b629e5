//! Bulk-loaded (sort-tile-recursive) 2-D R-tree over axis-aligned boxes.

use serde::{Deserialize, Serialize};

pub const DEFAULT_NODE_CAPACITY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a [f64; 2]>) -> Self {
        let mut b = Aabb::empty();
        for p in pts {
            b.min[0] = b.min[0].min(p[0]);
            b.min[1] = b.min[1].min(p[1]);
            b.max[0] = b.max[0].max(p[0]);
            b.max[1] = b.max[1].max(p[1]);
        }
        b
    }

    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        }
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: [self.min[0].min(o.min[0]), self.min[1].min(o.min[1])],
            max: [self.max[0].max(o.max[0]), self.max[1].max(o.max[1])],
        }
    }

    /// Boundary-inclusive containment.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min[0] <= o.max[0] && o.min[0] <= self.max[0] && self.min[1] <= o.max[1] && o.min[1] <= self.max[1]
    }

    fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) * 0.5, (self.min[1] + self.max[1]) * 0.5]
    }
}

#[derive(Debug, Clone)]
enum Children {
    Entries(Vec<(Aabb, usize)>),
    Nodes(Vec<usize>),
}

#[derive(Debug, Clone)]
struct RNode {
    bbox: Aabb,
    children: Children,
}

#[derive(Debug, Clone)]
pub struct RTree {
    nodes: Vec<RNode>,
    root: Option<usize>,
    len: usize,
}

/// Sort-tile-recursive packing of `items` into groups of at most `cap`.
fn str_groups<T>(mut items: Vec<(Aabb, T)>, cap: usize) -> Vec<Vec<(Aabb, T)>> {
    let n = items.len();
    let pages = n.div_ceil(cap);
    let slices = (pages as f64).sqrt().ceil().max(1.0) as usize;
    let per_slice = slices * cap;
    items.sort_by(|a, b| a.0.center()[0].total_cmp(&b.0.center()[0]));
    let mut groups = Vec::with_capacity(pages);
    let mut rest = items;
    while !rest.is_empty() {
        let tail = rest.split_off(per_slice.min(rest.len()));
        let mut slice = rest;
        rest = tail;
        slice.sort_by(|a, b| a.0.center()[1].total_cmp(&b.0.center()[1]));
        while !slice.is_empty() {
            let tail = slice.split_off(cap.min(slice.len()));
            groups.push(slice);
            slice = tail;
        }
    }
    groups
}

impl RTree {
    pub fn bulk_load(entries: Vec<(Aabb, usize)>, capacity: usize) -> Self {
        let cap = capacity.max(2);
        let len = entries.len();
        let mut nodes = Vec::new();
        if entries.is_empty() {
            return Self { nodes, root: None, len };
        }
        let mut level: Vec<(Aabb, usize)> = str_groups(entries, cap)
            .into_iter()
            .map(|group| {
                let bbox = group.iter().fold(Aabb::empty(), |b, (e, _)| b.union(e));
                nodes.push(RNode {
                    bbox,
                    children: Children::Entries(group),
                });
                (bbox, nodes.len() - 1)
            })
            .collect();
        while level.len() > 1 {
            level = str_groups(level, cap)
                .into_iter()
                .map(|group| {
                    let bbox = group.iter().fold(Aabb::empty(), |b, (e, _)| b.union(e));
                    nodes.push(RNode {
                        bbox,
                        children: Children::Nodes(group.into_iter().map(|(_, id)| id).collect()),
                    });
                    (bbox, nodes.len() - 1)
                })
                .collect();
        }
        Self {
            root: Some(level[0].1),
            nodes,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Items whose box contains `p` (boundary-inclusive), in tree order.
    pub fn query_point(&self, p: [f64; 2]) -> Vec<usize> {
        let mut out = Vec::new();
        let Some(root) = self.root else { return out };
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bbox.contains(p) {
                continue;
            }
            match &node.children {
                Children::Entries(es) => {
                    out.extend(es.iter().filter(|(b, _)| b.contains(p)).map(|(_, id)| *id));
                }
                Children::Nodes(ns) => stack.extend(ns.iter().copied()),
            }
        }
        out
    }

    pub fn query_box(&self, q: &Aabb) -> Vec<usize> {
        let mut out = Vec::new();
        let Some(root) = self.root else { return out };
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bbox.intersects(q) {
                continue;
            }
            match &node.children {
                Children::Entries(es) => {
                    out.extend(es.iter().filter(|(b, _)| b.intersects(q)).map(|(_, id)| *id));
                }
                Children::Nodes(ns) => stack.extend(ns.iter().copied()),
            }
        }
        out
    }

    /// Every stored item id, ascending.
    pub fn items(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.children {
                Children::Entries(es) => Some(es.iter().map(|(_, id)| *id)),
                Children::Nodes(_) => None,
            })
            .flatten()
            .collect();
        out.sort_unstable();
        out
    }
}
