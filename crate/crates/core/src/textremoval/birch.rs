//! BIRCH clustering over a clustering-feature (CF) tree.
//!
//! Every entry keeps `(count, linear sum, squared sum)`, which is enough to
//! recover its centroid and radius exactly and to merge entries by
//! addition. Leaf entries are the output subclusters.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `(N, LS, SS)` summary of a point set; `SS` is the sum of squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFeature {
    pub count: u64,
    pub linear_sum: Vec<f64>,
    pub squared_sum: f64,
}

impl ClusterFeature {
    pub fn empty(dim: usize) -> Self {
        Self {
            count: 0,
            linear_sum: vec![0.0; dim],
            squared_sum: 0.0,
        }
    }

    pub fn from_point(x: &[f64]) -> Self {
        Self {
            count: 1,
            linear_sum: x.to_vec(),
            squared_sum: x.iter().map(|v| v * v).sum(),
        }
    }

    pub fn add_point(&mut self, x: &[f64]) {
        self.count += 1;
        for (s, v) in self.linear_sum.iter_mut().zip(x) {
            *s += v;
        }
        self.squared_sum += x.iter().map(|v| v * v).sum::<f64>();
    }

    pub fn merge(&mut self, other: &ClusterFeature) {
        self.count += other.count;
        for (s, v) in self.linear_sum.iter_mut().zip(&other.linear_sum) {
            *s += v;
        }
        self.squared_sum += other.squared_sum;
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.linear_sum.iter().map(|s| s / n).collect()
    }

    /// Root mean squared distance of members to the centroid.
    pub fn radius(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let c2: f64 = self.linear_sum.iter().map(|s| (s / n) * (s / n)).sum();
        (self.squared_sum / n - c2).max(0.0).sqrt()
    }

    fn radius_with(&self, x: &[f64]) -> f64 {
        let mut merged = self.clone();
        merged.add_point(x);
        merged.radius()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirchParams {
    /// Maximum radius of a leaf entry.
    pub threshold: f64,
    /// Maximum entries per node before it splits.
    pub branching_factor: usize,
}

impl Default for BirchParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            branching_factor: 50,
        }
    }
}

/// A leaf entry of the finished tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Subcluster {
    pub cf: ClusterFeature,
    /// Row indices of the member points, in insertion order.
    pub members: Vec<usize>,
}

#[derive(Debug)]
struct LeafEntry {
    cf: ClusterFeature,
    members: Vec<usize>,
}

#[derive(Debug)]
struct InnerEntry {
    cf: ClusterFeature,
    child: usize,
}

#[derive(Debug)]
enum Node {
    Leaf(Vec<LeafEntry>),
    Inner(Vec<InnerEntry>),
}

struct CfTree {
    nodes: Vec<Node>,
    root: usize,
    dim: usize,
    params: BirchParams,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest<'a>(centroids: impl Iterator<Item = &'a ClusterFeature>, x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, cf) in centroids.enumerate() {
        let d = sq_dist(&cf.centroid(), x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Splits `items` in two around their farthest pair of centroids.
fn farthest_pair_split<T>(
    items: Vec<T>,
    cf_of: impl Fn(&T) -> &ClusterFeature,
) -> (Vec<T>, Vec<T>) {
    let centroids: Vec<Vec<f64>> = items.iter().map(|e| cf_of(e).centroid()).collect();
    let (mut si, mut sj, mut far) = (0, 1, -1.0);
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            let d = sq_dist(&centroids[i], &centroids[j]);
            if d > far {
                (si, sj, far) = (i, j, d);
            }
        }
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        let to_left = if i == si {
            true
        } else if i == sj {
            false
        } else {
            sq_dist(&centroids[i], &centroids[si]) <= sq_dist(&centroids[i], &centroids[sj])
        };
        if to_left {
            left.push(item);
        } else {
            right.push(item);
        }
    }
    (left, right)
}

impl CfTree {
    fn new(dim: usize, params: BirchParams) -> Self {
        Self {
            nodes: vec![Node::Leaf(Vec::new())],
            root: 0,
            dim,
            params,
        }
    }

    fn node_cf(&self, id: usize) -> ClusterFeature {
        let mut cf = ClusterFeature::empty(self.dim);
        match &self.nodes[id] {
            Node::Leaf(es) => es.iter().for_each(|e| cf.merge(&e.cf)),
            Node::Inner(es) => es.iter().for_each(|e| cf.merge(&e.cf)),
        }
        cf
    }

    fn insert(&mut self, x: &[f64], index: usize) {
        if let Some(sibling) = self.insert_into(self.root, x, index) {
            let old = self.root;
            let entries = vec![
                InnerEntry {
                    cf: self.node_cf(old),
                    child: old,
                },
                InnerEntry {
                    cf: self.node_cf(sibling),
                    child: sibling,
                },
            ];
            self.nodes.push(Node::Inner(entries));
            self.root = self.nodes.len() - 1;
        }
    }

    /// Inserts into the subtree at `id`; returns a new sibling on split.
    fn insert_into(&mut self, id: usize, x: &[f64], index: usize) -> Option<usize> {
        let threshold = self.params.threshold;
        let branching = self.params.branching_factor;
        let child = match &mut self.nodes[id] {
            Node::Leaf(entries) => {
                if !entries.is_empty() {
                    let i = nearest(entries.iter().map(|e| &e.cf), x);
                    if entries[i].cf.radius_with(x) <= threshold {
                        entries[i].cf.add_point(x);
                        entries[i].members.push(index);
                        return None;
                    }
                }
                entries.push(LeafEntry {
                    cf: ClusterFeature::from_point(x),
                    members: vec![index],
                });
                if entries.len() <= branching {
                    return None;
                }
                let all = std::mem::take(entries);
                let (left, right) = farthest_pair_split(all, |e| &e.cf);
                *entries = left;
                self.nodes.push(Node::Leaf(right));
                return Some(self.nodes.len() - 1);
            }
            Node::Inner(entries) => {
                let i = nearest(entries.iter().map(|e| &e.cf), x);
                (i, entries[i].child)
            }
        };
        let (slot, child_id) = child;
        let split = self.insert_into(child_id, x, index);
        let child_cf = self.node_cf(child_id);
        let sibling_cf = split.map(|s| self.node_cf(s));
        let Node::Inner(entries) = &mut self.nodes[id] else {
            unreachable!("node kind changed during insertion");
        };
        entries[slot].cf = child_cf;
        if let (Some(s), Some(cf)) = (split, sibling_cf) {
            entries.push(InnerEntry { cf, child: s });
        }
        if entries.len() <= branching {
            return None;
        }
        let all = std::mem::take(entries);
        let (left, right) = farthest_pair_split(all, |e| &e.cf);
        *entries = left;
        self.nodes.push(Node::Inner(right));
        Some(self.nodes.len() - 1)
    }

    fn into_leaves(mut self) -> Vec<Subcluster> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match std::mem::replace(&mut self.nodes[id], Node::Leaf(Vec::new())) {
                Node::Leaf(entries) => out.extend(entries.into_iter().map(|e| Subcluster {
                    cf: e.cf,
                    members: e.members,
                })),
                Node::Inner(entries) => stack.extend(entries.iter().rev().map(|e| e.child)),
            }
        }
        out
    }
}

/// Clusters the rows of `points` (`n × d`); returns the leaf subclusters.
pub fn birch_cluster(points: &DMatrix<f64>, params: &BirchParams) -> Result<Vec<Subcluster>> {
    if points.nrows() == 0 {
        return Err(Error::DegenerateData(
            "birch needs at least one point".into(),
        ));
    }
    if !(params.threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "birch threshold must be positive, got {}",
            params.threshold
        )));
    }
    if params.branching_factor < 2 {
        return Err(Error::InvalidConfig(
            "birch branching factor must be >= 2".into(),
        ));
    }
    let dim = points.ncols();
    let mut tree = CfTree::new(dim, *params);
    let mut row = vec![0.0; dim];
    for i in 0..points.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = points[(i, j)];
        }
        tree.insert(&row, i);
    }
    Ok(tree.into_leaves())
}

/// Per-point subcluster label, `labels[i]` indexes the output of
/// [`birch_cluster`].
pub fn labels(subclusters: &[Subcluster], n: usize) -> Vec<usize> {
    let mut labels = vec![usize::MAX; n];
    for (c, s) in subclusters.iter().enumerate() {
        for &m in &s.members {
            labels[m] = c;
        }
    }
    labels
}
