//! Ground truth by exhaustive enumeration: every rooted plane tree of a
//! given size, psi-weights, distance to the border, per-node border
//! distances, and the aggregate sums `U_n`, `V_n` that must reproduce the
//! series coefficients `A_n` and `A_n^(k)` bit-exactly.

use std::collections::VecDeque;

use num::{BigRational, One, Zero};
use serde_json::json;

use crate::error::{Error, Result};
use crate::family::OffspringFamily;

/// Exhaustive enumeration cap: C_13 = 742900 trees at n = 14 keeps the
/// full cross-check suite at desk scale.
pub const MAX_ENUM_NODES: usize = 14;

/// A rooted plane tree. Node 0 is the root; children lists are in plane
/// (left-to-right) order, which is identity-relevant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaneTree {
    children: Vec<Vec<usize>>,
}

/// Size, border distance, height, per-node border distances and psi-weight
/// of one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeStats {
    pub n: usize,
    pub border_distance: usize,
    pub height: usize,
    pub per_node_border: Vec<usize>,
    pub weight: BigRational,
}

impl PlaneTree {
    /// The one-node tree.
    pub fn leaf() -> Self {
        PlaneTree { children: vec![Vec::new()] }
    }

    /// Builds a tree from its preorder outdegree sequence.
    pub fn from_preorder_degrees(degrees: &[usize]) -> Result<Self> {
        let n = degrees.len();
        if n == 0 || degrees.iter().sum::<usize>() != n - 1 {
            return Err(Error::Internal("invalid preorder degree sequence".into()));
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        // stack of nodes still waiting for children
        let mut stack: Vec<(usize, usize)> = vec![(0, degrees[0])];
        for v in 1..n {
            while matches!(stack.last(), Some(&(_, 0))) {
                stack.pop();
            }
            let &mut (parent, ref mut remaining) = stack
                .last_mut()
                .ok_or_else(|| Error::Internal("preorder sequence underflow".into()))?;
            children[parent].push(v);
            *remaining -= 1;
            stack.push((v, degrees[v]));
        }
        Ok(PlaneTree { children })
    }

    /// Builds a tree from outdegrees in breadth-first order (the order a
    /// Galton-Watson realization produces them).
    pub fn from_bfs_degrees(degrees: &[usize]) -> Result<Self> {
        let n = degrees.len();
        if n == 0 || degrees.iter().sum::<usize>() != n - 1 {
            return Err(Error::Internal("invalid BFS degree sequence".into()));
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut next = 1;
        for (v, &d) in degrees.iter().enumerate() {
            if next + d > n {
                return Err(Error::Internal("BFS degree sequence overruns size".into()));
            }
            children[v] = (next..next + d).collect();
            next += d;
        }
        if next != n {
            return Err(Error::Internal("BFS degree sequence leaves orphans".into()));
        }
        Ok(PlaneTree { children })
    }

    pub fn node_count(&self) -> usize {
        self.children.len()
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// Parent of each node, -1 for the root; children appear in plane order.
    pub fn parent_array(&self) -> Vec<i64> {
        let mut parents = vec![-1i64; self.node_count()];
        for (v, ch) in self.children.iter().enumerate() {
            for &c in ch {
                parents[c] = v as i64;
            }
        }
        parents
    }

    /// Outdegrees in preorder; inverse of [`Self::from_preorder_degrees`].
    pub fn preorder_degrees(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.node_count());
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            out.push(self.children[v].len());
            for &c in self.children[v].iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// `profile[j]` = number of nodes with outdegree `j`.
    pub fn outdegree_profile(&self) -> Vec<usize> {
        let max = self.children.iter().map(Vec::len).max().unwrap_or(0);
        let mut profile = vec![0usize; max + 1];
        for ch in &self.children {
            profile[ch.len()] += 1;
        }
        profile
    }

    /// Distance to the border: BFS from the root to the nearest leaf.
    pub fn border_distance(&self) -> usize {
        let mut queue = VecDeque::from([(0usize, 0usize)]);
        while let Some((v, d)) = queue.pop_front() {
            if self.children[v].is_empty() {
                return d;
            }
            for &c in &self.children[v] {
                queue.push_back((c, d + 1));
            }
        }
        unreachable!("a finite tree has a leaf")
    }

    /// Distance of every node to the nearest leaf, by multi-source BFS
    /// seeded at the leaf set over the undirected tree (paths may climb
    /// through the parent).
    pub fn per_node_border(&self) -> Vec<usize> {
        let n = self.node_count();
        let parents = self.parent_array();
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for v in 0..n {
            if self.children[v].is_empty() {
                dist[v] = 0;
                queue.push_back(v);
            }
        }
        while let Some(v) = queue.pop_front() {
            let neighbors = self.children[v]
                .iter()
                .copied()
                .chain((parents[v] >= 0).then(|| parents[v] as usize));
            for u in neighbors {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Height: maximum root-to-leaf distance.
    pub fn height(&self) -> usize {
        let mut depth = vec![0usize; self.node_count()];
        let mut max = 0;
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            for &c in &self.children[v] {
                depth[c] = depth[v] + 1;
                max = max.max(depth[c]);
                stack.push(c);
            }
        }
        max
    }
}

/// psi-weight of a tree: the product of `b_j^{k_j}` over the outdegree
/// profile. Zero when the tree occupies an outdegree outside the support.
pub fn weight(fam: &OffspringFamily, tree: &PlaneTree) -> BigRational {
    let mut w = BigRational::one();
    for (j, &count) in tree.outdegree_profile().iter().enumerate() {
        if count == 0 {
            continue;
        }
        let b = fam.coeff(j);
        if b.is_zero() {
            return BigRational::zero();
        }
        w *= num::pow::pow(b, count);
    }
    w
}

/// Computes all per-tree statistics in one pass.
pub fn tree_stats(fam: &OffspringFamily, tree: &PlaneTree) -> TreeStats {
    TreeStats {
        n: tree.node_count(),
        border_distance: tree.border_distance(),
        height: tree.height(),
        per_node_border: tree.per_node_border(),
        weight: weight(fam, tree),
    }
}

/// JSON-lines record of one enumerated tree:
/// `{"n":4,"parents":[-1,0,1,1],"border":2,"weight":"1/6"}`.
pub fn tree_record_jsonl(fam: &OffspringFamily, tree: &PlaneTree) -> String {
    json!({
        "n": tree.node_count(),
        "parents": tree.parent_array(),
        "border": tree.border_distance(),
        "weight": weight(fam, tree).to_string(),
    })
    .to_string()
}

/// Iterator over every rooted plane tree with `n` nodes, exactly once, in
/// a deterministic canonical order (lexicographic on preorder outdegree
/// sequences). There are Catalan(n-1) of them.
pub struct TreeIter {
    sequences: Vec<Vec<u8>>,
    pos: usize,
}

impl Iterator for TreeIter {
    type Item = PlaneTree;

    fn next(&mut self) -> Option<PlaneTree> {
        let seq = self.sequences.get(self.pos)?;
        self.pos += 1;
        let degrees: Vec<usize> = seq.iter().map(|&d| d as usize).collect();
        Some(PlaneTree::from_preorder_degrees(&degrees).expect("generated sequence is valid"))
    }
}

impl ExactSizeIterator for TreeIter {
    fn len(&self) -> usize {
        self.sequences.len() - self.pos
    }
}

/// Enumerates the rooted plane trees with `n` nodes, `1 <= n <= 14`.
pub fn enumerate_trees(n: usize) -> Result<TreeIter> {
    if n == 0 || n > MAX_ENUM_NODES {
        return Err(Error::EnumerationTooLarge { n, cap: MAX_ENUM_NODES });
    }
    let mut sequences = Vec::new();
    let mut seq: Vec<u8> = Vec::with_capacity(n);
    // Choose outdegrees in preorder. With `placed` nodes placed and
    // `pending` subtree slots open, a node may take d children as long as
    // the remaining positions can still host every open slot.
    fn rec(n: usize, placed: usize, pending: usize, seq: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        let remaining = n - placed;
        if remaining == 0 {
            if pending == 0 {
                out.push(seq.clone());
            }
            return;
        }
        if pending == 0 {
            return;
        }
        for d in 0..=(remaining - pending) {
            seq.push(d as u8);
            rec(n, placed + 1, pending - 1 + d, seq, out);
            seq.pop();
        }
    }
    rec(n, 0, 1, &mut seq, &mut sequences);
    Ok(TreeIter { sequences, pos: 0 })
}

/// Exact weighted sums over the enumeration: `U_n` over all size-n trees
/// and `V_n` over those with border distance at least `k`. These must
/// equal `A_n` and `A_n^(k)` from the series routes, bit-exactly.
pub fn aggregate(fam: &OffspringFamily, n: usize, k: usize) -> Result<(BigRational, BigRational)> {
    let mut u = BigRational::zero();
    let mut v = BigRational::zero();
    for tree in enumerate_trees(n)? {
        let w = weight(fam, &tree);
        if w.is_zero() {
            continue;
        }
        if tree.border_distance() >= k {
            v += &w;
        }
        u += w;
    }
    Ok((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::BigInt;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn catalan(n: usize) -> usize {
        // independent small-range oracle for counts
        let mut c: u128 = 1;
        for i in 0..n as u128 {
            c = c * 2 * (2 * i + 1) / (i + 2);
        }
        c as usize
    }

    #[test]
    fn enumeration_counts_are_catalan() {
        for n in 1..=10 {
            let count = enumerate_trees(n).unwrap().count();
            assert_eq!(count, catalan(n - 1), "n={n}");
        }
    }

    #[test]
    fn enumeration_is_exact_and_distinct() {
        let trees: Vec<PlaneTree> = enumerate_trees(5).unwrap().collect();
        assert_eq!(trees.len(), 14);
        let mut seqs: Vec<Vec<usize>> = trees.iter().map(PlaneTree::preorder_degrees).collect();
        seqs.sort();
        seqs.dedup();
        assert_eq!(seqs.len(), 14);
    }

    #[test]
    fn enumeration_rejects_out_of_range() {
        assert!(matches!(enumerate_trees(0), Err(Error::EnumerationTooLarge { .. })));
        assert!(matches!(enumerate_trees(15), Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn three_node_trees() {
        let trees: Vec<PlaneTree> = enumerate_trees(3).unwrap().collect();
        assert_eq!(trees.len(), 2);
        let borders: Vec<usize> = trees.iter().map(PlaneTree::border_distance).collect();
        let mut sorted = borders.clone();
        sorted.sort();
        // the path has border 2, the cherry has border 1
        assert_eq!(sorted, vec![1, 2]);
    }

    #[test]
    fn single_node_tree() {
        let trees: Vec<PlaneTree> = enumerate_trees(1).unwrap().collect();
        assert_eq!(trees.len(), 1);
        let t = &trees[0];
        assert_eq!(t.border_distance(), 0);
        assert_eq!(t.height(), 0);
        assert_eq!(t.per_node_border(), vec![0]);
    }

    #[test]
    fn weights_examples() {
        let path3 = PlaneTree::from_preorder_degrees(&[1, 1, 0]).unwrap();
        let cherry = PlaneTree::from_preorder_degrees(&[2, 0, 0]).unwrap();
        let plane = OffspringFamily::plane();
        assert_eq!(weight(&plane, &path3), rat(1, 1));
        let cayley = OffspringFamily::cayley();
        assert_eq!(weight(&cayley, &path3), rat(1, 1)); // b_0 b_1^2 = 1
        assert_eq!(weight(&cayley, &cherry), rat(1, 2)); // b_0^2 b_2 = 1/2
        let binary = OffspringFamily::binary();
        assert_eq!(weight(&binary, &cherry), rat(1, 1));
        assert_eq!(weight(&binary, &path3), rat(0, 1)); // outdegree 1 unsupported
    }

    #[test]
    fn border_distances_examples() {
        let path3 = PlaneTree::from_preorder_degrees(&[1, 1, 0]).unwrap();
        assert_eq!(path3.border_distance(), 2);
        assert_eq!(path3.height(), 2);
        assert_eq!(path3.per_node_border(), vec![2, 1, 0]);

        let cherry = PlaneTree::from_preorder_degrees(&[2, 0, 0]).unwrap();
        assert_eq!(cherry.border_distance(), 1);

        // complete binary tree of depth 2, preorder
        let complete = PlaneTree::from_preorder_degrees(&[2, 2, 0, 0, 2, 0, 0]).unwrap();
        assert_eq!(complete.border_distance(), 2);
        assert_eq!(complete.per_node_border(), vec![2, 1, 0, 0, 1, 0, 0]);
        assert_eq!(complete.height(), 2);
    }

    #[test]
    fn per_node_border_is_lipschitz_and_consistent() {
        for n in 1..=8 {
            for tree in enumerate_trees(n).unwrap() {
                let d = tree.per_node_border();
                assert_eq!(d.len(), n);
                assert_eq!(d[0], tree.border_distance());
                let parents = tree.parent_array();
                for v in 0..n {
                    if tree.children(v).is_empty() {
                        assert_eq!(d[v], 0);
                    }
                    if parents[v] >= 0 {
                        let p = parents[v] as usize;
                        assert!(d[v].abs_diff(d[p]) <= 1, "edge ({p},{v}) not 1-Lipschitz");
                    }
                }
            }
        }
    }

    #[test]
    fn aggregate_examples() {
        let plane = OffspringFamily::plane();
        assert_eq!(aggregate(&plane, 4, 2).unwrap(), (rat(5, 1), rat(2, 1)));
        assert_eq!(aggregate(&plane, 5, 2).unwrap(), (rat(14, 1), rat(6, 1)));
        let cayley = OffspringFamily::cayley();
        assert_eq!(aggregate(&cayley, 3, 0).unwrap().0, rat(3, 2));
        let binary = OffspringFamily::binary();
        assert_eq!(aggregate(&binary, 7, 2).unwrap(), (rat(5, 1), rat(1, 1)));
    }

    #[test]
    fn aggregate_matches_series_routes() {
        use crate::border::iterate_scheme;
        for fam in [
            OffspringFamily::cayley(),
            OffspringFamily::plane(),
            OffspringFamily::binary(),
            OffspringFamily::motzkin(),
        ] {
            let g = fam.solve_g(10);
            let gks: Vec<_> =
                (0..=4).map(|k| iterate_scheme(&fam, k, 10).unwrap().series).collect();
            for n in 1..=10 {
                for (k, gk) in gks.iter().enumerate() {
                    let (u, v) = aggregate(&fam, n, k).unwrap();
                    assert_eq!(&u, g.coeff(n), "{} U_{n}", fam.name());
                    assert_eq!(&v, gk.coeff(n), "{} V_{n} k={k}", fam.name());
                }
            }
        }
    }

    #[test]
    fn bfs_and_preorder_roundtrip() {
        for n in 1..=7 {
            for tree in enumerate_trees(n).unwrap() {
                let pre = tree.preorder_degrees();
                assert_eq!(PlaneTree::from_preorder_degrees(&pre).unwrap(), tree);
            }
        }
        // BFS construction gives the same multiset of shapes for a sample
        let t = PlaneTree::from_bfs_degrees(&[2, 1, 0, 0]).unwrap();
        assert_eq!(t.children(0), &[1, 2]);
        assert_eq!(t.children(1), &[3]);
        assert!(PlaneTree::from_bfs_degrees(&[2, 1, 0]).is_err());
    }

    #[test]
    fn jsonl_record_shape() {
        let fam = OffspringFamily::cayley();
        let t = PlaneTree::from_preorder_degrees(&[1, 2, 0, 0]).unwrap();
        let line = tree_record_jsonl(&fam, &t);
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["n"], 4);
        assert_eq!(v["parents"], serde_json::json!([-1, 0, 1, 1]));
        assert_eq!(v["border"], 2);
        assert_eq!(v["weight"], "1/2");
    }
}
