//! Private binary trees over the padded value domain.
//!
//! Nodes are stored in heap order: the node at `(level, index)` lives at
//! `2^level − 1 + index`, its children at `2i + 1` and `2i + 2`. Node
//! properties are frequencies relative to the batch's active users.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::domain::{StreamBatch, ValueDomain};
use crate::error::{Error, Result};
use crate::oracle::FrequencyOracle;
use crate::seed::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Measured,
    InferredFromParent,
    CopiedFromPreviousRelease,
    Exact,
}

pub fn node_id(level: usize, index: usize) -> usize {
    (1usize << level) - 1 + index
}

pub fn node_position(id: usize) -> (usize, usize) {
    let level = (usize::BITS - 1 - (id + 1).leading_zeros()) as usize;
    (level, id + 1 - (1usize << level))
}

pub fn parent_id(id: usize) -> Option<usize> {
    (id > 0).then(|| (id - 1) / 2)
}

/// Inclusive value interval `[lo, hi]` covered by a node.
pub fn node_interval(domain: &ValueDomain, level: usize, index: usize) -> (usize, usize) {
    let width = 1usize << (domain.height() - level);
    (index * width, (index + 1) * width - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub level: usize,
    pub index: usize,
    pub lo: usize,
    pub hi: usize,
    pub property: f64,
    pub variance: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivateTree {
    domain: ValueDomain,
    properties: Vec<f64>,
    variances: Vec<f64>,
    provenance: Vec<Provenance>,
    budget_used: f64,
    n_active: usize,
    timestamp: u64,
    uneven_partition: bool,
}

impl PrivateTree {
    /// All-zero tree, used as the release preceding the first timestamp.
    pub fn zeros(domain: ValueDomain, timestamp: u64) -> Self {
        let len = domain.node_count();
        Self {
            domain,
            properties: vec![0.0; len],
            variances: vec![0.0; len],
            provenance: vec![Provenance::Exact; len],
            budget_used: 0.0,
            n_active: 0,
            timestamp,
            uneven_partition: false,
        }
    }

    /// Tree whose internal nodes are exact sums of the given leaf
    /// estimates. Padding leaves are pinned to zero with zero variance.
    pub fn from_leaf_estimates(
        domain: ValueDomain,
        leaves: &[f64],
        leaf_variance: f64,
        timestamp: u64,
        n_active: usize,
        budget_used: f64,
    ) -> Result<Self> {
        let p = domain.padded_size();
        if leaves.len() != domain.size() && leaves.len() != p {
            return Err(Error::InvalidArgument(format!(
                "{} leaf estimates for a domain of size {}",
                leaves.len(),
                domain.size()
            )));
        }
        let mut tree = Self::zeros(domain, timestamp);
        let first_leaf = p - 1;
        for v in 0..domain.size() {
            tree.properties[first_leaf + v] = leaves[v];
            tree.variances[first_leaf + v] = leaf_variance;
        }
        for id in (0..first_leaf).rev() {
            tree.properties[id] = tree.properties[2 * id + 1] + tree.properties[2 * id + 2];
            tree.variances[id] = tree.variances[2 * id + 1] + tree.variances[2 * id + 2];
        }
        tree.provenance
            .iter_mut()
            .for_each(|p| *p = Provenance::Measured);
        tree.budget_used = budget_used;
        tree.n_active = n_active;
        Ok(tree)
    }

    pub(crate) fn from_parts(
        template: &PrivateTree,
        properties: Vec<f64>,
        variances: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(properties.len(), template.properties.len());
        Self {
            properties,
            variances,
            ..template.clone()
        }
    }

    /// Republishes this tree at `timestamp` without spending budget.
    pub fn copied(&self, timestamp: u64, n_active: usize) -> Self {
        Self {
            provenance: vec![Provenance::CopiedFromPreviousRelease; self.properties.len()],
            budget_used: 0.0,
            n_active,
            timestamp,
            ..self.clone()
        }
    }

    pub fn domain(&self) -> &ValueDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.properties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }

    pub fn properties(&self) -> &[f64] {
        &self.properties
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn property(&self, level: usize, index: usize) -> f64 {
        self.properties[node_id(level, index)]
    }

    pub fn leaves(&self) -> &[f64] {
        &self.properties[self.domain.padded_size() - 1..]
    }

    pub fn budget_used(&self) -> f64 {
        self.budget_used
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    /// True when users could not be split evenly across the measured levels.
    pub fn uneven_partition(&self) -> bool {
        self.uneven_partition
    }

    pub fn node(&self, id: usize) -> TreeNode {
        let (level, index) = node_position(id);
        let (lo, hi) = node_interval(&self.domain, level, index);
        TreeNode {
            level,
            index,
            lo,
            hi,
            property: self.properties[id],
            variance: self.variances[id],
            provenance: self.provenance[id],
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = TreeNode> + '_ {
        (0..self.len()).map(|id| self.node(id))
    }

    pub fn to_dump(&self) -> TreeDump {
        TreeDump {
            timestamp: self.timestamp,
            d: self.domain.size(),
            n_active: self.n_active,
            budget_used: self.budget_used,
            nodes: self.nodes().collect(),
        }
    }

    pub fn from_dump(dump: &TreeDump) -> Result<Self> {
        let domain = ValueDomain::new(dump.d)?;
        if dump.nodes.len() != domain.node_count() {
            return Err(Error::InvalidArgument(format!(
                "dump at t={} has {} nodes, expected {}",
                dump.timestamp,
                dump.nodes.len(),
                domain.node_count()
            )));
        }
        let mut tree = Self::zeros(domain, dump.timestamp);
        for node in &dump.nodes {
            if node.level > domain.height() || node.index >= 1 << node.level {
                return Err(Error::InvalidArgument(format!(
                    "node ({}, {}) outside tree of height {}",
                    node.level,
                    node.index,
                    domain.height()
                )));
            }
            let id = node_id(node.level, node.index);
            tree.properties[id] = node.property;
            tree.variances[id] = node.variance;
            tree.provenance[id] = node.provenance;
        }
        tree.n_active = dump.n_active;
        tree.budget_used = dump.budget_used;
        Ok(tree)
    }
}

/// Serialised form of a tree: a flat node array plus release metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub timestamp: u64,
    pub d: usize,
    pub n_active: usize,
    pub budget_used: f64,
    pub nodes: Vec<TreeNode>,
}

pub fn build_exact_tree(batch: &StreamBatch, domain: &ValueDomain) -> PrivateTree {
    let p = domain.padded_size();
    let mut counts = vec![0u64; domain.node_count()];
    for v in batch.values() {
        counts[p - 1 + v as usize] += 1;
    }
    for id in (0..p - 1).rev() {
        counts[id] = counts[2 * id + 1] + counts[2 * id + 2];
    }
    let n = batch.n();
    let mut tree = PrivateTree::zeros(*domain, batch.t());
    if n > 0 {
        tree.properties = counts.iter().map(|&c| c as f64 / n as f64).collect();
    }
    tree.n_active = n;
    tree
}

/// Prefix-closed set of kept nodes; everything else is pruned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedSkeleton {
    domain: ValueDomain,
    kept: Vec<bool>,
}

impl PrunedSkeleton {
    pub fn full(domain: ValueDomain) -> Self {
        Self {
            domain,
            kept: vec![true; domain.node_count()],
        }
    }

    pub fn from_kept(domain: ValueDomain, kept: Vec<bool>) -> Result<Self> {
        if kept.len() != domain.node_count() {
            return Err(Error::InvalidArgument(
                "skeleton length does not match tree".into(),
            ));
        }
        if !kept[0] {
            return Err(Error::InvalidArgument("skeleton must keep the root".into()));
        }
        for id in 1..kept.len() {
            if kept[id] && !kept[(id - 1) / 2] {
                let (l, i) = node_position(id);
                return Err(Error::InvalidArgument(format!(
                    "node ({l}, {i}) kept below a pruned parent"
                )));
            }
        }
        Ok(Self { domain, kept })
    }

    pub fn domain(&self) -> &ValueDomain {
        &self.domain
    }

    pub fn is_kept(&self, id: usize) -> bool {
        self.kept[id]
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Indices (within the level) of kept nodes at `level`.
    pub fn level_nodes(&self, level: usize) -> Vec<usize> {
        (0..1usize << level)
            .filter(|&i| self.kept[node_id(level, i)])
            .collect()
    }

    /// Non-root levels holding at least one kept node.
    pub fn measured_levels(&self) -> Vec<usize> {
        (1..=self.domain.height())
            .filter(|&l| !self.level_nodes(l).is_empty())
            .collect()
    }
}

/// Estimates a tree from a batch: users are shuffled into one group per
/// measured level and each group answers one oracle invocation over that
/// level's kept nodes at budget `epsilon`. Pruned nodes are re-inflated as
/// half their parent.
pub fn estimate_tree(
    batch: &StreamBatch,
    domain: &ValueDomain,
    epsilon: f64,
    structure: Option<&PrunedSkeleton>,
    oracle: &dyn FrequencyOracle,
    rng: &mut StreamRng,
) -> Result<PrivateTree> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let full;
    let skeleton = match structure {
        Some(s) if s.domain() == domain => s,
        Some(_) => return Err(Error::InvalidArgument("skeleton domain mismatch".into())),
        None => {
            full = PrunedSkeleton::full(*domain);
            &full
        }
    };
    let h = domain.height();
    let levels = skeleton.measured_levels();
    let mut values: Vec<u32> = batch.values().collect();
    values.shuffle(rng);
    let level_seeds: Vec<u64> = levels.iter().map(|_| rng.random()).collect();

    let n = values.len();
    let partition = oracle.partitions_users();
    let m = if partition { levels.len().max(1) } else { 1 };
    let (base, extra) = (n / m, n % m);

    let mut tree = PrivateTree::zeros(*domain, batch.t());
    tree.n_active = n;
    tree.budget_used = epsilon;
    tree.uneven_partition = extra != 0;
    tree.properties[0] = if n > 0 { 1.0 } else { 0.0 };

    let mut start = 0;
    for (k, (&level, &seed)) in levels.iter().zip(&level_seeds).enumerate() {
        let (group, size) = if partition {
            let size = base + usize::from(k < extra);
            start += size;
            (&values[start - size..start], size)
        } else {
            (&values[..], n)
        };

        let mut level_counts = vec![0u64; 1 << level];
        for &v in group {
            level_counts[v as usize >> (h - level)] += 1;
        }
        let kept = skeleton.level_nodes(level);
        let counts: Vec<u64> = kept.iter().map(|&i| level_counts[i]).collect();
        let mut level_rng = StreamRng::seed_from_u64(seed);
        let estimates = oracle.estimate(&counts, size as u64, epsilon, &mut level_rng)?;
        let variance = oracle.variance(epsilon, size as u64);
        for (&i, f) in kept.iter().zip(estimates) {
            let id = node_id(level, i);
            tree.properties[id] = f;
            tree.variances[id] = variance;
            tree.provenance[id] = Provenance::Measured;
        }
    }

    for id in 1..tree.len() {
        if !skeleton.is_kept(id) {
            let parent = (id - 1) / 2;
            tree.properties[id] = tree.properties[parent] / 2.0;
            tree.variances[id] = tree.variances[parent] / 4.0;
            tree.provenance[id] = Provenance::InferredFromParent;
        }
    }
    Ok(tree)
}

/// Canonical decomposition of `[v1, v2]` into the fewest tree nodes,
/// returned left to right as `(level, index)` pairs.
pub fn minimum_cover(domain: &ValueDomain, v1: usize, v2: usize) -> Result<Vec<(usize, usize)>> {
    if v1 > v2 || v2 >= domain.size() {
        return Err(Error::InvalidArgument(format!(
            "range [{v1}, {v2}] invalid for domain of size {}",
            domain.size()
        )));
    }
    fn descend(
        level: usize,
        index: usize,
        lo: usize,
        hi: usize,
        range: (usize, usize),
        out: &mut Vec<(usize, usize)>,
    ) {
        if hi < range.0 || lo > range.1 {
            return;
        }
        if range.0 <= lo && hi <= range.1 {
            out.push((level, index));
            return;
        }
        let mid = lo + (hi - lo) / 2;
        descend(level + 1, 2 * index, lo, mid, range, out);
        descend(level + 1, 2 * index + 1, mid + 1, hi, range, out);
    }
    let mut out = Vec::new();
    descend(0, 0, 0, domain.padded_size() - 1, (v1, v2), &mut out);
    Ok(out)
}

/// Count estimate for the union of `cover`: summed properties times `n_t`.
pub fn tree_answer(tree: &PrivateTree, cover: &[(usize, usize)]) -> f64 {
    let sum: f64 = cover.iter().map(|&(l, i)| tree.property(l, i)).sum();
    sum * tree.n_active() as f64
}
