//! Adaptive tree construction and per-node grouping and smoothing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::StreamBatch;
use crate::error::{Error, Result};
use crate::oracle::{oue_variance, FrequencyOracle};
use crate::seed::StreamRng;
use crate::tree::{estimate_tree, node_position, PrivateTree, PrunedSkeleton};

/// Largest pruning threshold for which halving a subtree of height `h`
/// cannot increase its total estimation error.
pub fn theta1_threshold(epsilon_2: f64, h: usize, n_group: u64) -> Result<f64> {
    if h == 0 || h >= 63 {
        return Err(Error::InvalidArgument(format!(
            "subtree height {h} outside 1..63"
        )));
    }
    theta1_from_variance(oue_variance(epsilon_2, n_group.max(1)), h)
}

/// The same threshold for a per-node estimator variance `var`.
pub fn theta1_from_variance(var: f64, h: usize) -> Result<f64> {
    if h == 0 || h >= 63 {
        return Err(Error::InvalidArgument(format!(
            "subtree height {h} outside 1..63"
        )));
    }
    let top = (1u64 << (h + 1)) as f64;
    let factor = (top - 3.0) / (top - 1.0);
    Ok((factor * var).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Theta1 {
    #[default]
    Derived,
    Fixed(f64),
}

impl Theta1 {
    pub fn value(&self, epsilon_2: f64, h: usize, n_group: u64) -> Result<f64> {
        match *self {
            Theta1::Derived => theta1_threshold(epsilon_2, h, n_group),
            Theta1::Fixed(v) => Ok(v),
        }
    }
}

/// Prunes top-down on the noisy tree, re-estimates the kept structure at
/// `epsilon_2`, and re-inflates pruned nodes by halving.
pub fn atc(
    noisy: &PrivateTree,
    theta1: Theta1,
    epsilon_2: f64,
    batch: &StreamBatch,
    oracle: &dyn FrequencyOracle,
    rng: &mut StreamRng,
) -> Result<(PrivateTree, PrunedSkeleton)> {
    let domain = *noisy.domain();
    let height = domain.height();
    let n_group = (batch.n() / height.max(1)).max(1) as u64;
    let mut kept = vec![false; domain.node_count()];
    kept[0] = true;
    for id in 0..domain.padded_size() - 1 {
        if !kept[id] {
            continue;
        }
        let (level, _) = node_position(id);
        let threshold = match theta1 {
            Theta1::Derived => {
                theta1_from_variance(oracle.variance(epsilon_2, n_group), height - level)?
            }
            Theta1::Fixed(v) => v,
        };
        if noisy.properties()[id] >= threshold {
            kept[2 * id + 1] = true;
            kept[2 * id + 2] = true;
        }
    }
    let skeleton = PrunedSkeleton::from_kept(domain, kept)?;
    let tree = estimate_tree(batch, &domain, epsilon_2, Some(&skeleton), oracle, rng)?;
    Ok((tree, skeleton))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub t: u64,
    pub estimate: f64,
    pub variance: f64,
}

/// One node's group `T_a` of recent raw estimates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeGroup {
    members: VecDeque<Member>,
    sum: f64,
    var_sum: f64,
}

impl NodeGroup {
    pub fn from_members(members: impl IntoIterator<Item = Member>) -> Self {
        let members: VecDeque<Member> = members.into_iter().collect();
        let sum = members.iter().map(|m| m.estimate).sum();
        let var_sum = members.iter().map(|m| m.variance).sum();
        Self {
            members,
            sum,
            var_sum,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = &Member> {
        self.members.iter()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.t).collect()
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.len() as f64
    }

    /// Variance of the member mean.
    pub fn mean_variance(&self) -> f64 {
        self.var_sum / (self.len() * self.len()) as f64
    }

    fn reset(&mut self, m: Member) {
        self.members.clear();
        self.members.push_back(m);
        self.sum = m.estimate;
        self.var_sum = m.variance;
    }

    fn push(&mut self, m: Member, cap: usize) {
        self.members.push_back(m);
        if self.members.len() > cap {
            self.members.pop_front();
            self.sum = self.members.iter().map(|m| m.estimate).sum();
            self.var_sum = self.members.iter().map(|m| m.variance).sum();
        } else {
            self.sum += m.estimate;
            self.var_sum += m.variance;
        }
    }
}

/// Groups for every node of the tree, each capped at `cap` members.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    groups: Vec<NodeGroup>,
    cap: usize,
}

impl GroupState {
    pub fn new(node_count: usize, cap: usize) -> Self {
        Self {
            groups: vec![NodeGroup::default(); node_count],
            cap: cap.max(1),
        }
    }

    pub fn group(&self, id: usize) -> &NodeGroup {
        &self.groups[id]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.groups.iter().map(NodeGroup::len).collect()
    }
}

/// Bias-corrected squared deviation of a new estimate from the group mean.
/// Subtracts the variance of `ĝ₀ − mean`, which is `(l+1)/l · var` when all
/// members share one variance.
pub fn sigma_hat(new_estimate: f64, new_variance: f64, group: &NodeGroup) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::Contract("sigma_hat needs a non-empty group".into()));
    }
    let l = group.len() as f64;
    let dev = new_estimate - group.mean();
    Ok(dev * dev - (new_variance + group.var_sum / (l * l)))
}

/// `(1/l²)·[(l+1)²·var_now − Σ_{i=0}^{l} var_i]`, with `var_0 = var_now`.
pub fn theta2_threshold(l: usize, var_now: f64, var_members: &[f64]) -> Result<f64> {
    if l == 0 || var_members.len() != l {
        return Err(Error::InvalidArgument(format!(
            "theta2 needs l >= 1 member variances, got l={l} and {} values",
            var_members.len()
        )));
    }
    let lf = l as f64;
    let total = var_now + var_members.iter().sum::<f64>();
    Ok(((lf + 1.0) * (lf + 1.0) * var_now - total) / (lf * lf))
}

/// Extends or resets each node's group with the new estimate and releases
/// the group mean.
pub fn group_smooth(
    new_tree: &PrivateTree,
    groups: &mut GroupState,
    t: u64,
) -> Result<PrivateTree> {
    if groups.groups.len() != new_tree.len() {
        *groups = GroupState::new(new_tree.len(), groups.cap);
    }
    let mut properties = Vec::with_capacity(new_tree.len());
    let mut variances = Vec::with_capacity(new_tree.len());
    for (id, group) in groups.groups.iter_mut().enumerate() {
        let m = Member {
            t,
            estimate: new_tree.properties()[id],
            variance: new_tree.variances()[id],
        };
        if group.is_empty() {
            group.reset(m);
        } else {
            let dev = sigma_hat(m.estimate, m.variance, group)?;
            let member_vars: Vec<f64> = group.members().map(|x| x.variance).collect();
            let threshold = theta2_threshold(group.len(), m.variance, &member_vars)?;
            if dev <= threshold {
                group.push(m, groups.cap);
            } else {
                group.reset(m);
            }
        }
        properties.push(group.mean());
        variances.push(group.mean_variance());
    }
    Ok(PrivateTree::from_parts(new_tree, properties, variances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ValueDomain;
    use crate::oracle::{ExactOracle, Oue};
    use crate::seed::derive_rng;
    use crate::tree::{build_exact_tree, node_id, Provenance};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn theta1_special_values() {
        let v = oue_variance(0.5, 1000);
        assert!((theta1_threshold(0.5, 1, 1000).unwrap() - (v / 3.0).sqrt()).abs() < 1e-15);
        let far = theta1_threshold(0.5, 40, 1000).unwrap();
        assert!((far - v.sqrt()).abs() < 1e-9 * v.sqrt());
        for h in 1..40 {
            assert!(theta1_threshold(0.5, h, 1000).unwrap() <= v.sqrt());
        }
        assert!(theta1_threshold(0.5, 0, 1000).is_err());
    }

    #[test]
    fn pruned_error_bound_meets_full_error_at_threshold() {
        // With f0 = theta1: err2 <= var + (2^{h+1} − 1)·theta1² and err1 = 2(2^h − 1)·var.
        for h in 1..=3 {
            for var in [1e-4, 3e-3, 0.2] {
                let theta = ((2f64.powi(h + 1) - 3.0) / (2f64.powi(h + 1) - 1.0) * var).sqrt();
                let err1 = 2.0 * (2f64.powi(h) - 1.0) * var;
                let bound = var + (2f64.powi(h + 1) - 1.0) * theta * theta;
                assert!(bound <= err1 * (1.0 + 1e-12), "h={h} var={var}");
                // Exact err2 for f0 = theta split evenly below node a.
                let mut err2 = 0.0;
                for i in 1..=h {
                    let fi = theta / 2f64.powi(i);
                    let scale = 2f64.powi(2 * i);
                    err2 += 2f64.powi(i)
                        * ((var + theta * theta) / scale - theta * fi / 2f64.powi(i - 1) + fi * fi);
                }
                assert!(err2 <= bound + 1e-15);
            }
        }
    }

    #[test]
    fn theta2_closed_forms() {
        let v = 0.37;
        assert!((theta2_threshold(1, v, &[v]).unwrap() - 2.0 * v).abs() < 1e-15);
        for l in 1..20 {
            let got = theta2_threshold(l, v, &vec![v; l]).unwrap();
            let expected = v * (l as f64 + 1.0) / l as f64;
            assert!((got - expected).abs() < 1e-14);
        }
        assert!(theta2_threshold(2, v, &[v]).is_err());
        assert!(theta2_threshold(1, 0.01, &[1.0]).unwrap() < 0.0);
    }

    #[test]
    fn theta2_matches_independent_sum() {
        let mut rng = derive_rng(1, &[]);
        for _ in 0..200 {
            let l = rng.random_range(1..30);
            let vars: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let now = rng.random::<f64>();
            let mut s = now;
            for v in &vars {
                s += v;
            }
            let oracle = ((l + 1) * (l + 1)) as f64 * now / (l * l) as f64 - s / (l * l) as f64;
            assert!((theta2_threshold(l, now, &vars).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_threshold_keeps_full_tree() {
        let dom = ValueDomain::new(8).unwrap();
        let values: Vec<u32> = (0..8000).map(|i| (i % 3) as u32).collect();
        let b = StreamBatch::from_values(1, &values, &dom).unwrap();
        let noisy = build_exact_tree(&b, &dom);
        let (tree, sk) = atc(
            &noisy,
            Theta1::Fixed(0.0),
            1.0,
            &b,
            &Oue::default(),
            &mut derive_rng(2, &[]),
        )
        .unwrap();
        assert_eq!(sk.kept_count(), 15);
        assert!(tree.provenance()[1..]
            .iter()
            .all(|&p| p == Provenance::Measured));
    }

    #[test]
    fn fig3_cold_branch_is_reinflated() {
        let dom = ValueDomain::new(4).unwrap();
        let values: Vec<u32> = (0..1000)
            .map(|i| if i < 980 { (i % 2) as u32 } else { 2 })
            .collect();
        let b = StreamBatch::from_values(1, &values, &dom).unwrap();
        let noisy = build_exact_tree(&b, &dom);
        let (tree, sk) = atc(
            &noisy,
            Theta1::Fixed(0.1),
            1.0,
            &b,
            &ExactOracle,
            &mut derive_rng(3, &[]),
        )
        .unwrap();
        assert!(sk.is_kept(node_id(1, 1)) && !sk.is_kept(node_id(2, 2)));
        let parent = tree.property(1, 1);
        assert_eq!(tree.property(2, 2), parent / 2.0);
        assert_eq!(tree.property(2, 3), parent / 2.0);
        assert_eq!(
            tree.provenance()[node_id(2, 3)],
            Provenance::InferredFromParent
        );
        // The kept leaves are measured from the two-level partition.
        assert!((tree.property(2, 0) - 0.49).abs() < 0.05);
    }

    #[test]
    fn huge_threshold_leaves_only_root() {
        let dom = ValueDomain::new(8).unwrap();
        let b = StreamBatch::from_values(1, &[1, 2, 3], &dom).unwrap();
        let noisy = build_exact_tree(&b, &dom);
        let (tree, sk) = atc(
            &noisy,
            Theta1::Fixed(2.0),
            1.0,
            &b,
            &Oue::default(),
            &mut derive_rng(4, &[]),
        )
        .unwrap();
        assert_eq!(sk.kept_count(), 1);
        assert!(tree.leaves().iter().all(|&x| x == 0.125));
    }

    #[test]
    fn atc_output_is_prefix_closed_and_halved() {
        let dom = ValueDomain::new(16).unwrap();
        let mut rng = derive_rng(5, &[]);
        for trial in 0..50 {
            let values: Vec<u32> = (0..2000).map(|_| rng.random_range(0..16)).collect();
            let b = StreamBatch::from_values(1, &values, &dom).unwrap();
            let noisy = estimate_tree(&b, &dom, 0.5, None, &Oue::default(), &mut rng).unwrap();
            let (tree, sk) =
                atc(&noisy, Theta1::Derived, 0.5, &b, &Oue::default(), &mut rng).unwrap();
            for id in 1..tree.len() {
                let parent = (id - 1) / 2;
                assert!(!sk.is_kept(id) || sk.is_kept(parent), "trial {trial}");
                if !sk.is_kept(id) {
                    assert_eq!(tree.properties()[id], tree.properties()[parent] / 2.0);
                }
            }
        }
    }

    #[test]
    fn first_publication_is_released_verbatim() {
        let dom = ValueDomain::new(4).unwrap();
        let t =
            PrivateTree::from_leaf_estimates(dom, &[0.1, 0.2, 0.3, 0.4], 0.01, 1, 10, 1.0).unwrap();
        let mut groups = GroupState::new(7, 20);
        let out = group_smooth(&t, &mut groups, 1).unwrap();
        assert_eq!(out.properties(), t.properties());
        assert!(groups.lengths().iter().all(|&l| l == 1));
    }

    #[test]
    fn sigma_hat_requires_members_and_is_plain_without_noise() {
        assert!(sigma_hat(0.1, 0.0, &NodeGroup::default()).is_err());
        let mut g = NodeGroup::default();
        g.reset(Member {
            t: 1,
            estimate: 0.2,
            variance: 0.0,
        });
        g.push(
            Member {
                t: 2,
                estimate: 0.4,
                variance: 0.0,
            },
            10,
        );
        assert!((sigma_hat(0.5, 0.0, &g).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn stationary_groups_grow_and_jumps_reset() {
        let dom = ValueDomain::new(2).unwrap();
        let var: f64 = 1e-4;
        let normal = Normal::new(0.0, var.sqrt()).unwrap();
        let mut rng = derive_rng(6, &[]);
        let mut groups = GroupState::new(3, 50);
        let mut lengths = Vec::new();
        for t in 1..=30u64 {
            let level = if t <= 20 { 0.3 } else { 0.8 };
            let x = level + normal.sample(&mut rng);
            let tree =
                PrivateTree::from_leaf_estimates(dom, &[x, 1.0 - x], var, t, 100, 1.0).unwrap();
            let out = group_smooth(&tree, &mut groups, t).unwrap();
            lengths.push(groups.group(1).len());
            if t == 21 {
                assert_eq!(groups.group(1).timestamps(), vec![21]);
                assert!((out.property(1, 0) - 0.8).abs() < 0.05);
            }
        }
        assert!(
            lengths[19] > 5,
            "stationary group only reached {}",
            lengths[19]
        );
    }

    #[test]
    fn group_length_is_capped() {
        let dom = ValueDomain::new(2).unwrap();
        let mut groups = GroupState::new(3, 4);
        for t in 1..=10 {
            let tree =
                PrivateTree::from_leaf_estimates(dom, &[0.5, 0.5], 0.01, t, 100, 1.0).unwrap();
            group_smooth(&tree, &mut groups, t).unwrap();
        }
        assert_eq!(groups.group(1).timestamps(), vec![7, 8, 9, 10]);
        assert!((groups.group(1).sum() - 2.0).abs() < 1e-12);
    }
}
