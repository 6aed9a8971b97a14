//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use mtsp_core::adaptive::{atc, group_smooth, sigma_hat, GroupState, Member, NodeGroup, Theta1};
use mtsp_core::allocator::{
    oba_allocate, oba_allocate_fast, publication_error, DissimilarityWindow, PublicationTable,
};
use mtsp_core::budget::{audit, Budget, BudgetLedger, Decision, LedgerEntry};
use mtsp_core::dissimilarity::{estimate_dissimilarity, true_dissimilarity, DissimilarityRecord};
use mtsp_core::eval::{EvalPlan, MonitorPlan};
use mtsp_core::grid::{
    run_experiment_grid, CellResult, DatasetSource, GridConfig, GridResult, RunOptions,
};
use mtsp_core::oracle::{oue_unit_variance, oue_variance, FrequencyOracle, Oue};
use mtsp_core::pipeline::{run_method, Method, OracleKind, RunConfig};
use mtsp_core::query::{
    counting_query, exact_monitor_statistic, monitor, range_query, raw_range_count, BaseQuery,
    MonitorOutcome, MonitorSpec,
};
use mtsp_core::seed::derive_rng;
use mtsp_core::synth::{
    synthesize_stream, BaseDistribution, ChangeKind, ChangePoint, SyntheticSpec,
};
use mtsp_core::tree::{build_exact_tree, estimate_tree, minimum_cover, node_interval, PrivateTree};
use mtsp_core::{StreamBatch, StreamDataset, ValueDomain};

const MASTER_SEED: u64 = 20_240_601;

/// Two-sided z bound for unbiasedness checks.
const SIGMA_BOUND: f64 = 3.0;
/// One-sided 5% critical value of Student's t with 499 degrees of freedom.
const T_CRIT_499: f64 = 1.648;

const C1_EPSILONS: [f64; 3] = [0.5, 1.0, 2.0];
const C1_N: u64 = 50_000;
const C1_D: usize = 16;
const C1_TRIALS: usize = 2_000;
const C1_VARIANCE_TOLERANCE: f64 = 0.15;

const C2_EPS1: f64 = 0.025;
const C2_PLANTED: [f64; 3] = [0.0, 0.01, 0.05];
const C2_TRIALS: usize = 2_000;
const C2_N: usize = 50_000;
const C2_CONSTRUCTION_TOLERANCE: f64 = 1e-12;

const C3_LENGTHS: [usize; 3] = [1, 3, 8];
const C3_TRIALS: usize = 2_000;
const C3_N: u64 = 10_000;
const C3_EPSILON: f64 = 1.0;

const C4_WINDOWS: [usize; 3] = [5, 20, 50];
const C4_CASES: usize = 10_000;

const C5_DOMAINS: [usize; 3] = [8, 16, 32];

const C6_MIN_WINDOWS: usize = 10_000;

const C7_TRIALS: usize = 500;
const C7_N: usize = 50_000;
const C7_MASS: f64 = 0.9;
const C7_EPS: f64 = 0.5;

const C8_TRIALS: usize = 500;
const C8_SEGMENT: usize = 8;
const C8_N: usize = 20_000;
const C8_EPS2: f64 = 0.5;

const C9_SEEDS: u64 = 20;

const C10_EPSILONS: [f64; 4] = [0.5, 1.0, 2.0, 5.0];
const C10_WINDOWS: [usize; 3] = [10, 20, 50];
const C10_SEEDS: u64 = 10;
const C10_ALLOWED_INVERSIONS: usize = 1;

const C11_SEEDS: u64 = 20;
const C11_EVENTS: u64 = 10;
const C11_SPACING: u64 = 50;
const C11_DELTA: usize = 5;
const C11_LABEL_FRACTION: f64 = 0.5;

const C12_D: usize = 16;
const C12_T: usize = 32;
const C12_W: usize = 4;
const C12_TOLERANCE: f64 = 1e-6;

const C13_W: usize = 1_000;
const C13_STEPS: usize = 2_000;
const C13_MIN_SPEEDUP: f64 = 20.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn values_from_counts(counts: &[usize]) -> Vec<u32> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(v, &c)| std::iter::repeat_n(v as u32, c))
        .collect()
}

/// Splits `n` over `weights` by largest remainder.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn ramp_weights(d: usize) -> Vec<f64> {
    (1..=d).map(|i| i as f64).collect()
}

// 1. OUE mean and variance.
fn c1() -> Outcome {
    let counts: Vec<u64> = apportion(C1_N as usize, &ramp_weights(C1_D))
        .into_iter()
        .map(|c| c as u64)
        .collect();
    let truth: Vec<f64> = counts.iter().map(|&c| c as f64 / C1_N as f64).collect();
    let oracle = Oue::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (ei, &eps) in C1_EPSILONS.iter().enumerate() {
        let runs: Vec<Vec<f64>> = (0..C1_TRIALS)
            .into_par_iter()
            .map(|trial| {
                let mut rng = derive_rng(MASTER_SEED, &[1, ei as u64, trial as u64]);
                oracle
                    .estimate(&counts, C1_N, eps, &mut rng)
                    .expect("estimate")
            })
            .collect();
        let formula = oue_variance(eps, C1_N);
        let mut bias_sum = 0.0;
        let mut max_z: f64 = 0.0;
        let mut var_sum = 0.0;
        let mut exact_var_sum = 0.0;
        let e = eps.exp();
        let (p, q) = (0.5, 1.0 / (e + 1.0));
        for v in 0..C1_D {
            let column: Vec<f64> = runs.iter().map(|r| r[v]).collect();
            let (m, sd) = mean_sd(&column);
            bias_sum += m - truth[v];
            max_z = max_z.max((m - truth[v]).abs() / (formula / C1_TRIALS as f64).sqrt());
            var_sum += sd * sd;
            let nv = counts[v] as f64;
            let n = C1_N as f64;
            exact_var_sum +=
                (nv * p * (1.0 - p) + (n - nv) * q * (1.0 - q)) / (n * (p - q)).powi(2);
        }
        let pooled_z = bias_sum / (C1_D as f64 * formula / C1_TRIALS as f64).sqrt();
        let ratio = var_sum / C1_D as f64 / formula;
        let exact_ratio = var_sum / exact_var_sum;
        let ok = pooled_z.abs() <= SIGMA_BOUND && (ratio - 1.0).abs() <= C1_VARIANCE_TOLERANCE;
        pass &= ok;
        parts.push(format!(
            "eps={eps}: pooled z={pooled_z:+.2} (max bit |z|={max_z:.2}), var/formula={ratio:.3}, var/exact={exact_ratio:.3}"
        ));
    }
    outcome(pass, parts.join("; "))
}

// 2. Dissimilarity estimator is unbiased.
fn c2() -> Outcome {
    let dom = ValueDomain::new(16).unwrap();
    let values = values_from_counts(&apportion(C2_N, &ramp_weights(16)));
    let batch = StreamBatch::from_values(1, &values, &dom).unwrap();
    let exact = build_exact_tree(&batch, &dom);
    let nodes = exact.len() as f64;
    let oracle = Oue::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (pi, &planted) in C2_PLANTED.iter().enumerate() {
        // Alternating sibling offsets leave every internal node unchanged.
        let delta = (planted * nodes / dom.padded_size() as f64).sqrt();
        let leaves: Vec<f64> = exact
            .leaves()
            .iter()
            .enumerate()
            .map(|(v, x)| x + if v % 2 == 0 { delta } else { -delta })
            .collect();
        let prev = PrivateTree::from_leaf_estimates(dom, &leaves, 0.0, 0, C2_N, 0.0).unwrap();
        let constructed = true_dissimilarity(&exact, &prev).unwrap();
        let built_ok = (constructed - planted).abs() <= C2_CONSTRUCTION_TOLERANCE;
        let dis: Vec<f64> = (0..C2_TRIALS)
            .into_par_iter()
            .map(|trial| {
                let mut rng = derive_rng(MASTER_SEED, &[2, pi as u64, trial as u64]);
                let noisy = estimate_tree(&batch, &dom, C2_EPS1, None, &oracle, &mut rng).unwrap();
                estimate_dissimilarity(&noisy, &prev, C2_EPS1)
                    .unwrap()
                    .dis_hat
            })
            .collect();
        let (m, sd) = mean_sd(&dis);
        let se = sd / (C2_TRIALS as f64).sqrt();
        let z = (m - planted) / se;
        pass &= built_ok && z.abs() <= SIGMA_BOUND;
        parts.push(format!("dis={planted}: mean={m:.5} se={se:.5} z={z:+.2}"));
    }
    outcome(pass, parts.join("; "))
}

// 3. Group deviation statistic is unbiased.
fn c3() -> Outcome {
    let oracle = Oue::default();
    let variance = oracle.variance(C3_EPSILON, C3_N);
    let member_counts: BTreeMap<usize, Vec<u64>> = BTreeMap::from([
        (1, vec![200]),
        (3, vec![180, 200, 220]),
        (8, vec![170, 230, 190, 210, 200, 200, 185, 215]),
    ]);
    let current = 358u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for &l in &C3_LENGTHS {
        let members = &member_counts[&l];
        let group_mean = members.iter().sum::<u64>() as f64 / l as f64 / C3_N as f64;
        let planted = (current as f64 / C3_N as f64 - group_mean).powi(2);
        let stats: Vec<f64> = (0..C3_TRIALS)
            .into_par_iter()
            .map(|trial| {
                let mut rng = derive_rng(MASTER_SEED, &[3, l as u64, trial as u64]);
                let mut draw = |c: u64| {
                    oracle
                        .estimate(&[c, C3_N - c], C3_N, C3_EPSILON, &mut rng)
                        .unwrap()[0]
                };
                let group = NodeGroup::from_members(
                    members
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| Member {
                            t: i as u64 + 1,
                            estimate: draw(c),
                            variance,
                        })
                        .collect::<Vec<_>>(),
                );
                let now = draw(current);
                sigma_hat(now, variance, &group).unwrap()
            })
            .collect();
        let (m, sd) = mean_sd(&stats);
        let se = sd / (C3_TRIALS as f64).sqrt();
        let z = (m - planted) / se;
        pass &= z.abs() <= SIGMA_BOUND;
        parts.push(format!(
            "l={l}: planted={planted:.3e} mean={m:.3e} z={z:+.2}"
        ));
    }
    outcome(pass, parts.join("; "))
}

fn random_ledger<R: Rng>(rng: &mut R, eps: Budget, w: usize, upto: u64) -> BudgetLedger {
    let mut ledger = BudgetLedger::new(eps, w).unwrap();
    for t in 1..=upto {
        let eps1 = ledger.eps1();
        let entry = if t <= w as u64 {
            LedgerEntry {
                t,
                eps1,
                eps2: eps1,
                k_star: None,
                decision: Decision::Warmup,
            }
        } else {
            let rm = ledger.remaining_publication().nanos();
            let eps2 = match rng.random_range(0..4) {
                0 => 0,
                1 => rm,
                _ => rng.random_range(0..=rm),
            };
            let decision = if eps2 == 0 {
                Decision::Approximate
            } else {
                Decision::Publish
            };
            LedgerEntry {
                t,
                eps1,
                eps2: Budget::from_nanos(eps2),
                k_star: Some(0),
                decision,
            }
        };
        ledger.record(entry).unwrap();
    }
    ledger
}

// 4. Incremental allocator equals brute force.
fn c4() -> Outcome {
    let mut mismatches = 0usize;
    let mut total = 0usize;
    let mut publishes = 0usize;
    for &w in &C4_WINDOWS {
        let results: Vec<(bool, bool)> = (0..C4_CASES)
            .into_par_iter()
            .map(|case| {
                let mut rng = derive_rng(MASTER_SEED, &[4, w as u64, case as u64]);
                let eps_f =
                    [0.5, 1.0, 2.0, 5.0][rng.random_range(0..4)] * rng.random_range(0.5..1.5);
                let eps = Budget::from_epsilon(eps_f).unwrap();
                let n_group = 10f64.powf(rng.random_range(1.0..5.0)) as u64;
                let len = rng.random_range(1..=w);
                let t = (w + 1 + rng.random_range(0..3 * w)) as u64;
                let ledger = random_ledger(&mut rng, eps, w, t - 1);
                let scale = publication_error(1, eps.as_epsilon(), n_group);
                let mut window = DissimilarityWindow::new(w);
                let mut last = 0.0;
                for s in t + 1 - len as u64..=t {
                    let dis = match rng.random_range(0..10) {
                        0..=2 => 0.0,
                        3..=6 => {
                            -scale * rng.random_range(0.0f64..1.0).ln() * rng.random_range(0.1..2.0)
                        }
                        7 | 8 => last,
                        _ => scale * rng.random_range(5.0..50.0),
                    };
                    last = dis;
                    window.push(DissimilarityRecord::new(s, dis, 0.0)).unwrap();
                }
                let table = PublicationTable::new(eps.as_epsilon(), w);
                let mut a = ledger.clone();
                let mut b = ledger;
                let fast = oba_allocate_fast(&window, &mut a, t, n_group, &table).unwrap();
                let brute = oba_allocate(&window, &mut b, t, n_group).unwrap();
                (fast == brute && a.entries() == b.entries(), brute.publish)
            })
            .collect();
        total += results.len();
        mismatches += results.iter().filter(|r| !r.0).count();
        publishes += results.iter().filter(|r| r.1).count();
    }
    outcome(
        mismatches == 0,
        format!("{total} windows, {mismatches} mismatches, {publishes} publications"),
    )
}

fn brute_min_cover(d: usize, v1: usize, v2: usize, h: usize) -> usize {
    // best[i] = fewest dyadic blocks tiling [i, v2].
    let mut best = vec![usize::MAX; v2 + 2];
    best[v2 + 1] = 0;
    for i in (v1..=v2).rev() {
        for level in 0..=h {
            let size = 1usize << (h - level);
            if i % size == 0 && i + size - 1 <= v2 && i + size - 1 < d.next_power_of_two() {
                let rest = best[i + size];
                if rest != usize::MAX {
                    best[i] = best[i].min(rest + 1);
                }
            }
        }
    }
    best[v1]
}

// 5. Minimum cover.
fn c5() -> Outcome {
    let mut failures = 0;
    let mut checked = 0;
    for &d in &C5_DOMAINS {
        let dom = ValueDomain::new(d).unwrap();
        for v1 in 0..d {
            for v2 in v1..d {
                checked += 1;
                let cover = minimum_cover(&dom, v1, v2).unwrap();
                let mut hits = vec![0u32; dom.padded_size()];
                for &(l, i) in &cover {
                    let (lo, hi) = node_interval(&dom, l, i);
                    for v in lo..=hi {
                        hits[v] += 1;
                    }
                }
                let tiles =
                    (0..dom.padded_size()).all(|v| hits[v] == u32::from((v1..=v2).contains(&v)));
                if !tiles || cover.len() != brute_min_cover(d, v1, v2, dom.height()) {
                    failures += 1;
                }
            }
        }
    }
    let dom = ValueDomain::new(8).unwrap();
    let fig: Vec<(usize, usize)> = minimum_cover(&dom, 0, 6)
        .unwrap()
        .into_iter()
        .map(|(l, i)| node_interval(&dom, l, i))
        .collect();
    // e = {0..3}, c = {4, 5}, f = {6}.
    let fig_ok = fig == vec![(0, 3), (4, 5), (6, 6)];
    outcome(
        failures == 0 && fig_ok,
        format!("{checked} intervals, {failures} failures; [0,6] -> {fig:?}"),
    )
}

fn adversarial_stream(seed: u64, d: usize, t_len: usize) -> StreamDataset {
    let dom = ValueDomain::new(d).unwrap();
    let mut rng = derive_rng(MASTER_SEED, &[6, seed]);
    let mut prev: Vec<u32> = Vec::new();
    let mut batches = Vec::with_capacity(t_len);
    for t in 1..=t_len as u64 {
        let n = match rng.random_range(0..10) {
            0 => 0,
            1 => 1,
            2 => 50,
            _ => rng.random_range(200..3000),
        };
        let values: Vec<u32> = match rng.random_range(0..5) {
            0 if !prev.is_empty() => prev.clone(),
            1 => vec![rng.random_range(0..d as u32); n],
            2 => (0..n).map(|_| rng.random_range(0..d as u32)).collect(),
            3 => (0..n)
                .map(|i| {
                    if (i + t as usize).is_multiple_of(2) {
                        0
                    } else {
                        d as u32 - 1
                    }
                })
                .collect(),
            _ => {
                let hot = rng.random_range(0..d as u32);
                (0..n)
                    .map(|_| {
                        if rng.random_bool(0.8) {
                            hot
                        } else {
                            rng.random_range(0..d as u32)
                        }
                    })
                    .collect()
            }
        };
        batches.push(StreamBatch::from_values(t, &values, &dom).unwrap());
        prev = values;
    }
    StreamDataset::new(dom, batches).unwrap()
}

// 6. Every window of every run stays within budget.
fn c6() -> Outcome {
    let mut configs = Vec::new();
    for (si, &eps) in [0.5, 1.0, 3.0].iter().enumerate() {
        for &w in &[1usize, 7, 25] {
            for method in Method::ALL {
                let mut c = RunConfig::new(method, eps, w, si as u64 * 100 + w as u64);
                if method == Method::Mtsp && w == 7 {
                    c.literal_alg1 = true;
                }
                if method == Method::Mtsp && w == 25 {
                    c.exact_oba = true;
                }
                configs.push((si as u64, c));
            }
        }
    }
    let streams: Vec<StreamDataset> = (0..3).map(|s| adversarial_stream(s, 32, 400)).collect();
    let results: Vec<Result<(usize, usize, usize), String>> = configs
        .par_iter()
        .map(|(s, cfg)| {
            let out = run_method(&streams[*s as usize], cfg)
                .map_err(|e| format!("{} {e}", cfg.method))?;
            let entries = out.ledger.entries();
            let report = audit(entries, out.ledger.epsilon(), cfg.w).map_err(|e| e.to_string())?;
            // Independent recount in exact integer arithmetic.
            let cap = Budget::from_epsilon(cfg.epsilon).unwrap().nanos() as u128;
            let mut recount = 0;
            for end in 0..entries.len() {
                let start = end.saturating_sub(cfg.w - 1);
                let spent: u128 = entries[start..=end]
                    .iter()
                    .map(|e| e.eps1.nanos() as u128 + e.eps2.nanos() as u128)
                    .sum();
                if spent > cap {
                    recount += 1;
                }
            }
            Ok((report.windows_checked, report.violations.len(), recount))
        })
        .collect();
    let mut windows = 0;
    let mut violations = 0;
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok((w, v, rc)) => {
                windows += w;
                violations += v + rc;
            }
            Err(e) => errors.push(e),
        }
    }
    outcome(
        errors.is_empty() && violations == 0 && windows >= C6_MIN_WINDOWS,
        format!(
            "{} runs, {windows} windows, {violations} violations, errors: {errors:?}",
            configs.len()
        ),
    )
}

fn paired_t(diffs: &[f64]) -> (f64, f64) {
    let (m, sd) = mean_sd(diffs);
    (m, m / (sd / (diffs.len() as f64).sqrt()))
}

fn leaf_sse(tree: &PrivateTree, truth: &PrivateTree) -> f64 {
    tree.leaves()
        .iter()
        .zip(truth.leaves())
        .map(|(a, b)| (a - b).powi(2))
        .sum()
}

// 7. Pruning lowers leaf error on a skewed stream.
fn c7() -> Outcome {
    let dom = ValueDomain::new(16).unwrap();
    let mut weights = vec![(1.0 - C7_MASS) / 15.0; 16];
    weights[5] = C7_MASS;
    let values = values_from_counts(&apportion(C7_N, &weights));
    let batch = StreamBatch::from_values(1, &values, &dom).unwrap();
    let truth = build_exact_tree(&batch, &dom);
    let oracle = Oue::default();
    let diffs: Vec<(f64, f64)> = (0..C7_TRIALS)
        .into_par_iter()
        .map(|trial| {
            let mut rng = derive_rng(MASTER_SEED, &[7, trial as u64]);
            let noisy = estimate_tree(&batch, &dom, C7_EPS, None, &oracle, &mut rng).unwrap();
            let (pruned, _) =
                atc(&noisy, Theta1::Derived, C7_EPS, &batch, &oracle, &mut rng).unwrap();
            let full = estimate_tree(&batch, &dom, C7_EPS, None, &oracle, &mut rng).unwrap();
            (leaf_sse(&pruned, &truth), leaf_sse(&full, &truth))
        })
        .collect();
    let d: Vec<f64> = diffs.iter().map(|(p, f)| p - f).collect();
    let (mean_diff, t) = paired_t(&d);
    let pruned = diffs.iter().map(|x| x.0).sum::<f64>() / C7_TRIALS as f64;
    let full = diffs.iter().map(|x| x.1).sum::<f64>() / C7_TRIALS as f64;
    outcome(
        t < -T_CRIT_499,
        format!(
            "pruned SSE={pruned:.4e}, full SSE={full:.4e}, mean diff={mean_diff:.3e}, t={t:.2}"
        ),
    )
}

// 8. Smoothing lowers error on stationary segments.
fn c8() -> Outcome {
    let dom = ValueDomain::new(16).unwrap();
    let oracle = Oue::default();
    let diffs: Vec<(f64, f64)> = (0..C8_TRIALS)
        .into_par_iter()
        .map(|trial| {
            let stream = synthesize_stream(&SyntheticSpec {
                d: 16,
                timestamps: C8_SEGMENT,
                users_per_timestamp: C8_N,
                base: BaseDistribution::Zipf { exponent: 1.0 },
                drift: 0.0,
                change_points: vec![],
                permute_ranks: true,
                seed: MASTER_SEED ^ trial as u64,
            })
            .unwrap();
            let mut rng = derive_rng(MASTER_SEED, &[8, trial as u64]);
            let mut groups = GroupState::new(dom.node_count(), 20);
            let (mut raw_se, mut smooth_se, mut count) = (0.0, 0.0, 0usize);
            for batch in stream.dataset.batches() {
                let truth = build_exact_tree(batch, &dom);
                let raw = estimate_tree(batch, &dom, C8_EPS2, None, &oracle, &mut rng).unwrap();
                let smooth = group_smooth(&raw, &mut groups, batch.t()).unwrap();
                for id in 0..truth.len() {
                    raw_se += (raw.properties()[id] - truth.properties()[id]).powi(2);
                    smooth_se += (smooth.properties()[id] - truth.properties()[id]).powi(2);
                    count += 1;
                }
            }
            (smooth_se / count as f64, raw_se / count as f64)
        })
        .collect();
    let d: Vec<f64> = diffs.iter().map(|(s, r)| s - r).collect();
    let (mean_diff, t) = paired_t(&d);
    let smooth = diffs.iter().map(|x| x.0).sum::<f64>() / C8_TRIALS as f64;
    let raw = diffs.iter().map(|x| x.1).sum::<f64>() / C8_TRIALS as f64;
    outcome(
        t < -T_CRIT_499,
        format!(
            "smoothed MSE={smooth:.4e}, raw MSE={raw:.4e}, mean diff={mean_diff:.3e}, t={t:.2}"
        ),
    )
}

fn drifting_spec(d: usize, timestamps: usize, n: usize) -> SyntheticSpec {
    SyntheticSpec {
        d,
        timestamps,
        users_per_timestamp: n,
        base: BaseDistribution::Zipf { exponent: 1.0 },
        drift: 0.02,
        change_points: vec![],
        permute_ranks: true,
        seed: MASTER_SEED,
    }
}

fn counting_grid(
    methods: Vec<Method>,
    epsilons: Vec<f64>,
    windows: Vec<usize>,
    seeds: u64,
) -> GridResult {
    let config = GridConfig {
        methods,
        epsilons,
        windows,
        seeds: (1..=seeds).collect(),
        dataset: DatasetSource::Synthetic {
            spec: drifting_spec(64, 100, 50_000),
            resample_per_seed: true,
        },
        eval: EvalPlan {
            range_tasks: 0,
            ..EvalPlan::default()
        },
        run: RunOptions::default(),
        out_dir: None,
        svg: false,
    };
    run_experiment_grid(&config).expect("grid")
}

fn mae_of(c: &CellResult) -> (f64, f64) {
    c.counting_mae
        .map_or((f64::NAN, f64::NAN), |s| (s.mean, s.stderr))
}

// 9. End-to-end ordering.
fn c9() -> Outcome {
    let result = counting_grid(Method::ALL.to_vec(), vec![1.0], vec![20], C9_SEEDS);
    let failures: usize = result.cells.iter().map(|c| c.failures.len()).sum();
    let mtsp = mae_of(result.cell(Method::Mtsp, 1.0, 20).unwrap()).0;
    let mut pass = failures == 0;
    let mut parts = Vec::new();
    for c in &result.cells {
        let (m, se) = mae_of(c);
        if c.method != Method::Mtsp {
            pass &= mtsp < m;
        }
        parts.push(format!(
            "{}={m:.4e}±{se:.1e} (pub {:.2})",
            c.method,
            c.publication_fraction.map_or(f64::NAN, |s| s.mean)
        ));
    }
    outcome(
        pass,
        format!("{} ; failed runs {failures}", parts.join(", ")),
    )
}

// 10. Error falls with ε and rises with w.
fn c10() -> Outcome {
    let result = counting_grid(
        Method::ALL.to_vec(),
        C10_EPSILONS.to_vec(),
        C10_WINDOWS.to_vec(),
        C10_SEEDS,
    );
    let failures: usize = result.cells.iter().map(|c| c.failures.len()).sum();
    let mut pass = failures == 0;
    let mut parts = Vec::new();
    for method in Method::ALL {
        let get = |e: f64, w: usize| mae_of(result.cell(method, e, w).unwrap());
        let mut steps: Vec<((f64, f64), (f64, f64))> = Vec::new();
        for &w in &C10_WINDOWS {
            for pair in C10_EPSILONS.windows(2) {
                // Expect MAE(larger ε) ≤ MAE(smaller ε).
                steps.push((get(pair[1], w), get(pair[0], w)));
            }
        }
        for &e in &C10_EPSILONS {
            for pair in C10_WINDOWS.windows(2) {
                steps.push((get(e, pair[0]), get(e, pair[1])));
            }
        }
        let inversions: Vec<f64> = steps
            .iter()
            .filter(|(lo, hi)| lo.0 > hi.0)
            .map(|(lo, hi)| (lo.0 - hi.0) / (lo.1.powi(2) + hi.1.powi(2)).sqrt())
            .collect();
        let ok = inversions.len() <= C10_ALLOWED_INVERSIONS && inversions.iter().all(|z| *z <= 1.0);
        pass &= ok;
        let row: Vec<String> = C10_WINDOWS
            .iter()
            .map(|&w| {
                let cells: Vec<String> = C10_EPSILONS
                    .iter()
                    .map(|&e| format!("{:.3e}", get(e, w).0))
                    .collect();
                format!("w{w}[{}]", cells.join(" "))
            })
            .collect();
        parts.push(format!(
            "{method}: {} inversions {:?} {}",
            inversions.len(),
            inversions
                .iter()
                .map(|z| format!("{z:.2}se"))
                .collect::<Vec<_>>(),
            row.join(" ")
        ));
    }
    outcome(
        pass,
        format!("{} ; failed runs {failures}", parts.join(" | ")),
    )
}

// 11. Event monitoring AUC.
fn c11() -> Outcome {
    let (d, n, w) = (64usize, 50_000usize, 20usize);
    let change_points: Vec<ChangePoint> = (1..=C11_EVENTS)
        .map(|i| ChangePoint {
            t: i * C11_SPACING,
            change: ChangeKind::Swap { a: 0, b: 40 },
        })
        .collect();
    let spec = SyntheticSpec {
        d,
        timestamps: (C11_EVENTS * C11_SPACING + 30) as usize,
        users_per_timestamp: n,
        base: BaseDistribution::Zipf { exponent: 1.0 },
        drift: 0.0,
        change_points,
        permute_ranks: false,
        seed: MASTER_SEED,
    };
    let dists = synthesize_stream(&SyntheticSpec {
        users_per_timestamp: 1,
        ..spec.clone()
    })
    .unwrap()
    .distributions;
    let upper = |p: &Vec<f64>| p[d / 2..].iter().sum::<f64>();
    let jump =
        (upper(&dists[C11_SPACING as usize - 1]) - upper(&dists[C11_SPACING as usize - 2])).abs();
    let threshold = C11_LABEL_FRACTION * jump * (n * C11_DELTA) as f64;
    let config = GridConfig {
        methods: vec![Method::Mtsp, Method::Lbu],
        epsilons: vec![1.0],
        windows: vec![w],
        seeds: (1..=C11_SEEDS).collect(),
        dataset: DatasetSource::Synthetic {
            spec,
            resample_per_seed: true,
        },
        eval: EvalPlan {
            range_tasks: 0,
            monitor: Some(MonitorPlan {
                base: BaseQuery::Range {
                    v1: d / 2,
                    v2: d - 1,
                },
                delta: C11_DELTA,
                lag: None,
                label_threshold: Some(threshold),
            }),
            ..EvalPlan::default()
        },
        run: RunOptions::default(),
        out_dir: None,
        svg: false,
    };
    let result = run_experiment_grid(&config).expect("grid");
    let auc = |m: Method| result.cell(m, 1.0, w).unwrap().auc;
    let (mtsp, lbu) = (auc(Method::Mtsp), auc(Method::Lbu));
    let failures: usize = result.cells.iter().map(|c| c.failures.len()).sum();
    let pass = failures == 0
        && matches!((mtsp, lbu), (Some(a), Some(b)) if a.count == C11_SEEDS as usize && b.count == C11_SEEDS as usize && a.mean > b.mean);
    let show = |s: Option<mtsp_core::grid::Summary>| {
        s.map_or("n/a".into(), |s| format!("{:.4}±{:.4}", s.mean, s.stderr))
    };
    outcome(
        pass,
        format!(
            "upper-half jump {jump:.4}, label threshold {threshold:.0}; AUC mtsp={} lbu={}",
            show(mtsp),
            show(lbu)
        ),
    )
}

/// With `repeats`, some timestamps repeat the previous multiset (or double
/// it) and one is empty.
fn c12_stream(repeats: bool) -> StreamDataset {
    let dom = ValueDomain::new(C12_D).unwrap();
    let mut rng = derive_rng(MASTER_SEED, &[12]);
    let mut batches: Vec<StreamBatch> = Vec::new();
    let mut prev: Vec<u32> = Vec::new();
    for t in 1..=C12_T as u64 {
        let values: Vec<u32> = match t {
            9 | 10 | 21 if repeats => prev.clone(),
            11 if repeats => prev.iter().chain(prev.iter()).copied().collect(),
            17 if repeats => Vec::new(),
            _ => {
                let n = rng.random_range(50..400);
                let hot = rng.random_range(0..C12_D as u32);
                (0..n)
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            hot
                        } else {
                            rng.random_range(0..C12_D as u32)
                        }
                    })
                    .collect()
            }
        };
        batches.push(StreamBatch::from_values(t, &values, &dom).unwrap());
        prev = values;
    }
    StreamDataset::new(dom, batches).unwrap()
}

struct SweepResult {
    queries: usize,
    mismatches: usize,
    inexact_releases: Vec<u64>,
}

fn noiseless_sweep(data: &StreamDataset) -> SweepResult {
    let dom = *data.domain();
    let bases: Vec<BaseQuery> = (0..C12_D)
        .map(|v| BaseQuery::Counting { v })
        .chain((0..C12_D).flat_map(|v1| (v1..C12_D).map(move |v2| BaseQuery::Range { v1, v2 })))
        .collect();
    let mut queries = 0usize;
    let mut mismatches = 0usize;
    let mut inexact_releases = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= C12_TOLERANCE;
    for exact_oba in [false, true] {
        let mut cfg = RunConfig::new(Method::Mtsp, 1.0, C12_W, 12);
        cfg.oracle = OracleKind::Exact;
        cfg.exact_oba = exact_oba;
        let out = run_method(data, &cfg).unwrap();
        let series = &out.series;
        for (r, b) in series.releases().iter().zip(data.batches()) {
            let exact = build_exact_tree(b, &dom);
            if r.tree
                .properties()
                .iter()
                .zip(exact.properties())
                .any(|(a, e)| (a - e).abs() > 1e-12)
            {
                inexact_releases.push(r.t);
            }
        }
        for t in 1..=C12_T as u64 {
            for delta in 1..=t as usize {
                for v in 0..dom.size() {
                    queries += 1;
                    let est = counting_query(series, v, delta, t).unwrap();
                    mismatches +=
                        usize::from(!close(est, raw_range_count(data, v, v, delta, t).unwrap()));
                }
                for v1 in 0..dom.size() {
                    for v2 in v1..dom.size() {
                        queries += 1;
                        let est = range_query(series, v1, v2, delta, t).unwrap();
                        mismatches += usize::from(!close(
                            est,
                            raw_range_count(data, v1, v2, delta, t).unwrap(),
                        ));
                    }
                }
            }
        }
        for base in &bases {
            for delta in 1..=C12_W {
                for lag in 1..C12_T {
                    let spec = MonitorSpec::new(*base, delta, lag, 0.0, C12_W).unwrap();
                    for t in 1..=C12_T as u64 {
                        queries += 1;
                        let exact = exact_monitor_statistic(data, &spec, t).unwrap();
                        let got = monitor(series, &spec, t).unwrap();
                        let ok = match (got, exact) {
                            (MonitorOutcome::NotReady, None) => true,
                            (MonitorOutcome::Ready { statistic, .. }, Some(x)) => {
                                close(statistic, x)
                            }
                            _ => false,
                        };
                        mismatches += usize::from(!ok);
                    }
                }
            }
        }
    }
    inexact_releases.sort_unstable();
    inexact_releases.dedup();
    SweepResult {
        queries,
        mismatches,
        inexact_releases,
    }
}

// 12. Noiseless answers are exact.
fn c12() -> Outcome {
    let adversarial = noiseless_sweep(&c12_stream(true));
    let generic = noiseless_sweep(&c12_stream(false));
    let show = |r: &SweepResult| {
        format!(
            "{} queries, {} mismatches, inexact releases at t={:?}",
            r.queries, r.mismatches, r.inexact_releases
        )
    };
    outcome(
        adversarial.mismatches == 0 && generic.mismatches == 0,
        format!(
            "stream with repeats: {}; stream without repeats: {}",
            show(&adversarial),
            show(&generic)
        ),
    )
}

// 13. Allocator cost at w = 1000.
fn c13() -> Outcome {
    let eps = Budget::from_epsilon(1.0).unwrap();
    let n_group: u64 = 12_500;
    let mut rng = derive_rng(MASTER_SEED, &[13]);
    let table = PublicationTable::new(eps.as_epsilon(), C13_W);
    let mut fast_ledger = BudgetLedger::new(eps, C13_W).unwrap();
    for t in 1..=C13_W as u64 {
        let e1 = fast_ledger.eps1();
        fast_ledger
            .record(LedgerEntry {
                t,
                eps1: e1,
                eps2: e1,
                k_star: None,
                decision: Decision::Warmup,
            })
            .unwrap();
    }
    let mut brute_ledger = fast_ledger.clone();
    let mut window = DissimilarityWindow::new(C13_W);
    let unit = oue_unit_variance(eps.as_epsilon() / 2.0) / n_group as f64;
    let (mut fast_time, mut brute_time) = (Duration::ZERO, Duration::ZERO);
    let mut disagreements = 0;
    for step in 1..=C13_STEPS as u64 {
        let t = C13_W as u64 + step;
        let dis = if rng.random_bool(0.05) {
            unit * rng.random_range(1.0..20.0)
        } else {
            (unit * 0.02 * rng.random_range(-1.0f64..1.0)).max(0.0)
        };
        window.push(DissimilarityRecord::new(t, dis, 0.0)).unwrap();
        let start = Instant::now();
        let a = oba_allocate_fast(&window, &mut fast_ledger, t, n_group, &table).unwrap();
        fast_time += start.elapsed();
        let start = Instant::now();
        let b = oba_allocate(&window, &mut brute_ledger, t, n_group).unwrap();
        brute_time += start.elapsed();
        disagreements += usize::from(a != b);
    }
    let speedup = brute_time.as_secs_f64() / fast_time.as_secs_f64();
    outcome(
        speedup >= C13_MIN_SPEEDUP && disagreements == 0,
        format!(
            "fast {:.2} µs/step, brute {:.2} µs/step, speedup {speedup:.0}x, {disagreements} disagreements",
            fast_time.as_secs_f64() * 1e6 / C13_STEPS as f64,
            brute_time.as_secs_f64() * 1e6 / C13_STEPS as f64
        ),
    )
}

fn main() {
    let criteria: [(u8, &str, fn() -> Outcome); 13] = [
        (1, "OUE mean and variance", c1),
        (2, "dissimilarity unbiased", c2),
        (3, "group deviation unbiased", c3),
        (4, "fast allocator equals brute force", c4),
        (5, "minimum cover", c5),
        (6, "window budget audit", c6),
        (7, "pruning benefit", c7),
        (8, "smoothing benefit", c8),
        (9, "end-to-end ordering", c9),
        (10, "trends in epsilon and w", c10),
        (11, "monitor AUC", c11),
        (12, "noiseless exactness", c12),
        (13, "allocator cost", c13),
    ];
    let selected: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {id:>2} {name} [{:.1}s]: {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
