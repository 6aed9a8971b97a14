//! Optimized unary encoding (OUE) frequency oracle.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::domain::{Histogram, HistogramBasis};
use crate::error::{Error, Result};
use crate::seed::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OueParams {
    epsilon: f64,
    domain_size: usize,
    p: f64,
    q: f64,
}

impl OueParams {
    pub fn new(epsilon: f64, domain_size: usize) -> Result<Self> {
        if !(epsilon > 0.0) || epsilon.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if domain_size == 0 {
            return Err(Error::InvalidArgument(
                "OUE domain must be non-empty".into(),
            ));
        }
        Ok(Self {
            epsilon,
            domain_size,
            p: 0.5,
            q: 1.0 / (epsilon.exp() + 1.0),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn domain_size(&self) -> usize {
        self.domain_size
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// Column sums `y` of the perturbed bit vectors of `n` users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateReport {
    pub y: Vec<u64>,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyEstimate {
    pub frequencies: Vec<f64>,
    /// Set when no user contributed; the frequencies are then all zero.
    pub empty: bool,
}

pub fn oue_perturb<R: Rng + ?Sized>(
    value: usize,
    params: &OueParams,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if value >= params.domain_size {
        return Err(Error::InvalidArgument(format!(
            "value {value} outside OUE domain of size {}",
            params.domain_size
        )));
    }
    Ok((0..params.domain_size)
        .map(|j| rng.random_bool(if j == value { params.p } else { params.q }))
        .collect())
}

pub fn oue_aggregate(report: &AggregateReport, params: &OueParams) -> FrequencyEstimate {
    if report.n == 0 {
        return FrequencyEstimate {
            frequencies: vec![0.0; report.y.len()],
            empty: true,
        };
    }
    let n = report.n as f64;
    let scale = n * (params.p - params.q);
    let frequencies = report
        .y
        .iter()
        .map(|&y| (y as f64 - n * params.q) / scale)
        .collect();
    FrequencyEstimate {
        frequencies,
        empty: false,
    }
}

/// `4 e^ε / (e^ε − 1)^2`, the OUE variance for a single user.
pub fn oue_unit_variance(epsilon: f64) -> f64 {
    let e = epsilon.exp();
    4.0 * e / ((e - 1.0) * (e - 1.0))
}

/// Per-value variance of the OUE estimator with `n` contributing users.
pub fn oue_variance(epsilon: f64, n: u64) -> f64 {
    debug_assert!(epsilon > 0.0 && n >= 1);
    oue_unit_variance(epsilon) / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimulationMode {
    /// `y_j = Bin(c_j, p) + Bin(n − c_j, q)`.
    #[default]
    Binomial,
    /// Perturb every user's one-hot vector and sum.
    PerUser,
}

/// Simulates the aggregate of `n` users whose category counts are `counts`.
/// Users outside every category (`n > Σ counts`) report an all-zero vector.
pub fn simulate_counts<R: Rng + ?Sized>(
    counts: &[u64],
    n: u64,
    params: &OueParams,
    mode: SimulationMode,
    rng: &mut R,
) -> AggregateReport {
    debug_assert!(counts.iter().sum::<u64>() <= n);
    let y = match mode {
        SimulationMode::Binomial => counts
            .iter()
            .map(|&c| binomial(c, params.p, rng) + binomial(n - c, params.q, rng))
            .collect(),
        SimulationMode::PerUser => {
            let mut y = vec![0u64; counts.len()];
            let hot_users = counts
                .iter()
                .enumerate()
                .flat_map(|(v, &c)| (0..c).map(move |_| Some(v)));
            let cold_users = (0..n - counts.iter().sum::<u64>()).map(|_| None);
            for hot in hot_users.chain(cold_users) {
                for (j, yj) in y.iter_mut().enumerate() {
                    let p = if Some(j) == hot { params.p } else { params.q };
                    *yj += rng.random_bool(p) as u64;
                }
            }
            y
        }
    };
    AggregateReport { y, n }
}

pub fn oue_simulate_aggregate<R: Rng + ?Sized>(
    true_counts: &Histogram,
    params: &OueParams,
    mode: SimulationMode,
    rng: &mut R,
) -> Result<AggregateReport> {
    if true_counts.basis != HistogramBasis::TrueCounts {
        return Err(Error::Contract(
            "simulation needs a true-count histogram".into(),
        ));
    }
    if true_counts.counts.len() != params.domain_size {
        return Err(Error::InvalidArgument(format!(
            "histogram has {} entries, OUE domain is {}",
            true_counts.counts.len(),
            params.domain_size
        )));
    }
    let counts: Vec<u64> = true_counts.counts.iter().map(|&c| c as u64).collect();
    let n = counts.iter().sum();
    Ok(simulate_counts(&counts, n, params, mode, rng))
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 {
        return 0;
    }
    Binomial::new(n, p)
        .expect("probability in [0, 1]")
        .sample(rng)
}

/// A frequency oracle over a categorical domain.
///
/// `counts[j]` is the number of the `n` users holding category `j`; users
/// counted in no category hold a value outside the measured set.
pub trait FrequencyOracle: Send + Sync {
    fn estimate(
        &self,
        counts: &[u64],
        n: u64,
        epsilon: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>>;

    /// Per-category estimator variance with `n` users.
    fn variance(&self, epsilon: f64, n: u64) -> f64;

    /// `n · variance(ε, n)`.
    fn unit_variance(&self, epsilon: f64) -> f64;

    /// Whether a tree must split its users across levels. A noiseless oracle
    /// protects nobody, so every level may see the whole population.
    fn partitions_users(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Oue {
    pub mode: SimulationMode,
}

impl FrequencyOracle for Oue {
    fn estimate(
        &self,
        counts: &[u64],
        n: u64,
        epsilon: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        let params = OueParams::new(epsilon, counts.len())?;
        let report = simulate_counts(counts, n, &params, self.mode, rng);
        Ok(oue_aggregate(&report, &params).frequencies)
    }

    fn variance(&self, epsilon: f64, n: u64) -> f64 {
        oue_variance(epsilon, n.max(1))
    }

    fn unit_variance(&self, epsilon: f64) -> f64 {
        oue_unit_variance(epsilon)
    }
}

/// Noiseless oracle returning exact frequencies with zero variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactOracle;

impl FrequencyOracle for ExactOracle {
    fn estimate(
        &self,
        counts: &[u64],
        n: u64,
        _epsilon: f64,
        _rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        if n == 0 {
            return Ok(vec![0.0; counts.len()]);
        }
        Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
    }

    fn variance(&self, _epsilon: f64, _n: u64) -> f64 {
        0.0
    }

    fn unit_variance(&self, _epsilon: f64) -> f64 {
        0.0
    }

    fn partitions_users(&self) -> bool {
        false
    }
}
