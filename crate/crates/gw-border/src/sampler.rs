//! Monte Carlo verification engine: simulates the Galton-Watson process
//! `T_t`, conditions on total progeny by rejection (valid at any tilt `t`
//! because the conditional law does not depend on it), and estimates the
//! border-distance probability and the mean protected-node proportion.
//!
//! Determinism: attempts are partitioned into a fixed number of strata,
//! each owning a counter-based ChaCha12 stream keyed by `(seed, stratum)`.
//! Strata run in parallel and are merged in stratum order, so reports are
//! bit-identical for every worker count.

use num::BigRational;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::border::exact_conditional_prob;
use crate::error::{Error, Result};
use crate::family::OffspringFamily;
use crate::oracle::PlaneTree;
use crate::series::{rat_log2, rat_to_f64};

/// Fixed stratum count; independent of the thread count by design.
pub const STRATA: usize = 64;
/// Largest target size for which an exact reference ratio is attached.
pub const EXACT_REFERENCE_LIMIT: usize = 1024;
/// 97.5% normal quantile used for the 95% confidence interval.
pub const Z_95: f64 = 1.959964;

/// Configuration of a conditioned simulation run.
#[derive(Clone, Debug)]
pub struct GWConfig {
    pub family: OffspringFamily,
    /// Tilt parameter; `None` uses the apex (which maximizes acceptance).
    pub t: Option<f64>,
    /// Required tree size; must satisfy `target_n % span == 1`.
    pub target_n: usize,
    /// Protection level.
    pub k: usize,
    /// Accepted-sample budget.
    pub samples: usize,
    /// Cap on total attempts across all strata.
    pub max_attempts: u64,
    pub seed: u64,
    /// Node cap for free-running tree sampling; conditioned runs abort an
    /// attempt as soon as it exceeds `target_n` regardless.
    pub node_cap: Option<usize>,
}

impl GWConfig {
    pub fn new(family: OffspringFamily, target_n: usize, k: usize, samples: usize) -> Self {
        GWConfig {
            family,
            t: None,
            target_n,
            k,
            samples,
            max_attempts: 400_000_000,
            seed: 0,
            node_cap: None,
        }
    }
}

/// Point estimate with a 95% confidence interval and run statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    /// Estimate of `P(border distance >= k | size = n)`.
    pub p_hat: f64,
    pub ci_half_width: f64,
    pub accepted: u64,
    pub attempts: u64,
    /// Exact `A_n^(k)/A_n` when `target_n` is small enough to compute.
    pub exact_reference: Option<BigRational>,
    /// Mean of (protected nodes)/n over accepted trees, with its CI.
    pub mean_protected_fraction: f64,
    pub mean_protected_ci: f64,
    /// Set when the attempt budget ran out before the sample budget.
    pub insufficient: bool,
    pub target_n: usize,
    pub k: usize,
    pub t: f64,
    pub seed: u64,
    /// Rough cost prediction: expected attempts per accepted sample.
    pub expected_attempts_per_accept: f64,
}

impl EstimateReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "p_hat": self.p_hat,
            "ci95": self.ci_half_width,
            "accepted": self.accepted,
            "attempts": self.attempts,
            "exact": self.exact_reference.as_ref().map(|r| r.to_string()),
            "exact_float": self.exact_reference.as_ref().map(rat_to_f64),
            "mean_protected": {
                "estimate": self.mean_protected_fraction,
                "ci95": self.mean_protected_ci,
            },
            "insufficient": self.insufficient,
            "target": { "n": self.target_n, "k": self.k },
            "t": self.t,
            "seed": self.seed,
            "expected_attempts_per_accept": self.expected_attempts_per_accept,
        })
    }
}

/// Inverse-CDF table of the tilted offspring law `P(Y_t = j) = b_j t^j / psi(t)`,
/// truncated where the remaining mass is below 1e-15 (exact and finite for
/// polynomial families).
#[derive(Clone, Debug)]
pub struct OffspringTable {
    cdf: Vec<f64>,
}

impl OffspringTable {
    pub fn new(fam: &OffspringFamily, t: f64) -> Result<Self> {
        let pgf = fam.tilted_pgf(t)?;
        let mut cdf = Vec::with_capacity(pgf.trunc() + 1);
        let mut acc = 0.0;
        for &p in pgf.coeffs() {
            acc += p;
            cdf.push(acc);
        }
        Ok(OffspringTable { cdf })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }
}

/// Draws one offspring count by inverse-CDF lookup.
pub fn sample_offspring(table: &OffspringTable, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    // The table is short and front-loaded; a linear scan beats binary
    // search here. Truncated tail mass (< 1e-15) maps to the last entry.
    for (j, &c) in table.cdf.iter().enumerate() {
        if u < c {
            return j;
        }
    }
    table.cdf.len() - 1
}

/// Outcome of one free-running tree realization.
#[derive(Clone, Debug)]
pub enum TreeSample {
    Tree(PlaneTree),
    /// The attempt exceeded the node cap; a value, not a fault.
    Overflow { nodes: usize },
}

/// The per-stratum RNG: ChaCha12 keyed by the run seed with the stratum
/// index as the stream id (documented in the README; fixed across
/// platforms).
pub fn rng_for_stream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws offspring counts in breadth-first order until the population dies
/// out or `limit` nodes are exceeded. Returns the BFS degree sequence.
fn sample_degrees(
    table: &OffspringTable,
    limit: usize,
    rng: &mut impl Rng,
    degrees: &mut Vec<usize>,
) -> Option<usize> {
    degrees.clear();
    let mut total = 1usize;
    let mut pending = 1usize;
    while pending > 0 {
        let d = sample_offspring(table, rng);
        degrees.push(d);
        total += d;
        pending += d;
        pending -= 1;
        if total > limit {
            return None;
        }
    }
    Some(total)
}

/// Realizes one Galton-Watson tree at tilt `t` as a plane tree, BFS order.
pub fn sample_tree(
    fam: &OffspringFamily,
    t: f64,
    node_cap: usize,
    rng: &mut impl Rng,
) -> Result<TreeSample> {
    let table = OffspringTable::new(fam, t)?;
    let mut degrees = Vec::new();
    match sample_degrees(&table, node_cap, rng, &mut degrees) {
        Some(_) => Ok(TreeSample::Tree(
            PlaneTree::from_bfs_degrees(&degrees).expect("sampled degrees form a tree"),
        )),
        None => Ok(TreeSample::Overflow { nodes: node_cap + 1 }),
    }
}

#[derive(Clone, Copy, Default)]
struct StratumResult {
    attempts: u64,
    accepted: u64,
    successes: u64,
    frac_sum: f64,
    frac_sq_sum: f64,
}

fn run_stratum(
    table: &OffspringTable,
    target_n: usize,
    k: usize,
    quota: u64,
    attempt_cap: u64,
    seed: u64,
    stream: u64,
) -> StratumResult {
    let mut rng = rng_for_stream(seed, stream);
    let mut res = StratumResult::default();
    let mut degrees: Vec<usize> = Vec::with_capacity(target_n);
    while res.accepted < quota && res.attempts < attempt_cap {
        res.attempts += 1;
        match sample_degrees(table, target_n, &mut rng, &mut degrees) {
            Some(total) if total == target_n => {
                res.accepted += 1;
                let tree =
                    PlaneTree::from_bfs_degrees(&degrees).expect("sampled degrees form a tree");
                let border = tree.per_node_border();
                if border[0] >= k {
                    res.successes += 1;
                }
                let protected = border.iter().filter(|&&d| d >= k).count();
                let frac = protected as f64 / target_n as f64;
                res.frac_sum += frac;
                res.frac_sq_sum += frac * frac;
            }
            _ => {}
        }
    }
    res
}

fn resolve_tilt(cfg: &GWConfig) -> Result<f64> {
    match cfg.t {
        Some(t) => {
            let hi = cfg.family.radius();
            if !(t > 0.0 && t < hi) {
                return Err(Error::ParamOutOfRange { t, lo: f64::MIN_POSITIVE, hi });
            }
            Ok(t)
        }
        None => Ok(cfg.family.apex()?.tau),
    }
}

/// Predicted attempts per accepted sample. Uses the exact acceptance
/// probability `A_n t^{n-1}/psi(t)^n` when the exact series is in reach,
/// the Otter approximation `sqrt(2 pi) sigma n^{3/2} / Q` at the apex
/// otherwise.
fn expected_attempts(fam: &OffspringFamily, t: f64, n: usize) -> f64 {
    if n <= EXACT_REFERENCE_LIMIT {
        let g = fam.solve_g(n);
        let a_n = g.coeff(n);
        if !num::Zero::is_zero(a_n) {
            let l = rat_log2(a_n) + (n as f64 - 1.0) * t.log2() - n as f64 * fam.psi(t).log2();
            return (-l).exp2();
        }
    }
    match fam.apex() {
        Ok(kq) => {
            (2.0 * std::f64::consts::PI).sqrt() * kq.sigma_tau * (n as f64).powf(1.5)
                / kq.span as f64
        }
        Err(_) => f64::NAN,
    }
}

fn estimate_engine(cfg: &GWConfig) -> Result<EstimateReport> {
    let span = cfg.family.span();
    if cfg.target_n == 0 || cfg.target_n % span != 1 % span {
        return Err(Error::InvalidResidueClass { n: cfg.target_n, span });
    }
    if cfg.samples == 0 {
        return Err(Error::Unsupported("the sample budget must be positive".into()));
    }
    let t = resolve_tilt(cfg)?;
    let table = OffspringTable::new(&cfg.family, t)?;

    let strata = STRATA as u64;
    let samples = cfg.samples as u64;
    let per_quota = samples / strata;
    let quota_rem = samples % strata;
    let per_cap = cfg.max_attempts / strata;
    let cap_rem = cfg.max_attempts % strata;

    let results: Vec<StratumResult> = (0..strata)
        .into_par_iter()
        .map(|s| {
            let quota = per_quota + u64::from(s < quota_rem);
            let cap = per_cap + u64::from(s < cap_rem);
            run_stratum(&table, cfg.target_n, cfg.k, quota, cap, cfg.seed, s)
        })
        .collect();

    let mut total = StratumResult::default();
    for r in results {
        total.attempts += r.attempts;
        total.accepted += r.accepted;
        total.successes += r.successes;
        total.frac_sum += r.frac_sum;
        total.frac_sq_sum += r.frac_sq_sum;
    }

    let accepted = total.accepted;
    let (p_hat, ci) = if accepted > 0 {
        let p = total.successes as f64 / accepted as f64;
        (p, Z_95 * (p * (1.0 - p) / accepted as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    let (mean_frac, mean_ci) = if accepted > 0 {
        let mean = total.frac_sum / accepted as f64;
        let ci = if accepted > 1 {
            let var = (total.frac_sq_sum - accepted as f64 * mean * mean)
                / (accepted as f64 - 1.0);
            Z_95 * (var.max(0.0) / accepted as f64).sqrt()
        } else {
            0.0
        };
        (mean, ci)
    } else {
        (0.0, 0.0)
    };

    let exact_reference = if cfg.target_n <= EXACT_REFERENCE_LIMIT {
        exact_conditional_prob(&cfg.family, cfg.k, cfg.target_n).ok()
    } else {
        None
    };

    Ok(EstimateReport {
        p_hat,
        ci_half_width: ci,
        accepted,
        attempts: total.attempts,
        exact_reference,
        mean_protected_fraction: mean_frac,
        mean_protected_ci: mean_ci,
        insufficient: accepted < samples,
        target_n: cfg.target_n,
        k: cfg.k,
        t,
        seed: cfg.seed,
        expected_attempts_per_accept: expected_attempts(&cfg.family, t, cfg.target_n),
    })
}

/// Estimates `P(border distance >= k | size = target_n)` by rejection at
/// tilt `t`, attaching the exact reference ratio when computable.
pub fn conditioned_estimate(cfg: &GWConfig) -> Result<EstimateReport> {
    estimate_engine(cfg)
}

/// Estimates the mean proportion of nodes at distance at least `k` from
/// every leaf, over size-conditioned trees. The `k = 0` case is exactly 1.
pub fn mean_protected(cfg: &GWConfig) -> Result<EstimateReport> {
    estimate_engine(cfg)
}
