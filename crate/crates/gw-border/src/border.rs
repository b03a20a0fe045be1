//! The iteration scheme `g_k(z) = z (psi(g_{k-1}(z)) - b_0)` and everything
//! built on it: exact coefficients `A_n^(k)` of trees whose distance to the
//! border is at least `k`, exact conditional probabilities `A_n^(k)/A_n`,
//! the limit constants `c_k` (the `w`-partial of the k-th iterate of
//! `G(z,w) = z(psi(w) - b_0)` at `(rho, tau)`), the generalized index-set
//! scheme, and the closed forms known for plane and binary trees.

use std::collections::BTreeSet;

use num::{BigRational, One, Zero};
use serde_json::json;

use crate::error::{Error, Result};
use crate::family::OffspringFamily;
use crate::fmt::sig15;
use crate::series::{rat_to_f64, ExactSeries};

/// Cap on `k` for exact series iteration (memory: k series of `trunc`
/// rationals are live in sequence).
pub const EXACT_K_CAP: usize = 512;
/// Cap on `k` for the scalar limit-constant recurrence; `c_k` underflows
/// f64 long before this.
pub const SCALAR_K_CAP: usize = 10_000;

/// The exact series of `g_k`, whose coefficients are `A_n^(k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BorderSeries {
    pub k: usize,
    pub series: ExactSeries,
}

/// The limit `c_k` of `A_n^(k)/A_n` together with the scalar trajectory
/// `g_j(rho)` that produced it and, when the family has one, the paper
/// closed form.
#[derive(Clone, Debug)]
pub struct LimitConstant {
    pub k: usize,
    pub value: f64,
    pub trajectory: Vec<f64>,
    pub closed_form: Option<f64>,
}

/// One row of a convergence table.
#[derive(Clone, Debug)]
pub struct BorderRow {
    pub n: usize,
    pub a_n: BigRational,
    pub a_n_k: BigRational,
    pub ratio: BigRational,
    /// `|ratio - c_k|` as a float.
    pub gap: f64,
}

/// Exact ratios `A_n^(k)/A_n` over the valid residue class, with the limit.
#[derive(Clone, Debug)]
pub struct BorderTable {
    pub k: usize,
    pub span: usize,
    pub limit: f64,
    pub rows: Vec<BorderRow>,
}

impl BorderTable {
    /// CSV with header `n,A_n,A_n_k,ratio,gap`, LF line endings. Exact
    /// values print as `p/q` (bare integer when the denominator is 1).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,A_n,A_n_k,ratio,gap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                r.a_n,
                r.a_n_k,
                r.ratio,
                sig15(r.gap)
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "k": self.k,
            "span": self.span,
            "limit": self.limit,
            "rows": self.rows.iter().map(|r| json!({
                "n": r.n,
                "a_n": r.a_n.to_string(),
                "a_n_k": r.a_n_k.to_string(),
                "ratio": r.ratio.to_string(),
                "ratio_float": rat_to_f64(&r.ratio),
                "gap": r.gap,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Runs the iteration scheme: `g_0 = g`, `g_k = z (psi(g_{k-1}) - b_0)`,
/// exactly, truncated at `trunc`.
pub fn iterate_scheme(fam: &OffspringFamily, k: usize, trunc: usize) -> Result<BorderSeries> {
    if k > EXACT_K_CAP {
        return Err(Error::KTooLarge { k, cap: EXACT_K_CAP });
    }
    let b0 = ExactSeries::constant(fam.coeff(0), trunc);
    let mut series = fam.solve_g(trunc);
    for _ in 0..k {
        series = fam.compose_psi(&series)?.sub(&b0).shift_up();
    }
    Ok(BorderSeries { k, series })
}

/// `P(border distance >= k | size = n)` as the exact rational
/// `A_n^(k)/A_n`; independent of the tilt parameter.
pub fn exact_conditional_prob(fam: &OffspringFamily, k: usize, n: usize) -> Result<BigRational> {
    let span = fam.span();
    if n == 0 || n % span != 1 % span {
        return Err(Error::InvalidResidueClass { n, span });
    }
    let g = fam.solve_g(n);
    let a_n = g.coeff(n).clone();
    if a_n.is_zero() {
        return Err(Error::Unsupported(format!(
            "A_{n} = 0 for family `{}`; the conditional law is undefined",
            fam.name()
        )));
    }
    if k == 0 {
        return Ok(BigRational::one());
    }
    let gk = iterate_scheme(fam, k, n)?;
    Ok(gk.series.coeff(n) / a_n)
}

/// The limit constant `c_k` via the chain-rule product
/// `c_k = rho^k prod_{j<k} psi'(g_j(rho))`, with `g_0(rho) = tau` seeded
/// from the apex identity `g(rho) = tau` and the scalar recurrence
/// `g_j(rho) = rho (psi(g_{j-1}(rho)) - b_0)`.
pub fn limit_constant(fam: &OffspringFamily, k: usize) -> Result<LimitConstant> {
    if k > SCALAR_K_CAP {
        return Err(Error::KTooLarge { k, cap: SCALAR_K_CAP });
    }
    let kq = fam.apex()?;
    let b0 = rat_to_f64(&fam.coeff(0));
    let mut x = kq.tau;
    let mut value = 1.0;
    let mut trajectory = Vec::with_capacity(k);
    for j in 0..k {
        let d = fam.psi_prime(x);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Internal(format!(
                "psi'(g_{j}(rho)) = {d} vanished along the trajectory"
            )));
        }
        value *= kq.rho * d;
        trajectory.push(x);
        x = kq.rho * (fam.psi(x) - b0);
    }
    Ok(LimitConstant { k, value, trajectory, closed_form: closed_form_limit(fam, k) })
}

/// The paper closed forms: `9 * 4^k / (2 + 4^k)^2` for plane trees and
/// `2^(k - 2^k + 1)` for binary trees; `None` elsewhere.
fn closed_form_limit(fam: &OffspringFamily, k: usize) -> Option<f64> {
    match fam.name() {
        "plane" => {
            // stable for large k: 9 q / (1 + 2q)^2 with q = 4^{-k}
            let q = (-(k as f64) * 4.0f64.ln()).exp();
            Some(9.0 * q / ((1.0 + 2.0 * q) * (1.0 + 2.0 * q)))
        }
        "binary" => Some(((k as f64) + 1.0 - (k as f64).exp2()).exp2()),
        _ => None,
    }
}

/// `c_k` for Cayley trees by the paper recurrence
/// `c_k = (1/e) e^{G_{k-1}(1/e, 1)} c_{k-1}`, `c_0 = 1`, tracking
/// `G_j(1/e, 1)` alongside.
pub fn cayley_recurrence(k: usize) -> f64 {
    let e_inv = std::f64::consts::E.recip();
    let mut g = 1.0; // G_0(1/e, 1) = 1
    let mut c = 1.0;
    for _ in 0..k {
        c *= e_inv * g.exp();
        g = e_inv * (g.exp() - 1.0);
    }
    c
}

/// Generic float iteration of `G(z, w) = z (psi(w) - b_0)` in the second
/// variable.
pub fn iterate_value(fam: &OffspringFamily, z: f64, w: f64, k: usize) -> f64 {
    let b0 = rat_to_f64(&fam.coeff(0));
    let mut x = w;
    for _ in 0..k {
        x = z * (fam.psi(x) - b0);
    }
    x
}

/// `dG_k/dw (z, w)` by the chain-rule product
/// `prod_{j<k} z psi'(G_j(z, w))`.
pub fn partial_w_chain(fam: &OffspringFamily, z: f64, w: f64, k: usize) -> f64 {
    let b0 = rat_to_f64(&fam.coeff(0));
    let mut x = w;
    let mut prod = 1.0;
    for _ in 0..k {
        prod *= z * fam.psi_prime(x);
        x = z * (fam.psi(x) - b0);
    }
    prod
}

fn powu(x: f64, mut e: u64) -> f64 {
    let mut acc = 1.0;
    let mut base = x;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Closed form of the plane-tree iterate
/// `G_k(z, w) = z^k w / (1 - w (1 - z^k)/(1 - z))`.
pub fn plane_closed_iterate(z: f64, w: f64, k: usize) -> Result<f64> {
    if z.abs() > 0.25 + 1e-12 || w.abs() > 0.5 + 1e-12 {
        return Err(Error::ClosedFormDomain(format!(
            "plane iterate needs |z| <= 1/4, |w| <= 1/2; got ({z}, {w})"
        )));
    }
    if k == 0 {
        return Ok(w);
    }
    let zk = powu(z, k as u64);
    let den = 1.0 - w * (1.0 - zk) / (1.0 - z);
    if den.abs() < 1e-300 {
        return Err(Error::ClosedFormDomain(format!("vanishing denominator at ({z}, {w})")));
    }
    Ok(zk * w / den)
}

/// `dG_k/dw` for the plane closed form: `z^k / (1 - w (1-z^k)/(1-z))^2`.
pub fn plane_closed_partial_w(z: f64, w: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Ok(1.0);
    }
    let zk = powu(z, k as u64);
    let den = 1.0 - w * (1.0 - zk) / (1.0 - z);
    if den.abs() < 1e-300 {
        return Err(Error::ClosedFormDomain(format!("vanishing denominator at ({z}, {w})")));
    }
    Ok(zk / (den * den))
}

/// Closed form of the binary iterate `G_k(z, w) = z^(2^k - 1) w^(2^k)`.
pub fn binary_closed_iterate(z: f64, w: f64, k: usize) -> Result<f64> {
    if k > 60 {
        return Err(Error::KTooLarge { k, cap: 60 });
    }
    if z.abs() > 0.5 + 1e-12 || w.abs() > 1.0 + 1e-12 {
        return Err(Error::ClosedFormDomain(format!(
            "binary iterate needs |z| <= 1/2, |w| <= 1; got ({z}, {w})"
        )));
    }
    let p = 1u64 << k;
    Ok(powu(z, p - 1) * powu(w, p))
}

/// `dG_k/dw` for the binary closed form: `2^k z^(2^k - 1) w^(2^k - 1)`.
pub fn binary_closed_partial_w(z: f64, w: f64, k: usize) -> Result<f64> {
    if k > 60 {
        return Err(Error::KTooLarge { k, cap: 60 });
    }
    let p = 1u64 << k;
    Ok(p as f64 * powu(z, p - 1) * powu(w, p - 1))
}

fn validate_index_set(fam: &OffspringFamily, index_set: &BTreeSet<usize>) -> Result<()> {
    if !index_set.contains(&0) {
        return Err(Error::InvalidIndexSet("the index set must contain 0".into()));
    }
    for &i in index_set {
        if !fam.in_support(i) {
            return Err(Error::InvalidIndexSet(format!(
                "index {i} is not in the support of psi for family `{}`",
                fam.name()
            )));
        }
    }
    if let Some(support) = fam.finite_support() {
        if index_set.len() == support.len() {
            return Err(Error::InvalidIndexSet(
                "the index set must be a proper subset of the support".into(),
            ));
        }
    }
    Ok(())
}

/// `psi_I(f) = sum_{i in I} b_i f^i` as an exact series.
fn psi_indexed_series(
    fam: &OffspringFamily,
    index_set: &BTreeSet<usize>,
    f: &ExactSeries,
) -> ExactSeries {
    let trunc = f.trunc();
    let max_i = *index_set.iter().max().expect("nonempty index set");
    let mut out = ExactSeries::zero(trunc);
    let mut power = ExactSeries::constant(BigRational::one(), trunc);
    for i in 0..=max_i {
        if i > 0 {
            power = power.mul(f);
        }
        if index_set.contains(&i) {
            out = out.add(&power.mul(&ExactSeries::constant(fam.coeff(i), trunc)));
        }
    }
    out
}

fn psi_indexed_scalar(fam: &OffspringFamily, index_set: &BTreeSet<usize>, x: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut deriv = 0.0;
    for &i in index_set {
        let b = rat_to_f64(&fam.coeff(i));
        value += b * powu(x, i as u64);
        if i >= 1 {
            deriv += b * i as f64 * powu(x, (i - 1) as u64);
        }
    }
    (value, deriv)
}

/// The generalized scheme of index set `I`:
/// `f_{I,m} = z (psi - psi_I)(f_{I,m-1})`, `f_{I,0} = g`, exactly.
/// Taking `I = {0}` reproduces [`iterate_scheme`].
pub fn generalized_scheme(
    fam: &OffspringFamily,
    index_set: &BTreeSet<usize>,
    m: usize,
    trunc: usize,
) -> Result<ExactSeries> {
    validate_index_set(fam, index_set)?;
    if m > EXACT_K_CAP {
        return Err(Error::KTooLarge { k: m, cap: EXACT_K_CAP });
    }
    let mut series = fam.solve_g(trunc);
    for _ in 0..m {
        let psi_f = fam.compose_psi(&series)?;
        let psi_i_f = psi_indexed_series(fam, index_set, &series);
        series = psi_f.sub(&psi_i_f).shift_up();
    }
    Ok(series)
}

/// Limit of `B_n^(m)/A_n` for the generalized scheme (stated by the paper
/// only for span 1): `prod_{j<m} rho (psi' - psi_I')(f_{I,j}(rho))`.
pub fn limit_constant_generalized(
    fam: &OffspringFamily,
    index_set: &BTreeSet<usize>,
    m: usize,
) -> Result<f64> {
    validate_index_set(fam, index_set)?;
    if fam.span() != 1 {
        return Err(Error::Unsupported(format!(
            "the generalized limit is only available for span 1 (family `{}` has span {})",
            fam.name(),
            fam.span()
        )));
    }
    let kq = fam.apex()?;
    let mut x = kq.tau;
    let mut prod = 1.0;
    for _ in 0..m {
        let (pi, dpi) = psi_indexed_scalar(fam, index_set, x);
        prod *= kq.rho * (fam.psi_prime(x) - dpi);
        x = kq.rho * (fam.psi(x) - pi);
    }
    Ok(prod)
}

/// Exact ratio table for all valid sizes up to `n_max`, with the limit
/// appended. Rows with `A_n = 0` (possible for custom families at small
/// `n`) are skipped: the conditional law is undefined there.
pub fn convergence_table(fam: &OffspringFamily, k: usize, n_max: usize) -> Result<BorderTable> {
    if n_max < k.max(1) {
        return Err(Error::TruncationTooSmall { need: k.max(1), have: n_max });
    }
    let limit = limit_constant(fam, k)?;
    let span = fam.span();
    let g = fam.solve_g(n_max);
    let gk = iterate_scheme(fam, k, n_max)?;
    let mut rows = Vec::new();
    for n in 1..=n_max {
        if n % span != 1 % span {
            continue;
        }
        let a_n = g.coeff(n).clone();
        if a_n.is_zero() {
            continue;
        }
        let a_n_k = gk.series.coeff(n).clone();
        let ratio = &a_n_k / &a_n;
        let gap = (rat_to_f64(&ratio) - limit.value).abs();
        rows.push(BorderRow { n, a_n, a_n_k, ratio, gap });
    }
    Ok(BorderTable { k, span, limit: limit.value, rows })
}
