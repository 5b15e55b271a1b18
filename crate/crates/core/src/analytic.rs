//! Closed-form one-step conditional moments and bounds for both models, and
//! the exact probability that one gossip round empties every opinion.
//!
//! Every formula is a ratio of integer polynomials in `n`, the undecided
//! count `u`, the counts `c_i` and their power sums. Numerators are evaluated
//! exactly in big integers and divided once, so the results carry only a
//! couple of ulps of rounding error even when terms cancel.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::dynamics::{Model, OpinionCounts};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::quantities::PowerSums;

/// Requested `δ^(ε)(i, j)` pair (1-based, distinct opinions).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaPair {
    pub i: usize,
    pub j: usize,
    pub eps: f64,
}

impl DeltaPair {
    pub fn new(i: usize, j: usize, eps: f64) -> Self {
        Self { i, j, eps }
    }

    pub(crate) fn validate(&self, state: &OpinionCounts) -> Result<()> {
        state.check_index(self.i)?;
        state.check_index(self.j)?;
        if self.i == self.j {
            return Err(Error::SamePair(self.i));
        }
        Ok(())
    }
}

fn big<T: Into<BigInt>>(x: T) -> BigInt {
    x.into()
}

/// `num / n^p` rounded to `f64`.
fn over_n_pow(num: &BigInt, n: u64, p: i32) -> f64 {
    let num = num.to_f64().unwrap_or(f64::NAN);
    // n^p with n ≤ 2^31 and p ≤ 6 is far inside the f64 range; dividing by
    // n one factor at a time keeps each step exactly rounded.
    let nf = n as f64;
    (0..p).fold(num, |acc, _| acc / nf)
}

/// Integer building blocks of one state.
#[derive(Clone, Debug)]
struct Blocks {
    n: u64,
    counts: Vec<u64>,
    ps: PowerSums,
}

impl Blocks {
    fn of(state: &OpinionCounts) -> Self {
        Self {
            n: state.n(),
            counts: state.counts().to_vec(),
            ps: PowerSums::of(state),
        }
    }

    fn nb(&self) -> BigInt {
        big(self.n)
    }

    fn d(&self) -> BigInt {
        big(self.ps.d)
    }

    fn u(&self) -> BigInt {
        big(self.n) - big(self.ps.d)
    }

    fn s2(&self) -> BigInt {
        big(self.ps.s2)
    }

    fn s3(&self) -> BigInt {
        big(self.ps.s3)
    }

    fn s4(&self) -> BigInt {
        big(self.ps.s4)
    }

    fn c(&self, i: usize) -> BigInt {
        big(self.counts[i - 1])
    }
}

// Gossip model. Numerators over n^2 (means of α), n^4 (second moments).

fn gossip_mean_alpha(b: &Blocks, i: usize) -> f64 {
    let c = b.c(i);
    over_n_pow(&(&c * (&c + 2 * b.u())), b.n, 2)
}

fn gossip_var_alpha(b: &Blocks, i: usize) -> f64 {
    let c = b.c(i);
    let inner = b.u() * (b.nb() + b.d() - 2 * &c) + &c * (b.d() - &c);
    over_n_pow(&(c * inner), b.n, 4)
}

fn gossip_cov_alpha(b: &Blocks, i: usize, j: usize) -> f64 {
    if i == j {
        return gossip_var_alpha(b, i);
    }
    over_n_pow(&(-(b.c(i) * b.c(j) * b.u())), b.n, 4)
}

fn gossip_cov_alpha_beta(b: &Blocks, i: usize) -> f64 {
    let c = b.c(i);
    let inner = b.u() * (b.nb() - &c) + &c * (b.d() - &c);
    over_n_pow(&(c * inner), b.n, 4)
}

fn gossip_mean_beta(b: &Blocks) -> f64 {
    over_n_pow(&(2 * b.d() * b.u() + b.s2()), b.n, 2)
}

fn gossip_var_beta(b: &Blocks) -> f64 {
    let n = b.nb();
    let bmg = b.d() * &n - b.s2();
    let one_minus = b.u() * &n + b.s2();
    let num = bmg * one_minus + b.s2() * b.s2() - b.s3() * &n;
    over_n_pow(&num, b.n, 5)
}

fn gossip_mean_gamma(b: &Blocks) -> f64 {
    let n = b.nb();
    let (d, u, s2, s3) = (b.d(), b.u(), b.s2(), b.s3());
    let num = b.s4() + 4 * &u * &s3 + 4 * &u * &u * &s2 + &d * (&n * &n - &d * &d) - 2 * &u * &s2 + &d * &s2 - &s3;
    over_n_pow(&num, b.n, 4)
}

fn gossip_mean_delta(b: &Blocks, p: &DeltaPair) -> f64 {
    // n²·E[δ'] = (c_i − (1+ε)c_j)(c_i + c_j + 2u) + ε c_i c_j
    let (ci, cj) = (b.c(p.i), b.c(p.j));
    let cross = &ci + &cj + 2 * b.u();
    mean_delta_exact(&ci, &cj, p.eps, cross, b.n, 2)
}

/// `[(c_i − (1+ε)c_j)·cross + ε c_i c_j] / n^p`, evaluated exactly with the
/// binary value of `ε` and rounded once.
fn mean_delta_exact(ci: &BigInt, cj: &BigInt, eps: f64, cross: BigInt, n: u64, p: u32) -> f64 {
    let Some(e) = BigRational::from_float(eps) else {
        return f64::NAN;
    };
    let r = |x: &BigInt| BigRational::from_integer(x.clone());
    let one = BigRational::from_integer(1.into());
    let num = (r(ci) - (one + &e) * r(cj)) * r(&cross) + e * r(&(ci * cj));
    let den = BigRational::from_integer(BigInt::from(n).pow(p));
    (num / den).to_f64().unwrap_or(f64::NAN)
}

// Population-protocol model. `m = n − 2d` recurs as n·(1 − 2β).

fn pp_mean_alpha(b: &Blocks, i: usize) -> f64 {
    let c = b.c(i);
    let n = b.nb();
    let num = &c * (&n * &n + &n + &c - 2 * b.d());
    over_n_pow(&num, b.n, 3)
}

fn pp_var_alpha(b: &Blocks, i: usize) -> f64 {
    let c = b.c(i);
    let n = b.nb();
    let shift = &n - 2 * b.d() + &c;
    let num = &c * (&n * &n * &n - &c * &n * &n - &c * &shift * &shift);
    over_n_pow(&num, b.n, 6)
}

fn pp_cov_alpha(b: &Blocks, i: usize, j: usize) -> f64 {
    if i == j {
        return pp_var_alpha(b, i);
    }
    let n = b.nb();
    let m = &n - 2 * b.d();
    let (ci, cj) = (b.c(i), b.c(j));
    let prod: BigInt = &ci * &cj * (&ci + &m) * (&cj + &m);
    let num = -prod;
    over_n_pow(&num, b.n, 6)
}

fn pp_cov_alpha_beta(b: &Blocks, i: usize) -> f64 {
    let c = b.c(i);
    let n = b.nb();
    let m = &n - 2 * b.d();
    let drift = b.d() * &m + b.s2();
    let num = &c * (&n * &n * &n - &c * &n * &n - (&m + &c) * drift);
    over_n_pow(&num, b.n, 6)
}

fn pp_mean_beta(b: &Blocks) -> f64 {
    let n = b.nb();
    let d = b.d();
    let num = &d * &n * &n + &d * (&n - 2 * &d) + b.s2();
    over_n_pow(&num, b.n, 3)
}

fn pp_var_beta(b: &Blocks) -> f64 {
    let n = b.nb();
    let psi = big(b.ps.psi_scaled());
    let num = (b.d() * &n - b.s2()) * &n * &n - &psi * &psi;
    over_n_pow(&num, b.n, 6)
}

fn pp_mean_gamma(b: &Blocks) -> f64 {
    let n = b.nb();
    let s2 = b.s2();
    let num = &s2 * &n * &n + 2 * (&n - 2 * b.d()) * &s2 + 2 * b.s3() + b.d() * &n - &s2;
    over_n_pow(&num, b.n, 4)
}

fn pp_mean_delta(b: &Blocks, p: &DeltaPair) -> f64 {
    // n³·E[δ'] = (c_i − (1+ε)c_j)(n² + c_i + c_j + m) + ε c_i c_j
    let (ci, cj) = (b.c(p.i), b.c(p.j));
    let n = b.nb();
    let cross = &n * &n + &ci + &cj + &n - 2 * b.d();
    mean_delta_exact(&ci, &cj, p.eps, cross, b.n, 3)
}

/// Exact one-step conditional moments of one state.
#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub model: Model,
    pub n: u64,
    /// `E[α_i']`, index `i - 1`.
    pub mean_alpha: Vec<f64>,
    pub var_alpha: Vec<f64>,
    pub mean_beta: f64,
    pub var_beta: f64,
    pub mean_gamma: f64,
    /// `E[δ'^(ε)(i, j)]` for each requested pair.
    pub deltas: Vec<(DeltaPair, f64)>,
    #[serde(skip)]
    blocks: Blocks,
}

impl MomentReport {
    pub fn k(&self) -> usize {
        self.mean_alpha.len()
    }

    /// `Cov(α_i', α_j')`; equals the variance when `i == j`.
    pub fn cov_alpha(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i)?;
        self.check(j)?;
        Ok(match self.model {
            Model::Gossip => gossip_cov_alpha(&self.blocks, i, j),
            Model::Pp => pp_cov_alpha(&self.blocks, i, j),
        })
    }

    /// `Cov(α_i', β')`.
    pub fn cov_alpha_beta(&self, i: usize) -> Result<f64> {
        self.check(i)?;
        Ok(match self.model {
            Model::Gossip => gossip_cov_alpha_beta(&self.blocks, i),
            Model::Pp => pp_cov_alpha_beta(&self.blocks, i),
        })
    }

    fn check(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.k() {
            Err(Error::IndexOutOfRange { index: i, k: self.k() })
        } else {
            Ok(())
        }
    }
}

fn moments(model: Model, state: &OpinionCounts, pairs: &[DeltaPair]) -> Result<MomentReport> {
    for p in pairs {
        p.validate(state)?;
    }
    let b = Blocks::of(state);
    let k = state.k();
    let (mean_alpha, var_alpha, mean_beta, var_beta, mean_gamma, deltas) = match model {
        Model::Gossip => (
            (1..=k).map(|i| gossip_mean_alpha(&b, i)).collect(),
            (1..=k).map(|i| gossip_var_alpha(&b, i)).collect(),
            gossip_mean_beta(&b),
            gossip_var_beta(&b),
            gossip_mean_gamma(&b),
            pairs.iter().map(|p| (*p, gossip_mean_delta(&b, p))).collect(),
        ),
        Model::Pp => (
            (1..=k).map(|i| pp_mean_alpha(&b, i)).collect(),
            (1..=k).map(|i| pp_var_alpha(&b, i)).collect(),
            pp_mean_beta(&b),
            pp_var_beta(&b),
            pp_mean_gamma(&b),
            pairs.iter().map(|p| (*p, pp_mean_delta(&b, p))).collect(),
        ),
    };
    Ok(MomentReport {
        model,
        n: state.n(),
        mean_alpha,
        var_alpha,
        mean_beta,
        var_beta,
        mean_gamma,
        deltas,
        blocks: b,
    })
}

/// One-round moments of the gossip chain.
///
/// `mean_gamma` is obtained as `Σ (E[α_i']² + Var[α_i'])`.
pub fn exact_moments_gossip(state: &OpinionCounts, pairs: &[DeltaPair]) -> Result<MomentReport> {
    moments(Model::Gossip, state, pairs)
}

/// One-interaction moments of the population-protocol chain.
///
/// `var_beta` is exact: `((β − γ) − ψ²)/n²`.
pub fn exact_moments_pp(state: &OpinionCounts, pairs: &[DeltaPair]) -> Result<MomentReport> {
    moments(Model::Pp, state, pairs)
}

pub fn exact_moments(model: Model, state: &OpinionCounts, pairs: &[DeltaPair]) -> Result<MomentReport> {
    moments(model, state, pairs)
}

/// Finite-n gates standing in for the asymptotic hypotheses of the drift
/// bounds.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct HypothesisParams {
    pub beta_min: f64,
    pub psi_max: f64,
    pub gamma_max: f64,
    pub n_min: u64,
}

impl Default for HypothesisParams {
    fn default() -> Self {
        Self {
            beta_min: 0.49,
            psi_max: 0.01,
            gamma_max: 0.01,
            n_min: 10_000,
        }
    }
}

/// Left-hand side quantity of a one-step bound, evaluated by the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundLhs {
    /// `E[γ']`
    MeanGamma,
    /// `β²·E[γ']`
    BetaSqMeanGamma,
    /// `E[ψ']`
    MeanPsi,
    /// `E[γ̃']`
    MeanGammaTilde,
    /// `E[α̃^max']`
    MeanAlphaMaxTilde,
    /// `Var[β']`
    VarBeta,
    /// `Var[γ']`
    VarGamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "==",
        }
    }

    /// Whether `lhs relation rhs` holds up to an absolute slack `tol`.
    pub fn holds(self, lhs: f64, rhs: f64, tol: f64) -> bool {
        match self {
            Relation::Le => lhs <= rhs + tol,
            Relation::Ge => lhs >= rhs - tol,
            Relation::Eq => (lhs - rhs).abs() <= tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundEntry {
    pub name: &'static str,
    pub lhs: BoundLhs,
    pub relation: Relation,
    /// Right-hand side evaluated at the current state.
    pub value: f64,
    /// Whether the finite-n hypothesis gates hold; always true for
    /// unconditional bounds.
    pub hypothesis: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub model: Model,
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    pub fn get(&self, name: &str) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Right-hand sides of the one-step inequalities for `model` at `state`.
/// The left sides come from [`crate::oracle`].
pub fn bound_report(model: Model, state: &OpinionCounts, hyp: &HypothesisParams) -> BoundReport {
    let b = Blocks::of(state);
    let ps = &b.ps;
    let n = b.n as f64;
    let beta = ps.d as f64 / n;
    let gamma = over_n_pow(&b.s2(), b.n, 2);
    let p3 = over_n_pow(&b.s3(), b.n, 3);
    let psi = over_n_pow(&big(ps.psi_scaled()), b.n, 2);
    let beta_minus_gamma = over_n_pow(&big(ps.beta_minus_gamma_scaled()), b.n, 2);
    let alpha_max = ps.max as f64 / n;
    let (alpha_max_tilde, gamma_tilde, gamma_over_beta) = if ps.d == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let d = ps.d as f64;
        (ps.max as f64 / d, ps.s2 as f64 / (d * d), ps.s2 as f64 / (d * n))
    };
    let one_minus_beta = (b.n - ps.d as u64) as f64 / n;
    let beta_gate = beta >= hyp.beta_min;
    let psi_gate = psi <= hyp.psi_max;
    let gamma_gate = gamma <= hyp.gamma_max;
    let n_gate = b.n >= hyp.n_min;

    let entry = |name, lhs, relation, value, hypothesis| BoundEntry {
        name,
        lhs,
        relation,
        value,
        hypothesis,
    };
    let entries = match model {
        Model::Gossip => {
            let mean_beta = gossip_mean_beta(&b);
            let drift_den = 2.0 * one_minus_beta + gamma_over_beta;
            let tilde_max_rhs = if ps.d == 0 || drift_den == 0.0 {
                0.0
            } else {
                alpha_max_tilde * (1.0 + (alpha_max - gamma_over_beta) / drift_den) - 9.0 * alpha_max / n
            };
            vec![
                entry(
                    "gossip_gamma_upper",
                    BoundLhs::MeanGamma,
                    Relation::Le,
                    10.0 * gamma,
                    true,
                ),
                entry(
                    "gossip_gamma_product_lower",
                    BoundLhs::BetaSqMeanGamma,
                    Relation::Ge,
                    mean_beta * mean_beta * gamma + beta.powi(3) * one_minus_beta * one_minus_beta / n,
                    true,
                ),
                entry("gossip_psi_upper", BoundLhs::MeanPsi, Relation::Le, beta / n, true),
                entry(
                    "gossip_alpha_max_tilde_drift",
                    BoundLhs::MeanAlphaMaxTilde,
                    Relation::Ge,
                    tilde_max_rhs,
                    beta_gate && psi_gate && n_gate,
                ),
                entry(
                    "gossip_gamma_tilde_drift",
                    BoundLhs::MeanGammaTilde,
                    Relation::Ge,
                    gamma_tilde + 1.0 / (12.0 * n),
                    beta_gate && psi_gate && gamma_gate && n_gate,
                ),
            ]
        }
        Model::Pp => {
            let tilde_max_rhs = if ps.d == 0 {
                0.0
            } else {
                alpha_max_tilde * (1.0 + (alpha_max - gamma_over_beta) / (2.0 * n)) - 18.0 * alpha_max / (n * n)
            };
            vec![
                entry(
                    "pp_beta_var_upper",
                    BoundLhs::VarBeta,
                    Relation::Le,
                    beta_minus_gamma / (n * n),
                    true,
                ),
                entry(
                    "pp_gamma_var_upper",
                    BoundLhs::VarGamma,
                    Relation::Le,
                    9.0 * p3 / (n * n),
                    true,
                ),
                entry(
                    "pp_psi_upper",
                    BoundLhs::MeanPsi,
                    Relation::Le,
                    psi * (1.0 - 1.0 / n) + beta_minus_gamma / (n * n),
                    true,
                ),
                entry(
                    "pp_alpha_max_tilde_drift",
                    BoundLhs::MeanAlphaMaxTilde,
                    Relation::Ge,
                    tilde_max_rhs,
                    beta_gate && n_gate,
                ),
                entry(
                    "pp_gamma_tilde_drift",
                    BoundLhs::MeanGammaTilde,
                    Relation::Ge,
                    gamma_tilde + 1.0 / (12.0 * n * n),
                    beta_gate && gamma_gate && n_gate,
                ),
            ]
        }
    };
    BoundReport { model, entries }
}

/// Probability that one gossip round from `state` ends with every vertex
/// undecided: `(1 − β)^{(1−β)n} · Π_{c_i > 0} (β − α_i)^{c_i}`, with `0^0 = 1`.
pub fn p_bot_exact(state: &OpinionCounts) -> f64 {
    let n = state.n();
    let d = state.decided();
    let u = n - d;
    let nf = n as f64;
    let mut log = CompensatedSum::new();
    if u > 0 {
        log.add(u as f64 * (-(d as f64) / nf).ln_1p());
    }
    for &c in state.counts() {
        if c == 0 {
            continue;
        }
        let base = d - c;
        if base == 0 {
            return 0.0;
        }
        log.add(c as f64 * (-((u + c) as f64) / nf).ln_1p());
    }
    log.value().exp()
}
