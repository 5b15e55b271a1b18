//! Checks the closed-form moments and one-step bounds against the oracles
//! over a collection of states.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::analytic::{
    bound_report, exact_moments, p_bot_exact, BoundLhs, DeltaPair, HypothesisParams, MomentReport, Relation,
};
use crate::dynamics::{run_trial, Model, OpinionCounts, StepRandomness};
use crate::error::{Error, Result};
use crate::numeric::approx_eq_rel;
use crate::oracle::{
    gossip_onestep_exhaustive, mc_onestep_moments, moments_of, pp_onestep_exact, ExactMoments, McMoments,
};
use crate::quantities::PowerSums;

/// Random state generator.
///
/// `n` is log-uniform on `[n_min, n_max]`, `k` uniform on
/// `[k_min, min(k_max, n)]` and β uniform on `[beta_min, beta_max]`. The
/// decided vertices are split either uniformly at random over compositions
/// (empty opinions allowed) or close to evenly, alternating between the two.
/// States with `γ > gamma_max` are redrawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSampler {
    pub n_min: u64,
    pub n_max: u64,
    pub k_min: usize,
    pub k_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub gamma_max: Option<f64>,
}

impl StateSampler {
    /// States with exactly `n` vertices and any β.
    pub fn fixed_n(n: u64, k_min: usize, k_max: usize) -> Self {
        Self {
            n_min: n,
            n_max: n,
            k_min,
            k_max,
            beta_min: 0.0,
            beta_max: 1.0,
            gamma_max: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.n_min >= 1
            && self.n_min <= self.n_max
            && self.k_min >= 1
            && self.k_min <= self.k_max
            && (self.k_min as u64) <= self.n_max
            && (0.0..=1.0).contains(&self.beta_min)
            && self.beta_min <= self.beta_max
            && self.beta_max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid state sampler {self:?}")))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, balanced: bool) -> Option<OpinionCounts> {
        let (lo, hi) = (self.n_min as f64, self.n_max as f64);
        let n = if self.n_min == self.n_max {
            self.n_min
        } else {
            (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().round() as u64
        }
        .clamp(self.n_min.max(self.k_min as u64), self.n_max);
        let k_hi = self.k_max.min(n as usize);
        let k = rng.random_range(self.k_min..=k_hi);
        let beta = rng.random_range(self.beta_min..=self.beta_max);
        let d_lo = (self.beta_min * n as f64).ceil() as u64;
        let d_hi = (self.beta_max * n as f64).floor() as u64;
        if d_lo > d_hi {
            return None;
        }
        let d = ((beta * n as f64).round() as u64).clamp(d_lo, d_hi);
        let counts = if balanced {
            let base = d / k as u64;
            let mut counts = vec![base; k];
            for _ in 0..d % k as u64 {
                counts[rng.random_range(0..k)] += 1;
            }
            counts
        } else {
            // Stars and bars: k − 1 distinct cut positions among d + k − 1.
            let mut cuts: Vec<usize> = sample(rng, (d as usize) + k - 1, k - 1).into_vec();
            cuts.sort_unstable();
            let mut counts = Vec::with_capacity(k);
            let mut prev = 0usize;
            for (idx, &c) in cuts.iter().enumerate() {
                counts.push((c - prev - if idx == 0 { 0 } else { 1 }) as u64);
                prev = c;
            }
            let last_start = if k == 1 { 0 } else { prev + 1 };
            counts.push((d as usize + k - 1 - last_start) as u64);
            counts
        };
        let state = OpinionCounts::with_n(n, counts, n - d).ok()?;
        match self.gamma_max {
            Some(g) => {
                let ps = PowerSums::of(&state);
                (ps.s2 as f64 / (n as f64 * n as f64) <= g).then_some(state)
            }
            None => Some(state),
        }
    }

    /// `count` states drawn deterministically from `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<OpinionCounts>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count {
            attempts += 1;
            if attempts > 1000 * count.max(1) {
                return Err(Error::Config(format!(
                    "state sampler {self:?} rejects nearly every draw"
                )));
            }
            if let Some(s) = self.draw(&mut rng, out.len() % 2 == 1) {
                out.push(s);
            }
        }
        Ok(out)
    }
}

/// Every state with `n` vertices and `k` opinions (decided counts may be
/// zero).
pub fn all_states(n: u64, k: usize) -> Vec<OpinionCounts> {
    fn rec(rest: u64, k: usize, prefix: &mut Vec<u64>, n: u64, out: &mut Vec<OpinionCounts>) {
        if prefix.len() == k {
            out.push(OpinionCounts::with_n(n, prefix.clone(), rest).expect("counts sum to n"));
            return;
        }
        for c in 0..=rest {
            prefix.push(c);
            rec(rest - c, k, prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, &mut Vec::with_capacity(k), n, &mut out);
    out
}

/// Every state with `n` vertices in which each opinion has at least one
/// supporter, over all `k ≥ 1`, plus the all-undecided state with `k = 1`.
/// Opinions without supporters never change, so these cover every distinct
/// one-step behaviour up to relabelling of empty opinions.
pub fn supported_states(n: u64) -> Vec<OpinionCounts> {
    fn rec(rest: u64, prefix: &mut Vec<u64>, n: u64, decided: u64, out: &mut Vec<OpinionCounts>) {
        if rest == 0 {
            out.push(OpinionCounts::with_n(n, prefix.clone(), n - decided).expect("counts fit"));
            return;
        }
        for c in 1..=rest {
            prefix.push(c);
            rec(rest - c, prefix, n, decided, out);
            prefix.pop();
        }
    }
    let mut out = vec![OpinionCounts::with_n(n, vec![0], n).expect("all undecided")];
    for d in 1..=n {
        rec(d, &mut Vec::new(), n, d, &mut out);
    }
    out
}

/// States visited by one simulated trajectory, every `every` steps.
pub fn harvest_states(model: Model, init: &OpinionCounts, every: u64, max_steps: u64, seed: u64) -> Vec<OpinionCounts> {
    let mut out = vec![init.clone()];
    let every = every.max(1);
    let mut rng = StepRandomness::new(seed, 0);
    let mut observer = |t: u64, s: &OpinionCounts| {
        if t.is_multiple_of(every) {
            out.push(s.clone());
        }
    };
    run_trial(model, init, &mut rng, max_steps, Some(&mut observer));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Violation of an unconditional bound that is reported but not counted
    /// as a failure; see [`DriftConfig::flag_only`].
    Flagged,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Flagged => "flagged",
        }
    }
}

/// How the left side of a row was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check_name: String,
    pub model: Model,
    pub n: u64,
    pub state_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub evidence: Evidence,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub model: Model,
    pub hypothesis: HypothesisParams,
    /// Gossip states with at most this many vertices are enumerated
    /// exhaustively; larger ones are checked by Monte Carlo.
    pub exhaustive_max_n: u64,
    /// Monte-Carlo draws per state.
    pub samples: u64,
    pub master_seed: u64,
    /// Relative tolerance of the exact equality checks.
    pub eq_tolerance: f64,
    /// Relative slack of exact inequality checks, for the rounding of the
    /// right side.
    pub bound_tolerance: f64,
    /// Width of the Monte-Carlo bands in standard errors.
    pub sigmas: f64,
    /// Bound names whose violations are flagged instead of failed.
    pub flag_only: Vec<String>,
}

impl DriftConfig {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            hypothesis: HypothesisParams::default(),
            exhaustive_max_n: 7,
            samples: 20_000,
            master_seed: 0,
            eq_tolerance: match model {
                Model::Gossip => 1e-10,
                Model::Pp => 1e-9,
            },
            bound_tolerance: 1e-12,
            sigmas: 4.0,
            flag_only: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DriftReport {
    pub rows: Vec<CheckRow>,
}

impl DriftReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| r.verdict == Verdict::Fail)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| r.verdict == Verdict::Flagged)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    /// Rows whose name starts with `prefix`.
    pub fn named<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a CheckRow> + 'a {
        self.rows.iter().filter(move |r| r.check_name.starts_with(prefix))
    }
}

/// δ pairs checked at every state with at least two opinions.
fn default_pairs(k: usize) -> Vec<DeltaPair> {
    if k < 2 {
        Vec::new()
    } else {
        vec![
            DeltaPair::new(1, 2, 0.0),
            DeltaPair::new(1, 2, 0.1),
            DeltaPair::new(2, 1, 0.25),
        ]
    }
}

struct RowSink<'a> {
    cfg: &'a DriftConfig,
    n: u64,
    state_id: String,
    rows: Vec<CheckRow>,
}

impl RowSink<'_> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        name: String,
        lhs: f64,
        rhs: f64,
        relation: Relation,
        tolerance: f64,
        evidence: Evidence,
        ok: bool,
        flaggable: bool,
    ) {
        let verdict = match (ok, flaggable) {
            (true, _) => Verdict::Pass,
            (false, true) => Verdict::Flagged,
            (false, false) => Verdict::Fail,
        };
        self.rows.push(CheckRow {
            check_name: name,
            model: self.cfg.model,
            n: self.n,
            state_id: self.state_id.clone(),
            lhs,
            rhs,
            relation,
            tolerance,
            evidence,
            verdict,
        });
    }

    /// Exact equality over a family of values; reports the worst member.
    fn eq_family(&mut self, family: &str, members: Vec<(String, f64, f64)>) {
        let tol = self.cfg.eq_tolerance;
        let worst = members
            .into_iter()
            .max_by(|a, b| rel_err(a.1, a.2).total_cmp(&rel_err(b.1, b.2)));
        if let Some((label, lhs, rhs)) = worst {
            let ok = approx_eq_rel(lhs, rhs, tol);
            self.push(
                format!("{family}{label}"),
                lhs,
                rhs,
                Relation::Eq,
                tol,
                Evidence::Exact,
                ok,
                false,
            );
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale <= 1e-300 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn exact_equalities(sink: &mut RowSink, analytic: &MomentReport, oracle: &ExactMoments) -> Result<()> {
    let k = analytic.k();
    sink.eq_family(
        "eq_mean_alpha",
        (1..=k)
            .map(|i| (format!("[{i}]"), analytic.mean_alpha[i - 1], oracle.mean_alpha[i - 1]))
            .collect(),
    );
    sink.eq_family(
        "eq_var_alpha",
        (1..=k)
            .map(|i| (format!("[{i}]"), analytic.var_alpha[i - 1], oracle.var_alpha[i - 1]))
            .collect(),
    );
    let mut cov = Vec::new();
    for i in 1..=k {
        for j in i + 1..=k {
            cov.push((format!("[{i}.{j}]"), analytic.cov_alpha(i, j)?, oracle.cov(i, j)));
        }
    }
    sink.eq_family("eq_cov_alpha", cov);
    let mut cab = Vec::new();
    for i in 1..=k {
        cab.push((
            format!("[{i}]"),
            analytic.cov_alpha_beta(i)?,
            oracle.cov_alpha_beta[i - 1],
        ));
    }
    sink.eq_family("eq_cov_alpha_beta", cab);
    sink.eq_family(
        "eq_mean_beta",
        vec![(String::new(), analytic.mean_beta, oracle.mean_beta)],
    );
    sink.eq_family("eq_var_beta", vec![(String::new(), analytic.var_beta, oracle.var_beta)]);
    sink.eq_family(
        "eq_mean_gamma",
        vec![(String::new(), analytic.mean_gamma, oracle.mean_gamma)],
    );
    sink.eq_family(
        "eq_mean_delta",
        analytic
            .deltas
            .iter()
            .zip(&oracle.deltas)
            .map(|((p, a), (_, o))| (format!("[{}.{}@{}]", p.i, p.j, p.eps), *a, *o))
            .collect(),
    );
    Ok(())
}

/// Drift bounds are compared as changes from the current level so the
/// comparison does not lose digits to it.
fn drift_level(lhs: BoundLhs, ps: &PowerSums) -> Option<f64> {
    let d = ps.d as f64;
    match lhs {
        BoundLhs::MeanGammaTilde if ps.d > 0 => Some(ps.s2 as f64 / (d * d)),
        BoundLhs::MeanAlphaMaxTilde if ps.d > 0 => Some(ps.max as f64 / d),
        BoundLhs::MeanGammaTilde | BoundLhs::MeanAlphaMaxTilde => Some(0.0),
        _ => None,
    }
}

fn exact_bounds(sink: &mut RowSink, state: &OpinionCounts, oracle: &ExactMoments) {
    let cfg = sink.cfg;
    let ps = PowerSums::of(state);
    let beta0 = ps.d as f64 / state.n() as f64;
    for e in bound_report(cfg.model, state, &cfg.hypothesis).entries {
        if !e.hypothesis {
            continue;
        }
        let (lhs, rhs) = match (drift_level(e.lhs, &ps), e.lhs) {
            (Some(level), BoundLhs::MeanGammaTilde) => (oracle.gamma_tilde_drift, e.value - level),
            (Some(level), _) => (oracle.alpha_max_tilde_drift, e.value - level),
            (None, l) => (oracle.bound_lhs(l, beta0), e.value),
        };
        let tol = cfg.bound_tolerance * lhs.abs().max(rhs.abs());
        let ok = e.relation.holds(lhs, rhs, tol);
        let flaggable = cfg.flag_only.iter().any(|f| f == e.name);
        sink.push(
            e.name.to_string(),
            lhs,
            rhs,
            e.relation,
            tol,
            Evidence::Exact,
            ok,
            flaggable,
        );
    }
}

fn mc_checks(sink: &mut RowSink, state: &OpinionCounts, analytic: &MomentReport, mc: &McMoments) {
    let cfg = sink.cfg;
    let z = cfg.sigmas;
    let mut band = |name: &str, est: f64, se: f64, target: f64| {
        let tol = z * se;
        let ok = (est - target).abs() <= tol;
        sink.push(
            name.to_string(),
            est,
            target,
            Relation::Eq,
            tol,
            Evidence::MonteCarlo,
            ok,
            false,
        );
    };
    band("mc_mean_beta", mc.beta.mean, mc.beta.stderr, analytic.mean_beta);
    band("mc_mean_gamma", mc.gamma.mean, mc.gamma.stderr, analytic.mean_gamma);
    if analytic.k() > 0 {
        band(
            "mc_mean_alpha[1]",
            mc.alpha[0].mean,
            mc.alpha[0].stderr,
            analytic.mean_alpha[0],
        );
    }

    let ps = PowerSums::of(state);
    let beta0 = ps.d as f64 / state.n() as f64;
    for e in bound_report(cfg.model, state, &cfg.hypothesis).entries {
        if !e.hypothesis {
            continue;
        }
        let (est, se) = match e.lhs {
            BoundLhs::MeanGamma => (mc.gamma.mean, mc.gamma.stderr),
            BoundLhs::BetaSqMeanGamma => (beta0 * beta0 * mc.gamma.mean, beta0 * beta0 * mc.gamma.stderr),
            BoundLhs::MeanPsi => (mc.psi.mean, mc.psi.stderr),
            BoundLhs::MeanGammaTilde => (mc.gamma_tilde.mean, mc.gamma_tilde.stderr),
            BoundLhs::MeanAlphaMaxTilde => (mc.alpha_max_tilde.mean, mc.alpha_max_tilde.stderr),
            // Second-moment bounds exist only for the population protocol,
            // which is always checked exactly.
            BoundLhs::VarBeta | BoundLhs::VarGamma => continue,
        };
        let (est, rhs) = match drift_level(e.lhs, &ps) {
            Some(level) => (est - level, e.value - level),
            None => (est, e.value),
        };
        let tol = z * se;
        let ok = e.relation.holds(est, rhs, tol);
        let flaggable = cfg.flag_only.iter().any(|f| f == e.name);
        sink.push(
            e.name.to_string(),
            est,
            rhs,
            e.relation,
            tol,
            Evidence::MonteCarlo,
            ok,
            flaggable,
        );
    }

    if cfg.model == Model::Gossip {
        let p = p_bot_exact(state);
        let se = (p * (1.0 - p) / mc.samples as f64).sqrt();
        let tol = z * se;
        let ok = (mc.all_undecided.mean - p).abs() <= tol;
        sink.push(
            "mc_p_bot".into(),
            mc.all_undecided.mean,
            p,
            Relation::Eq,
            tol,
            Evidence::MonteCarlo,
            ok,
            false,
        );
    }
}

fn check_state(cfg: &DriftConfig, idx: usize, state: &OpinionCounts) -> Result<Vec<CheckRow>> {
    let mut sink = RowSink {
        cfg,
        n: state.n(),
        state_id: format!("s{idx}"),
        rows: Vec::new(),
    };
    let pairs = default_pairs(state.k());
    let analytic = exact_moments(cfg.model, state, &pairs)?;
    let exhaustive = cfg.model == Model::Gossip && state.n() <= cfg.exhaustive_max_n;
    if cfg.model == Model::Pp || exhaustive {
        let dist = match cfg.model {
            Model::Pp => pp_onestep_exact(state),
            Model::Gossip => gossip_onestep_exhaustive(state)?,
        };
        let oracle = moments_of(&dist, &pairs)?;
        exact_equalities(&mut sink, &analytic, &oracle)?;
        exact_bounds(&mut sink, state, &oracle);
        if cfg.model == Model::Gossip {
            let p = p_bot_exact(state);
            let ok = (p - oracle.all_undecided_mass).abs() <= 1e-12;
            sink.push(
                "p_bot".into(),
                p,
                oracle.all_undecided_mass,
                Relation::Eq,
                1e-12,
                Evidence::Exact,
                ok,
                false,
            );
        }
    } else {
        let mut rng = StepRandomness::new(derive_seed(cfg.master_seed, idx as u64), 0);
        let mc = mc_onestep_moments(cfg.model, state, cfg.samples, &mut rng);
        mc_checks(&mut sink, state, &analytic, &mc);
    }
    Ok(sink.rows)
}

/// Runs every check at every state. Rows are grouped by state in input
/// order; the output does not depend on the number of threads.
pub fn drift_suite(cfg: &DriftConfig, states: &[OpinionCounts]) -> Result<DriftReport> {
    use rayon::prelude::*;
    let per_state: Vec<Vec<CheckRow>> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| check_state(cfg, i, s))
        .collect::<Result<_>>()?;
    Ok(DriftReport {
        rows: per_state.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerates_every_state() {
        let states = all_states(3, 2);
        // Compositions of 3 into 3 parts.
        assert_eq!(states.len(), 10);
        assert!(states.iter().all(|s| s.n() == 3 && s.k() == 2));
    }

    #[test]
    fn supported_states_are_compositions() {
        // 1 all-undecided state plus 2^(d−1) compositions for each d.
        assert_eq!(supported_states(4).len(), 1 + 1 + 2 + 4 + 8);
        assert!(supported_states(5)
            .iter()
            .skip(1)
            .all(|s| s.counts().iter().all(|&c| c > 0)));
    }

    #[test]
    fn sampler_respects_ranges() {
        let sampler = StateSampler {
            n_min: 50,
            n_max: 5000,
            k_min: 2,
            k_max: 40,
            beta_min: 0.49,
            beta_max: 1.0,
            gamma_max: Some(0.05),
        };
        let states = sampler.sample(40, 11).unwrap();
        assert_eq!(states, sampler.sample(40, 11).unwrap());
        for s in &states {
            let ps = PowerSums::of(s);
            let n = s.n() as f64;
            assert!((50..=5000).contains(&s.n()));
            assert!((2..=40).contains(&s.k()));
            assert!(ps.d as f64 >= 0.49 * n);
            assert!(ps.s2 as f64 / (n * n) <= 0.05);
        }
    }

    #[test]
    fn consensus_state_passes_trivially() {
        let s = OpinionCounts::new(vec![0, 6, 0], 0).unwrap();
        for model in [Model::Gossip, Model::Pp] {
            let rep = drift_suite(&DriftConfig::new(model), std::slice::from_ref(&s)).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
            assert!(rep.named("eq_").count() >= 8);
        }
    }

    #[test]
    fn small_states_pass_exactly() {
        let mut states = all_states(4, 2);
        states.extend(all_states(3, 3));
        for model in [Model::Gossip, Model::Pp] {
            let rep = drift_suite(&DriftConfig::new(model), &states).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn large_gossip_states_use_monte_carlo() {
        let s = OpinionCounts::new(vec![300, 200, 100], 400).unwrap();
        let mut cfg = DriftConfig::new(Model::Gossip);
        cfg.samples = 4000;
        let rep = drift_suite(&cfg, &[s]).unwrap();
        assert!(rep.rows.iter().all(|r| r.evidence == Evidence::MonteCarlo));
        assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
    }
}
