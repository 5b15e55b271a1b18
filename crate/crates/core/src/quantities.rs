//! Scalar observables of a state, opinion classification, and first-hitting
//! times of the threshold events used in the drift analysis.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::dynamics::OpinionCounts;
use crate::error::{Error, Result};

/// Exact integer power sums of a state. `d = Σ c_i`, `s2 = Σ c_i²`, and so on.
///
/// With `n ≤ 2^31` every sum fits in `u128`, so derived quantities such as
/// `ψ·n² = d(2d − n) − s2` are computed without rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PowerSums {
    pub n: u128,
    pub d: u128,
    pub s2: u128,
    pub s3: u128,
    pub s4: u128,
    pub max: u64,
    /// Largest count among opinions other than the argmax (0 when `k = 1`).
    pub runner_up: u64,
    /// 0-based smallest index attaining `max`.
    pub argmax: usize,
    pub alive: usize,
}

impl PowerSums {
    pub fn of(state: &OpinionCounts) -> Self {
        let mut d = 0u128;
        let mut s2 = 0u128;
        let mut s3 = 0u128;
        let mut s4 = 0u128;
        let mut max = 0u64;
        let mut argmax = 0usize;
        let mut alive = 0usize;
        for (i, &c) in state.counts().iter().enumerate() {
            let c128 = c as u128;
            let sq = c128 * c128;
            d += c128;
            s2 += sq;
            s3 += sq * c128;
            s4 += sq * sq;
            if c > max {
                max = c;
                argmax = i;
            }
            if c > 0 {
                alive += 1;
            }
        }
        let runner_up = state
            .counts()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != argmax)
            .map(|(_, &c)| c)
            .max()
            .unwrap_or(0);
        Self {
            n: state.n() as u128,
            d,
            s2,
            s3,
            s4,
            max,
            runner_up,
            argmax,
            alive,
        }
    }

    /// `ψ·n²` as an exact integer.
    pub fn psi_scaled(&self) -> i128 {
        let d = self.d as i128;
        d * (2 * d - self.n as i128) - self.s2 as i128
    }

    /// `(β − γ)·n² = d·n − s2`, always nonnegative.
    pub fn beta_minus_gamma_scaled(&self) -> u128 {
        self.d * self.n - self.s2
    }
}

/// Every scalar observable of one state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantitySnapshot {
    pub n: u64,
    pub beta: f64,
    pub gamma: f64,
    pub psi: f64,
    pub gamma_tilde: f64,
    pub alpha_max: f64,
    pub alpha_max_tilde: f64,
    /// `I_t`: smallest 1-based opinion attaining `alpha_max`.
    pub argmax: usize,
    /// Largest fraction among opinions other than `argmax`.
    pub alpha_runner_up: f64,
    pub p3: f64,
    pub p4: f64,
    pub md: f64,
    pub alive: usize,
}

/// Computes every observable of `state`.
///
/// `gamma_tilde`, `alpha_max_tilde` and `md` are 0 at degenerate states
/// (`β = 0`, resp. `α^max = 0`).
pub fn snapshot(state: &OpinionCounts) -> QuantitySnapshot {
    let ps = PowerSums::of(state);
    let n = ps.n as f64;
    let n2 = n * n;
    let beta = ps.d as f64 / n;
    let gamma = ps.s2 as f64 / n2;
    let alpha_max = ps.max as f64 / n;
    let (gamma_tilde, alpha_max_tilde) = if ps.d == 0 {
        (0.0, 0.0)
    } else {
        let d = ps.d as f64;
        (ps.s2 as f64 / (d * d), ps.max as f64 / d)
    };
    let md = if ps.max == 0 {
        0.0
    } else {
        let m = ps.max as f64;
        ps.s2 as f64 / (m * m)
    };
    QuantitySnapshot {
        n: state.n(),
        beta,
        gamma,
        psi: ps.psi_scaled() as f64 / n2,
        gamma_tilde,
        alpha_max,
        alpha_max_tilde,
        argmax: ps.argmax + 1,
        alpha_runner_up: ps.runner_up as f64 / n,
        p3: ps.s3 as f64 / (n2 * n),
        p4: ps.s4 as f64 / (n2 * n2),
        md,
        alive: ps.alive,
    }
}

/// Thresholds and multiplicative constants for the stopping events.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdSet {
    pub x_beta: f64,
    pub x_psi: f64,
    pub x_gamma: f64,
    pub x_eta: f64,
    pub c_weak: f64,
    pub c_strong: f64,
    pub c_eta: f64,
    pub c_max_up: f64,
    pub c_max_down: f64,
    pub c_tilde_max_up: f64,
    pub c_tilde_max_down: f64,
    pub c_delta_up: f64,
    pub c_delta_down: f64,
    /// `|δ|` threshold is `c_delta_plus / √n`.
    pub c_delta_plus: f64,
}

impl ThresholdSet {
    /// Default thresholds for `n` vertices (natural logarithm).
    pub fn for_n(n: u64) -> Self {
        let nf = n as f64;
        let ln = nf.ln();
        let sqrt = nf.sqrt();
        let x_beta = ln.powf(0.6) / sqrt;
        let c_strong = 0.05;
        Self {
            x_beta,
            x_psi: x_beta / 4.0,
            x_gamma: ln * ln / sqrt,
            x_eta: ln.powf(0.8) / sqrt,
            c_weak: 0.1,
            c_strong,
            c_eta: c_strong / (1.0 - c_strong),
            c_max_up: 0.1,
            c_max_down: 0.1,
            c_tilde_max_up: 0.1,
            c_tilde_max_down: 0.1,
            c_delta_up: 0.1,
            c_delta_down: 0.1,
            c_delta_plus: 0.001,
        }
    }

    pub fn x_delta(&self, n: u64) -> f64 {
        self.c_delta_plus / (n as f64).sqrt()
    }
}

/// `δ^(ε)(i, j) = α_i − (1 + ε)·α_j` for 1-based, distinct `i`, `j`.
pub fn gap(state: &OpinionCounts, i: usize, j: usize, eps: f64) -> Result<f64> {
    state.check_index(i)?;
    state.check_index(j)?;
    if i == j {
        return Err(Error::SamePair(i));
    }
    Ok(state.alpha(i)? - (1.0 + eps) * state.alpha(j)?)
}

/// `η(j) = α^max − (1 + c_η)·α_j`. Returns 0 at the all-⊥ state.
pub fn eta(state: &OpinionCounts, j: usize, thresholds: &ThresholdSet) -> Result<f64> {
    let cj = state.count(j)?;
    let max = state.counts().iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Ok(0.0);
    }
    let n = state.n() as f64;
    Ok(max as f64 / n - (1.0 + thresholds.c_eta) * (cj as f64 / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum OpinionClass {
    Weak,
    Strong,
    Neither,
}

/// Weak iff `α_i ≤ (1 − c_weak)·α^max`, strong iff `α_i ≥ (1 − c_strong)·α^max`.
/// With `α^max = 0` both tests hold; the opinion is reported weak.
pub fn classify_opinion(state: &OpinionCounts, i: usize, thresholds: &ThresholdSet) -> Result<OpinionClass> {
    let ci = state.count(i)? as f64;
    let max = state.counts().iter().copied().max().unwrap_or(0) as f64;
    Ok(if ci <= (1.0 - thresholds.c_weak) * max {
        OpinionClass::Weak
    } else if ci >= (1.0 - thresholds.c_strong) * max {
        OpinionClass::Strong
    } else {
        OpinionClass::Neither
    })
}

/// Threshold events tracked by [`StoppingTracker`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingEvent {
    BetaUp,
    BetaDown,
    PsiUp,
    PsiDown,
    GammaUp,
    MaxUp,
    MaxDown,
    TildeMaxUp,
    TildeMaxDown,
    UniqueStrong,
    DeltaUp,
    DeltaDown,
    DeltaPlus,
}

impl StoppingEvent {
    pub const ALL: [StoppingEvent; 13] = [
        StoppingEvent::BetaUp,
        StoppingEvent::BetaDown,
        StoppingEvent::PsiUp,
        StoppingEvent::PsiDown,
        StoppingEvent::GammaUp,
        StoppingEvent::MaxUp,
        StoppingEvent::MaxDown,
        StoppingEvent::TildeMaxUp,
        StoppingEvent::TildeMaxDown,
        StoppingEvent::UniqueStrong,
        StoppingEvent::DeltaUp,
        StoppingEvent::DeltaDown,
        StoppingEvent::DeltaPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StoppingEvent::BetaUp => "beta_up",
            StoppingEvent::BetaDown => "beta_down",
            StoppingEvent::PsiUp => "psi_up",
            StoppingEvent::PsiDown => "psi_down",
            StoppingEvent::GammaUp => "gamma_up",
            StoppingEvent::MaxUp => "max_up",
            StoppingEvent::MaxDown => "max_down",
            StoppingEvent::TildeMaxUp => "tilde_max_up",
            StoppingEvent::TildeMaxDown => "tilde_max_down",
            StoppingEvent::UniqueStrong => "unique_strong",
            StoppingEvent::DeltaUp => "delta_up",
            StoppingEvent::DeltaDown => "delta_down",
            StoppingEvent::DeltaPlus => "delta_plus",
        }
    }
}

impl fmt::Display for StoppingEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional `δ^(ε)(i, j)` pair whose multiplicative and absolute crossings
/// are tracked alongside the scalar events.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrackedPair {
    pub i: usize,
    pub j: usize,
    pub eps: f64,
}

#[derive(Clone, Debug)]
struct Baseline {
    alpha_max: f64,
    alpha_max_tilde: f64,
    delta: Option<f64>,
}

/// Records the first step at which each threshold event holds.
///
/// Multiplicative events compare against the values at the first step fed
/// to the tracker. Every event fires at most once.
#[derive(Clone, Debug)]
pub struct StoppingTracker {
    thresholds: ThresholdSet,
    pair: Option<TrackedPair>,
    baseline: Option<Baseline>,
    last_step: Option<u64>,
    hits: BTreeMap<StoppingEvent, u64>,
}

impl StoppingTracker {
    pub fn new(thresholds: ThresholdSet) -> Self {
        Self {
            thresholds,
            pair: None,
            baseline: None,
            last_step: None,
            hits: BTreeMap::new(),
        }
    }

    /// Also track `δ^(ε)(i, j)`; only observed through [`Self::update_state`].
    pub fn with_pair(mut self, pair: TrackedPair) -> Self {
        self.pair = Some(pair);
        self
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn first_hit(&self, event: StoppingEvent) -> Option<u64> {
        self.hits.get(&event).copied()
    }

    /// All fired events with their first-hitting steps.
    pub fn hits(&self) -> &BTreeMap<StoppingEvent, u64> {
        &self.hits
    }

    /// Feeds the snapshot at `step`; returns the events that fire now.
    pub fn update(&mut self, step: u64, snap: &QuantitySnapshot) -> Result<Vec<StoppingEvent>> {
        self.feed(step, snap, None)
    }

    /// Like [`Self::update`], computing the snapshot and the tracked pair gap
    /// from `state`.
    pub fn update_state(&mut self, step: u64, state: &OpinionCounts) -> Result<Vec<StoppingEvent>> {
        let delta = match self.pair {
            Some(p) => Some(gap(state, p.i, p.j, p.eps)?),
            None => None,
        };
        self.feed(step, &snapshot(state), delta)
    }

    fn feed(&mut self, step: u64, snap: &QuantitySnapshot, delta: Option<f64>) -> Result<Vec<StoppingEvent>> {
        if let Some(last) = self.last_step {
            if step <= last {
                return Err(Error::NonMonotoneStep { last, got: step });
            }
        }
        self.last_step = Some(step);
        let base = self
            .baseline
            .get_or_insert(Baseline {
                alpha_max: snap.alpha_max,
                alpha_max_tilde: snap.alpha_max_tilde,
                delta,
            })
            .clone();

        let th = &self.thresholds;
        let beta_line = 0.5 - th.x_beta;
        let eta_min = snap.alpha_max - (1.0 + th.c_eta) * snap.alpha_runner_up;
        let mut holding = vec![
            (StoppingEvent::BetaUp, snap.beta >= beta_line),
            (StoppingEvent::BetaDown, snap.beta < beta_line),
            (StoppingEvent::PsiUp, snap.psi > th.x_psi),
            (StoppingEvent::PsiDown, snap.psi <= th.x_psi),
            (StoppingEvent::GammaUp, snap.gamma >= th.x_gamma),
            (
                StoppingEvent::MaxUp,
                snap.alpha_max >= (1.0 + th.c_max_up) * base.alpha_max,
            ),
            (
                StoppingEvent::MaxDown,
                snap.alpha_max <= (1.0 - th.c_max_down) * base.alpha_max,
            ),
            (
                StoppingEvent::TildeMaxUp,
                snap.alpha_max_tilde >= (1.0 + th.c_tilde_max_up) * base.alpha_max_tilde,
            ),
            (
                StoppingEvent::TildeMaxDown,
                snap.alpha_max_tilde <= (1.0 - th.c_tilde_max_down) * base.alpha_max_tilde,
            ),
            (StoppingEvent::UniqueStrong, eta_min >= th.x_eta),
        ];
        if let (Some(d), Some(d0)) = (delta, base.delta) {
            holding.push((StoppingEvent::DeltaUp, d >= (1.0 + th.c_delta_up) * d0));
            holding.push((StoppingEvent::DeltaDown, d <= (1.0 - th.c_delta_down) * d0));
            holding.push((StoppingEvent::DeltaPlus, d.abs() >= th.x_delta(snap.n)));
        }

        let mut fired = Vec::new();
        for (event, holds) in holding {
            if holds && !self.hits.contains_key(&event) {
                self.hits.insert(event, step);
                fired.push(event);
            }
        }
        Ok(fired)
    }
}
