use rand::Rng;
use serde::Serialize;

use crate::dynamics::{gossip_step, pp_step, Model, OpinionCounts};
use crate::quantities::PowerSums;

/// Sample mean and variance with the CLT standard error of the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub var: f64,
    pub stderr: f64,
}

/// Welford accumulator.
#[derive(Clone, Copy, Debug, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn estimate(&self) -> Estimate {
        let var = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        Estimate {
            mean: self.mean,
            var,
            stderr: (var / self.count.max(1) as f64).sqrt(),
        }
    }
}

/// Empirical one-step moments from repeated draws of the simulator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McMoments {
    pub model: Model,
    pub samples: u64,
    pub alpha: Vec<Estimate>,
    pub beta: Estimate,
    pub gamma: Estimate,
    pub psi: Estimate,
    pub gamma_tilde: Estimate,
    pub alpha_max_tilde: Estimate,
    /// Fraction of draws that landed in the all-⊥ state.
    pub all_undecided: Estimate,
}

/// Draws `samples` independent one-step transitions from `state`.
///
/// Each observable is accumulated as its change from `state`, so the
/// variances do not lose digits to the level.
pub fn mc_onestep_moments<R: Rng + ?Sized>(
    model: Model,
    state: &OpinionCounts,
    samples: u64,
    rng: &mut R,
) -> McMoments {
    let samples = samples.max(1);
    let n = state.n() as f64;
    let n2 = n * n;
    let src = PowerSums::of(state);
    let (gt0, amt0) = tildes(&src);
    let mut alpha = vec![Welford::default(); state.k()];
    let mut beta = Welford::default();
    let mut gamma = Welford::default();
    let mut psi = Welford::default();
    let mut gamma_tilde = Welford::default();
    let mut alpha_max_tilde = Welford::default();
    let mut all_undecided = Welford::default();
    for _ in 0..samples {
        let next = match model {
            Model::Gossip => gossip_step(state, rng),
            Model::Pp => pp_step(state, rng),
        };
        let ps = PowerSums::of(&next);
        for ((acc, &a), &b) in alpha.iter_mut().zip(next.counts()).zip(state.counts()) {
            acc.push((a as i64 - b as i64) as f64 / n);
        }
        beta.push((ps.d as i128 - src.d as i128) as f64 / n);
        gamma.push((ps.s2 as i128 - src.s2 as i128) as f64 / n2);
        psi.push((ps.psi_scaled() - src.psi_scaled()) as f64 / n2);
        let (gt, amt) = tildes(&ps);
        gamma_tilde.push(gt - gt0);
        alpha_max_tilde.push(amt - amt0);
        all_undecided.push(if ps.d == 0 { 1.0 } else { 0.0 });
    }
    let shift = |w: &Welford, level: f64| {
        let mut e = w.estimate();
        e.mean += level;
        e
    };
    McMoments {
        model,
        samples,
        alpha: alpha
            .iter()
            .zip(state.counts())
            .map(|(w, &c)| shift(w, c as f64 / n))
            .collect(),
        beta: shift(&beta, src.d as f64 / n),
        gamma: shift(&gamma, src.s2 as f64 / n2),
        psi: shift(&psi, src.psi_scaled() as f64 / n2),
        gamma_tilde: shift(&gamma_tilde, gt0),
        alpha_max_tilde: shift(&alpha_max_tilde, amt0),
        all_undecided: all_undecided.estimate(),
    }
}

fn tildes(ps: &PowerSums) -> (f64, f64) {
    if ps.d == 0 {
        (0.0, 0.0)
    } else {
        let d = ps.d as f64;
        (ps.s2 as f64 / (d * d), ps.max as f64 / d)
    }
}
