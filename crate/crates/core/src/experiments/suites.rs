//! Scaling and first-round collapse experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::{run_batch, with_threads, BatchConfig};
use super::derive_seed;
use super::init::{make_init, InitSpec};
use super::stats::{loglog_slope, lower_median, mean_stderr, quantile};
use crate::analytic::{exact_moments_gossip, p_bot_exact};
use crate::dynamics::{gossip_step, Model, StepRandomness};
use crate::error::{Error, Result};
use crate::quantities::PowerSums;

/// Initial layout of a scaling run; `n` and `k` come from the suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    BalancedDecided,
    BalancedHalf,
    LowerBound { c: f64 },
}

impl InitKind {
    pub fn spec(self, n: u64, k: usize) -> InitSpec {
        match self {
            InitKind::BalancedDecided => InitSpec::BalancedDecided { n, k },
            InitKind::BalancedHalf => InitSpec::BalancedHalf { n, k },
            InitKind::LowerBound { c } => InitSpec::LowerBound { n, k, c },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalingConfig {
    pub model: Model,
    pub n: u64,
    pub k_list: Vec<usize>,
    pub init: InitKind,
    pub trials: u64,
    pub master_seed: u64,
    pub max_steps: u64,
    pub threads: Option<usize>,
    /// Inclusive `k` range of the slope fit; `None` fits every `k`.
    pub slope_range: Option<(usize, usize)>,
}

/// Statistics of one `k`. Order statistics are over successful trials only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub k: usize,
    pub trials: u64,
    pub successes: u64,
    pub failures: u64,
    pub timeouts: u64,
    pub success_rate: f64,
    pub median_steps: Option<u64>,
    pub q10: Option<u64>,
    pub q90: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub model: Model,
    pub n: u64,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of ln(median) on ln(k) over `slope_range`.
    pub slope: Option<f64>,
    pub slope_range: Option<(usize, usize)>,
}

impl ScalingReport {
    pub fn row(&self, k: usize) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// Slope over the rows with `lo ≤ k ≤ hi`.
    pub fn slope_over(&self, lo: usize, hi: usize) -> Option<f64> {
        slope_of(&self.rows, Some((lo, hi)))
    }
}

fn slope_of(rows: &[ScalingRow], range: Option<(usize, usize)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| range.is_none_or(|(lo, hi)| r.k >= lo && r.k <= hi))
        .filter_map(|r| r.median_steps.map(|m| (r.k as f64, m as f64)))
        .collect();
    loglog_slope(&pts)
}

/// Runs `trials` trials for every `k`. Each `k` draws from its own seed
/// derived from `master_seed`, so adding a `k` leaves the others unchanged.
pub fn scaling_suite(cfg: &ScalingConfig) -> Result<ScalingReport> {
    if cfg.k_list.is_empty() {
        return Err(Error::Config("k list is empty".into()));
    }
    let mut rows = Vec::with_capacity(cfg.k_list.len());
    for &k in &cfg.k_list {
        let init = make_init(&cfg.init.spec(cfg.n, k))?;
        let batch = run_batch(&BatchConfig {
            model: cfg.model,
            init,
            trials: cfg.trials,
            master_seed: derive_seed(cfg.master_seed, k as u64),
            max_steps: cfg.max_steps,
            record_every: 0,
            threads: cfg.threads,
        })?;
        let mut steps: Vec<u64> = batch
            .records
            .iter()
            .filter(|r| r.outcome.is_success())
            .map(|r| r.steps())
            .collect();
        steps.sort_unstable();
        let timeouts = batch
            .records
            .iter()
            .filter(|r| matches!(r.outcome, crate::dynamics::TrialOutcome::Timeout { .. }))
            .count() as u64;
        let successes = steps.len() as u64;
        rows.push(ScalingRow {
            k,
            trials: cfg.trials,
            successes,
            failures: cfg.trials - successes - timeouts,
            timeouts,
            success_rate: successes as f64 / cfg.trials as f64,
            median_steps: lower_median(&steps),
            q10: quantile(&steps, 0.1),
            q90: quantile(&steps, 0.9),
        });
    }
    Ok(ScalingReport {
        model: cfg.model,
        n: cfg.n,
        slope: slope_of(&rows, cfg.slope_range),
        slope_range: cfg.slope_range,
        rows,
    })
}

#[derive(Clone, Debug)]
pub struct CollapseConfig {
    pub n: u64,
    pub k: usize,
    pub trials: u64,
    pub master_seed: u64,
    pub threads: Option<usize>,
}

/// Aggregate of one gossip round from the balanced all-decided state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollapseReport {
    pub n: u64,
    pub k: usize,
    pub trials: u64,
    pub gamma0: f64,
    pub mean_beta1: f64,
    pub stderr_beta1: f64,
    /// Standard error implied by the exact one-round variance of β.
    pub exact_stderr_beta1: f64,
    /// `n·γ₀·ln n`.
    pub survivor_bound: f64,
    pub within_bound_fraction: f64,
    pub mean_survivors: f64,
    pub max_survivors: usize,
    pub all_undecided_rate: f64,
    pub all_undecided_stderr: f64,
    pub p_bot_exact: f64,
}

pub fn collapse_suite(cfg: &CollapseConfig) -> Result<CollapseReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let init = make_init(&InitSpec::BalancedDecided { n: cfg.n, k: cfg.k })?;
    let outcomes: Vec<(f64, usize)> = with_threads(cfg.threads, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = StepRandomness::new(cfg.master_seed, t);
                let next = gossip_step(&init, &mut rng);
                let ps = PowerSums::of(&next);
                (ps.d as f64 / cfg.n as f64, ps.alive)
            })
            .collect()
    })?;
    let n = cfg.n as f64;
    let ps0 = PowerSums::of(&init);
    let gamma0 = ps0.s2 as f64 / (n * n);
    let survivor_bound = n * gamma0 * n.ln();
    let betas: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let (mean_beta1, stderr_beta1) = mean_stderr(&betas);
    let empties: Vec<f64> = outcomes.iter().map(|o| f64::from(u8::from(o.0 == 0.0))).collect();
    let (all_undecided_rate, all_undecided_stderr) = mean_stderr(&empties);
    let within = outcomes.iter().filter(|o| o.1 as f64 <= survivor_bound).count();
    let var_beta = exact_moments_gossip(&init, &[])?.var_beta;
    let trials = cfg.trials as f64;
    Ok(CollapseReport {
        n: cfg.n,
        k: cfg.k,
        trials: cfg.trials,
        gamma0,
        mean_beta1,
        stderr_beta1,
        exact_stderr_beta1: (var_beta / trials).sqrt(),
        survivor_bound,
        within_bound_fraction: within as f64 / trials,
        mean_survivors: outcomes.iter().map(|o| o.1 as f64).sum::<f64>() / trials,
        max_survivors: outcomes.iter().map(|o| o.1).max().unwrap_or(0),
        all_undecided_rate,
        all_undecided_stderr,
        p_bot_exact: p_bot_exact(&init),
    })
}
