use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{run_trial, Model, OpinionCounts, StepRandomness, TrialOutcome};
use crate::error::{Error, Result};
use crate::quantities::{snapshot, QuantitySnapshot, StoppingEvent, StoppingTracker, ThresholdSet};

/// Parameters of one batch of independent trials.
#[derive(Clone, Debug)]
pub struct BatchConfig {
    pub model: Model,
    pub init: OpinionCounts,
    pub trials: u64,
    pub master_seed: u64,
    pub max_steps: u64,
    /// Record a trajectory row every this many steps; 0 disables recording.
    pub record_every: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub outcome: TrialOutcome,
    pub master_seed: u64,
    /// Stream of the trial's generator; equal to the trial index.
    pub stream_id: u64,
}

impl TrialRecord {
    pub fn steps(&self) -> u64 {
        self.outcome.steps()
    }

    pub fn outcome_name(&self) -> &'static str {
        match self.outcome {
            TrialOutcome::Consensus { .. } => "consensus",
            TrialOutcome::Failure { .. } => "failure",
            TrialOutcome::Timeout { .. } => "timeout",
        }
    }
}

/// Observables of one trial at one recorded step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub trial: u64,
    pub step: u64,
    pub snapshot: QuantitySnapshot,
    /// Stopping events first hit since the previous row, with their steps.
    pub events: Vec<(StoppingEvent, u64)>,
}

impl TrajectoryRow {
    /// `name@step` entries joined by `;`.
    pub fn events_field(&self) -> String {
        self.events
            .iter()
            .map(|(e, t)| format!("{}@{t}", e.name()))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BatchResult {
    pub records: Vec<TrialRecord>,
    pub rows: Vec<TrajectoryRow>,
}

/// Runs `f` inside a pool with `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs one trial, recording rows when `record_every > 0`.
///
/// Stopping events are evaluated every round for gossip and at recorded
/// steps for the population protocol, where per-interaction snapshots would
/// dominate the cost.
pub fn run_recorded_trial(cfg: &BatchConfig, trial: u64) -> (TrialRecord, Vec<TrajectoryRow>) {
    let mut rng = StepRandomness::new(cfg.master_seed, trial);
    let record = |outcome| TrialRecord {
        trial,
        outcome,
        master_seed: cfg.master_seed,
        stream_id: trial,
    };
    if cfg.record_every == 0 {
        let outcome = run_trial(cfg.model, &cfg.init, &mut rng, cfg.max_steps, None);
        return (record(outcome), Vec::new());
    }

    let mut tracker = StoppingTracker::new(ThresholdSet::for_n(cfg.init.n()));
    let mut pending: Vec<(StoppingEvent, u64)> = Vec::new();
    let mut rows = Vec::new();
    let track_every_step = cfg.model == Model::Gossip;
    let fire = |tracker: &mut StoppingTracker, pending: &mut Vec<(StoppingEvent, u64)>, t, snap: &QuantitySnapshot| {
        let fired = tracker.update(t, snap).expect("steps increase");
        pending.extend(fired.into_iter().map(|e| (e, t)));
    };

    let snap0 = snapshot(&cfg.init);
    fire(&mut tracker, &mut pending, 0, &snap0);
    rows.push(TrajectoryRow {
        trial,
        step: 0,
        snapshot: snap0,
        events: std::mem::take(&mut pending),
    });
    let mut timeout_state = None;
    let mut observer = |t: u64, state: &OpinionCounts| {
        let recorded = t.is_multiple_of(cfg.record_every);
        if recorded || track_every_step {
            let snap = snapshot(state);
            fire(&mut tracker, &mut pending, t, &snap);
            if recorded {
                rows.push(TrajectoryRow {
                    trial,
                    step: t,
                    snapshot: snap,
                    events: std::mem::take(&mut pending),
                });
            }
        }
        if t == cfg.max_steps {
            timeout_state = Some(state.clone());
        }
    };
    let outcome = run_trial(cfg.model, &cfg.init, &mut rng, cfg.max_steps, Some(&mut observer));
    let last_step = outcome.steps();
    if last_step > 0 && last_step % cfg.record_every != 0 {
        // Terminal (or timeout) step that fell between recording points.
        let n = cfg.init.n();
        let k = cfg.init.k();
        let last_state = match outcome {
            TrialOutcome::Consensus { winner, .. } => {
                let mut counts = vec![0; k];
                counts[winner - 1] = n;
                OpinionCounts::with_n(n, counts, 0).expect("consensus state")
            }
            TrialOutcome::Failure { .. } => OpinionCounts::with_n(n, vec![0; k], n).expect("all-undecided state"),
            TrialOutcome::Timeout { .. } => timeout_state.expect("observer saw the last step"),
        };
        let snap = snapshot(&last_state);
        if !track_every_step {
            fire(&mut tracker, &mut pending, last_step, &snap);
        }
        rows.push(TrajectoryRow {
            trial,
            step: last_step,
            snapshot: snap,
            events: std::mem::take(&mut pending),
        });
    }
    (record(outcome), rows)
}

/// Runs `cfg.trials` independent trials; trial `t` uses stream `t` of
/// `cfg.master_seed`. Output order is by trial index regardless of
/// scheduling.
pub fn run_batch(cfg: &BatchConfig) -> Result<BatchResult> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let per_trial: Vec<(TrialRecord, Vec<TrajectoryRow>)> = with_threads(cfg.threads, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_recorded_trial(cfg, t))
            .collect()
    })?;
    let mut out = BatchResult::default();
    for (rec, rows) in per_trial {
        out.records.push(rec);
        out.rows.extend(rows);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: Model, init: OpinionCounts, record_every: u64) -> BatchConfig {
        BatchConfig {
            model,
            init,
            trials: 16,
            master_seed: 99,
            max_steps: model.default_max_steps(),
            record_every,
            threads: None,
        }
    }

    #[test]
    fn recording_does_not_perturb_outcomes() {
        let init = OpinionCounts::new(vec![20, 15, 10], 19).unwrap();
        for model in [Model::Gossip, Model::Pp] {
            let plain = run_batch(&cfg(model, init.clone(), 0)).unwrap();
            let traced = run_batch(&cfg(model, init.clone(), 3)).unwrap();
            assert_eq!(plain.records, traced.records);
            assert!(plain.rows.is_empty());
            for rec in &traced.records {
                let steps: Vec<u64> = traced
                    .rows
                    .iter()
                    .filter(|r| r.trial == rec.trial)
                    .map(|r| r.step)
                    .collect();
                assert_eq!(steps[0], 0);
                assert_eq!(*steps.last().unwrap(), rec.steps());
                assert!(steps.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let init = OpinionCounts::new(vec![30, 30], 4).unwrap();
        let mut c = cfg(Model::Pp, init, 64);
        c.threads = Some(1);
        let one = run_batch(&c).unwrap();
        c.threads = Some(4);
        let four = run_batch(&c).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn events_are_reported_once() {
        let init = OpinionCounts::new(vec![40, 30, 20, 10], 0).unwrap();
        let res = run_batch(&cfg(Model::Gossip, init, 1)).unwrap();
        for t in 0..16 {
            let mut names: Vec<_> = res
                .rows
                .iter()
                .filter(|r| r.trial == t)
                .flat_map(|r| r.events.iter().map(|e| e.0))
                .collect();
            let before = names.len();
            names.sort();
            names.dedup();
            assert_eq!(before, names.len());
        }
    }
}
