//! The count-level simulators against straightforward per-vertex ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use usd_consensus::dynamics::{run_trial, usd_update, Model, Opinion, OpinionCounts, StepRandomness};

fn vertices(s: &OpinionCounts) -> Vec<Opinion> {
    let mut v = vec![Opinion::Undecided; s.undecided() as usize];
    for (i, &c) in s.counts().iter().enumerate() {
        v.extend(std::iter::repeat_n(Opinion::Decided(i as u32 + 1), c as usize));
    }
    v
}

fn absorbed(v: &[Opinion]) -> bool {
    v.iter().all(|o| *o == v[0])
}

fn vertex_gossip(s: &OpinionCounts, rng: &mut ChaCha8Rng) -> u64 {
    let mut v = vertices(s);
    let mut t = 0;
    while !absorbed(&v) {
        let old = v.clone();
        for x in v.iter_mut() {
            *x = usd_update(*x, old[rng.random_range(0..old.len())]);
        }
        t += 1;
    }
    t
}

fn vertex_pp(s: &OpinionCounts, rng: &mut ChaCha8Rng) -> u64 {
    let mut v = vertices(s);
    let n = v.len();
    let mut t = 0;
    while !absorbed(&v) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        v[a] = usd_update(v[a], v[b]);
        t += 1;
    }
    t
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, (var / xs.len() as f64).sqrt())
}

fn compare(model: Model, s: &OpinionCounts, trials: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let naive: Vec<f64> = (0..trials)
        .map(|_| match model {
            Model::Gossip => vertex_gossip(s, &mut rng),
            Model::Pp => vertex_pp(s, &mut rng),
        } as f64)
        .collect();
    let counts: Vec<f64> = (0..trials)
        .map(|t| {
            let mut r = StepRandomness::new(78, t);
            run_trial(model, s, &mut r, u64::MAX, None).steps() as f64
        })
        .collect();
    let (m1, se1) = mean_se(&naive);
    let (m2, se2) = mean_se(&counts);
    let z = (m1 - m2).abs() / (se1 * se1 + se2 * se2).sqrt();
    assert!(
        z < 4.0,
        "{model} {s}: per-vertex {m1} ± {se1}, count-level {m2} ± {se2}"
    );
}

#[test]
fn gossip_absorption_times_agree() {
    compare(
        Model::Gossip,
        &OpinionCounts::new(vec![60, 60, 60, 60], 260).unwrap(),
        1500,
    );
    compare(Model::Gossip, &OpinionCounts::new(vec![1; 64], 0).unwrap(), 1500);
}

#[test]
fn pp_absorption_times_agree() {
    compare(Model::Pp, &OpinionCounts::new(vec![20, 15, 10], 35).unwrap(), 1500);
}
