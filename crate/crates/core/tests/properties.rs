use proptest::prelude::*;

use usd_consensus::analytic::{exact_moments, p_bot_exact};
use usd_consensus::dynamics::{gossip_step, pp_step, run_trial, Model, OpinionCounts, StepRandomness, TrialOutcome};
use usd_consensus::oracle::{exact_absorption, gossip_onestep_exhaustive, moments_of, pp_onestep_exact, Precision};
use usd_consensus::quantities::{snapshot, PowerSums};

fn state(max_n: u64, max_k: usize) -> impl Strategy<Value = OpinionCounts> {
    (1..=max_k)
        .prop_flat_map(move |k| (prop::collection::vec(0..=max_n, k), 0..=max_n))
        .prop_filter_map("n in range", move |(counts, und)| {
            let n: u64 = counts.iter().sum::<u64>() + und;
            (n >= 1 && n <= max_n).then(|| OpinionCounts::new(counts, und).unwrap())
        })
}

fn model() -> impl Strategy<Value = Model> {
    prop_oneof![Just(Model::Gossip), Just(Model::Pp)]
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale <= 1e-300 || (a - b).abs() <= tol * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn steps_conserve_vertices(s in state(5000, 12), seed in any::<u64>()) {
        let mut rng = StepRandomness::new(seed, 0);
        let g = gossip_step(&s, &mut rng);
        prop_assert_eq!(g.n(), s.n());
        prop_assert_eq!(g.k(), s.k());
        let p = pp_step(&s, &mut rng);
        prop_assert_eq!(p.n(), s.n());
        let moved: u64 = p.counts().iter().zip(s.counts()).map(|(a, b)| a.abs_diff(*b)).sum::<u64>()
            + p.undecided().abs_diff(s.undecided());
        prop_assert!(moved == 0 || moved == 2);
    }

    #[test]
    fn dead_opinions_stay_dead(s in state(300, 6), seed in any::<u64>()) {
        let mut rng = StepRandomness::new(seed, 1);
        for next in [gossip_step(&s, &mut rng), pp_step(&s, &mut rng)] {
            for (a, b) in next.counts().iter().zip(s.counts()) {
                prop_assert!(*b > 0 || *a == 0);
            }
        }
    }

    #[test]
    fn trials_are_deterministic(s in state(200, 5), m in model(), seed in any::<u64>(), stream in 0u64..1000) {
        let run = || {
            let mut rng = StepRandomness::new(seed, stream);
            run_trial(m, &s, &mut rng, 200_000, None)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn pp_never_fails_once_someone_is_decided(s in state(60, 4), seed in any::<u64>()) {
        prop_assume!(s.decided() > 0);
        let mut rng = StepRandomness::new(seed, 0);
        let out = run_trial(Model::Pp, &s, &mut rng, 5_000_000, None);
        let failed = matches!(out, TrialOutcome::Failure { .. });
        prop_assert!(!failed);
        prop_assert_eq!(pp_onestep_exact(&s).all_undecided_mass(), 0.0);
    }

    #[test]
    fn snapshot_inequalities(s in state(100_000, 40)) {
        let q = snapshot(&s);
        let eps = 1e-12;
        prop_assert!((0.0..=1.0).contains(&q.beta));
        prop_assert!(q.gamma <= q.beta * q.beta + eps);
        prop_assert!(q.alpha_max * q.alpha_max <= q.gamma + eps);
        prop_assert!(q.gamma <= q.alpha_max * q.beta + eps);
        prop_assert!((q.psi - (2.0 * q.beta * q.beta - q.beta - q.gamma)).abs() <= 1e-12);
        if q.beta > 0.0 {
            prop_assert!(q.gamma_tilde <= 1.0 + eps);
            prop_assert!(q.gamma_tilde * q.alive as f64 >= 1.0 - 1e-9);
            prop_assert!(q.alpha_max_tilde >= q.gamma_tilde - eps);
            prop_assert!(q.md >= 1.0 - eps);
            prop_assert!(q.md <= q.alive as f64 + 1e-9);
        }
    }

    #[test]
    fn gossip_beta_drift_is_minus_psi(s in state(1_000_000, 30)) {
        let m = exact_moments(Model::Gossip, &s, &[]).unwrap();
        let ps = PowerSums::of(&s);
        let n2 = (ps.n * ps.n) as f64;
        // β − ψ = (2d(n − d) + s2)/n², exact in integers.
        let target = (2 * ps.d * (ps.n - ps.d) + ps.s2) as f64 / n2;
        prop_assert!(rel_close(m.mean_beta, target, 1e-14));
    }

    #[test]
    fn alpha_covariances_sum_to_beta_covariance(s in state(10_000, 8), m in model()) {
        let r = exact_moments(m, &s, &[]).unwrap();
        for j in 1..=s.k() {
            let row: f64 = (1..=s.k()).map(|i| r.cov_alpha(i, j).unwrap()).sum();
            let target = r.cov_alpha_beta(j).unwrap();
            let scale = (1..=s.k()).map(|i| r.cov_alpha(i, j).unwrap().abs()).sum::<f64>();
            prop_assert!((row - target).abs() <= 1e-12 * scale.max(1e-300));
        }
        prop_assert!(r.var_beta >= -1e-18);
        prop_assert!(r.var_alpha.iter().all(|&v| v >= -1e-18));
    }

    #[test]
    fn pp_formulas_match_exact_row(s in state(400, 6)) {
        let a = exact_moments(Model::Pp, &s, &[]).unwrap();
        let o = moments_of(&pp_onestep_exact(&s), &[]).unwrap();
        prop_assert!(rel_close(a.mean_beta, o.mean_beta, 1e-12));
        prop_assert!(rel_close(a.var_beta, o.var_beta, 1e-9));
        prop_assert!(rel_close(a.mean_gamma, o.mean_gamma, 1e-12));
        for i in 1..=s.k() {
            prop_assert!(rel_close(a.mean_alpha[i - 1], o.mean_alpha[i - 1], 1e-12));
            prop_assert!(rel_close(a.var_alpha[i - 1], o.var_alpha[i - 1], 1e-9));
            prop_assert!(rel_close(a.cov_alpha_beta(i).unwrap(), o.cov_alpha_beta[i - 1], 1e-9));
        }
    }

    #[test]
    fn distributions_are_normalised(s in state(6, 3), m in model()) {
        let d = match m {
            Model::Gossip => gossip_onestep_exhaustive(&s).unwrap(),
            Model::Pp => pp_onestep_exact(&s),
        };
        let total: u128 = d.entries.iter().map(|e| e.1).sum();
        prop_assert_eq!(total, d.denominator);
        prop_assert!(d.entries.iter().all(|e| e.0.n() == s.n() && e.0.k() == s.k()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn gossip_formulas_match_enumeration(s in state(6, 3)) {
        let a = exact_moments(Model::Gossip, &s, &[]).unwrap();
        let o = moments_of(&gossip_onestep_exhaustive(&s).unwrap(), &[]).unwrap();
        prop_assert!(rel_close(a.mean_beta, o.mean_beta, 1e-12));
        prop_assert!(rel_close(a.var_beta, o.var_beta, 1e-10));
        prop_assert!(rel_close(a.mean_gamma, o.mean_gamma, 1e-12));
        for i in 1..=s.k() {
            for j in 1..=s.k() {
                prop_assert!(rel_close(a.cov_alpha(i, j).unwrap(), o.cov(i, j), 1e-10));
            }
        }
        prop_assert!((p_bot_exact(&s) - o.all_undecided_mass).abs() <= 1e-12);
    }

    #[test]
    fn absorption_probabilities_add_up(s in state(5, 3), m in model()) {
        let sol = exact_absorption(m, &s, 20_000, Precision::Double).unwrap();
        let wins: f64 = sol.winner_probabilities.iter().sum();
        prop_assert!((sol.failure_probability + sol.success_probability - 1.0).abs() < 1e-9);
        prop_assert!((wins - sol.success_probability).abs() < 1e-9);
        prop_assert!(sol.expected_steps >= 0.0);
        if m == Model::Pp && s.decided() > 0 {
            prop_assert!(sol.failure_probability.abs() < 1e-12);
        }
        // Dead opinions never win.
        for (p, &c) in sol.winner_probabilities.iter().zip(s.counts()) {
            prop_assert!(c > 0 || p.abs() < 1e-15);
        }
    }

    #[test]
    fn failure_is_at_least_first_round_collapse(s in state(5, 2)) {
        prop_assume!(s.undecided() == 0);
        let sol = exact_absorption(Model::Gossip, &s, 20_000, Precision::Double).unwrap();
        prop_assert!(sol.failure_probability + 1e-12 >= p_bot_exact(&s));
    }
}
