use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use super::enumerate::OneStepDistribution;
use crate::analytic::{BoundLhs, DeltaPair};
use crate::error::Result;
use crate::numeric::CompensatedSum;
use crate::quantities::PowerSums;

/// Exact moments of every observable under a one-step distribution.
#[derive(Clone, Debug, Serialize)]
pub struct ExactMoments {
    pub n: u64,
    pub mean_alpha: Vec<f64>,
    pub var_alpha: Vec<f64>,
    /// Row-major `k × k` covariance of the next α vector.
    pub cov_alpha: Vec<f64>,
    pub cov_alpha_beta: Vec<f64>,
    pub mean_beta: f64,
    pub var_beta: f64,
    pub mean_gamma: f64,
    pub var_gamma: f64,
    pub mean_psi: f64,
    pub var_psi: f64,
    pub mean_gamma_tilde: f64,
    pub mean_alpha_max_tilde: f64,
    pub deltas: Vec<(DeltaPair, f64)>,
    pub all_undecided_mass: f64,
    /// Expected change of `γ̃` and `α̃^max` over the step; kept separately so
    /// drift comparisons do not lose digits to the level.
    pub gamma_tilde_drift: f64,
    pub alpha_max_tilde_drift: f64,
}

impl ExactMoments {
    pub fn k(&self) -> usize {
        self.mean_alpha.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.cov_alpha[(i - 1) * self.k() + (j - 1)]
    }

    /// Left side of a one-step bound; `beta0` is the current β.
    pub fn bound_lhs(&self, lhs: BoundLhs, beta0: f64) -> f64 {
        match lhs {
            BoundLhs::MeanGamma => self.mean_gamma,
            BoundLhs::BetaSqMeanGamma => beta0 * beta0 * self.mean_gamma,
            BoundLhs::MeanPsi => self.mean_psi,
            BoundLhs::MeanGammaTilde => self.mean_gamma_tilde,
            BoundLhs::MeanAlphaMaxTilde => self.mean_alpha_max_tilde,
            BoundLhs::VarBeta => self.var_beta,
            BoundLhs::VarGamma => self.var_gamma,
        }
    }
}

fn ratio(num: BigInt, den: BigInt) -> f64 {
    BigRational::new(num, den).to_f64().unwrap_or(f64::NAN)
}

/// `γ̃' − γ̃` as a single rounded ratio.
fn gamma_tilde_change(before: &PowerSums, after: &PowerSums) -> f64 {
    match (before.d, after.d) {
        (0, 0) => 0.0,
        (0, d1) => after.s2 as f64 / (d1 as f64 * d1 as f64),
        (d0, 0) => -(before.s2 as f64 / (d0 as f64 * d0 as f64)),
        (d0, d1) => {
            let (d0, d1) = (BigInt::from(d0), BigInt::from(d1));
            let num = BigInt::from(after.s2) * &d0 * &d0 - BigInt::from(before.s2) * &d1 * &d1;
            ratio(num, &d0 * &d0 * &d1 * &d1)
        }
    }
}

/// `α̃^max' − α̃^max` as a single rounded ratio.
fn alpha_max_tilde_change(before: &PowerSums, after: &PowerSums) -> f64 {
    match (before.d, after.d) {
        (0, 0) => 0.0,
        (0, d1) => after.max as f64 / d1 as f64,
        (d0, 0) => -(before.max as f64 / d0 as f64),
        (d0, d1) => {
            let num = after.max as i128 * d0 as i128 - before.max as i128 * d1 as i128;
            num as f64 / (d0 as f64 * d1 as f64)
        }
    }
}

/// Weighted integer sums `Σ w·x` and `Σ w·x·y` over the outcomes.
fn wsum(weights: &[BigInt], xs: &[BigInt]) -> BigInt {
    weights
        .iter()
        .zip(xs)
        .filter(|(_, x)| !x.is_zero())
        .map(|(w, x)| w * x)
        .sum()
}

fn wsum2(weights: &[BigInt], xs: &[BigInt], ys: &[BigInt]) -> BigInt {
    weights
        .iter()
        .zip(xs.iter().zip(ys))
        .filter(|(_, (x, y))| !x.is_zero() && !y.is_zero())
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

/// Exact integer moments of a scaled change `X = dx / scale` where every
/// outcome's `dx` is an integer and `W` is the total weight.
struct IntMoments {
    total: BigInt,
}

impl IntMoments {
    /// `x0/scale + E[X]` with `x0` the scaled level, rounded once.
    fn level_mean(&self, x0: BigInt, sx: &BigInt, scale: &BigInt) -> f64 {
        ratio(x0 * &self.total + sx, &self.total * scale)
    }

    fn level_mean_exact(&self, x0: BigInt, sx: &BigInt, scale: &BigInt) -> BigRational {
        BigRational::new(x0 * &self.total + sx, &self.total * scale)
    }

    /// `Cov(X, Y)` given `Σ w·dx`, `Σ w·dy` and `Σ w·dx·dy`.
    fn cov(&self, sx: &BigInt, sy: &BigInt, sxy: &BigInt, scale_x: &BigInt, scale_y: &BigInt) -> f64 {
        let num = &self.total * sxy - sx * sy;
        ratio(num, &self.total * &self.total * scale_x * scale_y)
    }
}

/// Moments of every observable of the next state under `dist`.
///
/// α, β, γ and ψ change by integer multiples of `1/n` or `1/n²`, so their
/// means, variances and covariances are exact rationals, each rounded once.
/// The normalised quantities `γ̃` and `α̃^max` only need means; those are
/// compensated sums of exactly rounded per-outcome changes.
pub fn moments_of(dist: &OneStepDistribution, pairs: &[DeltaPair]) -> Result<ExactMoments> {
    let source = &dist.source;
    for p in pairs {
        p.validate(source)?;
    }
    let k = source.k();
    let nb = BigInt::from(source.n());
    let n2b = &nb * &nb;
    let src = PowerSums::of(source);
    let weights: Vec<BigInt> = dist.entries.iter().map(|(_, w)| BigInt::from(*w)).collect();
    let im = IntMoments {
        total: BigInt::from(dist.denominator),
    };
    let outcome_sums: Vec<PowerSums> = dist.entries.iter().map(|(s, _)| PowerSums::of(s)).collect();

    // Integer changes per outcome.
    let dc: Vec<Vec<BigInt>> = (0..k)
        .map(|i| {
            dist.entries
                .iter()
                .map(|(s, _)| BigInt::from(s.counts()[i]) - BigInt::from(source.counts()[i]))
                .collect()
        })
        .collect();
    let dd: Vec<BigInt> = outcome_sums
        .iter()
        .map(|ps| BigInt::from(ps.d) - BigInt::from(src.d))
        .collect();
    let ds2: Vec<BigInt> = outcome_sums
        .iter()
        .map(|ps| BigInt::from(ps.s2) - BigInt::from(src.s2))
        .collect();
    let dpsi: Vec<BigInt> = outcome_sums
        .iter()
        .map(|ps| BigInt::from(ps.psi_scaled()) - BigInt::from(src.psi_scaled()))
        .collect();

    let s_alpha: Vec<BigInt> = dc.iter().map(|x| wsum(&weights, x)).collect();
    let s_d = wsum(&weights, &dd);
    let s_s2 = wsum(&weights, &ds2);
    let s_psi = wsum(&weights, &dpsi);

    let mean_alpha: Vec<f64> = (0..k)
        .map(|i| im.level_mean(BigInt::from(source.counts()[i]), &s_alpha[i], &nb))
        .collect();
    let mut cov_alpha = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let sxy = wsum2(&weights, &dc[i], &dc[j]);
            let c = im.cov(&s_alpha[i], &s_alpha[j], &sxy, &nb, &nb);
            cov_alpha[i * k + j] = c;
            cov_alpha[j * k + i] = c;
        }
    }
    let var_alpha = (0..k).map(|i| cov_alpha[i * k + i]).collect();
    let cov_alpha_beta = (0..k)
        .map(|i| im.cov(&s_alpha[i], &s_d, &wsum2(&weights, &dc[i], &dd), &nb, &nb))
        .collect();

    let (gamma_tilde0, alpha_max_tilde0) = if src.d == 0 {
        (0.0, 0.0)
    } else {
        let d = src.d as f64;
        (src.s2 as f64 / (d * d), src.max as f64 / d)
    };

    let probs: Vec<f64> = dist
        .entries
        .iter()
        .map(|(_, w)| *w as f64 / dist.denominator as f64)
        .collect();
    let gamma_tilde_drift = probs
        .iter()
        .zip(&outcome_sums)
        .map(|(p, ps)| p * gamma_tilde_change(&src, ps))
        .collect::<CompensatedSum>()
        .value();
    let alpha_max_tilde_drift = probs
        .iter()
        .zip(&outcome_sums)
        .map(|(p, ps)| p * alpha_max_tilde_change(&src, ps))
        .collect::<CompensatedSum>()
        .value();

    let deltas = pairs
        .iter()
        .map(|p| {
            // δ is linear in α, so its mean follows exactly from the α means.
            let mi = im.level_mean_exact(BigInt::from(source.counts()[p.i - 1]), &s_alpha[p.i - 1], &nb);
            let mj = im.level_mean_exact(BigInt::from(source.counts()[p.j - 1]), &s_alpha[p.j - 1], &nb);
            let one_eps = BigRational::from_float(1.0 + p.eps).unwrap_or_else(|| BigRational::from_integer(1.into()));
            let v = mi - one_eps * mj;
            (*p, v.to_f64().unwrap_or(f64::NAN))
        })
        .collect();

    Ok(ExactMoments {
        n: source.n(),
        mean_alpha,
        var_alpha,
        cov_alpha,
        cov_alpha_beta,
        mean_beta: im.level_mean(BigInt::from(src.d), &s_d, &nb),
        var_beta: im.cov(&s_d, &s_d, &wsum2(&weights, &dd, &dd), &nb, &nb),
        mean_gamma: im.level_mean(BigInt::from(src.s2), &s_s2, &n2b),
        var_gamma: im.cov(&s_s2, &s_s2, &wsum2(&weights, &ds2, &ds2), &n2b, &n2b),
        mean_psi: im.level_mean(BigInt::from(src.psi_scaled()), &s_psi, &n2b),
        var_psi: im.cov(&s_psi, &s_psi, &wsum2(&weights, &dpsi, &dpsi), &n2b, &n2b),
        mean_gamma_tilde: gamma_tilde0 + gamma_tilde_drift,
        mean_alpha_max_tilde: alpha_max_tilde0 + alpha_max_tilde_drift,
        deltas,
        all_undecided_mass: dist.all_undecided_mass(),
        gamma_tilde_drift,
        alpha_max_tilde_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::OpinionCounts;
    use crate::oracle::{gossip_onestep_exhaustive, pp_onestep_exact};

    fn st(counts: &[u64], undecided: u64) -> OpinionCounts {
        OpinionCounts::new(counts.to_vec(), undecided).unwrap()
    }

    #[test]
    fn pp_mean_gamma() {
        let m = moments_of(&pp_onestep_exact(&st(&[2, 1], 1)), &[]).unwrap();
        assert!((m.mean_gamma - 85.0 / 256.0).abs() < 1e-15);
        assert!((m.mean_beta - 47.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn gossip_var_beta() {
        let m = moments_of(&gossip_onestep_exhaustive(&st(&[2, 2], 0)).unwrap(), &[]).unwrap();
        assert!((m.var_beta - 1.0 / 16.0).abs() < 1e-15);
        assert!((m.mean_beta - 0.5).abs() < 1e-15);
        assert!((m.all_undecided_mass - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_has_no_variance() {
        let s = st(&[0, 6, 0], 0);
        let m = moments_of(&pp_onestep_exact(&s), &[DeltaPair::new(2, 1, 0.5)]).unwrap();
        assert_eq!(m.var_beta, 0.0);
        assert_eq!(m.var_gamma, 0.0);
        assert_eq!(m.var_psi, 0.0);
        assert!(m.var_alpha.iter().all(|&v| v == 0.0));
        assert!(m.cov_alpha.iter().all(|&v| v == 0.0));
        assert_eq!(m.deltas[0].1, 1.0);
        assert_eq!(m.mean_gamma_tilde, 1.0);
    }
}
