//! Order statistics and simple estimators.

use crate::numeric::CompensatedSum;

/// Lower median of sorted data: element `⌊(len − 1)/2⌋`.
pub fn lower_median(sorted: &[u64]) -> Option<u64> {
    if sorted.is_empty() {
        None
    } else {
        Some(sorted[(sorted.len() - 1) / 2])
    }
}

/// Nearest-rank quantile of sorted data: element `⌈q·len⌉ − 1` (clamped).
pub fn quantile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let len = xs.len() as f64;
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / len;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let ss = xs
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .collect::<CompensatedSum>()
        .value();
    (mean, (ss / (len - 1.0) / len).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`. Needs two distinct `x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        let xs = [1, 2, 3, 4];
        assert_eq!(lower_median(&xs), Some(2));
        assert_eq!(lower_median(&[5, 9, 10]), Some(9));
        assert_eq!(lower_median(&[]), None);
        let ys: Vec<u64> = (1..=10).collect();
        assert_eq!(quantile(&ys, 0.1), Some(1));
        assert_eq!(quantile(&ys, 0.9), Some(9));
        assert_eq!(quantile(&ys, 0.0), Some(1));
        assert_eq!(quantile(&ys, 1.0), Some(10));
        assert_eq!(quantile(&ys, 0.5), lower_median(&ys));
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(2.0, 1.0)]), None);
    }

    #[test]
    fn mean_and_stderr() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
