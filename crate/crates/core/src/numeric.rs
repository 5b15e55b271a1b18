//! Small numeric helpers shared by the formula, oracle and output layers.

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator of `f64`.
pub fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// `|a - b| <= rel * max(|a|, |b|)`, with exact zeros matching values below
/// `1e-300`.
pub fn approx_eq_rel(a: f64, b: f64, rel: f64) -> bool {
    let scale = a.abs().max(b.abs());
    if scale <= 1e-300 {
        return true;
    }
    (a - b).abs() <= rel * scale
}

/// Float rendering used in every output file: 17 significant digits,
/// scientific notation, `NaN`/`inf` spelled out. Negative zero prints as zero.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        "0.0000000000000000e0".to_string()
    } else if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// `base^exp` with the convention `0^0 = 1`.
pub fn pow_u64(base: f64, exp: u64) -> f64 {
    if exp == 0 {
        return 1.0;
    }
    if base == 0.0 {
        return 0.0;
    }
    if exp <= i32::MAX as u64 {
        base.powi(exp as i32)
    } else {
        (exp as f64 * base.ln()).exp()
    }
}
