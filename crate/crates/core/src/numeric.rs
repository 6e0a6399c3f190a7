//! Small numerical kernels shared by the rest of the crate.

use std::f64::consts::PI;

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of an iterator.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<NeumaierSum>().value()
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ e^{x_i}`; returns `-inf` on an empty input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_infinite() {
        return m;
    }
    let s = kahan_sum(xs.iter().map(|x| (x - m).exp()));
    m + s.ln()
}

const STIRLERR_TABLE: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_219_67,
    0.041_340_695_955_409_294_093_82,
    0.027_677_925_684_998_339_148_79,
    0.020_790_672_103_765_093_111_52,
    0.016_644_691_189_821_192_163_19,
    0.013_876_128_823_070_747_998_75,
    0.011_896_709_945_891_770_095_06,
    0.010_411_265_261_972_096_497_48,
    0.009_255_462_182_712_732_917_729,
    0.008_330_563_433_362_871_256_469,
    0.007_573_675_487_951_840_794_972,
    0.006_942_840_107_209_529_865_664,
    0.006_408_994_188_004_207_068_44,
    0.005_951_370_112_758_847_735_624,
    0.005_554_733_551_962_801_371_039,
];

/// Stirling remainder `ln n! - (n + 1/2) ln n + n - ln sqrt(2 pi)` for integer `n >= 1`.
pub fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n < 16 {
        return STIRLERR_TABLE[n as usize];
    }
    let x = n as f64;
    let x2 = x * x;
    if n > 500 {
        (S0 - S1 / x2) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / x2) / x2) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / x2) / x2) / x2) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / x2) / x2) / x2) / x2) / x
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation.
pub fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        let mut j = 1;
        loop {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1;
            if j > 1000 {
                return s;
            }
        }
    }
    x * (x / np).ln() + np - x
}

/// `ln n!`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let x = n as f64;
    (x + 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + stirlerr(n)
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Poisson log-pmf `ln(e^{-λ} λ^k / k!)` with relative accuracy near machine precision
/// even for large `λ` and `k`.
pub fn poisson_log_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if k == 0 {
        return -lambda;
    }
    let x = k as f64;
    -stirlerr(k) - bd0(x, lambda) - 0.5 * (2.0 * PI * x).ln()
}

/// Scales `x` by `2^e` without intermediate overflow.
pub fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// Snaps `x` to the nearest integer when within `1e-12`.
pub fn snap_integer(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-12 {
        r
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_small_terms() {
        let s = kahan_sum([1.0, 1e100, 1.0, -1e100]);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn stirlerr_is_continuous_at_table_edge() {
        let direct = |n: u64| {
            let x = n as f64;
            let lf: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
            lf - (x + 0.5) * x.ln() + x - 0.5 * (2.0 * PI).ln()
        };
        for n in [15u64, 16, 17, 30, 40] {
            assert!((stirlerr(n) - direct(n)).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn ln_factorial_small_values() {
        assert_eq!(ln_factorial(0), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-14);
        assert!((ln_binomial(10, 3) - 120f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn poisson_log_pmf_small_case() {
        let v = poisson_log_pmf(4.0, 3);
        let expect = -4.0 + 3.0 * 4f64.ln() - 6f64.ln();
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn ldexp_extreme_exponents() {
        assert_eq!(ldexp(1.0, 3), 8.0);
        assert_eq!(ldexp(3.0, -2000 + 1000), 3.0 * 2f64.powi(-1000));
        assert_eq!(ldexp(1.0, -1100), 0.0);
    }
}
