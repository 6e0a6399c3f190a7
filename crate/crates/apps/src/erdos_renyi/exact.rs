//! Law of the number of isolated vertices by inclusion-exclusion in
//! fixed-point big-integer arithmetic with a running error bound.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, ToPrimitive, Zero};
use stein_llt::dist::LatticePmf;
use stein_llt::numeric::{ldexp, ln_binomial, log_sum_exp};
use stein_llt::{Error, Result};

pub const MAX_EXACT_N: u64 = 800;
/// Largest certified per-entry error accepted.
pub const TARGET_ERROR: f64 = 1e-14;

/// Default working precision for `n` vertices.
pub fn default_bits(n: u64) -> u32 {
    64 + 2 * n as u32
}

/// Exact pmf together with a certified absolute error bound per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedPmf {
    pub pmf: LatticePmf,
    pub entry_error: Vec<f64>,
    pub bits: u32,
}

impl CertifiedPmf {
    pub fn max_error(&self) -> f64 {
        self.entry_error.iter().cloned().fold(0.0, f64::max)
    }
}

/// `floor(x · 2^bits)` for `x` in `[0, 1]`, and whether it is exact.
fn to_fixed(x: f64, bits: u32) -> (BigUint, bool) {
    if x == 0.0 {
        return (BigUint::zero(), true);
    }
    let raw = x.to_bits();
    let exp = ((raw >> 52) & 0x7ff) as i64;
    let frac = raw & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    let shift = bits as i64 + e;
    let m = BigUint::from(mant);
    if shift >= 0 {
        (m << shift as usize, true)
    } else {
        let s = (-shift) as usize;
        let floor = &m >> s;
        let exact = (&floor << s) == m;
        (floor, exact)
    }
}

/// Converts `x / 2^bits` to `f64`.
fn from_fixed(x: &BigInt, bits: u32) -> f64 {
    let (sign, mag) = (x.sign(), x.magnitude());
    let nb = mag.bits() as i64;
    let v = if nb <= 64 {
        ldexp(mag.to_f64().unwrap_or(0.0), -(bits as i64))
    } else {
        let top = (mag >> (nb - 64) as usize).to_f64().unwrap_or(0.0);
        ldexp(top, nb - 64 - bits as i64)
    };
    if sign == Sign::Minus {
        -v
    } else {
        v
    }
}

/// Smallest working precision that would plausibly certify `TARGET_ERROR`.
fn suggest_bits(bits: u32, log2_err: f64) -> u32 {
    let need = log2_err - TARGET_ERROR.log2();
    (bits as f64 + need.max(0.0) + 16.0).ceil() as u32
}

/// `P(W = k) = C(n,k) Σ_j (-1)^j C(n-k,j) q^{m(k+j)}` with
/// `m(t) = t(n-t) + t(t-1)/2`, evaluated with `bits` fractional bits.
pub fn exact_isolated_pmf(n: u64, p: f64, bits: u32) -> Result<CertifiedPmf> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if n > MAX_EXACT_N {
        return Err(Error::Size(format!(
            "exact pmf limited to n <= {MAX_EXACT_N}, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p must lie in [0, 1], got {p}")));
    }
    if bits < 64 {
        return Err(Error::Domain(
            "at least 64 working bits are required".into(),
        ));
    }
    let nu = n as usize;
    let one = BigUint::one() << bits as usize;
    // q = 1 - p, rounded down
    let (pf, p_exact) = to_fixed(p, bits);
    let (q, eq) = if p_exact {
        (&one - &pf, 0.0)
    } else {
        (&one - &pf - BigUint::one(), 1.0)
    };

    let mut pw = Vec::with_capacity(nu);
    let mut pw_err = Vec::with_capacity(nu);
    pw.push(one.clone());
    pw_err.push(0.0f64);
    for e in 1..nu {
        pw.push((&pw[e - 1] * &q) >> bits as usize);
        pw_err.push(pw_err[e - 1] + eq + 1.0);
    }
    let mut qt = Vec::with_capacity(nu + 1);
    let mut qt_err = Vec::with_capacity(nu + 1);
    qt.push(one);
    qt_err.push(0.0f64);
    for t in 0..nu {
        let f = &pw[nu - 1 - t];
        qt.push((&qt[t] * f) >> bits as usize);
        qt_err.push(qt_err[t] + pw_err[nu - 1 - t] + 1.0);
    }

    let mut probs = Vec::with_capacity(nu + 1);
    let mut errors = Vec::with_capacity(nu + 1);
    let mut c_nk = BigUint::one();
    let ln2 = std::f64::consts::LN_2;
    for k in 0..=nu {
        let r = nu - k;
        let mut pos = BigUint::zero();
        let mut neg = BigUint::zero();
        let mut c = BigUint::one();
        let mut terms = Vec::with_capacity(r + 1);
        for j in 0..=r {
            let t = &c * &qt[k + j];
            if j % 2 == 0 {
                pos += t;
            } else {
                neg += t;
            }
            if qt_err[k + j] > 0.0 {
                terms.push(ln_binomial(r as u64, j as u64) + qt_err[k + j].ln());
            }
            c = c * BigUint::from(r - j) / BigUint::from(j + 1);
        }
        let s = BigInt::from_biguint(Sign::Plus, pos) - BigInt::from_biguint(Sign::Plus, neg);
        let scaled = BigInt::from_biguint(Sign::Plus, c_nk.clone()) * s;
        let v = from_fixed(&scaled, bits);
        let ln_err = if terms.is_empty() {
            f64::NEG_INFINITY
        } else {
            ln_binomial(n, k as u64) + log_sum_exp(&terms) - bits as f64 * ln2
        };
        let err = ln_err.exp() + v.abs() * f64::EPSILON;
        probs.push(v.max(0.0));
        errors.push(err);
        c_nk = c_nk * BigUint::from(nu - k) / BigUint::from(k + 1);
    }
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    if !(worst <= TARGET_ERROR) {
        return Err(Error::PrecisionInsufficient {
            certified: worst,
            target: TARGET_ERROR,
            suggested_bits: suggest_bits(bits, worst.log2()),
        });
    }
    Ok(CertifiedPmf {
        pmf: LatticePmf::new(0, 1, probs, 0.0)?,
        entry_error: errors,
        bits,
    })
}

/// Exhaustive enumeration over all graphs on `n ≤ 6` vertices.
pub fn brute_force_isolated_pmf(n: u64, p: f64) -> Result<LatticePmf> {
    if n == 0 || n > 6 {
        return Err(Error::Size(format!(
            "enumeration supports 1 <= n <= 6, got {n}"
        )));
    }
    let nu = n as usize;
    let pairs: Vec<(usize, usize)> = (0..nu)
        .flat_map(|i| (i + 1..nu).map(move |j| (i, j)))
        .collect();
    let m = pairs.len();
    let mut counts = vec![vec![0u64; m + 1]; nu + 1];
    for mask in 0u32..(1 << m) {
        let mut deg = [0u8; 6];
        for (b, &(i, j)) in pairs.iter().enumerate() {
            if mask >> b & 1 == 1 {
                deg[i] += 1;
                deg[j] += 1;
            }
        }
        let w = deg[..nu].iter().filter(|&&d| d == 0).count();
        counts[w][mask.count_ones() as usize] += 1;
    }
    let probs = counts
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(e, &c)| c as f64 * p.powi(e as i32) * (1.0 - p).powi((m - e) as i32))
                .sum()
        })
        .collect();
    LatticePmf::new(0, 1, probs, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_round_trip() {
        let (v, exact) = to_fixed(0.375, 64);
        assert!(exact);
        assert_eq!(from_fixed(&BigInt::from(v), 64), 0.375);
        let (_, exact) = to_fixed(1e-30, 64);
        assert!(!exact);
    }

    #[test]
    fn three_vertices() {
        let c = exact_isolated_pmf(3, 0.5, 128).unwrap();
        for (x, y) in c.pmf.probs.iter().zip([0.5, 0.375, 0.0, 0.125]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn low_precision_is_refused() {
        match exact_isolated_pmf(200, 0.01, 256) {
            Err(Error::PrecisionInsufficient { suggested_bits, .. }) => {
                assert!(suggested_bits > 256);
                assert!(exact_isolated_pmf(200, 0.01, suggested_bits).is_ok());
            }
            other => panic!("expected a precision error, got {other:?}"),
        }
    }

    #[test]
    fn enumeration_limits() {
        assert!(brute_force_isolated_pmf(7, 0.5).is_err());
        let b = brute_force_isolated_pmf(1, 0.3).unwrap();
        assert_eq!(b.probs, vec![0.0, 1.0]);
    }
}
