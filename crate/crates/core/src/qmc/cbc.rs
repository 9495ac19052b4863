//! Component-by-component search for base-2 polynomial lattice rules with
//! modulus `x^m`.
//!
//! With this modulus the point of index `n` for generator `q` is simply
//! `(n * q mod x^m) / 2^m` (carry-less product read as an integer), and the
//! part of the quadrature error coming from Walsh indices that vanish modulo
//! `2^m` is the same for every generator. That rule-independent part is what
//! makes `Z_m - Z_{m-1}` an asymptotically exact estimate of `Z - Z_m`.

use super::gf2;
use super::spod::{ln_factorial, SpodWeights};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};

/// Highest weight order carried in the recursion. Terms of larger order are
/// dropped; they only matter when `alpha * s` is large and are tiny then.
const MAX_ORDER: usize = 100;

/// `mu_j(k)`: sum of `(position + 1)` over the `j` most significant set bits.
fn mu(k: u64, j: u32) -> u32 {
    let mut k = k;
    let mut total = 0;
    for _ in 0..j {
        if k == 0 {
            break;
        }
        let pos = 63 - k.leading_zeros();
        total += pos + 1;
        k ^= 1 << pos;
    }
    total
}

fn fwht(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for chunk in v.chunks_mut(2 * h) {
            let (a, b) = chunk.split_at_mut(h);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (s, d) = (*x + *y, *x - *y);
                *x = s;
                *y = d;
            }
        }
        h *= 2;
    }
}

fn bit_reverse(x: u64, m: u32) -> u64 {
    if m == 0 {
        0
    } else {
        x.reverse_bits() >> (64 - m)
    }
}

/// Kernel `omega(X / 2^m)` for every `X < 2^m`: the Walsh series of the
/// order-`alpha` weight `2^{-mu_alpha(k)}` with all indices `k >= 2^m`
/// folded onto `k mod 2^m` (the constant part, which only changes the
/// value at the origin, is dropped).
pub(crate) fn walsh_kernel(m: u32, alpha: u32) -> Vec<f64> {
    let n = 1usize << m;
    // tail factors T_d = 2^{-dm} q^{d(d+1)/2} / prod_{i<=d} (1 - q^i), q = 1/2
    let tail: Vec<f64> = (0..alpha)
        .map(|d| {
            let prod: f64 = (1..=d).map(|i| 1.0 - 0.5f64.powi(i as i32)).product();
            0.5f64.powi((d * m + d * (d + 1) / 2) as i32) / prod
        })
        .collect();
    let mut phi: Vec<f64> = (0..n as u64)
        .map(|k| {
            (0..alpha)
                .filter(|&d| !(d == 0 && k == 0))
                .map(|d| tail[d as usize] * 0.5f64.powi(mu(k, alpha - d) as i32))
                .sum()
        })
        .collect();
    fwht(&mut phi);
    (0..n as u64).map(|x| phi[bit_reverse(x, m) as usize]).collect()
}

/// Candidate budget per coordinate: every odd polynomial while that is
/// cheap, otherwise a fixed pseudo-random subset.
fn candidates(m: u32) -> Vec<u64> {
    let all = 1u64 << (m - 1);
    let budget = (1u64 << 26 >> m).max(512);
    if all <= budget {
        return (0..all).map(|r| 2 * r + 1).collect();
    }
    let mut out: Vec<u64> = (0..budget)
        .map(|r| {
            let h = (r + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            2 * (h >> (64 - (m - 1))) + 1
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Carry-less product `n * q mod x^m`.
pub(crate) fn clmul_mod(n: u64, q: u64, m: u32) -> u64 {
    let mask = (1u64 << m) - 1;
    let mut acc = 0u64;
    let mut n = n;
    let mut shifted = q;
    while n != 0 {
        if n & 1 == 1 {
            acc ^= shifted;
        }
        n >>= 1;
        shifted = (shifted << 1) & mask;
    }
    acc & mask
}

/// `sum_{n >= 1} omega[n * q mod x^m] v[n]`, walking `n` in Gray-code order so
/// each product costs one xor.
fn criterion(q: u64, m: u32, omega: &[f64], v: &[f64]) -> f64 {
    let mask = (1u64 << m) - 1;
    let cols: Vec<u64> = (0..m).map(|i| (q << i) & mask).collect();
    let n = 1usize << m;
    let mut z = 0u64;
    let mut total = 0.0;
    for i in 1..n {
        z ^= cols[i.trailing_zeros() as usize];
        let gray = i ^ (i >> 1);
        total += omega[z as usize] * v[gray];
    }
    total
}

/// Generating vector (odd polynomials of degree `< m`) for the `2^m`-point
/// rule with modulus `x^m`, chosen coordinate by coordinate to minimize the
/// weighted worst-case error of order `alpha`.
pub fn cbc_construct(m: u32, weights: &SpodWeights) -> Result<Vec<u64>> {
    let s = weights.dim();
    if m == 0 {
        return Ok(vec![0; s]);
    }
    if m > gf2::MAX_DEGREE {
        return Err(Error::LevelUnavailable { m, max: gf2::MAX_DEGREE });
    }
    let n = 1usize << m;
    let alpha = weights.alpha as usize;
    let omega = walsh_kernel(m, weights.alpha);
    let cands = candidates(m);

    let max_order = (alpha * s).min(MAX_ORDER);
    let fact: Vec<f64> =
        (0..=max_order + alpha + weights.n as usize).map(|k| ln_factorial(k).exp()).collect();
    // u[l][n]: order-l part of the product over chosen coordinates at point n
    let mut u = vec![vec![0.0; n]; max_order + 1];
    u[0].fill(1.0);
    let mut q = Vec::with_capacity(s);
    let mut omega_at = vec![0.0; n];
    for j in 0..s {
        let coef: Vec<f64> = (1..=alpha).map(|nu| weights.c * weights.beta[j].powi(nu as i32)).collect();
        let top = (alpha * j).min(max_order);
        let qj = if j == 0 {
            1
        } else {
            let v: Vec<f64> = (0..n)
                .map(|k| {
                    let mut acc = 0.0;
                    for (nu, c) in coef.iter().enumerate() {
                        let mut inner = 0.0;
                        for (l, ul) in u.iter().enumerate().take(top + 1) {
                            inner += fact[l + nu + 1 + weights.n as usize] * ul[k];
                        }
                        acc += c * inner;
                    }
                    acc
                })
                .collect();
            let crit = map_indexed(Execution::Parallel, cands.len(), |c| criterion(cands[c], m, &omega, &v));
            let best = crit.iter().cloned().fold(f64::INFINITY, f64::min);
            let slack = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
            // candidates are sorted, so the first near-minimal one is the smallest
            cands[crit.iter().position(|&c| c <= best + slack).expect("nonempty candidate set")]
        };
        q.push(qj);

        for (k, w) in omega_at.iter_mut().enumerate() {
            *w = omega[clmul_mod(k as u64, qj, m) as usize];
        }
        for l in (1..=(top + alpha).min(max_order)).rev() {
            let (lower, upper) = u.split_at_mut(l);
            let target = &mut upper[0];
            for k in 0..n {
                let mut acc = 0.0;
                for nu in 1..=alpha.min(l) {
                    acc += coef[nu - 1] * lower[l - nu][k];
                }
                target[k] += omega_at[k] * acc;
            }
        }
    }
    Ok(q)
}
