//! Polynomials over GF(2) packed into machine words (bit i = coefficient of x^i).

/// Largest supported level; point coordinates are stored as `u32` numerators.
pub const MAX_DEGREE: u32 = 30;

pub fn degree(p: u64) -> Option<u32> {
    (p != 0).then(|| 63 - p.leading_zeros())
}

/// `a mod p`.
pub fn reduce(mut a: u64, p: u64) -> u64 {
    let dp = degree(p).expect("zero modulus");
    while let Some(da) = degree(a) {
        if da < dp {
            break;
        }
        a ^= p << (da - dp);
    }
    a
}

/// `a * b mod p` for `deg a, deg b < deg p <= 31`.
pub fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    let m = degree(p).expect("zero modulus");
    let mut acc = 0u64;
    let mut a = a;
    let mut b = b;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        a <<= 1;
        if a >> m & 1 == 1 {
            a ^= p;
        }
    }
    acc
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = if degree(a) >= degree(b) { reduce(a, b) } else { a };
        a = b;
        b = r;
    }
    a
}

/// The first `m` binary digits of the Laurent expansion of `a / p`, as an
/// integer whose most significant bit is the first digit after the point.
pub fn digits(a: u64, p: u64, m: u32) -> u64 {
    let mut rem = reduce(a, p);
    let mut out = 0u64;
    for _ in 0..m {
        rem <<= 1;
        out <<= 1;
        if rem >> m & 1 == 1 {
            out |= 1;
            rem ^= p;
        }
    }
    out
}
