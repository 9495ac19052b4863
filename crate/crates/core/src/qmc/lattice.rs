use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::cbc::cbc_construct;
use super::gf2;
use super::spod::SpodWeights;
use crate::error::{Error, Result};

/// Generating data of one level: `2^m` points from modulus `p` (normally
/// `x^m`) and generating vector `q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeLevel {
    pub m: u32,
    pub modulus: u64,
    pub q: Vec<u64>,
}

/// Row-major point set in `[-1/2, 1/2)^s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    s: usize,
    data: Vec<f64>,
}

impl PointSet {
    /// Arbitrary points of a common dimension, e.g. random draws.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let s = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != s) {
            return Err(Error::DimensionMismatch { expected: s, got: bad.len() });
        }
        Ok(PointSet { s, data: rows.concat() })
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.s).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.s
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.s..(k + 1) * self.s]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.s.max(1))
    }
}

/// A family of base-2 polynomial lattice rules, one independent rule per
/// level `m`.
#[derive(Clone, Debug)]
pub struct LatticeRule {
    s: usize,
    weights: Option<SpodWeights>,
    levels: BTreeMap<u32, LatticeLevel>,
}

impl LatticeRule {
    /// An empty rule; levels are built on demand by [`ensure`](Self::ensure).
    pub fn new(weights: SpodWeights) -> Self {
        Self { s: weights.dim(), weights: Some(weights), levels: BTreeMap::new() }
    }

    /// Builds levels `0..=m_max`.
    pub fn construct(weights: SpodWeights, m_max: u32) -> Result<Self> {
        let mut rule = Self::new(weights);
        for m in 0..=m_max {
            rule.ensure(m)?;
        }
        Ok(rule)
    }

    pub fn dim(&self) -> usize {
        self.s
    }

    pub fn weights(&self) -> Option<&SpodWeights> {
        self.weights.as_ref()
    }

    pub fn max_level(&self) -> Option<u32> {
        self.levels.keys().next_back().copied()
    }

    /// Constructs level `m` if it is missing.
    pub fn ensure(&mut self, m: u32) -> Result<&LatticeLevel> {
        if !self.levels.contains_key(&m) {
            let weights = self.weights.as_ref().ok_or(Error::LevelUnavailable {
                m,
                max: self.max_level().unwrap_or(0),
            })?;
            let q = cbc_construct(m, weights)?;
            let modulus = 1u64 << m;
            self.levels.insert(m, LatticeLevel { m, modulus, q });
        }
        Ok(&self.levels[&m])
    }

    pub fn level(&self, m: u32) -> Result<&LatticeLevel> {
        self.levels
            .get(&m)
            .ok_or(Error::LevelUnavailable { m, max: self.max_level().unwrap_or(0) })
    }

    /// The `2^m` points of level `m` in index order.
    pub fn points(&self, m: u32) -> Result<PointSet> {
        let level = self.level(m)?;
        let s = self.s;
        let n = 1usize << m;
        let mut ints = vec![0u32; n * s];
        if m > 0 {
            // the map k -> point is linear over GF(2) in the bits of k
            let columns: Vec<Vec<u32>> = level
                .q
                .iter()
                .map(|&qj| {
                    (0..m)
                        .map(|i| gf2::digits(gf2::reduce(qj << i, level.modulus), level.modulus, m) as u32)
                        .collect()
                })
                .collect();
            for k in 1..n {
                let low = k.trailing_zeros() as usize;
                let prev = (k & (k - 1)) * s;
                for j in 0..s {
                    ints[k * s + j] = ints[prev + j] ^ columns[j][low];
                }
            }
        }
        let scale = 1.0 / n as f64;
        let data = ints.into_iter().map(|x| f64::from(x) * scale - 0.5).collect();
        Ok(PointSet { s, data })
    }

    /// Text export: `#` header lines, then one `m q_1 ... q_s` line per level
    /// with polynomials as hexadecimal bit masks.
    pub fn export(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# polynomial lattice rule, base 2, s = {}", self.s)?;
        writeln!(w, "# point k: x_j = v_m(n_k(x) q_j(x) / p_m(x)) - 1/2, n_k from the bits of k")?;
        if let Some(wt) = &self.weights {
            let betas: Vec<String> = wt.beta.iter().map(|b| format!("{b:e}")).collect();
            writeln!(w, "# weights alpha = {} n = {} c = {:e} beta = {}", wt.alpha, wt.n, wt.c, betas.join(","))?;
        }
        for level in self.levels.values() {
            writeln!(w, "# modulus {} {:#x}", level.m, level.modulus)?;
        }
        for level in self.levels.values() {
            write!(w, "{}", level.m)?;
            for q in &level.q {
                write!(w, " {q:x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the format written by [`export`](Self::export). Moduli missing
    /// from the header default to `x^m`. Imported rules cannot construct
    /// further levels.
    pub fn import(r: impl BufRead) -> Result<Self> {
        let mut moduli = BTreeMap::new();
        let mut levels = BTreeMap::new();
        let mut s = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("modulus") {
                    let m: u32 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad modulus degree"))?;
                    let p = it
                        .next()
                        .and_then(|v| u64::from_str_radix(v.trim_start_matches("0x"), 16).ok())
                        .ok_or_else(|| bad("bad modulus"))?;
                    moduli.insert(m, p);
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let m: u32 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad level"))?;
            let q = it
                .map(|v| u64::from_str_radix(v, 16).map_err(|_| bad("bad polynomial")))
                .collect::<Result<Vec<_>>>()?;
            match s {
                None => s = Some(q.len()),
                Some(d) if d != q.len() => return Err(Error::DimensionMismatch { expected: d, got: q.len() }),
                _ => {}
            }
            levels.insert(m, q);
        }
        let s = s.ok_or_else(|| Error::Parse("no lattice levels".into()))?;
        let mut out = BTreeMap::new();
        for (m, q) in levels {
            let modulus = match moduli.get(&m) {
                Some(&p) => p,
                None if m <= gf2::MAX_DEGREE => 1u64 << m,
                None => return Err(Error::LevelUnavailable { m, max: gf2::MAX_DEGREE }),
            };
            if m > 0 {
                if gf2::degree(modulus) != Some(m) {
                    return Err(Error::Parse(format!("modulus for level {m} has wrong degree")));
                }
                if let Some(&bad) = q.iter().find(|&&qj| qj == 0 || gf2::degree(qj) >= Some(m) || gf2::gcd(modulus, qj) != 1) {
                    return Err(Error::Parse(format!("generator {bad:x} invalid for level {m}")));
                }
            }
            out.insert(m, LatticeLevel { m, modulus, q });
        }
        Ok(Self { s, weights: None, levels: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(s: usize) -> SpodWeights {
        SpodWeights::new(2, 0, 1.0, (1..=s).map(|j| 0.8 / (j as f64).powi(2)).collect())
    }

    #[test]
    fn two_point_rule() {
        let rule = LatticeRule::construct(weights(1), 1).unwrap();
        let mut p: Vec<f64> = rule.points(1).unwrap().iter().map(|x| x[0]).collect();
        p.sort_by(f64::total_cmp);
        assert_eq!(p, vec![-0.5, 0.0]);
        let zero = rule.points(0).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero.point(0), &[-0.5]);
    }

    #[test]
    fn projections_are_permuted_grids() {
        let s = 5;
        let rule = LatticeRule::construct(weights(s), 10).unwrap();
        for m in 0..=10 {
            let pts = rule.points(m).unwrap();
            let n = 1usize << m;
            assert_eq!(pts.len(), n);
            assert!(pts.point(0).iter().all(|&v| v == -0.5));
            for j in 0..s {
                let mut grid: Vec<u64> = pts
                    .iter()
                    .map(|x| {
                        let scaled = (x[j] + 0.5) * n as f64;
                        assert_eq!(scaled.fract(), 0.0);
                        scaled as u64
                    })
                    .collect();
                grid.sort_unstable();
                assert!(grid.iter().enumerate().all(|(i, &g)| g == i as u64));
            }
        }
    }

    #[test]
    fn export_import_roundtrip() {
        let rule = LatticeRule::construct(weights(4), 8).unwrap();
        let mut buf = Vec::new();
        rule.export(&mut buf).unwrap();
        let back = LatticeRule::import(&buf[..]).unwrap();
        for m in 0..=8 {
            assert_eq!(rule.level(m).unwrap(), back.level(m).unwrap());
            assert_eq!(rule.points(m).unwrap(), back.points(m).unwrap());
        }
        assert!(LatticeRule::import(&b"3 1 2\n4 1\n"[..]).is_err());
        assert!(LatticeRule::import(&b"3 8\n"[..]).is_err());
    }

    #[test]
    fn missing_level_is_reported() {
        let rule = LatticeRule::construct(weights(2), 3).unwrap();
        assert!(matches!(rule.points(5), Err(Error::LevelUnavailable { m: 5, max: 3 })));
    }
}
