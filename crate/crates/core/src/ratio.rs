//! Ratio estimators `Z'/Z`: the lattice error estimator `E_{b^m}`, the finite
//! element ratio bound and their sum `EST`.
//!
//! Integrands are carried in log form. Every level of one estimate is
//! aggregated with the same shift `C`, i.e. `Theta e^{-C}` is averaged instead
//! of `Theta`. All quantities below are invariant under that joint scaling.

use crate::error::{Error, Result};
use crate::par::pairwise_sum;
use crate::qmc::{pairwise_sum_fields, qmc_mean};

/// One lattice-point contribution to a ratio estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioSample {
    /// `log Theta_h(y)`.
    pub log_theta: f64,
    /// `Theta'_h(y) / Theta_h(y)`: a scalar for inversion, a nodal field for control.
    pub value: Vec<f64>,
    /// `log zeta_{y,h}` (`-inf` for an exact sample).
    pub log_zeta: f64,
    /// `log zeta'_{y,h}`.
    pub log_zeta_prime: f64,
}

/// Level sums of one point set, all scaled by `e^{-shift}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSums {
    pub m: u32,
    pub shift: f64,
    pub z: f64,
    pub zp: Vec<f64>,
    pub zeta: f64,
    pub zeta_prime: f64,
}

/// Largest `log_theta` over several sample sets; a shift shared by all of them.
pub fn common_shift<'a>(sets: impl IntoIterator<Item = &'a [RatioSample]>) -> f64 {
    let c = sets.into_iter().flatten().map(|s| s.log_theta).fold(f64::NEG_INFINITY, f64::max);
    if c.is_finite() {
        c
    } else {
        0.0
    }
}

/// Averages `2^m` samples with the given shift (pairwise summation).
pub fn aggregate(samples: &[RatioSample], m: u32, shift: f64) -> Result<LevelSums> {
    let n = 1usize << m;
    if samples.len() != n {
        return Err(Error::CountMismatch { expected: n, got: samples.len() });
    }
    let dim = samples[0].value.len();
    if let Some(bad) = samples.iter().find(|s| s.value.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.value.len() });
    }
    let weights: Vec<f64> = samples.iter().map(|s| (s.log_theta - shift).exp()).collect();
    let weighted: Vec<Vec<f64>> =
        samples.iter().zip(&weights).map(|(s, w)| s.value.iter().map(|v| w * v).collect()).collect();
    let zeta: Vec<f64> = samples.iter().map(|s| (s.log_zeta - shift).exp()).collect();
    let zeta_prime: Vec<f64> = samples.iter().map(|s| (s.log_zeta_prime - shift).exp()).collect();
    let mut zp = pairwise_sum_fields(&weighted);
    zp.iter_mut().for_each(|v| *v /= n as f64);
    Ok(LevelSums {
        m,
        shift,
        z: pairwise_sum(&weights) / n as f64,
        zp,
        zeta: aggregate_zeta(&zeta, m)?,
        zeta_prime: aggregate_zeta(&zeta_prime, m)?,
    })
}

/// `zeta_{m,h}`: the plain mean of the per-point bounds.
pub fn aggregate_zeta(values: &[f64], m: u32) -> Result<f64> {
    qmc_mean(values, m)
}

/// Inputs of one `(m, h)` estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioLevelData {
    pub base: u32,
    pub m: u32,
    pub z_m: f64,
    pub z_prev: f64,
    pub zp_m: Vec<f64>,
    pub zp_prev: Vec<f64>,
    pub zeta_mh: f64,
    pub zetap_mh: f64,
}

impl RatioLevelData {
    /// Pairs level `m` with level `m - 1`. Both must share one shift.
    pub fn from_levels(cur: &LevelSums, prev: &LevelSums) -> Result<Self> {
        if cur.shift != prev.shift {
            return Err(Error::Config("levels aggregated with different shifts".into()));
        }
        if cur.zp.len() != prev.zp.len() {
            return Err(Error::DimensionMismatch { expected: cur.zp.len(), got: prev.zp.len() });
        }
        Ok(Self {
            base: 2,
            m: cur.m,
            z_m: cur.z,
            z_prev: prev.z,
            zp_m: cur.zp.clone(),
            zp_prev: prev.zp.clone(),
            zeta_mh: cur.zeta,
            zetap_mh: cur.zeta_prime,
        })
    }

    pub fn ratio(&self) -> Result<Vec<f64>> {
        posterior_ratio(&self.zp_m, self.z_m)
    }
}

/// `Z' / Z`.
pub fn posterior_ratio(zp: &[f64], z: f64) -> Result<Vec<f64>> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDenominator);
    }
    Ok(zp.iter().map(|v| v / z).collect())
}

/// `E = (Z_{m-1} Z'_m - Z_m Z'_{m-1}) / ((b Z_m - Z_{m-1}) Z_m)`, or `None`
/// when `b Z_m - Z_{m-1} <= 0` or `Z_m <= 0` (pre-asymptotic).
pub fn qmc_ratio_estimator(d: &RatioLevelData) -> Option<Vec<f64>> {
    let denom = (f64::from(d.base) * d.z_m - d.z_prev) * d.z_m;
    if !(d.z_m > 0.0) || !(denom > 0.0) {
        return None;
    }
    Some(d.zp_m.iter().zip(&d.zp_prev).map(|(a, b)| (d.z_prev * a - d.z_m * b) / denom).collect())
}

/// `c (Z zeta' + ||Z'|| zeta) / (Z^2 - c zeta Z)`, or `None` unless
/// `Z > c zeta`.
pub fn fem_ratio_bound(z: f64, zp_norm: f64, zeta: f64, zetap: f64, c: f64) -> Option<f64> {
    if !(z > c * zeta) || !zeta.is_finite() || !zetap.is_finite() {
        return None;
    }
    Some(c * (z * zetap + zp_norm * zeta) / (z * z - c * zeta * z))
}

/// All scalar components of one `(m, h)` estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport {
    pub m: u32,
    pub z: f64,
    pub norm_zp: f64,
    pub ratio: Vec<f64>,
    pub zeta: f64,
    pub zeta_prime: f64,
    /// `||E_{b^m}||_Y`; `None` when the denominator guard fails.
    pub qmc_term: Option<f64>,
    /// FEM ratio bound; `None` unless `Z > c zeta`.
    pub fem_term: Option<f64>,
}

impl EstimatorReport {
    pub fn qmc_valid(&self) -> bool {
        self.qmc_term.is_some()
    }

    pub fn fem_valid(&self) -> bool {
        self.fem_term.is_some()
    }

    /// `EST = ||E|| + fem bound` when both parts are valid.
    pub fn est(&self) -> Option<f64> {
        Some(self.qmc_term? + self.fem_term?)
    }
}

/// Builds the report for level data with the `Y` norm `norm` (absolute value
/// for scalars, the discrete `L2` norm for fields) and constant `c`.
pub fn combined_estimator(d: &RatioLevelData, norm: impl Fn(&[f64]) -> f64, c: f64) -> Result<EstimatorReport> {
    let ratio = d.ratio()?;
    let norm_zp = norm(&d.zp_m);
    Ok(EstimatorReport {
        m: d.m,
        z: d.z_m,
        norm_zp,
        ratio,
        zeta: d.zeta_mh,
        zeta_prime: d.zetap_mh,
        qmc_term: qmc_ratio_estimator(d).map(|e| norm(&e)),
        fem_term: fem_ratio_bound(d.z_m, norm_zp, d.zeta_mh, d.zetap_mh, c),
    })
}

/// `log(e^x - 1)` without overflow for large `x`.
pub fn ln_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}
