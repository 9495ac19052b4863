//! Run configuration, read from TOML.
//!
//! Every key has a default, so an empty file describes the unit-square
//! inversion benchmark. Sections: `[mesh]`, `[coefficient]`, `[qmc]`,
//! `[adaptive]`, `[bip]`, `[ocp]`, `[reference]`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bip::{benchmark_regions, diagonal, synthesize, ObservationSetup, Region, Variant, BENCHMARK_DELTA};
use crate::coefficient::{AffineCoefficient, CoefficientSpec};
use crate::error::{Error, Result};
use crate::fem::{Profile, Source};
use crate::mesh::TriangleMesh;
use crate::ocp::ControlSettings;
use crate::qmc::SpodWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    Bip,
    Ocp,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: ProblemKind,
    /// Output directory; the CLI may override it.
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub coefficient: CoefficientSpec,
    #[serde(default)]
    pub qmc: QmcConfig,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub bip: BipConfig,
    #[serde(default)]
    pub ocp: OcpConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    #[default]
    CrissCross,
    UnitSquare,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub kind: MeshKind,
    /// Squares per side of the coarse mesh.
    pub n: usize,
    /// Uniform refinements applied before the first iteration.
    pub refinements: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { kind: MeshKind::CrissCross, n: 4, refinements: 0 }
    }
}

impl MeshConfig {
    pub fn coarse(&self) -> Result<TriangleMesh> {
        match self.kind {
            MeshKind::CrissCross => TriangleMesh::criss_cross_unit_square(self.n),
            MeshKind::UnitSquare => TriangleMesh::unit_square(self.n),
        }
    }

    pub fn initial(&self) -> Result<TriangleMesh> {
        Ok(self.coarse()?.refined(self.refinements))
    }

    /// The coarse mesh refined `level` times.
    pub fn at_level(&self, level: usize) -> Result<TriangleMesh> {
        Ok(self.coarse()?.refined(level))
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmcConfig {
    pub m0: u32,
    pub alpha: u32,
    /// SPOD order `n`; defaults to 0 for inversion and 2 for control.
    pub order: Option<u32>,
    pub c: f64,
    /// `beta_j = beta_scale * b_j`.
    pub beta_scale: f64,
}

impl Default for QmcConfig {
    fn default() -> Self {
        Self { m0: 2, alpha: 3, order: None, c: 1.0, beta_scale: 0.25 }
    }
}

impl QmcConfig {
    pub fn weights(&self, coeff: &AffineCoefficient, kind: ProblemKind) -> SpodWeights {
        let order = self.order.unwrap_or(match kind {
            ProblemKind::Bip => 0,
            ProblemKind::Ocp => 2,
        });
        SpodWeights::new(self.alpha, order, self.c, coeff.b().iter().map(|b| self.beta_scale * b).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub tau_fem: f64,
    pub tau_qmc: f64,
    pub max_dofs: usize,
    pub m_max: u32,
    pub c_star: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self { tau_fem: 1.0 / 64.0, tau_qmc: 1.0 / 64.0, max_dofs: 1_000_000, m_max: 16, c_star: 1.0 }
    }
}

/// `delta = [..]` or `delta = "synthesize"`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Values(Vec<f64>),
    Keyword(String),
}

impl Default for DeltaSpec {
    fn default() -> Self {
        DeltaSpec::Values(BENCHMARK_DELTA.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BipConfig {
    /// Constant right-hand side.
    pub source: f64,
    pub variant: Variant,
    pub regions: Option<Vec<Region>>,
    pub goal: Region,
    pub delta: DeltaSpec,
    /// `Gamma = sigma^2 I`; defaults to a tenth of the mean datum.
    pub sigma: Option<f64>,
    /// Full covariance, row by row; overrides `sigma`.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// Seed and mesh level of the synthetic truth solve.
    pub synth_seed: u64,
    pub synth_level: usize,
    /// Write `samples.csv` for the last iteration.
    pub dump_samples: bool,
}

impl Default for BipConfig {
    fn default() -> Self {
        Self {
            source: 10.0,
            variant: Variant::L2,
            regions: None,
            goal: Region::new([0.25, 0.75, 0.25, 0.75], 2.0),
            delta: DeltaSpec::default(),
            sigma: None,
            gamma: None,
            synth_seed: 5,
            synth_level: 5,
            dump_samples: false,
        }
    }
}

impl BipConfig {
    pub fn source(&self) -> Source {
        Source::constant(self.source)
    }

    /// Builds the observation setup, synthesizing data if requested.
    pub fn setup(&self, mesh: &MeshConfig, coeff: &AffineCoefficient) -> Result<ObservationSetup> {
        let regions = self.regions.clone().unwrap_or_else(benchmark_regions);
        let delta = match &self.delta {
            DeltaSpec::Values(v) => v.clone(),
            DeltaSpec::Keyword(k) if k == "synthesize" => {
                let fine = mesh.at_level(self.synth_level)?;
                synthesize(&fine, coeff, &regions, &self.source(), self.synth_seed)?.delta
            }
            DeltaSpec::Keyword(k) => return Err(Error::Config(format!("unknown delta keyword {k:?}"))),
        };
        let gamma = match (&self.gamma, self.sigma) {
            (Some(g), _) => g.clone(),
            (None, Some(s)) if s > 0.0 => diagonal(regions.len(), s * s),
            (None, Some(s)) => return Err(Error::Config(format!("sigma must be positive, got {s}"))),
            (None, None) => {
                let sigma = 0.1 * delta.iter().sum::<f64>() / delta.len().max(1) as f64;
                diagonal(regions.len(), sigma * sigma)
            }
        };
        ObservationSetup::new(regions, gamma, delta, self.goal)
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub theta: f64,
    pub lower: f64,
    pub upper: f64,
    /// `u_hat = target_scale * x1 x2 (1 - x1)(1 - x2)`.
    pub target_scale: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self { alpha1: 1.0, alpha2: 0.1, theta: 1.0, lower: -10.0, upper: 10.0, target_scale: 16.0, tol: 1e-8, max_iter: 200 }
    }
}

impl OcpConfig {
    pub fn settings(&self, c_star: f64) -> ControlSettings {
        ControlSettings {
            u_hat: Source::profile(self.target_scale, Profile::Bubble),
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            theta: self.theta,
            lower: self.lower,
            upper: self.upper,
            c_star,
        }
    }
}

/// Monte Carlo reference: one entry per level. A single level is plain MC;
/// more levels give a multilevel estimator with coupled corrections.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Mesh levels (refinements of the coarse mesh), increasing.
    pub levels: Vec<usize>,
    pub samples: Vec<usize>,
    pub seed: u64,
    /// Batches per level for the batch-means standard error.
    pub batches: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { levels: vec![4], samples: vec![16384], seed: 1, batches: 32 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adaptive;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(a.tau_fem > 0.0 && a.tau_qmc > 0.0) {
            return bad(format!("tolerances must be positive, got {} and {}", a.tau_fem, a.tau_qmc));
        }
        if self.qmc.m0 < 1 || self.qmc.m0 > a.m_max {
            return bad(format!("need 1 <= m0 <= m_max, got m0 = {}, m_max = {}", self.qmc.m0, a.m_max));
        }
        if !(a.c_star > 0.0) {
            return bad(format!("c_star must be positive, got {}", a.c_star));
        }
        if self.mesh.n == 0 {
            return bad("mesh.n must be positive".into());
        }
        if !(self.qmc.beta_scale > 0.0 && self.qmc.c > 0.0) || self.qmc.alpha < 1 {
            return bad("qmc weights need alpha >= 1, c > 0, beta_scale > 0".into());
        }
        let r = &self.reference;
        if r.levels.is_empty() || r.levels.len() != r.samples.len() {
            return bad("reference.levels and reference.samples must be non-empty and of equal length".into());
        }
        if r.levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("reference.levels must increase".into());
        }
        if r.batches < 2 || r.samples.iter().any(|&n| n < r.batches) {
            return bad("reference needs at least two batches and one sample per batch".into());
        }
        let o = &self.ocp;
        if !(o.alpha1 >= 0.0 && o.alpha2 > 0.0 && o.theta > 0.0 && o.lower <= o.upper && o.tol > 0.0) {
            return bad(format!("invalid control settings {o:?}"));
        }
        Ok(())
    }
}
