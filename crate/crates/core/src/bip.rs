//! Bayesian inversion: region-average observations, Gaussian likelihood,
//! goal functional and the per-sample FE error bounds `zeta`, `zeta'`.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::coefficient::AffineCoefficient;
use crate::error::{Error, Result};
use crate::fem::{Discretization, FieldSolution, Source};
use crate::mesh::TriangleMesh;
use crate::ratio::{ln_expm1, RatioSample};

/// Data vector of the unit-square benchmark.
pub const BENCHMARK_DELTA: [f64; 4] = [0.5205, 0.5037, 0.5443, 0.4609];

/// The functional `v -> scale * int_rect v`.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct Region {
    /// `[x0, x1, y0, y1]`.
    pub rect: [f64; 4],
    pub scale: f64,
}

impl Region {
    pub fn new(rect: [f64; 4], scale: f64) -> Self {
        Self { rect, scale }
    }

    pub fn area(&self) -> f64 {
        (self.rect[1] - self.rect[0]) * (self.rect[3] - self.rect[2])
    }

    /// `<r, r'>_{L2}` of the Riesz representers `scale * 1_rect`.
    fn gram(&self, other: &Region) -> f64 {
        let w = (self.rect[1].min(other.rect[1]) - self.rect[0].max(other.rect[0])).max(0.0);
        let h = (self.rect[3].min(other.rect[3]) - self.rect[2].max(other.rect[2])).max(0.0);
        self.scale * other.scale * w * h
    }

    pub fn l2_norm(&self) -> f64 {
        self.gram(self).sqrt()
    }
}

/// Which residual estimator and which dual norms feed `zeta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `eta_{y,h}` with `X*` norms.
    H1,
    /// `eta~_{y,h}` with `L2` norms (convex domains).
    #[default]
    L2,
}

/// Observation functionals, noise covariance, data and goal functional.
#[derive(Clone, Debug)]
pub struct ObservationSetup {
    regions: Vec<Region>,
    gamma: Mat<f64>,
    gamma_llt: Llt<f64>,
    delta: Vec<f64>,
    goal: Region,
    /// `||Gamma^{-1/2} O||_{L2}`.
    obs_norm_l2: f64,
}

impl ObservationSetup {
    /// `gamma` is given row by row and must be symmetric positive definite.
    pub fn new(regions: Vec<Region>, gamma: Vec<Vec<f64>>, delta: Vec<f64>, goal: Region) -> Result<Self> {
        let k = regions.len();
        if k == 0 {
            return Err(Error::Config("at least one observation region is required".into()));
        }
        if delta.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: delta.len() });
        }
        if gamma.len() != k || gamma.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch { expected: k, got: gamma.len() });
        }
        for r in regions.iter().chain([&goal]) {
            if !(r.rect[1] > r.rect[0] && r.rect[3] > r.rect[2]) || !(r.scale != 0.0) {
                return Err(Error::Config(format!("degenerate region {:?}", r.rect)));
            }
        }
        let sym = (0..k).all(|i| (0..k).all(|j| gamma[i][j] == gamma[j][i]));
        let gamma = Mat::from_fn(k, k, |i, j| gamma[i][j]);
        let gamma_llt = gamma.llt(Side::Lower).map_err(|_| Error::CovarianceNotSpd)?;
        if !sym {
            return Err(Error::CovarianceNotSpd);
        }
        // ||Gamma^{-1/2} O||^2 = trace(Gamma^{-1} R), R the Gram matrix of the representers
        let gram = Mat::from_fn(k, k, |i, j| regions[i].gram(&regions[j]));
        let x = gamma_llt.solve(&gram);
        let obs_norm_l2 = (0..k).map(|i| x[(i, i)]).sum::<f64>().max(0.0).sqrt();
        Ok(Self { regions, gamma, gamma_llt, delta, goal, obs_norm_l2 })
    }

    /// Four `100 * int_{I_k}` observations near the corners of the unit
    /// square, `Gamma = sigma^2 I` with `sigma` a tenth of the mean datum,
    /// and the goal `2 * int_{[1/4, 3/4]^2}`.
    pub fn unit_square_benchmark() -> Self {
        let sigma = 0.1 * BENCHMARK_DELTA.iter().sum::<f64>() / 4.0;
        Self::new(
            benchmark_regions(),
            diagonal(4, sigma * sigma),
            BENCHMARK_DELTA.to_vec(),
            Region::new([0.25, 0.75, 0.25, 0.75], 2.0),
        )
        .expect("benchmark setup is valid")
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn goal(&self) -> &Region {
        &self.goal
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn gamma(&self, i: usize, j: usize) -> f64 {
        self.gamma[(i, j)]
    }

    pub fn with_delta(&self, delta: Vec<f64>) -> Result<Self> {
        let gamma = (0..self.regions.len()).map(|i| (0..self.regions.len()).map(|j| self.gamma[(i, j)]).collect()).collect();
        Self::new(self.regions.clone(), gamma, delta, self.goal)
    }

    /// `|x|_Gamma = (x^T Gamma^{-1} x)^{1/2}`.
    pub fn gamma_norm(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.delta.len() {
            return Err(Error::DimensionMismatch { expected: self.delta.len(), got: x.len() });
        }
        let rhs = Mat::from_fn(x.len(), 1, |i, _| x[i]);
        let sol = self.gamma_llt.solve(&rhs);
        Ok((0..x.len()).map(|i| x[i] * sol[(i, 0)]).sum::<f64>().max(0.0).sqrt())
    }

    /// Misfit `|delta - o|_Gamma` and `log Theta = -misfit^2 / 2`.
    pub fn likelihood(&self, observed: &[f64]) -> Result<(f64, f64)> {
        let r: Vec<f64> = self.delta.iter().zip(observed).map(|(d, o)| d - o).collect();
        let misfit = self.gamma_norm(&r)?;
        Ok((misfit, -0.5 * misfit * misfit))
    }
}

pub fn benchmark_regions() -> Vec<Region> {
    [[0.1, 0.2, 0.1, 0.2], [0.1, 0.2, 0.8, 0.9], [0.8, 0.9, 0.1, 0.2], [0.8, 0.9, 0.8, 0.9]]
        .into_iter()
        .map(|r| Region::new(r, 100.0))
        .collect()
}

pub fn diagonal(k: usize, v: f64) -> Vec<Vec<f64>> {
    (0..k).map(|i| (0..k).map(|j| if i == j { v } else { 0.0 }).collect()).collect()
}

/// Sparse nodal weights `w` with `scale * int_rect v = sum_i w_i v_i` for
/// every P1 field `v` on one mesh.
#[derive(Clone, Debug, PartialEq)]
struct RegionWeights(Vec<(usize, f64)>);

impl RegionWeights {
    fn build(region: &Region, mesh: &TriangleMesh) -> Result<Self> {
        let mut acc = std::collections::BTreeMap::new();
        let mut covered = 0.0;
        for tri in mesh.triangles() {
            let p = tri.map(|v| mesh.vertices()[v]);
            let poly = clip_to_rect(&p, &region.rect);
            let Some((area, centroid)) = polygon_area_centroid(&poly) else { continue };
            covered += area;
            let lambda = barycentric(&p, centroid);
            for (a, &v) in tri.iter().enumerate() {
                *acc.entry(v).or_insert(0.0) += region.scale * area * lambda[a];
            }
        }
        if (covered - region.area()).abs() > 1e-9 * region.area() {
            return Err(Error::Config(format!("region {:?} is not contained in the domain", region.rect)));
        }
        Ok(Self(acc.into_iter().collect()))
    }

    fn apply(&self, v: &[f64]) -> f64 {
        self.0.iter().map(|&(i, w)| w * v[i]).sum()
    }
}

/// Sutherland-Hodgman clipping of a triangle against an axis-aligned box.
fn clip_to_rect(tri: &[[f64; 2]; 3], rect: &[f64; 4]) -> Vec<[f64; 2]> {
    let mut poly = tri.to_vec();
    // (axis, bound, keep the side where coordinate >= bound if `lower`)
    for (axis, bound, lower) in [(0, rect[0], true), (0, rect[1], false), (1, rect[2], true), (1, rect[3], false)] {
        if poly.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if lower { p[axis] >= bound } else { p[axis] <= bound };
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let (cur, next) = (poly[i], poly[(i + 1) % poly.len()]);
            let (ci, ni) = (inside(&cur), inside(&next));
            if ci {
                out.push(cur);
            }
            if ci != ni {
                let t = (bound - cur[axis]) / (next[axis] - cur[axis]);
                let mut x = [cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])];
                x[axis] = bound;
                out.push(x);
            }
        }
        poly = out;
    }
    poly
}

fn polygon_area_centroid(poly: &[[f64; 2]]) -> Option<(f64, [f64; 2])> {
    if poly.len() < 3 {
        return None;
    }
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let cross = p[0] * q[1] - q[0] * p[1];
        a += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    let area = 0.5 * a;
    (area > 0.0).then(|| (area, [cx / (6.0 * area), cy / (6.0 * area)]))
}

fn barycentric(p: &[[f64; 2]; 3], x: [f64; 2]) -> [f64; 3] {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (x[1] - p[0][1])) / det;
    let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1]) - (x[0] - p[0][0]) * (p[1][1] - p[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Observation and goal functionals compiled for one mesh, with the dual
/// norms both estimator variants need.
#[derive(Clone, Debug)]
pub struct Observer {
    mesh_id: u64,
    regions: Vec<RegionWeights>,
    goal: RegionWeights,
    obs_norm: [f64; 2],
    goal_norm: [f64; 2],
}

impl Observer {
    pub fn new(setup: &ObservationSetup, mesh: &TriangleMesh) -> Result<Self> {
        let regions = setup.regions.iter().map(|r| RegionWeights::build(r, mesh)).collect::<Result<_>>()?;
        let goal = RegionWeights::build(&setup.goal, mesh)?;
        // Friedrichs: ||v||_{L2} <= ||grad v|| / sqrt(lambda_1(D)), and lambda_1 of
        // the bounding box bounds lambda_1(D) from below
        let (lo, hi) = mesh.vertices().iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), v| {
            ([lo[0].min(v[0]), lo[1].min(v[1])], [hi[0].max(v[0]), hi[1].max(v[1])])
        });
        let (lx, ly) = (hi[0] - lo[0], hi[1] - lo[1]);
        let lambda1 = std::f64::consts::PI.powi(2) * (1.0 / (lx * lx) + 1.0 / (ly * ly));
        let friedrichs = 1.0 / lambda1.sqrt();
        let g = setup.goal.l2_norm();
        Ok(Self {
            mesh_id: mesh.id(),
            regions,
            goal,
            obs_norm: [setup.obs_norm_l2 * friedrichs, setup.obs_norm_l2],
            goal_norm: [g * friedrichs, g],
        })
    }

    fn check(&self, u: &FieldSolution) -> Result<()> {
        if u.mesh_id != self.mesh_id {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }

    /// `O(u_h)`, integrated exactly.
    pub fn observe(&self, u: &FieldSolution) -> Result<Vec<f64>> {
        self.check(u)?;
        Ok(self.regions.iter().map(|w| w.apply(&u.values)).collect())
    }

    /// `G(u_h)`.
    pub fn goal(&self, u: &FieldSolution) -> Result<f64> {
        self.check(u)?;
        Ok(self.goal.apply(&u.values))
    }

    /// `||Gamma^{-1/2} O||` in `X*` or `L2`.
    pub fn obs_norm(&self, v: Variant) -> f64 {
        self.obs_norm[v as usize]
    }

    /// `||G||` in `X*` or `L2`.
    pub fn goal_norm(&self, v: Variant) -> f64 {
        self.goal_norm[v as usize]
    }
}

/// A residual estimator value tagged with its variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eta {
    pub variant: Variant,
    pub value: f64,
}

/// `zeta_{y,h} = Theta_h (e^chi - 1)` together with `chi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaSample {
    pub variant: Variant,
    pub chi: f64,
    pub log_zeta: f64,
}

impl ZetaSample {
    pub fn zeta(&self) -> f64 {
        self.log_zeta.exp()
    }
}

/// `chi = N [misfit + N c* eta / 2] c* eta` and `zeta = Theta_h (e^chi - 1)`,
/// with `N = ||Gamma^{-1/2} O||` in the norm matching `eta`.
pub fn zeta_sample(observer: &Observer, log_theta: f64, misfit: f64, eta: Eta, c_star: f64) -> ZetaSample {
    let n = observer.obs_norm(eta.variant);
    let ce = c_star * eta.value;
    let chi = n * (misfit + 0.5 * n * ce) * ce;
    ZetaSample { variant: eta.variant, chi, log_zeta: log_theta + ln_expm1(chi) }
}

/// `log zeta' = log(||G|| (c* eta Theta_h e^chi + zeta ||u_h||))`, evaluated
/// as `log ||G|| + log Theta_h + chi + log(c* eta + (1 - e^-chi) ||u_h||)`.
pub fn zeta_prime_sample(
    observer: &Observer,
    log_theta: f64,
    zeta: &ZetaSample,
    eta: Eta,
    u_norm: f64,
    c_star: f64,
) -> Result<f64> {
    if zeta.variant != eta.variant {
        return Err(Error::VariantMismatch);
    }
    let g = observer.goal_norm(eta.variant);
    let inner = c_star * eta.value + (-(-zeta.chi).exp_m1()) * u_norm;
    Ok(g.ln() + log_theta + zeta.chi + inner.ln())
}

/// `Z' / Z`.
pub fn posterior_mean(zp: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDenominator);
    }
    Ok(zp / z)
}

/// Everything computed for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodSample {
    pub log_theta: f64,
    /// `G(u_h(y))`, so `Theta' = goal * Theta`.
    pub goal: f64,
    pub misfit: f64,
    pub eta: Option<Eta>,
    pub zeta: Option<ZetaSample>,
    pub log_zeta_prime: f64,
}

impl LikelihoodSample {
    pub fn theta(&self) -> f64 {
        self.log_theta.exp()
    }

    pub fn theta_prime(&self) -> f64 {
        self.goal * self.theta()
    }

    pub fn to_ratio_sample(&self) -> RatioSample {
        RatioSample {
            log_theta: self.log_theta,
            value: vec![self.goal],
            log_zeta: self.zeta.map_or(f64::NEG_INFINITY, |z| z.log_zeta),
            log_zeta_prime: self.log_zeta_prime,
        }
    }
}

/// The inversion problem on one mesh.
pub struct BipProblem<'a> {
    pub disc: Discretization<'a>,
    pub observer: Observer,
    pub setup: &'a ObservationSetup,
    pub source: Source,
    pub variant: Variant,
    pub c_star: f64,
}

impl<'a> BipProblem<'a> {
    pub fn new(
        mesh: &'a TriangleMesh,
        coeff: &'a AffineCoefficient,
        setup: &'a ObservationSetup,
        source: Source,
        variant: Variant,
        c_star: f64,
    ) -> Result<Self> {
        Ok(Self {
            disc: Discretization::new(mesh, coeff)?,
            observer: Observer::new(setup, mesh)?,
            setup,
            source,
            variant,
            c_star,
        })
    }

    /// Solve, observe and evaluate the likelihood; estimators when `estimate`.
    pub fn sample(&self, y: &[f64], estimate: bool) -> Result<LikelihoodSample> {
        let u = self.disc.solve_state(y, &self.source)?;
        let (misfit, log_theta) = self.setup.likelihood(&self.observer.observe(&u)?)?;
        let goal = self.observer.goal(&u)?;
        if !estimate {
            return Ok(LikelihoodSample { log_theta, goal, misfit, eta: None, zeta: None, log_zeta_prime: f64::NEG_INFINITY });
        }
        let (value, u_norm) = match self.variant {
            Variant::L2 => (self.disc.eta_l2(&u, &self.source)?.total, self.disc.l2_norm(&u.values)),
            Variant::H1 => (self.disc.eta_h1(&u, &self.source)?.total, self.disc.h1_seminorm(&u.values)),
        };
        let eta = Eta { variant: self.variant, value };
        let zeta = zeta_sample(&self.observer, log_theta, misfit, eta, self.c_star);
        let log_zeta_prime = zeta_prime_sample(&self.observer, log_theta, &zeta, eta, u_norm, self.c_star)?;
        Ok(LikelihoodSample { log_theta, goal, misfit, eta: Some(eta), zeta: Some(zeta), log_zeta_prime })
    }
}

/// Synthetic data: a uniform truth `y`, observations of its solution, and
/// additive `N(0, sigma^2)` noise with `sigma` a tenth of the mean
/// noise-free observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub truth: Vec<f64>,
    pub clean: Vec<f64>,
    pub sigma: f64,
    pub delta: Vec<f64>,
}

pub fn synthesize(
    mesh: &TriangleMesh,
    coeff: &AffineCoefficient,
    regions: &[Region],
    source: &Source,
    seed: u64,
) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..coeff.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
    let disc = Discretization::new(mesh, coeff)?;
    let u = disc.solve_state(&truth, source)?;
    let clean: Vec<f64> = regions
        .iter()
        .map(|r| Ok(RegionWeights::build(r, mesh)?.apply(&u.values)))
        .collect::<Result<_>>()?;
    let sigma = 0.1 * clean.iter().sum::<f64>() / clean.len() as f64;
    let noise = Normal::new(0.0, sigma.abs()).map_err(|e| Error::Config(e.to_string()))?;
    let delta = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
    Ok(SyntheticData { truth, clean, sigma, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(mesh: &TriangleMesh, f: impl Fn([f64; 2]) -> f64) -> FieldSolution {
        FieldSolution {
            mesh_id: mesh.id(),
            values: mesh.vertices().iter().map(|&x| f(x)).collect(),
            y: vec![],
            role: crate::fem::Role::State,
        }
    }

    #[test]
    fn constant_field_observes_one() {
        let setup = ObservationSetup::unit_square_benchmark();
        for mesh in [TriangleMesh::unit_square(7).unwrap(), TriangleMesh::criss_cross_unit_square(4).unwrap()] {
            let obs = Observer::new(&setup, &mesh).unwrap();
            let one = field(&mesh, |_| 1.0);
            for o in obs.observe(&one).unwrap() {
                assert!((o - 1.0).abs() < 1e-12, "{o}");
            }
            assert!((obs.goal(&one).unwrap() - 0.5).abs() < 1e-12);
        }
        assert!((setup.regions()[0].l2_norm() - 10.0).abs() < 1e-12);
        assert!((setup.goal().l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fields_are_integrated_exactly() {
        // misaligned mesh: regions cut through triangles
        let setup = ObservationSetup::unit_square_benchmark();
        let mesh = TriangleMesh::unit_square(7).unwrap();
        let obs = Observer::new(&setup, &mesh).unwrap();
        let u = field(&mesh, |x| 3.0 * x[0] - x[1] + 0.25);
        let got = obs.observe(&u).unwrap();
        for (r, g) in setup.regions().iter().zip(got) {
            let c = [(r.rect[0] + r.rect[1]) / 2.0, (r.rect[2] + r.rect[3]) / 2.0];
            let exact = 3.0 * c[0] - c[1] + 0.25;
            assert!((g - exact).abs() < 1e-12, "{g} vs {exact}");
        }
    }

    #[test]
    fn likelihood_examples() {
        let setup = ObservationSetup::unit_square_benchmark();
        let (misfit, log_theta) = setup.likelihood(setup.delta()).unwrap();
        assert_eq!((misfit, log_theta), (0.0, 0.0));
        let sigma: f64 = 0.1 * BENCHMARK_DELTA.iter().sum::<f64>() / 4.0;
        let x = [0.1, -0.2, 0.0, 0.3];
        let plain = x.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma);
        assert!((setup.gamma_norm(&x).unwrap().powi(2) - plain).abs() < 1e-10 * plain);
        // ||Gamma^{-1/2} O||_{L2} = sqrt(4 * 100) / sigma
        let obs = Observer::new(&setup, &TriangleMesh::unit_square(4).unwrap()).unwrap();
        assert!((obs.obs_norm(Variant::L2) - 20.0 / sigma).abs() < 1e-9 / sigma);
        assert!(obs.obs_norm(Variant::H1) < obs.obs_norm(Variant::L2));
    }

    #[test]
    fn covariance_must_be_spd() {
        let bad = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let r = vec![Region::new([0.1, 0.2, 0.1, 0.2], 1.0); 2];
        let g = Region::new([0.0, 1.0, 0.0, 1.0], 1.0);
        assert!(matches!(ObservationSetup::new(r.clone(), bad, vec![0.0; 2], g), Err(Error::CovarianceNotSpd)));
        let asym = vec![vec![1.0, 0.1], vec![0.0, 1.0]];
        assert!(matches!(ObservationSetup::new(r, asym, vec![0.0; 2], g), Err(Error::CovarianceNotSpd)));
    }

    #[test]
    fn zeta_examples() {
        let setup = ObservationSetup::unit_square_benchmark();
        let obs = Observer::new(&setup, &TriangleMesh::unit_square(4).unwrap()).unwrap();
        let zero = Eta { variant: Variant::L2, value: 0.0 };
        let z = zeta_sample(&obs, -1.0, 2.0, zero, 1.0);
        assert_eq!((z.chi, z.zeta()), (0.0, 0.0));
        assert_eq!(zeta_prime_sample(&obs, -1.0, &z, zero, 3.0, 1.0).unwrap().exp(), 0.0);
        // Theta = 1 and chi = ln 2 give zeta = 1
        let zs = ZetaSample { variant: Variant::L2, chi: 2f64.ln(), log_zeta: ln_expm1(2f64.ln()) };
        assert!((zs.zeta() - 1.0).abs() < 1e-15);
        let h1 = Eta { variant: Variant::H1, value: 0.1 };
        assert!(matches!(zeta_prime_sample(&obs, 0.0, &zs, h1, 1.0, 1.0), Err(Error::VariantMismatch)));
    }

    #[test]
    fn zeta_prime_matches_direct_formula() {
        let setup = ObservationSetup::unit_square_benchmark();
        let obs = Observer::new(&setup, &TriangleMesh::unit_square(4).unwrap()).unwrap();
        let (log_theta, misfit, u_norm, c) = (-3.0_f64, 1.7, 0.8, 1.3);
        let eta = Eta { variant: Variant::L2, value: 2e-4 };
        let z = zeta_sample(&obs, log_theta, misfit, eta, c);
        let theta = log_theta.exp();
        let n = obs.obs_norm(Variant::L2);
        let chi = n * (misfit + 0.5 * n * c * eta.value) * c * eta.value;
        let zeta = theta * chi.exp_m1();
        assert!((z.zeta() - zeta).abs() < 1e-13 * zeta);
        let zp = obs.goal_norm(Variant::L2) * (c * eta.value * theta * chi.exp() + zeta * u_norm);
        let got = zeta_prime_sample(&obs, log_theta, &z, eta, u_norm, c).unwrap().exp();
        assert!((got - zp).abs() < 1e-13 * zp);
    }

    #[test]
    fn posterior_mean_checks_denominator() {
        assert_eq!(posterior_mean(1.0, 2.0).unwrap(), 0.5);
        assert!(matches!(posterior_mean(1.0, 0.0), Err(Error::NonPositiveDenominator)));
    }

    #[test]
    fn synthetic_data_is_reproducible() {
        let mesh = TriangleMesh::criss_cross_unit_square(4).unwrap().refined(1);
        let coeff = AffineCoefficient::sine_modes_16();
        let a = synthesize(&mesh, &coeff, &benchmark_regions(), &Source::constant(10.0), 7).unwrap();
        let b = synthesize(&mesh, &coeff, &benchmark_regions(), &Source::constant(10.0), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma > 0.0 && a.truth.iter().all(|y| y.abs() <= 0.5));
    }

    proptest! {
        #[test]
        fn observation_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let setup = ObservationSetup::unit_square_benchmark();
            let mesh = TriangleMesh::unit_square(6).unwrap();
            let obs = Observer::new(&setup, &mesh).unwrap();
            let u = field(&mesh, |x| (x[0] * 7.0).sin());
            let v = field(&mesh, |x| x[1] * x[1]);
            let w = field(&mesh, |x| a * (x[0] * 7.0).sin() + b * x[1] * x[1]);
            let (ou, ov, ow) = (obs.observe(&u).unwrap(), obs.observe(&v).unwrap(), obs.observe(&w).unwrap());
            for k in 0..4 {
                prop_assert!((a * ou[k] + b * ov[k] - ow[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn zeta_increases_with_eta(e1 in 1e-6f64..1e-2, de in 1e-7f64..1e-2, misfit in 0.0f64..10.0) {
            let setup = ObservationSetup::unit_square_benchmark();
            let obs = Observer::new(&setup, &TriangleMesh::unit_square(2).unwrap()).unwrap();
            let z1 = zeta_sample(&obs, -1.0, misfit, Eta { variant: Variant::L2, value: e1 }, 1.0);
            let z2 = zeta_sample(&obs, -1.0, misfit, Eta { variant: Variant::L2, value: e1 + de }, 1.0);
            prop_assert!(z2.chi > z1.chi && z2.log_zeta > z1.log_zeta);
        }
    }
}
