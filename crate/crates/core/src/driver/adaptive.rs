//! The two-phase adaptive loop: refine the mesh at `m = m0` until the FE
//! ratio bound is below `tau_fem`, then raise `m` on that mesh until the
//! lattice estimator is below `tau_qmc`.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ProblemKind, RunConfig};
use crate::bip::{BipProblem, LikelihoodSample};
use crate::coefficient::AffineCoefficient;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::ocp::{ControlIterate, ControlProblem};
use crate::par::{try_map_indexed, Execution};
use crate::qmc::{LatticeRule, PointSet};
use crate::ratio::{aggregate, combined_estimator, common_shift, EstimatorReport, RatioLevelData, RatioSample};

/// Constant of the denominator guard `Z > c zeta`.
const GUARD_CONSTANT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fem,
    Qmc,
}

/// One line of `iterations.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iter: usize,
    pub phase: Phase,
    pub dofs: usize,
    pub h_max: f64,
    pub m: u32,
    #[serde(rename = "Z")]
    pub z: f64,
    #[serde(rename = "normZp")]
    pub norm_zp: f64,
    pub qmc_term: Option<f64>,
    pub fem_term: Option<f64>,
    pub est: Option<f64>,
    pub realized_err: Option<f64>,
    pub valid: bool,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    /// The next refinement would exceed `max_dofs`; the lattice phase still ran.
    DofCapReached,
    /// `m_max` reached before `tau_qmc`.
    LatticeCapReached,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            _ => 2,
        }
    }
}

/// Complete result of [`adaptive_run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub kind: ProblemKind,
    pub rows: Vec<IterationRow>,
    pub status: RunStatus,
    /// Final `Z'/Z` (a scalar for inversion, a nodal field for control).
    pub ratio: Vec<f64>,
    pub report: EstimatorReport,
    pub mesh_level: usize,
    pub dofs: usize,
    pub m: u32,
    /// Control runs only: the last optimizer result.
    pub control: Option<ControlIterate>,
    /// Inversion runs with `dump_samples`: the last level's samples.
    pub samples: Vec<LikelihoodSample>,
}

impl RunOutcome {
    /// `EST / alpha2` for control runs.
    pub fn control_bound(&self, alpha2: f64) -> Option<f64> {
        self.report.est().map(|e| crate::ocp::control_error_bound(e, alpha2))
    }
}

/// Problem-specific sample generation for one `(m, h)` pair.
trait LevelSampler {
    /// Samples at level `m` with estimators and at `m - 1` without.
    fn level_pair(&mut self, mesh: &TriangleMesh, rule: &LatticeRule, m: u32) -> Result<[Vec<RatioSample>; 2]>;

    fn take_samples(&mut self) -> Vec<LikelihoodSample> {
        Vec::new()
    }

    fn take_control(&mut self) -> Option<ControlIterate> {
        None
    }
}

struct BipSampler<'a> {
    cfg: &'a RunConfig,
    coeff: &'a AffineCoefficient,
    setup: crate::bip::ObservationSetup,
    exec: Execution,
    cache: HashMap<(u64, u32), Vec<RatioSample>>,
    last: Vec<LikelihoodSample>,
}

impl BipSampler<'_> {
    fn run(&mut self, mesh: &TriangleMesh, points: &PointSet, estimate: bool) -> Result<Vec<LikelihoodSample>> {
        let p = BipProblem::new(
            mesh,
            self.coeff,
            &self.setup,
            self.cfg.bip.source(),
            self.cfg.bip.variant,
            self.cfg.adaptive.c_star,
        )?;
        try_map_indexed(self.exec, points.len(), |i| p.sample(points.point(i), estimate))
    }
}

impl LevelSampler for BipSampler<'_> {
    fn level_pair(&mut self, mesh: &TriangleMesh, rule: &LatticeRule, m: u32) -> Result<[Vec<RatioSample>; 2]> {
        let prev = match self.cache.get(&(mesh.id(), m - 1)) {
            Some(s) => s.clone(),
            None => self.run(mesh, &rule.points(m - 1)?, false)?.iter().map(LikelihoodSample::to_ratio_sample).collect(),
        };
        let cur_full = self.run(mesh, &rule.points(m)?, true)?;
        let cur: Vec<RatioSample> = cur_full.iter().map(LikelihoodSample::to_ratio_sample).collect();
        self.cache.retain(|&(id, _), _| id == mesh.id());
        self.cache.insert((mesh.id(), m), cur.clone());
        if self.cfg.bip.dump_samples {
            self.last = cur_full;
        }
        Ok([cur, prev])
    }

    fn take_samples(&mut self) -> Vec<LikelihoodSample> {
        std::mem::take(&mut self.last)
    }
}

struct OcpSampler<'a> {
    cfg: &'a RunConfig,
    coeff: &'a AffineCoefficient,
    exec: Execution,
    last: Option<(u64, ControlIterate)>,
}

impl LevelSampler for OcpSampler<'_> {
    fn level_pair(&mut self, mesh: &TriangleMesh, rule: &LatticeRule, m: u32) -> Result<[Vec<RatioSample>; 2]> {
        let settings = self.cfg.ocp.settings(self.cfg.adaptive.c_star);
        let theta = settings.theta;
        let points = rule.points(m)?;
        let problem = ControlProblem::new(mesh, self.coeff, settings, &points, self.exec)?;
        // warm start from the previous control, on the same mesh or its parent
        let start = self.last.as_ref().and_then(|(id, it)| {
            if *id == mesh.id() {
                Some(it.f.clone())
            } else {
                mesh.prolongate(&it.f).ok()
            }
        });
        let sol = problem.solve_control(self.cfg.ocp.tol, self.cfg.ocp.max_iter, start.as_deref())?;
        let to_ratio = |s: Vec<crate::ocp::OcpSample>| s.iter().map(|s| s.to_ratio_sample(theta)).collect::<Vec<_>>();
        let cur = to_ratio(problem.samples(&sol.f, &points, true)?);
        let prev = to_ratio(problem.samples(&sol.f, &rule.points(m - 1)?, false)?);
        self.last = Some((mesh.id(), sol));
        Ok([cur, prev])
    }

    fn take_control(&mut self) -> Option<ControlIterate> {
        self.last.take().map(|(_, c)| c)
    }
}

/// `v^T M v` with the P1 mass matrix, square-rooted.
pub fn p1_l2_norm(mesh: &TriangleMesh, v: &[f64]) -> f64 {
    mesh.triangles()
        .iter()
        .zip(mesh.areas())
        .map(|(t, area)| {
            let vals = t.map(|i| v[i]);
            let sum: f64 = vals.iter().sum();
            area / 12.0 * (vals.iter().map(|x| x * x).sum::<f64>() + sum * sum)
        })
        .sum::<f64>()
        .sqrt()
}

/// Combines two sample levels into the estimator report. `norm` is the `Y`
/// norm of the ratio space.
pub fn level_report(
    cur: &[RatioSample],
    prev: &[RatioSample],
    m: u32,
    norm: impl Fn(&[f64]) -> f64,
) -> Result<(EstimatorReport, f64)> {
    let shift = common_shift([cur, prev]);
    let d = RatioLevelData::from_levels(&aggregate(cur, m, shift)?, &aggregate(prev, m - 1, shift)?)?;
    Ok((combined_estimator(&d, norm, GUARD_CONSTANT)?, shift))
}

/// Runs the adaptive loop. `reference` (inversion only) fills the
/// `realized_err` column.
pub fn adaptive_run(cfg: &RunConfig, reference: Option<f64>, exec: Execution) -> Result<RunOutcome> {
    cfg.validate()?;
    let coeff = cfg.coefficient.build()?;
    let a = &cfg.adaptive;
    let mut rule = LatticeRule::new(cfg.qmc.weights(&coeff, cfg.problem));
    let mut sampler: Box<dyn LevelSampler + '_> = match cfg.problem {
        ProblemKind::Bip => Box::new(BipSampler {
            cfg,
            coeff: &coeff,
            setup: cfg.bip.setup(&cfg.mesh, &coeff)?,
            exec,
            cache: HashMap::new(),
            last: Vec::new(),
        }),
        ProblemKind::Ocp => Box::new(OcpSampler { cfg, coeff: &coeff, exec, last: None }),
    };
    let mut mesh = cfg.mesh.initial()?;
    let mut level = cfg.mesh.refinements;
    if mesh.num_vertices() > a.max_dofs {
        return Err(Error::Config(format!("initial mesh has {} > max_dofs vertices", mesh.num_vertices())));
    }
    let mut m = cfg.qmc.m0;
    let mut phase = Phase::Fem;
    let mut dof_cap = false;
    let mut rows = Vec::new();
    loop {
        let start = Instant::now();
        rule.ensure(m - 1)?;
        rule.ensure(m)?;
        let [cur, prev] = sampler.level_pair(&mesh, &rule, m)?;
        let (report, shift) = match cfg.problem {
            ProblemKind::Bip => level_report(&cur, &prev, m, |v| v[0].abs())?,
            ProblemKind::Ocp => level_report(&cur, &prev, m, |v| p1_l2_norm(&mesh, v))?,
        };
        let realized_err = match (cfg.problem, reference) {
            (ProblemKind::Bip, Some(r)) => Some((report.ratio[0] - r).abs()),
            _ => None,
        };
        rows.push(IterationRow {
            iter: rows.len(),
            phase,
            dofs: mesh.num_vertices(),
            h_max: mesh.h_max(),
            m,
            z: (report.z.ln() + shift).exp(),
            norm_zp: (report.norm_zp.ln() + shift).exp(),
            qmc_term: report.qmc_term,
            fem_term: report.fem_term,
            est: report.est(),
            realized_err,
            valid: report.qmc_valid() && report.fem_valid(),
            seconds: start.elapsed().as_secs_f64(),
        });

        if phase == Phase::Fem {
            let met = report.fem_term.is_some_and(|t| t <= a.tau_fem);
            if !met && mesh.num_vertices() + mesh.edges().len() <= a.max_dofs {
                mesh = mesh.refine_uniform();
                level += 1;
                continue;
            }
            dof_cap = !met;
            phase = Phase::Qmc;
        }
        if report.qmc_term.is_some_and(|t| t <= a.tau_qmc) || m >= a.m_max {
            let status = if m >= a.m_max && !report.qmc_term.is_some_and(|t| t <= a.tau_qmc) {
                RunStatus::LatticeCapReached
            } else if dof_cap {
                RunStatus::DofCapReached
            } else {
                RunStatus::Converged
            };
            let (control, samples) = (sampler.take_control(), sampler.take_samples());
            return Ok(RunOutcome {
                kind: cfg.problem,
                rows,
                status,
                ratio: report.ratio.clone(),
                report,
                mesh_level: level,
                dofs: mesh.num_vertices(),
                m,
                control,
                samples,
            });
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huge_tolerances_stop_after_one_evaluation() {
        let mut cfg = RunConfig::default();
        cfg.adaptive.tau_fem = 1e6;
        cfg.adaptive.tau_qmc = 1e6;
        // a tiny reliability constant keeps the FE guard satisfied on a coarse mesh
        cfg.adaptive.c_star = 1e-3;
        cfg.mesh.refinements = 2;
        let out = adaptive_run(&cfg, Some(0.6), Execution::Parallel).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.status, RunStatus::Converged);
        assert_eq!(out.rows[0].phase, Phase::Fem);
        assert_eq!(out.m, 2);
        assert!(out.rows[0].realized_err.is_some());
    }

    #[test]
    fn caps_end_the_run_with_status() {
        let mut cfg = RunConfig::default();
        cfg.adaptive.max_dofs = 600;
        cfg.adaptive.m_max = 4;
        cfg.adaptive.tau_qmc = 1e-9;
        let out = adaptive_run(&cfg, None, Execution::Parallel).unwrap();
        assert_eq!(out.status, RunStatus::LatticeCapReached);
        assert_eq!(out.status.exit_code(), 2);
        let fem: Vec<_> = out.rows.iter().filter(|r| r.phase == Phase::Fem).collect();
        assert_eq!(fem.iter().map(|r| r.dofs).collect::<Vec<_>>(), vec![41, 145, 545]);
        let qmc: Vec<u32> = out.rows.iter().filter(|r| r.phase == Phase::Qmc).map(|r| r.m).collect();
        assert_eq!(qmc, vec![3, 4]);
        // coarse meshes trip the FE guard
        assert!(!out.rows[0].valid && out.rows[0].fem_term.is_none());
    }

    #[test]
    fn qmc_phase_reuses_the_previous_level() {
        let mut cfg = RunConfig::default();
        cfg.mesh.refinements = 2;
        cfg.adaptive.c_star = 1e-3;
        cfg.adaptive.tau_fem = 1e6;
        cfg.adaptive.m_max = 4;
        cfg.adaptive.tau_qmc = 1e-9;
        let out = adaptive_run(&cfg, None, Execution::Sequential).unwrap();
        // the m = 3 row on the same mesh equals a direct evaluation
        let coeff = cfg.coefficient.build().unwrap();
        let mut rule = LatticeRule::new(cfg.qmc.weights(&coeff, cfg.problem));
        rule.ensure(2).unwrap();
        rule.ensure(3).unwrap();
        let mesh = cfg.mesh.initial().unwrap();
        let setup = cfg.bip.setup(&cfg.mesh, &coeff).unwrap();
        let p = BipProblem::new(&mesh, &coeff, &setup, cfg.bip.source(), cfg.bip.variant, 1e-3).unwrap();
        let s = |m: u32, est: bool| -> Vec<RatioSample> {
            rule.points(m).unwrap().iter().map(|y| p.sample(y, est).unwrap().to_ratio_sample()).collect()
        };
        let (report, _) = level_report(&s(3, true), &s(2, false), 3, |v| v[0].abs()).unwrap();
        let row = &out.rows[1];
        assert_eq!(row.m, 3);
        assert_eq!(row.qmc_term, report.qmc_term);
        assert_eq!(row.fem_term, report.fem_term);
    }

    #[test]
    fn control_run_produces_a_control() {
        let mut cfg = RunConfig { problem: ProblemKind::Ocp, ..RunConfig::default() };
        cfg.mesh.refinements = 1;
        cfg.adaptive.tau_fem = 1e6;
        cfg.adaptive.tau_qmc = 1e6;
        let out = adaptive_run(&cfg, None, Execution::Parallel).unwrap();
        let c = out.control.as_ref().unwrap();
        assert!(c.converged);
        assert_eq!(c.f.len(), 145);
        assert_eq!(out.ratio.len(), 145);
        assert!(out.rows[0].valid);
        assert!(out.control_bound(0.1).unwrap() > 0.0);
    }

    #[test]
    fn mass_norm_of_constant_is_area() {
        let mesh = TriangleMesh::criss_cross_unit_square(3).unwrap();
        assert!((p1_l2_norm(&mesh, &vec![2.0; mesh.num_vertices()]) - 2.0).abs() < 1e-14);
    }
}
