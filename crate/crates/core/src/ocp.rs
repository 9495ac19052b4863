//! Optimal control under the entropic risk measure.
//!
//! The control `f` is a P1 nodal field on the whole mesh and the admissible
//! set is a box, imposed nodewise. `J'(f)` is represented by its nodal `L2`
//! Riesz field, so `<J'(f), d>` is the mass-matrix product.

use crate::coefficient::AffineCoefficient;
use crate::error::{Error, Result};
use crate::fem::{Discretization, Factor, FieldSolution, Profile, Source};
use crate::mesh::TriangleMesh;
use crate::par::{pairwise_sum, try_map_indexed, Execution};
use crate::qmc::{pairwise_sum_fields, PointSet};
use crate::ratio::{ln_expm1, RatioSample};

/// `(1/theta) log(mean exp(theta phi))`, with max subtraction.
pub fn entropic_risk(values: &[f64], theta: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let terms: Vec<f64> = values.iter().map(|v| (theta * (v - max)).exp()).collect();
    max + (pairwise_sum(&terms) / values.len() as f64).ln() / theta
}

/// Model data of the control problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSettings {
    pub u_hat: Source,
    pub alpha1: f64,
    pub alpha2: f64,
    pub theta: f64,
    pub lower: f64,
    pub upper: f64,
    pub c_star: f64,
}

impl ControlSettings {
    /// Target `16 x1 x2 (1 - x1)(1 - x2)`, `alpha1 = 1`, `alpha2 = 0.1`,
    /// `theta = 1`, box `[-10, 10]`.
    pub fn fixture() -> Self {
        Self {
            u_hat: Source::profile(16.0, Profile::Bubble),
            alpha1: 1.0,
            alpha2: 0.1,
            theta: 1.0,
            lower: -10.0,
            upper: 10.0,
            c_star: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0) || !(self.alpha2 > 0.0) || !(self.theta > 0.0) || !(self.lower <= self.upper) {
            return Err(Error::Config(format!(
                "control problem needs alpha1 >= 0, alpha2 > 0, theta > 0, lower <= upper; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Nodewise projection onto the box.
    pub fn project(&self, f: &mut [f64]) {
        f.iter_mut().for_each(|v| *v = v.clamp(self.lower, self.upper));
    }
}

/// Objective value and gradient at one control.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub j: f64,
    /// Nodal `L2` Riesz field of `J'(f)`.
    pub gradient: Vec<f64>,
    /// `Phi_h(y)` per lattice point.
    pub phi: Vec<f64>,
    /// Exp-weighted adjoint average `sum w q / sum w`.
    pub q_mean: Vec<f64>,
}

/// Result of [`ControlProblem::solve_control`].
#[derive(Clone, Debug, PartialEq)]
pub struct ControlIterate {
    pub f: Vec<f64>,
    pub evaluation: Evaluation,
    /// `||f - P(f - J'(f)/alpha2)||_{L2}`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(J, residual)` per iteration.
    pub history: Vec<(f64, f64)>,
}

/// Per-point integrands and FE bounds at a fixed control.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpSample {
    pub phi: f64,
    pub q: Vec<f64>,
    pub q_norm: f64,
    pub eta: Option<f64>,
    pub eta_dual: Option<f64>,
    pub chi: f64,
    pub log_zeta: f64,
    pub log_zeta_prime: f64,
}

impl OcpSample {
    /// `Theta = exp(theta Phi)` in log form, `Theta' / Theta = q_h`.
    pub fn to_ratio_sample(&self, theta: f64) -> RatioSample {
        RatioSample {
            log_theta: theta * self.phi,
            value: self.q.clone(),
            log_zeta: self.log_zeta,
            log_zeta_prime: self.log_zeta_prime,
        }
    }
}

/// Factorizations are kept when `dofs * points` stays below this.
const FACTOR_CACHE_BUDGET: usize = 1 << 21;

/// The discrete problem `min_f R_m(Phi_h) + alpha2/2 ||f||^2` on one mesh and
/// one point set.
pub struct ControlProblem<'a> {
    pub disc: Discretization<'a>,
    pub settings: ControlSettings,
    points: Vec<Vec<f64>>,
    factors: Option<Vec<Factor>>,
    exec: Execution,
}

impl<'a> ControlProblem<'a> {
    pub fn new(
        mesh: &'a TriangleMesh,
        coeff: &'a AffineCoefficient,
        settings: ControlSettings,
        points: &PointSet,
        exec: Execution,
    ) -> Result<Self> {
        settings.validate()?;
        settings.u_hat.nodal.as_ref().map_or(Ok(()), |v| {
            if v.len() == mesh.num_vertices() {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: mesh.num_vertices(), got: v.len() })
            }
        })?;
        let disc = Discretization::new(mesh, coeff)?;
        let points: Vec<Vec<f64>> = points.iter().map(<[f64]>::to_vec).collect();
        if points.is_empty() {
            return Err(Error::EmptySampleBudget);
        }
        let factors = if disc.num_free() * points.len() <= FACTOR_CACHE_BUDGET {
            Some(try_map_indexed(exec, points.len(), |i| disc.factor(&points[i]))?)
        } else {
            None
        };
        Ok(Self { disc, settings, points, factors, exec })
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn with_factor<T>(&self, i: usize, f: impl FnOnce(&Factor) -> Result<T>) -> Result<T> {
        match &self.factors {
            Some(fs) => f(&fs[i]),
            None => f(&self.disc.factor(&self.points[i])?),
        }
    }

    fn check_control(&self, f: &[f64]) -> Result<()> {
        let n = self.disc.mesh().num_vertices();
        if f.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: f.len() });
        }
        Ok(())
    }

    /// State, `Phi_h(y) = alpha1/2 ||u_h - u_hat||^2` and, if requested, the adjoint.
    fn state_and_adjoint(
        &self,
        factor: &Factor,
        f: &[f64],
        adjoint: bool,
    ) -> Result<(FieldSolution, f64, Option<FieldSolution>)> {
        let s = &self.settings;
        let u = self.disc.solve_with(factor, &Source::nodal(f.to_vec()), crate::fem::Role::State)?;
        let dist = self.disc.l2_distance(&u.values, &s.u_hat)?;
        let q = if adjoint { Some(self.disc.solve_adjoint_with(factor, &u, &s.u_hat, s.alpha1)?) } else { None };
        Ok((u, 0.5 * s.alpha1 * dist * dist, q))
    }

    /// `J_{m,h}(f)` alone (no adjoint solves).
    pub fn objective(&self, f: &[f64]) -> Result<f64> {
        self.check_control(f)?;
        let phi = try_map_indexed(self.exec, self.points.len(), |i| {
            self.with_factor(i, |fac| Ok(self.state_and_adjoint(fac, f, false)?.1))
        })?;
        Ok(entropic_risk(&phi, self.settings.theta) + 0.5 * self.settings.alpha2 * self.disc.l2_inner(f, f))
    }

    /// `J_{m,h}(f)` and its gradient field `sum_y w_y q_y / sum_y w_y + alpha2 f`
    /// with `w_y = exp(theta Phi_h(y))`.
    pub fn objective_and_gradient(&self, f: &[f64]) -> Result<Evaluation> {
        self.check_control(f)?;
        let s = &self.settings;
        let per_point = try_map_indexed(self.exec, self.points.len(), |i| {
            self.with_factor(i, |fac| {
                let (_, phi, q) = self.state_and_adjoint(fac, f, true)?;
                Ok((phi, q.expect("adjoint requested").values))
            })
        })?;
        let (phi, qs): (Vec<f64>, Vec<Vec<f64>>) = per_point.into_iter().unzip();
        let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = phi.iter().map(|p| (s.theta * (p - max)).exp()).collect();
        let weighted: Vec<Vec<f64>> = qs.iter().zip(&w).map(|(q, w)| q.iter().map(|v| w * v).collect()).collect();
        let wsum = pairwise_sum(&w);
        let q_mean: Vec<f64> = pairwise_sum_fields(&weighted).into_iter().map(|v| v / wsum).collect();
        let gradient = q_mean.iter().zip(f).map(|(q, f)| q + s.alpha2 * f).collect();
        let j = entropic_risk(&phi, s.theta) + 0.5 * s.alpha2 * self.disc.l2_inner(f, f);
        Ok(Evaluation { j, gradient, phi, q_mean })
    }

    /// `||f - P(f - g / alpha2)||_{L2}`.
    pub fn fixed_point_residual(&self, f: &[f64], gradient: &[f64]) -> f64 {
        let mut p: Vec<f64> = f.iter().zip(gradient).map(|(f, g)| f - g / self.settings.alpha2).collect();
        self.settings.project(&mut p);
        let d: Vec<f64> = f.iter().zip(&p).map(|(a, b)| a - b).collect();
        self.disc.l2_norm(&d)
    }

    /// Projected gradient with Barzilai-Borwein steps and an Armijo
    /// backtracking safeguard. Starts from `start` or the projection of zero.
    pub fn solve_control(&self, tol: f64, max_iter: usize, start: Option<&[f64]>) -> Result<ControlIterate> {
        if !(tol > 0.0) {
            return Err(Error::Config("optimizer tolerance must be positive".into()));
        }
        let s = &self.settings;
        let mut f = match start {
            Some(v) => {
                self.check_control(v)?;
                v.to_vec()
            }
            None => vec![0.0; self.disc.mesh().num_vertices()],
        };
        s.project(&mut f);
        let mut eval = self.objective_and_gradient(&f)?;
        let mut residual = self.fixed_point_residual(&f, &eval.gradient);
        let mut history = vec![(eval.j, residual)];
        let mut step = 1.0 / s.alpha2;
        let mut iterations = 0;
        while residual > tol && iterations < max_iter {
            iterations += 1;
            let mut t = step;
            let (next, next_eval) = loop {
                let mut trial: Vec<f64> = f.iter().zip(&eval.gradient).map(|(f, g)| f - t * g).collect();
                s.project(&mut trial);
                let d: Vec<f64> = trial.iter().zip(&f).map(|(a, b)| a - b).collect();
                let slope = self.disc.l2_inner(&eval.gradient, &d);
                let trial_eval = self.objective_and_gradient(&trial)?;
                let decrease_ok = trial_eval.j <= eval.j + 1e-4 * slope + 1e-14 * eval.j.abs();
                if decrease_ok || t < 1e-12 {
                    break (trial, trial_eval);
                }
                t *= 0.5;
            };
            let sv: Vec<f64> = next.iter().zip(&f).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = next_eval.gradient.iter().zip(&eval.gradient).map(|(a, b)| a - b).collect();
            let (ss, sy) = (self.disc.l2_inner(&sv, &sv), self.disc.l2_inner(&sv, &yv));
            step = if sy > 0.0 { (ss / sy).clamp(1e-6 / s.alpha2, 1e6 / s.alpha2) } else { 1.0 / s.alpha2 };
            f = next;
            eval = next_eval;
            residual = self.fixed_point_residual(&f, &eval.gradient);
            history.push((eval.j, residual));
        }
        Ok(ControlIterate { f, evaluation: eval, residual, iterations, converged: residual <= tol, history })
    }

    /// Integrands and, with `estimate`, the bounds `zeta`, `zeta'` at control
    /// `f` for every point in `points` (which need not be the optimization set).
    pub fn samples(&self, f: &[f64], points: &PointSet, estimate: bool) -> Result<Vec<OcpSample>> {
        self.check_control(f)?;
        let own = points.len() == self.points.len() && points.iter().zip(&self.points).all(|(a, b)| a == &b[..]);
        try_map_indexed(self.exec, points.len(), |i| {
            let y = points.point(i);
            let run = |fac: &Factor| self.sample_at(fac, f, estimate);
            if own {
                self.with_factor(i, run)
            } else {
                run(&self.disc.factor(y)?)
            }
        })
    }

    fn sample_at(&self, factor: &Factor, f: &[f64], estimate: bool) -> Result<OcpSample> {
        let s = &self.settings;
        let (u, phi, q) = self.state_and_adjoint(factor, f, true)?;
        let q = q.expect("adjoint requested");
        let q_norm = self.disc.l2_norm(&q.values);
        if !estimate {
            return Ok(OcpSample {
                phi,
                q: q.values,
                q_norm,
                eta: None,
                eta_dual: None,
                chi: 0.0,
                log_zeta: f64::NEG_INFINITY,
                log_zeta_prime: f64::NEG_INFINITY,
            });
        }
        let source = Source::nodal(f.to_vec());
        let eta = self.disc.eta_l2(&u, &source)?.total;
        let eta_dual = self.disc.eta_l2_dual(&q, &u, &s.u_hat, s.alpha1, eta)?.total;
        let dist = self.disc.l2_distance(&u.values, &s.u_hat)?;
        let chi = ocp_chi(s, eta, dist);
        let log_theta = s.theta * phi;
        Ok(OcpSample {
            phi,
            q: q.values,
            q_norm,
            eta: Some(eta),
            eta_dual: Some(eta_dual),
            chi,
            log_zeta: log_theta + ln_expm1(chi),
            log_zeta_prime: ocp_log_zeta_prime(s, log_theta, chi, q_norm, eta_dual),
        })
    }
}

/// `chi = theta c* (alpha1/2 eta~^2 + alpha1 ||u_h - u_hat|| eta~)`.
pub fn ocp_chi(s: &ControlSettings, eta: f64, state_distance: f64) -> f64 {
    s.theta * s.c_star * (0.5 * s.alpha1 * eta * eta + s.alpha1 * state_distance * eta)
}

/// Reliability factor of the dual estimator, `2 max(c*, 1) c*`.
pub fn dual_reliability(c_star: f64) -> f64 {
    2.0 * c_star.max(1.0) * c_star
}

/// `log zeta'` for `zeta' = zeta ||q_h|| + 2 max(c*,1) c* Theta e^chi eta~~`.
pub fn ocp_log_zeta_prime(s: &ControlSettings, log_theta: f64, chi: f64, q_norm: f64, eta_dual: f64) -> f64 {
    let inner = (-(-chi).exp_m1()) * q_norm + dual_reliability(s.c_star) * eta_dual;
    log_theta + chi + inner.ln()
}

/// `||f* - f*_{m,h}|| <= EST / alpha2`.
pub fn control_error_bound(est: f64, alpha2: f64) -> f64 {
    est / alpha2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmc::{LatticeRule, SpodWeights};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rule(m: u32) -> LatticeRule {
        let coeff = AffineCoefficient::sine_modes_16();
        let beta = coeff.b().iter().map(|b| b / 4.0).collect();
        LatticeRule::construct(SpodWeights::new(3, 2, 1.0, beta), m).unwrap()
    }

    #[test]
    fn risk_examples() {
        assert!((entropic_risk(&[0.7; 5], 2.0) - 0.7).abs() < 1e-15);
        assert!((entropic_risk(&[0.0, 3f64.ln()], 1.0) - 2f64.ln()).abs() < 1e-15);
        let v = [0.1, 0.5, -0.3, 2.0];
        let mean = v.iter().sum::<f64>() / 4.0;
        assert!((entropic_risk(&v, 1e-6) - mean).abs() < 1e-6);
        assert!(entropic_risk(&[1e6, 0.0], 1.0).is_finite());
    }

    proptest! {
        #[test]
        fn risk_is_translation_equivariant_and_above_mean(
            v in proptest::collection::vec(-5.0f64..5.0, 1..20), c in -10.0f64..10.0, theta in 0.1f64..3.0,
        ) {
            let r = entropic_risk(&v, theta);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert!((entropic_risk(&shifted, theta) - r - c).abs() < 1e-12 * (1.0 + r.abs() + c.abs()));
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!(r >= mean - 1e-12);
        }
    }

    #[test]
    fn zero_weight_on_tracking_gives_projected_zero() {
        let mesh = TriangleMesh::criss_cross_unit_square(4).unwrap();
        let coeff = AffineCoefficient::sine_modes_16();
        let r = rule(2);
        let mut s = ControlSettings::fixture();
        s.alpha1 = 0.0;
        s.lower = 1.0;
        let p = ControlProblem::new(&mesh, &coeff, s, &r.points(2).unwrap(), Execution::Sequential).unwrap();
        let sol = p.solve_control(1e-10, 50, None).unwrap();
        assert!(sol.converged);
        assert!(sol.f.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = TriangleMesh::criss_cross_unit_square(4).unwrap();
        let coeff = AffineCoefficient::sine_modes_16();
        let r = rule(3);
        let p = ControlProblem::new(&mesh, &coeff, ControlSettings::fixture(), &r.points(3).unwrap(), Execution::Parallel)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = mesh.num_vertices();
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let eval = p.objective_and_gradient(&f).unwrap();
        for _ in 0..3 {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eps = 1e-5;
            let plus: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
            let minus: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
            let fd = (p.objective(&plus).unwrap() - p.objective(&minus).unwrap()) / (2.0 * eps);
            let an = p.disc.l2_inner(&eval.gradient, &d);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-8), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn solver_converges_and_is_optimal() {
        let mesh = TriangleMesh::criss_cross_unit_square(4).unwrap().refined(1);
        let coeff = AffineCoefficient::sine_modes_16();
        let r = rule(3);
        let pts = r.points(3).unwrap();
        let p = ControlProblem::new(&mesh, &coeff, ControlSettings::fixture(), &pts, Execution::Parallel).unwrap();
        let sol = p.solve_control(1e-9, 200, None).unwrap();
        assert!(sol.converged, "residual {}", sol.residual);
        // strong convexity: J(f) >= J(f*) + alpha2/2 ||f - f*||^2
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..4 {
            let g: Vec<f64> = sol.f.iter().map(|v| (v + rng.random_range(-2.0..2.0)).clamp(-10.0, 10.0)).collect();
            let d: Vec<f64> = g.iter().zip(&sol.f).map(|(a, b)| a - b).collect();
            let lhs = p.objective(&g).unwrap();
            let rhs = sol.evaluation.j + 0.5 * 0.1 * p.disc.l2_inner(&d, &d);
            assert!(lhs >= rhs - 1e-8, "{lhs} < {rhs}");
        }
        // the ratio of integrands reproduces J' - alpha2 f
        let samples = p.samples(&sol.f, &pts, false).unwrap();
        let rs: Vec<_> = samples.iter().map(|s| s.to_ratio_sample(1.0)).collect();
        let shift = crate::ratio::common_shift([&rs[..]]);
        let lv = crate::ratio::aggregate(&rs, 3, shift).unwrap();
        let ratio: Vec<f64> = lv.zp.iter().map(|v| v / lv.z).collect();
        for (a, b) in ratio.iter().zip(&sol.evaluation.q_mean) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn exact_tracking_gives_pure_regularization_gradient() {
        let mesh = TriangleMesh::criss_cross_unit_square(4).unwrap();
        let coeff = AffineCoefficient::sine_modes_16();
        let disc = Discretization::new(&mesh, &coeff).unwrap();
        // with a single point, the state itself is an attainable target
        let single = LatticeRule::construct(SpodWeights::new(3, 2, 1.0, vec![0.01; 16]), 0).unwrap();
        let y0 = single.points(0).unwrap();
        let f = vec![3.0; mesh.num_vertices()];
        let u = disc.solve_state(y0.point(0), &Source::nodal(f.clone())).unwrap();
        let mut s = ControlSettings::fixture();
        s.u_hat = Source::nodal(u.values.clone());
        let p = ControlProblem::new(&mesh, &coeff, s, &y0, Execution::Sequential).unwrap();
        let e = p.objective_and_gradient(&f).unwrap();
        assert!(e.phi[0].abs() < 1e-20);
        for (g, f) in e.gradient.iter().zip(&f) {
            assert!((g - 0.1 * f).abs() < 1e-12);
        }
    }

    #[test]
    fn log_zeta_forms_match_direct_formulas() {
        let s = ControlSettings { c_star: 1.5, ..ControlSettings::fixture() };
        let (eta, dist, q_norm, eta_dual, phi) = (3e-3, 0.4, 0.9, 2e-3, 0.8_f64);
        let chi = ocp_chi(&s, eta, dist);
        assert!((chi - 1.5 * (0.5 * eta * eta + dist * eta)).abs() < 1e-16);
        let theta = phi.exp();
        let zeta = theta * chi.exp_m1();
        let zp = zeta * q_norm + 2.0 * 1.5 * 1.5 * theta * chi.exp() * eta_dual;
        let got = ocp_log_zeta_prime(&s, phi, chi, q_norm, eta_dual).exp();
        assert!((got - zp).abs() < 1e-13 * zp);
        assert_eq!(ocp_log_zeta_prime(&s, phi, 0.0, q_norm, 0.0), f64::NEG_INFINITY);
        assert_eq!(control_error_bound(0.0, 0.1), 0.0);
        assert_eq!(control_error_bound(1.0, 0.2), 2.0 * control_error_bound(1.0, 0.4));
    }
}
