use std::io::Write;
use std::path::Path;

use super::quadrature::{map_point, LINE, TRIANGLE};
use super::{Discretization, FieldSolution, Source};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::par::pairwise_sum;

/// Weighted residual contributions of one estimator evaluation.
///
/// `total^2 = sum(volume) + sum(jump) + extra`. Each interior edge appears
/// once in `jump`; the element-wise `1/2` sharing only matters for
/// [`element_jumps`](Self::element_jumps).
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBreakdown {
    pub volume: Vec<f64>,
    pub jump: Vec<f64>,
    pub extra: f64,
    pub total: f64,
}

impl ResidualBreakdown {
    fn new(volume: Vec<f64>, jump: Vec<f64>, extra: f64) -> Self {
        let total = (pairwise_sum(&volume) + pairwise_sum(&jump) + extra).max(0.0).sqrt();
        Self { volume, jump, extra, total }
    }

    /// Per-element jump share: half of each adjacent interior edge term.
    pub fn element_jumps(&self, mesh: &TriangleMesh) -> Vec<f64> {
        mesh.triangle_edges().iter().map(|te| te.iter().map(|&e| 0.5 * self.jump[e]).sum()).collect()
    }

    /// CSV with columns `element,volume,jump`.
    pub fn write_csv(&self, mesh: &TriangleMesh, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "element,volume,jump")?;
        for (t, (v, j)) in self.volume.iter().zip(self.element_jumps(mesh)).enumerate() {
            writeln!(w, "{t},{v:e},{j:e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Unweighted squared residual norms: `||f + div(a grad v)||^2_T` per
/// element and `||[a grad v . n]||^2_e` per edge.
struct RawResidual {
    volume: Vec<f64>,
    jump: Vec<f64>,
}

impl Discretization<'_> {
    fn raw_residual(&self, v: &FieldSolution, f: &Source) -> Result<RawResidual> {
        self.check_field(v)?;
        f.check(self.mesh)?;
        if !self.coeff.has_gradient() {
            return Err(Error::MissingGradient);
        }
        let y = &v.y;
        self.coeff.check_parameter(y)?;
        let mesh = self.mesh;
        let grads: Vec<[f64; 2]> = (0..mesh.num_triangles()).map(|t| self.gradient(t, &v.values)).collect();
        let mut buf = self.coeff.buffer();

        let volume = mesh
            .triangles()
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let p = tri.map(|i| mesh.vertices()[i]);
                let g = grads[t];
                TRIANGLE
                    .iter()
                    .map(|&(bary, w)| {
                        let x = map_point(p, bary);
                        self.coeff.modes_at(x, true, &mut buf);
                        let ga = self.coeff.gradient_from(y, &buf);
                        let r = f.value(x, tri, bary) + ga[0] * g[0] + ga[1] * g[1];
                        w * r * r
                    })
                    .sum::<f64>()
                    * mesh.area(t)
            })
            .collect();

        let jump = mesh
            .edges()
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                let Some(right) = edge.right else { return 0.0 };
                let left = edge.left;
                let i = mesh.triangle_edges()[left].iter().position(|&k| k == e).expect("edge of its triangle");
                let n = mesh.outward_normal(left, i);
                let (gl, gr) = (grads[left], grads[right]);
                let jn = (gl[0] - gr[0]) * n[0] + (gl[1] - gr[1]) * n[1];
                if jn == 0.0 {
                    return 0.0;
                }
                let [a, b] = edge.vertices.map(|k| mesh.vertices()[k]);
                let a2: f64 = LINE
                    .iter()
                    .map(|&(s, w)| {
                        let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                        self.coeff.modes_at(x, false, &mut buf);
                        let av = self.coeff.value_from(y, &buf);
                        w * av * av
                    })
                    .sum();
                jn * jn * mesh.h_e(e) * a2
            })
            .collect();
        Ok(RawResidual { volume, jump })
    }

    /// Applies `h_T^(2 k)` to volume and `h_e^(2 k - 1)` to jump terms.
    fn weighted(&self, raw: RawResidual, k: i32, extra: f64) -> ResidualBreakdown {
        let volume = raw.volume.iter().zip(self.mesh.areas()).map(|(r, a)| r * a.powi(k)).collect();
        let jump = raw.jump.iter().enumerate().map(|(e, r)| r * self.mesh.h_e(e).powi(2 * k - 1)).collect();
        ResidualBreakdown::new(volume, jump, extra)
    }

    fn require_convex(&self) -> Result<()> {
        if self.mesh.is_convex() {
            Ok(())
        } else {
            Err(Error::UnsupportedDomain)
        }
    }

    /// Energy-norm residual estimator `eta_{y,h}` for the state `u` with
    /// right-hand side `f`.
    pub fn eta_h1(&self, u: &FieldSolution, f: &Source) -> Result<ResidualBreakdown> {
        Ok(self.weighted(self.raw_residual(u, f)?, 1, 0.0))
    }

    /// L2 residual estimator: weights `h_T^4`, `h_e^3`. Convex domains only.
    pub fn eta_l2(&self, u: &FieldSolution, f: &Source) -> Result<ResidualBreakdown> {
        self.require_convex()?;
        Ok(self.weighted(self.raw_residual(u, f)?, 2, 0.0))
    }

    /// Dual L2 estimator for the adjoint `q` (which already carries the
    /// factor `alpha1`), plus `max_T h_T^4 * eta_l2_state^2` for the state
    /// error entering the adjoint right-hand side.
    pub fn eta_l2_dual(
        &self,
        q: &FieldSolution,
        u: &FieldSolution,
        u_hat: &Source,
        alpha1: f64,
        eta_l2_state: f64,
    ) -> Result<ResidualBreakdown> {
        self.require_convex()?;
        self.check_field(q)?;
        if q.y != u.y {
            return Err(Error::MeshMismatch);
        }
        let rhs = self.adjoint_source(u, u_hat, alpha1)?;
        let h4 = self.mesh.areas().iter().fold(0.0_f64, |m, &a| m.max(a * a));
        Ok(self.weighted(self.raw_residual(q, &rhs)?, 2, h4 * eta_l2_state * eta_l2_state))
    }
}
