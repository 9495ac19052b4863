//! P1 Galerkin discretization of `-div(a(., y) grad u) = f` with homogeneous
//! Dirichlet data, sparse Cholesky solves, and residual error estimators.

mod estimate;
pub mod quadrature;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{Pair, SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, Side};
use serde::Deserialize;

use crate::coefficient::AffineCoefficient;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use quadrature::{map_point, TRIANGLE};

pub use estimate::ResidualBreakdown;

/// Relative residual demanded from every linear solve.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

const NONE: usize = usize::MAX;

/// Local stiffness pairs, diagonal first.
const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Closed-form spatial profiles on the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `sin(pi x1) sin(pi x2)`
    SinSin,
    /// `x1 x2 (1 - x1) (1 - x2)`
    Bubble,
}

impl Profile {
    pub fn value(self, x: [f64; 2]) -> f64 {
        match self {
            Profile::SinSin => (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin(),
            Profile::Bubble => x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1]),
        }
    }

    pub fn gradient(self, x: [f64; 2]) -> [f64; 2] {
        use std::f64::consts::PI;
        match self {
            Profile::SinSin => {
                let (s1, c1) = (PI * x[0]).sin_cos();
                let (s2, c2) = (PI * x[1]).sin_cos();
                [PI * c1 * s2, PI * s1 * c2]
            }
            Profile::Bubble => [
                (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]),
                x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]),
            ],
        }
    }
}

/// A right-hand side: constant plus scaled profiles plus an optional P1
/// nodal field (one value per mesh vertex).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Source {
    pub constant: f64,
    pub profiles: Vec<(f64, Profile)>,
    pub nodal: Option<Vec<f64>>,
}

impl Source {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Self::default() }
    }

    pub fn profile(scale: f64, p: Profile) -> Self {
        Self { profiles: vec![(scale, p)], ..Self::default() }
    }

    pub fn nodal(values: Vec<f64>) -> Self {
        Self { nodal: Some(values), ..Self::default() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            constant: s * self.constant,
            profiles: self.profiles.iter().map(|&(c, p)| (s * c, p)).collect(),
            nodal: self.nodal.as_ref().map(|v| v.iter().map(|x| s * x).collect()),
        }
    }

    /// `self + other`.
    pub fn plus(&self, other: &Source) -> Result<Self> {
        let nodal = match (&self.nodal, &other.nodal) {
            (Some(a), Some(b)) => {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
                }
                Some(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            (a, b) => a.clone().or_else(|| b.clone()),
        };
        let mut profiles = self.profiles.clone();
        profiles.extend(other.profiles.iter().copied());
        Ok(Self { constant: self.constant + other.constant, profiles, nodal })
    }

    fn analytic(&self, x: [f64; 2]) -> f64 {
        self.constant + self.profiles.iter().map(|&(c, p)| c * p.value(x)).sum::<f64>()
    }

    /// Value at the point with barycentric coordinates `bary` in triangle `tri`.
    fn value(&self, x: [f64; 2], tri: &[usize; 3], bary: [f64; 3]) -> f64 {
        let nodal = self.nodal.as_ref().map_or(0.0, |v| (0..3).map(|i| bary[i] * v[tri[i]]).sum());
        self.analytic(x) + nodal
    }

    fn check(&self, mesh: &TriangleMesh) -> Result<()> {
        match &self.nodal {
            Some(v) if v.len() != mesh.num_vertices() => {
                Err(Error::DimensionMismatch { expected: mesh.num_vertices(), got: v.len() })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    State,
    Adjoint,
}

/// Nodal values of a discrete state or adjoint (zero on Dirichlet vertices).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSolution {
    pub mesh_id: u64,
    pub values: Vec<f64>,
    pub y: Vec<f64>,
    pub role: Role,
}

/// A factorized stiffness matrix for one parameter `y`.
pub struct Factor {
    y: Vec<f64>,
    element_coeff: Vec<f64>,
    llt: Option<Llt<usize, f64>>,
}

impl Factor {
    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

/// P1 space on a mesh together with the parameter-independent assembly data.
pub struct Discretization<'a> {
    mesh: &'a TriangleMesh,
    coeff: &'a AffineCoefficient,
    free_index: Vec<usize>,
    free_vertices: Vec<usize>,
    /// `int_T psi_j`, row-major `[triangle][mode]`.
    mode_integrals: Vec<f64>,
    /// `g_a . g_b` for the six local pairs.
    local: Vec<[f64; 6]>,
    /// Position of each local pair in the lower-triangular CSC values.
    positions: Vec<[usize; 6]>,
    pattern: SymbolicSparseColMat<usize>,
    symbolic: Option<SymbolicLlt<usize>>,
}

impl<'a> Discretization<'a> {
    pub fn new(mesh: &'a TriangleMesh, coeff: &'a AffineCoefficient) -> Result<Self> {
        let nv = mesh.num_vertices();
        let mut free_index = vec![NONE; nv];
        let mut free_vertices = Vec::with_capacity(mesh.num_free());
        for v in (0..nv).filter(|&v| !mesh.is_boundary(v)) {
            free_index[v] = free_vertices.len();
            free_vertices.push(v);
        }
        let n = free_vertices.len();

        let s = coeff.dim();
        let mut buf = coeff.buffer();
        let mut mode_integrals = vec![0.0; mesh.num_triangles() * s];
        let mut local = Vec::with_capacity(mesh.num_triangles());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let p = tri.map(|v| mesh.vertices()[v]);
            let area = mesh.area(t);
            let row = &mut mode_integrals[t * s..(t + 1) * s];
            for &(bary, w) in &TRIANGLE {
                coeff.modes_at(map_point(p, bary), false, &mut buf);
                row.iter_mut().zip(&buf.values).for_each(|(r, v)| *r += area * w * v);
            }
            let g = mesh.hat_gradients(t);
            local.push(PAIRS.map(|(a, b)| g[a][0] * g[b][0] + g[a][1] * g[b][1]));
        }

        let mut entries = Vec::new();
        for tri in mesh.triangles() {
            for &(a, b) in &PAIRS {
                let (fa, fb) = (free_index[tri[a]], free_index[tri[b]]);
                if fa != NONE && fb != NONE {
                    entries.push(Pair::new(fa.max(fb), fa.min(fb)));
                }
            }
        }
        let (pattern, _) = SymbolicSparseColMat::try_new_from_indices(n, n, &entries)
            .map_err(|e| Error::InvalidMesh(format!("sparsity pattern: {e:?}")))?;
        let col_ptr = pattern.col_ptr();
        let row_idx = pattern.row_idx();
        let positions = mesh
            .triangles()
            .iter()
            .map(|tri| {
                PAIRS.map(|(a, b)| {
                    let (fa, fb) = (free_index[tri[a]], free_index[tri[b]]);
                    if fa == NONE || fb == NONE {
                        return NONE;
                    }
                    let (row, col) = (fa.max(fb), fa.min(fb));
                    let start = col_ptr[col];
                    start + row_idx[start..col_ptr[col + 1]].binary_search(&row).expect("entry in pattern")
                })
            })
            .collect();
        let symbolic = if n > 0 {
            Some(SymbolicLlt::try_new(pattern.as_ref(), Side::Lower).map_err(|_| Error::NotPositiveDefinite)?)
        } else {
            None
        };
        Ok(Self { mesh, coeff, free_index, free_vertices, mode_integrals, local, positions, pattern, symbolic })
    }

    pub fn mesh(&self) -> &'a TriangleMesh {
        self.mesh
    }

    pub fn coefficient(&self) -> &'a AffineCoefficient {
        self.coeff
    }

    /// Number of free (non-Dirichlet) degrees of freedom.
    pub fn num_free(&self) -> usize {
        self.free_vertices.len()
    }

    /// `int_T a(., y)` for every triangle.
    pub fn element_coefficients(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.coeff.check_parameter(y)?;
        let s = self.coeff.dim();
        let psi0 = self.coeff.psi0();
        Ok(self
            .mesh
            .areas()
            .iter()
            .enumerate()
            .map(|(t, area)| {
                psi0 * area + self.mode_integrals[t * s..(t + 1) * s].iter().zip(y).map(|(i, y)| i * y).sum::<f64>()
            })
            .collect())
    }

    /// Lower triangle of the free-dof stiffness matrix, in CSC value order.
    fn stiffness_values(&self, element_coeff: &[f64]) -> Vec<f64> {
        let mut vals = vec![0.0; self.pattern.row_idx().len()];
        for ((k, local), pos) in element_coeff.iter().zip(&self.local).zip(&self.positions) {
            for (l, &p) in local.iter().zip(pos) {
                if p != NONE {
                    vals[p] += k * l;
                }
            }
        }
        vals
    }

    /// Dense symmetric free-dof stiffness matrix (small meshes, for checks).
    pub fn dense_stiffness(&self, y: &[f64]) -> Result<Mat<f64>> {
        let vals = self.stiffness_values(&self.element_coefficients(y)?);
        let lower = SparseColMatRef::new(self.pattern.as_ref(), &vals).to_dense();
        let n = self.num_free();
        Ok(Mat::from_fn(n, n, |i, j| if i >= j { lower[(i, j)] } else { lower[(j, i)] }))
    }

    /// Assembles and factorizes the stiffness matrix at `y`.
    pub fn factor(&self, y: &[f64]) -> Result<Factor> {
        let element_coeff = self.element_coefficients(y)?;
        let llt = match &self.symbolic {
            Some(sym) => {
                let vals = self.stiffness_values(&element_coeff);
                let a = SparseColMatRef::new(self.pattern.as_ref(), &vals);
                Some(Llt::try_new_with_symbolic(sym.clone(), a, Side::Lower).map_err(|_| Error::NotPositiveDefinite)?)
            }
            None => None,
        };
        Ok(Factor { y: y.to_vec(), element_coeff, llt })
    }

    /// Load vector on the free dofs.
    pub fn load(&self, f: &Source) -> Result<Vec<f64>> {
        f.check(self.mesh)?;
        let mut b = vec![0.0; self.num_free()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            if tri.iter().all(|&v| self.free_index[v] == NONE) {
                continue;
            }
            let p = tri.map(|v| self.mesh.vertices()[v]);
            let area = self.mesh.area(t);
            let mut local = [0.0; 3];
            if f.constant != 0.0 || !f.profiles.is_empty() {
                for &(bary, w) in &TRIANGLE {
                    let fx = f.analytic(map_point(p, bary));
                    (0..3).for_each(|a| local[a] += area * w * fx * bary[a]);
                }
            }
            if let Some(v) = &f.nodal {
                let sum = v[tri[0]] + v[tri[1]] + v[tri[2]];
                (0..3).for_each(|a| local[a] += area / 12.0 * (sum + v[tri[a]]));
            }
            for (a, &v) in tri.iter().enumerate() {
                if let Some(i) = self.free(v) {
                    b[i] += local[a];
                }
            }
        }
        Ok(b)
    }

    fn free(&self, v: usize) -> Option<usize> {
        let i = self.free_index[v];
        (i != NONE).then_some(i)
    }

    /// Free-dof residual `b - A x`, computed elementwise.
    fn residual(&self, factor: &Factor, b: &[f64], x: &[f64]) -> Vec<f64> {
        let mut r = b.to_vec();
        for ((tri, k), local) in self.mesh.triangles().iter().zip(&factor.element_coeff).zip(&self.local) {
            let xs = tri.map(|v| self.free(v).map_or(0.0, |i| x[i]));
            for (&p, &(a, c)) in local.iter().zip(&PAIRS) {
                let kl = k * p;
                if let Some(i) = self.free(tri[a]) {
                    r[i] -= kl * xs[c];
                }
                if a != c {
                    if let Some(i) = self.free(tri[c]) {
                        r[i] -= kl * xs[a];
                    }
                }
            }
        }
        r
    }

    fn back_substitute(llt: &Llt<usize, f64>, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = llt.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves with an existing factorization; one step of iterative
    /// refinement is attempted before giving up on accuracy.
    pub fn solve_with(&self, factor: &Factor, f: &Source, role: Role) -> Result<FieldSolution> {
        let b = self.load(f)?;
        let mut x = vec![0.0; b.len()];
        if let Some(llt) = &factor.llt {
            let norm_b = norm(&b);
            if norm_b > 0.0 {
                x = Self::back_substitute(llt, &b);
                let mut r = self.residual(factor, &b, &x);
                if norm(&r) > SOLVER_TOLERANCE * norm_b {
                    let dx = Self::back_substitute(llt, &r);
                    x.iter_mut().zip(dx).for_each(|(x, d)| *x += d);
                    r = self.residual(factor, &b, &x);
                    let rel = norm(&r) / norm_b;
                    if rel > SOLVER_TOLERANCE {
                        return Err(Error::SolverAccuracy(rel));
                    }
                }
            }
        }
        let mut values = vec![0.0; self.mesh.num_vertices()];
        for (&v, xi) in self.free_vertices.iter().zip(x) {
            values[v] = xi;
        }
        Ok(FieldSolution { mesh_id: self.mesh.id(), values, y: factor.y.clone(), role })
    }

    /// Discrete state `u_h(y)` for the right-hand side `f`.
    pub fn solve_state(&self, y: &[f64], f: &Source) -> Result<FieldSolution> {
        self.solve_with(&self.factor(y)?, f, Role::State)
    }

    /// Right-hand side `alpha1 (u_h - u_hat)` of the adjoint problem.
    pub fn adjoint_source(&self, u: &FieldSolution, u_hat: &Source, alpha1: f64) -> Result<Source> {
        self.check_field(u)?;
        Source::nodal(u.values.clone()).plus(&u_hat.scaled(-1.0)).map(|s| s.scaled(alpha1))
    }

    /// Discrete adjoint `q_h(y)` solving the state equation with right-hand
    /// side `alpha1 (u_h - u_hat)`.
    pub fn solve_adjoint(&self, u: &FieldSolution, u_hat: &Source, alpha1: f64) -> Result<FieldSolution> {
        let factor = self.factor(&u.y)?;
        self.solve_adjoint_with(&factor, u, u_hat, alpha1)
    }

    pub fn solve_adjoint_with(
        &self,
        factor: &Factor,
        u: &FieldSolution,
        u_hat: &Source,
        alpha1: f64,
    ) -> Result<FieldSolution> {
        self.solve_with(factor, &self.adjoint_source(u, u_hat, alpha1)?, Role::Adjoint)
    }

    pub(crate) fn check_field(&self, u: &FieldSolution) -> Result<()> {
        if u.mesh_id != self.mesh.id() || u.values.len() != self.mesh.num_vertices() {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }

    /// `v^T M w` with the P1 mass matrix over all vertices.
    pub fn l2_inner(&self, v: &[f64], w: &[f64]) -> f64 {
        self.mesh
            .triangles()
            .iter()
            .zip(self.mesh.areas())
            .map(|(tri, area)| {
                let (a, b) = (tri.map(|i| v[i]), tri.map(|i| w[i]));
                let sa: f64 = a.iter().sum();
                let sb: f64 = b.iter().sum();
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                area / 12.0 * (dot + sa * sb)
            })
            .sum()
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.l2_inner(v, v).max(0.0).sqrt()
    }

    /// `||grad v||_{L2}`, the norm of the state space.
    pub fn h1_seminorm(&self, v: &[f64]) -> f64 {
        (0..self.mesh.num_triangles())
            .map(|t| {
                let g = self.gradient(t, v);
                self.mesh.area(t) * (g[0] * g[0] + g[1] * g[1])
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Energy `int a(., y) |grad v|^2`.
    pub fn energy(&self, y: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self
            .element_coefficients(y)?
            .iter()
            .enumerate()
            .map(|(t, k)| {
                let g = self.gradient(t, v);
                k * (g[0] * g[0] + g[1] * g[1])
            })
            .sum())
    }

    /// Constant gradient of the P1 field `v` on triangle `t`.
    pub fn gradient(&self, t: usize, v: &[f64]) -> [f64; 2] {
        let tri = &self.mesh.triangles()[t];
        let g = self.mesh.hat_gradients(t);
        (0..3).fold([0.0, 0.0], |acc, a| [acc[0] + v[tri[a]] * g[a][0], acc[1] + v[tri[a]] * g[a][1]])
    }

    /// `||v - u||_{L2}` against a closed-form `u`.
    pub fn l2_error(&self, v: &[f64], u: impl Fn([f64; 2]) -> f64) -> f64 {
        self.mesh
            .triangles()
            .iter()
            .zip(self.mesh.areas())
            .map(|(tri, area)| {
                let p = tri.map(|i| self.mesh.vertices()[i]);
                TRIANGLE
                    .iter()
                    .map(|&(bary, w)| {
                        let vh: f64 = (0..3).map(|a| bary[a] * v[tri[a]]).sum();
                        let d = vh - u(map_point(p, bary));
                        area * w * d * d
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `||v - s||_{L2}` for a P1 field `v` and a source-like field `s`, with
    /// the same quadrature the load vector uses.
    pub fn l2_distance(&self, v: &[f64], s: &Source) -> Result<f64> {
        s.check(self.mesh)?;
        if v.len() != self.mesh.num_vertices() {
            return Err(Error::DimensionMismatch { expected: self.mesh.num_vertices(), got: v.len() });
        }
        let sum: f64 = self
            .mesh
            .triangles()
            .iter()
            .zip(self.mesh.areas())
            .map(|(tri, area)| {
                let p = tri.map(|i| self.mesh.vertices()[i]);
                TRIANGLE
                    .iter()
                    .map(|&(bary, w)| {
                        let vh: f64 = (0..3).map(|a| bary[a] * v[tri[a]]).sum();
                        let d = vh - s.value(map_point(p, bary), tri, bary);
                        area * w * d * d
                    })
                    .sum::<f64>()
            })
            .sum();
        Ok(sum.sqrt())
    }

    /// `||grad (v - u)||_{L2}` against a closed-form gradient.
    pub fn h1_error(&self, v: &[f64], grad_u: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
        (0..self.mesh.num_triangles())
            .map(|t| {
                let tri = &self.mesh.triangles()[t];
                let p = tri.map(|i| self.mesh.vertices()[i]);
                let g = self.gradient(t, v);
                TRIANGLE
                    .iter()
                    .map(|&(bary, w)| {
                        let gu = grad_u(map_point(p, bary));
                        let d = [g[0] - gu[0], g[1] - gu[1]];
                        self.mesh.area(t) * w * (d[0] * d[0] + d[1] * d[1])
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Integral of the P1 field `v` over the domain.
    pub fn integral(&self, v: &[f64]) -> f64 {
        self.mesh.triangles().iter().zip(self.mesh.areas()).map(|(tri, a)| a / 3.0 * tri.iter().map(|&i| v[i]).sum::<f64>()).sum()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
