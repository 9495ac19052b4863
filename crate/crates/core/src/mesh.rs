//! Conforming triangle meshes with uniform red refinement.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// An edge of the triangulation. Interior edges have two adjacent triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    /// Endpoints with `vertices[0] < vertices[1]`.
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: Option<usize>,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.right.is_some()
    }
}

/// Parent information recorded by [`TriangleMesh::refine_uniform`]: vertex
/// `coarse_vertices + e` is the midpoint of coarse edge `e`.
#[derive(Clone, Debug)]
struct Refinement {
    coarse_vertices: usize,
    edge_parents: Vec<[usize; 2]>,
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    id: u64,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    // local edge i joins local vertices i and (i + 1) % 3
    triangle_edges: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    areas: Vec<f64>,
    gradients: Vec<[[f64; 2]; 3]>,
    level: usize,
    convex: bool,
    shape_constant: f64,
    refinement: Option<Refinement>,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

impl TriangleMesh {
    /// Builds a mesh from raw vertex and triangle lists. Clockwise triangles
    /// are reoriented; degenerate ones are rejected. Every vertex on a
    /// boundary edge is marked Dirichlet.
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::build(vertices, triangles, 0, None, None)
    }

    fn build(
        vertices: Vec<[f64; 2]>,
        mut triangles: Vec<[usize; 3]>,
        level: usize,
        convex: Option<bool>,
        refinement: Option<Refinement>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        for (index, t) in triangles.iter_mut().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {index} references a missing vertex")));
            }
            let mut area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if area < 0.0 {
                t.swap(1, 2);
                area = -area;
            }
            if area <= 0.0 {
                return Err(Error::DegenerateTriangle { index, area });
            }
            areas.push(area);
        }

        let mut half: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(3 * triangles.len());
        for (ti, t) in triangles.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                half.push((a.min(b), a.max(b), ti, i));
            }
        }
        half.sort_unstable();
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = vec![[usize::MAX; 3]; triangles.len()];
        let mut k = 0;
        while k < half.len() {
            let (a, b, t0, l0) = half[k];
            let e = edges.len();
            triangle_edges[t0][l0] = e;
            let mut right = None;
            if k + 1 < half.len() && half[k + 1].0 == a && half[k + 1].1 == b {
                let (_, _, t1, l1) = half[k + 1];
                if k + 2 < half.len() && half[k + 2].0 == a && half[k + 2].1 == b {
                    return Err(Error::InvalidMesh(format!("edge ({a}, {b}) shared by more than two triangles")));
                }
                triangle_edges[t1][l1] = e;
                right = Some(t1);
                k += 2;
            } else {
                k += 1;
            }
            edges.push(Edge { vertices: [a, b], left: t0, right });
        }

        let mut boundary = vec![false; nv];
        for e in edges.iter().filter(|e| !e.is_interior()) {
            boundary[e.vertices[0]] = true;
            boundary[e.vertices[1]] = true;
        }

        let gradients = triangles
            .iter()
            .zip(&areas)
            .map(|(t, &area)| {
                let p = t.map(|v| vertices[v]);
                let mut g = [[0.0; 2]; 3];
                for i in 0..3 {
                    let (q, r) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                    g[i] = [(q[1] - r[1]) / (2.0 * area), (r[0] - q[0]) / (2.0 * area)];
                }
                g
            })
            .collect();

        let shape_constant = triangles
            .iter()
            .zip(&areas)
            .map(|(t, &area)| {
                let p = t.map(|v| vertices[v]);
                let longest = (0..3).map(|i| dist(p[i], p[(i + 1) % 3])).fold(0.0, f64::max);
                longest * longest / area
            })
            .fold(0.0, f64::max);

        let mut mesh = TriangleMesh {
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
            vertices,
            triangles,
            edges,
            triangle_edges,
            boundary,
            areas,
            gradients,
            level,
            convex: false,
            shape_constant,
            refinement,
        };
        mesh.convex = match convex {
            Some(c) => c,
            None => mesh.boundary_is_convex(),
        };
        Ok(mesh)
    }

    /// Structured mesh of (0,1)^2 with `n` squares per side, each split along
    /// its (0,0)-(1,1) diagonal: (n+1)^2 vertices, 2n^2 triangles.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMesh("subdivision count must be positive".into()));
        }
        let h = 1.0 / n as f64;
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Self::build(vertices, triangles, 0, Some(true), None)
    }

    /// Criss-cross mesh of (0,1)^2: each of the n^2 squares is split into four
    /// triangles through its center. (n+1)^2 + n^2 vertices, 4n^2 triangles;
    /// `n = 4` gives the 41-vertex coarse mesh used by the default BIP setup.
    pub fn criss_cross_unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMesh("subdivision count must be positive".into()));
        }
        let h = 1.0 / n as f64;
        let corner = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + n * n);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let first_center = vertices.len();
        for j in 0..n {
            for i in 0..n {
                vertices.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            }
        }
        let mut triangles = Vec::with_capacity(4 * n * n);
        for j in 0..n {
            for i in 0..n {
                let m = first_center + j * n + i;
                let (a, b, c, d) = (corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1));
                triangles.push([a, b, m]);
                triangles.push([b, c, m]);
                triangles.push([c, d, m]);
                triangles.push([d, a, m]);
            }
        }
        Self::build(vertices, triangles, 0, Some(true), None)
    }

    /// Red refinement: every triangle is split into four congruent children
    /// by joining its edge midpoints.
    pub fn refine_uniform(&self) -> TriangleMesh {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.reserve(self.edges.len());
        let mut edge_parents = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let [a, b] = e.vertices;
            let (p, q) = (self.vertices[a], self.vertices[b]);
            vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            edge_parents.push([a, b]);
        }
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, te) in self.triangles.iter().zip(&self.triangle_edges) {
            let [a, b, c] = *t;
            let (m0, m1, m2) = (nv + te[0], nv + te[1], nv + te[2]);
            triangles.push([a, m0, m2]);
            triangles.push([m0, b, m1]);
            triangles.push([m2, m1, c]);
            triangles.push([m0, m1, m2]);
        }
        let refinement = Refinement { coarse_vertices: nv, edge_parents };
        Self::build(vertices, triangles, self.level + 1, Some(self.convex), Some(refinement))
            .expect("red refinement of a valid mesh is valid")
    }

    /// Applies [`refine_uniform`](Self::refine_uniform) `times` times.
    pub fn refined(&self, times: usize) -> TriangleMesh {
        let mut mesh = self.clone();
        for _ in 0..times {
            mesh = mesh.refine_uniform();
        }
        mesh
    }

    /// Interpolates a P1 field from the parent mesh onto this (refined) mesh.
    /// The coarse space is nested in the fine one, so this is exact.
    pub fn prolongate(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        let r = self
            .refinement
            .as_ref()
            .ok_or_else(|| Error::InvalidMesh("mesh has no refinement history".into()))?;
        if coarse.len() != r.coarse_vertices {
            return Err(Error::CountMismatch { expected: r.coarse_vertices, got: coarse.len() });
        }
        let mut fine = Vec::with_capacity(self.vertices.len());
        fine.extend_from_slice(coarse);
        fine.extend(r.edge_parents.iter().map(|&[a, b]| 0.5 * (coarse[a] + coarse[b])));
        Ok(fine)
    }

    fn boundary_is_convex(&self) -> bool {
        let bverts: Vec<usize> = (0..self.vertices.len()).filter(|&v| self.boundary[v]).collect();
        let scale = self.h_max().max(1e-300);
        for e in self.edges.iter().filter(|e| !e.is_interior()) {
            // orient the edge as in its triangle, so the domain is on the left
            let t = &self.triangles[e.left];
            let i = t.iter().position(|&v| v == e.vertices[0]).unwrap();
            let (p, q) = if t[(i + 1) % 3] == e.vertices[1] {
                (e.vertices[0], e.vertices[1])
            } else {
                (e.vertices[1], e.vertices[0])
            };
            let (p, q) = (self.vertices[p], self.vertices[q]);
            for &v in &bverts {
                if signed_area(p, q, self.vertices[v]) < -1e-12 * scale * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Unique identifier; solutions remember the id of the mesh they live on.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.is_interior())
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Number of vertices not on the Dirichlet boundary.
    pub fn num_free(&self) -> usize {
        self.boundary.iter().filter(|&&b| !b).count()
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// `h_T = |T|^{1/2}`.
    pub fn h_t(&self, t: usize) -> f64 {
        self.areas[t].sqrt()
    }

    pub fn h_e(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        dist(self.vertices[a], self.vertices[b])
    }

    /// `h = max_T |T|^{1/2}`.
    pub fn h_max(&self) -> f64 {
        self.areas.iter().fold(0.0_f64, |m, &a| m.max(a)).sqrt()
    }

    /// Gradients of the three barycentric (hat) functions on triangle `t`.
    pub fn hat_gradients(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.gradients[t]
    }

    /// Max over triangles of (longest edge)^2 / area.
    pub fn shape_constant(&self) -> f64 {
        self.shape_constant
    }

    pub fn min_angle(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let p = t.map(|v| self.vertices[v]);
                (0..3)
                    .map(|i| {
                        let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
                        let u = [b[0] - a[0], b[1] - a[1]];
                        let w = [c[0] - a[0], c[1] - a[1]];
                        let cos = (u[0] * w[0] + u[1] * w[1]) / (u[0].hypot(u[1]) * w[0].hypot(w[1]));
                        cos.clamp(-1.0, 1.0).acos()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Outward unit normal of local edge `i` of triangle `t`.
    pub fn outward_normal(&self, t: usize, i: usize) -> [f64; 2] {
        let tri = &self.triangles[t];
        let (p, q) = (self.vertices[tri[i]], self.vertices[tri[(i + 1) % 3]]);
        let len = dist(p, q);
        [(q[1] - p[1]) / len, (p[0] - q[0]) / len]
    }

    /// Writes `vertices.csv` (x,y,boundary) and `triangles.csv` (v0,v1,v2).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("vertices.csv"))?);
        writeln!(w, "x,y,boundary")?;
        for (p, &b) in self.vertices.iter().zip(&self.boundary) {
            writeln!(w, "{},{},{}", p[0], p[1], u8::from(b))?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("triangles.csv"))?);
        writeln!(w, "v0,v1,v2")?;
        for t in &self.triangles {
            writeln!(w, "{},{},{}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}
