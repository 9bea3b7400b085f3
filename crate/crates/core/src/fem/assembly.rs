use crate::error::{Error, Result};
use crate::mesh::{signed_area2, Mesh, Point, RefinementRecord};

use super::quadrature::QuadratureRule;
use super::sparse::CsrMatrix;

/// Elements with area below this are rejected by the assembly routines.
pub const MIN_ELEMENT_AREA: f64 = 1e-14;

/// Numbering of the degrees of freedom of a mesh generation.
#[derive(Clone, Debug)]
pub struct DofMap {
    generation: u64,
    vertex_to_dof: Vec<Option<usize>>,
    dof_to_vertex: Vec<usize>,
}

impl DofMap {
    /// Interior vertices only (homogeneous Dirichlet data eliminated).
    pub fn free(mesh: &Mesh) -> Self {
        Self::build(mesh, |v| !mesh.is_boundary(v))
    }

    /// Every vertex, for the full pre-elimination operators.
    pub fn all(mesh: &Mesh) -> Self {
        Self::build(mesh, |_| true)
    }

    fn build(mesh: &Mesh, keep: impl Fn(usize) -> bool) -> Self {
        let mut vertex_to_dof = vec![None; mesh.num_vertices()];
        let mut dof_to_vertex = Vec::new();
        for (v, slot) in vertex_to_dof.iter_mut().enumerate() {
            if keep(v) {
                *slot = Some(dof_to_vertex.len());
                dof_to_vertex.push(v);
            }
        }
        DofMap {
            generation: mesh.generation(),
            vertex_to_dof,
            dof_to_vertex,
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.dof_to_vertex.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_vertex.is_empty()
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.vertex_to_dof[vertex]
    }

    pub fn vertex(&self, dof: usize) -> usize {
        self.dof_to_vertex[dof]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_to_dof.len()
    }

    /// Vertex values of a coefficient vector; eliminated vertices get 0.
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vertex_to_dof.len()];
        for (d, &v) in self.dof_to_vertex.iter().enumerate() {
            out[v] = coeffs[d];
        }
        out
    }

    pub fn restrict(&self, vertex_values: &[f64]) -> Vec<f64> {
        self.dof_to_vertex.iter().map(|&v| vertex_values[v]).collect()
    }
}

/// Coefficients of a P1 function over the free dofs of one mesh generation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    pub generation: u64,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(dofs: &DofMap) -> Self {
        FeFunction {
            generation: dofs.generation(),
            coeffs: vec![0.0; dofs.len()],
        }
    }

    pub fn from_coeffs(dofs: &DofMap, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != dofs.len() {
            return Err(Error::DimensionMismatch { expected: dofs.len(), found: coeffs.len() });
        }
        Ok(FeFunction {
            generation: dofs.generation(),
            coeffs,
        })
    }

    /// Nodal interpolant of `g` on the free vertices.
    pub fn interpolate(mesh: &Mesh, dofs: &DofMap, g: impl Fn(Point) -> f64) -> Self {
        let coeffs = (0..dofs.len()).map(|d| g(mesh.vertices()[dofs.vertex(d)])).collect();
        FeFunction {
            generation: dofs.generation(),
            coeffs,
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// A mesh together with its dof numbering and the assembled P1 stiffness and
/// mass matrices on the free dofs.
#[derive(Clone, Debug)]
pub struct FeSpace {
    pub mesh: Mesh,
    pub dofs: DofMap,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
}

impl FeSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let dofs = DofMap::free(&mesh);
        let stiffness = assemble_stiffness(&mesh, &dofs)?;
        let mass = assemble_mass(&mesh, &dofs)?;
        Ok(FeSpace {
            mesh,
            dofs,
            stiffness,
            mass,
        })
    }

    pub fn ndof(&self) -> usize {
        self.dofs.len()
    }

    pub fn generation(&self) -> u64 {
        self.mesh.generation()
    }

    pub fn check(&self, u: &FeFunction) -> Result<()> {
        if u.generation != self.generation() {
            return Err(Error::GenerationMismatch { expected: self.generation(), found: u.generation });
        }
        if u.len() != self.ndof() {
            return Err(Error::DimensionMismatch { expected: self.ndof(), found: u.len() });
        }
        Ok(())
    }

    pub fn vertex_values(&self, u: &FeFunction) -> Vec<f64> {
        self.dofs.expand(&u.coeffs)
    }

    /// `B_lambda = lambda A + M`
    pub fn b_lambda(&self, lambda: f64) -> CsrMatrix {
        b_lambda(&self.stiffness, &self.mass, lambda)
    }
}

/// Element stiffness matrix `int grad(phi_i) . grad(phi_j)`, for either
/// vertex orientation.
pub fn local_stiffness(p: &[Point; 3]) -> [[f64; 3]; 3] {
    let area2 = signed_area2(p[0], p[1], p[2]).abs();
    // grad(lambda_i) * area2 = (y_j - y_k, x_k - x_j) with (i, j, k) cyclic
    let g: [[f64; 2]; 3] = std::array::from_fn(|i| {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        [p[j][1] - p[k][1], p[k][0] - p[j][0]]
    });
    let scale = 1.0 / (2.0 * area2);
    std::array::from_fn(|i| std::array::from_fn(|j| scale * (g[i][0] * g[j][0] + g[i][1] * g[j][1])))
}

/// Element mass matrix `|T|/12 [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn local_mass(p: &[Point; 3]) -> [[f64; 3]; 3] {
    let area = 0.5 * signed_area2(p[0], p[1], p[2]).abs();
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { area / 6.0 } else { area / 12.0 }))
}

fn assemble_local(
    mesh: &Mesh,
    dofs: &DofMap,
    local: impl Fn(&[Point; 3]) -> [[f64; 3]; 3],
) -> Result<CsrMatrix> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.element_points(t);
        let area = 0.5 * signed_area2(p[0], p[1], p[2]);
        if area < MIN_ELEMENT_AREA {
            return Err(Error::DegenerateElement { element: t, area });
        }
        let k = local(&p);
        for a in 0..3 {
            let Some(i) = dofs.dof(tri[a]) else { continue };
            for b in 0..3 {
                if let Some(j) = dofs.dof(tri[b]) {
                    triplets.push((i, j, k[a][b]));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(dofs.len(), triplets))
}

pub fn assemble_stiffness(mesh: &Mesh, dofs: &DofMap) -> Result<CsrMatrix> {
    assemble_local(mesh, dofs, local_stiffness)
}

pub fn assemble_mass(mesh: &Mesh, dofs: &DofMap) -> Result<CsrMatrix> {
    assemble_local(mesh, dofs, local_mass)
}

pub fn b_lambda(stiffness: &CsrMatrix, mass: &CsrMatrix, lambda: f64) -> CsrMatrix {
    assert!(lambda > 0.0, "lambda must be positive");
    stiffness.linear_combination(lambda, mass, 1.0)
}

/// `sqrt(lambda u^T A u + u^T M u)`
pub fn norm_lambda(u: &[f64], stiffness: &CsrMatrix, mass: &CsrMatrix, lambda: f64) -> f64 {
    (lambda * stiffness.quad_form(u) + mass.quad_form(u)).max(0.0).sqrt()
}

/// Load vector with entries `int g(x, u_h(x)) phi_i dx` over the dofs in
/// `dofs`, where `u_h` is given by its vertex values.
pub fn assemble_weighted_load(
    mesh: &Mesh,
    dofs: &DofMap,
    g: impl Fn(Point, f64) -> f64,
    vertex_values: &[f64],
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    let mut load = vec![0.0; dofs.len()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.element_points(t);
        let area = 0.5 * signed_area2(p[0], p[1], p[2]);
        let u = [vertex_values[tri[0]], vertex_values[tri[1]], vertex_values[tri[2]]];
        let mut local = [0.0; 3];
        for (x, b, w) in quad.map(&p) {
            let uq = b[0] * u[0] + b[1] * u[1] + b[2] * u[2];
            let gq = g(x, uq);
            if !gq.is_finite() {
                return Err(Error::NonFinite { value: gq, x: x[0], y: x[1] });
            }
            for a in 0..3 {
                local[a] += w * gq * b[a];
            }
        }
        for a in 0..3 {
            if let Some(i) = dofs.dof(tri[a]) {
                load[i] += area * local[a];
            }
        }
    }
    Ok(load)
}

/// Canonical embedding of a P1 function into a bisection refinement.
///
/// New vertices take the average of their two parents, which reproduces the
/// parent function exactly. Boundary vertices stay at the (homogeneous)
/// Dirichlet value.
pub fn prolongate(
    u: &FeFunction,
    parent: &DofMap,
    child: &DofMap,
    rec: &RefinementRecord,
) -> Result<FeFunction> {
    if u.generation != rec.parent_generation {
        return Err(Error::GenerationMismatch { expected: rec.parent_generation, found: u.generation });
    }
    if parent.generation() != rec.parent_generation {
        return Err(Error::GenerationMismatch { expected: rec.parent_generation, found: parent.generation() });
    }
    if child.generation() != rec.child_generation {
        return Err(Error::GenerationMismatch { expected: rec.child_generation, found: child.generation() });
    }
    let mut values = parent.expand(&u.coeffs);
    values.resize(child.num_vertices(), 0.0);
    for &(v, [a, b]) in &rec.new_vertex_parents {
        values[v] = 0.5 * (values[a] + values[b]);
    }
    // boundary vertices are not free in the child numbering
    Ok(FeFunction {
        generation: rec.child_generation,
        coeffs: child.restrict(&values),
    })
}
