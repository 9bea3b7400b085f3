//! Conforming triangle meshes with newest-vertex bisection.
//!
//! Every triangle is stored as a counter-clockwise vertex triple `[a, b, c]`
//! where the edge `(a, b)` is the refinement edge and `c` is the newest
//! vertex. Bisection splits `(a, b)` at its midpoint `m` and produces the
//! children `[c, a, m]` and `[b, c, m]`, so `m` becomes the newest vertex of
//! both children.

mod patch;
mod vtk;

use std::collections::{HashMap, HashSet, VecDeque};

use crate::error::{Error, Result};

pub use patch::{build_patch_subdivision, PatchSubdivision};
pub use vtk::write_vtk;

pub type Point = [f64; 2];

/// Relative tolerance (times the domain diameter) for boundary detection.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    /// `(0,1)^2`
    UnitSquare,
    /// `(0,2)^2 \ [1,2]x[0,1]`
    LShape,
    /// Simple polygon, vertices in counter-clockwise order.
    Polygon(Vec<Point>),
}

impl DomainSpec {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "unit_square" => Ok(DomainSpec::UnitSquare),
            "square_0_2_Lshape" | "lshape" => Ok(DomainSpec::LShape),
            other => Err(Error::UnsupportedDomain(other.to_string())),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            DomainSpec::UnitSquare => "unit_square",
            DomainSpec::LShape => "square_0_2_Lshape",
            DomainSpec::Polygon(_) => "polygon",
        }
    }

    /// Boundary polygon in counter-clockwise order.
    pub fn boundary(&self) -> Vec<Point> {
        match self {
            DomainSpec::UnitSquare => vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            DomainSpec::LShape => vec![
                [0.0, 0.0],
                [1.0, 0.0],
                [1.0, 1.0],
                [2.0, 1.0],
                [2.0, 2.0],
                [0.0, 2.0],
            ],
            DomainSpec::Polygon(p) => p.clone(),
        }
    }

    pub fn area(&self) -> f64 {
        let b = self.boundary();
        let n = b.len();
        0.5 * (0..n)
            .map(|i| {
                let p = b[i];
                let q = b[(i + 1) % n];
                p[0] * q[1] - q[0] * p[1]
            })
            .sum::<f64>()
    }

    pub fn diameter(&self) -> f64 {
        let b = self.boundary();
        let mut d: f64 = 0.0;
        for p in &b {
            for q in &b {
                d = d.max(dist(*p, *q));
            }
        }
        d
    }

    /// Euclidean distance from `p` to the boundary polygon.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        let b = self.boundary();
        let n = b.len();
        (0..n)
            .map(|i| segment_distance(p, b[i], b[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist(p: Point, q: Point) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Twice the signed area of the triangle `(a, b, c)`.
pub fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

pub fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    /// `neighbours[t][i]` is the element across edge `(t[i], t[(i+1)%3])`.
    neighbours: Vec<[Option<usize>; 3]>,
    generation: u64,
    domain: DomainSpec,
}

impl Mesh {
    /// Builds a mesh from raw data, computing boundary flags and face neighbours.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        domain: DomainSpec,
        generation: u64,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("element {t} references a missing vertex")));
            }
            let a2 = signed_area2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a2 <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "element {t} is not counter-clockwise (signed area {})",
                    0.5 * a2
                )));
            }
        }
        let tol = BOUNDARY_TOL * domain.diameter();
        let boundary_vertex = vertices
            .iter()
            .map(|&p| domain.distance_to_boundary(p) < tol)
            .collect();
        let neighbours = compute_neighbours(&triangles)?;
        Ok(Mesh {
            vertices,
            triangles,
            boundary_vertex,
            neighbours,
            generation,
            domain,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_vertex(&self) -> &[bool] {
        &self.boundary_vertex
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn neighbours(&self, t: usize) -> [Option<usize>; 3] {
        self.neighbours[t]
    }

    pub fn element_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_points(t);
        0.5 * signed_area2(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|t| self.area(t)).sum()
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.num_elements() {
            let p = self.element_points(t);
            for i in 0..3 {
                let a = p[i];
                let b = p[(i + 1) % 3];
                let c = p[(i + 2) % 3];
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (dist(a, b) * dist(a, c));
                min = min.min(cos.clamp(-1.0, 1.0).acos());
            }
        }
        min
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.element_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Number of elements incident to every undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(usize, usize), usize> {
        let mut map = HashMap::with_capacity(2 * self.triangles.len());
        for tri in &self.triangles {
            for i in 0..3 {
                *map.entry(edge_key(tri[i], tri[(i + 1) % 3])).or_insert(0) += 1;
            }
        }
        map
    }

    /// Checks conformity: interior edges are shared by exactly two elements and
    /// edges with a single element lie on the domain boundary.
    pub fn check_conformity(&self) -> Result<()> {
        let tol = BOUNDARY_TOL * self.domain.diameter();
        for ((a, b), count) in self.edge_incidence() {
            match count {
                2 => {}
                1 => {
                    let m = midpoint(self.vertices[a], self.vertices[b]);
                    if !(self.boundary_vertex[a]
                        && self.boundary_vertex[b]
                        && self.domain.distance_to_boundary(m) < tol)
                    {
                        return Err(Error::InvalidMesh(format!(
                            "edge ({a}, {b}) has one element but is not on the boundary"
                        )));
                    }
                }
                n => {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) is shared by {n} elements"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn compute_neighbours(triangles: &[[usize; 3]]) -> Result<Vec<[Option<usize>; 3]>> {
    let mut first: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(2 * triangles.len());
    let mut neighbours = vec![[None; 3]; triangles.len()];
    for (t, tri) in triangles.iter().enumerate() {
        for i in 0..3 {
            let key = edge_key(tri[i], tri[(i + 1) % 3]);
            match first.get(&key) {
                None => {
                    first.insert(key, (t, i));
                }
                Some(&(s, j)) => {
                    if neighbours[s][j].is_some() {
                        return Err(Error::InvalidMesh(format!(
                            "edge ({}, {}) is shared by more than two elements",
                            key.0, key.1
                        )));
                    }
                    neighbours[s][j] = Some(t);
                    neighbours[t][i] = Some(s);
                }
            }
        }
    }
    Ok(neighbours)
}

/// Orders a triangle counter-clockwise with its longest edge first; ties are
/// broken by the lexicographically smallest sorted endpoint pair.
fn orient_longest_edge(vertices: &[Point], tri: [usize; 3]) -> [usize; 3] {
    let [a, b, c] = tri;
    let ccw = if signed_area2(vertices[a], vertices[b], vertices[c]) > 0.0 {
        [a, b, c]
    } else {
        [b, a, c]
    };
    let mut best = 0;
    let mut best_len = -1.0;
    let mut best_key = (usize::MAX, usize::MAX);
    for i in 0..3 {
        let (p, q) = (ccw[i], ccw[(i + 1) % 3]);
        let len = dist(vertices[p], vertices[q]);
        let key = edge_key(p, q);
        if len > best_len || (len == best_len && key < best_key) {
            best = i;
            best_len = len;
            best_key = key;
        }
    }
    [ccw[best], ccw[(best + 1) % 3], ccw[(best + 2) % 3]]
}

/// Uniform initial triangulation with refinement edges on the longest edges.
///
/// Square-based domains use a uniform grid of spacing `1/n` with each cell
/// split along its bottom-left to top-right diagonal. Explicit polygons are
/// ear-clipped and then uniformly bisected `2 * ceil(log2 n)` times.
pub fn initial_mesh(domain: &DomainSpec, n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidParameter("subdivision count must be at least 1".into()));
    }
    match domain {
        DomainSpec::UnitSquare => grid_mesh(domain.clone(), n, n, |_, _| true),
        DomainSpec::LShape => grid_mesh(domain.clone(), 2 * n, 2 * n, |i, j| !(i >= n && j < n)),
        DomainSpec::Polygon(points) => {
            if points.len() < 3 {
                return Err(Error::UnsupportedDomain("polygon needs at least 3 vertices".into()));
            }
            if domain.area() <= 0.0 {
                return Err(Error::UnsupportedDomain(
                    "polygon must be counter-clockwise with positive area".into(),
                ));
            }
            let tris = ear_clip(points)?;
            let tris = tris
                .into_iter()
                .map(|t| orient_longest_edge(points, t))
                .collect();
            let mut mesh = Mesh::new(points.clone(), tris, domain.clone(), 0)?;
            let rounds = 2 * n.next_power_of_two().trailing_zeros();
            for _ in 0..rounds {
                let all: Vec<usize> = (0..mesh.num_elements()).collect();
                mesh = bisect(&mesh, &all)?.0;
            }
            Ok(Mesh { generation: 0, ..mesh })
        }
    }
}

/// Grid of `nx * ny` cells of spacing `1/n_unit`; `keep(i, j)` selects cells.
fn grid_mesh(
    domain: DomainSpec,
    nx: usize,
    ny: usize,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<Mesh> {
    let h = match domain {
        DomainSpec::LShape => 2.0 / nx as f64,
        _ => 1.0 / nx as f64,
    };
    let mut index = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let used = |i: usize, j: usize| {
        // a grid node is used if any adjacent kept cell exists
        let cells = [
            (i.wrapping_sub(1), j.wrapping_sub(1)),
            (i, j.wrapping_sub(1)),
            (i.wrapping_sub(1), j),
            (i, j),
        ];
        cells
            .iter()
            .any(|&(ci, cj)| ci < nx && cj < ny && keep(ci, cj))
    };
    for j in 0..=ny {
        for i in 0..=nx {
            if used(i, j) {
                index[j * (nx + 1) + i] = vertices.len();
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
    }
    let node = |i: usize, j: usize| index[j * (nx + 1) + i];
    let mut triangles = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !keep(i, j) {
                continue;
            }
            let (v00, v10, v01, v11) = (node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1));
            triangles.push(orient_longest_edge(&vertices, [v00, v10, v11]));
            triangles.push(orient_longest_edge(&vertices, [v00, v11, v01]));
        }
    }
    Mesh::new(vertices, triangles, domain, 0)
}

fn ear_clip(points: &[Point]) -> Result<Vec<[usize; 3]>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut tris = Vec::with_capacity(points.len() - 2);
    while remaining.len() > 3 {
        let n = remaining.len();
        let ear = (0..n).find(|&k| {
            let (a, b, c) = (remaining[(k + n - 1) % n], remaining[k], remaining[(k + 1) % n]);
            if signed_area2(points[a], points[b], points[c]) <= 0.0 {
                return false;
            }
            remaining.iter().all(|&v| {
                v == a || v == b || v == c || !point_in_triangle(points[v], points[a], points[b], points[c])
            })
        });
        let k = ear.ok_or_else(|| Error::UnsupportedDomain("polygon is not simple".into()))?;
        let (a, b, c) = (remaining[(k + n - 1) % n], remaining[k], remaining[(k + 1) % n]);
        tris.push([a, b, c]);
        remaining.remove(k);
    }
    tris.push([remaining[0], remaining[1], remaining[2]]);
    Ok(tris)
}

fn point_in_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    signed_area2(a, b, p) >= 0.0 && signed_area2(b, c, p) >= 0.0 && signed_area2(c, a, p) >= 0.0
}

/// Bookkeeping that links a refined mesh to its parent.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementRecord {
    pub parent_generation: u64,
    pub child_generation: u64,
    pub parent_vertex_count: usize,
    /// `(new vertex id, [parent a, parent b])` for every vertex created.
    pub new_vertex_parents: Vec<(usize, [usize; 2])>,
}

impl RefinementRecord {
    pub fn is_empty(&self) -> bool {
        self.new_vertex_parents.is_empty()
    }
}

/// Newest-vertex bisection of the marked elements plus conforming closure.
///
/// Each marked element is bisected at least once. Old vertex ids are kept;
/// new midpoints are appended. With no marks the mesh is returned unchanged.
pub fn bisect(mesh: &Mesh, marked: &[usize]) -> Result<(Mesh, RefinementRecord)> {
    refine_marked(mesh, marked, false)
}

/// Like [`bisect`], but all three edges of every marked element are split,
/// so each marked element ends up as four children and any interior edge it
/// has gains a new vertex.
pub fn bisect3(mesh: &Mesh, marked: &[usize]) -> Result<(Mesh, RefinementRecord)> {
    refine_marked(mesh, marked, true)
}

fn refine_marked(mesh: &Mesh, marked: &[usize], all_edges: bool) -> Result<(Mesh, RefinementRecord)> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let ne = mesh.num_elements();
    if let Some(&bad) = marked.iter().find(|&&t| t >= ne) {
        return Err(Error::ElementOutOfRange { element: bad, count: ne });
    }
    if marked.is_empty() {
        let rec = RefinementRecord {
            parent_generation: mesh.generation,
            child_generation: mesh.generation,
            parent_vertex_count: mesh.num_vertices(),
            new_vertex_parents: Vec::new(),
        };
        return Ok((mesh.clone(), rec));
    }

    // Edge marks, closed so that any element with a marked edge also has its
    // refinement edge marked.
    let tris = &mesh.triangles;
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mark = |t: usize, i: usize, edges: &mut HashSet<(usize, usize)>, queue: &mut VecDeque<usize>| {
        let tri = tris[t];
        if edges.insert(edge_key(tri[i], tri[(i + 1) % 3])) {
            queue.push_back(t);
            if let Some(s) = mesh.neighbours[t][i] {
                queue.push_back(s);
            }
        }
    };
    for &t in marked {
        let count = if all_edges { 3 } else { 1 };
        for i in 0..count {
            mark(t, i, &mut edges, &mut queue);
        }
    }
    while let Some(t) = queue.pop_front() {
        let tri = tris[t];
        let ref_marked = edges.contains(&edge_key(tri[0], tri[1]));
        if !ref_marked {
            let any = (1..3).any(|i| edges.contains(&edge_key(tri[i], tri[(i + 1) % 3])));
            if any {
                mark(t, 0, &mut edges, &mut queue);
            }
        }
    }

    // Midpoints in deterministic element/edge order.
    let mut vertices = mesh.vertices.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
    let mut new_vertex_parents = Vec::with_capacity(edges.len());
    for tri in tris {
        for i in 0..3 {
            let (a, b) = (tri[i], tri[(i + 1) % 3]);
            let key = edge_key(a, b);
            if edges.contains(&key) && !mid.contains_key(&key) {
                let id = vertices.len();
                vertices.push(midpoint(mesh.vertices[a], mesh.vertices[b]));
                mid.insert(key, id);
                new_vertex_parents.push((id, [key.0, key.1]));
            }
        }
    }

    let mut triangles = Vec::with_capacity(ne + 2 * edges.len());
    fn refine(tri: [usize; 3], mid: &HashMap<(usize, usize), usize>, out: &mut Vec<[usize; 3]>) {
        let [a, b, c] = tri;
        match mid.get(&edge_key(a, b)) {
            Some(&m) => {
                refine([c, a, m], mid, out);
                refine([b, c, m], mid, out);
            }
            None => out.push(tri),
        }
    }
    for &tri in tris {
        refine(tri, &mid, &mut triangles);
    }

    let child = Mesh::new(vertices, triangles, mesh.domain.clone(), mesh.generation + 1)?;
    let rec = RefinementRecord {
        parent_generation: mesh.generation,
        child_generation: child.generation,
        parent_vertex_count: mesh.num_vertices(),
        new_vertex_parents,
    };
    Ok((child, rec))
}

/// Elements sharing an edge with `t`.
pub fn face_neighbors(mesh: &Mesh, t: usize) -> Vec<usize> {
    mesh.neighbours[t].iter().flatten().copied().collect()
}
