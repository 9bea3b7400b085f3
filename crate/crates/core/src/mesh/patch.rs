use super::{midpoint, Mesh, Point};

/// Virtual red/green subdivision of the patch around one element.
///
/// The centre element is red-refined into four children and every face
/// neighbour is green-refined into two halves towards the shared edge
/// midpoint. The global mesh is never modified.
#[derive(Clone, Debug)]
pub struct PatchSubdivision {
    pub center_element: usize,
    /// The centre element followed by its face neighbours.
    pub patch_elements: Vec<usize>,
    /// Local points: the centre element's vertices (0..3), its edge
    /// midpoints (3..6, midpoint of edge `i` at `3 + i`), then the vertex of
    /// each neighbour opposite the shared edge.
    pub points: Vec<Point>,
    /// Global vertex pair whose average gives the value of a mesh P1
    /// function at each local point (`[v, v]` for mesh vertices).
    pub point_parents: Vec<[usize; 2]>,
    /// Counter-clockwise sub-triangles as local point indices.
    pub sub_triangles: Vec<[usize; 3]>,
    /// Local indices of the edge midpoints not lying on the boundary.
    pub interior_midpoints: Vec<usize>,
}

impl PatchSubdivision {
    /// Position of local point `p` among the interior midpoints, if any.
    pub fn hat_index(&self, p: usize) -> Option<usize> {
        self.interior_midpoints.iter().position(|&q| q == p)
    }

    /// Value of a P1 function (given by vertex values) at every local point.
    pub fn interpolate(&self, vertex_values: &[f64]) -> Vec<f64> {
        self.point_parents
            .iter()
            .map(|&[a, b]| {
                if a == b {
                    vertex_values[a]
                } else {
                    0.5 * (vertex_values[a] + vertex_values[b])
                }
            })
            .collect()
    }

    pub fn sub_triangle_points(&self, s: usize) -> [Point; 3] {
        let [a, b, c] = self.sub_triangles[s];
        [self.points[a], self.points[b], self.points[c]]
    }
}

pub fn build_patch_subdivision(mesh: &Mesh, element: usize) -> PatchSubdivision {
    let tri = mesh.triangles()[element];
    let verts = mesh.vertices();
    let neighbours = mesh.neighbours(element);

    let mut points: Vec<Point> = tri.iter().map(|&v| verts[v]).collect();
    let mut point_parents: Vec<[usize; 2]> = tri.iter().map(|&v| [v, v]).collect();
    for i in 0..3 {
        let (a, b) = (tri[i], tri[(i + 1) % 3]);
        points.push(midpoint(verts[a], verts[b]));
        point_parents.push([a, b]);
    }

    // red refinement of the centre element
    let mut sub_triangles = vec![[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]];
    let mut patch_elements = vec![element];
    let mut interior_midpoints = Vec::new();

    for (i, nb) in neighbours.iter().enumerate() {
        let Some(nb) = *nb else { continue };
        patch_elements.push(nb);
        interior_midpoints.push(3 + i);
        let ntri = mesh.triangles()[nb];
        let (p, q) = (tri[i], tri[(i + 1) % 3]);
        let opposite = *ntri.iter().find(|&&v| v != p && v != q).expect("neighbour shares an edge");
        let o = points.len();
        points.push(verts[opposite]);
        point_parents.push([opposite, opposite]);
        // the neighbour is (q, p, opposite) in counter-clockwise order
        let (lp, lq) = (i, (i + 1) % 3);
        let m = 3 + i;
        sub_triangles.push([lq, m, o]);
        sub_triangles.push([m, lp, o]);
    }

    PatchSubdivision {
        center_element: element,
        patch_elements,
        points,
        point_parents,
        sub_triangles,
        interior_midpoints,
    }
}
