//! Piecewise-linear reference triangulation of a closed orientable surface.
//!
//! The reference mesh is immutable after construction: surface evolution
//! moves the curved parametrization defined on top of it, never the
//! connectivity. Vertex indices are the stable identity for degrees of
//! freedom across time steps.
//!
//! Edge enumeration is deterministic (first-encounter order while walking
//! triangles), and icosphere subdivision appends the midpoint of edge `e`
//! as vertex `V + e`. Consequently the quadratic Lagrange nodes of a
//! level-`l` icosphere coincide, index for index, with the vertices of the
//! level-`l+1` icosphere. The convergence harness depends on this nesting.

use std::collections::HashMap;
use std::path::Path;

use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Hard cap on icosphere refinement (level 7 is ~655k triangles).
pub const MAX_REFINEMENT_LEVEL: u32 = 7;

/// Flat-triangle reference triangulation with connectivity.
#[derive(Debug, Clone)]
pub struct LinearSurfaceMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    /// Unique edges as vertex pairs `(a, b)` with `a < b`.
    edges: Vec<(usize, usize)>,
    /// Per-triangle edge ids, local order `(v0,v1), (v1,v2), (v2,v0)`.
    triangle_edges: Vec<[usize; 3]>,
    /// The two incident triangles of each edge.
    edge_triangles: Vec<[usize; 2]>,
}

impl LinearSurfaceMesh {
    /// Builds connectivity from raw vertices and triangles and validates
    /// the closed-surface invariants.
    pub fn from_raw(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let (edges, triangle_edges, edge_triangles) = build_edges(&vertices, &triangles)?;
        let mesh = Self {
            vertices,
            triangles,
            edges,
            triangle_edges,
            edge_triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn edge_triangles(&self) -> &[[usize; 2]] {
        &self.edge_triangles
    }

    pub fn vertex(&self, i: usize) -> Vec3 {
        self.vertices[i]
    }

    /// Euler characteristic V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Flat area of one triangle.
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let ab = vec3::sub(self.vertices[b], self.vertices[a]);
        let ac = vec3::sub(self.vertices[c], self.vertices[a]);
        0.5 * vec3::norm(vec3::cross(ab, ac))
    }

    /// Total flat-triangle area.
    pub fn total_flat_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Centroid of all vertices.
    pub fn centroid(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for v in &self.vertices {
            c = vec3::add(c, *v);
        }
        vec3::scale(1.0 / self.vertices.len() as f64, c)
    }

    fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::Mesh("mesh has no triangles".into()));
        }
        // Closed surface: exactly two triangles per edge (checked during
        // construction), traversed in opposite directions.
        let mut traversal: HashMap<(usize, usize), i32> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                if a == b {
                    return Err(Error::Mesh(format!("triangle {tri:?} repeats vertex {a}")));
                }
                let (key, dir) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
                *traversal.entry(key).or_insert(0) += dir;
            }
        }
        for (edge, sum) in &traversal {
            if *sum != 0 {
                return Err(Error::Mesh(format!(
                    "inconsistent orientation across edge {edge:?}"
                )));
            }
        }
        for t in 0..self.triangles.len() {
            if self.triangle_area(t) <= 0.0 {
                return Err(Error::Mesh(format!("degenerate triangle {t}")));
            }
        }
        Ok(())
    }
}

/// Longest edge of the mesh.
pub fn mesh_size(mesh: &LinearSurfaceMesh) -> f64 {
    mesh.edges()
        .iter()
        .map(|&(a, b)| vec3::norm(vec3::sub(mesh.vertex(b), mesh.vertex(a))))
        .fold(0.0, f64::max)
}

fn build_edges(
    vertices: &[Vec3],
    triangles: &[[usize; 3]],
) -> Result<(Vec<(usize, usize)>, Vec<[usize; 3]>, Vec<[usize; 2]>)> {
    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut triangle_edges = Vec::with_capacity(triangles.len());
    let mut edge_tris: Vec<Vec<usize>> = Vec::new();

    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            if v >= vertices.len() {
                return Err(Error::Mesh(format!(
                    "triangle {t} references vertex {v} out of range"
                )));
            }
        }
        let mut te = [0usize; 3];
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let key = if a < b { (a, b) } else { (b, a) };
            let id = *edge_ids.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_tris.push(Vec::new());
                edges.len() - 1
            });
            te[k] = id;
            edge_tris[id].push(t);
        }
        triangle_edges.push(te);
    }

    let mut edge_triangles = Vec::with_capacity(edges.len());
    for (e, ts) in edge_tris.iter().enumerate() {
        if ts.len() != 2 {
            return Err(Error::Mesh(format!(
                "edge {:?} is shared by {} triangles, expected 2",
                edges[e],
                ts.len()
            )));
        }
        edge_triangles.push([ts[0], ts[1]]);
    }
    Ok((edges, triangle_edges, edge_triangles))
}

/// Regular icosahedron with circumradius `radius`, outward-oriented.
fn icosahedron(radius: f64) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw: [[f64; 3]; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices: Vec<Vec3> = raw
        .iter()
        .map(|v| vec3::scale(radius / vec3::norm(*v), *v))
        .collect();
    let triangles = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, triangles)
}

/// Icosahedron subdivided `refinement_level` times, vertices projected
/// radially onto the sphere of the given radius.
///
/// The midpoint vertex of edge `e` of the level-`l` mesh becomes vertex
/// `V_l + e` of the level-`l+1` mesh (see module docs).
pub fn generate_icosphere(refinement_level: u32, radius: f64) -> Result<LinearSurfaceMesh> {
    if refinement_level > MAX_REFINEMENT_LEVEL {
        return Err(Error::RefinementCapacity {
            requested: refinement_level,
            max: MAX_REFINEMENT_LEVEL,
        });
    }
    if !(radius > 0.0) {
        return Err(Error::Mesh(format!("radius must be positive, got {radius}")));
    }
    let (vertices, triangles) = icosahedron(radius);
    let mut mesh = LinearSurfaceMesh::from_raw(vertices, triangles)?;
    for _ in 0..refinement_level {
        mesh = subdivide_projected(&mesh, radius)?;
    }
    debug_assert!(outward_oriented(&mesh));
    Ok(mesh)
}

/// One 4:1 subdivision with radial projection of the new midpoints.
fn subdivide_projected(mesh: &LinearSurfaceMesh, radius: f64) -> Result<LinearSurfaceMesh> {
    let nv = mesh.num_vertices();
    let mut vertices = mesh.vertices().to_vec();
    for &(a, b) in mesh.edges() {
        let mid = vec3::scale(0.5, vec3::add(mesh.vertex(a), mesh.vertex(b)));
        vertices.push(vec3::scale(radius / vec3::norm(mid), mid));
    }
    let mut triangles = Vec::with_capacity(4 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = *tri;
        let [eab, ebc, eca] = mesh.triangle_edges()[t];
        let (mab, mbc, mca) = (nv + eab, nv + ebc, nv + eca);
        triangles.push([a, mab, mca]);
        triangles.push([b, mbc, mab]);
        triangles.push([c, mca, mbc]);
        triangles.push([mab, mbc, mca]);
    }
    LinearSurfaceMesh::from_raw(vertices, triangles)
}

/// True when every triangle normal points away from the centroid.
fn outward_oriented(mesh: &LinearSurfaceMesh) -> bool {
    let c = mesh.centroid();
    mesh.triangles().iter().all(|&[a, b, c3]| {
        let n = vec3::cross(
            vec3::sub(mesh.vertex(b), mesh.vertex(a)),
            vec3::sub(mesh.vertex(c3), mesh.vertex(a)),
        );
        let mid = vec3::scale(
            1.0 / 3.0,
            vec3::add(vec3::add(mesh.vertex(a), mesh.vertex(b)), mesh.vertex(c3)),
        );
        vec3::dot(n, vec3::sub(mid, c)) > 0.0
    })
}

/// Loads an ASCII OFF file (header `OFF`, counts line, vertex lines,
/// triangular face lines). Orientation is made outward if the file is
/// consistently inward-oriented.
pub fn load_off(path: &Path) -> Result<LinearSurfaceMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_off(&text)
}

pub fn parse_off(text: &str) -> Result<LinearSurfaceMesh> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
        .peekable();
    match tokens.next() {
        Some("OFF") => {}
        other => {
            return Err(Error::Mesh(format!(
                "OFF header expected, found {other:?}"
            )))
        }
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Mesh(format!("unexpected end of OFF file reading {what}")))?
            .parse::<usize>()
            .map_err(|e| Error::Mesh(format!("bad {what} in OFF file: {e}")))
    };
    let nv = next_usize("vertex count")?;
    let nf = next_usize("face count")?;
    let _ne = next_usize("edge count")?;

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let mut v = [0.0; 3];
        for x in v.iter_mut() {
            *x = tokens
                .next()
                .ok_or_else(|| Error::Mesh(format!("missing coordinate for vertex {i}")))?
                .parse::<f64>()
                .map_err(|e| Error::Mesh(format!("bad coordinate for vertex {i}: {e}")))?;
        }
        vertices.push(v);
    }
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let n = tokens
            .next()
            .ok_or_else(|| Error::Mesh(format!("missing face {f}")))?
            .parse::<usize>()
            .map_err(|e| Error::Mesh(format!("bad vertex count for face {f}: {e}")))?;
        if n != 3 {
            return Err(Error::Mesh(format!(
                "face {f} has {n} vertices, only triangles are supported"
            )));
        }
        let mut tri = [0usize; 3];
        for v in tri.iter_mut() {
            *v = tokens
                .next()
                .ok_or_else(|| Error::Mesh(format!("missing index for face {f}")))?
                .parse::<usize>()
                .map_err(|e| Error::Mesh(format!("bad index for face {f}: {e}")))?;
        }
        triangles.push(tri);
    }

    let mesh = LinearSurfaceMesh::from_raw(vertices.clone(), triangles.clone())?;
    if outward_oriented(&mesh) {
        Ok(mesh)
    } else {
        for tri in triangles.iter_mut() {
            tri.swap(1, 2);
        }
        LinearSurfaceMesh::from_raw(vertices, triangles)
    }
}
