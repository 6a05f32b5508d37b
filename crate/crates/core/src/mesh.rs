//! Structured simplicial meshes of box domains.
//!
//! Nodes are numbered row-major with the first axis fastest and the vertical
//! axis (the last coordinate) slowest. The minimal vertical face touches the
//! bottom electrode, the maximal one the top electrode, every other face is
//! insulated.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryTag {
    TopOrg,
    BotOrg,
    Ins,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    nodes: [usize; 3],
    dim: usize,
    pub tag: BoundaryTag,
}

impl Facet {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes[..self.dim]
    }
}

/// Measure and constant P1 basis gradients of one simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub volume: f64,
    /// Gradient of the basis function attached to each local vertex; only the
    /// first `dim` components and `dim + 1` rows are meaningful.
    pub grads: [[f64; 3]; 4],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    extent: Vec<f64>,
    counts: Vec<usize>,
    vertices: Vec<[f64; 3]>,
    cells: Vec<[usize; 4]>,
    facets: Vec<Facet>,
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_nodes(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Vertices per cell.
    pub fn nv(&self) -> usize {
        self.dim + 1
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i][..self.dim]
    }

    /// Vertical (last) coordinate of a node.
    pub fn height_of(&self, i: usize) -> f64 {
        self.vertices[i][self.dim - 1]
    }

    pub fn height(&self) -> f64 {
        self.extent[self.dim - 1]
    }

    pub fn measure(&self) -> f64 {
        self.extent.iter().product()
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..self.dim + 1]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[usize]> + '_ {
        let nv = self.nv();
        self.cells.iter().map(move |c| &c[..nv])
    }

    pub fn boundary_facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Exact measure of a boundary facet (edge length or triangle area).
    pub fn facet_measure(&self, f: &Facet) -> f64 {
        let p: Vec<&[f64]> = f.nodes().iter().map(|&i| self.vertex(i)).collect();
        match self.dim {
            2 => dist(p[0], p[1]),
            _ => {
                let a = sub3(p[1], p[0]);
                let b = sub3(p[2], p[0]);
                let c = cross(a, b);
                0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
            }
        }
    }

    /// Precomputes the geometry of every cell.
    pub fn geometries(&self) -> Result<Vec<ElementGeometry>> {
        (0..self.n_cells())
            .map(|c| element_geometry(self, c))
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sub3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Builds a uniform box mesh with `counts[k]` nodes along axis `k`.
///
/// Each grid square is split into two triangles along the diagonal through
/// its lower-left and upper-right corner; each grid cube is split into the six
/// tetrahedra sharing its main diagonal, which keeps neighbouring cubes
/// conforming.
pub fn build_structured_mesh(extent: &[f64], counts: &[usize]) -> Result<Mesh> {
    let dim = extent.len();
    if dim != 2 && dim != 3 {
        return Err(Error::Dimension(format!("dimension must be 2 or 3, got {dim}")));
    }
    if counts.len() != dim {
        return Err(Error::Dimension(format!(
            "{} node counts for a {dim}D extent",
            counts.len()
        )));
    }
    if let Some(c) = counts.iter().find(|&&c| c < 2) {
        return Err(Error::Dimension(format!("node count {c} < 2")));
    }
    if let Some(e) = extent.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Dimension(format!("extent {e} must be positive")));
    }

    let nx = counts[0];
    let ny = counts[1];
    let nz = if dim == 3 { counts[2] } else { 1 };
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let h: Vec<f64> = (0..dim).map(|a| extent[a] / (counts[a] - 1) as f64).collect();

    let mut vertices = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut v = [0.0; 3];
                v[0] = coord(i, nx, extent[0], h[0]);
                v[1] = coord(j, ny, extent[1], h[1]);
                if dim == 3 {
                    v[2] = coord(k, nz, extent[2], h[2]);
                }
                vertices.push(v);
            }
        }
    }

    let mut cells = Vec::new();
    let mut facets = Vec::new();
    if dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let v00 = idx(i, j, 0);
                let v10 = idx(i + 1, j, 0);
                let v01 = idx(i, j + 1, 0);
                let v11 = idx(i + 1, j + 1, 0);
                cells.push([v00, v10, v11, 0]);
                cells.push([v00, v11, v01, 0]);
            }
        }
        let edge = |a, b, tag| Facet {
            nodes: [a, b, 0],
            dim: 2,
            tag,
        };
        for i in 0..nx - 1 {
            facets.push(edge(idx(i, 0, 0), idx(i + 1, 0, 0), BoundaryTag::BotOrg));
            facets.push(edge(idx(i, ny - 1, 0), idx(i + 1, ny - 1, 0), BoundaryTag::TopOrg));
        }
        for j in 0..ny - 1 {
            facets.push(edge(idx(0, j, 0), idx(0, j + 1, 0), BoundaryTag::Ins));
            facets.push(edge(idx(nx - 1, j, 0), idx(nx - 1, j + 1, 0), BoundaryTag::Ins));
        }
    } else {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    for perm in PERMS {
                        let mut pos = [i, j, k];
                        let mut tet = [idx(i, j, k), 0, 0, 0];
                        for (s, &axis) in perm.iter().enumerate() {
                            pos[axis] += 1;
                            tet[s + 1] = idx(pos[0], pos[1], pos[2]);
                        }
                        if signed_volume3(&vertices, &tet) < 0.0 {
                            tet.swap(2, 3);
                        }
                        cells.push(tet);
                    }
                }
            }
        }
        // Boundary quads split along the diagonal joining their min and max corners.
        let mut quad = |a: usize, b: usize, c: usize, d: usize, tag: BoundaryTag| {
            // a = min corner, b/c = the two mixed corners, d = max corner
            facets.push(Facet { nodes: [a, b, d], dim: 3, tag });
            facets.push(Facet { nodes: [a, d, c], dim: 3, tag });
        };
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                for (k, tag) in [(0, BoundaryTag::BotOrg), (nz - 1, BoundaryTag::TopOrg)] {
                    quad(idx(i, j, k), idx(i + 1, j, k), idx(i, j + 1, k), idx(i + 1, j + 1, k), tag);
                }
            }
        }
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in [0, nx - 1] {
                    quad(idx(i, j, k), idx(i, j + 1, k), idx(i, j, k + 1), idx(i, j + 1, k + 1), BoundaryTag::Ins);
                }
            }
            for i in 0..nx - 1 {
                for j in [0, ny - 1] {
                    quad(idx(i, j, k), idx(i + 1, j, k), idx(i, j, k + 1), idx(i + 1, j, k + 1), BoundaryTag::Ins);
                }
            }
        }
    }

    Ok(Mesh {
        dim,
        extent: extent.to_vec(),
        counts: counts.to_vec(),
        vertices,
        cells,
        facets,
    })
}

// Last node lands exactly on the extent.
fn coord(i: usize, n: usize, extent: f64, h: f64) -> f64 {
    if i + 1 == n {
        extent
    } else {
        i as f64 * h
    }
}

fn signed_volume3(vertices: &[[f64; 3]], tet: &[usize; 4]) -> f64 {
    let p0 = vertices[tet[0]];
    let rows = [
        sub3(&vertices[tet[1]], &p0),
        sub3(&vertices[tet[2]], &p0),
        sub3(&vertices[tet[3]], &p0),
    ];
    det3(rows) / 6.0
}

/// Vertex indices incident to a facet with `tag`. Nodes shared between a
/// contact and the insulated boundary belong to the contact.
pub fn boundary_nodes(mesh: &Mesh, tag: BoundaryTag) -> Vec<usize> {
    let collect = |t: BoundaryTag| -> BTreeSet<usize> {
        mesh.facets
            .iter()
            .filter(|f| f.tag == t)
            .flat_map(|f| f.nodes().iter().copied())
            .collect()
    };
    let mut set = collect(tag);
    if tag == BoundaryTag::Ins {
        for contact in [BoundaryTag::TopOrg, BoundaryTag::BotOrg] {
            for n in collect(contact) {
                set.remove(&n);
            }
        }
    }
    set.into_iter().collect()
}

pub fn element_geometry(mesh: &Mesh, cell: usize) -> Result<ElementGeometry> {
    if cell >= mesh.n_cells() {
        return Err(Error::Dimension(format!(
            "cell index {cell} out of range ({} cells)",
            mesh.n_cells()
        )));
    }
    let nodes = mesh.cell(cell);
    let pts: Vec<[f64; 3]> = nodes.iter().map(|&i| mesh.vertices[i]).collect();
    simplex_geometry(mesh.dim, &pts).map_err(|volume| Error::Geometry { cell, volume })
}

/// Geometry of a simplex given its `dim + 1` vertices. On failure returns the
/// (degenerate) signed volume.
pub fn simplex_geometry(dim: usize, pts: &[[f64; 3]]) -> std::result::Result<ElementGeometry, f64> {
    let mut grads = [[0.0; 3]; 4];
    let volume;
    if dim == 2 {
        let (ax, ay) = (pts[1][0] - pts[0][0], pts[1][1] - pts[0][1]);
        let (bx, by) = (pts[2][0] - pts[0][0], pts[2][1] - pts[0][1]);
        let det = ax * by - ay * bx;
        let scale = (ax * ax + ay * ay).max(bx * bx + by * by);
        if det.abs() <= 1e-14 * scale {
            return Err(0.5 * det);
        }
        // rows of the inverse Jacobian
        grads[1] = [by / det, -bx / det, 0.0];
        grads[2] = [-ay / det, ax / det, 0.0];
        volume = 0.5 * det.abs();
    } else {
        let m = [
            sub3(&pts[1], &pts[0]),
            sub3(&pts[2], &pts[0]),
            sub3(&pts[3], &pts[0]),
        ];
        let det = det3(m);
        let scale = m
            .iter()
            .map(|r| r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
            .fold(0.0, f64::max)
            .powf(1.5);
        if det.abs() <= 1e-14 * scale {
            return Err(det / 6.0);
        }
        // gradient of barycentric k = (edge_a x edge_b) / det for the opposite edges
        grads[1] = cross(m[1], m[2]).map(|v| v / det);
        grads[2] = cross(m[2], m[0]).map(|v| v / det);
        grads[3] = cross(m[0], m[1]).map(|v| v / det);
        volume = det.abs() / 6.0;
    }
    for a in 0..3 {
        grads[0][a] = -(1..=dim).map(|k| grads[k][a]).sum::<f64>();
    }
    Ok(ElementGeometry { volume, grads })
}
