//! Two-dimensional triangulations with a labeled boundary partition.
//!
//! Boundary edges carry the region they belong to: the actuated part `Γ₀`,
//! where the feedback acts, or the free part `Γ₁`, where the field is clamped
//! to zero. Normals always point out of the domain.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// `Γ₀`: boundary part driven by the feedback.
    Actuated,
    /// `Γ₁`: boundary part with homogeneous Dirichlet condition.
    Free,
}

impl Region {
    fn label(self) -> u8 {
        match self {
            Region::Actuated => 0,
            Region::Free => 1,
        }
    }

    fn from_label(label: u8) -> Result<Self> {
        match label {
            0 => Ok(Region::Actuated),
            1 => Ok(Region::Free),
            other => invalid(format!("unknown boundary label {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    /// Endpoints, ordered so the domain lies on the left.
    pub nodes: [usize; 2],
    pub region: Region,
    pub normal: Point,
}

/// Immutable triangulation of a polygonal domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

impl Mesh {
    /// Builds a mesh from counter-clockwise triangles. Boundary edges are the
    /// edges owned by a single triangle; all of them start out in `Γ₀`.
    pub fn from_triangles(nodes: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return invalid("mesh has no triangles");
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nodes.len()) {
                return invalid(format!("triangle {t} references a missing node"));
            }
            let area = signed_area(&nodes, tri);
            if area <= 0.0 {
                return Err(Error::MeshDegeneracy(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
        }

        let mut owners: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                owners.entry(key).or_insert((0, [a, b])).0 += 1;
            }
        }
        if let Some((edge, _)) = owners.iter().find(|(_, (count, _))| *count > 2) {
            return Err(Error::MeshDegeneracy(format!("edge {edge:?} shared by more than two triangles")));
        }
        let mut boundary: Vec<_> = owners
            .into_iter()
            .filter(|(_, (count, _))| *count == 1)
            .map(|(key, (_, directed))| (key, directed))
            .collect();
        boundary.sort_by_key(|(key, _)| *key);

        let boundary_edges = boundary
            .into_iter()
            .map(|(_, [a, b])| BoundaryEdge {
                nodes: [a, b],
                region: Region::Actuated,
                normal: outward_normal(nodes[a], nodes[b]),
            })
            .collect();

        Ok(Self { nodes, triangles, boundary_edges })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.nodes, &self.triangles[t])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn edge_length(&self, e: &BoundaryEdge) -> f64 {
        dist(self.nodes[e.nodes[0]], self.nodes[e.nodes[1]])
    }

    pub fn edge_midpoint(&self, e: &BoundaryEdge) -> Point {
        let [a, b] = e.nodes;
        [
            0.5 * (self.nodes[a][0] + self.nodes[b][0]),
            0.5 * (self.nodes[a][1] + self.nodes[b][1]),
        ]
    }

    /// Longest edge over all triangles.
    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .map(|(a, b)| dist(self.nodes[a], self.nodes[b]))
            .fold(0.0, f64::max)
    }

    /// Sorted list of nodes that lie on some boundary edge.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut on = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            on[e.nodes[0]] = true;
            on[e.nodes[1]] = true;
        }
        (0..self.nodes.len()).filter(|&i| on[i]).collect()
    }

    /// Reassigns every boundary edge's region from its midpoint and normal.
    pub fn relabel(mut self, mut rule: impl FnMut(Point, Point) -> Region) -> Self {
        for k in 0..self.boundary_edges.len() {
            let mid = self.edge_midpoint(&self.boundary_edges[k]);
            let normal = self.boundary_edges[k].normal;
            self.boundary_edges[k].region = rule(mid, normal);
        }
        self
    }

    pub fn with_uniform_region(self, region: Region) -> Self {
        self.relabel(|_, _| region)
    }

    pub fn count_region(&self, region: Region) -> usize {
        self.boundary_edges.iter().filter(|e| e.region == region).count()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MeshDocument {
            nodes: self.nodes.clone(),
            triangles: self.triangles.clone(),
            boundary_edges: self
                .boundary_edges
                .iter()
                .map(|e| (e.nodes[0], e.nodes[1], e.region.label(), e.normal[0], e.normal[1]))
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Parses the JSON document produced by [`Mesh::to_json`]. Boundary edges
    /// are re-derived from the triangles; the stored labels and normals must
    /// agree with them.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MeshDocument = serde_json::from_str(text)?;
        let mut mesh = Mesh::from_triangles(doc.nodes, doc.triangles)?;
        if doc.boundary_edges.len() != mesh.boundary_edges.len() {
            return invalid("boundary edge list does not match the triangulation");
        }
        let mut labels = HashMap::new();
        for (a, b, label, nx, ny) in doc.boundary_edges {
            labels.insert((a, b), (Region::from_label(label)?, [nx, ny]));
        }
        for e in &mut mesh.boundary_edges {
            let Some((region, normal)) = labels.get(&(e.nodes[0], e.nodes[1])) else {
                return invalid(format!("boundary edge {:?} missing or misoriented", e.nodes));
            };
            if dist(*normal, e.normal) > 1e-9 {
                return invalid(format!("boundary edge {:?} has an inconsistent normal", e.nodes));
            }
            e.region = *region;
        }
        Ok(mesh)
    }
}

#[derive(Serialize, Deserialize)]
struct MeshDocument {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<(usize, usize, u8, f64, f64)>,
}

/// Structured triangulation of the unit square with `n` cells per side.
/// Every boundary edge is labeled `Γ₀`.
pub fn build_unit_square_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return invalid(format!("unit square needs at least 2 subdivisions, got {n}"));
    }
    let side = n + 1;
    let h = 1.0 / n as f64;
    let nodes = (0..side * side)
        .map(|k| [(k % side) as f64 * h, (k / side) as f64 * h])
        .collect();
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = i + side * j;
            let b = a + 1;
            let c = b + side;
            let d = a + side;
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::from_triangles(nodes, triangles)
}

/// Polygonal annulus centered at the origin. The outer circle is `Γ₀` and the
/// inner circle is `Γ₁`, whose normals point toward the center.
pub fn build_annulus_mesh(r_inner: f64, r_outer: f64, resolution: f64) -> Result<Mesh> {
    if !(r_inner > 0.0 && r_outer > r_inner && r_outer.is_finite()) {
        return invalid(format!("annulus radii must satisfy 0 < r_inner < r_outer, got {r_inner}, {r_outer}"));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return invalid(format!("annulus resolution must be positive, got {resolution}"));
    }
    let n_radial = ((r_outer - r_inner) / resolution).ceil().max(1.0) as usize;
    let r_mid = 0.5 * (r_inner + r_outer);
    let n_angular = ((2.0 * PI * r_mid / resolution).ceil() as usize).max(8);

    let mut nodes = Vec::with_capacity((n_radial + 1) * n_angular);
    for k in 0..=n_radial {
        let r = r_inner + (r_outer - r_inner) * k as f64 / n_radial as f64;
        for j in 0..n_angular {
            let theta = 2.0 * PI * j as f64 / n_angular as f64;
            nodes.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    let id = |k: usize, j: usize| k * n_angular + j % n_angular;
    let mut triangles = Vec::with_capacity(2 * n_radial * n_angular);
    for k in 0..n_radial {
        for j in 0..n_angular {
            let a = id(k, j);
            let b = id(k, j + 1);
            let c = id(k + 1, j + 1);
            let d = id(k + 1, j);
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }
    let mesh = Mesh::from_triangles(nodes, triangles)?;
    Ok(mesh.relabel(|mid, _| {
        if mid[0].hypot(mid[1]) < r_mid {
            Region::Free
        } else {
            Region::Actuated
        }
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    pub x0: Point,
    /// Node-to-node distance between `Γ₀` and `Γ₁`; `None` when either is empty.
    pub min_separation: Option<f64>,
    /// `None` when `Γ₁` is empty.
    pub max_h_dot_nu_on_gamma1: Option<f64>,
    pub assumption3_satisfied: bool,
    /// `(x_mid - x0) · ν` for every boundary edge, in mesh order.
    pub h_dot_nu: Vec<f64>,
}

/// Checks that `Γ₀` and `Γ₁` are separated and that `h · ν ≤ 0` on `Γ₁` with
/// `h(x) = x - x0`.
pub fn check_geometric_assumptions(mesh: &Mesh, x0: Point) -> GeometryReport {
    let h_dot_nu: Vec<f64> = mesh
        .boundary_edges()
        .iter()
        .map(|e| {
            let m = mesh.edge_midpoint(e);
            (m[0] - x0[0]) * e.normal[0] + (m[1] - x0[1]) * e.normal[1]
        })
        .collect();

    let nodes_of = |region: Region| {
        let mut ids: Vec<usize> = mesh
            .boundary_edges()
            .iter()
            .filter(|e| e.region == region)
            .flat_map(|e| e.nodes)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let actuated = nodes_of(Region::Actuated);
    let free = nodes_of(Region::Free);

    let min_separation = if actuated.is_empty() || free.is_empty() {
        None
    } else {
        let p = mesh.nodes();
        Some(
            actuated
                .iter()
                .flat_map(|&a| free.iter().map(move |&b| dist(p[a], p[b])))
                .fold(f64::INFINITY, f64::min),
        )
    };
    let max_h_dot_nu_on_gamma1 = mesh
        .boundary_edges()
        .iter()
        .zip(&h_dot_nu)
        .filter(|(e, _)| e.region == Region::Free)
        .map(|(_, &v)| v)
        .reduce(f64::max);

    let gamma1_empty = free.is_empty();
    let separated = gamma1_empty || min_separation.is_none_or(|d| d > 0.0);
    let star_shaped = max_h_dot_nu_on_gamma1.is_none_or(|v| v <= 0.0);

    GeometryReport {
        x0,
        min_separation,
        max_h_dot_nu_on_gamma1,
        assumption3_satisfied: separated && star_shaped,
        h_dot_nu,
    }
}

fn signed_area(nodes: &[Point], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = tri.map(|i| nodes[i]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn outward_normal(a: Point, b: Point) -> Point {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    [dy / len, -dx / len]
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
