//! Discrete Dirichlet Laplacian, Dirichlet map and its adjoint on P1 elements.
//!
//! Volume fields are nodal vectors over all mesh nodes; boundary fields are
//! nodal vectors over [`DiscreteOperators::boundary`] in that order.
//!
//! * `A` acts on zero-trace fields: `M_II a_I = K_II w_I`, `a_B = 0`.
//! * `A⁻¹ v` is the zero-trace `p` with `K_II p_I = (M v)_I`.
//! * `D f` is the discrete harmonic extension of boundary data `f`.
//! * `D*` is the exact adjoint of `D` between the consistent volume mass and
//!   the lumped boundary mass: `W D* w = Dᵀ M w`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::sparse::{CsrMatrix, SpdSolver};

/// Relative tolerance for "this field vanishes on the boundary".
pub const TRACE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dof {
    Interior(usize),
    Boundary(usize),
}

#[derive(Debug)]
pub struct DiscreteOperators {
    mesh: Arc<Mesh>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    dof: Vec<Dof>,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    stiffness_ii: CsrMatrix,
    stiffness_ib: CsrMatrix,
    mass_ii: CsrMatrix,
    boundary_mass: CsrMatrix,
    lumped_boundary_mass: DVector<f64>,
    stiffness_ii_solver: SpdSolver,
    mass_ii_solver: SpdSolver,
}

impl DiscreteOperators {
    /// Assembles mass, stiffness and boundary mass matrices with exact P1
    /// quadrature and factors the interior blocks.
    pub fn assemble(mesh: impl Into<Arc<Mesh>>) -> Result<Self> {
        let mesh: Arc<Mesh> = mesh.into();
        let n = mesh.num_nodes();
        let boundary = mesh.boundary_nodes();
        let mut dof = vec![Dof::Interior(usize::MAX); n];
        for (k, &b) in boundary.iter().enumerate() {
            dof[b] = Dof::Boundary(k);
        }
        let mut interior = Vec::with_capacity(n - boundary.len());
        for (i, d) in dof.iter_mut().enumerate() {
            if let Dof::Interior(_) = d {
                *d = Dof::Interior(interior.len());
                interior.push(i);
            }
        }
        if interior.is_empty() {
            return Err(Error::MeshDegeneracy("mesh has no interior nodes".into()));
        }

        let mut k_trip = Vec::with_capacity(9 * mesh.triangles().len());
        let mut m_trip = Vec::with_capacity(9 * mesh.triangles().len());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.triangle_area(t);
            let grads = barycentric_gradients(&mesh, tri, area);
            for a in 0..3 {
                for b in 0..3 {
                    let k = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    k_trip.push((tri[a], tri[b], k));
                    m_trip.push((tri[a], tri[b], m));
                }
            }
        }
        let stiffness = CsrMatrix::from_triplets(n, n, &k_trip);
        let mass = CsrMatrix::from_triplets(n, n, &m_trip);

        let nb = boundary.len();
        let mut gb_trip = Vec::with_capacity(4 * mesh.boundary_edges().len());
        let mut lumped = DVector::zeros(nb);
        for e in mesh.boundary_edges() {
            let len = mesh.edge_length(e);
            let [a, b] = e.nodes.map(|i| match dof[i] {
                Dof::Boundary(k) => k,
                Dof::Interior(_) => unreachable!("boundary edge endpoint classified as interior"),
            });
            gb_trip.push((a, a, len / 3.0));
            gb_trip.push((b, b, len / 3.0));
            gb_trip.push((a, b, len / 6.0));
            gb_trip.push((b, a, len / 6.0));
            lumped[a] += 0.5 * len;
            lumped[b] += 0.5 * len;
        }
        let boundary_mass = CsrMatrix::from_triplets(nb, nb, &gb_trip);

        let stiffness_ii = stiffness.submatrix(&interior, &interior);
        let stiffness_ib = stiffness.submatrix(&interior, &boundary);
        let mass_ii = mass.submatrix(&interior, &interior);
        let stiffness_ii_solver = SpdSolver::new(&stiffness_ii)?;
        let mass_ii_solver = SpdSolver::new(&mass_ii)?;

        Ok(Self {
            mesh,
            interior,
            boundary,
            dof,
            mass,
            stiffness,
            stiffness_ii,
            stiffness_ib,
            mass_ii,
            boundary_mass,
            lumped_boundary_mass: lumped,
            stiffness_ii_solver,
            mass_ii_solver,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn num_nodes(&self) -> usize {
        self.dof.len()
    }

    pub fn num_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Boundary nodes, in the order used for boundary fields.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Position of `node` in the boundary ordering.
    pub fn boundary_index(&self, node: usize) -> Option<usize> {
        match self.dof[node] {
            Dof::Boundary(k) => Some(k),
            Dof::Interior(_) => None,
        }
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn stiffness_interior(&self) -> &CsrMatrix {
        &self.stiffness_ii
    }

    pub fn mass_interior(&self) -> &CsrMatrix {
        &self.mass_ii
    }

    /// Consistent boundary mass over all of `Γ`.
    pub fn boundary_mass(&self) -> &CsrMatrix {
        &self.boundary_mass
    }

    /// Diagonal (row-sum) boundary mass, used for every nonlinear pairing.
    pub fn lumped_boundary_mass(&self) -> &DVector<f64> {
        &self.lumped_boundary_mass
    }

    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.num_nodes(), self.mesh.nodes().iter().map(|&x| f(x)))
    }

    pub fn interpolate_boundary(&self, f: impl Fn(Point) -> f64) -> DVector<f64> {
        let nodes = self.mesh.nodes();
        DVector::from_iterator(self.num_boundary(), self.boundary.iter().map(|&i| f(nodes[i])))
    }

    pub fn restrict_interior(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.interior.len(), self.interior.iter().map(|&i| v[i]))
    }

    pub fn trace(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.boundary.len(), self.boundary.iter().map(|&i| v[i]))
    }

    /// Volume field equal to `v_interior` inside and zero on the boundary.
    pub fn extend_by_zero(&self, v_interior: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.num_nodes());
        for (k, &i) in self.interior.iter().enumerate() {
            v[i] = v_interior[k];
        }
        v
    }

    /// Overwrites the boundary values of `v` with `f`.
    pub fn set_trace(&self, v: &mut DVector<f64>, f: &DVector<f64>) {
        for (k, &i) in self.boundary.iter().enumerate() {
            v[i] = f[k];
        }
    }

    /// `(a, b)_{L²(Ω)}` with the consistent mass matrix.
    pub fn l2_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&self.mass.mul_vec(b))
    }

    pub fn l2_norm(&self, v: &DVector<f64>) -> f64 {
        self.l2_inner(v, v).max(0.0).sqrt()
    }

    /// `∫ |∇p|²` over the domain.
    pub fn h1_seminorm_sq(&self, p: &DVector<f64>) -> f64 {
        p.dot(&self.stiffness.mul_vec(p))
    }

    /// Lumped `(f, g)_{L²(Γ)}`.
    pub fn boundary_inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        f.iter().zip(g.iter()).zip(self.lumped_boundary_mass.iter()).map(|((a, b), w)| a * b * w).sum()
    }

    /// Largest boundary value of `w` relative to `max(1, |w|_∞)`.
    pub fn trace_residual(&self, w: &DVector<f64>) -> f64 {
        let scale = w.amax().max(1.0);
        self.boundary.iter().map(|&i| w[i].abs()).fold(0.0, f64::max) / scale
    }

    /// Discrete `A w = -Δw` for a zero-trace `w`.
    pub fn apply_a(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let residual = self.trace_residual(w);
        if residual > TRACE_TOLERANCE {
            return Err(Error::Precondition { what: "apply_A argument has nonzero trace".into(), residual });
        }
        let rhs = self.stiffness_ii.mul_vec(&self.restrict_interior(w));
        Ok(self.extend_by_zero(&self.mass_ii_solver.solve(&rhs)))
    }

    /// Discrete `A⁻¹ v`; the result vanishes on the boundary.
    pub fn solve_a(&self, v: &DVector<f64>) -> DVector<f64> {
        let load = self.restrict_interior(&self.mass.mul_vec(v));
        self.extend_by_zero(&self.stiffness_ii_solver.solve(&load))
    }

    /// `(a, b)_{H⁻¹} = (a, A⁻¹ b)_{L²}`.
    pub fn hminus1_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.l2_inner(a, &self.solve_a(b))
    }

    pub fn hminus1_norm(&self, v: &DVector<f64>) -> Result<f64> {
        let sq = self.hminus1_inner(v, v);
        if sq < -1e-12 {
            return Err(Error::NumericalConsistency(format!("negative H^-1 square norm {sq:e}")));
        }
        Ok(sq.max(0.0).sqrt())
    }

    /// Discrete harmonic extension of boundary data `f`.
    pub fn dirichlet_map(&self, f: &DVector<f64>) -> DVector<f64> {
        assert_eq!(f.len(), self.num_boundary(), "boundary field has wrong length");
        let load = -self.stiffness_ib.mul_vec(f);
        let mut u = self.extend_by_zero(&self.stiffness_ii_solver.solve(&load));
        self.set_trace(&mut u, f);
        u
    }

    /// Adjoint of [`Self::dirichlet_map`]: `(D* w, f)_Γ = (w, D f)_Ω` for every `f`.
    pub fn dstar(&self, w: &DVector<f64>) -> DVector<f64> {
        let mw = self.mass.mul_vec(w);
        let mw_i = self.restrict_interior(&mw);
        let z = self.stiffness_ii_solver.solve(&mw_i);
        let mut out = self.trace(&mw) - self.stiffness_ib.tr_mul_vec(&z);
        out.component_div_assign(&self.lumped_boundary_mass);
        out
    }

    /// Variational normal derivative of a zero-trace `p`, defined as `-D* A p`.
    pub fn normal_derivative(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-self.dstar(&self.apply_a(p)?))
    }

    /// Constant gradient of `u` on each triangle.
    pub fn element_gradients(&self, u: &DVector<f64>) -> Vec<[f64; 2]> {
        self.mesh
            .triangles()
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let g = barycentric_gradients(&self.mesh, tri, self.mesh.triangle_area(t));
                let mut out = [0.0; 2];
                for a in 0..3 {
                    out[0] += u[tri[a]] * g[a][0];
                    out[1] += u[tri[a]] * g[a][1];
                }
                out
            })
            .collect()
    }

    /// Nodal gradients recovered by area-weighted averaging of element gradients.
    pub fn nodal_gradients(&self, u: &DVector<f64>) -> Vec<[f64; 2]> {
        let elem = self.element_gradients(u);
        let mut acc = vec![[0.0; 2]; self.num_nodes()];
        let mut weight = vec![0.0; self.num_nodes()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let area = self.mesh.triangle_area(t);
            for &i in tri {
                acc[i][0] += area * elem[t][0];
                acc[i][1] += area * elem[t][1];
                weight[i] += area;
            }
        }
        acc.iter().zip(weight).map(|(g, w)| [g[0] / w, g[1] / w]).collect()
    }

    /// Smallest eigenvalue of `K_II x = μ M_II x`, by inverse iteration.
    pub fn smallest_eigenvalue(&self) -> f64 {
        let n = self.interior.len();
        let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
        let mut mu = 0.0;
        for _ in 0..200 {
            let y = self.stiffness_ii_solver.solve(&self.mass_ii.mul_vec(&x));
            let norm = y.dot(&self.mass_ii.mul_vec(&y)).sqrt();
            x = y / norm;
            let next = x.dot(&self.stiffness_ii.mul_vec(&x));
            if (next - mu).abs() <= 1e-14 * next {
                return next;
            }
            mu = next;
        }
        mu
    }
}

fn barycentric_gradients(mesh: &Mesh, tri: &[usize; 3], area: f64) -> [[f64; 2]; 3] {
    let p = tri.map(|i| mesh.nodes()[i]);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let j = p[(a + 1) % 3];
        let k = p[(a + 2) % 3];
        g[a] = [(j[1] - k[1]) / (2.0 * area), (k[0] - j[0]) / (2.0 * area)];
    }
    g
}
