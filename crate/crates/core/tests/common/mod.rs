//! Dense reference implementations assembled independently of the library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satwave_core::Mesh;

pub struct DenseOracle {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    /// Lumped boundary weights indexed like `boundary`.
    pub weights: DVector<f64>,
}

impl DenseOracle {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.num_nodes();
        let nodes = mesh.nodes();
        let mut mass = DMatrix::zeros(n, n);
        let mut stiffness = DMatrix::zeros(n, n);
        for tri in mesh.triangles() {
            let p: Vec<[f64; 2]> = tri.iter().map(|&i| nodes[i]).collect();
            let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
            // Gradient of the hat function at vertex k is the rotated opposite edge over 2·area.
            let grad = |k: usize| {
                let a = p[(k + 1) % 3];
                let b = p[(k + 2) % 3];
                [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)]
            };
            for a in 0..3 {
                for b in 0..3 {
                    let (ga, gb) = (grad(a), grad(b));
                    stiffness[(tri[a], tri[b])] += area * (ga[0] * gb[0] + ga[1] * gb[1]);
                    mass[(tri[a], tri[b])] += area / 12.0 * if a == b { 2.0 } else { 1.0 };
                }
            }
        }
        let mut on_boundary = vec![false; n];
        let mut lumped = vec![0.0; n];
        for e in mesh.boundary_edges() {
            let [a, b] = e.nodes;
            let len = ((nodes[a][0] - nodes[b][0]).powi(2) + (nodes[a][1] - nodes[b][1]).powi(2)).sqrt();
            on_boundary[a] = true;
            on_boundary[b] = true;
            lumped[a] += 0.5 * len;
            lumped[b] += 0.5 * len;
        }
        let interior: Vec<usize> = (0..n).filter(|&i| !on_boundary[i]).collect();
        let boundary: Vec<usize> = (0..n).filter(|&i| on_boundary[i]).collect();
        let weights = DVector::from_iterator(boundary.len(), boundary.iter().map(|&i| lumped[i]));
        Self { mass, stiffness, interior, boundary, weights }
    }

    fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
    }

    /// Dense `A⁻¹` acting on nodal vectors.
    pub fn a_inverse(&self) -> DMatrix<f64> {
        let n = self.mass.nrows();
        let kii = Self::block(&self.stiffness, &self.interior, &self.interior);
        let m_i = Self::block(&self.mass, &self.interior, &(0..n).collect::<Vec<_>>());
        let x = kii.lu().solve(&m_i).unwrap();
        let mut out = DMatrix::zeros(n, n);
        for (r, &i) in self.interior.iter().enumerate() {
            out.set_row(i, &x.row(r));
        }
        out
    }

    /// Dense `A` acting on zero-trace nodal vectors.
    pub fn a(&self) -> DMatrix<f64> {
        let n = self.mass.nrows();
        let kii = Self::block(&self.stiffness, &self.interior, &self.interior);
        let mii = Self::block(&self.mass, &self.interior, &self.interior);
        let x = mii.lu().solve(&kii).unwrap();
        let mut out = DMatrix::zeros(n, n);
        for (r, &i) in self.interior.iter().enumerate() {
            for (c, &j) in self.interior.iter().enumerate() {
                out[(i, j)] = x[(r, c)];
            }
        }
        out
    }

    /// Dense harmonic extension, `N × N_Γ`.
    pub fn dirichlet(&self) -> DMatrix<f64> {
        let n = self.mass.nrows();
        let kii = Self::block(&self.stiffness, &self.interior, &self.interior);
        let kib = Self::block(&self.stiffness, &self.interior, &self.boundary);
        let x = kii.lu().solve(&(-kib)).unwrap();
        let mut out = DMatrix::zeros(n, self.boundary.len());
        for (r, &i) in self.interior.iter().enumerate() {
            out.set_row(i, &x.row(r));
        }
        for (r, &i) in self.boundary.iter().enumerate() {
            out[(i, r)] = 1.0;
        }
        out
    }

    /// Dense `D* = W⁻¹ Dᵀ M`.
    pub fn dstar(&self) -> DMatrix<f64> {
        let mut out = self.dirichlet().transpose() * &self.mass;
        for (r, w) in self.weights.iter().enumerate() {
            out.row_mut(r).scale_mut(1.0 / w);
        }
        out
    }

    /// Smallest generalized eigenvalue of `(K_II, M_II)`.
    pub fn smallest_eigenvalue(&self) -> f64 {
        let kii = Self::block(&self.stiffness, &self.interior, &self.interior);
        let mii = Self::block(&self.mass, &self.interior, &self.interior);
        let l = mii.cholesky().unwrap().l();
        let linv = l.clone().try_inverse().unwrap();
        let sym = &linv * kii * linv.transpose();
        sym.symmetric_eigenvalues().min()
    }

    pub fn l2_norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.mass * v)).sqrt()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Random nodal field vanishing on the given boundary nodes.
pub fn random_zero_trace(rng: &mut ChaCha8Rng, n: usize, boundary: &[usize]) -> DVector<f64> {
    let mut v = random_vector(rng, n);
    for &i in boundary {
        v[i] = 0.0;
    }
    v
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}
