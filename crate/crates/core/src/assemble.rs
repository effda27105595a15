//! Design-independent FE operators and assembly of the design-dependent
//! stiffness matrix.
//!
//! Everything here is computed once per problem and reused across the whole
//! optimization: the element stiffness `k_e` (identical for all elements on
//! a uniform grid), the centroid projection `P`, the Tikhonov matrix `G`
//! (with the weight β folded in), the basis-integral vector `v`, the spring
//! matrix and the Dirichlet renumbering.

use crate::error::{Error, Result};
use crate::grid::{BoundaryConditions, Mesh};
use crate::solve::{factorize, BandMatrix, Factorization};
use nalgebra::{DMatrix, DVector};

/// Helmholtz filter pair `(M, M + r^2 L)` on the density grid.
///
/// Filtering a nodal field ψ means solving `(M + r^2 L) ψ̃ = M ψ` with
/// homogeneous Neumann conditions. `r = 0` reduces to the identity.
#[derive(Debug, Clone)]
pub struct FilterOperator {
    pub radius: f64,
    mass: BandMatrix,
    shifted: Factorization,
}

impl FilterOperator {
    /// Applies the filter to a nodal field.
    pub fn apply(&self, field: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = self.mass.mul_vec(field);
        self.shifted.solve(&rhs)
    }
}

/// All time-invariant operators of a problem instance.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub mesh: Mesh,
    pub bc: BoundaryConditions,
    /// 8x8 element stiffness, shared by every element of the uniform grid.
    pub k_e: DMatrix<f64>,
    /// Tikhonov matrix G = β ∫∇φ·∇φ over the nodal grid (band storage).
    pub g: BandMatrix,
    /// Basis-function integrals [v]_k = ∫φ_k.
    pub v: DVector<f64>,
    /// Springs on free dofs as `(free_dof, stiffness)`.
    pub springs_free: Vec<(usize, f64)>,
    /// Full-to-free dof renumbering; `None` marks a fixed dof.
    pub free_dof_map: Vec<Option<usize>>,
    /// Number of free dofs.
    pub num_free: usize,
    /// Reduced load vector.
    pub force: DVector<f64>,
    /// Reduced output functional (empty vector semantics: all zeros for
    /// compliance problems).
    pub output: DVector<f64>,
    /// Per-element free-dof indices (`usize::MAX` marks a fixed dof).
    pub element_dofs: Vec<[usize; 8]>,
    /// Half-bandwidth of the reduced stiffness matrix.
    pub stiffness_bandwidth: usize,
    /// Pᵀ·1, the per-node count of adjacent elements divided by 4.
    pub pt_ones: DVector<f64>,
    pub beta: f64,
}

impl AssembledOperators {
    /// Elemental (centroidal) densities `P z`.
    pub fn apply_p(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.mesh.num_elements());
        for (e, conn) in self.mesh.element_connectivity.iter().enumerate() {
            out[e] = 0.25 * conn.iter().map(|&k| z[k]).sum::<f64>();
        }
        out
    }

    /// Nodal scatter `Pᵀ w` of an elemental field.
    pub fn apply_p_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.mesh.num_nodes());
        for (e, conn) in self.mesh.element_connectivity.iter().enumerate() {
            let q = 0.25 * w[e];
            for &k in conn {
                out[k] += q;
            }
        }
        out
    }

    /// `G z` via the band product.
    pub fn apply_g(&self, z: &DVector<f64>) -> DVector<f64> {
        self.g.mul_vec(z)
    }

    /// Area of the meshed (half) domain.
    pub fn half_domain_area(&self) -> f64 {
        self.mesh.area()
    }
}

/// Plane-stress element stiffness of a square bilinear quad (closed form;
/// independent of the element size under uniform scaling).
pub fn element_stiffness(a: f64, e0: f64, nu: f64) -> Result<DMatrix<f64>> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "element size must be positive, got {a}"
        )));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::InvalidArgument(format!(
            "Poisson ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    // symmetric circulant-like pattern of the bilinear quad (1-based indices
    // of k per row, from the exact integration of the plane-stress form)
    let idx: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let scale = e0 / (1.0 - nu * nu);
    Ok(DMatrix::from_fn(8, 8, |i, j| scale * k[idx[i][j]]))
}

// Local nodal Laplacian stiffness of a square bilinear quad
// (scale-invariant in 2-D): diagonal 2/3, edge neighbors -1/6, opposite -1/3.
const LAPLACIAN_LOCAL: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

// Consistent mass matrix of a square bilinear quad, divided by a^2.
const MASS_LOCAL: [[f64; 4]; 4] = [
    [4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0],
    [1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0],
];

fn nodal_band(mesh: &Mesh) -> usize {
    mesh.ny + 2
}

fn assemble_laplacian(mesh: &Mesh, scale: f64) -> BandMatrix {
    let m = mesh.num_nodes();
    let mut g = BandMatrix::zeros(m, nodal_band(mesh));
    for conn in &mesh.element_connectivity {
        for (li, &ni) in conn.iter().enumerate() {
            for (lj, &nj) in conn.iter().enumerate() {
                if ni >= nj {
                    g.add(ni, nj, scale * LAPLACIAN_LOCAL[li][lj]);
                }
            }
        }
    }
    g
}

/// Builds `P`, `G`, `v`, the spring matrix and the Dirichlet renumbering.
pub fn assemble_operators(
    mesh: &Mesh,
    bc: &BoundaryConditions,
    beta: f64,
) -> Result<AssembledOperators> {
    if beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization weight must be non-negative, got {beta}"
        )));
    }
    let a = mesh.element_size;
    let k_e = element_stiffness(a, 1.0, 0.3)?;
    let g = assemble_laplacian(mesh, beta);

    let m = mesh.num_nodes();
    let mut v = DVector::zeros(m);
    for conn in &mesh.element_connectivity {
        for &k in conn {
            v[k] += 0.25 * a * a;
        }
    }

    // Dirichlet renumbering (order-preserving, so bandwidths cannot grow)
    let num_dofs = mesh.num_dofs();
    let mut free_dof_map = vec![None; num_dofs];
    let mut fixed = vec![false; num_dofs];
    for &d in &bc.fixed_dofs {
        if d >= num_dofs {
            return Err(Error::InvalidArgument(format!(
                "fixed dof {d} out of range (num_dofs = {num_dofs})"
            )));
        }
        fixed[d] = true;
    }
    let mut num_free = 0;
    for d in 0..num_dofs {
        if !fixed[d] {
            free_dof_map[d] = Some(num_free);
            num_free += 1;
        }
    }

    let mut force = DVector::zeros(num_free);
    for &(dof, magnitude) in &bc.point_loads {
        match free_dof_map[dof] {
            Some(fd) => force[fd] += magnitude,
            None => {
                return Err(Error::InvalidArgument(format!(
                    "point load applied to fixed dof {dof}"
                )))
            }
        }
    }
    let mut output = DVector::zeros(num_free);
    for &(dof, weight) in &bc.output_dofs {
        if let Some(fd) = free_dof_map[dof] {
            output[fd] += weight;
        }
    }
    let mut springs_free = Vec::new();
    for &(dof, k) in &bc.springs {
        if let Some(fd) = free_dof_map[dof] {
            springs_free.push((fd, k));
        }
    }

    let mut element_dofs = Vec::with_capacity(mesh.num_elements());
    let mut stiffness_bandwidth = 0usize;
    for conn in &mesh.element_connectivity {
        let mut dofs = [usize::MAX; 8];
        for (l, &node) in conn.iter().enumerate() {
            for c in 0..2 {
                if let Some(fd) = free_dof_map[2 * node + c] {
                    dofs[2 * l + c] = fd;
                }
            }
        }
        for &di in &dofs {
            if di == usize::MAX {
                continue;
            }
            for &dj in &dofs {
                if dj != usize::MAX && di >= dj {
                    stiffness_bandwidth = stiffness_bandwidth.max(di - dj);
                }
            }
        }
        element_dofs.push(dofs);
    }

    let ones = DVector::from_element(mesh.num_elements(), 1.0);
    let ops = AssembledOperators {
        mesh: mesh.clone(),
        bc: bc.clone(),
        k_e,
        g,
        v,
        springs_free,
        free_dof_map,
        num_free,
        force,
        output,
        element_dofs,
        stiffness_bandwidth,
        pt_ones: DVector::zeros(0),
        beta,
    };
    let pt_ones = ops.apply_p_transpose(&ones);
    Ok(AssembledOperators { pt_ones, ..ops })
}

/// Assembles the reduced global stiffness `K(z) = Σ_e ([Pz]_e)^p k_e`.
pub fn assemble_stiffness(
    ops: &AssembledOperators,
    elemental_density: &DVector<f64>,
    p: f64,
) -> Result<BandMatrix> {
    let mut k = BandMatrix::zeros(ops.num_free, ops.stiffness_bandwidth);
    for (e, dofs) in ops.element_dofs.iter().enumerate() {
        let rho = elemental_density[e];
        if rho <= 0.0 {
            return Err(Error::CorruptedDensity {
                element: e,
                value: rho,
            });
        }
        let w = rho.powf(p);
        for (li, &di) in dofs.iter().enumerate() {
            if di == usize::MAX {
                continue;
            }
            for (lj, &dj) in dofs.iter().enumerate() {
                if dj != usize::MAX && di >= dj {
                    k.add(di, dj, w * ops.k_e[(li, lj)]);
                }
            }
        }
    }
    Ok(k)
}

/// Builds the Helmholtz filter operator for radius `r` (factorized once).
pub fn assemble_filter(mesh: &Mesh, r: f64) -> Result<FilterOperator> {
    if r < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "filter radius must be non-negative, got {r}"
        )));
    }
    let a = mesh.element_size;
    let m = mesh.num_nodes();
    let bw = nodal_band(mesh);
    let mut mass = BandMatrix::zeros(m, bw);
    for conn in &mesh.element_connectivity {
        for (li, &ni) in conn.iter().enumerate() {
            for (lj, &nj) in conn.iter().enumerate() {
                if ni >= nj {
                    mass.add(ni, nj, a * a * MASS_LOCAL[li][lj]);
                }
            }
        }
    }
    let mut shifted = assemble_laplacian(mesh, r * r);
    for j in 0..m {
        let top = bw.min(m - 1 - j);
        for d in 0..=top {
            shifted.add(j + d, j, mass.get(j + d, j));
        }
    }
    let shifted = factorize(&shifted)?;
    Ok(FilterOperator {
        radius: r,
        mass,
        shifted,
    })
}
