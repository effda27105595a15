//! Structured rectangular meshes of bilinear quadrilaterals and the
//! benchmark boundary conditions (MBB half-beam, force inverter).
//!
//! Nodes are numbered column-major bottom-to-top: node `(i, j)` on grid
//! column `i` (0..=nx) and row `j` (0..=ny) has index `i * (ny + 1) + j`.
//! Each node carries two displacement dofs `(2k, 2k + 1)` for `(x, y)`.
//! Elements are numbered the same way: element `(i, j)` has index
//! `i * ny + j`, with its four nodes listed counterclockwise starting at
//! the bottom-left corner.

use crate::error::{Error, Result};

/// Structured grid of square bilinear quad elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    /// Physical side length of each (square) element.
    pub element_size: f64,
    pub node_coords: Vec<[f64; 2]>,
    /// Per-element node indices, counterclockwise from the bottom-left corner.
    pub element_connectivity: Vec<[usize; 4]>,
    pub centroids: Vec<[f64; 2]>,
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    /// Node index for grid position `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        i * (self.ny + 1) + j
    }

    /// Meshed area `nx * ny * a^2`.
    pub fn area(&self) -> f64 {
        (self.nx * self.ny) as f64 * self.element_size * self.element_size
    }
}

/// Supports, loads, springs and the output functional of a benchmark case.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    /// Constrained displacement dofs (sorted, unique).
    pub fixed_dofs: Vec<usize>,
    /// Point loads as `(dof, magnitude)`.
    pub point_loads: Vec<(usize, f64)>,
    /// Grounded springs as `(dof, stiffness)`; mechanism problems only.
    pub springs: Vec<(usize, f64)>,
    /// Output functional L as `(dof, weight)`; mechanism problems only.
    pub output_dofs: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    /// True when the case carries an output functional (mechanism design).
    pub fn is_mechanism(&self) -> bool {
        !self.output_dofs.is_empty()
    }
}

/// Builds an `nx` by `ny` grid of square elements with side `a`.
pub fn build_grid(nx: usize, ny: usize, a: f64) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "element counts must be positive, got {nx} x {ny}"
        )));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "element size must be positive, got {a}"
        )));
    }
    let mut node_coords = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            node_coords.push([i as f64 * a, j as f64 * a]);
        }
    }
    let mut element_connectivity = Vec::with_capacity(nx * ny);
    let mut centroids = Vec::with_capacity(nx * ny);
    let col = ny + 1;
    for i in 0..nx {
        for j in 0..ny {
            let n1 = i * col + j;
            let n2 = (i + 1) * col + j;
            let n3 = (i + 1) * col + j + 1;
            let n4 = i * col + j + 1;
            element_connectivity.push([n1, n2, n3, n4]);
            centroids.push([(i as f64 + 0.5) * a, (j as f64 + 0.5) * a]);
        }
    }
    Ok(Mesh {
        nx,
        ny,
        element_size: a,
        node_coords,
        element_connectivity,
        centroids,
    })
}

/// MBB half-beam: symmetry rollers (zero horizontal displacement) on the
/// left edge, a vertical roller at the bottom-right corner node and a unit
/// downward point load at the top-left corner node.
///
/// The element size is `1 / ny` so the half-domain has height 1 and width
/// `nx / ny`; the full (mirrored) design domain has area `2 * nx / ny`.
pub fn mbb_problem(nx: usize, ny: usize) -> Result<(Mesh, BoundaryConditions)> {
    let a = 1.0 / ny as f64;
    let mesh = build_grid(nx, ny, a)?;
    let mut fixed_dofs = Vec::new();
    for j in 0..=ny {
        fixed_dofs.push(2 * mesh.node(0, j)); // x-dof on the symmetry edge
    }
    fixed_dofs.push(2 * mesh.node(nx, 0) + 1); // vertical roller, bottom-right
    fixed_dofs.sort_unstable();
    let load_dof = 2 * mesh.node(0, ny) + 1;
    let bc = BoundaryConditions {
        fixed_dofs,
        point_loads: vec![(load_dof, -1.0)],
        springs: Vec::new(),
        output_dofs: Vec::new(),
    };
    Ok((mesh, bc))
}

/// Force inverter, top-half model with the horizontal symmetry line of the
/// full domain along the bottom edge.
///
/// Input: spring of stiffness `k_in` plus a unit horizontal force at the
/// bottom-left corner node. Output: spring of stiffness `k_out` and the
/// output functional (weight `-k_out`, opposite sense to the input) at the
/// bottom-right corner node. The bottom edge carries symmetry rollers
/// (zero vertical displacement) and the two top-left corner nodes are fully
/// fixed.
pub fn inverter_problem(
    nx: usize,
    ny: usize,
    k_in: f64,
    k_out: f64,
) -> Result<(Mesh, BoundaryConditions)> {
    if !(k_in > 0.0) || !(k_out > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spring stiffnesses must be positive, got k_in={k_in}, k_out={k_out}"
        )));
    }
    let a = 1.0 / ny as f64;
    let mesh = build_grid(nx, ny, a)?;
    let mut fixed_dofs = Vec::new();
    for i in 0..=nx {
        fixed_dofs.push(2 * mesh.node(i, 0) + 1); // symmetry rollers along the bottom
    }
    // fixed support region at the top-left corner
    for i in 0..=1usize.min(nx) {
        let n = mesh.node(i, ny);
        fixed_dofs.push(2 * n);
        fixed_dofs.push(2 * n + 1);
    }
    fixed_dofs.sort_unstable();
    fixed_dofs.dedup();
    let input_dof = 2 * mesh.node(0, 0);
    let output_dof = 2 * mesh.node(nx, 0);
    let bc = BoundaryConditions {
        fixed_dofs,
        point_loads: vec![(input_dof, 1.0)],
        springs: vec![(input_dof, k_in), (output_dof, k_out)],
        output_dofs: vec![(output_dof, -k_out)],
    };
    Ok((mesh, bc))
}
