//! Objective, gradient, strain-energy and Hessian-model evaluation for the
//! compliance and compliant-mechanism problems.

use crate::assemble::{assemble_stiffness, AssembledOperators};
use crate::error::{Error, Result};
use crate::solve::{factorize, Factorization};
use nalgebra::DVector;

/// Which of the two benchmark objectives is being minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// `J(z) = Fᵀ U(z) + λ zᵀ v`, self-adjoint, strain energies non-negative.
    Compliance,
    /// `J(z) = -Lᵀ U(z) + λ zᵀ v`, needs an adjoint solve; energies signed.
    Mechanism,
}

/// Nodal density vector constrained to the box `[δ_ρ, 1]^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    values: DVector<f64>,
    delta_rho: f64,
}

impl DensityVector {
    pub fn new(values: DVector<f64>, delta_rho: f64) -> Result<Self> {
        if !(delta_rho > 0.0 && delta_rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "density floor must lie in (0, 1), got {delta_rho}"
            )));
        }
        for (k, &z) in values.iter().enumerate() {
            if !(delta_rho..=1.0).contains(&z) {
                return Err(Error::InvalidArgument(format!(
                    "density component {k} = {z} outside [{delta_rho}, 1]"
                )));
            }
        }
        Ok(DensityVector { values, delta_rho })
    }

    pub fn uniform(m: usize, value: f64, delta_rho: f64) -> Result<Self> {
        Self::new(DVector::from_element(m, value), delta_rho)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn delta_rho(&self) -> f64 {
        self.delta_rho
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Displacements and elemental energies for one density.
#[derive(Debug, Clone)]
pub struct StateSolution {
    /// Free-dof displacements.
    pub u: DVector<f64>,
    /// Adjoint displacements (mechanism only).
    pub u_adj: Option<DVector<f64>>,
    /// Elemental energy densities: `E_e = p [Pz]_e^{p-1} Uᵀ k_e U` for
    /// compliance, `Ē_e = -p [Pz]_e^{p-1} Ūᵀ k_e U` for the mechanism (the
    /// sign keeps the gradient in the common form `-PᵀE + λv`).
    pub energy: DVector<f64>,
    /// `Fᵀ U` (compliance) or `-Lᵀ U` (mechanism).
    pub structural_term: f64,
    /// Stiffness factorization, reusable for further right-hand sides.
    pub factorization: Factorization,
}

/// Choice of the diagonal Hessian model for the quadratic subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianKind {
    /// `H_n = α I` with `α = 4 λ A`.
    IdentityScaled,
    /// `ĥ_k = max(2 [PᵀE]_k / z_k, δ_E)`, the reciprocal-expansion curvature.
    Reciprocal,
    /// Mechanism variant with the absolute value, `max(|2 [PᵀĒ]_k / z_k|, δ_E)`.
    ReciprocalAbs,
}

/// Positive-definite diagonal Hessian model.
#[derive(Debug, Clone)]
pub struct HessianModel {
    pub kind: HessianKind,
    pub diag: DVector<f64>,
}

/// Objective value and gradient bundle for one density.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub j: f64,
    pub r: f64,
    pub j_tilde: f64,
    /// Volume fraction over the meshed domain.
    pub volume_fraction: f64,
    pub grad_j_tilde: DVector<f64>,
    pub state: StateSolution,
}

fn element_energy(
    ops: &AssembledOperators,
    elemental_density: &DVector<f64>,
    p: f64,
    u: &DVector<f64>,
    u_left: &DVector<f64>,
) -> DVector<f64> {
    let l = ops.mesh.num_elements();
    let mut energy = DVector::zeros(l);
    for (e, dofs) in ops.element_dofs.iter().enumerate() {
        let mut ue = [0.0; 8];
        let mut we = [0.0; 8];
        for (c, &d) in dofs.iter().enumerate() {
            if d != usize::MAX {
                ue[c] = u[d];
                we[c] = u_left[d];
            }
        }
        let mut quad = 0.0;
        for i in 0..8 {
            let mut row = 0.0;
            for j in 0..8 {
                row += ops.k_e[(i, j)] * ue[j];
            }
            quad += we[i] * row;
        }
        energy[e] = p * elemental_density[e].powf(p - 1.0) * quad;
    }
    energy
}

/// Solves the state problem `(K(z) + K_s) U = F` and fills the elemental
/// energies (running the adjoint solve for mechanism problems).
pub fn solve_state(
    ops: &AssembledOperators,
    z: &DensityVector,
    p: f64,
    kind: ProblemKind,
) -> Result<StateSolution> {
    let elemental = ops.apply_p(z.as_vector());
    let mut k = assemble_stiffness(ops, &elemental, p)?;
    for &(dof, stiffness) in &ops.springs_free {
        k.add(dof, dof, stiffness);
    }
    let factorization = factorize(&k)?;
    let u = factorization.solve(&ops.force)?;
    match kind {
        ProblemKind::Compliance => {
            let energy = element_energy(ops, &elemental, p, &u, &u);
            let structural_term = ops.force.dot(&u);
            Ok(StateSolution {
                u,
                u_adj: None,
                energy,
                structural_term,
                factorization,
            })
        }
        ProblemKind::Mechanism => {
            if ops.output.iter().all(|&w| w == 0.0) {
                return Err(Error::NotMechanism);
            }
            let mut state = StateSolution {
                structural_term: -ops.output.dot(&u),
                u,
                u_adj: None,
                energy: DVector::zeros(0),
                factorization,
            };
            let u_adj = solve_adjoint(ops, &state)?;
            state.energy = -element_energy(ops, &elemental, p, &state.u, &u_adj);
            state.u_adj = Some(u_adj);
            Ok(state)
        }
    }
}

/// Adjoint solve `(K(z) + K_s) Ū = L`, reusing the state factorization.
pub fn solve_adjoint(ops: &AssembledOperators, state: &StateSolution) -> Result<DVector<f64>> {
    if ops.output.iter().all(|&w| w == 0.0) {
        return Err(Error::NotMechanism);
    }
    state.factorization.solve(&ops.output)
}

/// Evaluates `J`, `∇J̃`, the regularization term, the volume fraction and
/// the composite objective `J̃ = J + ½ zᵀGz`.
pub fn objective_and_gradient(
    ops: &AssembledOperators,
    z: &DensityVector,
    p: f64,
    lambda: f64,
    kind: ProblemKind,
) -> Result<Evaluation> {
    let state = solve_state(ops, z, p, kind)?;
    let zv = z.as_vector();
    let j = state.structural_term + lambda * zv.dot(&ops.v);
    let gz = ops.apply_g(zv);
    let r = 0.5 * zv.dot(&gz);
    let grad_j = -ops.apply_p_transpose(&state.energy) + lambda * &ops.v;
    let grad_j_tilde = grad_j + gz;
    let elemental = ops.apply_p(zv);
    let a2 = ops.mesh.element_size * ops.mesh.element_size;
    let volume_fraction = elemental.iter().sum::<f64>() * a2 / ops.half_domain_area();
    Ok(Evaluation {
        j,
        r,
        j_tilde: j + r,
        volume_fraction,
        grad_j_tilde,
        state,
    })
}

/// Builds the diagonal Hessian model from the nodal energy scatter `PᵀE`.
pub fn hessian_model(
    kind: HessianKind,
    z: &DensityVector,
    pt_energy: &DVector<f64>,
    delta_e: f64,
    alpha: f64,
) -> Result<HessianModel> {
    if !(delta_e > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Hessian floor must be positive, got {delta_e}"
        )));
    }
    let m = z.len();
    let zv = z.as_vector();
    let diag = match kind {
        HessianKind::IdentityScaled => DVector::from_element(m, alpha),
        HessianKind::Reciprocal => {
            DVector::from_fn(m, |k, _| (2.0 * pt_energy[k] / zv[k]).max(delta_e))
        }
        HessianKind::ReciprocalAbs => {
            DVector::from_fn(m, |k, _| (2.0 * pt_energy[k] / zv[k]).abs().max(delta_e))
        }
    };
    Ok(HessianModel { kind, diag })
}

/// Discreteness measure of the elemental density field, in percent:
/// domain average of `4 (ρ - δ_ρ)(1 - ρ)`. Zero for binary designs.
pub fn discreteness(z: &DensityVector, ops: &AssembledOperators) -> f64 {
    let elemental = ops.apply_p(z.as_vector());
    let a2 = ops.mesh.element_size * ops.mesh.element_size;
    let d = z.delta_rho();
    let total: f64 = elemental
        .iter()
        .map(|&rho| a2 * 4.0 * (rho - d) * (1.0 - rho))
        .sum();
    100.0 * total / ops.half_domain_area()
}
