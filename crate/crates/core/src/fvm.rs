//! Cell-centered finite volumes: two-point flux diffusion, donor-cell advection and the
//! Dirichlet boundary flux functional.

use crate::error::{check_len, invalid, Result};
use crate::fem::{BoundaryCondition, BoundaryConditions};
use crate::mesh::{FaceKind, Mesh};
use crate::sparse::CsrMatrix;

/// A per-cell scalar coefficient (diffusivity, permeability).
#[derive(Clone, Debug, PartialEq)]
pub enum CellCoefficient {
    Constant(f64),
    PerCell(Vec<f64>),
}

impl CellCoefficient {
    pub fn at(&self, c: usize) -> f64 {
        match self {
            CellCoefficient::Constant(v) => *v,
            CellCoefficient::PerCell(v) => v[c],
        }
    }

    fn validate(&self, n_cells: usize, what: &str) -> Result<()> {
        if let CellCoefficient::PerCell(v) = self {
            check_len(n_cells, v.len())?;
        }
        for c in 0..n_cells {
            let v = self.at(c);
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{what} must be positive, got {v} in cell {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletFace {
    pub cell: usize,
    pub face: usize,
    pub transmissibility: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct FvOperator {
    /// TPFA matrix including the Dirichlet diagonal contributions.
    pub k_fv: CsrMatrix,
    /// TPFA matrix over interior faces only (pure homogeneous Neumann).
    pub k_neumann: CsrMatrix,
    /// `sum_f T_f g_f` over Dirichlet faces of each cell.
    pub b_rhs: Vec<f64>,
    pub dirichlet_faces: Vec<DirichletFace>,
    /// Transmissibility of every face (zero on Neumann boundary faces).
    pub transmissibility: Vec<f64>,
    pub cell_areas: Vec<f64>,
}

impl FvOperator {
    /// Diffusive inflow through Dirichlet faces, `sum_f T_f (g_f - x_c)`, per cell.
    pub fn boundary_functional(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cell_areas.len(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.boundary_functional_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn boundary_functional_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for f in &self.dirichlet_faces {
            out[f.cell] += f.transmissibility * (f.value - x[f.cell]);
        }
    }

    pub fn mass(&self) -> CsrMatrix {
        CsrMatrix::from_diagonal(&self.cell_areas)
    }
}

fn center_to_face(mesh: &Mesh, cell: usize, face: usize) -> f64 {
    let c = mesh.cells[cell].center;
    let m = mesh.faces[face].midpoint;
    (m[0] - c[0]).hypot(m[1] - c[1])
}

/// Two-point flux approximation with harmonic-mean face transmissibilities.
pub fn assemble_tpfa(mesh: &Mesh, diffusivity: &CellCoefficient, bc: &BoundaryConditions) -> Result<FvOperator> {
    let n = mesh.cells.len();
    if n == 0 {
        return Err(invalid("mesh has no finite-volume cells"));
    }
    diffusivity.validate(n, "diffusivity")?;

    let mut interior = Vec::with_capacity(4 * mesh.faces.len());
    let mut diag_extra = vec![0.0; n];
    let mut b_rhs = vec![0.0; n];
    let mut dirichlet_faces = Vec::new();
    let mut transmissibility = vec![0.0; mesh.faces.len()];

    for (f, face) in mesh.faces.iter().enumerate() {
        match face.kind {
            FaceKind::Interior { lo, hi } => {
                let r = center_to_face(mesh, lo, f) / diffusivity.at(lo) + center_to_face(mesh, hi, f) / diffusivity.at(hi);
                let t = face.length / r;
                transmissibility[f] = t;
                interior.extend([(lo, lo, t), (hi, hi, t), (lo, hi, -t), (hi, lo, -t)]);
            }
            FaceKind::Boundary { cell, side } => match bc.side(side) {
                BoundaryCondition::NeumannHomogeneous => {}
                BoundaryCondition::Dirichlet(g) => {
                    let t = face.length * diffusivity.at(cell) / center_to_face(mesh, cell, f);
                    transmissibility[f] = t;
                    diag_extra[cell] += t;
                    b_rhs[cell] += t * g;
                    dirichlet_faces.push(DirichletFace { cell, face: f, transmissibility: t, value: g });
                }
                BoundaryCondition::Robin(_) => {
                    return Err(invalid("Robin conditions are not supported by the finite-volume operator"));
                }
            },
        }
    }

    let k_neumann = CsrMatrix::from_triplets(n, n, &interior)?.mark_symmetric(1e-12)?;
    let mut full = interior;
    full.extend(diag_extra.iter().enumerate().filter(|(_, &t)| t != 0.0).map(|(c, &t)| (c, c, t)));
    let k_fv = CsrMatrix::from_triplets(n, n, &full)?.mark_symmetric(1e-12)?;

    Ok(FvOperator {
        k_fv,
        k_neumann,
        b_rhs,
        dirichlet_faces,
        transmissibility,
        cell_areas: mesh.cells.iter().map(|c| c.area).collect(),
    })
}

/// Donor-cell advection operator.
///
/// `(matrix X + inflow)_c` is the net volumetric outflow of cell `c`; its contribution to
/// `dX_c/dt` is `-(matrix X + inflow)_c / area_c`.
#[derive(Clone, Debug)]
pub struct UpwindOperator {
    pub matrix: CsrMatrix,
    /// Boundary inflow fluxes times the boundary value (non-positive for positive values).
    pub inflow: Vec<f64>,
}

impl UpwindOperator {
    /// Net outflow per cell, `matrix x + inflow`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.matrix.spmv(x)?;
        y.iter_mut().zip(&self.inflow).for_each(|(y, s)| *y += s);
        Ok(y)
    }
}

/// Builds the first-order upwind flux matrix from normal velocities on every face.
///
/// `face_velocity[f]` is measured along `mesh.faces[f].normal`. Boundary inflow faces take
/// their donor value from `inflow_values` (a side without a value contributes zero).
pub fn upwind_advection(
    mesh: &Mesh,
    face_velocity: &[f64],
    inflow_values: &BoundaryConditions,
) -> Result<UpwindOperator> {
    check_len(mesh.faces.len(), face_velocity.len())?;
    let n = mesh.cells.len();
    let mut trip = Vec::with_capacity(2 * mesh.faces.len());
    let mut inflow = vec![0.0; n];
    for (f, (face, &v)) in mesh.faces.iter().zip(face_velocity).enumerate() {
        if !v.is_finite() {
            return Err(invalid(format!("face velocity {f} is not finite")));
        }
        let flux = v * face.length;
        if flux == 0.0 {
            continue;
        }
        match face.kind {
            FaceKind::Interior { lo, hi } => {
                let (donor, receiver) = if flux > 0.0 { (lo, hi) } else { (hi, lo) };
                trip.push((donor, donor, flux.abs()));
                trip.push((receiver, donor, -flux.abs()));
            }
            FaceKind::Boundary { cell, side } => {
                if flux > 0.0 {
                    trip.push((cell, cell, flux));
                } else if let BoundaryCondition::Dirichlet(g) = inflow_values.side(side) {
                    inflow[cell] += flux * g;
                }
            }
        }
    }
    Ok(UpwindOperator { matrix: CsrMatrix::from_triplets(n, n, &trip)?, inflow })
}

/// `dt max|v| / min(dx, dy)`
pub fn cfl_number(mesh: &Mesh, face_velocity: &[f64], dt: f64) -> f64 {
    let vmax = face_velocity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    dt * vmax / mesh.dx().min(mesh.dy())
}

/// The saturating reaction `x -> -x / (|x| + 1)`.
#[inline]
pub fn reaction(x: f64) -> f64 {
    -x / (x.abs() + 1.0)
}

pub fn nonlinear_reaction(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| reaction(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_fv_grid;
    use crate::sparse::cg_solve;

    #[test]
    fn two_cell_neumann_tpfa() {
        // face length 1, center distance 1/2, D = 1: T = D * len / dist = 2
        let mesh = build_fv_grid(1.0, 1.0, 2, 1).unwrap();
        let op = assemble_tpfa(&mesh, &CellCoefficient::Constant(1.0), &BoundaryConditions::all_neumann()).unwrap();
        assert_eq!(op.k_fv.to_dense(), vec![vec![2.0, -2.0], vec![-2.0, 2.0]]);
        assert!(op.b_rhs.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn harmonic_mean_transmissibility() {
        let mesh = build_fv_grid(1.0, 1.0, 2, 1).unwrap();
        let op = assemble_tpfa(&mesh, &CellCoefficient::PerCell(vec![1.0, 100.0]), &BoundaryConditions::all_neumann())
            .unwrap();
        // len / (0.25/1 + 0.25/100)
        assert!((op.k_fv.get(0, 0) - 1.0 / (0.25 + 0.0025)).abs() < 1e-12);
    }

    #[test]
    fn constants_are_conserved() {
        let mesh = build_fv_grid(1.0, 2.0, 5, 4).unwrap();
        let op = assemble_tpfa(&mesh, &CellCoefficient::Constant(0.3), &BoundaryConditions::all_neumann()).unwrap();
        assert!(op.k_fv.spmv(&[2.5; 20]).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_cell_between_dirichlet_values() {
        let mesh = build_fv_grid(1.0, 1.0, 1, 1).unwrap();
        let bc = BoundaryConditions {
            left: BoundaryCondition::Dirichlet(1.0),
            right: BoundaryCondition::Dirichlet(0.0),
            ..BoundaryConditions::all_neumann()
        };
        let op = assemble_tpfa(&mesh, &CellCoefficient::Constant(1.0), &bc).unwrap();
        let (x, _) = cg_solve(&op.k_fv, &op.b_rhs, 1e-14, 10).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14);
        let bc_left = BoundaryConditions { left: BoundaryCondition::Dirichlet(1.0), ..BoundaryConditions::all_neumann() };
        let op = assemble_tpfa(&mesh, &CellCoefficient::Constant(1.0), &bc_left).unwrap();
        let (x, _) = cg_solve(&op.k_fv, &op.b_rhs, 1e-14, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert_eq!(op.boundary_functional(&[1.0]).unwrap(), vec![0.0]);
        assert_eq!(op.boundary_functional(&[0.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn rejects_bad_diffusivity() {
        let mesh = build_fv_grid(1.0, 1.0, 2, 1).unwrap();
        let bc = BoundaryConditions::all_neumann();
        assert!(assemble_tpfa(&mesh, &CellCoefficient::Constant(0.0), &bc).is_err());
        assert!(assemble_tpfa(&mesh, &CellCoefficient::PerCell(vec![1.0, -1.0]), &bc).is_err());
        assert!(assemble_tpfa(&mesh, &CellCoefficient::PerCell(vec![1.0]), &bc).is_err());
    }

    #[test]
    fn zero_velocity_gives_zero_matrix() {
        let mesh = build_fv_grid(1.0, 1.0, 3, 3).unwrap();
        let up = upwind_advection(&mesh, &vec![0.0; mesh.faces.len()], &BoundaryConditions::all_neumann()).unwrap();
        assert_eq!(up.matrix.nnz(), 0);
    }

    #[test]
    fn donor_cell_flux() {
        let mesh = build_fv_grid(1.0, 1.0, 2, 1).unwrap();
        let v = 0.7;
        let vel: Vec<f64> = mesh.faces.iter().map(|f| if f.normal[0] != 0.0 { v * f.normal[0] } else { 0.0 }).collect();
        let bc = BoundaryConditions { left: BoundaryCondition::Dirichlet(1.0), ..BoundaryConditions::all_neumann() };
        let up = upwind_advection(&mesh, &vel, &bc).unwrap();
        let x = [3.0, 5.0];
        let out = up.apply(&x).unwrap();
        // cell 0: receives v*1 from the boundary (value 1), sends v*X0 to cell 1
        assert!((out[0] - (v * 3.0 - v * 1.0)).abs() < 1e-15);
        // cell 1: receives v*X0, sends v*X1 out of the right boundary
        assert!((out[1] - (v * 5.0 - v * 3.0)).abs() < 1e-15);
        assert!((up.matrix.get(1, 0) + v).abs() < 1e-15);
        assert_eq!(up.matrix.get(0, 1), 0.0);
    }

    #[test]
    fn missing_face_velocity() {
        let mesh = build_fv_grid(1.0, 1.0, 2, 1).unwrap();
        assert!(upwind_advection(&mesh, &[0.0; 3], &BoundaryConditions::all_neumann()).is_err());
    }

    #[test]
    fn reaction_values() {
        assert_eq!(nonlinear_reaction(&[0.0, 1.0, -1.0]), vec![0.0, -0.5, 0.5]);
    }
}
