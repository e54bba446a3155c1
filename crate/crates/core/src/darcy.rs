//! Steady Darcy flow on a heterogeneous permeability field.
//!
//! Solves `div(k grad p) = 0` with `p = 1` on the left side, `p = 0` on the right side and
//! no flow through top and bottom, then reconstructs face fluxes `q = -k grad p` (viscosity 1)
//! with the same two-point transmissibilities, so the discrete divergence of the flux is the
//! residual of the pressure solve.

use std::io::Write;
use std::path::Path;

use crate::error::{check_len, invalid, Error, Result};
use crate::fem::{BoundaryCondition, BoundaryConditions};
use crate::fvm::{assemble_tpfa, CellCoefficient};
use crate::mesh::{FaceKind, Mesh, Side};
use crate::sparse::{cg_solve_into, CgOptions};

/// Horizontal high-permeability bands spanning the whole length of the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct StreakGeometry {
    /// Band centers as fractions of `L2`.
    pub centers: Vec<f64>,
    /// Band height as a fraction of `L2`.
    pub height: f64,
    pub k_base: f64,
    /// `k_high / k_base`
    pub contrast: f64,
}

impl Default for StreakGeometry {
    fn default() -> Self {
        Self { centers: vec![0.25, 0.5, 0.75], height: 0.1, k_base: 1.0, contrast: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermeabilityField {
    pub values: Vec<f64>,
    pub in_streak: Vec<bool>,
}

impl PermeabilityField {
    pub fn homogeneous(mesh: &Mesh, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(invalid(format!("permeability must be positive, got {k}")));
        }
        Ok(Self { values: vec![k; mesh.cells.len()], in_streak: vec![false; mesh.cells.len()] })
    }

    pub fn streaks(mesh: &Mesh, geometry: &StreakGeometry) -> Result<Self> {
        if !(geometry.k_base > 0.0 && geometry.contrast > 0.0 && geometry.height > 0.0) {
            return Err(invalid("streak permeability, contrast and height must be positive"));
        }
        let half = 0.5 * geometry.height * mesh.l2;
        let in_streak: Vec<bool> = mesh
            .cells
            .iter()
            // band edges that fall exactly on a cell center exclude that cell
            .map(|c| geometry.centers.iter().any(|&yc| (c.center[1] - yc * mesh.l2).abs() < half - 1e-9 * mesh.l2))
            .collect();
        let values = in_streak
            .iter()
            .map(|&s| if s { geometry.k_base * geometry.contrast } else { geometry.k_base })
            .collect();
        Ok(Self { values, in_streak })
    }

    fn coefficient(&self) -> CellCoefficient {
        CellCoefficient::PerCell(self.values.clone())
    }

    pub fn write_csv(&self, mesh: &Mesh, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "cell,x,y,permeability")?;
        for (c, (cell, k)) in mesh.cells.iter().zip(&self.values).enumerate() {
            writeln!(w, "{c},{},{},{k}", cell.center[0], cell.center[1])?;
        }
        Ok(())
    }
}

fn pressure_bc() -> BoundaryConditions {
    BoundaryConditions {
        left: BoundaryCondition::Dirichlet(1.0),
        right: BoundaryCondition::Dirichlet(0.0),
        ..BoundaryConditions::all_neumann()
    }
}

/// Cell pressures of the steady flow problem.
pub fn solve_pressure(mesh: &Mesh, perm: &PermeabilityField) -> Result<Vec<f64>> {
    check_len(mesh.cells.len(), perm.values.len())?;
    let op = assemble_tpfa(mesh, &perm.coefficient(), &pressure_bc())?;
    let mut p = vec![0.5; mesh.cells.len()];
    let report = cg_solve_into(&op.k_fv, &op.b_rhs, &mut p, CgOptions { tol: 1e-14, max_iter: None }, None)?;
    if !report.converged && report.final_residual_norm > 1e-12 {
        return Err(Error::SolverDivergence { iterations: report.iterations, residual: report.final_residual_norm });
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    /// Volumetric flux through each face along its stored normal.
    pub flux: Vec<f64>,
    /// `flux / face length`
    pub normal_velocity: Vec<f64>,
}

impl VelocityField {
    /// Net outward flux per cell.
    pub fn divergence(&self, mesh: &Mesh) -> Vec<f64> {
        let mut div = vec![0.0; mesh.cells.len()];
        for (face, &q) in mesh.faces.iter().zip(&self.flux) {
            match face.kind {
                FaceKind::Interior { lo, hi } => {
                    div[lo] += q;
                    div[hi] -= q;
                }
                FaceKind::Boundary { cell, .. } => div[cell] += q,
            }
        }
        div
    }

    /// Total outward flux through the faces of one side.
    pub fn side_flux(&self, mesh: &Mesh, side: Side) -> f64 {
        mesh.faces
            .iter()
            .zip(&self.flux)
            .filter(|(f, _)| matches!(f.kind, FaceKind::Boundary { side: s, .. } if s == side))
            .map(|(_, q)| q)
            .sum()
    }

    pub fn max_abs_flux(&self) -> f64 {
        self.flux.iter().fold(0.0, |m, q| m.max(q.abs()))
    }

    pub fn write_csv(&self, mesh: &Mesh, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "face,x,y,nx,ny,normal_velocity,flux")?;
        for (f, face) in mesh.faces.iter().enumerate() {
            writeln!(
                w,
                "{f},{},{},{},{},{:e},{:e}",
                face.midpoint[0], face.midpoint[1], face.normal[0], face.normal[1], self.normal_velocity[f], self.flux[f]
            )?;
        }
        Ok(())
    }
}

/// Face fluxes `T_f (p_upstream - p_downstream)` from a solved pressure.
pub fn reconstruct_velocity(mesh: &Mesh, perm: &PermeabilityField, pressure: &[f64]) -> Result<VelocityField> {
    check_len(mesh.cells.len(), pressure.len())?;
    let op = assemble_tpfa(mesh, &perm.coefficient(), &pressure_bc())?;
    let bc = pressure_bc();
    let flux: Vec<f64> = mesh
        .faces
        .iter()
        .enumerate()
        .map(|(f, face)| {
            let t = op.transmissibility[f];
            match face.kind {
                FaceKind::Interior { lo, hi } => t * (pressure[lo] - pressure[hi]),
                FaceKind::Boundary { cell, side } => match bc.side(side) {
                    BoundaryCondition::Dirichlet(g) => t * (pressure[cell] - g),
                    _ => 0.0,
                },
            }
        })
        .collect();
    let normal_velocity = flux.iter().zip(&mesh.faces).map(|(q, f)| q / f.length).collect();
    Ok(VelocityField { flux, normal_velocity })
}
