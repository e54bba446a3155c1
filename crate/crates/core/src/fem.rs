//! P1 finite-element operators for `A = div(D grad .) + d00 I` on a uniform triangulation.
//!
//! The stiffness matrix `K` carries `-div(D grad .)` (plus Robin boundary terms), so it is
//! symmetric positive semi-definite. The zeroth-order term `d00 <= 0` is kept separate and
//! only enters the implicit system as `dt |d00| M`.

use crate::error::{check_len, invalid, Error, Result};
use crate::mesh::{Mesh, Side};
use crate::sparse::{cg_solve_strict, CgOptions, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryCondition {
    NeumannHomogeneous,
    Dirichlet(f64),
    /// `D grad u . n + sigma u = 0`
    Robin(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryConditions {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub bottom: BoundaryCondition,
    pub top: BoundaryCondition,
}

impl BoundaryConditions {
    pub fn all_neumann() -> Self {
        Self::uniform(BoundaryCondition::NeumannHomogeneous)
    }

    pub fn uniform(bc: BoundaryCondition) -> Self {
        Self { left: bc, right: bc, bottom: bc, top: bc }
    }

    pub fn side(&self, side: Side) -> BoundaryCondition {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }
}

pub type Tensor2 = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq)]
pub enum DiffusionTensor {
    Constant(Tensor2),
    PerElement(Vec<Tensor2>),
}

impl DiffusionTensor {
    pub fn isotropic(d: f64) -> Self {
        DiffusionTensor::Constant([[d, 0.0], [0.0, d]])
    }

    fn on(&self, t: usize) -> Tensor2 {
        match self {
            DiffusionTensor::Constant(d) => *d,
            DiffusionTensor::PerElement(ds) => ds[t],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    pub diffusion: DiffusionTensor,
    pub d00: f64,
    pub bc: BoundaryConditions,
}

impl OperatorSpec {
    pub fn laplacian(d: f64) -> Self {
        Self { diffusion: DiffusionTensor::isotropic(d), d00: 0.0, bc: BoundaryConditions::all_neumann() }
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    /// `|d00|`, the strength of the zeroth-order decay term.
    pub reaction: f64,
    /// Sorted `(vertex, value)` pairs.
    pub dirichlet: Vec<(usize, f64)>,
    pub h: f64,
}

fn min_eigenvalue(d: &Tensor2) -> f64 {
    let (a, b, c) = (d[0][0], 0.5 * (d[0][1] + d[1][0]), d[1][1]);
    0.5 * (a + c) - (0.25 * (a - c).powi(2) + b * b).sqrt()
}

/// Assembles exact P1 mass and stiffness matrices; Dirichlet vertices are recorded, not eliminated.
pub fn assemble(mesh: &Mesh, spec: &OperatorSpec) -> Result<DiscreteOperator> {
    if mesh.triangles.is_empty() {
        return Err(invalid("mesh has no triangulation"));
    }
    if let DiffusionTensor::PerElement(ds) = &spec.diffusion {
        check_len(mesh.triangles.len(), ds.len())?;
    }
    if !(spec.d00 <= 0.0) {
        return Err(invalid(format!("zeroth-order coefficient must be <= 0, got {}", spec.d00)));
    }

    let n = mesh.vertices.len();
    let mut mass = Vec::with_capacity(9 * mesh.triangles.len());
    let mut stiff = Vec::with_capacity(9 * mesh.triangles.len());

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let d = spec.diffusion.on(t);
        if (d[0][1] - d[1][0]).abs() > 1e-12 * (d[0][1].abs() + 1.0) {
            return Err(invalid(format!("diffusion tensor on element {t} is not symmetric")));
        }
        let lam = min_eigenvalue(&d);
        if !(lam > 0.0) {
            return Err(Error::Ellipticity { element: t, min_eigenvalue: lam });
        }
        let area = mesh.signed_area(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle(t));
        }
        let p = tri.map(|v| mesh.vertices[v]);
        // gradients of the hat functions: grad phi_k = (y_{k+1} - y_{k+2}, x_{k+2} - x_{k+1}) / (2 area)
        let grads: [[f64; 2]; 3] = std::array::from_fn(|k| {
            let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
            [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)]
        });
        for a in 0..3 {
            let dg = [
                d[0][0] * grads[a][0] + d[0][1] * grads[a][1],
                d[1][0] * grads[a][0] + d[1][1] * grads[a][1],
            ];
            for b in 0..3 {
                let k = area * (dg[0] * grads[b][0] + dg[1] * grads[b][1]);
                stiff.push((tri[a], tri[b], k));
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mass.push((tri[a], tri[b], m));
            }
        }
    }

    let mut dirichlet = Vec::new();
    for &([v0, v1], side) in &mesh.boundary_edges {
        match spec.bc.side(side) {
            BoundaryCondition::Robin(sigma) => {
                let p0 = mesh.vertices[v0];
                let p1 = mesh.vertices[v1];
                let len = (p1[0] - p0[0]).hypot(p1[1] - p0[1]);
                stiff.push((v0, v0, sigma * len / 3.0));
                stiff.push((v1, v1, sigma * len / 3.0));
                stiff.push((v0, v1, sigma * len / 6.0));
                stiff.push((v1, v0, sigma * len / 6.0));
            }
            BoundaryCondition::Dirichlet(g) => {
                dirichlet.push((v0, g));
                dirichlet.push((v1, g));
            }
            BoundaryCondition::NeumannHomogeneous => {}
        }
    }
    dirichlet.sort_by_key(|&(v, _)| v);
    dirichlet.dedup_by_key(|&mut (v, _)| v);

    Ok(DiscreteOperator {
        mass: CsrMatrix::from_triplets(n, n, &mass)?.mark_symmetric(1e-12)?,
        stiffness: CsrMatrix::from_triplets(n, n, &stiff)?.mark_symmetric(1e-10)?,
        reaction: -spec.d00,
        dirichlet,
        h: mesh.h,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// Nodal sampling; the projection is the identity on vertex values.
    #[default]
    Nodal,
    /// Galerkin L2 projection `M x = (f, phi_i)`.
    L2,
}

/// Applies `P_h` to a field given by its vertex samples.
///
/// In [`ProjectionMode::L2`] the right-hand side integrates the piecewise-linear interpolant
/// of the samples, so the result reproduces them up to solver tolerance.
pub fn project_ph(op: &DiscreteOperator, samples: &[f64], mode: ProjectionMode) -> Result<Vec<f64>> {
    check_len(op.mass.n_rows(), samples.len())?;
    match mode {
        ProjectionMode::Nodal => Ok(samples.to_vec()),
        ProjectionMode::L2 => {
            let rhs = op.mass.spmv(samples)?;
            let mut x = samples.to_vec();
            cg_solve_strict(&op.mass, &rhs, &mut x, CgOptions { tol: 1e-13, max_iter: None })?;
            Ok(x)
        }
    }
}

// Dunavant degree-4 rule on the reference triangle: (weight, l1, l2, l3), weights sum to 1.
const DUNAVANT4: [(f64, [f64; 3]); 6] = [
    (0.223_381_589_678_011, [0.108_103_018_168_070, 0.445_948_490_915_965, 0.445_948_490_915_965]),
    (0.223_381_589_678_011, [0.445_948_490_915_965, 0.108_103_018_168_070, 0.445_948_490_915_965]),
    (0.223_381_589_678_011, [0.445_948_490_915_965, 0.445_948_490_915_965, 0.108_103_018_168_070]),
    (0.109_951_743_655_322, [0.816_847_572_980_459, 0.091_576_213_509_771, 0.091_576_213_509_771]),
    (0.109_951_743_655_322, [0.091_576_213_509_771, 0.816_847_572_980_459, 0.091_576_213_509_771]),
    (0.109_951_743_655_322, [0.091_576_213_509_771, 0.091_576_213_509_771, 0.816_847_572_980_459]),
];

/// L2 projection of a continuous function onto the P1 space.
pub fn l2_project_fn(mesh: &Mesh, op: &DiscreteOperator, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    let n = mesh.vertices.len();
    check_len(op.mass.n_rows(), n)?;
    let mut rhs = vec![0.0; n];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        let p = tri.map(|v| mesh.vertices[v]);
        for (w, l) in DUNAVANT4 {
            let x = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
            let y = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
            let fv = f(x, y);
            for k in 0..3 {
                rhs[tri[k]] += area * w * fv * l[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    cg_solve_strict(&op.mass, &rhs, &mut x, CgOptions { tol: 1e-13, max_iter: None })?;
    Ok(x)
}

/// The Galerkin form of `I - dt A_h` with Dirichlet rows replaced by unit rows.
///
/// Eliminated columns are kept in `lift` so the right-hand side can be corrected.
#[derive(Clone, Debug)]
pub struct ImplicitSystem {
    pub matrix: CsrMatrix,
    pub dt: f64,
    /// `(row, dirichlet vertex, coefficient)` for every eliminated off-diagonal entry.
    lift: Vec<(usize, usize, f64)>,
    dirichlet: Vec<(usize, f64)>,
}

impl ImplicitSystem {
    /// Builds `mass + dt (stiffness + reaction mass)` and eliminates `dirichlet` dofs symmetrically.
    pub fn new(
        mass: &CsrMatrix,
        stiffness: &CsrMatrix,
        reaction: f64,
        dirichlet: &[(usize, f64)],
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let base = mass.lin_comb(1.0 + dt * reaction, stiffness, dt)?;
        if dirichlet.is_empty() {
            return Ok(Self { matrix: base, dt, lift: Vec::new(), dirichlet: Vec::new() });
        }
        let n = base.n_rows();
        let mut is_dir = vec![false; n];
        for &(v, _) in dirichlet {
            is_dir[v] = true;
        }
        let mut trip = Vec::with_capacity(base.nnz());
        let mut lift = Vec::new();
        for (i, j, v) in base.iter() {
            match (is_dir[i], is_dir[j]) {
                (false, false) => trip.push((i, j, v)),
                (false, true) => lift.push((i, j, v)),
                _ => {}
            }
        }
        trip.extend(dirichlet.iter().map(|&(v, _)| (v, v, 1.0)));
        let matrix = CsrMatrix::from_triplets(n, n, &trip)?.mark_symmetric(1e-10)?;
        Ok(Self { matrix, dt, lift, dirichlet: dirichlet.to_vec() })
    }

    /// Converts `M b` into the right-hand side of the eliminated system.
    pub fn apply_boundary(&self, rhs: &mut [f64]) {
        if self.dirichlet.is_empty() {
            return;
        }
        let mut value = vec![f64::NAN; rhs.len()];
        for &(v, g) in &self.dirichlet {
            value[v] = g;
        }
        for &(i, j, a) in &self.lift {
            rhs[i] -= a * value[j];
        }
        for &(v, g) in &self.dirichlet {
            rhs[v] = g;
        }
    }
}

/// `I - dt A_h` for an assembled FEM operator.
pub fn implicit_step_matrix(op: &DiscreteOperator, dt: f64) -> Result<ImplicitSystem> {
    ImplicitSystem::new(&op.mass, &op.stiffness, op.reaction, &op.dirichlet, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_uniform_triangulation;

    fn unit_square(n: usize) -> Mesh {
        build_uniform_triangulation(1.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn mass_sums_to_area() {
        let op = assemble(&unit_square(1), &OperatorSpec::laplacian(1.0)).unwrap();
        let total: f64 = op.mass.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constants_in_neumann_kernel() {
        let op = assemble(&unit_square(1), &OperatorSpec::laplacian(1.0)).unwrap();
        let k1 = op.stiffness.spmv(&[1.0; 4]).unwrap();
        assert!(k1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_triangle_stiffness_by_hand() {
        // v0=(0,0) v1=(1,0) v2=(0,1) v3=(1,1); triangles (0,1,3), (0,3,2)
        let op = assemble(&unit_square(1), &OperatorSpec::laplacian(1.0)).unwrap();
        let expected_k = [
            [1.0, -0.5, -0.5, 0.0],
            [-0.5, 1.0, 0.0, -0.5],
            [-0.5, 0.0, 1.0, -0.5],
            [0.0, -0.5, -0.5, 1.0],
        ];
        let expected_m = [
            [2.0 / 12.0, 1.0 / 24.0, 1.0 / 24.0, 2.0 / 24.0],
            [1.0 / 24.0, 1.0 / 12.0, 0.0, 1.0 / 24.0],
            [1.0 / 24.0, 0.0, 1.0 / 12.0, 1.0 / 24.0],
            [2.0 / 24.0, 1.0 / 24.0, 1.0 / 24.0, 2.0 / 12.0],
        ];
        let k = op.stiffness.to_dense();
        let m = op.mass.to_dense();
        let sys = implicit_step_matrix(&op, 0.1).unwrap().matrix.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[i][j] - expected_k[i][j]).abs() < 1e-14, "K[{i}][{j}]");
                assert!((m[i][j] - expected_m[i][j]).abs() < 1e-14, "M[{i}][{j}]");
                let s = expected_m[i][j] + 0.1 * expected_k[i][j];
                assert!((sys[i][j] - s).abs() < 1e-14, "S[{i}][{j}]");
            }
        }
    }

    #[test]
    fn small_dt_tends_to_mass() {
        let op = assemble(&unit_square(3), &OperatorSpec::laplacian(1.0)).unwrap();
        let sys = implicit_step_matrix(&op, 1e-12).unwrap();
        for (i, j, v) in sys.matrix.iter() {
            assert!((v - op.mass.get(i, j)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_positive_dt() {
        let op = assemble(&unit_square(1), &OperatorSpec::laplacian(1.0)).unwrap();
        assert!(implicit_step_matrix(&op, 0.0).is_err());
        assert!(implicit_step_matrix(&op, -1.0).is_err());
    }

    #[test]
    fn dirichlet_rows_become_unit_rows() {
        let mut spec = OperatorSpec::laplacian(1.0);
        spec.bc.left = BoundaryCondition::Dirichlet(2.0);
        let mesh = unit_square(2);
        let op = assemble(&mesh, &spec).unwrap();
        assert_eq!(op.dirichlet.iter().map(|d| d.0).collect::<Vec<_>>(), vec![0, 3, 6]);
        let sys = implicit_step_matrix(&op, 0.1).unwrap();
        for &(v, _) in &op.dirichlet {
            let row: Vec<_> = sys.matrix.row(v).collect();
            assert_eq!(row, vec![(v, 1.0)]);
        }
        let mut rhs = vec![0.0; 9];
        sys.apply_boundary(&mut rhs);
        assert_eq!(rhs[0], 2.0);
        assert!(rhs[1] > 0.0, "lift from the eliminated column");
    }

    #[test]
    fn ellipticity_and_degenerate_checks() {
        let mesh = unit_square(1);
        let spec = OperatorSpec {
            diffusion: DiffusionTensor::Constant([[1.0, 2.0], [2.0, 1.0]]),
            d00: 0.0,
            bc: BoundaryConditions::all_neumann(),
        };
        assert!(matches!(assemble(&mesh, &spec), Err(Error::Ellipticity { .. })));
        let mut bad = mesh.clone();
        bad.triangles[0] = [0, 1, 1];
        assert!(matches!(assemble(&bad, &OperatorSpec::laplacian(1.0)), Err(Error::DegenerateTriangle(0))));
        let mut pos = OperatorSpec::laplacian(1.0);
        pos.d00 = 0.5;
        assert!(assemble(&mesh, &pos).is_err());
    }

    #[test]
    fn robin_adds_boundary_mass() {
        let mesh = unit_square(4);
        let spec = OperatorSpec {
            bc: BoundaryConditions::uniform(BoundaryCondition::Robin(1.0)),
            ..OperatorSpec::laplacian(1.0)
        };
        let op = assemble(&mesh, &spec).unwrap();
        // 1^T K 1 = sigma |boundary|
        let q = op.stiffness.quadratic_form(&vec![1.0; 25]).unwrap();
        assert!((q - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nodal_projection_is_identity() {
        let op = assemble(&unit_square(2), &OperatorSpec::laplacian(1.0)).unwrap();
        let v: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.0).collect();
        assert_eq!(project_ph(&op, &v, ProjectionMode::Nodal).unwrap(), v);
        assert!(project_ph(&op, &v[..4], ProjectionMode::Nodal).is_err());
    }

    #[test]
    fn l2_projection_reproduces_constants() {
        let mesh = unit_square(5);
        let op = assemble(&mesh, &OperatorSpec::laplacian(1.0)).unwrap();
        let x = project_ph(&op, &vec![3.5; 36], ProjectionMode::L2).unwrap();
        assert!(x.iter().all(|v| (v - 3.5).abs() < 1e-11));
        let x = l2_project_fn(&mesh, &op, |_, _| -2.0).unwrap();
        assert!(x.iter().all(|v| (v + 2.0).abs() < 1e-11));
    }
}
