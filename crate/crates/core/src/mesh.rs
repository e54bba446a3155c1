//! Structured discretizations of the rectangle `[0, L1] x [0, L2]`.
//!
//! Two views are produced from the same `(nx, ny)` subdivision:
//!
//! * a P1 triangulation whose vertices sit on the grid nodes `(i L1/nx, j L2/ny)`,
//!   every square cut along the lower-left to upper-right diagonal;
//! * a cell-centered finite-volume grid of `nx x ny` rectangles with
//!   centers at `((i + 1/2) L1/nx, (j + 1/2) L2/ny)`.
//!
//! Vertices are numbered `i + j (nx + 1)`, cells `i + j nx`.

use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn outward_normal(self) -> Point {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceKind {
    /// `normal` points from `lo` to `hi`, `lo < hi`.
    Interior { lo: usize, hi: usize },
    /// `normal` points out of the domain.
    Boundary { cell: usize, side: Side },
}

#[derive(Clone, Debug)]
pub struct Face {
    pub kind: FaceKind,
    pub length: f64,
    pub normal: Point,
    pub midpoint: Point,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub center: Point,
    pub area: f64,
    pub faces: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub l1: f64,
    pub l2: f64,
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<([usize; 2], Side)>,
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    /// Largest element diameter of the view(s) built.
    pub h: f64,
}

fn validate(l1: f64, l2: f64, nx: usize, ny: usize) -> Result<()> {
    if !(l1 > 0.0 && l1.is_finite() && l2 > 0.0 && l2.is_finite()) {
        return Err(invalid(format!("domain sides must be positive, got L1={l1}, L2={l2}")));
    }
    if nx == 0 || ny == 0 {
        return Err(invalid(format!("subdivisions must be positive, got nx={nx}, ny={ny}")));
    }
    Ok(())
}

/// Uniform P1 triangulation with `2 nx ny` counter-clockwise triangles.
pub fn build_uniform_triangulation(l1: f64, l2: f64, nx: usize, ny: usize) -> Result<Mesh> {
    validate(l1, l2, nx, ny)?;
    let dx = l1 / nx as f64;
    let dy = l2 / ny as f64;
    let vid = |i: usize, j: usize| i + j * (nx + 1);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([i as f64 * dx, j as f64 * dy]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(([vid(i, 0), vid(i + 1, 0)], Side::Bottom));
        boundary_edges.push(([vid(i, ny), vid(i + 1, ny)], Side::Top));
    }
    for j in 0..ny {
        boundary_edges.push(([vid(0, j), vid(0, j + 1)], Side::Left));
        boundary_edges.push(([vid(nx, j), vid(nx, j + 1)], Side::Right));
    }

    Ok(Mesh {
        l1,
        l2,
        nx,
        ny,
        vertices,
        triangles,
        boundary_edges,
        cells: Vec::new(),
        faces: Vec::new(),
        h: dx.hypot(dy),
    })
}

/// Uniform cell-centered grid of `nx x ny` rectangles.
pub fn build_fv_grid(l1: f64, l2: f64, nx: usize, ny: usize) -> Result<Mesh> {
    validate(l1, l2, nx, ny)?;
    let dx = l1 / nx as f64;
    let dy = l2 / ny as f64;
    let cid = |i: usize, j: usize| i + j * nx;

    let mut cells: Vec<Cell> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| Cell {
            center: [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy],
            area: dx * dy,
            faces: Vec::with_capacity(4),
        })
        .collect();

    let mut faces = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
    // faces normal to x
    for j in 0..ny {
        let yc = (j as f64 + 0.5) * dy;
        for i in 0..=nx {
            let kind = if i == 0 {
                FaceKind::Boundary { cell: cid(0, j), side: Side::Left }
            } else if i == nx {
                FaceKind::Boundary { cell: cid(nx - 1, j), side: Side::Right }
            } else {
                FaceKind::Interior { lo: cid(i - 1, j), hi: cid(i, j) }
            };
            let normal = if i == 0 { [-1.0, 0.0] } else { [1.0, 0.0] };
            faces.push(Face { kind, length: dy, normal, midpoint: [i as f64 * dx, yc] });
        }
    }
    // faces normal to y
    for j in 0..=ny {
        let yf = j as f64 * dy;
        for i in 0..nx {
            let kind = if j == 0 {
                FaceKind::Boundary { cell: cid(i, 0), side: Side::Bottom }
            } else if j == ny {
                FaceKind::Boundary { cell: cid(i, ny - 1), side: Side::Top }
            } else {
                FaceKind::Interior { lo: cid(i, j - 1), hi: cid(i, j) }
            };
            let normal = if j == 0 { [0.0, -1.0] } else { [0.0, 1.0] };
            faces.push(Face { kind, length: dx, normal, midpoint: [(i as f64 + 0.5) * dx, yf] });
        }
    }

    for (f, face) in faces.iter().enumerate() {
        match face.kind {
            FaceKind::Interior { lo, hi } => {
                cells[lo].faces.push(f);
                cells[hi].faces.push(f);
            }
            FaceKind::Boundary { cell, .. } => cells[cell].faces.push(f),
        }
    }

    Ok(Mesh {
        l1,
        l2,
        nx,
        ny,
        vertices: Vec::new(),
        triangles: Vec::new(),
        boundary_edges: Vec::new(),
        cells,
        faces,
        h: dx.hypot(dy),
    })
}

impl Mesh {
    pub fn dx(&self) -> f64 {
        self.l1 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.l2 / self.ny as f64
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        i + j * (self.nx + 1)
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }

    /// Grid-node coordinates along each axis (the FEM vertices form their tensor product).
    pub fn vertex_axes(&self) -> (Vec<f64>, Vec<f64>) {
        let (dx, dy) = (self.dx(), self.dy());
        (
            (0..=self.nx).map(|i| i as f64 * dx).collect(),
            (0..=self.ny).map(|j| j as f64 * dy).collect(),
        )
    }

    /// Cell-center coordinates along each axis.
    pub fn cell_axes(&self) -> (Vec<f64>, Vec<f64>) {
        let (dx, dy) = (self.dx(), self.dy());
        (
            (0..self.nx).map(|i| (i as f64 + 0.5) * dx).collect(),
            (0..self.ny).map(|j| (j as f64 + 0.5) * dy).collect(),
        )
    }

    /// Signed area of triangle `t` (positive for counter-clockwise vertices).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Values of the three P1 hat functions of triangle `t` at `p`.
    pub fn hat_values(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det;
        let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Sides a vertex lies on (empty for interior vertices, two for corners).
    pub fn vertex_sides(&self, v: usize) -> Vec<Side> {
        let (i, j) = (v % (self.nx + 1), v / (self.nx + 1));
        let mut sides = Vec::new();
        if i == 0 {
            sides.push(Side::Left);
        }
        if i == self.nx {
            sides.push(Side::Right);
        }
        if j == 0 {
            sides.push(Side::Bottom);
        }
        if j == self.ny {
            sides.push(Side::Top);
        }
        sides
    }

    /// Outward normal of `face` as seen from `cell`.
    pub fn outward_normal(&self, cell: usize, face: usize) -> Point {
        let f = &self.faces[face];
        match f.kind {
            FaceKind::Interior { hi, .. } if hi == cell => [-f.normal[0], -f.normal[1]],
            _ => f.normal,
        }
    }

    /// Writes `vertices.csv` and `triangles.csv` (and `cells.csv` when the FV view exists).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if !self.vertices.is_empty() {
            let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("vertices.csv"))?);
            writeln!(w, "index,x,y")?;
            for (k, v) in self.vertices.iter().enumerate() {
                writeln!(w, "{k},{},{}", v[0], v[1])?;
            }
            let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("triangles.csv"))?);
            writeln!(w, "index,v0,v1,v2")?;
            for (k, t) in self.triangles.iter().enumerate() {
                writeln!(w, "{k},{},{},{}", t[0], t[1], t[2])?;
            }
        }
        if !self.cells.is_empty() {
            let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("cells.csv"))?);
            writeln!(w, "index,x,y,area")?;
            for (k, c) in self.cells.iter().enumerate() {
                writeln!(w, "{k},{},{},{}", c.center[0], c.center[1], c.area)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_square_triangulation() {
        let m = build_uniform_triangulation(1.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 2);
        let area: f64 = (0..2).map(|t| m.signed_area(t)).sum();
        assert!((area - 1.0).abs() < 1e-15);
    }

    #[test]
    fn counting_formula() {
        let m = build_uniform_triangulation(1.0, 1.0, 2, 2).unwrap();
        assert_eq!(m.vertices.len(), 9);
        assert_eq!(m.triangles.len(), 8);
        let m = build_uniform_triangulation(2.0, 3.0, 5, 7).unwrap();
        assert_eq!(m.vertices.len(), 6 * 8);
        assert_eq!(m.triangles.len(), 70);
        assert_eq!(m.boundary_edges.len(), 2 * (5 + 7));
    }

    #[test]
    fn fine_mesh_parameter_and_area() {
        let m = build_uniform_triangulation(1.0, 1.0, 100, 100).unwrap();
        assert!((m.h - 2f64.sqrt() / 100.0).abs() < 1e-15);
        let area: f64 = (0..m.triangles.len()).map(|t| m.signed_area(t)).sum();
        assert!((area - 1.0).abs() < 1e-12);
        assert!((0..m.triangles.len()).all(|t| m.signed_area(t) > 0.0));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_uniform_triangulation(0.0, 1.0, 1, 1).is_err());
        assert!(build_uniform_triangulation(1.0, -1.0, 1, 1).is_err());
        assert!(build_uniform_triangulation(1.0, 1.0, 0, 1).is_err());
        assert!(build_fv_grid(1.0, 1.0, 1, 0).is_err());
        assert!(build_fv_grid(f64::NAN, 1.0, 1, 1).is_err());
    }

    #[test]
    fn fv_two_by_two() {
        let m = build_fv_grid(1.0, 1.0, 2, 2).unwrap();
        assert_eq!(m.cells.len(), 4);
        assert!(m.cells.iter().all(|c| (c.area - 0.25).abs() < 1e-15));
        let interior = m.faces.iter().filter(|f| matches!(f.kind, FaceKind::Interior { .. })).count();
        assert_eq!(interior, 4);
        assert_eq!(m.faces.len() - interior, 8);
    }

    #[test]
    fn fv_single_cell_has_no_interior_faces() {
        let m = build_fv_grid(1.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.cells.len(), 1);
        assert!(m.faces.iter().all(|f| matches!(f.kind, FaceKind::Boundary { .. })));
    }

    #[test]
    fn fv_cell_centers() {
        let m = build_fv_grid(2.0, 1.0, 2, 1).unwrap();
        assert_eq!(m.cells[0].center, [0.5, 0.5]);
        assert_eq!(m.cells[1].center, [1.5, 0.5]);
    }

    #[test]
    fn corner_vertex_sides() {
        let m = build_uniform_triangulation(1.0, 1.0, 3, 2).unwrap();
        assert_eq!(m.vertex_sides(0), vec![Side::Left, Side::Bottom]);
        assert!(m.vertex_sides(m.vertex_index(1, 1)).is_empty());
        assert_eq!(m.vertex_sides(m.vertex_index(3, 2)), vec![Side::Right, Side::Top]);
    }

    #[test]
    fn csv_dump_has_headers() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_uniform_triangulation(1.0, 1.0, 1, 1).unwrap();
        m.write_csv(dir.path()).unwrap();
        let v = std::fs::read_to_string(dir.path().join("vertices.csv")).unwrap();
        assert!(v.starts_with("index,x,y\n0,0,0\n"));
        let t = std::fs::read_to_string(dir.path().join("triangles.csv")).unwrap();
        assert_eq!(t.lines().count(), 3);
    }
}
