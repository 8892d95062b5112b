//! Uniform cell-centered meshes on intervals and rectangles, and the discrete
//! calculus used by the solvers.
//!
//! Cells are numbered `i + nx * j`. Interior x-faces sit between `(i, j)` and
//! `(i + 1, j)` and are numbered `i + (nx - 1) * j`; interior y-faces sit
//! between `(i, j)` and `(i, j + 1)` and are numbered `i + nx * j`. Boundary
//! faces are never stored: the cell equations carry no flux through them.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    origin: [f64; 2],
    extents: [f64; 2],
    cells: [usize; 2],
    h: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// An interior face, identified by axis and its index within that axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub axis: Axis,
    pub index: usize,
}

impl Grid {
    /// Builds a grid. Configurations additionally require at least 3 cells per
    /// axis; the type itself accepts any positive count so that scalar
    /// single-cell problems can be expressed.
    pub fn new(dim: usize, origin: [f64; 2], extents: [f64; 2], cells: [usize; 2]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Argument(format!("grid dimension must be 1 or 2, got {}", dim)));
        }
        let mut cells = cells;
        let mut extents = extents;
        let mut origin = origin;
        if dim == 1 {
            cells[1] = 1;
            extents[1] = 1.0;
            origin[1] = 0.0;
        }
        for axis in 0..dim {
            if cells[axis] == 0 {
                return Err(Error::Argument("grid needs at least one cell per axis".into()));
            }
            if !(extents[axis].is_finite() && extents[axis] > 0.0) {
                return Err(Error::Argument(format!("grid extent must be positive, got {}", extents[axis])));
            }
            if !origin[axis].is_finite() {
                return Err(Error::Argument("grid origin must be finite".into()));
            }
        }
        let h = [extents[0] / cells[0] as f64, extents[1] / cells[1] as f64];
        Ok(Grid {
            dim,
            origin,
            extents,
            cells,
            h,
        })
    }

    pub fn interval(origin: f64, extent: f64, cells: usize) -> Result<Self> {
        Grid::new(1, [origin, 0.0], [extent, 1.0], [cells, 1])
    }

    pub fn rectangle(origin: [f64; 2], extents: [f64; 2], cells: [usize; 2]) -> Result<Self> {
        Grid::new(2, origin, extents, cells)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn extents(&self) -> [f64; 2] {
        self.extents
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn h(&self) -> [f64; 2] {
        self.h
    }

    /// Smallest spacing over the active axes.
    pub fn min_spacing(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0].min(self.h[1])
        }
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0] * self.h[1]
        }
    }

    /// Measure of the whole domain.
    pub fn volume(&self) -> f64 {
        if self.dim == 1 {
            self.extents[0]
        } else {
            self.extents[0] * self.extents[1]
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.cells[0] * j
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.cells[0], k / self.cells[0])
    }

    /// Cell-center coordinates of cell `k` (the y entry is 0 in 1D).
    pub fn center(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.coords(k);
        let x = self.origin[0] + (i as f64 + 0.5) * self.h[0];
        let y = if self.dim == 2 {
            self.origin[1] + (j as f64 + 0.5) * self.h[1]
        } else {
            0.0
        };
        [x, y]
    }

    pub fn n_faces(&self, axis: Axis) -> usize {
        let [nx, ny] = self.cells;
        match axis {
            Axis::X => (nx - 1) * ny,
            Axis::Y if self.dim == 2 => nx * (ny - 1),
            Axis::Y => 0,
        }
    }

    pub fn spacing(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.h[0],
            Axis::Y => self.h[1],
        }
    }

    /// Measure attached to a face for integrating face quantities: the spacing
    /// normal to the face times the face area.
    pub fn face_volume(&self) -> f64 {
        self.cell_volume()
    }

    /// The (left, right) cells of a face, ordered along its axis.
    pub fn face_cells(&self, face: Face) -> (usize, usize) {
        let nx = self.cells[0];
        match face.axis {
            Axis::X => {
                let i = face.index % (nx - 1);
                let j = face.index / (nx - 1);
                let left = self.index(i, j);
                (left, left + 1)
            }
            Axis::Y => {
                let left = face.index;
                (left, left + nx)
            }
        }
    }

    /// Number of boundary faces of cell `k` (used by Dirichlet stencils).
    pub fn boundary_faces(&self, k: usize) -> usize {
        let (i, j) = self.coords(k);
        let [nx, ny] = self.cells;
        let mut count = usize::from(i == 0) + usize::from(i + 1 == nx);
        if self.dim == 2 {
            count += usize::from(j == 0) + usize::from(j + 1 == ny);
        }
        count
    }

    /// Boundary faces of cell `k` split per axis, `[x_count, y_count]`.
    pub fn boundary_faces_per_axis(&self, k: usize) -> [usize; 2] {
        let (i, j) = self.coords(k);
        let [nx, ny] = self.cells;
        let bx = usize::from(i == 0) + usize::from(i + 1 == nx);
        let by = if self.dim == 2 {
            usize::from(j == 0) + usize::from(j + 1 == ny)
        } else {
            0
        };
        [bx, by]
    }

    /// Calls `f(neighbor, axis)` for every interior neighbor of cell `k`.
    pub fn for_each_neighbor(&self, k: usize, mut f: impl FnMut(usize, Axis)) {
        let (i, j) = self.coords(k);
        let [nx, ny] = self.cells;
        if i > 0 {
            f(k - 1, Axis::X);
        }
        if i + 1 < nx {
            f(k + 1, Axis::X);
        }
        if self.dim == 2 {
            if j > 0 {
                f(k - nx, Axis::Y);
            }
            if j + 1 < ny {
                f(k + nx, Axis::Y);
            }
        }
    }

    pub fn zeros(&self) -> Field {
        Field::constant(*self, 0.0)
    }
}

/// One value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Argument(format!(
                "field has {} values but grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.center(k))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

impl std::ops::IndexMut<usize> for Field {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.values[k]
    }
}

/// Values on interior faces, split by axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceValues {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceValues {
    pub fn zeros(grid: &Grid) -> Self {
        FaceValues {
            x: vec![0.0; grid.n_faces(Axis::X)],
            y: vec![0.0; grid.n_faces(Axis::Y)],
        }
    }

    pub fn get(&self, face: Face) -> f64 {
        match face.axis {
            Axis::X => self.x[face.index],
            Axis::Y => self.y[face.index],
        }
    }

    /// Iterates `(face, value)` over all interior faces, x-faces first.
    pub fn iter(&self) -> impl Iterator<Item = (Face, f64)> + '_ {
        let xs = self.x.iter().enumerate().map(|(index, &v)| (Face { axis: Axis::X, index }, v));
        let ys = self.y.iter().enumerate().map(|(index, &v)| (Face { axis: Axis::Y, index }, v));
        xs.chain(ys)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FaceValues {
        FaceValues {
            x: self.x.iter().map(|&v| f(v)).collect(),
            y: self.y.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Two-point differences `(f_right - f_left) / h` on every interior face.
pub fn face_gradient(f: &Field) -> FaceValues {
    let grid = f.grid();
    let mut out = FaceValues::zeros(grid);
    for (index, slot) in out.x.iter_mut().enumerate() {
        let (l, r) = grid.face_cells(Face { axis: Axis::X, index });
        *slot = (f[r] - f[l]) / grid.h[0];
    }
    for (index, slot) in out.y.iter_mut().enumerate() {
        let (l, r) = grid.face_cells(Face { axis: Axis::Y, index });
        *slot = (f[r] - f[l]) / grid.h[1];
    }
    out
}

/// Arithmetic mean of the two adjacent cell values on every interior face.
pub fn face_average(f: &Field) -> FaceValues {
    let grid = f.grid();
    let mut out = FaceValues::zeros(grid);
    for (index, slot) in out.x.iter_mut().enumerate() {
        let (l, r) = grid.face_cells(Face { axis: Axis::X, index });
        *slot = 0.5 * (f[l] + f[r]);
    }
    for (index, slot) in out.y.iter_mut().enumerate() {
        let (l, r) = grid.face_cells(Face { axis: Axis::Y, index });
        *slot = 0.5 * (f[l] + f[r]);
    }
    out
}

/// Per-cell `(flux_out - flux_in) / h` with zero flux through the boundary.
pub fn divergence(grid: &Grid, flux: &FaceValues) -> Field {
    let mut out = grid.zeros();
    for (face, q) in flux.iter() {
        let (l, r) = grid.face_cells(face);
        let h = grid.spacing(face.axis);
        out[l] += q / h;
        out[r] -= q / h;
    }
    out
}

/// Standard 3-point / 5-point Laplacian with homogeneous Neumann data.
pub fn laplacian_neumann(f: &Field) -> Field {
    divergence(f.grid(), &face_gradient(f))
}

/// Laplacian with Dirichlet data imposed through the ghost value
/// `2 * boundary_value - f_interior`.
pub fn laplacian_dirichlet(f: &Field, boundary_value: f64) -> Field {
    let grid = *f.grid();
    let mut out = laplacian_neumann(f);
    for k in 0..grid.len() {
        let [bx, by] = grid.boundary_faces_per_axis(k);
        let jump = 2.0 * (boundary_value - f[k]);
        if bx > 0 {
            out[k] += bx as f64 * jump / (grid.h[0] * grid.h[0]);
        }
        if by > 0 {
            out[k] += by as f64 * jump / (grid.h[1] * grid.h[1]);
        }
    }
    out
}

/// Midpoint-rule integral: values times cell volume, summed in cell order.
pub fn integrate(f: &Field) -> f64 {
    let vol = f.grid().cell_volume();
    f.values().iter().fold(0.0, |acc, v| acc + v * vol)
}

/// Integral of a face quantity, each face weighted by [`Grid::face_volume`].
pub fn integrate_faces(grid: &Grid, values: &FaceValues) -> f64 {
    let vol = grid.face_volume();
    values.x.iter().chain(&values.y).fold(0.0, |acc, v| acc + v * vol)
}

/// Value of `c` carried across `face` by a velocity of the given sign.
pub fn upwind_face_value(c: &Field, velocity_at_face: f64, face: Face) -> f64 {
    let (l, r) = c.grid().face_cells(face);
    if velocity_at_face > 0.0 {
        c[l]
    } else if velocity_at_face < 0.0 {
        c[r]
    } else {
        0.5 * (c[l] + c[r])
    }
}
