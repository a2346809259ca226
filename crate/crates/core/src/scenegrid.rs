//! Grid geometry over the normalized scene and the bank of per-cell
//! scene-memory states.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::data::{Point, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("sub-cell index {index} out of range for {size} sub-cells")]
    SubcellOutOfRange { index: usize, size: usize },
    #[error("cell index {index} out of range for {size} cells")]
    CellOutOfRange { index: usize, size: usize },
    #[error("non-linearity needs at least 3 points, got {0}")]
    TooShort(usize),
    #[error("grid and sub-grid dimensions must be at least 1")]
    ZeroDimension,
    #[error("unknown variant `{0}` (expected a or n)")]
    UnknownVariant(String),
}

/// Uniform two-level partition of `[-1, 1]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridConfig {
    pub grid_dim: usize,
    pub subgrid_dim: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            grid_dim: 8,
            subgrid_dim: 4,
        }
    }
}

impl GridConfig {
    pub fn new(grid_dim: usize, subgrid_dim: usize) -> Result<Self, GridError> {
        if grid_dim == 0 || subgrid_dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        Ok(GridConfig { grid_dim, subgrid_dim })
    }

    pub fn num_cells(&self) -> usize {
        self.grid_dim * self.grid_dim
    }

    pub fn num_subcells(&self) -> usize {
        self.subgrid_dim * self.subgrid_dim
    }

    pub fn cell_width(&self) -> f64 {
        2.0 / self.grid_dim as f64
    }

    /// `(cell, subcell)` containing `p`. Points outside the domain, including
    /// the `+1` edge, clamp into the nearest cell.
    pub fn locate(&self, p: Point) -> (usize, usize) {
        let fine = self.grid_dim * self.subgrid_dim;
        let fine_width = 2.0 / fine as f64;
        let index = |v: f64| {
            let i = ((v.clamp(-1.0, 1.0) + 1.0) / fine_width).floor();
            (i.max(0.0) as usize).min(fine - 1)
        };
        let (fc, fr) = (index(p.x), index(p.y));
        let (col, sub_col) = (fc / self.subgrid_dim, fc % self.subgrid_dim);
        let (row, sub_row) = (fr / self.subgrid_dim, fr % self.subgrid_dim);
        (row * self.grid_dim + col, sub_row * self.subgrid_dim + sub_col)
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.grid_dim, cell % self.grid_dim)
    }

    /// `(x0, y0, x1, y1)` of a cell in normalized coordinates.
    pub fn cell_bounds(&self, cell: usize) -> (f64, f64, f64, f64) {
        let (row, col) = self.row_col(cell);
        let w = self.cell_width();
        let x0 = -1.0 + col as f64 * w;
        let y0 = -1.0 + row as f64 * w;
        (x0, y0, x0 + w, y0 + w)
    }
}

/// One-hot vector of length `size` with the 1 at `index`.
pub fn one_hot(index: usize, size: usize) -> Result<Vec<f64>, GridError> {
    if index >= size {
        return Err(GridError::SubcellOutOfRange { index, size });
    }
    let mut v = vec![0.0; size];
    v[index] = 1.0;
    Ok(v)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PhiMode {
    /// Deviation along y only.
    #[default]
    YAxis,
    /// Larger of the x and y deviations.
    Symmetric,
}

impl fmt::Display for PhiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhiMode::YAxis => "y",
            PhiMode::Symmetric => "symmetric",
        })
    }
}

impl FromStr for PhiMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "y" => Ok(PhiMode::YAxis),
            "symmetric" => Ok(PhiMode::Symmetric),
            other => Err(format!("unknown phi mode `{other}` (expected y or symmetric)")),
        }
    }
}

/// Distance of the middle sample from the chord midpoint, measured along y:
/// `|(y_end - y_0) / 2 + y_0 - y_mid|` with `mid = floor(n / 2)`.
pub fn nonlinearity_phi(points: &[Point]) -> Result<f64, GridError> {
    nonlinearity_phi_with(points, PhiMode::YAxis)
}

pub fn nonlinearity_phi_with(points: &[Point], mode: PhiMode) -> Result<f64, GridError> {
    let n = points.len();
    if n < 3 {
        return Err(GridError::TooShort(n));
    }
    let (first, mid, last) = (points[0], points[n / 2], points[n - 1]);
    let dev = |a: f64, m: f64, b: f64| ((b - a) / 2.0 + a - m).abs();
    let phi_y = dev(first.y, mid.y, last.y);
    Ok(match mode {
        PhiMode::YAxis => phi_y,
        PhiMode::Symmetric => phi_y.max(dev(first.x, mid.x, last.x)),
    })
}

/// Whether scene memory reaches the output head from every cell (`A`) or
/// only from cells crossed by non-linear trajectories (`N`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Variant {
    A,
    #[default]
    N,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A => "a",
            Variant::N => "n",
        })
    }
}

impl FromStr for Variant {
    type Err = GridError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" => Ok(Variant::A),
            "n" | "N" => Ok(Variant::N),
            other => Err(GridError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NonlinearSet {
    pub trajectories: BTreeSet<u64>,
    pub cells: BTreeSet<usize>,
}

impl NonlinearSet {
    pub fn cell_flags(&self, grid: &GridConfig) -> Vec<bool> {
        (0..grid.num_cells()).map(|c| self.cells.contains(&c)).collect()
    }
}

/// Flags every cell visited by a trajectory whose non-linearity exceeds
/// `threshold`. Tracks shorter than three points are never non-linear.
pub fn mark_nonlinear_cells(trajectories: &[Trajectory], threshold: f64, grid: &GridConfig, mode: PhiMode) -> NonlinearSet {
    let mut set = NonlinearSet::default();
    for t in trajectories {
        let positions = t.positions();
        let Ok(phi) = nonlinearity_phi_with(&positions, mode) else {
            continue;
        };
        if phi > threshold {
            set.trajectories.insert(t.target_id);
            set.cells.extend(positions.iter().map(|&p| grid.locate(p).0));
        }
    }
    set
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCellState {
    pub index: usize,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// Hard-control vector: all ones or all zeros.
    pub control: Vec<f64>,
    pub nonlinear: bool,
}

/// Recurrent state of every cell's scene LSTM plus its hard-control vector.
/// The LSTM weights live with the rest of the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GridBank {
    pub config: GridConfig,
    pub hidden: usize,
    pub variant: Variant,
    pub cells: Vec<GridCellState>,
}

impl GridBank {
    pub fn new(config: GridConfig, hidden: usize, variant: Variant) -> Self {
        let cells = (0..config.num_cells())
            .map(|index| GridCellState {
                index,
                h: vec![0.0; hidden],
                c: vec![0.0; hidden],
                control: vec![0.0; hidden],
                nonlinear: false,
            })
            .collect();
        let mut bank = GridBank {
            config,
            hidden,
            variant,
            cells,
        };
        bank.set_flags(&vec![false; config.num_cells()]);
        bank
    }

    /// Records per-cell non-linearity and rebuilds every control vector for
    /// the bank's variant.
    pub fn set_flags(&mut self, flags: &[bool]) {
        assert_eq!(flags.len(), self.cells.len(), "flag count must match cell count");
        for (cell, &flag) in self.cells.iter_mut().zip(flags) {
            cell.nonlinear = flag;
            let on = flag || self.variant == Variant::A;
            cell.control.iter_mut().for_each(|k| *k = if on { 1.0 } else { 0.0 });
        }
    }

    pub fn set_variant(&mut self, variant: Variant) {
        self.variant = variant;
        let flags = self.flags();
        self.set_flags(&flags);
    }

    pub fn flags(&self) -> Vec<bool> {
        self.cells.iter().map(|c| c.nonlinear).collect()
    }

    pub fn cell(&self, index: usize) -> Result<&GridCellState, GridError> {
        self.cells.get(index).ok_or(GridError::CellOutOfRange {
            index,
            size: self.cells.len(),
        })
    }

    /// Zeroes every recurrent state; control vectors are untouched.
    pub fn reset_states(&mut self) {
        for cell in &mut self.cells {
            cell.h.iter_mut().for_each(|v| *v = 0.0);
            cell.c.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `cell_index,row,col,nonlinear_flag` rows with a header line.
    pub fn overlay_csv(&self) -> String {
        overlay_csv(&self.config, &self.flags())
    }
}

pub fn overlay_csv(config: &GridConfig, flags: &[bool]) -> String {
    let mut out = String::from("cell_index,row,col,nonlinear_flag\n");
    for (j, &flag) in flags.iter().enumerate() {
        let (row, col) = config.row_col(j);
        let _ = writeln!(out, "{j},{row},{col},{}", flag as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SceneKind, TrajectoryPoint};

    fn grid() -> GridConfig {
        GridConfig::default()
    }

    #[test]
    fn locate_examples() {
        assert_eq!(grid().locate(Point::new(-1.0, -1.0)), (0, 0));
        assert_eq!(grid().locate(Point::new(0.99, 0.99)), (63, 15));
        assert_eq!(grid().locate(Point::new(1.0, 1.0)), (63, 15));
        assert_eq!(grid().locate(Point::new(-0.4, 0.3)), (42, 1));
        assert_eq!(grid().locate(Point::new(-3.0, 7.0)), (56, 12));
    }

    #[test]
    fn one_hot_examples() {
        let v = one_hot(0, 16).unwrap();
        assert_eq!(v.len(), 16);
        assert_eq!(v[0], 1.0);
        assert_eq!(one_hot(15, 16).unwrap()[15], 1.0);
        for i in 0..16 {
            assert_eq!(one_hot(i, 16).unwrap().iter().sum::<f64>(), 1.0);
        }
        assert_eq!(one_hot(16, 16), Err(GridError::SubcellOutOfRange { index: 16, size: 16 }));
    }

    fn ys(values: &[f64]) -> Vec<Point> {
        values.iter().map(|&y| Point::new(0.0, y)).collect()
    }

    #[test]
    fn phi_examples() {
        assert_eq!(nonlinearity_phi(&ys(&[0.0, 0.5, 1.0])).unwrap(), 0.0);
        assert_eq!(nonlinearity_phi(&ys(&[0.3, 0.3, 0.3, 0.3])).unwrap(), 0.0);
        let bent = nonlinearity_phi(&ys(&[0.0, 0.5, 0.0])).unwrap();
        assert_eq!(bent, 0.5);
        assert!(bent > 0.2);
        assert_eq!(nonlinearity_phi(&ys(&[0.0, 1.0])), Err(GridError::TooShort(2)));
    }

    #[test]
    fn phi_ignores_x() {
        let a = [Point::new(0.0, 0.0), Point::new(5.0, 0.2), Point::new(-3.0, 0.1)];
        let b = [Point::new(9.0, 0.0), Point::new(-1.0, 0.2), Point::new(0.5, 0.1)];
        assert_eq!(nonlinearity_phi(&a).unwrap(), nonlinearity_phi(&b).unwrap());
        let horizontal_bend = [Point::new(0.0, 0.0), Point::new(0.9, 0.0), Point::new(0.0, 0.0)];
        assert_eq!(nonlinearity_phi(&horizontal_bend).unwrap(), 0.0);
        assert_eq!(nonlinearity_phi_with(&horizontal_bend, PhiMode::Symmetric).unwrap(), 0.9);
    }

    #[test]
    fn straight_scene_marks_nothing() {
        let ds = generate_synthetic(SceneKind::Straight, 10, 0.0, 7).unwrap();
        for t in &ds.trajectories {
            assert!(nonlinearity_phi(&t.positions()).unwrap() < 1e-12);
        }
        let set = mark_nonlinear_cells(&ds.trajectories, 0.2, &grid(), PhiMode::YAxis);
        assert!(set.cells.is_empty());
        assert!(set.trajectories.is_empty());
    }

    #[test]
    fn alley_turn_is_nonlinear() {
        let ds = generate_synthetic(SceneKind::AlleyTurn, 10, 0.0, 7).unwrap();
        for t in &ds.trajectories {
            assert!(nonlinearity_phi(&t.positions()).unwrap() > 0.2);
        }
    }

    #[test]
    fn l_turn_marks_every_visited_cell() {
        let ds = generate_synthetic(SceneKind::AlleyTurn, 1, 0.0, 7).unwrap();
        let traj = &ds.trajectories[0];
        let set = mark_nonlinear_cells(&ds.trajectories, 0.2, &grid(), PhiMode::YAxis);
        let visited: BTreeSet<usize> = traj.points.iter().map(|p| grid().locate(p.pos).0).collect();
        assert_eq!(set.cells, visited);
        assert!(visited.len() > 4);
        // the turn cell spans [0, 0.25]^2
        assert!(set.cells.contains(&(4 * 8 + 4)));
    }

    #[test]
    fn short_tracks_are_skipped() {
        let t = Trajectory {
            target_id: 3,
            points: vec![
                TrajectoryPoint { frame: 0, pos: Point::new(0.0, -1.0) },
                TrajectoryPoint { frame: 1, pos: Point::new(0.0, 1.0) },
            ],
        };
        assert!(mark_nonlinear_cells(&[t], 0.2, &grid(), PhiMode::YAxis).cells.is_empty());
    }

    #[test]
    fn variants_set_controls() {
        let mut flags = vec![false; 64];
        flags[5] = true;
        let mut bank = GridBank::new(grid(), 4, Variant::N);
        bank.set_flags(&flags);
        assert_eq!(bank.cells[5].control, vec![1.0; 4]);
        assert_eq!(bank.cells[6].control, vec![0.0; 4]);
        bank.set_variant(Variant::A);
        assert!(bank.cells.iter().all(|c| c.control == vec![1.0; 4]));
        assert_eq!(bank.flags(), flags);
    }

    #[test]
    fn reset_zeroes_states_only() {
        let mut bank = GridBank::new(grid(), 3, Variant::A);
        bank.cells[2].h = vec![1.0, 2.0, 3.0];
        bank.cells[9].c = vec![-1.0, 0.5, 0.0];
        bank.reset_states();
        assert!(bank.cells.iter().all(|c| c.h.iter().chain(&c.c).all(|&v| v == 0.0)));
        let once = bank.clone();
        bank.reset_states();
        assert_eq!(bank, once);
        assert!(bank.cells.iter().all(|c| c.control == vec![1.0; 3]));
    }

    #[test]
    fn overlay_rows() {
        let mut flags = vec![false; 4];
        flags[3] = true;
        let csv = overlay_csv(&GridConfig::new(2, 4).unwrap(), &flags);
        assert_eq!(csv, "cell_index,row,col,nonlinear_flag\n0,0,0,0\n1,0,1,0\n2,1,0,0\n3,1,1,1\n");
    }

    #[test]
    fn cell_lookup_out_of_range() {
        let bank = GridBank::new(grid(), 2, Variant::N);
        assert_eq!(bank.cell(64).unwrap_err(), GridError::CellOutOfRange { index: 64, size: 64 });
    }
}
