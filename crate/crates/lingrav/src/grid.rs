use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic (t, x) lattice carrying the symmetry-reduced fields.
///
/// The x-direction is a circle of period `l`; the two transverse directions
/// are unit circles along which all fields are constant, so transverse
/// integrals contribute a factor of one. Coordinate light speed is 1 in both
/// charts, and construction enforces dt <= 0.5 dx.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nt: usize,
    pub nx: usize,
    pub t0: f64,
    pub t1: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl Grid {
    pub fn new(nt: usize, nx: usize, t0: f64, t1: f64, l: f64) -> Result<Self> {
        if nt < 4 {
            return Err(Error::Grid(format!("nt = {nt} too small (need >= 4)")));
        }
        if nx < 4 {
            return Err(Error::Grid(format!("nx = {nx} too small (need >= 4)")));
        }
        if !(t1 > t0) {
            return Err(Error::Grid(format!("empty time range [{t0}, {t1}]")));
        }
        if !(l > 0.0) {
            return Err(Error::Grid(format!("spatial period L = {l} must be positive")));
        }
        let grid = Grid { nt, nx, t0, t1, l };
        let (dt, dx) = (grid.dt(), grid.dx());
        if dt > 0.5 * dx {
            return Err(Error::Cfl { dt, limit: 0.5 * dx });
        }
        Ok(grid)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / (self.nt - 1) as f64
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.l / self.nx as f64
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        self.t0 + self.dt() * j as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.dx() * i as f64
    }

    /// Periodic index wrap in the x-direction.
    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.nx as isize) as usize
    }

    /// Shortest periodic distance between two x-coordinates.
    pub fn periodic_dist(&self, x0: f64, x1: f64) -> f64 {
        let mut d = (x0 - x1).rem_euclid(self.l);
        if d > 0.5 * self.l {
            d = self.l - d;
        }
        d
    }

    pub fn check_time_index(&self, j: usize) -> Result<()> {
        if j >= self.nt {
            return Err(Error::Index(format!("time index {j} out of range (nt = {})", self.nt)));
        }
        Ok(())
    }

    /// Interior time indices: at least two layers away from either boundary,
    /// where one-sided stencils would degrade the order.
    pub fn is_interior_time(&self, j: usize) -> bool {
        j >= 2 && j + 2 < self.nt
    }

    /// Grid with both resolutions doubled; used by the convergence harness.
    pub fn refined(&self) -> Result<Self> {
        Grid::new(self.nt * 2, self.nx * 2, self.t0, self.t1, self.l)
    }
}

/// Inclusive index window in (t, x); x bounds may describe a wrapped interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexWindow {
    pub t_lo: usize,
    pub t_hi: usize,
    pub x_lo: usize,
    pub x_hi: usize,
}

impl IndexWindow {
    pub fn contains(&self, j: usize, i: usize, nx: usize) -> bool {
        if j < self.t_lo || j > self.t_hi {
            return false;
        }
        if self.x_lo <= self.x_hi {
            i >= self.x_lo && i <= self.x_hi
        } else {
            // wrapped interval
            i >= self.x_lo || i <= self.x_hi % nx
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cfl_enforced() {
        // dx = 2pi/16 ~ 0.39, so dt must stay below ~0.196
        assert!(Grid::new(8, 16, 0.0, 2.0, std::f64::consts::TAU).is_err());
        assert!(Grid::new(64, 16, 0.0, 2.0, std::f64::consts::TAU).is_ok());
    }

    #[test]
    fn wrap_is_periodic() {
        let g = Grid::new(64, 16, 0.0, 2.0, std::f64::consts::TAU).unwrap();
        assert_eq!(g.wrap(-1), 15);
        assert_eq!(g.wrap(16), 0);
        assert_eq!(g.wrap(17), 1);
    }
}
