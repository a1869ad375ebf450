//! Analytic cosmological vacuum charts on the periodic grid.
//!
//! Both charts are conformally flat, g = a(t)^2 diag(-1,1,1,1), with a == 1
//! on the Minkowski torus and a(eta) = -1/(H eta) on the spatially identified
//! flat de Sitter slicing (eta < 0). Christoffels and curvature come from
//! closed-form expressions; nothing geometric is obtained by numerical
//! differentiation, so discretization error lives entirely in the
//! perturbation fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartKind {
    MinkowskiTorus,
    DeSitterFlatChart,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub kind: ChartKind,
    /// Hubble rate; ignored for the Minkowski torus.
    #[serde(default)]
    pub hubble: f64,
}

impl BackgroundSpec {
    pub fn minkowski() -> Self {
        BackgroundSpec { kind: ChartKind::MinkowskiTorus, hubble: 0.0 }
    }

    pub fn de_sitter(hubble: f64) -> Self {
        BackgroundSpec { kind: ChartKind::DeSitterFlatChart, hubble }
    }

    pub fn lambda(&self) -> f64 {
        match self.kind {
            ChartKind::MinkowskiTorus => 0.0,
            ChartKind::DeSitterFlatChart => 3.0 * self.hubble * self.hubble,
        }
    }
}

/// Serializable pairing of a chart with its grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BackgroundConfig {
    pub kind: ChartKind,
    #[serde(default)]
    pub hubble: f64,
    pub grid: Grid,
}

/// Geometry of a single time level. All charts here are spatially
/// homogeneous, so geometry depends on the time index only.
#[derive(Debug, Clone)]
pub struct LevelGeometry {
    pub a: f64,
    /// conformal Hubble rate a'/a
    pub hub: f64,
    /// d(hub)/dt
    pub hub_prime: f64,
    /// diagonal of g_{ab}
    pub g: [f64; DIM],
    /// diagonal of g^{ab}
    pub g_inv: [f64; DIM],
    /// Gamma^a_{bc}
    pub gamma: [[[f64; DIM]; DIM]; DIM],
    /// d/dt of Gamma^a_{bc}, closed form
    pub gamma_dot: [[[f64; DIM]; DIM]; DIM],
    /// R_{abc}{}^d
    pub riemann: [[[[f64; DIM]; DIM]; DIM]; DIM],
    /// R^c{}_{ab}{}^d, the index arrangement contracted against gamma_{cd}
    /// in the tensor wave operator
    pub riemann_ud: [[[[f64; DIM]; DIM]; DIM]; DIM],
    pub ricci: [[f64; DIM]; DIM],
    pub ricci_scalar: f64,
    pub sqrt_minus_g: f64,
    /// volume factor of the induced metric on the constant-t slice
    pub sqrt_h: f64,
    /// future-pointing unit normal of the slice, upper index
    pub normal_up: [f64; DIM],
    /// n_a = g_{ab} n^b
    pub normal_down: [f64; DIM],
}

/// Full geometry record at a grid point, as handed out by `geometry_at`.
#[derive(Debug, Clone)]
pub struct GeometryPoint {
    pub g: [[f64; DIM]; DIM],
    pub g_inv: [[f64; DIM]; DIM],
    pub gamma: [[[f64; DIM]; DIM]; DIM],
    pub riemann: [[[[f64; DIM]; DIM]; DIM]; DIM],
    pub ricci: [[f64; DIM]; DIM],
    pub ricci_scalar: f64,
    pub sqrt_minus_g: f64,
    pub normal: [f64; DIM],
}

#[derive(Debug, Clone)]
pub struct Background {
    pub spec: BackgroundSpec,
    pub grid: Grid,
    lambda: f64,
    levels: Vec<LevelGeometry>,
}

fn scale_factor(spec: &BackgroundSpec, t: f64) -> (f64, f64, f64) {
    match spec.kind {
        ChartKind::MinkowskiTorus => (1.0, 0.0, 0.0),
        ChartKind::DeSitterFlatChart => {
            // a = -1/(H eta); hub = a'/a = -1/eta; hub' = 1/eta^2
            let h = spec.hubble;
            let a = -1.0 / (h * t);
            let hub = -1.0 / t;
            let hub_prime = 1.0 / (t * t);
            (a, hub, hub_prime)
        }
    }
}

fn level_geometry(spec: &BackgroundSpec, t: f64) -> LevelGeometry {
    let (a, hub, hub_prime) = scale_factor(spec, t);
    let a2 = a * a;
    let eta = [-1.0, 1.0, 1.0, 1.0];
    let mut g = [0.0; DIM];
    let mut g_inv = [0.0; DIM];
    for m in 0..DIM {
        g[m] = a2 * eta[m];
        g_inv[m] = eta[m] / a2;
    }

    // Conformally flat pattern: Gamma^l_{mn} = hub (d^l_m d^0_n + d^l_n d^0_m
    // - eta_{mn} eta^{l0}), all entries proportional to the conformal Hubble
    // rate.
    let mut gamma = [[[0.0; DIM]; DIM]; DIM];
    let mut gamma_dot = [[[0.0; DIM]; DIM]; DIM];
    for l in 0..DIM {
        for m in 0..DIM {
            for n in 0..DIM {
                let mut c = 0.0;
                if l == m && n == 0 {
                    c += 1.0;
                }
                if l == n && m == 0 {
                    c += 1.0;
                }
                if m == n && l == 0 {
                    c += eta[m];
                }
                // l = m = n = 0: first two clauses add 2, third adds -1.
                if l == 0 && m == 0 && n == 0 {
                    c = 1.0;
                }
                gamma[l][m][n] = hub * c;
                gamma_dot[l][m][n] = hub_prime * c;
            }
        }
    }

    // R_{abc}^d = d_b Gamma^d_{ac} - d_a Gamma^d_{bc}
    //            + Gamma^e_{ac} Gamma^d_{be} - Gamma^e_{bc} Gamma^d_{ae},
    // with only the time derivative of Gamma nonzero.
    let mut riemann = [[[[0.0; DIM]; DIM]; DIM]; DIM];
    for b_idx in 0..DIM {
        for c in 0..DIM {
            for d in 0..DIM {
                for a_idx in 0..DIM {
                    let mut v = 0.0;
                    if b_idx == 0 {
                        v += gamma_dot[d][a_idx][c];
                    }
                    if a_idx == 0 {
                        v -= gamma_dot[d][b_idx][c];
                    }
                    for e in 0..DIM {
                        v += gamma[e][a_idx][c] * gamma[d][b_idx][e];
                        v -= gamma[e][b_idx][c] * gamma[d][a_idx][e];
                    }
                    riemann[a_idx][b_idx][c][d] = v;
                }
            }
        }
    }

    let mut riemann_ud = [[[[0.0; DIM]; DIM]; DIM]; DIM];
    for c in 0..DIM {
        for a_idx in 0..DIM {
            for b_idx in 0..DIM {
                for d in 0..DIM {
                    riemann_ud[c][a_idx][b_idx][d] = g_inv[c] * riemann[c][a_idx][b_idx][d];
                }
            }
        }
    }

    let mut ricci = [[0.0; DIM]; DIM];
    for a_idx in 0..DIM {
        for c in 0..DIM {
            let mut v = 0.0;
            for b_idx in 0..DIM {
                v += riemann[a_idx][b_idx][c][b_idx];
            }
            ricci[a_idx][c] = v;
        }
    }
    let mut ricci_scalar = 0.0;
    for a_idx in 0..DIM {
        ricci_scalar += g_inv[a_idx] * ricci[a_idx][a_idx];
    }

    let sqrt_minus_g = a2 * a2;
    let sqrt_h = a2 * a;
    let mut normal_up = [0.0; DIM];
    normal_up[0] = 1.0 / a;
    let mut normal_down = [0.0; DIM];
    normal_down[0] = g[0] * normal_up[0];

    LevelGeometry {
        a,
        hub,
        hub_prime,
        g,
        g_inv,
        gamma,
        gamma_dot,
        riemann,
        riemann_ud,
        ricci,
        ricci_scalar,
        sqrt_minus_g,
        sqrt_h,
        normal_up,
        normal_down,
    }
}

impl Background {
    pub fn build(spec: BackgroundSpec, grid: Grid) -> Result<Self> {
        if let ChartKind::DeSitterFlatChart = spec.kind {
            if spec.hubble <= 0.0 {
                return Err(Error::ChartDomain(format!(
                    "de Sitter chart needs H > 0, got H = {}",
                    spec.hubble
                )));
            }
            if grid.t1 >= 0.0 {
                return Err(Error::ChartDomain(format!(
                    "de Sitter flat chart needs conformal time eta < 0 over the whole grid, got t1 = {}",
                    grid.t1
                )));
            }
        }
        let lambda = spec.lambda();
        let levels = (0..grid.nt).map(|j| level_geometry(&spec, grid.t(j))).collect();
        Ok(Background { spec, grid, lambda, levels })
    }

    pub fn from_config(cfg: &BackgroundConfig) -> Result<Self> {
        Background::build(BackgroundSpec { kind: cfg.kind, hubble: cfg.hubble }, cfg.grid)
    }

    pub fn config(&self) -> BackgroundConfig {
        BackgroundConfig { kind: self.spec.kind, hubble: self.spec.hubble, grid: self.grid }
    }

    /// Test fixture hook: same chart geometry with a deliberately wrong
    /// cosmological constant stored on the background.
    pub fn with_lambda_override(spec: BackgroundSpec, grid: Grid, lambda: f64) -> Result<Self> {
        let mut bg = Background::build(spec, grid)?;
        bg.lambda = lambda;
        Ok(bg)
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn level(&self, j: usize) -> &LevelGeometry {
        &self.levels[j]
    }

    /// Same chart restricted to a short span of time levels around `center`,
    /// sharing dt, dx and the analytic geometry. Used for slab-local
    /// evaluations on Cauchy data.
    pub fn slab(&self, center: usize, half_width: usize) -> Result<(Background, usize)> {
        let g = &self.grid;
        if center < half_width || center + half_width >= g.nt {
            return Err(Error::Index(format!(
                "slab of half width {half_width} around level {center} leaves the grid"
            )));
        }
        let nt = 2 * half_width + 1;
        let t0 = g.t(center - half_width);
        let t1 = g.t(center + half_width);
        let slab_grid = Grid::new(nt, g.nx, t0, t1, g.l)?;
        Ok((Background::build(self.spec, slab_grid)?, half_width))
    }

    pub fn geometry_at(&self, j: usize, _i: usize) -> Result<GeometryPoint> {
        self.grid.check_time_index(j)?;
        if _i >= self.grid.nx {
            return Err(Error::Index(format!("space index {_i} out of range (nx = {})", self.grid.nx)));
        }
        let lev = &self.levels[j];
        let mut g = [[0.0; DIM]; DIM];
        let mut g_inv = [[0.0; DIM]; DIM];
        for m in 0..DIM {
            g[m][m] = lev.g[m];
            g_inv[m][m] = lev.g_inv[m];
        }
        Ok(GeometryPoint {
            g,
            g_inv,
            gamma: lev.gamma,
            riemann: lev.riemann,
            ricci: lev.ricci,
            ricci_scalar: lev.ricci_scalar,
            sqrt_minus_g: lev.sqrt_minus_g,
            normal: lev.normal_up,
        })
    }

    /// max over the grid of the sup-norm of G_{ab} + Lambda g_{ab}, from the
    /// closed-form curvature.
    pub fn einstein_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for lev in &self.levels {
            for a_idx in 0..DIM {
                for b_idx in 0..DIM {
                    let gab = if a_idx == b_idx { lev.g[a_idx] } else { 0.0 };
                    let einstein =
                        lev.ricci[a_idx][b_idx] - 0.5 * lev.ricci_scalar * gab + self.lambda * gab;
                    worst = worst.max(einstein.abs());
                }
            }
        }
        worst
    }
}
