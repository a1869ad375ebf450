//! Grid-sampled tensor fields and their covariant calculus.
//!
//! All fields are complex-valued and depend on (t, x) only; the y and z
//! partial derivatives vanish identically while the full 4d index structure
//! is kept. Differencing is second-order centered, with one-sided
//! second-order stencils on the first and last time level and periodic wrap
//! in x.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::background::{Background, DIM};
use crate::error::{Error, Result};
use crate::grid::{Grid, IndexWindow};

pub const SYM_COMPONENTS: usize = 10;
/// (a, b) pairs in storage order 00,01,02,03,11,12,13,22,23,33.
pub const SYM_PAIRS: [(usize, usize); SYM_COMPONENTS] =
    [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

pub const SYM_LABELS: [&str; SYM_COMPONENTS] =
    ["00", "01", "02", "03", "11", "12", "13", "22", "23", "33"];

/// Lookup (a, b) -> storage slot, symmetric in the pair.
pub const fn sym_index(a: usize, b: usize) -> usize {
    const TABLE: [[usize; 4]; 4] =
        [[0, 1, 2, 3], [1, 4, 5, 6], [2, 5, 7, 8], [3, 6, 8, 9]];
    TABLE[a][b]
}

/// Multiplicity of a stored component in a full double contraction.
pub const fn sym_multiplicity(slot: usize) -> f64 {
    match slot {
        0 | 4 | 7 | 9 => 1.0,
        _ => 2.0,
    }
}

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Dense complex nt-by-nx array.
#[derive(Debug, Clone, PartialEq)]
pub struct Arr2 {
    pub nt: usize,
    pub nx: usize,
    pub v: Vec<C64>,
}

impl Arr2 {
    pub fn zeros(nt: usize, nx: usize) -> Self {
        Arr2 { nt, nx, v: vec![ZERO; nt * nx] }
    }

    #[inline]
    pub fn at(&self, j: usize, i: usize) -> C64 {
        self.v[j * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, j: usize, i: usize) -> &mut C64 {
        &mut self.v[j * self.nx + i]
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[C64] {
        &self.v[j * self.nx..(j + 1) * self.nx]
    }

    #[inline]
    pub fn row_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.v[j * self.nx..(j + 1) * self.nx]
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: C64) {
        for z in &mut self.v {
            *z *= s;
        }
    }

    pub fn axpy(&mut self, a: C64, other: &Arr2) {
        assert_eq!(self.v.len(), other.v.len());
        for (z, w) in self.v.iter_mut().zip(&other.v) {
            *z += a * w;
        }
    }

    /// Centered x-derivative with periodic wrap.
    pub fn dx(&self, grid: &Grid) -> Arr2 {
        let (nt, nx) = (self.nt, self.nx);
        let inv = 1.0 / (2.0 * grid.dx());
        let mut out = Arr2::zeros(nt, nx);
        for j in 0..nt {
            let src = self.row(j);
            let dst = out.row_mut(j);
            for i in 0..nx {
                let ip = (i + 1) % nx;
                let im = (i + nx - 1) % nx;
                dst[i] = (src[ip] - src[im]) * inv;
            }
        }
        out
    }

    /// Centered second x-derivative with periodic wrap.
    pub fn dxx(&self, grid: &Grid) -> Arr2 {
        let (nt, nx) = (self.nt, self.nx);
        let inv = 1.0 / (grid.dx() * grid.dx());
        let mut out = Arr2::zeros(nt, nx);
        for j in 0..nt {
            let src = self.row(j);
            let dst = out.row_mut(j);
            for i in 0..nx {
                let ip = (i + 1) % nx;
                let im = (i + nx - 1) % nx;
                dst[i] = (src[ip] - 2.0 * src[i] + src[im]) * inv;
            }
        }
        out
    }

    /// Time derivative: centered in the interior, one-sided second order on
    /// the first and last level.
    pub fn dt(&self, grid: &Grid) -> Arr2 {
        let (nt, nx) = (self.nt, self.nx);
        let inv = 1.0 / (2.0 * grid.dt());
        let mut out = Arr2::zeros(nt, nx);
        for i in 0..nx {
            out.v[i] = (-3.0 * self.at(0, i) + 4.0 * self.at(1, i) - self.at(2, i)) * inv;
            let j = nt - 1;
            *out.at_mut(j, i) =
                (3.0 * self.at(j, i) - 4.0 * self.at(j - 1, i) + self.at(j - 2, i)) * inv;
        }
        for j in 1..nt - 1 {
            for i in 0..nx {
                *out.at_mut(j, i) = (self.at(j + 1, i) - self.at(j - 1, i)) * inv;
            }
        }
        out
    }

    /// Second time derivative, one-sided second order at the edges.
    pub fn dtt(&self, grid: &Grid) -> Arr2 {
        let (nt, nx) = (self.nt, self.nx);
        let inv = 1.0 / (grid.dt() * grid.dt());
        let mut out = Arr2::zeros(nt, nx);
        for i in 0..nx {
            out.v[i] = (2.0 * self.at(0, i) - 5.0 * self.at(1, i) + 4.0 * self.at(2, i)
                - self.at(3, i))
                * inv;
            let j = nt - 1;
            *out.at_mut(j, i) = (2.0 * self.at(j, i) - 5.0 * self.at(j - 1, i)
                + 4.0 * self.at(j - 2, i)
                - self.at(j - 3, i))
                * inv;
        }
        for j in 1..nt - 1 {
            for i in 0..nx {
                *out.at_mut(j, i) =
                    (self.at(j + 1, i) - 2.0 * self.at(j, i) + self.at(j - 1, i)) * inv;
            }
        }
        out
    }

    /// Partial derivative along a spacetime direction; y and z give zero.
    pub fn partial(&self, grid: &Grid, dir: usize) -> Arr2 {
        match dir {
            0 => self.dt(grid),
            1 => self.dx(grid),
            _ => Arr2::zeros(self.nt, self.nx),
        }
    }

    pub fn conj(&self) -> Arr2 {
        Arr2 { nt: self.nt, nx: self.nx, v: self.v.iter().map(|z| z.conj()).collect() }
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.v.iter().all(|z| z.im.abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Arr2,
}

#[derive(Debug, Clone)]
pub struct VecField {
    pub grid: Grid,
    pub variance: Variance,
    pub comps: Vec<Arr2>,
}

/// Symmetric rank-(0,2) field; only the 10 independent components are stored.
#[derive(Debug, Clone)]
pub struct SymField2 {
    pub grid: Grid,
    pub comps: Vec<Arr2>,
    /// Declared compact-support window; all components are exactly zero
    /// outside it.
    pub support: Option<IndexWindow>,
}

/// General rank-(0,2) field, 16 components in row-major (a, b) order.
#[derive(Debug, Clone)]
pub struct GenField2 {
    pub grid: Grid,
    pub comps: Vec<Arr2>,
}

/// First covariant derivative of a symmetric rank-2 field: slot order
/// (d; ab) with the last pair symmetric.
#[derive(Debug, Clone)]
pub struct NablaSym2 {
    pub grid: Grid,
    /// comps[d][sym_index(a,b)]
    pub comps: Vec<Vec<Arr2>>,
}

/// Rank-3 object symmetric in its last two slots, upper variance, as used by
/// the conjugate momentum and the current-forming first-order operator.
#[derive(Debug, Clone)]
pub struct Rank3Sym {
    pub grid: Grid,
    /// comps[c][sym_index(a,b)] for T^{cab}
    pub comps: Vec<Vec<Arr2>>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, data: Arr2::zeros(grid.nt, grid.nx) }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.max_abs()
    }

    pub fn max_abs_interior(&self) -> f64 {
        interior_max(&self.grid, std::slice::from_ref(&self.data))
    }

    pub fn rms_interior(&self) -> f64 {
        interior_rms(&self.grid, std::slice::from_ref(&self.data))
    }
}

impl VecField {
    pub fn zeros(grid: Grid, variance: Variance) -> Self {
        VecField {
            grid,
            variance,
            comps: (0..DIM).map(|_| Arr2::zeros(grid.nt, grid.nx)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(Arr2::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_interior(&self) -> f64 {
        interior_max(&self.grid, &self.comps)
    }

    pub fn rms_interior(&self) -> f64 {
        interior_rms(&self.grid, &self.comps)
    }

    pub fn axpy(&mut self, a: C64, other: &VecField) {
        assert_eq!(self.variance, other.variance);
        for (c, oc) in self.comps.iter_mut().zip(&other.comps) {
            c.axpy(a, oc);
        }
    }
}

impl SymField2 {
    pub fn zeros(grid: Grid) -> Self {
        SymField2 {
            grid,
            comps: (0..SYM_COMPONENTS).map(|_| Arr2::zeros(grid.nt, grid.nx)).collect(),
            support: None,
        }
    }

    /// Component accessor honoring the structural symmetry.
    #[inline]
    pub fn comp(&self, a: usize, b: usize) -> &Arr2 {
        &self.comps[sym_index(a, b)]
    }

    #[inline]
    pub fn comp_mut(&mut self, a: usize, b: usize) -> &mut Arr2 {
        self.support = self.support.take();
        &mut self.comps[sym_index(a, b)]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(Arr2::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_interior(&self) -> f64 {
        interior_max(&self.grid, &self.comps)
    }

    pub fn rms_interior(&self) -> f64 {
        interior_rms(&self.grid, &self.comps)
    }

    pub fn scale(&mut self, s: C64) {
        for c in &mut self.comps {
            c.scale(s);
        }
    }

    pub fn axpy(&mut self, a: C64, other: &SymField2) -> Result<()> {
        check_same_grid(&self.grid, &other.grid)?;
        for (c, oc) in self.comps.iter_mut().zip(&other.comps) {
            c.axpy(a, oc);
        }
        self.support = match (self.support, other.support) {
            (Some(w1), Some(w2)) => union_window(w1, w2),
            _ => None,
        };
        Ok(())
    }

    pub fn added(&self, other: &SymField2) -> Result<SymField2> {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn subbed(&self, other: &SymField2) -> Result<SymField2> {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn scaled(&self, s: C64) -> SymField2 {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    pub fn conj(&self) -> SymField2 {
        SymField2 {
            grid: self.grid,
            comps: self.comps.iter().map(Arr2::conj).collect(),
            support: self.support,
        }
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.comps.iter().all(|c| c.is_real(tol))
    }

    /// Zero everything outside the window and declare it as the support.
    pub fn windowed(&self, window: IndexWindow) -> SymField2 {
        let mut out = self.clone();
        let nx = self.grid.nx;
        for c in &mut out.comps {
            for j in 0..self.grid.nt {
                for i in 0..nx {
                    if !window.contains(j, i, nx) {
                        *c.at_mut(j, i) = ZERO;
                    }
                }
            }
        }
        out.support = Some(window);
        out
    }

    /// Exact zero check on the first and last `layers` time levels.
    pub fn vanishes_near_time_boundary(&self, layers: usize, tol: f64) -> bool {
        let nt = self.grid.nt;
        for c in &self.comps {
            for j in (0..layers).chain(nt - layers..nt) {
                if c.row(j).iter().any(|z| z.norm() > tol) {
                    return false;
                }
            }
        }
        true
    }
}

impl GenField2 {
    pub fn zeros(grid: Grid) -> Self {
        GenField2 { grid, comps: (0..16).map(|_| Arr2::zeros(grid.nt, grid.nx)).collect() }
    }

    #[inline]
    pub fn comp(&self, a: usize, b: usize) -> &Arr2 {
        &self.comps[a * DIM + b]
    }

    #[inline]
    pub fn comp_mut(&mut self, a: usize, b: usize) -> &mut Arr2 {
        &mut self.comps[a * DIM + b]
    }

    pub fn from_sym(f: &SymField2) -> Self {
        let mut out = GenField2::zeros(f.grid);
        for a in 0..DIM {
            for b in 0..DIM {
                *out.comp_mut(a, b) = f.comp(a, b).clone();
            }
        }
        out
    }

    pub fn symmetric_part(&self) -> SymField2 {
        let mut out = SymField2::zeros(self.grid);
        for (slot, &(a, b)) in SYM_PAIRS.iter().enumerate() {
            let mut arr = self.comp(a, b).clone();
            arr.axpy(C64::new(1.0, 0.0), self.comp(b, a));
            arr.scale(C64::new(0.5, 0.0));
            out.comps[slot] = arr;
        }
        out
    }

    pub fn antisymmetric_max(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..DIM {
            for b in (a + 1)..DIM {
                let ab = self.comp(a, b);
                let ba = self.comp(b, a);
                for (x, y) in ab.v.iter().zip(&ba.v) {
                    worst = worst.max(0.5 * (x - y).norm());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(Arr2::max_abs).fold(0.0, f64::max)
    }
}

pub fn check_same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("grids differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn union_window(a: IndexWindow, b: IndexWindow) -> Option<IndexWindow> {
    // only the unwrapped x case is worth tracking
    if a.x_lo > a.x_hi || b.x_lo > b.x_hi {
        return None;
    }
    Some(IndexWindow {
        t_lo: a.t_lo.min(b.t_lo),
        t_hi: a.t_hi.max(b.t_hi),
        x_lo: a.x_lo.min(b.x_lo),
        x_hi: a.x_hi.max(b.x_hi),
    })
}

/// Margin of excluded time levels for verification norms: at least the two
/// one-sided-stencil layers, and at least a fixed fraction of the coordinate
/// span so that order measurements compare like with like across
/// refinements.
pub fn interior_margin(grid: &Grid) -> usize {
    (grid.nt / 32).max(2)
}

fn interior_max(grid: &Grid, comps: &[Arr2]) -> f64 {
    let m = interior_margin(grid);
    if grid.nt <= 2 * m {
        return comps.iter().map(Arr2::max_abs).fold(0.0, f64::max);
    }
    let mut worst: f64 = 0.0;
    for c in comps {
        for j in m..grid.nt - m {
            for z in c.row(j) {
                worst = worst.max(z.norm());
            }
        }
    }
    worst
}

fn interior_rms(grid: &Grid, comps: &[Arr2]) -> f64 {
    let m = interior_margin(grid);
    if grid.nt <= 2 * m {
        return interior_max(grid, comps);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in comps {
        for j in m..grid.nt - m {
            for z in c.row(j) {
                sum += z.norm_sqr();
                count += 1;
            }
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

/// sup norm over the interior of a covector-valued residual.
pub fn covec_interior_max(w: &VecField) -> f64 {
    interior_max(&w.grid, &w.comps)
}

// ---------------------------------------------------------------------------
// metric helpers

/// Trace g^{ab} gamma_{ab}.
pub fn trace(bg: &Background, gamma: &SymField2) -> ScalarField {
    let grid = gamma.grid;
    let mut out = ScalarField::zeros(grid);
    for j in 0..grid.nt {
        let ginv = bg.level(j).g_inv;
        for a in 0..DIM {
            let row = gamma.comp(a, a).row(j);
            let dst = out.data.row_mut(j);
            for i in 0..grid.nx {
                dst[i] += ginv[a] * row[i];
            }
        }
    }
    out
}

/// Trace reversal: gamma_bar = gamma - (1/2) g tr(gamma). Returns the
/// reversed field together with the trace. Applying it twice restores the
/// original field.
pub fn trace_reverse(bg: &Background, gamma: &SymField2) -> Result<(SymField2, ScalarField)> {
    check_same_grid(&bg.grid, &gamma.grid)?;
    let tr = trace(bg, gamma);
    let mut out = gamma.clone();
    for (slot, &(a, b)) in SYM_PAIRS.iter().enumerate() {
        if a != b {
            continue;
        }
        for j in 0..gamma.grid.nt {
            let gaa = bg.level(j).g[a];
            let trow = tr.data.row(j);
            let dst = out.comps[slot].row_mut(j);
            for i in 0..gamma.grid.nx {
                dst[i] -= 0.5 * gaa * trow[i];
            }
        }
        let _ = b;
    }
    out.support = gamma.support;
    Ok((out, tr))
}

pub fn raise_vec(bg: &Background, w: &VecField) -> VecField {
    assert_eq!(w.variance, Variance::Lower);
    let mut out = w.clone();
    out.variance = Variance::Upper;
    for a in 0..DIM {
        for j in 0..w.grid.nt {
            let ginv = bg.level(j).g_inv[a];
            for z in out.comps[a].row_mut(j) {
                *z *= ginv;
            }
        }
    }
    out
}

pub fn lower_vec(bg: &Background, w: &VecField) -> VecField {
    assert_eq!(w.variance, Variance::Upper);
    let mut out = w.clone();
    out.variance = Variance::Lower;
    for a in 0..DIM {
        for j in 0..w.grid.nt {
            let g = bg.level(j).g[a];
            for z in out.comps[a].row_mut(j) {
                *z *= g;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// covariant derivatives

/// nabla_a of a scalar: just the partial derivatives.
pub fn nabla_scalar(bg: &Background, s: &ScalarField) -> VecField {
    let grid = s.grid;
    let mut out = VecField::zeros(grid, Variance::Lower);
    out.comps[0] = s.data.dt(&grid);
    out.comps[1] = s.data.dx(&grid);
    let _ = bg;
    out
}

/// nabla_a w_b on a lower-index vector field.
pub fn nabla_covec(bg: &Background, w: &VecField) -> GenField2 {
    assert_eq!(w.variance, Variance::Lower);
    let grid = w.grid;
    let mut out = GenField2::zeros(grid);
    let parts: Vec<[Arr2; 2]> =
        w.comps.iter().map(|c| [c.dt(&grid), c.dx(&grid)]).collect();
    for a in 0..DIM {
        for b in 0..DIM {
            let dst = out.comp_mut(a, b);
            if a < 2 {
                dst.axpy(C64::new(1.0, 0.0), &parts[b][a]);
            }
            for j in 0..grid.nt {
                let gamma = &bg.level(j).gamma;
                for e in 0..DIM {
                    let coeff = gamma[e][a][b];
                    if coeff == 0.0 {
                        continue;
                    }
                    let src = w.comps[e].row(j);
                    let drow = dst.row_mut(j);
                    for i in 0..grid.nx {
                        drow[i] -= coeff * src[i];
                    }
                }
            }
        }
    }
    out
}

/// nabla_d gamma_{ab} on a symmetric field.
pub fn nabla_sym2(bg: &Background, gamma: &SymField2) -> NablaSym2 {
    let grid = gamma.grid;
    let dt_parts: Vec<Arr2> = gamma.comps.par_iter().map(|c| c.dt(&grid)).collect();
    let dx_parts: Vec<Arr2> = gamma.comps.par_iter().map(|c| c.dx(&grid)).collect();
    let mut comps: Vec<Vec<Arr2>> = (0..DIM)
        .map(|d| match d {
            0 => dt_parts.clone(),
            1 => dx_parts.clone(),
            _ => (0..SYM_COMPONENTS).map(|_| Arr2::zeros(grid.nt, grid.nx)).collect(),
        })
        .collect();
    comps.par_iter_mut().enumerate().for_each(|(d, slot_arrs)| {
        for (slot, &(a, b)) in SYM_PAIRS.iter().enumerate() {
            for j in 0..grid.nt {
                let chr = &bg.level(j).gamma;
                for e in 0..DIM {
                    let ca = chr[e][d][a];
                    if ca != 0.0 {
                        let src = gamma.comp(e, b).row(j).to_vec();
                        let dst = slot_arrs[slot].row_mut(j);
                        for i in 0..grid.nx {
                            dst[i] -= ca * src[i];
                        }
                    }
                    let cb = chr[e][d][b];
                    if cb != 0.0 {
                        let src = gamma.comp(a, e).row(j).to_vec();
                        let dst = slot_arrs[slot].row_mut(j);
                        for i in 0..grid.nx {
                            dst[i] -= cb * src[i];
                        }
                    }
                }
            }
        }
    });
    NablaSym2 { grid, comps }
}

/// nabla_d gamma_{ab} on a general rank-2 field; comps[d][a*4+b].
pub fn nabla_gen2(bg: &Background, gamma: &GenField2) -> Vec<Vec<Arr2>> {
    let grid = gamma.grid;
    let mut out: Vec<Vec<Arr2>> = (0..DIM)
        .map(|d| gamma.comps.iter().map(|c| c.partial(&grid, d)).collect())
        .collect();
    for d in 0..DIM {
        for a in 0..DIM {
            for b in 0..DIM {
                for j in 0..grid.nt {
                    let chr = &bg.level(j).gamma;
                    for e in 0..DIM {
                        let ca = chr[e][d][a];
                        if ca != 0.0 {
                            let src = gamma.comp(e, b).row(j).to_vec();
                            let dst = out[d][a * DIM + b].row_mut(j);
                            for i in 0..grid.nx {
                                dst[i] -= ca * src[i];
                            }
                        }
                        let cb = chr[e][d][b];
                        if cb != 0.0 {
                            let src = gamma.comp(a, e).row(j).to_vec();
                            let dst = out[d][a * DIM + b].row_mut(j);
                            for i in 0..grid.nx {
                                dst[i] -= cb * src[i];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Covariant divergence nabla^a gamma_{ab} of a symmetric field.
pub fn divergence_sym2(bg: &Background, gamma: &SymField2) -> VecField {
    let grid = gamma.grid;
    let nab = nabla_sym2(bg, gamma);
    let mut out = VecField::zeros(grid, Variance::Lower);
    for b in 0..DIM {
        for a in 0..DIM {
            for j in 0..grid.nt {
                let ginv = bg.level(j).g_inv[a];
                let src = nab.comps[a][sym_index(a, b)].row(j);
                let dst = out.comps[b].row_mut(j);
                for i in 0..grid.nx {
                    dst[i] += ginv * src[i];
                }
            }
        }
    }
    out
}

/// de Donder residual nabla^a gamma_bar_{ab} of a field.
pub fn de_donder_residual(bg: &Background, gamma: &SymField2) -> Result<VecField> {
    let (bar, _) = trace_reverse(bg, gamma)?;
    Ok(divergence_sym2(bg, &bar))
}

/// Lie derivative of the metric along w: 2 nabla_(a w_b), with w lowered
/// first when it comes with an upper index.
pub fn lie_derivative_metric(bg: &Background, w: &VecField) -> Result<SymField2> {
    check_same_grid(&bg.grid, &w.grid)?;
    let lower = match w.variance {
        Variance::Lower => w.clone(),
        Variance::Upper => lower_vec(bg, w),
    };
    let nab = nabla_covec(bg, &lower);
    let mut out = SymField2::zeros(w.grid);
    for (slot, &(a, b)) in SYM_PAIRS.iter().enumerate() {
        let mut arr = nab.comp(a, b).clone();
        arr.axpy(C64::new(1.0, 0.0), nab.comp(b, a));
        out.comps[slot] = arr;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// pairings

fn check_pairing_support(f: &SymField2) -> Result<()> {
    if let Some(w) = f.support {
        if w.t_lo < 2 || w.t_hi + 2 >= f.grid.nt {
            return Err(Error::Support(format!(
                "test tensor support [{}, {}] touches the temporal boundary layers",
                w.t_lo, w.t_hi
            )));
        }
        return Ok(());
    }
    if !f.vanishes_near_time_boundary(2, 0.0) {
        return Err(Error::Support(
            "test tensor is not exactly zero on the two temporal boundary layers".into(),
        ));
    }
    Ok(())
}

/// Spacetime pairing integral of gamma_{ab} f^{ab} sqrt(-g) dt dx, indices of
/// f raised with the inverse metric. The smearing field must be compactly
/// supported away from the temporal boundary.
pub fn spacetime_pairing(bg: &Background, gamma: &SymField2, f: &SymField2) -> Result<C64> {
    check_same_grid(&bg.grid, &gamma.grid)?;
    check_same_grid(&bg.grid, &f.grid)?;
    check_pairing_support(f)?;
    let grid = gamma.grid;
    let measure = grid.dt() * grid.dx();
    let mut acc = ZERO;
    for j in 0..grid.nt {
        let lev = bg.level(j);
        let mut level_acc = ZERO;
        for (slot, &(a, b)) in SYM_PAIRS.iter().enumerate() {
            let weight = sym_multiplicity(slot) * lev.g_inv[a] * lev.g_inv[b];
            let grow = gamma.comps[slot].row(j);
            let frow = f.comps[slot].row(j);
            let mut comp_acc = ZERO;
            for i in 0..grid.nx {
                comp_acc += grow[i] * frow[i];
            }
            level_acc += weight * comp_acc;
        }
        acc += level_acc * lev.sqrt_minus_g;
    }
    Ok(acc * measure)
}

/// Slice integral of a scalar against sqrt(h) dx on a constant-t level.
pub fn slice_integral(bg: &Background, values: &[C64], sigma: usize) -> C64 {
    let lev = bg.level(sigma);
    let mut acc = ZERO;
    for v in values {
        acc += v;
    }
    acc * lev.sqrt_h * bg.grid.dx()
}

// ---------------------------------------------------------------------------
// synthesis

#[derive(Debug, Clone)]
pub enum Recipe {
    Bump {
        center: (f64, f64),
        radii: (f64, f64),
    },
    PlaneWave {
        omega: f64,
        k_mode: i32,
    },
    Random {
        seed: u64,
        modes_t: usize,
        modes_x: usize,
        complex: bool,
    },
}

fn bump_profile(grid: &Grid, center: (f64, f64), radii: (f64, f64)) -> Result<(Arr2, IndexWindow)> {
    let (tc, xc) = center;
    let (rt, rx) = radii;
    if rt < 0.0 || rx < 0.0 {
        return Err(Error::Support("negative bump radius".into()));
    }
    let t_lo = tc - rt;
    let t_hi = tc + rt;
    if rt > 0.0 && (t_lo <= grid.t(1) || t_hi >= grid.t(grid.nt - 2)) {
        return Err(Error::Support(format!(
            "bump time range [{t_lo:.3}, {t_hi:.3}] leaves the grid interior"
        )));
    }
    if 2.0 * rx >= grid.l {
        return Err(Error::Support("bump wider than the spatial period".into()));
    }
    let mut prof = Arr2::zeros(grid.nt, grid.nx);
    let mut j_lo = grid.nt;
    let mut j_hi = 0;
    let mut i_touched = vec![false; grid.nx];
    if rt > 0.0 && rx > 0.0 {
        for j in 0..grid.nt {
            let ut = (grid.t(j) - tc) / rt;
            let bt = crate::util::bump(ut);
            if bt == 0.0 {
                continue;
            }
            j_lo = j_lo.min(j);
            j_hi = j_hi.max(j);
            for i in 0..grid.nx {
                let ux = grid.periodic_dist(grid.x(i), xc) / rx;
                let bx = crate::util::bump(ux);
                if bx == 0.0 {
                    continue;
                }
                i_touched[i] = true;
                *prof.at_mut(j, i) = C64::new(bt * bx, 0.0);
            }
        }
    }
    if j_lo > j_hi {
        // zero-radius bump: empty support window at the nominal center
        let jc = ((tc - grid.t0) / grid.dt()).round().clamp(2.0, (grid.nt - 3) as f64) as usize;
        return Ok((
            prof,
            IndexWindow { t_lo: jc, t_hi: jc, x_lo: 0, x_hi: 0 },
        ));
    }
    // x window: tight unwrapped interval when possible
    let (mut x_lo, mut x_hi) = (0, grid.nx - 1);
    if let Some(first) = i_touched.iter().position(|&t| t) {
        let last = grid.nx - 1 - i_touched.iter().rev().position(|&t| t).unwrap();
        if i_touched[first..=last].iter().all(|&t| t) {
            x_lo = first;
            x_hi = last;
        }
    }
    Ok((prof, IndexWindow { t_lo: j_lo, t_hi: j_hi, x_lo, x_hi }))
}

/// Deterministic band-limited trigonometric sum; the same seed yields the
/// same continuum field at any resolution.
fn random_profile(
    grid: &Grid,
    rng: &mut ChaCha8Rng,
    modes_t: usize,
    modes_x: usize,
    complex: bool,
) -> Arr2 {
    let mut arr = Arr2::zeros(grid.nt, grid.nx);
    let t_span = grid.t1 - grid.t0;
    for m in 0..=modes_t {
        for k in 0..=modes_x {
            let mut draws = [0.0f64; 8];
            for d in &mut draws {
                *d = rng.gen_range(-1.0..1.0);
            }
            let amp = 1.0 / ((1 + m * m + k * k) as f64);
            let kx = std::f64::consts::TAU * k as f64 / grid.l;
            let wt = std::f64::consts::PI * m as f64 / t_span;
            for j in 0..grid.nt {
                let tau = grid.t(j) - grid.t0;
                let (st, ct) = (wt * tau).sin_cos();
                for i in 0..grid.nx {
                    let (sx, cx) = (kx * grid.x(i)).sin_cos();
                    let re = draws[0] * ct * cx + draws[1] * ct * sx + draws[2] * st * cx
                        + draws[3] * st * sx;
                    let im = if complex {
                        draws[4] * ct * cx + draws[5] * ct * sx + draws[6] * st * cx
                            + draws[7] * st * sx
                    } else {
                        0.0
                    };
                    *arr.at_mut(j, i) += C64::new(amp * re, amp * im);
                }
            }
        }
    }
    arr
}

/// Symmetric rank-2 factory for bump, plane-wave and seeded random fields.
pub fn synthesize_sym2(
    bg: &Background,
    recipe: &Recipe,
    polarization: &[C64; SYM_COMPONENTS],
) -> Result<SymField2> {
    let grid = bg.grid;
    let mut out = SymField2::zeros(grid);
    match recipe {
        Recipe::Bump { center, radii } => {
            let (prof, window) = bump_profile(&grid, *center, *radii)?;
            for (slot, arr) in out.comps.iter_mut().enumerate() {
                if polarization[slot] == ZERO {
                    continue;
                }
                *arr = prof.clone();
                arr.scale(polarization[slot]);
            }
            out.support = Some(window);
        }
        Recipe::PlaneWave { omega, k_mode } => {
            let kx = std::f64::consts::TAU * *k_mode as f64 / grid.l;
            for (slot, arr) in out.comps.iter_mut().enumerate() {
                if polarization[slot] == ZERO {
                    continue;
                }
                for j in 0..grid.nt {
                    let t = grid.t(j);
                    for i in 0..grid.nx {
                        let phase = kx * grid.x(i) - omega * t;
                        *arr.at_mut(j, i) = polarization[slot] * phase.sin();
                    }
                }
            }
        }
        Recipe::Random { seed, modes_t, modes_x, complex } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for (slot, arr) in out.comps.iter_mut().enumerate() {
                // draw in a fixed order so a zeroed slot does not shift the
                // stream for the remaining components
                let prof = random_profile(&grid, &mut rng, *modes_t, *modes_x, *complex);
                if polarization[slot] == ZERO {
                    continue;
                }
                *arr = prof;
                arr.scale(polarization[slot]);
            }
        }
    }
    Ok(out)
}

pub fn synthesize_vector(
    bg: &Background,
    recipe: &Recipe,
    polarization: &[C64; DIM],
    variance: Variance,
) -> Result<VecField> {
    let grid = bg.grid;
    let mut out = VecField::zeros(grid, variance);
    match recipe {
        Recipe::Bump { center, radii } => {
            let (prof, _) = bump_profile(&grid, *center, *radii)?;
            for (a, arr) in out.comps.iter_mut().enumerate() {
                *arr = prof.clone();
                arr.scale(polarization[a]);
            }
        }
        Recipe::PlaneWave { omega, k_mode } => {
            let kx = std::f64::consts::TAU * *k_mode as f64 / grid.l;
            for (a, arr) in out.comps.iter_mut().enumerate() {
                for j in 0..grid.nt {
                    let t = grid.t(j);
                    for i in 0..grid.nx {
                        let phase = kx * grid.x(i) - omega * t;
                        *arr.at_mut(j, i) = polarization[a] * phase.sin();
                    }
                }
            }
        }
        Recipe::Random { seed, modes_t, modes_x, complex } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for (a, arr) in out.comps.iter_mut().enumerate() {
                let prof = random_profile(&grid, &mut rng, *modes_t, *modes_x, *complex);
                if polarization[a] == ZERO {
                    continue;
                }
                *arr = prof;
                arr.scale(polarization[a]);
            }
        }
    }
    Ok(out)
}

pub fn synthesize_scalar(bg: &Background, recipe: &Recipe) -> Result<ScalarField> {
    let grid = bg.grid;
    let mut out = ScalarField::zeros(grid);
    match recipe {
        Recipe::Bump { center, radii } => {
            let (prof, _) = bump_profile(&grid, *center, *radii)?;
            out.data = prof;
        }
        Recipe::PlaneWave { omega, k_mode } => {
            let kx = std::f64::consts::TAU * *k_mode as f64 / grid.l;
            for j in 0..grid.nt {
                let t = grid.t(j);
                for i in 0..grid.nx {
                    let phase = kx * grid.x(i) - omega * t;
                    *out.data.at_mut(j, i) = C64::new(phase.sin(), 0.0);
                }
            }
        }
        Recipe::Random { seed, modes_t, modes_x, complex } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            out.data = random_profile(&grid, &mut rng, *modes_t, *modes_x, *complex);
        }
    }
    Ok(out)
}

/// Sampled metric as a symmetric field, handy for trace and gauge tests.
pub fn metric_field(bg: &Background) -> SymField2 {
    let grid = bg.grid;
    let mut out = SymField2::zeros(grid);
    for (slot, &(a, b)) in SYM_PAIRS.iter().enumerate() {
        if a != b {
            continue;
        }
        for j in 0..grid.nt {
            let g = bg.level(j).g[a];
            for z in out.comps[slot].row_mut(j) {
                *z = C64::new(g, 0.0);
            }
        }
        let _ = b;
    }
    out
}

pub fn polarization_unit(slot: usize) -> [C64; SYM_COMPONENTS] {
    let mut p = [ZERO; SYM_COMPONENTS];
    p[slot] = C64::new(1.0, 0.0);
    p
}

pub fn polarization_from(values: &[(usize, usize, f64)]) -> [C64; SYM_COMPONENTS] {
    let mut p = [ZERO; SYM_COMPONENTS];
    for &(a, b, v) in values {
        p[sym_index(a, b)] = C64::new(v, 0.0);
    }
    p
}
