//! Explicit time stepping for the normally hyperbolic operators of the
//! theory: the tensor wave operator Box - 2 Riem on symmetric rank-2
//! perturbations, Box + Lambda on vectors and Box + 2 Lambda on scalars.
//!
//! The scheme is a second-order leapfrog on the reduction that solves for
//! the second time derivative through g^{00} = -1/a^2. First time
//! derivatives produced by the Christoffel terms are taken centered, which
//! couples the components of the next level through a small
//! time-level-dependent matrix; that system is solved exactly point by
//! point, so the update stays second order and fully explicit in practice.

use num_complex::Complex64;

use crate::background::{Background, DIM};
use crate::error::{Error, Result};
use crate::fields::{sym_index, Arr2, ScalarField, SymField2, VecField, Variance, C64};
use crate::util::Lu;

const ZERO: C64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveOperator {
    /// Box gamma_{ab} - 2 R^c{}_{ab}{}^d gamma_{cd} on symmetric lower rank-2
    Tensor,
    /// (Box + Lambda) w^b on upper-index vectors
    Vector,
    /// (Box + 2 Lambda) phi on scalars
    Scalar,
}

impl WaveOperator {
    pub fn ncomp(&self) -> usize {
        match self {
            WaveOperator::Tensor => 10,
            WaveOperator::Vector => 4,
            WaveOperator::Scalar => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    Both,
}

/// Component arrays of one evolved field; layout matches the field structs.
pub type CompArrays = Vec<Arr2>;

pub fn comps_of_sym(f: &SymField2) -> CompArrays {
    f.comps.clone()
}

pub fn sym_of_comps(bg: &Background, comps: CompArrays) -> SymField2 {
    SymField2 { grid: bg.grid, comps, support: None }
}

pub fn vec_of_comps(bg: &Background, comps: CompArrays) -> VecField {
    VecField { grid: bg.grid, variance: Variance::Upper, comps }
}

pub fn scalar_of_comps(bg: &Background, mut comps: CompArrays) -> ScalarField {
    ScalarField { grid: bg.grid, data: comps.remove(0) }
}

/// One time level of an evolved field: comps[c][i].
#[derive(Debug, Clone)]
pub struct SliceState {
    pub ncomp: usize,
    pub nx: usize,
    pub v: Vec<C64>,
}

impl SliceState {
    pub fn zeros(ncomp: usize, nx: usize) -> Self {
        SliceState { ncomp, nx, v: vec![ZERO; ncomp * nx] }
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize) -> C64 {
        self.v[c * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, i: usize) -> &mut C64 {
        &mut self.v[c * self.nx + i]
    }

    pub fn from_level(comps: &[Arr2], j: usize) -> Self {
        let nx = comps[0].nx;
        let mut s = SliceState::zeros(comps.len(), nx);
        for (c, arr) in comps.iter().enumerate() {
            s.v[c * nx..(c + 1) * nx].copy_from_slice(arr.row(j));
        }
        s
    }

    pub fn store_level(&self, comps: &mut [Arr2], j: usize) {
        for (c, arr) in comps.iter_mut().enumerate() {
            arr.row_mut(j).copy_from_slice(&self.v[c * self.nx..(c + 1) * self.nx]);
        }
    }
}

/// Q(field, dt-field) such that the full operator applied to the field is
/// g^{00} d^2_t(field) + Q. The map is linear in both arguments; its
/// derivative-coupling part in the second argument is reconstructed once per
/// level by probing.
fn q_eval(
    bg: &Background,
    op: WaveOperator,
    j: usize,
    state: &SliceState,
    mu: &SliceState,
    out: &mut SliceState,
) {
    let lev = bg.level(j);
    let grid = &bg.grid;
    let nx = state.nx;
    let dx = grid.dx();
    let inv2dx = 1.0 / (2.0 * dx);
    let invdx2 = 1.0 / (dx * dx);
    let lambda = bg.lambda();

    match op {
        WaveOperator::Scalar => {
            for i in 0..nx {
                let ip = (i + 1) % nx;
                let im = (i + nx - 1) % nx;
                let d: [C64; DIM] =
                    [mu.at(0, i), (state.at(0, ip) - state.at(0, im)) * inv2dx, ZERO, ZERO];
                let dxx = (state.at(0, ip) - 2.0 * state.at(0, i) + state.at(0, im)) * invdx2;
                let mut q = lev.g_inv[1] * dxx;
                for c in 0..DIM {
                    for e in 0..DIM {
                        let ch = lev.gamma[e][c][c];
                        if ch != 0.0 {
                            q -= lev.g_inv[c] * ch * d[e];
                        }
                    }
                }
                *out.at_mut(0, i) = q + 2.0 * lambda * state.at(0, i);
            }
        }
        WaveOperator::Vector => {
            let mut d = [[ZERO; DIM]; DIM]; // d[dir][b] = nabla_dir w^b
            let mut dxw = [ZERO; DIM];
            let mut dxxw = [ZERO; DIM];
            for i in 0..nx {
                let ip = (i + 1) % nx;
                let im = (i + nx - 1) % nx;
                for b in 0..DIM {
                    dxw[b] = (state.at(b, ip) - state.at(b, im)) * inv2dx;
                    dxxw[b] =
                        (state.at(b, ip) - 2.0 * state.at(b, i) + state.at(b, im)) * invdx2;
                }
                for dir in 0..DIM {
                    for b in 0..DIM {
                        let mut v = match dir {
                            0 => mu.at(b, i),
                            1 => dxw[b],
                            _ => ZERO,
                        };
                        for e in 0..DIM {
                            let ch = lev.gamma[b][dir][e];
                            if ch != 0.0 {
                                v += ch * state.at(e, i);
                            }
                        }
                        d[dir][b] = v;
                    }
                }
                for b in 0..DIM {
                    // partial_c D_c^b with the second time derivative removed
                    let pd0 = {
                        let mut v = ZERO;
                        for e in 0..DIM {
                            let chd = lev.gamma_dot[b][0][e];
                            if chd != 0.0 {
                                v += chd * state.at(e, i);
                            }
                            let ch = lev.gamma[b][0][e];
                            if ch != 0.0 {
                                v += ch * mu.at(e, i);
                            }
                        }
                        v
                    };
                    let pd1 = {
                        let mut v = dxxw[b];
                        for e in 0..DIM {
                            let ch = lev.gamma[b][1][e];
                            if ch != 0.0 {
                                v += ch * dxw[e];
                            }
                        }
                        v
                    };
                    let mut q = lev.g_inv[0] * pd0 + lev.g_inv[1] * pd1;
                    for c in 0..DIM {
                        let mut corr = ZERO;
                        for e in 0..DIM {
                            let ch1 = lev.gamma[e][c][c];
                            if ch1 != 0.0 {
                                corr -= ch1 * d[e][b];
                            }
                            let ch2 = lev.gamma[b][c][e];
                            if ch2 != 0.0 {
                                corr += ch2 * d[c][e];
                            }
                        }
                        q += lev.g_inv[c] * corr;
                    }
                    *out.at_mut(b, i) = q + lambda * state.at(b, i);
                }
            }
        }
        WaveOperator::Tensor => {
            let mut d = [[ZERO; 10]; DIM]; // d[dir][slot] = nabla_dir gamma_{ab}
            let mut dxg = [ZERO; 10];
            let mut dxxg = [ZERO; 10];
            for i in 0..nx {
                let ip = (i + 1) % nx;
                let im = (i + nx - 1) % nx;
                for s in 0..10 {
                    dxg[s] = (state.at(s, ip) - state.at(s, im)) * inv2dx;
                    dxxg[s] = (state.at(s, ip) - 2.0 * state.at(s, i) + state.at(s, im)) * invdx2;
                }
                for dir in 0..DIM {
                    for s in 0..10 {
                        let (a, b) = crate::fields::SYM_PAIRS[s];
                        let mut v = match dir {
                            0 => mu.at(s, i),
                            1 => dxg[s],
                            _ => ZERO,
                        };
                        for e in 0..DIM {
                            let ca = lev.gamma[e][dir][a];
                            if ca != 0.0 {
                                v -= ca * state.at(sym_index(e, b), i);
                            }
                            let cb = lev.gamma[e][dir][b];
                            if cb != 0.0 {
                                v -= cb * state.at(sym_index(a, e), i);
                            }
                        }
                        d[dir][s] = v;
                    }
                }
                for s in 0..10 {
                    let (a, b) = crate::fields::SYM_PAIRS[s];
                    let pd0 = {
                        let mut v = ZERO;
                        for e in 0..DIM {
                            let ca = lev.gamma[e][0][a];
                            let cad = lev.gamma_dot[e][0][a];
                            if cad != 0.0 {
                                v -= cad * state.at(sym_index(e, b), i);
                            }
                            if ca != 0.0 {
                                v -= ca * mu.at(sym_index(e, b), i);
                            }
                            let cb = lev.gamma[e][0][b];
                            let cbd = lev.gamma_dot[e][0][b];
                            if cbd != 0.0 {
                                v -= cbd * state.at(sym_index(a, e), i);
                            }
                            if cb != 0.0 {
                                v -= cb * mu.at(sym_index(a, e), i);
                            }
                        }
                        v
                    };
                    let pd1 = {
                        let mut v = dxxg[s];
                        for e in 0..DIM {
                            let ca = lev.gamma[e][1][a];
                            if ca != 0.0 {
                                v -= ca * dxg[sym_index(e, b)];
                            }
                            let cb = lev.gamma[e][1][b];
                            if cb != 0.0 {
                                v -= cb * dxg[sym_index(a, e)];
                            }
                        }
                        v
                    };
                    let mut q = lev.g_inv[0] * pd0 + lev.g_inv[1] * pd1;
                    for c in 0..DIM {
                        let mut corr = ZERO;
                        for e in 0..DIM {
                            let c1 = lev.gamma[e][c][c];
                            if c1 != 0.0 {
                                corr -= c1 * d[e][s];
                            }
                            let c2 = lev.gamma[e][c][a];
                            if c2 != 0.0 {
                                corr -= c2 * d[c][sym_index(e, b)];
                            }
                            let c3 = lev.gamma[e][c][b];
                            if c3 != 0.0 {
                                corr -= c3 * d[c][sym_index(a, e)];
                            }
                        }
                        q += lev.g_inv[c] * corr;
                    }
                    // curvature term of the tensor wave operator
                    let mut riem = ZERO;
                    for c in 0..DIM {
                        for dd in 0..DIM {
                            let r = lev.riemann_ud[c][a][b][dd];
                            if r != 0.0 {
                                riem += r * state.at(sym_index(c, dd), i);
                            }
                        }
                    }
                    *out.at_mut(s, i) = q - 2.0 * riem;
                }
            }
        }
    }
}

/// Probe hook used by the dense oracle to recover the stencil weights of
/// the slice kernel by linearity.
pub fn q_eval_probe(
    bg: &Background,
    op: WaveOperator,
    j: usize,
    state: &SliceState,
    mu: &SliceState,
    out: &mut SliceState,
) {
    q_eval(bg, op, j, state, mu, out);
}

/// Leapfrog stepper with per-level exact treatment of the component
/// coupling induced by first time derivatives.
pub struct Stepper<'a> {
    bg: &'a Background,
    op: WaveOperator,
    ncomp: usize,
}

struct LevelMatrices {
    /// coupling matrix B with Q(state, mu) = Q(state, 0) + B mu
    b: Vec<f64>,
    plus: Lu,
    minus: Lu,
}

impl<'a> Stepper<'a> {
    pub fn new(bg: &'a Background, op: WaveOperator) -> Self {
        Stepper { bg, op, ncomp: op.ncomp() }
    }

    pub fn operator(&self) -> WaveOperator {
        self.op
    }

    fn level_matrices(&self, j: usize) -> Result<LevelMatrices> {
        let n = self.ncomp;
        let nx = self.bg.grid.nx;
        let dt = self.bg.grid.dt();
        let g00 = self.bg.level(j).g_inv[0];
        // probe the mu-coupling; it is x-independent because the geometry is
        let mut b = vec![0.0; n * n];
        let zero = SliceState::zeros(n, nx);
        let mut mu = SliceState::zeros(n, nx);
        let mut out = SliceState::zeros(n, nx);
        for c in 0..n {
            for i in 0..nx {
                *mu.at_mut(c, i) = Complex64::new(1.0, 0.0);
            }
            q_eval(self.bg, self.op, j, &zero, &mu, &mut out);
            for r in 0..n {
                b[r * n + c] = out.at(r, 0).re;
            }
            for i in 0..nx {
                *mu.at_mut(c, i) = ZERO;
            }
        }
        let mut a_plus = vec![0.0; n * n];
        let mut a_minus = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                a_plus[r * n + c] = b[r * n + c] / (2.0 * dt);
                a_minus[r * n + c] = -b[r * n + c] / (2.0 * dt);
            }
            a_plus[r * n + r] += g00 / (dt * dt);
            a_minus[r * n + r] += g00 / (dt * dt);
        }
        Ok(LevelMatrices { b, plus: Lu::factor(a_plus, n)?, minus: Lu::factor(a_minus, n)? })
    }

    fn apply_b(&self, b: &[f64], s: &SliceState, out: &mut SliceState) {
        let n = self.ncomp;
        for i in 0..s.nx {
            for r in 0..n {
                let mut acc = ZERO;
                for c in 0..n {
                    let w = b[r * n + c];
                    if w != 0.0 {
                        acc += w * s.at(c, i);
                    }
                }
                *out.at_mut(r, i) = acc;
            }
        }
    }

    /// d^2_t of the field at a level, from the equation with source s.
    fn second_time_derivative(
        &self,
        j: usize,
        state: &SliceState,
        mu: &SliceState,
        source: Option<&SliceState>,
    ) -> SliceState {
        let n = self.ncomp;
        let nx = state.nx;
        let g00 = self.bg.level(j).g_inv[0];
        let mut q = SliceState::zeros(n, nx);
        q_eval(self.bg, self.op, j, state, mu, &mut q);
        let mut out = SliceState::zeros(n, nx);
        for k in 0..n * nx {
            let s = source.map(|s| s.v[k]).unwrap_or(ZERO);
            out.v[k] = (s - q.v[k]) / g00;
        }
        out
    }

    /// Advance one level: relation centered at j using levels (j-1, j)
    /// produces j+1 (forward) or, centered at j using (j, j+1), produces j-1
    /// (backward).
    fn step(
        &self,
        j: usize,
        cur: &SliceState,
        other: &SliceState,
        source: Option<&SliceState>,
        mats: &LevelMatrices,
        forward: bool,
    ) -> SliceState {
        let n = self.ncomp;
        let nx = cur.nx;
        let dt = self.bg.grid.dt();
        let g00 = self.bg.level(j).g_inv[0];
        let mut rest = SliceState::zeros(n, nx);
        let zero_mu = SliceState::zeros(n, nx);
        q_eval(self.bg, self.op, j, cur, &zero_mu, &mut rest);
        let mut b_other = SliceState::zeros(n, nx);
        self.apply_b(&mats.b, other, &mut b_other);
        let sign = if forward { 1.0 } else { -1.0 };
        let mut rhs = SliceState::zeros(n, nx);
        for k in 0..n * nx {
            let s = source.map(|s| s.v[k]).unwrap_or(ZERO);
            rhs.v[k] = s - rest.v[k] + (g00 / (dt * dt)) * (2.0 * cur.v[k] - other.v[k])
                + sign * b_other.v[k] / (2.0 * dt);
        }
        let lu = if forward { &mats.plus } else { &mats.minus };
        let mut next = SliceState::zeros(n, nx);
        for i in 0..nx {
            let col: Vec<C64> = (0..n).map(|c| rhs.at(c, i)).collect();
            let sol = lu.solve_complex(&col);
            for c in 0..n {
                *next.at_mut(c, i) = sol[c];
            }
        }
        next
    }

    fn source_slice(&self, source: Option<&[Arr2]>, j: usize) -> Option<SliceState> {
        source.map(|s| SliceState::from_level(s, j))
    }

    /// Solve from Cauchy data (value, dt-value) on slice sigma. The returned
    /// arrays cover the whole grid; levels on an unswept side stay zero.
    pub fn evolve(
        &self,
        sigma: usize,
        value: &SliceState,
        mu: &SliceState,
        source: Option<&[Arr2]>,
        direction: Direction,
    ) -> Result<CompArrays> {
        let grid = &self.bg.grid;
        grid.check_time_index(sigma)?;
        let n = self.ncomp;
        let dt = grid.dt();
        let mut out: CompArrays = (0..n).map(|_| Arr2::zeros(grid.nt, grid.nx)).collect();
        value.store_level(&mut out, sigma);

        let src_sigma = self.source_slice(source, sigma);
        let acc = self.second_time_derivative(sigma, value, mu, src_sigma.as_ref());

        let fwd = matches!(direction, Direction::Forward | Direction::Both);
        let bwd = matches!(direction, Direction::Backward | Direction::Both);
        if fwd {
            if sigma + 1 >= grid.nt {
                return Err(Error::Evolution("no room above the data slice".into()));
            }
            let mut first = SliceState::zeros(n, grid.nx);
            for k in 0..n * grid.nx {
                first.v[k] = value.v[k] + dt * mu.v[k] + 0.5 * dt * dt * acc.v[k];
            }
            first.store_level(&mut out, sigma + 1);
            let mut prev = value.clone();
            let mut cur = first;
            for j in sigma + 1..grid.nt - 1 {
                let mats = self.level_matrices(j)?;
                let src = self.source_slice(source, j);
                let next = self.step(j, &cur, &prev, src.as_ref(), &mats, true);
                next.store_level(&mut out, j + 1);
                prev = cur;
                cur = next;
            }
        }
        if bwd {
            if sigma == 0 {
                return Err(Error::Evolution("no room below the data slice".into()));
            }
            let mut first = SliceState::zeros(n, grid.nx);
            for k in 0..n * grid.nx {
                first.v[k] = value.v[k] - dt * mu.v[k] + 0.5 * dt * dt * acc.v[k];
            }
            first.store_level(&mut out, sigma - 1);
            let mut prev = value.clone();
            let mut cur = first;
            for j in (1..sigma).rev() {
                let mats = self.level_matrices(j)?;
                let src = self.source_slice(source, j);
                let next = self.step(j, &cur, &prev, src.as_ref(), &mats, false);
                next.store_level(&mut out, j - 1);
                prev = cur;
                cur = next;
            }
        }
        Ok(out)
    }

    /// Retarded sweep: zero data on the two bottom levels, march upward
    /// through the source. Cells outside the mask (the dilated causal cone
    /// of the source) are pinned to zero after every step; the continuum
    /// solution vanishes there identically.
    pub fn retarded(&self, source: &[Arr2], mask: Option<&dyn Fn(usize, usize) -> bool>) -> Result<CompArrays> {
        self.sweep(source, true, mask)
    }

    /// Advanced sweep: zero data on the two top levels, march downward.
    pub fn advanced(&self, source: &[Arr2], mask: Option<&dyn Fn(usize, usize) -> bool>) -> Result<CompArrays> {
        self.sweep(source, false, mask)
    }

    fn sweep(
        &self,
        source: &[Arr2],
        forward: bool,
        mask: Option<&dyn Fn(usize, usize) -> bool>,
    ) -> Result<CompArrays> {
        let grid = &self.bg.grid;
        let n = self.ncomp;
        assert_eq!(source.len(), n);
        let mut out: CompArrays = (0..n).map(|_| Arr2::zeros(grid.nt, grid.nx)).collect();
        let apply_mask = |level: usize, s: &mut SliceState| {
            if let Some(m) = mask {
                for i in 0..grid.nx {
                    if !m(level, i) {
                        for c in 0..n {
                            *s.at_mut(c, i) = ZERO;
                        }
                    }
                }
            }
        };
        let levels: Vec<usize> = if forward {
            (1..grid.nt - 1).collect()
        } else {
            (1..grid.nt - 1).rev().collect()
        };
        let mut prev = SliceState::zeros(n, grid.nx);
        let mut cur = SliceState::zeros(n, grid.nx);
        for j in levels {
            let mats = self.level_matrices(j)?;
            let src = SliceState::from_level(source, j);
            let target = if forward { j + 1 } else { j - 1 };
            let mut next = self.step(j, &cur, &prev, Some(&src), &mats, forward);
            apply_mask(target, &mut next);
            next.store_level(&mut out, target);
            prev = cur;
            cur = next;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundSpec;
    use crate::grid::Grid;
    use crate::util::observed_order;

    fn mink(nt: usize, nx: usize) -> Background {
        let grid = Grid::new(nt, nx, 0.0, 2.0, std::f64::consts::TAU).unwrap();
        Background::build(BackgroundSpec::minkowski(), grid).unwrap()
    }

    #[test]
    fn zero_data_zero_source_stays_zero() {
        let bg = mink(64, 16);
        let stepper = Stepper::new(&bg, WaveOperator::Tensor);
        let value = SliceState::zeros(10, 16);
        let mu = SliceState::zeros(10, 16);
        let out = stepper.evolve(32, &value, &mu, None, Direction::Both).unwrap();
        for arr in &out {
            assert_eq!(arr.max_abs(), 0.0);
        }
    }

    #[test]
    fn traveling_wave_converges() {
        // d'Alembert: data (sin(kx), -k cos(kx)) rides to sin(k(x - t))
        fn residual(nt: usize, nx: usize) -> f64 {
            let bg = mink(nt, nx);
            let grid = bg.grid;
            let k = 2.0 * std::f64::consts::TAU / grid.l;
            let slot = 4; // component (1,1)
            let mut value = SliceState::zeros(10, nx);
            let mut mu = SliceState::zeros(10, nx);
            let sigma = 2;
            for i in 0..nx {
                let x = grid.x(i);
                *value.at_mut(slot, i) = C64::new((k * (x - grid.t(sigma))).sin(), 0.0);
                *mu.at_mut(slot, i) = C64::new(-k * (k * (x - grid.t(sigma))).cos(), 0.0);
            }
            let stepper = Stepper::new(&bg, WaveOperator::Tensor);
            let out = stepper.evolve(sigma, &value, &mu, None, Direction::Forward).unwrap();
            let mut worst: f64 = 0.0;
            for j in sigma..grid.nt {
                for i in 0..nx {
                    let exact = (k * (grid.x(i) - grid.t(j))).sin();
                    worst = worst.max((out[slot].at(j, i) - exact).norm());
                }
            }
            worst
        }
        let order = observed_order(residual(128, 32), residual(256, 64));
        assert!(order >= 1.8, "order {order}");
    }

    #[test]
    fn evolution_is_deterministic() {
        let bg = mink(64, 16);
        let stepper = Stepper::new(&bg, WaveOperator::Tensor);
        let mut value = SliceState::zeros(10, 16);
        for i in 0..16 {
            *value.at_mut(0, i) = C64::new((i as f64 * 0.3).sin(), 0.2);
        }
        let mu = SliceState::zeros(10, 16);
        let a = stepper.evolve(10, &value, &mu, None, Direction::Both).unwrap();
        let b = stepper.evolve(10, &value, &mu, None, Direction::Both).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.v, y.v);
        }
    }
}
