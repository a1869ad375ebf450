//! Cauchy data, the data-level constraint map, hyperbolic evolution of the
//! tensor wave equation and the full existence pipeline: gauge the data to
//! de Donder form, evolve, undo the gauge transformation.

use num_complex::Complex64;

use crate::background::{Background, DIM};
use crate::error::{Error, Result};
use crate::fields::{check_same_grid, sym_index, Arr2, SymField2, C64, SYM_COMPONENTS};
use crate::gauge::to_de_donder;
use crate::grid::Grid;
use crate::hyperbolic::{Direction, SliceState, Stepper, WaveOperator};
use crate::util::LeastSquaresProjector;

const ZERO: C64 = Complex64::new(0.0, 0.0);

/// Pair (gamma, nabla_n gamma) restricted to a constant-time slice.
#[derive(Debug, Clone)]
pub struct CauchyData {
    pub sigma: usize,
    /// comps[slot][i]
    pub value: Vec<Vec<C64>>,
    /// normal covariant derivative, same layout
    pub velocity: Vec<Vec<C64>>,
}

impl CauchyData {
    pub fn zeros(grid: &Grid, sigma: usize) -> Self {
        CauchyData {
            sigma,
            value: vec![vec![ZERO; grid.nx]; SYM_COMPONENTS],
            velocity: vec![vec![ZERO; grid.nx]; SYM_COMPONENTS],
        }
    }

    pub fn nx(&self) -> usize {
        self.value[0].len()
    }

    pub fn max_abs(&self) -> f64 {
        self.value
            .iter()
            .chain(self.velocity.iter())
            .flat_map(|v| v.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn diff_max(&self, other: &CauchyData) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.value.iter().zip(&other.value) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).norm());
            }
        }
        for (a, b) in self.velocity.iter().zip(&other.velocity) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).norm());
            }
        }
        worst
    }
}

/// Data of the four constraint components n^a L_{ab} on the slice.
#[derive(Debug, Clone)]
pub struct ConstraintValue {
    pub comps: [Vec<C64>; DIM],
}

impl ConstraintValue {
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flat_map(|v| v.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Restriction and normal derivative of a spacetime field on a slice.
pub fn extract_data(bg: &Background, gamma: &SymField2, sigma: usize) -> Result<CauchyData> {
    check_same_grid(&bg.grid, &gamma.grid)?;
    if sigma < 2 || sigma + 2 >= bg.grid.nt {
        return Err(Error::Support(format!(
            "data slice {sigma} too close to the temporal boundary"
        )));
    }
    let grid = bg.grid;
    let lev = bg.level(sigma);
    let dt = grid.dt();
    let mut data = CauchyData::zeros(&grid, sigma);
    for (slot, &(a, b)) in crate::fields::SYM_PAIRS.iter().enumerate() {
        let arr = &gamma.comps[slot];
        for i in 0..grid.nx {
            data.value[slot][i] = arr.at(sigma, i);
            // centered time derivative, then Christoffel corrections
            let d0 = (arr.at(sigma + 1, i) - arr.at(sigma - 1, i)) / (2.0 * dt);
            let mut v = d0;
            for e in 0..DIM {
                let ca = lev.gamma[e][0][a];
                if ca != 0.0 {
                    v -= ca * gamma.comp(e, b).at(sigma, i);
                }
                let cb = lev.gamma[e][0][b];
                if cb != 0.0 {
                    v -= cb * gamma.comp(a, e).at(sigma, i);
                }
            }
            data.velocity[slot][i] = lev.normal_up[0] * v;
        }
    }
    Ok(data)
}

/// Coordinate time derivative of the field on the slice, recovered from the
/// normal covariant derivative.
pub fn data_time_derivative(bg: &Background, data: &CauchyData) -> SliceState {
    let lev = bg.level(data.sigma);
    let a_scale = 1.0 / lev.normal_up[0];
    let nx = data.nx();
    let mut mu = SliceState::zeros(SYM_COMPONENTS, nx);
    for (slot, &(a, b)) in crate::fields::SYM_PAIRS.iter().enumerate() {
        for i in 0..nx {
            let mut v = a_scale * data.velocity[slot][i];
            for e in 0..DIM {
                let ca = lev.gamma[e][0][a];
                if ca != 0.0 {
                    v += ca * data.value[sym_index(e, b)][i];
                }
                let cb = lev.gamma[e][0][b];
                if cb != 0.0 {
                    v += cb * data.value[sym_index(a, e)][i];
                }
            }
            *mu.at_mut(slot, i) = v;
        }
    }
    mu
}

/// Linear-in-time extension of the data over a grid that shares the chart.
/// The extension reproduces the data exactly under `extract_data` because
/// the centered time stencil is exact on linear profiles.
fn linear_extension(bg: &Background, data: &CauchyData, sigma: usize) -> SymField2 {
    let grid = bg.grid;
    let mu = data_time_derivative(bg, data);
    let t_sigma = grid.t(sigma);
    let mut out = SymField2::zeros(grid);
    for slot in 0..SYM_COMPONENTS {
        for j in 0..grid.nt {
            let dt_off = grid.t(j) - t_sigma;
            let dst = out.comps[slot].row_mut(j);
            for i in 0..grid.nx {
                dst[i] = data.value[slot][i] + dt_off * mu.at(slot, i);
            }
        }
    }
    out
}

/// The constraint map: n^a L_{ab} of any local extension reproducing the
/// data, evaluated on the slice. These components carry no second time
/// derivative, so the linear extension is as good as any other at
/// truncation order.
pub fn constraint(bg: &Background, data: &CauchyData) -> Result<ConstraintValue> {
    let half = 3usize;
    let (slab, center) = bg.slab(data.sigma, half)?;
    let mut slab_data = data.clone();
    slab_data.sigma = center;
    let ext = linear_extension(&slab, &slab_data, center);
    let l = crate::linop::linearized_einstein(&slab, &ext)?;
    let lev = slab.level(center);
    let n0 = lev.normal_up[0];
    let nx = slab.grid.nx;
    let mut comps: [Vec<C64>; DIM] = Default::default();
    for b in 0..DIM {
        comps[b] = (0..nx).map(|i| n0 * l.comp(0, b).at(center, i)).collect();
    }
    Ok(ConstraintValue { comps })
}

/// Evolve the tensor wave equation from Cauchy data, optionally with a
/// source, filling the grid in the requested direction.
pub fn evolve(
    bg: &Background,
    data: &CauchyData,
    source: Option<&SymField2>,
    direction: Direction,
) -> Result<SymField2> {
    bg.grid.check_time_index(data.sigma)?;
    if let Some(src) = source {
        check_same_grid(&bg.grid, &src.grid)?;
        // the Taylor start consumes the source on the data slice and its
        // neighbours; demand exact zeros there
        let lo = data.sigma.saturating_sub(1);
        for layer in lo..=(data.sigma + 1).min(bg.grid.nt - 1) {
            for arr in &src.comps {
                if arr.row(layer).iter().any(|z| *z != ZERO) {
                    return Err(Error::Support(format!(
                        "source must vanish on the initialization layer {layer}"
                    )));
                }
            }
        }
    }
    let stepper = Stepper::new(bg, WaveOperator::Tensor);
    let nx = bg.grid.nx;
    let mut value = SliceState::zeros(SYM_COMPONENTS, nx);
    for slot in 0..SYM_COMPONENTS {
        for i in 0..nx {
            *value.at_mut(slot, i) = data.value[slot][i];
        }
    }
    let mu = data_time_derivative(bg, data);
    let comps = stepper.evolve(data.sigma, &value, &mu, source.map(|s| s.comps.as_slice()), direction)?;
    Ok(crate::hyperbolic::sym_of_comps(bg, comps))
}

/// Least-squares projection of arbitrary data onto the constraint surface.
/// The constraint Jacobian is assembled by strided probing (the map is
/// local in x), and the minimum-norm correction is applied to value and
/// velocity together.
pub fn project_to_constraints(bg: &Background, data: &CauchyData) -> Result<CauchyData> {
    let nx = data.nx();
    let rows = DIM * nx;
    let cols = 2 * SYM_COMPONENTS * nx;
    // comb spacing must divide nx so the periodic gap between teeth never
    // shrinks below the constraint stencil width
    let stride = if nx % 8 == 0 { 8 } else { nx };
    let mut jac = vec![0.0f64; rows * cols];

    let col_of = |part: usize, slot: usize, i: usize| -> usize {
        (part * SYM_COMPONENTS + slot) * nx + i
    };

    let mut probe = CauchyData::zeros(&bg.grid, data.sigma);
    for part in 0..2 {
        for slot in 0..SYM_COMPONENTS {
            for off in 0..stride.min(nx) {
                // activate a comb of unit entries with safe spacing
                let mut active = Vec::new();
                {
                    let target =
                        if part == 0 { &mut probe.value } else { &mut probe.velocity };
                    let mut i = off;
                    while i < nx {
                        target[slot][i] = Complex64::new(1.0, 0.0);
                        active.push(i);
                        i += stride;
                    }
                }
                let c = constraint(bg, &probe)?;
                for b in 0..DIM {
                    for (ri, v) in c.comps[b].iter().enumerate() {
                        if v.norm() == 0.0 {
                            continue;
                        }
                        // attribute to the unique nearby active column
                        let mut best = active[0];
                        let mut best_d = nx;
                        for &ai in &active {
                            let d = (ri as isize - ai as isize)
                                .rem_euclid(nx as isize)
                                .min((ai as isize - ri as isize).rem_euclid(nx as isize))
                                as usize;
                            if d < best_d {
                                best_d = d;
                                best = ai;
                            }
                        }
                        jac[(b * nx + ri) * cols + col_of(part, slot, best)] = v.re;
                    }
                }
                {
                    let target =
                        if part == 0 { &mut probe.value } else { &mut probe.velocity };
                    for &ai in &active {
                        target[slot][ai] = ZERO;
                    }
                }
            }
        }
    }

    let projector = LeastSquaresProjector::new(jac, rows, cols)?;
    let before = constraint(bg, data)?;
    let mut flat: Vec<C64> = Vec::with_capacity(cols);
    for part in 0..2 {
        let src = if part == 0 { &data.value } else { &data.velocity };
        for slot in 0..SYM_COMPONENTS {
            flat.extend_from_slice(&src[slot]);
        }
    }
    let mut resid: Vec<C64> = Vec::with_capacity(rows);
    for b in 0..DIM {
        resid.extend_from_slice(&before.comps[b]);
    }
    projector.project(&mut flat, &resid);

    let mut out = CauchyData::zeros(&bg.grid, data.sigma);
    let mut k = 0;
    for part in 0..2 {
        for slot in 0..SYM_COMPONENTS {
            for i in 0..nx {
                if part == 0 {
                    out.value[slot][i] = flat[k];
                } else {
                    out.velocity[slot][i] = flat[k];
                }
                k += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub gamma: SymField2,
    /// de Donder residual of the evolved hyperbolic solution; its decay
    /// under refinement is the discrete propagation of the gauge condition
    pub de_donder_rms: f64,
    pub constraint_norm: f64,
}

/// Existence pipeline: extend the data, gauge the extension to de Donder
/// form with zero gauge data on the slice, evolve the hyperbolic equation,
/// and undo the gauge transformation. The output reproduces the input data
/// and satisfies the linearized field equation at truncation order.
pub fn solve_linearized(
    bg: &Background,
    data: &CauchyData,
    constraint_tol: Option<f64>,
) -> Result<SolveReport> {
    let sigma = data.sigma;
    if !bg.grid.is_interior_time(sigma) {
        return Err(Error::Index(format!("data slice {sigma} must be interior")));
    }
    let cons = constraint(bg, data)?;
    let cnorm = cons.max_abs();
    let tol = constraint_tol.unwrap_or_else(|| {
        let h = bg.grid.dx().max(2.0 * bg.grid.dt());
        50.0 * h * h * data.max_abs().max(1.0)
    });
    if cnorm > tol {
        return Err(Error::Precondition {
            name: "initial-value constraint".into(),
            measured: cnorm,
            tol,
        });
    }

    let chi = linear_extension(bg, data, sigma);
    let gauged = to_de_donder(bg, &chi, sigma)?;
    let tilde_data = extract_data(bg, &gauged.transformed, sigma)?;
    let hat = evolve(bg, &tilde_data, None, Direction::Both)?;
    let dd = crate::fields::de_donder_residual(bg, &hat)?;
    let lie = crate::fields::lie_derivative_metric(bg, &gauged.vector)?;
    let gamma = hat.subbed(&lie)?;
    Ok(SolveReport { gamma, de_donder_rms: dd.rms_interior(), constraint_norm: cnorm })
}

/// Seeded random data projected onto the constraint surface; the shared
/// factory behind the phase-space and algebra tests.
pub fn random_constrained_data(bg: &Background, seed: u64, sigma: usize) -> Result<CauchyData> {
    let gamma = crate::fields::synthesize_sym2(
        bg,
        &crate::fields::Recipe::Random { seed, modes_t: 3, modes_x: 3, complex: false },
        &[Complex64::new(1.0, 0.0); SYM_COMPONENTS],
    )?;
    let raw = extract_data(bg, &gamma, sigma)?;
    project_to_constraints(bg, &raw)
}

/// Seeded solution of the linearized equation, the composition of the data
/// factory and the existence pipeline.
pub fn random_solution(bg: &Background, seed: u64) -> Result<SymField2> {
    let sigma = bg.grid.nt / 2;
    let data = random_constrained_data(bg, seed, sigma)?;
    Ok(solve_linearized(bg, &data, None)?.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundSpec;
    use crate::fields::{
        lie_derivative_metric, metric_field, synthesize_sym2, synthesize_vector, Recipe, VecField,
        Variance,
    };
    use crate::util::observed_order;

    const ONE: C64 = Complex64::new(1.0, 0.0);

    fn mink(nt: usize, nx: usize) -> Background {
        let grid = Grid::new(nt, nx, 0.0, 2.0, std::f64::consts::TAU).unwrap();
        Background::build(BackgroundSpec::minkowski(), grid).unwrap()
    }

    fn desitter(nt: usize, nx: usize) -> Background {
        let grid = Grid::new(nt, nx, -2.2, -0.2, std::f64::consts::TAU).unwrap();
        Background::build(BackgroundSpec::de_sitter(1.0), grid).unwrap()
    }

    #[test]
    fn extract_zero_and_linear_fields() {
        let bg = mink(32, 16);
        let zero = SymField2::zeros(bg.grid);
        let d = extract_data(&bg, &zero, 16).unwrap();
        assert_eq!(d.max_abs(), 0.0);

        // gamma = t * const tensor has exactly constant velocity
        let mut lin = SymField2::zeros(bg.grid);
        for j in 0..bg.grid.nt {
            let t = bg.grid.t(j);
            for z in lin.comps[4].row_mut(j) {
                *z = Complex64::new(2.5 * t, 0.0);
            }
        }
        let d = extract_data(&bg, &lin, 16).unwrap();
        for i in 0..16 {
            assert!((d.velocity[4][i] - 2.5).norm() <= 1e-13);
        }
    }

    #[test]
    fn metric_has_zero_velocity() {
        let bg = desitter(64, 16);
        let g = metric_field(&bg);
        let d = extract_data(&bg, &g, 32).unwrap();
        // nabla_n g = 0 up to the time stencil on the conformal factor
        let run_fine = extract_data(&desitter(128, 16), &metric_field(&desitter(128, 16)), 64)
            .unwrap();
        let coarse: f64 =
            d.velocity.iter().flat_map(|v| v.iter()).map(|z| z.norm()).fold(0.0, f64::max);
        let fine: f64 = run_fine
            .velocity
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(observed_order(coarse, fine) >= 1.9);
    }

    #[test]
    fn constraint_gauge_invariance() {
        // data of a pure gauge field sits in the kernel: to roundoff on the
        // flat torus, at truncation order on the expanding chart
        let run = |make: fn(usize, usize) -> Background, nt: usize, nx: usize| -> f64 {
            let bg = make(nt, nx);
            let w: VecField = synthesize_vector(
                &bg,
                &Recipe::Random { seed: 4, modes_t: 2, modes_x: 2, complex: false },
                &[ONE; DIM],
                Variance::Upper,
            )
            .unwrap();
            let gamma = lie_derivative_metric(&bg, &w).unwrap();
            let d = extract_data(&bg, &gamma, nt / 2).unwrap();
            constraint(&bg, &d).unwrap().max_abs()
        };
        assert!(run(mink, 64, 32) <= 1e-12);
        let order = observed_order(run(desitter, 64, 32), run(desitter, 128, 64));
        assert!(order >= 1.5, "order {order}");
    }

    #[test]
    fn constraint_nonzero_for_bump_metric_data() {
        let bg = mink(64, 32);
        let bump = synthesize_sym2(
            &bg,
            &Recipe::Bump { center: (1.0, 3.0), radii: (0.4, 1.2) },
            &crate::fields::polarization_from(&[(0, 0, -1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0)]),
        )
        .unwrap();
        let mut d = extract_data(&bg, &bump, 32).unwrap();
        for slot in 0..SYM_COMPONENTS {
            for v in &mut d.velocity[slot] {
                *v = ZERO;
            }
        }
        let c = constraint(&bg, &d).unwrap();
        assert!(c.max_abs() > 1e-3, "constraint norm {:.3e}", c.max_abs());
    }

    #[test]
    fn projection_lands_on_constraint_surface() {
        let bg = mink(64, 32);
        let data = random_constrained_data(&bg, 7, 32).unwrap();
        let c = constraint(&bg, &data).unwrap();
        assert!(c.max_abs() <= 1e-7, "residual constraint {:.3e}", c.max_abs());
    }

    #[test]
    fn evolve_is_deterministic_and_reproduces_data() {
        let bg = mink(128, 32);
        let data = random_constrained_data(&bg, 11, 64).unwrap();
        let a = evolve(&bg, &data, None, Direction::Both).unwrap();
        let b = evolve(&bg, &data, None, Direction::Both).unwrap();
        for (x, y) in a.comps.iter().zip(&b.comps) {
            assert_eq!(x.v, y.v);
        }
    }

    #[test]
    fn solve_pipeline_on_pure_gauge_data() {
        // data of a pure gauge field: the solution must carry the same data
        // and satisfy the field equation increasingly well
        let run = |nt: usize, nx: usize| -> (f64, f64) {
            let bg = mink(nt, nx);
            let w = synthesize_vector(
                &bg,
                &Recipe::Random { seed: 13, modes_t: 2, modes_x: 2, complex: false },
                &[ONE; DIM],
                Variance::Upper,
            )
            .unwrap();
            let gamma = lie_derivative_metric(&bg, &w).unwrap();
            let data = extract_data(&bg, &gamma, nt / 2).unwrap();
            let sol = solve_linearized(&bg, &data, None).unwrap();
            let back = extract_data(&bg, &sol.gamma, nt / 2).unwrap();
            let l = crate::linop::linearized_einstein(&bg, &sol.gamma).unwrap();
            (back.diff_max(&data), l.rms_interior())
        };
        let (d_coarse, l_coarse) = run(128, 32);
        let (d_fine, l_fine) = run(256, 64);
        assert!(observed_order(d_coarse, d_fine) >= 1.8 || d_fine <= 1e-10, "data {d_coarse:.3e} -> {d_fine:.3e}");
        assert!(observed_order(l_coarse, l_fine) >= 1.5, "L {l_coarse:.3e} -> {l_fine:.3e}");
    }

    #[test]
    fn solve_rejects_violating_data() {
        let bg = mink(64, 32);
        let bump = synthesize_sym2(
            &bg,
            &Recipe::Bump { center: (1.0, 3.0), radii: (0.4, 1.2) },
            &crate::fields::polarization_from(&[(0, 0, -1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0)]),
        )
        .unwrap();
        let mut d = extract_data(&bg, &bump, 32).unwrap();
        for slot in 0..SYM_COMPONENTS {
            for v in &mut d.velocity[slot] {
                *v = ZERO;
            }
        }
        assert!(matches!(
            solve_linearized(&bg, &d, Some(1e-8)),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn random_solution_solves_field_equation() {
        for make in [mink as fn(usize, usize) -> Background, desitter] {
            let run = |nt: usize, nx: usize| -> f64 {
                let bg = make(nt, nx);
                let gamma = random_solution(&bg, 19).unwrap();
                crate::linop::linearized_einstein(&bg, &gamma).unwrap().rms_interior()
            };
            let order = observed_order(run(128, 32), run(256, 64));
            assert!(order >= 1.5, "order {order}");
        }
    }
}
