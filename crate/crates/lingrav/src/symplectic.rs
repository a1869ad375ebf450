//! Pre-symplectic product on solutions, gauge-invariant smeared observables,
//! the advanced-minus-retarded pairing and the Poisson bracket, plus the
//! slice identity tying the product against pure-gauge directions to the
//! constraint components.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::background::{Background, DIM};
use crate::error::{Error, Result};
use crate::fields::{
    check_same_grid, de_donder_residual, lie_derivative_metric, spacetime_pairing, trace,
    trace_reverse, ScalarField, SymField2, VecField, Variance, C64,
};
use crate::greens::{greens_apply, GreensKind};
use crate::grid::IndexWindow;
use crate::hyperbolic::{scalar_of_comps, sym_of_comps, WaveOperator};
use crate::linop::{conjugate_momentum, linearized_einstein};
use crate::util::smoothstep;

const ZERO: C64 = Complex64::new(0.0, 0.0);

/// Slice integral of gamma1 pi2 - gamma2 pi1 against the induced volume
/// element; complex-bilinear and antisymmetric by construction,
/// Cauchy-surface independent on solutions.
pub fn presymplectic(
    bg: &Background,
    gamma1: &SymField2,
    gamma2: &SymField2,
    sigma: usize,
) -> Result<C64> {
    check_same_grid(&bg.grid, &gamma1.grid)?;
    check_same_grid(&bg.grid, &gamma2.grid)?;
    bg.grid.check_time_index(sigma)?;
    let (_, pi1) = conjugate_momentum(bg, gamma1)?;
    let (_, pi2) = conjugate_momentum(bg, gamma2)?;
    let nx = bg.grid.nx;
    let vals: Vec<C64> = (0..nx)
        .map(|i| {
            let mut acc = ZERO;
            for (slot, _) in crate::fields::SYM_PAIRS.iter().enumerate() {
                let m = crate::fields::sym_multiplicity(slot);
                acc += m
                    * (gamma1.comps[slot].at(sigma, i) * pi2.comps[slot].at(sigma, i)
                        - gamma2.comps[slot].at(sigma, i) * pi1.comps[slot].at(sigma, i));
            }
            acc
        })
        .collect();
    Ok(crate::fields::slice_integral(bg, &vals, sigma))
}

/// Divergence of the conserved current of two solutions; a diagnostic for
/// slice independence.
pub fn current_divergence(
    bg: &Background,
    gamma1: &SymField2,
    gamma2: &SymField2,
) -> Result<ScalarField> {
    let (pi1, _) = conjugate_momentum(bg, gamma1)?;
    let (pi2, _) = conjugate_momentum(bg, gamma2)?;
    // j^c = gamma2 Pi1^{c..} - gamma1 Pi2^{c..}; take the covariant
    // divergence of the vector by contraction with the 10 slots
    let grid = bg.grid;
    let mut jvec = VecField::zeros(grid, Variance::Upper);
    for c in 0..DIM {
        for (slot, _) in crate::fields::SYM_PAIRS.iter().enumerate() {
            let m = crate::fields::sym_multiplicity(slot);
            for j in 0..grid.nt {
                let p1 = pi1.comps[c][slot].row(j).to_vec();
                let p2 = pi2.comps[c][slot].row(j).to_vec();
                let g1 = gamma1.comps[slot].row(j).to_vec();
                let g2 = gamma2.comps[slot].row(j).to_vec();
                let dst = jvec.comps[c].row_mut(j);
                for i in 0..grid.nx {
                    dst[i] += m * (g2[i] * p1[i] - g1[i] * p2[i]);
                }
            }
        }
    }
    // nabla_c j^c = partial_c j^c + Gamma^c_{ce} j^e
    let mut out = ScalarField::zeros(grid);
    let d0 = jvec.comps[0].dt(&grid);
    let d1 = jvec.comps[1].dx(&grid);
    for j in 0..grid.nt {
        let lev = bg.level(j);
        for i in 0..grid.nx {
            let mut v = d0.at(j, i) + d1.at(j, i);
            for c in 0..DIM {
                for e in 0..DIM {
                    let ch = lev.gamma[c][c][e];
                    if ch != 0.0 {
                        v += ch * jvec.comps[e].at(j, i);
                    }
                }
            }
            *out.data.at_mut(j, i) = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceClass {
    DivergenceFreeSymmetricPart,
    DivergenceFree,
    Unrestricted,
}

/// Compactly supported smearing field with divergence metadata.
#[derive(Debug, Clone)]
pub struct Observable {
    pub f: SymField2,
    pub class: DivergenceClass,
    pub measured_divergence: f64,
}

impl Observable {
    /// Classify a symmetric test tensor against a measured truncation
    /// floor. For symmetric storage the two divergence-free classes
    /// coincide; the stricter label is kept.
    pub fn new(bg: &Background, f: SymField2, floor: f64) -> Result<Self> {
        check_same_grid(&bg.grid, &f.grid)?;
        let div = crate::fields::divergence_sym2(bg, &f).rms_interior();
        let class = if div <= floor {
            DivergenceClass::DivergenceFreeSymmetricPart
        } else {
            DivergenceClass::Unrestricted
        };
        Ok(Observable { f, class, measured_divergence: div })
    }

    pub fn gauge_invariant(&self) -> bool {
        !matches!(self.class, DivergenceClass::Unrestricted)
    }
}

/// Evaluate the smeared observable on a representative field.
pub fn observable_eval(bg: &Background, obs: &Observable, gamma: &SymField2) -> Result<C64> {
    if !obs.gauge_invariant() {
        return Err(Error::Contract(format!(
            "observable is not gauge invariant: measured divergence {:.3e}",
            obs.measured_divergence
        )));
    }
    spacetime_pairing(bg, gamma, &obs.f)
}

/// The advanced-minus-retarded pairing of two symmetric test tensors,
/// smearing the propagated trace reverse of the second against the first.
pub fn pauli_jordan_pairing(bg: &Background, f1: &SymField2, f2: &SymField2) -> Result<C64> {
    let (bar2, _) = trace_reverse(bg, f2)?;
    let e = greens_apply(bg, WaveOperator::Tensor, GreensKind::PauliJordan, &bar2.comps)?;
    let gamma = sym_of_comps(bg, e);
    spacetime_pairing(bg, &gamma, f1)
}

/// Both routes of the trace-reversal expansion of the pairing: the full
/// value, the un-reversed tensor pairing, and the scalar-propagator trace
/// term. The identity -2 full = -2 plain + scalar holds at truncation
/// order.
pub struct PairingExpansion {
    pub full: C64,
    pub plain: C64,
    pub scalar_trace: C64,
}

impl PairingExpansion {
    pub fn residual(&self) -> f64 {
        (-2.0 * self.full - (-2.0 * self.plain + self.scalar_trace)).norm()
    }
}

pub fn pauli_jordan_expansion(
    bg: &Background,
    f1: &SymField2,
    f2: &SymField2,
) -> Result<PairingExpansion> {
    let full = pauli_jordan_pairing(bg, f1, f2)?;
    let e_plain = greens_apply(bg, WaveOperator::Tensor, GreensKind::PauliJordan, &f2.comps)?;
    let plain = spacetime_pairing(bg, &sym_of_comps(bg, e_plain), f1)?;
    // scalar term: integral of tr f1 times the scalar propagator applied to
    // tr f2
    let tr1 = trace(bg, f1);
    let tr2 = trace(bg, f2);
    let e_scalar = greens_apply(
        bg,
        WaveOperator::Scalar,
        GreensKind::PauliJordan,
        std::slice::from_ref(&tr2.data),
    )?;
    let es = scalar_of_comps(bg, e_scalar);
    let grid = bg.grid;
    let mut acc = ZERO;
    for j in 0..grid.nt {
        let lev = bg.level(j);
        let mut lacc = ZERO;
        for i in 0..grid.nx {
            lacc += tr1.data.at(j, i) * es.data.at(j, i);
        }
        acc += lacc * lev.sqrt_minus_g;
    }
    let scalar_trace = acc * grid.dt() * grid.dx();
    Ok(PairingExpansion { full, plain, scalar_trace })
}

#[derive(Debug, Clone)]
pub struct BracketReport {
    /// -2 E(f1, bar f2), the Poisson bracket
    pub value: C64,
    /// 4 omega(E bar f1, E bar f2) evaluated on the central slice
    pub omega_route: C64,
    pub discrepancy: f64,
}

/// Poisson bracket of two gauge-invariant observables, with the symplectic
/// cross-evaluation reported alongside.
pub fn poisson_bracket(bg: &Background, o1: &Observable, o2: &Observable) -> Result<BracketReport> {
    if !o1.gauge_invariant() || !o2.gauge_invariant() {
        return Err(Error::Contract("bracket needs gauge-invariant observables".into()));
    }
    let value = -2.0 * pauli_jordan_pairing(bg, &o1.f, &o2.f)?;
    let (bar1, _) = trace_reverse(bg, &o1.f)?;
    let (bar2, _) = trace_reverse(bg, &o2.f)?;
    let e1 = sym_of_comps(bg, greens_apply(bg, WaveOperator::Tensor, GreensKind::PauliJordan, &bar1.comps)?);
    let e2 = sym_of_comps(bg, greens_apply(bg, WaveOperator::Tensor, GreensKind::PauliJordan, &bar2.comps)?);
    let sigma = bg.grid.nt / 2;
    let omega_route = 4.0 * presymplectic(bg, &e1, &e2, sigma)?;
    let discrepancy = (value - omega_route).norm();
    Ok(BracketReport { value, omega_route, discrepancy })
}

/// Both sides of the slice identity omega(gamma, Lie_w g) =
/// 2 int_Sigma w^a L_{ab}(gamma) n^b dvol, evaluated independently.
pub fn constraint_pairing_identity(
    bg: &Background,
    gamma: &SymField2,
    w: &VecField,
    sigma: usize,
) -> Result<(C64, C64)> {
    let lie = lie_derivative_metric(bg, w)?;
    let lhs = presymplectic(bg, gamma, &lie, sigma)?;
    let l = linearized_einstein(bg, gamma)?;
    let upper = match w.variance {
        Variance::Upper => w.clone(),
        Variance::Lower => crate::fields::raise_vec(bg, w),
    };
    let lev = bg.level(sigma);
    let nx = bg.grid.nx;
    let vals: Vec<C64> = (0..nx)
        .map(|i| {
            let mut acc = ZERO;
            for a in 0..DIM {
                // n^b L_{ab} picks the time row through the diagonal normal
                acc += upper.comps[a].at(sigma, i) * lev.normal_up[0] * l.comp(a, 0).at(sigma, i);
            }
            2.0 * acc
        })
        .collect();
    let rhs = crate::fields::slice_integral(bg, &vals, sigma);
    Ok((lhs, rhs))
}

/// Divergence-free test tensor supported in a time slab, manufactured from
/// a spacelike-compact solution: twice the linearized Einstein tensor of
/// the solution cut off by a plateau-exact monotone profile. Below the slab
/// the cutoff is exactly zero; above it the continuum field equation makes
/// the tensor vanish, so the residue there is discretization noise and is
/// windowed away.
pub fn slab_test_tensor(
    bg: &Background,
    solution: &SymField2,
    window: IndexWindow,
) -> Result<SymField2> {
    let grid = bg.grid;
    if window.t_hi <= window.t_lo + 5 {
        return Err(Error::Geometry("slab window needs at least 6 time layers".into()));
    }
    if window.t_lo < 2 || window.t_hi + 2 >= grid.nt {
        return Err(Error::Support("slab window touches the temporal boundary".into()));
    }
    // rise across the middle of the window, two layers of margin so the
    // operator stencil of the transition stays inside
    let t_start = grid.t(window.t_lo + 2);
    let t_end = grid.t(window.t_hi - 2);
    let mut cut = solution.clone();
    for slot in 0..crate::fields::SYM_COMPONENTS {
        for j in 0..grid.nt {
            let chi = smoothstep((grid.t(j) - t_start) / (t_end - t_start));
            if chi == 0.0 {
                for z in cut.comps[slot].row_mut(j) {
                    *z = ZERO;
                }
            } else if chi != 1.0 {
                for z in cut.comps[slot].row_mut(j) {
                    *z *= chi;
                }
            }
        }
    }
    let mut f = linearized_einstein(bg, &cut)?;
    f.scale(Complex64::new(2.0, 0.0));
    let full_window =
        IndexWindow { t_lo: window.t_lo, t_hi: window.t_hi, x_lo: 0, x_hi: grid.nx - 1 };
    Ok(f.windowed(full_window))
}

/// Exactly divergence-free-in-the-continuum null tensor 2 L(k) for a bump
/// k; its measured divergence defines the truncation floor for observable
/// classification.
pub fn null_test_tensor(bg: &Background, k: &SymField2) -> Result<SymField2> {
    let mut f = linearized_einstein(bg, k)?;
    f.scale(Complex64::new(2.0, 0.0));
    if let Some(w) = k.support {
        let grid = bg.grid;
        let dil = 2usize;
        let widened = IndexWindow {
            t_lo: w.t_lo.saturating_sub(dil),
            t_hi: (w.t_hi + dil).min(grid.nt - 1),
            x_lo: 0,
            x_hi: grid.nx - 1,
        };
        // the stencil dilates the support by two cells; everything beyond
        // is exactly zero already
        f = f.windowed(widened);
        if w.x_lo <= w.x_hi {
            let x_widened = IndexWindow {
                t_lo: widened.t_lo,
                t_hi: widened.t_hi,
                x_lo: (w.x_lo + grid.nx - dil) % grid.nx,
                x_hi: (w.x_hi + dil) % grid.nx,
            };
            f = f.windowed(x_widened);
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundSpec;
    use crate::cauchy::random_solution;
    use crate::fields::{polarization_from, synthesize_sym2, synthesize_vector, Recipe};
    use crate::grid::Grid;
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

    fn bump_k(bg: &Background, xc: f64, scale: f64) -> SymField2 {
        let grid = bg.grid;
        let tc = 0.5 * (grid.t0 + grid.t1);
        synthesize_sym2(
            bg,
            &Recipe::Bump { center: (tc, xc), radii: (0.22 * (grid.t1 - grid.t0), 1.2) },
            &polarization_from(&[
                (0, 0, 0.4 * scale),
                (1, 1, scale),
                (2, 2, -0.3 * scale),
                (1, 2, 0.6 * scale),
            ]),
        )
        .unwrap()
    }

    #[test]
    fn antisymmetry_is_exact() {
        let bg = mink(64, 16);
        let gamma = random_solution(&bg, 2).unwrap();
        let v = presymplectic(&bg, &gamma, &gamma, 32).unwrap();
        assert_eq!(v, ZERO);
    }

    #[test]
    fn slice_independence_for_solutions() {
        for make in [mink as fn(usize, usize) -> Background, desitter] {
            let run = |nt: usize, nx: usize| -> f64 {
                let bg = make(nt, nx);
                let g1 = random_solution(&bg, 5).unwrap();
                let g2 = random_solution(&bg, 6).unwrap();
                let s1 = nt / 3;
                let s2 = 2 * nt / 3;
                let a = presymplectic(&bg, &g1, &g2, s1).unwrap();
                let b = presymplectic(&bg, &g1, &g2, s2).unwrap();
                (a - b).norm()
            };
            let order = observed_order(run(128, 32), run(256, 64));
            assert!(order >= 1.5, "order {order}");
        }
    }

    #[test]
    fn pure_gauge_in_radical() {
        // relative to the size of a generic symplectic pairing; the flat
        // chart cancels to roundoff, the expanding chart at truncation order
        let run = |make: fn(usize, usize) -> Background, nt: usize, nx: usize| -> f64 {
            let bg = make(nt, nx);
            let gamma = random_solution(&bg, 7).unwrap();
            let w = synthesize_vector(
                &bg,
                &Recipe::Random { seed: 8, modes_t: 2, modes_x: 2, complex: false },
                &[ONE; DIM],
                Variance::Upper,
            )
            .unwrap();
            let lie = lie_derivative_metric(&bg, &w).unwrap();
            let other = random_solution(&bg, 8).unwrap();
            let scale = presymplectic(&bg, &gamma, &other, nt / 2).unwrap().norm().max(1.0);
            presymplectic(&bg, &gamma, &lie, nt / 2).unwrap().norm() / scale
        };
        assert!(run(mink, 128, 32) <= 1e-9);
        let (coarse, fine) = (run(desitter, 128, 32), run(desitter, 256, 64));
        let order = observed_order(coarse, fine);
        assert!(
            order >= 1.5 || fine <= 1e-9,
            "order {order}, coarse {coarse:.3e}, fine {fine:.3e}"
        );
    }

    #[test]
    fn constraint_identity_both_sides() {
        // off-shell form: both sides agree for a non-solution bump
        let run = |nt: usize, nx: usize| -> f64 {
            let bg = desitter(nt, nx);
            let gamma = bump_k(&bg, 2.0, 1.0);
            let w = synthesize_vector(
                &bg,
                &Recipe::Random { seed: 12, modes_t: 2, modes_x: 2, complex: false },
                &[ONE; DIM],
                Variance::Upper,
            )
            .unwrap();
            let (lhs, rhs) = constraint_pairing_identity(&bg, &gamma, &w, nt / 2).unwrap();
            (lhs - rhs).norm()
        };
        let order = observed_order(run(128, 32), run(256, 64));
        assert!(order >= 1.5, "order {order}");

        let bg = mink(64, 16);
        let gamma = bump_k(&bg, 2.0, 1.0);
        let zero_w = VecField::zeros(bg.grid, Variance::Upper);
        let (lhs, rhs) = constraint_pairing_identity(&bg, &gamma, &zero_w, 32).unwrap();
        assert_eq!(lhs, ZERO);
        assert_eq!(rhs, ZERO);
    }

    #[test]
    fn gauge_invariance_of_observables() {
        let run = |nt: usize, nx: usize| -> f64 {
            let bg = mink(nt, nx);
            let sol = random_solution(&bg, 3).unwrap();
            let window = IndexWindow { t_lo: nt / 4, t_hi: 3 * nt / 4, x_lo: 0, x_hi: nx - 1 };
            let f = slab_test_tensor(&bg, &sol, window).unwrap();
            let obs = Observable { f, class: DivergenceClass::DivergenceFreeSymmetricPart, measured_divergence: 0.0 };
            let gamma = random_solution(&bg, 9).unwrap();
            let w = synthesize_vector(
                &bg,
                &Recipe::Random { seed: 10, modes_t: 2, modes_x: 2, complex: false },
                &[ONE; DIM],
                Variance::Upper,
            )
            .unwrap();
            let shifted = gamma.added(&lie_derivative_metric(&bg, &w).unwrap()).unwrap();
            let a = observable_eval(&bg, &obs, &gamma).unwrap();
            let b = observable_eval(&bg, &obs, &shifted).unwrap();
            (a - b).norm()
        };
        let order = observed_order(run(128, 32), run(256, 64));
        assert!(order >= 1.5, "order {order}");
    }

    #[test]
    fn bracket_cross_route() {
        let run = |nt: usize, nx: usize| -> f64 {
            let bg = mink(nt, nx);
            let s1 = random_solution(&bg, 21).unwrap();
            let s2 = random_solution(&bg, 22).unwrap();
            let window = IndexWindow { t_lo: nt / 4, t_hi: 3 * nt / 4, x_lo: 0, x_hi: nx - 1 };
            let f1 = slab_test_tensor(&bg, &s1, window).unwrap();
            let f2 = slab_test_tensor(&bg, &s2, window).unwrap();
            let o1 = Observable { f: f1, class: DivergenceClass::DivergenceFree, measured_divergence: 0.0 };
            let o2 = Observable { f: f2, class: DivergenceClass::DivergenceFree, measured_divergence: 0.0 };
            let report = poisson_bracket(&bg, &o1, &o2).unwrap();
            report.discrepancy / report.value.norm().max(1e-30)
        };
        let order = observed_order(run(128, 32), run(256, 64));
        assert!(order >= 1.5, "order {order}");
    }

    #[test]
    fn bracket_with_self_small() {
        let bg = mink(128, 32);
        let s1 = random_solution(&bg, 30).unwrap();
        let window = IndexWindow { t_lo: 32, t_hi: 96, x_lo: 0, x_hi: 31 };
        let f = slab_test_tensor(&bg, &s1, window).unwrap();
        let o = Observable { f, class: DivergenceClass::DivergenceFree, measured_divergence: 0.0 };
        let report = poisson_bracket(&bg, &o, &o).unwrap();
        // antisymmetric pairing of a real tensor with itself
        assert!(report.value.norm() <= 1e-6 * 1.0_f64.max(report.omega_route.norm()));
    }

    #[test]
    fn spacelike_separated_pairing_vanishes() {
        let bg = mink(128, 64);
        // two bumps with narrow time support and opposite spatial corners
        let grid = bg.grid;
        let make_bump = |xc: f64| {
            synthesize_sym2(
                &bg,
                &Recipe::Bump { center: (1.0, xc), radii: (0.25, 0.7) },
                &polarization_from(&[(1, 1, 1.0), (2, 3, 0.5)]),
            )
            .unwrap()
        };
        let f1 = make_bump(std::f64::consts::PI * 0.5);
        let f2 = make_bump(std::f64::consts::PI * 1.5);
        let _ = grid;
        let v = pauli_jordan_pairing(&bg, &f1, &f2).unwrap();
        assert!(v.norm() <= 1e-10, "pairing {:.3e}", v.norm());
    }

    #[test]
    fn expansion_identity_converges() {
        let run = |nt: usize, nx: usize| -> f64 {
            let bg = desitter(nt, nx);
            let f1 = bump_k(&bg, 2.0, 1.0);
            let f2 = bump_k(&bg, 3.5, 0.7);
            pauli_jordan_expansion(&bg, &f1, &f2).unwrap().residual()
        };
        let order = observed_order(run(128, 32), run(256, 64));
        assert!(order >= 1.5, "order {order}");
    }

    #[test]
    fn null_tensor_kills_solution_probes() {
        let bg = mink(128, 32);
        let k = bump_k(&bg, 3.0, 1.0);
        let f = null_test_tensor(&bg, &k).unwrap();
        let obs = Observable::new(&bg, f, 1.0).unwrap();
        let gamma = random_solution(&bg, 40).unwrap();
        let val = observable_eval(&bg, &obs, &gamma).unwrap();
        // compare against the same observable evaluated on a non-solution
        let non_sol = bump_k(&bg, 3.0, 1.0);
        let ref_val = spacetime_pairing(&bg, &non_sol, &obs.f).unwrap();
        assert!(val.norm() <= 0.05 * ref_val.norm().max(1e-12), "{} vs {}", val.norm(), ref_val.norm());
    }
}
