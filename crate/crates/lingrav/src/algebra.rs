//! The unital *-algebra of smeared-field generators.
//!
//! Elements are finite complex combinations of words of generator labels,
//! kept in a normal form in which labels appear in nondecreasing registry
//! order; out-of-order neighbours are rewritten through the commutation
//! relation, producing lower-degree terms weighted by the
//! advanced-minus-retarded pairing. The ideal of the remaining relations is
//! handled operationally: linearity and the field equation are certified by
//! pairing probes rather than by canonicalizing labels.

use std::collections::BTreeMap;
use std::sync::Mutex;

use num_complex::Complex64;

use crate::background::Background;
use crate::error::{Error, Result};
use crate::fields::{spacetime_pairing, trace_reverse, SymField2, C64};
use crate::greens::{greens_apply, GreensKind};
use crate::grid::IndexWindow;
use crate::hyperbolic::{sym_of_comps, WaveOperator};
use crate::symplectic::slab_test_tensor;

const ZERO: C64 = Complex64::new(0.0, 0.0);
const COEFF_PRUNE: f64 = 1e-14;

pub type LabelId = usize;

struct LabelEntry {
    tensor: SymField2,
    /// cached propagated trace reverse E(bar f)
    propagated: Option<SymField2>,
    conjugate: Option<LabelId>,
    divergence: f64,
}

/// Registry of generator labels, their cached propagated representatives
/// and pairwise pairing values. The registry order is the normal-form
/// order.
pub struct LabelRegistry<'a> {
    bg: &'a Background,
    entries: Vec<LabelEntry>,
    pairings: Mutex<BTreeMap<(LabelId, LabelId), C64>>,
    divergence_floor: f64,
}

impl<'a> LabelRegistry<'a> {
    pub fn new(bg: &'a Background, divergence_floor: f64) -> Self {
        LabelRegistry {
            bg,
            entries: Vec::new(),
            pairings: Mutex::new(BTreeMap::new()),
            divergence_floor,
        }
    }

    pub fn background(&self) -> &'a Background {
        self.bg
    }

    pub fn divergence_floor(&self) -> f64 {
        self.divergence_floor
    }

    /// Register a test tensor as a generator label. The symmetric part of
    /// the smearing must be divergence-free at the declared floor.
    pub fn register(&mut self, tensor: SymField2) -> Result<LabelId> {
        let div = crate::fields::divergence_sym2(self.bg, &tensor).rms_interior();
        if div > self.divergence_floor {
            return Err(Error::Contract(format!(
                "smearing tensor is not divergence-free: measured {div:.3e}, floor {:.3e}",
                self.divergence_floor
            )));
        }
        self.entries.push(LabelEntry { tensor, propagated: None, conjugate: None, divergence: div });
        Ok(self.entries.len() - 1)
    }

    pub fn tensor(&self, id: LabelId) -> &SymField2 {
        &self.entries[id].tensor
    }

    pub fn measured_divergence(&self, id: LabelId) -> f64 {
        self.entries[id].divergence
    }

    /// Label of the complex conjugate tensor; real labels map to
    /// themselves.
    pub fn conjugate_label(&mut self, id: LabelId) -> Result<LabelId> {
        if let Some(c) = self.entries[id].conjugate {
            return Ok(c);
        }
        if self.entries[id].tensor.is_real(0.0) {
            self.entries[id].conjugate = Some(id);
            return Ok(id);
        }
        let conj = self.entries[id].tensor.conj();
        let new_id = self.register(conj)?;
        self.entries[id].conjugate = Some(new_id);
        self.entries[new_id].conjugate = Some(id);
        Ok(new_id)
    }

    fn propagated(&mut self, id: LabelId) -> Result<SymField2> {
        if self.entries[id].propagated.is_none() {
            let (bar, _) = trace_reverse(self.bg, &self.entries[id].tensor)?;
            let e = greens_apply(self.bg, WaveOperator::Tensor, GreensKind::PauliJordan, &bar.comps)?;
            self.entries[id].propagated = Some(sym_of_comps(self.bg, e));
        }
        Ok(self.entries[id].propagated.clone().unwrap())
    }

    /// Pairing E(f_a, bar f_b) entering the commutation relation, memoized.
    pub fn pairing(&mut self, a: LabelId, b: LabelId) -> Result<C64> {
        if let Some(v) = self.pairings.lock().unwrap().get(&(a, b)) {
            return Ok(*v);
        }
        let prop_b = self.propagated(b)?;
        let v = spacetime_pairing(self.bg, &prop_b, &self.entries[a].tensor)?;
        self.pairings.lock().unwrap().insert((a, b), v);
        Ok(v)
    }

    /// Commutator coefficient [g(a), g(b)] = -2i E(f_a, bar f_b).
    pub fn commutator(&mut self, a: LabelId, b: LabelId) -> Result<C64> {
        Ok(Complex64::new(0.0, -2.0) * self.pairing(a, b)?)
    }
}

type Word = Vec<LabelId>;

/// Finite complex combination of words of generators; the empty word is the
/// unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    pub terms: BTreeMap<Word, C64>,
}

impl AlgebraElement {
    pub fn zero() -> Self {
        AlgebraElement { terms: BTreeMap::new() }
    }

    pub fn unit() -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Vec::new(), Complex64::new(1.0, 0.0));
        AlgebraElement { terms }
    }

    pub fn generator(id: LabelId) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![id], Complex64::new(1.0, 0.0));
        AlgebraElement { terms }
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= s;
        }
        out.prune();
        out
    }

    pub fn add(&self, other: &AlgebraElement) -> Self {
        let mut out = self.clone();
        for (w, c) in &other.terms {
            *out.terms.entry(w.clone()).or_insert(ZERO) += c;
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &AlgebraElement) -> Self {
        self.add(&other.scaled(Complex64::new(-1.0, 0.0)))
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.norm() > COEFF_PRUNE);
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    pub fn coeff(&self, word: &[LabelId]) -> C64 {
        self.terms.get(word).copied().unwrap_or(ZERO)
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest coefficient difference against another element.
    pub fn diff_max(&self, other: &AlgebraElement) -> f64 {
        let mut worst: f64 = 0.0;
        for (w, c) in &self.terms {
            worst = worst.max((c - other.coeff(w)).norm());
        }
        for (w, c) in &other.terms {
            worst = worst.max((c - self.coeff(w)).norm());
        }
        worst
    }
}

/// Degree-1 generator element for a test tensor; an antisymmetric smearing
/// enters through its symmetric part, which is zero, giving the zero
/// element.
pub fn generator(reg: &mut LabelRegistry, f: SymField2) -> Result<AlgebraElement> {
    if f.max_abs() == 0.0 {
        return Ok(AlgebraElement::zero());
    }
    let id = reg.register(f)?;
    Ok(AlgebraElement::generator(id))
}

/// Normal-form product: concatenate words, then rewrite out-of-order
/// neighbours through the commutation relation until every word is sorted.
pub fn product(
    reg: &mut LabelRegistry,
    a: &AlgebraElement,
    b: &AlgebraElement,
) -> Result<AlgebraElement> {
    let mut pending: Vec<(Word, C64)> = Vec::new();
    for (wa, ca) in &a.terms {
        for (wb, cb) in &b.terms {
            let mut w = wa.clone();
            w.extend_from_slice(wb);
            pending.push((w, ca * cb));
        }
    }
    let mut out = AlgebraElement::zero();
    while let Some((word, coeff)) = pending.pop() {
        if coeff.norm() <= COEFF_PRUNE {
            continue;
        }
        // find the first out-of-order adjacent pair
        let mut swap_at = None;
        for k in 0..word.len().saturating_sub(1) {
            if word[k] > word[k + 1] {
                swap_at = Some(k);
                break;
            }
        }
        match swap_at {
            None => {
                *out.terms.entry(word).or_insert(ZERO) += coeff;
            }
            Some(k) => {
                // g_i g_j = g_j g_i + [g_i, g_j]
                let mut swapped = word.clone();
                swapped.swap(k, k + 1);
                let comm = reg.commutator(word[k], word[k + 1])?;
                let mut reduced = word.clone();
                reduced.remove(k + 1);
                reduced.remove(k);
                pending.push((swapped, coeff));
                pending.push((reduced, coeff * comm));
            }
        }
    }
    out.prune();
    Ok(out)
}

/// Adjoint: reverse words, conjugate coefficients, conjugate labels, then
/// renormalize to the normal form.
pub fn adjoint(reg: &mut LabelRegistry, a: &AlgebraElement) -> Result<AlgebraElement> {
    let mut staged: Vec<(Word, C64)> = Vec::new();
    for (w, c) in &a.terms {
        let mut rev = Vec::with_capacity(w.len());
        for &id in w.iter().rev() {
            rev.push(reg.conjugate_label(id)?);
        }
        staged.push((rev, c.conj()));
    }
    // renormalize by multiplying the staged element with the unit
    let mut el = AlgebraElement::zero();
    for (w, c) in staged {
        *el.terms.entry(w).or_insert(ZERO) += c;
    }
    product(reg, &el, &AlgebraElement::unit())
}

#[derive(Debug, Clone)]
pub struct NullReport {
    pub is_null: bool,
    pub worst_degree1_pairing: f64,
    pub worst_residual_coeff: f64,
    pub tolerance: f64,
}

/// Certify that an element lies in the null ideal: the degree-1 part is
/// combined into a single field and probed against the symplectic
/// representatives of a test basis; higher words survive only when their
/// coefficients vanish or they contain a certified-null label.
pub fn is_null(
    reg: &mut LabelRegistry,
    a: &AlgebraElement,
    probes: &[LabelId],
    tolerance: f64,
) -> Result<NullReport> {
    if probes.is_empty() {
        return Err(Error::Contract("empty probe set".into()));
    }
    // combined degree-1 field
    let grid = reg.background().grid;
    let mut combined = SymField2::zeros(grid);
    let mut unit_coeff = ZERO;
    let mut higher: Vec<(&Word, C64)> = Vec::new();
    for (w, c) in &a.terms {
        match w.len() {
            0 => unit_coeff = *c,
            1 => combined.axpy(*c, reg.tensor(w[0]))?,
            _ => higher.push((w, *c)),
        }
    }
    let mut worst_pairing = 0.0f64;
    if combined.max_abs() > 0.0 {
        let (bar, _) = trace_reverse(reg.background(), &combined)?;
        let e = greens_apply(
            reg.background(),
            WaveOperator::Tensor,
            GreensKind::PauliJordan,
            &bar.comps,
        )?;
        let prop = sym_of_comps(reg.background(), e);
        for &p in probes {
            let v = spacetime_pairing(reg.background(), &prop, reg.tensor(p))?;
            worst_pairing = worst_pairing.max(v.norm());
        }
    }
    // certified-null labels kill the words containing them
    let mut null_labels: Vec<bool> = Vec::with_capacity(reg.entries.len());
    for id in 0..reg.entries.len() {
        let single = AlgebraElement::generator(id);
        let mut worst = 0.0f64;
        if higher.iter().any(|(w, _)| w.contains(&id)) {
            let (bar, _) = trace_reverse(reg.background(), reg.tensor(id))?;
            let e = greens_apply(
                reg.background(),
                WaveOperator::Tensor,
                GreensKind::PauliJordan,
                &bar.comps,
            )?;
            let prop = sym_of_comps(reg.background(), e);
            for &p in probes {
                let v = spacetime_pairing(reg.background(), &prop, reg.tensor(p))?;
                worst = worst.max(v.norm());
            }
            let _ = single;
        }
        null_labels.push(worst <= tolerance && higher.iter().any(|(w, _)| w.contains(&id)));
    }
    let mut worst_residual = unit_coeff.norm();
    for (w, c) in &higher {
        if w.iter().any(|id| null_labels[*id]) {
            continue;
        }
        worst_residual = worst_residual.max(c.norm());
    }
    Ok(NullReport {
        is_null: worst_pairing <= tolerance && worst_residual <= tolerance,
        worst_degree1_pairing: worst_pairing,
        worst_residual_coeff: worst_residual,
        tolerance,
    })
}

/// Replace a smearing tensor by one supported inside the given time slab
/// with the same generator up to a null element: propagate, cut off above
/// the slab, and take twice the linearized Einstein tensor.
pub fn time_slice_reduce(
    bg: &Background,
    f: &SymField2,
    window: IndexWindow,
) -> Result<SymField2> {
    let (bar, _) = trace_reverse(bg, f)?;
    let e = greens_apply(bg, WaveOperator::Tensor, GreensKind::PauliJordan, &bar.comps)?;
    let propagated = sym_of_comps(bg, e);
    slab_test_tensor(bg, &propagated, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundSpec;
    use crate::cauchy::random_solution;
    use crate::fields::{polarization_from, synthesize_sym2, Recipe};
    use crate::grid::Grid;
    use crate::symplectic::null_test_tensor;

    fn mink(nt: usize, nx: usize) -> Background {
        let grid = Grid::new(nt, nx, 0.0, 2.0, std::f64::consts::TAU).unwrap();
        Background::build(BackgroundSpec::minkowski(), grid).unwrap()
    }

    fn bump_k(bg: &Background, xc: f64, seedish: f64) -> SymField2 {
        let grid = bg.grid;
        let tc = 0.5 * (grid.t0 + grid.t1);
        synthesize_sym2(
            bg,
            &Recipe::Bump { center: (tc, xc), radii: (0.22 * (grid.t1 - grid.t0), 1.1) },
            &polarization_from(&[
                (0, 0, 0.4 * seedish),
                (1, 1, seedish),
                (2, 2, -0.3),
                (1, 3, 0.5),
            ]),
        )
        .unwrap()
    }

    fn solution_tensor(bg: &Background, seed: u64) -> SymField2 {
        let nt = bg.grid.nt;
        let sol = random_solution(bg, seed).unwrap();
        let window = IndexWindow { t_lo: nt / 4, t_hi: 3 * nt / 4, x_lo: 0, x_hi: bg.grid.nx - 1 };
        slab_test_tensor(bg, &sol, window).unwrap()
    }

    fn floor_for(bg: &Background) -> f64 {
        // truncation floor from the measured divergence of a manufactured
        // divergence-free tensor
        let f = solution_tensor(bg, 99);
        let div = crate::fields::divergence_sym2(bg, &f).rms_interior();
        10.0 * div.max(1e-14)
    }

    #[test]
    fn unit_is_neutral() {
        let bg = mink(64, 16);
        let mut reg = LabelRegistry::new(&bg, floor_for(&bg));
        let f = solution_tensor(&bg, 1);
        let a = generator(&mut reg, f).unwrap();
        let one = AlgebraElement::unit();
        let prod = product(&mut reg, &a, &one).unwrap();
        assert_eq!(prod, a);
    }

    #[test]
    fn commutator_matches_pairing() {
        let bg = mink(128, 32);
        let mut reg = LabelRegistry::new(&bg, floor_for(&bg));
        let f1 = solution_tensor(&bg, 2);
        let f2 = solution_tensor(&bg, 3);
        let pj = crate::symplectic::pauli_jordan_pairing(&bg, &f1, &f2).unwrap();
        let a = generator(&mut reg, f1).unwrap();
        let b = generator(&mut reg, f2).unwrap();
        let ab = product(&mut reg, &a, &b).unwrap();
        let ba = product(&mut reg, &b, &a).unwrap();
        let comm = ab.sub(&ba);
        assert_eq!(comm.degree(), 0);
        let expect = Complex64::new(0.0, -2.0) * pj;
        assert!(
            (comm.coeff(&[]) - expect).norm() <= 1e-13 * expect.norm().max(1.0),
            "commutator {:?} vs -2i pairing {:?}",
            comm.coeff(&[]),
            expect
        );
    }

    #[test]
    fn normal_form_is_confluent() {
        let bg = mink(64, 16);
        let mut reg = LabelRegistry::new(&bg, floor_for(&bg));
        let a = generator(&mut reg, solution_tensor(&bg, 4)).unwrap();
        let b = generator(&mut reg, solution_tensor(&bg, 5)).unwrap();
        let c = generator(&mut reg, solution_tensor(&bg, 6)).unwrap();
        let ab = product(&mut reg, &a, &b).unwrap();
        let ab_c = product(&mut reg, &ab, &c).unwrap();
        let bc = product(&mut reg, &b, &c).unwrap();
        let a_bc = product(&mut reg, &a, &bc).unwrap();
        assert!(ab_c.diff_max(&a_bc) <= 1e-12, "associativity defect {}", ab_c.diff_max(&a_bc));
        // reversed multiplication order reduces through different rewrites
        let cb = product(&mut reg, &c, &b).unwrap();
        let cba = product(&mut reg, &cb, &a).unwrap();
        let ba = product(&mut reg, &b, &a).unwrap();
        let c_ba = product(&mut reg, &c, &ba).unwrap();
        assert!(cba.diff_max(&c_ba) <= 1e-12);
    }

    #[test]
    fn adjoint_is_involutive_and_fixes_real_generators() {
        let bg = mink(64, 16);
        let mut reg = LabelRegistry::new(&bg, floor_for(&bg));
        let f = solution_tensor(&bg, 7);
        assert!(f.is_real(0.0));
        let a = generator(&mut reg, f).unwrap();
        let adj = adjoint(&mut reg, &a).unwrap();
        assert_eq!(adj, a);
        assert_eq!(adjoint(&mut reg, &AlgebraElement::unit()).unwrap(), AlgebraElement::unit());

        let b = generator(&mut reg, solution_tensor(&bg, 8)).unwrap();
        let ab = product(&mut reg, &a, &b).unwrap();
        let adj_ab = adjoint(&mut reg, &ab).unwrap();
        let ba = product(&mut reg, &b, &a).unwrap();
        assert!(adj_ab.diff_max(&ba) <= 1e-12);
        let double = adjoint(&mut reg, &adj_ab).unwrap();
        assert!(double.diff_max(&ab) <= 1e-12);
    }

    #[test]
    fn field_equation_labels_are_null() {
        let bg = mink(128, 32);
        let mut reg = LabelRegistry::new(&bg, 1.0);
        let probes: Vec<LabelId> = (0..4)
            .map(|k| reg.register(solution_tensor(&bg, 10 + k)).unwrap())
            .collect();
        // tolerance from the certified-null construction itself
        let null_f = null_test_tensor(&bg, &bump_k(&bg, 3.0, 1.0)).unwrap();
        let nul = generator(&mut reg, null_f).unwrap();
        let raw = is_null(&mut reg, &nul, &probes, f64::INFINITY).unwrap();
        let tol = 10.0 * raw.worst_degree1_pairing.max(1e-14);
        let certified = is_null(&mut reg, &nul, &probes, tol).unwrap();
        assert!(certified.is_null);

        // a genuine solution-backed tensor is not null at the same tolerance
        let live = generator(&mut reg, solution_tensor(&bg, 20)).unwrap();
        let live_report = is_null(&mut reg, &live, &probes, tol).unwrap();
        assert!(!live_report.is_null, "live generator wrongly certified null");
        assert!(live_report.worst_degree1_pairing > 10.0 * raw.worst_degree1_pairing);
    }

    #[test]
    fn linearity_certified_through_probes() {
        let bg = mink(128, 32);
        let mut reg = LabelRegistry::new(&bg, 1.0);
        let probes: Vec<LabelId> = (0..3)
            .map(|k| reg.register(solution_tensor(&bg, 30 + k)).unwrap())
            .collect();
        let f = solution_tensor(&bg, 35);
        let alpha = Complex64::new(1.3, -0.4);
        let scaled_label = generator(&mut reg, f.scaled(alpha)).unwrap();
        let base = generator(&mut reg, f).unwrap();
        let diff = scaled_label.sub(&base.scaled(alpha));
        let report = is_null(&mut reg, &diff, &probes, 1e-10).unwrap();
        assert!(report.is_null, "linearity defect {:.3e}", report.worst_degree1_pairing);
    }

    #[test]
    fn zero_element_is_null() {
        let bg = mink(64, 16);
        let mut reg = LabelRegistry::new(&bg, 1.0);
        let p = reg.register(solution_tensor(&bg, 40)).unwrap();
        let report = is_null(&mut reg, &AlgebraElement::zero(), &[p], 1e-12).unwrap();
        assert!(report.is_null);
    }

    #[test]
    fn time_slice_reduction_supports_and_nullity() {
        let bg = mink(128, 32);
        let nt = bg.grid.nt;
        let mut reg = LabelRegistry::new(&bg, 1.0);
        let probes: Vec<LabelId> = (0..4)
            .map(|k| reg.register(solution_tensor(&bg, 50 + k)).unwrap())
            .collect();
        // a smearing supported in the upper half of the grid
        let f = {
            let grid = bg.grid;
            synthesize_sym2(
                &bg,
                &Recipe::Bump {
                    center: (grid.t0 + 0.72 * (grid.t1 - grid.t0), 3.0),
                    radii: (0.12 * (grid.t1 - grid.t0), 1.2),
                },
                &polarization_from(&[(1, 1, 1.0), (2, 2, -1.0)]),
            )
            .unwrap()
        };
        // make it divergence-free by the slab construction around its own
        // propagated field, then reduce into a lower window
        let f_upper = {
            let window =
                IndexWindow { t_lo: nt / 2 + 8, t_hi: nt - 8, x_lo: 0, x_hi: bg.grid.nx - 1 };
            let (bar, _) = trace_reverse(&bg, &f).unwrap();
            let e =
                greens_apply(&bg, WaveOperator::Tensor, GreensKind::PauliJordan, &bar.comps)
                    .unwrap();
            slab_test_tensor(&bg, &sym_of_comps(&bg, e), window).unwrap()
        };
        let window = IndexWindow { t_lo: 12, t_hi: nt / 2 - 8, x_lo: 0, x_hi: bg.grid.nx - 1 };
        let reduced = time_slice_reduce(&bg, &f_upper, window).unwrap();
        // exact support inside the window
        for arr in &reduced.comps {
            for j in (0..window.t_lo).chain(window.t_hi + 1..nt) {
                assert!(arr.row(j).iter().all(|z| *z == ZERO), "support leak at level {j}");
            }
        }
        // null difference of the generators
        let tol = {
            let nul = generator(&mut reg, null_test_tensor(&bg, &bump_k(&bg, 2.0, 1.0)).unwrap())
                .unwrap();
            let raw = is_null(&mut reg, &nul, &probes, f64::INFINITY).unwrap();
            10.0 * raw.worst_degree1_pairing.max(1e-13)
        };
        let a = generator(&mut reg, f_upper).unwrap();
        let b = generator(&mut reg, reduced).unwrap();
        let report = is_null(&mut reg, &a.sub(&b), &probes, tol).unwrap();
        assert!(
            report.is_null,
            "reduced generator differs: pairing {:.3e} vs tol {:.3e}",
            report.worst_degree1_pairing,
            tol
        );
    }
}
