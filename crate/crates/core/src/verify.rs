//! SAT-optimal verification measurements covering a set of dangerous errors.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::code::PauliKind;
use crate::f2::{inner_unchecked, BitMatrix, BitVector};
use crate::sat::{self, CnfInstance, Lit, Session, SolveStatus};
use crate::{Error, Result};

/// A measured stabilizer of the prepared state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerificationMeasurement {
    /// Type of the measured operator; it detects errors of the other type.
    pub kind: PauliKind,
    pub support: BitVector,
    pub flagged: bool,
}

/// Instance `(u, v)` proven unsatisfiable; `v = None` means no weight bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnsatWitness {
    pub u: usize,
    pub v: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerificationLayer {
    /// Kind of the errors being verified.
    pub error_kind: PauliKind,
    pub supports: Vec<BitVector>,
    pub u: usize,
    pub v: usize,
    pub witnesses: Vec<UnsatWitness>,
}

impl VerificationLayer {
    pub fn empty(error_kind: PauliKind) -> Self {
        VerificationLayer { error_kind, supports: Vec::new(), u: 0, v: 0, witnesses: Vec::new() }
    }

    pub fn measurements(&self) -> Vec<VerificationMeasurement> {
        self.supports
            .iter()
            .map(|s| VerificationMeasurement { kind: self.error_kind.other(), support: s.clone(), flagged: false })
            .collect()
    }

    /// True when optimality is certified by the stored witnesses.
    pub fn has_optimality_witnesses(&self) -> bool {
        self.u == 0
            || (self.witnesses.contains(&UnsatWitness { u: self.u - 1, v: None })
                && self.witnesses.contains(&UnsatWitness { u: self.u, v: Some(self.v - 1) }))
    }
}

/// `u` measurements, each a combination of basis rows of the generator group.
pub(crate) struct MeasurementVars {
    basis: BitMatrix,
    pub lambda: Vec<Vec<Lit>>,
    pub sup: Vec<Vec<Lit>>,
    cache: HashMap<(usize, BitVector), Lit>,
}

impl MeasurementVars {
    pub fn new(inst: &mut CnfInstance, basis: &BitMatrix, u: usize) -> Self {
        let n = basis.ncols();
        let r = basis.nrows();
        let lambda: Vec<Vec<Lit>> = (0..u).map(|_| inst.new_vars(r)).collect();
        let mut sup = Vec::with_capacity(u);
        for lam in &lambda {
            let row: Vec<Lit> = (0..n)
                .map(|q| {
                    let terms: Vec<Lit> = (0..r).filter(|&j| basis.row(j).get(q)).map(|j| lam[j]).collect();
                    inst.xor_lit(&terms)
                })
                .collect();
            sup.push(row);
        }
        for (i, lam) in lambda.iter().enumerate() {
            inst.tag(&format!("lambda{i}"), lam);
        }
        MeasurementVars { basis: basis.clone(), lambda, sup, cache: HashMap::new() }
    }

    /// Literal for the outcome of measurement `i` on error `e`.
    pub fn syndrome(&mut self, inst: &mut CnfInstance, i: usize, e: &BitVector) -> Lit {
        if let Some(&l) = self.cache.get(&(i, e.clone())) {
            return l;
        }
        let terms: Vec<Lit> =
            (0..self.basis.nrows()).filter(|&j| inner_unchecked(e, self.basis.row(j))).map(|j| self.lambda[i][j]).collect();
        let l = inst.xor_lit(&terms);
        self.cache.insert((i, e.clone()), l);
        l
    }

    pub fn support_lits(&self) -> Vec<Lit> {
        self.sup.iter().flatten().copied().collect()
    }

    pub fn bound(&self, inst: &mut CnfInstance, v: Option<usize>) {
        if let Some(v) = v {
            inst.add_at_most(&self.support_lits(), v);
        }
    }

    pub fn extract(&self, asg: &[bool]) -> Vec<BitVector> {
        self.sup
            .iter()
            .map(|row| BitVector::from_bools(&row.iter().map(|&l| sat::lit_value(asg, l)).collect::<Vec<_>>()))
            .collect()
    }
}

pub(crate) struct Optimum {
    pub u: usize,
    pub v: usize,
    pub supports: Vec<BitVector>,
    pub witnesses: Vec<UnsatWitness>,
}

/// Lexicographic minimisation of (u, v) over instances produced by `build`,
/// starting at `u_start`; ties are broken towards the lexicographically
/// smallest concatenated support.
pub(crate) fn minimize_uv<F>(u_start: usize, u_max: usize, deadline: Option<Instant>, mut build: F) -> Result<Option<Optimum>>
where
    F: FnMut(usize, Option<usize>) -> (CnfInstance, MeasurementVars),
{
    let mut witnesses = Vec::new();
    if u_start > 0 {
        let (inst, _) = build(u_start - 1, None);
        match sat::solve(&inst, &[], deadline).status {
            SolveStatus::Unsat => witnesses.push(UnsatWitness { u: u_start - 1, v: None }),
            SolveStatus::Timeout => return Err(Error::Timeout),
            SolveStatus::Sat => return Err(Error::Infeasible(format!("instance with u={} unexpectedly satisfiable", u_start - 1))),
        }
    }
    for u in u_start..=u_max {
        let (inst, vars) = build(u, None);
        let r = sat::solve(&inst, &[], deadline);
        match r.status {
            SolveStatus::Timeout => return Err(Error::Timeout),
            SolveStatus::Unsat => {
                witnesses.push(UnsatWitness { u, v: None });
                continue;
            }
            SolveStatus::Sat => {}
        }
        let mut best = r.assignment.unwrap();
        let mut best_inst = inst;
        let mut best_vars = vars;
        let mut v = best_vars.extract(&best).iter().map(BitVector::weight).sum::<usize>();
        loop {
            if v == 0 {
                break;
            }
            let (inst, vars) = build(u, Some(v - 1));
            let r = sat::solve(&inst, &[], deadline);
            match r.status {
                SolveStatus::Timeout => return Err(Error::Timeout),
                SolveStatus::Unsat => {
                    witnesses.push(UnsatWitness { u, v: Some(v - 1) });
                    break;
                }
                SolveStatus::Sat => {
                    best = r.assignment.unwrap();
                    v = vars.extract(&best).iter().map(BitVector::weight).sum();
                    best_inst = inst;
                    best_vars = vars;
                }
            }
        }
        let supports = lex_smallest(&best_inst, &best_vars, best, deadline)?;
        return Ok(Some(Optimum { u, v, supports, witnesses }));
    }
    Ok(None)
}

/// Greedily forces support bits to zero in order while staying satisfiable.
fn lex_smallest(inst: &CnfInstance, vars: &MeasurementVars, model: Vec<bool>, deadline: Option<Instant>) -> Result<Vec<BitVector>> {
    let mut s = Session::new(inst);
    let mut fixed: Vec<Lit> = Vec::new();
    let mut model = model;
    for l in vars.support_lits() {
        if !sat::lit_value(&model, l) {
            fixed.push(-l);
            continue;
        }
        fixed.push(-l);
        let r = s.solve(&fixed, deadline);
        match r.status {
            SolveStatus::Sat => model = r.assignment.unwrap(),
            SolveStatus::Unsat => {
                fixed.pop();
                fixed.push(l);
            }
            SolveStatus::Timeout => return Err(Error::Timeout),
        }
    }
    Ok(vars.extract(&model))
}

fn build_instance(basis: &BitMatrix, errors: &[BitVector], u: usize, v: Option<usize>) -> (CnfInstance, MeasurementVars) {
    let mut inst = CnfInstance::new();
    let mut vars = MeasurementVars::new(&mut inst, basis, u);
    for e in errors {
        let clause: Vec<Lit> = (0..u).map(|i| vars.syndrome(&mut inst, i, e)).collect();
        inst.add_clause(&clause);
    }
    vars.bound(&mut inst, v);
    (inst, vars)
}

/// Fewest measurements from `generators`, then least total weight, such that
/// every error anticommutes with at least one of them.
pub fn synth_verification(
    error_kind: PauliKind,
    errors: &[BitVector],
    generators: &BitMatrix,
    deadline: Option<Instant>,
) -> Result<VerificationLayer> {
    if errors.is_empty() {
        return Ok(VerificationLayer::empty(error_kind));
    }
    let basis = generators.row_basis();
    if let Some(e) = errors.iter().find(|e| basis.mul_vec(e).is_zero()) {
        return Err(Error::Infeasible(format!("error {e} commutes with every available measurement")));
    }
    let opt = minimize_uv(1, basis.nrows(), deadline, |u, v| build_instance(&basis, errors, u, v))?
        .ok_or_else(|| Error::Infeasible("verification not coverable".into()))?;
    Ok(VerificationLayer { error_kind, supports: opt.supports, u: opt.u, v: opt.v, witnesses: opt.witnesses })
}

/// Every layer at exactly `(u, v)`, deduplicated by the set of supports.
pub fn enumerate_minimal_verifications(
    error_kind: PauliKind,
    errors: &[BitVector],
    generators: &BitMatrix,
    optimum: &VerificationLayer,
    limit: usize,
    deadline: Option<Instant>,
) -> Result<(Vec<VerificationLayer>, bool)> {
    if optimum.u == 0 {
        return Ok((vec![optimum.clone()], false));
    }
    let basis = generators.row_basis();
    let (mut inst, vars) = build_instance(&basis, errors, optimum.u, Some(optimum.v));
    // zero measurements are never part of a minimal layer; forbid them so
    // permutations are the only duplicates
    for row in &vars.sup {
        inst.add_clause(row);
    }
    let proj = vars.support_lits();
    let en = sat::enumerate(&inst, &proj, limit.saturating_mul(optimum.u.max(1) * 4).max(limit), deadline);
    if en.timed_out && en.assignments.is_empty() {
        return Err(Error::Timeout);
    }
    let mut seen: BTreeSet<Vec<BitVector>> = BTreeSet::new();
    let mut out = Vec::new();
    let mut truncated = en.truncated || en.timed_out;
    for m in &en.models {
        let mut set = vars.extract(m);
        set.sort();
        if seen.insert(set.clone()) {
            if out.len() == limit {
                truncated = true;
                break;
            }
            let w = set.iter().map(BitVector::weight).sum();
            debug_assert_eq!(w, optimum.v);
            out.push(VerificationLayer { error_kind, supports: set, u: optimum.u, v: w, witnesses: optimum.witnesses.clone() });
        }
    }
    Ok((out, truncated))
}

/// Direct inner-product check that every error is detected.
pub fn check_coverage(layer: &VerificationLayer, errors: &[BitVector]) -> bool {
    errors.iter().all(|e| layer.supports.iter().any(|s| inner_unchecked(e, s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::code::ReductionMode;
    use crate::prep::{dangerous_errors, tuned_prep};

    fn layer_for(name: &str) -> (Vec<BitVector>, BitMatrix, VerificationLayer) {
        let code = catalog::get(name).unwrap();
        let gens = code.measurement_generators(PauliKind::Z, true);
        let c = tuned_prep(&code, &gens, ReductionMode::State).unwrap();
        let ds = dangerous_errors(&c, &code, PauliKind::X, ReductionMode::State).unwrap();
        let layer = synth_verification(PauliKind::X, &ds.errors(), &gens, None).unwrap();
        (ds.errors(), gens, layer)
    }

    #[test]
    fn empty_danger_gives_empty_layer() {
        let code = catalog::get("steane").unwrap();
        let l = synth_verification(PauliKind::X, &[], &code.hz, None).unwrap();
        assert!(l.supports.is_empty());
        assert!(check_coverage(&l, &[]));
    }

    #[test]
    fn steane_single_weight_three() {
        let (errs, _, l) = layer_for("steane");
        assert_eq!(l.u, 1);
        assert_eq!(l.v, 3);
        assert!(check_coverage(&l, &errs));
        assert!(l.has_optimality_witnesses());
    }

    #[test]
    fn surface_single_weight_three() {
        let (errs, _, l) = layer_for("surface9");
        assert_eq!((l.u, l.v), (1, 3));
        assert!(check_coverage(&l, &errs));
    }

    #[test]
    fn steane_brute_force_agrees() {
        let (errs, gens, l) = layer_for("steane");
        let span = gens.span(20).unwrap();
        let best = span
            .iter()
            .filter(|s| errs.iter().all(|e| inner_unchecked(e, s)))
            .map(BitVector::weight)
            .min()
            .unwrap();
        assert_eq!(best, l.v);
        let (all, truncated) = enumerate_minimal_verifications(PauliKind::X, &errs, &gens, &l, 100, None).unwrap();
        assert!(!truncated);
        let brute: BTreeSet<BitVector> =
            span.iter().filter(|s| s.weight() == best && errs.iter().all(|e| inner_unchecked(e, s))).cloned().collect();
        let got: BTreeSet<BitVector> = all.iter().map(|l| l.supports[0].clone()).collect();
        assert_eq!(got, brute);
        for m in &all {
            assert!(check_coverage(m, &errs));
        }
    }

    #[test]
    fn removing_a_measurement_breaks_coverage() {
        for name in ["shor", "tetrahedral15", "carbon12"] {
            let (errs, _, l) = layer_for(name);
            assert!(check_coverage(&l, &errs));
            if l.u >= 1 {
                for i in 0..l.u {
                    let mut cut = l.clone();
                    cut.supports.remove(i);
                    assert!(!check_coverage(&cut, &errs), "{name}: measurement {i} redundant");
                }
            }
        }
    }

    #[test]
    fn single_generator_cover_is_unique() {
        let g = BitMatrix::parse(4, &["1111", "11.."]).unwrap();
        let errs = vec![BitVector::parse("1...").unwrap(), BitVector::parse(".1..").unwrap(), BitVector::parse("..1.").unwrap()];
        let l = synth_verification(PauliKind::X, &errs, &g, None).unwrap();
        let (all, _) = enumerate_minimal_verifications(PauliKind::X, &errs, &g, &l, 10, None).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].supports[0].to_dotted(), "1111");
    }
}
