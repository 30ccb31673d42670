//! Optimal conditional corrections: extra measurements that split a triggered
//! error class into groups sharing one recovery.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use crate::code::{PauliKind, ReductionGroup};
use crate::f2::{inner_unchecked, BitMatrix, BitVector};
use crate::sat::{CnfInstance, Lit};
use crate::verify::{minimize_uv, MeasurementVars, UnsatWitness};
use crate::{Error, Result};

/// An error together with the classical bits already known when it occurs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Member {
    pub context: BitVector,
    pub error: BitVector,
}

/// Errors that trigger one branch. Members sharing a context must be told
/// apart by measurement only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorClass {
    pub kind: PauliKind,
    pub members: Vec<Member>,
}

impl ErrorClass {
    /// Canonicalises members modulo `g` and removes duplicates.
    pub fn new(kind: PauliKind, members: impl IntoIterator<Item = Member>, g: &ReductionGroup) -> Self {
        let mut v: Vec<Member> =
            members.into_iter().map(|m| Member { context: m.context, error: g.canonical(&m.error) }).collect();
        v.sort();
        v.dedup();
        ErrorClass { kind, members: v }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Groups errors by their syndrome on `supports`; zero syndromes are dropped.
/// Each member's context is its syndrome.
pub fn partition_by_syndrome(
    kind: PauliKind,
    errors: &[BitVector],
    supports: &[BitVector],
    g: &ReductionGroup,
) -> BTreeMap<BitVector, ErrorClass> {
    let mut by_b: BTreeMap<BitVector, Vec<Member>> = BTreeMap::new();
    for e in errors {
        let b = BitVector::from_bools(&supports.iter().map(|s| inner_unchecked(e, s)).collect::<Vec<_>>());
        if !b.is_zero() {
            by_b.entry(b.clone()).or_default().push(Member { context: b, error: e.clone() });
        }
    }
    by_b.into_iter().map(|(b, m)| (b, ErrorClass::new(kind, m, g))).collect()
}

/// Membership test for "reduced weight at most one" via coset labels.
pub struct Correctable<'a> {
    g: &'a ReductionGroup,
    forms: HashSet<BitVector>,
}

impl<'a> Correctable<'a> {
    pub fn new(g: &'a ReductionGroup) -> Self {
        let n = g.n();
        let mut forms = HashSet::new();
        forms.insert(g.normal_form(&BitVector::zeros(n)));
        for q in 0..n {
            forms.insert(g.normal_form(&BitVector::unit(n, q)));
        }
        Correctable { g, forms }
    }

    pub fn ok(&self, residual: &BitVector) -> bool {
        self.forms.contains(&self.g.normal_form(residual))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateCorrection {
    pub c: BitVector,
    /// Indices of the members `c` corrects.
    pub corrects: Vec<usize>,
}

/// All `{e + ρ : wt(ρ) ≤ 1}` forms modulo `g`, merged on equal correction sets
/// (lightest kept). With `prune`, candidates whose set is strictly contained
/// in another's are dropped.
pub fn candidate_corrections(cls: &ErrorClass, g: &ReductionGroup, prune: bool) -> Vec<CandidateCorrection> {
    let n = g.n();
    let ok = Correctable::new(g);
    let mut seen: HashSet<BitVector> = HashSet::new();
    let mut by_set: BTreeMap<Vec<usize>, BitVector> = BTreeMap::new();
    for m in &cls.members {
        let mut try_c = |c: BitVector| {
            if !seen.insert(g.normal_form(&c)) {
                return;
            }
            let c = g.canonical(&c);
            let f: Vec<usize> = (0..cls.members.len()).filter(|&i| ok.ok(&cls.members[i].error.xor(&c))).collect();
            let slot = by_set.entry(f).or_insert_with(|| c.clone());
            if (c.weight(), &c) < (slot.weight(), &*slot) {
                *slot = c;
            }
        };
        try_c(m.error.clone());
        for q in 0..n {
            let mut c = m.error.clone();
            c.flip(q);
            try_c(c);
        }
    }
    let mut out: Vec<CandidateCorrection> = by_set.into_iter().map(|(f, c)| CandidateCorrection { c, corrects: f }).collect();
    if prune {
        let sets: Vec<HashSet<usize>> = out.iter().map(|c| c.corrects.iter().copied().collect()).collect();
        let keep: Vec<bool> = (0..out.len())
            .map(|i| !(0..out.len()).any(|j| j != i && sets[j].len() > sets[i].len() && sets[i].is_subset(&sets[j])))
            .collect();
        out = out.into_iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| c).collect();
    }
    out.sort_by(|a, b| a.c.weight().cmp(&b.c.weight()).then_with(|| a.c.cmp(&b.c)));
    out
}

/// Extra measurements plus a recovery for each extended syndrome. Keys are
/// the member context followed by the measurement outcomes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrectionBranch {
    pub error_kind: PauliKind,
    pub measurements: Vec<BitVector>,
    pub recovery: BTreeMap<BitVector, BitVector>,
    pub u: usize,
    pub v: usize,
    pub witnesses: Vec<UnsatWitness>,
}

impl CorrectionBranch {
    pub fn key(&self, context: &BitVector, error: &BitVector) -> BitVector {
        extended_key(&self.measurements, context, error)
    }

    pub fn has_optimality_witnesses(&self) -> bool {
        self.u == 0
            || (self.witnesses.contains(&UnsatWitness { u: self.u - 1, v: None })
                && self.witnesses.contains(&UnsatWitness { u: self.u, v: Some(self.v - 1) }))
    }
}

pub fn extended_key(measurements: &[BitVector], context: &BitVector, error: &BitVector) -> BitVector {
    let out: Vec<bool> = measurements.iter().map(|s| inner_unchecked(error, s)).collect();
    context.concat(&BitVector::from_bools(&out))
}

/// Lightest candidate correcting every listed member.
fn common_recovery(cands: &[CandidateCorrection], group: &[usize]) -> Option<BitVector> {
    cands
        .iter()
        .filter(|c| group.iter().all(|i| c.corrects.binary_search(i).is_ok()))
        .map(|c| c.c.clone())
        .min_by(|a, b| a.weight().cmp(&b.weight()).then_with(|| a.cmp(b)))
}

fn recovery_map(cls: &ErrorClass, measurements: &[BitVector], cands: &[CandidateCorrection]) -> Option<BTreeMap<BitVector, BitVector>> {
    let mut groups: BTreeMap<BitVector, Vec<usize>> = BTreeMap::new();
    for (i, m) in cls.members.iter().enumerate() {
        groups.entry(extended_key(measurements, &m.context, &m.error)).or_default().push(i);
    }
    groups.into_iter().map(|(k, grp)| common_recovery(cands, &grp).map(|c| (k, c))).collect()
}

fn build_instance(
    cls: &ErrorClass,
    basis: &BitMatrix,
    cands: &[CandidateCorrection],
    u: usize,
    v: Option<usize>,
) -> (CnfInstance, MeasurementVars) {
    let mut inst = CnfInstance::new();
    let mut vars = MeasurementVars::new(&mut inst, basis, u);
    let m = cls.members.len();
    let mut sel: Vec<HashMap<usize, Lit>> = vec![HashMap::new(); m];
    for (t, c) in cands.iter().enumerate() {
        for &e in &c.corrects {
            sel[e].insert(t, inst.new_var());
        }
    }
    for row in &sel {
        let mut clause: Vec<Lit> = row.values().copied().collect();
        clause.sort_unstable();
        inst.add_clause(&clause);
    }
    for a in 0..m {
        for b in a + 1..m {
            let (ma, mb) = (&cls.members[a], &cls.members[b]);
            if ma.context != mb.context {
                continue;
            }
            let diff = ma.error.xor(&mb.error);
            let mut clause: Vec<Lit> = (0..u).map(|i| vars.syndrome(&mut inst, i, &diff)).collect();
            let eq = inst.new_var();
            clause.push(eq);
            inst.add_clause(&clause);
            let mut ts: Vec<usize> = sel[a].keys().chain(sel[b].keys()).copied().collect();
            ts.sort_unstable();
            ts.dedup();
            for t in ts {
                match (sel[a].get(&t), sel[b].get(&t)) {
                    (Some(&ya), Some(&yb)) => {
                        inst.add_clause(&[-eq, -ya, yb]);
                        inst.add_clause(&[-eq, ya, -yb]);
                    }
                    (Some(&y), None) | (None, Some(&y)) => inst.add_clause(&[-eq, -y]),
                    (None, None) => unreachable!(),
                }
            }
        }
    }
    vars.bound(&mut inst, v);
    (inst, vars)
}

/// Optimal (u, then v) correction for one class. `generators` are the
/// measurable operators of the detecting type; `g` decides correctability.
pub fn synth_correction(
    cls: &ErrorClass,
    generators: &BitMatrix,
    g: &ReductionGroup,
    deadline: Option<Instant>,
) -> Result<CorrectionBranch> {
    let empty = |recovery| CorrectionBranch {
        error_kind: cls.kind,
        measurements: Vec::new(),
        recovery,
        u: 0,
        v: 0,
        witnesses: Vec::new(),
    };
    if cls.is_empty() {
        return Ok(empty(BTreeMap::new()));
    }
    let all = candidate_corrections(cls, g, false);
    if let Some(rec) = recovery_map(cls, &[], &all) {
        let b = empty(rec);
        debug_assert!(verify_branch(&b, cls, g));
        return Ok(b);
    }
    let pruned = candidate_corrections(cls, g, true);
    let basis = generators.row_basis();
    let opt = minimize_uv(1, basis.nrows(), deadline, |u, v| build_instance(cls, &basis, &pruned, u, v))?
        .ok_or_else(|| Error::Infeasible("no deterministic correction with this verification layer".into()))?;
    let recovery = recovery_map(cls, &opt.supports, &all)
        .ok_or_else(|| Error::Infeasible("solver model without a common recovery".into()))?;
    let branch = CorrectionBranch {
        error_kind: cls.kind,
        measurements: opt.supports,
        recovery,
        u: opt.u,
        v: opt.v,
        witnesses: opt.witnesses,
    };
    if !verify_branch(&branch, cls, g) {
        return Err(Error::Infeasible("synthesised branch failed replay".into()));
    }
    Ok(branch)
}

/// Solver-independent replay: every member, including the zero error, ends
/// with reduced weight at most one after its recovery.
pub fn verify_branch(branch: &CorrectionBranch, cls: &ErrorClass, g: &ReductionGroup) -> bool {
    cls.members.iter().all(|m| match branch.recovery.get(&branch.key(&m.context, &m.error)) {
        Some(c) => g.reduced_weight(&m.error.xor(c)) <= 1,
        None => false,
    })
}

/// Exhaustive optimum over all measurement sets of up to `max_u` group
/// elements and all recoveries in the full space. Independent of the solver
/// and of the candidate construction; feasible only for small codes.
pub fn brute_force_optimum(cls: &ErrorClass, generators: &BitMatrix, g: &ReductionGroup, max_u: usize) -> Option<(usize, usize)> {
    let n = g.n();
    assert!(n <= 16, "brute force limited to small codes");
    let span: Vec<BitVector> = generators.span(20).ok()?.into_iter().filter(|s| !s.is_zero()).collect();
    let all_c: Vec<BitVector> = (0..1u64 << n).map(|x| BitVector::from_u64(n, x)).collect();
    let mut memo: HashMap<Vec<usize>, bool> = HashMap::new();
    let mut group_ok = |grp: Vec<usize>| -> bool {
        *memo.entry(grp.clone()).or_insert_with(|| {
            all_c.iter().any(|c| grp.iter().all(|&i| g.reduced_weight(&cls.members[i].error.xor(c)) <= 1))
        })
    };
    let mut feasible = |ms: &[&BitVector]| -> bool {
        let ms: Vec<BitVector> = ms.iter().map(|&s| s.clone()).collect();
        let mut groups: BTreeMap<BitVector, Vec<usize>> = BTreeMap::new();
        for (i, m) in cls.members.iter().enumerate() {
            groups.entry(extended_key(&ms, &m.context, &m.error)).or_default().push(i);
        }
        groups.into_values().all(&mut group_ok)
    };
    for u in 0..=max_u {
        let mut best: Option<usize> = None;
        let mut idx: Vec<usize> = (0..u).collect();
        if u > span.len() {
            break;
        }
        loop {
            let ms: Vec<&BitVector> = idx.iter().map(|&i| &span[i]).collect();
            let w: usize = ms.iter().map(|s| s.weight()).sum();
            if best.is_none_or(|b| w < b) && feasible(&ms) {
                best = Some(w);
            }
            // next combination
            let mut k = u;
            while k > 0 && idx[k - 1] == span.len() - u + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..u {
                idx[j] = idx[j - 1] + 1;
            }
        }
        if let Some(v) = best {
            return Some((u, v));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::code::ReductionMode;

    fn steane_x() -> (ReductionGroup, BitMatrix) {
        let code = catalog::get("steane").unwrap();
        (code.reduction_group(PauliKind::X, ReductionMode::State).unwrap(), code.measurement_generators(PauliKind::Z, true))
    }

    fn member(s: &str) -> Member {
        Member { context: BitVector::zeros(0), error: BitVector::parse(s).unwrap() }
    }

    #[test]
    fn single_measurement_gives_one_class() {
        let (g, _) = steane_x();
        let s = vec![BitVector::parse("111....").unwrap()];
        let errs = vec![BitVector::parse("1......").unwrap(), BitVector::parse("11.....").unwrap(), BitVector::parse("1.1....").unwrap()];
        let p = partition_by_syndrome(PauliKind::X, &errs, &s, &g);
        assert_eq!(p.len(), 1);
        let two = vec![s[0].clone(), BitVector::parse("...1111").unwrap()];
        assert!(partition_by_syndrome(PauliKind::X, &errs, &two, &g).len() <= 3);
    }

    #[test]
    fn singleton_is_always_correctable() {
        let (g, _) = steane_x();
        let cls = ErrorClass::new(PauliKind::X, [member("11.....")], &g);
        let c = candidate_corrections(&cls, &g, true);
        assert!(c.iter().any(|c| c.corrects == vec![0] && c.c.weight() <= 2));
    }

    #[test]
    fn shared_candidate_for_neighbours() {
        let (g, _) = steane_x();
        let cls = ErrorClass::new(PauliKind::X, [member("11.....").clone(), member("111....")], &g);
        let c = candidate_corrections(&cls, &g, true);
        assert!(c.iter().any(|c| c.corrects.len() == 2));
        let b = synth_correction(&cls, &steane_x().1, &g, None).unwrap();
        assert_eq!((b.u, b.v), (0, 0));
        assert!(verify_branch(&b, &cls, &g));
    }

    #[test]
    fn candidate_sets_are_exact() {
        let (g, _) = steane_x();
        let cls = ErrorClass::new(PauliKind::X, [member("11....."), member("..11..."), member("....11."), member(".......")], &g);
        for c in candidate_corrections(&cls, &g, false) {
            for (i, m) in cls.members.iter().enumerate() {
                let ok = g.reduced_weight(&m.error.xor(&c.c)) <= 1;
                assert_eq!(ok, c.corrects.contains(&i));
            }
        }
        let pruned = candidate_corrections(&cls, &g, true);
        let covered: HashSet<usize> = pruned.iter().flat_map(|c| c.corrects.iter().copied()).collect();
        assert_eq!(covered.len(), cls.len());
    }

    #[test]
    fn corrupted_recovery_fails_replay() {
        let (g, gens) = steane_x();
        let mut errs = vec![BitVector::zeros(7)];
        for a in 0..7 {
            errs.push(BitVector::unit(7, a));
            for b in a + 1..7 {
                errs.push(BitVector::from_indices(7, &[a, b]));
            }
        }
        let cls = ErrorClass::new(PauliKind::X, errs.into_iter().map(|error| Member { context: BitVector::zeros(0), error }), &g);
        let mut b = synth_correction(&cls, &gens, &g, None).unwrap();
        assert!(b.u >= 1);
        assert!(verify_branch(&b, &cls, &g));
        assert!(b.has_optimality_witnesses());
        assert_eq!(brute_force_optimum(&cls, &gens, &g, 3), Some((b.u, b.v)));
        let (k, c) = b.recovery.iter().find(|(_, c)| c.weight() >= 1).map(|(k, c)| (k.clone(), c.clone())).unwrap();
        let mut bad = c.clone();
        let q = (0..7).find(|&q| !c.get(q)).unwrap();
        bad.flip(q);
        b.recovery.insert(k, bad);
        assert!(!verify_branch(&b, &cls, &g));
    }

    #[test]
    fn empty_class_is_vacuous() {
        let (g, gens) = steane_x();
        let cls = ErrorClass::new(PauliKind::X, [], &g);
        let b = synth_correction(&cls, &gens, &g, None).unwrap();
        assert!(verify_branch(&b, &cls, &g));
        assert_eq!(b.u, 0);
    }

    #[test]
    fn context_separates_members_for_free() {
        let (g, gens) = steane_x();
        let a = Member { context: BitVector::parse("0").unwrap(), error: BitVector::parse("11.....").unwrap() };
        let b = Member { context: BitVector::parse("1").unwrap(), error: BitVector::parse("..11...").unwrap() };
        let cls = ErrorClass::new(PauliKind::X, [a, b], &g);
        let br = synth_correction(&cls, &gens, &g, None).unwrap();
        assert_eq!(br.u, 0);
        assert_eq!(br.recovery.len(), 2);
    }
}
