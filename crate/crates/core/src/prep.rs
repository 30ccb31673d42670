//! Encoder for the logical zero state and the dangerous errors it spreads.

use std::collections::BTreeMap;

use crate::circuit::{fault_locations, propagate, stabilizer_flow, Circuit, Fault, Gate};
use crate::code::{CssCode, PauliKind, ReductionGroup, ReductionMode};
use crate::f2::{BitMatrix, BitVector};
use crate::{Error, Result};

/// RREF/pivot encoder: pivots of `rref(hx)` start in |+>, the rest in |0>, and
/// each reduced row fans out from its pivot in ascending target order.
pub fn synth_prep(code: &CssCode) -> Circuit {
    let r = code.hx.rref();
    let mut c = Circuit::new(code.n, 0);
    let is_pivot = |q: usize| r.pivots.contains(&q);
    for q in 0..code.n {
        c.push(if is_pivot(q) { Gate::PrepX(q) } else { Gate::PrepZ(q) });
    }
    for (i, &p) in r.pivots.iter().enumerate() {
        for q in r.reduced.row(i).ones().filter(|&q| !is_pivot(q)) {
            c.push(Gate::Cnot(p, q));
        }
    }
    c
}

/// Same gates as [`synth_prep`], with row `i` fanning out to its targets in
/// `orders[i]`. Every order must be a permutation of that row's non-pivot support.
pub fn synth_prep_with_orders(code: &CssCode, orders: &[Vec<usize>]) -> Result<Circuit> {
    let r = code.hx.rref();
    if orders.len() != r.rank {
        return Err(Error::LengthMismatch(orders.len(), r.rank));
    }
    let mut c = Circuit::new(code.n, 0);
    for q in 0..code.n {
        c.push(if r.pivots.contains(&q) { Gate::PrepX(q) } else { Gate::PrepZ(q) });
    }
    for (i, (&p, order)) in r.pivots.iter().zip(orders).enumerate() {
        let mut want = row_targets(&r.reduced, &r.pivots, i);
        let mut got = order.clone();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            return Err(Error::InvalidCircuit(format!("order for row {i} is not a permutation of {want:?}")));
        }
        for &q in order {
            c.push(Gate::Cnot(p, q));
        }
    }
    Ok(c)
}

/// Greedy encoder: reduces `rref(hx)` to unit rows by column additions
/// (`col t += col c`), each time taking the addition that removes the most
/// ones (ties to the smallest `(c, t)`), then replays the additions in reverse
/// as CNOTs. Fan-out may pass through any qubit, not only pivots. `None` if
/// the reduction stalls.
pub fn greedy_prep(code: &CssCode) -> Option<Circuit> {
    greedy_prep_with(code, |_| 0)
}

/// [`greedy_prep`] with ties among the best additions broken by `pick`, which
/// receives the number of tied candidates and returns an index.
pub fn greedy_prep_with(code: &CssCode, pick: impl FnMut(usize) -> usize) -> Option<Circuit> {
    reduce_to_encoder(code, code.hx.rref().reduced.rows().to_vec(), 0, pick)
}

/// Column-addition reduction of `rows` (a basis of the X stabilizers). Additions
/// whose gain is within `slack` of the best are tied.
pub fn reduce_to_encoder(code: &CssCode, mut rows: Vec<BitVector>, slack: i64, mut pick: impl FnMut(usize) -> usize) -> Option<Circuit> {
    let n = code.n;
    let mut ops = Vec::new();
    while rows.iter().any(|r| r.weight() > 1) {
        let mut moves = Vec::new();
        for c in 0..n {
            for t in (0..n).filter(|&t| t != c) {
                let gain: i64 = rows.iter().filter(|r| r.get(c)).map(|r| if r.get(t) { 1 } else { -1 }).sum();
                if gain > 0 {
                    moves.push((gain, c, t));
                }
            }
        }
        let top = moves.iter().map(|m| m.0).max().unwrap_or(0);
        let tied: Vec<(usize, usize)> = moves.iter().filter(|m| m.0 + slack >= top).map(|m| (m.1, m.2)).collect();
        if tied.is_empty() {
            return None;
        }
        let (c, t) = tied[pick(tied.len()) % tied.len()];
        for r in rows.iter_mut().filter(|r| r.get(c)) {
            r.flip(t);
        }
        ops.push((c, t));
    }
    let mut circ = Circuit::new(n, 0);
    let plus: Vec<usize> = rows.iter().filter_map(|r| r.first_one()).collect();
    for q in 0..n {
        circ.push(if plus.contains(&q) { Gate::PrepX(q) } else { Gate::PrepZ(q) });
    }
    for &(c, t) in ops.iter().rev() {
        circ.push(Gate::Cnot(c, t));
    }
    Some(circ)
}

fn row_targets(reduced: &BitMatrix, pivots: &[usize], i: usize) -> Vec<usize> {
    reduced.row(i).ones().filter(|q| !pivots.contains(q)).collect()
}

/// Searches per-row target orders under which one measurement from the span of
/// `generators` detects every dangerous X error of the encoder. Candidates are
/// tried lightest first, so the returned measurement has minimum weight.
pub fn single_check_orders(
    code: &CssCode,
    generators: &BitMatrix,
    mode: ReductionMode,
) -> Result<Option<(BitVector, Vec<Vec<usize>>)>> {
    let g = code.reduction_group(PauliKind::X, mode)?;
    let r = code.hx.rref();
    let rows: Vec<(usize, Vec<usize>)> =
        r.pivots.iter().enumerate().map(|(i, &p)| (p, row_targets(&r.reduced, &r.pivots, i))).collect();
    if rows.iter().any(|(_, t)| t.len() > 16) {
        return Ok(None);
    }
    let mut span = generators.span(crate::code::RANK_GUARD)?;
    span.retain(|s| !s.is_zero());
    span.sort_by(|a, b| a.weight().cmp(&b.weight()).then_with(|| a.cmp(b)));
    // lightest feasible checks; among those, fewest dangerous errors
    let mut best: Option<(usize, usize, BitVector, Vec<Vec<usize>>)> = None;
    'outer: for s in span {
        if best.as_ref().is_some_and(|b| s.weight() > b.0) {
            break;
        }
        let mut orders = Vec::with_capacity(rows.len());
        let mut score = 0;
        for (p, targets) in &rows {
            match row_order(code.n, *p, targets, &g, &s) {
                Some((o, k)) => {
                    orders.push(o);
                    score += k;
                }
                None => continue 'outer,
            }
        }
        if best.as_ref().is_none_or(|b| score < b.1) {
            best = Some((s.weight(), score, s, orders));
        }
    }
    Ok(best.map(|(_, _, s, o)| (s, o)))
}

// Builds the order back to front: after the first j CNOTs an X fault on the
// pivot leaves the pivot plus the not-yet-targeted suffix. Returns the order
// with the fewest dangerous suffix errors (all of which `s` detects); rows
// longer than `EXHAUSTIVE_ROW` take the first valid order.
fn row_order(n: usize, p: usize, targets: &[usize], g: &ReductionGroup, s: &BitVector) -> Option<(Vec<usize>, usize)> {
    const EXHAUSTIVE_ROW: usize = 8;
    let m = targets.len();
    if m < 2 {
        return Some((targets.to_vec(), 0));
    }
    struct Search<'a> {
        n: usize,
        p: usize,
        targets: &'a [usize],
        g: &'a ReductionGroup,
        s: &'a BitVector,
        dead: Vec<bool>,
        suffix: Vec<usize>,
        best: Option<(Vec<usize>, usize)>,
        exhaustive: bool,
    }
    impl Search<'_> {
        fn go(&mut self, mask: usize, score: usize) -> bool {
            let m = self.targets.len();
            if self.best.as_ref().is_some_and(|b| score >= b.1) {
                return true;
            }
            if self.suffix.len() == m - 1 {
                let first = (0..m).find(|&j| mask & (1 << j) == 0).unwrap();
                let mut o = self.suffix.clone();
                o.push(first);
                self.best = Some((o, score));
                return true;
            }
            if self.dead[mask] {
                return false;
            }
            let mut any = false;
            for j in (0..m).rev().filter(|&j| mask & (1 << j) == 0) {
                let next = mask | (1 << j);
                let mut e = BitVector::unit(self.n, self.p);
                for (k, &t) in self.targets.iter().enumerate() {
                    if next & (1 << k) != 0 {
                        e.set(t, true);
                    }
                }
                let dangerous = self.g.reduced_weight(&e) >= 2;
                if dangerous && !crate::f2::inner_unchecked(&e, self.s) {
                    continue;
                }
                self.suffix.push(j);
                let found = self.go(next, score + dangerous as usize);
                self.suffix.pop();
                any |= found;
                if found && !self.exhaustive {
                    return true;
                }
            }
            if !any {
                self.dead[mask] = true;
            }
            any
        }
    }
    let mut search = Search {
        n,
        p,
        targets,
        g,
        s,
        dead: vec![false; 1 << m],
        suffix: Vec::with_capacity(m),
        best: None,
        exhaustive: m <= EXHAUSTIVE_ROW,
    };
    search.go(0, 0);
    search.best.map(|(suffix, k)| (suffix.iter().rev().map(|&j| targets[j]).collect(), k))
}

/// Per-target pivot orders under which no single Z fault on the encoder leaves a
/// dangerous Z error, combined with the given row orders into one CNOT schedule.
/// `None` if no such schedule exists.
pub fn z_safe_schedule(code: &CssCode, orders: &[Vec<usize>], mode: ReductionMode) -> Result<Option<Vec<(usize, usize)>>> {
    let g = code.reduction_group(PauliKind::Z, mode)?;
    let r = code.hx.rref();
    if orders.len() != r.rank {
        return Err(Error::LengthMismatch(orders.len(), r.rank));
    }
    let n = code.n;
    // node id per (row, position)
    let mut node: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut cnots = Vec::new();
    let mut edges: Vec<Vec<usize>> = Vec::new();
    for (i, order) in orders.iter().enumerate() {
        for (k, &t) in order.iter().enumerate() {
            node.insert((r.pivots[i], t), cnots.len());
            cnots.push((i, k, r.pivots[i], t));
            edges.push(Vec::new());
            if k > 0 {
                let prev = cnots.len() - 2;
                edges[prev].push(cnots.len() - 1);
            }
        }
    }
    let mut targets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(_, _, p, t) in &cnots {
        targets.entry(t).or_default().push(p);
    }
    let choices: Vec<(usize, Vec<Vec<usize>>)> = targets
        .into_iter()
        .map(|(t, ps)| (t, permutations(&ps).into_iter().filter(|o| z_safe(n, t, o, &g)).collect()))
        .collect();
    if choices.iter().any(|(_, c)| c.is_empty()) {
        return Ok(None);
    }
    fn go(
        k: usize,
        choices: &[(usize, Vec<Vec<usize>>)],
        node: &BTreeMap<(usize, usize), usize>,
        edges: &mut Vec<Vec<usize>>,
    ) -> bool {
        if k == choices.len() {
            return true;
        }
        let (t, opts) = &choices[k];
        for o in opts {
            let added: Vec<(usize, usize)> = o.windows(2).map(|w| (node[&(w[0], *t)], node[&(w[1], *t)])).collect();
            for &(a, b) in &added {
                edges[a].push(b);
            }
            if topo_order(edges, |_| 0).is_some() && go(k + 1, choices, node, edges) {
                return true;
            }
            for &(a, _) in added.iter().rev() {
                edges[a].pop();
            }
        }
        false
    }
    if !go(0, &choices, &node, &mut edges) {
        return Ok(None);
    }
    let order = topo_order(&edges, |v| (cnots[v].0, cnots[v].1)).expect("acyclic by construction");
    Ok(Some(order.into_iter().map(|v| (cnots[v].2, cnots[v].3)).collect()))
}

fn permutations(v: &[usize]) -> Vec<Vec<usize>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

// Z on the target after the j-th CNOT reaches every later pivot; a ZZ fault
// also leaves Z on the j-th pivot.
fn z_safe(n: usize, t: usize, pivots: &[usize], g: &ReductionGroup) -> bool {
    (0..pivots.len()).all(|j| {
        let mut e = BitVector::unit(n, t);
        for &p in &pivots[j + 1..] {
            e.set(p, true);
        }
        let mut f = e.clone();
        f.set(pivots[j], true);
        g.reduced_weight(&e) <= 1 && g.reduced_weight(&f) <= 1
    })
}

/// Kahn's algorithm, always taking the ready node with the smallest key.
fn topo_order<K: Ord>(edges: &[Vec<usize>], key: impl Fn(usize) -> K) -> Option<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut indeg = vec![0usize; edges.len()];
    for es in edges {
        for &b in es {
            indeg[b] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<(K, usize)>> =
        (0..edges.len()).filter(|&v| indeg[v] == 0).map(|v| Reverse((key(v), v))).collect();
    let mut out = Vec::with_capacity(edges.len());
    while let Some(Reverse((_, v))) = ready.pop() {
        out.push(v);
        for &b in &edges[v] {
            indeg[b] -= 1;
            if indeg[b] == 0 {
                ready.push(Reverse((key(b), b)));
            }
        }
    }
    (out.len() == edges.len()).then_some(out)
}

/// Encoder with an explicit CNOT schedule over the RREF pivots.
pub fn synth_prep_scheduled(code: &CssCode, schedule: &[(usize, usize)]) -> Result<Circuit> {
    let pivots = code.hx.rref().pivots;
    let mut c = Circuit::new(code.n, 0);
    for q in 0..code.n {
        c.push(if pivots.contains(&q) { Gate::PrepX(q) } else { Gate::PrepZ(q) });
    }
    for &(p, t) in schedule {
        c.push(Gate::Cnot(p, t));
    }
    if !verify_prep(&c, code)? {
        return Err(Error::InvalidCircuit("schedule does not prepare the logical zero state".into()));
    }
    Ok(c)
}

/// [`synth_prep`] with two deterministic refinements, each applied only when
/// it removes a verification requirement. Row target orders are replaced per
/// [`single_check_orders`] when the ascending encoder's dangerous X errors need
/// more than one measurement. The CNOTs are rescheduled per [`z_safe_schedule`]
/// when that leaves no dangerous Z error.
pub fn tuned_prep(code: &CssCode, generators: &BitMatrix, mode: ReductionMode) -> Result<Circuit> {
    let r = code.hx.rref();
    let mut orders: Vec<Vec<usize>> = (0..r.rank).map(|i| row_targets(&r.reduced, &r.pivots, i)).collect();
    let base = synth_prep(code);
    let danger = dangerous_errors(&base, code, PauliKind::X, mode)?.errors();
    if !danger.is_empty() {
        let span = generators.span(crate::code::RANK_GUARD)?;
        if !span.iter().any(|s| danger.iter().all(|e| crate::f2::inner_unchecked(e, s))) {
            if let Some((_, o)) = single_check_orders(code, generators, mode)? {
                orders = o;
            }
        }
    }
    let c = synth_prep_with_orders(code, &orders)?;
    if dangerous_errors(&c, code, PauliKind::Z, mode)?.is_empty() {
        return Ok(c);
    }
    match z_safe_schedule(code, &orders, mode)? {
        Some(s) => synth_prep_scheduled(code, &s),
        None => Ok(c),
    }
}

/// True iff the circuit's output stabilizer equals ⟨hx, hz, lz⟩.
pub fn verify_prep(c: &Circuit, code: &CssCode) -> Result<bool> {
    if c.width != code.n {
        return Err(Error::LengthMismatch(c.width, code.n));
    }
    let (fx, fz) = stabilizer_flow(c)?;
    let n = code.n;
    let sym = |x: &BitVector, z: &BitVector| x.concat(z);
    let got = BitMatrix::from_rows(2 * n, fx.rows().iter().zip(fz.rows()).map(|(x, z)| sym(x, z)).collect())?;
    let zero = BitVector::zeros(n);
    let mut want = BitMatrix::empty(2 * n);
    for r in code.hx.rows() {
        want.push(sym(r, &zero));
    }
    for r in code.hz.rows().iter().chain(code.lz.rows()) {
        want.push(sym(&zero, r));
    }
    Ok(got.same_row_space(&want))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DangerEntry {
    /// Canonical coset representative.
    pub error: BitVector,
    pub witnesses: Vec<Fault>,
}

/// Errors of one kind with reduced weight at least two, one entry per coset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DangerSet {
    pub kind: PauliKind,
    pub mode: ReductionMode,
    pub entries: Vec<DangerEntry>,
}

impl DangerSet {
    pub fn empty(kind: PauliKind, mode: ReductionMode) -> Self {
        DangerSet { kind, mode, entries: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn errors(&self) -> Vec<BitVector> {
        self.entries.iter().map(|e| e.error.clone()).collect()
    }
}

/// Groups errors by coset and keeps those of reduced weight ≥ 2.
pub(crate) fn collect_dangerous<I>(g: &ReductionGroup, items: I) -> Vec<DangerEntry>
where
    I: IntoIterator<Item = (BitVector, Option<Fault>)>,
{
    let mut by_coset: BTreeMap<BitVector, DangerEntry> = BTreeMap::new();
    for (e, w) in items {
        let key = g.normal_form(&e);
        if let Some(ent) = by_coset.get_mut(&key) {
            ent.witnesses.extend(w);
            continue;
        }
        if g.reduced_weight(&e) < 2 {
            continue;
        }
        by_coset.insert(key, DangerEntry { error: g.canonical(&e), witnesses: w.into_iter().collect() });
    }
    let mut out: Vec<DangerEntry> = by_coset.into_values().collect();
    out.sort_by(|a, b| a.error.weight().cmp(&b.error.weight()).then_with(|| a.error.cmp(&b.error)));
    out
}

/// Dangerous errors of `kind` produced by single kind-separated faults.
pub fn dangerous_errors(c: &Circuit, code: &CssCode, kind: PauliKind, mode: ReductionMode) -> Result<DangerSet> {
    let g = code.reduction_group(kind, mode)?;
    let mut items = Vec::new();
    for f in fault_locations(c) {
        let r = propagate(c, &f)?;
        let res = match kind {
            PauliKind::X => r.x,
            PauliKind::Z => r.z,
        };
        let res = res.slice(0, code.n);
        if !res.is_zero() {
            items.push((res, Some(f)));
        }
    }
    Ok(DangerSet { kind, mode, entries: collect_dangerous(&g, items) })
}
