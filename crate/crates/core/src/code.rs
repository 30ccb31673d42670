//! CSS codes, reduction groups, distance and lookup decoding.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::f2::{inner_unchecked, BitMatrix, BitVector};
use crate::{Error, Result};

/// Largest group rank enumerated element by element.
pub const RANK_GUARD: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PauliKind {
    X,
    Z,
}

impl PauliKind {
    pub fn other(self) -> PauliKind {
        match self {
            PauliKind::X => PauliKind::Z,
            PauliKind::Z => PauliKind::X,
        }
    }
}

impl fmt::Display for PauliKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PauliKind::X => "X",
            PauliKind::Z => "Z",
        })
    }
}

/// Which group Z-type errors are reduced against. X-type errors always reduce
/// modulo the X stabilizers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    /// Stabilizer of the prepared state: Z stabilizers and Z logicals.
    #[default]
    State,
    /// Code stabilizer only.
    Code,
}

impl std::str::FromStr for ReductionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(ReductionMode::State),
            "code" => Ok(ReductionMode::Code),
            _ => Err(Error::Parse(format!("unknown reduction mode {s:?}"))),
        }
    }
}

/// The group an error is reduced against, with its elements enumerated.
#[derive(Clone, Debug)]
pub struct ReductionGroup {
    generators: BitMatrix,
    basis: BitMatrix,
    pivots: Vec<usize>,
    elements: Vec<BitVector>,
}

impl ReductionGroup {
    pub fn new(generators: BitMatrix) -> Result<Self> {
        let elements = generators.span(RANK_GUARD)?;
        let r = generators.rref();
        let basis = BitMatrix::from_rows(generators.ncols(), r.reduced.rows()[..r.rank].to_vec())?;
        Ok(ReductionGroup { generators, basis, pivots: r.pivots, elements })
    }

    pub fn trivial(n: usize) -> Self {
        Self::new(BitMatrix::empty(n)).expect("empty group")
    }

    pub fn generators(&self) -> &BitMatrix {
        &self.generators
    }

    pub fn n(&self) -> usize {
        self.generators.ncols()
    }

    pub fn rank(&self) -> usize {
        self.basis.nrows()
    }

    pub fn elements(&self) -> &[BitVector] {
        &self.elements
    }

    /// Minimum weight over the coset `e + group`.
    pub fn reduced_weight(&self, e: &BitVector) -> usize {
        assert_eq!(e.len(), self.n(), "length mismatch");
        self.elements.iter().map(|s| e.xor_weight(s)).min().unwrap_or_else(|| e.weight())
    }

    /// Minimum-weight coset element, lexicographically smallest among ties.
    pub fn canonical(&self, e: &BitVector) -> BitVector {
        let mut best = e.clone();
        let mut bw = e.weight();
        for s in &self.elements[1..] {
            let w = e.xor_weight(s);
            if w < bw || w == bw {
                let c = e.xor(s);
                if w < bw || c < best {
                    best = c;
                    bw = w;
                }
            }
        }
        best
    }

    /// Cheap unique coset label: `e` reduced against the RREF pivots.
    pub fn normal_form(&self, e: &BitVector) -> BitVector {
        let mut v = e.clone();
        for (row, &p) in self.basis.rows().iter().zip(&self.pivots) {
            if v.get(p) {
                v.xor_assign(row);
            }
        }
        v
    }

    pub fn contains(&self, e: &BitVector) -> bool {
        self.normal_form(e).is_zero()
    }

    pub fn equivalent(&self, a: &BitVector, b: &BitVector) -> bool {
        self.contains(&a.xor(b))
    }
}

/// Free-function form of [`ReductionGroup::reduced_weight`].
pub fn reduced_weight(e: &BitVector, g: &ReductionGroup) -> usize {
    g.reduced_weight(e)
}

/// A CSS code with explicit logical representatives.
#[derive(Clone, PartialEq, Eq)]
pub struct CssCode {
    pub name: String,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub hx: BitMatrix,
    pub hz: BitMatrix,
    pub lx: BitMatrix,
    pub lz: BitMatrix,
}

impl fmt::Debug for CssCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [[{},{},{}]]", self.name, self.n, self.k, self.d)
    }
}

impl CssCode {
    /// Builds and validates a code, deriving logicals when absent and
    /// computing the distance.
    pub fn new(
        name: &str,
        hx: BitMatrix,
        hz: BitMatrix,
        logicals: Option<(BitMatrix, BitMatrix)>,
    ) -> Result<Self> {
        if hx.ncols() != hz.ncols() {
            return Err(Error::InvalidCode("hx and hz widths differ".into()));
        }
        let n = hx.ncols();
        let (lx, lz) = match logicals {
            Some(l) => l,
            None => derive_logicals(&hx, &hz)?,
        };
        let k = lx.nrows();
        let mut code = CssCode { name: name.to_string(), n, k, d: 0, hx, hz, lx, lz };
        validate(&code).map_err(Error::InvalidCode)?;
        code.d = distance(&code)?;
        Ok(code)
    }

    pub fn stabilizers(&self, kind: PauliKind) -> &BitMatrix {
        match kind {
            PauliKind::X => &self.hx,
            PauliKind::Z => &self.hz,
        }
    }

    pub fn logicals(&self, kind: PauliKind) -> &BitMatrix {
        match kind {
            PauliKind::X => &self.lx,
            PauliKind::Z => &self.lz,
        }
    }

    /// Generators of the group errors of `kind` are reduced against.
    pub fn reduction_generators(&self, kind: PauliKind, mode: ReductionMode) -> BitMatrix {
        match (kind, mode) {
            (PauliKind::X, _) => self.hx.clone(),
            (PauliKind::Z, ReductionMode::State) => self.hz.vstack(&self.lz),
            (PauliKind::Z, ReductionMode::Code) => self.hz.clone(),
        }
    }

    pub fn reduction_group(&self, kind: PauliKind, mode: ReductionMode) -> Result<ReductionGroup> {
        ReductionGroup::new(self.reduction_generators(kind, mode))
    }

    /// Generators measurable without disturbing the prepared zero state, for
    /// measured operators of type `measured`.
    pub fn measurement_generators(&self, measured: PauliKind, with_logicals: bool) -> BitMatrix {
        match measured {
            PauliKind::X => self.hx.clone(),
            PauliKind::Z if with_logicals => self.hz.vstack(&self.lz),
            PauliKind::Z => self.hz.clone(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: CodeFile = serde_json::from_str(s)?;
        f.into_code()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> CodeFile {
        let rows = |m: &BitMatrix| m.rows().iter().map(BitVector::to_dotted).collect();
        CodeFile {
            n: self.n,
            k: self.k,
            name: self.name.clone(),
            hx: rows(&self.hx),
            hz: rows(&self.hz),
            lx: Some(rows(&self.lx)),
            lz: Some(rows(&self.lz)),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("serializable")
    }
}

/// On-disk code description; matrices are lists of dotted row strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeFile {
    pub n: usize,
    pub k: usize,
    pub name: String,
    pub hx: Vec<String>,
    pub hz: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lx: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lz: Option<Vec<String>>,
}

impl CodeFile {
    pub fn into_code(self) -> Result<CssCode> {
        let parse = |rows: &[String]| -> Result<BitMatrix> {
            let rows = rows.iter().map(|s| BitVector::parse(s)).collect::<Result<Vec<_>>>()?;
            BitMatrix::from_rows(self.n, rows)
        };
        let hx = parse(&self.hx)?;
        let hz = parse(&self.hz)?;
        let logicals = match (&self.lx, &self.lz) {
            (Some(a), Some(b)) => Some((parse(a)?, parse(b)?)),
            (None, None) => None,
            _ => return Err(Error::InvalidCode("lx and lz must be given together".into())),
        };
        let code = CssCode::new(&self.name, hx, hz, logicals)?;
        if code.k != self.k {
            return Err(Error::InvalidCode(format!("declared k={} but found k={}", self.k, code.k)));
        }
        Ok(code)
    }
}

/// Checks every structural invariant; the message names the first failure.
pub fn validate(code: &CssCode) -> std::result::Result<(), String> {
    let n = code.n;
    for (name, m) in [("hx", &code.hx), ("hz", &code.hz), ("lx", &code.lx), ("lz", &code.lz)] {
        if m.ncols() != n {
            return Err(format!("{name} has {} columns, expected {n}", m.ncols()));
        }
    }
    if !code.hx.mul_transpose(&code.hz).is_zero() {
        return Err("hx·hzᵀ ≠ 0: X and Z stabilizers do not commute".into());
    }
    if code.lx.nrows() != code.k || code.lz.nrows() != code.k {
        return Err(format!("expected {} logical pairs", code.k));
    }
    if !code.lx.mul_transpose(&code.hz).is_zero() {
        return Err("an X logical anticommutes with a Z stabilizer".into());
    }
    if !code.lz.mul_transpose(&code.hx).is_zero() {
        return Err("a Z logical anticommutes with an X stabilizer".into());
    }
    for (name, l, h) in [("lx", &code.lx, &code.hx), ("lz", &code.lz, &code.hz)] {
        for r in l.rows() {
            if h.contains(r) {
                return Err(format!("logical in stabilizer: {name} row {r} lies in the stabilizer row space"));
            }
        }
    }
    if code.lx.mul_transpose(&code.lz) != BitMatrix::identity(code.k) {
        return Err("logicals are not symplectically paired".into());
    }
    let (rx, rz) = (code.hx.rank(), code.hz.rank());
    if rx + rz + code.k != n {
        return Err(format!("rank(hx)+rank(hz)={} but n-k={}", rx + rz, n.saturating_sub(code.k)));
    }
    Ok(())
}

/// Inverse of a square matrix over GF(2), if it exists.
fn invert(p: &BitMatrix) -> Option<BitMatrix> {
    let k = p.nrows();
    let aug = BitMatrix::from_rows(
        2 * k,
        (0..k).map(|i| p.row(i).concat(&BitVector::unit(k, i))).collect(),
    )
    .ok()?;
    let r = aug.rref();
    if r.pivots.len() < k || r.pivots[k - 1] != k - 1 {
        return None;
    }
    BitMatrix::from_rows(k, (0..k).map(|i| r.reduced.row(i).slice(k, k)).collect()).ok()
}

/// Extends `base` with rows of `pool` until the span stops growing; returns
/// the added rows.
fn complement(base: &BitMatrix, pool: &BitMatrix) -> Vec<BitVector> {
    let mut acc = base.clone();
    let mut rank = acc.rank();
    let mut out = Vec::new();
    for r in pool.rows() {
        acc.push(r.clone());
        let nr = acc.rank();
        if nr > rank {
            rank = nr;
            out.push(r.clone());
        } else {
            acc = BitMatrix::from_rows(acc.ncols(), acc.rows()[..acc.nrows() - 1].to_vec()).unwrap();
        }
    }
    out
}

/// Symplectically paired logical representatives for a CSS pair.
pub fn derive_logicals(hx: &BitMatrix, hz: &BitMatrix) -> Result<(BitMatrix, BitMatrix)> {
    if hx.ncols() != hz.ncols() {
        return Err(Error::InvalidCode("hx and hz widths differ".into()));
    }
    if !hx.mul_transpose(hz).is_zero() {
        return Err(Error::InvalidCode("hx·hzᵀ ≠ 0".into()));
    }
    let n = hx.ncols();
    let lx_raw = complement(hx, &hz.kernel_basis());
    let lz_raw = complement(hz, &hx.kernel_basis());
    if lx_raw.len() != lz_raw.len() {
        return Err(Error::InvalidCode("logical spaces have different dimensions".into()));
    }
    let k = lx_raw.len();
    let lx = BitMatrix::from_rows(n, lx_raw)?;
    let lz_raw = BitMatrix::from_rows(n, lz_raw)?;
    if k == 0 {
        return Ok((lx, lz_raw));
    }
    let pinv = invert(&lx.mul_transpose(&lz_raw))
        .ok_or_else(|| Error::InvalidCode("degenerate logical pairing".into()))?;
    // lz = (P⁻¹)ᵀ · lz_raw gives lx·lzᵀ = P·P⁻¹ = I.
    let m = pinv.transpose();
    let lz = BitMatrix::from_rows(n, m.rows().iter().map(|c| lz_raw.combine(c)).collect())?;
    Ok((lx, lz))
}

fn min_logical_weight(stab: &BitMatrix, dual_checks: &BitMatrix) -> Result<Option<usize>> {
    let ker = dual_checks.kernel_basis();
    let g = ReductionGroup::new(stab.clone())?;
    let mut best: Option<usize> = None;
    for v in ker.span(RANK_GUARD)?.iter().skip(1) {
        if !g.contains(v) {
            let w = v.weight();
            best = Some(best.map_or(w, |b| b.min(w)));
        }
    }
    Ok(best)
}

/// Minimum weight of a nontrivial logical operator of either type.
pub fn distance(code: &CssCode) -> Result<usize> {
    if code.k == 0 {
        return Err(Error::Unsupported("distance of a code without logical qubits".into()));
    }
    let dx = min_logical_weight(&code.hx, &code.hz)?;
    let dz = min_logical_weight(&code.hz, &code.hx)?;
    Ok(dx.into_iter().chain(dz).min().expect("k > 0 implies a logical"))
}

/// Syndrome lookup table mapping each achievable syndrome to a
/// minimum-weight error producing it.
#[derive(Clone, Debug)]
pub struct LookupDecoder {
    pub kind: PauliKind,
    checks: BitMatrix,
    table: HashMap<BitVector, BitVector>,
}

impl LookupDecoder {
    pub fn syndrome(&self, e: &BitVector) -> BitVector {
        self.checks.mul_vec(e)
    }

    pub fn decode(&self, syndrome: &BitVector) -> Option<&BitVector> {
        self.table.get(syndrome)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Residual after correcting `e`.
    pub fn correct(&self, e: &BitVector) -> BitVector {
        match self.decode(&self.syndrome(e)) {
            Some(c) => e.xor(c),
            None => e.clone(),
        }
    }
}

fn combinations(n: usize, w: usize, f: &mut impl FnMut(&[usize]) -> bool) {
    fn rec(start: usize, n: usize, w: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == w {
            return f(cur);
        }
        for i in start..n {
            cur.push(i);
            if !rec(i + 1, n, w, cur, f) {
                return false;
            }
            cur.pop();
        }
        true
    }
    rec(0, n, w, &mut Vec::with_capacity(w), f);
}

/// Lookup decoder for errors of `kind` (X errors are seen by hz).
pub fn build_lookup_decoder(code: &CssCode, kind: PauliKind) -> LookupDecoder {
    let checks = code.stabilizers(kind.other()).clone();
    let target = 1usize << checks.rank();
    let mut table = HashMap::new();
    table.insert(BitVector::zeros(checks.nrows()), BitVector::zeros(code.n));
    let mut w = 1;
    while table.len() < target && w <= code.n {
        combinations(code.n, w, &mut |idx| {
            let e = BitVector::from_indices(code.n, idx);
            table.entry(checks.mul_vec(&e)).or_insert(e);
            table.len() < target
        });
        w += 1;
    }
    LookupDecoder { kind, checks, table }
}

/// Calls `f` on every weight-`w` subset of `0..n` in lexicographic order.
#[cfg(test)]
pub(crate) fn for_each_subset(n: usize, w: usize, mut f: impl FnMut(&[usize])) {
    combinations(n, w, &mut |idx| {
        f(idx);
        true
    });
}

/// Commutation test used by the decoders and validation.
pub fn anticommutes_any(e: &BitVector, ops: &BitMatrix) -> bool {
    ops.rows().iter().any(|r| inner_unchecked(r, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use proptest::prelude::*;

    fn steane() -> CssCode {
        catalog::get("steane").unwrap()
    }

    #[test]
    fn steane_validates() {
        let c = steane();
        assert_eq!(validate(&c), Ok(()));
        assert_eq!((c.n, c.k, c.d), (7, 1, 3));
    }

    #[test]
    fn odd_overlap_row_violates_commutation() {
        let mut c = steane();
        let mut rows = c.hz.rows().to_vec();
        rows[0] = BitVector::from_indices(7, &[0]);
        c.hz = BitMatrix::from_rows(7, rows).unwrap();
        let err = validate(&c).unwrap_err();
        assert!(err.contains("hx·hzᵀ"), "{err}");
    }

    #[test]
    fn logical_in_stabilizer_violation() {
        let mut c = steane();
        c.lz = BitMatrix::from_rows(7, vec![c.hz.row(0).clone()]).unwrap();
        let err = validate(&c).unwrap_err();
        assert!(err.contains("logical in stabilizer"), "{err}");
    }

    #[test]
    fn derived_logicals_steane_match_known_class() {
        let c = steane();
        let (lx, lz) = derive_logicals(&c.hx, &c.hz).unwrap();
        assert_eq!(lx.nrows(), 1);
        assert_eq!(lz.nrows(), 1);
        let z123 = BitVector::from_indices(7, &[0, 1, 2]);
        assert!(c.hz.contains(&lz.row(0).xor(&z123)));
    }

    #[test]
    fn derived_logicals_trivial_code() {
        let (lx, lz) = derive_logicals(&BitMatrix::empty(1), &BitMatrix::empty(1)).unwrap();
        assert_eq!(lx.row(0).to_dotted(), "1");
        assert_eq!(lz.row(0).to_dotted(), "1");
    }

    #[test]
    fn derived_logicals_carbon_are_paired() {
        let c = catalog::get("carbon12").unwrap();
        let (lx, lz) = derive_logicals(&c.hx, &c.hz).unwrap();
        let p = lx.mul_transpose(&lz);
        assert_eq!(p, BitMatrix::identity(2));
    }

    #[test]
    fn reduced_weight_examples() {
        let c = steane();
        let g = c.reduction_group(PauliKind::X, ReductionMode::State).unwrap();
        assert_eq!(g.reduced_weight(c.hx.row(0)), 0);
        assert_eq!(g.reduced_weight(&BitVector::zeros(7)), 0);
        let e = BitVector::from_indices(7, &[4, 5]);
        // brute force over the 8 coset elements
        let brute = c.hx.span(8).unwrap().iter().map(|s| s.xor(&e).weight()).min().unwrap();
        assert_eq!(brute, 2);
        assert_eq!(g.reduced_weight(&e), 2);
    }

    #[test]
    fn rank_guard() {
        let big = BitMatrix::identity(21);
        assert!(matches!(ReductionGroup::new(big), Err(Error::RankGuard(21, 20))));
    }

    #[test]
    fn canonical_is_min_then_lex() {
        let c = steane();
        let g = c.reduction_group(PauliKind::X, ReductionMode::State).unwrap();
        let e = BitVector::from_indices(7, &[4, 5]);
        let can = g.canonical(&e);
        assert_eq!(can.weight(), 2);
        let mut all: Vec<_> = g.elements().iter().map(|s| s.xor(&e)).filter(|v| v.weight() == 2).collect();
        all.sort();
        assert_eq!(can, all[0]);
    }

    #[test]
    fn decoder_examples() {
        let c = steane();
        let dec = build_lookup_decoder(&c, PauliKind::X);
        assert!(dec.decode(&BitVector::zeros(3)).unwrap().is_zero());
        let e = BitVector::unit(7, 4);
        assert_eq!(dec.decode(&dec.syndrome(&e)).unwrap(), &e);
        // 7 single errors and the identity cover all 8 syndromes
        let dz = build_lookup_decoder(&c, PauliKind::Z);
        assert_eq!(dz.len(), 8);
        for s in 0..8u64 {
            let c = dz.decode(&BitVector::from_u64(3, s)).unwrap();
            assert!(c.weight() <= 1);
        }
    }

    #[test]
    fn decoder_roundtrip_all_catalog() {
        for name in catalog::NAMES {
            let c = catalog::get(name).unwrap();
            let t = (c.d - 1) / 2;
            for kind in [PauliKind::X, PauliKind::Z] {
                let dec = build_lookup_decoder(&c, kind);
                let stab = c.stabilizers(kind);
                for w in 0..=t {
                    for_each_subset(c.n, w, |idx| {
                        let e = BitVector::from_indices(c.n, idx);
                        assert!(stab.contains(&dec.correct(&e)), "{name} {kind} {e}");
                    });
                }
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let c = steane();
        let back = CssCode::from_json_str(&c.to_json_string()).unwrap();
        assert_eq!(back, c);
        let bad = r#"{"n":7,"k":2,"name":"x","hx":["11..11.","1.1.1.1","...1111"],"hz":["11..11.","1.1.1.1","...1111"]}"#;
        assert!(CssCode::from_json_str(bad).is_err());
    }

    proptest! {
        #[test]
        fn reduced_weight_bounded_by_weight(bits in proptest::collection::vec(any::<bool>(), 9)) {
            let c = catalog::get("surface9").unwrap();
            let e = BitVector::from_bools(&bits);
            for kind in [PauliKind::X, PauliKind::Z] {
                let g = c.reduction_group(kind, ReductionMode::State).unwrap();
                prop_assert!(g.reduced_weight(&e) <= e.weight());
            }
            prop_assert_eq!(ReductionGroup::trivial(9).reduced_weight(&e), e.weight());
        }

        #[test]
        fn reduced_weight_invariant_under_group(bits in proptest::collection::vec(any::<bool>(), 15), pick in any::<u32>()) {
            let c = catalog::get("tetrahedral15").unwrap();
            let e = BitVector::from_bools(&bits);
            for kind in [PauliKind::X, PauliKind::Z] {
                let g = c.reduction_group(kind, ReductionMode::State).unwrap();
                let s = &g.elements()[pick as usize % g.elements().len()];
                prop_assert_eq!(g.reduced_weight(&e.xor(s)), g.reduced_weight(&e));
                prop_assert_eq!(g.canonical(&e.xor(s)), g.canonical(&e));
                prop_assert_eq!(g.normal_form(&e.xor(s)), g.normal_form(&e));
            }
        }
    }
}
