//! Circuit IR over {PrepZ, PrepX, CNOT, MeasZ, MeasX, conditional Pauli} and
//! Pauli-fault propagation.

use std::fmt::Write as _;

use crate::code::PauliKind;
use crate::f2::{BitMatrix, BitVector};
use crate::{Error, Result};

/// Holds iff `(bits AND mask) == value`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ClassicalCondition {
    pub mask: BitVector,
    pub value: BitVector,
}

impl ClassicalCondition {
    pub fn new(mask: BitVector, value: BitVector) -> Result<Self> {
        if mask.len() != value.len() {
            return Err(Error::LengthMismatch(mask.len(), value.len()));
        }
        if value.and(&mask) != value {
            return Err(Error::InvalidCircuit("condition value has bits outside its mask".into()));
        }
        Ok(ClassicalCondition { mask, value })
    }

    pub fn holds(&self, bits: &BitVector) -> bool {
        bits.and(&self.mask) == self.value
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    PrepZ(usize),
    PrepX(usize),
    Cnot(usize, usize),
    /// Qubit, cbit.
    MeasZ(usize, usize),
    MeasX(usize, usize),
    CondPauli { kind: PauliKind, q: usize, cond: ClassicalCondition },
}

impl Gate {
    /// Qubits the gate acts on; the second entry is the CNOT target.
    pub fn qubits(&self) -> (usize, Option<usize>) {
        match *self {
            Gate::PrepZ(q) | Gate::PrepX(q) | Gate::MeasZ(q, _) | Gate::MeasX(q, _) => (q, None),
            Gate::Cnot(c, t) => (c, Some(t)),
            Gate::CondPauli { q, .. } => (q, None),
        }
    }

    pub fn is_measurement(&self) -> bool {
        matches!(self, Gate::MeasZ(..) | Gate::MeasX(..))
    }

    pub fn cbit(&self) -> Option<usize> {
        match *self {
            Gate::MeasZ(_, m) | Gate::MeasX(_, m) => Some(m),
            _ => None,
        }
    }
}

/// Nontrivial Paulis on a gate's support as (x, z) bit pairs: 3 on one qubit,
/// 15 on two (bit 0 is the first qubit).
pub fn pauli_choices(two_qubit: bool) -> &'static [(u8, u8)] {
    const ONE: [(u8, u8); 3] = [(1, 0), (1, 1), (0, 1)];
    const TWO: [(u8, u8); 15] = {
        let mut out = [(0u8, 0u8); 15];
        let mut i = 1;
        while i < 16 {
            out[i - 1] = ((i & 3) as u8, (i >> 2) as u8);
            i += 1;
        }
        out
    };
    if two_qubit {
        &TWO
    } else {
        &ONE
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Circuit {
    pub width: usize,
    pub cbits: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(width: usize, cbits: usize) -> Self {
        Circuit { width, cbits, gates: Vec::new() }
    }

    pub fn push(&mut self, g: Gate) {
        self.gates.push(g);
    }

    pub fn cnot_count(&self) -> usize {
        self.gates.iter().filter(|g| matches!(g, Gate::Cnot(..))).count()
    }

    /// Index bounds and single assignment of cbits.
    pub fn validate(&self) -> Result<()> {
        let mut written = vec![false; self.cbits];
        for (i, g) in self.gates.iter().enumerate() {
            let (a, b) = g.qubits();
            if a >= self.width || b.is_some_and(|b| b >= self.width) {
                return Err(Error::InvalidCircuit(format!("gate {i} addresses a qubit past width {}", self.width)));
            }
            if b == Some(a) {
                return Err(Error::InvalidCircuit(format!("gate {i}: CNOT control equals target")));
            }
            if let Some(m) = g.cbit() {
                if m >= self.cbits || written[m] {
                    return Err(Error::InvalidCircuit(format!("gate {i}: cbit m{m} out of range or rewritten")));
                }
                written[m] = true;
            }
            if let Gate::CondPauli { cond, .. } = g {
                if cond.mask.len() != self.cbits {
                    return Err(Error::InvalidCircuit(format!("gate {i}: condition width")));
                }
            }
        }
        Ok(())
    }

    /// Checks that every qubit is prepared before it is used, treating
    /// `inputs` as already prepared.
    pub fn validate_preparation(&self, inputs: &[usize]) -> Result<()> {
        let mut ready = vec![false; self.width];
        for &q in inputs {
            ready[q] = true;
        }
        for (i, g) in self.gates.iter().enumerate() {
            match *g {
                Gate::PrepZ(q) | Gate::PrepX(q) => ready[q] = true,
                _ => {
                    let (a, b) = g.qubits();
                    if !ready[a] || b.is_some_and(|b| !ready[b]) {
                        return Err(Error::InvalidCircuit(format!("gate {i} uses an unprepared qubit")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# qubits {} cbits {}\n", self.width, self.cbits);
        for g in &self.gates {
            s.push_str(&gate_line(g));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut gates = Vec::new();
        let mut header: Option<(usize, usize)> = None;
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let t: Vec<&str> = rest.split_whitespace().collect();
                if let ["qubits", w, "cbits", c] = t.as_slice() {
                    header = Some((parse_idx(w)?, parse_idx(c)?));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            gates.push(parse_gate(line)?);
        }
        let (width, cbits) = match header {
            Some(h) => h,
            None => {
                let w = gates.iter().map(|g| { let (a, b) = g.qubits(); a.max(b.unwrap_or(0)) + 1 }).max().unwrap_or(0);
                let c = gates.iter().filter_map(Gate::cbit).map(|m| m + 1).max().unwrap_or(0);
                (w, c)
            }
        };
        let c = Circuit { width, cbits, gates };
        c.validate()?;
        Ok(c)
    }
}

pub fn gate_line(g: &Gate) -> String {
    match g {
        Gate::PrepZ(q) => format!("PREPZ {q}"),
        Gate::PrepX(q) => format!("PREPX {q}"),
        Gate::Cnot(c, t) => format!("CNOT {c} {t}"),
        Gate::MeasZ(q, m) => format!("MEASZ {q} -> m{m}"),
        Gate::MeasX(q, m) => format!("MEASX {q} -> m{m}"),
        Gate::CondPauli { kind, q, cond } => {
            let mut s = String::new();
            write!(s, "CORR{kind} {q} IF {}={}", cond.mask.to_binary(), cond.value.to_binary()).unwrap();
            s
        }
    }
}

fn parse_idx(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse(format!("bad index {s:?}")))
}

fn parse_cbit(s: &str) -> Result<usize> {
    parse_idx(s.strip_prefix('m').ok_or_else(|| Error::Parse(format!("bad cbit {s:?}")))?)
}

fn parse_gate(line: &str) -> Result<Gate> {
    let t: Vec<&str> = line.split_whitespace().collect();
    let g = match t.as_slice() {
        ["PREPZ", q] => Gate::PrepZ(parse_idx(q)?),
        ["PREPX", q] => Gate::PrepX(parse_idx(q)?),
        ["CNOT", c, tg] => Gate::Cnot(parse_idx(c)?, parse_idx(tg)?),
        ["MEASZ", q, "->", m] => Gate::MeasZ(parse_idx(q)?, parse_cbit(m)?),
        ["MEASX", q, "->", m] => Gate::MeasX(parse_idx(q)?, parse_cbit(m)?),
        [op @ ("CORRX" | "CORRZ"), q, "IF", cond] => {
            let (mask, value) = cond.split_once('=').ok_or_else(|| Error::Parse(format!("bad condition {cond:?}")))?;
            let kind = if *op == "CORRX" { PauliKind::X } else { PauliKind::Z };
            let cond = ClassicalCondition::new(BitVector::parse(mask)?, BitVector::parse(value)?)?;
            Gate::CondPauli { kind, q: parse_idx(q)?, cond }
        }
        _ => return Err(Error::Parse(format!("unrecognised gate line {line:?}"))),
    };
    Ok(g)
}

/// Accumulated Pauli error plus recorded measurement bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub x: BitVector,
    pub z: BitVector,
    pub m: BitVector,
}

impl Frame {
    pub fn new(width: usize, cbits: usize) -> Self {
        Frame { x: BitVector::zeros(width), z: BitVector::zeros(width), m: BitVector::zeros(cbits) }
    }

    pub fn reset(&mut self) {
        self.x.clear();
        self.z.clear();
        self.m.clear();
    }

    /// Applies one gate's action on the frame. Conditional Paulis are applied
    /// only when `conditions` is set and their condition holds; the return
    /// value says whether the gate executed.
    #[inline]
    pub fn apply(&mut self, g: &Gate, conditions: bool) -> bool {
        match *g {
            Gate::PrepZ(q) | Gate::PrepX(q) => {
                self.x.set(q, false);
                self.z.set(q, false);
            }
            Gate::Cnot(c, t) => {
                if self.x.get(c) {
                    self.x.flip(t);
                }
                if self.z.get(t) {
                    self.z.flip(c);
                }
            }
            Gate::MeasZ(q, m) => self.m.set(m, self.x.get(q)),
            Gate::MeasX(q, m) => self.m.set(m, self.z.get(q)),
            Gate::CondPauli { kind, q, ref cond } => {
                if !conditions {
                    return true;
                }
                if !cond.holds(&self.m) {
                    return false;
                }
                match kind {
                    PauliKind::X => self.x.flip(q),
                    PauliKind::Z => self.z.flip(q),
                }
            }
        }
        true
    }

    /// XORs a Pauli given as (x, z) bit pairs onto the gate's qubits.
    #[inline]
    pub fn inject(&mut self, g: &Gate, p: (u8, u8)) {
        let (a, b) = g.qubits();
        if p.0 & 1 == 1 {
            self.x.flip(a);
        }
        if p.1 & 1 == 1 {
            self.z.flip(a);
        }
        if let Some(b) = b {
            if p.0 & 2 == 2 {
                self.x.flip(b);
            }
            if p.1 & 2 == 2 {
                self.z.flip(b);
            }
        }
    }
}

/// A single fault: a Pauli right after gate `location`, or a flip of the
/// outcome recorded by the measurement at `location`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fault {
    pub location: usize,
    pub x: BitVector,
    pub z: BitVector,
    pub flip: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Propagated {
    pub x: BitVector,
    pub z: BitVector,
    pub flips: BitVector,
}

/// Forward conjugation of a fault to the end of the circuit. Classical
/// conditions are ignored.
pub fn propagate(c: &Circuit, f: &Fault) -> Result<Propagated> {
    let Some(g) = c.gates.get(f.location) else {
        return Err(Error::InvalidCircuit(format!("fault location {} past {} gates", f.location, c.gates.len())));
    };
    if f.x.len() != c.width || f.z.len() != c.width {
        return Err(Error::LengthMismatch(f.x.len(), c.width));
    }
    if let Some(m) = f.flip {
        if g.cbit() != Some(m) {
            return Err(Error::InvalidCircuit(format!("flip of m{m} at a gate that does not write it")));
        }
    }
    let mut fr = Frame::new(c.width, c.cbits);
    fr.x.xor_assign(&f.x);
    fr.z.xor_assign(&f.z);
    if let Some(m) = f.flip {
        fr.m.flip(m);
    }
    for g in &c.gates[f.location + 1..] {
        fr.apply(g, false);
    }
    Ok(Propagated { x: fr.x, z: fr.z, flips: fr.m })
}

/// Kind-separated single faults: X and Z on one-qubit locations, the six
/// same-kind Paulis on CNOTs, and one flip per measurement.
pub fn fault_locations(c: &Circuit) -> Vec<Fault> {
    let mut out = Vec::new();
    let w = c.width;
    for (i, g) in c.gates.iter().enumerate() {
        let mk = |x: &[usize], z: &[usize]| Fault {
            location: i,
            x: BitVector::from_indices(w, x),
            z: BitVector::from_indices(w, z),
            flip: None,
        };
        match g.qubits() {
            _ if g.is_measurement() => {
                out.push(Fault { location: i, x: BitVector::zeros(w), z: BitVector::zeros(w), flip: g.cbit() });
            }
            (a, None) => {
                out.push(mk(&[a], &[]));
                out.push(mk(&[], &[a]));
            }
            (a, Some(b)) => {
                for s in [&[b][..], &[a], &[a, b]] {
                    out.push(mk(s, &[]));
                }
                for s in [&[b][..], &[a], &[a, b]] {
                    out.push(mk(&[], s));
                }
            }
        }
    }
    out
}

/// Stabilizer generators of the state produced by a unitary preparation
/// circuit, as (x-part, z-part) rows.
pub fn stabilizer_flow(c: &Circuit) -> Result<(BitMatrix, BitMatrix)> {
    let w = c.width;
    let mut gx: Vec<BitVector> = Vec::new();
    let mut gz: Vec<BitVector> = Vec::new();
    for g in &c.gates {
        match *g {
            Gate::PrepZ(q) | Gate::PrepX(q) => {
                if gx.iter().chain(&gz).any(|r| r.get(q)) {
                    return Err(Error::InvalidCircuit(format!("qubit {q} prepared after use")));
                }
                let (x, z) = if matches!(g, Gate::PrepX(_)) {
                    (BitVector::unit(w, q), BitVector::zeros(w))
                } else {
                    (BitVector::zeros(w), BitVector::unit(w, q))
                };
                gx.push(x);
                gz.push(z);
            }
            Gate::Cnot(ctl, t) => {
                for (x, z) in gx.iter_mut().zip(gz.iter_mut()) {
                    if x.get(ctl) {
                        x.flip(t);
                    }
                    if z.get(t) {
                        z.flip(ctl);
                    }
                }
            }
            _ => return Err(Error::InvalidCircuit("stabilizer flow needs a unitary preparation circuit".into())),
        }
    }
    Ok((BitMatrix::from_rows(w, gx)?, BitMatrix::from_rows(w, gz)?))
}
