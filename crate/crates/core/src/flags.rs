//! Stabilizer-measurement gadgets, their hook errors, and flag handling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Gate};
use crate::code::{PauliKind, ReductionGroup};
use crate::correct::{synth_correction, CorrectionBranch, ErrorClass, Member};
use crate::f2::{BitMatrix, BitVector};
use crate::verify::VerificationMeasurement;
use crate::{Error, Result};

/// Flag ancilla with its two CNOTs. `first` and `second` count the data
/// CNOTs emitted before flag CNOT A and B respectively.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flag {
    pub qubit: usize,
    pub cbit: usize,
    pub first: usize,
    pub second: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasurementGadget {
    pub measurement: VerificationMeasurement,
    pub order: Vec<usize>,
    pub ancilla: usize,
    pub cbit: usize,
    pub flag: Option<Flag>,
}

impl MeasurementGadget {
    /// Unflagged gadget with data CNOTs in ascending qubit order.
    pub fn plain(kind: PauliKind, support: BitVector, ancilla: usize, cbit: usize) -> Self {
        let order = support.ones().collect();
        MeasurementGadget {
            measurement: VerificationMeasurement { kind, support, flagged: false },
            order,
            ancilla,
            cbit,
            flag: None,
        }
    }

    /// Adds a flag with CNOT A after the first data CNOT and B before the last.
    pub fn flagged(mut self, qubit: usize, cbit: usize) -> Self {
        let w = self.order.len();
        self.flag = Some(Flag { qubit, cbit, first: 1, second: w.saturating_sub(1) });
        self.measurement.flagged = true;
        self
    }

    pub fn weight(&self) -> usize {
        self.order.len()
    }

    pub fn kind(&self) -> PauliKind {
        self.measurement.kind
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.order.len();
        if w < 2 {
            return Err(Error::InvalidCircuit(format!("measurement of weight {w} is trivial")));
        }
        let mut sorted = self.order.clone();
        sorted.sort_unstable();
        let want: Vec<usize> = self.measurement.support.ones().collect();
        if sorted != want {
            return Err(Error::InvalidCircuit("CNOT order is not a permutation of the support".into()));
        }
        if let Some(f) = &self.flag {
            if !(f.first >= 1 && f.first <= f.second && f.second < w) {
                return Err(Error::InvalidCircuit(format!("flag CNOTs at {} and {} for weight {w}", f.first, f.second)));
            }
        }
        if self.measurement.flagged != self.flag.is_some() {
            return Err(Error::InvalidCircuit("flagged marker disagrees with the flag".into()));
        }
        Ok(())
    }
}

/// Gate list of one gadget over a register of the given size.
pub fn measurement_circuit(g: &MeasurementGadget, width: usize, cbits: usize) -> Result<Circuit> {
    g.validate()?;
    let mut c = Circuit::new(width, cbits);
    let a = g.ancilla;
    let z_type = g.kind() == PauliKind::Z;
    c.push(if z_type { Gate::PrepZ(a) } else { Gate::PrepX(a) });
    let flag_cnot = |f: &Flag| if z_type { Gate::Cnot(f.qubit, a) } else { Gate::Cnot(a, f.qubit) };
    if let Some(f) = &g.flag {
        c.push(if z_type { Gate::PrepX(f.qubit) } else { Gate::PrepZ(f.qubit) });
    }
    for (j, &q) in g.order.iter().enumerate() {
        if let Some(f) = &g.flag {
            if j == f.first {
                c.push(flag_cnot(f));
            }
            if j == f.second {
                c.push(flag_cnot(f));
            }
        }
        c.push(if z_type { Gate::Cnot(q, a) } else { Gate::Cnot(a, q) });
    }
    c.push(if z_type { Gate::MeasZ(a, g.cbit) } else { Gate::MeasX(a, g.cbit) });
    if let Some(f) = &g.flag {
        c.push(if z_type { Gate::MeasX(f.qubit, f.cbit) } else { Gate::MeasZ(f.qubit, f.cbit) });
    }
    c.validate()?;
    Ok(c)
}

/// Data error left by an ancilla fault between two data CNOTs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HookError {
    /// Number of data CNOTs before the fault.
    pub cut: usize,
    pub kind: PauliKind,
    /// Canonical representative modulo the reduction group.
    pub error: BitVector,
    pub flagged_visible: bool,
}

/// One hook per cut `1 ≤ j < w`: the measured operator's type on the support
/// positions after `j`.
pub fn hook_errors(g: &MeasurementGadget, group: &ReductionGroup) -> Vec<HookError> {
    let n = group.n();
    let w = g.weight();
    (1..w)
        .map(|j| {
            let raw = BitVector::from_indices(n, &g.order[j..]);
            HookError {
                cut: j,
                kind: g.kind(),
                error: group.canonical(&raw),
                flagged_visible: g.flag.as_ref().is_some_and(|f| f.first < j && j <= f.second),
            }
        })
        .collect()
}

pub fn dangerous_hooks(g: &MeasurementGadget, group: &ReductionGroup) -> Vec<HookError> {
    hook_errors(g, group).into_iter().filter(|h| group.reduced_weight(&h.error) >= 2).collect()
}

/// False iff every dangerous hook is equivalent to an error that a later layer
/// handles anyway.
pub fn needs_flag(g: &MeasurementGadget, group: &ReductionGroup, downstream: Option<&[BitVector]>) -> bool {
    dangerous_hooks(g, group)
        .iter()
        .any(|h| !downstream.is_some_and(|d| d.iter().any(|e| group.equivalent(e, &h.error))))
}

/// CNOT order with the fewest dangerous hooks, lexicographically first among
/// ties. Exhaustive, so limited to weight 8.
pub fn search_order(g: &MeasurementGadget, group: &ReductionGroup) -> Vec<usize> {
    let mut base = g.order.clone();
    base.sort_unstable();
    if base.len() > 8 {
        return g.order.clone();
    }
    let mut best = (usize::MAX, base.clone());
    let mut perm = base;
    loop {
        let trial = MeasurementGadget { order: perm.clone(), ..g.clone() };
        let k = dangerous_hooks(&trial, group).len();
        if k < best.0 {
            best = (k, perm.clone());
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best.1
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// One correction per flagged gadget with dangerous hooks. The class is the
/// gadget's visible hooks plus the zero error (flag raised with no data error).
/// Hooks carry the measured operator's type, so `group` and `generators` are
/// those of that type and its detecting type.
pub fn synth_hook_corrections(
    gadgets: &[MeasurementGadget],
    group: &ReductionGroup,
    generators: &BitMatrix,
    deadline: Option<Instant>,
) -> Result<Vec<(usize, CorrectionBranch)>> {
    let mut out = Vec::new();
    for (i, g) in gadgets.iter().enumerate() {
        if g.flag.is_none() || dangerous_hooks(g, group).is_empty() {
            continue;
        }
        let none = BitVector::zeros(0);
        let members = hook_errors(g, group)
            .into_iter()
            .filter(|h| h.flagged_visible)
            .map(|h| h.error)
            .chain([BitVector::zeros(group.n())])
            .map(|error| Member { context: none.clone(), error });
        let cls = ErrorClass::new(g.kind(), members, group);
        out.push((i, synth_correction(&cls, generators, group, deadline)?));
    }
    Ok(out)
}
