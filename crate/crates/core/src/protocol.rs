//! Full deterministic preparation protocol: encoder, verification layers with
//! flags, conditional corrections, metrics, global search, and file format.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Frame, Gate};
use crate::code::{CodeFile, CssCode, PauliKind, ReductionGroup, ReductionMode};
use crate::correct::{synth_correction, verify_branch, CorrectionBranch, ErrorClass, Member};
use crate::f2::{BitMatrix, BitVector};
use crate::flags::{dangerous_hooks, measurement_circuit, needs_flag, search_order, MeasurementGadget};
use crate::prep::{collect_dangerous, dangerous_errors, greedy_prep, greedy_prep_with, synth_prep, tuned_prep};
use crate::sim::{check_program, single_fault_runs, Evaluator, Program};
use crate::verify::{enumerate_minimal_verifications, synth_verification, UnsatWitness, VerificationLayer};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Search all minimal verifications and optional flags.
    pub global: bool,
    /// Wall-clock budget for the global search, in milliseconds.
    pub budget_ms: Option<u64>,
    pub reduction: ReductionMode,
    /// Allow Z logicals among the Z-type measurements.
    pub with_logicals: bool,
    /// Stop after a flag-triggered correction.
    pub early_exit: bool,
    /// Reorder gadget CNOTs to minimise dangerous hooks.
    pub hook_order_search: bool,
    pub encoder: Encoder,
    /// Cap on enumerated minimal verifications per layer.
    pub enumeration_limit: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            global: false,
            budget_ms: None,
            reduction: ReductionMode::State,
            with_logicals: true,
            early_exit: true,
            hook_order_search: false,
            encoder: Encoder::Best,
            enumeration_limit: 64,
        }
    }
}

/// Encoding circuit used before verification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    /// `prep::synth_prep`.
    Rref,
    /// `prep::tuned_prep`.
    Tuned,
    /// `prep::greedy_prep`.
    Greedy,
    /// Assembles with `Tuned` and `Greedy` and keeps the cheaper protocol.
    #[default]
    Best,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchSource {
    /// Nonzero verification syndrome with no flag raised.
    Syndrome(BitVector),
    /// Index of the flag among the layer's flagged gadgets.
    Flag(usize),
}

impl fmt::Display for BranchSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchSource::Syndrome(b) => write!(f, "syndrome {}", b.to_binary()),
            BranchSource::Flag(j) => write!(f, "flag {j}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub source: BranchSource,
    /// Required cbit values.
    pub trigger: Vec<(usize, bool)>,
    /// Kind of error the recovery removes.
    pub error_kind: PauliKind,
    /// Cbits read before the branch measurements; first part of the key.
    pub context: Vec<usize>,
    pub gadgets: Vec<MeasurementGadget>,
    pub recovery: BTreeMap<BitVector, BitVector>,
    pub u: usize,
    pub v: usize,
    pub witnesses: Vec<UnsatWitness>,
    pub exit: bool,
    /// Errors (with their context bits) the branch was synthesised for.
    pub class: ErrorClass,
}

impl Branch {
    pub fn correction(&self) -> CorrectionBranch {
        CorrectionBranch {
            error_kind: self.error_kind,
            measurements: self.gadgets.iter().map(|g| g.measurement.support.clone()).collect(),
            recovery: self.recovery.clone(),
            u: self.u,
            v: self.v,
            witnesses: self.witnesses.clone(),
        }
    }

    /// Replays every class member through the measurements and recovery.
    pub fn replay(&self, g: &ReductionGroup) -> bool {
        verify_branch(&self.correction(), &self.class, g)
    }

    pub fn key_bits(&self) -> Vec<usize> {
        self.context.iter().copied().chain(self.gadgets.iter().map(|g| g.cbit)).collect()
    }

    pub fn has_optimality_witnesses(&self) -> bool {
        self.u == 0
            || (self.witnesses.contains(&UnsatWitness { u: self.u - 1, v: None })
                && self.witnesses.contains(&UnsatWitness { u: self.u, v: Some(self.v - 1) }))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    /// Kind of the errors this layer detects.
    pub error_kind: PauliKind,
    pub gadgets: Vec<MeasurementGadget>,
    pub u: usize,
    pub v: usize,
    pub witnesses: Vec<UnsatWitness>,
    pub branches: Vec<Branch>,
}

impl Layer {
    pub fn flag_bits(&self) -> Vec<usize> {
        self.gadgets.iter().filter_map(|g| g.flag.as_ref().map(|f| f.cbit)).collect()
    }

    pub fn syndrome_bits(&self) -> Vec<usize> {
        self.gadgets.iter().map(|g| g.cbit).collect()
    }

    pub fn has_optimality_witnesses(&self) -> bool {
        self.u == 0
            || (self.witnesses.contains(&UnsatWitness { u: self.u - 1, v: None })
                && self.witnesses.contains(&UnsatWitness { u: self.u, v: Some(self.v - 1) }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetFtProtocol {
    pub code: CssCode,
    pub options: SynthOptions,
    pub prep: Circuit,
    pub layers: Vec<Layer>,
    pub width: usize,
    pub cbits: usize,
    /// Global search stopped at its budget.
    pub truncated: bool,
}

/// Verification and correction counts of one layer. Correction lists hold one
/// entry per nonzero syndrome (ordered as bit strings, first gadget leftmost)
/// and one per flag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub a_m: usize,
    pub a_f: usize,
    pub w_m: usize,
    pub w_f: usize,
    pub corr_a_m: Vec<usize>,
    pub corr_a_f: Vec<usize>,
    pub corr_w_m: Vec<usize>,
    pub corr_w_f: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub layers: Vec<LayerMetrics>,
    pub sum_anc: usize,
    pub sum_cnot: usize,
    pub mean_anc: f64,
    pub mean_cnot: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "code,n,k,d,\
l1_a_m,l1_a_f,l1_w_m,l1_w_f,l1_corr_a_m,l1_corr_a_f,l1_corr_w_m,l1_corr_w_f,\
l2_a_m,l2_a_f,l2_w_m,l2_w_f,l2_corr_a_m,l2_corr_a_f,l2_corr_w_m,l2_corr_w_f,\
sum_anc,sum_cnot,mean_anc,mean_cnot";

    /// Layer columns only; zero flag counts and empty lists are left blank.
    pub fn layer_fields(&self) -> Vec<String> {
        let list = |v: &[usize]| {
            if v.is_empty() {
                String::new()
            } else {
                format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
            }
        };
        let blank0 = |x: usize| if x == 0 { String::new() } else { x.to_string() };
        let mut out = Vec::new();
        for i in 0..2 {
            match self.layers.get(i) {
                Some(l) => out.extend([
                    l.a_m.to_string(),
                    blank0(l.a_f),
                    l.w_m.to_string(),
                    blank0(l.w_f),
                    list(&l.corr_a_m),
                    list(&l.corr_a_f),
                    list(&l.corr_w_m),
                    list(&l.corr_w_f),
                ]),
                None => out.extend(std::iter::repeat_n(String::new(), 8)),
            }
        }
        out
    }

    pub fn csv_row(&self, code: &CssCode) -> String {
        let mut f = vec![code.name.clone(), code.n.to_string(), code.k.to_string(), code.d.to_string()];
        f.extend(self.layer_fields());
        f.extend([self.sum_anc.to_string(), self.sum_cnot.to_string(), fmt_mean(self.mean_anc), fmt_mean(self.mean_cnot)]);
        f.into_iter().map(|s| if s.contains(',') { format!("\"{s}\"") } else { s }).collect::<Vec<_>>().join(",")
    }
}

fn fmt_mean(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.into()
    }
}

/// Ancillas (preps of non-data qubits) and CNOTs in a fragment, split into
/// qubits that touch data and those that do not (flags).
fn fragment_counts(gates: &[Gate], n: usize) -> (usize, usize, usize, usize) {
    let mut touches = std::collections::BTreeSet::new();
    for g in gates {
        if let Gate::Cnot(a, b) = *g {
            if a < n {
                touches.insert(b);
            }
            if b < n {
                touches.insert(a);
            }
        }
    }
    let (mut a_m, mut a_f, mut w_m, mut w_f) = (0, 0, 0, 0);
    for g in gates {
        match *g {
            Gate::PrepZ(q) | Gate::PrepX(q) if q >= n => {
                if touches.contains(&q) {
                    a_m += 1
                } else {
                    a_f += 1
                }
            }
            Gate::Cnot(a, b) => {
                if a < n || b < n {
                    w_m += 1
                } else {
                    w_f += 1
                }
            }
            _ => {}
        }
    }
    (a_m, a_f, w_m, w_f)
}

fn gadget_gates(gadgets: &[MeasurementGadget], width: usize, cbits: usize) -> Result<Vec<Gate>> {
    let mut out = Vec::new();
    for g in gadgets {
        out.extend(measurement_circuit(g, width, cbits)?.gates);
    }
    Ok(out)
}

impl DetFtProtocol {
    /// Counts read from the emitted circuit fragments.
    pub fn metrics(&self) -> Result<MetricsRow> {
        let n = self.code.n;
        let mut row = MetricsRow::default();
        let mut entries_a = Vec::new();
        let mut entries_w = Vec::new();
        for layer in &self.layers {
            let (a_m, a_f, w_m, w_f) = fragment_counts(&gadget_gates(&layer.gadgets, self.width, self.cbits)?, n);
            let mut lm = LayerMetrics { a_m, a_f, w_m, w_f, ..Default::default() };
            let branch_cost = |src: &BranchSource| -> Result<(usize, usize)> {
                match layer.branches.iter().find(|b| &b.source == src) {
                    Some(b) => {
                        let (a, af, w, wf) = fragment_counts(&gadget_gates(&b.gadgets, self.width, self.cbits)?, n);
                        Ok((a + af, w + wf))
                    }
                    None => Ok((0, 0)),
                }
            };
            let u = layer.gadgets.len();
            let mut syndromes: Vec<BitVector> = (1..1u64 << u).map(|x| BitVector::from_u64(u, x)).collect();
            syndromes.sort();
            for b in syndromes {
                let (a, w) = branch_cost(&BranchSource::Syndrome(b))?;
                lm.corr_a_m.push(a);
                lm.corr_w_m.push(w);
            }
            for j in 0..layer.flag_bits().len() {
                let (a, w) = branch_cost(&BranchSource::Flag(j))?;
                lm.corr_a_f.push(a);
                lm.corr_w_f.push(w);
            }
            row.sum_anc += a_m + a_f;
            row.sum_cnot += w_m + w_f;
            entries_a.extend(lm.corr_a_m.iter().chain(&lm.corr_a_f).copied());
            entries_w.extend(lm.corr_w_m.iter().chain(&lm.corr_w_f).copied());
            row.layers.push(lm);
        }
        let mean = |v: &[usize]| if v.is_empty() { 0.0 } else { v.iter().sum::<usize>() as f64 / v.len() as f64 };
        row.mean_anc = mean(&entries_a);
        row.mean_cnot = mean(&entries_w);
        Ok(row)
    }

    pub fn program(&self) -> Result<Program> {
        Program::compile(self)
    }

    /// Full circuit listing, one comment line per block.
    pub fn circuit_text(&self) -> Result<String> {
        Ok(self.program()?.to_text())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProtocolFile::from_protocol(self)?)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: ProtocolFile = serde_json::from_str(s)?;
        f.into_protocol()
    }

    /// Metrics stored in a protocol file, for comparison with recomputed ones.
    pub fn stored_metrics(s: &str) -> Result<MetricsRow> {
        let f: ProtocolFile = serde_json::from_str(s)?;
        Ok(f.metrics)
    }

    /// Sum of verification ancillas and CNOTs, then mean correction CNOTs and ancillas.
    pub fn objective(&self) -> Result<(usize, usize, f64, f64)> {
        let m = self.metrics()?;
        Ok((m.sum_anc, m.sum_cnot, m.mean_cnot, m.mean_anc))
    }
}

#[derive(Serialize, Deserialize)]
struct GadgetFile {
    kind: PauliKind,
    support: BitVector,
    order: Vec<usize>,
    flagged: bool,
    ancilla: usize,
    cbit: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    flag: Option<crate::flags::Flag>,
}

impl From<&MeasurementGadget> for GadgetFile {
    fn from(g: &MeasurementGadget) -> Self {
        GadgetFile {
            kind: g.measurement.kind,
            support: g.measurement.support.clone(),
            order: g.order.clone(),
            flagged: g.measurement.flagged,
            ancilla: g.ancilla,
            cbit: g.cbit,
            flag: g.flag.clone(),
        }
    }
}

impl GadgetFile {
    fn into_gadget(self) -> Result<MeasurementGadget> {
        let g = MeasurementGadget {
            measurement: crate::verify::VerificationMeasurement { kind: self.kind, support: self.support, flagged: self.flagged },
            order: self.order,
            ancilla: self.ancilla,
            cbit: self.cbit,
            flag: self.flag,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
struct TriggerFile {
    mask: BitVector,
    value: BitVector,
}

#[derive(Serialize, Deserialize)]
struct BranchFile {
    source: BranchSource,
    trigger: TriggerFile,
    error_kind: PauliKind,
    context: Vec<usize>,
    measurements: Vec<GadgetFile>,
    recovery: BTreeMap<BitVector, BitVector>,
    u: usize,
    v: usize,
    witnesses: Vec<UnsatWitness>,
    exit: bool,
    members: Vec<Member>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    error_kind: PauliKind,
    verification: Vec<GadgetFile>,
    u: usize,
    v: usize,
    witnesses: Vec<UnsatWitness>,
    branches: Vec<BranchFile>,
}

#[derive(Serialize, Deserialize)]
struct ProtocolFile {
    code: CodeFile,
    options: SynthOptions,
    width: usize,
    cbits: usize,
    prep: Vec<String>,
    layers: Vec<LayerFile>,
    early_exit: bool,
    truncated: bool,
    metrics: MetricsRow,
}

impl ProtocolFile {
    fn from_protocol(p: &DetFtProtocol) -> Result<Self> {
        let layers = p
            .layers
            .iter()
            .map(|l| LayerFile {
                error_kind: l.error_kind,
                verification: l.gadgets.iter().map(GadgetFile::from).collect(),
                u: l.u,
                v: l.v,
                witnesses: l.witnesses.clone(),
                branches: l
                    .branches
                    .iter()
                    .map(|b| {
                        let mut mask = BitVector::zeros(p.cbits);
                        let mut value = BitVector::zeros(p.cbits);
                        for &(i, v) in &b.trigger {
                            mask.set(i, true);
                            value.set(i, v);
                        }
                        BranchFile {
                            source: b.source.clone(),
                            trigger: TriggerFile { mask, value },
                            error_kind: b.error_kind,
                            context: b.context.clone(),
                            measurements: b.gadgets.iter().map(GadgetFile::from).collect(),
                            recovery: b.recovery.clone(),
                            u: b.u,
                            v: b.v,
                            witnesses: b.witnesses.clone(),
                            exit: b.exit,
                            members: b.class.members.clone(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(ProtocolFile {
            code: p.code.to_file(),
            options: p.options,
            width: p.width,
            cbits: p.cbits,
            prep: p.prep.to_text().lines().map(String::from).collect(),
            layers,
            early_exit: p.options.early_exit,
            truncated: p.truncated,
            metrics: p.metrics()?,
        })
    }

    fn into_protocol(self) -> Result<DetFtProtocol> {
        let code = self.code.into_code()?;
        let prep = Circuit::from_text(&self.prep.join("\n"))?;
        if prep.width != code.n {
            return Err(Error::LengthMismatch(prep.width, code.n));
        }
        let cbits = self.cbits;
        let mut layers = Vec::new();
        for l in self.layers {
            let gadgets = l.verification.into_iter().map(GadgetFile::into_gadget).collect::<Result<Vec<_>>>()?;
            let mut branches = Vec::new();
            for b in l.branches {
                if b.trigger.mask.len() != cbits || b.trigger.value.len() != cbits {
                    return Err(Error::LengthMismatch(b.trigger.mask.len(), cbits));
                }
                let trigger = b.trigger.mask.ones().map(|i| (i, b.trigger.value.get(i))).collect();
                branches.push(Branch {
                    source: b.source,
                    trigger,
                    error_kind: b.error_kind,
                    context: b.context,
                    gadgets: b.measurements.into_iter().map(GadgetFile::into_gadget).collect::<Result<Vec<_>>>()?,
                    recovery: b.recovery,
                    u: b.u,
                    v: b.v,
                    witnesses: b.witnesses,
                    exit: b.exit,
                    class: ErrorClass { kind: b.error_kind, members: b.members },
                });
            }
            layers.push(Layer { error_kind: l.error_kind, gadgets, u: l.u, v: l.v, witnesses: l.witnesses, branches });
        }
        let mut options = self.options;
        options.early_exit = self.early_exit;
        let p = DetFtProtocol { code, options, prep, layers, width: self.width, cbits, truncated: self.truncated };
        p.program()?;
        Ok(p)
    }
}

/// Residual data error of one single-fault run that reached the end.
struct Outcome {
    x: BitVector,
    z: BitVector,
    m: BitVector,
}

impl Outcome {
    fn part(&self, kind: PauliKind) -> &BitVector {
        match kind {
            PauliKind::X => &self.x,
            PauliKind::Z => &self.z,
        }
    }
}

#[derive(Clone)]
struct Builder<'a> {
    code: &'a CssCode,
    opts: SynthOptions,
    group_x: ReductionGroup,
    group_z: ReductionGroup,
    proto: DetFtProtocol,
}

impl<'a> Builder<'a> {
    fn new(code: &'a CssCode, opts: SynthOptions, prep: Circuit) -> Result<Self> {
        let mode = opts.reduction;
        let proto = DetFtProtocol {
            code: code.clone(),
            options: opts,
            prep,
            layers: Vec::new(),
            width: code.n,
            cbits: 0,
            truncated: false,
        };
        Ok(Builder {
            code,
            opts,
            group_x: code.reduction_group(PauliKind::X, mode)?,
            group_z: code.reduction_group(PauliKind::Z, mode)?,
            proto,
        })
    }

    fn group(&self, kind: PauliKind) -> &ReductionGroup {
        match kind {
            PauliKind::X => &self.group_x,
            PauliKind::Z => &self.group_z,
        }
    }

    /// Measurable operators that detect errors of `kind`.
    fn detecting(&self, kind: PauliKind) -> BitMatrix {
        self.code.measurement_generators(kind.other(), self.opts.with_logicals)
    }

    fn qubit(&mut self) -> usize {
        self.proto.width += 1;
        self.proto.width - 1
    }

    fn cbit(&mut self) -> usize {
        self.proto.cbits += 1;
        self.proto.cbits - 1
    }

    fn outcomes(&self) -> Result<Vec<Outcome>> {
        let prog = Program::compile(&self.proto)?;
        let n = self.code.n;
        Ok(single_fault_runs(&prog)
            .into_iter()
            .filter(|(_, _, t)| t.exited.is_none())
            .map(|(_, fr, _): (_, Frame, _)| Outcome { x: fr.x.slice(0, n), z: fr.z.slice(0, n), m: fr.m })
            .collect())
    }

    fn danger(&self, outs: &[Outcome], kind: PauliKind) -> Vec<BitVector> {
        let items = outs.iter().map(|o| (o.part(kind).clone(), None));
        collect_dangerous(self.group(kind), items).into_iter().map(|e| e.error).collect()
    }

    /// Kind of the next layer and its danger set, plus the other kind's set.
    fn next_layer(&self) -> Result<Option<(PauliKind, Vec<BitVector>, Vec<BitVector>)>> {
        let outs = self.outcomes()?;
        let dx = self.danger(&outs, PauliKind::X);
        let dz = self.danger(&outs, PauliKind::Z);
        let done = |k: PauliKind| self.proto.layers.iter().any(|l| l.error_kind == k);
        Ok(if !dx.is_empty() && !done(PauliKind::X) {
            Some((PauliKind::X, dx, dz))
        } else if !dz.is_empty() && !done(PauliKind::Z) {
            Some((PauliKind::Z, dz, dx))
        } else {
            None
        })
    }

    /// Gadgets for a verification layer, with the indices of gadgets whose
    /// flag is optional (dangerous hooks that a later layer handles anyway).
    fn gadgets(&mut self, kind: PauliKind, ver: &VerificationLayer, downstream: Option<&[BitVector]>) -> (Vec<MeasurementGadget>, Vec<usize>) {
        let hook_group = self.group(kind.other()).clone();
        let mut out = Vec::new();
        let mut optional = Vec::new();
        for s in &ver.supports {
            let (a, c) = (self.qubit(), self.cbit());
            let mut g = MeasurementGadget::plain(kind.other(), s.clone(), a, c);
            if self.opts.hook_order_search {
                g.order = search_order(&g, &hook_group);
            }
            if needs_flag(&g, &hook_group, downstream) {
                let (fq, fc) = (self.qubit(), self.cbit());
                g = g.flagged(fq, fc);
            } else if !dangerous_hooks(&g, &hook_group).is_empty() {
                optional.push(out.len());
            }
            out.push(g);
        }
        (out, optional)
    }

    fn add_flags(&mut self, gadgets: &mut [MeasurementGadget], which: &[usize]) {
        for &i in which {
            let (fq, fc) = (self.qubit(), self.cbit());
            gadgets[i] = gadgets[i].clone().flagged(fq, fc);
        }
    }

    /// Appends a layer and synthesises its branches from the single-fault runs.
    fn add_layer(&mut self, kind: PauliKind, ver: &VerificationLayer, gadgets: Vec<MeasurementGadget>, deadline: Option<Instant>) -> Result<()> {
        self.proto.layers.push(Layer {
            error_kind: kind,
            gadgets,
            u: ver.u,
            v: ver.v,
            witnesses: ver.witnesses.clone(),
            branches: Vec::new(),
        });
        let outs = self.outcomes()?;
        let layer = self.proto.layers.last().unwrap();
        let bbits = layer.syndrome_bits();
        let fbits = layer.flag_bits();
        let mut by_b: BTreeMap<BitVector, Vec<Member>> = BTreeMap::new();
        let mut by_flag: BTreeMap<usize, Vec<Member>> = BTreeMap::new();
        for o in &outs {
            let b = BitVector::from_bools(&bbits.iter().map(|&i| o.m.get(i)).collect::<Vec<_>>());
            if let Some(j) = fbits.iter().position(|&i| o.m.get(i)) {
                by_flag.entry(j).or_default().push(Member { context: b, error: o.part(kind.other()).clone() });
            } else if !b.is_zero() {
                by_b.entry(b.clone()).or_default().push(Member { context: b, error: o.part(kind).clone() });
            }
        }
        let mut branches = Vec::new();
        for (b, members) in by_b {
            let mut trigger: Vec<(usize, bool)> = bbits.iter().enumerate().map(|(i, &c)| (c, b.get(i))).collect();
            trigger.extend(fbits.iter().map(|&c| (c, false)));
            branches.push(self.branch(BranchSource::Syndrome(b), kind, members, trigger, bbits.clone(), false, deadline)?);
        }
        for (j, members) in by_flag {
            let mut trigger: Vec<(usize, bool)> = fbits[..j].iter().map(|&c| (c, false)).collect();
            trigger.push((fbits[j], true));
            let exit = self.opts.early_exit;
            branches.push(self.branch(BranchSource::Flag(j), kind.other(), members, trigger, bbits.clone(), exit, deadline)?);
        }
        self.proto.layers.last_mut().unwrap().branches = branches;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn branch(
        &mut self,
        source: BranchSource,
        kind: PauliKind,
        members: Vec<Member>,
        trigger: Vec<(usize, bool)>,
        context: Vec<usize>,
        exit: bool,
        deadline: Option<Instant>,
    ) -> Result<Branch> {
        let group = self.group(kind).clone();
        let cls = ErrorClass::new(kind, members, &group);
        let corr = synth_correction(&cls, &self.detecting(kind), &group, deadline)?;
        let gadgets = corr
            .measurements
            .iter()
            .map(|s| {
                let (a, c) = (self.qubit(), self.cbit());
                MeasurementGadget::plain(kind.other(), s.clone(), a, c)
            })
            .collect();
        Ok(Branch {
            source,
            trigger,
            error_kind: kind,
            context,
            gadgets,
            recovery: corr.recovery,
            u: corr.u,
            v: corr.v,
            witnesses: corr.witnesses,
            exit,
            class: cls,
        })
    }

    fn finish(self) -> Result<DetFtProtocol> {
        let prog = Program::compile(&self.proto)?;
        let eval = Evaluator::new(self.code, self.opts.reduction)?;
        let bad = check_program(&prog, &eval);
        if !bad.is_empty() {
            return Err(Error::NotFaultTolerant(bad.len()));
        }
        Ok(self.proto)
    }
}

fn check_code(code: &CssCode) -> Result<()> {
    if code.d >= 5 {
        return Err(Error::Unsupported(format!("distance {} codes are out of scope", code.d)));
    }
    Ok(())
}

/// Default assembly: lex-first optimal verification per layer and the flag
/// policy; the result passes the exhaustive single-fault check.
pub fn assemble(code: &CssCode, opts: SynthOptions) -> Result<DetFtProtocol> {
    if opts.global {
        return global_optimize(code, opts);
    }
    check_code(code)?;
    let mut best: Option<(DetFtProtocol, (Objective, String))> = None;
    let mut first_err = None;
    for prep in encoders(code, opts)? {
        match assemble_with_prep(code, opts, prep) {
            Ok(p) => {
                let key = (p.objective()?, p.to_json_string()?);
                if best.as_ref().is_none_or(|b| better(&key, &b.1)) {
                    best = Some((p, key));
                }
            }
            Err(e @ (Error::Infeasible(_) | Error::NotFaultTolerant(_))) => {
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match (best, first_err) {
        (Some((p, _)), _) => Ok(p),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::Infeasible("no encoder candidate".into())),
    }
}

/// Randomised greedy encoders drawn for [`Encoder::Best`].
const GREEDY_SAMPLES: usize = 128;
/// Candidates assembled in full for [`Encoder::Best`].
const ENCODER_SHORTLIST: usize = 6;

/// Encoders to assemble. For [`Encoder::Best`]: the greedy encoder and seeded
/// randomised variants, ranked by the first verification layer they need
/// (u, v), whether Z errors also need a layer, and the number of dangerous
/// errors. The tuned encoder joins only if it ranks strictly first on the
/// layer shape.
pub fn encoders(code: &CssCode, opts: SynthOptions) -> Result<Vec<Circuit>> {
    let mode = opts.reduction;
    let tuned = || tuned_prep(code, &code.measurement_generators(PauliKind::Z, opts.with_logicals), mode);
    let greedy = || greedy_prep(code).ok_or_else(|| Error::Infeasible("greedy encoder stalled".into()));
    match opts.encoder {
        Encoder::Rref => return Ok(vec![synth_prep(code)]),
        Encoder::Tuned => return Ok(vec![tuned()?]),
        Encoder::Greedy => return Ok(vec![greedy()?]),
        Encoder::Best => {}
    }
    let mut pool = vec![tuned()?];
    pool.extend(greedy_prep(code));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..GREEDY_SAMPLES {
        pool.extend(greedy_prep_with(code, |k| rng.random_range(0..k)));
    }
    let mut seen = std::collections::HashSet::new();
    pool.retain(|c| seen.insert(c.gates.clone()));
    let mut ranked = Vec::with_capacity(pool.len());
    for (i, c) in pool.into_iter().enumerate() {
        let dx = dangerous_errors(&c, code, PauliKind::X, mode)?.errors();
        let dz = dangerous_errors(&c, code, PauliKind::Z, mode)?.errors();
        let (kind, first, second) = if dx.is_empty() { (PauliKind::Z, &dz, &dx) } else { (PauliKind::X, &dx, &dz) };
        let ver = synth_verification(kind, first, &code.measurement_generators(kind.other(), opts.with_logicals), None)?;
        ranked.push(((ver.u, ver.v, !second.is_empty(), dx.len() + dz.len(), i), c));
    }
    // ranked[0] is the tuned encoder
    if ranked.len() > 1 {
        let shape = |k: &(usize, usize, bool, usize, usize)| (k.0, k.1, k.2);
        let best_greedy = ranked[1..].iter().map(|r| shape(&r.0)).min().unwrap();
        if shape(&ranked[0].0) >= best_greedy {
            ranked.remove(0);
        }
    }
    ranked.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(ranked.into_iter().take(ENCODER_SHORTLIST).map(|(_, c)| c).collect())
}

/// [`assemble`] around a caller-supplied encoder, which must prepare the
/// code's logical zero from fresh qubits.
pub fn assemble_with_prep(code: &CssCode, opts: SynthOptions, prep: Circuit) -> Result<DetFtProtocol> {
    check_code(code)?;
    if !crate::prep::verify_prep(&prep, code)? {
        return Err(Error::InvalidCircuit("encoder does not prepare the logical zero state".into()));
    }
    let mut b = Builder::new(code, opts, prep)?;
    while let Some((kind, errors, other)) = b.next_layer()? {
        let ver = synth_verification(kind, &errors, &b.detecting(kind), None)?;
        let downstream = downstream_for(&b, kind, &other);
        let (gadgets, _) = b.gadgets(kind, &ver, downstream.as_deref());
        b.add_layer(kind, &ver, gadgets, None)?;
    }
    b.finish()
}

/// Errors of the hook type that a later layer will verify anyway.
fn downstream_for(b: &Builder, kind: PauliKind, other: &[BitVector]) -> Option<Vec<BitVector>> {
    let later = !other.is_empty() && !b.proto.layers.iter().any(|l| l.error_kind == kind.other());
    later.then(|| other.to_vec())
}

type Objective = (usize, usize, f64, f64);

fn better(a: &(Objective, String), b: &(Objective, String)) -> bool {
    let (x, y) = (&a.0, &b.0);
    x.0.cmp(&y.0)
        .then(x.1.cmp(&y.1))
        .then(x.2.total_cmp(&y.2))
        .then(x.3.total_cmp(&y.3))
        .then_with(|| a.1.cmp(&b.1))
        .is_lt()
}

/// Assembles every combination of minimal verifications (per layer) and
/// optional flags, keeping the best under (Σ verification ancillas,
/// Σ verification CNOTs, mean correction CNOTs, mean correction ancillas).
/// Never worse than [`assemble`]; on budget expiry the best so far is returned
/// with `truncated` set.
pub fn global_optimize(code: &CssCode, opts: SynthOptions) -> Result<DetFtProtocol> {
    check_code(code)?;
    let base_opts = SynthOptions { global: false, ..opts };
    let start = Instant::now();
    let deadline = opts.budget_ms.map(|ms| start + Duration::from_millis(ms));
    let mut best = assemble(code, base_opts)?;
    best.options.global = true;
    let mut best_key = (best.objective()?, best.to_json_string()?);
    let mut truncated = deadline.is_some_and(|d| Instant::now() >= d);
    for prep in encoders(code, base_opts)? {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            truncated = true;
            break;
        }
        let b = Builder::new(code, SynthOptions { global: true, ..opts }, prep)?;
        explore(b, deadline, &mut best, &mut best_key, &mut truncated)?;
    }
    best.truncated = truncated;
    Ok(best)
}

fn explore(
    b: Builder,
    deadline: Option<Instant>,
    best: &mut DetFtProtocol,
    best_key: &mut (Objective, String),
    truncated: &mut bool,
) -> Result<()> {
    if deadline.is_some_and(|d| Instant::now() >= d) {
        *truncated = true;
        return Ok(());
    }
    let Some((kind, errors, other)) = b.next_layer()? else {
        if let Ok(p) = b.finish() {
            let key = (p.objective()?, p.to_json_string()?);
            if better(&key, best_key) {
                *best = p;
                *best_key = key;
            }
        }
        return Ok(());
    };
    let gens = b.detecting(kind);
    let opt = match synth_verification(kind, &errors, &gens, deadline) {
        Ok(o) => o,
        Err(Error::Timeout) => {
            *truncated = true;
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    let (all, trunc) = match enumerate_minimal_verifications(kind, &errors, &gens, &opt, b.opts.enumeration_limit, deadline) {
        Ok(r) => r,
        Err(Error::Timeout) => {
            *truncated = true;
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    *truncated |= trunc;
    let downstream = downstream_for(&b, kind, &other);
    for ver in all {
        let mut probe = b.clone();
        let (gadgets, optional) = probe.gadgets(kind, &ver, downstream.as_deref());
        let k = optional.len().min(4);
        for mask in 0..1usize << k {
            let mut nb = probe.clone();
            let mut gs = gadgets.clone();
            let chosen: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| optional[i]).collect();
            nb.add_flags(&mut gs, &chosen);
            match nb.add_layer(kind, &ver, gs, deadline) {
                Ok(()) => explore(nb, deadline, best, best_key, truncated)?,
                Err(Error::Timeout) => *truncated = true,
                Err(Error::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
            if *truncated && deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn fragment_counts_split_flags() {
        let g = MeasurementGadget::plain(PauliKind::Z, BitVector::from_indices(4, &[0, 1, 2, 3]), 4, 0).flagged(5, 1);
        let c = measurement_circuit(&g, 6, 2).unwrap();
        assert_eq!(fragment_counts(&c.gates, 4), (1, 1, 4, 2));
    }

    #[test]
    fn mean_format() {
        assert_eq!(fmt_mean(0.0), "0");
        assert_eq!(fmt_mean(1.5), "1.5");
        assert_eq!(fmt_mean(0.25), "0.25");
        assert_eq!(fmt_mean(3.0), "3");
    }

    #[test]
    fn product_state_needs_nothing() {
        let hz = BitMatrix::parse(3, &["11.", ".11"]).unwrap();
        let code = CssCode::new("rep", BitMatrix::empty(3), hz, None).unwrap();
        let p = assemble(&code, SynthOptions::default()).unwrap();
        assert!(p.layers.is_empty());
        let m = p.metrics().unwrap();
        assert_eq!((m.sum_anc, m.sum_cnot, m.mean_anc, m.mean_cnot), (0, 0, 0.0, 0.0));
    }

    #[test]
    fn steane_row() {
        let code = catalog::get("steane").unwrap();
        let p = assemble(&code, SynthOptions::default()).unwrap();
        let m = p.metrics().unwrap();
        assert_eq!(m.layers.len(), 1);
        let l = &m.layers[0];
        assert_eq!((l.a_m, l.a_f, l.w_m, l.w_f), (1, 0, 3, 0));
        assert_eq!((l.corr_a_m.clone(), l.corr_w_m.clone()), (vec![1], vec![3]));
        assert!(l.corr_a_f.is_empty());
        assert_eq!((m.sum_anc, m.sum_cnot), (1, 3));
    }

    #[test]
    fn json_round_trip() {
        let code = catalog::get("steane").unwrap();
        let p = assemble(&code, SynthOptions::default()).unwrap();
        let s = p.to_json_string().unwrap();
        let q = DetFtProtocol::from_json_str(&s).unwrap();
        assert_eq!(p, q);
        assert_eq!(DetFtProtocol::stored_metrics(&s).unwrap(), q.metrics().unwrap());
    }
}
