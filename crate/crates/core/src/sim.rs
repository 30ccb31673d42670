//! Pauli-frame execution of assembled protocols: single-fault enumeration,
//! circuit-level depolarizing Monte Carlo, and scaling fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::circuit::{gate_line, pauli_choices, ClassicalCondition, Frame, Gate};
use crate::code::{build_lookup_decoder, anticommutes_any, CssCode, LookupDecoder, PauliKind, ReductionGroup, ReductionMode};
use crate::f2::{BitMatrix, BitVector};
use crate::flags::measurement_circuit;
use crate::protocol::DetFtProtocol;
use crate::{Error, Result};

/// Error probability per location, with per-category switches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p: f64,
    pub one_qubit: bool,
    pub two_qubit: bool,
    pub measurement: bool,
    pub conditional: bool,
}

impl NoiseModel {
    pub fn uniform(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Unsupported(format!("error probability {p} outside [0, 1]")));
        }
        Ok(NoiseModel { p, one_qubit: true, two_qubit: true, measurement: true, conditional: true })
    }

    pub fn applies(&self, g: &Gate) -> bool {
        match g {
            Gate::PrepZ(_) | Gate::PrepX(_) => self.one_qubit,
            Gate::Cnot(..) => self.two_qubit,
            Gate::MeasZ(..) | Gate::MeasX(..) => self.measurement,
            Gate::CondPauli { .. } => self.conditional,
        }
    }
}

/// What goes wrong right after a gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultAction {
    /// (x, z) bit pair; bit 0 is the gate's first qubit.
    Pauli(u8, u8),
    Flip,
}

/// Supplies faults to the executor, one query per executed gate.
pub trait FaultSource {
    fn at(&mut self, loc: usize, g: &Gate) -> Option<FaultAction>;
}

pub struct NoFaults;

impl FaultSource for NoFaults {
    fn at(&mut self, _: usize, _: &Gate) -> Option<FaultAction> {
        None
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SingleFault {
    pub loc: usize,
    pub action: FaultAction,
}

impl FaultSource for SingleFault {
    fn at(&mut self, loc: usize, _: &Gate) -> Option<FaultAction> {
        (loc == self.loc).then_some(self.action)
    }
}

/// Depolarizing source with geometric skipping. The countdown carries over
/// between shots drawn from the same stream.
pub struct Depolarizing<'a, R: Rng> {
    noise: NoiseModel,
    rng: &'a mut R,
    countdown: u64,
    log_q: f64,
}

impl<'a, R: Rng> Depolarizing<'a, R> {
    pub fn new(noise: NoiseModel, rng: &'a mut R) -> Self {
        let log_q = (1.0 - noise.p).ln();
        let mut s = Depolarizing { noise, rng, countdown: 0, log_q };
        s.countdown = s.draw_gap();
        s
    }

    fn draw_gap(&mut self) -> u64 {
        if self.noise.p <= 0.0 {
            return u64::MAX;
        }
        if self.noise.p >= 1.0 {
            return 0;
        }
        let u: f64 = self.rng.random::<f64>();
        let gap = (1.0 - u).ln() / self.log_q;
        if gap >= u64::MAX as f64 {
            u64::MAX
        } else {
            gap as u64
        }
    }

    /// Consumes `k` fault-free locations if the countdown allows it.
    pub fn skip_clean(&mut self, k: u64) -> bool {
        if self.countdown >= k {
            self.countdown -= k;
            true
        } else {
            false
        }
    }
}

impl<R: Rng> FaultSource for Depolarizing<'_, R> {
    fn at(&mut self, _: usize, g: &Gate) -> Option<FaultAction> {
        if !self.noise.applies(g) {
            return None;
        }
        if self.countdown > 0 {
            self.countdown -= 1;
            return None;
        }
        self.countdown = self.draw_gap();
        if g.is_measurement() {
            return Some(FaultAction::Flip);
        }
        let choices = pauli_choices(g.qubits().1.is_some());
        let (x, z) = choices[self.rng.random_range(0..choices.len())];
        Some(FaultAction::Pauli(x, z))
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    /// Location id of the first gate.
    pub start: usize,
    pub gates: Vec<Gate>,
    pub trigger: Option<ClassicalCondition>,
    pub exit: bool,
    pub label: String,
}

/// Unconditional block followed by mutually exclusive conditional blocks.
#[derive(Clone, Debug)]
pub struct Stage {
    pub main: Block,
    pub branches: Vec<Block>,
}

/// Flat, executable form of a protocol.
#[derive(Clone, Debug)]
pub struct Program {
    pub n: usize,
    pub width: usize,
    pub cbits: usize,
    pub stages: Vec<Stage>,
}

/// Where a run ended and which branches fired.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunTrace {
    /// (stage, branch index) per triggered branch.
    pub branches: Vec<(usize, usize)>,
    pub exited: Option<usize>,
    /// Location ids of executed gates, when recording.
    pub executed: Vec<usize>,
}

impl Program {
    pub fn compile(p: &DetFtProtocol) -> Result<Program> {
        let (w, cb) = (p.width, p.cbits);
        let mut next = 0;
        let mut block = |gates: Vec<Gate>, trigger: Option<ClassicalCondition>, exit: bool, label: String| {
            let b = Block { start: next, gates, trigger, exit, label };
            next += b.gates.len();
            b
        };
        let mut stages = vec![Stage { main: block(p.prep.gates.clone(), None, false, "prep".into()), branches: vec![] }];
        for (li, layer) in p.layers.iter().enumerate() {
            let mut gates = Vec::new();
            for g in &layer.gadgets {
                gates.extend(measurement_circuit(g, w, cb)?.gates);
            }
            let main = block(gates, None, false, format!("layer {} verification", li + 1));
            let mut branches = Vec::new();
            for br in &layer.branches {
                let mut gates = Vec::new();
                for g in &br.gadgets {
                    gates.extend(measurement_circuit(g, w, cb)?.gates);
                }
                let bits = br.key_bits();
                for (key, c) in &br.recovery {
                    if key.len() != bits.len() {
                        return Err(Error::InvalidCircuit(format!("recovery key {key} does not match {} key bits", bits.len())));
                    }
                    let cond = condition(cb, bits.iter().copied().zip((0..key.len()).map(|i| key.get(i))))?;
                    for q in c.ones() {
                        gates.push(Gate::CondPauli { kind: br.error_kind, q, cond: cond.clone() });
                    }
                }
                let trig = condition(cb, br.trigger.iter().copied())?;
                branches.push(block(gates, Some(trig), br.exit, format!("layer {} {}", li + 1, br.source)));
            }
            stages.push(Stage { main, branches });
        }
        Ok(Program { n: p.code.n, width: w, cbits: cb, stages })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.stages.iter().flat_map(|s| std::iter::once(&s.main).chain(&s.branches))
    }

    /// Location ids and gates outside conditional blocks.
    pub fn unconditional(&self) -> impl Iterator<Item = (usize, &Gate)> {
        self.stages.iter().flat_map(|s| s.main.gates.iter().enumerate().map(move |(i, g)| (s.main.start + i, g)))
    }

    /// Executes one shot. With `record`, executed location ids are kept.
    pub fn run(&self, frame: &mut Frame, src: &mut impl FaultSource, record: bool) -> RunTrace {
        let mut trace = RunTrace::default();
        for (si, st) in self.stages.iter().enumerate() {
            exec(&st.main, frame, src, record.then_some(&mut trace.executed));
            if let Some(bi) = st.branches.iter().position(|b| b.trigger.as_ref().is_some_and(|t| t.holds(&frame.m))) {
                let b = &st.branches[bi];
                exec(b, frame, src, record.then_some(&mut trace.executed));
                trace.branches.push((si, bi));
                if b.exit {
                    trace.exited = Some(si);
                    return trace;
                }
            }
        }
        trace
    }

    /// Text listing with one comment line per block.
    pub fn to_text(&self) -> String {
        let mut s = format!("# qubits {} cbits {}\n", self.width, self.cbits);
        for b in self.blocks() {
            s.push_str(&format!("# {}", b.label));
            if let Some(t) = &b.trigger {
                s.push_str(&format!(" if {}={}", t.mask.to_binary(), t.value.to_binary()));
            }
            if b.exit {
                s.push_str(" then stop");
            }
            s.push('\n');
            for g in &b.gates {
                s.push_str(&gate_line(g));
                s.push('\n');
            }
        }
        s
    }
}

fn condition(cbits: usize, bits: impl Iterator<Item = (usize, bool)>) -> Result<ClassicalCondition> {
    let mut mask = BitVector::zeros(cbits);
    let mut value = BitVector::zeros(cbits);
    for (i, v) in bits {
        if i >= cbits {
            return Err(Error::InvalidCircuit(format!("condition on m{i} past {cbits} cbits")));
        }
        mask.set(i, true);
        value.set(i, v);
    }
    ClassicalCondition::new(mask, value)
}

#[inline]
fn exec(b: &Block, frame: &mut Frame, src: &mut impl FaultSource, mut rec: Option<&mut Vec<usize>>) {
    for (i, g) in b.gates.iter().enumerate() {
        if !frame.apply(g, true) {
            continue;
        }
        let loc = b.start + i;
        if let Some(r) = rec.as_deref_mut() {
            r.push(loc);
        }
        match src.at(loc, g) {
            None => {}
            Some(FaultAction::Flip) => {
                if let Some(m) = g.cbit() {
                    frame.m.flip(m);
                }
            }
            Some(FaultAction::Pauli(x, z)) => frame.inject(g, (x, z)),
        }
    }
}

/// Perfect final error correction and the logical-error test for |0>_L.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub n: usize,
    decoder_x: LookupDecoder,
    lz: BitMatrix,
    pub group_x: ReductionGroup,
    pub group_z: ReductionGroup,
}

impl Evaluator {
    pub fn new(code: &CssCode, mode: ReductionMode) -> Result<Self> {
        Ok(Evaluator {
            n: code.n,
            decoder_x: build_lookup_decoder(code, PauliKind::X),
            lz: code.lz.clone(),
            group_x: code.reduction_group(PauliKind::X, mode)?,
            group_z: code.reduction_group(PauliKind::Z, mode)?,
        })
    }

    /// Residual X after lookup decoding anticommutes with some Z logical.
    /// Residual Z acts trivially on |0>_L after decoding.
    pub fn logical_error(&self, x: &BitVector) -> bool {
        anticommutes_any(&self.decoder_x.correct(x), &self.lz)
    }
}

/// One noisy shot; true on a logical error.
pub fn run_shot<R: Rng>(prog: &Program, eval: &Evaluator, noise: NoiseModel, rng: &mut R) -> bool {
    let mut src = Depolarizing::new(noise, rng);
    let mut frame = Frame::new(prog.width, prog.cbits);
    shot(prog, eval, &mut src, &mut frame, u64::MAX)
}

fn shot<R: Rng>(prog: &Program, eval: &Evaluator, src: &mut Depolarizing<'_, R>, frame: &mut Frame, clean: u64) -> bool {
    if src.skip_clean(clean) {
        return false;
    }
    frame.reset();
    prog.run(frame, src, false);
    eval.logical_error(&frame.x.slice(0, eval.n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub p: f64,
    pub shots: u64,
    pub errors: u64,
    pub ler: f64,
    /// Half width of the 95% interval.
    pub ci: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// "normal" or "clopper-pearson".
    pub interval: String,
}

/// 95% interval: normal approximation, exact binomial below 20 errors.
pub fn confidence_interval(errors: u64, shots: u64) -> (f64, f64, &'static str) {
    if shots == 0 {
        return (0.0, 1.0, "clopper-pearson");
    }
    let (k, n) = (errors as f64, shots as f64);
    let ler = k / n;
    if errors >= 20 {
        let h = 1.96 * (ler * (1.0 - ler) / n).sqrt();
        return ((ler - h).max(0.0), (ler + h).min(1.0), "normal");
    }
    let lo = if errors == 0 { 0.0 } else { Beta::new(k, n - k + 1.0).map(|b| b.inverse_cdf(0.025)).unwrap_or(0.0) };
    let hi = if errors == shots { 1.0 } else { Beta::new(k + 1.0, n - k).map(|b| b.inverse_cdf(0.975)).unwrap_or(1.0) };
    (lo, hi, "clopper-pearson")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub max_shots: u64,
    pub target_errors: Option<u64>,
    pub seed: u64,
    pub chunk: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { max_shots: 1_000_000, target_errors: None, seed: 0, chunk: 1 << 15 }
    }
}

/// Monte Carlo estimate. Shots are split into fixed chunks, each with its own
/// ChaCha8 stream, so the result depends only on the seed and the options.
pub fn estimate_ler(proto: &DetFtProtocol, noise: NoiseModel, opts: SimOptions) -> Result<SimResult> {
    let prog = Program::compile(proto)?;
    let eval = Evaluator::new(&proto.code, proto.options.reduction)?;
    estimate_program(&prog, &eval, noise, opts)
}

pub fn estimate_program(prog: &Program, eval: &Evaluator, noise: NoiseModel, opts: SimOptions) -> Result<SimResult> {
    if opts.max_shots == 0 {
        return Err(Error::Unsupported("at least one shot is required".into()));
    }
    let chunk = opts.chunk.max(1);
    let clean = prog.unconditional().filter(|(_, g)| noise.applies(g)).count() as u64;
    let n_chunks = opts.max_shots.div_ceil(chunk);
    let batch = rayon::current_num_threads().max(1) as u64;
    let (mut shots, mut errors) = (0u64, 0u64);
    let mut next = 0u64;
    'outer: while next < n_chunks {
        let ids: Vec<u64> = (next..(next + batch).min(n_chunks)).collect();
        next += ids.len() as u64;
        let counts: Vec<(u64, u64)> = ids
            .par_iter()
            .map(|&c| {
                let size = chunk.min(opts.max_shots - c * chunk);
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(c);
                let mut src = Depolarizing::new(noise, &mut rng);
                let mut frame = Frame::new(prog.width, prog.cbits);
                let e = (0..size).filter(|_| shot(prog, eval, &mut src, &mut frame, clean)).count() as u64;
                (size, e)
            })
            .collect();
        for (s, e) in counts {
            shots += s;
            errors += e;
            if opts.target_errors.is_some_and(|t| errors >= t) {
                break 'outer;
            }
        }
    }
    let (lo, hi, how) = confidence_interval(errors, shots);
    Ok(SimResult {
        p: noise.p,
        shots,
        errors,
        ler: errors as f64 / shots as f64,
        ci: (hi - lo) / 2.0,
        ci_low: lo,
        ci_high: hi,
        interval: how.into(),
    })
}

/// Least-squares slope of log(ler) against log(p).
pub fn fit_scaling(results: &[SimResult]) -> Result<f64> {
    if results.len() < 3 {
        return Err(Error::Unsupported(format!("{} points, need at least 3", results.len())));
    }
    if let Some(r) = results.iter().find(|r| r.errors < 10 || r.p <= 0.0) {
        return Err(Error::Unsupported(format!("insufficient statistics at p={} ({} errors)", r.p, r.errors)));
    }
    let pts: Vec<(f64, f64)> = results.iter().map(|r| (r.p.ln(), r.ler.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Unsupported("all points share one p".into()));
    }
    Ok(sxy / sxx)
}

/// Every single fault on the unconditional part of a program.
pub fn single_faults(prog: &Program) -> Vec<SingleFault> {
    let mut out = Vec::new();
    for (loc, g) in prog.unconditional() {
        if g.is_measurement() {
            out.push(SingleFault { loc, action: FaultAction::Flip });
        } else {
            for &(x, z) in pauli_choices(g.qubits().1.is_some()) {
                out.push(SingleFault { loc, action: FaultAction::Pauli(x, z) });
            }
        }
    }
    out
}

/// Final frame and trace for each single fault, in [`single_faults`] order.
pub fn single_fault_runs(prog: &Program) -> Vec<(SingleFault, Frame, RunTrace)> {
    single_faults(prog)
        .into_par_iter()
        .map(|f| {
            let mut frame = Frame::new(prog.width, prog.cbits);
            let mut src = f;
            let t = prog.run(&mut frame, &mut src, false);
            (f, frame, t)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub location: usize,
    pub gate: String,
    pub fault: String,
    pub residual_x: BitVector,
    pub residual_z: BitVector,
    pub weight_x: usize,
    pub weight_z: usize,
    pub logical: bool,
    pub branches: Vec<String>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} after location {} ({}): X {} (wt {}), Z {} (wt {}){}; branches [{}]",
            self.fault,
            self.location,
            self.gate,
            self.residual_x,
            self.weight_x,
            self.residual_z,
            self.weight_z,
            if self.logical { ", logical error" } else { "" },
            self.branches.join(", ")
        )
    }
}

/// Runs each single fault through the protocol and reports those leaving a
/// residual of reduced weight above one or a logical error after perfect EC.
pub fn exhaustive_single_fault_check(proto: &DetFtProtocol) -> Result<Vec<Violation>> {
    let prog = Program::compile(proto)?;
    let eval = Evaluator::new(&proto.code, proto.options.reduction)?;
    Ok(check_program(&prog, &eval))
}

pub fn check_program(prog: &Program, eval: &Evaluator) -> Vec<Violation> {
    let gate_at = |loc: usize| {
        prog.blocks().find_map(|b| (loc >= b.start && loc < b.start + b.gates.len()).then(|| &b.gates[loc - b.start])).unwrap()
    };
    single_fault_runs(prog)
        .into_iter()
        .filter_map(|(f, frame, trace)| {
            let x = frame.x.slice(0, eval.n);
            let z = frame.z.slice(0, eval.n);
            let (wx, wz) = (eval.group_x.reduced_weight(&x), eval.group_z.reduced_weight(&z));
            let logical = eval.logical_error(&x);
            if wx <= 1 && wz <= 1 && !logical {
                return None;
            }
            let g = gate_at(f.loc);
            let fault = match f.action {
                FaultAction::Flip => "flip".to_string(),
                FaultAction::Pauli(px, pz) => pauli_label(px, pz, g.qubits().1.is_some()),
            };
            let branches = trace.branches.iter().map(|&(s, b)| prog.stages[s].branches[b].label.clone()).collect();
            Some(Violation {
                location: f.loc,
                gate: gate_line(g),
                fault,
                residual_x: x,
                residual_z: z,
                weight_x: wx,
                weight_z: wz,
                logical,
                branches,
            })
        })
        .collect()
}

fn pauli_label(x: u8, z: u8, two: bool) -> String {
    let one = |b: u8| match ((x >> b) & 1, (z >> b) & 1) {
        (0, 0) => 'I',
        (1, 0) => 'X',
        (1, 1) => 'Y',
        _ => 'Z',
    };
    if two {
        format!("{}{}", one(0), one(1))
    } else {
        one(0).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_constructed_points() {
        let mk = |p: f64, ler: f64| SimResult {
            p,
            shots: 1_000_000,
            errors: 1000,
            ler,
            ci: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            interval: "normal".into(),
        };
        let ps = [1e-3, 3e-3, 1e-2];
        let sq: Vec<SimResult> = ps.iter().map(|&p| mk(p, p * p)).collect();
        assert!((fit_scaling(&sq).unwrap() - 2.0).abs() < 1e-12);
        let lin: Vec<SimResult> = ps.iter().map(|&p| mk(p, 7.0 * p)).collect();
        assert!((fit_scaling(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert!(fit_scaling(&sq[..2]).is_err());
        let mut few = sq.clone();
        few[0].errors = 3;
        assert!(fit_scaling(&few).is_err());
    }

    #[test]
    fn intervals() {
        let (lo, hi, how) = confidence_interval(0, 100);
        assert_eq!(how, "clopper-pearson");
        assert_eq!(lo, 0.0);
        // exact upper bound for zero events out of 100 is 1 - 0.025^(1/100)
        assert!((hi - (1.0 - 0.025f64.powf(0.01))).abs() < 1e-9);
        let (lo, hi, how) = confidence_interval(500, 10_000);
        assert_eq!(how, "normal");
        let h = 1.96 * (0.05f64 * 0.95 / 10_000.0).sqrt();
        assert!((lo - (0.05 - h)).abs() < 1e-12 && (hi - (0.05 + h)).abs() < 1e-12);
        let (lo, hi, _) = confidence_interval(5, 50);
        assert!(lo < 0.1 && 0.1 < hi);
    }

    #[test]
    fn noise_bounds() {
        assert!(NoiseModel::uniform(-0.1).is_err());
        assert!(NoiseModel::uniform(1.5).is_err());
        let n = NoiseModel { measurement: false, ..NoiseModel::uniform(0.5).unwrap() };
        assert!(!n.applies(&Gate::MeasZ(0, 0)));
        assert!(n.applies(&Gate::Cnot(0, 1)));
    }

    #[test]
    fn geometric_gaps_have_the_right_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = 0.05;
        let mut src = Depolarizing::new(NoiseModel::uniform(p).unwrap(), &mut rng);
        let g = Gate::Cnot(0, 1);
        let trials = 200_000;
        let hits = (0..trials).filter(|&i| src.at(i, &g).is_some()).count() as f64;
        let rate = hits / trials as f64;
        assert!((rate - p).abs() < 5.0 * (p * (1.0 - p) / trials as f64).sqrt(), "{rate}");
    }

    #[test]
    fn two_qubit_paulis_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut src = Depolarizing::new(NoiseModel::uniform(1.0).unwrap(), &mut rng);
        let g = Gate::Cnot(0, 1);
        let mut counts = std::collections::HashMap::new();
        for i in 0..150_000 {
            if let Some(FaultAction::Pauli(x, z)) = src.at(i, &g) {
                *counts.entry((x, z)).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.len(), 15);
        assert!(!counts.contains_key(&(0, 0)));
        for &c in counts.values() {
            assert!((c as f64 - 10_000.0).abs() < 500.0);
        }
    }

    #[test]
    fn labels() {
        assert_eq!(pauli_label(1, 0, false), "X");
        assert_eq!(pauli_label(0b01, 0b11, true), "YZ");
    }
}
