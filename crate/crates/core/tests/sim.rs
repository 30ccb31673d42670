use detprep::catalog;
use detprep::circuit::{propagate, Circuit, Fault, Frame, Gate};
use detprep::code::PauliKind;
use detprep::f2::inner;
use detprep::protocol::{assemble, DetFtProtocol, SynthOptions};
use detprep::sim::{
    estimate_ler, estimate_program, exhaustive_single_fault_check, single_faults, Evaluator, FaultAction, FaultSource,
    NoFaults, NoiseModel, Program, SimOptions,
};
use detprep::BitVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn steane() -> DetFtProtocol {
    assemble(&catalog::get("steane").unwrap(), SynthOptions::default()).unwrap()
}

fn pauli_fault(loc: usize, g: &Gate, width: usize, action: FaultAction) -> Fault {
    let (mut x, mut z) = (BitVector::zeros(width), BitVector::zeros(width));
    let mut flip = None;
    match action {
        FaultAction::Flip => flip = g.cbit(),
        FaultAction::Pauli(px, pz) => {
            let (a, b) = g.qubits();
            x.set(a, px & 1 == 1);
            z.set(a, pz & 1 == 1);
            if let Some(b) = b {
                x.set(b, px & 2 == 2);
                z.set(b, pz & 2 == 2);
            }
        }
    }
    Fault { location: loc, x, z, flip }
}

#[test]
fn frame_matches_propagation_through_the_taken_branches() {
    let p = steane();
    let prog = Program::compile(&p).unwrap();
    let gates: Vec<Gate> = prog.blocks().flat_map(|b| b.gates.clone()).collect();
    for f in single_faults(&prog) {
        let mut frame = Frame::new(prog.width, prog.cbits);
        let mut src = f;
        let trace = prog.run(&mut frame, &mut src, true);
        let unrolled = Circuit { width: prog.width, cbits: prog.cbits, gates: trace.executed.iter().map(|&l| gates[l].clone()).collect() };
        let pos = trace.executed.iter().position(|&l| l == f.loc).unwrap();
        let mut want = propagate(&unrolled, &pauli_fault(pos, &gates[f.loc], prog.width, f.action)).unwrap();
        for (i, g) in unrolled.gates.iter().enumerate() {
            if let Gate::CondPauli { kind, q, .. } = g {
                let mut e = BitVector::zeros(prog.width);
                e.set(*q, true);
                let z = BitVector::zeros(prog.width);
                let fault = match kind {
                    PauliKind::X => Fault { location: i, x: e, z, flip: None },
                    PauliKind::Z => Fault { location: i, x: z, z: e, flip: None },
                };
                let r = propagate(&unrolled, &fault).unwrap();
                want.x.xor_assign(&r.x);
                want.z.xor_assign(&r.z);
            }
        }
        assert_eq!(frame.x, want.x, "{f:?}");
        assert_eq!(frame.z, want.z, "{f:?}");
    }
}

#[test]
fn noiseless_runs_measure_zero() {
    for name in ["steane", "shor", "surface9", "c11_1_3"] {
        let p = assemble(&catalog::get(name).unwrap(), SynthOptions::default()).unwrap();
        let prog = Program::compile(&p).unwrap();
        let mut frame = Frame::new(prog.width, prog.cbits);
        let t = prog.run(&mut frame, &mut NoFaults, false);
        assert!(frame.m.is_zero() && frame.x.is_zero() && frame.z.is_zero(), "{name}");
        assert!(t.branches.is_empty());
        let r = estimate_ler(&p, NoiseModel::uniform(0.0).unwrap(), SimOptions { max_shots: 10_000, ..Default::default() }).unwrap();
        assert_eq!(r.errors, 0);
    }
}

#[test]
fn saturated_noise_gives_errors() {
    let r = estimate_ler(&steane(), NoiseModel::uniform(1.0).unwrap(), SimOptions { max_shots: 20_000, ..Default::default() }).unwrap();
    assert!(r.ler > 0.1);
    assert!(r.ci > 0.0);
}

#[test]
fn logical_error_test_against_decoder_oracle() {
    let code = catalog::get("steane").unwrap();
    let eval = Evaluator::new(&code, detprep::ReductionMode::State).unwrap();
    let n = code.n;
    for q in 0..n {
        assert!(!eval.logical_error(&BitVector::unit(n, q)));
    }
    // oracle: the lookup correction of a weight-2 error is the weight-1 error
    // with the same syndrome; the residual is logical iff it anticommutes with lz
    let syn = |e: &BitVector| -> Vec<bool> { code.hz.rows().iter().map(|r| inner(r, e).unwrap()).collect() };
    for a in 0..n {
        for b in a + 1..n {
            let e = BitVector::from_indices(n, &[a, b]);
            let fix = (0..n).map(|q| BitVector::unit(n, q)).find(|c| syn(c) == syn(&e)).unwrap();
            let r = e.xor(&fix);
            let logical = code.lz.rows().iter().any(|l| inner(l, &r).unwrap());
            assert_eq!(eval.logical_error(&e), logical);
            assert!(logical, "Steane corrects no weight-2 error");
        }
    }
}

#[test]
fn zeroed_recovery_is_caught() {
    let mut p = steane();
    for b in p.layers.iter_mut().flat_map(|l| l.branches.iter_mut()) {
        for v in b.recovery.values_mut() {
            v.clear();
        }
    }
    assert!(!exhaustive_single_fault_check(&p).unwrap().is_empty());
}

#[test]
fn encoder_alone_is_not_fault_tolerant() {
    let mut p = steane();
    p.layers.clear();
    assert!(!exhaustive_single_fault_check(&p).unwrap().is_empty());
}

struct Bernoulli<'a> {
    p: f64,
    rng: &'a mut ChaCha8Rng,
}

impl FaultSource for Bernoulli<'_> {
    fn at(&mut self, _: usize, g: &Gate) -> Option<FaultAction> {
        if !self.rng.random_bool(self.p) {
            return None;
        }
        if g.is_measurement() {
            return Some(FaultAction::Flip);
        }
        // index 1..=15 (or 1..=3) split into x bits and z bits
        let (k, shift) = if g.qubits().1.is_some() { (15, 2) } else { (3, 1) };
        let i = self.rng.random_range(1..=k) as u8;
        Some(FaultAction::Pauli(i & ((1 << shift) - 1), i >> shift))
    }
}

#[test]
fn skipping_sampler_agrees_with_per_location_sampling() {
    let p = steane();
    let prog = Program::compile(&p).unwrap();
    let eval = Evaluator::new(&p.code, p.options.reduction).unwrap();
    let pp = 0.02;
    let shots = 200_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut naive = 0u64;
    let mut frame = Frame::new(prog.width, prog.cbits);
    for _ in 0..shots {
        frame.reset();
        prog.run(&mut frame, &mut Bernoulli { p: pp, rng: &mut rng }, false);
        naive += eval.logical_error(&frame.x.slice(0, eval.n)) as u64;
    }
    let fast = estimate_program(&prog, &eval, NoiseModel::uniform(pp).unwrap(), SimOptions { max_shots: shots, seed: 5, ..Default::default() }).unwrap();
    let (a, b) = (naive as f64 / shots as f64, fast.ler);
    let sigma = ((a * (1.0 - a) + b * (1.0 - b)) / shots as f64).sqrt();
    assert!((a - b).abs() < 4.0 * sigma, "naive {a} fast {b} sigma {sigma}");
}

#[test]
fn seeded_estimates_repeat() {
    let p = steane();
    let opts = SimOptions { max_shots: 100_000, seed: 3, ..Default::default() };
    let noise = NoiseModel::uniform(0.01).unwrap();
    assert_eq!(estimate_ler(&p, noise, opts).unwrap(), estimate_ler(&p, noise, opts).unwrap());
    let other = estimate_ler(&p, noise, SimOptions { seed: 4, ..opts }).unwrap();
    assert_eq!(other.shots, 100_000);
}
