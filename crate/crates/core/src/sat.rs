//! CNF instance builder (Tseitin XOR chains, sequential-counter cardinality),
//! solving through an embedded CDCL solver, and projected enumeration.
//!
//! Literals use DIMACS conventions: variable `v ≥ 1`, negation by sign.

use std::fmt::Write as _;
use std::time::Instant;

use varisat::{ExtendFormula, Solver};

pub type Lit = i32;

#[derive(Clone, Debug, Default)]
pub struct CnfInstance {
    nvars: u32,
    clauses: Vec<Vec<Lit>>,
    tags: Vec<(String, Vec<Lit>)>,
    truth: Option<Lit>,
    trivially_unsat: bool,
}

impl CnfInstance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> u32 {
        self.nvars
    }

    pub fn clauses(&self) -> &[Vec<Lit>] {
        &self.clauses
    }

    pub fn tags(&self) -> &[(String, Vec<Lit>)] {
        &self.tags
    }

    /// True once an empty clause has been added.
    pub fn is_trivially_unsat(&self) -> bool {
        self.trivially_unsat
    }

    pub fn new_var(&mut self) -> Lit {
        self.nvars += 1;
        self.nvars as Lit
    }

    pub fn new_vars(&mut self, k: usize) -> Vec<Lit> {
        (0..k).map(|_| self.new_var()).collect()
    }

    /// Records a named group of variables.
    pub fn tag(&mut self, name: &str, vars: &[Lit]) {
        self.tags.push((name.to_string(), vars.to_vec()));
    }

    pub fn add_clause(&mut self, lits: &[Lit]) {
        assert!(lits.iter().all(|&l| l != 0 && l.unsigned_abs() <= self.nvars), "literal out of range");
        if lits.is_empty() {
            self.trivially_unsat = true;
        }
        self.clauses.push(lits.to_vec());
    }

    /// A literal fixed to true.
    pub fn true_lit(&mut self) -> Lit {
        if let Some(t) = self.truth {
            return t;
        }
        let t = self.new_var();
        self.add_clause(&[t]);
        self.truth = Some(t);
        t
    }

    pub fn false_lit(&mut self) -> Lit {
        -self.true_lit()
    }

    fn xor2_equals(&mut self, a: Lit, b: Lit, c: bool) {
        if c {
            self.add_clause(&[a, b]);
            self.add_clause(&[-a, -b]);
        } else {
            self.add_clause(&[-a, b]);
            self.add_clause(&[a, -b]);
        }
    }

    /// Fresh `t` with `t = a XOR b`.
    fn xor2(&mut self, a: Lit, b: Lit) -> Lit {
        let t = self.new_var();
        self.add_clause(&[-t, a, b]);
        self.add_clause(&[-t, -a, -b]);
        self.add_clause(&[t, -a, b]);
        self.add_clause(&[t, a, -b]);
        t
    }

    /// Enforces `XOR(lits) = constant` through a chain of auxiliaries.
    pub fn add_xor(&mut self, lits: &[Lit], constant: bool) {
        match lits {
            [] => {
                if constant {
                    self.add_clause(&[]);
                }
            }
            [a] => self.add_clause(&[if constant { *a } else { -*a }]),
            [first, mid @ .., last] => {
                let mut acc = *first;
                for &l in mid {
                    acc = self.xor2(acc, l);
                }
                self.xor2_equals(acc, *last, constant);
            }
        }
    }

    /// A literal equal to `XOR(lits)`; constant false for an empty list.
    pub fn xor_lit(&mut self, lits: &[Lit]) -> Lit {
        match lits {
            [] => self.false_lit(),
            [a] => *a,
            [first, rest @ ..] => rest.iter().fold(*first, |acc, &l| self.xor2(acc, l)),
        }
    }

    /// A literal equal to `AND(lits)`; constant true for an empty list.
    pub fn and_lit(&mut self, lits: &[Lit]) -> Lit {
        match lits {
            [] => self.true_lit(),
            [a] => *a,
            _ => {
                let t = self.new_var();
                for &l in lits {
                    self.add_clause(&[-t, l]);
                }
                let mut big: Vec<Lit> = lits.iter().map(|&l| -l).collect();
                big.push(t);
                self.add_clause(&big);
                t
            }
        }
    }

    /// At most `k` of `lits` true, via a sequential counter.
    pub fn add_at_most(&mut self, lits: &[Lit], k: usize) {
        let n = lits.len();
        if k >= n {
            return;
        }
        if k == 0 {
            for &l in lits {
                self.add_clause(&[-l]);
            }
            return;
        }
        // s[i][j]: at least j+1 of lits[..=i] are true
        let s: Vec<Vec<Lit>> = (0..n - 1).map(|_| self.new_vars(k)).collect();
        self.add_clause(&[-lits[0], s[0][0]]);
        for j in 1..k {
            self.add_clause(&[-s[0][j]]);
        }
        for i in 1..n - 1 {
            self.add_clause(&[-lits[i], s[i][0]]);
            self.add_clause(&[-s[i - 1][0], s[i][0]]);
            for j in 1..k {
                self.add_clause(&[-lits[i], -s[i - 1][j - 1], s[i][j]]);
                self.add_clause(&[-s[i - 1][j], s[i][j]]);
            }
            self.add_clause(&[-lits[i], -s[i - 1][k - 1]]);
        }
        self.add_clause(&[-lits[n - 1], -s[n - 2][k - 1]]);
    }

    /// Independent clause evaluator; `assignment[v-1]` is variable `v`.
    pub fn satisfied_by(&self, assignment: &[bool]) -> bool {
        self.clauses.iter().all(|c| c.iter().any(|&l| lit_value(assignment, l)))
    }

    pub fn to_dimacs(&self) -> String {
        let mut s = String::new();
        writeln!(s, "p cnf {} {}", self.nvars, self.clauses.len()).unwrap();
        for c in &self.clauses {
            for l in c {
                write!(s, "{l} ").unwrap();
            }
            s.push_str("0\n");
        }
        s
    }
}

pub fn lit_value(assignment: &[bool], l: Lit) -> bool {
    let v = assignment[(l.unsigned_abs() - 1) as usize];
    if l > 0 {
        v
    } else {
        !v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Sat,
    Unsat,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub assignment: Option<Vec<bool>>,
}

impl SolveOutcome {
    pub fn is_sat(&self) -> bool {
        self.status == SolveStatus::Sat
    }

    pub fn value(&self, l: Lit) -> bool {
        lit_value(self.assignment.as_ref().expect("sat outcome"), l)
    }
}

fn vlit(l: Lit) -> varisat::Lit {
    varisat::Lit::from_dimacs(l as isize)
}

/// An incremental solver loaded with one instance. The budget is checked
/// before every call; a running call is never interrupted.
pub struct Session {
    solver: Solver<'static>,
    nvars: u32,
    clauses: Vec<Vec<Lit>>,
    trivially_unsat: bool,
}

impl Session {
    pub fn new(inst: &CnfInstance) -> Self {
        let mut solver = Solver::new();
        for _ in 0..inst.nvars {
            solver.new_var();
        }
        for c in &inst.clauses {
            let lits: Vec<varisat::Lit> = c.iter().map(|&l| vlit(l)).collect();
            solver.add_clause(&lits);
        }
        Session { solver, nvars: inst.nvars, clauses: inst.clauses.clone(), trivially_unsat: inst.trivially_unsat }
    }

    pub fn add_clause(&mut self, lits: &[Lit]) {
        assert!(lits.iter().all(|&l| l != 0 && l.unsigned_abs() <= self.nvars));
        if lits.is_empty() {
            self.trivially_unsat = true;
        }
        let v: Vec<varisat::Lit> = lits.iter().map(|&l| vlit(l)).collect();
        self.solver.add_clause(&v);
        self.clauses.push(lits.to_vec());
    }

    pub fn solve(&mut self, assumptions: &[Lit], deadline: Option<Instant>) -> SolveOutcome {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return SolveOutcome { status: SolveStatus::Timeout, assignment: None };
        }
        if self.trivially_unsat {
            return SolveOutcome { status: SolveStatus::Unsat, assignment: None };
        }
        let a: Vec<varisat::Lit> = assumptions.iter().map(|&l| vlit(l)).collect();
        self.solver.assume(&a);
        let sat = self.solver.solve().expect("in-memory solve cannot fail");
        if !sat {
            return SolveOutcome { status: SolveStatus::Unsat, assignment: None };
        }
        let mut asg = vec![false; self.nvars as usize];
        for l in self.solver.model().expect("model after sat") {
            asg[l.var().index()] = l.is_positive();
        }
        assert!(
            self.clauses.iter().all(|c| c.iter().any(|&l| lit_value(&asg, l))),
            "solver model violates a clause"
        );
        assert!(assumptions.iter().all(|&l| lit_value(&asg, l)), "solver model violates an assumption");
        SolveOutcome { status: SolveStatus::Sat, assignment: Some(asg) }
    }
}

/// One-shot solve under assumptions.
pub fn solve(inst: &CnfInstance, assumptions: &[Lit], deadline: Option<Instant>) -> SolveOutcome {
    Session::new(inst).solve(assumptions, deadline)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Enumeration {
    /// Values of the projection variables, in projection order.
    pub assignments: Vec<Vec<bool>>,
    /// Full models matching `assignments`.
    pub models: Vec<Vec<bool>>,
    pub truncated: bool,
    pub timed_out: bool,
}

/// All assignments distinct on `projection`, by repeated solving with
/// blocking clauses. Stops at `limit` with `truncated` set.
pub fn enumerate(inst: &CnfInstance, projection: &[Lit], limit: usize, deadline: Option<Instant>) -> Enumeration {
    let mut s = Session::new(inst);
    let mut out = Enumeration::default();
    loop {
        let r = s.solve(&[], deadline);
        match r.status {
            SolveStatus::Unsat => break,
            SolveStatus::Timeout => {
                out.timed_out = true;
                break;
            }
            SolveStatus::Sat => {}
        }
        if out.assignments.len() == limit {
            out.truncated = true;
            break;
        }
        let asg = r.assignment.unwrap();
        let proj: Vec<bool> = projection.iter().map(|&l| lit_value(&asg, l)).collect();
        let block: Vec<Lit> = projection.iter().zip(&proj).map(|(&l, &v)| if v { -l } else { l }).collect();
        out.assignments.push(proj);
        out.models.push(asg);
        if block.is_empty() {
            break;
        }
        s.add_clause(&block);
    }
    out
}
