//! Built-in codes. Rows are 0-indexed dotted strings.
//!
//! Steane, Shor, the rotated distance-3 surface code, the tetrahedral
//! [[15,1,3]] code, the [[15,7,3]] Hamming code and the [[12,2,4]] carbon code
//! use their standard generator sets. The tesseract [[16,6,4]] code takes the
//! first-order Reed-Muller generator RM(1,4) for both types. [[16,2,4]] fixes
//! two tesseract logical pairs as stabilizers. [[11,1,3]] came out of a seeded
//! random search over CSS pairs. Every entry is gated by `validate` and
//! `distance` in the tests.

use crate::code::CssCode;
use crate::f2::{BitMatrix, BitVector};
use crate::{Error, Result};

pub const NAMES: [&str; 9] = [
    "steane",
    "shor",
    "surface9",
    "tetrahedral15",
    "hamming15",
    "carbon12",
    "tesseract16",
    "c11_1_3",
    "c16_2_4",
];

fn m(n: usize, rows: &[&str]) -> BitMatrix {
    BitMatrix::parse(n, rows).expect("catalog rows are well formed")
}

fn build(name: &str, n: usize, hx: &[&str], hz: &[&str], logicals: Option<(&[&str], &[&str])>) -> Result<CssCode> {
    let logicals = logicals.map(|(a, b)| (m(n, a), m(n, b)));
    CssCode::new(name, m(n, hx), m(n, hz), logicals)
}

fn rm14() -> BitMatrix {
    let mut rows = vec![BitVector::from_indices(16, &(0..16).collect::<Vec<_>>())];
    for b in 0..4 {
        let idx: Vec<usize> = (0..16).filter(|c| (c >> b) & 1 == 1).collect();
        rows.push(BitVector::from_indices(16, &idx));
    }
    BitMatrix::from_rows(16, rows).unwrap()
}

/// Looks up a built-in code by name.
pub fn get(name: &str) -> Result<CssCode> {
    match name {
        "steane" => {
            let h = ["11..11.", "1.1.1.1", "...1111"];
            build(name, 7, &h, &h, Some((&["..11..1"], &["111...."])))
        }
        "shor" => build(
            name,
            9,
            &["111111...", "111...111"],
            &["11.......", "1.1......", "...11....", "...1.1...", "......11.", "......1.1"],
            Some((&["111......"], &["1..1..1.."])),
        ),
        "surface9" => build(
            name,
            9,
            &["11.11....", "..1..1...", "....11.11", "...1..1.."],
            &["11.......", ".11.11...", "...11.11.", ".......11"],
            None,
        ),
        "tetrahedral15" => build(
            name,
            15,
            &["11111111.......", ".11.11..11.11..", "..11.11..111.1.", "....1111...1111"],
            &[
                "1111...........",
                ".11.11.........",
                "..11.11........",
                "....1111.......",
                ".1..1...1...1..",
                "..1..1...1.1...",
                "..11.....11....",
                "....11.....11..",
                ".....11....1.1.",
                "......11.....11",
            ],
            None,
        ),
        "hamming15" => {
            let h = [".......11111111", "...1111....1111", ".11..11..11..11", "1.1.1.1.1.1.1.1"];
            build(name, 15, &h, &h, None)
        }
        "carbon12" => build(
            name,
            12,
            &["111...111...", "..111...111.", "1...111...11", "111111......", "......111111"],
            &["..1111.1.1..", "1...1.111..1", "111..11...1.", "1..111..1.1.", ".11...11.1.1"],
            None,
        ),
        "tesseract16" => CssCode::new(name, rm14(), rm14(), None),
        "c11_1_3" => build(
            name,
            11,
            &["11.....11..", "1...1..1..1", ".1...1.1..1", "111......1.", "...1..1.11."],
            &["1...1...11.", "...1..1....", "11..11.....", "1.1..1.1...", "......111.1"],
            None,
        ),
        "c16_2_4" => {
            let t = get("tesseract16")?;
            let mut hx = t.hx.clone();
            let mut hz = t.hz.clone();
            hx.push(t.lx.row(0).clone());
            hx.push(t.lx.row(1).clone());
            hz.push(t.lz.row(2).clone());
            hz.push(t.lz.row(3).clone());
            let lx = BitMatrix::from_rows(16, vec![t.lx.row(4).clone(), t.lx.row(5).clone()])?;
            let lz = BitMatrix::from_rows(16, vec![t.lz.row(4).clone(), t.lz.row(5).clone()])?;
            CssCode::new(name, hx, hz, Some((lx, lz)))
        }
        _ => Err(Error::UnknownCode(name.to_string())),
    }
}
