//! Dense bit-packed vectors and matrices over GF(2).

use std::cmp::Ordering;
use std::fmt;

use crate::{Error, Result};

const W: usize = 64;

fn nwords(len: usize) -> usize {
    len.div_ceil(W)
}

/// A fixed-length vector over GF(2), packed 64 coordinates per word.
///
/// Ordering is lexicographic over coordinates with index 0 most significant
/// and 0 < 1, after comparing lengths.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector { len, words: vec![0; nwords(len)] }
    }

    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(i, true);
        v
    }

    pub fn from_indices(len: usize, idx: &[usize]) -> Self {
        let mut v = Self::zeros(len);
        for &i in idx {
            v.set(i, true);
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    /// Low `len` bits of `x`, bit i of `x` becoming coordinate i.
    pub fn from_u64(len: usize, x: u64) -> Self {
        assert!(len <= W || x == 0);
        let mut v = Self::zeros(len);
        if len > 0 {
            v.words[0] = if len < W { x & ((1u64 << len) - 1) } else { x };
        }
        v
    }

    /// Parses a string over {'.', '0'} (zero) and {'1'} (one).
    pub fn parse(s: &str) -> Result<Self> {
        let mut v = Self::zeros(s.chars().count());
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => v.set(i, true),
                '.' | '0' => {}
                _ => return Err(Error::Parse(format!("bad bit character {c:?} in {s:?}"))),
            }
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Coordinates packed into one word; panics past 64 coordinates.
    pub fn as_u64(&self) -> u64 {
        assert!(self.len <= W, "vector longer than one word");
        self.words.first().copied().unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / W] >> (i % W)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, b: bool) {
        assert!(i < self.len, "index {i} out of range {}", self.len);
        let m = 1u64 << (i % W);
        if b {
            self.words[i / W] |= m;
        } else {
            self.words[i / W] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len);
        self.words[i / W] ^= 1u64 << (i % W);
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * W + t)
            })
        })
    }

    pub fn first_one(&self) -> Option<usize> {
        self.ones().next()
    }

    pub fn xor_assign(&mut self, other: &BitVector) {
        assert_eq!(self.len, other.len, "length mismatch");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        let mut r = self.clone();
        r.xor_assign(other);
        r
    }

    pub fn and(&self, other: &BitVector) -> BitVector {
        assert_eq!(self.len, other.len, "length mismatch");
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect();
        BitVector { len: self.len, words }
    }

    /// Weight of `self ^ other` without allocating.
    pub fn xor_weight(&self, other: &BitVector) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &BitVector) -> BitVector {
        let mut r = BitVector::zeros(self.len + other.len);
        for i in self.ones() {
            r.set(i, true);
        }
        for i in other.ones() {
            r.set(self.len + i, true);
        }
        r
    }

    /// Coordinates `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> BitVector {
        let mut r = BitVector::zeros(len);
        for i in 0..len {
            if self.get(start + i) {
                r.set(i, true);
            }
        }
        r
    }

    /// Dotted form, e.g. `11..11.`.
    pub fn to_dotted(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '.' }).collect()
    }

    /// Binary form, e.g. `1100110`.
    pub fn to_binary(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

/// Parity of the coordinate-wise AND.
pub fn inner(u: &BitVector, v: &BitVector) -> Result<bool> {
    if u.len != v.len {
        return Err(Error::LengthMismatch(u.len, v.len));
    }
    Ok(inner_unchecked(u, v))
}

#[inline]
pub(crate) fn inner_unchecked(u: &BitVector, v: &BitVector) -> bool {
    u.words.iter().zip(&v.words).fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones()) & 1 == 1
}

impl Ord for BitVector {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len.cmp(&other.len).then_with(|| {
            for (a, b) in self.words.iter().zip(&other.words) {
                let d = a ^ b;
                if d != 0 {
                    let low = d & d.wrapping_neg();
                    return if a & low == 0 { Ordering::Less } else { Ordering::Greater };
                }
            }
            Ordering::Equal
        })
    }
}

impl PartialOrd for BitVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl serde::Serialize for BitVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_dotted())
    }
}

impl<'de> serde::Deserialize<'de> for BitVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        BitVector::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.to_dotted())
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_dotted())
    }
}

/// Row-major matrix over GF(2).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<BitVector>,
}

/// Result of [`BitMatrix::rref`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rref {
    pub reduced: BitMatrix,
    pub pivots: Vec<usize>,
    pub rank: usize,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BitMatrix { cols, rows: vec![BitVector::zeros(cols); rows] }
    }

    pub fn empty(cols: usize) -> Self {
        BitMatrix { cols, rows: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        BitMatrix { cols: n, rows: (0..n).map(|i| BitVector::unit(n, i)).collect() }
    }

    pub fn from_rows(cols: usize, rows: Vec<BitVector>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch(r.len(), cols));
        }
        Ok(BitMatrix { cols, rows })
    }

    /// Parses rows in dotted form. `cols` is needed for the zero-row case.
    pub fn parse(cols: usize, rows: &[&str]) -> Result<Self> {
        let rows = rows.iter().map(|s| BitVector::parse(s)).collect::<Result<Vec<_>>>()?;
        Self::from_rows(cols, rows)
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> &[BitVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &BitVector {
        &self.rows[i]
    }

    pub fn push(&mut self, r: BitVector) {
        assert_eq!(r.len(), self.cols, "row length mismatch");
        self.rows.push(r);
    }

    pub fn vstack(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.cols);
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        BitMatrix { cols: self.cols, rows }
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            for j in r.ones() {
                t.rows[j].set(i, true);
            }
        }
        t
    }

    /// `M·vᵀ`: bit i is `inner(row_i, v)`.
    pub fn mul_vec(&self, v: &BitVector) -> BitVector {
        assert_eq!(v.len(), self.cols, "length mismatch");
        let mut s = BitVector::zeros(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            if inner_unchecked(r, v) {
                s.set(i, true);
            }
        }
        s
    }

    /// `c·M`: XOR of the rows selected by `c`.
    pub fn combine(&self, c: &BitVector) -> BitVector {
        assert_eq!(c.len(), self.rows.len(), "length mismatch");
        let mut v = BitVector::zeros(self.cols);
        for i in c.ones() {
            v.xor_assign(&self.rows[i]);
        }
        v
    }

    /// `A·Bᵀ`.
    pub fn mul_transpose(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.cols);
        let rows = self.rows.iter().map(|r| other.mul_vec(r)).collect();
        BitMatrix { cols: other.rows.len(), rows }
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(BitVector::is_zero)
    }

    /// Reduced row echelon form; pivot is the leftmost remaining column and
    /// the pivot row the topmost candidate.
    pub fn rref(&self) -> Rref {
        let mut rows = self.rows.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == rows.len() {
                break;
            }
            let Some(p) = (r..rows.len()).find(|&i| rows[i].get(c)) else { continue };
            rows.swap(r, p);
            let pr = rows[r].clone();
            for (i, row) in rows.iter_mut().enumerate() {
                if i != r && row.get(c) {
                    row.xor_assign(&pr);
                }
            }
            pivots.push(c);
            r += 1;
        }
        let rank = pivots.len();
        Rref { reduced: BitMatrix { cols: self.cols, rows }, pivots, rank }
    }

    pub fn rank(&self) -> usize {
        self.rref().rank
    }

    /// Nonzero rows of the RREF: a basis of the row space.
    pub fn row_basis(&self) -> BitMatrix {
        let Rref { reduced, rank, .. } = self.rref();
        BitMatrix { cols: self.cols, rows: reduced.rows[..rank].to_vec() }
    }

    /// Coefficients `c` with `c·M = v`, or `None` outside the row space.
    pub fn in_row_space(&self, v: &BitVector) -> Result<Option<BitVector>> {
        if v.len() != self.cols {
            return Err(Error::LengthMismatch(v.len(), self.cols));
        }
        let m = self.rows.len();
        let mut rows: Vec<(BitVector, BitVector)> =
            self.rows.iter().enumerate().map(|(i, r)| (r.clone(), BitVector::unit(m, i))).collect();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == rows.len() {
                break;
            }
            let Some(p) = (r..rows.len()).find(|&i| rows[i].0.get(c)) else { continue };
            rows.swap(r, p);
            let (pv, pc) = rows[r].clone();
            for (i, row) in rows.iter_mut().enumerate() {
                if i != r && row.0.get(c) {
                    row.0.xor_assign(&pv);
                    row.1.xor_assign(&pc);
                }
            }
            pivots.push(c);
            r += 1;
        }
        let mut rest = v.clone();
        let mut coef = BitVector::zeros(m);
        for (i, &c) in pivots.iter().enumerate() {
            if rest.get(c) {
                rest.xor_assign(&rows[i].0);
                coef.xor_assign(&rows[i].1);
            }
        }
        Ok(rest.is_zero().then_some(coef))
    }

    pub fn contains(&self, v: &BitVector) -> bool {
        matches!(self.in_row_space(v), Ok(Some(_)))
    }

    /// Basis of `{x : M·xᵀ = 0}`, one row per free column.
    pub fn kernel_basis(&self) -> BitMatrix {
        let Rref { reduced, pivots, .. } = self.rref();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let mut out = BitMatrix::empty(self.cols);
        for f in (0..self.cols).filter(|&c| !is_pivot[c]) {
            let mut x = BitVector::unit(self.cols, f);
            for (i, &p) in pivots.iter().enumerate() {
                if reduced.rows[i].get(f) {
                    x.set(p, true);
                }
            }
            out.rows.push(x);
        }
        out
    }

    /// True iff both matrices span the same row space.
    pub fn same_row_space(&self, other: &BitMatrix) -> bool {
        self.cols == other.cols && self.row_basis() == other.row_basis()
    }

    /// Every element of the row space of this matrix's basis, in Gray-code
    /// order starting from zero. Fails when the rank exceeds `max_rank`.
    pub fn span(&self, max_rank: usize) -> Result<Vec<BitVector>> {
        let basis = self.row_basis();
        let r = basis.nrows();
        if r > max_rank {
            return Err(Error::RankGuard(r, max_rank));
        }
        let mut out = Vec::with_capacity(1 << r);
        let mut cur = BitVector::zeros(self.cols);
        out.push(cur.clone());
        for i in 1u64..(1u64 << r) {
            let bit = i.trailing_zeros() as usize;
            cur.xor_assign(&basis.rows[bit]);
            out.push(cur.clone());
        }
        Ok(out)
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows.iter().map(|r| r.to_dotted())).finish()
    }
}
