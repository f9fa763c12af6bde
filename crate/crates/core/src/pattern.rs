//! Directed d-regular adjacency patterns.
//!
//! A pattern is the 0/1 mask of the interaction matrix. Positions are kept in
//! compressed row form with ascending column indices, which makes the
//! position set canonical (row-major order) and cheap to compare.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A bijection of `{0, .., m-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    /// Zero-based mapping `i -> mapping[i]`.
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let m = mapping.len();
        if m == 0 {
            return Err(Error::InvalidPermutation("empty mapping".into()));
        }
        let mut seen = vec![false; m];
        for (i, &j) in mapping.iter().enumerate() {
            if j >= m {
                return Err(Error::InvalidPermutation(format!(
                    "image {j} of {i} is out of range for m = {m}"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidPermutation(format!(
                    "index {j} appears more than once"
                )));
            }
        }
        Ok(Permutation { mapping })
    }

    /// One-based mapping, as permutations are usually written down.
    pub fn from_one_based(mapping: &[usize]) -> Result<Self> {
        let zero = mapping
            .iter()
            .map(|&j| {
                j.checked_sub(1).ok_or_else(|| {
                    Error::InvalidPermutation("one-based index 0 is not allowed".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(zero)
    }

    pub fn identity(m: usize) -> Self {
        Permutation {
            mapping: (0..m).collect(),
        }
    }

    /// Uniformly random permutation.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..m).collect();
        mapping.shuffle(rng);
        Permutation { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }
}

/// Which family a pattern belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternModel {
    /// `P_sigma (x) J_d`, the block-permutation structure.
    BlockPermutation,
    /// Degree proportional to the dimension, `d ~ beta n`.
    Proportional,
    /// Arbitrary d-regular digraph.
    GeneralRegular,
    /// All `n^2` positions.
    Full,
}

impl PatternModel {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternModel::BlockPermutation => "block-permutation",
            PatternModel::Proportional => "proportional",
            PatternModel::GeneralRegular => "general-regular",
            PatternModel::Full => "full",
        }
    }
}

impl fmt::Display for PatternModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block-permutation" | "A" | "a" => Ok(PatternModel::BlockPermutation),
            "proportional" | "B" | "b" => Ok(PatternModel::Proportional),
            "general-regular" | "general" => Ok(PatternModel::GeneralRegular),
            "full" => Ok(PatternModel::Full),
            other => Err(Error::InvalidParameter(format!("unknown pattern model `{other}`"))),
        }
    }
}

/// How a pattern's positions were produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Generation {
    Kronecker { sigma: Permutation, block: usize },
    /// Superposition of `d` permutations with pairwise-disjoint supports.
    PermutationSuperposition { permutations: Vec<Permutation> },
    /// `(i, (i + k) mod n)` for `k < d`, used when superposition sampling
    /// exhausts its budget.
    CyclicShifts,
    AllPositions,
    /// Built from explicit rows (import, hand-built test cases).
    Explicit,
}

/// A 0/1 pattern with (nominally) `d` entries per row and per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyPattern {
    n: usize,
    d: usize,
    model: PatternModel,
    seed: Option<u64>,
    generation: Generation,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

/// Outcome of [`AdjacencyPattern::validate_regularity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegularityReport {
    pub row_degrees_ok: bool,
    pub col_degrees_ok: bool,
    pub nnz: usize,
}

/// Attempts per permutation before giving up on superposition sampling.
const SUPERPOSITION_BUDGET: usize = 64;

impl AdjacencyPattern {
    /// Builds a pattern from per-row column lists. Columns are sorted and
    /// deduplicated; regularity is not enforced (see
    /// [`validate_regularity`](Self::validate_regularity)).
    pub fn from_rows(
        n: usize,
        d: usize,
        model: PatternModel,
        seed: Option<u64>,
        rows: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rows.len(),
            });
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(n * d);
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&j) = row.last() {
                if j >= n {
                    return Err(Error::InvalidParameter(format!(
                        "column {j} in row {i} is out of range for n = {n}"
                    )));
                }
            }
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        Ok(AdjacencyPattern {
            n,
            d,
            model,
            seed,
            generation: Generation::Explicit,
            row_ptr,
            cols,
        })
    }

    /// The Kronecker pattern `P_sigma (x) J_d` of size `n = m d`.
    pub fn block_permutation(d: usize, sigma: Permutation) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("block size d must be >= 1".into()));
        }
        let m = sigma.len();
        let n = m * d;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(n * d);
        row_ptr.push(0);
        for block_row in 0..m {
            let first = sigma.apply(block_row) * d;
            for _ in 0..d {
                cols.extend(first..first + d);
                row_ptr.push(cols.len());
            }
        }
        Ok(AdjacencyPattern {
            n,
            d,
            model: PatternModel::BlockPermutation,
            seed: None,
            generation: Generation::Kronecker { sigma, block: d },
            row_ptr,
            cols,
        })
    }

    /// Block-permutation pattern with `sigma` drawn uniformly from `seed`.
    pub fn random_block_permutation(m: usize, d: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("number of blocks m must be >= 1".into()));
        }
        let sigma = Permutation::random(m, &mut rng::sequential(seed));
        let mut p = Self::block_permutation(d, sigma)?;
        p.seed = Some(seed);
        Ok(p)
    }

    pub fn full(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        let row_ptr = (0..=n).map(|i| i * n).collect();
        let cols = (0..n).flat_map(|_| 0..n).collect();
        Ok(AdjacencyPattern {
            n,
            d: n,
            model: PatternModel::Full,
            seed: None,
            generation: Generation::AllPositions,
            row_ptr,
            cols,
        })
    }

    /// Superposition of `d` random permutations of `[n]` with disjoint
    /// supports. Each permutation is drawn uniformly, then conflicting
    /// positions are repaired by random transpositions; a permutation that
    /// still collides is redrawn. When the budget runs out (typically for
    /// `d` close to `n`) the cyclic-shift pattern is returned instead and the
    /// fallback is recorded in [`generation`](Self::generation).
    pub fn general_regular(n: usize, d: usize, seed: u64) -> Result<Self> {
        let mut p = Self::superposition(n, d, seed)?;
        p.model = PatternModel::GeneralRegular;
        Ok(p)
    }

    /// Model with degree `d = round(beta n)` (at least 1).
    pub fn proportional(n: usize, beta: f64, seed: u64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0, 1], got {beta}"
            )));
        }
        let d = ((beta * n as f64).round() as usize).clamp(1, n.max(1));
        let mut p = Self::superposition(n, d, seed)?;
        p.model = PatternModel::Proportional;
        Ok(p)
    }

    fn superposition(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 || d > n {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= d <= n, got n = {n}, d = {d}"
            )));
        }
        let mut rng = rng::sequential(seed);
        let mut occupied = vec![false; n * n];
        let mut permutations = Vec::with_capacity(d);
        'outer: for _ in 0..d {
            for _ in 0..SUPERPOSITION_BUDGET {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                if repair_collisions(&mut perm, &occupied, n, &mut rng) {
                    for (i, &j) in perm.iter().enumerate() {
                        occupied[i * n + j] = true;
                    }
                    permutations.push(Permutation { mapping: perm });
                    continue 'outer;
                }
            }
            let mut p = Self::cyclic_shifts(n, d);
            p.seed = Some(seed);
            return Ok(p);
        }
        let rows = (0..n)
            .map(|i| permutations.iter().map(|p| p.apply(i)).collect())
            .collect();
        let mut p = Self::from_rows(n, d, PatternModel::GeneralRegular, Some(seed), rows)?;
        p.generation = Generation::PermutationSuperposition { permutations };
        Ok(p)
    }

    fn cyclic_shifts(n: usize, d: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..d).map(|k| (i + k) % n).collect())
            .collect();
        let mut p = Self::from_rows(n, d, PatternModel::GeneralRegular, None, rows)
            .expect("cyclic rows are in range");
        p.generation = Generation::CyclicShifts;
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn model(&self) -> PatternModel {
        self.model
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn generation(&self) -> &Generation {
        &self.generation
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices of row `i`, ascending.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.cols
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    /// Positions in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    /// Counts entries per row and column against `d`.
    pub fn validate_regularity(&self) -> RegularityReport {
        let mut col_counts = vec![0usize; self.n];
        for &j in &self.cols {
            col_counts[j] += 1;
        }
        let row_degrees_ok = (0..self.n).all(|i| self.row(i).len() == self.d);
        let col_degrees_ok = col_counts.iter().all(|&c| c == self.d);
        RegularityReport {
            row_degrees_ok,
            col_degrees_ok,
            nnz: self.nnz(),
        }
    }

    /// Text form: a header `n d model seed` (seed `-` when absent) followed
    /// by one line per row with its ascending zero-based column indices.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.nnz() * 6 + 32);
        let seed = self.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        let _ = writeln!(out, "{} {} {} {}", self.n, self.d, self.model, seed);
        for i in 0..self.n {
            let mut first = true;
            for &j in self.row(i) {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{j}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::PatternParse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad_header = |msg: &str| Error::PatternParse {
            line: 1,
            msg: msg.to_string(),
        };
        if fields.len() != 4 {
            return Err(bad_header("expected `n d model seed`"));
        }
        let n: usize = fields[0].parse().map_err(|_| bad_header("bad n"))?;
        let d: usize = fields[1].parse().map_err(|_| bad_header("bad d"))?;
        let model: PatternModel = fields[2].parse().map_err(|_| bad_header("bad model"))?;
        let seed = match fields[3] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad_header("bad seed"))?),
        };
        let mut rows = Vec::with_capacity(n);
        for (k, line) in lines.enumerate() {
            if rows.len() == n {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::PatternParse {
                    line: k + 2,
                    msg: "more rows than n".into(),
                });
            }
            let row = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| Error::PatternParse {
                        line: k + 2,
                        msg: format!("bad column index `{t}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::PatternParse {
                    line: k + 2,
                    msg: "column indices must be strictly ascending".into(),
                });
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(Error::PatternParse {
                line: rows.len() + 2,
                msg: format!("expected {n} rows, found {}", rows.len()),
            });
        }
        Self::from_rows(n, d, model, seed, rows)
    }
}

/// Moves `perm` off the occupied positions with random transpositions.
/// Returns whether a collision-free permutation was reached.
fn repair_collisions<R: Rng + ?Sized>(
    perm: &mut [usize],
    occupied: &[bool],
    n: usize,
    rng: &mut R,
) -> bool {
    let taken = |i: usize, j: usize| occupied[i * n + j];
    let mut budget = 32 * n + 64;
    loop {
        let Some(i) = (0..n).find(|&i| taken(i, perm[i])) else {
            return true;
        };
        loop {
            if budget == 0 {
                return false;
            }
            budget -= 1;
            let k = rng.random_range(0..n);
            if k != i && !taken(i, perm[k]) && !taken(k, perm[i]) {
                perm.swap(i, k);
                break;
            }
        }
    }
}
