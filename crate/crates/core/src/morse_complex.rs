//! ℤ₂ chain complex of critical points and its homology.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::critical_search::CriticalPoint;
use crate::error::{Error, Result};
use crate::flow::ConnectionCount;

/// Dense GF(2) matrix with bit-packed rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gf2Matrix {
    rows: usize,
    cols: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Gf2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words = cols.div_ceil(64).max(1);
        Self {
            rows,
            cols,
            words,
            bits: vec![0; rows * words],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape {
                    expected: cols,
                    got: r.len(),
                });
            }
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v & 1 == 1);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i}, {j}) out of bounds"
        );
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i}, {j}) out of bounds"
        );
        let w = &mut self.bits[i * self.words + j / 64];
        if v {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn xor_row_into(&mut self, src: usize, dst: usize) {
        for w in 0..self.words {
            let v = self.bits[src * self.words + w];
            self.bits[dst * self.words + w] ^= v;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn mul(&self, rhs: &Gf2Matrix) -> Result<Gf2Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                expected: self.cols,
                got: rhs.rows,
            });
        }
        let mut out = Gf2Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if self.get(i, k) {
                    for w in 0..rhs.words {
                        out.bits[i * out.words + w] ^= rhs.row(k)[w];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Gf2Matrix {
        let mut t = Gf2Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    t.set(j, i, true);
                }
            }
        }
        t
    }

    /// Rank by row reduction.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for col in 0..m.cols {
            let Some(pivot) = (rank..m.rows).find(|&r| m.get(r, col)) else {
                continue;
            };
            if pivot != rank {
                for w in 0..m.words {
                    m.bits.swap(pivot * m.words + w, rank * m.words + w);
                }
            }
            for r in 0..m.rows {
                if r != rank && m.get(r, col) {
                    m.xor_row_into(rank, r);
                }
            }
            rank += 1;
            if rank == m.rows {
                break;
            }
        }
        rank
    }

    /// Rows as strings of '0'/'1'.
    pub fn row_strings(&self) -> Vec<String> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| if self.get(i, j) { '1' } else { '0' })
                    .collect()
            })
            .collect()
    }
}

/// Connection counts plus the (hi, lo) pairs that could not be resolved.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CountTable {
    pub counts: Vec<ConnectionCount>,
    /// Points whose outgoing connections were all resolved.
    pub resolved_sources: Vec<usize>,
    pub unresolved: Vec<UnresolvedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnresolvedPair {
    pub hi: usize,
    pub lo: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ChainComplex {
    /// Generator ids per degree.
    pub generators: Vec<Vec<usize>>,
    /// `boundaries[k]` is ∂_k: C_k → C_{k-1}, shape |C_{k-1}| × |C_k|; ∂_0 is 0 × |C_0|.
    pub boundaries: Vec<Gf2Matrix>,
}

impl ChainComplex {
    /// Builds the complex from generator ids by degree and (hi, lo, mod2) entries.
    pub fn from_generators(
        generators: Vec<Vec<usize>>,
        entries: &[(usize, usize, u8)],
    ) -> Result<Self> {
        let mut degree_of: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (k, ids) in generators.iter().enumerate() {
            for (pos, &id) in ids.iter().enumerate() {
                if degree_of.insert(id, (k, pos)).is_some() {
                    return Err(Error::Config(format!("generator {id} listed twice")));
                }
            }
        }
        let mut boundaries: Vec<Gf2Matrix> = (0..generators.len())
            .map(|k| {
                let below = if k == 0 { 0 } else { generators[k - 1].len() };
                Gf2Matrix::zeros(below, generators[k].len())
            })
            .collect();
        for &(hi, lo, mod2) in entries {
            let (&(kh, ph), &(kl, pl)) = match (degree_of.get(&hi), degree_of.get(&lo)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Config(format!(
                        "count ({hi}, {lo}) names an unknown generator"
                    )))
                }
            };
            if kh != kl + 1 {
                return Err(Error::Config(format!(
                    "count ({hi}, {lo}) joins degrees {kh} and {kl}"
                )));
            }
            if mod2 & 1 == 1 {
                let m = &mut boundaries[kh];
                let v = m.get(pl, ph);
                m.set(pl, ph, !v);
            }
        }
        Ok(Self {
            generators,
            boundaries,
        })
    }

    pub fn top_degree(&self) -> usize {
        self.generators.len().saturating_sub(1)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.generators.iter().map(Vec::len).collect()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.dims()
            .iter()
            .enumerate()
            .map(|(k, &d)| if k % 2 == 0 { d as i64 } else { -(d as i64) })
            .sum()
    }

    pub fn record(&self) -> ComplexRecord {
        ComplexRecord {
            generators_by_degree: self.generators.clone(),
            boundary_matrices: self
                .boundaries
                .iter()
                .skip(1)
                .map(Gf2Matrix::row_strings)
                .collect(),
        }
    }
}

/// Builds the complex of nondegenerate critical points from a count table.
pub fn assemble(crit: &[CriticalPoint], table: &CountTable) -> Result<ChainComplex> {
    if crit.is_empty() {
        return Err(Error::Refused(
            "empty critical set: the search found nothing".into(),
        ));
    }
    if let Some(p) = crit.iter().find(|p| !p.nondegenerate) {
        return Err(Error::Degenerate(format!(
            "critical point {} (gap {:.3e})",
            p.id, p.spectral.gap
        )));
    }
    if let Some(u) = table.unresolved.first() {
        return Err(Error::Unresolved {
            hi: u.hi,
            lo: u.lo,
            reason: u.reason.clone(),
        });
    }
    let top = crit.iter().map(CriticalPoint::index).max().unwrap();
    let mut generators = vec![Vec::new(); top + 1];
    for p in crit {
        generators[p.index()].push(p.id);
    }
    let resolved: BTreeSet<usize> = table.resolved_sources.iter().copied().collect();
    for p in crit.iter().filter(|p| p.index() >= 1) {
        if !generators[p.index() - 1].is_empty() && !resolved.contains(&p.id) {
            return Err(Error::Unresolved {
                hi: p.id,
                lo: generators[p.index() - 1][0],
                reason: "no connection counts were produced for this point".into(),
            });
        }
    }
    let entries: Vec<(usize, usize, u8)> =
        table.counts.iter().map(|c| (c.hi, c.lo, c.mod2)).collect();
    ChainComplex::from_generators(generators, &entries)
}

/// True iff ∂_k ∂_{k+1} = 0 for every k.
pub fn check_boundary_square(cc: &ChainComplex) -> bool {
    (1..cc.boundaries.len().saturating_sub(1)).all(|k| {
        cc.boundaries[k]
            .mul(&cc.boundaries[k + 1])
            .map(|m| m.is_zero())
            .unwrap_or(false)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomologyResult {
    pub betti: Vec<usize>,
    /// `ranks[k]` = rank ∂_k (rank ∂_0 = 0).
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexRecord {
    pub generators_by_degree: Vec<Vec<usize>>,
    /// ∂_1, ∂_2, … as row bitstrings.
    pub boundary_matrices: Vec<Vec<String>>,
}

pub fn betti_numbers(cc: &ChainComplex) -> Result<HomologyResult> {
    if !check_boundary_square(cc) {
        return Err(Error::Refused("boundary does not square to zero".into()));
    }
    let ranks: Vec<usize> = cc.boundaries.iter().map(Gf2Matrix::rank).collect();
    let dims = cc.dims();
    let betti = (0..dims.len())
        .map(|k| dims[k] - ranks[k] - ranks.get(k + 1).copied().unwrap_or(0))
        .collect();
    Ok(HomologyResult { betti, ranks })
}
