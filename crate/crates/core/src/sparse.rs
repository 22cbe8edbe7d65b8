//! Compressed sparse row storage shared by the affinity, encoding and
//! system matrices.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Square CSR matrix with sorted, duplicate-free column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Duplicates are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Shape(format!("{} rows for dimension {n}", rows.len())));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if c >= n {
                    return Err(Error::Shape(format!("column {c} out of range in row {i}")));
                }
                if indices.len() > indptr[i] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { n, indptr, indices, values })
    }

    pub fn identity(n: usize) -> Self {
        Self { n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.par_iter_mut().with_min_len(1024).enumerate().for_each(|(i, yi)| {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        });
    }

    /// `Aᵀ x`.
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        self.transpose().mul_vec(x)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                indices[slot] = i;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self { n: self.n, indptr, indices, values }
    }

    /// `AᵀA`, bitwise symmetric.
    ///
    /// Entry `(i, j)` is accumulated as `Σ_k a_ki a_kj` with `k` ascending, and
    /// `(j, i)` runs over the same products in the same order.
    pub fn gram(&self) -> Self {
        let at = self.transpose();
        let n = self.n;
        let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || (vec![0.0f64; n], vec![false; n], Vec::<usize>::new()),
                |(acc, seen, touched), i| {
                    let (ks, aki) = at.row(i);
                    for (&k, &a) in ks.iter().zip(aki) {
                        let (js, akj) = self.row(k);
                        for (&j, &b) in js.iter().zip(akj) {
                            if !seen[j] {
                                seen[j] = true;
                                touched.push(j);
                            }
                            acc[j] += a * b;
                        }
                    }
                    touched.sort_unstable();
                    let vals = touched.iter().map(|&j| acc[j]).collect();
                    let cols = touched.clone();
                    for &j in touched.iter() {
                        acc[j] = 0.0;
                        seen[j] = false;
                    }
                    touched.clear();
                    (cols, vals)
                },
            )
            .collect();
        Self::from_sorted_rows(n, rows)
    }

    /// `Σ w_m A_m + diag · I` over matrices of equal dimension.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)], diag: f64) -> Result<Self> {
        let n = terms.first().map(|(_, m)| m.n).unwrap_or(0);
        if let Some((_, m)) = terms.iter().find(|(_, m)| m.n != n) {
            return Err(Error::Shape(format!("dimension {} vs {n}", m.n)));
        }
        let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let mut entries: Vec<(usize, f64)> = Vec::new();
                for (w, m) in terms {
                    let (cols, vals) = m.row(i);
                    entries.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, w * v)));
                }
                if diag != 0.0 {
                    entries.push((i, diag));
                }
                // Stable sort keeps the term order for equal columns, so the
                // summation order is identical for (i, j) and (j, i).
                entries.sort_by_key(|&(c, _)| c);
                let mut cols = Vec::with_capacity(entries.len());
                let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
                for (c, v) in entries {
                    if cols.last() == Some(&c) {
                        *vals.last_mut().unwrap() += v;
                    } else {
                        cols.push(c);
                        vals.push(v);
                    }
                }
                (cols, vals)
            })
            .collect();
        Ok(Self::from_sorted_rows(n, rows))
    }

    fn from_sorted_rows(n: usize, rows: Vec<(Vec<usize>, Vec<f64>)>) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let nnz = rows.iter().map(|(c, _)| c.len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for (c, v) in rows {
            indices.extend(c);
            values.extend(v);
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, values }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                d[(i, c)] += v;
            }
        }
        d
    }

    /// Largest `|A_ij − A_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Writes `row col value` lines, one per stored entry.
    pub fn write_coordinate(&self, mut out: impl Write) -> std::io::Result<()> {
        for i in 0..self.n {
            self.write_row(i, &mut out)?;
        }
        Ok(())
    }

    pub fn write_row(&self, i: usize, mut out: impl Write) -> std::io::Result<()> {
        let (cols, vals) = self.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            writeln!(out, "{i} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_rows(
            3,
            vec![
                vec![(0, 1.0), (2, 2.0)],
                vec![(1, 3.0), (0, 0.5), (1, 1.0)],
                vec![(2, -1.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn from_rows_sorts_and_merges() {
        let m = sample();
        assert_eq!(m.row(1), (&[0usize, 1][..], &[0.5, 4.0][..]));
        assert_eq!(m.nnz(), 5);
        assert!(CsrMatrix::from_rows(2, vec![vec![(2, 1.0)], vec![]]).is_err());
    }

    #[test]
    fn products_match_dense() {
        let m = sample();
        let d = m.to_dense();
        let x = [1.0, -2.0, 0.25];
        let y = m.mul_vec(&x);
        let yd = &d * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-15);
        }
        let yt = m.mul_transpose_vec(&x);
        let ytd = d.transpose() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((yt[i] - ytd[i]).abs() < 1e-15);
        }
        let g = m.gram();
        assert_eq!(g.asymmetry(), 0.0);
        let gd = d.transpose() * &d;
        assert!((g.to_dense() - gd).amax() < 1e-15);
    }

    #[test]
    fn linear_combination_adds_diagonal() {
        let m = sample();
        let c = CsrMatrix::linear_combination(&[(2.0, &m)], 0.5).unwrap();
        assert_eq!(c.get(0, 0), 2.5);
        assert_eq!(c.get(2, 2), -1.5);
        assert_eq!(c.get(0, 2), 4.0);
        let id = CsrMatrix::linear_combination(&[(0.0, &m)], 1.0).unwrap();
        assert!((id.to_dense() - DMatrix::identity(3, 3)).amax() == 0.0);
    }

    #[test]
    fn coordinate_dump() {
        let mut buf = Vec::new();
        sample().write_row(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("0 2 2.0"));
    }
}
