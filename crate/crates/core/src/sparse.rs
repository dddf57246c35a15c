//! Compressed sparse row storage for the assembled system matrices.
//!
//! Assembly goes through [`TripletBuilder`], which keeps structural zeros so that
//! every matrix assembled on the same mesh has an identical sparsity pattern.
//! Finite differences in the parameter then reduce to operations on the value arrays.

use std::io::Write;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, capacity: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// Sums duplicates; zero-valued entries stay in the pattern.
    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::with_capacity(n, n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
    }

    pub fn from_dense(m: MatRef<'_, f64>) -> Self {
        let mut b = TripletBuilder::new(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    b.push(i, j, m[(i, j)]);
                }
            }
        }
        b.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.indptr == other.indptr
            && self.indices == other.indices
    }

    /// `alpha * self + beta * other` for matrices sharing one sparsity pattern.
    pub fn lincomb(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Result<CsrMatrix> {
        if !self.same_pattern(other) {
            return Err(Error::InvalidInput(
                "linear combination requires identical sparsity patterns".into(),
            ));
        }
        let mut out = self.clone();
        for (o, (a, b)) in out
            .values
            .iter_mut()
            .zip(self.values.iter().zip(other.values.iter()))
        {
            *o = alpha * a + beta * b;
        }
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "sparse matvec: vector length");
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `selfᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "sparse transposed matvec: vector length");
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn mul_dense(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(x.nrows(), self.ncols, "sparse times dense: inner dimension");
        let mut out = Mat::<f64>::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            let col = x.col(c);
            let mut dst = out.col_mut(c);
            for i in 0..self.nrows {
                dst[i] = self.row(i).map(|(j, v)| v * col[j]).sum();
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (i, j, v) in self.triplets() {
            b.push(j, i, v);
        }
        b.build()
    }

    pub fn select_rows(&self, rows: &[usize]) -> CsrMatrix {
        let mut b = TripletBuilder::new(rows.len(), self.ncols);
        for (new_i, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                b.push(new_i, j, v);
            }
        }
        b.build()
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "sparse matmul: inner dimension");
        let mut b = TripletBuilder::new(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, v) in other.row(k) {
                    b.push(i, j, a * v);
                }
            }
        }
        b.build()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Largest asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// Coordinate-triplet text: one `row col value` line per stored entry, 17 significant digits.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "% {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.16e}", i, j, v)?;
        }
        Ok(())
    }

    pub fn read_triplets(text: &str) -> Result<CsrMatrix> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty triplet file".into()))?;
        let dims: Vec<usize> = header
            .trim_start_matches('%')
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad header `{header}`"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        let mut b = TripletBuilder::with_capacity(dims[0], dims[1], dims[2]);
        for line in lines {
            let mut it = line.split_whitespace();
            let parse_err = || Error::Parse(format!("bad triplet line `{line}`"));
            let i: usize = it.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
            let j: usize = it.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
            let v: f64 = it.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
            if i >= dims[0] || j >= dims[1] {
                return Err(parse_err());
            }
            b.push(i, j, v);
        }
        Ok(b.build())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        let mut b = TripletBuilder::new(3, 3);
        b.push(0, 0, 2.0);
        b.push(0, 1, -1.0);
        b.push(1, 0, -1.0);
        b.push(1, 1, 2.0);
        b.push(1, 1, 0.5);
        b.push(2, 2, 0.0);
        b.build()
    }

    #[test]
    fn duplicates_are_summed_and_zeros_kept() {
        let m = sample();
        assert_eq!(m.nnz(), 5);
        assert_eq!(m.get(1, 1), 2.5);
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(m.get(2, 0), 0.0);
    }

    #[test]
    fn matvec_and_transpose_agree_with_dense() {
        let m = sample();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(m.mul_vec(&x), vec![0.0, 4.0, 0.0]);
        assert_eq!(m.tr_mul_vec(&x), m.transpose().mul_vec(&x));
        let d = m.to_dense();
        assert_eq!(d[(1, 1)], 2.5);
    }

    #[test]
    fn lincomb_rejects_different_patterns() {
        let m = sample();
        assert!(m.lincomb(1.0, &CsrMatrix::identity(3), 1.0).is_err());
        let d = m.lincomb(1.0, &m, -1.0).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn triplet_text_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        let back = CsrMatrix::read_triplets(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
