//! Banded matrices with an LU factorization using partial pivoting.
//!
//! Storage keeps `kl` extra super-diagonals per row so that row swaps during
//! pivoting never leave the band.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.kl < i || j > i + self.ku + self.kl {
            return None;
        }
        Some(i * self.width + (j + self.kl - i))
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.slot(i, j) {
            Some(s) if j <= i + self.ku => self.data[s],
            _ => 0.0,
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics when `(i, j)` lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j).expect("index out of range");
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku);
        let s = self.slot(i, j).expect("index out of range");
        self.data[s] = v;
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n.saturating_sub(1));
            for j in lo..=hi {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// LU factorization with row pivoting. Consumes the matrix.
    pub fn factorize(mut self) -> Result<BandedLu> {
        let n = self.n;
        let kl = self.kl;
        let reach = self.ku + self.kl;
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tiny = f64::EPSILON * scale * n as f64;
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k).unwrap()].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k).unwrap()].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) || !best.is_finite() {
                return Err(Error::Singular { pivot: k });
            }
            pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j).unwrap();
                    let b = self.slot(p, j).unwrap();
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k).unwrap()];
            for i in k + 1..=last_row {
                let sik = self.slot(i, k).unwrap();
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let skj = self.slot(k, j).unwrap();
                        let sij = self.slot(i, j).unwrap();
                        self.data[sij] -= l * self.data[skj];
                    }
                }
            }
        }
        Ok(BandedLu { lu: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + a.kl).min(n - 1) {
                    b[i] -= a.data[a.slot(i, k).unwrap()] * bk;
                }
            }
        }
        let reach = a.ku + a.kl;
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                s -= a.data[a.slot(i, j).unwrap()] * b[j];
            }
            b[i] = s / a.data[a.slot(i, i).unwrap()];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&x, &y| a[x][k].abs().partial_cmp(&a[y][k].abs()).unwrap())
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= l * a[k][j];
                }
                b[i] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn matches_dense_elimination_with_pivoting() {
        let n = 9;
        let (kl, ku) = (2, 3);
        let mut m = BandedMatrix::zeros(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // small diagonal forces row swaps
                let v = if i == j {
                    0.01 * (i as f64 + 1.0)
                } else {
                    ((i * 7 + j * 3) % 5) as f64 - 2.0
                };
                m.set(i, j, v);
                dense[i][j] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let expected = dense_solve(dense, b.clone());
        let x = m.clone().factorize().unwrap().solve(&b);
        for (a, e) in x.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-10 * (1.0 + e.abs()), "{a} vs {e}");
        }
        let back = m.mul_vec(&x);
        for (r, bi) in back.iter().zip(&b) {
            assert!((r - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = BandedMatrix::zeros(3, 1, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 0.0);
        m.set(2, 2, 1.0);
        assert!(matches!(m.factorize(), Err(Error::Singular { pivot: 1 })));
    }

    #[test]
    fn transpose_swaps_bandwidths() {
        let mut m = BandedMatrix::zeros(4, 1, 2);
        m.set(0, 2, 5.0);
        m.set(3, 2, -1.0);
        let t = m.transpose();
        assert_eq!(t.get(2, 0), 5.0);
        assert_eq!(t.get(2, 3), -1.0);
        assert_eq!(t.lower_bandwidth(), 2);
    }
}
