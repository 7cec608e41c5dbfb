//! Band LU factorization without pivoting.
//!
//! Adequate for the diagonally dominant systems of the advection-diffusion
//! discretization, where no fill occurs outside the band.

use crate::error::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-300;

/// Square matrix with `bw` sub- and super-diagonals. Entry `(r, c)` lives at
/// `r * (2 bw + 1) + c + bw - r`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.bw >= r && c <= r + self.bw);
        r * (2 * self.bw + 1) + c + self.bw - r
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let k = self.at(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c + self.bw < r || c > r + self.bw {
            0.0
        } else {
            self.data[self.at(r, c)]
        }
    }

    /// Factorizes in place and solves `A x = rhs`, overwriting `rhs` with `x`.
    pub fn solve_in_place(mut self, rhs: &mut [f64]) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        let w = 2 * bw + 1;
        assert_eq!(rhs.len(), n);
        for k in 0..n {
            let pivot = self.data[self.at(k, k)];
            if !(pivot.abs() > PIVOT_FLOOR) || !pivot.is_finite() {
                return Err(Error::Singular(format!("zero pivot in row {k}")));
            }
            let end = (k + bw + 1).min(n);
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            let pivot_row = &head[k * w + bw..k * w + bw + (end - k)];
            for r in k + 1..end {
                let row = &mut tail[(r - k - 1) * w..(r - k) * w];
                let off = bw + k - r;
                let l = row[off] / pivot;
                if l == 0.0 {
                    continue;
                }
                row[off] = l;
                for (dst, src) in row[off + 1..off + (end - k)].iter_mut().zip(&pivot_row[1..]) {
                    *dst -= l * src;
                }
                rhs[r] -= l * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let end = (k + bw + 1).min(n);
            let base = k * w + bw - k;
            let mut s = rhs[k];
            for c in k + 1..end {
                s -= self.data[base + c] * rhs[c];
            }
            rhs[k] = s / self.data[base + k];
        }
        Ok(())
    }
}
