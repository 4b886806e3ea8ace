//! Real banded matrices with in-place LU (no pivoting) and complex right-hand sides.

use num_complex::Complex64 as C64;

#[derive(Debug, Clone)]
pub(crate) struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// `out = self * x`
    pub fn matvec(&self, x: &[C64], out: &mut [C64]) {
        let w = self.kl + self.ku + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.kl);
            let j1 = (i + self.ku + 1).min(self.n);
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = C64::new(0.0, 0.0);
            for j in j0..j1 {
                acc += x[j] * row[j + self.kl - i];
            }
            out[i] = acc;
        }
    }

    /// `I - s * self`
    pub fn shifted_identity(&self, s: f64) -> Self {
        let mut m = Self { n: self.n, kl: self.kl, ku: self.ku, data: self.data.iter().map(|v| -s * v).collect() };
        for i in 0..self.n {
            m.add(i, i, 1.0);
        }
        m
    }

    /// Doolittle LU in place. Safe without pivoting for column diagonally
    /// dominant matrices.
    pub fn factor(mut self) -> Result<BandedLu, f64> {
        let w = self.kl + self.ku + 1;
        let (kl, ku, n) = (self.kl, self.ku, self.n);
        for k in 0..n {
            let piv = self.data[k * w + kl];
            if !(piv.abs() > 1e-300) || !piv.is_finite() {
                return Err(piv);
            }
            let imax = (k + kl + 1).min(n);
            let jmax = (k + ku + 1).min(n);
            for i in k + 1..imax {
                let ik = i * w + (k + kl - i);
                let l = self.data[ik] / piv;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..jmax {
                        let kj = k * w + (j + kl - k);
                        let ij = i * w + (j + kl - i);
                        self.data[ij] -= l * self.data[kj];
                    }
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandedLu {
    m: Banded,
}

impl BandedLu {
    /// Solves in place.
    pub fn solve(&self, b: &mut [C64]) {
        let m = &self.m;
        let w = m.kl + m.ku + 1;
        let (kl, n) = (m.kl, m.n);
        for i in 0..n {
            let j0 = i.saturating_sub(kl);
            let row = &m.data[i * w..(i + 1) * w];
            let mut acc = b[i];
            for j in j0..i {
                acc -= b[j] * row[j + kl - i];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let j1 = (i + m.ku + 1).min(n);
            let row = &m.data[i * w..(i + 1) * w];
            let mut acc = b[i];
            for j in i + 1..j1 {
                acc -= b[j] * row[j + kl - i];
            }
            b[i] = acc / row[kl];
        }
    }
}
