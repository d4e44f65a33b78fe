//! Dense tensors over a sorted list of chain sites with a uniform local
//! dimension: 2 for state vectors, 4 for folded density matrices.
//!
//! The first listed site is the most significant digit of the flat index.

use num_traits::Zero;

use crate::pauli::Mat;
use crate::scalar::{Real, C};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SiteTensor<R: Real> {
    pub d: usize,
    pub sites: Vec<usize>,
    pub data: Vec<C<R>>,
}

/// Row-major copy of a small matrix for the inner loops.
pub(crate) fn flat<R: Real>(m: &Mat<R>) -> Vec<C<R>> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl<R: Real> SiteTensor<R> {
    /// Rank-0 tensor holding `1`.
    pub fn scalar(d: usize) -> Self {
        Self { d, sites: Vec::new(), data: vec![C::new(R::one(), R::zero())] }
    }

    pub fn position(&self, site: usize) -> Option<usize> {
        self.sites.binary_search(&site).ok()
    }

    fn stride(&self, pos: usize) -> usize {
        self.d.pow((self.sites.len() - 1 - pos) as u32)
    }

    /// Applies a `d²×d²` matrix (row-major, rows `(o1, o2)`) to adjacent positions `pos, pos+1`.
    pub fn apply_pair(&mut self, pos: usize, m: &[C<R>]) {
        let d = self.d;
        let dd = d * d;
        debug_assert_eq!(m.len(), dd * dd);
        let s = self.stride(pos + 1);
        let block = dd * s;
        let mut buf = [C::<R>::zero(); 16];
        let mut out = [C::<R>::zero(); 16];
        for hi in (0..self.data.len()).step_by(block) {
            for lo in 0..s {
                let base = hi + lo;
                for j in 0..dd {
                    buf[j] = self.data[base + j * s];
                }
                for (r, o) in out.iter_mut().enumerate().take(dd) {
                    let row = &m[r * dd..(r + 1) * dd];
                    let mut acc = C::<R>::zero();
                    for j in 0..dd {
                        acc += row[j] * buf[j];
                    }
                    *o = acc;
                }
                for (j, o) in out.iter().enumerate().take(dd) {
                    self.data[base + j * s] = *o;
                }
            }
        }
    }

    /// Applies a `d^k × d^k` matrix (row-major) to positions `pos..pos+k`.
    pub fn apply_block(&mut self, pos: usize, k: usize, m: &[C<R>]) {
        let dk = self.d.pow(k as u32);
        debug_assert_eq!(m.len(), dk * dk);
        let s = self.stride(pos + k - 1);
        let block = dk * s;
        let mut buf = vec![C::<R>::zero(); dk];
        let mut out = vec![C::<R>::zero(); dk];
        for hi in (0..self.data.len()).step_by(block) {
            for lo in 0..s {
                let base = hi + lo;
                for j in 0..dk {
                    buf[j] = self.data[base + j * s];
                }
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &m[r * dk..(r + 1) * dk];
                    *o = row.iter().zip(&buf).fold(C::<R>::zero(), |acc, (a, b)| acc + *a * b);
                }
                for (j, o) in out.iter().enumerate() {
                    self.data[base + j * s] = *o;
                }
            }
        }
    }

    /// Applies a `d×d` matrix (row-major) at `pos`.
    pub fn apply_single(&mut self, pos: usize, m: &[C<R>]) {
        let d = self.d;
        let s = self.stride(pos);
        let block = d * s;
        let mut buf = [C::<R>::zero(); 4];
        for hi in (0..self.data.len()).step_by(block) {
            for lo in 0..s {
                let base = hi + lo;
                for j in 0..d {
                    buf[j] = self.data[base + j * s];
                }
                for r in 0..d {
                    let mut acc = C::<R>::zero();
                    for j in 0..d {
                        acc += m[r * d + j] * buf[j];
                    }
                    self.data[base + r * s] = acc;
                }
            }
        }
    }

    /// Contracts the site at `pos` with a covector and removes it.
    pub fn contract(&mut self, pos: usize, cov: &[C<R>]) {
        let d = self.d;
        let s = self.stride(pos);
        let block = d * s;
        let mut out = Vec::with_capacity(self.data.len() / d);
        for hi in (0..self.data.len()).step_by(block) {
            for lo in 0..s {
                let mut acc = C::<R>::zero();
                for (j, c) in cov.iter().enumerate() {
                    acc += *c * self.data[hi + j * s + lo];
                }
                out.push(acc);
            }
        }
        self.data = out;
        self.sites.remove(pos);
    }

    /// Inserts a new site in product with the current tensor.
    pub fn insert(&mut self, site: usize, v: &[C<R>]) {
        let d = self.d;
        let pos = self.sites.partition_point(|&x| x < site);
        debug_assert!(self.sites.get(pos) != Some(&site));
        let s = self.d.pow((self.sites.len() - pos) as u32);
        let mut out = vec![C::<R>::zero(); self.data.len() * d];
        for (hi_idx, chunk) in self.data.chunks(s).enumerate() {
            let base = hi_idx * d * s;
            for (j, vj) in v.iter().enumerate() {
                for (lo, x) in chunk.iter().enumerate() {
                    out[base + j * s + lo] = *vj * *x;
                }
            }
        }
        self.data = out;
        self.sites.insert(pos, site);
    }

    /// Inserts a block of consecutive new sites from a joint vector.
    pub fn insert_block(&mut self, first_site: usize, v: &[C<R>]) {
        let k = (v.len() as f64).log(self.d as f64).round() as usize;
        let pos = self.sites.partition_point(|&x| x < first_site);
        let s = self.d.pow((self.sites.len() - pos) as u32);
        let mut out = vec![C::<R>::zero(); self.data.len() * v.len()];
        for (hi_idx, chunk) in self.data.chunks(s).enumerate() {
            let base = hi_idx * v.len() * s;
            for (j, vj) in v.iter().enumerate() {
                for (lo, x) in chunk.iter().enumerate() {
                    out[base + j * s + lo] = *vj * *x;
                }
            }
        }
        self.data = out;
        for q in 0..k {
            self.sites.insert(pos + q, first_site + q);
        }
    }

    /// Replaces the label of the site at `pos`; the sorted order must be kept.
    pub fn relabel(&mut self, pos: usize, site: usize) {
        self.sites[pos] = site;
        debug_assert!(self.sites.windows(2).all(|w| w[0] < w[1]));
    }

    /// `Σ_k conj(w_k)·data_k` for a covector given in the same site order.
    pub fn overlap(&self, w: &[C<R>]) -> C<R> {
        w.iter().zip(&self.data).fold(C::zero(), |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn norm_sqr(&self) -> R {
        self.data.iter().fold(R::zero(), |acc, z| acc + z.norm_sqr())
    }
}
