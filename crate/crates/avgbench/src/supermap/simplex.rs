//! Dense revised simplex with Bland's anti-cycling rule.
//!
//! Problems are in standard form `min cᵀp` subject to `A p = b`, `p ≥ 0`.
//! Phase I starts from an all-artificial basis, so no feasible point has to
//! be supplied. The basis inverse is kept explicitly with rank-one pivots and
//! refactored periodically.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200_000;
const REFACTOR_EVERY: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Multipliers `y` of the equality rows, `cᵀ − yᵀA ≥ 0` at the optimum.
    pub duals: DVector<f64>,
    pub iterations: usize,
}

/// Proof that `A p = b, p ≥ 0` has no solution: `Aᵀy ≥ 0` while `bᵀy < 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FarkasCertificate {
    pub y: DVector<f64>,
    /// `min_j (Aᵀy)_j`; nonnegative up to rounding.
    pub dual_slack: f64,
    /// `bᵀy`; strictly negative.
    pub gap: f64,
}

impl FarkasCertificate {
    fn build(a: &DMatrix<f64>, b: &DVector<f64>, y: DVector<f64>) -> Self {
        let scale = y.amax().max(f64::MIN_POSITIVE);
        let y = y / scale;
        let dual_slack = (a.transpose() * &y).min();
        let gap = b.dot(&y);
        Self { y, dual_slack, gap }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.dual_slack >= -tol && self.gap < -tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible(FarkasCertificate),
    Unbounded,
}

enum Status {
    Optimal,
    Unbounded,
}

struct Revised {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    pivots: usize,
    iterations: usize,
}

impl Revised {
    fn refactor(&mut self) -> Result<()> {
        let m = self.b.len();
        let bmat = DMatrix::from_fn(m, m, |i, k| self.a[(i, self.basis[k])]);
        self.binv = bmat
            .try_inverse()
            .ok_or_else(|| Error::Solver("basis matrix became singular".into()))?;
        self.xb = &self.binv * &self.b;
        self.xb.iter_mut().for_each(|v| {
            if v.abs() < 1e-13 {
                *v = 0.0;
            }
        });
        Ok(())
    }

    fn duals(&self, cost: &DVector<f64>) -> DVector<f64> {
        let cb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| cost[j]));
        self.binv.tr_mul(&cb)
    }

    fn pivot(&mut self, q: usize, r: usize, d: &DVector<f64>) {
        let t = self.xb[r] / d[r];
        for i in 0..d.len() {
            self.xb[i] -= t * d[i];
        }
        self.xb[r] = t;
        let row = self.binv.row(r).into_owned() / d[r];
        for i in 0..d.len() {
            if i != r && d[i] != 0.0 {
                let f = d[i];
                for k in 0..row.len() {
                    self.binv[(i, k)] -= f * row[k];
                }
            }
        }
        self.binv.set_row(r, &row);
        self.in_basis[self.basis[r]] = false;
        self.in_basis[q] = true;
        self.basis[r] = q;
        self.pivots += 1;
    }

    fn run(&mut self, cost: &DVector<f64>, allowed: usize) -> Result<Status> {
        loop {
            if self.iterations >= MAX_ITER {
                return Err(Error::Solver(format!("simplex exceeded {MAX_ITER} iterations")));
            }
            self.iterations += 1;
            if self.pivots.is_multiple_of(REFACTOR_EVERY) {
                self.refactor()?;
            }
            let y = self.duals(cost);
            // Bland: lowest-index improving column.
            let entering = (0..allowed)
                .find(|&j| !self.in_basis[j] && cost[j] - self.a.column(j).dot(&y) < -COST_TOL);
            let Some(q) = entering else {
                return Ok(Status::Optimal);
            };
            let d = &self.binv * self.a.column(q);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..d.len() {
                if d[i] > PIVOT_TOL {
                    let t = self.xb[i].max(0.0) / d[i];
                    leave = match leave {
                        None => Some((i, t)),
                        Some((r, best)) => {
                            if t < best - 1e-12 || (t <= best + 1e-12 && self.basis[i] < self.basis[r]) {
                                Some((i, t))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(Status::Unbounded);
            };
            self.pivot(q, r, &d);
        }
    }
}

impl LinearProgram {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() || a.ncols() != c.len() || a.nrows() == 0 {
            return Err(Error::Input("linear program dimensions do not match".into()));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("linear program has non-finite data".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        let (m, n) = self.a.shape();
        let sign: Vec<f64> = self.b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut ext = DMatrix::zeros(m, n + m);
        for i in 0..m {
            for j in 0..n {
                ext[(i, j)] = sign[i] * self.a[(i, j)];
            }
            ext[(i, n + i)] = 1.0;
        }
        let b = DVector::from_fn(m, |i, _| sign[i] * self.b[i]);
        let mut in_basis = vec![false; n + m];
        in_basis[n..].iter_mut().for_each(|v| *v = true);
        let mut lp = Revised {
            a: ext,
            b: b.clone(),
            basis: (n..n + m).collect(),
            in_basis,
            binv: DMatrix::identity(m, m),
            xb: b.clone(),
            pivots: 0,
            iterations: 0,
        };

        let phase1 = DVector::from_fn(n + m, |j, _| if j >= n { 1.0 } else { 0.0 });
        lp.run(&phase1, n + m)?;
        lp.refactor()?;
        let infeas: f64 = (0..m).filter(|&r| lp.basis[r] >= n).map(|r| lp.xb[r]).sum();
        if infeas > FEAS_TOL * b.amax().max(1.0) {
            let y = lp.duals(&phase1);
            let z = DVector::from_fn(m, |i, _| -sign[i] * y[i]);
            return Ok(LpOutcome::Infeasible(FarkasCertificate::build(&self.a, &self.b, z)));
        }

        // Drive zero-level artificials out; rows where that fails are redundant.
        for r in 0..m {
            if lp.basis[r] < n {
                continue;
            }
            let row = lp.binv.row(r).into_owned();
            if let Some(q) = (0..n).find(|&j| !lp.in_basis[j] && (&row * lp.a.column(j))[0].abs() > 1e-7) {
                let d = &lp.binv * lp.a.column(q);
                lp.pivot(q, r, &d);
            }
        }

        let phase2 = DVector::from_fn(n + m, |j, _| if j < n { self.c[j] } else { 0.0 });
        lp.refactor()?;
        if let Status::Unbounded = lp.run(&phase2, n)? {
            return Ok(LpOutcome::Unbounded);
        }
        lp.refactor()?;
        let mut x = DVector::zeros(n);
        for (r, &j) in lp.basis.iter().enumerate() {
            if j < n {
                x[j] = lp.xb[r].max(0.0);
            }
        }
        let y = lp.duals(&phase2);
        let duals = DVector::from_fn(m, |i, _| sign[i] * y[i]);
        Ok(LpOutcome::Optimal(LpSolution { value: self.c.dot(&x), x, duals, iterations: lp.iterations }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(a: &[&[f64]], b: &[f64], c: &[f64]) -> LinearProgram {
        let rows = a.len();
        let cols = a[0].len();
        LinearProgram::new(
            DMatrix::from_fn(rows, cols, |i, j| a[i][j]),
            DVector::from_column_slice(b),
            DVector::from_column_slice(c),
        )
        .unwrap()
    }

    #[test]
    fn small_optimum() {
        // max x + y s.t. x + 2y + s1 = 4, 3x + y + s2 = 6 -> (8/5, 6/5).
        let p = lp(&[&[1.0, 2.0, 1.0, 0.0], &[3.0, 1.0, 0.0, 1.0]], &[4.0, 6.0], &[-1.0, -1.0, 0.0, 0.0]);
        let LpOutcome::Optimal(s) = p.solve().unwrap() else { panic!() };
        assert!((s.x[0] - 1.6).abs() < 1e-12 && (s.x[1] - 1.2).abs() < 1e-12);
        assert!((s.value + 2.8).abs() < 1e-12);
        // Strong duality.
        assert!((s.duals.dot(&p.b) - s.value).abs() < 1e-10);
        let reduced = &p.c - p.a.transpose() * &s.duals;
        assert!(reduced.min() > -1e-10);
    }

    #[test]
    fn infeasible_gives_certificate() {
        // x + y = 1 and x + y = 3.
        let p = lp(&[&[1.0, 1.0], &[1.0, 1.0]], &[1.0, 3.0], &[0.0, 0.0]);
        let LpOutcome::Infeasible(cert) = p.solve().unwrap() else { panic!() };
        assert!(cert.is_valid(1e-9));
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // -x - y = -2 written twice, min x - y.
        let p = lp(&[&[-1.0, -1.0], &[-1.0, -1.0]], &[-2.0, -2.0], &[1.0, -1.0]);
        let LpOutcome::Optimal(s) = p.solve().unwrap() else { panic!() };
        assert!((s.x[1] - 2.0).abs() < 1e-12 && s.x[0].abs() < 1e-12);
    }

    #[test]
    fn unbounded() {
        let p = lp(&[&[1.0, -1.0]], &[1.0], &[0.0, -1.0]);
        assert_eq!(p.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn beale_cycling_example() {
        // Beale's cycling example; Bland's rule must terminate at value -5/4.
        let p = lp(
            &[
                &[0.25, -8.0, -1.0, 9.0, 1.0, 0.0, 0.0],
                &[0.5, -12.0, -0.5, 3.0, 0.0, 1.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            ],
            &[0.0, 0.0, 1.0],
            &[-0.75, 20.0, -0.5, 6.0, 0.0, 0.0, 0.0],
        );
        let LpOutcome::Optimal(s) = p.solve().unwrap() else { panic!() };
        assert!((s.value + 1.25).abs() < 1e-12);
    }
}
