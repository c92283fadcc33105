//! Dual active-set solver (Goldfarb–Idnani) for strictly convex QPs:
//!
//! ```text
//! minimize   ½ xᵀHx + cᵀx
//! subject to lo_r ≤ a_rᵀx ≤ hi_r      for every row r
//! ```
//!
//! Rows with `lo == hi` are equalities; infinite sides are dropped. The solver
//! starts from the unconstrained minimum and adds violated constraints one at a
//! time, keeping dual feasibility throughout, so it either terminates with an
//! optimal point or proves infeasibility. [`DiagonalQp`] covers a diagonal
//! `H`, [`DenseQp`] a dense positive definite one.

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, DenseMatrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct DiagonalQp<T> {
    /// Strictly positive Hessian diagonal.
    pub hessian: Vec<T>,
    pub linear: Vec<T>,
    pub rows: DenseMatrix<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
    /// Row multipliers `y_r = λ_r(lower) - λ_r(upper)`; stationarity reads
    /// `Hx + c = Σ y_r a_r`.
    pub multipliers: Vec<T>,
    pub iterations: usize,
}

impl<T: Scalar> DiagonalQp<T> {
    pub fn num_vars(&self) -> usize {
        self.hessian.len()
    }

    pub fn objective(&self, x: &[T]) -> T {
        self.hessian
            .iter()
            .zip(&self.linear)
            .zip(x)
            .map(|((&h, &c), &xi)| T::lit(0.5) * h * xi * xi + c * xi)
            .sum()
    }

    /// Max of the stationarity residual, primal infeasibility and
    /// complementarity violation of a candidate primal-dual pair.
    pub fn kkt_residual(&self, x: &[T], y: &[T]) -> T {
        let grad: Vec<T> = (0..self.num_vars())
            .map(|k| self.hessian[k] * x[k] + self.linear[k])
            .collect();
        kkt_residual(grad, &self.rows, &self.lower, &self.upper, x, y)
    }

    pub fn solve(&self) -> Result<QpSolution<T>> {
        let n = self.num_vars();
        assert_eq!(self.linear.len(), n);
        assert!(self.hessian.iter().all(|&h| h > T::zero()), "Hessian must be positive");
        let x = (0..n).map(|k| -self.linear[k] / self.hessian[k]).collect();
        let mut j = vec![T::zero(); n * n];
        for k in 0..n {
            j[k * n + k] = T::one() / self.hessian[k].sqrt();
        }
        let mut sol = GoldfarbIdnani::new(&self.rows, &self.lower, &self.upper, x, j).run()?;
        sol.objective = self.objective(&sol.x);
        Ok(sol)
    }
}

/// QP with a dense symmetric positive definite Hessian.
#[derive(Debug, Clone)]
pub struct DenseQp<T> {
    pub hessian: DenseMatrix<T>,
    pub linear: Vec<T>,
    pub rows: DenseMatrix<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> DenseQp<T> {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &[T]) -> T {
        T::lit(0.5) * dot(x, &self.hessian.mul_vec(x)) + dot(&self.linear, x)
    }

    pub fn kkt_residual(&self, x: &[T], y: &[T]) -> T {
        let mut grad = self.hessian.mul_vec(x);
        for (g, &c) in grad.iter_mut().zip(&self.linear) {
            *g += c;
        }
        kkt_residual(grad, &self.rows, &self.lower, &self.upper, x, y)
    }

    /// Fails with [`Error::QpNotConvex`] when the Hessian is not safely
    /// positive definite.
    pub fn solve(&self) -> Result<QpSolution<T>> {
        let n = self.num_vars();
        assert_eq!(self.hessian.rows(), n);
        let chol = Cholesky::factor(&self.hessian).ok_or(Error::QpNotConvex)?;
        let x: Vec<T> = chol.solve(&self.linear).into_iter().map(|v| -v).collect();
        // J = L⁻ᵀ, so column k of J is row k of L⁻¹
        let l = chol.factor_matrix();
        let mut j = vec![T::zero(); n * n];
        for k in 0..n {
            let col = &mut j[k * n..(k + 1) * n];
            col[k] = T::one() / l[(k, k)];
            for i in k + 1..n {
                let mut s = T::zero();
                for m in k..i {
                    s -= l[(i, m)] * col[m];
                }
                col[i] = s / l[(i, i)];
            }
        }
        // col now holds column k of L⁻¹; transpose into J
        let mut jt = vec![T::zero(); n * n];
        for k in 0..n {
            for i in 0..n {
                jt[i * n + k] = j[k * n + i];
            }
        }
        let mut sol = GoldfarbIdnani::new(&self.rows, &self.lower, &self.upper, x, jt).run()?;
        sol.objective = self.objective(&sol.x);
        Ok(sol)
    }
}

fn kkt_residual<T: Scalar>(
    mut grad: Vec<T>,
    rows: &DenseMatrix<T>,
    lower: &[T],
    upper: &[T],
    x: &[T],
    y: &[T],
) -> T {
    let aty = rows.tr_mul_vec(y);
    for (g, v) in grad.iter_mut().zip(aty) {
        *g -= v;
    }
    let mut worst = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
    for r in 0..rows.rows() {
        let ax = dot(rows.row(r), x);
        let lo_gap = ax - lower[r];
        let hi_gap = upper[r] - ax;
        worst = worst.max((-lo_gap).max(T::zero())).max((-hi_gap).max(T::zero()));
        // y > 0 only on an active lower side, y < 0 only on an active upper side
        if y[r] > T::zero() && lo_gap.is_finite() {
            worst = worst.max((y[r] * lo_gap).abs());
        }
        if y[r] < T::zero() && hi_gap.is_finite() {
            worst = worst.max((y[r] * hi_gap).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Constraint {
    row: usize,
    /// +1 for `a x ≥ lo`, -1 for `-a x ≥ -hi`.
    sign: i8,
    equality: bool,
}

struct GoldfarbIdnani<'a, T> {
    rows: &'a DenseMatrix<T>,
    lower: &'a [T],
    upper: &'a [T],
    n: usize,
    x: Vec<T>,
    /// column-major n×n, Jᵀ N = [R; 0] for the active normals N
    j: Vec<T>,
    /// upper-triangular R, column `k` holds `k + 1` entries
    r: Vec<Vec<T>>,
    active: Vec<Constraint>,
    u: Vec<T>,
    row_norm: Vec<T>,
}

impl<'a, T: Scalar> GoldfarbIdnani<'a, T> {
    /// Starts from the unconstrained minimum `x` with `J Jᵀ = H⁻¹`
    /// (column-major).
    fn new(rows: &'a DenseMatrix<T>, lower: &'a [T], upper: &'a [T], x: Vec<T>, j: Vec<T>) -> Self {
        let n = x.len();
        assert_eq!(rows.cols(), n);
        assert_eq!(lower.len(), rows.rows());
        assert_eq!(upper.len(), rows.rows());
        assert_eq!(j.len(), n * n);
        let row_norm = (0..rows.rows()).map(|r| dot(rows.row(r), rows.row(r)).sqrt()).collect();
        Self {
            rows,
            lower,
            upper,
            n,
            x,
            j,
            r: Vec::new(),
            active: Vec::new(),
            u: Vec::new(),
            row_norm,
        }
    }

    #[inline]
    fn col(&self, k: usize) -> &[T] {
        &self.j[k * self.n..(k + 1) * self.n]
    }

    fn normal(&self, c: Constraint) -> Vec<T> {
        let row = self.rows.row(c.row);
        if c.sign > 0 {
            row.to_vec()
        } else {
            row.iter().map(|&v| -v).collect()
        }
    }

    /// `n⁺ᵀx - b⁺`, negative when violated.
    fn slack(&self, c: Constraint) -> T {
        let ax = dot(self.rows.row(c.row), &self.x);
        if c.sign > 0 {
            ax - self.lower[c.row]
        } else {
            self.upper[c.row] - ax
        }
    }

    fn tolerance(&self, row: usize) -> T {
        let xs = self.x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let b = self.lower[row]
            .abs()
            .min(self.upper[row].abs())
            .min(T::max_value());
        T::epsilon() * T::lit(1e4) * (T::one() + b + self.row_norm[row] * xs)
    }

    /// Most violated inactive constraint, by violation relative to the row norm.
    fn most_violated(&self) -> Option<Constraint> {
        let mut best: Option<(T, Constraint)> = None;
        for row in 0..self.rows.rows() {
            let (lo, hi) = (self.lower[row], self.upper[row]);
            if lo == hi || self.active.iter().any(|c| c.row == row) {
                continue;
            }
            let norm = self.row_norm[row];
            if norm == T::zero() {
                continue;
            }
            let tol = self.tolerance(row);
            for sign in [1i8, -1] {
                let bound = if sign > 0 { lo } else { hi };
                if !bound.is_finite() {
                    continue;
                }
                let c = Constraint {
                    row,
                    sign,
                    equality: false,
                };
                let s = self.slack(c);
                if s < -tol {
                    let score = s / norm;
                    if best.is_none_or(|(b, _)| score < b) {
                        best = Some((score, c));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }

    fn run(mut self) -> Result<QpSolution<T>> {
        let m = self.rows.rows();
        let max_iter = 10 * (self.n + 2 * m) + 100;
        let mut iterations = 0;

        // equalities first; the dual step never removes them
        for row in 0..m {
            if self.lower[row] != self.upper[row] {
                continue;
            }
            if !self.lower[row].is_finite() {
                return Err(Error::QpInfeasible);
            }
            let mut c = Constraint {
                row,
                sign: 1,
                equality: true,
            };
            if self.slack(c) > T::zero() {
                c.sign = -1;
            }
            iterations += 1;
            self.add_with_steps(c, &mut iterations, max_iter)?;
        }

        while let Some(c) = self.most_violated() {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::QpNoConvergence(max_iter));
            }
            self.add_with_steps(c, &mut iterations, max_iter)?;
        }

        let mut multipliers = vec![T::zero(); m];
        for (c, &u) in self.active.iter().zip(&self.u) {
            multipliers[c.row] += if c.sign > 0 { u } else { -u };
        }
        Ok(QpSolution {
            x: self.x,
            objective: T::zero(),
            multipliers,
            iterations,
        })
    }

    /// Steps toward satisfying `p`, dropping blocking constraints as needed,
    /// until `p` joins the active set.
    fn add_with_steps(&mut self, p: Constraint, iterations: &mut usize, max_iter: usize) -> Result<()> {
        let np = self.normal(p);
        let mut u_plus = T::zero();
        let tiny = T::epsilon() * T::lit(1e3);
        loop {
            let q = self.active.len();
            let d: Vec<T> = (0..self.n).map(|k| dot(self.col(k), &np)).collect();
            let mut z = vec![T::zero(); self.n];
            for k in q..self.n {
                if d[k] != T::zero() {
                    for (zi, &jk) in z.iter_mut().zip(self.col(k)) {
                        *zi += d[k] * jk;
                    }
                }
            }
            let r = self.back_substitute(&d[..q]);

            // partial (dual) step limit from active inequalities
            let mut t1 = T::infinity();
            let mut drop = None;
            for (idx, c) in self.active.iter().enumerate() {
                if c.equality || r[idx] <= T::zero() {
                    continue;
                }
                let ratio = self.u[idx] / r[idx];
                if ratio < t1 {
                    t1 = ratio;
                    drop = Some(idx);
                }
            }

            let ztn = dot(&z, &np);
            let np_norm = dot(&np, &np).sqrt();
            let znorm = z.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
            let t2 = if znorm > tiny * (T::one() + np_norm) && ztn > T::zero() {
                -self.slack(p) / ztn
            } else {
                T::infinity()
            };

            if !t1.is_finite() && !t2.is_finite() {
                if p.equality && self.slack(p).abs() <= self.tolerance(p.row) {
                    // redundant equality
                    return Ok(());
                }
                return Err(Error::QpInfeasible);
            }

            if !t2.is_finite() {
                // pure dual step
                for (ui, &ri) in self.u.iter_mut().zip(&r) {
                    *ui -= t1 * ri;
                }
                u_plus += t1;
                self.drop_constraint(drop.expect("finite t1 has a blocking constraint"));
            } else {
                let t = t1.min(t2);
                for (xi, &zi) in self.x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
                for (ui, &ri) in self.u.iter_mut().zip(&r) {
                    *ui -= t * ri;
                }
                u_plus += t;
                if t2 <= t1 {
                    self.add_constraint(p, d, u_plus);
                    return Ok(());
                }
                self.drop_constraint(drop.expect("partial step has a blocking constraint"));
            }
            *iterations += 1;
            if *iterations > max_iter {
                return Err(Error::QpNoConvergence(max_iter));
            }
        }
    }

    /// Solves `R v = d` for the current active set.
    fn back_substitute(&self, d: &[T]) -> Vec<T> {
        let q = d.len();
        let mut v = d.to_vec();
        for i in (0..q).rev() {
            let mut s = v[i];
            for k in i + 1..q {
                s -= self.r[k][i] * v[k];
            }
            v[i] = s / self.r[i][i];
        }
        v
    }

    fn rotate_columns(&mut self, a: usize, b: usize, c: T, s: T) {
        let n = self.n;
        for row in 0..n {
            let ja = self.j[a * n + row];
            let jb = self.j[b * n + row];
            self.j[a * n + row] = c * ja + s * jb;
            self.j[b * n + row] = -s * ja + c * jb;
        }
    }

    fn add_constraint(&mut self, p: Constraint, mut d: Vec<T>, multiplier: T) {
        let q = self.active.len();
        // zero d[q+1..] bottom-up, rotating the matching columns of J
        for k in (q + 1..self.n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == T::zero() {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = T::zero();
            self.rotate_columns(k - 1, k, c, s);
        }
        self.r.push(d[..=q].to_vec());
        self.active.push(p);
        self.u.push(multiplier);
    }

    fn drop_constraint(&mut self, idx: usize) {
        self.active.remove(idx);
        self.u.remove(idx);
        self.r.remove(idx);
        let q = self.active.len();
        // columns idx..q are now upper Hessenberg; restore triangularity
        for i in idx..q {
            let a = self.r[i][i];
            let b = self.r[i][i + 1];
            let h = a.hypot(b);
            let (c, s) = if h == T::zero() {
                (T::one(), T::zero())
            } else {
                (a / h, b / h)
            };
            for col in self.r.iter_mut().skip(i) {
                let ra = col[i];
                let rb = col[i + 1];
                col[i] = c * ra + s * rb;
                col[i + 1] = -s * ra + c * rb;
            }
            self.r[i].truncate(i + 1);
            self.rotate_columns(i, i + 1, c, s);
        }
    }
}
