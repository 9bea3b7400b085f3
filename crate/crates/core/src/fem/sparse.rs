use crate::error::{Error, Result};

/// Symmetric sparse matrix in compressed row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from coordinate triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len() / 2);
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len() / 2);
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            debug_assert!(i < n && j < n);
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[s..e].binary_search(&j) {
            Ok(k) => self.values[s + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `|A| |x|` entrywise, the scale of round-off in `A x`.
    pub fn abs_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| (v * x[j]).abs()).sum())
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// `a * self + b * other`, over the union of both sparsity patterns.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        for i in 0..self.n {
            let mut p = self.row(i).peekable();
            let mut q = other.row(i).peekable();
            loop {
                let (j, v) = match (p.peek(), q.peek()) {
                    (None, None) => break,
                    (Some(&(j, v)), None) => {
                        p.next();
                        (j, a * v)
                    }
                    (None, Some(&(j, w))) => {
                        q.next();
                        (j, b * w)
                    }
                    (Some(&(j, v)), Some(&(k, w))) => {
                        if j == k {
                            p.next();
                            q.next();
                            (j, a * v + b * w)
                        } else if j < k {
                            p.next();
                            (j, a * v)
                        } else {
                            q.next();
                            (k, b * w)
                        }
                    }
                };
                col_idx.push(j);
                values.push(v);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct SolveInfo {
    pub iterations: usize,
    /// Final relative residual `|b - A x| / |b|`.
    pub residual: f64,
}

/// Smallest residual norm that can be certified in floating point: the
/// round-off committed when evaluating `b - A x` itself.
fn residual_floor(a: &CsrMatrix, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = a.abs_mul_vec(x);
    let scale: Vec<f64> = ax.iter().zip(rhs).map(|(p, q)| p + q.abs()).collect();
    16.0 * f64::EPSILON * norm2(&scale)
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Stops when `|b - A x|_2 <= tol |b|_2`, or when the true residual has
/// reached the round-off floor of its own evaluation. Fails with
/// [`Error::NotConverged`] after `maxit` iterations.
pub fn cg_solve(a: &CsrMatrix, rhs: &[f64], tol: f64, maxit: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; a.dim()];
    cg_solve_from(a, rhs, &mut x, tol, maxit)?;
    Ok(x)
}

/// Conjugate gradients starting from the initial guess stored in `x`.
pub fn cg_solve_from(a: &CsrMatrix, rhs: &[f64], x: &mut [f64], tol: f64, maxit: usize) -> Result<SolveInfo> {
    let n = a.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: rhs.len() });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveInfo { iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    let mut rnorm = norm2(&r);
    if rnorm <= tol * bnorm {
        return Ok(SolveInfo { iterations: 0, residual: rnorm / bnorm });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=maxit {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NotConverged { iterations: it, residual: rnorm / bnorm });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rnorm = norm2(&r);
        if rnorm <= tol * bnorm {
            // guard against drift of the recursive residual
            let mut true_r = a.mul_vec(x);
            for i in 0..n {
                true_r[i] = rhs[i] - true_r[i];
            }
            let true_norm = norm2(&true_r);
            if true_norm <= (tol * bnorm).max(residual_floor(a, x, rhs)) {
                return Ok(SolveInfo { iterations: it, residual: true_norm / bnorm });
            }
            // residual replacement followed by a restart
            r = true_r;
            rnorm = true_norm;
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
                p[i] = z[i];
            }
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged { iterations: maxit, residual: rnorm / bnorm })
}

/// Preconditioned MINRES for symmetric, possibly indefinite systems.
/// The preconditioner is `diag(|a_ii|)`.
pub fn minres_solve(a: &CsrMatrix, rhs: &[f64], tol: f64, maxit: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: rhs.len() });
    }
    let mut x = vec![0.0; n];
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d.abs() } else { 1.0 })
        .collect();
    let accept = tol.max(1e-14) * 10.0;
    let mut used = 0;
    // the recurrences lose attainable accuracy, so restart on the true residual
    loop {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(q, p)| q - p).collect();
        let rnorm = norm2(&r);
        let floor = residual_floor(a, &x, rhs);
        if rnorm <= (accept * bnorm).max(floor) {
            return Ok(x);
        }
        if used >= maxit {
            return Err(Error::NotConverged { iterations: used, residual: rnorm / bnorm });
        }
        let inner_tol = (tol * bnorm / rnorm).min(0.5);
        let (d, its) = minres_pass(a, &r, &inv_diag, inner_tol, maxit - used)?;
        used += its;
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
    }
}

/// One run of preconditioned MINRES (Paige-Saunders recurrences) from zero,
/// stopping on the recurrence residual estimate.
fn minres_pass(a: &CsrMatrix, rhs: &[f64], inv_diag: &[f64], tol: f64, maxit: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.dim();
    let mut x = vec![0.0; n];
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(inv_diag).map(|(a, b)| a * b).collect() };
    let mut r1 = rhs.to_vec();
    let mut y = precond(&r1);
    let beta1 = dot(&r1, &y);
    if beta1 <= 0.0 {
        return Err(Error::NotConverged { iterations: 0, residual: 1.0 });
    }
    let beta1 = beta1.sqrt();
    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut ay = vec![0.0; n];
    for it in 1..=maxit {
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|yi| s * yi).collect();
        a.mul_vec_into(&v, &mut ay);
        if it >= 2 {
            for i in 0..n {
                ay[i] -= (beta / oldb) * r1[i];
            }
        }
        let alfa = dot(&v, &ay);
        for i in 0..n {
            ay[i] -= (alfa / beta) * r2[i];
        }
        r1 = std::mem::replace(&mut r2, ay.clone());
        y = precond(&r2);
        oldb = beta;
        let b2 = dot(&r2, &y);
        if b2 < 0.0 {
            return Err(Error::NotConverged { iterations: it, residual: phibar / beta1 });
        }
        beta = b2.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, w.clone());
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        if phibar <= tol * beta1 || beta == 0.0 {
            return Ok((x, it));
        }
    }
    Ok((x, maxit))
}
