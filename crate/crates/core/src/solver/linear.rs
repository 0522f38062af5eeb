//! Damped Gauss-Newton steps by block-Jacobi preconditioned conjugate gradients.

use crate::scalar::Real;

use super::residuals::NormalEquations;

/// `(J^T J + lambda diag(J^T J))` over the block-sparse normal equations.
/// Sites without parameters act as identity rows.
pub(crate) struct DampedOperator<'n, T> {
    ne: &'n NormalEquations<T>,
    active: &'n [bool],
    damping: Vec<T>,
}

#[derive(Debug)]
pub(crate) struct CgOutcome<T> {
    pub step: Vec<T>,
    pub iterations: usize,
}

/// Conjugate gradients met a non-positive curvature direction.
#[derive(Debug)]
pub(crate) struct Breakdown;

impl<'n, T: Real> DampedOperator<'n, T> {
    pub fn new(ne: &'n NormalEquations<T>, active: &'n [bool], lambda: T) -> Self {
        let p = ne.p;
        let n = active.len();
        let diag_entry = |i: usize, a: usize| ne.diag[i * p * p + a * p + a];
        let max_diag = (0..n)
            .filter(|&i| active[i])
            .flat_map(|i| (0..p).map(move |a| (i, a)))
            .map(|(i, a)| diag_entry(i, a))
            .fold(T::zero(), T::max);
        let floor = (max_diag * T::lit(1e-9)).max(T::min_positive_value().sqrt());
        let damping = (0..n)
            .flat_map(|i| (0..p).map(move |a| (i, a)))
            .map(|(i, a)| lambda * diag_entry(i, a).max(floor))
            .collect();
        DampedOperator { ne, active, damping }
    }

    fn n(&self) -> usize {
        self.active.len() * self.ne.p
    }

    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let p = self.ne.p;
        let pp = p * p;
        for (i, &act) in self.active.iter().enumerate() {
            let xi = &x[i * p..(i + 1) * p];
            let yi = &mut y[i * p..(i + 1) * p];
            if !act {
                yi.copy_from_slice(xi);
                continue;
            }
            let block = &self.ne.diag[i * pp..(i + 1) * pp];
            for a in 0..p {
                let mut s = self.damping[i * p + a] * xi[a];
                for b in 0..p {
                    s = s + block[a * p + b] * xi[b];
                }
                yi[a] = s;
            }
        }
        for (k, &(i, j)) in self.ne.off_sites.iter().enumerate() {
            let block = &self.ne.off[k * pp..(k + 1) * pp];
            for a in 0..p {
                let mut si = T::zero();
                let mut sj = T::zero();
                for b in 0..p {
                    si = si + block[a * p + b] * x[j * p + b];
                    sj = sj + block[b * p + a] * x[i * p + b];
                }
                y[i * p + a] = y[i * p + a] + si;
                y[j * p + a] = y[j * p + a] + sj;
            }
        }
    }

    /// Cholesky factors of the damped diagonal blocks.
    fn preconditioner(&self) -> BlockJacobi<T> {
        let p = self.ne.p;
        let pp = p * p;
        let mut factors = vec![T::zero(); self.active.len() * pp];
        for (i, &act) in self.active.iter().enumerate() {
            let f = &mut factors[i * pp..(i + 1) * pp];
            if !act {
                for a in 0..p {
                    f[a * p + a] = T::one();
                }
                continue;
            }
            let mut m: Vec<T> = self.ne.diag[i * pp..(i + 1) * pp].to_vec();
            for a in 0..p {
                m[a * p + a] = m[a * p + a] + self.damping[i * p + a];
            }
            if !cholesky(&m, p, f) {
                // Fall back to the diagonal.
                f.iter_mut().for_each(|v| *v = T::zero());
                for a in 0..p {
                    f[a * p + a] = m[a * p + a].max(T::min_positive_value()).sqrt();
                }
            }
        }
        BlockJacobi { p, factors }
    }

    /// Solves `A x = b` to relative residual `tol`.
    pub fn solve(&self, b: &[T], tol: T, max_iters: usize) -> Result<CgOutcome<T>, Breakdown> {
        let n = self.n();
        let pre = self.preconditioner();
        let mut x = vec![T::zero(); n];
        let bnorm = dot(b, b).sqrt();
        if bnorm == T::zero() {
            return Ok(CgOutcome { step: x, iterations: 0 });
        }
        let mut r = b.to_vec();
        let mut z = vec![T::zero(); n];
        pre.apply(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![T::zero(); n];
        for it in 1..=max_iters {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) || !pap.is_finite() || !(rz > T::zero()) {
                return Err(Breakdown);
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] = x[k] + alpha * p[k];
                r[k] = r[k] - alpha * ap[k];
            }
            if dot(&r, &r).sqrt() <= tol * bnorm {
                return Ok(CgOutcome { step: x, iterations: it });
            }
            pre.apply(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        Ok(CgOutcome { step: x, iterations: max_iters })
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Lower Cholesky factor of the row-major `p x p` matrix `m` into `l`.
fn cholesky<T: Real>(m: &[T], p: usize, l: &mut [T]) -> bool {
    for a in 0..p {
        for b in 0..=a {
            let mut s = m[a * p + b];
            for k in 0..b {
                s = s - l[a * p + k] * l[b * p + k];
            }
            if a == b {
                if !(s > T::zero()) || !s.is_finite() {
                    return false;
                }
                l[a * p + a] = s.sqrt();
            } else {
                l[a * p + b] = s / l[b * p + b];
            }
        }
    }
    true
}

struct BlockJacobi<T> {
    p: usize,
    factors: Vec<T>,
}

impl<T: Real> BlockJacobi<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        let p = self.p;
        let pp = p * p;
        for (i, l) in self.factors.chunks_exact(pp).enumerate() {
            let rhs = &r[i * p..(i + 1) * p];
            let out = &mut z[i * p..(i + 1) * p];
            for a in 0..p {
                let mut s = rhs[a];
                for k in 0..a {
                    s = s - l[a * p + k] * out[k];
                }
                out[a] = s / l[a * p + a];
            }
            for a in (0..p).rev() {
                let mut s = out[a];
                for k in (a + 1)..p {
                    s = s - l[k * p + a] * out[k];
                }
                out[a] = s / l[a * p + a];
            }
        }
    }
}
