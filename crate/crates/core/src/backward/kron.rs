//! Banded direct solver for the Kronecker-sum system
//! `[I − dt·(F_Xᵀ ⊕ F_Xᵀ)]·vec(V) = vec(R)`.
//!
//! With column-major `vec`, `vec(F_Xᵀ V) = (I ⊗ F_Xᵀ)·vec(V)` and
//! `vec(V F_X) = (F_Xᵀ ⊗ I)·vec(V)`. A tridiagonal `F_X` therefore gives
//! nonzero diagonals at offsets `{0, ±1, ±n}`: block-tridiagonal, half
//! bandwidth `n`.

use nalgebra::DMatrix;

use crate::error::{Result, StddpError};
use crate::grid::Kernel;

/// Square band matrix. Row `i` stores columns `i − kl ..= i + ku + kl`; the
/// extra `kl` columns hold fill-in from partial pivoting.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    size: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(size: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            size,
            kl,
            ku,
            width,
            data: vec![0.0; size * width],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let s = self.slot(i, j);
        &mut self.data[s]
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band"
        );
        *self.at(i, j) += v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| self.get(i, j))
    }

    /// Offsets `j − i` of the diagonals holding at least one nonzero.
    pub fn nonzero_offsets(&self) -> Vec<isize> {
        let mut offsets: Vec<isize> = Vec::new();
        for d in -(self.kl as isize)..=(self.ku as isize) {
            let any = (0..self.size).any(|i| {
                let j = i as isize + d;
                j >= 0 && (j as usize) < self.size && self.get(i, j as usize) != 0.0
            });
            if any {
                offsets.push(d);
            }
        }
        offsets
    }

    pub fn max_row_nonzeros(&self) -> usize {
        (0..self.size)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.size - 1);
                (lo..=hi).filter(|&j| self.get(i, j) != 0.0).count()
            })
            .max()
            .unwrap_or(0)
    }
}

/// Largest `|i − j|` over the nonzeros of `m`.
fn bandwidth(m: &DMatrix<f64>) -> usize {
    let mut bw = 0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                bw = bw.max(i.abs_diff(j));
            }
        }
    }
    bw
}

/// Assemble `I − dt·(I ⊗ F_Xᵀ + F_Xᵀ ⊗ I)` in band storage.
pub fn kronecker_system(fx: &DMatrix<f64>, dt: f64) -> BandMatrix {
    let n = fx.nrows();
    let half = bandwidth(fx) * n;
    let mut m = BandMatrix::zeros(n * n, half, half);
    for p in 0..n * n {
        m.add(p, p, 1.0);
    }
    for j in 0..n {
        for i in 0..n {
            let p = i + n * j;
            for l in 0..n {
                // (F_Xᵀ V)_ij = Σ_l F_X[l, i] V[l, j]
                let a = fx[(l, i)];
                if a != 0.0 {
                    m.add(p, l + n * j, -dt * a);
                }
                // (V F_X)_ij = Σ_l V[i, l] F_X[l, j]
                let b = fx[(l, j)];
                if b != 0.0 {
                    m.add(p, i + n * l, -dt * b);
                }
            }
        }
    }
    m
}

/// LU factors with partial pivoting, LINPACK band layout.
#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn factor(mut a: BandMatrix) -> Result<Self> {
        let n = a.size;
        let (kl, ku) = (a.kl, a.ku);
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = a.data[a.slot(k, k)].abs();
            for r in k + 1..=last_row {
                let v = a.data[a.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(StddpError::SingularSystem(format!("zero pivot in column {k}")));
            }
            pivots.push(p);
            if p != k {
                for c in k..=last_col {
                    let (sk, sp) = (a.slot(k, c), a.slot(p, c));
                    a.data.swap(sk, sp);
                }
            }
            let pivot = a.data[a.slot(k, k)];
            for r in k + 1..=last_row {
                let s = a.slot(r, k);
                let l = a.data[s] / pivot;
                a.data[s] = l;
                if l != 0.0 {
                    for c in k + 1..=last_col {
                        let kc = a.data[a.slot(k, c)];
                        *a.at(r, c) -= l * kc;
                    }
                }
            }
        }
        Ok(BandLu { lu: a, pivots })
    }

    #[allow(clippy::needless_range_loop)] // band limits index both `a` and `b`
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.size;
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + a.kl).min(n - 1) {
                    b[r] -= a.data[a.slot(r, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for c in k + 1..=(k + a.kl + a.ku).min(n - 1) {
                s -= a.data[a.slot(k, c)] * b[c];
            }
            b[k] = s / a.data[a.slot(k, k)];
        }
    }
}

/// Factored Kronecker-sum system for one `(F_X, dt)` pair.
#[derive(Debug, Clone)]
pub struct KroneckerSystem {
    n: usize,
    fx: DMatrix<f64>,
    dt: f64,
    lu: BandLu,
}

impl KroneckerSystem {
    pub fn new(fx: &DMatrix<f64>, dt: f64) -> Result<Self> {
        let lu = BandLu::factor(kronecker_system(fx, dt))?;
        Ok(KroneckerSystem {
            n: fx.nrows(),
            fx: fx.clone(),
            dt,
            lu,
        })
    }

    /// True when this factorization can be reused for `(fx, dt)`.
    pub fn matches(&self, fx: &DMatrix<f64>, dt: f64) -> bool {
        self.dt == dt && &self.fx == fx
    }

    pub fn solve(&self, rhs: &Kernel) -> Kernel {
        assert_eq!(rhs.nrows(), self.n);
        // nalgebra storage is column-major, so the raw slice is vec(rhs)
        let mut x = rhs.clone();
        self.lu.solve_in_place(x.as_mut_slice());
        x
    }
}
