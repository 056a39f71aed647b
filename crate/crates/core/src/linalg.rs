//! Banded direct solvers used by the discrete operators.
//!
//! Meshes are generated ring by ring (disk) or row by row (rectangle), so
//! stiffness and mass matrices are banded with moderate bandwidth. A banded
//! Cholesky factors the definite operators, and a banded LU with partial
//! pivoting handles the indefinite shifted systems that appear along a
//! branch.

/// Symmetric banded matrix, lower triangle stored row-major.
///
/// Row `i` holds entries for columns `i-bw ..= i` at offsets `j - i + bw`.
#[derive(Clone, Debug)]
pub struct SymBanded {
    pub n: usize,
    pub bw: usize,
    data: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        SymBanded {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry (i, j); either triangle may be addressed.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if j > i { (j, i) } else { (i, j) };
        if r - c > self.bw {
            return 0.0;
        }
        self.data[self.idx(r, c)]
    }

    /// Accumulate into entry (i, j); either triangle may be addressed.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if j > i { (j, i) } else { (i, j) };
        assert!(r - c <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    /// y = A x using both triangles.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1) + (lo + self.bw - i)..i * (self.bw + 1) + self.bw + 1];
            let mut acc = 0.0;
            for (j, &a) in (lo..=i).zip(row.iter()) {
                acc += a * x[j];
                if j < i {
                    y[j] += a * x[i];
                }
            }
            y[i] += acc;
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    /// Banded Cholesky factorization A = L Lᵀ. Fails on non-SPD input.
    pub fn cholesky(&self) -> Option<BandedChol> {
        let n = self.n;
        let bw = self.bw;
        let mut l = self.data.clone();
        let w = bw + 1;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = j.saturating_sub(bw).max(lo_i);
                let mut s = l[i * w + (j + bw - i)];
                for k in lo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if j < i {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return None;
                    }
                    l[i * w + bw] = s.sqrt();
                }
            }
        }
        Some(BandedChol { n, bw, l })
    }
}

/// Cholesky factor of a [`SymBanded`] matrix.
#[derive(Clone, Debug)]
pub struct BandedChol {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedChol {
    /// Solve A x = b, returning x.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for k in lo..i {
                s -= self.l[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = x[i];
            for k in i + 1..=hi {
                s -= self.l[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        x
    }
}

/// General banded matrix in LAPACK-style column storage with room for the
/// fill produced by partial pivoting.
///
/// Entry (i, j) lives at `data[j * ldab + (kl + ku + i - j)]` for
/// `j - ku - kl <= i <= j + kl`; the top `kl` rows of each column are the
/// fill region and stay zero until factorization.
#[derive(Clone, Debug)]
pub struct BandedGeneral {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandedGeneral {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let ldab = 2 * kl + ku + 1;
        BandedGeneral {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; n * ldab],
        }
    }

    /// Build from a symmetric pair: `A - c * B`, expanded to both triangles.
    pub fn from_sym_pair(a: &SymBanded, b: &SymBanded, c: f64) -> Self {
        assert_eq!(a.n, b.n);
        let bw = a.bw.max(b.bw);
        let n = a.n;
        let mut m = BandedGeneral::zeros(n, bw, bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let v = a.get(i, j) - c * b.get(i, j);
                m.set(i, j, v);
                if j < i {
                    m.set(j, i, v);
                }
            }
        }
        m
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i + self.ku + self.kl >= j && i <= j + self.kl);
        self.data[j * self.ldab + (self.kl + self.ku + i - j)] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.ku + self.kl < j || i > j + self.kl {
            return 0.0;
        }
        self.data[j * self.ldab + (self.kl + self.ku + i - j)]
    }

    /// LU factorization with partial pivoting (banded analogue of `dgbtrf`).
    pub fn lu(mut self) -> Option<BandedLu> {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let mut ipiv = vec![0usize; n];
        for k in 0..n {
            // pivot search in column k, rows k..=min(k+kl, n-1)
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut pmax = self.data[k * ldab + kv].abs();
            for i in k + 1..=imax {
                let v = self.data[k * ldab + (kv + i - k)].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            ipiv[k] = p;
            if pmax == 0.0 || !pmax.is_finite() {
                return None;
            }
            let jmax = (k + kv).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = j * ldab + (kv + k - j);
                    let b = j * ldab + (kv + p - j);
                    self.data.swap(a, b);
                }
            }
            let piv = self.data[k * ldab + kv];
            for i in k + 1..=imax {
                let m = self.data[k * ldab + (kv + i - k)] / piv;
                self.data[k * ldab + (kv + i - k)] = m;
                if m != 0.0 {
                    for j in k + 1..=jmax {
                        self.data[j * ldab + (kv + i - j)] -=
                            m * self.data[j * ldab + (kv + k - j)];
                    }
                }
            }
        }
        Some(BandedLu {
            n,
            kl,
            ku,
            ldab,
            data: self.data,
            ipiv,
        })
    }
}

/// LU factors of a [`BandedGeneral`] matrix.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// Solve A x = b, returning x.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = self.kl + self.ku;
        let mut x = b.to_vec();
        // forward: apply pivots and L
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                x.swap(k, p);
            }
            let imax = (k + kl).min(n - 1);
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=imax {
                    x[i] -= self.data[k * ldab + (kv + i - k)] * xk;
                }
            }
        }
        // backward: U has upper bandwidth kl + ku
        for i in (0..n).rev() {
            let jmax = (i + kv).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=jmax {
                s -= self.data[j * ldab + (kv + i - j)] * x[j];
            }
            x[i] = s / self.data[i * ldab + kv];
        }
        x
    }

    /// Reciprocal condition estimate from the pivot magnitudes: ratio of the
    /// smallest to largest |U_kk|. Crude, but catches near-singular shifts.
    pub fn pivot_ratio(&self) -> f64 {
        let kv = self.kl + self.ku;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..self.n {
            let d = self.data[k * self.ldab + kv].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if hi == 0.0 {
            0.0
        } else {
            lo / hi
        }
    }
}
