//! Dense complex linear algebra sized for boundary-element systems.
//!
//! Matrices are row-major `Vec<Complex64>`. Products route through three real
//! matrix products (the Karatsuba-style split (A_r+A_i)(B_r+B_i)) so the
//! well-tuned real kernel in `matrixmultiply` does the heavy lifting.
//! Factorizations are plain partial-pivot LU; systems here are a few thousand
//! unknowns at most and dominated by assembly, not solves.

use num_complex::Complex64;

use crate::{Result, WorkbenchError};

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    pub nr: usize,
    pub nc: usize,
    pub d: Vec<Complex64>,
}

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl CMat {
    pub fn zeros(nr: usize, nc: usize) -> CMat {
        CMat {
            nr,
            nc,
            d: vec![czero(); nr * nc],
        }
    }

    pub fn identity(n: usize) -> CMat {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m.d[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Complex64>(nr: usize, nc: usize, mut f: F) -> CMat {
        let mut d = Vec::with_capacity(nr * nc);
        for i in 0..nr {
            for j in 0..nc {
                d.push(f(i, j));
            }
        }
        CMat { nr, nc, d }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.d[i * self.nc + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Complex64 {
        &mut self.d[i * self.nc + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.d[i * self.nc..(i + 1) * self.nc]
    }

    fn planes(&self) -> (Vec<f64>, Vec<f64>) {
        let re = self.d.iter().map(|z| z.re).collect();
        let im = self.d.iter().map(|z| z.im).collect();
        (re, im)
    }

    /// Matrix product via three real products.
    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.nc, other.nr, "inner dimensions must agree");
        let (m, k, n) = (self.nr, self.nc, other.nc);
        let (ar, ai) = self.planes();
        let (br, bi) = other.planes();
        let asum: Vec<f64> = ar.iter().zip(&ai).map(|(x, y)| x + y).collect();
        let bsum: Vec<f64> = br.iter().zip(&bi).map(|(x, y)| x + y).collect();
        let mut p1 = vec![0.0f64; m * n];
        let mut p2 = vec![0.0f64; m * n];
        let mut p3 = vec![0.0f64; m * n];
        let gemm = |a: &[f64], b: &[f64], c: &mut [f64]| unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        };
        gemm(&ar, &br, &mut p1);
        gemm(&ai, &bi, &mut p2);
        gemm(&asum, &bsum, &mut p3);
        let mut d = Vec::with_capacity(m * n);
        for idx in 0..m * n {
            d.push(Complex64::new(p1[idx] - p2[idx], p3[idx] - p1[idx] - p2[idx]));
        }
        CMat { nr: m, nc: n, d }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.nc, x.len());
        let mut y = vec![czero(); self.nr];
        for i in 0..self.nr {
            let row = self.row(i);
            let mut acc = czero();
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[i] = acc;
        }
        y
    }

    pub fn scale(&mut self, s: Complex64) {
        for v in self.d.iter_mut() {
            *v *= s;
        }
    }

    /// self += s · other.
    pub fn add_scaled(&mut self, other: &CMat, s: Complex64) {
        assert_eq!(self.nr, other.nr);
        assert_eq!(self.nc, other.nc);
        for (a, b) in self.d.iter_mut().zip(other.d.iter()) {
            *a += s * b;
        }
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.nc, self.nr, |i, j| self.at(j, i))
    }

    pub fn conj_transpose(&self) -> CMat {
        CMat::from_fn(self.nc, self.nr, |i, j| self.at(j, i).conj())
    }

    /// Copy `sub` into this matrix with upper-left corner at (i0, j0).
    pub fn set_block(&mut self, i0: usize, j0: usize, sub: &CMat) {
        assert!(i0 + sub.nr <= self.nr && j0 + sub.nc <= self.nc);
        for i in 0..sub.nr {
            let src = sub.row(i);
            let dst = &mut self.d[(i0 + i) * self.nc + j0..(i0 + i) * self.nc + j0 + sub.nc];
            dst.copy_from_slice(src);
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm1(&self) -> f64 {
        let mut cols = vec![0.0f64; self.nc];
        for i in 0..self.nr {
            for (j, v) in self.row(i).iter().enumerate() {
                cols[j] += v.norm();
            }
        }
        cols.into_iter().fold(0.0, f64::max)
    }
}

/// Partial-pivot LU factorization, PA = LU with unit-diagonal L.
pub struct LuDecomp {
    lu: CMat,
    piv: Vec<usize>,
}

pub fn lu_factor(mut a: CMat) -> Result<LuDecomp> {
    if a.nr != a.nc {
        return Err(WorkbenchError::InvalidParameter(
            "LU factorization requires a square matrix".into(),
        ));
    }
    let n = a.nr;
    let mut piv = vec![0usize; n];
    for k in 0..n {
        // Pivot on the largest |re| + |im|; cheap and scale-equivalent to
        // the modulus.
        let mut p = k;
        let mut best = a.at(k, k).re.abs() + a.at(k, k).im.abs();
        for i in k + 1..n {
            let m = a.at(i, k).re.abs() + a.at(i, k).im.abs();
            if m > best {
                best = m;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(WorkbenchError::SingularMatrix(format!(
                "exact zero pivot at elimination step {k} of {n}"
            )));
        }
        piv[k] = p;
        if p != k {
            for j in 0..n {
                let t = a.at(k, j);
                *a.at_mut(k, j) = a.at(p, j);
                *a.at_mut(p, j) = t;
            }
        }
        let akk = a.at(k, k);
        let inv = akk.inv();
        for i in k + 1..n {
            let l = a.at(i, k) * inv;
            *a.at_mut(i, k) = l;
            if l.re != 0.0 || l.im != 0.0 {
                // row_i[k+1..] -= l * row_k[k+1..], on contiguous slices.
                let (head, tail) = a.d.split_at_mut(i * n);
                let rk = &head[k * n + k + 1..k * n + n];
                let ri = &mut tail[k + 1..n];
                for (x, y) in ri.iter_mut().zip(rk.iter()) {
                    *x -= l * y;
                }
            }
        }
    }
    Ok(LuDecomp { lu: a, piv })
}

impl LuDecomp {
    pub fn n(&self) -> usize {
        self.lu.nr
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for k in 0..n {
            if self.piv[k] != k {
                x.swap(k, self.piv[k]);
            }
        }
        // L (unit diagonal), then U.
        for i in 1..n {
            let mut acc = x[i];
            let row = self.lu.row(i);
            for j in 0..i {
                acc -= row[j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= row[j] * x[j];
            }
            x[i] = acc / row[i];
        }
        x
    }

    /// Solve Aᴴ x = b (conjugate transpose).
    pub fn solve_conj_transpose(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // A = Pᵀ L U, so Aᴴ = Uᴴ Lᴴ P: forward solve with Uᴴ, back solve
        // with Lᴴ, then undo the row permutation.
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.at(j, i).conj() * x[j];
            }
            x[i] = acc / self.lu.at(i, i).conj();
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu.at(j, i).conj() * x[j];
            }
            x[i] = acc;
        }
        for k in (0..n).rev() {
            if self.piv[k] != k {
                x.swap(k, self.piv[k]);
            }
        }
        x
    }

    /// Solve for every column of B.
    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let n = self.n();
        assert_eq!(b.nr, n);
        let mut out = CMat::zeros(n, b.nc);
        let mut col = vec![czero(); n];
        for j in 0..b.nc {
            for i in 0..n {
                col[i] = b.at(i, j);
            }
            let x = self.solve(&col);
            for i in 0..n {
                *out.at_mut(i, j) = x[i];
            }
        }
        out
    }
}

/// Hager-style estimate of the 1-norm condition number from a factorization.
///
/// `norm1_a` is ‖A‖₁ of the original matrix; the routine estimates ‖A⁻¹‖₁ by
/// a few transpose-pair solves and returns the product.
pub fn condest_1norm(lu: &LuDecomp, norm1_a: f64) -> f64 {
    let n = lu.n();
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
    let mut est = 0.0f64;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let y = lu.solve(&x);
        est = y.iter().map(|z| z.norm()).sum();
        let xi: Vec<Complex64> = y
            .iter()
            .map(|z| {
                let m = z.norm();
                if m == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    z / m
                }
            })
            .collect();
        let z = lu.solve_conj_transpose(&xi);
        let (mut jmax, mut zmax) = (0usize, 0.0f64);
        for (j, v) in z.iter().enumerate() {
            let m = v.norm();
            if m > zmax {
                zmax = m;
                jmax = j;
            }
        }
        let zx: f64 = z
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        if zmax <= zx.abs() || jmax == last_j {
            break;
        }
        last_j = jmax;
        for v in x.iter_mut() {
            *v = czero();
        }
        x[jmax] = Complex64::new(1.0, 0.0);
    }
    est * norm1_a
}

/// Smallest singular value by inverse power iteration on AᴴA, reusing an LU
/// factorization of A: each step applies (AᴴA)⁻¹ = A⁻¹ A⁻ᴴ.
pub fn sigma_min_estimate(lu: &LuDecomp, iters: usize, seed: u64) -> f64 {
    let n = lu.n();
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut v: Vec<Complex64> = (0..n).map(|_| Complex64::new(next(), next())).collect();
    let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in v.iter_mut() {
        *z /= nv;
    }
    let mut lam = 0.0f64;
    for _ in 0..iters.max(1) {
        let w = lu.solve_conj_transpose(&v);
        let u = lu.solve(&w);
        lam = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if lam == 0.0 || !lam.is_finite() {
            return 0.0;
        }
        for z in u.iter().zip(v.iter_mut()) {
            *z.1 = z.0 / lam;
        }
    }
    1.0 / lam.sqrt()
}

/// Discrete Fourier coefficients of values on the uniform periodic grid
/// t_j = 2πj/n: c_m = (1/n) Σ_j v_j e^{−i m t_j}, stored for m = 0..n−1
/// (indices above n/2 represent negative frequencies m−n).
pub fn dft_coeffs(values: &[Complex64]) -> Vec<Complex64> {
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    let base = -2.0 * std::f64::consts::PI / n as f64;
    for m in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, v) in values.iter().enumerate() {
            let ph = base * ((m * j) % n) as f64;
            acc += v * Complex64::new(ph.cos(), ph.sin());
        }
        out.push(acc / n as f64);
    }
    out
}

/// Resample grid values onto a finer uniform grid of even size m >= n by
/// evaluating the trigonometric interpolant (Nyquist mode split evenly
/// between ±n/2 so real data stays real).
pub fn trig_resample(values: &[Complex64], m: usize) -> Vec<Complex64> {
    let n = values.len();
    assert!(n % 2 == 0 && m % 2 == 0 && m >= n, "need even sizes, m >= n");
    if m == n {
        return values.to_vec();
    }
    let coeffs = dft_coeffs(values);
    let mut out = Vec::with_capacity(m);
    let step = 2.0 * std::f64::consts::PI / m as f64;
    let half = n / 2;
    for j in 0..m {
        let t = step * j as f64;
        let mut acc = coeffs[0];
        for q in 1..half {
            let (s, c) = (q as f64 * t).sin_cos();
            acc += coeffs[q] * Complex64::new(c, s);
            acc += coeffs[n - q] * Complex64::new(c, -s);
        }
        let (s, c) = (half as f64 * t).sin_cos();
        acc += coeffs[half] * 0.5 * (Complex64::new(c, s) + Complex64::new(c, -s));
        out.push(acc);
    }
    out
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial from the Chebyshev-like initial guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(x) and P_n'(x) by upward recurrence.
            let (mut p0, mut p1) = (1.0f64, x);
            for l in 2..=n {
                let p2 = ((2 * l - 1) as f64 * x * p1 - (l - 1) as f64 * p0) / l as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre quadrature of f over [a, b] split into `panels`
/// equal panels with `order` nodes each.
pub fn composite_gl<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    panels: usize,
    order: usize,
    mut f: F,
) -> f64 {
    let (xs, ws) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in xs.iter().zip(&ws) {
            total += w * 0.5 * h * f(mid + 0.5 * h * x);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    const SOLVE_REL_TOL: f64 = 1e-10;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn seeded_matrix(nr: usize, nc: usize, seed: u64) -> CMat {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        CMat::from_fn(nr, nc, |_, _| c(next(), next()))
    }

    #[test]
    fn matmul_matches_naive_product() {
        let a = seeded_matrix(17, 13, 0xabcdef);
        let b = seeded_matrix(13, 9, 0x123456);
        let fast = a.matmul(&b);
        let mut naive = CMat::zeros(17, 9);
        for i in 0..17 {
            for j in 0..9 {
                let mut acc = c(0.0, 0.0);
                for k in 0..13 {
                    acc += a.at(i, k) * b.at(k, j);
                }
                *naive.at_mut(i, j) = acc;
            }
        }
        for idx in 0..fast.d.len() {
            assert!((fast.d[idx] - naive.d[idx]).norm() < 1e-13);
        }
    }

    #[test]
    fn lu_solves_dense_systems() {
        let n = 40;
        let a = seeded_matrix(n, n, 0xfeed);
        let x_true: Vec<Complex64> = (0..n).map(|i| c(i as f64 * 0.1 - 1.0, (i % 5) as f64)).collect();
        let b = a.matvec(&x_true);
        let lu = lu_factor(a.clone()).unwrap();
        let x = lu.solve(&b);
        let err: f64 = x
            .iter()
            .zip(x_true.iter())
            .map(|(u, v)| (u - v).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale: f64 = x_true.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / scale < SOLVE_REL_TOL, "relative error {}", err / scale);

        // Conjugate-transpose solve: check the residual of Aᴴ x = b directly.
        let xh = lu.solve_conj_transpose(&b);
        let ah = a.conj_transpose();
        let r = ah.matvec(&xh);
        let resid: f64 = r
            .iter()
            .zip(b.iter())
            .map(|(u, v)| (u - v).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let bn: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(resid / bn < SOLVE_REL_TOL, "adjoint residual {}", resid / bn);
    }

    #[test]
    fn lu_rejects_singular_matrices() {
        let mut a = CMat::zeros(3, 3);
        *a.at_mut(0, 0) = c(1.0, 0.0);
        *a.at_mut(1, 1) = c(2.0, 0.0);
        // Third row identically zero.
        assert!(matches!(
            lu_factor(a),
            Err(WorkbenchError::SingularMatrix(_))
        ));
    }

    #[test]
    fn condition_estimate_is_tight_for_diagonal_matrices() {
        let n = 12;
        let mut a = CMat::zeros(n, n);
        for i in 0..n {
            *a.at_mut(i, i) = c(1.0 + i as f64, 0.0);
        }
        let norm1 = a.norm1();
        assert_eq!(norm1, n as f64);
        let lu = lu_factor(a).unwrap();
        let est = condest_1norm(&lu, norm1);
        let exact = n as f64 * 1.0; // ‖A⁻¹‖₁ = 1 for this diagonal
        assert!(est >= exact * 0.99 && est <= exact * 3.0, "estimate {est} vs {exact}");

        let id = CMat::identity(5);
        let lu = lu_factor(id.clone()).unwrap();
        let est = condest_1norm(&lu, id.norm1());
        assert!((est - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_min_matches_diagonal_spectrum() {
        let n = 8;
        let mut a = CMat::zeros(n, n);
        let norms = [3.0, 1.5, 0.8, 0.1, 2.2, 4.0, 0.9, 1.1];
        for i in 0..n {
            // Complex phases; singular values are the moduli.
            let phase = 0.7 * i as f64;
            *a.at_mut(i, i) = c(norms[i] * phase.cos(), norms[i] * phase.sin());
        }
        let lu = lu_factor(a).unwrap();
        let sm = sigma_min_estimate(&lu, 60, 0x5eed);
        assert!((sm - 0.1).abs() < 1e-6, "sigma_min {sm}");
    }

    #[test]
    fn block_and_norm_helpers() {
        let mut big = CMat::zeros(4, 4);
        let sub = seeded_matrix(2, 2, 0x42);
        big.set_block(1, 2, &sub);
        assert_eq!(big.at(1, 2), sub.at(0, 0));
        assert_eq!(big.at(2, 3), sub.at(1, 1));
        assert_eq!(big.at(0, 0), c(0.0, 0.0));

        let m = CMat::from_fn(2, 2, |i, j| c((i + 1) as f64, (j as f64) - 1.0));
        // Column sums of |entry|: check against hand computation.
        let col0 = m.at(0, 0).norm() + m.at(1, 0).norm();
        let col1 = m.at(0, 1).norm() + m.at(1, 1).norm();
        assert_eq!(m.norm1(), col0.max(col1));
        let f = m.frobenius();
        let want = (m.d.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
        assert_eq!(f, want);
    }

    #[test]
    fn dft_picks_out_single_modes() {
        let n = 32;
        for mode in [0usize, 1, 5, 15] {
            let vals: Vec<Complex64> = (0..n)
                .map(|j| {
                    let t = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    Complex64::new(0.0, mode as f64 * t).exp()
                })
                .collect();
            let c = dft_coeffs(&vals);
            for (m, cm) in c.iter().enumerate() {
                let want = if m == mode { 1.0 } else { 0.0 };
                assert!(
                    (cm - Complex64::new(want, 0.0)).norm() < 1e-13,
                    "mode {mode}, coeff {m}: {cm}"
                );
            }
        }
    }

    #[test]
    fn trig_resample_reproduces_band_limited_data() {
        let n = 16;
        let m = 48;
        let f = |t: f64| {
            Complex64::new((3.0 * t).cos() + 0.5 * t.sin(), (2.0 * t).sin() - 1.0)
        };
        let coarse: Vec<Complex64> = (0..n)
            .map(|j| f(2.0 * std::f64::consts::PI * j as f64 / n as f64))
            .collect();
        let fine = trig_resample(&coarse, m);
        for (j, v) in fine.iter().enumerate() {
            let t = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            assert!((v - f(t)).norm() < 1e-13, "resample at t = {t}: {v}");
        }
    }

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        // Order n integrates degree 2n-1 exactly: ∫ x^22 dx over [-1,1].
        let (xs, ws) = gauss_legendre(12);
        assert_eq!(xs.len(), 12);
        let got: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(22)).sum();
        // Nodes are accurate to about one ulp; the steep monomial amplifies
        // that to a few parts in 1e15 of the integral.
        assert!((got - 2.0 / 23.0).abs() < 1e-14, "got {got}");
        let total: f64 = ws.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn composite_gl_integrates_exponential() {
        let got = composite_gl(0.0, 2.0, 3, 10, |x| x.exp());
        assert!((got - (2.0f64.exp() - 1.0)).abs() < 1e-13, "got {got}");
    }
}
