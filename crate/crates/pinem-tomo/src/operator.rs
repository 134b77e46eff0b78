//! The truncated forward operator.
//!
//! A state `rho` on `{0, .., N-1}` produces the spectrogram
//!
//! `y(theta, l) = sum_{j,k} e^{i(l-j)theta} J_{l-j}(2g) rho_{j,k}
//!                e^{i(k-l)theta} J_{l-k}(2g)`,
//!
//! one row per mixing angle. Two evaluation paths are provided. The direct
//! path organizes the double sum by off-diagonal, costing `O(N^3 + M N^2)`.
//! The fast path factors the operator through length-`L = 2N-1` DFTs,
//!
//! `y = F*^(1) Q^(1) F^(2) M_dtilde F*^(2) Gtilde(rho)`,
//!
//! where `Gtilde` lays out the off-diagonals of `rho` as rows, `M_dtilde`
//! multiplies by a precomputed table, and the outer transforms run over the
//! row index and the angle; the cost drops to `O(M N (log M + log N))` for
//! equidistant angles. Dropping the outer two transforms gives the reduced
//! operator whose table norm is what the instability experiments measure.

use crate::density::HermitianMatrix;
use crate::dft::FftPair;
use crate::special::bessel_j_seq;
use crate::{phi_index, row_of, Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

const DENSE_GUARD: usize = 64;

fn sqrt_2pi() -> f64 {
    (2.0 * PI).sqrt()
}

/// Measurement angles: either `M` equidistant nodes `theta_m = 2 pi m / M`
/// or an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub enum AngleSet {
    Equidistant(usize),
    Explicit(Vec<f64>),
}

impl AngleSet {
    pub fn len(&self) -> usize {
        match self {
            AngleSet::Equidistant(m) => *m,
            AngleSet::Explicit(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn angle(&self, m: usize) -> f64 {
        match self {
            AngleSet::Equidistant(count) => 2.0 * PI * m as f64 / *count as f64,
            AngleSet::Explicit(v) => v[m],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.angle(m)).collect()
    }
}

/// The forward operator for fixed size, coupling and angle set, with the
/// multiplier table `dtilde` precomputed once and shared by every
/// evaluation (the table is immutable; evaluations are pure).
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    n: usize,
    g: f64,
    angles: AngleSet,
    /// `L x L` row-major; row `r` holds the off-diagonal frequency
    /// `k = phi_index(r)`, columns are DFT bins.
    dtilde: Vec<Complex64>,
    fft_l: FftPair,
    fft_m: FftPair,
}

/// A spectrogram: real `M x N` table `y(theta_m, l)` plus its angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    angles: Vec<f64>,
    n: usize,
    values: Vec<f64>, // row-major, angle-major
}

impl Spectrogram {
    pub fn new(angles: Vec<f64>, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != angles.len() * n {
            return Err(Error::Shape(format!(
                "{} angles x {} columns != {} values",
                angles.len(),
                n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || angles.iter().any(|v| !v.is_finite()) {
            return Err(Error::Matrix("non-finite spectrogram".into()));
        }
        Ok(Spectrogram { angles, n, values })
    }

    pub fn m(&self) -> usize {
        self.angles.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn value(&self, m: usize, l: usize) -> f64 {
        self.values[m * self.n + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Off-diagonal-indexed `L x L` complex table; row `r` is the signed
/// off-diagonal `m = phi_index(r)`, so every `|m| < N` is present and the
/// zero-padding region of each row is exactly zero on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OffDiagonalTable {
    n: usize,
    data: Vec<Complex64>,
}

impl OffDiagonalTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        2 * self.n - 1
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        let l = self.l();
        &self.data[r * l..(r + 1) * l]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// One row of the multiplier table for off-diagonal `k`:
/// `dtilde(k, l) = sum_p K(k, p) e^{2 pi i p l / L}` over `p` in the signed
/// index set, with `K(k, p) = sqrt(2 pi) J_{p-k}(2|g|) J_p(2|g|)`.
///
/// Equivalently row `k` is `sqrt(L)` times the unitary inverse DFT of the
/// kernel row. Standalone so diagnostics can scan the table without
/// building an operator.
pub fn dtilde_row(n: usize, g: f64, k: i64) -> Vec<Complex64> {
    let l = 2 * n - 1;
    let js = bessel_j_seq(l - 1, 2.0 * g.abs());
    let mut row = kernel_row(&js, k, n);
    FftPair::new(l).inverse_inplace(&mut row);
    row
}

/// Kernel row in storage (phi) column order, before the DFT.
pub(crate) fn kernel_row(js: &[f64], k: i64, n: usize) -> Vec<Complex64> {
    let l = 2 * n - 1;
    let jval = |idx: i64| -> f64 {
        let v = js[idx.unsigned_abs() as usize];
        if idx < 0 && idx % 2 != 0 {
            -v
        } else {
            v
        }
    };
    let s = sqrt_2pi();
    (0..l)
        .map(|c| {
            let p = phi_index(c, n);
            Complex64::new(s * jval(p - k) * jval(p), 0.0)
        })
        .collect()
}

impl ForwardOperator {
    /// Operator with `m` equidistant angles `theta_m = 2 pi m / M`.
    pub fn new_equidistant(n: usize, g: f64, m: usize) -> Result<Self> {
        Self::build(n, g, AngleSet::Equidistant(m))
    }

    /// Operator with an explicit angle list; evaluation falls back to the
    /// per-angle Fourier series in theta, `O(M N^2)` instead of
    /// `O(M N log(MN))`.
    pub fn new_with_angles(n: usize, g: f64, angles: Vec<f64>) -> Result<Self> {
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Parameter("non-finite angle".into()));
        }
        Self::build(n, g, AngleSet::Explicit(angles))
    }

    fn build(n: usize, g: f64, angles: AngleSet) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("size must be at least 1".into()));
        }
        if !(g >= 0.0) || !g.is_finite() {
            return Err(Error::Parameter(format!(
                "coupling must be finite and nonnegative, got {g}"
            )));
        }
        if angles.is_empty() {
            return Err(Error::Parameter("need at least one angle".into()));
        }
        let l = 2 * n - 1;
        let fft_l = FftPair::new(l);
        let js = bessel_j_seq(l - 1, 2.0 * g.abs());
        let mut dtilde = Vec::with_capacity(l * l);
        for r in 0..l {
            dtilde.extend_from_slice(&kernel_row(&js, phi_index(r, n), n));
        }
        fft_l.inverse_inplace(&mut dtilde);
        let fft_m = FftPair::new(angles.len());
        Ok(ForwardOperator {
            n,
            g,
            angles,
            dtilde,
            fft_l,
            fft_m,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn m(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &AngleSet {
        &self.angles
    }

    pub fn is_equidistant(&self) -> bool {
        matches!(self.angles, AngleSet::Equidistant(_))
    }

    fn l(&self) -> usize {
        2 * self.n - 1
    }

    pub fn dtilde(&self, k: i64, bin: usize) -> Complex64 {
        self.dtilde[row_of(k, self.n) * self.l() + bin]
    }

    fn check_input(&self, rho: &HermitianMatrix) -> Result<()> {
        if rho.n() != self.n {
            return Err(Error::Shape(format!(
                "state is {}x{} but the operator expects {}",
                rho.n(),
                rho.n(),
                self.n
            )));
        }
        Ok(())
    }

    fn check_data(&self, y: &Spectrogram) -> Result<()> {
        if y.m() != self.m() || y.n() != self.n {
            return Err(Error::Shape(format!(
                "data is {}x{} but the operator expects {}x{}",
                y.m(),
                y.n(),
                self.m(),
                self.n
            )));
        }
        Ok(())
    }

    /// Off-diagonal layout: row `r` holds `rho_{c, c + phi(r)}` in the
    /// valid column range, zero elsewhere.
    fn gtilde(&self, rho: &HermitianMatrix) -> Vec<Complex64> {
        let (n, l) = (self.n, self.l());
        let mut w = vec![Complex64::new(0.0, 0.0); l * l];
        let e = rho.entries();
        for r in 0..l {
            let d = phi_index(r, n);
            let lo = (-d).max(0) as usize;
            let hi = (n as i64).min(n as i64 - d) as usize;
            for c in lo..hi {
                w[r * l + c] = e[(c, (c as i64 + d) as usize)];
            }
        }
        w
    }

    /// The reduced table `M_dtilde F*^(2) Gtilde(rho)`: per-row inverse DFT
    /// (normalized by `1/L`) of the off-diagonal layout, multiplied by the
    /// dtilde table. Its Frobenius norm is the instability observable.
    pub fn reduced_forward(&self, rho: &HermitianMatrix) -> Result<OffDiagonalTable> {
        self.check_input(rho)?;
        let l = self.l();
        let mut w = self.gtilde(rho);
        self.fft_l.inverse_inplace(&mut w);
        let inv_l = 1.0 / l as f64;
        for (v, d) in w.iter_mut().zip(&self.dtilde) {
            *v *= d * inv_l;
        }
        Ok(OffDiagonalTable { n: self.n, data: w })
    }

    /// Full table of Fourier coefficients in theta: forward DFT of the
    /// reduced table rows. Row `r` of the result holds the coefficient of
    /// `e^{i phi(r) theta}` for every energy column.
    fn theta_coefficients(&self, rho: &HermitianMatrix) -> Vec<Complex64> {
        let mut w = self.reduced_forward(rho).expect("checked").data;
        self.fft_l.forward_inplace(&mut w);
        w
    }

    /// Fast evaluation. Equidistant angles fold the theta-series through a
    /// length-`M` DFT; explicit angles evaluate the series directly.
    pub fn forward_fast(&self, rho: &HermitianMatrix) -> Result<Spectrogram> {
        self.check_input(rho)?;
        let (n, l, m) = (self.n, self.l(), self.m());
        let a = self.theta_coefficients(rho);
        let scale = 1.0 / sqrt_2pi();
        let mut values = vec![0.0; m * n];
        match &self.angles {
            AngleSet::Equidistant(_) => {
                // Fold coefficient rows onto the angle grid modulo M, then
                // one inverse DFT per energy column.
                let mut b = vec![Complex64::new(0.0, 0.0); m * n];
                for r in 0..l {
                    let t = phi_index(r, n).rem_euclid(m as i64) as usize;
                    for c in 0..n {
                        b[t * n + c] += a[r * l + c];
                    }
                }
                let mut col = vec![Complex64::new(0.0, 0.0); m];
                for c in 0..n {
                    for t in 0..m {
                        col[t] = b[t * n + c];
                    }
                    self.fft_m.inverse_inplace(&mut col);
                    for t in 0..m {
                        values[t * n + c] = col[t].re * scale;
                    }
                }
            }
            AngleSet::Explicit(angles) => {
                for (t, &theta) in angles.iter().enumerate() {
                    for r in 0..l {
                        let phase = Complex64::from_polar(1.0, phi_index(r, n) as f64 * theta);
                        for c in 0..n {
                            values[t * n + c] += (phase * a[r * l + c]).re * scale;
                        }
                    }
                }
            }
        }
        Spectrogram::new(self.angles.to_vec(), n, values)
    }

    /// Direct evaluation of the defining double sum, organized by
    /// off-diagonal: `S(d, l) = sum_j J_{l-j} J_{l-j-d} rho_{j, j+d}`, then
    /// `y(theta, l) = Re sum_d e^{i d theta} S(d, l)`. No DFTs involved, so
    /// it serves as the independent reference for the fast path.
    pub fn forward_direct(&self, rho: &HermitianMatrix) -> Result<Spectrogram> {
        self.check_input(rho)?;
        let (n, l, m) = (self.n, self.l(), self.m());
        let js = bessel_j_seq(l - 1, 2.0 * self.g.abs());
        let jval = |idx: i64| -> f64 {
            let v = js[idx.unsigned_abs() as usize];
            if idx < 0 && idx % 2 != 0 {
                -v
            } else {
                v
            }
        };
        let e = rho.entries();
        let mut s = vec![Complex64::new(0.0, 0.0); l * n];
        for r in 0..l {
            let d = phi_index(r, n);
            let lo = (-d).max(0) as usize;
            let hi = (n as i64).min(n as i64 - d) as usize;
            for lcol in 0..n {
                let li = lcol as i64;
                let mut acc = Complex64::new(0.0, 0.0);
                for j in lo..hi {
                    let w = jval(li - j as i64) * jval(li - j as i64 - d);
                    if w != 0.0 {
                        acc += w * e[(j, (j as i64 + d) as usize)];
                    }
                }
                s[r * n + lcol] = acc;
            }
        }
        let mut values = vec![0.0; m * n];
        for t in 0..m {
            let theta = self.angles.angle(t);
            for r in 0..l {
                let d = phi_index(r, n);
                let phase = Complex64::from_polar(1.0, d as f64 * theta);
                for lcol in 0..n {
                    values[t * n + lcol] += (phase * s[r * n + lcol]).re;
                }
            }
        }
        Spectrogram::new(self.angles.to_vec(), n, values)
    }

    /// Adjoint with respect to the real data inner product and the
    /// Frobenius inner product on Hermitian matrices:
    /// `<forward(rho), y> = <rho, adjoint(y)>_F` for all inputs. Runs the
    /// decomposition backwards with conjugated multipliers.
    pub fn adjoint_apply(&self, y: &Spectrogram) -> Result<HermitianMatrix> {
        self.check_data(y)?;
        let (n, l, m) = (self.n, self.l(), self.m());
        let scale = 1.0 / sqrt_2pi();

        // Coefficient table A*: adjoint of the theta evaluation.
        let mut a = vec![Complex64::new(0.0, 0.0); l * l];
        match &self.angles {
            AngleSet::Equidistant(_) => {
                let mut c_tab = vec![Complex64::new(0.0, 0.0); m * n];
                let mut col = vec![Complex64::new(0.0, 0.0); m];
                for c in 0..n {
                    for t in 0..m {
                        col[t] = Complex64::new(y.value(t, c), 0.0);
                    }
                    self.fft_m.forward_inplace(&mut col);
                    for t in 0..m {
                        c_tab[t * n + c] = col[t];
                    }
                }
                for r in 0..l {
                    let t = phi_index(r, n).rem_euclid(m as i64) as usize;
                    for c in 0..n {
                        a[r * l + c] = c_tab[t * n + c] * scale;
                    }
                }
            }
            AngleSet::Explicit(angles) => {
                for r in 0..l {
                    let d = phi_index(r, n) as f64;
                    for (t, &theta) in angles.iter().enumerate() {
                        let phase = Complex64::from_polar(scale, -d * theta);
                        for c in 0..n {
                            a[r * l + c] += phase * y.value(t, c);
                        }
                    }
                }
            }
        }

        // Reverse the inner chain: plain inverse DFT rows, conjugated
        // multiplier, forward DFT rows with 1/L, scatter to off-diagonals.
        self.fft_l.inverse_inplace(&mut a);
        let inv_l = 1.0 / l as f64;
        for (v, d) in a.iter_mut().zip(&self.dtilde) {
            *v *= d.conj() * inv_l;
        }
        self.fft_l.forward_inplace(&mut a);

        let mut out = DMatrix::<Complex64>::zeros(n, n);
        for r in 0..l {
            let d = phi_index(r, n);
            let lo = (-d).max(0) as usize;
            let hi = (n as i64).min(n as i64 - d) as usize;
            for c in lo..hi {
                out[(c, (c as i64 + d) as usize)] += a[r * l + c];
            }
        }
        Ok(HermitianMatrix::hermitized(out))
    }

    /// Dense real matrix of the operator in the orthonormal Hermitian
    /// basis: `N` diagonal generators `E_jj`, then for each `j < k` the
    /// real generator `(e_j e_k* + e_k e_j*)/sqrt(2)`, then the imaginary
    /// generators `(i e_j e_k* - i e_k e_j*)/sqrt(2)`, each block in
    /// lexicographic order. Rows are `(angle, energy)` pairs, angle-major.
    ///
    /// Guarded at `N <= 64` unless `allow_large` (cost `O(M N^3)`).
    pub fn assemble_dense(&self, allow_large: bool) -> Result<DMatrix<f64>> {
        if self.n > DENSE_GUARD && !allow_large {
            return Err(Error::SizeGuard {
                n: self.n,
                guard: DENSE_GUARD,
            });
        }
        let (n, m) = (self.n, self.m());
        let js = bessel_j_seq(2 * n - 2, 2.0 * self.g.abs());
        let jval = |idx: i64| -> f64 {
            let v = js[idx.unsigned_abs() as usize];
            if idx < 0 && idx % 2 != 0 {
                -v
            } else {
                v
            }
        };
        let sqrt2 = 2.0f64.sqrt();
        let mut dense = DMatrix::<f64>::zeros(m * n, n * n);
        // Diagonal block: angle-independent columns J_{l-j}^2.
        for j in 0..n {
            for t in 0..m {
                for lcol in 0..n {
                    let w = jval(lcol as i64 - j as i64);
                    dense[(t * n + lcol, j)] = w * w;
                }
            }
        }
        let mut col = n;
        for pass in 0..2 {
            for j in 0..n {
                for k in j + 1..n {
                    for t in 0..m {
                        let ang = (k - j) as f64 * self.angles.angle(t);
                        let trig = if pass == 0 { sqrt2 * ang.cos() } else { -sqrt2 * ang.sin() };
                        for lcol in 0..n {
                            let w = jval(lcol as i64 - j as i64) * jval(lcol as i64 - k as i64);
                            dense[(t * n + lcol, col)] = trig * w;
                        }
                    }
                    col += 1;
                }
            }
        }
        Ok(dense)
    }
}

/// Coordinates of a Hermitian matrix in the basis used by
/// [`ForwardOperator::assemble_dense`], so that
/// `dense * coordinates(rho) == vec(forward(rho))`.
pub fn hermitian_coordinates(h: &HermitianMatrix) -> nalgebra::DVector<f64> {
    let n = h.n();
    let e = h.entries();
    let sqrt2 = 2.0f64.sqrt();
    let mut out = nalgebra::DVector::<f64>::zeros(n * n);
    for j in 0..n {
        out[j] = e[(j, j)].re;
    }
    let mut idx = n;
    for j in 0..n {
        for k in j + 1..n {
            out[idx] = sqrt2 * e[(j, k)].re;
            idx += 1;
        }
    }
    for j in 0..n {
        for k in j + 1..n {
            out[idx] = sqrt2 * e[(j, k)].im;
            idx += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::square_state;
    use crate::sequences::make_corner_probe;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                m[(j, k)] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
        HermitianMatrix::hermitized(m)
    }

    /// Literal triple loop over the defining sum; the slowest and most
    /// obviously correct evaluation.
    fn forward_naive(op: &ForwardOperator, rho: &HermitianMatrix) -> Vec<f64> {
        let n = op.n();
        let js = bessel_j_seq(2 * n, 2.0 * op.g().abs());
        let jval = |idx: i64| -> f64 {
            let v = js[idx.unsigned_abs() as usize];
            if idx < 0 && idx % 2 != 0 {
                -v
            } else {
                v
            }
        };
        let mut out = vec![0.0; op.m() * n];
        for t in 0..op.m() {
            let theta = op.angles().angle(t);
            for l in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    for k in 0..n {
                        let phase = Complex64::from_polar(
                            jval(l as i64 - j as i64) * jval(l as i64 - k as i64),
                            (k as i64 - j as i64) as f64 * theta,
                        );
                        acc += phase * rho.entries()[(j, k)];
                    }
                }
                out[t * n + l] = acc.re;
            }
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn direct_matches_naive_triple_loop() {
        for n in [1usize, 2, 3, 5] {
            let op = ForwardOperator::new_equidistant(n, 1.3, 2 * n - 1).unwrap();
            let rho = random_hermitian(n, n as u64);
            let direct = op.forward_direct(&rho).unwrap();
            let naive = forward_naive(&op, &rho);
            assert!(rel_err(direct.values(), &naive) < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn fast_matches_direct_on_random_inputs() {
        for &(n, g) in &[(3usize, 0.0), (5, 0.5), (8, 2.7), (16, 2.7), (16, 10.0)] {
            let op = ForwardOperator::new_equidistant(n, g, 2 * n - 1).unwrap();
            for seed in 0..4 {
                let rho = random_hermitian(n, seed);
                let fast = op.forward_fast(&rho).unwrap();
                let direct = op.forward_direct(&rho).unwrap();
                assert!(
                    rel_err(fast.values(), direct.values()) < 1e-11,
                    "n={n} g={g} seed={seed}"
                );
            }
        }
    }

    #[test]
    fn fast_matches_direct_with_more_and_fewer_angles() {
        for m in [3usize, 9, 17, 40] {
            let op = ForwardOperator::new_equidistant(8, 2.7, m).unwrap();
            let rho = random_hermitian(8, 7);
            let fast = op.forward_fast(&rho).unwrap();
            let direct = op.forward_direct(&rho).unwrap();
            assert!(rel_err(fast.values(), direct.values()) < 1e-11, "m = {m}");
        }
    }

    #[test]
    fn explicit_angles_fall_back_to_series() {
        let angles = vec![-2.9, -0.4, 0.0, 0.33, 1.7, 2.8];
        let op = ForwardOperator::new_with_angles(6, 2.0, angles).unwrap();
        let rho = random_hermitian(6, 11);
        let fast = op.forward_fast(&rho).unwrap();
        let direct = op.forward_direct(&rho).unwrap();
        assert!(rel_err(fast.values(), direct.values()) < 1e-11);
        let naive = forward_naive(&op, &rho);
        assert!(rel_err(direct.values(), &naive) < 1e-12);
    }

    #[test]
    fn ground_projector_gives_bessel_squares() {
        let n = 9;
        let op = ForwardOperator::new_equidistant(n, 2.7, 17).unwrap();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        let y = op.forward_fast(&HermitianMatrix::new(m).unwrap()).unwrap();
        let js = bessel_j_seq(n, 5.4);
        for t in 0..op.m() {
            for l in 0..n {
                assert!((y.value(t, l) - js[l] * js[l]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corner_probe_has_closed_form_image() {
        let n = 6;
        let op = ForwardOperator::new_equidistant(n, 2.7, 2 * n - 1).unwrap();
        let eta = make_corner_probe(n).unwrap();
        let y = op.forward_direct(&eta).unwrap();
        let js = bessel_j_seq(2 * n, 5.4);
        let jval = |idx: i64| -> f64 {
            let v = js[idx.unsigned_abs() as usize];
            if idx < 0 && idx % 2 != 0 {
                -v
            } else {
                v
            }
        };
        for t in 0..op.m() {
            let theta = op.angles().angle(t);
            for l in 0..n {
                let want = 2.0
                    * ((n - 1) as f64 * theta).cos()
                    * jval(l as i64 - (n as i64 - 1))
                    * jval(l as i64);
                assert!((y.value(t, l) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn scalar_case() {
        let op = ForwardOperator::new_equidistant(1, 2.0, 3).unwrap();
        let mut m = DMatrix::<Complex64>::zeros(1, 1);
        m[(0, 0)] = Complex64::new(0.7, 0.0);
        let y = op.forward_fast(&HermitianMatrix::new(m).unwrap()).unwrap();
        let j0 = bessel_j_seq(0, 4.0)[0];
        for t in 0..3 {
            assert!((y.value(t, 0) - 0.7 * j0 * j0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_input_zero_output_and_linearity() {
        let n = 7;
        let op = ForwardOperator::new_equidistant(n, 1.1, 13).unwrap();
        let zero = HermitianMatrix::hermitized(DMatrix::zeros(n, n));
        assert_eq!(op.forward_fast(&zero).unwrap().norm(), 0.0);
        assert_eq!(op.reduced_forward(&zero).unwrap().frobenius_norm(), 0.0);

        let a = random_hermitian(n, 1);
        let b = random_hermitian(n, 2);
        let mut combo = a.entries() * Complex64::new(0.3, 0.0);
        combo += b.entries() * Complex64::new(-1.7, 0.0);
        let y_combo = op.forward_fast(&HermitianMatrix::hermitized(combo)).unwrap();
        let ya = op.forward_fast(&a).unwrap();
        let yb = op.forward_fast(&b).unwrap();
        for i in 0..y_combo.values().len() {
            let want = 0.3 * ya.values()[i] - 1.7 * yb.values()[i];
            assert!((y_combo.values()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_symmetry_for_real_states() {
        // For real-entried rho the spectrogram is even in theta.
        let n = 6;
        let op = ForwardOperator::new_equidistant(n, 2.7, 11).unwrap();
        let rho = square_state(n, 3).unwrap();
        let y = op.forward_fast(&rho.as_hermitian()).unwrap();
        for t in 1..11 {
            for l in 0..n {
                assert!((y.value(t, l) - y.value(11 - t, l)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coupling_zero_sees_only_the_diagonal() {
        let n = 5;
        let op = ForwardOperator::new_equidistant(n, 0.0, 9).unwrap();
        let a = random_hermitian(n, 3);
        // Strip the diagonal: the image must vanish.
        let mut off = a.entries().clone();
        for j in 0..n {
            off[(j, j)] = Complex64::new(0.0, 0.0);
        }
        let y = op.forward_fast(&HermitianMatrix::hermitized(off)).unwrap();
        assert!(y.norm() < 1e-14);
        // dtilde collapses to the constant row sqrt(2 pi) at k = 0.
        for bin in 0..op.l() {
            assert!((op.dtilde(0, bin) - Complex64::new(sqrt_2pi(), 0.0)).norm() < 1e-12);
            assert!(op.dtilde(2, bin).norm() < 1e-300);
        }
    }

    #[test]
    fn dtilde_row_matches_naive_dft_oracle() {
        let (n, g) = (5usize, 2.7);
        let l = 2 * n - 1;
        let js = bessel_j_seq(l - 1, 2.0 * g);
        let op = ForwardOperator::new_equidistant(n, g, l).unwrap();
        for k in [0i64, 1, -2] {
            let row = kernel_row(&js, k, n);
            for bin in 0..l {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, v) in row.iter().enumerate() {
                    let ang = 2.0 * PI * (c * bin) as f64 / l as f64;
                    acc += v * Complex64::from_polar(1.0, ang);
                }
                assert!((acc - op.dtilde(k, bin)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dtilde_samples_the_continuous_symbol() {
        // dtilde(k, bin) == d_a(k, 2 pi phi(bin) / L) up to truncation,
        // which is far below rounding at this size.
        use crate::special::continuous_symbol_da;
        let (n, g) = (300usize, 2.7);
        let l = 2 * n - 1;
        let op = ForwardOperator::new_equidistant(n, g, 5).unwrap();
        for k in [0i64, 1, 7, -3] {
            for bin in [0usize, 1, 17, 299, 400, 598] {
                let t = 2.0 * PI * phi_index(bin, n) as f64 / l as f64;
                let want = continuous_symbol_da(k, t, g);
                let got = op.dtilde(k, bin);
                assert!(
                    (got - want).norm() < 1e-10,
                    "k={k} bin={bin}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn adjoint_identity_against_forward() {
        let (n, m) = (16usize, 31usize);
        let op = ForwardOperator::new_equidistant(n, 2.7, m).unwrap();
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..8 {
            let rho = random_hermitian(n, rng.gen());
            let yv: Vec<f64> = (0..m * n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let y = Spectrogram::new(op.angles().to_vec(), n, yv).unwrap();
            let lhs: f64 = op
                .forward_fast(&rho)
                .unwrap()
                .values()
                .iter()
                .zip(y.values())
                .map(|(a, b)| a * b)
                .sum();
            let at = op.adjoint_apply(&y).unwrap();
            let rhs: f64 = at
                .entries()
                .iter()
                .zip(rho.entries().iter())
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            let scale = rho.frobenius_norm() * y.norm();
            assert!((lhs - rhs).abs() <= 1e-11 * scale, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn adjoint_identity_with_explicit_angles() {
        let n = 8;
        let angles = vec![0.1, 0.9, -1.4, 2.2, 3.0, -0.6];
        let op = ForwardOperator::new_with_angles(n, 1.7, angles).unwrap();
        let rho = random_hermitian(n, 5);
        let yv: Vec<f64> = (0..6 * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = Spectrogram::new(op.angles().to_vec(), n, yv).unwrap();
        let lhs: f64 = op
            .forward_fast(&rho)
            .unwrap()
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| a * b)
            .sum();
        let at = op.adjoint_apply(&y).unwrap();
        let rhs: f64 = at
            .entries()
            .iter()
            .zip(rho.entries().iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        assert!((lhs - rhs).abs() <= 1e-11 * rho.frobenius_norm() * y.norm());
    }

    #[test]
    fn adjoint_of_image_of_scaled_identity_is_hermitian() {
        let n = 6;
        let op = ForwardOperator::new_equidistant(n, 2.0, 11).unwrap();
        let id = HermitianMatrix::hermitized(DMatrix::identity(n, n) / Complex64::new(n as f64, 0.0));
        let y = op.forward_fast(&id).unwrap();
        let back = op.adjoint_apply(&y).unwrap();
        for j in 0..n {
            for k in 0..n {
                let d = back.entries()[(j, k)] - back.entries()[(k, j)].conj();
                assert!(d.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn spectrogram_of_density_inputs_stays_in_unit_range() {
        for seed in 0..5u64 {
            let n = 12;
            let op = ForwardOperator::new_equidistant(n, 2.7, 23).unwrap();
            let h = random_hermitian(n, seed + 100);
            let rho = crate::density::project_to_density(&h).unwrap();
            let y = op.forward_fast(&rho.as_hermitian()).unwrap();
            for &v in y.values() {
                assert!((-1e-10..=1.0 + 1e-10).contains(&v), "value {v}");
            }
        }
    }

    #[test]
    fn energy_identity_on_the_extended_grid() {
        // With M = L equidistant angles and all L energy bins (the outer
        // transforms undone), the spectrogram energy is (M L / 2 pi) times
        // the reduced-table energy. Restricting to the N physical columns
        // breaks the constant, which is why the reduced norm and not the
        // spectrogram norm is the instability observable.
        let n = 8;
        let l = 2 * n - 1;
        let op = ForwardOperator::new_equidistant(n, 2.7, l).unwrap();
        let mut ratios = Vec::new();
        let mut restricted = Vec::new();
        for seed in 0..4 {
            let rho = random_hermitian(n, seed + 7);
            let reduced = op.reduced_forward(&rho).unwrap();
            let mut a = reduced.data.clone();
            op.fft_l.forward_inplace(&mut a);
            // Extended theta evaluation over all L columns.
            let mut b = vec![Complex64::new(0.0, 0.0); l * l];
            for r in 0..l {
                let t = phi_index(r, n).rem_euclid(l as i64) as usize;
                for c in 0..l {
                    b[t * l + c] += a[r * l + c];
                }
            }
            // Complex modulus, not the real projection: the bins beyond
            // the physical columns mix two lattice instantiations whose
            // imaginary parts cancel only on the physical columns.
            let mut col = vec![Complex64::new(0.0, 0.0); l];
            let mut ext_energy = 0.0;
            for c in 0..l {
                for t in 0..l {
                    col[t] = b[t * l + c];
                }
                op.fft_l.inverse_inplace(&mut col);
                ext_energy += col.iter().map(|z| z.norm_sqr() / (2.0 * PI)).sum::<f64>();
            }
            let red_energy = reduced.frobenius_norm().powi(2);
            ratios.push(ext_energy / red_energy);
            let y = op.forward_fast(&rho).unwrap();
            restricted.push(y.norm().powi(2) / red_energy);
        }
        let want = (l * l) as f64 / (2.0 * PI);
        for r in &ratios {
            assert!((r - want).abs() < 1e-9 * want, "extended ratio {r} vs {want}");
        }
        // The restricted ratio is input-dependent; make sure we are not
        // accidentally asserting the opposite.
        let spread = restricted
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max)
            / restricted.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 1.001, "restricted ratio unexpectedly constant");
    }

    #[test]
    fn dense_assembly_is_consistent_with_forward() {
        let op = ForwardOperator::new_equidistant(4, 1.9, 7).unwrap();
        let dense = op.assemble_dense(false).unwrap();
        assert_eq!(dense.nrows(), 7 * 4);
        assert_eq!(dense.ncols(), 16);
        for seed in 0..3 {
            let rho = random_hermitian(4, seed + 50);
            let want = op.forward_direct(&rho).unwrap();
            let got = &dense * hermitian_coordinates(&rho);
            for (i, v) in got.iter().enumerate() {
                assert!((v - want.values()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_rank_is_full_at_the_angle_threshold() {
        let op = ForwardOperator::new_equidistant(3, 2.7, 5).unwrap();
        let dense = op.assemble_dense(false).unwrap();
        let svd = dense.svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
        assert_eq!(rank, 9);
    }

    #[test]
    fn dense_guard_is_enforced_and_overridable() {
        let op = ForwardOperator::new_equidistant(65, 1.0, 3).unwrap();
        assert!(matches!(
            op.assemble_dense(false),
            Err(Error::SizeGuard { .. })
        ));
        assert!(op.assemble_dense(true).is_ok());
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let op = ForwardOperator::new_equidistant(5, 1.0, 9).unwrap();
        let rho = random_hermitian(4, 1);
        assert!(op.forward_fast(&rho).is_err());
        let y = Spectrogram::new(vec![0.0; 3], 5, vec![0.0; 15]).unwrap();
        assert!(op.adjoint_apply(&y).is_err());
    }

    #[test]
    fn equidistant_angles_are_evenly_spaced() {
        let op = ForwardOperator::new_equidistant(4, 1.0, 9).unwrap();
        let angles = op.angles().to_vec();
        let step = angles[1] - angles[0];
        for w in angles.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-14);
        }
    }

    #[test]
    fn density_members_map_to_probability_rows_when_angles_cover() {
        // Row sums over energies approximate the trace for well-covered
        // supports; sanity-check positivity of total mass.
        let rho = square_state(9, 3).unwrap();
        let op = ForwardOperator::new_equidistant(9, 0.5, 17).unwrap();
        let y = op.forward_fast(&rho.as_hermitian()).unwrap();
        for t in 0..17 {
            let row: f64 = (0..9).map(|l| y.value(t, l)).sum();
            assert!(row > 0.9 && row < 1.0 + 1e-10);
        }
    }
}
