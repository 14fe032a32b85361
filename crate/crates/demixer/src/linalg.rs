//! Dense complex linear algebra: matrix products, Kronecker products, LU
//! solves, the nonsymmetric eigendecomposition, and the stationary
//! left/right fixed-point pair of a transfer generator.
//!
//! All heavy routines are thin wrappers over LAPACK/BLAS symbols from the
//! system OpenBLAS (`zgemm`, `zgetrf`, `zgetrs`, `zgeev`). Matrices are
//! stored as row-major `ndarray::Array2<Complex64>` on the Rust side and
//! copied into column-major scratch buffers at the FFI boundary; for the
//! dimensions this crate works with (a few hundred to a few thousand) the
//! copies are negligible next to the O(n^3) factorizations.
//!
//! Vectorization convention used throughout the crate: `vec` flattens a
//! matrix row by row, so that `kron(A, B^T) · vec(X) = vec(A X B)`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::os::raw::c_char;
use std::sync::Once;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

/// Largest matrix dimension the dense kernels accept. Anything larger is a
/// programming error upstream (transfer generators grow as D^4, so this
/// bound corresponds to auxiliary bond dimensions well past the point where
/// a dense eigensolve is sensible).
pub const MAX_DENSE_DIM: usize = 4096;

/// Failure threshold for the internal eigendecomposition self-check
/// `‖V Λ V⁻¹ − A‖_F ≤ tol · ‖A‖_F`. Well-conditioned problems land many
/// orders of magnitude below this; crossing it signals a (near-)defective
/// matrix whose spectral data should not be trusted.
pub const EIG_SELF_CHECK_TOL: f64 = 1e-6;

/// Two dominant transfer eigenvalues closer than this are treated as
/// degenerate: the stationary state is not unique (non-injective state).
pub const DEGENERATE_GAP_TOL: f64 = 1e-10;

/// The dominant transfer eigenvalue must vanish for a left-gauged state;
/// a real part larger than this means the gauge constraint is broken.
pub const GAUGE_EIGENVALUE_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// FFI
// ---------------------------------------------------------------------------

extern "C" {
    fn openblas_set_num_threads(n: i32);

    fn zgemm_(
        transa: *const c_char,
        transb: *const c_char,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const C64,
        a: *const C64,
        lda: *const i32,
        b: *const C64,
        ldb: *const i32,
        beta: *const C64,
        c: *mut C64,
        ldc: *const i32,
    );

    fn zgetrf_(
        m: *const i32,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        ipiv: *mut i32,
        info: *mut i32,
    );

    fn zgetrs_(
        trans: *const c_char,
        n: *const i32,
        nrhs: *const i32,
        a: *const C64,
        lda: *const i32,
        ipiv: *const i32,
        b: *mut C64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn dgetrf_(
        m: *const i32,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        ipiv: *mut i32,
        info: *mut i32,
    );

    fn dgetrs_(
        trans: *const c_char,
        n: *const i32,
        nrhs: *const i32,
        a: *const f64,
        lda: *const i32,
        ipiv: *const i32,
        b: *mut f64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn zgeev_(
        jobvl: *const c_char,
        jobvr: *const c_char,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        w: *mut C64,
        vl: *mut C64,
        ldvl: *const i32,
        vr: *mut C64,
        ldvr: *const i32,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        info: *mut i32,
    );
}

static BLAS_INIT: Once = Once::new();

/// Pin OpenBLAS to one thread. The matrices here are small enough that
/// OpenBLAS threading only adds overhead and, worse, nondeterminism in
/// reduction order; bit-reproducible optimizer trajectories require a fixed
/// thread count.
fn ensure_blas_single_threaded() {
    BLAS_INIT.call_once(|| unsafe {
        openblas_set_num_threads(1);
    });
}

// ---------------------------------------------------------------------------
// Layout helpers
// ---------------------------------------------------------------------------

fn to_col_major(a: &CMat) -> Vec<C64> {
    let (m, n) = a.dim();
    let mut buf = vec![C64::new(0.0, 0.0); m * n];
    for j in 0..n {
        for i in 0..m {
            buf[j * m + i] = a[(i, j)];
        }
    }
    buf
}

fn from_col_major(buf: &[C64], m: usize, n: usize) -> CMat {
    let mut a = CMat::zeros((m, n));
    for j in 0..n {
        for i in 0..m {
            a[(i, j)] = buf[j * m + i];
        }
    }
    a
}

fn check_square(a: &CMat, what: &str) -> Result<usize> {
    let (m, n) = a.dim();
    if m != n {
        return Err(Error::InvalidParameters(format!(
            "{what} must be square, got {m}x{n}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameters(format!("{what} is empty")));
    }
    if n > MAX_DENSE_DIM {
        return Err(Error::InvalidParameters(format!(
            "{what} dimension {n} exceeds dense limit {MAX_DENSE_DIM}"
        )));
    }
    Ok(n)
}

/// True when every entry is finite (no NaN/Inf in either component).
pub fn all_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn check_finite(a: &CMat, what: &str) -> Result<()> {
    if all_finite(a) {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!(
            "{what} contains non-finite entries"
        )))
    }
}

// ---------------------------------------------------------------------------
// Elementary operations
// ---------------------------------------------------------------------------

/// Conjugate transpose.
pub fn adjoint(a: &CMat) -> CMat {
    let (m, n) = a.dim();
    let mut out = CMat::zeros((n, m));
    for i in 0..m {
        for j in 0..n {
            out[(j, i)] = a[(i, j)].conj();
        }
    }
    out
}

/// Hermitian part `(A + A†)/2`.
pub fn hermitize(a: &CMat) -> CMat {
    let h = adjoint(a);
    (a + &h).mapv(|z| 0.5 * z)
}

pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

pub fn frob_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn identity(n: usize) -> CMat {
    CMat::eye(n)
}

/// Matrix product `A·B` via BLAS `zgemm`.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    ensure_blas_single_threaded();
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul dimension mismatch: {m}x{k} * {k2}x{n}");
    if m == 0 || n == 0 || k == 0 {
        return CMat::zeros((m, n));
    }
    let a_buf = to_col_major(a);
    let b_buf = to_col_major(b);
    let mut c_buf = vec![C64::new(0.0, 0.0); m * n];
    let (mi, ni, ki) = (m as i32, n as i32, k as i32);
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    unsafe {
        zgemm_(
            &(b'N' as c_char),
            &(b'N' as c_char),
            &mi,
            &ni,
            &ki,
            &one,
            a_buf.as_ptr(),
            &mi,
            b_buf.as_ptr(),
            &ki,
            &zero,
            c_buf.as_mut_ptr(),
            &mi,
        );
    }
    from_col_major(&c_buf, m, n)
}

/// Three-factor product `A·B·C`.
pub fn matmul3(a: &CMat, b: &CMat, c: &CMat) -> CMat {
    matmul(&matmul(a, b), c)
}

/// Kronecker product with row-major composite indices:
/// `kron(A, B)[(i·p, j·q)] = A[i,j] · B[p,q]` where the composite row index
/// is `i * B.nrows + p`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (am, an) = a.dim();
    let (bm, bn) = b.dim();
    let mut out = CMat::zeros((am * bm, an * bn));
    for i in 0..am {
        for j in 0..an {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for p in 0..bm {
                for q in 0..bn {
                    out[(i * bm + p, j * bn + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Row-major flattening, the `vec` of this crate's conventions.
pub fn vec_rm(a: &CMat) -> CVec {
    CVec::from_iter(a.iter().cloned())
}

/// Inverse of [`vec_rm`] for a square matrix of dimension `d`.
pub fn unvec_rm(v: &CVec, d: usize) -> CMat {
    assert_eq!(v.len(), d * d, "unvec length mismatch");
    CMat::from_shape_vec((d, d), v.to_vec()).expect("shape checked above")
}

// ---------------------------------------------------------------------------
// LU factorization and solves
// ---------------------------------------------------------------------------

/// LU factorization of a square matrix, reusable across multiple solves.
#[derive(Debug)]
pub struct LuFactors {
    n: usize,
    /// Column-major factored matrix as produced by `zgetrf`.
    lu: Vec<C64>,
    ipiv: Vec<i32>,
}

/// Factor `A = P·L·U`. Fails with [`Error::LinearSolveFailed`] on exact
/// singularity (zero pivot).
pub fn lu_factor(a: &CMat) -> Result<LuFactors> {
    ensure_blas_single_threaded();
    let n = check_square(a, "LU input")?;
    check_finite(a, "LU input")?;
    let mut lu = to_col_major(a);
    let mut ipiv = vec![0i32; n];
    let ni = n as i32;
    let mut info = 0i32;
    unsafe {
        zgetrf_(&ni, &ni, lu.as_mut_ptr(), &ni, ipiv.as_mut_ptr(), &mut info);
    }
    if info < 0 {
        return Err(Error::LinearSolveFailed(format!(
            "zgetrf: illegal argument {}",
            -info
        )));
    }
    if info > 0 {
        return Err(Error::LinearSolveFailed(format!(
            "zgetrf: singular matrix, zero pivot at position {info}"
        )));
    }
    Ok(LuFactors { n, lu, ipiv })
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A·x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &CVec) -> Result<CVec> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let mut buf = b.to_vec();
        self.solve_buf(&mut buf, 1)?;
        Ok(CVec::from_vec(buf))
    }

    /// Solve the transposed system `Aᵀ·x = b` (plain transpose, no
    /// conjugation) reusing the same factorization.
    pub fn solve_vec_transposed(&self, b: &CVec) -> Result<CVec> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let mut buf = b.to_vec();
        let ni = self.n as i32;
        let one = 1i32;
        let mut info = 0i32;
        unsafe {
            zgetrs_(
                &(b'T' as c_char),
                &ni,
                &one,
                self.lu.as_ptr(),
                &ni,
                self.ipiv.as_ptr(),
                buf.as_mut_ptr(),
                &ni,
                &mut info,
            );
        }
        if info != 0 {
            return Err(Error::LinearSolveFailed(format!(
                "zgetrs (transposed): illegal argument {}",
                -info
            )));
        }
        Ok(CVec::from_vec(buf))
    }

    /// Solve `A·X = B` column by column.
    pub fn solve_mat(&self, b: &CMat) -> Result<CMat> {
        let (m, k) = b.dim();
        assert_eq!(m, self.n, "rhs row count mismatch");
        let mut buf = to_col_major(b);
        self.solve_buf(&mut buf, k)?;
        Ok(from_col_major(&buf, m, k))
    }

    fn solve_buf(&self, b: &mut [C64], nrhs: usize) -> Result<()> {
        let ni = self.n as i32;
        let nrhsi = nrhs as i32;
        let mut info = 0i32;
        unsafe {
            zgetrs_(
                &(b'N' as c_char),
                &ni,
                &nrhsi,
                self.lu.as_ptr(),
                &ni,
                self.ipiv.as_ptr(),
                b.as_mut_ptr(),
                &ni,
                &mut info,
            );
        }
        if info != 0 {
            return Err(Error::LinearSolveFailed(format!(
                "zgetrs: illegal argument {}",
                -info
            )));
        }
        Ok(())
    }
}

/// Solve `A·x = b` in one shot.
pub fn solve(a: &CMat, b: &CVec) -> Result<CVec> {
    lu_factor(a)?.solve_vec(b)
}

/// Solve a real dense system `A·x = b` (LAPACK `dgetrf`/`dgetrs`).
///
/// `a` is row-major `n×n`; handing it to LAPACK unconverted means LAPACK
/// factors `Aᵀ`, so the transpose-solve flag `'T'` recovers the solution of
/// the original system without any copy.
pub fn solve_real(a: &ndarray::Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    ensure_blas_single_threaded();
    let (m, n) = a.dim();
    if m != n {
        return Err(Error::InvalidParameters(format!(
            "real solve needs a square matrix, got {m}x{n}"
        )));
    }
    if b.len() != n {
        return Err(Error::InvalidParameters(
            "real solve rhs length mismatch".into(),
        ));
    }
    let mut lu: Vec<f64> = a.iter().cloned().collect();
    if lu.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameters(
            "real solve input contains non-finite entries".into(),
        ));
    }
    let mut ipiv = vec![0i32; n];
    let ni = n as i32;
    let mut info = 0i32;
    unsafe {
        dgetrf_(&ni, &ni, lu.as_mut_ptr(), &ni, ipiv.as_mut_ptr(), &mut info);
    }
    if info != 0 {
        return Err(Error::LinearSolveFailed(format!(
            "dgetrf: info {info} (singular or bad argument)"
        )));
    }
    let mut x = b.to_vec();
    let one = 1i32;
    unsafe {
        dgetrs_(
            &(b'T' as c_char),
            &ni,
            &one,
            lu.as_ptr(),
            &ni,
            ipiv.as_ptr(),
            x.as_mut_ptr(),
            &ni,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::LinearSolveFailed(format!(
            "dgetrs: illegal argument {}",
            -info
        )));
    }
    Ok(x)
}

/// Matrix inverse via LU.
pub fn inverse(a: &CMat) -> Result<CMat> {
    let n = check_square(a, "inverse input")?;
    lu_factor(a)?.solve_mat(&identity(n))
}

// ---------------------------------------------------------------------------
// Eigendecomposition
// ---------------------------------------------------------------------------

/// Full spectral data of a general (nonsymmetric) complex matrix.
///
/// Right eigenvectors sit in the *columns* of `right`; left eigenvectors in
/// the *rows* of `left`, normalized so that `left · right = I` (the rows are
/// computed as `right⁻¹`, which enforces biorthogonality to solver
/// precision). Consequently `right · diag(values) · left` reconstructs the
/// input matrix.
#[derive(Debug)]
pub struct Spectrum {
    pub values: CVec,
    pub right: CMat,
    pub left: CMat,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Index of the eigenvalue with the largest real part.
    pub fn dominant_index(&self) -> usize {
        let mut imax = 0;
        for i in 1..self.values.len() {
            if self.values[i].re > self.values[imax].re {
                imax = i;
            }
        }
        imax
    }

    /// `V · diag(values) · V⁻¹`, used by the internal self-check and tests.
    pub fn reconstruct(&self) -> CMat {
        let n = self.dim();
        let mut vd = CMat::zeros((n, n));
        for j in 0..n {
            let lam = self.values[j];
            for i in 0..n {
                vd[(i, j)] = self.right[(i, j)] * lam;
            }
        }
        matmul(&vd, &self.left)
    }
}

/// Dense nonsymmetric eigendecomposition via LAPACK `zgeev`.
///
/// Left eigenvectors are obtained as the inverse of the right-eigenvector
/// matrix rather than from `zgeev` directly, so biorthogonality holds by
/// construction. A reconstruction self-check guards against (near-)defective
/// inputs where the inverse is meaningless.
pub fn eig(a: &CMat) -> Result<Spectrum> {
    ensure_blas_single_threaded();
    let n = check_square(a, "eig input")?;
    check_finite(a, "eig input")?;

    let mut a_buf = to_col_major(a);
    let mut values = vec![C64::new(0.0, 0.0); n];
    let mut vr = vec![C64::new(0.0, 0.0); n * n];
    let mut rwork = vec![0.0f64; 2 * n];
    let ni = n as i32;
    let mut info = 0i32;

    // Workspace query.
    let mut work_query = [C64::new(0.0, 0.0)];
    let lwork_query = -1i32;
    unsafe {
        zgeev_(
            &(b'N' as c_char),
            &(b'V' as c_char),
            &ni,
            a_buf.as_mut_ptr(),
            &ni,
            values.as_mut_ptr(),
            std::ptr::null_mut(),
            &1i32,
            vr.as_mut_ptr(),
            &ni,
            work_query.as_mut_ptr(),
            &lwork_query,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigFailed {
            dim: n,
            info,
            residual: None,
        });
    }
    let lwork = work_query[0].re.max(1.0) as i32;
    let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
    unsafe {
        zgeev_(
            &(b'N' as c_char),
            &(b'V' as c_char),
            &ni,
            a_buf.as_mut_ptr(),
            &ni,
            values.as_mut_ptr(),
            std::ptr::null_mut(),
            &1i32,
            vr.as_mut_ptr(),
            &ni,
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigFailed {
            dim: n,
            info,
            residual: None,
        });
    }

    let right = from_col_major(&vr, n, n);
    let left = inverse(&right).map_err(|_| Error::EigFailed {
        dim: n,
        info: 0,
        residual: None,
    })?;
    let spectrum = Spectrum {
        values: CVec::from_vec(values),
        right,
        left,
    };

    let scale = frob_norm(a).max(f64::MIN_POSITIVE);
    let residual = frob_norm(&(&spectrum.reconstruct() - a)) / scale;
    if !residual.is_finite() || residual > EIG_SELF_CHECK_TOL {
        return Err(Error::EigFailed {
            dim: n,
            info: 0,
            residual: Some(residual),
        });
    }
    Ok(spectrum)
}

// ---------------------------------------------------------------------------
// Stationary fixed-point pair of a transfer generator
// ---------------------------------------------------------------------------

/// Left/right stationary pair `(l, r)` of a transfer generator `T` acting on
/// vectorized `d×d` matrices (so `T` itself is `d²×d²`).
///
/// `r` spans the kernel of `T`, `l` the kernel of the adjoint action; both
/// are returned phase-fixed (positive trace) and Hermitized. The scale split
/// is pinned by `Tr[l] = d` (so a left-gauged state yields `l = I` exactly,
/// up to eigensolver noise) and then `Tr[l·r] = 1` with the remaining scale
/// absorbed into `r`.
///
/// Errors:
/// * [`Error::NonInjectiveState`] — the dominant eigenvalue is degenerate
///   (real-part gap below [`DEGENERATE_GAP_TOL`]) or the fixed points are
///   structurally broken (vanishing trace, non-positive overlap, negative
///   eigenvalue of `r` beyond rounding).
/// * [`Error::GaugeViolation`] — dominant eigenvalue real part exceeds
///   [`GAUGE_EIGENVALUE_TOL`].
pub fn stationary_pair(t: &CMat) -> Result<(CMat, CMat)> {
    let n = check_square(t, "transfer generator")?;
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n {
        return Err(Error::InvalidParameters(format!(
            "transfer generator dimension {n} is not a perfect square"
        )));
    }
    let spectrum = eig(t)?;
    stationary_pair_from_spectrum(&spectrum, d)
}

/// Extract the stationary pair from an already-computed transfer spectrum
/// (same checks and conventions as [`stationary_pair`]; lets callers that
/// keep the spectrum for correlation functions avoid a second
/// eigendecomposition).
pub fn stationary_pair_from_spectrum(spectrum: &Spectrum, d: usize) -> Result<(CMat, CMat)> {
    let n = spectrum.dim();
    if d * d != n {
        return Err(Error::InvalidParameters(format!(
            "spectrum dimension {n} does not match matrix dimension {d}"
        )));
    }
    let imax = spectrum.dominant_index();
    let lam0 = spectrum.values[imax];

    let mut gap = f64::INFINITY;
    for i in 0..n {
        if i != imax {
            gap = gap.min(lam0.re - spectrum.values[i].re);
        }
    }
    if n > 1 && gap < DEGENERATE_GAP_TOL {
        return Err(Error::NonInjectiveState(format!(
            "dominant transfer eigenvalue degenerate (real-part gap {gap:e})"
        )));
    }
    if lam0.re.abs() > GAUGE_EIGENVALUE_TOL {
        return Err(Error::GaugeViolation { lambda_re: lam0.re });
    }

    let r_raw = unvec_rm(&spectrum.right.column(imax).to_owned(), d);
    // A row `w` with `w·T = 0` flattens to the conjugate of the left fixed
    // point: `w = vec(conj(l))` under the row-major vec convention.
    let l_raw = unvec_rm(&spectrum.left.row(imax).to_owned(), d).mapv(|z| z.conj());

    let r = fix_phase_hermitize(&r_raw, "right fixed point")?;
    let l = fix_phase_hermitize(&l_raw, "left fixed point")?;
    // Pin the scale of l: its phase-fixed trace is real and positive.
    let l = l.mapv(|z| z * (d as f64 / trace(&l).re));

    // The stationary density matrix of an injective state is positive
    // semidefinite; tolerate only rounding-level negativity.
    let r_scale = frob_norm(&r).max(f64::MIN_POSITIVE);
    let min_eig = min_hermitian_eigenvalue(&r)?;
    if min_eig < -1e-10 * r_scale.max(1.0) {
        return Err(Error::NonInjectiveState(format!(
            "right fixed point not positive semidefinite (min eigenvalue {min_eig:e})"
        )));
    }

    let overlap = trace(&matmul(&l, &r));
    if overlap.re <= 0.0 || overlap.norm() < 1e-14 {
        return Err(Error::NonInjectiveState(format!(
            "left/right fixed-point overlap not positive (Tr[l·r] = {overlap})"
        )));
    }
    let r = r.mapv(|z| z / overlap.re);
    Ok((l, r))
}

fn fix_phase_hermitize(m: &CMat, what: &str) -> Result<CMat> {
    let t = trace(m);
    let scale = frob_norm(m).max(f64::MIN_POSITIVE);
    if t.norm() < 1e-12 * scale {
        return Err(Error::NonInjectiveState(format!(
            "{what} has vanishing trace; no consistent phase"
        )));
    }
    let phase = t / t.norm();
    let rotated = m.mapv(|z| z / phase);
    Ok(hermitize(&rotated))
}

/// Minimum eigenvalue of a Hermitian matrix (via the general eigensolver;
/// the matrices are small and the eigenvalues come out real to rounding).
fn min_hermitian_eigenvalue(h: &CMat) -> Result<f64> {
    let spectrum = eig(h)?;
    Ok(spectrum
        .values
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_shape_fn((n, n), |_| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        hermitize(&random_matrix(n, seed))
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = CMat::from_shape_vec(
            (2, 2),
            vec![
                C64::new(1.0, 1.0),
                C64::new(2.0, 0.0),
                C64::new(0.0, -1.0),
                C64::new(3.0, 2.0),
            ],
        )
        .unwrap();
        let b = CMat::from_shape_vec(
            (2, 2),
            vec![
                C64::new(0.0, 1.0),
                C64::new(1.0, 0.0),
                C64::new(2.0, 2.0),
                C64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let c = matmul(&a, &b);
        // c[0,0] = (1+i)(i) + 2(2+2i) = i - 1 + 4 + 4i = 3 + 5i
        assert_abs_diff_eq!(c[(0, 0)].re, 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c[(0, 0)].im, 5.0, epsilon = 1e-14);
        // c[0,1] = (1+i)(1) = 1 + i
        assert_abs_diff_eq!(c[(0, 1)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c[(0, 1)].im, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn kron_indexing_is_row_major() {
        let a = random_matrix(2, 1);
        let b = random_matrix(3, 2);
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (6, 6));
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..3 {
                    for q in 0..3 {
                        let expect = a[(i, j)] * b[(p, q)];
                        let got = k[(i * 3 + p, j * 3 + q)];
                        assert_abs_diff_eq!(got.re, expect.re, epsilon = 1e-14);
                        assert_abs_diff_eq!(got.im, expect.im, epsilon = 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_vec_identity_holds() {
        // kron(A, B^T) vec(X) = vec(A X B) under row-major vec.
        let a = random_matrix(3, 10);
        let b = random_matrix(3, 11);
        let x = random_matrix(3, 12);
        let lhs = {
            let bt = b.t().to_owned();
            let op = kron(&a, &bt);
            let v = vec_rm(&x);
            op.dot(&v)
        };
        let rhs = vec_rm(&matmul3(&a, &x, &b));
        for i in 0..9 {
            assert_abs_diff_eq!(lhs[i].re, rhs[i].re, epsilon = 1e-12);
            assert_abs_diff_eq!(lhs[i].im, rhs[i].im, epsilon = 1e-12);
        }
    }

    #[test]
    fn lu_solve_recovers_known_solution() {
        let a = random_matrix(20, 3);
        let x_true = CVec::from_shape_fn(20, |i| C64::new(i as f64, -(i as f64) / 3.0));
        let b = a.dot(&x_true);
        let x = solve(&a, &b).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(x[i].re, x_true[i].re, epsilon = 1e-10);
            assert_abs_diff_eq!(x[i].im, x_true[i].im, epsilon = 1e-10);
        }
    }

    #[test]
    fn lu_reports_singular_matrix() {
        let a = CMat::zeros((4, 4));
        match lu_factor(&a) {
            Err(Error::LinearSolveFailed(_)) => {}
            other => panic!("expected LinearSolveFailed, got {other:?}"),
        }
    }

    #[test]
    fn eig_diagonal_matrix_recovers_entries() {
        let mut a = CMat::zeros((4, 4));
        let diag = [
            C64::new(1.0, 0.0),
            C64::new(-2.0, 0.5),
            C64::new(0.0, -3.0),
            C64::new(4.0, 4.0),
        ];
        for (i, z) in diag.iter().enumerate() {
            a[(i, i)] = *z;
        }
        let s = eig(&a).unwrap();
        let mut got: Vec<C64> = s.values.to_vec();
        got.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
        let mut want = diag.to_vec();
        want.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
        for (g, w) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(g.re, w.re, epsilon = 1e-12);
            assert_abs_diff_eq!(g.im, w.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_reconstruction_and_biorthogonality() {
        for seed in [7, 8, 9] {
            let a = random_matrix(40, seed);
            let s = eig(&a).unwrap();
            let resid = frob_norm(&(&s.reconstruct() - &a)) / frob_norm(&a);
            assert!(resid <= 1e-8, "reconstruction residual {resid:e}");
            let gram = matmul(&s.left, &s.right);
            let err = frob_norm(&(&gram - &identity(40)));
            assert!(err <= 1e-8, "biorthogonality error {err:e}");
        }
    }

    #[test]
    fn eig_rejects_non_finite_input() {
        let mut a = random_matrix(3, 5);
        a[(1, 1)] = C64::new(f64::NAN, 0.0);
        match eig(&a) {
            Err(Error::InvalidParameters(_)) => {}
            other => panic!("expected InvalidParameters, got {other:?}"),
        }
    }

    /// Build a left-gauged transfer generator from Hermitian K and arbitrary
    /// R: Q = -iK - R†R/2, T = Q⊗I + I⊗conj(Q) + R⊗conj(R).
    fn gauged_transfer(k: &CMat, rs: &[CMat]) -> CMat {
        let d = k.nrows();
        let mut q = k.mapv(|z| z * C64::new(0.0, -1.0));
        for r in rs {
            let rdr = matmul(&adjoint(r), r);
            q = &q - &rdr.mapv(|z| 0.5 * z);
        }
        let id = identity(d);
        let mut t = kron(&q, &id) + kron(&id, &q.mapv(|z| z.conj()));
        for r in rs {
            t = t + kron(r, &r.mapv(|z| z.conj()));
        }
        t
    }

    #[test]
    fn stationary_pair_of_gauged_generator() {
        let d = 4;
        let k = random_hermitian(d, 21);
        let r = random_matrix(d, 22);
        let t = gauged_transfer(&k, &[r]);
        let (l, r_fp) = stationary_pair(&t).unwrap();

        // Left fixed point of a left-gauged generator is the identity.
        let l_err = frob_norm(&(&l - &identity(d))) / frob_norm(&l);
        assert!(l_err < 1e-10, "left fixed point deviates from I: {l_err:e}");

        // Stationarity: T vec(r) = 0 relative to ‖T‖.
        let tv = t.dot(&vec_rm(&r_fp));
        let resid = tv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / frob_norm(&t);
        assert!(resid < 1e-10, "stationarity residual {resid:e}");

        // Normalization Tr[l·r] = 1 and Hermiticity of r.
        let overlap = trace(&matmul(&l, &r_fp));
        assert_abs_diff_eq!(overlap.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(overlap.im, 0.0, epsilon = 1e-12);
        let herm_err = frob_norm(&(&r_fp - &adjoint(&r_fp)));
        assert!(herm_err < 1e-12);
    }

    #[test]
    fn stationary_pair_detects_degeneracy() {
        // Diagonal R with distinct entries decouples the two basis states:
        // both |0><0| and |1><1| are stationary, so the state is
        // non-injective.
        let d = 2;
        let k = CMat::zeros((d, d));
        let mut r = CMat::zeros((d, d));
        r[(0, 0)] = C64::new(0.7, 0.0);
        r[(1, 1)] = C64::new(1.3, 0.0);
        let t = gauged_transfer(&k, &[r]);
        match stationary_pair(&t) {
            Err(Error::NonInjectiveState(_)) => {}
            other => panic!("expected NonInjectiveState, got {other:?}"),
        }
    }

    #[test]
    fn stationary_pair_detects_gauge_violation() {
        // Shifting a valid gauged generator by +s·I moves every eigenvalue
        // (and in particular the unique dominant one) off zero.
        let d = 3;
        let k = random_hermitian(d, 31);
        let r = random_matrix(d, 32);
        let t = gauged_transfer(&k, &[r]) + identity(d * d) * C64::new(0.37, 0.0);
        match stationary_pair(&t) {
            Err(Error::GaugeViolation { lambda_re }) => {
                assert_abs_diff_eq!(lambda_re, 0.37, epsilon = 1e-10);
            }
            other => panic!("expected GaugeViolation, got {other:?}"),
        }
    }
}
