//! Variational state classes for translation-invariant continuous matrix
//! product states: the single-species state, the two-species Kronecker
//! construction, gauge-fixed assembly of the auxiliary generator, and the
//! transfer generator.
//!
//! Gauge: states are parametrized by a Hermitian auxiliary Hamiltonian `K`
//! and free field matrices `R_α`, with
//!
//! ```text
//! Q = −i·K − ½ Σ_α R_α† R_α
//! ```
//!
//! (left-canonical gauge). This makes `Q + Q† + Σ R_α†R_α = 0` an identity,
//! the vectorized identity an exact left null vector of the transfer
//! generator, and normalization automatic.
//!
//! Two-species construction (per-species auxiliary dimension `D`, coupling
//! rank `P`):
//!
//! ```text
//! K̃  = K1⊗I + I⊗K2 + Σ_p Z1[p]⊗Z2[p]
//! R̃1 = R1⊗I,   R̃2 = I⊗R2
//! Q̃  = −i·K̃ − ½(R̃1†R̃1 + R̃2†R̃2),     D̃ = D².
//! ```
//!
//! All `Z` matrices are Hermitian by convention so `K̃` is Hermitian term by
//! term. Field matrices of different species commute by construction.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{adjoint, all_finite, frob_norm, identity, kron, matmul, CMat, C64};

/// Hermiticity tolerance for user-supplied K (and Z) blocks, relative to
/// the matrix scale.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Hermiticity tolerance for the assembled pair Hamiltonian K̃.
pub const ASSEMBLED_HERMITICITY_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Parameter classes
// ---------------------------------------------------------------------------

/// Single-species state: Hermitian `K` (units 1/length) and free `R`
/// (units 1/√length), both `D×D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmpsSingle {
    pub d: usize,
    pub k: CMat,
    pub r: CMat,
}

/// Two-species Kronecker state: per-species `K1, K2` (Hermitian), `R1, R2`
/// (free), and `P` Hermitian coupling pairs `Z1[p], Z2[p]`, all `D×D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmpsPair {
    pub d: usize,
    pub p: usize,
    pub k1: CMat,
    pub k2: CMat,
    pub r1: CMat,
    pub r2: CMat,
    pub z1: Vec<CMat>,
    pub z2: Vec<CMat>,
}

/// Either parameter class, for code generic over the topology.
#[derive(Debug, Clone, PartialEq)]
pub enum CmpsParams {
    Single(CmpsSingle),
    Pair(CmpsPair),
}

/// Shape descriptor: topology plus dimensions, without the matrix payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateShape {
    Single { d: usize },
    Pair { d: usize, p: usize },
}

impl CmpsSingle {
    /// Net count of physical variational parameters after removing the
    /// residual U(D) gauge freedom (simultaneous unitary conjugation of K
    /// and R): the raw 3D² real parameters minus D² gauge directions.
    pub fn parameter_count(&self) -> usize {
        2 * self.d * self.d
    }
}

impl CmpsPair {
    /// Net count of physical variational parameters, `D²(4 + 2P)`: raw
    /// parameters are K1, K2, Z1[p], Z2[p] (Hermitian, D² reals each) and
    /// R1, R2 (2D² reals each) for a total of D²(6 + 2P), minus one U(D)
    /// gauge freedom per species (D² directions each).
    pub fn parameter_count(&self) -> usize {
        self.d * self.d * (4 + 2 * self.p)
    }
}

impl CmpsParams {
    pub fn shape(&self) -> StateShape {
        match self {
            CmpsParams::Single(s) => StateShape::Single { d: s.d },
            CmpsParams::Pair(s) => StateShape::Pair { d: s.d, p: s.p },
        }
    }

    pub fn species_count(&self) -> usize {
        match self {
            CmpsParams::Single(_) => 1,
            CmpsParams::Pair(_) => 2,
        }
    }

    pub fn assemble(&self) -> Result<AssembledState> {
        match self {
            CmpsParams::Single(s) => assemble_single(s),
            CmpsParams::Pair(s) => assemble_pair(s),
        }
    }
}

impl StateShape {
    pub fn d(&self) -> usize {
        match self {
            StateShape::Single { d } | StateShape::Pair { d, .. } => *d,
        }
    }

    pub fn species_count(&self) -> usize {
        match self {
            StateShape::Single { .. } => 1,
            StateShape::Pair { .. } => 2,
        }
    }

    /// Auxiliary dimension of the assembled state (D for single, D² for
    /// the two-species Kronecker construction).
    pub fn assembled_dim(&self) -> usize {
        match self {
            StateShape::Single { d } => *d,
            StateShape::Pair { d, .. } => d * d,
        }
    }
}

// ---------------------------------------------------------------------------
// Flat real parameter vector (optimizer interface)
// ---------------------------------------------------------------------------
//
// Layout (documented so checkpoints/gradients stay interpretable):
//   Hermitian block, dimension d (d² reals):  row-major upper triangle,
//     for i ≤ j: diagonal contributes K[i,i].re, off-diagonal contributes
//     (K[i,j].re, K[i,j].im).
//   Free complex block (2d² reals): row-major (re, im) per entry.
//   Single:  [herm(K), free(R)]                             → 3d² reals
//   Pair:    [herm(K1), herm(K2), free(R1), free(R2),
//             herm(Z1[0]), herm(Z2[0]), ..., herm(Z1[P-1]), herm(Z2[P-1])]
//                                                           → (6+2P)d² reals

fn pack_hermitian(m: &CMat, out: &mut Vec<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in i..d {
            if i == j {
                out.push(m[(i, i)].re);
            } else {
                out.push(m[(i, j)].re);
                out.push(m[(i, j)].im);
            }
        }
    }
}

fn unpack_hermitian(xs: &[f64], d: usize, cursor: &mut usize) -> CMat {
    let mut m = CMat::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            if i == j {
                m[(i, i)] = C64::new(xs[*cursor], 0.0);
                *cursor += 1;
            } else {
                let z = C64::new(xs[*cursor], xs[*cursor + 1]);
                *cursor += 2;
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
    }
    m
}

fn pack_free(m: &CMat, out: &mut Vec<f64>) {
    for z in m.iter() {
        out.push(z.re);
        out.push(z.im);
    }
}

fn unpack_free(xs: &[f64], d: usize, cursor: &mut usize) -> CMat {
    let mut m = CMat::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = C64::new(xs[*cursor], xs[*cursor + 1]);
            *cursor += 2;
        }
    }
    m
}

impl StateShape {
    /// Length of the flat real parameter vector for this shape.
    pub fn packed_len(&self) -> usize {
        match self {
            StateShape::Single { d } => 3 * d * d,
            StateShape::Pair { d, p } => (6 + 2 * p) * d * d,
        }
    }

    /// Rebuild structured parameters from a flat vector (inverse of
    /// [`CmpsParams::pack`]).
    pub fn unpack(&self, xs: &[f64]) -> Result<CmpsParams> {
        if xs.len() != self.packed_len() {
            return Err(Error::InvalidParameters(format!(
                "packed vector has length {}, shape {:?} needs {}",
                xs.len(),
                self,
                self.packed_len()
            )));
        }
        let mut cursor = 0usize;
        let params = match *self {
            StateShape::Single { d } => {
                let k = unpack_hermitian(xs, d, &mut cursor);
                let r = unpack_free(xs, d, &mut cursor);
                CmpsParams::Single(CmpsSingle { d, k, r })
            }
            StateShape::Pair { d, p } => {
                let k1 = unpack_hermitian(xs, d, &mut cursor);
                let k2 = unpack_hermitian(xs, d, &mut cursor);
                let r1 = unpack_free(xs, d, &mut cursor);
                let r2 = unpack_free(xs, d, &mut cursor);
                let mut z1 = Vec::with_capacity(p);
                let mut z2 = Vec::with_capacity(p);
                for _ in 0..p {
                    z1.push(unpack_hermitian(xs, d, &mut cursor));
                    z2.push(unpack_hermitian(xs, d, &mut cursor));
                }
                CmpsParams::Pair(CmpsPair {
                    d,
                    p,
                    k1,
                    k2,
                    r1,
                    r2,
                    z1,
                    z2,
                })
            }
        };
        debug_assert_eq!(cursor, xs.len());
        Ok(params)
    }
}

impl CmpsParams {
    /// Flatten to the real parameter vector the optimizer works on.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape().packed_len());
        match self {
            CmpsParams::Single(s) => {
                pack_hermitian(&s.k, &mut out);
                pack_free(&s.r, &mut out);
            }
            CmpsParams::Pair(s) => {
                pack_hermitian(&s.k1, &mut out);
                pack_hermitian(&s.k2, &mut out);
                pack_free(&s.r1, &mut out);
                pack_free(&s.r2, &mut out);
                for p in 0..s.p {
                    pack_hermitian(&s.z1[p], &mut out);
                    pack_hermitian(&s.z2[p], &mut out);
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Gauged auxiliary generator ready for measurement: `Q` and one field
/// matrix per species, all `Dtil×Dtil`, satisfying
/// `Q + Q† + Σ R†R = 0`. Retains the source parameters so checkpointing and
/// parameter extraction are lossless.
#[derive(Debug, Clone)]
pub struct AssembledState {
    pub dtil: usize,
    pub q: CMat,
    pub rs: Vec<CMat>,
    source: CmpsParams,
}

impl AssembledState {
    /// The parameters this state was assembled from (exact round-trip).
    pub fn source(&self) -> &CmpsParams {
        &self.source
    }

    /// Residual of the gauge identity `Q + Q† + Σ R†R = 0`, relative to
    /// the scale of `Q`.
    pub fn gauge_residual(&self) -> f64 {
        let mut s = &self.q + &adjoint(&self.q);
        for r in &self.rs {
            s = &s + &matmul(&adjoint(r), r);
        }
        frob_norm(&s) / frob_norm(&self.q).max(1e-300)
    }
}

fn check_hermitian(m: &CMat, tol: f64, what: &str) -> Result<()> {
    let scale = frob_norm(m).max(1.0);
    let dev = frob_norm(&(m - &adjoint(m)));
    if dev > tol * scale {
        return Err(Error::InvalidParameters(format!(
            "{what} is not Hermitian (deviation {dev:e}, scale {scale:e})"
        )));
    }
    Ok(())
}

fn check_matrix(m: &CMat, d: usize, what: &str) -> Result<()> {
    if m.dim() != (d, d) {
        return Err(Error::InvalidParameters(format!(
            "{what} must be {d}x{d}, got {:?}",
            m.dim()
        )));
    }
    if !all_finite(m) {
        return Err(Error::InvalidParameters(format!(
            "{what} contains non-finite entries"
        )));
    }
    Ok(())
}

/// `Q = −i·K − ½ Σ R†R` from Hermitian K and the field matrices.
fn gauged_q(k: &CMat, rs: &[&CMat]) -> CMat {
    let mut q = k.mapv(|z| z * C64::new(0.0, -1.0));
    for r in rs {
        q = &q - &matmul(&adjoint(r), r).mapv(|z| 0.5 * z);
    }
    q
}

/// Assemble a single-species state into its gauged generator.
pub fn assemble_single(s: &CmpsSingle) -> Result<AssembledState> {
    if s.d == 0 {
        return Err(Error::InvalidParameters("bond dimension must be ≥ 1".into()));
    }
    check_matrix(&s.k, s.d, "K")?;
    check_matrix(&s.r, s.d, "R")?;
    check_hermitian(&s.k, HERMITICITY_TOL, "K")?;
    let q = gauged_q(&s.k, &[&s.r]);
    Ok(AssembledState {
        dtil: s.d,
        q,
        rs: vec![s.r.clone()],
        source: CmpsParams::Single(s.clone()),
    })
}

/// Assemble a two-species Kronecker state into its gauged generator on the
/// product space (`Dtil = D²`).
pub fn assemble_pair(s: &CmpsPair) -> Result<AssembledState> {
    if s.d == 0 {
        return Err(Error::InvalidParameters("bond dimension must be ≥ 1".into()));
    }
    if s.p == 0 {
        return Err(Error::InvalidParameters(
            "coupling rank P must be ≥ 1 (use g = 0 for decoupled species)".into(),
        ));
    }
    if s.z1.len() != s.p || s.z2.len() != s.p {
        return Err(Error::InvalidParameters(format!(
            "expected {} coupling pairs, got {} and {}",
            s.p,
            s.z1.len(),
            s.z2.len()
        )));
    }
    check_matrix(&s.k1, s.d, "K1")?;
    check_matrix(&s.k2, s.d, "K2")?;
    check_matrix(&s.r1, s.d, "R1")?;
    check_matrix(&s.r2, s.d, "R2")?;
    check_hermitian(&s.k1, HERMITICITY_TOL, "K1")?;
    check_hermitian(&s.k2, HERMITICITY_TOL, "K2")?;
    for p in 0..s.p {
        check_matrix(&s.z1[p], s.d, "Z1")?;
        check_matrix(&s.z2[p], s.d, "Z2")?;
        check_hermitian(&s.z1[p], ASSEMBLED_HERMITICITY_TOL, "Z1")?;
        check_hermitian(&s.z2[p], ASSEMBLED_HERMITICITY_TOL, "Z2")?;
    }

    let id = identity(s.d);
    let mut k_til = kron(&s.k1, &id) + kron(&id, &s.k2);
    for p in 0..s.p {
        k_til = k_til + kron(&s.z1[p], &s.z2[p]);
    }
    check_hermitian(&k_til, ASSEMBLED_HERMITICITY_TOL, "assembled K")?;
    // Symmetrize away rounding noise so the gauge identity is exact.
    k_til = crate::linalg::hermitize(&k_til);

    let r1_til = kron(&s.r1, &id);
    let r2_til = kron(&id, &s.r2);
    let q = gauged_q(&k_til, &[&r1_til, &r2_til]);
    Ok(AssembledState {
        dtil: s.d * s.d,
        q,
        rs: vec![r1_til, r2_til],
        source: CmpsParams::Pair(s.clone()),
    })
}

// ---------------------------------------------------------------------------
// Transfer generator
// ---------------------------------------------------------------------------

/// Dense transfer generator `T = Q⊗I + I⊗Q* + Σ_α R_α⊗R_α*`, acting on
/// row-major vectorized `Dtil×Dtil` matrices as
/// `T·vec(X) = vec(QX + XQ† + Σ R_α X R_α†)`.
#[derive(Debug, Clone)]
pub struct TransferGenerator {
    pub dtil: usize,
    pub t: CMat,
}

pub fn transfer_generator(a: &AssembledState) -> TransferGenerator {
    let id = identity(a.dtil);
    let mut t = kron(&a.q, &id) + kron(&id, &a.q.mapv(|z| z.conj()));
    for r in &a.rs {
        t = t + kron(r, &r.mapv(|z| z.conj()));
    }
    TransferGenerator { dtil: a.dtil, t }
}

impl TransferGenerator {
    /// `‖vec(I)ᵀ·T‖ / ‖T‖`: the vectorized identity must be a left null
    /// vector for a gauged state.
    pub fn left_identity_residual(&self) -> f64 {
        let d = self.dtil;
        let n = d * d;
        let mut row_sum = vec![C64::new(0.0, 0.0); n];
        // vec(I)ᵀ·T picks out rows (i·d + i).
        for col in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for i in 0..d {
                s += self.t[(i * d + i, col)];
            }
            row_sum[col] = s;
        }
        let norm = row_sum.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        norm / frob_norm(&self.t).max(1e-300)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

/// Flat JSON checkpoint of a parameter set: topology tag, dimensions, and
/// real/imaginary parts of every matrix in row-major order. JSON numbers
/// are written in shortest round-trip form, so save → load is bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "snake_case")]
pub enum StateCheckpoint {
    Single {
        schema_version: u32,
        d: usize,
        k_re: Vec<f64>,
        k_im: Vec<f64>,
        r_re: Vec<f64>,
        r_im: Vec<f64>,
    },
    Pair {
        schema_version: u32,
        d: usize,
        p: usize,
        k1_re: Vec<f64>,
        k1_im: Vec<f64>,
        k2_re: Vec<f64>,
        k2_im: Vec<f64>,
        r1_re: Vec<f64>,
        r1_im: Vec<f64>,
        r2_re: Vec<f64>,
        r2_im: Vec<f64>,
        /// Concatenated row-major blocks, one per coupling pair.
        z1_re: Vec<f64>,
        z1_im: Vec<f64>,
        z2_re: Vec<f64>,
        z2_im: Vec<f64>,
    },
}

/// Schema version written by this crate.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

fn split_parts(m: &CMat) -> (Vec<f64>, Vec<f64>) {
    (
        m.iter().map(|z| z.re).collect(),
        m.iter().map(|z| z.im).collect(),
    )
}

fn join_parts(re: &[f64], im: &[f64], d: usize, what: &str) -> Result<CMat> {
    if re.len() != d * d || im.len() != d * d {
        return Err(Error::InvalidParameters(format!(
            "checkpoint field {what}: expected {} entries, got {}/{}",
            d * d,
            re.len(),
            im.len()
        )));
    }
    Ok(CMat::from_shape_fn((d, d), |(i, j)| {
        C64::new(re[i * d + j], im[i * d + j])
    }))
}

impl StateCheckpoint {
    pub fn from_params(params: &CmpsParams) -> Self {
        match params {
            CmpsParams::Single(s) => {
                let (k_re, k_im) = split_parts(&s.k);
                let (r_re, r_im) = split_parts(&s.r);
                StateCheckpoint::Single {
                    schema_version: CHECKPOINT_SCHEMA_VERSION,
                    d: s.d,
                    k_re,
                    k_im,
                    r_re,
                    r_im,
                }
            }
            CmpsParams::Pair(s) => {
                let (k1_re, k1_im) = split_parts(&s.k1);
                let (k2_re, k2_im) = split_parts(&s.k2);
                let (r1_re, r1_im) = split_parts(&s.r1);
                let (r2_re, r2_im) = split_parts(&s.r2);
                let mut z1_re = Vec::new();
                let mut z1_im = Vec::new();
                let mut z2_re = Vec::new();
                let mut z2_im = Vec::new();
                for p in 0..s.p {
                    let (a, b) = split_parts(&s.z1[p]);
                    z1_re.extend(a);
                    z1_im.extend(b);
                    let (a, b) = split_parts(&s.z2[p]);
                    z2_re.extend(a);
                    z2_im.extend(b);
                }
                StateCheckpoint::Pair {
                    schema_version: CHECKPOINT_SCHEMA_VERSION,
                    d: s.d,
                    p: s.p,
                    k1_re,
                    k1_im,
                    k2_re,
                    k2_im,
                    r1_re,
                    r1_im,
                    r2_re,
                    r2_im,
                    z1_re,
                    z1_im,
                    z2_re,
                    z2_im,
                }
            }
        }
    }

    pub fn into_params(&self) -> Result<CmpsParams> {
        match self {
            StateCheckpoint::Single {
                schema_version,
                d,
                k_re,
                k_im,
                r_re,
                r_im,
            } => {
                check_schema(*schema_version)?;
                Ok(CmpsParams::Single(CmpsSingle {
                    d: *d,
                    k: join_parts(k_re, k_im, *d, "K")?,
                    r: join_parts(r_re, r_im, *d, "R")?,
                }))
            }
            StateCheckpoint::Pair {
                schema_version,
                d,
                p,
                k1_re,
                k1_im,
                k2_re,
                k2_im,
                r1_re,
                r1_im,
                r2_re,
                r2_im,
                z1_re,
                z1_im,
                z2_re,
                z2_im,
            } => {
                check_schema(*schema_version)?;
                let dd = d * d;
                if z1_re.len() != p * dd || z2_re.len() != p * dd {
                    return Err(Error::InvalidParameters(format!(
                        "checkpoint Z blocks: expected {} entries, got {}/{}",
                        p * dd,
                        z1_re.len(),
                        z2_re.len()
                    )));
                }
                let mut z1 = Vec::with_capacity(*p);
                let mut z2 = Vec::with_capacity(*p);
                for idx in 0..*p {
                    let lo = idx * dd;
                    let hi = lo + dd;
                    z1.push(join_parts(&z1_re[lo..hi], &z1_im[lo..hi], *d, "Z1")?);
                    z2.push(join_parts(&z2_re[lo..hi], &z2_im[lo..hi], *d, "Z2")?);
                }
                Ok(CmpsParams::Pair(CmpsPair {
                    d: *d,
                    p: *p,
                    k1: join_parts(k1_re, k1_im, *d, "K1")?,
                    k2: join_parts(k2_re, k2_im, *d, "K2")?,
                    r1: join_parts(r1_re, r1_im, *d, "R1")?,
                    r2: join_parts(r2_re, r2_im, *d, "R2")?,
                    z1,
                    z2,
                }))
            }
        }
    }
}

fn check_schema(version: u32) -> Result<()> {
    if version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::InvalidParameters(format!(
            "unsupported checkpoint schema version {version} (this build reads {CHECKPOINT_SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Serialize parameters to a checkpoint file (pretty JSON).
pub fn save_checkpoint(path: &Path, params: &CmpsParams) -> Result<()> {
    let checkpoint = StateCheckpoint::from_params(params);
    let json = serde_json::to_string_pretty(&checkpoint)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load parameters from a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<CmpsParams> {
    let json = std::fs::read_to_string(path)?;
    let checkpoint: StateCheckpoint = serde_json::from_str(&json)?;
    checkpoint.into_params()
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eig, hermitize, vec_rm};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_shape_fn((d, d), |_| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn random_single(d: usize, seed: u64) -> CmpsSingle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CmpsSingle {
            d,
            k: hermitize(&random_matrix(d, &mut rng)),
            r: random_matrix(d, &mut rng),
        }
    }

    fn random_pair(d: usize, p: usize, seed: u64) -> CmpsPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CmpsPair {
            d,
            p,
            k1: hermitize(&random_matrix(d, &mut rng)),
            k2: hermitize(&random_matrix(d, &mut rng)),
            r1: random_matrix(d, &mut rng),
            r2: random_matrix(d, &mut rng),
            z1: (0..p).map(|_| hermitize(&random_matrix(d, &mut rng))).collect(),
            z2: (0..p).map(|_| hermitize(&random_matrix(d, &mut rng))).collect(),
        }
    }

    #[test]
    fn scalar_single_assembly() {
        let rho: f64 = 0.7;
        let s = CmpsSingle {
            d: 1,
            k: CMat::zeros((1, 1)),
            r: CMat::from_elem((1, 1), C64::new(rho.sqrt(), 0.0)),
        };
        let a = assemble_single(&s).unwrap();
        assert_abs_diff_eq!(a.q[(0, 0)].re, -rho / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a.q[(0, 0)].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_field_gives_anti_hermitian_q() {
        let mut s = random_single(3, 1);
        s.r = CMat::zeros((3, 3));
        let a = assemble_single(&s).unwrap();
        let sum = &a.q + &adjoint(&a.q);
        assert!(frob_norm(&sum) < 1e-14);
    }

    #[test]
    fn gauge_identity_forced_by_construction() {
        let a = assemble_single(&random_single(3, 2)).unwrap();
        assert!(a.gauge_residual() < 1e-14);
        let b = assemble_pair(&random_pair(3, 2, 3)).unwrap();
        assert!(b.gauge_residual() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian_k() {
        let mut s = random_single(3, 4);
        s.k[(0, 1)] += C64::new(0.1, 0.0);
        match assemble_single(&s) {
            Err(Error::InvalidParameters(_)) => {}
            other => panic!("expected InvalidParameters, got {other:?}"),
        }
    }

    #[test]
    fn scalar_pair_hamiltonian() {
        let s = CmpsPair {
            d: 1,
            p: 1,
            k1: CMat::from_elem((1, 1), C64::new(0.3, 0.0)),
            k2: CMat::from_elem((1, 1), C64::new(-0.2, 0.0)),
            r1: CMat::from_elem((1, 1), C64::new(0.5, 0.0)),
            r2: CMat::from_elem((1, 1), C64::new(0.6, 0.0)),
            z1: vec![CMat::from_elem((1, 1), C64::new(0.4, 0.0))],
            z2: vec![CMat::from_elem((1, 1), C64::new(0.7, 0.0))],
        };
        let a = assemble_pair(&s).unwrap();
        // K̃ = k1 + k2 + z1·z2, Q̃ = −iK̃ − (r1² + r2²)/2 for real scalars.
        let k_til = 0.3 - 0.2 + 0.4 * 0.7;
        assert_abs_diff_eq!(a.q[(0, 0)].im, -k_til, epsilon = 1e-15);
        assert_abs_diff_eq!(
            a.q[(0, 0)].re,
            -(0.25 + 0.36) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pair_parameter_count_matches_formula() {
        let s = random_pair(5, 1, 5);
        assert_eq!(s.parameter_count(), 150);
        let s = random_pair(3, 2, 6);
        assert_eq!(s.parameter_count(), 9 * (4 + 4));
    }

    #[test]
    fn transfer_generator_dominant_eigenvalue_vanishes() {
        let a = assemble_single(&random_single(2, 7)).unwrap();
        let t = transfer_generator(&a);
        let spectrum = eig(&t.t).unwrap();
        let max_re = spectrum.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        assert!(
            max_re.abs() <= 1e-10,
            "dominant eigenvalue real part {max_re:e}"
        );
        // All other eigenvalues strictly stable.
        let mut res: Vec<f64> = spectrum.values.iter().map(|z| z.re).collect();
        res.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!(res[1] < 0.0, "subdominant eigenvalue {:?}", res[1]);
    }

    #[test]
    fn scalar_transfer_generator_is_zero() {
        let s = CmpsSingle {
            d: 1,
            k: CMat::zeros((1, 1)),
            r: CMat::from_elem((1, 1), C64::new(0.9, 0.0)),
        };
        let t = transfer_generator(&assemble_single(&s).unwrap());
        assert!(frob_norm(&t.t) < 1e-15);
    }

    #[test]
    fn zero_field_transfer_spectrum_is_imaginary() {
        let mut s = random_single(3, 8);
        s.r = CMat::zeros((3, 3));
        let t = transfer_generator(&assemble_single(&s).unwrap());
        let spectrum = eig(&t.t).unwrap();
        for z in spectrum.values.iter() {
            assert!(z.re.abs() < 1e-12, "expected imaginary spectrum, got {z}");
        }
        // Closed form: {−i(k_i − k_j)} for K eigenvalues k_i.
        let ks = eig(&s.k).unwrap();
        let mut expected: Vec<f64> = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                expected.push(-(ks.values[i].re - ks.values[j].re));
            }
        }
        let mut got: Vec<f64> = spectrum.values.iter().map(|z| z.im).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, e) in got.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn left_identity_is_null_row() {
        for seed in [10u64, 11, 12] {
            let a = assemble_single(&random_single(3, seed)).unwrap();
            let t = transfer_generator(&a);
            assert!(t.left_identity_residual() <= 1e-10);
        }
        let a = assemble_pair(&random_pair(2, 1, 13)).unwrap();
        let t = transfer_generator(&a);
        assert!(t.left_identity_residual() <= 1e-10);
    }

    #[test]
    fn decoupled_pair_matches_kron_lifted_sum() {
        // With Z = 0 the pair generator must be the Kronecker lift of the
        // two independent single-species generators: in 4-index notation
        // T[(abcd),(a'b'c'd')] = T1[(ac),(a'c')] δ_bb' δ_dd'
        //                      + T2[(bd),(b'd')] δ_aa' δ_cc'.
        let d = 2;
        let mut pair = random_pair(d, 1, 14);
        pair.z1 = vec![CMat::zeros((d, d))];
        pair.z2 = vec![CMat::zeros((d, d))];
        let t_pair = transfer_generator(&assemble_pair(&pair).unwrap()).t;

        let s1 = CmpsSingle { d, k: pair.k1.clone(), r: pair.r1.clone() };
        let s2 = CmpsSingle { d, k: pair.k2.clone(), r: pair.r2.clone() };
        let t1 = transfer_generator(&assemble_single(&s1).unwrap()).t;
        let t2 = transfer_generator(&assemble_single(&s2).unwrap()).t;

        let dd = d * d;
        let idx4 = |a: usize, b: usize, c: usize, e: usize| ((a * d + b) * d + c) * d + e;
        let mut expected = CMat::zeros((dd * dd, dd * dd));
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        for a2 in 0..d {
                            for b2 in 0..d {
                                for c2 in 0..d {
                                    for e2 in 0..d {
                                        let mut v = C64::new(0.0, 0.0);
                                        if b == b2 && e == e2 {
                                            v += t1[(a * d + c, a2 * d + c2)];
                                        }
                                        if a == a2 && c == c2 {
                                            v += t2[(b * d + e, b2 * d + e2)];
                                        }
                                        expected[(idx4(a, b, c, e), idx4(a2, b2, c2, e2))] = v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let diff = frob_norm(&(&t_pair - &expected));
        assert!(diff < 1e-12, "decoupled lift mismatch {diff:e}");
    }

    #[test]
    fn transfer_action_matches_superoperator_formula() {
        // T·vec(X) must equal vec(QX + XQ† + Σ R X R†).
        let a = assemble_single(&random_single(3, 15)).unwrap();
        let t = transfer_generator(&a);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_matrix(3, &mut rng);
        let lhs = t.t.dot(&vec_rm(&x));
        let mut rhs_mat = matmul(&a.q, &x) + matmul(&x, &adjoint(&a.q));
        for r in &a.rs {
            rhs_mat = rhs_mat + matmul3(r, &x, &adjoint(r));
        }
        let rhs = vec_rm(&rhs_mat);
        for i in 0..9 {
            assert_abs_diff_eq!(lhs[i].re, rhs[i].re, epsilon = 1e-12);
            assert_abs_diff_eq!(lhs[i].im, rhs[i].im, epsilon = 1e-12);
        }
    }

    use crate::linalg::matmul3;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        for params in [
            CmpsParams::Single(random_single(3, 17)),
            CmpsParams::Pair(random_pair(2, 2, 18)),
        ] {
            let path = tmp.path().join("state.json");
            save_checkpoint(&path, &params).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(params, loaded, "checkpoint round-trip must be exact");
        }
    }

    #[test]
    fn checkpoint_rejects_corrupt_payload() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("state.json");
        std::fs::write(&path, "{\"topology\":\"single\",\"schema_version\":1,\"d\":2,\"k_re\":[0.0],\"k_im\":[],\"r_re\":[],\"r_im\":[]}").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pack_unpack_roundtrip_single(seed in 0u64..1000, d in 1usize..4) {
            let params = CmpsParams::Single(random_single(d, seed));
            let packed = params.pack();
            prop_assert_eq!(packed.len(), params.shape().packed_len());
            let rebuilt = params.shape().unpack(&packed).unwrap();
            prop_assert_eq!(params, rebuilt);
        }

        #[test]
        fn pack_unpack_roundtrip_pair(seed in 0u64..1000, d in 1usize..3, p in 1usize..3) {
            let params = CmpsParams::Pair(random_pair(d, p, seed));
            let packed = params.pack();
            prop_assert_eq!(packed.len(), params.shape().packed_len());
            let rebuilt = params.shape().unpack(&packed).unwrap();
            prop_assert_eq!(params, rebuilt);
        }

        #[test]
        fn assembled_source_roundtrip(seed in 0u64..1000) {
            let params = CmpsParams::Pair(random_pair(2, 1, seed));
            let assembled = params.assemble().unwrap();
            prop_assert_eq!(assembled.source(), &params);
        }

        #[test]
        fn gauge_identity_random_states(seed in 0u64..1000, d in 1usize..4) {
            let a = assemble_single(&random_single(d, seed)).unwrap();
            prop_assert!(a.gauge_residual() < 1e-13);
        }
    }
}
