//! Mesh Laplacian spectra and spectral-interpolation augmentation.
//!
//! All meshes of a cohort share one combinatorial Laplacian `L = U Λ Uᵀ`. Its
//! orthonormal eigenvectors define a Fourier transform `X̂ = Uᵀ X` with inverse
//! `X = U X̂`, and augmentation interpolates the low-frequency rows of `X̂`
//! between two subjects with per-component random weights.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::CsrMatrix;
use crate::mesh::{CorrespondedMesh, MeshError, MeshTopology, TopologyId};

/// Number of leading spectral components that are interpolated.
pub const INTERPOLATED_COMPONENTS: usize = 30;
/// Mean of the interpolation weight distribution.
pub const WEIGHT_MEAN: f64 = 0.5;
/// Standard deviation of the interpolation weight distribution.
pub const WEIGHT_STD: f64 = 0.5;

const BASIS_MAGIC: &[u8; 8] = b"LBASIS01";

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("requested {k} eigenpairs from a {n}x{n} operator")]
    TooManyEigenpairs { k: usize, n: usize },
    #[error("operator is not square and symmetric")]
    NotSymmetric,
    #[error("eigensolver did not converge after {iterations} restarts; residual norms {residuals:?}")]
    NonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },
    #[error("basis has {basis} rows but mesh has {mesh} vertices")]
    BasisMismatch { basis: usize, mesh: usize },
    #[error("coefficient rows {coeffs} do not match basis size {basis}")]
    CoefficientMismatch { coeffs: usize, basis: usize },
    #[error("weight vector length {weights} does not match basis size {basis}")]
    WeightMismatch { weights: usize, basis: usize },
    #[error("basis cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

/// Uniform graph Laplacian: vertex degree on the diagonal, `-1` per edge.
pub fn build_laplacian(topology: &MeshTopology) -> CsrMatrix {
    let n = topology.vertex_count();
    let edges = topology.edges();
    let mut degree = vec![0.0; n];
    let mut triplets = Vec::with_capacity(edges.len() * 2 + n);
    for &(a, b) in &edges {
        degree[a] += 1.0;
        degree[b] += 1.0;
        triplets.push((a, b, -1.0));
        triplets.push((b, a, -1.0));
    }
    triplets.extend(degree.iter().enumerate().map(|(v, &d)| (v, v, d)));
    CsrMatrix::from_triplets(n, n, triplets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenSolver {
    /// Dense below `dense_threshold` vertices, Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenOptions {
    pub solver: EigenSolver,
    pub dense_threshold: usize,
    /// Residual tolerance, relative to the Gershgorin bound of the operator.
    pub tol: f64,
    /// Maximum Lanczos restart cycles; `None` means `10 * k`.
    pub max_restarts: Option<usize>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            solver: EigenSolver::Auto,
            dense_threshold: 3000,
            tol: 1e-8,
            max_restarts: None,
            seed: 0x5eed,
        }
    }
}

/// The `k` smallest eigenpairs of the shared Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianEigenbasis {
    topology: Option<TopologyId>,
    eigenvalues: Vec<f64>,
    /// `n × k`, orthonormal columns.
    eigenvectors: DMatrix<f64>,
}

impl LaplacianEigenbasis {
    pub fn from_parts(
        topology: Option<TopologyId>,
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<f64>,
    ) -> Self {
        assert_eq!(eigenvalues.len(), eigenvectors.ncols());
        Self {
            topology,
            eigenvalues,
            eigenvectors,
        }
    }

    /// Laplacian of `topology` decomposed with default options.
    pub fn for_topology(topology: &MeshTopology, k: usize) -> Result<Self> {
        let lap = build_laplacian(topology);
        let mut basis = eigendecompose(&lap, k)?;
        basis.topology = Some(topology.id().clone());
        Ok(basis)
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn topology(&self) -> Option<&TopologyId> {
        self.topology.as_ref()
    }

    /// `‖UᵀU − I‖∞`.
    pub fn orthonormality_residual(&self) -> f64 {
        let gram = self.eigenvectors.transpose() * &self.eigenvectors;
        let k = self.k();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// `‖L u_i − λ_i u_i‖₂` per eigenpair.
    pub fn residual_norms(&self, lap: &CsrMatrix) -> Vec<f64> {
        residuals(lap, &self.eigenvalues, &self.eigenvectors)
    }

    fn check_mesh(&self, mesh: &CorrespondedMesh) -> Result<()> {
        if mesh.vertex_count() != self.vertex_count() {
            return Err(SpectralError::BasisMismatch {
                basis: self.vertex_count(),
                mesh: mesh.vertex_count(),
            });
        }
        if let Some(id) = &self.topology {
            if id != mesh.topology().id() {
                return Err(MeshError::TopologyMismatch.into());
            }
        }
        Ok(())
    }

    /// Writes the versioned binary cache: magic, topology hash, sizes, then
    /// little-endian eigenvalues and column-major eigenvectors.
    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BASIS_MAGIC)?;
        let id = self.topology.as_ref().map(|t| t.0.as_str()).unwrap_or("");
        out.write_all(&(id.len() as u32).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        out.write_all(&(self.vertex_count() as u64).to_le_bytes())?;
        out.write_all(&(self.k() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * (self.k() + self.eigenvectors.len()));
        for v in self.eigenvalues.iter().chain(self.eigenvectors.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BASIS_MAGIC {
            return Err(SpectralError::Cache("bad magic or version".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let mut id = vec![0u8; u32::from_le_bytes(word) as usize];
        input.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|e| SpectralError::Cache(e.to_string()))?;
        let mut long = [0u8; 8];
        input.read_exact(&mut long)?;
        let n = u64::from_le_bytes(long) as usize;
        input.read_exact(&mut long)?;
        let k = u64::from_le_bytes(long) as usize;
        let mut bytes = vec![0u8; 8 * (k + n * k)];
        input.read_exact(&mut bytes)?;
        let floats: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            topology: (!id.is_empty()).then_some(TopologyId(id)),
            eigenvalues: floats[..k].to_vec(),
            eigenvectors: DMatrix::from_column_slice(n, k, &floats[k..]),
        })
    }

    /// Loads the cache at `path` when it matches `topology` and holds at least
    /// `k` pairs; otherwise recomputes and rewrites it.
    pub fn cached(path: &Path, topology: &MeshTopology, k: usize) -> Result<Self> {
        if let Ok(file) = std::fs::File::open(path) {
            if let Ok(basis) = Self::read_cache(std::io::BufReader::new(file)) {
                if basis.topology.as_ref() == Some(topology.id()) && basis.k() >= k {
                    return Ok(basis.truncated(k));
                }
            }
        }
        let basis = Self::for_topology(topology, k)?;
        let file = std::fs::File::create(path)?;
        basis.write_cache(std::io::BufWriter::new(file))?;
        Ok(basis)
    }

    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.k());
        Self {
            topology: self.topology.clone(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            eigenvectors: self.eigenvectors.columns(0, k).into_owned(),
        }
    }
}

fn residuals(lap: &CsrMatrix, values: &[f64], vectors: &DMatrix<f64>) -> Vec<f64> {
    let n = vectors.nrows();
    let mut y = vec![0.0; n];
    values
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let u = vectors.column(i);
            lap.matvec(u.as_slice(), &mut y);
            y.iter()
                .zip(u.iter())
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Smallest `k` eigenpairs, ascending, with default options.
pub fn eigendecompose(lap: &CsrMatrix, k: usize) -> Result<LaplacianEigenbasis> {
    eigendecompose_with(lap, k, &EigenOptions::default())
}

pub fn eigendecompose_with(
    lap: &CsrMatrix,
    k: usize,
    opts: &EigenOptions,
) -> Result<LaplacianEigenbasis> {
    let n = lap.rows();
    if k > n {
        return Err(SpectralError::TooManyEigenpairs { k, n });
    }
    if !lap.is_symmetric(1e-12) {
        return Err(SpectralError::NotSymmetric);
    }
    let use_dense = match opts.solver {
        EigenSolver::Dense => true,
        EigenSolver::Lanczos => false,
        EigenSolver::Auto => n <= opts.dense_threshold,
    };
    let (values, mut vectors) = if use_dense {
        dense_smallest(lap, k)
    } else {
        lanczos_smallest(lap, k, opts)?
    };
    normalize_signs(&mut vectors);
    Ok(LaplacianEigenbasis {
        topology: None,
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

fn dense_smallest(lap: &CsrMatrix, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(lap.to_dense());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = lap.rows();
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Makes the first entry of each column with magnitude above 1e-10 positive.
fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-10) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

fn gershgorin_bound(lap: &CsrMatrix) -> f64 {
    (0..lap.rows())
        .map(|r| lap.row(r).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for b in basis {
            let proj: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            w.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize, against: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(&mut v, against);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

/// Thick-restarted block Krylov iteration with explicit Rayleigh-Ritz
/// projection. Each cycle starts from the retained Ritz vectors of the
/// previous one, expands with their images, and locks converged pairs from
/// the bottom of the spectrum. A random starting block wide enough to cover
/// degenerate eigenspaces avoids missing repeated eigenvalues.
fn lanczos_smallest(
    lap: &CsrMatrix,
    k: usize,
    opts: &EigenOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = lap.rows();
    let scale = gershgorin_bound(lap).max(1.0);
    let tol = opts.tol * scale;
    let max_restarts = opts.max_restarts.unwrap_or(10 * k.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let buffer = (k / 4).max(10);
    let mut locked: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut keep: Vec<Vec<f64>> = Vec::new();
    let mut restarts = 0;
    let mut last_residuals = Vec::new();

    loop {
        let locked_vecs: Vec<Vec<f64>> = locked.iter().map(|(_, v)| v.clone()).collect();
        let room = n - locked.len();
        if room == 0 {
            break;
        }
        if restarts >= max_restarts {
            return Err(SpectralError::NonConvergence {
                iterations: restarts,
                residuals: last_residuals,
            });
        }
        restarts += 1;
        let want = (k.saturating_sub(locked.len()) + buffer).min(room);
        let m = (3 * want).max(40).min(room);

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut images: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut w = vec![0.0; n];
        let mut push = |v: Vec<f64>, basis: &mut Vec<Vec<f64>>, images: &mut Vec<Vec<f64>>| {
            lap.matvec(&v, &mut w);
            images.push(w.clone());
            basis.push(v);
        };
        for mut v in keep.drain(..) {
            orthogonalize(&mut v, &locked_vecs);
            orthogonalize(&mut v, &basis);
            let nv = norm(&v);
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                push(v, &mut basis, &mut images);
            }
        }
        while basis.len() < want.min(m) {
            let mut all = locked_vecs.clone();
            all.extend(basis.iter().cloned());
            match random_unit(&mut rng, n, &all) {
                Some(v) => push(v, &mut basis, &mut images),
                None => break,
            }
        }
        let mut frontier = 0;
        while basis.len() < m {
            let candidate = if frontier < images.len() {
                frontier += 1;
                let mut c = images[frontier - 1].clone();
                orthogonalize(&mut c, &locked_vecs);
                orthogonalize(&mut c, &basis);
                let nc = norm(&c);
                (nc > 1e-10 * scale).then(|| {
                    c.iter_mut().for_each(|x| *x /= nc);
                    c
                })
            } else {
                let mut all = locked_vecs.clone();
                all.extend(basis.iter().cloned());
                match random_unit(&mut rng, n, &all) {
                    Some(v) => Some(v),
                    None => break,
                }
            };
            if let Some(c) = candidate {
                push(c, &mut basis, &mut images);
            }
        }

        let m = basis.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let h = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
                t[(i, j)] = h;
                t[(j, i)] = h;
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let top = (locked.len() >= k).then(|| locked[k - 1].0);
        let mut converging = true;
        let mut done = top.is_some();
        last_residuals.clear();
        for &idx in order.iter().take(want) {
            let theta = eig.eigenvalues[idx];
            let s = eig.eigenvectors.column(idx);
            let mut y = vec![0.0; n];
            let mut y_l = vec![0.0; n];
            for ((coef, b), l) in s.iter().zip(&basis).zip(&images) {
                y.iter_mut().zip(b).for_each(|(acc, x)| *acc += coef * x);
                y_l.iter_mut().zip(l).for_each(|(acc, x)| *acc += coef * x);
            }
            let r = y_l
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - theta * b).powi(2))
                .sum::<f64>()
                .sqrt();
            last_residuals.push(r);
            let needed = match top {
                Some(top) => theta < top - tol,
                None => locked.len() < k,
            };
            if !needed {
                break;
            }
            done = false;
            if converging && r <= tol {
                locked.push((theta, y));
            } else {
                converging = false;
                keep.push(y);
            }
        }
        locked.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Keep the locked set orthonormal against roundoff drift.
        for i in 0..locked.len() {
            let (head, tail) = locked.split_at_mut(i);
            let v = &mut tail[0].1;
            let prev: Vec<Vec<f64>> = head.iter().map(|(_, v)| v.clone()).collect();
            orthogonalize(v, &prev);
            let nv = norm(v);
            v.iter_mut().for_each(|x| *x /= nv);
        }
        if done {
            break;
        }
    }

    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for (j, (theta, v)) in locked.into_iter().take(k).enumerate() {
        values.push(theta);
        vectors.set_column(j, &DVector::from_vec(v));
    }
    Ok((values, vectors))
}

/// Rows are spectral components, columns are x, y, z.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoefficients {
    coeffs: DMatrix<f64>,
}

impl SpectralCoefficients {
    pub fn new(coeffs: DMatrix<f64>) -> Self {
        assert_eq!(coeffs.ncols(), 3);
        Self { coeffs }
    }

    pub fn zeros(k: usize) -> Self {
        Self::new(DMatrix::zeros(k, 3))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn k(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn get(&self, component: usize, coord: usize) -> f64 {
        self.coeffs[(component, coord)]
    }
}

fn positions_matrix(positions: &[[f64; 3]]) -> DMatrix<f64> {
    DMatrix::from_fn(positions.len(), 3, |r, c| positions[r][c])
}

/// `X̂ = Uᵀ X`.
pub fn fourier(mesh: &CorrespondedMesh, basis: &LaplacianEigenbasis) -> Result<SpectralCoefficients> {
    basis.check_mesh(mesh)?;
    let x = positions_matrix(mesh.positions());
    Ok(SpectralCoefficients::new(basis.eigenvectors.tr_mul(&x)))
}

/// `X = U X̂`.
pub fn inverse_fourier(
    coeffs: &SpectralCoefficients,
    basis: &LaplacianEigenbasis,
) -> Result<Vec<[f64; 3]>> {
    if coeffs.k() != basis.k() {
        return Err(SpectralError::CoefficientMismatch {
            coeffs: coeffs.k(),
            basis: basis.k(),
        });
    }
    let x = &basis.eigenvectors * &coeffs.coeffs;
    Ok((0..x.nrows())
        .map(|r| [x[(r, 0)], x[(r, 1)], x[(r, 2)]])
        .collect())
}

/// Per-component interpolation weights ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationWeights {
    rho: Vec<f64>,
    seed: u64,
}

impl InterpolationWeights {
    /// Explicit weights; entries past the first 30 must be zero.
    pub fn from_values(rho: Vec<f64>, seed: u64) -> Self {
        assert!(
            rho.iter().skip(INTERPOLATED_COMPONENTS).all(|&r| r == 0.0),
            "only the first {INTERPOLATED_COMPONENTS} weights may be non-zero"
        );
        Self { rho, seed }
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draws the first 30 weights from N(0.5, 0.5²) and zeroes the rest.
///
/// Draws are not clamped, so some weights extrapolate beyond `[0, 1]`.
pub fn sample_weights(seed: u64, k: usize) -> InterpolationWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(WEIGHT_MEAN, WEIGHT_STD).expect("valid normal");
    let drawn: Vec<f64> = (0..INTERPOLATED_COMPONENTS)
        .map(|_| normal.sample(&mut rng))
        .collect();
    let rho = (0..k)
        .map(|i| drawn.get(i).copied().unwrap_or(0.0))
        .collect();
    InterpolationWeights { rho, seed }
}

/// `X_aug = X₁ + U [ρ ⊙ Uᵀ (X₂ − X₁)]`.
pub fn spectral_augment(
    x1: &CorrespondedMesh,
    x2: &CorrespondedMesh,
    weights: &InterpolationWeights,
    basis: &LaplacianEigenbasis,
) -> Result<CorrespondedMesh> {
    if !x1.same_topology(x2) {
        return Err(MeshError::TopologyMismatch.into());
    }
    basis.check_mesh(x1)?;
    if weights.rho.len() != basis.k() {
        return Err(SpectralError::WeightMismatch {
            weights: weights.rho.len(),
            basis: basis.k(),
        });
    }
    let active: Vec<usize> = (0..basis.k()).filter(|&i| weights.rho[i] != 0.0).collect();
    if active.is_empty() {
        return Ok(x1.clone());
    }
    let n = x1.vertex_count();
    let diff = DMatrix::from_fn(n, 3, |r, c| x2.positions()[r][c] - x1.positions()[r][c]);
    let u = basis.eigenvectors.select_columns(active.iter());
    let mut coeffs = u.tr_mul(&diff);
    for (row, &i) in active.iter().enumerate() {
        let rho = weights.rho[i];
        coeffs.row_mut(row).iter_mut().for_each(|c| *c *= rho);
    }
    let delta = u * coeffs;
    let positions = x1
        .positions()
        .iter()
        .enumerate()
        .map(|(r, p)| [p[0] + delta[(r, 0)], p[1] + delta[(r, 1)], p[2] + delta[(r, 2)]])
        .collect();
    Ok(CorrespondedMesh::new(x1.topology().clone(), positions)?)
}

/// Descriptive metadata carried alongside each exported spectrum.
#[derive(Debug, Clone)]
pub struct SpectrumSubject<'a> {
    pub id: &'a str,
    pub class_label: &'a str,
    pub age: f64,
    pub sex: &'a str,
    pub mesh: &'a CorrespondedMesh,
}

/// Header of the spectra CSV.
pub const SPECTRA_COLUMNS: [&str; 7] = [
    "subject", "class", "age", "sex", "coordinate", "component", "value",
];

/// Long-format CSV of the first `n_components` spectral rows of every subject.
pub fn export_spectra<W: Write>(
    out: W,
    subjects: &[SpectrumSubject<'_>],
    basis: &LaplacianEigenbasis,
    n_components: usize,
) -> Result<usize> {
    let n_components = n_components.min(basis.k());
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(SPECTRA_COLUMNS)?;
    let mut rows = 0;
    for s in subjects {
        let coeffs = fourier(s.mesh, basis)?;
        for (c, axis) in ["x", "y", "z"].iter().enumerate() {
            for comp in 0..n_components {
                let mut value = String::new();
                let _ = write!(value, "{}", coeffs.get(comp, c));
                writer.write_record([
                    s.id,
                    s.class_label,
                    &s.age.to_string(),
                    s.sex,
                    axis,
                    &(comp + 1).to_string(),
                    &value,
                ])?;
                rows += 1;
            }
        }
    }
    writer.flush()?;
    Ok(rows)
}
