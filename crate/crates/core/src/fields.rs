//! Benchmark coefficient fields and forcing terms, evaluated per element.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sampling::rng_stream;

/// Fraction of the covariance trace kept by the default truncation.
pub const KL_ENERGY: f64 = 0.999;

/// Largest element count for which the dense centroid covariance is built.
pub const KL_MAX_ELEMENTS: usize = 6000;

/// `k` iid draws from `U([lo, hi])`.
pub fn uniform_field(k: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid uniform range [{lo}, {hi}]")));
    }
    if lo == hi {
        return Ok(vec![lo; k]);
    }
    let mut rng = rng_stream(seed, 1);
    Ok((0..k).map(|_| rng.random_range(lo..=hi)).collect())
}

/// `Γ(ν)` for positive half-integers `ν`.
fn gamma_half_integer(nu: f64) -> f64 {
    let mut g = PI.sqrt();
    let mut x = 0.5;
    while x < nu - 0.25 {
        g *= x;
        x += 1.0;
    }
    g
}

/// `r^ν K_ν(r)` for half-integer `ν`, by upward recurrence from `ν = 1/2, 3/2`.
fn scaled_bessel_k(nu: f64, r: f64) -> f64 {
    let base = (PI / 2.0).sqrt() * (-r).exp();
    let mut prev = base;
    let mut cur = base * (1.0 + r);
    if nu < 1.0 {
        return prev;
    }
    let mut order = 1.5;
    while order < nu - 0.25 {
        let next = r * r * prev + 2.0 * order * cur;
        prev = cur;
        cur = next;
        order += 1.0;
    }
    cur
}

fn check_half_integer(nu: f64) -> Result<()> {
    let twice = 2.0 * nu;
    if !(nu > 0.0) || twice.fract() != 0.0 || twice as i64 % 2 != 1 {
        return Err(Error::InvalidArgument(format!(
            "smoothness {nu} must be a positive half-integer"
        )));
    }
    Ok(())
}

/// Whittle–Matérn covariance `Var · 2^{1−ν}/Γ(ν) · r^ν K_ν(r)` with
/// `r = ‖diag(scales)⁻¹ (x − y)‖`.
///
/// `scales` is the diagonal of the length-scale matrix `M^{1/2}`.
pub fn matern_covariance(x: &[f64], y: &[f64], nu: f64, scales: &[f64], variance: f64) -> Result<f64> {
    check_half_integer(nu)?;
    if x.len() != y.len() || x.len() != scales.len() {
        return Err(Error::DimensionMismatch {
            context: "covariance arguments",
            expected: scales.len(),
            actual: x.len().min(y.len()),
        });
    }
    if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("length scales must be positive".into()));
    }
    if !(variance >= 0.0) {
        return Err(Error::InvalidArgument(format!("variance {variance} is negative")));
    }
    Ok(matern_unchecked(x, y, nu, scales, variance))
}

fn matern_unchecked(x: &[f64], y: &[f64], nu: f64, scales: &[f64], variance: f64) -> f64 {
    let r = x
        .iter()
        .zip(y)
        .zip(scales)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        .sqrt();
    if r == 0.0 {
        return variance;
    }
    variance * 2f64.powf(1.0 - nu) / gamma_half_integer(nu) * scaled_bessel_k(nu, r)
}

/// Truncated Karhunen–Loève expansion of a Matérn field at element centroids.
#[derive(Clone, Debug)]
pub struct KarhunenLoeve {
    /// Column `j` holds `√λ_j v_j`.
    modes: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue of the full covariance (before clamping).
    pub min_eigenvalue: f64,
}

impl KarhunenLoeve {
    /// `kl_modes = None` keeps the smallest number of modes capturing
    /// [`KL_ENERGY`] of the trace.
    pub fn new(mesh: &Mesh, nu: f64, scales: &[f64], variance: f64, kl_modes: Option<usize>) -> Result<Self> {
        check_half_integer(nu)?;
        let k = mesh.num_elements();
        if scales.len() != mesh.dim() {
            return Err(Error::DimensionMismatch {
                context: "length scales",
                expected: mesh.dim(),
                actual: scales.len(),
            });
        }
        if k > KL_MAX_ELEMENTS {
            return Err(Error::InvalidArgument(format!(
                "dense expansion limited to {KL_MAX_ELEMENTS} elements, mesh has {k}"
            )));
        }
        if let Some(m) = kl_modes {
            if m == 0 || m > k {
                return Err(Error::InvalidArgument(format!("mode count {m} must lie in 1..={k}")));
            }
        }
        // Validates scales and variance.
        matern_covariance(scales, scales, nu, scales, variance)?;
        if variance == 0.0 {
            return Ok(Self {
                modes: DMatrix::zeros(k, 0),
                eigenvalues: Vec::new(),
                min_eigenvalue: 0.0,
            });
        }
        let cov = centroid_covariance(mesh, nu, scales, variance);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let min_eigenvalue = eig.eigenvalues.min();
        let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let m = kl_modes.unwrap_or_else(|| {
            let total: f64 = lam.iter().sum();
            let mut acc = 0.0;
            lam.iter()
                .position(|&l| {
                    acc += l;
                    acc >= KL_ENERGY * total
                })
                .map_or(k, |i| i + 1)
        });
        let mut modes = eig.eigenvectors.select_columns(&order[..m]);
        for (j, mut col) in modes.column_iter_mut().enumerate() {
            col *= lam[j].sqrt();
        }
        Ok(Self {
            modes,
            eigenvalues: lam[..m].to_vec(),
            min_eigenvalue,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.modes.ncols()
    }

    /// One Gaussian realisation `b = Σ √λ_j ξ_j v_j`.
    pub fn sample_gaussian(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_stream(seed, 2);
        let xi = DVector::from_fn(self.modes.ncols(), |_, _| StandardNormal.sample(&mut rng));
        (&self.modes * xi).data.into()
    }

    /// `exp(b)` elementwise.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        self.sample_gaussian(seed).into_iter().map(f64::exp).collect()
    }
}

/// Dense covariance between all element centroids.
pub fn centroid_covariance(mesh: &Mesh, nu: f64, scales: &[f64], variance: f64) -> DMatrix<f64> {
    let cents = mesh.centroids();
    let k = cents.len();
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let c = matern_unchecked(&cents[i], &cents[j], nu, scales, variance);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    cov
}

/// Lognormal coefficients `exp(b)` with `b` a Matérn field.
pub fn lognormal_field(
    mesh: &Mesh,
    nu: f64,
    scales: &[f64],
    variance: f64,
    kl_modes: Option<usize>,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(KarhunenLoeve::new(mesh, nu, scales, variance, kl_modes)?.sample(seed))
}

/// Parameters of the piecewise sign field `offset + Σ w_i sgn(x_i) + noise·U([0,1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignField {
    pub offset: f64,
    pub weights: Vec<f64>,
    pub noise: f64,
}

impl Default for SignField {
    fn default() -> Self {
        Self {
            offset: 9.1,
            weights: vec![1.0, 3.0, 5.0],
            noise: 0.1,
        }
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign field at element centroids. Only the first `d` weights are used, so
/// on a 2D mesh the `x₃` term drops out.
pub fn sign_field(mesh: &Mesh, spec: &SignField, seed: u64) -> Result<Vec<f64>> {
    if spec.weights.len() < mesh.dim() {
        return Err(Error::InvalidArgument(format!(
            "sign field needs {} weights, got {}",
            mesh.dim(),
            spec.weights.len()
        )));
    }
    let mut rng = rng_stream(seed, 4);
    let p: Vec<f64> = (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            let s: f64 = c.iter().zip(&spec.weights).map(|(x, w)| w * sgn(*x)).sum();
            spec.offset + s + spec.noise * rng.random::<f64>()
        })
        .collect();
    crate::assembly::check_admissible(&p)?;
    Ok(p)
}

/// `9.1 + sgn x₁ + 3 sgn x₂ + 5 sgn x₃ + 0.1·U([0,1])` at element centroids.
pub fn discontinuous_field(mesh: &Mesh, seed: u64) -> Result<Vec<f64>> {
    sign_field(mesh, &SignField::default(), seed)
}

/// `5` on elements whose centroid lies within distance `0.3` of
/// `(−1/2, 0, 0)` (or `(−1/2, 0)` in 2D), else `0`.
pub fn ball_forcing(mesh: &Mesh) -> Vec<f64> {
    let mut center = vec![0.0; mesh.dim()];
    center[0] = -0.5;
    (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            let r2: f64 = c.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 <= 0.3 * 0.3 {
                5.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Coefficient field family with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    Uniform {
        lo: f64,
        hi: f64,
    },
    LognormalMatern {
        nu: f64,
        scales: Vec<f64>,
        variance: f64,
        kl_modes: Option<usize>,
    },
    Discontinuous(SignField),
}

impl FieldSpec {
    /// Prepares per-mesh state (the KL expansion) once for many draws.
    pub fn sampler(&self, mesh: &Mesh) -> Result<FieldSampler> {
        let kind = match self {
            FieldSpec::Uniform { lo, hi } => {
                uniform_field(0, *lo, *hi, 0)?;
                SamplerKind::Uniform { lo: *lo, hi: *hi }
            }
            FieldSpec::LognormalMatern {
                nu,
                scales,
                variance,
                kl_modes,
            } => SamplerKind::Lognormal(KarhunenLoeve::new(mesh, *nu, scales, *variance, *kl_modes)?),
            FieldSpec::Discontinuous(spec) => {
                if spec.weights.len() < mesh.dim() {
                    return Err(Error::InvalidArgument("too few sign weights".into()));
                }
                SamplerKind::Sign(spec.clone())
            }
        };
        Ok(FieldSampler {
            kind,
            k: mesh.num_elements(),
            mesh: mesh.clone(),
        })
    }
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Uniform { lo: f64, hi: f64 },
    Lognormal(KarhunenLoeve),
    Sign(SignField),
}

/// Draws coefficient vectors; a pure function of the seed.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    kind: SamplerKind,
    k: usize,
    mesh: Mesh,
}

impl FieldSampler {
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>> {
        match &self.kind {
            SamplerKind::Uniform { lo, hi } => uniform_field(self.k, *lo, *hi, seed),
            SamplerKind::Lognormal(kl) => Ok(kl.sample(seed)),
            SamplerKind::Sign(spec) => sign_field(&self.mesh, spec, seed),
        }
    }
}

/// Forcing term family.
#[derive(Clone, Debug, PartialEq)]
pub enum ForcingSpec {
    Ball,
    Constant(f64),
}

impl ForcingSpec {
    pub fn evaluate(&self, mesh: &Mesh) -> Vec<f64> {
        match self {
            ForcingSpec::Ball => ball_forcing(mesh),
            ForcingSpec::Constant(v) => vec![*v; mesh.num_elements()],
        }
    }

    /// `ball`, or a number for a constant forcing.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("ball") {
            return Ok(ForcingSpec::Ball);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("unknown forcing '{s}' (expected 'ball' or a number)")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("forcing value {v} is not finite")));
        }
        Ok(ForcingSpec::Constant(v))
    }
}

impl std::fmt::Display for ForcingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForcingSpec::Ball => write!(f, "ball"),
            ForcingSpec::Constant(v) => write!(f, "{v:?}"),
        }
    }
}
