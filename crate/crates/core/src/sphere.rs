//! Points on `S^{d-1}`, point configurations and finite atomic measures.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Unit-norm checks use this slack.
pub const UNIT_TOL: f64 = 1e-12;
/// Mass checks (`is_probability`, `is_balanced`) use this slack.
pub const MASS_TOL: f64 = 1e-12;
const RETRACT_MIN_NORM: f64 = 1e-14;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A point of the unit sphere `S^{d-1}`, `d >= 2`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Scales `coords` onto the sphere.
    pub fn normalize(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::invalid(format!("dimension {} < 2", coords.len())));
        }
        let n = norm(&coords);
        if !n.is_finite() || n < RETRACT_MIN_NORM {
            return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(UnitVector(coords.into_iter().map(|c| c / n).collect()))
    }

    /// Accepts `coords` that are already unit length (within [`UNIT_TOL`])
    /// and stores them unchanged, so file round trips are exact.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::invalid(format!("dimension {} < 2", coords.len())));
        }
        let n = norm(&coords);
        if !((n - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::invalid(format!("vector has norm {n}, expected 1")));
        }
        Ok(UnitVector(coords))
    }

    /// The standard basis vector `e_{k+1}` of `R^d` (0-based `k`).
    pub fn basis(d: usize, k: usize) -> Result<Self> {
        if d < 2 || k >= d {
            return Err(Error::invalid(format!("basis vector {k} in dimension {d}")));
        }
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        Ok(UnitVector(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// The antipodal point.
    pub fn antipode(&self) -> UnitVector {
        UnitVector(self.0.iter().map(|c| -c).collect())
    }

    /// Applies an orthogonal matrix.
    pub fn rotate(&self, q: &DMatrix<f64>) -> UnitVector {
        let d = self.dim();
        let out = (0..d)
            .map(|i| (0..d).map(|j| q[(i, j)] * self.0[j]).sum())
            .collect();
        UnitVector::normalize(out).expect("rotation of a unit vector is nonzero")
    }
}

impl fmt::Debug for UnitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("UnitVector").field(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// An ordered multiset of `N >= 1` points sharing one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointConfiguration {
    dim: usize,
    points: Vec<UnitVector>,
}

impl PointConfiguration {
    pub fn new(points: Vec<UnitVector>) -> Result<Self> {
        let dim = common_dim(&points)?;
        Ok(PointConfiguration { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[UnitVector] {
        &self.points
    }

    pub fn into_points(self) -> Vec<UnitVector> {
        self.points
    }

    /// Uniform empirical probability measure `(1/N) sum delta_{x_j}`.
    pub fn empirical(&self) -> DiscreteMeasure {
        let w = 1.0 / self.len() as f64;
        DiscreteMeasure {
            dim: self.dim,
            atoms: self.points.clone(),
            weights: vec![w; self.len()],
        }
    }

    pub fn rotate(&self, q: &DMatrix<f64>) -> PointConfiguration {
        PointConfiguration {
            dim: self.dim,
            points: self.points.iter().map(|p| p.rotate(q)).collect(),
        }
    }
}

fn common_dim(points: &[UnitVector]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("at least one point is required"))?;
    let dim = first.dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(Error::invalid("points of mixed dimension"));
    }
    Ok(dim)
}

/// A finite signed atomic measure `sum_i w_i delta_{x_i}`.
///
/// Repeated atoms are kept as separate entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<UnitVector>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<UnitVector>, weights: Vec<f64>) -> Result<Self> {
        let dim = common_dim(&atoms)?;
        if atoms.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("non-finite weight"));
        }
        Ok(DiscreteMeasure { dim, atoms, weights })
    }

    /// Unit point mass.
    pub fn dirac(x: UnitVector) -> Self {
        DiscreteMeasure {
            dim: x.dim(),
            atoms: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[UnitVector] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UnitVector, f64)> {
        self.atoms.iter().zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && (self.total_mass() - 1.0).abs() <= MASS_TOL
    }

    pub fn is_balanced(&self) -> bool {
        self.total_mass().abs() <= MASS_TOL
    }

    /// True if every weight equals the first one.
    pub fn has_equal_weights(&self) -> bool {
        self.weights.iter().all(|&w| w == self.weights[0])
    }

    pub fn scaled(&self, c: f64) -> DiscreteMeasure {
        DiscreteMeasure {
            dim: self.dim,
            atoms: self.atoms.clone(),
            weights: self.weights.iter().map(|w| c * w).collect(),
        }
    }

    /// Mean vector `sum_i w_i x_i`.
    pub fn barycenter(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (mk, xk) in m.iter_mut().zip(x.coords()) {
                *mk += w * xk;
            }
        }
        m
    }
}

/// `M` i.i.d. uniform points on `S^{d-1}` from normalized Gaussian vectors.
///
/// The stream is ChaCha8 seeded with `seed`; identical arguments give
/// bit-identical output.
pub fn sample_sphere(d: usize, m: usize, seed: u64) -> Result<PointConfiguration> {
    if d < 2 {
        return Err(Error::invalid(format!("sphere dimension d = {d} < 2")));
    }
    if m < 1 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..m).map(|_| random_unit(&mut rng, d)).collect();
    PointConfiguration::new(points)
}

/// One uniform point on `S^{d-1}`.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> UnitVector {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // probability zero, but the loop keeps the invariant unconditional
        if let Ok(u) = UnitVector::normalize(v) {
            return u;
        }
    }
}

/// Gram matrix `G_ij = <x_i, x_j>` of a configuration.
pub fn gram(config: &PointConfiguration) -> DMatrix<f64> {
    let n = config.len();
    let pts = config.points();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = pts[i].dot(&pts[i]);
        for j in i + 1..n {
            let v = pts[i].dot(&pts[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Orthogonal projection of `g` onto the tangent space at `x`: `g - <g,x> x`.
pub fn project_tangent(x: &UnitVector, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != x.dim() {
        return Err(Error::invalid(format!(
            "vector of length {} at a point of dimension {}",
            g.len(),
            x.dim()
        )));
    }
    Ok(project_tangent_raw(x.coords(), g))
}

pub(crate) fn project_tangent_raw(x: &[f64], g: &[f64]) -> Vec<f64> {
    let c = dot(g, x);
    g.iter().zip(x).map(|(gi, xi)| gi - c * xi).collect()
}

/// Metric-projection retraction `(x + v) / |x + v|`.
pub fn retract(x: &UnitVector, v: &[f64]) -> Result<UnitVector> {
    if v.len() != x.dim() {
        return Err(Error::invalid("retraction step has wrong dimension"));
    }
    let sum: Vec<f64> = x.coords().iter().zip(v).map(|(a, b)| a + b).collect();
    let n = norm(&sum);
    if !(n >= RETRACT_MIN_NORM) {
        return Err(Error::DegenerateRetraction { norm: n });
    }
    Ok(UnitVector(sum.into_iter().map(|c| c / n).collect()))
}

fn check_same_dim(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim != nu.dim {
        return Err(Error::invalid(format!(
            "measures live in dimensions {} and {}",
            mu.dim, nu.dim
        )));
    }
    Ok(())
}

/// `(1 - t) mu + t nu`, atoms concatenated.
pub fn mix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, t: f64) -> Result<DiscreteMeasure> {
    check_same_dim(mu, nu)?;
    if mu.is_probability() && nu.is_probability() && !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("mixing parameter t = {t} outside [0, 1]")));
    }
    combine(mu, nu, 1.0 - t, t)
}

/// `a mu + b nu`, atoms concatenated.
pub fn combine(mu: &DiscreteMeasure, nu: &DiscreteMeasure, a: f64, b: f64) -> Result<DiscreteMeasure> {
    check_same_dim(mu, nu)?;
    let mut atoms = mu.atoms.clone();
    atoms.extend(nu.atoms.iter().cloned());
    let weights = mu
        .weights
        .iter()
        .map(|w| a * w)
        .chain(nu.weights.iter().map(|w| b * w))
        .collect();
    DiscreteMeasure::new(atoms, weights)
}

/// Haar-random orthogonal `d x d` matrix (QR of a Gaussian matrix with sign fix).
pub fn random_rotation(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(d: usize, k: usize) -> UnitVector {
        UnitVector::basis(d, k).unwrap()
    }

    #[test]
    fn samples_are_unit() {
        let c = sample_sphere(3, 1000, 7).unwrap();
        for p in c.points() {
            assert!((p.dot(p).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sample_mean_is_small() {
        // CLT: each coordinate has variance 1/(dM); |mean| <= 4/sqrt(M) is a
        // ~ 6-sigma event for d = 3.
        let m = 100_000;
        for seed in [1, 2, 3, 4, 5] {
            let c = sample_sphere(3, m, seed).unwrap();
            let mean = c.empirical().barycenter();
            assert!(norm(&mean) <= 4.0 / (m as f64).sqrt(), "seed {seed}");
        }
    }

    #[test]
    fn sampling_rejects_bad_sizes() {
        assert!(matches!(sample_sphere(1, 5, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(sample_sphere(3, 0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_sphere(4, 50, 11).unwrap();
        let b = sample_sphere(4, 50, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gram_examples() {
        let c = PointConfiguration::new(vec![e(3, 0), e(3, 1), e(3, 2)]).unwrap();
        assert_eq!(gram(&c), DMatrix::identity(3, 3));
        let x = sample_sphere(3, 1, 5).unwrap().into_points().remove(0);
        let c = PointConfiguration::new(vec![x.clone(), x]).unwrap();
        let g = gram(&c);
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn gram_is_psd() {
        let c = sample_sphere(3, 20, 3).unwrap();
        let eig = gram(&c).symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10);
    }

    #[test]
    fn tangent_projection() {
        let x = e(3, 0);
        assert_eq!(project_tangent(&x, x.coords()).unwrap(), vec![0.0; 3]);
        assert_eq!(project_tangent(&x, e(3, 1).coords()).unwrap(), e(3, 1).coords());
        let x = sample_sphere(5, 1, 9).unwrap().into_points().remove(0);
        let g = [0.3, -1.2, 2.0, 0.1, 0.7];
        let p = project_tangent(&x, &g).unwrap();
        assert!(dot(&p, x.coords()).abs() <= 1e-12);
        assert!(project_tangent(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn retraction_examples() {
        let x = e(3, 0);
        assert_eq!(retract(&x, &[0.0; 3]).unwrap(), x);
        let r = retract(&x, e(3, 1).coords()).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((r.coords()[0] - h).abs() < 1e-15 && (r.coords()[1] - h).abs() < 1e-15);
        let neg: Vec<f64> = x.antipode().into();
        assert!(matches!(retract(&x, &neg), Err(Error::DegenerateRetraction { .. })));
    }

    #[test]
    fn mixing_and_combining() {
        let mu = DiscreteMeasure::dirac(e(3, 0));
        let nu = DiscreteMeasure::dirac(e(3, 1));
        assert_eq!(mix(&mu, &nu, 0.5).unwrap().weights(), &[0.5, 0.5]);
        let m0 = mix(&mu, &nu, 0.0).unwrap();
        assert_eq!(m0.weights(), &[1.0, 0.0]);
        assert!(m0.is_probability());
        let m = combine(&mu, &nu, 0.3, 2.0).unwrap();
        assert!((m.total_mass() - 2.3).abs() < 1e-15);

        let nu2 = DiscreteMeasure::dirac(e(3, 0).antipode());
        let bal = combine(&DiscreteMeasure::dirac(e(3, 1)), &nu2, 1.0, -1.0).unwrap();
        assert!(bal.is_balanced());
        let two = combine(&DiscreteMeasure::dirac(e(3, 1)), &DiscreteMeasure::dirac(e(3, 2)), 1.0, 1.0).unwrap();
        assert_eq!(two.total_mass(), 2.0);
        assert!(combine(&mu, &mu, 1.0, -1.0).unwrap().is_balanced());

        let other = DiscreteMeasure::dirac(e(4, 0));
        assert!(mix(&mu, &other, 0.5).is_err());
        assert!(mix(&mu, &nu, 1.5).is_err());
    }

    #[test]
    fn rotation_is_orthogonal() {
        let q = random_rotation(5, 3);
        let id = q.transpose() * &q;
        assert!((id - DMatrix::identity(5, 5)).abs().max() < 1e-12);
    }

    #[test]
    fn unit_vector_validation() {
        assert!(UnitVector::new(vec![1.0, 1.0]).is_err());
        assert!(UnitVector::new(vec![1.0]).is_err());
        assert!(UnitVector::normalize(vec![0.0, 0.0]).is_err());
        let v: UnitVector = serde_json::from_str("[0.6, 0.8]").unwrap();
        assert_eq!(v.dim(), 2);
    }
}
