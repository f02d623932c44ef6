//! Randomized (conditional) positive-definiteness tests, convexity probes,
//! potential constancy and the mean-inequality battery.
//!
//! A passing test is statistical evidence only. A failing test always comes
//! with an explicit witness: a measure (and pins) whose energy is negative.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Serialize, Serializer};

use crate::energy::{self, mixture_polynomial, mutual_energy, reduced_mixture, MixturePolynomial};
use crate::io::measure_to_csv;
use crate::reduce::map_indexed;
use crate::sphere::{random_unit, DiscreteMeasure, PointConfiguration, UnitVector};
use crate::{Error, Kernel, Result};

/// Which measures a test quantifies over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PdMode {
    /// All signed measures.
    Pd,
    /// Signed measures of total mass zero.
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    PassStatistical,
    Fail,
}

/// Certificate of failure: `I_K(delta_{z_1}, ..., delta_{z_{n-2}}, w, w) < 0`.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub pins: Vec<UnitVector>,
    #[serde(serialize_with = "inline_csv")]
    pub measure: DiscreteMeasure,
    pub energy: f64,
}

fn inline_csv<S: Serializer>(mu: &DiscreteMeasure, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&measure_to_csv(mu))
}

#[derive(Clone, Debug, Serialize)]
pub struct PdVerdict {
    pub mode: PdMode,
    pub outcome: Outcome,
    pub witness: Option<Witness>,
    pub trials_run: usize,
    pub min_eigenvalue_seen: f64,
}

impl PdVerdict {
    pub fn passed(&self) -> bool {
        self.outcome == Outcome::PassStatistical
    }
}

/// Settings for [`pd_test_2input`].
#[derive(Clone, Debug)]
pub struct PdTestOptions {
    pub conditional: bool,
    pub trials: usize,
    /// Points per sampled set, including `include`.
    pub set_size: usize,
    pub seed: u64,
    /// Eigenvalue threshold relative to the matrix max-abs entry.
    pub tol: f64,
    /// Points placed in every sampled set.
    pub include: Vec<UnitVector>,
    /// Coefficients below this magnitude are dropped from witnesses.
    pub truncation: f64,
}

impl Default for PdTestOptions {
    fn default() -> Self {
        PdTestOptions {
            conditional: false,
            trials: 20,
            set_size: 40,
            seed: 0,
            tol: 1e-9,
            include: Vec::new(),
            truncation: 1e-12,
        }
    }
}

impl PdTestOptions {
    fn mode(&self) -> PdMode {
        if self.conditional {
            PdMode::Conditional
        } else {
            PdMode::Pd
        }
    }
}

/// Kernel matrix `M_ij = G(x_i, x_j)`.
pub fn kernel_matrix(g: &Kernel, points: &[UnitVector]) -> DMatrix<f64> {
    let m = points.len();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = g.eval_raw(&[points[i].coords(), points[j].coords()]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Orthonormal basis of the sum-zero subspace of `R^m` (Helmert columns).
pub fn sum_zero_basis(m: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(m, m - 1);
    for k in 1..m {
        let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            p[(i, k - 1)] = scale;
        }
        p[(k, k - 1)] = -(k as f64) * scale;
    }
    p
}

/// Result of testing one kernel matrix.
#[derive(Clone, Debug)]
pub struct MatrixCheck {
    pub min_eigenvalue: f64,
    /// `tol * max|M_ij|`; the matrix fails when `min_eigenvalue < -threshold`.
    pub threshold: f64,
    /// Coefficients of the most negative direction, present on failure.
    pub coefficients: Option<Vec<f64>>,
}

impl MatrixCheck {
    pub fn passed(&self) -> bool {
        self.coefficients.is_none()
    }
}

/// Smallest eigenvalue of `M` (plain) or of `P^T M P` (conditional).
pub fn check_matrix(m: &DMatrix<f64>, conditional: bool, tol: f64) -> MatrixCheck {
    let threshold = tol * m.amax();
    let (eig, basis) = if conditional {
        let p = sum_zero_basis(m.nrows());
        (SymmetricEigen::new(p.transpose() * m * &p), Some(p))
    } else {
        (SymmetricEigen::new(m.clone()), None)
    };
    let (k, &min_eigenvalue) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("matrix has at least one eigenvalue");
    let coefficients = (min_eigenvalue < -threshold).then(|| {
        let v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        let c = match &basis {
            Some(p) => p * v,
            None => v,
        };
        c.iter().copied().collect()
    });
    MatrixCheck { min_eigenvalue, threshold, coefficients }
}

/// Builds a witness measure from eigenvector coefficients: scaled to max-abs
/// one, small entries dropped, and rebalanced to total mass zero when
/// `conditional`.
pub fn witness_measure(points: &[UnitVector], coeffs: &[f64], conditional: bool, truncation: f64) -> Result<DiscreteMeasure> {
    let peak = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if peak == 0.0 {
        return Err(Error::invalid("zero coefficient vector"));
    }
    let mut kept: Vec<(usize, f64)> = coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c / peak))
        .filter(|(_, c)| c.abs() >= truncation)
        .collect();
    if conditional {
        let excess: f64 = kept.iter().map(|(_, c)| c).sum();
        let largest = kept
            .iter_mut()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("peak coefficient survives truncation");
        largest.1 -= excess;
    }
    DiscreteMeasure::new(
        kept.iter().map(|(i, _)| points[*i].clone()).collect(),
        kept.iter().map(|(_, c)| *c).collect(),
    )
}

struct TrialResult {
    min_eigenvalue: f64,
    failure: Option<(Vec<UnitVector>, Vec<f64>)>,
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples point sets, builds kernel matrices and looks for negative
/// eigenvalues. Fails on the first (lowest-index) offending trial.
pub fn pd_test_2input(g: &Kernel, d: usize, opts: &PdTestOptions) -> Result<PdVerdict> {
    pd_test_pinned(g, &[], d, opts)
}

fn pd_test_pinned(g: &Kernel, pins: &[UnitVector], d: usize, opts: &PdTestOptions) -> Result<PdVerdict> {
    if g.arity() != 2 {
        return Err(Error::invalid(format!("two-input kernel required, {g} has arity {}", g.arity())));
    }
    if opts.trials < 1 || opts.set_size < 2 {
        return Err(Error::invalid("need trials >= 1 and set_size >= 2"));
    }
    if opts.include.len() > opts.set_size {
        return Err(Error::invalid("more included points than set_size"));
    }
    if d < 2 || opts.include.iter().any(|p| p.dim() != d) || g.required_dim().is_some_and(|rd| rd != d) {
        return Err(Error::invalid(format!("dimension mismatch for d = {d}")));
    }
    let results = map_indexed(opts.trials, |t| {
        let mut rng = trial_rng(opts.seed, t as u64);
        let mut points = opts.include.clone();
        while points.len() < opts.set_size {
            points.push(random_unit(&mut rng, d));
        }
        let check = check_matrix(&kernel_matrix(g, &points), opts.conditional, opts.tol);
        TrialResult {
            min_eigenvalue: check.min_eigenvalue,
            failure: check.coefficients.map(|c| (points, c)),
        }
    });
    let min_eigenvalue_seen = results.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
    let witness = match results.into_iter().find_map(|r| r.failure) {
        Some((points, coeffs)) => {
            let measure = witness_measure(&points, &coeffs, opts.conditional, opts.truncation)?;
            let energy = mutual_energy(g, &[&measure, &measure])?.value;
            Some(Witness { pins: pins.to_vec(), measure, energy })
        }
        None => None,
    };
    Ok(PdVerdict {
        mode: opts.mode(),
        outcome: if witness.is_some() { Outcome::Fail } else { Outcome::PassStatistical },
        witness,
        trials_run: opts.trials,
        min_eigenvalue_seen,
    })
}

/// The canonical pin tuple `(e_1, ..., e_m)`.
pub fn canonical_pins(d: usize, m: usize) -> Result<Vec<UnitVector>> {
    (0..m).map(|k| UnitVector::basis(d, k % d)).collect()
}

/// `n`-input test: pins `n - 2` slots and runs [`pd_test_2input`] on the
/// remaining two-input kernel, for `pin_trials` random pin tuples (plus the
/// canonical pin first when the kernel is rotation invariant).
pub fn npd_test(kernel: &Kernel, d: usize, pin_trials: usize, opts: &PdTestOptions) -> Result<PdVerdict> {
    let n = kernel.arity();
    if n < 3 {
        return Err(Error::invalid("npd_test needs arity >= 3; use pd_test_2input"));
    }
    if d < 2 {
        return Err(Error::invalid(format!("sphere dimension d = {d} < 2")));
    }
    let mut pin_sets = Vec::new();
    if kernel.is_rotation_invariant() {
        pin_sets.push(canonical_pins(d, n - 2)?);
    }
    let mut rng = trial_rng(opts.seed, u64::MAX);
    for _ in 0..pin_trials {
        pin_sets.push((0..n - 2).map(|_| random_unit(&mut rng, d)).collect());
    }
    if pin_sets.is_empty() {
        return Err(Error::invalid("pin_trials must be >= 1 for kernels without rotation invariance"));
    }
    let mut trials_run = 0;
    let mut min_eigenvalue_seen = f64::INFINITY;
    for (k, pins) in pin_sets.iter().enumerate() {
        let pinned = kernel.pin(pins.clone())?;
        let sub = PdTestOptions { seed: opts.seed.wrapping_add(k as u64 * 0x9E37_79B9), ..opts.clone() };
        let verdict = pd_test_pinned(&pinned, pins, d, &sub)?;
        trials_run += verdict.trials_run;
        min_eigenvalue_seen = min_eigenvalue_seen.min(verdict.min_eigenvalue_seen);
        if verdict.outcome == Outcome::Fail {
            return Ok(PdVerdict { trials_run, min_eigenvalue_seen, ..verdict });
        }
    }
    Ok(PdVerdict {
        mode: opts.mode(),
        outcome: Outcome::PassStatistical,
        witness: None,
        trials_run,
        min_eigenvalue_seen,
    })
}

/// Dispatches on arity: [`pd_test_2input`] for two inputs, else [`npd_test`].
pub fn pd_test(kernel: &Kernel, d: usize, pin_trials: usize, opts: &PdTestOptions) -> Result<PdVerdict> {
    if kernel.arity() == 2 {
        pd_test_2input(kernel, d, opts)
    } else {
        npd_test(kernel, d, pin_trials, opts)
    }
}

/// Splits a balanced measure `w` into probability measures with
/// `w = c (mu_plus - mu_minus)`. Returns `(c, mu_plus, mu_minus)`.
pub fn split_balanced(w: &DiscreteMeasure) -> Result<(f64, DiscreteMeasure, DiscreteMeasure)> {
    let part = |sign: f64| -> Result<(f64, DiscreteMeasure)> {
        let (atoms, weights): (Vec<UnitVector>, Vec<f64>) = w
            .iter()
            .filter(|(_, c)| sign * c > 0.0)
            .map(|(x, c)| (x.clone(), sign * c))
            .unzip();
        let mass: f64 = weights.iter().sum();
        let mu = DiscreteMeasure::new(atoms, weights.iter().map(|c| c / mass).collect())?;
        Ok((mass, mu))
    };
    let (c, plus) = part(1.0)?;
    let (_, minus) = part(-1.0)?;
    Ok((c, plus, minus))
}

/// Grid size for the second-derivative convexity scan.
pub const CONVEXITY_GRID: usize = 1000;

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    /// Mixed energies `c_k` defining `g`.
    pub g_coefficients: Vec<f64>,
    pub g_prime_0: f64,
    pub g_double_prime_0: f64,
    pub h_prime_0: f64,
    pub h_double_prime_0: f64,
    /// `g'' >= -1e-10` on the whole grid.
    pub convex_on_unit_interval: bool,
    /// Largest `g(t) - ((1-t) g(0) + t g(1))` over the grid.
    pub max_chord_gap: f64,
    /// Where the chord test fails worst, if it fails.
    pub violation_t: Option<f64>,
}

/// Exact convexity probe of `t -> I_K((1-t) mu + t nu)`.
pub fn convexity_probe(kernel: &Kernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<ConvexityReport> {
    let g = mixture_polynomial(kernel, mu, nu)?;
    let h = reduced_mixture(kernel, mu, nu)?;
    Ok(convexity_report(&g, &h))
}

fn convexity_report(g: &MixturePolynomial, h: &MixturePolynomial) -> ConvexityReport {
    let grid = |i: usize| i as f64 / (CONVEXITY_GRID - 1) as f64;
    let convex = (0..CONVEXITY_GRID).all(|i| g.derivative(2, grid(i)) >= -1e-10);
    let (g0, g1) = (g.eval(0.0), g.eval(1.0));
    let (t_worst, gap) = (0..CONVEXITY_GRID)
        .map(|i| {
            let t = grid(i);
            (t, g.eval(t) - ((1.0 - t) * g0 + t * g1))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is non-empty");
    ConvexityReport {
        g_coefficients: g.coeffs.clone(),
        g_prime_0: g.derivative(1, 0.0),
        g_double_prime_0: g.derivative(2, 0.0),
        h_prime_0: h.derivative(1, 0.0),
        h_double_prime_0: h.derivative(2, 0.0),
        convex_on_unit_interval: convex,
        max_chord_gap: gap,
        violation_t: (gap > 1e-10).then_some(t_worst),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstancyReport {
    pub max_deviation: f64,
    pub mean: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Checks that `U_K^{mu^{n-1}}` is constant (within `tol`) on the test points.
pub fn potential_constancy_check(
    kernel: &Kernel,
    mu: &DiscreteMeasure,
    test_points: &PointConfiguration,
    tol: f64,
) -> Result<ConstancyReport> {
    let measures = vec![mu; kernel.arity() - 1];
    let values = energy::potential(kernel, &measures, test_points)?;
    Ok(constancy_from_values(&values, tol))
}

fn constancy_from_values(values: &[f64], tol: f64) -> ConstancyReport {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max_deviation = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    ConstancyReport { max_deviation, mean, tol, pass: max_deviation <= tol }
}

/// Floor for sampled constancy tolerances, relative to the potential scale.
/// A measure with no sampling error (a Dirac mass, say) would otherwise get
/// a zero tolerance and fail on rounding noise alone.
pub const CONSTANCY_FLOOR: f64 = 1e-12;

/// [`potential_constancy_check`] with `tol = factor * (largest sampling
/// error of the potential values)`, reading `mu` as an i.i.d. sample. The
/// tolerance never drops below `CONSTANCY_FLOOR * max(1, max |U|)`.
pub fn potential_constancy_sampled(
    kernel: &Kernel,
    mu: &DiscreteMeasure,
    test_points: &PointConfiguration,
    factor: f64,
) -> Result<ConstancyReport> {
    let measures = vec![mu; kernel.arity() - 1];
    let sampled = energy::potential_sampled(kernel, &measures, test_points)?;
    let values: Vec<f64> = sampled.iter().map(|s| s.value).collect();
    let stderr = sampled.iter().map(|s| s.stderr).fold(0.0, f64::max);
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(constancy_from_values(&values, (factor * stderr).max(CONSTANCY_FLOOR * scale)))
}

/// Worst residual of one inequality; positive residuals are violations.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Residual {
    pub worst: Option<f64>,
    pub evaluated: usize,
    /// Trials with residual above `1e-10`.
    pub violations: usize,
}

impl Residual {
    fn record(&mut self, r: f64) {
        self.evaluated += 1;
        self.worst = Some(self.worst.map_or(r, |w| w.max(r)));
        if r > 1e-10 {
            self.violations += 1;
        }
    }

    fn merge(&mut self, other: &Residual) {
        self.evaluated += other.evaluated;
        self.violations += other.violations;
        if let Some(r) = other.worst {
            self.worst = Some(self.worst.map_or(r, |w| w.max(r)));
        }
    }

    /// True when every evaluated residual is at most `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.worst.is_none_or(|w| w <= tol)
    }
}

/// Residuals (LHS - RHS) of the mean inequalities on random probability
/// measures `mu_1..mu_n` with 1 to 4 atoms.
#[derive(Clone, Debug, Default, Serialize)]
pub struct InequalityReport {
    /// `I(mu_1..mu_n) <= (1/n) sum I(mu_j)`
    pub am: Residual,
    /// `I(mu_1..mu_n) <= prod I(mu_j)^{1/n}`, only when every `I(mu_j) >= 0`
    pub gm: Residual,
    /// `-(1/n) sum I(mu_j) <= I(mu_1..mu_n)`
    pub lower_bound: Residual,
    /// `K(z_1..z_n) <= max_z K(z..z)`
    pub diagonal: Residual,
    /// `I(mu^{n-1}, nu) <= ((n-1)/n) I(mu) + I(nu)/n`
    pub convexity_bound: Residual,
    /// `I(nu) - I(mu) >= n/(n-1) (I(mu, nu^{n-1}) - I(mu))`
    pub convexity_inequality: Residual,
}

impl InequalityReport {
    fn merge(&mut self, o: &InequalityReport) {
        self.am.merge(&o.am);
        self.gm.merge(&o.gm);
        self.lower_bound.merge(&o.lower_bound);
        self.diagonal.merge(&o.diagonal);
        self.convexity_bound.merge(&o.convexity_bound);
        self.convexity_inequality.merge(&o.convexity_inequality);
    }
}

/// Random probability measure with 1 to `max_atoms` atoms and flat
/// Dirichlet weights.
pub fn random_probability<R: Rng>(rng: &mut R, d: usize, max_atoms: usize) -> DiscreteMeasure {
    let m = rng.random_range(1..=max_atoms);
    let atoms: Vec<UnitVector> = (0..m).map(|_| random_unit(rng, d)).collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(atoms, raw.iter().map(|w| w / total).collect()).expect("non-empty atom list")
}

/// Diagonal samples used to estimate `max_z K(z, ..., z)` for kernels that
/// are not rotation invariant.
const DIAGONAL_SAMPLES: usize = 256;

pub fn inequality_suite(kernel: &Kernel, d: usize, trials: usize, seed: u64) -> Result<InequalityReport> {
    if trials < 1 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let n = kernel.arity();
    if n > energy::MAX_EXACT_ARITY {
        return Err(Error::invalid(format!("arity {n} exceeds {}", energy::MAX_EXACT_ARITY)));
    }
    let diag = |z: &UnitVector| kernel.eval_raw(&vec![z.coords(); n]);
    let mut rng = trial_rng(seed, u64::MAX);
    let probe_count = if kernel.is_rotation_invariant() { 1 } else { DIAGONAL_SAMPLES };
    let diag_max = (0..probe_count)
        .map(|_| diag(&random_unit(&mut rng, d)))
        .fold(f64::NEG_INFINITY, f64::max);

    let parts = map_indexed(trials, |t| -> Result<InequalityReport> {
        let mut rng = trial_rng(seed, t as u64);
        let measures: Vec<DiscreteMeasure> = (0..n).map(|_| random_probability(&mut rng, d, 4)).collect();
        let refs: Vec<&DiscreteMeasure> = measures.iter().collect();
        let selfs: Vec<f64> = measures
            .iter()
            .map(|m| energy::self_energy(kernel, m))
            .collect::<Result<_>>()?;
        let mixed = mutual_energy(kernel, &refs)?.value;
        let mean = selfs.iter().sum::<f64>() / n as f64;
        let mut r = InequalityReport::default();
        r.am.record(mixed - mean);
        if selfs.iter().all(|&s| s >= 0.0) {
            let gm = selfs.iter().map(|s| s.powf(1.0 / n as f64)).product::<f64>();
            r.gm.record(mixed - gm);
        }
        r.lower_bound.record(-mean - mixed);

        let zs: Vec<UnitVector> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
        let pts: Vec<&[f64]> = zs.iter().map(|z| z.coords()).collect();
        let local_max = zs.iter().map(&diag).fold(diag_max, f64::max);
        r.diagonal.record(kernel.eval_raw(&pts) - local_max);

        let (mu, nu) = (&measures[0], &measures[1]);
        let (i_mu, i_nu) = (selfs[0], selfs[1]);
        let nf = n as f64;
        let mut list = vec![mu; n - 1];
        list.push(nu);
        let mu_nu = mutual_energy(kernel, &list)?.value;
        r.convexity_bound.record(mu_nu - ((nf - 1.0) / nf * i_mu + i_nu / nf));
        let mut list = vec![nu; n - 1];
        list.push(mu);
        let nu_mu = mutual_energy(kernel, &list)?.value;
        r.convexity_inequality
            .record(nf / (nf - 1.0) * (nu_mu - i_mu) - (i_nu - i_mu));
        Ok(r)
    });
    let mut report = InequalityReport::default();
    for part in parts {
        report.merge(&part?);
    }
    Ok(report)
}
