//! Particle optimization of discrete energies on the sphere, and directional
//! local-minimum probes in measure space.
//!
//! Each step moves every particle along its tangent gradient, scaled by
//! `N/n` so the step size does not depend on the number of particles, and
//! retracts back to the sphere. Steps are chosen by Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::energy::{discrete_energy, mixture_polynomial, mutual_energy, self_energy};
use crate::kernels::Kernel;
use crate::reduce::map_indexed;
use crate::sphere::{dot, project_tangent_raw, retract, sample_sphere, DiscreteMeasure, PointConfiguration};
use crate::{Error, Result};

/// Armijo sufficient-increase constant.
const ARMIJO_C: f64 = 1e-4;
/// Step shrink factor per backtrack.
const BACKTRACK: f64 = 0.5;
/// Steps shorter than this count as a stalled line search.
const MIN_STEP: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub maximize: bool,
    pub grad_mode: GradMode,
    pub fd_epsilon: f64,
    /// Convergence threshold on the largest scaled particle force.
    pub stop_tol: f64,
    /// Independent random starts (seeds `seed, seed+1, ...`).
    pub multistart: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: 500,
            step_size: 0.5,
            seed: 0,
            maximize: false,
            grad_mode: GradMode::Analytic,
            fd_epsilon: 1e-6,
            stop_tol: 1e-6,
            multistart: 4,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if self.grad_mode == GradMode::FiniteDifference && !(1e-8..=1e-4).contains(&self.fd_epsilon) {
            return Err(Error::invalid("fd_epsilon must lie in [1e-8, 1e-4]"));
        }
        if self.multistart < 1 {
            return Err(Error::invalid("multistart must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationTrace {
    /// Energy before the first step and after every accepted step.
    pub energies: Vec<f64>,
    pub final_config: PointConfiguration,
    pub converged: bool,
    /// Largest scaled particle force `(N/n) |grad_i E|` at the final iterate.
    pub final_force: f64,
    pub iterations_run: usize,
    /// Seed of the random start that produced this trace.
    pub seed: u64,
    /// Set when the analytic gradient was undefined and central differences
    /// were used instead.
    pub fd_fallback: bool,
}

impl OptimizationTrace {
    pub fn final_energy(&self) -> f64 {
        *self.energies.last().expect("trace holds the initial energy")
    }
}

/// Summary of one random start.
#[derive(Clone, Debug, Serialize)]
pub struct StartSummary {
    pub seed: u64,
    pub final_energy: f64,
    pub converged: bool,
    pub iterations_run: usize,
}

/// Best trace over all starts, plus per-start summaries in seed order.
#[derive(Clone, Debug, Serialize)]
pub struct MultistartResult {
    pub best: OptimizationTrace,
    pub starts: Vec<StartSummary>,
}

fn flat(config: &PointConfiguration) -> Vec<Vec<f64>> {
    config.points().iter().map(|p| p.coords().to_vec()).collect()
}

/// Euclidean gradient of `E_K` for every particle (not yet projected), or
/// `None` where the kernel is not differentiable.
fn analytic_gradients(kernel: &Kernel, pts: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = kernel.arity();
    let big_n = pts.len();
    let d = pts[0].len();
    let factor = n as f64 / (big_n as f64).powi(n as i32);
    if let Some((cat, scale)) = kernel.as_catalog() {
        let gram: Vec<f64> = (0..big_n * big_n).map(|k| dot(&pts[k / big_n], &pts[k % big_n])).collect();
        let g = |i: usize, j: usize| gram[i * big_n + j];
        let rows = map_indexed(big_n, |i| -> Option<Vec<f64>> {
            let mut out = vec![0.0; d];
            if n == 2 {
                for j in 0..big_n {
                    let c = cat.df2(g(i, j))?;
                    axpy(&mut out, c, &pts[j]);
                }
            } else {
                // slots (x_i, x_j, x_k): u = G_ij, v = G_jk, t = G_ki
                let mut coef = vec![0.0; big_n];
                for j in 0..big_n {
                    for k in 0..big_n {
                        let (fu, _, ft) = cat.df3(g(i, j), g(j, k), g(k, i));
                        coef[j] += fu;
                        coef[k] += ft;
                    }
                }
                for (j, c) in coef.iter().enumerate() {
                    axpy(&mut out, *c, &pts[j]);
                }
            }
            out.iter_mut().for_each(|x| *x *= factor * scale);
            Some(out)
        });
        return rows.into_iter().collect();
    }
    let rows = map_indexed(big_n, |i| -> Option<Vec<f64>> {
        let mut out = vec![0.0; d];
        let mut idx = vec![0usize; n - 1];
        loop {
            let mut p: Vec<&[f64]> = Vec::with_capacity(n);
            p.push(&pts[i]);
            p.extend(idx.iter().map(|&j| pts[j].as_slice()));
            axpy(&mut out, factor, &kernel.grad_first_raw(&p)?);
            if !advance(&mut idx, big_n) {
                break;
            }
        }
        Some(out)
    });
    rows.into_iter().collect()
}

fn advance(idx: &mut [usize], base: usize) -> bool {
    for slot in idx.iter_mut() {
        *slot += 1;
        if *slot < base {
            return true;
        }
        *slot = 0;
    }
    false
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

/// Energy of raw (not necessarily unit) coordinates, for central differences.
fn raw_energy(kernel: &Kernel, pts: &[Vec<f64>]) -> f64 {
    let n = kernel.arity();
    let big_n = pts.len();
    let mut idx = vec![0usize; n];
    let mut acc = 0.0;
    loop {
        let p: Vec<&[f64]> = idx.iter().map(|&j| pts[j].as_slice()).collect();
        acc += kernel.eval_raw(&p);
        if !advance(&mut idx, big_n) {
            break;
        }
    }
    acc / (big_n as f64).powi(n as i32)
}

fn fd_gradient(kernel: &Kernel, pts: &[Vec<f64>], i: usize, eps: f64) -> Vec<f64> {
    let d = pts[i].len();
    let mut work = pts.to_vec();
    (0..d)
        .map(|k| {
            work[i][k] = pts[i][k] + eps;
            let plus = raw_energy(kernel, &work);
            work[i][k] = pts[i][k] - eps;
            let minus = raw_energy(kernel, &work);
            work[i][k] = pts[i][k];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

fn check_kernel(kernel: &Kernel, d: usize) -> Result<()> {
    if kernel.arity() > crate::energy::MAX_EXACT_ARITY {
        return Err(Error::invalid(format!("arity {} exceeds {}", kernel.arity(), crate::energy::MAX_EXACT_ARITY)));
    }
    if kernel.required_dim().is_some_and(|rd| rd != d) {
        return Err(Error::invalid("kernel bound to another dimension"));
    }
    Ok(())
}

/// Tangent gradient of `E_K` with respect to particle `i`.
pub fn energy_gradient(
    kernel: &Kernel,
    config: &PointConfiguration,
    i: usize,
    mode: GradMode,
    fd_epsilon: f64,
) -> Result<Vec<f64>> {
    check_kernel(kernel, config.dim())?;
    if i >= config.len() {
        return Err(Error::invalid(format!("particle index {i} out of range 0..{}", config.len())));
    }
    let pts = flat(config);
    let g = match mode {
        GradMode::Analytic => match analytic_gradients(kernel, &pts) {
            Some(all) => all[i].clone(),
            None => fd_gradient(kernel, &pts, i, fd_epsilon),
        },
        GradMode::FiniteDifference => fd_gradient(kernel, &pts, i, fd_epsilon),
    };
    Ok(project_tangent_raw(&pts[i], &g))
}

fn all_tangent_gradients(kernel: &Kernel, pts: &[Vec<f64>], cfg: &OptimizerConfig, fallback: &mut bool) -> Vec<Vec<f64>> {
    let raw = match cfg.grad_mode {
        GradMode::Analytic => analytic_gradients(kernel, pts),
        GradMode::FiniteDifference => None,
    };
    let raw = raw.unwrap_or_else(|| {
        if cfg.grad_mode == GradMode::Analytic {
            *fallback = true;
        }
        let eps = if cfg.grad_mode == GradMode::Analytic { 1e-6 } else { cfg.fd_epsilon };
        (0..pts.len()).map(|i| fd_gradient(kernel, pts, i, eps)).collect()
    });
    raw.iter().zip(pts).map(|(g, x)| project_tangent_raw(x, g)).collect()
}

/// One projected-gradient run from a given start.
pub fn optimize_from(kernel: &Kernel, init: &PointConfiguration, cfg: &OptimizerConfig) -> Result<OptimizationTrace> {
    cfg.validate()?;
    check_kernel(kernel, init.dim())?;
    let n = kernel.arity();
    let scale = init.len() as f64 / n as f64;
    let sign = if cfg.maximize { 1.0 } else { -1.0 };
    let mut config = init.clone();
    let mut energy = discrete_energy(kernel, &config)?.value;
    let mut energies = vec![energy];
    let mut final_force = f64::INFINITY;
    let mut fd_fallback = false;
    let mut iterations_run = 0;
    for _ in 0..cfg.steps {
        let pts = flat(&config);
        let grads = all_tangent_gradients(kernel, &pts, cfg, &mut fd_fallback);
        let force = grads
            .iter()
            .map(|g| scale * dot(g, g).sqrt())
            .fold(0.0, f64::max);
        final_force = force;
        if force <= cfg.stop_tol {
            break;
        }
        // Improvement predicted per unit step: sign * <grad E, direction>.
        let slope: f64 = grads.iter().map(|g| scale * dot(g, g)).sum();
        let mut step = cfg.step_size;
        let accepted = loop {
            let moved = config
                .points()
                .iter()
                .zip(&grads)
                .map(|(x, g)| {
                    let v: Vec<f64> = g.iter().map(|gk| sign * step * scale * gk).collect();
                    retract(x, &v)
                })
                .collect::<Result<Vec<_>>>()?;
            let candidate = PointConfiguration::new(moved)?;
            let e = discrete_energy(kernel, &candidate)?.value;
            if sign * (e - energy) >= ARMIJO_C * step * slope {
                break Some((candidate, e));
            }
            step *= BACKTRACK;
            if step < MIN_STEP {
                break None;
            }
        };
        iterations_run += 1;
        match accepted {
            Some((candidate, e)) => {
                config = candidate;
                energy = e;
                energies.push(e);
            }
            None => break,
        }
    }
    if iterations_run == cfg.steps {
        let grads = all_tangent_gradients(kernel, &flat(&config), cfg, &mut fd_fallback);
        final_force = grads.iter().map(|g| scale * dot(g, g).sqrt()).fold(0.0, f64::max);
    }
    Ok(OptimizationTrace {
        energies,
        final_config: config,
        converged: final_force <= cfg.stop_tol,
        final_force,
        iterations_run,
        seed: cfg.seed,
        fd_fallback,
    })
}

/// Multistart particle optimization from random uniform starts.
pub fn optimize_discrete(kernel: &Kernel, n_points: usize, d: usize, cfg: &OptimizerConfig) -> Result<MultistartResult> {
    cfg.validate()?;
    if n_points < 1 || d < 2 {
        return Err(Error::invalid("need N >= 1 and d >= 2"));
    }
    let runs = map_indexed(cfg.multistart, |k| -> Result<OptimizationTrace> {
        let seed = cfg.seed.wrapping_add(k as u64);
        let init = sample_sphere(d, n_points, seed)?;
        optimize_from(kernel, &init, &OptimizerConfig { seed, ..cfg.clone() })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let starts = runs
        .iter()
        .map(|t| StartSummary {
            seed: t.seed,
            final_energy: t.final_energy(),
            converged: t.converged,
            iterations_run: t.iterations_run,
        })
        .collect();
    let sign = if cfg.maximize { 1.0 } else { -1.0 };
    let best = runs
        .into_iter()
        .reduce(|a, b| if sign * b.final_energy() > sign * a.final_energy() { b } else { a })
        .expect("multistart >= 1");
    Ok(MultistartResult { best, starts })
}

/// Points on `[0, t_max]` at which mixture profiles are sampled.
pub const PROFILE_GRID: usize = 201;

#[derive(Clone, Debug, Serialize)]
pub struct DirectionReport {
    /// `min_t g(t) - g(0)` over the grid.
    pub min_profile_gap: f64,
    /// `g(t) >= g(0) - tol` on the whole grid.
    pub local_min_holds: bool,
    /// `min over alpha in (0,1) of I(mu^{n-1}, nu) - alpha I(nu) - (1-alpha) I(mu)`.
    pub alpha_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalMinReport {
    pub directions: Vec<DirectionReport>,
    pub all_hold: bool,
}

/// Checks whether `mu` is a local minimizer of `I_K` along each direction.
pub fn local_min_probe(
    kernel: &Kernel,
    mu: &DiscreteMeasure,
    directions: &[DiscreteMeasure],
    t_max: f64,
    tol: f64,
) -> Result<LocalMinReport> {
    if !(t_max > 0.0 && t_max <= 1.0) {
        return Err(Error::invalid("t_max must lie in (0, 1]"));
    }
    let n = kernel.arity();
    let i_mu = self_energy(kernel, mu)?;
    let directions = directions
        .iter()
        .map(|nu| -> Result<DirectionReport> {
            let g = mixture_polynomial(kernel, mu, nu)?;
            let g0 = g.eval(0.0);
            let min_profile_gap = (0..PROFILE_GRID)
                .map(|i| g.eval(t_max * i as f64 / (PROFILE_GRID - 1) as f64) - g0)
                .fold(f64::INFINITY, f64::min);
            let i_nu = g.coeffs[n];
            let mut list = vec![mu; n - 1];
            list.push(nu);
            let mixed = mutual_energy(kernel, &list)?.value;
            let alpha_residual = (1..100)
                .map(|k| {
                    let a = k as f64 / 100.0;
                    mixed - a * i_nu - (1.0 - a) * i_mu
                })
                .fold(f64::INFINITY, f64::min);
            Ok(DirectionReport {
                min_profile_gap,
                local_min_holds: min_profile_gap >= -tol,
                alpha_residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_hold = directions.iter().all(|r| r.local_min_holds);
    Ok(LocalMinReport { directions, all_hold })
}
