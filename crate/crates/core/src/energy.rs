//! Energies of configurations and measures, potentials, Monte Carlo estimates
//! under the uniform measure, and mixture polynomials.
//!
//! Exact sums run over every ordered tuple of atoms. Three-input catalog
//! kernels that are polynomials in the Gram variables take a moment-tensor
//! shortcut: for a monomial `u^a v^b t^c` the double sum over two atom lists
//! factors into an inner product of two `d^a`-dimensional moment tensors, so a
//! pair potential costs `O(M d^a)` instead of `O(M^2)`. The plain tuple sum
//! stays available as [`mutual_energy_direct`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::kernels::{Catalog, Kernel, Series};
use crate::reduce::{map_indexed, pairwise_sum, sum_indexed, CHUNK};
use crate::sphere::{dot, DiscreteMeasure, PointConfiguration};
use crate::{Error, Result};

/// Largest arity accepted by exact sums (cost grows like `M^n`).
pub const MAX_EXACT_ARITY: usize = 4;

/// Minimum number of tuples for [`mc_energy_uniform`].
pub const MIN_MC_TUPLES: u64 = 100;

/// Largest moment tensor (`d^a` entries) the polynomial shortcut will build.
const MAX_TENSOR: usize = 512;

/// An energy value. `stderr` is zero exactly when the value is an exact sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples_used: u64,
}

impl EnergyEstimate {
    fn exact(value: f64, samples_used: u64) -> Self {
        EnergyEstimate { value, stderr: 0.0, samples_used }
    }
}

/// An exact value on an atomic surrogate together with the sampling error it
/// would carry as an estimate of the same quantity for the measure the atoms
/// were drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledValue {
    pub value: f64,
    pub stderr: f64,
}

/// Flat atom storage: `coords` is row-major `len x dim`.
struct Atoms {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl Atoms {
    fn from_measure(mu: &DiscreteMeasure) -> Atoms {
        Atoms {
            dim: mu.dim(),
            coords: mu.atoms().iter().flat_map(|a| a.coords().iter().copied()).collect(),
            weights: mu.weights().to_vec(),
        }
    }

    fn from_config(config: &PointConfiguration) -> Atoms {
        Atoms {
            dim: config.dim(),
            coords: config.points().iter().flat_map(|a| a.coords().iter().copied()).collect(),
            weights: vec![1.0; config.len()],
        }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn dots(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| dot(self.point(i), x)).collect()
    }
}

/// `coef * u^a * v^b * t^c`.
#[derive(Clone, Copy, Debug)]
struct Monomial {
    coef: f64,
    a: u32,
    b: u32,
    c: u32,
}

/// Monomial expansion of a scaled three-input catalog kernel, if it is a
/// polynomial.
fn monomials(kernel: &Kernel) -> Option<Vec<Monomial>> {
    let (cat, scale) = kernel.as_catalog()?;
    let m = |coef: f64, a, b, c| Monomial { coef, a, b, c };
    let mut out = match cat {
        Catalog::Vol2 | Catalog::NegVol2 => vec![
            m(1.0, 0, 0, 0),
            m(-1.0, 2, 0, 0),
            m(-1.0, 0, 2, 0),
            m(-1.0, 0, 0, 2),
            m(2.0, 1, 1, 1),
        ],
        Catalog::Area2 | Catalog::NegArea2 => vec![
            m(0.75, 0, 0, 0),
            m(-0.5, 1, 0, 0),
            m(-0.5, 0, 1, 0),
            m(-0.5, 0, 0, 1),
            m(0.5, 1, 1, 0),
            m(0.5, 0, 1, 1),
            m(0.5, 1, 0, 1),
            m(-0.25, 2, 0, 0),
            m(-0.25, 0, 2, 0),
            m(-0.25, 0, 0, 2),
        ],
        Catalog::S011 => vec![m(1.0, 1, 1, 0), m(1.0, 0, 1, 1), m(1.0, 1, 0, 1)],
        Catalog::S100 => vec![
            m(1.0, 1, 0, 0),
            m(1.0, 0, 1, 0),
            m(1.0, 0, 0, 1),
            m(-1.0, 1, 1, 0),
            m(-1.0, 0, 1, 1),
            m(-1.0, 1, 0, 1),
        ],
        Catalog::QuadA { a, shift } => {
            let mut v = vec![m(1.0, 2, 0, 0), m(1.0, 0, 2, 0), m(1.0, 0, 0, 2), m(-a, 1, 1, 1)];
            if *shift {
                v.push(m(1.0 / (1.0 - a), 0, 0, 0));
            }
            v
        }
        Catalog::ProdFUvt(Series::Poly(c)) => c
            .iter()
            .enumerate()
            .filter(|(_, ck)| **ck != 0.0)
            .map(|(k, ck)| m(*ck, k as u32, k as u32, k as u32))
            .collect(),
        _ => return None,
    };
    let sign = if matches!(cat, Catalog::NegVol2 | Catalog::NegArea2) { -1.0 } else { 1.0 };
    for mono in &mut out {
        mono.coef *= sign * scale;
    }
    Some(out)
}

/// Expansion usable for atoms of dimension `d`: every tensor fits the budget.
fn tensor_plan(kernel: &Kernel, d: usize) -> Option<Vec<Monomial>> {
    let monos = monomials(kernel)?;
    monos
        .iter()
        .all(|m| d.checked_pow(m.a).is_some_and(|s| s <= MAX_TENSOR))
        .then_some(monos)
}

/// Writes `y^{(x)a}` (flattened) into `out`, which must have length `d^a`.
fn tensor_power(y: &[f64], a: u32, out: &mut [f64]) {
    let d = y.len();
    out[0] = 1.0;
    let mut len = 1;
    for _ in 0..a {
        for i in (0..len).rev() {
            let base = out[i];
            for (k, yk) in y.iter().enumerate().rev() {
                out[i * d + k] = base * yk;
            }
        }
        len *= d;
    }
}

/// `sum_i w_i s_i^c y_i^{(x)a}`, accumulated into `out`.
fn moment(atoms: &Atoms, s: &[f64], a: u32, c: u32, out: &mut [f64], scratch: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..atoms.len() {
        let coef = atoms.weights[i] * s[i].powi(c as i32);
        if coef == 0.0 {
            continue;
        }
        match a {
            0 => out[0] += coef,
            1 => {
                for (o, y) in out.iter_mut().zip(atoms.point(i)) {
                    *o += coef * y;
                }
            }
            _ => {
                tensor_power(atoms.point(i), a, scratch);
                for (o, y) in out.iter_mut().zip(scratch.iter()) {
                    *o += coef * y;
                }
            }
        }
    }
}

/// `sum_{i,j} w_i w'_j K(y_i, z_j, x)` through moment tensors.
fn pair_potential_poly(monos: &[Monomial], first: &Atoms, second: &Atoms, x: &[f64]) -> f64 {
    let d = first.dim;
    let s1 = first.dots(x);
    let s2 = second.dots(x);
    let mut terms = Vec::with_capacity(monos.len());
    for mono in monos {
        // Gram variables for slots (y, z, x): u = <y,z>, v = <z,x>, t = <x,y>.
        let size = d.pow(mono.a);
        let mut scratch = vec![0.0; size];
        let mut lhs = vec![0.0; size];
        let mut rhs = vec![0.0; size];
        moment(first, &s1, mono.a, mono.c, &mut lhs, &mut scratch);
        moment(second, &s2, mono.a, mono.b, &mut rhs, &mut scratch);
        terms.push(mono.coef * dot(&lhs, &rhs));
    }
    pairwise_sum(&terms)
}

/// Row projections `r_i = sum_j w'_j K(y_i, z_j, x)` for the atoms of `first`.
fn pair_projections_poly(monos: &[Monomial], first: &Atoms, second: &Atoms, x: &[f64]) -> Vec<f64> {
    let d = first.dim;
    let s1 = first.dots(x);
    let s2 = second.dots(x);
    let mut r = vec![0.0; first.len()];
    for mono in monos {
        let size = d.pow(mono.a);
        let mut scratch = vec![0.0; size];
        let mut rhs = vec![0.0; size];
        moment(second, &s2, mono.a, mono.b, &mut rhs, &mut scratch);
        for (i, ri) in r.iter_mut().enumerate() {
            let inner = match mono.a {
                0 => rhs[0],
                1 => dot(first.point(i), &rhs),
                _ => {
                    tensor_power(first.point(i), mono.a, &mut scratch);
                    dot(&scratch, &rhs)
                }
            };
            *ri += mono.coef * s1[i].powi(mono.c as i32) * inner;
        }
    }
    r
}

fn check_exact_arity(kernel: &Kernel) -> Result<()> {
    if kernel.arity() > MAX_EXACT_ARITY {
        return Err(Error::invalid(format!(
            "exact sums support arity <= {MAX_EXACT_ARITY}, kernel has arity {}",
            kernel.arity()
        )));
    }
    Ok(())
}

fn check_dims(kernel: &Kernel, dims: impl IntoIterator<Item = usize>) -> Result<usize> {
    let mut dims = dims.into_iter();
    let d = dims.next().ok_or_else(|| Error::invalid("no measures given"))?;
    if dims.any(|e| e != d) {
        return Err(Error::invalid("measures of mixed dimension"));
    }
    if let Some(rd) = kernel.required_dim() {
        if rd != d {
            return Err(Error::invalid(format!(
                "kernel is bound to dimension {rd}, data has dimension {d}"
            )));
        }
    }
    Ok(d)
}

/// Weighted sum over all atom tuples, choosing the fastest exact route.
fn tuple_sum(kernel: &Kernel, sets: &[&Atoms]) -> f64 {
    if sets.len() == 3 {
        if let Some(monos) = tensor_plan(kernel, sets[0].dim) {
            let (a, b, c) = (sets[0], sets[1], sets[2]);
            return sum_indexed(c.len(), |k| {
                c.weights[k] * pair_potential_poly(&monos, a, b, c.point(k))
            });
        }
    }
    direct_sum(kernel, sets)
}

/// Plain nested loop, parallel over the first index.
fn direct_sum(kernel: &Kernel, sets: &[&Atoms]) -> f64 {
    fn nest<'a>(kernel: &Kernel, sets: &[&'a Atoms], level: usize, buf: &mut Vec<&'a [f64]>, weight: f64) -> f64 {
        if level == sets.len() {
            return weight * kernel.eval_raw(buf);
        }
        let set = sets[level];
        let mut acc = 0.0;
        for i in 0..set.len() {
            let w = set.weights[i];
            if w == 0.0 {
                continue;
            }
            buf[level] = set.point(i);
            acc += nest(kernel, sets, level + 1, buf, weight * w);
        }
        acc
    }
    let first = sets[0];
    sum_indexed(first.len(), |i| {
        let mut buf: Vec<&[f64]> = vec![&[]; sets.len()];
        buf[0] = first.point(i);
        nest(kernel, sets, 1, &mut buf, first.weights[i])
    })
}

/// Discrete energy `E_K(w_N) = N^{-n} sum K(x_{i_1}, ..., x_{i_n})` over all
/// ordered tuples with repetition.
pub fn discrete_energy(kernel: &Kernel, config: &PointConfiguration) -> Result<EnergyEstimate> {
    check_exact_arity(kernel)?;
    check_dims(kernel, [config.dim()])?;
    let atoms = Atoms::from_config(config);
    let n = kernel.arity();
    let sets = vec![&atoms; n];
    let total = tuple_sum(kernel, &sets);
    let count = (config.len() as f64).powi(n as i32);
    Ok(EnergyEstimate::exact(total / count, (config.len() as u64).pow(n as u32)))
}

fn mutual_atoms(kernel: &Kernel, measures: &[&DiscreteMeasure]) -> Result<Vec<Atoms>> {
    check_exact_arity(kernel)?;
    if measures.len() != kernel.arity() {
        return Err(Error::invalid(format!(
            "kernel {kernel} takes {} measures, got {}",
            kernel.arity(),
            measures.len()
        )));
    }
    check_dims(kernel, measures.iter().map(|m| m.dim()))?;
    Ok(measures.iter().map(|m| Atoms::from_measure(m)).collect())
}

fn tuple_count(measures: &[&DiscreteMeasure]) -> u64 {
    measures.iter().map(|m| m.len() as u64).product()
}

/// Mutual energy `I_K(mu_1, ..., mu_n)`: the weighted sum of `K` over all atom
/// tuples.
pub fn mutual_energy(kernel: &Kernel, measures: &[&DiscreteMeasure]) -> Result<EnergyEstimate> {
    let atoms = mutual_atoms(kernel, measures)?;
    let refs: Vec<&Atoms> = atoms.iter().collect();
    Ok(EnergyEstimate::exact(tuple_sum(kernel, &refs), tuple_count(measures)))
}

/// [`mutual_energy`] by the plain nested loop only.
pub fn mutual_energy_direct(kernel: &Kernel, measures: &[&DiscreteMeasure]) -> Result<EnergyEstimate> {
    let atoms = mutual_atoms(kernel, measures)?;
    let refs: Vec<&Atoms> = atoms.iter().collect();
    Ok(EnergyEstimate::exact(direct_sum(kernel, &refs), tuple_count(measures)))
}

/// `I_K(mu)`, the diagonal mutual energy.
pub fn self_energy(kernel: &Kernel, mu: &DiscreteMeasure) -> Result<f64> {
    let measures = vec![mu; kernel.arity()];
    Ok(mutual_energy(kernel, &measures)?.value)
}

fn query_tuples(kernel: &Kernel, measures: &[&DiscreteMeasure], at: &PointConfiguration) -> Result<usize> {
    let j = measures.len();
    let n = kernel.arity();
    check_exact_arity(kernel)?;
    if j < 1 || j >= n {
        return Err(Error::invalid(format!(
            "potential order {j} out of range 1..={} for arity {n}",
            n - 1
        )));
    }
    check_dims(kernel, measures.iter().map(|m| m.dim()).chain([at.dim()]))?;
    let free = n - j;
    if at.len() % free != 0 {
        return Err(Error::invalid(format!(
            "{} query points do not split into tuples of {free}",
            at.len()
        )));
    }
    Ok(free)
}

/// The potential `U_K^{mu_1..mu_j}` at query tuples.
///
/// The remaining `n - j` slots are filled from consecutive points of `at`,
/// so for `j = n - 1` there is one value per query point.
pub fn potential(kernel: &Kernel, measures: &[&DiscreteMeasure], at: &PointConfiguration) -> Result<Vec<f64>> {
    let free = query_tuples(kernel, measures, at)?;
    let queries: Vec<&[crate::UnitVector]> = at.points().chunks(free).collect();
    if measures.len() == 2 && kernel.arity() == 3 {
        if let Some(monos) = tensor_plan(kernel, at.dim()) {
            let (a, b) = (Atoms::from_measure(measures[0]), Atoms::from_measure(measures[1]));
            return Ok(map_indexed(queries.len(), |q| {
                pair_potential_poly(&monos, &a, &b, queries[q][0].coords())
            }));
        }
    }
    let pot = kernel.potential(measures.iter().map(|m| (*m).clone()).collect())?;
    Ok(map_indexed(queries.len(), |q| {
        let pts: Vec<&[f64]> = queries[q].iter().map(|p| p.coords()).collect();
        pot.eval_raw(&pts)
    }))
}

/// [`potential`] together with the sampling error of each value when the
/// measures are read as i.i.d. samples (meaningful for probability measures).
///
/// The error comes from the first-order (Hoeffding) projections: for each
/// slot, `r_i` is the potential with that slot pinned at atom `i`. Slots that
/// share the same measure are correlated and their projections add.
pub fn potential_sampled(
    kernel: &Kernel,
    measures: &[&DiscreteMeasure],
    at: &PointConfiguration,
) -> Result<Vec<SampledValue>> {
    let free = query_tuples(kernel, measures, at)?;
    let values = potential(kernel, measures, at)?;
    let j = measures.len();
    let queries: Vec<&[crate::UnitVector]> = at.points().chunks(free).collect();

    // Slot groups sharing a measure.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for s in 0..j {
        match groups.iter_mut().find(|g| measures[g[0]] == measures[s]) {
            Some(g) => g.push(s),
            None => groups.push(vec![s]),
        }
    }
    let atoms: Vec<Atoms> = measures.iter().map(|m| Atoms::from_measure(m)).collect();
    let plan = (j == 2 && kernel.arity() == 3)
        .then(|| tensor_plan(kernel, at.dim()))
        .flatten();
    // Kernels with one slot removed, for the generic route.
    let reduced: Vec<Option<Kernel>> = (0..j)
        .map(|s| {
            let others: Vec<DiscreteMeasure> = (0..j).filter(|&o| o != s).map(|o| measures[o].clone()).collect();
            if others.is_empty() {
                Ok(None)
            } else {
                kernel.potential(others).map(Some)
            }
        })
        .collect::<Result<_>>()?;

    let errors = map_indexed(queries.len(), |q| {
        let query: Vec<&[f64]> = queries[q].iter().map(|p| p.coords()).collect();
        let projection = |s: usize| -> Vec<f64> {
            if let Some(monos) = &plan {
                return pair_projections_poly(monos, &atoms[s], &atoms[1 - s], query[0]);
            }
            let base = reduced[s].as_ref().unwrap_or(kernel);
            (0..atoms[s].len())
                .map(|i| {
                    let mut pts = Vec::with_capacity(base.arity());
                    pts.push(atoms[s].point(i));
                    pts.extend_from_slice(&query);
                    base.eval_raw(&pts)
                })
                .collect()
        };
        let mut var = 0.0;
        for g in &groups {
            let mut r = projection(g[0]);
            for &s in &g[1..] {
                for (ri, extra) in r.iter_mut().zip(projection(s)) {
                    *ri += extra;
                }
            }
            var += weighted_variance(&atoms[g[0]].weights, &r);
        }
        var.sqrt()
    });
    Ok(values
        .into_iter()
        .zip(errors)
        .map(|(value, stderr)| SampledValue { value, stderr })
        .collect())
}

/// Variance of the weighted mean `sum w_i r_i` under i.i.d. resampling:
/// `var_w(r) * sum w_i^2 / (sum w_i)^2`.
fn weighted_variance(w: &[f64], r: &[f64]) -> f64 {
    let total: f64 = w.iter().map(|x| x.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mean: f64 = w.iter().zip(r).map(|(wi, ri)| wi.abs() * ri).sum::<f64>() / total;
    let var: f64 = w.iter().zip(r).map(|(wi, ri)| wi.abs() * (ri - mean).powi(2)).sum::<f64>() / total;
    let m_eff_inv: f64 = w.iter().map(|x| x * x).sum::<f64>() / (total * total);
    var * m_eff_inv
}

#[derive(Clone, Copy)]
struct RunningStats {
    count: f64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: RunningStats) -> RunningStats {
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        RunningStats {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }
}

fn fill_unit<R: Rng>(rng: &mut R, out: &mut [f64]) {
    loop {
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let norm = dot(out, out).sqrt();
        if norm > 1e-12 {
            out.iter_mut().for_each(|x| *x /= norm);
            return;
        }
    }
}

/// Monte Carlo estimate of `I_K(sigma)` on `S^{d-1}` from `tuples`
/// independent tuples of i.i.d. uniform points.
///
/// Chunk `c` draws from ChaCha8 stream `c` of `seed`, so the result does not
/// depend on the number of threads.
pub fn mc_energy_uniform(kernel: &Kernel, d: usize, tuples: u64, seed: u64) -> Result<EnergyEstimate> {
    if tuples < MIN_MC_TUPLES {
        return Err(Error::invalid(format!("need at least {MIN_MC_TUPLES} tuples, got {tuples}")));
    }
    if d < 2 {
        return Err(Error::invalid(format!("sphere dimension d = {d} < 2")));
    }
    check_dims(kernel, [d])?;
    let n = kernel.arity();
    let chunks = tuples.div_ceil(CHUNK as u64) as usize;
    let parts = map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let len = (tuples - (c * CHUNK) as u64).min(CHUNK as u64);
        let mut buf = vec![0.0; n * d];
        let mut stats = RunningStats { count: 0.0, mean: 0.0, m2: 0.0 };
        for _ in 0..len {
            for slot in buf.chunks_mut(d) {
                fill_unit(&mut rng, slot);
            }
            let pts: Vec<&[f64]> = buf.chunks(d).collect();
            stats.push(kernel.eval_raw(&pts));
        }
        stats
    });
    let stats = parts
        .into_iter()
        .fold(RunningStats { count: 0.0, mean: 0.0, m2: 0.0 }, RunningStats::merge);
    let sd = (stats.m2 / (stats.count - 1.0)).sqrt();
    Ok(EnergyEstimate {
        value: stats.mean,
        stderr: sd / stats.count.sqrt(),
        samples_used: tuples,
    })
}

/// `g(t) = I_K((1-t) mu + t nu) = sum_k C(n,k) (1-t)^{n-k} t^k c_k` with
/// `c_k = I_K(mu^{n-k}, nu^k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePolynomial {
    /// Mixed energies `c_0..c_n`.
    pub coeffs: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl MixturePolynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.degree();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, ck)| binomial(n, k) * (1.0 - t).powi((n - k) as i32) * t.powi(k as i32) * ck)
            .sum()
    }

    /// Coefficients `a_m` of `g(t) = sum_m a_m t^m`.
    pub fn monomial_coeffs(&self) -> Vec<f64> {
        let n = self.degree();
        let mut a = vec![0.0; n + 1];
        // (1-t)^{n-k} t^k = sum_i C(n-k, i) (-1)^i t^{k+i}
        for (k, ck) in self.coeffs.iter().enumerate() {
            let outer = binomial(n, k) * ck;
            for i in 0..=n - k {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                a[k + i] += outer * sign * binomial(n - k, i);
            }
        }
        a
    }

    /// `order`-th derivative at `t`.
    pub fn derivative(&self, order: usize, t: f64) -> f64 {
        let a = self.monomial_coeffs();
        let falling = |m: usize| (0..order).fold(1.0, |acc, i| acc * (m - i) as f64);
        a.iter()
            .enumerate()
            .skip(order)
            .rev()
            .fold(0.0, |acc, (m, am)| acc * t + falling(m) * am)
    }
}

fn check_probability(mu: &DiscreteMeasure, name: &str) -> Result<()> {
    if !mu.is_probability() {
        return Err(Error::invalid(format!(
            "{name} must be a probability measure (total mass {})",
            mu.total_mass()
        )));
    }
    Ok(())
}

/// Exact mixed energies `c_k = I_K(mu^{n-k}, nu^k)`.
pub fn mixture_polynomial(kernel: &Kernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<MixturePolynomial> {
    check_probability(mu, "mu")?;
    check_probability(nu, "nu")?;
    let n = kernel.arity();
    let coeffs = (0..=n)
        .map(|k| {
            let mut list = vec![mu; n - k];
            list.extend(std::iter::repeat_n(nu, k));
            mutual_energy(kernel, &list).map(|e| e.value)
        })
        .collect::<Result<_>>()?;
    Ok(MixturePolynomial { coeffs })
}

/// `h(t) = I_F((1-t) mu + t nu)` for the two-input kernel
/// `F = U_K^{mu^{n-2}}`, returned as its mixed energies `[c_0, c_1, c_2]`.
///
/// Computed through the explicit potential kernel, independently of
/// [`mixture_polynomial`].
pub fn reduced_mixture(kernel: &Kernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<MixturePolynomial> {
    check_probability(mu, "mu")?;
    check_probability(nu, "nu")?;
    let n = kernel.arity();
    if n < 2 {
        return Err(Error::invalid("kernel arity must be at least 2"));
    }
    let c = |a: &DiscreteMeasure, b: &DiscreteMeasure| {
        let mut list = vec![mu; n - 2];
        list.extend([a, b]);
        mutual_energy(kernel, &list).map(|e| e.value)
    };
    Ok(MixturePolynomial { coeffs: vec![c(mu, mu)?, c(mu, nu)?, c(nu, nu)?] })
}

/// [`reduced_mixture`] through the explicit potential kernel
/// `U_K^{mu^{n-2}}` and a plain double loop. Quadratic in the atom counts
/// times the cost of one potential evaluation; meant for cross-checks.
pub fn reduced_mixture_via_potential(kernel: &Kernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<MixturePolynomial> {
    check_probability(mu, "mu")?;
    check_probability(nu, "nu")?;
    let n = kernel.arity();
    if n < 2 {
        return Err(Error::invalid("kernel arity must be at least 2"));
    }
    let f = if n == 2 {
        kernel.clone()
    } else {
        kernel.potential(vec![mu.clone(); n - 2])?
    };
    let c = |a: &DiscreteMeasure, b: &DiscreteMeasure| mutual_energy_direct(&f, &[a, b]).map(|e| e.value);
    Ok(MixturePolynomial { coeffs: vec![c(mu, mu)?, c(mu, nu)?, c(nu, nu)?] })
}
