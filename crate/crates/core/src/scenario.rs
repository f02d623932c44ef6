//! Named, reproducible numerical checks with JSON reports.
//!
//! Every assertion records what was observed, what was expected, the
//! tolerance, and where the expectation comes from:
//!
//! * [`Source::Reference`]: a published closed form or counterexample; the
//!   assertion carries a `citation` stating the result.
//! * [`Source::Elementary`]: follows directly from definitions.
//! * [`Source::Oracle`]: computed by an independent derivation (moment
//!   identities, hand enumeration).
//!
//! Reports omit wall-clock time unless asked for, so two runs with the same
//! seeds serialize to identical bytes.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::certify::{
    check_matrix, convexity_probe, inequality_suite, kernel_matrix, npd_test, pd_test_2input,
    potential_constancy_sampled, random_probability, split_balanced, PdTestOptions,
};
use crate::config::Tolerances;
use crate::energy::{mc_energy_uniform, mixture_polynomial, mutual_energy, potential_sampled, reduced_mixture_via_potential};
use crate::kernels::{Kernel, Series};
use crate::optimize::{optimize_discrete, OptimizerConfig};
use crate::sphere::{combine, random_unit, sample_sphere, DiscreteMeasure, PointConfiguration, UnitVector};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Reference,
    Elementary,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|observed - expected| <= tolerance`
    Within,
    /// `observed <= expected + tolerance`
    AtMost,
    /// `observed >= expected - tolerance`
    AtLeast,
}

#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub description: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
    pub source: Source,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citation: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: String,
    pub reference: String,
    pub seeds: Vec<u64>,
    pub pass: bool,
    pub assertions: Vec<Assertion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

/// Knobs shared by all scenarios.
#[derive(Clone, Debug)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tuples: Option<u64>,
    pub dims: Option<Vec<usize>>,
    pub tol_scale: f64,
    pub timings: bool,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides { seed: None, tuples: None, dims: None, tol_scale: 1.0, timings: false }
    }
}

impl Overrides {
    /// Parses `seed`, `tuples`, `d` (comma list), `tol_scale`, `timings`.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Overrides> {
        let mut o = Overrides::default();
        for (k, v) in map {
            let bad = |e: &dyn std::fmt::Display| Error::invalid(format!("override {k}={v}: {e}"));
            match k.as_str() {
                "seed" => o.seed = Some(v.parse().map_err(|e| bad(&e))?),
                "tuples" => o.tuples = Some(v.parse().map_err(|e| bad(&e))?),
                "d" => {
                    o.dims = Some(
                        v.split(',')
                            .map(|s| s.trim().parse::<usize>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| bad(&e))?,
                    )
                }
                "tol_scale" => o.tol_scale = v.parse().map_err(|e| bad(&e))?,
                "timings" => o.timings = v.parse().map_err(|e| bad(&e))?,
                _ => return Err(Error::invalid(format!("unknown override `{k}`"))),
            }
        }
        Ok(o)
    }
}

/// Default Monte Carlo budget per estimate.
pub const DEFAULT_TUPLES: u64 = 1_000_000;

type Runner = fn(&mut Ctx) -> Result<()>;

struct Entry {
    name: &'static str,
    reference: &'static str,
    seed: u64,
    run: Runner,
}

const REGISTRY: &[Entry] = &[
    Entry {
        name: "area2-sigma",
        reference: "the uniform measure maximizes the expected squared triangle area, with value 3(d-1)/(4d), and its potential is constant on the sphere",
        seed: 101,
        run: area2_sigma,
    },
    Entry {
        name: "bcr-shift",
        reference: "phi(x,y) = G(x,y) + G(x0,x0) - G(x,x0) - G(x0,y) is positive definite iff G is conditionally positive definite; for two inputs conditional positive definiteness is equivalent to convexity of the energy",
        seed: 202,
        run: bcr_shift,
    },
    Entry {
        name: "derivative-identities",
        reference: "with h the energy of U_K^{mu^{n-2}} along the same mixture, h'(0) = (2/n) g'(0) and h''(0) = 2/(n(n-1)) g''(0)",
        seed: 303,
        run: derivative_identities,
    },
    Entry {
        name: "frame-bound",
        reference: "the frame energy of a probability measure is at least 1/d, with equality for the uniform measure",
        seed: 404,
        run: frame_bound,
    },
    Entry {
        name: "inequality-suite",
        reference: "mutual energies of conditionally n-positive definite kernels satisfy the arithmetic-mean bound, n-positive definite ones also the geometric-mean and lower bounds, and such kernels attain their maximum on the diagonal",
        seed: 505,
        run: inequality_suite_scenario,
    },
    Entry {
        name: "maximize-area2",
        reference: "the supremum of the squared-area energy over probability measures on S^2 is 3(d-1)/(4d) = 1/2",
        seed: 606,
        run: maximize_area2,
    },
    Entry {
        name: "maximize-vol2",
        reference: "the uniform measure maximizes the expected squared parallelepiped volume, with value (d-1)(d-2)/d^2",
        seed: 707,
        run: maximize_vol2,
    },
    Entry {
        name: "minimize-s011",
        reference: "the s011 energy is nonnegative and vanishes for measures with zero barycenter",
        seed: 808,
        run: minimize_s011,
    },
    Entry {
        name: "negarea2-not-cpd",
        reference: "minus the squared triangle area is not conditionally 3-positive definite: pinning e1, the measure delta_e2 + delta_{-e1} has energy -2",
        seed: 909,
        run: negarea2_not_cpd,
    },
    Entry {
        name: "negvol2-not-cpd",
        reference: "minus the squared parallelepiped volume is not conditionally 3-positive definite: pinning e1, the measure delta_e2 + delta_e3 has energy -2",
        seed: 1010,
        run: negvol2_not_cpd,
    },
    Entry {
        name: "prodlift-pd",
        reference: "products over m-subsets of a positive definite H are n-positive definite when H >= 0 or m = n - 1",
        seed: 1111,
        run: prodlift_pd,
    },
    Entry {
        name: "quad-a-pd",
        reference: "t^2 + u^2 + v^2 - a uvt + 1/(1-a) is 3-positive definite for a < 1",
        seed: 1212,
        run: quad_a_pd,
    },
    Entry {
        name: "s011-counterexample",
        reference: "s011 pinned at e1 has energy -1 on the balanced measure delta_e2 - delta_{-e1}, so s011 is not conditionally 3-positive definite",
        seed: 1313,
        run: s011_counterexample,
    },
    Entry {
        name: "s011-potential",
        reference: "the potential of s011 against the uniform measure is <x,y>/d",
        seed: 1414,
        run: s011_potential,
    },
    Entry {
        name: "s100-nonconvex",
        reference: "the s100 energy is not convex at the uniform measure, I(t delta_e1 + (1-t) sigma) = 3 t^2 (1-t) (d-1)/d, so s100 is not conditionally 3-positive definite",
        seed: 1515,
        run: s100_nonconvex,
    },
    Entry {
        name: "sumlift-cpd",
        reference: "sums over m-subsets of a conditionally positive definite H are conditionally n-positive definite",
        seed: 1616,
        run: sumlift_cpd,
    },
    Entry {
        name: "uvt-pd",
        reference: "f(<x,y><y,z><z,x>) with nonnegative Maclaurin coefficients is 3-positive definite",
        seed: 1717,
        run: uvt_pd,
    },
    Entry {
        name: "vol2-sigma",
        reference: "moment identities E[u^2] = 1/d and E[uvt] = 1/d^2 give I_vol2(sigma) = (d-1)(d-2)/d^2",
        seed: 1818,
        run: vol2_sigma,
    },
];

/// Registered scenario names, sorted.
pub fn list_scenarios() -> Vec<&'static str> {
    let mut names: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
    names.sort_unstable();
    names
}

/// Runs one scenario with its default seed unless overridden.
pub fn run_scenario(name: &str, overrides: &Overrides) -> Result<Report> {
    let entry = REGISTRY.iter().find(|e| e.name == name).ok_or_else(|| Error::UnknownScenario {
        name: name.to_string(),
        available: list_scenarios().iter().map(|s| s.to_string()).collect(),
    })?;
    let start = Instant::now();
    let mut ctx = Ctx {
        reference: entry.reference,
        seed: overrides.seed.unwrap_or(entry.seed),
        tuples: overrides.tuples.unwrap_or(DEFAULT_TUPLES),
        dims: overrides.dims.clone(),
        tol: Tolerances::default().scaled(overrides.tol_scale),
        tol_scale: overrides.tol_scale,
        seeds: Vec::new(),
        assertions: Vec::new(),
    };
    (entry.run)(&mut ctx)?;
    let pass = ctx.assertions.iter().all(|a| a.pass);
    Ok(Report {
        scenario: entry.name.to_string(),
        reference: entry.reference.to_string(),
        seeds: ctx.seeds,
        pass,
        assertions: ctx.assertions,
        wall_clock_seconds: overrides.timings.then(|| start.elapsed().as_secs_f64()),
    })
}

struct Ctx {
    reference: &'static str,
    seed: u64,
    tuples: u64,
    dims: Option<Vec<usize>>,
    tol: Tolerances,
    tol_scale: f64,
    seeds: Vec<u64>,
    assertions: Vec<Assertion>,
}

impl Ctx {
    /// Next seed in this scenario's sequence, recorded in the report.
    fn next_seed(&mut self) -> u64 {
        let s = self.seed.wrapping_add(self.seeds.len() as u64);
        self.seeds.push(s);
        s
    }

    fn dims(&self, default: &[usize]) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| default.to_vec())
    }

    fn exact_tol(&self) -> f64 {
        1e-12 * self.tol_scale
    }

    fn push(&mut self, description: String, observed: f64, expected: f64, tolerance: f64, relation: Relation, source: Source) {
        let pass = match relation {
            Relation::Within => (observed - expected).abs() <= tolerance,
            Relation::AtMost => observed <= expected + tolerance,
            Relation::AtLeast => observed >= expected - tolerance,
        };
        let citation = (source == Source::Reference).then(|| self.reference.to_string());
        self.assertions.push(Assertion { description, observed, expected, tolerance, relation, pass, source, citation });
    }

    fn within(&mut self, desc: impl Into<String>, observed: f64, expected: f64, tol: f64, source: Source) {
        self.push(desc.into(), observed, expected, tol, Relation::Within, source);
    }

    fn at_most(&mut self, desc: impl Into<String>, observed: f64, bound: f64, source: Source) {
        self.push(desc.into(), observed, bound, 0.0, Relation::AtMost, source);
    }

    fn at_least(&mut self, desc: impl Into<String>, observed: f64, bound: f64, source: Source) {
        self.push(desc.into(), observed, bound, 0.0, Relation::AtLeast, source);
    }

    fn holds(&mut self, desc: impl Into<String>, ok: bool, source: Source) {
        self.push(desc.into(), if ok { 1.0 } else { 0.0 }, 1.0, 0.0, Relation::Within, source);
    }

    fn mc(&mut self, kernel: &Kernel, d: usize, expected: f64, label: &str, source: Source) -> Result<()> {
        let seed = self.next_seed();
        let est = mc_energy_uniform(kernel, d, self.tuples, seed)?;
        let tol = self.tol.mc_sigmas * est.stderr;
        self.within(format!("{label}, d={d}: Monte Carlo I(sigma)"), est.value, expected, tol, source);
        Ok(())
    }
}

fn e(d: usize, k: usize) -> UnitVector {
    UnitVector::basis(d, k).expect("basis index within dimension")
}

fn dirac(x: UnitVector) -> DiscreteMeasure {
    DiscreteMeasure::dirac(x)
}

/// Surrogate size for potential constancy checks.
pub const CONSTANCY_SAMPLES: usize = 20_000;
/// Test points for potential constancy checks.
pub const CONSTANCY_POINTS: usize = 50;
/// Constancy tolerance in units of the largest sampling error.
pub const CONSTANCY_FACTOR: f64 = 5.0;

fn area2_sigma(ctx: &mut Ctx) -> Result<()> {
    let k = Kernel::area2();
    for d in ctx.dims(&[2, 3, 5]) {
        let df = d as f64;
        ctx.mc(&k, d, 0.75 * (df - 1.0) / df, "area2", Source::Reference)?;
        let stderr = mc_energy_uniform(&k, d, ctx.tuples, *ctx.seeds.last().expect("seed recorded"))?.stderr;
        if ctx.tuples >= DEFAULT_TUPLES {
            ctx.at_most(format!("area2, d={d}: Monte Carlo stderr budget"), stderr, 5e-4, Source::Elementary);
        }
        let mu = sample_sphere(d, CONSTANCY_SAMPLES, ctx.next_seed())?.empirical();
        let pts = sample_sphere(d, CONSTANCY_POINTS, ctx.next_seed())?;
        let r = potential_constancy_sampled(&k, &mu, &pts, CONSTANCY_FACTOR)?;
        ctx.at_most(
            format!("area2, d={d}: max deviation of U^(sigma^2) over {CONSTANCY_POINTS} points vs {CONSTANCY_FACTOR} x stderr"),
            r.max_deviation,
            r.tol,
            Source::Reference,
        );
    }
    Ok(())
}

fn vol2_sigma(ctx: &mut Ctx) -> Result<()> {
    for d in ctx.dims(&[3, 4]) {
        let df = d as f64;
        // E[u^2] = 1/d, E[uvt] = 1/d^2 in 1 - (u^2 + v^2 + t^2) + 2uvt
        let expected = 1.0 - 3.0 / df + 2.0 / (df * df);
        ctx.mc(&Kernel::vol2(), d, expected, "vol2", Source::Oracle)?;
    }
    Ok(())
}

fn frame_bound(ctx: &mut Ctx) -> Result<()> {
    for d in ctx.dims(&[2, 3, 4, 5, 6]) {
        ctx.mc(&Kernel::frame2(), d, 1.0 / d as f64, "frame2", Source::Reference)?;
    }
    Ok(())
}

fn s011_counterexample(ctx: &mut Ctx) -> Result<()> {
    let (e1, e2) = (e(3, 0), e(3, 1));
    let mu = combine(&dirac(e2), &dirac(e1.antipode()), 1.0, -1.0)?;
    let v = mutual_energy(&Kernel::s011(), &[&dirac(e1), &mu, &mu])?.value;
    let tol = ctx.exact_tol();
    ctx.within("I_s011(delta_e1, mu, mu), mu = delta_e2 - delta_{-e1}", v, -1.0, tol, Source::Reference);
    ctx.holds("mu is balanced", mu.is_balanced(), Source::Elementary);
    conditional_witness(ctx, &Kernel::s011(), "s011")
}

fn negvol2_not_cpd(ctx: &mut Ctx) -> Result<()> {
    let (e1, e2, e3) = (e(3, 0), e(3, 1), e(3, 2));
    let k = Kernel::neg_vol2();
    let nu = combine(&dirac(e2.clone()), &dirac(e3.clone()), 1.0, 1.0)?;
    let v = mutual_energy(&k, &[&dirac(e1.clone()), &nu, &nu])?.value;
    let tol = ctx.exact_tol();
    ctx.within("I_negvol2(delta_e1, nu, nu), nu = delta_e2 + delta_e3", v, -2.0, tol, Source::Reference);
    // The shift identity turns nu into the balanced nu - 2 delta_e1 with the same energy.
    let balanced = combine(&nu, &dirac(e1.clone()), 1.0, -2.0)?;
    let v = mutual_energy(&k, &[&dirac(e1.clone()), &balanced, &balanced])?.value;
    ctx.within("same energy on the balanced nu - 2 delta_e1", v, -2.0, tol, Source::Oracle);
    let pinned = k.pin(vec![e1])?;
    let opts = PdTestOptions { include: vec![e2, e3], set_size: 2, trials: 1, seed: ctx.next_seed(), ..Default::default() };
    let verdict = pd_test_2input(&pinned, 3, &opts)?;
    let energy = verdict.witness.as_ref().map_or(f64::NAN, |w| w.energy);
    ctx.within("plain test on {e2, e3} returns witness energy", energy, -2.0, tol, Source::Reference);
    conditional_witness(ctx, &k, "neg_vol2")
}

fn negarea2_not_cpd(ctx: &mut Ctx) -> Result<()> {
    let (e1, e2) = (e(3, 0), e(3, 1));
    let k = Kernel::neg_area2();
    let nu = combine(&dirac(e2), &dirac(e1.antipode()), 1.0, 1.0)?;
    let v = mutual_energy(&k, &[&dirac(e1), &nu, &nu])?.value;
    let tol = ctx.exact_tol();
    ctx.within("I_negarea2(delta_e1, nu, nu), nu = delta_e2 + delta_{-e1}", v, -2.0, tol, Source::Reference);
    conditional_witness(ctx, &k, "neg_area2")
}

/// Runs the conditional test and checks the witness it returns.
fn conditional_witness(ctx: &mut Ctx, k: &Kernel, label: &str) -> Result<()> {
    let opts = PdTestOptions { conditional: true, seed: ctx.next_seed(), ..Default::default() };
    let verdict = npd_test(k, 3, 4, &opts)?;
    ctx.holds(format!("{label}: conditional test fails"), !verdict.passed(), Source::Reference);
    if let Some(w) = &verdict.witness {
        let pins: Vec<DiscreteMeasure> = w.pins.iter().cloned().map(dirac).collect();
        let mut list: Vec<&DiscreteMeasure> = pins.iter().collect();
        list.extend([&w.measure, &w.measure]);
        let again = mutual_energy(k, &list)?.value;
        ctx.at_most(format!("{label}: witness energy"), w.energy, -opts.tol, Source::Elementary);
        let tol = ctx.exact_tol() * w.energy.abs().max(1.0);
        ctx.within(format!("{label}: witness energy recomputed"), again, w.energy, tol, Source::Elementary);
        ctx.within(format!("{label}: witness total mass"), w.measure.total_mass(), 0.0, ctx.tol.geometric, Source::Elementary);
    }
    Ok(())
}

/// Pinned sets per dimension in the PD batteries: canonical pin plus 9
/// random pins, 10 point sets of 40 points each.
const PD_PIN_TRIALS: usize = 9;
const PD_TRIALS: usize = 10;
const PD_SET_SIZE: usize = 40;

fn pd_battery(ctx: &mut Ctx, k: &Kernel, label: &str, conditional: bool) -> Result<()> {
    for d in ctx.dims(&[3, 4]) {
        let opts = PdTestOptions {
            conditional,
            trials: PD_TRIALS,
            set_size: PD_SET_SIZE,
            seed: ctx.next_seed(),
            tol: ctx.tol.eigen_relative,
            ..Default::default()
        };
        let pins = if k.is_rotation_invariant() { PD_PIN_TRIALS } else { PD_PIN_TRIALS + 1 };
        let v = npd_test(k, d, pins, &opts)?;
        let mode = if conditional { "conditional" } else { "plain" };
        ctx.holds(format!("{label}, d={d}: {mode} test passes"), v.passed(), Source::Reference);
        ctx.at_least(format!("{label}, d={d}: pinned point sets tested"), v.trials_run as f64, 100.0, Source::Elementary);
        ctx.at_least(
            format!("{label}, d={d}: smallest eigenvalue"),
            v.min_eigenvalue_seen,
            -ctx.tol.eigen_relative,
            Source::Reference,
        );
    }
    Ok(())
}

fn uvt_pd(ctx: &mut Ctx) -> Result<()> {
    pd_battery(ctx, &Kernel::uvt(), "uvt", false)?;
    let exp = Kernel::prod_f_uvt(Series::Exp)?;
    pd_battery(ctx, &exp, "exp(uvt)", false)
}

fn quad_a_pd(ctx: &mut Ctx) -> Result<()> {
    for a in [-1.0, 0.0, 0.5, 0.9] {
        pd_battery(ctx, &Kernel::quad_a(a, true)?, &format!("quad_a(a={a}, shifted)"), false)?;
    }
    Ok(())
}

fn sumlift_cpd(ctx: &mut Ctx) -> Result<()> {
    pd_battery(ctx, &Kernel::inner().sum_lift(3)?, "sum_lift(inner, 3)", true)
}

fn prodlift_pd(ctx: &mut Ctx) -> Result<()> {
    pd_battery(ctx, &Kernel::frame2().prod_lift(3)?, "prod_lift(frame2, 3)", false)?;
    pd_battery(ctx, &Kernel::frame2().prod_lift(4)?, "prod_lift(frame2, 4)", false)?;
    pd_battery(ctx, &Kernel::inner().prod_lift(3)?, "prod_lift(inner, 3)", false)
}

fn s011_potential(ctx: &mut Ctx) -> Result<()> {
    let d = 3;
    let mu = sample_sphere(d, 100_000, ctx.next_seed())?.empirical();
    let at = sample_sphere(d, 40, ctx.next_seed())?;
    let values = potential_sampled(&Kernel::s011(), &[&mu], &at)?;
    let mut worst: f64 = 0.0;
    for (v, pair) in values.iter().zip(at.points().chunks(2)) {
        let expected = pair[0].dot(&pair[1]) / d as f64;
        worst = worst.max((v.value - expected).abs() / (ctx.tol.mc_sigmas * v.stderr));
    }
    ctx.at_most("largest |U(x,y) - <x,y>/d| in units of 4 x stderr over 20 pairs", worst, 1.0, Source::Reference);
    Ok(())
}

/// Surrogate size and replicate count for the s100 convexity probe.
const S100_SAMPLES: usize = 2000;
const S100_REPLICATES: usize = 5;

fn s100_nonconvex(ctx: &mut Ctx) -> Result<()> {
    let d = 3;
    let df = d as f64;
    let k = Kernel::s100();
    let nu = dirac(e(d, 0));
    let mut gaps = Vec::new();
    let mut convex_any = false;
    for _ in 0..S100_REPLICATES {
        let mu = sample_sphere(d, S100_SAMPLES, ctx.next_seed())?.empirical();
        let r = convexity_probe(&k, &mu, &nu)?;
        let g = crate::energy::MixturePolynomial { coeffs: r.g_coefficients.clone() };
        gaps.push(g.eval(0.5) - 0.5 * (g.eval(0.0) + g.eval(1.0)));
        convex_any |= r.convex_on_unit_interval || r.violation_t.is_none();
    }
    let reps = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / reps;
    let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (reps - 1.0)).sqrt();
    let expected = 3.0 * 0.125 * (df - 1.0) / df;
    let tol = ctx.tol.mc_sigmas * sd / reps.sqrt() + 3.0 / S100_SAMPLES as f64;
    ctx.within("chord gap g(1/2) - (g(0) + g(1))/2 at the uniform surrogate", mean, expected, tol, Source::Reference);
    ctx.holds("every replicate fails the chord test", !convex_any, Source::Reference);
    conditional_witness(ctx, &k, "s100")
}

/// Random setups per arity for the derivative identities.
const DERIVATIVE_SETUPS: usize = 50;

/// Kernel pools used for random derivative-identity setups.
pub fn derivative_kernels(n: usize) -> Vec<Kernel> {
    let k = |r: Result<Kernel>| r.expect("valid catalog kernel");
    match n {
        3 => vec![
            Kernel::vol2(),
            Kernel::area2(),
            Kernel::s011(),
            Kernel::s100(),
            Kernel::uvt(),
            k(Kernel::quad_a(0.5, true)),
            k(Kernel::prod_f_uvt(Series::Exp)),
            k(Kernel::inner().sum_lift(3)),
            k(Kernel::frame2().prod_lift(3)),
        ],
        _ => vec![
            k(Kernel::inner().sum_lift(4)),
            k(Kernel::inner().prod_lift(4)),
            k(Kernel::uvt().sum_lift(4)),
            k(Kernel::area2().sum_lift(4)),
            k(Kernel::frame2().prod_lift(4)),
        ],
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn derivative_identities(ctx: &mut Ctx) -> Result<()> {
    for n in [3usize, 4] {
        let pool = derivative_kernels(n);
        let seed = ctx.next_seed();
        let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
        let mut worst1: f64 = 0.0;
        let mut worst2: f64 = 0.0;
        for s in 0..DERIVATIVE_SETUPS {
            let k = &pool[s % pool.len()];
            let mu = random_probability(&mut rng, 3, 4);
            let nu = random_probability(&mut rng, 3, 4);
            let g = mixture_polynomial(k, &mu, &nu)?;
            let h = reduced_mixture_via_potential(k, &mu, &nu)?;
            let nf = n as f64;
            worst1 = worst1.max(relative_gap(h.derivative(1, 0.0), 2.0 / nf * g.derivative(1, 0.0)));
            worst2 = worst2.max(relative_gap(h.derivative(2, 0.0), 2.0 / (nf * (nf - 1.0)) * g.derivative(2, 0.0)));
        }
        let tol = 1e-8 * ctx.tol_scale;
        ctx.at_most(format!("n={n}: worst relative gap h'(0) vs (2/n) g'(0)"), worst1, tol, Source::Reference);
        ctx.at_most(format!("n={n}: worst relative gap h''(0) vs 2/(n(n-1)) g''(0)"), worst2, tol, Source::Reference);
    }
    Ok(())
}

fn bcr_shift(ctx: &mut Ctx) -> Result<()> {
    let d = 3;
    let e1 = e(d, 0);
    let riesz = |s: f64| Kernel::riesz(s).expect("positive exponent");
    let battery: Vec<(&str, Kernel, bool)> = vec![
        ("inner", Kernel::inner(), true),
        ("frame2", Kernel::frame2(), true),
        ("-|x-y|", riesz(1.0).scale(-1.0), true),
        ("-|x-y|^2", riesz(2.0).scale(-1.0), true),
        ("-|x-y|^1.5", riesz(1.5).scale(-1.0), true),
        ("|x-y|", riesz(1.0), false),
        ("pin(neg_vol2, e1)", Kernel::neg_vol2().pin(vec![e1.clone()])?, false),
        ("pin(neg_area2, e1)", Kernel::neg_area2().pin(vec![e1.clone()])?, false),
        ("pin(s011, e1)", Kernel::s011().pin(vec![e1.clone()])?, false),
    ];
    let tol = ctx.tol.eigen_relative;
    for (label, g, cpd) in battery {
        let seed = ctx.next_seed();
        let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
        let x0 = random_unit(&mut rng, d);
        let phi = g.cpd_shift(x0.clone())?.phi;
        let mut agree = true;
        let mut cond_fails = 0;
        let mut convex_agree = true;
        for _ in 0..PD_TRIALS {
            let mut pts = vec![x0.clone(), e1.clone(), e(d, 1), e1.antipode()];
            while pts.len() < 20 {
                pts.push(random_unit(&mut rng, d));
            }
            let cond = check_matrix(&kernel_matrix(&g, &pts), true, tol);
            let plain = check_matrix(&kernel_matrix(&phi, &pts), false, tol);
            agree &= cond.passed() == plain.passed();
            // Convexity along mixtures of probability measures on the same points.
            let convex = match &cond.coefficients {
                Some(c) => {
                    cond_fails += 1;
                    let w = crate::certify::witness_measure(&pts, c, true, 1e-12)?;
                    let (_, plus, minus) = split_balanced(&w)?;
                    mixture_polynomial(&g, &plus, &minus)?.derivative(2, 0.0) >= -1e-10
                }
                None => {
                    let at = PointConfiguration::new(pts.clone())?;
                    let mu = weighted(&at, &mut rng)?;
                    let nu = weighted(&at, &mut rng)?;
                    mixture_polynomial(&g, &mu, &nu)?.derivative(2, 0.0) >= -1e-10
                }
            };
            convex_agree &= convex == cond.passed();
        }
        ctx.holds(format!("{label}: plain verdict of phi equals conditional verdict of G"), agree, Source::Reference);
        ctx.holds(format!("{label}: convexity of g agrees with conditional verdict"), convex_agree, Source::Reference);
        ctx.holds(
            format!("{label}: conditional verdict is {}", if cpd { "pass" } else { "fail" }),
            (cond_fails == 0) == cpd,
            Source::Reference,
        );
    }
    Ok(())
}

fn weighted<R: rand::Rng>(at: &PointConfiguration, rng: &mut R) -> Result<DiscreteMeasure> {
    let raw: Vec<f64> = (0..at.len()).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(at.points().to_vec(), raw.iter().map(|w| w / total).collect())
}

/// Trials for the inequality battery.
const INEQUALITY_TRIALS: usize = 1000;

fn inequality_suite_scenario(ctx: &mut Ctx) -> Result<()> {
    let d = 3;
    let tol = 1e-10 * ctx.tol_scale;
    let r = inequality_suite(&Kernel::uvt(), d, INEQUALITY_TRIALS, ctx.next_seed())?;
    for (label, res) in [
        ("AM", &r.am),
        ("GM", &r.gm),
        ("lower bound", &r.lower_bound),
        ("max on diagonal", &r.diagonal),
        ("convexity bound", &r.convexity_bound),
        ("convexity inequality", &r.convexity_inequality),
    ] {
        ctx.at_most(format!("uvt: worst {label} residual"), res.worst.unwrap_or(f64::NEG_INFINITY), tol, Source::Reference);
    }
    for a in [-1.0, 0.0, 0.5, 0.9, 1.0] {
        let r = inequality_suite(&Kernel::quad_a(a, false)?, d, INEQUALITY_TRIALS, ctx.next_seed())?;
        ctx.at_most(format!("quad_a(a={a}): worst max-on-diagonal residual"), r.diagonal.worst.unwrap_or(0.0), tol, Source::Reference);
        ctx.at_most(format!("quad_a(a={a}): worst AM residual"), r.am.worst.unwrap_or(0.0), tol, Source::Reference);
    }
    let r = inequality_suite(&Kernel::quad_a(0.5, true)?, d, INEQUALITY_TRIALS, ctx.next_seed())?;
    ctx.at_most("quad_a(a=0.5, shifted): worst GM residual", r.gm.worst.unwrap_or(0.0), tol, Source::Reference);
    ctx.at_most("quad_a(a=0.5, shifted): worst lower-bound residual", r.lower_bound.worst.unwrap_or(0.0), tol, Source::Reference);
    let r = inequality_suite(&Kernel::inner().sum_lift(3)?, d, INEQUALITY_TRIALS, ctx.next_seed())?;
    ctx.at_most("sum_lift(inner, 3): worst AM residual", r.am.worst.unwrap_or(0.0), tol, Source::Reference);
    let r = inequality_suite(&Kernel::s100(), d, INEQUALITY_TRIALS, ctx.next_seed())?;
    ctx.at_least("s100: AM violations (expected, not conditionally 3-PD)", r.am.violations as f64, 1.0, Source::Reference);
    Ok(())
}

fn optimizer(ctx: &mut Ctx, maximize: bool, steps: usize) -> OptimizerConfig {
    OptimizerConfig { steps, maximize, seed: ctx.next_seed(), multistart: 4, ..Default::default() }
}

fn maximize_area2(ctx: &mut Ctx) -> Result<()> {
    let cfg = optimizer(ctx, true, 2000);
    let r = optimize_discrete(&Kernel::area2(), 30, 3, &cfg)?;
    let best = r.best.final_energy();
    ctx.at_least("area2, N=30, d=3: best discrete energy", best, 0.45, Source::Reference);
    ctx.at_most("area2, N=30, d=3: below the supremum over measures", best, 0.5 + 1e-9, Source::Reference);
    Ok(())
}

fn maximize_vol2(ctx: &mut Ctx) -> Result<()> {
    let cfg = optimizer(ctx, true, 2000);
    let r = optimize_discrete(&Kernel::vol2(), 30, 3, &cfg)?;
    let best = r.best.final_energy();
    ctx.at_least("vol2, N=30, d=3: best discrete energy", best, 0.19, Source::Oracle);
    ctx.at_most("vol2, N=30, d=3: below I(sigma) = 2/9", best, 2.0 / 9.0 + 1e-9, Source::Oracle);
    Ok(())
}

fn minimize_s011(ctx: &mut Ctx) -> Result<()> {
    let cfg = optimizer(ctx, false, 2000);
    let r = optimize_discrete(&Kernel::s011(), 2, 3, &cfg)?;
    let best = r.best.final_energy();
    ctx.at_most("s011, N=2, d=3: best discrete energy", best, 1e-6, Source::Elementary);
    ctx.at_least("s011, N=2, d=3: not below the infimum 0", best, -1e-9, Source::Elementary);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_sorted_and_complete() {
        let names = list_scenarios();
        assert!(names.windows(2).all(|w| w[0] < w[1]));
        assert!(names.contains(&"area2-sigma"));
        assert_eq!(names.len(), REGISTRY.len());
        assert_eq!(names, list_scenarios());
    }

    #[test]
    fn unknown_scenario_lists_names() {
        match run_scenario("no-such-thing", &Overrides::default()) {
            Err(Error::UnknownScenario { available, .. }) => assert!(available.contains(&"vol2-sigma".to_string())),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_scenario_passes_with_citations() {
        let r = run_scenario("s011-counterexample", &Overrides::default()).unwrap();
        assert!(r.pass, "{r:#?}");
        assert!((r.assertions[0].observed + 1.0).abs() <= 1e-12);
        for a in r.assertions.iter().filter(|a| a.source == Source::Reference) {
            assert_eq!(a.citation.as_deref(), Some(r.reference.as_str()));
        }
    }

    #[test]
    fn overrides_parse() {
        let mut m = BTreeMap::new();
        m.insert("d".to_string(), "2,3".to_string());
        m.insert("seed".to_string(), "9".to_string());
        let o = Overrides::from_map(&m).unwrap();
        assert_eq!(o.dims, Some(vec![2, 3]));
        assert_eq!(o.seed, Some(9));
        m.insert("bogus".to_string(), "1".to_string());
        assert!(Overrides::from_map(&m).is_err());
    }
}
