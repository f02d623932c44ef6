//! Browser bindings for the demo page in `www/`.
//!
//! Three interactive operations: Monte Carlo energy of the uniform measure
//! across dimensions, particle optimization on S^2, and the mixture curve
//! `t -> I((1-t) mu + t nu)`. Each binding wraps a plain function so the
//! logic is testable off the browser.

use multienergy::energy::{mc_energy_uniform, mixture_polynomial};
use multienergy::optimize::{optimize_from, OptimizerConfig};
use multienergy::sphere::sample_sphere;
use multienergy::{DiscreteMeasure, Kernel, PointConfiguration, UnitVector};
use wasm_bindgen::prelude::*;

fn js(e: multienergy::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `[d, value, stderr]` triples for each `d` in `d_min..=d_max`.
pub fn energy_by_dimension(spec: &str, d_min: usize, d_max: usize, tuples: u64, seed: u64) -> multienergy::Result<Vec<f64>> {
    let kernel = Kernel::parse(spec)?;
    let mut out = Vec::new();
    for d in d_min..=d_max {
        let est = mc_energy_uniform(&kernel, d, tuples, seed.wrapping_add(d as u64))?;
        out.extend([d as f64, est.value, est.stderr]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = energyByDimension)]
pub fn energy_by_dimension_js(spec: &str, d_min: usize, d_max: usize, tuples: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    energy_by_dimension(spec, d_min, d_max, tuples as u64, seed as u64).map_err(js)
}

/// `[t_0, g(t_0), chord(t_0), t_1, ...]` on `points` grid values for
/// `mu` an `m`-point uniform sample in R^3 and `nu = delta_e1`.
pub fn mixture_curve(spec: &str, m: usize, seed: u64, points: usize) -> multienergy::Result<Vec<f64>> {
    let kernel = Kernel::parse(spec)?;
    let mu = sample_sphere(3, m, seed)?.empirical();
    let nu = DiscreteMeasure::dirac(UnitVector::basis(3, 0)?);
    let g = mixture_polynomial(&kernel, &mu, &nu)?;
    let (g0, g1) = (g.eval(0.0), g.eval(1.0));
    let steps = points.max(2) - 1;
    Ok((0..=steps)
        .flat_map(|i| {
            let t = i as f64 / steps as f64;
            [t, g.eval(t), (1.0 - t) * g0 + t * g1]
        })
        .collect())
}

#[wasm_bindgen(js_name = mixtureCurve)]
pub fn mixture_curve_js(spec: &str, m: usize, seed: u32, points: usize) -> Result<Vec<f64>, JsError> {
    mixture_curve(spec, m, seed as u64, points).map_err(js)
}

/// Particles on S^2 moved by projected gradient steps.
#[wasm_bindgen]
pub struct Particles {
    kernel: Kernel,
    config: PointConfiguration,
    maximize: bool,
    energy: f64,
}

impl Particles {
    pub fn create(spec: &str, n: usize, seed: u64, maximize: bool) -> multienergy::Result<Particles> {
        let kernel = Kernel::parse(spec)?;
        let config = sample_sphere(3, n, seed)?;
        let energy = multienergy::energy::discrete_energy(&kernel, &config)?.value;
        Ok(Particles { kernel, config, maximize, energy })
    }

    /// Runs up to `steps` line-searched steps; returns the new energy.
    pub fn advance(&mut self, steps: usize) -> multienergy::Result<f64> {
        let cfg = OptimizerConfig { steps, maximize: self.maximize, multistart: 1, ..Default::default() };
        let trace = optimize_from(&self.kernel, &self.config, &cfg)?;
        self.energy = trace.final_energy();
        self.config = trace.final_config;
        Ok(self.energy)
    }
}

#[wasm_bindgen]
impl Particles {
    #[wasm_bindgen(constructor)]
    pub fn new(spec: &str, n: usize, seed: u32, maximize: bool) -> Result<Particles, JsError> {
        Particles::create(spec, n, seed as u64, maximize).map_err(js)
    }

    pub fn step(&mut self, steps: usize) -> Result<f64, JsError> {
        self.advance(steps).map_err(js)
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Flat `[x, y, z, x, y, z, ...]` coordinates.
    pub fn coords(&self) -> Vec<f64> {
        self.config.points().iter().flat_map(|p| p.coords().to_vec()).collect()
    }
}
