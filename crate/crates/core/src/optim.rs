//! Adam fitting of a VSG volume (and optionally surface buffers).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composite::MarchConfig;
use crate::error::{Error, Result};
use crate::grad::Differentiable;
use crate::objective::{LossTerms, LossWeights, Objective, ObjectiveOptions, Observation};
use crate::shading::ShadingOptions;
use crate::surface::SurfaceBuffers;
use crate::volume::VsgVolume;

/// Sub-stream ids of the config seed.
pub const STREAM_SAMPLING: u64 = 1;
pub const STREAM_OPTIMIZER: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c = &self.cfg;
        let b1t = 1.0 - c.beta1.powi(self.t);
        let b2t = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Full evaluation for the history every this many iterations (and at the
    /// first and last).
    pub eval_every: usize,
    pub pixel_budget: usize,
    pub shading: ShadingOptions,
    pub march: MarchConfig,
    pub fit_surface: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 50,
            pixel_budget: 4096,
            shading: ShadingOptions::default(),
            march: MarchConfig::default(),
            fit_surface: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub terms: LossTerms,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Volume at the best fully evaluated total loss.
    pub volume: VsgVolume,
    pub surface: Option<SurfaceBuffers>,
    pub history: Vec<HistoryEntry>,
    pub best: HistoryEntry,
}

impl FitResult {
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,{}", LossTerms::NAMES.join(","))?;
        for h in &self.history {
            let vals: Vec<String> = h.terms.values().iter().map(|v| format!("{v:.10e}")).collect();
            writeln!(w, "{},{}", h.iteration, vals.join(","))?;
        }
        Ok(())
    }
}

/// Surface buffers assembled from albedo, normal and depth ground truth, if
/// all three are present.
pub fn surface_from_observations(observations: &[Observation]) -> Option<SurfaceBuffers> {
    let (mut a, mut n, mut d) = (None, None, None);
    for o in observations {
        match o {
            Observation::AlbedoGt { image, .. } => a = Some(image.clone()),
            Observation::NormalGt { image } => n = Some(image.clone()),
            Observation::DepthGt { image } => d = Some(image.clone()),
            _ => {}
        }
    }
    SurfaceBuffers::new(a?, n?, d?).ok()
}

/// Fits `initial` to the observations. The re-rendering term uses the
/// surface built from the ground-truth buffers among the observations.
pub fn fit_volume(
    initial: &VsgVolume,
    observations: &[Observation],
    weights: &LossWeights,
    config: &FitConfig,
) -> Result<FitResult> {
    fit_with_surface(initial, surface_from_observations(observations), observations, weights, config)
}

pub fn fit_with_surface(
    initial: &VsgVolume,
    surface: Option<SurfaceBuffers>,
    observations: &[Observation],
    weights: &LossWeights,
    config: &FitConfig,
) -> Result<FitResult> {
    let opts = ObjectiveOptions {
        shading: config.shading,
        march: config.march,
        pixel_budget: config.pixel_budget,
        fit_surface: config.fit_surface,
    };
    let mut obj = Objective::new(initial.clone(), surface, observations.to_vec(), *weights, opts)?;
    let mut sampling = ChaCha8Rng::seed_from_u64(config.seed);
    sampling.set_stream(STREAM_SAMPLING);
    let mut adam = Adam::new(obj.num_params(), config.adam);
    let mut params = obj.params();
    let mut history = Vec::new();
    let eval_every = config.eval_every.max(1);

    let full_eval = |obj: &mut Objective, it: usize| -> Result<LossTerms> {
        let t = obj.forward(None)?;
        if let Some(term) = t.first_non_finite() {
            return Err(Error::NonFinite {
                term: term.into(),
                iteration: it,
            });
        }
        Ok(t)
    };

    let first = full_eval(&mut obj, 0)?;
    let mut best = HistoryEntry {
        iteration: 0,
        terms: first,
    };
    history.push(best);
    let (mut best_volume, mut best_surface) = (obj.volume().clone(), obj.surface().cloned());

    for it in 1..=config.iterations {
        let t = obj.forward(Some(&mut sampling))?;
        if let Some(term) = t.first_non_finite() {
            return Err(Error::NonFinite {
                term: term.into(),
                iteration: it,
            });
        }
        let grad = obj.flatten(&obj.backward()?);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: "gradient".into(),
                iteration: it,
            });
        }
        adam.step(&mut params, &grad);
        obj.set_params(&params);
        obj.project();
        params = obj.params();

        if it % eval_every == 0 || it == config.iterations {
            let terms = full_eval(&mut obj, it)?;
            let e = HistoryEntry { iteration: it, terms };
            history.push(e);
            if terms.total < best.terms.total {
                best = e;
                best_volume = obj.volume().clone();
                best_surface = obj.surface().cloned();
            }
        }
    }
    Ok(FitResult {
        volume: best_volume,
        surface: best_surface,
        history,
        best,
    })
}
