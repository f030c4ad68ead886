//! Euler-Maruyama scheme for the N-particle system
//!
//! ```text
//! X^i_{t} = X^i_{t_δ} + (t - t_δ) b(X^i_{t_δ}, μ̂_{t_δ}) + (L^i_t - L^i_{t_δ}),
//! μ̂_{kδ} = (1/N) Σ_j δ_{X^j_{kδ}},    t_δ = ⌊t/δ⌋ δ.
//! ```
//!
//! Noise lives on a lattice of cells of length `h = δ / substeps`. Cell `j` of
//! particle `i` is keyed by `(seed, i, j)`, so a path on a coarser lattice is
//! driven by sums of exactly the same cells as a path on a finer one. Cells
//! are added to the state one at a time, in order: with a vanishing drift the
//! coarse and fine lattice values then agree bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{DriftSpec, MeasureSummary};
use crate::empirical::EmpiricalMeasure;
use crate::noise::{
    mix_seed, sample_increment_with, standard_normal, standard_symmetric_stable, Draws,
    NoiseSource, StableParams,
};
use crate::{Error, Result};

const INIT_SALT: u64 = 0x1A17_1A15_0000_0001;
const PAR_MIN_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass {
        x0: Vec<f64>,
    },
    /// I.i.d. normal coordinates.
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// I.i.d. uniform coordinates on `[lo, hi)`.
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// I.i.d. standard symmetric stable coordinates times `scale`; finite
    /// moments only below `alpha`.
    Stable {
        alpha: f64,
        scale: f64,
    },
}

impl InitialLaw {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitialLaw::PointMass { x0 } if x0.len() != dim => Err(Error::DimensionMismatch {
                expected: dim,
                got: x0.len(),
            }),
            InitialLaw::Gaussian { sd, .. } if !(*sd >= 0.0) => {
                Err(Error::param("sd", format!("must be >= 0, got {sd}")))
            }
            InitialLaw::Uniform { lo, hi } if !(lo < hi) => Err(Error::param(
                "hi",
                format!("need lo < hi, got [{lo}, {hi})"),
            )),
            InitialLaw::Stable { alpha, scale }
                if !(*alpha > 1.0 && *alpha < 2.0 && *scale > 0.0) =>
            {
                Err(Error::param(
                    "alpha",
                    "stable initial law needs alpha in (1, 2) and scale > 0",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn has_finite_moment(&self, q: f64) -> bool {
        match self {
            InitialLaw::Stable { alpha, .. } => q < *alpha,
            _ => true,
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, InitialLaw::PointMass { .. })
    }

    fn sample_into<D: Draws>(&self, draws: &mut D, out: &mut [f64]) {
        match self {
            InitialLaw::PointMass { x0 } => out.copy_from_slice(x0),
            InitialLaw::Gaussian { mean, sd } => {
                for o in out.iter_mut() {
                    *o = mean + sd * standard_normal(draws);
                }
            }
            InitialLaw::Uniform { lo, hi } => {
                for o in out.iter_mut() {
                    *o = lo + (hi - lo) * draws.even();
                }
            }
            InitialLaw::Stable { alpha, scale } => {
                for o in out.iter_mut() {
                    *o = scale * standard_symmetric_stable(*alpha, draws);
                }
            }
        }
    }
}

/// Initial states for the given stream ids, flat `ids.len() x dim`.
pub fn sample_initial(law: &InitialLaw, dim: usize, seed: u64, ids: &[u64]) -> Vec<f64> {
    let source = NoiseSource::new(mix_seed(seed, INIT_SALT));
    let mut out = vec![0.0; ids.len() * dim];
    out.par_chunks_mut(dim)
        .with_min_len(PAR_MIN_LEN)
        .zip(ids.par_iter())
        .for_each(|(slot, &id)| law.sample_into(&mut source.stream(id, 0), slot));
    out
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub particles: usize,
    pub delta: f64,
    pub horizon: f64,
    /// Noise cells per step.
    pub substeps: u32,
    pub drift: DriftSpec,
    pub noise: StableParams,
    pub init: InitialLaw,
    pub seed: u64,
}

/// The scheme is stated for step sizes below `1/e`.
pub const MAX_STEP: f64 = 0.367_879_441_171_442_33;

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::param("particles", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < MAX_STEP) {
            return Err(Error::param(
                "delta",
                format!("step must lie in (0, 1/e), got {}", self.delta),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param(
                "horizon",
                format!("must be positive, got {}", self.horizon),
            ));
        }
        if self.substeps == 0 {
            return Err(Error::param("substeps", "must be at least 1"));
        }
        self.noise.validate()?;
        if self.drift.dim != self.noise.dim {
            return Err(Error::DimensionMismatch {
                expected: self.noise.dim,
                got: self.drift.dim,
            });
        }
        self.drift.validate_with_alpha(self.noise.alpha)?;
        self.init.validate(self.noise.dim)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.noise.dim
    }

    /// `T / δ` rounded to the nearest positive integer.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.delta).round() as usize).max(1)
    }

    /// Horizon moved onto the lattice.
    pub fn adjusted_horizon(&self) -> f64 {
        self.steps() as f64 * self.delta
    }

    pub fn cell_length(&self) -> f64 {
        self.delta / f64::from(self.substeps)
    }

    pub fn default_ids(&self) -> Vec<u64> {
        (0..self.particles as u64).collect()
    }
}

/// Noise cells laid out `[cell][particle][coordinate]`.
#[derive(Debug, Clone)]
pub struct NoiseTable {
    particles: usize,
    dim: usize,
    cells: usize,
    data: Vec<f64>,
}

impl NoiseTable {
    pub fn generate(params: &StableParams, h: f64, seed: u64, ids: &[u64], cells: usize) -> Self {
        let dim = params.dim;
        let particles = ids.len();
        let source = NoiseSource::new(seed);
        let per_particle: Vec<Vec<f64>> = ids
            .par_iter()
            .map(|&id| {
                let mut buf = vec![0.0; cells * dim];
                for (j, slot) in buf.chunks_exact_mut(dim).enumerate() {
                    sample_increment_with(params, h, &mut source.stream(id, j as u64), slot);
                }
                buf
            })
            .collect();
        let mut data = vec![0.0; cells * particles * dim];
        data.par_chunks_mut(particles * dim)
            .enumerate()
            .for_each(|(j, row)| {
                for (i, slot) in row.chunks_exact_mut(dim).enumerate() {
                    slot.copy_from_slice(&per_particle[i][j * dim..(j + 1) * dim]);
                }
            });
        NoiseTable {
            particles,
            dim,
            cells,
            data,
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    /// Cell `j` for the first `n` particles.
    pub fn cell(&self, j: usize, n: usize) -> &[f64] {
        let start = j * self.particles * self.dim;
        &self.data[start..start + n * self.dim]
    }
}

type CellObserver<'a> = &'a mut dyn FnMut(usize, &[f64]);

/// One Euler-Maruyama step applied to every particle.
///
/// `cells` are the noise cells covering the step, in time order. When
/// `interior` is given it receives the interpolated states at each interior
/// cell boundary `j = 1..cells.len()`.
fn advance(
    drift: &DriftSpec,
    states: &[f64],
    summary: &MeasureSummary,
    delta: f64,
    cells: &[&[f64]],
    interior: Option<CellObserver<'_>>,
) -> Vec<f64> {
    let dim = drift.dim;
    let mut drifts = vec![0.0; states.len()];
    drifts
        .par_chunks_mut(dim)
        .with_min_len(PAR_MIN_LEN)
        .zip(states.par_chunks(dim))
        .for_each(|(b, x)| {
            drift.eval_into(x, summary, b);
            for v in b.iter() {
                assert!(
                    v.abs() <= drift.bound_cap * (1.0 + 1e-12),
                    "drift {v} exceeds declared bound {}",
                    drift.bound_cap
                );
            }
        });

    if let Some(observe) = interior {
        let h = delta / cells.len() as f64;
        let mut running = states.to_vec();
        let mut view = vec![0.0; states.len()];
        for (j, cell) in cells.iter().enumerate().take(cells.len() - 1) {
            let elapsed = (j + 1) as f64 * h;
            running
                .par_iter_mut()
                .with_min_len(PAR_MIN_LEN)
                .zip(view.par_iter_mut())
                .zip(cell.par_iter().zip(drifts.par_iter()))
                .for_each(|((r, v), (c, b))| {
                    *r += c;
                    *v = *r + elapsed * b;
                });
            observe(j + 1, &view);
        }
    }

    let mut next = vec![0.0; states.len()];
    next.par_iter_mut()
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .for_each(|(k, out)| {
            let mut y = states[k] + delta * drifts[k];
            for cell in cells {
                y += cell[k];
            }
            *out = y;
        });
    next
}

/// Single step `new_i = x_i + δ b(x_i, μ) + ΔL_i` with `μ` the empirical
/// measure of the current states.
pub fn em_step(
    states: &[f64],
    empirical: &EmpiricalMeasure,
    drift: &DriftSpec,
    delta: f64,
    increments: &[f64],
) -> Result<Vec<f64>> {
    let dim = drift.dim;
    if empirical.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: empirical.dim(),
        });
    }
    if states.is_empty() || !states.len().is_multiple_of(dim) {
        return Err(Error::param(
            "states",
            format!("length {} is not a multiple of {dim}", states.len()),
        ));
    }
    if increments.len() != states.len() {
        return Err(Error::UnequalSupport(states.len(), increments.len()));
    }
    let summary = drift.summarize(empirical);
    Ok(advance(drift, states, &summary, delta, &[increments], None))
}

/// Where the measure argument of the drift comes from.
#[derive(Clone, Copy)]
pub(crate) enum MeasureFlow<'a> {
    /// The particles' own empirical measure.
    Interacting,
    /// An external measure per lattice time.
    Frozen(&'a [EmpiricalMeasure]),
}

/// One run of `particles` particles over `steps` steps of `cells_per_step`
/// noise cells, reading the first `particles` columns of a noise table.
pub(crate) struct Run<'a> {
    pub drift: &'a DriftSpec,
    pub particles: usize,
    pub delta: f64,
    pub cells_per_step: usize,
    pub steps: usize,
    pub flow: MeasureFlow<'a>,
}

pub(crate) struct Recorded {
    pub states: Vec<Vec<f64>>,
    pub increments: Vec<Vec<f64>>,
}

impl Run<'_> {
    fn summary(&self, k: usize, states: &[f64]) -> MeasureSummary {
        match self.flow {
            MeasureFlow::Interacting => self.drift.summarize_states(states),
            MeasureFlow::Frozen(flow) => self.drift.summarize(&flow[k]),
        }
    }

    /// Integrates from `init`, calling `observe(cell, states)` at every cell
    /// boundary (including the initial one). Lattice states and the noise
    /// used are returned when `record` is set.
    pub fn execute(
        &self,
        init: &[f64],
        noise: &NoiseTable,
        record: bool,
        mut observe: impl FnMut(usize, &[f64]),
    ) -> Recorded {
        let m = self.cells_per_step;
        assert!(noise.cells() >= self.steps * m, "noise table too short");
        assert!(
            noise.particles() >= self.particles,
            "noise table too narrow"
        );
        let mut recorded = Recorded {
            states: Vec::new(),
            increments: Vec::new(),
        };
        let mut x = init.to_vec();
        observe(0, &x);
        if record {
            recorded.states.push(x.clone());
        }
        for k in 0..self.steps {
            let summary = self.summary(k, &x);
            let cells: Vec<&[f64]> = (0..m)
                .map(|j| noise.cell(k * m + j, self.particles))
                .collect();
            let base = k * m;
            let next = if m > 1 {
                let mut interior = |j: usize, v: &[f64]| observe(base + j, v);
                advance(
                    self.drift,
                    &x,
                    &summary,
                    self.delta,
                    &cells,
                    Some(&mut interior),
                )
            } else {
                advance(self.drift, &x, &summary, self.delta, &cells, None)
            };
            observe(base + m, &next);
            if record {
                recorded.increments.push(cells.concat());
                recorded.states.push(next.clone());
            }
            x = next;
        }
        recorded
    }
}

/// Lattice values of an N-particle run together with the noise that drove
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub dim: usize,
    pub particles: usize,
    pub delta: f64,
    pub substeps: usize,
    /// `k δ` for `k = 0..=steps`.
    pub times: Vec<f64>,
    /// `states[k]` is the flat `particles x dim` state at `times[k]`.
    pub states: Vec<Vec<f64>>,
    /// `increments[k]` holds the `substeps` cells of step `k`, laid out
    /// `[cell][particle][coordinate]`.
    pub increments: Vec<Vec<f64>>,
}

impl LatticePath {
    fn from_recorded(
        rec: Recorded,
        dim: usize,
        particles: usize,
        delta: f64,
        substeps: usize,
    ) -> Self {
        let times = (0..rec.states.len()).map(|k| k as f64 * delta).collect();
        LatticePath {
            dim,
            particles,
            delta,
            substeps,
            times,
            states: rec.states,
            increments: rec.increments,
        }
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("path has an initial state")
    }

    pub fn state(&self, k: usize, particle: usize) -> &[f64] {
        &self.states[k][particle * self.dim..(particle + 1) * self.dim]
    }

    /// Total noise of step `k` for one particle, cells summed in order.
    pub fn step_increment(&self, k: usize, particle: usize) -> Vec<f64> {
        let row = self.particles * self.dim;
        let mut total = vec![0.0; self.dim];
        for cell in self.increments[k].chunks_exact(row) {
            let c = &cell[particle * self.dim..(particle + 1) * self.dim];
            total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
        }
        total
    }

    pub fn empirical(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.dim, self.states[k].clone()).expect("nonempty states")
    }

    /// Empirical measure at every lattice time.
    pub fn measure_flow(&self) -> Vec<EmpiricalMeasure> {
        (0..self.states.len()).map(|k| self.empirical(k)).collect()
    }

    /// Re-integrates the path from its initial states and stored noise.
    pub fn replay(&self, drift: &DriftSpec, flow: Option<&[EmpiricalMeasure]>) -> Vec<Vec<f64>> {
        let row = self.particles * self.dim;
        let mut out = vec![self.states[0].clone()];
        for k in 0..self.steps() {
            let x = out.last().expect("seeded");
            let summary = match flow {
                Some(f) => drift.summarize(&f[k]),
                None => drift.summarize_states(x),
            };
            let cells: Vec<&[f64]> = self.increments[k].chunks_exact(row).collect();
            out.push(advance(drift, x, &summary, self.delta, &cells, None));
        }
        out
    }
}

fn build_path(config: &SystemConfig, ids: &[u64], flow: MeasureFlow<'_>) -> Result<LatticePath> {
    config.validate()?;
    if ids.len() != config.particles {
        return Err(Error::UnequalSupport(config.particles, ids.len()));
    }
    let steps = config.steps();
    let m = config.substeps as usize;
    let dim = config.dim();
    let noise = NoiseTable::generate(
        &config.noise,
        config.cell_length(),
        config.seed,
        ids,
        steps * m,
    );
    let init = sample_initial(&config.init, dim, config.seed, ids);
    let run = Run {
        drift: &config.drift,
        particles: config.particles,
        delta: config.delta,
        cells_per_step: m,
        steps,
        flow,
    };
    let rec = run.execute(&init, &noise, true, |_, _| {});
    Ok(LatticePath::from_recorded(
        rec,
        dim,
        config.particles,
        config.delta,
        m,
    ))
}

/// Interacting particle system; particle `i` uses stream id `i`.
pub fn simulate_interacting(config: &SystemConfig) -> Result<LatticePath> {
    build_path(config, &config.default_ids(), MeasureFlow::Interacting)
}

/// Interacting system whose slot `i` uses stream id `ids[i]` for both its
/// initial state and its noise.
pub fn simulate_interacting_with_ids(config: &SystemConfig, ids: &[u64]) -> Result<LatticePath> {
    build_path(config, ids, MeasureFlow::Interacting)
}

/// Particles driven against an external measure flow, one measure per
/// lattice time, without interacting with each other.
pub fn simulate_frozen_flow(
    config: &SystemConfig,
    flow: &[EmpiricalMeasure],
) -> Result<LatticePath> {
    let expected = config.steps() + 1;
    if flow.len() != expected {
        return Err(Error::param(
            "flow",
            format!(
                "need one measure per lattice time ({expected}), got {}",
                flow.len()
            ),
        ));
    }
    if let Some(bad) = flow.iter().find(|m| m.dim() != config.dim()) {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            got: bad.dim(),
        });
    }
    build_path(config, &config.default_ids(), MeasureFlow::Frozen(flow))
}

/// Two runs driven by the same Lévy path and the same initial states: the
/// coarse one with step `δ` and the fine one with step `δ / factor`.
pub fn coupled_refinement(
    config: &SystemConfig,
    factor: u32,
) -> Result<(LatticePath, LatticePath)> {
    if factor < 2 {
        return Err(Error::param(
            "factor",
            format!("refinement factor must be >= 2, got {factor}"),
        ));
    }
    config.validate()?;
    let steps = config.steps();
    let m = config.substeps as usize;
    let f = factor as usize;
    let dim = config.dim();
    let ids = config.default_ids();
    let h = config.delta / (f * m) as f64;
    let noise = NoiseTable::generate(&config.noise, h, config.seed, &ids, steps * f * m);
    let init = sample_initial(&config.init, dim, config.seed, &ids);

    let coarse_run = Run {
        drift: &config.drift,
        particles: config.particles,
        delta: config.delta,
        cells_per_step: f * m,
        steps,
        flow: MeasureFlow::Interacting,
    };
    let fine_delta = config.delta / factor as f64;
    let fine_run = Run {
        delta: fine_delta,
        cells_per_step: m,
        steps: steps * f,
        ..coarse_run
    };
    let coarse = coarse_run.execute(&init, &noise, true, |_, _| {});
    let fine = fine_run.execute(&init, &noise, true, |_, _| {});
    Ok((
        LatticePath::from_recorded(coarse, dim, config.particles, config.delta, f * m),
        LatticePath::from_recorded(fine, dim, config.particles, fine_delta, m),
    ))
}
