//! Empirical convergence studies.
//!
//! Every study measures a coupled pathwise error on a grid (step sizes,
//! particle counts or mollification levels), aggregates replications with a
//! median of means, fits a log-log slope and compares it with a one- or
//! two-sided band around the theoretical rate. Reference solutions are the
//! finest coupled run available; the rates being probed are upper bounds, so
//! bands are generous on the fast side.
//!
//! Reports are pure functions of the configuration and seed: replications
//! run in parallel but are collected and summed in a fixed order.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::drift::{mollify_drift, DriftKind, DriftSpec, MOLLIFIER_MAX_DIM};
use crate::empirical::{
    transport_cost, transport_cost_1d, EmpiricalMeasure, DEFAULT_ASSIGNMENT_CAP,
};
use crate::integrator::{sample_initial, InitialLaw, MeasureFlow, NoiseTable, Run, SystemConfig};
use crate::noise::mix_seed;
use crate::stats::{median_of_means, pairwise_sum, sample_std};
use crate::{Error, Result};

pub use crate::stats::{fit_loglog_slope, SlopeFit};

/// Replications are split into this many groups for the median of means.
pub const MEDIAN_OF_MEANS_GROUPS: usize = 8;
/// Default slack below the theoretical step-size rate.
pub const STEPSIZE_SLACK: f64 = 0.15;
/// Half-width of the band around the increment-moment rate.
pub const MOMENT_SLACK: f64 = 0.15;
/// Half-width of the band around the empirical-measure rate.
pub const EMPRATE_SLACK: f64 = 0.1;
/// Default upper bound on the propagation-of-chaos slope.
pub const CHAOS_SLOPE_MAX: f64 = -0.3;
/// Allowed relative increase between consecutive mollification levels.
pub const MOLLIFY_STEP_SLACK: f64 = 0.10;
/// Required reduction from the first to the last mollification level.
pub const MOLLIFY_TERMINAL_RATIO: f64 = 0.5;
/// Errors at or below this level count as numerically zero.
pub const NEGLIGIBLE_ERROR: f64 = 1e-9;
/// Default reference refinement below the finest step of a step-size grid.
pub const DEFAULT_REFINEMENT: u32 = 4;
/// Default proxy size multiplier for the empirical-measure study.
pub const DEFAULT_PROXY_FACTOR: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StudyKind {
    #[serde(rename = "study-dt")]
    StepSize,
    #[serde(rename = "study-n")]
    Chaos,
    #[serde(rename = "study-moment")]
    Moment,
    #[serde(rename = "study-emprate")]
    EmpiricalRate,
    #[serde(rename = "study-mollify")]
    Mollification,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::StepSize => "study-dt",
            StudyKind::Chaos => "study-n",
            StudyKind::Moment => "study-moment",
            StudyKind::EmpiricalRate => "study-emprate",
            StudyKind::Mollification => "study-mollify",
        }
    }
}

/// Closed acceptance interval for a slope; `None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Band {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v <= hi)
    }
}

/// Which term of the particle-count rate dominates, by comparing `p` with
/// `d / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p > d/2`: `N^{-1/2} + N^{p/q-1}`.
    AboveHalfDim,
    /// `p = d/2`: `N^{-1/2} log(1+N) + N^{p/q-1}`.
    HalfDim,
    /// `p < d/2`: `N^{-2/d} + N^{p/q-1}`.
    BelowHalfDim,
}

impl Regime {
    pub fn of(p: f64, dim: usize) -> Self {
        let half = dim as f64 / 2.0;
        if p > half {
            Regime::AboveHalfDim
        } else if p == half {
            Regime::HalfDim
        } else {
            Regime::BelowHalfDim
        }
    }
}

/// Slowest-decaying exponent of the particle-count bound (log factors
/// dropped).
pub fn particle_rate(p: f64, q: f64, dim: usize) -> f64 {
    let moment_term = p / q - 1.0;
    match Regime::of(p, dim) {
        Regime::AboveHalfDim | Regime::HalfDim => moment_term.max(-0.5),
        Regime::BelowHalfDim => moment_term.max(-2.0 / dim as f64),
    }
}

/// Rejects the boundary moments excluded from the rate table: `q = 2p`
/// when `p >= d/2`, `q = d/(d-p)` when `p < d/2`.
pub fn check_rate_moment(p: f64, q: f64, dim: usize) -> Result<()> {
    let excluded = match Regime::of(p, dim) {
        Regime::BelowHalfDim => dim as f64 / (dim as f64 - p),
        _ => 2.0 * p,
    };
    if (q - excluded).abs() <= 1e-12 * excluded.abs().max(1.0) {
        return Err(Error::param(
            "moment_q",
            format!("q = {q} is a boundary case of the rate table and has no stated rate"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub base: SystemConfig,
    /// Step sizes, particle counts or mollification levels.
    pub grid: Vec<f64>,
    pub error_p: f64,
    /// Defaults to `(p + α) / 2`.
    pub moment_q: Option<f64>,
    pub replications: usize,
    /// Step-size studies: the reference step is the finest grid step divided
    /// by this factor.
    pub refinement: u32,
    /// Chaos studies: reference system size, default four times the largest
    /// grid value.
    pub reference_particles: Option<usize>,
    /// Overrides the study's default acceptance band.
    pub band: Option<Band>,
}

impl StudyConfig {
    pub fn new(base: SystemConfig, grid: Vec<f64>, error_p: f64, replications: usize) -> Self {
        StudyConfig {
            base,
            grid,
            error_p,
            moment_q: None,
            replications,
            refinement: DEFAULT_REFINEMENT,
            reference_particles: None,
            band: None,
        }
    }

    pub fn moment_q(&self) -> f64 {
        self.moment_q
            .unwrap_or((self.error_p + self.base.noise.alpha) / 2.0)
    }

    /// Checks shared by every study: system validity, `κ <= p < q < α`,
    /// replications and grid monotonicity.
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let p = self.error_p;
        let alpha = self.base.noise.alpha;
        if !(p >= self.base.drift.kappa && p < alpha) {
            return Err(Error::param(
                "error_p",
                format!(
                    "need kappa = {} <= p < alpha = {alpha}, got {p}",
                    self.base.drift.kappa
                ),
            ));
        }
        let q = self.moment_q();
        if !(q > p && q < alpha) {
            return Err(Error::param(
                "moment_q",
                format!("need p < q < alpha, got {q}"),
            ));
        }
        if self.replications == 0 {
            return Err(Error::param("replications", "must be at least 1"));
        }
        check_strictly_monotone(&self.grid)
    }

    fn echo(&self) -> Value {
        json!({
            "system": describe_system(&self.base),
            "grid": self.grid,
            "error_p": self.error_p,
            "moment_q": self.moment_q(),
            "replications": self.replications,
            "refinement": self.refinement,
            "reference_particles": self.reference_particles,
        })
    }
}

fn check_strictly_monotone(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::InvalidGrid(format!(
            "need at least 3 grid points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidGrid("grid values must be positive".into()));
    }
    let up = grid.windows(2).all(|w| w[1] > w[0]);
    let down = grid.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) {
        return Err(Error::InvalidGrid("grid must be strictly monotone".into()));
    }
    Ok(())
}

fn integer_grid(grid: &[f64], name: &str) -> Result<Vec<usize>> {
    grid.iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidGrid(format!(
                    "{name} must be positive integers, got {v}"
                )))
            }
        })
        .collect()
}

pub fn describe_drift(drift: &DriftSpec) -> Value {
    let (kind, n) = match &drift.kind {
        DriftKind::Zero => ("zero", None),
        DriftKind::HolderMean => ("holder_mean", None),
        DriftKind::Mollified { base, n, .. } => match base.kind {
            DriftKind::Zero => ("zero", Some(*n)),
            _ => ("holder_mean", Some(*n)),
        },
    };
    json!({
        "kind": kind,
        "a": drift.holder_amp,
        "c": drift.interaction_amp,
        "beta": drift.beta,
        "kappa": drift.kappa,
        "bound_cap": drift.bound_cap,
        "mollify_n": n,
    })
}

pub fn describe_system(cfg: &SystemConfig) -> Value {
    json!({
        "particles": cfg.particles,
        "delta": cfg.delta,
        "horizon": cfg.horizon,
        "adjusted_horizon": cfg.adjusted_horizon(),
        "substeps": cfg.substeps,
        "seed": cfg.seed,
        "noise": cfg.noise,
        "drift": describe_drift(&cfg.drift),
        "init": cfg.init,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub value: f64,
    pub error: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study: StudyKind,
    pub grid_label: String,
    pub points: Vec<GridPoint>,
    pub fit: Option<SlopeFit>,
    /// `slope ± 2 stderr`.
    pub confidence: Option<[f64; 2]>,
    pub theoretical_slope: Option<f64>,
    pub regime: Option<Regime>,
    pub band: Band,
    pub verdict: Verdict,
    pub degenerate: bool,
    pub diagnostics: Vec<String>,
    pub error_p: f64,
    pub moment_q: Option<f64>,
    pub replications: usize,
    pub seed: u64,
    pub config: Value,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn errors(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.error).collect()
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    /// Plot-ready `grid_value,error,stderr` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid_value,error,stderr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.value, p.error, p.stderr));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Per-grid-point estimate from per-replication values.
fn aggregate(grid: &[f64], per_rep: &[Vec<f64>]) -> Vec<GridPoint> {
    grid.iter()
        .enumerate()
        .map(|(g, &value)| {
            let vals: Vec<f64> = per_rep.iter().map(|r| r[g]).collect();
            GridPoint {
                value,
                error: median_of_means(&vals, MEDIAN_OF_MEANS_GROUPS),
                stderr: sample_std(&vals) / (vals.len() as f64).sqrt(),
            }
        })
        .collect()
}

struct Draft {
    study: StudyKind,
    grid_label: &'static str,
    points: Vec<GridPoint>,
    theoretical_slope: Option<f64>,
    regime: Option<Regime>,
    band: Band,
    error_p: f64,
    moment_q: Option<f64>,
    replications: usize,
    seed: u64,
    config: Value,
}

impl Draft {
    /// Degenerate short-circuit, slope fit and band check. `extra` adds
    /// study-specific pass conditions, evaluated on non-degenerate grids.
    fn finish(
        self,
        gate_slope: bool,
        extra: impl FnOnce(&[GridPoint], &mut Vec<String>) -> bool,
    ) -> StudyReport {
        let mut diagnostics = Vec::new();
        let degenerate = self.points.iter().all(|p| p.error == 0.0);
        let (fit, verdict) = if degenerate {
            diagnostics.push("all errors are zero; slope undefined".to_string());
            (None, Verdict::Pass)
        } else {
            let xs: Vec<f64> = self.points.iter().map(|p| p.value).collect();
            let ys: Vec<f64> = self.points.iter().map(|p| p.error).collect();
            let fit = match fit_loglog_slope(&xs, &ys) {
                Ok(f) => Some(f),
                Err(e) => {
                    diagnostics.push(format!("slope fit failed: {e}"));
                    None
                }
            };
            let mut ok = extra(&self.points, &mut diagnostics);
            if gate_slope {
                match fit {
                    Some(f) if self.band.contains(f.slope) => {}
                    Some(f) => {
                        diagnostics
                            .push(format!("slope {:.4} outside band {:?}", f.slope, self.band));
                        ok = false;
                    }
                    None => ok = false,
                }
            }
            (fit, if ok { Verdict::Pass } else { Verdict::Fail })
        };
        StudyReport {
            study: self.study,
            grid_label: self.grid_label.to_string(),
            points: self.points,
            fit,
            confidence: fit.map(|f| [f.slope - 2.0 * f.stderr, f.slope + 2.0 * f.stderr]),
            theoretical_slope: self.theoretical_slope,
            regime: self.regime,
            band: self.band,
            verdict,
            degenerate,
            diagnostics,
            error_p: self.error_p,
            moment_q: self.moment_q,
            replications: self.replications,
            seed: self.seed,
            config: self.config,
        }
    }
}

/// Running per-particle maximum of `|x_i - reference_i|` over cells.
struct SupTracker<'a> {
    reference: &'a [Vec<f64>],
    dim: usize,
    max: Vec<f64>,
}

impl<'a> SupTracker<'a> {
    fn new(reference: &'a [Vec<f64>], dim: usize, particles: usize) -> Self {
        SupTracker {
            reference,
            dim,
            max: vec![0.0; particles],
        }
    }

    fn observe(&mut self, cell: usize, states: &[f64]) {
        let r = &self.reference[cell];
        for (i, (x, y)) in states
            .chunks_exact(self.dim)
            .zip(r.chunks_exact(self.dim))
            .enumerate()
        {
            let d = if self.dim == 1 {
                (x[0] - y[0]).abs()
            } else {
                x.iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            };
            if d > self.max[i] {
                self.max[i] = d;
            }
        }
    }

    /// `(1/N) Σ_i (sup_t |X^i_t - Y^i_t|)^p`.
    fn mean_power(&self, p: f64) -> f64 {
        let pw: Vec<f64> = self.max.iter().map(|m| m.powf(p)).collect();
        pairwise_sum(&pw) / pw.len() as f64
    }
}

/// Runs `run` with cell-level recording of every state.
fn record_cells(run: &Run<'_>, init: &[f64], noise: &NoiseTable) -> Vec<Vec<f64>> {
    let mut cells = Vec::with_capacity(run.steps * run.cells_per_step + 1);
    run.execute(init, noise, false, |_, s| cells.push(s.to_vec()));
    cells
}

/// Strong error of the step-size grid against a finer coupled reference.
pub fn stepsize_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    if cfg.refinement < 2 {
        return Err(Error::param(
            "refinement",
            "reference refinement must be >= 2",
        ));
    }
    let base = &cfg.base;
    let d_min = cfg.grid.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = cfg.grid.iter().copied().fold(0.0, f64::max);
    if d_max >= crate::integrator::MAX_STEP {
        return Err(Error::InvalidGrid(format!("step {d_max} is not below 1/e")));
    }
    let h = d_min / f64::from(cfg.refinement);
    let ratios = cfg
        .grid
        .iter()
        .map(|&d| {
            let r = d / h;
            let k = r.round();
            if (r - k).abs() > 1e-9 * r {
                Err(Error::InvalidGrid(format!(
                    "step {d} is not an integer multiple of the reference step {h}"
                )))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    let coarse_steps = ((base.horizon / d_max).round() as usize).max(1);
    let k_max = *ratios.iter().max().expect("nonempty grid");
    let cells = coarse_steps * k_max;
    let dim = base.dim();
    let n = base.particles;
    let p = cfg.error_p;
    let ids: Vec<u64> = (0..n as u64).collect();

    let per_rep: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = mix_seed(base.seed, r as u64);
            let noise = NoiseTable::generate(&base.noise, h, seed, &ids, cells);
            let init = sample_initial(&base.init, dim, seed, &ids);
            let reference = Run {
                drift: &base.drift,
                particles: n,
                delta: h,
                cells_per_step: 1,
                steps: cells,
                flow: MeasureFlow::Interacting,
            };
            let ref_cells = record_cells(&reference, &init, &noise);
            ratios
                .iter()
                .zip(&cfg.grid)
                .map(|(&k, &delta)| {
                    let run = Run {
                        delta,
                        cells_per_step: k,
                        steps: cells / k,
                        ..reference
                    };
                    let mut tracker = SupTracker::new(&ref_cells, dim, n);
                    run.execute(&init, &noise, false, |c, s| tracker.observe(c, s));
                    tracker.mean_power(p)
                })
                .collect()
        })
        .collect();

    let theory = p * base.drift.beta / base.noise.alpha;
    let band = cfg.band.unwrap_or(Band {
        lo: Some(theory - STEPSIZE_SLACK),
        hi: None,
    });
    let mut config = cfg.echo();
    config["reference_delta"] = json!(h);
    config["lattice_horizon"] = json!(coarse_steps as f64 * d_max);
    let draft = Draft {
        study: StudyKind::StepSize,
        grid_label: "delta",
        points: aggregate(&cfg.grid, &per_rep),
        theoretical_slope: Some(theory),
        regime: None,
        band,
        error_p: p,
        moment_q: Some(cfg.moment_q()),
        replications: cfg.replications,
        seed: base.seed,
        config,
    };
    Ok(draft.finish(true, |points, diag| {
        let at = |v: f64| points.iter().find(|q| q.value == v).expect("grid value").error;
        let (coarse, fine) = (at(d_max), at(d_min));
        if coarse > fine {
            true
        } else {
            diag.push(format!(
                "error at the largest step ({coarse:e}) does not exceed the error at the smallest ({fine:e})"
            ));
            false
        }
    }))
}

/// Mean over the first `n` particles of `sup_t |X^{i,n}_t - X^{i,n_ref}_t|^p`
/// for one noise realisation keyed by `seed`.
pub fn chaos_error(base: &SystemConfig, n: usize, n_ref: usize, p: f64, seed: u64) -> Result<f64> {
    base.validate()?;
    if n == 0 || n > n_ref {
        return Err(Error::param(
            "particles",
            format!("need 1 <= n <= n_ref, got {n} and {n_ref}"),
        ));
    }
    Ok(chaos_errors(base, &[n], n_ref, p, seed)[0])
}

fn chaos_errors(base: &SystemConfig, sizes: &[usize], n_ref: usize, p: f64, seed: u64) -> Vec<f64> {
    let dim = base.dim();
    let m = base.substeps as usize;
    let steps = base.steps();
    let ids: Vec<u64> = (0..n_ref as u64).collect();
    let noise = NoiseTable::generate(&base.noise, base.cell_length(), seed, &ids, steps * m);
    let init = sample_initial(&base.init, dim, seed, &ids);
    let reference = Run {
        drift: &base.drift,
        particles: n_ref,
        delta: base.delta,
        cells_per_step: m,
        steps,
        flow: MeasureFlow::Interacting,
    };
    let ref_cells = record_cells(&reference, &init, &noise);
    sizes
        .iter()
        .map(|&n| {
            let run = Run {
                particles: n,
                ..reference
            };
            let truncated: Vec<Vec<f64>> =
                ref_cells.iter().map(|c| c[..n * dim].to_vec()).collect();
            let mut tracker = SupTracker::new(&truncated, dim, n);
            run.execute(&init[..n * dim], &noise, false, |c, s| {
                tracker.observe(c, s)
            });
            tracker.mean_power(p)
        })
        .collect()
}

/// Propagation of chaos: N-particle systems coupled to the first N
/// particles of a larger reference system.
pub fn chaos_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let base = &cfg.base;
    let sizes = integer_grid(&cfg.grid, "particle counts")?;
    let largest = *sizes.iter().max().expect("nonempty grid");
    let n_ref = cfg.reference_particles.unwrap_or(4 * largest);
    if sizes.contains(&n_ref) {
        return Err(Error::InvalidGrid(format!(
            "reference size {n_ref} appears in the grid"
        )));
    }
    if n_ref < 4 * largest {
        return Err(Error::InvalidGrid(format!(
            "reference size {n_ref} is below four times the largest grid size {largest}"
        )));
    }
    let p = cfg.error_p;
    let q = cfg.moment_q();
    let dim = base.dim();
    check_rate_moment(p, q, dim)?;

    let per_rep: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| chaos_errors(base, &sizes, n_ref, p, mix_seed(base.seed, r as u64)))
        .collect();

    let regime = Regime::of(p, dim);
    let band = cfg.band.unwrap_or(Band {
        lo: None,
        hi: Some(CHAOS_SLOPE_MAX),
    });
    let mut config = cfg.echo();
    config["reference_particles"] = json!(n_ref);
    let draft = Draft {
        study: StudyKind::Chaos,
        grid_label: "particles",
        points: aggregate(&cfg.grid, &per_rep),
        theoretical_slope: Some(particle_rate(p, q, dim)),
        regime: Some(regime),
        band,
        error_p: p,
        moment_q: Some(q),
        replications: cfg.replications,
        seed: base.seed,
        config,
    };
    let gated = regime != Regime::HalfDim;
    let mut report = draft.finish(gated, |_, _| true);
    if !gated {
        report
            .diagnostics
            .push("p = d/2 carries a log factor; slope reported but not gated".into());
    }
    Ok(report)
}

/// Mean of `|X_{(k+1)δ-} - X_{kδ}|^p` over particles and steps, on each
/// step size of the grid.
pub fn moment_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let base = &cfg.base;
    if cfg.grid.iter().any(|&d| d >= crate::integrator::MAX_STEP) {
        return Err(Error::InvalidGrid("steps must lie below 1/e".into()));
    }
    let dim = base.dim();
    let n = base.particles;
    let p = cfg.error_p;
    let ids: Vec<u64> = (0..n as u64).collect();

    let per_rep: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = mix_seed(base.seed, r as u64);
            let init = sample_initial(&base.init, dim, seed, &ids);
            cfg.grid
                .iter()
                .enumerate()
                .map(|(g, &delta)| {
                    let steps = ((base.horizon / delta).round() as usize).max(1);
                    let noise_seed = mix_seed(seed, 0x5EED_0000 + g as u64);
                    let noise = NoiseTable::generate(&base.noise, delta, noise_seed, &ids, steps);
                    let run = Run {
                        drift: &base.drift,
                        particles: n,
                        delta,
                        cells_per_step: 1,
                        steps,
                        flow: MeasureFlow::Interacting,
                    };
                    let mut previous: Option<Vec<f64>> = None;
                    let mut step_means = Vec::with_capacity(steps);
                    run.execute(&init, &noise, false, |_, s| {
                        if let Some(prev) = &previous {
                            let terms: Vec<f64> = s
                                .chunks_exact(dim)
                                .zip(prev.chunks_exact(dim))
                                .map(|(x, y)| {
                                    let d2: f64 =
                                        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                                    d2.sqrt().powf(p)
                                })
                                .collect();
                            step_means.push(pairwise_sum(&terms) / n as f64);
                        }
                        previous = Some(s.to_vec());
                    });
                    pairwise_sum(&step_means) / steps as f64
                })
                .collect()
        })
        .collect();

    let theory = p / base.noise.alpha;
    let band = cfg.band.unwrap_or(Band {
        lo: Some(theory - MOMENT_SLACK),
        hi: Some(theory + MOMENT_SLACK),
    });
    let draft = Draft {
        study: StudyKind::Moment,
        grid_label: "delta",
        points: aggregate(&cfg.grid, &per_rep),
        theoretical_slope: Some(theory),
        regime: None,
        band,
        error_p: p,
        moment_q: None,
        replications: cfg.replications,
        seed: base.seed,
        config: cfg.echo(),
    };
    Ok(draft.finish(true, |_, _| true))
}

/// Coupled error between runs under `b^n` and under `b` itself.
pub fn mollification_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let base = &cfg.base;
    if matches!(base.drift.kind, DriftKind::Mollified { .. }) {
        return Err(Error::AlreadyMollified);
    }
    if base.dim() > MOLLIFIER_MAX_DIM {
        return Err(Error::param(
            "dim",
            format!(
                "mollified drifts support dim <= {MOLLIFIER_MAX_DIM}, got {}",
                base.dim()
            ),
        ));
    }
    let levels = integer_grid(&cfg.grid, "mollification levels")?;
    let drifts = levels
        .iter()
        .map(|&n| mollify_drift(&base.drift, n as u32))
        .collect::<Result<Vec<_>>>()?;
    let dim = base.dim();
    let n = base.particles;
    let m = base.substeps as usize;
    let steps = base.steps();
    let p = cfg.error_p;
    let ids: Vec<u64> = (0..n as u64).collect();

    let per_rep: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = mix_seed(base.seed, r as u64);
            let noise =
                NoiseTable::generate(&base.noise, base.cell_length(), seed, &ids, steps * m);
            let init = sample_initial(&base.init, dim, seed, &ids);
            let reference = Run {
                drift: &base.drift,
                particles: n,
                delta: base.delta,
                cells_per_step: m,
                steps,
                flow: MeasureFlow::Interacting,
            };
            let ref_cells = record_cells(&reference, &init, &noise);
            drifts
                .iter()
                .map(|drift| {
                    let run = Run { drift, ..reference };
                    let mut tracker = SupTracker::new(&ref_cells, dim, n);
                    run.execute(&init, &noise, false, |c, s| tracker.observe(c, s));
                    tracker.mean_power(p)
                })
                .collect()
        })
        .collect();

    let band = cfg.band.unwrap_or_default();
    let draft = Draft {
        study: StudyKind::Mollification,
        grid_label: "mollify_n",
        points: aggregate(&cfg.grid, &per_rep),
        theoretical_slope: Some(-base.drift.beta),
        regime: None,
        band,
        error_p: p,
        moment_q: None,
        replications: cfg.replications,
        seed: base.seed,
        config: cfg.echo(),
    };
    let mut report = draft.finish(cfg.band.is_some(), |points, diag| {
        let mut ordered = points.to_vec();
        ordered.sort_by(|a, b| a.value.total_cmp(&b.value));
        let errors: Vec<f64> = ordered.iter().map(|p| p.error).collect();
        if errors.iter().all(|&e| e <= NEGLIGIBLE_ERROR) {
            diag.push("all errors are numerically negligible".into());
            return true;
        }
        let mut ok = true;
        for (w, pair) in errors.windows(2).zip(ordered.windows(2)) {
            if w[1] > (1.0 + MOLLIFY_STEP_SLACK) * w[0] {
                diag.push(format!(
                    "error grows from n = {} ({:e}) to n = {} ({:e})",
                    pair[0].value, w[0], pair[1].value, w[1]
                ));
                ok = false;
            }
        }
        let (first, last) = (errors[0], errors[errors.len() - 1]);
        if last > MOLLIFY_TERMINAL_RATIO * first {
            diag.push(format!(
                "terminal error {last:e} exceeds half of the initial {first:e}"
            ));
            ok = false;
        }
        ok
    });
    if report.degenerate {
        report.fit = None;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct EmpiricalRateConfig {
    pub law: InitialLaw,
    pub dim: usize,
    /// Sample sizes.
    pub grid: Vec<f64>,
    pub p: f64,
    /// Moment order for the rate table; defaults to `4p`.
    pub q: Option<f64>,
    pub replications: usize,
    pub seed: u64,
    /// One-dimensional proxy size as a multiple of the largest sample size.
    pub proxy_factor: usize,
    pub band: Option<Band>,
}

impl EmpiricalRateConfig {
    pub fn q(&self) -> f64 {
        self.q.unwrap_or(4.0 * self.p)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Sample sizes and proxy size.
    fn plan(&self) -> Result<(Vec<usize>, usize)> {
        self.law.validate(self.dim)?;
        if !(self.p > 0.0) {
            return Err(Error::param("p", "must be positive"));
        }
        let q = self.q();
        if !(q > self.p) {
            return Err(Error::param("moment_q", format!("need q > p, got {q}")));
        }
        if matches!(self.law, InitialLaw::Stable { .. }) || !self.law.has_finite_moment(q) {
            return Err(Error::param(
                "law",
                format!("the initial law needs finite moments of every order (q = {q}); use a point mass, Gaussian or uniform law"),
            ));
        }
        check_rate_moment(self.p, q, self.dim)?;
        if self.replications == 0 {
            return Err(Error::param("replications", "must be at least 1"));
        }
        check_strictly_monotone(&self.grid)?;
        let sizes = integer_grid(&self.grid, "sample sizes")?;
        let largest = *sizes.iter().max().expect("nonempty grid");
        let n_ref = if self.dim == 1 {
            largest * self.proxy_factor.max(1)
        } else {
            largest
        };
        if let Some(bad) = sizes.iter().find(|&&n| n_ref % n != 0) {
            return Err(Error::InvalidGrid(format!(
                "sample size {bad} does not divide the proxy size {n_ref}"
            )));
        }
        Ok((sizes, n_ref))
    }
}

/// `E W_p(μ_N, μ)^p` for i.i.d. samples, with `μ` replaced by a large
/// independent sample of the same law.
///
/// The size-`N` empirical measure is represented on the proxy's support size
/// by repeating each atom `N_ref / N` times, so both measures have the same
/// number of equally weighted atoms.
pub fn empirical_rate_study(cfg: &EmpiricalRateConfig) -> Result<StudyReport> {
    let (sizes, n_ref) = cfg.plan()?;
    let q = cfg.q();
    let dim = cfg.dim;
    let p = cfg.p;

    let per_rep: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = mix_seed(cfg.seed, r as u64);
            let proxy_ids: Vec<u64> = (0..n_ref as u64).collect();
            let proxy = sample_initial(&cfg.law, dim, mix_seed(seed, 1), &proxy_ids);
            let proxy = EmpiricalMeasure::new(dim, proxy)?;
            sizes
                .iter()
                .map(|&n| {
                    let ids: Vec<u64> = (0..n as u64).collect();
                    let sample = sample_initial(&cfg.law, dim, mix_seed(seed, 2 + n as u64), &ids);
                    let repeat = n_ref / n;
                    let mut lifted = Vec::with_capacity(n_ref * dim);
                    for x in sample.chunks_exact(dim) {
                        for _ in 0..repeat {
                            lifted.extend_from_slice(x);
                        }
                    }
                    let lifted = EmpiricalMeasure::new(dim, lifted)?;
                    if dim == 1 {
                        transport_cost_1d(p, &lifted, &proxy)
                    } else {
                        transport_cost(p, &lifted, &proxy, DEFAULT_ASSIGNMENT_CAP)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let regime = Regime::of(p, dim);
    let theory = particle_rate(p, q, dim);
    let band = cfg.band.unwrap_or(Band {
        lo: Some(theory - EMPRATE_SLACK),
        hi: Some(theory + EMPRATE_SLACK),
    });
    let config = json!({
        "law": cfg.law,
        "dim": dim,
        "grid": cfg.grid,
        "p": p,
        "moment_q": q,
        "replications": cfg.replications,
        "seed": cfg.seed,
        "proxy_size": n_ref,
    });
    let draft = Draft {
        study: StudyKind::EmpiricalRate,
        grid_label: "particles",
        points: aggregate(&cfg.grid, &per_rep),
        theoretical_slope: Some(theory),
        regime: Some(regime),
        band,
        error_p: p,
        moment_q: Some(q),
        replications: cfg.replications,
        seed: cfg.seed,
        config,
    };
    Ok(draft.finish(regime != Regime::HalfDim, |_, _| true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::StableParams;

    fn base(drift: DriftSpec, particles: usize) -> SystemConfig {
        let dim = drift.dim;
        SystemConfig {
            particles,
            delta: 0.0625,
            horizon: 0.5,
            substeps: 1,
            drift,
            noise: StableParams::isotropic(dim, 1.5).unwrap(),
            init: InitialLaw::Gaussian { mean: 0.0, sd: 1.0 },
            seed: 3,
        }
    }

    #[test]
    fn rate_table() {
        assert_eq!(Regime::of(1.0, 1), Regime::AboveHalfDim);
        assert_eq!(Regime::of(1.0, 2), Regime::HalfDim);
        assert_eq!(Regime::of(1.0, 3), Regime::BelowHalfDim);
        assert!((particle_rate(1.0, 1.4, 1) - (1.0 / 1.4 - 1.0)).abs() < 1e-15);
        assert_eq!(particle_rate(1.0, 4.0, 1), -0.5);
        assert!(check_rate_moment(1.0, 2.0, 1).is_err());
        assert!(check_rate_moment(1.0, 1.5, 3).is_err());
        assert!(check_rate_moment(1.0, 1.4, 1).is_ok());
    }

    #[test]
    fn band_membership() {
        let b = Band {
            lo: Some(0.35),
            hi: None,
        };
        assert!(b.contains(0.35) && b.contains(9.0) && !b.contains(0.3));
        assert!(Band::default().contains(-1e9));
    }

    #[test]
    fn zero_drift_stepsize_is_degenerate_pass() {
        let cfg = StudyConfig::new(
            base(DriftSpec::zero(1), 8),
            vec![0.125, 0.0625, 0.03125],
            1.0,
            2,
        );
        let report = stepsize_study(&cfg).unwrap();
        assert!(report.degenerate && report.passed());
        assert!(report.errors().iter().all(|&e| e == 0.0));
        assert!(report.fit.is_none());
    }

    #[test]
    fn stepsize_rejects_non_nested_grid() {
        let drift = DriftSpec::holder_mean(1, 0.75, 1.0, 0.0).unwrap();
        let mut cfg = StudyConfig::new(base(drift, 4), vec![0.1, 0.0625, 0.03125], 1.0, 1);
        assert!(matches!(stepsize_study(&cfg), Err(Error::InvalidGrid(_))));
        cfg.grid = vec![0.125, 0.0625, 0.0625];
        assert!(matches!(stepsize_study(&cfg), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn study_rejects_bad_moments() {
        let drift = DriftSpec::holder_mean(1, 0.75, 1.0, 0.0).unwrap();
        let mut cfg = StudyConfig::new(base(drift, 4), vec![0.125, 0.0625, 0.03125], 1.6, 1);
        assert!(stepsize_study(&cfg).is_err());
        cfg.error_p = 1.0;
        cfg.moment_q = Some(0.9);
        assert!(stepsize_study(&cfg).is_err());
    }

    #[test]
    fn chaos_error_vanishes_at_reference_size() {
        let b = base(DriftSpec::holder_mean(1, 0.75, 1.0, 1.0).unwrap(), 1);
        assert_eq!(chaos_error(&b, 32, 32, 1.0, 5).unwrap(), 0.0);
        assert!(chaos_error(&b, 8, 32, 1.0, 5).unwrap() > 0.0);
    }

    #[test]
    fn chaos_rejects_reference_in_grid() {
        let b = base(DriftSpec::holder_mean(1, 0.75, 1.0, 1.0).unwrap(), 1);
        let mut cfg = StudyConfig::new(b, vec![4.0, 8.0, 32.0], 1.0, 1);
        cfg.reference_particles = Some(32);
        assert!(matches!(chaos_study(&cfg), Err(Error::InvalidGrid(_))));
        cfg.reference_particles = Some(64);
        assert!(matches!(chaos_study(&cfg), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn point_mass_emprate_is_zero() {
        let cfg = EmpiricalRateConfig {
            law: InitialLaw::PointMass { x0: vec![1.5] },
            dim: 1,
            grid: vec![4.0, 8.0, 16.0],
            p: 1.0,
            q: None,
            replications: 3,
            seed: 1,
            proxy_factor: 4,
            band: None,
        };
        let report = empirical_rate_study(&cfg).unwrap();
        assert!(report.degenerate && report.passed());
    }

    #[test]
    fn emprate_rejects_heavy_tailed_law() {
        let cfg = EmpiricalRateConfig {
            law: InitialLaw::Stable {
                alpha: 1.5,
                scale: 1.0,
            },
            dim: 1,
            grid: vec![4.0, 8.0, 16.0],
            p: 1.0,
            q: Some(1.8),
            replications: 1,
            seed: 1,
            proxy_factor: 4,
            band: None,
        };
        assert!(empirical_rate_study(&cfg).is_err());
    }

    #[test]
    fn mollification_of_zero_drift_is_degenerate() {
        let cfg = StudyConfig::new(base(DriftSpec::zero(1), 8), vec![2.0, 4.0, 8.0], 1.0, 2);
        let report = mollification_study(&cfg).unwrap();
        assert!(report.degenerate && report.passed());
    }

    #[test]
    fn mollification_of_c_only_drift_is_negligible() {
        let drift = DriftSpec::holder_mean(1, 0.75, 0.0, 1.0).unwrap();
        let cfg = StudyConfig::new(base(drift, 16), vec![2.0, 4.0, 8.0], 1.0, 2);
        let report = mollification_study(&cfg).unwrap();
        assert!(report.errors().iter().all(|&e| e <= 1e-5));
        assert!(report.passed(), "{:?}", report.diagnostics);
    }

    #[test]
    fn mollification_rejects_three_dimensions() {
        let drift = DriftSpec::holder_mean(3, 0.75, 1.0, 0.0).unwrap();
        let cfg = StudyConfig::new(base(drift, 4), vec![2.0, 4.0, 8.0], 1.0, 1);
        assert!(mollification_study(&cfg).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cfg = StudyConfig::new(
            base(DriftSpec::zero(1), 2),
            vec![0.125, 0.0625, 0.03125],
            1.0,
            1,
        );
        let csv = stepsize_study(&cfg).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "grid_value,error,stderr");
        assert_eq!(lines[1], "0.125,0,0");
        assert_eq!(lines.len(), 4);
    }
}
