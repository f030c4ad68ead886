//! Bounded drifts `b(x, μ)`: Hölder in `x`, Lipschitz in `μ` for `W_1`.
//!
//! The built-in family is separable. Coordinate `i` of the drift is
//!
//! ```text
//! b_i(x, μ) = a * φ_β(x_i) + c * ∫ tanh(y_i) μ(dy),
//! φ_β(s)    = sign(s) * min(|s|^β, 1),
//! ```
//!
//! so every regularity constant is known in closed form:
//! `|b_i| <= a + c`, `|b(x,μ) - b(y,μ)| <= a 2^{1-β} d^{(1-β)/2} |x-y|^β`
//! and `|b(x,μ) - b(x,ν)| <= c W_1(μ, ν)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::empirical::{wasserstein_exact, EmpiricalMeasure};
use crate::{Error, Result};

/// Midpoint nodes per axis of the mollifier quadrature.
pub const MOLLIFIER_NODES: usize = 129;

/// Highest dimension for which mollified drifts are supported.
pub const MOLLIFIER_MAX_DIM: usize = 2;

#[derive(Debug, Clone)]
pub enum DriftKind {
    Zero,
    HolderMean,
    Mollified {
        base: Box<DriftSpec>,
        n: u32,
        kernel: Arc<MollifierKernel>,
    },
}

#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub dim: usize,
    pub beta: f64,
    pub kappa: f64,
    /// `a`: amplitude of the Hölder kink.
    pub holder_amp: f64,
    /// `c`: amplitude of the mean interaction.
    pub interaction_amp: f64,
    /// Declared bound on every drift coordinate.
    pub bound_cap: f64,
    pub kind: DriftKind,
}

pub fn holder_kink(s: f64, beta: f64) -> f64 {
    s.signum() * s.abs().powf(beta).min(1.0)
}

/// Per-coordinate `∫ tanh(y_i) μ(dy)`, the only functional of the measure the
/// built-in drifts use.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary {
    tanh_means: Vec<f64>,
}

impl MeasureSummary {
    pub fn of(mu: &EmpiricalMeasure) -> Self {
        let tanh_means = (0..mu.dim())
            .map(|i| mu.sorted_mean(|y| y[i].tanh()))
            .collect();
        MeasureSummary { tanh_means }
    }

    /// Summary of the empirical measure of a flat `N x dim` state array.
    pub fn of_states(states: &[f64], dim: usize) -> Self {
        let n = states.len() / dim;
        let tanh_means = (0..dim)
            .map(|i| {
                let mut vals: Vec<f64> = (0..n).map(|j| states[j * dim + i].tanh()).collect();
                vals.sort_by(f64::total_cmp);
                vals.iter().sum::<f64>() / n as f64
            })
            .collect();
        MeasureSummary { tanh_means }
    }

    pub fn tanh_means(&self) -> &[f64] {
        &self.tanh_means
    }
}

impl DriftSpec {
    pub fn zero(dim: usize) -> Self {
        DriftSpec {
            dim,
            beta: 0.75,
            kappa: 1.0,
            holder_amp: 0.0,
            interaction_amp: 0.0,
            bound_cap: 1.0,
            kind: DriftKind::Zero,
        }
    }

    /// Hölder kink plus mean interaction with `κ = 1` and `B = a + c`.
    pub fn holder_mean(
        dim: usize,
        beta: f64,
        holder_amp: f64,
        interaction_amp: f64,
    ) -> Result<Self> {
        let cap = holder_amp + interaction_amp;
        let spec = DriftSpec {
            dim,
            beta,
            kappa: 1.0,
            holder_amp,
            interaction_amp,
            bound_cap: if cap > 0.0 { cap } else { 1.0 },
            kind: DriftKind::HolderMean,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    /// Structural checks that do not involve the noise.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param(
                "beta",
                format!("must lie in (0, 1), got {}", self.beta),
            ));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::param(
                "kappa",
                format!("must be >= 1, got {}", self.kappa),
            ));
        }
        for (name, v) in [("a", self.holder_amp), ("c", self.interaction_amp)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if !(self.bound_cap > 0.0 && self.bound_cap >= self.sup_bound()) {
            return Err(Error::param(
                "bound_cap",
                format!("must be positive and at least a + c = {}", self.sup_bound()),
            ));
        }
        if let DriftKind::Mollified { base, .. } = &self.kind {
            base.validate()?;
        }
        Ok(())
    }

    /// Checks against a noise index: `κ < α` and `2β + α > 2`.
    pub fn validate_with_alpha(&self, alpha: f64) -> Result<()> {
        self.validate()?;
        if self.kappa >= alpha {
            return Err(Error::param(
                "kappa",
                format!("must be below alpha = {alpha}, got {}", self.kappa),
            ));
        }
        if 2.0 * self.beta + alpha <= 2.0 {
            return Err(Error::HolderCondition {
                alpha,
                beta: self.beta,
            });
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            DriftKind::Zero => true,
            DriftKind::HolderMean => false,
            DriftKind::Mollified { base, .. } => base.is_zero(),
        }
    }

    /// Whether the drift reads its measure argument at all.
    pub fn uses_measure(&self) -> bool {
        !self.is_zero() && self.interaction_amp != 0.0
    }

    pub fn holder_constant(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.holder_amp
            * 2f64.powf(1.0 - self.beta)
            * (self.dim as f64).powf((1.0 - self.beta) / 2.0)
    }

    pub fn measure_constant(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.interaction_amp
        }
    }

    /// Bound on each coordinate, `a + c`.
    pub fn sup_bound(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.holder_amp + self.interaction_amp
        }
    }

    pub fn summarize(&self, mu: &EmpiricalMeasure) -> MeasureSummary {
        if self.uses_measure() {
            MeasureSummary::of(mu)
        } else {
            MeasureSummary {
                tanh_means: Vec::new(),
            }
        }
    }

    pub fn summarize_states(&self, states: &[f64]) -> MeasureSummary {
        if self.uses_measure() {
            MeasureSummary::of_states(states, self.dim)
        } else {
            MeasureSummary {
                tanh_means: Vec::new(),
            }
        }
    }

    pub fn eval(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if mu.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: mu.dim(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &self.summarize(mu), &mut out);
        Ok(out)
    }

    /// Drift at `x` against a precomputed measure summary.
    pub fn eval_into(&self, x: &[f64], summary: &MeasureSummary, out: &mut [f64]) {
        match &self.kind {
            DriftKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            DriftKind::HolderMean => {
                let (a, c) = (self.holder_amp, self.interaction_amp);
                for (i, o) in out.iter_mut().enumerate() {
                    let kink = a * holder_kink(x[i], self.beta);
                    *o = if c != 0.0 {
                        kink + c * summary.tanh_means[i]
                    } else {
                        kink
                    };
                }
            }
            DriftKind::Mollified { base, kernel, .. } => {
                kernel.convolve(base, x, summary, out);
            }
        }
    }
}

/// Discrete mollifier `ρ_n(z) = n^d ρ(n z)` with the bump
/// `ρ(z) ∝ exp(-1 / (1 - |z|^2))` on the unit ball, sampled at the midpoints
/// of a `129^d` grid over the support cube and normalised to unit mass.
///
/// Nodes are stored as mirror pairs `±z` around the centre node so that odd
/// integrands cancel exactly.
#[derive(Debug)]
pub struct MollifierKernel {
    dim: usize,
    centre_weight: f64,
    pairs: Vec<([f64; MOLLIFIER_MAX_DIM], f64)>,
}

impl MollifierKernel {
    pub fn new(dim: usize, n: u32) -> Result<Self> {
        if dim == 0 || dim > MOLLIFIER_MAX_DIM {
            return Err(Error::param(
                "dim",
                format!("mollified drifts support dim <= {MOLLIFIER_MAX_DIM}, got {dim}"),
            ));
        }
        if n == 0 {
            return Err(Error::param("n", "mollification level must be >= 1"));
        }
        let m = MOLLIFIER_NODES;
        let total = m.pow(dim as u32);
        let centre = (total - 1) / 2;
        let coord = |k: usize| (2.0 * k as f64 - (m - 1) as f64) / m as f64;
        let node = |idx: usize| {
            let mut z = [0.0; MOLLIFIER_MAX_DIM];
            let mut rest = idx;
            for slot in (0..dim).rev() {
                z[slot] = coord(rest % m);
                rest /= m;
            }
            z
        };
        let bump = |z: &[f64]| {
            let r2: f64 = z.iter().map(|v| v * v).sum();
            if r2 < 1.0 {
                (-1.0 / (1.0 - r2)).exp()
            } else {
                0.0
            }
        };
        let centre_raw = bump(&node(centre)[..dim]);
        let mut pairs = Vec::new();
        for idx in 0..centre {
            let z = node(idx);
            let w = bump(&z[..dim]);
            if w > 0.0 {
                pairs.push((z, w));
            }
        }
        let mass = centre_raw + 2.0 * pairs.iter().map(|(_, w)| w).sum::<f64>();
        let scale = 1.0 / n as f64;
        let pairs = pairs
            .into_iter()
            .map(|(z, w)| (z.map(|v| v * scale), w / mass))
            .collect();
        Ok(MollifierKernel {
            dim,
            centre_weight: centre_raw / mass,
            pairs,
        })
    }

    fn convolve(&self, base: &DriftSpec, x: &[f64], summary: &MeasureSummary, out: &mut [f64]) {
        let d = self.dim;
        let mut shifted = [0.0; MOLLIFIER_MAX_DIM];
        let mut lo = [0.0; MOLLIFIER_MAX_DIM];
        let mut hi = [0.0; MOLLIFIER_MAX_DIM];
        let mut acc = [0.0; MOLLIFIER_MAX_DIM];
        base.eval_into(x, summary, &mut acc[..d]);
        for v in &mut acc[..d] {
            *v *= self.centre_weight;
        }
        for (z, w) in &self.pairs {
            for i in 0..d {
                shifted[i] = x[i] - z[i];
            }
            base.eval_into(&shifted[..d], summary, &mut lo[..d]);
            for i in 0..d {
                shifted[i] = x[i] + z[i];
            }
            base.eval_into(&shifted[..d], summary, &mut hi[..d]);
            for i in 0..d {
                acc[i] += w * (lo[i] + hi[i]);
            }
        }
        out.copy_from_slice(&acc[..d]);
    }
}

/// `b^n(x, μ) = ∫ b(x', μ) ρ_n(x - x') dx'`; the measure argument is passed
/// through untouched.
pub fn mollify_drift(spec: &DriftSpec, n: u32) -> Result<DriftSpec> {
    if matches!(spec.kind, DriftKind::Mollified { .. }) {
        return Err(Error::AlreadyMollified);
    }
    let kernel = MollifierKernel::new(spec.dim, n)?;
    Ok(DriftSpec {
        kind: DriftKind::Mollified {
            base: Box::new(spec.clone()),
            n,
            kernel: Arc::new(kernel),
        },
        ..spec.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub samples: usize,
    pub holder_ratio_max: f64,
    pub measure_ratio_max: f64,
    pub sup_norm: f64,
    pub holder_bound: f64,
    pub measure_bound: f64,
    pub sup_bound: f64,
    pub pass: bool,
}

const ADMISSIBILITY_SLACK: f64 = 1e-9;
const MEASURE_ATOMS: usize = 5;

/// Probes the drift on random inputs and compares the observed Hölder,
/// measure-Lipschitz and sup-norm statistics with the declared constants.
pub fn verify_admissible(
    spec: &DriftSpec,
    sample_count: usize,
    seed: u64,
) -> Result<AdmissibilityReport> {
    if sample_count < 100 {
        return Err(Error::param(
            "sample_count",
            format!("need at least 100 samples, got {sample_count}"),
        ));
    }
    spec.validate()?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = |rng: &mut ChaCha8Rng| {
        let pts: Vec<f64> = (0..MEASURE_ATOMS * d)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        EmpiricalMeasure::new(d, pts).expect("nonempty cloud")
    };

    let mut holder_max: f64 = 0.0;
    let mut measure_max: f64 = 0.0;
    let mut sup: f64 = 0.0;
    for s in 0..sample_count {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Alternate between far pairs and pairs at scales down to 1e-6.
        let y: Vec<f64> = if s % 2 == 0 {
            (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()
        } else {
            let h = 10f64.powf(rng.random_range(-6.0..0.0));
            x.iter()
                .map(|v| v + h * rng.random_range(-1.0..1.0))
                .collect()
        };
        let mu = cloud(&mut rng);
        let nu = if s % 3 == 0 {
            cloud(&mut rng)
        } else {
            let h = 10f64.powf(rng.random_range(-4.0..0.0));
            let pts = mu
                .as_flat()
                .iter()
                .map(|v| v + h * rng.random_range(-1.0..1.0))
                .collect();
            EmpiricalMeasure::new(d, pts)?
        };

        let bx = spec.eval(&x, &mu)?;
        let by = spec.eval(&y, &mu)?;
        let bxn = spec.eval(&x, &nu)?;
        sup = bx.iter().fold(sup, |m, v| m.max(v.abs()));

        let dxy = euclid(&x, &y);
        if dxy > 0.0 {
            holder_max = holder_max.max(euclid(&bx, &by) / dxy.powf(spec.beta));
        }
        let w = wasserstein_exact(spec.kappa, &mu, &nu)?;
        if w > 0.0 {
            measure_max = measure_max.max(euclid(&bx, &bxn) / w);
        }
    }

    let holder_bound = spec.holder_constant();
    let measure_bound = spec.measure_constant();
    let sup_bound = spec.sup_bound();
    let within = |v: f64, bound: f64| v.is_finite() && v <= bound + ADMISSIBILITY_SLACK;
    let pass = within(holder_max, holder_bound)
        && within(measure_max, measure_bound)
        && within(sup, sup_bound);
    Ok(AdmissibilityReport {
        samples: sample_count,
        holder_ratio_max: holder_max,
        measure_ratio_max: measure_max,
        sup_norm: sup,
        holder_bound,
        measure_bound,
        sup_bound,
        pass,
    })
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(values).unwrap()
    }

    #[test]
    fn zero_drift_is_zero() {
        let spec = DriftSpec::zero(2);
        let mu = EmpiricalMeasure::new(2, vec![1.0, 2.0]).unwrap();
        assert_eq!(spec.eval(&[3.0, -4.0], &mu).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn kink_example() {
        let spec = DriftSpec::holder_mean(1, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(spec.eval(&[1.0], &line(&[-5.0, 7.0])).unwrap(), vec![1.0]);
    }

    #[test]
    fn interaction_example() {
        let spec = DriftSpec::holder_mean(1, 0.5, 0.0, 2.0).unwrap();
        let b = spec.eval(&[0.3], &line(&[0.0, 10.0])).unwrap();
        // tanh(10) from a 30-digit evaluation.
        assert!((b[0] - 0.999_999_995_877_692_8).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = DriftSpec::holder_mean(2, 0.5, 1.0, 1.0).unwrap();
        assert!(matches!(
            spec.eval(&[1.0], &EmpiricalMeasure::new(2, vec![0.0, 0.0]).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            spec.eval(&[1.0, 2.0], &line(&[0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn holder_condition_checked() {
        let spec = DriftSpec::holder_mean(1, 0.3, 1.0, 0.0).unwrap();
        assert!(matches!(
            spec.validate_with_alpha(1.2),
            Err(Error::HolderCondition { .. })
        ));
        assert!(DriftSpec::holder_mean(1, 0.75, 1.0, 0.0)
            .unwrap()
            .validate_with_alpha(1.5)
            .is_ok());
        let wide = DriftSpec::holder_mean(1, 0.75, 1.0, 0.0)
            .unwrap()
            .with_kappa(1.6);
        assert!(wide.validate_with_alpha(1.5).is_err());
    }

    #[test]
    fn mollify_rejects_nesting_and_high_dim() {
        let spec = DriftSpec::holder_mean(1, 0.5, 1.0, 0.0).unwrap();
        let once = mollify_drift(&spec, 4).unwrap();
        assert!(matches!(
            mollify_drift(&once, 4),
            Err(Error::AlreadyMollified)
        ));
        let wide = DriftSpec::holder_mean(3, 0.5, 1.0, 0.0).unwrap();
        assert!(mollify_drift(&wide, 4).is_err());
    }

    #[test]
    fn mollified_zero_and_odd_cases() {
        let mu = line(&[0.5]);
        let zero = mollify_drift(&DriftSpec::zero(1), 3).unwrap();
        for x in [-2.0, 0.0, 0.4] {
            assert_eq!(zero.eval(&[x], &mu).unwrap(), vec![0.0]);
        }
        let kink = DriftSpec::holder_mean(1, 0.5, 1.0, 0.0).unwrap();
        for n in [1, 2, 8, 32] {
            let m = mollify_drift(&kink, n).unwrap();
            assert_eq!(m.eval(&[0.0], &mu).unwrap(), vec![0.0]);
        }
        let kink2 = DriftSpec::holder_mean(2, 0.5, 1.0, 0.0).unwrap();
        let m2 = mollify_drift(&kink2, 5).unwrap();
        let mu2 = EmpiricalMeasure::new(2, vec![0.0, 0.0]).unwrap();
        assert_eq!(m2.eval(&[0.0, 0.0], &mu2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mollified_matches_fine_quadrature() {
        // Independent 10^5-node midpoint rule of ∫ φ(1 - z/8) ρ(z) dz / ∫ ρ.
        let nodes = 100_000;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..nodes {
            let z = -1.0 + (k as f64 + 0.5) * 2.0 / nodes as f64;
            let w = (-1.0 / (1.0 - z * z)).exp();
            let s: f64 = 1.0 - z / 8.0;
            num += w * s.sqrt().min(1.0);
            den += w;
        }
        let oracle = num / den;
        // 30-digit adaptive quadrature of the same integral.
        assert!((oracle - 0.989_388_302_594_582).abs() < 1e-8);

        let spec = DriftSpec::holder_mean(1, 0.5, 1.0, 0.0).unwrap();
        let m = mollify_drift(&spec, 8).unwrap();
        let v = m.eval(&[1.0], &line(&[0.0])).unwrap()[0];
        assert!((v - oracle).abs() < 1e-4, "{v} vs {oracle}");
    }

    #[test]
    fn mollified_bounded_by_base() {
        let spec = DriftSpec::holder_mean(1, 0.5, 1.0, 0.5).unwrap();
        let m = mollify_drift(&spec, 2).unwrap();
        let mu = line(&[3.0, 4.0]);
        for k in -40..=40 {
            let v = m.eval(&[k as f64 * 0.1], &mu).unwrap()[0];
            assert!(v.abs() <= spec.sup_bound() + 1e-12);
        }
    }

    #[test]
    fn mollified_converges_monotonically() {
        let spec = DriftSpec::holder_mean(1, 0.5, 1.0, 0.0).unwrap();
        let mu = line(&[0.0]);
        let grid: Vec<f64> = (0..64).map(|k| -2.0 + 4.0 * k as f64 / 63.0).collect();
        let mut previous = f64::INFINITY;
        for n in [2u32, 4, 8, 16, 32] {
            let m = mollify_drift(&spec, n).unwrap();
            let gap = grid
                .iter()
                .map(|&x| (m.eval(&[x], &mu).unwrap()[0] - spec.eval(&[x], &mu).unwrap()[0]).abs())
                .fold(0.0, f64::max);
            assert!(gap <= previous + 1e-6, "n = {n}: {gap} > {previous}");
            assert!(gap <= 2.0 * (n as f64).powf(-0.5) + 1e-6);
            previous = gap;
        }
    }

    #[test]
    fn c_only_mollification_is_a_no_op() {
        let spec = DriftSpec::holder_mean(1, 0.5, 0.0, 1.5).unwrap();
        let m = mollify_drift(&spec, 4).unwrap();
        let mu = line(&[0.2, -1.0, 3.0]);
        for x in [-1.0, 0.0, 2.5] {
            let gap = (m.eval(&[x], &mu).unwrap()[0] - spec.eval(&[x], &mu).unwrap()[0]).abs();
            assert!(gap <= 1e-6);
        }
    }

    #[test]
    fn admissibility_examples() {
        let zero = verify_admissible(&DriftSpec::zero(1), 200, 1).unwrap();
        assert!(zero.pass);
        assert_eq!(
            (zero.holder_ratio_max, zero.measure_ratio_max, zero.sup_norm),
            (0.0, 0.0, 0.0)
        );

        let kink = DriftSpec::holder_mean(1, 0.5, 1.0, 0.0).unwrap();
        let r = verify_admissible(&kink, 2000, 2).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.holder_ratio_max <= 2.0 && r.sup_norm <= 1.0);

        let mean = DriftSpec::holder_mean(1, 0.5, 0.0, 1.0).unwrap();
        let r = verify_admissible(&mean, 2000, 3).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.measure_ratio_max <= 1.0 + 1e-9);

        let both = DriftSpec::holder_mean(2, 0.6, 0.7, 0.4).unwrap();
        assert!(verify_admissible(&both, 1000, 4).unwrap().pass);

        assert!(verify_admissible(&kink, 99, 0).is_err());
    }
}
