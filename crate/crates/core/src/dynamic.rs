//! Time-varying temperature through the effective-time transform
//! T′(t) = ∫₀ᵗ κ(T(s)) / κ₀ ds, which turns the problem into one with
//! constant diffusivity κ₀.

use crate::error::{Error, Result};
use crate::geometry::SegmentContext;
use crate::physics::{diffusivity, temperature, MaterialParams, TemperatureModel};
use crate::trial::{GradientSpec, Trial};

const MAX_DEPTH: usize = 40;
/// Levels always refined, so periodic integrands cannot alias on the coarse samples.
const MIN_DEPTH: usize = 6;
const DEFAULT_KNOTS: usize = 512;

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || (depth <= MAX_DEPTH - MIN_DEPTH && delta.abs() <= 15.0 * tol) {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)? + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Adaptive Simpson quadrature of `f` on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<f64> {
    if b == a {
        return Ok(0.0);
    }
    let (fa, fb, fm) = (f(a)?, f(b)?, f(0.5 * (a + b))?);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

/// T′(t) by adaptive quadrature to relative tolerance 1e-8.
pub fn effective_time(t: f64, model: &TemperatureModel, material: &MaterialParams, kappa0: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::OutOfRange {
            value: t,
            range: "[0, ∞) s".into(),
        });
    }
    if model.is_constant() {
        return Ok(t * diffusivity(model.reference(), material)? / kappa0);
    }
    let f = |s: f64| -> Result<f64> { Ok(diffusivity(temperature(s, model)?, material)? / kappa0) };
    // Integrand is O(1); tolerance relative to the interval length.
    adaptive_simpson(&f, 0.0, t, 1e-8 * t)
}

/// Cached T′ on a uniform grid of knots; queries integrate only the last partial interval.
#[derive(Debug, Clone)]
pub struct EffectiveTimeMap {
    pub kappa0: f64,
    model: TemperatureModel,
    material: MaterialParams,
    step: f64,
    /// T′ at t = k·step.
    cumulative: Vec<f64>,
    pub tolerance: f64,
}

impl EffectiveTimeMap {
    /// Map referenced to κ₀ = κ(T₀) of the model's reference temperature, tabulated up to `t_end`.
    pub fn new(model: &TemperatureModel, material: &MaterialParams, t_end: f64) -> Result<Self> {
        let kappa0 = diffusivity(model.reference(), material)?;
        Self::with_kappa0(model, material, kappa0, t_end)
    }

    pub fn with_kappa0(model: &TemperatureModel, material: &MaterialParams, kappa0: f64, t_end: f64) -> Result<Self> {
        model.validate()?;
        if !(t_end > 0.0) {
            return Err(Error::field("t_end", "must be positive"));
        }
        let step = t_end / DEFAULT_KNOTS as f64;
        let tolerance = 1e-8;
        let f = |s: f64| -> Result<f64> { Ok(diffusivity(temperature(s, model)?, material)? / kappa0) };
        let mut cumulative = vec![0.0; DEFAULT_KNOTS + 1];
        for k in 0..DEFAULT_KNOTS {
            let (a, b) = (k as f64 * step, (k + 1) as f64 * step);
            cumulative[k + 1] = cumulative[k] + adaptive_simpson(&f, a, b, tolerance * step * 1e-2)?;
        }
        Ok(EffectiveTimeMap {
            kappa0,
            model: model.clone(),
            material: *material,
            step,
            cumulative,
            tolerance,
        })
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::OutOfRange {
                value: t,
                range: "[0, ∞) s".into(),
            });
        }
        let k = ((t / self.step).floor() as usize).min(self.cumulative.len() - 1);
        let a = k as f64 * self.step;
        let (model, material, kappa0) = (&self.model, &self.material, self.kappa0);
        let f = |s: f64| -> Result<f64> { Ok(diffusivity(temperature(s, model)?, material)? / kappa0) };
        Ok(self.cumulative[k] + adaptive_simpson(&f, a, t, self.tolerance * (t - a).max(self.step) * 1e-2)?)
    }
}

/// σ(x, t) under time-varying temperature: the constant-κ₀ trial function at T′(t).
///
/// `seg.kappa` must be κ₀ in the segment's units; `to_context_time` maps
/// seconds of effective time to the time unit of the context.
pub fn dynamic_stress(
    x: f64,
    t: f64,
    seg: &SegmentContext,
    grads: &GradientSpec,
    trial: &Trial,
    map: &EffectiveTimeMap,
    to_context_time: impl Fn(f64) -> f64,
) -> Result<f64> {
    trial.eval(x, to_context_time(map.eval(t)?), seg, grads)
}
