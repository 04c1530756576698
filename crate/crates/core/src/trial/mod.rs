//! Closed-form trial function for one segment.
//!
//! The stress on a segment with Neumann data k⁻(t) at x = 0 and k⁺(t) at
//! x = L is an image series of the erfc basis `g`, with the time-dependent
//! part of the boundary data entering through a convolution that is
//! discretized by Gauss-Legendre quadrature.

pub mod quadrature;
pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NodeContext, SegmentContext};

pub use quadrature::{gauss_legendre, GaussLegendre};
pub use special::erfc;

/// Beyond this value of x / (2√(κt)) the basis is below double precision.
const BASIS_CUTOFF: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub n_gauss: usize,
    /// Image terms n = 0..n_reflections.
    pub n_reflections: usize,
    /// Absolute accuracy guaranteed by [`erfc`]; informational.
    pub erfc_tolerance: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            n_gauss: 8,
            n_reflections: 3,
            erfc_tolerance: 1e-12,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=quadrature::MAX_ORDER).contains(&self.n_gauss) {
            return Err(Error::OrderOutOfRange(self.n_gauss));
        }
        if !(1..=16).contains(&self.n_reflections) {
            return Err(Error::field(
                "trial.n_reflections",
                format!("must lie in [1, 16], got {}", self.n_reflections),
            ));
        }
        if !(self.erfc_tolerance >= 1e-12) {
            return Err(Error::field(
                "trial.erfc_tolerance",
                format!("kernel accuracy is 1e-12, cannot honour {}", self.erfc_tolerance),
            ));
        }
        Ok(())
    }
}

/// g(x, t) = 2√(κt/π) e^{−x²/4κt} − x erfc(x / 2√(κt)).
pub fn basis_g(x: f64, t: f64, kappa: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let s = (kappa * t).sqrt();
    let z = x / (2.0 * s);
    if z > BASIS_CUTOFF {
        return 0.0;
    }
    2.0 * s / std::f64::consts::PI.sqrt() * (-z * z).exp() - x * erfc(z)
}

/// Image sums (S⁻, S⁺) = (Σₙ g(ξ₁)+g(ξ₃), Σₙ g(ξ₂)+g(ξ₄)).
pub fn image_sums(x: f64, t: f64, length: f64, kappa: f64, n_reflections: usize) -> (f64, f64) {
    let mut sm = 0.0;
    let mut sp = 0.0;
    for n in 0..n_reflections {
        let n = n as f64;
        sm += basis_g((2.0 * n + 2.0) * length - x, t, kappa) + basis_g(2.0 * n * length + x, t, kappa);
        sp += basis_g((2.0 * n + 1.0) * length - x, t, kappa) + basis_g((2.0 * n + 1.0) * length + x, t, kappa);
    }
    (sm, sp)
}

/// Initial boundary gradients k_m(0) of every incident segment at a node.
///
/// A terminal gives −G of its segment; a junction gives
/// −s_m (Σ s_j w_j G_j) / (Σ w_j). Padded slots are zero.
pub fn initial_gradient(ctx: &NodeContext) -> Result<[f64; 4]> {
    let m = ctx.degree;
    let mut out = [0.0; 4];
    if m == 1 {
        out[0] = -ctx.adj_g[0];
        return Ok(out);
    }
    let total_w: f64 = ctx.adj_w[..m].iter().sum();
    if total_w <= 0.0 {
        return Err(Error::ZeroTotalWidth(ctx.node_id));
    }
    let flux: f64 = (0..m).map(|j| ctx.signs[j] * ctx.adj_w[j] * ctx.adj_g[j]).sum();
    for (i, o) in out.iter_mut().enumerate().take(m) {
        *o = -ctx.signs[i] * flux / total_w;
    }
    Ok(out)
}

/// Linear map from the M−1 free derivatives to all M, as a 4×3 matrix.
///
/// Rows past the degree and the whole matrix at a terminal are zero.
pub fn h_matrix(ctx: &NodeContext) -> [[f64; 3]; 4] {
    let m = ctx.degree;
    let mut h = [[0.0; 3]; 4];
    if m <= 1 {
        return h;
    }
    for (i, row) in h.iter_mut().enumerate().take(m - 1) {
        row[i] = 1.0;
    }
    let last = m - 1;
    for j in 0..last {
        h[last][j] = -ctx.signs[last] / ctx.adj_w[last] * ctx.signs[j] * ctx.adj_w[j];
    }
    h
}

/// Complete the derivative set at a node so that Σ s_m w_m d_m = 0.
pub fn transform_h(ctx: &NodeContext, free: &[f64]) -> Result<[f64; 4]> {
    let expected = ctx.degree.saturating_sub(1);
    if free.len() != expected {
        return Err(Error::DegreeMismatch {
            degree: ctx.degree,
            expected,
            got: free.len(),
        });
    }
    let h = h_matrix(ctx);
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(&h) {
        *o = row.iter().zip(free).map(|(a, b)| a * b).sum();
    }
    Ok(out)
}

/// Boundary data for one segment: k⁻(0), k⁺(0) and the time derivatives.
pub struct GradientSpec<'a> {
    pub k0_prev: f64,
    pub k0_next: f64,
    pub dprev: &'a (dyn Fn(f64) -> f64 + Sync),
    pub dnext: &'a (dyn Fn(f64) -> f64 + Sync),
}

fn zero_rate(_: f64) -> f64 {
    0.0
}

impl GradientSpec<'static> {
    /// Time-independent boundary gradients.
    pub fn constant(k0_prev: f64, k0_next: f64) -> Self {
        GradientSpec {
            k0_prev,
            k0_next,
            dprev: &zero_rate,
            dnext: &zero_rate,
        }
    }
}

/// Coefficients expressing σ(x, t) as an affine function of the boundary data.
///
/// σ = base_prev·k⁻(0) + base_next·k⁺(0)
///     + Σ_j coef_prev[j]·d⁻(times[j]) + coef_next[j]·d⁺(times[j]).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialStencil {
    pub base_prev: f64,
    pub base_next: f64,
    /// Quadrature-shifted times t_j⁺ at which the derivatives are needed.
    pub times: Vec<f64>,
    pub coef_prev: Vec<f64>,
    pub coef_next: Vec<f64>,
}

impl TrialStencil {
    pub fn apply(&self, grads: &GradientSpec) -> f64 {
        let mut s = self.base_prev * grads.k0_prev + self.base_next * grads.k0_next;
        for j in 0..self.times.len() {
            let tj = self.times[j];
            if self.coef_prev[j] != 0.0 {
                s += self.coef_prev[j] * (grads.dprev)(tj);
            }
            if self.coef_next[j] != 0.0 {
                s += self.coef_next[j] * (grads.dnext)(tj);
            }
        }
        s
    }
}

/// Trial-function evaluator with its quadrature rule precomputed.
#[derive(Debug, Clone)]
pub struct Trial {
    pub config: TrialConfig,
    rule: GaussLegendre,
}

impl Trial {
    pub fn new(config: TrialConfig) -> Result<Self> {
        config.validate()?;
        let rule = gauss_legendre(config.n_gauss)?;
        Ok(Trial { config, rule })
    }

    pub fn rule(&self) -> &GaussLegendre {
        &self.rule
    }

    fn check_domain(x: f64, t: f64, length: f64) -> Result<()> {
        let slack = 1e-12 * length;
        if !x.is_finite() || x < -slack || x > length + slack {
            return Err(Error::OutOfDomain(format!("x = {x} outside [0, {length}]")));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::OutOfDomain(format!("t = {t} is negative or not finite")));
        }
        Ok(())
    }

    /// Stencil for (x, t) on a segment of given length and diffusivity.
    pub fn stencil(&self, x: f64, t: f64, length: f64, kappa: f64) -> Result<TrialStencil> {
        Self::check_domain(x, t, length)?;
        let x = x.clamp(0.0, length);
        let n = self.rule.order();
        if t == 0.0 {
            return Ok(TrialStencil {
                base_prev: 0.0,
                base_next: 0.0,
                times: vec![0.0; n],
                coef_prev: vec![0.0; n],
                coef_next: vec![0.0; n],
            });
        }
        let nref = self.config.n_reflections;
        let (sm, sp) = image_sums(x, t, length, kappa, nref);
        let mut times = Vec::with_capacity(n);
        let mut coef_prev = Vec::with_capacity(n);
        let mut coef_next = Vec::with_capacity(n);
        let half = 0.5 * t;
        for (&tj, &aj) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let t_plus = half + half * tj;
            let t_minus = half - half * tj;
            let (gm, gp) = image_sums(x, t_minus, length, kappa, nref);
            times.push(t_plus);
            coef_prev.push(-aj * half * gm);
            coef_next.push(aj * half * gp);
        }
        Ok(TrialStencil {
            base_prev: -sm,
            base_next: sp,
            times,
            coef_prev,
            coef_next,
        })
    }

    /// σ(x, t) on `seg`, in the units of the context.
    pub fn eval(&self, x: f64, t: f64, seg: &SegmentContext, grads: &GradientSpec) -> Result<f64> {
        Ok(self.stencil(x, t, seg.length, seg.kappa)?.apply(grads))
    }
}

/// One-shot evaluation; builds the quadrature rule on every call.
pub fn trial_eval(x: f64, t: f64, seg: &SegmentContext, grads: &GradientSpec, cfg: &TrialConfig) -> Result<f64> {
    Trial::new(*cfg)?.eval(x, t, seg, grads)
}

/// Largest |∂σ/∂t − κ ∂²σ/∂x²| over the grid, by fourth-order central
/// differences with steps `hx` and `ht`.
///
/// Grid points must keep x ± 2hx inside the segment and t − 2ht > 0.
pub fn pde_residual(
    trial: &Trial,
    seg: &SegmentContext,
    grads: &GradientSpec,
    xs: &[f64],
    ts: &[f64],
    hx: f64,
    ht: f64,
) -> Result<f64> {
    let f = |x: f64, t: f64| trial.eval(x, t, seg, grads);
    let mut worst = 0.0f64;
    for &t in ts {
        for &x in xs {
            let dt = (-f(x, t + 2.0 * ht)? + 8.0 * f(x, t + ht)? - 8.0 * f(x, t - ht)? + f(x, t - 2.0 * ht)?) / (12.0 * ht);
            let dxx = (-f(x + 2.0 * hx, t)? + 16.0 * f(x + hx, t)? - 30.0 * f(x, t)? + 16.0 * f(x - hx, t)?
                - f(x - 2.0 * hx, t)?)
                / (12.0 * hx * hx);
            worst = worst.max((dt - seg.kappa * dxx).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cross, node_contexts, straight_chain, Side};
    use crate::physics::MaterialParams;

    fn blocked_segment(length: f64, drive: f64, kappa: f64) -> SegmentContext {
        let tree = straight_chain(&[length], &[0.0], &[1.0]).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        SegmentContext {
            drive,
            kappa,
            ..ctx.segments[0]
        }
    }

    #[test]
    fn basis_at_origin() {
        for (t, k) in [(1.0, 1.0), (0.3, 2.0), (5.0, 0.1)] {
            let want = 2.0 * (k * t / std::f64::consts::PI).sqrt();
            assert!((basis_g(0.0, t, k) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_reference_point() {
        // κt = 1, x = 2: 2/√π·e⁻¹ − 2·erfc(1)
        let want = 2.0 / std::f64::consts::PI.sqrt() * (-1.0f64).exp() - 2.0 * 0.157_299_207_050_285_13;
        assert!((basis_g(2.0, 1.0, 1.0) - want).abs() < 1e-14);
        assert!((basis_g(2.0, 1.0, 1.0) - 0.100_509_083_3).abs() < 1e-9);
    }

    #[test]
    fn basis_decays_and_vanishes_at_t0() {
        let (k, t): (f64, f64) = (0.7, 2.0);
        let s = (k * t).sqrt();
        assert!(basis_g(10.0 * s, t, k).abs() < 1e-12 * s);
        assert_eq!(basis_g(1.0, 0.0, k), 0.0);
        assert!(basis_g(1.0, 1e-8, k) < 1e-30);
    }

    #[test]
    fn basis_slope_is_minus_erfc() {
        let (k, t) = (0.5, 1.3);
        for x in [0.0, 0.3, 1.0, 2.5] {
            let h = 1e-5;
            let fd = (basis_g(x + h, t, k) - basis_g((x - h).max(0.0), t, k)) / (x + h - (x - h).max(0.0));
            assert!((fd + erfc(x / (2.0 * (k * t).sqrt()))).abs() < 1e-5, "x = {x}");
        }
    }

    #[test]
    fn terminal_gradient_is_minus_drive() {
        let tree = straight_chain(&[10e-6], &[4e9], &[1e-7]).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        let g = ctx.segments[0].drive;
        for node in &ctx.nodes {
            let k = initial_gradient(node).unwrap();
            assert_eq!(k[0], -g);
            assert_eq!(&k[1..], &[0.0; 3]);
        }
    }

    fn junction(g: [f64; 4], w: [f64; 4], s: [f64; 4], degree: usize) -> NodeContext {
        NodeContext {
            node_id: 0,
            degree,
            adj_g: g,
            adj_w: w,
            signs: s,
            segments: [0, 1, 2, 3],
            coord: [0.0; 2],
            far_coords: [[0.0; 2]; 4],
        }
    }

    #[test]
    fn symmetric_degree_two_cancels() {
        let ctx = junction([2.0, 2.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, -1.0, 0.0, 0.0], 2);
        assert_eq!(initial_gradient(&ctx).unwrap(), [0.0; 4]);
    }

    #[test]
    fn degree_two_unequal_drive() {
        let ctx = junction([1.0, 3.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, -1.0, 0.0, 0.0], 2);
        let k = initial_gradient(&ctx).unwrap();
        assert_eq!(&k[..2], &[1.0, -1.0]);
        let flux: f64 = (0..2).map(|m| ctx.signs[m] * ctx.adj_w[m] * (k[m] + ctx.adj_g[m])).sum();
        assert!(flux.abs() < 1e-15);
    }

    #[test]
    fn cross_reduces_to_four_arm_formula() {
        // Four-arm closed form with signs (+, −, +, −):
        // k₁ = −(w₁G₁ − w₂G₂ + w₃G₃ − w₄G₄)/Σw, k₂ = −k₁, k₃ = k₁, k₄ = −k₁.
        let g = [1.3, -0.4, 2.2, 0.7];
        let w = [1.0, 2.0, 1.0, 2.0];
        let ctx = junction(g, w, [1.0, -1.0, 1.0, -1.0], 4);
        let k = initial_gradient(&ctx).unwrap();
        let k1 = -(w[0] * g[0] - w[1] * g[1] + w[2] * g[2] - w[3] * g[3]) / w.iter().sum::<f64>();
        for (got, want) in k.iter().zip([k1, -k1, k1, -k1]) {
            assert!((got - want).abs() < 1e-15);
        }

        // Fourth derivative from the alternating pattern −Σ (−1)^{j+4+1} w_j d_j / w₄.
        let d = [0.3, -1.1, 0.5];
        let out = transform_h(&ctx, &d).unwrap();
        let d4: f64 = (0..3).map(|j| (-1f64).powi(j as i32 + 1 + 4 + 1) * w[j] * d[j]).sum::<f64>() / w[3];
        assert!((out[3] - d4).abs() < 1e-15);
        assert_eq!(&out[..3], &d);
    }

    #[test]
    fn cross_contexts_use_alternating_signs() {
        let tree = cross([10e-6; 4], [4e9, 1e9, -2e9, 3e9], [1e-7; 4]).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        let center = ctx.nodes.iter().find(|n| n.degree == 4).unwrap();
        assert_eq!(&center.signs, &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn zero_total_width() {
        let ctx = junction([1.0, 1.0, 0.0, 0.0], [0.0; 4], [1.0, -1.0, 0.0, 0.0], 2);
        assert!(matches!(initial_gradient(&ctx), Err(Error::ZeroTotalWidth(0))));
    }

    #[test]
    fn transform_terminal_and_pair() {
        let term = junction([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 1);
        assert_eq!(transform_h(&term, &[]).unwrap(), [0.0; 4]);
        assert!(matches!(
            transform_h(&term, &[1.0]),
            Err(Error::DegreeMismatch { expected: 0, got: 1, .. })
        ));

        let pair = junction([0.0; 4], [1.0, 1.0, 0.0, 0.0], [1.0, -1.0, 0.0, 0.0], 2);
        let d = transform_h(&pair, &[0.5]).unwrap();
        assert_eq!(&d[..2], &[0.5, 0.5]);
    }

    #[test]
    fn transform_conserves_flux_rate() {
        let ctx = junction([0.0; 4], [1.0, 0.5, 2.0, 0.0], [1.0, 1.0, -1.0, 0.0], 3);
        let d = transform_h(&ctx, &[0.8, -2.0]).unwrap();
        let s: f64 = (0..3).map(|m| ctx.signs[m] * ctx.adj_w[m] * d[m]).sum();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_zero_stress() {
        let trial = Trial::new(TrialConfig::default()).unwrap();
        let seg = blocked_segment(1.0, 1.0, 0.1);
        let grads = GradientSpec::constant(0.0, 0.0);
        for &t in &[0.0, 0.1, 1.0, 10.0] {
            for &x in &[0.0, 0.3, 1.0] {
                assert_eq!(trial.eval(x, t, &seg, &grads).unwrap(), 0.0);
            }
        }
    }

    /// Steady ramp minus the decaying cosine modes; converges fast for t > 0.
    fn analytic_blocked(x: f64, t: f64, length: f64, g: f64, kappa: f64) -> f64 {
        let mut s = g * (length / 2.0 - x);
        for n in (1..2000).step_by(2) {
            let a = n as f64 * std::f64::consts::PI / length;
            s -= 4.0 * g * length / (n as f64 * std::f64::consts::PI).powi(2) * (a * x).cos() * (-kappa * a * a * t).exp();
        }
        s
    }

    #[test]
    fn blocked_wire_transient_and_steady_state() {
        let (length, g, kappa) = (1.0, 16.0, 0.14);
        let seg = blocked_segment(length, g, kappa);
        let trial = Trial::new(TrialConfig::default()).unwrap();
        let grads = GradientSpec::constant(-g, -g);
        let scale = g * length / 2.0;
        for &t in &[0.01, 0.1, 1.0] {
            for i in 0..=10 {
                let x = i as f64 / 10.0;
                let got = trial.eval(x, t, &seg, &grads).unwrap();
                let want = analytic_blocked(x, t, length, g, kappa);
                assert!((got - want).abs() < 1e-6 * scale, "x = {x}, t = {t}: {got} vs {want}");
            }
        }
        // Late times need more image terms to resolve the steady ramp.
        let wide = Trial::new(TrialConfig {
            n_reflections: 16,
            ..TrialConfig::default()
        })
        .unwrap();
        let t = 2.0 / kappa;
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            let got = wide.eval(x, t, &seg, &grads).unwrap();
            assert!((got - g * (length / 2.0 - x)).abs() < 5e-3 * scale, "x = {x}");
        }
    }

    #[test]
    fn blocked_wire_is_odd_about_midpoint() {
        let seg = blocked_segment(2.0, 3.0, 0.5);
        let trial = Trial::new(TrialConfig::default()).unwrap();
        let grads = GradientSpec::constant(-3.0, -3.0);
        for &t in &[0.01, 0.5, 3.0, 20.0] {
            let mid = trial.eval(1.0, t, &seg, &grads).unwrap();
            assert!(mid.abs() < 1e-9 * 3.0 * 2.0, "t = {t}: {mid}");
        }
    }

    #[test]
    fn boundary_slope_tracks_gradient_data() {
        let seg = blocked_segment(1.0, 0.0, 0.2);
        let trial = Trial::new(TrialConfig {
            n_gauss: 24,
            ..TrialConfig::default()
        })
        .unwrap();
        let dp = |t: f64| 0.5 * (2.0 * t).cos();
        let dn = |t: f64| -0.3 + 0.1 * t;
        let grads = GradientSpec {
            k0_prev: 1.2,
            k0_next: -0.7,
            dprev: &dp,
            dnext: &dn,
        };
        let t: f64 = 0.8;
        let k_prev = 1.2 + 0.25 * (2.0 * t).sin();
        let k_next = -0.7 - 0.3 * t + 0.05 * t * t;
        let h = 1e-5;
        let f = |x: f64| trial.eval(x, t, &seg, &grads).unwrap();
        let slope0 = (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h);
        let slope1 = (3.0 * f(1.0) - 4.0 * f(1.0 - h) + f(1.0 - 2.0 * h)) / (2.0 * h);
        assert!((slope0 - k_prev).abs() < 1e-4, "{slope0} vs {k_prev}");
        assert!((slope1 - k_next).abs() < 1e-4, "{slope1} vs {k_next}");
    }

    #[test]
    fn stress_is_linear_in_gradient_data() {
        let seg = blocked_segment(1.0, 0.0, 0.3);
        let trial = Trial::new(TrialConfig::default()).unwrap();
        let (a1, a2) = (|t: f64| t.sin(), |t: f64| 1.0 - t);
        let (b1, b2) = (|t: f64| 0.2 * t * t, |t: f64| (-t).exp());
        let (s1, s2) = (|t: f64| t.sin() + 0.2 * t * t, |t: f64| 1.0 - t + (-t).exp());
        let ga = GradientSpec { k0_prev: 0.4, k0_next: -1.0, dprev: &a1, dnext: &a2 };
        let gb = GradientSpec { k0_prev: 2.0, k0_next: 0.3, dprev: &b1, dnext: &b2 };
        let gs = GradientSpec { k0_prev: 2.4, k0_next: -0.7, dprev: &s1, dnext: &s2 };
        for &(x, t) in &[(0.0, 0.5), (0.4, 1.0), (1.0, 2.0), (0.7, 0.05)] {
            let sum = trial.eval(x, t, &seg, &ga).unwrap() + trial.eval(x, t, &seg, &gb).unwrap();
            let joint = trial.eval(x, t, &seg, &gs).unwrap();
            assert!((sum - joint).abs() <= 1e-12 * joint.abs().max(1.0));
        }
    }

    #[test]
    fn more_images_change_little_at_moderate_times() {
        let seg = blocked_segment(1.0, 5.0, 0.25);
        let grads = GradientSpec::constant(-5.0, -5.0);
        let three = Trial::new(TrialConfig::default()).unwrap();
        let six = Trial::new(TrialConfig {
            n_reflections: 6,
            ..TrialConfig::default()
        })
        .unwrap();
        // κt ≤ 0.5 L²
        let t = 0.5 / 0.25;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let a = three.eval(x, t, &seg, &grads).unwrap();
            let b = six.eval(x, t, &seg, &grads).unwrap();
            num += (a - b).powi(2);
            den += b * b;
        }
        assert!((num / den).sqrt() < 1e-4);
    }

    #[test]
    fn out_of_domain_queries() {
        let seg = blocked_segment(1.0, 1.0, 1.0);
        let trial = Trial::new(TrialConfig::default()).unwrap();
        let grads = GradientSpec::constant(-1.0, -1.0);
        assert!(matches!(trial.eval(1.5, 1.0, &seg, &grads), Err(Error::OutOfDomain(_))));
        assert!(matches!(trial.eval(0.5, -1.0, &seg, &grads), Err(Error::OutOfDomain(_))));
        assert!(matches!(trial.eval(f64::NAN, 1.0, &seg, &grads), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn config_validation() {
        assert!(Trial::new(TrialConfig { n_gauss: 0, ..Default::default() }).is_err());
        assert!(Trial::new(TrialConfig { n_reflections: 17, ..Default::default() }).is_err());
        assert!(Trial::new(TrialConfig { erfc_tolerance: 1e-14, ..Default::default() }).is_err());
    }

    #[test]
    fn residual_small_for_blocked_wire() {
        let (length, g, kappa) = (1.0, 16.0, 0.14);
        let seg = blocked_segment(length, g, kappa);
        let grads = GradientSpec::constant(-g, -g);
        let trial = Trial::new(TrialConfig::default()).unwrap();
        let xs: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        // κt/L² from 0.014 to 0.28
        let ts = [0.1, 0.5, 1.0, 2.0];
        let res = pde_residual(&trial, &seg, &grads, &xs, &ts, 1e-2, 1e-3).unwrap();
        let peak = trial.eval(0.0, 2.0, &seg, &grads).unwrap().abs();
        assert!(res < 1e-3 * peak, "residual {res} vs peak {peak}");

        let zero = GradientSpec::constant(0.0, 0.0);
        assert_eq!(pde_residual(&trial, &seg, &zero, &xs, &ts, 1e-2, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn interior_residual_is_insensitive_to_truncation() {
        // Every image term solves the diffusion equation on its own.
        let seg = blocked_segment(1.0, 4.0, 1.0);
        let grads = GradientSpec::constant(-4.0, -4.0);
        let xs: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        let one = Trial::new(TrialConfig { n_reflections: 1, ..Default::default() }).unwrap();
        let r1 = pde_residual(&one, &seg, &grads, &xs, &[1.5, 3.0], 1e-2, 1e-3).unwrap();
        assert!(r1 < 1e-6, "{r1}");
    }

    #[test]
    fn boundary_error_grows_with_fewer_images() {
        // Truncation shows up as a violated Neumann condition once the
        // diffusion length exceeds the retained images.
        let seg = blocked_segment(1.0, 4.0, 1.0);
        let grads = GradientSpec::constant(-4.0, -4.0);
        let slope_error = |n_reflections: usize| {
            let trial = Trial::new(TrialConfig { n_reflections, ..Default::default() }).unwrap();
            let h = 1e-5;
            let f = |x: f64| trial.eval(x, 3.0, &seg, &grads).unwrap();
            let slope = (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h);
            (slope + 4.0).abs()
        };
        let (e1, e3) = (slope_error(1), slope_error(3));
        assert!(e1 > 10.0 * e3, "{e1} vs {e3}");
    }

    #[test]
    fn slot_lookup_matches_context() {
        let tree = straight_chain(&[1e-5, 2e-5], &[1e9, 1e9], &[1e-7, 1e-7]).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        let s0 = &ctx.segments[0];
        assert_eq!(s0.ctx_next.slot_of(0, Side::Next), Some(s0.slot_next));
    }
}
