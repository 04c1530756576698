//! Material constants, Korhonen coefficients, temperature profiles and the
//! magnitude-scaling scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{node_contexts, InterconnectTree, TreeContexts};

/// Physical constants of the metallization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialParams {
    /// Boltzmann constant, J/K.
    pub k_boltzmann: f64,
    /// Elementary charge, C.
    pub e_charge: f64,
    /// Effective charge number |Z*|.
    pub z_eff: f64,
    /// Activation energy, eV.
    pub e_activation_ev: f64,
    /// Effective bulk modulus, Pa.
    pub bulk_modulus: f64,
    /// Self-diffusion prefactor, m²/s.
    pub d0: f64,
    /// Resistivity, Ω·m.
    pub resistivity: f64,
    /// Atomic volume, m³.
    pub atomic_volume: f64,
    /// Void nucleation threshold, Pa.
    pub sigma_crit: f64,
    /// Atom concentration, 1/m³. Only used to report fluxes.
    pub c_v: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            k_boltzmann: 1.38e-23,
            e_charge: 1.6e-19,
            z_eff: 10.0,
            e_activation_ev: 1.1,
            bulk_modulus: 1e11,
            d0: 5.2e-5,
            resistivity: 2.2e-8,
            atomic_volume: 8.78e-30,
            sigma_crit: 4e8,
            c_v: 1.53e28,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k_boltzmann", self.k_boltzmann),
            ("e_charge", self.e_charge),
            ("z_eff", self.z_eff),
            ("e_activation_ev", self.e_activation_ev),
            ("bulk_modulus", self.bulk_modulus),
            ("d0", self.d0),
            ("resistivity", self.resistivity),
            ("atomic_volume", self.atomic_volume),
            ("sigma_crit", self.sigma_crit),
            ("c_v", self.c_v),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::field(format!("material.{name}"), format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// EM driving force `G = |Z*| e ρ j / Ω`, Pa/m, signed like `j`.
pub fn em_driving_force(j: f64, params: &MaterialParams) -> f64 {
    params.z_eff.abs() * params.e_charge * params.resistivity * j / params.atomic_volume
}

/// Stress diffusivity `κ = D_0 exp(-E_a/kT) B Ω / (kT)`, m²/s.
pub fn diffusivity(temperature_k: f64, params: &MaterialParams) -> Result<f64> {
    if !(temperature_k > 0.0) {
        return Err(Error::NonpositiveTemperature(temperature_k));
    }
    let kt = params.k_boltzmann * temperature_k;
    let ea = params.e_activation_ev * params.e_charge;
    Ok(params.d0 * (-ea / kt).exp() * params.bulk_modulus * params.atomic_volume / kt)
}

/// Temperature as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TemperatureModel {
    Constant {
        t0: f64,
    },
    /// `T(t) = t0 + amplitude · sin(angular_rate · t)`.
    Sinusoidal {
        t0: f64,
        amplitude: f64,
        angular_rate: f64,
    },
    /// Piecewise-linear `(time s, temperature K)` table, times increasing.
    Tabulated {
        table: Vec<(f64, f64)>,
    },
}

impl Default for TemperatureModel {
    fn default() -> Self {
        TemperatureModel::Constant { t0: 350.0 }
    }
}

impl TemperatureModel {
    /// 350 K + 30 K · sin(4e-8 π t).
    pub fn standard_sinusoid() -> Self {
        TemperatureModel::Sinusoidal {
            t0: 350.0,
            amplitude: 30.0,
            angular_rate: 4e-8 * std::f64::consts::PI,
        }
    }

    /// Temperature used for the reference diffusivity κ₀.
    pub fn reference(&self) -> f64 {
        match self {
            TemperatureModel::Constant { t0 } | TemperatureModel::Sinusoidal { t0, .. } => *t0,
            TemperatureModel::Tabulated { table } => table.first().map_or(f64::NAN, |p| p.1),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            TemperatureModel::Constant { .. } => true,
            TemperatureModel::Sinusoidal { amplitude, .. } => *amplitude == 0.0,
            TemperatureModel::Tabulated { table } => table.windows(2).all(|w| w[0].1 == w[1].1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TemperatureModel::Constant { t0 } => {
                if !(*t0 > 0.0) {
                    return Err(Error::NonpositiveTemperature(*t0));
                }
            }
            TemperatureModel::Sinusoidal { t0, amplitude, angular_rate } => {
                if !(t0 - amplitude.abs() > 0.0) {
                    return Err(Error::NonpositiveTemperature(t0 - amplitude.abs()));
                }
                if !angular_rate.is_finite() {
                    return Err(Error::field("temperature.angular_rate", "must be finite"));
                }
            }
            TemperatureModel::Tabulated { table } => {
                if table.is_empty() {
                    return Err(Error::field("temperature.table", "must not be empty"));
                }
                if table.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::field("temperature.table", "times must be strictly increasing"));
                }
                if let Some(p) = table.iter().find(|p| !(p.1 > 0.0)) {
                    return Err(Error::NonpositiveTemperature(p.1));
                }
            }
        }
        Ok(())
    }
}

/// Evaluate the temperature profile at time `t` (s).
pub fn temperature(t: f64, model: &TemperatureModel) -> Result<f64> {
    let value = match model {
        TemperatureModel::Constant { t0 } => *t0,
        TemperatureModel::Sinusoidal { t0, amplitude, angular_rate } => t0 + amplitude * (angular_rate * t).sin(),
        TemperatureModel::Tabulated { table } => {
            let (first, last) = match (table.first(), table.last()) {
                (Some(f), Some(l)) => (*f, *l),
                _ => return Err(Error::field("temperature.table", "must not be empty")),
            };
            if t < first.0 || t > last.0 {
                return Err(Error::OutOfTable {
                    t,
                    first: first.0,
                    last: last.0,
                });
            }
            let i = table.partition_point(|p| p.0 <= t).clamp(1, table.len().max(2) - 1);
            if table.len() == 1 {
                first.1
            } else {
                let (t0, y0) = table[i - 1];
                let (t1, y1) = table[i];
                y0 + (y1 - y0) * (t - t0) / (t1 - t0)
            }
        }
    };
    if !(value > 0.0) {
        return Err(Error::NonpositiveTemperature(value));
    }
    Ok(value)
}

/// Reference magnitudes used to bring lengths, times and stresses to O(1).
///
/// Scaled quantities are `x / omega_x`, `t · omega_t` and `σ · omega_sigma`;
/// consequently `G` scales by `omega_sigma · omega_x` and `κ` by
/// `1 / (omega_x² · omega_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactors {
    /// Length unit, m.
    pub omega_x: f64,
    /// Time rate, 1/s.
    pub omega_t: f64,
    /// Stress rate, 1/Pa.
    pub omega_sigma: f64,
}

impl Default for ScalingFactors {
    fn default() -> Self {
        ScalingFactors {
            omega_x: 1e-5,
            omega_t: 1e-7,
            omega_sigma: 1e-7,
        }
    }
}

impl ScalingFactors {
    pub const IDENTITY: ScalingFactors = ScalingFactors {
        omega_x: 1.0,
        omega_t: 1.0,
        omega_sigma: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega_x", self.omega_x),
            ("omega_t", self.omega_t),
            ("omega_sigma", self.omega_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::field(format!("scaling.{name}"), format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn length(&self, x_m: f64) -> f64 {
        x_m / self.omega_x
    }

    pub fn time(&self, t_s: f64) -> f64 {
        t_s * self.omega_t
    }

    pub fn unscale_time(&self, t_scaled: f64) -> f64 {
        t_scaled / self.omega_t
    }

    pub fn stress(&self, sigma_pa: f64) -> f64 {
        sigma_pa * self.omega_sigma
    }

    pub fn drive(&self, g: f64) -> f64 {
        g * self.omega_sigma * self.omega_x
    }

    pub fn kappa(&self, kappa: f64) -> f64 {
        kappa / (self.omega_x * self.omega_x * self.omega_t)
    }
}

/// Inverse of the stress scaling: scaled stress back to Pa.
pub fn unscale_stress(sigma_scaled: f64, factors: &ScalingFactors) -> f64 {
    sigma_scaled / factors.omega_sigma
}

/// A tree expressed in scaled units, ready for the trial function, the
/// trainer and the reference solver.
#[derive(Debug, Clone)]
pub struct ScaledProblem {
    pub factors: ScalingFactors,
    pub material: MaterialParams,
    /// Reference temperature the stored diffusivities were computed at.
    pub temperature_k: f64,
    pub contexts: TreeContexts,
}

impl ScaledProblem {
    pub fn kappa(&self) -> f64 {
        self.contexts.segments.first().map_or(0.0, |s| s.kappa)
    }

    /// Scaled diffusivity at an arbitrary temperature.
    pub fn kappa_at(&self, temperature_k: f64) -> Result<f64> {
        Ok(self.factors.kappa(diffusivity(temperature_k, &self.material)?))
    }

    pub fn unscale_stress(&self, sigma_scaled: f64) -> f64 {
        unscale_stress(sigma_scaled, &self.factors)
    }
}

/// Build scaled per-node and per-segment contexts at temperature `temperature_k`.
pub fn scale_problem(
    tree: &InterconnectTree,
    material: &MaterialParams,
    factors: &ScalingFactors,
    temperature_k: f64,
) -> Result<ScaledProblem> {
    material.validate()?;
    factors.validate()?;
    let si = node_contexts(tree, material, temperature_k)?;
    let contexts = si.rescaled(factors.omega_x, factors.drive(1.0), factors.kappa(1.0));
    Ok(ScaledProblem {
        factors: *factors,
        material: *material,
        temperature_k,
        contexts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::straight_chain;

    #[test]
    fn zero_current_has_zero_drive() {
        assert_eq!(em_driving_force(0.0, &MaterialParams::default()), 0.0);
    }

    #[test]
    fn drive_matches_hand_arithmetic() {
        // 10 · 1.6e-19 · 2.2e-8 · 4e9 / 8.78e-30
        let g = em_driving_force(4e9, &MaterialParams::default());
        let expected = 1.408e-16 / 8.78e-30;
        assert!((g - expected).abs() / expected < 1e-14);
        assert!((g - 1.6036e13).abs() / 1.6036e13 < 1e-4);
    }

    #[test]
    fn drive_is_odd_and_linear() {
        let m = MaterialParams::default();
        for &j in &[1e9, -3.3e9, 7e10] {
            assert_eq!(em_driving_force(-j, &m), -em_driving_force(j, &m));
            let a = 2.5;
            let lhs = em_driving_force(a * j, &m);
            let rhs = a * em_driving_force(j, &m);
            assert!((lhs - rhs).abs() <= 1e-15 * rhs.abs());
        }
    }

    #[test]
    fn diffusivity_at_350k() {
        // exp(-1.76e-19 / 4.83e-21) · 5.2e-5 · 1e11 · 8.78e-30 / 4.83e-21
        let kappa = diffusivity(350.0, &MaterialParams::default()).unwrap();
        assert!((kappa - 1.413_602_718_372_56e-18).abs() / kappa < 1e-12, "{kappa:e}");
    }

    #[test]
    fn diffusivity_increases_with_temperature() {
        let m = MaterialParams::default();
        for t in [300.0, 325.0, 350.0, 375.0, 400.0] {
            let h = 1e-3;
            let slope = (diffusivity(t + h, &m).unwrap() - diffusivity(t - h, &m).unwrap()) / (2.0 * h);
            assert!(slope > 0.0);
        }
    }

    #[test]
    fn diffusivity_rejects_nonpositive_temperature() {
        assert!(matches!(
            diffusivity(0.0, &MaterialParams::default()),
            Err(Error::NonpositiveTemperature(_))
        ));
    }

    #[test]
    fn diffusivity_is_deterministic() {
        let m = MaterialParams::default();
        assert_eq!(
            diffusivity(351.7, &m).unwrap().to_bits(),
            diffusivity(351.7, &m).unwrap().to_bits()
        );
    }

    #[test]
    fn temperature_models() {
        let c = TemperatureModel::default();
        assert_eq!(temperature(0.0, &c).unwrap(), 350.0);
        assert_eq!(temperature(1e8, &c).unwrap(), 350.0);
        let s = TemperatureModel::standard_sinusoid();
        assert_eq!(temperature(0.0, &s).unwrap(), 350.0);
        let t = 1.25e7;
        let expected = 350.0 + 30.0 * (4e-8 * std::f64::consts::PI * t).sin();
        assert!((temperature(t, &s).unwrap() - expected).abs() < 1e-12);
        // 4e-8·π·1.25e7 = π/2, the profile peak
        assert!((temperature(t, &s).unwrap() - 380.0).abs() < 1e-9);
    }

    #[test]
    fn tabulated_interpolates_and_bounds() {
        let m = TemperatureModel::Tabulated {
            table: vec![(0.0, 300.0), (10.0, 400.0), (20.0, 350.0)],
        };
        assert_eq!(temperature(5.0, &m).unwrap(), 350.0);
        assert_eq!(temperature(10.0, &m).unwrap(), 400.0);
        assert_eq!(temperature(15.0, &m).unwrap(), 375.0);
        assert_eq!(temperature(20.0, &m).unwrap(), 350.0);
        assert!(matches!(temperature(21.0, &m), Err(Error::OutOfTable { .. })));
    }

    #[test]
    fn identity_scaling_is_identity() {
        let tree = straight_chain(&[1e-5, 2e-5], &[4e9, -1e9], &[1e-7, 1e-7]).unwrap();
        let m = MaterialParams::default();
        let p = scale_problem(&tree, &m, &ScalingFactors::IDENTITY, 350.0).unwrap();
        let si = node_contexts(&tree, &m, 350.0).unwrap();
        assert_eq!(p.contexts, si);
        assert_eq!(unscale_stress(1.234e8, &ScalingFactors::IDENTITY), 1.234e8);
    }

    #[test]
    fn default_scaling_gives_order_one_magnitudes() {
        let tree = straight_chain(&[1e-5, 2e-5], &[4e9, -1e9], &[1e-7, 1e-7]).unwrap();
        let p = scale_problem(&tree, &MaterialParams::default(), &ScalingFactors::default(), 350.0).unwrap();
        let s = &p.contexts.segments[0];
        assert!((s.length - 1.0).abs() < 1e-12);
        assert!((s.drive - 16.036).abs() < 1e-3);
        assert!((s.kappa - 0.141_36).abs() < 1e-4);
        let f = ScalingFactors::default();
        assert!((unscale_stress(f.stress(3.3e8), &f) - 3.3e8).abs() < 1e-6);
    }
}
