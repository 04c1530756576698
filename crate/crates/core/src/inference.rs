//! Stress prediction from a trained network.

use crate::dynamic::EffectiveTimeMap;
use crate::error::Result;
use crate::neural::{MlpModel, STANDARD_INPUTS};
use crate::oracle::{ProbeSet, Source, StressField, StressSample};
use crate::physics::ScaledProblem;
use crate::training::{accumulate_stress, AffineStress, QueryTable};
use crate::trial::Trial;

/// Trained network bound to one tree.
pub struct Predictor<'a> {
    pub model: &'a MlpModel,
    pub problem: &'a ScaledProblem,
    pub trial: &'a Trial,
    /// Present under time-varying temperature; contexts then hold κ₀.
    pub time_map: Option<&'a EffectiveTimeMap>,
}

impl Predictor<'_> {
    /// Time in context units for a physical time in seconds.
    pub fn context_time(&self, t_s: f64) -> Result<f64> {
        let t = match self.time_map {
            Some(map) => map.eval(t_s)?,
            None => t_s,
        };
        Ok(self.problem.factors.time(t))
    }

    /// σ in Pa at every (point, time) pair, points varying fastest.
    pub fn stress(&self, points: &[(usize, f64)], times_s: &[f64]) -> Result<Vec<f64>> {
        let extended = self.model.n_inputs() > STANDARD_INPUTS;
        let mut table = QueryTable::new(extended);
        let mut exprs = Vec::with_capacity(points.len() * times_s.len());
        let f = &self.problem.factors;
        for &t_s in times_s {
            let t = self.context_time(t_s)?;
            for &(seg, x_m) in points {
                let mut e = AffineStress::default();
                let ctx = &self.problem.contexts.segments[seg];
                accumulate_stress(self.trial, ctx, f.length(x_m), t, 1.0, 0, &mut table, &mut e)?;
                exprs.push(e);
            }
        }
        let outputs = if table.is_empty() {
            ndarray::Array2::zeros((0, 3))
        } else {
            let cache = self.model.forward_batch(table.inputs().view())?;
            cache.output().clone()
        };
        Ok(exprs.iter().map(|e| self.problem.unscale_stress(e.eval(&outputs))).collect())
    }

    pub fn field(&self, probes: &ProbeSet) -> Result<StressField> {
        let values = self.stress(&probes.points, &probes.times_s)?;
        let n = probes.points.len();
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &sigma_pa)| {
                let (segment_id, x_m) = probes.points[i % n];
                StressSample {
                    segment_id,
                    x_m,
                    t_s: probes.times_s[i / n],
                    sigma_pa,
                }
            })
            .collect();
        Ok(StressField {
            samples,
            source: Source::Trial,
        })
    }

    /// Largest stress over `points` at time `t_s`.
    pub fn max_stress(&self, points: &[(usize, f64)], t_s: f64) -> Result<f64> {
        Ok(self.stress(points, &[t_s])?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Largest |σ_a − σ_b| between adjacent segments at any junction, Pa.
    pub fn junction_mismatch(&self, times_s: &[f64]) -> Result<f64> {
        let ctx = &self.problem.contexts;
        let mut points = Vec::new();
        let mut pairs = Vec::new();
        for node in ctx.nodes.iter().filter(|n| n.degree > 1) {
            let start = points.len();
            for m in 0..node.degree {
                let seg = &ctx.segments[node.segments[m]];
                let x = if seg.ctx_next.node_id == node.node_id {
                    seg.length
                } else {
                    0.0
                };
                points.push((seg.segment_id, self.problem.factors.omega_x * x));
            }
            for m in 0..node.degree - 1 {
                pairs.push((start + m, start + m + 1));
            }
        }
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let values = self.stress(&points, times_s)?;
        let n = points.len();
        let mut worst = 0.0f64;
        for k in 0..times_s.len() {
            for &(a, b) in &pairs {
                worst = worst.max((values[k * n + a] - values[k * n + b]).abs());
            }
        }
        Ok(worst)
    }
}
