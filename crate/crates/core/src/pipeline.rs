//! End-to-end runs driven by a [`RunConfig`]: train, infer, solve the reference and compare.

use std::time::Instant;

use crate::config::RunConfig;
use crate::dynamic::EffectiveTimeMap;
use crate::error::{Error, Result};
use crate::geometry::InterconnectTree;
use crate::inference::Predictor;
use crate::neural::{CheckpointMeta, MlpModel};
use crate::oracle::{fdm_solve, nucleation_time, relative_error, ErrorReport, Nucleation, ProbeSet, StressField};
use crate::physics::{scale_problem, ScaledProblem};
use crate::training::{initial_model, train, train_parameterized, TrainReport, TrainingMode};
use crate::trial::Trial;

/// A validated config with everything derived from it.
#[derive(Debug)]
pub struct Setup {
    pub config: RunConfig,
    pub tree: InterconnectTree,
    /// Contexts at the reference temperature; κ is κ₀ under time-varying temperature.
    pub problem: ScaledProblem,
    pub trial: Trial,
    /// Effective-time map, present only for time-varying temperature.
    pub time_map: Option<EffectiveTimeMap>,
    pub probes: ProbeSet,
}

impl Setup {
    pub fn new(config: RunConfig) -> Result<Self> {
        let tree = config.validate()?;
        let t_ref = config.temperature.reference();
        let problem = scale_problem(&tree, &config.material, &config.scaling, t_ref)?;
        let trial = Trial::new(config.trial)?;
        let probes = config.probe_set(&tree);
        let time_map = if config.temperature.is_constant() {
            None
        } else {
            let horizon = probes
                .times_s
                .iter()
                .copied()
                .fold(config.training.t_steady_s.max(config.fdm.t_end_s), f64::max);
            Some(EffectiveTimeMap::new(&config.temperature, &config.material, horizon)?)
        };
        Ok(Setup {
            config,
            tree,
            problem,
            trial,
            time_map,
            probes,
        })
    }

    /// Training horizon in seconds of effective time.
    pub fn effective_horizon_s(&self) -> Result<f64> {
        let t = self.config.training.t_steady_s;
        match &self.time_map {
            Some(map) => map.eval(t),
            None => Ok(t),
        }
    }

    pub fn train(&self) -> Result<(MlpModel, TrainReport)> {
        let mut cfg = self.config.training.clone();
        cfg.t_steady_s = self.effective_horizon_s()?;
        let model = initial_model(&cfg)?;
        match cfg.mode {
            TrainingMode::PerCase => {
                let t_steady = self.problem.factors.time(cfg.t_steady_s);
                train(model, &self.problem.contexts, t_steady, &self.trial, &cfg)
            }
            TrainingMode::Parameterized => {
                let spec = self
                    .config
                    .random_tree
                    .clone()
                    .ok_or_else(|| Error::Config("parameterized mode needs a random_tree block".into()))?;
                train_parameterized(
                    model,
                    &spec,
                    &self.config.material,
                    &self.config.scaling,
                    self.problem.temperature_k,
                    &self.trial,
                    &cfg,
                )
            }
        }
    }

    pub fn checkpoint_meta(&self, model: &MlpModel) -> CheckpointMeta {
        CheckpointMeta {
            layer_sizes: model.layer_sizes.clone(),
            n_params: model.n_params(),
            seed: self.config.seed(),
            scaling: self.config.scaling,
            input_scale: model.input_scale.clone(),
            t_steady_s: self.config.training.t_steady_s,
            parameterized: self.config.training.mode == TrainingMode::Parameterized,
        }
    }

    /// Reject a model whose architecture differs from the configured one.
    pub fn check_model(&self, model: &MlpModel) -> Result<()> {
        let expected = self.config.training.layer_sizes();
        if model.layer_sizes != expected {
            return Err(Error::ArchitectureMismatch {
                expected,
                found: model.layer_sizes.clone(),
            });
        }
        Ok(())
    }

    pub fn predictor<'a>(&'a self, model: &'a MlpModel) -> Predictor<'a> {
        Predictor {
            model,
            problem: &self.problem,
            trial: &self.trial,
            time_map: self.time_map.as_ref(),
        }
    }

    pub fn predict(&self, model: &MlpModel, probes: &ProbeSet) -> Result<StressField> {
        self.check_model(model)?;
        self.predictor(model).field(probes)
    }

    pub fn oracle(&self, probes: &ProbeSet) -> Result<StressField> {
        fdm_solve(&self.tree, &self.config.material, &self.config.temperature, &self.config.fdm, probes)
    }

    pub fn compare(&self, model: &MlpModel) -> Result<ErrorReport> {
        let pred = self.predict(model, &self.probes)?;
        let reference = self.oracle(&self.probes)?;
        relative_error(&pred, &reference)
    }

    /// Void nucleation time of the trained model over the configured probe points.
    pub fn nucleation(&self, model: &MlpModel) -> Result<Option<Nucleation>> {
        self.check_model(model)?;
        let predictor = self.predictor(model);
        nucleation_time(
            |t| predictor.max_stress(&self.probes.points, t),
            &self.probes.times_s,
            self.config.material.sigma_crit,
        )
    }
}

/// Wall-clock timing of a closure.
pub fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NGauss,
    NC,
    Layers,
    Neurons,
    NSegments,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::NGauss,
        SweepAxis::NC,
        SweepAxis::Layers,
        SweepAxis::Neurons,
        SweepAxis::NSegments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NGauss => "n_g",
            SweepAxis::NC => "n_c",
            SweepAxis::Layers => "layers",
            SweepAxis::Neurons => "neurons",
            SweepAxis::NSegments => "n_segments",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}; expected one of n_g, n_c, layers, neurons, n_segments")))
    }

    /// Values used when none are given.
    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepAxis::NGauss => vec![8, 16, 32],
            SweepAxis::NC => vec![10, 20, 30],
            SweepAxis::Layers => vec![3, 4, 5],
            SweepAxis::Neurons => vec![30, 40, 50],
            SweepAxis::NSegments => vec![22, 58, 109],
        }
    }

    fn apply(self, cfg: &mut RunConfig, v: usize) {
        match self {
            SweepAxis::NGauss => cfg.trial.n_gauss = v,
            SweepAxis::NC => cfg.training.n_c = v,
            SweepAxis::Layers => cfg.training.hidden_layers = v,
            SweepAxis::Neurons => cfg.training.hidden_width = v,
            SweepAxis::NSegments => {
                let mut spec = cfg.random_tree.clone().unwrap_or_default();
                spec.n_segments = v;
                spec.branching = false;
                cfg.random_tree = Some(spec);
                cfg.nodes.clear();
                cfg.segments.clear();
                cfg.tree_file = None;
            }
        }
    }
}

/// Full grid over the given axes, first axis varying slowest.
pub fn sweep_grid(base: &RunConfig, axes: &[(SweepAxis, Vec<usize>)]) -> Vec<RunConfig> {
    let mut cells = vec![base.clone()];
    for (axis, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut c = c.clone();
                    axis.apply(&mut c, v);
                    c
                })
            })
            .collect();
    }
    cells
}

/// Outcome of one sweep cell.
#[derive(Debug)]
pub struct CellResult {
    pub row: crate::io::SweepRow,
    pub model: MlpModel,
    pub report: TrainReport,
    pub error: ErrorReport,
}

/// Train and compare one configuration.
pub fn run_cell(cfg: RunConfig, axis_label: &str) -> Result<CellResult> {
    let setup = Setup::new(cfg)?;
    let ((model, report), train_s) = timed(|| setup.train())?;
    let (pred, infer_s) = timed(|| setup.predict(&model, &setup.probes))?;
    let reference = setup.oracle(&setup.probes)?;
    let error = relative_error(&pred, &reference)?;
    let c = &setup.config;
    let row = crate::io::SweepRow {
        axis: axis_label.to_string(),
        n_g: c.trial.n_gauss,
        n_c: c.training.n_c,
        layers: c.training.hidden_layers,
        neurons: c.training.hidden_width,
        n_segments: setup.tree.segments().len(),
        rel_error: error.global,
        train_s,
        infer_s,
    };
    Ok(CellResult {
        row,
        model,
        report,
        error,
    })
}
