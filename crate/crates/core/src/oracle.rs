//! Implicit finite-volume reference solver and error metrics.
//!
//! Each segment is split into `ceil(L / dx)` equal cells. Nodes of the tree
//! own one shared unknown, so stress is continuous at junctions by
//! construction, and the node row is the discrete flux balance over the
//! half cells that meet there. Terminal rows carry no boundary flux, which
//! is the blocked condition `∂σ/∂x = −G`. Time stepping is backward Euler on
//! a geometric schedule; with `richardson` on, every step is repeated as two
//! half steps and the two results are extrapolated to second order.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::InterconnectTree;
use crate::physics::{diffusivity, em_driving_force, temperature, MaterialParams, ScalingFactors, TemperatureModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdmConfig {
    /// Target mesh pitch, m.
    pub dx_target_m: f64,
    /// First time step, s.
    pub dt0_s: f64,
    /// Ratio between consecutive time steps.
    pub dt_growth: f64,
    pub dt_max_s: Option<f64>,
    pub t_end_s: f64,
    pub richardson: bool,
    /// Units the solver works in internally; results are returned in SI.
    pub scaling: ScalingFactors,
}

impl Default for FdmConfig {
    fn default() -> Self {
        FdmConfig {
            dx_target_m: 5e-8,
            dt0_s: 10.0,
            dt_growth: 1.2,
            dt_max_s: None,
            t_end_s: 1e8,
            richardson: true,
            scaling: ScalingFactors::default(),
        }
    }
}

impl FdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dx_target_m > 0.0) {
            return Err(Error::field("fdm.dx_target_m", "must be positive"));
        }
        if !(self.dt0_s > 0.0) {
            return Err(Error::field("fdm.dt0_s", "must be positive"));
        }
        if !(self.dt_growth >= 1.0) {
            return Err(Error::field("fdm.dt_growth", "must be at least 1"));
        }
        if let Some(m) = self.dt_max_s {
            if !(m > 0.0) {
                return Err(Error::field("fdm.dt_max_s", "must be positive"));
            }
        }
        if !(self.t_end_s > 0.0) {
            return Err(Error::field("fdm.t_end_s", "must be positive"));
        }
        self.scaling.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Oracle,
    Trial,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Oracle => "oracle",
            Source::Trial => "trial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressSample {
    pub segment_id: usize,
    pub x_m: f64,
    pub t_s: f64,
    pub sigma_pa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressField {
    pub samples: Vec<StressSample>,
    pub source: Source,
}

impl StressField {
    /// Largest stress among the samples at time `t_s`.
    pub fn max_at(&self, t_s: f64) -> Option<f64> {
        self.samples
            .iter()
            .filter(|s| s.t_s == t_s)
            .map(|s| s.sigma_pa)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.samples.iter().map(|s| s.t_s).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

/// Where and when a stress field is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub times_s: Vec<f64>,
    /// (segment id, x in m from the preceding node).
    pub points: Vec<(usize, f64)>,
}

/// `n` logarithmically spaced values from `a` to `b` inclusive.
pub fn log_times(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![b];
    }
    let (la, lb) = (a.ln(), b.ln());
    let mut t: Vec<f64> = (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect();
    t[0] = a;
    t[n - 1] = b;
    t
}

impl ProbeSet {
    /// Both ends plus `interior` evenly spaced points on every segment.
    pub fn uniform(tree: &InterconnectTree, interior: usize, times_s: Vec<f64>) -> Self {
        let mut points = Vec::new();
        for seg in tree.segments() {
            for k in 0..=interior + 1 {
                points.push((seg.id, seg.length_m * k as f64 / (interior + 1) as f64));
            }
        }
        ProbeSet { times_s, points }
    }

    /// All nodes and 9 interior points per segment at 10 times in [1e5, 1e8] s.
    pub fn standard(tree: &InterconnectTree) -> Self {
        Self::uniform(tree, 9, log_times(1e5, 1e8, 10))
    }
}

/// Mesh of one segment in scaled units.
struct SegmentMesh {
    node_prev: usize,
    node_next: usize,
    cells: usize,
    h: f64,
    width: f64,
    drive: f64,
    /// Global index of the first interior point.
    offset: usize,
}

struct Mesh {
    segments: Vec<SegmentMesh>,
    n_nodes: usize,
    n_interior: usize,
    /// Capacity (width × control length) of every unknown; nodes first.
    capacity: Vec<f64>,
    /// Forcing per unit diffusivity; nodes first.
    forcing: Vec<f64>,
}

impl Mesh {
    fn new(tree: &InterconnectTree, material: &MaterialParams, cfg: &FdmConfig) -> Result<Self> {
        let f = &cfg.scaling;
        let n_nodes = tree.nodes().len();
        let mut segments = Vec::with_capacity(tree.segments().len());
        let mut offset = n_nodes;
        for seg in tree.segments() {
            let cells = ((seg.length_m / cfg.dx_target_m).ceil() as usize).max(2);
            segments.push(SegmentMesh {
                node_prev: seg.node_prev,
                node_next: seg.node_next,
                cells,
                h: f.length(seg.length_m) / cells as f64,
                width: seg.width_m / f.omega_x,
                drive: f.drive(em_driving_force(seg.current_density, material)),
                offset,
            });
            offset += cells - 1;
        }
        let n = offset;
        let mut capacity = vec![0.0; n];
        let mut forcing = vec![0.0; n];
        for s in &segments {
            let idx = |k: usize| -> usize {
                if k == 0 {
                    s.node_prev
                } else if k == s.cells {
                    s.node_next
                } else {
                    s.offset + k - 1
                }
            };
            for k in 0..s.cells {
                let (a, b) = (idx(k), idx(k + 1));
                capacity[a] += 0.5 * s.width * s.h;
                capacity[b] += 0.5 * s.width * s.h;
                forcing[a] += s.width * s.drive;
                forcing[b] -= s.width * s.drive;
            }
        }
        Ok(Mesh {
            segments,
            n_nodes,
            n_interior: n - n_nodes,
            capacity,
            forcing,
        })
    }

    fn len(&self) -> usize {
        self.n_nodes + self.n_interior
    }

    /// Stress at x (scaled) on segment `seg`, linear between mesh points.
    fn sample(&self, state: &[f64], seg: usize, x: f64) -> f64 {
        let s = &self.segments[seg];
        let pos = (x / s.h).clamp(0.0, s.cells as f64);
        let k = (pos.floor() as usize).min(s.cells - 1);
        let frac = pos - k as f64;
        let at = |k: usize| {
            if k == 0 {
                state[s.node_prev]
            } else if k == s.cells {
                state[s.node_next]
            } else {
                state[s.offset + k - 1]
            }
        };
        at(k) * (1.0 - frac) + at(k + 1) * frac
    }

    /// One backward-Euler step: (C + dt κ K) σ' = C σ + dt κ f.
    fn step(&self, state: &[f64], dt: f64, kappa: f64, t_new: f64) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = (0..self.len())
            .map(|i| self.capacity[i] * state[i] + dt * kappa * self.forcing[i])
            .collect();
        let nn = self.n_nodes;
        let mut schur = DMatrix::<f64>::zeros(nn, nn);
        let mut schur_rhs = DVector::<f64>::zeros(nn);
        for i in 0..nn {
            schur[(i, i)] = self.capacity[i];
            schur_rhs[i] = rhs[i];
        }
        let mut solves = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            let c = dt * kappa * s.width / s.h;
            let m = s.cells - 1;
            let diag = s.width * s.h + 2.0 * c;
            let b = &rhs[s.offset..s.offset + m];
            let mut first = vec![0.0; m];
            let mut last = vec![0.0; m];
            first[0] = c;
            last[m - 1] = c;
            let (y0, y1, y2) = tridiagonal_solve3(diag, -c, m, b, &first, &last);
            // Node rows: own conductance plus the eliminated interior.
            for (node, own, cross, y0v, own_y, cross_y) in [
                (s.node_prev, s.node_prev, s.node_next, y0[0], y1[0], y2[0]),
                (s.node_next, s.node_next, s.node_prev, y0[m - 1], y2[m - 1], y1[m - 1]),
            ] {
                schur[(node, own)] += c - c * own_y;
                schur[(node, cross)] -= c * cross_y;
                schur_rhs[node] += c * y0v;
            }
            solves.push((y0, y1, y2));
        }
        let lu = schur.clone().lu();
        let nodes = lu.solve(&schur_rhs).ok_or(Error::SingularSystem(t_new))?;
        let residual = (&schur * &nodes - &schur_rhs).amax();
        let scale = schur_rhs.amax().max(f64::MIN_POSITIVE);
        if !(residual <= 1e-8 * scale) {
            return Err(Error::StepTooLarge {
                t: t_new,
                residual: residual / scale,
            });
        }
        let mut out = vec![0.0; self.len()];
        out[..nn].copy_from_slice(nodes.as_slice());
        for (s, (y0, y1, y2)) in self.segments.iter().zip(solves) {
            let (sp, sn) = (nodes[s.node_prev], nodes[s.node_next]);
            for k in 0..s.cells - 1 {
                out[s.offset + k] = y0[k] + y1[k] * sp + y2[k] * sn;
            }
        }
        Ok(out)
    }
}

/// Solve the constant tridiagonal system (diag, off) against three right-hand sides.
fn tridiagonal_solve3(diag: f64, off: f64, m: usize, b0: &[f64], b1: &[f64], b2: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut cp = vec![0.0; m];
    let mut denom = vec![0.0; m];
    denom[0] = diag;
    for k in 1..m {
        cp[k - 1] = off / denom[k - 1];
        denom[k] = diag - off * cp[k - 1];
    }
    let solve = |b: &[f64]| {
        let mut y = vec![0.0; m];
        y[0] = b[0] / denom[0];
        for k in 1..m {
            y[k] = (b[k] - off * y[k - 1]) / denom[k];
        }
        for k in (0..m - 1).rev() {
            y[k] -= cp[k] * y[k + 1];
        }
        y
    };
    (solve(b0), solve(b1), solve(b2))
}

/// March from 0 to every requested time; `substeps` splits each step.
fn march(
    mesh: &Mesh,
    times_scaled: &[f64],
    kappa_at: &dyn Fn(f64) -> Result<f64>,
    cfg: &FdmConfig,
    substeps: usize,
) -> Result<Vec<Vec<f64>>> {
    let f = &cfg.scaling;
    let mut dt = f.time(cfg.dt0_s);
    let dt_max = cfg.dt_max_s.map(|d| f.time(d));
    let mut state = vec![0.0; mesh.len()];
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times_scaled.len());
    for &target in times_scaled {
        if target <= 0.0 {
            out.push(vec![0.0; mesh.len()]);
            continue;
        }
        while t < target {
            let step = if target - t <= dt * (1.0 + 1e-12) { target - t } else { dt };
            let sub = step / substeps as f64;
            for k in 1..=substeps {
                let t_new = if k == substeps { t + step } else { t + sub * k as f64 };
                state = mesh.step(&state, sub, kappa_at(t_new)?, t_new)?;
            }
            t = if target - t == step { target } else { t + step };
            dt *= cfg.dt_growth;
            if let Some(m) = dt_max {
                dt = dt.min(m);
            }
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Solve Korhonen's equation on the tree and sample the stress at the probes.
pub fn fdm_solve(
    tree: &InterconnectTree,
    material: &MaterialParams,
    temp: &TemperatureModel,
    cfg: &FdmConfig,
    probes: &ProbeSet,
) -> Result<StressField> {
    cfg.validate()?;
    material.validate()?;
    temp.validate()?;
    let f = cfg.scaling;
    let mut times: Vec<f64> = probes.times_s.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if let Some(&last) = times.last() {
        if last > cfg.t_end_s * (1.0 + 1e-12) {
            return Err(Error::OutOfRange {
                value: last,
                range: format!("[0, {}] s (fdm.t_end_s)", cfg.t_end_s),
            });
        }
    }
    for &(seg, x) in &probes.points {
        let l = tree.segment(seg)?.length_m;
        if !(-1e-12 * l..=l * (1.0 + 1e-12)).contains(&x) {
            return Err(Error::OutOfRange {
                value: x,
                range: format!("[0, {l}] m on segment {seg}"),
            });
        }
    }
    let mesh = Mesh::new(tree, material, cfg)?;
    let scaled: Vec<f64> = times.iter().map(|&t| f.time(t)).collect();
    let kappa_at = |ts: f64| -> Result<f64> { Ok(f.kappa(diffusivity(temperature(f.unscale_time(ts), temp)?, material)?)) };
    let coarse = march(&mesh, &scaled, &kappa_at, cfg, 1)?;
    let states = if cfg.richardson {
        let fine = march(&mesh, &scaled, &kappa_at, cfg, 2)?;
        coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| a.iter().zip(b).map(|(a, b)| 2.0 * b - a).collect())
            .collect()
    } else {
        coarse
    };
    let mut samples = Vec::with_capacity(probes.points.len() * probes.times_s.len());
    for &t in &probes.times_s {
        let k = times.iter().position(|&v| v == t).expect("time was requested");
        for &(seg, x) in &probes.points {
            let sigma = mesh.sample(&states[k], seg, f.length(x));
            samples.push(StressSample {
                segment_id: seg,
                x_m: x,
                t_s: t,
                sigma_pa: crate::physics::unscale_stress(sigma, &f),
            });
        }
    }
    Ok(StressField {
        samples,
        source: Source::Oracle,
    })
}

/// Per-unknown capacities and the raw state after marching, for conservation checks.
pub fn fdm_weighted_total(tree: &InterconnectTree, material: &MaterialParams, temp: &TemperatureModel, cfg: &FdmConfig, t_s: f64) -> Result<(f64, f64)> {
    let mesh = Mesh::new(tree, material, cfg)?;
    let f = cfg.scaling;
    let kappa_at = |ts: f64| -> Result<f64> { Ok(f.kappa(diffusivity(temperature(f.unscale_time(ts), temp)?, material)?)) };
    let state = march(&mesh, &[f.time(t_s)], &kappa_at, cfg, 1)?.remove(0);
    let total: f64 = mesh.capacity.iter().zip(&state).map(|(c, s)| c * s).sum();
    let scale: f64 = mesh.capacity.iter().zip(&state).map(|(c, s)| (c * s).abs()).sum();
    Ok((total, scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub global: f64,
    /// (time, relative error over the samples at that time).
    pub per_time: Vec<(f64, f64)>,
    /// The reference norm was zero, so `global` is an absolute norm.
    pub zero_reference: bool,
}

fn sample_key(s: &StressSample) -> (usize, u64, u64) {
    (s.segment_id, s.x_m.to_bits(), s.t_s.to_bits())
}

/// ‖pred − ref‖₂ / ‖ref‖₂ over matching (segment, x, t) samples.
pub fn relative_error(pred: &StressField, reference: &StressField) -> Result<ErrorReport> {
    let lookup: HashMap<_, f64> = pred.samples.iter().map(|s| (sample_key(s), s.sigma_pa)).collect();
    let mut per: Vec<(f64, f64, f64)> = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for s in &reference.samples {
        let p = *lookup.get(&sample_key(s)).ok_or_else(|| {
            Error::KeyMismatch(format!("segment {} x = {} m t = {} s", s.segment_id, s.x_m, s.t_s))
        })?;
        let d = (p - s.sigma_pa).powi(2);
        let r = s.sigma_pa.powi(2);
        num += d;
        den += r;
        match per.iter_mut().find(|e| e.0 == s.t_s) {
            Some(e) => {
                e.1 += d;
                e.2 += r;
            }
            None => per.push((s.t_s, d, r)),
        }
    }
    if lookup.len() != reference.samples.len() {
        return Err(Error::KeyMismatch(format!(
            "prediction has {} samples, reference {}",
            lookup.len(),
            reference.samples.len()
        )));
    }
    per.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ratio = |n: f64, d: f64| if d > 0.0 { (n / d).sqrt() } else { n.sqrt() };
    Ok(ErrorReport {
        global: ratio(num, den),
        per_time: per.iter().map(|&(t, n, d)| (t, ratio(n, d))).collect(),
        zero_reference: den == 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nucleation {
    pub t_s: f64,
    /// The max-stress trajectory was not monotone over the probes, so the
    /// crossing came from a dense scan instead of bisection.
    pub non_monotone: bool,
}

/// Earliest time at which `max_stress(t)` reaches `sigma_crit`.
///
/// The crossing is bracketed by the probe times and refined by bisection to
/// 1% relative; if the probed trajectory decreases anywhere, the bracket is
/// scanned densely instead.
pub fn nucleation_time(
    mut max_stress: impl FnMut(f64) -> Result<f64>,
    probe_times: &[f64],
    sigma_crit: f64,
) -> Result<Option<Nucleation>> {
    let mut times = probe_times.to_vec();
    times.sort_by(f64::total_cmp);
    let values: Vec<f64> = times.iter().map(|&t| max_stress(t)).collect::<Result<_>>()?;
    let Some(k) = values.iter().position(|&v| v >= sigma_crit) else {
        return Ok(None);
    };
    let lo0 = if k == 0 { 0.0 } else { times[k - 1] };
    let hi0 = times[k];
    let monotone = values.windows(2).all(|w| w[1] >= w[0]);
    if monotone {
        let (mut lo, mut hi) = (lo0, hi0);
        while hi - lo > 0.01 * hi * 0.5 {
            let mid = 0.5 * (lo + hi);
            if max_stress(mid)? >= sigma_crit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Ok(Some(Nucleation {
            t_s: hi,
            non_monotone: false,
        }));
    }
    log::warn!("max stress is not monotone over the probe times; scanning densely");
    let n = 1000;
    for i in 1..=n {
        let t = lo0 + (hi0 - lo0) * i as f64 / n as f64;
        if max_stress(t)? >= sigma_crit {
            return Ok(Some(Nucleation {
                t_s: t,
                non_monotone: true,
            }));
        }
    }
    Ok(Some(Nucleation {
        t_s: hi0,
        non_monotone: true,
    }))
}
