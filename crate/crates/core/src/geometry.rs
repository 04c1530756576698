//! Interconnect trees: 1-D metal segments joined at nodes.
//!
//! Every segment runs from its *preceding* node (local `x = 0`) to its
//! *subsequent* node (local `x = L`). A node's incident list records which end
//! of each segment touches it; that side fixes the orientation sign used in
//! the flux balance at the node:
//!
//! ```text
//!   s = +1   node is the segment's subsequent end (x = L)
//!   s = -1   node is the segment's preceding end  (x = 0)
//! ```
//!
//! so that `Σ s_m w_m (∂σ_m/∂x + G_m) = 0` expresses atom conservation.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{em_driving_force, MaterialParams};

/// Largest number of segments allowed to meet at one node.
pub const MAX_DEGREE: usize = 4;

const LENGTH_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Prev,
    Next,
}

impl Side {
    /// Orientation sign of a segment end at a node.
    pub fn sign(self) -> f64 {
        match self {
            Side::Prev => -1.0,
            Side::Next => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub node_prev: usize,
    pub node_next: usize,
    pub length_m: f64,
    pub width_m: f64,
    /// Signed current density along the segment's prev→next direction, A/m².
    pub current_density: f64,
    #[serde(default)]
    pub orientation: Orientation,
}

/// Raw node declaration: an id and a position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: usize,
    pub coord: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub coord: [f64; 2],
    /// Incident segment ends, sorted by segment id.
    pub incident: Vec<(usize, Side)>,
    pub is_terminal: bool,
}

impl Node {
    pub fn degree(&self) -> usize {
        self.incident.len()
    }
}

/// A validated, connected graph of segments. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectTree {
    segments: Vec<Segment>,
    nodes: Vec<Node>,
}

/// Validate raw segment and node lists and assemble the tree.
///
/// Ids must be dense (`0..n`) but may arrive in any order.
pub fn build_tree(mut segments: Vec<Segment>, mut node_specs: Vec<NodeSpec>) -> Result<InterconnectTree> {
    if segments.is_empty() {
        return Err(Error::field("segments", "tree needs at least one segment"));
    }
    segments.sort_by_key(|s| s.id);
    node_specs.sort_by_key(|n| n.id);
    for (i, s) in segments.iter().enumerate() {
        if s.id != i {
            return Err(Error::field(
                format!("segments[{i}].id"),
                format!("segment ids must be dense and unique, found {}", s.id),
            ));
        }
    }
    for (i, n) in node_specs.iter().enumerate() {
        if n.id != i {
            return Err(Error::field(
                format!("nodes[{i}].id"),
                format!("node ids must be dense and unique, found {}", n.id),
            ));
        }
        if !n.coord.iter().all(|c| c.is_finite()) {
            return Err(Error::field(format!("nodes[{i}].coord"), "coordinates must be finite"));
        }
    }

    let mut nodes: Vec<Node> = node_specs
        .iter()
        .map(|n| Node {
            id: n.id,
            coord: n.coord,
            incident: Vec::new(),
            is_terminal: false,
        })
        .collect();

    for s in &segments {
        for (end, side) in [(s.node_prev, Side::Prev), (s.node_next, Side::Next)] {
            if end >= nodes.len() {
                return Err(Error::DanglingReference(format!(
                    "segment {} references missing node {end}",
                    s.id
                )));
            }
            nodes[end].incident.push((s.id, side));
        }
        if s.node_prev == s.node_next {
            return Err(Error::field(
                format!("segments[{}]", s.id),
                "preceding and subsequent node must differ",
            ));
        }
        if !(s.width_m > 0.0 && s.width_m.is_finite()) {
            return Err(Error::field(
                format!("segments[{}].width_m", s.id),
                format!("must be positive, got {}", s.width_m),
            ));
        }
        if !(s.length_m > 0.0 && s.length_m.is_finite()) {
            return Err(Error::field(
                format!("segments[{}].length_m", s.id),
                format!("must be positive, got {}", s.length_m),
            ));
        }
        if !s.current_density.is_finite() {
            return Err(Error::field(
                format!("segments[{}].current_density", s.id),
                "must be finite",
            ));
        }
        let a = nodes[s.node_prev].coord;
        let b = nodes[s.node_next].coord;
        let measured = (b[0] - a[0]).hypot(b[1] - a[1]);
        if (measured - s.length_m).abs() > LENGTH_REL_TOL * s.length_m {
            return Err(Error::GeometryMismatch {
                segment: s.id,
                declared_m: s.length_m,
                measured_m: measured,
            });
        }
    }

    for n in &mut nodes {
        if n.incident.is_empty() {
            return Err(Error::DisconnectedGraph(n.id));
        }
        if n.incident.len() > MAX_DEGREE {
            return Err(Error::DegreeExceeded {
                node: n.id,
                degree: n.incident.len(),
            });
        }
        n.incident.sort_by_key(|&(seg, side)| (seg, side == Side::Next));
        n.is_terminal = n.incident.len() == 1;
    }

    // Breadth-first reachability from node 0.
    let mut seen = vec![false; nodes.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &(seg, _) in &nodes[v].incident {
            let s = &segments[seg];
            let other = if s.node_prev == v { s.node_next } else { s.node_prev };
            if !seen[other] {
                seen[other] = true;
                queue.push_back(other);
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::DisconnectedGraph(missing));
    }

    Ok(InterconnectTree { segments, nodes })
}

impl InterconnectTree {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn segment(&self, id: usize) -> Result<&Segment> {
        self.segments
            .get(id)
            .ok_or_else(|| Error::DanglingReference(format!("segment {id}")))
    }

    pub fn junctions(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| !n.is_terminal)
    }

    pub fn terminals(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_terminal)
    }

    /// Node ids in breadth-first order from node 0.
    pub fn bfs_order(&self) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &(seg, _) in &self.nodes[v].incident {
                let s = &self.segments[seg];
                let other = if s.node_prev == v { s.node_next } else { s.node_prev };
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        order
    }

    /// Copy of the tree with new current densities (one per segment).
    pub fn with_currents(&self, currents: &[f64]) -> Result<InterconnectTree> {
        if currents.len() != self.segments.len() {
            return Err(Error::DimensionMismatch {
                expected: self.segments.len(),
                got: currents.len(),
            });
        }
        let mut tree = self.clone();
        for (s, &j) in tree.segments.iter_mut().zip(currents) {
            s.current_density = j;
        }
        Ok(tree)
    }
}

/// Map a fractional position along a segment to its local coordinate in meters.
pub fn locate(tree: &InterconnectTree, segment_id: usize, fraction: f64) -> Result<f64> {
    let seg = tree.segment(segment_id)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::OutOfRange {
            value: fraction,
            range: "[0, 1]".into(),
        });
    }
    Ok(fraction * seg.length_m)
}

/// Cartesian point of a local coordinate on a segment.
pub fn point_on_segment(tree: &InterconnectTree, segment_id: usize, x_m: f64) -> Result<[f64; 2]> {
    let seg = tree.segment(segment_id)?;
    let a = tree.nodes[seg.node_prev].coord;
    let b = tree.nodes[seg.node_next].coord;
    let f = x_m / seg.length_m;
    Ok([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])])
}

/// Zero-padded adjacency data at one node, in the unit system of whatever
/// produced it (SI from [`node_contexts`], scaled after [`TreeContexts::scaled`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeContext {
    pub node_id: usize,
    pub degree: usize,
    /// EM driving force of each incident segment.
    pub adj_g: [f64; 4],
    pub adj_w: [f64; 4],
    pub signs: [f64; 4],
    /// Incident segment ids; entries past `degree` are unused.
    pub segments: [usize; 4],
    pub coord: [f64; 2],
    /// Coordinates of the far end of each incident segment.
    pub far_coords: [[f64; 2]; 4],
}

impl NodeContext {
    pub fn is_terminal(&self) -> bool {
        self.degree == 1
    }

    /// Position of `segment` in this node's incident list.
    pub fn slot_of(&self, segment: usize, side: Side) -> Option<usize> {
        (0..self.degree).find(|&m| self.segments[m] == segment && self.signs[m] == side.sign())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentContext {
    pub segment_id: usize,
    pub length: f64,
    pub drive: f64,
    pub kappa: f64,
    pub width: f64,
    pub ctx_prev: NodeContext,
    pub ctx_next: NodeContext,
    /// Index of this segment inside `ctx_prev` / `ctx_next`.
    pub slot_prev: usize,
    pub slot_next: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeContexts {
    pub nodes: Vec<NodeContext>,
    pub segments: Vec<SegmentContext>,
}

/// Per-node and per-segment adjacency collections, built in BFS order.
///
/// `temperature_k` fixes the stress diffusivity stored on each segment.
pub fn node_contexts(tree: &InterconnectTree, material: &MaterialParams, temperature_k: f64) -> Result<TreeContexts> {
    let kappa = crate::physics::diffusivity(temperature_k, material)?;
    let mut nodes = vec![None; tree.nodes.len()];
    for v in tree.bfs_order() {
        let node = &tree.nodes[v];
        let mut ctx = NodeContext {
            node_id: v,
            degree: node.degree(),
            adj_g: [0.0; 4],
            adj_w: [0.0; 4],
            signs: [0.0; 4],
            segments: [0; 4],
            coord: node.coord,
            far_coords: [[0.0; 2]; 4],
        };
        for (m, &(seg_id, side)) in node.incident.iter().enumerate() {
            let seg = &tree.segments[seg_id];
            ctx.adj_g[m] = em_driving_force(seg.current_density, material);
            ctx.adj_w[m] = seg.width_m;
            ctx.signs[m] = side.sign();
            ctx.segments[m] = seg_id;
            let far = match side {
                Side::Prev => seg.node_next,
                Side::Next => seg.node_prev,
            };
            ctx.far_coords[m] = tree.nodes[far].coord;
        }
        nodes[v] = Some(ctx);
    }
    let nodes: Vec<NodeContext> = nodes.into_iter().map(|c| c.expect("tree is connected")).collect();

    let segments = tree
        .segments
        .iter()
        .map(|s| {
            let ctx_prev = nodes[s.node_prev];
            let ctx_next = nodes[s.node_next];
            SegmentContext {
                segment_id: s.id,
                length: s.length_m,
                drive: em_driving_force(s.current_density, material),
                kappa,
                width: s.width_m,
                slot_prev: ctx_prev.slot_of(s.id, Side::Prev).expect("incidence recorded"),
                slot_next: ctx_next.slot_of(s.id, Side::Next).expect("incidence recorded"),
                ctx_prev,
                ctx_next,
            }
        })
        .collect();
    Ok(TreeContexts { nodes, segments })
}

impl TreeContexts {
    /// Rescale lengths, coordinates, driving forces and diffusivities.
    ///
    /// `length` divides lengths and coordinates, `drive` multiplies driving
    /// forces, `kappa` multiplies diffusivities. Widths are left untouched;
    /// only their ratios enter the physics.
    pub fn rescaled(&self, length: f64, drive: f64, kappa: f64) -> TreeContexts {
        let scale_node = |c: &NodeContext| {
            let mut out = *c;
            for m in 0..4 {
                out.adj_g[m] *= drive;
                out.far_coords[m] = [c.far_coords[m][0] / length, c.far_coords[m][1] / length];
            }
            out.coord = [c.coord[0] / length, c.coord[1] / length];
            out
        };
        let nodes: Vec<NodeContext> = self.nodes.iter().map(scale_node).collect();
        let segments = self
            .segments
            .iter()
            .map(|s| SegmentContext {
                length: s.length / length,
                drive: s.drive * drive,
                kappa: s.kappa * kappa,
                ctx_prev: nodes[s.ctx_prev.node_id],
                ctx_next: nodes[s.ctx_next.node_id],
                ..*s
            })
            .collect();
        TreeContexts { nodes, segments }
    }

    pub fn with_kappa(&self, kappa: f64) -> TreeContexts {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.kappa = kappa;
        }
        out
    }
}

/// Parameters for [`generate_random_tree`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTreeSpec {
    pub n_segments: usize,
    /// Inclusive length range in meters.
    pub length_range_m: (f64, f64),
    /// Current density range in A/m²; may straddle zero.
    pub current_range: (f64, f64),
    /// Widths to draw from, meters.
    pub widths_m: Vec<f64>,
    pub seed: u64,
    /// Grow a branching tree (degree ≤ 4) instead of a straight chain.
    #[serde(default)]
    pub branching: bool,
}

impl Default for RandomTreeSpec {
    fn default() -> Self {
        RandomTreeSpec {
            n_segments: 2,
            length_range_m: (10e-6, 100e-6),
            current_range: (-1e10, 1e10),
            widths_m: vec![1e-7],
            seed: 0,
            branching: false,
        }
    }
}

/// Deterministic random interconnect for sweeps and parameterized training.
///
/// Chains run along +x. Branching trees grow on axis-aligned directions, each
/// new segment hanging off a uniformly chosen node that still has a free
/// direction.
pub fn generate_random_tree(spec: &RandomTreeSpec) -> Result<InterconnectTree> {
    let (lmin, lmax) = spec.length_range_m;
    let (jmin, jmax) = spec.current_range;
    if spec.n_segments == 0 {
        return Err(Error::InvalidSpec("n_segments must be at least 1".into()));
    }
    if !(lmin > 0.0 && lmax >= lmin && lmax.is_finite()) {
        return Err(Error::InvalidSpec(format!("bad length range [{lmin}, {lmax}]")));
    }
    if !(jmin.is_finite() && jmax.is_finite() && jmax >= jmin) {
        return Err(Error::InvalidSpec(format!("bad current range [{jmin}, {jmax}]")));
    }
    if spec.widths_m.is_empty() || spec.widths_m.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidSpec("widths must be a non-empty set of positive values".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw_len = |rng: &mut ChaCha8Rng| if lmax > lmin { rng.random_range(lmin..=lmax) } else { lmin };
    let draw_j = |rng: &mut ChaCha8Rng| if jmax > jmin { rng.random_range(jmin..=jmax) } else { jmin };

    let mut nodes = vec![NodeSpec { id: 0, coord: [0.0, 0.0] }];
    let mut segments = Vec::with_capacity(spec.n_segments);
    // Free axis directions per node: +x, -x, +y, -y.
    const DIRS: [[f64; 2]; 4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    let mut free: Vec<[bool; 4]> = vec![[true; 4]];

    for id in 0..spec.n_segments {
        let length = draw_len(&mut rng);
        let j = draw_j(&mut rng);
        let width = spec.widths_m[rng.random_range(0..spec.widths_m.len())];
        let (from, dir) = if spec.branching {
            let open: Vec<usize> = (0..nodes.len()).filter(|&v| free[v].iter().any(|&f| f)).collect();
            let from = open[rng.random_range(0..open.len())];
            let dirs: Vec<usize> = (0..4).filter(|&d| free[from][d]).collect();
            (from, dirs[rng.random_range(0..dirs.len())])
        } else {
            (nodes.len() - 1, 0)
        };
        let origin = nodes[from].coord;
        let d = DIRS[dir];
        let to = nodes.len();
        let coord = [origin[0] + d[0] * length, origin[1] + d[1] * length];
        nodes.push(NodeSpec { id: to, coord });
        free[from][dir] = false;
        let mut f = [true; 4];
        f[dir ^ 1] = false;
        free.push(f);
        // Segments point along +x / +y so that prev is the lower-left end.
        let (prev, next) = if d[0] + d[1] > 0.0 { (from, to) } else { (to, from) };
        let measured = (nodes[next].coord[0] - nodes[prev].coord[0]).hypot(nodes[next].coord[1] - nodes[prev].coord[1]);
        segments.push(Segment {
            id,
            node_prev: prev,
            node_next: next,
            length_m: measured,
            width_m: width,
            current_density: j,
            orientation: if d[0] != 0.0 { Orientation::Horizontal } else { Orientation::Vertical },
        });
    }
    build_tree(segments, nodes)
}

/// Straight chain along +x with the given lengths, currents and widths.
pub fn straight_chain(lengths_m: &[f64], currents: &[f64], widths_m: &[f64]) -> Result<InterconnectTree> {
    let n = lengths_m.len();
    if currents.len() != n || widths_m.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: currents.len().min(widths_m.len()),
        });
    }
    let mut x = 0.0;
    let mut nodes = vec![NodeSpec { id: 0, coord: [0.0, 0.0] }];
    let mut segments = Vec::with_capacity(n);
    for i in 0..n {
        let x_next = x + lengths_m[i];
        nodes.push(NodeSpec {
            id: i + 1,
            coord: [x_next, 0.0],
        });
        segments.push(Segment {
            id: i,
            node_prev: i,
            node_next: i + 1,
            length_m: x_next - x,
            width_m: widths_m[i],
            current_density: currents[i],
            orientation: Orientation::Horizontal,
        });
        x = x_next;
    }
    build_tree(segments, nodes)
}

/// Cross-shaped tree: four arms meeting at one center node.
///
/// Arms are ordered left, right, below, above. The left and lower arms end at
/// the center (center is their subsequent node), the right and upper arms
/// start there, giving orientation signs (+1, -1, +1, -1).
pub fn cross(lengths_m: [f64; 4], currents: [f64; 4], widths_m: [f64; 4]) -> Result<InterconnectTree> {
    let c = [lengths_m[0], lengths_m[2]];
    let nodes = vec![
        NodeSpec { id: 0, coord: c },
        NodeSpec { id: 1, coord: [0.0, c[1]] },
        NodeSpec { id: 2, coord: [c[0] + lengths_m[1], c[1]] },
        NodeSpec { id: 3, coord: [c[0], 0.0] },
        NodeSpec { id: 4, coord: [c[0], c[1] + lengths_m[3]] },
    ];
    let ends = [(1, 0), (0, 2), (3, 0), (0, 4)];
    let segments = (0..4)
        .map(|i| Segment {
            id: i,
            node_prev: ends[i].0,
            node_next: ends[i].1,
            length_m: lengths_m[i],
            width_m: widths_m[i],
            current_density: currents[i],
            orientation: if i < 2 { Orientation::Horizontal } else { Orientation::Vertical },
        })
        .collect();
    build_tree(segments, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn um(v: f64) -> f64 {
        v * 1e-6
    }

    fn fig3_cross() -> InterconnectTree {
        cross([um(20.0), um(10.0), um(20.0), um(30.0)], [4e9, 2e9, 1e9, 7e9], [1e-7; 4]).unwrap()
    }

    #[test]
    fn cross_has_one_degree_four_junction() {
        let tree = fig3_cross();
        let center = &tree.nodes()[0];
        assert_eq!(center.degree(), 4);
        assert!(!center.is_terminal);
        assert_eq!(tree.terminals().count(), 4);
        assert_eq!(tree.junctions().count(), 1);
    }

    #[test]
    fn collinear_pair_has_one_interior_node() {
        let tree = straight_chain(&[um(10.0), um(20.0)], &[1e9, 1e9], &[1e-7, 1e-7]).unwrap();
        let degrees: Vec<usize> = tree.nodes().iter().map(Node::degree).collect();
        assert_eq!(degrees, vec![1, 2, 1]);
    }

    #[test]
    fn disjoint_segments_are_rejected() {
        let nodes = vec![
            NodeSpec { id: 0, coord: [0.0, 0.0] },
            NodeSpec { id: 1, coord: [1e-5, 0.0] },
            NodeSpec { id: 2, coord: [3e-5, 0.0] },
            NodeSpec { id: 3, coord: [4e-5, 0.0] },
        ];
        let seg = |id, a, b| Segment {
            id,
            node_prev: a,
            node_next: b,
            length_m: 1e-5,
            width_m: 1e-7,
            current_density: 1e9,
            orientation: Orientation::Horizontal,
        };
        let err = build_tree(vec![seg(0, 0, 1), seg(1, 2, 3)], nodes).unwrap_err();
        assert!(matches!(err, Error::DisconnectedGraph(_)), "{err}");
    }

    #[test]
    fn degree_five_is_rejected() {
        let mut nodes = vec![NodeSpec { id: 0, coord: [0.0, 0.0] }];
        let mut segs = Vec::new();
        let dirs = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.6, 0.8]];
        for (i, d) in dirs.iter().enumerate() {
            nodes.push(NodeSpec {
                id: i + 1,
                coord: [d[0] * 1e-5, d[1] * 1e-5],
            });
            segs.push(Segment {
                id: i,
                node_prev: 0,
                node_next: i + 1,
                length_m: 1e-5,
                width_m: 1e-7,
                current_density: 0.0,
                orientation: Orientation::Horizontal,
            });
        }
        assert!(matches!(
            build_tree(segs, nodes),
            Err(Error::DegreeExceeded { node: 0, degree: 5 })
        ));
    }

    #[test]
    fn length_must_match_coordinates() {
        let nodes = vec![NodeSpec { id: 0, coord: [0.0, 0.0] }, NodeSpec { id: 1, coord: [1e-5, 0.0] }];
        let seg = Segment {
            id: 0,
            node_prev: 0,
            node_next: 1,
            length_m: 1.1e-5,
            width_m: 1e-7,
            current_density: 0.0,
            orientation: Orientation::Horizontal,
        };
        assert!(matches!(build_tree(vec![seg], nodes), Err(Error::GeometryMismatch { .. })));
    }

    #[test]
    fn missing_node_is_dangling() {
        let nodes = vec![NodeSpec { id: 0, coord: [0.0, 0.0] }];
        let seg = Segment {
            id: 0,
            node_prev: 0,
            node_next: 7,
            length_m: 1e-5,
            width_m: 1e-7,
            current_density: 0.0,
            orientation: Orientation::Horizontal,
        };
        assert!(matches!(build_tree(vec![seg], nodes), Err(Error::DanglingReference(_))));
    }

    #[test]
    fn cross_center_signs_alternate() {
        let tree = fig3_cross();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        let center = ctx.nodes[0];
        assert_eq!(center.degree, 4);
        assert_eq!(center.signs, [1.0, -1.0, 1.0, -1.0]);
        assert!(center.adj_w.iter().all(|&w| w == 1e-7));
    }

    #[test]
    fn terminal_context_has_single_entry() {
        let tree = straight_chain(&[um(10.0)], &[4e9], &[1e-7]).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        assert_eq!(ctx.nodes[0].degree, 1);
        assert_eq!(ctx.nodes[0].signs, [-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ctx.nodes[1].signs, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&ctx.nodes[0].adj_g[1..], &[0.0; 3]);
    }

    #[test]
    fn t_junction_signs_follow_side_rule() {
        // left arm ends at the junction, right arm starts there, lower arm ends there.
        let nodes = vec![
            NodeSpec { id: 0, coord: [0.0, 0.0] },
            NodeSpec { id: 1, coord: [1e-5, 0.0] },
            NodeSpec { id: 2, coord: [2e-5, 0.0] },
            NodeSpec { id: 3, coord: [1e-5, -1e-5] },
        ];
        let seg = |id, a, b| Segment {
            id,
            node_prev: a,
            node_next: b,
            length_m: 1e-5,
            width_m: 1e-7,
            current_density: 1e9,
            orientation: Orientation::Horizontal,
        };
        let tree = build_tree(vec![seg(0, 0, 1), seg(1, 1, 2), seg(2, 3, 1)], nodes).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        assert_eq!(&ctx.nodes[1].signs[..3], &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn contexts_are_deterministic() {
        let tree = fig3_cross();
        let m = MaterialParams::default();
        assert_eq!(node_contexts(&tree, &m, 350.0).unwrap(), node_contexts(&tree, &m, 350.0).unwrap());
    }

    #[test]
    fn segment_contexts_point_at_their_nodes() {
        let tree = fig3_cross();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        for (s, sc) in tree.segments().iter().zip(&ctx.segments) {
            assert_eq!(sc.ctx_prev.node_id, s.node_prev);
            assert_eq!(sc.ctx_next.node_id, s.node_next);
            assert_eq!(sc.ctx_prev.segments[sc.slot_prev], s.id);
            assert_eq!(sc.ctx_next.signs[sc.slot_next], 1.0);
        }
    }

    #[test]
    fn locate_maps_fractions_linearly() {
        let tree = straight_chain(&[um(20.0)], &[0.0], &[1e-7]).unwrap();
        assert_eq!(locate(&tree, 0, 0.0).unwrap(), 0.0);
        assert_eq!(locate(&tree, 0, 1.0).unwrap(), um(20.0));
        assert!((locate(&tree, 0, 0.5).unwrap() - um(10.0)).abs() < 1e-18);
        assert!(matches!(locate(&tree, 0, 1.5), Err(Error::OutOfRange { .. })));
        assert!(locate(&tree, 3, 0.5).is_err());
    }

    #[test]
    fn locate_endpoints_hit_node_coordinates() {
        let tree = fig3_cross();
        for s in tree.segments() {
            let a = point_on_segment(&tree, s.id, locate(&tree, s.id, 0.0).unwrap()).unwrap();
            let b = point_on_segment(&tree, s.id, locate(&tree, s.id, 1.0).unwrap()).unwrap();
            let pa = tree.nodes()[s.node_prev].coord;
            let pb = tree.nodes()[s.node_next].coord;
            for k in 0..2 {
                assert!((a[k] - pa[k]).abs() <= 1e-9 * s.length_m);
                assert!((b[k] - pb[k]).abs() <= 1e-9 * s.length_m);
            }
        }
    }

    #[test]
    fn random_chain_is_reproducible() {
        let spec = RandomTreeSpec {
            n_segments: 2,
            seed: 11,
            ..Default::default()
        };
        let a = generate_random_tree(&spec).unwrap();
        let b = generate_random_tree(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.segments().len(), 2);
        for s in a.segments() {
            assert!(s.length_m >= 10e-6 && s.length_m <= 100e-6 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn random_single_segment() {
        let spec = RandomTreeSpec {
            n_segments: 1,
            ..Default::default()
        };
        let tree = generate_random_tree(&spec).unwrap();
        assert_eq!(tree.terminals().count(), 2);
        assert_eq!(tree.junctions().count(), 0);
    }

    #[test]
    fn seeds_change_lengths() {
        let lengths = |seed| {
            let spec = RandomTreeSpec {
                n_segments: 3,
                seed,
                ..Default::default()
            };
            generate_random_tree(&spec)
                .unwrap()
                .segments()
                .iter()
                .map(|s| s.length_m)
                .collect::<Vec<_>>()
        };
        let differing = (0..100u64).filter(|&s| lengths(s) != lengths(s + 1000)).count();
        assert_eq!(differing, 100);
    }

    #[test]
    fn branching_trees_respect_degree_cap() {
        for seed in 0..20 {
            let spec = RandomTreeSpec {
                n_segments: 30,
                seed,
                branching: true,
                ..Default::default()
            };
            let tree = generate_random_tree(&spec).unwrap();
            assert!(tree.nodes().iter().all(|n| n.degree() <= MAX_DEGREE));
            assert_eq!(tree.nodes().len(), 31);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = RandomTreeSpec {
            n_segments: 0,
            ..Default::default()
        };
        assert!(matches!(generate_random_tree(&bad), Err(Error::InvalidSpec(_))));
        let bad = RandomTreeSpec {
            length_range_m: (-1.0, 1.0),
            ..Default::default()
        };
        assert!(matches!(generate_random_tree(&bad), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn alternating_interior_signs_cancel() {
        let tree = straight_chain(&[um(10.0), um(20.0), um(10.0)], &[1e9; 3], &[1e-7; 3]).unwrap();
        let ctx = node_contexts(&tree, &MaterialParams::default(), 350.0).unwrap();
        for n in ctx.nodes.iter().filter(|n| n.degree == 2) {
            assert_eq!(n.signs[0] + n.signs[1], 0.0);
        }
        let cross_ctx = node_contexts(&fig3_cross(), &MaterialParams::default(), 350.0).unwrap();
        assert_eq!(cross_ctx.nodes[0].signs.iter().sum::<f64>(), 0.0);
    }
}
