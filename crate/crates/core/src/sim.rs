//! Synthetic fault scenarios on layered call graphs.
//!
//! A [`Topology`] is a layered acyclic call graph. [`gen_window`] draws a
//! baseline of per-service random walks plus noise, thins the base edges per
//! step, and injects one of four fault patterns. Fault impact travels from a
//! callee to its callers (reversed call edges), one hop every
//! `propagation_delay_steps`, scaled by `propagation_attenuation` per hop.
//!
//! Randomness is split into independent streams per window seed, so windows
//! of different classes drawn with the same seed share their baseline, their
//! edges and their primary fault root.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphseq::{Dataset, Edge, GraphWindow, Manifest};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

const STREAM_BASELINE: u64 = 1;
const STREAM_EDGES: u64 = 2;
const STREAM_FAULT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_TOPOLOGY: u64 = 5;

pub const LATENCY_CHANNEL: usize = 0;
pub const ERROR_CHANNEL: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultClass {
    Normal,
    SinglePoint,
    Cascade,
    CommonCause,
}

impl FaultClass {
    pub const ALL: [FaultClass; 4] = [
        FaultClass::Normal,
        FaultClass::SinglePoint,
        FaultClass::Cascade,
        FaultClass::CommonCause,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        FaultClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::Normal => "NORMAL",
            FaultClass::SinglePoint => "SINGLE_POINT",
            FaultClass::Cascade => "CASCADE",
            FaultClass::CommonCause => "COMMON_CAUSE",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        FaultClass::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    num_services: usize,
    layers: Vec<usize>,
    base_edges: Vec<Edge>,
    edge_keep_prob: f64,
}

impl Topology {
    /// Checks that every edge goes from a shallower to a deeper layer.
    pub fn new(layers: Vec<usize>, base_edges: Vec<Edge>, edge_keep_prob: f64) -> Result<Self> {
        let n = layers.len();
        if n == 0 {
            return Err(Error::validation("topology", "no services"));
        }
        if !(0.0..=1.0).contains(&edge_keep_prob) {
            return Err(Error::validation("topology", "edge_keep_prob must lie in [0, 1]"));
        }
        for &(c, d) in &base_edges {
            if c >= n || d >= n {
                return Err(Error::validation("topology", format!("edge ({c}, {d}) out of range")));
            }
            if layers[c] >= layers[d] {
                return Err(Error::validation(
                    "topology",
                    format!("edge ({c}, {d}) does not point to a deeper layer"),
                ));
            }
        }
        let mut base_edges = base_edges;
        base_edges.sort_unstable();
        base_edges.dedup();
        Ok(Topology {
            num_services: n,
            layers,
            base_edges,
            edge_keep_prob,
        })
    }

    /// Single chain `0 → 1 → … → n-1`, one service per layer.
    pub fn chain(n: usize, edge_keep_prob: f64) -> Result<Self> {
        Topology::new((0..n).collect(), (1..n).map(|i| (i - 1, i)).collect(), edge_keep_prob)
    }

    pub fn num_services(&self) -> usize {
        self.num_services
    }

    pub fn layer(&self, s: usize) -> usize {
        self.layers[s]
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn base_edges(&self) -> &[Edge] {
        &self.base_edges
    }

    pub fn edge_keep_prob(&self) -> f64 {
        self.edge_keep_prob
    }

    pub fn with_edge_keep_prob(mut self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation("topology", "edge_keep_prob must lie in [0, 1]"));
        }
        self.edge_keep_prob = p;
        Ok(self)
    }

    pub fn callers(&self, s: usize) -> Vec<usize> {
        self.base_edges.iter().filter(|e| e.1 == s).map(|e| e.0).collect()
    }

    pub fn callees(&self, s: usize) -> Vec<usize> {
        self.base_edges.iter().filter(|e| e.0 == s).map(|e| e.1).collect()
    }

    /// Services reachable from `s` along call edges, excluding `s`.
    pub fn descendants(&self, s: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = self.callees(s);
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(self.callees(v));
            }
        }
        seen
    }

    /// Services not in the top layer.
    pub fn deep_services(&self) -> Vec<usize> {
        (0..self.num_services).filter(|&s| self.layers[s] > 0).collect()
    }
}

fn layer_of(s: usize, num_services: usize, num_layers: usize) -> usize {
    s * num_layers / num_services
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Layered acyclic call graph. Services are split into contiguous layers in
/// index order; every service below the top layer gets one caller from the
/// layer above, every service above the bottom layer calls up to `branching`
/// services in the next layer, and components are then joined top to second.
pub fn gen_topology(num_services: usize, num_layers: usize, branching: usize, seed: u64) -> Result<Topology> {
    if num_layers < 2 || num_services < num_layers {
        return Err(Error::Config(format!(
            "cannot lay out {num_services} services in {num_layers} layers (need services >= layers >= 2)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_TOPOLOGY);
    let layers: Vec<usize> = (0..num_services).map(|s| layer_of(s, num_services, num_layers)).collect();
    let members: Vec<Vec<usize>> = (0..num_layers)
        .map(|l| (0..num_services).filter(|&s| layers[s] == l).collect())
        .collect();

    let mut edges = BTreeSet::new();
    for l in 1..num_layers {
        for &s in &members[l] {
            let caller = *members[l - 1].choose(&mut rng).expect("layers are non-empty");
            edges.insert((caller, s));
        }
    }
    for l in 0..num_layers - 1 {
        for &s in &members[l] {
            let fan_out = branching.min(members[l + 1].len());
            for &callee in members[l + 1].choose_multiple(&mut rng, fan_out) {
                edges.insert((s, callee));
            }
        }
    }

    // Every component holds a top-layer service and one of its callees, so
    // linking a top service to another component's second-layer service
    // merges the two.
    loop {
        let mut parent: Vec<usize> = (0..num_services).collect();
        for &(a, b) in &edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let root0 = find(&mut parent, 0);
        let Some(other) = (0..num_services).find(|&s| layers[s] == 0 && find(&mut parent, s) != root0) else {
            break;
        };
        let target = members[1]
            .iter()
            .copied()
            .find(|&s| find(&mut parent, s) == root0)
            .expect("component of service 0 reaches the second layer");
        edges.insert((other, target));
    }

    Topology::new(layers, edges.into_iter().collect(), DEFAULT_EDGE_KEEP_PROB)
}

pub const DEFAULT_EDGE_KEEP_PROB: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub num_services: usize,
    pub num_layers: usize,
    pub branching: usize,
    pub edge_keep_prob: f64,
    /// One topology for the whole dataset instead of a fresh one per window.
    pub shared: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            num_services: 12,
            num_layers: 3,
            branching: 2,
            edge_keep_prob: DEFAULT_EDGE_KEEP_PROB,
            shared: false,
        }
    }
}

impl TopologyConfig {
    pub fn build(&self, seed: u64) -> Result<Topology> {
        gen_topology(self.num_services, self.num_layers, self.branching, seed)?.with_edge_keep_prob(self.edge_keep_prob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_steps: usize,
    /// Latency, error rate and utilization channels, then pure-noise channels.
    pub feat_dim: usize,
    pub noise_std: f64,
    /// Step size of the per-service baseline random walk.
    pub walk_std: f64,
    /// Earliest onset step; the actual onset is drawn from
    /// `fault_onset_step ..= fault_onset_step + onset_jitter`, capped at `T-1`.
    pub fault_onset_step: usize,
    pub onset_jitter: usize,
    pub fault_magnitude: f64,
    /// Relative spread of drawn magnitudes: `magnitude × U[1-spread, 1+spread]`.
    pub magnitude_spread: f64,
    pub propagation_delay_steps: usize,
    pub propagation_attenuation: f64,
    pub common_cause_min_roots: usize,
    pub common_cause_max_roots: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_steps: 8,
            feat_dim: 6,
            noise_std: 0.1,
            walk_std: 0.05,
            fault_onset_step: 2,
            onset_jitter: 2,
            fault_magnitude: 1.0,
            magnitude_spread: 0.3,
            propagation_delay_steps: 1,
            propagation_attenuation: 0.7,
            common_cause_min_roots: 2,
            common_cause_max_roots: 3,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if self.num_steps == 0 {
            return fail("num_steps must be at least 1");
        }
        if self.feat_dim < 3 {
            return fail("feat_dim must be at least 3");
        }
        if self.fault_onset_step >= self.num_steps {
            return fail("fault_onset_step must be below num_steps");
        }
        if !(self.propagation_attenuation > 0.0 && self.propagation_attenuation < 1.0) {
            return fail("propagation_attenuation must lie in (0, 1)");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !(self.walk_std >= 0.0 && self.walk_std.is_finite()) {
            return fail("noise_std and walk_std must be finite and non-negative");
        }
        if !self.fault_magnitude.is_finite() {
            return fail("fault_magnitude must be finite");
        }
        if !(0.0..1.0).contains(&self.magnitude_spread) {
            return fail("magnitude_spread must lie in [0, 1)");
        }
        if self.common_cause_min_roots < 2 || self.common_cause_max_roots < self.common_cause_min_roots {
            return fail("common-cause root range must satisfy 2 <= min <= max");
        }
        Ok(())
    }

    pub fn feat_names(&self) -> Vec<String> {
        let mut names = vec!["latency".to_string(), "error_rate".to_string(), "utilization".to_string()];
        names.extend((3..self.feat_dim).map(|k| format!("noise_{}", k - 3)));
        names
    }
}

/// Ground-truth spread from a set of faulty services.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    /// Hop distance to the nearest root, `None` if unreachable.
    pub hops: Vec<Option<usize>>,
    /// First affected step per service, `None` if never within the window.
    pub first_step: Vec<Option<usize>>,
    /// `T×N` injected severity.
    pub severity: Vec<Vec<f64>>,
}

impl Propagation {
    pub fn affected(&self, t: usize) -> Vec<usize> {
        (0..self.first_step.len())
            .filter(|&s| self.first_step[s].is_some_and(|f| f <= t))
            .collect()
    }

    pub fn affected_per_step(&self) -> Vec<Vec<usize>> {
        (0..self.severity.len()).map(|t| self.affected(t)).collect()
    }
}

/// Breadth-first spread from `roots` along reversed call edges: a service at
/// hop `h` is affected from `onset + h·delay` with severity
/// `magnitude · attenuation^h`; nothing spreads past the window end.
#[allow(clippy::too_many_arguments)]
pub fn spread(
    topology: &Topology,
    roots: &[usize],
    num_steps: usize,
    onset: usize,
    magnitude: f64,
    delay: usize,
    attenuation: f64,
) -> Result<Propagation> {
    let n = topology.num_services();
    if let Some(&bad) = roots.iter().find(|&&r| r >= n) {
        return Err(Error::validation("roots", format!("service {bad} out of range for {n} services")));
    }
    let mut hops = vec![None; n];
    let mut queue = VecDeque::new();
    for &r in roots {
        if hops[r].is_none() {
            hops[r] = Some(0);
            queue.push_back(r);
        }
    }
    while let Some(s) = queue.pop_front() {
        let h = hops[s].expect("queued services have a hop count");
        for c in topology.callers(s) {
            if hops[c].is_none() {
                hops[c] = Some(h + 1);
                queue.push_back(c);
            }
        }
    }
    let first_step: Vec<Option<usize>> = hops
        .iter()
        .map(|h| {
            h.and_then(|h: usize| h.checked_mul(delay))
                .and_then(|d| d.checked_add(onset))
                .filter(|&f| f < num_steps)
        })
        .collect();
    let severity = (0..num_steps)
        .map(|t| {
            (0..n)
                .map(|s| match (first_step[s], hops[s]) {
                    (Some(f), Some(h)) if f <= t => magnitude * attenuation.powi(h as i32),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    Ok(Propagation {
        hops,
        first_step,
        severity,
    })
}

/// [`spread`] with the onset, magnitude, delay and attenuation of `config`.
pub fn propagation_oracle(topology: &Topology, roots: &[usize], config: &ScenarioConfig) -> Result<Propagation> {
    spread(
        topology,
        roots,
        config.num_steps,
        config.fault_onset_step,
        config.fault_magnitude,
        config.propagation_delay_steps,
        config.propagation_attenuation,
    )
}

/// The fault actually drawn for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub class: FaultClass,
    pub roots: Vec<usize>,
    pub onset: usize,
    /// Magnitude of the primary root; common-cause roots draw their own.
    pub magnitude: f64,
    /// `T×N` severity added to the latency and error channels.
    pub severity: Vec<Vec<f64>>,
}

impl Scenario {
    /// Services with nonzero injected severity at each step.
    pub fn affected_per_step(&self) -> Vec<Vec<usize>> {
        self.severity
            .iter()
            .map(|row| (0..row.len()).filter(|&s| row[s] != 0.0).collect())
            .collect()
    }
}

/// Per-window diagnostics sidecar record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub class: String,
    pub roots: Vec<usize>,
    pub affected_per_step: Vec<Vec<usize>>,
}

impl GroundTruth {
    /// First step at which each service appears, if ever.
    pub fn first_affected(&self, num_services: usize) -> Vec<Option<usize>> {
        let mut first = vec![None; num_services];
        for (t, step) in self.affected_per_step.iter().enumerate() {
            for &s in step {
                if s < num_services && first[s].is_none() {
                    first[s] = Some(t);
                }
            }
        }
        first
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw_magnitude(rng: &mut ChaCha8Rng, config: &ScenarioConfig) -> f64 {
    let s = config.magnitude_spread;
    config.fault_magnitude * rng.gen_range(1.0 - s..=1.0 + s)
}

fn pick_common_roots(topology: &Topology, first: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let reach: Vec<BTreeSet<usize>> = (0..topology.num_services()).map(|s| topology.descendants(s)).collect();
    let independent = |a: usize, b: usize| a != b && !reach[a].contains(&b) && !reach[b].contains(&a);
    let mut pool = topology.deep_services();
    if pool.len() < k {
        pool = (0..topology.num_services()).collect();
    }
    for _ in 0..64 {
        pool.shuffle(rng);
        let mut chosen = vec![first];
        for &s in &pool {
            if chosen.len() == k {
                break;
            }
            if chosen.iter().all(|&c| independent(c, s)) {
                chosen.push(s);
            }
        }
        if chosen.len() == k {
            chosen.sort_unstable();
            return Some(chosen);
        }
    }
    None
}

/// Draws the fault for `class`. The onset, primary magnitude and primary
/// root come first from the fault stream, so they agree across classes.
pub fn draw_scenario(topology: &Topology, class: FaultClass, config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let n = topology.num_services();
    let t_len = config.num_steps;
    let mut rng = stream(seed, STREAM_FAULT);
    let latest = (config.fault_onset_step + config.onset_jitter).min(t_len - 1);
    let onset = rng.gen_range(config.fault_onset_step..=latest);
    let magnitude = draw_magnitude(&mut rng, config);
    let deep = topology.deep_services();
    let candidates: Vec<usize> = if deep.is_empty() { (0..n).collect() } else { deep };
    let primary = *candidates.choose(&mut rng).expect("topology has services");

    let mut severity = vec![vec![0.0; n]; t_len];
    let roots = match class {
        FaultClass::Normal => Vec::new(),
        FaultClass::SinglePoint => {
            for row in &mut severity[onset..] {
                row[primary] = magnitude;
            }
            vec![primary]
        }
        FaultClass::Cascade => {
            let p = spread(
                topology,
                &[primary],
                t_len,
                onset,
                magnitude,
                config.propagation_delay_steps,
                config.propagation_attenuation,
            )?;
            severity = p.severity;
            vec![primary]
        }
        FaultClass::CommonCause => {
            let k = rng.gen_range(config.common_cause_min_roots..=config.common_cause_max_roots);
            let roots = pick_common_roots(topology, primary, k, &mut rng).ok_or_else(|| {
                Error::Config(format!("topology with {n} services has no {k} mutually independent services"))
            })?;
            for &r in &roots {
                let m = if r == primary { magnitude } else { draw_magnitude(&mut rng, config) };
                for row in &mut severity[onset..] {
                    row[r] = m;
                }
            }
            roots
        }
    };
    Ok(Scenario {
        class,
        roots,
        onset,
        magnitude,
        severity,
    })
}

/// Baseline features `[t][i][k]`: a per-service, per-channel random walk
/// around a random level, plus independent Gaussian noise.
pub fn baseline_features(num_services: usize, config: &ScenarioConfig, seed: u64) -> Vec<f64> {
    let (t_len, d) = (config.num_steps, config.feat_dim);
    let mut rng = stream(seed, STREAM_BASELINE);
    let level_dist = Normal::new(0.0, 0.5).expect("valid normal");
    let walk = Normal::new(0.0, config.walk_std).expect("valid normal");
    let noise = Normal::new(0.0, config.noise_std).expect("valid normal");
    let mut level: Vec<f64> = (0..num_services * d).map(|_| level_dist.sample(&mut rng)).collect();
    let mut features = Vec::with_capacity(t_len * num_services * d);
    for t in 0..t_len {
        if t > 0 {
            for l in &mut level {
                *l += walk.sample(&mut rng);
            }
        }
        features.extend(level.iter().map(|&l| l + noise.sample(&mut rng)));
    }
    features
}

pub fn sample_edges(topology: &Topology, num_steps: usize, seed: u64) -> Vec<Vec<Edge>> {
    let mut rng = stream(seed, STREAM_EDGES);
    (0..num_steps)
        .map(|_| {
            topology
                .base_edges()
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(topology.edge_keep_prob()))
                .collect()
        })
        .collect()
}

/// One labeled window plus the fault that was drawn for it.
pub fn gen_window(
    topology: &Topology,
    class: FaultClass,
    config: &ScenarioConfig,
    seed: u64,
    id: impl Into<String>,
) -> Result<(GraphWindow, Scenario)> {
    let scenario = draw_scenario(topology, class, config, seed)?;
    let n = topology.num_services();
    let d = config.feat_dim;
    let mut features = baseline_features(n, config, seed);
    for (t, row) in scenario.severity.iter().enumerate() {
        for (s, &sev) in row.iter().enumerate() {
            let base = (t * n + s) * d;
            features[base + LATENCY_CHANNEL] += sev;
            features[base + ERROR_CHANNEL] += sev;
        }
    }
    let edges = sample_edges(topology, config.num_steps, seed);
    let window = GraphWindow::new(id, n, config.num_steps, d, features, edges, class.index(), None)?;
    Ok((window, scenario))
}

pub fn manifest(config: &ScenarioConfig) -> Manifest {
    Manifest {
        num_classes: FaultClass::ALL.len(),
        class_names: FaultClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        feat_names: config.feat_names(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub dataset: Dataset,
    /// Aligned with `dataset.windows`.
    pub truth: Vec<GroundTruth>,
}

fn window_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// `per_class` windows of each class, shuffled deterministically. Window
/// `w{k}` is the k-th generated window (classes in index order) and uses
/// seed `seed ^ k`.
pub fn gen_dataset(
    topology_config: &TopologyConfig,
    config: &ScenarioConfig,
    per_class: usize,
    seed: u64,
) -> Result<SimulatedDataset> {
    if per_class == 0 {
        return Err(Error::Config("per-class count must be at least 1".into()));
    }
    config.validate()?;
    let shared = if topology_config.shared {
        Some(topology_config.build(seed)?)
    } else {
        None
    };
    let mut items = Vec::with_capacity(per_class * FaultClass::ALL.len());
    for class in FaultClass::ALL {
        for _ in 0..per_class {
            let k = items.len();
            let wseed = window_seed(seed, k);
            let fresh;
            let topology = match &shared {
                Some(t) => t,
                None => {
                    fresh = topology_config.build(wseed)?;
                    &fresh
                }
            };
            let id = format!("w{k}");
            let (window, scenario) = gen_window(topology, class, config, wseed, id.clone())?;
            let truth = GroundTruth {
                id,
                class: class.name().to_string(),
                roots: scenario.roots.clone(),
                affected_per_step: scenario.affected_per_step(),
            };
            items.push((window, truth));
        }
    }
    items.shuffle(&mut stream(seed, STREAM_SHUFFLE));
    let (windows, truth) = items.into_iter().unzip();
    Ok(SimulatedDataset {
        dataset: Dataset::new(manifest(config), windows)?,
        truth,
    })
}

pub fn save_ground_truth(truth: &[GroundTruth], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for record in truth {
        serde_json::to_writer(&mut out, record).expect("ground truth serializes");
        out.write_all(b"\n").expect("writing to memory");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
