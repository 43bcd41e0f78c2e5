//! Dynamic graph sequences: one labeled window of per-step service features
//! and per-step caller→callee invocation edges, plus the JSONL dataset format.
//!
//! Node identity is the positional index inside a window. The node set is
//! fixed for every step of a window, but different windows in one dataset may
//! have different node counts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WINDOWS_FILE: &str = "windows.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Directed invocation edge `(caller, callee)`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GraphWindow {
    id: String,
    num_nodes: usize,
    num_steps: usize,
    feat_dim: usize,
    /// Row-major `[t][i][k]`.
    features: Vec<f64>,
    edges: Vec<Vec<Edge>>,
    label: usize,
    node_names: Option<Vec<String>>,
}

impl GraphWindow {
    /// Builds a window and checks every structural invariant except the
    /// class bound, which needs the dataset manifest (see [`validate_labels`]).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        num_nodes: usize,
        num_steps: usize,
        feat_dim: usize,
        features: Vec<f64>,
        edges: Vec<Vec<Edge>>,
        label: usize,
        node_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let window = GraphWindow {
            id: id.into(),
            num_nodes,
            num_steps,
            feat_dim,
            features,
            edges,
            label,
            node_names,
        };
        window.validate()?;
        Ok(window)
    }

    fn invalid(&self, field: &str, message: impl std::fmt::Display) -> Error {
        Error::validation(format!("window {:?}", self.id), format!("field {field}: {message}"))
    }

    fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(self.invalid("num_nodes", "must be at least 1"));
        }
        if self.num_steps == 0 {
            return Err(self.invalid("num_steps", "must be at least 1"));
        }
        if self.feat_dim == 0 {
            return Err(self.invalid("feat_dim", "must be at least 1"));
        }
        let expected = self.num_steps * self.num_nodes * self.feat_dim;
        if self.features.len() != expected {
            return Err(self.invalid(
                "features",
                format!("expected {expected} entries, found {}", self.features.len()),
            ));
        }
        if let Some(pos) = self.features.iter().position(|x| !x.is_finite()) {
            let per_step = self.num_nodes * self.feat_dim;
            return Err(self.invalid(
                "features",
                format!(
                    "non-finite value at [t={}][i={}][k={}]",
                    pos / per_step,
                    (pos % per_step) / self.feat_dim,
                    pos % self.feat_dim
                ),
            ));
        }
        if self.edges.len() != self.num_steps {
            return Err(self.invalid(
                "edges",
                format!("expected {} steps, found {}", self.num_steps, self.edges.len()),
            ));
        }
        for (t, step) in self.edges.iter().enumerate() {
            for &(caller, callee) in step {
                if caller >= self.num_nodes || callee >= self.num_nodes {
                    return Err(self.invalid(
                        "edges",
                        format!(
                            "step {t} edge ({caller}, {callee}) out of range for {} nodes",
                            self.num_nodes
                        ),
                    ));
                }
            }
        }
        if let Some(names) = &self.node_names {
            if names.len() != self.num_nodes {
                return Err(self.invalid(
                    "node_names",
                    format!("expected {} names, found {}", self.num_nodes, names.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn node_names(&self) -> Option<&[String]> {
        self.node_names.as_deref()
    }

    /// Display name for node `i`: its service name when present, else `s{i}`.
    pub fn node_name(&self, i: usize) -> String {
        match &self.node_names {
            Some(names) => names[i].clone(),
            None => format!("s{i}"),
        }
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// All node features at step `t`, row-major `[i][k]`.
    pub fn step_features(&self, t: usize) -> &[f64] {
        let per_step = self.num_nodes * self.feat_dim;
        &self.features[t * per_step..(t + 1) * per_step]
    }

    pub fn feature(&self, t: usize, i: usize) -> &[f64] {
        let start = (t * self.num_nodes + i) * self.feat_dim;
        &self.features[start..start + self.feat_dim]
    }

    pub fn edges(&self, t: usize) -> &[Edge] {
        &self.edges[t]
    }

    pub fn all_edges(&self) -> &[Vec<Edge>] {
        &self.edges
    }

    pub fn adjacency(&self, t: usize) -> Adjacency {
        // Edges were range-checked at construction.
        build_adjacency(&self.edges[t], self.num_nodes).expect("validated window")
    }

    /// Same window with a different label.
    pub fn with_label(&self, label: usize) -> GraphWindow {
        GraphWindow {
            label,
            ..self.clone()
        }
    }

    /// Same window with every step's edge set emptied.
    pub fn without_edges(&self) -> GraphWindow {
        GraphWindow {
            edges: vec![Vec::new(); self.num_steps],
            ..self.clone()
        }
    }

    fn to_record(&self) -> WindowRecord {
        let features = (0..self.num_steps)
            .map(|t| (0..self.num_nodes).map(|i| self.feature(t, i).to_vec()).collect())
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|step| step.iter().map(|&(c, d)| [c, d]).collect())
            .collect();
        WindowRecord {
            id: self.id.clone(),
            num_nodes: self.num_nodes,
            num_steps: self.num_steps,
            feat_dim: self.feat_dim,
            label: self.label,
            features,
            edges,
            node_names: self.node_names.clone(),
        }
    }

    fn from_record(rec: WindowRecord) -> Result<Self> {
        let subject = format!("window {:?}", rec.id);
        if rec.features.len() != rec.num_steps {
            return Err(Error::validation(
                subject,
                format!("field features: expected {} steps, found {}", rec.num_steps, rec.features.len()),
            ));
        }
        let mut features = Vec::with_capacity(rec.num_steps * rec.num_nodes * rec.feat_dim);
        for (t, step) in rec.features.iter().enumerate() {
            if step.len() != rec.num_nodes {
                return Err(Error::validation(
                    subject,
                    format!("field features: step {t} has {} nodes, expected {}", step.len(), rec.num_nodes),
                ));
            }
            for (i, row) in step.iter().enumerate() {
                if row.len() != rec.feat_dim {
                    return Err(Error::validation(
                        subject,
                        format!(
                            "field features: step {t} node {i} has {} entries, expected {}",
                            row.len(),
                            rec.feat_dim
                        ),
                    ));
                }
                features.extend_from_slice(row);
            }
        }
        let edges = rec
            .edges
            .into_iter()
            .map(|step| step.into_iter().map(|[c, d]| (c, d)).collect())
            .collect();
        GraphWindow::new(
            rec.id,
            rec.num_nodes,
            rec.num_steps,
            rec.feat_dim,
            features,
            edges,
            rec.label,
            rec.node_names,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowRecord {
    id: String,
    num_nodes: usize,
    num_steps: usize,
    feat_dim: usize,
    label: usize,
    features: Vec<Vec<Vec<f64>>>,
    edges: Vec<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_names: Option<Vec<String>>,
}

/// Binary adjacency for one step: entry `(i, j)` is set when `j` calls `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    entries: Vec<bool>,
}

impl Adjacency {
    pub fn zeros(n: usize) -> Self {
        Adjacency {
            n,
            entries: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j]
    }

    pub fn edge_count(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }

    /// Ascending indices `j` with `A(i, j) = 1`, i.e. the callers of `i`.
    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        assert!(i < self.n, "node index {i} out of range for {} nodes", self.n);
        let row = &self.entries[i * self.n..(i + 1) * self.n];
        row.iter()
            .enumerate()
            .filter_map(|(j, &set)| set.then_some(j))
            .collect()
    }
}

/// Builds `A` with `A(callee, caller) = 1` for every edge; duplicates collapse.
pub fn build_adjacency(edges: &[Edge], n: usize) -> Result<Adjacency> {
    let mut adj = Adjacency::zeros(n);
    for &(caller, callee) in edges {
        if caller >= n || callee >= n {
            return Err(Error::validation(
                "edge list",
                format!("edge ({caller}, {callee}) out of range for {n} nodes"),
            ));
        }
        adj.entries[callee * n + caller] = true;
    }
    Ok(adj)
}

/// Relabels node `i` as `perm[i]`: features, edges and names move together.
pub fn permute_window(window: &GraphWindow, perm: &[usize]) -> Result<GraphWindow> {
    let n = window.num_nodes;
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::validation(
            "permutation",
            format!("length {} does not match {n} nodes", perm.len()),
        ));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::validation("permutation", "not a bijection on node indices"));
        }
        seen[p] = true;
    }
    let d = window.feat_dim;
    let mut features = vec![0.0; window.features.len()];
    for t in 0..window.num_steps {
        for (i, &p) in perm.iter().enumerate() {
            let dst = (t * n + p) * d;
            features[dst..dst + d].copy_from_slice(window.feature(t, i));
        }
    }
    let edges = window
        .edges
        .iter()
        .map(|step| step.iter().map(|&(c, d)| (perm[c], perm[d])).collect())
        .collect();
    let node_names = window.node_names.as_ref().map(|names| {
        let mut out = vec![String::new(); n];
        for (i, &p) in perm.iter().enumerate() {
            out[p] = names[i].clone();
        }
        out
    });
    Ok(GraphWindow {
        features,
        edges,
        node_names,
        ..window.clone()
    })
}

/// Dataset-level sidecar describing the label space and feature channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub feat_names: Vec<String>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("manifest", "num_classes must be at least 2"));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::validation(
                "manifest",
                format!(
                    "class_names has {} entries but num_classes is {}",
                    self.class_names.len(),
                    self.num_classes
                ),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn validate_labels(windows: &[GraphWindow], num_classes: usize) -> Result<()> {
    for w in windows {
        if w.label >= num_classes {
            return Err(w.invalid("label", format!("{} not below class count {num_classes}", w.label)));
        }
    }
    Ok(())
}

/// Reads a JSONL dataset, validating every window. Blank lines are ignored.
pub fn load_windows(path: &Path) -> Result<Vec<GraphWindow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut windows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WindowRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let window = GraphWindow::from_record(rec).map_err(|e| match e {
            Error::Validation { subject, message } => Error::Validation {
                subject: format!("{subject} at {}:{}", path.display(), idx + 1),
                message,
            },
            other => other,
        })?;
        windows.push(window);
    }
    Ok(windows)
}

pub fn save_windows(windows: &[GraphWindow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for w in windows {
        let line = window_to_json(w);
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// The exact JSONL line (without newline) written for `window`.
pub fn window_to_json(window: &GraphWindow) -> String {
    serde_json::to_string(&window.to_record()).expect("window serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub windows: Vec<GraphWindow>,
}

impl Dataset {
    pub fn new(manifest: Manifest, windows: Vec<GraphWindow>) -> Result<Self> {
        manifest.validate()?;
        validate_labels(&windows, manifest.num_classes)?;
        Ok(Dataset { manifest, windows })
    }

    /// Loads `windows.jsonl` and `manifest.json` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
        let windows = load_windows(&dir.join(WINDOWS_FILE))?;
        Dataset::new(manifest, windows)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_windows(&self.windows, &dir.join(WINDOWS_FILE))?;
        self.manifest.save(&dir.join(MANIFEST_FILE))
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Shared feature width, or an error if windows disagree.
    pub fn feat_dim(&self) -> Result<usize> {
        let mut dims = self.windows.iter().map(GraphWindow::feat_dim);
        let first = dims
            .next()
            .ok_or_else(|| Error::validation("dataset", "no windows"))?;
        if dims.any(|d| d != first) {
            return Err(Error::validation("dataset", "windows disagree on feat_dim"));
        }
        Ok(first)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            manifest: self.manifest.clone(),
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
        }
    }
}

/// Random valid window: standard-normal features, and each ordered pair of
/// distinct nodes present as an edge with probability `edge_prob` per step.
pub fn random_window(
    seed: u64,
    num_nodes: usize,
    num_steps: usize,
    feat_dim: usize,
    num_classes: usize,
    edge_prob: f64,
) -> GraphWindow {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let features = (0..num_steps * num_nodes * feat_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let edges = (0..num_steps)
        .map(|_| {
            let mut step = Vec::new();
            for caller in 0..num_nodes {
                for callee in 0..num_nodes {
                    if caller != callee && rng.gen_bool(edge_prob) {
                        step.push((caller, callee));
                    }
                }
            }
            step
        })
        .collect();
    let label = rng.gen_range(0..num_classes.max(1));
    GraphWindow::new(
        format!("random-{seed}"),
        num_nodes,
        num_steps,
        feat_dim,
        features,
        edges,
        label,
        None,
    )
    .expect("generated window is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(edges: Vec<Vec<Edge>>, n: usize) -> GraphWindow {
        let t = edges.len();
        let feats = (0..t * n * 2).map(|x| x as f64 * 0.5).collect();
        GraphWindow::new("w", n, t, 2, feats, edges, 0, None).unwrap()
    }

    #[test]
    fn adjacency_of_empty_edge_set_is_zero() {
        let a = build_adjacency(&[], 3).unwrap();
        assert_eq!(a.edge_count(), 0);
        assert!((0..3).all(|i| a.neighborhood(i).is_empty()));
    }

    #[test]
    fn adjacency_points_callee_row_at_caller_column() {
        let a = build_adjacency(&[(0, 1)], 2).unwrap();
        assert!(a.get(1, 0));
        assert!(!a.get(0, 1) && !a.get(0, 0) && !a.get(1, 1));
        assert_eq!(a.neighborhood(1), vec![0]);
        assert!(a.neighborhood(0).is_empty());
    }

    #[test]
    fn duplicate_edges_collapse() {
        let a = build_adjacency(&[(0, 1), (0, 1)], 2).unwrap();
        assert_eq!(a.edge_count(), 1);
        assert!(a.get(1, 0));
    }

    #[test]
    fn neighborhood_lists_all_callers_ascending() {
        let a = build_adjacency(&[(1, 2), (0, 2)], 3).unwrap();
        assert_eq!(a.neighborhood(2), vec![0, 1]);
    }

    #[test]
    fn self_calls_set_the_diagonal() {
        let a = build_adjacency(&[(1, 1)], 2).unwrap();
        assert!(a.get(1, 1));
        assert_eq!(a.neighborhood(1), vec![1]);
    }

    #[test]
    fn out_of_range_edge_names_the_pair() {
        let err = build_adjacency(&[(0, 3)], 3).unwrap_err();
        assert!(err.to_string().contains("(0, 3)"), "{err}");
    }

    #[test]
    fn window_rejects_bad_shapes() {
        let err = GraphWindow::new("bad", 2, 1, 2, vec![0.0; 3], vec![vec![]], 0, None).unwrap_err();
        assert!(err.to_string().contains("features"));
        let err = GraphWindow::new("bad", 2, 1, 1, vec![0.0, f64::NAN], vec![vec![]], 0, None)
            .unwrap_err();
        assert!(err.to_string().contains("non-finite"));
        let err = GraphWindow::new("edge", 2, 1, 1, vec![0.0; 2], vec![vec![(0, 2)]], 0, None)
            .unwrap_err();
        assert!(err.to_string().contains("\"edge\""));
    }

    #[test]
    fn permutation_relabels_edges_and_features() {
        let w = tiny(vec![vec![(0, 1)]], 2);
        let p = permute_window(&w, &[1, 0]).unwrap();
        assert_eq!(p.edges(0), &[(1, 0)]);
        assert_eq!(p.feature(0, 1), w.feature(0, 0));
        assert_eq!(p.label(), w.label());
        assert_eq!(permute_window(&w, &[0, 1]).unwrap(), w);
        assert_eq!(permute_window(&p, &[1, 0]).unwrap(), w);
    }

    #[test]
    fn permutation_must_be_bijective() {
        let w = tiny(vec![vec![]], 3);
        assert!(permute_window(&w, &[0, 0, 1]).is_err());
        assert!(permute_window(&w, &[0, 1]).is_err());
        assert!(permute_window(&w, &[0, 1, 3]).is_err());
    }

    #[test]
    fn labels_are_checked_against_class_count() {
        let w = tiny(vec![vec![]], 1).with_label(4);
        assert!(validate_labels(std::slice::from_ref(&w), 4).is_err());
        assert!(validate_labels(&[w], 5).is_ok());
    }

    #[test]
    fn empty_file_loads_as_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_windows(&path).unwrap().is_empty());
        save_windows(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    }

    #[test]
    fn load_reports_line_and_window_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = window_to_json(&tiny(vec![vec![(0, 1)]], 2));
        let bad = r#"{"id":"oops","num_nodes":2,"num_steps":1,"feat_dim":1,"label":0,"features":[[[0.0],[1.0]]],"edges":[[[0,2]]]}"#;
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        let err = load_windows(&path).unwrap_err().to_string();
        assert!(err.contains("oops") && err.contains(":2"), "{err}");

        std::fs::write(&path, "{not json\n").unwrap();
        match load_windows(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let w = GraphWindow::new(
            "named",
            2,
            1,
            1,
            vec![0.1, 1.0 / 3.0],
            vec![vec![(1, 0)]],
            1,
            Some(vec!["api".into(), "db".into()]),
        )
        .unwrap();
        assert_eq!(window_to_json(&w), window_to_json(&w.clone()));
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        save_windows(&[w.clone(), w.clone()], &a).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], lines[1]);
        assert_eq!(load_windows(&a).unwrap(), vec![w.clone(), w]);
    }
}
