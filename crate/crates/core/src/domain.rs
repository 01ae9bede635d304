//! Shared domain types and label conventions.
//!
//! Class ids are dense in `[0, C)`. Object indices follow one convention
//! everywhere labels are produced: a stuff class `c` owns the object index `c`,
//! thing instances are numbered from `C` upwards. [`IGNORE`] marks unlabeled
//! points and is excluded from every label invariant.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for unlabeled / void points.
pub const IGNORE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    /// Coordinates in meters.
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub semantic: Option<Vec<u32>>,
    pub object: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>) -> Self {
        Self {
            positions,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks that all parallel arrays have the same length.
    pub fn check_lengths(&self) -> Result<()> {
        let n = self.len();
        let check = |name: &str, len: Option<usize>| match len {
            Some(l) if l != n => Err(Error::structural(format!(
                "{name} has {l} entries but the cloud has {n} points"
            ))),
            _ => Ok(()),
        };
        check("colors", self.colors.as_ref().map(Vec::len))?;
        check("semantic", self.semantic.as_ref().map(Vec::len))?;
        check("object", self.object.as_ref().map(Vec::len))?;
        Ok(())
    }

    /// Semantic and object arrays, or a structural error when either is missing.
    pub fn labels(&self) -> Result<(&[u32], &[u32])> {
        self.check_lengths()?;
        match (&self.semantic, &self.object) {
            (Some(s), Some(o)) => Ok((s, o)),
            _ => Err(Error::structural("point cloud carries no ground-truth labels")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub thing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassTableFile", into = "ClassTableFile")]
pub struct ClassTable {
    classes: Vec<ClassEntry>,
}

#[derive(Serialize, Deserialize)]
struct ClassTableFile {
    classes: Vec<ClassEntry>,
}

impl TryFrom<ClassTableFile> for ClassTable {
    type Error = Error;
    fn try_from(f: ClassTableFile) -> Result<Self> {
        ClassTable::new(f.classes)
    }
}

impl From<ClassTable> for ClassTableFile {
    fn from(t: ClassTable) -> Self {
        ClassTableFile { classes: t.classes }
    }
}

impl ClassTable {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::parameter("class table needs at least one class"));
        }
        if classes.len() >= IGNORE as usize {
            return Err(Error::parameter("too many classes"));
        }
        Ok(Self { classes })
    }

    /// Convenience constructor from `(name, is_thing)` pairs.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, bool)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, thing)| ClassEntry {
                    name: name.into(),
                    thing,
                })
                .collect(),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_thing(&self, class: u32) -> bool {
        self.classes[class as usize].thing
    }

    pub fn name(&self, class: u32) -> &str {
        &self.classes[class as usize].name
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.classes
    }

    /// Object index shared by every segment of stuff class `class`.
    pub fn stuff_index(&self, class: u32) -> u32 {
        debug_assert!(!self.is_thing(class));
        class
    }

    /// First object index available to thing instances.
    pub fn first_thing_index(&self) -> u32 {
        self.classes.len() as u32
    }
}

/// One broken label rule found by [`validate_ground_truth`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ClassOutOfRange { point: usize, class: u32 },
    /// Points of one object carry several classes.
    MixedClassObject { object: u32, classes: Vec<u32> },
    /// A stuff class is spread over several object indices.
    SplitStuffClass { class: u32, objects: Vec<u32> },
}

/// Checks the panoptic label convention on ground truth: one class per object,
/// one object index per stuff class. Points with an IGNORE class or object are
/// skipped.
pub fn validate_ground_truth(cloud: &PointCloud, table: &ClassTable) -> Result<Vec<Violation>> {
    let (semantic, object) = cloud.labels()?;
    let c = table.num_classes() as u32;
    let mut violations = Vec::new();
    let mut classes_of_object: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut objects_of_stuff: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();

    for (p, (&cls, &obj)) in semantic.iter().zip(object).enumerate() {
        if cls == IGNORE {
            continue;
        }
        if cls >= c {
            violations.push(Violation::ClassOutOfRange { point: p, class: cls });
            continue;
        }
        if obj == IGNORE {
            continue;
        }
        classes_of_object.entry(obj).or_default().insert(cls);
        if !table.is_thing(cls) {
            objects_of_stuff.entry(cls).or_default().insert(obj);
        }
    }
    for (object, classes) in classes_of_object {
        if classes.len() > 1 {
            violations.push(Violation::MixedClassObject {
                object,
                classes: classes.into_iter().collect(),
            });
        }
    }
    for (class, objects) in objects_of_stuff {
        if objects.len() > 1 {
            violations.push(Violation::SplitStuffClass {
                class,
                objects: objects.into_iter().collect(),
            });
        }
    }
    Ok(violations)
}

/// Row-wise softmax of a row-major `n x num_classes` score matrix.
pub fn normalize_scores(raw: &[f64], num_classes: usize) -> Result<Vec<f64>> {
    if num_classes == 0 || raw.len() % num_classes != 0 {
        return Err(Error::structural(format!(
            "{} scores do not form rows of {num_classes} classes",
            raw.len()
        )));
    }
    let mut out = Vec::with_capacity(raw.len());
    for (r, row) in raw.chunks_exact(num_classes).enumerate() {
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("row {r} holds non-finite score {v}")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let total: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Per-node signal: a class distribution and a 3D position.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSignal {
    num_classes: usize,
    class_scores: Vec<f64>,
    positions: Vec<[f64; 3]>,
}

impl NodeSignal {
    /// `class_scores` is row-major `n x num_classes`; each row must be a
    /// probability vector (nonnegative, summing to 1 within 1e-6).
    pub fn new(num_classes: usize, class_scores: Vec<f64>, positions: Vec<[f64; 3]>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::parameter("node signal needs at least one class"));
        }
        if class_scores.len() != num_classes * positions.len() {
            return Err(Error::structural(format!(
                "{} class scores for {} nodes of {num_classes} classes",
                class_scores.len(),
                positions.len()
            )));
        }
        for (r, row) in class_scores.chunks_exact(num_classes).enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::numeric(format!("class row {r} is not a nonnegative finite vector")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::numeric(format!("class row {r} sums to {s}, expected 1")));
            }
        }
        if let Some(r) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric(format!("position {r} is not finite")));
        }
        Ok(Self {
            num_classes,
            class_scores,
            positions,
        })
    }

    /// One-hot class rows from class ids.
    pub fn one_hot(num_classes: usize, classes: &[u32], positions: Vec<[f64; 3]>) -> Result<Self> {
        let mut scores = vec![0.0; classes.len() * num_classes];
        for (i, &c) in classes.iter().enumerate() {
            if c as usize >= num_classes {
                return Err(Error::parameter(format!("class {c} out of range at node {i}")));
            }
            scores[i * num_classes + c as usize] = 1.0;
        }
        Self::new(num_classes, scores, positions)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_row(&self, node: usize) -> &[f64] {
        &self.class_scores[node * self.num_classes..(node + 1) * self.num_classes]
    }

    pub fn class_scores(&self) -> &[f64] {
        &self.class_scores
    }

    pub fn position(&self, node: usize) -> [f64; 3] {
        self.positions[node]
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringParams {
    /// Cut regularization strength.
    pub lambda: f64,
    /// Weight of the squared position distance.
    pub eta: f64,
    /// Guard in the agreement-to-weight conversion.
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub split_iterations: usize,
    pub relative_energy_tolerance: f64,
    pub seed: u64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            eta: 5e-2,
            epsilon: 1e-4,
            max_outer_iterations: 10,
            split_iterations: 2,
            relative_energy_tolerance: 1e-4,
            seed: 0,
        }
    }
}

impl ClusteringParams {
    /// `lambda = 0` is accepted: it is the unregularized limit, solved directly.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::parameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::parameter(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::parameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.relative_energy_tolerance > 0.0) {
            return Err(Error::parameter("relative energy tolerance must be > 0"));
        }
        if self.split_iterations == 0 {
            return Err(Error::parameter("split_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Per-node panoptic prediction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PanopticLabels {
    pub class: Vec<u32>,
    pub object: Vec<u32>,
}

impl PanopticLabels {
    pub fn len(&self) -> usize {
        self.class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_empty()
    }

    /// Verifies the output convention: nodes sharing an object share a class,
    /// stuff nodes carry their class's reserved index, thing indices lie at or
    /// above `C`.
    pub fn check(&self, table: &ClassTable) -> Result<()> {
        if self.class.len() != self.object.len() {
            return Err(Error::structural("class and object arrays differ in length"));
        }
        let mut class_of: BTreeMap<u32, u32> = BTreeMap::new();
        for (i, (&c, &o)) in self.class.iter().zip(&self.object).enumerate() {
            if c == IGNORE || o == IGNORE {
                continue;
            }
            if c as usize >= table.num_classes() {
                return Err(Error::structural(format!("node {i} has class {c} out of range")));
            }
            if table.is_thing(c) {
                if o < table.first_thing_index() {
                    return Err(Error::structural(format!(
                        "thing node {i} uses reserved stuff index {o}"
                    )));
                }
            } else if o != table.stuff_index(c) {
                return Err(Error::structural(format!(
                    "stuff node {i} of class {c} has index {o}"
                )));
            }
            if let Some(prev) = class_of.insert(o, c) {
                if prev != c {
                    return Err(Error::structural(format!(
                        "object {o} mixes classes {prev} and {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}
