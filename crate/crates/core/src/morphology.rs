//! Neuron morphologies as parent-indexed compartment trees.
//!
//! Compartment 0 is the root. Every other compartment `i` stores the index of
//! its parent, and the numbering guarantees `parent(i) < i`, which is what lets
//! the Hines solve run as a single backward sweep followed by a forward sweep.

use std::fmt;

use rand::Rng;
use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An acyclic compartment tree with topological numbering.
///
/// The root has no stored parent at all: `parents[i - 1]` is the parent of
/// compartment `i`, so there is no sentinel slot that could be dereferenced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Morphology {
    parents: Vec<u32>,
    branch_count: usize,
}

/// One violated morphology invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    /// Compartment 0 was given a parent.
    RootHasParent { parent: usize },
    /// A non-root compartment has no parent (a second root).
    ExtraRoot { index: usize },
    ParentOutOfRange { index: usize, parent: usize },
    /// `parent >= index`: breaks the solver-compatible numbering.
    Numbering { index: usize, parent: usize },
    /// Compartment on a parent cycle.
    Cycle { index: usize },
    /// Compartment not reachable from the root.
    Disconnected { index: usize },
}

/// Every invariant violation found in a parent array; empty iff valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{v:?}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Check a raw parent array (`None` marks a root) against all invariants.
pub fn validate_parents(parent: &[Option<usize>]) -> ValidationReport {
    let n = parent.len();
    let mut violations = Vec::new();
    if n == 0 {
        violations.push(Violation::Empty);
        return ValidationReport { violations };
    }
    if let Some(p) = parent[0] {
        violations.push(Violation::RootHasParent { parent: p });
    }
    for (i, p) in parent.iter().enumerate().skip(1) {
        match *p {
            None => violations.push(Violation::ExtraRoot { index: i }),
            Some(p) if p >= n => violations.push(Violation::ParentOutOfRange { index: i, parent: p }),
            Some(p) if p >= i => violations.push(Violation::Numbering { index: i, parent: p }),
            Some(_) => {}
        }
    }

    // Cycles: walk parent links with a visited-on-this-walk colouring.
    let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(c) = cur {
            if c >= n || state[c] == 2 {
                break;
            }
            if state[c] == 1 {
                let pos = path.iter().position(|&x| x == c).unwrap_or(0);
                for &x in &path[pos..] {
                    violations.push(Violation::Cycle { index: x });
                }
                break;
            }
            state[c] = 1;
            path.push(c);
            cur = parent[c];
        }
        for x in path {
            state[x] = 2;
        }
    }

    // Connectivity: DFS over child links from compartment 0.
    let mut children = vec![Vec::new(); n];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p < n && i != 0 {
                children[p].push(i);
            }
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    while let Some(c) = stack.pop() {
        if std::mem::replace(&mut seen[c], true) {
            continue;
        }
        stack.extend(children[c].iter().copied().filter(|&k| !seen[k]));
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            violations.push(Violation::Disconnected { index: i });
        }
    }
    ValidationReport { violations }
}

impl Morphology {
    /// Unbranched cable of `n` compartments.
    pub fn chain(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("a morphology needs at least one compartment".into()));
        }
        Ok(Self { parents: (0..n as u32 - 1).collect(), branch_count: 1 })
    }

    /// Branch-by-branch construction. Branch 0 contains the root; branch `k >= 1`
    /// hangs off compartment `attach_points[k - 1]`, which must already be placed.
    pub fn branched(branch_lengths: &[usize], attach_points: &[usize]) -> Result<Self> {
        if branch_lengths.is_empty() {
            return Err(Error::InvalidSize("at least one branch is required".into()));
        }
        if let Some(k) = branch_lengths.iter().position(|&l| l == 0) {
            return Err(Error::InvalidSize(format!("branch {k} is empty")));
        }
        if attach_points.len() != branch_lengths.len() - 1 {
            return Err(Error::Dimension {
                what: "attach_points",
                got: attach_points.len(),
                expected: branch_lengths.len() - 1,
            });
        }
        let mut parents: Vec<u32> = Vec::new();
        let mut placed = 0usize;
        for (k, &len) in branch_lengths.iter().enumerate() {
            let first_parent = if k == 0 {
                None
            } else {
                let at = attach_points[k - 1];
                if at >= placed {
                    return Err(Error::ForwardReference { branch: k, attach: at, placed });
                }
                Some(at)
            };
            for j in 0..len {
                let idx = placed + j;
                match (j, first_parent) {
                    (0, None) => {}
                    (0, Some(at)) => parents.push(at as u32),
                    _ => parents.push(idx as u32 - 1),
                }
            }
            placed += len;
        }
        let branch_count = count_branches(&parents);
        Ok(Self { parents, branch_count })
    }

    /// Random tree: each new compartment either extends the current branch or,
    /// with probability `branch_prob`, starts a new branch at a uniformly chosen
    /// earlier compartment.
    pub fn random<R: Rng + ?Sized>(n: usize, branch_prob: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("a morphology needs at least one compartment".into()));
        }
        if !(0.0..=1.0).contains(&branch_prob) {
            return Err(Error::InvalidParam(format!("branch_prob {branch_prob} not in [0, 1]")));
        }
        let mut parents = Vec::with_capacity(n - 1);
        for i in 1..n {
            // i >= 2 so a new branch has somewhere other than i - 1 to attach.
            if i >= 2 && branch_prob > 0.0 && rng.random_bool(branch_prob) {
                parents.push(rng.random_range(0..i) as u32);
            } else {
                parents.push(i as u32 - 1);
            }
        }
        let branch_count = count_branches(&parents);
        Ok(Self { parents, branch_count })
    }

    /// Build from a raw parent array, rejecting anything `validate_parents` flags.
    pub fn from_parents(parent: &[Option<usize>]) -> Result<Self> {
        let report = validate_parents(parent);
        if !report.is_valid() {
            return Err(Error::InvalidMorphology(report.to_string()));
        }
        let parents: Vec<u32> = parent[1..].iter().map(|p| p.unwrap() as u32).collect();
        let branch_count = count_branches(&parents);
        Ok(Self { parents, branch_count })
    }

    pub fn len(&self) -> usize {
        self.parents.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    /// Parent of compartment `i`; `None` for the root.
    #[inline]
    pub fn parent(&self, i: usize) -> Option<usize> {
        if i == 0 {
            None
        } else {
            Some(self.parents[i - 1] as usize)
        }
    }

    /// Parents of compartments `1..n`, in order.
    #[inline]
    pub fn parents(&self) -> &[u32] {
        &self.parents
    }

    pub fn edge_count(&self) -> usize {
        self.parents.len()
    }

    /// Raw parent array with `None` at the root.
    pub fn to_parent_array(&self) -> Vec<Option<usize>> {
        (0..self.len()).map(|i| self.parent(i)).collect()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_parents(&self.to_parent_array())
    }
}

fn count_branches(parents: &[u32]) -> usize {
    // Unbranched segments: the root's, plus one per child of every junction.
    let mut children = vec![0usize; parents.len() + 1];
    for &p in parents {
        children[p as usize] += 1;
    }
    1 + children.iter().filter(|&&c| c >= 2).sum::<usize>()
}

/// Record form: `[n, parent(1), ..., parent(n - 1)]`.
impl Serialize for Morphology {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.len()))?;
        seq.serialize_element(&(self.len() as u64))?;
        for p in &self.parents {
            seq.serialize_element(&(*p as u64))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Morphology {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct RecordVisitor;
        impl<'de> Visitor<'de> for RecordVisitor {
            type Value = Morphology;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array [n, parent_1, ..., parent_{n-1}]")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Morphology, A::Error> {
                let n: usize = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let mut parent = vec![None];
                while let Some(p) = seq.next_element::<usize>()? {
                    parent.push(Some(p));
                }
                if parent.len() != n {
                    return Err(de::Error::custom(format!(
                        "record declares n = {n} but lists {} parents",
                        parent.len() - 1
                    )));
                }
                Morphology::from_parents(&parent).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_seq(RecordVisitor)
    }
}
