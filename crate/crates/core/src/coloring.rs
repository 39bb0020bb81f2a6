//! Sampling constraints, their incompatibility graph, DSatur coloring and
//! the block-structured test matrices built from the color classes.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::random::{derive_seed, gaussian_matrix, tag};
use crate::tree::BoxTree;

/// Which block products a family of test matrices isolates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintMode {
    /// Forward samples `A_{αβ} G_β`, one set per admissible pair.
    H1,
    /// Adjoint samples `A_{αβ}ᵀ G_α`, observed on `I_β`.
    H1Adjoint,
    /// Forward samples of a whole interaction list at once.
    UnifStage1,
    /// Adjoint samples `A_{αβ}ᵀ U_α` with the forward bases as payload.
    UnifStage2,
    /// Identity probes of the leaf neighbor blocks.
    Leaf,
}

impl ConstraintMode {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintMode::H1 => "h1",
            ConstraintMode::H1Adjoint => "h1-adjoint",
            ConstraintMode::UnifStage1 => "unif-stage1",
            ConstraintMode::UnifStage2 => "unif-stage2",
            ConstraintMode::Leaf => "leaf",
        }
    }

    pub fn payload_kind(self) -> PayloadKind {
        match self {
            ConstraintMode::H1 | ConstraintMode::H1Adjoint | ConstraintMode::UnifStage1 => {
                PayloadKind::Gaussian
            }
            ConstraintMode::UnifStage2 => PayloadKind::Basis,
            ConstraintMode::Leaf => PayloadKind::Identity,
        }
    }

    /// Whether samples are taken with `Aᵀ`.
    pub fn is_adjoint(self) -> bool {
        matches!(self, ConstraintMode::H1Adjoint | ConstraintMode::UnifStage2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PayloadKind {
    Gaussian,
    Identity,
    Basis,
}

/// Requirements one block (or several blocks) place on a test matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSet {
    /// Sorted by box id.
    pub payload: Vec<(usize, PayloadKind)>,
    /// Sorted, disjoint from the payload boxes.
    pub zeros: Vec<usize>,
    /// Blocks `(α, β)` served by this set.
    pub owners: Vec<(usize, usize)>,
}

impl ConstraintSet {
    pub fn new(mut payload: Vec<(usize, PayloadKind)>, mut zeros: Vec<usize>) -> Self {
        payload.sort_unstable();
        payload.dedup();
        zeros.sort_unstable();
        zeros.dedup();
        Self {
            payload,
            zeros,
            owners: Vec::new(),
        }
    }

    pub fn payload_kind(&self, b: usize) -> Option<PayloadKind> {
        self.payload
            .binary_search_by_key(&b, |&(id, _)| id)
            .ok()
            .map(|i| self.payload[i].1)
    }

    pub fn is_zero(&self, b: usize) -> bool {
        self.zeros.binary_search(&b).is_ok()
    }

    /// No single test matrix can satisfy both sets.
    pub fn incompatible_with(&self, other: &ConstraintSet) -> bool {
        let clash = |a: &ConstraintSet, b: &ConstraintSet| {
            a.payload
                .iter()
                .any(|&(id, kind)| b.is_zero(id) || b.payload_kind(id).is_some_and(|k| k != kind))
        };
        clash(self, other) || clash(other, self)
    }

    fn key(&self) -> (Vec<(usize, PayloadKind)>, Vec<usize>) {
        (self.payload.clone(), self.zeros.clone())
    }
}

/// `N(α) ∪ I(α)`, sorted.
fn near_field(tree: &BoxTree, a: usize) -> Vec<usize> {
    let mut v: Vec<usize> = tree
        .neighbors(a)
        .iter()
        .chain(tree.interactions(a))
        .copied()
        .collect();
    v.sort_unstable();
    v
}

fn without(v: &[usize], x: usize) -> Vec<usize> {
    v.iter().copied().filter(|&b| b != x).collect()
}

/// Deduplicated constraint sets for one level, in order of first
/// appearance. Every served block appears in exactly one set's owners.
pub fn build_constraints(
    tree: &BoxTree,
    level: usize,
    mode: ConstraintMode,
) -> Result<Vec<ConstraintSet>> {
    if mode == ConstraintMode::Leaf && level != tree.depth() {
        return Err(Error::InvalidConfig(format!(
            "leaf constraints live on level {}, not {level}",
            tree.depth()
        )));
    }
    let kind = mode.payload_kind();
    let mut sets: Vec<ConstraintSet> = Vec::new();
    let mut index: HashMap<(Vec<(usize, PayloadKind)>, Vec<usize>), usize> = HashMap::new();
    let mut push = |set: ConstraintSet, owners: Vec<(usize, usize)>| {
        let slot = *index.entry(set.key()).or_insert_with(|| {
            sets.push(set);
            sets.len() - 1
        });
        sets[slot].owners.extend(owners);
    };
    for a in tree.level(level) {
        match mode {
            ConstraintMode::H1 => {
                let near = near_field(tree, a);
                for &b in tree.interactions(a) {
                    push(
                        ConstraintSet::new(vec![(b, kind)], without(&near, b)),
                        vec![(a, b)],
                    );
                }
            }
            ConstraintMode::H1Adjoint | ConstraintMode::UnifStage2 => {
                for &b in tree.interactions(a) {
                    let near = near_field(tree, b);
                    push(
                        ConstraintSet::new(vec![(a, kind)], without(&near, a)),
                        vec![(a, b)],
                    );
                }
            }
            ConstraintMode::UnifStage1 => {
                let list = tree.interactions(a);
                if list.is_empty() {
                    continue;
                }
                let payload = list.iter().map(|&b| (b, kind)).collect();
                let owners = list.iter().map(|&b| (a, b)).collect();
                push(
                    ConstraintSet::new(payload, tree.neighbors(a).to_vec()),
                    owners,
                );
            }
            ConstraintMode::Leaf => {
                let near = tree.neighbors(a);
                for &b in near {
                    push(
                        ConstraintSet::new(vec![(b, kind)], without(near, b)),
                        vec![(a, b)],
                    );
                }
            }
        }
    }
    Ok(sets)
}

/// An undirected graph queried one neighborhood at a time.
pub trait Graph {
    fn n_vertices(&self) -> usize;

    /// Appends the distinct neighbors of `v` (never `v` itself) to `out`.
    /// `seen` has length `n_vertices()`, is all `false` on entry and must be
    /// left that way.
    fn neighbors_into(&self, v: usize, seen: &mut [bool], out: &mut Vec<usize>);
}

/// Explicit adjacency lists.
#[derive(Clone, Debug, Default)]
pub struct AdjacencyGraph {
    adj: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Self { adj }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }
}

impl Graph for AdjacencyGraph {
    fn n_vertices(&self) -> usize {
        self.adj.len()
    }

    fn neighbors_into(&self, v: usize, _seen: &mut [bool], out: &mut Vec<usize>) {
        out.extend_from_slice(&self.adj[v]);
    }
}

/// Incompatibility graph over constraint sets.
///
/// Edges are not stored: a per-box inverted index lists which sets carry a
/// payload on the box and which require it to be zero, and neighborhoods
/// are assembled from it on demand.
pub struct IncompatibilityGraph<'a> {
    sets: &'a [ConstraintSet],
    /// box -> sets with a payload there (with the tag)
    payload_at: HashMap<usize, Vec<(usize, PayloadKind)>>,
    /// box -> sets requiring zeros there
    zero_at: HashMap<usize, Vec<usize>>,
}

impl<'a> IncompatibilityGraph<'a> {
    pub fn new(sets: &'a [ConstraintSet]) -> Self {
        let mut payload_at: HashMap<usize, Vec<(usize, PayloadKind)>> = HashMap::new();
        let mut zero_at: HashMap<usize, Vec<usize>> = HashMap::new();
        for (s, set) in sets.iter().enumerate() {
            for &(b, kind) in &set.payload {
                payload_at.entry(b).or_default().push((s, kind));
            }
            for &b in &set.zeros {
                zero_at.entry(b).or_default().push(s);
            }
        }
        Self {
            sets,
            payload_at,
            zero_at,
        }
    }

    pub fn sets(&self) -> &[ConstraintSet] {
        self.sets
    }

    /// Sorted neighbor list of one vertex.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut seen = vec![false; self.sets.len()];
        let mut out = Vec::new();
        self.neighbors_into(v, &mut seen, &mut out);
        out.sort_unstable();
        out
    }

    /// Number of edges; enumerates every neighborhood.
    pub fn n_edges(&self) -> u64 {
        let mut seen = vec![false; self.sets.len()];
        let mut out = Vec::new();
        let mut total = 0u64;
        for v in 0..self.sets.len() {
            out.clear();
            self.neighbors_into(v, &mut seen, &mut out);
            total += out.len() as u64;
        }
        total / 2
    }
}

impl Graph for IncompatibilityGraph<'_> {
    fn n_vertices(&self) -> usize {
        self.sets.len()
    }

    fn neighbors_into(&self, v: usize, seen: &mut [bool], out: &mut Vec<usize>) {
        let start = out.len();
        let mut mark = |u: usize, out: &mut Vec<usize>| {
            if u != v && !seen[u] {
                seen[u] = true;
                out.push(u);
            }
        };
        let set = &self.sets[v];
        for &(b, kind) in &set.payload {
            if let Some(list) = self.zero_at.get(&b) {
                for &u in list {
                    mark(u, out);
                }
            }
            if let Some(list) = self.payload_at.get(&b) {
                for &(u, k) in list {
                    if k != kind {
                        mark(u, out);
                    }
                }
            }
        }
        for &b in &set.zeros {
            if let Some(list) = self.payload_at.get(&b) {
                for &(u, _) in list {
                    mark(u, out);
                }
            }
        }
        for &u in &out[start..] {
            seen[u] = false;
        }
    }
}

/// Result of a greedy coloring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coloring {
    pub colors: Vec<usize>,
    pub n_colors: usize,
    pub n_edges: u64,
    /// Priority-queue pushes plus pops.
    pub pq_ops: u64,
}

impl Coloring {
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut classes = vec![Vec::new(); self.n_colors];
        for (v, &c) in self.colors.iter().enumerate() {
            classes[c].push(v);
        }
        classes
    }
}

/// DSatur: repeatedly color the uncolored vertex with the most distinct
/// neighbor colors, breaking ties by uncolored degree and then by lowest
/// index, using the smallest color absent from its neighborhood.
///
/// Queue entries carry the saturation at push time; uncolored degrees only
/// decrease, so a popped entry with a stale degree is pushed back with the
/// current one.
pub fn dsatur_color(graph: &dyn Graph) -> Coloring {
    let n = graph.n_vertices();
    let mut seen = vec![false; n];
    let mut scratch = Vec::new();
    let mut degree = vec![0usize; n];
    let mut total_degree = 0u64;
    for (v, d) in degree.iter_mut().enumerate() {
        scratch.clear();
        graph.neighbors_into(v, &mut seen, &mut scratch);
        *d = scratch.len();
        total_degree += *d as u64;
    }

    const UNCOLORED: usize = usize::MAX;
    let mut colors = vec![UNCOLORED; n];
    let mut saturation = vec![0usize; n];
    let mut used: Vec<Vec<u64>> = vec![Vec::new(); n];
    let mut heap: BinaryHeap<(usize, usize, Reverse<usize>)> = BinaryHeap::with_capacity(n);
    let mut pq_ops = 0u64;
    for v in 0..n {
        heap.push((0, degree[v], Reverse(v)));
        pq_ops += 1;
    }
    let mut n_colors = 0;
    while let Some((sat, deg, Reverse(v))) = heap.pop() {
        pq_ops += 1;
        if colors[v] != UNCOLORED || sat != saturation[v] {
            continue;
        }
        if deg != degree[v] {
            heap.push((sat, degree[v], Reverse(v)));
            pq_ops += 1;
            continue;
        }
        let c = first_clear_bit(&used[v]);
        colors[v] = c;
        n_colors = n_colors.max(c + 1);
        scratch.clear();
        graph.neighbors_into(v, &mut seen, &mut scratch);
        for &u in &scratch {
            if colors[u] != UNCOLORED {
                continue;
            }
            degree[u] -= 1;
            if set_bit(&mut used[u], c) {
                saturation[u] += 1;
                heap.push((saturation[u], degree[u], Reverse(u)));
                pq_ops += 1;
            }
        }
    }
    Coloring {
        colors,
        n_colors,
        n_edges: total_degree / 2,
        pq_ops,
    }
}

fn first_clear_bit(words: &[u64]) -> usize {
    for (i, &w) in words.iter().enumerate() {
        if w != u64::MAX {
            return 64 * i + (!w).trailing_zeros() as usize;
        }
    }
    64 * words.len()
}

/// Sets bit `c`; returns whether it was previously clear.
fn set_bit(words: &mut Vec<u64>, c: usize) -> bool {
    let (i, bit) = (c / 64, 1u64 << (c % 64));
    if words.len() <= i {
        words.resize(i + 1, 0);
    }
    let fresh = words[i] & bit == 0;
    words[i] |= bit;
    fresh
}

/// True when no edge joins two vertices of the same color.
pub fn is_proper(graph: &dyn Graph, colors: &[usize]) -> bool {
    let mut seen = vec![false; graph.n_vertices()];
    let mut out = Vec::new();
    (0..graph.n_vertices()).all(|v| {
        out.clear();
        graph.neighbors_into(v, &mut seen, &mut out);
        out.iter().all(|&u| colors[u] != colors[v])
    })
}

/// An `N × width` test matrix described by its nonzero row blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockTestMatrix {
    /// Sorted by box id; all other rows are zero.
    pub blocks: Vec<(usize, PayloadKind)>,
    pub width: usize,
    pub level: usize,
    pub seed: u64,
}

/// Seed of the gaussian block `G_b` on a level.
pub fn payload_seed(seed: u64, level: usize, b: usize) -> u64 {
    derive_seed(seed, &[tag::PAYLOAD, level as u64, b as u64])
}

/// The gaussian block `G_b` (`|I_b| × width`).
pub fn gaussian_block(tree: &BoxTree, seed: u64, level: usize, b: usize, width: usize) -> Mat {
    gaussian_matrix(tree.node(b).len(), width, payload_seed(seed, level, b))
}

impl BlockTestMatrix {
    pub fn payload_kind(&self, b: usize) -> Option<PayloadKind> {
        self.blocks
            .binary_search_by_key(&b, |&(id, _)| id)
            .ok()
            .map(|i| self.blocks[i].1)
    }

    /// Whether every requirement of `set` holds for this matrix.
    pub fn satisfies(&self, set: &ConstraintSet) -> bool {
        set.payload
            .iter()
            .all(|&(b, k)| self.payload_kind(b) == Some(k))
            && set.zeros.iter().all(|&b| self.payload_kind(b).is_none())
    }

    /// Dense realization in input point order; block rows follow the tree
    /// order of each box. Basis payloads are read from `bases` (box id to an
    /// orthonormal `|I_b| × k_b` matrix, `k_b ≤ width`) and zero padded.
    pub fn realize(&self, tree: &BoxTree, bases: Option<&HashMap<usize, Mat>>) -> Result<Mat> {
        let mut out = Mat::zeros(tree.n_points(), self.width);
        for &(b, kind) in &self.blocks {
            let rows = tree.points(b);
            let block = match kind {
                PayloadKind::Gaussian => gaussian_block(tree, self.seed, self.level, b, self.width),
                PayloadKind::Identity => {
                    if rows.len() > self.width {
                        return Err(Error::dims(
                            format!("identity width at least {}", rows.len()),
                            self.width.to_string(),
                        ));
                    }
                    Mat::identity(rows.len(), self.width)
                }
                PayloadKind::Basis => {
                    let basis = bases
                        .and_then(|m| m.get(&b))
                        .ok_or(Error::MissingBasis(b))?;
                    if basis.nrows() != rows.len() || basis.ncols() > self.width {
                        return Err(Error::dims(
                            format!("{}x(<= {}) basis", rows.len(), self.width),
                            format!("{}x{}", basis.nrows(), basis.ncols()),
                        ));
                    }
                    let mut padded = Mat::zeros(rows.len(), self.width);
                    padded.columns_mut(0, basis.ncols()).copy_from(basis);
                    padded
                }
            };
            for (local, &global) in rows.iter().enumerate() {
                out.row_mut(global).copy_from(&block.row(local));
            }
        }
        Ok(out)
    }
}

/// One test matrix per color class: the union of the class's payloads.
pub fn assemble_test_matrices(
    sets: &[ConstraintSet],
    coloring: &Coloring,
    width: usize,
    level: usize,
    seed: u64,
) -> Vec<BlockTestMatrix> {
    coloring
        .classes()
        .into_iter()
        .map(|class| {
            let mut blocks: Vec<(usize, PayloadKind)> = class
                .iter()
                .flat_map(|&s| sets[s].payload.iter().copied())
                .collect();
            blocks.sort_unstable();
            blocks.dedup();
            BlockTestMatrix {
                blocks,
                width,
                level,
                seed,
            }
        })
        .collect()
}

/// How test matrices are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColoringStrategy {
    /// DSatur on the incompatibility graph.
    Graph,
    /// Fixed tile-shift patterns; uniform grids only.
    Pattern,
    /// DSatur, replaced by the tile-shift patterns on uniform grids when
    /// those need fewer matrices.
    Auto,
}

/// Period of the tile-shift pattern of a mode.
fn pattern_period(mode: ConstraintMode) -> u64 {
    match mode {
        ConstraintMode::H1 | ConstraintMode::H1Adjoint | ConstraintMode::UnifStage2 => 6,
        ConstraintMode::UnifStage1 => 5,
        ConstraintMode::Leaf => 3,
    }
}

/// Whether box anchor `a` carries a payload in the pattern with shift `s`.
fn pattern_active(mode: ConstraintMode, anchor: &[u64], shift: &[u64]) -> bool {
    let period = pattern_period(mode);
    match mode {
        ConstraintMode::UnifStage1 => anchor.iter().zip(shift).any(|(&a, &s)| {
            // active iff some coordinate leaves the window {s-1, s, s+1}
            let r = (a + period - s) % period;
            r == 2 || r == 3
        }),
        _ => anchor.iter().zip(shift).all(|(&a, &s)| a % period == s),
    }
}

/// Shift that serves a constraint set in the tile-shift pattern.
fn pattern_shift(tree: &BoxTree, mode: ConstraintMode, owner: (usize, usize)) -> Vec<u64> {
    let period = pattern_period(mode);
    let key_box = match mode {
        ConstraintMode::H1 => owner.1,
        ConstraintMode::H1Adjoint | ConstraintMode::UnifStage2 | ConstraintMode::UnifStage1 => {
            owner.0
        }
        ConstraintMode::Leaf => owner.1,
    };
    tree.node(key_box)
        .anchor
        .iter()
        .map(|a| a % period)
        .collect()
}

/// All `period^d` shifts in lexicographic order (first dimension fastest).
fn all_shifts(dim: usize, period: u64) -> Vec<Vec<u64>> {
    let count = (period as usize).pow(dim as u32);
    (0..count)
        .map(|mut i| {
            (0..dim)
                .map(|_| {
                    let s = (i % period as usize) as u64;
                    i /= period as usize;
                    s
                })
                .collect()
        })
        .collect()
}

/// Tile-shift pattern matrices for a fully populated uniform grid:
/// `6^d` for the per-pair modes, `5^d` for the first uniform stage and
/// `3^d` for leaves.
pub fn fallback_pattern_matrices(
    tree: &BoxTree,
    level: usize,
    mode: ConstraintMode,
    width: usize,
    seed: u64,
) -> Result<Vec<BlockTestMatrix>> {
    if !tree.is_uniform_grid() {
        return Err(Error::NonUniformTree);
    }
    let kind = mode.payload_kind();
    Ok(all_shifts(tree.dim(), pattern_period(mode))
        .into_iter()
        .map(|shift| BlockTestMatrix {
            blocks: tree
                .level(level)
                .filter(|&b| pattern_active(mode, &tree.node(b).anchor, &shift))
                .map(|b| (b, kind))
                .collect(),
            width,
            level,
            seed,
        })
        .collect())
}

/// Constraint sets of one level with the test matrix serving each.
#[derive(Clone, Debug)]
pub struct ProbePlan {
    pub mode: ConstraintMode,
    pub level: usize,
    pub sets: Vec<ConstraintSet>,
    pub matrices: Vec<BlockTestMatrix>,
    /// `assignment[s]` is the matrix serving `sets[s]`.
    pub assignment: Vec<usize>,
    pub stats: PlanStats,
}

/// Diagnostics of one plan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlanStats {
    pub n_blocks: usize,
    pub n_vertices: usize,
    pub n_edges: u64,
    /// Number of test matrices in the plan.
    pub n_colors: usize,
    /// Colors found by DSatur, when it ran.
    pub graph_colors: Option<usize>,
    pub pq_ops: u64,
    pub used_pattern: bool,
    pub wall: Duration,
}

impl ProbePlan {
    /// Builds the plan for one level. Pattern matrices that serve no set
    /// are left out.
    pub fn build(
        tree: &BoxTree,
        level: usize,
        mode: ConstraintMode,
        strategy: ColoringStrategy,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        let start = Instant::now();
        let sets = build_constraints(tree, level, mode)?;
        let mut plan = match strategy {
            ColoringStrategy::Graph => Self::from_graph(sets, mode, level, width, seed),
            ColoringStrategy::Pattern => Self::from_pattern(tree, sets, mode, level, width, seed)?,
            ColoringStrategy::Auto => {
                let graph = Self::from_graph(sets, mode, level, width, seed);
                if tree.is_uniform_grid() {
                    let pattern =
                        Self::from_pattern(tree, graph.sets.clone(), mode, level, width, seed)?;
                    if pattern.matrices.len() < graph.matrices.len() {
                        let mut pattern = pattern;
                        pattern.stats.n_edges = graph.stats.n_edges;
                        pattern.stats.pq_ops = graph.stats.pq_ops;
                        pattern.stats.graph_colors = graph.stats.graph_colors;
                        pattern
                    } else {
                        graph
                    }
                } else {
                    graph
                }
            }
        };
        plan.stats.wall = start.elapsed();
        Ok(plan)
    }

    fn from_graph(
        sets: Vec<ConstraintSet>,
        mode: ConstraintMode,
        level: usize,
        width: usize,
        seed: u64,
    ) -> Self {
        let graph = IncompatibilityGraph::new(&sets);
        let coloring = dsatur_color(&graph);
        let matrices = assemble_test_matrices(&sets, &coloring, width, level, seed);
        let stats = PlanStats {
            n_blocks: sets.iter().map(|s| s.owners.len()).sum(),
            n_vertices: sets.len(),
            n_edges: coloring.n_edges,
            n_colors: matrices.len(),
            graph_colors: Some(coloring.n_colors),
            pq_ops: coloring.pq_ops,
            used_pattern: false,
            wall: Duration::ZERO,
        };
        Self {
            mode,
            level,
            sets,
            matrices,
            assignment: coloring.colors,
            stats,
        }
    }

    fn from_pattern(
        tree: &BoxTree,
        sets: Vec<ConstraintSet>,
        mode: ConstraintMode,
        level: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        let all = fallback_pattern_matrices(tree, level, mode, width, seed)?;
        let period = pattern_period(mode) as usize;
        let index_of = |shift: &[u64]| {
            shift
                .iter()
                .rev()
                .fold(0usize, |acc, &s| acc * period + s as usize)
        };
        let raw: Vec<usize> = sets
            .iter()
            .map(|s| index_of(&pattern_shift(tree, mode, s.owners[0])))
            .collect();
        let mut used = raw.clone();
        used.sort_unstable();
        used.dedup();
        let assignment = raw
            .iter()
            .map(|m| used.binary_search(m).expect("shift is in use"))
            .collect();
        let matrices: Vec<BlockTestMatrix> = used.iter().map(|&m| all[m].clone()).collect();
        let stats = PlanStats {
            n_blocks: sets.iter().map(|s| s.owners.len()).sum(),
            n_vertices: sets.len(),
            n_colors: matrices.len(),
            used_pattern: true,
            ..PlanStats::default()
        };
        Ok(Self {
            mode,
            level,
            sets,
            matrices,
            assignment,
            stats,
        })
    }

    /// Plan for `mode` that reuses the matrices of `other`, when both have
    /// literally the same constraint sets.
    pub fn reuse(
        tree: &BoxTree,
        level: usize,
        mode: ConstraintMode,
        other: &ProbePlan,
    ) -> Result<Option<Self>> {
        let start = Instant::now();
        let sets = build_constraints(tree, level, mode)?;
        if sets.len() != other.sets.len() {
            return Ok(None);
        }
        let lookup: HashMap<_, usize> = other
            .sets
            .iter()
            .zip(&other.assignment)
            .map(|(s, &m)| (s.key(), m))
            .collect();
        let Some(assignment) = sets
            .iter()
            .map(|s| lookup.get(&s.key()).copied())
            .collect::<Option<Vec<usize>>>()
        else {
            return Ok(None);
        };
        let stats = PlanStats {
            n_blocks: sets.iter().map(|s| s.owners.len()).sum(),
            n_vertices: sets.len(),
            wall: start.elapsed(),
            ..other.stats.clone()
        };
        Ok(Some(Self {
            mode,
            level,
            sets,
            matrices: other.matrices.clone(),
            assignment,
            stats,
        }))
    }

    /// Whether every set is satisfied by its assigned matrix.
    pub fn is_consistent(&self) -> bool {
        self.sets
            .iter()
            .zip(&self.assignment)
            .all(|(set, &m)| self.matrices[m].satisfies(set))
    }

    /// Same constraint sets as `other`, in any order.
    pub fn same_sets(&self, other: &ProbePlan) -> bool {
        let keys = |p: &ProbePlan| {
            let mut k: Vec<_> = p.sets.iter().map(ConstraintSet::key).collect();
            k.sort_unstable();
            k
        };
        keys(self) == keys(other)
    }
}
