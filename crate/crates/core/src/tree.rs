//! Dyadic box tree over `[0,1]^d` with neighbor and interaction lists.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Boxes are never refined past this level.
pub const MAX_DEPTH: usize = 60;

/// Points in `[0,1]^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates. Any dimension whose values
    /// leave `[0,1]` is affinely mapped onto `[0,1]`.
    pub fn new(dim: usize, mut coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "point dimension must be at least 1".into(),
            ));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::dims(
                format!("a positive multiple of {dim} coordinates"),
                coords.len().to_string(),
            ));
        }
        if let Some(bad) = coords.iter().find(|x| !x.is_finite()) {
            return Err(Error::DegenerateGeometry(format!(
                "non-finite coordinate {bad}"
            )));
        }
        for j in 0..dim {
            let column = coords.iter().skip(j).step_by(dim);
            let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
            if lo >= 0.0 && hi <= 1.0 {
                continue;
            }
            let span = hi - lo;
            for x in coords.iter_mut().skip(j).step_by(dim) {
                *x = if span > 0.0 {
                    ((*x - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Format(format!(
                "point {i} has {} coordinates, expected {dim}",
                r.len()
            )));
        }
        Self::new(dim, rows.concat())
    }

    /// Reads one point per line, coordinates separated by whitespace or
    /// commas. Blank lines and lines starting with `#` are skipped.
    pub fn read(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Format(format!("line {}: cannot parse {t:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(d) = expected_dim {
                if row.len() != d {
                    return Err(Error::Format(format!(
                        "line {}: expected {d} columns, found {}",
                        lineno + 1,
                        row.len()
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Format("point file contains no points".into()));
        }
        Self::from_rows(&rows)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// One box of the tree.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxNode {
    pub id: usize,
    pub level: usize,
    /// Integer position on the level grid: the box is
    /// `∏ [a_j / 2^level, (a_j + 1) / 2^level]`.
    pub anchor: Vec<u64>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Position among the parent's children.
    pub pos_in_parent: usize,
    /// Point indices in input order.
    pub indices: Vec<usize>,
}

impl BoxNode {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Lower and upper corner of the box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let h = 0.5f64.powi(self.level as i32);
        let lo = self.anchor.iter().map(|&a| a as f64 * h).collect();
        let hi = self.anchor.iter().map(|&a| (a + 1) as f64 * h).collect();
        (lo, hi)
    }
}

/// Hierarchical partition of a point cloud.
///
/// Every nonempty box above the leaf level is bisected in each dimension,
/// so all leaves sit on the same level `depth()`. Empty boxes are omitted.
/// Ids are assigned breadth first, children ordered by their position bits
/// (bit `j` set means the upper half in dimension `j`).
#[derive(Clone, Debug)]
pub struct BoxTree {
    dim: usize,
    n_points: usize,
    leaf_capacity: usize,
    boxes: Vec<BoxNode>,
    levels: Vec<Range<usize>>,
    neighbors: Vec<Vec<usize>>,
    interactions: Vec<Vec<usize>>,
    /// Point indices in tree order: leaves in id order, each leaf in input
    /// order. Every box owns a contiguous range of it.
    order: Vec<usize>,
    ranges: Vec<Range<usize>>,
}

impl BoxTree {
    /// Builds the tree with leaf capacity `m`: the depth is the smallest
    /// level at which every box holds at most `m` points.
    pub fn build(cloud: &PointCloud, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig(
                "leaf capacity must be at least 1".into(),
            ));
        }
        let dim = cloud.dim();
        let n = cloud.len();
        let mut boxes = vec![BoxNode {
            id: 0,
            level: 0,
            anchor: vec![0; dim],
            parent: None,
            children: Vec::new(),
            pos_in_parent: 0,
            indices: (0..n).collect(),
        }];
        let mut levels = vec![0..1];
        loop {
            let current = levels.last().unwrap().clone();
            if boxes[current.clone()].iter().all(|b| b.len() <= m) {
                break;
            }
            let level = levels.len() - 1;
            if level >= MAX_DEPTH {
                return Err(Error::DegenerateGeometry(format!(
                    "more than {m} points remain in one box at level {MAX_DEPTH}; points coincide"
                )));
            }
            let start = boxes.len();
            for id in current {
                let children = split_box(cloud, &boxes[id], level);
                for (pos, (anchor, indices)) in children.into_iter().enumerate() {
                    let child = boxes.len();
                    boxes[id].children.push(child);
                    boxes.push(BoxNode {
                        id: child,
                        level: level + 1,
                        anchor,
                        parent: Some(id),
                        children: Vec::new(),
                        pos_in_parent: pos,
                        indices,
                    });
                }
            }
            levels.push(start..boxes.len());
        }
        Ok(Self::assemble(dim, n, m, boxes, levels))
    }

    /// Rebuilds a tree from stored boxes (ids in breadth-first order, each
    /// box's `children` filled). Used by deserialization.
    pub(crate) fn from_boxes(
        dim: usize,
        n_points: usize,
        leaf_capacity: usize,
        boxes: Vec<BoxNode>,
    ) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("invalid stored tree: {msg}"));
        if boxes.is_empty() || boxes[0].parent.is_some() || boxes[0].level != 0 {
            return Err(bad("missing root"));
        }
        let mut levels: Vec<Range<usize>> = Vec::new();
        for (id, b) in boxes.iter().enumerate() {
            if b.id != id || b.anchor.len() != dim {
                return Err(bad("box ids or anchors"));
            }
            if b.level + 1 == levels.len() && levels[b.level].end == id {
                levels[b.level].end += 1;
            } else if b.level == levels.len() {
                levels.push(id..id + 1);
            } else {
                return Err(bad("boxes not in breadth-first order"));
            }
            if let Some(p) = b.parent {
                if p >= id || boxes[p].level + 1 != b.level {
                    return Err(bad("parent link"));
                }
            }
        }
        let depth = levels.len() - 1;
        let mut count = 0;
        for id in levels[depth].clone() {
            count += boxes[id].len();
        }
        if count != n_points || boxes[0].len() != n_points {
            return Err(bad("index lists do not partition the points"));
        }
        Ok(Self::assemble(dim, n_points, leaf_capacity, boxes, levels))
    }

    fn assemble(
        dim: usize,
        n_points: usize,
        leaf_capacity: usize,
        boxes: Vec<BoxNode>,
        levels: Vec<Range<usize>>,
    ) -> Self {
        let mut tree = Self {
            dim,
            n_points,
            leaf_capacity,
            boxes,
            levels,
            neighbors: Vec::new(),
            interactions: Vec::new(),
            order: Vec::new(),
            ranges: Vec::new(),
        };
        tree.build_adjacency();
        tree.build_order();
        tree
    }

    fn build_order(&mut self) {
        let mut ranges = vec![0..0; self.boxes.len()];
        let mut order = Vec::with_capacity(self.n_points);
        for id in self.leaves() {
            let start = order.len();
            order.extend_from_slice(&self.boxes[id].indices);
            ranges[id] = start..order.len();
        }
        for level in (0..self.depth()).rev() {
            for id in self.levels[level].clone() {
                let ch = &self.boxes[id].children;
                ranges[id] = ranges[ch[0]].start..ranges[*ch.last().unwrap()].end;
            }
        }
        self.order = order;
        self.ranges = ranges;
    }

    fn build_adjacency(&mut self) {
        let nb = self.boxes.len();
        let mut neighbors = vec![Vec::new(); nb];
        let mut interactions = vec![Vec::new(); nb];
        neighbors[0].push(0);
        for level in 1..self.levels.len() {
            for id in self.levels[level].clone() {
                let parent = self.boxes[id].parent.expect("non-root box has a parent");
                let mut near = Vec::new();
                let mut far = Vec::new();
                for &pn in &neighbors[parent] {
                    for &c in &self.boxes[pn].children {
                        if touches(&self.boxes[id].anchor, &self.boxes[c].anchor) {
                            near.push(c);
                        } else {
                            far.push(c);
                        }
                    }
                }
                near.sort_unstable();
                far.sort_unstable();
                neighbors[id] = near;
                interactions[id] = far;
            }
        }
        self.neighbors = neighbors;
        self.interactions = interactions;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    /// Level of the leaves (0 when the root is a leaf).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn n_boxes(&self) -> usize {
        self.boxes.len()
    }

    pub fn boxes(&self) -> &[BoxNode] {
        &self.boxes
    }

    pub fn node(&self, id: usize) -> &BoxNode {
        &self.boxes[id]
    }

    pub fn indices(&self, id: usize) -> &[usize] {
        &self.boxes[id].indices
    }

    /// Box ids on `level`, empty past the leaf level.
    pub fn level(&self, level: usize) -> Range<usize> {
        self.levels.get(level).cloned().unwrap_or(0..0)
    }

    pub fn leaves(&self) -> Range<usize> {
        self.level(self.depth())
    }

    /// Position range of a box in tree order.
    pub fn range(&self, id: usize) -> Range<usize> {
        self.ranges[id].clone()
    }

    /// Point indices of a box in tree order.
    pub fn points(&self, id: usize) -> &[usize] {
        &self.order[self.ranges[id].clone()]
    }

    /// Tree order: position `i` holds point `order()[i]`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.neighbors[id]
    }

    pub fn interactions(&self, id: usize) -> &[usize] {
        &self.interactions[id]
    }

    pub fn max_leaf_size(&self) -> usize {
        self.leaves()
            .map(|id| self.boxes[id].len())
            .max()
            .unwrap_or(0)
    }

    /// Ordered admissible pairs `(α, β)` with `β ∈ I(α)` on `level`.
    pub fn admissible_pairs(&self, level: usize) -> Vec<(usize, usize)> {
        self.level(level)
            .flat_map(|a| self.interactions[a].iter().map(move |&b| (a, b)))
            .collect()
    }

    /// Ordered neighbor pairs among leaves, including `(α, α)`.
    pub fn leaf_pairs(&self) -> Vec<(usize, usize)> {
        self.leaves()
            .flat_map(|a| self.neighbors[a].iter().map(move |&b| (a, b)))
            .collect()
    }

    /// True when every level holds all `2^(d·l)` boxes.
    pub fn is_uniform_grid(&self) -> bool {
        (0..=self.depth()).all(|l| {
            let expected = 1u128.checked_shl((self.dim * l) as u32);
            expected == Some(self.levels[l].len() as u128)
        })
    }
}

/// Neighbor test on one level: closed boxes share at least a corner.
fn touches(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| x.abs_diff(y) <= 1)
}

/// Nonempty children of a box, in position-bit order.
fn split_box(cloud: &PointCloud, node: &BoxNode, level: usize) -> Vec<(Vec<u64>, Vec<usize>)> {
    let dim = cloud.dim();
    let scale = 0.5f64.powi(level as i32 + 1);
    let mids: Vec<f64> = node
        .anchor
        .iter()
        .map(|&a| (2 * a + 1) as f64 * scale)
        .collect();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); 1 << dim];
    for &i in &node.indices {
        let p = cloud.point(i);
        let pos = (0..dim).fold(0usize, |acc, j| acc | (usize::from(p[j] > mids[j]) << j));
        buckets[pos].push(i);
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(pos, indices)| {
            let anchor = (0..dim)
                .map(|j| 2 * node.anchor[j] + ((pos >> j) & 1) as u64)
                .collect();
            (anchor, indices)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d(n: usize) -> PointCloud {
        PointCloud::new(1, (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()).unwrap()
    }

    /// Cell-centered grid with `per_side` points per dimension.
    fn grid(dim: usize, per_side: usize) -> PointCloud {
        let n = per_side.pow(dim as u32);
        let mut coords = Vec::with_capacity(n * dim);
        for i in 0..n {
            let mut r = i;
            for _ in 0..dim {
                coords.push(((r % per_side) as f64 + 0.5) / per_side as f64);
                r /= per_side;
            }
        }
        PointCloud::new(dim, coords).unwrap()
    }

    #[test]
    fn paper_index_lists() {
        let tree = BoxTree::build(&grid_1d(400), 100).unwrap();
        assert_eq!(tree.depth(), 2);
        assert_eq!(tree.indices(0), (0..400).collect::<Vec<_>>().as_slice());
        assert_eq!(tree.indices(1), (0..200).collect::<Vec<_>>().as_slice());
        assert_eq!(tree.indices(3), (0..100).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn single_point_is_root_leaf() {
        let tree = BoxTree::build(&PointCloud::new(2, vec![0.3, 0.4]).unwrap(), 1).unwrap();
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.n_boxes(), 1);
        assert_eq!(tree.neighbors(0), &[0]);
        assert!(tree.interactions(0).is_empty());
    }

    #[test]
    fn level_two_lists() {
        let tree = BoxTree::build(&grid_1d(64), 8).unwrap();
        // heap ids 4..7 are BFS ids 3..6
        assert_eq!(tree.neighbors(3), &[3, 4]);
        assert_eq!(tree.interactions(3), &[5, 6]);
    }

    #[test]
    fn coincident_points_hit_the_depth_cap() {
        let cloud = PointCloud::new(1, vec![0.25; 5]).unwrap();
        assert!(matches!(
            BoxTree::build(&cloud, 2),
            Err(Error::DegenerateGeometry(_))
        ));
        assert_eq!(BoxTree::build(&cloud, 5).unwrap().depth(), 0);
    }

    #[test]
    fn plane_points_go_to_lower_child() {
        let cloud = PointCloud::new(1, vec![0.5, 0.75, 0.0, 1.0]).unwrap();
        let tree = BoxTree::build(&cloud, 2).unwrap();
        assert_eq!(tree.indices(1), &[0, 2]);
        assert_eq!(tree.indices(2), &[1, 3]);
    }

    #[test]
    fn rescales_only_escaping_dimensions() {
        let cloud = PointCloud::new(2, vec![-1.0, 0.2, 3.0, 0.6]).unwrap();
        assert_eq!(cloud.point(0), &[0.0, 0.2]);
        assert_eq!(cloud.point(1), &[1.0, 0.6]);
    }

    #[test]
    fn random_2d_partition() {
        let g = crate::random::gaussian_matrix(2000, 1, 77);
        let coords: Vec<f64> = g.iter().map(|x| 0.5 + 0.5 * x.tanh()).collect();
        let cloud = PointCloud::new(2, coords).unwrap();
        let tree = BoxTree::build(&cloud, 50).unwrap();
        let mut seen = vec![0u32; 1000];
        for id in tree.leaves() {
            assert!(tree.node(id).len() <= 50);
            for &i in tree.indices(id) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        for l in 0..=tree.depth() {
            let mut all: Vec<usize> = tree
                .level(l)
                .flat_map(|b| tree.indices(b).to_vec())
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..1000).collect::<Vec<_>>());
        }
    }

    #[test]
    fn adjacency_counts_on_uniform_grids() {
        for (dim, side, m) in [(1, 64, 4), (2, 16, 4), (3, 8, 1)] {
            let tree = BoxTree::build(&grid(dim, side), m).unwrap();
            assert!(tree.is_uniform_grid());
            let max_n = (0..tree.n_boxes())
                .map(|b| tree.neighbors(b).len())
                .max()
                .unwrap();
            let max_i = (0..tree.n_boxes())
                .map(|b| tree.interactions(b).len())
                .max()
                .unwrap();
            assert_eq!(max_n, 3usize.pow(dim as u32));
            assert_eq!(max_i, 6usize.pow(dim as u32) - 3usize.pow(dim as u32));
        }
    }

    #[test]
    fn interior_box_of_8x8_grid() {
        let tree = BoxTree::build(&grid(2, 8), 1).unwrap();
        assert_eq!(tree.depth(), 3);
        let interior = tree
            .leaves()
            .find(|&b| tree.node(b).anchor == vec![3, 4])
            .unwrap();
        assert_eq!(tree.neighbors(interior).len(), 9);
        assert_eq!(tree.interactions(interior).len(), 27);
    }

    #[test]
    fn adjacency_is_symmetric_and_brute_force_exact() {
        let g = crate::random::gaussian_matrix(600, 1, 5);
        let coords: Vec<f64> = g.iter().map(|x| 0.5 + 0.4 * x.tanh()).collect();
        let tree = BoxTree::build(&PointCloud::new(2, coords).unwrap(), 10).unwrap();
        for l in 1..=tree.depth() {
            for a in tree.level(l) {
                assert!(tree.neighbors(a).contains(&a));
                for b in tree.level(l) {
                    let (na, nb) = (&tree.node(a).anchor, &tree.node(b).anchor);
                    let near = na.iter().zip(nb).all(|(x, y)| x.abs_diff(*y) <= 1);
                    let (pa, pb) = (
                        &tree.node(tree.node(a).parent.unwrap()).anchor,
                        &tree.node(tree.node(b).parent.unwrap()).anchor,
                    );
                    let parents_near = pa.iter().zip(pb).all(|(x, y)| x.abs_diff(*y) <= 1);
                    assert_eq!(tree.neighbors(a).contains(&b), near);
                    assert_eq!(tree.interactions(a).contains(&b), parents_near && !near);
                    assert_eq!(
                        tree.interactions(a).contains(&b),
                        tree.interactions(b).contains(&a)
                    );
                }
            }
        }
    }

    #[test]
    fn admissible_pair_counts_1d() {
        let tree = BoxTree::build(&grid_1d(64), 8).unwrap();
        assert_eq!(tree.depth(), 3);
        assert_eq!(tree.admissible_pairs(3).len(), 18);
        assert_eq!(tree.admissible_pairs(2).len(), 6);
        assert!(tree.admissible_pairs(1).is_empty());
        for (a, b) in tree.admissible_pairs(3) {
            assert!(tree.admissible_pairs(3).contains(&(b, a)));
            assert!(!tree.neighbors(a).contains(&b));
        }
    }

    #[test]
    fn depth_grows_by_one_per_doubling() {
        let depths: Vec<usize> = (0..5)
            .map(|i| BoxTree::build(&grid_1d(100 << i), 25).unwrap().depth())
            .collect();
        assert!(depths.windows(2).all(|w| w[1] == w[0] + 1), "{depths:?}");
    }

    #[test]
    fn rebuild_is_identical() {
        let cloud = grid(2, 12);
        let a = BoxTree::build(&cloud, 7).unwrap();
        let b = BoxTree::build(&cloud, 7).unwrap();
        assert_eq!(a.boxes(), b.boxes());
    }

    #[test]
    fn boxes_are_contiguous_in_tree_order() {
        let g = crate::random::gaussian_matrix(900, 1, 12);
        let coords: Vec<f64> = g.iter().map(|x| 0.5 + 0.5 * x.tanh()).collect();
        let tree = BoxTree::build(&PointCloud::new(3, coords).unwrap(), 20).unwrap();
        for id in 0..tree.n_boxes() {
            let mut a = tree.points(id).to_vec();
            a.sort_unstable();
            assert_eq!(a, tree.indices(id));
        }
        let mut all = tree.order().to_vec();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        let again = BoxTree::from_boxes(3, 300, 20, tree.boxes().to_vec()).unwrap();
        assert_eq!(again.order(), tree.order());
        assert_eq!(again.interactions(5), tree.interactions(5));
    }

    #[test]
    fn reads_point_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.txt");
        fs::write(&path, "# header\n0.1 0.2\n0.3,0.4\n\n0.5\t0.6\n").unwrap();
        let cloud = PointCloud::read(&path, Some(2)).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.point(1), &[0.3, 0.4]);
        assert!(matches!(
            PointCloud::read(&path, Some(3)),
            Err(Error::Format(_))
        ));
        fs::write(&path, "0.1 0.2\n0.3\n").unwrap();
        assert!(PointCloud::read(&path, None).is_err());
    }
}
