//! Binary files for compressed representations and dense matrices.
//!
//! All integers are little-endian `u64` (format tags `u8`), all scalars
//! little-endian IEEE `f64`, matrices as `rows, cols` followed by the
//! entries in column-major order. A representation file holds
//!
//! ```text
//! "HPEELREP" version kind N d L m k levels_done
//! tree: n_boxes, then per box level parent pos anchor[d] children indices
//! format payload (per-box bases and per-level block tables)
//! leaf flag, leaf blocks
//! ```
//!
//! A dense matrix file is `"HPEELMAT" version rows cols entries`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{CompressedRep, CoreBlock, DenseBlock, H1Rep, H2Rep, LowRankBlock, UnifH1Rep};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tree::{BoxNode, BoxTree};

const REP_MAGIC: &[u8; 8] = b"HPEELREP";
const MAT_MAGIC: &[u8; 8] = b"HPEELMAT";
pub const VERSION: u64 = 1;
const NONE: u64 = u64::MAX;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, x: u64) -> Result<()> {
        Ok(self.0.write_all(&x.to_le_bytes())?)
    }

    fn usize(&mut self, x: usize) -> Result<()> {
        self.u64(x as u64)
    }

    fn f64s(&mut self, xs: &[f64]) -> Result<()> {
        self.usize(xs.len())?;
        for x in xs {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn mat(&mut self, m: &Mat) -> Result<()> {
        self.usize(m.nrows())?;
        self.usize(m.ncols())?;
        for x in m.iter() {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn list(&mut self, xs: &[usize]) -> Result<()> {
        self.usize(xs.len())?;
        xs.iter().try_for_each(|&x| self.usize(x))
    }
}

struct Reader<R: Read>(R);

/// Upper bound on any stored length, to reject corrupt headers early.
const MAX_LEN: u64 = 1 << 40;

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        if x > MAX_LEN {
            return Err(Error::Format(format!("implausible length {x}")));
        }
        Ok(x as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn mat(&mut self) -> Result<Mat> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let data = (0..rows * cols)
            .map(|_| self.f64())
            .collect::<Result<Vec<_>>>()?;
        Ok(Mat::from_vec(rows, cols, data))
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        if &b != expected {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = self.u64()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }
}

fn kind_tag(rep: &CompressedRep) -> u64 {
    match rep {
        CompressedRep::H1(_) => 1,
        CompressedRep::UnifH1(_) => 2,
        CompressedRep::H2(_) => 3,
    }
}

fn max_rank(rep: &CompressedRep) -> usize {
    match rep {
        CompressedRep::H1(r) => r.max_rank(),
        CompressedRep::UnifH1(r) => r.max_rank(),
        CompressedRep::H2(r) => r
            .u_long
            .iter()
            .chain(&r.v_long)
            .chain(&r.u_short)
            .chain(&r.v_short)
            .map(Mat::ncols)
            .max()
            .unwrap_or(0),
    }
}

fn write_tree<W: Write>(w: &mut Writer<W>, tree: &BoxTree) -> Result<()> {
    w.usize(tree.n_boxes())?;
    for b in tree.boxes() {
        w.usize(b.level)?;
        w.u64(b.parent.map_or(NONE, |p| p as u64))?;
        w.usize(b.pos_in_parent)?;
        b.anchor.iter().try_for_each(|&a| w.u64(a))?;
        w.list(&b.children)?;
        w.list(&b.indices)?;
    }
    Ok(())
}

fn read_tree<R: Read>(r: &mut Reader<R>, dim: usize, n: usize, m: usize) -> Result<BoxTree> {
    let nb = r.usize()?;
    let mut boxes = Vec::with_capacity(nb.min(1 << 20));
    for id in 0..nb {
        let level = r.usize()?;
        let parent = match r.u64()? {
            NONE => None,
            p if (p as usize) < id => Some(p as usize),
            p => return Err(Error::Format(format!("box {id} has parent {p}"))),
        };
        let pos_in_parent = r.usize()?;
        let anchor = (0..dim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let children = r.list()?;
        let indices = r.list()?;
        if indices.iter().any(|&i| i >= n) {
            return Err(Error::Format(format!("box {id} has an out-of-range index")));
        }
        boxes.push(BoxNode {
            id,
            level,
            anchor,
            parent,
            children,
            pos_in_parent,
            indices,
        });
    }
    BoxTree::from_boxes(dim, n, m, boxes)
}

fn write_cores<W: Write>(w: &mut Writer<W>, levels: &[Vec<CoreBlock>]) -> Result<()> {
    w.usize(levels.len())?;
    for blocks in levels {
        w.usize(blocks.len())?;
        for blk in blocks {
            w.usize(blk.alpha)?;
            w.usize(blk.beta)?;
            w.mat(&blk.b)?;
        }
    }
    Ok(())
}

fn read_cores<R: Read>(r: &mut Reader<R>) -> Result<Vec<Vec<CoreBlock>>> {
    let n = r.usize()?;
    (0..n)
        .map(|_| {
            let count = r.usize()?;
            (0..count)
                .map(|_| {
                    Ok(CoreBlock {
                        alpha: r.usize()?,
                        beta: r.usize()?,
                        b: r.mat()?,
                    })
                })
                .collect()
        })
        .collect()
}

fn read_box_mats<R: Read>(r: &mut Reader<R>, nb: usize) -> Result<Vec<Mat>> {
    (0..nb).map(|_| r.mat()).collect()
}

fn check_box_ref(tree: &BoxTree, ids: impl IntoIterator<Item = usize>) -> Result<()> {
    for id in ids {
        if id >= tree.n_boxes() {
            return Err(Error::Format(format!("reference to missing box {id}")));
        }
    }
    Ok(())
}

/// Writes a representation.
pub fn write_rep_to<W: Write>(out: W, rep: &CompressedRep) -> Result<()> {
    use super::HierarchicalRep;
    let mut w = Writer(out);
    let tree = rep.tree();
    w.0.write_all(REP_MAGIC)?;
    w.u64(VERSION)?;
    w.u64(kind_tag(rep))?;
    w.usize(tree.n_points())?;
    w.usize(tree.dim())?;
    w.usize(tree.depth())?;
    w.usize(tree.leaf_capacity())?;
    w.usize(max_rank(rep))?;
    w.usize(rep.levels_done())?;
    write_tree(&mut w, tree)?;
    match rep {
        CompressedRep::H1(r) => {
            w.usize(r.levels.len())?;
            for blocks in &r.levels {
                w.usize(blocks.len())?;
                for blk in blocks {
                    w.usize(blk.alpha)?;
                    w.usize(blk.beta)?;
                    w.mat(&blk.u)?;
                    w.mat(&blk.b)?;
                    w.mat(&blk.v)?;
                }
            }
        }
        CompressedRep::UnifH1(r) => {
            r.u.iter().try_for_each(|m| w.mat(m))?;
            r.v.iter().try_for_each(|m| w.mat(m))?;
            write_cores(&mut w, &r.levels)?;
        }
        CompressedRep::H2(r) => {
            for set in [&r.u_long, &r.v_long, &r.u_short, &r.v_short] {
                set.iter().try_for_each(|m| w.mat(m))?;
            }
            r.sigma_in.iter().try_for_each(|s| w.f64s(s))?;
            r.sigma_out.iter().try_for_each(|s| w.f64s(s))?;
            write_cores(&mut w, &r.levels)?;
        }
    }
    match rep.leaf_blocks() {
        None => w.u64(0)?,
        Some(leaf) => {
            w.u64(1)?;
            w.usize(leaf.len())?;
            for blk in leaf {
                w.usize(blk.alpha)?;
                w.usize(blk.beta)?;
                w.mat(&blk.d)?;
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

/// Reads a representation written by [`write_rep_to`].
pub fn read_rep_from<R: Read>(input: R) -> Result<CompressedRep> {
    let mut r = Reader(input);
    r.magic(REP_MAGIC)?;
    let kind = r.u64()?;
    let n = r.usize()?;
    let dim = r.usize()?;
    let depth = r.usize()?;
    let m = r.usize()?;
    let _max_rank = r.usize()?;
    let levels_done = r.usize()?;
    let tree = Arc::new(read_tree(&mut r, dim, n, m)?);
    if tree.depth() != depth || levels_done > depth.max(1) || levels_done < 1 {
        return Err(Error::Format(
            "header does not match the stored tree".into(),
        ));
    }
    let nb = tree.n_boxes();
    let mut rep: CompressedRep = match kind {
        1 => {
            let nl = r.usize()?;
            let levels: Vec<Vec<LowRankBlock>> = (0..nl)
                .map(|_| {
                    let count = r.usize()?;
                    (0..count)
                        .map(|_| {
                            Ok(LowRankBlock {
                                alpha: r.usize()?,
                                beta: r.usize()?,
                                u: r.mat()?,
                                b: r.mat()?,
                                v: r.mat()?,
                            })
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            check_box_ref(
                &tree,
                levels.iter().flatten().flat_map(|b| [b.alpha, b.beta]),
            )?;
            H1Rep {
                tree: tree.clone(),
                levels,
                leaf: None,
                levels_done,
            }
            .into()
        }
        2 => {
            let u = read_box_mats(&mut r, nb)?;
            let v = read_box_mats(&mut r, nb)?;
            let levels = read_cores(&mut r)?;
            check_box_ref(
                &tree,
                levels.iter().flatten().flat_map(|b| [b.alpha, b.beta]),
            )?;
            UnifH1Rep {
                tree: tree.clone(),
                u,
                v,
                levels,
                leaf: None,
                levels_done,
            }
            .into()
        }
        3 => {
            let u_long = read_box_mats(&mut r, nb)?;
            let v_long = read_box_mats(&mut r, nb)?;
            let u_short = read_box_mats(&mut r, nb)?;
            let v_short = read_box_mats(&mut r, nb)?;
            let sigma_in = (0..nb).map(|_| r.f64s()).collect::<Result<_>>()?;
            let sigma_out = (0..nb).map(|_| r.f64s()).collect::<Result<_>>()?;
            let levels = read_cores(&mut r)?;
            check_box_ref(
                &tree,
                levels.iter().flatten().flat_map(|b| [b.alpha, b.beta]),
            )?;
            H2Rep {
                tree: tree.clone(),
                u_long,
                v_long,
                u_short,
                v_short,
                sigma_in,
                sigma_out,
                levels,
                leaf: None,
                levels_done,
            }
            .into()
        }
        other => return Err(Error::Format(format!("unknown format tag {other}"))),
    };
    if r.u64()? == 1 {
        let count = r.usize()?;
        let leaf: Vec<DenseBlock> = (0..count)
            .map(|_| {
                Ok(DenseBlock {
                    alpha: r.usize()?,
                    beta: r.usize()?,
                    d: r.mat()?,
                })
            })
            .collect::<Result<_>>()?;
        check_box_ref(&tree, leaf.iter().flat_map(|b| [b.alpha, b.beta]))?;
        match &mut rep {
            CompressedRep::H1(x) => x.set_leaf(leaf)?,
            CompressedRep::UnifH1(x) => x.set_leaf(leaf)?,
            CompressedRep::H2(x) => x.set_leaf(leaf)?,
        }
    }
    Ok(rep)
}

pub fn write_rep(path: impl AsRef<Path>, rep: &CompressedRep) -> Result<()> {
    write_rep_to(BufWriter::new(File::create(path)?), rep)
}

pub fn read_rep(path: impl AsRef<Path>) -> Result<CompressedRep> {
    read_rep_from(BufReader::new(File::open(path)?))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Mat) -> Result<()> {
    let mut w = Writer(BufWriter::new(File::create(path)?));
    w.0.write_all(MAT_MAGIC)?;
    w.u64(VERSION)?;
    w.mat(m)?;
    w.0.flush()?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Mat> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    r.magic(MAT_MAGIC)?;
    r.mat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::gaussian_matrix;
    use crate::rep::testing::*;
    use crate::rep::HierarchicalRep;

    fn bits(m: &Mat) -> Vec<u64> {
        m.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let mut m = gaussian_matrix(7, 3, 2);
        m[(0, 0)] = -0.0;
        m[(1, 1)] = f64::MIN_POSITIVE / 4.0;
        write_matrix(&path, &m).unwrap();
        assert_eq!(bits(&read_matrix(&path).unwrap()), bits(&m));
        std::fs::write(&path, b"NOTAMATRIX").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Format(_))));
    }

    #[test]
    fn rep_round_trip_is_bit_exact() {
        let tree = tree_random_2d(300, 15, 6);
        let mut h1 = H1Rep::new(tree.clone());
        for level in 2..=tree.depth() {
            let blocks = tree
                .admissible_pairs(level)
                .into_iter()
                .map(|(a, b)| LowRankBlock {
                    alpha: a,
                    beta: b,
                    u: gaussian_matrix(tree.node(a).len(), 2, a as u64),
                    b: gaussian_matrix(2, 2, 3),
                    v: gaussian_matrix(tree.node(b).len(), 2, b as u64),
                })
                .collect();
            h1.push_level(level, blocks).unwrap();
        }
        h1.set_leaf(random_leaf(&tree, 1)).unwrap();
        let rep = CompressedRep::H1(h1);
        let mut buf = Vec::new();
        write_rep_to(&mut buf, &rep).unwrap();
        let back = read_rep_from(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_rep_to(&mut again, &back).unwrap();
        assert_eq!(buf, again);
        let x = gaussian_matrix(300, 2, 4);
        assert_eq!(
            bits(&rep.apply_full(&x).unwrap()),
            bits(&back.apply_full(&x).unwrap())
        );
        assert!(read_rep_from(&buf[..buf.len() / 2]).is_err());
    }
}
