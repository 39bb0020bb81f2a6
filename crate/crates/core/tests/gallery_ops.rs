use std::sync::Arc;

use hpeel::gallery::{
    op_double_layer_2d, op_laplace3d_kernel, op_n2d_product, op_schur_frontal,
    synth_rank_structured, ContourParams, Geometry,
};
use hpeel::linalg::Mat;
use hpeel::operator::{adjoint_residual, LinearOperator};
use hpeel::peeling::Format;
use hpeel::random::gaussian_matrix;
use hpeel::rep::dense_block;
use hpeel::tree::BoxTree;

fn singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn mirror_agrees(op: &dyn LinearOperator, mirror: &Mat) {
    let x = gaussian_matrix(op.ncols(), 3, 11);
    let y = op.apply(&x).unwrap();
    let z = mirror * &x;
    assert!((&y - &z).norm() <= 1e-12 * z.norm());
}

#[test]
fn double_layer_blocks_are_low_rank() {
    let op = op_double_layer_2d(&ContourParams::default(), 512).unwrap();
    let tree = BoxTree::build(&op.cloud().unwrap(), 16).unwrap();
    let a = op.dense_mirror().unwrap();
    mirror_agrees(&op, a);
    assert!(adjoint_residual(&op, 1).unwrap() <= 1e-10);
    let mut checked = 0;
    for level in 2..=tree.depth() {
        for (alpha, beta) in tree.admissible_pairs(level) {
            let s = singular_values(&dense_block(&tree, a, alpha, beta));
            if s.len() > 20 {
                assert!(s[20] <= 1e-10 * s[0], "block ({alpha}, {beta})");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn laplace_sphere_blocks_have_moderate_rank() {
    let pts = Geometry::Sphere3d.generate(1024, 7).unwrap();
    let op = op_laplace3d_kernel(&pts).unwrap();
    let tree = BoxTree::build(&pts.cloud().unwrap(), 32).unwrap();
    let a = op.dense_mirror().unwrap();
    mirror_agrees(&op, a);
    for level in 2..=tree.depth() {
        for (alpha, beta) in tree.admissible_pairs(level) {
            let s = singular_values(&dense_block(&tree, a, alpha, beta));
            let rank = s.iter().take_while(|&&v| v > 1e-6 * s[0]).count();
            assert!(rank <= 45, "block ({alpha}, {beta}) has rank {rank}");
        }
    }
}

#[test]
fn gallery_operators_pass_adjoint_probes() {
    let params = ContourParams::default();
    let ops: Vec<Box<dyn LinearOperator>> = vec![
        Box::new(op_double_layer_2d(&params, 300).unwrap()),
        Box::new(op_n2d_product(&params, 300).unwrap()),
        Box::new(op_laplace3d_kernel(&Geometry::Sphere3d.generate(300, 2).unwrap()).unwrap()),
        Box::new(op_schur_frontal(300, 51).unwrap()),
    ];
    for op in &ops {
        assert!(adjoint_residual(op.as_ref(), 3).unwrap() <= 1e-10);
    }
}

#[test]
fn n2d_and_frontal_mirrors_match_applies() {
    let n2d = op_n2d_product(&ContourParams::default(), 256).unwrap();
    mirror_agrees(&n2d, &n2d.dense_mirror().unwrap());
    let frontal = op_schur_frontal(128, 51).unwrap();
    mirror_agrees(&frontal, &frontal.dense_mirror().unwrap());
}

#[test]
fn synthetic_blocks_have_the_requested_rank() {
    let pts = Geometry::UniformGrid { dim: 2 }.generate(1024, 0).unwrap();
    let tree = Arc::new(BoxTree::build(&pts.cloud().unwrap(), 16).unwrap());
    let k = 5;
    for format in Format::ALL {
        let rep = synth_rank_structured(&tree, format, k, 3).unwrap();
        let a = rep.as_dyn().to_dense().unwrap();
        for level in 2..=tree.depth() {
            for (alpha, beta) in tree.admissible_pairs(level) {
                let s = singular_values(&dense_block(&tree, &a, alpha, beta));
                assert!(s[k] <= 1e-13 * s[0]);
            }
        }
        for (alpha, beta) in tree.leaf_pairs() {
            let d = dense_block(&tree, &a, alpha, beta);
            let s = singular_values(&d);
            assert!(*s.last().unwrap() > 0.0);
        }
    }
}

#[test]
fn synthetic_h2_bases_are_nested() {
    let pts = Geometry::UniformGrid { dim: 1 }.generate(512, 0).unwrap();
    let tree = Arc::new(BoxTree::build(&pts.cloud().unwrap(), 16).unwrap());
    let hpeel::rep::CompressedRep::H2(rep) =
        synth_rank_structured(&tree, Format::H2, 4, 1).unwrap()
    else {
        panic!("expected an H2 representation");
    };
    for level in 2..tree.depth() {
        for id in tree.level(level) {
            let parent = rep.long_u(id);
            let start = tree.range(id).start;
            for &c in &tree.node(id).children {
                let rc = tree.range(c);
                let piece = parent.rows(rc.start - start, rc.len());
                let child = rep.long_u(c);
                let projected = &child * child.tr_mul(&piece);
                assert!((projected - piece).amax() <= 1e-12);
            }
        }
    }
}
