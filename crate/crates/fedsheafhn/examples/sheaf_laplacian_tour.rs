//! A tour of the cellular-sheaf Laplacian: assembly from restriction maps,
//! the reduction to the combinatorial graph Laplacian, degree
//! normalization, and the coboundary factorization.
//!
//! cargo run --release --example sheaf_laplacian_tour

use fedsheafhn::autodiff::linalg::sym_min_eigenvalue;
use fedsheafhn::autodiff::Tensor;
use fedsheafhn::rng::{randn, stream};
use fedsheafhn::sheaf::{build_sheaf_laplacian, coboundary_dense};

fn print_matrix(name: &str, t: &Tensor) {
    println!("{name} =");
    for i in 0..t.rows() {
        let row: Vec<String> = t.row(i).iter().map(|v| format!("{v:>7.3}")).collect();
        println!("  [{}]", row.join(" "));
    }
}

fn main() {
    // A path graph with scalar stalks and maps F0 = 2, F1 = 3 on its only
    // edge: diagonal blocks F^T F, off-diagonal -F0^T F1.
    let maps = Tensor::new(vec![2, 1], vec![2.0, 3.0]).expect("maps");
    let l = build_sheaf_laplacian(&[(0, 1)], 2, &maps, 1).expect("build");
    print_matrix("two-node sheaf Laplacian", &l.matrix);

    // With identity maps the construction is the ordinary graph Laplacian.
    let edges = vec![(0, 1), (1, 2), (0, 2), (2, 3)];
    let ones = Tensor::filled(&[2 * edges.len(), 1], 1.0);
    let combinatorial = build_sheaf_laplacian(&edges, 4, &ones, 1).expect("build");
    print_matrix("\nidentity sheaf = combinatorial Laplacian", &combinatorial.matrix);

    // A random 2-dimensional sheaf on five nodes: still symmetric PSD, and
    // exactly the Gram matrix of its coboundary.
    let mut rng = stream(7, &[42]);
    let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)];
    let maps = randn(&[2 * edges.len(), 4], 1.0, &mut rng);
    let l = build_sheaf_laplacian(&edges, 5, &maps, 2).expect("build");
    let delta = coboundary_dense(&edges, 5, &maps, 2);
    let gram = delta.transposed().matmul(&delta).expect("gram");
    println!("\nrandom d=2 sheaf on 5 nodes:");
    println!("  |L - delta^T delta|_max = {:.2e}", l.matrix.max_abs_diff(&gram));
    println!("  asymmetry               = {:.2e}", l.max_asymmetry());
    println!("  min eigenvalue          = {:.2e}", sym_min_eigenvalue(l.matrix.data(), l.dim()));

    let norm = l.normalized(1e-8).expect("normalize");
    println!("normalized (D^-1/2 L D^-1/2):");
    println!("  asymmetry               = {:.2e}", norm.max_asymmetry());
    println!("  min eigenvalue          = {:.2e}", sym_min_eigenvalue(norm.matrix.data(), norm.dim()));
    println!("  diagonal block of node 0:");
    let block = norm.diagonal_block(0);
    for i in 0..2 {
        println!("    [{:>7.4} {:>7.4}]", block.at(i, 0), block.at(i, 1));
    }
}
