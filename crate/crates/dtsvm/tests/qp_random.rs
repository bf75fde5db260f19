//! Randomized cross-check of the sweep solver against brute-force
//! active-set enumeration on small boxes.

use dtsvm::qpbox::{oracle_box_qp, solve_box_qp_opts, BoxQp};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_qp(rng: &mut ChaCha20Rng) -> BoxQp {
    let n = rng.gen_range(1..=8);
    let a = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
    // strictly positive definite so the optimum (and the comparison) is unique
    let mut q = a.t().dot(&a);
    for i in 0..n {
        q[[i, i]] += 0.15;
    }
    let c = Array1::from_shape_fn(n, |_| rng.gen_range(-2.0..2.0));
    let upper = rng.gen_range(0.2..3.0);
    BoxQp::new(q, c, upper).unwrap()
}

#[test]
fn sweep_solver_matches_enumeration_on_random_boxes() {
    let mut rng = ChaCha20Rng::seed_from_u64(0xbeef);
    for trial in 0..100 {
        let qp = random_qp(&mut rng);
        let sol = solve_box_qp_opts(&qp, None, 1e-10, 200_000).unwrap();
        assert!(sol.converged, "trial {trial} did not converge");
        assert!(sol.kkt_residual < 1e-8, "trial {trial} residual {}", sol.kkt_residual);
        let exact = oracle_box_qp(&qp, 1e-8).unwrap();
        for i in 0..qp.n() {
            let diff = (sol.lambda[i] - exact[i]).abs();
            assert!(
                diff < 1e-6,
                "trial {trial} coordinate {i}: sweep {} vs oracle {}",
                sol.lambda[i],
                exact[i]
            );
        }
    }
}

#[test]
fn enumeration_handles_all_active_patterns() {
    // 2-D problem steered so each of the nine (lower/interior/upper)²
    // patterns occurs for some linear term
    let q = ndarray::arr2(&[[1.0, 0.2], [0.2, 1.0]]);
    for &(c0, c1) in &[
        (-1.0, -1.0),
        (-1.0, 0.5),
        (-1.0, 9.0),
        (0.5, -1.0),
        (0.5, 0.6),
        (0.5, 9.0),
        (9.0, -1.0),
        (9.0, 0.5),
        (9.0, 9.0),
    ] {
        let qp = BoxQp::new(q.clone(), ndarray::arr1(&[c0, c1]), 1.0).unwrap();
        let sweep = solve_box_qp_opts(&qp, None, 1e-12, 100_000).unwrap();
        let exact = oracle_box_qp(&qp, 1e-9).unwrap();
        for i in 0..2 {
            assert!((sweep.lambda[i] - exact[i]).abs() < 1e-8, "c = ({c0}, {c1})");
        }
    }
}
