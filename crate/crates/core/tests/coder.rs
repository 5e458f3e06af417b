mod common;

use common::{gauss_solve, random_matrix, rng};
use cpsc_core::coder::{coding_objective, lc_code, locality_adaptor, update_codes, CodeParams, CodeSet};
use cpsc_core::dictionary::{init_dct_dictionary, Dictionary};
use cpsc_core::graph::GraphModel;
use cpsc_core::patch::{extract_patches, ImagePlane, PatchSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn lc_objective(f: &DVector<f64>, d: &Dictionary, gamma: f64, phi: &DVector<f64>, e: &DVector<f64>) -> f64 {
    (f - d.atoms() * e).norm_squared() + gamma * e.component_mul(phi).norm_squared()
}

/// Stationarity plus constraint as one dense KKT system.
fn kkt_oracle(f: &DVector<f64>, d: &Dictionary, gamma: f64, phi: &DVector<f64>) -> Vec<f64> {
    let k = d.len();
    let g = d.atoms().transpose() * d.atoms();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    let mut b = vec![0.0; k + 1];
    let dtf = d.atoms().transpose() * f;
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = 2.0 * g[(i, j)];
        }
        a[(i, i)] += 2.0 * gamma * phi[i] * phi[i];
        a[(i, k)] = 1.0;
        a[(k, i)] = 1.0;
        b[i] = 2.0 * dtf[i];
    }
    b[k] = 1.0;
    gauss_solve(&a, &b)[..k].to_vec()
}

fn random_dictionary(seed: u64, r: usize, k: usize) -> Dictionary {
    let mut g = rng(seed);
    Dictionary::from_atoms(random_matrix(&mut g, r, k, 1.0)).unwrap()
}

#[test]
fn lc_code_matches_kkt_system() {
    let mut g = rng(31);
    for seed in 0..10 {
        let d = random_dictionary(seed, 6, 9);
        let f = DVector::from_fn(6, |_, _| g.random_range(-20.0..20.0));
        let gamma = g.random_range(0.0..2.0);
        let res = lc_code(f.as_view(), &d, gamma, 10.0).unwrap();
        let oracle = kkt_oracle(&f, &d, gamma, &res.adaptor);
        for (a, b) in res.code.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((res.code.sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn lc_code_square_exact_interpolation() {
    let d = Dictionary::from_atoms(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
    let f = DVector::from_vec(vec![0.2, 0.3, 0.5]);
    let res = lc_code(f.as_view(), &d, 0.0, 1.0).unwrap();
    assert!((res.code - f).amax() < 1e-12);
}

#[test]
fn lc_code_beats_random_feasible_perturbations() {
    let mut g = rng(37);
    for seed in 0..5 {
        let d = random_dictionary(100 + seed, 8, 12);
        let f = DVector::from_fn(8, |_, _| g.random_range(-5.0..5.0));
        let res = lc_code(f.as_view(), &d, 0.5, 3.0).unwrap();
        let best = lc_objective(&f, &d, 0.5, &res.adaptor, &res.code);
        assert!((best - res.objective).abs() < 1e-9 * best.max(1.0));
        for _ in 0..1000 {
            let mut step = DVector::from_fn(12, |_, _| g.random_range(-1.0..1.0));
            let mean = step.mean();
            step.add_scalar_mut(-mean);
            let scale = 10f64.powf(g.random_range(-6.0..0.0));
            let probe = &res.code + step * scale;
            assert!(lc_objective(&f, &d, 0.5, &res.adaptor, &probe) >= best - 1e-12);
        }
    }
}

#[test]
fn adaptor_examples() {
    let d = Dictionary::from_atoms(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let f = DVector::from_vec(vec![1.0, 0.0]);
    // distances 0 and sqrt(2)
    let phi = locality_adaptor(f.as_view(), &d, 2f64.sqrt()).unwrap();
    assert_eq!(phi[0], 1.0);
    assert!((phi[1] - std::f64::consts::E).abs() < 1e-12);
    let flat = locality_adaptor(f.as_view(), &d, 1e12).unwrap();
    assert!(flat.iter().all(|&p| (p - 1.0).abs() < 1e-9));
    assert!(locality_adaptor(f.as_view(), &d, 0.0).is_err());
}

fn noisy_patches(seed: u64, w: usize, h: usize) -> PatchSet {
    let mut g = rng(seed);
    let img = ImagePlane::from_fn(w, h, |r, c| 100.0 + 40.0 * ((r + c) as f64 / 3.0).sin() + g.random_range(-20.0..20.0)).unwrap();
    extract_patches(&img, 4, 1).unwrap()
}

fn graph_over(node_ids: Vec<usize>, laplacian: DMatrix<f64>) -> GraphModel {
    let n = node_ids.len();
    GraphModel {
        node_ids,
        weights: DMatrix::zeros(n, n),
        laplacian,
        threshold_used: 0.0,
        lrr_iterations: 0,
        lrr_residual: 0.0,
        sinkhorn_iterations: 0,
    }
}

fn path_laplacian(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.5
        } else if i.abs_diff(j) == 1 {
            -0.25
        } else {
            0.0
        }
    })
}

#[test]
fn uncoupled_update_equals_lc_code() {
    let d = init_dct_dictionary(16, 36).unwrap();
    let patches = noisy_patches(41, 9, 9);
    let params = CodeParams {
        rho: 0.0,
        ..CodeParams::default()
    };
    let graph = graph_over(vec![0, 1, 2], path_laplacian(3));
    for g in [None, Some(&graph)] {
        let up = update_codes(&d, &patches, g, &params, &CodeSet::zeros(36, patches.len())).unwrap();
        for i in 0..patches.len() {
            let lc = lc_code(patches.vectors.column(i), &d, params.lambda / params.mu, params.delta).unwrap();
            assert!((up.codes.codes.column(i) - &lc.code).amax() < 1e-8, "patch {i}");
        }
    }
}

#[test]
fn coupled_identical_patches_agree() {
    let img = ImagePlane::from_fn(8, 4, |r, c| ((r * 5 + (c % 4) * 3) % 7) as f64 * 30.0).unwrap();
    let patches = extract_patches(&img, 4, 4).unwrap();
    assert_eq!(patches.len(), 2);
    let d = init_dct_dictionary(16, 36).unwrap();
    let graph = graph_over(vec![0, 1], DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    // the symmetric minimizer has s_1 = s_2 for any rho > 0; a moderate
    // weight keeps the block Gauss-Seidel contraction fast
    let params = CodeParams {
        rho: 2.0,
        sweeps: 50,
        ..CodeParams::default()
    };
    let up = update_codes(&d, &patches, Some(&graph), &params, &CodeSet::zeros(36, 2)).unwrap();
    assert!((up.codes.codes.column(0) - up.codes.codes.column(1)).norm() <= 1e-3);
}

#[test]
fn sweeps_never_raise_the_objective() {
    let d = init_dct_dictionary(16, 36).unwrap();
    let patches = noisy_patches(43, 10, 10);
    let nodes: Vec<usize> = (0..patches.len()).step_by(3).collect();
    let graph = graph_over(nodes.clone(), path_laplacian(nodes.len()));
    let params = CodeParams {
        rho: 5.0,
        sweeps: 6,
        ..CodeParams::default()
    };
    let mut codes = CodeSet::zeros(36, patches.len());
    let mut last = f64::INFINITY;
    for _ in 0..3 {
        let up = update_codes(&d, &patches, Some(&graph), &params, &codes).unwrap();
        for &obj in &up.sweep_objectives {
            assert!(obj <= last * (1.0 + 1e-12));
            last = obj;
        }
        let check = coding_objective(&d, &patches.vectors, Some(&graph), &params, &up.codes).unwrap();
        assert!((check.total() - last).abs() <= 1e-9 * last);
        codes = up.codes;
    }
    for i in 0..patches.len() {
        if !codes.unnormalized[i] {
            assert!((codes.codes.column(i).sum() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn relabeling_nodes_permutes_codes() {
    let d = init_dct_dictionary(16, 36).unwrap();
    let patches = noisy_patches(47, 7, 5);
    let m = patches.len();
    let lap = DMatrix::from_row_slice(3, 3, &[0.6, -0.4, -0.2, -0.4, 0.7, -0.3, -0.2, -0.3, 0.5]);
    let params = CodeParams {
        rho: 2.0,
        ..CodeParams::default()
    };
    let base = update_codes(&d, &patches, Some(&graph_over(vec![0, 2, 5], lap.clone())), &params, &CodeSet::zeros(36, m)).unwrap();

    // swap patches 0 and 5, keeping the sweep order over the same contents
    let mut swapped = patches.clone();
    swapped.vectors.swap_columns(0, 5);
    let perm = graph_over(vec![5, 2, 0], lap);
    let other = update_codes(&d, &swapped, Some(&perm), &params, &CodeSet::zeros(36, m)).unwrap();
    let mut expected = base.codes.codes.clone();
    expected.swap_columns(0, 5);
    assert!((other.codes.codes - expected).amax() < 1e-12);
}

#[test]
fn l1_option_produces_sparse_support() {
    let d = init_dct_dictionary(16, 36).unwrap();
    let patches = noisy_patches(53, 8, 8);
    let params = CodeParams {
        l1_weight: 40.0,
        ..CodeParams::default()
    };
    let up = update_codes(&d, &patches, None, &params, &CodeSet::zeros(36, patches.len())).unwrap();
    let used = up.codes.support.iter().filter(|&&b| b).count();
    assert!(used < patches.len() * 36 / 4, "{used} active coefficients");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adaptors_are_at_least_one(seed in 0u64..10_000, delta in 0.1f64..200.0) {
        let d = random_dictionary(seed, 5, 7);
        let mut g = rng(seed ^ 0xabc);
        let f = DVector::from_fn(5, |_, _| g.random_range(-50.0..50.0));
        let phi = locality_adaptor(f.as_view(), &d, delta).unwrap();
        prop_assert!(phi.iter().all(|&p| p >= 1.0));
        prop_assert!(phi.iter().any(|&p| p == 1.0));
    }

    #[test]
    fn lc_code_sums_to_one(seed in 0u64..10_000, gamma in 0.0f64..3.0) {
        let d = random_dictionary(seed, 4, 6);
        let mut g = rng(seed ^ 0x55);
        let f = DVector::from_fn(4, |_, _| g.random_range(-5.0..5.0));
        let res = lc_code(f.as_view(), &d, gamma, 5.0).unwrap();
        prop_assert!((res.code.sum() - 1.0).abs() < 1e-9);
    }
}
