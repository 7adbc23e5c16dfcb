mod common;

use lohgnet::horl::{self, Horl, HypergraphState};
use lohgnet::numerics::{ParamStore, Tape, Tensor};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

struct Instance {
    store: ParamStore<f64>,
    layer: Horl,
    f: Tensor<f64>,
    h: usize,
    w: usize,
}

fn instance(seed: u64) -> Instance {
    let mut r = common::rng(seed);
    let c = r.random_range(1..6);
    let (h, w) = (r.random_range(1..5), r.random_range(1..5));
    let m = r.random_range(1..9);
    let mut store = ParamStore::<f64>::new();
    let layer = Horl::new(&mut store, c, None, m, horl::DEFAULT_LAMBDA, horl::DEFAULT_EPS_DEG, &mut r).unwrap();
    *store.get_mut(layer.theta) = Tensor::randn(&[c, c], 1.0, &mut r);
    for id in [layer.w_v.b, layer.w_g.b, layer.w_e.b] {
        let n = store.get(id).numel();
        *store.get_mut(id) = Tensor::randn(&[n], 0.5, &mut r);
    }
    let f = Tensor::randn(&[1, c, h, w], 1.0, &mut r);
    Instance { store, layer, f, h, w }
}

fn weights(inst: &Instance) -> common::HorlWeights {
    let s = &inst.store;
    let l = &inst.layer;
    let v = |id| s.get(id).data().to_vec();
    common::HorlWeights {
        c: l.channels,
        d: l.vertex_dim,
        m: l.hyperedges,
        wv: v(l.w_v.w),
        bv: v(l.w_v.b),
        wg: v(l.w_g.w),
        bg: v(l.w_g.b),
        we: v(l.w_e.w),
        be: v(l.w_e.b),
        theta: v(l.theta),
    }
}

fn run(inst: &Instance) -> (Vec<f64>, HypergraphState<f64>) {
    let mut tape = Tape::new();
    let p = inst.store.bind(&mut tape);
    let x = tape.constant(inst.f.clone());
    let out = inst.layer.forward(&mut tape, &p, x, None).unwrap();
    let state = HypergraphState::from_tape(&tape, &out.graphs[0]);
    (tape.value(out.out).data().to_vec(), state)
}

#[test]
fn propagate_matches_dense_oracle() {
    for seed in 0..30 {
        let inst = instance(seed);
        let (got, state) = run(&inst);
        let wt = weights(&inst);
        let (want, dense) = common::horl_dense(inst.f.data(), inst.h, inst.w, &wt, horl::DEFAULT_LAMBDA, horl::DEFAULT_EPS_DEG);
        assert!(common::max_abs_diff(&got, &want) <= 1e-9, "seed {seed}");
        let n = dense.n;
        let flat = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().collect::<Vec<_>>();
        assert!(common::max_abs_diff(state.h.data(), &flat(&dense.h)) <= 1e-9);
        assert_eq!(state.h.shape(), [n, dense.m]);
        assert!(common::max_abs_diff(state.p_h.data(), &flat(&dense.p_h)) <= 1e-9);
    }
}

#[test]
fn two_vertex_hand_example() {
    let mut tape = Tape::<f64>::new();
    let hs = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 1.0]).unwrap());
    let (_, _, p) = horl::interaction_matrix(&mut tape, hs, horl::DEFAULT_EPS_DEG).unwrap();
    let f = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap());
    let theta = tape.constant(Tensor::eye(1));
    let y = horl::propagate_flat(&mut tape, f, theta, p).unwrap();
    let out = tape.value(y).data();
    assert!((out[0] - 0.5).abs() <= 1e-6 && (out[1] + 0.5).abs() <= 1e-6, "{out:?}");
}

#[test]
fn guidance_sign_does_not_matter_after_abs() {
    // flipping E flips Vdiag(g)VᵀE, and |·| removes the sign
    let mut tape = Tape::<f64>::new();
    let mut r = common::rng(3);
    let v = tape.constant(Tensor::randn(&[5, 2], 1.0, &mut r));
    let g = tape.constant(Tensor::randn(&[2, 1], 1.0, &mut r));
    let e = Tensor::<f64>::randn(&[5, 3], 1.0, &mut r);
    let neg = tape.constant(e.map(|x| -x));
    let e = tape.constant(e);
    let a = horl::build_incidence(&mut tape, v, g, e).unwrap();
    let b = horl::build_incidence(&mut tape, v, g, neg).unwrap();
    assert_eq!(tape.value(a).data(), tape.value(b).data());
}

fn random_incidence(seed: u64) -> Tensor<f64> {
    let mut r = common::rng(seed);
    let n = r.random_range(1..65);
    let m = r.random_range(1..17);
    // a few all-zero rows to exercise empty vertices
    let mut h = Tensor::<f64>::rand_uniform(&[n, m], 0.0, 3.0, &mut r);
    for row in 0..n {
        if r.random_bool(0.1) {
            h.data_mut()[row * m..(row + 1) * m].fill(0.0);
        }
    }
    h
}

#[test]
fn interaction_matrix_spectrum() {
    for seed in 0..50 {
        let h = random_incidence(1000 + seed);
        let state = HypergraphState::from_incidence(&h, horl::DEFAULT_LAMBDA, horl::DEFAULT_EPS_DEG).unwrap();
        let n = state.vertices();
        let p = DMatrix::from_row_slice(n, n, state.p_h.data());
        assert!((&p - p.transpose()).abs().max() <= 1e-5);
        let eig = p.clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() >= -1e-5, "seed {seed}: {}", eig.min());
        assert!(eig.max() <= 1.0 + 1e-4, "seed {seed}: {}", eig.max());
        if state.dv.iter().all(|&d| d > 0.0) {
            let u = DMatrix::from_iterator(n, 1, state.dv.iter().map(|d| d.sqrt()));
            assert!((&p * &u - &u).abs().max() <= 1e-4, "seed {seed}");
        }
    }
}

#[test]
fn sparsification_sweep_is_monotone() {
    let h = random_incidence(7);
    let mut last = usize::MAX;
    for i in 0..=10 {
        let nz = horl::sparsify(&h, i as f64 / 10.0).data().iter().filter(|&&v| v != 0.0).count();
        assert!(nz <= last);
        last = nz;
    }
}

#[test]
fn sparsification_uses_strict_threshold() {
    // mean is 1, so at λ = 1 the entries equal to 1 are dropped
    let h = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 1.0, 0.0, 2.0]).unwrap();
    assert_eq!(horl::sparsify(&h, 1.0).data(), &[0.0, 0.0, 0.0, 2.0]);
    assert_eq!(horl::sparsify(&h, 0.0).data(), &[1.0, 1.0, 0.0, 2.0]);
}

#[test]
fn csv_dumps() {
    let h = random_incidence(11);
    let state = HypergraphState::from_incidence(&h, 0.5, 1e-6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    state.write_csv(dir.path()).unwrap();
    let n = state.vertices();
    let m = h.shape()[1];
    for (file, rows, cols) in [("H.csv", n, m), ("H_s.csv", n, m), ("P_H.csv", n, n)] {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), rows, "{file}");
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), cols, "{file}");
            for cell in cells {
                let mantissa = cell.split('e').next().unwrap().trim_start_matches('-');
                assert_eq!(mantissa.replace('.', "").len(), 9, "{cell}");
                cell.parse::<f64>().unwrap();
            }
        }
    }
    let p_back: Vec<f64> = std::fs::read_to_string(dir.path().join("P_H.csv"))
        .unwrap()
        .lines()
        .flat_map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    for (a, b) in p_back.iter().zip(state.p_h.data()) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300));
    }
    assert!(dir.path().join("Dv.csv").exists() && dir.path().join("De.csv").exists());
}

#[test]
fn csv_dump_refuses_large_graphs() {
    let h = Tensor::<f64>::full(&[257, 2], 1.0);
    let state = HypergraphState::from_incidence(&h, 0.5, 1e-6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(state.write_csv(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn interaction_rows_are_nonnegative_and_symmetric(seed in 0u64..10_000) {
        let h = random_incidence(seed);
        let state = HypergraphState::from_incidence(&h, 0.5, 1e-6).unwrap();
        let n = state.vertices();
        let p = state.p_h.data();
        for i in 0..n {
            for j in 0..n {
                prop_assert!(p[i * n + j] >= 0.0);
                prop_assert!((p[i * n + j] - p[j * n + i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn identity_theta_on_constant_features_over_connected_graph(c in 1usize..4, n in 2usize..10) {
        // one hyperedge touching every vertex with weight 1: P_H = 𝟙𝟙ᵀ/n, and
        // constant features are annihilated
        let mut tape = Tape::<f64>::new();
        let hs = tape.constant(Tensor::full(&[n, 1], 1.0));
        let (_, _, p) = horl::interaction_matrix(&mut tape, hs, 1e-12).unwrap();
        let f = tape.constant(Tensor::full(&[n, c], 2.5));
        let theta = tape.constant(Tensor::eye(c));
        let y = horl::propagate_flat(&mut tape, f, theta, p).unwrap();
        prop_assert!(tape.value(y).data().iter().all(|v| v.abs() <= 1e-9));
    }
}
