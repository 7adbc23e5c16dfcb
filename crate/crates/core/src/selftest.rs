//! Quick invariant suite behind the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::error::Result;
use crate::gradchecks;
use crate::horl::{self, Horl, HypergraphState};
use crate::lorentz::{
    exp_map_origin, geodesic_distance, log_map_origin, reconstruct_time, Curvature, LorentzEncoder, Origin,
    TangentVector,
};
use crate::metrics::{self, BinaryMask, DetectionReport};
use crate::numerics::{ParamStore, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<28} {}", self.name, self.detail)
    }
}

fn check(name: &'static str, run: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match run() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn manifold(seeds: u64) -> Result<(bool, String)> {
    let widths = NetworkConfig::tiny().widths();
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f32>::new();
        let enc = LorentzEncoder::new(&mut store, &widths, 4, Curvature::default(), &mut rng)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::randn(&[1, 1, 64, 64], 1.0, &mut rng));
        for l in enc.encode(&mut tape, &p, x)? {
            worst = worst.max(l.max_residual(&tape));
        }
    }
    Ok((worst <= 1e-4, format!("max |<x,x>+k| = {worst:.3e} (f32, {seeds} seeds)")))
}

fn roundtrip(n: usize, inject_fault: bool) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let k = Curvature::default();
    let mut worst = 0.0f64;
    for _ in 0..n {
        let dim = rng.random_range(1..8);
        let norm = 10f64.powf(rng.random_range(-3.0..5f64.log10()));
        let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-3);
        let v: Vec<f32> = dir.iter().map(|d| (d / len * norm) as f32).collect();
        let tv = TangentVector::from_spatial(&v, k);
        let mut back = log_map_origin(&exp_map_origin(&tv)?)?;
        if inject_fault {
            back.v[1] += 1e-3;
        }
        let diff: f64 = back.spatial().iter().zip(&v).map(|(a, b)| (a - b).powi(2) as f64).sum::<f64>().sqrt();
        worst = worst.max(diff / tv.norm());
    }
    Ok((worst <= 1e-5, format!("max relative error {worst:.3e} over {n} tangents (f32)")))
}

fn distance(n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let k = Curvature::new(rng.random_range(0.2..3.0))?;
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = reconstruct_time(&s, k)?;
        let d = geodesic_distance(&Origin::new(k, 4), &x)?;
        let v = log_map_origin(&x)?;
        worst = worst.max((v.norm() - d).abs() / d.max(1e-300));
    }
    Ok((worst <= 1e-6, format!("max relative gap {worst:.3e}")))
}

fn horl_oracle(n: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let c = rng.random_range(1..5);
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
        let m = rng.random_range(1..9);
        let mut store = ParamStore::<f64>::new();
        let hl = Horl::new(&mut store, c, None, m, 0.5, 1e-6, &mut rng)?;
        *store.get_mut(hl.theta) = Tensor::randn(&[c, c], 1.0, &mut rng);
        for id in [hl.w_v.b, hl.w_g.b, hl.w_e.b] {
            let k = store.get(id).numel();
            *store.get_mut(id) = Tensor::randn(&[k], 0.5, &mut rng);
        }
        let f = Tensor::randn(&[1, c, h, w], 1.0, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(f.clone());
        let out = hl.forward(&mut tape, &p, x, None)?;
        let wt = horl::reference::Weights {
            wv: store.get(hl.w_v.w).data(),
            bv: store.get(hl.w_v.b).data(),
            wg: store.get(hl.w_g.w).data(),
            bg: store.get(hl.w_g.b).data(),
            we: store.get(hl.w_e.w).data(),
            be: store.get(hl.w_e.b).data(),
            theta: store.get(hl.theta).data(),
            d: hl.vertex_dim,
            m,
        };
        let want = horl::reference::propagate(f.data(), c, h, w, &wt, 0.5, 1e-6);
        for (a, b) in tape.value(out.out).data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok((worst <= 1e-5, format!("max abs diff {worst:.3e} over {n} instances")))
}

fn hypergraph_structure(n: u64) -> Result<(bool, String)> {
    let (mut asym, mut eig) = (0.0f64, 0.0f64);
    for seed in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let rows = rng.random_range(2..33);
        let cols = rng.random_range(1..9);
        let h = Tensor::<f64>::rand_uniform(&[rows, cols], 0.0, 2.0, &mut rng);
        let s = HypergraphState::from_incidence(&h, 0.5, 1e-12)?;
        let p = s.p_h.data();
        for i in 0..rows {
            for j in 0..rows {
                asym = asym.max((p[i * rows + j] - p[j * rows + i]).abs());
            }
        }
        if s.dv.iter().all(|&d| d > 0.0) {
            let u: Vec<f64> = s.dv.iter().map(|d| d.sqrt()).collect();
            for i in 0..rows {
                let pu: f64 = (0..rows).map(|j| p[i * rows + j] * u[j]).sum();
                eig = eig.max((pu - u[i]).abs());
            }
        }
    }
    Ok((
        asym <= 1e-5 && eig <= 1e-4,
        format!("max asymmetry {asym:.3e}, eigenvector residual {eig:.3e}"),
    ))
}

fn sparsity_monotone() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let h = Tensor::<f64>::rand_uniform(&[16, 8], 0.0, 1.0, &mut rng);
    let counts: Vec<usize> = (0..=10)
        .map(|i| {
            let s = horl::sparsify(&h, i as f64 / 10.0);
            s.data().iter().filter(|&&v| v != 0.0).count()
        })
        .collect();
    let ok = counts.windows(2).all(|w| w[1] <= w[0]);
    Ok((ok, format!("nonzeros for λ = 0..1: {counts:?}")))
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::new(h, w, (0..h * w).map(|_| rng.random_bool(p)).collect()).expect("sized")
}

fn metric_oracle(n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut bad = 0;
    for _ in 0..n {
        let (h, w) = (rng.random_range(1..33), rng.random_range(1..33));
        let pred = random_mask(&mut rng, h, w, 0.1);
        let gt = random_mask(&mut rng, h, w, 0.1);
        let c = metrics::pixel_counts(&pred, &gt)?;
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for y in 0..h {
            for x in 0..w {
                match (pred.get(y, x), gt.get(y, x)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let self_match = metrics::target_metrics(&gt, &gt)?;
        if (c.tp, c.fp, c.fn_) != (tp, fp, fn_) || self_match.detected != self_match.targets || self_match.false_alarm_pixels != 0 {
            bad += 1;
        }
    }
    let mut overlap_pred = BinaryMask::empty(4, 4);
    let mut overlap_gt = BinaryMask::empty(4, 4);
    for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        overlap_gt.bits[y * 4 + x] = true;
        overlap_pred.bits[y * 4 + x + 1] = true;
    }
    let iou = metrics::pixel_metrics(&overlap_pred, &overlap_gt)?.iou;
    let report = DetectionReport::evaluate(&[("x".into(), overlap_gt.clone(), overlap_gt)], 3.0)?;
    let ok = bad == 0 && iou == 1.0 / 3.0 && report.aggregate.iou == 1.0;
    Ok((ok, format!("{bad} mismatches over {n} random pairs; worked IoU {iou:.6}")))
}

fn primitive_gradients(inject_fault: bool) -> Result<(bool, String)> {
    let cases = gradchecks::primitives(inject_fault)?;
    let worst = cases
        .iter()
        .max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err))
        .expect("non-empty");
    let ok = cases.iter().all(|c| c.report.passed);
    Ok((
        ok,
        format!(
            "{} ops, worst {} at {:.3e}",
            cases.len(),
            worst.name,
            worst.report.max_rel_err
        ),
    ))
}

/// Runs every check. `inject_fault` corrupts one backward rule and one
/// round-trip so the suite must fail.
pub fn run(inject_fault: bool) -> Vec<Check> {
    vec![
        check("manifold_preservation", || manifold(3)),
        check("log_exp_roundtrip", || roundtrip(200, inject_fault)),
        check("log_norm_equals_distance", || distance(200)),
        check("horl_dense_oracle", || horl_oracle(10)),
        check("interaction_matrix", || hypergraph_structure(20)),
        check("sparsification_monotone", sparsity_monotone),
        check("metric_oracle", || metric_oracle(50)),
        check("primitive_gradients", || primitive_gradients(inject_fault)),
    ]
}
