//! High-order relation learning on a pixel hypergraph.
//!
//! For a feature map `F` with `N = H·W` pixels:
//!
//! ```text
//! V = W_v F            N×d    (1×1 conv)
//! g = W_g GAP(F)       d      (guidance, used as diag(g))
//! E = W_e F            N×M    (7×7 conv)
//! H   = |V diag(g) Vᵀ E|
//! H_s = H ⊙ [H > λ·mean(H)]
//! P_H = Dv^{-1/2} H_s De^{-1} H_sᵀ Dv^{-1/2}
//! F'  = FΘ − P_H FΘ
//! ```
//!
//! During backward the sparsification mask is a constant.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::numerics::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_HYPEREDGES: usize = 256;
pub const DEFAULT_EPS_DEG: f64 = 1e-6;
pub const HYPEREDGE_KERNEL: usize = 7;

/// HORL weights and hyperparameters.
#[derive(Debug, Clone)]
pub struct Horl {
    pub w_v: Conv,
    pub w_g: Conv,
    pub w_e: Conv,
    pub theta: ParamId,
    pub channels: usize,
    pub vertex_dim: usize,
    pub hyperedges: usize,
    pub lambda: f64,
    pub eps_deg: f64,
}

/// Tape handles for one batch item's hypergraph.
#[derive(Debug, Clone, Copy)]
pub struct HypergraphVars {
    pub v: Var,
    pub g: Var,
    pub e: Var,
    pub h: Var,
    pub h_s: Var,
    pub dv: Var,
    pub de: Var,
    pub p_h: Var,
}

#[derive(Debug, Clone)]
pub struct HorlOutput<T: Real> {
    pub out: Var,
    pub graphs: Vec<HypergraphVars>,
    /// Sparsification masks actually used, one `N×M` tensor per item.
    pub masks: Vec<Tensor<T>>,
}

/// Values of one hypergraph, detached from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergraphState<T: Real> {
    pub h: Tensor<T>,
    pub h_s: Tensor<T>,
    pub dv: Vec<T>,
    pub de: Vec<T>,
    pub p_h: Tensor<T>,
}

impl Horl {
    /// `vertex_dim` defaults to `⌈C/2⌉` when `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channels: usize,
        vertex_dim: Option<usize>,
        hyperedges: usize,
        lambda: f64,
        eps_deg: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(lambda >= 0.0) || hyperedges == 0 || !(eps_deg > 0.0) || channels == 0 {
            return Err(Error::contract(format!(
                "HORL needs λ ≥ 0, M ≥ 1, ε_deg > 0, C ≥ 1 (got λ={lambda}, M={hyperedges}, ε={eps_deg}, C={channels})"
            )));
        }
        let d = vertex_dim.unwrap_or(channels.div_ceil(2));
        Ok(Horl {
            w_v: Conv::new(store, "horl.w_v", channels, d, 1, 1, 1.0, rng),
            w_g: Conv::new(store, "horl.w_g", channels, d, 1, 1, 1.0, rng),
            w_e: Conv::new(store, "horl.w_e", channels, hyperedges, HYPEREDGE_KERNEL, 1, 1.0, rng),
            theta: store.add("horl.theta", Tensor::eye(channels)),
            channels,
            vertex_dim: d,
            hyperedges,
            lambda,
            eps_deg,
        })
    }

    /// Vertex, guidance and hyperedge components for every batch item:
    /// `(V: N×d, g: d×1, E: N×M)`.
    pub fn build_components<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        f: Var,
    ) -> Result<Vec<(Var, Var, Var)>> {
        let shape = tape.shape(f).to_vec();
        let [b, c, h, w] = shape[..] else {
            return Err(Error::dim(format!("HORL expects B×C×H×W, got {shape:?}")));
        };
        if c != self.channels {
            return Err(Error::dim(format!(
                "HORL built for {} channels, got {c}",
                self.channels
            )));
        }
        let n = h * w;
        let v_all = self.w_v.forward(tape, p, f)?;
        let pooled = tape.gap(f)?;
        let g_all = self.w_g.forward(tape, p, pooled)?;
        let e_all = self.w_e.forward(tape, p, f)?;
        (0..b)
            .map(|bi| {
                let v = flatten_item(tape, v_all, bi, self.vertex_dim, n)?;
                let e = flatten_item(tape, e_all, bi, self.hyperedges, n)?;
                let g = tape.narrow(g_all, 0, bi, 1)?;
                let g = tape.reshape(g, &[self.vertex_dim, 1])?;
                Ok((v, g, e))
            })
            .collect()
    }

    /// Full HORL pass. With `frozen` masks the sparsification pattern is
    /// taken from them instead of being recomputed.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        f: Var,
        frozen: Option<&[Tensor<T>]>,
    ) -> Result<HorlOutput<T>> {
        let [b, c, h, w] = tape.value(f).dims4();
        let n = h * w;
        if let Some(m) = frozen {
            if m.len() != b {
                return Err(Error::contract(format!(
                    "{} frozen masks for a batch of {b}",
                    m.len()
                )));
            }
        }
        let comps = self.build_components(tape, p, f)?;
        let mut outs = Vec::with_capacity(b);
        let mut graphs = Vec::with_capacity(b);
        let mut masks = Vec::with_capacity(b);
        for (bi, (v, g, e)) in comps.into_iter().enumerate() {
            let hm = build_incidence(tape, v, g, e)?;
            let mask = match frozen {
                Some(m) => m[bi].clone(),
                None => sparsify_mask(tape.value(hm), self.lambda),
            };
            let h_s = apply_mask(tape, hm, &mask)?;
            let (dv, de, p_h) = interaction_matrix(tape, h_s, self.eps_deg)?;
            let fi = flatten_item(tape, f, bi, c, n)?;
            let y = propagate_flat(tape, fi, p[self.theta], p_h)?;
            let y = tape.transpose(y)?;
            outs.push(tape.reshape(y, &[1, c, h, w])?);
            graphs.push(HypergraphVars {
                v,
                g,
                e,
                h: hm,
                h_s,
                dv,
                de,
                p_h,
            });
            masks.push(mask);
        }
        let out = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat(&outs, 0)?
        };
        Ok(HorlOutput { out, graphs, masks })
    }
}

/// Item `b` of a `B×C×H×W` var as an `N×C` matrix (pixels row-major).
fn flatten_item<T: Real>(tape: &mut Tape<T>, x: Var, b: usize, c: usize, n: usize) -> Result<Var> {
    let item = tape.narrow(x, 0, b, 1)?;
    let item = tape.reshape(item, &[c, n])?;
    tape.transpose(item)
}

/// `H = |V diag(g) Vᵀ E|`.
pub fn build_incidence<T: Real>(tape: &mut Tape<T>, v: Var, g: Var, e: Var) -> Result<Var> {
    let vt = tape.transpose(v)?;
    let gvt = tape.mul(vt, g)?;
    let a = tape.matmul(v, gvt)?;
    let he = tape.matmul(a, e)?;
    tape.abs(he)
}

/// Indicator of `H > λ·mean(H)` with the mean over all entries.
pub fn sparsify_mask<T: Real>(h: &Tensor<T>, lambda: f64) -> Tensor<T> {
    let mean = h.data().iter().map(|v| v.f64()).sum::<f64>() / h.numel() as f64;
    let thr = lambda * mean;
    h.map(|v| if v.f64() > thr { T::one() } else { T::zero() })
}

pub fn apply_mask<T: Real>(tape: &mut Tape<T>, h: Var, mask: &Tensor<T>) -> Result<Var> {
    let m = tape.constant(mask.clone());
    tape.mul(h, m)
}

/// Value-level sparsification.
pub fn sparsify<T: Real>(h: &Tensor<T>, lambda: f64) -> Tensor<T> {
    let mask = sparsify_mask(h, lambda);
    let data = h.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
    Tensor::new(h.shape(), data).expect("same shape")
}

/// Degrees and the normalized interaction matrix. Returns `(Dv: N×1,
/// De: 1×M, P_H: N×N)` where the degree vars hold the raw (unregularized)
/// sums.
pub fn interaction_matrix<T: Real>(tape: &mut Tape<T>, h_s: Var, eps: f64) -> Result<(Var, Var, Var)> {
    let &[_, m] = tape.shape(h_s) else {
        return Err(Error::dim(format!("incidence must be a matrix, got {:?}", tape.shape(h_s))));
    };
    let dv = tape.sum_axis(h_s, 1)?;
    let de = tape.sum_axis(h_s, 0)?;
    let dv_reg = tape.add_scalar(dv, eps)?;
    let dv_is = tape.powf(dv_reg, -0.5)?;
    let de_reg = tape.add_scalar(de, eps)?;
    let de_inv = tape.powf(de_reg, -1.0)?;
    let de_inv = tape.reshape(de_inv, &[m, 1])?;
    // A = Dv^{-1/2} H_s, B = De^{-1} Aᵀ, P_H = A B
    let a = tape.mul(h_s, dv_is)?;
    let at = tape.transpose(a)?;
    let b = tape.mul(at, de_inv)?;
    let p_h = tape.matmul(a, b)?;
    Ok((dv, de, p_h))
}

/// `F' = FΘ − P_H FΘ` for an `N×C` feature matrix.
pub fn propagate_flat<T: Real>(tape: &mut Tape<T>, f: Var, theta: Var, p_h: Var) -> Result<Var> {
    let x = tape.matmul(f, theta)?;
    let px = tape.matmul(p_h, x)?;
    tape.sub(x, px)
}

impl<T: Real> HypergraphState<T> {
    /// Evaluates sparsification, degrees and `P_H` for a given incidence
    /// matrix.
    pub fn from_incidence(h: &Tensor<T>, lambda: f64, eps: f64) -> Result<Self> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let mask = sparsify_mask(h, lambda);
        let h_s = apply_mask(&mut tape, hv, &mask)?;
        let (dv, de, p_h) = interaction_matrix(&mut tape, h_s, eps)?;
        Ok(HypergraphState {
            h: h.clone(),
            h_s: tape.value(h_s).clone(),
            dv: tape.value(dv).data().to_vec(),
            de: tape.value(de).data().to_vec(),
            p_h: tape.value(p_h).clone(),
        })
    }

    pub fn from_tape(tape: &Tape<T>, g: &HypergraphVars) -> Self {
        HypergraphState {
            h: tape.value(g.h).clone(),
            h_s: tape.value(g.h_s).clone(),
            dv: tape.value(g.dv).data().to_vec(),
            de: tape.value(g.de).data().to_vec(),
            p_h: tape.value(g.p_h).clone(),
        }
    }

    pub fn vertices(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn nonzeros(&self) -> usize {
        self.h_s.data().iter().filter(|v| **v != T::zero()).count()
    }

    /// Writes `H.csv`, `H_s.csv`, `Dv.csv`, `De.csv` and `P_H.csv` into
    /// `dir`, row-major with 9 significant digits.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let n = self.vertices();
        if n > 256 {
            return Err(Error::contract(format!(
                "hypergraph dumps are limited to 256 vertices, got {n}"
            )));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files: [(&str, String); 5] = [
            ("H.csv", matrix_csv(&self.h)),
            ("H_s.csv", matrix_csv(&self.h_s)),
            ("Dv.csv", column_csv(&self.dv)),
            ("De.csv", column_csv(&self.de)),
            ("P_H.csv", matrix_csv(&self.p_h)),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn matrix_csv<T: Real>(t: &Tensor<T>) -> String {
    let cols = t.shape()[1];
    let mut s = String::new();
    for row in t.data().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{:.8e}", v.f64())).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

fn column_csv<T: Real>(v: &[T]) -> String {
    v.iter().map(|x| format!("{:.8e}\n", x.f64())).collect()
}

/// Straightforward nested-loop evaluation of the whole module in `f64`,
/// starting from the raw feature map and weights. Used by the self-test.
pub mod reference {
    /// Weights in plain row-major form: `wv` is `d×C`, `wg` is `d×C`, `we`
    /// is `M×C×7×7`, `theta` is `C×C`, biases per output channel.
    pub struct Weights<'a> {
        pub wv: &'a [f64],
        pub bv: &'a [f64],
        pub wg: &'a [f64],
        pub bg: &'a [f64],
        pub we: &'a [f64],
        pub be: &'a [f64],
        pub theta: &'a [f64],
        pub d: usize,
        pub m: usize,
    }

    /// `f` is one `C×H×W` item; returns `F'` as `C×H×W`.
    pub fn propagate(f: &[f64], c: usize, h: usize, w: usize, wt: &Weights, lambda: f64, eps: f64) -> Vec<f64> {
        let n = h * w;
        let (d, m) = (wt.d, wt.m);
        let at = |ch: usize, y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                f[ch * n + y as usize * w + x as usize]
            }
        };
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let mut acc = wt.bv[j];
                for ch in 0..c {
                    acc += wt.wv[j * c + ch] * f[ch * n + i];
                }
                v[i * d + j] = acc;
            }
        }
        let mean: Vec<f64> = (0..c).map(|ch| f[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64).collect();
        let g: Vec<f64> = (0..d)
            .map(|j| wt.bg[j] + (0..c).map(|ch| wt.wg[j * c + ch] * mean[ch]).sum::<f64>())
            .collect();
        let mut e = vec![0.0; n * m];
        for i in 0..n {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for j in 0..m {
                let mut acc = wt.be[j];
                for ch in 0..c {
                    for ky in 0..7isize {
                        for kx in 0..7isize {
                            acc += wt.we[((j * c + ch) * 7 + ky as usize) * 7 + kx as usize]
                                * at(ch, y + ky - 3, x + kx - 3);
                        }
                    }
                }
                e[i * m + j] = acc;
            }
        }
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                a[i * n + k] = (0..d).map(|j| v[i * d + j] * g[j] * v[k * d + j]).sum();
            }
        }
        let mut hm = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                hm[i * m + j] = (0..n).map(|k| a[i * n + k] * e[k * m + j]).sum::<f64>().abs();
            }
        }
        let thr = lambda * hm.iter().sum::<f64>() / (n * m) as f64;
        let hs: Vec<f64> = hm.iter().map(|&x| if x > thr { x } else { 0.0 }).collect();
        let dv: Vec<f64> = (0..n).map(|i| (0..m).map(|j| hs[i * m + j]).sum::<f64>() + eps).collect();
        let de: Vec<f64> = (0..m).map(|j| (0..n).map(|i| hs[i * m + j]).sum::<f64>() + eps).collect();
        let mut ph = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let s: f64 = (0..m).map(|j| hs[i * m + j] * hs[k * m + j] / de[j]).sum();
                ph[i * n + k] = s / (dv[i].sqrt() * dv[k].sqrt());
            }
        }
        let mut ft = vec![0.0; n * c];
        for i in 0..n {
            for o in 0..c {
                ft[i * c + o] = (0..c).map(|ch| f[ch * n + i] * wt.theta[ch * c + o]).sum();
            }
        }
        let mut out = vec![0.0; c * n];
        for i in 0..n {
            for o in 0..c {
                let smooth: f64 = (0..n).map(|k| ph[i * n + k] * ft[k * c + o]).sum();
                out[o * n + i] = ft[i * c + o] - smooth;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn incidence_hand_example_and_annihilation() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(t(&[2, 1], &[1.0, 2.0]));
        let g = tape.constant(t(&[1, 1], &[1.0]));
        let e = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let h = build_incidence(&mut tape, v, g, e).unwrap();
        assert_eq!(tape.value(h).data(), &[3.0, 6.0]);

        let neg = tape.constant(t(&[2, 1], &[-1.0, -1.0]));
        let h2 = build_incidence(&mut tape, v, g, neg).unwrap();
        assert_eq!(tape.value(h2).data(), &[3.0, 6.0]);

        let zero = tape.constant(t(&[1, 1], &[0.0]));
        let h0 = build_incidence(&mut tape, v, zero, e).unwrap();
        assert!(tape.value(h0).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sparsify_examples() {
        let h = t(&[2, 2], &[0.2, 0.2, 0.2, 3.4]);
        assert_eq!(sparsify(&h, 0.5).data(), &[0.0, 0.0, 0.0, 3.4]);
        let pos = t(&[2, 2], &[0.1, 0.5, 2.0, 0.01]);
        assert_eq!(sparsify(&pos, 0.0), pos);
        assert_eq!(DEFAULT_LAMBDA, 0.5);
    }

    #[test]
    fn interaction_hand_example() {
        let s = HypergraphState::from_incidence(&t(&[2, 1], &[1.0, 1.0]), 0.0, 1e-12).unwrap();
        assert_eq!(s.dv, vec![1.0, 1.0]);
        assert_eq!(s.de, vec![2.0]);
        for &x in s.p_h.data() {
            assert!((x - 0.5).abs() < 1e-9);
        }
        let z = HypergraphState::from_incidence(&Tensor::<f64>::zeros(&[3, 2]), 0.5, 1e-6).unwrap();
        assert!(z.p_h.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn degree_eigenvector_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Tensor::<f64>::rand_uniform(&[12, 5], 0.1, 2.0, &mut rng);
        let s = HypergraphState::from_incidence(&h, 0.0, 1e-12).unwrap();
        let u: Vec<f64> = s.dv.iter().map(|d| d.sqrt()).collect();
        for i in 0..12 {
            let pu: f64 = (0..12).map(|k| s.p_h.data()[i * 12 + k] * u[k]).sum();
            assert!((pu - u[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn propagate_hand_examples() {
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(t(&[2, 1], &[1.0, 0.0]));
        let theta = tape.constant(Tensor::eye(1));
        let p = tape.constant(t(&[2, 2], &[0.5, 0.5, 0.5, 0.5]));
        let y = propagate_flat(&mut tape, f, theta, p).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -0.5]);
        let zero = tape.constant(Tensor::zeros(&[2, 2]));
        let y = propagate_flat(&mut tape, f, theta, zero).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn uniform_degrees_suppress_constant_signal() {
        // every vertex in every hyperedge with equal weight
        let s = HypergraphState::from_incidence(&Tensor::<f64>::full(&[4, 3], 0.7), 0.5, 1e-12).unwrap();
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::full(&[4, 2], 1.3));
        let theta = tape.constant(Tensor::eye(2));
        let p = tape.constant(s.p_h.clone());
        let y = propagate_flat(&mut tape, f, theta, p).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn components_shapes_and_identity_vertex_map() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let horl = Horl::new(&mut store, 3, Some(3), 5, 0.5, 1e-6, &mut rng).unwrap();
        let wv = store.get_mut(horl.w_v.w);
        wv.data_mut().fill(0.0);
        for i in 0..3 {
            wv.data_mut()[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let fv = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
        let f = tape.constant(fv.clone());
        let comps = horl.build_components(&mut tape, &p, f).unwrap();
        let (v, g, e) = comps[0];
        assert_eq!(tape.shape(v), &[16, 3]);
        assert_eq!(tape.shape(g), &[3, 1]);
        assert_eq!(tape.shape(e), &[16, 5]);
        for i in 0..16 {
            for ch in 0..3 {
                assert_eq!(tape.value(v).data()[i * 3 + ch], fv.data()[ch * 16 + i]);
            }
        }

        let cst = tape.constant(Tensor::full(&[1, 3, 4, 4], 0.4));
        let (v, _, _) = horl.build_components(&mut tape, &p, cst).unwrap()[0];
        let rows: Vec<&[f64]> = tape.value(v).data().chunks(3).collect();
        assert!(rows.iter().all(|r| *r == rows[0]));
    }

    #[test]
    fn invalid_hyperparameters() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Horl::new(&mut store, 4, None, 0, 0.5, 1e-6, &mut rng).is_err());
        assert!(Horl::new(&mut store, 4, None, 4, -0.1, 1e-6, &mut rng).is_err());
        assert!(Horl::new(&mut store, 4, None, 4, 0.5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let horl = Horl::new(&mut store, 3, None, 4, 0.5, 1e-6, &mut rng).unwrap();
        let theta = Tensor::randn(&[3, 3], 0.7, &mut rng);
        store.get_mut(horl.theta).data_mut().copy_from_slice(theta.data());
        for id in [horl.w_v.b, horl.w_g.b, horl.w_e.b] {
            let n = store.get(id).numel();
            store.get_mut(id).data_mut().copy_from_slice(Tensor::<f64>::randn(&[n], 0.3, &mut rng).data());
        }
        let fv = Tensor::randn(&[2, 3, 3, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let f = tape.constant(fv.clone());
        let out = horl.forward(&mut tape, &p, f, None).unwrap();
        let got = tape.value(out.out);
        let wt = reference::Weights {
            wv: store.get(horl.w_v.w).data(),
            bv: store.get(horl.w_v.b).data(),
            wg: store.get(horl.w_g.w).data(),
            bg: store.get(horl.w_g.b).data(),
            we: store.get(horl.w_e.w).data(),
            be: store.get(horl.w_e.b).data(),
            theta: store.get(horl.theta).data(),
            d: horl.vertex_dim,
            m: 4,
        };
        for b in 0..2 {
            let item = fv.narrow(0, b, 1).unwrap();
            let want = reference::propagate(item.data(), 3, 3, 4, &wt, 0.5, 1e-6);
            let have = got.narrow(0, b, 1).unwrap();
            for (a, w) in have.data().iter().zip(&want) {
                assert!((a - w).abs() < 1e-9, "{a} vs {w}");
            }
        }
    }

    #[test]
    fn csv_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let s = HypergraphState::from_incidence(&t(&[2, 2], &[0.2, 0.2, 0.2, 3.4]), 0.5, 1e-6).unwrap();
        s.write_csv(dir.path()).unwrap();
        let h = std::fs::read_to_string(dir.path().join("H_s.csv")).unwrap();
        assert_eq!(h.lines().count(), 2);
        assert_eq!(h.lines().nth(1).unwrap(), "0.00000000e0,3.40000000e0");
        let dv = std::fs::read_to_string(dir.path().join("Dv.csv")).unwrap();
        assert_eq!(dv.lines().count(), 2);
    }
}
