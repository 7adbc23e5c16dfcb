//! Brute-force reference implementations used by the integration tests.
//! None of these call into the library's numeric kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `m×k` times `k×n`, row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Zero-padded cross-correlation. `x` is `B×C×H×W`, `w` is `O×C×KH×KW`.
/// Returns the output and its shape.
pub fn conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [b, c, h, wd] = xs;
    let [o, c2, kh, kw] = ws;
    assert_eq!(c, c2);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((bi * c + ic) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [b, o, oh, ow])
}

/// HORL weights in plain arrays.
pub struct HorlWeights {
    pub c: usize,
    pub d: usize,
    pub m: usize,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wg: Vec<f64>,
    pub bg: Vec<f64>,
    pub we: Vec<f64>,
    pub be: Vec<f64>,
    pub theta: Vec<f64>,
}

pub struct DenseHypergraph {
    pub n: usize,
    pub m: usize,
    pub h: Vec<Vec<f64>>,
    pub h_s: Vec<Vec<f64>>,
    pub p_h: Vec<Vec<f64>>,
}

/// `Dv^{-1/2} H_s De^{-1} H_sᵀ Dv^{-1/2}` built with explicit diagonal
/// matrices.
pub fn interaction(h_s: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    let n = h_s.len();
    let m = h_s.first().map_or(0, Vec::len);
    let dv: Vec<f64> = h_s.iter().map(|r| r.iter().sum::<f64>() + eps).collect();
    let de: Vec<f64> = (0..m).map(|j| h_s.iter().map(|r| r[j]).sum::<f64>() + eps).collect();
    let mut dv_is = vec![vec![0.0; n]; n];
    for i in 0..n {
        dv_is[i][i] = 1.0 / dv[i].sqrt();
    }
    let mut de_inv = vec![vec![0.0; m]; m];
    for j in 0..m {
        de_inv[j][j] = 1.0 / de[j];
    }
    let ht: Vec<Vec<f64>> = (0..m).map(|j| h_s.iter().map(|r| r[j]).collect()).collect();
    let prod = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let inner = b.len();
        let cols = b.first().map_or(0, Vec::len);
        a.iter()
            .map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect())
            .collect()
    };
    let left = prod(&dv_is, h_s);
    let left = prod(&left, &de_inv);
    let left = prod(&left, &ht);
    prod(&left, &dv_is)
}

pub fn sparsify(h: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    let count = h.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = h.iter().flatten().sum::<f64>() / count;
    h.iter()
        .map(|r| r.iter().map(|&v| if v > lambda * mean { v } else { 0.0 }).collect())
        .collect()
}

/// Whole HORL pass for one `C×H×W` item. Returns `F'` as `C×H×W` plus the
/// intermediate matrices.
pub fn horl_dense(f: &[f64], hgt: usize, wdt: usize, wt: &HorlWeights, lambda: f64, eps: f64) -> (Vec<f64>, DenseHypergraph) {
    let (c, d, m) = (wt.c, wt.d, wt.m);
    let n = hgt * wdt;
    let xs = [1, c, hgt, wdt];
    let (v, _) = conv2d(f, xs, &wt.wv, [d, c, 1, 1], Some(&wt.bv), 1, 0);
    let (e, _) = conv2d(f, xs, &wt.we, [m, c, 7, 7], Some(&wt.be), 1, 3);
    let pooled: Vec<f64> = (0..c).map(|ch| f[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let (g, _) = conv2d(&pooled, [1, c, 1, 1], &wt.wg, [d, c, 1, 1], Some(&wt.bg), 1, 0);

    // channel-major conv outputs to per-vertex rows
    let vrow = |i: usize| -> Vec<f64> { (0..d).map(|j| v[j * n + i]).collect() };
    let mut h = vec![vec![0.0; m]; n];
    for (i, row) in h.iter_mut().enumerate() {
        let vi = vrow(i);
        for (q, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..n {
                let vk = vrow(k);
                let a_ik: f64 = (0..d).map(|j| vi[j] * g[j] * vk[j]).sum();
                acc += a_ik * e[q * n + k];
            }
            *cell = acc.abs();
        }
    }
    let h_s = sparsify(&h, lambda);
    let p_h = interaction(&h_s, eps);

    let mut ftheta = vec![vec![0.0; c]; n];
    for (i, row) in ftheta.iter_mut().enumerate() {
        for (o, cell) in row.iter_mut().enumerate() {
            *cell = (0..c).map(|ch| f[ch * n + i] * wt.theta[ch * c + o]).sum();
        }
    }
    let mut out = vec![0.0; c * n];
    for i in 0..n {
        for o in 0..c {
            let smooth: f64 = (0..n).map(|k| p_h[i][k] * ftheta[k][o]).sum();
            out[o * n + i] = ftheta[i][o] - smooth;
        }
    }
    (out, DenseHypergraph { n, m, h, h_s, p_h })
}

pub fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Vec<Vec<bool>> {
    (0..h).map(|_| (0..w).map(|_| r.random_bool(density)).collect()).collect()
}

/// Pixel counts `(tp, fp, fn)` by a full scan.
pub fn pixel_counts(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (pr, gr) in pred.iter().zip(gt) {
        for (&p, &g) in pr.iter().zip(gr) {
            tp += (p && g) as usize;
            fp += (p && !g) as usize;
            fn_ += (!p && g) as usize;
        }
    }
    (tp, fp, fn_)
}

/// 8-connected labelling by union-find. Components come back ordered by
/// their first pixel in raster order, as `(pixel count, (row, col) mean)`.
pub fn components(mask: &[Vec<bool>]) -> Vec<(usize, (f64, f64))> {
    let h = mask.len();
    let w = mask.first().map_or(0, Vec::len);
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            if !mask[y][x] {
                continue;
            }
            for (dy, dx) in [(-1isize, -1isize), (-1, 0), (-1, 1), (0, -1)] {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= w as isize || !mask[ny as usize][nx as usize] {
                    continue;
                }
                let a = find(&mut parent, y * w + x);
                let b = find(&mut parent, ny as usize * w + nx as usize);
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut acc: std::collections::HashMap<usize, (usize, f64, f64)> = Default::default();
    for y in 0..h {
        for x in 0..w {
            if !mask[y][x] {
                continue;
            }
            let r = find(&mut parent, y * w + x);
            let e = acc.entry(r).or_insert_with(|| {
                order.push(r);
                (0, 0.0, 0.0)
            });
            e.0 += 1;
            e.1 += y as f64;
            e.2 += x as f64;
        }
    }
    order
        .into_iter()
        .map(|r| {
            let (n, sy, sx) = acc[&r];
            (n, (sy / n as f64, sx / n as f64))
        })
        .collect()
}

/// `(targets, detected, false alarm pixels)` by repeatedly taking the
/// globally closest unused pair within `radius`.
pub fn target_counts(pred: &[Vec<bool>], gt: &[Vec<bool>], radius: f64) -> (usize, usize, usize) {
    let gc = components(gt);
    let pc = components(pred);
    let mut gt_used = vec![false; gc.len()];
    let mut pred_used = vec![false; pc.len()];
    let mut detected = 0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, g) in gc.iter().enumerate() {
            for (j, p) in pc.iter().enumerate() {
                if gt_used[i] || pred_used[j] {
                    continue;
                }
                let d = ((g.1 .0 - p.1 .0).powi(2) + (g.1 .1 - p.1 .1).powi(2)).sqrt();
                if d <= radius && best.is_none_or(|b| d < b.0) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        gt_used[i] = true;
        pred_used[j] = true;
        detected += 1;
    }
    let fa = pc.iter().zip(&pred_used).filter(|(_, &u)| !u).map(|(c, _)| c.0).sum();
    (gc.len(), detected, fa)
}

pub fn flatten(mask: &[Vec<bool>]) -> Vec<bool> {
    mask.iter().flatten().copied().collect()
}

/// `x = (cosh(|v|/√k)·√k, sinh(|v|/√k)·√k·v/|v|)`.
pub fn exp_origin(v: &[f64], k: f64) -> (f64, Vec<f64>) {
    let sk = k.sqrt();
    let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if r == 0.0 {
        return (sk, vec![0.0; v.len()]);
    }
    let a = r / sk;
    (sk * a.cosh(), v.iter().map(|x| sk * a.sinh() * x / r).collect())
}

/// Geodesic distance from the origin through `arcosh`.
pub fn origin_distance(t: f64, k: f64) -> f64 {
    k.sqrt() * (t / k.sqrt()).max(1.0).acosh()
}
