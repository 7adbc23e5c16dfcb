//! Lorentz-model primitives at the origin.
//!
//! A point is `x = [t, s]` with `-t² + ‖s‖² = -k` and `t > 0`. Channel 0 of
//! every feature map is the temporal coordinate, channels `1..=C` are
//! spatial.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorentz::pixel;
use crate::numerics::{Real, Tensor};

/// Manifold constant `k > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(k: f64) -> Result<Self> {
        if k > 0.0 && k.is_finite() {
            Ok(Curvature(k))
        } else {
            Err(Error::contract(format!("curvature must be positive and finite, got {k}")))
        }
    }

    pub fn k(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(1.0)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;

    fn try_from(k: f64) -> Result<Self> {
        Curvature::new(k)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

/// `-x_t·y_t + x_sᵀy_s` for raw `(n+1)`-vectors.
pub fn lorentz_inner<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::dim(format!(
            "lorentz_inner of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let space: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a.f64() * b.f64()).sum();
    Ok(T::of(-x[0].f64() * y[0].f64() + space))
}

fn check_finite<T: Real>(v: &[T], op: &'static str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric {
            op,
            detail: format!("non-finite input at index {i}"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint<T: Real> {
    pub t: T,
    pub s: Vec<T>,
    pub k: Curvature,
}

impl<T: Real> LorentzPoint<T> {
    /// Validates positivity of `t` and the manifold residual.
    pub fn new(t: T, s: Vec<T>, k: Curvature) -> Result<Self> {
        let p = LorentzPoint { t, s, k };
        if !(t > T::zero()) {
            return Err(Error::contract(format!("temporal coordinate must be positive, got {t}")));
        }
        let r = p.residual();
        if r > T::MANIFOLD_EPS {
            return Err(Error::contract(format!("point is off the manifold, residual {r:e}")));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn to_vec(&self) -> Vec<T> {
        std::iter::once(self.t).chain(self.s.iter().copied()).collect()
    }

    /// `|⟨x,x⟩_L + k|` evaluated in `f64`.
    pub fn residual(&self) -> f64 {
        residual(self.t.f64(), self.s.iter().map(|v| v.f64()), self.k.k())
    }

    pub fn inner(&self, other: &LorentzPoint<T>) -> Result<T> {
        lorentz_inner(&self.to_vec(), &other.to_vec())
    }
}

pub(crate) fn residual(t: f64, s: impl Iterator<Item = f64>, k: f64) -> f64 {
    (-t * t + pixel::sq_norm(s) + k).abs()
}

/// The reference origin `o = (√k, 0, …, 0)` of an `n`-dimensional manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Origin {
    pub k: Curvature,
    pub n: usize,
}

impl Origin {
    pub fn new(k: Curvature, n: usize) -> Self {
        Origin { k, n }
    }

    pub fn point<T: Real>(&self) -> LorentzPoint<T> {
        LorentzPoint {
            t: T::of(self.k.sqrt()),
            s: vec![T::zero(); self.n],
            k: self.k,
        }
    }
}

/// Tangent vector at the origin, laid out `[time, space]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T: Real> {
    pub v: Vec<T>,
    pub base: Origin,
}

impl<T: Real> TangentVector<T> {
    pub fn from_spatial(s: &[T], k: Curvature) -> Self {
        TangentVector {
            v: std::iter::once(T::zero()).chain(s.iter().copied()).collect(),
            base: Origin::new(k, s.len()),
        }
    }

    /// Checks tangency `⟨o,v⟩_L = 0`, i.e. a vanishing time slot.
    pub fn new(v: Vec<T>, k: Curvature) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::dim("tangent vector needs at least one spatial slot"));
        }
        if v[0].abs().f64() * k.sqrt() > T::MANIFOLD_EPS {
            return Err(Error::contract(format!(
                "vector is not tangent at the origin (time slot {})",
                v[0]
            )));
        }
        let n = v.len() - 1;
        Ok(TangentVector {
            v,
            base: Origin::new(k, n),
        })
    }

    pub fn spatial(&self) -> &[T] {
        &self.v[1..]
    }

    pub fn norm(&self) -> f64 {
        pixel::sq_norm(self.v.iter().map(|x| x.f64())).sqrt()
    }
}

/// Lifts a spatial vector onto the manifold: `t = √(k + ‖s‖²)`.
pub fn reconstruct_time<T: Real>(s: &[T], k: Curvature) -> Result<LorentzPoint<T>> {
    check_finite(s, "reconstruct_time")?;
    let sq = pixel::sq_norm(s.iter().map(|v| v.f64()));
    Ok(LorentzPoint {
        t: T::of(pixel::time_from_sq(sq, k.k())),
        s: s.to_vec(),
        k,
    })
}

/// Discards the time slot of `raw` and rebuilds it from the space part.
pub fn project_to_manifold<T: Real>(raw: &[T], k: Curvature) -> Result<LorentzPoint<T>> {
    if raw.len() < 2 {
        return Err(Error::dim("projection needs at least one spatial slot"));
    }
    check_finite(raw, "project_to_manifold")?;
    reconstruct_time(&raw[1..], k)
}

/// `√k · arcosh(-⟨o,x⟩_L / k)`.
pub fn geodesic_distance<T: Real>(o: &Origin, x: &LorentzPoint<T>) -> Result<T> {
    if o.k != x.k {
        return Err(Error::contract(format!(
            "curvature mismatch: origin k={}, point k={}",
            o.k.k(),
            x.k.k()
        )));
    }
    if o.n != x.dim() {
        return Err(Error::dim(format!("origin dimension {} vs point {}", o.n, x.dim())));
    }
    let r = pixel::sq_norm(x.s.iter().map(|v| v.f64())).sqrt();
    Ok(T::of(pixel::origin_distance(x.t.f64(), r, x.k.k())))
}

/// `log_o(x) = d(o,x) · v / ‖v‖` with `v = x + (1/k)⟨o,x⟩_L o`.
pub fn log_map_origin<T: Real>(x: &LorentzPoint<T>) -> Result<TangentVector<T>> {
    check_finite(&x.to_vec(), "log_map_origin")?;
    let s: Vec<f64> = x.s.iter().map(|v| v.f64()).collect();
    let mut out = vec![0.0; s.len()];
    pixel::log_origin(x.t.f64(), &s, x.k.k(), &mut out);
    let out: Vec<T> = out.into_iter().map(T::of).collect();
    Ok(TangentVector::from_spatial(&out, x.k))
}

/// `exp_o(v) = cosh(‖v‖/√k)·o + √k·sinh(‖v‖/√k)·v/‖v‖`.
pub fn exp_map_origin<T: Real>(v: &TangentVector<T>) -> Result<LorentzPoint<T>> {
    check_finite(&v.v, "exp_map_origin")?;
    let s: Vec<f64> = v.spatial().iter().map(|x| x.f64()).collect();
    let mut out = vec![0.0; s.len()];
    let t = pixel::exp_origin(&s, v.base.k.k(), &mut out);
    Ok(LorentzPoint {
        t: T::of(t),
        s: out.into_iter().map(T::of).collect(),
        k: v.base.k,
    })
}

/// Per-pixel Lorentz points stored as a `B×(1+C)×H×W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzFeatureMap<T: Real> {
    data: Tensor<T>,
    k: Curvature,
}

impl<T: Real> LorentzFeatureMap<T> {
    /// Wraps `data` after checking positivity and the manifold residual at
    /// every pixel.
    pub fn new(data: Tensor<T>, k: Curvature) -> Result<Self> {
        check_map_shape(data.shape())?;
        let m = LorentzFeatureMap { data, k };
        let r = m.max_residual();
        if r > T::MANIFOLD_EPS {
            return Err(Error::contract(format!("feature map is off the manifold, residual {r:e}")));
        }
        if !(m.min_time() > 0.0) {
            return Err(Error::contract("temporal channel must be positive"));
        }
        Ok(m)
    }

    /// Reconstructs the temporal channel for a `B×C×H×W` spatial tensor.
    pub fn from_spatial(s: &Tensor<T>, k: Curvature) -> Result<Self> {
        if s.rank() != 4 {
            return Err(Error::dim(format!("expected B×C×H×W, got {:?}", s.shape())));
        }
        s.check_finite("reconstruct_time")?;
        let [b, c, h, w] = s.dims4();
        let hw = h * w;
        let mut data = Vec::with_capacity(b * (c + 1) * hw);
        for src in s.data().chunks(c * hw) {
            for p in 0..hw {
                let sq = pixel::sq_norm((0..c).map(|ch| src[ch * hw + p].f64()));
                data.push(T::of(pixel::time_from_sq(sq, k.k())));
            }
            data.extend_from_slice(src);
        }
        Ok(LorentzFeatureMap {
            data: Tensor::new(&[b, c + 1, h, w], data)?,
            k,
        })
    }

    /// Projects raw `B×(1+C)×H×W` values, ignoring their time channel.
    pub fn project(raw: &Tensor<T>, k: Curvature) -> Result<Self> {
        check_map_shape(raw.shape())?;
        let c1 = raw.shape()[1];
        Self::from_spatial(&raw.narrow(1, 1, c1 - 1)?, k)
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<T> {
        self.data
    }

    pub fn curvature(&self) -> Curvature {
        self.k
    }

    pub fn spatial_channels(&self) -> usize {
        self.data.shape()[1] - 1
    }

    pub fn spatial(&self) -> Tensor<T> {
        self.data
            .narrow(1, 1, self.spatial_channels())
            .expect("shape checked at construction")
    }

    pub fn pixel(&self, b: usize, y: usize, x: usize) -> LorentzPoint<T> {
        let c = self.spatial_channels();
        LorentzPoint {
            t: self.data.at4(b, 0, y, x),
            s: (1..=c).map(|ch| self.data.at4(b, ch, y, x)).collect(),
            k: self.k,
        }
    }

    fn for_each_pixel(&self, mut f: impl FnMut(usize, usize, f64, &[f64])) {
        let [b, c1, h, w] = self.data.dims4();
        let hw = h * w;
        let mut s = vec![0.0; c1 - 1];
        for (bi, src) in self.data.data().chunks(c1 * hw).enumerate() {
            for p in 0..hw {
                for (ch, v) in s.iter_mut().enumerate() {
                    *v = src[(ch + 1) * hw + p].f64();
                }
                f(bi, p, src[p].f64(), &s);
            }
        }
        debug_assert!(b > 0);
    }

    /// Largest `|⟨x,x⟩_L + k|` over all pixels, evaluated in `f64`.
    pub fn max_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        let k = self.k.k();
        self.for_each_pixel(|_, _, t, s| {
            worst = worst.max(residual(t, s.iter().copied(), k));
        });
        worst
    }

    pub fn min_time(&self) -> f64 {
        let [_, _, h, w] = self.data.dims4();
        let c1 = self.data.shape()[1];
        self.data
            .data()
            .chunks(c1 * h * w)
            .flat_map(|b| b[..h * w].iter())
            .map(|v| v.f64())
            .fold(f64::INFINITY, f64::min)
    }

    /// Pointwise `log_o`, returned as a `B×(1+C)×H×W` tangent field whose
    /// time channel is zero.
    pub fn log_map_origin(&self) -> Result<Tensor<T>> {
        self.data.check_finite("log_map_origin")?;
        let [b, c1, h, w] = self.data.dims4();
        let hw = h * w;
        let k = self.k.k();
        let mut out = vec![T::zero(); b * c1 * hw];
        let mut y = vec![0.0; c1 - 1];
        self.for_each_pixel(|bi, p, t, s| {
            pixel::log_origin(t, s, k, &mut y);
            for (ch, v) in y.iter().enumerate() {
                out[(bi * c1 + ch + 1) * hw + p] = T::of(*v);
            }
        });
        Tensor::new(&[b, c1, h, w], out)
    }

    /// Geodesic distance of every pixel from the origin, `B×1×H×W`.
    pub fn distance_map(&self) -> Result<Tensor<T>> {
        let [b, _, h, w] = self.data.dims4();
        let k = self.k.k();
        let mut out = Vec::with_capacity(b * h * w);
        self.for_each_pixel(|_, _, t, s| {
            let r = pixel::sq_norm(s.iter().copied()).sqrt();
            out.push(T::of(pixel::origin_distance(t, r, k)));
        });
        Tensor::new(&[b, 1, h, w], out)
    }
}

fn check_map_shape(shape: &[usize]) -> Result<()> {
    match shape {
        [_, c, _, _] if *c >= 2 => Ok(()),
        _ => Err(Error::dim(format!(
            "Lorentz feature map needs shape B×(1+C)×H×W with C ≥ 1, got {shape:?}"
        ))),
    }
}
