//! Per-point Lorentz kernels in `f64`, shared by the scalar API, the batched
//! feature-map API and the tape operations so all three agree bit for bit.

/// Below this spatial norm the logarithmic map returns the zero vector.
pub const LOG_ZERO_NORM: f64 = 1e-7;

/// Temporal coordinate for spatial part with squared norm `sq`.
#[inline]
pub fn time_from_sq(sq: f64, k: f64) -> f64 {
    (k + sq.max(0.0)).sqrt()
}

#[inline]
pub fn sq_norm(s: impl IntoIterator<Item = f64>) -> f64 {
    s.into_iter().map(|v| v * v).sum()
}

/// Geodesic distance from the origin to the point `(t, s)` with `‖s‖ = r`.
///
/// The arcosh argument is clamped to at least one. Near the origin arcosh of
/// the rounded temporal coordinate loses most of its digits, so when the
/// argument is at most two the equal on-manifold form `√k·asinh(r/√k)` is
/// evaluated instead.
#[inline]
pub fn origin_distance(t: f64, r: f64, k: f64) -> f64 {
    let sk = k.sqrt();
    let z = (t / sk).max(1.0);
    if z > 2.0 {
        sk * z.acosh()
    } else {
        sk * (r / sk).asinh()
    }
}

/// Spatial part of `log_o(x)`; the temporal slot is identically zero.
pub fn log_origin(t: f64, s: &[f64], k: f64, out: &mut [f64]) {
    let r = sq_norm(s.iter().copied()).sqrt();
    if r < LOG_ZERO_NORM {
        out.fill(0.0);
        return;
    }
    let scale = origin_distance(t, r, k) / r;
    for (o, v) in out.iter_mut().zip(s) {
        *o = scale * v;
    }
}

/// Vector-Jacobian product of [`log_origin`]. Writes the gradient for the
/// spatial inputs into `gs` and returns the gradient for `t`.
pub fn log_origin_vjp(t: f64, s: &[f64], k: f64, gy: &[f64], gs: &mut [f64]) -> f64 {
    let r = sq_norm(s.iter().copied()).sqrt();
    if r < LOG_ZERO_NORM {
        // the map tends to the identity on the spatial part
        gs.copy_from_slice(gy);
        return 0.0;
    }
    let sk = k.sqrt();
    let z = (t / sk).max(1.0);
    let dot: f64 = gy.iter().zip(s).map(|(a, b)| a * b).sum();
    if z > 2.0 {
        let d = sk * z.acosh();
        let f = d / r;
        let coeff = -d / (r * r * r);
        for ((g, y), v) in gs.iter_mut().zip(gy).zip(s) {
            *g = f * y + coeff * dot * v;
        }
        dot / (r * (z * z - 1.0).sqrt())
    } else {
        let d = sk * (r / sk).asinh();
        let f = d / r;
        // f'(r) / r, with a series near zero where the closed form cancels
        let fp_over_r = if r < 1e-3 {
            -1.0 / (3.0 * k) + 3.0 * r * r / (10.0 * k * k)
        } else {
            let dg = 1.0 / (1.0 + r * r / k).sqrt();
            (dg * r - d) / (r * r * r)
        };
        for ((g, y), v) in gs.iter_mut().zip(gy).zip(s) {
            *g = f * y + fp_over_r * dot * v;
        }
        0.0
    }
}

/// `exp_o(v)` for a tangent at the origin given by its spatial part.
/// Returns the temporal coordinate and fills `out` with the spatial part.
pub fn exp_origin(v: &[f64], k: f64, out: &mut [f64]) -> f64 {
    let sk = k.sqrt();
    let n = sq_norm(v.iter().copied()).sqrt();
    if n == 0.0 {
        out.fill(0.0);
        return sk;
    }
    let scale = sk * (n / sk).sinh() / n;
    for (o, x) in out.iter_mut().zip(v) {
        *o = scale * x;
    }
    sk * (n / sk).cosh()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches_agree_at_switch_point() {
        // z = 2 exactly on the unit manifold: t = 2, r = sqrt(3)
        let r = 3f64.sqrt();
        let a = 2f64.acosh();
        let b = origin_distance(2.0, r, 1.0);
        assert!((a - b).abs() < 1e-14);
        let c = origin_distance(2.0 + 1e-12, (3.0f64 + 4e-12).sqrt(), 1.0);
        assert!((a - c).abs() < 1e-10);
    }

    #[test]
    fn series_matches_closed_form_at_cutoff() {
        let k: f64 = 1.7;
        let r: f64 = 1e-3;
        let d = k.sqrt() * (r / k.sqrt()).asinh();
        let dg = 1.0 / (1.0 + r * r / k).sqrt();
        let closed = (dg * r - d) / (r * r * r);
        let series = -1.0 / (3.0 * k) + 3.0 * r * r / (10.0 * k * k);
        assert!((closed - series).abs() < 1e-6, "{closed} vs {series}");
    }
}
