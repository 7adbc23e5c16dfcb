//! Lorentz-model geometry and the hyperbolic encoder branch.

pub mod encoder;
pub mod geometry;
pub(crate) mod pixel;

pub use encoder::{GaLrcm, GeometricAttention, LorentzEncoder, LorentzVar};
pub use geometry::{
    exp_map_origin, geodesic_distance, log_map_origin, lorentz_inner, project_to_manifold,
    reconstruct_time, Curvature, LorentzFeatureMap, LorentzPoint, Origin, TangentVector,
};
