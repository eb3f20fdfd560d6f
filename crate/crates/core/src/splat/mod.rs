//! Point splatting: footprints, rasterization, gradients and the layered
//! fast path.

pub mod backward;
pub mod covariance;
pub mod layered;
pub mod raster;

pub use backward::{attribute_backward, attribute_backward_masked, composite_backward, composite_stack_backward, AttributeMask, FragmentGrads, ViewGrads};
pub use covariance::{footprint_covariance, splat_geometry, tangent_basis, SplatGeometry, SplatParams, SplatSkip};
pub use layered::{layered_composite, LayeredOptions, LayeredView};
pub use raster::{
    composite_stack, cutoff_radius, rasterize_splats, rasterize_view, Fragment, Payload, RasterOptions, RasterStats,
    Splat, ViewRaster, PAYLOAD_DIM,
};
