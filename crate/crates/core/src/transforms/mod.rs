//! Cook-Toom construction, analysis and serialization of Winograd
//! transformation triples.

mod analysis;
mod cook_toom;
mod io;
mod points;

pub use analysis::{quantized_tile, sparsity, transform_error_profile, zero_count, ErrorStats};
pub use cook_toom::{
    cook_toom_1d, default_transform, hadamard_mults_per_tile, mults_per_output, WinogradTransform,
};
pub use io::{mat_from_json, mat_to_json, transform_from_json, transform_to_json, JsonScalar, TransformFile};
pub use points::{default_points, leading_points, PolyPoints, SUPPORTED};
