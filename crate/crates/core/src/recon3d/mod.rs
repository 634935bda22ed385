//! Three-dimensional reconstruction with complex geometric optics illuminations.

pub mod cgo;
pub mod covering;
pub mod global;
pub mod path;
pub mod rotation_ode;
pub mod stability;
pub mod transfer;
pub mod validate;

pub use covering::{build_covering, Covering, Subdomain};
pub use global::{global_reconstruct_3d, prepare_3d, Anchor3D, Options3D, Prepared3D, ReconResult3D};
pub use path::{plan_path, PathPlan};
pub use rotation_ode::{Frame, IntegratorOptions};
