//! Triangle meshes, gradient-domain deformation operators, spectral bases,
//! mesh I/O and synthetic blendshape rigs.

pub mod error;
pub mod gradient;
pub mod io;
pub mod mesh;
pub mod real;
pub mod rig;
pub mod sparse;
pub mod spectral;
pub mod vec3;

pub use error::{Error, Result};
pub use gradient::{GradientOperator, JacobianField};
pub use mesh::{PerTriangleFeatures, PerVertexFeatures, TriangleMesh};
pub use real::Real;
pub use rig::{build_synthetic_rig, evaluate_rig, BlendshapeRig};
pub use spectral::{laplacian_eigenbasis, SpectralBasis};
pub use vec3::{Mat3, Vec3};

pub type Mesh = TriangleMesh<f64>;
pub type Mesh32 = TriangleMesh<f32>;
pub type Jacobians = JacobianField<f64>;
pub type Jacobians32 = JacobianField<f32>;
pub type Operator = GradientOperator<f64>;
pub type Operator32 = GradientOperator<f32>;
