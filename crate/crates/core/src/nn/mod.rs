//! Dense-tensor numeric core: layers with hand-written backward passes,
//! losses and AdamW.

pub mod kernels;
pub mod layer;
pub mod loss;
pub mod optim;
pub mod params;
pub mod sequential;
pub mod tensor;

pub use layer::{sigmoid, Layer};
pub use loss::{bce, bce_soft, mse};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Fingerprint, Module, ParamSet};
pub use sequential::{Sequential, Trace};
pub use tensor::{Scalar, Tensor};
