pub mod bbox;
pub mod dataset;
pub mod detection;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod proposals;
pub mod servo;
pub mod sim;
pub mod tensor;

pub use bbox::{iou, BBox};
pub use dataset::AnnotatedFrame;
pub use detection::{BoxEncoding, Detection};
pub use model::{NetworkConfig, NetworkWeights};
pub use tensor::{Scalar, Tensor, TensorError};
