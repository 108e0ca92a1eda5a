//! Numerical substrate: dense tensors, reverse-mode autodiff, layers, and
//! optimizers. Everything runs in `f64`.

pub mod fdiff;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use layers::{Lifter, Linear, LinearVars, Mlp, MlpVars, ParamVisit};
pub use optim::{Algo, CosineSchedule, Optimizer};
pub use tape::{concat, Grads, Tape, Var};
pub use tensor::Tensor;
