//! Dense tensors, a small reverse-mode graph, the AdamW optimizer and
//! the binary checkpoint format.

mod adamw;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{read_f64, read_string, read_u32, read_u64, write_string};
pub use gradcheck::{central_difference, grad_check, max_relative_error};
pub use graph::{lse, softmax, sort_desc_perm, Gradients, Graph, Var};
pub(crate) use graph::{dot, effective_len, hinge_row, sign0, smooth_max};
#[cfg(test)]
pub(crate) use graph::top_k_desc;
pub use params::{Bound, ParamStore};
pub use tensor::Tensor;
