//! Small dense networks with hand-written reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod film;
pub mod history;
pub mod layers;
pub mod linalg;
pub mod network;
pub mod schedule_net;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use history::HistoryBatch;
pub use layers::{softplus, Activation, Segment};
pub use network::{Network, NetworkParams, NetworkSpec, QBatch, QCache, Variant};
pub use schedule_net::ScheduleCache;

#[cfg(test)]
mod tests;
