//! Layered spiking networks simulated in discrete time.

mod arch;
mod layer;
mod network;
mod neuron;

pub use arch::{Architecture, Stage, PRESETS};
pub use layer::{Layer, LayerKind, KERNEL, POOL};
pub(crate) use network::Tape;
pub use network::{argmax, ForwardTrace, NetworkModel, Prediction};
pub use neuron::{li_step, lif_step, LifParams, NeuronState};
pub(crate) use neuron::{Heaviside, SpikeFn};
