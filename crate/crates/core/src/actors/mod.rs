//! Actor contract: input assembly, tagged output, success checks and the
//! bounded retry loop.

pub mod harness;
mod runner;
mod spec;
mod success;
mod tagged;

pub use runner::{run_actor, ActorEnv, ActorError, ActorInput};
pub use spec::{ActorRegistry, ActorSpec, RegistryError, SlotSource, DEFAULT_MAX_RETRIES};
pub use success::*;
pub use tagged::*;
