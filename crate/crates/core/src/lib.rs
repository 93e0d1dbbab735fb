//! Biased persona duels: the persona registry, fine-tuning dataset and job
//! pipeline, prompt routing, duel generation, the rating log and its analytics.

pub mod analytics;
pub mod clock;
pub mod dataset;
pub mod duel;
pub mod engine;
pub mod finetune;
pub mod ids;
pub mod persona;
pub mod rating;
pub mod router;
mod store_dir;

pub use persona::{variants_for, BiasDimension, PersonaSpec, PersonaVariant, Registry, SharedRegistry};
pub use store_dir::StoreDir;
