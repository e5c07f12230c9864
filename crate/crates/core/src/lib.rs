pub mod diffengine;
pub mod models;
pub mod sparsify;
pub mod datagen;
pub mod metrics;
pub mod inference;
