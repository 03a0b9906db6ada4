//! Binary file formats: token embeddings in and trained models out.

mod bytes;
mod embeddings;
mod model_file;

pub use embeddings::{read_embeddings, write_embeddings, SpaceTag, TokenEmbeddingSet, EMBEDDING_MAGIC};
pub use model_file::{load_model, save_model, MODEL_MAGIC};
