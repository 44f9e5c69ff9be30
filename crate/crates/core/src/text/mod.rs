mod embedding;
mod qangaroo;
mod synth;
mod tokenize;

pub use embedding::{embed_token, oov_vector, load_embeddings, parse_embeddings, CharEmbedder, EmbeddingTable};
pub use qangaroo::{
    load_qangaroo, parse_qangaroo, save_qangaroo, to_json, Annotation, DocRequirement, FactLabel, Sample,
};
pub use synth::{chain_oracle, gen_synthetic, ChainVerdict, SynthConfig};
pub use tokenize::{tokenize, tokenize_doc, words, Token};
