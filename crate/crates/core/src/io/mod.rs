//! Model container, weight blobs and report documents.

mod blob;
mod docs;
mod json;
mod manifest;

pub use blob::{decode_blob, encode_blob, BLOB_MAGIC, BLOB_VERSION};
pub use docs::{
    read_document, write_document, CostDocument, HashScope, PlanDocument, ScoresDocument,
    TOOL_VERSION,
};
pub use json::{canonical_json, to_canonical};
pub use manifest::{
    graph_hash, load_graph, load_inputs, load_model, manifest_json, read_manifest, save_graph,
    save_inputs, save_model, write_atomic, ModelManifest, FORMAT_VERSION,
};
