//! Event ingestion, synthetic worlds and persistence of datasets and models.

mod csv_files;
mod model_file;
mod synth;

pub use csv_files::{
    load_dataset, load_distance_matrix, load_event_set, load_events_csv, load_graph,
    load_nodes_csv, save_dataset, save_distance_matrix, save_events_csv, save_nodes_csv,
    sidecar_path, EVENTS_HEADER, NODES_HEADER,
};
pub use model_file::{
    decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use synth::{synth_event_stream, synth_events, synth_graph, SynthParams};
