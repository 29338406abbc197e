//! Synthetic nested-operator dataset generation, byte-level loading,
//! dataset file I/O and batching.

mod io;
mod listops;

pub use io::{
    dataset_checksum, epoch_batches, generate_listops, load_bytes_dataset, load_dataset,
    load_dataset_meta, save_dataset, save_dataset_with_meta, Dataset, DatasetMeta, ListOpsSpec,
    Splits, BYTES_VOCAB, BYTE_PAD, DATASET_FORMAT,
};
pub use listops::{
    evaluate_listops, sample_tree, tokens_from_str, Expr, OpKind, LISTOPS_VOCAB, TOK_BEGIN,
    TOK_CLOSE, TOK_OPEN_MAX, TOK_OPEN_MED, TOK_OPEN_MIN, TOK_OPEN_SM, TOK_PAD,
};
