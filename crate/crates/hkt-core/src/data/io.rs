use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::listops::{evaluate_listops, sample_tree, LISTOPS_VOCAB, TOK_BEGIN, TOK_PAD};
use crate::error::{HktError, Result};
use crate::numkit::Prng;

/// Generator knobs for the synthetic nested-operator task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ListOpsSpec {
    pub max_depth: usize,
    pub max_arity: usize,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for ListOpsSpec {
    fn default() -> Self {
        ListOpsSpec {
            max_depth: 3,
            max_arity: 5,
            seq_len: 128,
            n_train: 10_000,
            n_val: 1_000,
            n_test: 1_000,
            seed: 42,
        }
    }
}

/// Fixed-length token sequences with integer labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub vocab_size: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

const MAX_SAMPLE_ATTEMPTS: usize = 10_000;

/// Deterministic generation; samples are unique across all three splits.
/// Trees whose token form exceeds seq_len - 1 (one slot is reserved for the
/// begin marker) are resampled rather than truncated.
pub fn generate_listops(spec: &ListOpsSpec) -> Result<Splits> {
    if spec.max_depth < 1 || spec.max_arity < 2 {
        return Err(HktError::Generation(
            "need max_depth >= 1 and max_arity >= 2".into(),
        ));
    }
    // the smallest expression is "[OP d d ]": 4 tokens + begin
    if spec.seq_len < 5 {
        return Err(HktError::Generation(format!(
            "seq_len {} cannot hold any expression",
            spec.seq_len
        )));
    }
    let mut prng = Prng::new(spec.seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let total = spec.n_train + spec.n_val + spec.n_test;
    let mut sequences = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for _ in 0..total {
        let mut attempts = 0;
        let (padded, label) = loop {
            attempts += 1;
            if attempts > MAX_SAMPLE_ATTEMPTS {
                return Err(HktError::Generation(format!(
                    "could not draw a fresh expression fitting seq_len {} \
                     after {MAX_SAMPLE_ATTEMPTS} attempts",
                    spec.seq_len
                )));
            }
            let tree = sample_tree(spec.max_depth, spec.max_arity, &mut prng);
            let body = tree.to_tokens();
            if body.len() + 1 > spec.seq_len {
                continue;
            }
            if !seen.insert(body.clone()) {
                continue;
            }
            let mut padded = vec![TOK_PAD; spec.seq_len - body.len() - 1];
            padded.push(TOK_BEGIN);
            padded.extend_from_slice(&body);
            break (padded, tree.eval() as usize);
        };
        debug_assert_eq!(evaluate_listops(&padded).unwrap(), label);
        sequences.push(padded);
        labels.push(label);
    }

    let mk = |seqs: &[Vec<usize>], labs: &[usize]| Dataset {
        sequences: seqs.to_vec(),
        labels: labs.to_vec(),
        vocab_size: LISTOPS_VOCAB,
        n_classes: 10,
    };
    let (a, b) = (spec.n_train, spec.n_train + spec.n_val);
    Ok(Splits {
        train: mk(&sequences[..a], &labels[..a]),
        val: mk(&sequences[a..b], &labels[a..b]),
        test: mk(&sequences[b..], &labels[b..]),
    })
}

/// One sample per line: space-separated token ids, a tab, the label.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (seq, label) in ds.sequences.iter().zip(&ds.labels) {
        let ids: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\t');
        out.push_str(&label.to_string());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn dataset_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub const DATASET_FORMAT: &str = "hkt-dataset-v1";

/// Loads a split's sidecar metadata and rejects unknown format tags.
pub fn load_dataset_meta(path: &Path) -> Result<DatasetMeta> {
    let text = std::fs::read_to_string(path)?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| HktError::Parse {
        pos: 0,
        msg: format!("metadata: {e}"),
    })?;
    if meta.format != DATASET_FORMAT {
        return Err(HktError::Parse {
            pos: 0,
            msg: format!("unsupported dataset format {:?}", meta.format),
        });
    }
    Ok(meta)
}

/// Sidecar metadata written next to each generated split.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// format tag; readers must reject unknown values
    pub format: String,
    pub spec: ListOpsSpec,
    pub split: String,
    pub vocab: String,
    pub n_samples: usize,
    pub sha256: String,
}

pub fn save_dataset_with_meta(
    ds: &Dataset,
    spec: &ListOpsSpec,
    split: &str,
    path: &Path,
) -> Result<()> {
    save_dataset(ds, path)?;
    let meta = DatasetMeta {
        format: DATASET_FORMAT.to_string(),
        spec: spec.clone(),
        split: split.to_string(),
        vocab: "0-9 digits, 10-13 op-open (MAX,MIN,MED,SM), 14 close, 15 pad, 16 begin"
            .to_string(),
        n_samples: ds.len(),
        sha256: dataset_checksum(path)?,
    };
    let meta_path = path.with_extension("meta.json");
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| HktError::Generation(format!("metadata serialisation: {e}")))?;
    std::fs::write(meta_path, text)?;
    Ok(())
}

pub fn load_dataset(path: &Path, vocab_size: usize, n_classes: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut ds = Dataset {
        vocab_size,
        n_classes,
        ..Default::default()
    };
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (ids, label) = line.split_once('\t').ok_or_else(|| HktError::Parse {
            pos: lineno,
            msg: "missing tab separator".into(),
        })?;
        let seq: Vec<usize> = ids
            .split(' ')
            .map(|t| {
                t.parse().map_err(|e| HktError::Parse {
                    pos: lineno,
                    msg: format!("bad token {t:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(&bad) = seq.iter().find(|&&t| t >= vocab_size) {
            return Err(HktError::OutOfVocab {
                id: bad,
                vocab: vocab_size,
            });
        }
        let label: usize = label.parse().map_err(|e| HktError::Parse {
            pos: lineno,
            msg: format!("bad label: {e}"),
        })?;
        if label >= n_classes {
            return Err(HktError::Parse {
                pos: lineno,
                msg: format!("label {label} out of range {n_classes}"),
            });
        }
        ds.sequences.push(seq);
        ds.labels.push(label);
    }
    Ok(ds)
}

pub const BYTE_PAD: usize = 256;
pub const BYTES_VOCAB: usize = 257;

/// Loads a directory of labeled text files. Layout: one subdirectory per
/// class (sorted names define label ids), one file per sample. Each sample
/// keeps its last `t` bytes and is left-padded with id 256.
pub fn load_bytes_dataset(dir: &Path, t: usize) -> Result<Dataset> {
    let mut classes: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(HktError::Generation(format!(
            "no class subdirectories under {}",
            dir.display()
        )));
    }
    let mut ds = Dataset {
        vocab_size: BYTES_VOCAB,
        n_classes: classes.len(),
        ..Default::default()
    };
    for (label, class_dir) in classes.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(class_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let bytes = std::fs::read(&file)?;
            let tail = if bytes.len() > t {
                &bytes[bytes.len() - t..]
            } else {
                &bytes[..]
            };
            let mut seq = vec![BYTE_PAD; t - tail.len()];
            seq.extend(tail.iter().map(|&b| b as usize));
            ds.sequences.push(seq);
            ds.labels.push(label);
        }
    }
    Ok(ds)
}

/// Shuffled index batches for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, prng: &mut Prng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    prng.shuffle(&mut idx);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
