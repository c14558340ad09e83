//! Bit-exact serialization of graph tensors to `.gtr` record files, plus
//! dataset reading with seeded shuffling and batching.
//!
//! Record framing: an 8-byte little-endian payload length, then the payload.
//! The payload is an 8-byte little-endian header length, a canonical JSON
//! header (sorted keys), and raw little-endian numeric arrays concatenated in
//! the order given by the header's `blocks` manifest. String data travels
//! inside the JSON header. The same graph always encodes to the same bytes.
//!
//! Shard patterns follow the `name@K` convention, expanding to
//! `name-00000-of-0000K` … `name-0000(K-1)-of-0000K`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, EdgeSet, Feature, FeatureData, GraphTensor, NodeSet};
use crate::schema::{schema_fingerprint, validate_graph, GraphSchema};
use crate::tensor::rng::{RandomStream, StreamKey};

#[derive(Serialize, Deserialize)]
struct FeatureMeta {
    dtype: String,
    inner_shape: Vec<usize>,
    items: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    row_lengths: Option<Vec<usize>>,
    /// String payloads live in the header itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    strings: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct NodeSetMeta {
    sizes: Vec<usize>,
    features: BTreeMap<String, FeatureMeta>,
}

#[derive(Serialize, Deserialize)]
struct EdgeSetMeta {
    sizes: Vec<usize>,
    source_set: String,
    target_set: String,
    features: BTreeMap<String, FeatureMeta>,
}

#[derive(Serialize, Deserialize)]
struct BlockMeta {
    path: String,
    dtype: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    fingerprint: u64,
    context: BTreeMap<String, FeatureMeta>,
    node_sets: BTreeMap<String, NodeSetMeta>,
    edge_sets: BTreeMap<String, EdgeSetMeta>,
    blocks: Vec<BlockMeta>,
}

fn feature_meta(feature: &Feature) -> FeatureMeta {
    let (dtype, strings) = match feature.data() {
        FeatureData::F32(_) => ("float32", None),
        FeatureData::I64(_) => ("int64", None),
        FeatureData::Str(v) => ("string", Some(v.clone())),
    };
    FeatureMeta {
        dtype: dtype.to_string(),
        inner_shape: feature.inner_shape().to_vec(),
        items: feature.items(),
        row_lengths: feature.row_lengths().map(<[usize]>::to_vec),
        strings,
    }
}

fn push_numeric_block(
    blocks: &mut Vec<BlockMeta>,
    blob: &mut Vec<u8>,
    path: String,
    data: &FeatureData,
) {
    match data {
        FeatureData::F32(v) => {
            blocks.push(BlockMeta {
                path,
                dtype: "float32".into(),
                len: v.len(),
            });
            for x in v {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        FeatureData::I64(v) => {
            blocks.push(BlockMeta {
                path,
                dtype: "int64".into(),
                len: v.len(),
            });
            for x in v {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        FeatureData::Str(_) => {} // strings ride in the header
    }
}

/// Serialize a single-component graph to deterministic bytes.
pub fn encode_graph(graph: &GraphTensor, fingerprint: u64) -> Result<Vec<u8>> {
    if graph.num_components() != 1 {
        return Err(Error::InvalidArgument {
            op: "encode_graph".into(),
            message: format!(
                "records hold single-component graphs, got {} components",
                graph.num_components()
            ),
        });
    }
    let mut blocks = Vec::new();
    let mut blob = Vec::new();

    let mut context = BTreeMap::new();
    for (name, f) in graph.context_features() {
        context.insert(name.clone(), feature_meta(f));
        push_numeric_block(&mut blocks, &mut blob, format!("context/{name}"), f.data());
    }
    let mut node_sets = BTreeMap::new();
    for (set, ns) in graph.node_sets() {
        let mut features = BTreeMap::new();
        for (name, f) in ns.features() {
            features.insert(name.clone(), feature_meta(f));
            push_numeric_block(
                &mut blocks,
                &mut blob,
                format!("nodes/{set}/{name}"),
                f.data(),
            );
        }
        node_sets.insert(
            set.clone(),
            NodeSetMeta {
                sizes: ns.sizes().to_vec(),
                features,
            },
        );
    }
    let mut edge_sets = BTreeMap::new();
    for (set, es) in graph.edge_sets() {
        let adj = es.adjacency();
        push_numeric_block(
            &mut blocks,
            &mut blob,
            format!("edges/{set}/#source"),
            &FeatureData::I64(adj.source().to_vec()),
        );
        push_numeric_block(
            &mut blocks,
            &mut blob,
            format!("edges/{set}/#target"),
            &FeatureData::I64(adj.target().to_vec()),
        );
        let mut features = BTreeMap::new();
        for (name, f) in es.features() {
            features.insert(name.clone(), feature_meta(f));
            push_numeric_block(
                &mut blocks,
                &mut blob,
                format!("edges/{set}/{name}"),
                f.data(),
            );
        }
        edge_sets.insert(
            set.clone(),
            EdgeSetMeta {
                sizes: es.sizes().to_vec(),
                source_set: adj.source_set().to_string(),
                target_set: adj.target_set().to_string(),
                features,
            },
        );
    }

    let header = RecordHeader {
        fingerprint,
        context,
        node_sets,
        edge_sets,
        blocks,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut payload = Vec::with_capacity(8 + header_bytes.len() + blob.len());
    payload.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    payload.extend_from_slice(&header_bytes);
    payload.extend_from_slice(&blob);
    Ok(payload)
}

struct BlobReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    fn take_f32(&mut self, len: usize) -> Result<Vec<f32>> {
        let bytes = self.take_bytes(len, 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn take_i64(&mut self, len: usize) -> Result<Vec<i64>> {
        let bytes = self.take_bytes(len, 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn take_bytes(&mut self, count: usize, width: usize) -> Result<&'a [u8]> {
        let n = count
            .checked_mul(width)
            .and_then(|n| self.pos.checked_add(n).map(|_| n))
            .filter(|&n| self.pos + n <= self.data.len())
            .ok_or_else(|| Error::CorruptRecord {
                message: format!(
                    "data blob truncated: need {count} x {width} bytes at offset {}, have {}",
                    self.pos,
                    self.data.len() - self.pos
                ),
                offset: Some(self.pos as u64),
            })?;
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn rebuild_feature(meta: &FeatureMeta, numeric: Option<FeatureData>) -> Result<Feature> {
    let data = match meta.dtype.as_str() {
        "string" => FeatureData::Str(meta.strings.clone().unwrap_or_default()),
        _ => numeric.ok_or_else(|| Error::CorruptRecord {
            message: "numeric feature missing from block manifest".into(),
            offset: None,
        })?,
    };
    match &meta.row_lengths {
        Some(lens) => Feature::ragged(lens.clone(), meta.inner_shape.clone(), data),
        None => Feature::dense(meta.items, meta.inner_shape.clone(), data),
    }
}

/// Decode a record without schema checks. Returns the stored fingerprint and
/// the structurally validated graph.
pub fn decode_record(payload: &[u8]) -> Result<(u64, GraphTensor)> {
    if payload.len() < 8 {
        return Err(Error::CorruptRecord {
            message: "payload shorter than its header length prefix".into(),
            offset: Some(0),
        });
    }
    let header_len = u64::from_le_bytes(payload[..8].try_into().expect("8 bytes")) as usize;
    if header_len
        .checked_add(8)
        .is_none_or(|end| end > payload.len())
    {
        return Err(Error::CorruptRecord {
            message: format!(
                "header length {header_len} exceeds payload size {}",
                payload.len()
            ),
            offset: Some(0),
        });
    }
    let header: RecordHeader =
        serde_json::from_slice(&payload[8..8 + header_len]).map_err(|e| Error::CorruptRecord {
            message: format!("header is not valid JSON: {e}"),
            offset: Some(8),
        })?;
    let mut blob = BlobReader {
        data: &payload[8 + header_len..],
        pos: 0,
    };
    let mut numeric: BTreeMap<String, FeatureData> = BTreeMap::new();
    for block in &header.blocks {
        let data = match block.dtype.as_str() {
            "float32" => FeatureData::F32(blob.take_f32(block.len)?),
            "int64" => FeatureData::I64(blob.take_i64(block.len)?),
            other => {
                return Err(Error::CorruptRecord {
                    message: format!("unknown block dtype {other:?}"),
                    offset: None,
                })
            }
        };
        numeric.insert(block.path.clone(), data);
    }
    if blob.pos != blob.data.len() {
        return Err(Error::CorruptRecord {
            message: format!(
                "{} trailing bytes after the last block",
                blob.data.len() - blob.pos
            ),
            offset: Some((8 + header_len + blob.pos) as u64),
        });
    }

    let mut context = BTreeMap::new();
    for (name, meta) in &header.context {
        context.insert(
            name.clone(),
            rebuild_feature(meta, numeric.remove(&format!("context/{name}")))?,
        );
    }
    let mut node_sets = BTreeMap::new();
    for (set, meta) in &header.node_sets {
        let mut features = BTreeMap::new();
        for (name, fmeta) in &meta.features {
            features.insert(
                name.clone(),
                rebuild_feature(fmeta, numeric.remove(&format!("nodes/{set}/{name}")))?,
            );
        }
        node_sets.insert(set.clone(), NodeSet::new(meta.sizes.clone(), features)?);
    }
    let mut edge_sets = BTreeMap::new();
    for (set, meta) in &header.edge_sets {
        let take_adjacency = |data: Option<FeatureData>| -> Result<Vec<i64>> {
            match data {
                Some(FeatureData::I64(v)) => Ok(v),
                _ => Err(Error::CorruptRecord {
                    message: format!("edge set {set:?} adjacency block missing"),
                    offset: None,
                }),
            }
        };
        let source = take_adjacency(numeric.remove(&format!("edges/{set}/#source")))?;
        let target = take_adjacency(numeric.remove(&format!("edges/{set}/#target")))?;
        let mut features = BTreeMap::new();
        for (name, fmeta) in &meta.features {
            features.insert(
                name.clone(),
                rebuild_feature(fmeta, numeric.remove(&format!("edges/{set}/{name}")))?,
            );
        }
        edge_sets.insert(
            set.clone(),
            EdgeSet::new(
                meta.sizes.clone(),
                Adjacency::new(
                    meta.source_set.clone(),
                    meta.target_set.clone(),
                    source,
                    target,
                )?,
                features,
            )?,
        );
    }
    let graph = GraphTensor::new(context, node_sets, edge_sets)?;
    Ok((header.fingerprint, graph))
}

/// Decode and check a record against a schema: fingerprint must match and
/// the graph must conform.
pub fn decode_graph(payload: &[u8], schema: &GraphSchema) -> Result<GraphTensor> {
    let expected = schema_fingerprint(schema);
    let (found, graph) = decode_record(payload)?;
    if found != expected {
        return Err(Error::FingerprintMismatch { found, expected });
    }
    let violations = validate_graph(schema, &graph);
    if !violations.is_empty() {
        return Err(Error::SchemaViolations(violations));
    }
    Ok(graph)
}

/// Expand a `name@K` shard pattern; plain paths pass through unchanged.
pub fn expand_shards(pattern: &str) -> Result<Vec<PathBuf>> {
    match pattern.rsplit_once('@') {
        None => Ok(vec![PathBuf::from(pattern)]),
        Some((prefix, count)) => {
            let count: usize = count.parse().map_err(|_| Error::InvalidArgument {
                op: "expand_shards".into(),
                message: format!("bad shard count in pattern {pattern:?}"),
            })?;
            if count == 0 {
                return Err(Error::InvalidArgument {
                    op: "expand_shards".into(),
                    message: "shard count must be positive".into(),
                });
            }
            Ok((0..count)
                .map(|i| PathBuf::from(format!("{prefix}-{i:05}-of-{count:05}")))
                .collect())
        }
    }
}

/// Length-prefixed record writer.
pub struct RecordFileWriter {
    out: BufWriter<File>,
    written: usize,
}

impl RecordFileWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file =
            File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        Ok(RecordFileWriter {
            out: BufWriter::new(file),
            written: 0,
        })
    }

    pub fn write_record(&mut self, payload: &[u8]) -> Result<()> {
        self.out
            .write_all(&(payload.len() as u64).to_le_bytes())
            .and_then(|()| self.out.write_all(payload))
            .map_err(|e| Error::io("write record", e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io("flush records", e))
    }
}

/// Streams raw record payloads out of one or more shard files.
pub struct RecordFileReader {
    paths: Vec<PathBuf>,
    next_path: usize,
    current: Option<BufReader<File>>,
    current_path: PathBuf,
    offset: u64,
    record_index: usize,
}

impl RecordFileReader {
    pub fn open(pattern: &str) -> Result<Self> {
        let paths = expand_shards(pattern)?;
        Ok(RecordFileReader {
            paths,
            next_path: 0,
            current: None,
            current_path: PathBuf::new(),
            offset: 0,
            record_index: 0,
        })
    }

    /// File the most recent record came from.
    pub fn current_path(&self) -> &Path {
        &self.current_path
    }

    /// Index of the next record across all shards.
    pub fn record_index(&self) -> usize {
        self.record_index
    }

    /// Next raw payload, with file/offset context on errors.
    pub fn next_record(&mut self) -> Result<Option<Vec<u8>>> {
        loop {
            if self.current.is_none() {
                if self.next_path >= self.paths.len() {
                    return Ok(None);
                }
                let path = self.paths[self.next_path].clone();
                self.next_path += 1;
                let file = File::open(&path)
                    .map_err(|e| Error::io(format!("open shard {}", path.display()), e))?;
                self.current = Some(BufReader::new(file));
                self.current_path = path;
                self.offset = 0;
            }
            let reader = self.current.as_mut().expect("just ensured");
            let mut len_bytes = [0u8; 8];
            match read_exact_or_eof(reader, &mut len_bytes) {
                Ok(ReadOutcome::Complete) => {}
                Ok(ReadOutcome::CleanEof) => {
                    self.current = None;
                    continue;
                }
                Ok(ReadOutcome::Partial) => {
                    return Err(Error::CorruptRecord {
                        message: format!(
                            "{}: truncated length prefix",
                            self.current_path.display()
                        ),
                        offset: Some(self.offset),
                    });
                }
                Err(e) => {
                    return Err(Error::io(
                        format!("read {}", self.current_path.display()),
                        e,
                    ))
                }
            }
            let len = u64::from_le_bytes(len_bytes);
            // read into a growing buffer so a corrupt length prefix cannot
            // force a huge up-front allocation
            let mut payload = Vec::new();
            let read = reader
                .take(len)
                .read_to_end(&mut payload)
                .map_err(|e| Error::io(format!("read {}", self.current_path.display()), e))?;
            if read as u64 != len {
                return Err(Error::CorruptRecord {
                    message: format!(
                        "{}: record {} truncated (expected {len} bytes, got {read})",
                        self.current_path.display(),
                        self.record_index
                    ),
                    offset: Some(self.offset),
                });
            }
            self.offset += 8 + len;
            self.record_index += 1;
            return Ok(Some(payload));
        }
    }
}

enum ReadOutcome {
    Complete,
    CleanEof,
    Partial,
}

fn read_exact_or_eof(reader: &mut impl Read, buf: &mut [u8]) -> std::io::Result<ReadOutcome> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => {
                return Ok(if filled == 0 {
                    ReadOutcome::CleanEof
                } else {
                    ReadOutcome::Partial
                })
            }
            n => filled += n,
        }
    }
    Ok(ReadOutcome::Complete)
}

/// Streaming reader that decodes, optionally shuffles within a bounded
/// buffer, groups into batches, and merges each batch into one graph.
pub struct DatasetReader {
    records: RecordFileReader,
    schema: GraphSchema,
    batch_size: usize,
    buffer: Vec<GraphTensor>,
    buffer_cap: usize,
    shuffle: Option<RandomStream>,
    exhausted: bool,
    peak_buffered: usize,
}

impl DatasetReader {
    /// `shuffle_seed: None` preserves file order. The shuffle buffer holds at
    /// most `10 * batch_size` decoded records, batch assembly included.
    pub fn open(
        pattern: &str,
        schema: &GraphSchema,
        shuffle_seed: Option<u64>,
        batch_size: usize,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument {
                op: "read_dataset".into(),
                message: "batch_size must be at least 1".into(),
            });
        }
        Ok(DatasetReader {
            records: RecordFileReader::open(pattern)?,
            schema: schema.clone(),
            batch_size,
            buffer: Vec::new(),
            buffer_cap: 10 * batch_size,
            shuffle: shuffle_seed.map(|s| StreamKey::new(s).label("shuffle").stream()),
            exhausted: false,
            peak_buffered: 0,
        })
    }

    /// Largest number of decoded records ever resident at once.
    pub fn peak_buffered(&self) -> usize {
        self.peak_buffered
    }

    fn take_one(&mut self, pending: usize) -> Result<Option<GraphTensor>> {
        while !self.exhausted && self.buffer.len() + pending < self.buffer_cap {
            match self.records.next_record()? {
                Some(payload) => {
                    let graph =
                        decode_graph(&payload, &self.schema).map_err(|e| Error::CorruptRecord {
                            message: format!(
                                "{}: record {}: {e}",
                                self.records.current_path().display(),
                                self.records.record_index().saturating_sub(1)
                            ),
                            offset: None,
                        })?;
                    self.buffer.push(graph);
                }
                None => self.exhausted = true,
            }
        }
        self.peak_buffered = self.peak_buffered.max(self.buffer.len() + pending);
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let idx = match &mut self.shuffle {
            Some(stream) => stream.below(self.buffer.len() as u64) as usize,
            None => 0,
        };
        Ok(Some(if idx == 0 {
            self.buffer.remove(0)
        } else {
            self.buffer.swap_remove(idx)
        }))
    }

    /// Next merged batch of up to `batch_size` graphs; the final partial
    /// batch is yielded too.
    pub fn next_batch(&mut self) -> Result<Option<GraphTensor>> {
        let mut group = Vec::with_capacity(self.batch_size);
        while group.len() < self.batch_size {
            match self.take_one(group.len())? {
                Some(g) => group.push(g),
                None => break,
            }
        }
        if group.is_empty() {
            return Ok(None);
        }
        Ok(Some(GraphTensor::merge_batch(&group)?))
    }
}

impl Iterator for DatasetReader {
    type Item = Result<GraphTensor>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_batch().transpose()
    }
}
