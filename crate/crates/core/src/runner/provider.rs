//! Dataset providers: sources of merged graph batches, re-iterable per
//! epoch with an epoch-dependent shuffle.

use crate::error::Result;
use crate::graph::GraphTensor;
use crate::io::DatasetReader;
use crate::schema::GraphSchema;
use crate::tensor::rng::StreamKey;

pub type BatchIter<'a> = Box<dyn Iterator<Item = Result<GraphTensor>> + Send + 'a>;

/// A source of graph batches plus the schema they conform to.
pub trait DatasetProvider: Send + Sync {
    fn schema(&self) -> &GraphSchema;

    /// Batches for one epoch. With `shuffle`, the order depends
    /// deterministically on `(provider seed, epoch)`.
    fn batches(&self, epoch: usize, batch_size: usize, shuffle: bool) -> Result<BatchIter<'_>>;
}

/// Streams `.gtr` record files (shard patterns supported).
pub struct FileDatasetProvider {
    pattern: String,
    schema: GraphSchema,
    seed: u64,
}

impl FileDatasetProvider {
    pub fn new(pattern: impl Into<String>, schema: GraphSchema, seed: u64) -> Self {
        FileDatasetProvider {
            pattern: pattern.into(),
            schema,
            seed,
        }
    }
}

impl DatasetProvider for FileDatasetProvider {
    fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    fn batches(&self, epoch: usize, batch_size: usize, shuffle: bool) -> Result<BatchIter<'_>> {
        let shuffle_seed = shuffle.then(|| {
            // distinct shuffle stream per (seed, epoch)
            StreamKey::new(self.seed)
                .label("epoch-shuffle")
                .index(epoch as u64)
                .stream()
                .next_u64()
        });
        let reader = DatasetReader::open(&self.pattern, &self.schema, shuffle_seed, batch_size)?;
        Ok(Box::new(reader))
    }
}

/// Serves graphs already in memory (synthetic datasets, tests).
pub struct InMemoryProvider {
    graphs: Vec<GraphTensor>,
    schema: GraphSchema,
    seed: u64,
}

impl InMemoryProvider {
    pub fn new(graphs: Vec<GraphTensor>, schema: GraphSchema, seed: u64) -> Self {
        InMemoryProvider {
            graphs,
            schema,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

impl DatasetProvider for InMemoryProvider {
    fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    fn batches(&self, epoch: usize, batch_size: usize, shuffle: bool) -> Result<BatchIter<'_>> {
        let mut order: Vec<usize> = (0..self.graphs.len()).collect();
        if shuffle {
            let mut stream = StreamKey::new(self.seed)
                .label("epoch-shuffle")
                .index(epoch as u64)
                .stream();
            for i in (1..order.len()).rev() {
                let j = stream.below((i + 1) as u64) as usize;
                order.swap(i, j);
            }
        }
        let graphs = &self.graphs;
        let iter = order
            .chunks(batch_size.max(1))
            .map(|chunk| {
                let group: Vec<GraphTensor> = chunk.iter().map(|&i| graphs[i].clone()).collect();
                GraphTensor::merge_batch(&group)
            })
            .collect::<Vec<_>>()
            .into_iter();
        Ok(Box::new(iter))
    }
}
