//! Command-line surface: validate schemas and records, sample rooted
//! subgraphs, train, evaluate, and run batch inference.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Logs go to
//! standard error; data goes to files only.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use hedra::graph::PaddingTargets;
use hedra::io::{decode_record, encode_graph, RecordFileReader, RecordFileWriter};
use hedra::layers::ModelConfig;
use hedra::runner::{
    evaluate, infer, run_training, FileDatasetProvider, ModelArtifact, TaskConfig, TrainerConfig,
};
use hedra::sampler::{read_table, sample_subgraphs, GraphStore, SamplingSpec};
use hedra::schema::{parse_schema, schema_fingerprint, validate_graph, GraphSchema};

#[derive(Parser)]
#[command(name = "hedra", version, about = "Heterogeneous graph learning engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a schema document; optionally check record files
    /// against it.
    SchemaValidate {
        #[arg(long)]
        schema: PathBuf,
        /// Record file or name@K shard pattern to validate.
        #[arg(long)]
        records: Option<String>,
    },
    /// Print node/edge set sizes and feature names of stored records.
    RecordsInspect {
        #[arg(long = "in")]
        input: String,
        /// Number of records to print (0 = all).
        #[arg(long, default_value_t = 1)]
        limit: usize,
    },
    /// Sample rooted subgraphs from node/edge tables into a record file.
    Sample {
        #[arg(long)]
        schema: PathBuf,
        /// Repeated `node_set=path.csv|.ndjson` table bindings.
        #[arg(long = "nodes")]
        nodes: Vec<String>,
        /// Repeated `edge_set=path.csv|.ndjson` table bindings.
        #[arg(long = "edges")]
        edges: Vec<String>,
        #[arg(long)]
        spec: PathBuf,
        /// One seed node id per line.
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        shards: usize,
    },
    /// Train a model per a training configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output path for the model artifact.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model over records; prints metrics as JSON.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        records: String,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Batch inference: one NDJSON prediction row per record.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
}

/// Training configuration file: paths plus inline model/task documents.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    schema: PathBuf,
    train_records: String,
    #[serde(default)]
    valid_records: Option<String>,
    model: ModelConfig,
    task: TaskConfig,
    batch_size: usize,
    epochs: usize,
    #[serde(default)]
    steps_per_epoch: Option<usize>,
    lr: f64,
    #[serde(default)]
    l2: f64,
    seed: u64,
    #[serde(default)]
    padding: Option<PaddingTargets>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(2);
    }
}

fn read_text(path: &Path, what: &str) -> hedra::Result<String> {
    std::fs::read_to_string(path).map_err(|e| hedra::Error::Io {
        context: format!("read {what} {}", path.display()),
        source: e,
    })
}

fn load_schema(path: &Path) -> hedra::Result<GraphSchema> {
    parse_schema(&read_text(path, "schema")?)
}

fn run(command: Command) -> hedra::Result<()> {
    match command {
        Command::SchemaValidate { schema, records } => {
            let schema = load_schema(&schema)?;
            println!(
                "{} node sets, {} edge sets, {} context features",
                schema.node_sets.len(),
                schema.edge_sets.len(),
                schema.context.features.len()
            );
            if let Some(pattern) = records {
                let mut reader = RecordFileReader::open(&pattern)?;
                let expected = schema_fingerprint(&schema);
                let mut count = 0usize;
                while let Some(payload) = reader.next_record()? {
                    let (fingerprint, graph) = decode_record(&payload)?;
                    if fingerprint != expected {
                        return Err(hedra::Error::FingerprintMismatch {
                            found: fingerprint,
                            expected,
                        });
                    }
                    let violations = validate_graph(&schema, &graph);
                    if !violations.is_empty() {
                        return Err(hedra::Error::SchemaViolations(violations));
                    }
                    count += 1;
                }
                println!("{count} records ok");
            }
            Ok(())
        }
        Command::RecordsInspect { input, limit } => {
            let mut reader = RecordFileReader::open(&input)?;
            let mut index = 0usize;
            while let Some(payload) = reader.next_record()? {
                if limit != 0 && index >= limit {
                    break;
                }
                let (fingerprint, graph) = decode_record(&payload)?;
                print_record(index, fingerprint, &graph);
                index += 1;
            }
            if index == 0 {
                println!("no records");
            }
            Ok(())
        }
        Command::Sample {
            schema,
            nodes,
            edges,
            spec,
            seeds,
            out,
            seed,
            shards,
        } => {
            let schema = load_schema(&schema)?;
            let node_tables = load_tables(&nodes)?;
            let edge_tables = load_tables(&edges)?;
            let store = GraphStore::build(&schema, &node_tables, &edge_tables)?;
            let spec = SamplingSpec::from_json(&read_text(&spec, "spec")?)?;
            let seed_ids: Vec<(String, String)> = read_text(&seeds, "seeds")?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|id| (spec.seed_op.node_set_name.clone(), id.to_string()))
                .collect();
            let graphs = sample_subgraphs(&store, &spec, &seed_ids, seed, shards)?;
            let fingerprint = schema_fingerprint(&schema);
            let mut writer = RecordFileWriter::create(&out)?;
            for graph in &graphs {
                writer.write_record(&encode_graph(graph, fingerprint)?)?;
            }
            let written = writer.written();
            writer.finish()?;
            eprintln!("wrote {written} records to {}", out.display());
            Ok(())
        }
        Command::Train { config, out } => {
            let file: TrainFileConfig = serde_json::from_str(&read_text(&config, "config")?)
                .map_err(|e| hedra::Error::InvalidArgument {
                    op: "train config".into(),
                    message: e.to_string(),
                })?;
            let schema = load_schema(&file.schema)?;
            let train =
                FileDatasetProvider::new(file.train_records.clone(), schema.clone(), file.seed);
            let valid = file
                .valid_records
                .as_ref()
                .map(|p| FileDatasetProvider::new(p.clone(), schema.clone(), file.seed));
            let trainer = TrainerConfig {
                batch_size: file.batch_size,
                epochs: file.epochs,
                steps_per_epoch: file.steps_per_epoch,
                lr: file.lr,
                l2: file.l2,
                seed: file.seed,
                lr_floor_fraction: 0.0,
                padding: file.padding.clone(),
            };
            let (artifact, history) = run_training(
                &train,
                valid
                    .as_ref()
                    .map(|v| v as &dyn hedra::runner::DatasetProvider),
                &file.model,
                &file.task,
                &trainer,
            )?;
            for epoch in &history.validation {
                eprintln!(
                    "epoch {}: validation loss {:?} accuracy {:?} over {} examples",
                    epoch.epoch, epoch.loss, epoch.accuracy, epoch.examples
                );
            }
            if let Some(last) = history.steps.last() {
                eprintln!(
                    "finished {} steps: loss {:.6} accuracy {:?}",
                    history.steps.len(),
                    last.loss,
                    last.accuracy
                );
            }
            artifact.export(&out)?;
            eprintln!("exported model to {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            model,
            records,
            batch_size,
        } => {
            let artifact = ModelArtifact::load(&model)?;
            let provider = FileDatasetProvider::new(records, artifact.schema.clone(), 0);
            let metrics = evaluate(&artifact, &provider, batch_size)?;
            if metrics.examples == 0 {
                eprintln!("0 examples");
            }
            println!("{}", serde_json::to_string(&metrics)?);
            Ok(())
        }
        Command::Infer {
            model,
            input,
            out,
            batch_size,
        } => {
            let artifact = ModelArtifact::load(&model)?;
            let rows = infer(&artifact, &input, &out, batch_size)?;
            eprintln!("wrote {rows} predictions to {}", out.display());
            Ok(())
        }
    }
}

fn load_tables(
    bindings: &[String],
) -> hedra::Result<BTreeMap<String, Vec<hedra::sampler::RawRow>>> {
    let mut out = BTreeMap::new();
    for binding in bindings {
        let Some((set, path)) = binding.split_once('=') else {
            return Err(hedra::Error::InvalidArgument {
                op: "table binding".into(),
                message: format!("expected set=path, got {binding:?}"),
            });
        };
        out.insert(set.to_string(), read_table(Path::new(path))?);
    }
    Ok(out)
}

fn print_record(index: usize, fingerprint: u64, graph: &hedra::graph::GraphTensor) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "record {index}: {} component(s), fingerprint {fingerprint:#018x}",
        graph.num_components()
    );
    let context: Vec<&str> = graph
        .context_features()
        .keys()
        .map(String::as_str)
        .collect();
    let _ = writeln!(stdout, "  context features=[{}]", context.join(", "));
    for (name, ns) in graph.node_sets() {
        let features: Vec<&str> = ns.features().keys().map(String::as_str).collect();
        let _ = writeln!(
            stdout,
            "  node_set {name}: size={} features=[{}]",
            ns.total_size(),
            features.join(", ")
        );
    }
    for (name, es) in graph.edge_sets() {
        let features: Vec<&str> = es.features().keys().map(String::as_str).collect();
        let _ = writeln!(
            stdout,
            "  edge_set {name}: size={} {}->{} features=[{}]",
            es.total_size(),
            es.adjacency().source_set(),
            es.adjacency().target_set(),
            features.join(", ")
        );
    }
}
