//! `decap`: build memories, train decoders and caption embeddings from the shell.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numeric failure.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use decap::corpus::{corpus_from_lines, CorpusEntry, LookupEncoder, TextEncoder};
use decap::decoder::{load_model, save_model, train, DecoderConfig, DecoderModel, TrainConfig, Vocab};
use decap::eval::{benchmark_pipeline, corpus_bleu, exact_match_rate, recall_at_k, words, BenchConfig};
use decap::memory::{
    build_memory, compact_by_similarity, filter_by_norm_and_length, load_memory, memory_from_jsonl,
    read_jsonl_file, save_memory, write_jsonl_file, JsonlRecord,
};
use decap::strategies::{apply_prompt, caption_all, PromptSpec, Strategy};
use decap::toy::{gap_metrics, GapSpec, ToyImageEncoder, ToyWorld};
use decap::{atomic_write, Embedding, Error, ProjectionConfig, SupportMemory};

#[derive(Parser)]
#[command(name = "decap", version, about = "Caption decoding from a text-only trained decoder")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a corpus into a support memory file.
    BuildMemory(BuildMemoryArgs),
    /// Drop entries too similar to an earlier kept entry.
    Compact(CompactArgs),
    /// Train a decoder to reconstruct corpus sentences from their embeddings.
    Train(TrainArgs),
    /// Caption query embeddings, one line per query.
    Decode(DecodeArgs),
    /// Write a toy corpus with paired text and image embeddings.
    Simulate(SimulateArgs),
    /// Score predicted captions against references.
    Eval(EvalArgs),
    /// Time query encoding, projection and decoding.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderKind {
    /// Additive toy text encoder.
    Toy,
    /// Precomputed embeddings from the JSONL input.
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum WorldKind {
    Standard,
    Rich,
}

#[derive(Args, Clone)]
struct WorldArgs {
    #[arg(long, value_enum, default_value = "standard")]
    world: WorldKind,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    world_seed: u64,
}

impl WorldArgs {
    fn build(&self) -> anyhow::Result<ToyWorld> {
        if self.dim == 0 {
            bail!(Error::InvalidArgument("--dim must be positive".into()));
        }
        Ok(match self.world {
            WorldKind::Standard => ToyWorld::standard(self.dim, self.world_seed),
            WorldKind::Rich => ToyWorld::rich(self.dim, self.world_seed),
        })
    }
}

#[derive(Args)]
struct BuildMemoryArgs {
    /// Plain text (one sentence per line) or JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    encoder: EncoderKind,
    #[arg(long)]
    output: PathBuf,
    /// Keep sentences with fewer words than this.
    #[arg(long)]
    max_len: Option<usize>,
    /// Keep sentences whose encoder output norm is below this.
    #[arg(long)]
    max_prenorm: Option<f64>,
    #[command(flatten)]
    world: WorldArgs,
}

#[derive(Args)]
struct CompactArgs {
    #[arg(long)]
    memory: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    encoder: EncoderKind,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[command(flatten)]
    world: WorldArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyKind {
    Pd,
    Nnd,
    Vd,
    Retrieve,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    memory: PathBuf,
    #[arg(long, value_enum, default_value = "pd")]
    strategy: StrategyKind,
    /// Softmax temperature for projection decoding.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Words forced after the prefix before free decoding.
    #[arg(long, default_value = "")]
    prompt: String,
    /// Query embeddings: a memory file or JSONL.
    #[arg(long)]
    query_file: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    world: WorldArgs,
    /// Number of distinct captions (default: all of the standard world, 1000 of the rich one).
    #[arg(long)]
    captions: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    rotation: f64,
    #[arg(long, default_value_t = 0.3)]
    offset: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// One predicted caption per line.
    #[arg(long)]
    predictions: PathBuf,
    /// References: text lines, JSONL, or the texts of a memory file.
    #[arg(long)]
    references: PathBuf,
    /// With --queries, also report recall@k of each query's reference in this memory.
    #[arg(long, requires = "queries")]
    memory: Option<PathBuf>,
    #[arg(long, requires = "memory")]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON lines instead of tables.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::BuildMemory(a) => build_memory_cmd(a),
        Command::Compact(a) => compact_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a, cli.threads),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::InvalidArgument(_) | Error::KOutOfRange { .. }) => 2,
        Some(Error::ZeroVector | Error::NonFinite | Error::DegenerateCombination) => 4,
        _ => 3,
    }
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn is_memory_file(path: &Path) -> anyhow::Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = f.read(&mut magic)?;
    Ok(n == 4 && &magic == b"DCAP")
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn read_corpus(path: &Path) -> anyhow::Result<(Vec<CorpusEntry>, Option<LookupEncoder>)> {
    if !is_jsonl(path) {
        let lines = read_lines(path)?;
        return Ok((corpus_from_lines(lines.iter().map(String::as_str)), None));
    }
    let records = read_jsonl_file(path).with_context(|| format!("reading {}", path.display()))?;
    let corpus = corpus_from_lines(records.iter().map(|r| r.text.as_str()));
    let mut lookup = None;
    if let Some(dim) = records.first().and_then(|r| r.embedding.as_ref()).map(Vec::len) {
        let mut enc = LookupEncoder::new(dim);
        for r in &records {
            if let Some(v) = &r.embedding {
                enc.insert(r.text.trim(), v.clone())?;
            }
        }
        lookup = Some(enc);
    }
    Ok((corpus, lookup))
}

fn encoder_for(kind: EncoderKind, lookup: Option<LookupEncoder>, world: &WorldArgs) -> anyhow::Result<Box<dyn TextEncoder>> {
    Ok(match kind {
        EncoderKind::Toy => Box::new(world.build()?),
        EncoderKind::File => Box::new(lookup.ok_or_else(|| {
            Error::Malformed("--encoder file needs JSONL input with an \"embedding\" field".into())
        })?),
    })
}

fn build_memory_cmd(a: BuildMemoryArgs) -> anyhow::Result<()> {
    let (corpus, lookup) = read_corpus(&a.input)?;
    let encoder = encoder_for(a.encoder, lookup, &a.world)?;
    let corpus = if a.max_len.is_some() || a.max_prenorm.is_some() {
        filter_by_norm_and_length(
            &corpus,
            encoder.as_ref(),
            a.max_len.unwrap_or(usize::MAX),
            a.max_prenorm.unwrap_or(f64::INFINITY),
        )?
    } else {
        corpus
    };
    let memory = build_memory(&corpus, encoder.as_ref())?;
    save_memory(&memory, &a.output)?;
    println!("count={} dim={}", memory.len(), memory.dim());
    Ok(())
}

fn compact_cmd(a: CompactArgs) -> anyhow::Result<()> {
    let memory = load_memory(&a.memory).with_context(|| format!("loading {}", a.memory.display()))?;
    let (kept, report) = compact_by_similarity(&memory, a.threshold)?;
    save_memory(&kept, &a.output)?;
    println!(
        "{}",
        json!({
            "input_count": report.input_count,
            "retained_count": report.retained_count,
            "removed_count": report.removed_cover.len(),
            "threshold": report.threshold,
        })
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let (corpus, lookup) = read_corpus(&a.corpus)?;
    if corpus.is_empty() {
        bail!(Error::EmptyCorpus);
    }
    let encoder = encoder_for(a.encoder, lookup, &a.world)?;
    let longest = corpus.iter().map(|e| e.length).max().unwrap_or(1);
    let config = DecoderConfig {
        width: a.width,
        layers: a.layers,
        heads: a.heads,
        ffn_dim: 4 * a.width,
        max_len: longest.max(DecoderConfig::toy(1).max_len),
        ..DecoderConfig::toy(encoder.dim())
    };
    let mut model = DecoderModel::new(config, Vocab::from_corpus(&corpus), a.seed)?;
    let cfg = TrainConfig { steps: a.steps, seed: a.seed, batch_size: a.batch_size, learning_rate: a.lr, ..TrainConfig::default() };
    let report = train(&mut model, &corpus, encoder.as_ref(), &cfg)?;
    save_model(&model, &a.out)?;
    println!(
        "{}",
        json!({
            "sentences": corpus.len(),
            "vocab": model.vocab().len(),
            "parameters": model.num_params(),
            "steps": report.step_losses.len(),
            "final_loss": report.final_loss(),
            "epoch_losses": report.epoch_losses,
        })
    );
    Ok(())
}

/// Query embeddings and their texts (empty when the source has none).
fn read_queries(path: &Path) -> anyhow::Result<(Vec<Embedding>, Vec<String>)> {
    let memory = if is_memory_file(path)? {
        load_memory(path).with_context(|| format!("loading {}", path.display()))?
    } else {
        memory_from_jsonl(&read_jsonl_file(path)?).with_context(|| format!("reading {}", path.display()))?
    };
    Ok(((0..memory.len()).map(|i| memory.embedding(i)).collect(), memory.texts().to_vec()))
}

fn write_output(path: Option<&Path>, lines: &[String]) -> anyhow::Result<()> {
    let write = |w: &mut dyn Write| -> io::Result<()> {
        for l in lines {
            writeln!(w, "{l}")?;
        }
        w.flush()
    };
    match path {
        Some(p) => atomic_write(p, |f| Ok(write(&mut BufWriter::new(f))?))?,
        // a closed downstream pipe (e.g. `| head`) is not an error
        None => match write(&mut io::stdout().lock()) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {}
            other => other?,
        },
    }
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let memory = load_memory(&a.memory).with_context(|| format!("loading {}", a.memory.display()))?;
    let (queries, _) = read_queries(&a.query_file)?;
    let strategy = match a.strategy {
        StrategyKind::Pd => Strategy::ProjectionDecoding(ProjectionConfig::new(a.tau)?),
        StrategyKind::Nnd => Strategy::NearestNeighborDecoding,
        StrategyKind::Vd => Strategy::VisualDecoding,
        StrategyKind::Retrieve => Strategy::Retrieval,
    };
    let prompt = apply_prompt(&PromptSpec::new(a.prompt), model.vocab())?;
    let captions = caption_all(&queries, &strategy, &memory, &model, &prompt)?;
    let lines: Vec<String> = captions.into_iter().map(|c| c.text).collect();
    write_output(a.output.as_deref(), &lines)
}

fn simulate_cmd(a: SimulateArgs) -> anyhow::Result<()> {
    let world = a.world.build()?;
    let captions = match (a.captions, a.world.world) {
        (Some(n), _) => world.sample_captions(n, a.seed)?,
        (None, WorldKind::Standard) => world.captions(),
        (None, WorldKind::Rich) => world.sample_captions(1000, a.seed)?,
    };
    let spec = GapSpec::new(a.rotation, a.offset, a.noise, a.seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let records = captions
        .iter()
        .map(|c| {
            let raw = world.encode(c)?;
            Ok(JsonlRecord { text: c.clone(), prenorm: Some(raw.prenorm), embedding: Some(raw.values) })
        })
        .collect::<decap::Result<Vec<_>>>()?;
    let corpus: Vec<CorpusEntry> = captions.iter().map(|c| CorpusEntry::new(c.clone())).collect::<decap::Result<_>>()?;
    let text = build_memory(&corpus, &world)?;
    let images = ToyImageEncoder::new(world, spec);
    let mut image = SupportMemory::with_capacity(text.dim(), captions.len());
    let mut image_cloud = Vec::with_capacity(captions.len());
    for c in &captions {
        let e = images.encode(c, 0)?;
        image.push(&e, 1.0, c.clone())?;
        image_cloud.push(e);
    }
    write_jsonl_file(&records, a.out_dir.join("corpus.jsonl"))?;
    save_memory(&text, a.out_dir.join("text.dcap"))?;
    save_memory(&image, a.out_dir.join("image.dcap"))?;
    let text_cloud: Vec<Embedding> = (0..text.len()).map(|i| text.embedding(i)).collect();
    let gap = gap_metrics(&text_cloud, &image_cloud)?;
    println!("{}", json!({ "captions": captions.len(), "dim": text.dim(), "gap": gap }));
    Ok(())
}

fn read_references(path: &Path) -> anyhow::Result<Vec<String>> {
    if is_memory_file(path)? {
        Ok(load_memory(path).with_context(|| format!("loading {}", path.display()))?.texts().to_vec())
    } else if is_jsonl(path) {
        Ok(read_jsonl_file(path)?.into_iter().map(|r| r.text).collect())
    } else {
        read_lines(path)
    }
}

fn eval_cmd(a: EvalArgs) -> anyhow::Result<()> {
    let predictions = read_lines(&a.predictions)?;
    let references = read_references(&a.references)?;
    if predictions.len() != references.len() {
        bail!(Error::LengthMismatch { left: predictions.len(), right: references.len() });
    }
    let normalize = |s: &String| words(s).join(" ");
    let hyps: Vec<String> = predictions.iter().map(normalize).collect();
    let refs: Vec<String> = references.iter().map(normalize).collect();
    let exact = exact_match_rate(&hyps, &refs)?;
    let hyp_words: Vec<Vec<&str>> = hyps.iter().map(|h| words(h)).collect();
    let ref_words: Vec<Vec<Vec<&str>>> = refs.iter().map(|r| vec![words(r)]).collect();
    let bleu4 = corpus_bleu(&hyp_words, &ref_words, 4)?;
    let mut report = json!({ "count": hyps.len(), "exact_match": exact, "bleu4": bleu4 });

    if let (Some(memory), Some(queries)) = (&a.memory, &a.queries) {
        let memory = load_memory(memory).with_context(|| format!("loading {}", memory.display()))?;
        let (queries, texts) = read_queries(queries)?;
        let gold = queries
            .into_iter()
            .zip(&texts)
            .map(|(q, t)| {
                let i = memory.texts().iter().position(|m| m == t).ok_or_else(|| {
                    Error::Malformed(format!("query text {t:?} not in memory"))
                })?;
                Ok((q, i))
            })
            .collect::<decap::Result<Vec<_>>>()?;
        report["recall_at_k"] = json!({ "k": a.k, "recall": recall_at_k(&memory, &gold, a.k)? });
    }
    println!("{report}");
    Ok(())
}

fn bench_cmd(a: BenchArgs, threads: Option<usize>) -> anyhow::Result<()> {
    let world = ToyWorld::standard(a.dim, a.seed);
    let model = DecoderModel::new(DecoderConfig::toy(a.dim), world.vocab(), a.seed)?;
    let cfg = BenchConfig { memory_sizes: a.sizes, dim: a.dim, trials: a.trials, threads, seed: a.seed };
    for report in benchmark_pipeline(&cfg, &model)? {
        if a.json {
            println!("{}", report.to_json());
        } else {
            println!("{}", report.table());
        }
    }
    Ok(())
}
