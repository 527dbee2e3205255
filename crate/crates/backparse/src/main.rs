//! Command-line surface: corpus synthesis, preprocessing, training,
//! generation, BLEU evaluation, and forced-decoding diagnostics.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure (including panics from the numeric core).
//! Set BACKPARSE_LOG=quiet to suppress progress lines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use backparse::config::RunConfig;
use backparse::data::{read_raw_jsonl, write_raw_jsonl, ingest_penman, Pipeline, RawExample};
use backparse::error::{Error, Result};
use backparse::evaluate::{
    beam_search, bucket_by_graph_size, corpus_bleu, export_attention, forced_decode_diagnostics,
    pearson, sentence_bleu,
};
use backparse::model::Model;
use backparse::synth::generate;
use backparse::train::train;

#[derive(Parser)]
#[command(name = "backparse", about = "Graph-to-text generation with online back-parsing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set beam=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/dev/test corpora.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Validate raw data, build vocabularies, and write normalized JSONL.
    Preprocess {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Raw JSONL input (defaults to the config's train path).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Normalized JSONL output; omit to only validate.
        #[arg(long)]
        out: Option<PathBuf>,
        /// PENMAN graph file (one block per graph); requires --sentences and --alignments.
        #[arg(long, requires_all = ["sentences", "alignments"])]
        graphs: Option<PathBuf>,
        /// Sentence file, one tokenized line per graph.
        #[arg(long)]
        sentences: Option<PathBuf>,
        /// Alignment file, one "pos-node" pair list per line.
        #[arg(long)]
        alignments: Option<PathBuf>,
    },
    /// Train a model; writes checkpoint, metrics, and the effective config.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Decode graphs from a JSONL file into sentences (one per line).
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input JSONL of examples (tokens are ignored; graphs are decoded).
        #[arg(long)]
        input: PathBuf,
        /// Output text file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus BLEU between two whitespace-tokenized text files.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        hyp: PathBuf,
        reference: PathBuf,
    },
    /// Forced-decoding diagnostics over a JSONL file.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input JSONL (defaults to the config's test path).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Per-example JSONL report destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the word-to-node attention matrix of one example as JSON.
        #[arg(long)]
        export_attention: Option<PathBuf>,
        /// Which example the attention export covers.
        #[arg(long, default_value_t = 0)]
        example_index: usize,
        /// Graph-size bucket edges.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 6, 8])]
        buckets: Vec<usize>,
    },
}

fn verbose() -> bool {
    std::env::var("BACKPARSE_LOG").map(|v| v != "quiet").unwrap_or(true)
}

macro_rules! log {
    ($($arg:tt)*) => {
        if verbose() {
            eprintln!($($arg)*);
        }
    };
}

/// Rebuild the deterministic data pipeline and model exactly as
/// training left them: fit on the training corpus, then load weights.
fn load_trained(cfg: &RunConfig) -> Result<(Pipeline, Model)> {
    let raw = read_raw_jsonl(&cfg.train_path)?;
    let (pipe, _) = Pipeline::build(&raw, cfg.max_path_len, cfg.relation_cap, cfg.share_relation_embeddings)?;
    let ckpt = cfg.checkpoint_path();
    if !ckpt.exists() {
        return Err(Error::Data(format!("checkpoint {} not found; train first", ckpt.display())));
    }
    let (model, _) = Model::load(&ckpt, cfg.model_config(&pipe))?;
    Ok((pipe, model))
}

fn read_tokens_file(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    cfg.dump_effective()?;
    let splits = [
        (&cfg.train_path, cfg.synth.n_examples, cfg.synth.seed),
        (&cfg.dev_path, cfg.synth.n_dev, cfg.synth.seed.wrapping_add(1)),
        (&cfg.test_path, cfg.synth.n_test, cfg.synth.seed.wrapping_add(2)),
    ];
    for (path, n, seed) in splits {
        let spec = backparse::synth::SyntheticSpec { n_examples: n, seed, ..cfg.synth.clone() };
        let examples = generate(&spec)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_raw_jsonl(path, &examples)?;
        log!("synth: wrote {} examples to {}", examples.len(), path.display());
    }
    Ok(())
}

fn cmd_preprocess(
    cfg: &RunConfig,
    input: Option<&Path>,
    out: Option<&Path>,
    penman: Option<(&Path, &Path, &Path)>,
) -> Result<()> {
    let raw: Vec<RawExample> = match penman {
        Some((g, s, a)) => ingest_penman(g, s, a)?,
        None => read_raw_jsonl(input.unwrap_or(&cfg.train_path))?,
    };
    // fitting the pipeline runs the full validation stack
    let (pipe, processed) = Pipeline::build(&raw, cfg.max_path_len, cfg.relation_cap, cfg.share_relation_embeddings)?;
    let vocab_dir = cfg.vocab_dir();
    std::fs::create_dir_all(&vocab_dir)?;
    pipe.words.save(&vocab_dir.join("words.txt"))?;
    pipe.concepts.save(&vocab_dir.join("concepts.txt"))?;
    std::fs::write(&vocab_dir.join("relations.txt"), pipe.relations.entries().join("\n") + "\n")?;
    if let Some(out) = out {
        if let Some(dir) = out.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_raw_jsonl(out, &raw)?;
    }
    log!(
        "preprocess: {} examples valid; vocab sizes: {} words, {} concepts, {} relations",
        processed.len(),
        pipe.words.len(),
        pipe.concepts.len(),
        pipe.relations.len()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.dump_effective()?;
    std::fs::create_dir_all(&cfg.work_dir)?;
    let raw_train = read_raw_jsonl(&cfg.train_path)?;
    let (pipe, train_set) = Pipeline::build(&raw_train, cfg.max_path_len, cfg.relation_cap, cfg.share_relation_embeddings)?;
    let dev_set = if cfg.dev_path.exists() {
        read_raw_jsonl(&cfg.dev_path)?
            .iter()
            .map(|ex| pipe.process(ex))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let model = Model::new(cfg.model_config(&pipe), cfg.seed)?;
    log!(
        "train: {} train / {} dev examples, {} parameters",
        train_set.len(),
        dev_set.len(),
        model.params.n_scalars()
    );
    let report = train(&model, &train_set, &dev_set, &cfg.train_options())?;
    log!(
        "train: done after {} steps, final loss {:.4}, best dev BLEU {:?}",
        report.steps,
        report.final_loss,
        report.best_dev_bleu
    );
    println!("final_loss = {:.6}", report.final_loss);
    if let Some(b) = report.best_dev_bleu {
        println!("best_dev_bleu = {b:.2}");
    }
    Ok(())
}

fn cmd_generate(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<()> {
    let (pipe, model) = load_trained(cfg)?;
    let raw = read_raw_jsonl(input)?;
    let opts = cfg.gen_options();
    let mut lines = Vec::with_capacity(raw.len());
    for ex in &raw {
        let (_, concept_ids, rel_ids) = pipe.process_graph(&ex.graph)?;
        let hyp = beam_search(&model, &concept_ids, &rel_ids, &opts);
        let words: Vec<&str> = hyp.tokens.iter().map(|&w| pipe.words.entry(w)).collect();
        lines.push(words.join(" "));
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    log!("generate: decoded {} graphs", raw.len());
    Ok(())
}

fn cmd_eval(hyp: &Path, reference: &Path) -> Result<()> {
    let h = read_tokens_file(hyp)?;
    let r = read_tokens_file(reference)?;
    let bleu = corpus_bleu(&h, &r)?;
    println!("BLEU = {bleu:.2}");
    Ok(())
}

#[derive(serde::Serialize)]
struct DiagnoseLine {
    id: usize,
    n_nodes: usize,
    node_acc: f64,
    edge_acc: f64,
    bleu: f64,
}

fn cmd_diagnose(
    cfg: &RunConfig,
    input: Option<&Path>,
    out: Option<&Path>,
    attention: Option<(&Path, usize)>,
    buckets: &[usize],
) -> Result<()> {
    let (pipe, model) = load_trained(cfg)?;
    let raw = read_raw_jsonl(input.unwrap_or(&cfg.test_path))?;
    if raw.is_empty() {
        return Err(Error::Data("diagnose: empty input".into()));
    }
    let opts = cfg.gen_options();
    let mut lines = Vec::new();
    let mut items = Vec::new();
    let (mut node_accs, mut edge_accs, mut both_accs, mut bleus) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (id, ex) in raw.iter().enumerate() {
        let processed = pipe.process(ex)?;
        let rep = forced_decode_diagnostics(&model, &processed);
        let hyp = beam_search(&model, &processed.concept_ids, &processed.rel_ids, &opts);
        let bleu = sentence_bleu(&hyp.tokens, &processed.tokens)?;
        node_accs.push(rep.node_acc);
        edge_accs.push(rep.edge_acc);
        both_accs.push((rep.node_acc + rep.edge_acc) / 2.0);
        bleus.push(bleu);
        items.push((rep.n_nodes, hyp.tokens.clone(), processed.tokens.clone()));
        lines.push(serde_json::to_string(&DiagnoseLine {
            id,
            n_nodes: rep.n_nodes,
            node_acc: rep.node_acc,
            edge_acc: rep.edge_acc,
            bleu,
        })?);
    }
    if let Some(p) = out {
        std::fs::write(p, lines.join("\n") + "\n")?;
    } else {
        for l in &lines {
            println!("{l}");
        }
    }

    println!("graph-size buckets:");
    for b in bucket_by_graph_size(&items, buckets)? {
        let hi = b.hi.map_or("∞".to_string(), |h| h.to_string());
        match b.bleu {
            Some(s) => println!("  [{:>2}, {:>2})  count {:>4}  BLEU {s:.2}", b.lo, hi, b.count),
            None => println!("  [{:>2}, {:>2})  count {:>4}  BLEU n/a", b.lo, hi, b.count),
        }
    }

    for (name, accs) in [("node", &node_accs), ("edge", &edge_accs), ("both", &both_accs)] {
        match pearson(accs, &bleus) {
            Ok(rho) => println!("pearson({name} acc, sentence BLEU) = {rho:.4}"),
            Err(_) => println!("pearson({name} acc, sentence BLEU) = n/a (zero variance)"),
        }
    }

    if let Some((path, idx)) = attention {
        let ex = raw
            .get(idx)
            .ok_or_else(|| Error::Data(format!("example index {idx} out of range")))?;
        let processed = pipe.process(ex)?;
        let mut concepts = vec!["∅".to_string()];
        concepts.extend(ex.graph.nodes.iter().cloned());
        export_attention(&model, &processed, &ex.tokens, &concepts, path)?;
        log!("diagnose: attention matrix for example {idx} written to {}", path.display());
    }
    // overall corpus BLEU for convenience
    let cands: Vec<Vec<String>> = items.iter().map(|(_, c, _)| c.iter().map(|&w| pipe.words.entry(w).to_string()).collect()).collect();
    let refs: Vec<Vec<String>> = items.iter().map(|(_, _, r)| r.iter().map(|&w| pipe.words.entry(w).to_string()).collect()).collect();
    println!("corpus BLEU = {:.2}", corpus_bleu(&cands, &refs)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg } => cmd_synth(&cfg.load()?),
        Command::Preprocess { cfg, input, out, graphs, sentences, alignments } => {
            let penman = match (&graphs, &sentences, &alignments) {
                (Some(g), Some(s), Some(a)) => Some((g.as_path(), s.as_path(), a.as_path())),
                _ => None,
            };
            cmd_preprocess(&cfg.load()?, input.as_deref(), out.as_deref(), penman)
        }
        Command::Train { cfg } => cmd_train(&cfg.load()?),
        Command::Generate { cfg, input, out } => cmd_generate(&cfg.load()?, &input, out.as_deref()),
        Command::Eval { cfg, hyp, reference } => {
            cfg.load()?; // config errors still surface with the right exit code
            cmd_eval(&hyp, &reference)
        }
        Command::Diagnose { cfg, input, out, export_attention, example_index, buckets } => cmd_diagnose(
            &cfg.load()?,
            input.as_deref(),
            out.as_deref(),
            export_attention.as_deref().map(|p| (p, example_index)),
            &buckets,
        ),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // panics in the numeric core (non-finite intermediates, fully
    // masked softmax, ...) count as numeric failures
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            eprintln!("error: numeric failure (panic in compute core)");
            ExitCode::from(4)
        }
    }
}
