use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use asem::corpus::{
    encode_corpus, make_batches, map_corpus, read_raw_dialogues, synthetic_corpus, write_mapped, Batch,
    DatasetTag, LabelSpace, MappedDialogue,
};
use asem::decoding::{beam_decode, greedy_decode, BeamConfig};
use asem::eval::{default_exclusions, embedding_table, evaluate, EvalSettings};
use asem::training::{run_ablations, train_loop, Ablation, AblationSetup, Checkpoint, VariantReport};
use serde::Serialize;

use crate::config::{require_file, RunConfig};
use crate::data::{self, SplitChoice};
use crate::error::{CliError, CliResult};

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn run_config(&self) -> CliResult<Option<RunConfig>> {
        self.config.as_deref().map(|p| RunConfig::load(p, self.seed)).transpose()
    }

    fn require_config(&self, command: &str) -> CliResult<RunConfig> {
        self.run_config()?
            .ok_or_else(|| CliError::Usage(format!("{command} requires --config")))
    }
}

pub struct PrepSource {
    pub input: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub topics: usize,
    pub filler: usize,
}

pub fn prep(g: &Globals, source: &PrepSource, dataset: DatasetTag) -> CliResult<()> {
    if g.config.is_some() {
        return Err(CliError::Usage("prep takes no --config".into()));
    }
    let out = g.out.as_deref().ok_or_else(|| CliError::Usage("prep requires --out".into()))?;
    let mapped = match (&source.input, source.synthetic) {
        (Some(input), None) => {
            require_file(input, "input")?;
            map_corpus(&read_raw_dialogues(input, dataset)?)?.0
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(asem::Error::Empty("synthetic corpus").into());
            }
            let labels = LabelSpace::for_dataset(dataset);
            synthetic_corpus(n, &labels, source.topics, source.filler, g.seed.unwrap_or(0))
        }
        _ => return Err(CliError::Usage("prep needs exactly one of --input or --synthetic".into())),
    };
    data::create_parent(out)?;
    write_mapped(out, &mapped)?;

    let labels = LabelSpace::for_dataset(dataset);
    let mut stdout = io::stdout().lock();
    let p = |e| CliError::io(Path::new("<stdout>"), e);
    writeln!(stdout, "{:<14}{:>8}", "emotion", "count").map_err(p)?;
    for e in &labels.emotions {
        let n = mapped.iter().filter(|d| d.emotion == *e).count();
        writeln!(stdout, "{:<14}{n:>8}", e.name()).map_err(p)?;
    }
    writeln!(stdout, "{:<14}{:>8}", "total", mapped.len()).map_err(p)?;
    log::info!("wrote {} examples to {}", mapped.len(), out.display());
    Ok(())
}

fn open_log(path: &Path, append: bool) -> CliResult<BufWriter<File>> {
    data::create_parent(path)?;
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    Ok(BufWriter::new(file))
}

pub fn train(g: &Globals, resume: Option<&Path>) -> CliResult<()> {
    let cfg = g.require_config("train")?;
    let labels = LabelSpace::for_dataset(cfg.dataset);
    let (state, prepared) = match resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let mut ckpt = Checkpoint::load(path)?;
            if ckpt.labels != labels {
                return Err(CliError::Config(format!("checkpoint label space differs from dataset {}", cfg.dataset)));
            }
            let prepared = data::prepare(&cfg, Some(ckpt.vocab.clone()))?;
            if data::model_config(&cfg, &ckpt.vocab, &labels)? != ckpt.model {
                return Err(CliError::Config("[model] differs from the checkpoint being resumed".into()));
            }
            ckpt.train = cfg.train.clone();
            log::info!("resuming from {} at step {}", path.display(), ckpt.step);
            (ckpt, prepared)
        }
        None => {
            let prepared = data::prepare(&cfg, None)?;
            let model = data::model_config(&cfg, &prepared.vocab, &labels)?;
            let table = data::embeddings(&cfg, &prepared.vocab, &model)?;
            let state = Checkpoint::init(model, cfg.train.clone(), prepared.vocab.clone(), labels, table.as_ref())?;
            (state, prepared)
        }
    };
    if state.step >= state.train.max_steps {
        return Err(CliError::Config(format!(
            "checkpoint is already at step {} of max_steps {}",
            state.step, state.train.max_steps
        )));
    }
    let dir = g.out.clone().unwrap_or_else(|| cfg.paths.checkpoints.clone());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let log_path = dir.join("train_log.jsonl");
    let mut log_file = open_log(&log_path, resume.is_some())?;
    let mut write_err = None;
    log::info!(
        "training {} parameters for up to {} steps",
        state.params.num_elements(),
        state.train.max_steps
    );
    let outcome = train_loop(state, &prepared.train, &prepared.valid, |r| {
        log::debug!("step {:>6}  l1 {:.4}  l2 {:.4}  l3 {:.4}", r.step, r.l1, r.l2, r.l3);
        let line = serde_json::to_string(r).expect("log records serialize");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(CliError::io(&log_path, e));
    }
    log_file.flush().map_err(|e| CliError::io(&log_path, e))?;
    outcome.best.save(&dir.join("best.ckpt"))?;
    outcome.last.save(&dir.join("last.ckpt"))?;
    match outcome.best.best_val {
        Some(v) => println!(
            "stopped at step {}; best validation loss {v:.4} at step {}",
            outcome.last.step, outcome.best.step
        ),
        None => println!("stopped at step {}", outcome.last.step),
    }
    println!("checkpoints written to {}", dir.display());
    Ok(())
}

fn checkpoint_path(explicit: Option<&Path>, cfg: Option<&RunConfig>) -> CliResult<PathBuf> {
    let path = match (explicit, cfg) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(c)) => c.paths.checkpoints.join("best.ckpt"),
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --config".into())),
    };
    require_file(&path, "checkpoint")?;
    Ok(path)
}

fn corpus_path(explicit: Option<&Path>, cfg: Option<&RunConfig>) -> CliResult<PathBuf> {
    let path = match (explicit, cfg) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(c)) => c.paths.corpus.clone(),
        (None, None) => return Err(CliError::Usage("pass --corpus or --config".into())),
    };
    require_file(&path, "corpus")?;
    Ok(path)
}

pub struct EvalArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub corpus: Option<&'a Path>,
    pub split: SplitChoice,
    pub embeddings: Option<&'a Path>,
}

pub fn eval(g: &Globals, args: &EvalArgs<'_>) -> CliResult<()> {
    let cfg = g.run_config()?;
    let ckpt_path = checkpoint_path(args.checkpoint, cfg.as_ref())?;
    let corpus = corpus_path(args.corpus, cfg.as_ref())?;
    if let Some(p) = args.embeddings {
        require_file(p, "embeddings")?;
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let seed = g.seed.unwrap_or(ckpt.train.seed);
    let dialogues = data::select(data::read_corpus(&corpus, &ckpt.labels)?, args.split, seed);
    let examples = encode_corpus(&dialogues, &ckpt.vocab, &ckpt.labels)?;
    if examples.is_empty() {
        return Err(asem::Error::Empty("evaluation split").into());
    }
    let table = match args.embeddings {
        Some(p) => asem::corpus::load_embeddings(p, &ckpt.vocab, ckpt.model.embed_dim, seed)?.0,
        None => embedding_table(&ckpt.params),
    };
    let settings = EvalSettings {
        batch_size: ckpt.train.batch_size,
        beam: cfg.as_ref().map(|c| c.decoding.clone()).unwrap_or_default(),
        exclude: default_exclusions(&ckpt.labels),
    };
    let ev = evaluate(&ckpt.params, &ckpt.model, &examples, &ckpt.labels, &ckpt.vocab, &table, &settings)?;
    let r = &ev.report;
    log::info!(
        "{} examples: ppl {:.3} bleu {:.4} d1 {:.4} d2 {:.4} cos {:.4} macro-F1 {:.4} sentiment acc {:.4}",
        examples.len(),
        r.ppl,
        r.bleu,
        r.distinct_1,
        r.distinct_2,
        r.avg_cosine,
        r.macro_f1,
        ev.sentiment_accuracy
    );
    let out = g.out.clone().or_else(|| cfg.as_ref().map(|c| c.paths.reports.join("eval.json")));
    match out {
        Some(path) => {
            data::write_json(&path, r)?;
            println!("report written to {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(r)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationFile<'a> {
    variants: &'a [VariantReport],
}

pub fn ablate(g: &Globals, names: &[String]) -> CliResult<()> {
    let cfg = g.require_config("ablate")?;
    let names: Vec<&str> = if names.is_empty() {
        Ablation::ALL.iter().map(|a| a.name()).collect()
    } else {
        names.iter().map(String::as_str).collect()
    };
    for n in &names {
        n.parse::<Ablation>()?;
    }
    let prepared = data::prepare(&cfg, None)?;
    let model = data::model_config(&cfg, &prepared.vocab, &prepared.labels)?;
    let table = data::embeddings(&cfg, &prepared.vocab, &model)?;
    let setup = AblationSetup {
        model,
        train: cfg.train.clone(),
        vocab: prepared.vocab.clone(),
        labels: prepared.labels.clone(),
        embeddings: table.as_ref(),
        train_set: &prepared.train,
        valid_set: &prepared.valid,
        test_set: &prepared.test,
        eval: EvalSettings {
            batch_size: cfg.train.batch_size,
            beam: cfg.decoding.clone(),
            exclude: default_exclusions(&prepared.labels),
        },
    };
    let reports = run_ablations(&names, &setup)?;
    let path = g.out.clone().unwrap_or_else(|| cfg.paths.reports.join("ablation.json"));
    data::write_json(&path, &AblationFile { variants: &reports })?;

    println!(
        "{:<20}{:>10}{:>7}{:>10}{:>9}{:>8}{:>8}{:>8}{:>8}{:>8}",
        "variant", "params", "steps", "val", "ppl", "bleu", "d1", "d2", "cos", "f1"
    );
    for v in &reports {
        let r = &v.evaluation.report;
        println!(
            "{:<20}{:>10}{:>7}{:>10.4}{:>9.3}{:>8.4}{:>8.4}{:>8.4}{:>8.4}{:>8.4}",
            v.name,
            v.parameters,
            v.steps,
            v.best_val_total.unwrap_or(f64::NAN),
            r.ppl,
            r.bleu,
            r.distinct_1,
            r.distinct_2,
            r.avg_cosine,
            r.macro_f1
        );
    }
    println!("report written to {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct Generated {
    #[serde(skip_serializing_if = "Option::is_none")]
    conversation_id: Option<String>,
    context: Vec<String>,
    response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
}

pub struct GenerateArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub corpus: Option<&'a Path>,
    pub split: SplitChoice,
    pub turns: &'a [String],
    pub greedy: bool,
}

fn decode_batch(ckpt: &Checkpoint, batch: &Batch, beam: &BeamConfig, greedy: bool) -> Vec<Vec<usize>> {
    if greedy {
        greedy_decode(&ckpt.params, &ckpt.model, batch, beam.max_new_tokens)
    } else {
        beam_decode(&ckpt.params, &ckpt.model, batch, beam)
            .into_iter()
            .map(|c| c.into_iter().next().map(|c| c.tokens).unwrap_or_default())
            .collect()
    }
}

pub fn generate(g: &Globals, args: &GenerateArgs<'_>) -> CliResult<()> {
    let cfg = g.run_config()?;
    let ckpt_path = checkpoint_path(args.checkpoint, cfg.as_ref())?;
    let corpus = if args.turns.is_empty() {
        Some(corpus_path(args.corpus, cfg.as_ref())?)
    } else {
        if args.corpus.is_some() {
            return Err(CliError::Usage("use either --turn or --corpus".into()));
        }
        None
    };
    let beam = cfg.as_ref().map(|c| c.decoding.clone()).unwrap_or_default();
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let vocab = &ckpt.vocab;

    let mut records = Vec::new();
    match corpus {
        None => {
            let turns: Vec<Vec<usize>> = args.turns.iter().map(|t| vocab.encode(&asem::corpus::tokenize(t))).collect();
            let (current, history) = turns.split_last().expect("at least one turn");
            let batch = Batch::for_context(&history.concat(), current, ckpt.model.max_len);
            let response = decode_batch(&ckpt, &batch, &beam, args.greedy).remove(0);
            records.push(Generated {
                conversation_id: None,
                context: args.turns.to_vec(),
                response: vocab.detokenize(&response),
                reference: None,
            });
        }
        Some(path) => {
            let seed = g.seed.unwrap_or(ckpt.train.seed);
            let dialogues: Vec<MappedDialogue> = data::select(data::read_corpus(&path, &ckpt.labels)?, args.split, seed);
            let examples = encode_corpus(&dialogues, vocab, &ckpt.labels)?;
            let mut responses = Vec::new();
            for batch in make_batches(&examples, ckpt.train.batch_size, ckpt.model.max_len) {
                responses.extend(decode_batch(&ckpt, &batch, &beam, args.greedy));
            }
            for (d, r) in dialogues.iter().zip(responses) {
                records.push(Generated {
                    conversation_id: Some(d.conversation_id.clone()),
                    context: d.context_turns.iter().chain([&d.current_turn]).map(|t| t.join(" ")).collect(),
                    response: vocab.detokenize(&r),
                    reference: Some(d.response.join(" ")),
                });
            }
        }
    }

    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    match &g.out {
        Some(path) => {
            data::create_parent(path)?;
            fs::write(path, lines).map_err(|e| CliError::io(path, e))?;
            log::info!("wrote {} responses to {}", records.len(), path.display());
        }
        None => print!("{lines}"),
    }
    Ok(())
}

pub fn chat(g: &Globals, checkpoint: Option<&Path>) -> CliResult<()> {
    let cfg = g.run_config()?;
    let path = checkpoint_path(checkpoint, cfg.as_ref())?;
    let beam = cfg.as_ref().map(|c| c.decoding.clone()).unwrap_or_default();
    let ckpt = Checkpoint::load(&path)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    crate::chat::run(&ckpt, &beam, stdin.lock(), stdout.lock())
        .map_err(|e| CliError::io(Path::new("<terminal>"), e))
}
