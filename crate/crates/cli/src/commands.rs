use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use groundalign::alignment::{
    iterative_procrustes, muve_align, procrustes, supervised_align, translate_with_map, LinearMap, Retrieval,
};
use groundalign::baselines::{build_pseudo_parallel, random_chance_recall, JointProbTable, JointRanking};
use groundalign::corpus::{build_vocabulary_from_sentences, cooccurrence, read_corpus, Vocabulary};
use groundalign::embeddings::{train_skipgram_traced, EmbeddingMatrix};
use groundalign::eval::{corpus_dissimilarity, load_dictionary, recall_at_n};
use groundalign::grounding::{read_clip_records, train, ClipDataset, GroundingModel, TranslationIndex};
use groundalign::synthworld::generate;
use serde_json::Value;

use crate::config::Config;
use crate::manifest::{manifest_path, read_manifest, Recorder};
use crate::preds::{self, Predictions};
use crate::{
    AlignCmd, BaselineCmd, Cli, Command, DissimilarityArgs, EmbedCmd, EmbedTrainArgs, EvalCmd, GroundCmd,
    GroundTrainArgs, RecallArgs, ReportArgs, RetrievalArg, SynthCmd, SynthArgs, TranslateArgs, VocabCmd,
};

/// Inputs that do not exist, reported together before any work starts.
#[derive(Debug)]
pub struct MissingFiles(pub Vec<PathBuf>);

impl std::fmt::Display for MissingFiles {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let list: Vec<String> = self.0.iter().map(|p| p.display().to_string()).collect();
        write!(f, "missing input(s): {}", list.join(", "))
    }
}

impl std::error::Error for MissingFiles {}

fn require<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    let missing: Vec<PathBuf> = paths.into_iter().filter(|p| !p.exists()).map(Path::to_path_buf).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(MissingFiles(missing).into())
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = Config::resolve(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(groundalign::Error::InvalidArgument {
                arg: "threads",
                reason: "must be at least 1".into(),
            });
        }
        config.skipgram.threads = t;
    }
    match &cli.command {
        Command::Vocab(VocabCmd::Build { corpus, out, max_size }) => vocab_build(config, corpus, out, *max_size),
        Command::Embed(EmbedCmd::Train(args)) => embed_train(config, args),
        Command::Ground(GroundCmd::Train(args)) => ground_train(config, args),
        Command::Align(cmd) => align(config, cmd),
        Command::Translate(args) => translate(config, args),
        Command::Eval(EvalCmd::Recall(args)) => eval_recall(config, args),
        Command::Eval(EvalCmd::Dissimilarity(args)) => eval_dissimilarity(config, args),
        Command::Baseline(cmd) => baseline(config, cmd),
        Command::Synth(SynthCmd::Generate(args)) => synth_generate(config, args),
        Command::Report(args) => report(args),
    }
}

fn vocab_build(mut config: Config, corpus: &Path, out: &Path, max_size: Option<usize>) -> Result<()> {
    require([corpus])?;
    if let Some(m) = max_size {
        config.vocab.max_size = m;
    }
    let mut rec = Recorder::new("vocab build", &config, None);
    let sentences = read_corpus(corpus)?;
    let vocab = build_vocabulary_from_sentences(&sentences, config.vocab.max_size)?;
    ensure_parent(out)?;
    vocab.save(out)?;
    rec.output(out);
    rec.metric("size", vocab.len());
    println!("vocabulary of {} words -> {}", vocab.len(), out.display());
    rec.finish(&manifest_path(out, false))
}

fn embed_train(mut config: Config, args: &EmbedTrainArgs) -> Result<()> {
    require([args.corpus.as_path()].into_iter().chain(args.vocab.as_deref()))?;
    config.skipgram.seed = args.seed;
    if let Some(d) = args.dim {
        config.skipgram.dim = d;
    }
    if let Some(e) = args.epochs {
        config.skipgram.epochs = e;
    }
    let mut rec = Recorder::new("embed train", &config, Some(args.seed));
    let sentences = read_corpus(&args.corpus)?;
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => build_vocabulary_from_sentences(&sentences, config.vocab.max_size)?,
    };
    let out = train_skipgram_traced(&sentences, &vocab, &config.skipgram)?;
    let emb = if args.normalize {
        out.embeddings.normalized(true)
    } else {
        out.embeddings
    };
    ensure_parent(&args.out)?;
    emb.save(&args.out)?;
    rec.output(&args.out);
    rec.label("normalized", args.normalize);
    rec.metric("epoch_losses", out.epoch_losses.clone());
    println!(
        "{} vectors of dim {} -> {} (final epoch loss {:.4})",
        emb.len(),
        emb.dim(),
        args.out.display(),
        out.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    rec.finish(&manifest_path(&args.out, false))
}

fn ground_train(mut config: Config, args: &GroundTrainArgs) -> Result<()> {
    require([&args.clips_x, &args.clips_y, &args.emb_x, &args.emb_y].map(PathBuf::as_path))?;
    let g = &mut config.ground;
    g.seed = args.seed;
    if let Some(v) = args.steps {
        g.steps = v;
    }
    if let Some(v) = args.lr {
        g.learning_rate = v;
    }
    if let Some(v) = args.ortho_weight {
        g.ortho_weight = v;
    }
    if let Some(v) = args.batch_size {
        g.batch_size = v;
    }
    g.validate()?;
    let mut rec = Recorder::new("ground train", &config, Some(args.seed));
    let emb_x = EmbeddingMatrix::load(&args.emb_x)?;
    let emb_y = EmbeddingMatrix::load(&args.emb_y)?;
    let len = config.vocab.sentence_len;
    let clips_x = ClipDataset::from_records(&read_clip_records(&args.clips_x)?, emb_x.vocab(), len)?;
    let clips_y = ClipDataset::from_records(&read_clip_records(&args.clips_y)?, emb_y.vocab(), len)?;
    let model = config.ground.init_model(&emb_x, &emb_y, clips_x.feature_dim())?;
    let out = train(&model, &clips_x, &clips_y, &config.ground)?;
    out.model.save(&args.out)?;
    rec.output(&args.out);
    rec.metric("selected_step", out.selected_step);
    if let Some(last) = out.trace.last() {
        rec.metric("final_loss", last.total);
        rec.metric("final_penalty", last.penalty);
    }
    let validation: Vec<Value> = out
        .validation
        .iter()
        .map(|v| serde_json::json!({"step": v.step, "loss": v.loss}))
        .collect();
    rec.metric("validation", validation);
    println!(
        "trained {} steps, kept step {} -> {}",
        out.trace.len(),
        out.selected_step,
        args.out.display()
    );
    rec.finish(&manifest_path(&args.out, true))
}

fn load_pair(emb: &crate::EmbPair) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    require([emb.emb_x.as_path(), emb.emb_y.as_path()])?;
    Ok((EmbeddingMatrix::load(&emb.emb_x)?, EmbeddingMatrix::load(&emb.emb_y)?))
}

fn align(mut config: Config, cmd: &AlignCmd) -> Result<()> {
    let (name, out, map, mut rec) = match cmd {
        AlignCmd::Supervised { emb, dict, out } => {
            require([dict.as_path()])?;
            let (x, y) = load_pair(emb)?;
            let mut rec = Recorder::new("align supervised", &config, None);
            let d = load_dictionary(dict)?;
            let sup = supervised_align(&x, &y, &d.pairs())?;
            rec.metric("pairs_used", sup.pairs_used);
            rec.metric("coverage", sup.coverage());
            ("supervised", out, sup.map, rec)
        }
        AlignCmd::Procrustes { emb, out } => {
            let (x, y) = load_pair(emb)?;
            if x.len() != y.len() {
                bail!(groundalign::Error::DimensionMismatch {
                    context: "row-aligned target embeddings".into(),
                    expected: x.len(),
                    found: y.len(),
                });
            }
            let rec = Recorder::new("align procrustes", &config, None);
            ("procrustes", out, procrustes(&x.to_dmatrix(), &y.to_dmatrix())?, rec)
        }
        AlignCmd::Iterative {
            emb,
            out,
            seed,
            restarts,
        } => {
            let (x, y) = load_pair(emb)?;
            config.iterative.seed = *seed;
            if let Some(r) = restarts {
                config.iterative.restarts = *r;
            }
            let mut rec = Recorder::new("align iterative", &config, Some(*seed));
            let res = iterative_procrustes(&x.to_dmatrix(), &y.to_dmatrix(), &config.iterative)?;
            rec.metric("best_restart", res.best_restart);
            rec.metric("criteria", res.criteria.clone());
            ("iterative", out, res.map, rec)
        }
        AlignCmd::Muve {
            model,
            emb,
            out,
            refine_iters,
        } => {
            require([model.as_path()])?;
            let (x, y) = load_pair(emb)?;
            if let Some(r) = refine_iters {
                config.muve.refine_iters = *r;
            }
            let rec = Recorder::new("align muve", &config, None);
            let m = GroundingModel::load(model)?;
            let seed = LinearMap::from_adapt_layer(&m.adapt);
            ("muve", out, muve_align(&seed, &x.to_dmatrix(), &y.to_dmatrix(), &config.muve)?, rec)
        }
    };
    map.save(out)?;
    rec.output(out);
    rec.metric("orthogonality_error", map.orthogonality_error());
    println!("{name} map ({0}x{0}) -> {1}", map.dim(), out.display());
    rec.finish(&manifest_path(out, true))
}

fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.split_whitespace().map(str::to_owned).collect())
}

fn gather_queries(queries: Option<&Path>, dict: Option<&Path>, words: &[String]) -> Result<Vec<String>> {
    require(queries.into_iter().chain(dict))?;
    let mut out: Vec<String> = words.to_vec();
    if let Some(q) = queries {
        out.extend(read_word_list(q)?);
    }
    if let Some(d) = dict {
        out.extend(load_dictionary(d)?.sources().map(str::to_owned));
    }
    if out.is_empty() {
        bail!(groundalign::Error::InvalidArgument {
            arg: "queries",
            reason: "give --word, --queries or --dict".into(),
        });
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn emit(preds: &Predictions, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            ensure_parent(path)?;
            preds::write(path, preds)
        }
        None => {
            for (q, ts) in preds {
                println!("{q}\t{}", ts.join(" "));
            }
            Ok(())
        }
    }
}

fn translate(config: Config, args: &TranslateArgs) -> Result<()> {
    let k = args.k.unwrap_or(config.eval.top_k);
    let queries = gather_queries(args.queries.as_deref(), args.dict.as_deref(), &args.word)?;
    let mut rec = Recorder::new("translate", &config, None);
    let preds = if let Some(map_dir) = &args.map {
        let (Some(ex), Some(ey)) = (&args.emb_x, &args.emb_y) else {
            bail!(groundalign::Error::InvalidArgument {
                arg: "map",
                reason: "--map needs --emb-x and --emb-y".into(),
            });
        };
        require([map_dir.as_path(), ex.as_path(), ey.as_path()])?;
        let map = LinearMap::load(map_dir)?;
        let (x, y) = (EmbeddingMatrix::load(ex)?, EmbeddingMatrix::load(ey)?);
        let retrieval = match args.retrieval {
            RetrievalArg::Cosine => Retrieval::Cosine,
            RetrievalArg::Csls => Retrieval::Csls { k: config.eval.csls_k },
        };
        rec.label("retrieval", format!("{retrieval:?}"));
        translate_with_map(&map, &x, &y, &queries, k, retrieval)?
    } else {
        let dir = args.model.as_deref().expect("clap requires --map or --model");
        require([dir])?;
        let model = GroundingModel::load(dir)?;
        let index = TranslationIndex::new(&model)?;
        let mut out = Predictions::new();
        for q in &queries {
            if model.vocab(groundalign::grounding::Language::X).contains(q) {
                out.insert(q.clone(), index.translate(q, k)?.into_iter().map(|(w, _)| w).collect());
            }
        }
        out
    };
    rec.metric("queries", queries.len());
    rec.metric("translated", preds.len());
    emit(&preds, args.out.as_deref())?;
    match &args.out {
        Some(out) => {
            rec.output(out);
            eprintln!("{} of {} queries translated -> {}", preds.len(), queries.len(), out.display());
            rec.finish(&manifest_path(out, false))
        }
        None => Ok(()),
    }
}

fn eval_recall(config: Config, args: &RecallArgs) -> Result<()> {
    require([args.pred.as_path(), args.dict.as_path()])?;
    let mut rec = Recorder::new("eval recall", &config, None);
    let preds = preds::read(&args.pred)?;
    let dict = load_dictionary(&args.dict)?;
    let mut reports = Vec::new();
    for &n in &args.n {
        let r = recall_at_n(&preds, &dict, n)?;
        println!("{}", r.summary_line());
        rec.metric(&format!("recall@{n}"), r.recall);
        rec.metric("coverage", r.coverage());
        reports.push(r);
    }
    let Some(dir) = &args.out else { return Ok(()) };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in &reports {
        let path = dir.join(format!("recall_at_{}.csv", r.n));
        r.write_csv(&path)?;
        rec.output(path);
    }
    if let Some(m) = &args.method {
        rec.label("method", m.as_str());
    }
    for (k, v) in &args.labels {
        rec.label(k, v.as_str());
    }
    rec.finish(&manifest_path(dir, true))
}

fn eval_dissimilarity(config: Config, args: &DissimilarityArgs) -> Result<()> {
    require([&args.corpus_a, &args.corpus_b, &args.pairs].map(PathBuf::as_path))?;
    let mut rec = Recorder::new("eval dissimilarity", &config, None);
    let (a, b) = (read_corpus(&args.corpus_a)?, read_corpus(&args.corpus_b)?);
    let va = build_vocabulary_from_sentences(&a, config.vocab.max_size)?;
    let vb = build_vocabulary_from_sentences(&b, config.vocab.max_size)?;
    let aligned: Vec<(usize, usize)> = load_dictionary(&args.pairs)?
        .pairs()
        .iter()
        .filter_map(|(x, y)| Some((va.id(x)?, vb.id(y)?)))
        .collect();
    if aligned.is_empty() {
        bail!(groundalign::Error::NoResolvablePairs);
    }
    let d = corpus_dissimilarity(&cooccurrence(&a, &va), &cooccurrence(&b, &vb), &aligned, args.smoothing)?;
    println!(
        "dissimilarity={:.4} compared={} skipped={}",
        d.distance, d.compared, d.skipped
    );
    let Some(dir) = &args.out else { return Ok(()) };
    rec.metric("dissimilarity", d.distance);
    rec.metric("compared", d.compared);
    rec.metric("skipped", d.skipped);
    for (k, v) in &args.labels {
        rec.label(k, v.as_str());
    }
    rec.finish(&manifest_path(dir, true))
}

fn baseline(config: Config, cmd: &BaselineCmd) -> Result<()> {
    match cmd {
        BaselineCmd::Chance {
            dict,
            vocab_y,
            vocab_y_size,
            n,
            trials,
            seed,
        } => {
            require([dict.as_path()].into_iter().chain(vocab_y.as_deref()))?;
            let v = match (vocab_y, vocab_y_size) {
                (Some(p), _) => Vocabulary::load(p)?.len(),
                (None, Some(s)) => *s,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let d = load_dictionary(dict)?;
            let est = random_chance_recall(&d, v, *n, trials.unwrap_or(config.eval.chance_trials), *seed)?;
            println!(
                "chance recall@{n}={:.6} monte_carlo={:.6} std_error={:.6}",
                est.expectation, est.monte_carlo, est.std_error
            );
            Ok(())
        }
        BaselineCmd::Retrieval {
            clips_x,
            clips_y,
            vocab_x,
            vocab_y,
            dict,
            queries,
            neighbours,
            k,
            out,
            pairs_out,
        } => {
            require([clips_x, clips_y, vocab_x, vocab_y].map(PathBuf::as_path))?;
            let queries = gather_queries(queries.as_deref(), dict.as_deref(), &[])?;
            let mut rec = Recorder::new("baseline retrieval", &config, None);
            let (vx, vy) = (Vocabulary::load(vocab_x)?, Vocabulary::load(vocab_y)?);
            let len = config.vocab.sentence_len;
            let cx = ClipDataset::from_records(&read_clip_records(clips_x)?, &vx, len)?;
            let cy = ClipDataset::from_records(&read_clip_records(clips_y)?, &vy, len)?;
            let corpus = build_pseudo_parallel(&cx, &cy, neighbours.unwrap_or(config.eval.neighbours))?;
            if let Some(p) = pairs_out {
                ensure_parent(p)?;
                corpus.write_tsv(p, &vx, &vy)?;
                rec.output(p);
            }
            let table = JointProbTable::new(&corpus, &vx, &vy);
            let k = k.unwrap_or(config.eval.top_k);
            let mut preds = Predictions::new();
            for q in &queries {
                let Some(id) = vx.id(q) else { continue };
                let ranked = match table.rank(id, &vy, k) {
                    JointRanking::Ranked(r) => r.into_iter().map(|(w, _)| w).collect(),
                    JointRanking::Unobserved => Vec::new(),
                };
                preds.insert(q.clone(), ranked);
            }
            emit(&preds, Some(out))?;
            rec.output(out);
            rec.metric("pseudo_pairs", corpus.pairs.len());
            println!("{} pseudo-parallel pairs, {} queries -> {}", corpus.pairs.len(), preds.len(), out.display());
            rec.finish(&manifest_path(out, false))
        }
    }
}

fn synth_generate(mut config: Config, args: &SynthArgs) -> Result<()> {
    let s = &mut config.synth;
    s.seed = args.seed;
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => { $(if let Some(v) = args.$arg { s.$field = v; })* };
    }
    set!(concepts <- concepts, clips_per_language <- clips, relevance_prob <- relevance,
         feature_noise_sigma <- sigma, function_words <- function_words, feature_dim <- feature_dim,
         visual_fraction <- visual_fraction, text_captions_per_language <- text_captions);
    let mut rec = Recorder::new("synth generate", &config, Some(args.seed));
    let world = generate(&config.synth)?;
    world.write(&args.out)?;
    rec.output(&args.out);
    rec.metric("clips_per_language", world.x.records.len());
    println!(
        "world with {} concepts, {} clips per language -> {}",
        config.synth.concepts,
        world.x.records.len(),
        args.out.display()
    );
    rec.finish(&manifest_path(&args.out, true))
}

fn fmt_value(v: Option<&Value>) -> String {
    match v {
        Some(Value::Number(n)) => n.as_f64().map_or_else(|| n.to_string(), |f| format!("{f:.4}")),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => String::new(),
    }
}

fn report(args: &ReportArgs) -> Result<()> {
    let missing: Vec<PathBuf> = args
        .runs
        .iter()
        .filter(|d| !d.join(crate::manifest::MANIFEST_FILE).is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(MissingFiles(missing).into());
    }
    const COLUMNS: [&str; 5] = ["recall@1", "recall@10", "coverage", "dissimilarity", "config_sha256"];
    let mut rows: Vec<BTreeMap<&str, String>> = Vec::new();
    for dir in &args.runs {
        let m = read_manifest(dir)?;
        let mut row = BTreeMap::new();
        row.insert("run", dir.display().to_string());
        row.insert("method", fmt_value(m.labels.get("method")));
        let condition: Vec<String> = m
            .labels
            .iter()
            .filter(|(k, _)| k.as_str() != "method")
            .map(|(k, v)| format!("{k}={}", fmt_value(Some(v))))
            .collect();
        row.insert("condition", condition.join(" "));
        for c in &COLUMNS[..4] {
            row.insert(c, fmt_value(m.metrics.get(*c)));
        }
        row.insert("config_sha256", m.config_sha256[..12.min(m.config_sha256.len())].to_owned());
        rows.push(row);
    }
    let header: Vec<&str> = ["run", "method", "condition"].into_iter().chain(COLUMNS).collect();
    let mut md = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in &rows {
        let cells: Vec<&str> = header.iter().map(|h| r[h].as_str()).collect();
        let _ = writeln!(md, "| {} |", cells.join(" | "));
    }
    print!("{md}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.md"), &md).with_context(|| format!("writing {}", dir.display()))?;
        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        w.write_record(&header)?;
        for r in &rows {
            w.write_record(header.iter().map(|h| r[h].as_str()))?;
        }
        w.flush()?;
    }
    Ok(())
}
