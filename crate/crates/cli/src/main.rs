use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use interact_core::compose::{
    self, draft_bundles, llm::Limited, AnnulusMode, Composer, FixtureClient, LengthEstimator, LlmClient,
    ProceduralSource,
};
use interact_core::diffusion::{reaction_sample, sample_interaction, SamplerConfig};
use interact_core::eval::{train_evaluator, EmbeddingBank, Evaluator};
use interact_core::losses::LossMode;
use interact_core::net::{Denoiser, UpdateScheme};
use interact_core::text::{
    encode, read_embedding_records, write_embedding_records, StubEmbedder,
};
use interact_core::workbench::{
    evaluate_generation, generate_toy_dataset, load_denoiser, load_evaluator, load_motion, prepare_eval_items,
    prepare_train_items, save_denoiser, save_evaluator, save_motion, train_denoiser, DatasetManifest, NormStats,
    RunConfig, RunReport, Split, TrainRun,
};
use interact_core::{InteractionSample, Provenance};

#[derive(Parser)]
#[command(name = "interact", version, about = "Two-person text-to-motion: train, sample, compose, filter, evaluate")]
struct Cli {
    /// TOML run configuration; built-in toy defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run report path (JSON lines). Defaults to a file next to the output.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the procedural two-person toy corpus.
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        n: usize,
    },
    /// Train the two-agent denoiser (or fine-tune one with --init).
    TrainInteractor(TrainArgs),
    /// Train the denoiser for reaction generation and fit the length estimator.
    TrainReaction(TrainArgs),
    /// Train the contrastive evaluator and build the held-out embedding bank.
    TrainEvaluator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the held-out embedding bank.
        #[arg(long)]
        bank_out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample an interaction, or a reaction to a given agent-1 motion.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        frames: Option<usize>,
        /// Single-agent motion file used as the agent-1 condition.
        #[arg(long)]
        condition: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Build synthetic interactions from LLM descriptions and a reaction model.
    Compose {
        #[arg(long)]
        reaction: PathBuf,
        /// Length estimator written by train-reaction.
        #[arg(long)]
        length: PathBuf,
        /// JSON-lines fixture file, replayed with --offline and recorded otherwise.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Never contact the network; answer every request from --fixtures.
        #[arg(long)]
        offline: bool,
        /// Descriptions requested per theme.
        #[arg(long)]
        per_theme: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Keep synthetic samples that pass the semantic and annulus filters.
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        evaluator: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cosine threshold in [-1, 1].
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        r_min: Option<f64>,
        #[arg(long)]
        r_max: Option<f64>,
        /// mean-distance or bank-neighbors.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score generations for a data split with the evaluator.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        evaluator: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluate at most this many samples of the split.
        #[arg(long)]
        limit: Option<usize>,
        /// Metrics JSON output.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Embed one prompt per line with the configured text backend.
    ExportEmbeddings {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// External-embedder adapter backed by the stub embedder.
    #[command(hide = true)]
    StubEmbedder {
        #[arg(long)]
        width: usize,
        prompts: PathBuf,
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    p_uncond: Option<f64>,
    /// parallel or alternating.
    #[arg(long)]
    scheme: Option<UpdateScheme>,
    /// Start from this checkpoint (its normalisation is reused).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Use the fine-tuning learning rate; requires --init.
    #[arg(long)]
    fine_tune: bool,
    /// Additional datasets whose entries are all used for training.
    #[arg(long)]
    extra: Vec<PathBuf>,
    /// Length estimator output (train-reaction only).
    #[arg(long)]
    length_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SamplingArgs {
    #[arg(long)]
    ddim_steps: Option<usize>,
    #[arg(long)]
    cfg_weight: Option<f64>,
}

impl SamplingArgs {
    fn apply(&self, cfg: &RunConfig, seed: u64) -> SamplerConfig {
        let mut s = cfg.sampler.clone();
        if let Some(n) = self.ddim_steps {
            s.ddim_steps = n;
        }
        if let Some(w) = self.cfg_weight {
            s.guidance_weight = w;
        }
        s.seed = seed;
        s
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn report_path(cli: &Cli, out: &Path, dir_output: bool) -> PathBuf {
    cli.report.clone().unwrap_or_else(|| {
        if dir_output {
            out.join("report.jsonl")
        } else {
            sibling(out, ".report.jsonl")
        }
    })
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "train" => Split::Train,
        "test" => Split::Test,
        "heldout" => Split::Heldout,
        other => bail!("unknown split {other:?} (train, test, heldout)"),
    })
}

fn load_all(dir: &Path) -> Result<Vec<InteractionSample>> {
    let (m, root) = DatasetManifest::load(dir)?;
    Ok(m.entries.iter().map(|e| m.load_entry(&root, e)).collect::<interact_core::Result<_>>()?)
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    match &cli.cmd {
        Cmd::ToyData { out, n } => {
            fs::create_dir_all(out)?;
            let mut report = RunReport::create(&report_path(cli, out, true))?;
            let m = generate_toy_dataset(out, seed, *n, &cfg.toy)?;
            for (name, split) in [("train", Split::Train), ("test", Split::Test), ("heldout", Split::Heldout)] {
                report.metric(&format!("{name}_samples"), m.count(split) as f64)?;
            }
            report.finish("toy-data", json!({"out": out, "seed": seed}))?;
        }
        Cmd::TrainInteractor(args) => train(cli, &cfg, args, LossMode::Interaction)?,
        Cmd::TrainReaction(args) => train(cli, &cfg, args, LossMode::Reaction)?,
        Cmd::TrainEvaluator {
            data,
            out,
            bank_out,
            epochs,
        } => {
            let mut report = RunReport::create(&report_path(cli, out, false))?;
            let (m, root) = DatasetManifest::load(data)?;
            let embedder = cfg.text.build()?;
            let mut ev = Evaluator::new(cfg.evaluator.clone(), m.normalization.denormalizer(), seed)?;
            let train_set = m.load_split(&root, Split::Train)?;
            let held = m.load_split(&root, Split::Heldout)?;
            if held.is_empty() {
                bail!("dataset has no held-out split to build the bank from");
            }
            let items = prepare_eval_items(&train_set, &ev, embedder.as_ref())?;
            let mut tcfg = cfg.evaluator_train.clone();
            tcfg.held_out = 0;
            tcfg.seed = seed;
            if let Some(e) = epochs {
                tcfg.epochs = *e;
            }
            let rep = train_evaluator(&mut ev, &items, &tcfg)?;
            for (e, l) in rep.epoch_losses.iter().enumerate() {
                report.log(json!({"event": "epoch", "epoch": e, "loss": l}))?;
            }
            let bank = EmbeddingBank {
                embeddings: ev.encode_motions(&held)?,
            };
            save_evaluator(out, &ev)?;
            bank.save(bank_out)?;
            report.metric("final_loss", *rep.epoch_losses.last().unwrap_or(&f64::NAN))?;
            report.metric("bank_size", bank.len() as f64)?;
            report.finish("train-evaluator", json!({"out": out, "bank": bank_out}))?;
        }
        Cmd::Sample {
            model,
            prompt,
            frames,
            condition,
            out,
            sampling,
        } => {
            let mut report = RunReport::create(&report_path(cli, out, false))?;
            let (model, stats) = load_denoiser(model)?;
            let embedder = cfg.text.build()?;
            let schedule = cfg.schedule.build()?;
            let sampler = sampling.apply(&cfg, seed);
            let p = encode(prompt, embedder.as_ref())?;
            let denorm = stats.denormalizer();
            let sample = match condition {
                Some(path) => {
                    let mut agents = load_motion(path)?;
                    if agents.len() != 1 {
                        bail!("{} holds {} agents, expected one", path.display(), agents.len());
                    }
                    let a = agents.remove(0);
                    reaction_sample(&model, a.positions(), &p, &sampler, &schedule, &denorm, cfg.compose.condition, a.fps())?
                }
                None => {
                    let t = frames.context("--frames is required without --condition")?;
                    sample_interaction(&model, &p, t, &sampler, &schedule, &denorm, cfg.toy.fps)?
                }
            };
            save_motion(out, &[&sample.agents[0], &sample.agents[1]])?;
            report.metric("frames", sample.frames() as f64)?;
            report.finish("sample", json!({"out": out, "prompt": prompt, "seed": seed}))?;
        }
        Cmd::Compose {
            reaction,
            length,
            fixtures,
            offline,
            per_theme,
            out,
            sampling,
        } => {
            fs::create_dir_all(out)?;
            let mut report = RunReport::create(&report_path(cli, out, true))?;
            let cc = &cfg.compose;
            if cc.themes.is_empty() || cc.examples.is_empty() {
                bail!("config [compose] needs at least one theme and one example");
            }
            let client = llm_client(*offline, fixtures.as_deref(), &cfg)?;
            let bundles = draft_bundles(client.as_ref(), &cc.themes, &cc.examples, per_theme.unwrap_or(cc.per_theme))?;
            fs::write(out.join("bundles.json"), serde_json::to_string_pretty(&bundles)?)?;
            let (model, stats) = load_denoiser(reaction)?;
            let estimator: LengthEstimator = serde_json::from_str(&fs::read_to_string(length)?)
                .with_context(|| format!("reading {}", length.display()))?;
            let embedder = cfg.text.build()?;
            let schedule = cfg.schedule.build()?;
            let denorm = stats.denormalizer();
            let source = ProceduralSource::default();
            let composer = Composer {
                source: &source,
                model: &model,
                estimator: &estimator,
                embedder: embedder.as_ref(),
                sampler: sampling.apply(&cfg, seed),
                schedule: &schedule,
                denorm: &denorm,
                condition: cc.condition,
            };
            let samples = composer.compose_all(&bundles, seed)?;
            let paired: Vec<_> = samples.into_iter().map(|s| (s, Split::Train)).collect();
            DatasetManifest::write(out, &paired)?;
            report.metric("bundles", bundles.len() as f64)?;
            report.metric("samples", paired.len() as f64)?;
            report.finish("compose", json!({"out": out, "seed": seed}))?;
        }
        Cmd::Filter {
            data,
            evaluator,
            bank,
            out,
            threshold,
            k,
            r_min,
            r_max,
            mode,
        } => {
            fs::create_dir_all(out)?;
            let mut report = RunReport::create(&report_path(cli, out, true))?;
            let mut fc = cfg.filter.clone();
            if let Some(v) = threshold {
                fc.cosine_threshold = *v;
            }
            if let Some(v) = k {
                fc.k_neighbors = *v;
            }
            if let Some(v) = r_min {
                fc.r_min = *v;
            }
            if let Some(v) = r_max {
                fc.r_max = *v;
            }
            if let Some(m) = mode {
                fc.mode = match m.as_str() {
                    "mean-distance" => AnnulusMode::MeanDistance,
                    "bank-neighbors" => AnnulusMode::BankNeighbors,
                    other => bail!("unknown annulus mode {other:?}"),
                };
            }
            fc.validate()?;
            let samples = load_all(data)?;
            let ev = load_evaluator(evaluator)?;
            let bank = EmbeddingBank::load(bank)?;
            let embedder = cfg.text.build()?;
            let scores = compose::semantic_scores(&samples, &ev, embedder.as_ref())?;
            let gen = ev.encode_motions(&samples)?;
            let k_eff = fc.k_neighbors.min(bank.len());
            let dists = compose::mean_knn_distances(&gen, &bank.embeddings, k_eff)?;
            let annulus = compose::knn_annulus_filter(&gen, &bank, &fc)?;
            let kept = compose::combine(&scores, &annulus, fc.cosine_threshold);
            for i in 0..samples.len() {
                report.log(json!({
                    "event": "sample", "index": i, "similarity": scores[i],
                    "mean_knn_distance": dists[i], "annulus": annulus.contains(&i), "kept": kept.contains(&i),
                }))?;
            }
            let filtered: Vec<_> = kept
                .iter()
                .map(|&i| (samples[i].clone().with_provenance(Provenance::SyntheticFiltered), Split::Train))
                .collect();
            if filtered.is_empty() {
                log::warn!("no sample passed both filters");
            } else {
                DatasetManifest::write(out, &filtered)?;
            }
            report.metric("input", samples.len() as f64)?;
            report.metric("semantic_kept", scores.iter().filter(|&&s| s >= fc.cosine_threshold).count() as f64)?;
            report.metric("annulus_kept", annulus.len() as f64)?;
            report.metric("kept", kept.len() as f64)?;
            report.finish("filter", json!({"out": out, "filter": fc}))?;
        }
        Cmd::Evaluate {
            model,
            evaluator,
            data,
            split,
            limit,
            out,
            sampling,
        } => {
            let mut report = RunReport::create(&report_path(cli, out, false))?;
            let (model, stats) = load_denoiser(model)?;
            let ev = load_evaluator(evaluator)?;
            let (m, root) = DatasetManifest::load(data)?;
            let mut reference = m.load_split(&root, parse_split(split)?)?;
            if let Some(n) = limit {
                reference.truncate(*n);
            }
            let embedder = cfg.text.build()?;
            let schedule = cfg.schedule.build()?;
            let metrics = evaluate_generation(
                &model,
                &ev,
                embedder.as_ref(),
                &reference,
                &sampling.apply(&cfg, seed),
                &schedule,
                &stats,
                &cfg.metrics,
                seed,
            )?;
            for (name, v) in metrics.named() {
                report.metric(name, v)?;
            }
            fs::write(out, serde_json::to_string_pretty(&metrics)?)?;
            report.finish("evaluate", json!({"samples": reference.len(), "split": split}))?;
        }
        Cmd::ExportEmbeddings { prompts, out } => {
            let mut report = RunReport::create(&report_path(cli, out, false))?;
            let embedder = cfg.text.build()?;
            let lines = read_prompt_lines(prompts)?;
            let mats = lines
                .iter()
                .map(|l| Ok(encode(l, embedder.as_ref())?.embeddings()?.clone()))
                .collect::<interact_core::Result<Vec<_>>>()?;
            write_embedding_records(out, &mats)?;
            // read back so a malformed write fails here rather than downstream
            let back = read_embedding_records(out)?;
            report.metric("prompts", back.len() as f64)?;
            report.finish("export-embeddings", json!({"out": out, "width": embedder.width()}))?;
        }
        Cmd::StubEmbedder { width, prompts, out } => {
            let embedder = StubEmbedder::new(*width);
            let lines = read_prompt_lines(prompts)?;
            let mats = lines
                .iter()
                .map(|l| Ok(encode(l, &embedder)?.embeddings()?.clone()))
                .collect::<interact_core::Result<Vec<_>>>()?;
            write_embedding_records(out, &mats)?;
        }
    }
    Ok(())
}

fn read_prompt_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn llm_client(offline: bool, fixtures: Option<&Path>, cfg: &RunConfig) -> Result<Box<dyn LlmClient>> {
    if offline {
        let path = fixtures.context("--offline needs --fixtures")?;
        let client = FixtureClient::load(path)?;
        return Ok(Box::new(Limited::new(client, cfg.compose.max_in_flight)?));
    }
    live_client(fixtures, cfg)
}

#[cfg(feature = "http")]
fn live_client(fixtures: Option<&Path>, cfg: &RunConfig) -> Result<Box<dyn LlmClient>> {
    use interact_core::compose::llm::{HttpClient, Recorder};
    let http = HttpClient::from_env(&cfg.compose.llm_model, cfg.compose.max_tokens)?;
    let limited = Limited::new(http, cfg.compose.max_in_flight)?;
    Ok(match fixtures {
        Some(p) => Box::new(Recorder::new(limited, p)),
        None => Box::new(limited),
    })
}

#[cfg(not(feature = "http"))]
fn live_client(_: Option<&Path>, _: &RunConfig) -> Result<Box<dyn LlmClient>> {
    bail!("built without the `http` feature; pass --offline --fixtures <file>")
}

fn train(cli: &Cli, cfg: &RunConfig, args: &TrainArgs, mode: LossMode) -> Result<()> {
    let command = if mode == LossMode::Reaction {
        "train-reaction"
    } else {
        "train-interactor"
    };
    let mut report = RunReport::create(&report_path(cli, &args.out, false))?;
    let seed = cfg.seed;
    let (manifest, root) = DatasetManifest::load(&args.data)?;
    let mut samples = manifest.load_split(&root, Split::Train)?;
    for extra in &args.extra {
        samples.extend(load_all(extra)?);
    }
    let (mut model, stats): (Denoiser, NormStats) = match &args.init {
        Some(p) => load_denoiser(p)?,
        None => {
            if args.fine_tune {
                bail!("--fine-tune needs --init <checkpoint>");
            }
            (Denoiser::new(cfg.model.clone(), seed)?, manifest.normalization.clone())
        }
    };
    if let Some(s) = args.scheme {
        model.set_update_scheme(s);
    }
    let mut tc = cfg.train.clone();
    if let Some(v) = args.steps {
        tc.steps = v;
    }
    if let Some(v) = args.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = args.p_uncond {
        tc.p_uncond = v;
    }
    tc.validate()?;
    let lr = args
        .lr
        .unwrap_or(if args.fine_tune { tc.fine_tune_lr } else { tc.optimizer.lr });
    let embedder = cfg.text.build()?;
    let items = prepare_train_items(&samples, &stats, embedder.as_ref())?;
    let schedule = cfg.schedule.build()?;
    let run = TrainRun {
        config: &tc,
        schedule: &schedule,
        weights: &cfg.loss,
        stats: &stats,
        mode,
        lr,
        seed,
    };
    let real = samples.iter().filter(|s| s.provenance == Provenance::Real).count();
    report.log(json!({"event": "start", "command": command, "samples": samples.len(), "real": real,
        "synthetic": samples.len() - real, "lr": lr, "steps": tc.steps}))?;
    let summary = train_denoiser(&mut model, &items, &run, &mut report)?;
    save_denoiser(&args.out, &model, &stats)?;
    if mode == LossMode::Reaction {
        let mut est = LengthEstimator::new(cfg.compose.min_frames, cfg.compose.max_frames, cfg.compose.length_ridge)?;
        let prompts: Vec<_> = items.iter().map(|it| it.prompt.clone()).collect();
        let frames: Vec<usize> = samples.iter().map(InteractionSample::frames).collect();
        est.fit(&prompts, &frames)?;
        let path = args.length_out.clone().unwrap_or_else(|| sibling(&args.out, ".length.json"));
        fs::write(&path, serde_json::to_string_pretty(&est)?)?;
    }
    report.metric("first_loss", summary.first_loss)?;
    report.metric("final_loss", summary.last_loss)?;
    report.metric("tail_loss", summary.tail_loss)?;
    report.finish(command, json!({"out": args.out, "seed": seed, "summary": summary}))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
