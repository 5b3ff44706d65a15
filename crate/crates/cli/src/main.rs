//! `exo2ego`: toy data, flow extraction, synthesis and retrieval training,
//! evaluation, probes and plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exo2ego_core::checkpoint::{Checkpoint, Start};
use exo2ego_core::data::{ExoKind, Frame, Manifest, Split, View};
use exo2ego_core::dataset::{write_flows, InputSet, InputSpec, Variant};
use exo2ego_core::metrics::{
    cmc, inception_score, psnr, sharpness_difference, ssim, ColorOctantClassifier, CmcCurve,
};
use exo2ego_core::probes::{synthesized_retrieval_test, view_invariance_test};
use exo2ego_core::retrieval::{
    build_gallery, rank_all, synthesized_path, train as train_retrieval, EmbeddingModel, Gallery,
    GallerySource, NegativeSource, RankingResult,
};
use exo2ego_core::synthesis::{generate_split, train as train_synthesis, PairSet, SynthesisModel};
use exo2ego_core::toygen::{generate_dataset, Style};
use exo2ego_core::{Error, Result};
use serde_json::json;

use exo2ego_cli::config::RunConfig;
use exo2ego_cli::log::{Level, Logger};
use exo2ego_cli::plot;

#[derive(Debug, Parser)]
#[command(name = "exo2ego", version, about = "Exocentric-to-egocentric synthesis and cross-view retrieval")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (logs, config echo, artifacts).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Level::Info)]
    log_level: Level,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a paired toy dataset.
    Toygen(ToygenArgs),
    /// Estimate, smooth and store optical flow for both views.
    Flow(FlowArgs),
    /// Train the exo-to-ego generator or synthesize frames
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train the cross-view embedding, build galleries, rank queries
    #[command(subcommand)]
    Retr(RetrCommand),
    /// Score retrieval rankings or synthesized frames
    #[command(subcommand)]
    Eval(EvalCommand),
    /// View-invariance and synthesized-retrieval probes
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Merge CSV series into one CSV and a PNG line plot.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ToygenArgs {
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    seqs: Option<usize>,
    #[arg(long)]
    len: Option<usize>,
    /// Rendered frame side, pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_parser = parse_style)]
    style: Option<Style>,
    #[arg(long, value_parser = parse_exo)]
    exo: Option<ExoKind>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

#[derive(Debug, Args)]
struct FlowArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Splits to process; all when absent.
    #[arg(long, value_parser = parse_split)]
    split: Vec<Split>,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Train the conditional generator and discriminator.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_pairs: Option<usize>,
        /// Continue from a synthesis checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write a synthesized ego frame for every exo frame of a split.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug, Subcommand)]
enum RetrCommand {
    /// Train the two-stream embedding network.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_variant, default_value = "rgb")]
        variant: Variant,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_parser = parse_negatives)]
        negatives: Option<NegativeSource>,
        /// Initialize from a retrieval checkpoint.
        #[arg(long, conflicts_with = "resume")]
        pretrained: Option<PathBuf>,
        /// Freeze the embedding heads (requires --pretrained or --resume).
        #[arg(long)]
        adapt: bool,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Precomputed flow directory written by `flow`.
        #[arg(long)]
        flow_dir: Option<PathBuf>,
    },
    /// Embed one view of a split into an EEMB gallery file.
    Gallery {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_view, default_value = "ego")]
        view: ViewArg,
        /// Embed synthesized ego frames from this directory instead.
        #[arg(long)]
        synthesized: Option<PathBuf>,
        #[arg(long)]
        flow_dir: Option<PathBuf>,
    },
    /// Rank every query embedding against a gallery.
    Query {
        #[command(flatten)]
        files: RankArgs,
        /// Gallery ids listed per query.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

#[derive(Debug, Args)]
struct RankArgs {
    /// EEMB file of query embeddings.
    #[arg(long)]
    queries: PathBuf,
    /// EEMB file of gallery embeddings.
    #[arg(long)]
    gallery: PathBuf,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Inception score, SSIM, PSNR and sharpness difference of generated frames.
    Synth {
        #[command(flatten)]
        data: DataArgs,
        /// Directory of generated frames (`<seq>/%06d.png`).
        #[arg(long)]
        generated: PathBuf,
        /// Top-k smoothing levels for the inception score.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5])]
        topk: Vec<usize>,
    },
    /// CMC curve and AUC of query embeddings against a gallery.
    Retr {
        #[command(flatten)]
        files: RankArgs,
    },
}

#[derive(Debug, Subcommand)]
enum ProbeCommand {
    /// Linear action probes on ego, exo and pooled embeddings.
    Invariance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Replace labels with seeded uniform draws (null calibration).
        #[arg(long)]
        random_labels: Option<u64>,
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        flow_dir: Option<PathBuf>,
    },
    /// Retrieve synthesized ego frames against exo and true ego galleries.
    SynthRetrieval {
        #[arg(long)]
        synth_checkpoint: PathBuf,
        #[arg(long)]
        retr_checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Input CSV files; the first column is x.
    #[arg(long, required = true, num_args = 1..)]
    csv: Vec<PathBuf>,
    /// Output file stem.
    #[arg(long, default_value = "plot")]
    name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ViewArg {
    Ego,
    Exo,
}

fn parse_with<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    parse_with(s)
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    parse_with(s)
}

fn parse_style(s: &str) -> std::result::Result<Style, String> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Ok(Style::A),
        "b" => Ok(Style::B),
        _ => Err(format!("unknown style {s:?} (expected a or b)")),
    }
}

fn parse_exo(s: &str) -> std::result::Result<ExoKind, String> {
    match s {
        "side" => Ok(ExoKind::Side),
        "top" => Ok(ExoKind::Top),
        _ => Err(format!("unknown exo view {s:?} (expected side or top)")),
    }
}

fn parse_view(s: &str) -> std::result::Result<ViewArg, String> {
    match s {
        "ego" => Ok(ViewArg::Ego),
        "exo" => Ok(ViewArg::Exo),
        _ => Err(format!("unknown view {s:?} (expected ego or exo)")),
    }
}

fn parse_negatives(s: &str) -> std::result::Result<NegativeSource, String> {
    match s {
        "within" => Ok(NegativeSource::Within),
        "cross" => Ok(NegativeSource::Cross),
        "mixed" => Ok(NegativeSource::Mixed),
        _ => Err(format!("unknown negative source {s:?} (expected within, cross or mixed)")),
    }
}

struct Ctx {
    cfg: RunConfig,
    log: Logger,
}

impl Ctx {
    fn out(&self, name: impl AsRef<Path>) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.out(name);
        std::fs::write(&p, text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    fn write_json(&self, name: &str, v: &serde_json::Value) -> Result<PathBuf> {
        self.write(name, &serde_json::to_string_pretty(v).expect("json serializes"))
    }

    fn spec_for(&self, model: &EmbeddingModel, flow_dir: Option<PathBuf>) -> InputSpec {
        let mut spec = self.cfg.inputs.clone();
        spec.size = model.config.input_size;
        if flow_dir.is_some() {
            spec.flow_dir = flow_dir;
        }
        spec
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Toygen(_) => "toygen",
        Command::Flow(_) => "flow",
        Command::Synth(_) => "synth",
        Command::Retr(_) => "retr",
        Command::Eval(_) => "eval",
        Command::Probe(_) => "probe",
        Command::Plot(_) => "plot",
    }
}

fn setup(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.global.seed.unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    if let Some(out) = &cli.global.out {
        cfg.out = out.clone();
    }
    if cfg.out.as_os_str().is_empty() {
        cfg.out = PathBuf::from("out");
    }
    if cli.global.workers.is_some() {
        cfg.workers = cli.global.workers;
    }
    if cfg.experiment.is_empty() {
        cfg.experiment = command_name(&cli.command).to_string();
    }
    if let Some(n) = cfg.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        // Fails only if a pool already exists, which never happens here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Config(format!("{}: {e}", cfg.out.display())))?;
    let log = Logger::new(cli.global.log_level);
    log.open(&cfg.out)
        .map_err(|e| Error::Config(format!("{}: {e}", cfg.out.display())))?;
    Ok(Ctx { cfg, log })
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    m.validate()?;
    Ok(m)
}

fn variant_of(model: &EmbeddingModel) -> Variant {
    if model.config.input_channels == Variant::Rgb.channels() {
        Variant::Rgb
    } else {
        Variant::Flow
    }
}

fn curve_json(c: &CmcCurve) -> serde_json::Value {
    let at = |k: usize| if k <= c.gallery_size { Some(c.at(k)) } else { None };
    json!({ "gallery_size": c.gallery_size, "auc": c.auc, "top1": at(1), "top5": at(5), "top10": at(10) })
}

fn rank_files(files: &RankArgs) -> Result<Vec<RankingResult>> {
    let q = Gallery::load(&files.queries)?;
    let g = Gallery::load(&files.gallery)?;
    rank_all(&q, &g)
}

fn run(cli: Cli) -> Result<()> {
    let mut ctx = setup(&cli)?;
    ctx.log.info("start", json!({ "command": command_name(&cli.command), "seed": ctx.cfg.seed }));
    match cli.command {
        Command::Toygen(a) => {
            let t = &mut ctx.cfg.toygen;
            t.scenes = a.scenes.unwrap_or(t.scenes);
            t.seqs = a.seqs.unwrap_or(t.seqs);
            t.len = a.len.unwrap_or(t.len);
            t.rig.size = a.size.unwrap_or(t.rig.size);
            t.style = a.style.unwrap_or(t.style);
            t.exo_kind = a.exo.unwrap_or(t.exo_kind);
            ctx.cfg.write_echo()?;
            let m = generate_dataset(&ctx.cfg.toygen, &ctx.cfg.out)?;
            let pairs: usize = Split::ALL.iter().map(|&s| m.iterate_aligned_pairs(s, m.exo_kind).count()).sum();
            ctx.log.info(
                "toygen",
                json!({ "sequences": m.sequences.len(), "aligned_pairs": pairs, "counts": m.counts }),
            );
        }
        Command::Flow(a) => {
            ctx.cfg.write_echo()?;
            let m = load_manifest(&a.manifest)?;
            let splits = if a.split.is_empty() { Split::ALL.to_vec() } else { a.split };
            let dir = ctx.out("flow");
            for split in splits {
                let n = write_flows(&m, split, &ctx.cfg.inputs.estimator, ctx.cfg.inputs.sigma, &dir)?;
                ctx.log.info("flow", json!({ "split": split.as_str(), "fields": n, "dir": dir }));
            }
        }
        Command::Synth(SynthCommand::Train {
            data,
            epochs,
            max_pairs,
            resume,
        }) => {
            let s = &mut ctx.cfg.synthesis;
            s.epochs = epochs.unwrap_or(s.epochs);
            s.max_pairs = max_pairs.or(s.max_pairs);
            s.checkpoint_dir = Some(ctx.cfg.out.join("checkpoints"));
            ctx.cfg.write_echo()?;
            let cfg = &ctx.cfg.synthesis;
            let m = load_manifest(&data.manifest)?;
            let split = data.split.unwrap_or(Split::Train);
            let pairs = PairSet::load(&m, split, cfg.generator.image_size, cfg.max_pairs)?;
            ctx.log.info("synth_data", json!({ "split": split.as_str(), "pairs": pairs.len() }));
            let ckpt = resume.as_deref().map(Checkpoint::load).transpose()?;
            let start = ckpt.as_ref().map_or(Start::Scratch, Start::Resume);
            let mut csv = String::from("epoch,loss_d,loss_g_adv,l1\n");
            let log = &ctx.log;
            let out = train_synthesis(&pairs, cfg, start, &mut |l| {
                csv.push_str(&format!("{},{},{},{}\n", l.epoch, l.loss_d, l.loss_g_adv, l.l1));
                log.info("synth_epoch", serde_json::to_value(l).expect("log serializes"));
            })?;
            ctx.write("synth_train.csv", &csv)?;
            ctx.log.info("synth_done", json!({ "epochs": out.epochs, "steps": out.steps }));
        }
        Command::Synth(SynthCommand::Generate { checkpoint, data }) => {
            ctx.cfg.write_echo()?;
            let model = SynthesisModel::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let m = load_manifest(&data.manifest)?;
            let split = data.split.unwrap_or(Split::Test);
            let dir = ctx.out("generated");
            let n = generate_split(&model, &m, split, &dir)?;
            ctx.log.info("generated", json!({ "split": split.as_str(), "frames": n, "dir": dir }));
        }
        Command::Retr(RetrCommand::Train {
            data,
            variant,
            epochs,
            negatives,
            pretrained,
            adapt,
            resume,
            flow_dir,
        }) => {
            let r = &mut ctx.cfg.retrieval;
            r.epochs = epochs.unwrap_or(r.epochs);
            r.negatives = negatives.unwrap_or(r.negatives);
            r.model.input_channels = variant.channels();
            r.checkpoint_dir = Some(ctx.cfg.out.join("checkpoints"));
            ctx.cfg.inputs.size = r.model.input_size;
            if flow_dir.is_some() {
                ctx.cfg.inputs.flow_dir = flow_dir;
            }
            ctx.cfg.write_echo()?;
            let cfg = &ctx.cfg.retrieval;
            let m = load_manifest(&data.manifest)?;
            let split = data.split.unwrap_or(Split::Train);
            let train_set = InputSet::load(&m, split, variant, &ctx.cfg.inputs)?;
            let val_set = InputSet::load(&m, Split::Val, variant, &ctx.cfg.inputs)?;
            ctx.log.info(
                "retr_data",
                json!({ "train_items": train_set.num_items(), "val_items": val_set.num_items() }),
            );
            let ckpt = match (&pretrained, &resume) {
                (Some(p), _) | (None, Some(p)) => Some(Checkpoint::load(p)?),
                (None, None) => None,
            };
            let start = match (&ckpt, resume.is_some()) {
                (Some(c), true) => Start::Resume(c),
                (Some(c), false) => Start::Pretrained(c),
                (None, _) => Start::Scratch,
            };
            let mut csv = String::from("epoch,mean_loss,val_auc\n");
            let log = &ctx.log;
            let out = train_retrieval(&train_set, Some(&val_set), cfg, start, adapt, &mut |l| {
                let auc = l.val_auc.map(|v| v.to_string()).unwrap_or_default();
                csv.push_str(&format!("{},{},{auc}\n", l.epoch, l.mean_loss));
                log.info("retr_epoch", serde_json::to_value(l).expect("log serializes"));
            })?;
            ctx.write("retr_train.csv", &csv)?;
            ctx.log.info("retr_done", json!({ "epochs": out.epochs, "steps": out.steps }));
        }
        Command::Retr(RetrCommand::Gallery {
            checkpoint,
            data,
            view,
            synthesized,
            flow_dir,
        }) => {
            ctx.cfg.write_echo()?;
            let model = EmbeddingModel::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let m = load_manifest(&data.manifest)?;
            let split = data.split.unwrap_or(Split::Test);
            let spec = ctx.spec_for(&model, flow_dir);
            let (v, tag) = match view {
                ViewArg::Ego => (View::Ego, "ego"),
                ViewArg::Exo => (View::exo(m.exo_kind), "exo"),
            };
            let source = match synthesized {
                Some(d) => GallerySource::Synthesized(d),
                None => GallerySource::GroundTruth,
            };
            let tag = if matches!(source, GallerySource::Synthesized(_)) { "synthesized" } else { tag };
            let g = build_gallery(&model, &m, split, v, variant_of(&model), &spec, &source)?;
            let path = ctx.out(format!("{}_{tag}.eemb", split.as_str()));
            g.save(&path)?;
            ctx.log.info("gallery", json!({ "entries": g.len(), "dim": g.dim(), "path": path }));
        }
        Command::Retr(RetrCommand::Query { files, top }) => {
            ctx.cfg.write_echo()?;
            let results = rank_files(&files)?;
            let mut csv = String::from("query,rank_of_truth");
            for k in 1..=top {
                csv.push_str(&format!(",top{k}"));
            }
            csv.push('\n');
            for r in &results {
                csv.push_str(&format!("{},{}", r.query, r.rank_of_truth));
                for id in r.ranked.iter().take(top) {
                    csv.push_str(&format!(",{id}"));
                }
                csv.push('\n');
            }
            let path = ctx.write("rankings.csv", &csv)?;
            ctx.log.info("query", json!({ "queries": results.len(), "path": path }));
        }
        Command::Eval(EvalCommand::Retr { files }) => {
            ctx.cfg.write_echo()?;
            let curve = cmc(&rank_files(&files)?)?;
            ctx.write("cmc.csv", &curve.to_csv())?;
            let summary = curve_json(&curve);
            ctx.write_json("eval_retr.json", &summary)?;
            ctx.log.info("eval_retr", summary);
        }
        Command::Eval(EvalCommand::Synth { data, generated, topk }) => {
            ctx.cfg.write_echo()?;
            let m = load_manifest(&data.manifest)?;
            let split = data.split.unwrap_or(Split::Test);
            let mcfg = &ctx.cfg.metrics;
            let (mut fakes, mut reals) = (Vec::new(), Vec::new());
            let (mut ssim_sum, mut psnr_sum, mut sd_sum) = (0.0, 0.0, 0.0);
            for p in m.iterate_aligned_pairs(split, m.exo_kind) {
                let s = &m.sequences[p.sequence];
                let fake = Frame::load_png(&synthesized_path(&generated, &s.id, p.ego.time_index))?;
                let real =
                    Frame::load_png(&m.frame_path(s, View::Ego, p.ego.time_index))?.resize(fake.height(), fake.width());
                ssim_sum += ssim(&real, &fake, mcfg)?;
                psnr_sum += psnr(&real, &fake, mcfg)?;
                sd_sum += sharpness_difference(&real, &fake, mcfg)?;
                fakes.push(fake);
                reals.push(real);
            }
            if fakes.is_empty() {
                return Err(Error::DataEmpty(format!("split {} has no aligned pairs", split.as_str())));
            }
            let n = fakes.len() as f64;
            let clf = ColorOctantClassifier;
            let mut csv = String::from("images,is,");
            csv.push_str(&topk.iter().map(|k| format!("is_top{k}")).collect::<Vec<_>>().join(","));
            csv.push('\n');
            let mut scores = serde_json::Map::new();
            for (name, frames) in [("generated", &fakes), ("real", &reals)] {
                let mut row = vec![inception_score(frames, &clf, None)?];
                for &k in &topk {
                    row.push(inception_score(frames, &clf, Some(k))?);
                }
                csv.push_str(name);
                for v in &row {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
                scores.insert(name.into(), json!(row));
            }
            ctx.write("inception.csv", &csv)?;
            let summary = json!({
                "pairs": fakes.len(),
                "ssim": ssim_sum / n,
                "psnr": psnr_sum / n,
                "sharpness_difference": sd_sum / n,
                "topk": topk,
                "inception": scores,
            });
            ctx.write_json("eval_synth.json", &summary)?;
            ctx.log.info("eval_synth", summary);
        }
        Command::Probe(ProbeCommand::Invariance {
            checkpoint,
            manifest,
            random_labels,
            standardize,
            flow_dir,
        }) => {
            if random_labels.is_some() {
                ctx.cfg.probe.random_labels = random_labels;
            }
            ctx.cfg.probe.standardize |= standardize;
            ctx.cfg.write_echo()?;
            let model = EmbeddingModel::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let m = load_manifest(&manifest)?;
            let spec = ctx.spec_for(&model, flow_dir);
            let r = view_invariance_test(&model, &m, variant_of(&model), &spec, &ctx.cfg.probe)?;
            ctx.write("probe.csv", &r.to_csv())?;
            let v = serde_json::to_value(&r).expect("report serializes");
            ctx.write_json("probe.json", &v)?;
            ctx.log.info("probe", v);
        }
        Command::Probe(ProbeCommand::SynthRetrieval {
            synth_checkpoint,
            retr_checkpoint,
            data,
        }) => {
            ctx.cfg.write_echo()?;
            let synth = SynthesisModel::from_checkpoint(&Checkpoint::load(&synth_checkpoint)?)?;
            let model = EmbeddingModel::from_checkpoint(&Checkpoint::load(&retr_checkpoint)?)?;
            let m = load_manifest(&data.manifest)?;
            let split = data.split.unwrap_or(Split::Test);
            let spec = ctx.spec_for(&model, None);
            let r = synthesized_retrieval_test(&synth, &model, &m, split, &spec)?;
            ctx.write("cmc_vs_exo.csv", &r.vs_exo.to_csv())?;
            ctx.write("cmc_vs_ego.csv", &r.vs_ego.to_csv())?;
            r.synthesized.save(&ctx.out(format!("{}_synthesized.eemb", split.as_str())))?;
            let summary = json!({ "vs_exo": curve_json(&r.vs_exo), "vs_ego": curve_json(&r.vs_ego) });
            ctx.write_json("synth_retrieval.json", &summary)?;
            ctx.log.info("synth_retrieval", summary);
        }
        Command::Plot(a) => {
            ctx.cfg.write_echo()?;
            let mut series = Vec::new();
            for p in &a.csv {
                series.extend(plot::read_csv(p)?);
            }
            let png = ctx.out(format!("{}.png", a.name));
            plot::write(&series, &png, &ctx.out(format!("{}.csv", a.name)))?;
            ctx.log.info("plot", json!({ "series": series.len(), "png": png }));
        }
    }
    ctx.log.info("done", json!({}));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
