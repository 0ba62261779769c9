//! `addlab` command line: extract, train, eval, inspect, synth.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 runtime failure (non-finite loss, I/O).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use addlab::audio::{decode_wav, fix_duration, resample};
use addlab::checkpoint::{load_checkpoint, save_checkpoint};
use addlab::config::PipelineConfig;
use addlab::data::{feature_file_in, load_dataset, parse_views};
use addlab::dsp::{Extractor, FeatureKind};
use addlab::eval::{compute_eer, score_utterances, write_report};
use addlab::featureio::{load_manifest, write_feature_file, Record, Split};
use addlab::synth::{generate_to_dir, SynthSpec};
use addlab::train::fit;
use addlab::{Error, ErrorClass, Mode, Result, ViewSpec};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser, Debug)]
#[command(name = "addlab", version, about = "Audio deepfake detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute one handcrafted feature for every utterance with audio.
    Extract(ExtractArgs),
    /// Train a detector on manifest features.
    Train(TrainArgs),
    /// Score utterances and report the equal error rate.
    Eval(EvalArgs),
    /// Summarize a checkpoint.
    Inspect(InspectArgs),
    /// Generate a synthetic multi-view dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// mel | mfcc | logspec | lfcc | cqt
    #[arg(long)]
    feature: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: logical CPUs).
    #[arg(long)]
    jobs: Option<usize>,
    /// Where to write the augmented manifest (default: overwrite --manifest).
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated `name=dir` (reads dir/<id>.addf) or `name` (reads the manifest's view.<name>).
    #[arg(long)]
    views: String,
    /// single | concat | select | fuse (default: from the config)
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train log path (default: <out>.log.jsonl).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    views: String,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Which split to score: train | dev | eval.
    #[arg(long, default_value = "eval")]
    split: String,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TOML synthetic spec; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Runtime => 3,
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("ADDLAB_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

/// Path to store in a manifest: relative to its directory when possible.
fn manifest_relative(base: &Path, p: &Path) -> PathBuf {
    let abs = absolute(p);
    let base = absolute(if base.as_os_str().is_empty() { Path::new(".") } else { base });
    abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs)
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()))
}

fn same_dir(a: &Path, b: &Path) -> bool {
    absolute(if a.as_os_str().is_empty() { Path::new(".") } else { a })
        == absolute(if b.as_os_str().is_empty() { Path::new(".") } else { b })
}

fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let kind: FeatureKind = a.feature.parse()?;
    let mut manifest = load_manifest(&a.manifest)?;
    let frame = cfg.framing.frame_config(cfg.audio.sample_rate)?;
    let extractor = Extractor::new(kind, cfg.audio.sample_rate, &frame, &cfg.features)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let one = |r: &Record| -> Result<PathBuf> {
        let audio = r
            .audio
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("{} has no audio path", r.id)))?;
        let path = manifest.resolve(audio);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let clip = decode_wav(&bytes)?;
        let clip = fix_duration(&resample(&clip, cfg.audio.sample_rate)?, cfg.audio.duration_s)?;
        let feat = extractor.extract(&clip)?;
        let out = feature_file_in(&a.out_dir, &r.id);
        write_feature_file(&feat, &out)?;
        Ok(out)
    };
    let jobs = a.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<Result<PathBuf>> = pool.install(|| manifest.records.par_iter().map(one).collect());

    let out_manifest = a.manifest_out.unwrap_or_else(|| a.manifest.clone());
    let out_base = out_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = out_base.clone();
    if !same_dir(&manifest.base_dir, &out_base) {
        // paths stay valid from the new location
        for i in 0..manifest.records.len() {
            let rec = &manifest.records[i];
            let audio = rec.audio.as_ref().map(|p| absolute(&manifest.resolve(p)));
            let feats: Vec<(String, PathBuf)> =
                rec.features.iter().map(|(k, p)| (k.clone(), absolute(&manifest.resolve(p)))).collect();
            let rec = &mut manifest.records[i];
            rec.audio = audio;
            rec.features = feats.into_iter().collect();
        }
    }
    manifest.base_dir = out_base;
    let mut failed = Vec::new();
    for (rec, res) in manifest.records.iter_mut().zip(results) {
        match res {
            Ok(p) => {
                rec.features.insert(kind.name().to_owned(), manifest_relative(&base, &p));
            }
            Err(e) => failed.push((rec.id.clone(), e)),
        }
    }
    manifest.save(&out_manifest)?;
    log::info!(
        "extracted {} for {} utterances into {}",
        kind,
        manifest.records.len() - failed.len(),
        a.out_dir.display()
    );
    if !failed.is_empty() {
        return Err(addlab::data::collect_failures(&failed));
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = &a.mode {
        cfg.model.mode = m.parse::<Mode>()?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let views = parse_views(&a.views)?;
    let manifest = load_manifest(&a.manifest)?;
    let train_recs = manifest.split(Split::Train);
    if train_recs.is_empty() {
        return Err(Error::Validation("manifest has no train split".into()));
    }
    let all = load_dataset(&manifest, &train_recs, &views)?;
    let dev_recs = manifest.split(Split::Dev);
    let (train_set, val_set) = if dev_recs.is_empty() {
        all.split_tail(cfg.train.val_fraction)?
    } else {
        (all, load_dataset(&manifest, &dev_recs, &views)?)
    };
    let specs: Vec<ViewSpec> = views
        .iter()
        .zip(train_set.view_shapes())
        .map(|((name, _), (_, dim))| ViewSpec { name: name.clone(), dim })
        .collect();
    let model = cfg.model.with_views(specs);
    log::info!(
        "training {} on {} samples ({} validation), views {:?}",
        model.mode,
        train_set.len(),
        val_set.len(),
        model.view_names()
    );
    let mut out = fit(&model, &train_set, &val_set, &cfg.train)?;
    out.log.header["pipeline"] =
        serde_json::to_value(&cfg).map_err(|e| Error::Config(format!("cannot record config: {e}")))?;
    save_checkpoint(&out.checkpoint, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    out.log.save(&log_path)?;
    println!(
        "saved {} (epoch {}, val loss {:.6})",
        a.out.display(),
        out.checkpoint.epoch,
        out.checkpoint.val_loss
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let views = parse_views(&a.views)?;
    let manifest = load_manifest(&a.manifest)?;
    let split: Split = a.split.parse()?;
    let recs = manifest.split(split);
    if recs.is_empty() {
        return Err(Error::Validation(format!("manifest has no {split} records")));
    }
    let scores = score_utterances(&ckpt, &manifest, &recs, &views)?;
    scores.write_tsv(&a.scores)?;
    let eer = compute_eer(&scores)?;
    write_report(&eer, &a.report)?;
    println!("eer={}  threshold={}  n_genuine={} n_spoof={}", eer.eer, eer.threshold, eer.n_genuine, eer.n_spoof);
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let views: Vec<String> = ck.model.views.iter().map(|v| format!("{}(D={})", v.name, v.dim)).collect();
    println!("mode: {}", ck.model.mode);
    println!("views: {}", views.join(", "));
    println!("parameters: {} tensors, {} values", ck.params.len(), ck.params.num_scalars());
    println!("epoch: {}", ck.epoch);
    println!("best val loss: {}", ck.val_loss);
    println!(
        "train: lr={} weight_decay={} epochs={} batch_size={} seed={}",
        ck.train.lr, ck.train.weight_decay, ck.train.epochs, ck.train.batch_size, ck.train.seed
    );
    let c = &ck.model.classifier;
    println!("classifier: stages {:?}, base channels {}", c.stage_blocks, c.base_channels);
    match ck.model.mode {
        Mode::Select => {
            let s = &ck.model.selection;
            println!("selection: attn_dim {}, {} layer(s), {} heads", s.attn_dim, s.n_layers, s.n_heads);
        }
        Mode::Fuse => {
            let f = &ck.model.fusion;
            println!("fusion: proj_dim {}, {} encoder layer(s), {} heads", f.proj_dim, f.te_layers, f.te_heads);
        }
        Mode::Single | Mode::Concat => {}
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SynthSpec::from_toml(&text)?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let path = generate_to_dir(&spec, &a.out_dir)?;
    println!("wrote {}", path.display());
    Ok(())
}
