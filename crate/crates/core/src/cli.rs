use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cytosynth::cgan::{train_cgan, CganCheckpoint};
use cytosynth::checkpoint;
use cytosynth::classify::{
    assemble_condition, audit_leakage, synthesize_gan_baseline, train_cell, train_gan_baseline, write_gan_baseline,
    AblationReport, AccuracyTable, Condition, GanBaselineCheckpoint, ImageBank, Ingredient, TableMeta,
};
use cytosynth::config::RunConfig;
use cytosynth::data::{
    cap_per_class, generate_toy_corpus, list_pngs, load_corpus, load_masks, split_corpus, write_corpus, write_masks,
    LabeledImage, SplitManifest, Subset,
};
use cytosynth::imaging::{extract_mask, load_mask_png, load_rgb_png, BinaryMask, ExtractParams};
use cytosynth::maskgan::{train_maskgan, LabeledMask, MaskGanCheckpoint};
use cytosynth::report::{emit_report, ReportInputs};
use cytosynth::synthesis::{n_per_class_for_ratio, synthesize_dataset, write_synthetic, SynthManifest};
use cytosynth::ClassLabel;

/// Mask-conditioned synthetic data augmentation for two-class cytology images.
#[derive(Debug, Parser)]
#[command(name = "cytosynth", version)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory relative paths are resolved against; overrides the config
    /// and the CYTOSYNTH_OUTPUT_ROOT environment variable.
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    /// Replace existing artifacts instead of refusing.
    #[arg(long, global = true)]
    overwrite: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the procedural toy corpus with its ground-truth masks.
    MakeToyCorpus(MakeToyArgs),
    /// Stratified train/val/test split of a corpus.
    Split(SplitArgs),
    /// Unsupervised nuclei masks for every corpus image.
    ExtractMasks(ExtractArgs),
    /// Train the mask-to-image generator.
    TrainCgan(TrainCganArgs),
    /// Train the mask generator of one class.
    TrainMaskgan(TrainMaskganArgs),
    /// Train unconditioned image GANs per class and write their samples.
    TrainGanBaseline(GanBaselineArgs),
    /// Compose mask and image generators into a labelled synthetic set.
    Synthesize(SynthesizeArgs),
    /// Train classifiers under each augmentation condition.
    Ablate(AblateArgs),
    /// Accuracy tables, image grids and loss curves.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct MakeToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    root: PathBuf,
    /// Defaults to the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cap_per_class: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainCganArgs {
    /// Corpus root; defaults to the root recorded in the split manifest.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    masks: PathBuf,
    /// Split manifest; its train ids are trained on, its val ids pick the checkpoint.
    #[arg(long)]
    val_split: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainMaskganArgs {
    #[arg(long)]
    masks: PathBuf,
    #[arg(long = "class")]
    class: ClassLabel,
    /// Restrict training to the train ids of this split manifest.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GanBaselineArgs {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    split: PathBuf,
    /// Synthetic images per original training image; defaults to the config.
    #[arg(long)]
    ratio: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[arg(long)]
    cgan: PathBuf,
    #[arg(long)]
    maskgan_benign: PathBuf,
    #[arg(long)]
    maskgan_malignant: PathBuf,
    #[arg(long)]
    ratio: Option<usize>,
    #[arg(long)]
    train_manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    split: PathBuf,
    /// Corpus root; defaults to the root recorded in the split manifest.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long)]
    gan_baseline: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "small-cnn")]
    archs: Vec<String>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "orig,orig+prop,orig+trad,orig+trad+prop,orig+gan"
    )]
    conditions: Vec<String>,
    /// CSV path; `.json` and `.txt` companions are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv`, runs one stage and returns the process exit status:
/// 0 on success, 1 on stage failure, 2 on usage errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let stage = stage_name(&cli.command);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{stage}]: {e:#}");
            1
        }
    }
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::MakeToyCorpus(_) => "make-toy-corpus",
        Command::Split(_) => "split",
        Command::ExtractMasks(_) => "extract-masks",
        Command::TrainCgan(_) => "train-cgan",
        Command::TrainMaskgan(_) => "train-maskgan",
        Command::TrainGanBaseline(_) => "train-gan-baseline",
        Command::Synthesize(_) => "synthesize",
        Command::Ablate(_) => "ablate",
        Command::Report(_) => "report",
    }
}

struct Ctx {
    cfg: RunConfig,
    root: PathBuf,
    overwrite: bool,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn digest(&self) -> String {
        self.cfg.digest()
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        root: cli.output_root.unwrap_or_else(|| cfg.output_root()),
        cfg,
        overwrite: cli.overwrite,
    };
    match cli.command {
        Command::MakeToyCorpus(a) => make_toy(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::ExtractMasks(a) => extract(&ctx, a),
        Command::TrainCgan(a) => train_cgan_cmd(&ctx, a),
        Command::TrainMaskgan(a) => train_maskgan_cmd(&ctx, a),
        Command::TrainGanBaseline(a) => gan_baseline(&ctx, a),
        Command::Synthesize(a) => synthesize(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

/// Per-file digests of a generated directory plus the parameters behind it.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilesManifest<P> {
    kind: String,
    config_digest: String,
    params: P,
    files: BTreeMap<String, String>,
}

const TOY_MANIFEST: &str = "toy_manifest.json";
const MASKS_MANIFEST: &str = "masks_manifest.json";
const GROUND_TRUTH_DIR: &str = "ground_truth";

fn make_toy(ctx: &Ctx, a: MakeToyArgs) -> Result<()> {
    let out = ctx.path(&a.out);
    let mpath = out.join(TOY_MANIFEST);
    checkpoint::check_writable(&mpath, ctx.overwrite)?;
    for label in ClassLabel::ALL {
        let d = out.join(label.as_str());
        if !ctx.overwrite && d.is_dir() && !list_pngs(&d)?.is_empty() {
            bail!(
                "{} already holds images (pass --overwrite to replace them)",
                d.display()
            );
        }
    }
    let mut toy = ctx.cfg.data.toy.clone();
    if let Some(n) = a.n_per_class {
        toy.n_per_class = n;
    }
    if let Some(s) = a.image_size {
        toy.image_size = s;
    }
    let (images, masks) = generate_toy_corpus(&toy)?;
    write_corpus(&out, &images)?;
    let gt = out.join(GROUND_TRUTH_DIR);
    write_masks(&gt, images.iter().map(|i| i.id.as_str()).zip(&masks))?;
    let mut files = BTreeMap::new();
    for li in &images {
        files.insert(li.id.clone(), checkpoint::file_digest(&out.join(&li.id))?);
        let m = format!("{GROUND_TRUTH_DIR}/{}", li.id);
        files.insert(m.clone(), checkpoint::file_digest(&out.join(&m))?);
    }
    checkpoint::write_json(
        &mpath,
        &FilesManifest {
            kind: "toy-corpus".into(),
            config_digest: ctx.digest(),
            params: toy,
            files,
        },
    )?;
    println!("wrote {} images to {}", images.len(), out.display());
    Ok(())
}

fn split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let root = ctx.path(&a.root);
    let out = ctx.path(&a.out);
    checkpoint::check_writable(&out, ctx.overwrite)?;
    let mut corpus = load_corpus(&root)?;
    if let Some(cap) = a.cap_per_class.or(ctx.cfg.data.cap_per_class) {
        corpus = cap_per_class(corpus, cap);
    }
    let mut m = split_corpus(&corpus, ctx.cfg.data.ratio, a.seed.unwrap_or(ctx.cfg.seed))?;
    m.root = Some(root);
    m.config_digest = Some(ctx.digest());
    m.save(&out)?;
    for (label, c) in &m.counts {
        println!("{label}: train {} val {} test {}", c.train, c.val, c.test);
    }
    Ok(())
}

fn extract(ctx: &Ctx, a: ExtractArgs) -> Result<()> {
    let input = ctx.path(&a.input);
    let out = ctx.path(&a.out);
    let mpath = out.join(MASKS_MANIFEST);
    checkpoint::check_writable(&mpath, ctx.overwrite)?;
    let mut params: ExtractParams = ctx.cfg.imaging.clone();
    if let Some(w) = a.window {
        params.window = w;
    }
    if let Some(o) = a.offset {
        params.offset = o;
    }
    if let Some(k) = a.k {
        params.k = k;
    }
    if let Some(s) = a.seed {
        params.seed = s;
    }
    params.validate()?;
    let corpus = load_corpus(&input)?;
    let mut files = BTreeMap::new();
    for li in &corpus {
        let m = extract_mask(&li.image, &params).with_context(|| li.id.clone())?;
        write_masks(&out, [(li.id.as_str(), &m)])?;
        files.insert(li.id.clone(), checkpoint::file_digest(&out.join(&li.id))?);
    }
    checkpoint::write_json(
        &mpath,
        &FilesManifest {
            kind: "masks".into(),
            config_digest: ctx.digest(),
            params,
            files,
        },
    )?;
    println!("wrote {} masks to {}", corpus.len(), out.display());
    Ok(())
}

fn corpus_root(ctx: &Ctx, explicit: Option<&PathBuf>, split: &SplitManifest) -> Result<PathBuf> {
    match (explicit, &split.root) {
        (Some(p), _) => Ok(ctx.path(p)),
        (None, Some(r)) => Ok(r.clone()),
        (None, None) => bail!("split manifest records no corpus root; pass it explicitly"),
    }
}

fn pairs(root: &Path, masks: &Path, ids: &[String]) -> Result<Vec<(BinaryMask, cytosynth::imaging::RgbImage)>> {
    let mut out = Vec::with_capacity(ids.len());
    let mut problems = Vec::new();
    for id in ids {
        match (load_mask_png(&masks.join(id)), load_rgb_png(&root.join(id))) {
            (Ok(m), Ok(i)) => out.push((m, i)),
            (m, i) => problems.extend(m.err().into_iter().chain(i.err()).map(|e| e.to_string())),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(cytosynth::Error::Load(problems).into())
    }
}

fn write_loss_csv<T: Serialize>(path: &Path, rows: &[T], overwrite: bool) -> Result<()> {
    checkpoint::check_writable(path, overwrite)?;
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn loss_csv_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn train_cgan_cmd(ctx: &Ctx, a: TrainCganArgs) -> Result<()> {
    let split = SplitManifest::load(&ctx.path(&a.val_split))?;
    let root = corpus_root(ctx, a.images.as_ref(), &split)?;
    let masks = ctx.path(&a.masks);
    let out = ctx.path(&a.out);
    checkpoint::check_writable(&out, ctx.overwrite)?;
    let train = pairs(&root, &masks, &split.train)?;
    let val = pairs(&root, &masks, &split.val)?;
    let ck = train_cgan(&train, &val, &ctx.cfg.cgan)?;
    let digest = ck.save(&out, ctx.overwrite)?;
    write_loss_csv(&loss_csv_path(&out), &ck.log, ctx.overwrite)?;
    println!(
        "best epoch {} criterion {:.6}; checkpoint {} ({digest})",
        ck.epoch,
        ck.criterion,
        out.display()
    );
    Ok(())
}

fn train_maskgan_cmd(ctx: &Ctx, a: TrainMaskganArgs) -> Result<()> {
    let masks_dir = ctx.path(&a.masks);
    let out = ctx.path(&a.out);
    checkpoint::check_writable(&out, ctx.overwrite)?;
    let ids: Vec<String> = match &a.split {
        Some(p) => SplitManifest::load(&ctx.path(p))?
            .ids_of(Subset::Train, a.class)
            .into_iter()
            .map(str::to_string)
            .collect(),
        None => list_pngs(&masks_dir.join(a.class.as_str()))?
            .into_iter()
            .map(|n| format!("{}/{n}", a.class.as_str()))
            .collect(),
    };
    if ids.is_empty() {
        bail!("no {} masks to train on", a.class);
    }
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let masks = load_masks(&masks_dir, &refs)?;
    let lm: Vec<LabeledMask> = ids
        .into_iter()
        .zip(masks)
        .map(|(id, mask)| LabeledMask {
            id,
            label: a.class,
            mask,
        })
        .collect();
    let mut cfg = ctx.cfg.maskgan.clone();
    cfg.class_label = a.class;
    let ck = train_maskgan(&lm, &cfg)?;
    let digest = ck.save(&out, ctx.overwrite)?;
    write_loss_csv(&loss_csv_path(&out), &ck.log, ctx.overwrite)?;
    println!(
        "{} mask model on {} masks: {} ({digest})",
        a.class,
        lm.len(),
        out.display()
    );
    Ok(())
}

fn train_images(root: &Path, split: &SplitManifest, label: ClassLabel) -> Result<Vec<LabeledImage>> {
    split
        .ids_of(Subset::Train, label)
        .into_iter()
        .map(|id| {
            Ok(LabeledImage {
                id: id.to_string(),
                label,
                image: load_rgb_png(&root.join(id))?,
            })
        })
        .collect()
}

fn train_counts(split: &SplitManifest) -> Vec<usize> {
    ClassLabel::ALL
        .iter()
        .map(|l| split.ids_of(Subset::Train, *l).len())
        .collect()
}

fn gan_baseline(ctx: &Ctx, a: GanBaselineArgs) -> Result<()> {
    let split = SplitManifest::load(&ctx.path(&a.split))?;
    let root = corpus_root(ctx, a.images.as_ref(), &split)?;
    let out = ctx.path(&a.out);
    checkpoint::check_writable(&out.join(cytosynth::synthesis::MANIFEST_NAME), ctx.overwrite)?;
    let mut ckpts = Vec::new();
    for label in ClassLabel::ALL {
        let mut cfg = ctx.cfg.gan_baseline.clone();
        cfg.class_label = label;
        let ck = train_gan_baseline(&train_images(&root, &split, label)?, &cfg)?;
        let path = out.join("checkpoints").join(format!("gan-baseline-{label}.bin"));
        ck.save(&path, ctx.overwrite)?;
        write_loss_csv(&loss_csv_path(&path), &ck.log, ctx.overwrite)?;
        ckpts.push(ck);
    }
    let n = n_per_class_for_ratio(&train_counts(&split), a.ratio.unwrap_or(ctx.cfg.synthesis.ratio));
    let refs: Vec<&GanBaselineCheckpoint> = ckpts.iter().collect();
    let samples = synthesize_gan_baseline(&refs, n, ctx.cfg.seed)?;
    let m = write_gan_baseline(&out, &samples, n, ctx.cfg.seed, Some(&ctx.digest()), ctx.overwrite)?;
    println!("wrote {} baseline images to {}", m.samples.len(), out.display());
    Ok(())
}

fn synthesize(ctx: &Ctx, a: SynthesizeArgs) -> Result<()> {
    let cgan = CganCheckpoint::load(&ctx.path(&a.cgan))?;
    let benign = MaskGanCheckpoint::load(&ctx.path(&a.maskgan_benign))?;
    let malignant = MaskGanCheckpoint::load(&ctx.path(&a.maskgan_malignant))?;
    let split = SplitManifest::load(&ctx.path(&a.train_manifest))?;
    let n = n_per_class_for_ratio(&train_counts(&split), a.ratio.unwrap_or(ctx.cfg.synthesis.ratio));
    let out = ctx.path(&a.out);
    checkpoint::check_writable(&out.join(cytosynth::synthesis::MANIFEST_NAME), ctx.overwrite)?;
    let samples = synthesize_dataset(&cgan, &[&benign, &malignant], n, ctx.cfg.seed)?;
    let m = write_synthetic(&out, &samples, n, ctx.cfg.seed, Some(&ctx.digest()), ctx.overwrite)?;
    println!("wrote {} synthetic samples to {}", m.samples.len(), out.display());
    Ok(())
}

fn with_extension(p: &Path, ext: &str) -> PathBuf {
    p.with_extension(ext)
}

fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<()> {
    let split = SplitManifest::load(&ctx.path(&a.split))?;
    split.validate()?;
    let root = corpus_root(ctx, a.root.as_ref(), &split)?;
    let out = ctx.path(&a.out);
    let (json, txt) = (with_extension(&out, "json"), with_extension(&out, "txt"));
    for p in [&out, &json, &txt] {
        checkpoint::check_writable(p, ctx.overwrite)?;
    }
    let conditions = a
        .conditions
        .iter()
        .map(|c| Condition::parse(c))
        .collect::<cytosynth::Result<Vec<_>>>()?;
    let mut bank = ImageBank::load_split(&split, &root)?;
    let mut sources = BTreeMap::new();
    let mut load_synth = |which: Ingredient, dir: &Option<PathBuf>| -> Result<Option<SynthManifest>> {
        if !conditions.iter().any(|c| c.has(which)) {
            return Ok(None);
        }
        let dir = dir
            .as_ref()
            .map(|d| ctx.path(d))
            .ok_or_else(|| anyhow!("a condition uses `{}` but no directory was given", which.as_str()))?;
        let m = SynthManifest::load(&dir)?;
        bank.add_synthetic(which, &dir, &m)?;
        sources.insert(
            which.as_str().to_string(),
            checkpoint::file_digest(&dir.join(cytosynth::synthesis::MANIFEST_NAME))?,
        );
        Ok(Some(m))
    };
    let prop = load_synth(Ingredient::Prop, &a.synthetic)?;
    let gan = load_synth(Ingredient::Gan, &a.gan_baseline)?;
    let sets = conditions
        .iter()
        .map(|c| {
            let s = assemble_condition(&split, c, prop.as_ref(), gan.as_ref())?;
            audit_leakage(&split, &s)?;
            Ok(s)
        })
        .collect::<cytosynth::Result<Vec<_>>>()?;
    let cfg = &ctx.cfg.classify;
    let mut runs = Vec::new();
    for arch in &a.archs {
        for set in &sets {
            println!("training {arch} on {} ({} images)", set.condition, set.len());
            runs.push(train_cell(arch, set, &split, &bank, cfg)?);
        }
    }
    let table = AccuracyTable::from_results(
        &runs,
        TableMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
        },
    )?;
    let report = AblationReport {
        table: table.clone(),
        config_digest: ctx.digest(),
        split_seed: split.seed,
        sources,
        runs,
    };
    report.verify()?;
    fs::create_dir_all(out.parent().unwrap_or(Path::new("."))).with_context(|| out.display().to_string())?;
    checkpoint::write_file(&out, table.to_csv()?.as_bytes())?;
    checkpoint::write_file(&txt, table.to_text().as_bytes())?;
    report.save(&json, true)?;
    print!("{}", table.to_text());
    Ok(())
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let p = |x: &Option<PathBuf>| x.as_ref().map(|v| ctx.path(v));
    let inputs = ReportInputs {
        results: p(&a.results),
        corpus: p(&a.corpus),
        masks: p(&a.masks),
        synthetic: p(&a.synthetic),
        checkpoints: a.checkpoints.iter().map(|c| ctx.path(c)).collect(),
        rows: a.rows,
        cols: a.cols,
    };
    let out = ctx.path(&a.out);
    let m = emit_report(&inputs, &out, ctx.overwrite)?;
    for e in &m.entries {
        println!("{}", out.join(&e.file).display());
    }
    Ok(())
}
