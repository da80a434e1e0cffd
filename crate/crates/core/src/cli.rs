//! Batch commands behind the `winshift` binary.
//!
//! Every command takes a [`RunConfig`], built from an optional TOML file and
//! command-line flags (flags win). The merged config is embedded in every
//! manifest the command writes, so outputs can be traced back to their
//! inputs, configuration and seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::metrics::{self, Aggregation, DiceCounts, DiceReport};
use crate::par::{self, Execution};
use crate::phantom::{self, BoostDistribution, PhantomSpec};
use crate::pipeline::{AuditRecord, Overrides, SlicePipeline, StatsDocument};
use crate::stats::{default_foreground, ForegroundStats};
use crate::volume_io::{
    self, npy, source_id_from_path, HuVolume, SegmentationMask, LABEL_LIVER, LABEL_TUMOR,
};
use crate::windowing::ViewingWindow;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub const STATS_FILE: &str = "stats.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "winshift",
    version,
    about = "Window-shifting CT preprocessing and augmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a dataset and write stats.json plus histogram CSVs.
    Analyze(RunConfig),
    /// Write augmented training slices for a number of epochs.
    Augment(RunConfig),
    /// Write inference-ready slices using the base window.
    Preprocess(RunConfig),
    /// Contrast, difficult-case, separation and dice reports.
    Report(RunConfig),
    /// Generate a synthetic phantom cohort.
    Phantom(RunConfig),
}

/// Options shared by all commands. Each command reads the ones it needs.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Volume file or directory of volumes (.nii, .nii.gz, .wsv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory holding the masks, if not next to the volumes.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory of predicted masks (report).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Policy preset name or policy.json path.
    #[arg(long)]
    pub policy: Option<String>,
    /// Append the flip and crop-and-resize augmentations to the policy.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub geometric: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Window-shift probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// Worker threads (0: all cores, 1: sequential).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threshold_hu: Option<f64>,
    /// Foreground labels, comma separated.
    #[arg(long)]
    pub foreground: Option<String>,
    /// Classes whose per-volume medians set the shift range.
    #[arg(long)]
    pub shift_classes: Option<String>,
    /// Base window override as `level,width` in HU.
    #[arg(long)]
    pub base_window: Option<String>,
    /// Level range override as `low,high` in HU.
    #[arg(long)]
    pub bounds: Option<String>,
    /// Dice aggregation: per_volume_mean or pooled.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Number of phantoms.
    #[arg(long)]
    pub count: Option<usize>,
    /// Boost distribution: `constant:V`, `uniform:LOW:HIGH` or `values:A,B,...`.
    #[arg(long)]
    pub boost: Option<String>,
    /// Phantom grid as `nx,ny,nz`.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub liver_hu: Option<f64>,
    #[arg(long)]
    pub tumor_hu: Option<f64>,
    #[arg(long)]
    pub background_hu: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub tumor_radius: Option<f64>,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident, $($f:ident),*) => {
        RunConfig { $($f: $a.$f.or($b.$f)),* }
    };
}

impl RunConfig {
    /// Fills unset fields from `file`.
    pub fn merge(self, file: RunConfig) -> RunConfig {
        merge_fields!(
            self,
            file,
            data,
            labels,
            pred,
            stats,
            policy,
            geometric,
            seed,
            epochs,
            p,
            threads,
            out,
            threshold_hu,
            foreground,
            shift_classes,
            base_window,
            bounds,
            aggregation,
            count,
            boost,
            dims,
            liver_hu,
            tumor_hu,
            background_hu,
            noise_std,
            tumor_radius
        )
    }

    pub fn from_toml(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn execution(&self) -> Execution {
        match self.threads {
            Some(1) => Execution::Sequential,
            _ => Execution::Parallel,
        }
    }

    fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("--{flag} is required")))
    }

    fn out(&self) -> Result<&Path> {
        Self::require(&self.out, "out").map(PathBuf::as_path)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn foreground(&self) -> Result<BTreeSet<u8>> {
        match &self.foreground {
            Some(s) => parse_labels(s, "foreground"),
            None => Ok(default_foreground()),
        }
    }

    fn threshold(&self) -> f64 {
        self.threshold_hu.unwrap_or(metrics::DIFFICULT_THRESHOLD_HU)
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn parse_labels(s: &str, flag: &str) -> Result<BTreeSet<u8>> {
    let set = s
        .split(',')
        .map(|t| t.trim().parse::<u8>())
        .collect::<std::result::Result<BTreeSet<u8>, _>>()
        .map_err(|e| Error::Config(format!("--{flag} `{s}`: {e}")))?;
    if set.is_empty() {
        return Err(Error::Config(format!("--{flag} is empty")));
    }
    Ok(set)
}

fn parse_numbers<const N: usize>(s: &str, flag: &str) -> Result<[f64; N]> {
    let values: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--{flag} `{s}`: {e}")))?;
    values
        .try_into()
        .map_err(|_| Error::Config(format!("--{flag} `{s}` needs {N} comma-separated numbers")))
}

fn parse_boost(s: &str) -> Result<BoostDistribution> {
    let bad = || {
        Error::Config(format!(
            "--boost `{s}`: expected constant:V, uniform:LOW:HIGH or values:A,B,..."
        ))
    };
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    match kind {
        "constant" => Ok(BoostDistribution::Constant { value: num(rest)? }),
        "uniform" => {
            let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
            Ok(BoostDistribution::Uniform {
                low: num(lo)?,
                high: num(hi)?,
            })
        }
        "values" => Ok(BoostDistribution::Values {
            values: rest.split(',').map(num).collect::<Result<_>>()?,
        }),
        _ => Err(bad()),
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidPolicy(_)
        | Error::PhaseOrder(_)
        | Error::InvalidWindow(_)
        | Error::SchemaVersion { .. }
        | Error::Calibration(_) => EXIT_CONFIG,
        Error::StageContract { .. } => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => RunConfig::from_toml(path)?,
        None => RunConfig::default(),
    };
    let (name, flags): (&str, RunConfig) = match cli.command {
        Command::Analyze(c) => ("analyze", c),
        Command::Augment(c) => ("augment", c),
        Command::Preprocess(c) => ("preprocess", c),
        Command::Report(c) => ("report", c),
        Command::Phantom(c) => ("phantom", c),
    };
    let cfg = flags.merge(file);
    if let Some(p) = cfg.p {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("--p {p} outside [0, 1]")));
        }
    }
    let threads = cfg.threads.unwrap_or(0);
    par::with_threads(threads, move || match name {
        "analyze" => cmd_analyze(&cfg).map(|_| ()),
        "augment" => cmd_augment(&cfg).map(|_| ()),
        "preprocess" => cmd_preprocess(&cfg).map(|_| ()),
        "report" => cmd_report(&cfg).map(|_| ()),
        _ => cmd_phantom(&cfg).map(|_| ()),
    })
}

/// A volume file and its mask, if one was found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub source_id: String,
    pub volume: PathBuf,
    pub mask: Option<PathBuf>,
}

const EXTENSIONS: [&str; 3] = [".nii.gz", ".nii", ".wsv"];

fn split_ext(name: &str) -> Option<(&str, &str)> {
    EXTENSIONS
        .iter()
        .find_map(|ext| name.strip_suffix(ext).map(|stem| (stem, *ext)))
}

fn is_mask_name(stem: &str) -> bool {
    stem.ends_with("_seg") || stem.ends_with("_pred") || stem.starts_with("segmentation-")
}

/// Candidate mask file names for a volume stem: `<stem>_seg.<ext>`, and
/// `segmentation-N.<ext>` for `volume-N`.
fn mask_names(stem: &str) -> Vec<String> {
    let mut stems = vec![format!("{stem}_seg")];
    if let Some(n) = stem.strip_prefix("volume-") {
        stems.push(format!("segmentation-{n}"));
    }
    stems
        .iter()
        .flat_map(|s| EXTENSIONS.iter().map(move |e| format!("{s}{e}")))
        .collect()
}

fn find_in(dir: &Path, names: &[String]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

/// Lists volumes under `data` (a file or a directory), sorted by file name,
/// with masks looked up next to them or in `labels`.
pub fn discover(data: &Path, labels: Option<&Path>) -> Result<Vec<DatasetEntry>> {
    let files: Vec<PathBuf> = if data.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(data)
            .map_err(|e| Error::io(data, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else if data.is_file() {
        vec![data.to_path_buf()]
    } else {
        return Err(Error::Config(format!(
            "--data {} does not exist",
            data.display()
        )));
    };
    let mut out = Vec::new();
    for path in files {
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let Some((stem, _)) = split_ext(&name) else {
            continue;
        };
        if is_mask_name(stem) {
            continue;
        }
        let names = mask_names(stem);
        let dir = labels.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")));
        out.push(DatasetEntry {
            source_id: source_id_from_path(&path),
            mask: find_in(dir, &names),
            volume: path,
        });
    }
    Ok(out)
}

fn load(entry: &DatasetEntry) -> Result<(HuVolume, Option<SegmentationMask>)> {
    volume_io::read_volume(&entry.volume, entry.mask.as_deref())
}

fn dataset(cfg: &RunConfig) -> Result<Vec<DatasetEntry>> {
    let data = RunConfig::require(&cfg.data, "data")?;
    let entries = discover(data, cfg.labels.as_deref())?;
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no volumes found under {}",
            data.display()
        )));
    }
    Ok(entries)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Paths written by `analyze`.
#[derive(Clone, Debug)]
pub struct AnalyzeOutput {
    pub document: StatsDocument,
    pub failed: Vec<(String, String)>,
}

#[derive(Serialize)]
struct HistogramRow {
    hu: i32,
    count: u64,
}

#[derive(Serialize)]
struct MedianHistogramRow {
    class_label: u8,
    hu: i64,
    count: u64,
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeOutput> {
    let entries = dataset(cfg)?;
    let out = cfg.out()?;
    let labels = cfg.foreground()?;
    let shift_classes = match &cfg.shift_classes {
        Some(s) => parse_labels(s, "shift-classes")?,
        None => labels.clone(),
    };
    let overrides = Overrides {
        base_window: match &cfg.base_window {
            Some(s) => {
                let [level, width] = parse_numbers::<2>(s, "base-window")?;
                Some(ViewingWindow::from_level_width(level, width)?)
            }
            None => None,
        },
        level_bounds: match &cfg.bounds {
            Some(s) => {
                let [lo, hi] = parse_numbers::<2>(s, "bounds")?;
                Some((lo, hi))
            }
            None => None,
        },
    };
    let shards = par::map(cfg.execution(), &entries, |e| -> Result<ForegroundStats> {
        let (vol, mask) = load(e)?;
        let mask =
            mask.ok_or_else(|| Error::Data(format!("{}: no mask found", e.volume.display())))?;
        let mut s = ForegroundStats::new(labels.clone());
        s.accumulate(&vol, &mask)?;
        Ok(s)
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (e, r) in entries.iter().zip(shards) {
        match r {
            Ok(s) => ok.push(s),
            Err(err) => {
                log::warn!("skipping {}: {err}", e.volume.display());
                failed.push((e.volume.display().to_string(), err.to_string()));
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::Data(format!(
            "all {} volumes failed: {}",
            failed.len(),
            failed
                .iter()
                .map(|(p, e)| format!("{p}: {e}"))
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    let stats = ForegroundStats::merge_all(labels, &ok)?;
    let p = cfg.p.unwrap_or(crate::augment::INTENSITY_PROBABILITY);
    let document = StatsDocument::derive(stats, shift_classes, p, overrides, cfg.to_json())?;
    create_dir(out)?;
    document.save(&out.join(STATS_FILE))?;
    write_csv(
        document
            .stats
            .histogram()
            .filter(|&(_, c)| c > 0)
            .map(|(hu, count)| HistogramRow { hu, count }),
        &out.join("histogram.csv"),
    )?;
    let medians: Vec<_> = document.stats.per_volume_medians().collect();
    write_csv(medians.iter(), &out.join("medians.csv"))?;
    let mut bins = std::collections::BTreeMap::<(u8, i64), u64>::new();
    for m in &medians {
        *bins
            .entry((m.class_label, m.median_hu.round() as i64))
            .or_default() += 1;
    }
    write_csv(
        bins.into_iter()
            .map(|((class_label, hu), count)| MedianHistogramRow {
                class_label,
                hu,
                count,
            }),
        &out.join("median_histogram.csv"),
    )?;
    log::info!(
        "base window L={:.1} W={:.1}, shift levels [{:.1}, {:.1}]",
        document.base_window.level(),
        document.base_window.width(),
        document.shift_policy.level_low,
        document.shift_policy.level_high
    );
    Ok(AnalyzeOutput { document, failed })
}

/// One written slice pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub source_id: String,
    pub slice_index: usize,
    pub tumor_present: bool,
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditRecord>,
}

/// Manifest of `preprocess` and `augment` runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub epochs: u64,
    pub base_window: ViewingWindow,
    pub normalization: crate::windowing::Normalization,
    pub policy: crate::augment::PolicyFile,
    pub config: serde_json::Value,
    pub failed: Vec<String>,
    pub slices: Vec<SliceRecord>,
}

fn liver_slices(mask: &SegmentationMask) -> Vec<usize> {
    (0..mask.dims()[2])
        .filter(|&z| mask.slice_contains(z, LABEL_LIVER) || mask.slice_contains(z, LABEL_TUMOR))
        .collect()
}

enum Mode {
    Preprocess,
    Augment { epochs: u64 },
}

fn write_slices(cfg: &RunConfig, mode: Mode) -> Result<RunManifest> {
    let entries = dataset(cfg)?;
    let out = cfg.out()?;
    let stats_path = RunConfig::require(&cfg.stats, "stats")?;
    let doc = StatsDocument::load(stats_path)?;
    let seed = cfg.seed();
    let (command, epochs, policy) = match mode {
        Mode::Preprocess => ("preprocess", 1, AugmentationPolicy::empty()),
        Mode::Augment { epochs } => {
            let mut policy = doc.policy(cfg.policy.as_deref().unwrap_or("window_shift"))?;
            if let Some(p) = cfg.p {
                if policy.window_shift().is_none() {
                    return Err(Error::Config(
                        "--p given but the policy has no window_shift".into(),
                    ));
                }
                policy = policy.with_shift_probability(p)?;
            }
            if cfg.geometric.unwrap_or(false) {
                policy = policy.with_geometric();
            }
            ("augment", epochs, policy)
        }
    };
    let manifest_path = out.join(MANIFEST_FILE);
    if let Ok(bytes) = std::fs::read(&manifest_path) {
        if let Ok(prev) = serde_json::from_slice::<RunManifest>(&bytes) {
            if prev.seed == seed && prev.command == command {
                log::warn!(
                    "{} already holds a {command} run with seed {seed}; outputs will be overwritten with identical draws",
                    out.display()
                );
            }
        }
    }
    let pipeline = SlicePipeline::from_document(&doc, policy, seed);
    let epoch_dirs: Vec<PathBuf> = match command {
        "augment" => (0..epochs)
            .map(|e| out.join(format!("epoch_{e:03}")))
            .collect(),
        _ => vec![out.to_path_buf()],
    };
    for d in &epoch_dirs {
        create_dir(d)?;
    }
    let augment = command == "augment";
    let results = par::map(cfg.execution(), &entries, |e| -> Result<Vec<SliceRecord>> {
        let (vol, mask) = load(e)?;
        let mask =
            mask.ok_or_else(|| Error::Data(format!("{}: no mask found", e.volume.display())))?;
        let id = vol.source_id().to_string();
        let mut records = Vec::new();
        for (epoch, dir) in epoch_dirs.iter().enumerate() {
            let rel = if augment {
                format!("epoch_{epoch:03}/")
            } else {
                String::new()
            };
            for z in liver_slices(&mask) {
                let hu = vol.axial_slice(z);
                let labels = mask.axial_slice(z);
                let (image, labels, audit) = if augment {
                    let o = pipeline.augment(&hu, &labels, &id, z, epoch as u64)?;
                    (o.image, o.mask, Some(o.audit))
                } else {
                    (pipeline.preprocess(&hu), labels, None)
                };
                let image_name = format!("{id}_z{z:04}.npy");
                let mask_name = format!("{id}_z{z:04}_seg.npy");
                npy::write_plane_f32(&image, &dir.join(&image_name))?;
                npy::write_plane_u8(&labels, &dir.join(&mask_name))?;
                records.push(SliceRecord {
                    source_id: id.clone(),
                    slice_index: z,
                    tumor_present: labels.as_slice().contains(&LABEL_TUMOR),
                    image: format!("{rel}{image_name}"),
                    mask: format!("{rel}{mask_name}"),
                    audit,
                });
            }
        }
        Ok(records)
    });
    let mut slices = Vec::new();
    let mut failed = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(mut recs) => slices.append(&mut recs),
            Err(err) => {
                log::warn!("skipping {}: {err}", e.volume.display());
                failed.push(format!("{}: {err}", e.volume.display()));
            }
        }
    }
    if slices.is_empty() && !failed.is_empty() {
        return Err(Error::Data(format!(
            "all volumes failed: {}",
            failed.join("; ")
        )));
    }
    // epoch-major order
    slices.sort_by_key(|s| s.audit.as_ref().map_or(0, |a| a.epoch));
    let manifest = RunManifest {
        schema_version: crate::SCHEMA_VERSION,
        command: command.to_string(),
        seed,
        epochs,
        base_window: *pipeline.base_window(),
        normalization: *pipeline.normalization(),
        policy: pipeline.policy().to_file(),
        config: cfg.to_json(),
        failed,
        slices,
    };
    write_json(&manifest, &manifest_path)?;
    log::info!(
        "wrote {} slices to {}",
        manifest.slices.len(),
        out.display()
    );
    Ok(manifest)
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<RunManifest> {
    write_slices(cfg, Mode::Preprocess)
}

pub fn cmd_augment(cfg: &RunConfig) -> Result<RunManifest> {
    let epochs = cfg.epochs.unwrap_or(1);
    if epochs == 0 {
        return Err(Error::Config("--epochs must be at least 1".into()));
    }
    write_slices(cfg, Mode::Augment { epochs })
}

#[derive(Clone, Debug)]
pub struct ReportOutput {
    pub contrast: metrics::ContrastReport,
    pub separation: Vec<metrics::SeparationRow>,
    pub dice: Option<DiceReport>,
}

fn prediction_path(pred_dir: &Path, entry: &DatasetEntry) -> Option<PathBuf> {
    let mut names: Vec<String> = EXTENSIONS
        .iter()
        .flat_map(|e| {
            [
                format!("{}_pred{e}", entry.source_id),
                format!("{}{e}", entry.source_id),
            ]
        })
        .collect();
    if let Some(m) = &entry.mask {
        names.insert(
            0,
            m.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned(),
        );
    }
    find_in(pred_dir, &names)
}

pub fn cmd_report(cfg: &RunConfig) -> Result<ReportOutput> {
    let entries = dataset(cfg)?;
    let out = cfg.out()?;
    let threshold = cfg.threshold();
    let doc = match &cfg.stats {
        Some(p) => Some(StatsDocument::load(p)?),
        None => None,
    };
    let classes = cfg.foreground()?;
    let aggregation = match cfg.aggregation.as_deref() {
        None | Some("per_volume_mean") => Aggregation::PerVolumeMean,
        Some("pooled") => Aggregation::Pooled,
        Some(other) => return Err(Error::Config(format!("--aggregation `{other}`"))),
    };
    type Row = (
        Option<metrics::HuDifference>,
        Vec<metrics::SeparationRow>,
        Option<Result<DiceCounts>>,
    );
    let rows = par::map(cfg.execution(), &entries, |e| -> Result<Row> {
        let (vol, mask) = load(e)?;
        let mask =
            mask.ok_or_else(|| Error::Data(format!("{}: no mask found", e.volume.display())))?;
        let diff = match metrics::mean_hu_difference(&vol, &mask) {
            Ok(d) => Some(d),
            Err(Error::ClassAbsent(_)) => None,
            Err(err) => return Err(err),
        };
        let separation = match (&doc, diff) {
            (Some(d), Some(_)) => metrics::separation_by_scheme(
                &vol,
                &mask,
                &d.base_window,
                &d.shift_policy,
                &d.normalization,
            )?,
            _ => Vec::new(),
        };
        let dice = cfg.pred.as_deref().map(|dir| {
            let path = prediction_path(dir, e).ok_or_else(|| {
                Error::Data(format!(
                    "{}: no prediction in {}",
                    e.source_id,
                    dir.display()
                ))
            })?;
            let pred = volume_io::read_mask(&path)?;
            DiceCounts::from_labels(&pred, &mask, &classes)
        });
        Ok((diff, separation, dice))
    });
    let mut contrast_in = Vec::new();
    let mut separation = Vec::new();
    let mut dice_in = Vec::new();
    for (e, r) in entries.iter().zip(rows) {
        match r {
            Ok((diff, mut sep, dice)) => {
                contrast_in.push((e.source_id.clone(), diff));
                separation.append(&mut sep);
                match dice {
                    Some(Ok(c)) => dice_in.push((e.source_id.clone(), c)),
                    Some(Err(err)) => log::warn!("{}: dice skipped: {err}", e.source_id),
                    None => {}
                }
            }
            Err(err) => log::warn!("skipping {}: {err}", e.volume.display()),
        }
    }
    if contrast_in.is_empty() {
        return Err(Error::Data("no volume could be evaluated".into()));
    }
    let contrast = metrics::identify_difficult(contrast_in, threshold)?;
    create_dir(out)?;
    write_json(&contrast, &out.join("contrast_report.json"))?;
    write_csv(contrast.per_volume.iter(), &out.join("contrast.csv"))?;
    if !separation.is_empty() {
        write_csv(separation.iter(), &out.join("separation.csv"))?;
    }
    let dice = if cfg.pred.is_some() {
        let report = DiceReport::new(classes, aggregation, dice_in)?;
        write_json(&report, &out.join("dice_report.json"))?;
        Some(report)
    } else {
        None
    };
    log::info!(
        "{} of {} volumes below {threshold} HU",
        contrast.n_difficult,
        contrast.per_volume.len()
    );
    Ok(ReportOutput {
        contrast,
        separation,
        dice,
    })
}

pub fn cmd_phantom(cfg: &RunConfig) -> Result<phantom::CohortManifest> {
    let out = cfg.out()?;
    let d = PhantomSpec::default();
    let dims = match &cfg.dims {
        Some(s) => {
            let v = parse_numbers::<3>(s, "dims")?;
            if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                return Err(Error::Config(format!(
                    "--dims `{s}` must be positive integers"
                )));
            }
            v.map(|x| x as usize)
        }
        None => d.dims,
    };
    let base = PhantomSpec {
        dims,
        background_hu: cfg.background_hu.unwrap_or(d.background_hu),
        liver_hu: cfg.liver_hu.unwrap_or(d.liver_hu),
        tumor_hu: cfg.tumor_hu.unwrap_or(d.tumor_hu),
        noise_std: cfg.noise_std.unwrap_or(d.noise_std),
        tumor_radius: cfg.tumor_radius.unwrap_or(d.tumor_radius),
        ..d
    };
    let boosts = match &cfg.boost {
        Some(s) => parse_boost(s)?,
        None => BoostDistribution::Uniform {
            low: 0.0,
            high: 100.0,
        },
    };
    let seed = cfg.seed();
    let cohort = phantom::generate_cohort(
        cfg.count.unwrap_or(20),
        &base,
        &boosts,
        seed,
        cfg.execution(),
    )?;
    phantom::write_cohort(&cohort, &boosts, seed, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file: RunConfig = toml::from_str("seed = 3\nepochs = 2\npolicy = \"gamma\"").unwrap();
        let flags = RunConfig {
            seed: Some(9),
            ..RunConfig::default()
        };
        let m = flags.merge(file);
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.epochs, Some(2));
        assert_eq!(m.policy.as_deref(), Some("gamma"));
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_labels("1, 2", "x").unwrap(), BTreeSet::from([1, 2]));
        assert!(parse_labels("1,300", "x").is_err());
        assert_eq!(parse_numbers::<2>("40,400", "x").unwrap(), [40.0, 400.0]);
        assert!(parse_numbers::<2>("40", "x").is_err());
        assert_eq!(
            parse_boost("uniform:0:100").unwrap(),
            BoostDistribution::Uniform {
                low: 0.0,
                high: 100.0
            }
        );
        assert_eq!(
            parse_boost("values:5,10").unwrap(),
            BoostDistribution::Values {
                values: vec![5.0, 10.0]
            }
        );
        assert!(parse_boost("normal:0:1").is_err());
    }

    #[test]
    fn mask_lookup() {
        let dir = tempfile::tempdir().unwrap();
        for f in [
            "a.wsv",
            "a_seg.wsv",
            "volume-3.nii",
            "segmentation-3.nii",
            "b.nii.gz",
            "notes.txt",
        ] {
            std::fs::write(dir.path().join(f), b"").unwrap();
        }
        let found = discover(dir.path(), None).unwrap();
        let ids: Vec<&str> = found.iter().map(|e| e.source_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "volume-3"]);
        assert!(found[0].mask.as_ref().unwrap().ends_with("a_seg.wsv"));
        assert!(found[1].mask.is_none());
        assert!(found[2]
            .mask
            .as_ref()
            .unwrap()
            .ends_with("segmentation-3.nii"));
    }

    #[test]
    fn exit_codes_are_distinct() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(
            exit_code(&Error::StageContract {
                stage: "s",
                expected: "e",
                value: 0.0
            }),
            EXIT_INTERNAL
        );
    }
}
