use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use stemsynth::calibration::{
    aggregate, calibrate_image, detect_polarity, CalibrationConfig, CalibrationReport, ProfileStats,
};
use stemsynth::enhance::FilterConfig;
use stemsynth::eval::{compare_profiles, score_pair, summarize, PairScore, MIN_CORPUS};
use stemsynth::image::{read_png, write_png16, ImageGray};
use stemsynth::synthesis::{lattice_presets, read_manifest, synth_dataset, ManifestRow, SynthConfig, MANIFEST_FILE};
use stemsynth::{Mode, NoiseProfile};

use crate::config::{layer, ConfigFile};
use crate::plot;

pub const REPORTS_DIR: &str = "reports";
pub const STATS_FILE: &str = "profile_stats.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const REALISM_CSV: &str = "realism.csv";
pub const REALISM_TXT: &str = "realism.txt";

/// Which split of a dataset to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    fn admits(self, split: &str) -> bool {
        match self {
            Split::All => true,
            Split::Train => split == "train",
            Split::Test => split == "test",
        }
    }
}

/// A named input frame. Names are unique within one run and become output
/// file stems.
#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub path: PathBuf,
}

pub fn is_dataset(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

fn manifest_rows(root: &Path, split: Split) -> Result<Vec<ManifestRow>> {
    let rows = read_manifest(&root.join(MANIFEST_FILE))?;
    Ok(rows.into_iter().filter(|r| split.admits(&r.split)).collect())
}

pub fn sample_name(row: &ManifestRow) -> String {
    format!("{}_{:04}", row.split, row.index)
}

/// PNG files directly inside `dir`, sorted by name.
fn png_files(dir: &Path) -> Result<Vec<Frame>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push(Frame { name, path });
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// Frames of a PNG file, a directory of PNGs, or a dataset split
/// (`noisy` or `clean` column).
fn frames(input: &Path, split: Split, clean: bool) -> Result<Vec<Frame>> {
    if input.is_file() {
        let name = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        return Ok(vec![Frame {
            name,
            path: input.to_path_buf(),
        }]);
    }
    if !input.is_dir() {
        bail!("{} does not exist", input.display());
    }
    if is_dataset(input) {
        return Ok(manifest_rows(input, split)?
            .iter()
            .map(|r| Frame {
                name: sample_name(r),
                path: input.join(if clean { &r.clean } else { &r.noisy }),
            })
            .collect());
    }
    png_files(input)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn log_params<T: Serialize>(what: &str, value: &T) {
    info!("{what}: {}", serde_json::to_string(value).unwrap_or_default());
}

/// Warn about config keys that no part of the run consumed.
pub fn warn_unused(file: &ConfigFile, used: &[&str], fields: &[&std::collections::BTreeSet<String>]) {
    for k in file.keys() {
        let known = used.contains(&k.as_str()) || fields.iter().any(|f| f.contains(k));
        if !known {
            warn!("config key {k:?} is not used by this command");
        }
    }
}

// calibrate

pub struct CalibrateArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub mode: Option<Mode>,
    pub split: Split,
    pub plots: bool,
    pub seed: Option<u64>,
    pub sets: Vec<(String, String)>,
}

pub fn calibrate(args: CalibrateArgs, file: &ConfigFile) -> Result<()> {
    let (mut cfg, fields) = layer(&CalibrationConfig::default(), file, &args.sets, &[])?;
    warn_unused(
        file,
        &["seed", "workers", "verbose", "mode", "split", "plots"],
        &[&fields],
    );
    if let Some(seed) = args.seed {
        cfg.sim_seed = seed;
    }
    cfg.validate()?;
    let inputs = frames(&args.input, args.split, false)?;
    if inputs.is_empty() {
        bail!("no PNG frames found in {}", args.input.display());
    }
    let mode = match args.mode {
        Some(m) => m,
        None if is_dataset(&args.input) => read_manifest(&args.input.join(MANIFEST_FILE))?
            .first()
            .map_or(Mode::Haadf, |r| r.profile.mode),
        None => Mode::Haadf,
    };
    info!("seed: {}", cfg.sim_seed);
    info!("mode: {mode}");
    log_params("calibration parameters", &cfg);
    info!("calibrating {} frames from {}", inputs.len(), args.input.display());

    let reports_dir = args.out.join(REPORTS_DIR);
    create_dir(&reports_dir)?;
    let plots_dir = args.out.join("plots");
    if args.plots {
        create_dir(&plots_dir)?;
    }
    let results: Vec<Option<CalibrationReport>> = inputs
        .par_iter()
        .map(|f| {
            let (img, depth) = match read_png(&f.path) {
                Ok(x) => x,
                Err(e) => {
                    warn!("skipping {}: {e}", f.path.display());
                    return None;
                }
            };
            if let Ok(seen) = detect_polarity(&img) {
                if seen != mode {
                    warn!("{}: polarity check suggests {seen} but {mode} was requested", f.name);
                }
            }
            let source = f.path.to_string_lossy();
            match calibrate_image(&img, mode, &cfg, &source, Some(depth)) {
                Ok(r) => Some(r),
                Err(e) => {
                    warn!("skipping {}: {e}", f.path.display());
                    None
                }
            }
        })
        .collect();
    let mut reports = Vec::new();
    for (f, r) in inputs.iter().zip(results) {
        let Some(r) = r else { continue };
        // the polarity warning was already logged above
        for w in r
            .diagnostics
            .warnings
            .iter()
            .filter(|w| !w.starts_with("polarity check"))
        {
            warn!("{}: {w}", f.name);
        }
        write_json(&reports_dir.join(format!("{}.json", f.name)), &r)?;
        if args.plots {
            let d = &r.diagnostics;
            plot::std_scatter(
                &plots_dir.join(format!("{}_scan.png", f.name)),
                &d.scan.bins,
                d.scan.k,
                d.scan.b,
            )?;
            plot::std_scatter(
                &plots_dir.join(format!("{}_pointwise.png", f.name)),
                &d.pointwise.bins,
                d.pointwise.k,
                d.pointwise.b,
            )?;
            plot::ppcc_curve(&plots_dir.join(format!("{}_ppcc.png", f.name)), &d.lambda.ppcc)?;
        }
        reports.push(r);
    }
    if reports.is_empty() {
        bail!("all {} frames failed to calibrate", inputs.len());
    }
    let stats = aggregate(&reports)?;
    write_json(&args.out.join(STATS_FILE), &stats)?;
    info!(
        "calibrated {} of {} frames; wrote {}",
        reports.len(),
        inputs.len(),
        args.out.join(STATS_FILE).display()
    );
    Ok(())
}

// synthesize

pub struct SynthesizeArgs {
    pub out: PathBuf,
    pub preset: Option<String>,
    pub stats: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub sets: Vec<(String, String)>,
}

fn load_stats(preset: Option<&str>, stats: Option<&Path>) -> Result<(String, ProfileStats)> {
    match (preset, stats) {
        (Some(_), Some(_)) => bail!("give either --preset or --stats, not both"),
        (_, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let s = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok((p.display().to_string(), s))
        }
        (name, None) => {
            let name = name.unwrap_or("haadf-real");
            let s = ProfileStats::preset(name).with_context(|| {
                format!(
                    "unknown preset {name:?}; expected one of {:?}",
                    ProfileStats::PRESET_NAMES
                )
            })?;
            Ok((name.to_string(), s))
        }
    }
}

pub fn synthesize(args: SynthesizeArgs, file: &ConfigFile) -> Result<()> {
    let (cfg, fields) = layer(&SynthConfig::default(), file, &args.sets, &[])?;
    warn_unused(
        file,
        &["seed", "workers", "verbose", "preset", "stats", "n_train", "n_test"],
        &[&fields],
    );
    cfg.validate()?;
    let (source, stats) = load_stats(args.preset.as_deref(), args.stats.as_deref())?;
    info!("seed: {}", args.seed);
    info!("profile source: {source}");
    log_params("profile statistics", &stats);
    log_params("synthesis parameters", &cfg);
    info!(
        "generating {} train + {} test samples into {}",
        args.n_train,
        args.n_test,
        args.out.display()
    );
    let manifest = synth_dataset(
        lattice_presets(),
        &stats,
        &cfg,
        args.n_train,
        args.n_test,
        &args.out,
        args.seed,
    )?;
    let run = json!({
        "version": stemsynth::VERSION,
        "seed": args.seed,
        "profile_source": source,
        "stats": stats,
        "synthesis": cfg,
        "n_train": args.n_train,
        "n_test": args.n_test,
    });
    write_json(&args.out.join("run.json"), &run)?;
    info!("wrote {}", manifest.display());
    Ok(())
}

// enhance / evaluate

fn fmt_psnr(p: f64) -> String {
    if p.is_finite() {
        format!("{p:.4}")
    } else {
        "inf".to_string()
    }
}

/// Per-image rows and a summary, as CSV and aligned text.
fn metric_tables(rows: &[(String, Option<PairScore>)]) -> (String, String) {
    let mut csv = String::from("image,psnr,ssim\n");
    for (name, s) in rows {
        match s {
            Some(s) => writeln!(csv, "{name},{},{:.6}", fmt_psnr(s.psnr), s.ssim).unwrap(),
            None => writeln!(csv, "{name},,").unwrap(),
        }
    }
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut txt = format!("{:<w$}  {:>10}  {:>8}\n", "image", "psnr_db", "ssim");
    for (name, s) in rows {
        match s {
            Some(s) => writeln!(txt, "{name:<w$}  {:>10}  {:>8.4}", fmt_psnr(s.psnr), s.ssim).unwrap(),
            None => writeln!(txt, "{name:<w$}  {:>10}  {:>8}", "-", "-").unwrap(),
        }
    }
    let scored: Vec<PairScore> = rows.iter().filter_map(|r| r.1).collect();
    if !scored.is_empty() {
        let sum = summarize(&scored);
        writeln!(
            txt,
            "{:<w$}  {:>10}  {:>8.4}",
            "mean",
            fmt_psnr(sum.mean_psnr),
            sum.mean_ssim
        )
        .unwrap();
        if sum.infinite_psnr > 0 {
            writeln!(
                txt,
                "{} of {} pairs identical (infinite PSNR, left out of the mean)",
                sum.infinite_psnr, sum.pairs
            )
            .unwrap();
        }
    }
    (csv, txt)
}

fn write_tables(out: &Path, csv_name: &str, txt_name: &str, csv: &str, txt: &str) -> Result<()> {
    create_dir(out)?;
    for (name, body) in [(csv_name, csv), (txt_name, txt)] {
        let p = out.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub struct EnhanceArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub method: String,
    pub reference: Option<PathBuf>,
    pub split: Split,
    pub sets: Vec<(String, String)>,
}

pub fn enhance(args: EnhanceArgs, file: &ConfigFile) -> Result<()> {
    let base = FilterConfig::by_name(&args.method).with_context(|| {
        format!(
            "unknown method {:?}; expected wiener, bilateral, absf or fftpeak",
            args.method
        )
    })?;
    let (filter, fields) = layer(&base, file, &args.sets, &["method"])?;
    warn_unused(
        file,
        &["seed", "workers", "verbose", "method", "split", "reference"],
        &[&fields],
    );
    filter.validate()?;
    let inputs = frames(&args.input, args.split, false)?;
    if inputs.is_empty() {
        bail!("no PNG frames found in {}", args.input.display());
    }
    // a dataset carries its own references
    let references: Option<BTreeMap<String, PathBuf>> = match (&args.reference, is_dataset(&args.input)) {
        (Some(r), _) => Some(
            frames(r, args.split, true)?
                .into_iter()
                .map(|f| (f.name, f.path))
                .collect(),
        ),
        (None, true) => Some(
            frames(&args.input, args.split, true)?
                .into_iter()
                .map(|f| (f.name, f.path))
                .collect(),
        ),
        (None, false) => None,
    };
    info!("seed: none (enhancement draws no random numbers)");
    log_params("filter", &filter);
    info!("enhancing {} frames from {}", inputs.len(), args.input.display());
    create_dir(&args.out)?;
    let rows: Vec<(String, Option<PairScore>)> = inputs
        .par_iter()
        .map(|f| -> Result<(String, Option<PairScore>)> {
            let (img, _) = read_png(&f.path)?;
            let out = filter.apply(&img)?;
            write_png16(&args.out.join(format!("{}.png", f.name)), &out.clamped(0.0, 255.0))?;
            let score = match references.as_ref().map(|m| m.get(&f.name)) {
                None => None,
                Some(None) => bail!("no reference image for {}", f.name),
                Some(Some(p)) => Some(score_pair(&out, &read_png(p)?.0)?),
            };
            Ok((f.name.clone(), score))
        })
        .collect::<Result<_>>()?;
    let (csv, txt) = metric_tables(&rows);
    write_tables(&args.out, METRICS_CSV, METRICS_TXT, &csv, &txt)?;
    print!("{txt}");
    Ok(())
}

pub struct EvaluateArgs {
    pub outputs: PathBuf,
    pub references: PathBuf,
    pub out: Option<PathBuf>,
    pub split: Split,
}

pub fn evaluate(args: EvaluateArgs, file: &ConfigFile) -> Result<()> {
    warn_unused(file, &["seed", "workers", "verbose", "split"], &[]);
    let outputs = frames(&args.outputs, args.split, false)?;
    if outputs.is_empty() {
        bail!("no PNG frames found in {}", args.outputs.display());
    }
    let refs: BTreeMap<String, PathBuf> = frames(&args.references, args.split, true)?
        .into_iter()
        .map(|f| (f.name, f.path))
        .collect();
    info!("seed: none (evaluation draws no random numbers)");
    info!(
        "scoring {} outputs against {}",
        outputs.len(),
        args.references.display()
    );
    let rows: Vec<(String, Option<PairScore>)> = outputs
        .par_iter()
        .map(|f| -> Result<(String, Option<PairScore>)> {
            let r = refs
                .get(&f.name)
                .with_context(|| format!("no reference image for {}", f.name))?;
            let (a, b): (ImageGray, ImageGray) = (read_png(&f.path)?.0, read_png(r)?.0);
            Ok((f.name.clone(), Some(score_pair(&a, &b)?)))
        })
        .collect::<Result<_>>()?;
    let (csv, txt) = metric_tables(&rows);
    if let Some(out) = &args.out {
        write_tables(out, METRICS_CSV, METRICS_TXT, &csv, &txt)?;
    }
    print!("{txt}");
    Ok(())
}

// compare-datasets

/// Per-image profiles of a corpus: calibration reports (a `calibrate`
/// output directory or a directory of report files) or, for a dataset root,
/// the generating profiles from its manifest.
pub fn corpus_profiles(dir: &Path, split: Split) -> Result<Vec<NoiseProfile>> {
    if is_dataset(dir) {
        return Ok(manifest_rows(dir, split)?.into_iter().map(|r| r.profile).collect());
    }
    let reports = if dir.join(REPORTS_DIR).is_dir() {
        dir.join(REPORTS_DIR)
    } else {
        dir.to_path_buf()
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&reports)
        .with_context(|| format!("reading {}", reports.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| -> Result<NoiseProfile> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let r: CalibrationReport =
                serde_json::from_str(&text).with_context(|| format!("{} is not a calibration report", p.display()))?;
            Ok(r.profile)
        })
        .collect()
}

pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    pub out: Option<PathBuf>,
    pub split: Split,
}

fn corpus_id(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn compare(args: CompareArgs, file: &ConfigFile) -> Result<()> {
    warn_unused(file, &["seed", "workers", "verbose", "split"], &[]);
    let pa = corpus_profiles(&args.a, args.split)?;
    let pb = corpus_profiles(&args.b, args.split)?;
    info!("seed: none (comparison draws no random numbers)");
    info!(
        "comparing {} profiles against {} (minimum {MIN_CORPUS} each)",
        pa.len(),
        pb.len()
    );
    let table = compare_profiles(&pa, &pb, &corpus_id(&args.a), &corpus_id(&args.b))?;
    let txt = table.to_text();
    if let Some(out) = &args.out {
        write_tables(out, REALISM_CSV, REALISM_TXT, &table.to_csv(), &txt)?;
    }
    print!("{txt}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_table_layout() {
        let rows = vec![
            (
                "a".to_string(),
                Some(PairScore {
                    psnr: f64::INFINITY,
                    ssim: 1.0,
                }),
            ),
            ("b".to_string(), Some(PairScore { psnr: 30.0, ssim: 0.5 })),
            ("c".to_string(), None),
        ];
        let (csv, txt) = metric_tables(&rows);
        assert_eq!(csv, "image,psnr,ssim\na,inf,1.000000\nb,30.0000,0.500000\nc,,\n");
        let lines: Vec<&str> = txt.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[4].starts_with("mean") && lines[4].contains("30.0000") && lines[4].contains("0.7500"));
        // columns line up
        assert_eq!(lines[0].len(), lines[2].len());
    }

    #[test]
    fn split_filter() {
        assert!(Split::All.admits("train") && Split::All.admits("test"));
        assert!(Split::Test.admits("test") && !Split::Test.admits("train"));
    }
}
