//! Command-line front end. Every failure is reported as one
//! `error[<code>]: <message>` line on stderr; exit code 2 means a
//! configuration or input problem, 3 a numeric failure during a run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::ParamStore;
use crate::config::{read_json, write_json, RunSpec};
use crate::data::{
    mask_to_bbox, mask_to_scribble, read_mask, synthesize, write_mask, Dataset, Sample, SynthConfig,
};
use crate::error::{Error, Result};
use crate::experiment::{run_many, run_once, training_set, RunOutcome};
use crate::loss::{GuidanceStyle, LossMode};
use crate::stats::{summarize, welch_t_test};
use crate::train::{evaluate, prepare, Metrics, Model, StyleChoice, TrainConfig};
use crate::viz::{export_heatmap, HeatmapMode};

pub const CHECKPOINT_FILE: &str = "model.agwt";
pub const METRICS_FILE: &str = "metrics.json";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Parser, Debug)]
#[command(
    name = "attn-guide",
    version,
    about = "Attention-guided image classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Shared {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark dataset.
    Synth(Shared),
    /// Convert segmentation masks to bounding boxes or scribbles.
    Convert {
        #[command(flatten)]
        shared: Shared,
        /// Directory of source mask PGMs.
        #[arg(long)]
        masks: PathBuf,
        /// bbox or scribble.
        #[arg(long)]
        style: String,
        /// Scribble width in pixels.
        #[arg(long, default_value_t = 1)]
        width: usize,
    },
    /// Train one model and evaluate it.
    Train(Shared),
    /// Evaluate a saved checkpoint.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate (train, val or test).
        #[arg(long)]
        split: Option<String>,
    },
    /// Train over a λ × style × seed grid and aggregate.
    Sweep(Shared),
    /// Write heatmap overlays for selected samples.
    Viz {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated image filenames.
        #[arg(long, value_delimiter = ',')]
        samples: Vec<String>,
        /// raw_cam, self_attention or both (comma-separated).
        #[arg(long, value_delimiter = ',')]
        mode: Vec<String>,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let line = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(s) => cmd_synth(&s),
        Command::Convert {
            shared,
            masks,
            style,
            width,
        } => cmd_convert(&masks, &style, width, &shared),
        Command::Train(s) => cmd_train(&s),
        Command::Eval {
            shared,
            checkpoint,
            split,
        } => cmd_eval(&shared, checkpoint, split),
        Command::Sweep(s) => cmd_sweep(&s),
        Command::Viz {
            shared,
            checkpoint,
            samples,
            mode,
        } => cmd_viz(&shared, checkpoint, samples, mode),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_synth(s: &Shared) -> Result<()> {
    let mut cfg: SynthConfig = read_json(s.config.as_deref())?;
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = s
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("synth needs --out".into()))?;
    create_dir(out)?;
    let ds = synthesize(&cfg)?;
    ds.write(out, Some(&cfg))
}

fn cmd_convert(masks: &Path, style: &str, width: usize, s: &Shared) -> Result<()> {
    let style: GuidanceStyle = style.parse()?;
    if style == GuidanceStyle::Segmentation {
        return Err(Error::Config("--style must be bbox or scribble".into()));
    }
    if width == 0 {
        return Err(Error::Config("--width must be ≥ 1".into()));
    }
    let out = s
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("convert needs --out".into()))?;
    let mut files: Vec<PathBuf> = fs::read_dir(masks)
        .map_err(|e| Error::io(masks, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .pgm masks in {}",
            masks.display()
        )));
    }
    create_dir(out)?;
    let mut converted = 0;
    for f in &files {
        let m = read_mask(f)?;
        if m.is_empty() {
            eprintln!("warning: {}: empty mask, skipped", f.display());
            continue;
        }
        let c = match style {
            GuidanceStyle::Bbox => mask_to_bbox(&m)?,
            _ => mask_to_scribble(&m, width)?,
        };
        write_mask(
            &out.join(f.file_name().expect("listed file has a name")),
            &c,
        )?;
        converted += 1;
    }
    if converted == 0 {
        return Err(Error::Config(format!(
            "every mask in {} was empty",
            masks.display()
        )));
    }
    Ok(())
}

/// Reads the run spec, applies flag overrides, validates it and prepares
/// the output directory.
fn load_spec(s: &Shared) -> Result<RunSpec> {
    let mut spec: RunSpec = read_json(s.config.as_deref())?;
    if let Some(seed) = s.seed {
        spec.train.seed = seed;
    }
    if let Some(out) = &s.out {
        spec.out = Some(out.clone());
    }
    spec.validate()?;
    spec.dataset_dir()?;
    create_dir(spec.out_dir()?)?;
    Ok(spec)
}

fn load_data(spec: &RunSpec) -> Result<Dataset> {
    Dataset::load(spec.dataset_dir()?, spec.class_names.as_deref())
}

fn nonempty<'a>(ds: &'a Dataset, split: &str) -> Result<&'a [Sample]> {
    let s = ds.split_by_name(split)?;
    if s.is_empty() {
        return Err(Error::Config(format!(
            "split {split:?} of the dataset is empty"
        )));
    }
    Ok(s)
}

fn finish_metrics(mut m: Metrics, spec: &RunSpec, seconds: f64) -> Metrics {
    if spec.record_time {
        m.wall_time_s = Some(seconds);
    }
    m
}

fn cmd_train(s: &Shared) -> Result<()> {
    let spec = load_spec(s)?;
    let out = spec.out_dir()?;
    write_json(&out.join(EFFECTIVE_CONFIG_FILE), &spec)?;
    let ds = load_data(&spec)?;
    let train_set = training_set(&ds, spec.merge_val);
    let eval_set = nonempty(&ds, &spec.eval_split)?;
    let run = run_once(&spec.train, &train_set, eval_set, &ds.class_names)?;
    run.model.params.save(&out.join(CHECKPOINT_FILE))?;
    write_json(&out.join("train_log.json"), &run.log)?;
    write_json(
        &out.join(METRICS_FILE),
        &finish_metrics(run.metrics, &spec, run.wall_time_s),
    )
}

fn load_model(spec: &RunSpec, classes: usize, checkpoint: Option<PathBuf>) -> Result<Model> {
    let path =
        checkpoint.unwrap_or_else(|| spec.out_dir().expect("validated").join(CHECKPOINT_FILE));
    let params = ParamStore::load(&path)?;
    let mut model = Model::init(
        spec.train.backbone.clone(),
        classes,
        spec.train.input_size,
        spec.train.seed,
    )?;
    model
        .network
        .check_params(&params)
        .map_err(|e| Error::load(&path, e.to_string()))?;
    model.params = params;
    Ok(model)
}

fn cmd_eval(s: &Shared, checkpoint: Option<PathBuf>, split: Option<String>) -> Result<()> {
    let mut spec = load_spec(s)?;
    if let Some(split) = split {
        spec.eval_split = split;
        spec.validate()?;
    }
    let out = spec.out_dir()?;
    let ds = load_data(&spec)?;
    let model = load_model(&spec, ds.classes(), checkpoint)?;
    let start = std::time::Instant::now();
    let m = evaluate(
        &model,
        nonempty(&ds, &spec.eval_split)?,
        spec.train.seed,
        spec.train.epochs,
    )?;
    let m = finish_metrics(m, &spec, start.elapsed().as_secs_f64());
    write_json(&out.join(format!("metrics_{}.json", spec.eval_split)), &m)
}

fn fmt_lambda(l: f64) -> String {
    format!("{l}")
}

/// One sweep setting: a loss mode, a style and a λ.
#[derive(Clone, Debug)]
struct Setting {
    name: String,
    mode: LossMode,
    style: StyleChoice,
    lambda: f64,
}

fn sweep_settings(spec: &RunSpec) -> Vec<Setting> {
    let base = &spec.train;
    let mut lambdas = spec.sweep.lambdas.clone();
    if !lambdas.contains(&0.0) {
        lambdas.insert(0, 0.0);
    }
    let mut out = vec![Setting {
        name: "baseline".into(),
        mode: LossMode::Guidance,
        style: base.guidance_style,
        lambda: 0.0,
    }];
    for &mode in &spec.sweep.modes {
        match mode {
            LossMode::None => out.push(Setting {
                name: "none".into(),
                mode,
                style: StyleChoice::None,
                lambda: 0.0,
            }),
            LossMode::Guidance => {
                for &style in &spec.sweep.styles {
                    for &l in lambdas.iter().filter(|&&l| l > 0.0) {
                        out.push(Setting {
                            name: format!("{style}_lambda{}", fmt_lambda(l)),
                            mode,
                            style,
                            lambda: l,
                        });
                    }
                }
            }
            LossMode::L1 | LossMode::L2 => {
                let tag = if mode == LossMode::L1 { "l1" } else { "l2" };
                for &l in lambdas.iter().filter(|&&l| l > 0.0) {
                    out.push(Setting {
                        name: format!("{tag}_lambda{}", fmt_lambda(l)),
                        mode,
                        style: StyleChoice::None,
                        lambda: l,
                    });
                }
            }
        }
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::load(path, e.to_string()))
}

fn csv_row(w: &mut csv::Writer<fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row)
        .map_err(|e| Error::load(path, e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn cmd_sweep(s: &Shared) -> Result<()> {
    let spec = load_spec(s)?;
    let out = spec.out_dir()?;
    write_json(&out.join(EFFECTIVE_CONFIG_FILE), &spec)?;
    let ds = load_data(&spec)?;
    let train_set = training_set(&ds, spec.merge_val);
    let eval_set = nonempty(&ds, &spec.eval_split)?;

    let settings = sweep_settings(&spec);
    let mut jobs: Vec<(usize, TrainConfig)> = Vec::new();
    for (si, st) in settings.iter().enumerate() {
        for k in 0..spec.n_seeds as u64 {
            let cfg = TrainConfig {
                seed: spec.train.seed + k,
                lambda: st.lambda,
                loss_mode: st.mode,
                guidance_style: st.style,
                ..spec.train.clone()
            };
            jobs.push((si, cfg));
        }
    }
    let configs: Vec<TrainConfig> = jobs.iter().map(|(_, c)| c.clone()).collect();
    let results: Vec<RunOutcome> =
        run_many(&configs, &train_set, eval_set, &ds.class_names, s.jobs)
            .into_iter()
            .collect::<Result<_>>()?;

    let runs_path = out.join("runs.csv");
    let mut runs = csv_writer(&runs_path)?;
    csv_row(
        &mut runs,
        &runs_path,
        &[
            "setting",
            "mode",
            "style",
            "lambda",
            "seed",
            "image_acc",
            "study_acc",
            "attention_mass",
        ]
        .map(String::from),
    )?;
    let mut per_setting: Vec<Vec<&Metrics>> = vec![Vec::new(); settings.len()];
    for ((si, cfg), r) in jobs.iter().zip(&results) {
        let st = &settings[*si];
        let m = &r.metrics;
        let dir = out.join("runs").join(format!("{}_s{}", st.name, cfg.seed));
        create_dir(&dir)?;
        write_json(
            &dir.join(METRICS_FILE),
            &finish_metrics(m.clone(), &spec, r.wall_time_s),
        )?;
        let mode = serde_json::to_value(st.mode).expect("mode serializes");
        csv_row(
            &mut runs,
            &runs_path,
            &[
                st.name.clone(),
                mode.as_str().unwrap_or_default().to_string(),
                st.style.to_string(),
                fmt_lambda(st.lambda),
                cfg.seed.to_string(),
                m.image_acc.to_string(),
                m.study_acc.to_string(),
                opt(m.attention_mass),
            ],
        )?;
        per_setting[*si].push(m);
    }
    runs.flush().map_err(|e| Error::io(&runs_path, e))?;

    type Pick = fn(&Metrics) -> Option<f64>;
    let metrics: [(&str, Pick); 3] = [
        ("image_acc", |m| Some(m.image_acc)),
        ("study_acc", |m| Some(m.study_acc)),
        ("attention_mass", |m| m.attention_mass),
    ];
    let agg_path = out.join("aggregate.csv");
    let mut agg = csv_writer(&agg_path)?;
    csv_row(
        &mut agg,
        &agg_path,
        &["setting", "metric", "mean", "std", "n"].map(String::from),
    )?;
    let t_path = out.join("ttest.csv");
    let mut tt = csv_writer(&t_path)?;
    csv_row(
        &mut tt,
        &t_path,
        &[
            "setting", "metric", "baseline", "test", "t", "df", "p", "note",
        ]
        .map(String::from),
    )?;
    let values =
        |si: usize, f: Pick| -> Option<Vec<f64>> { per_setting[si].iter().map(|m| f(m)).collect() };
    for (si, st) in settings.iter().enumerate() {
        for (name, f) in metrics {
            let Some(v) = values(si, f) else { continue };
            let sm = summarize(&v)?;
            csv_row(
                &mut agg,
                &agg_path,
                &[
                    st.name.clone(),
                    name.into(),
                    sm.mean.to_string(),
                    sm.std.to_string(),
                    sm.n.to_string(),
                ],
            )?;
            if si == 0 {
                continue;
            }
            let Some(base) = values(0, f) else { continue };
            let row = match welch_t_test(&v, &base) {
                Ok(r) => [
                    r.t.to_string(),
                    r.df.to_string(),
                    r.p.to_string(),
                    String::new(),
                ],
                Err(e) => [String::new(), String::new(), String::new(), e.to_string()],
            };
            let mut full = vec![
                st.name.clone(),
                name.into(),
                "baseline".into(),
                "welch".into(),
            ];
            full.extend(row);
            csv_row(&mut tt, &t_path, &full)?;
        }
    }
    agg.flush().map_err(|e| Error::io(&agg_path, e))?;
    tt.flush().map_err(|e| Error::io(&t_path, e))
}

fn cmd_viz(
    s: &Shared,
    checkpoint: Option<PathBuf>,
    samples: Vec<String>,
    modes: Vec<String>,
) -> Result<()> {
    let mut spec = load_spec(s)?;
    if !samples.is_empty() {
        spec.viz.samples = samples;
    }
    if !modes.is_empty() {
        let mut parsed = Vec::new();
        for m in &modes {
            if m == "both" {
                parsed.extend([HeatmapMode::RawCam, HeatmapMode::SelfAttention]);
            } else {
                parsed.push(m.parse()?);
            }
        }
        spec.viz.modes = parsed;
    }
    let ds = load_data(&spec)?;
    let split = ds.split_by_name(&spec.viz.split)?;
    let chosen: Vec<&Sample> = if spec.viz.samples.is_empty() {
        split.iter().take(spec.viz.count).collect()
    } else {
        spec.viz
            .samples
            .iter()
            .map(|name| {
                split.iter().find(|x| x.filename() == *name).ok_or_else(|| {
                    Error::Config(format!(
                        "sample {name:?} not found in split {:?}",
                        spec.viz.split
                    ))
                })
            })
            .collect::<Result<_>>()?
    };
    let model = load_model(&spec, ds.classes(), checkpoint)?;
    let dir = spec.out_dir()?.join("viz");
    create_dir(&dir)?;
    let images: Vec<_> = chosen
        .iter()
        .map(|x| prepare(&x.image, None, model.input_size).0)
        .collect();
    let bundles = model.attention(&images)?;
    for ((sample, image), bundle) in chosen.iter().zip(&images).zip(&bundles) {
        let stem = sample.filename().trim_end_matches(".pgm").to_string();
        for &mode in &spec.viz.modes {
            for c in 0..model.classes() {
                export_heatmap(
                    image,
                    bundle,
                    mode,
                    c,
                    &dir.join(format!("{stem}_{mode}_c{c}.png")),
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_counts() {
        let mut spec = RunSpec::default();
        spec.sweep.lambdas = vec![0.0, 0.1, 1.0];
        let names: Vec<String> = sweep_settings(&spec).into_iter().map(|s| s.name).collect();
        assert_eq!(
            names,
            ["baseline", "segmentation_lambda0.1", "segmentation_lambda1"]
        );
        spec.sweep.styles = vec![StyleChoice::Bbox, StyleChoice::Scribble];
        spec.sweep.lambdas = vec![1.0];
        assert_eq!(sweep_settings(&spec).len(), 3);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["attn-guide", "frobnicate"]), 2);
        assert_eq!(run(["attn-guide", "train", "--jobs", "x"]), 2);
    }

    #[test]
    fn missing_dataset_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        fs::write(&cfg, r#"{"dataset": "/nonexistent/data"}"#).unwrap();
        let out = dir.path().join("o");
        assert_eq!(
            run([
                "attn-guide",
                "train",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap()
            ]),
            2
        );
    }
}
