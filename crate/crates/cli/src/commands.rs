use std::path::{Path, PathBuf};

use candle_core::DType;
use ndarray::Array2;
use vlseg::crd::{build_triplets, Describer, RemoteDescriberConfig};
use vlseg::data::{
    grouped_split, load_image, load_mask, read_jsonl, resolve_ref, synth_toy_dataset_with, write_gray8_png,
    write_jsonl, DatasetManifest, ImageSample, PairRecord, Split, SynthOptions, Triplet,
};
use vlseg::eval::{
    aggregate_report, evaluate_box_fill, evaluate_model, export_features, read_records_csv, read_table_csv,
    write_features_csv, write_records_csv, PromptMode,
};
use vlseg::model::checkpoint::load_model;
use vlseg::model::{SegModel, NO_MASK_MARKER};
use vlseg::otfa::{adapted_segment_with, register_with, AdapterMemory};
use vlseg::training::{load_triplet_samples, train_loop, CHECKPOINT_FILE};
use vlseg::{Error, Result};

use crate::config::RunConfig;
use crate::{
    AdaptCmd, AdaptSegmentArgs, Cli, Command, ConfigCmd, CrdArgs, CrdCmd, DatasetCmd, EvalArgs, ExportArgs,
    InferArgs, RegisterArgs, ReportArgs, SynthArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    match cli.command {
        Command::Dataset(DatasetCmd::Synth(a)) => synth(cfg, a),
        Command::Crd(CrdCmd::Build(a)) => crd_build(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Infer(a) => infer(cfg.resolve()?, a),
        Command::Adapt(AdaptCmd::Register(a)) => adapt_register(cfg.resolve()?, a),
        Command::Adapt(AdaptCmd::Segment(a)) => adapt_segment(cfg.resolve()?, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Report(a) => report(a),
        Command::ExportFeatures(a) => export(cfg.resolve()?, a),
        Command::Config(ConfigCmd::Default) => {
            println!("{}", serde_json::to_string_pretty(&RunConfig::default())?);
            Ok(())
        }
        Command::Config(ConfigCmd::Reference { out }) => {
            let text = crate::reference::render();
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    let d = &mut cfg.dataset;
    if let Some(v) = a.scans {
        d.scans = v;
    }
    if let Some(v) = a.classes {
        d.classes = v;
    }
    if let Some(v) = a.slices_per_scan {
        d.slices_per_scan = v;
    }
    if let Some(v) = a.image_size {
        d.image_size = v;
    }
    if let Some(v) = a.ratios {
        d.ratios = [v[0], v[1], v[2]];
    }
    if let Some(v) = a.out {
        cfg.paths.data_dir = v;
    }
    let cfg = cfg.resolve()?;
    let d = &cfg.dataset;
    let opts = SynthOptions {
        slices_per_scan: d.slices_per_scan,
        noise_std: d.noise_std,
        modalities: d.modalities.clone(),
        ..SynthOptions::default()
    };
    let classes: Vec<&str> = d.classes.iter().map(String::as_str).collect();
    let ds = synth_toy_dataset_with(d.scans, &classes, d.image_size, d.seed, &opts)?;
    let dir = &cfg.paths.data_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = ds.write(dir)?;
    let split = grouped_split(&ds.manifest, d.ratios, d.seed)?;
    write_jsonl(&manifest_path, &split.records)?;
    let (scans, slices) = (split.scan_counts(), split.counts());
    println!("manifest: {}", manifest_path.display());
    for s in Split::ALL {
        println!("{}: {} scans, {} slices", s.as_str(), scans.get(s), slices.get(s));
    }
    Ok(())
}

fn crd_build(mut cfg: RunConfig, a: CrdArgs) -> Result<()> {
    if let Some(url) = a.vlm_endpoint {
        let base = cfg.describer.remote.take().unwrap_or_default();
        cfg.describer.remote = Some(RemoteDescriberConfig { endpoint: url, ..base });
    }
    if let (Some(t), Some(r)) = (a.vlm_timeout, cfg.describer.remote.as_mut()) {
        r.timeout_secs = t;
    }
    if let Some(v) = a.out {
        cfg.paths.triplets = v;
    }
    let cfg = cfg.resolve()?;
    let manifest_path = a.manifest.unwrap_or_else(|| cfg.paths.data_dir.join("manifest.jsonl"));
    let records: Vec<PairRecord> = read_jsonl(&manifest_path)?;
    let manifest = DatasetManifest::new(records, cfg.dataset.seed)?;
    let describer = match &cfg.describer.remote {
        Some(r) => Describer::Remote(r.clone()),
        None => Describer::Deterministic(cfg.describer.thresholds),
    };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let summary = build_triplets(&manifest, base, &cfg.palette(), &describer, &cfg.paths.triplets)?;
    println!("triplets: {} ({} written)", summary.output.display(), summary.written);
    if summary.fallbacks > 0 {
        eprintln!("warning: {} descriptions fell back to the deterministic describer", summary.fallbacks);
    }
    if !summary.errors.is_empty() {
        eprintln!(
            "warning: {} records skipped, see {}",
            summary.errors.len(),
            summary.error_log.display()
        );
    }
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(v) = a.triplets {
        cfg.paths.triplets = v;
    }
    if let Some(v) = a.out {
        cfg.paths.run_dir = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if a.lora && cfg.train.lora.is_none() {
        cfg.train.lora = Some(Default::default());
    }
    let cfg = cfg.resolve()?;
    let (_, report) = train_loop(&cfg.paths.triplets, &cfg.model, &cfg.train, &cfg.paths.run_dir)?;
    let resolved = cfg.paths.run_dir.join("run_config.json");
    std::fs::write(&resolved, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&resolved, e))?;
    let last = report.records.last().map_or(f64::NAN, |r| r.total);
    println!("steps: {}, final loss {last:.4}", report.records.len());
    match report.best_tune_dsc {
        Some(d) => println!("best epoch {} (tune dsc {d:.4})", report.best_epoch),
        None => println!("best epoch {} (no tune split)", report.best_epoch),
    }
    if let Some(p) = report.checkpoint {
        println!("checkpoint: {}", p.display());
    }
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.paths.run_dir.join(CHECKPOINT_FILE))
}

fn open_model(path: &Path) -> Result<SegModel> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    load_model(path, DType::F32)
}

fn read_image(path: &Path, modality: &str) -> Result<ImageSample> {
    let pixels = load_image(path)?;
    let id = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    ImageSample::new(id.clone(), id, modality, pixels)
}

fn write_binary_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    write_gray8_png(path, &mask.mapv(|v| if v > 0 { 255 } else { 0 }))
}

fn infer(cfg: RunConfig, a: InferArgs) -> Result<()> {
    let model = open_model(&checkpoint_path(&cfg, a.checkpoint))?;
    let image = read_image(&a.image, &a.modality)?;
    let seg = model.segment(&image, &a.class_name, &a.modality)?;
    write_binary_mask(&a.out_mask, &seg.mask)?;
    println!("{}", seg.text);
    if !seg.has_mask {
        eprintln!("warning: no {} token generated; mask is empty", NO_MASK_MARKER);
    }
    Ok(())
}

fn adapt_register(cfg: RunConfig, a: RegisterArgs) -> Result<()> {
    let model = open_model(&checkpoint_path(&cfg, a.checkpoint))?;
    let mut mask = load_mask(&a.mask)?;
    if let Some(label) = a.label {
        if !mask.present_labels().contains(&label) {
            return Err(Error::InvalidData(format!("label {label} does not occur in {}", a.mask.display())));
        }
        mask.categories.insert(label, a.class_name.clone());
    }
    let image = read_image(&a.image, &a.modality)?;
    let memory = register_with(&model, &image, &mask, &a.class_name, &cfg.adapt)?;
    memory.save(&a.out)?;
    let g = &memory.gaussian;
    println!(
        "registered {:?}: centre ({:.2}, {:.2}), spread ({:.2}, {:.2})",
        memory.class_name, g.center_row, g.center_col, g.sigma_row, g.sigma_col
    );
    Ok(())
}

fn adapt_segment(cfg: RunConfig, a: AdaptSegmentArgs) -> Result<()> {
    let model = open_model(&checkpoint_path(&cfg, a.checkpoint))?;
    let memory = AdapterMemory::load(&a.memory)?;
    let image = read_image(&a.image, &a.modality)?;
    let seg = adapted_segment_with(&model, &image, &memory, &cfg.adapt)?;
    write_binary_mask(&a.out_mask, &seg.mask)?;
    println!("{}", seg.text);
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?}")))
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    if let Some(v) = a.triplets {
        cfg.paths.triplets = v;
    }
    if let Some(s) = &a.split {
        cfg.eval.split = parse_split(s)?;
    }
    if a.no_baselines {
        cfg.eval.box_baselines = false;
    }
    let cfg = cfg.resolve()?;
    let model = open_model(&checkpoint_path(&cfg, a.checkpoint))?;
    let samples: Vec<_> = load_triplet_samples(&cfg.paths.triplets)?
        .into_iter()
        .filter(|(s, _)| *s == cfg.eval.split)
        .map(|(_, s)| s)
        .collect();
    if samples.is_empty() {
        return Err(Error::InvalidData(format!("no {} samples in {}", cfg.eval.split.as_str(), cfg.paths.triplets.display())));
    }
    let mut methods = vec![("model".to_string(), evaluate_model(&model, &samples)?)];
    if cfg.eval.box_baselines {
        let e = &cfg.eval;
        methods.push(("tight box".into(), evaluate_box_fill(&samples, PromptMode::TightBox, 0.0, e.seed)?));
        methods.push((
            "loose box".into(),
            evaluate_box_fill(&samples, PromptMode::LooseBox, e.loose_max_shift, e.seed)?,
        ));
    }
    let out = a.out.unwrap_or_else(|| cfg.paths.run_dir.join("eval"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_records_csv(&out.join("records.csv"), &methods)?;
    let report = aggregate_report(&methods)?;
    report.write_csv(&out.join("report.csv"))?;
    let text = report.to_text();
    std::fs::write(out.join("report.txt"), &text).map_err(|e| Error::io(out.join("report.txt"), e))?;
    print!("{text}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let methods = match (&a.table, &a.records) {
        (Some(t), _) => read_table_csv(t)?,
        (None, Some(r)) => read_records_csv(r)?,
        (None, None) => return Err(Error::InvalidArgument("one of --table or --records is required".into())),
    };
    let report = aggregate_report(&methods)?;
    if let Some(p) = &a.out_csv {
        report.write_csv(p)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn export(mut cfg: RunConfig, a: ExportArgs) -> Result<()> {
    if let Some(v) = a.triplets {
        cfg.paths.triplets = v;
    }
    let model = open_model(&checkpoint_path(&cfg, a.checkpoint))?;
    let triplets: Vec<Triplet> = read_jsonl(&cfg.paths.triplets)?;
    let base = cfg.paths.triplets.parent().unwrap_or(Path::new("."));
    let mut ids = Vec::with_capacity(triplets.len());
    let mut images = Vec::with_capacity(triplets.len());
    for t in &triplets {
        let pixels = load_image(&resolve_ref(base, &t.image_ref))?;
        images.push(ImageSample::new(t.sample_id(), t.scan_id.clone(), t.modality.clone(), pixels)?);
        ids.push(t.sample_id());
    }
    let features = export_features(&model, &images)?;
    write_features_csv(&a.out, &ids, &features)?;
    println!("{} rows x {} features -> {}", features.nrows(), features.ncols(), a.out.display());
    Ok(())
}
