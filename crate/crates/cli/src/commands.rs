use std::fs;
use std::path::Path;

use oass::data::{shift_statistics_for_samples, write_manifest_dataset, Sample};
use oass::eval::{
    evaluate, export_cam_visualization, export_patch_overlay, plot_shift_stats, Model,
};
use oass::keypoint::plan_keypoints;
use oass::training::Trainer;
use oass::{
    compute_cams, extract_features, Checkpoint, ModelParams, OassConfig, OassError, Result,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(OassError::Config(format!(
            "device `{}` is not available; use `cpu`",
            cli.device
        )));
    }
    let mut cfg = match &cli.config {
        Some(path) => OassConfig::load(path)?,
        None => OassConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Train { resume, out } => train(&cfg, resume.as_deref(), &out),
        Command::Eval {
            checkpoint,
            split,
            csv,
            teacher,
        } => eval(&cfg, &checkpoint, split.as_deref(), csv.as_deref(), teacher),
        Command::Stats {
            root,
            split,
            target_size,
            csv,
            plot,
        } => {
            if let Some(root) = root {
                cfg.data.kind = if root.join("Annotations").is_dir() {
                    oass::config::DataKind::Voc
                } else {
                    oass::config::DataKind::Synth
                };
                cfg.data.root = Some(root);
            }
            stats(
                &cfg,
                split.as_deref(),
                target_size,
                csv.as_deref(),
                plot.as_deref(),
            )
        }
        Command::Viz {
            checkpoint,
            ids,
            split,
            out,
            patches,
        } => viz(&cfg, &checkpoint, &ids, split.as_deref(), &out, patches),
        Command::Synth { out } => {
            if let Some(seed) = cli.seed {
                cfg.data.seed = seed;
            }
            synth(&cfg, &out)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| OassError::io(dir, e))
}

fn checked_split(cfg: &OassConfig, split: &str) -> Result<Vec<Sample>> {
    let samples = cfg.data.load_split(split)?;
    if samples.is_empty() {
        return Err(OassError::Data(format!("split `{split}` is empty")));
    }
    let c = cfg.data.num_classes();
    if let Some(bad) = samples.iter().find(|s| s.labels.len() != c) {
        return Err(OassError::Data(format!(
            "sample {} has {} labels, expected {c}",
            bad.id,
            bad.labels.len()
        )));
    }
    Ok(samples)
}

fn train(cfg: &OassConfig, resume: Option<&Path>, out: &Path) -> Result<()> {
    let data = checked_split(cfg, &cfg.data.train_split)?;
    create_dir(out)?;
    let resolved = out.join("config.toml");
    fs::write(&resolved, cfg.to_toml_string()?).map_err(|e| OassError::io(&resolved, e))?;
    let mut trainer = match resume {
        Some(path) => {
            Trainer::from_checkpoint(Checkpoint::load(path)?, cfg.train_config(), cfg.objective())?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let params = ModelParams::init(
                3,
                &cfg.model.widths()?,
                cfg.data.num_classes(),
                cfg.model.csi.0,
                &mut rng,
            );
            Trainer::new(params, cfg.train_config(), cfg.objective())?
        }
    };
    trainer.metrics_path = Some(out.join("metrics.csv"));
    trainer.checkpoint_dir = Some(out.join("checkpoints"));
    log::info!(
        "training on {} images from epoch {}",
        data.len(),
        trainer.epoch
    );
    trainer.fit(&data)?;
    let final_path = out.join("final.json");
    trainer.checkpoint().save(&final_path)?;
    println!("saved {}", final_path.display());
    Ok(())
}

fn load_model(cfg: &OassConfig, path: &Path, teacher: bool) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    let mut params = ckpt.params;
    if teacher {
        params.encoder = ckpt.ema.teacher;
    }
    if params.num_classes() != cfg.data.num_classes() {
        return Err(OassError::Config(format!(
            "checkpoint has {} classes, the configured data {}",
            params.num_classes(),
            cfg.data.num_classes()
        )));
    }
    Ok(Model {
        params,
        csi: cfg.csi_config(),
    })
}

fn eval(
    cfg: &OassConfig,
    ckpt: &Path,
    split: Option<&str>,
    csv: Option<&Path>,
    teacher: bool,
) -> Result<()> {
    let model = load_model(cfg, ckpt, teacher)?;
    let data = checked_split(cfg, split.unwrap_or(&cfg.data.val_split))?;
    let report = evaluate(&model, &data, cfg.eval.ap_mode)?;
    let names = cfg.data.class_names();
    print!("{}", report.table(&names));
    if let Some(path) = csv {
        let file = fs::File::create(path).map_err(|e| OassError::io(path, e))?;
        report.write_csv(file, &names)?;
    }
    Ok(())
}

fn stats(
    cfg: &OassConfig,
    split: Option<&str>,
    target: usize,
    csv: Option<&Path>,
    plot: Option<&Path>,
) -> Result<()> {
    let data = checked_split(cfg, split.unwrap_or(&cfg.data.train_split))?;
    let stats = shift_statistics_for_samples(&data, target);
    let names = cfg.data.class_names();
    match csv {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| OassError::io(path, e))?;
            stats.write_csv(file, &names)?;
        }
        None => stats.write_csv(std::io::stdout().lock(), &names)?,
    }
    if let Some(path) = plot {
        plot_shift_stats(&stats, path)?;
    }
    log::info!(
        "mean |dx| over classes: {:.2} px",
        oass::data::mean_abs_dx(&stats)
    );
    Ok(())
}

fn viz(
    cfg: &OassConfig,
    ckpt: &Path,
    ids: &[String],
    split: Option<&str>,
    out: &Path,
    patches: bool,
) -> Result<()> {
    let model = load_model(cfg, ckpt, false)?;
    let data = checked_split(cfg, split.unwrap_or(&cfg.data.val_split))?;
    let chosen: Vec<&Sample> = if ids.is_empty() {
        data.iter().take(8).collect()
    } else {
        ids.iter()
            .map(|id| {
                data.iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| OassError::Data(format!("no image with id `{id}`")))
            })
            .collect::<Result<_>>()?
    };
    create_dir(out)?;
    for s in chosen {
        let features = extract_features(&s.image, &model.params)?;
        let cams = compute_cams(&features, &model.params)?;
        export_cam_visualization(
            &s.image,
            &cams,
            &s.labels,
            &out.join(format!("{}_cam.png", s.id)),
        )?;
        if patches {
            let plan = plan_keypoints(
                &cams,
                &s.labels,
                s.boxes.as_deref(),
                features.stride,
                s.dims(),
                &cfg.strategy(),
            )?;
            export_patch_overlay(&s.image, &plan, &out.join(format!("{}_patches.png", s.id)))?;
        }
    }
    println!("wrote overlays to {}", out.display());
    Ok(())
}

fn synth(cfg: &OassConfig, out: &Path) -> Result<()> {
    let mut data = cfg.data.clone();
    data.root = None;
    data.kind = oass::config::DataKind::Synth;
    for split in [&cfg.data.train_split, &cfg.data.val_split] {
        let samples = data.load_split(split)?;
        write_manifest_dataset(&samples, &out.join(split))?;
        println!(
            "wrote {} images to {}",
            samples.len(),
            out.join(split).display()
        );
    }
    Ok(())
}
