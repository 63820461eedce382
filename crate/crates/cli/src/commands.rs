//! The five subcommands. Each reads a validated [`RunConfig`] and writes
//! under `out_dir`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ffn_core::elf16::{Elf16Extractor, REPORTED_ELF16_DIM};
use ffn_core::eval::{
    benchmark_timing, dataset_training_set, extract_table, load_dataset, network_tables, repeat_eval,
    timing_csv, write_cmc_csv, write_cmc_svg, write_rank_table, write_trials_csv, Elf16Features, EvalOptions,
    EvalReport, FeatureExtractor, FeatureTable, FusedFeatures, NetworkFeatures, NetworkOutput, ReidDataset,
};
use ffn_core::ffn::{
    branch_influence_probe, build_ffn, hard_example_finetune, misclassified_ids, train, write_loss_trace,
    FfnFragment, FfnModel,
};
use ffn_core::imaging::{load_image, ImageTensor};
use ffn_core::metric::learner;
use ffn_core::nn::{grad_check, GradCheckOptions, Mode, Tensor};
use ffn_core::rng::{stream, Purpose};
use ffn_core::Error;
use rand::Rng;

use crate::config::{DatasetConfig, RunConfig};
use crate::CliError;

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn elf16_features(cfg: &RunConfig) -> Result<Elf16Features, CliError> {
    Ok(Elf16Features::new(Elf16Extractor::new(cfg.elf16.clone())?, cfg.elf16_resize()))
}

fn require_dataset<'a>(d: &'a Option<DatasetConfig>, what: &str) -> Result<&'a DatasetConfig, CliError> {
    d.as_ref()
        .ok_or_else(|| CliError::Usage(format!("{what} needs a [dataset] section")))
}

fn open_dataset(d: &DatasetConfig) -> Result<ReidDataset, CliError> {
    Ok(load_dataset(&d.root, &d.layout()?)?)
}

/// The training dataset and the file stem of its descriptors.
fn training_source(cfg: &RunConfig) -> Result<(&DatasetConfig, &'static str), CliError> {
    match &cfg.train_dataset {
        Some(d) => Ok((d, "train_elf16")),
        None => Ok((require_dataset(&cfg.dataset, "training")?, "elf16")),
    }
}

fn save_table(cfg: &RunConfig, table: &FeatureTable, stem: &str) -> Result<PathBuf, CliError> {
    let path = cfg.features_dir().join(format!("{stem}.bin"));
    table.save(&path)?;
    if cfg.features.csv {
        table.save_csv(&path.with_extension("csv"))?;
    }
    Ok(path)
}

fn load_table(cfg: &RunConfig, stem: &str) -> Result<FeatureTable, CliError> {
    let path = cfg.features_dir().join(format!("{stem}.bin"));
    if !path.exists() {
        return Err(CliError::Core(Error::Data(format!(
            "missing features {}; run `extract` first",
            path.display()
        ))));
    }
    Ok(FeatureTable::load(&path)?)
}

/// Loads stored ELF16 descriptors and refuses ones made under another
/// configuration.
fn load_elf16(cfg: &RunConfig, stem: &str) -> Result<FeatureTable, CliError> {
    let table = load_table(cfg, stem)?;
    table.expect_digest(elf16_features(cfg)?.digest())?;
    Ok(table)
}

fn load_model(cfg: &RunConfig) -> Result<Option<FfnModel>, CliError> {
    let path = cfg.checkpoint_path();
    if path.exists() {
        Ok(Some(FfnModel::load(&path)?))
    } else {
        Ok(None)
    }
}

pub fn extract(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = open_dataset(require_dataset(&cfg.dataset, "extract")?)?;
    create_dir(&cfg.features_dir())?;
    ds.write_id_map(&cfg.out_dir.join("ids.csv"))?;
    let elf = elf16_features(cfg)?;
    let table = extract_table(&ds, &elf)?;
    let path = save_table(cfg, &table, "elf16")?;
    println!(
        "elf16: {} records of dim {} (digest {}) -> {}",
        table.len(),
        table.dim(),
        table.digest(),
        path.display()
    );
    if let Some(d) = &cfg.train_dataset {
        let train_ds = open_dataset(d)?;
        train_ds.write_id_map(&cfg.out_dir.join("train_ids.csv"))?;
        let t = extract_table(&train_ds, &elf)?;
        let path = save_table(cfg, &t, "train_elf16")?;
        println!("train_elf16: {} records -> {}", t.len(), path.display());
    }
    if let Some(model) = load_model(cfg)? {
        let tables = network_tables(&ds, &model, &table)?;
        for (stem, t) in [("fused", &tables.fused), ("cnn", &tables.cnn)] {
            let path = save_table(cfg, t, stem)?;
            println!("{stem}: {} records of dim {} -> {}", t.len(), t.dim(), path.display());
        }
    } else {
        log::info!("no checkpoint at {}; skipping network features", cfg.checkpoint_path().display());
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let (source, stem) = training_source(cfg)?;
    let ds = open_dataset(source)?;
    let descriptors = load_elf16(cfg, stem)?;
    let topology = cfg.topology(descriptors.dim(), ds.num_ids())?;
    let schedule = cfg.schedule()?;
    let ckpt = cfg.checkpoint_path();
    let (mut model, resumed) = match load_model(cfg)? {
        Some(m) if cfg.resume => {
            if m.topology() != &topology {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was built with a different topology",
                    ckpt.display()
                )));
            }
            (m, true)
        }
        _ => (build_ffn(topology.clone(), cfg.seed)?, false),
    };
    let data = dataset_training_set(&ds, &descriptors, &topology)?;
    create_dir(&cfg.out_dir)?;
    let trace_path = cfg.out_dir.join("loss.csv");
    if resumed {
        println!("resuming from iteration {}", model.iteration);
    }
    let report = train(&mut model, &data, &schedule)?;
    write_loss_trace(&trace_path, &report.trace, resumed)?;
    println!(
        "trained to iteration {} ({:?}); final loss {}",
        model.iteration,
        report.stop,
        report.final_loss().map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    if schedule.hard_example.enabled {
        let ids = misclassified_ids(&model, &data)?;
        println!("hard-example phase: {} misclassified ids", ids.len());
        if let Some(fine) = hard_example_finetune(&mut model, &data, &ids, &schedule)? {
            write_loss_trace(&trace_path, &fine.report.trace, true)?;
            println!(
                "finetuned to iteration {}; final loss {}",
                model.iteration,
                fine.report.final_loss().map_or("n/a".into(), |l| format!("{l:.6}"))
            );
        }
    }
    if let Some(parent) = ckpt.parent() {
        create_dir(parent)?;
    }
    model.save(&ckpt)?;
    println!("checkpoint -> {}", ckpt.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = open_dataset(require_dataset(&cfg.dataset, "eval")?)?;
    let dir = cfg.out_dir.join("eval");
    create_dir(&dir)?;
    let opts = EvalOptions {
        trials: cfg.eval.trials,
        seed: cfg.seed,
        parallel: true,
    };
    let mut results: Vec<(String, EvalReport)> = Vec::new();
    for feature in &cfg.eval.features {
        let table = if feature == "elf16" {
            load_elf16(cfg, "elf16")?
        } else {
            load_table(cfg, feature)?
        };
        for &kind in &cfg.eval.metrics {
            let label = format!("{feature}+{kind}");
            let report = repeat_eval(&ds, &table, learner(kind, &cfg.lfda).as_ref(), &opts)?;
            write_cmc_csv(&dir.join(format!("cmc_{label}.csv")), &report.mean)?;
            write_trials_csv(&dir.join(format!("trials_{label}.csv")), &report)?;
            let [r1, r5, r10, r20] = report.mean.reported().map(|r| 100.0 * r);
            println!("{label:<16} rank1 {r1:6.2}  rank5 {r5:6.2}  rank10 {r10:6.2}  rank20 {r20:6.2}");
            results.push((label, report));
        }
    }
    let rows: Vec<(String, &EvalReport)> = results.iter().map(|(l, r)| (l.clone(), r)).collect();
    write_rank_table(&dir.join("rank_table.csv"), &rows)?;
    let curves: Vec<_> = results.iter().map(|(l, r)| (l.clone(), &r.mean)).collect();
    let max_rank = results
        .iter()
        .map(|(_, r)| r.mean.rank_rates.len())
        .min()
        .unwrap_or(1)
        .min(cfg.eval.plot_max_rank);
    write_cmc_svg(&dir.join("cmc.svg"), &curves, max_rank)?;
    println!("reports -> {}", dir.display());
    Ok(())
}

pub fn verify(cfg: &RunConfig) -> Result<(), CliError> {
    let v = &cfg.verify;
    let hc = cfg.elf16.descriptor_dim();
    let mut topology = cfg.topology(hc, v.classes)?;
    topology.init_std = v.init_std;
    let image_len = topology.image_len();
    let mut lines = Vec::new();
    let mut worst: Option<(String, f64)> = None;
    for s in 0..v.grad_seeds {
        let seed = cfg.seed.wrapping_add(s);
        let model = build_ffn(topology.clone(), seed)?;
        let mut rng = stream(seed, Purpose::Probe, 0);
        let n = v.grad_batch;
        let images = Tensor::new(
            vec![n, topology.input_channels, topology.input_height, topology.input_width],
            (0..n * image_len).map(|_| rng.gen::<f64>()).collect(),
        )?;
        let descriptors = Tensor::new(vec![n, hc], (0..n * hc).map(|_| rng.gen::<f64>()).collect())?;
        let labels = (0..n).map(|_| rng.gen_range(0..v.classes)).collect();
        let mut frag = FfnFragment {
            model,
            images,
            descriptors,
            labels,
            mode: Mode::Train,
            dropout_seed: seed,
        };
        let opts = GradCheckOptions {
            max_entries_per_block: v.entries_per_block,
            seed,
            ..GradCheckOptions::default()
        };
        let report = grad_check(&mut frag, &opts)?;
        for b in &report.blocks {
            if worst.as_ref().map_or(true, |(_, e)| b.max_rel_error > *e) {
                worst = Some((format!("{} (seed {seed})", b.name), b.max_rel_error));
            }
        }
        lines.push(format!("grad_check seed {seed}: max rel error {:.3e}", report.max_rel_error()));
    }
    let mut positive = 0;
    let mut identical_max: f64 = 0.0;
    for s in 0..v.probe_seeds {
        let seed = cfg.seed.wrapping_add(s);
        let model = build_ffn(topology.clone(), seed)?;
        let mut rng = stream(seed, Purpose::Probe, 1);
        let image: Vec<f64> = (0..image_len).map(|_| rng.gen()).collect();
        let da: Vec<f64> = (0..hc).map(|_| rng.gen()).collect();
        let db: Vec<f64> = (0..hc).map(|_| rng.gen()).collect();
        let label = rng.gen_range(0..v.classes);
        let same = branch_influence_probe(&model, &image, &da, &da, label)?;
        identical_max = identical_max.max(same.grad_w7_max_diff);
        let r = branch_influence_probe(&model, &image, &da, &db, label)?;
        if r.grad_w7_max_diff > 0.0 {
            positive += 1;
        }
        lines.push(format!(
            "influence seed {seed}: dW7 {:.3e}, fusion input {:.3e}, softmax {:.3e}",
            r.grad_w7_max_diff, r.fusion_input_max_diff, r.softmax_max_diff
        ));
    }
    lines.push(format!("influence positive on {positive}/{} seeds", v.probe_seeds));
    lines.push(format!("influence with identical descriptors: {identical_max:e}"));
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("verify.txt"), &(lines.join("\n") + "\n"))?;
    for l in &lines {
        println!("{l}");
    }
    if let Some((block, err)) = worst.filter(|(_, e)| !(*e < v.grad_tolerance)) {
        return Err(CliError::Core(Error::Numerical(format!(
            "gradient check failed: block {block} has relative error {err:.3e} (tolerance {:e})",
            v.grad_tolerance
        ))));
    }
    if positive < v.probe_min_positive {
        return Err(CliError::Core(Error::Numerical(format!(
            "influence probe positive on {positive}/{} seeds, need {}",
            v.probe_seeds, v.probe_min_positive
        ))));
    }
    if identical_max != 0.0 {
        return Err(CliError::Core(Error::Numerical(format!(
            "influence probe with identical descriptors moved dW7 by {identical_max:e}"
        ))));
    }
    println!("verify: pass");
    Ok(())
}

fn benchmark_images(cfg: &RunConfig) -> Result<Vec<ImageTensor>, CliError> {
    let n = cfg.benchmark.images;
    if let Some(d) = &cfg.dataset {
        let ds = open_dataset(d)?;
        return ds
            .images
            .iter()
            .take(n)
            .map(|r| load_image(&r.path).map_err(CliError::from))
            .collect();
    }
    let [h, w] = cfg.benchmark.synthetic_size;
    let mut rng = stream(cfg.seed, Purpose::Probe, 2);
    Ok((0..n)
        .map(|_| ImageTensor::from_fn(h, w, 3, |_, _, _| rng.gen()))
        .collect())
}

pub fn benchmark(cfg: &RunConfig) -> Result<(), CliError> {
    let images = benchmark_images(cfg)?;
    let elf = elf16_features(cfg)?;
    let hc = elf.dim();
    let model = match load_model(cfg)? {
        Some(m) => m,
        None => build_ffn(cfg.topology(hc, cfg.verify.classes)?, cfg.seed)?,
    };
    let model = Arc::new(model);
    let net = NetworkFeatures::new(model.clone(), NetworkOutput::ForwardOnly);
    let cnn = NetworkFeatures::new(model.clone(), NetworkOutput::CnnFc);
    let fused = FusedFeatures::new(elf16_features(cfg)?, model.clone())?;
    let extractors: [&dyn FeatureExtractor; 4] = [&elf, &cnn, &net, &fused];
    let rows = benchmark_timing(&extractors, &images, cfg.benchmark.repeats)?;
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("benchmark.csv"), &timing_csv(&rows))?;
    let meta = format!(
        "images = {}\nrepeats = {}\nelf16_dim = {hc}\nelf16_dim_reported = {REPORTED_ELF16_DIM}\n\
         elf16_note = \"the reported 8064 is not a multiple of stripes x bins; this configuration yields {hc}\"\n\
         fused_dim = {}\n",
        rows[0].images,
        cfg.benchmark.repeats.max(1),
        model.topology().fusion_dim
    );
    write_text(&cfg.out_dir.join("benchmark_meta.toml"), &meta)?;
    println!("{:<16} {:>6} {:>12}", "extractor", "dim", "s/image");
    for r in &rows {
        println!("{:<16} {:>6} {:>12.6}", r.name, r.dim, r.seconds_per_image);
    }
    println!("elf16 dim {hc} (reported elsewhere as {REPORTED_ELF16_DIM})");
    Ok(())
}
