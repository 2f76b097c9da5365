use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use g3_core::corpus::{compute_corpus_stats, extract_clues, read_clues, write_clues, HeadingMap, RawGuidebook};
use g3_core::dataset::{read_panoramas, split_panoramas, DatasetManifest, Split, SplitRatios};
use g3_core::embedstore::{read_store, synth_generate, write_store, SyntheticWorldConfig};
use g3_core::eval::explain::explain;
use g3_core::eval::{
    ablation_grid, evaluate, mean_std, predictions, AblationConfig, AblationInputs, EvalReport, ReportRow, Supervision,
};
use g3_core::geoparse::{
    build_pseudo_labels, parse_places, CountryLexicon, Gazetteer, PseudoLabelMatrix, DEFAULT_PLACES,
};
use g3_core::labels::LabelSet;
use g3_core::model::{read_checkpoint, write_checkpoint, AttnNormalization, Checkpoint, CheckpointMeta, PosWeight};
use g3_core::stats::histograms;
use g3_core::trainer::{grid_search_alpha, init_params, train_with, SeedRun, TrainConfig};

use crate::run::{absolute, resolve, Loaded, RunInputs, CHECKPOINT_DIR, FINAL_CHECKPOINT};
use crate::stamp::Stamp;
use crate::*;

struct Ctx {
    data_dir: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        resolve(self.data_dir.as_deref(), p)
    }

    fn opt(&self, p: &Option<PathBuf>) -> Option<PathBuf> {
        p.as_deref().map(|p| self.path(p))
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        data_dir: cli.data_dir.clone(),
    };
    match &cli.command {
        Command::Corpus(CorpusCmd::Extract(a)) => corpus_extract(&ctx, a),
        Command::Geoparse(GeoparseCmd::BuildLabels(a)) => build_labels(&ctx, a),
        Command::Dataset(DatasetCmd::Split(a)) => dataset_split(&ctx, a),
        Command::Synth(SynthCmd::Generate(a)) => synth(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Explain(a) => explain_cmd(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| anyhow!("bad {what} {p:?}: {e}")))
        .collect()
}

fn lexicon(ctx: &Ctx, path: &Option<PathBuf>) -> Result<(CountryLexicon, Option<PathBuf>)> {
    match ctx.opt(path) {
        Some(p) => Ok((CountryLexicon::read(&p)?, Some(p))),
        None => Ok((CountryLexicon::builtin(), None)),
    }
}

fn corpus_extract(ctx: &Ctx, a: &ExtractArgs) -> Result<()> {
    let guide_path = ctx.path(&a.guide);
    let text = std::fs::read_to_string(&guide_path).with_context(|| format!("reading {}", guide_path.display()))?;
    let source = guide_path
        .file_stem()
        .map_or("guide".into(), |s| s.to_string_lossy().into_owned());
    let guide = RawGuidebook::parse(source, &text);
    let (lex, lex_path) = lexicon(ctx, &a.lexicon)?;
    let places_path = ctx.opt(&a.places);
    let places = match &places_path {
        Some(p) => parse_places(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => parse_places(DEFAULT_PLACES),
    };
    let heading_path = ctx.opt(&a.heading_map);
    let headings = match &heading_path {
        Some(p) => HeadingMap::read(p)?,
        None => HeadingMap::default(),
    };
    let clues = extract_clues(&guide, &Gazetteer::new(&lex, &places), &headings);
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    write_clues(&clues, &out)?;
    let stats = compute_corpus_stats(&clues);
    log::info!(
        "{} clues, {:.1} words on average, {} unique words",
        stats.n_clues,
        stats.mean_words,
        stats.unique_words
    );
    let mut stamp = Stamp::new("corpus extract", None, &stats)?;
    stamp.input(&guide_path)?;
    stamp.inputs(lex_path.iter().chain(&places_path).chain(&heading_path))?;
    stamp.write_beside(&out)
}

fn build_labels(ctx: &Ctx, a: &BuildLabelsArgs) -> Result<()> {
    let clues_path = ctx.path(&a.clues);
    let mut clues = read_clues(&clues_path)?;
    let (lex, lex_path) = lexicon(ctx, &a.lexicon)?;
    let label_path = ctx.path(&a.label_set);
    let labels = LabelSet::read(&label_path)?;
    let mut stamp = Stamp::new("geoparse build-labels", None, serde_json::json!({}))?;
    stamp.input(&clues_path)?.input(&label_path)?;
    stamp.inputs(&lex_path)?;

    let pseudo = build_pseudo_labels(&mut clues, &lex, &labels)?;
    let summary = pseudo.summary(&labels);
    log::info!(
        "{} clues, {:.2} clues per country on average ({:.2}% of the corpus), {} unmatched",
        summary.n_clues,
        summary.mean_clues_per_country,
        100.0 * summary.mean_fraction_of_corpus,
        summary.unmatched_clues
    );
    stamp.config = serde_json::to_value(&summary)?;
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    pseudo.write(&out)?;
    stamp.write_beside(&out)?;
    let clues_out = ctx.opt(&a.clues_out).unwrap_or(clues_path);
    create_parent(&clues_out)?;
    write_clues(&clues, &clues_out)?;
    Ok(())
}

fn dataset_split(ctx: &Ctx, a: &SplitArgs) -> Result<()> {
    let panos_path = ctx.path(&a.panoramas);
    let panos = read_panoramas(&panos_path)?;
    let ratios: SplitRatios = a.ratios.parse()?;
    let manifest = split_panoramas(&panos, ratios, a.test_per_country, a.seed)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        log::info!("{split}: {} images", manifest.split(split).count());
    }
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    manifest.write(&out)?;
    let config = serde_json::json!({"ratios": a.ratios, "test_per_country": a.test_per_country});
    let mut stamp = Stamp::new("dataset split", Some(a.seed), config)?;
    stamp.input(&panos_path)?;
    stamp.write_beside(&out)
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let cfg_path = ctx.path(&a.config);
    let mut cfg: SyntheticWorldConfig = read_json(&cfg_path)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    log::info!("synthetic world config: {}", serde_json::to_string(&cfg)?);
    let clues_path = ctx.path(&a.clues);
    let manifest_path = ctx.path(&a.manifest);
    let clues = read_clues(&clues_path)?;
    if clues.iter().all(|c| c.countries.is_empty()) {
        log::warn!("no clue has countries; run `geoparse build-labels` first for clue signal");
    }
    let manifest = DatasetManifest::read(&manifest_path)?;
    let stores = synth_generate(&cfg, &clues, &manifest)?;
    let dir = ctx.path(&a.out_dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, store) in [
        ("query", &stores.query),
        ("feature", &stores.feature),
        ("clue", &stores.clue),
        ("random_clue", &stores.random_clue),
    ] {
        write_store(store, &dir.join(format!("{name}.geb")))?;
    }
    let mut stamp = Stamp::new("synth generate", Some(cfg.seed), &cfg)?;
    stamp.input(&cfg_path)?.input(&clues_path)?.input(&manifest_path)?;
    stamp.write(&dir.join("stamp.json"))
}

fn train_config(ctx: &Ctx, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = read_config(ctx.opt(&a.config).as_deref())?;
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.lr {
        cfg.lr_main = v;
    }
    if let Some(v) = a.lr_attn {
        cfg.lr_attn = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = &a.pos_weight {
        cfg.pos_weight = if v == "auto" {
            PosWeight::Auto
        } else {
            PosWeight::Fixed(v.parse().map_err(|e| anyhow!("bad --pos-weight {v:?}: {e}"))?)
        };
    }
    if a.no_shuffle {
        cfg.shuffle = false;
    }
    if a.no_attn_relu {
        cfg.attn_relu = false;
    }
    if let Some(n) = a.normalize {
        cfg.normalization = match n {
            NormalizeArg::Mean => AttnNormalization::Mean,
            NormalizeArg::SumOfWeights => AttnNormalization::SumOfWeights,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Timing {
    wall_time_secs: f64,
    epochs: usize,
    train_images: usize,
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let mut cfg = train_config(ctx, a)?;
    let d = &a.data;
    let mut inputs = RunInputs {
        label: a.label.clone(),
        manifest: absolute(&ctx.path(&d.manifest))?,
        query_store: absolute(&ctx.path(&d.query_store))?,
        feature_stores: d
            .feature_stores
            .iter()
            .map(|p| absolute(&ctx.path(p)))
            .collect::<Result<_>>()?,
        clue_store: ctx.opt(&d.clue_store).map(|p| absolute(&p)).transpose()?,
        pseudo: ctx.opt(&d.pseudo).map(|p| absolute(&p)).transpose()?,
        clues: ctx.opt(&d.clues).map(|p| absolute(&p)).transpose()?,
        alpha: cfg.alpha,
    };
    let loaded = Loaded::load(&inputs)?;
    let data = loaded.train_data()?;

    let out = ctx.path(&a.out);
    std::fs::create_dir_all(out.join(CHECKPOINT_DIR)).with_context(|| format!("creating {}", out.display()))?;
    let mut stamp_files: Vec<PathBuf> = inputs.files().into_iter().cloned().collect();
    if let Some(p) = ctx.opt(&a.config) {
        stamp_files.push(p);
    }

    if let Some(grid) = &a.alpha_grid {
        let grid: Vec<f64> = parse_list(grid, "alpha")?;
        if loaded.pseudo.is_none() && grid.iter().any(|&x| x > 0.0) {
            bail!("an alpha grid above 0 needs --pseudo");
        }
        let search = grid_search_alpha(&cfg, &grid, &data)?;
        for (alpha, top1) in &search.val_top1 {
            log::info!("alpha {alpha}: val Top-1 {top1:.4}");
        }
        log::info!("selected alpha {}", search.best_alpha);
        write_json(&out.join("alpha_search.json"), &search)?;
        cfg.alpha = search.best_alpha;
        inputs.alpha = cfg.alpha;
    }
    if loaded.pseudo.is_none() && cfg.alpha > 0.0 {
        bail!(
            "alpha {} needs attention pseudo labels (--pseudo); pass --alpha 0 to train without them",
            cfg.alpha
        );
    }
    log::info!("train config: {}", serde_json::to_string(&cfg)?);

    let started = Instant::now();
    let params = init_params(&cfg, &data);
    let meta = |epoch| CheckpointMeta {
        alpha: cfg.alpha,
        seed: cfg.seed,
        epoch,
    };
    let (params, record) = train_with(&cfg, params, &data, |ep, p| {
        let path = out.join(CHECKPOINT_DIR).join(format!("epoch_{:04}.g3ck", ep.epoch));
        write_checkpoint(
            &Checkpoint {
                meta: meta(ep.epoch),
                params: p.clone(),
            },
            &path,
        )
    })?;
    write_checkpoint(
        &Checkpoint {
            meta: meta(cfg.epochs),
            params,
        },
        &out.join(FINAL_CHECKPOINT),
    )?;
    write_json(&out.join("record.json"), &record)?;
    write_json(
        &out.join("timing.json"),
        &Timing {
            wall_time_secs: started.elapsed().as_secs_f64(),
            epochs: cfg.epochs,
            train_images: data.train.len(),
        },
    )?;
    inputs.write(&out)?;
    let mut stamp = Stamp::new("train", Some(cfg.seed), &cfg)?;
    stamp.inputs(&stamp_files)?;
    stamp.write(&out.join("stamp.json"))?;
    if let Some(last) = record.epochs.last() {
        log::info!("final loss {:.5}, val {:?}", last.loss.total, last.val_topk);
    }
    Ok(())
}

fn supervision(inputs: &RunInputs, loaded: &Loaded) -> Supervision {
    if loaded.clues.nrows() == 0 {
        Supervision::NotApplicable
    } else if loaded.pseudo.is_some() && inputs.alpha > 0.0 {
        Supervision::Yes
    } else {
        Supervision::No
    }
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let run_dir = ctx.path(&a.run);
    let inputs = RunInputs::read(&run_dir)?;
    let loaded = Loaded::load(&inputs)?;
    let split: Split = a.split.parse()?;
    let ks: Vec<usize> = parse_list(&a.ks, "k")?;
    let ck_path = ctx.opt(&a.checkpoint).unwrap_or_else(|| run_dir.join(FINAL_CHECKPOINT));
    let ck = read_checkpoint(&ck_path)?;
    let set = loaded.image_set(split)?;
    if set.is_empty() {
        bail!("the {split} split is empty");
    }
    let topk = evaluate(&ck.params, &set, &loaded.clues, &ks)?;
    let preds = predictions(&ck.params, &set, &loaded.clues, &loaded.labels, a.top, a.top)?;
    let report = EvalReport {
        split,
        ks: ks.clone(),
        rows: vec![ReportRow {
            model: inputs.label.clone(),
            attn_supervision: supervision(&inputs, &loaded),
            topk: topk.iter().map(|(&k, &v)| (k, mean_std(&[v]))).collect(),
            per_seed: vec![SeedRun {
                seed: ck.meta.seed,
                topk,
            }],
        }],
        predictions: preds,
    };
    report.validate()?;
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    report.write(&out)?;
    print!("{}", report.to_table());
    let mut stamp = Stamp::new(
        "eval",
        Some(ck.meta.seed),
        serde_json::json!({"split": split, "ks": ks}),
    )?;
    stamp.input(&ck_path)?.inputs(inputs.files())?;
    stamp.write_beside(&out)
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let cfg_path = ctx.opt(&a.config);
    let mut cfg: AblationConfig = read_config(cfg_path.as_deref())?;
    if let Some(n) = a.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(ks) = &a.ks {
        cfg.ks = parse_list(ks, "k")?;
    }
    if let Some(s) = &a.split {
        cfg.eval_split = s.parse()?;
    }
    log::info!("ablation config: {}", serde_json::to_string(&cfg)?);
    let manifest_path = ctx.path(&a.manifest);
    let manifest = DatasetManifest::read(&manifest_path)?;
    let labels = manifest.label_set()?;
    let query_path = ctx.path(&a.query_store);
    let feature_path = ctx.path(&a.feature_store);
    let query = read_store(&query_path)?;
    let feature = read_store(&feature_path)?;
    let clue_path = ctx.opt(&a.clue_store);
    let random_path = ctx.opt(&a.random_clue_store);
    let pseudo_path = ctx.opt(&a.pseudo);
    let clues = clue_path.as_deref().map(read_store).transpose()?;
    let random = random_path.as_deref().map(read_store).transpose()?;
    let pseudo = pseudo_path.as_deref().map(PseudoLabelMatrix::read).transpose()?;
    let weights = g3_core::dataset::class_weights(&manifest, &labels)?.to_vec(&labels)?;
    let inputs = AblationInputs {
        manifest: &manifest,
        labels: &labels,
        query: &query,
        feature: &feature,
        clues: clues.as_ref(),
        random_clues: random.as_ref(),
        pseudo: pseudo.as_ref(),
        class_weights: weights,
    };
    let report = ablation_grid(&inputs, &cfg)?;
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    report.write(&out)?;
    let table = report.to_table();
    std::fs::write(out.with_extension("txt"), &table)?;
    print!("{table}");
    let mut stamp = Stamp::new("ablate", None, &cfg)?;
    stamp.input(&manifest_path)?.input(&query_path)?.input(&feature_path)?;
    stamp.inputs(
        cfg_path
            .iter()
            .chain(&clue_path)
            .chain(&random_path)
            .chain(&pseudo_path),
    )?;
    stamp.write_beside(&out)
}

fn explain_cmd(ctx: &Ctx, a: &ExplainArgs) -> Result<()> {
    let run_dir = ctx.path(&a.run);
    let inputs = RunInputs::read(&run_dir)?;
    let loaded = Loaded::load(&inputs)?;
    if loaded.clues.nrows() == 0 {
        bail!("the run has no clues to explain");
    }
    let clue_path = ctx
        .opt(&a.clues)
        .or_else(|| inputs.clues.clone())
        .ok_or_else(|| anyhow!("no clue texts recorded with the run; pass --clues"))?;
    let clues = read_clues(&clue_path)?;
    let ck = read_checkpoint(&run_dir.join(FINAL_CHECKPOINT))?;
    let ids = [a.image_id.clone()];
    let query = loaded.query.select(&ids)?;
    let parts = loaded
        .features
        .iter()
        .map(|f| f.select(&ids).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let feature = ndarray::concatenate(ndarray::Axis(1), &views)?;
    let ex = explain(&ck.params, query.row(0), feature.row(0), &loaded.clues, &clues, a.k)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&ex)?);
    } else {
        let country = loaded
            .manifest
            .records
            .iter()
            .find(|r| r.image_id == a.image_id)
            .map_or("?", |r| r.country.as_str());
        println!("{} ({country})", a.image_id);
        for (i, e) in ex.iter().enumerate() {
            println!("{:>3}  {:.4}  [{}]  {}", i + 1, e.weight, e.countries.join(","), e.text);
        }
    }
    Ok(())
}

fn stats(ctx: &Ctx, a: &StatsArgs) -> Result<()> {
    let clues_path = ctx.path(&a.clues);
    let clues = read_clues(&clues_path)?;
    let pseudo_path = ctx.opt(&a.pseudo);
    let manifest_path = ctx.opt(&a.manifest);
    let pseudo = pseudo_path.as_deref().map(PseudoLabelMatrix::read).transpose()?;
    let manifest = manifest_path.as_deref().map(DatasetManifest::read).transpose()?;
    let h = histograms(&clues, pseudo.as_ref(), manifest.as_ref());
    print!("{}", h.to_text());
    if let Some(out) = ctx.opt(&a.out) {
        let corpus = compute_corpus_stats(&clues);
        let mut doc = BTreeMap::new();
        doc.insert("corpus", serde_json::to_value(&corpus)?);
        doc.insert("histograms", serde_json::to_value(&h)?);
        write_json(&out, &doc)?;
        let mut stamp = Stamp::new("stats", None, serde_json::json!({}))?;
        stamp
            .input(&clues_path)?
            .inputs(pseudo_path.iter().chain(&manifest_path))?;
        stamp.write_beside(&out)?;
    }
    Ok(())
}
