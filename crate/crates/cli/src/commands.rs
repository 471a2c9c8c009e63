use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use kalm::contexts::{generate_synthetic_corpus, save_corpus, sharing_pair_count, ContextBundle};
use kalm::insight::{
    ablation_csv, ablation_suite, attention_report_from, efficiency_sweep, error_grid, majority_baseline, metric_fields,
    standard_variants, sweep_csv, Bins,
};
use kalm::io::write_atomic;
use kalm::kgstore::save_kg;
use kalm::layers::FusionKind;
use kalm::model::{
    class_count, embed_kg, evaluate, prepare_bundles, stratified_split, train as train_model, KalmModel, Metrics, Split,
    TrainConfig,
};

use crate::inputs::{source, Context, CONFIG_FILE};

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_metrics(path: &Path, m: &Metrics) -> Result<()> {
    let mut json = serde_json::to_string_pretty(m)?;
    json.push('\n');
    write_text(path, &json)
}

fn split_of(bundles: &[ContextBundle], cfg: &TrainConfig) -> Result<Split> {
    let labels: Vec<usize> = bundles.iter().map(|b| b.label).collect();
    Ok(stratified_split(&labels, cfg.seed)?)
}

fn summary(what: &str, m: &Metrics) {
    println!(
        "{what}: acc={:.4} maf={:.4} mif={:.4}",
        m.acc, m.macro_f1, m.micro_f1
    );
}

pub fn gen(ctx: &Context) -> Result<()> {
    let cfg = ctx.config();
    let (kg, docs) = generate_synthetic_corpus(cfg.seed, cfg.n_docs, cfg.kg_size, cfg.n_classes)?;
    save_corpus(&ctx.corpus, &docs)?;
    let (t, d) = ctx.kg_paths();
    save_kg(&kg, &t, &d)?;
    write_text(&ctx.out.join(CONFIG_FILE), &cfg.to_text())?;
    println!(
        "generated {} documents over {} entities into {}",
        docs.len(),
        kg.entity_count(),
        ctx.out.display()
    );
    Ok(())
}

pub fn build(ctx: &Context) -> Result<()> {
    let cfg = ctx.config();
    let kg = ctx.load_kg()?;
    let docs = ctx.load_docs(&kg)?;
    let table = embed_kg(&kg, cfg)?;
    table.save(&ctx.kge_prefix())?;
    let file = ctx.interchange()?;
    let bundles = prepare_bundles(&kg, &docs, &table, cfg, source(&file))?;
    let mut out = String::from("doc_id,label,n_paragraphs,n_mentioned,sharing_pairs,global_entities,warnings\n");
    for b in &bundles {
        let pairs = b.doc.as_ref().map_or(String::new(), |g| sharing_pair_count(&g.edges).to_string());
        let global = b.global.as_ref().map_or(String::new(), |g| g.entities.len().to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{pairs},{global},{}",
            b.doc_id,
            b.label,
            b.n_paragraphs,
            b.n_mentioned,
            b.warnings.len()
        );
    }
    write_text(&ctx.out.join("contexts.csv"), &out)?;
    println!("built contexts for {} documents", bundles.len());
    Ok(())
}

pub fn train(ctx: &Context) -> Result<()> {
    let cfg = ctx.config();
    let kg = ctx.load_kg()?;
    let docs = ctx.load_docs(&kg)?;
    let table = ctx.table(&kg, cfg)?;
    let file = ctx.interchange()?;
    let bundles = prepare_bundles(&kg, &docs, &table, cfg, source(&file))?;
    let split = split_of(&bundles, cfg)?;
    let n_classes = class_count(&bundles, cfg.n_classes);
    let outcome = train_model(&bundles, &split, cfg, n_classes, Some(&ctx.out.join("train_log.csv")))?;
    outcome.model.save(&ctx.model_dir)?;
    write_text(&ctx.model_dir.join(CONFIG_FILE), &cfg.to_text())?;
    write_metrics(&ctx.out.join("metrics.json"), &outcome.test.metrics)?;
    println!(
        "trained {} epochs, best epoch {}, max train acc {:.4}",
        outcome.epochs_run,
        outcome.best_epoch,
        outcome.max_train_acc()
    );
    summary("test", &outcome.test.metrics);
    Ok(())
}

/// Checkpoint, its configuration and test-split bundles built to match it.
struct Loaded {
    cfg: TrainConfig,
    model: KalmModel,
    bundles: Vec<ContextBundle>,
    split: Split,
}

fn load_for_model(ctx: &Context) -> Result<Loaded> {
    let model = KalmModel::load(&ctx.model_dir)?;
    let mut cfg = ctx.model_config()?;
    cfg.contexts = model.arch.mask;
    let kg = ctx.load_kg()?;
    let docs = ctx.load_docs(&kg)?;
    let table = ctx.table(&kg, &cfg)?;
    let file = ctx.interchange()?;
    let bundles = prepare_bundles(&kg, &docs, &table, &cfg, source(&file))?;
    let split = split_of(&bundles, &cfg)?;
    Ok(Loaded {
        cfg,
        model,
        bundles,
        split,
    })
}

pub fn eval(ctx: &Context) -> Result<()> {
    let l = load_for_model(ctx)?;
    let ev = evaluate(&l.model, &l.bundles, &l.split.test, false)?;
    write_metrics(&ctx.out.join("eval_metrics.json"), &ev.metrics)?;
    summary("test", &ev.metrics);
    Ok(())
}

pub fn explain(ctx: &Context) -> Result<()> {
    let l = load_for_model(ctx)?;
    let fusion = l.model.spec().fusion_kind()?;
    let capture = l.cfg.capture_attention && fusion == FusionKind::ContextFusion;
    let ev = evaluate(&l.model, &l.bundles, &l.split.test, capture)?;
    if capture {
        let report = attention_report_from(&ev.docs, l.model.arch.mask)?;
        write_text(&ctx.out.join("attention.csv"), &report.to_csv())?;
    } else {
        log::warn!("fusion attention not captured (fusion={fusion}, capture_attention={}); skipping attention.csv", l.cfg.capture_attention);
    }
    let grid = error_grid(
        &ev.docs,
        &l.bundles,
        Bins::new(l.cfg.length_bins.clone())?,
        Bins::new(l.cfg.entity_bins.clone())?,
    )?;
    write_text(&ctx.out.join("error_grid.csv"), &grid.to_csv())?;
    summary("test", &ev.metrics);
    Ok(())
}

pub fn ablate(ctx: &Context) -> Result<()> {
    let cfg = ctx.config();
    let kg = ctx.load_kg()?;
    let docs = ctx.load_docs(&kg)?;
    let table = ctx.table(&kg, cfg)?;
    let file = ctx.interchange()?;
    let n_classes = docs.iter().map(|d| d.label + 1).max().unwrap_or(0).max(cfg.n_classes);
    let rows = ablation_suite(&kg, &docs, &table, cfg, n_classes, &standard_variants(), source(&file))?;
    write_text(&ctx.out.join("ablation.csv"), &ablation_csv(&rows))?;
    for r in &rows {
        summary(&r.variant, &r.metrics);
    }
    Ok(())
}

pub fn sweep(ctx: &Context) -> Result<()> {
    let cfg = ctx.config();
    let kg = ctx.load_kg()?;
    let docs = ctx.load_docs(&kg)?;
    let table = ctx.table(&kg, cfg)?;
    let file = ctx.interchange()?;
    let bundles = prepare_bundles(&kg, &docs, &table, cfg, source(&file))?;
    let split = split_of(&bundles, cfg)?;
    let n_classes = class_count(&bundles, cfg.n_classes);
    let rows = efficiency_sweep(&bundles, &split, cfg, n_classes, &cfg.fractions)?;
    write_text(&ctx.out.join("sweep.csv"), &sweep_csv(&rows))?;
    let base = majority_baseline(&bundles, &split, n_classes)?;
    let baseline = format!("predictor,acc,bacc,maf,mif,map,mar\nmajority,{}\n", metric_fields(&base));
    write_text(&ctx.out.join("baseline.csv"), &baseline)?;
    for r in &rows {
        summary(&format!("fraction {}", r.fraction), &r.metrics);
    }
    summary("majority", &base);
    Ok(())
}
