use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kalm::contexts::build_bundles;
use kalm::kgstore::khop_neighborhood;
use kalm::model::{batch_gradients, bundle_config, embed_kg, KalmModel, ModelSpec};
use kalm_bench::{bench_config, corpus};

fn contexts(c: &mut Criterion) {
    let cfg = bench_config();
    let data = corpus(&cfg);
    let bc = bundle_config(&cfg);
    c.bench_function("build_bundles_40_docs", |b| {
        b.iter(|| build_bundles(black_box(&data.docs), &data.kg, &data.table, &bc, kalm::contexts::EmbeddingSource::Hashed).unwrap())
    });
    let seeds = data.docs[0].mentioned_entities();
    c.bench_function("khop_2", |b| b.iter(|| khop_neighborhood(&data.kg, black_box(&seeds), 2).unwrap()));
    c.bench_function("transe_50_epochs", |b| b.iter(|| embed_kg(black_box(&data.kg), &cfg).unwrap()));
}

fn model(c: &mut Criterion) {
    let cfg = bench_config();
    let data = corpus(&cfg);
    let model = KalmModel::new(&ModelSpec::from_config(&cfg, cfg.n_classes), 0).unwrap();
    c.bench_function("predict_one_doc", |b| b.iter(|| model.predict(black_box(&data.bundles[0])).unwrap()));
    let batch: Vec<usize> = (0..cfg.batch_size).collect();
    c.bench_function("batch_gradients_16_docs", |b| {
        b.iter(|| batch_gradients(&model, &data.bundles, black_box(&batch), cfg.dropout, 0, 1).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = contexts, model
}
criterion_main!(benches);
