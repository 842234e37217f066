use criterion::{criterion_group, criterion_main, Criterion};
use foramslice_bench::{index, middle_slice, volumes};
use foramslice_core::curation::{split_specimens, SplitParams};
use foramslice_core::matcher::{match_query, MatchParams};
use foramslice_core::{MatchQuery, SpecimenStats};

fn matching(c: &mut Criterion) {
    let vols = volumes([64, 64, 32]);
    let corpus = index(&vols, 96);
    let query = MatchQuery::from_image(middle_slice(&vols[2]), &corpus.params.preprocess, MatchParams::default())
        .expect("query segments");
    let mut g = c.benchmark_group("matcher");
    g.sample_size(10);
    g.bench_function("index_5x32", |b| b.iter(|| index(&vols, 96)));
    g.bench_function("query_5x32", |b| b.iter(|| match_query(&query, &corpus).unwrap()));
    g.finish();
}

fn splitting(c: &mut Criterion) {
    let species = ["Alveolina", "Lockhartia", "Orbitoides", "Fallotia"];
    let stats: Vec<SpecimenStats> = (0..24)
        .map(|i| SpecimenStats::new(format!("S{i}"), species[i % 4], 40 + (i as u64 * 37) % 90))
        .collect();
    let params = SplitParams::default();
    c.bench_function("split_24_specimens", |b| b.iter(|| split_specimens(&stats, &params).unwrap()));
}

criterion_group!(benches, matching, splitting);
criterion_main!(benches);
