use criterion::{black_box, criterion_group, criterion_main, Criterion};
use foramslice_bench::{mask_of, middle_slice, volumes};
use foramslice_core::metrics::{dice, hu_moments, ncc, orb_detect, ssim, OrbParams, SsimParams};
use foramslice_core::preprocess::{otsu_threshold, preprocess_pipeline, resize_bilinear};
use foramslice_core::PreprocessParams;

fn preprocess(c: &mut Criterion) {
    let vols = volumes([128, 128, 32]);
    let slice = middle_slice(&vols[1]);
    let params = PreprocessParams::default();
    c.bench_function("otsu_128", |b| b.iter(|| otsu_threshold(black_box(&slice))));
    c.bench_function("preprocess_128_to_224", |b| b.iter(|| preprocess_pipeline(black_box(&slice), &params)));
}

fn metrics(c: &mut Criterion) {
    let vols = volumes([128, 128, 32]);
    let a = resize_bilinear(&middle_slice(&vols[1]), 224);
    let b = resize_bilinear(&middle_slice(&vols[3]), 224);
    let (ma, mb) = (mask_of(&a), mask_of(&b));
    let sp = SsimParams::default();
    let op = OrbParams::default();
    c.bench_function("ssim_224", |bn| bn.iter(|| ssim(black_box(&a), black_box(&b), &sp)));
    c.bench_function("ncc_224", |bn| bn.iter(|| ncc(black_box(&a), black_box(&b))));
    c.bench_function("dice_224", |bn| bn.iter(|| dice(black_box(&ma), black_box(&mb))));
    c.bench_function("hu_224", |bn| bn.iter(|| hu_moments(black_box(&ma))));
    c.bench_function("orb_detect_224", |bn| bn.iter(|| orb_detect(black_box(&a), &op)));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = preprocess, metrics
}
criterion_main!(benches);
