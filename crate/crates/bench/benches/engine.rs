use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reconlab_core::recon::{
    ista, make_cartesian_mask_1d, piecewise_phantom, simulate_kspace, zero_fill, ReconParams,
};
use reconlab_core::stats::{paired_t_test, wilcoxon_signed_rank, PairedSample};
use reconlab_core::transfer::{md5_hex, UploadManifest, UploadService};
use reconlab_core::vault::{test_keys, Vault};

fn scores(n: usize, seed: u64) -> PairedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..=50) as f64 / 10.0).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..=50) as f64 / 10.0).collect();
    PairedSample::new(x, y).unwrap()
}

fn stats(c: &mut Criterion) {
    let mut g = c.benchmark_group("paired_tests");
    for n in [198, 2_000, 20_000] {
        let sample = scores(n, n as u64);
        g.bench_with_input(BenchmarkId::new("t_test", n), &sample, |b, s| {
            b.iter(|| paired_t_test(black_box(s)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("wilcoxon", n), &sample, |b, s| {
            b.iter(|| wilcoxon_signed_rank(black_box(s)).unwrap())
        });
    }
    g.finish();
}

fn reconstruction(c: &mut Criterion) {
    let mut g = c.benchmark_group("reconstruction");
    g.sample_size(10);
    for size in [64, 128] {
        let truth = piecewise_phantom(size, size, 1);
        let vol = simulate_kspace(&[truth], size, size, 4).unwrap();
        let mask = make_cartesian_mask_1d(size, size, 0.33, 0.08, 3).unwrap();
        g.bench_with_input(BenchmarkId::new("zero_fill", size), &vol, |b, v| {
            b.iter(|| zero_fill(v, &mask).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("ista_100", size), &vol, |b, v| {
            b.iter(|| ista(v, &mask, &ReconParams::default()).unwrap())
        });
    }
    g.finish();
}

fn transfer(c: &mut Criterion) {
    let mut bytes = vec![0u8; 16 << 20];
    ChaCha8Rng::seed_from_u64(16).fill_bytes(&mut bytes);

    let mut g = c.benchmark_group("transfer");
    g.sample_size(10);
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("md5_16MiB", |b| b.iter(|| md5_hex(black_box(&bytes))));
    g.bench_function("chunked_upload_16MiB", |b| {
        b.iter(|| {
            let vault = Arc::new(Vault::in_memory(test_keys()));
            let uploads = UploadService::new(vault);
            let chunk = 4 << 20;
            let session = uploads
                .begin_upload(UploadManifest::for_bytes(&bytes, chunk as u64), "bench")
                .unwrap();
            for (i, part) in bytes.chunks(chunk).enumerate() {
                uploads.put_chunk(session.id(), i as u64, part.to_vec()).unwrap();
            }
            uploads.complete_upload(session.id()).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, stats, reconstruction, transfer);
criterion_main!(benches);
