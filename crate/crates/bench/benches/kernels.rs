use circledet_core::attention::{
    self, AttentionVariant, CdaInit, CircleQuery, DecoderWeights,
};
use circledet_core::evalap;
use circledet_core::geom::{self, Circle};
use circledet_core::matching;
use circledet_core::oracle;
use circledet_core::synthgen::{self, GenConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn random_pairs(n: usize, seed: u64) -> Vec<(Circle, Circle)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let circle = |rng: &mut ChaCha8Rng| {
        Circle::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.2..2.5))
    };
    (0..n).map(|_| (circle(&mut rng), circle(&mut rng))).collect()
}

fn bench_geometry(c: &mut Criterion) {
    let pairs = random_pairs(1024, 1);
    c.bench_function("gciou_1k_pairs", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for (a, q) in &pairs {
                acc += geom::gciou(black_box(a), black_box(q)).unwrap();
            }
            acc
        })
    });
    c.bench_function("grad_gciou_1k_pairs", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for (a, q) in &pairs {
                if let Ok(g) = geom::grad_gciou(black_box(a), black_box(q)) {
                    acc += g[0] + g[1] + g[2];
                }
            }
            acc
        })
    });
    c.bench_function("mc_intersection_100k_samples", |b| {
        let (a, q) = pairs[0];
        b.iter(|| oracle::mc_intersection_area(black_box(&a), black_box(&q), 100_000, 7).unwrap())
    });
}

fn bench_matching(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cost7: Vec<Vec<f64>> =
        (0..7).map(|_| (0..7).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    c.bench_function("hungarian_7x7", |b| {
        b.iter(|| matching::hungarian(black_box(&cost7)).unwrap())
    });
    let cost_wide: Vec<Vec<f64>> =
        (0..20).map(|_| (0..100).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    c.bench_function("hungarian_20x100", |b| {
        b.iter(|| matching::hungarian(black_box(&cost_wide)).unwrap())
    });
}

fn bench_attention(c: &mut Criterion) {
    let cfg = GenConfig { h: 32, w: 32, depth: 32, seed: 3, ..GenConfig::default() };
    let (_, grid) = synthgen::generate_scene(&cfg, 0).unwrap();
    let weights = DecoderWeights::seeded(32, 1, 8, 4, CdaInit::Sunflower, 5).unwrap();
    let queries: Vec<CircleQuery> = attention::grid_anchors(16, 0.1)
        .into_iter()
        .map(|anchor| CircleQuery { z: vec![0.0; 32], anchor })
        .collect();
    c.bench_function("decoder_layer_deformable_16q", |b| {
        b.iter(|| {
            attention::decoder_layer_forward(
                black_box(&queries),
                black_box(&grid),
                &weights.layers[0],
                AttentionVariant::Deformable,
                weights.temperature,
            )
            .unwrap()
        })
    });
    c.bench_function("decoder_layer_dense_16q", |b| {
        b.iter(|| {
            attention::decoder_layer_forward(
                black_box(&queries),
                black_box(&grid),
                &weights.layers[0],
                AttentionVariant::Dense,
                weights.temperature,
            )
            .unwrap()
        })
    });
}

fn bench_evaluation(c: &mut Criterion) {
    // a 10-image dataset with jittered predictions
    let mut gt = synthgen::AnnotationFile::default();
    let mut pred = synthgen::PredictionFile::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for img in 0..10u64 {
        let cfg = GenConfig {
            h: 128,
            w: 128,
            n_min: 20,
            n_max: 20,
            r_min: 4.0,
            r_max: 20.0,
            seed: synthgen::scene_seed(11, img),
            depth: 1,
            ..GenConfig::default()
        };
        let (scene, _) = synthgen::generate_scene(&cfg, img).unwrap();
        gt.images.push(synthgen::ImageInfo { id: img, h: 128, w: 128 });
        for c0 in &scene.circles {
            gt.annotations.push(synthgen::AnnotationRecord {
                image_id: img,
                x: c0.x,
                y: c0.y,
                r: c0.r,
            });
            pred.predictions.push(synthgen::PredictionRecord {
                image_id: img,
                x: c0.x + rng.gen_range(-2.0..2.0),
                y: c0.y + rng.gen_range(-2.0..2.0),
                r: c0.r * rng.gen_range(0.8..1.2),
                score: rng.gen_range(0.1..1.0),
            });
        }
    }
    c.bench_function("ap_summary_10_images", |b| {
        b.iter_batched(
            || (gt.clone(), pred.clone()),
            |(g, p)| evalap::ap_summary(black_box(&g), black_box(&p)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_geometry, bench_matching, bench_attention, bench_evaluation);
criterion_main!(benches);
