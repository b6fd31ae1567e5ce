//! End-to-end clip inference per support count, on the rayon pool and on a
//! one-thread pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;
use ssvd_core::flow::FlowProvider;
use ssvd_core::par::is_parallel;
use ssvd_core::pipeline::{infer_video, Detector, PipelineConfig};
use ssvd_core::synth::{render_scene, suite_scene, SuiteKind};
use std::sync::Arc;
use std::time::Duration;

fn pipeline(c: &mut Criterion) {
    let mut spec = suite_scene(SuiteKind::Blur, 20_000);
    spec.frame_count = 9;
    if let Some(b) = &mut spec.degradations.blur {
        b.frames.retain(|&f| f < 9);
    }
    let (frames, truth) = render_scene(&spec).unwrap();
    let provider = FlowProvider::ExactSynthetic(Arc::new(truth));

    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    let backend = if is_parallel() { "rayon" } else { "sequential" };
    let mut pools = vec![(format!("{backend}-1"), ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if n > 1 {
        pools.push((format!("{backend}-{n}"), ThreadPoolBuilder::new().num_threads(n).build().unwrap()));
    }

    let mut g = c.benchmark_group("clip_9_frames");
    g.sample_size(10).measurement_time(Duration::from_secs(5)).warm_up_time(Duration::from_secs(1));
    for supports in [0, 2, 6] {
        let mut cfg = PipelineConfig::default();
        cfg.aggregation.k = 4;
        cfg.aggregation.buffer_capacity = 9;
        cfg.aggregation.supports = supports;
        let det = Detector::new(&cfg, spec.height, spec.width).unwrap();
        for (name, pool) in &pools {
            g.bench_function(BenchmarkId::new(format!("supports_{supports}"), name), |b| {
                b.iter(|| pool.install(|| infer_video(&det, &frames, &provider).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
