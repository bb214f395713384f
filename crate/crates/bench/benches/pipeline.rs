use criterion::{BatchSize, Criterion, criterion_group, criterion_main};
use evstab_core::evsim::{EventStream, synthesize};
use evstab_core::harness::{ExperimentSpec, FrameCursor};
use evstab_core::pipeline::{EventFrame, batch, detect_stars, median_filter};
use evstab_core::tracker::Tracker;
use evstab_core::trajectory::{TrajectoryKind, TrajectorySpec, generate};

fn fixture(sigma_arcsec: f64, duration_s: f64) -> (ExperimentSpec, EventStream) {
    let spec = ExperimentSpec::new(TrajectoryKind::Linear, sigma_arcsec, 30.0, 100_000, duration_s, 7);
    let gt = generate(&TrajectorySpec {
        kind: spec.trajectory,
        duration_s: spec.duration_s,
        rate_hz: spec.noise_rate_hz,
        noise_sigma_arcsec: spec.noise_sigma_arcsec,
        seed: spec.seed,
        start: spec.start,
    })
    .unwrap();
    let stream = synthesize(&gt, spec.star_field(), spec.geom, spec.sim).unwrap();
    (spec, stream)
}

fn bench_pipeline(c: &mut Criterion) {
    let (spec, stream) = fixture(8.4, 2.0);
    let frames = batch(&stream, spec.frame_delta_t_us).unwrap();
    let busy: &EventFrame = frames
        .iter()
        .max_by_key(|f| f.event_count)
        .expect("fixture produces frames");

    c.bench_function("frame_build_2s", |b| {
        b.iter(|| {
            let cursor = FrameCursor::new(&stream, spec.frame_delta_t_us).unwrap();
            let mut total = 0u64;
            for frame in cursor {
                total += frame.event_count;
            }
            total
        })
    });

    c.bench_function("median_filter", |b| b.iter(|| median_filter(busy)));

    let filtered = median_filter(busy);
    c.bench_function("detect_stars", |b| b.iter(|| detect_stars(&filtered, 4)));

    c.bench_function("tracker_full_run", |b| {
        b.iter_batched(
            || Tracker::new(spec.tracker.clone()),
            |mut tracker| {
                for frame in &frames {
                    tracker.process(frame);
                }
                tracker.map().map_or(0, |m| m.stars.len())
            },
            BatchSize::SmallInput,
        )
    });

    c.bench_function("frame_total", |b| {
        b.iter_batched(
            || Tracker::new(spec.tracker.clone()),
            |mut tracker| {
                let cursor = FrameCursor::new(&stream, spec.frame_delta_t_us).unwrap();
                let mut inliers = 0u32;
                for frame in cursor {
                    let frame = median_filter(&frame);
                    inliers += tracker.process(&frame).inlier_count;
                }
                inliers
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
