use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use shapeservo::controller::{compute_error, control_step, Scenario};
use shapeservo::jacobians::{block_diag_image_jacobian, build_shape_jacobian, damped_pinv};
use shapeservo::{run_episode, ImageJacobianMode, JacobianMethod};
use shapeservo_bench::{bent_robot, offset_reference};

fn image_pinv(c: &mut Criterion) {
    let mut group = c.benchmark_group("image_jacobian_pinv");
    for n in [2usize, 3, 4, 6, 8] {
        let (setup, _, features) = bent_robot(n);
        let j =
            block_diag_image_jacobian(&features, &setup.camera, ImageJacobianMode::LogDepth, 10.0)
                .unwrap();
        let dense = j.to_dense();
        let mu = setup.gains.damping;
        group.bench_with_input(BenchmarkId::new("blockwise", n), &j, |b, j| {
            b.iter(|| j.pinv_blockwise(black_box(mu)))
        });
        group.bench_with_input(BenchmarkId::new("assembled", n), &dense, |b, m| {
            b.iter(|| damped_pinv(black_box(m), mu))
        });
    }
    group.finish();
}

fn shape_jacobian(c: &mut Criterion) {
    let mut group = c.benchmark_group("shape_jacobian");
    for n in [2usize, 3, 4] {
        let (setup, cables, _) = bent_robot(n);
        for (name, method) in [
            ("analytic", JacobianMethod::Analytic),
            (
                "central_difference",
                JacobianMethod::CentralDifference { step: 1e-4 },
            ),
        ] {
            group.bench_with_input(BenchmarkId::new(name, n), &cables, |b, cables| {
                b.iter(|| build_shape_jacobian(&setup.robot, black_box(cables), method).unwrap())
            });
        }
    }
    group.finish();
}

fn control(c: &mut Criterion) {
    let mut group = c.benchmark_group("control_step");
    for n in [2usize, 3] {
        let (setup, cables, features) = bent_robot(n);
        let error = compute_error(&features, &offset_reference(&features)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cables, |b, cables| {
            b.iter(|| {
                control_step(
                    black_box(cables),
                    &error,
                    &features,
                    &setup.camera,
                    &setup.robot,
                    &setup.gains,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn episode(c: &mut Criterion) {
    let mut group = c.benchmark_group("episode");
    group.sample_size(20);
    for n in [2usize, 3] {
        let (setup, _, features) = bent_robot(n);
        let scenario = Scenario::single(features, 0.5);
        group.bench_with_input(BenchmarkId::from_parameter(n), &scenario, |b, s| {
            b.iter(|| run_episode(&setup, s).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, image_pinv, shape_jacobian, control, episode);
criterion_main!(benches);
