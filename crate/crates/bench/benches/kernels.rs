use criterion::{criterion_group, criterion_main, Criterion};
use multinet::harness::{Prepared, RunConfig, Trainer};
use multinet::multinet::Mode;
use multinet::nnops::{ConvLayer, SppGrid};
use multinet::synthdata::{generate_scenes, SceneSpec};
use multinet::tensor::{rng_tensor, Distribution, SeedStream, Tape};
use multinet::BBox;
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let mut s = SeedStream::new(0);
    let g = Distribution::Gaussian {
        mean: 0.0,
        std: 0.1,
    };
    let x = rng_tensor(&mut s, &[64, 64, 3], g);
    let w = rng_tensor(&mut s, &[3, 3, 3, 16], g);
    let b = rng_tensor(&mut s, &[16], g);
    c.bench_function("conv2d 64x64x3 -> 16, forward + backward", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let layer = ConvLayer {
                filters: t.param(w.clone()),
                bias: t.param(b.clone()),
                stride: 1,
                padding: 1,
            };
            let y = t.conv2d(xv, &layer).unwrap();
            let l = t.sum(y);
            t.backward(l).unwrap();
            black_box(t.grad(xv).is_some())
        })
    });
}

fn spp(c: &mut Criterion) {
    let mut s = SeedStream::new(1);
    let h = rng_tensor(
        &mut s,
        &[8, 8, 32],
        Distribution::Gaussian {
            mean: 0.0,
            std: 1.0,
        },
    );
    let boxes: Vec<BBox> = (0..64)
        .map(|_| {
            let (x, y) = (s.gen_range(0.0, 40.0), s.gen_range(0.0, 40.0));
            BBox::new(x, y, x + s.gen_range(6.0, 24.0), y + s.gen_range(6.0, 24.0)).unwrap()
        })
        .collect();
    c.bench_function("spp_pool 64 regions, 6x6 grid", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let hv = t.constant(h.clone());
            let out = t
                .spp_pool(
                    hv,
                    &boxes,
                    SppGrid {
                        grid: 6,
                        feature_stride: 8,
                    },
                )
                .unwrap();
            black_box(t.value(out).numel())
        })
    });
}

fn train_step(c: &mut Criterion) {
    let spec = SceneSpec::default();
    let data = Prepared::new(&spec, &generate_scenes(&spec, 0, 1).unwrap(), 64).unwrap();
    let mut group = c.benchmark_group("train step, one scene");
    group.sample_size(20);
    for mode in Mode::ALL {
        let cfg = RunConfig {
            mode,
            ..Default::default()
        };
        let tr = Trainer::new(cfg.clone(), 0, data.task_config(&cfg)).unwrap();
        group.bench_function(mode.as_str(), |bench| {
            bench.iter(|| black_box(tr.loss_and_grads(&data.examples[0]).unwrap().0))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, spp, train_step);
criterion_main!(benches);
