use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kpz_core::fredholm::{fixed_point_prob, fredholm_det, tw_gue_cdf_refined, Ceiling, DiscretizedKernel, OperatorSettings};
use kpz_core::kpz::InitialData;
use kpz_core::lpp::{lpp_sweep, melon, sample_environment};
use kpz_core::quad::QuadratureRule;
use kpz_core::specfun::{airy, s_kernel, EvalPoint};

fn special_functions(c: &mut Criterion) {
    c.bench_function("airy/oscillatory", |b| b.iter(|| airy(black_box(-7.3))));
    c.bench_function("airy/decaying", |b| b.iter(|| airy(black_box(4.1))));
    let pt = EvalPoint::new(1.0, 0.3, -0.7).unwrap();
    c.bench_function("s_kernel", |b| b.iter(|| s_kernel(black_box(pt))));
}

fn determinants(c: &mut Criterion) {
    let mut g = c.benchmark_group("fredholm_det");
    for q in [20usize, 40, 80] {
        let rule = QuadratureRule::gauss_legendre(q, 0.0, 4.0).unwrap();
        let k = DiscretizedKernel::from_fn(rule, |x, y| -0.5 * (-(x + y)).exp()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(q), &k, |b, k| b.iter(|| fredholm_det(k)));
    }
    g.finish();
    c.bench_function("tw_gue_cdf/q40", |b| b.iter(|| tw_gue_cdf_refined(black_box(-2.0), 40)));
    let mut g = c.benchmark_group("fixed_point");
    g.sample_size(10);
    let h0 = InitialData::narrow_wedge(0.0);
    g.bench_function("window3", |b| {
        b.iter(|| fixed_point_prob(&h0, &Ceiling::constant(0.0), 3.0, &OperatorSettings::default()))
    });
    g.finish();
}

fn passage(c: &mut Criterion) {
    let env = sample_environment(50, 0.25, 25.0, 1.0, 0.0, 7).unwrap();
    let mut g = c.benchmark_group("lpp");
    g.sample_size(20);
    let start = vec![0.0; env.m()];
    g.bench_function("sweep_n50", |b| b.iter(|| lpp_sweep(&env, &start, 50, 1)));
    g.bench_function("melon_n50", |b| b.iter(|| melon(&env)));
    g.finish();
}

criterion_group!(benches, special_functions, determinants, passage);
criterion_main!(benches);
