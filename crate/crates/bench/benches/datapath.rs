use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ternsim_core::arith::{booth_multiply, BoothMode, TernaryTensor};
use ternsim_core::boothflex::{BoothFlexCore, BoothRhs};
use ternsim_core::lop::{extract_features, lop_gate, SelectorMode};
use ternsim_core::matrix::I8Matrix;
use ternsim_core::quant::absmax_quantize;
use ternsim_core::tint::TintCore;

fn i8_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> I8Matrix {
    I8Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-127..=127)).collect()).unwrap()
}

fn ternary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TernaryTensor {
    let v: Vec<i8> = (0..rows * cols).map(|_| rng.gen_range(-1..=1)).collect();
    TernaryTensor::pack(rows, cols, &v, 1.0).unwrap()
}

fn booth(c: &mut Criterion) {
    let mut g = c.benchmark_group("booth");
    g.throughput(Throughput::Elements(65536));
    g.bench_function("int8_all_pairs", |b| {
        b.iter(|| {
            let mut acc = 0i64;
            for a in i8::MIN..=i8::MAX {
                for y in -128..=127 {
                    acc += booth_multiply(black_box(a), y, BoothMode::Int8).unwrap().product as i64;
                }
            }
            acc
        })
    });
    g.finish();
}

fn gemm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("gemm");
    for n in [8usize, 64] {
        let lhs = i8_matrix(&mut rng, n, 256);
        let w = ternary(&mut rng, 256, 256);
        let y = i8_matrix(&mut rng, 256, 256);
        g.throughput(Throughput::Elements((n * 256 * 256) as u64));
        g.bench_with_input(BenchmarkId::new("tint", n), &n, |b, _| {
            b.iter(|| TintCore::default().gemm(&lhs, &w).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("boothflex_ternary", n), &n, |b, _| {
            b.iter(|| {
                let mut core = BoothFlexCore::default();
                core.set_mode(BoothMode::Ternary).unwrap();
                core.gemm(&lhs, BoothRhs::Ternary(&w)).unwrap()
            })
        });
        g.bench_with_input(BenchmarkId::new("boothflex_int8", n), &n, |b, _| {
            b.iter(|| BoothFlexCore::default().gemm(&lhs, BoothRhs::Int8(&y)).unwrap())
        });
    }
    g.finish();
}

fn lop(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("lop_gate");
    for m in [256usize, 1024] {
        let mut vec =
            |d: usize| absmax_quantize(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()).unwrap();
        let q = vec(64);
        let feats: Vec<_> = (0..m).map(|_| extract_features(&vec(64))).collect();
        g.throughput(Throughput::Elements(m as u64));
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| lop_gate(&q, &feats, SelectorMode::TopK(32), 64).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, booth, gemm, lop);
criterion_main!(benches);
