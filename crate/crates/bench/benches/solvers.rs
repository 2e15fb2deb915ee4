use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use netgame::experiments::{generate_contraction_instance, generate_example1_instance};
use netgame::{
    d_welfare, optimize_intervention, solve_equilibrium, solve_general, GeneralGame, WelfareSpec,
};

fn equilibrium(c: &mut Criterion) {
    for n in [2, 5, 10] {
        let (p, iv) = generate_contraction_instance(n, 7).unwrap();
        c.bench_function(&format!("solve_equilibrium n={n}"), |b| b.iter(|| solve_equilibrium(black_box(&p), &iv)));
        let game = GeneralGame::from_quadratic(&p);
        c.bench_function(&format!("solve_general quadratic n={n}"), |b| b.iter(|| solve_general(black_box(&game), &iv)));
    }
}

fn sensitivity(c: &mut Criterion) {
    let (p, iv) = generate_contraction_instance(8, 11).unwrap();
    let r = solve_equilibrium(&p, &iv).unwrap();
    let w = WelfareSpec::unit_actions(8);
    c.bench_function("d_welfare n=8", |b| b.iter(|| d_welfare(&w, black_box(&p), &r)));
}

fn planner(c: &mut Criterion) {
    let mut group = c.benchmark_group("optimize");
    group.sample_size(10);
    for n in [2, 4] {
        let inst = generate_example1_instance(n, 3).unwrap();
        group.bench_function(format!("example1 n={n}"), |b| {
            b.iter(|| optimize_intervention(black_box(&inst.params), &inst.welfare, inst.budget))
        });
    }
    group.finish();
}

criterion_group!(benches, equilibrium, sensitivity, planner);
criterion_main!(benches);
