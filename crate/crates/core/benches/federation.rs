//! Server rounds with clients run through rayon versus one after another.
//! Build with `--no-default-features` to bench the crate without rayon at all.

use std::hint::black_box;

use cafkt::data::ClassProfile;
use cafkt::fed::{build_clients, run_federation, ClientState, FederationConfig, NoEval};
use cafkt::pipeline::{build_encoders, generate_domains, partition_domain, ExperimentConfig};
use cafkt::ClassifierWeights;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn setup(active: usize) -> (FederationConfig, Vec<ClientState>, ClassifierWeights) {
    let mut cfg = ExperimentConfig::default();
    cfg.domains[0].latent_dim = Some(12);
    cfg.domains[0].profile = ClassProfile::Zipf(1.0);
    cfg.federation.num_clients = 20;
    cfg.federation.active_per_round = active;
    cfg.federation.rounds = 10;
    cfg.federation.batch_size = 8;
    let data = generate_domains(&cfg).unwrap();
    let enc = build_encoders(&cfg.model, cfg.input_dim().unwrap(), cfg.total_classes(), cfg.seed()).unwrap();
    let part = partition_domain(&cfg, 0, &data[0].train).unwrap();
    let clients = build_clients(&enc.student, &enc.translator, &part.split(&data[0].train)).unwrap();
    (cfg.federation, clients, enc.classifier)
}

fn rounds(c: &mut Criterion) {
    let mut group = c.benchmark_group("ten_server_rounds");
    group.sample_size(10);
    for active in [5, 20] {
        let (mut fed, clients, init) = setup(active);
        for parallel in [false, true] {
            fed.parallel = parallel;
            let name = if parallel { "parallel" } else { "sequential" };
            group.bench_with_input(BenchmarkId::new(name, active), &fed, |b, fed| {
                b.iter(|| run_federation(black_box(fed), &clients, &init, &mut NoEval).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, rounds);
criterion_main!(benches);
