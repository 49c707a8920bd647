use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ntkit::decoder::{beam_search, SearchOptions};
use ntkit::models::{encode_utterance, las_forward_backward, nt_forward_backward};
use ntkit::numerics::{additive_attention, multihead_attention, lstm_step, LstmState};
use ntkit_bench::fixture;

fn lstm(c: &mut Criterion) {
    let mut g = c.benchmark_group("lstm_step");
    for width in [32, 64] {
        let f = fixture(width, 1);
        let layer = &f.params.encoder[1];
        let input = vec![0.1; width];
        let state = LstmState::zeros(width);
        g.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, _| {
            b.iter(|| lstm_step(layer, black_box(&input), &state).unwrap())
        });
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let query = vec![0.1; 32];
    let single = fixture(32, 1);
    let enc = encode_utterance(&single.params, &single.utterance.features).unwrap();
    let head = &single.params.attention.heads[0];
    c.bench_function("attention/additive", |b| {
        b.iter(|| additive_attention(head, black_box(&query), &enc.states, &enc.states).unwrap())
    });
    let f = fixture(32, 4);
    let enc = encode_utterance(&f.params, &f.utterance.features).unwrap();
    let mha = &f.params.attention;
    c.bench_function("attention/multihead_4", |b| {
        b.iter(|| multihead_attention(mha, black_box(&query), &enc.states, &enc.states).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let f = fixture(32, 1);
    let x = &f.utterance.features;
    let bt = f.nt.blocks.as_ref().unwrap();
    c.bench_function("forward_backward/nt", |b| {
        b.iter(|| {
            let mut g = f.params.zeros_like();
            nt_forward_backward(&f.params, x, bt, &f.spec, Some(&mut g)).unwrap().loss
        })
    });
    c.bench_function("forward_backward/las", |b| {
        b.iter(|| {
            let mut g = f.params.zeros_like();
            las_forward_backward(&f.params, x, &f.las.targets, Some(&mut g)).unwrap().loss
        })
    });
}

fn search(c: &mut Criterion) {
    let f = fixture(32, 1);
    let mut g = c.benchmark_group("beam_search");
    for beam in [1, 4, 8] {
        let opts = SearchOptions::new(beam, f.cap, f.inventory.content_ids());
        g.bench_with_input(BenchmarkId::from_parameter(beam), &beam, |b, _| {
            b.iter(|| beam_search(&f.params, &f.utterance.features, f.spec, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, lstm, attention, training_step, search);
criterion_main!(benches);
