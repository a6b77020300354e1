use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use excirec_bench::{chain, line_scan, table_system};
use excirec_core::hamiltonian::clean_hamiltonian;
use excirec_core::localfield::{spatial_map, LocalFieldConfig, PeakConfig};
use excirec_core::nearfield::{ProjectionMatrix, ScanConfig, TipScan};
use excirec_core::neuralnet::{Network, NetworkConfig};
use excirec_core::{diagonalize, rng};

fn eigen(c: &mut Criterion) {
    let mut g = c.benchmark_group("diagonalize");
    for n in [5, 20, 50] {
        let h = clean_hamiltonian(&chain(n));
        g.bench_with_input(BenchmarkId::from_parameter(n), &h, |b, h| b.iter(|| diagonalize(black_box(h)).unwrap()));
    }
    g.finish();
}

fn spectra(c: &mut Criterion) {
    let geom = chain(20);
    let scan = line_scan(&geom, 512);
    let es = diagonalize(&clean_hamiltonian(&geom)).unwrap();
    c.bench_function("projection_matrix/20x512", |b| {
        b.iter(|| ProjectionMatrix::new(black_box(&geom), &scan).unwrap())
    });
    let proj = ProjectionMatrix::new(&geom, &scan).unwrap();
    let mut out = vec![0.0; scan.len()];
    c.bench_function("all_spectra/20x512", |b| {
        b.iter(|| {
            for coeffs in &es.coefficients {
                proj.spectrum_into(black_box(coeffs), &mut out);
            }
        })
    });
}

fn local_field(c: &mut Criterion) {
    let sys = table_system();
    let cfg = LocalFieldConfig::default();
    let scan = TipScan::build(&ScanConfig::line(128, 50.0, cfg.z_dip()), &sys.geometry).unwrap();
    let peaks = PeakConfig {
        n_freq: 200,
        ..Default::default()
    };
    let omegas = peaks.frequency_grid(&sys).unwrap();
    let mut g = c.benchmark_group("local_field");
    g.sample_size(10);
    g.bench_function("map/200x128", |b| b.iter(|| spatial_map(black_box(&sys), &scan, &omegas).unwrap()));
    g.finish();
}

fn network(c: &mut Criterion) {
    let cfg = NetworkConfig::reference_1d(512, 20);
    let net = Network::<f32>::new(cfg, 1).unwrap();
    let bsz = 64;
    let mut g = rng::rng_from_seed(2);
    let x: Vec<f32> = (0..bsz * 512).map(|_| rng::gaussian(&mut g).abs() as f32).collect();
    let t: Vec<f32> = (0..bsz * 20).map(|i| if i % 20 == 0 { 1.0 } else { 0.0 }).collect();
    let mut grp = c.benchmark_group("reference_1d");
    grp.sample_size(20);
    grp.bench_function("forward/64", |b| b.iter(|| net.forward(black_box(&x), bsz).unwrap()));
    grp.bench_function("loss_and_gradient/64", |b| {
        b.iter(|| net.loss_and_gradient(black_box(&x), &t, bsz).unwrap())
    });
    grp.finish();
}

criterion_group!(benches, eigen, spectra, local_field, network);
criterion_main!(benches);
