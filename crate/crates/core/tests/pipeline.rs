use excirec_core::dataset::{generate_ensemble, split, DataSet, EnsembleConfig, Manifest};
use excirec_core::nearfield::ScanConfig;
use excirec_core::neuralnet::eval::{dataset_losses, predict};
use excirec_core::neuralnet::{train, Checkpoint, LayerSpec, Network, NetworkConfig, TrainConfig};
use excirec_core::GeometryConfig;

fn small() -> EnsembleConfig {
    let mut e = EnsembleConfig::new(GeometryConfig::chain(5), vec![0.03], 12);
    e.sigma_od_list = vec![0.03];
    e.scan = ScanConfig::line(40, 10.0, 2.0);
    e.master_seed = 77;
    e
}

#[test]
fn files_manifest_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_ensemble(&small()).unwrap();
    assert_eq!(ds.n_samples(), 2 * 12 * 5);
    ds.save(dir.path().join("a.exds")).unwrap();
    let back = DataSet::load(dir.path().join("a.exds")).unwrap();
    assert_eq!(back.to_bytes().unwrap(), ds.to_bytes().unwrap());
    assert_eq!(back.config.as_ref(), Some(&small()));

    let m = Manifest::describe(dir.path(), &[("a.exds", &ds)], serde_json::json!({"k": 1})).unwrap();
    m.write(dir.path().join("manifest.json")).unwrap();
    assert!(m.verify(dir.path()).unwrap().is_empty());
    std::fs::write(dir.path().join("a.exds"), b"EXDS").unwrap();
    assert_eq!(m.verify(dir.path()).unwrap().len(), 1);

    let (a, b) = split(&ds, 0.8, 1).unwrap();
    assert_eq!(a.n_samples() + b.n_samples(), ds.n_samples());
    let seeds = |d: &DataSet| d.meta.iter().map(|m| (m.seed, m.state)).collect::<Vec<_>>();
    let sa = seeds(&a);
    assert!(seeds(&b).iter().all(|s| !sa.contains(s)));
}

#[test]
fn trained_checkpoint_predicts_like_the_network() {
    let ds = generate_ensemble(&small()).unwrap();
    let (tr, va) = split(&ds, 0.75, 2).unwrap();
    let cfg = NetworkConfig {
        input_shape: vec![40],
        layers: vec![
            LayerSpec::Conv {
                kernel: 5,
                channels: 4,
                stride: 1,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 5 },
        ],
        output_dim: 5,
    };
    let mut net = Network::<f32>::new(cfg, 3).unwrap();
    let mut tc = TrainConfig::new(4);
    tc.batch_size = 8;
    let hist = train(&mut net, &tr, &va, &tc, &mut |_| {}).unwrap();
    assert_eq!(hist.epochs.len(), 4);

    let ck = Checkpoint::from_bytes(&Checkpoint::new(net.clone()).to_bytes().unwrap()).unwrap();
    let l1 = dataset_losses(&net, &va).unwrap();
    let l2 = dataset_losses(&ck.network, &va).unwrap();
    assert_eq!(l1, l2);
    for i in 0..va.n_samples() {
        let x: Vec<f64> = va.input(i).iter().map(|v| *v as f64 * 3.5).collect();
        let t: Vec<f64> = va.target(i).iter().map(|v| *v as f64).collect();
        // input scale does not matter: spectra are max-normalized first
        let p = predict(&ck.network, &x, Some(&t)).unwrap();
        assert!((p.loss.unwrap() - l1[i]).abs() < 1e-5, "{} vs {}", p.loss.unwrap(), l1[i]);
    }
}
