mod common;

use common::rng;
use winoq::bench::analytic_table_for;
use winoq::conv::{ConvAlgo, ConvShape};
use winoq::data::{gen_synthetic, Dataset};
use winoq::nas::{expected_latency, pair_latency, sample_paths, search, searchable_shapes, softmax, SearchConfig, SearchSpace};
use winoq::quant::QSpec;
use winoq::train::model::ModelSpec;
use winoq::train::{adapt, checkpoint, evaluate, presets, train, Model, PresetOpts, TrainConfig};
use winoq::Error;

fn small_data() -> (Dataset, Dataset) {
    gen_synthetic(4, 24, 8, 3).unwrap().split(0.25, 3)
}

fn tiny(algo: ConvAlgo, bits: QSpec, flex: bool) -> ModelSpec {
    presets::micro_resnet(&PresetOpts { algo, bits, flex, size: 8, ..PresetOpts::default() })
}

#[test]
fn training_lowers_the_loss() {
    let (tr, va) = small_data();
    let mut m = Model::build(&tiny(ConvAlgo::Winograd(2), QSpec::int(8), true), 1).unwrap();
    let rep = train(&mut m, &tr, &va, &TrainConfig { epochs: 4, batch_size: 8, lr: 3e-3, ..TrainConfig::default() }).unwrap();
    let first = rep.epochs.first().unwrap().train_loss;
    let last = rep.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn non_finite_input_is_reported() {
    let (tr, va) = small_data();
    let mut bad = tr.clone();
    bad.pixels[0] = f64::NAN;
    let mut m = Model::build(&tiny(ConvAlgo::Direct, QSpec::float32(), false), 1).unwrap();
    let r = train(&mut m, &bad, &va, &TrainConfig { epochs: 1, batch_size: 128, ..TrainConfig::default() });
    assert!(matches!(r, Err(Error::NonFinite { step: 0, .. })), "{r:?}");
}

#[test]
fn retarget_keeps_fixed_layers_and_pins_f2() {
    let spec = tiny(ConvAlgo::Direct, QSpec::float32(), false);
    let wa = spec.retarget(ConvAlgo::Winograd(4), QSpec::int(8), true);
    for (a, b) in spec.conv_specs().zip(wa.conv_specs()) {
        assert_eq!(b.bits, QSpec::int(8));
        if a.fixed {
            assert_eq!(b.algo, a.algo);
            assert!(!b.flex);
        } else if a.pin_f2 {
            assert_eq!(b.algo, ConvAlgo::Winograd(2));
        } else {
            assert_eq!(b.algo, ConvAlgo::Winograd(4));
            assert!(b.flex);
        }
    }
    assert!(spec.conv_specs().any(|c| c.fixed));
}

#[test]
fn checkpoint_round_trip_and_adapt_from_it() {
    let (tr, va) = small_data();
    let mut m = Model::build(&tiny(ConvAlgo::Direct, QSpec::float32(), false), 2).unwrap();
    train(&mut m, &tr, &va, &TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&m, dir.path()).unwrap();
    let mut back = checkpoint::load(dir.path()).unwrap();
    assert_eq!(evaluate(&mut m, &va, 16).unwrap(), evaluate(&mut back, &va, 16).unwrap());

    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() };
    let (adapted, rep) = adapt(&mut back, ConvAlgo::Winograd(2), QSpec::int(8), true, &tr, &va, &cfg).unwrap();
    assert_eq!(rep.train.epochs.len(), 1);
    assert!(adapted.param_count() > m.param_count(), "flex transforms add parameters");
    assert!(checkpoint::load(&dir.path().join("missing")).is_err());
}

#[test]
fn path_sampling_is_without_replacement() {
    let mut g = rng(4);
    let alpha = [0.3, -1.0, 2.0, 0.0, 0.5];
    for _ in 0..200 {
        let mut p = sample_paths(&alpha, 2, &mut g);
        assert_eq!(p.len(), 2);
        p.sort();
        assert!(p[0] != p[1] && p[1] < alpha.len());
    }
    assert_eq!(sample_paths(&alpha[..2], 2, &mut g), vec![0, 1]);
    // Dominant logit is picked almost always.
    let hits = (0..500).filter(|_| sample_paths(&[20.0, 0.0, 0.0], 1, &mut g) == vec![0]).count();
    assert!(hits > 495);
}

#[test]
fn expected_latency_is_bounded_and_one_hot_exact() {
    let lats = vec![vec![3.0, 1.0, 7.0], vec![2.0, 5.0]];
    let (e, _) = expected_latency(&[vec![0.1, 0.7, -0.2], vec![1.0, 0.0]], &lats).unwrap();
    assert!(e > 1.0 + 2.0 && e < 7.0 + 5.0);
    let (e, g) = expected_latency(&[vec![0.0, 80.0, 0.0], vec![-80.0, 0.0]], &lats).unwrap();
    assert!((e - 6.0).abs() < 1e-12);
    assert!(g.iter().flatten().all(|v| v.abs() < 1e-12));
    assert!(expected_latency(&[vec![0.0]], &lats).is_err());
}

#[test]
fn pair_latency_pushes_towards_the_cheaper_sampled_candidate() {
    let alpha = [0.0, 0.4, -0.3];
    let lats = [5.0, 1.0, 9.0];
    let (e, g) = pair_latency(&alpha, &lats, &[0, 1]);
    let q = softmax(&alpha[..2]);
    assert!((e - (q[0] * 5.0 + q[1] * 1.0)).abs() < 1e-12);
    assert!(g[0] > 0.0 && g[1] < 0.0 && g[2] == 0.0);
}

fn search_inputs() -> (ModelSpec, SearchSpace, Vec<ConvShape>, Dataset, Dataset) {
    let spec = presets::search_net(&PresetOpts { algo: ConvAlgo::Im2row, bits: QSpec::int(8), size: 8, ..PresetOpts::default() });
    let shapes = searchable_shapes(&spec).unwrap().into_iter().map(|(_, s)| s).collect();
    let (tr, va) = gen_synthetic(4, 16, 8, 5).unwrap().split(0.25, 5);
    (spec, SearchSpace::wa_q(), shapes, tr, va)
}

#[test]
fn without_latency_pressure_the_table_scale_does_not_matter() {
    let (spec, space, shapes, tr, va) = search_inputs();
    let cfg = SearchConfig { epochs: 2, batch_size: 8, lambda2: 0.0, ..SearchConfig::default() };
    let t1 = analytic_table_for(&shapes, &space.algos, &[32, 16, 8], 1.0).unwrap();
    let t2 = analytic_table_for(&shapes, &space.algos, &[32, 16, 8], 7.0).unwrap();
    let a = search(&spec, &space, &t1, &cfg, &tr, &va).unwrap().arch;
    let b = search(&spec, &space, &t2, &cfg, &tr, &va).unwrap().arch;
    assert_eq!(a.layers, b.layers);
}

#[test]
fn search_is_seed_deterministic_and_arch_applies() {
    let (spec, space, shapes, tr, va) = search_inputs();
    let table = analytic_table_for(&shapes, &space.algos, &[32, 16, 8], 1.0).unwrap();
    let cfg = SearchConfig { epochs: 1, batch_size: 8, lambda2: 0.1, seed: 3, ..SearchConfig::default() };
    let a = search(&spec, &space, &table, &cfg, &tr, &va).unwrap();
    let b = search(&spec, &space, &table, &cfg, &tr, &va).unwrap();
    assert_eq!(a.arch, b.arch);
    assert_eq!(a.history.len(), 1);
    let derived = a.arch.apply(&spec).unwrap();
    for l in &a.arch.layers {
        let c = derived.conv_specs().find(|c| c.name == l.name).unwrap();
        assert_eq!((c.algo, c.bits.bits.as_u32()), (l.algo, l.bits));
    }
    Model::build(&derived, 0).unwrap();
}

#[test]
fn zero_batch_size_is_a_config_error() {
    let (spec, space, shapes, tr, va) = search_inputs();
    let table = analytic_table_for(&shapes, &space.algos, &[8], 1.0).unwrap();
    let cfg = SearchConfig { batch_size: 0, ..SearchConfig::default() };
    assert!(matches!(search(&spec, &space, &table, &cfg, &tr, &va), Err(Error::Config(_))));
}
