use rand::Rng;
use satjam_cnn::params::slot;
use satjam_cnn::{evaluate, fit, train, Adam, AdamConfig, Architecture, InMemory, Network, TrainConfig};
use satjam_core::featurizer::{Label, SampleMeta, SampleTensor};
use satjam_core::seed;

const SHAPE: (usize, usize, usize) = (12, 16, 2);

/// Background noise; present samples add a high-energy burst of rows on
/// one antenna.
fn toy(n: usize, seed: u64) -> Vec<SampleTensor> {
    let mut rng = seed::rng(seed);
    let (t, f, c) = SHAPE;
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Absent } else { Label::Present };
            let mut values: Vec<f32> = (0..t * f * c).map(|_| -50.0 + rng.random_range(-3.0..3.0)).collect();
            if label == Label::Present {
                let start = rng.random_range(0..t - 4);
                let ant = rng.random_range(0..c);
                for row in start..start + 4 {
                    for col in 0..f {
                        values[(row * f + col) * c + ant] += 15.0;
                    }
                }
            }
            SampleTensor {
                t,
                f,
                n_rx: c,
                values,
                label,
                meta: SampleMeta {
                    scenario: "toy".into(),
                    sample_id: i,
                    seed,
                    snr_db: 10.0,
                    sjr_db: (label == Label::Present).then_some(-10.0),
                    jam_type: None,
                },
            }
        })
        .collect()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 17,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_toy_is_learned() {
    let train_set = InMemory::new(toy(200, 1)).unwrap();
    let test_set = InMemory::new(toy(100, 2)).unwrap();
    let (net, _, history) = fit(Architecture::detector(SHAPE), 3, &train_set, &config(10), |_| {}).unwrap();
    assert_eq!(history.epochs.len(), 10);
    let last = history.epochs.last().unwrap();
    assert!(last.accuracy >= 0.95, "final train accuracy {}", last.accuracy);
    assert!(last.loss < history.epochs[0].loss);
    let eval = evaluate(&net, &test_set, 32).unwrap();
    assert!(eval.accuracy() >= 0.95, "test accuracy {}", eval.accuracy());
    assert!(net.params.is_finite());
    assert!(net.running.var1.iter().chain(&net.running.var2).all(|&v| v >= 0.0));
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let src = InMemory::new(toy(40, 3)).unwrap();
    let arch = Architecture::detector(SHAPE);
    let mut net: Network<f32> = Network::new(arch, 5).unwrap();
    let before = net.params.clone();
    let cfg = TrainConfig {
        adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
        ..config(3)
    };
    let mut opt = Adam::new(cfg.adam, &arch);
    train(&mut net, &mut opt, &src, &cfg, |_| {}).unwrap();
    assert_eq!(net.params, before);
    assert_eq!(opt.step, 6);
}

#[test]
fn fixed_seed_gives_identical_runs() {
    let src = InMemory::new(toy(48, 4)).unwrap();
    let arch = Architecture::detector(SHAPE);
    let (a, _, ha) = fit(arch, 6, &src, &config(2), |_| {}).unwrap();
    let (b, _, hb) = fit(arch, 6, &src, &config(2), |_| {}).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    let (c, _, _) = fit(arch, 6, &src, &TrainConfig { seed: 18, ..config(2) }, |_| {}).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn epoch_callback_sees_every_epoch() {
    let src = InMemory::new(toy(20, 5)).unwrap();
    let mut seen = Vec::new();
    fit(Architecture::detector(SHAPE), 1, &src, &config(3), |s| seen.push(s.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
}

fn swap_antennas(samples: &[SampleTensor]) -> Vec<SampleTensor> {
    samples
        .iter()
        .map(|s| {
            let mut t = s.clone();
            for px in t.values.chunks_exact_mut(2) {
                px.swap(0, 1);
            }
            t
        })
        .collect()
}

/// Swapping the antenna order of every input, together with the matching
/// input-channel rows of the first kernel, trains to the same accuracies.
#[test]
fn antenna_permutation_symmetry() {
    let arch = Architecture {
        conv1: 4,
        conv2: 3,
        fc1: 8,
        ..Architecture::detector(SHAPE)
    };
    let (train_raw, test_raw) = (toy(64, 7), toy(64, 8));
    let cfg = config(4);

    let mut net: Network<f64> = Network::new(arch, 9).unwrap();
    let mut swapped = net.clone();
    for row in swapped.params.tensors[slot::CONV1_W].chunks_exact_mut(2 * arch.conv1) {
        let (a, b) = row.split_at_mut(arch.conv1);
        a.swap_with_slice(b);
    }

    let mut opt = Adam::new(cfg.adam, &arch);
    train(&mut net, &mut opt, &InMemory::new(train_raw.clone()).unwrap(), &cfg, |_| {}).unwrap();
    let mut opt = Adam::new(cfg.adam, &arch);
    let swapped_train = InMemory::new(swap_antennas(&train_raw)).unwrap();
    train(&mut swapped, &mut opt, &swapped_train, &cfg, |_| {}).unwrap();

    let e1 = evaluate(&net, &InMemory::new(test_raw.clone()).unwrap(), 16).unwrap();
    let e2 = evaluate(&swapped, &InMemory::new(swap_antennas(&test_raw)).unwrap(), 16).unwrap();
    assert_eq!(e1.overall, e2.overall);
    assert_eq!(e1.confusion, e2.confusion);
}
