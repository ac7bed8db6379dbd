use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitlab::attack::{
    collect, evaluate, random_pairing_baseline, reconstruct, score, train_attacker, AttackConfig, AttackDataset,
    IntermediateOracle, VictimEndpoint,
};
use splitlab::data::{LabeledDataset, IMAGE_PIXELS};
use splitlab::splitnn::{owner_segment, NoiseConfig};
use splitlab::tensor::Tensor;
use splitlab::{Error, Result};

fn images(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * IMAGE_PIXELS).map(|_| rng.gen::<f32>()).collect();
    LabeledDataset::new("random", pixels, (0..n).map(|i| i % 10).collect()).unwrap()
}

/// An oracle that only sees images and answers with a fixed linear read-out:
/// the attack code must work against anything implementing the trait.
struct Projection {
    calls: usize,
}

impl IntermediateOracle for Projection {
    fn query(&mut self, images: &Tensor) -> Result<Tensor> {
        self.calls += 1;
        let flat = images.flatten_rows();
        let n = flat.rows();
        let mut out = vec![0.0; n * 64];
        for r in 0..n {
            for (p, &v) in flat.row(r).iter().enumerate() {
                out[r * 64 + p % 64] += v / 12.0;
            }
        }
        Tensor::new(vec![n, 64], out)
    }
}

struct WrongWidth;

impl IntermediateOracle for WrongWidth {
    fn query(&mut self, images: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(&[images.rows(), 10]))
    }
}

#[test]
fn collect_uses_only_the_oracle_and_keeps_rows_aligned() {
    let data = images(1200, 1);
    let mut oracle = Projection { calls: 0 };
    let pairs = collect(&mut oracle, &data, 1100).unwrap();
    assert_eq!(pairs.len(), 1100);
    assert_eq!(pairs.intermediates.shape(), &[1100, 64]);
    assert_eq!(pairs.originals.shape(), &[1100, 1, 28, 28]);
    assert!(oracle.calls >= 3, "queries are chunked");
    let single = collect(&mut oracle, &data.slice(1099..1100, "one"), 1).unwrap();
    assert_eq!(single.intermediates.row(0), pairs.intermediates.row(1099));
    assert_eq!(single.originals.row(0), data.pixels(1099));
}

#[test]
fn collect_rejects_bad_sizes_and_bad_oracles() {
    let data = images(10, 2);
    let mut oracle = Projection { calls: 0 };
    assert!(matches!(collect(&mut oracle, &data, 0), Err(Error::Attack(_))));
    assert!(matches!(collect(&mut oracle, &data, 11), Err(Error::Attack(_))));
    assert!(matches!(collect(&mut WrongWidth, &data, 5), Err(Error::Attack(_))));
}

#[test]
fn victim_endpoint_noise_is_seeded() {
    let data = images(8, 3);
    let noisy = NoiseConfig::inference(0.5);
    let a = collect(&mut VictimEndpoint::new(owner_segment(4), noisy, 9), &data, 8).unwrap();
    let b = collect(&mut VictimEndpoint::new(owner_segment(4), noisy, 9), &data, 8).unwrap();
    let clean = collect(
        &mut VictimEndpoint::new(owner_segment(4), NoiseConfig::OFF, 9),
        &data,
        8,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_ne!(a.intermediates, clean.intermediates);
}

#[test]
fn score_extremes() {
    let data = images(6, 4);
    let x = data.images(0..6);
    let perfect = score(&x, &x).unwrap();
    assert!(perfect.per_image_dcor.iter().all(|&d| (d - 1.0).abs() < 1e-9));
    assert_eq!(perfect.mse, 0.0);
    let flat = Tensor::full(&[6, 1, 28, 28], 0.5);
    let constant = score(&x, &flat).unwrap();
    assert!(constant.per_image_dcor.iter().all(|&d| d == 0.0));
    assert!(score(&x, &data.images(0..5)).is_err());
}

#[test]
fn attacker_memorises_a_single_pair() {
    let data = images(1, 5);
    let pairs = AttackDataset {
        intermediates: Tensor::from_fn(&[1, 64], |i| (i % 7) as f32 * 0.3),
        originals: data.images(0..1),
        source_name: "one".into(),
    };
    let config = AttackConfig {
        epochs: 400,
        batch_size: 1,
        lr: 1e-2,
        seed: 6,
    };
    let model = train_attacker(&pairs, &config).unwrap();
    let first = model.epoch_losses[0];
    let last = *model.epoch_losses.last().unwrap();
    assert!(last < first * 0.2, "loss {first} -> {last}");
    let recon = reconstruct(&model, &pairs.intermediates).unwrap();
    assert!(score(&pairs.originals, &recon).unwrap().mean_dcor > 0.8);
}

#[test]
fn attacker_beats_random_pairing_on_an_invertible_oracle() {
    // Smooth images: a low-resolution pattern upsampled, so the projection
    // retains most of the information.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 600;
    let mut pixels = Vec::with_capacity(n * IMAGE_PIXELS);
    for _ in 0..n {
        let coarse: Vec<f32> = (0..16).map(|_| rng.gen()).collect();
        for y in 0..28 {
            for x in 0..28 {
                pixels.push(coarse[(y / 7) * 4 + x / 7]);
            }
        }
    }
    let data = LabeledDataset::new("blocks", pixels, vec![0; n]).unwrap();
    let mut oracle = Projection { calls: 0 };
    let train = collect(&mut oracle, &data.slice(0..500, "train"), 500).unwrap();
    let config = AttackConfig {
        epochs: 15,
        ..AttackConfig::default()
    };
    let model = train_attacker(&train, &config).unwrap();
    let held_out = data.slice(500..600, "held-out");
    let report = evaluate(&model, &mut oracle, &held_out, None).unwrap();
    let pairs = collect(&mut oracle, &held_out, 100).unwrap();
    let baseline = random_pairing_baseline(&model, &pairs, 8).unwrap();
    assert!(report.mean_dcor > baseline + 0.2, "{} vs {baseline}", report.mean_dcor);
}

#[test]
fn training_is_reproducible() {
    let data = images(40, 9);
    let pairs = collect(&mut Projection { calls: 0 }, &data, 40).unwrap();
    let config = AttackConfig {
        epochs: 2,
        batch_size: 8,
        ..AttackConfig::default()
    };
    assert_eq!(
        train_attacker(&pairs, &config).unwrap(),
        train_attacker(&pairs, &config).unwrap()
    );
}
