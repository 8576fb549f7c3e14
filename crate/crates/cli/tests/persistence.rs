use lde_cli::checkpoint::Checkpoint;
use lde_cli::persist::{lde_from_checkpoint, lde_to_checkpoint, LatentSet, SavedAutoencoder};
use lde_core::data::Normalization;
use lde_core::{AeConfig, AeModel, DenseArray, LdeConfig, LdeModel, OutputActivation};
use proptest::prelude::*;

fn small_lde() -> LdeModel {
    LdeModel::init(LdeConfig::new(5, 3).unwrap(), 11).unwrap()
}

fn small_ae() -> SavedAutoencoder {
    let config = AeConfig {
        input_dim: 12,
        hidden_widths: vec![7, 5],
        latent_dim: 3,
        output_activation: OutputActivation::Tanh,
        beta: 0.0,
    };
    SavedAutoencoder {
        model: AeModel::init(config, 4).unwrap(),
        normalization: Normalization::SIGNED_BYTES,
        image_shape: Some((3, 4)),
    }
}

#[test]
fn models_round_trip_exactly() {
    let lde = small_lde();
    let bytes = lde_to_checkpoint(&lde).unwrap().to_bytes();
    let back = lde_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, lde);
    assert_eq!(lde_to_checkpoint(&back).unwrap().to_bytes(), bytes);

    let ae = small_ae();
    let bytes = ae.to_checkpoint().unwrap().to_bytes();
    let back = SavedAutoencoder::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, ae);
    assert_eq!(back.to_checkpoint().unwrap().to_bytes(), bytes);
}

#[test]
fn files_round_trip_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    small_ae().save(&a).unwrap();
    SavedAutoencoder::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn every_single_byte_corruption_is_detected() {
    let bytes = lde_to_checkpoint(&LdeModel::init(LdeConfig::new(2, 1).unwrap(), 0).unwrap())
        .unwrap()
        .to_bytes();
    for pos in 0..bytes.len() {
        for flip in [0x01u8, 0x80, 0xff, 0x5a] {
            let mut bad = bytes.clone();
            bad[pos] ^= flip;
            assert!(
                Checkpoint::from_bytes(&bad).is_err(),
                "byte {pos} ^ {flip:#x} went unnoticed"
            );
        }
    }
}

#[test]
fn kinds_and_shapes_are_checked() {
    let lde_ckpt = lde_to_checkpoint(&small_lde()).unwrap();
    assert!(SavedAutoencoder::from_checkpoint(&lde_ckpt).is_err());
    assert!(LatentSet::from_checkpoint(&lde_ckpt).is_err());

    // A tensor of the wrong shape under a valid manifest.
    let mut tampered = Checkpoint::new(lde_ckpt.config.clone());
    for (name, t) in &lde_ckpt.tensors {
        let t = if name == "head.bias" {
            DenseArray::zeros(&[1])
        } else {
            t.clone()
        };
        tampered.push(name.clone(), t).unwrap();
    }
    assert!(lde_from_checkpoint(&tampered).is_err());

    // A manifest declaring more mixture components than the tensors hold.
    let inflated = Checkpoint {
        config: lde_ckpt.config.replace("mixture_count = 3", "mixture_count = 4"),
        tensors: lde_ckpt.tensors.clone(),
    };
    assert!(lde_from_checkpoint(&inflated).is_err());

    // An extra stray section.
    let mut extra = lde_ckpt.clone();
    extra.push("stray", DenseArray::scalar(1.0)).unwrap();
    assert!(lde_from_checkpoint(&extra).is_err());
}

#[test]
fn latent_sets_round_trip_and_check_widths() {
    let set = LatentSet {
        train: DenseArray::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        validation: DenseArray::zeros(&[0, 2]),
        test: DenseArray::new(vec![1, 2], vec![-1.0, f64::MIN_POSITIVE]).unwrap(),
    };
    let ckpt = set.to_checkpoint().unwrap();
    assert_eq!(LatentSet::from_checkpoint(&ckpt).unwrap(), set);
    let wrong = Checkpoint {
        config: ckpt.config.replace("latent_dim = 2", "latent_dim = 3"),
        tensors: ckpt.tensors.clone(),
    };
    assert!(LatentSet::from_checkpoint(&wrong).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_tensors_round_trip(
        shapes in prop::collection::vec(prop::collection::vec(0usize..4, 0..4), 0..5),
        seed in any::<u64>(),
        config in "[ -~]{0,40}",
    ) {
        let mut ckpt = Checkpoint::new(config);
        let mut state = seed;
        for (i, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits(state >> 1 | 0x3ff0_0000_0000_0000 & state)
                })
                .collect();
            ckpt.push(format!("t{i}"), DenseArray::new(shape.clone(), data).unwrap()).unwrap();
        }
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
