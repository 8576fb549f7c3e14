use lde_cli::config::{DatasetConfig, ExperimentConfig, Preset, Seeds};

#[test]
fn presets_round_trip_through_toml() {
    for preset in Preset::ALL {
        let config = preset.config();
        let text = config.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), config, "{}", preset.name());
        assert_eq!(preset.name().parse::<Preset>().unwrap(), preset);
    }
    assert!("tfd".parse::<Preset>().is_err());
}

#[test]
fn preset_values() {
    let mnist = Preset::Mnist.config();
    let ae = mnist.autoencoder.as_ref().unwrap();
    assert_eq!((ae.latent_dim, ae.beta), (8, 0.0));
    assert_eq!(ae.output_activation, lde_cli::config::Activation::Sigmoid);
    assert_eq!(mnist.lde.mixture_count, 30);
    assert_eq!(mnist.lde.learning_rate, 2e-4);
    assert_eq!(ae.learning_rate, 1e-3);
    assert_eq!(mnist.eval.sample_count, 10_000);
    let faces = Preset::PgmFolder.config();
    assert_eq!(faces.autoencoder.unwrap().latent_dim, 15);
    let toy = Preset::Toy.config();
    assert!(toy.autoencoder.is_none());
    assert!(matches!(toy.dataset, DatasetConfig::Toy { train: 50_000, .. }));
}

#[test]
fn shipped_config_files_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for preset in Preset::ALL {
        let text = std::fs::read_to_string(dir.join(format!("{}.toml", preset.name()))).unwrap();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed.autoencoder, preset.config().autoencoder);
        assert_eq!(parsed.lde, preset.config().lde);
    }
}

const MINIMAL: &str = r#"
[dataset]
kind = "toy"

[lde]
steps = 10
"#;

#[test]
fn defaults_fill_in() {
    let c = ExperimentConfig::parse(MINIMAL).unwrap();
    assert_eq!(c.lde.mixture_count, 30);
    assert_eq!(c.lde.batch_size, 128);
    assert_eq!(c.seeds, Seeds::default());
    assert_eq!(c.eval.bandwidth_grid().len(), 20);
}

#[test]
fn unknown_keys_are_rejected_everywhere() {
    for (section, key) in [
        ("[dataset]", "trian = 5"),
        ("[lde]", "mixture_cuont = 3"),
        ("[seeds]", "inti = 3"),
        ("[eval]", "samples = 3"),
    ] {
        let text = MINIMAL.replace(section, &format!("{section}\n{key}"));
        let text = if section == "[seeds]" || section == "[eval]" {
            format!("{MINIMAL}\n{section}\n{key}\n")
        } else {
            text
        };
        assert!(ExperimentConfig::parse(&text).is_err(), "{key} accepted");
    }
    assert!(ExperimentConfig::parse(&format!("{MINIMAL}\nstray = 1\n")).is_err());
    assert!(ExperimentConfig::parse(&format!("{MINIMAL}\n[extra]\n")).is_err());
}

#[test]
fn invalid_values_are_rejected() {
    for bad in [
        MINIMAL.replace("steps = 10", "steps = 10\nmixture_count = 0"),
        MINIMAL.replace("steps = 10", "steps = 10\nlearning_rate = -1.0"),
        MINIMAL.replace("steps = 10", "steps = 10\nfilter_size = 1"),
        format!("{MINIMAL}\n[eval]\nalphas = [0.5, 1.5]\n"),
        format!("{MINIMAL}\n[autoencoder]\nhidden_widths = [4]\nlatent_dim = 2\noutput_activation = \"sigmoid\"\nsteps = 4\ninitial_dim = 3\n"),
        format!("{MINIMAL}\n[autoencoder]\nhidden_widths = [4]\nlatent_dim = 2\noutput_activation = \"relu\"\nsteps = 4\n"),
        MINIMAL.replace("\"toy\"", "\"celeba\""),
    ] {
        assert!(ExperimentConfig::parse(&bad).is_err(), "{bad}");
    }
}

#[test]
fn load_resolves_paths_and_requires_them_to_exist() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rows.csv"), "a,b,c\n1,2,3\n4,5,6\n7,8,9\n").unwrap();
    let text = "[dataset]\nkind = \"csv\"\npath = \"rows.csv\"\nvalidation = 1\ntest = 1\n[lde]\nsteps = 1\n";
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let data = cfg.dataset.load(0).unwrap();
    assert_eq!(
        (data.train.rows(), data.validation.rows(), data.test.rows(), data.dim()),
        (1, 1, 1, 3)
    );

    std::fs::write(&cfg_path, text.replace("rows.csv", "missing.csv")).unwrap();
    assert!(ExperimentConfig::load(&cfg_path).is_err());
}

#[test]
fn master_seed_derivation_is_fixed() {
    let a = Seeds::from_master(42);
    assert_eq!(a, Seeds::from_master(42));
    assert_ne!(a, Seeds::from_master(43));
    let all = [a.data, a.init, a.shuffle, a.sample];
    for i in 0..4 {
        for j in 0..i {
            assert_ne!(all[i], all[j]);
        }
    }
}
