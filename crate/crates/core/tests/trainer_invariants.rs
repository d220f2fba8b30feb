use procl::config::{RunConfig, TrainConfig};
use procl::data::{Dataset, SyntheticSpec, VideoRecord};
use procl::losses::LossFlags;
use procl::model::{forward, ModelConfig, ModelParams};
use procl::numeric::Graph;
use procl::trainer::{video_objective, Trainer};
use rand_chacha::ChaCha8Rng;

fn toy() -> Dataset {
    SyntheticSpec {
        train_videos: 12,
        test_videos: 2,
        seed: 5,
        ..Default::default()
    }
    .generate()
    .unwrap()
}

fn config(flags: LossFlags) -> TrainConfig {
    TrainConfig {
        flags,
        audit_every: 0,
        checkpoint_every: 0,
        ..Default::default()
    }
}

/// Dropout-free MIL loss of one video.
fn eval_mil(params: &ModelParams, video: &VideoRecord, cfg: &TrainConfig) -> f64 {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let (_, report) =
        video_objective::<ChaCha8Rng>(&mut g, params, &vars, video, cfg, None).unwrap();
    report.l_mil
}

#[test]
fn mil_loss_decreases_on_a_single_video() {
    let data = toy();
    let single = Dataset {
        train: vec![data.train[0].clone()],
        ..data
    };
    let cfg = TrainConfig {
        batch_size: 1,
        ..config(LossFlags::MIL_ONLY)
    };
    let mut trainer = Trainer::new(
        single.feature_dim,
        single.num_classes,
        &ModelConfig::default(),
        &cfg,
        0,
    )
    .unwrap();
    let mut prev = eval_mil(trainer.params(), &single.train[0], &cfg);
    let mut decreases = 0;
    for _ in 0..10 {
        trainer.step(&single.train).unwrap();
        let now = eval_mil(trainer.params(), &single.train[0], &cfg);
        decreases += usize::from(now < prev);
        prev = now;
    }
    assert!(decreases >= 8, "l_mil decreased on {decreases} of 10 steps");
}

/// Mean probability mass on categories absent from each video.
fn complementary_mass(params: &ModelParams, videos: &[VideoRecord]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in videos {
        let out = forward(params, &v.features).unwrap();
        for t in 0..out.len() {
            let row = out.p.row(t);
            sum += v
                .labels
                .iter()
                .zip(row)
                .filter(|(&y, _)| !y)
                .map(|(_, p)| p)
                .sum::<f64>();
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn cl_mass_on_absent_categories_is_non_increasing() {
    let data = toy();
    let cfg = config(LossFlags {
        cl: true,
        ..Default::default()
    });
    let mut trainer = Trainer::new(
        data.feature_dim,
        data.num_classes,
        &ModelConfig::default(),
        &cfg,
        0,
    )
    .unwrap();
    let mut windows = Vec::new();
    for _ in 0..5 {
        let mut acc = 0.0;
        for i in 0..100 {
            trainer.step(&data.train).unwrap();
            if i % 10 == 9 {
                acc += complementary_mass(trainer.params(), &data.train) / 10.0;
            }
        }
        windows.push(acc);
    }
    for w in windows.windows(2) {
        assert!(w[1] <= w[0], "window means {windows:?}");
    }
}

#[test]
fn every_ablation_row_trains_finitely_and_gates_its_terms() {
    let data = toy();
    for (exp, flags) in LossFlags::ablation_matrix() {
        let cfg = TrainConfig {
            iterations: 5,
            ..config(flags)
        };
        let (params, outcome) =
            procl::trainer::train(&data, &ModelConfig::default(), &cfg, 1, None).unwrap();
        assert!(params.is_finite(), "exp {exp}");
        for (_, r) in &outcome.losses {
            for (name, v) in r.components() {
                let on = match name {
                    "l_mil" => true,
                    "l_cl" => flags.cl,
                    "l_pcl" => flags.pcl,
                    "l_fbd" => flags.fbd,
                    "l_mpcl" => flags.mpcl,
                    _ => unreachable!(),
                };
                assert!(v.is_finite() && v >= 0.0, "exp {exp} {name} = {v}");
                if !on {
                    assert_eq!(v, 0.0, "exp {exp} {name}");
                }
            }
        }
    }
}

#[test]
fn echoed_config_regenerates_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seed: 9,
        ..Default::default()
    };
    cfg.echo(dir.path()).unwrap();
    let back = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.dataset().unwrap(), cfg.dataset().unwrap());
}
