use canvolve::losses::argmax_channels;
use canvolve::metrics::MetricFlag;
use canvolve::model::ModelConfig;
use canvolve::trainer::{
    adam_step, adam_step_named, evaluate, poly_decay_lr, predict, train, write_history_csv,
    AdamState, LossKind, LossSettings, Schedule, Split, TrainConfig, Trainer,
};
use canvolve::volio::{synth_phantom, Case, Dataset};
use canvolve::{Error, Tensor};

#[test]
fn poly_decay_examples() {
    let s = Schedule::new(1e-3, 30).unwrap();
    assert_eq!(poly_decay_lr(0, &s).unwrap(), 0.001);
    assert_eq!(poly_decay_lr(30, &s).unwrap(), 0.0);
    assert_eq!(poly_decay_lr(15, &s).unwrap(), 0.00025);
    assert!(matches!(poly_decay_lr(31, &s), Err(Error::Config(_))));
    let lrs: Vec<f64> = (0..=30).map(|e| s.lr(e).unwrap()).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

/// Textbook scalar Adam.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, p: f64, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.t));
        let v_hat = self.v / (1.0 - 0.999f64.powi(self.t));
        p - lr * m_hat / (v_hat.sqrt() + 1e-8)
    }
}

#[test]
fn adam_matches_scalar_oracle() {
    let mut p = Tensor::new(&[3], vec![0.5f64, -1.0, 2.0]).unwrap();
    let mut state = AdamState::for_params(&[&p]);
    let mut oracle: Vec<ScalarAdam> = (0..3).map(|_| ScalarAdam { m: 0.0, v: 0.0, t: 0 }).collect();
    let mut expected = p.data().to_vec();
    // Constant gradient first: the bias-corrected first step moves by ≈ lr.
    let g = Tensor::new(&[3], vec![0.3, -0.7, 1e-3]).unwrap();
    adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, 1e-3).unwrap();
    for i in 0..3 {
        expected[i] = oracle[i].step(expected[i], g.data()[i], 1e-3);
        assert!((p.data()[i] - expected[i]).abs() < 1e-12);
        assert!(((expected[i] - [0.5, -1.0, 2.0][i]).abs() - 1e-3).abs() < 1e-5);
    }
    for step in 0..20 {
        let g = Tensor::from_fn(&[3], |i| ((step * 3 + i) as f64).sin());
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, 5e-3).unwrap();
        for i in 0..3 {
            expected[i] = oracle[i].step(expected[i], g.data()[i], 5e-3);
            assert!((p.data()[i] - expected[i]).abs() < 1e-12);
        }
    }
    assert_eq!(state.t, 21);
}

#[test]
fn adam_zero_gradient_and_symmetry() {
    let mut a = Tensor::new(&[2], vec![1.0f64, 1.0]).unwrap();
    let mut b = Tensor::new(&[2], vec![1.0f64, 1.0]).unwrap();
    let mut state = AdamState::for_params(&[&a, &b]);
    adam_step(&mut [&mut a, &mut b], &[Tensor::zeros(&[2]), Tensor::zeros(&[2])], &mut state, 1e-3).unwrap();
    assert_eq!(a.data(), &[1.0, 1.0]);
    assert_eq!(state.t, 1);
    let g = Tensor::new(&[2], vec![0.25, 0.25]).unwrap();
    adam_step(&mut [&mut a, &mut b], &[g.clone(), g], &mut state, 1e-3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.data()[0], a.data()[1]);
}

#[test]
fn adam_nan_names_the_layer() {
    let mut p = Tensor::new(&[2], vec![1.0f32, 2.0]).unwrap();
    let before = p.clone();
    let mut state = AdamState::for_params(&[&p]);
    let g = Tensor::new(&[2], vec![0.1f32, f32::NAN]).unwrap();
    let err = adam_step_named(&mut [&mut p], &[g], &mut state, 1e-3, &["ConvB1.weight".into()]).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }));
    assert!(err.to_string().contains("ConvB1.weight"), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert_eq!((p, state.t), (before, 0));
}

#[test]
fn splits_partition_cases() {
    let s = Split::holdout(20, 3, 0.2);
    assert_eq!((s.train.len(), s.val.len()), (16, 4));
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
    all.sort();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
    assert_eq!(s, Split::holdout(20, 3, 0.2));
    assert_ne!(s, Split::holdout(20, 4, 0.2));
    assert_eq!(Split::holdout(5, 0, 0.0).val.len(), 0);

    let folds: Vec<Split> = (0..3).map(|f| Split::k_fold(10, 1, 3, f)).collect();
    let mut vals: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
    vals.sort();
    assert_eq!(vals, (0..10).collect::<Vec<_>>());
}

fn phantoms(count: usize, size: usize) -> Dataset {
    Dataset {
        cases: (0..count)
            .map(|i| {
                let (volume, labels) = synth_phantom(100 + i as u64, [size; 3], [1.0; 3], 3).unwrap();
                Case {
                    id: format!("p{i}"),
                    volume,
                    labels,
                }
            })
            .collect(),
    }
}

fn small_config(epochs: u64, val_fraction: f64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            num_classes: 3,
            base_channels: 4,
            cam_channels: 6,
            latent_channels: 6,
            ..ModelConfig::pelvis()
        },
        epochs,
        val_fraction,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn losses_of(history: &[canvolve::trainer::StepRecord]) -> Vec<(u64, u64, u64, u64)> {
    history.iter().map(|r| (r.step, r.epoch, r.lr.to_bits(), r.loss.to_bits())).collect()
}

#[test]
fn step_count_and_determinism() {
    let data = phantoms(4, 16);
    let config = small_config(2, 0.0);
    let (net_a, state_a) = train::<f32>(&config, &data).unwrap();
    assert_eq!(state_a.history.len(), 8);
    assert_eq!(state_a.adam.t, 8);
    assert_eq!(state_a.epochs.len(), 2);
    assert!(state_a.best.is_none());
    let (net_b, state_b) = train::<f32>(&config, &data).unwrap();
    assert_eq!(losses_of(&state_a.history), losses_of(&state_b.history));
    assert_eq!(net_a, net_b);
}

#[test]
fn resume_matches_unbroken_run() {
    let data = phantoms(5, 16);
    let config = small_config(3, 0.2);
    let mut unbroken = Trainer::<f32>::new(config.clone(), &data).unwrap();
    unbroken.run_to_end().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("mid.ckpt");
    let mut first = Trainer::<f32>::new(config.clone(), &data).unwrap();
    first.run(1).unwrap();
    first.save(&ckpt).unwrap();
    drop(first);
    let mut resumed = Trainer::<f32>::resume(config.clone(), &data, &ckpt).unwrap();
    assert_eq!(resumed.state().epoch, 1);
    resumed.run_to_end().unwrap();

    assert_eq!(losses_of(&unbroken.state().history), losses_of(&resumed.state().history));
    assert_eq!(unbroken.network(), resumed.network());
    assert_eq!(unbroken.state().adam, resumed.state().adam);
    assert_eq!(unbroken.state().best, resumed.state().best);
    assert!(resumed.run_epoch().is_err());

    let other = TrainConfig { seed: 12, ..config };
    assert!(matches!(Trainer::<f32>::resume(other, &data, &ckpt).err().unwrap().root(), Error::Config(_)));
}

#[test]
fn descent_on_repeated_phantom() {
    let data = phantoms(1, 16);
    let config = TrainConfig {
        model: ModelConfig {
            num_classes: 3,
            ..ModelConfig::pelvis()
        },
        epochs: 50,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let (_, state) = train::<f32>(&config, &data).unwrap();
    let windows: Vec<f64> = state
        .history
        .chunks(5)
        .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / 5.0)
        .collect();
    assert_eq!(windows.len(), 10);
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

#[test]
fn contract_errors_name_the_case() {
    assert!(matches!(train::<f32>(&small_config(1, 0.0), &Dataset::default()), Err(Error::EmptyDataset)));
    let mut data = phantoms(2, 16);
    let (volume, labels) = synth_phantom(0, [17, 16, 16], [1.0; 3], 3).unwrap();
    data.cases.push(Case {
        id: "odd_case".into(),
        volume,
        labels,
    });
    let err = Trainer::<f32>::new(small_config(1, 0.0), &data).err().unwrap();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("odd_case"), "{err}");
}

#[test]
fn argmax_ties_and_prediction() {
    let uniform = Tensor::<f32>::full(&[1, 3, 2, 2, 2], 1.0 / 3.0);
    assert_eq!(argmax_channels(&uniform).unwrap(), vec![0; 8]);
    let labels: Vec<u8> = (0..8).map(|i| (i % 3) as u8).collect();
    let one_hot = canvolve::losses::one_hot::<f32>(&labels, [2, 2, 2], 3).unwrap();
    assert_eq!(argmax_channels(&one_hot).unwrap(), labels);

    let data = phantoms(2, 16);
    let config = small_config(1, 0.0);
    let (net, _) = train::<f32>(&config, &data).unwrap();
    let pred = predict(&net, &data.cases[0].volume).unwrap();
    assert_eq!(pred.dims(), [16, 16, 16]);
    let report = evaluate(&net, &data).unwrap();
    assert_eq!(report.cases.len(), 2);
    assert_eq!(report.cases[1].case_id, "p1");

    let truth = Dataset {
        cases: vec![data.cases[0].clone()],
    };
    let self_report = canvolve::metrics::evaluate_case(&truth.cases[0].labels, &truth.cases[0].labels, [1.0; 3], 3).unwrap();
    assert!(self_report.classes.iter().all(|c| c.dsc == Some(1.0) && c.flag == MetricFlag::Ok));
}

#[test]
fn history_csv_and_loss_kinds() {
    let data = phantoms(2, 16);
    for kind in LossKind::ALL {
        let config = TrainConfig {
            loss: LossSettings {
                kind,
                ..LossSettings::default()
            },
            ..small_config(1, 0.0)
        };
        let (_, state) = train::<f32>(&config, &data).unwrap();
        assert!(state.history.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0), "{kind}");
        assert_eq!(kind.as_str().parse::<LossKind>().unwrap(), kind);
        if kind == LossKind::Dsf {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("history.csv");
            write_history_csv(&path, &state.history).unwrap();
            let text = std::fs::read_to_string(path).unwrap();
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(lines[0], "# schema-version: 1");
            assert_eq!(lines[1], "step,epoch,lr,loss,wall_ms");
            assert_eq!(lines.len(), 4);
        }
    }
    assert!("mse".parse::<LossKind>().is_err());
}
