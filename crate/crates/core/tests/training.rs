use chrono::NaiveDate;
use vlstm_core::cells::{BiasMode, CellConfig, GateCoupling};
use vlstm_core::data::{make_windows, Split, WindowedDataset};
use vlstm_core::model::{ForecastModel, ModelConfig};
use vlstm_core::ndcore::Tensor;
use vlstm_core::synthetic::{as_log_vol_series, fraction_split, EmaMixture};
use vlstm_core::train::{evaluate, train_model, StopReason, TrainConfig};

fn dataset(values: &[f64], t_seq: usize) -> WindowedDataset {
    let s = as_log_vol_series("X", values, NaiveDate::from_ymd_opt(2000, 1, 1).unwrap());
    let d = fraction_split(&s, 0.6, 0.2).unwrap();
    make_windows(&[s], t_seq, &d, false).unwrap()
}

fn lstm(hidden: usize, t_seq: usize, seed: u64) -> ForecastModel {
    ForecastModel::init(
        ModelConfig {
            cell: CellConfig::lstm(1, hidden, BiasMode::On),
            t_seq,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn constant_target_is_learned() {
    let data = dataset(&[0.5; 400], 5);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 32,
        max_epochs: 300,
        seed: 1,
        ..TrainConfig::default()
    };
    let r = train_model(&lstm(2, 5, 0), &data, &cfg).unwrap();
    assert!(r.best_val_loss <= 1e-4, "{}", r.best_val_loss);
    assert!(r.train_curve[10] < r.train_curve[0]);
}

#[test]
fn ema_process_reaches_its_noise_floor() {
    let gen = EmaMixture {
        a: 0.9,
        b: 0.0,
        tau_fast: 10.0,
        tau_slow: 10.0,
        noise_var: 0.01,
    };
    let y = gen.generate(3000, 500, 3).unwrap();
    let data = dataset(&y, 20);
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 100,
        seed: 2,
        ..TrainConfig::default()
    };
    let r = train_model(&lstm(2, 20, 1), &data, &cfg).unwrap();
    assert!(r.best_val_loss <= 1.2 * 0.01, "{}", r.best_val_loss);
}

#[test]
fn zero_learning_rate_stops_after_patience_plus_one() {
    let y = EmaMixture::default().generate(600, 100, 1).unwrap();
    let data = dataset(&y, 10);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let r = train_model(&lstm(2, 10, 0), &data, &cfg).unwrap();
    assert_eq!(r.epochs_run, cfg.patience + 1);
    assert!(r.val_curve.iter().all(|&v| v == r.val_curve[0]));
    assert_eq!(r.stop_reason, StopReason::EarlyStopped);
    assert!(r.converged);
}

#[test]
fn restored_model_has_the_best_validation_loss() {
    let y = EmaMixture::default().generate(1500, 200, 5).unwrap();
    let data = dataset(&y, 10);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 25,
        seed: 7,
        ..TrainConfig::default()
    };
    let cell = CellConfig::vlstm(1, 2, 2, BiasMode::On, GateCoupling::Independent);
    let m = ForecastModel::init(ModelConfig { cell, t_seq: 10 }, 3).unwrap();
    let r = train_model(&m, &data, &cfg).unwrap();
    let min = r.val_curve.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val_loss, min);
    assert_eq!(r.val_curve[r.best_epoch - 1], min);
    assert_eq!(r.val_curve.len(), r.epochs_run);
    assert_eq!(r.train_curve.len(), r.epochs_run);
    assert!(r.epochs_run <= cfg.max_epochs);
    assert_eq!(r.converged, r.stop_reason == StopReason::EarlyStopped);
    let again = evaluate(&r.final_model, &data, Split::Validation).unwrap();
    assert!((again - r.best_val_loss).abs() <= 1e-12);
    assert_eq!(r.log.len(), r.epochs_run);
    let csv = r.log_csv().unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_loss,wall_time_s,clipped"));
}

#[test]
fn training_is_deterministic() {
    let y = EmaMixture::default().generate(800, 100, 9).unwrap();
    let data = dataset(&y, 8);
    let cfg = TrainConfig {
        max_epochs: 6,
        seed: 11,
        ..TrainConfig::default()
    };
    let cell = CellConfig::msgru(1, 2, 2, BiasMode::On);
    let m = ForecastModel::init(ModelConfig { cell, t_seq: 8 }, 4).unwrap();
    let a = train_model(&m, &data, &cfg).unwrap();
    let b = train_model(&m, &data, &cfg).unwrap();
    assert_eq!(a.train_curve, b.train_curve);
    assert_eq!(a.val_curve, b.val_curve);
    assert_eq!(a.final_model, b.final_model);
    let c = train_model(&m, &data, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.train_curve, c.train_curve, "shuffle seed must matter");
}

#[test]
fn evaluate_equals_loss_over_the_whole_split() {
    let y = EmaMixture::default().generate(500, 100, 2).unwrap();
    let data = dataset(&y, 7);
    let m = lstm(3, 7, 5);
    let d = data.split(Split::Test);
    let x = Tensor::new(vec![d.len(), 7, 1], d.windows.clone()).unwrap();
    let direct = m.loss(&x, &d.targets).unwrap();
    let e = evaluate(&m, &data, Split::Test).unwrap();
    assert!((direct - e).abs() <= 1e-12);
    assert_eq!(e, evaluate(&m, &data, Split::Test).unwrap());
}

#[test]
fn empty_splits_are_rejected() {
    let y = EmaMixture::default().generate(300, 10, 2).unwrap();
    let mut data = dataset(&y, 5);
    data.test = Default::default();
    assert!(evaluate(&lstm(1, 5, 0), &data, Split::Test).is_err());
    data.validation = Default::default();
    assert!(train_model(&lstm(1, 5, 0), &data, &TrainConfig::default()).is_err());
}
