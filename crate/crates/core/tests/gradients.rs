//! Full-model loss gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlstm_core::cells::{BiasMode, CellConfig, GateCoupling};
use vlstm_core::model::{step_inputs, ForecastModel, ModelConfig};
use vlstm_core::ndcore::grad_check;
use vlstm_core::ndcore::Tensor;

fn cells(hidden: usize, bias: BiasMode) -> Vec<CellConfig> {
    vec![
        CellConfig::lstm(1, hidden, bias),
        CellConfig::vlstm(1, hidden, 2, bias, GateCoupling::Independent),
        CellConfig::vlstm(1, hidden, 2, bias, GateCoupling::Tied),
        CellConfig::vlstm(1, hidden, 3, bias, GateCoupling::Independent),
        CellConfig::msgru(1, hidden, 2, bias),
    ]
}

fn random_case(cell: CellConfig, t_seq: usize, seed: u64) -> (ForecastModel, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ForecastModel::init(ModelConfig { cell, t_seq }, seed).unwrap();
    // move every parameter off its initial value so mixing logits and
    // zero biases get nonzero gradients
    let mut params = model.params();
    for t in params.values_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let model = model.with_params(&params).unwrap();
    let batch = 3;
    let x: Vec<f64> = (0..batch * t_seq).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let y: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (
        model,
        Tensor::new(vec![batch, t_seq, 1], x).unwrap(),
        Tensor::new(vec![batch, 1], y).unwrap(),
    )
}

fn max_error(cell: CellConfig, t_seq: usize, seed: u64) -> f64 {
    let (model, x, y) = random_case(cell, t_seq, seed);
    let graph = model.build_graph().unwrap();
    let steps = step_inputs(&x).unwrap();
    // components near 1e-7 need a wide step; the extrapolation absorbs truncation
    let report = grad_check(&model.params(), 1e-3, |p| {
        graph.loss_and_grad(&graph.bind(p, steps.clone(), y.clone())?)
    })
    .unwrap();
    assert_eq!(report.checked, model.param_count());
    report.max_relative_error
}

#[test]
fn every_cell_matches_finite_differences() {
    let mut seed = 0;
    for bias in [BiasMode::On, BiasMode::Off] {
        for hidden in [1, 3] {
            for t_seq in [1, 5, 20] {
                for cell in cells(hidden, bias) {
                    seed += 1;
                    let err = max_error(cell, t_seq, seed);
                    assert!(err < 1e-5, "{cell:?} T={t_seq}: {err:e}");
                }
            }
        }
    }
}

#[test]
fn eager_loss_equals_graph_loss() {
    for (i, cell) in cells(2, BiasMode::On).into_iter().enumerate() {
        let (model, x, y) = random_case(cell, 7, 100 + i as u64);
        let graph = model.build_graph().unwrap();
        let b = graph
            .bind(&model.params(), step_inputs(&x).unwrap(), y.clone())
            .unwrap();
        let g = graph.loss(&b).unwrap();
        let e = model.loss(&x, y.data()).unwrap();
        assert!((g - e).abs() <= 1e-14 * e.abs().max(1.0), "{g} vs {e}");
    }
}

