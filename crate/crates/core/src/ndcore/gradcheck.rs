use crate::error::{invalid, Error, Result};
use crate::ndcore::{Bindings, Gradients};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `loss_fn`'s analytic gradients against central finite
/// differences (steps `epsilon` and `epsilon/2`, Richardson-combined) for
/// every component of every tensor in `params`.
///
/// `loss_fn` returns the loss and its gradients at the given bindings.
pub fn grad_check<F>(params: &Bindings, epsilon: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&Bindings) -> Result<(f64, Gradients)>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(invalid(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let (base, grads) = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base} at base point")));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, tensor) in params {
        let analytic = grads
            .get(name)
            .ok_or_else(|| invalid(format!("no analytic gradient for `{name}`")))?;
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            let mut central = |h: f64| -> Result<f64> {
                probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
                let (plus, _) = loss_fn(&probe)?;
                probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
                let (minus, _) = loss_fn(&probe)?;
                probe.get_mut(name).unwrap().data_mut()[i] = orig;
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::NonFinite(format!("loss while perturbing {name}[{i}]")));
                }
                Ok((plus - minus) / (2.0 * h))
            };
            // one Richardson step: O(h^4) truncation
            let (wide, narrow) = (central(epsilon)?, central(epsilon / 2.0)?);
            let numeric = (4.0 * narrow - wide) / 3.0;
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst_param.is_empty() {
                report.max_relative_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{Graph, Session, Tensor};

    #[test]
    fn quadratic_loss_is_exact() {
        // loss = mean((W x - t)^2)
        let mut g = Graph::new();
        let x = g.input("x");
        let w = g.param("w");
        let t = g.input("t");
        let y = g.linear(x, w);
        let l = g.mse(y, t);
        g.mark_output("loss", l);

        let inputs: Bindings = [
            ("x".to_string(), Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.7]).unwrap()),
            ("t".to_string(), Tensor::matrix(3, 1, vec![1.0, 0.0, -2.0]).unwrap()),
        ]
        .into_iter()
        .collect();
        let params: Bindings = [("w".to_string(), Tensor::matrix(1, 2, vec![0.3, -0.4]).unwrap())]
            .into_iter()
            .collect();

        let report = grad_check(&params, 1e-4, |p| {
            let mut b = inputs.clone();
            b.extend(p.clone());
            let mut s = Session::new(&g);
            let out = s.evaluate(&b)?;
            Ok((out["loss"].data()[0], s.backward("loss")?))
        })
        .unwrap();
        assert!(report.max_relative_error <= 1e-9, "{report:?}");
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let p = Bindings::new();
        let r = grad_check(&p, 0.1, |_| Ok((0.0, Gradients::default())));
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_loss_fails() {
        let p = Bindings::new();
        let r = grad_check(&p, 1e-5, |_| Ok((f64::NAN, Gradients::default())));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
