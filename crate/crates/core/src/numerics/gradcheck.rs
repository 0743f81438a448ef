use super::{Graph, NumericsError, Tensor, Var};

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, flat coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, coordinate by coordinate.
///
/// `f` receives a fresh graph and one leaf per entry of `params`, in order.
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn gradient_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).expect("parameter leaf has a gradient"))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let t = g.value(out);
        t.item().ok_or_else(|| NumericsError::NotScalarLoss(t.shape().to_vec()))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for p in 0..params.len() {
        for c in 0..params[p].numel() {
            let orig = params[p].data()[c];
            work[p].data_mut()[c] = orig + epsilon;
            let plus = eval(&work)?;
            work[p].data_mut()[c] = orig - epsilon;
            let minus = eval(&work)?;
            work[p].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[p].data()[c];
            let rel = relative_error(a, numeric);
            report.coordinates += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                report.worst = Some((p, c));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::XorShiftRng;

    fn random(rng: &mut XorShiftRng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.symmetric(1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_map() {
        let mut rng = XorShiftRng::new(1);
        let w = random(&mut rng, &[5]);
        let x = random(&mut rng, &[5]);
        let report = gradient_check(
            |g, v| {
                let x = g.constant(x.clone());
                let y = g.mul(v[0], x)?;
                g.sum(y)
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn sigmoid_dense_layer() {
        let mut rng = XorShiftRng::new(2);
        let w = random(&mut rng, &[4, 4]);
        let b = random(&mut rng, &[4]);
        let x = random(&mut rng, &[4]);
        let report = gradient_check(
            |g, v| {
                let x = g.constant(x.clone());
                let z = g.matmul(v[0], x)?;
                let z = g.add(z, v[1])?;
                let s = g.sigmoid(z)?;
                g.sum(s)
            },
            &[w, b],
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn constant_function() {
        let report = gradient_check(
            |g, _| Ok(g.constant(Tensor::scalar(2.5))),
            &[Tensor::vector(vec![1.0, -1.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_relative_error, 0.0);
        assert_eq!(report.coordinates, 2);
    }
}
