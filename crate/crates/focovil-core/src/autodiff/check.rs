//! Gradient verification against central differences.

use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`
/// so that near-zero gradients are compared absolutely; central differences
/// carry roundoff noise of roughly `|f|·1e-16/h`, which would otherwise
/// dominate the ratio for tiny true gradients.
const REL_FLOOR: f64 = 1e-6;

/// One element whose reverse-mode gradient disagrees with the
/// central-difference estimate.
#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of [`grad_check`] over every element of every input.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares the reverse-mode gradient of a scalar-valued tensor function
/// against central differences `(f(x+h) − f(x−h)) / 2h`, element by element.
///
/// `build` receives a fresh graph and one [`Var`] per input tensor and must
/// return a single-element output node. Elements whose relative error
/// exceeds `tol` are listed in the report.
pub fn grad_check<F>(build: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    // Analytic pass: all inputs participate in differentiation.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::InvalidInput {
            reason: "grad_check output is not scalar".into(),
        });
    }
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.scalar_value(out))
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        failures: Vec::new(),
    };
    for i in 0..inputs.len() {
        for e in 0..inputs[i].numel() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + h;
            let f_plus = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let f_minus = eval(&work)?;
            work[i].data_mut()[e] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[i].data()[e];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
            if rel > tol {
                report.failures.push(GradCheckFailure {
                    input: i,
                    index: e,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        crate::rng::stream(seed, "grad-check-test", 0, 0)
    }

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Positive-valued tensor for log/sqrt/denominator checks, kept away
    /// from the epsilon floor so finite differences do not cross the kink.
    fn positive_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(0.3..2.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-6;

    #[test]
    fn every_primitive_passes_grad_check() {
        let mut r = rng(11);
        // (name, builder, inputs) — each reduces to a scalar via sum/mean so
        // all output elements receive distinct upstream gradients via mul
        // with a fixed random constant where that matters.
        let a23 = random_tensor(&[2, 3], &mut r);
        let b34 = random_tensor(&[3, 4], &mut r);
        let c23 = random_tensor(&[2, 3], &mut r);
        let pos23 = positive_tensor(&[2, 3], &mut r);
        let v3 = random_tensor(&[3], &mut r);
        let v2pos = positive_tensor(&[2], &mut r);

        let check = |name: &str,
                     build: &dyn Fn(&mut Graph, &[Var]) -> crate::Result<Var>,
                     inputs: &[Tensor]| {
            let rep = grad_check(build, inputs, H, TOL).unwrap();
            assert!(
                rep.passed(),
                "{name}: max rel error {} with {} failure(s)",
                rep.max_rel_error,
                rep.failures.len()
            );
        };

        check(
            "matmul",
            &|g, v| {
                let m = g.matmul(v[0], v[1])?;
                g.sum(m)
            },
            &[a23.clone(), b34.clone()],
        );
        check(
            "add",
            &|g, v| {
                let m = g.add(v[0], v[1])?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            },
            &[a23.clone(), c23.clone()],
        );
        check(
            "sub",
            &|g, v| {
                let m = g.sub(v[0], v[1])?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            },
            &[a23.clone(), c23.clone()],
        );
        check(
            "mul",
            &|g, v| {
                let m = g.mul(v[0], v[1])?;
                g.sum(m)
            },
            &[a23.clone(), c23.clone()],
        );
        check(
            "div",
            &|g, v| {
                let m = g.div(v[0], v[1])?;
                g.sum(m)
            },
            &[a23.clone(), pos23.clone()],
        );
        check(
            "div_rows",
            &|g, v| {
                let m = g.div_rows(v[0], v[1])?;
                g.sum(m)
            },
            &[a23.clone(), v2pos.clone()],
        );
        check(
            "add_bias",
            &|g, v| {
                let m = g.add_bias(v[0], v[1])?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            },
            &[a23.clone(), v3.clone()],
        );
        check(
            "affine_scalar",
            &|g, v| {
                let m = g.affine_scalar(v[0], -1.7, 0.3)?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            },
            &[a23.clone()],
        );
        check(
            "concat_axis0",
            &|g, v| {
                let m = g.concat(&[v[0], v[1]], 0)?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            },
            &[a23.clone(), c23.clone()],
        );
        check(
            "concat_axis1",
            &|g, v| {
                let m = g.concat(&[v[0], v[1]], 1)?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            },
            &[a23.clone(), c23.clone()],
        );
        check(
            "slice",
            &|g, v| {
                let m = g.slice(v[0], 1, 1, 3)?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            },
            &[a23.clone()],
        );
        check(
            "transpose",
            &|g, v| {
                let m = g.transpose(v[0])?;
                let sq = g.mul(m, m)?;
                let s = g.sum(sq)?;
                g.scale(s, 0.5)
            },
            &[a23.clone()],
        );
        check("sum", &|g, v| g.sum(v[0]), &[a23.clone()]);
        check(
            "mean",
            &|g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.mean(sq)
            },
            &[a23.clone()],
        );
        check(
            "row_sums",
            &|g, v| {
                let rs = g.row_sums(v[0])?;
                let sq = g.mul(rs, rs)?;
                g.sum(sq)
            },
            &[a23.clone()],
        );
        check(
            "row_norms",
            &|g, v| {
                let rn = g.row_norms(v[0])?;
                g.sum(rn)
            },
            &[a23.clone()],
        );
        check(
            "diag",
            &|g, v| {
                let d = g.diag(v[0])?;
                let sq = g.mul(d, d)?;
                g.sum(sq)
            },
            &[Tensor::matrix(&[
                vec![0.7, 1.1, 0.4],
                vec![1.9, 0.5, 1.2],
                vec![0.8, 1.4, 0.9],
            ])
            .unwrap()],
        );
        check(
            "sigmoid",
            &|g, v| {
                let s = g.sigmoid(v[0])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            },
            &[a23.clone()],
        );
        check(
            "tanh",
            &|g, v| {
                let t = g.tanh(v[0])?;
                let sq = g.mul(t, t)?;
                g.sum(sq)
            },
            &[a23.clone()],
        );
        check(
            "exp",
            &|g, v| {
                let e = g.exp(v[0])?;
                g.sum(e)
            },
            &[a23.clone()],
        );
        check(
            "log",
            &|g, v| {
                let l = g.log(v[0])?;
                g.sum(l)
            },
            &[pos23.clone()],
        );
        check(
            "sqrt",
            &|g, v| {
                let s = g.sqrt(v[0])?;
                g.sum(s)
            },
            &[pos23.clone()],
        );
        check("l2_norm", &|g, v| g.l2_norm(v[0]), &[a23.clone()]);
        check(
            "clamp_min",
            &|g, v| {
                let c = g.clamp_min(v[0], 0.5)?;
                g.sum(c)
            },
            &[pos23.clone()],
        );
        check(
            "softmax",
            &|g, v| {
                let s = g.softmax(v[0])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            },
            &[a23.clone()],
        );
        check(
            "cross_entropy",
            &|g, v| g.cross_entropy(v[0], &[2, 0]),
            &[a23.clone()],
        );
    }

    #[test]
    fn deliberately_wrong_backward_is_flagged() {
        // f(x) = sum(detach(x) ⊙ x) has true derivative 2x, but the tape
        // only sees the non-detached factor, so its gradient is x.
        let mut r = rng(12);
        let x = random_tensor(&[4], &mut r);
        let rep = grad_check(
            |g, v| {
                let d = g.detach(v[0]);
                let p = g.mul(d, v[0])?;
                g.sum(p)
            },
            &[x],
            H,
            TOL,
        )
        .unwrap();
        assert!(!rep.passed());
        assert!(rep.max_rel_error > 0.1);
    }

    #[test]
    fn exactly_zero_gradients_match_without_failures() {
        // Output ignores the second input entirely: both analytic and
        // numeric gradients are exactly zero there.
        let mut r = rng(13);
        let used = random_tensor(&[3], &mut r);
        let unused = random_tensor(&[3], &mut r);
        let rep = grad_check(|g, v| g.sum(v[0]), &[used, unused], H, TOL).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.checked, 6);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::vector(&[1.0, 2.0]);
        assert!(matches!(
            grad_check(|_, v| Ok(v[0]), &[x], H, TOL),
            Err(Error::InvalidInput { .. })
        ));
    }
}
