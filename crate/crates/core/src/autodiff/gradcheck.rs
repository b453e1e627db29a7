use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError, Var};

type BoxError = Box<dyn std::error::Error + Send + Sync>;
type CaseFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var, BoxError> + Send + Sync>;
type PointFn = Box<dyn Fn(&mut ChaCha8Rng) -> Tensor + Send + Sync>;

/// Compares tape gradients of `function` at `point` with central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<E>(
    function: impl Fn(&mut Tape, Var) -> Result<Var, E>,
    point: &Tensor,
    step: f64,
) -> Result<f64, E>
where
    E: From<TensorError>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(TensorError::InvalidStep(step).into());
    }
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = function(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad_or_zeros(x);

    let eval = |p: Tensor| -> Result<f64, E> {
        let mut tape = Tape::new();
        let x = tape.constant(p);
        let y = function(&mut tape, x)?;
        Ok(tape.scalar(y))
    };

    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// One named entry of a gradient-check suite.
pub struct GradCheckCase {
    pub name: String,
    pub tolerance: f64,
    point: PointFn,
    function: CaseFn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub points: usize,
    pub error: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_err < self.tolerance
    }
}

impl GradCheckCase {
    pub fn new<P, F, E>(name: impl Into<String>, tolerance: f64, point: P, function: F) -> Self
    where
        P: Fn(&mut ChaCha8Rng) -> Tensor + Send + Sync + 'static,
        F: Fn(&mut Tape, Var) -> Result<Var, E> + Send + Sync + 'static,
        E: Into<BoxError>,
    {
        Self {
            name: name.into(),
            tolerance,
            point: Box::new(point),
            function: Box::new(move |tape, x| function(tape, x).map_err(Into::into)),
        }
    }

    /// Checks the case at `points` random points drawn from `seed`.
    pub fn run(&self, points: usize, step: f64, seed: u64) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut error = None;
        for _ in 0..points {
            let p = (self.point)(&mut rng);
            match grad_check::<BoxError>(|t, x| (self.function)(t, x), &p, step) {
                Ok(e) => worst = worst.max(e),
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        GradCheckReport {
            name: self.name.clone(),
            max_rel_err: worst,
            tolerance: self.tolerance,
            points,
            error,
        }
    }
}

/// Uniform draw in ±`scale` that stays at least `gap` away from zero.
pub(crate) fn away_from_zero(rng: &mut ChaCha8Rng, scale: f64, gap: f64) -> f64 {
    let mag = rng.gen_range(gap..scale);
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

pub(crate) fn random_matrix(rows: usize, cols: usize, f: impl FnMut() -> f64) -> Tensor {
    let data = std::iter::repeat_with(f).take(rows * cols).collect();
    Tensor::matrix(rows, cols, data).expect("positive dimensions")
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights, so that
/// ops whose plain sum is constant (softmax) still get a non-trivial check.
pub fn weighted_sum(tape: &mut Tape, y: Var) -> Result<Var, TensorError> {
    let shape = tape.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ n as u64);
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    tape.sum(prod, None)
}

/// The gradient-check cases for every primitive operation of the tape.
pub fn primitive_suite() -> Vec<GradCheckCase> {
    const TOL: f64 = 1e-5;
    let general = |rng: &mut ChaCha8Rng| random_matrix(3, 4, || away_from_zero(rng, 2.0, 0.05));
    let positive = |rng: &mut ChaCha8Rng| random_matrix(3, 4, || rng.gen_range(0.1..3.0));

    let mut cases = Vec::new();
    macro_rules! case {
        ($name:expr, $point:expr, |$t:ident, $x:ident| $body:expr) => {
            cases.push(GradCheckCase::new(
                $name,
                TOL,
                $point,
                move |$t: &mut Tape, $x: Var| -> Result<Var, TensorError> {
                    let y = $body?;
                    weighted_sum($t, y)
                },
            ));
        };
    }

    let fixed = |seed: u64, rows: usize, cols: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_matrix(rows, cols, || rng.gen_range(-1.5..1.5))
    };
    let right = fixed(1, 4, 5);
    let left = fixed(2, 5, 3);
    let other = fixed(3, 3, 4);
    let divisor = fixed(4, 3, 4).map(|v| if v >= 0.0 { v + 0.5 } else { v - 0.5 });
    let bias = fixed(5, 1, 4).reshaped(vec![4]).expect("bias shape");
    let base = fixed(6, 3, 4);

    {
        let right = right.clone();
        case!("matmul_lhs", general, |t, x| {
            let b = t.constant(right.clone());
            t.matmul(x, b)
        });
    }
    {
        let left = left.clone();
        case!("matmul_rhs", general, |t, x| {
            let a = t.constant(left.clone());
            t.matmul(a, x)
        });
    }
    {
        let o = other.clone();
        case!("add", general, |t, x| {
            let c = t.constant(o.clone());
            t.add(x, c)
        });
    }
    {
        let o = other.clone();
        case!("sub", general, |t, x| {
            let c = t.constant(o.clone());
            t.sub(c, x)
        });
    }
    {
        let o = other.clone();
        case!("mul", general, |t, x| {
            let c = t.constant(o.clone());
            let xc = t.mul(x, c)?;
            t.mul(xc, x)
        });
    }
    {
        let d = divisor.clone();
        case!("div_numerator", general, |t, x| {
            let c = t.constant(d.clone());
            t.div(x, c)
        });
    }
    {
        let o = other.clone();
        case!("div_denominator", general, |t, x| {
            let c = t.constant(o.clone());
            t.div(c, x)
        });
    }
    case!("scale", general, |t, x| Ok::<_, TensorError>(t.scale(x, -2.5)));
    case!("add_scalar", general, |t, x| {
        let y = t.add_scalar(x, 0.75);
        t.mul(y, y)
    });
    case!("relu", general, |t, x| Ok::<_, TensorError>(t.relu(x)));
    case!("leaky_relu", general, |t, x| Ok::<_, TensorError>(t.leaky_relu(x, 0.2)));
    case!("sigmoid", general, |t, x| Ok::<_, TensorError>(t.sigmoid(x)));
    case!("tanh", general, |t, x| Ok::<_, TensorError>(t.tanh(x)));
    case!("log", positive, |t, x| t.log(x));
    case!("exp", general, |t, x| t.exp(x));
    case!("abs", general, |t, x| Ok::<_, TensorError>(t.abs(x)));
    case!("sqrt", positive, |t, x| t.sqrt(x));
    case!("square", general, |t, x| Ok::<_, TensorError>(t.square(x)));
    case!("softplus", general, |t, x| Ok::<_, TensorError>(t.softplus(x)));
    case!("sum_all", general, |t, x| {
        let y = t.square(x);
        t.sum(y, None)
    });
    case!("sum_axis0", general, |t, x| t.sum(x, Some(0)));
    case!("sum_axis1", general, |t, x| t.sum(x, Some(1)));
    case!("mean_all", general, |t, x| {
        let y = t.square(x);
        t.mean(y, None)
    });
    case!("mean_axis0", general, |t, x| t.mean(x, Some(0)));
    case!("mean_axis1", general, |t, x| t.mean(x, Some(1)));
    {
        let b = base.clone();
        case!("concat_axis0", general, |t, x| {
            let c = t.constant(b.clone());
            t.concat(&[c, x, x], 0)
        });
    }
    {
        let b = base.clone();
        case!("concat_axis1", general, |t, x| {
            let c = t.constant(b.clone());
            t.concat(&[x, c], 1)
        });
    }
    case!("reshape", general, |t, x| t.reshape(x, &[2, 6]));
    case!("softmax_axis1", general, |t, x| t.softmax(x, 1));
    case!("softmax_axis0", general, |t, x| t.softmax(x, 0));
    case!("log_softmax_axis1", general, |t, x| t.log_softmax(x, 1));
    {
        let b = bias.clone();
        case!("add_bias_input", general, |t, x| {
            let c = t.constant(b.clone());
            t.add_bias(x, c)
        });
    }
    {
        let b = base.clone();
        case!(
            "add_bias_bias",
            |rng: &mut ChaCha8Rng| random_matrix(1, 4, || rng.gen_range(-2.0..2.0))
                .reshaped(vec![4])
                .expect("bias shape"),
            |t, x| {
                let c = t.constant(b.clone());
                t.add_bias(c, x)
            }
        );
    }
    case!("transpose", general, |t, x| t.transpose(x));
    case!("slice_cols", general, |t, x| t.slice_cols(x, 1, 3));
    case!(
        "project_unit_ball",
        |rng: &mut ChaCha8Rng| {
            // Keep every row norm away from the kink at exactly 1.
            let mut m = random_matrix(3, 4, || rng.gen_range(-1.0..1.0));
            for i in 0..3 {
                let target = if i % 2 == 0 {
                    rng.gen_range(0.2..0.8)
                } else {
                    rng.gen_range(1.3..3.0)
                };
                let row: Vec<f64> = m.row(i).to_vec();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                for (j, v) in row.iter().enumerate() {
                    m.data_mut()[i * 4 + j] = v / norm * target;
                }
            }
            m
        },
        |t, x| t.project_unit_ball(x)
    );
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_sigmoid_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::new(vec![10], (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let err = grad_check::<TensorError>(
            |t, x| {
                let s = t.sigmoid(x);
                t.sum(s, None)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn l1_norm_away_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::new(vec![8], (0..8).map(|_| away_from_zero(&mut rng, 2.0, 0.1)).collect())
            .unwrap();
        let err = grad_check::<TensorError>(
            |t, x| {
                let a = t.abs(x);
                t.sum(a, None)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let err = grad_check::<TensorError>(|t, _x| Ok(t.constant(Tensor::scalar(4.0))), &x, 1e-5)
            .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::scalar(1.0);
        let f = |t: &mut Tape, x: Var| -> Result<Var, TensorError> { Ok(t.square(x)) };
        assert!(grad_check(f, &x, 0.0).is_err());
        assert!(grad_check(f, &x, 0.1).is_err());
    }

    #[test]
    fn every_primitive_passes_at_100_points() {
        for case in primitive_suite() {
            let report = case.run(100, 1e-5, 7);
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn wrong_backward_rule_is_detected() {
        let case = GradCheckCase::new(
            "faulty_cube",
            1e-5,
            |rng: &mut ChaCha8Rng| random_matrix(2, 2, || rng.gen_range(0.5..1.5)),
            |t: &mut Tape, x: Var| -> Result<Var, TensorError> {
                let y = t.map(x, |v| v * v * v, |v| 2.0 * v * v);
                t.sum(y, None)
            },
        );
        let report = case.run(5, 1e-5, 0);
        assert!(!report.passed());
    }
}
