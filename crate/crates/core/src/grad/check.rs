use super::{Bindings, GradError, NodeId, Tape, Tensor};

/// Maximum relative error between `backward` and central finite differences.
///
/// `build` records a scalar-valued function of the single marked input it is
/// given and returns the output node. Relative error per component is
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn grad_check<F>(build: F, point: &Tensor, step: f64) -> Result<f64, GradError>
where
    F: Fn(&mut Tape<'_>, NodeId) -> Result<NodeId, GradError>,
{
    grad_check_excluding(build, point, step, &[])
}

/// Like [`grad_check`], skipping the listed flat components.
///
/// Components sitting exactly on a nondifferentiable point (a ReLU kink at
/// 0.0, say) have no well-defined derivative and must be excluded here.
pub fn grad_check_excluding<F>(
    build: F,
    point: &Tensor,
    step: f64,
    excluded: &[usize],
) -> Result<f64, GradError>
where
    F: Fn(&mut Tape<'_>, NodeId) -> Result<NodeId, GradError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(GradError::Check(format!("step must be positive, got {step}")));
    }

    let eval = |x: &Tensor, marked: bool| -> Result<(f64, Option<Tensor>), GradError> {
        let mut tape = Tape::new();
        let input = tape.input(x.shape(), marked);
        let out = build(&mut tape, input)?;
        tape.set_output(out);
        let mut b = Bindings::new();
        b.bind(input, x);
        let value = tape.forward(b)?;
        if value.len() != 1 {
            return Err(GradError::Check(format!(
                "function output has shape {:?}, expected a scalar",
                value.shape()
            )));
        }
        let value = value.item();
        let grad = if marked {
            let mut g = tape.backward(&Tensor::filled(tape.shape(out), 1.0))?;
            g.take(input)
        } else {
            None
        };
        Ok((value, grad))
    };

    let (_, analytic) = eval(point, true)?;
    let analytic = analytic.ok_or_else(|| GradError::Check("no gradient for input".into()))?;

    let mut worst = 0.0_f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        if excluded.contains(&i) {
            continue;
        }
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + step;
        let (up, _) = eval(&probe, false)?;
        probe.data_mut()[i] = x0 - step;
        let (down, _) = eval(&probe, false)?;
        probe.data_mut()[i] = x0;

        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(GradError::Check(format!(
                "non-finite comparison at component {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
