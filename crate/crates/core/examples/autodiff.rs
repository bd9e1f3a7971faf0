//! Records a small two-layer network on the tape, runs backward, and checks
//! the result against central finite differences.

use attrsim::grad::{grad_check, Axis, Bindings, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]])?;

    let mut tape = Tape::new();
    let input = tape.input(&[2, 3], true);
    let h = tape.matmul_bt(input, input)?;
    let h = tape.gelu(h);
    let s = tape.softmax(h, None)?;
    let row = tape.slice(s, Axis::Rows, 0, 1)?;
    let loss = tape.cross_entropy(row, &[0.3, 0.7], None)?;
    tape.set_output(loss);

    let mut b = Bindings::new();
    b.bind(input, &x);
    let value = tape.forward(b)?.item();
    let mut grads = tape.backward(&Tensor::scalar(1.0))?;
    let g = grads.take(input).expect("input is marked");
    println!("loss = {value:.6}");
    for r in 0..g.rows() {
        println!("dL/dx[{r}] = {:?}", g.row_slice(r));
    }

    let err = grad_check(
        |t, i| {
            let h = t.matmul_bt(i, i)?;
            let h = t.gelu(h);
            let s = t.softmax(h, None)?;
            let row = t.slice(s, Axis::Rows, 0, 1)?;
            t.cross_entropy(row, &[0.3, 0.7], None)
        },
        &x,
        1e-5,
    )?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
