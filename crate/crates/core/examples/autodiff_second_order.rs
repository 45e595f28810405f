//! Differentiates through one gradient step, the core of the meta update.
//!
//! For `L(t) = a t^2` and `t' = t - alpha L'(t)`, the outer derivative
//! `d L(t') / d t` is `2a (1 - 2a alpha)^2 t`.

use ramoe::autodiff::{backward, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (a, alpha) = (1.5, 0.1);
    for t0 in [-1.0, 0.5, 2.0] {
        let tape = Tape::new();
        let t = tape.leaf(&Tensor::scalar(t0));
        let inner = t.mul(&t)?.scale(a)?;
        // create_graph keeps the gradient on the tape so it can be differentiated again.
        let g = backward(&inner, &[&t], true)?.remove(0);
        let t_prime = t.sub(&g.scale(alpha)?)?;
        let outer = t_prime.mul(&t_prime)?.scale(a)?;
        let got = backward(&outer, &[&t], false)?[0].item();
        let want = 2.0 * a * (1.0 - 2.0 * a * alpha).powi(2) * t0;
        println!("t={t0:5.2}  autodiff={got:.12}  closed form={want:.12}  diff={:.1e}", (got - want).abs());
    }

    // The same machinery on a matrix: gradient of sum(softmax(W x)) w.r.t. W.
    let tape = Tape::new();
    let w = tape.leaf(&Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.0, -0.5])?);
    let x = Tensor::matrix(3, 1, vec![1.0, 2.0, -1.0])?;
    let y = w.matmul(&x)?.transpose()?.log_softmax()?.sum_all()?;
    let gw = backward(&y, &[&w], false)?;
    println!("d/dW sum(log_softmax(Wx)) = {:?}", gw[0].values());
    Ok(())
}
