//! Finite-difference checks of the autodiff tape: every primitive, a small
//! two-layer network built by hand, and both learner losses end to end.

use slicenet::rng::{stream, Domain};
use slicenet::selftest;
use slicenet::tensor::gradcheck::max_rel_error;
use slicenet::tensor::Tensor;

fn main() {
    for c in [selftest::primitive_gradients(), selftest::end_to_end_gradients()] {
        println!("{:<36} {} ({})", c.name, if c.passed { "ok" } else { "FAILED" }, c.detail);
    }

    // A 4-8-3 MLP with a softmax cross-entropy loss.
    let mut rng = stream(5, Domain::Toy, 0);
    let x = Tensor::uniform(6, 4, -1.0, 1.0, &mut rng);
    let params = [Tensor::glorot(4, 8, &mut rng), Tensor::uniform(1, 8, 0.05, 0.1, &mut rng), Tensor::glorot(8, 3, &mut rng), Tensor::zeros(1, 3)];
    let labels = [0, 2, 1, 1, 0, 2];
    let err = max_rel_error(&params, 1e-6, 1e-6, |t, p| {
        let xv = t.constant(x.clone());
        let h = t.matmul(xv, p[0]);
        let h = t.add_row(h, p[1]);
        let h = t.relu(h);
        let o = t.matmul(h, p[2]);
        let o = t.add_row(o, p[3]);
        let lp = t.log_softmax(o, 1.0);
        let picked = t.pick(lp, &labels);
        let m = t.mean(picked);
        t.scale(m, -1.0)
    });
    println!("{:<36} {} (rel err {err:.2e})", "hand-built MLP cross-entropy", if err < 1e-4 { "ok" } else { "FAILED" });
}
