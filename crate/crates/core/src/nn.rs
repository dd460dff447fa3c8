//! Dense and gated-recurrent layers recorded on an autodiff [`Tape`].

use rand::Rng;

use crate::autodiff::{Mat, ParamId, ParamSet, Tape, Var};

/// Uniform `[-bound, bound]` matrix.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// `y = W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weights and biases uniform in `±1/sqrt(input)`.
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = params.add(format!("{name}.w"), uniform(rng, output, input, bound));
        let b = params.add(format!("{name}.b"), uniform(rng, output, 1, bound));
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let wx = tape.matmul(w, x);
        tape.add(wx, b)
    }
}

/// Single-layer gated recurrent unit.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + U_n (r * h) + b_n)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

impl Gru {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut mk = |gate: &str, rows: usize, cols: usize| {
            params.add(format!("{name}.{gate}"), uniform(rng, rows, cols, bound))
        };
        let w = [
            mk("w_z", hidden, input),
            mk("w_r", hidden, input),
            mk("w_n", hidden, input),
        ];
        let u = [
            mk("u_z", hidden, hidden),
            mk("u_r", hidden, hidden),
            mk("u_n", hidden, hidden),
        ];
        let b = [mk("b_z", hidden, 1), mk("b_r", hidden, 1), mk("b_n", hidden, 1)];
        Gru {
            input,
            hidden,
            w,
            u,
            b,
        }
    }

    fn affine(&self, tape: &mut Tape, gate: usize, x: Var, h: Var) -> Var {
        let w = tape.param(self.w[gate]);
        let u = tape.param(self.u[gate]);
        let b = tape.param(self.b[gate]);
        let wx = tape.matmul(w, x);
        let uh = tape.matmul(u, h);
        let s = tape.add(wx, uh);
        tape.add(s, b)
    }

    /// One recurrence step; returns the new hidden state.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Var {
        let z_pre = self.affine(tape, 0, x, h);
        let z = tape.sigmoid(z_pre);
        let r_pre = self.affine(tape, 1, x, h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let n_pre = self.affine(tape, 2, x, rh);
        let n = tape.tanh(n_pre);
        let keep = tape.mul(z, h);
        let one_minus_z = tape.one_minus(z);
        let fresh = tape.mul(one_minus_z, n);
        tape.add(fresh, keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Grads;
    use rand::SeedableRng;

    #[test]
    fn gru_hidden_stays_bounded_and_gradients_check() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let gru = Gru::init(&mut ps, "g", 3, 4, &mut rng);
        let head = Linear::init(&mut ps, "head", 4, 2, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|t| vec![t as f64 * 0.3, -0.2, 1.5 - t as f64])
            .collect();
        let run = |ps: &ParamSet| {
            let mut tape = Tape::new(ps);
            let mut h = tape.leaf(Mat::zeros(4, 1));
            let mut total = None;
            for x in &inputs {
                let xv = tape.column(x);
                h = gru.step(&mut tape, xv, h);
                assert!(tape.value(h).iter().all(|v| v.abs() < 1.0));
                let y = head.forward(&mut tape, h);
                let l = tape.smooth_l1_sum(y);
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l),
                });
            }
            let mut g = Grads::zeros_like(ps);
            let total = total.unwrap();
            tape.backward(total, 1.0, &mut g);
            (tape.scalar(total), g.to_flat())
        };
        let (_, analytic) = run(&ps);
        for i in (0..ps.num_scalars()).step_by(3) {
            let x0 = ps.scalar(i);
            ps.set_scalar(i, x0 + 1e-6);
            let up = run(&ps).0;
            ps.set_scalar(i, x0 - 1e-6);
            let down = run(&ps).0;
            ps.set_scalar(i, x0);
            let num = (up - down) / 2e-6;
            assert!(
                (num - analytic[i]).abs() <= 1e-6 * num.abs().max(1e-3),
                "{i}: {num} vs {}",
                analytic[i]
            );
        }
    }
}
