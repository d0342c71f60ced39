use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Inverted dropout: in train mode each element is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`. Eval mode (and `p = 0`) is the identity.
pub fn dropout_forward<T: Element>(tape: &mut Tape<T>, x: Var, p: f64, mode: Mode, seed: u64) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::of(1.0 / (1.0 - p));
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    tape.mask(x, Tensor::new(&shape, mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_and_eval_are_identity() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_f64(&[4], &[1.0, -2.0, 3.0, 4.0]).unwrap(), true);
        assert_eq!(dropout_forward(&mut tape, x, 0.0, Mode::Train, 1).unwrap(), x);
        assert_eq!(dropout_forward(&mut tape, x, 0.0, Mode::Eval, 1).unwrap(), x);
        assert_eq!(dropout_forward(&mut tape, x, 0.7, Mode::Eval, 1).unwrap(), x);
    }

    #[test]
    fn rejects_probability_one() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[4]), true);
        assert!(dropout_forward(&mut tape, x, 1.0, Mode::Train, 1).is_err());
        assert!(dropout_forward(&mut tape, x, -0.1, Mode::Train, 1).is_err());
    }

    #[test]
    fn bernoulli_statistics_at_half() {
        let mut tape = Tape::<f64>::new();
        let n = 100_000;
        let input: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
        let mean_in = input.iter().sum::<f64>() / n as f64;
        let x = tape.leaf(Tensor::new(&[n], input).unwrap(), true);
        let y = dropout_forward(&mut tape, x, 0.5, Mode::Train, 42).unwrap();
        let out = tape.value(y).data();
        let zeros = out.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        let mean_out = out.iter().sum::<f64>() / n as f64;
        assert!((zeros - 0.5).abs() <= 0.01, "zero fraction {zeros}");
        assert!((mean_out - mean_in).abs() <= 0.02 * mean_in, "{mean_out} vs {mean_in}");
    }

    #[test]
    fn backward_zeroes_exactly_the_masked_positions() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[64]), true);
        let y = dropout_forward(&mut tape, x, 0.3, Mode::Train, 9).unwrap();
        let kept: Vec<bool> = tape.value(y).data().iter().map(|&v| v != 0.0).collect();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        for (g, k) in tape.grad(x).unwrap().data().iter().zip(kept) {
            if k {
                assert!((g - 1.0 / 0.7).abs() < 1e-12);
            } else {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let run = |seed| {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::ones(&[32]), true);
            let y = dropout_forward(&mut tape, x, 0.5, Mode::Train, seed).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
