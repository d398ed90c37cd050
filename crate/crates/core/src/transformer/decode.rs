use super::model::Model;
use super::network::decoder_forward;
use crate::error::Result;
use crate::tensor::{Real, Tape, Tensor};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy continuation from `bos` until `eos` or `max_steps` tokens.
/// The returned ids exclude `bos` and `eos`.
pub fn greedy_decode<F: Real>(
    model: &Model<F>,
    enc_states: &Tensor<F>,
    bos: usize,
    eos: usize,
    max_steps: usize,
) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let enc = tape.leaf(enc_states)?;
    let mut seq = vec![bos];
    let v = model.config.vocab_size;
    for _ in 0..max_steps {
        let logits = decoder_forward(&mut tape, model, &seq, enc)?;
        let last = &tape.value(logits)[(seq.len() - 1) * v..seq.len() * v];
        let next = argmax(last);
        if next == eos {
            break;
        }
        seq.push(next);
    }
    seq.remove(0);
    Ok(seq)
}
