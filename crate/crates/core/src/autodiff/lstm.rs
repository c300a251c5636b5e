use rand::Rng;

use super::{ParamId, ParamStore, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Parameters of one LSTM cell: a fused `[4h, m + h]` weight and `[4h]` bias.
///
/// Gate blocks are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn init<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert_uniform(&format!("{prefix}.weight"), 4 * hidden, input + hidden, rng)?;
        let bias = store.insert_zeros(&format!("{prefix}.bias"), vec![4 * hidden])?;
        Ok(Self {
            weight,
            bias,
            input,
            hidden,
        })
    }

    pub fn from_store<F: Scalar>(store: &ParamStore<F>, prefix: &str) -> Result<Self> {
        let weight = store.id(&format!("{prefix}.weight"))?;
        let bias = store.id(&format!("{prefix}.bias"))?;
        let shape = store.value(weight).shape();
        if shape.len() != 2 || shape[0] % 4 != 0 || shape[1] < shape[0] / 4 {
            return Err(Error::shape("lstm", format!("{prefix}.weight {shape:?}")));
        }
        let hidden = shape[0] / 4;
        Ok(Self {
            weight,
            bias,
            input: shape[1] - hidden,
            hidden,
        })
    }
}

/// One LSTM step; returns the new `(h, c)`.
pub fn lstm_step<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    cell: &LstmCell,
    h_prev: Var,
    c_prev: Var,
    x: Var,
) -> Result<(Var, Var)> {
    let hs = cell.hidden;
    if tape.shape(x) != [cell.input] || tape.shape(h_prev) != [hs] || tape.shape(c_prev) != [hs] {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "x {:?}, h {:?}, c {:?} for input {} / hidden {}",
                tape.shape(x),
                tape.shape(h_prev),
                tape.shape(c_prev),
                cell.input,
                hs
            ),
        ));
    }
    let w = tape.param(store, cell.weight);
    let b = tape.param(store, cell.bias);
    let xh = tape.concat(&[x, h_prev])?;
    let z = tape.affine(w, Some(b), xh)?;
    let i_pre = tape.slice(z, 0, hs)?;
    let f_pre = tape.slice(z, hs, hs)?;
    let g_pre = tape.slice(z, 2 * hs, hs)?;
    let o_pre = tape.slice(z, 3 * hs, hs)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_cell_outputs_zero() {
        let mut store = ParamStore::<f64>::new(0);
        let cell = LstmCell {
            weight: store.insert_zeros("w", vec![12, 5]).unwrap(),
            bias: store.insert_zeros("b", vec![12]).unwrap(),
            input: 2,
            hidden: 3,
        };
        let mut tape = Tape::new();
        let h0 = tape.zeros(3);
        let c0 = tape.zeros(3);
        let x = tape.constant_vec(vec![0.7, -1.3]).unwrap();
        let (h, c) = lstm_step(&mut tape, &store, &cell, h0, c0, x).unwrap();
        assert_eq!(tape.value(h), &[0.0; 3]);
        assert_eq!(tape.value(c), &[0.0; 3]);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new(1);
        let cell = LstmCell::init(&mut store, "cell", 2, 3, &mut rng).unwrap();
        let run = |store: &ParamStore<f32>| {
            let mut tape = Tape::new();
            let h0 = tape.constant_vec(vec![0.1, 0.2, 0.3]).unwrap();
            let c0 = tape.constant_vec(vec![-0.1, 0.0, 0.5]).unwrap();
            let x = tape.constant(&Tensor::vector(vec![1.0, -2.0]).unwrap()).unwrap();
            let (h, c) = lstm_step(&mut tape, store, &cell, h0, c0, x).unwrap();
            (tape.value(h).to_vec(), tape.value(c).to_vec())
        };
        let a = run(&store);
        let b = run(&store);
        assert_eq!(
            a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.1, b.1);

        let mut tape = Tape::new();
        let h0 = tape.zeros(3);
        let c0 = tape.zeros(3);
        let bad = tape.zeros(4);
        assert!(matches!(
            lstm_step(&mut tape, &store, &cell, h0, c0, bad),
            Err(Error::Shape { .. })
        ));
    }
}
