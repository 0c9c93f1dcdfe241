//! Reverse-mode differentiation on the tape, checked against finite differences.

use rand::Rng;
use scoreformer::numeric::{finite_diff_check_many, NumericError, SeededRng, Tape, Tensor, Var};

fn mlp(t: &mut Tape, v: &[Var]) -> Result<Var, NumericError> {
    let h = t.matmul(v[0], v[1])?;
    let h = t.tanh(h)?;
    let h = t.layer_norm(h, 1e-5)?;
    let out = t.matmul(h, v[2])?;
    let sq = t.powi(out, 2)?;
    t.mean_all(sq)
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

fn main() -> Result<(), NumericError> {
    let mut rng = SeededRng::new(0).generator();
    let xs = [random(5, 3, &mut rng), random(3, 4, &mut rng), random(4, 1, &mut rng)];

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
    let loss = mlp(&mut tape, &vars)?;
    tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).item());
    println!("d loss / d W1 = {:?}", tape.grad(vars[1]).unwrap());

    let check = finite_diff_check_many(mlp, &xs, 1e-5, None)?;
    println!(
        "finite differences: {} coordinates, max relative error {:.2e}",
        check.checked, check.max_rel_error
    );
    Ok(())
}
