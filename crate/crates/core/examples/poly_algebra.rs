//! Polynomial arithmetic, differentiation, substitution and interval
//! enclosures on a small two-variable example.

use shsbarrier::poly::{var_names, Polynomial};

fn main() -> shsbarrier::Result<()> {
    let vars = var_names(&["x", "y"]);
    let x = Polynomial::var(&vars, 0);
    let y = Polynomial::var(&vars, 1);
    // b = x^2 + 3xy - y^3 + 1
    let b = &(&(&x.pow(2) + &(&x * &y).scale(3.0)) - &y.pow(3)) + &Polynomial::constant(&vars, 1.0);
    println!("b        = {b}");
    println!("db/dx    = {}", b.partial(0));
    println!("db/dy    = {}", b.partial(1));
    println!("b(1, 2)  = {}", b.eval(&[1.0, 2.0])?);

    // x -> y + 1, y -> 2x
    let subs = [&y + &Polynomial::constant(&vars, 1.0), x.scale(2.0)];
    let c = b.compose(&subs)?;
    println!("b(y+1, 2x) = {c}");
    println!("check at (1, 2): {} vs {}", c.eval(&[1.0, 2.0])?, b.eval(&[3.0, 2.0])?);

    let (lo, hi) = b.eval_interval(&[-1.0, -1.0], &[1.0, 1.0]);
    println!("enclosure of b on [-1,1]^2: [{lo}, {hi}]");
    let mut sampled = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=100 {
        for j in 0..=100 {
            let v = b.eval_unchecked(&[-1.0 + 0.02 * i as f64, -1.0 + 0.02 * j as f64]);
            sampled = (sampled.0.min(v), sampled.1.max(v));
        }
    }
    println!("sampled range:               [{}, {}]", sampled.0, sampled.1);
    println!("serialized: {}", serde_json::to_string(&b)?);
    Ok(())
}
