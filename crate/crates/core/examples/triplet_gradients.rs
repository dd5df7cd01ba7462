//! Checks the co-training triplet loss against hand-computed cases and its
//! gradient against central finite differences in 64-bit precision.
//!
//! ```text
//! cargo run --example triplet_gradients
//! ```

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainco::dataio::batch::random_derangement;
use stainco::objective::{scalar, triplet_cotrain_loss, DEFAULT_MARGIN};

fn loss_at(f_h: &[f64], f_e: &[f64], neg: &[usize], shape: (usize, usize), margin: f64) -> stainco::Result<f64> {
    let dev = Device::Cpu;
    let h = Tensor::from_slice(f_h, shape, &dev)?;
    let e = Tensor::from_slice(f_e, shape, &dev)?;
    scalar(&triplet_cotrain_loss(&h, &e, neg, margin)?)
}

fn main() -> stainco::Result<()> {
    let dev = Device::Cpu;

    // Identical views and a far negative: the hinge is inactive.
    let f = Tensor::new(&[[0.0f64, 0.0], [100.0, 0.0]], &dev)?;
    println!("aligned, far negative: {}", scalar(&triplet_cotrain_loss(&f, &f, &[1, 0], DEFAULT_MARGIN)?)?);
    // Everything collapsed onto one point: the loss equals the margin.
    let z = Tensor::zeros((2, 2), DType::F64, &dev)?;
    println!("collapsed features:    {}", scalar(&triplet_cotrain_loss(&z, &z, &[1, 0], DEFAULT_MARGIN)?)?);

    let (n, d, eps) = (8, 16, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f_h: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f_e: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let neg = random_derangement(n, &mut rng)?;
        let margin = 8.0;

        let h = Var::from_tensor(&Tensor::from_slice(&f_h, (n, d), &dev)?)?;
        let e = Var::from_tensor(&Tensor::from_slice(&f_e, (n, d), &dev)?)?;
        let grads = triplet_cotrain_loss(h.as_tensor(), e.as_tensor(), &neg, margin)?.backward()?;
        let g_h: Vec<f64> = grads.get(h.as_tensor()).expect("grad").flatten_all()?.to_vec1()?;

        for i in 0..n * d {
            let (mut up, mut down) = (f_h.clone(), f_h.clone());
            up[i] += eps;
            down[i] -= eps;
            let fd = (loss_at(&up, &f_e, &neg, (n, d), margin)? - loss_at(&down, &f_e, &neg, (n, d), margin)?) / (2.0 * eps);
            worst = worst.max((fd - g_h[i]).abs() / fd.abs().max(g_h[i].abs()).max(1e-8));
        }
    }
    println!("worst relative gradient error over 20 batches: {worst:.2e}");
    Ok(())
}
