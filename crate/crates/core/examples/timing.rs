use octpose_core::tensor::{BnMode, BnState, Padding, Tape, Tensor};
use std::time::Instant;

fn t<F: FnMut()>(label: &str, iters: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..iters { f(); }
    println!("{label}: {:.2} ms", t0.elapsed().as_secs_f64() * 1e3 / iters as f64);
}

fn main() {
    // stem conv1 at desk res: 1->8 ch, 3^3, 64x64x16
    let x = Tensor::new(&[1, 1, 64, 64, 16], vec![0.3f32; 64*64*16]).unwrap();
    let w = Tensor::new(&[8, 1, 3, 3, 3], vec![0.01f32; 8*27]).unwrap();
    let b = Tensor::zeros(&[8]);
    t("conv 1->8 3^3 @64x64x16 (forward)", 5, || {
        let mut tape = Tape::<f32>::new();
        let (xi, wi, bi) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let _ = tape.conv3d(xi, wi, bi, 1, Padding::Same).unwrap();
    });

    // stem conv2: 8->20 ch stride 2 @64x64x16
    let x2 = Tensor::new(&[1, 8, 64, 64, 16], vec![0.3f32; 8*64*64*16]).unwrap();
    let w2 = Tensor::new(&[20, 8, 3, 3, 3], vec![0.01f32; 20*8*27]).unwrap();
    let b2 = Tensor::zeros(&[20]);
    t("conv 8->20 3^3 s2 @64x64x16", 5, || {
        let mut tape = Tape::<f32>::new();
        let (xi, wi, bi) = (tape.constant(x2.clone()), tape.constant(w2.clone()), tape.constant(b2.clone()));
        let _ = tape.conv3d(xi, wi, bi, 2, Padding::Same).unwrap();
    });

    // plain gemm at that shape: [20 x 216] * [216 x 8192]
    {
        use ndarray::{Array2, linalg::general_mat_mul};
        let a = Array2::<f32>::from_elem((20, 216), 0.01);
        let bb = Array2::<f32>::from_elem((216, 8192), 0.3);
        let mut c = Array2::<f32>::zeros((20, 8192));
        t("bare gemm 20x216x8192", 10, || {
            general_mat_mul(1.0, &a, &bb, 0.0, &mut c);
        });
        let a = Array2::<f32>::from_elem((8, 27), 0.01);
        let bb = Array2::<f32>::from_elem((27, 65536), 0.3);
        let mut c = Array2::<f32>::zeros((8, 65536));
        t("bare gemm 8x27x65536", 10, || {
            general_mat_mul(1.0, &a, &bb, 0.0, &mut c);
        });
    }

    // batch norm at stem activation size
    let xa = Tensor::new(&[1, 8, 64, 64, 16], vec![0.3f32; 8*64*64*16]).unwrap();
    let g = Tensor::new(&[8], vec![1.0; 8]).unwrap();
    let be = Tensor::zeros(&[8]);
    t("bn @8x64x64x16", 10, || {
        let mut tape = Tape::<f32>::new();
        let (xi, gi, bi) = (tape.constant(xa.clone()), tape.constant(g.clone()), tape.constant(be.clone()));
        let mut st = BnState::new(8, 0.9f32);
        let _ = tape.batch_norm(xi, gi, bi, &mut st, BnMode::Train).unwrap();
    });

    // relu there
    t("relu @8x64x64x16", 10, || {
        let mut tape = Tape::<f32>::new();
        let xi = tape.constant(xa.clone());
        let _ = tape.relu(xi);
    });
}
