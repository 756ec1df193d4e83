// Finite-difference check of a small conv -> relu -> pool -> dense -> cross-entropy graph.

use mtal::autodiff::{Graph, NodeId, Padding};
use mtal::Tensor;

fn loss(g: &mut Graph<f64>, x: &Tensor<f64>, params: &[Tensor<f64>]) -> (NodeId, Vec<NodeId>) {
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let x = g.leaf(x.clone());
    let y = g.conv2d(x, ids[0], ids[1], Padding::Same).unwrap();
    let y = g.relu(y);
    let y = g.max_pool2d(y, 2).unwrap();
    let y = g.flatten(y).unwrap();
    let logits = g.dense(y, ids[2], Some(ids[3])).unwrap();
    (g.softmax_cross_entropy(logits, &[1, 0]).unwrap(), ids)
}

fn value(x: &Tensor<f64>, params: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let (l, _) = loss(&mut g, x, params);
    g.value(l).item()
}

fn main() -> mtal::Result<()> {
    let wave = |scale: f64| move |i: usize| scale * ((i * 7 + 3) as f64 * 0.37).sin();
    let x = Tensor::from_fn(&[2, 1, 4, 4], wave(1.0));
    let params = vec![
        Tensor::from_fn(&[2, 1, 3, 3], wave(0.5)),
        Tensor::from_fn(&[2], wave(0.1)),
        Tensor::from_fn(&[8, 3], wave(0.3)),
        Tensor::zeros(&[3]),
    ];

    let mut g = Graph::new();
    let (l, ids) = loss(&mut g, &x, &params);
    g.backward(l)?;

    let h = 1e-6;
    for (k, (p, &id)) in params.iter().zip(&ids).enumerate() {
        let analytic = g.grad(id).to_f64_vec();
        let mut worst = 0.0f64;
        for (i, &a) in analytic.iter().enumerate().take(p.len()) {
            let mut plus = params.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = params.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (value(&x, &plus) - value(&x, &minus)) / (2.0 * h);
            worst = worst.max((numeric - a).abs() / numeric.abs().max(a.abs()).max(1e-12));
        }
        println!("parameter {k} {:?}: worst relative error {worst:.2e}", p.shape());
    }
    println!("loss {:.6}", g.value(l).item());
    Ok(())
}
