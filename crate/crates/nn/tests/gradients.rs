//! Central finite-difference checks for every differentiable op.

use exo2ego_nn::layers::{Conv2d, ConvTranspose2d, GroupNorm, Linear};
use exo2ego_nn::{Graph, Init, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// loss = Σ probe ⊙ f(x); returns (loss, analytic d/dparams, analytic d/dx)
fn eval<F>(store: &ParamStore, x: &Tensor, probe_seed: u64, f: &F) -> (f64, Vec<Vec<f64>>, Tensor)
where
    F: Fn(&mut Graph, Var) -> Var,
{
    let mut g = Graph::new(store);
    let xv = g.input_with_grad(x.clone());
    let y = f(&mut g, xv);
    let mut prng = ChaCha8Rng::seed_from_u64(probe_seed);
    let probe = rand_tensor(&mut prng, g.value(y).shape());
    let loss: f64 = g.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
    let grads = g.backward(&[(y, &probe)]);
    let pg = store
        .ids()
        .map(|id| {
            grads
                .param(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; store.get(id).numel()])
        })
        .collect();
    (loss, pg, grads.var(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn check<F>(mut store: ParamStore, x: Tensor, f: F)
where
    F: Fn(&mut Graph, Var) -> Var,
{
    let (_, pg, xg) = eval(&store, &x, 99, &f);
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for j in 0..store.get(id).numel() {
            let orig = store.get(id).value[j];
            store.get_mut(id).value[j] = orig + H;
            let lp = eval(&store, &x, 99, &f).0;
            store.get_mut(id).value[j] = orig - H;
            let lm = eval(&store, &x, 99, &f).0;
            store.get_mut(id).value[j] = orig;
            let num = (lp - lm) / (2.0 * H);
            let e = rel_err(pg[pi][j], num);
            assert!(e < 1e-5, "param {} [{j}]: analytic {} vs numeric {num}", store.get(id).name, pg[pi][j]);
            worst = worst.max(e);
        }
    }
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[j] += H;
        let mut xm = x.clone();
        xm.data_mut()[j] -= H;
        let num = (eval(&store, &xp, 99, &f).0 - eval(&store, &xm, 99, &f).0) / (2.0 * H);
        let e = rel_err(xg.data()[j], num);
        assert!(e < 1e-5, "input [{j}]: analytic {} vs numeric {num}", xg.data()[j]);
    }
}

#[test]
fn conv2d_strided_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let conv = Conv2d::new(&mut s, "c", 2, 3, 3, 2, 1, true, &Init::Normal { std: 0.5 }, &mut rng);
    let x = rand_tensor(&mut rng, [2, 2, 5, 6]);
    check(s, x, |g, x| conv.forward(g, x));
}

#[test]
fn conv_transpose2d_upsamples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = ParamStore::new();
    let ct = ConvTranspose2d::new(&mut s, "t", 3, 2, 4, 2, 1, true, &Init::Normal { std: 0.5 }, &mut rng);
    let x = rand_tensor(&mut rng, [2, 3, 3, 2]);
    let store = s.clone();
    {
        let mut g = Graph::new(&store);
        let v = g.input(x.clone());
        let y = ct.forward(&mut g, v);
        assert_eq!(g.value(y).shape(), [2, 2, 6, 4]);
    }
    check(s, x, |g, x| ct.forward(g, x));
}

#[test]
fn group_norm_and_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let gn = GroupNorm::new(&mut s, "gn", 4, 2, &mut rng);
    for id in s.ids().collect::<Vec<_>>() {
        for v in &mut s.get_mut(id).value {
            *v = rng.random_range(0.5..1.5);
        }
    }
    let x = rand_tensor(&mut rng, [2, 4, 3, 3]);
    check(s, x, |g, x| {
        let y = gn.forward(g, x);
        let a = g.leaky_relu(y, 0.2);
        let b = g.tanh(a);
        g.sigmoid(b)
    });
}

#[test]
fn concat_pool_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new();
    let conv = Conv2d::new(&mut s, "c", 2, 2, 3, 1, 1, false, &Init::Normal { std: 0.5 }, &mut rng);
    let fc = Linear::new(&mut s, "fc", 4, 3, &Init::Normal { std: 0.5 }, &mut rng);
    let x = rand_tensor(&mut rng, [3, 2, 4, 4]);
    check(s, x, |g, x| {
        let y = conv.forward(g, x);
        let y = g.relu(y);
        let c = g.concat(x, y);
        let p = g.global_avg_pool(c);
        fc.forward(g, p)
    });
}

#[test]
fn reused_parameters_accumulate() {
    // the same conv applied twice (as a discriminator is on real and fake)
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    let conv = Conv2d::new(&mut s, "c", 2, 2, 3, 1, 1, true, &Init::Normal { std: 0.5 }, &mut rng);
    let x = rand_tensor(&mut rng, [1, 2, 4, 4]);
    check(s, x, |g, x| {
        let a = conv.forward(g, x);
        let a = g.tanh(a);
        conv.forward(g, a)
    });
}
