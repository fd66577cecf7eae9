use harakat_core::autograd::Graph;
use harakat_core::nn::*;
use harakat_core::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn as_f64(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).iter().map(|&v| v as f64).collect()).collect()
}

fn affine(x: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let w = as_f64(w);
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| b.data()[j] as f64 + row.iter().zip(&w).map(|(a, wr)| a * wr[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn perturb_biases(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        if p.name.ends_with(".b") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
}

/// Direct per-head loops: scaled scores, masked softmax, weighted values.
fn brute_attention(
    store: &ParamStore,
    m: &MultiHeadAttention,
    q_in: &Tensor,
    kv_in: &Tensor,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    let lin = |l: &Linear, x: &Tensor| affine(&as_f64(x), &store.get(l.w).value, &store.get(l.b).value);
    let (q, k, v) = (lin(&m.q, q_in), lin(&m.k, kv_in), lin(&m.v, kv_in));
    let d = q[0].len();
    let dh = d / m.n_heads;
    let mut cat = vec![vec![0.0; d]; q.len()];
    for h in 0..m.n_heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.len() {
            let scores: Vec<Option<f64>> = (0..k.len())
                .map(|j| {
                    allowed(i, j).then(|| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                })
                .collect();
            let max = scores.iter().flatten().copied().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                if let Some(s) = s {
                    let p = (s - max).exp() / z;
                    for c in cols.clone() {
                        cat[i][c] += p * v[j][c];
                    }
                }
            }
        }
    }
    affine(&cat, &store.get(m.o.w).value, &store.get(m.o.b).value)
}

fn assert_close(a: &Tensor, b: &[Vec<f64>], tol: f64) {
    for (r, row) in b.iter().enumerate() {
        for (c, &want) in row.iter().enumerate() {
            let got = a.at(r, c) as f64;
            assert!((got - want).abs() < tol, "[{r},{c}] {got} vs {want}");
        }
    }
}

#[test]
fn linear_hand_case() {
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 2, 3, &mut Init::new(0, 1.0));
    store.get_mut(lin.w).value = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
    store.get_mut(lin.b).value = Tensor::new(&[3], vec![0.5, 0.0, -1.0]).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, -2.0]]).unwrap());
    let y = lin.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 2.5, 2.0, 4.5, 3.0, 5.0]);
}

#[test]
fn attention_matches_brute_force() {
    for (heads, seed) in [(1, 10), (2, 11), (4, 12)] {
        let mut store = ParamStore::new();
        let m = MultiHeadAttention::new(&mut store, "a", 8, heads, &mut Init::new(seed, 0.5)).unwrap();
        perturb_biases(&mut store, seed);
        let q_in = random(&[2, 8], seed + 100);
        let kv_in = random(&[3, 8], seed + 200);
        let mut g = Graph::new();
        let (q, kv) = (g.input(q_in.clone()), g.input(kv_in.clone()));
        let out = m.forward(&mut g, &store, q, kv, None).unwrap();
        assert_eq!(g.value(out).shape(), &[2, 8]);
        assert_close(g.value(out), &brute_attention(&store, &m, &q_in, &kv_in, &|_, _| true), 1e-5);

        let valid = [true, false, true];
        let mask = AttentionMask::key_padding(2, &valid).unwrap();
        let mut g = Graph::new();
        let (q, kv) = (g.input(q_in.clone()), g.input(kv_in.clone()));
        let out = m.forward(&mut g, &store, q, kv, Some(&mask)).unwrap();
        assert_close(g.value(out), &brute_attention(&store, &m, &q_in, &kv_in, &|_, j| valid[j]), 1e-5);
    }
}

#[test]
fn single_key_passes_its_value_through() {
    let mut store = ParamStore::new();
    let m = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut Init::new(3, 0.5)).unwrap();
    perturb_biases(&mut store, 3);
    let kv_in = random(&[1, 4], 4);
    let mut g = Graph::new();
    let q = g.input(random(&[5, 4], 5));
    let kv = g.input(kv_in.clone());
    let (out, weights) = m.forward_with_weights(&mut g, &store, q, kv, None).unwrap();
    for w in &weights {
        assert!(g.value(*w).data().iter().all(|&p| p == 1.0));
    }
    let v = affine(&as_f64(&kv_in), &store.get(m.v.w).value, &store.get(m.v.b).value);
    let expect = affine(&v, &store.get(m.o.w).value, &store.get(m.o.b).value);
    for r in 0..5 {
        assert_close(&Tensor::from_rows(&[g.value(out).row(r).to_vec()]).unwrap(), &expect, 1e-5);
    }
}

#[test]
fn identical_keys_share_weight_equally() {
    let mut store = ParamStore::new();
    let m = MultiHeadAttention::new(&mut store, "a", 4, 1, &mut Init::new(6, 0.5)).unwrap();
    let row = random(&[1, 4], 7).row(0).to_vec();
    let mut g = Graph::new();
    let q = g.input(random(&[3, 4], 8));
    let kv = g.input(Tensor::from_rows(&[row.clone(), row]).unwrap());
    let (_, weights) = m.forward_with_weights(&mut g, &store, q, kv, None).unwrap();
    assert!(g.value(weights[0]).data().iter().all(|&p| (p - 0.5).abs() < 1e-7));
}

#[test]
fn softmax_rows_sum_to_one_and_masked_entries_vanish() {
    let scores = random(&[4, 6], 9);
    let allowed: Vec<bool> = (0..24).map(|i| i % 6 != 2 && i % 5 != 0).collect();
    let mask = AttentionMask::new(4, 6, allowed.clone()).unwrap();
    let mut g = Graph::new();
    let x = g.input(scores);
    let p = g.softmax(x, Some(&mask)).unwrap();
    let p = g.value(p);
    for r in 0..4 {
        let s: f64 = p.row(r).iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
        for c in 0..6 {
            if !allowed[r * 6 + c] {
                assert!(p.at(r, c).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn sinusoid_small_table() {
    let pe = sinusoidal_positions(2, 4).unwrap();
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
    for (got, want) in pe.row(1).iter().zip(want) {
        assert!((*got as f64 - want).abs() < 1e-6);
    }
    assert!(sinusoidal_positions(3, 5).is_err());
}

#[test]
fn sinusoid_formula_at_scale() {
    let (len, d) = (50, 32);
    let pe = sinusoidal_positions(len, d).unwrap();
    for p in 0..len {
        for i in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            assert!((pe.at(p, 2 * i) as f64 - angle.sin()).abs() < 1e-6);
            assert!((pe.at(p, 2 * i + 1) as f64 - angle.cos()).abs() < 1e-6);
        }
    }
}

#[test]
fn layer_norm_output_is_standardized() {
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 16);
    let mut g = Graph::new();
    let x = g.input(random(&[3, 16], 13));
    let y = ln.forward(&mut g, &store, x).unwrap();
    for r in 0..3 {
        let row: Vec<f64> = g.value(y).row(r).iter().map(|&v| v as f64).collect();
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn eval_forward_is_bitwise_deterministic_and_dropout_is_seeded() {
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "b", 8, 2, &mut Init::new(14, 0.3)).unwrap();
    let x = random(&[5, 8], 15);
    let run = |mut g: Graph| -> Vec<Real> {
        let xi = g.input(x.clone());
        let y = block.forward(&mut g, &store, xi, None).unwrap();
        g.value(y).data().to_vec()
    };
    assert_eq!(run(Graph::new()), run(Graph::new()));
    assert_eq!(run(Graph::training(0.5, 1)), run(Graph::training(0.5, 1)));
    assert_ne!(run(Graph::training(0.5, 1)), run(Graph::new()));
    assert_eq!(run(Graph::training(0.0, 1)), run(Graph::new()));
}

#[test]
fn embedding_rejects_out_of_range_ids() {
    let mut store = ParamStore::new();
    let e = Embedding::new(&mut store, "e", 5, 4, &mut Init::new(0, 1.0));
    let mut g = Graph::new();
    assert!(e.forward(&mut g, &store, &[0, 4]).is_ok());
    assert!(e.forward(&mut g, &store, &[5]).is_err());
}
