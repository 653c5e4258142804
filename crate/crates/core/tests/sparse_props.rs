use placerec_core::sparse::{build_kernel_map, ConvLayer};
use placerec_core::{rng, ArchConfig, LocNet, SparseTensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_tensor(seed: u64, n: usize, grid: i32, channels: usize, stride: i32) -> SparseTensor {
    let mut r = rng::stream(seed, &[]);
    let mut coords = Vec::new();
    while coords.len() < n {
        let c = [r.random_range(0..grid) * stride, r.random_range(0..grid) * stride, r.random_range(0..grid) * stride];
        if !coords.contains(&c) {
            coords.push(c);
        }
    }
    let feats = (0..n * channels).map(|_| r.random_range(-1.0..1.0)).collect();
    SparseTensor::new(vec![0; n], coords, feats, channels, [stride; 3]).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn transposed_forward_is_adjoint_of_strided_conv() {
    for seed in 0..20 {
        let fine = random_tensor(seed, 12, 6, 2, 1);
        let mut r = rng::stream(seed, &[1]);
        let mut down = ConvLayer::init(2, 3, 3, 2, &mut r);
        down.bias.iter_mut().for_each(|b| *b = 0.0);
        let (coarse, cache) = down.forward(&fine).unwrap();
        let up = down.transposed_weights();
        // <down(x), y> == <x, up(y)> for linear maps without bias
        let y: Vec<f64> = (0..coarse.feats.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut y_t = coarse.clone();
        y_t.feats = y.clone();
        let (upped, _) = up.transposed_forward(&y_t, &fine).unwrap();
        assert_eq!(upped.coords, fine.coords);
        let lhs = dot(&coarse.feats, &y);
        let rhs = dot(&fine.feats, &upped.feats);
        assert!((lhs - rhs).abs() < 1e-9, "seed {seed}: {lhs} vs {rhs}");
        // and backward of the strided conv gives the same input gradient
        let mut g = down.zero_grads();
        let gx = down.backward(&fine.feats, &cache, &y, &mut g);
        for (a, b) in gx.iter().zip(&upped.feats) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let t = random_tensor(3, 8, 4, 2, 1);
    let layer = ConvLayer::init(2, 2, 3, 1, &mut rng::stream(3, &[1]));
    let (out, cache) = layer.forward(&t).unwrap();
    let mut g = layer.zero_grads();
    let gx = layer.backward(&t.feats, &cache, &vec![0.0; out.feats.len()], &mut g);
    assert!(gx.iter().chain(&g.weights).chain(&g.bias).all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_output_invariant_to_site_order(seed in 0u64..1000, n in 1usize..30, stride in 1i32..3) {
        let t = random_tensor(seed, n, 6, 2, 1);
        let layer = ConvLayer::init(2, 3, 3, stride, &mut rng::stream(seed, &[1]));
        let (a, _) = layer.forward(&t).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[2]));
        let coords = order.iter().map(|&i| t.coords[i]).collect();
        let feats = order.iter().flat_map(|&i| t.feature(i).to_vec()).collect();
        let p = SparseTensor::new(vec![0; n], coords, feats, 2, [1; 3]).unwrap();
        let (b, _) = layer.forward(&p).unwrap();
        for (i, c) in a.coords.iter().enumerate() {
            let j = b.coords.iter().position(|d| d == c).unwrap();
            for k in 0..3 {
                prop_assert!((a.feature(i)[k] - b.feature(j)[k]).abs() < 1e-6);
            }
        }
        prop_assert_eq!(a.len(), b.len());
    }

    #[test]
    fn kernel_map_is_deterministic(seed in 0u64..1000, n in 1usize..30) {
        let t = random_tensor(seed, n, 5, 1, 1);
        let a = build_kernel_map(&t.batch, &t.coords, &t.batch, &t.coords, 3, [1; 3]).unwrap();
        let b = build_kernel_map(&t.batch, &t.coords, &t.batch, &t.coords, 3, [1; 3]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn network_is_permutation_invariant(seed in 0u64..200, n in 8usize..40) {
        let arch = ArchConfig { block_channels: [4, 4, 6, 6], fpn_width: 8, descriptor_dim: 8, ..ArchConfig::default() };
        let net = LocNet::init(&arch, &mut rng::stream(seed, &[3])).unwrap();
        let t = random_tensor(seed, n, 8, 1, 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[4]));
        let p = SparseTensor::new(
            vec![0; n],
            order.iter().map(|&i| t.coords[i]).collect(),
            order.iter().map(|&i| t.feats[i]).collect(),
            1,
            [1; 3],
        )
        .unwrap();
        let a = net.descriptors(&t).unwrap();
        let b = net.descriptors(&p).unwrap();
        prop_assert_eq!(a[0].0.len(), 8);
        for (x, y) in a[0].0.iter().zip(&b[0].0) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        prop_assert_eq!(net.descriptors(&t).unwrap(), a);
    }
}
