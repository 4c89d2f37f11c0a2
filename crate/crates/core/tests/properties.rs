use pelk::arch::{conv_param_count, preset, ArchForm};
use pelk::check::{gradcheck, GradCheckConfig, GradForm};
use pelk::conv::{dw_backward, dw_forward, dw_forward_rect, stripe_forward};
use pelk::erf::{area_ratio, BlockKernel, ContributionMap, ErfNetwork};
use pelk::grid::{build_custom_grid, build_grid};
use pelk::kernel::{init_trunc_normal, merge_reparam, scatter_grad};
use pelk::{CompactKernel, Tensor};
use proptest::prelude::*;

/// Quadruple-loop correlation with zero padding, independent of the library
/// kernels. Works for rectangular odd kernels.
fn brute_conv(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (kh, kw) = (w.dims()[1], w.dims()[2]);
    let mut y = Tensor::zeros(x.dims()).unwrap();
    for ch in 0..c {
        for oy in 0..h {
            for ox in 0..wd {
                let mut s = 0.0;
                for i in 0..kh {
                    for j in 0..kw {
                        let iy = oy as isize + i as isize - (kh / 2) as isize;
                        let ix = ox as isize + j as isize - (kw / 2) as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            s += w.get(&[ch, i, j]) * x.get(&[ch, iy as usize, ix as usize]);
                        }
                    }
                }
                y.set(&[ch, oy, ox], s);
            }
        }
    }
    y
}

fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    pelk::tensor::rel_error(a, b)
}

fn odd_kernel_with_radius() -> impl Strategy<Value = (usize, usize, usize)> {
    (0usize..=150).prop_flat_map(|half| {
        let k = 2 * half + 1;
        (Just(k), 0..=half, 2usize..=4)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn grid_invariants((k, r_c, m) in odd_kernel_with_radius()) {
        let g = build_grid(k, r_c, m).unwrap();
        let full = g.full();
        prop_assert_eq!(full.iter().sum::<usize>(), k);
        prop_assert_eq!(full.len(), g.k_prime());
        prop_assert!(full.iter().eq(full.iter().rev()));
        prop_assert!(full.iter().all(|&s| s >= 1));
        let c = (g.k_prime() - 1) / 2;
        for j in 0..=r_c.min(c) {
            prop_assert_eq!(full[c - j], 1);
        }
        // peripheral cells inside the outermost one are exact powers
        let per_side = &full[c + 1..];
        if per_side.len() > r_c + 1 {
            for (i, &s) in per_side[r_c..per_side.len() - 1].iter().enumerate() {
                prop_assert_eq!(s, m.pow(i as u32 + 1));
            }
        }
        // regions tile the kernel
        let p = g.partition();
        let mut count = vec![0usize; g.k_prime() * g.k_prime()];
        for x in 0..k {
            for y in 0..k {
                let (a, b) = p.region_of(x, y);
                count[a * g.k_prime() + b] += 1;
            }
        }
        for a in 0..g.k_prime() {
            for b in 0..g.k_prime() {
                prop_assert_eq!(count[a * g.k_prime() + b], full[a] * full[b]);
                prop_assert_eq!(p.region_size(a, b), full[a] * full[b]);
            }
        }
    }

    #[test]
    fn custom_grid_round_trip((k, r_c, m) in odd_kernel_with_radius()) {
        let g = build_grid(k, r_c, m).unwrap();
        prop_assert_eq!(build_custom_grid(g.half()).unwrap(), g);
    }

    #[test]
    fn expand_scatter_adjoint(half in 0usize..=16, r_c in 0usize..=3, seed in any::<u64>()) {
        let k = 2 * half + 1;
        let g = build_grid(k, r_c.min(half), 2).unwrap();
        let kp = g.k_prime();
        let u = Tensor::<f64>::random_normal(&[2, kp, kp], seed).unwrap();
        let v = Tensor::<f64>::random_normal(&[2, k, k], seed ^ 1).unwrap();
        let ck = CompactKernel::new(g.clone(), u.clone()).unwrap();
        let lhs = ck.expand().dot(&v).unwrap();
        let rhs = u.dot(&scatter_grad(&v, &g).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn expand_matches_partition_bounds(half in 0usize..=25, r_c in 0usize..=3, seed in any::<u64>()) {
        let k = 2 * half + 1;
        let g = build_grid(k, r_c.min(half), 2).unwrap();
        let kp = g.k_prime();
        let ck = CompactKernel::new(g.clone(), Tensor::<f32>::random_normal(&[1, kp, kp], seed).unwrap()).unwrap();
        let full = ck.expand();
        let p = g.partition();
        for a in 0..kp {
            for b in 0..kp {
                let ((x0, x1), (y0, y1)) = p.bounds(a, b);
                for x in x0..x1 {
                    for y in y0..y1 {
                        prop_assert_eq!(full.get(&[0, x, y]), ck.weights().get(&[0, a, b]));
                    }
                }
            }
        }
    }

    #[test]
    fn dense_matches_brute_force(k_half in 0usize..=6, side in 1usize..=14, seed in any::<u64>()) {
        let k = 2 * k_half + 1;
        let x = Tensor::<f64>::random_normal(&[2, side, side], seed).unwrap();
        let w = Tensor::<f64>::random_normal(&[2, k, k], seed ^ 7).unwrap();
        prop_assert!(max_rel(&dw_forward(&x, &w).unwrap(), &brute_conv(&x, &w)) <= 1e-12);
    }

    #[test]
    fn stripe_matches_brute_force(long_half in 1usize..=5, seed in any::<u64>()) {
        let (long, short) = (2 * long_half + 1, 3);
        let x = Tensor::<f64>::random_normal(&[2, 12, 10], seed).unwrap();
        let wv = Tensor::<f64>::random_normal(&[2, long, short], seed ^ 1).unwrap();
        let wh = Tensor::<f64>::random_normal(&[2, short, long], seed ^ 2).unwrap();
        let oracle = brute_conv(&x, &wv).add(&brute_conv(&x, &wh)).unwrap();
        prop_assert!(max_rel(&stripe_forward(&x, &wv, &wh).unwrap(), &oracle) <= 1e-12);
        prop_assert!(max_rel(&dw_forward_rect(&x, &wv).unwrap(), &brute_conv(&x, &wv)) <= 1e-12);
    }

    #[test]
    fn conv_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let x1 = Tensor::<f64>::random_normal(&[2, 11, 11], seed).unwrap();
        let x2 = Tensor::<f64>::random_normal(&[2, 11, 11], seed ^ 1).unwrap();
        let w = Tensor::<f64>::random_normal(&[2, 7, 7], seed ^ 2).unwrap();
        let lhs = dw_forward(&x1.scale(a).add(&x2.scale(b)).unwrap(), &w).unwrap();
        let rhs = dw_forward(&x1, &w).unwrap().scale(a).add(&dw_forward(&x2, &w).unwrap().scale(b)).unwrap();
        prop_assert!(max_rel(&lhs, &rhs) <= 1e-6);
    }

    #[test]
    fn backward_is_adjoint(k_half in 0usize..=6, seed in any::<u64>()) {
        // ⟨dy, conv(x, w)⟩ is bilinear, so it equals both ⟨dx, x⟩ and ⟨dw, w⟩.
        let k = 2 * k_half + 1;
        let x = Tensor::<f64>::random_normal(&[2, 13, 9], seed).unwrap();
        let w = Tensor::<f64>::random_normal(&[2, k, k], seed ^ 1).unwrap();
        let dy = Tensor::<f64>::random_normal(&[2, 13, 9], seed ^ 2).unwrap();
        let (dx, dw) = dw_backward(&x, &w, &dy).unwrap();
        let out = dy.dot(&dw_forward(&x, &w).unwrap()).unwrap();
        let scale = out.abs().max(1.0);
        prop_assert!((out - dx.dot(&x).unwrap()).abs() <= 1e-10 * scale);
        prop_assert!((out - dw.dot(&w).unwrap()).abs() <= 1e-10 * scale);
    }

    #[test]
    fn merge_reparam_is_linear(a in -2.0f64..2.0, seed in any::<u64>()) {
        let l1 = Tensor::<f64>::random_normal(&[1, 7, 7], seed).unwrap();
        let l2 = Tensor::<f64>::random_normal(&[1, 7, 7], seed ^ 1).unwrap();
        let s1 = Tensor::<f64>::random_normal(&[1, 3, 3], seed ^ 2).unwrap();
        let s2 = Tensor::<f64>::random_normal(&[1, 3, 3], seed ^ 3).unwrap();
        let lhs = merge_reparam(&l1.scale(a).add(&l2).unwrap(), &s1.scale(a).add(&s2).unwrap()).unwrap();
        let rhs = merge_reparam(&l1, &s1).unwrap().scale(a).add(&merge_reparam(&l2, &s2).unwrap()).unwrap();
        prop_assert!(max_rel(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn area_ratio_monotone_and_scale_invariant(seed in any::<u64>(), exp in -4i32..=4) {
        let raw = Tensor::<f32>::random_normal(&[33, 33], seed).unwrap();
        let map = ContributionMap::new(raw.map(f32::abs)).unwrap();
        let scaled = ContributionMap::new(raw.map(|v| v.abs() * 2f32.powi(exp))).unwrap();
        let mut prev = 0.0;
        for t in [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let r = area_ratio(&map, t).unwrap();
            prop_assert!(r.r >= prev);
            prev = r.r;
            prop_assert_eq!(area_ratio(&scaled, t).unwrap(), r);
        }
    }
}

#[test]
fn compact_size_grows_logarithmically() {
    for k in (7..=151).step_by(2) {
        let kp = build_grid(k, 2, 2).unwrap().k_prime();
        let bound = 2 * (k as f64).log2().ceil() as usize + 7;
        assert!(kp <= bound, "k={k} k'={kp} bound={bound}");
    }
}

#[test]
fn full_central_radius_gives_identity() {
    for k in (1..=61).step_by(2) {
        let g = build_grid(k, (k - 1) / 2, 2).unwrap();
        assert!(g.full().iter().all(|&s| s == 1));
        assert_eq!(g.k_prime(), k);
    }
}

#[test]
fn trunc_normal_moments() {
    let t = init_trunc_normal(&[1_000_000], 0.0, 0.02, -0.04, 0.04, 11).unwrap();
    let n = t.len() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-3, "mean {mean}");
    // standard deviation of a normal truncated at ±2σ is σ·0.8796
    let expected = 0.02 * 0.8796;
    assert!((var.sqrt() - expected).abs() < 0.1 * expected, "std {}", var.sqrt());
    assert!(t.data().iter().all(|v| (-0.04..=0.04).contains(v)));
    let again = init_trunc_normal(&[1000], 0.0, 0.02, -0.04, 0.04, 11).unwrap();
    assert_eq!(&t.data()[..1000], again.data());
}

#[test]
fn translation_equivariance_in_interior() {
    let (side, k) = (24, 5);
    let x = Tensor::<f64>::random_normal(&[1, side, side], 4).unwrap();
    let w = Tensor::<f64>::random_normal(&[1, k, k], 5).unwrap();
    let shifted = Tensor::from_fn(&[1, side, side], |i| {
        let (r, c) = (i / side, i % side);
        if r == 0 || c == 0 {
            0.0
        } else {
            x.get(&[0, r - 1, c - 1])
        }
    })
    .unwrap();
    let (y, ys) = (dw_forward(&x, &w).unwrap(), dw_forward(&shifted, &w).unwrap());
    let margin = k / 2 + 1;
    for r in margin..side - margin {
        for c in margin..side - margin {
            assert_eq!(ys.get(&[0, r + 1, c + 1]).to_bits(), y.get(&[0, r, c]).to_bits());
        }
    }
}

#[test]
fn finite_differences_across_kernel_sizes() {
    for k in [3, 7, 13, 31] {
        let forms = [
            GradForm::Dense { k },
            GradForm::Stripe {
                long: k,
                short: 3.min(k),
            },
            GradForm::Peripheral { k, r_c: 2.min(k / 2) },
        ];
        for form in forms {
            let report = gradcheck(&GradCheckConfig::new(form, 12, k as u64)).unwrap();
            assert!(report.samples.len() >= 100);
            assert!(report.passes(1e-4), "{form:?}: max rel err {}", report.max_rel_err());
        }
    }
}

#[test]
fn conv_params_monotone_and_peripheral_below_dense() {
    let base = preset("convnext-t").unwrap();
    for form in [ArchForm::Dense, ArchForm::STRIPE, ArchForm::Peripheral] {
        let mut prev = 0;
        for k in (5..=151).step_by(2) {
            let cfg = pelk::arch::ArchConfig {
                form,
                ..base.with_uniform_kernel(k)
            };
            let p = conv_param_count(&cfg).unwrap().conv_params();
            assert!(p >= prev, "{form} K={k}");
            prev = p;
        }
    }
    for k in (9..=151).step_by(2) {
        let count = |form| {
            let cfg = pelk::arch::ArchConfig {
                form,
                ..base.with_uniform_kernel(k)
            };
            conv_param_count(&cfg).unwrap().conv_params()
        };
        assert!(count(ArchForm::Peripheral) < count(ArchForm::Dense), "K={k}");
    }
}

#[test]
fn peripheral_support_contains_dense_support() {
    let grid = build_grid(51, 2, 2).unwrap();
    let kp = grid.k_prime();
    let ck = CompactKernel::new(grid, Tensor::random_normal(&[1, kp, kp], 1).unwrap()).unwrap();
    let peripheral = ErfNetwork::stack(vec![BlockKernel::Peripheral(ck)]).unwrap();
    let dense = ErfNetwork::stack(vec![BlockKernel::Dense(Tensor::random_normal(&[1, 7, 7], 1).unwrap())]).unwrap();
    let side = 64;
    let p = peripheral.contribution_map(side, 1, 0).unwrap().support();
    let d = dense.contribution_map(side, 1, 0).unwrap().support();
    assert_eq!(d.len(), 49);
    assert!(d.iter().all(|q| p.contains(q)));
    assert!(p.len() > d.len());
}
