use proptest::prelude::*;
use satjam_cnn::conv::{accumulate_weight_grad, forward, PackedKernel};

fn naive(x: &[f64], h: usize, w: usize, cin: usize, wt: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for xx in 0..w {
            for ky in 0..3 {
                for kx in 0..3 {
                    let (sy, sx) = (y + ky, xx + kx);
                    if sy == 0 || sx == 0 || sy > h || sx > w {
                        continue;
                    }
                    let (sy, sx) = (sy - 1, sx - 1);
                    for c in 0..cin {
                        let v = x[(sy * w + sx) * cin + c];
                        for o in 0..cout {
                            out[(y * w + xx) * cout + o] += v * wt[((ky * 3 + kx) * cin + c) * cout + o];
                        }
                    }
                }
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
struct Case {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    x: Vec<f64>,
    wt: Vec<f64>,
    g: Vec<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..7, 1usize..21, 1usize..6, 1usize..20).prop_flat_map(|(h, w, cin, cout)| {
        (
            prop::collection::vec(-1.0f64..1.0, h * w * cin),
            prop::collection::vec(-1.0f64..1.0, 9 * cin * cout),
            prop::collection::vec(-1.0f64..1.0, h * w * cout),
        )
            .prop_map(move |(x, wt, g)| Case { h, w, cin, cout, x, wt, g })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_equals_direct_summation(c in case()) {
        let mut out = vec![0.0; c.h * c.w * c.cout];
        forward(&c.x, c.h, c.w, &PackedKernel::new(&c.wt, c.cin, c.cout), &mut out);
        let want = naive(&c.x, c.h, c.w, c.cin, &c.wt, c.cout);
        for (a, b) in out.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_kernel_is_the_adjoint(c in case()) {
        let mut y = vec![0.0; c.h * c.w * c.cout];
        forward(&c.x, c.h, c.w, &PackedKernel::new(&c.wt, c.cin, c.cout), &mut y);
        let mut back = vec![0.0; c.x.len()];
        forward(&c.g, c.h, c.w, &PackedKernel::transposed(&c.wt, c.cin, c.cout), &mut back);
        prop_assert!((dot(&y, &c.g) - dot(&c.x, &back)).abs() < 1e-9);
    }

    #[test]
    fn weight_gradient_is_linear_in_the_kernel(c in case()) {
        // <conv(x, W), g> = <dW(x, g), W> because the output is linear in W.
        let mut y = vec![0.0; c.h * c.w * c.cout];
        forward(&c.x, c.h, c.w, &PackedKernel::new(&c.wt, c.cin, c.cout), &mut y);
        let mut dw = vec![0.0; c.wt.len()];
        accumulate_weight_grad(&c.x, &c.g, c.h, c.w, c.cin, c.cout, &mut dw);
        prop_assert!((dot(&y, &c.g) - dot(&dw, &c.wt)).abs() < 1e-9);
    }
}
