//! Hand-evaluated forward pass of a one-filter network on 4x4 inputs.

use satjam_cnn::params::slot;
use satjam_cnn::{Architecture, Mode, Network};

const EPS: f64 = 1e-5;

fn arch() -> Architecture {
    Architecture {
        input: (4, 4, 1),
        conv1: 1,
        conv2: 1,
        fc1: 1,
        classes: 2,
        dropout: 0.5,
    }
}

fn conv3x3(img: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 16];
    for y in 0..4i32 {
        for x in 0..4i32 {
            let mut acc = 0.0;
            for ky in 0..3i32 {
                for kx in 0..3i32 {
                    let (sy, sx) = (y + ky - 1, x + kx - 1);
                    if (0..4).contains(&sy) && (0..4).contains(&sx) {
                        acc += img[(sy * 4 + sx) as usize] * k[(ky * 3 + kx) as usize];
                    }
                }
            }
            out[(y * 4 + x) as usize] = acc;
        }
    }
    out
}

/// Batch-statistics normalization of one channel across both images.
fn batch_norm(maps: &[Vec<f64>], gamma: f64, beta: f64) -> Vec<Vec<f64>> {
    let all: Vec<f64> = maps.iter().flatten().copied().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
    maps.iter()
        .map(|m| m.iter().map(|v| (gamma * (v - mean) / (var + EPS).sqrt() + beta).max(0.0)).collect())
        .collect()
}

#[test]
fn matches_hand_computation() {
    let k1 = [0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.1, -0.3];
    let k2 = [-0.1, 0.2, 0.1, 0.4, -0.2, 0.3, 0.0, 0.1, 0.2];
    let fc1_w: Vec<f64> = (0..16).map(|i| 0.05 * (i as f64 - 7.5)).collect();
    let (fc1_b, fc2_w, fc2_b) = (0.1, [0.7, -0.4], [0.05, -0.05]);
    let (g1, b1, g2, b2) = (1.2, 0.1, 0.9, -0.2);

    let mut net: Network<f64> = Network::new(arch(), 0).unwrap();
    let p = &mut net.params.tensors;
    p[slot::CONV1_W].copy_from_slice(&k1);
    p[slot::CONV2_W].copy_from_slice(&k2);
    p[slot::BN1_GAMMA][0] = g1;
    p[slot::BN1_BETA][0] = b1;
    p[slot::BN2_GAMMA][0] = g2;
    p[slot::BN2_BETA][0] = b2;
    p[slot::FC1_W].copy_from_slice(&fc1_w);
    p[slot::FC1_B][0] = fc1_b;
    p[slot::FC2_W].copy_from_slice(&fc2_w);
    p[slot::FC2_B].copy_from_slice(&fc2_b);

    let images: Vec<Vec<f64>> = vec![
        (0..16).map(|i| i as f64 / 16.0).collect(),
        (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect(),
    ];
    let a1 = batch_norm(&images.iter().map(|im| conv3x3(im, &k1)).collect::<Vec<_>>(), g1, b1);
    let a2 = batch_norm(&a1.iter().map(|m| conv3x3(m, &k2)).collect::<Vec<_>>(), g2, b2);
    let expected: Vec<[f64; 2]> = a2
        .iter()
        .map(|m| {
            let h = (m.iter().zip(&fc1_w).map(|(a, w)| a * w).sum::<f64>() + fc1_b).max(0.0);
            let z = [h * fc2_w[0] + fc2_b[0], h * fc2_w[1] + fc2_b[1]];
            let e = [z[0].exp(), z[1].exp()];
            [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
        })
        .collect();

    let x: Vec<f64> = images.concat();
    let f = net.forward(&x, 2, Mode::Train { dropout_seed: None }).unwrap();
    for (row, want) in f.probs.chunks(2).zip(&expected) {
        assert!((row[0] - want[0]).abs() < 1e-12, "{row:?} vs {want:?}");
        assert!((row[1] - want[1]).abs() < 1e-12);
    }
}
