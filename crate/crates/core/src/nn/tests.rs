use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{fd_check, rand_array};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gradient error of `sum(w * decoder(z))` over every parameter and `z`.
fn decoder_fd(dec: &Decoder<f64>, rows: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut inputs = dec.params().tensors.clone();
    for t in inputs.iter_mut() {
        if t.data().iter().all(|v| *v == 0.0) {
            *t = rand_array(t.shape(), &mut r).map(|v| 0.1 * v);
        }
    }
    inputs.push(rand_array(&[rows, dec.embedding_dim], &mut r));
    let w = rand_array(&[rows, dec.output.size()], &mut r);
    let n = inputs.len() - 1;
    fd_check(
        &inputs,
        |tape, vars| {
            let out = dec.forward(&vars[..n], vars[n]).unwrap();
            out.mul(tape.constant(w.clone())).unwrap().sum_all()
        },
        1e-6,
    )
}

#[test]
fn mlp_decoder_gradients_match_finite_differences() {
    let cfg = DecoderConfig::Mlp {
        hidden: vec![5, 4],
        negative_slope: 0.1,
    };
    let dec = Decoder::<f64>::new(cfg, 3, OutputShape::Flat { size: 6 }, &mut rng(1)).unwrap();
    assert!(decoder_fd(&dec, 4, 2) < 1e-5);
}

#[test]
fn deconv_decoder_gradients_match_finite_differences() {
    let cfg = DecoderConfig::Deconv { channels: 4 };
    let out = OutputShape::Image { height: 8, width: 8 };
    let dec = Decoder::<f64>::new(cfg, 2, out, &mut rng(3)).unwrap();
    assert!(decoder_fd(&dec, 2, 4) < 1e-5);
}

#[test]
fn deconv_decoder_reaches_requested_resolution() {
    for (h, w, layers) in [
        (4, 4, 0),
        (8, 8, 1),
        (16, 16, 2),
        (16, 8, 1),
        (2, 2, 0),
        (12, 8, 1),
        (6, 6, 0),
        (1, 5, 0),
    ] {
        let cfg = DecoderConfig::Deconv { channels: 8 };
        let dec = Decoder::<f64>::new(cfg, 3, OutputShape::Image { height: h, width: w }, &mut rng(5)).unwrap();
        let out = dec.decode_values(&[0.3; 6]).unwrap();
        assert_eq!(out.len(), 2 * h * w);
        assert!(out.iter().all(|v| *v > 0.0 && *v < 1.0));
        let expected_tensors = 2 + 2 * layers + if layers == 0 { 2 } else { 0 };
        assert_eq!(dec.params().tensors.len(), expected_tensors);
    }
    let flat = Decoder::<f64>::new(
        DecoderConfig::Deconv { channels: 8 },
        3,
        OutputShape::Flat { size: 4 },
        &mut rng(5),
    );
    assert!(matches!(flat, Err(Error::Config(_))));
}

#[test]
fn deconv_halves_channels_per_layer() {
    let dec = Decoder::<f64>::new(
        DecoderConfig::Deconv { channels: 16 },
        2,
        OutputShape::Image { height: 32, width: 32 },
        &mut rng(0),
    )
    .unwrap();
    let shapes: Vec<Vec<usize>> = dec.params().tensors.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(shapes[0], vec![2, 16 * 16]);
    assert_eq!(shapes[2], vec![16, 8, 4, 4]);
    assert_eq!(shapes[4], vec![8, 4, 4, 4]);
    assert_eq!(shapes[6], vec![4, 1, 4, 4]);
}

#[test]
fn decoder_rejects_non_finite_and_misshaped_embeddings() {
    let dec = Decoder::<f64>::new(
        DecoderConfig::Mlp {
            hidden: vec![4],
            negative_slope: 0.1,
        },
        2,
        OutputShape::Flat { size: 3 },
        &mut rng(0),
    )
    .unwrap();
    assert!(matches!(dec.decode_values(&[0.0, f64::NAN]), Err(Error::NonFinite(_))));
    let tape = Tape::new();
    let p = dec.params().bind(&tape);
    let z = tape.constant(Array::zeros(&[2, 3]));
    assert!(dec.forward(&p, z).is_err());
}

#[test]
fn kaiming_weights_are_bounded_with_matching_variance() {
    let m = Mlp::<f64>::new(vec![200, 300], 0.1, &mut rng(7));
    let w = m.params.tensors[0].data();
    let bound = (2.0 / 1.01f64).sqrt() * (3.0f64 / 200.0).sqrt();
    assert!(w.iter().all(|v| v.abs() <= bound));
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    let expected = bound * bound / 3.0;
    assert!((var - expected).abs() / expected < 0.02, "{var} vs {expected}");
    assert!(m.params.tensors[1].data().iter().all(|v| *v == 0.0));
}

#[test]
fn kld_matches_monte_carlo_estimate() {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(11);
    for (mu, ls) in [(0.0, 0.0), (1.3, -0.4), (-0.7, 0.5)] {
        let tape = Tape::new();
        let k = gaussian_kld(tape.scalar(mu), tape.scalar(ls)).unwrap().item();
        let s = f64::exp(ls);
        let q = Normal::new(mu, s).unwrap();
        let n = 1_000_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = q.sample(&mut r);
                let log_q = -0.5 * ((z - mu) / s).powi(2) - ls;
                let log_p = -0.5 * z * z;
                log_q - log_p
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!(
            (k - mean).abs() < 1e-2 && (k - mean).abs() <= 5.0 * se,
            "{k} vs {mean} ± {se}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kld_is_non_negative_and_zero_only_at_prior(mu in -5.0f64..5.0, ls in -4.0f64..2.0) {
        let tape = Tape::new();
        let k = gaussian_kld(tape.scalar(mu), tape.scalar(ls)).unwrap().item();
        prop_assert!(k >= -1e-12);
        if mu.abs() > 1e-3 || ls.abs() > 1e-3 {
            prop_assert!(k > 0.0);
        }
    }
}

#[test]
fn kld_gradients_match_finite_differences() {
    let mut r = rng(13);
    let inputs = vec![
        rand_array(&[3, 2], &mut r),
        rand_array(&[3, 2], &mut r).map(|v| 0.5 * v),
    ];
    let err = fd_check(&inputs, |_, v| gaussian_kld(v[0], v[1]).unwrap().sum_all(), 1e-6);
    assert!(err < 1e-6);
}

fn small_vae(seed: u64) -> Vae<f64> {
    Vae::new(
        &EncoderConfig {
            hidden: vec![6],
            negative_slope: 0.1,
        },
        DecoderConfig::Mlp {
            hidden: vec![5],
            negative_slope: 0.1,
        },
        2,
        OutputShape::Flat { size: 4 },
        &mut rng(seed),
    )
    .unwrap()
}

#[test]
fn vae_objective_gradients_match_finite_differences() {
    let vae = small_vae(17);
    let mut r = rng(18);
    let x = Array::from_f64(&[3, 4], &[1., 0., 1., 1., 0., 0., 1., 0., 1., 1., 0., 0.]).unwrap();
    let mut inputs = vae.encoder.params.tensors.clone();
    let ne = inputs.len();
    inputs.extend(vae.decoder.params().tensors.iter().cloned());
    for t in inputs.iter_mut() {
        *t = rand_array(t.shape(), &mut r).map(|v| 0.3 * v);
    }
    let err = fd_check(
        &inputs,
        |tape, vars| {
            let p = VaeVars {
                encoder: vars[..ne].to_vec(),
                decoder: vars[ne..].to_vec(),
            };
            let out = vae.forward(&p, tape.constant(x.clone()), &mut rng(99)).unwrap();
            let rec = out
                .reconstruction
                .sub(tape.constant(x.clone()))
                .unwrap()
                .square()
                .mean(None)
                .unwrap();
            let kld = gaussian_kld(out.mean, out.log_std).unwrap().sum_all();
            rec.add(kld).unwrap()
        },
        1e-6,
    );
    assert!(err < 1e-5, "{err}");
}

#[test]
fn zero_initialized_vae_is_the_prior_with_grey_output() {
    let mut vae = small_vae(19);
    vae.zero_init();
    let tape = Tape::new();
    let p = vae.bind(&tape);
    let x = tape.constant(Array::ones(&[2, 4]));
    let (mean, log_std) = vae.encode(&p, x).unwrap();
    assert!(mean.value().data().iter().all(|v| *v == 0.0));
    assert!(log_std.value().data().iter().all(|v| *v == 0.0));
    let out = vae.decode_values(&[1.0, -2.0]).unwrap();
    assert!(out.iter().all(|v| *v == 0.5));
}

#[test]
fn vae_value_encoding_uses_mean_or_posterior_sample() {
    let vae = small_vae(21);
    let x = [1.0, 0.0, 1.0, 0.0];
    let a = vae.encode_values(&x, None).unwrap();
    let b = vae.encode_values(&x, None).unwrap();
    assert_eq!(a, b);
    let mut r = rng(0);
    let s = vae.encode_values(&x, Some(&mut r)).unwrap();
    assert_eq!(s.len(), 2);
    assert_ne!(s, a);
}

#[test]
fn f32_and_f64_decoders_agree() {
    let cfg = DecoderConfig::Deconv { channels: 4 };
    let out = OutputShape::Image { height: 8, width: 8 };
    let d64 = Decoder::<f64>::new(cfg.clone(), 2, out, &mut rng(23)).unwrap();
    let d32 = Decoder::<f32>::new(cfg, 2, out, &mut rng(23)).unwrap();
    let a = d64.decode_values(&[0.4, -1.2]).unwrap();
    let b = d32.decode_values(&[0.4, -1.2]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - *y as f64).abs() < 1e-5);
    }
}

#[test]
fn configs_round_trip_through_json() {
    let cfgs = [
        DecoderConfig::Mlp {
            hidden: vec![3, 4],
            negative_slope: 0.2,
        },
        DecoderConfig::Deconv { channels: 32 },
    ];
    for c in cfgs {
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<DecoderConfig>(&s).unwrap(), c);
    }
    let d: DecoderConfig = serde_json::from_str(r#"{"kind":"mlp","hidden":[8]}"#).unwrap();
    assert_eq!(
        d,
        DecoderConfig::Mlp {
            hidden: vec![8],
            negative_slope: 0.1
        }
    );
}
