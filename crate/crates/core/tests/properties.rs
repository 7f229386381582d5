use fieldlab::analysis::{dct2_block, hf_intensity, idct2_block};
use fieldlab::models::{decode_checkpoint, encode_checkpoint, init_params, ArchSpec, ParamVector};
use fieldlab::signal::{Image, ImageSource};
use fieldlab::sweep::{aggregate, BatchSize};
use fieldlab::training::{BatchSampler, Optimizer};
use fieldlab::transforms::{apply, invert, make_rpp, make_spiral, make_zigzag, PermutationMap, Transform, TransformSpec};
use proptest::prelude::*;

/// Intensities on the 2^-53 grid, as produced by a standard uniform generator.
fn image(side: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0u64..=(1 << 53), side * side).prop_map(move |k| {
        Image::new(side, side, k.iter().map(|&k| k as f64 / (1u64 << 53) as f64).collect()).unwrap()
    })
}

fn any_image() -> impl Strategy<Value = Image> {
    (1usize..12).prop_flat_map(image)
}

fn naive_dct(block: &[f64]) -> Vec<f64> {
    let a = |k: usize| if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
    let mut out = vec![0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut s = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    s += block[i * 8 + j]
                        * (((2 * i + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos()
                        * (((2 * j + 1) * v) as f64 * std::f64::consts::PI / 16.0).cos();
                }
            }
            out[u * 8 + v] = a(u) * a(v) * s;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutations_round_trip_bit_exactly(img in any_image(), seed in any::<u64>()) {
        let perms = [
            Transform::RandomPermutation(make_rpp(seed, img.len())),
            Transform::SpiralPermutation(make_spiral(&img).unwrap()),
            Transform::ZigzagPermutation(make_zigzag(&img).unwrap()),
        ];
        let mut sorted_in = img.pixels.clone();
        sorted_in.sort_by(f64::total_cmp);
        for t in &perms {
            let y = apply(t, &img).unwrap();
            prop_assert_eq!((y.width, y.height), (img.width, img.height));
            let mut sorted_out = y.pixels.clone();
            sorted_out.sort_by(f64::total_cmp);
            prop_assert_eq!(&sorted_out, &sorted_in);
            prop_assert_eq!(&invert(t, &y).unwrap().pixels, &img.pixels);
        }
    }

    #[test]
    fn intensity_transforms_round_trip(img in any_image(), t in 0.1f64..4.0, gamma in 0.2f64..5.0) {
        let mut ts = vec![
            Transform::Inversion,
            Transform::LinearScale { t },
            Transform::Centering { t },
            Transform::Gamma { gamma },
        ];
        if let Ok(s) = Transform::standardization_for(&img) {
            ts.push(s);
        }
        for tr in &ts {
            let y = apply(tr, &img).unwrap();
            let back = invert(tr, &y).unwrap();
            for (a, b) in back.pixels.iter().zip(&img.pixels) {
                prop_assert!((a - b).abs() <= 1e-12, "{}: {a} vs {b}", tr.name());
            }
        }
        let inv = Transform::Inversion;
        prop_assert_eq!(invert(&inv, &apply(&inv, &img).unwrap()).unwrap().pixels, img.pixels.clone());
    }

    #[test]
    fn inversion_off_the_grid_is_within_an_ulp(x in 0.0f64..=1.0) {
        // 1 - x rounds when x < 1/2 carries bits below 2^-53.
        let y = invert(&Transform::Inversion, &apply(&Transform::Inversion, &Image::new(1, 1, vec![x]).unwrap()).unwrap()).unwrap();
        prop_assert!((y.pixels[0] - x).abs() <= f64::EPSILON / 2.0);
    }

    #[test]
    fn intensity_transforms_keep_positions(img in any_image()) {
        // A pixel's output depends only on that pixel's input.
        let t = Transform::Gamma { gamma: 2.0 };
        let y = apply(&t, &img).unwrap();
        for (i, v) in img.pixels.iter().enumerate() {
            let single = apply(&t, &Image::new(1, 1, vec![*v]).unwrap()).unwrap();
            prop_assert_eq!(single.pixels[0], y.pixels[i]);
        }
    }

    #[test]
    fn rpp_ignores_intensities(a in image(6), b in image(6), seed in any::<u64>()) {
        let pa = TransformSpec::RandomPermutation { seed: None }.build(&a, seed).unwrap();
        let pb = TransformSpec::RandomPermutation { seed: None }.build(&b, seed).unwrap();
        prop_assert_eq!(pa.permutation().unwrap().forward(), pb.permutation().unwrap().forward());
    }

    #[test]
    fn permutation_text_round_trip(n in 1usize..300, seed in any::<u64>()) {
        let p = make_rpp(seed, n);
        let back = PermutationMap::from_text(&p.to_text()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn dct_matches_direct_sum_and_preserves_energy(block in prop::collection::vec(-1.0f64..1.0, 64)) {
        let c = dct2_block(&block).unwrap();
        let oracle = naive_dct(&block);
        for (a, b) in c.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let e_in: f64 = block.iter().map(|x| x * x).sum();
        let e_out: f64 = c.iter().map(|x| x * x).sum();
        prop_assert!((e_in - e_out).abs() < 1e-9);
        let back = idct2_block(&c).unwrap();
        for (a, b) in back.iter().zip(&block) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hf_intensity_is_inversion_symmetric_on_dyadic_images(levels in prop::collection::vec(0u32..=256, 256)) {
        let img = Image::new(16, 16, levels.iter().map(|&k| k as f64 / 256.0).collect()).unwrap();
        let inv = apply(&Transform::Inversion, &img).unwrap();
        prop_assert_eq!(hf_intensity(&img).unwrap(), hf_intensity(&inv).unwrap());
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), width in 1usize..8, hidden in 0usize..3) {
        let arch = ArchSpec::siren(hidden, width);
        let p = init_params(&arch, seed);
        let (arch2, p2) = decode_checkpoint(&encode_checkpoint(&arch, &p)).unwrap();
        prop_assert_eq!(arch2, arch);
        prop_assert_eq!(p2.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_epochs_partition_pixels(n in 1usize..200, batch in 1usize..64, seed in any::<u64>()) {
        let batch = batch.min(n);
        let mut s = BatchSampler::new(seed, n, batch);
        let mut seen = vec![0usize; n];
        let mut drawn = 0;
        while drawn < n {
            let b = s.next_batch().to_vec();
            prop_assert!(!b.is_empty() && b.len() <= batch);
            drawn += b.len();
            for i in b {
                seen[i] += 1;
            }
        }
        prop_assert_eq!(drawn, n);
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn aggregate_counts_and_mean(xs in prop::collection::vec(prop::option::of(0.01f64..10.0), 0..20)) {
        let a = aggregate(&xs);
        let kept: Vec<f64> = xs.iter().flatten().copied().collect();
        prop_assert_eq!(a.count + a.excluded, xs.len());
        prop_assert_eq!(a.count, kept.len());
        if let Some(m) = a.mean {
            let direct = kept.iter().sum::<f64>() / kept.len() as f64;
            prop_assert!((m - direct).abs() < 1e-12);
        } else {
            prop_assert!(kept.is_empty());
        }
    }
}

#[test]
fn text_forms_round_trip() {
    for s in ["siren:hidden=2,width=64,omega0=30", "pe-mlp:m=4,hidden=1,width=8", "hash-mlp"] {
        let a: ArchSpec = s.parse().unwrap();
        assert_eq!(a.to_string().parse::<ArchSpec>().unwrap(), a);
    }
    for s in ["identity", "inversion", "standardization", "linear:0.5", "centering:2", "gamma:2", "rpp", "rpp:seed=9", "zigzag", "spiral"] {
        let t: TransformSpec = s.parse().unwrap();
        assert_eq!(t.to_string().parse::<TransformSpec>().unwrap(), t);
    }
    for s in ["synth:seed=3,size=32,exp=1.5", "images/kodim01.png"] {
        let i: ImageSource = s.parse().unwrap();
        assert_eq!(i.to_string().parse::<ImageSource>().unwrap(), i);
    }
    for s in ["full", "256"] {
        let b: BatchSize = s.parse().unwrap();
        assert_eq!(b.to_string(), s);
    }
    for s in ["sgd", "adam"] {
        let o: Optimizer = s.parse().unwrap();
        assert_eq!(o.to_string().parse::<Optimizer>().unwrap(), o);
    }
}

#[test]
fn param_vector_flatten_round_trip() {
    let arch = ArchSpec::pe_mlp(3, 1, 5);
    let p = init_params(&arch, 4);
    let back = ParamVector::flatten(&arch, &p.unflatten()).unwrap();
    assert_eq!(back.values, p.values);
}
