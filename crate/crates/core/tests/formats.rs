use ispinv::degradation::{degradation_map, downsample, mosaic, DegradationOptions};
use ispinv::io::{
    decode_planes, encode_rgb, encode_srgb_png, params_from_toml, params_to_toml, read_corpus,
    read_degradation, read_linear, read_raw, read_srgb, write_corpus, write_degradation, write_raw,
    write_rgb, MAGIC,
};
use ispinv::synth::{generate_corpus, item_rng, random_isp_params, StreamPurpose, SynthConfig};
use ispinv::{BayerPattern, IspError, LinearImage, RawImage, SrgbImage};
use proptest::prelude::*;
use rand::Rng;
use std::path::Path;

fn f32_image(h: usize, w: usize, seed: u64) -> LinearImage {
    let mut rng = item_rng(seed, 0, StreamPurpose::Image);
    LinearImage::from_fn(h, w, |_, _| {
        [
            rng.gen::<f32>() as f64,
            rng.gen::<f32>() as f64,
            rng.gen::<f32>() as f64,
        ]
    })
    .unwrap()
}

#[test]
fn container_layout_is_planar_little_endian() {
    let img = LinearImage::new(1, 2, vec![[0.25, 0.5, 0.75], [1.0, 0.0, 0.125]]).unwrap();
    let bytes = encode_rgb(&img);
    assert_eq!(&bytes[..8], MAGIC);
    let header: Vec<u32> = bytes[8..28]
        .chunks(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(header, vec![1, 2, 3, 1, 0]);
    let samples: Vec<f32> = bytes[28..]
        .chunks(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(samples, vec![0.25, 1.0, 0.5, 0.0, 0.75, 0.125]);
}

#[test]
fn corrupted_containers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let good = encode_rgb(&f32_image(3, 3, 1));
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("magic", {
            let mut b = good.clone();
            b[0] = b'X';
            b
        }),
        ("truncated", good[..good.len() - 2].to_vec()),
        ("header", good[..10].to_vec()),
        ("trailing", {
            let mut b = good.clone();
            b.extend_from_slice(&[0; 4]);
            b
        }),
    ];
    for (name, bytes) in cases {
        let path = dir.path().join(format!("{name}.ispimg"));
        std::fs::write(&path, &bytes).unwrap();
        match read_linear(&path) {
            Err(IspError::Format { .. }) => {}
            other => panic!("{name}: expected format error, got {other:?}"),
        }
        assert!(decode_planes(&bytes, Path::new(name)).is_err(), "{name}");
    }
    // an sRGB file is not a linear image
    let srgb = SrgbImage::filled(2, 2, [0.5; 3]).unwrap();
    let path = dir.path().join("srgb.ispimg");
    write_rgb(&path, &srgb).unwrap();
    assert!(read_linear(&path).is_err());
    assert!(read_srgb(&path).is_ok());
}

#[test]
fn png_quantizes_to_eight_bits() {
    let dir = tempfile::tempdir().unwrap();
    let img = SrgbImage::new(1, 3, vec![[0.0, 0.5, 1.0], [0.2, 0.998, 0.001], [1.0; 3]]).unwrap();
    let path = dir.path().join("x.png");
    std::fs::write(&path, encode_srgb_png(&img).unwrap()).unwrap();
    let (back, clamped) = read_srgb(&path).unwrap();
    assert_eq!(clamped, 0);
    for (a, b) in back.values().zip(img.values()) {
        assert_eq!(a, (b * 255.0).round() / 255.0);
    }
}

#[test]
fn params_file_round_trip_and_strictness() {
    let params = random_isp_params(&SynthConfig::default(), &mut item_rng(2, 0, StreamPurpose::Params)).unwrap();
    let text = params_to_toml(&params);
    assert_eq!(params_from_toml(&text, true, Path::new("p")).unwrap(), params);
    let extra = format!("{text}\nexposure = 1.5\n");
    assert!(params_from_toml(&extra, true, Path::new("p")).is_err());
    assert_eq!(params_from_toml(&extra, false, Path::new("p")).unwrap(), params);
    let zero_gain = "wb_gains = [0.0, 1.0, 1.0]\nccm = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]\n";
    assert!(params_from_toml(zero_gain, true, Path::new("p")).is_err());
}

#[test]
fn corpus_on_disk_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        seed: 77,
        height: 8,
        width: 12,
        ..Default::default()
    };
    let items = generate_corpus(&cfg, 3).unwrap();
    let manifest = write_corpus(dir.path(), &cfg, &items).unwrap();
    let (read_manifest, loaded) = read_corpus(dir.path()).unwrap();
    assert_eq!(manifest, read_manifest);
    assert_eq!(read_manifest.config, cfg);
    for (a, b) in items.iter().zip(&loaded) {
        assert_eq!(a.params, b.params);
        assert_eq!(a.l_b, b.l_b);
        assert_eq!(a.s_d, b.s_d);
    }
}

/// Block means and Bayer sampling written out directly.
fn oracle_lr_raw(l: &LinearImage, factor: usize, pattern: BayerPattern) -> Vec<f64> {
    let (h, w) = (l.height() / factor, l.width() / factor);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let c = pattern.channel_at(y, x);
            let mut sum = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    sum += l.get(y * factor + dy, x * factor + dx)[c];
                }
            }
            out.push(sum / (factor * factor) as f64);
        }
    }
    out
}

#[test]
fn degradation_against_block_oracle() {
    for seed in 0..6u64 {
        let l = f32_image(8, 8, seed);
        for pattern in BayerPattern::ALL {
            let raw = mosaic(&downsample(&l, 4).unwrap(), pattern).unwrap();
            let want = oracle_lr_raw(&l, 4, pattern);
            for (a, b) in raw.values().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-15);
            }
            let mut shifted = raw.values().to_vec();
            shifted[0] += 0.125;
            let lr = RawImage::new(2, 2, shifted, pattern).unwrap();
            let opts = DegradationOptions {
                pattern,
                ..Default::default()
            };
            let m = degradation_map(&lr, &l, &opts).unwrap();
            assert_eq!(m.values(), &[0.125, 0.0, 0.0, 0.0]);
        }
    }
}

#[test]
fn degradation_rejects_mismatches() {
    let l = f32_image(8, 8, 9);
    let raw = mosaic(&downsample(&l, 4).unwrap(), BayerPattern::Rggb).unwrap();
    let bggr = DegradationOptions {
        pattern: BayerPattern::Bggr,
        ..Default::default()
    };
    assert!(matches!(degradation_map(&raw, &l, &bggr), Err(IspError::PatternMismatch { .. })));
    let bigger = f32_image(16, 8, 9);
    assert!(matches!(
        degradation_map(&raw, &bigger, &DegradationOptions::default()),
        Err(IspError::ShapeMismatch { .. })
    ));
    assert!(downsample(&f32_image(6, 8, 1), 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn float_container_round_trips(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let img = f32_image(h, w, seed);
        let path = dir.path().join("l.ispimg");
        write_rgb(&path, &img).unwrap();
        let (back, clamped) = read_linear(&path).unwrap();
        prop_assert_eq!(clamped, 0);
        prop_assert_eq!(back, img);
    }

    #[test]
    fn raw_planes_round_trip(h in 1usize..5, w in 1usize..5, seed in any::<u64>(), p in 0usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let pattern = BayerPattern::ALL[p];
        let img = f32_image(2 * h, 2 * w, seed);
        let raw = mosaic(&img, pattern).unwrap();
        let path = dir.path().join("r.ispimg");
        write_raw(&path, &raw).unwrap();
        prop_assert_eq!(read_raw(&path).unwrap(), raw.clone());
        let m = degradation_map(&raw, &img, &DegradationOptions { factor: 1, pattern, ..Default::default() }).unwrap();
        let mpath = dir.path().join("m.ispimg");
        write_degradation(&mpath, &m).unwrap();
        prop_assert_eq!(read_degradation(&mpath).unwrap(), m);
    }
}
