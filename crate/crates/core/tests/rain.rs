use std::collections::HashMap;
use std::path::Path;

use derain_core::io::image::{decode_image, encode_image, fit_square};
use derain_core::io::DatasetLayout;
use derain_core::rain::{
    build_dataset, composite, render_streaks, synthetic_scene, Manifest, RainField, RainParams, RainRanges, StreakMode,
    SynthOptions,
};
use derain_core::Tensor;
use proptest::prelude::*;

/// Streak direction, in degrees from vertical, from the gradient structure
/// tensor: the eigenvector of least variation points along the streaks.
fn structure_orientation(f: &RainField) -> f64 {
    let (h, w) = (f.height(), f.width());
    let (mut jxx, mut jyy, mut jxy) = (0.0, 0.0, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (f.at(x + 1, y) as f64 - f.at(x - 1, y) as f64) / 2.0;
            let gy = (f.at(x, y + 1) as f64 - f.at(x, y - 1) as f64) / 2.0;
            jxx += gx * gx;
            jyy += gy * gy;
            jxy += gx * gy;
        }
    }
    // Angle of the dominant gradient, then rotate by 90 degrees.
    let grad = 0.5 * (2.0 * jxy).atan2(jxx - jyy);
    let along = grad + std::f64::consts::FRAC_PI_2;
    let (vx, vy) = (along.cos(), along.sin());
    // (vx, vy) is in x-right / y-down coordinates; the angle from vertical is
    // atan2(vx, vy), folded into (-90, 90].
    let mut deg = vx.atan2(vy).to_degrees();
    while deg > 90.0 {
        deg -= 180.0;
    }
    while deg <= -90.0 {
        deg += 180.0;
    }
    deg
}

#[test]
fn orientation_is_recovered() {
    for (angle, seed) in [(20.0, 1), (-30.0, 2), (0.0, 3), (40.0, 4)] {
        let p = RainParams { angle_deg: angle, intensity: 0.8, density: 30.0, seed, ..Default::default() };
        let f = render_streaks(&p, 128, 128).unwrap();
        let est = structure_orientation(&f);
        assert!((est - angle).abs() <= 5.0, "angle {angle}: estimated {est}");
    }
}

#[test]
fn zero_intensity_reproduces_clean() {
    let clean = synthetic_scene(32, 0);
    let p = RainParams { intensity: 0.0, ..Default::default() };
    let x = composite(&clean, &render_streaks(&p, 32, 32).unwrap()).unwrap();
    assert!(x.bit_eq(&clean));
}

#[test]
fn snow_streaks_are_short() {
    let rain = RainParams { mode: StreakMode::Rain, length_px: 25.0, width_px: 2.0, density: 5.0, seed: 3, ..Default::default() };
    let snow = RainParams { mode: StreakMode::Snow, ..rain };
    let (fr, fs) = (render_streaks(&rain, 96, 96).unwrap(), render_streaks(&snow, 96, 96).unwrap());
    let mass = |f: &RainField| f.data().iter().map(|&v| v as f64).sum::<f64>();
    assert!(mass(&fs) < 0.5 * mass(&fr));
    assert_eq!("snow".parse::<StreakMode>().unwrap(), StreakMode::Snow);
}

fn write_sources(dir: &Path, n: usize, side: usize) {
    for i in 0..n {
        // Non-square sources exercise the centre crop.
        let scene = synthetic_scene(side, 100 + i as u64);
        let wide = Tensor::from_fn(&[3, side, side + 6], |k| {
            let (c, r) = (k / (side * (side + 6)), k % (side * (side + 6)));
            let (y, x) = (r / (side + 6), (r % (side + 6)).min(side - 1));
            scene.data()[c * side * side + y * side + x]
        });
        encode_image(&wide, dir.join(format!("src_{i:02}.png"))).unwrap();
    }
}

#[test]
fn round_robin_additivity_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    std::fs::create_dir(&src).unwrap();
    write_sources(&src, 10, 40);
    let opts = SynthOptions { count: 50, seed: 17, size: 32, ..Default::default() };
    let out_a = tmp.path().join("a");
    let m = build_dataset(&src, &out_a, &opts).unwrap();
    assert_eq!(m.rows.len(), 50);

    let fitted: Vec<Tensor> = (0..10)
        .map(|i| fit_square(&decode_image(src.join(format!("src_{i:02}.png"))).unwrap(), 32).unwrap())
        .collect();
    let mut uses: HashMap<usize, usize> = HashMap::new();
    for row in &m.rows {
        let clean = decode_image(out_a.join(&row.clean_file)).unwrap();
        let rainy = decode_image(out_a.join(&row.rainy_file)).unwrap();
        let src_idx = fitted.iter().position(|f| f.bit_eq(&clean)).expect("clean image matches a source");
        *uses.entry(src_idx).or_default() += 1;
        for (r, c) in rainy.data().iter().zip(clean.data()) {
            assert!(r - c >= -1.0 / 255.0 - 1e-6);
        }
    }
    assert_eq!(uses.len(), 10);
    assert!(uses.values().all(|&u| u == 50usize.div_ceil(10) || u == 50 / 10));

    let text = std::fs::read_to_string(DatasetLayout::new(&out_a).manifest_path()).unwrap();
    assert_eq!(Manifest::parse_csv(&text).unwrap(), m);

    let out_b = tmp.path().join("b");
    let m2 = build_dataset(&src, &out_b, &opts).unwrap();
    assert_eq!(m, m2);
    assert_eq!(text, std::fs::read_to_string(out_b.join("manifest.csv")).unwrap());
    for row in &m.rows {
        for f in [&row.clean_file, &row.rainy_file] {
            assert_eq!(std::fs::read(out_a.join(f)).unwrap(), std::fs::read(out_b.join(f)).unwrap());
        }
    }
}

#[test]
fn uneven_round_robin() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    std::fs::create_dir(&src).unwrap();
    write_sources(&src, 3, 20);
    let m = build_dataset(&src, &tmp.path().join("o"), &SynthOptions { count: 7, size: 16, ..Default::default() }).unwrap();
    assert_eq!(m.rows.len(), 7);
    assert_eq!(m.rows.iter().map(|r| r.pair_id).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
}

#[test]
fn parameters_are_diverse() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    std::fs::create_dir(&src).unwrap();
    write_sources(&src, 2, 16);
    let opts = SynthOptions { count: 100, seed: 3, size: 16, ..Default::default() };
    let m = build_dataset(&src, &tmp.path().join("o"), &opts).unwrap();
    let span = |f: fn(&RainParams) -> f64| {
        let v: Vec<f64> = m.rows.iter().map(|r| f(&r.params)).collect();
        v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
    };
    assert!(span(|p| p.angle_deg) >= 60.0);
    assert!(span(|p| p.intensity) >= 0.5);
    let r = RainRanges::default();
    for row in &m.rows {
        let p = row.params;
        assert!((r.intensity.0..=r.intensity.1).contains(&p.intensity));
        assert!((r.angle_deg.0..=r.angle_deg.1).contains(&p.angle_deg));
        assert!((r.density.0..=r.density.1).contains(&p.density));
    }
    let seeds: std::collections::HashSet<u64> = m.rows.iter().map(|r| r.params.seed).collect();
    assert_eq!(seeds.len(), 100);
}

#[test]
fn bad_ranges_and_empty_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = SynthOptions { count: 1, ranges: RainRanges { angle_deg: (-60.0, 10.0), ..Default::default() }, ..Default::default() };
    assert!(build_dataset(tmp.path(), &tmp.path().join("o"), &bad).is_err());
    let empty = SynthOptions { count: 1, ..Default::default() };
    assert!(build_dataset(tmp.path(), &tmp.path().join("o2"), &empty).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn field_is_nonnegative_bounded_and_additive(
        seed in 0u64..u64::MAX,
        intensity in 0.0f64..=1.0,
        angle in -45.0f64..=45.0,
        density in 0.5f64..60.0,
        length in 1.0f64..40.0,
    ) {
        let p = RainParams { intensity, angle_deg: angle, density, length_px: length, seed, ..Default::default() };
        let f = render_streaks(&p, 24, 32).unwrap();
        prop_assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let clean = synthetic_scene(32, seed % 7);
        let clean = Tensor::from_fn(&[3, 24, 32], |i| clean.data()[i]);
        let x = composite(&clean, &f).unwrap();
        let mean = |t: &Tensor| t.data().iter().map(|&v| v as f64).sum::<f64>();
        prop_assert!(mean(&x) >= mean(&clean));
        for (a, b) in x.data().iter().zip(clean.data()) {
            prop_assert!(a >= b);
        }
        prop_assert_eq!(&f, &render_streaks(&p, 24, 32).unwrap());
    }
}
