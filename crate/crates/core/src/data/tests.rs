use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn quiet_source() -> DomainSpec {
    DomainSpec {
        coupling: 1.0,
        noise: 0.0,
        ..DomainSpec::source()
    }
}

fn clip_hash(c: &ClipSample) -> u64 {
    let mut h = DefaultHasher::new();
    for t in [&c.video, &c.audio, &c.gt] {
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[test]
fn generation_is_deterministic() {
    let scene = SceneSpec::default();
    let a = generate_clip(&DomainSpec::source(), &scene, Domain::Source, "x", 3).unwrap();
    let b = generate_clip(&DomainSpec::source(), &scene, Domain::Source, "x", 3).unwrap();
    assert_eq!(a, b);
    let c = generate_clip(&DomainSpec::source(), &scene, Domain::Source, "x", 4).unwrap();
    assert_ne!(a, c);
}

#[test]
fn clip_invariants() {
    let scene = SceneSpec::default();
    for seed in 0..10 {
        let c = generate_clip(&DomainSpec::target(), &scene, Domain::Target, "t", seed).unwrap();
        assert_eq!(c.video.shape(), &[3, 8, 32, 32]);
        assert_eq!(c.audio.shape(), &[1, 1024]);
        assert!((c.gt.sum() as f64 - 1.0).abs() < 1e-5);
        assert!(c.video.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(c.audio.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(c.video.is_finite() && c.audio.is_finite() && c.gt.is_finite());
        assert_eq!(c.fixations.len(), 20);
        assert_eq!(c.fixations.dims(), (32, 32));
        assert_eq!(c.trajectory.len(), 8);
    }
}

#[test]
fn invalid_specs_rejected() {
    let scene = SceneSpec::default();
    for spec in [
        DomainSpec { contrast: 0.0, ..DomainSpec::source() },
        DomainSpec { coupling: 1.5, ..DomainSpec::source() },
        DomainSpec { pitch: (50.0, 10.0), ..DomainSpec::source() },
        DomainSpec { noise: f64::NAN, ..DomainSpec::source() },
    ] {
        assert!(generate_clip(&spec, &scene, Domain::Source, "x", 0).is_err());
    }
    let tiny = SceneSpec { audio_len: 4, ..SceneSpec::default() };
    assert!(generate_clip(&DomainSpec::source(), &tiny, Domain::Source, "x", 0).is_err());
}

/// Least-squares tone frequency of `x`, in cycles per `clip_len` samples,
/// found by a fine scan of the windowed correlation magnitude.
fn estimate_cycles(x: &[f32], clip_len: usize, lo: f64, hi: f64) -> f64 {
    let mut best = (0.0, lo);
    let steps = 4000;
    for s in 0..=steps {
        let f = lo + (hi - lo) * s as f64 / steps as f64;
        let w = 2.0 * PI * f / clip_len as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            re += v as f64 * (w * t as f64).cos();
            im += v as f64 * (w * t as f64).sin();
        }
        let mag = re * re + im * im;
        if mag > best.0 {
            best = (mag, f);
        }
    }
    best.1
}

#[test]
fn audio_frequency_tracks_trajectory() {
    let scene = SceneSpec::default();
    let spec = quiet_source();
    for seed in 0..3 {
        let c = generate_clip(&spec, &scene, Domain::Source, "f", seed).unwrap();
        assert!(c.coupled);
        let seg = scene.audio_len / scene.frames;
        for f in 0..scene.frames {
            let x = &c.audio.data()[f * seg..(f + 1) * seg];
            let expect = pitch_for_column(&spec, c.trajectory[f].1, scene.width);
            let got = estimate_cycles(x, scene.audio_len, 8.0, 120.0);
            assert!((got - expect).abs() < 0.5, "seed {seed} frame {f}: {got} vs {expect}");
        }
    }
}

#[test]
fn zero_coupling_decouples_audio() {
    let spec = DomainSpec { coupling: 0.0, noise: 0.0, ..DomainSpec::source() };
    let scene = SceneSpec::default();
    let c = generate_clip(&spec, &scene, Domain::Source, "d", 1).unwrap();
    assert!(!c.coupled);
    let seg = scene.audio_len / scene.frames;
    let mismatched = (0..scene.frames).any(|f| {
        let expect = pitch_for_column(&spec, c.trajectory[f].1, scene.width);
        (estimate_cycles(&c.audio.data()[f * seg..(f + 1) * seg], scene.audio_len, 8.0, 120.0) - expect).abs() > 2.0
    });
    assert!(mismatched);
}

#[test]
fn datasets_have_distinct_clips() {
    let scene = SceneSpec::default();
    let d = generate_dataset(&DomainSpec::source(), &scene, Domain::Source, 4, 7).unwrap();
    assert_eq!(d.len(), 4);
    let ids: std::collections::BTreeSet<_> = d.clips.iter().map(|c| c.id.clone()).collect();
    assert_eq!(ids.len(), 4);
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(d.clips[i].trajectory, d.clips[j].trajectory);
        }
    }
    let other = generate_dataset(&DomainSpec::source(), &scene, Domain::Source, 4, 8).unwrap();
    let hashes: std::collections::BTreeSet<u64> = d.clips.iter().map(clip_hash).collect();
    assert!(other.clips.iter().all(|c| !hashes.contains(&clip_hash(c))));
    assert!(generate_dataset(&DomainSpec::source(), &scene, Domain::Source, 0, 7).is_err());
    assert_eq!(d, generate_dataset(&DomainSpec::source(), &scene, Domain::Source, 4, 7).unwrap());
}

/// Mean |foreground - background| per clip: pixels within one blob sigma of
/// the trajectory versus pixels farther than three sigmas.
fn contrast_gap(c: &ClipSample, scene: &SceneSpec) -> f64 {
    let (f0, h0, w0) = (scene.frames, scene.height, scene.width);
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
    for ch in 0..3 {
        for f in 0..f0 {
            let (cr, cc) = c.trajectory[f];
            for r in 0..h0 {
                for col in 0..w0 {
                    let d = ((r as f64 - cr).powi(2) + (col as f64 - cc).powi(2)).sqrt();
                    let v = c.video.data()[((ch * f0 + f) * h0 + r) * w0 + col] as f64;
                    if d <= scene.blob_sigma {
                        fg += v;
                        nf += 1;
                    } else if d > 3.0 * scene.blob_sigma {
                        bg += v;
                        nb += 1;
                    }
                }
            }
        }
    }
    (fg / nf as f64 - bg / nb as f64).abs()
}

#[test]
fn contrast_shift_is_measurable() {
    let scene = SceneSpec::default();
    let hi = DomainSpec::source();
    let lo = DomainSpec { contrast: hi.contrast / 2.0, ..hi.clone() };
    let gap = |spec: &DomainSpec| {
        let d = generate_dataset(spec, &scene, Domain::Source, 6, 1).unwrap();
        d.clips.iter().map(|c| contrast_gap(c, &scene)).sum::<f64>() / 6.0
    };
    let (g_hi, g_lo) = (gap(&hi), gap(&lo));
    assert!(g_hi > 1.5 * g_lo, "{g_hi} vs {g_lo}");
}

#[test]
fn fixation_sampler_follows_ground_truth() {
    let traj = vec![(10.0, 12.0), (10.5, 12.5)];
    let gt = ground_truth(&traj, 24, 24, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mut counts = vec![0usize; gt.len()];
    for i in sample_pixels(&gt, n, &mut rng) {
        counts[i] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(gt.data())
        .map(|(&k, &p)| (k as f64 / n as f64 - p as f64).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn tensor_codec_byte_layout() {
    let t = Tensor::new(vec![2, 3], vec![1.0f32, -2.0, 3.5, 0.0, 1e-8, 7.0]).unwrap();
    let b = encode_tensor(&t);
    // 4 magic + version + dtype + rank + 2 dims × 4 + 6 values × 4
    assert_eq!(b.len(), 4 + 1 + 1 + 1 + 8 + 24);
    assert_eq!(&b[..4], b"AVST");
    assert_eq!(&b[4..7], &[1, 1, 2]);
    assert_eq!(&b[7..11], &2u32.to_le_bytes());
    assert_eq!(&b[11..15], &3u32.to_le_bytes());
    assert_eq!(&b[15..19], &1.0f32.to_le_bytes());
    assert_eq!(decode_tensor(&b).unwrap(), t);
}

#[test]
fn tensor_codec_errors() {
    let b = encode_tensor(&Tensor::new(vec![4], vec![1.0f32; 4]).unwrap());
    for cut in [0, 3, 6, 9, b.len() - 1] {
        let err = decode_tensor(&b[..cut]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{cut}: {err}");
    }
    let mut bad = b.clone();
    bad[1] = b'X';
    assert!(decode_tensor(&bad).unwrap_err().to_string().contains("magic"));
    let mut bad = b.clone();
    bad[4] = 2;
    assert!(decode_tensor(&bad).unwrap_err().to_string().contains("version"));
    let mut bad = b.clone();
    bad[5] = 2;
    assert!(decode_tensor(&bad).unwrap_err().to_string().contains("dtype"));
    let mut long = b;
    long.push(0);
    assert!(decode_tensor(&long).is_err());
}

proptest! {
    #[test]
    fn tensor_codec_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rand::Rng::random::<u32>(&mut rng) & 0x7f7f_ffff)).collect();
        let t = Tensor::new(shape, data).unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneSpec { frames: 2, height: 8, width: 8, audio_len: 64, fixations: 6, ..SceneSpec::default() };
    let d = generate_dataset(&DomainSpec::target(), &scene, Domain::Target, 3, 2).unwrap();
    write_dataset(dir.path(), &d).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(manifest.lines().all(|l| l.ends_with("\ttarget")));
    assert_eq!(read_dataset(dir.path()).unwrap(), d);

    std::fs::remove_file(dir.path().join(&d.clips[1].id).join("gt.tns")).unwrap();
    assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("ground truth"));
}

#[test]
fn manifest_rejects_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["", "clip-a source\n", "clip-a\tsideways\n", "../x\tsource\n"] {
        std::fs::write(dir.path().join(MANIFEST_FILE), text).unwrap();
        assert!(read_manifest(dir.path()).is_err(), "{text:?}");
    }
}
