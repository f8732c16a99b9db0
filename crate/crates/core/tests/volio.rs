use std::path::PathBuf;

use canvolve::volio::{
    augment, load_dataset, normalize_zscore, read_labels, read_nifti1, read_vol3d, read_volume,
    synth_phantom, write_labels, write_phantom_set, write_volume, AugmentOps, AugmentParams,
    LabelMap, NiftiDatatype, Transform, VolFile, Volume, MANIFEST_FILE,
};
use canvolve::Error;
use proptest::prelude::*;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

// ---------------------------------------------------------------------------
// NIfTI-1

#[test]
fn nifti_float32_voxel_order_and_spacing() {
    let img = read_nifti1(golden("float32_2x2x2.nii")).unwrap();
    assert_eq!(img.header.datatype, NiftiDatatype::Float32);
    assert!(!img.header.big_endian);
    let v = &img.volume;
    assert_eq!(v.dims(), [2, 2, 2]);
    // pixdim (i, j, k) = (1.5, 2.0, 2.5) → spacing (D, H, W) = (2.5, 2.0, 1.5).
    assert_eq!(v.spacing(), [2.5, 2.0, 1.5]);
    for z in 0..2 {
        for y in 0..2 {
            for x in 0..2 {
                let i = x + 2 * y + 4 * z;
                assert_eq!(v.get(z, y, x), -2.0 + 1.25 * i as f32);
            }
        }
    }
}

#[test]
fn nifti_int16_big_endian_scaled() {
    let img = read_nifti1(golden("int16_scaled_be.nii")).unwrap();
    assert!(img.header.big_endian);
    assert_eq!(img.header.datatype, NiftiDatatype::Int16);
    assert_eq!((img.header.scl_slope, img.header.scl_inter), (2.0, 1.0));
    let v = &img.volume;
    assert_eq!(v.dims(), [1, 2, 3]);
    assert_eq!(v.spacing(), [3.0, 0.8, 0.8]);
    assert_eq!(v.data(), &[-5.0, -1.0, 1.0, 5.0, 11.0, 201.0]);
}

#[test]
fn nifti_uint8_respects_vox_offset() {
    let img = read_nifti1(golden("uint8_labels_offset.nii")).unwrap();
    assert_eq!(img.header.vox_offset, 400);
    let labels = img.volume.to_labels(Some(3)).unwrap();
    assert_eq!(labels.dims(), [2, 3, 4]);
    let expected: Vec<u8> = (0..24).map(|i| (i % 3) as u8).collect();
    assert_eq!(labels.data(), expected.as_slice());
}

fn mutated(name: &str, f: impl FnOnce(&mut Vec<u8>)) -> (tempfile::TempDir, PathBuf) {
    let mut bytes = std::fs::read(golden(name)).unwrap();
    f(&mut bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.nii");
    std::fs::write(&path, bytes).unwrap();
    (dir, path)
}

#[test]
fn nifti_errors_are_distinct() {
    let (_d, p) = mutated("float32_2x2x2.nii", |b| b[344..348].copy_from_slice(b"ni1\0"));
    assert!(matches!(read_nifti1(&p).unwrap_err().root(), Error::UnsupportedVariant(_)));

    let (_d, p) = mutated("float32_2x2x2.nii", |b| b[344..348].copy_from_slice(b"abcd"));
    assert!(matches!(read_nifti1(&p).unwrap_err().root(), Error::BadMagic { .. }));

    let (_d, p) = mutated("float32_2x2x2.nii", |b| {
        b.splice(0..0, [0x1f, 0x8b, 0x08, 0x00]);
    });
    assert!(matches!(read_nifti1(&p).unwrap_err().root(), Error::Compressed));

    // float64 (code 64) is outside the supported subset.
    let (_d, p) = mutated("float32_2x2x2.nii", |b| b[70..72].copy_from_slice(&64i16.to_le_bytes()));
    assert!(matches!(read_nifti1(&p).unwrap_err().root(), Error::UnsupportedDtype(64)));

    let (_d, p) = mutated("float32_2x2x2.nii", |b| b.truncate(b.len() - 1));
    assert!(matches!(read_nifti1(&p).unwrap_err().root(), Error::Truncated { .. }));

    let (_d, p) = mutated("float32_2x2x2.nii", |b| b.truncate(200));
    assert!(matches!(read_nifti1(&p).unwrap_err().root(), Error::Truncated { .. }));

    // Four dimensions with a non-singleton fourth axis.
    let (_d, p) = mutated("float32_2x2x2.nii", |b| {
        b[40..42].copy_from_slice(&4i16.to_le_bytes());
        b[48..50].copy_from_slice(&2i16.to_le_bytes());
    });
    assert!(matches!(read_nifti1(&p).unwrap_err().root(), Error::UnsupportedVariant(_)));

    let err = read_nifti1(golden("missing.nii")).unwrap_err();
    assert!(matches!(err.root(), Error::Io(_)));
    assert_eq!(err.exit_code(), 2);
}

// ---------------------------------------------------------------------------
// VOL3D

#[test]
fn vol3d_spacing_survives_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::new([2, 3, 4], [1.6, 1.6, 1.6], (0..24).map(|i| i as f32 * 0.1).collect()).unwrap();
    write_volume(&v, dir.path().join("a.vol3d")).unwrap();
    let back = read_volume(dir.path().join("a.vol3d")).unwrap();
    assert_eq!(back.spacing(), [1.6f32; 3]);
    assert_eq!(back, v);
}

#[test]
fn vol3d_truncation_and_kind_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.vol3d");
    let l = LabelMap::new([2, 2, 2], [1.0; 3], vec![0, 1, 2, 1, 0, 1, 2, 2], 3).unwrap();
    write_labels(&l, &path).unwrap();
    assert!(matches!(read_vol3d(&path).unwrap(), VolFile::Labels(_)));
    assert!(matches!(read_volume(&path).unwrap_err().root(), Error::Malformed(_)));

    // Header claims more voxels than the file holds.
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&5u32.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_labels(&path).unwrap_err().root(), Error::Truncated { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vol3d_round_trip_is_lossless(
        dims in (1usize..6, 1usize..6, 1usize..6),
        spacing in prop::array::uniform3(0.01f32..10.0),
        seed in any::<u64>(),
    ) {
        let dims = [dims.0, dims.1, dims.2];
        let n: usize = dims.iter().product();
        let mut state = seed;
        let data: Vec<f32> = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits(((state >> 40) as u32) | 0x3f80_0000) - 1.5
            })
            .collect();
        let labels: Vec<u8> = data.iter().map(|v| (v.to_bits() % 7) as u8).collect();
        let v = Volume::new(dims, spacing, data).unwrap();
        let l = LabelMap::new(dims, spacing, labels, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_volume(&v, dir.path().join("v")).unwrap();
        write_labels(&l, dir.path().join("l")).unwrap();
        let v2 = read_volume(dir.path().join("v")).unwrap();
        let l2 = read_labels(dir.path().join("l")).unwrap().with_classes(7).unwrap();
        prop_assert!(v2.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(v2, v);
        prop_assert_eq!(l2, l);
    }

    #[test]
    fn zscore_is_affine_invariant(a in 0.01f64..50.0, b in -100.0f64..100.0, seed in 0u64..1000) {
        let (v, _) = synth_phantom(seed, [16, 16, 16], [1.0; 3], 3).unwrap();
        let scaled = Volume::new(
            v.dims(),
            v.spacing(),
            v.data().iter().map(|&x| (a * x as f64 + b) as f32).collect(),
        )
        .unwrap();
        let z1 = normalize_zscore(&v).unwrap();
        let z2 = normalize_zscore(&scaled).unwrap();
        let worst = z1.data().iter().zip(z2.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        prop_assert!(worst < 1e-4, "max difference {}", worst);
    }
}

#[test]
fn zscore_idempotent_and_constant_error() {
    let (v, _) = synth_phantom(1, [16, 16, 16], [1.0; 3], 3).unwrap();
    let z = normalize_zscore(&v).unwrap();
    let zz = normalize_zscore(&z).unwrap();
    let worst = z.data().iter().zip(zz.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-6, "{worst}");
    let flat = Volume::new([2, 2, 2], [1.0; 3], vec![3.0; 8]).unwrap();
    assert!(matches!(normalize_zscore(&flat), Err(Error::ZeroVariance)));
}

// ---------------------------------------------------------------------------
// Phantoms

#[test]
fn phantom_properties() {
    let (v1, l1) = synth_phantom(42, [32, 32, 32], [1.0; 3], 3).unwrap();
    let (v2, l2) = synth_phantom(42, [32, 32, 32], [1.0; 3], 3).unwrap();
    assert_eq!(v1, v2);
    assert_eq!(l1, l2);
    assert_eq!(l1.dims(), v1.dims());
    assert!(l1.data().iter().all(|&c| c < 3));
    let counts = l1.class_counts();
    assert!((counts[2] as f64) < 0.01 * l1.len() as f64);
    assert!(counts[1] > 10 * counts[2]);

    let (_, l6) = synth_phantom(7, [32, 32, 32], [1.0; 3], 6).unwrap();
    assert!(l6.class_counts().iter().all(|&c| c > 0));

    let err = synth_phantom(0, [32, 15, 32], [1.0; 3], 3).unwrap_err();
    assert!(err.to_string().contains("too small"), "{err}");
}

// ---------------------------------------------------------------------------
// Augmentation

fn ramp(n: usize) -> Volume {
    Volume::new([n, n, n], [1.0; 3], (0..n * n * n).map(|i| i as f32 + 1.0).collect()).unwrap()
}

#[test]
fn shift_round_trip_restores_interior() {
    let v = ramp(8);
    let there = Transform::shift([2.0, 2.0, 2.0]).apply_volume(&v);
    let back = Transform::shift([-2.0, -2.0, -2.0]).apply_volume(&there);
    for z in 0..8 {
        for y in 0..8 {
            for x in 0..8 {
                let interior = [z, y, x].iter().all(|&i| i < 6);
                let expected = if interior { v.get(z, y, x) } else { 0.0 };
                assert_eq!(back.get(z, y, x), expected, "({z},{y},{x})");
            }
        }
    }
}

#[test]
fn quarter_turn_matches_index_permutation() {
    let n = 6;
    let v = ramp(n);
    let r = Transform::rotation(0, 90.0).unwrap().apply_volume(&v);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                assert_eq!(r.get(z, y, x), v.get(z, n - 1 - x, y));
            }
        }
    }
}

fn dice(a: &LabelMap, b: &LabelMap, class: u8) -> f64 {
    let (mut inter, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        sa += (p == class) as usize;
        sb += (q == class) as usize;
        inter += (p == class && q == class) as usize;
    }
    2.0 * inter as f64 / (sa + sb) as f64
}

#[test]
fn augmentation_keeps_labels_aligned() {
    let (v, l) = synth_phantom(5, [16, 16, 16], [1.0; 3], 3).unwrap();
    for t in [
        Transform::shift([3.0, -2.0, 1.0]),
        Transform::rotation(1, 90.0).unwrap(),
        Transform::rotation(2, -90.0).unwrap(),
    ] {
        let moved = t.apply_labels(&l);
        // Analytic reference: move each label voxel by the same inverse map.
        let n = 16usize;
        let c = (n as f64 - 1.0) / 2.0;
        let mut expected = vec![0u8; l.len()];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let rel = [z as f64 - c, y as f64 - c, x as f64 - c];
                    let q: Vec<f64> = (0..3)
                        .map(|a| (0..3).map(|k| t.matrix[a][k] * rel[k]).sum::<f64>() + c - t.shift[a])
                        .collect();
                    if q.iter().all(|&s| s >= 0.0 && s < n as f64) {
                        expected[(z * n + y) * n + x] =
                            l.get(q[0] as usize, q[1] as usize, q[2] as usize);
                    }
                }
            }
        }
        let expected = LabelMap::new(l.dims(), l.spacing(), expected, 3).unwrap();
        assert_eq!(moved, expected);
        assert_eq!(dice(&moved, &expected, 1), 1.0);
        // The same transform moves intensities and labels together.
        let mv = t.apply_volume(&v);
        assert_eq!(mv.dims(), moved.dims());
    }
}

#[test]
fn augment_is_deterministic_per_seed() {
    let (v, l) = synth_phantom(9, [16, 16, 16], [1.0; 3], 3).unwrap();
    let ops = AugmentOps {
        elastic: true,
        ..AugmentOps::all_rigid()
    };
    let p = AugmentParams::default();
    let a = augment(&v, &l, 11, ops, &p).unwrap();
    let b = augment(&v, &l, 11, ops, &p).unwrap();
    let c = augment(&v, &l, 12, ops, &p).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.1.data().iter().all(|&x| x < 3));
}

// ---------------------------------------------------------------------------
// Manifests

#[test]
fn phantom_set_manifest_and_checksums() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let e1 = write_phantom_set(d1.path(), 3, 4, [16, 16, 16], 3).unwrap();
    let e2 = write_phantom_set(d2.path(), 3, 4, [16, 16, 16], 3).unwrap();
    assert_eq!(e1, e2);
    let files = std::fs::read_dir(d1.path()).unwrap().count();
    assert_eq!(files, 9);
    let manifest = std::fs::read_to_string(d1.path().join(MANIFEST_FILE)).unwrap();
    assert!(manifest.starts_with("# schema-version: 1\n"));

    let ds = load_dataset(d1.path()).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.classes(), 3);

    let victim = d1.path().join(&e1[0].image);
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&victim, bytes).unwrap();
    let err = load_dataset(d1.path()).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
}
