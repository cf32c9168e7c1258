mod common;

use std::io::Cursor;
use std::sync::Arc;

use pimip::slide_io::tiff::{self as wsi_tiff, ByteOrder};
use pimip::slide_io::tiff_writer::{write_pyramid_tiff, TiffWriteOptions};
use pimip::slide_io::{Manifest, Slide, SlideError, StandardCodec, MANIFEST_FILE};
use pimip::tiler::{build_pyramid, PyramidMeta, StorageLayout};
use pimip::PixelBuffer;
use proptest::prelude::*;
use rand::Rng;

fn open_bytes(bytes: Vec<u8>) -> Result<Slide, SlideError> {
    Slide::from_tiff_source(Box::new(bytes), "t".into(), Arc::new(StandardCodec))
}

fn levels_of(base: &PixelBuffer, n: usize) -> Vec<PixelBuffer> {
    common::oracle_levels(base).into_iter().take(n).collect()
}

#[test]
fn uncompressed_layouts_read_back_exactly() {
    let mut rng = common::rng(11);
    let base = common::noise(&mut rng, 333, 217, 3);
    let levels = levels_of(&base, 3);
    for (big_tiff, byte_order) in [
        (false, ByteOrder::Little),
        (false, ByteOrder::Big),
        (true, ByteOrder::Little),
        (true, ByteOrder::Big),
    ] {
        let opts = TiffWriteOptions {
            tile_size: 48,
            big_tiff,
            byte_order,
            ..TiffWriteOptions::default()
        };
        let slide = open_bytes(write_pyramid_tiff(&levels, &opts).unwrap()).unwrap();
        assert_eq!(slide.level_count(), 3);
        for (k, level) in levels.iter().enumerate() {
            assert_eq!(&slide.read_level(k).unwrap(), level, "level {k} big={big_tiff} {byte_order:?}");
            for _ in 0..30 {
                let (w, h) = (rng.random_range(1..120), rng.random_range(1..120));
                let x = rng.random_range(-(w as i64) + 1..level.width() as i64);
                let y = rng.random_range(-(h as i64) + 1..level.height() as i64);
                assert_eq!(slide.read_region(k, x, y, w, h).unwrap(), common::oracle_crop(level, x, y, w, h));
            }
        }
    }
}

#[test]
fn written_files_decode_with_an_independent_reader() {
    let base = common::noise(&mut common::rng(12), 200, 130, 3);
    let bytes = write_pyramid_tiff(&levels_of(&base, 2), &TiffWriteOptions {
        tile_size: 64,
        ..TiffWriteOptions::default()
    })
    .unwrap();
    let mut dec = tiff::decoder::Decoder::new(Cursor::new(bytes)).unwrap();
    assert_eq!(dec.dimensions().unwrap(), (200, 130));
    match dec.read_image().unwrap() {
        tiff::decoder::DecodingResult::U8(px) => assert_eq!(px, base.data()),
        other => panic!("unexpected sample type {:?}", std::mem::discriminant(&other)),
    }
}

#[test]
fn jpeg_tiles_stay_close_to_the_source() {
    let base = common::gradient(300, 180);
    let opts = TiffWriteOptions {
        tile_size: 64,
        compression: 7,
        jpeg_quality: 95,
        ..TiffWriteOptions::default()
    };
    let slide = open_bytes(write_pyramid_tiff(&levels_of(&base, 2), &opts).unwrap()).unwrap();
    let got = slide.read_level(0).unwrap();
    let worst = got.data().iter().zip(base.data()).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
    assert!(worst <= 12, "max error {worst}");
}

#[test]
fn descriptor_carries_scan_metadata() {
    let base = common::gradient(256, 200);
    let slide = open_bytes(common::tiff_bytes(&levels_of(&base, 3), 64, Some(40.0))).unwrap();
    let d = slide.descriptor();
    assert_eq!((d.width, d.height, d.tile_size), (256, 200, 64));
    assert_eq!(d.base_magnification, Some(40.0));
    assert_eq!(d.mpp, Some(0.25));
    let ds: Vec<f64> = d.levels.iter().map(|l| l.downsample).collect();
    assert_eq!(ds, vec![1.0, 2.0, 4.0]);
    assert_eq!(d.best_level_for_downsample(3.0), 1);
    assert_eq!(d.best_level_for_downsample(0.5), 0);
    assert_eq!(wsi_tiff::description_value("Aperio |AppMag = 20|MPP = 0.5", "AppMag"), Some(20.0));
    assert_eq!(wsi_tiff::description_value("no keys", "MPP"), None);
}

#[test]
fn header_errors_are_classified() {
    let good = common::tiff_bytes(&[common::gradient(64, 64)], 32, None);
    let code = |b: Vec<u8>| open_bytes(b).err().map(|e| e.code());

    assert_eq!(code(b"GIF89a-not-a-tiff".to_vec()), Some("BadMagic"));
    let mut v = good.clone();
    v[2] = 99;
    assert_eq!(code(v), Some("UnsupportedVersion"));
    assert_eq!(code(good[..5].to_vec()), Some("TruncatedFile"));
    assert!(code(good[..good.len() - 10].to_vec()).is_some());
}

#[test]
fn cyclic_ifd_chain_is_rejected() {
    let mut b = common::tiff_bytes(&[common::gradient(64, 64)], 32, None);
    let first = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
    let n = u16::from_le_bytes(b[first..first + 2].try_into().unwrap()) as usize;
    let next = first + 2 + n * 12;
    b[next..next + 4].copy_from_slice(&(first as u32).to_le_bytes());
    assert!(matches!(open_bytes(b), Err(SlideError::CyclicChain(_))));
}

#[test]
fn region_and_tile_arguments_are_validated() {
    let slide = open_bytes(common::tiff_bytes(&levels_of(&common::gradient(100, 80), 2), 32, None)).unwrap();
    assert!(matches!(slide.read_region(0, 0, 0, 0, 5), Err(SlideError::ZeroAreaRect)));
    assert!(matches!(slide.read_region(0, 100, 0, 5, 5), Err(SlideError::RegionOutOfBounds)));
    assert!(matches!(slide.read_region(0, -5, -5, 5, 5), Err(SlideError::RegionOutOfBounds)));
    assert!(matches!(slide.read_region(2, 0, 0, 1, 1), Err(SlideError::LevelOutOfRange(2))));
    assert_eq!(slide.tile_grid(0).unwrap(), (4, 3));
    assert!(matches!(slide.read_tile_raw(0, 4, 0), Err(SlideError::TileOutOfRange { .. })));
    let corner = slide.read_region(0, -2, -2, 4, 4).unwrap();
    assert_eq!(corner.pixel(0, 0), &[255, 255, 255]);
    assert_eq!(corner.pixel(2, 2), common::gradient(100, 80).pixel(0, 0));
}

#[test]
fn grayscale_slides_keep_one_channel() {
    let base = common::noise(&mut common::rng(13), 90, 70, 1);
    let slide = open_bytes(common::tiff_bytes(&levels_of(&base, 2), 32, None)).unwrap();
    assert_eq!(slide.channels(), 1);
    assert_eq!(slide.read_level(1).unwrap(), common::oracle_halve(&base));
}

#[test]
fn pyramid_directories_open_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::noise(&mut common::rng(14), 700, 300, 3);
    let out = dir.path().join("pyr");
    build_pyramid(&base, &StorageLayout::default(), &out, &PyramidMeta::default()).unwrap();
    let slide = Slide::open(&out).unwrap();
    assert_eq!(slide.descriptor().slide_id, "pyr");
    assert_eq!(slide.level_count(), 11);
    assert_eq!(slide.read_level(0).unwrap(), base);

    let manifest = Manifest::read(&out).unwrap();
    assert_eq!(manifest.level_dims(1), (350, 150));
    assert_eq!(Manifest::read(&out.join("levels")).err().map(|e| e.code()), Some("MissingManifest"));

    std::fs::remove_file(out.join("levels").join("0").join("2_1.png")).unwrap();
    assert_eq!(Slide::open(&out).err().map(|e| e.code()), Some("ManifestMismatch"));

    let missing = dir.path().join("empty");
    std::fs::create_dir(&missing).unwrap();
    assert!(matches!(Slide::open(&missing), Err(SlideError::MissingManifest(_))));
    std::fs::write(missing.join(MANIFEST_FILE), "not a manifest").unwrap();
    assert!(Slide::open(&missing).is_err());
}

#[test]
fn opening_a_missing_file_is_an_io_error() {
    let err = Slide::open(std::path::Path::new("/nonexistent/slide.tif")).unwrap_err();
    assert_eq!(err.code(), "IoFailure");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_region_matches_the_crop_oracle(
        w in 1u32..160, h in 1u32..160, tile in prop::sample::select(vec![16u32, 32, 48]),
        rx in -200i64..200, ry in -200i64..200, rw in 1u32..200, rh in 1u32..200, seed in any::<u64>(),
    ) {
        let base = common::noise(&mut common::rng(seed), w, h, 3);
        let slide = open_bytes(common::tiff_bytes(std::slice::from_ref(&base), tile, None)).unwrap();
        let intersects = rx < w as i64 && ry < h as i64 && rx + rw as i64 > 0 && ry + rh as i64 > 0;
        match slide.read_region(0, rx, ry, rw, rh) {
            Ok(got) => prop_assert_eq!(got, common::oracle_crop(&base, rx, ry, rw, rh)),
            Err(e) => {
                prop_assert!(!intersects);
                prop_assert_eq!(e.code(), "RegionOutOfBounds");
            }
        }
    }
}
