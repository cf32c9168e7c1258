mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use pimip::analysis::{
    classify_regions, connected_components, default_palette, detect_nuclei, histogram, otsu_threshold, read_artifact,
    region_grow, render_overlay, write_artifacts, AnalysisContext, AnalysisError, AnalysisOutput, AnalyzerDescriptor,
    AnalyzerRegistry, GridLabels, InputKind, MeanColorClassifier, NucleusParams, OutputKind, ParamKind, ParamSpec,
    Params, TaskStatus, ThresholdMode, WorkerPool,
};
use pimip::annotation::LabelMask;
use pimip::slide_io::{Slide, StandardCodec, TileFormat};
use pimip::tiler::{dz_level_count, tile_rect, DeepZoomLayout};
use pimip::{PixelBuffer, Point, Rect};
use proptest::prelude::*;
use serde_json::json;

fn slide_of(levels: &[PixelBuffer]) -> Slide {
    Slide::from_tiff_source(Box::new(common::tiff_bytes(levels, 32, Some(40.0))), "a".into(), Arc::new(StandardCodec))
        .unwrap()
}

fn params(v: serde_json::Value) -> Params {
    v.as_object().unwrap().clone()
}

/// Two-colour slide: red on the left `split` columns, blue on the rest.
fn halves(w: u32, h: u32, split: u32) -> PixelBuffer {
    let mut img = PixelBuffer::filled(w, h, 3, 0);
    for y in 0..h {
        for x in 0..w {
            img.pixel_mut(x, y).copy_from_slice(if x < split { &[200, 20, 20] } else { &[20, 20, 200] });
        }
    }
    img
}

/// 8-connected labelling by repeated union of neighbours.
fn oracle_components(w: usize, h: usize, bits: &[bool]) -> Vec<u64> {
    let mut parent: Vec<usize> = (0..bits.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            if !bits[y * w + x] {
                continue;
            }
            for (dx, dy) in [(1i64, 0i64), (0, 1), (1, 1), (-1, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && (nx as usize) < w && (ny as usize) < h && bits[ny as usize * w + nx as usize] {
                    let (a, b) = (find(&mut parent, y * w + x), find(&mut parent, ny as usize * w + nx as usize));
                    parent[a] = b;
                }
            }
        }
    }
    let mut sizes = std::collections::HashMap::new();
    for (i, &on) in bits.iter().enumerate() {
        if on {
            *sizes.entry(find(&mut parent, i)).or_insert(0u64) += 1;
        }
    }
    let mut v: Vec<u64> = sizes.into_values().collect();
    v.sort_unstable();
    v
}

#[test]
fn region_grow_fills_a_flat_region() {
    let mut img = PixelBuffer::filled(60, 40, 3, 240);
    for y in 10..25 {
        for x in 5..30 {
            img.pixel_mut(x, y).copy_from_slice(&[40, 40, 40]);
        }
    }
    let m = region_grow(&img, (12, 12), 10.0, 100_000).unwrap();
    assert_eq!(m.bounds, Rect::new(5, 10, 25, 15));
    assert_eq!(m.area(), 25 * 15);
    let capped = region_grow(&img, (12, 12), 10.0, 50).unwrap();
    assert_eq!(capped.area(), 50);
    assert!(matches!(region_grow(&img, (60, 0), 1.0, 10), Err(AnalysisError::SeedOutOfBounds { x: 60, y: 0 })));
    assert_eq!(region_grow(&img, (0, 0), -1.0, 10).unwrap_err().code(), "BadParams");
    assert_eq!(region_grow(&img, (0, 0), f64::NAN, 10).unwrap_err().code(), "BadParams");
}

#[test]
fn nuclei_filters_by_area_and_fixed_threshold() {
    let mut img = PixelBuffer::filled(80, 80, 3, 230);
    let mut blob = |cx: i64, cy: i64, r: i64, v: u8| {
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    img.pixel_mut(x as u32, y as u32).copy_from_slice(&[v, v, v]);
                }
            }
        }
    };
    blob(20, 20, 6, 40);
    blob(60, 60, 1, 40);
    blob(60, 20, 6, 150);
    let p = |mode, min_area, max_area| NucleusParams {
        threshold_mode: mode,
        min_area,
        max_area,
    };
    let found = detect_nuclei(&img, &p(ThresholdMode::Fixed(150), 20, 2000)).unwrap();
    assert_eq!(found, vec![Point::new(20.0, 20.0)]);
    let found = detect_nuclei(&img, &p(ThresholdMode::Fixed(50), 20, 2000)).unwrap();
    assert_eq!(found, vec![Point::new(20.0, 20.0), Point::new(60.0, 20.0)]);
    let found = detect_nuclei(&img, &p(ThresholdMode::Fixed(150), 1, 2000)).unwrap();
    assert_eq!(found.len(), 2);
    assert!(detect_nuclei(&img, &p(ThresholdMode::Fixed(150), 20, 100)).unwrap().is_empty());
    assert_eq!(detect_nuclei(&img, &p(ThresholdMode::Otsu, 50, 10)).unwrap_err().code(), "BadParams");
    let flat = PixelBuffer::filled(10, 10, 3, 128);
    assert!(detect_nuclei(&flat, &NucleusParams::default()).unwrap().is_empty());
}

#[test]
fn nuclei_on_grayscale_input() {
    let (img, centres) = common::planted_discs(&mut common::rng(31), 200, 200, 12);
    let gray = img.to_channels(1);
    let found = detect_nuclei(&gray, &NucleusParams::default()).unwrap();
    assert_eq!(found.len(), centres.len());
}

#[test]
fn grid_classification_and_text_round_trip() {
    let base = halves(200, 130, 96);
    let slide = slide_of(&common::oracle_levels(&base)[..2]);
    let c = MeanColorClassifier::new(vec![[200.0, 20.0, 20.0], [20.0, 20.0, 200.0]]);
    let g = classify_regions(&slide, 0, 32, &c, default_palette()).unwrap();
    assert_eq!((g.cols, g.rows), (7, 5));
    for r in 0..g.rows {
        for col in 0..g.cols {
            assert_eq!(g.label(col, r), if col < 3 { 1 } else { 2 }, "cell ({col},{r})");
        }
    }
    assert_eq!(g.class_counts(), vec![(1, 15), (2, 20)]);
    let areas: u64 = g.class_areas().iter().map(|a| a.1).sum();
    assert_eq!(areas, 200 * 130);
    assert_eq!(GridLabels::from_text(&g.to_text(), g.palette.clone()).unwrap(), g);
    let coarse = classify_regions(&slide, 1, 50, &c, default_palette()).unwrap();
    assert_eq!((coarse.downsample, coarse.cols, coarse.rows), (2.0, 2, 2));
    assert_eq!(classify_regions(&slide, 0, 0, &c, vec![]).unwrap_err().code(), "BadParams");
    assert_eq!(classify_regions(&slide, 5, 8, &c, vec![]).unwrap_err().code(), "LevelOutOfRange");
}

#[test]
fn registry_resolves_params_and_runs_custom_analyzers() {
    let r = AnalyzerRegistry::with_builtins();
    assert_eq!(r.list().len(), 4);
    let d = r.descriptor("nucleus_detect").unwrap();
    let resolved = d.resolve_params(&params(json!({"min_area": 5}))).unwrap();
    assert_eq!(resolved["min_area"], 5);
    assert_eq!(resolved["threshold_mode"], "otsu");
    assert_eq!(d.resolve_params(&params(json!({"bogus": 1}))).unwrap_err().code(), "BadParams");
    assert_eq!(d.resolve_params(&params(json!({"level": "zero"}))).unwrap_err().code(), "BadParams");
    assert_eq!(d.resolve_params(&params(json!({"level": 1.5}))).unwrap_err().code(), "BadParams");
    assert_eq!(r.descriptor("nope").unwrap_err().code(), "UnknownAnalyzer");
    assert_eq!(r.classifier("nope").err().unwrap().code(), "UnknownClassifier");

    let slide = slide_of(&[halves(64, 64, 32)]);
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let count = move |ctx: &AnalysisContext<'_>| -> Result<AnalysisOutput, AnalysisError> {
        seen.fetch_add(1, Ordering::SeqCst);
        let n = ctx.params["n"].as_i64().unwrap();
        Ok(AnalysisOutput::Points((0..n).map(|i| Point::new(i as f64, 0.0)).collect()))
    };
    let desc = AnalyzerDescriptor {
        name: "count".into(),
        input_kind: InputKind::WholeSlide,
        output_kind: OutputKind::Points,
        params_schema: vec![ParamSpec::new("n", ParamKind::Int, 3)],
        single_instance: true,
    };
    r.register(desc.clone(), Arc::new(count)).unwrap();
    assert_eq!(r.register(desc, Arc::new(|_: &AnalysisContext<'_>| unreachable!())).unwrap_err().code(), "DuplicateName");
    let (p, out) = r.run("count", &slide, &Params::new()).unwrap();
    assert_eq!(p["n"], 3);
    assert!(matches!(out, AnalysisOutput::Points(ref v) if v.len() == 3));
    assert_eq!(calls.load(Ordering::SeqCst), 1);

    let liar = AnalyzerDescriptor {
        name: "liar".into(),
        input_kind: InputKind::WholeSlide,
        output_kind: OutputKind::Mask,
        params_schema: vec![],
        single_instance: false,
    };
    r.register(liar, Arc::new(|_: &AnalysisContext<'_>| Ok(AnalysisOutput::Points(vec![])))).unwrap();
    assert_eq!(r.run("liar", &slide, &Params::new()).unwrap_err().code(), "AnalyzerFailed");
}

#[test]
fn builtin_analyzers_run_on_a_slide() {
    let r = AnalyzerRegistry::with_builtins();
    let (img, truth) = common::tissue(&mut common::rng(32), 400, 300);
    let slide = slide_of(&common::oracle_levels(&img)[..3]);
    let (_, fg) = r.run("foreground_otsu", &slide, &Params::new()).unwrap();
    let AnalysisOutput::Mask(m) = fg else { panic!("mask expected") };
    let agree = m.to_bits().iter().zip(&truth).filter(|(a, b)| a == b).count();
    assert!(agree as f64 / truth.len() as f64 > 0.97);

    let (_, g) = r
        .run("grid_classify", &slide, &params(json!({"grid_size": 50, "centroids": "240,240,240;190,80,160"})))
        .unwrap();
    assert!(matches!(g, AnalysisOutput::Grid(ref g) if g.cols == 8 && g.rows == 6));
    let err = r.run("grid_classify", &slide, &params(json!({"centroids": "1,2"}))).unwrap_err();
    assert_eq!(err.code(), "BadParams");
    let err = r.run("grid_classify", &slide, &params(json!({"level": 3}))).unwrap_err();
    assert_eq!(err.code(), "BadParams");

    let (discs, centres) = common::planted_discs(&mut common::rng(33), 300, 200, 10);
    let dslide = slide_of(&common::oracle_levels(&discs)[..2]);
    let (_, pts) = r.run("nucleus_detect", &dslide, &Params::new()).unwrap();
    assert!(matches!(pts, AnalysisOutput::Points(ref p) if p.len() == centres.len()));
    let (_, pts) = r
        .run("nucleus_detect", &dslide, &params(json!({"x": 0, "y": 0, "w": 150, "h": 200})))
        .unwrap();
    let left = centres.iter().filter(|c| c.0 < 140.0).count();
    assert!(matches!(pts, AnalysisOutput::Points(ref p) if p.len() >= left));
    let err = r.run("nucleus_detect", &dslide, &params(json!({"x": 5000, "w": 5, "h": 5}))).unwrap_err();
    assert_eq!(err.code(), "BadParams");
    let err = r.run("nucleus_detect", &dslide, &params(json!({"threshold_mode": "magic"}))).unwrap_err();
    assert_eq!(err.code(), "BadParams");

    let err = r.run("region_grow", &slide, &params(json!({"x": 400.0, "y": 0.0}))).unwrap_err();
    assert_eq!(err.code(), "SeedOutOfBounds");
    let (_, grown) = r.run("region_grow", &slide, &params(json!({"x": 2.0, "y": 2.0, "window": 64}))).unwrap();
    let AnalysisOutput::Mask(m) = grown else { panic!("mask expected") };
    assert!(m.contains(2, 2) && m.bounds.x >= 0 && m.bounds.right() <= 35);
}

#[test]
fn artifacts_round_trip_every_output_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mask = LabelMask::from_bits(Rect::new(3, 4, 3, 2), &[true, false, true, false, true, true]).unwrap();
    let grid = GridLabels::from_text("10 10 4 0 1\n0 1 2\n1 1 1\n2 2 0\n", default_palette()).unwrap();
    let outputs = [
        AnalysisOutput::Mask(mask),
        AnalysisOutput::Points(vec![Point::new(1.5, 2.0), Point::new(1e6, 0.25)]),
        AnalysisOutput::Grid(grid),
    ];
    for (i, out) in outputs.iter().enumerate() {
        let d = dir.path().join(format!("t{i}"));
        let p = params(json!({"k": i}));
        let meta = write_artifacts(&d, &format!("t{i}"), "s", "a", &p, 10, 20, out).unwrap();
        let back = read_artifact(&d).unwrap();
        assert_eq!(&back.output, out);
        assert_eq!(back.meta, meta);
        assert_eq!(meta.output_kind, out.kind());
    }
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3, "no staging directories left behind");
    assert_eq!(read_artifact(&dir.path().join("missing")).unwrap_err().code(), "MissingResult");
}

#[test]
fn overlays_sample_the_result_at_footprint_centres() {
    let base = halves(700, 450, 300);
    let slide = slide_of(&common::oracle_levels(&base)[..3]);
    let d = slide.descriptor().clone();
    let layout = DeepZoomLayout {
        tile_size: 128,
        overlap: 1,
        format: TileFormat::Png,
    };
    let mask = LabelMask::from_bits(
        Rect::new(100, 50, 333, 211),
        &(0..333 * 211).map(|i| (i % 7) != 0).collect::<Vec<_>>(),
    )
    .unwrap();
    let c = MeanColorClassifier::new(vec![[200.0, 20.0, 20.0], [20.0, 20.0, 200.0]]);
    let grid = classify_regions(&slide, 1, 40, &c, default_palette()).unwrap();
    let palette = default_palette();
    let top = dz_level_count(700, 450) - 1;
    for (out, name) in [(AnalysisOutput::Mask(mask.clone()), "mask"), (AnalysisOutput::Grid(grid.clone()), "grid")] {
        for dz in [top, top - 1, top - 3] {
            let s = 1i64 << (top - dz);
            let dims = pimip::tiler::dz_level_dims(700, 450, dz).unwrap();
            let (cols, rows) = pimip::tiler::tile_grid(dims, 128);
            for (col, row) in [(0, 0), (cols - 1, rows - 1), (cols / 2, rows / 2)] {
                let r = tile_rect(dz, col, row, &layout, dims).unwrap();
                let px = render_overlay(&out, &palette, &d, &layout, dz, col, row).unwrap();
                assert_eq!((px.width() as i64, px.height() as i64, px.channels()), (r.w, r.h, 4));
                for j in 0..r.h {
                    for i in 0..r.w {
                        let (bx, by) = ((r.x + i) * s + s / 2, (r.y + j) * s + s / 2);
                        let class = match &out {
                            AnalysisOutput::Mask(m) => m.contains(bx, by) as u32,
                            _ => {
                                let cell = 40 * 2;
                                grid.label((bx / cell) as u32, (by / cell) as u32)
                            }
                        };
                        let want = if class == 0 { [0, 0, 0, 0] } else { palette[1 + (class as usize - 1) % (palette.len() - 1)] };
                        assert_eq!(px.pixel(i as u32, j as u32), &want, "{name} dz {dz} tile ({col},{row}) px ({i},{j})");
                    }
                }
            }
        }
    }
}

#[test]
fn worker_pool_runs_every_job() {
    let counter = Arc::new(AtomicUsize::new(0));
    {
        let pool = WorkerPool::new(4);
        assert_eq!(pool.size(), 4);
        for _ in 0..200 {
            let c = counter.clone();
            pool.execute(move || {
                c.fetch_add(1, Ordering::SeqCst);
            });
        }
    }
    assert_eq!(counter.load(Ordering::SeqCst), 200, "dropping the pool drains the queue");
    assert_eq!(WorkerPool::new(0).size(), 1);
}

#[test]
fn task_status_transitions() {
    use TaskStatus::*;
    let all = [Pending, Running, Done, Failed];
    let allowed: Vec<(TaskStatus, TaskStatus)> = all
        .iter()
        .flat_map(|&a| all.iter().map(move |&b| (a, b)))
        .filter(|(a, b)| a.can_become(*b))
        .collect();
    assert_eq!(allowed, vec![(Pending, Running), (Running, Done), (Running, Failed)]);
    for s in all {
        assert_eq!(TaskStatus::parse(s.as_str()), Some(s));
        assert_eq!(s.is_terminal(), matches!(s, Done | Failed));
    }
    assert_eq!(TaskStatus::parse("queued"), None);
}

proptest! {
    #[test]
    fn components_match_union_find(w in 1usize..24, h in 1usize..24, seed in any::<u64>(), density in 0.0f64..1.0) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        let c = connected_components(w as u32, h as u32, &bits);
        let mut areas: Vec<u64> = c.regions.iter().map(|r| r.area).collect();
        areas.sort_unstable();
        prop_assert_eq!(areas, oracle_components(w, h, &bits));
        for (i, l) in c.labels.iter().enumerate() {
            prop_assert_eq!(*l == 0, !bits[i]);
        }
        for r in &c.regions {
            let members: Vec<usize> = (0..bits.len()).filter(|&i| c.labels[i] == r.label).collect();
            let mx = members.iter().map(|&i| (i % w) as f64).sum::<f64>() / members.len() as f64;
            let my = members.iter().map(|&i| (i / w) as f64).sum::<f64>() / members.len() as f64;
            prop_assert!((r.centroid.x - mx).abs() < 1e-9 && (r.centroid.y - my).abs() < 1e-9);
        }
    }

    #[test]
    fn otsu_is_invariant_to_scaling_counts(counts in proptest::collection::vec(0u64..1000, 256), k in 1u64..50) {
        let mut h = [0u64; 256];
        h.copy_from_slice(&counts);
        prop_assume!(h.iter().any(|&c| c > 0));
        let scaled: [u64; 256] = std::array::from_fn(|i| h[i] * k);
        prop_assert_eq!(otsu_threshold(&h), otsu_threshold(&scaled));
    }

    #[test]
    fn histogram_counts_every_sample(v in proptest::collection::vec(any::<u8>(), 0..500)) {
        let h = histogram(v.iter().copied());
        prop_assert_eq!(h.iter().sum::<u64>(), v.len() as u64);
        for x in &v {
            prop_assert!(h[*x as usize] > 0);
        }
    }
}
