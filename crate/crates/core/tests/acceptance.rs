//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

use sinksam::config::ConfigBuilder;
use sinksam::eval::{
    bce_loss, default_thresholds, detection_curve, metrics_from_confusion, pixel_confusion, segmentation_loss,
    PixelConfusion,
};
use sinksam::hydro::{fill_depressions, is_outlet};
use sinksam::labeling::{filter_components, label_components, label_mask, FilterThresholds, PromptBox};
use sinksam::mock_server::{MockBehavior, MockServer};
use sinksam::pipeline::{cmd_run, cmd_synth, SCENE_CONFIG_FILE};
use sinksam::pnm::RgbImage;
use sinksam::raster::{BinaryMask, GeoTransform, Raster, DEFAULT_NODATA};
use sinksam::segmenter::{http_backend, segment_patch, ProbabilityMask, SegmentError};
use sinksam::synth::{brute_force_fill, SynthParams};
use sinksam::tiling::{extract_tile, plan_tiles, stitch, MergeRule, TileSpec, TileWindow};

use common::{drains, random_dem, random_mask, random_real_raster, rng, tree};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;
type ErrorCheck = fn(&SegmentError) -> bool;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fill_oracle() -> Outcome {
    let start = Instant::now();
    let mut g = rng(1);
    let mut max_err = 0.0f64;
    for case in 0..200 {
        let (w, h) = (g.gen_range(1..=64), g.gen_range(1..=64));
        let dem = random_dem(&mut g, w, h, 0.06);
        let fast = fill_depressions(&dem).map_err(|e| format!("case {case}: {e}"))?;
        let slow = brute_force_fill(&dem);
        for (a, b) in fast.filled.values().iter().zip(slow.values()) {
            max_err = max_err.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure(max_err <= 1e-9, || format!("max deviation {max_err}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 rasters up to 64x64, max deviation {max_err:e}, {elapsed:.2?}"))
}

fn fill_properties() -> Outcome {
    let strategy = (1usize..=32, 1usize..=32).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop_oneof![9 => (0u8..10).prop_map(f64::from), 1 => Just(DEFAULT_NODATA)], w * h)
            .prop_filter("a valid cell", |v| v.iter().any(|&x| x != DEFAULT_NODATA))
            .prop_map(move |v| Raster::new(w, h, v, DEFAULT_NODATA, GeoTransform::default()).unwrap())
    });
    let cases = 500;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&strategy, |dem| {
            let filled = fill_depressions(&dem).unwrap().filled;
            let w = dem.width();
            for i in 0..dem.len() {
                if dem.is_nodata(i) {
                    continue;
                }
                prop_assert!(filled.values()[i] >= dem.values()[i], "lowered cell {}", i);
                if is_outlet(&dem, i / w, i % w) {
                    prop_assert_eq!(filled.values()[i], dem.values()[i], "outlet {} moved", i);
                }
            }
            prop_assert!(drains(&filled, &dem), "a cell has no non-ascending path out");
            let again = fill_depressions(&filled).unwrap().filled;
            prop_assert_eq!(again.values(), filled.values(), "not idempotent");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} generated cases: idempotent, never lowers, outlets fixed, drains"))
}

fn tiling_round_trip() -> Outcome {
    let mut g = rng(3);
    for size in [512, 777, 1000, 1024] {
        let r = random_real_raster(&mut g, size, size);
        let windows = plan_tiles(size, size, TileSpec::default()).map_err(|e| e.to_string())?;
        let tiles: Vec<(TileWindow, Raster)> = windows.iter().map(|w| (*w, extract_tile(&r, w).unwrap())).collect();
        for merge in [MergeRule::Max, MergeRule::Mean, MergeRule::First] {
            let back = stitch(&tiles, merge, size, size).map_err(|e| e.to_string())?;
            ensure(back == r, || format!("{size}^2 with {merge} is not the identity"))?;
        }
    }
    let n1024 = plan_tiles(1024, 1024, TileSpec::default()).unwrap();
    ensure(n1024.len() == 9, || format!("{} windows for 1024", n1024.len()))?;
    let n1000 = plan_tiles(1000, 1000, TileSpec::default()).unwrap();
    let last = n1000.last().unwrap();
    ensure(n1000.len() == 9 && (last.row0, last.col0) == (488, 488), || {
        format!("{} windows for 1000, last at {:?}", n1000.len(), (last.row0, last.col0))
    })?;
    Ok("identity on 512/777/1000/1024 squares; 9 windows at 1024; 9 at 1000 ending at 488".into())
}

fn metric_hand_checks() -> Outcome {
    let mut pred = BinaryMask::zeros(4, 4);
    let mut gt = BinaryMask::zeros(4, 4);
    for r in 0..2 {
        for c in 0..2 {
            pred.set(r, c, true);
            gt.set(r, c + 1, true);
        }
    }
    let m = metrics_from_confusion(pixel_confusion(&pred, &gt, None).map_err(|e| e.to_string())?);
    ensure(
        (m.precision, m.recall, m.f1, m.iou, m.accuracy) == (0.5, 0.5, 0.5, 1.0 / 3.0, 0.75),
        || format!("got {m:?}"),
    )?;
    let half = ProbabilityMask::new(4, 4, vec![0.5; 16]).unwrap();
    let bce = bce_loss(&half, &gt).unwrap();
    ensure((bce - std::f64::consts::LN_2).abs() < 1e-12, || format!("bce {bce}"))?;
    let mut g = rng(4);
    for _ in 0..50 {
        let probs = ProbabilityMask::new(4, 4, (0..16).map(|_| g.gen_range(0.0..=1.0)).collect()).unwrap();
        let l = segmentation_loss(&probs, &random_mask(&mut g, 4, 4, 0.5)).unwrap();
        ensure(l.total == l.bce + l.dice, || format!("{l:?}"))?;
    }
    Ok("shifted blocks P=R=F1=0.5, IoU=1/3, Acc=0.75; BCE(0.5)=ln 2; total=bce+dice".into())
}

fn metric_identities() -> Outcome {
    let mut g = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = PixelConfusion {
            tp: g.gen_range(0..5000),
            tn: g.gen_range(0..5000),
            fp: g.gen_range(0..5000),
            fn_: g.gen_range(0..5000),
        };
        let m = metrics_from_confusion(c);
        worst = worst.max((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs());
    }
    ensure(worst <= 1e-12, || format!("F1 identity off by {worst}"))?;
    for scene in 0..100 {
        let pred = label_mask(&random_mask(&mut g, 32, 32, 0.3));
        let gt = label_mask(&random_mask(&mut g, 32, 32, 0.3));
        let curve = detection_curve(&pred, &gt, &default_thresholds());
        ensure(curve.windows(2).all(|w| w[0].tp >= w[1].tp), || {
            format!("scene {scene}: tp rises along {:?}", curve.iter().map(|r| r.tp).collect::<Vec<_>>())
        })?;
    }
    Ok(format!("F1 = 2 IoU/(1+IoU) on 1000 tuples (max error {worst:e}); tp monotone on 100 scenes"))
}

fn filter_semantics() -> Outcome {
    let t = FilterThresholds::default();
    for (depth, area, kept) in [(1.99, 1000usize, false), (10.0, 49, false), (2.0, 50, true)] {
        let w = 100;
        let h = area / w + 3;
        let mut v = vec![0.0; w * h];
        for k in 0..area {
            v[w + k] = if k == 0 { depth } else { 0.5 };
        }
        let r = Raster::new(w, h, v, DEFAULT_NODATA, GeoTransform::default()).unwrap();
        let comps = label_components(&r);
        ensure(comps.len() == 1 && comps[0].area_px == area && comps[0].max_depth == depth, || {
            format!("fixture ({depth}, {area}) labelled as {} components", comps.len())
        })?;
        let n = filter_components(&comps, t).len();
        ensure(n == usize::from(kept), || format!("({depth}, {area}): kept {n}"))?;
    }
    Ok("(1.99, 1000) and (10, 49) removed, (2.0, 50) kept".into())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut p = SynthParams::new(2024, 1024, 1024, 12);
    p.noise_amp = 0.0;
    let scene = cmd_synth(&p, dir.path()).map_err(|e| e.to_string())?;
    ensure(scene.sinkholes.len() == 12, || format!("{} sinkholes placed", scene.sinkholes.len()))?;
    let cfg = ConfigBuilder::from_file(dir.path().join(SCENE_CONFIG_FILE))
        .and_then(|b| b.build())
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = cmd_run(&cfg).map_err(|e| e.to_string())?.ok_or("no report")?;
    let elapsed = start.elapsed();
    let at05 = report
        .detection
        .iter()
        .find(|d| d.iou_threshold == 0.5)
        .ok_or("no 0.5 row")?;
    ensure(report.iou >= 0.95, || format!("IoU {:.4}", report.iou))?;
    ensure((at05.tp, at05.fp, at05.fn_) == (12, 0, 0), || {
        format!("tp/fp/fn at 0.5 = {}/{}/{}", at05.tp, at05.fp, at05.fn_)
    })?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "IoU {:.4}, F1 {:.4}, tp/fp/fn at 0.5 = 12/0/0, {elapsed:.2?}",
        report.iou, report.f1
    ))
}

fn protocol() -> Outcome {
    let boxes = [PromptBox { x0: 2, y0: 1, x1: 6, y1: 5 }, PromptBox { x0: 0, y0: 0, x1: 3, y1: 3 }];
    let image = RgbImage::blank(8, 6);
    let call = |b: MockBehavior| {
        let server = MockServer::start(b).unwrap();
        segment_patch(&http_backend(&server.url(), Duration::from_secs(5)), "p", &image, &boxes, 0.5)
    };

    let out = call(MockBehavior::BoxFill(128)).map_err(|e| e.to_string())?;
    for (k, b) in boxes.iter().enumerate() {
        for r in 0..6 {
            for c in 0..8 {
                let want = if b.contains(r, c) { 128.0 / 255.0 } else { 0.0 };
                let got = out.masks[k].probs()[r * 8 + c];
                ensure(got == want, || format!("mask {k} ({r},{c}) = {got}, want {want}"))?;
            }
        }
    }

    let cases: [(&str, MockBehavior, ErrorCheck); 5] = [
        ("count mismatch", MockBehavior::DropMask, |e| matches!(e, SegmentError::MaskCountMismatch { .. })),
        ("bad dimensions", MockBehavior::WrongSize, |e| matches!(e, SegmentError::MaskDimensions { .. })),
        ("16-bit mask", MockBehavior::WideMaxval, |e| matches!(e, SegmentError::OutOfRange { .. })),
        ("score 1.5", MockBehavior::ScoreOutOfRange, |e| matches!(e, SegmentError::OutOfRange { .. })),
        ("non-JSON body", MockBehavior::Garbage, |e| matches!(e, SegmentError::Schema(_))),
    ];
    for (name, behavior, expected) in cases {
        match call(behavior) {
            Err(e) if expected(&e) => {}
            Err(e) => return Err(format!("{name}: wrong error {e:?}")),
            Ok(_) => return Err(format!("{name}: silently accepted")),
        }
    }
    let server = MockServer::start(MockBehavior::FailFirst(1)).unwrap();
    segment_patch(&http_backend(&server.url(), Duration::from_secs(5)), "p", &image, &boxes, 0.5)
        .map_err(|e| format!("retry after 503 failed: {e}"))?;
    ensure(server.stats().requests.load(Ordering::SeqCst) == 2, || "503 was not retried".into())?;
    Ok("PGM 128 -> 128/255 exact; count, size, maxval, score and schema violations rejected".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut p = SynthParams::new(99, 900, 900, 10);
    p.noise_amp = 0.3;
    cmd_synth(&p, dir.path()).map_err(|e| e.to_string())?;
    let conf = dir.path().join(SCENE_CONFIG_FILE);
    let mut trees = Vec::new();
    for (out, workers) in [("w1a", 1), ("w1b", 1), ("w8a", 8), ("w8b", 8)] {
        let mut b = ConfigBuilder::from_file(&conf).map_err(|e| e.to_string())?;
        b.set("out_dir", out, dir.path()).unwrap();
        b.set("workers", &workers.to_string(), dir.path()).unwrap();
        b.set("segment.save_masks", "true", dir.path()).unwrap();
        cmd_run(&b.build().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        trees.push(tree(&dir.path().join(out)));
    }
    let files = trees[0].len();
    ensure(files > 20, || format!("only {files} files"))?;
    ensure(trees.iter().all(|t| *t == trees[0]), || "output trees differ".into())?;
    Ok(format!("{files} files byte-identical across 2 runs each at 1 and 8 workers"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("fill-oracle equivalence", fill_oracle),
        ("fill properties", fill_properties),
        ("tiling round-trip", tiling_round_trip),
        ("metric hand-checks", metric_hand_checks),
        ("metric identities", metric_identities),
        ("filter semantics", filter_semantics),
        ("end-to-end synthetic", end_to_end),
        ("protocol conformance", protocol),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
