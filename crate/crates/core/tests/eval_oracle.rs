mod common;

use proptest::prelude::*;
use rand::Rng;

use sinksam::eval::{
    bce_loss, candidate_pairs, default_thresholds, detection_curve, dice_loss, metrics_from_confusion,
    object_match, pixel_confusion, segmentation_loss, write_table_csv, MetricsReport, PixelConfusion,
};
use sinksam::labeling::label_mask;
use sinksam::raster::BinaryMask;
use sinksam::segmenter::ProbabilityMask;

use common::{exhaustive_best_match, random_mask, rng};

fn block(w: usize, h: usize, r0: usize, c0: usize, size: usize) -> BinaryMask {
    let mut m = BinaryMask::zeros(w, h);
    for r in r0..r0 + size {
        for c in c0..c0 + size {
            m.set(r, c, true);
        }
    }
    m
}

#[test]
fn shifted_block_hand_count() {
    let pred = block(4, 4, 0, 0, 2);
    let gt = block(4, 4, 0, 1, 2);
    let c = pixel_confusion(&pred, &gt, None).unwrap();
    assert_eq!(c, PixelConfusion { tp: 2, tn: 10, fp: 2, fn_: 2 });
    let m = metrics_from_confusion(c);
    assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    assert_eq!(m.iou, 1.0 / 3.0);
    assert_eq!(m.accuracy, 0.75);
}

#[test]
fn ignore_mask_drops_pixels() {
    let pred = block(4, 4, 0, 0, 2);
    let gt = block(4, 4, 0, 1, 2);
    let mut ignore = BinaryMask::zeros(4, 4);
    ignore.set(0, 0, true);
    ignore.set(3, 3, true);
    let c = pixel_confusion(&pred, &gt, Some(&ignore)).unwrap();
    assert_eq!(c, PixelConfusion { tp: 2, tn: 9, fp: 1, fn_: 2 });
    assert!(pixel_confusion(&pred, &BinaryMask::zeros(3, 4), None).is_err());
}

#[test]
fn degenerate_masks() {
    let empty = BinaryMask::zeros(3, 3);
    let m = metrics_from_confusion(pixel_confusion(&empty, &empty, None).unwrap());
    assert_eq!((m.f1, m.iou, m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0, 1.0, 1.0));
    let full = block(3, 3, 0, 0, 3);
    let m = metrics_from_confusion(pixel_confusion(&empty, &full, None).unwrap());
    assert_eq!((m.f1, m.iou, m.precision, m.recall), (0.0, 0.0, 0.0, 0.0));
    let m = metrics_from_confusion(pixel_confusion(&full, &empty, None).unwrap());
    assert_eq!((m.f1, m.iou, m.precision, m.recall), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn losses() {
    let gt = block(4, 4, 1, 1, 2);
    let half = ProbabilityMask::new(4, 4, vec![0.5; 16]).unwrap();
    assert!((bce_loss(&half, &gt).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let l = segmentation_loss(&half, &gt).unwrap();
    assert_eq!(l.total, l.bce + l.dice);
    assert_eq!(l.dice, dice_loss(&half, &gt).unwrap());

    let perfect = ProbabilityMask::new(4, 4, gt.bits().iter().map(|&b| f64::from(u8::from(b))).collect()).unwrap();
    assert!(dice_loss(&perfect, &gt).unwrap().abs() < 1e-12);
    assert!(bce_loss(&perfect, &gt).unwrap() < 1e-6);
    assert!(bce_loss(&half, &BinaryMask::zeros(3, 3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn f1_is_a_function_of_iou(tp in 0u64..10_000, tn in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000) {
        let m = metrics_from_confusion(PixelConfusion { tp, tn, fp, fn_ });
        prop_assert!((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs() <= 1e-12);
        let s = metrics_from_confusion(PixelConfusion { tp, tn, fp, fn_ }.swapped());
        prop_assert_eq!((s.f1, s.iou, s.precision, s.recall), (m.f1, m.iou, m.recall, m.precision));
    }
}

/// Scenes of a few blobs each, overlapping at random.
fn blob_scene(r: &mut rand_chacha::ChaCha8Rng, w: usize, h: usize, n: usize) -> BinaryMask {
    let mut m = BinaryMask::zeros(w, h);
    for _ in 0..n {
        let (bh, bw) = (r.gen_range(1..5), r.gen_range(1..5));
        let (r0, c0) = (r.gen_range(0..h - bh), r.gen_range(0..w - bw));
        for rr in r0..r0 + bh {
            for cc in c0..c0 + bw {
                if r.gen_bool(0.85) {
                    m.set(rr, cc, true);
                }
            }
        }
    }
    m
}

#[test]
fn greedy_matching_equals_exhaustive_when_ious_are_distinct() {
    let mut r = rng(31);
    let mut compared = 0;
    for _ in 0..400 {
        let pred = label_mask(&blob_scene(&mut r, 16, 16, 4));
        let gt = label_mask(&blob_scene(&mut r, 16, 16, 4));
        if pred.len() > 6 || gt.len() > 6 {
            continue;
        }
        let pairs = candidate_pairs(&pred, &gt);
        let mut ious: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        ious.sort_by(f64::total_cmp);
        let distinct = ious.windows(2).all(|w| w[0] != w[1]);

        for &t in &default_thresholds() {
            let m = object_match(&pred, &gt, t);
            // always a valid, maximal one-to-one matching
            assert_eq!(m.tp + m.fp, pred.len());
            assert_eq!(m.tp + m.fn_, gt.len());
            let mut used_p = vec![false; pred.len()];
            let mut used_g = vec![false; gt.len()];
            for &(p, g, iou) in &m.pairs {
                assert!(iou >= t && !used_p[p] && !used_g[g]);
                used_p[p] = true;
                used_g[g] = true;
            }
            assert!(pairs.iter().all(|&(p, g, iou)| iou < t || used_p[p] || used_g[g]));

            if distinct {
                let best = exhaustive_best_match(&pred, &gt, t);
                let got: Vec<f64> = m.pairs.iter().map(|p| p.2).collect();
                assert_eq!(got, best, "threshold {t}");
            }
        }
        compared += usize::from(distinct);
    }
    assert!(compared >= 100, "only {compared} scenes had distinct IoUs");
}

#[test]
fn true_positives_never_grow_with_threshold() {
    let mut r = rng(32);
    for _ in 0..100 {
        let pred = label_mask(&random_mask(&mut r, 24, 24, 0.3));
        let gt = label_mask(&random_mask(&mut r, 24, 24, 0.3));
        let curve = detection_curve(&pred, &gt, &default_thresholds());
        assert!(curve.windows(2).all(|w| w[0].tp >= w[1].tp));
        for row in &curve {
            assert_eq!(row.tp + row.fp, pred.len());
            assert_eq!(row.tp + row.fn_, gt.len());
        }
    }
}

#[test]
fn report_json_and_csv() {
    let mut report = metrics_from_confusion(PixelConfusion { tp: 2, tn: 10, fp: 2, fn_: 2 });
    report.detection = detection_curve(&[], &[], &[0.5]);
    let json = report.to_json_pretty().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["f1", "iou", "precision", "recall", "accuracy", "pixel_confusion", "detection"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["pixel_confusion"]["fn"], 2);
    assert_eq!(v["detection"][0]["fn"], 0);
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);

    let mut csv = Vec::new();
    write_table_csv(&mut csv, &[("SinkSAM", "Closed Depressions BBs", &report)]).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        "Model,Prompts Source,F1 (%),IoU (%),Pre. (%),Rec. (%),Acc. (%)\n\
         SinkSAM,Closed Depressions BBs,50.00,33.33,50.00,50.00,75.00\n"
    );
}
