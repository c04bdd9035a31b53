//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and exits
//! non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use roadsense::bag::{read_bag, record_bag, replay_frames, replay_topic, write_frame_bag};
use roadsense::eval::{compute_metrics, evaluate_annotations, f1_score, match_image, EvalConfig, MatchTally, Prediction};
use roadsense::geometry::{horizontal_flip, iou, BBox, Frame};
use roadsense::graph::{build_graph, GraphConfig, Payload, RunOptions};
use roadsense::synth::{derive_seed, generate_scene, perturb, scene_objects, NoiseSpec, SceneContent, SceneSpec, XorShift64Star};
use roadsense::voc::{parse_annotation, serialize_annotation, GroundTruthObject, ImageAnnotation};
use roadsense::Taxonomy;
use serde_json::Value;

const TOL: f64 = 0.0005;
const DETECTOR: &str = "traffic_sign_and_traffic_light_detector";

fn roadsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadsense")).args(args).env_remove("ROADSENSE_SEED").output().expect("spawn roadsense")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn within(label: &str, got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol, "{label}: got {got:.6}, want {want} ± {tol}");
}

fn bx(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
    BBox::new(x0, y0, x1, y1).expect("valid box")
}

fn random_box(rng: &mut XorShift64Star, canvas: i64, max_side: i64) -> BBox {
    let w = rng.range_i64(1, max_side);
    let h = rng.range_i64(1, max_side);
    let x = rng.range_i64(0, canvas - w);
    let y = rng.range_i64(0, canvas - h);
    bx(x as i32, y as i32, (x + w) as i32, (y + h) as i32)
}

/// Overall metrics from a reconstructed tally.
fn criterion_1() -> String {
    let m = compute_metrics(&MatchTally::new(2052, 70, 267));
    within("precision", m.precision, 0.9670, TOL);
    within("recall", m.recall, 0.8848, TOL);
    within("F1", m.f1, 0.9241, TOL);
    format!("P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1)
}

/// Harmonic mean on the second detector's overall row.
fn criterion_2() -> String {
    within("f1_score", f1_score(0.9259, 0.8676), 0.8958, TOL);
    // 2012 of 2319 recalled, 2173 predictions
    let m = compute_metrics(&MatchTally::new(2012, 161, 307));
    within("precision", m.precision, 0.9259, TOL);
    within("recall", m.recall, 0.8676, TOL);
    within("F1", m.f1, 0.8958, TOL);
    format!("F1 {:.4}", m.f1)
}

/// IoU against pixel rasterisation on a 32x32 canvas.
fn criterion_3() -> String {
    const N: usize = 32;
    let raster = |b: &BBox| {
        let mut m = [[false; N]; N];
        for row in m.iter_mut().take(b.ymax() as usize).skip(b.ymin() as usize) {
            for cell in row.iter_mut().take(b.xmax() as usize).skip(b.xmin() as usize) {
                *cell = true;
            }
        }
        m
    };
    let oracle = |a: &BBox, b: &BBox| {
        let (ma, mb) = (raster(a), raster(b));
        let (mut inter, mut union) = (0u64, 0u64);
        for y in 0..N {
            for x in 0..N {
                inter += u64::from(ma[y][x] && mb[y][x]);
                union += u64::from(ma[y][x] || mb[y][x]);
            }
        }
        inter as f64 / union as f64
    };
    // every box with corners on the 8-pixel lattice: 100 boxes, 10^4 ordered pairs
    let ticks = [0, 8, 16, 24, 32];
    let mut lattice = Vec::new();
    for (i, &x0) in ticks.iter().enumerate() {
        for &x1 in &ticks[i + 1..] {
            for (j, &y0) in ticks.iter().enumerate() {
                for &y1 in &ticks[j + 1..] {
                    lattice.push(bx(x0, y0, x1, y1));
                }
            }
        }
    }
    let mut pairs = 0;
    for a in &lattice {
        for b in &lattice {
            assert_eq!(iou(a, b).to_bits(), oracle(a, b).to_bits(), "{a} vs {b}");
            pairs += 1;
        }
    }
    // plus arbitrary integer boxes anywhere on the canvas
    let mut rng = XorShift64Star::new(3);
    for _ in 0..10_000 {
        let (a, b) = (random_box(&mut rng, N as i64, N as i64), random_box(&mut rng, N as i64, N as i64));
        assert_eq!(iou(&a, &b).to_bits(), oracle(&a, &b).to_bits(), "{a} vs {b}");
        pairs += 1;
    }
    format!("{pairs} pairs bit-identical")
}

/// IoU exactly at the threshold does not match; just above does.
fn criterion_4() -> String {
    let gt = vec![GroundTruthObject { label: "DWS-01".into(), bbox: bx(0, 0, 100, 100) }];
    let pred = |b: BBox| vec![Prediction { image: "a".into(), label: "DWS-01".into(), bbox: b, score: 0.9 }];
    let at = bx(0, 0, 100, 30);
    assert_eq!(iou(&at, &gt[0].bbox), 0.3);
    assert_eq!(match_image(&gt, &pred(at), 0.3, true).tally(), MatchTally::new(0, 1, 1));
    // union stays 10^6, intersection one pixel row more than 30%
    let gt_big = vec![GroundTruthObject { label: "DWS-01".into(), bbox: bx(0, 0, 1000, 1000) }];
    let exact = bx(0, 0, 1000, 300);
    let above = bx(0, 0, 1000, 301);
    assert_eq!(iou(&exact, &gt_big[0].bbox), 0.3);
    assert!(iou(&above, &gt_big[0].bbox) > 0.3);
    assert_eq!(match_image(&gt_big, &pred(exact), 0.3, true).tally(), MatchTally::new(0, 1, 1));
    assert_eq!(match_image(&gt_big, &pred(above), 0.3, true).tally(), MatchTally::new(1, 0, 0));
    assert_eq!(match_image(&gt, &pred(bx(0, 0, 100, 31)), 0.3, true).tally(), MatchTally::new(1, 0, 0));
    "0.3 -> FP+FN, 0.301 -> TP".into()
}

/// Synthetic corpus through the zero-noise oracle pipeline scores F1 = 1.
fn criterion_5(dir: &Path) -> String {
    let targets = dir.join("targets.txt");
    std::fs::write(&targets, "DWS 120 40\nMNS 20 10\nPHS 30 10\nPRS 10 5\nSLS 40 15\nOSD 70 25\nAPR 20 10\nTLS 60 25\n").unwrap();
    let corpus = dir.join("closure");
    let t = targets.to_str().unwrap();
    let c = corpus.to_str().unwrap();
    ok(&roadsense(&["synth", "--targets", t, "--out", c, "--seed", "11", "--width", "640", "--height", "360"]));
    let manifest = corpus.join("manifest.tsv");
    let cfg = dir.join("oracle.cfg");
    std::fs::write(&cfg, format!("detector = oracle\nclassifier = oracle\nfixtures = {}\n", manifest.display())).unwrap();
    let out = dir.join("closure-out");
    ok(&roadsense(&[
        "run",
        cfg.to_str().unwrap(),
        corpus.join("images").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--no-frames",
    ]));
    let report: Value = serde_json::from_str(&ok(&roadsense(&[
        "evaluate",
        manifest.to_str().unwrap(),
        out.join("predictions.jsonl").to_str().unwrap(),
        "--json",
    ])))
    .unwrap();
    let tp = report["overall_tally"]["tp"].as_u64().unwrap();
    assert!(tp >= 500, "only {tp} instances");
    assert_eq!(report["overall"]["f1"].as_f64(), Some(1.0));
    assert_eq!(report["overall_tally"]["fp"].as_u64(), Some(0));
    assert_eq!(report["overall_tally"]["fn"].as_u64(), Some(0));
    format!("{tp} instances, F1 1.0")
}

/// Reference per-superclass counts survive synth followed by stats.
fn criterion_6(dir: &Path) -> String {
    const ROWS: [(&str, u64, u64, u64); 8] = [
        ("DWS", 2833, 809, 3642),
        ("MNS", 453, 128, 581),
        ("PHS", 650, 195, 845),
        ("PRS", 115, 26, 141),
        ("SLS", 735, 237, 972),
        ("OSD", 1619, 498, 2117),
        ("APR", 377, 123, 500),
        ("TLS", 1075, 303, 1378),
    ];
    let out = dir.join("reference");
    ok(&roadsense(&["synth", "--reference", "--no-frames", "--out", out.to_str().unwrap()]));
    let stats: Value =
        serde_json::from_str(&ok(&roadsense(&["stats", out.join("manifest.tsv").to_str().unwrap(), "--json"]))).unwrap();
    let rows = stats["superclasses"].as_array().unwrap();
    assert_eq!(rows.len(), ROWS.len());
    for (row, (code, train, test, total)) in rows.iter().zip(ROWS) {
        assert_eq!(row["superclass"], code);
        let c = &row["counts"];
        assert_eq!((c["train"].as_u64(), c["test"].as_u64(), c["total"].as_u64()), (Some(train), Some(test), Some(total)), "{code}");
    }
    let total = &stats["total"];
    assert_eq!((total["train"].as_u64(), total["test"].as_u64(), total["total"].as_u64()), (Some(7857), Some(2319), Some(10176)));
    "7857 / 2319 / 10176".into()
}

fn bench_fps(latency_ms: f64, frames: usize) -> f64 {
    let mut g = build_graph(&GraphConfig::reference()).unwrap();
    g.set_latency(DETECTOR, latency_ms).unwrap();
    let frame = Payload::from(vec![0u8; 64]);
    let r = g.run(std::iter::repeat(frame), frames, RunOptions::default()).unwrap();
    assert_eq!((r.frames_in, r.frames_out, r.dropped), (frames, frames, 0));
    r.fps
}

/// Throughput is set by the bottleneck stage.
fn criterion_7() -> String {
    let fps = bench_fps(10.0, 500);
    assert!((90.0..=110.0).contains(&fps), "10 ms bottleneck gave {fps:.2} FPS");
    let slow = bench_fps(76.9, 200);
    let fast = bench_fps(15.9, 200);
    let ratio = fast / slow;
    within("FPS ratio", ratio, 4.84, 4.84 * 0.15);
    format!("{fps:.1} FPS at 10 ms; {slow:.1} vs {fast:.1} FPS, ratio {ratio:.2}")
}

/// Size of a maximum matching under the threshold rule, by exhaustive search.
fn optimal_tp(gts: &[GroundTruthObject], preds: &[Prediction], thr: f64) -> u64 {
    fn go(i: usize, used: u32, edges: &[Vec<usize>]) -> u64 {
        if i == edges.len() {
            return 0;
        }
        let mut best = go(i + 1, used, edges);
        for &g in &edges[i] {
            if used & (1 << g) == 0 {
                best = best.max(1 + go(i + 1, used | (1 << g), edges));
            }
        }
        best
    }
    let edges: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| (0..gts.len()).filter(|&g| gts[g].label == p.label && iou(&p.bbox, &gts[g].bbox) > thr).collect())
        .collect();
    go(0, 0, &edges)
}

/// Greedy never beats the optimum, and equals it when ground truths are disjoint.
fn criterion_8() -> String {
    let labels = ["DWS-01", "DWS-02"];
    let mut rng = XorShift64Star::new(8);
    let mut disjoint_cases = 0;
    let mut gaps = Vec::new();
    for case in 0..1000 {
        let want_disjoint = case % 2 == 0;
        let mut gts: Vec<GroundTruthObject> = Vec::new();
        let n_gt = rng.below(7) as usize;
        let mut attempts = 0;
        while gts.len() < n_gt && attempts < 1000 {
            attempts += 1;
            let b = random_box(&mut rng, 64, 24);
            if want_disjoint && gts.iter().any(|g| g.bbox.intersects(&b)) {
                continue;
            }
            gts.push(GroundTruthObject { label: rng.pick(&labels).to_string(), bbox: b });
        }
        let n_pred = rng.below(7) as usize;
        let preds: Vec<Prediction> = (0..n_pred)
            .map(|_| {
                let bbox = if !gts.is_empty() && rng.chance(0.7) {
                    let src = rng.pick(&gts).bbox;
                    let c = src.corners().map(|v| (i64::from(v) + rng.range_i64(-4, 4)).clamp(0, 64) as i32);
                    BBox::new(c[0], c[1], c[2], c[3]).unwrap_or(src)
                } else {
                    random_box(&mut rng, 64, 24)
                };
                Prediction { image: "i".into(), label: rng.pick(&labels).to_string(), bbox, score: rng.next_f64() }
            })
            .collect();
        let greedy = match_image(&gts, &preds, 0.3, true).tally().tp;
        let best = optimal_tp(&gts, &preds, 0.3);
        assert!(greedy <= best, "case {case}: greedy {greedy} > optimal {best}");
        let disjoint = gts.iter().enumerate().all(|(i, a)| gts[i + 1..].iter().all(|b| !a.bbox.intersects(&b.bbox)));
        if disjoint {
            disjoint_cases += 1;
            if greedy != best {
                gaps.push(case);
            }
        }
    }
    assert!(gaps.is_empty(), "greedy below optimal on disjoint-GT cases {gaps:?}");
    format!("1000 instances, {disjoint_cases} with disjoint ground truth")
}

/// Serialisation round trips.
fn criterion_9() -> String {
    let t = Taxonomy::embedded();
    let mut rng = XorShift64Star::new(9);
    for i in 0..1000 {
        let spec = SceneSpec {
            filename: format!("img_{i:04}.ppm"),
            width: 200 + rng.below(1800) as u32,
            height: 200 + rng.below(900) as u32,
            content: SceneContent::Random { min: 0, max: 8 },
            disjoint: rng.chance(0.5),
            seed: rng.next_u64(),
        };
        let objects = scene_objects(&spec, t).unwrap();
        let ann = ImageAnnotation { filename: spec.filename, width: spec.width, height: spec.height, objects };
        assert_eq!(parse_annotation(&serialize_annotation(&ann), t).unwrap(), ann);
    }

    let frames: Vec<(String, Frame)> = (0..100)
        .map(|i| {
            let spec = SceneSpec {
                filename: format!("f{i:03}.ppm"),
                width: 96,
                height: 64,
                content: SceneContent::Random { min: 1, max: 3 },
                seed: i,
                ..SceneSpec::default()
            };
            let (frame, _) = generate_scene(&spec, t).unwrap();
            (spec.filename, frame)
        })
        .collect();
    let bag = write_frame_bag(Vec::new(), &frames).unwrap();
    assert_eq!(replay_frames(&read_bag(&bag).unwrap(), 0).unwrap(), frames);
    let payloads: Vec<Payload> = replay_topic(&read_bag(&bag).unwrap(), 0).collect();
    let mut g = build_graph(&GraphConfig::reference()).unwrap();
    let (_, recorded) =
        record_bag(&mut g, payloads.clone().into_iter(), 100, RunOptions::default(), &["input_frame", "output_frame"], Vec::new())
            .unwrap();
    let recs = read_bag(&recorded).unwrap();
    assert_eq!(replay_topic(&recs, 0).collect::<Vec<_>>(), payloads);
    assert_eq!(replay_topic(&recs, 3).collect::<Vec<_>>(), payloads);

    for _ in 0..100_000 {
        let width = 2 + rng.below(3999) as u32;
        let b = random_box(&mut rng, i64::from(width), i64::from(width).min(500));
        let back = horizontal_flip(&horizontal_flip(&b, width).unwrap(), width).unwrap();
        assert_eq!(back, b);
    }
    "1000 annotations, 100-frame bag, 1e5 flips".into()
}

/// Evaluating perturbed ground truth reproduces the analytically forced tally.
fn criterion_10() -> String {
    let t = Taxonomy::embedded();
    let mut rng = XorShift64Star::new(10);
    let mut instances = 0;
    for run in 0..1000u64 {
        let spec = SceneSpec {
            filename: format!("run_{run}.ppm"),
            width: 640,
            height: 360,
            content: SceneContent::Random { min: 0, max: 10 },
            disjoint: true,
            seed: derive_seed(10, &format!("scene{run}")),
        };
        let objects = scene_objects(&spec, t).unwrap();
        let ann = ImageAnnotation { filename: spec.filename, width: 640, height: 360, objects };
        let noise = NoiseSpec {
            p_drop: rng.next_f64() * 0.5,
            jitter: rng.below(6) as u32,
            n_fp: rng.below(4) as u32,
            fp_disjoint: true,
        };
        let (preds, expected) = perturb(&ann, &noise, run, t).unwrap();
        assert!(expected.exact);
        let report = evaluate_annotations(std::slice::from_ref(&ann), preds.into_iter().map(|p| (0, p)), &EvalConfig::default(), t);
        assert_eq!(report.overall_tally, expected.overall, "run {run}");
        for c in &report.classes {
            let want = expected.per_class.get(&c.label).copied().unwrap_or_default();
            assert_eq!(c.tally, want, "run {run} class {}", c.label);
        }
        instances += ann.objects.len();
    }
    format!("1000 runs over {instances} ground-truth objects")
}

type Criterion<'a> = (&'static str, Duration, Box<dyn Fn() -> String + 'a>);

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("metric closed form", Duration::from_secs(1), Box::new(criterion_1)),
        ("F1 harmonic mean", Duration::MAX, Box::new(criterion_2)),
        ("IoU raster equivalence", Duration::from_secs(10), Box::new(criterion_3)),
        ("strict threshold", Duration::MAX, Box::new(criterion_4)),
        ("oracle closure", Duration::from_secs(30), Box::new(|| criterion_5(dir.path()))),
        ("dataset statistics", Duration::MAX, Box::new(|| criterion_6(dir.path()))),
        ("throughput law", Duration::from_secs(60), Box::new(criterion_7)),
        ("greedy vs optimal", Duration::MAX, Box::new(criterion_8)),
        ("round trips", Duration::MAX, Box::new(criterion_9)),
        ("perturbation tallies", Duration::MAX, Box::new(criterion_10)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let line = match result {
            Ok(detail) if elapsed <= *budget => format!("PASS  {:>2}. {name}: {detail} ({:.2} s)", i + 1, elapsed.as_secs_f64()),
            Ok(detail) => format!(
                "FAIL  {:>2}. {name}: {detail}, but took {:.2} s (budget {:.0} s)",
                i + 1,
                elapsed.as_secs_f64(),
                budget.as_secs_f64()
            ),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                format!("FAIL  {:>2}. {name}: {msg}", i + 1)
            }
        };
        if line.starts_with("FAIL") {
            failed += 1;
        }
        println!("{line}");
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
