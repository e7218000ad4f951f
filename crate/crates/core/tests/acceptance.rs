//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! `cargo test -p pointsup-core --test acceptance`; pass criterion names as
//! arguments to run a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use pointsup_core::annosim::{
    generate_scene, quality_control, rate_report, simulate_point_annotator, simulate_point_tallied,
    simulate_squiggle_tallied, AnnotationEvent, AnnotatorProfile, Click, Planted, PointTask, QcStatus, SceneConfig,
    SimTally, TaskKind, MIN_CORRECT,
};
use pointsup_core::budget::{annotation_time, fixed_budget_plan, hybrid_time, reported_time, BudgetModel};
use pointsup_core::experiment::{build_dataset, run_regime, BenchmarkConfig, Dataset, Regime};
use pointsup_core::losses::{
    combined_loss, loss_img, loss_obj, loss_pix, loss_point, max_pixel, ImageLevelLabels, LossConfig, Point,
    WeightedPoints,
};
use pointsup_core::model::{active_units, encode_checkpoint, forward, forward_backward, FloatImage, ModelParams, ModelShape, ParamSet};
use pointsup_core::objectness::{prior_from_windows, ObjectnessMap, PriorOptions, ScoredWindow};
use pointsup_core::rng::derive_seed;
use pointsup_core::seg::{softmax, ClassCatalog, LabelMap, ScoreMap, IGNORE};
use pointsup_core::supervision::{derive_image_labels, SquigglePixel, SupervisionKind, SupervisionRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- budget

fn budget() -> Outcome {
    use SupervisionKind::*;
    let m = BudgetModel::default();
    let mut notes = Vec::new();
    for (kind, want) in [(ImageLevel, 20.0), (Points1, 22.1), (PointsAll, 23.3), (Squiggles, 34.9), (Full, 239.7)] {
        let got = reported_time(kind, false, &m).map_err(err)?;
        ensure(got == want, || format!("{kind}: {got} s, want {want}"))?;
        notes.push(format!("{kind}={got}"));
    }
    for (kind, exact) in [(PointsAll, 23.27), (Squiggles, 34.85)] {
        let got = annotation_time(kind, false, &m).map_err(err)?;
        ensure((got - exact).abs() < 1e-9, || format!("{kind}: exact {got}, want {exact}"))?;
    }
    let hybrid = hybrid_time(100, 10482, &m).map_err(err)?;
    ensure((hybrid * 10.0).round() / 10.0 == 24.5, || format!("hybrid {hybrid}"))?;
    notes.push(format!("hybrid={:.1}", hybrid));

    let budget = 10582.0 * reported_time(ImageLevel, true, &m).map_err(err)?;
    for (kind, obj, published) in
        [(Full, false, 883u64), (ImageLevel, true, 10582), (Squiggles, true, 6064), (Points1, true, 9576)]
    {
        let n = fixed_budget_plan(budget, kind, obj, &m).map_err(err)?;
        let rel = (n as f64 - published as f64).abs() / published as f64;
        ensure(rel <= 0.02, || format!("{kind}: {n} images vs published {published}"))?;
        notes.push(format!("{kind}{}:{n}/{published}", if obj { "+OBJ" } else { "" }));
    }
    Ok(notes.join(" "))
}

// ---------------------------------------------------------------- gradients

const CFG: LossConfig = LossConfig { eps: 1e-12 };
const LOSS_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const INSTANCES: usize = 100;

/// Relative error with a 1e-3 denominator floor.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn random_scores(r: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> ScoreMap {
    ScoreMap::new(w, h, n, (0..w * h * n).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap()
}

fn random_labels(r: &mut ChaCha8Rng, n: usize) -> ImageLevelLabels {
    let mut classes: Vec<u8> = (0..n as u8).collect();
    for i in (1..classes.len()).rev() {
        classes.swap(i, r.random_range(0..=i));
    }
    let n_present = r.random_range(1..=n.min(3));
    let n_absent = r.random_range(0..=n - n_present);
    ImageLevelLabels::new(classes[..n_present].to_vec(), classes[n_present..n_present + n_absent].to_vec()).unwrap()
}

fn random_points(r: &mut ChaCha8Rng, pixels: usize, labels: &ImageLevelLabels) -> WeightedPoints {
    let present: Vec<u8> = labels.present().iter().copied().collect();
    let k = r.random_range(0..=4);
    let mut pts: Vec<Point> = Vec::new();
    for _ in 0..k {
        let (pixel, class) = (r.random_range(0..pixels), present[r.random_range(0..present.len())]);
        if !pts.iter().any(|p| (p.pixel, p.class) == (pixel, class)) {
            pts.push(Point { pixel, class, weight: r.random_range(0.1..1.0), rank: None, annotator: String::new() });
        }
    }
    WeightedPoints::new(pts).unwrap()
}

/// Argmax pixel of every class, the discrete choice inside the image-level term.
fn selections(scores: &ScoreMap) -> Vec<usize> {
    let p = softmax(scores);
    (0..scores.num_classes()).map(|c| max_pixel(&p, c)).collect()
}

/// Worst relative error of `loss` against central differences over the
/// score coordinates. Coordinates whose perturbation changes an argmax
/// selection are skipped.
fn score_check(scores: &ScoreMap, loss: impl Fn(&ScoreMap) -> (f64, Vec<f64>), selective: bool) -> (f64, usize) {
    const H: f64 = 1e-5;
    let (_, grad) = loss(scores);
    let base = selections(scores);
    let (mut worst, mut skipped) = (0.0f64, 0);
    for (k, &g) in grad.iter().enumerate() {
        let (pixel, class) = (k / scores.num_classes(), k % scores.num_classes());
        let plus = scores.perturbed(pixel, class, H);
        let minus = scores.perturbed(pixel, class, -H);
        if selective && (selections(&plus) != base || selections(&minus) != base) {
            skipped += 1;
            continue;
        }
        let numeric = (loss(&plus).0 - loss(&minus).0) / (2.0 * H);
        worst = worst.max(rel(g, numeric));
    }
    (worst, skipped)
}

fn loss_gradients() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 4];
    let mut skipped = 0;
    for _ in 0..INSTANCES {
        let (w, h, n) = (r.random_range(1..=5), r.random_range(1..=4), r.random_range(2..=6));
        let scores = random_scores(&mut r, w, h, n);

        let gt = LabelMap::new(
            w,
            h,
            (0..w * h).map(|_| if r.random_bool(0.15) { IGNORE } else { r.random_range(0..n as u8) }).collect(),
        )
        .unwrap();
        let (e, _) = score_check(&scores, |s| split(loss_pix(s, &gt, &CFG).unwrap()), false);
        worst[0] = worst[0].max(e);

        let labels = random_labels(&mut r, n);
        let (e, s) = score_check(&scores, |s| split(loss_img(s, &labels, &CFG).unwrap()), true);
        worst[1] = worst[1].max(e);
        skipped += s;

        let points = random_points(&mut r, w * h, &labels);
        let (e, s) = score_check(&scores, |s| split(loss_point(s, &points, &labels, &CFG).unwrap()), true);
        worst[2] = worst[2].max(e);
        skipped += s;

        let catalog = ClassCatalog::with_background(n - 1).unwrap();
        let prior = ObjectnessMap::new(w, h, (0..w * h).map(|_| r.random_range(0.0..=1.0)).collect()).unwrap();
        let (e, _) = score_check(&scores, |s| split(loss_obj(s, &prior, &catalog, &CFG).unwrap()), false);
        worst[3] = worst[3].max(e);
    }
    let names = ["pix", "img", "point", "obj"];
    for (name, e) in names.iter().zip(worst) {
        ensure(e <= LOSS_TOL, || format!("loss_{name}: max rel error {e:.2e}"))?;
    }
    Ok(format!(
        "{INSTANCES} instances per loss, max rel pix {:.1e} img {:.1e} point {:.1e} obj {:.1e}, {skipped} argmax-flip coords skipped",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn split(v: pointsup_core::losses::LossValue) -> (f64, Vec<f64>) {
    (v.value, v.grad)
}

/// Background plus one or two rectangles of object classes.
fn random_mask(r: &mut ChaCha8Rng, w: usize, h: usize, objects: u8) -> LabelMap {
    let mut m = LabelMap::filled(w, h, 0);
    for _ in 0..r.random_range(1..=2) {
        let class = r.random_range(1..=objects);
        let (x0, y0) = (r.random_range(0..w - 2), r.random_range(0..h - 2));
        let (x1, y1) = (r.random_range(x0 + 1..w), r.random_range(y0 + 1..h));
        for y in y0..=y1 {
            for x in x0..=x1 {
                m.set(x, y, class);
            }
        }
    }
    m
}

fn mask_points(r: &mut ChaCha8Rng, mask: &LabelMap, labels: &ImageLevelLabels, per_class: usize) -> WeightedPoints {
    let mut pts = Vec::new();
    for &c in labels.present() {
        let pixels: Vec<usize> = (0..mask.num_pixels()).filter(|&i| mask.labels()[i] == c).collect();
        for _ in 0..per_class {
            let pixel = pixels[r.random_range(0..pixels.len())];
            if !pts.iter().any(|p: &Point| p.pixel == pixel) {
                let weight = 1.0 / (labels.present().len() * per_class) as f64;
                pts.push(Point { pixel, class: c, weight, rank: None, annotator: String::new() });
            }
        }
    }
    WeightedPoints::new(pts).unwrap()
}

fn record_for(kind: &str, r: &mut ChaCha8Rng, mask: &LabelMap, catalog: &ClassCatalog) -> SupervisionRecord {
    let labels = derive_image_labels(mask, catalog).unwrap();
    match kind {
        "FULL" => SupervisionRecord::full("x", mask.clone(), catalog).unwrap(),
        "IMAGE_LEVEL" | "IMAGE_LEVEL+OBJ" => SupervisionRecord::image_level("x", labels),
        "POINTS_1" | "POINTS_1+OBJ" => {
            let p = mask_points(r, mask, &labels, 1);
            SupervisionRecord::points("x", SupervisionKind::Points1, labels, p)
        }
        "POINTS_ALL" => {
            let p = mask_points(r, mask, &labels, 3);
            SupervisionRecord::points("x", SupervisionKind::PointsAll, labels, p)
        }
        "SQUIGGLES" => {
            let p = mask_points(r, mask, &labels, 4);
            let pixels = p.points().iter().map(|p| SquigglePixel { pixel: p.pixel, class: p.class }).collect();
            SupervisionRecord::squiggles("x", labels, pixels)
        }
        "HYBRID_MASK" => {
            let mut rec = SupervisionRecord::full("x", mask.clone(), catalog).unwrap();
            rec.kind = SupervisionKind::HybridMember;
            rec
        }
        "HYBRID_POINTS" => {
            let p = mask_points(r, mask, &labels, 1);
            SupervisionRecord::points("x", SupervisionKind::HybridMember, labels, p)
        }
        _ => unreachable!("{kind}"),
    }
}

/// Parameter gradients through the network and the combined loss.
/// Perturbations that flip a ReLU gate or an argmax selection are skipped.
fn model_gradients() -> Outcome {
    const H: f64 = 1e-5;
    const KINDS: [&str; 9] = [
        "FULL",
        "IMAGE_LEVEL",
        "IMAGE_LEVEL+OBJ",
        "POINTS_1",
        "POINTS_1+OBJ",
        "POINTS_ALL",
        "SQUIGGLES",
        "HYBRID_MASK",
        "HYBRID_POINTS",
    ];
    let mut r = ChaCha8Rng::seed_from_u64(202);
    let catalog = ClassCatalog::with_background(3).unwrap();
    let mut summary = Vec::new();
    for kind in KINDS {
        let mut worst = 0.0f64;
        let mut skipped = 0;
        for _ in 0..INSTANCES {
            let (w, h) = (r.random_range(6..=9), r.random_range(6..=9));
            let stride = [1, 2, 3][r.random_range(0..3)];
            let shape = ModelShape { features: 2, kernel: 3, num_classes: 4, stride };
            let mut values = ParamSet::zeros(&shape);
            for (t, _) in values.tensors_mut() {
                t.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
            }
            let params = ModelParams { shape, values };
            let image = FloatImage::new(w, h, (0..3 * w * h).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
            let mask = random_mask(&mut r, w, h, 3);
            let record = record_for(kind, &mut r, &mask, &catalog);
            let prior = kind.ends_with("+OBJ").then(|| {
                ObjectnessMap::new(w, h, (0..w * h).map(|_| r.random_range(0.0..=1.0)).collect()).unwrap()
            });
            let lambda = if prior.is_some() { 1.0 } else { 0.0 };
            let loss = |s: &ScoreMap| combined_loss(s, &record, prior.as_ref(), lambda, &catalog, &CFG).unwrap();

            let (_, grads) = forward_backward(&params, &image, |s| Ok(split(loss(s)))).map_err(err)?;
            let analytic = grads.flatten();
            let x = params.values.flatten();
            let at = |x: &[f64]| {
                let p = ModelParams { shape, values: params.values.unflatten_like(x) };
                forward(&p, &image).unwrap()
            };
            let gates = |x: &[f64]| {
                let p = ModelParams { shape, values: params.values.unflatten_like(x) };
                active_units(&p, &image).unwrap()
            };
            let (base, base_gates) = (selections(&at(&x)), gates(&x));
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp[k] += H;
                let (plus, plus_gates) = (at(&xp), gates(&xp));
                xp[k] = x[k] - H;
                let (minus, minus_gates) = (at(&xp), gates(&xp));
                let kink = plus_gates != base_gates || minus_gates != base_gates;
                if kink || selections(&plus) != base || selections(&minus) != base {
                    skipped += 1;
                    continue;
                }
                let numeric = (loss(&plus).value - loss(&minus).value) / (2.0 * H);
                worst = worst.max(rel(analytic[k], numeric));
            }
        }
        ensure(worst <= MODEL_TOL, || format!("{kind}: max rel error {worst:.2e}"))?;
        summary.push(format!("{kind} {worst:.1e}"));
        if skipped > 0 {
            summary.push(format!("({skipped} skipped)"));
        }
    }
    Ok(format!("{INSTANCES} instances per kind, max rel: {}", summary.join(" ")))
}

fn gradients() -> Outcome {
    let a = loss_gradients()?;
    let b = model_gradients()?;
    Ok(format!("{a}; end-to-end {b}"))
}

// ---------------------------------------------------------------- prior

/// Scores on a 2^-20 grid, so the naive mean below is computed without rounding.
fn dyadic(r: &mut ChaCha8Rng) -> f64 {
    r.random_range(0..=1u32 << 20) as f64 / (1u32 << 20) as f64
}

fn random_windows(r: &mut ChaCha8Rng, w: usize, h: usize, score: impl Fn(&mut ChaCha8Rng) -> f64) -> Vec<ScoredWindow> {
    (0..r.random_range(0..=64))
        .map(|_| {
            let (a, b) = (r.random_range(0..w), r.random_range(0..w));
            let (c, d) = (r.random_range(0..h), r.random_range(0..h));
            let s = score(r);
            ScoredWindow::new(a.min(b) as u32, c.min(d) as u32, a.max(b) as u32, c.max(d) as u32, s)
        })
        .collect()
}

/// Enumerates the windows covering each pixel and averages their scores.
fn naive_prior(windows: &[ScoredWindow], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut n) = (0.0, 0usize);
            for win in windows {
                let [x0, y0, x1, y1] = win.bbox;
                if (x0 as usize..=x1 as usize).contains(&x) && (y0 as usize..=y1 as usize).contains(&y) {
                    sum += win.score;
                    n += 1;
                }
            }
            out.push(if n == 0 { 0.0 } else { sum / n as f64 });
        }
    }
    out
}

fn prior_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(303);
    let mut covered = 0usize;
    for case in 0..200 {
        let (w, h) = (r.random_range(1..=32), r.random_range(1..=32));
        let wins = random_windows(&mut r, w, h, dyadic);
        let got = prior_from_windows(&wins, w, h, &PriorOptions::default()).map_err(err)?;
        let want = naive_prior(&wins, w, h);
        if let Some(i) = (0..w * h).find(|&i| got.values()[i].to_bits() != want[i].to_bits()) {
            return Err(format!("case {case} ({w}x{h}, {} windows) pixel {i}: {} vs {}", wins.len(), got.values()[i], want[i]));
        }
        covered += want.iter().filter(|&&v| v > 0.0).count();
    }
    // Arbitrary scores: the naive float mean carries its own rounding.
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (w, h) = (r.random_range(1..=32), r.random_range(1..=32));
        let wins = random_windows(&mut r, w, h, |r| r.random_range(0.0..=1.0));
        let got = prior_from_windows(&wins, w, h, &PriorOptions::default()).map_err(err)?;
        for (a, b) in got.values().iter().zip(naive_prior(&wins, w, h)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-15, || format!("arbitrary scores differ by {worst:e}"))?;
    Ok(format!("200 cases bitwise equal ({covered} covered pixels); 200 float-score cases within {worst:.0e}"))
}

// ---------------------------------------------------------------- regimes

const SEEDS: u64 = 3;

fn regime_means() -> Result<Vec<(Regime, f64)>, String> {
    let cfg = BenchmarkConfig::default();
    let mut sums = vec![0.0; Regime::LADDER.len()];
    for seed in 0..SEEDS {
        let data = build_dataset(&cfg, seed).map_err(err)?;
        for (k, regime) in Regime::LADDER.into_iter().enumerate() {
            let res = run_regime(&cfg, &data, regime, seed).map_err(err)?;
            sums[k] += 100.0 * res.report.mean_iou / SEEDS as f64;
        }
    }
    Ok(Regime::LADDER.into_iter().zip(sums).collect())
}

fn regimes_cached() -> Result<&'static [(Regime, f64)], String> {
    static CACHE: std::sync::OnceLock<Result<Vec<(Regime, f64)>, String>> = std::sync::OnceLock::new();
    CACHE.get_or_init(regime_means).as_deref().map_err(Clone::clone)
}

fn mean_of(means: &[(Regime, f64)], r: Regime) -> f64 {
    means.iter().find(|(x, _)| *x == r).map(|(_, m)| *m).unwrap()
}

fn regime_ordering() -> Outcome {
    let means = regimes_cached()?;
    let text: Vec<String> = means.iter().map(|(r, m)| format!("{r} {m:.1}")).collect();
    for pair in means.windows(2) {
        let ((hi, a), (lo, b)) = (pair[0], pair[1]);
        ensure(a - b > 1.0, || format!("{hi} {a:.1} vs {lo} {b:.1}: gap {:.2} <= 1; {}", a - b, text.join(", ")))?;
    }
    Ok(format!("{SEEDS}-seed mean mIOU: {}", text.join(" > ")))
}

fn synergy() -> Outcome {
    let means = regimes_cached()?;
    let m = |r| mean_of(means, r);
    let obj_gain = m(Regime::POINTS_1_OBJ) - m(Regime::POINTS_1);
    let point_gain = m(Regime::POINTS_1_OBJ) - m(Regime::IMAGE_LEVEL_OBJ);
    ensure(obj_gain > 0.0 && point_gain > 0.0, || format!("obj gain {obj_gain:.2}, point gain {point_gain:.2}"))?;
    Ok(format!("objectness on points +{obj_gain:.1}, points on image-level+obj +{point_gain:.1}"))
}

// ---------------------------------------------------------------- annotator rates

fn sim_rates() -> Outcome {
    const N: u64 = 10_000;
    let scene_cfg = SceneConfig { seed: 404, ..SceneConfig::default() };
    let catalog = scene_cfg.catalog().map_err(err)?;
    let profile = AnnotatorProfile::default();
    let mut tallies = [SimTally::default(); 3];
    for i in 0..N {
        let s = generate_scene(&scene_cfg, i).map_err(err)?;
        let seed = derive_seed(404, "annotator", i);
        let (_, t) =
            simulate_point_tallied(&s.id, &s.mask, &catalog, &profile, PointTask::OnePerClass, "a", seed).map_err(err)?;
        tallies[0].merge(&t);
        let (_, t) = simulate_point_tallied(&s.id, &s.mask, &catalog, &profile, PointTask::AllInstances, "a", seed)
            .map_err(err)?;
        tallies[1].merge(&t);
        let (_, t) = simulate_squiggle_tallied(&s.id, &s.mask, &catalog, &profile, "a", seed).map_err(err)?;
        tallies[2].merge(&t);
    }
    let kinds = [TaskKind::Point, TaskKind::AllPoints, TaskKind::Squiggle];
    let rows = rate_report(&profile, kinds.iter().copied().zip(&tallies));
    let mut notes = Vec::new();
    for (name, target, tol) in [
        ("point_wrong_class", 7.2, 1.0),
        ("point_difficult", 0.8, 0.5),
        ("allpoints_miss", 7.9, 1.0),
        ("squiggle_wrong", 6.3, 1.0),
    ] {
        let row = rows.iter().find(|r| r.name == name).unwrap();
        let pct = 100.0 * row.rate;
        ensure((pct - target).abs() <= tol, || format!("{name} {pct:.2}% vs {target}% +- {tol}"))?;
        notes.push(format!("{name} {pct:.2}% (n={})", row.trials));
    }
    Ok(format!("{N} images: {}", notes.join(", ")))
}

// ---------------------------------------------------------------- QC

fn click_event(id: &str, task: TaskKind, clicks: &[(u32, u32, u8)]) -> AnnotationEvent {
    AnnotationEvent {
        image_id: id.into(),
        task,
        annotator: "a".into(),
        clicks: clicks
            .iter()
            .enumerate()
            .map(|(k, &(x, y, class))| Click { x, y, class, t_ms: 1000 * (k as u64 + 1) })
            .collect(),
        strokes: vec![],
        class_absent: vec![],
    }
}

fn qc_boxes() -> Result<(), String> {
    // An L of class 1 with tight box [2,2]-[5,6]; (5,2) is background inside it.
    let mut mask = LabelMap::filled(10, 10, 0);
    for y in 2..=6 {
        mask.set(2, y, 1);
    }
    for x in 2..=5 {
        mask.set(x, 6, 1);
    }
    mask.set(9, 9, 2);
    let p = Planted::from_mask("p", &mask, &ClassCatalog::with_background(2).unwrap());
    let graded = |x, y, class| p.is_correct(&click_event("p", TaskKind::Point, &[(x, y, class), (9, 9, 2)]));
    for (x, y) in [(2, 2), (5, 2), (2, 6), (5, 6), (3, 4), (5, 4), (3, 2)] {
        ensure(graded(x, y, 1), || format!("({x},{y}) is inside the box"))?;
    }
    for (x, y) in [(1, 4), (6, 4), (3, 1), (3, 7), (1, 1), (6, 7)] {
        ensure(!graded(x, y, 1), || format!("({x},{y}) is outside the box"))?;
    }
    ensure(!graded(2, 2, 2), || "wrong class in the right box".into())?;
    ensure(!p.is_correct(&click_event("p", TaskKind::Point, &[(2, 2, 1)])), || "unclicked present class".into())?;
    Ok(())
}

fn qc() -> Outcome {
    qc_boxes()?;
    let scene_cfg = SceneConfig { seed: 505, ..SceneConfig::default() };
    let catalog = scene_cfg.catalog().map_err(err)?;
    let profile = AnnotatorProfile::perfect();
    let mut planted = Vec::new();
    let mut events = Vec::new();
    for i in 0..10 {
        let s = generate_scene(&scene_cfg, i).map_err(err)?;
        planted.push(Planted::from_mask(&s.id, &s.mask, &catalog));
        let task = if i % 2 == 0 { PointTask::OnePerClass } else { PointTask::AllInstances };
        events.push(simulate_point_annotator(&s.id, &s.mask, &catalog, &profile, task, "a", i).map_err(err)?);
    }
    let mut statuses = Vec::new();
    for n_correct in 0..=10usize {
        let mut batch = events.clone();
        for (k, e) in batch.iter_mut().enumerate().skip(n_correct) {
            // Alternate between dropping every click and moving one off-object.
            if k % 2 == 0 {
                e.clicks.clear();
            } else {
                let p = &planted[k];
                let c = &mut e.clicks[0];
                let inside = |x: usize, y: usize| p.instances.iter().any(|i| i.class == c.class && i.box_contains(x, y));
                let spot = (0..32 * 32).map(|i| (i % 32, i / 32)).find(|&(x, y)| !inside(x, y));
                let (x, y) = spot.ok_or("no pixel outside the boxes")?;
                (c.x, c.y) = (x as u32, y as u32);
            }
        }
        let rep = quality_control(&batch, &planted, MIN_CORRECT).map_err(err)?;
        ensure(rep.correct == n_correct, || format!("graded {} correct, built {n_correct}", rep.correct))?;
        let want = if n_correct >= 8 { QcStatus::Pass } else { QcStatus::Fail };
        ensure(rep.status == want, || format!("{n_correct} correct gave {:?}", rep.status))?;
        statuses.push(if rep.status == QcStatus::Pass { 'P' } else { 'F' });
    }
    Ok(format!(
        "0..=10 correct -> {}; tight-box edges, corners and interior background verified",
        statuses.iter().collect::<String>()
    ))
}

// ---------------------------------------------------------------- determinism

fn small_config() -> BenchmarkConfig {
    let mut cfg = BenchmarkConfig { n_train: 30, n_test: 8, ..BenchmarkConfig::default() };
    cfg.train.iterations = 25;
    cfg
}

fn dataset_bytes(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for s in d.train.iter().chain(&d.test) {
        out.extend(s.id.as_bytes());
        out.extend(s.image.data());
        out.extend(s.mask.labels());
    }
    for e in d.point_events.iter().chain(&d.all_point_events).chain(&d.squiggle_events) {
        out.extend(serde_json::to_vec(e).unwrap());
    }
    for w in d.windows.iter().flatten() {
        out.extend(w.bbox.iter().flat_map(|v| v.to_le_bytes()));
        out.extend(w.score.to_bits().to_le_bytes());
    }
    for p in &d.priors {
        out.extend(p.values().iter().flat_map(|v| v.to_bits().to_le_bytes()));
    }
    out
}

fn simulation_bytes(seed: u64) -> Result<Vec<u8>, String> {
    let scene_cfg = SceneConfig { seed, ..SceneConfig::default() };
    let catalog = scene_cfg.catalog().map_err(err)?;
    let profile = AnnotatorProfile::default();
    let mut out = Vec::new();
    for i in 0..200 {
        let s = generate_scene(&scene_cfg, i).map_err(err)?;
        let (e, t) = simulate_point_tallied(&s.id, &s.mask, &catalog, &profile, PointTask::AllInstances, "a", seed)
            .map_err(err)?;
        out.extend(serde_json::to_vec(&(e, t)).unwrap());
        let (e, t) = simulate_squiggle_tallied(&s.id, &s.mask, &catalog, &profile, "a", seed).map_err(err)?;
        out.extend(serde_json::to_vec(&(e, t)).unwrap());
    }
    Ok(out)
}

fn train_bytes(cfg: &BenchmarkConfig, data: &Dataset, regime: Regime) -> Result<Vec<u8>, String> {
    let res = run_regime(cfg, data, regime, 7).map_err(err)?;
    let mut out = encode_checkpoint(res.params.as_ref().unwrap());
    out.extend(res.loss_history.iter().flat_map(|v| v.to_bits().to_le_bytes()));
    out.extend(serde_json::to_vec(&res.report).unwrap());
    Ok(out)
}

fn determinism() -> Outcome {
    let cfg = small_config();
    let a = build_dataset(&cfg, 7).map_err(err)?;
    let b = build_dataset(&cfg, 7).map_err(err)?;
    ensure(dataset_bytes(&a) == dataset_bytes(&b), || "datagen differs between runs".into())?;
    let c = build_dataset(&cfg, 8).map_err(err)?;
    ensure(dataset_bytes(&a) != dataset_bytes(&c), || "datagen ignores the seed".into())?;

    ensure(simulation_bytes(9)? == simulation_bytes(9)?, || "simulation differs between runs".into())?;
    ensure(simulation_bytes(9)? != simulation_bytes(10)?, || "simulation ignores the seed".into())?;

    for regime in [Regime::POINTS_1_OBJ, Regime::HYBRID, Regime::IMAGE_LEVEL] {
        ensure(train_bytes(&cfg, &a, regime)? == train_bytes(&cfg, &b, regime)?, || {
            format!("{regime} training differs between runs")
        })?;
    }
    Ok("datagen, simulation and training (checkpoint, loss history, metrics) bitwise identical across runs".into())
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "budget-arithmetic", limit: Duration::from_secs(1), run: budget },
        Criterion { name: "gradient-suite", limit: Duration::from_secs(60), run: gradients },
        Criterion { name: "prior-oracle", limit: Duration::from_secs(10), run: prior_oracle },
        Criterion { name: "regime-ordering", limit: Duration::from_secs(15 * 60), run: regime_ordering },
        Criterion { name: "objectness-synergy", limit: Duration::from_secs(15 * 60), run: synergy },
        Criterion { name: "annotator-rates", limit: Duration::from_secs(30), run: sim_rates },
        Criterion { name: "qc-rule", limit: Duration::from_secs(10), run: qc },
        Criterion { name: "determinism", limit: Duration::from_secs(5 * 60), run: determinism },
    ];
    // libtest flags such as --nocapture may be forwarded; only bare names filter.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        let t = Instant::now();
        let outcome = (c.run)();
        let dt = t.elapsed();
        let outcome = outcome.and_then(|msg| {
            if dt <= c.limit {
                Ok(msg)
            } else {
                Err(format!("took {:.1}s, limit {}s ({msg})", dt.as_secs_f64(), c.limit.as_secs()))
            }
        });
        match outcome {
            Ok(msg) => println!("PASS {} [{:.1}s] {msg}", c.name, dt.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} [{:.1}s] {msg}", c.name, dt.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
