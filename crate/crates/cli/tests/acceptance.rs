//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use heintze_core::linalg::mat_exp;
use heintze_core::maps::{conformal_probe, empirical_bilip, PiecewiseLinear, QSMapSpec};
use heintze_core::metric::{fiber_restriction_check, point_to_fiber, BoundarySpace, FiberStructure};
use heintze_core::sampling;
use heintze_core::spectral::classify;
use heintze_core::variation::{fit_exponents, BoxSpec, TestFunction, DEFAULT_MAX_CELLS};
use heintze_core::Matrix;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn space(a: Matrix) -> BoundarySpace {
    BoundarySpace::new(a).expect("valid generator")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = sampling::seeded(101);
    let mut worst: f64 = 0.0;
    for (lambda, n) in [(1.0, 1), (1.0, 2), (1.0, 3), (1.0, 4), (0.5, 2), (2.0, 3), (3.7, 4)] {
        let s = space(Matrix::identity(n).scale(lambda));
        for _ in 0..1000 {
            let (x, y) = sampling::multiscale_pair(&mut rng, n, 3.0);
            let want = euclid(&x, &y).powf(1.0 / lambda);
            let got = s.dist(&x, &y).map_err(|e| e.to_string())?;
            let err = rel_err(got, want);
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("A = {lambda} I_{n}: {got} vs {want}"))?;
        }
    }
    Ok(format!("7000 pairs, worst relative error {worst:.2e}"))
}

fn invariance_suite() -> Outcome {
    let mats = [
        ("J_2", Matrix::jordan_block(1.0, 2)),
        ("J_3", Matrix::jordan_block(1.0, 3)),
        ("diag(1,2)", Matrix::diag(&[1.0, 2.0]).unwrap()),
        ("[[2,-1],[1,2]]", Matrix::from_rows(&[vec![2.0, -1.0], vec![1.0, 2.0]]).unwrap()),
    ];
    let mut rng = sampling::seeded(202);
    let (mut worst_tr, mut worst_dil): (f64, f64) = (0.0, 0.0);
    for (name, a) in mats {
        let s = space(a.clone());
        let n = s.dim();
        for _ in 0..1000 {
            let x = sampling::uniform_box(&mut rng, n, 2.0);
            let y = sampling::uniform_box(&mut rng, n, 2.0);
            let z = sampling::uniform_box(&mut rng, n, 10.0);
            let t: f64 = rng.random_range(-3.0..3.0);
            let d = s.dist(&x, &y).map_err(|e| e.to_string())?;

            let shift = |p: &[f64]| p.iter().zip(&z).map(|(a, b)| a + b).collect::<Vec<_>>();
            let moved = s.dist(&shift(&x), &shift(&y)).map_err(|e| e.to_string())?;
            let err = rel_err(moved, d);
            worst_tr = worst_tr.max(err);
            ensure(err <= 1e-8, || format!("{name} translation: {moved} vs {d}"))?;

            let e = mat_exp(&a, t).map_err(|e| e.to_string())?;
            let scaled = s.dist(&e.apply(&x), &e.apply(&y)).map_err(|e| e.to_string())?;
            let err = rel_err(scaled, t.exp() * d);
            worst_dil = worst_dil.max(err);
            ensure(err <= 1e-8, || format!("{name} dilation t={t}: {scaled} vs {}", t.exp() * d))?;
        }
    }
    Ok(format!(
        "4000 instances, worst translation {worst_tr:.2e}, dilation {worst_dil:.2e}"
    ))
}

fn fiber_formulas() -> Outcome {
    let mut rng = sampling::seeded(303);
    let mut worst: f64 = 0.0;
    let fibered = [
        Matrix::jordan_block(1.0, 2),
        Matrix::jordan_block(1.0, 3),
        Matrix::jordan_block(2.0, 3),
        Matrix::block_diag(&[Matrix::jordan_block(1.5, 2), Matrix::jordan_block(1.5, 1)]),
    ];
    for a in &fibered {
        let s = space(a.clone());
        let fs = FiberStructure::from_matrix(a).map_err(|e| e.to_string())?;
        for _ in 0..250 {
            let p = sampling::uniform_box(&mut rng, s.dim(), 2.0);
            let off = sampling::uniform_box(&mut rng, fs.fiber_dim(), 2.0);
            let xf: Vec<f64> = fs.fiber_coords(&p).iter().zip(&off).map(|(a, b)| a + b).collect();
            let q = fs.assemble(&fs.project(&p), &xf);
            let (full, reduced) = fiber_restriction_check(&s, &p, &q).map_err(|e| e.to_string())?;
            let err = (full - reduced).abs() / full.max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-8, || format!("restriction {a:?}: {full} vs {reduced}"))?;
        }
    }

    let mut ratios = Vec::new();
    let cases: [(Matrix, Vec<f64>, f64); 4] = [
        (Matrix::jordan_block(1.0, 2), vec![0.0, 0.0], 1.0),
        (Matrix::jordan_block(1.0, 2), vec![0.7, -0.3], 2.2),
        (Matrix::jordan_block(2.0, 2), vec![0.3, 0.4], -0.5),
        (Matrix::jordan_block(1.0, 3), vec![0.2, -0.1, 0.5], 1.3),
    ];
    for (seed, (a, p, y2)) in cases.into_iter().enumerate() {
        let s = space(a.clone());
        let fs = FiberStructure::from_matrix(&a).map_err(|e| e.to_string())?;
        let closed = fs.fiber_hausdorff(&fs.project(&p), &[y2]);
        let sampled =
            point_to_fiber(&s, &p, &[y2], 10_000, seed as u64, 3.0 * closed.max(1.0)).map_err(|e| e.to_string())?;
        let ratio = sampled / closed;
        ratios.push(ratio);
        ensure((1.0 - 1e-9..=1.05).contains(&ratio), || {
            format!("Hausdorff n={} y2={y2}: sampled {sampled} vs closed {closed}", a.dim())
        })?;
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "1000 fiber pairs, worst {worst:.2e}; sampled/closed Hausdorff ratios <= {max_ratio:.4}"
    ))
}

fn random_form<R: Rng>(rng: &mut R) -> Matrix {
    let mut blocks = Vec::new();
    let mut dim = 0;
    let target = rng.random_range(1..=5);
    while dim < target {
        let lambda = 0.5 * rng.random_range(1..=6) as f64;
        if target - dim >= 2 && rng.random_bool(0.25) {
            let b = 0.5 * rng.random_range(1..=4) as f64;
            blocks.push(Matrix::from_rows(&[vec![lambda, -b], vec![b, lambda]]).unwrap());
            dim += 2;
        } else {
            let size = rng.random_range(1..=(target - dim).min(3));
            blocks.push(Matrix::jordan_block(lambda, size));
            dim += size;
        }
    }
    Matrix::block_diag(&blocks)
}

/// Random conjugator with condition number at most 1e3.
fn conjugator<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    loop {
        let entries = (0..n * n)
            .map(|k| rng.random_range(-1.0..1.0) + if k % (n + 1) == 0 { 1.5 } else { 0.0 })
            .collect();
        let p = Matrix::new(n, entries).unwrap();
        if let Ok(inv) = p.inverse() {
            if p.op_norm() * inv.op_norm() <= 1e3 {
                return p;
            }
        }
    }
}

fn classification() -> Outcome {
    let tol = heintze_core::spectral::DEFAULT_CLUSTER_TOL;
    let d = |v: &[f64]| Matrix::diag(v).unwrap();
    let j2 = Matrix::jordan_block(1.0, 2);
    let p = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.5, 1.0]]).unwrap();
    let pj2 = p.mul(&j2).mul(&p.inverse().unwrap());
    let rot = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap();
    let pairs: [(&str, Matrix, Matrix, Option<f64>); 6] = [
        ("diag(1,2) ~ diag(2,4)", d(&[1.0, 2.0]), d(&[2.0, 4.0]), Some(0.5)),
        ("diag(1,2) !~ diag(1,3)", d(&[1.0, 2.0]), d(&[1.0, 3.0]), None),
        ("J_2 ~ P J_2 P^-1", j2.clone(), pj2, Some(1.0)),
        ("J_2 !~ diag(1,1)", j2, d(&[1.0, 1.0]), None),
        ("[[1,-1],[1,1]] ~ I_2", rot, Matrix::identity(2), Some(1.0)),
        ("J_3(1) ~ J_3(2)", Matrix::jordan_block(1.0, 3), Matrix::jordan_block(2.0, 3), Some(0.5)),
    ];
    for (name, a, b, want) in &pairs {
        let r = classify(a, b, tol).map_err(|e| format!("{name}: {e}"))?;
        match want {
            Some(s) => ensure(r.equivalent && (r.scale.unwrap() - s).abs() <= 1e-9, || {
                format!("{name}: got {:?} scale {:?}", r.equivalent, r.scale)
            })?,
            None => ensure(!r.equivalent, || format!("{name}: reported equivalent"))?,
        }
    }

    let mut rng = sampling::seeded(404);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let a = random_form(&mut rng);
        let p = conjugator(&mut rng, a.dim());
        let b = p.mul(&a).mul(&p.inverse().unwrap());
        let r = classify(&a, &b, tol).map_err(|e| format!("conjugation {k}: {e}"))?;
        ensure(r.equivalent, || format!("conjugation {k}: not equivalent, {:?} vs {:?}", r.form_a, r.form_b))?;
        let err = (r.scale.unwrap() - 1.0).abs();
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("conjugation {k}: scale {:?}", r.scale))?;
    }
    Ok(format!("6 hand-built pairs; 50 conjugations, worst |scale - 1| = {worst:.2e}"))
}

fn q_variation() -> Outcome {
    let a = Matrix::diag(&[1.0, 2.0]).unwrap();
    let bx = BoxSpec::new(vec![0.0, 0.0], vec![1.0, 0.02]).unwrap();
    let qs = [1.0, 1.5, 2.0];
    let report = fit_exponents(&a, &TestFunction::Coordinate(1), &bx, &[-6.0, -5.0, -4.0], &qs, DEFAULT_MAX_CELLS)
        .map_err(|e| e.to_string())?;
    let mut slopes = Vec::new();
    for (fit, want) in report.fits.iter().zip([-1.0, 0.0, 1.0]) {
        ensure((fit.predicted - want).abs() < 1e-12, || format!("predicted {} for Q={}", fit.predicted, fit.q))?;
        // Relative band for nonzero predictions, absolute band at zero.
        let band = 0.1 * want.abs().max(1.0);
        ensure((fit.slope - want).abs() <= band, || format!("Q={}: slope {} vs {want}", fit.q, fit.slope))?;
        slopes.push(format!("{:.4}", fit.slope));
    }

    let j2 = Matrix::jordan_block(1.0, 2);
    let unit = BoxSpec::unit(2);
    let grid = [-6.0, -5.0, -4.0];
    let report = fit_exponents(&j2, &TestFunction::Coordinate(1), &unit, &grid, &[2.0], DEFAULT_MAX_CELLS)
        .map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for row in &report.rows {
        let ratio = row.v / unit.volume();
        ratios.push(format!("{ratio:.3}"));
        ensure((0.25..=4.0).contains(&ratio), || format!("J_2 t={}: V/Vol = {ratio}", row.t))?;
    }
    Ok(format!(
        "diag(1,2) slopes [{}] vs [-1, 0, 1]; J_2 V/Vol [{}]",
        slopes.join(", "),
        ratios.join(", ")
    ))
}

fn random_jordan_map<R: Rng>(rng: &mut R) -> QSMapSpec {
    let n = rng.random_range(2..=4);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut a = vec![sign * rng.random_range(0.5..2.0)];
    for _ in 1..rng.random_range(1..n) {
        a.push(rng.random_range(-1.0..1.0));
    }
    let v = sampling::uniform_box(rng, n, 1.0);
    let knot_count = rng.random_range(2..=5);
    let mut x = rng.random_range(-2.0..-0.5);
    let mut y = rng.random_range(-1.0..1.0);
    let mut knots = vec![[x, y]];
    for _ in 1..knot_count {
        let dx = rng.random_range(0.2..1.5);
        x += dx;
        y += rng.random_range(-2.0..2.0) * dx;
        knots.push([x, y]);
    }
    QSMapSpec::JordanFamily {
        n,
        a,
        v,
        c: PiecewiseLinear::new(knots).unwrap(),
    }
}

fn map_bounds() -> Outcome {
    let mut rng = sampling::seeded(606);
    let spaces: Vec<BoundarySpace> = (2..=4).map(|n| space(Matrix::jordan_block(1.0, n))).collect();
    let mut tightest = f64::INFINITY;
    for k in 0..100 {
        let map = random_jordan_map(&mut rng);
        let s = &spaces[map.dim().unwrap() - 2];
        let bound = map.bilip_bound().ok_or_else(|| format!("map {k}: no bound"))?;
        let (lo, hi) = empirical_bilip(&map, s, 10_000, k, 1.0).map_err(|e| format!("map {k}: {e}"))?;
        let slack = (bound / hi).min(lo * bound);
        tightest = tightest.min(slack);
        ensure(slack >= 1.0 - 1e-9, || {
            format!("map {k}: ratios [{lo}, {hi}] outside bound {bound}: {}", map.to_json_string())
        })?;
    }
    Ok(format!("100 maps x 10^4 pairs, 0 violations, smallest slack factor {tightest:.3}"))
}

fn conformality() -> Outcome {
    let s = space(Matrix::jordan_block(1.0, 2));
    let ts: Vec<f64> = (1..=8).map(|k| -(k as f64)).collect();
    let shear = QSMapSpec::Shear {
        n: 2,
        c: PiecewiseLinear::linear(1.0),
    };
    let probe = conformal_probe(&shear, &s, &[0.0, 0.0], &ts).map_err(|e| e.to_string())?;
    let r = probe.final_probe_ratio();
    ensure(rel_err(r, 2f64.sqrt()) <= 0.05, || format!("shear probe ratio {r}"))?;

    let constant = QSMapSpec::Shear {
        n: 2,
        c: PiecewiseLinear::constant(0.7),
    };
    let flat = conformal_probe(&constant, &s, &[0.3, -0.2], &ts).map_err(|e| e.to_string())?;
    for row in &flat.rows {
        ensure((row.probe_ratio - 1.0).abs() <= 0.02, || {
            format!("constant C at t={}: ratio {}", row.t, row.probe_ratio)
        })?;
    }
    Ok(format!(
        "shear probe ratio {r:.6} at t=-8 (metric ratio {:.6}); constant C ratio {:.6}",
        probe.final_metric_ratio(),
        flat.final_probe_ratio()
    ))
}

/// `g(t) = -lambda t + ln|e^{-tN} v|`, the log-norm along the flow of `J_n(lambda)`.
fn jordan_g(lambda: f64, v: &[f64], t: f64) -> f64 {
    let n = v.len();
    let mut sq = 0.0;
    for i in 0..n {
        let mut w = 0.0;
        let mut c = 1.0;
        for k in 0..n - i {
            w += c * v[i + k];
            c *= -t / (k + 1) as f64;
        }
        sq += w * w;
    }
    -lambda * t + 0.5 * sq.ln()
}

fn sign_changes(g: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> usize {
    let steps = ((hi - lo) / step) as usize;
    let mut prev = g(lo) > 0.0;
    let mut count = 0;
    for k in 1..=steps {
        let cur = g(lo + k as f64 * step) > 0.0;
        count += (cur != prev) as usize;
        prev = cur;
    }
    count
}

/// First zero of `g` scanning right from -200 at step 1e-5, refined by bisection.
fn brute_force_zero(g: impl Fn(f64) -> f64) -> f64 {
    let step = 1e-5;
    let mut k = 0u64;
    let start = -200.0;
    while g(start + (k + 1) as f64 * step) > 0.0 {
        k += 1;
    }
    let (mut lo, mut hi) = (start + k as f64 * step, start + (k + 1) as f64 * step);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Vectors whose `g` dips below zero near `t0` and recovers before its final
/// descent: `v = e^{t0 N} (0, .., c)` plus a small perturbation.
fn adversarial_corpus(count: usize) -> Vec<(f64, Vec<f64>)> {
    let mut rng = sampling::seeded(808);
    let mut out = Vec::new();
    while out.len() < count {
        let lambda = rng.random_range(0.05..0.3);
        let n = rng.random_range(2..=4);
        let t0: f64 = rng.random_range(-20.0..20.0);
        let depth = rng.random_range(0.02..1.5);
        let c = (lambda * t0 - depth).exp();
        let mut v = vec![0.0; n];
        // Column n-1 of e^{t0 N} scaled by c.
        let mut coef = c;
        for k in 0..n {
            v[n - 1 - k] = coef;
            coef *= t0 / (k + 1) as f64;
        }
        for x in v.iter_mut().take(n - 1) {
            *x += c * rng.random_range(-0.05..0.05);
        }
        if sign_changes(|t| jordan_g(lambda, &v, t), -200.0, 200.0, 1e-3) >= 2 {
            out.push((lambda, v));
        }
    }
    out
}

fn smallest_root() -> Outcome {
    let corpus = adversarial_corpus(50);
    let mut worst: f64 = 0.0;
    for (k, (lambda, v)) in corpus.iter().enumerate() {
        let n = v.len();
        let s = space(Matrix::jordan_block(*lambda, n));
        let got = s.log_dist(&vec![0.0; n], v).map_err(|e| format!("case {k}: {e}"))?;
        let want = brute_force_zero(|t| jordan_g(*lambda, v, t));
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure(err <= 1e-4, || format!("case {k} lambda={lambda} v={v:?}: t* {got} vs scan {want}"))?;
    }
    Ok(format!("50 multi-zero cases, worst |t* - scan| = {worst:.2e}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_heintze"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("heintze {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let matrix = d.join("diag12.json");
    std::fs::write(&matrix, r#"{"rows": [[1, 0], [0, 2]]}"#).map_err(|e| e.to_string())?;
    let map = d.join("shear.json");
    std::fs::write(&map, r#"{"kind":"shear","n":2,"C":{"knots":[[-1,-1],[1,1]]}}"#).map_err(|e| e.to_string())?;
    let (m, f) = (matrix.to_str().unwrap(), map.to_str().unwrap());

    let mut compared = 0;
    for run in ["a", "b"] {
        let sub = d.join(run);
        std::fs::create_dir(&sub).map_err(|e| e.to_string())?;
        let report = sub.join("report.csv");
        let qs = sub.join("qs.json");
        let probe = sub.join("probe.csv");
        let (r, q, p) = (report.to_str().unwrap(), qs.to_str().unwrap(), probe.to_str().unwrap());
        run_cli(&["qvar", "--matrix", m, "--u", "2", "--box", "0,1;0,0.02", "--t", "-6:-4:1", "--out", r])?;
        run_cli(&["qsmap-verify", "--map", f, "--samples", "2000", "--seed", "7", "--out", q])?;
        run_cli(&["conformal-probe", "--map", f, "--t", "-1:-8:-1", "--out", p])?;
    }
    for name in ["report.csv", "report-fits.csv", "qs.json", "probe.csv"] {
        let (a, b) = (read(&d.join("a").join(name))?, read(&d.join("b").join(name))?);
        ensure(!a.is_empty() && a == b, || format!("{name} differs between runs"))?;
        compared += 1;
    }
    for stem in ["report", "qs", "probe"] {
        let manifest = d.join("a").join(format!("{stem}.manifest.json"));
        let text = read(&manifest)?;
        let v: serde_json::Value = serde_json::from_slice(&text).map_err(|e| e.to_string())?;
        ensure(v["inputs"][0]["sha256"].as_str().map(str::len) == Some(64), || {
            format!("{} lacks an input digest", manifest.display())
        })?;
    }
    Ok(format!("{compared} report bodies byte-identical across two runs; manifests present"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracles", metric_oracles),
        ("symmetry and invariance", invariance_suite),
        ("fiber formulas", fiber_formulas),
        ("classification", classification),
        ("Q-variation scaling", q_variation),
        ("map bounds", map_bounds),
        ("conformality probe", conformality),
        ("smallest-root correctness", smallest_root),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail}) [{secs:.1}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({detail}) [{secs:.1}s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
