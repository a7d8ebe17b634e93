use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use heintze_core::format::{fmt_compact, fmt_value};
use heintze_core::maps::{conformal_probe as run_probe, empirical_bilip, qs_profile, QSMapSpec};
use heintze_core::metric::{BoundarySpace, SolverConfig};
use heintze_core::spectral::{classify as run_classify, real_part_jordan_form};
use heintze_core::variation::{fit_exponents, max_cells_from_env, BoxSpec, TestFunction};
use heintze_core::Matrix;
use serde::Serialize;

use crate::manifest::{sibling, RunManifest};
use crate::{ClassifyArgs, CliError, DistArgs, ProbeArgs, QsmapArgs, QvarArgs, RpjfArgs};

type CmdResult = Result<(), CliError>;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn utf8(path: &Path, bytes: &[u8]) -> Result<String, CliError> {
    String::from_utf8(bytes.to_vec()).map_err(|_| CliError::Usage(format!("{} is not UTF-8", path.display())))
}

fn load_matrix(path: &Path) -> Result<(Matrix, Vec<u8>), CliError> {
    let bytes = read(path)?;
    let m = Matrix::from_json_str(&utf8(path, &bytes)?)?;
    Ok((m, bytes))
}

fn load_map(path: &Path) -> Result<(QSMapSpec, Vec<u8>), CliError> {
    let bytes = read(path)?;
    let m = QSMapSpec::from_json_str(&utf8(path, &bytes)?)?;
    Ok((m, bytes))
}

/// Metric space for a map: the given matrix, or `J_n` with eigenvalue 1.
fn map_space(map: &QSMapSpec, matrix: Option<&Path>) -> Result<(BoundarySpace, Option<Vec<u8>>), CliError> {
    let (a, bytes) = match matrix {
        Some(p) => {
            let (m, b) = load_matrix(p)?;
            (m, Some(b))
        }
        None => {
            let n = map
                .dim()
                .ok_or_else(|| CliError::Usage("map has no dimension; pass --matrix".into()))?;
            (Matrix::jordan_block(1.0, n), None)
        }
    };
    Ok((BoundarySpace::new(a)?, bytes))
}

pub fn parse_csv_vec(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Usage(format!("{what}: {s:?} is not a finite number")))
        })
        .collect()
}

/// Accepts an inclusive range `start:stop:step` or a comma list.
pub fn parse_grid(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    if !text.contains(':') {
        return parse_csv_vec(text, what);
    }
    let parts: Vec<f64> = text
        .split(':')
        .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Usage(format!("{what}: expected start:stop:step, got {text:?}")))?;
    let [start, stop, step] = parts[..] else {
        return Err(CliError::Usage(format!("{what}: expected start:stop:step, got {text:?}")));
    };
    let span = (stop - start) / step;
    if step == 0.0 || !(-1e-9..=1e6).contains(&span) {
        return Err(CliError::Usage(format!("{what}: step {step} does not reach {stop} from {start}")));
    }
    let count = (span + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

pub fn rpjf(args: &RpjfArgs) -> CmdResult {
    let (a, _) = load_matrix(&args.matrix)?;
    let form = real_part_jordan_form(&a, args.tol)?;
    for b in form.blocks() {
        println!("{} x {}", fmt_compact(b.lambda), b.size);
    }
    Ok(())
}

pub fn classify(args: &ClassifyArgs) -> CmdResult {
    let (a, _) = load_matrix(&args.matrix_a)?;
    let (b, _) = load_matrix(&args.matrix_b)?;
    let result = run_classify(&a, &b, args.tol)?;
    println!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
    if result.equivalent {
        Ok(())
    } else {
        Err(CliError::NotEquivalent)
    }
}

pub fn dist(args: &DistArgs) -> CmdResult {
    let (a, _) = load_matrix(&args.matrix)?;
    let solver = SolverConfig {
        scan_step: args.scan_step,
        t_tol: args.t_tol,
        bracket_margin: args.bracket_margin,
        ..SolverConfig::default()
    };
    let space = BoundarySpace::with_config(a, solver)?;
    let x = parse_csv_vec(&args.x, "--x")?;
    let y = parse_csv_vec(&args.y, "--y")?;
    println!("{}", fmt_value(space.dist(&x, &y)?));
    Ok(())
}

pub fn qvar(args: &QvarArgs) -> CmdResult {
    let (a, bytes) = load_matrix(&args.matrix)?;
    let u = match (&args.u, &args.ell) {
        (Some(0), _) => return Err(CliError::Usage("--u is 1-based".into())),
        (Some(i), _) => TestFunction::Coordinate(i - 1),
        (None, Some(ell)) => TestFunction::Linear(parse_csv_vec(ell, "--ell")?),
        (None, None) => return Err(CliError::Usage("one of --u or --ell is required".into())),
    };
    let bx = BoxSpec::parse(&args.bx)?;
    let mut ts = parse_grid(&args.t, "--t")?;
    ts.sort_by(f64::total_cmp);
    let qs = parse_csv_vec(&args.q, "--q")?;
    let max_cells = match args.max_cells {
        Some(c) => c,
        None => max_cells_from_env()?,
    };
    let report = fit_exponents(&a, &u, &bx, &ts, &qs, max_cells)?;

    let mut rows = String::from("t,Q,cells,V,log V\n");
    for r in &report.rows {
        let _ = writeln!(
            rows,
            "{},{},{},{},{}",
            fmt_compact(r.t),
            fmt_compact(r.q),
            r.cells,
            fmt_value(r.v),
            fmt_value(r.log_v)
        );
    }
    let mut fits = String::from("Q,slope,predicted,residual,classification\n");
    for f in &report.fits {
        let _ = writeln!(
            fits,
            "{},{},{},{},{}",
            fmt_compact(f.q),
            fmt_value(f.slope),
            fmt_value(f.predicted),
            fmt_value(f.residual),
            f.classification
        );
    }

    let mut manifest = RunManifest::new("qvar", args, None);
    manifest.add_input(&args.matrix, &bytes);
    let fits_path = sibling(&args.out, "-fits", "csv");
    manifest.write_report(&args.out, &rows)?;
    manifest.write_report(&fits_path, &fits)?;
    manifest.finish(&args.out)?;
    print!("{fits}");
    Ok(())
}

#[derive(Serialize)]
struct QsmapReport {
    seed: u64,
    samples: usize,
    radius: f64,
    bound: Option<f64>,
    min_ratio: f64,
    max_ratio: f64,
    within_bound: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qs_envelope: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qs_degenerate: Option<usize>,
}

pub fn qsmap_verify(args: &QsmapArgs) -> CmdResult {
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let (map, map_bytes) = load_map(&args.map)?;
    let (space, matrix_bytes) = map_space(&map, args.matrix.as_deref())?;
    let (lo, hi) = empirical_bilip(&map, &space, args.samples, args.seed, args.radius)?;
    let bound = map.bilip_bound();
    let profile = if args.triples > 0 {
        Some(qs_profile(&map, &space, args.triples, args.seed)?)
    } else {
        None
    };
    let report = QsmapReport {
        seed: args.seed,
        samples: args.samples,
        radius: args.radius,
        bound,
        min_ratio: lo,
        max_ratio: hi,
        within_bound: bound.map(|k| lo >= 1.0 / k && hi <= k),
        qs_degenerate: profile.as_ref().map(|p| p.degenerate),
        qs_envelope: profile.map(|p| p.envelope),
    };
    let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(out) = &args.out {
        let mut manifest = RunManifest::new("qsmap-verify", args, Some(args.seed));
        manifest.add_input(&args.map, &map_bytes);
        if let (Some(p), Some(b)) = (&args.matrix, &matrix_bytes) {
            manifest.add_input(p, b);
        }
        manifest.write_report(out, &body)?;
        manifest.finish(out)?;
    }
    print!("{body}");
    Ok(())
}

pub fn conformal_probe(args: &ProbeArgs) -> CmdResult {
    let (map, map_bytes) = load_map(&args.map)?;
    let (space, matrix_bytes) = map_space(&map, args.matrix.as_deref())?;
    let x0 = match &args.x0 {
        Some(text) => parse_csv_vec(text, "--x0")?,
        None => vec![0.0; space.dim()],
    };
    let ts = parse_grid(&args.t, "--t")?;
    let probe = run_probe(&map, &space, &x0, &ts)?;

    let mut body = String::from("t,probe_ratio,metric_ratio\n");
    for r in &probe.rows {
        let _ = writeln!(
            body,
            "{},{},{}",
            fmt_compact(r.t),
            fmt_value(r.probe_ratio),
            fmt_value(r.metric_ratio)
        );
    }
    match &args.out {
        Some(out) => {
            let mut manifest = RunManifest::new("conformal-probe", args, None);
            manifest.add_input(&args.map, &map_bytes);
            if let (Some(p), Some(b)) = (&args.matrix, &matrix_bytes) {
                manifest.add_input(p, b);
            }
            manifest.write_report(out, &body)?;
            manifest.finish(out)?;
        }
        None => print!("{body}"),
    }
    println!("final probe ratio: {}", fmt_value(probe.final_probe_ratio()));
    println!("final metric ratio: {}", fmt_value(probe.final_metric_ratio()));
    Ok(())
}
