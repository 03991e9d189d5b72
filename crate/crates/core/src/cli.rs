//! Command-line front end. [`run`] parses arguments, executes one command and
//! returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::connection::decompose;
use crate::error::Error;
use crate::io::{
    jet_to_terms, load_model, mat_to_rows, read_json, scalar_jet_to_terms, to_json, write_text,
    ChartDoc, OperatorDoc, ReportDoc, Reproducibility, SymbolDoc, SCHEMA_VERSION,
};
use crate::jet::MatJet;
use crate::model::{
    build_model, build_model_with_words, compare_models, format_word, Grid, ModelConfig, ModelDoc,
};
use crate::operator::gauge_transform;
use crate::orbit::{symbols_equivalent, OrbitConfig, Verdict};
use crate::par;
use crate::sampling::{
    random_chart_gauge, random_gl, random_regular_operator, random_well_conditioned_symbol,
};
use crate::symbol::{analyze, fingerprint, regularity_report};
use crate::tensor::{Mat, DEFAULT_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_NOT_REGULAR: i32 = 2;
pub const EXIT_INEQUIVALENT: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "OPEQUIV_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "opequiv",
    version,
    about = "Invariants and local equivalence of second-order operators on vector bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Regularity report and trace fingerprint of a symbol.
    Invariants {
        symbol: PathBuf,
        /// Longest trace word.
        #[arg(long, default_value_t = 4)]
        words: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Decide whether two symbols lie in one GL(E)×GL(T) orbit.
    EquivSymbols {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 4)]
        words: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Associated connection and subsymbol of an operator.
    Decompose {
        operator: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample invariants over the operator's chart and build its model.
    Model {
        operator: PathBuf,
        /// Points per axis; a single value applies to every axis.
        #[arg(long, num_args = 1.., default_values_t = [9])]
        grid: Vec<usize>,
        /// Longest candidate invariant word.
        #[arg(long, default_value_t = 3)]
        budget: usize,
        /// Jet order used at each grid point.
        #[arg(long, default_value_t = 3)]
        jet_order: i32,
        /// Build on the basic words and coordinates of an existing model.
        #[arg(long)]
        like: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare two models built on the same invariant words.
    CompareModels {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a random regular symbol or operator document.
    Sample {
        #[arg(value_enum)]
        kind: SampleKind,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Polynomial degree of operator coefficients.
        #[arg(long, default_value_t = 3)]
        order: i32,
        /// Half-width of the operator chart.
        #[arg(long, default_value_t = 0.05)]
        radius: f64,
        /// Also apply a random group element (symbol) or gauge (operator) drawn from this seed.
        #[arg(long)]
        transform_seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleKind {
    Symbol,
    Operator,
}

#[derive(Debug, Args)]
struct Common {
    /// Numerical tolerance (regularity threshold, or comparison tolerance for compare-models).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn tol_or(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }
}

/// Finished command: text to emit and exit code.
struct Outcome {
    text: String,
    code: i32,
    /// Failure reports of `model` go to stdout, never into the model file.
    stdout_only: bool,
}

impl Outcome {
    fn new(text: String, code: i32) -> Self {
        Outcome {
            text,
            code,
            stdout_only: false,
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Document(_)
        | Error::DimensionMismatch(_)
        | Error::IncompatibleWords
        | Error::OrderUnderflow { .. } => EXIT_IO,
        _ => EXIT_NOT_REGULAR,
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Equivalent => EXIT_OK,
        Verdict::Inequivalent => EXIT_INEQUIVALENT,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

fn verdict_status(v: Verdict) -> &'static str {
    match v {
        Verdict::Equivalent => "equivalent",
        Verdict::Inequivalent => "inequivalent",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn report(
    command: &str,
    status: &str,
    result: serde_json::Value,
    repro: Reproducibility,
) -> ReportDoc {
    ReportDoc {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        status: status.to_string(),
        diagnostics: Vec::new(),
        result,
        reproducibility: repro,
    }
}

fn failure_report(command: &str, e: &Error, repro: Reproducibility) -> ReportDoc {
    let mut r = report(command, "not-regular", serde_json::Value::Null, repro);
    r.diagnostics.push(e.to_string());
    if let Error::RegularityHole { points } = e {
        r.result = json!({ "holes": points });
    }
    r
}

fn csv_text<R: Serialize>(rows: &[R]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

fn csv_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("header");
    for r in rows {
        w.write_record(r).expect("row");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

fn cmd_invariants(path: &Path, words: usize, c: &Common) -> Result<Outcome, Error> {
    let tol = c.tol_or(DEFAULT_TOL);
    let repro = Reproducibility::new(c.seed, &[("regularity", tol)]);
    let sigma = read_json::<SymbolDoc>(path)?.to_symbol()?;
    let reg = regularity_report(&sigma, tol);
    let mut result = json!({ "m": sigma.m(), "n": sigma.n(), "regularity": reg });
    let mut rows = Vec::new();
    let code = if reg.overall {
        let an = analyze(&sigma, tol)?;
        let fp = fingerprint(&an.family, None, words);
        result["fingerprint"] = json!({
            "max_len": fp.max_len,
            "words": fp.words.iter().map(|w| format_word(w)).collect::<Vec<_>>(),
            "values": fp.values,
            "scales": fp.scales,
        });
        for k in 0..fp.words.len() {
            rows.push((format_word(&fp.words[k]), fp.values[k], fp.scales[k]));
        }
        EXIT_OK
    } else {
        EXIT_NOT_REGULAR
    };
    let status = if reg.overall {
        "regular"
    } else {
        "not-regular"
    };
    let mut doc = report("invariants", status, result, repro);
    for (i, cnd) in [reg.cond1, reg.cond2, reg.cond3, reg.cond4]
        .iter()
        .enumerate()
    {
        if !cnd.pass {
            doc.diagnostics.push(format!(
                "cond{} fails (diagnostic {:e})",
                i + 1,
                cnd.diagnostic
            ));
        }
    }
    let text = if c.csv {
        #[derive(Serialize)]
        struct Row<'a> {
            word: &'a str,
            value: f64,
            scale: f64,
        }
        let rs: Vec<Row> = rows
            .iter()
            .map(|(w, v, s)| Row {
                word: w,
                value: *v,
                scale: *s,
            })
            .collect();
        if rs.is_empty() {
            "word,value,scale\n".to_string()
        } else {
            csv_text(&rs)
        }
    } else {
        to_json(&doc)
    };
    Ok(Outcome::new(text, code))
}

fn cmd_equiv(a: &Path, b: &Path, words: usize, c: &Common) -> Result<Outcome, Error> {
    let tol = c.tol_or(DEFAULT_TOL);
    let cfg = OrbitConfig {
        word_len: words,
        seed: c.seed,
        ..OrbitConfig::default()
    };
    let repro = Reproducibility::new(
        c.seed,
        &[
            ("regularity", tol),
            ("fingerprint_rtol", cfg.fingerprint_rtol),
            ("null_tol", cfg.null_tol),
            ("transform_rtol", cfg.transform_rtol),
        ],
    );
    let s1 = read_json::<SymbolDoc>(a)?.to_symbol()?;
    let s2 = read_json::<SymbolDoc>(b)?.to_symbol()?;
    let eq = match symbols_equivalent(&s1, &s2, tol, &cfg) {
        Ok(eq) => eq,
        Err(e) if exit_code(&e) == EXIT_NOT_REGULAR => {
            let doc = failure_report("equiv-symbols", &e, repro);
            return Ok(Outcome::new(
                if c.csv {
                    "key,value\nstatus,not-regular\n".into()
                } else {
                    to_json(&doc)
                },
                EXIT_NOT_REGULAR,
            ));
        }
        Err(e) => return Err(e),
    };
    let (f1, f2) = &eq.fingerprints;
    let worst_fp = f1
        .values
        .iter()
        .zip(&f2.values)
        .zip(f1.scales.iter().zip(&f2.scales))
        .map(|((x, y), (s, t))| (x - y).abs() / x.abs().max(y.abs()).max(s.max(*t)))
        .fold(0.0, f64::max);
    let mut result = json!({
        "verdict": eq.verdict,
        "separation": eq.separation,
        "fingerprint_deviation": worst_fp,
        "conjugacy": {
            "verdict": eq.conjugacy.verdict,
            "residual": finite(eq.conjugacy.residual),
            "null_dim": eq.conjugacy.null_dim,
        },
        "transform_residual": finite(eq.transform_residual),
    });
    if let Some((ga, gb)) = &eq.transform {
        result["certificate"] = json!({ "a": mat_to_rows(ga), "b": mat_to_rows(gb) });
    }
    let mut doc = report("equiv-symbols", verdict_status(eq.verdict), result, repro);
    if eq.verdict == Verdict::Inconclusive {
        doc.diagnostics.push(format!(
            "fingerprints {:?}, conjugacy {:?} (residual {:e}, null space {}), transform residual {:e}",
            eq.separation, eq.conjugacy.verdict, eq.conjugacy.residual, eq.conjugacy.null_dim, eq.transform_residual
        ));
    }
    let text = if c.csv {
        let rows = vec![
            (
                "verdict".to_string(),
                verdict_status(eq.verdict).to_string(),
            ),
            ("fingerprint_deviation".to_string(), format!("{worst_fp:e}")),
            (
                "conjugacy_residual".to_string(),
                format!("{:e}", eq.conjugacy.residual),
            ),
            ("null_dim".to_string(), eq.conjugacy.null_dim.to_string()),
            (
                "transform_residual".to_string(),
                format!("{:e}", eq.transform_residual),
            ),
        ];
        csv_table(
            &["key".to_string(), "value".to_string()],
            &rows
                .into_iter()
                .map(|(k, v)| vec![k, v])
                .collect::<Vec<_>>(),
        )
    } else {
        to_json(&doc)
    };
    Ok(Outcome::new(text, verdict_code(eq.verdict)))
}

/// Largest recombination residual accepted by `decompose`.
pub const RECOMBINATION_TOL: f64 = 1e-10;

fn cmd_decompose(path: &Path, c: &Common) -> Result<Outcome, Error> {
    let tol = c.tol_or(DEFAULT_TOL);
    let repro = Reproducibility::new(
        c.seed,
        &[("regularity", tol), ("recombination", RECOMBINATION_TOL)],
    );
    let doc = read_json::<OperatorDoc>(path)?;
    let mut op = doc.to_operator()?;
    if let Some(g) = doc.gauge_jet()? {
        op = gauge_transform(
            &op,
            &g.extend_exact(op.order() + 2, &Mat::zeros(op.m, op.m)),
            tol,
        )?;
    }
    let total = match decompose(&op, tol) {
        Ok(t) => t,
        Err(e) if exit_code(&e) == EXIT_NOT_REGULAR => {
            let r = failure_report("decompose", &e, repro);
            return Ok(Outcome::new(
                if c.csv {
                    "quantity,index,multi_index,row,col,value\n".into()
                } else {
                    to_json(&r)
                },
                EXIT_NOT_REGULAR,
            ));
        }
        Err(e) => return Err(e),
    };
    let residual = total.recombination_residual(&op);
    let sigma1 = total.sigma1.iter().map(|j| j.max_abs()).fold(0.0, f64::max);
    let n = op.n;
    let mut christoffel = Vec::new();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let terms = scalar_jet_to_terms(total.christoffel.get(k, i, j));
                if !terms.is_empty() {
                    christoffel.push(json!({ "k": k, "i": i, "j": j, "terms": terms }));
                }
            }
        }
    }
    let result = json!({
        "m": op.m,
        "n": n,
        "order": op.order(),
        "connection": total.connection.gamma.iter().map(jet_to_terms).collect::<Vec<_>>(),
        "christoffel": christoffel,
        "sigma0": jet_to_terms(&total.sigma0),
        "sigma1_max_abs": sigma1,
        "recombination_residual": residual,
    });
    let ok = residual <= RECOMBINATION_TOL;
    let mut r = report(
        "decompose",
        if ok { "ok" } else { "residual-exceeded" },
        result,
        repro,
    );
    if !ok {
        r.diagnostics.push(format!(
            "recombination residual {residual:e} above {RECOMBINATION_TOL:e}"
        ));
    }
    let text = if c.csv {
        let mut rows = Vec::new();
        let mut push = |q: &str, idx: String, j: &MatJet| {
            for t in jet_to_terms(j) {
                for (r, row) in t.matrix.iter().enumerate() {
                    for (col, v) in row.iter().enumerate() {
                        rows.push(vec![
                            q.to_string(),
                            idx.clone(),
                            t.multi_index
                                .iter()
                                .map(|e| e.to_string())
                                .collect::<Vec<_>>()
                                .join(" "),
                            r.to_string(),
                            col.to_string(),
                            v.to_string(),
                        ]);
                    }
                }
            }
        };
        for (i, g) in total.connection.gamma.iter().enumerate() {
            push("connection", i.to_string(), g);
        }
        push("sigma0", String::new(), &total.sigma0);
        let header: Vec<String> = ["quantity", "index", "multi_index", "row", "col", "value"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        csv_table(&header, &rows)
    } else {
        to_json(&r)
    };
    Ok(Outcome::new(
        text,
        if ok { EXIT_OK } else { EXIT_INCONCLUSIVE },
    ))
}

fn model_csv(m: &ModelDoc) -> String {
    let mut header: Vec<String> = (0..m.n).map(|a| format!("x{a}")).collect();
    header.extend(
        m.coord_words
            .iter()
            .chain(&m.graph_words)
            .map(|w| format!("w{}", format_word(w))),
    );
    let rows: Vec<Vec<String>> = m
        .points
        .iter()
        .map(|p| {
            p.x.iter()
                .chain(&p.coords)
                .chain(&p.values)
                .map(|v| v.to_string())
                .collect()
        })
        .collect();
    csv_table(&header, &rows)
}

fn cmd_model(
    path: &Path,
    grid_res: &[usize],
    budget: usize,
    jet_order: i32,
    like: Option<&Path>,
    c: &Common,
) -> Result<Outcome, Error> {
    let doc = read_json::<OperatorDoc>(path)?;
    let cfg = ModelConfig {
        order: jet_order,
        word_len: budget,
        regularity_tol: c.tol_or(ModelConfig::default().regularity_tol),
        ..ModelConfig::default()
    };
    let res: Vec<usize> = if grid_res.len() == 1 {
        vec![grid_res[0]; doc.n]
    } else {
        grid_res.to_vec()
    };
    let grid: Grid = doc.chart.grid(&res)?;
    let field = doc.field(cfg.regularity_tol)?;
    let built = match like {
        None => build_model(field.as_ref(), &grid, &cfg),
        Some(p) => {
            let reference = load_model(p)?;
            build_model_with_words(
                field.as_ref(),
                &grid,
                &reference.basic_words,
                Some(&reference.coord_words),
                &cfg,
            )
        }
    };
    let mut model = match built {
        Ok(m) => m,
        Err(e) if exit_code(&e) == EXIT_NOT_REGULAR => {
            let repro = Reproducibility::new(
                c.seed,
                &[
                    ("regularity", cfg.regularity_tol),
                    ("jacobian", cfg.jacobian_tol),
                ],
            );
            let r = failure_report("model", &e, repro);
            return Ok(Outcome {
                text: to_json(&r),
                code: EXIT_NOT_REGULAR,
                stdout_only: true,
            });
        }
        Err(e) => return Err(e),
    };
    model.label = doc.label.clone();
    let text = if c.csv {
        model_csv(&model)
    } else {
        to_json(&model)
    };
    Ok(Outcome::new(text, EXIT_OK))
}

fn cmd_compare(a: &Path, b: &Path, c: &Common) -> Result<Outcome, Error> {
    let tol = c.tol_or(1e-6);
    let m1 = load_model(a)?;
    let m2 = load_model(b)?;
    let v = compare_models(&m1, &m2, tol)?;
    let repro = Reproducibility::new(c.seed, &[("comparison", tol)]);
    let details: Vec<serde_json::Value> = v
        .details
        .iter()
        .enumerate()
        .map(|(k, d)| {
            json!({
                "word": format_word(&d.word),
                "role": if k < m1.n { "coordinate" } else { "graph" },
                "deviation": d.deviation,
            })
        })
        .collect();
    let result = json!({
        "verdict": v.verdict,
        "method": v.method,
        "worst_deviation": finite(v.worst_deviation),
        "tolerance": v.tolerance,
        "overlap": v.overlap,
        "details": details,
    });
    let doc = report("compare-models", verdict_status(v.verdict), result, repro);
    let text = if c.csv {
        let rows: Vec<Vec<String>> = v
            .details
            .iter()
            .enumerate()
            .map(|(k, d)| {
                vec![
                    format_word(&d.word),
                    if k < m1.n { "coordinate" } else { "graph" }.to_string(),
                    d.deviation.to_string(),
                ]
            })
            .collect();
        csv_table(&["word".into(), "role".into(), "deviation".into()], &rows)
    } else {
        to_json(&doc)
    };
    Ok(Outcome::new(text, verdict_code(v.verdict)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    kind: SampleKind,
    m: usize,
    n: usize,
    order: i32,
    radius: f64,
    transform_seed: Option<u64>,
    c: &Common,
) -> Result<Outcome, Error> {
    if m == 0 || n == 0 || order < 0 || !(radius > 0.0) {
        return Err(Error::Document(
            "sample: m, n, radius must be positive and order nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let text = match kind {
        SampleKind::Symbol => {
            let mut s = random_well_conditioned_symbol(&mut rng, m, n);
            if let Some(t) = transform_seed {
                let mut trng = ChaCha8Rng::seed_from_u64(t);
                let a = random_gl(&mut trng, m);
                let b = random_gl(&mut trng, n);
                s = s.act(&a, &b)?;
            }
            to_json(&SymbolDoc::from_symbol(
                &s,
                Some(format!("seed {}", c.seed)),
            ))
        }
        SampleKind::Operator => {
            let op = random_regular_operator(&mut rng, m, n, order);
            let chart = ChartDoc {
                lo: vec![-radius; n],
                hi: vec![radius; n],
            };
            let mut doc = OperatorDoc::from_operator(&op, chart, Some(format!("seed {}", c.seed)));
            if let Some(t) = transform_seed {
                let mut trng = ChaCha8Rng::seed_from_u64(t);
                doc = doc.with_gauge(&random_chart_gauge(&mut trng, n, 2, m, radius));
            }
            to_json(&doc)
        }
    };
    Ok(Outcome::new(text, EXIT_OK))
}

fn init_threads() {
    if let Some(k) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        if k > 0 {
            par::init_thread_pool(k);
        }
    }
}

/// Runs the CLI on `args` (program name first), writing output to `out` or
/// the `--out` file and errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    init_threads();
    let (result, common) = match &cli.command {
        Command::Invariants {
            symbol,
            words,
            common,
        } => (cmd_invariants(symbol, *words, common), common),
        Command::EquivSymbols {
            a,
            b,
            words,
            common,
        } => (cmd_equiv(a, b, *words, common), common),
        Command::Decompose { operator, common } => (cmd_decompose(operator, common), common),
        Command::Model {
            operator,
            grid,
            budget,
            jet_order,
            like,
            common,
        } => (
            cmd_model(operator, grid, *budget, *jet_order, like.as_deref(), common),
            common,
        ),
        Command::CompareModels { a, b, common } => (cmd_compare(a, b, common), common),
        Command::Sample {
            kind,
            m,
            n,
            order,
            radius,
            transform_seed,
            common,
        } => (
            cmd_sample(*kind, *m, *n, *order, *radius, *transform_seed, common),
            common,
        ),
    };
    match result {
        Ok(o) => {
            let written = match &common.out {
                Some(p) if !o.stdout_only => write_text(p, &o.text),
                _ => out
                    .write_all(o.text.as_bytes())
                    .map_err(|e| Error::Document(format!("stdout: {e}"))),
            };
            match written {
                Ok(()) => o.code,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    EXIT_IO
                }
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
