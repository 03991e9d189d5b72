//! JSON documents for symbols, operators, models and reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{MatJet, ScalarJet};
use crate::model::{
    GaugedOperator, Grid, ModelDoc, OperatorField, PolynomialOperator, MODEL_SCHEMA,
};
use crate::operator::OperatorJet;
use crate::tensor::{Mat, SymbolTensor};

pub const SCHEMA_VERSION: u32 = 1;

/// Matrix as a list of rows.
pub type Rows = Vec<Vec<f64>>;

pub fn mat_to_rows(a: &Mat) -> Rows {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Checks shape and finiteness; `field` names the location in error messages.
pub fn rows_to_mat(rows: &Rows, shape: (usize, usize), field: &str) -> Result<Mat> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Document(format!(
            "{field}: expected a {}x{} matrix",
            shape.0, shape.1
        )));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Document(format!("{field}: non-finite entry")));
    }
    Ok(Mat::from_fn(shape.0, shape.1, |r, c| rows[r][c]))
}

fn check_schema(found: u32, expected: u32, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Document(format!(
            "{what}: unsupported schema_version {found} (expected {expected})"
        )));
    }
    Ok(())
}

/// `σ` with every component `σ^{ij}` stored, `comp[i][j]` an `m×m` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolDoc {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub m: usize,
    pub n: usize,
    pub comp: Vec<Vec<Rows>>,
}

impl SymbolDoc {
    pub fn from_symbol(s: &SymbolTensor, label: Option<String>) -> Self {
        let n = s.n();
        SymbolDoc {
            schema_version: SCHEMA_VERSION,
            label,
            m: s.m(),
            n,
            comp: (0..n)
                .map(|i| (0..n).map(|j| mat_to_rows(s.comp(i, j))).collect())
                .collect(),
        }
    }

    pub fn to_symbol(&self) -> Result<SymbolTensor> {
        check_schema(self.schema_version, SCHEMA_VERSION, "symbol")?;
        let (m, n) = (self.m, self.n);
        if m == 0 || n == 0 || self.comp.len() != n || self.comp.iter().any(|r| r.len() != n) {
            return Err(Error::Document(format!("comp: expected {n}x{n} blocks")));
        }
        let mut comps = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                comps.push(rows_to_mat(
                    &self.comp[i][j],
                    (m, m),
                    &format!("comp[{i}][{j}]"),
                )?);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&comps[i * n + j], &comps[j * n + i]);
                let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
                if (a - b).amax() > 1e-12 * scale {
                    return Err(Error::Document(format!(
                        "comp[{i}][{j}] and comp[{j}][{i}] differ; the symbol must be symmetric"
                    )));
                }
            }
        }
        SymbolTensor::from_components(m, n, comps)
    }
}

/// One monomial `x^α` with a matrix coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDoc {
    pub multi_index: Vec<u32>,
    pub matrix: Rows,
}

/// One monomial `x^α` with a scalar coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTermDoc {
    pub multi_index: Vec<u32>,
    pub value: f64,
}

/// Nonzero terms of a matrix jet.
pub fn jet_to_terms(j: &MatJet) -> Vec<TermDoc> {
    j.terms()
        .into_iter()
        .filter(|(_, c)| c.amax() != 0.0)
        .map(|(e, c)| TermDoc {
            multi_index: e,
            matrix: mat_to_rows(&c),
        })
        .collect()
}

pub fn scalar_jet_to_terms(j: &ScalarJet) -> Vec<ScalarTermDoc> {
    j.terms()
        .into_iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|(e, value)| ScalarTermDoc {
            multi_index: e,
            value,
        })
        .collect()
}

/// Builds a jet of the given order; every `|α|` must be at most `order`.
pub fn terms_to_jet(
    terms: &[TermDoc],
    n: usize,
    order: i32,
    shape: (usize, usize),
    field: &str,
) -> Result<MatJet> {
    let mut seen = Vec::new();
    let mut parsed = Vec::with_capacity(terms.len());
    for (t, term) in terms.iter().enumerate() {
        let loc = format!("{field}[{t}]");
        if term.multi_index.len() != n {
            return Err(Error::Document(format!(
                "{loc}.multi_index: expected {n} entries"
            )));
        }
        let deg: u32 = term.multi_index.iter().sum();
        if deg as i64 > order as i64 {
            return Err(Error::Document(format!(
                "{loc}.multi_index: degree {deg} exceeds order {order}"
            )));
        }
        if seen.contains(&term.multi_index) {
            return Err(Error::Document(format!(
                "{loc}.multi_index: repeated monomial"
            )));
        }
        seen.push(term.multi_index.clone());
        parsed.push((
            term.multi_index.clone(),
            rows_to_mat(&term.matrix, shape, &format!("{loc}.matrix"))?,
        ));
    }
    Ok(MatJet::from_terms(
        n,
        order,
        &Mat::zeros(shape.0, shape.1),
        &parsed,
    ))
}

/// Axis-aligned chart box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartDoc {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ChartDoc {
    pub fn grid(&self, res: &[usize]) -> Result<Grid> {
        Grid::new(self.lo.clone(), self.hi.clone(), res.to_vec())
    }
}

/// Second-order operator `a^{ij}∂_i∂_j + b^i∂_i + c` with polynomial
/// coefficients of degree at most `order`, optionally followed by the gauge
/// `A(x)`, in which case the document describes `A_*Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDoc {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub m: usize,
    pub n: usize,
    pub order: i32,
    pub chart: ChartDoc,
    /// `a[i][j]`, all `n²` entries.
    pub a: Vec<Vec<Vec<TermDoc>>>,
    pub b: Vec<Vec<TermDoc>>,
    pub c: Vec<TermDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauge: Option<Vec<TermDoc>>,
}

impl OperatorDoc {
    pub fn from_operator(op: &OperatorJet, chart: ChartDoc, label: Option<String>) -> Self {
        let n = op.n;
        OperatorDoc {
            schema_version: SCHEMA_VERSION,
            label,
            m: op.m,
            n,
            order: op.order(),
            chart,
            a: (0..n)
                .map(|i| (0..n).map(|j| jet_to_terms(op.a(i, j))).collect())
                .collect(),
            b: op.b.iter().map(jet_to_terms).collect(),
            c: jet_to_terms(&op.c),
            gauge: None,
        }
    }

    pub fn with_gauge(mut self, gauge: &MatJet) -> Self {
        self.gauge = Some(jet_to_terms(gauge));
        self
    }

    pub fn to_operator(&self) -> Result<OperatorJet> {
        check_schema(self.schema_version, SCHEMA_VERSION, "operator")?;
        let (m, n, k) = (self.m, self.n, self.order);
        if m == 0 || n == 0 || k < 0 {
            return Err(Error::Document(
                "m, n must be positive and order nonnegative".into(),
            ));
        }
        if self.a.len() != n || self.a.iter().any(|r| r.len() != n) {
            return Err(Error::Document(format!("a: expected {n}x{n} term tables")));
        }
        if self.b.len() != n {
            return Err(Error::Document(format!("b: expected {n} term tables")));
        }
        if self.chart.lo.len() != n || self.chart.hi.len() != n {
            return Err(Error::Document(format!(
                "chart: expected {n} bounds per side"
            )));
        }
        let mut a = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                a.push(terms_to_jet(
                    &self.a[i][j],
                    n,
                    k,
                    (m, m),
                    &format!("a[{i}][{j}]"),
                )?);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d = a[i * n + j].max_abs_diff(&a[j * n + i]);
                let scale = a[i * n + j].max_abs().max(f64::MIN_POSITIVE);
                if d > 1e-12 * scale {
                    return Err(Error::Document(format!(
                        "a[{i}][{j}] and a[{j}][{i}] differ; a must be symmetric"
                    )));
                }
            }
        }
        let b = (0..n)
            .map(|i| terms_to_jet(&self.b[i], n, k, (m, m), &format!("b[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let c = terms_to_jet(&self.c, n, k, (m, m), "c")?;
        OperatorJet::new(m, n, a, b, c)
    }

    /// The gauge as an exact polynomial, if present.
    pub fn gauge_jet(&self) -> Result<Option<MatJet>> {
        let Some(terms) = &self.gauge else {
            return Ok(None);
        };
        let degree = terms
            .iter()
            .map(|t| t.multi_index.iter().sum::<u32>() as i32)
            .max()
            .unwrap_or(0);
        terms_to_jet(terms, self.n, degree, (self.m, self.m), "gauge").map(Some)
    }

    /// The described operator as a field over the chart.
    pub fn field(&self, tol: f64) -> Result<Box<dyn OperatorField>> {
        let base = PolynomialOperator {
            op: self.to_operator()?,
        };
        Ok(match self.gauge_jet()? {
            None => Box::new(base),
            Some(gauge) => Box::new(GaugedOperator { base, gauge, tol }),
        })
    }
}

/// Seed, tolerances and tool version behind a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproducibility {
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub version: String,
}

impl Reproducibility {
    pub fn new(seed: u64, tolerances: &[(&str, f64)]) -> Self {
        Reproducibility {
            seed,
            tolerances: tolerances
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Output of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub command: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    pub result: serde_json::Value,
    pub reproducibility: Reproducibility,
}

/// Parses a JSON document, reporting the field path and line of any error.
pub fn parse_json<T: DeserializeOwned>(text: &str, source: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Document(format!(
            "{source}: line {} column {}: at `{path}`: {inner}",
            inner.line(),
            inner.column()
        ))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Document(format!("{}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

/// Pretty JSON with a trailing newline. Floats use the shortest representation
/// that parses back to the same value.
pub fn to_json<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Document(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<ModelDoc> {
    let doc: ModelDoc = read_json(path)?;
    validate_model(&doc)?;
    Ok(doc)
}

pub fn validate_model(doc: &ModelDoc) -> Result<()> {
    check_schema(doc.schema_version, MODEL_SCHEMA, "model")?;
    if doc.coord_words.len() != doc.n || doc.coord_scales.len() != doc.n {
        return Err(Error::Document(format!(
            "model: expected {} coordinate words and scales",
            doc.n
        )));
    }
    if doc.graph_scales.len() != doc.graph_words.len() {
        return Err(Error::Document(
            "model: graph_scales and graph_words differ in length".into(),
        ));
    }
    if doc.points.len() != doc.grid.len() {
        return Err(Error::Document(
            "model: point count does not match the grid".into(),
        ));
    }
    for (k, p) in doc.points.iter().enumerate() {
        if p.x.len() != doc.n || p.coords.len() != doc.n || p.values.len() != doc.graph_words.len()
        {
            return Err(Error::Document(format!("points[{k}]: wrong length")));
        }
        if p.x
            .iter()
            .chain(&p.coords)
            .chain(&p.values)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Document(format!("points[{k}]: non-finite entry")));
        }
    }
    if !(doc.jacobian_min > 0.0) {
        return Err(Error::Document(
            "model: jacobian_min must be positive".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_gauge, random_regular_operator, random_regular_symbol};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symbol_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_regular_symbol(&mut rng, 3, 2);
        let doc = SymbolDoc::from_symbol(&s, Some("x".into()));
        let back: SymbolDoc = parse_json(&to_json(&doc), "mem").unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_symbol().unwrap().max_abs_diff(&s), 0.0);
    }

    #[test]
    fn operator_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = random_regular_operator(&mut rng, 2, 2, 3);
        let chart = ChartDoc {
            lo: vec![-0.1, -0.1],
            hi: vec![0.1, 0.1],
        };
        let doc = OperatorDoc::from_operator(&op, chart, None)
            .with_gauge(&random_gauge(&mut rng, 2, 2, 2));
        let back: OperatorDoc = parse_json(&to_json(&doc), "mem").unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_operator().unwrap().max_abs_diff(&op), 0.0);
        assert_eq!(back.gauge_jet().unwrap().unwrap().order(), 2);
    }

    #[test]
    fn asymmetric_symbol_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut doc = SymbolDoc::from_symbol(&random_regular_symbol(&mut rng, 2, 2), None);
        doc.comp[0][1][0][0] += 1.0;
        let err = doc.to_symbol().unwrap_err().to_string();
        assert!(err.contains("comp[0][1]"), "{err}");
    }

    #[test]
    fn bad_terms_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let op = random_regular_operator(&mut rng, 2, 2, 1);
        let chart = ChartDoc {
            lo: vec![0.0; 2],
            hi: vec![1.0; 2],
        };
        let mut doc = OperatorDoc::from_operator(&op, chart, None);
        doc.c.push(TermDoc {
            multi_index: vec![2, 0],
            matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        });
        let err = doc.to_operator().unwrap_err().to_string();
        assert!(err.contains("exceeds order"), "{err}");
        doc.c.pop();
        doc.b[1][0].matrix[0][0] = f64::NAN;
        assert!(doc
            .to_operator()
            .unwrap_err()
            .to_string()
            .contains("non-finite"));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let text = "{\n  \"schema_version\": 1,\n  \"m\": 2,\n  \"n\": \"two\",\n  \"comp\": []\n}";
        let err = parse_json::<SymbolDoc>(text, "sym.json")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 4"), "{err}");
        assert!(err.contains("`n`"), "{err}");
        let wrong = "{\"schema_version\": 7, \"m\": 1, \"n\": 1, \"comp\": [[[[1.0]]]]}";
        let doc: SymbolDoc = parse_json(wrong, "s").unwrap();
        assert!(doc
            .to_symbol()
            .unwrap_err()
            .to_string()
            .contains("schema_version"));
    }
}
