//! Text formats: structure files, data CSVs, suite configs and result tables.
//!
//! Structure file, one declaration per line, `#` starts a comment:
//!
//! ```text
//! visual: x1 x2 x3
//! textual: x4 x5 x6
//! ordinal(x2)=low<mid<high
//! ```
//!
//! Indicators are ordered as listed; the first indicator of each factor fixes
//! the factor's sign. Columns not declared ordinal are continuous.
//!
//! Data CSVs are comma-separated with a mandatory header; `NA` marks a
//! missing cell and columns not named in the structure are ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;

use nalgebra::DMatrix;

use crate::data::{Column, ColumnKind, MixedDataset};
use crate::datagen::MarginDesign;
use crate::error::{BgcfError, Result};
use crate::eval::{CvResults, Estimator, MissingKind, SuiteConfig, SuiteResults};
use crate::gibbs::ChainConfig;
use crate::model::MeasurementStructure;

pub const MISSING_TOKEN: &str = "NA";

/// Parsed structure file.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSpec {
    pub factors: Vec<(String, Vec<String>)>,
    pub ordinals: BTreeMap<String, Vec<String>>,
}

impl StructureSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut factors: Vec<(String, Vec<String>)> = Vec::new();
        let mut ordinals = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let ctx = || format!("structure line {}", lineno + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("ordinal(") {
                let (name, levels) = rest
                    .split_once(")=")
                    .ok_or_else(|| BgcfError::parse(ctx(), "expected `ordinal(name)=v1<v2<...`"))?;
                let name = name.trim().to_string();
                let levels: Vec<String> = levels.split('<').map(|l| l.trim().to_string()).collect();
                if levels.len() < 2 || levels.iter().any(String::is_empty) {
                    return Err(BgcfError::parse(
                        ctx(),
                        format!("ordinal `{name}` needs at least two non-empty levels"),
                    ));
                }
                if levels.iter().collect::<HashSet<_>>().len() != levels.len() {
                    return Err(BgcfError::parse(
                        ctx(),
                        format!("ordinal `{name}` repeats a level"),
                    ));
                }
                if ordinals.insert(name.clone(), levels).is_some() {
                    return Err(BgcfError::parse(
                        ctx(),
                        format!("ordinal `{name}` declared twice"),
                    ));
                }
                continue;
            }
            let (factor, indicators) = line
                .split_once(':')
                .ok_or_else(|| BgcfError::parse(ctx(), "expected `factor: indicator ...`"))?;
            let factor = factor.trim().to_string();
            let indicators: Vec<String> =
                indicators.split_whitespace().map(str::to_string).collect();
            if factor.is_empty() || indicators.is_empty() {
                return Err(BgcfError::parse(
                    ctx(),
                    "factor needs a name and at least one indicator",
                ));
            }
            factors.push((factor, indicators));
        }
        if factors.is_empty() {
            return Err(BgcfError::parse("structure", "no factors declared"));
        }
        let spec = Self { factors, ordinals };
        let names: HashSet<&String> = spec.indicator_names().into_iter().collect();
        if let Some(name) = spec.ordinals.keys().find(|n| !names.contains(n)) {
            return Err(BgcfError::parse(
                "structure",
                format!("ordinal declaration for unknown indicator `{name}`"),
            ));
        }
        spec.structure()?;
        Ok(spec)
    }

    pub fn indicator_names(&self) -> Vec<&String> {
        self.factors
            .iter()
            .flat_map(|(_, inds)| inds.iter())
            .collect()
    }

    pub fn structure(&self) -> Result<MeasurementStructure> {
        let mut assignment = Vec::new();
        let mut indicator_names = Vec::new();
        for (q, (_, inds)) in self.factors.iter().enumerate() {
            for name in inds {
                assignment.push(q);
                indicator_names.push(name.clone());
            }
        }
        let factor_names = self.factors.iter().map(|(f, _)| f.clone()).collect();
        MeasurementStructure::with_names(assignment, factor_names, indicator_names)
    }

    fn column_kind(&self, name: &str) -> ColumnKind {
        match self.ordinals.get(name) {
            Some(levels) => ColumnKind::ordinal_from_labels(levels.clone()),
            None => ColumnKind::Continuous,
        }
    }
}

/// Header and string cells of a CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_table<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(BgcfError::parse("csv", "missing header row"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(*h)) {
        return Err(BgcfError::parse(
            "csv header",
            format!("duplicate column `{dup}`"),
        ));
    }
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok(RawTable { header, rows })
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cells of the named columns as typed values (`None` = missing).
    /// Columns absent from the header are reported as an error unless listed
    /// in `optional`, in which case they come back entirely missing.
    pub fn typed_columns(
        &self,
        spec: &StructureSpec,
        optional: &[&str],
    ) -> Result<Vec<Vec<Option<f64>>>> {
        spec.indicator_names()
            .into_iter()
            .map(|name| {
                let Some(c) = self.column_index(name) else {
                    if optional.contains(&name.as_str()) {
                        return Ok(vec![None; self.rows.len()]);
                    }
                    return Err(BgcfError::parse(
                        "csv header",
                        format!("column `{name}` named in the structure is not in the data"),
                    ));
                };
                let kind = spec.column_kind(name);
                self.rows
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        parse_cell(
                            row.get(c).map(String::as_str).unwrap_or(""),
                            &kind,
                            name,
                            i + 2,
                        )
                    })
                    .collect()
            })
            .collect()
    }
}

fn parse_cell(cell: &str, kind: &ColumnKind, column: &str, line: usize) -> Result<Option<f64>> {
    if cell == MISSING_TOKEN {
        return Ok(None);
    }
    let ctx = || format!("column `{column}`, line {line}");
    match kind {
        ColumnKind::Continuous => {
            let v: f64 = cell
                .parse()
                .map_err(|_| BgcfError::parse(ctx(), format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(BgcfError::parse(ctx(), format!("`{cell}` is not finite")));
            }
            Ok(Some(v))
        }
        ColumnKind::Ordinal { labels, values } => {
            if let Some(i) = labels.iter().position(|l| l == cell) {
                return Ok(Some(values[i]));
            }
            if let Ok(v) = cell.parse::<f64>() {
                if values.contains(&v) {
                    return Ok(Some(v));
                }
            }
            Err(BgcfError::parse(
                ctx(),
                format!("`{cell}` is not a declared level"),
            ))
        }
    }
}

/// Loads a data CSV against a structure file.
pub fn load_dataset<R: Read>(
    reader: R,
    spec: &StructureSpec,
) -> Result<(MixedDataset, MeasurementStructure)> {
    let table = read_table(reader)?;
    let structure = spec.structure()?;
    let cols = table.typed_columns(spec, &[])?;
    let dataset = dataset_from_columns(spec, &cols)?;
    Ok((dataset, structure))
}

fn dataset_from_columns(spec: &StructureSpec, cols: &[Vec<Option<f64>>]) -> Result<MixedDataset> {
    let names = spec.indicator_names();
    let n = cols.first().map_or(0, Vec::len);
    let p = cols.len();
    let values = DMatrix::from_fn(n, p, |i, j| cols[j][i].unwrap_or(f64::NAN));
    let observed = DMatrix::from_fn(n, p, |i, j| cols[j][i].is_some());
    let columns = names
        .iter()
        .map(|name| Column {
            name: (*name).clone(),
            kind: spec.column_kind(name),
        })
        .collect();
    MixedDataset::new(columns, values, observed)
}

/// Loads a square correlation matrix whose header names the indicators;
/// rows and columns are reordered to the structure's indicator order.
pub fn load_matrix<R: Read>(reader: R, structure: &MeasurementStructure) -> Result<DMatrix<f64>> {
    let table = read_table(reader)?;
    let p = structure.p();
    if table.rows.len() != table.header.len() {
        return Err(BgcfError::parse(
            "matrix csv",
            format!(
                "{} header names but {} rows",
                table.header.len(),
                table.rows.len()
            ),
        ));
    }
    let index: Vec<usize> = structure
        .indicator_names()
        .iter()
        .map(|name| {
            table.column_index(name).ok_or_else(|| {
                BgcfError::parse(
                    "matrix csv",
                    format!("indicator `{name}` missing from header"),
                )
            })
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(p, p);
    for (a, &ra) in index.iter().enumerate() {
        let row = &table.rows[ra];
        for (b, &cb) in index.iter().enumerate() {
            let cell = row.get(cb).map(String::as_str).unwrap_or("");
            m[(a, b)] = cell.parse().map_err(|_| {
                BgcfError::parse(
                    format!("matrix csv row {}", ra + 2),
                    format!("`{cell}` is not a number"),
                )
            })?;
        }
    }
    Ok(m)
}

/// Rows of a prediction input: predictor values per structure indicator,
/// with the target column allowed to be absent or blank.
pub fn load_prediction_rows<R: Read>(
    reader: R,
    spec: &StructureSpec,
    target: &str,
) -> Result<(RawTable, Vec<Vec<Option<f64>>>)> {
    let mut table = read_table(reader)?;
    if let Some(c) = table.column_index(target) {
        for row in &mut table.rows {
            if row.get(c).is_some_and(String::is_empty) {
                row[c] = MISSING_TOKEN.to_string();
            }
        }
    }
    let cols = table.typed_columns(spec, &[target])?;
    let n = table.rows.len();
    let rows = (0..n)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    Ok((table, rows))
}

/// Flat `key = value` suite configuration. List values are comma-separated.
///
/// Keys: `estimators`, `n`, `beta`, `margins`, `missing` (`mar`|`mcar`),
/// `replicates`, `seed`, `model_seed`, `iterations`, `burn_in`, `thin`.
pub fn parse_suite_config(text: &str) -> Result<SuiteConfig> {
    let mut kv: HashMap<String, (usize, String)> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            BgcfError::parse(
                format!("config line {}", lineno + 1),
                "expected `key = value`",
            )
        })?;
        let key = k.trim().to_string();
        if kv
            .insert(key.clone(), (lineno + 1, v.trim().to_string()))
            .is_some()
        {
            return Err(BgcfError::parse(
                format!("config line {}", lineno + 1),
                format!("duplicate key `{key}`"),
            ));
        }
    }
    const KEYS: [&str; 11] = [
        "estimators",
        "n",
        "beta",
        "margins",
        "missing",
        "replicates",
        "seed",
        "model_seed",
        "iterations",
        "burn_in",
        "thin",
    ];
    if let Some((k, (line, _))) = kv.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
        return Err(BgcfError::parse(
            format!("config line {line}"),
            format!("unknown key `{k}`"),
        ));
    }
    fn list<T: std::str::FromStr>(
        kv: &HashMap<String, (usize, String)>,
        key: &str,
        default: &str,
    ) -> Result<Vec<T>> {
        let (line, value) = kv.get(key).cloned().unwrap_or((0, default.to_string()));
        value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| {
                    BgcfError::parse(
                        format!("config line {line}"),
                        format!("bad value `{s}` for `{key}`"),
                    )
                })
            })
            .collect()
    }
    fn one<T: std::str::FromStr>(
        kv: &HashMap<String, (usize, String)>,
        key: &str,
        default: &str,
    ) -> Result<T> {
        let (line, value) = kv.get(key).cloned().unwrap_or((0, default.to_string()));
        value.parse().map_err(|_| {
            BgcfError::parse(
                format!("config line {line}"),
                format!("bad value `{value}` for `{key}`"),
            )
        })
    }
    let defaults = ChainConfig::default();
    let missing = match one::<String>(&kv, "missing", "mar")?
        .to_ascii_lowercase()
        .as_str()
    {
        "mar" => MissingKind::Mar,
        "mcar" => MissingKind::Mcar,
        other => {
            return Err(BgcfError::parse(
                "config",
                format!("unknown missingness `{other}`"),
            ))
        }
    };
    let config = SuiteConfig {
        estimators: list::<Estimator>(&kv, "estimators", "")?,
        sample_sizes: list(&kv, "n", "")?,
        betas: list(&kv, "beta", "0")?,
        margins: list::<MarginDesign>(&kv, "margins", "")?,
        missing,
        replicates: one(&kv, "replicates", "1")?,
        seed: one(&kv, "seed", "0")?,
        model_seed: one(&kv, "model_seed", "0")?,
        chain: ChainConfig {
            iterations: one(&kv, "iterations", &defaults.iterations.to_string())?,
            burn_in: one(&kv, "burn_in", &defaults.burn_in.to_string())?,
            thinning: one(&kv, "thin", &defaults.thinning.to_string())?,
            seed: 0,
        },
    };
    config.validate()?;
    Ok(config)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Summary table: `estimator,n,beta,margin,target,metric,mean,ci_half_width,replicates`.
pub fn suite_summary_csv(results: &SuiteResults) -> String {
    let mut out =
        String::from("estimator,n,beta,margin,target,metric,mean,ci_half_width,replicates\n");
    for r in &results.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.cell.estimator,
            r.cell.n,
            r.cell.beta,
            r.cell.margin,
            r.target,
            r.metric,
            r.mean,
            r.ci_half_width,
            r.replicates
        );
    }
    out
}

/// Long format: `estimator,n,beta,margin,replicate,target,metric,value`.
pub fn suite_raw_csv(results: &SuiteResults) -> String {
    let mut out = String::from("estimator,n,beta,margin,replicate,target,metric,value\n");
    for r in &results.raw {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.cell.estimator,
            r.cell.n,
            r.cell.beta,
            r.cell.margin,
            r.replicate,
            r.target,
            r.metric,
            r.value
        );
    }
    out
}

pub fn suite_failures_csv(results: &SuiteResults) -> String {
    let mut out = String::from("estimator,n,beta,margin,replicate,message\n");
    for f in &results.failures {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            f.cell.estimator,
            f.cell.n,
            f.cell.beta,
            f.cell.margin,
            f.replicate,
            csv_field(&f.message)
        );
    }
    out
}

/// `method,target,repeat,fold,mse,rows`.
pub fn cv_records_csv(results: &CvResults, names: &[String]) -> String {
    let mut out = String::from("method,target,repeat,fold,mse,rows\n");
    for r in &results.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method,
            csv_field(&names[r.target]),
            r.repeat,
            r.fold,
            r.mse,
            r.rows
        );
    }
    out
}

/// `method,target,mean_mse,se,estimates`.
pub fn cv_summary_csv(results: &CvResults, names: &[String]) -> String {
    let mut out = String::from("method,target,mean_mse,se,estimates\n");
    for s in &results.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.method,
            csv_field(&names[s.target]),
            s.mean,
            s.se,
            s.estimates
        );
    }
    out
}

/// Column names of the strict lower triangle of the joint matrix, row-major,
/// matching [`crate::model::JointCorrelation::lower_triangle`].
pub fn lower_triangle_names(structure: &MeasurementStructure) -> Vec<String> {
    let names: Vec<&String> = structure
        .indicator_names()
        .iter()
        .chain(structure.factor_names())
        .collect();
    let mut out = Vec::new();
    for a in 1..names.len() {
        for b in 0..a {
            out.push(format!("{}~{}", names[a], names[b]));
        }
    }
    out
}

/// One row per retained draw.
pub fn draws_csv(
    draws: &[crate::model::JointCorrelation],
    structure: &MeasurementStructure,
) -> String {
    let header: Vec<String> = lower_triangle_names(structure)
        .iter()
        .map(|s| csv_field(s))
        .collect();
    let mut out = String::from("draw,");
    out.push_str(&header.join(","));
    out.push('\n');
    for (t, d) in draws.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in d.lower_triangle() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Data CSV in the dialect read by [`load_dataset`]: ordinal cells are
/// written as their level labels, missing cells as `NA`.
pub fn dataset_csv(data: &MixedDataset) -> String {
    let mut out = data
        .columns()
        .iter()
        .map(|c| csv_field(&c.name))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for i in 0..data.n() {
        for (j, col) in data.columns().iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            if !data.is_observed(i, j) {
                out.push_str(MISSING_TOKEN);
                continue;
            }
            let v = data.values()[(i, j)];
            match &col.kind {
                ColumnKind::Continuous => {
                    let _ = write!(out, "{v}");
                }
                ColumnKind::Ordinal { labels, values } => {
                    let level = values.iter().position(|&l| l == v).unwrap_or(0);
                    out.push_str(&csv_field(&labels[level]));
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Structure file for `structure`, declaring the ordinal columns of `data`.
pub fn structure_text(structure: &MeasurementStructure, data: &MixedDataset) -> String {
    let names = structure.indicator_names();
    let mut out = String::new();
    for (q, factor) in structure.factor_names().iter().enumerate() {
        let members: Vec<&str> = structure
            .indicators_of(q)
            .iter()
            .map(|&j| names[j].as_str())
            .collect();
        let _ = writeln!(out, "{factor}: {}", members.join(" "));
    }
    for col in data.columns() {
        if let ColumnKind::Ordinal { labels, .. } = &col.kind {
            let _ = writeln!(out, "ordinal({})={}", col.name, labels.join("<"));
        }
    }
    out
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &std::path::Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
