//! Dataset CSV ingestion, result bundles and exports.
//!
//! The dataset format has one row per time step with the header
//! `sequence_id,subject_id,token,<predictor>...`; rows of a sequence are
//! contiguous and in time order.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{McmcSettings, Trace};
use crate::inference::{PosteriorSummaries, TestReport};
use crate::model::{Factor, Hyperparams, PredictorSpec, Sequence, SequenceDataset, StateSpace};

const FIXED_COLUMNS: [&str; 3] = ["sequence_id", "subject_id", "token"];

/// Optional fixed vocabularies. Without them, tokens, levels and subjects are
/// indexed in order of first appearance in the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub tokens: Option<Vec<String>>,
    /// Predictors with their level orders; names must match the header.
    pub predictors: Option<Vec<Factor>>,
    pub subjects: Option<Vec<String>>,
}

impl DatasetSchema {
    /// Schema that reproduces the vocabularies of `dataset` exactly.
    pub fn of(dataset: &SequenceDataset) -> Self {
        DatasetSchema {
            tokens: Some(dataset.states().tokens().to_vec()),
            predictors: Some(dataset.factors().to_vec()),
            subjects: Some(dataset.subjects().to_vec()),
        }
    }
}

/// Interns labels in first-appearance order, or against a fixed list.
struct Vocab {
    labels: Vec<String>,
    fixed: bool,
}

impl Vocab {
    fn new(fixed: Option<Vec<String>>) -> Self {
        match fixed {
            Some(labels) => Vocab { labels, fixed: true },
            None => Vocab {
                labels: Vec::new(),
                fixed: false,
            },
        }
    }

    fn index(&mut self, label: &str) -> Option<usize> {
        if let Some(i) = self.labels.iter().position(|l| l == label) {
            return Some(i);
        }
        if self.fixed {
            return None;
        }
        self.labels.push(label.to_string());
        Some(self.labels.len() - 1)
    }
}

pub fn read_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<SequenceDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(file, schema, path)
}

/// Parses the dataset CSV from any reader; `origin` labels errors.
pub fn read_dataset_from<R: Read>(reader: R, schema: &DatasetSchema, origin: &Path) -> Result<SequenceDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let csv_err = |source| Error::Csv {
        path: origin.to_path_buf(),
        source,
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || header.iter().take(3).ne(FIXED_COLUMNS) {
        return Err(Error::Data(format!(
            "{}: header must start with {}",
            origin.display(),
            FIXED_COLUMNS.join(",")
        )));
    }
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut levels: Vec<Vocab> = match &schema.predictors {
        Some(fixed) => {
            let declared: Vec<&str> = fixed.iter().map(|f| f.name.as_str()).collect();
            if declared != names.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Data(format!(
                    "{}: predictor columns {names:?} do not match the schema {declared:?}",
                    origin.display()
                )));
            }
            fixed.iter().map(|f| Vocab::new(Some(f.levels.clone()))).collect()
        }
        None => names.iter().map(|_| Vocab::new(None)).collect(),
    };
    let mut tokens = Vocab::new(schema.tokens.clone());
    let mut subjects = Vocab::new(schema.subjects.clone());
    let mut sequences: Vec<Sequence> = Vec::new();
    let mut seen_ids: std::collections::HashSet<String> = std::collections::HashSet::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = row + 2;
        let field = |k: usize| record.get(k).unwrap_or("");
        let (id, subject, token) = (field(0), field(1), field(2));
        if id.is_empty() || subject.is_empty() || token.is_empty() {
            return Err(Error::Data(format!("{}:{line}: empty field", origin.display())));
        }
        let t = tokens
            .index(token)
            .ok_or_else(|| Error::Data(format!("{}:{line}: unknown token {token:?}", origin.display())))?;
        let s = subjects
            .index(subject)
            .ok_or_else(|| Error::Data(format!("{}:{line}: unknown subject {subject:?}", origin.display())))?;
        let x = (0..names.len())
            .map(|j| {
                let v = field(3 + j);
                levels[j].index(v).ok_or_else(|| {
                    Error::Data(format!(
                        "{}:{line}: unknown level {v:?} of predictor {:?}",
                        origin.display(),
                        names[j]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match sequences.last_mut() {
            Some(cur) if cur.id == id => {
                if cur.subject != s {
                    return Err(Error::Data(format!(
                        "{}:{line}: subject changes within sequence {id:?}",
                        origin.display()
                    )));
                }
                if cur.predictors != x {
                    return Err(Error::Data(format!(
                        "{}:{line}: predictor values change within sequence {id:?}",
                        origin.display()
                    )));
                }
                cur.tokens.push(t);
            }
            _ => {
                if !seen_ids.insert(id.to_string()) {
                    return Err(Error::Data(format!(
                        "{}:{line}: rows of sequence {id:?} are not contiguous",
                        origin.display()
                    )));
                }
                sequences.push(Sequence {
                    id: id.to_string(),
                    subject: s,
                    predictors: x,
                    tokens: vec![t],
                });
            }
        }
    }
    if sequences.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", origin.display())));
    }
    let factors = names
        .into_iter()
        .zip(levels)
        .map(|(name, v)| Factor::new(name, v.labels))
        .collect::<Result<Vec<_>>>()?;
    SequenceDataset::new(StateSpace::new(tokens.labels)?, factors, subjects.labels, sequences)
}

pub fn write_dataset(dataset: &SequenceDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(dataset, file, path)
}

pub fn write_dataset_to<W: Write>(dataset: &SequenceDataset, writer: W, origin: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: origin.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(dataset.factors().iter().map(|f| f.name.as_str()));
    w.write_record(&header).map_err(csv_err)?;
    for seq in dataset.sequences() {
        let subject = &dataset.subjects()[seq.subject];
        for &t in &seq.tokens {
            let mut row: Vec<&str> = vec![&seq.id, subject, dataset.states().label(t)];
            row.extend(seq.predictors.iter().zip(dataset.factors()).map(|(&l, f)| f.levels[l].as_str()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(origin, e))
}

/// Provenance of the input dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub path: String,
    pub sha256: String,
    pub sequences: usize,
    pub transitions: usize,
}

/// Everything needed to rerun a fit exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub data: Option<DataRef>,
    pub settings: McmcSettings,
    pub hyper: Hyperparams,
    pub spec: PredictorSpec,
    /// Vocabularies used at ingestion; pins every index in the bundle.
    pub schema: DatasetSchema,
    /// Path of the raw trace dump, if one was written.
    pub trace: Option<String>,
}

/// Serialized result of a fit: top-level `meta`, `summaries` and `tests`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub meta: RunMeta,
    pub summaries: Option<PosteriorSummaries>,
    pub tests: Option<TestReport>,
}

/// Writes any value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_summary(bundle: &ResultBundle, path: impl AsRef<Path>) -> Result<()> {
    write_json(bundle, path)
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<ResultBundle> {
    read_json(path)
}

/// CSV text of a labeled square matrix: header `from,<labels>`, one row per state.
pub fn matrix_csv(matrix: &[Vec<f64>], labels: &[String]) -> String {
    let mut out = String::from("from");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (label, row) in labels.iter().zip(matrix) {
        out.push_str(label);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes `mean_<levels>.csv` and `sd_<levels>.csv` for every combination in
/// the bundle's summaries. Returns the written paths.
pub fn export_matrix_csvs(bundle: &ResultBundle, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let Some(summaries) = &bundle.summaries else {
        return Ok(Vec::new());
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for c in &summaries.transitions {
        let tag = c.levels.join("_");
        for (kind, m) in [("mean", &c.mean), ("sd", &c.sd)] {
            let path = dir.join(format!("{kind}_{tag}.csv"));
            fs::write(&path, matrix_csv(m, &summaries.states)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes retained draws as CSV: iteration, concentrations, `pi0` per state,
/// occupied clusters and labels per predictor.
pub fn write_trace_csv(trace: &Trace, states: &[String], predictors: &[Factor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iteration,alpha0,alpha_re");
    for s in states {
        let _ = write!(out, ",pi0_{s}");
    }
    for f in predictors {
        let _ = write!(out, ",k_{}", f.name);
        for l in &f.levels {
            let _ = write!(out, ",z_{}_{l}", f.name);
        }
    }
    out.push('\n');
    for d in &trace.draws {
        let _ = write!(out, "{},{},{}", d.iteration, d.alpha0, d.alpha_re);
        for p in &d.pi0 {
            let _ = write!(out, ",{p}");
        }
        for (k, z) in d.k_tilde.iter().zip(&d.z) {
            let _ = write!(out, ",{k}");
            for h in z {
                let _ = write!(out, ",{h}");
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const LOW_COLOR: (u8, u8, u8) = (0xff, 0xff, 0xff);
const HIGH_COLOR: (u8, u8, u8) = (0x08, 0x30, 0x6b);
const CELL: usize = 48;
const MARGIN: usize = 40;

fn lerp_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let ch = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        ch(LOW_COLOR.0, HIGH_COLOR.0),
        ch(LOW_COLOR.1, HIGH_COLOR.1),
        ch(LOW_COLOR.2, HIGH_COLOR.2)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG heatmap with one labeled rect per cell and a linear color scale from
/// `min(0, smallest value)` to the largest value.
pub fn heatmap_svg(matrix: &[Vec<f64>], row_labels: &[String], col_labels: &[String], title: &str) -> Result<String> {
    let cols = matrix.first().map_or(0, Vec::len);
    if matrix.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension("heatmap matrix is not rectangular".into()));
    }
    if row_labels.len() != matrix.len() || col_labels.len() != cols {
        return Err(Error::Dimension("heatmap labels do not match the matrix".into()));
    }
    let values = matrix.iter().flatten().copied().filter(|v| v.is_finite());
    let lo = values.clone().fold(0.0f64, f64::min);
    let hi = values.fold(lo, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (MARGIN + cols * CELL + 8, MARGIN + matrix.len() * CELL + 8);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(
        svg,
        "<desc>color-scale: linear; {lo} = {}; {hi} = {}</desc>",
        lerp_color(0.0),
        lerp_color(1.0)
    );
    for (j, l) in col_labels.iter().enumerate() {
        let x = MARGIN + j * CELL + CELL / 2;
        let _ = writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, MARGIN - 8, escape(l));
    }
    for (i, (row, l)) in matrix.iter().zip(row_labels).enumerate() {
        let y = MARGIN + i * CELL;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 6,
            y + CELL / 2 + 4,
            escape(l)
        );
        for (j, &v) in row.iter().enumerate() {
            let x = MARGIN + j * CELL;
            let t = (v - lo) / span;
            let ink = if t > 0.5 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#999999"/>"##,
                lerp_color(t)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.3}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn export_heatmap_svg(
    matrix: &[Vec<f64>],
    row_labels: &[String],
    col_labels: &[String],
    title: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let svg = heatmap_svg(matrix, row_labels, col_labels, title)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::run_chain;
    use crate::inference::{summarize, test_report};
    use crate::testutil::{spec_for, toy_dataset};
    use proptest::prelude::*;

    fn parse(text: &str, schema: &DatasetSchema) -> Result<SequenceDataset> {
        read_dataset_from(text.as_bytes(), schema, Path::new("test.csv"))
    }

    #[test]
    fn reads_one_sequence() {
        let ds = parse(
            "sequence_id,subject_id,token,g\nq,m1,s,F\nq,m1,d,F\nq,m1,s,F\n",
            &DatasetSchema::default(),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sequences()[0].tokens, vec![0, 1, 0]);
        assert_eq!(ds.states().tokens(), ["s", "d"]);
        assert_eq!(ds.factors()[0].levels, ["F"]);
    }

    #[test]
    fn rejects_malformed_files() {
        let d = DatasetSchema::default();
        let err = |text: &str| parse(text, &d).unwrap_err().to_string();
        assert!(err("seq,subject_id,token\n1,a,x\n1,a,y\n").contains("header"));
        assert!(err("sequence_id,subject_id,token\n1,a,x\n1,a,y\n2,a,x\n2,a,y\n1,a,x\n").contains("contiguous"));
        assert!(err("sequence_id,subject_id,token,g\n1,a,x,F\n1,a,y,W\n").contains("predictor"));
        assert!(err("sequence_id,subject_id,token\n1,a,x\n1,b,y\n").contains("subject"));
        let fixed = DatasetSchema {
            tokens: Some(vec!["x".into(), "y".into()]),
            predictors: None,
            subjects: None,
        };
        let e = parse("sequence_id,subject_id,token\n1,a,x\n1,a,z\n", &fixed).unwrap_err();
        assert!(e.to_string().contains("unknown token") && e.is_data_error());
    }

    #[test]
    fn dataset_round_trip() {
        let ds = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path, &DatasetSchema::of(&ds)).unwrap(), ds);
        assert!(read_dataset(dir.path().join("missing.csv"), &DatasetSchema::default()).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let ds = toy_dataset();
        let spec = spec_for(&ds, 1.0);
        let hyper = Hyperparams::from_dataset(&ds).unwrap();
        let settings = McmcSettings {
            iterations: 30,
            burn_in: 10,
            thin: 2,
            seed: 1,
            parallel: false,
        };
        let trace = run_chain(&ds, &spec, &hyper, &settings).unwrap();
        let meta = RunMeta {
            tool: "memc".into(),
            version: "0".into(),
            command: "fit".into(),
            data: None,
            settings,
            hyper,
            spec,
            schema: DatasetSchema::of(&ds),
            trace: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let empty = ResultBundle {
            meta: meta.clone(),
            summaries: None,
            tests: None,
        };
        write_summary(&empty, dir.path().join("e.json")).unwrap();
        assert_eq!(read_summary(dir.path().join("e.json")).unwrap(), empty);

        let full = ResultBundle {
            meta,
            summaries: Some(summarize(&trace, &ds).unwrap()),
            tests: Some(test_report(&trace, ds.factors(), 0.02).unwrap()),
        };
        let path = dir.path().join("b.json");
        write_summary(&full, &path).unwrap();
        assert_eq!(read_summary(&path).unwrap(), full);
        let text = fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["meta", "summaries", "tests"]);

        let csvs = export_matrix_csvs(&full, dir.path().join("m")).unwrap();
        assert_eq!(csvs.len(), 4);
        write_trace_csv(&trace, ds.states().tokens(), ds.factors(), dir.path().join("t.csv")).unwrap();

        fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
        assert!(matches!(read_summary(dir.path().join("bad.json")), Err(Error::Json { .. })));
    }

    #[test]
    fn heatmap_cells_and_determinism() {
        let one = heatmap_svg(&[vec![0.4]], &["a".into()], &["b".into()], "t").unwrap();
        assert_eq!(one.matches("<rect").count(), 1);
        let labels: Vec<String> = ["d", "m", "s", "u", "x"].iter().map(|s| s.to_string()).collect();
        let m: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| (i * 5 + j) as f64 / 24.0).collect()).collect();
        let a = heatmap_svg(&m, &labels, &labels, "P").unwrap();
        assert_eq!(a.matches("<rect").count(), 25);
        assert!(a.contains("color-scale: linear"));
        assert_eq!(a, heatmap_svg(&m, &labels, &labels, "P").unwrap());
        assert!(heatmap_svg(&[vec![0.1, 0.2], vec![0.3]], &labels[..2], &labels[..2], "x").is_err());
    }

    #[test]
    fn heatmap_colors_follow_linear_scale() {
        let m = vec![vec![0.25, 0.75], vec![1.0, 0.0]];
        let labels = vec!["a".to_string(), "b".to_string()];
        let svg = heatmap_svg(&m, &labels, &labels, "g").unwrap();
        // 0.25 of the way from ffffff to 08306b, channel by channel
        assert!(svg.contains(r##"fill="#c1cbda""##));
        assert!(svg.contains(r##"fill="#08306b""##));
        assert!(svg.contains(r##"fill="#ffffff" stroke"##));
        assert!(svg.contains(">0.750</text>"));
    }

    #[test]
    fn heatmap_matches_golden_file() {
        let m = vec![vec![0.25, 0.75], vec![1.0, 0.0]];
        let labels = vec!["a".to_string(), "b".to_string()];
        let svg = heatmap_svg(&m, &labels, &labels, "golden").unwrap();
        assert_eq!(svg, include_str!("../fixtures/heatmap_golden.svg"));
    }

    fn arb_dataset() -> impl Strategy<Value = SequenceDataset> {
        let seq = (0usize..3, 0usize..2, proptest::collection::vec(0usize..4, 2..12));
        proptest::collection::vec(seq, 1..6).prop_map(|seqs| {
            let sequences = seqs
                .into_iter()
                .enumerate()
                .map(|(k, (subject, level, tokens))| Sequence {
                    id: format!("s{k}"),
                    subject,
                    predictors: vec![level],
                    tokens,
                })
                .collect();
            SequenceDataset::new(
                StateSpace::new(["a", "b", "c", "d"]).unwrap(),
                vec![Factor::new("g", ["F", "W"]).unwrap()],
                vec!["m1".into(), "m2".into(), "m3".into()],
                sequences,
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn csv_round_trip(ds in arb_dataset()) {
            let mut buf = Vec::new();
            write_dataset_to(&ds, &mut buf, Path::new("mem")).unwrap();
            let back = read_dataset_from(buf.as_slice(), &DatasetSchema::of(&ds), Path::new("mem")).unwrap();
            prop_assert_eq!(back.sequences(), ds.sequences());
            prop_assert_eq!(back.states(), ds.states());
            prop_assert_eq!(back.factors(), ds.factors());
        }
    }
}
