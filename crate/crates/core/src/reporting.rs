//! Complexity reports, filtration traces on disk, and the complexity versus
//! accuracy fit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{unique_examples, Dataset, NormalizationPolicy};
use crate::encodings::{
    encode_lda, fit_lda, load_embeddings, EmbeddingMatrix, LdaModel, LdaParams,
};
use crate::error::{Error, Result};
use crate::filtration::{sample_indices, FiltrationConfig, FiltrationTrace, TraceStep};
use crate::geometric::{geometric_measures, GeometricMeasures};
use crate::lexical::{lexical_measures, LexicalMeasures, Scope, ENTROPY_ORDERS};
use crate::record::{parse_record_value, to_record};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_MAX_GEOMETRIC_POINTS: usize = 10_000;

/// LDA settings; unset fields take the data-dependent defaults of
/// [`LdaParams::defaults_for`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LdaSettings {
    pub topics: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: Option<usize>,
}

impl LdaSettings {
    pub fn resolve(&self, d: &Dataset, seed: u64) -> LdaParams {
        let mut params = match self.topics {
            Some(k) => LdaParams::with_topics(k, seed),
            None => LdaParams::defaults_for(d, seed),
        };
        if let Some(a) = self.alpha {
            params.doc_topic_prior = a;
        }
        if let Some(b) = self.beta {
            params.topic_word_prior = b;
        }
        if let Some(i) = self.iterations {
            params.iterations = i;
        }
        params
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EncoderSpec {
    Lda,
    External { path: PathBuf },
}

/// Everything besides the dataset that determines a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub scope: Scope,
    pub encoders: Vec<EncoderSpec>,
    pub lda: LdaSettings,
    pub seed: u64,
    pub max_geometric_points: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            scope: Scope::default(),
            encoders: Vec::new(),
            lda: LdaSettings::default(),
            seed: 0,
            max_geometric_points: DEFAULT_MAX_GEOMETRIC_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_path: String,
    pub policy: NormalizationPolicy,
    pub scope: Scope,
    pub seed: u64,
    pub examples: usize,
    pub dropped_empty: usize,
    /// Vertices of the geometric measures before any subsampling.
    pub analyzed_examples: usize,
    pub geometric_points: usize,
    pub max_geometric_points: usize,
    pub subsampled: bool,
    pub metric_tag: String,
}

/// All measures for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub tool_version: String,
    pub generated_at: Option<String>,
    pub provenance: Provenance,
    pub lexical: LexicalMeasures,
    pub geometric: Vec<GeometricMeasures>,
    pub mst_average: Option<f64>,
    pub ari_average: Option<f64>,
    /// Degenerate computations encountered while measuring.
    pub flags: Vec<String>,
}

/// Short display name for an encoder tag.
pub fn encoder_display_name(tag: &str) -> String {
    if tag.starts_with("lda") {
        "LDA".into()
    } else if let Some(path) = tag.strip_prefix("external:") {
        Path::new(path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(path)
            .to_owned()
    } else {
        tag.to_owned()
    }
}

impl ComplexityReport {
    pub fn is_degenerate(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Looks up a numeric measure by name: `average_entropy`,
    /// `unigram_entropy`, `bigram_entropy`, `trigram_entropy`,
    /// `entropy_<n>`, `vocabulary_size`, `unique_transcripts`,
    /// `mst_average`, `ari_average`, or `mst:<encoder>` / `ari:<encoder>`
    /// where `<encoder>` is a display name or a tag prefix.
    pub fn column(&self, name: &str) -> Option<f64> {
        let lex = &self.lexical;
        match name {
            "average_entropy" => return Some(lex.average_entropy),
            "unigram_entropy" => return lex.entropy(1),
            "bigram_entropy" => return lex.entropy(2),
            "trigram_entropy" => return lex.entropy(3),
            "vocabulary_size" => return Some(lex.vocabulary_size as f64),
            "unique_transcripts" => return Some(lex.unique_transcripts as f64),
            "mst_average" => return self.mst_average,
            "ari_average" => return self.ari_average,
            _ => {}
        }
        if let Some(n) = name.strip_prefix("entropy_") {
            return lex.entropy(n.parse().ok()?);
        }
        let (kind, encoder) = name.split_once(':')?;
        let g = self.geometric.iter().find(|g| {
            encoder_display_name(&g.encoder_tag).eq_ignore_ascii_case(encoder)
                || g.encoder_tag.starts_with(encoder)
        })?;
        match kind {
            "mst" => Some(g.mst_complexity),
            "ari" => Some(g.ari_complexity),
            _ => None,
        }
    }
}

/// Arithmetic mean of per-encoder scores.
pub fn average_geometric(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot average an empty list of scores"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Half-away-from-zero rounding for presentation.
pub fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale).round() / scale
}

/// Builds reports under one [`MeasureConfig`]. An analyzer created with
/// [`Analyzer::fitted_on`] keeps the LDA model of the parent dataset and
/// encodes every later dataset against it.
pub struct Analyzer {
    config: MeasureConfig,
    lda: Option<LdaModel>,
}

impl Analyzer {
    pub fn new(config: MeasureConfig) -> Self {
        Self { config, lda: None }
    }

    pub fn fitted_on(config: MeasureConfig, parent: &Dataset) -> Result<Self> {
        let mut analyzer = Self::new(config);
        if analyzer.config.encoders.contains(&EncoderSpec::Lda) {
            let (points, _, _) = analyzer.geometric_points(parent);
            if points.len() >= 2 {
                let params = analyzer.config.lda.resolve(&points, analyzer.config.seed);
                analyzer.lda = Some(fit_lda(&points, params)?);
            }
        }
        Ok(analyzer)
    }

    pub fn config(&self) -> &MeasureConfig {
        &self.config
    }

    fn geometric_points(&self, d: &Dataset) -> (Dataset, usize, bool) {
        let analyzed = match self.config.scope {
            Scope::UniqueTranscripts => unique_examples(d),
            Scope::AllExamples => d.clone(),
        };
        let analyzed_count = analyzed.len();
        let cap = self.config.max_geometric_points.max(2);
        if analyzed_count > cap {
            let keep = sample_indices(analyzed_count, cap, self.config.seed);
            (analyzed.select(&keep), analyzed_count, true)
        } else {
            (analyzed, analyzed_count, false)
        }
    }

    fn encode(
        &self,
        spec: &EncoderSpec,
        points: &Dataset,
        flags: &mut Vec<String>,
    ) -> Result<EmbeddingMatrix> {
        match spec {
            EncoderSpec::External { path } => load_embeddings(path, points),
            EncoderSpec::Lda => {
                let fitted;
                let model = match &self.lda {
                    Some(m) => m,
                    None => {
                        let params = self.config.lda.resolve(points, self.config.seed);
                        fitted = fit_lda(points, params)?;
                        &fitted
                    }
                };
                if model.is_degenerate() {
                    flags.push("lda.vocabulary-below-topics".into());
                }
                encode_lda(model, points)
            }
        }
    }

    pub fn report(&self, d: &Dataset) -> Result<ComplexityReport> {
        let mut flags = Vec::new();
        let lexical = lexical_measures(d, self.config.scope)?;
        for n in &lexical.empty_orders {
            flags.push(format!("lexical.empty-order-{n}"));
        }

        let (points, analyzed_examples, subsampled) = self.geometric_points(d);
        let mut geometric = Vec::new();
        if !self.config.encoders.is_empty() {
            if points.len() < 2 {
                flags.push("geometric.too-few-points".into());
            } else {
                let labels = points.labels();
                for spec in &self.config.encoders {
                    let encoding = self.encode(spec, &points, &mut flags)?;
                    let detail = geometric_measures(&encoding, &labels)?;
                    let g = detail.measures;
                    if g.mst_degenerate {
                        flags.push(format!("mst.degenerate:{}", g.encoder_tag));
                    }
                    if g.ari_degenerate {
                        flags.push(format!("ari.degenerate:{}", g.encoder_tag));
                    }
                    geometric.push(g);
                }
            }
        }
        let mst: Vec<f64> = geometric.iter().map(|g| g.mst_complexity).collect();
        let ari: Vec<f64> = geometric.iter().map(|g| g.ari_complexity).collect();
        flags.sort();
        flags.dedup();
        Ok(ComplexityReport {
            tool_version: TOOL_VERSION.into(),
            generated_at: None,
            provenance: Provenance {
                source_path: d.source_path().to_owned(),
                policy: *d.policy(),
                scope: self.config.scope,
                seed: self.config.seed,
                examples: d.len(),
                dropped_empty: d.summary().dropped_empty.len(),
                analyzed_examples,
                geometric_points: if geometric.is_empty() {
                    0
                } else {
                    points.len()
                },
                max_geometric_points: self.config.max_geometric_points,
                subsampled: subsampled && !geometric.is_empty(),
                metric_tag: crate::geometric::COSINE_METRIC.into(),
            },
            lexical,
            geometric,
            mst_average: average_geometric(&mst).ok(),
            ari_average: average_geometric(&ari).ok(),
            flags,
        })
    }
}

/// Builds a report for `d` under `cfg`.
pub fn build_report(d: &Dataset, cfg: &MeasureConfig) -> Result<ComplexityReport> {
    Analyzer::new(cfg.clone()).report(d)
}

/// Runs a filtration and reports every step, encoding sub-datasets against
/// an LDA model fitted on the parent.
pub fn filtration_report_trace(
    d: &Dataset,
    filter: &FiltrationConfig,
    measures: &MeasureConfig,
) -> Result<FiltrationTrace<ComplexityReport>> {
    let analyzer = Analyzer::fitted_on(measures.clone(), d)?;
    crate::filtration::filtration_sequence(d, filter, |x| analyzer.report(x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub key: String,
    pub complexity: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub complexity_column: String,
    pub relative: bool,
    pub points: Vec<CorrelationPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Accuracy had zero variance; `r_squared` is defined as 1.
    pub degenerate: bool,
}

/// Ordinary least squares line through `points` with `r_squared =
/// 1 - SS_res / SS_tot`.
pub fn linear_fit_r2(points: &[(f64, f64)]) -> Result<CorrelationResult> {
    if points.len() < 2 {
        return Err(Error::invalid("a linear fit needs at least 2 points"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("fit points must be finite"));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("complexity values have zero variance"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let (r_squared, degenerate) = if syy == 0.0 {
        (1.0, true)
    } else {
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
            .sum();
        ((1.0 - ss_res / syy).clamp(0.0, 1.0), false)
    };
    Ok(CorrelationResult {
        complexity_column: "x".into(),
        relative: false,
        points: points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| CorrelationPoint {
                key: i.to_string(),
                complexity: x,
                accuracy: y,
            })
            .collect(),
        slope,
        intercept,
        r_squared,
        degenerate,
    })
}

/// Divides every accuracy by the accuracy at the lowest complexity.
pub fn relative_to_min_complexity(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let base = points
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::invalid("no points to normalize"))?
        .1;
    if base == 0.0 {
        return Err(Error::invalid("accuracy at minimum complexity is zero"));
    }
    Ok(points.iter().map(|&(x, y)| (x, y / base)).collect())
}

/// Per-step summary stored in a trace manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub examples: usize,
    pub removed: usize,
    pub average_entropy: f64,
    pub vocabulary_size: usize,
    pub unique_transcripts: usize,
    pub mst_average: Option<f64>,
    pub ari_average: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub tool_version: String,
    pub source_path: String,
    pub config: FiltrationConfig,
    pub aborted_at: Option<usize>,
    pub steps: Vec<StepSummary>,
}

impl TraceManifest {
    pub fn from_trace(trace: &FiltrationTrace<ComplexityReport>) -> Self {
        Self {
            tool_version: TOOL_VERSION.into(),
            source_path: trace.source_path.clone(),
            config: trace.config,
            aborted_at: trace.aborted_at,
            steps: trace
                .steps
                .iter()
                .map(|s| StepSummary {
                    step: s.step,
                    examples: s.ids.len(),
                    removed: s.removed,
                    average_entropy: s.report.lexical.average_entropy,
                    vocabulary_size: s.report.lexical.vocabulary_size,
                    unique_transcripts: s.report.lexical.unique_transcripts,
                    mst_average: s.report.mst_average,
                    ari_average: s.report.ari_average,
                    flags: s.report.flags.clone(),
                })
                .collect(),
        }
    }
}

/// Every artifact the tool serializes. The machine form carries a `kind`
/// key next to the fields of the payload.
#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    ComplexityReport(ComplexityReport),
    FiltrationTrace(FiltrationTrace<ComplexityReport>),
    TraceManifest(TraceManifest),
    Correlation(CorrelationResult),
}

fn payload<T: Serialize>(kind: &str, value: &T) -> Result<Value> {
    let mut tree = serde_json::to_value(value).map_err(|e| Error::invalid(e.to_string()))?;
    let map = tree
        .as_object_mut()
        .ok_or_else(|| Error::invalid("record payload must be an object"))?;
    map.insert("kind".into(), Value::String(kind.into()));
    Ok(tree)
}

fn typed<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::RecordParse {
        line: 0,
        reason: e.to_string(),
    })
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::ComplexityReport(_) => "complexity-report",
            Record::FiltrationTrace(_) => "filtration-trace",
            Record::TraceManifest(_) => "trace-manifest",
            Record::Correlation(_) => "correlation",
        }
    }

    pub fn to_machine(&self) -> Result<String> {
        let tree = match self {
            Record::ComplexityReport(r) => payload(self.kind(), r)?,
            Record::FiltrationTrace(t) => payload(self.kind(), t)?,
            Record::TraceManifest(m) => payload(self.kind(), m)?,
            Record::Correlation(c) => payload(self.kind(), c)?,
        };
        to_record(&tree)
    }

    pub fn from_machine(text: &str) -> Result<Self> {
        let mut tree = parse_record_value(text)?;
        let kind = tree
            .as_object_mut()
            .and_then(|m| m.remove("kind"))
            .and_then(|k| k.as_str().map(str::to_owned))
            .ok_or_else(|| Error::RecordParse {
                line: 0,
                reason: "missing kind".into(),
            })?;
        Ok(match kind.as_str() {
            "complexity-report" => Record::ComplexityReport(typed(tree)?),
            "filtration-trace" => Record::FiltrationTrace(typed(tree)?),
            "trace-manifest" => Record::TraceManifest(typed(tree)?),
            "correlation" => Record::Correlation(typed(tree)?),
            other => {
                return Err(Error::RecordParse {
                    line: 0,
                    reason: format!("unknown record kind {other:?}"),
                })
            }
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_machine(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    HumanTable,
    MachineRecord,
    PlotData,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human-table" | "human" | "table" => Ok(OutputFormat::HumanTable),
            "machine-record" | "machine" | "record" => Ok(OutputFormat::MachineRecord),
            "plot-data" | "plot" => Ok(OutputFormat::PlotData),
            other => Err(Error::invalid(format!("unknown output format {other:?}"))),
        }
    }
}

fn fmt1(v: f64) -> String {
    format!("{:.1}", round_to(v, 1))
}

fn fmt_opt(v: Option<f64>, decimals: i32) -> String {
    match v {
        Some(v) => format!("{:.*}", decimals as usize, round_to(v, decimals)),
        None => "-".into(),
    }
}

fn table(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let _ = write!(line, "{cell:<width$}", width = widths[c]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

const ORDER_NAMES: [&str; 3] = ["unigram", "bigram", "trigram"];

fn report_table(r: &ComplexityReport) -> String {
    let p = &r.provenance;
    let mut out = format!(
        "Semantic complexity of {} ({} examples, scope {})\n",
        p.source_path,
        p.examples,
        p.scope.as_str()
    );
    let row = |a: &str, b: &str, c: &str, v: String| vec![a.into(), b.into(), c.into(), v];
    let lex = &r.lexical;
    let mut rows = vec![
        row("group", "measure", "", "value".into()),
        row("Lex.", "vocabulary", "", lex.vocabulary_size.to_string()),
        row(
            "",
            "unique transcripts",
            "",
            lex.unique_transcripts.to_string(),
        ),
    ];
    for (n, name) in ENTROPY_ORDERS.iter().zip(ORDER_NAMES) {
        let label = if *n == 1 { "entropy" } else { "" };
        rows.push(row("", label, name, fmt_opt(lex.entropy(*n), 1)));
    }
    rows.push(row("", "", "average", fmt1(lex.average_entropy)));
    if !r.geometric.is_empty() {
        for (i, (kind, pick, avg)) in [
            (
                "MST",
                (|g: &GeometricMeasures| g.mst_complexity) as fn(&GeometricMeasures) -> f64,
                r.mst_average,
            ),
            (
                "ARI",
                |g: &GeometricMeasures| g.ari_complexity,
                r.ari_average,
            ),
        ]
        .into_iter()
        .enumerate()
        {
            for (j, g) in r.geometric.iter().enumerate() {
                let group = if i == 0 && j == 0 { "Geo." } else { "" };
                let measure = if j == 0 { kind } else { "" };
                rows.push(row(
                    group,
                    measure,
                    &encoder_display_name(&g.encoder_tag),
                    fmt1(pick(g)),
                ));
            }
            rows.push(row("", "", "average", fmt_opt(avg, 1)));
        }
    }
    out.push_str(&table(&rows));
    for g in &r.geometric {
        let _ = writeln!(out, "encoder {}: {} points", g.encoder_tag, g.points);
    }
    if p.subsampled {
        let _ = writeln!(
            out,
            "geometric measures on a seeded subsample of {} of {} examples",
            p.geometric_points, p.analyzed_examples
        );
    }
    for flag in &r.flags {
        let _ = writeln!(out, "flag: {flag}");
    }
    out
}

fn summary_rows(steps: &[StepSummary]) -> String {
    let mut rows = vec![vec![
        "step".to_string(),
        "examples".into(),
        "avg entropy".into(),
        "vocab size".into(),
        "unique transcripts".into(),
        "avg MST".into(),
        "avg ARI".into(),
    ]];
    for s in steps {
        rows.push(vec![
            s.step.to_string(),
            s.examples.to_string(),
            fmt1(s.average_entropy),
            s.vocabulary_size.to_string(),
            s.unique_transcripts.to_string(),
            fmt_opt(s.mst_average, 1),
            fmt_opt(s.ari_average, 1),
        ]);
    }
    table(&rows)
}

fn manifest_table(m: &TraceManifest) -> String {
    let mut out = format!(
        "Filtration of {} (order {}, removal fraction {}, {} steps requested)\n",
        m.source_path, m.config.ngram_order, m.config.removal_fraction, m.config.steps
    );
    out.push_str(&summary_rows(&m.steps));
    if let Some(step) = m.aborted_at {
        let _ = writeln!(
            out,
            "aborted at step {step}: removal would empty the dataset"
        );
    }
    out
}

fn correlation_table(c: &CorrelationResult) -> String {
    let mut rows = vec![vec![
        "key".to_string(),
        c.complexity_column.clone(),
        if c.relative {
            "relative accuracy"
        } else {
            "accuracy"
        }
        .into(),
    ]];
    for p in &c.points {
        rows.push(vec![
            p.key.clone(),
            format!("{:.4}", p.complexity),
            format!("{:.4}", p.accuracy),
        ]);
    }
    let mut out = table(&rows);
    let _ = writeln!(
        out,
        "slope {:.6}  intercept {:.6}  R^2 {:.4}{}",
        c.slope,
        c.intercept,
        c.r_squared,
        if c.degenerate {
            "  (constant accuracy)"
        } else {
            ""
        }
    );
    out
}

fn plot_lines(header: &str, rows: impl IntoIterator<Item = (String, String)>) -> String {
    let mut out = format!("# {header}\n");
    for (x, y) in rows {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

fn plot_value(v: f64) -> String {
    format!("{v:?}")
}

/// Renders a record in `format`.
pub fn render(record: &Record, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::MachineRecord => return record.to_machine(),
        OutputFormat::HumanTable => {
            return Ok(match record {
                Record::ComplexityReport(r) => report_table(r),
                Record::FiltrationTrace(t) => manifest_table(&TraceManifest::from_trace(t)),
                Record::TraceManifest(m) => manifest_table(m),
                Record::Correlation(c) => correlation_table(c),
            })
        }
        OutputFormat::PlotData => {}
    }
    let steps = |s: &[StepSummary]| {
        plot_lines(
            "x=step y=average_entropy",
            s.iter()
                .map(|s| (s.step.to_string(), plot_value(s.average_entropy)))
                .collect::<Vec<_>>(),
        )
    };
    Ok(match record {
        Record::ComplexityReport(r) => plot_lines(
            "x=ngram_order y=entropy",
            r.lexical
                .entropy_by_order
                .iter()
                .map(|(n, h)| (n.to_string(), plot_value(*h))),
        ),
        Record::FiltrationTrace(t) => steps(&TraceManifest::from_trace(t).steps),
        Record::TraceManifest(m) => steps(&m.steps),
        Record::Correlation(c) => plot_lines(
            &format!("x={} y=accuracy", c.complexity_column),
            c.points
                .iter()
                .map(|p| (plot_value(p.complexity), plot_value(p.accuracy))),
        ),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Renders `record` and writes it to `path`.
pub fn emit_report(record: &Record, format: OutputFormat, path: &Path) -> Result<()> {
    write_file(path, &render(record, format)?)
}

pub const TRACE_MANIFEST: &str = "trace_manifest.rec";
pub const STEP_REPORT: &str = "report.rec";
pub const STEP_IDS: &str = "ids.txt";

fn step_dir(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step}"))
}

/// Persists a trace as `step_<k>/ids.txt`, `step_<k>/report.rec` and a
/// `trace_manifest.rec`.
pub fn write_trace_dir(trace: &FiltrationTrace<ComplexityReport>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &trace.steps {
        let sd = step_dir(dir, s.step);
        fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        let mut ids = s.ids.join("\n");
        ids.push('\n');
        write_file(&sd.join(STEP_IDS), &ids)?;
        let record = Record::ComplexityReport(s.report.clone());
        write_file(&sd.join(STEP_REPORT), &record.to_machine()?)?;
    }
    let manifest = Record::TraceManifest(TraceManifest::from_trace(trace));
    write_file(&dir.join(TRACE_MANIFEST), &manifest.to_machine()?)
}

fn read_report(path: &Path) -> Result<ComplexityReport> {
    match Record::read(path)? {
        Record::ComplexityReport(r) => Ok(r),
        _ => Err(Error::RecordParse {
            line: 0,
            reason: format!("{} is not a complexity report", path.display()),
        }),
    }
}

/// Loads a trace directory written by [`write_trace_dir`].
pub fn read_trace_dir(dir: &Path) -> Result<FiltrationTrace<ComplexityReport>> {
    let manifest_path = dir.join(TRACE_MANIFEST);
    let manifest = match Record::read(&manifest_path)? {
        Record::TraceManifest(m) => m,
        _ => {
            return Err(Error::RecordParse {
                line: 0,
                reason: format!("{} is not a trace manifest", manifest_path.display()),
            })
        }
    };
    let mut steps = Vec::with_capacity(manifest.steps.len());
    for s in &manifest.steps {
        let sd = step_dir(dir, s.step);
        let ids_path = sd.join(STEP_IDS);
        let ids = fs::read_to_string(&ids_path)
            .map_err(|e| Error::io(&ids_path, e))?
            .lines()
            .map(str::to_owned)
            .collect();
        steps.push(TraceStep {
            step: s.step,
            ids,
            removed: s.removed,
            report: read_report(&sd.join(STEP_REPORT))?,
        });
    }
    Ok(FiltrationTrace {
        config: manifest.config,
        source_path: manifest.source_path,
        steps,
        aborted_at: manifest.aborted_at,
    })
}

/// Reports keyed for correlation: step indices for a trace directory,
/// otherwise `<name>.rec` files and `<name>/report.rec` subdirectories keyed
/// by `<name>`.
pub fn read_reports_keyed(dir: &Path) -> Result<BTreeMap<String, ComplexityReport>> {
    if dir.join(TRACE_MANIFEST).exists() {
        let trace = read_trace_dir(dir)?;
        return Ok(trace
            .steps
            .into_iter()
            .map(|s| (s.step.to_string(), s.report))
            .collect());
    }
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let key = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        if path.is_dir() && path.join(STEP_REPORT).exists() {
            out.insert(key, read_report(&path.join(STEP_REPORT))?);
        } else if path.extension().is_some_and(|e| e == "rec") {
            if let Record::ComplexityReport(r) = Record::read(&path)? {
                out.insert(key, r);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "{} holds no complexity reports",
            dir.display()
        )));
    }
    Ok(out)
}

/// Parses `key,accuracy` lines (comma, tab or whitespace separated). A
/// trailing `%` is accepted; a header line whose value is not numeric is
/// skipped.
pub fn parse_accuracy_file(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line
            .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
            .filter(|s| !s.is_empty());
        let (Some(key), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::RecordParse {
                line: index + 1,
                reason: "expected two columns".into(),
            });
        };
        match value.trim_end_matches('%').parse::<f64>() {
            Ok(v) if v.is_finite() => out.push((key.to_owned(), v)),
            _ if out.is_empty() && index == 0 => continue,
            _ => {
                return Err(Error::RecordParse {
                    line: index + 1,
                    reason: format!("cannot parse accuracy {value:?}"),
                })
            }
        }
    }
    Ok(out)
}

/// Pairs each accuracy with the named complexity column of the report with
/// the same key and fits a line.
pub fn correlate(
    reports: &BTreeMap<String, ComplexityReport>,
    accuracies: &[(String, f64)],
    column: &str,
    relative: bool,
) -> Result<CorrelationResult> {
    let mut keys = Vec::new();
    let mut points = Vec::new();
    for (key, accuracy) in accuracies {
        let report = reports
            .get(key)
            .ok_or_else(|| Error::invalid(format!("no report for accuracy key {key:?}")))?;
        let x = report
            .column(column)
            .ok_or_else(|| Error::invalid(format!("report {key:?} has no column {column:?}")))?;
        keys.push(key.clone());
        points.push((x, *accuracy));
    }
    if relative {
        points = relative_to_min_complexity(&points)?;
    }
    let mut fit = linear_fit_r2(&points)?;
    for (p, key) in fit.points.iter_mut().zip(keys) {
        p.key = key;
    }
    fit.complexity_column = column.to_owned();
    fit.relative = relative;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::filtration_sequence;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        Dataset::from_pairs(
            &[
                ("turn on the lights", "on"),
                ("switch the lights on", "on"),
                ("turn off the lights", "off"),
                ("lights off please", "off"),
                ("turn on the lights", "on"),
            ],
            NormalizationPolicy::default(),
        )
        .unwrap()
    }

    fn lda_config() -> MeasureConfig {
        MeasureConfig {
            encoders: vec![EncoderSpec::Lda],
            lda: LdaSettings {
                topics: Some(2),
                iterations: Some(30),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Normal equations solved with Cramer's rule.
    fn ols_oracle(points: &[(f64, f64)]) -> (f64, f64, f64) {
        let n = points.len() as f64;
        let (sx, sy) = points
            .iter()
            .fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let intercept = (sy * sxx - sx * sxy) / det;
        let slope = (n * sxy - sx * sy) / det;
        let mean = sy / n;
        let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (slope, intercept, 1.0 - ss_res / ss_tot)
    }

    #[test]
    fn average_geometric_cases() {
        let avg = average_geometric(&[0.3, 0.0]).unwrap();
        assert_eq!(format!("{:.1}", round_to(avg, 1)), "0.2");
        assert_eq!(average_geometric(&[0.42]).unwrap(), 0.42);
        assert!((average_geometric(&[0.1, 0.2]).unwrap() - 0.15).abs() < 1e-15);
        assert!(average_geometric(&[]).is_err());
    }

    #[test]
    fn linear_fit_cases() {
        let line: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        let fit = linear_fit_r2(&line).unwrap();
        assert_eq!(fit.r_squared, 1.0);
        assert!((fit.slope + 0.5).abs() < 1e-12);

        let flat = linear_fit_r2(&[(1.0, 2.0), (2.0, 2.0), (4.0, 2.0)]).unwrap();
        assert_eq!(flat.r_squared, 1.0);
        assert!(flat.degenerate);

        assert!(linear_fit_r2(&[(1.0, 2.0)]).is_err());
        assert!(linear_fit_r2(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn lexical_only_report_has_no_geometry() {
        let r = build_report(&toy(), &MeasureConfig::default()).unwrap();
        assert!(r.geometric.is_empty());
        assert_eq!(r.mst_average, None);
        assert_eq!(r.lexical.unique_transcripts, 4);
        assert_eq!(r.provenance.examples, 5);
    }

    #[test]
    fn two_example_lda_report_is_in_range() {
        let d = Dataset::from_pairs(
            &[("play some jazz", "play"), ("stop the music", "stop")],
            Default::default(),
        )
        .unwrap();
        let r = build_report(&d, &lda_config()).unwrap();
        let g = &r.geometric[0];
        assert!((0.0..=1.0).contains(&g.mst_complexity));
        assert!((0.0..=1.0).contains(&g.ari_complexity));
        assert!((-1.0..=1.0).contains(&g.ari));
        // two points with different labels: the only tree edge is inter-class
        assert_eq!(g.mst_complexity, 1.0);
        // k = 2 clusters of one point each match the labels exactly
        assert_eq!(g.ari, 1.0);
        assert_eq!(g.ari_complexity, 0.0);
        let lex = lexical_measures(&d, Scope::UniqueTranscripts).unwrap();
        assert_eq!(r.lexical, lex);
    }

    #[test]
    fn report_is_reproducible_and_round_trips() {
        let a = build_report(&toy(), &lda_config()).unwrap();
        let b = build_report(&toy(), &lda_config()).unwrap();
        assert_eq!(a, b);
        let record = Record::ComplexityReport(a);
        let text = record.to_machine().unwrap();
        assert_eq!(Record::from_machine(&text).unwrap(), record);
        assert_eq!(text, Record::ComplexityReport(b).to_machine().unwrap());
    }

    #[test]
    fn human_table_has_table_one_rows() {
        let mut r = build_report(&toy(), &lda_config()).unwrap();
        let mut second = r.geometric[0].clone();
        second.encoder_tag = "external:/data/use.tsv".into();
        r.geometric.push(second);
        let text = render(&Record::ComplexityReport(r), OutputFormat::HumanTable).unwrap();
        for needle in [
            "vocabulary",
            "unique transcripts",
            "entropy",
            "unigram",
            "bigram",
            "trigram",
            "average",
            "MST",
            "ARI",
            "LDA",
            "use",
        ] {
            assert!(text.contains(needle), "missing {needle}:\n{text}");
        }
        assert_eq!(text.matches("average").count(), 3);
    }

    #[test]
    fn trace_plot_data_has_one_row_per_step() {
        let d = toy();
        let cfg = FiltrationConfig {
            ngram_order: 1,
            removal_fraction: 0.2,
            steps: 3,
            ..Default::default()
        };
        let analyzer = Analyzer::new(MeasureConfig::default());
        let trace = filtration_sequence(&d, &cfg, |x| analyzer.report(x)).unwrap();
        let text = render(
            &Record::FiltrationTrace(trace.clone()),
            OutputFormat::PlotData,
        )
        .unwrap();
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, trace.len());
        let record = Record::FiltrationTrace(trace);
        assert_eq!(
            Record::from_machine(&record.to_machine().unwrap()).unwrap(),
            record
        );
    }

    #[test]
    fn trace_directory_round_trips() {
        let d = toy();
        let cfg = FiltrationConfig {
            ngram_order: 1,
            removal_fraction: 0.2,
            steps: 3,
            ..Default::default()
        };
        let trace = filtration_report_trace(&d, &cfg, &lda_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trace_dir(&trace, dir.path()).unwrap();
        assert_eq!(read_trace_dir(dir.path()).unwrap(), trace);
        let keyed = read_reports_keyed(dir.path()).unwrap();
        assert_eq!(keyed.len(), trace.len());
    }

    #[test]
    fn accuracy_file_parsing() {
        let rows = parse_accuracy_file("step,accuracy\n0,67.5%\n1\t72.1\n\n2 80.9\n").unwrap();
        assert_eq!(
            rows,
            vec![("0".into(), 67.5), ("1".into(), 72.1), ("2".into(), 80.9)]
        );
        assert!(parse_accuracy_file("0,1\n1,abc\n").is_err());
        assert!(parse_accuracy_file("0,1,2\n").is_err());
    }

    #[test]
    fn correlate_relative_uses_min_complexity() {
        let base = build_report(&toy(), &MeasureConfig::default()).unwrap();
        let mut reports = BTreeMap::new();
        for (k, h) in [("0", 9.0), ("1", 6.0), ("2", 3.0)] {
            let mut r = base.clone();
            r.lexical.average_entropy = h;
            reports.insert(k.to_string(), r);
        }
        let acc = vec![("0".into(), 60.0), ("1".into(), 80.0), ("2".into(), 100.0)];
        let fit = correlate(&reports, &acc, "average_entropy", true).unwrap();
        assert_eq!(fit.points[2].accuracy, 1.0);
        assert!((fit.points[0].accuracy - 0.6).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.slope < 0.0);
        assert!(correlate(&reports, &acc, "nope", false).is_err());
    }

    #[test]
    fn column_lookup() {
        let r = build_report(&toy(), &lda_config()).unwrap();
        assert_eq!(r.column("average_entropy"), Some(r.lexical.average_entropy));
        assert_eq!(r.column("entropy_2"), r.lexical.entropy(2));
        assert_eq!(r.column("mst:lda"), Some(r.geometric[0].mst_complexity));
        assert_eq!(r.column("ari:LDA"), Some(r.geometric[0].ari_complexity));
        assert_eq!(r.column("mst:use"), None);
    }

    #[test]
    fn geometric_cap_subsamples_and_flags() {
        let cfg = MeasureConfig {
            max_geometric_points: 3,
            ..lda_config()
        };
        let r = build_report(&toy(), &cfg).unwrap();
        assert!(r.provenance.subsampled);
        assert_eq!(r.provenance.geometric_points, 3);
        assert_eq!(r.provenance.analyzed_examples, 4);
    }

    #[test]
    fn single_label_flags_degenerate_ari() {
        let d = Dataset::from_pairs(
            &[("a b", "x"), ("c d", "x"), ("e f", "x")],
            Default::default(),
        )
        .unwrap();
        let r = build_report(&d, &lda_config()).unwrap();
        assert!(r.flags.iter().any(|f| f.starts_with("ari.degenerate")));
        assert_eq!(r.geometric[0].ari_complexity, 0.5);
    }

    proptest! {
        #[test]
        fn fit_matches_normal_equations(pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 5)) {
            let fit = linear_fit_r2(&pts).unwrap();
            let (slope, intercept, r2) = ols_oracle(&pts);
            prop_assert!((fit.slope - slope).abs() < 1e-10);
            prop_assert!((fit.intercept - intercept).abs() < 1e-10);
            prop_assert!((fit.r_squared - r2).abs() < 1e-10);
        }

        #[test]
        fn r_squared_ignores_affine_x(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 4..10),
            scale in prop_oneof![0.1f64..10.0, -10.0f64..-0.1],
            shift in -100.0f64..100.0,
        ) {
            let base = linear_fit_r2(&pts).unwrap();
            let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (scale * x + shift, y)).collect();
            let fit = linear_fit_r2(&moved).unwrap();
            prop_assert!((base.r_squared - fit.r_squared).abs() < 1e-10);
        }
    }
}
