use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::classify::{CellClassifier, GridLabels, MeanColorClassifier};
use super::AnalysisError;
use crate::annotation::LabelMask;
use crate::geom::Point;
use crate::slide_io::Slide;

pub type Params = Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    WholeSlide,
    Region,
    Click,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Mask,
    Points,
    GridLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Int,
    Float,
    String,
    Bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub default: Value,
}

impl ParamSpec {
    pub fn new(name: &str, kind: ParamKind, default: impl Into<Value>) -> Self {
        ParamSpec {
            name: name.to_owned(),
            kind,
            default: default.into(),
        }
    }

    fn accepts(&self, v: &Value) -> bool {
        match self.kind {
            ParamKind::Int => v.is_i64() || v.is_u64(),
            ParamKind::Float => v.is_number(),
            ParamKind::String => v.is_string(),
            ParamKind::Bool => v.is_boolean(),
        }
    }

    /// Interpret a command-line `k=v` value.
    pub fn parse_text(&self, text: &str) -> Result<Value, AnalysisError> {
        let bad = || AnalysisError::BadParams(format!("`{text}` is not a valid {:?} for `{}`", self.kind, self.name));
        Ok(match self.kind {
            ParamKind::Int => Value::from(text.parse::<i64>().map_err(|_| bad())?),
            ParamKind::Float => Value::from(text.parse::<f64>().map_err(|_| bad())?),
            ParamKind::Bool => Value::from(text.parse::<bool>().map_err(|_| bad())?),
            ParamKind::String => Value::from(text),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerDescriptor {
    pub name: String,
    pub input_kind: InputKind,
    pub output_kind: OutputKind,
    pub params_schema: Vec<ParamSpec>,
    /// Run at most one instance at a time.
    #[serde(default)]
    pub single_instance: bool,
}

impl AnalyzerDescriptor {
    /// Check `params` against the schema and fill in defaults.
    pub fn resolve_params(&self, params: &Params) -> Result<Params, AnalysisError> {
        for (k, v) in params {
            let spec = self
                .params_schema
                .iter()
                .find(|s| &s.name == k)
                .ok_or_else(|| AnalysisError::BadParams(format!("`{}` has no parameter `{k}`", self.name)))?;
            if !spec.accepts(v) {
                return Err(AnalysisError::BadParams(format!("`{k}` must be {:?}, got {v}", spec.kind)));
            }
        }
        Ok(self
            .params_schema
            .iter()
            .map(|s| (s.name.clone(), params.get(&s.name).cloned().unwrap_or_else(|| s.default.clone())))
            .collect())
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.params_schema.iter().find(|s| s.name == name)
    }
}

/// Typed access to resolved parameters.
pub(crate) trait ParamsExt {
    fn int(&self, k: &str) -> i64;
    fn float(&self, k: &str) -> f64;
    fn string(&self, k: &str) -> &str;
}

impl ParamsExt for Params {
    fn int(&self, k: &str) -> i64 {
        self.get(k).and_then(Value::as_i64).unwrap_or(0)
    }

    fn float(&self, k: &str) -> f64 {
        self.get(k).and_then(Value::as_f64).unwrap_or(0.0)
    }

    fn string(&self, k: &str) -> &str {
        self.get(k).and_then(Value::as_str).unwrap_or("")
    }
}

pub struct AnalysisContext<'a> {
    pub slide: &'a Slide,
    /// Resolved against the descriptor's schema.
    pub params: &'a Params,
    pub registry: &'a AnalyzerRegistry,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisOutput {
    /// Mask in base-level coordinates.
    Mask(LabelMask),
    /// Points in base-level coordinates.
    Points(Vec<Point>),
    Grid(GridLabels),
}

impl AnalysisOutput {
    pub fn kind(&self) -> OutputKind {
        match self {
            AnalysisOutput::Mask(_) => OutputKind::Mask,
            AnalysisOutput::Points(_) => OutputKind::Points,
            AnalysisOutput::Grid(_) => OutputKind::GridLabels,
        }
    }
}

pub trait Analyzer: Send + Sync {
    fn run(&self, ctx: &AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError>;
}

impl<F> Analyzer for F
where
    F: Fn(&AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError> + Send + Sync,
{
    fn run(&self, ctx: &AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError> {
        self(ctx)
    }
}

#[derive(Clone)]
struct Entry {
    descriptor: AnalyzerDescriptor,
    analyzer: Arc<dyn Analyzer>,
    lock: Arc<parking_lot::Mutex<()>>,
}

/// Named analyzers and cell classifiers.
pub struct AnalyzerRegistry {
    analyzers: RwLock<BTreeMap<String, Entry>>,
    classifiers: RwLock<BTreeMap<String, Arc<dyn CellClassifier>>>,
}

impl Default for AnalyzerRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl AnalyzerRegistry {
    pub fn empty() -> Self {
        AnalyzerRegistry {
            analyzers: RwLock::new(BTreeMap::new()),
            classifiers: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn with_builtins() -> Self {
        let r = Self::empty();
        super::builtins::register_all(&r);
        r.register_classifier("mean_color", Arc::new(MeanColorClassifier::default()))
            .expect("fresh registry");
        r
    }

    pub fn register(&self, descriptor: AnalyzerDescriptor, analyzer: Arc<dyn Analyzer>) -> Result<(), AnalysisError> {
        let mut map = self.analyzers.write();
        if map.contains_key(&descriptor.name) {
            return Err(AnalysisError::DuplicateName(descriptor.name));
        }
        map.insert(
            descriptor.name.clone(),
            Entry {
                descriptor,
                analyzer,
                lock: Arc::default(),
            },
        );
        Ok(())
    }

    pub fn register_classifier(&self, name: &str, classifier: Arc<dyn CellClassifier>) -> Result<(), AnalysisError> {
        let mut map = self.classifiers.write();
        if map.contains_key(name) {
            return Err(AnalysisError::DuplicateName(name.to_owned()));
        }
        map.insert(name.to_owned(), classifier);
        Ok(())
    }

    pub fn classifier(&self, name: &str) -> Result<Arc<dyn CellClassifier>, AnalysisError> {
        self.classifiers
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| AnalysisError::UnknownClassifier(name.to_owned()))
    }

    pub fn list(&self) -> Vec<AnalyzerDescriptor> {
        self.analyzers.read().values().map(|e| e.descriptor.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.analyzers.read().keys().cloned().collect()
    }

    pub fn descriptor(&self, name: &str) -> Result<AnalyzerDescriptor, AnalysisError> {
        self.analyzers
            .read()
            .get(name)
            .map(|e| e.descriptor.clone())
            .ok_or_else(|| AnalysisError::UnknownAnalyzer(name.to_owned()))
    }

    /// Resolve parameters and run `name` synchronously.
    pub fn run(&self, name: &str, slide: &Slide, params: &Params) -> Result<(Params, AnalysisOutput), AnalysisError> {
        let entry = self
            .analyzers
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| AnalysisError::UnknownAnalyzer(name.to_owned()))?;
        let resolved = entry.descriptor.resolve_params(params)?;
        let _guard = entry.descriptor.single_instance.then(|| entry.lock.lock());
        let ctx = AnalysisContext {
            slide,
            params: &resolved,
            registry: self,
        };
        let out = entry.analyzer.run(&ctx)?;
        if out.kind() != entry.descriptor.output_kind {
            return Err(AnalysisError::Failed(format!(
                "`{name}` declared {:?} output but produced {:?}",
                entry.descriptor.output_kind,
                out.kind()
            )));
        }
        Ok((resolved, out))
    }
}
