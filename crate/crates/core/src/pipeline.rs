//! Training and prediction on a matching graph: walk embeddings, row
//! assembly and the rank predictor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_dataset_dir, Corpus};
use crate::embed::{edge_embedding, embed_graph, NodeEmbedding, SgnsConfig, WalkConfig};
use crate::error::{Error, Result};
use crate::features::{
    assemble_row, dataset_feature, encode_model, fit_schema, FeatureSchema, ModelCard, RowLayout, TrainingRow,
};
use crate::fsutil;
use crate::graph::{MatchingGraph, VertexId};
use crate::perf::PerfTable;
use crate::ranker::{make_rank_labels, select_best, train_gbdt, GbdtModel, GbdtParams};
use crate::seed;
use crate::stats::EmbeddingStats;

pub const PREDICTOR_FORMAT_VERSION: u32 = 1;

/// Stage settings. The `seed` fields inside are ignored: every stage seed is
/// derived from the top-level seed passed alongside.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub walk: WalkConfig,
    pub sgns: SgnsConfig,
    pub gbdt: GbdtParams,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        self.sgns.validate()?;
        self.gbdt.validate()
    }

    /// Stage configs with seeds `derive(seed, "<stage>", indices)`.
    pub fn seeded(&self, seed: u64, indices: &[u64]) -> (WalkConfig, SgnsConfig, GbdtParams) {
        let mut walk = self.walk.clone();
        walk.seed = seed::derive(seed, "walk", indices);
        let mut sgns = self.sgns.clone();
        sgns.seed = seed::derive(seed, "sgns", indices);
        let mut gbdt = self.gbdt.clone();
        gbdt.seed = seed::derive(seed, "gbdt", indices);
        (walk, sgns, gbdt)
    }
}

/// Which row segments the predictor sees; the others are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Both,
    FeaturesOnly,
    GraphOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Both => "both",
            Mode::FeaturesOnly => "features_only",
            Mode::GraphOnly => "graph_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Mode::Both),
            "features_only" => Ok(Mode::FeaturesOnly),
            "graph_only" => Ok(Mode::GraphOnly),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }

    pub fn mask(self, layout: &RowLayout, input: &mut [f64]) {
        let zero = |r: std::ops::Range<usize>, input: &mut [f64]| input[r].fill(0.0);
        match self {
            Mode::Both => {}
            Mode::FeaturesOnly => zero(layout.edge_range(), input),
            Mode::GraphOnly => {
                zero(layout.model_range(), input);
                zero(layout.dataset_range(), input);
            }
        }
    }
}

/// Model feature vectors under a schema fitted on the whole zoo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFeatures {
    pub schema: FeatureSchema,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl ModelFeatures {
    pub fn fit(cards: &[ModelCard]) -> Result<Self> {
        let schema = fit_schema(cards)?;
        let vectors = cards
            .iter()
            .map(|c| (c.model_id.clone(), encode_model(c, &schema)))
            .collect();
        Ok(Self { schema, vectors })
    }

    fn get(&self, model: &str) -> Result<&[f64]> {
        self.vectors
            .get(model)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownId(format!("model {model}")))
    }
}

/// Builds predictor rows from one graph embedding.
pub struct RowBuilder<'a> {
    pub models: &'a ModelFeatures,
    pub embedding: &'a NodeEmbedding,
    pub layout: RowLayout,
    pub mode: Mode,
}

impl<'a> RowBuilder<'a> {
    pub fn new(models: &'a ModelFeatures, embedding: &'a NodeEmbedding, probe_dim: usize, mode: Mode) -> Self {
        let layout = RowLayout {
            model_width: models.schema.width(),
            dataset_width: probe_dim,
            edge_width: embedding.emb_dim,
        };
        Self {
            models,
            embedding,
            layout,
            mode,
        }
    }

    pub fn row(&self, model: &str, dataset: &str, stats: &EmbeddingStats, label: Option<u32>) -> Result<TrainingRow> {
        let vertex = |id: VertexId| {
            self.embedding
                .get(&id)
                .ok_or_else(|| Error::UnknownId(format!("vertex {id} has no embedding")))
        };
        let edge = edge_embedding(vertex(VertexId::model(model))?, vertex(VertexId::dataset(dataset))?)?;
        let dvec = dataset_feature(stats);
        if dvec.len() != self.layout.dataset_width {
            return Err(Error::DimMismatch {
                expected: self.layout.dataset_width,
                got: dvec.len(),
            });
        }
        let mut row = assemble_row(self.models.get(model)?, &dvec, &edge, label, model, dataset)?;
        self.mode.mask(&self.layout, &mut row.input);
        Ok(row)
    }
}

/// Scores of the pairs still connected by performance edges in `g`.
pub fn graph_perf(g: &MatchingGraph, truth: &PerfTable) -> Result<PerfTable> {
    let mut t = PerfTable::new();
    for (m, d) in g.performance_pairs() {
        let s = truth
            .get(&m, &d)
            .ok_or_else(|| Error::UnknownId(format!("score for ({m}, {d})")))?;
        t.insert(&m, &d, s);
    }
    Ok(t)
}

/// Labelled rows for every performance edge of `g`, ranked among the
/// models still scored on each dataset.
pub fn training_rows(
    builder: &RowBuilder<'_>,
    perf: &PerfTable,
    stats: &BTreeMap<String, EmbeddingStats>,
) -> Result<Vec<TrainingRow>> {
    make_rank_labels(perf)
        .into_iter()
        .map(|((m, d), label)| {
            let s = stats
                .get(&d)
                .ok_or_else(|| Error::UnknownId(format!("stats for dataset {d}")))?;
            builder.row(&m, &d, s, Some(label))
        })
        .collect()
}

/// Fit the predictor, or fall back to the uniform 0-round model when the
/// rows hold fewer than two distinct labels.
pub fn fit_ranker(
    rows: &[TrainingRow],
    num_classes: usize,
    feature_count: usize,
    params: &GbdtParams,
) -> Result<GbdtModel> {
    let mut labels: Vec<u32> = rows.iter().filter_map(|r| r.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Ok(GbdtModel::untrained(num_classes, feature_count, params));
    }
    train_gbdt(rows, num_classes, params)
}

/// Rank distributions for every zoo model on `dataset`.
pub fn predict_dataset(
    gbdt: &GbdtModel,
    builder: &RowBuilder<'_>,
    model_ids: &[String],
    dataset: &str,
    stats: &EmbeddingStats,
) -> Result<BTreeMap<String, Vec<f64>>> {
    model_ids
        .iter()
        .map(|m| {
            let row = builder.row(m, dataset, stats, None)?;
            Ok((m.clone(), gbdt.predict_rank_scores(&row.input)?))
        })
        .collect()
}

/// Everything `predict` needs besides the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub format_version: u32,
    pub seed: u64,
    pub mode: Mode,
    pub config: PipelineConfig,
    pub model_ids: Vec<String>,
    pub models: ModelFeatures,
    pub layout: RowLayout,
    /// Where the training dataset statistics live, for query similarities.
    pub datasets_dir: PathBuf,
    pub gbdt: GbdtModel,
}

/// Fit embeddings and the predictor on the full graph.
pub fn train_predictor(
    g: &MatchingGraph,
    corpus: &Corpus,
    config: &PipelineConfig,
    seed: u64,
    mode: Mode,
    datasets_dir: &Path,
) -> Result<Predictor> {
    config.validate()?;
    let stats = &corpus.stats;
    let models = ModelFeatures::fit(&corpus.cards)?;
    let model_ids = corpus.model_ids();
    let (walk, sgns, gbdt_params) = config.seeded(seed, &[]);
    let embedding = embed_graph(g, &walk, &sgns)?;
    let probe_dim = first_dim(stats)?;
    let builder = RowBuilder::new(&models, &embedding, probe_dim, mode);
    let perf = graph_perf(g, &corpus.perf)?;
    let rows = training_rows(&builder, &perf, stats)?;
    let gbdt = fit_ranker(&rows, model_ids.len(), builder.layout.width(), &gbdt_params)?;
    let layout = builder.layout;
    Ok(Predictor {
        format_version: PREDICTOR_FORMAT_VERSION,
        seed,
        mode,
        config: config.clone(),
        model_ids,
        models,
        layout,
        datasets_dir: datasets_dir.to_path_buf(),
        gbdt,
    })
}

fn first_dim(stats: &BTreeMap<String, EmbeddingStats>) -> Result<usize> {
    stats
        .values()
        .next()
        .map(EmbeddingStats::dim)
        .ok_or_else(|| Error::Input("no dataset statistics".into()))
}

/// One ranked model in a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub model_id: String,
    pub expected_rank: f64,
}

impl Predictor {
    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: Self = fsutil::read_json(path)?;
        if p.format_version != PREDICTOR_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported format_version {}", p.format_version),
            ));
        }
        Ok(p)
    }

    /// Insert the query into `g`, retrain the walk embeddings on the
    /// augmented graph and rank the whole zoo.
    pub fn predict(
        &self,
        g: &MatchingGraph,
        query_id: &str,
        query: &EmbeddingStats,
        existing: &BTreeMap<String, EmbeddingStats>,
    ) -> Result<Vec<Ranked>> {
        if query.dim() != self.layout.dataset_width {
            return Err(Error::DimMismatch {
                expected: self.layout.dataset_width,
                got: query.dim(),
            });
        }
        let augmented = g.insert_query_dataset(query_id, query, existing)?;
        let (walk, sgns, _) = self.config.seeded(self.seed, &[]);
        let embedding = embed_graph(&augmented, &walk, &sgns)?;
        let builder = RowBuilder::new(&self.models, &embedding, self.layout.dataset_width, self.mode);
        if builder.layout != self.layout {
            return Err(Error::Input("predictor layout does not match the graph".into()));
        }
        let dists = predict_dataset(&self.gbdt, &builder, &self.model_ids, query_id, query)?;
        Ok(select_best(&dists)
            .into_iter()
            .map(|m| Ranked {
                expected_rank: crate::ranker::expected_rank(&dists[&m]),
                model_id: m,
            })
            .collect())
    }

    /// Statistics of the datasets the predictor was trained on.
    pub fn load_existing(&self) -> Result<BTreeMap<String, EmbeddingStats>> {
        load_dataset_dir(&self.datasets_dir)
    }
}
