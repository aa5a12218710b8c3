use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use provenance_core::config::PipelineConfig;
use provenance_core::detector::extract_features;
use provenance_core::eval::{evaluate_suite, CaseResult, GroundTruthCase};
use provenance_core::filtering::{read_rank_csv, write_rank_csv, FeatureDir, FeatureSource};
use provenance_core::graphs::ProvenanceGraph;
use provenance_core::imaging::GrayImage;
use provenance_core::index::{ingest_feature_files, IvfAdcIndex};
use provenance_core::pairwise::PairwiseAnalysis;
use provenance_core::pipeline::{
    analyze, build_graph, end_to_end, extract_corpus, feature_files, oracle_graph, retrieve, train_from_features,
    Corpus,
};
use provenance_core::synth::{generate, load_cases, SynthSpec};
use rayon::prelude::*;

use crate::manifest::Manifest;
use crate::{resolve_config, Cli, Command};

/// A required path given neither on the command line nor in the config.
#[derive(Debug)]
pub struct MissingInput(pub String);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for MissingInput {}

fn need(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| MissingInput(format!("no {what} given (flag --{what} or [paths] {what})")).into())
}

fn existing(path: PathBuf, what: &str) -> anyhow::Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(MissingInput(format!("{what} {} does not exist", path.display())).into())
    }
}

fn id_file(id: u64, ext: &str) -> String {
    format!("{id:07}.{ext}")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    match &cli.command {
        Command::Graph { builder: Some(b), .. } | Command::EndToEnd { builder: Some(b), .. } => cfg.graph.builder = *b,
        _ => {}
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let seed = cli.global.seed;
    pool.install(|| dispatch(cli.command, cfg, seed))
}

fn dispatch(command: Command, cfg: PipelineConfig, seed: Option<u64>) -> anyhow::Result<()> {
    let paths = cfg.paths.clone();
    match command {
        Command::Extract { corpus, features } => {
            let corpus = existing(need(corpus, &paths.corpus, "corpus")?, "corpus directory")?;
            let out = FeatureDir(need(features, &paths.features, "features")?);
            let mut m = Manifest::new("extract", &cfg);
            let corpus = Corpus::scan(&corpus)?;
            let report = m.time("extract", || extract_corpus(&corpus, &out, &cfg.detector))?;
            m.count("images", report.images);
            m.count("points", report.points);
            m.output(&out.0);
            m.write_next_to(&out.0)?;
            println!("extracted {} points from {} images", report.points, report.images);
        }
        Command::IndexTrain { features, index } => {
            let dir = FeatureDir(existing(need(features, &paths.features, "features")?, "feature directory")?);
            let index_path = need(index, &paths.index, "index")?;
            let mut m = Manifest::new("index-train", &cfg);
            let idx = m.time("train", || train_from_features(&dir, &cfg.index, cfg.training_sample))?;
            idx.save(&index_path)?;
            m.count("feature_files", feature_files(&dir)?.len());
            m.output(&index_path);
            m.write_next_to(&index_path)?;
            println!("trained index written to {}", index_path.display());
        }
        Command::IndexAdd { features, index } => {
            let dir = FeatureDir(existing(need(features, &paths.features, "features")?, "feature directory")?);
            let index_path = existing(need(index, &paths.index, "index")?, "index file")?;
            let mut m = Manifest::new("index-add", &cfg);
            let mut idx = IvfAdcIndex::load(&index_path)?;
            let files = feature_files(&dir)?;
            let report = m.time("ingest", || ingest_feature_files(&mut idx, &files))?;
            let tmp = index_path.with_extension("tmp");
            idx.save(&tmp)?;
            fs::rename(&tmp, &index_path).with_context(|| format!("replacing {}", index_path.display()))?;
            m.count("files", report.files);
            m.count("added", report.added);
            m.count("batches", report.batch_sizes.len());
            m.count("index_features", idx.n_features());
            m.output(&index_path);
            m.write_next_to(&index_path)?;
            println!("added {} features from {} files", report.added, report.files);
        }
        Command::Query {
            image,
            id,
            features,
            index,
            out,
        } => {
            let dir = FeatureDir(existing(need(features, &paths.features, "features")?, "feature directory")?);
            let idx = IvfAdcIndex::load(existing(need(index, &paths.index, "index")?, "index file")?)?;
            let mut m = Manifest::new("query", &cfg);
            let query = match (image, id) {
                (Some(path), _) => {
                    let img = GrayImage::open(existing(path, "query image")?)?;
                    extract_features(&img, u64::MAX, &cfg.detector)
                }
                (None, Some(id)) => dir.features(id)?.into_owned(),
                (None, None) => return Err(MissingInput("query needs --image or --id".into()).into()),
            };
            let rank = m.time("retrieve", || retrieve(&query, &idx, &dir, &cfg, None))?;
            write_rank_csv(&out, &rank)?;
            m.count("query_points", query.len());
            m.count("ranked", rank.len());
            m.output(&out);
            m.write_next_to(&out)?;
        }
        Command::Graph {
            rank,
            query,
            oracle,
            case,
            builder: _,
            dump_matrices,
            corpus,
            features,
            out,
            dot,
        } => {
            let corpus = Corpus::scan(existing(need(corpus, &paths.corpus, "corpus")?, "corpus directory")?)?;
            let dir = FeatureDir(existing(need(features, &paths.features, "features")?, "feature directory")?);
            let mut m = Manifest::new("graph", &cfg);
            let (analysis, graph) = if oracle {
                let case_path = case.ok_or_else(|| MissingInput("--oracle needs --case".into()))?;
                let case = GroundTruthCase::load(existing(case_path, "case file")?)?;
                m.time("graph", || oracle_graph(case.query, &case.relevant, &corpus, &dir, &cfg))?
            } else {
                let rank = read_rank_csv(existing(rank.expect("clap requires --rank"), "rank file")?)?;
                let query = query.expect("clap requires --query");
                let top: Vec<u64> = rank.ids().into_iter().take(cfg.graph.candidates).collect();
                m.time("graph", || -> anyhow::Result<_> {
                    let analysis = analyze(query, &top, &corpus, &dir, &cfg)?;
                    let mut graph = build_graph(&analysis, &cfg)?;
                    graph.set_files(|id| corpus.path(id).ok().and_then(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()));
                    Ok((analysis, graph))
                })?
            };
            write_graph(&graph, &out, dot.as_deref())?;
            if let Some(d) = dump_matrices {
                analysis.dump_csv(&d)?;
                m.output(d);
            }
            count_analysis(&mut m, &analysis, &graph);
            m.output(&out);
            m.write_next_to(&out)?;
        }
        Command::Eval { cases, results, out } => {
            let cases = load_cases(existing(cases, "case directory")?)?;
            let results_dir = existing(results, "results directory")?;
            let mut m = Manifest::new("eval", &cfg);
            let mut results = BTreeMap::new();
            for case in &cases {
                let rank_path = results_dir.join("ranks").join(id_file(case.query, "csv"));
                let graph_path = results_dir.join("graphs").join(id_file(case.query, "json"));
                let rank = rank_path.exists().then(|| read_rank_csv(&rank_path)).transpose()?;
                let graph = graph_path.exists().then(|| ProvenanceGraph::load_json(&graph_path)).transpose()?;
                if rank.is_some() || graph.is_some() {
                    results.insert(case.query, CaseResult { rank, graph });
                }
            }
            let report = m.time("eval", || evaluate_suite(&cases, &results))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("report.csv"), report.to_csv())?;
            fs::write(out.join("report.json"), report.to_json()? + "\n")?;
            m.count("cases", cases.len());
            m.count("missing", report.cases.iter().filter(|c| c.missing).count());
            m.output(out.join("report.csv"));
            m.output(out.join("report.json"));
            m.write_next_to(&out)?;
            print!("{}", report.to_csv());
        }
        Command::Synth { spec, out } => {
            let mut spec = match spec {
                Some(p) => SynthSpec::load(existing(p, "synth spec")?)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let mut m = Manifest::new("synth", &cfg);
            let output = m.time("generate", || generate(&spec, &out))?;
            m.count("cases", output.cases.len());
            m.count("graph_images", output.cases.iter().map(|c| c.relevant.len()).sum::<usize>());
            m.count("distractors", output.distractors.len());
            m.output(&out);
            m.write_next_to(&out)?;
            println!(
                "{} cases, {} distractors in {}",
                output.cases.len(),
                output.distractors.len(),
                out.display()
            );
        }
        Command::EndToEnd {
            cases,
            oracle,
            builder: _,
            dump_matrices,
            corpus,
            features,
            index,
            out,
        } => {
            let cases = load_cases(existing(cases, "case directory")?)?;
            let corpus = Corpus::scan(existing(need(corpus, &paths.corpus, "corpus")?, "corpus directory")?)?;
            let dir = FeatureDir(existing(need(features, &paths.features, "features")?, "feature directory")?);
            let idx = if oracle {
                None
            } else {
                Some(IvfAdcIndex::load(existing(need(index, &paths.index, "index")?, "index file")?)?)
            };
            let mut m = Manifest::new(if oracle { "end-to-end-oracle" } else { "end-to-end" }, &cfg);
            let (rank_dir, graph_dir) = (out.join("ranks"), out.join("graphs"));
            for d in [&rank_dir, &graph_dir] {
                fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            }
            let runs = m.time("queries", || {
                cases
                    .par_iter()
                    .map(|case| -> anyhow::Result<(PairwiseAnalysis, ProvenanceGraph)> {
                        let (analysis, graph) = match &idx {
                            None => oracle_graph(case.query, &case.relevant, &corpus, &dir, &cfg)?,
                            Some(idx) => {
                                let run = end_to_end(case.query, &corpus, &dir, idx, &cfg)?;
                                write_rank_csv(rank_dir.join(id_file(case.query, "csv")), &run.rank)?;
                                (run.analysis, run.graph)
                            }
                        };
                        write_graph(&graph, &graph_dir.join(id_file(case.query, "json")), None)?;
                        if let Some(d) = &dump_matrices {
                            analysis.dump_csv(d.join(format!("{:07}", case.query)))?;
                        }
                        Ok((analysis, graph))
                    })
                    .collect::<anyhow::Result<Vec<_>>>()
            })?;
            m.count("cases", cases.len());
            m.count("pair_computations", runs.iter().map(|r| r.0.pair_computations).sum::<usize>());
            m.count("graph_nodes", runs.iter().map(|r| r.1.nodes.len()).sum::<usize>());
            m.count("graph_edges", runs.iter().map(|r| r.1.edges.len()).sum::<usize>());
            m.output(&rank_dir);
            m.output(&graph_dir);
            m.write_next_to(&out)?;
            println!("{} queries processed into {}", cases.len(), out.display());
        }
    }
    Ok(())
}

fn write_graph(graph: &ProvenanceGraph, out: &Path, dot: Option<&Path>) -> anyhow::Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    graph.save_json(out)?;
    if let Some(dot) = dot {
        fs::write(dot, graph.to_dot()).with_context(|| format!("writing {}", dot.display()))?;
    }
    Ok(())
}

fn count_analysis(m: &mut Manifest, analysis: &PairwiseAnalysis, graph: &ProvenanceGraph) {
    m.count("candidates", analysis.n());
    m.count("active", analysis.active_indices().len());
    m.count("pair_computations", analysis.pair_computations);
    m.count("graph_nodes", graph.nodes.len());
    m.count("graph_edges", graph.edges.len());
}
