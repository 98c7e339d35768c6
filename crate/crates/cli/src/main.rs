mod commands;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

/// Street-level bicycle accident severity modelling.
#[derive(Debug, Parser)]
#[command(name = "bikesafe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a city accident feed into canonical JSON-lines records.
    Ingest(IngestArgs),
    /// Build a street graph from an OSM XML extract.
    GraphBuild(GraphBuildArgs),
    /// Edge betweenness centrality of a street graph.
    Betweenness(BetweennessArgs),
    /// Snap accidents to the network and export the design CSV.
    Features(FeaturesArgs),
    /// Fit a logistic severity model on a design CSV.
    Fit(FitArgs),
    /// Score a model on held-out data.
    Eval(EvalArgs),
    /// Evaluate every model on every other city's test set.
    CrossEval(CrossEvalArgs),
    /// Per-coefficient z-tests between pairs of models.
    Compare(CompareArgs),
    /// Safety scores at supplied or random points.
    Score(ScoreArgs),
    /// Baseline versus edited network safety over a region.
    Scenario(ScenarioArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DateRange {
    /// First date to keep (inclusive, YYYY-MM-DD).
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last date to keep (inclusive, YYYY-MM-DD).
    #[arg(long)]
    to: Option<NaiveDate>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Built-in schema id (london, boston, pittsburgh, generic) or a schema JSON file.
    #[arg(long)]
    schema: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep only the last N calendar years present in the feed.
    #[arg(long)]
    window_years: Option<u32>,
    #[command(flatten)]
    dates: DateRange,
    /// Write rejected rows (row, reason) to this CSV.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GraphBuildArgs {
    #[arg(long)]
    osm: PathBuf,
    /// CSV of node_id,elevation_m.
    #[arg(long)]
    elevation: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BetweennessArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Estimate from this many sampled source nodes instead of all of them.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    betweenness: PathBuf,
    /// JSON-lines accident records from `ingest`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dates: DateRange,
    #[arg(long, default_value_t = 50.0)]
    snap_radius_m: f64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// City key stored in the model; defaults to the city recorded with the design.
    #[arg(long)]
    city: Option<String>,
    /// Ridge penalty, only for separated data.
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Held-out design CSV.
    #[arg(long)]
    test: PathBuf,
    /// Training design CSV, for the climatology base rate.
    #[arg(long)]
    train: PathBuf,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Report CSV row.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    reliability_csv: Option<PathBuf>,
    /// Reliability diagram.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Name of the test city; defaults to the city recorded with the test design.
    #[arg(long)]
    test_city: Option<String>,
}

#[derive(Debug, Args)]
struct CrossEvalArgs {
    /// Model files, one per city.
    #[arg(long = "model", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Training design CSVs, in the same order as the models.
    #[arg(long = "train", required = true, num_args = 1..)]
    train: Vec<PathBuf>,
    /// Test design CSVs, in the same order as the models.
    #[arg(long = "test", required = true, num_args = 1..)]
    test: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long = "model", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long = "model", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    betweenness: PathBuf,
    /// CSV with lon,lat columns.
    #[arg(long, conflicts_with = "random")]
    points: Option<PathBuf>,
    /// Draw this many uniform points over the graph extent.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50.0)]
    snap_radius_m: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    betweenness: PathBuf,
    /// JSON ring of [lon, lat] pairs, or a GeoJSON Polygon/Feature.
    #[arg(long)]
    region: PathBuf,
    /// JSON array of edits.
    #[arg(long)]
    edits: PathBuf,
    /// Sample every N metres instead of at edge midpoints.
    #[arg(long)]
    densify_m: Option<f64>,
    #[arg(long)]
    recompute_betweenness: bool,
    #[arg(long, default_value_t = 50.0)]
    snap_radius_m: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    geojson: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long = "model", num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    betweenness: Option<PathBuf>,
    #[arg(long)]
    snap_radius_m: Option<f64>,
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
