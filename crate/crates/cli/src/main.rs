use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use latvar::correlation::{CorrelationConfig, MethodChoice, MAX_POLYCHORIC_LEVELS};
use latvar::efa::{self, fit_efa, parallel_analysis, prune_items, EfaOptions, PruneCriteria};
use latvar::ingest::{load_dataset, recode, to_numeric, RowFilter, Schema};
use latvar::pipeline::{self, measurement_from_efa, to_json, CfaSection, PipelineConfig, SearchSection};
use latvar::report;
use latvar::search::{EnumerationRule, Measurement, RuleKind};
use latvar::sem::{self, BootstrapSe, Estimator, FitOptions, Identification, SampleScale, SemModel};
use latvar::synth::{self, GeneratorSpec};
use latvar::NumericMatrix;

#[derive(Parser)]
#[command(name = "latvar", version, about = "Ordinal survey factor analysis and structural model search")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "LATVAR_JOBS")]
    jobs: Option<usize>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Output file (directory for `generate` and `run`); stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise correlation matrix.
    Correlate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "mixed")]
        method: MethodChoice,
    },
    /// Exploratory factor analysis, optionally with iterative item pruning.
    Efa {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "mixed")]
        method: MethodChoice,
        /// Run the pruning loop.
        #[arg(long)]
        prune: bool,
        /// `default` or a TOML file with prune thresholds.
        #[arg(long, default_value = "default")]
        criteria: String,
        /// Fixed factor count (default: parallel analysis).
        #[arg(long)]
        factors: Option<usize>,
        /// Replicates for parallel analysis.
        #[arg(long, default_value_t = 100)]
        resamples: usize,
    },
    /// Reliability of each measurement block in a model file.
    Reliability {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Bootstrap replicates for the standard error of alpha.
        #[arg(long, default_value_t = 200)]
        n_boot: usize,
    },
    /// Confirmatory factor analysis with acceptance checks.
    Cfa {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value = "dwls")]
        estimator: Estimator,
    },
    /// Fit a structural equation model.
    Sem {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value = "ml")]
        estimator: Estimator,
    },
    /// Fit and rank every structural configuration among the factors.
    Search {
        #[command(flatten)]
        data: DataArgs,
        /// Measurement model; without it items are assigned by an EFA.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Factor count for the EFA-derived measurement.
        #[arg(long, default_value_t = 4)]
        factors: usize,
        #[arg(long, default_value = "ml")]
        estimator: Estimator,
        #[arg(long, value_enum, default_value_t = Rule::Mixed)]
        rule: Rule,
        #[arg(long)]
        min_edges: Option<usize>,
        #[arg(long)]
        max_edges: Option<usize>,
        /// Rows in the text leaderboard.
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Generate a synthetic ordinal data set.
    Generate {
        /// Generator spec as JSON (default: the reference four-factor structure).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 20000)]
        n: usize,
        /// Continuous scores instead of ordinal levels (reference spec only).
        #[arg(long)]
        continuous: bool,
        /// Metadata column and values assigned round-robin, e.g. `YEAR=1991,1998,2008`.
        #[arg(long)]
        waves: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        missing_rate: f64,
    },
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Delimited data file.
    #[arg(long)]
    data: PathBuf,
    /// Schema TOML; inferred from the data when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Row filter `COLUMN=V1,V2`; repeatable.
    #[arg(long = "filter")]
    filters: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    /// Multiply the discrepancy by n − 1 instead of n.
    #[arg(long)]
    n_minus_one: bool,
    /// Identify factors by unit variance.
    #[arg(long)]
    unit_variance: bool,
    /// Bootstrap replicates for DWLS standard errors.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Mixed,
    Exogenous,
}

fn parse_filter(s: &str) -> Result<(String, Vec<i64>)> {
    let (col, vals) = s.split_once('=').with_context(|| format!("filter `{s}` is not COLUMN=V1,V2"))?;
    let vals = vals
        .split(',')
        .map(|v| v.trim().parse::<i64>().with_context(|| format!("bad value `{v}` in filter `{s}`")))
        .collect::<Result<Vec<_>>>()?;
    Ok((col.trim().to_string(), vals))
}

impl DataArgs {
    fn load(&self) -> Result<NumericMatrix> {
        let mut filter = RowFilter::all();
        for f in &self.filters {
            let (c, v) = parse_filter(f)?;
            filter = filter.and(&c, v);
        }
        let schema = match &self.schema {
            Some(p) => Schema::load(p)?,
            None => {
                let text = std::fs::read_to_string(&self.data)
                    .with_context(|| format!("reading {}", self.data.display()))?;
                let meta: Vec<String> = filter.clauses.iter().map(|c| c.0.clone()).collect();
                Schema::infer(&text, &meta, MAX_POLYCHORIC_LEVELS)?
            }
        };
        let d = recode(&load_dataset(&self.data, &schema, &filter)?)?;
        let x = to_numeric(&d);
        for n in &x.notices {
            log::warn!("{n}");
        }
        Ok(x)
    }
}

impl FitArgs {
    fn model(&self) -> Result<SemModel> {
        let text = read(&self.model)?;
        let ident = if self.unit_variance {
            Identification::UnitVariance
        } else {
            Identification::Marker
        };
        SemModel::parse(&text, ident).with_context(|| format!("in {}", self.model.display()))
    }

    fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            scale: self.scale(),
            bootstrap: (self.bootstrap > 0).then_some(BootstrapSe {
                n_boot: self.bootstrap,
                seed,
            }),
            ..FitOptions::default()
        }
    }

    fn scale(&self) -> SampleScale {
        if self.n_minus_one {
            SampleScale::NMinusOne
        } else {
            SampleScale::N
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

struct Output<'a> {
    format: Format,
    out: Option<&'a Path>,
}

impl Output<'_> {
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        let body = match self.format {
            Format::Json => to_json(value),
            Format::Text => text(),
        };
        match self.out {
            Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
            None => {
                print!("{body}");
                Ok(())
            }
        }
    }
}

fn criteria(arg: &str) -> Result<PruneCriteria> {
    if arg == "default" {
        return Ok(PruneCriteria::default());
    }
    let c: PruneCriteria = toml::from_str(&read(Path::new(arg))?).with_context(|| format!("in {arg}"))?;
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed.unwrap_or(1);
    let output = Output {
        format: cli.format,
        out: cli.out.as_deref(),
    };
    let flag = |ok: bool| if ok { ExitCode::SUCCESS } else { ExitCode::from(2) };
    match cli.command {
        Command::Correlate { data, method } => {
            let x = data.load()?;
            let c = CorrelationConfig {
                method,
                ..CorrelationConfig::default()
            }
            .estimate(&x)?;
            match (cli.format, &cli.out) {
                (Format::Text, None) => {
                    c.write_matrix(std::io::stdout().lock())?;
                }
                _ => output.emit(&c, || report::render_correlation(&c))?,
            }
            Ok(flag(c.is_complete()))
        }
        Command::Efa {
            data,
            method,
            prune,
            criteria: crit,
            factors,
            resamples,
        } => {
            let x = data.load()?;
            let corr = CorrelationConfig {
                method,
                ..CorrelationConfig::default()
            };
            let mut po = efa::PruneOptions {
                correlation: corr,
                pinned_factors: factors,
                ..Default::default()
            };
            po.parallel.n_resamples = resamples;
            po.parallel.seed = seed;
            po.efa.rotation.seed = seed.wrapping_add(1);
            if prune {
                let res = prune_items(&x, &criteria(&crit)?, &po)?;
                output.emit(&res, || report::render_prune(&res))?;
                Ok(flag(res.solution.converged && !res.cycle && !res.exhausted))
            } else {
                let r = corr.estimate(&x)?;
                let m = match factors {
                    Some(m) => m,
                    None => parallel_analysis(&x, &r, &po.parallel)?.suggested.max(1),
                };
                let sol = fit_efa(&r, m, x.n_rows, &po.efa)?;
                output.emit(&sol, || report::render_efa_solution(&sol))?;
                Ok(flag(sol.converged))
            }
        }
        Command::Reliability { data, model, n_boot } => {
            let x = data.load()?;
            let m = SemModel::parse(&read(&model)?, Identification::Marker)?;
            let rel = pipeline::reliability_stage(&x, &Measurement::from_model(&m), n_boot, seed)?;
            output.emit(&rel, || report::render_reliability(&rel))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Cfa { data, fit, estimator } => {
            let x = data.load()?;
            let section = CfaSection {
                estimator,
                scale: fit.scale(),
                unit_variance: fit.unit_variance,
                bootstrap: fit.bootstrap,
                ..CfaSection::default()
            };
            let (rep, _) = pipeline::cfa_stage(&x, &read(&fit.model)?, &section, seed)?;
            output.emit(&rep, || report::render_cfa(&rep))?;
            Ok(flag(rep.fit.convergence.converged && rep.checks.iter().all(|c| c.pass)))
        }
        Command::Sem { data, fit, estimator } => {
            let x = data.load()?;
            let model = fit.model()?;
            let opts = fit.options(seed);
            let f = match estimator {
                Estimator::Ml => sem::fit_ml(&model, &x, &opts)?,
                Estimator::Dwls => sem::fit_dwls(&model, &x, &opts)?,
            };
            output.emit(&f, || report::render_sem_fit(&f))?;
            Ok(flag(f.is_valid()))
        }
        Command::Search {
            data,
            model,
            factors,
            estimator,
            rule,
            min_edges,
            max_edges,
            top,
        } => {
            let x = data.load()?;
            let measurement = match model {
                Some(p) => Measurement::parse(&read(&p)?)?,
                None => {
                    let corr = CorrelationConfig::default();
                    let r = corr.estimate(&x)?;
                    let mut eo = EfaOptions::default();
                    eo.rotation.seed = seed;
                    let sol = fit_efa(&r, factors, x.n_rows, &eo)?;
                    let m = measurement_from_efa(&sol, PruneCriteria::default().min_loading);
                    if m.blocks.iter().any(|b| b.1.len() < 2) {
                        bail!("the {factors}-factor EFA leaves a factor with fewer than two items; pass --model");
                    }
                    log::info!("measurement from EFA:\n{}", m.dsl());
                    m
                }
            };
            let section = SearchSection {
                estimator,
                rule: EnumerationRule {
                    kind: match rule {
                        Rule::Mixed => RuleKind::Mixed,
                        Rule::Exogenous => RuleKind::ExogenousCovariancesOnly,
                    },
                    min_edges,
                    max_edges,
                },
                leaderboard: top,
                ..SearchSection::default()
            };
            let rep = pipeline::search_stage(&x, &measurement, &section, None)?;
            output.emit(&rep, || report::render_search(&rep, top))?;
            Ok(flag(rep.result.n_ranked > 0))
        }
        Command::Generate {
            spec,
            n,
            continuous,
            waves,
            missing_rate,
        } => {
            let Some(dir) = cli.out.as_deref() else {
                bail!("generate needs --out DIR");
            };
            let mut g: GeneratorSpec = match spec {
                Some(p) => serde_json::from_str(&read(&p)?).with_context(|| format!("in {}", p.display()))?,
                None => {
                    let mut g = synth::reference_four_factor(n, seed);
                    if continuous {
                        g.thresholds = None;
                    }
                    g.missing_rate = missing_rate;
                    g
                }
            };
            if let Some(s) = cli.seed {
                g.seed = s;
            }
            if let Some(w) = waves {
                g.waves = Some(parse_filter(&w)?);
            }
            let d = synth::generate(&g)?;
            synth::write_generated(dir, &g, &d)?;
            eprintln!("wrote {} rows to {}", d.n_rows(), dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(o) = cli.out {
                cfg.output_dir = o;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if cli.jobs.is_some() {
                cfg.jobs = cli.jobs;
            }
            let outcome = pipeline::run_pipeline(&cfg)?;
            eprint!("{}", report::render_outcome(&outcome));
            eprintln!("reports in {}", cfg.output_dir.display());
            Ok(flag(outcome.ok()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
