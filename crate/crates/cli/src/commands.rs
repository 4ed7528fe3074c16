use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde_json::Value;
use wass_ensemble::{
    arithmetic_mean, attribute_sources, balanced_barycenter, check_entropy_lemma, check_prop1,
    cost_from_embeddings, diagonal_topn_kernel, entropy, exact_barycenter_2bin, exact_ot_2bin,
    geometric_mean, kernel_from_cost, normalize, semantic_shuffle_with_threshold,
    smoothness_energy, unbalanced_barycenter, BarycenterResult, BoundCheck, Coupling,
    DiagnosticsReport, DiagonalKernelParams, DistancePath, Domain, Ensemble, EnsembleInput,
    GroundMetric, Histogram, MeanOptions, SolverParams, Support,
};

use crate::io::{parse_weights, write_models, write_output, Embeddings, MetricFile, ModelsFile};
use crate::json::{num, nums, render, Obj};
use crate::{
    BenchArgs, CliError, DiagnoseArgs, DomainArg, EnsembleArgs, Mode, OracleArgs, ShuffleArgs,
    SolverArgs,
};

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Auto => "auto",
        Domain::Scaling => "scaling",
        Domain::Log => "log",
    }
}

fn solver_params(args: &SolverArgs) -> Result<SolverParams<f64>, CliError> {
    let epsilon = args
        .epsilon
        .ok_or_else(|| CliError::Config("--epsilon is required for barycenter modes".into()))?;
    let domain = match args.domain {
        DomainArg::Auto => Domain::Auto,
        DomainArg::Scaling => Domain::Scaling,
        DomainArg::Log => Domain::Log,
    };
    Ok(SolverParams::new(epsilon)
        .with_kl_lambda(args.kl_lambda)
        .with_max_iter(args.max_iter)
        .with_tolerance(args.tol)
        .with_domain(domain))
}

fn checks_json(checks: &[BoundCheck<f64>]) -> Value {
    Value::Array(
        checks
            .iter()
            .map(|c| {
                Obj::new()
                    .with("name", c.name.as_str())
                    .with("lhs", num(c.lhs))
                    .with("rhs", num(c.rhs))
                    .with("satisfied", c.satisfied)
                    .into_value()
            })
            .collect(),
    )
}

fn histograms(
    file: &ModelsFile,
    support: &Arc<Support<f64>>,
    normalized: bool,
) -> Result<Vec<Histogram<f64>>, CliError> {
    file.rows
        .iter()
        .map(|r| Histogram::new(support.clone(), r.clone(), normalized).map_err(CliError::from))
        .collect()
}

/// Entropy of the renormalized histogram.
fn entropy_of(h: &Histogram<f64>) -> Result<f64, CliError> {
    Ok(entropy(&normalize(h.clone())?)?)
}

struct Shared {
    embeddings: Option<Embeddings>,
    metric: Option<MetricFile>,
}

pub fn ensemble(args: &EnsembleArgs) -> Result<(), CliError> {
    let barycenter_mode = matches!(args.mode, Mode::Balanced | Mode::Unbalanced);
    if barycenter_mode {
        solver_params(&args.solver)?;
    } else if args.kernel.is_some() || args.top_n.is_some() {
        return Err(CliError::Config(
            "--kernel and --top-n apply to the barycenter modes only".into(),
        ));
    }
    if args.top_n.is_some() && args.mode != Mode::Unbalanced {
        return Err(CliError::Config(
            "--top-n requires --mode unbalanced".into(),
        ));
    }
    if args.top_n.is_some() && args.kernel.is_some() {
        return Err(CliError::Config(
            "--top-n and --kernel are exclusive".into(),
        ));
    }
    if barycenter_mode && args.kernel.is_none() && args.top_n.is_none() && args.embeddings.is_none()
    {
        return Err(CliError::Config(
            "barycenter modes need --kernel, --embeddings or --top-n".into(),
        ));
    }
    if args.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let shared = Shared {
        embeddings: args
            .embeddings
            .as_deref()
            .map(Embeddings::read)
            .transpose()?,
        metric: args.kernel.as_deref().map(MetricFile::read).transpose()?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let runs: Vec<Result<Value, CliError>> = pool.install(|| {
        args.inputs
            .par_iter()
            .map(|p| ensemble_one(args, &shared, p))
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let doc = if runs.len() == 1 {
        let mut doc = Obj::schema();
        if let Some(Value::Object(fields)) = runs.into_iter().next() {
            for (k, v) in fields {
                doc.set(&k, v);
            }
        }
        doc.into_value()
    } else {
        Obj::schema().with("runs", Value::Array(runs)).into_value()
    };
    write_output(args.out.as_deref(), &render(&doc))
}

fn ensemble_one(args: &EnsembleArgs, shared: &Shared, path: &Path) -> Result<Value, CliError> {
    let file = ModelsFile::read(path)?;
    let support = file.support(shared.embeddings.as_ref())?;
    let weights = parse_weights(&args.weights, file.rows.len())?;
    let mut out = Obj::new()
        .with("input", path.display().to_string())
        .with("mode", format!("{:?}", args.mode).to_lowercase());

    let (barycenter, result, input) = match args.mode {
        Mode::Arithmetic | Mode::Geometric => {
            let ens = Ensemble::new(histograms(&file, &support, false)?, weights)?;
            let h = if args.mode == Mode::Arithmetic {
                arithmetic_mean(&ens)?
            } else {
                geometric_mean(&ens, &MeanOptions::default())?
            };
            (h, None, None)
        }
        Mode::Balanced | Mode::Unbalanced => {
            let params = solver_params(&args.solver)?.with_couplings(args.emit_couplings);
            let kernel = match (&shared.metric, args.top_n) {
                (Some(m), _) => m.ground_metric(&support, params.epsilon)?,
                (None, Some(top_n)) => {
                    let diag = DiagonalKernelParams::new(top_n, args.zeta)
                        .map_err(|e| CliError::Config(format!("{}: {e}", e.name())))?;
                    diagonal_topn_kernel(support.clone(), &file.rows, &diag)?
                }
                (None, None) => {
                    let cost = cost_from_embeddings(support.clone(), support.clone(), true)?;
                    kernel_from_cost(&cost, params.epsilon)?
                }
            };
            let balanced = args.mode == Mode::Balanced;
            let ens = Ensemble::new(histograms(&file, &support, balanced)?, weights)?;
            let input = EnsembleInput::with_shared_kernel(ens, Arc::new(kernel))?;
            let result = if balanced {
                balanced_barycenter(&input, &params)?
            } else {
                unbalanced_barycenter(&input, &params)?
            };
            (result.barycenter.clone(), Some(result), Some(input))
        }
    };

    out.set("labels", barycenter.support().labels().to_vec());
    out.set("barycenter", nums(barycenter.mass()));
    out.set("entropy", num(entropy_of(&barycenter)?));
    if barycenter.support().points().is_some() {
        out.set(
            "smoothness_energy",
            num(smoothness_energy(&normalize(barycenter.clone())?)?),
        );
    }
    match &result {
        Some(r) => {
            out.set("iterations_run", r.iterations_run);
            out.set("final_residual", num(r.final_residual));
            out.set("converged", r.converged);
            out.set("domain", domain_name(r.domain));
        }
        None => {
            out.set("iterations_run", 0);
            out.set("final_residual", num(0.0));
            out.set("converged", true);
        }
    }
    let checks = match (&result, &input) {
        (Some(r), Some(inp)) if r.couplings.is_some() => check_entropy_lemma(r, inp)?.bound_checks,
        _ => Vec::new(),
    };
    out.set("bound_checks", checks_json(&checks));
    if let Some(r) = result.as_ref().filter(|r| r.couplings.is_some()) {
        let target_bin = argmax(r.barycenter.mass());
        let sources = attribute_sources(r, target_bin)?;
        out.set(
            "attributions",
            Obj::new()
                .with("target_bin", target_bin)
                .with(
                    "sources",
                    Value::Array(sources.iter().map(|s| nums(s)).collect()),
                )
                .into_value(),
        );
        out.set(
            "couplings",
            couplings_json(r.couplings.as_deref().unwrap_or_default()),
        );
    }
    Ok(out.into_value())
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
}

fn couplings_json(couplings: &[Coupling<f64>]) -> Value {
    Value::Array(
        couplings
            .iter()
            .map(|c| {
                Value::Array(
                    c.matrix
                        .rows()
                        .into_iter()
                        .map(|r| nums(&r.to_vec()))
                        .collect(),
                )
            })
            .collect(),
    )
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::parse(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

fn json_floats(path: &Path, v: &Value, what: &str) -> Result<Vec<f64>, CliError> {
    v.as_array()
        .ok_or_else(|| CliError::parse(path, format!("`{what}` is not an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| CliError::parse(path, format!("`{what}` holds a non-number")))
        })
        .collect()
}

/// Rebuilds the result of an `ensemble` run.
fn read_result(
    path: &Path,
    support: &Arc<Support<f64>>,
) -> Result<BarycenterResult<f64>, CliError> {
    let doc = read_json(path)?;
    let mass = json_floats(path, &doc["barycenter"], "barycenter")?;
    let barycenter = Histogram::new(support.clone(), mass, false)?;
    let couplings = match doc.get("couplings") {
        Some(Value::Array(cs)) => Some(
            cs.iter()
                .map(|c| {
                    let rows = c
                        .as_array()
                        .ok_or_else(|| CliError::parse(path, "coupling is not a matrix"))?
                        .iter()
                        .map(|r| json_floats(path, r, "couplings"))
                        .collect::<Result<Vec<_>, _>>()?;
                    let ncols = rows.first().map_or(0, Vec::len);
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    ndarray::Array2::from_shape_vec((rows.len(), ncols), flat)
                        .map(|matrix| Coupling { matrix })
                        .map_err(|e| CliError::parse(path, e))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        _ => None,
    };
    let domain = match doc["domain"].as_str() {
        Some("log") => Domain::Log,
        Some("scaling") => Domain::Scaling,
        _ => Domain::Auto,
    };
    Ok(BarycenterResult {
        barycenter,
        couplings,
        iterations_run: doc["iterations_run"].as_u64().unwrap_or(0) as usize,
        final_residual: doc["final_residual"].as_f64().unwrap_or(f64::INFINITY),
        converged: doc["converged"].as_bool().unwrap_or(false),
        domain,
    })
}

fn path_name(p: DistancePath) -> &'static str {
    match p {
        DistancePath::Exact2Bin => "exact_2bin",
        DistancePath::Sinkhorn => "sinkhorn",
        DistancePath::None => "none",
    }
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    if args.oracle.is_some() && args.embeddings.is_none() {
        return Err(CliError::Config("--oracle checks need --embeddings".into()));
    }
    let file = ModelsFile::read(&args.inputs)?;
    let embeddings = args
        .embeddings
        .as_deref()
        .map(Embeddings::read)
        .transpose()?;
    let support = file.support(embeddings.as_ref())?;
    let weights = parse_weights(&args.weights, file.rows.len())?;
    let result = read_result(&args.result, &support)?;
    let ens = Ensemble::new(histograms(&file, &support, false)?, weights)?;
    let input =
        EnsembleInput::with_shared_kernel(ens, Arc::new(GroundMetric::identity(support.clone())))?;

    let mut reports: Vec<DiagnosticsReport<f64>> = Vec::new();
    if let Some(oracle_path) = &args.oracle {
        let oracle = ModelsFile::read(oracle_path)?;
        if oracle.rows.len() != 1 {
            return Err(CliError::parse(oracle_path, "expected exactly one row"));
        }
        let nu = Histogram::new(support.clone(), oracle.rows[0].clone(), true)?;
        reports.push(check_prop1(&result, &input, &nu, args.epsilon)?);
    }
    if result.couplings.is_some() {
        reports.push(check_entropy_lemma(&result, &input)?);
    }
    if reports.is_empty() {
        return Err(CliError::Config(
            "nothing to check: pass --oracle or a result with couplings".into(),
        ));
    }
    let head = &reports[0];
    let checks: Vec<BoundCheck<f64>> = reports
        .iter()
        .flat_map(|r| r.bound_checks.clone())
        .collect();
    let doc = Obj::schema()
        .with("entropy", num(head.entropy))
        .with(
            "smoothness_energy",
            head.smoothness_energy.map_or(Value::Null, num),
        )
        .with("per_model_entropies", nums(&head.per_model_entropies))
        .with("distance_path", path_name(head.distance_path))
        .with("all_satisfied", checks.iter().all(|c| c.satisfied))
        .with("bound_checks", checks_json(&checks));
    write_output(args.out.as_deref(), &render(&doc.into_value()))
}

pub fn oracle(args: &OracleArgs) -> Result<(), CliError> {
    let file = ModelsFile::read(&args.inputs)?;
    if file.labels.len() != 2 {
        return Err(CliError::Config(
            "the exact oracle needs two-bin models".into(),
        ));
    }
    let support = file.support(None)?;
    let metric = MetricFile::read(&args.kernel)?;
    let cost_metric = metric.cost_metric(&support)?;
    let cost = cost_metric.cost().expect("cost metric carries a cost");
    let weights = parse_weights(&args.weights, file.rows.len())?;
    let models = histograms(&file, &support, true)?;
    let mus: Vec<[f64; 2]> = models.iter().map(|h| [h.mass()[0], h.mass()[1]]).collect();
    let p = exact_barycenter_2bin(&mus, weights.lambdas(), cost)?;
    let distances: Vec<f64> = mus.iter().map(|&mu| exact_ot_2bin(p, mu, cost).0).collect();
    let objective: f64 = distances
        .iter()
        .zip(weights.lambdas())
        .map(|(d, w)| d * w)
        .sum();
    let mut doc = Obj::schema()
        .with("labels", file.labels.clone())
        .with("barycenter", nums(&p))
        .with("objective", num(objective))
        .with("model_distances", nums(&distances));
    if let Some(path) = &args.reference {
        let reference = ModelsFile::read(path)?;
        let nu = Histogram::new(support.clone(), reference.rows[0].clone(), true)?;
        let nu = [nu.mass()[0], nu.mass()[1]];
        doc.set("reference_distance", num(exact_ot_2bin(p, nu, cost).0));
    }
    write_output(args.out.as_deref(), &render(&doc.into_value()))
}

fn random_histogram(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.models == 0 || args.bins == 0 || args.instances == 0 {
        return Err(CliError::Config(
            "models, bins and instances must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let points: Vec<Vec<f64>> = (0..args.bins)
        .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let support = Arc::new(Support::indexed(args.bins).with_points(points)?);
    let cost = cost_from_embeddings(support.clone(), support.clone(), true)?;
    let kernel = Arc::new(kernel_from_cost(&cost, args.epsilon)?);
    let params = SolverParams::new(args.epsilon).with_max_iter(args.max_iter);

    let mut times_ms = Vec::with_capacity(args.instances);
    for _ in 0..args.instances {
        let models = (0..args.models)
            .map(|_| Histogram::new(support.clone(), random_histogram(&mut rng, args.bins), true))
            .collect::<Result<Vec<_>, _>>()?;
        let input = EnsembleInput::with_shared_kernel(Ensemble::uniform(models)?, kernel.clone())?;
        let start = Instant::now();
        let r = balanced_barycenter(&input, &params)?;
        times_ms.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(r);
    }
    times_ms.sort_by(f64::total_cmp);
    let pick = |q: f64| times_ms[((times_ms.len() - 1) as f64 * q).round() as usize];
    let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
    let doc = Obj::schema()
        .with("models", args.models)
        .with("bins", args.bins)
        .with("instances", args.instances)
        .with("max_iter", args.max_iter)
        .with("epsilon", num(args.epsilon))
        .with("median_ms", num(pick(0.5)))
        .with("mean_ms", num(mean))
        .with("p95_ms", num(pick(0.95)))
        .with("max_ms", num(pick(1.0)));
    write_output(args.out.as_deref(), &render(&doc.into_value()))
}

pub fn shuffle(args: &ShuffleArgs) -> Result<(), CliError> {
    let file = ModelsFile::read(&args.inputs)?;
    let support = file.support(None)?;
    let metric = MetricFile::read(&args.kernel)?;
    let epsilon = match metric.kind {
        crate::io::MetricKind::Kernel => 1.0,
        crate::io::MetricKind::Cost { epsilon } => epsilon.or(args.epsilon).ok_or_else(|| {
            CliError::Config("cost kernel files need --epsilon or an epsilon header".into())
        })?,
    };
    let kernel = Arc::new(metric.ground_metric(&support, epsilon)?);
    let ens = Ensemble::uniform(histograms(&file, &support, false)?)?;
    let input = EnsembleInput::with_shared_kernel(ens, kernel.clone())?;
    let shuffled = semantic_shuffle_with_threshold(&input, &kernel, args.seed, args.threshold)?;
    let rows: Vec<&[f64]> = shuffled.models().iter().map(Histogram::mass).collect();
    write_models(args.out.as_deref(), &file.labels, &rows)
}
