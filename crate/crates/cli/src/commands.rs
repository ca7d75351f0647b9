use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use choice_confound::clustering::{build_incidence, cluster_fit, spectral_cocluster, ClusterAssignment};
use choice_confound::estimation::{fit, fit_mixed_logit, EmConfig};
use choice_confound::evaluation::{
    cluster_benchmark, counterfactual_benchmark, detect_regularity_violations, lrt_models, mean_relative_position,
    render_benchmark, render_table, write_benchmark_csv, write_cluster_benchmark_csv, BenchmarkConfig,
    ClusterBenchmarkConfig,
};
use choice_confound::propensity::{
    fit_affine_gaussian, fit_item_logistic, ipw_weights, ipw_weights_raw, normalized_ipw_loglik, PropensityModel,
};
use choice_confound::rng::derive_seed;
use choice_confound::synthetic::{
    generate_gaussian_recommender, generate_typed_population, pets_oracle, SetMode, SyntheticWorld,
    TypedPopulationConfig,
};
use choice_confound::{
    ChoiceDataset, ChoiceFormat, FitConfig, Family, ModelDocument, ModelSpec, SampleWeights, WeightKind,
};
use clap::ArgMatches;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::manifest::{beside, Recorder};
use crate::{CliError, CliResult};

pub fn dispatch(cmd: Command, sub: &clap::Command, matches: &ArgMatches) -> CliResult<()> {
    let mut rec = Recorder::new(sub, matches);
    let manifest_path = match cmd {
        Command::Simulate(a) => simulate(a, &mut rec)?,
        Command::Fit(a) => fit_cmd(a, &mut rec)?,
        Command::Propensity(a) => propensity(a, &mut rec)?,
        Command::IpwWeights(a) => ipw(a, &mut rec)?,
        Command::Cluster(a) => cluster(a, &mut rec)?,
        Command::ClusterFit(a) => cluster_fit_cmd(a, &mut rec)?,
        Command::Evaluate(a) => evaluate(a, &mut rec)?,
        Command::Lrt(a) => lrt_cmd(a, &mut rec)?,
        Command::Regularity(a) => regularity(a, &mut rec)?,
        Command::Benchmark(a) => benchmark(a, &mut rec)?,
    };
    rec.finish(manifest_path)?;
    Ok(())
}

fn load(d: &DataArgs, rec: &mut Recorder) -> CliResult<ChoiceDataset> {
    let format = d.format.unwrap_or_else(|| ChoiceFormat::from_path(&d.choices));
    rec.input(&d.choices)?;
    let mut ds = ChoiceDataset::load_choices(&d.choices, format)
        .map_err(|e| CliError::Data(format!("{}: {e}", d.choices.display())))?;
    if let Some(p) = &d.covariates {
        rec.input(p)?;
        ds = ds
            .attach_covariates(p)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &d.item_features {
        rec.input(p)?;
        ds = ds
            .attach_item_features(p)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    Ok(ds)
}

fn fit_config(o: &OptimArgs, seed: u64) -> FitConfig {
    FitConfig {
        max_epochs: o.max_epochs,
        grad_norm_sq_tol: o.grad_tol,
        l2_lambda: o.l2,
        seed,
        normalize_weights: !o.raw_weights,
        ..FitConfig::default()
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T, rec: &mut Recorder) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    rec.output(path);
    Ok(())
}

/// Models are stored against an item order; data is remapped onto it.
/// Feature-only families are order-free and skip the remap.
fn align_to(ds: ChoiceDataset, doc: &ModelDocument) -> CliResult<ChoiceDataset> {
    if !doc.spec.family.has_item_params() || ds.items().ids() == doc.item_ids.as_slice() {
        return Ok(ds);
    }
    Ok(ds.align_items(&doc.item_ids)?)
}

fn simulate(a: SimulateArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    create_dir(&a.out_dir)?;
    let choices = a.out_dir.join("choices.csv");
    let covariates = a.out_dir.join("covariates.csv");
    let ds = match a.preset {
        SimPreset::Sec44 => {
            let world = SyntheticWorld::random(a.items, a.c, a.seed)?;
            let mode = if a.uniform_sets { SetMode::Uniform } else { SetMode::Confounded };
            let sample = world.sample(a.samples, mode, derive_seed(a.seed, 1))?;
            write_json(&a.out_dir.join("world.json"), &world, rec)?;
            println!("sec44: {} observations, {} rejected sets", sample.dataset.len(), sample.rejections);
            sample.dataset
        }
        SimPreset::Pets => {
            let sample = pets_oracle().sample(a.samples, a.seed)?;
            let path = a.out_dir.join("propensities.csv");
            let mut text = String::from("obs_index,propensity\n");
            for (k, p) in sample.propensities.iter().enumerate() {
                text.push_str(&format!("{k},{p:e}\n"));
            }
            std::fs::write(&path, text)?;
            rec.output(&path);
            println!("pets: {} observations", sample.dataset.len());
            sample.dataset
        }
        SimPreset::Gaussian => {
            let d = a.dim;
            let mu = if a.mu.is_empty() {
                DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 })
            } else {
                DVector::from_vec(a.mu.clone())
            };
            let ds = generate_gaussian_recommender(
                &mu,
                &(DMatrix::identity(d, d) * a.sigma0_scale),
                &(DMatrix::identity(d, d) * a.sigma_scale),
                a.set_size,
                a.samples,
                a.seed,
            )?;
            let path = a.out_dir.join("item_features.csv");
            ds.write_item_features(&path)?;
            rec.output(&path);
            println!("gaussian: {} observations, {} items", ds.len(), ds.n_items());
            ds
        }
        SimPreset::TypedSbm => {
            let cfg = TypedPopulationConfig {
                n_types: a.types,
                items_per_type: a.items_per_type,
                p: a.p,
                q: a.q,
                n_samples: a.samples,
                seed: a.seed,
                ..TypedPopulationConfig::default()
            };
            let pop = generate_typed_population(&cfg)?;
            let truth = ClusterAssignment::new(pop.chooser_types.clone(), pop.item_types.clone(), a.types)?;
            let rows: Vec<String> = (0..pop.dataset.len()).map(|k| k.to_string()).collect();
            let path = a.out_dir.join("truth.csv");
            truth.write_csv(&path, &rows)?;
            rec.output(&path);
            let path = a.out_dir.join("truth_items.csv");
            truth.write_item_csv(&path, pop.dataset.items().ids())?;
            rec.output(&path);
            let world = json!({
                "config": cfg,
                "item_types": pop.item_types,
                "utilities": pop.utilities,
            });
            write_json(&a.out_dir.join("world.json"), &world, rec)?;
            println!("typed-sbm: {} observations, {} rejected sets", pop.dataset.len(), pop.rejections);
            pop.dataset
        }
    };
    ds.write_choices(&choices, ChoiceFormat::Csv)?;
    rec.output(&choices);
    if ds.chooser_covariates().is_some() {
        ds.write_covariates(&covariates)?;
        rec.output(&covariates);
    }
    Ok(a.out_dir.join("manifest.json"))
}

fn read_weights(path: &Path, n: usize, rec: &mut Recorder) -> CliResult<SampleWeights> {
    rec.input(path)?;
    let w = SampleWeights::read_csv(path, WeightKind::IpwRaw)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    w.check_len(n)?;
    Ok(w)
}

fn fit_cmd(a: FitArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    let ds = load(&a.data, rec)?;
    let cfg = fit_config(&a.optim, a.seed);
    let result = if a.family == Family::MixedLogit {
        if a.weights.is_some() {
            return Err(CliError::Data("mixed-logit fits do not take sample weights".into()));
        }
        let em = EmConfig {
            max_iters: a.em_iters,
            ll_tol: a.em_tol,
            timeout_seconds: a.em_timeout,
            m_step_epochs: a.m_step_epochs,
        };
        fit_mixed_logit(a.components, &ds, &cfg, &em)?
    } else {
        let w = match &a.weights {
            Some(p) => read_weights(p, ds.len(), rec)?,
            None => SampleWeights::uniform(ds.len()),
        };
        let spec = ModelSpec::for_dataset(a.family, &ds)?
            .with_self_pulls(a.self_pulls)
            .with_intercepts(!a.no_intercepts);
        fit(&spec, &ds, &w, &cfg)?
    };
    ModelDocument::from_fit(&result, &ds).write(&a.out)?;
    rec.output(&a.out);
    println!(
        "{}: log-likelihood {:.6}, {} parameters, {} epochs{}",
        a.family,
        result.log_likelihood,
        result.model.spec().n_params(),
        result.epochs_run,
        if result.converged { ", converged" } else { "" }
    );
    Ok(beside(&a.out))
}

pub const PROPENSITY_FORMAT: &str = "choice-confound/propensity";

/// A propensity model with the item order and covariate names it was fit on.
#[derive(Debug, Serialize, Deserialize)]
struct PropensityDocument {
    format: String,
    item_ids: Vec<String>,
    covariate_names: Vec<String>,
    model: PropensityModel,
}

fn propensity(a: PropensityArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    let ds = load(&a.data, rec)?;
    let model = match a.model {
        PropensityKind::ItemLogistic => PropensityModel::ItemLogistic(fit_item_logistic(&ds)?),
        PropensityKind::AffineGaussian => PropensityModel::AffineGaussian(fit_affine_gaussian(&ds)?),
    };
    println!("{} propensity model over {} observations", model.name(), ds.len());
    let doc = PropensityDocument {
        format: PROPENSITY_FORMAT.to_string(),
        item_ids: ds.items().ids().to_vec(),
        covariate_names: ds.chooser_covariates().map(|t| t.names().to_vec()).unwrap_or_default(),
        model,
    };
    write_json(&a.out, &doc, rec)?;
    Ok(beside(&a.out))
}

fn ipw(a: IpwArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.input(&a.propensity)?;
    let text = std::fs::read_to_string(&a.propensity)?;
    let doc: PropensityDocument = serde_json::from_str(&text)?;
    if doc.format != PROPENSITY_FORMAT {
        return Err(CliError::Data(format!("{} is not a propensity document", a.propensity.display())));
    }
    // Re-validates the model payload.
    let model = PropensityModel::from_json(&serde_json::to_string(&doc.model)?)?;
    let mut ds = load(&a.data, rec)?;
    if matches!(model, PropensityModel::ItemLogistic(_)) && ds.items().ids() != doc.item_ids.as_slice() {
        ds = ds.align_items(&doc.item_ids)?;
    }
    let w = if a.raw {
        ipw_weights_raw(&model, &ds, a.clip_quantile)?
    } else {
        ipw_weights(&model, &ds, a.clip_quantile)?
    };
    w.write_csv(&a.out)?;
    rec.output(&a.out);
    let v = w.values();
    let max = v.iter().cloned().fold(0.0, f64::max);
    println!("{} weights, mean {:.4}, max {:.4}", v.len(), w.mean(), max);
    Ok(beside(&a.out))
}

fn cluster(a: ClusterArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    let ds = load(&a.data, rec)?;
    let inc = build_incidence(&ds)?;
    let ca = spectral_cocluster(&inc, a.k, a.seed)?;
    ca.write_csv(&a.out, inc.row_ids())?;
    rec.output(&a.out);
    if let Some(p) = &a.items_out {
        ca.write_item_csv(p, inc.col_ids())?;
        rec.output(p);
    }
    println!("{} clusters, sizes {:?}", ca.k, ca.sizes());
    Ok(beside(&a.out))
}

fn cluster_fit_cmd(a: ClusterFitArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    let ds = load(&a.data, rec)?;
    rec.input(&a.assignment)?;
    let ca = ClusterAssignment::read_csv(&a.assignment, ds.len())
        .map_err(|e| CliError::Data(format!("{}: {e}", a.assignment.display())))?;
    let cf = cluster_fit(&ds, &ca, a.family, &fit_config(&a.optim, a.seed))?;
    create_dir(&a.out_dir)?;
    let mut per_cluster = Vec::new();
    for (c, f) in cf.fits.iter().enumerate() {
        let path = a.out_dir.join(format!("cluster_{c}.json"));
        ModelDocument::from_fit(f, &ds).write(&path)?;
        rec.output(&path);
        per_cluster.push(json!({
            "cluster": c,
            "observations": ca.members(c).len(),
            "log_likelihood": f.log_likelihood,
            "model": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        }));
    }
    let summary = json!({
        "family": a.family,
        "k": ca.k,
        "total_log_likelihood": cf.total_log_likelihood,
        "clusters": per_cluster,
    });
    write_json(&a.out_dir.join("summary.json"), &summary, rec)?;
    println!("{} clusters, total log-likelihood {:.6}", ca.k, cf.total_log_likelihood);
    Ok(a.out_dir.join("manifest.json"))
}

fn read_model(path: &Path, rec: &mut Recorder) -> CliResult<ModelDocument> {
    rec.input(path)?;
    ModelDocument::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn evaluate(a: EvaluateArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    let doc = read_model(&a.model, rec)?;
    let model = doc.model()?;
    let ds = align_to(load(&a.data, rec)?, &doc)?;
    let value = match a.metric {
        Metric::Ll => model.log_likelihood_unweighted(&ds)?,
        Metric::IpwLl => {
            let path = a
                .weights
                .as_ref()
                .ok_or_else(|| CliError::Usage("--metric ipw-ll needs --weights".into()))?;
            let w = read_weights(path, ds.len(), rec)?;
            normalized_ipw_loglik(&model, &ds, &w)?
        }
        Metric::Mrp => mean_relative_position(&model, &ds)?,
    };
    let name = match a.metric {
        Metric::Ll => "ll",
        Metric::IpwLl => "ipw-ll",
        Metric::Mrp => "mrp",
    };
    let report = json!({
        "metric": name,
        "value": value,
        "family": doc.spec.family,
        "n_observations": ds.len(),
    });
    write_json(&a.out, &report, rec)?;
    println!("{name} = {value:.10}");
    Ok(beside(&a.out))
}

fn lrt_cmd(a: LrtArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    let r = read_model(&a.restricted, rec)?;
    let f = read_model(&a.full, rec)?;
    let ds = load(&a.data, rec)?;
    let (rm, fm) = (r.model()?, f.model()?);
    let (rds, fds) = (align_to(ds.clone(), &r)?, align_to(ds, &f)?);
    // Both models must score the same observations under one item order.
    let ds = match (r.spec.family.has_item_params(), f.spec.family.has_item_params()) {
        (true, true) if r.item_ids != f.item_ids => {
            return Err(CliError::Data("restricted and full models use different item orders".into()))
        }
        (true, _) => rds,
        _ => fds,
    };
    let report = lrt_models(&rm, &fm, &ds)?;
    write_json(&a.out, &report, rec)?;
    println!(
        "{} vs {}: statistic {:.4}, df {}, p = {:.4e}",
        report.restricted_family, report.full_family, report.statistic, report.df, report.p_value
    );
    Ok(beside(&a.out))
}

fn regularity(a: RegularityArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    let ds = load(&a.data, rec)?;
    let report = detect_regularity_violations(&ds, a.min_count, a.alpha, a.general_pairs)?;
    write_json(&a.out, &report, rec)?;
    println!("{} tests, {} findings at alpha {}", report.n_tests, report.findings.len(), a.alpha);
    if !report.findings.is_empty() {
        let rows: Vec<Vec<String>> = report
            .findings
            .iter()
            .map(|f| {
                vec![
                    f.item.clone(),
                    f.subset.join(" "),
                    f.superset.join(" "),
                    format!("{:.4}", f.subset_rate),
                    format!("{:.4}", f.superset_rate),
                    format!("{:.3e}", f.p_value),
                ]
            })
            .collect();
        print!(
            "{}",
            render_table(&["item", "subset", "superset", "subset rate", "superset rate", "p"], &rows)
        );
    }
    Ok(beside(&a.out))
}

fn benchmark(a: BenchmarkArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    let fitc = fit_config(&a.optim, a.seed);
    match a.preset {
        BenchPreset::Sec44 => {
            let cfg = BenchmarkConfig {
                n_items: a.items,
                n_samples: a.samples.unwrap_or(10_000),
                train_fraction: a.train_fraction,
                n_trials: a.trials,
                confounding: a.c.clone(),
                seed: a.seed,
                fit: fitc,
                ..BenchmarkConfig::default()
            };
            let rows = counterfactual_benchmark(&cfg)?;
            write_benchmark_csv(&rows, &a.out)?;
            print!("{}", render_benchmark(&rows));
        }
        BenchPreset::Clusters => {
            let defaults = ClusterBenchmarkConfig::default();
            let cfg = ClusterBenchmarkConfig {
                population: TypedPopulationConfig {
                    n_types: a.types,
                    items_per_type: a.items_per_type,
                    p: a.p,
                    q: a.q,
                    n_samples: a.samples.unwrap_or(defaults.population.n_samples),
                    ..defaults.population
                },
                ks: a.k.clone(),
                n_trials: a.trials,
                seed: a.seed,
                fit: fitc,
                em: EmConfig {
                    max_iters: a.em_iters,
                    ..defaults.em
                },
            };
            let rows = cluster_benchmark(&cfg)?;
            write_cluster_benchmark_csv(&rows, &a.out)?;
            let mut by_method: BTreeMap<(usize, &str), Vec<f64>> = BTreeMap::new();
            for r in &rows {
                by_method.entry((r.k, r.method.name())).or_default().push(r.log_likelihood);
            }
            let body: Vec<Vec<String>> = by_method
                .iter()
                .map(|((k, m), v)| {
                    vec![
                        k.to_string(),
                        m.to_string(),
                        format!("{:.2}", v.iter().sum::<f64>() / v.len() as f64),
                    ]
                })
                .collect();
            print!("{}", render_table(&["k", "method", "mean log-likelihood"], &body));
        }
    }
    rec.output(&a.out);
    Ok(beside(&a.out))
}
