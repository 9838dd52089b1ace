use std::path::Path;

use anyhow::{bail, Context};
use routelearn::datagen::{generate, load_dataset, save_dataset, SyntheticDataset};
use routelearn::experiment::{
    reports_to_csv, run_method, save_sweep_outputs, sparsity_sweep, split, AppConfig, Method,
    MethodRun,
};
use routelearn::metrics::evaluate_pairs;
use routelearn::model::{load_checkpoint, save_checkpoint, train, SoftRoute};
use routelearn::roadnet::{Route, RouteQuery};
use routelearn::router::{astar, route_di_dis, route_di_time, TheoryRoute};
use routelearn::validator::project;

use crate::{Cli, Command};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = cli.app_config()?;
    match &cli.command {
        Command::Datagen { out } => datagen(&config, out),
        Command::Train { data, out } => train_cmd(&config, data, out),
        Command::Eval {
            data,
            methods,
            checkpoint,
        } => eval_cmd(&config, data, methods, checkpoint.as_deref()),
        Command::Route {
            data,
            method,
            origin,
            destination,
            interval,
        } => route_cmd(data, method, *origin, *destination, *interval),
        Command::Sweep { data, out, methods } => sweep_cmd(&config, data, out, methods),
        Command::ValidateSoft {
            data,
            probs,
            origin,
            destination,
            interval,
        } => validate_soft_cmd(data, probs, *origin, *destination, *interval),
    }
}

fn load(dir: &Path) -> anyhow::Result<SyntheticDataset> {
    load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn parse_methods(list: &str) -> anyhow::Result<Vec<Method>> {
    list.split(',')
        .map(|name| Ok(Method::parse(name.trim())?))
        .collect()
}

fn datagen(config: &AppConfig, out: &Path) -> anyhow::Result<()> {
    let dataset = generate(&config.manifest())?;
    save_dataset(&dataset, out)?;
    println!(
        "wrote {} intersections, {} segments, {} intervals, {} routes to {}",
        dataset.net.intersection_count(),
        dataset.net.segment_count(),
        dataset.traffic.t_total(),
        dataset.routes.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(config: &AppConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let dataset = load(data)?;
    let split = split(dataset.routes.len(), config.seed)?;
    let (params, stats) = train(
        &config.train_config(),
        &dataset.routes,
        &split.train,
        &split.val,
        &dataset.net,
        &dataset.traffic,
    )?;
    save_checkpoint(&params, out)?;
    println!(
        "trained {} epochs on {} routes; train loss {:.4} -> {:.4}, best val epoch {}",
        stats.train_loss.len(),
        split.train.len(),
        stats.initial_train_loss,
        stats.train_loss.last().copied().unwrap_or(stats.initial_train_loss),
        stats.best_epoch
    );
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn eval_cmd(
    config: &AppConfig,
    data: &Path,
    methods: &str,
    checkpoint: Option<&Path>,
) -> anyhow::Result<()> {
    let dataset = load(data)?;
    let methods = parse_methods(methods)?;
    let split = split(dataset.routes.len(), config.seed)?;
    let train_config = config.train_config();

    let mut runs = Vec::new();
    for method in methods {
        let run: MethodRun = if let (Method::L2r, Some(checkpoint)) = (method, checkpoint) {
            let params = load_checkpoint(checkpoint, &dataset.net)?;
            let prepared = routelearn::experiment::prepare(&dataset)?;
            let samples: Vec<_> = split.test.iter().map(|&i| prepared.samples[i].clone()).collect();
            let preds = routelearn::experiment::predict_with_residual(
                &params,
                &dataset,
                &prepared.inputs,
                &samples,
            )?;
            let truths: Vec<Route> = split.test.iter().map(|&i| dataset.routes[i].clone()).collect();
            MethodRun {
                method,
                report: evaluate_pairs(&dataset.net, &preds, &truths)?,
                predictions: preds,
            }
        } else {
            run_method(method, &dataset, &split, &train_config)?
        };
        runs.push((method, run.report));
    }
    print!("{}", reports_to_csv(&runs));
    Ok(())
}

fn route_cmd(
    data: &Path,
    method: &str,
    origin: usize,
    destination: usize,
    interval: usize,
) -> anyhow::Result<()> {
    let dataset = load(data)?;
    let query = RouteQuery {
        origin,
        destination,
        departure_interval: interval,
    };
    let themed: TheoryRoute = match Method::parse(method)? {
        Method::DiDis => route_di_dis(&dataset.net, query)?,
        Method::DiTime => route_di_time(&dataset.net, &dataset.traffic, query)?,
        Method::AStar => astar(&dataset.net, &dataset.traffic, query)?,
        other => bail!("route supports di-dis, di-time, astar; {} needs `eval`", other),
    };
    println!(
        "{}",
        serde_json::json!({
            "method": method,
            "origin": origin,
            "destination": destination,
            "interval": interval,
            "total_cost": themed.total_cost,
            "edges": themed.edge_sequence,
        })
    );
    Ok(())
}

fn sweep_cmd(config: &AppConfig, data: &Path, out: &Path, methods: &str) -> anyhow::Result<()> {
    let dataset = load(data)?;
    let methods = parse_methods(methods)?;
    let table = sparsity_sweep(
        &dataset,
        &config.fractions,
        &methods,
        &config.train_config(),
        config.seed,
    )?;
    save_sweep_outputs(&table, out)?;
    print!("{}", table.to_csv());
    println!("reports written to {}", out.display());
    Ok(())
}

fn validate_soft_cmd(
    data: &Path,
    probs_path: &Path,
    origin: usize,
    destination: usize,
    interval: usize,
) -> anyhow::Result<()> {
    let dataset = load(data)?;
    let text = std::fs::read_to_string(probs_path)
        .with_context(|| format!("reading {}", probs_path.display()))?;
    let probs: Vec<f64> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {} as a JSON array", probs_path.display()))?;
    let soft = SoftRoute::new(probs)?;
    let query = RouteQuery {
        origin,
        destination,
        departure_interval: interval,
    };
    let route = project(&dataset.net, &soft, query)?;
    println!(
        "{}",
        serde_json::json!({
            "origin": origin,
            "destination": destination,
            "edges": route.edge_ids(),
        })
    );
    Ok(())
}
