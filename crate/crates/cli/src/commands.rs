use std::fs;
use std::path::Path;

use spock::diagnostics;
use spock::fit::{self, posterior_summary, Family, FitInput, McmcConfig, Method, ModelSpec, Reconstruction};
use spock::geometry::{build_projector, project_centroids};
use spock::graph::score_reconstruction;
use spock::io::{input_manifest, load_dataset, load_map, write_fit, write_map, AreaMap, Dataset};
use spock::simulation::{run_study, write_study};
use spock::{PrecisionFamily, Result, SpockError};

use crate::study::{read_study_file, resolve};
use crate::{
    Cli, Command, DataArgs, DiagnoseArgs, FamilyArg, FitArgs, GraphArgs, MapArgs, MethodArg, ProjectArgs,
    SimulateArgs, SpatialFamilyArg,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Diagnose(a) => diagnose(&a),
        Command::Project(a) => project(&a),
        Command::Fit(a) => fit_cmd(&a, cli.verbose),
        Command::Simulate(a) => simulate(&a, cli.verbose),
    }
}

fn family(f: FamilyArg) -> Family {
    match f {
        FamilyArg::Gaussian => Family::Gaussian,
        FamilyArg::Poisson => Family::Poisson,
    }
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Lm => Method::Lm,
        MethodArg::Icar => Method::Icar,
        MethodArg::Rhz => Method::Rhz,
        MethodArg::Hh => Method::Hh,
        MethodArg::Spock => Method::Spock,
    }
}

fn load_inputs(m: &MapArgs, d: &DataArgs) -> Result<(AreaMap, Dataset)> {
    let map = load_map(&m.map, &m.adjacency, m.allow_islands)?;
    let ds = load_dataset(&d.data, &map, family(d.family), !d.no_intercept)?;
    Ok((map, ds))
}

fn reconstruction(g: &GraphArgs, k_override: Option<usize>) -> Result<Reconstruction> {
    if g.delaunay {
        if k_override.is_some() {
            return Err(SpockError::InvalidParameter("--k-override applies to --knn only".into()));
        }
        return Ok(Reconstruction::Delaunay);
    }
    Ok(Reconstruction::Knn { k_override })
}

fn manifest(m: &MapArgs, d: &DataArgs) -> Result<serde_json::Value> {
    let files = input_manifest(&[("centroids", &m.map), ("adjacency", &m.adjacency), ("data", &d.data)])?;
    Ok(serde_json::json!({
        "files": files,
        "allow_islands": m.allow_islands,
        "intercept": !d.no_intercept,
        "family": family(d.family),
    }))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(SpockError::InvalidParameter(format!("--alpha must be in (0, 1), got {}", a.alpha)));
    }
    let (map, ds) = load_inputs(&a.map, &a.data)?;
    let rep = diagnostics::diagnose(&map.centroids, &ds.x, a.n_perm, a.seed)?;
    let rho: Vec<String> = rep.rho.iter().map(|r| format!("{r:.6}")).collect();
    println!("rho: {}", rho.join(" "));
    println!("wilks_lambda: {:.6}", rep.wilks_lambda);
    println!("F: {:.6} on ({}, {}) df", rep.f_statistic, rep.df.0, rep.df.1);
    println!("p_asymptotic: {:.6e}", rep.p_asymptotic);
    match rep.p_permutation {
        Some(p) => println!("p_permutation: {p:.6} ({} permutations, seed {})", rep.n_permutations, rep.seed),
        None => println!("p_permutation: not run"),
    }
    let verdict = rep.verdict(a.alpha);
    println!("verdict: {verdict}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        let value = serde_json::json!({
            "report": rep,
            "alpha": a.alpha,
            "correction_recommended": rep.correction_recommended(a.alpha),
            "verdict": verdict,
            "inputs": manifest(&a.map, &a.data)?,
            "version": spock::io::VERSION,
        });
        write_json(&out.join("diagnostic.json"), &value)?;
    }
    Ok(())
}

fn project(a: &ProjectArgs) -> Result<()> {
    let (map, ds) = load_inputs(&a.map, &a.data)?;
    let how = reconstruction(&a.graph, a.k_override)?;
    let s_star = project_centroids(&map.centroids, &build_projector(&ds.x))?;
    let rebuilt = fit::spock_graph(&ds.x, &map.centroids, &map.adjacency, &how)?;
    let score = score_reconstruction(&map.adjacency, &rebuilt)?;
    fs::create_dir_all(&a.out)?;
    let projected = AreaMap { centroids: s_star, adjacency: rebuilt };
    write_map(&projected, &a.out.join("centroids_projected.csv"), &a.out.join("adjacency_new.txt"))?;

    let ids = map.ids();
    let mut w = csv::Writer::from_path(a.out.join("centroids_plot.csv"))?;
    w.write_record(["id", "x", "y", "x_projected", "y_projected"])?;
    for i in 0..map.n() {
        let (x, y) = map.centroids.point(i);
        let (px, py) = projected.centroids.point(i);
        w.write_record([ids[i].clone(), x.to_string(), y.to_string(), px.to_string(), py.to_string()])?;
    }
    w.flush()?;
    // New-neighbor segments, drawn both on the original map and in the
    // projected space.
    let mut w = csv::Writer::from_path(a.out.join("segments.csv"))?;
    w.write_record(["id_a", "id_b", "in_original", "x_a", "y_a", "x_b", "y_b", "px_a", "py_a", "px_b", "py_b"])?;
    for &(i, j) in projected.adjacency.edges() {
        let (xa, ya) = map.centroids.point(i);
        let (xb, yb) = map.centroids.point(j);
        let (pxa, pya) = projected.centroids.point(i);
        let (pxb, pyb) = projected.centroids.point(j);
        let mut rec = vec![ids[i].clone(), ids[j].clone(), map.adjacency.has_edge(i, j).to_string()];
        rec.extend([xa, ya, xb, yb, pxa, pya, pxb, pyb].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let value = serde_json::json!({
        "reconstruction": how,
        "sensitivity": score.sensitivity,
        "recall": score.recall,
        "edges_original": map.adjacency.n_edges(),
        "edges_new": projected.adjacency.n_edges(),
        "inputs": manifest(&a.map, &a.data)?,
    });
    write_json(&a.out.join("score.json"), &value)?;
    println!("sensitivity: {:.6}", score.sensitivity);
    println!("recall: {:.6}", score.recall);
    println!("edges: {} original, {} new", map.adjacency.n_edges(), projected.adjacency.n_edges());
    Ok(())
}

fn spatial_family(a: &FitArgs) -> Result<PrecisionFamily> {
    let stray = |flag: &str, fam: &str| {
        Err(SpockError::InvalidParameter(format!("{flag} needs --spatial-family {fam}")))
    };
    match a.spatial_family {
        SpatialFamilyArg::Icar => match (a.rho, a.lambda) {
            (Some(_), _) => stray("--rho", "proper-car"),
            (_, Some(_)) => stray("--lambda", "leroux"),
            _ => Ok(PrecisionFamily::Icar),
        },
        SpatialFamilyArg::ProperCar => {
            if a.lambda.is_some() {
                return stray("--lambda", "leroux");
            }
            let rho = a.rho.ok_or_else(|| SpockError::InvalidParameter("proper-car needs --rho".into()))?;
            Ok(PrecisionFamily::ProperCar { rho })
        }
        SpatialFamilyArg::Leroux => {
            if a.rho.is_some() {
                return stray("--rho", "proper-car");
            }
            let lambda = a.lambda.ok_or_else(|| SpockError::InvalidParameter("leroux needs --lambda".into()))?;
            Ok(PrecisionFamily::Leroux { lambda })
        }
    }
}

fn fit_cmd(a: &FitArgs, verbose: bool) -> Result<()> {
    let (map, ds) = load_inputs(&a.map, &a.data)?;
    let m = method(a.method);
    let mut spec = ModelSpec::new(family(a.data.family), m);
    spec.spatial_family = spatial_family(a)?;
    spec.h = a.h;
    spec.reconstruction = reconstruction(&a.graph, a.k_override)?;
    spec.mcmc = McmcConfig { n_iter: a.iters, n_burn: a.burn, thin: a.thin, seed: a.seed, ..McmcConfig::default() };
    let mut input = FitInput::new(&ds.y, &ds.x).with_graph(&map.adjacency).with_centroids(&map.centroids);
    if let Some(off) = &ds.offset {
        input = input.with_offset(off);
    }
    if verbose {
        eprintln!("fitting {} ({} areas, {} iterations)", m.name(), map.n(), a.iters);
    }
    let f = fit::fit(&input, &spec)?;
    let config = serde_json::json!({ "spec": spec, "inputs": manifest(&a.map, &a.data)? });
    write_fit(&f, &config, &a.out, a.draws)?;
    if let Some(g) = &f.spatial_graph {
        if m == Method::Spock {
            let rebuilt = AreaMap { centroids: map.centroids.clone(), adjacency: g.clone() };
            let text: String = std::iter::once("id_a id_b\n".to_string())
                .chain(rebuilt.adjacency.edges().iter().map(|&(i, j)| format!("{} {}\n", map.ids()[i], map.ids()[j])))
                .collect();
            fs::write(a.out.join("adjacency_spock.txt"), text)?;
        }
    }
    println!("{} {:?} fit, {} draws, {:.3} s", m.name(), spec.family, f.n_draws(), f.wall_time);
    println!("{:<14} {:>12} {:>12} {:>12} {:>12}", "parameter", "mean", "median", "q025", "q975");
    for s in posterior_summary(&f)?.iter().filter(|s| !s.name.starts_with("theta[")) {
        println!("{:<14} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", s.name, s.mean, s.median, s.q025, s.q975);
    }
    if let Some(acc) = &f.acceptance {
        println!("acceptance: beta {:.3}, theta {:.3}", acc.beta_rate, acc.theta_rate);
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, verbose: bool) -> Result<()> {
    let file = read_study_file(&a.config)?;
    let study = resolve(file, &a.config, a.seed)?;
    let workers = match a.workers {
        Some(0) => return Err(SpockError::InvalidParameter("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    if verbose {
        eprintln!(
            "{} replicates x {} models on {} areas, {workers} workers",
            study.config.scenario.n_replicates,
            study.config.models.len(),
            study.map.n()
        );
    }
    let result = run_study(&study.config, &study.map, workers)?;
    write_study(&result, &study.echo, &a.out)?;
    println!("{:<6} {:>12} {:>12} {:>6} {:>7}", "model", "median_s", "sd_s", "ok", "failed");
    for t in result.timing() {
        println!("{:<6} {:>12.6} {:>12.6} {:>6} {:>7}", t.model, t.median_seconds, t.sd_seconds, t.n_ok, t.n_failed);
    }
    for r in result.summary().iter().filter(|r| r.statistic == "median") {
        println!("{} {} median {:.4}", r.model, r.parameter, r.value);
    }
    Ok(())
}
