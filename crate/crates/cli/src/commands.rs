use std::path::{Path, PathBuf};

use trajgp::analysis::{
    cluster_segment, compare as compare_table, fit_flow, force_report, predict_rows, segment_observations, span, summarize, thin,
    train as train_theta, train_force, FlowRow, TrainOptions, DEFAULT_FIT_POINTS,
};
use trajgp::flow::fit_individual_flow;
use trajgp::synthetic::{generate_race, write_race, RaceConfig};
use trajgp::trajectory::{extract_segment, SegmentSpec, SkierConfig, Trajectory};
use trajgp::{HyperParamVector, OptimizeOptions, OptimizeReport};

use crate::config::{read_json, Dataset, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{num, OutputDir};
use crate::report::format_compare;
use crate::{ClusterArgs, Common, CompareArgs, FlowArgs, ForceArgs, GenerateArgs, Mode, TrainArgs};

struct Session {
    data: Dataset,
    seed: u64,
    out: OutputDir,
}

impl Session {
    fn open(common: &Common) -> CliResult<Self> {
        let config = RunConfig::load(&common.config)?;
        let seed = common.seed.unwrap_or(config.seed);
        let out = OutputDir::create(&config.output)?;
        Ok(Self {
            data: Dataset::open(config)?,
            seed,
            out,
        })
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_points: self.data.config.train_points,
            optimize: OptimizeOptions {
                seed: self.seed,
                ..Default::default()
            },
        }
    }

    fn laps(&self, laps: &Option<Vec<usize>>) -> CliResult<Vec<usize>> {
        let laps = laps.clone().unwrap_or_else(|| self.data.all_laps());
        self.data.check_laps(&laps)?;
        Ok(laps)
    }

    fn finish<A: serde::Serialize>(self, command: &str, args: &A) -> CliResult<Vec<PathBuf>> {
        let dir = self.out.path().to_path_buf();
        let files = self.out.finish(command, self.seed, args)?;
        Ok(files.iter().map(|f| dir.join(f)).chain([dir.join("manifest.json")]).collect())
    }
}

fn load_theta(path: &Path) -> CliResult<HyperParamVector> {
    let theta: HyperParamVector = read_json(path)?;
    theta
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(theta)
}

fn log_report(what: &str, report: &OptimizeReport) {
    log::info!(
        "{what}: cost {:.6} after {} restarts, converged {}",
        report.cost,
        report.runs.len(),
        report.converged
    );
    if !report.converged {
        log::warn!("{what}: optimizer stopped before convergence");
    }
}

fn force_observations_checked(
    traj: &Trajectory,
    data: &Dataset,
    skier: &SkierConfig,
    seg: &SegmentSpec,
    laps: &[usize],
) -> CliResult<Vec<trajgp::force::ForceObservation>> {
    let obs = segment_observations(traj, &data.profile, skier.mass, seg, laps)?;
    if obs.len() < 2 {
        return Err(trajgp::Error::Empty(format!(
            "{} has fewer than 2 force observations on {} in laps {laps:?}",
            skier.id, seg.name
        ))
        .into());
    }
    Ok(obs)
}

pub fn train(args: &TrainArgs) -> CliResult<Vec<PathBuf>> {
    let mut s = Session::open(&args.common)?;
    let laps = s.laps(&args.laps)?;
    let opts = s.train_options();
    let segment = || -> CliResult<&SegmentSpec> {
        let name = args
            .segment
            .as_deref()
            .ok_or_else(|| CliError::Config("this mode needs --segment".into()))?;
        s.data.segment(name)
    };
    let skier_id = || -> CliResult<&str> {
        args.skier
            .as_deref()
            .ok_or_else(|| CliError::Config("this mode needs --skier".into()))
    };
    let (stem, report) = match args.mode {
        Mode::Individual => {
            let id = skier_id()?;
            s.data.skier(id)?;
            let part = s.data.trajectory(id)?.laps(&laps, s.data.config.lap_length);
            let report = train_theta(&part.distances(), &part.speeds(), &s.data.config.individual_theta(), &opts)?;
            (format!("individual_{id}"), report)
        }
        Mode::Force => {
            let id = skier_id()?;
            let skier = s.data.skier(id)?;
            let seg = segment()?;
            let traj = s.data.trajectory(id)?;
            let obs = force_observations_checked(&traj, &s.data, skier, seg, &laps)?;
            let report = train_force(&obs, &s.data.config.force_theta(), &opts)?;
            (format!("force_{id}_{}", seg.name), report)
        }
        Mode::Aggregated => {
            let seg = segment()?;
            let ids: Vec<String> = match &args.skier {
                Some(list) => list.split(',').map(|x| x.trim().to_string()).collect(),
                None => s.data.skiers.iter().map(|k| k.id.clone()).collect(),
            };
            let (mut d, mut v) = (Vec::new(), Vec::new());
            for id in &ids {
                s.data.skier(id)?;
                let traj = s.data.trajectory(id)?;
                for &lap in &laps {
                    let part = extract_segment(&traj, seg, lap)?;
                    d.extend(part.distances());
                    v.extend(part.speeds());
                }
            }
            if d.len() < 2 {
                return Err(trajgp::Error::Empty(format!("fewer than 2 pooled samples on {}", seg.name)).into());
            }
            let report = train_theta(&d, &v, &s.data.config.aggregated_theta(), &opts)?;
            (format!("aggregated_{}", seg.name), report)
        }
    };
    log_report(&stem, &report);
    s.out.json(&format!("theta_{stem}.json"), &report.theta)?;
    s.out.json(&format!("convergence_{stem}.json"), &report)?;
    s.finish("train", args)
}

fn flow_rows(rows: &[FlowRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| vec![num(r.d), num(r.mean), num(r.std), num(r.observed)])
        .collect()
}

#[derive(serde::Serialize)]
struct FlowSummaryFile<'a> {
    skier: &'a str,
    engine: trajgp::analysis::Engine,
    train_laps: &'a [usize],
    predict_lap: usize,
    training_points: usize,
    grid_size: Option<usize>,
    theta: &'a HyperParamVector,
    summary: trajgp::analysis::FlowSummary,
}

pub fn flow(args: &FlowArgs) -> CliResult<Vec<PathBuf>> {
    let mut s = Session::open(&args.common)?;
    let lap_length = s.data.config.lap_length;
    let total = s.data.config.laps;
    let train_laps = match &args.laps {
        Some(l) => l.clone(),
        None if total >= 2 => (1..total).collect(),
        None => return Err(CliError::Config("a one-lap race needs explicit --laps and --allow-insample".into())),
    };
    s.data.check_laps(&train_laps)?;
    let predict_lap = args.predict_lap.unwrap_or(total);
    s.data.check_laps(&[predict_lap])?;
    if train_laps.contains(&predict_lap) && !args.allow_insample {
        return Err(CliError::Config(format!(
            "lap {predict_lap} is also a training lap; pass --allow-insample to predict it anyway"
        )));
    }
    let grid_size = args.grid_size.unwrap_or(s.data.config.grid_size);
    if grid_size < 1 {
        return Err(CliError::Config("grid size must be at least 1".into()));
    }
    s.data.skier(&args.skier)?;
    let traj = s.data.trajectory(&args.skier)?;
    let train_t = traj.laps(&train_laps, lap_length);
    let test_t = traj.laps(&[predict_lap], lap_length);
    let theta = match &args.theta {
        Some(p) => load_theta(p)?,
        None => {
            let report = train_theta(
                &train_t.distances(),
                &train_t.speeds(),
                &s.data.config.individual_theta(),
                &s.train_options(),
            )?;
            log_report(&format!("flow {}", args.skier), &report);
            report.theta
        }
    };
    let rows = if test_t.is_empty() {
        log::warn!("{}: lap {predict_lap} has no samples, writing an empty table", args.skier);
        Vec::new()
    } else {
        let range = span(&train_t, &test_t).expect("both trajectories are non-empty");
        let model = fit_flow(
            &train_t.distances(),
            &train_t.speeds(),
            &theta,
            args.engine,
            grid_size,
            range,
            DEFAULT_FIT_POINTS,
        )?;
        predict_rows(&model, &test_t)?
    };
    let summary = summarize(&rows);
    let engine = match args.engine {
        trajgp::analysis::Engine::Sgp => "sgp",
        trajgp::analysis::Engine::Ogp => "ogp",
    };
    let stem = format!("flow_{}_lap{predict_lap}_{engine}", args.skier);
    s.out.csv(&format!("{stem}.csv"), &["d", "mean", "std", "observed"], &flow_rows(&rows))?;
    s.out.json(
        &format!("{stem}.json"),
        &FlowSummaryFile {
            skier: &args.skier,
            engine: args.engine,
            train_laps: &train_laps,
            predict_lap,
            training_points: train_t.len(),
            grid_size: (args.engine == trajgp::analysis::Engine::Ogp).then_some(grid_size),
            theta: &theta,
            summary: summary.clone(),
        },
    )?;
    match (summary.rmse, summary.coverage_2sigma) {
        (Some(rmse), Some(cov)) => println!(
            "{} lap {predict_lap} {engine}: n {} rmse {rmse:.4} coverage {:.1}%",
            args.skier,
            summary.n,
            100.0 * cov
        ),
        _ => println!("{} lap {predict_lap} {engine}: no samples", args.skier),
    }
    s.finish("flow", args)
}

pub fn force(args: &ForceArgs) -> CliResult<Vec<PathBuf>> {
    let mut s = Session::open(&args.common)?;
    let laps = s.laps(&args.laps)?;
    let skier = s.data.skier(&args.skier)?.clone();
    let seg = s.data.segment(&args.segment)?.clone();
    let traj = s.data.trajectory(&args.skier)?;
    let theta = match &args.theta {
        Some(p) => load_theta(p)?,
        None => {
            let obs = force_observations_checked(&traj, &s.data, &skier, &seg, &laps)?;
            let report = train_force(&obs, &s.data.config.force_theta(), &s.train_options())?;
            log_report(&format!("force {}", skier.id), &report);
            report.theta
        }
    };
    let report = force_report(&traj, &s.data.profile, &skier, &seg, &laps, &theta)?;
    let stem = format!("force_{}_{}", skier.id, seg.name);
    let curves: Vec<Vec<String>> = report
        .laps
        .iter()
        .flat_map(|l| {
            l.curve
                .iter()
                .map(move |c| vec![l.lap.to_string(), num(c.d), num(c.d_lap), num(c.mean), num(c.std)])
        })
        .collect();
    let cdf: Vec<Vec<String>> = report
        .laps
        .iter()
        .flat_map(|l| l.cdf.iter().map(move |&(f, p)| vec![l.lap.to_string(), num(f), num(p)]))
        .collect();
    s.out.json(&format!("{stem}.json"), &report)?;
    s.out.csv(&format!("{stem}_curves.csv"), &["lap", "d", "d_lap", "mean", "std"], &curves)?;
    s.out.csv(&format!("{stem}_cdf.csv"), &["lap", "force", "probability"], &cdf)?;
    println!("{} {}: {} laps reported", skier.id, seg.name, report.laps.len());
    s.finish("force", args)
}

#[derive(serde::Serialize)]
struct CompareFile<'a> {
    table: &'a trajgp::analysis::CompareTable,
    mean_reduction: Option<f64>,
    flow_theta: &'a HyperParamVector,
    force_theta: &'a HyperParamVector,
}

pub fn compare(args: &CompareArgs) -> CliResult<Vec<PathBuf>> {
    let mut s = Session::open(&args.common)?;
    let laps = s.laps(&args.laps)?;
    let skier = s.data.skier(&args.skier)?.clone();
    let seg = s.data.segment(&args.segment)?.clone();
    let traj = s.data.trajectory(&args.skier)?;
    let opts = s.train_options();
    let flow_theta = match &args.theta {
        Some(p) => load_theta(p)?,
        None => {
            let report = train_theta(&traj.distances(), &traj.speeds(), &s.data.config.individual_theta(), &opts)?;
            log_report(&format!("flow {}", skier.id), &report);
            report.theta
        }
    };
    let (d, v) = thin(&traj.distances(), &traj.speeds(), DEFAULT_FIT_POINTS);
    let flow_model = fit_individual_flow(&d, &v, &flow_theta)?;
    let force_theta = match &args.force_theta {
        Some(p) => load_theta(p)?,
        None => {
            let obs = force_observations_checked(&traj, &s.data, &skier, &seg, &laps)?;
            let report = train_force(&obs, &s.data.config.force_theta(), &opts)?;
            log_report(&format!("force {}", skier.id), &report);
            report.theta
        }
    };
    let table = compare_table(&traj, &s.data.profile, &skier, &seg, &laps, &flow_model, &force_theta)?;
    let stem = format!("compare_{}_{}", skier.id, seg.name);
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.lap.to_string(),
                r.intervals.to_string(),
                num(r.black_box),
                num(r.grey_box),
                num(r.reduction),
            ]
        })
        .collect();
    let text = format_compare(&table);
    s.out.csv(&format!("{stem}.csv"), &["lap", "intervals", "black_box", "grey_box", "reduction"], &rows)?;
    s.out.text(&format!("{stem}.txt"), &text)?;
    s.out.json(
        &format!("{stem}.json"),
        &CompareFile {
            table: &table,
            mean_reduction: table.mean_reduction(),
            flow_theta: &flow_theta,
            force_theta: &force_theta,
        },
    )?;
    print!("{text}");
    s.finish("compare", args)
}

pub fn cluster(args: &ClusterArgs) -> CliResult<Vec<PathBuf>> {
    let mut s = Session::open(&args.common)?;
    s.data.check_laps(&[args.lap])?;
    let seg = s.data.segment(&args.segment)?.clone();
    let mut trajs = Vec::new();
    for skier in &s.data.skiers {
        trajs.push((skier.id.clone(), s.data.trajectory(&skier.id)?));
    }
    let refs: Vec<(String, &Trajectory)> = trajs.iter().map(|(id, t)| (id.clone(), t)).collect();
    let report = cluster_segment(
        &refs,
        &seg,
        args.lap,
        args.k,
        s.seed,
        &s.data.config.aggregated_theta(),
        &s.train_options(),
    )?;
    let stem = format!("cluster_{}_lap{}", seg.name, args.lap);
    let assignments: Vec<Vec<String>> = report
        .skiers
        .iter()
        .map(|f| {
            let mut row = vec![f.id.clone(), f.cluster.to_string()];
            row.extend(f.features.to_array().map(num));
            row
        })
        .collect();
    let curves: Vec<Vec<String>> = report
        .models
        .iter()
        .flat_map(|m| {
            m.curve
                .iter()
                .map(move |c| vec![m.cluster.to_string(), num(c.d), num(c.d_lap), num(c.mean), num(c.std)])
        })
        .collect();
    s.out.json(&format!("{stem}.json"), &report)?;
    s.out.csv(
        &format!("{stem}_assignments.csv"),
        &["skier", "cluster", "max", "min", "variance", "mean", "energy", "skewness", "kurtosis"],
        &assignments,
    )?;
    s.out.csv(&format!("{stem}_curves.csv"), &["cluster", "d", "d_lap", "mean", "std"], &curves)?;
    for m in &report.models {
        println!("cluster {}: {}", m.cluster, m.members.join(" "));
    }
    s.finish("cluster", args)
}

pub fn generate_sample(args: &GenerateArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = RaceConfig {
        seed: args.seed,
        n_skiers: args.skiers,
        ..Default::default()
    };
    let race = generate_race(&cfg)?;
    write_race(&race, &args.output).map_err(|e| CliError::file(&args.output, e))?;
    let mut out = OutputDir::create(&args.output)?;
    for name in ["altitude.csv", "segments.json", "skiers.json", "truth/skiers.json"] {
        out.note(name);
    }
    for skier in &race.skiers {
        out.note(&format!("trajectories/{}.csv", skier.id));
        out.note(&format!("truth/{}.csv", skier.id));
    }
    out.json("config.json", &RunConfig::sample(args.seed, cfg.laps, cfg.lap_length))?;
    println!(
        "{} skiers, {} laps of {} m written to {}",
        race.skiers.len(),
        cfg.laps,
        cfg.lap_length,
        args.output.display()
    );
    let dir = args.output.clone();
    let files = out.finish("generate-sample", args.seed, args)?;
    Ok(files.iter().map(|f| dir.join(f)).chain([dir.join("manifest.json")]).collect())
}
