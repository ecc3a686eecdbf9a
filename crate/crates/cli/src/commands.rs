use rayon::prelude::*;
use taskcode::belief::{poisson_cost_to_go, run_ce_episode, EpisodeSetup, PenaltyMethod};
use taskcode::mutual_info::{mi_kalman, mi_kalman_at, mi_poisson, mi_poisson_at};
use taskcode::riccati::solve_riccati;
use taskcode::sweep::{run_sweep, summarize, Family, MiMode, SweepResult, SweepSummary};
use taskcode::{DMatrix, Estimate, GaussianBelief, SweepConfig};

use crate::error::{CliError, CliResult};
use crate::output::{num, OutputDir};
use crate::plot;

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// `S_t` (upper triangle) and the tail integral of `Tr(D S)` on the time grid.
pub fn riccati(cfg: &SweepConfig, out: &mut OutputDir) -> CliResult<()> {
    let sys = cfg.system()?;
    let path = solve_riccati(&sys, &cfg.cost()?, cfg.run.dt)?;
    let n = sys.dim_x();
    let mut columns = vec!["t".to_string()];
    for i in 0..n {
        for j in i..n {
            columns.push(format!("s_{i}_{j}"));
        }
    }
    columns.push("noise_integral".into());
    let rows: Vec<Vec<String>> = (0..path.grid.len())
        .map(|k| {
            let s = path.s(k);
            let mut row = vec![num(path.grid.time(k))];
            for i in 0..n {
                for j in i..n {
                    row.push(num(s[(i, j)]));
                }
            }
            row.push(num(path.noise_tail(k)));
            row
        })
        .collect();
    out.table("riccati.csv", &columns, &rows)
}

/// One seeded closed-loop episode in full, plus per-episode cost and
/// posterior coverage for `demo.episodes` episodes.
pub fn filter_demo(cfg: &SweepConfig, out: &mut OutputDir) -> CliResult<()> {
    let sys = cfg.system()?;
    let cost = cfg.cost()?;
    let path = solve_riccati(&sys, &cost, cfg.run.dt)?;
    let prior_spec = cfg.prior_spec(&sys)?;
    let codec = cfg.codec_at(cfg.point_parameter(), &prior_spec.sigma0)?;
    let prior = GaussianBelief { mu: prior_spec.mu0.clone(), sigma: prior_spec.sigma0.clone(), t: 0.0 };
    let setup = EpisodeSetup { sys: &sys, cost: &cost, path: &path, codec: &codec, prior: &prior };
    let seed = cfg.run.seed;
    let dims = cfg.system.preset.positions();

    let episodes: Vec<(f64, f64, usize)> = (0..cfg.demo.episodes as u64)
        .into_par_iter()
        .map(|i| run_ce_episode(&setup, seed, i).map(|e| (e.cost, e.coverage(&dims), e.total_spikes())))
        .collect::<Result<_, _>>()?;
    let first = run_ce_episode(&setup, seed, 0)?;

    let n = sys.dim_x();
    let m = sys.dim_u();
    let mut columns = vec!["t".to_string()];
    columns.extend(indexed("x", n));
    columns.extend(indexed("mu", n));
    columns.extend(indexed("sigma", n));
    columns.extend(indexed("u", m));
    columns.push("spikes".into());
    let rows: Vec<Vec<String>> = (0..first.grid.len())
        .map(|k| {
            let b = &first.beliefs[k];
            let mut row = vec![num(first.grid.time(k))];
            row.extend(first.states[k].iter().map(|v| num(*v)));
            row.extend(b.mu.iter().map(|v| num(*v)));
            row.extend((0..n).map(|i| num(b.sigma[(i, i)])));
            row.extend(first.controls[k].iter().map(|v| num(*v)));
            row.push(first.spike_counts[k].to_string());
            row
        })
        .collect();
    out.table("episode.csv", &columns, &rows)?;

    let rows: Vec<Vec<String>> = episodes
        .iter()
        .enumerate()
        .map(|(i, (c, cov, spikes))| vec![i.to_string(), num(*c), num(*cov), spikes.to_string()])
        .collect();
    out.table("coverage.csv", &header(&["episode", "cost", "coverage", "spikes"]), &rows)?;

    let costs: Vec<f64> = episodes.iter().map(|e| e.0).collect();
    let realised = Estimate::from_samples(&costs);
    let coverage = episodes.iter().map(|e| e.1).sum::<f64>() / episodes.len() as f64;
    let predicted = poisson_cost_to_go(
        &prior,
        &path,
        &codec,
        &sys,
        PenaltyMethod::MonteCarlo {
            n_samples: cfg.run.n_samples,
            seed: taskcode::seeding::derive_seed(seed, u64::MAX),
        },
    )?;
    let rows = vec![
        vec!["episodes".into(), episodes.len().to_string()],
        vec!["population_rate".into(), num(codec.population_rate())],
        vec!["mean_cost".into(), num(realised.value)],
        vec!["mean_cost_std_err".into(), num(realised.std_err)],
        vec!["predicted_cost".into(), num(predicted.value)],
        vec!["predicted_cost_std_err".into(), num(predicted.std_err)],
        vec!["mean_coverage".into(), num(coverage)],
    ];
    out.table("demo_summary.csv", &header(&["key", "value"]), &rows)
}

/// Runs the sweep, writes curve and summary tables; partial sweeps still
/// write everything and then report [`CliError::Partial`].
pub fn sweep(cfg: &SweepConfig, family: Family, plot_svg: bool, out: &mut OutputDir) -> CliResult<()> {
    if cfg.codec.family != family {
        let wanted = match family {
            Family::Width => "width",
            Family::Anisotropy => "anisotropy",
        };
        return Err(CliError::Config(format!("this subcommand needs codec.family = \"{wanted}\"")));
    }
    let result = run_sweep(cfg)?;
    write_curve(&result, out)?;
    let summary = summarize(&result)?;
    write_summary(&result, &summary, &cfg.mmse_weight(), out)?;
    let failures: Vec<String> = result
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.outcome.as_ref().err().map(|e| format!("{i},{},{e}", num(p.value))))
        .collect();
    if !failures.is_empty() {
        let mut text = format!("index,{},error\n", family.parameter_name());
        for f in &failures {
            eprintln!("grid point failed: {f}");
            text.push_str(f);
            text.push('\n');
        }
        out.raw("errors.csv", &text)?;
    }
    if plot_svg {
        out.raw("curves.svg", &plot::curves(&result, &summary))?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial { failed: failures.len(), total: result.points.len() })
    }
}

fn write_curve(result: &SweepResult, out: &mut OutputDir) -> CliResult<()> {
    let kalman = result.family == Family::Anisotropy;
    let mut columns = header(&[
        "index",
        result.family.parameter_name(),
        "population_rate",
        "mmse",
        "mmse_std_err",
        "mmse_converged",
        "f",
        "f_std_err",
        "mi",
        "mi_std_err",
    ]);
    if kalman {
        columns.extend(header(&["kalman_mmse", "kalman_f", "kalman_mi"]));
    }
    columns.push("status".into());
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = vec![i.to_string(), num(p.value), num(p.rate)];
            match &p.outcome {
                Ok(v) => {
                    row.extend([num(v.mmse.value), num(v.mmse.std_err), v.mmse_converged.to_string()]);
                    row.extend([num(v.f.value), num(v.f.std_err), num(v.mi.value), num(v.mi.std_err)]);
                    if kalman {
                        let k = v.kalman.expect("anisotropy points carry the Kalman baseline");
                        row.extend([num(k.mmse), num(k.f), num(k.mi)]);
                    }
                    row.push("ok".into());
                }
                Err(_) => {
                    let blanks = if kalman { 10 } else { 7 };
                    row.extend(std::iter::repeat_n("nan".to_string(), blanks));
                    row.push("failed".into());
                }
            }
            row
        })
        .collect();
    out.table("curve.csv", &columns, &rows)
}

fn write_summary(result: &SweepResult, s: &SweepSummary, weight: &DMatrix<f64>, out: &mut OutputDir) -> CliResult<()> {
    let grid = result.grid();
    let at = |i: usize| num(grid[i]);
    let flag = |b: bool| if b { "boundary".to_string() } else { "interior".to_string() };
    let sep = &s.separation;
    let mut rows = vec![
        vec!["parameter".into(), s.parameter.clone()],
        vec!["method".into(), result.method.to_string()],
        vec!["grid_points".into(), grid.len().to_string()],
        vec!["argmin_mmse".into(), s.argmin_mmse.to_string()],
        vec!["argmin_mmse_value".into(), at(s.argmin_mmse)],
        vec!["mmse_minimum".into(), flag(s.mmse_at_boundary)],
        vec!["argmin_f".into(), s.argmin_f.to_string()],
        vec!["argmin_f_value".into(), at(s.argmin_f)],
        vec!["f_minimum".into(), flag(s.f_at_boundary)],
        vec!["argmax_mi".into(), s.argmax_mi.to_string()],
        vec!["argmax_mi_value".into(), at(s.argmax_mi)],
        vec!["mi_maximum".into(), flag(s.mi_at_boundary)],
        vec!["mi_time".into(), num(result.mi_time)],
        vec!["steps_apart".into(), sep.steps_apart.to_string()],
        vec!["mmse_argmin_interval".into(), format!("{}..={}", sep.mmse_interval.0, sep.mmse_interval.1)],
        vec!["f_argmin_interval".into(), format!("{}..={}", sep.f_interval.0, sep.f_interval.1)],
        vec!["separation".into(), if sep.significant { "significant".into() } else { "not significant".into() }],
    ];
    if let (Some(m), Some(f)) = (s.kalman_argmin_mmse, s.kalman_argmin_f) {
        rows.push(vec!["kalman_argmin_mmse".into(), m.to_string()]);
        rows.push(vec!["kalman_argmin_f".into(), f.to_string()]);
    }
    let sigma0: Vec<String> = result.sigma0.iter().map(|v| num(*v)).collect();
    rows.push(vec!["sigma0_column_major".into(), sigma0.join(" ")]);
    let weight: Vec<String> = weight.iter().map(|v| num(*v)).collect();
    rows.push(vec!["mmse_weight_column_major".into(), weight.join(" ")]);
    rows.push(vec!["partial".into(), s.partial.to_string()]);
    out.table("summary.csv", &header(&["key", "value"]), &rows)
}

/// Mutual information over time at the configured encoder, or over the
/// encoder grid at the horizon.
pub fn mi(cfg: &SweepConfig, out: &mut OutputDir) -> CliResult<()> {
    let sys = cfg.system()?;
    let prior = cfg.prior_spec(&sys)?;
    let dt = cfg.run.dt;
    let seed = cfg.run.seed;
    let n_samples = cfg.mi_samples();
    match cfg.mi.mode {
        MiMode::Time => {
            let horizon = cfg.cost.horizon;
            let times = cfg.mi.times.clone().unwrap_or_else(|| (1..=10).map(|i| horizon * i as f64 / 10.0).collect());
            let codec = cfg.codec_at(cfg.point_parameter(), &prior.sigma0)?;
            let poisson = mi_poisson_at(&sys, &codec, &prior, &times, dt, n_samples, seed)?;
            let kalman = match &cfg.observation {
                Some(_) => Some(mi_kalman_at(&sys, &cfg.observation_channel(&sys)?, &prior, &times, dt)?),
                None => None,
            };
            let mut columns = header(&["t", "mi_poisson", "mi_poisson_std_err"]);
            if kalman.is_some() {
                columns.push("mi_kalman".into());
            }
            let rows: Vec<Vec<String>> = times
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let mut row = vec![num(*t), num(poisson[j].value), num(poisson[j].std_err)];
                    if let Some(k) = &kalman {
                        row.push(num(k[j]));
                    }
                    row
                })
                .collect();
            out.table("mi.csv", &columns, &rows)
        }
        MiMode::Grid => {
            let t = cfg.cost.horizon;
            let grid = cfg.grid_values()?;
            let anisotropy = cfg.codec.family == Family::Anisotropy;
            let rows: Vec<Vec<String>> = grid
                .par_iter()
                .enumerate()
                .map(|(i, &value)| -> CliResult<Vec<String>> {
                    let codec = cfg.codec_at(value, &prior.sigma0)?;
                    let point_seed = taskcode::seeding::derive_seed(taskcode::seeding::derive_seed(seed, i as u64), 2);
                    let e = mi_poisson(&sys, &codec, &prior, t, dt, n_samples, point_seed)?;
                    let mut row = vec![i.to_string(), num(value), num(e.value), num(e.std_err)];
                    if anisotropy {
                        row.push(num(mi_kalman(&sys, &cfg.kalman_baseline(value)?, &prior, t, dt)?));
                    }
                    Ok(row)
                })
                .collect::<CliResult<_>>()?;
            let mut columns = header(&["index", cfg.codec.family.parameter_name(), "mi_poisson", "mi_poisson_std_err"]);
            if anisotropy {
                columns.push("mi_kalman".into());
            }
            out.table("mi.csv", &columns, &rows)
        }
    }
}
