//! One runner per experiment kind. Each turns a validated configuration into
//! a [`Document`]; writing it is left to the caller.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use cavity_chaos_core::chaos::{lyapunov_map, poincare_section, zout_zin_scan, GridMap};
use cavity_chaos_core::dynamics::{jc_inversion_exact, resonant_inversion_exact, RhsKind};
use cavity_chaos_core::integrator::{conservation_report, integrate, IntegratorConfig, Output, DRIFT_WARNING};
use cavity_chaos_core::model::population_inversion;
use cavity_chaos_core::scattering::{
    exit_scan, exit_time_histogram, exponential_tail, refine_interval, tail_exponent, zoom_chain, Detector, ExitRecord,
    RefineLimits, ScanConfig, TailFit, ZoomNode,
};
use cavity_chaos_core::sweep::{AxisSpec, Executor, Spacing};
use cavity_chaos_core::{AtomPreparation, FieldPreparation};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind, RabiDynamics};
use crate::output::{float_value, write_document, ColumnData, Data, Document, Grid, GridAxis, Metadata, Table};
use crate::Result;

/// Runs `kind` and returns the finished document.
pub fn run<E: Executor>(kind: ExperimentKind, config: &ExperimentConfig, executor: &E) -> Result<Document> {
    config.validate_for(kind)?;
    let (summary, data) = match kind {
        ExperimentKind::Rabi => rabi(config)?,
        ExperimentKind::Lyapmap => lyapmap(config, executor)?,
        ExperimentKind::Poincare => poincare(config, executor)?,
        ExperimentKind::Zoutzin => zoutzin(config, executor)?,
        ExperimentKind::Fractal => fractal(config, executor)?,
        ExperimentKind::Exitstats => exitstats(config, executor)?,
    };
    let resolved = resolved(config)?;
    let metadata = Metadata::new(kind.name(), serde_json::to_value(config)?, resolved);
    Ok(Document {
        metadata,
        summary,
        data,
    })
}

/// Output path: `out` if given, else the configured path, else
/// `<experiment>.<ext>` in the working directory.
pub fn output_path(kind: ExperimentKind, config: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.output.path.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.{}", kind.name(), config.output.format.extension())))
}

/// Loads, runs and writes one experiment. Nothing is written on error.
pub fn execute<E: Executor>(
    kind: ExperimentKind,
    config_path: &Path,
    out: Option<&Path>,
    executor: &E,
) -> Result<PathBuf> {
    let config = ExperimentConfig::load(config_path)?;
    let doc = run(kind, &config, executor)?;
    let path = output_path(kind, &config, out);
    write_document(&doc, &path, config.output.format)?;
    Ok(path)
}

fn resolved(config: &ExperimentConfig) -> Result<Value> {
    let scenario = config.scenario();
    let params = scenario.params()?;
    let top = RhsKind::for_field(&scenario.field).layout(params.n_max).top_level();
    Ok(json!({
        "n_max": params.n_max,
        "max_step": float_value(config.tolerances().max_step_for(top)),
    }))
}

fn floats(v: impl IntoIterator<Item = f64>) -> ColumnData {
    ColumnData::Float(v.into_iter().collect())
}

fn fit_json(fit: &Result<TailFit, cavity_chaos_core::Error>) -> Value {
    match fit {
        Ok(f) => json!({
            "slope": float_value(f.slope),
            "intercept": float_value(f.intercept),
            "residual": float_value(f.residual),
            "bins": f.bins,
        }),
        Err(e) => json!({"error": e.to_string()}),
    }
}

fn rabi(config: &ExperimentConfig) -> Result<(Value, Data)> {
    let block = config.rabi.as_ref().expect("validated");
    let scenario = config.scenario();
    let (params, init) = scenario.prepare()?;
    let kind = match block.dynamics {
        RabiDynamics::Motionless => RhsKind::JaynesCummings { f: block.coupling },
        RabiDynamics::Moving => RhsKind::for_field(&scenario.field),
    };
    let integ = IntegratorConfig::new(block.t_max)
        .with_tolerances(config.tolerances())
        .with_output(Output::Uniform { dt: block.dt });
    let traj = integrate(kind, &params, &init, &integ, &[])?;
    let t: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let z: Vec<f64> = traj.samples.iter().map(|s| population_inversion(&s.state)).collect();

    // closed forms: any motionless run, and a resonant incoherent start at x = 0
    let exact: Option<Vec<f64>> = match block.dynamics {
        RabiDynamics::Motionless => Some(
            t.iter()
                .map(|&tau| jc_inversion_exact(&init.ladder, params.delta, block.coupling, tau))
                .collect(),
        ),
        RabiDynamics::Moving if params.delta == 0.0 && init.x == 0.0 => Some(
            t.iter()
                .map(|&tau| resonant_inversion_exact(&init.ladder, params.alpha, init.p, tau))
                .collect(),
        ),
        RabiDynamics::Moving => None,
    };

    let drift = conservation_report(&traj, &params);
    let mut summary = json!({
        "samples": t.len(),
        "final_t": float_value(traj.final_t),
        "energy_drift": float_value(drift.energy),
        "level_norm_drift": float_value(drift.level_norm),
        "total_norm_drift": float_value(drift.total_norm),
        "drift_flagged": drift.max() > DRIFT_WARNING,
        "steps": traj.stats.accepted,
    });
    let mut table = Table::new().with("t", floats(t.iter().copied()));
    if block.dynamics == RabiDynamics::Moving {
        table = table
            .with("x", floats(traj.samples.iter().map(|s| s.state.x)))
            .with("p", floats(traj.samples.iter().map(|s| s.state.p)));
        let speed = params.alpha * init.p;
        if speed != 0.0 {
            // the free flight passes nodes of the mode, where the Rabi
            // oscillations stall, and antinodes in between
            let period = PI / speed.abs();
            let nodes: Vec<Value> = (0..)
                .map(|s| (0.5 + s as f64) * period)
                .take_while(|&tau| tau <= block.t_max)
                .map(float_value)
                .collect();
            let antinodes: Vec<Value> = (1..)
                .map(|r| r as f64 * period)
                .take_while(|&tau| tau <= block.t_max)
                .map(float_value)
                .collect();
            summary["node_times"] = Value::Array(nodes);
            summary["antinode_times"] = Value::Array(antinodes);
        }
    }
    table = table.with("z", floats(z.iter().copied()));
    if let Some(exact) = exact {
        let err = z.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        summary["max_error_vs_exact"] = float_value(err);
        table = table.with("z_exact", ColumnData::Float(exact));
    }
    Ok((summary, Data::Table(table)))
}

fn axis_json(a: &AxisSpec) -> GridAxis {
    GridAxis {
        name: a.name.clone(),
        spacing: match a.spacing {
            Spacing::Linear => "linear".into(),
            Spacing::Log => "log".into(),
        },
        values: a.values(),
    }
}

pub fn grid_from_map(map: &GridMap) -> Grid {
    let (nx, ny) = map.shape();
    Grid {
        x: axis_json(&map.x.spec),
        y: axis_json(&map.y.spec),
        values: (0..ny).map(|iy| (0..nx).map(|ix| map.get(ix, iy)).collect()).collect(),
    }
}

fn lyapmap<E: Executor>(config: &ExperimentConfig, executor: &E) -> Result<(Value, Data)> {
    let block = config.lyapmap.as_ref().expect("validated");
    let lyap = config.lyapunov_config()?;
    let map = lyapunov_map(
        &block.x.to_axis(),
        &block.y.to_axis(),
        &config.scenario(),
        &lyap,
        executor,
    )?;
    let ok: Vec<f64> = map.values.iter().flatten().copied().collect();
    let summary = json!({
        "cells": map.values.len(),
        "failed": map.values.len() - ok.len(),
        "max": float_value(ok.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        "min": float_value(ok.iter().copied().fold(f64::INFINITY, f64::min)),
    });
    Ok((summary, Data::Grid(grid_from_map(&map))))
}

fn poincare<E: Executor>(config: &ExperimentConfig, executor: &E) -> Result<(Value, Data)> {
    let block = config.poincare.as_ref().expect("validated");
    let scenario = config.scenario();
    let (params, init) = scenario.prepare()?;
    let inits: Vec<_> = block
        .p0
        .iter()
        .map(|&p| {
            let mut s = init.clone();
            s.p = p;
            s
        })
        .collect();
    let section = poincare_section(
        &inits,
        RhsKind::for_field(&scenario.field),
        &params,
        block.t_max,
        &block.event(),
        &config.tolerances(),
        executor,
    );
    let pts = &section.points;
    let failures: Vec<Value> = section
        .failures
        .iter()
        .map(|(i, e)| json!({"trajectory": i, "p0": float_value(block.p0[*i]), "error": e.to_string()}))
        .collect();
    let summary = json!({"points": pts.len(), "failures": failures});
    let table = Table::new()
        .with(
            "trajectory",
            ColumnData::Int(pts.iter().map(|p| p.trajectory as i64).collect()),
        )
        .with("p0", floats(pts.iter().map(|p| block.p0[p.trajectory])))
        .with("t", floats(pts.iter().map(|p| p.t)))
        .with("x", floats(pts.iter().map(|p| p.x)))
        .with("p", floats(pts.iter().map(|p| p.p)));
    Ok((summary, Data::Table(table)))
}

fn zoutzin<E: Executor>(config: &ExperimentConfig, executor: &E) -> Result<(Value, Data)> {
    let block = config.zoutzin.as_ref().expect("validated");
    let setup = config.zoutzin_setup()?;
    let grid = block.grid();
    let out = zout_zin_scan(&grid, &setup, executor)?;
    let ok: Vec<f64> = out.iter().flatten().copied().collect();
    let range = ok.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ok.iter().copied().fold(f64::INFINITY, f64::min);
    let max_increment = out
        .windows(2)
        .filter_map(|w| Some((w[1]? - w[0]?).abs()))
        .fold(0.0, f64::max);
    let summary = json!({
        "points": grid.len(),
        "failed": grid.len() - ok.len(),
        "z_out_range": float_value(range),
        "max_increment": float_value(max_increment),
    });
    let table = Table::new()
        .with("z_in", ColumnData::Float(grid))
        .with("z_out", floats(out.iter().map(|v| v.unwrap_or(f64::NAN))))
        .with("failed", ColumnData::Bool(out.iter().map(Option::is_none).collect()));
    Ok((summary, Data::Table(table)))
}

fn detector_name(d: Detector) -> &'static str {
    match d {
        Detector::Left => "left",
        Detector::Right => "right",
        Detector::None => "none",
    }
}

/// Exit records as table columns, tagged with a level index.
pub fn records_table(levels: &[(usize, &[ExitRecord], &[bool])]) -> Table {
    let rows = || {
        levels
            .iter()
            .flat_map(|(l, r, s)| r.iter().zip(s.iter()).map(move |(r, s)| (*l, r, *s)))
    };
    Table::new()
        .with("level", ColumnData::Int(rows().map(|(l, _, _)| l as i64).collect()))
        .with("p0", floats(rows().map(|(_, r, _)| r.p0)))
        .with("exit_time", floats(rows().map(|(_, r, _)| r.exit_time)))
        .with(
            "detector",
            ColumnData::Text(rows().map(|(_, r, _)| detector_name(r.detector).to_string()).collect()),
        )
        .with("m", ColumnData::Int(rows().map(|(_, r, _)| r.m as i64).collect()))
        .with(
            "trapped",
            ColumnData::Bool(rows().map(|(_, r, _)| r.trapped()).collect()),
        )
        .with("singular", ColumnData::Bool(rows().map(|(_, _, s)| s).collect()))
        .with(
            "drift_flagged",
            ColumnData::Bool(rows().map(|(_, r, _)| r.drift_flagged).collect()),
        )
        .with(
            "failure",
            ColumnData::Text(
                rows()
                    .map(|(_, r, _)| r.failure.as_ref().map(|e| e.to_string()).unwrap_or_default())
                    .collect(),
            ),
        )
}

fn flatten<'a>(node: &'a ZoomNode, out: &mut Vec<&'a ZoomNode>) {
    out.push(node);
    for c in &node.children {
        flatten(c, out);
    }
}

fn level_json(level: usize, node: &ZoomNode) -> Value {
    let pair = |&(a, b): &(f64, f64)| json!([float_value(a), float_value(b)]);
    json!({
        "level": level,
        "depth": node.depth,
        "p_lo": float_value(node.p_lo),
        "p_hi": float_value(node.p_hi),
        "points": node.records.len(),
        "trapped": node.records.iter().filter(|r| r.trapped()).count(),
        "failed": node.records.iter().filter(|r| r.failure.is_some()).count(),
        "singular": node.singular_count(),
        "mean_exit_time": node.mean_exit_time().map_or(Value::Null, float_value),
        "unresolved": node.unresolved.iter().map(pair).collect::<Vec<_>>(),
        "smooth": node.smooth.iter().map(pair).collect::<Vec<_>>(),
    })
}

fn fractal<E: Executor>(config: &ExperimentConfig, executor: &E) -> Result<(Value, Data)> {
    let block = config.fractal.as_ref().expect("validated");
    let scan = config.scan_config(block.t_max, block.geometry, block.singularity);
    let base = config.scenario();
    let chain: Vec<(f64, f64)> = block.intervals.iter().map(|&[a, b]| (a, b)).collect();
    let mut nodes = zoom_chain(&chain, block.resolution, &base, &scan, executor)?;
    if let Some(refine) = block.refine {
        let last = nodes.pop().expect("chain is non-empty");
        let limits = RefineLimits {
            max_depth: last.depth + refine.max_depth,
            max_children: refine.max_children,
        };
        let root = ZoomNode::new(last.p_lo, last.p_hi, last.resolution, last.depth);
        nodes.push(refine_interval(root, &base, &scan, &limits, executor)?);
    }
    let mut all = Vec::new();
    for n in &nodes {
        flatten(n, &mut all);
    }
    let levels: Vec<(usize, &[ExitRecord], &[bool])> = all
        .iter()
        .enumerate()
        .map(|(i, n)| (i, n.records.as_slice(), n.singular.as_slice()))
        .collect();
    let summary = json!({
        "levels": all.iter().enumerate().map(|(i, n)| level_json(i, n)).collect::<Vec<_>>(),
    });
    Ok((summary, Data::Table(records_table(&levels))))
}

/// Exit scan over the configured momentum range.
pub fn exitstats_records<E: Executor>(
    config: &ExperimentConfig,
    executor: &E,
) -> Result<(Vec<ExitRecord>, ScanConfig)> {
    let block = config.exitstats.as_ref().expect("validated");
    let scan = config.scan_config(block.t_max, block.geometry, Default::default());
    let grid = AxisSpec::linear("p0", block.p0_min, block.p0_max, block.samples).values();
    Ok((exit_scan(&grid, &config.scenario(), &scan, executor)?, scan))
}

fn exitstats<E: Executor>(config: &ExperimentConfig, executor: &E) -> Result<(Value, Data)> {
    let block = config.exitstats.as_ref().expect("validated");
    let (records, _) = exitstats_records(config, executor)?;
    let bins = block.bins.to_spec();
    let pdf = exit_time_histogram(&records, &bins)?;
    let range = (block.fit_range[0], block.fit_range[1]);
    let power = tail_exponent(&pdf, bins.spacing, range);
    let exponential = exponential_tail(&pdf, bins.spacing, range);
    let better = match (&power, &exponential) {
        (Ok(p), Ok(e)) => json!(if e.residual < p.residual {
            "exponential"
        } else {
            "power"
        }),
        _ => Value::Null,
    };
    let summary = json!({
        "records": pdf.total + pdf.failed,
        "trapped": pdf.trapped,
        "failed": pdf.failed,
        "underflow": pdf.underflow,
        "overflow": pdf.overflow,
        "trapped_fraction": float_value(pdf.trapped_fraction()),
        "power_law": fit_json(&power),
        "exponential": fit_json(&exponential),
        "better_fit": better,
    });
    let table = Table::new()
        .with("t_lo", floats(pdf.edges[..pdf.counts.len()].iter().copied()))
        .with("t_hi", floats(pdf.edges[1..].iter().copied()))
        .with("t_center", ColumnData::Float(pdf.centers(bins.spacing)))
        .with("count", ColumnData::Int(pdf.counts.iter().map(|&c| c as i64).collect()))
        .with("mass", ColumnData::Float(pdf.mass.clone()))
        .with("density", ColumnData::Float(pdf.density.clone()));
    Ok((summary, Data::Table(table)))
}

/// Short description of a preparation for log lines.
pub fn describe(config: &ExperimentConfig) -> String {
    let field = match config.field.into() {
        FieldPreparation::Fock { n } => format!("Fock({n})"),
        FieldPreparation::Coherent { mean } => format!("coherent(<n>={mean})"),
        FieldPreparation::BoseEinstein { mean } => format!("Bose-Einstein(<n>={mean})"),
    };
    let atom = match config.atom.into() {
        AtomPreparation::Excited => "excited".to_string(),
        AtomPreparation::Superposition { z_in } => format!("z_in={z_in}"),
    };
    format!(
        "delta={} alpha={} {field} {atom}",
        config.model.delta, config.model.alpha
    )
}
