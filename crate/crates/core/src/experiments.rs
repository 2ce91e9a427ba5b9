//! Named experiment suites behind the `run` subcommand.
//!
//! Purpose: turn a validated `RunConfig` into artifacts on disk: CSV
//! tables (one per curve for figure-style experiments), an optional
//! self-contained SVG plot, and a manifest hashing every written file.
//!
//! Conventions: all chains draw from seed-keyed streams tagged by the
//! experiment and replica, so results are independent of worker count and
//! byte-identical across runs with the same config and seed. Divergence
//! mid-experiment is recorded in the manifest and artifacts written up to
//! that point are kept.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::chain::{self, geometric_schedule, Trajectory};
use crate::config::{Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::extrapolate::{run_rr, RrScheme};
use crate::flow;
use crate::models::{ModelKind, ObjectiveModel};
use crate::output::{fnum, write_svg, Curve, Manifest, PlotSpec, Table};
use crate::rng;
use crate::stationary::{self, KStart};
use crate::tensorops;

/// Recording-grid ratio for figure-style trajectories.
const SCHEDULE_RATIO: f64 = 1.12;

/// Writer handle shared by the experiment bodies: every artifact goes
/// through it so the manifest stays complete.
struct Artifacts<'a> {
    dir: &'a Path,
    plots: bool,
    manifest: &'a mut Manifest,
}

impl Artifacts<'_> {
    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        let path = self.dir.join(name);
        table.write(&path)?;
        self.manifest.file(&path, name)
    }

    fn plot(&mut self, name: &str, spec: &PlotSpec) -> Result<()> {
        if !self.plots {
            return Ok(());
        }
        let path = self.dir.join(name);
        write_svg(&path, spec)?;
        self.manifest.file(&path, name)
    }
}

/// Runs the configured experiment and writes its artifacts plus
/// `manifest.txt` under the output directory. Divergence keeps partial
/// outputs and is noted in the manifest rather than aborting the write.
pub fn run_experiment(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::file(cfg.out_dir.display().to_string(), e))?;
    let mut manifest = Manifest::new();
    manifest
        .meta("code version", env!("CARGO_PKG_VERSION"))
        .meta("experiment", cfg.experiment.name())
        .meta("model file", cfg.model_path.display().to_string())
        .meta("step sizes", cfg.gammas.iter().map(|g| fnum(*g)).collect::<Vec<_>>().join(", "))
        .meta("horizon", cfg.horizon.to_string())
        .meta("replicas", cfg.replicas.to_string())
        .meta("seed", cfg.seed.to_string())
        .meta("model constants", cfg.model.report());

    let mut art = Artifacts { dir: &cfg.out_dir, plots: cfg.plots, manifest: &mut manifest };
    let body = match cfg.experiment {
        Experiment::Fig2 => fig2(cfg, &mut art),
        Experiment::RrBiasScaling => rr_bias_scaling(cfg, &mut art),
        Experiment::StationaryTable => stationary_table(cfg, &mut art),
        Experiment::Coupling => coupling(cfg, &mut art),
        Experiment::KScaling => k_scaling(cfg, &mut art),
        Experiment::WeakError => weak_error(cfg, &mut art),
        Experiment::MomentGrowth => moment_growth(cfg, &mut art),
    };
    match body {
        Ok(()) => {}
        Err(e @ Error::Divergence { .. }) => {
            manifest.meta("divergence", e.to_string());
            eprintln!("warning: {e}; partial outputs kept");
        }
        Err(e) => return Err(e),
    }
    manifest.write(&cfg.out_dir)
}

fn trajectory_table(label: &str, ks: &[u64], mean: &[f64], se: &[f64]) -> Table {
    let mut t = Table::new(["k", "fgap", "se"]);
    t.comment(label.to_string());
    for ((&k, &m), &s) in ks.iter().zip(mean).zip(se) {
        t.row([k.to_string(), fnum(m), fnum(s)]);
    }
    t
}

/// Pointwise mean and standard error across replica curves.
fn mean_curves(per: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = per.len();
    let len = per[0].len();
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    for c in per {
        assert_eq!(c.len(), len, "replica curves share the schedule");
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / n as f64;
        }
    }
    if n > 1 {
        for c in per {
            for ((s, v), m) in se.iter_mut().zip(c).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut se {
            *s = (*s / ((n - 1) as f64 * n as f64)).sqrt();
        }
    }
    (mean, se)
}

/// Six learning curves on one model: un-averaged and averaged iterates at
/// the two configured step sizes, the coupled two-point extrapolation off
/// the smaller one, and averaged decaying-step descent with c = 1/(2 R^2).
fn fig2(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let model = &cfg.model;
    let mut gs = cfg.gammas.clone();
    gs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (g_lo, g_hi) = if gs.len() >= 2 {
        (gs[0], *gs.last().unwrap())
    } else {
        (gs[0] / 2.0, gs[0])
    };
    if 2.0 * g_lo >= model.gamma_limit() {
        return Err(Error::InvalidConfig(format!(
            "extrapolation needs 2 x {g_lo} inside (0, {})",
            model.gamma_limit()
        )));
    }
    let theta0 = start_point(model);
    let schedule = geometric_schedule(cfg.horizon, SCHEDULE_RATIO);
    let c_dec = 1.0 / (2.0 * model.radius2());

    struct Rep {
        lo: Trajectory,
        hi: Trajectory,
        rr: (Vec<u64>, Vec<f64>),
        dec: Trajectory,
    }
    let reps: Vec<Result<Rep>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut s_lo = rng::stream(cfg.seed, r, "fig2/lo");
            let mut s_hi = rng::stream(cfg.seed, r, "fig2/hi");
            let mut s_dec = rng::stream(cfg.seed, r, "fig2/decaying");
            let lo =
                chain::run_chain(model, g_lo, theta0.clone(), cfg.horizon, &schedule, &mut s_lo)?;
            let hi =
                chain::run_chain(model, g_hi, theta0.clone(), cfg.horizon, &schedule, &mut s_hi)?;
            let rr = run_rr(
                model,
                &RrScheme::two(g_lo, true),
                &theta0,
                cfg.horizon,
                &schedule,
                cfg.seed,
                r,
            )?;
            let dec = chain::run_decaying(
                model,
                c_dec,
                theta0.clone(),
                cfg.horizon,
                &schedule,
                &mut s_dec,
            )?;
            Ok(Rep {
                lo: lo.trajectory,
                hi: hi.trajectory,
                rr: (rr.trajectory.ks, rr.trajectory.gap),
                dec: dec.trajectory,
            })
        })
        .collect();
    let reps: Vec<Rep> = reps.into_iter().collect::<Result<_>>()?;

    let pull = |f: &dyn Fn(&Rep) -> Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let per: Vec<Vec<f64>> = reps.iter().map(f).collect();
        mean_curves(&per)
    };
    let curves: Vec<(String, String, Vec<u64>, Vec<f64>, Vec<f64>)> = {
        let mut v = Vec::new();
        let (m, s) = pull(&|r: &Rep| r.hi.theta_gap.clone());
        v.push((format!("sgd, g = {}", fnum(g_hi)), "fig2_sgd_hi.csv".into(), reps[0].hi.ks.clone(), m, s));
        let (m, s) = pull(&|r: &Rep| r.lo.theta_gap.clone());
        v.push((format!("sgd, g = {}", fnum(g_lo)), "fig2_sgd_lo.csv".into(), reps[0].lo.ks.clone(), m, s));
        let (m, s) = pull(&|r: &Rep| r.hi.avg_gap.clone());
        v.push((format!("averaged, g = {}", fnum(g_hi)), "fig2_avg_hi.csv".into(), reps[0].hi.ks.clone(), m, s));
        let (m, s) = pull(&|r: &Rep| r.lo.avg_gap.clone());
        v.push((format!("averaged, g = {}", fnum(g_lo)), "fig2_avg_lo.csv".into(), reps[0].lo.ks.clone(), m, s));
        let (m, s) = pull(&|r: &Rep| r.rr.1.clone());
        v.push((format!("extrapolated (g, 2g), g = {}", fnum(g_lo)), "fig2_rr2.csv".into(), reps[0].rr.0.clone(), m, s));
        let (m, s) = pull(&|r: &Rep| r.dec.avg_gap.clone());
        v.push((format!("averaged, g_k = {:.3}/sqrt(k)", c_dec), "fig2_decaying.csv".into(), reps[0].dec.ks.clone(), m, s));
        v
    };

    let mut plot = PlotSpec {
        title: "expected f-gap vs iterations".into(),
        xlabel: "iteration n (log10)".into(),
        ylabel: "f(theta_n) - f* (log10)".into(),
        logx: true,
        logy: true,
        curves: Vec::new(),
    };
    for (label, file, ks, mean, se) in &curves {
        art.table(file, &trajectory_table(label, ks, mean, se))?;
        plot.curves.push(Curve {
            label: label.clone(),
            xs: ks.iter().map(|&k| k as f64).collect(),
            ys: mean.clone(),
        });
    }
    art.plot("fig2.svg", &plot)
}

/// Start point used by trajectory experiments: theta* shifted by one in
/// every coordinate.
fn start_point(model: &ObjectiveModel) -> DVector<f64> {
    model.theta_star() + DVector::from_element(model.dim(), 1.0)
}

/// Step-size scaling of averaged-iterate bias for the plain estimator and
/// its two- and three-point extrapolations.
fn rr_bias_scaling(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let study = stationary::fit_bias_scaling(
        &cfg.model,
        &cfg.gammas,
        cfg.horizon,
        cfg.replicas,
        cfg.seed,
    )?;

    let mut pts = Table::new(["estimator", "gamma", "bias", "se"]);
    for p in &study.single {
        pts.row(["single".into(), fnum(p.gamma), fnum(p.bias), fnum(p.se)]);
    }
    for p in &study.rr2 {
        pts.row(["rr2".into(), fnum(p.gamma), fnum(p.bias), fnum(p.se)]);
    }
    let p = &study.rr3_at_max;
    pts.row(["rr3".into(), fnum(p.gamma), fnum(p.bias), fnum(p.se)]);
    art.table("bias_points.csv", &pts)?;

    let mut fits =
        Table::new(["estimator", "status", "slope", "slope_half_width", "intercept", "points_used"]);
    for (name, law) in [("single", &study.single_fit), ("rr2", &study.rr2_fit)] {
        match law {
            stationary::LawFit::Fitted(f) => fits.row([
                name.to_string(),
                "fitted".into(),
                fnum(f.slope),
                fnum(f.slope_half_width),
                fnum(f.intercept),
                f.used.iter().filter(|u| **u).count().to_string(),
            ]),
            stationary::LawFit::NoiseFloor { resolved, total } => fits.row([
                name.to_string(),
                "noise-floor".into(),
                String::new(),
                String::new(),
                String::new(),
                format!("{resolved} of {total}"),
            ]),
        };
    }
    art.table("bias_fits.csv", &fits)?;

    let d = cfg.model.dim();
    let mut means = Table::new(
        ["gamma"]
            .into_iter()
            .map(String::from)
            .chain((0..d).map(|i| format!("mean_{i}")))
            .chain((0..d).map(|i| format!("se_{i}")))
            .collect::<Vec<_>>(),
    );
    for (g, m, s) in &study.means {
        means.row(
            std::iter::once(fnum(*g))
                .chain(m.iter().map(|v| fnum(*v)))
                .chain(s.iter().map(|v| fnum(*v)))
                .collect::<Vec<_>>(),
        );
    }
    art.table("stationary_means.csv", &means)?;

    let plot = PlotSpec {
        title: "averaged-iterate bias vs step size".into(),
        xlabel: "step size (log10)".into(),
        ylabel: "|E theta_bar - theta*| (log10)".into(),
        logx: true,
        logy: true,
        curves: vec![
            Curve {
                label: format!("single ({})", study.single_fit.describe()),
                xs: study.single.iter().map(|p| p.gamma).collect(),
                ys: study.single.iter().map(|p| p.bias).collect(),
            },
            Curve {
                label: format!("rr2 ({})", study.rr2_fit.describe()),
                xs: study.rr2.iter().map(|p| p.gamma).collect(),
                ys: study.rr2.iter().map(|p| p.bias).collect(),
            },
        ],
    };
    art.plot("bias_scaling.svg", &plot)
}

/// Stationary moment table, one row per step size, with the exact
/// tensor-solve second moment alongside on quadratic models.
fn stationary_table(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let model = &cfg.model;
    let quadratic = model.kind() == ModelKind::LeastSquares;
    let ests: Vec<Result<stationary::StationaryEstimate>> = cfg
        .gammas
        .par_iter()
        .enumerate()
        .map(|(i, &g)| {
            stationary::estimate_stationary(
                model,
                g,
                cfg.horizon,
                stationary::DEFAULT_BATCHES,
                None,
                cfg.seed,
                i as u64,
                "stationary-table",
            )
        })
        .collect();

    let mut t = Table::new([
        "gamma",
        "burn_in",
        "samples",
        "m2",
        "m2_se",
        "m4",
        "m4_se",
        "fgap",
        "fgap_se",
        "trace_second_moment",
        "trace_exact",
        "trace_bound",
        "exact_within_3se",
    ]);
    t.comment("trace_exact: dense tensor solve, quadratic models only");
    let mut sm = Table::new(["gamma", "i", "j", "value", "se", "exact"]);
    let mut m2_pts: Vec<(f64, f64, f64, Option<f64>, Option<f64>)> = Vec::new();
    for (&g, est) in cfg.gammas.iter().zip(ests) {
        let est = est?;
        let exact = if quadratic {
            Some(tensorops::stationary_second_moment_lms(model, g)?)
        } else {
            None
        };
        let tr = est.second_moment.trace();
        let tr_exact = exact.as_ref().map(|m| m.trace());
        let tr_se = est.second_moment_se.trace();
        let bound = if g * model.lip() < 1.0 {
            Some(g * model.noise_moment(2).powi(2) / (model.mu() * (1.0 - g * model.lip())))
        } else {
            None
        };
        let within = tr_exact.map(|e| (tr - e).abs() <= 3.0 * tr_se);
        t.row([
            fnum(g),
            est.burn_in.to_string(),
            est.samples.to_string(),
            fnum(est.m2),
            fnum(est.m2_se),
            fnum(est.m4),
            fnum(est.m4_se),
            fnum(est.fgap),
            fnum(est.fgap_se),
            fnum(tr),
            tr_exact.map(fnum).unwrap_or_default(),
            bound.map(fnum).unwrap_or_default(),
            within.map(|w| w.to_string()).unwrap_or_default(),
        ]);
        for i in 0..model.dim() {
            for j in 0..model.dim() {
                sm.row([
                    fnum(g),
                    i.to_string(),
                    j.to_string(),
                    fnum(est.second_moment[(i, j)]),
                    fnum(est.second_moment_se[(i, j)]),
                    exact.as_ref().map(|m| fnum(m[(i, j)])).unwrap_or_default(),
                ]);
            }
        }
        m2_pts.push((g, est.m2, est.m2_se, tr_exact, bound));
    }
    art.table("stationary_table.csv", &t)?;
    art.table("second_moments.csv", &sm)?;

    let mut curves = vec![Curve {
        label: "empirical m2".into(),
        xs: m2_pts.iter().map(|p| p.0).collect(),
        ys: m2_pts.iter().map(|p| p.1).collect(),
    }];
    if quadratic {
        curves.push(Curve {
            label: "tensor solve".into(),
            xs: m2_pts.iter().map(|p| p.0).collect(),
            ys: m2_pts.iter().filter_map(|p| p.3).collect(),
        });
    }
    if m2_pts.iter().all(|p| p.4.is_some()) {
        curves.push(Curve {
            label: "trace bound".into(),
            xs: m2_pts.iter().map(|p| p.0).collect(),
            ys: m2_pts.iter().filter_map(|p| p.4).collect(),
        });
    }
    if m2_pts.len() >= 2 {
        art.plot(
            "stationary_m2.svg",
            &PlotSpec {
                title: "stationary second moment vs step size".into(),
                xlabel: "step size (log10)".into(),
                ylabel: "E|theta - theta*|^2 (log10)".into(),
                logx: true,
                logy: true,
                curves,
            },
        )?;
    }
    Ok(())
}

/// Synchronous-coupling contraction curves, one per step size, with the
/// proved geometric envelope.
fn coupling(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let model = &cfg.model;
    let ones = DVector::from_element(model.dim(), 1.0);
    let theta_a = model.theta_star() + &ones;
    let theta_b = model.theta_star() - &ones;
    // D(k) shrinks by factor^k; once it falls 24 decades the coupled
    // difference sits at the accumulated rounding floor of the two
    // iterate paths, so recording further k is noise.
    let mut horizon = cfg.horizon;
    let tightest = cfg.gammas.iter().fold(1.0f64, |acc, &g| {
        acc.min(stationary::contraction_factor(model, g))
    });
    if tightest < 1.0 {
        let cap = (1e-24f64.ln() / tightest.ln()).ceil() as u64;
        horizon = horizon.min(cap.max(200));
    }

    let mut summary =
        Table::new(["gamma", "factor", "coarse_factor", "d0", "replicas", "within_bound"]);
    let mut plot = PlotSpec {
        title: "synchronous coupling: mean squared distance".into(),
        xlabel: "iteration k".into(),
        ylabel: "E|theta1 - theta2|^2 (log10)".into(),
        logx: false,
        logy: true,
        curves: Vec::new(),
    };
    for (i, &g) in cfg.gammas.iter().enumerate() {
        let rep = stationary::coupling_contraction(
            model,
            g,
            &theta_a,
            &theta_b,
            horizon,
            cfg.replicas,
            cfg.seed + i as u64,
        )?;
        let mut t = Table::new(["k", "d_mean", "d_se", "bound"]);
        t.comment(format!("gamma = {}, factor = {}", fnum(g), fnum(rep.factor)));
        for (k, (&m, &s)) in rep.d_mean.iter().zip(&rep.d_se).enumerate() {
            t.row([k.to_string(), fnum(m), fnum(s), fnum(rep.bound(k))]);
        }
        art.table(&format!("coupling_g{i}.csv"), &t)?;
        summary.row([
            fnum(g),
            fnum(rep.factor),
            fnum(rep.coarse_factor),
            fnum(rep.d0),
            cfg.replicas.to_string(),
            rep.within_bound().to_string(),
        ]);
        let ks: Vec<f64> = (0..rep.d_mean.len()).map(|k| k as f64).collect();
        plot.curves.push(Curve {
            label: format!("D(k), g = {}", fnum(g)),
            xs: ks.clone(),
            ys: rep.d_mean.clone(),
        });
        plot.curves.push(Curve {
            label: format!("bound, g = {}", fnum(g)),
            xs: ks.clone(),
            ys: (0..rep.d_mean.len()).map(|k| rep.bound(k)).collect(),
        });
    }
    art.table("coupling_summary.csv", &summary)?;
    art.plot("coupling.svg", &plot)
}

/// Iteration-count scaling of the averaged iterate: squared error and bias
/// decompositions from a fixed start and from a stationary start.
fn k_scaling(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let model = &cfg.model;
    let theta0 = start_point(model);
    let k_grid: Vec<u64> =
        geometric_schedule(cfg.horizon, 2.0).into_iter().filter(|&k| k >= 8).collect();
    if k_grid.len() < 4 {
        return Err(Error::InvalidConfig("k-scaling needs a horizon of at least 128".into()));
    }

    let mut fits = Table::new([
        "gamma",
        "start",
        "c1",
        "c2",
        "c1_theory",
        "bias_constant",
        "bias_constant_se",
        "bias_constant_theory",
        "dist2_slope",
        "dist2_slope_half_width",
    ]);
    let mut plot = PlotSpec {
        title: "averaged-iterate error vs iteration count".into(),
        xlabel: "iterations k (log10)".into(),
        ylabel: "E|avg_k - theta*|^2 (log10)".into(),
        logx: true,
        logy: true,
        curves: Vec::new(),
    };
    for (i, &g) in cfg.gammas.iter().enumerate() {
        for (sname, start) in
            [("point", KStart::Point(theta0.clone())), ("stationary", KStart::Stationary)]
        {
            let rep = stationary::fit_k_scaling(
                model,
                g,
                start,
                &k_grid,
                cfg.replicas,
                cfg.seed + i as u64,
            )?;
            let mut t = Table::new(["k", "dist2", "dist2_se", "bias", "bias_se"]);
            t.comment(format!("gamma = {}, start = {sname}", fnum(g)));
            for (j, &k) in rep.k_grid.iter().enumerate() {
                t.row([
                    k.to_string(),
                    fnum(rep.dist2[j]),
                    fnum(rep.dist2_se[j]),
                    fnum(rep.bias[j]),
                    fnum(rep.bias_se[j]),
                ]);
            }
            art.table(&format!("kscaling_{sname}_g{i}.csv"), &t)?;
            fits.row([
                fnum(g),
                sname.to_string(),
                fnum(rep.c1),
                fnum(rep.c2),
                fnum(rep.c1_theory),
                fnum(rep.bias_constant),
                fnum(rep.bias_constant_se),
                rep.bias_constant_theory.map(fnum).unwrap_or_default(),
                fnum(rep.dist_fit.slope),
                fnum(rep.dist_fit.slope_half_width),
            ]);
            plot.curves.push(Curve {
                label: format!("{sname}, g = {}", fnum(g)),
                xs: rep.k_grid.iter().map(|&k| (k + 1) as f64).collect(),
                ys: rep.dist2.clone(),
            });
            if sname == "stationary" {
                plot.curves.push(Curve {
                    label: format!("c1_theory/k, g = {}", fnum(g)),
                    xs: rep.k_grid.iter().map(|&k| (k + 1) as f64).collect(),
                    ys: rep.k_grid.iter().map(|&k| rep.c1_theory / (k + 1) as f64).collect(),
                });
            }
        }
    }
    art.table("kscaling_fits.csv", &fits)?;
    art.plot("kscaling.svg", &plot)
}

/// First-order weak-error removal: stationary mean of the squared distance
/// minus its gamma-linear prediction, with the residual's step-size slope.
fn weak_error(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let model = &cfg.model;
    let mut grid = cfg.gammas.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let gmax = *grid.last().unwrap();
    // Smaller steps mix slower and have smaller residuals: scale budgets.
    let samples: Vec<u64> =
        grid.iter().map(|&g| (cfg.horizon as f64 * gmax / g).ceil() as u64).collect();
    let rep = flow::weak_error_check(model, &grid, &samples, cfg.seed)?;

    let mut t = Table::new([
        "gamma",
        "samples",
        "g_mean",
        "g_se",
        "leading_term",
        "correction",
        "residual",
        "residual_se",
    ]);
    t.comment(format!("lead coefficient (1/2) tr(h'' C) = {}", fnum(rep.lead_coeff)));
    for (j, &g) in rep.gammas.iter().enumerate() {
        t.row([
            fnum(g),
            samples[j].to_string(),
            fnum(rep.g_mean[j]),
            fnum(rep.g_se[j]),
            fnum(g * rep.lead_coeff),
            fnum(rep.corrections[j]),
            fnum(rep.residuals[j]),
            fnum(rep.residual_se[j]),
        ]);
    }
    art.table("weak_error.csv", &t)?;

    let mut fit = Table::new(["slope", "slope_half_width", "intercept", "points_used"]);
    fit.row([
        fnum(rep.fit.slope),
        fnum(rep.fit.slope_half_width),
        fnum(rep.fit.intercept),
        rep.fit.used.iter().filter(|u| **u).count().to_string(),
    ]);
    art.table("weak_error_fit.csv", &fit)?;

    let guide: Vec<f64> = {
        let last = rep.residuals.last().copied().unwrap_or(1.0);
        rep.gammas.iter().map(|&g| last * (g / gmax).powi(2)).collect()
    };
    art.plot(
        "weak_error.svg",
        &PlotSpec {
            title: "weak-error residual vs step size".into(),
            xlabel: "step size (log10)".into(),
            ylabel: "|E g - gamma lead - correction| (log10)".into(),
            logx: true,
            logy: true,
            curves: vec![
                Curve {
                    label: format!("residual (slope {:.2})", rep.fit.slope),
                    xs: rep.gammas.clone(),
                    ys: rep.residuals.clone(),
                },
                Curve { label: "gamma^2 guide".into(), xs: rep.gammas.clone(), ys: guide },
            ],
        },
    )
}

/// Second- and fourth-moment growth in the step size against the trace
/// bound.
fn moment_growth(cfg: &RunConfig, art: &mut Artifacts) -> Result<()> {
    let mut grid = cfg.gammas.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rep = stationary::moment_growth_check(&cfg.model, &grid, cfg.horizon, cfg.seed)?;

    let mut t = Table::new(["gamma", "m2", "m2_se", "m2_bound", "m4", "m4_se"]);
    for (j, &g) in rep.gammas.iter().enumerate() {
        t.row([
            fnum(g),
            fnum(rep.m2[j]),
            fnum(rep.m2_se[j]),
            rep.m2_bound[j].map(fnum).unwrap_or_default(),
            fnum(rep.m4[j]),
            fnum(rep.m4_se[j]),
        ]);
    }
    art.table("moment_growth.csv", &t)?;

    let mut fits = Table::new(["moment", "slope", "slope_half_width", "bound_ok"]);
    fits.row([
        "m2".into(),
        fnum(rep.m2_fit.slope),
        fnum(rep.m2_fit.slope_half_width),
        rep.bound_ok().to_string(),
    ]);
    fits.row(["m4".into(), fnum(rep.m4_fit.slope), fnum(rep.m4_fit.slope_half_width), String::new()]);
    art.table("moment_growth_fits.csv", &fits)?;

    let mut curves = vec![
        Curve {
            label: format!("m2 (slope {:.2})", rep.m2_fit.slope),
            xs: rep.gammas.clone(),
            ys: rep.m2.clone(),
        },
        Curve {
            label: format!("m4 (slope {:.2})", rep.m4_fit.slope),
            xs: rep.gammas.clone(),
            ys: rep.m4.clone(),
        },
    ];
    if rep.m2_bound.iter().all(|b| b.is_some()) {
        curves.push(Curve {
            label: "m2 bound".into(),
            xs: rep.gammas.clone(),
            ys: rep.m2_bound.iter().map(|b| b.unwrap()).collect(),
        });
    }
    art.plot(
        "moment_growth.svg",
        &PlotSpec {
            title: "stationary moments vs step size".into(),
            xlabel: "step size (log10)".into(),
            ylabel: "moment (log10)".into(),
            logx: true,
            logy: true,
            curves,
        },
    )
}
