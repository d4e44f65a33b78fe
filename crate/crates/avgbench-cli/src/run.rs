//! Experiment runners. Every runner writes CSV files into the output
//! directory and returns a short human-readable report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use avgbench::correlators::{avg_single_site, evaluate, Scheme};
use avgbench::simulator::{build_fig1_circuit, build_fig2_circuit, oracle_expectation, sample_rounds, shot_sample, Summary};
use avgbench::spacetime::{classify, SpaceTimeLabel};
use avgbench::supermap::{
    commutation_residual, solve_sdp_with, verify_supermap, Decomposition, FarkasCertificate, RescalingSupermap, Route,
    SdpMode, SdpOptions, SdpOutcome, SdpSolution, TieBreak, entry_digits, class_of, lp_decompose,
};
use avgbench::{Channel, Spec};

use crate::config::{BenchmarkConfig, CheckConfig, DepthSweepConfig, PhiSweepConfig, SupermapConfig, SupermapMode};
use crate::error::CliError;

/// Run-wide settings after merging flags, environment and config.
#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub rounds: u64,
    pub shots: usize,
    pub out: PathBuf,
    pub tol: f64,
}

/// 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn writer(dir: &Path, name: &str) -> Result<(csv::Writer<fs::File>, PathBuf), CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok((csv::Writer::from_path(&path)?, path))
}

/// Per-observable sampled statistics over rounds: exact realization values,
/// or shot means when `shots > 0`.
fn sampled(spec: &Spec, s: &Settings) -> Result<Vec<Summary>, CliError> {
    if s.rounds == 0 {
        return Ok(Vec::new());
    }
    if s.shots == 0 {
        return Ok(sample_rounds(spec, s.rounds, s.seed)?.summaries);
    }
    let k = spec.observables().len();
    let mut per_obs = vec![Vec::with_capacity(s.rounds as usize); k];
    for r in 0..s.rounds {
        for (i, e) in shot_sample(spec, r, s.shots, s.seed)?.into_iter().enumerate() {
            per_obs[i].push(e.mean);
        }
    }
    Ok(per_obs.iter().map(|v| Summary::of(v)).collect())
}

pub fn benchmark(cfg: &BenchmarkConfig, s: &Settings) -> Result<String, CliError> {
    let spec = cfg.spec()?;
    let circuit = spec.channel_circuit()?;
    let mut rows = Vec::new();
    let mut usable = Vec::new();
    for (k, oc) in cfg.observables.iter().enumerate() {
        let scheme: Scheme = oc.scheme.into();
        let res = oc.observable().and_then(|o| {
            if o.sites().iter().any(|&x| x >= cfg.width) {
                return Err(CliError::Config(format!("observable {k}: site outside the chain of width {}", cfg.width)));
            }
            let v = evaluate(&circuit, scheme, &o)?;
            Ok((o, v))
        });
        match res {
            Ok((o, v)) => {
                usable.push(o);
                rows.push((scheme, oc.sites_label(), Some(v), Some(usable.len() - 1), "ok".to_string()));
            }
            Err(e) => rows.push((scheme, oc.sites_label(), None, None, e.to_string())),
        }
    }
    let (summaries, sample_note) = if usable.is_empty() {
        (Vec::new(), None)
    } else {
        match spec.with_observables(usable).map_err(CliError::from).and_then(|sp| sampled(&sp, s)) {
            Ok(v) => (v, None),
            Err(e) => (Vec::new(), Some(format!("sampling unavailable: {e}"))),
        }
    };

    let (mut w, path) = writer(&s.out, "benchmark.csv")?;
    w.write_record([
        "scheme", "sites", "T", "classical_value", "sampled_mean", "sampled_std", "n_rounds", "n_shots", "seed",
        "status",
    ])?;
    let mut report = String::new();
    for (scheme, sites, value, idx, status) in &rows {
        let sm = idx.and_then(|i| summaries.get(i));
        let status = match (&sample_note, status.as_str()) {
            (Some(n), "ok") => n.clone(),
            _ => status.clone(),
        };
        w.write_record([
            scheme.to_string(),
            sites.clone(),
            cfg.depth.to_string(),
            opt(*value),
            opt(sm.map(|m| m.mean)),
            opt(sm.map(|m| m.std)),
            s.rounds.to_string(),
            s.shots.to_string(),
            s.seed.to_string(),
            status.clone(),
        ])?;
        let _ = writeln!(
            report,
            "{scheme} [{sites}] classical={} sampled={} ({status})",
            value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
            sm.map(|m| format!("{:.6} ± {:.6}", m.mean, m.stderr)).unwrap_or_else(|| "-".into()),
        );
    }
    w.flush()?;
    let _ = writeln!(report, "wrote {}", path.display());
    Ok(report)
}

pub fn phi_sweep(cfg: &PhiSweepConfig, s: &Settings) -> Result<String, CliError> {
    if cfg.points < 2 {
        return Err(CliError::Config("phi sweep needs at least two points".into()));
    }
    let t = cfg.depth;
    let l = cfg.width.unwrap_or(2 * t + 2);
    let (mut w, path) = writer(&s.out, "phi_sweep.csv")?;
    w.write_record([
        "family", "phi", "T", "L", "site", "classical_value", "oracle_value", "sampled_mean", "sampled_std",
        "n_rounds", "seed",
    ])?;
    let mut report = String::new();
    for &n in &cfg.families {
        let (mut lo, mut hi, mut worst) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for k in 0..cfg.points {
            let phi = cfg.phi_min + (cfg.phi_max - cfg.phi_min) * k as f64 / (cfg.points - 1) as f64;
            let spec = build_fig1_circuit(n, phi, t, l)?;
            let c = spec.channel_circuit()?;
            let o = &spec.observables()[0];
            let v = avg_single_site(&c, o)?;
            let oracle = if cfg.oracle { Some(oracle_expectation(&c, o)?) } else { None };
            if let Some(x) = oracle {
                worst = worst.max((x - v).abs());
            }
            let sm = sampled(&spec, s)?;
            lo = lo.min(v);
            hi = hi.max(v);
            w.write_record([
                n.to_string(),
                num(phi),
                t.to_string(),
                l.to_string(),
                t.to_string(),
                num(v),
                opt(oracle),
                opt(sm.first().map(|m| m.mean)),
                opt(sm.first().map(|m| m.std)),
                s.rounds.to_string(),
                s.seed.to_string(),
            ])?;
        }
        let _ = write!(report, "family {n}: classical range [{lo:.6}, {hi:.6}]");
        if cfg.oracle {
            let _ = write!(report, ", max |classical - oracle| = {worst:.3e}");
        }
        report.push('\n');
    }
    w.flush()?;
    let _ = writeln!(report, "wrote {}", path.display());
    Ok(report)
}

pub fn depth_sweep(cfg: &DepthSweepConfig, s: &Settings) -> Result<String, CliError> {
    if cfg.t_min == 0 || cfg.t_min > cfg.t_max {
        return Err(CliError::Config("need 1 <= t_min <= t_max".into()));
    }
    if s.rounds < 2 {
        return Err(CliError::Config("depth sweep needs at least two rounds".into()));
    }
    let (mut w, path) = writer(&s.out, "depth_sweep.csv")?;
    w.write_record([
        "T", "L", "classical_at_T", "mean_at_T", "std_at_T", "stderr_at_T", "classical_at_Tminus1",
        "mean_at_Tminus1", "std_at_Tminus1", "stderr_at_Tminus1", "n_rounds", "seed",
    ])?;
    let mut raw = if cfg.raw_samples {
        let (mut r, _) = writer(&s.out, "depth_sweep_samples.csv")?;
        r.write_record(["T", "round", "value_at_Tminus1", "value_at_T"])?;
        Some(r)
    } else {
        None
    };
    let (mut hist, _) = writer(&s.out, "depth_sweep_histograms.csv")?;
    hist.write_record(["T", "site", "bin_lo", "bin_hi", "count"])?;
    let mut report = String::new();
    for t in cfg.t_min..=cfg.t_max {
        let l = 2 * t + 2;
        if l > cfg.width_cap {
            let _ = writeln!(report, "T={t}: skipped, width {l} exceeds cap {}", cfg.width_cap);
            continue;
        }
        let spec = build_fig2_circuit(t, l)?;
        let c = spec.channel_circuit()?;
        let exact: Vec<f64> =
            spec.observables().iter().map(|o| avg_single_site(&c, o)).collect::<Result<_, _>>()?;
        let run = sample_rounds(&spec, s.rounds, s.seed)?;
        let (m0, m1) = (&run.summaries[0], &run.summaries[1]);
        w.write_record([
            t.to_string(),
            l.to_string(),
            num(exact[1]),
            num(m1.mean),
            num(m1.std),
            num(m1.stderr),
            num(exact[0]),
            num(m0.mean),
            num(m0.std),
            num(m0.stderr),
            s.rounds.to_string(),
            s.seed.to_string(),
        ])?;
        if let Some(r) = raw.as_mut() {
            for rr in &run.rounds {
                r.write_record([t.to_string(), rr.round.to_string(), num(rr.values[0]), num(rr.values[1])])?;
            }
        }
        for (site, m) in [(t - 1, m0), (t, m1)] {
            for (k, &count) in m.histogram.counts.iter().enumerate() {
                hist.write_record([
                    t.to_string(),
                    site.to_string(),
                    num(m.histogram.edges[k]),
                    num(m.histogram.edges[k + 1]),
                    count.to_string(),
                ])?;
            }
        }
        let _ = writeln!(
            report,
            "T={t} L={l}: x=T classical {:.6} sampled {:.6} ± {:.6} (std {:.4}); x=T-1 sampled {:.6} ± {:.6}",
            exact[1], m1.mean, m1.stderr, m1.std, m0.mean, m0.stderr
        );
    }
    w.flush()?;
    hist.flush()?;
    if let Some(mut r) = raw {
        r.flush()?;
    }
    let _ = writeln!(report, "wrote {}", path.display());
    Ok(report)
}

fn write_tensor(dir: &Path, name: &str, x: &RescalingSupermap<f64>) -> Result<(), CliError> {
    let (mut w, _) = writer(dir, name)?;
    w.write_record(["a1", "a2", "b1", "b2", "class", "x"])?;
    for (i, &v) in x.entries().iter().enumerate() {
        let d = entry_digits(i);
        let mut rec: Vec<String> = d.iter().map(|p| p.to_string()).collect();
        rec.push(format!("{:04b}", class_of(i)));
        rec.push(num(v));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_certificate(dir: &Path, name: &str, cert: &FarkasCertificate) -> Result<(), CliError> {
    let (mut w, _) = writer(dir, name)?;
    w.write_record(["row", "y"])?;
    for (i, v) in cert.y.iter().enumerate() {
        w.write_record([i.to_string(), num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

fn describe_solution(
    report: &mut String,
    dir: &Path,
    tag: &str,
    sol: &SdpSolution,
    alt: &SdpSolution,
    samples: usize,
    seed: u64,
) -> Result<(), CliError> {
    write_tensor(dir, &format!("x_{tag}.csv"), &sol.x)?;
    let _ = writeln!(report, "[{tag}]");
    let _ = writeln!(report, "optimum = {}", num(sol.optimum));
    let _ = writeln!(report, "optimum_numerical_route = {}", num(alt.optimum));
    let _ = writeln!(report, "route_gap = {:.3e}", (sol.optimum - alt.optimum).abs());
    let _ = writeln!(report, "min_eigenvalue = {:.3e}", sol.certificate.min_eigenvalue);
    let _ = writeln!(report, "class_spread_before_symmetrization = {:.3e}", sol.raw.class_spread());
    let t = sol.x.class_table();
    for (c, v) in t.iter().enumerate() {
        let v = if v.abs() < 1e-12 { 0.0 } else { *v };
        let _ = writeln!(report, "class_{c:04b} = {v:.9}");
    }
    match lp_decompose(&sol.x)? {
        Decomposition::Realizable(d) => {
            let (mut w, _) = writer(dir, &format!("decomposition_{tag}.csv"))?;
            w.write_record(["weight", "pre1", "pre2", "post1", "post2"])?;
            let support = d.support(1e-12);
            for (p, pre, post) in &support {
                w.write_record([num(*p), pre[0].to_string(), pre[1].to_string(), post[0].to_string(), post[1].to_string()])?;
            }
            w.flush()?;
            let _ = writeln!(report, "decomposition_support = {}", support.len());
            if samples > 0 {
                let v = verify_supermap(&sol.x, samples, seed)?;
                let _ = writeln!(report, "promised_label = {}", v.promised);
                let _ = writeln!(report, "verified = {} ({} samples)", v.confirmed, v.samples);
                let _ = writeln!(report, "max_ptm_residual = {:.3e}", v.max_ptm_residual);
                let _ = writeln!(report, "max_class_residual = {:.3e}", v.max_class_residual);
            }
        }
        Decomposition::Infeasible(_) => {
            let _ = writeln!(report, "decomposition = none");
        }
    }
    Ok(())
}

pub fn supermap(cfg: &SupermapConfig, s: &Settings) -> Result<String, CliError> {
    let mode = match cfg.mode {
        SupermapMode::ThreeWay => SdpMode::ThreeWay,
        SupermapMode::FourWay => SdpMode::FourWay,
    };
    let mut report = String::new();
    let _ = writeln!(report, "commutation_residual = {:.3e}", commutation_residual()?);
    let ties: Vec<(TieBreak, &str)> = match mode {
        SdpMode::ThreeWay => vec![(TieBreak::Default, "three_way")],
        SdpMode::FourWay => vec![(TieBreak::KeepLeft, "four_way_lambda0"), (TieBreak::KeepRight, "four_way_lambda1")],
    };
    for (tie, tag) in ties {
        let tag = if cfg.force_unit_transfer { format!("{tag}_forced") } else { tag.to_string() };
        let opts = SdpOptions { tie_break: tie, force_unit_transfer: cfg.force_unit_transfer, ..SdpOptions::new(mode) };
        let numerical = SdpOptions { route: Route::Numerical, ..opts };
        match (solve_sdp_with(&opts)?, solve_sdp_with(&numerical)?) {
            (SdpOutcome::Optimal(a), SdpOutcome::Optimal(b)) => {
                describe_solution(&mut report, &s.out, &tag, &a, &b, cfg.verify_samples, s.seed)?;
            }
            (SdpOutcome::Infeasible(cert), SdpOutcome::Infeasible(_)) => {
                write_certificate(&s.out, &format!("certificate_{tag}.csv"), &cert)?;
                let _ = writeln!(report, "[{tag}]");
                let _ = writeln!(report, "status = infeasible");
                let _ = writeln!(report, "farkas_gap = {:.6e}", cert.gap);
                let _ = writeln!(report, "farkas_dual_slack = {:.3e}", cert.dual_slack);
                let _ = writeln!(report, "certificate_valid = {}", cert.is_valid(s.tol));
                break;
            }
            _ => return Err(CliError::Solver("analytic and numerical routes disagree on feasibility".into())),
        }
    }
    fs::create_dir_all(&s.out)?;
    fs::write(s.out.join("supermap_report.txt"), &report)?;
    Ok(report)
}

pub fn check(cfg: &CheckConfig, tol_flag: Option<f64>) -> Result<String, CliError> {
    let tol = tol_flag.or(cfg.tol).unwrap_or(1e-9);
    let channel: Channel = cfg.channel()?;
    let class = classify(&channel, tol);
    let r = class.residuals;
    let label = match class.label() {
        SpaceTimeLabel::General if class.tp && class.unital => "tp+unital only".to_string(),
        other => other.to_string(),
    };
    let worst = r.iter().copied().fold(0.0, f64::max);
    let mut out = format!("{label}, max residual {worst:.1e}\n");
    for (name, flag, res) in [
        ("trace_preserving", class.tp, r[0]),
        ("unital", class.unital, r[1]),
        ("left_space_unital", class.left_space_unital, r[2]),
        ("right_space_unital", class.right_space_unital, r[3]),
    ] {
        let _ = writeln!(out, "  {name:<20} {flag:<5} residual {res:.3e}");
    }
    Ok(out)
}
