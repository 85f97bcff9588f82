use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use filippov_core::classify::{
    catalog_limit_cycles, chaos_check as run_chaos, classify_regular, sphere_decomposition, ClassificationReport,
};
use filippov_core::flow::{integrate_branches, BranchPolicy, EventKind, Trajectory};
use filippov_core::manifold::{quotient_distance, wrap};
use filippov_core::maps::{displacement_roots, half_return, sigma1_return, scan_displacement, Section, SectionPoint};
use filippov_core::scenarios::Scenario;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ParamValue, RunConfig};
use crate::{params_of, CliError};

pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json(&mut self, name: &str, v: &Value) -> Result<(), CliError> {
        self.write(name, &(serde_json::to_string_pretty(v).expect("json serializes") + "\n"))
    }

    pub fn manifest(&mut self, command: &str, cfg: &RunConfig, summary: &Value) -> Result<(), CliError> {
        let m = json!({
            "tool": "filippov",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.seed,
            "scenario": cfg.scenario.name,
            "tolerances": {
                "integration": cfg.integration,
                "maps": cfg.maps,
                "tau_sign": filippov_core::field::TAU_SIGN,
                "tau_on_sigma": filippov_core::field::TAU_ON_SIGMA,
                "tau_root": filippov_core::field::TAU_ROOT,
                "n_grid": filippov_core::field::N_GRID,
                "h_fd": filippov_core::field::H_FD,
            },
            "outputs": self.files,
            "summary": summary,
            "config": cfg.to_toml(),
        });
        self.json("manifest.json", &m)
    }
}

fn scenario_json(s: &Scenario) -> Value {
    json!({ "name": s.name, "model": s.field.model(), "params": params_of(s), "flags": s.flags })
}

fn closed_orbit(tr: &Trajectory) -> Option<Value> {
    let crossings: Vec<_> = tr.events_of(EventKind::CrossSigma).collect();
    let first = crossings.first()?;
    crossings[1..].iter().find_map(|e| {
        let d = quotient_distance(&first.location, &e.location).ok()?;
        (e.detail == first.detail && d < 1e-7).then(|| json!({ "period": e.t - first.t, "closure_distance": d }))
    })
}

pub fn simulate(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let s = cfg.scenario()?;
    let sim = &cfg.simulate;
    let p0 = wrap(sim.x0, sim.y0, s.field.model())?;
    let trajectories = integrate_branches(&s.field, p0, &cfg.integration, sim.direction)?;
    let single = !matches!(cfg.integration.branch_policy, BranchPolicy::EnumerateToDepth(_));
    let mut rows = Vec::new();
    for (i, tr) in trajectories.iter().enumerate() {
        let stem = if single { String::new() } else { format!("_{i}") };
        out.write(&format!("trajectory{stem}.csv"), &tr.to_csv())?;
        out.write(&format!("events{stem}.jsonl"), &tr.events_jsonl())?;
        let mut counts = serde_json::Map::new();
        for e in &tr.events {
            let k = format!("{:?}", e.kind);
            let n = counts.get(&k).and_then(Value::as_u64).unwrap_or(0);
            counts.insert(k, json!(n + 1));
        }
        rows.push(json!({
            "branch_id": tr.branch_id,
            "terminal_event": tr.terminal_event(),
            "t_end": tr.t_end(),
            "event_counts": counts,
            "closed_orbit": closed_orbit(tr),
        }));
    }
    let summary = json!({ "scenario": scenario_json(&s), "start": p0, "trajectories": rows });
    out.json("summary.json", &summary)?;
    Ok(summary)
}

fn regular_exact(cfg: &RunConfig) -> Result<[filippov_core::exact::ExactReal; 4], CliError> {
    let get = |k: &str, d: i128| -> Result<_, CliError> {
        match cfg.scenario.params.get(k) {
            Some(v) => v.exact(),
            None => Ok(ParamValue::Number(d as f64).exact()?),
        }
    };
    Ok([get("a", 1)?, get("b", 1)?, get("sigma1", 1)?, get("sigma2", 1)?])
}

pub fn classification(cfg: &RunConfig, s: &Scenario) -> Result<ClassificationReport, CliError> {
    if s.name == "regular" {
        let [a, b, s1, s2] = regular_exact(cfg)?;
        Ok(classify_regular(&a, &b, &s1, &s2, s.field.model(), &cfg.regular)?)
    } else {
        Ok(catalog_limit_cycles(&s.field, &cfg.catalog)?)
    }
}

pub fn classify(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let s = cfg.scenario()?;
    let report = classification(cfg, &s)?;
    let options = if s.name == "regular" {
        json!(cfg.regular)
    } else {
        json!(cfg.catalog)
    };
    let v = json!({ "scenario": scenario_json(&s), "options": options, "report": report });
    out.json("report.json", &v)?;
    Ok(json!({ "verdict": v["report"]["verdict"]["verdict"], "evidence_passed": report.evidence.iter().all(|e| e.passed) }))
}

pub fn return_map(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let s = cfg.scenario()?;
    let opts = cfg.maps;
    let scan = match opts.section {
        Some(sec) => scan_displacement(&s.field, sec, &opts)?,
        None => displacement_roots(&s.field, &opts)?,
    };
    let rows: Vec<String> = scan
        .grid
        .par_iter()
        .map(|&(c, _)| {
            let r = match scan.section {
                Section::Lambda => SectionPoint::lambda(c).and_then(|q| half_return(&s.field, &q, &opts)),
                _ => sigma1_return(&s.field, &SectionPoint::sigma1(c), &opts),
            };
            match r {
                Ok(r) => format!("{c:.17e},{:.17e},{:.17e}", r.d, r.return_time),
                Err(_) => format!("{c:.17e},,"),
            }
        })
        .collect();
    let mut csv = String::from("xi,d,return_time\n");
    for r in rows {
        let _ = writeln!(csv, "{r}");
    }
    out.write("return_map.csv", &csv)?;
    let v = json!({
        "scenario": scenario_json(&s),
        "options": opts,
        "section": scan.section,
        "roots": scan.roots,
        "center_bands": scan.center_bands,
        "coverage": scan.coverage,
        "constant_sign": scan.constant_sign(),
    });
    out.json("roots.json", &v)?;
    Ok(json!({ "section": scan.section, "roots": scan.roots.len() }))
}

pub fn chaos_check(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let s = cfg.scenario()?;
    let d = run_chaos(&s.field, cfg.chaos_samples.samples, &cfg.chaos)?;
    let mut csv = String::from("u_x,u_y,v_x,v_y,start_x,start_y,t0,landing_x,landing_y,backward\n");
    for w in &d.transitivity_witnesses {
        let _ = writeln!(
            csv,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            w.u_center.x, w.u_center.y, w.v_center.x, w.v_center.y, w.start.x, w.start.y, w.t0, w.landing.x, w.landing.y, w.backward
        );
    }
    out.write("witnesses.csv", &csv)?;
    let v = json!({
        "scenario": scenario_json(&s),
        "options": cfg.chaos,
        "samples": cfg.chaos_samples.samples,
        "diagnostics": d,
    });
    out.json("chaos.json", &v)?;
    Ok(json!({
        "through_p_star_fraction": d.through_p_star_fraction,
        "witnesses": d.transitivity_witnesses.len(),
        "sensitivity_passed": d.sensitivity.passed,
        "sensitivity_tested": d.sensitivity.tested,
    }))
}

pub fn sphere_decompose(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let s = cfg.scenario()?;
    let mut r = sphere_decomposition(&s.field, cfg.sphere_samples.samples, &cfg.sphere)?;
    let orbits = std::mem::take(&mut r.boundary_orbits);
    let mut csv = String::from("orbit,t,x,y\n");
    for (i, o) in orbits.iter().enumerate() {
        for smp in o.samples() {
            let _ = writeln!(csv, "{i},{:.17e},{:.17e},{:.17e}", smp.t, smp.p.x, smp.p.y);
        }
    }
    out.write("boundary_orbits.csv", &csv)?;
    let v = json!({ "scenario": scenario_json(&s), "options": cfg.sphere, "report": r });
    out.json("sphere.json", &v)?;
    Ok(json!({
        "m_h_bands": r.m_h_bands.len(),
        "m_h_sample_fraction": r.m_h_sample_fraction,
        "m_c_sample_fraction": r.m_c_sample_fraction,
        "m_s_sample_fraction": r.m_s_sample_fraction,
    }))
}
