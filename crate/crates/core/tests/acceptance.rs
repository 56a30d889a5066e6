//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use freqsim::cli::RunConfig;
use freqsim::dual::{duality_check_many, generator_identity_residual};
use freqsim::ode::{
    find_equilibria, large_population_experiment, linear_case_closed_form, logistic_case_closed_form,
    EquilibriumReport, LimitParams, ModelFamily, Scaling,
};
use freqsim::simulate::{
    coupled_pair, moment_estimate, simulate_culled_frequency, simulate_culling_chain, Estimate, PathConfig, Recording,
    StopBand,
};
use freqsim::ModelParams;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn reference() -> ModelParams {
    let text = fs::read_to_string(configs_dir().join("reference.json")).unwrap();
    RunConfig::from_json(&text).unwrap().model
}

fn grid21() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

fn ac1() -> Verdict {
    let start = Instant::now();
    let residual = generator_identity_residual(&reference(), 1.0, 6, &grid21()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        residual <= 1e-9 && secs < 1.0,
        format!("max residual {residual:.3e} (tol 1e-9), {secs:.3}s (limit 1s)"),
    )
}

fn ac2() -> Verdict {
    let start = Instant::now();
    let mut notes = Vec::new();
    for (attempt, seed) in [2024u64, 2025].into_iter().enumerate() {
        let cfg = PathConfig::new(5e-4, 0.5, seed, 50_000).unwrap();
        let reports = duality_check_many(&reference(), 1.0, 0.6, &[1, 2, 3], &cfg).unwrap();
        let zs: Vec<String> = reports
            .iter()
            .map(|r| format!("n0={} z={:.2}", r.n0, r.z_score))
            .collect();
        notes.push(format!("seed {seed}: {}", zs.join(", ")));
        if reports.iter().all(|r| r.z_score <= 3.0) {
            let secs = start.elapsed().as_secs_f64();
            return verdict(
                secs < 300.0,
                format!("{} (attempt {}), {secs:.1}s", notes.join("; "), attempt + 1),
            );
        }
    }
    verdict(false, notes.join("; "))
}

fn ac3() -> Verdict {
    let p = reference();
    let (z, r0, horizon, n_paths) = (1.0, 0.6, 0.5, 10_000);
    let cfg = PathConfig::new(1e-3, horizon, 33, n_paths).unwrap();
    let band = StopBand::new(1e-6, 1e6).unwrap();
    let reference_paths = simulate_culled_frequency(&p, z, r0, &cfg, Recording::Final).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    let mut diffs: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for n in [4u32, 16, 64] {
        let chain = simulate_culling_chain(&p, z, r0, n, band, &cfg, Recording::Final).unwrap();
        for power in [1u32, 2] {
            let a = moment_estimate(&chain, horizon, power).unwrap();
            let b = moment_estimate(&reference_paths, horizon, power).unwrap();
            diffs
                .entry(power)
                .or_default()
                .push(((a.mean - b.mean).abs(), a.stderr.hypot(b.stderr)));
        }
    }
    for (power, d) in &diffs {
        for w in d.windows(2) {
            let tol = 2.0 * w[0].1.hypot(w[1].1);
            pass &= w[1].0 <= w[0].0 + tol;
        }
        let shown: Vec<String> = d.iter().map(|(x, se)| format!("{x:.4}±{se:.4}")).collect();
        detail.push(format!("f=r^{power}: |diff| over n=4,16,64: {}", shown.join(" ")));
    }
    verdict(pass, detail.join("; "))
}

fn ac4() -> Verdict {
    let family = ModelFamily::new(reference(), Scaling::Linear).unwrap();
    let cfg = PathConfig::new(1e-3, 1.0, 44, 1000).unwrap();
    let rows = large_population_experiment(&family, 0.6, &[10.0, 100.0, 1000.0], &cfg).unwrap();
    let e: Vec<Estimate> = rows.iter().map(|r| r.sup_sq).collect();
    let decreasing = e
        .windows(2)
        .all(|w| w[0].mean - w[1].mean > 2.0 * w[0].stderr.hypot(w[1].stderr));
    let ratio = e[2].mean / e[0].mean;
    let shown: Vec<String> = rows
        .iter()
        .map(|r| format!("z={}: {:.3e}±{:.1e}", r.z, r.sup_sq.mean, r.sup_sq.stderr))
        .collect();
    verdict(
        decreasing && ratio <= 0.25,
        format!("{}; ratio z=1000/z=10 {ratio:.4} (limit 0.25)", shown.join(", ")),
    )
}

fn agree(a: &EquilibriumReport, b: &EquilibriumReport) -> bool {
    a.degenerate == b.degenerate
        && a.equilibria.len() == b.equilibria.len()
        && a.equilibria
            .iter()
            .zip(&b.equilibria)
            .all(|(x, y)| (x.location - y.location).abs() <= 1e-8 && x.stability == y.stability)
}

fn ac5() -> Verdict {
    let start = Instant::now();
    let cases = [
        ("1a", (-1.0, 0.0, 0.0)),
        ("1b", (1.0, 0.0, 0.0)),
        ("1c", (-0.5, 0.0, 1.0)),
        ("1d", (0.5, 1.0, 0.0)),
        ("1e", (1.0, 0.0, 0.5)),
        ("1f", (-1.0, 0.5, 0.0)),
        ("1g", (0.3, 1.0, 2.0)),
        ("2a", (-1.0, 0.0, 1.0)),
        ("2b", (1.0, 1.0, 0.0)),
        ("2c", (0.0, 1.0, 1.0)),
    ];
    let mut bad = Vec::new();
    for (label, (d1, d2, d3)) in cases {
        let closed = linear_case_closed_form(d1, d2, d3);
        let numeric = find_equilibria(&LimitParams::linear(d1, d2, d3));
        if closed.case_label.as_deref() != Some(label) || !agree(&closed, &numeric) {
            bad.push(label);
        }
    }
    let symmetric = find_equilibria(&LimitParams::linear(0.0, 1.0, 1.0));
    let interior: Vec<_> = symmetric.interior().collect();
    let closed_sym = linear_case_closed_form(0.0, 1.0, 1.0);
    let sym_ok = interior.len() == 1
        && (interior[0].location - 0.5).abs() <= 1e-8
        && interior[0].stability.as_str() == "stable"
        && closed_sym.interior().any(|e| e.location == 0.5);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        bad.is_empty() && sym_ok && secs < 1.0,
        format!(
            "10 cases, mismatches {:?}; symmetric root {} {}; {secs:.3}s",
            bad,
            interior.first().map_or(f64::NAN, |e| e.location),
            interior.first().map_or("none", |e| e.stability.as_str()),
        ),
    )
}

fn ac6() -> Verdict {
    let interior = |d1: f64, d2: f64| {
        let numeric = find_equilibria(&LimitParams::logistic(d1, d2));
        let closed = logistic_case_closed_form(d1, d2);
        let found: Vec<(f64, &'static str)> = numeric.interior().map(|e| (e.location, e.stability.as_str())).collect();
        (found, agree(&numeric, &closed))
    };
    let (stable, a1) = interior(-2.0, -1.5);
    let (unstable, a2) = interior(2.0, 1.5);
    let mut none_ok = true;
    for (d1, d2) in [(1.0, 1.5), (-1.0, -1.5), (1.0, 1.0), (0.5, -2.0)] {
        let (found, a) = interior(d1, d2);
        none_ok &= found.is_empty() && a;
    }
    let is = |v: &[(f64, &str)], s: &str| v.len() == 1 && (v[0].0 - 0.75).abs() <= 1e-8 && v[0].1 == s;
    verdict(
        is(&stable, "stable") && is(&unstable, "unstable") && none_ok && a1 && a2,
        format!("(-2,-1.5) -> {stable:?}; (2,1.5) -> {unstable:?}; |d1|<=|d2| none: {none_ok}"),
    )
}

fn ac7() -> Verdict {
    let p = reference();
    let run = |dt: f64| {
        let cfg = PathConfig::new(dt, 1.0, 77, 1000).unwrap();
        let paths = simulate_culled_frequency(&p, 1.0, 0.6, &cfg, Recording::Final).unwrap();
        let exits: usize = paths.iter().map(|q| q.jump_exits).sum();
        let clamps: usize = paths.iter().map(|q| q.clamp_count()).sum();
        let overshoot = paths.iter().map(|q| q.max_overshoot()).fold(0.0, f64::max);
        (exits, clamps, overshoot)
    };
    let (e1, c1, o1) = run(1e-3);
    let (e2, c2, o2) = run(2.5e-4);
    let shrink = o1 == 0.0 || o2 <= o1 / 2.0;
    verdict(
        e1 == 0 && e2 == 0 && o1 <= 1e-2 && shrink,
        format!(
            "jump exits {e1}/{e2}; dt=1e-3: {c1} clamps, max overshoot {o1:.3e}; dt=2.5e-4: {c2} clamps, max overshoot {o2:.3e}"
        ),
    )
}

fn ac8() -> Verdict {
    let p = reference();
    let cfg = PathConfig::new(1e-3, 0.5, 88, 10_000).unwrap();
    let mut ks = Vec::new();
    for gap in [0.2, 0.1, 0.05] {
        let (r, s) = (0.5 + gap / 2.0, 0.5 - gap / 2.0);
        let pairs = coupled_pair(&p, 1.0, r, s, &cfg, Recording::Final).unwrap();
        let e = Estimate::from_samples(pairs.iter().map(|(a, b)| (a.final_value() - b.final_value()).abs())).unwrap();
        ks.push(e.mean / gap);
    }
    let max = ks.iter().copied().fold(f64::MIN, f64::max);
    let min = ks.iter().copied().fold(f64::MAX, f64::min);
    verdict(
        min > 0.0 && max / min <= 2.0,
        format!("K over gaps 0.2,0.1,0.05: {ks:.4?}; max/min {:.3}", max / min),
    )
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn ac9() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_freqsim");
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let path = tmp.path().join(name);
        fs::write(&path, body).unwrap();
        path
    };
    let model = fs::read_to_string(configs_dir().join("reference.json")).unwrap();
    let model: serde_json::Value = serde_json::from_str(&model).unwrap();
    let model = model["model"].to_string();
    let runs: Vec<(&str, PathBuf)> = vec![
        (
            "simulate",
            write(
                "freq.json",
                &format!(
                    r#"{{"model": {model}, "r0": 0.6, "path": {{"dt": 0.01, "horizon": 1, "n_paths": 40, "record": "full"}}}}"#
                ),
            ),
        ),
        (
            "simulate",
            write(
                "cbi.json",
                &format!(
                    r#"{{"model": {model}, "target": "cbi", "z": 2, "path": {{"dt": 0.01, "horizon": 1, "n_paths": 20}}}}"#
                ),
            ),
        ),
        (
            "simulate",
            write(
                "cull.json",
                &format!(
                    r#"{{"model": {model}, "target": "culling", "culling": {{"n": 8}}, "path": {{"dt": 0.01, "horizon": 1, "n_paths": 20}}}}"#
                ),
            ),
        ),
        (
            "duality",
            write(
                "dual.json",
                &format!(
                    r#"{{"model": {model}, "r0": 0.6, "path": {{"dt": 0.005, "n_paths": 500}}, "dual": {{"n0_list": [1, 2]}}}}"#
                ),
            ),
        ),
        ("dual-rates", write("rates.json", &format!(r#"{{"model": {model}}}"#))),
        (
            "ode",
            write(
                "ode.json",
                &format!(
                    r#"{{"model": {model}, "path": {{"dt": 0.01, "n_paths": 50}}, "ode": {{"z_list": [10, 100], "run_convergence": true}}}}"#
                ),
            ),
        ),
        (
            "converge-cull",
            write(
                "cc.json",
                &format!(
                    r#"{{"model": {model}, "path": {{"dt": 0.01, "horizon": 0.5, "n_paths": 50}}, "culling": {{"n_list": [2, 8]}}}}"#
                ),
            ),
        ),
    ];
    let mut failures = Vec::new();
    for (i, (cmd, config)) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "4", "4"].into_iter().enumerate() {
            // same directory each time: it is part of the echoed config
            let out = tmp.path().join(format!("run{i}"));
            if k > 0 {
                fs::remove_dir_all(&out).unwrap();
            }
            let status = Command::new(bin)
                .arg(cmd)
                .arg("--config")
                .arg(config)
                .args(["--seed", "123", "--threads", threads, "--out"])
                .arg(&out)
                .output()
                .unwrap();
            if !status.status.success() {
                failures.push(format!("{cmd} exited {:?}", status.status.code()));
            }
            outputs.push(read_dir_bytes(&out));
        }
        if outputs[0].is_empty() || outputs.windows(2).any(|w| w[0] != w[1]) {
            failures.push(format!(
                "{cmd} ({}) differs",
                config.file_name().unwrap().to_string_lossy()
            ));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{} runs x 3 (threads 1,4,4) byte-identical; failures {failures:?}",
            runs.len()
        ),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("AC1", "generator-dual identity", ac1),
        ("AC2", "Monte Carlo moment duality", ac2),
        ("AC3", "culling convergence", ac3),
        ("AC4", "large-population limit", ac4),
        ("AC5", "linear equilibrium table", ac5),
        ("AC6", "logistic equilibria", ac6),
        ("AC7", "range invariant", ac7),
        ("AC8", "Lipschitz in the initial condition", ac8),
        ("AC9", "CLI determinism", ac9),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let v = check();
        println!("{id} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
