//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use featbench::campaign_harness::adapter::BuiltinKind;
use featbench::campaign_harness::builtin::{builtin_random_fuzzer, Budget};
use featbench::campaign_harness::{run_matrix, CampaignResult, Fuzzer, MatrixConfig, Target};
use featbench::cli_config::{cmd_analyze, cmd_build, cmd_generate, cmd_validate, PipelineConfig};
use featbench::feature_model::{default_grid, FeatureFamily, Parameter, ProgramSpec};
use featbench::ground_truth::{analytic_probability, monte_carlo_probability, probability_f64, witness_input};
use featbench::stats_analysis::{correlate_parameter, spearman, spearman_rho, AnalysisOptions};
use featbench::target_exec::run_once;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MC_TRIALS: u64 = 1_000_000;
const MC_SEED: u64 = 0xACCE_5707;
const MC_SIGMAS: f64 = 3.0;
const SCALING_TRIALS: u64 = 20;
const SCALING_MIN_P: f64 = 1e-4;
const SCALING_FACTOR: f64 = 3.0;
const STUDY_TRIALS: u32 = 10;
const STUDY_TIMEOUT: Duration = Duration::from_secs(120);
const STUDY_SEED: u64 = 2020;

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, id: u32, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Result<String, String>) {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(msg), Some(l)) if elapsed > l => Err(format!("{msg}; took {elapsed:.1?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(msg) => println!("[PASS] {id} {title}: {msg} ({:.1}s)", elapsed.as_secs_f64()),
            Err(msg) => {
                self.failures += 1;
                println!("[FAIL] {id} {title}: {msg} ({:.1}s)", elapsed.as_secs_f64());
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pipeline(out: &Path) -> PipelineConfig {
    PipelineConfig { out: out.to_path_buf(), jobs: 4, ..PipelineConfig::default() }
        .resolve()
        .unwrap()
}

fn grid_targets(out: &Path, specs: &[&ProgramSpec]) -> Vec<Target> {
    specs
        .iter()
        .map(|s| Target {
            name: s.name(),
            binary: out.join("bin").join(s.name()),
            input_len: s.input_len(),
            bug_marker: featbench::program_generator::bug_marker(s),
        })
        .collect()
}

fn median_u64(v: &mut [u64]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

// Independent Spearman: counting ranks and a textbook Pearson.
fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (oracle_ranks(xs), oracle_ranks(ys));
    let n = xs.len() as f64;
    let (sx, sy): (f64, f64) = (rx.iter().sum(), ry.iter().sum());
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: f64 = rx.iter().map(|a| a * a).sum();
    let syy: f64 = ry.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

// Two-sided Student-t tail by Simpson integration of the density.
fn oracle_t_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 - 1e-15 {
        return 0.0;
    }
    let nu = (n - 2) as f64;
    let t = rho.abs() * (nu / (1.0 - rho * rho)).sqrt();
    // Gamma((nu+1)/2) / Gamma(nu/2) by recurrence from Gamma(1/2) and Gamma(1)
    let gamma_half = |k: usize| -> f64 {
        // Gamma(k/2)
        let (mut g, mut x) = if k.is_multiple_of(2) { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
        while x < k as f64 / 2.0 - 1e-9 {
            g *= x;
            x += 1.0;
        }
        g
    };
    let k = n - 2;
    let c = gamma_half(k + 1) / gamma_half(k) / (nu * std::f64::consts::PI).sqrt();
    let f = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let steps = 200_000;
    let h = t / steps as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..steps {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (1.0 - 2.0 * s * h / 3.0).clamp(0.0, 1.0)
}

fn main() {
    let mut suite = Suite { failures: 0 };
    let work = tempfile::tempdir().expect("temp dir");
    let out_a = work.path().join("a");
    let cfg_a = pipeline(&out_a);
    let grid = default_grid();

    suite.check(1, "grid fidelity", Some(Duration::from_secs(120)), || {
        let n = cmd_generate(&cfg_a).map_err(|e| e.to_string())?;
        ensure(n == 153, || format!("{n} programs"))?;
        let families: BTreeSet<FeatureFamily> = grid.iter().map(|s| s.family()).collect();
        ensure(families.len() == 7, || format!("{} families", families.len()))?;
        for p in Parameter::ALL {
            let values: BTreeSet<u64> = p.sweep(&grid).iter().filter_map(|s| p.value_of(s)).map(f64::to_bits).collect();
            let need = if p == Parameter::HasDataConstraint { 2 } else { 3 };
            ensure(values.len() >= need, || format!("{} sweeps {} values", p.label(), values.len()))?;
        }
        let built = cmd_build(&cfg_a).map_err(|e| e.to_string())?;
        ensure(built == 153, || format!("{built} compiled"))?;
        let report = std::fs::read_to_string(out_a.join("build_report.csv")).unwrap();
        ensure(!report.contains("error:"), || "compiler reported errors".into())?;
        Ok("153 programs, 7 families, 10 parameters swept, 153/153 compiled".into())
    });

    suite.check(2, "ground-truth soundness", Some(Duration::from_secs(120)), || {
        let mut ok = 0;
        for spec in &grid {
            let w = witness_input(spec).map_err(|e| format!("{spec}: {e}"))?;
            let out = run_once(&out_a.join("bin").join(spec.name()), &w, false).map_err(|e| e.to_string())?;
            ensure(out.confirms(&featbench::program_generator::bug_marker(spec)), || format!("{spec} not triggered"))?;
            ok += 1;
        }
        Ok(format!("{ok}/153 witnesses abort with the bug marker"))
    });

    suite.check(3, "probability law", Some(Duration::from_secs(600)), || {
        let dir = work.path().join("mc");
        let mut specs = Vec::new();
        for w in [2, 3] {
            for d in 1..=4 {
                for omega in [2, 4] {
                    specs.push(ProgramSpec::branch_tree(w, d, omega, 1).unwrap());
                }
            }
        }
        specs.extend(grid.iter().filter(|s| {
            matches!(s.family(), FeatureFamily::MagicBytes | FeatureFamily::Checksum)
                && analytic_probability(s).is_some_and(|p| probability_f64(&p) >= 1e-5)
        }));
        let targets = common::build(&specs, &dir);
        let mut worst = 0.0f64;
        for (spec, t) in specs.iter().zip(&targets) {
            let p = probability_f64(&analytic_probability(spec).unwrap());
            let est = monte_carlo_probability(&t.binary, spec, MC_TRIALS, MC_SEED).map_err(|e| e.to_string())?;
            let se = (p * (1.0 - p) / MC_TRIALS as f64).sqrt();
            let z = (est.estimate() - p).abs() / se;
            worst = worst.max(z);
            ensure(z <= MC_SIGMAS, || format!("{spec}: estimate {} vs {p} ({z:.2} SE)", est.estimate()))?;
        }
        Ok(format!("{} programs within {MC_SIGMAS} SE at 10^6 trials (max {worst:.2} SE)", specs.len()))
    });

    suite.check(4, "random-fuzzer scaling", Some(Duration::from_secs(300)), || {
        let mut checked = 0;
        let mut worst = 1.0f64;
        for spec in &grid {
            let p = probability_f64(&analytic_probability(spec).unwrap());
            if p < SCALING_MIN_P {
                continue;
            }
            let expected = std::f64::consts::LN_2 / p;
            let bin = out_a.join("bin").join(spec.name());
            let mut execs = Vec::new();
            for seed in 0..SCALING_TRIALS {
                let budget = Budget { max_execs: Some((200.0 / p) as u64 + 100), deadline: None };
                let o = builtin_random_fuzzer(&bin, spec.input_len(), seed, budget).map_err(|e| e.to_string())?;
                ensure(o.crash.is_some(), || format!("{spec} seed {seed}: no hit in {} execs", o.executions))?;
                execs.push(o.executions);
            }
            let med = median_u64(&mut execs);
            let ratio = (med / expected).max(expected / med);
            worst = worst.max(ratio);
            ensure(ratio <= SCALING_FACTOR, || format!("{spec}: median {med} vs ln2/p {expected:.1}"))?;
            checked += 1;
        }
        Ok(format!("{checked} targets with p >= 1e-4, worst ratio {worst:.2} (limit {SCALING_FACTOR})"))
    });

    suite.check(5, "spearman correctness", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let n = rng.random_range(5..60);
            let xs: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
            let ys: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
            let (Ok(rho), expected) = (spearman_rho(&xs, &ys), oracle_spearman(&xs, &ys)) else {
                ensure(oracle_spearman(&xs, &ys).is_nan(), || "degenerate mismatch".into())?;
                continue;
            };
            worst = worst.max((rho - expected).abs());
            ensure((rho - expected).abs() <= 1e-9, || format!("{rho} vs {expected}"))?;
            let stretched: Vec<f64> = xs.iter().map(|x| x.powi(3) + (x / 3.0).exp()).collect();
            let drift = (spearman_rho(&stretched, &ys).unwrap() - rho).abs();
            ensure(drift <= 1e-12, || format!("rank invariance drift {drift}"))?;
        }
        let c = spearman(&[1.0f64, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        ensure((c.rho - 0.8).abs() < 1e-12, || format!("hand case gave {}", c.rho))?;
        Ok(format!("100 tied vectors max |diff| {worst:.1e}, hand case 0.8, rank invariance holds"))
    });

    suite.check(6, "depth outweighs width", Some(Duration::from_secs(45 * 60)), || {
        let depth = Parameter::Depth.sweep(&grid);
        let width = Parameter::Width.sweep(&grid);
        let mut specs: Vec<&ProgramSpec> = depth.clone();
        specs.extend(width.iter().filter(|s| !depth.contains(s)));
        let targets = grid_targets(&out_a, &specs);
        let cfg = MatrixConfig {
            trials: STUDY_TRIALS,
            timeout: STUDY_TIMEOUT,
            max_execs: None,
            jobs: 1,
            base_seed: STUDY_SEED,
            results_path: work.path().join("study.csv"),
            work_dir: work.path().join("study-work"),
            crash_dir: work.path().join("study-crashes"),
            resume: false,
            cell_limit: None,
        };
        let outcome = run_matrix(&targets, &[Fuzzer::Builtin(BuiltinKind::Random)], &cfg).map_err(|e| e.to_string())?;
        ensure(outcome.failures.is_empty(), || format!("{:?}", outcome.failures))?;
        let opts = AnalysisOptions::default();
        let d = correlate_parameter(&outcome.results, &grid, "random", Parameter::Depth, opts).map_err(|e| e.to_string())?;
        let w = correlate_parameter(&outcome.results, &grid, "random", Parameter::Width, opts).map_err(|e| e.to_string())?;
        let (Some(dr), Some(dp)) = (d.rho, d.p_value) else { return Err("depth rho unavailable".into()) };
        let wr = w.rho.ok_or("width rho unavailable")?;
        let summary = format!("depth rho {dr:.3} (p {dp:.2e}), width rho {wr:.3}");
        ensure(dr >= 0.5 && dp < 0.05, || summary.clone())?;
        ensure(wr.abs() < dr, || summary.clone())?;
        Ok(summary)
    });

    suite.check(7, "report fidelity", None, || {
        let dir = work.path().join("report");
        let cfg = pipeline(&dir);
        cmd_generate(&cfg).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut results = Vec::new();
        let mut push = |program: String, fuzzer: &str, trial: u32, runtime: Option<f64>| {
            results.push(CampaignResult {
                program,
                fuzzer: fuzzer.into(),
                trial,
                seed: 0,
                completed: runtime.is_some(),
                runtime_s: runtime.unwrap_or(60.0),
                executions: None,
            });
        };
        for p in [Parameter::Depth, Parameter::Width] {
            for (i, spec) in p.sweep(&grid).into_iter().enumerate() {
                let v = p.value_of(spec).unwrap();
                let name = spec.name();
                for t in 0..4u32 {
                    let noise: f64 = rng.random_range(0.0..1.0);
                    push(name.clone(), "steady", t, Some(v * 2.0 + noise));
                    push(name.clone(), "noisy", t, Some(rng.random_range(0.0..10.0)));
                    push(name.clone(), "weak", t, Some(v + rng.random_range(0.0..6.0)));
                    push(name.clone(), "sparse", t, (t == 0 && i < 2).then_some(v));
                    push(name.clone(), "flat", t, (i == 1).then_some(noise));
                    push(name.clone(), "edge", t, (t == 0 && i < 5).then_some(v + noise));
                }
            }
        }
        let mut w = csv::Writer::from_path(dir.join("results.csv")).unwrap();
        for r in &results {
            w.serialize(r).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        cmd_analyze(&cfg).map_err(|e| e.to_string())?;
        let csv_text = std::fs::read_to_string(dir.join("report.csv")).unwrap();
        let md = std::fs::read_to_string(dir.join("report.md")).unwrap();
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let mut cells = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.unwrap();
            cells.insert((rec[0].to_string(), rec[1].to_string()), (rec[2].to_string(), rec[3].to_string()));
        }
        let (mut stars, mut hyphens, mut plain) = (0, 0, 0);
        let fuzzers = ["edge", "flat", "noisy", "sparse", "steady", "weak"];
        for fuzzer in fuzzers {
            for p in [Parameter::Width, Parameter::Depth] {
                let sweep: BTreeMap<String, f64> =
                    p.sweep(&grid).into_iter().map(|s| (s.name(), p.value_of(s).unwrap())).collect();
                let runs: Vec<&CampaignResult> =
                    results.iter().filter(|r| r.fuzzer == fuzzer && sweep.contains_key(&r.program)).collect();
                let done: Vec<&&CampaignResult> = runs.iter().filter(|r| r.completed).collect();
                let xs: Vec<f64> = done.iter().map(|r| sweep[&r.program]).collect();
                let ys: Vec<f64> = done.iter().map(|r| r.runtime_s).collect();
                let distinct: BTreeSet<u64> = xs.iter().map(|x| x.to_bits()).collect();
                let comp = format!("{:.2}", done.len() as f64 / runs.len() as f64);
                let expected_corr = if xs.len() < 5 || distinct.len() < 2 {
                    hyphens += 1;
                    "-".to_string()
                } else {
                    let rho = oracle_spearman(&xs, &ys);
                    let pv = oracle_t_p(rho, xs.len());
                    ensure((pv - 0.05).abs() > 1e-6, || format!("{fuzzer}/{} p too close to 0.05", p.label()))?;
                    if pv < 0.05 {
                        stars += 1;
                    } else {
                        plain += 1;
                    }
                    format!("{rho:.3}{}", if pv < 0.05 { "*" } else { "" })
                };
                let key = (fuzzer.to_string(), p.label().to_string());
                let got = cells.get(&key).ok_or_else(|| format!("missing {key:?}"))?;
                ensure(got == &(expected_corr.clone(), comp.clone()), || {
                    format!("{key:?}: got {got:?}, expected ({expected_corr}, {comp})")
                })?;
                let md_cell = format!(" {expected_corr} | {comp} |");
                let md_row = md.lines().find(|l| l.starts_with(&format!("| {fuzzer} |"))).unwrap_or("");
                ensure(md_row.contains(&md_cell), || format!("markdown row for {fuzzer} lacks {md_cell}"))?;
            }
        }
        ensure(stars > 0 && hyphens > 0 && plain > 0, || format!("{stars} stars, {hyphens} hyphens, {plain} plain"))?;
        Ok(format!("{stars} asterisks, {hyphens} hyphens, {plain} plain cells match the oracle"))
    });

    suite.check(8, "pipeline determinism", None, || {
        let out_b = work.path().join("b");
        let out_c = work.path().join("c");
        for out in [&out_b, &out_c] {
            let cfg = pipeline(out);
            cmd_generate(&cfg).map_err(|e| e.to_string())?;
            cmd_build(&cfg).map_err(|e| e.to_string())?;
            cmd_validate(&cfg).map_err(|e| e.to_string())?;
        }
        for file in ["grid.json", "targets.json", "validation.csv"] {
            let b = std::fs::read(out_b.join(file)).unwrap();
            let c = std::fs::read(out_c.join(file)).unwrap();
            ensure(b == c, || format!("{file} differs"))?;
        }
        let specs: Vec<&ProgramSpec> =
            grid.iter().filter(|s| Parameter::Depth.in_sweep(s) || Parameter::Weight.in_sweep(s)).collect();
        let targets = grid_targets(&out_b, &specs);
        let fuzzers = [Fuzzer::Builtin(BuiltinKind::Random), Fuzzer::Builtin(BuiltinKind::Marker)];
        let run = |jobs: usize, name: &str| {
            let cfg = MatrixConfig {
                trials: 3,
                timeout: Duration::from_secs(5),
                max_execs: Some(20_000),
                jobs,
                base_seed: 8,
                results_path: work.path().join(name),
                work_dir: work.path().join("det-work"),
                crash_dir: work.path().join("det-crashes"),
                resume: false,
                cell_limit: None,
            };
            run_matrix(&targets, &fuzzers, &cfg).map(|o| {
                o.results.iter().map(|r| (r.key(), r.completed)).collect::<Vec<_>>()
            })
        };
        let one = run(1, "jobs1.csv").map_err(|e| e.to_string())?;
        let four = run(4, "jobs4.csv").map_err(|e| e.to_string())?;
        ensure(one == four, || "jobs 1 and 4 disagree".into())?;
        Ok(format!(
            "manifests and validation CSVs byte-identical; {} matrix cells agree across jobs 1 and 4",
            one.len()
        ))
    });

    if suite.failures > 0 {
        println!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
