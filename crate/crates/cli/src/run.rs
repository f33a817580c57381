//! Command execution.

use serde::Serialize;
use stability_lab::anticoncentration::{
    random_distribution, rademacher_moment_check, rademacher_tail_exact, verify_paley_zygmund,
    RADEMACHER_TAIL_BOUND,
};
use stability_lab::certify::{
    certify_boundedness, certify_stability_exhaustive, certify_stability_random, SearchMode,
    CERTIFICATE_TOLERANCE,
};
use stability_lab::experiment::{estimate_probabilities, run_trial_seeded, ExperimentReport};
use stability_lab::rng::stream;
use stability_lab::{ConstructionParams, LabError};

use crate::config::{Command, OutputFormat, RunConfig};
use crate::report::{fmt_g12, render_svg, rows_to_csv, to_json, write_atomic, SweepRow, BOUND_3_64};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

/// Margin, in standard errors, for the one-sided frequency checks.
pub const FREQ_SIGMAS: f64 = 5.0;

/// Default upper end of the exact Rademacher tail sweep.
pub const VERIFY_MAX_N: usize = 10_000;

const PZ_DISTRIBUTIONS: usize = 1_000;
const PZ_THETAS: [f64; 5] = [0.0, 0.25, 0.5, 0.9, 1.0];
const MOMENT_NS: [usize; 3] = [1, 10, 100];

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    /// Data written to stdout when no output path is configured.
    pub stdout: String,
    /// Human-readable progress and failure lines, meant for stderr.
    pub messages: Vec<String>,
}

struct Ctx<'a> {
    config: &'a RunConfig,
    messages: Vec<String>,
    violated: bool,
}

impl Ctx<'_> {
    fn note(&mut self, msg: impl Into<String>) {
        self.messages.push(msg.into());
    }

    fn violation(&mut self, what: impl Into<String>, repro: String) {
        self.violated = true;
        self.messages.push(format!("VIOLATION: {}", what.into()));
        self.messages.push(format!("  reproduce: {repro}"));
    }
}

/// Runs one command, on a dedicated pool when a worker cap is set.
pub fn run(config: &RunConfig) -> Outcome {
    match config.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| run_inner(config)),
            Err(e) => Outcome {
                exit_code: EXIT_USAGE,
                stdout: String::new(),
                messages: vec![format!("cannot start {t} workers: {e}")],
            },
        },
        None => run_inner(config),
    }
}

fn run_inner(config: &RunConfig) -> Outcome {
    let mut ctx = Ctx {
        config,
        messages: Vec::new(),
        violated: false,
    };
    let data = match config.command {
        Command::VerifyLemmas => verify_lemmas(&mut ctx),
        Command::Certify => certify(&mut ctx),
        Command::Trial => trial(&mut ctx),
        Command::Estimate | Command::Sweep => sweep(&mut ctx),
    };
    let mut exit_code = if ctx.violated { EXIT_VIOLATION } else { EXIT_OK };
    let data = match data {
        Ok(d) => d,
        Err(msg) => {
            ctx.note(msg);
            return Outcome {
                exit_code: EXIT_USAGE,
                stdout: String::new(),
                messages: ctx.messages,
            };
        }
    };
    let mut stdout = String::new();
    match &config.output_path {
        Some(path) => {
            if let Err(e) = write_atomic(path, data.as_bytes()) {
                ctx.note(format!("cannot write {}: {e}", path.display()));
                exit_code = EXIT_USAGE;
            }
        }
        None => stdout = data,
    }
    Outcome {
        exit_code,
        stdout,
        messages: ctx.messages,
    }
}

fn params_for(n: usize, gamma: f64, l: f64) -> Result<ConstructionParams, String> {
    ConstructionParams::new(n, gamma, l).map_err(|e| e.to_string())
}

fn emit<T: Serialize>(rows: &[T], format: OutputFormat, csv: impl FnOnce(&[T]) -> String) -> String {
    match format {
        OutputFormat::Csv => csv(rows),
        OutputFormat::Json => to_json(rows),
    }
}

#[derive(Debug, Serialize)]
struct VerifyRow {
    check: &'static str,
    n: usize,
    value: f64,
    bound: f64,
    ok: bool,
}

fn verify_lemmas(ctx: &mut Ctx) -> Result<String, String> {
    use rayon::prelude::*;
    let config = ctx.config;
    let max_n = config.n_values.iter().copied().max().unwrap_or(VERIFY_MAX_N);
    let mut rows = Vec::new();

    let tails: Vec<_> = (1..=max_n)
        .into_par_iter()
        .map(rademacher_tail_exact)
        .collect::<Result<_, LabError>>()
        .map_err(|e| e.to_string())?;
    let worst = tails
        .iter()
        .min_by(|a, b| a.exact_tail.total_cmp(&b.exact_tail))
        .expect("at least one n");
    let failures: Vec<usize> = tails.iter().filter(|t| !t.satisfied).map(|t| t.n).collect();
    ctx.note(format!(
        "exact Rademacher tail over n in [1, {max_n}]: min {} at n={} (bound 3/32 = {})",
        fmt_g12(worst.exact_tail),
        worst.n,
        fmt_g12(RADEMACHER_TAIL_BOUND)
    ));
    for &n in &failures {
        ctx.violation(
            format!("exact tail below 3/32 at n={n}"),
            format!("stability-lab verify-lemmas --n {n}"),
        );
    }
    rows.push(VerifyRow {
        check: "rademacher_tail_min",
        n: worst.n,
        value: worst.exact_tail,
        bound: RADEMACHER_TAIL_BOUND,
        ok: failures.is_empty(),
    });

    let mut rng = stream(config.master_seed);
    let mut pz_fail = 0usize;
    let mut pz_min_slack = f64::INFINITY;
    for _ in 0..PZ_DISTRIBUTIONS {
        let dist = random_distribution(16, &mut rng);
        for theta in PZ_THETAS {
            let w = verify_paley_zygmund(&dist, theta).map_err(|e| e.to_string())?;
            pz_min_slack = pz_min_slack.min(w.tail - w.bound);
            if !w.satisfied {
                pz_fail += 1;
            }
        }
    }
    if pz_fail > 0 {
        ctx.violation(
            format!("{pz_fail} Paley-Zygmund checks failed"),
            config.reproduction(),
        );
    }
    ctx.note(format!(
        "Paley-Zygmund: {} checks, min slack {}",
        PZ_DISTRIBUTIONS * PZ_THETAS.len(),
        fmt_g12(pz_min_slack)
    ));
    rows.push(VerifyRow {
        check: "paley_zygmund_min_slack",
        n: 0,
        value: pz_min_slack,
        bound: 0.0,
        ok: pz_fail == 0,
    });

    let trials = config.trials.max(10_000);
    for n in MOMENT_NS {
        let m = rademacher_moment_check(n, trials, &mut rng).map_err(|e| e.to_string())?;
        let ok = m.within(FREQ_SIGMAS);
        if !ok {
            ctx.violation(
                format!("moment check at n={n}: z(S^2)={:.2}, z(S^4)={:.2}", m.z_s2, m.z_s4),
                config.reproduction(),
            );
        }
        ctx.note(format!(
            "moments n={n}: E[S^2] {} (target {}), E[S^4] {} (target {})",
            fmt_g12(m.mean_s2),
            fmt_g12(m.target_s2),
            fmt_g12(m.mean_s4),
            fmt_g12(m.target_s4)
        ));
        rows.push(VerifyRow { check: "moment_s2_z", n, value: m.z_s2, bound: FREQ_SIGMAS, ok: m.z_s2.abs() <= FREQ_SIGMAS });
        rows.push(VerifyRow { check: "moment_s4_z", n, value: m.z_s4, bound: FREQ_SIGMAS, ok: m.z_s4.abs() <= FREQ_SIGMAS });
    }

    Ok(emit(&rows, config.output_format, |rows| {
        let mut s = String::from("check,n,value,bound,ok\n");
        for r in rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.check, r.n, fmt_g12(r.value), fmt_g12(r.bound), r.ok));
        }
        s
    }))
}

#[derive(Debug, Serialize)]
struct CertifyRow {
    n: usize,
    gamma: f64,
    l: f64,
    mode: SearchMode,
    supremum_found: f64,
    budget_inspected: u64,
    stability_ok: bool,
    loss_max: f64,
    loss_ok: bool,
}

fn certify(ctx: &mut Ctx) -> Result<String, String> {
    let config = ctx.config;
    let mut rows = Vec::new();
    for (n, gamma, l) in config.resolved().map_err(|e| e.to_string())? {
        let params = params_for(n, gamma, l)?;
        let cert = match certify_stability_exhaustive(&params) {
            Ok(c) => c,
            Err(LabError::TooLargeToEnumerate { .. }) => {
                certify_stability_random(&params, config.trials, &mut stream(config.master_seed))
                    .map_err(|e| e.to_string())?
            }
            Err(e) => return Err(e.to_string()),
        };
        let loss_max = certify_boundedness(&params);
        let stability_ok = cert.within(gamma);
        let loss_ok = loss_max <= l + CERTIFICATE_TOLERANCE;
        let repro = format!(
            "stability-lab certify --n {n} --gamma {gamma} --l {l} --trials {} --seed {}",
            config.trials, config.master_seed
        );
        if !stability_ok {
            ctx.violation(
                format!("n={n}: stability supremum {} exceeds gamma {gamma}; witness {:?}", cert.supremum_found, cert.witness),
                repro.clone(),
            );
        }
        if !loss_ok {
            ctx.violation(format!("n={n}: loss maximum {loss_max} exceeds L {l}"), repro);
        }
        ctx.note(format!(
            "n={n}: {:?} stability supremum {} (gamma {}), loss max {} (L {})",
            cert.mode,
            fmt_g12(cert.supremum_found),
            fmt_g12(gamma),
            fmt_g12(loss_max),
            fmt_g12(l)
        ));
        rows.push(CertifyRow {
            n,
            gamma,
            l,
            mode: cert.mode,
            supremum_found: cert.supremum_found,
            budget_inspected: cert.budget_inspected,
            stability_ok,
            loss_max,
            loss_ok,
        });
    }
    Ok(emit(&rows, config.output_format, |rows| {
        let mut s = String::from("n,gamma,l,mode,supremum_found,budget_inspected,stability_ok,loss_max,loss_ok\n");
        for r in rows {
            let mode = match r.mode {
                SearchMode::Exhaustive => "exhaustive",
                SearchMode::Randomized => "randomized",
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.n,
                fmt_g12(r.gamma),
                fmt_g12(r.l),
                mode,
                fmt_g12(r.supremum_found),
                r.budget_inspected,
                r.stability_ok,
                fmt_g12(r.loss_max),
                r.loss_ok
            ));
        }
        s
    }))
}

#[derive(Debug, Serialize)]
struct TrialRow {
    n: usize,
    gamma: f64,
    l: f64,
    seed: u64,
    gap: f64,
    e1: bool,
    e2: bool,
    gap_event: bool,
    sigma_sum: u64,
    threshold: f64,
}

fn trial(ctx: &mut Ctx) -> Result<String, String> {
    let config = ctx.config;
    let (n, gamma, l) = config.resolved().map_err(|e| e.to_string())?[0];
    let params = params_for(n, gamma, l)?;
    let t = match run_trial_seeded(&params, config.master_seed) {
        Ok(t) => t,
        Err(e @ LabError::InvariantViolation { .. }) => {
            ctx.violation(e.to_string(), config.reproduction());
            return Ok(String::new());
        }
        Err(e) => return Err(e.to_string()),
    };
    let row = TrialRow {
        n,
        gamma,
        l,
        seed: config.master_seed,
        gap: t.gap,
        e1: t.e1,
        e2: t.e2,
        gap_event: t.gap_event,
        sigma_sum: t.sigma_sum,
        threshold: params.gap_threshold(),
    };
    Ok(match config.output_format {
        OutputFormat::Json => to_json(&row),
        OutputFormat::Csv => format!(
            "n,gamma,l,seed,gap,e1,e2,gap_event,sigma_sum,threshold\n{},{},{},{},{},{},{},{},{},{}\n",
            row.n,
            fmt_g12(row.gamma),
            fmt_g12(row.l),
            row.seed,
            fmt_g12(row.gap),
            row.e1,
            row.e2,
            row.gap_event,
            row.sigma_sum,
            fmt_g12(row.threshold)
        ),
    })
}

fn check_report(ctx: &mut Ctx, r: &ExperimentReport) {
    let repro = format!(
        "stability-lab estimate --n {} --gamma {} --l {} --trials {} --seed {}",
        r.n, r.gamma, r.l, r.trials, r.seed
    );
    let checks = [
        ("P(gap event)", &r.gap_event, BOUND_3_64),
        ("P(E2)", &r.e2, RADEMACHER_TAIL_BOUND),
        ("P(E1 | E2)", &r.e1_given_e2, 0.5),
    ];
    for (name, p, floor) in checks {
        if !p.at_least(floor, FREQ_SIGMAS) {
            ctx.violation(
                format!(
                    "n={}: {name} = {} below {} - {FREQ_SIGMAS} stderr",
                    r.n,
                    fmt_g12(p.freq),
                    fmt_g12(floor)
                ),
                repro.clone(),
            );
        }
    }
}

fn sweep(ctx: &mut Ctx) -> Result<String, String> {
    let config = ctx.config;
    let mut rows = Vec::new();
    for (n, gamma, l) in config.resolved().map_err(|e| e.to_string())? {
        let params = params_for(n, gamma, l)?;
        let report = match estimate_probabilities(&params, config.trials, config.master_seed) {
            Ok(r) => r,
            Err(LabError::InvariantViolation { seed, detail }) => {
                let repro = match seed {
                    Some(s) => format!("stability-lab trial --n {n} --gamma {gamma} --l {l} --seed {s}"),
                    None => config.reproduction(),
                };
                ctx.violation(format!("n={n}: {detail}"), repro);
                continue;
            }
            Err(e) => return Err(e.to_string()),
        };
        ctx.note(format!(
            "n={n} gamma={} L={}: P(gap event) {} [{}, {}], P(E1) {}, P(E2) {}, P(E1|E2) {}, mean gap {} (threshold {})",
            fmt_g12(gamma),
            fmt_g12(l),
            fmt_g12(report.gap_event.freq),
            fmt_g12(report.gap_event.ci_lo),
            fmt_g12(report.gap_event.ci_hi),
            fmt_g12(report.e1.freq),
            fmt_g12(report.e2.freq),
            fmt_g12(report.e1_given_e2.freq),
            fmt_g12(report.mean_gap),
            fmt_g12(report.threshold)
        ));
        check_report(ctx, &report);
        rows.push(SweepRow::from(&report));
    }
    if let Some(path) = &config.plot {
        if let Err(e) = write_atomic(path, render_svg(&rows).as_bytes()) {
            return Err(format!("cannot write {}: {e}", path.display()));
        }
    }
    Ok(emit(&rows, config.output_format, rows_to_csv))
}
