//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a nonzero status if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfdr::agent::{best_drift_effort, best_vol_effort, f0, f0_branch_value, h_drift, h_vol, reservation, F0Branch};
use mfdr::cli::{execute, Cli};
use mfdr::mfsim::{
    contract_payoffs, law_indexed_payoffs, simulate, verify_participation, verify_principal_value, ConditionalMean,
    SimConfig,
};
use mfdr::model::{calibrated_defaults, validate, ModelParams, ValidatedParams};
use mfdr::numerics::TimeGrid;
use mfdr::principal::{compare, optimal_schedule, value_report, ContractKind, PrincipalKind};

const GRID: usize = 1024;

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

fn calibrated(share: f64, r_p: f64) -> ValidatedParams {
    let mut m = calibrated_defaults(share).unwrap();
    m.r_p = r_p;
    validate(m).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Brute-force minimum of `f` on `n + 1` uniform points of `[lo, hi]`,
/// refined by the vertex of the parabola through the best point and its
/// neighbours.
fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let h = (hi - lo) / n as f64;
    let x = |i: usize| if i == n { hi } else { lo + h * i as f64 };
    let (mut best_i, mut best_f) = (0, f(lo));
    for i in 1..=n {
        let v = f(x(i));
        if v < best_f {
            best_i = i;
            best_f = v;
        }
    }
    if best_i == 0 || best_i == n {
        return (x(best_i), best_f);
    }
    let (fm, fp) = (f(x(best_i - 1)), f(x(best_i + 1)));
    let curv = fp - 2.0 * best_f + fm;
    if curv > 0.0 {
        let xv = (x(best_i) - 0.5 * h * (fp - fm) / curv).clamp(lo, hi);
        let fv = f(xv);
        if fv <= best_f {
            return (xv, fv);
        }
    }
    (x(best_i), best_f)
}

fn random_params(rng: &mut ChaCha8Rng) -> ValidatedParams {
    let d = rng.gen_range(1..=3);
    let log_u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| 10f64.powf(rng.gen_range(lo..hi));
    let m = ModelParams {
        d,
        rho: (0..d).map(|_| log_u(rng, -5.0, -3.0)).collect(),
        lambda: (0..d).map(|_| log_u(rng, -3.0, 0.0)).collect(),
        eta: (0..d).map(|_| rng.gen_range(1.0..3.0)).collect(),
        sigma: (0..d).map(|_| rng.gen_range(0.01..0.2)).collect(),
        sigma_circ: rng.gen_range(0.0..0.1),
        a_max: rng.gen_range(10.0..500.0),
        b_min: rng.gen_range(0.005..0.2),
        r_a: log_u(rng, -4.0, -2.0),
        r_p: rng.gen_range(0.0..1e-2),
        theta: rng.gen_range(0.0..1e-2),
        horizon: rng.gen_range(1.0..10.0),
        x0: 0.0,
        delta: rng.gen_range(-100.0..100.0),
        kappa: rng.gen_range(0.0..20.0),
    };
    validate(m).unwrap()
}

fn vol_cost_k(b: f64, k: usize, p: &ValidatedParams) -> f64 {
    let (s, l, e) = (p.sigma[k], p.lambda[k], p.eta[k]);
    s * s / (l * e) * (b.powf(-e) - 1.0)
}

#[allow(clippy::needless_range_loop)]
fn criterion_1() -> Verdict {
    const POINTS: usize = 100_000;
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0_f64; 5];
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let lam_min = p.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        for _ in 0..3 {
            let z = rng.gen_range(-1.5 * p.a_max..0.5 * p.a_max);
            let a = best_drift_effort(z, &p);
            let mut hd = 0.0;
            for k in 0..p.d {
                let cap = p.rho[k] * p.a_max;
                let (am, fm) = grid_min(|x| 2.0 * z * x + x * x / p.rho[k], 0.0, cap, POINTS);
                worst[0] = worst[0].max((am - a[k]).abs() / a[k].abs().max(cap));
                hd -= fm;
            }
            worst[3] = worst[3].max(rel(hd, h_drift(z, &p)));
        }
        for j in 0..6 {
            // Spread q over the no-effort, interior and floor regimes; one positive gamma.
            let gamma = if j == 0 {
                rng.gen_range(0.0..10.0)
            } else {
                -10f64.powf(rng.gen_range(-1.0..4.0)) / lam_min
            };
            let q = -gamma;
            let b = best_vol_effort(gamma, &p);
            let (mut f0_bf, mut hv) = (0.0, 0.0);
            for k in 0..p.d {
                let s2 = p.sigma[k] * p.sigma[k];
                let obj = |x: f64| vol_cost_k(x, k, &p) + q * s2 * x;
                let (bm, fm) = grid_min(obj, p.b_min, 1.0, POINTS);
                worst[1] = worst[1].max((bm - b[k]).abs() / b[k]);
                f0_bf += fm;
                hv -= fm;
            }
            if q >= 0.0 {
                worst[2] = worst[2].max(rel(f0_bf, f0(q, &p).unwrap()));
            }
            worst[4] = worst[4].max(rel(hv, h_vol(gamma, &p)));
        }
    }
    verdict(
        worst.iter().all(|w| *w <= TOL),
        format!(
            "max rel err a* {:.1e}, b* {:.1e}, F0 {:.1e}, H_d {:.1e}, H_v {:.1e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sets = vec![calibrated(0.5, 6e-3)];
    sets.extend((0..20).map(|_| random_params(&mut rng)));
    let (mut worst_i, mut worst_f) = (0.0_f64, 0.0_f64);
    for p in &sets {
        for k in 0..p.d {
            let q1 = 1.0 / p.lambda[k];
            let a = f0_branch_value(F0Branch::NoEffort, q1, k, p);
            let b = f0_branch_value(F0Branch::Interior, q1, k, p);
            worst_i = worst_i.max(rel(a, b));
            let q2 = p.b_min.powf(-(p.eta[k] + 1.0)) / p.lambda[k];
            let c = f0_branch_value(F0Branch::Interior, q2, k, p);
            let e = f0_branch_value(F0Branch::Floor, q2, k, p);
            worst_f = worst_f.max(rel(c, e));
        }
    }
    verdict(
        worst_i <= 1e-12,
        format!("no-effort/interior gap {worst_i:.1e}, interior/floor gap {worst_f:.1e} (tol 1e-12)"),
    )
}

fn criterion_3() -> Verdict {
    let p = calibrated(0.5, 6e-3);
    let r = reservation(&p, GRID).unwrap();
    let t = p.horizon;
    let closed = -(p.r_a * p.kappa * p.kappa * 0.085 * 0.085 / 2.0) * t * t * t / 3.0;
    let err = rel(r.psi0_t, closed);
    let beta_one = r.beta0.iter().flatten().all(|&b| b == 1.0);
    verdict(
        err <= 1e-8 && beta_one,
        format!(
            "psi0(T) {:.10} vs {:.10}, rel err {err:.1e}; beta0 == 1: {beta_one}",
            r.psi0_t, closed
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut worst_v = 0.0_f64;
    let mut worst_s = 0.0_f64;
    for r_p in [6e-3, 0.0] {
        let p = calibrated(0.0, r_p);
        let grid = TimeGrid::uniform(p.horizon, GRID).unwrap();
        let principal = PrincipalKind::for_params(&p);
        let n = value_report(ContractKind::New, principal, &p, &grid).unwrap();
        let c = value_report(ContractKind::Classical, principal, &p, &grid).unwrap();
        worst_v = worst_v.max(rel(n.v0, c.v0));
        let (sn, en) = optimal_schedule(ContractKind::New, principal, &p, &grid).unwrap();
        let (sc, ec) = optimal_schedule(ContractKind::Classical, principal, &p, &grid).unwrap();
        for i in 0..sn.times.len() {
            worst_s = worst_s.max(rel(sn.z[i], sc.z[i])).max(rel(sn.gamma[i], sc.gamma[i]));
            for k in 0..p.d {
                worst_s = worst_s
                    .max(rel(en.alpha[i][k], ec.alpha[i][k]))
                    .max(rel(en.beta[i][k], ec.beta[i][k]));
            }
        }
    }
    verdict(
        worst_v <= 1e-10 && worst_s <= 1e-8,
        format!("value rel gap {worst_v:.1e} (tol 1e-10); schedule rel gap (z, gamma, efforts) {worst_s:.1e}"),
    )
}

fn criterion_5() -> Verdict {
    let mut worst = 0.0_f64;
    for kind in [ContractKind::New, ContractKind::Classical] {
        let pc = calibrated(0.5, 1e-6);
        let pn = calibrated(0.5, 0.0);
        let grid = TimeGrid::uniform(pc.horizon, GRID).unwrap();
        let vc = value_report(kind, PrincipalKind::Cara, &pc, &grid).unwrap().v0;
        let vn = value_report(kind, PrincipalKind::RiskNeutral, &pn, &grid).unwrap().v0;
        worst = worst.max(((1.0 + vc) / 1e-6 - vn).abs() / vn.abs());
    }
    verdict(
        worst <= 1e-3,
        format!("|(1+V)/R_P - V0| / |V0| = {worst:.2e} (tol 1e-3)"),
    )
}

fn criterion_6() -> Verdict {
    let shares = [0.0, 0.25, 0.5, 0.75, 1.0];
    let rps = [0.0, 3e-3, 6e-3, 1.2e-2, 3e-2];
    let mut failures = Vec::new();
    for &r_p in &rps {
        for &share in &shares {
            let p = calibrated(share, r_p);
            let grid = TimeGrid::uniform(p.horizon, GRID).unwrap();
            let c = compare(&p, &grid).unwrap();
            let scale = c.classical.m.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            if c.new
                .m
                .iter()
                .zip(&c.classical.m)
                .any(|(n, cl)| *n > cl + 1e-10 * scale)
            {
                failures.push(format!("m dominance at r_p={r_p}, share={share}"));
            }
            if c.delta_v < -1e-12 || c.rel_delta_v < -1e-12 {
                failures.push(format!("negative gain at r_p={r_p}, share={share}"));
            }
            if r_p == 0.0 && p.delta <= 0.0 {
                let (sn, _) = optimal_schedule(ContractKind::New, PrincipalKind::RiskNeutral, &p, &grid).unwrap();
                let (sc, _) = optimal_schedule(ContractKind::Classical, PrincipalKind::RiskNeutral, &p, &grid).unwrap();
                let tz = 1e-9 * sn.z.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
                let tg = 1e-9 * sn.gamma.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
                let ok = (0..sn.z.len()).all(|i| {
                    sc.z[i] <= 0.0 && sc.z[i] >= sn.z[i] - tz && sc.gamma[i] <= 0.0 && sc.gamma[i] >= sn.gamma[i] - tg
                });
                if !ok {
                    failures.push(format!("Z/Gamma ordering at share={share}"));
                }
            }
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "25 cells: m dominance, gains >= 0, risk-neutral Z and Gamma ordering".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_7() -> Verdict {
    let run = |share: f64, r_p: f64| {
        let p = calibrated(share, r_p);
        compare(&p, &TimeGrid::uniform(p.horizon, GRID).unwrap()).unwrap()
    };
    let rn1 = run(1.0, 0.0);
    let rn05 = run(0.5, 0.0);
    let cara1 = run(1.0, 6e-3);
    let da = rn1.delta_alpha.unwrap_or(f64::NAN);
    let db = rn05.delta_beta.unwrap_or(f64::NAN);
    let inside = |x: f64, lo: f64, hi: f64| (lo..=hi).contains(&x);
    let ok = inside(rn1.rel_delta_v, 0.35, 0.65)
        && inside(da, 0.35, 0.65)
        && inside(db, 0.02, 0.06)
        && inside(cara1.rel_delta_v, 0.08, 0.25);
    verdict(
        ok,
        format!(
            "RN share 1: rel dV {:.4}, d_alpha {da:.4}; RN share 0.5: d_beta {db:.4}; CARA share 1: rel dV {:.4}",
            rn1.rel_delta_v, cara1.rel_delta_v
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (kind, principal) in [
        (ContractKind::New, PrincipalKind::Cara),
        (ContractKind::New, PrincipalKind::RiskNeutral),
        (ContractKind::Classical, PrincipalKind::Cara),
        (ContractKind::Classical, PrincipalKind::RiskNeutral),
    ] {
        let p = calibrated(0.5, 6e-3);
        let grid = TimeGrid::uniform(p.horizon, GRID).unwrap();
        let (s, _) = optimal_schedule(kind, principal, &p, &grid).unwrap();
        let report = value_report(kind, principal, &p, &grid).unwrap();
        let ens = simulate(&p, &s, &SimConfig::standard(p.horizon, 20240601)).unwrap();
        let pay = contract_payoffs(&ens, &s, &p, principal).unwrap();
        let part = verify_participation(&ens, &pay, &p).unwrap();
        let value = verify_principal_value(&ens, &pay, &p, &report).unwrap();
        ok &= part.within(3.0) && value.within(3.0);
        parts.push(format!(
            "{}/{} z {:+.2}/{:+.2}",
            kind.as_str(),
            principal.as_str(),
            part.z_score,
            value.z_score
        ));
    }
    verdict(ok, format!("participation/value z-scores: {}", parts.join(", ")))
}

fn criterion_9() -> Verdict {
    let p = calibrated(0.5, 6e-3);
    let gaps = |steps: usize, mean: ConditionalMean| {
        let grid = TimeGrid::uniform(p.horizon, steps).unwrap();
        let (s, _) = optimal_schedule(ContractKind::New, PrincipalKind::Cara, &p, &grid).unwrap();
        let cfg = SimConfig {
            n_particles: 1024,
            n_common: 8,
            dt: p.horizon / steps as f64,
            seed: 9,
            antithetic: false,
        };
        let ens = simulate(&p, &s, &cfg).unwrap();
        let a = contract_payoffs(&ens, &s, &p, PrincipalKind::Cara).unwrap();
        let limit = law_indexed_payoffs(&ens, &s, &p, mean).unwrap();
        a.iter().zip(&limit).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let g1 = gaps(256, ConditionalMean::Limit);
    let g2 = gaps(512, ConditionalMean::Limit);
    let l1 = gaps(256, ConditionalMean::LeaveSelfOut);
    let l2 = gaps(512, ConditionalMean::LeaveSelfOut);
    let ratio = g1 / g2;
    verdict(
        ratio >= 1.8,
        format!(
            "limit-mean max gap {g1:.3e} -> {g2:.3e}, ratio {ratio:.2} (need >= 1.8); \
             leave-self-out gap {l1:.3e} -> {l2:.3e} (sampling error in the empirical mean)"
        ),
    )
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 5] = [
        &["schedule"],
        &["compare"],
        &["simulate", "--particles", "256", "--common", "16", "--dt", "0.04296875"],
        &["first-best"],
        &["reservation"],
    ];
    let mut mismatched = Vec::new();
    let mut n_files = 0;
    for cmd in commands {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for threads in [1, 4, 8] {
            let out = root.path().join(format!("{}_{threads}", cmd[0]));
            let mut args = vec!["mfdr"];
            args.extend_from_slice(cmd);
            let out_s = out.to_string_lossy().into_owned();
            args.extend_from_slice(&["--out", &out_s]);
            let cli = Cli::try_parse_from(&args).unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| execute(&cli)).unwrap();
            let files = read_dir_bytes(&out);
            match &reference {
                None => {
                    n_files += files.len();
                    reference = Some(files);
                }
                Some(r) if *r != files => mismatched.push(format!("{} at {threads} threads", cmd[0])),
                Some(_) => {}
            }
        }
    }
    verdict(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{n_files} CSV files identical across 1/4/8 threads")
        } else {
            format!("differences: {}", mismatched.join(", "))
        },
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, Duration, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        ("closed-form oracle suite", Duration::from_secs(60), criterion_1),
        ("F0 branch continuity", Duration::from_secs(1), criterion_2),
        ("reservation utility", Duration::from_secs(1), criterion_3),
        ("degenerate-noise collapse", Duration::from_secs(1), criterion_4),
        ("risk-neutral limit", Duration::from_secs(1), criterion_5),
        ("dominance and ordering", Duration::from_secs(10), criterion_6),
        ("magnitude bands", Duration::from_secs(30), criterion_7),
        ("Monte Carlo cross-validation", Duration::from_secs(300), criterion_8),
        ("indexation equivalence", Duration::from_secs(120), criterion_9),
        (
            "determinism across thread counts",
            Duration::from_secs(60),
            criterion_10,
        ),
    ];
    let mut all = true;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = v.pass && in_time;
        all &= pass;
        println!(
            "{} {:>2} {name}: {} [{:.2} s, budget {} s{}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
