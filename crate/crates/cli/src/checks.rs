//! The identity and Monte Carlo suite behind `verify`, `report` and the acceptance test.

use std::time::Instant;

use anyhow::{anyhow, Result};
use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;

use peel_lab_core::halfplane::{
    quadrangulation_gulp_pmf, sample_dangling, sample_simple_step, Escalation, SimpleStepStats,
};
use peel_lab_core::peel::map::{build_ball, Explorer, Mode};
use peel_lab_core::peel::{finite_step_masses, tilde_masses, FreeLaw};
use peel_lab_core::percolation::{estimate_threshold, sample_arm_data, thresholds_exact, Kind, PercoConfig};
use peel_lab_core::rng::stream;
use peel_lab_core::series::{core_perimeter_pmf, invert_boundary, invert_boundary_exact};
use peel_lab_core::stats::{chi_square_gof, chi_square_two_sample, mean_se, tv_to_pmf};
use peel_lab_core::walks::{check_h_identities, dual_formula_gap, run_a_core, WalkKit};
use peel_lab_core::weights::{
    binomial, criticality_report, make_2p_angulation, model_from_spec, nu_measure, solve_admissible_c, DiskData,
    SolverOptions, WeightSequence, to_f64,
};
use peel_lab_core::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub criterion: u8,
    pub check: String,
    pub target: String,
    pub value: String,
    pub tolerance: String,
    pub pass: bool,
}

impl Check {
    fn new(criterion: u8, check: &str, target: impl ToString, value: impl ToString, tolerance: impl ToString, pass: bool) -> Check {
        Check {
            criterion,
            check: check.to_string(),
            target: target.to_string(),
            value: value.to_string(),
            tolerance: tolerance.to_string(),
            pass,
        }
    }

    fn close(criterion: u8, check: &str, target: f64, value: f64, tol: f64) -> Check {
        let pass = (value - target).abs() <= tol;
        Check::new(criterion, check, fmt(target), fmt(value), format!("{tol:.1e}"), pass)
    }

    fn below(criterion: u8, check: &str, value: f64, tol: f64) -> Check {
        Check::new(criterion, check, "0", format!("{value:.3e}"), format!("{tol:.1e}"), value.abs() <= tol)
    }

    /// `|value - target| <= k sigma`, with the tolerance scale applied to `k`.
    fn sigma(criterion: u8, check: &str, target: f64, value: f64, se: f64, k: f64) -> Check {
        let pass = (value - target).abs() <= k * se;
        Check::new(criterion, check, fmt(target), format!("{} (se {:.2e})", fmt(value), se), format!("{k}σ"), pass)
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.10}")
}

/// Loads a model given as `2p:<p>` or as a path to a weights file.
pub fn load_model(spec: &str) -> Result<WeightSequence> {
    if spec.starts_with("2p:") {
        return model_from_spec(spec).map_err(|e| ConfigError(e.to_string()).into());
    }
    let text = std::fs::read_to_string(spec).map_err(|e| ConfigError(format!("{spec}: {e}")))?;
    WeightSequence::parse(&text).map_err(|e| ConfigError(e.to_string()).into())
}

fn two_p(spec: &str) -> Option<usize> {
    spec.strip_prefix("2p:").and_then(|s| s.parse().ok())
}

/// Shared tables for one model.
pub struct Context {
    pub cfg: RunConfig,
    pub q: WeightSequence,
    pub kit: WalkKit,
}

impl Context {
    pub fn new(cfg: &RunConfig) -> Result<Context> {
        let q = load_model(&cfg.model)?;
        let disk = DiskData::solve(&q, cfg.l)?;
        let nu = nu_measure(&disk, cfg.k.unwrap_or(cfg.l))?;
        let kit = WalkKit::build(disk, nu, cfg.m)?;
        Ok(Context { cfg: cfg.clone(), q, kit })
    }

    fn tol(&self, t: f64) -> f64 {
        t * self.cfg.tol_scale
    }

    fn is_quadrangulation(&self) -> bool {
        two_p(&self.cfg.model) == Some(2)
    }
}

pub const TABLE: [(usize, &str); 3] = [(2, "5/9 1/3 3/4"), (3, "76/125 5/11 11/16"), (4, "5197/8085 11/21 21/32")];

/// Exact thresholds for the three tabulated models and for the configured one.
pub fn criterion_1(ctx: &Context) -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut out = Vec::new();
    for (p, want) in TABLE {
        let got = thresholds_exact(&make_2p_angulation(p)?)?.line();
        out.push(Check::new(1, &format!("thresholds 2p:{p}"), want, &got, "exact", got == want));
    }
    if !TABLE.iter().any(|(p, _)| two_p(&ctx.cfg.model) == Some(*p)) {
        let got = thresholds_exact(&ctx.q).map(|r| r.line());
        out.push(match got {
            Ok(line) => Check::new(1, "thresholds (model)", "computed", line, "-", true),
            Err(e) => Check::new(1, "thresholds (model)", "exact constants", e.to_string(), "-", false),
        });
    }
    let secs = start.elapsed().as_secs_f64();
    out.push(Check::new(1, "runtime", "< 60 s", format!("{secs:.2} s"), "-", secs < 60.0));
    Ok(out)
}

/// The model's threshold line, as printed by `verify`.
pub fn threshold_line(ctx: &Context) -> Result<String> {
    Ok(thresholds_exact(&ctx.q)?.line())
}

/// Mean exposure against the closed form, and `e = 2g + 1`.
pub fn criterion_2(ctx: &Context) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for p in 2..=6usize {
        let q = make_2p_angulation(p)?;
        let disk = DiskData::solve(&q, ctx.cfg.l)?;
        let nu = nu_measure(&disk, ctx.cfg.l)?;
        let want = 4f64.powi(p as i32 - 1) / to_f64(&BigRational::from_integer(binomial(2 * p as u64 - 2, p as u64 - 1)));
        out.push(Check::close(2, &format!("e_q 2p:{p}"), want, nu.exposure, ctx.tol(1e-10)));
        out.push(Check::close(2, &format!("e_q = 2g+1 2p:{p}"), 2.0 * nu.gulp + 1.0, nu.exposure, ctx.tol(1e-8)));
    }
    Ok(out)
}

/// Coefficients of `N(x) = (x - 2/3 + (2/3)(1 - x)^{3/2}) / x`, i.e. `nu(-k)` for quadrangulations.
pub fn quadrangulation_nu_oracle(n: usize) -> Vec<f64> {
    let mut b = vec![1.0f64; n + 2];
    for j in 1..n + 2 {
        b[j] = b[j - 1] * (j as f64 - 2.5) / j as f64;
    }
    (0..=n).map(|k| if k == 0 { 0.0 } else { (2.0 / 3.0) * b[k + 1] }).collect()
}

pub fn criterion_3(ctx: &Context) -> Result<Vec<Check>> {
    let nu = &ctx.kit.nu;
    let mut out = vec![
        Check::below(3, "|sum nu - 1|", nu.total - 1.0, ctx.tol(1e-8)),
        Check::below(3, "|mean nu|", nu.mean, ctx.tol(1e-6)),
    ];
    let tutte = (1..=50).map(|l| nu.tutte_residual(l).abs()).fold(0.0, f64::max);
    out.push(Check::below(3, "Tutte residual l <= 50", tutte, ctx.tol(1e-8)));
    if ctx.is_quadrangulation() {
        let oracle = quadrangulation_nu_oracle(4);
        for (k, exact) in [(1, 0.25), (2, 1.0 / 24.0), (3, 1.0 / 64.0), (4, 1.0 / 128.0)] {
            out.push(Check::close(3, &format!("oracle nu(-{k})"), exact, oracle[k], 1e-15));
            out.push(Check::close(3, &format!("nu(-{k})"), oracle[k], nu.nu(-(k as i64)), ctx.tol(1e-10)));
        }
    }
    let rep = criticality_report(nu, ctx.tol(1e-6).max(1e-300));
    out.push(Check::new(3, "critical", "true", rep.critical, "-", rep.critical));
    Ok(out)
}

pub fn criterion_4(ctx: &Context) -> Result<Vec<Check>> {
    let (nu, h) = (&ctx.kit.nu, &ctx.kit.h);
    let (at, gap) = dual_formula_gap(nu, &ctx.kit.disk, 100);
    let mut out = vec![Check::new(
        4,
        "H_down dual formulas l <= 100",
        "0",
        format!("{gap:.3e} at l = {at}"),
        format!("{:.1e}", ctx.tol(1e-10)),
        gap <= ctx.tol(1e-10),
    )];
    let rep = check_h_identities(nu, h, 40, ctx.tol(1e-10));
    out.push(Check::new(
        4,
        "sum-to-one 1 <= l <= p <= 40",
        "0",
        format!("{:.3e} at {:?}", rep.sum_to_one_max, rep.sum_to_one_at),
        format!("{:.1e}", ctx.tol(1e-10)),
        rep.sum_to_one_max <= ctx.tol(1e-10),
    ));
    out.push(Check::close(4, "sum_k q_k c^(k-1) H_up(2k-1)", 1.0, rep.first_peel_total, ctx.tol(1e-10)));
    Ok(out)
}

pub fn criterion_5(ctx: &Context) -> Result<Vec<Check>> {
    let disk = &ctx.kit.disk;
    let mut out = Vec::new();
    let exact = invert_boundary_exact(&ctx.q, &disk.adm.c, 3);
    let got: Vec<String> = exact.iter().map(|r| r.to_string()).collect();
    if ctx.is_quadrangulation() {
        let want = ["1", "4/3", "4/9", "16/27"];
        out.push(Check::new(5, "What(0..3) exact", want.join(" "), got.join(" "), "exact", got == want));
    } else {
        out.push(Check::new(5, "What(0..3) exact", "computed", got.join(" "), "-", disk.adm.exact));
    }
    let sd = invert_boundary(disk, ctx.cfg.series_l)?;
    out.push(Check::close(5, &format!("sum What hat_c^-l at L = {}", ctx.cfg.series_l), disk.w_c, sd.total(), ctx.tol(1e-6)));
    if ctx.is_quadrangulation() {
        out.push(Check::close(5, "hat_c", 4.5, sd.hat_c, ctx.tol(1e-9)));
    }
    let l = 200.min(sd.l_max());
    let ratio = (sd.ln_hat_w(l) - sd.ln_hat_w(l - 1)).exp();
    out.push(Check::close(5, &format!("What(L)/What(L-1) at L = {l}"), sd.hat_c, ratio, ctx.tol(0.1)));
    Ok(out)
}

/// Core half-perimeters from `runs` independent explorations.
pub fn core_samples(kit: &WalkKit, runs: usize, seed: u64, budget: u64) -> (Vec<usize>, usize) {
    let res: Vec<Option<usize>> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[0x61, i as u64]);
            run_a_core(kit, &mut rng, budget, false).ok().map(|r| r.core_half_perimeter() as usize)
        })
        .collect();
    let failures = res.iter().filter(|r| r.is_none()).count();
    (res.into_iter().flatten().collect(), failures)
}

pub fn criterion_6(ctx: &Context) -> Result<Vec<Check>> {
    let start = Instant::now();
    let sd = invert_boundary(&ctx.kit.disk, ctx.cfg.series_l)?;
    let pmf = core_perimeter_pmf(&sd, ctx.cfg.series_l).conditioned_nonvertex();
    let (samples, failures) = core_samples(&ctx.kit, ctx.cfg.core_runs, ctx.cfg.seed, ctx.cfg.core_budget);
    let shifted: Vec<usize> = samples.iter().map(|s| s - 1).collect();
    let tv = tv_to_pmf(&shifted, &pmf);
    let secs = start.elapsed().as_secs_f64();
    Ok(vec![
        Check::new(6, "core runs", ctx.cfg.core_runs, samples.len(), "no budget failures", failures == 0),
        Check::below(6, "TV(core half-perimeter | >= 1)", tv, ctx.tol(0.005)),
        Check::new(6, "runtime", "< 300 s", format!("{secs:.1} s"), "-", secs < 300.0),
    ])
}

/// First simple peels with their resolving radius; failures are counted, not dropped silently.
pub fn simple_samples(kit: &WalkKit, runs: usize, seed: u64, max_darts: usize) -> (Vec<SimpleStepStats>, Vec<String>) {
    let esc = Escalation { max_darts, ..Escalation::default() };
    let res: Vec<std::result::Result<SimpleStepStats, Error>> = (0..runs)
        .into_par_iter()
        .map(|i| sample_simple_step(kit, stream(seed, &[0x71, i as u64]), esc).map(|x| x.0))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in res {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => failed.push(e.to_string()),
        }
    }
    (ok, failed)
}

pub fn criterion_7(ctx: &Context) -> Result<Vec<Check>> {
    let nu = &ctx.kit.nu;
    let (g, e) = (nu.gulp, nu.exposure);
    let p_pos = 1.0 / ctx.kit.disk.hat_c();
    let (st, failed) = simple_samples(&ctx.kit, ctx.cfg.simple_runs, ctx.cfg.seed, ctx.cfg.max_darts);
    let n = st.len();
    let col = |f: fn(&SimpleStepStats) -> usize| st.iter().map(f).collect::<Vec<usize>>();
    let (gr, gl, ex) = (col(|s| s.gulp_right), col(|s| s.gulp_left), col(|s| s.exposure));
    let as_f = |v: &[usize]| v.iter().map(|x| *x as f64).collect::<Vec<f64>>();
    let k = 3.0 * ctx.cfg.tol_scale;
    let mut out = vec![Check::new(
        7,
        "resolved first peels",
        ctx.cfg.simple_runs,
        n,
        "failure rate < 1e-3",
        (failed.len() as f64) < 1e-3 * ctx.cfg.simple_runs as f64,
    )];
    let (m, se) = mean_se(&as_f(&gr));
    out.push(Check::sigma(7, "E[G_r]", g, m, se, k));
    let (m, se) = mean_se(&as_f(&gl));
    out.push(Check::sigma(7, "E[G_l]", g, m, se, k));
    let (m, se) = mean_se(&as_f(&ex));
    out.push(Check::sigma(7, "E[E]", e, m, se, k));
    let hits = gr.iter().filter(|x| **x > 0).count() as f64 / n as f64;
    out.push(Check::sigma(7, "P(G_r > 0)", p_pos, hits, (p_pos * (1.0 - p_pos) / n as f64).sqrt(), k));
    let t = chi_square_two_sample(&gl, &gr);
    out.push(Check::new(7, "G_l vs G_r two-sample chi-square", "p >= 0.01", format!("p = {:.4} (df {})", t.p_value, t.df), "1%", t.p_value >= 0.01 * ctx.cfg.tol_scale.min(1.0) || ctx.cfg.tol_scale > 1.0));
    let balance = st.iter().all(|s| s.exposure >= 1);
    out.push(Check::new(7, "E >= 1 on every step", "true", balance, "-", balance));
    if ctx.is_quadrangulation() {
        let sd = invert_boundary(&ctx.kit.disk, 300)?;
        let pmf = quadrangulation_gulp_pmf(ctx.q.get_f64(2), &sd, 60);
        let t = chi_square_gof(&gr, &pmf);
        out.push(Check::new(7, "G_r law (quadrangle configurations)", "p >= 0.001", format!("p = {:.4} (df {})", t.p_value, t.df), "0.1%", t.p_value >= 1e-3));
        let face3 = st.iter().filter(|s| s.exposure == 3).count() as f64 / n as f64;
        let want = ctx.q.get_f64(2) * ctx.kit.disk.hat_c();
        out.push(Check::sigma(7, "P(one face, two new vertices) = q_2 hat_c", want, face3, (want * (1.0 - want) / n as f64).sqrt(), k));
    }
    Ok(out)
}

pub const DANGLING_INDICES: [i64; 4] = [-2, -1, 1, 2];

pub fn dangling_samples(kit: &WalkKit, samples: usize, seed: u64, max_darts: usize) -> (Vec<usize>, Vec<String>) {
    let esc = Escalation { max_darts, ..Escalation::default() };
    let balls = samples.div_ceil(DANGLING_INDICES.len());
    let res: Vec<std::result::Result<Vec<usize>, Error>> = (0..balls)
        .into_par_iter()
        .map(|i| sample_dangling(kit, stream(seed, &[0x81, i as u64]), &DANGLING_INDICES, esc).map(|x| x.0))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in res {
        match r {
            Ok(v) => ok.extend(v),
            Err(e) => failed.push(e.to_string()),
        }
    }
    ok.truncate(samples);
    (ok, failed)
}

pub fn criterion_8(ctx: &Context) -> Result<Vec<Check>> {
    let (s, failed) = dangling_samples(&ctx.kit, ctx.cfg.dangling_runs, ctx.cfg.seed, ctx.cfg.max_darts);
    let law = FreeLaw::new(&ctx.kit.disk);
    let tv = tv_to_pmf(&s, &law.pmf);
    Ok(vec![
        Check::new(8, "resolved components", ctx.cfg.dangling_runs, s.len(), "failure rate < 1e-3", (failed.len() as f64) < 1e-3 * ctx.cfg.dangling_runs as f64),
        Check::below(8, "TV(dangling half-perimeter, free law)", tv, ctx.tol(0.01)),
    ])
}

/// Crossing estimates for the three kinds against the exact thresholds, within `±0.05`.
pub fn criterion_9(ctx: &Context) -> Result<Vec<Check>> {
    let start = Instant::now();
    let exact = thresholds_exact(&ctx.q)?;
    let cfg = PercoConfig {
        kinds: Kind::ALL.to_vec(),
        radii: ctx.cfg.radii.clone(),
        replicas: ctx.cfg.perc_replicas,
        seed: ctx.cfg.seed,
        max_darts: ctx.cfg.max_darts,
    };
    let data = sample_arm_data(&ctx.kit, &cfg)?;
    let mut out = vec![Check::new(
        9,
        "balls within budget",
        ctx.cfg.perc_replicas,
        ctx.cfg.perc_replicas - data.failures,
        "failure rate < 1e-3",
        (data.failures as f64) < 1e-3 * ctx.cfg.perc_replicas as f64,
    )];
    for kind in Kind::ALL {
        let target = exact.get(kind).to_f64();
        match estimate_threshold(&data, kind, ctx.cfg.bootstrap, ctx.cfg.seed) {
            Ok(est) => {
                let mut c = Check::close(9, &format!("{kind} threshold"), target, est.estimate, ctx.tol(0.05));
                c.value = format!("{:.4} [{:.4}, {:.4}]", est.estimate, est.ci_lo, est.ci_hi);
                if !est.warnings.is_empty() {
                    c.value.push_str(&format!(" warnings: {}", est.warnings.join("; ")));
                }
                out.push(c);
            }
            Err(e) => out.push(Check::new(9, &format!("{kind} threshold"), fmt(target), e.to_string(), ctx.tol(0.05), false)),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let threads = rayon::current_num_threads();
    // the budget is 30 min on 8 cores; scale it by the cores actually used
    let budget = 1800.0 * 8.0 / threads.min(8) as f64;
    out.push(Check::new(9, "runtime", format!("< {budget:.0} s on {threads} thread(s)"), format!("{secs:.0} s"), "-", secs < budget));
    Ok(out)
}

pub fn criterion_10(ctx: &Context) -> Result<Vec<Check>> {
    let kit = &ctx.kit;
    let support: Vec<usize> = ctx.q.iter().map(|(k, _)| k).collect();
    let mut out = Vec::new();
    let mut bad = Vec::new();
    let mut count = 0;
    let mut mass_error = 0.0f64;
    for seed in 0..30u64 {
        for mode in [Mode::Finite(1 + seed as usize % 4), Mode::General, Mode::Tilde] {
            let mut ex = Explorer::new(kit, mode, stream(ctx.cfg.seed, &[0x91, seed]));
            ex.max_darts = ctx.cfg.max_darts.min(1 << 21);
            ex.verify = true;
            let res = match mode {
                Mode::Finite(_) => ex.fill_all(),
                _ => ex.grow_to(4),
            };
            match res {
                Ok(()) => {}
                Err(Error::Budget(_)) => continue,
                Err(e) => return Err(anyhow!(e)),
            }
            count += 1;
            mass_error = mass_error.max(ex.stats.max_mass_error);
            let rep = ex.map.check_structure(&support);
            if !rep.ok {
                bad.push(format!("{mode:?} seed {seed}: {:?}", rep.errors));
            }
        }
    }
    out.push(Check::new(10, "maps pass Euler/bipartite/hole checks", count, count - bad.len(), "all", bad.is_empty() && count >= 60));
    out.push(Check::below(10, "step masses during exploration", mass_error, ctx.tol(1e-9)));
    let tol = ctx.tol(1e-9);
    let mut worst = (0.0f64, String::new());
    for l in 1..=ctx.cfg.l.min(3000) {
        let s: f64 = finite_step_masses(&kit.disk, l).iter().map(|x| x.1).sum();
        if (s - 1.0).abs() > worst.0 {
            worst = ((s - 1.0).abs(), format!("finite l = {l}"));
        }
    }
    for p in 1..=40 {
        for pos in 1..=p {
            let s: f64 = tilde_masses(&kit.nu, &kit.h, p, pos).iter().map(|x| x.1).sum();
            if (s - 1.0).abs() > worst.0 {
                worst = ((s - 1.0).abs(), format!("tilde p = {p}, position {pos}"));
            }
        }
    }
    out.push(Check::new(10, "transition masses sum to 1", "0", format!("{:.3e} ({})", worst.0, worst.1), format!("{tol:.1e}"), worst.0 <= tol));
    let build = |s| build_ball(kit, Mode::General, 6, stream(ctx.cfg.seed, &[0x92, s]), ctx.cfg.max_darts).map(|b| b.0.export());
    let same_ball = serde_json::to_string(&build(1)?)? == serde_json::to_string(&build(1)?)?;
    let a = simple_samples(kit, 50, ctx.cfg.seed, ctx.cfg.max_darts).0;
    let b = simple_samples(kit, 50, ctx.cfg.seed, ctx.cfg.max_darts).0;
    let c = core_samples(kit, 200, ctx.cfg.seed, ctx.cfg.core_budget).0;
    let d = core_samples(kit, 200, ctx.cfg.seed, ctx.cfg.core_budget).0;
    let same = same_ball && a == b && c == d;
    out.push(Check::new(10, "identical seeds reproduce outputs", "true", same, "-", same));
    Ok(out)
}

/// Runs criteria 1-8 and 10.
pub fn run_suite(ctx: &Context) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let steps: [fn(&Context) -> Result<Vec<Check>>; 9] =
        [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_10];
    for f in steps {
        out.extend(f(ctx)?);
    }
    Ok(out)
}

/// Admissibility summary used by the `weights` command.
pub fn weights_summary(q: &WeightSequence, l: usize) -> Result<serde_json::Value> {
    let adm = solve_admissible_c(q, &SolverOptions::default())?;
    let disk = DiskData::with_admissibility(q, adm.clone(), l)?;
    let nu = nu_measure(&disk, l)?;
    let rep = criticality_report(&nu, 1e-6);
    Ok(serde_json::json!({
        "weights": q.to_text(),
        "c": adm.c.to_string(),
        "c_f64": adm.c_f64(),
        "exact": adm.exact,
        "regime": format!("{:?}", adm.regime),
        "tangency_gap": adm.tangency_gap,
        "w_c": disk.w_c,
        "hat_c": disk.hat_c(),
        "s": nu.s,
        "nu_minus_one": nu.nu(-1),
        "gulp": nu.gulp,
        "exposure": nu.exposure,
        "criticality": rep,
    }))
}
