//! Acceptance suite.
//!
//! Runs every acceptance criterion with pinned sizes and tolerances and
//! prints one PASS/FAIL line per criterion. Criteria listed in
//! `KNOWN_GAPS` are reported like the others but do not fail the run;
//! set `SICDD_ACCEPTANCE_STRICT=1` to make any failure fatal. Set
//! `SICDD_ACCEPTANCE_ONLY=3,7` to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sicdd::auxmodel::AuxChannel;
use sicdd::experiment::{self, preset, ExperimentConfig, RatePoint};
use sicdd::fba::{ConditioningMask, FbaOptions, Trellis};
use sicdd::gibbs::{SamplerState, SamplingProblem};
use sicdd::link::{encode_payload, Link, LinkConfig, ObservationFrame, Termination};
use sicdd::modem::{build_alphabet, Alphabet, AlphabetKind};
use sicdd::polar::{self, FerRow};
use sicdd::rates::{self, exact_rates, RateKey, RateKind, RateRequest};

/// Criteria that are known not to be met at the pinned settings; the
/// analysis is kept with the project notes.
const KNOWN_GAPS: &[usize] = &[5];

type Criterion = (usize, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn overall(p: &RatePoint, kind: RateKind, stages: usize) -> (f64, f64) {
    let e = rates::find(&p.estimates, RateKey::overall(kind, stages)).unwrap_or_else(|| panic!("{kind:?} S={stages} missing"));
    (e.rate_bpcu, e.stderr)
}

fn stage_rate(p: &RatePoint, kind: RateKind, stages: usize, stage: usize) -> (f64, f64) {
    let e = rates::find(&p.estimates, RateKey { kind, stages, stage: Some(stage), level: None }).expect("stage rate");
    (e.rate_bpcu, e.stderr)
}

fn run_points(cfg: &ExperimentConfig, snrs: &[f64]) -> Vec<RatePoint> {
    cfg.validate().unwrap();
    let link = Link::new(cfg.link.clone()).unwrap();
    let a = cfg.build_alphabet().unwrap();
    snrs.iter().map(|&s| experiment::run_point(&link, &a, cfg, s).unwrap()).collect()
}

/// SNR at which a rate curve first reaches `target`, by linear interpolation.
fn snr_at_rate(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        (y0 < target && y1 >= target).then(|| x0 + (target - y0) / (y1 - y0) * (x1 - x0))
    })
}

/// Random frame over a sinc link with `link_memory` and an auxiliary
/// channel of memory `aux_memory` with fixed per-parity moments.
fn random_instance(rng: &mut ChaCha8Rng, a: &Alphabet, n: usize, link_memory: usize, aux_memory: usize, snr: f64) -> (AuxChannel, ObservationFrame) {
    let link = Link::new(LinkConfig { alpha: 0.0, length_km: 30.0, taps_half: link_memory, ..LinkConfig::default() }).unwrap();
    let term = Termination::random(a, link_memory, link_memory, rng);
    let u: Vec<usize> = (0..n).map(|_| rng.gen_range(0..a.len())).collect();
    let frame = link.simulate(a, &u, &term, snr, true, rng).unwrap();
    let aux = AuxChannel::from_taps(&link.taps, aux_memory).unwrap().with_moments([0.1, -0.05], [0.8, 1.3]).unwrap();
    (aux, frame)
}

/// Exact symbol posteriors by enumerating every data sequence allowed by
/// `mask` and evaluating the auxiliary density of the whole frame.
fn enumerated_posteriors(aux: &AuxChannel, a: &Alphabet, frame: &ObservationFrame, mask: &ConditioningMask) -> Vec<Vec<f64>> {
    let n = frame.n();
    let m = a.len();
    let mut logs = Vec::new();
    let mut seqs = Vec::new();
    for idx in 0..m.pow(n as u32) {
        let mut rest = idx;
        let u: Vec<usize> = (0..n)
            .map(|_| {
                let d = rest % m;
                rest /= m;
                d
            })
            .collect();
        if u.iter().enumerate().any(|(k, &v)| mask.allowed(k) & (1 << v) == 0) {
            continue;
        }
        let mut f = frame.clone();
        let (x, tail_x) = encode_payload(a, &u, &frame.termination);
        f.u = u.clone();
        f.x = x;
        f.tail_x = tail_x;
        logs.push(aux.frame_log_density(a, &f).unwrap());
        seqs.push(u);
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut post = vec![vec![0.0; m]; n];
    for (u, wi) in seqs.iter().zip(&w) {
        for (k, &v) in u.iter().enumerate() {
            post[k][v] += wi / total;
        }
    }
    post
}

fn c1_fba_matches_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let alphabets = [(AlphabetKind::Ask, 2), (AlphabetKind::Pam, 2), (AlphabetKind::Ask, 4), (AlphabetKind::Pam, 4), (AlphabetKind::Sqam, 4)];
    let mut worst: f64 = 0.0;
    let instances = 60;
    for i in 0..instances {
        let (kind, m) = alphabets[i % alphabets.len()];
        let a = build_alphabet(kind, m).unwrap();
        let n = rng.gen_range(1..=if m == 4 { 7 } else { 8 });
        let link_memory = rng.gen_range(1..=3);
        let aux_memory = rng.gen_range(0..=link_memory);
        let snr = rng.gen_range(-2.0..12.0);
        let (aux, frame) = random_instance(&mut rng, &a, n, link_memory, aux_memory, snr);
        let mut mask = ConditioningMask::free(&a, n);
        for k in 0..n {
            match rng.gen_range(0..8) {
                0 => mask.pin(k, frame.u[k]),
                1 => {
                    let extra: u32 = rng.gen_range(0..(1u32 << m));
                    mask.restrict(k, extra | (1 << frame.u[k]));
                }
                _ => {}
            }
        }
        let app = Trellis::for_frame(&aux, &a, &frame).unwrap().run(&frame, &mask, &FbaOptions::default()).unwrap();
        let oracle = enumerated_posteriors(&aux, &a, &frame, &mask);
        for (k, post) in oracle.iter().enumerate() {
            let fba: Vec<f64> = (0..m).map(|v| app.prob(k, v)).collect();
            worst = worst.max(0.5 * fba.iter().zip(post).map(|(p, q)| (p - q).abs()).sum::<f64>());
            for l in 0..a.bits() {
                let pb = app.bit_pmf(&a, k, l, a.full_mask());
                let q1: f64 = (0..m).filter(|&v| a.bit(v, l) == 1).map(|v| post[v]).sum();
                worst = worst.max((pb[1] - q1).abs());
            }
        }
    }
    Outcome::new(worst < 1e-9, format!("{instances} instances, max total variation {worst:.2e} (limit 1e-9)"))
}

fn c2_rate_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let a = build_alphabet(AlphabetKind::Ask, 2).unwrap();
    let mut per_obs_ok = true;
    let mut sums = [0.0; 5];
    let observations = 24;
    for i in 0..observations {
        let snr = [-2.0, 4.0, 10.0][i % 3];
        let (aux, frame) = random_instance(&mut rng, &a, 8, 2, 2, snr);
        let t = Trellis::for_frame(&aux, &a, &frame).unwrap();
        let ex = exact_rates(&t, &a, &frame, &[2, 4]).unwrap();
        let (sic2, sic4) = (ex.sic[0].1, ex.sic[1].1);
        let eps = 1e-9;
        per_obs_ok &= ex.sdd <= sic2 + eps && ex.sdd <= sic4 + eps;
        per_obs_ok &= sic2 <= ex.joint + eps && sic4 <= ex.joint + eps;
        per_obs_ok &= ex.bsic.iter().zip(&ex.sic).all(|(b, s)| b.1 >= s.1 - eps);
        for (acc, v) in sums.iter_mut().zip([ex.sdd, sic2, sic4, ex.joint, ex.bsic[1].1]) {
            *acc += v / observations as f64;
        }
    }
    let [sdd, sic2, sic4, joint, bsic4] = sums;
    let chain_ok = sdd <= sic2 && sic2 <= sic4 && sic4 <= joint && bsic4 >= sic4;

    // Per-stage monotonicity on Monte Carlo estimates.
    let mut cfg = preset("fig7-4ask-s4").unwrap();
    cfg.stages = vec![4];
    cfg.kinds = vec![RateKind::Sic];
    cfg.n = 2048;
    cfg.frames = 4;
    let mut worst_gap = f64::NEG_INFINITY;
    for p in run_points(&cfg, &[0.0, 4.0, 8.0]) {
        for s in 0..3 {
            let (r0, e0) = stage_rate(&p, RateKind::Sic, 4, s);
            let (r1, e1) = stage_rate(&p, RateKind::Sic, 4, s + 1);
            worst_gap = worst_gap.max((r0 - r1) - 2.0 * (e0 * e0 + e1 * e1).sqrt());
        }
    }
    let mono_ok = worst_gap <= 0.0;
    Outcome::new(
        per_obs_ok && chain_ok && mono_ok,
        format!(
            "exact mean over {observations} observations: SDD {sdd:.4} <= SIC2 {sic2:.4} <= SIC4 {sic4:.4} <= joint {joint:.4}, bSIC4 {bsic4:.4}; per-observation identities {}; stage monotonicity worst excess {worst_gap:.4} (<= 0)",
            if per_obs_ok { "hold" } else { "violated" }
        ),
    )
}

fn c3_rate_curves() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for name in ["fig4-4pam", "fig4-4ask", "fig4-4sqam"] {
        let mut cfg = preset(name).unwrap();
        cfg.n = 5000;
        cfg.frames = 1;
        cfg.stages = vec![4];
        cfg.kinds = vec![RateKind::Jdd];
        let high = run_points(&cfg, &[10.0]);
        let jdd10 = overall(&high[0], RateKind::Jdd, 1).0;
        cfg.kinds = vec![RateKind::Jdd, RateKind::Sic];
        let low = run_points(&cfg, &[-2.0, 0.0, 2.0, 4.0]);
        let worst = low.iter().map(|p| (overall(p, RateKind::Jdd, 1).0 - overall(p, RateKind::Sic, 4).0).abs()).fold(0.0, f64::max);
        pass &= jdd10 >= 1.9 && worst <= 0.05;
        detail.push(format!("{name}: JDD@10dB {jdd10:.3} (>= 1.9), max |SIC4-JDD| at <= 4 dB {worst:.3} (<= 0.05)"));
    }
    Outcome::new(pass, detail.join("; "))
}

fn c4_snr_gains() -> Outcome {
    let snrs: Vec<f64> = (-4..=8).map(f64::from).collect();
    let mut at_one = Vec::new();
    for name in ["fig7-4pam-s4", "fig7-4ask-s4"] {
        let mut cfg = preset(name).unwrap();
        cfg.stages = vec![4];
        cfg.kinds = vec![RateKind::Sdd, RateKind::Sic];
        cfg.n = 2048;
        cfg.frames = 8;
        let pts = run_points(&cfg, &snrs);
        let curve = |kind, s| pts.iter().map(|p| (p.snr_db, overall(p, kind, s).0)).collect::<Vec<_>>();
        let sdd = snr_at_rate(&curve(RateKind::Sdd, 1), 1.0);
        let sic = snr_at_rate(&curve(RateKind::Sic, 4), 1.0);
        at_one.push((sdd, sic));
    }
    let (Some(pam_sdd), Some(pam_sic)) = at_one[0] else { return Outcome::new(false, "PAM curves do not reach 1 bpcu".into()) };
    let (Some(ask_sdd), Some(ask_sic)) = at_one[1] else { return Outcome::new(false, "ASK curves do not reach 1 bpcu".into()) };
    let checks = [("ASK over PAM, SIC S=4", pam_sic - ask_sic, 0.75), ("SIC over SDD, PAM", pam_sdd - pam_sic, 1.14), ("SIC over SDD, ASK", ask_sdd - ask_sic, 1.86)];
    let pass = checks.iter().all(|(_, g, t)| (g - t).abs() <= 0.3);
    let detail = checks.iter().map(|(n, g, t)| format!("{n} {g:.2} dB (target {t} ± 0.3)")).collect::<Vec<_>>().join("; ");
    Outcome::new(pass, format!("gains at 1 bpcu (SE {:.2} bit/s/Hz): {detail}", sicdd::link::spectral_efficiency(1.0, 0.2)))
}

fn gibbs_config() -> ExperimentConfig {
    let mut cfg = preset("fig8-gibbs-4ask").unwrap();
    cfg.stages = vec![4];
    cfg.tune_eta = false;
    cfg
}

fn c5_gibbs_fidelity() -> Outcome {
    let mut cfg = gibbs_config();
    cfg.kinds = vec![RateKind::Sic, RateKind::Bsic];
    cfg.n = 300;
    cfg.frames = 2;
    let mut pass = true;
    let mut detail = Vec::new();
    for p in run_points(&cfg, &[-2.0, 0.0, 2.0]) {
        let (fba, _) = overall(&p, RateKind::Sic, 4);
        let (gibbs, _) = overall(&p, RateKind::Bsic, 4);
        pass &= (gibbs - fba).abs() <= 0.05;
        detail.push(format!("{} dB: Gibbs bSIC {gibbs:.3} vs FBA SIC {fba:.3}", p.snr_db));
    }
    let high = run_points(&cfg, &[8.0]);
    let rows = experiment::rate_rows(&cfg, &high).unwrap();
    let row = rows.iter().find(|r| r.kind == RateKind::Bsic.name() && r.stage.is_none()).unwrap();
    let (fba, _) = overall(&high[0], RateKind::Sic, 4);
    let diag = high[0].gibbs.clone().unwrap();
    let falls = row.rate_bpcu < fba - 0.05;
    let flagged = diag.stalled_runs > 0 && row.flags.contains("stalled");
    pass &= !falls || flagged;
    detail.push(format!(
        "8 dB: Gibbs {:.3} vs FBA {fba:.3}, {}/{} runs stalled, flags \"{}\"",
        row.rate_bpcu, diag.stalled_runs, diag.runs, row.flags
    ));
    Outcome::new(pass, detail.join("; "))
}

fn c6_iteration_sensitivity() -> Outcome {
    let mut cfg = gibbs_config();
    cfg.kinds = vec![RateKind::Bsic];
    cfg.n = 100;
    cfg.frames = 4;
    let iters = [1usize, 2, 5, 10, 20, 50];
    let snrs = cfg.snr.points();
    let mut curves: Vec<Vec<(f64, f64)>> = vec![Vec::new(); snrs.len()];
    for &it in &iters {
        cfg.gibbs.n_iter = it;
        for (i, p) in run_points(&cfg, &snrs).iter().enumerate() {
            curves[i].push(overall(p, RateKind::Bsic, 4));
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for c in &curves {
        for w in c.windows(2) {
            worst = worst.max((w[0].0 - w[1].0) - 2.0 * w[0].1.max(w[1].1));
        }
    }
    let detail = snrs
        .iter()
        .zip(&curves)
        .map(|(s, c)| format!("{s} dB [{}]", c.iter().map(|r| format!("{:.3}", r.0)).collect::<Vec<_>>().join(" ")))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome::new(worst <= 0.0, format!("N_iter {iters:?}: worst drop beyond 2 stderr {worst:.4} (<= 0); {detail}"))
}

fn fer_setup(name: &str, stages: usize) -> (ExperimentConfig, Link, Alphabet, polar::SicSchedule) {
    let mut cfg = preset(name).unwrap();
    cfg.fer.stages = stages;
    let link = Link::new(cfg.link.clone()).unwrap();
    let a = cfg.build_alphabet().unwrap();
    let schedule = polar::design_codes(&link, &a, &cfg).unwrap();
    (cfg, link, a, schedule)
}

fn fer_fixed(name: &str, stages: usize, snr: f64, frames: usize) -> FerRow {
    let (mut cfg, link, a, schedule) = fer_setup(name, stages);
    cfg.fer.min_frames = frames;
    cfg.fer.max_frames = frames;
    cfg.fer.min_errors = usize::MAX;
    polar::fer_point(&link, &a, &cfg, &schedule, snr).unwrap()
}

/// SNR of the 1e-2 FER crossing of the S=4 system, searching in 0.5 dB
/// steps from `start` and halving the step when a point has no errors.
fn fer_crossing(name: &str, start: f64) -> (Option<f64>, Vec<(f64, f64)>) {
    let (mut cfg, link, a, schedule) = fer_setup(name, 4);
    cfg.fer.min_frames = 300;
    cfg.fer.min_errors = 40;
    cfg.fer.max_frames = 800;
    let target = 1e-2;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let eval = |snr: f64, pts: &mut Vec<(f64, f64)>| {
        let r = polar::fer_point(&link, &a, &cfg, &schedule, snr).unwrap();
        pts.push((snr, r.fer));
        pts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        r.fer
    };
    let mut snr = start;
    let first = eval(snr, &mut pts);
    let step = if first > target { 0.5 } else { -0.5 };
    for _ in 0..6 {
        let above = pts.iter().any(|p| p.1 > target);
        let below = pts.iter().any(|p| p.1 <= target && p.1 > 0.0);
        if above && below {
            break;
        }
        let zero = pts.iter().any(|p| p.1 == 0.0);
        if above && zero {
            // Midway between the last point above target and the first zero.
            let hi = pts.iter().filter(|p| p.1 > target).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let lo = pts.iter().filter(|p| p.1 == 0.0).map(|p| p.0).fold(f64::INFINITY, f64::min);
            let mid = 0.5 * (hi + lo);
            pts.retain(|p| p.1 > 0.0);
            eval(mid, &mut pts);
            continue;
        }
        snr += step;
        eval(snr, &mut pts);
    }
    let clean: Vec<(f64, f64)> = pts.iter().cloned().filter(|p| p.1 > 0.0).collect();
    (polar::snr_at(&clean, target), pts)
}

fn c7_fer_trend() -> Outcome {
    let snr = 3.0;
    let rows: Vec<FerRow> = [(4usize, 300usize), (2, 300), (1, 200)].iter().map(|&(s, f)| fer_fixed("fig7-4ask-s4", s, snr, f)).collect();
    let separated = rows[0].ci_hi < rows[1].ci_lo && rows[1].ci_hi < rows[2].ci_lo;
    let order = rows
        .iter()
        .map(|r| format!("S={} {:.3} [{:.3}, {:.3}] ({} frames)", r.stages, r.fer, r.ci_lo, r.ci_hi, r.n_frames))
        .collect::<Vec<_>>()
        .join(", ");
    let (ask, ask_pts) = fer_crossing("fig7-4ask-s4", 3.5);
    let (pam, pam_pts) = fer_crossing("fig7-4pam-s4", 4.5);
    let (gain_ok, gain) = match (ask, pam) {
        (Some(a), Some(p)) => (((p - a) - 0.75).abs() <= 0.4, format!("{:.2} dB", p - a)),
        _ => (false, "no crossing".into()),
    };
    Outcome::new(
        separated && gain_ok,
        format!(
            "4-ASK at {snr} dB: {order}; S=4 ASK-over-PAM gain at FER 1e-2 {gain} (target 0.75 ± 0.4); ASK points {ask_pts:?}, PAM points {pam_pts:?}"
        ),
    )
}

fn c8_appendix_identities() -> Outcome {
    let a = build_alphabet(AlphabetKind::Ask, 2).unwrap();
    let plain = a.clone().without_differential();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let n = 64;
    let u: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let snr = 10.0;

    // Noise-free sinc back-to-back frames: even samples carry |x_k|², odd
    // samples follow the two dominant taps ψ(±1/2) = 2/π.
    let sinc = |taps_half| Link::new(LinkConfig { alpha: 0.0, length_km: 0.0, taps_half, ..LinkConfig::default() }).unwrap();
    let g_half = 2.0 / std::f64::consts::PI;
    let mut even_err: f64 = 0.0;
    let mut odd_err: f64 = 0.0;
    let mut odd_err_full: f64 = 0.0;
    for (taps_half, dominant) in [(1usize, true), (20, false)] {
        let link = sinc(taps_half);
        let term = Termination::random(&plain, taps_half, taps_half, &mut rng);
        let f = link.simulate(&plain, &u, &term, snr, false, &mut rng).unwrap();
        let amp2 = f.amp * f.amp;
        let x = |j: i64| f.x_value(&plain, j).re;
        for k in 1..n as i64 {
            let even = f.sample(2 * k).unwrap();
            even_err = even_err.max((even - amp2 * x(k) * x(k)).abs() / amp2);
            let odd = f.sample(2 * k + 1).unwrap();
            let approx = 2.0 * (1.0 + x(k) * x(k + 1)) * g_half * g_half * amp2;
            let rel = (odd - approx).abs() / (4.0 * g_half * g_half * amp2);
            if dominant {
                odd_err = odd_err.max(rel);
            } else {
                odd_err_full = odd_err_full.max(rel);
            }
        }
    }
    let identities_ok = even_err < 0.01 && odd_err < 0.01;

    // All-zero head and tail: without differential coding the sign of the
    // whole block is unobservable and every symbol posterior is uniform.
    let link = Link::new(LinkConfig { alpha: 0.0, length_km: 30.0, taps_half: 2, ..LinkConfig::default() }).unwrap();
    let aux = AuxChannel::from_taps(&link.taps, 2).unwrap().with_moments([0.0; 2], [1.0; 2]).unwrap();
    let term = Termination::zeros(&a, 2, 2);
    let short: Vec<usize> = u[..8].to_vec();
    let f_plain = link.simulate(&plain, &short, &term, snr, true, &mut rng).unwrap();
    let post = enumerated_posteriors(&aux, &plain, &f_plain, &ConditioningMask::free(&plain, 8));
    let sdd_plain_oracle = short.iter().enumerate().map(|(k, &v)| 1.0 + post[k][v].log2()).sum::<f64>() / 8.0;
    let sdd = |alphabet: &Alphabet, frame: &ObservationFrame| {
        let t = Trellis::for_frame(&aux, alphabet, frame).unwrap();
        let c = rates::frame_contributions(&t, alphabet, frame, &RateRequest::from_kinds(&[RateKind::Sdd], &[])).unwrap();
        rates::aggregate(&[c], snr, frame.n())[0].rate_bpcu
    };
    let mut sdd_plain: f64 = 0.0;
    let mut sdd_diff = 0.0;
    let frames = 4;
    for _ in 0..frames {
        let data: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        sdd_plain = sdd_plain.max(sdd(&plain, &link.simulate(&plain, &data, &term, snr, true, &mut rng).unwrap()).abs());
        sdd_diff += sdd(&a, &link.simulate(&a, &data, &term, snr, true, &mut rng).unwrap()) / frames as f64;
    }
    let zero_ok = sdd_plain_oracle.abs() < 1e-9 && sdd_plain < 1e-6 && sdd_diff > 0.1;
    Outcome::new(
        identities_ok && zero_ok,
        format!(
            "even-sample max rel. error {even_err:.1e}, odd-sample dominant-tap error {odd_err:.1e} (< 1%; full sinc memory {odd_err_full:.2}); zero-terminated BPSK SDD: uncoded {sdd_plain:.1e} (enumeration {sdd_plain_oracle:.1e}), differential {sdd_diff:.3} (> 0.1)"
        ),
    )
}

fn c9_gibbs_cost() -> Outcome {
    let a = build_alphabet(AlphabetKind::Ask, 4).unwrap();
    let mut per_bit = Vec::new();
    for kp in [2usize, 4, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let (aux, f) = random_instance(&mut rng, &a, 64, kp, kp, 4.0);
        let p = SamplingProblem::new(&aux, &a, &f, vec![0; 64], &f.u, &[0], 0).unwrap();
        let mut st = SamplerState::new(&p, &mut rng);
        st.sweep(1.0, &mut rng, None);
        per_bit.push(st.mults as f64 / p.undecided() as f64);
    }
    let ratios = [per_bit[1] / per_bit[0], per_bit[2] / per_bit[1]];
    let pass = ratios.iter().all(|r| (r - 4.0).abs() <= 1.0 + 1e-9);
    Outcome::new(pass, format!("multiplies per bit {per_bit:?}, ratios {:.2} and {:.2} (4 ± 25%)", ratios[0], ratios[1]))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "FBA equals brute-force enumeration", c1_fba_matches_enumeration),
        (2, "rate-chain inequalities", c2_rate_chain),
        (3, "rate curves: JDD ceiling and SIC agreement", c3_rate_curves),
        (4, "SNR gains at 1 bpcu", c4_snr_gains),
        (5, "Gibbs b-SIC fidelity and stall flagging", c5_gibbs_fidelity),
        (6, "Gibbs iteration sensitivity", c6_iteration_sensitivity),
        (7, "polar FER ordering and gain", c7_fer_trend),
        (8, "appendix identities and differential coding", c8_appendix_identities),
        (9, "Gibbs sweep cost scaling", c9_gibbs_cost),
    ];
    let only: Option<Vec<usize>> = std::env::var("SICDD_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("SICDD_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut fatal = 0;
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        let known = KNOWN_GAPS.contains(&id);
        let tag = match (outcome.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known gap)",
            (false, false) => "FAIL",
        };
        println!("[{tag}] criterion {id}: {name} ({secs:.1} s): {}", outcome.detail);
        if !outcome.pass {
            failed += 1;
            if strict || !known {
                fatal += 1;
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if fatal > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
