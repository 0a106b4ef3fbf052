//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe2x2::baselines::{fisher_exact_one_sided, gd_expectation_check, ContingencyTable, ExpectationScheme};
use safe2x2::evalue::{bayes_factor_identity_check, simple_block_e_general, simple_block_log_e};
use safe2x2::restricted::point_alternative_from_rate;
use safe2x2::sim::{
    compare_growth, simulate_power, simulate_swepis, simulate_type1, swepis_models, type1_models, PowerSettings,
    Scenario, SimConfig, FISHER_LABEL, SWEPIS_BLOCKS,
};
use safe2x2::{
    AlternativePoint, BetaPriorConfig, Block, BlockDesign, Divergence, EvidenceProcess, ModelSpec, RestrictionConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bits(v: u32, len: usize) -> Vec<bool> {
    (0..len).map(|i| (v >> i) & 1 == 1).collect()
}

/// `max_theta E_theta[S]` by enumerating every block, with the e-value itself
/// recomputed in linear space from per-outcome probabilities.
fn sup_null_expectation(design: &BlockDesign, alt: &AlternativePoint) -> f64 {
    let n = design.n();
    let theta_0 = (design.n_a as f64 * alt.theta_a + design.n_b as f64 * alt.theta_b) / n as f64;
    let prob = |ys: &[bool], t: f64| -> f64 { ys.iter().map(|&y| if y { t } else { 1.0 - t }).product() };
    let blocks: Vec<(Vec<bool>, Vec<bool>)> = (0..1u32 << n)
        .map(|v| {
            let all = bits(v, n);
            (all[..design.n_a].to_vec(), all[design.n_a..].to_vec())
        })
        .collect();
    let values: Vec<Option<f64>> = blocks
        .iter()
        .map(|(a, b)| {
            let den = prob(a, theta_0) * prob(b, theta_0);
            (den > 0.0).then(|| prob(a, alt.theta_a) * prob(b, alt.theta_b) / den)
        })
        .collect();
    (0..=100)
        .map(|i| {
            let theta = i as f64 / 100.0;
            blocks
                .iter()
                .zip(&values)
                .map(|((a, b), s)| {
                    let p = prob(a, theta) * prob(b, theta);
                    match s {
                        Some(s) => p * s,
                        // Zero null-point probability: the block is impossible when theta = theta_0.
                        None if p == 0.0 => 0.0,
                        None => f64::INFINITY,
                    }
                })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn criterion_1() -> Outcome {
    let mut alternatives = Vec::new();
    for ia in 0..=20 {
        for ib in 0..=20 {
            // theta_a = theta_b in {0, 1} leaves E undefined (0/0) on blocks the null can produce
            if ia == ib && (ia == 0 || ia == 20) {
                continue;
            }
            alternatives.push(AlternativePoint::new(ia as f64 * 0.05, ib as f64 * 0.05).unwrap());
        }
    }
    let restrictions = [
        (Divergence::Difference, 0.05),
        (Divergence::Difference, 0.2),
        (Divergence::Difference, -0.1),
        (Divergence::LogOddsRatio, 2f64.ln()),
        (Divergence::LogOddsRatio, -1.0),
    ];
    let mut from_rate = 0;
    for (div, delta) in restrictions {
        for i in 1..20 {
            if let Ok(p) = point_alternative_from_rate(i as f64 * 0.05, div, delta) {
                alternatives.push(p);
                from_rate += 1;
            }
        }
    }
    let mut worst = f64::NEG_INFINITY;
    let mut designs = 0;
    for n_a in 1..=5 {
        for n_b in 1..=(6 - n_a) {
            designs += 1;
            let d = BlockDesign::new(n_a, n_b).unwrap();
            for alt in &alternatives {
                worst = worst.max(sup_null_expectation(&d, alt));
            }
        }
    }
    outcome(
        worst <= 1.0 + 1e-10,
        format!(
            "{designs} designs, {} alternatives ({from_rate} from rates): max sup E = {worst:.15}",
            alternatives.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let cfg = SimConfig {
        scenario: Scenario::Type1,
        replications: 1000,
        max_blocks: 1000,
        alpha: 0.05,
        models: type1_models(),
        fisher: true,
        seed: 7,
        ..SimConfig::default()
    };
    let res = simulate_type1(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in &res.methods {
        let (rate, se) = m.final_rate();
        let ok = if m.label == FISHER_LABEL {
            rate > 0.05 + 3.0 * se
        } else {
            m.rejection_rate.iter().zip(&m.se).all(|(r, s)| *r <= 0.05 + 3.0 * s.max(se))
        };
        pass &= ok;
        parts.push(format!("{}={rate:.3}(se {se:.4})", m.label));
    }
    outcome(pass, parts.join(", "))
}

fn criterion_3() -> Outcome {
    let point = swepis_models().pop().unwrap();
    let cfg = SimConfig {
        replications: 1000,
        seed: 1,
        models: vec![point],
        ..SimConfig::default()
    };
    let res = simulate_swepis(&cfg).unwrap();
    let frac = res.stopped_before_final_block[0];
    let m = &res.methods[0];
    let all_above = m
        .crossings
        .iter()
        .zip(&m.final_log_e)
        .all(|(c, l)| c.is_none() || l.exp() >= 20.0);
    outcome(
        frac >= 0.99 && all_above,
        format!(
            "stopped before block {SWEPIS_BLOCKS} in {:.1}% of 1000 replays; median stop {}; rejecting replays have E >= 20: {all_above}",
            100.0 * frac,
            m.stopping_time.quantiles[2]
        ),
    )
}

fn criterion_4() -> Outcome {
    let p = fisher_exact_one_sided(&ContingencyTable::new(0, 1381, 6, 1373));
    outcome((p - 0.015).abs() <= 0.002, format!("p = {p:.5}"))
}

fn criterion_5() -> Outcome {
    let poisson = gd_expectation_check(&ExpectationScheme::Poisson {
        rates: [1.0; 4],
        truncation: 30,
    })
    .unwrap();
    let multi = gd_expectation_check(&ExpectationScheme::IndepMultinomial {
        theta: 0.5,
        n_a: 10,
        n_b: 10,
    })
    .unwrap();
    let own = gd_expectation_check(&ExpectationScheme::SimpleE {
        alternative: AlternativePoint::new(0.3, 0.7).unwrap(),
        n_a: 10,
        n_b: 10,
    })
    .unwrap();
    outcome(
        poisson.value > 1.0 && multi.value > 1.0 && (own.value - 1.0).abs() <= 1e-10,
        format!(
            "poisson = {:.6} (omitted mass {:.1e}), indep_multinomial = {:.6}, simple e = {:.12}",
            poisson.value, poisson.omitted_mass, multi.value, own.value
        ),
    )
}

/// `ln B(a + u, b + t - u) - ln B(a, b)` as a finite product of rising factors.
fn ln_beta_binomial_ratio(a: f64, b: f64, u: u64, t: u64) -> f64 {
    let up: f64 = (0..u).map(|i| (a + i as f64).ln()).sum();
    let down: f64 = (0..t - u).map(|i| (b + i as f64).ln()).sum();
    let total: f64 = (0..t).map(|i| (a + b + i as f64).ln()).sum();
    up + down - total
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..100 {
        let gamma = [0.18, 0.5, 1.0, 5.0][rng.gen_range(0..4)];
        let prior = BetaPriorConfig::symmetric(gamma).unwrap();
        let (ta, tb): (f64, f64) = (rng.gen(), rng.gen());
        let len = rng.gen_range(1..200);
        let blocks: Vec<Block> = (0..len)
            .map(|_| Block::new(vec![rng.gen::<f64>() < ta], vec![rng.gen::<f64>() < tb]))
            .collect();
        let id = bayes_factor_identity_check(&prior, &blocks).unwrap();
        worst = worst.max(id.relative_gap());

        let (mut ua, mut ub) = (0u64, 0u64);
        let mut ln_pred = 0.0;
        for (j, b) in blocks.iter().enumerate() {
            let pa = (ua as f64 + gamma) / (j as f64 + 2.0 * gamma);
            let pb = (ub as f64 + gamma) / (j as f64 + 2.0 * gamma);
            ln_pred += if b.ys_a[0] { pa.ln() } else { (1.0 - pa).ln() };
            ln_pred += if b.ys_b[0] { pb.ln() } else { (1.0 - pb).ln() };
            ua += b.ys_a[0] as u64;
            ub += b.ys_b[0] as u64;
        }
        let t = blocks.len() as u64;
        let ln_marg = ln_beta_binomial_ratio(gamma, gamma, ua, t) + ln_beta_binomial_ratio(gamma, gamma, ub, t);
        worst_oracle = worst_oracle
            .max((ln_pred - ln_marg).exp_m1().abs())
            .max((id.log_predictive_product - ln_pred).exp_m1().abs());
    }
    outcome(
        worst <= 1e-12 && worst_oracle <= 1e-12,
        format!("100 streams: max relative gap {worst:.2e}, against product oracle {worst_oracle:.2e}"),
    )
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut worst = Vec::new();
    for delta in [0.3, 0.5, 0.8] {
        let cfg = SimConfig {
            scenario: Scenario::Power,
            replications: 1000,
            max_blocks: 500,
            alpha: 0.05,
            models: vec![ModelSpec::SymmetricBeta { gamma: 0.18 }],
            seed: 11,
            power: PowerSettings {
                target_power: 0.8,
                divergence: Divergence::Difference,
                delta: Some(delta),
                theta_a_grid: vec![0.1],
            },
            ..SimConfig::default()
        };
        let r = simulate_power(&cfg).unwrap().remove(0);
        let (m, e) = (r.worst_case_m, r.expected_stopping_time);
        match (m, e) {
            (Some(m), Some(e)) => pass &= e <= m as f64,
            _ => pass = false,
        }
        parts.push(format!("delta {delta}: m* = {m:?}, E[tau] = {:.2}", e.unwrap_or(f64::NAN)));
        worst.push(m.unwrap_or(u64::MAX));
    }
    let monotone = worst.windows(2).all(|w| w[1] <= w[0]);
    let strong_effect = worst[2] < 25;
    pass &= monotone && strong_effect;

    let truth = AlternativePoint::new(0.2, 0.8).unwrap();
    let g = compare_growth(
        &ModelSpec::SymmetricBeta { gamma: 0.18 },
        &ModelSpec::SymmetricBeta { gamma: 5.0 },
        &BlockDesign::paired(),
        &truth,
        100,
        2000,
        5,
    )
    .unwrap();
    let growth_ok = g.difference > 3.0 * g.combined_se();
    pass &= growth_ok;
    parts.push(format!(
        "growth 0.18 vs 5: {:.3} vs {:.3}, difference {:.3} (combined se {:.3})",
        g.first.mean_log_e,
        g.second.mean_log_e,
        g.difference,
        g.combined_se()
    ));
    outcome(pass, parts.join("; "))
}

/// Exact `E[S]` after `m` paired blocks under Bernoulli(`theta`) for both
/// groups, by dynamic programming over the success counts.
fn exact_beta_mean_e(gamma: f64, theta: f64, m: usize) -> f64 {
    let mut v = vec![vec![0.0; m + 1]; m + 1];
    v[0][0] = 1.0;
    for j in 0..m {
        let mut next = vec![vec![0.0; m + 1]; m + 1];
        for ua in 0..=j {
            for ub in 0..=j {
                let w = v[ua][ub];
                if w == 0.0 {
                    continue;
                }
                let ta = (ua as f64 + gamma) / (j as f64 + 2.0 * gamma);
                let tb = (ub as f64 + gamma) / (j as f64 + 2.0 * gamma);
                let t0 = (ta + tb) / 2.0;
                let q = |y: usize, t: f64| if y == 1 { t } else { 1.0 - t };
                for ya in 0..2 {
                    for yb in 0..2 {
                        let ratio = q(ya, ta) * q(yb, tb) / (q(ya, t0) * q(yb, t0));
                        next[ua + ya][ub + yb] += w * q(ya, theta) * q(yb, theta) * ratio;
                    }
                }
            }
        }
        v = next;
    }
    v.iter().flatten().sum()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // u^{n_a} v^{n_b} <= 1 whenever n_a u + n_b v <= n_a + n_b.
    let mut fact_max = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let n_a = rng.gen_range(1..=30) as f64;
        let n_b = rng.gen_range(1..=30) as f64;
        let u = rng.gen::<f64>() * (n_a + n_b) / n_a;
        let v = rng.gen::<f64>() * (n_a + n_b - n_a * u) / n_b;
        let ln = n_a * u.ln() + n_b * v.ln();
        fact_max = fact_max.max(ln);
    }
    let fact_ok = fact_max <= 1e-12;

    // Mean-one check without stopping: mean final E is at most 1, and for
    // beta priors it matches the exact expectation.
    let specs = [
        ModelSpec::SymmetricBeta { gamma: 0.18 },
        ModelSpec::SymmetricBeta { gamma: 0.5 },
        ModelSpec::Restricted(RestrictionConfig::new(Divergence::Difference, 0.05)),
        ModelSpec::Restricted(RestrictionConfig::new(Divergence::Difference, 0.05).with_control_rate(0.1)),
    ];
    let mut mean_one_ok = true;
    let mut means = Vec::new();
    for spec in &specs {
        let (mut s, mut sq) = (0.0, 0.0);
        let reps = 10_000;
        for _ in 0..reps {
            let mut p = EvidenceProcess::new(BlockDesign::paired(), spec.clone()).unwrap();
            for _ in 0..10 {
                let b = Block::new(vec![rng.gen::<f64>() < 0.1], vec![rng.gen::<f64>() < 0.1]);
                p.update_with_block(&b).unwrap();
            }
            let e = p.e_value();
            s += e;
            sq += e * e;
        }
        let mean = s / reps as f64;
        let se = ((sq / reps as f64 - mean * mean) / reps as f64).sqrt();
        mean_one_ok &= mean <= 1.0 + 4.0 * se;
        if let ModelSpec::SymmetricBeta { gamma } = spec {
            let exact = exact_beta_mean_e(*gamma, 0.1, 10);
            mean_one_ok &= (mean - exact).abs() <= 4.0 * se;
            means.push(format!("{mean:.3}±{se:.3} (exact {exact:.3})"));
        } else {
            means.push(format!("{mean:.3}±{se:.3}"));
        }
    }

    // Order invariance and the convexity rewrite on random blocks.
    let mut order_ok = true;
    let mut convex_gap = 0.0f64;
    for _ in 0..2000 {
        let (n_a, n_b) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let d = BlockDesign::new(n_a, n_b).unwrap();
        let alt = AlternativePoint::new(rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99)).unwrap();
        let ys_a: Vec<bool> = (0..n_a).map(|_| rng.gen()).collect();
        let ys_b: Vec<bool> = (0..n_b).map(|_| rng.gen()).collect();
        let base = simple_block_log_e(&Block::new(ys_a.clone(), ys_b.clone()), &d, &alt).unwrap();
        let mut rev = ys_a.clone();
        rev.reverse();
        let flipped = simple_block_log_e(&Block::new(rev, ys_b.clone()), &d, &alt).unwrap();
        order_ok &= (flipped - base).abs() <= 1e-15;

        let to_sym = |ys: &[bool]| ys.iter().map(|&y| y as usize).collect::<Vec<_>>();
        let general = simple_block_e_general(
            &to_sym(&ys_a),
            &to_sym(&ys_b),
            &d,
            &[1.0 - alt.theta_a, alt.theta_a],
            &[1.0 - alt.theta_b, alt.theta_b],
        )
        .unwrap();
        convex_gap = convex_gap.max((general.ln() - base).abs());
    }
    let convex_ok = convex_gap <= 1e-12;

    outcome(
        fact_ok && mean_one_ok && order_ok && convex_ok,
        format!(
            "fact max ln(u^na v^nb) = {fact_max:.2e}; mean final E {}; order invariance {order_ok}; convexity gap {convex_gap:.1e}",
            means.join(", ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("e-variable brute force over small designs", criterion_1),
        ("type-I error under optional stopping", criterion_2),
        ("SWEPIS permutation replay", criterion_3),
        ("Fisher p-value on the SWEPIS table", criterion_4),
        ("Gunel-Dickey expectations exceed one", criterion_5),
        ("Bayes-factor telescoping identity", criterion_6),
        ("power and growth properties", criterion_7),
        ("fact and process invariants", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} [{}] {name}: {} ({:.1}s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += (!o.pass) as usize;
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
