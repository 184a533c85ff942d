//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 7`.

mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use common::{
    all_trajectories, bayes_env, check_detachment, check_dominance, check_rnd_freeze, fd_check, MlpInstance,
    TbInstance,
};
use gflownet::env::{Environment, Trajectory};
use gflownet::envs::bitseq::{catalan, is_balanced};
use gflownet::envs::codon::{cai, mfe_of_bases, pair_energy, CodonUsage, MIN_HAIRPIN};
use gflownet::envs::{ChainEnv, CodonEnv, CodonWeights, Dag};
use gflownet::gflownet::{
    chain_solution, exact_terminal_distribution, sample_trajectories, target_distribution, tb_loss, SamplerMod,
};
use gflownet::metrics::{write_metrics_csv, MetricRecord};
use gflownet::trainer::{run, RunConfig, RunLog};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn config(v: Value) -> RunConfig {
    serde_json::from_value(v).expect("acceptance config")
}

fn train(v: &Value, seed: u64) -> Result<RunLog, String> {
    let mut v = v.clone();
    v["seed"] = seed.into();
    run(&config(v)).map_err(|e| format!("seed {seed}: {e}"))
}

fn last(log: &RunLog) -> &MetricRecord {
    log.rows.last().expect("final row")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_rel = 0.0f64;
    for seed in 0..50 {
        let m = MlpInstance::random(seed);
        let (w, r) = fd_check(&m.store, &m.grads(), |s| m.loss(s));
        let t = TbInstance::random(seed);
        let (w2, r2) = fd_check(t.policy.store(), &t.grads(), |s| t.loss(s));
        worst = worst.max(w).max(w2);
        worst_rel = worst_rel.max(r).max(r2);
    }
    let msg = format!("100 instances (50 MLP, 50 TB), worst relative error {worst_rel:.2e}");
    if worst < 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn chain_fixed_point() -> Outcome {
    let mut report = Vec::new();
    for n in [5, 10, 100] {
        let env = ChainEnv::with_default_rewards(n).unwrap();
        let (policy, _) = chain_solution(&env);
        let worst_loss = all_trajectories(&env)
            .iter()
            .map(|a| tb_loss(&policy, &env, &Trajectory::replay(&env, a).unwrap()).unwrap())
            .fold(0.0, f64::max);
        let exact = exact_terminal_distribution(&policy, &env, 1 << 12).unwrap();
        let target = target_distribution(&env, 1 << 12).unwrap();
        let gap = exact.probs.iter().zip(&target.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.push(format!("N={n}: max loss {worst_loss:.1e}, max gap {gap:.1e}"));
        if !(worst_loss < 1e-9 && gap <= 1e-6 && exact.states == target.states) {
            return Err(report.join("; "));
        }
    }
    Ok(report.join("; "))
}

fn chain_training() -> Outcome {
    let base = json!({
        "env": {"kind": "chain", "n_states": 100, "r_end": 101.0, "r_mid": 1.0},
        "policy": {"kind": "tabular"},
        "optimizer": {"kind": "sgd", "lr": 0.5, "log_z_lr": 0.1},
        "batch_size": 16,
        "trajectory_budget": 100000,
        "eval_every": 250
    });
    let target = 101.0 / 300.0;
    let mut lg = Vec::new();
    let mut tb_closest = Vec::new();
    for seed in SEEDS {
        let mut v = base.clone();
        v["explorer"] = json!({"kind": "lggfn", "lambda": 1.0});
        lg.push(last(&train(&v, seed)?).exit_prob_s0.unwrap());
        v["explorer"] = json!({"kind": "on_policy"});
        let log = train(&v, seed)?;
        let closest = log
            .rows
            .iter()
            .map(|r| (r.exit_prob_s0.unwrap() - target).abs())
            .fold(f64::INFINITY, f64::min);
        tb_closest.push(closest);
    }
    let hits = lg.iter().filter(|p| (*p - 0.337).abs() <= 0.02).count();
    let tb_away = tb_closest.iter().all(|d| *d > 0.05);
    let msg = format!(
        "LGGFN final P_F(exit|s0) [{}] ({hits}/3 within 0.337 ± 0.02); TB closest approach to 101/300 [{}]",
        fmt_list(&lg),
        fmt_list(&tb_closest)
    );
    if hits >= 2 && tb_away {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn hypergrid_base(height: usize) -> Value {
    json!({
        "env": {"kind": "hypergrid", "dims": 2, "height": height, "r0": 1e-4},
        "optimizer": {"kind": "adam", "lr": 0.002, "log_z_lr": 0.1},
        "batch_size": 8,
        "trajectory_budget": 10000,
        "eval_every": 1250
    })
}

fn hypergrid_ordering() -> Outcome {
    let mut report = Vec::new();
    let mut ok = true;
    for height in [16, 32] {
        let env = gflownet::envs::HypergridEnv::with_defaults(2, height, 1e-4).unwrap();
        let n_modes = env.mode_count() as u64;
        let mut l1 = HashMap::new();
        let mut all_modes = HashMap::new();
        for kind in ["on_policy", "lggfn"] {
            let mut v = hypergrid_base(height);
            v["explorer"] = json!({"kind": kind});
            let mut xs = Vec::new();
            let mut full = 0;
            for seed in SEEDS {
                let log = train(&v, seed)?;
                xs.push(last(&log).mean_l1.unwrap());
                full += usize::from(last(&log).modes_found == Some(n_modes));
            }
            l1.insert(kind, xs);
            all_modes.insert(kind, full);
        }
        let ratio = mean(&l1["on_policy"]) / mean(&l1["lggfn"]);
        let pass = ratio >= 10.0 && all_modes["lggfn"] >= 2 && 3 - all_modes["on_policy"] >= 2;
        ok &= pass;
        report.push(format!(
            "{height}x{height}: TB L1 [{}], LGGFN L1 [{}], mean ratio {ratio:.2}x, all {n_modes} modes found TB {}/3 LGGFN {}/3",
            fmt_list(&l1["on_policy"]),
            fmt_list(&l1["lggfn"]),
            all_modes["on_policy"],
            all_modes["lggfn"]
        ));
    }
    let msg = report.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lambda_insensitivity() -> Outcome {
    let mut means = Vec::new();
    for lambda in [0.5, 1.0, 2.0] {
        let mut v = hypergrid_base(16);
        v["explorer"] = json!({"kind": "lggfn", "lambda": lambda});
        let mut xs = Vec::new();
        for seed in SEEDS {
            xs.push(last(&train(&v, seed)?).mean_l1.unwrap());
        }
        means.push(mean(&xs));
    }
    let spread = means.iter().copied().fold(0.0, f64::max) / means.iter().copied().fold(f64::INFINITY, f64::min);
    let msg = format!("mean L1 at λ = 0.5, 1, 2: [{}], worst/best {spread:.2}", fmt_list(&means));
    if spread < 2.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bitseq() -> Outcome {
    let v = |kind: &str| {
        json!({
            "env": {"kind": "bitseq", "half_length": 8},
            "explorer": {"kind": kind},
            "batch_size": 16,
            "trajectory_budget": 200000,
            "eval_every": 12500,
            "eval": {"samples": 16000}
        })
    };
    let lg = train(&v("lggfn"), 0)?;
    let tb = train(&v("on_policy"), 0)?;
    let (lg, tb) = (last(&lg), last(&tb));
    let (div, lg_err, tb_err) = (lg.diversity.unwrap(), lg.exploration_error.unwrap(), tb.exploration_error.unwrap());
    let lg_ok = div >= 1350 && lg_err <= 0.05;
    let tb_ok = tb_err >= 0.5;
    let msg = format!(
        "LGGFN diversity {div}/1430, exploration error {lg_err:.4} ({}); TB exploration error {tb_err:.4}, diversity {} ({})",
        if lg_ok { "ok" } else { "fails" },
        tb.diversity.unwrap(),
        if tb_ok { "ok" } else { "fails: needs >= 0.5" }
    );
    if lg_ok && tb_ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn catalan_oracles() -> Outcome {
    let table: [(u32, u128); 3] = [(8, 1430), (12, 2674440), (16, 35357670)];
    let mut report = Vec::new();
    let mut ok = true;
    for (n, listed) in table {
        let c = catalan(n).unwrap();
        ok &= c == listed;
        report.push(format!("catalan({n}) = {c} vs table {listed}{}", if c == listed { "" } else { " MISMATCH" }));
    }
    let count = (0u32..1 << 16)
        .filter(|&v| {
            let bits: Vec<u8> = (0..16).map(|k| ((v >> (15 - k)) & 1) as u8).collect();
            is_balanced(&bits)
        })
        .count();
    ok &= count == 1430;
    report.push(format!("{count} balanced of 2^16"));
    let msg = report.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Skeleton plus v-structures identify a Markov equivalence class.
fn equivalence_key(g: &Dag) -> (Vec<(usize, usize)>, Vec<(usize, usize, usize)>) {
    let d = g.n_nodes();
    let adjacent = |a: usize, b: usize| g.has_edge(a, b) || g.has_edge(b, a);
    let mut skeleton = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            if adjacent(a, b) {
                skeleton.push((a, b));
            }
        }
    }
    let mut v = Vec::new();
    for c in 0..d {
        let parents = g.parents(c);
        for (i, &a) in parents.iter().enumerate() {
            for &b in &parents[i + 1..] {
                if !adjacent(a, b) {
                    v.push((a.min(b), a.max(b), c));
                }
            }
        }
    }
    v.sort();
    (skeleton, v)
}

fn bge_properties() -> Outcome {
    let mut pairs = 0;
    let mut worst = 0.0f64;
    for d in [2, 3] {
        for seed in 0..5 {
            let env = bayes_env(d, 100, seed);
            let dags = env.enumerate_states(1 << 10).unwrap();
            let mut classes: HashMap<_, Vec<f64>> = HashMap::new();
            for g in &dags {
                classes.entry(equivalence_key(g)).or_default().push(env.log_score(g).unwrap());
            }
            for scores in classes.values() {
                for i in 0..scores.len() {
                    for j in i + 1..scores.len() {
                        pairs += 1;
                        worst = worst.max((scores[i] - scores[j]).abs());
                    }
                }
            }
        }
    }
    let env = bayes_env(6, 100, 9);
    let sc = env.scorer();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Dag::empty(6);
    let mut worst_delta = 0.0f64;
    let mut additions = 0;
    while additions < 100 {
        let cand: Vec<(usize, usize)> = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .filter(|&(i, j)| g.can_add(i, j))
            .collect();
        let Some(&(i, j)) = cand.choose(&mut rng) else {
            g = Dag::empty(6);
            continue;
        };
        let h = g.with_edge(i, j);
        let total = env.log_score(&h).unwrap() - env.log_score(&g).unwrap();
        let local = sc.local_score(j, h.parent_mask(j)).unwrap() - sc.local_score(j, g.parent_mask(j)).unwrap();
        worst_delta = worst_delta.max((total - local).abs());
        additions += 1;
        g = if rng.random_bool(0.2) { Dag::empty(6) } else { h };
    }
    let msg = format!(
        "{pairs} equivalent pairs on 2 and 3 nodes, max score gap {worst:.1e}; 100 edge additions, max delta error {worst_delta:.1e}"
    );
    if pairs > 0 && worst <= 1e-8 && worst_delta <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bayes_posterior() -> Outcome {
    let v = json!({
        "env": {"kind": "bayes_dag", "n_nodes": 3, "n_samples": 100, "data_seed": 0},
        "explorer": {"kind": "lggfn"},
        "optimizer": {"kind": "adam", "lr": 0.001, "log_z_lr": 1.0},
        "batch_size": 16,
        "trajectory_budget": 20000,
        "eval_every": 1250
    });
    let mut l1 = Vec::new();
    for seed in SEEDS {
        l1.push(last(&train(&v, seed)?).mean_l1.unwrap());
    }
    let hits = l1.iter().filter(|x| **x <= 0.01).count();
    let msg = format!("mean L1 to the enumerated posterior over 25 DAGs [{}], {hits}/3 <= 0.01", fmt_list(&l1));
    if hits >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Every nested structure of `s`, listed explicitly as pair sets.
fn all_structures(s: &[u8], lo: usize, hi: usize) -> Vec<Vec<(usize, usize)>> {
    if lo >= hi {
        return vec![Vec::new()];
    }
    let mut out = all_structures(s, lo + 1, hi);
    for k in lo + MIN_HAIRPIN + 1..hi {
        if pair_energy(s[lo], s[k]).is_none() {
            continue;
        }
        let inner = all_structures(s, lo + 1, k);
        let outer = all_structures(s, k + 1, hi);
        for a in &inner {
            for b in &outer {
                let mut p = vec![(lo, k)];
                p.extend(a);
                p.extend(b);
                out.push(p);
            }
        }
    }
    out
}

fn structure_energy(s: &[u8], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| pair_energy(s[i], s[j]).unwrap()).sum()
}

fn codon() -> Outcome {
    let protein = "MKTAYIAKQR";
    let env = CodonEnv::new(protein, CodonWeights::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut report = Vec::new();
    let mut ok = true;

    let mut mismatched = 0;
    for _ in 0..200 {
        let len = rng.random_range(0..=14);
        let s: Vec<u8> = (0..len).map(|_| b"ACGU"[rng.random_range(0..4)]).collect();
        let brute = all_structures(&s, 0, s.len())
            .iter()
            .map(|p| structure_energy(&s, p))
            .fold(0.0, f64::min);
        mismatched += usize::from(brute != mfe_of_bases(&s));
    }
    ok &= mismatched == 0;
    report.push(format!("(b) Nussinov vs exhaustive structures: {mismatched}/200 mismatches"));

    let optimal = env.codons(&env.optimal_choices());
    let c = cai(&optimal, CodonUsage::human()).unwrap();
    ok &= c == 1.0;
    report.push(format!("(c) all-optimal CAI = {c:?}"));

    let v = |kind: &str| {
        json!({
            "env": {"kind": "codon", "protein": protein},
            "explorer": {"kind": kind},
            "batch_size": 16,
            "trajectory_budget": 20000,
            "eval_every": 1250
        })
    };
    let mut lg = Vec::new();
    let mut tb = Vec::new();
    let mut bad_decodes = 0;
    let mut sampled = 0;
    for seed in SEEDS {
        let log = train(&v("lggfn"), seed)?;
        lg.push(last(&log).topk_reward.unwrap());
        let policy = log.checkpoint.main.restore().unwrap();
        let trajs = sample_trajectories(&policy, &env, 500, SamplerMod::ON_POLICY, &mut rng).unwrap();
        for t in &trajs {
            sampled += 1;
            bad_decodes += usize::from(env.decode(t.terminal()).ok().as_deref() != Some(protein));
        }
        tb.push(last(&train(&v("on_policy"), seed)?).topk_reward.unwrap());
    }
    ok &= bad_decodes == 0;
    report.insert(0, format!("(a) {bad_decodes}/{sampled} sampled sequences fail to decode"));
    let wins = lg.iter().zip(&tb).filter(|(a, b)| a >= b).count();
    ok &= wins >= 2;
    report.push(format!(
        "(d) top-10 mean reward LGGFN [{}] vs TB [{}], LGGFN >= TB on {wins}/3",
        fmt_list(&lg),
        fmt_list(&tb)
    ));
    let msg = report.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn explorer_invariants() -> Outcome {
    let strict = check_dominance(10_000, 11)?;
    check_detachment(1)?;
    check_rnd_freeze(2)?;
    Ok(format!(
        "dominance on 10^4 inputs ({strict} strict, the rest exact at λL = 0); main params and grads untouched by aux rewards; RND target bit-identical after 20 updates"
    ))
}

fn metrics_bytes(log: &RunLog) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&log.rows, &mut buf).unwrap();
    buf
}

fn determinism() -> Outcome {
    let cases = [
        json!({
            "env": {"kind": "hypergrid", "dims": 2, "height": 8, "r0": 0.01},
            "explorer": {"kind": "lggfn"},
            "policy": {"kind": "mlp", "hidden_dims": [32, 32]},
            "iterations": 100, "eval_every": 25, "seed": 3
        }),
        json!({
            "env": {"kind": "hypergrid", "dims": 2, "height": 8, "r0": 0.01},
            "explorer": {"kind": "sagfn_rnd"},
            "policy": {"kind": "mlp", "hidden_dims": [32]},
            "iterations": 60, "eval_every": 20, "seed": 4
        }),
        json!({
            "env": {"kind": "bitseq", "half_length": 3},
            "explorer": {"kind": "adaptive_teachers"},
            "policy": {"kind": "mlp", "hidden_dims": [32]},
            "iterations": 60, "eval_every": 20, "seed": 5, "eval": {"samples": 500}
        }),
    ];
    for v in &cases {
        let cfg = config(v.clone());
        let a = metrics_bytes(&run(&cfg).map_err(|e| e.to_string())?);
        let b = metrics_bytes(&run(&cfg).map_err(|e| e.to_string())?);
        if a != b {
            return Err(format!("{} reruns differ", cfg.explorer.kind.name()));
        }
        let resolved = serde_json::to_string_pretty(&cfg.resolved()).unwrap();
        let back: RunConfig = serde_json::from_str(&resolved).map_err(|e| e.to_string())?;
        let c = metrics_bytes(&run(&back).map_err(|e| e.to_string())?);
        if a != c {
            return Err(format!("{} resolved-config rerun differs", cfg.explorer.kind.name()));
        }
    }
    Ok(format!("{} configs: reruns and resolved-config reruns give byte-identical metrics.csv", cases.len()))
}

const CRITERIA: [Criterion; 12] = [
    Criterion { id: 1, name: "gradient correctness", limit: Duration::from_secs(30), check: gradients },
    Criterion { id: 2, name: "chain analytic fixed point", limit: Duration::from_secs(10), check: chain_fixed_point },
    Criterion { id: 3, name: "chain training", limit: Duration::from_secs(300), check: chain_training },
    Criterion { id: 4, name: "hypergrid ordering", limit: Duration::from_secs(1200), check: hypergrid_ordering },
    Criterion { id: 5, name: "lambda insensitivity", limit: Duration::from_secs(1200), check: lambda_insensitivity },
    Criterion { id: 6, name: "bitseq N=8", limit: Duration::from_secs(1800), check: bitseq },
    Criterion { id: 7, name: "catalan and balance oracles", limit: Duration::from_secs(5), check: catalan_oracles },
    Criterion { id: 8, name: "BGe properties", limit: Duration::from_secs(10), check: bge_properties },
    Criterion { id: 9, name: "Bayesian posterior oracle", limit: Duration::from_secs(600), check: bayes_posterior },
    Criterion { id: 10, name: "codon environment", limit: Duration::from_secs(900), check: codon },
    Criterion { id: 11, name: "explorer invariants", limit: Duration::from_secs(30), check: explorer_invariants },
    Criterion { id: 12, name: "determinism and round-trip", limit: Duration::from_secs(120), check: determinism },
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let result = (c.check)();
        let elapsed = t.elapsed();
        let in_time = elapsed <= c.limit;
        let (pass, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let timing = format!("{:.1}s of {}s{}", elapsed.as_secs_f64(), c.limit.as_secs(), if in_time { "" } else { ", over the limit" });
        println!("{} criterion {:>2} {}: {detail} [{timing}]", if pass { "PASS" } else { "FAIL" }, c.id, c.name);
        if !pass {
            failed.push(c.id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
