#![allow(dead_code)]

use std::collections::HashSet;

use gflownet::env::{ActionId, Environment, Step, Trajectory};
use gflownet::envs::bayes::generate_er_scm;
use gflownet::envs::{BayesDagEnv, BgeParams};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

pub fn bayes_env(d: usize, n_samples: usize, seed: u64) -> BayesDagEnv {
    let (truth, data) = generate_er_scm(d, 0.5, n_samples, 1.0, seed).unwrap();
    BayesDagEnv::new(&data, BgeParams::default_for(d), Some(truth)).unwrap()
}

/// A uniformly random complete trajectory, as an action list.
pub fn random_actions<E: Environment>(env: &E, rng: &mut impl Rng) -> Vec<ActionId> {
    let mut s = env.initial_state();
    let mut out = Vec::new();
    loop {
        let a = *env.forward_actions(&s).choose(rng).unwrap();
        out.push(a);
        match env.apply(&s, a).unwrap() {
            Step::Sink => return out,
            Step::State(c) => s = c,
        }
    }
}

/// Walks forward at random, checking no state repeats and that each step has
/// its parent among the child's backward transitions.
pub fn check_walk<E: Environment>(env: &E, rng: &mut impl Rng) -> Result<Trajectory<E::State>, String> {
    let actions = random_actions(env, rng);
    let traj = Trajectory::replay(env, &actions).map_err(|e| e.to_string())?;
    traj.validate(env).map_err(|e| e.to_string())?;
    let mut seen = HashSet::new();
    for s in &traj.states {
        if !seen.insert(s.clone()) {
            return Err(format!("revisited {s:?}"));
        }
    }
    for w in 0..traj.n_moves() {
        let (s, a, c) = (&traj.states[w], traj.actions[w], &traj.states[w + 1]);
        let back = env.backward_transitions(c).map_err(|e| e.to_string())?;
        if !back.contains(&(s.clone(), a)) {
            return Err(format!("{s:?} --{a:?}--> {c:?} missing from its backward transitions"));
        }
        for (p, pa) in back {
            match env.apply(&p, pa).map_err(|e| e.to_string())? {
                Step::State(x) if &x == c => {}
                other => return Err(format!("backward ({p:?}, {pa:?}) replays to {other:?}")),
            }
        }
    }
    if traj.actions.len() > env.max_trajectory_len() {
        return Err("trajectory exceeds max_trajectory_len".into());
    }
    Ok(traj)
}

/// Every parent precedes its child in the enumeration order.
pub fn check_topological<E: Environment>(env: &E, cap: usize) -> Result<usize, String> {
    let order = env.enumerate_states(cap).map_err(|e| e.to_string())?;
    let index: std::collections::HashMap<&E::State, usize> = order.iter().enumerate().map(|(i, s)| (s, i)).collect();
    if order[0] != env.initial_state() {
        return Err("enumeration does not start at the source".into());
    }
    for (j, s) in order.iter().enumerate().skip(1) {
        for (p, _) in env.backward_transitions(s).map_err(|e| e.to_string())? {
            let i = *index.get(&p).ok_or_else(|| format!("parent {p:?} not enumerated"))?;
            if i >= j {
                return Err(format!("parent {p:?} at {i} after child {s:?} at {j}"));
            }
        }
    }
    Ok(order.len())
}

/// All complete trajectories by depth-first search.
pub fn all_trajectories<E: Environment>(env: &E) -> Vec<Vec<ActionId>> {
    fn go<E: Environment>(env: &E, s: &E::State, prefix: &mut Vec<ActionId>, out: &mut Vec<Vec<ActionId>>) {
        for a in env.forward_actions(s) {
            prefix.push(a);
            match env.apply(s, a).unwrap() {
                Step::Sink => out.push(prefix.clone()),
                Step::State(c) => go(env, &c, prefix, out),
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(env, &env.initial_state(), &mut Vec::new(), &mut out);
    out
}

/// Largest gradient error against central differences, measured
/// relatively above 1e-6 in magnitude and absolutely with floor 1e-8 below.
/// Returns (worst ratio of error to its tolerance, worst relative error).
pub fn fd_check(
    store: &gflownet::diff::ParamStore,
    grads: &[f64],
    mut loss: impl FnMut(&gflownet::diff::ParamStore) -> f64,
) -> (f64, f64) {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_rel = 0.0f64;
    let mut probe = store.clone();
    for k in 0..store.len() {
        let v = store.values()[k];
        probe.values_mut()[k] = v + h;
        let up = loss(&probe);
        probe.values_mut()[k] = v - h;
        let down = loss(&probe);
        probe.values_mut()[k] = v;
        let fd = (up - down) / (2.0 * h);
        let ad = grads[k];
        let mag = fd.abs().max(ad.abs());
        let err = (fd - ad).abs();
        if mag < 1e-6 {
            worst = worst.max(err / 1e-8);
        } else {
            let rel = err / mag;
            worst_rel = worst_rel.max(rel);
            worst = worst.max(rel / 1e-4);
        }
    }
    (worst, worst_rel)
}

/// A random MLP (random widths, activation and parameters) with a scalar loss
/// built from most tape ops. Holds its parameters and the loss inputs.
pub struct MlpInstance {
    pub spec: gflownet::diff::MlpSpec,
    pub store: gflownet::diff::ParamStore,
    pub input: gflownet::diff::Matrix,
    pub mask: Vec<bool>,
    pub picks: Vec<usize>,
    pub segments: Vec<usize>,
}

impl MlpInstance {
    pub fn random(seed: u64) -> Self {
        use gflownet::diff::{init_params, Activation, Matrix, MlpSpec};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let input_dim = rng.random_range(1..6);
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..7)).collect();
        let out = rng.random_range(2..5);
        let mut spec = MlpSpec::new(input_dim, hidden, out);
        spec.activation = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
        let mut store = init_params(&spec, seed);
        for v in store.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let n = rng.random_range(1..6);
        let input = Matrix::from_vec(n, input_dim, (0..n * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect());
        let mut mask = Vec::new();
        let mut picks = Vec::new();
        for _ in 0..n {
            let keep = rng.random_range(0..out);
            for c in 0..out {
                mask.push(c == keep || rng.random_bool(0.7));
            }
            let valid: Vec<usize> = (0..out).filter(|&c| mask[mask.len() - out + c]).collect();
            picks.push(*valid.choose(&mut rng).unwrap());
        }
        let n_seg = rng.random_range(1..=n);
        let segments = (0..n).map(|r| r % n_seg).collect();
        Self { spec, store, input, mask, picks, segments }
    }

    pub fn record(&self, tape: &mut gflownet::diff::Tape, store: &gflownet::diff::ParamStore) -> gflownet::diff::Var {
        use gflownet::diff::mlp_forward;
        let x = tape.constant(self.input.clone());
        let logits = mlp_forward(tape, &self.spec, store, "", x).unwrap();
        let lp = tape.masked_log_softmax(logits, self.mask.clone()).unwrap();
        let picked = tape.gather_cols(lp, self.picks.clone()).unwrap();
        let n_seg = self.segments.iter().max().unwrap() + 1;
        let seg = tape.segment_sum(picked, self.segments.clone(), n_seg).unwrap();
        let log_z = tape.param(store, "logZ");
        let shifted = tape.add(seg, log_z).unwrap();
        let sq = tape.square(shifted);
        let tb_like = tape.mean(sq);
        let s = tape.sigmoid(logits);
        let t = tape.tanh(s);
        let e = tape.exp(t);
        let l = tape.log(e).unwrap();
        let m = tape.mean(l);
        let two = tape.constant_scalar(2.0);
        let d = tape.div(m, two).unwrap();
        let mx = tape.max(d, tb_like).unwrap();
        let lse = tape.logsumexp(&[mx, tb_like, d]).unwrap();
        tape.scale(lse, 0.5)
    }

    pub fn loss(&self, store: &gflownet::diff::ParamStore) -> f64 {
        let mut tape = gflownet::diff::Tape::new();
        let v = self.record(&mut tape, store);
        tape.scalar(v)
    }

    pub fn grads(&self) -> Vec<f64> {
        let mut store = self.store.clone();
        store.zero_grads();
        let mut tape = gflownet::diff::Tape::new();
        let v = self.record(&mut tape, &store);
        tape.backward(v, &mut store);
        store.grads().to_vec()
    }
}

/// A random hypergrid MLP policy with one batch of uniform trajectories.
pub struct TbInstance {
    pub env: gflownet::envs::HypergridEnv,
    pub policy: gflownet::gflownet::PolicySet,
    pub trajs: Vec<Trajectory<Vec<usize>>>,
}

impl TbInstance {
    pub fn random(seed: u64) -> Self {
        use gflownet::diff::Activation;
        use gflownet::gflownet::PolicySet;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let env = gflownet::envs::HypergridEnv::with_defaults(rng.random_range(1..3), rng.random_range(2..5), 0.1).unwrap();
        let act = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
        let hidden = vec![rng.random_range(2..6)];
        let mut policy = PolicySet::mlp(env.feature_dim(), env.n_actions(), hidden, act, true, seed).unwrap();
        for v in policy.store_mut().values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let trajs = (0..rng.random_range(1..5))
            .map(|_| Trajectory::replay(&env, &random_actions(&env, &mut rng)).unwrap())
            .collect();
        Self { env, policy, trajs }
    }

    pub fn loss(&self, store: &gflownet::diff::ParamStore) -> f64 {
        let p = gflownet::gflownet::PolicySet::from_parts(self.policy.architecture().clone(), store.clone()).unwrap();
        let mut tape = gflownet::diff::Tape::new();
        let b = gflownet::gflownet::tb_loss_batch(&mut tape, &p, &self.env, &self.trajs, None).unwrap();
        tape.scalar(b.loss)
    }

    pub fn grads(&self) -> Vec<f64> {
        let mut store = self.policy.store().clone();
        store.zero_grads();
        let mut tape = gflownet::diff::Tape::new();
        let b = gflownet::gflownet::tb_loss_batch(&mut tape, &self.policy, &self.env, &self.trajs, None).unwrap();
        tape.backward(b.loss, &mut store);
        store.grads().to_vec()
    }
}

/// Dominance of the LGGFN reward on `n` random inputs, a fifth of which have
/// λ = 0 or L = 0. Returns the number of strict cases.
pub fn check_dominance(n: usize, seed: u64) -> Result<usize, String> {
    use gflownet::explorers::lggfn_aux_log_reward;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut strict = 0;
    for _ in 0..n {
        let log_r = rng.random_range(-30.0..30.0);
        let lambda = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) };
        let loss = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..200.0f64).powi(2) };
        let v = lggfn_aux_log_reward(log_r, loss, lambda);
        if lambda * loss == 0.0 {
            if v != log_r {
                return Err(format!("λL = 0 but {v} != {log_r}"));
            }
        } else if !(v > log_r) {
            return Err(format!("λ={lambda} L={loss}: {v} <= {log_r}"));
        } else {
            strict += 1;
        }
    }
    Ok(strict)
}

/// Scores and trains an auxiliary agent from a main agent's losses, then
/// checks the main parameters and gradient buffers are bit-identical.
pub fn check_detachment(seed: u64) -> Result<(), String> {
    use gflownet::diff::OptimizerConfig;
    use gflownet::explorers::{aux_log_rewards, ExplorerConfig, ExplorerKind};
    use gflownet::gflownet::{sample_trajectories, PolicyConfig, PolicySet, SamplerMod};
    use gflownet::trainer::Agent;
    let env = gflownet::envs::HypergridEnv::with_defaults(2, 6, 0.01).unwrap();
    let pc = PolicyConfig::Mlp {
        hidden_dims: vec![16],
        activation: gflownet::diff::Activation::Relu,
    };
    let mut main = PolicySet::for_env(&env, &pc, seed).unwrap();
    let marker: Vec<f64> = (0..main.store().len()).map(|k| k as f64 * 0.5 - 3.0).collect();
    main.store_mut().grads_mut().copy_from_slice(&marker);
    let before = main.clone();
    let mut aux = Agent::new(PolicySet::for_env(&env, &pc, seed + 1).unwrap(), OptimizerConfig::default());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for kind in [ExplorerKind::Lggfn, ExplorerKind::AdaptiveTeachers] {
        let cfg = ExplorerConfig::of_kind(kind);
        for _ in 0..5 {
            let trajs = sample_trajectories(&aux.policy, &env, 8, SamplerMod::ON_POLICY, &mut rng).unwrap();
            let r = aux_log_rewards(&cfg, &main, None, &env, &trajs).unwrap();
            aux.update(&env, &trajs, Some(&r)).unwrap();
        }
    }
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same(main.store().values(), before.store().values()) {
        return Err("main parameters moved".into());
    }
    if !same(main.store().grads(), &marker) {
        return Err("main gradient buffer touched".into());
    }
    if aux.version != 10 {
        return Err("auxiliary agent was not updated".into());
    }
    Ok(())
}

/// Trains SAGFN for a few iterations and compares the RND target bit-exactly.
pub fn check_rnd_freeze(seed: u64) -> Result<(), String> {
    use gflownet::explorers::ExplorerKind;
    use gflownet::trainer::{EnvConfig, RunConfig, Trainer};
    let mut cfg = RunConfig::new(EnvConfig::Hypergrid {
        dims: 2,
        height: 6,
        r0: 0.01,
        r1: 0.5,
        r2: 2.0,
    });
    cfg.explorer.kind = ExplorerKind::SagfnRnd;
    cfg.policy = gflownet::gflownet::PolicyConfig::Mlp {
        hidden_dims: vec![16],
        activation: gflownet::diff::Activation::Relu,
    };
    cfg.seed = seed;
    let env = gflownet::envs::HypergridEnv::with_defaults(2, 6, 0.01).unwrap();
    let mut t = Trainer::new(env, &cfg).map_err(|e| e.to_string())?;
    let target: Vec<u64> = t.rnd().unwrap().target().values().iter().map(|v| v.to_bits()).collect();
    let predictor = t.rnd().unwrap().predictor().clone();
    for _ in 0..20 {
        t.train_iteration().map_err(|e| e.to_string())?;
    }
    let after: Vec<u64> = t.rnd().unwrap().target().values().iter().map(|v| v.to_bits()).collect();
    if after != target {
        return Err("RND target changed".into());
    }
    if t.rnd().unwrap().predictor() == &predictor {
        return Err("RND predictor never trained".into());
    }
    Ok(())
}
