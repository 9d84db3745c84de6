use terse::env::{Environment, KeyEchoEnv, RelaySumEnv, EOS};
use terse::exec::Execution;
use terse::policy::{ContextKey, PolicyParams};
use terse::reward::RewardWeights;
use terse::trainer::{self, Trainer, TrainerConfig};
use terse::vocab::BOS;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(iterations: usize) -> TrainerConfig {
    TrainerConfig { batch_size: 8, group_size: 4, iterations, seed: 5, ..TrainerConfig::default() }
}

#[test]
fn same_seed_same_metrics() {
    let a = trainer::train(cfg(20), KeyEchoEnv::default()).unwrap();
    let b = trainer::train(cfg(20), KeyEchoEnv::default()).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let c = trainer::train(TrainerConfig { seed: 6, ..cfg(20) }, KeyEchoEnv::default()).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn worker_count_does_not_change_results() {
    let seq = TrainerConfig { execution: Execution::Sequential, ..cfg(20) };
    let par = TrainerConfig { execution: Execution::Parallel, ..cfg(20) };
    let a = trainer::train(seq, KeyEchoEnv::default()).unwrap();
    let b = trainer::train(par, KeyEchoEnv::default()).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn old_policy_only_changes_at_sync() {
    let c = TrainerConfig { sync_every: 3, ..cfg(30) };
    let mut t = Trainer::new(c, KeyEchoEnv::default()).unwrap();
    let mut saw_clipping = false;
    for i in 0..30 {
        let old_before = t.old_params().clone();
        let m = t.run_iteration().unwrap();
        if i % 3 == 0 {
            // first iteration after a sync starts on-policy
            assert_eq!(m.clip_fraction, 0.0);
        }
        saw_clipping |= m.clip_fraction > 0.0;
        if (i + 1) % 3 == 0 {
            assert_eq!(t.old_params(), t.params());
        } else {
            assert_eq!(t.old_params(), &old_before);
            assert_ne!(t.old_params(), t.params());
        }
    }
    assert!(saw_clipping, "stale old policy should eventually push some ratio past the band");
}

#[test]
fn epochs_and_momentum_paths_run() {
    let c = TrainerConfig { epochs: 3, momentum: true, ..cfg(10) };
    let (hist, params) = trainer::train(c, KeyEchoEnv::default()).unwrap();
    assert_eq!(hist.len(), 10);
    assert!(params.logits().all_finite());
    assert!(hist.iter().any(|m| m.clip_fraction > 0.0));
    for m in &hist {
        assert!((0.0..=1.0).contains(&m.clip_fraction));
        assert!(m.mean_tokens >= 0.0);
    }
}

#[test]
fn budget_lambda_stays_nonnegative() {
    let mut c = cfg(60);
    c.budget = terse::budget::BudgetController::new(0.0, 1.0, 0.01, true).unwrap();
    let (hist, _) = trainer::train(c, KeyEchoEnv::default()).unwrap();
    assert!(hist.iter().all(|m| m.lambda_tok_current >= 0.0));
    assert_eq!(hist[0].lambda_tok_current, 0.0);
    // initial messages are long, so the penalty rises
    assert!(hist[1].lambda_tok_current > 0.0);
}

#[test]
fn queries_do_not_depend_on_policy_or_variant() {
    let a = Trainer::new(cfg(1), KeyEchoEnv::default()).unwrap();
    let b_cfg = TrainerConfig {
        weights: RewardWeights::zero(),
        advantage: terse::gspo::AdvantageMode::Centered,
        ..cfg(1)
    };
    let mut b = Trainer::new(b_cfg, KeyEchoEnv::default()).unwrap();
    b.run_iteration().unwrap();
    for it in 0..5 {
        for i in 0..8 {
            assert_eq!(a.query(it, i), b.query(it, i));
        }
    }
}

#[test]
fn hand_built_optimum_evaluates_perfectly() {
    let env = KeyEchoEnv::default();
    let mut p = PolicyParams::uniform(env.vocabulary(), 1, 1);
    for k in 0..env.keys() as u32 {
        let key = 2 + k;
        let mut first = vec![0.0; 14];
        first[key as usize] = 20.0;
        p.logits_mut().insert(ContextKey::new(vec![key, BOS]), first).unwrap();
        let mut then = vec![0.0; 14];
        then[EOS as usize] = 20.0;
        p.logits_mut().insert(ContextKey::new(vec![key, key]), then).unwrap();
    }
    let s = trainer::evaluate(&p, &env, 100, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!((s.success_rate, s.mean_tokens, s.mean_turns), (1.0, 1.0, 1.0));
}

#[test]
fn key_echo_training_shortens_messages() {
    let c = TrainerConfig { iterations: 150, ..TrainerConfig::default() };
    let (hist, params) = trainer::train(c, KeyEchoEnv::default()).unwrap();
    let first = hist.first().unwrap();
    let last = hist.last().unwrap();
    assert!(last.mean_tokens < first.mean_tokens);
    assert!(last.mean_task_reward > first.mean_task_reward);
    let s = trainer::evaluate(&params, &KeyEchoEnv::default(), 100, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(s.success_rate, 1.0);
}

#[test]
fn relay_sum_learns_from_two_token_summary() {
    // 100 digit pairs make this much slower to learn than KeyEcho
    let c = TrainerConfig { iterations: 1000, ..TrainerConfig::default() };
    let (hist, params) = trainer::train(c, RelaySumEnv::new()).unwrap();
    assert_eq!(params.summary_len(), 2);
    let early = &hist[..10];
    let late = &hist[hist.len() - 10..];
    let mean = |h: &[trainer::IterationMetrics]| h.iter().map(|m| m.mean_task_reward).sum::<f64>() / h.len() as f64;
    assert!(mean(late) > mean(early) + 0.15, "{} -> {}", mean(early), mean(late));
}

#[test]
fn best_response_is_one_token_iff_penalty_below_one() {
    use terse::reward::composite_reward;
    use terse::vocab::TokenSequence;
    let env = KeyEchoEnv::default();
    let vocab = env.vocabulary();
    let q = env.generate_query(&mut ChaCha8Rng::seed_from_u64(2));
    // all responses of up to three content tokens, EOS-terminated
    let mut responses = vec![vec![EOS]];
    let mut frontier: Vec<Vec<u32>> = vec![vec![]];
    for _ in 0..3 {
        let mut next = Vec::new();
        for p in &frontier {
            for t in 1..vocab.size() as u32 {
                let mut y = p.clone();
                y.push(t);
                let mut done = y.clone();
                done.push(EOS);
                responses.push(done);
                next.push(y);
            }
        }
        frontier = next;
    }
    for lambda in [0.05, 0.5, 0.99, 1.01, 2.0] {
        let w = RewardWeights::new(lambda, 0.0, 0.0).unwrap();
        let best = responses
            .iter()
            .map(|y| {
                let y = TokenSequence::new(y.clone());
                let r = composite_reward(env.task_reward(&q, &y), &y, vocab, &w).total;
                (r, y.len() - 1)
            })
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
        assert_eq!(best.1 == 1, lambda < 1.0, "lambda {lambda}: best length {}", best.1);
    }
}

#[test]
fn sweep_tokens_trend_down_with_penalty() {
    let cfg = terse::config::RunConfig::from_toml("[reward]\nlambda_tok = 0.05\n").unwrap();
    let rows = terse::cli::sweep_lambda(&cfg, &[0.0, 0.02, 0.05]).unwrap();
    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda_tok).collect();
    assert_eq!(lambdas, vec![0.0, 0.02, 0.05]);
    let inversions: Vec<f64> = rows
        .windows(2)
        .map(|w| w[1].final_mean_tokens - w[0].final_mean_tokens)
        .filter(|d| *d > 0.0)
        .collect();
    assert!(inversions.len() <= 1 && inversions.iter().all(|d| *d <= 0.25), "{inversions:?}");
}
