use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bounded_vc::labeling::{message_bound, revive_bound};
use bounded_vc::labels::{
    cancels, incomparable, next_b, next_label, precedes_b, precedes_lb, Label, LabelComponent,
    LabelConfig, LabelError,
};
use bounded_vc::simnet::scenario::Scenario;
use bounded_vc::ProcId;
use bvc_cli::{cmd_replay, execute, Execution, CLEAN_SCENARIO, EXIT_OK, TRANSIENT_SCENARIO};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLEAN_BUDGET: Duration = Duration::from_secs(5);
const WRAP_BUDGET: Duration = Duration::from_secs(5);
const RECOVERY_BUDGET: Duration = Duration::from_secs(60);
const RECOVERY_SEEDS: u64 = 100;
const RECOVERY_STEPS: u64 = 200_000;
const TOKEN_SEEDS: u64 = 100;
const TOKEN_STEPS: u64 = 20_000;
const MIN_REVIVES: u64 = 10;
const LABEL_INSTANCES: usize = 1_000;
const DO_FOREVER_PER_PROC: u64 = 1;

const WRAP_SCENARIO: &str = r#"
N = 3
C = 1
MAXINT = 16
scheduler = "round-robin"
steps = 5000
seed = 1
increment_rate = 1.0
"#;

struct Line {
    id: u8,
    passed: bool,
    detail: String,
}

/// Every run of this target, kept for the cross-run criteria.
#[derive(Default)]
struct Ledger {
    invariant_checks: u64,
    explained_invariants: u64,
    unexplained_invariants: usize,
    do_forever_worst: u64,
    runs: usize,
    traces: usize,
    replay_failures: Vec<String>,
}

impl Ledger {
    fn absorb(&mut self, e: &Execution) {
        let o = &e.oracle;
        self.runs += 1;
        self.invariant_checks += o.counts().handler_checks;
        self.unexplained_invariants += o.unexplained_invariant_violations();
        self.explained_invariants +=
            (o.invariant_violations() - o.unexplained_invariant_violations()) as u64;
        self.do_forever_worst = self.do_forever_worst.max(
            o.unexplained_do_forever_restarts()
                .into_iter()
                .max()
                .unwrap_or(0),
        );
    }

    fn replay(&mut self, path: &Path) {
        self.traces += 1;
        let mut out = Vec::new();
        let mut err = Vec::new();
        if cmd_replay(path, &mut out, &mut err) != EXIT_OK {
            self.replay_failures.push(format!(
                "{}{}",
                String::from_utf8_lossy(&out).trim(),
                String::from_utf8_lossy(&err).trim()
            ));
        }
        std::fs::remove_file(path).ok();
    }
}

/// Runs `sc` with its trace written to `dir`, then replays and deletes the trace.
fn produce(sc: &Scenario, dir: &Path, name: &str, ledger: &mut Ledger) -> (Execution, Duration) {
    let path = dir.join(format!("{name}.trace.jsonl"));
    let start = Instant::now();
    let exec = {
        let mut w = BufWriter::new(File::create(&path).expect("temp trace"));
        let e = execute(sc, Some(&mut w)).expect("scenario runs");
        w.flush().expect("trace flush");
        e
    };
    let took = start.elapsed();
    ledger.absorb(&exec);
    ledger.replay(&path);
    (exec, took)
}

fn criterion1(dir: &Path, ledger: &mut Ledger) -> Line {
    let sc = Scenario::from_toml(CLEAN_SCENARIO).unwrap();
    let (e, took) = produce(&sc, dir, "clean", ledger);
    let o = &e.oracle;
    let passed = e.stats.b_restart == 0
        && o.requirement1_violations() == 0
        && o.causal_violations() == 0
        && o.counts().requirement1_samples > 0
        && o.counts().causal_samples > 0
        && took < CLEAN_BUDGET;
    Line {
        id: 1,
        passed,
        detail: format!(
            "B_restart={} requirement1 {}/{} causal {}/{} in {:.2?} (budget {:?})",
            e.stats.b_restart,
            o.requirement1_violations(),
            o.counts().requirement1_samples,
            o.causal_violations(),
            o.counts().causal_samples,
            took,
            CLEAN_BUDGET
        ),
    }
}

fn criteria2_and_3(dir: &Path, ledger: &mut Ledger) -> (Line, Line) {
    let sc = Scenario::from_toml(WRAP_SCENARIO).unwrap();
    let (e, took) = produce(&sc, dir, "wrap", ledger);
    let o = &e.oracle;
    let two = Line {
        id: 2,
        passed: e.stats.b_revive >= MIN_REVIVES
            && o.requirement1_violations() == 0
            && o.counts().requirement1_samples > 0
            && o.merge_violations() == 0
            && o.counts().merges_checked > 0
            && took < WRAP_BUDGET,
        detail: format!(
            "revives={} (min {MIN_REVIVES}) requirement1 {}/{} merge {}/{} in {:.2?} (budget {:?})",
            e.stats.b_revive,
            o.requirement1_violations(),
            o.counts().requirement1_samples,
            o.merge_violations(),
            o.counts().merges_checked,
            took,
            WRAP_BUDGET
        ),
    };
    let bound = revive_bound(sc.n, sc.c) as u64;
    let three = Line {
        id: 3,
        passed: e.revive_window_max <= bound,
        detail: format!(
            "max revives in any {}-step window {} (bound {bound})",
            sc.maxint, e.revive_window_max
        ),
    };
    (two, three)
}

fn criterion4(dir: &Path, ledger: &mut Ledger) -> Line {
    let base = Scenario::from_toml(TRANSIENT_SCENARIO).unwrap();
    let mut total = Duration::ZERO;
    let mut failures = Vec::new();
    let (mut restarts, mut latest) = (0u64, 0u64);
    for seed in 0..RECOVERY_SEEDS {
        let mut sc = base.clone();
        sc.seed = seed;
        sc.steps = RECOVERY_STEPS;
        sc.fault.transient_seed = Some(seed);
        let (e, took) = produce(&sc, dir, &format!("transient-{seed}"), ledger);
        total += took;
        let s = &e.stats;
        restarts = restarts.max(s.b_restart);
        latest = latest.max(s.last_restart_step.unwrap_or(0));
        let ok =
            s.restart_free_from(RECOVERY_STEPS / 2) && s.pigeonhole_holds() && e.global_invariants;
        if !ok {
            failures.push(format!(
                "seed {seed}: last restart {:?}, segment {} vs {:.1}, ginv {}",
                s.last_restart_step,
                s.max_segment,
                s.pigeonhole_bound(),
                e.global_invariants
            ));
        }
    }
    Line {
        id: 4,
        passed: failures.is_empty() && total < RECOVERY_BUDGET,
        detail: format!(
            "{}/{RECOVERY_SEEDS} seeds recovered, max B_restart {restarts}, latest restart at step {latest} of {RECOVERY_STEPS}, \
             {:.1?} total (budget {:?}){}",
            RECOVERY_SEEDS as usize - failures.len(),
            total,
            RECOVERY_BUDGET,
            failures.iter().take(3).map(|f| format!("; {f}")).collect::<String>()
        ),
    }
}

fn criterion5(dir: &Path, ledger: &mut Ledger) -> Line {
    let base = Scenario::from_toml(TRANSIENT_SCENARIO).unwrap();
    let m = message_bound(base.n, base.c) as u64;
    let (mut worst, mut worst_receive, mut over) = (0u64, 0u64, Vec::new());
    for seed in 0..TOKEN_SEEDS {
        let mut sc = base.clone();
        sc.seed = seed;
        sc.steps = TOKEN_STEPS;
        sc.fault.transient_seed = Some(seed);
        sc.fault.transient_scope = bounded_vc::simnet::TransientScope::Channels;
        let (e, _) = produce(&sc, dir, &format!("channels-{seed}"), ledger);
        let s = &e.stats;
        worst = worst.max(s.stale_token_restarts);
        worst_receive = worst_receive.max(s.receive_restarts);
        if s.stale_token_restarts > m {
            over.push(seed);
        }
    }
    Line {
        id: 5,
        passed: over.is_empty(),
        detail: format!(
            "max stale-token restarts per run {worst} (bound M={m}) over {TOKEN_SEEDS} seeds; \
             max receive restarts of any cause {worst_receive}{}",
            if over.is_empty() {
                String::new()
            } else {
                format!("; over bound: {over:?}")
            }
        ),
    }
}

fn random_component(rng: &mut ChaCha8Rng, cfg: &LabelConfig) -> LabelComponent {
    let picked = sample(rng, cfg.domain_size() as usize, cfg.k() as usize + 1);
    let mut values = picked.into_iter().map(|v| v as u32 + 1);
    let sting = values.next().unwrap();
    LabelComponent::new(sting, values, cfg).unwrap()
}

fn no_free_sting(cfg: &LabelConfig, comps: &[&LabelComponent]) -> bool {
    (1..=cfg.domain_size()).all(|v| comps.iter().any(|c| c.sting() == v || c.contains(v)))
}

fn criterion6() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut failures, mut exhausted, mut cancel_pairs) = (Vec::new(), 0usize, 0usize);
    for i in 0..LABEL_INSTANCES {
        let cfg = LabelConfig::new(rng.gen_range(2..=16)).unwrap();
        let size = rng.gen_range(0..=cfg.k() as usize);
        let comps: Vec<LabelComponent> = (0..size)
            .map(|_| random_component(&mut rng, &cfg))
            .collect();
        match next_b(comps.iter(), &cfg) {
            Ok(out) => {
                if !comps
                    .iter()
                    .all(|c| precedes_b(c, &out) && !precedes_b(&out, c))
                    || !out.is_valid(&cfg)
                {
                    failures.push(format!("next_b #{i}"));
                }
            }
            Err(LabelError::DomainExhausted)
                if no_free_sting(&cfg, &comps.iter().collect::<Vec<_>>()) =>
            {
                exhausted += 1
            }
            Err(e) => failures.push(format!("next_b #{i}: {e}")),
        }

        let creator = ProcId::new(rng.gen_range(1..=8)).unwrap();
        let mut history = Vec::new();
        let mut parts = 0;
        while parts < cfg.k() as usize {
            let ml = random_component(&mut rng, &cfg);
            let cl = (parts + 2 <= cfg.k() as usize && rng.gen_bool(0.3))
                .then(|| random_component(&mut rng, &cfg));
            parts += 1 + cl.is_some() as usize;
            if let Ok(l) = Label::new(creator, ml, cl) {
                history.push(l);
            }
            if rng.gen_bool(0.3) {
                break;
            }
        }
        match next_label(history.iter(), creator, &cfg) {
            Ok(out) => {
                let dominated = history.iter().all(|l| {
                    precedes_lb(l, &out) && l.cl().map_or(true, |c| precedes_b(c, out.ml()))
                });
                if !dominated || !out.is_legit() || out.creator() != creator {
                    failures.push(format!("next_label #{i}"));
                }
            }
            Err(LabelError::DomainExhausted) => {
                let parts: Vec<&LabelComponent> = history
                    .iter()
                    .flat_map(|l| std::iter::once(l.ml()).chain(l.cl()))
                    .collect();
                if no_free_sting(&cfg, &parts) {
                    exhausted += 1;
                } else {
                    failures.push(format!("next_label #{i}: exhausted with a free sting"));
                }
            }
            Err(e) => failures.push(format!("next_label #{i}: {e}")),
        }

        let a = Label::legit(
            ProcId::new(rng.gen_range(1..=3)).unwrap(),
            random_component(&mut rng, &cfg),
        );
        let b = Label::legit(
            ProcId::new(rng.gen_range(1..=3)).unwrap(),
            random_component(&mut rng, &cfg),
        );
        if cancels(&a, &b) && cancels(&b, &a) {
            cancel_pairs += 1;
            if !incomparable(&a, &b) {
                failures.push(format!("cancels #{i}"));
            }
        }
    }
    Line {
        id: 6,
        passed: failures.is_empty(),
        detail: format!(
            "{LABEL_INSTANCES} next_b and {LABEL_INSTANCES} next_label instances, {} failures, \
             {exhausted} verified domain exhaustions, {cancel_pairs} mutually canceling pairs{}",
            failures.len(),
            failures
                .iter()
                .take(3)
                .map(|f| format!("; {f}"))
                .collect::<String>()
        ),
    }
}

fn criterion7(ledger: &Ledger) -> Line {
    Line {
        id: 7,
        passed: ledger.unexplained_invariants == 0 && ledger.do_forever_worst <= DO_FOREVER_PER_PROC,
        detail: format!(
            "{} runs, {} handler checks, {} unexplained local_invariants failures ({} right after adopting a \
             received label), worst unexplained do-forever restarts per processor {} (max {DO_FOREVER_PER_PROC})",
            ledger.runs,
            ledger.invariant_checks,
            ledger.unexplained_invariants,
            ledger.explained_invariants,
            ledger.do_forever_worst,
        ),
    }
}

fn criterion8(ledger: &Ledger) -> Line {
    Line {
        id: 8,
        passed: ledger.replay_failures.is_empty() && ledger.traces > 0,
        detail: format!(
            "{}/{} traces replayed byte-identically{}",
            ledger.traces - ledger.replay_failures.len(),
            ledger.traces,
            ledger
                .replay_failures
                .iter()
                .take(2)
                .map(|f| format!("; {f}"))
                .collect::<String>()
        ),
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut ledger = Ledger::default();
    let mut lines = vec![criterion1(dir.path(), &mut ledger)];
    let (two, three) = criteria2_and_3(dir.path(), &mut ledger);
    lines.extend([two, three]);
    lines.push(criterion4(dir.path(), &mut ledger));
    lines.push(criterion5(dir.path(), &mut ledger));
    lines.push(criterion6());
    lines.push(criterion7(&ledger));
    lines.push(criterion8(&ledger));

    let mut out = io::stdout().lock();
    for l in &lines {
        writeln!(
            out,
            "criterion {}: {} {}",
            l.id,
            if l.passed { "PASS" } else { "FAIL" },
            l.detail
        )
        .ok();
    }
    if lines.iter().all(|l| l.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
