use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Envelope, TransientScope, World};
use crate::labeling::{LabelingState, SystemConfig};
use crate::labels::{next_label, Label, LabelComponent, LabelConfig};
use crate::protocol::{ClientMessage, Message, PendingBroadcast, ProcessorState};
use crate::vcpair::VectorClockPair;
use crate::ProcId;

const MAX_QUEUE_FILL: usize = 6;
const POOL_PER_CREATOR: usize = 3;

fn random_component(rng: &mut ChaCha8Rng, cfg: &LabelConfig) -> LabelComponent {
    let picked = sample(rng, cfg.domain_size() as usize, cfg.k() as usize + 1);
    let mut values = picked.into_iter().map(|v| v as u32 + 1);
    let sting = values.next().expect("k + 1 values");
    LabelComponent::new(sting, values, cfg).expect("sampled values are distinct and in range")
}

fn random_label(rng: &mut ChaCha8Rng, creator: ProcId, cfg: &LabelConfig) -> Label {
    let ml = random_component(rng, cfg);
    if rng.gen_bool(0.25) {
        let cl = random_component(rng, cfg);
        if let Ok(l) = Label::new(creator, ml.clone(), Some(cl)) {
            return l;
        }
    }
    Label::legit(creator, ml)
}

struct Pool {
    by_creator: Vec<Vec<Label>>,
}

impl Pool {
    fn new(rng: &mut ChaCha8Rng, sys: &SystemConfig) -> Self {
        let cfg = sys.labels();
        let by_creator = ProcId::all(sys.n())
            .map(|c| {
                let mut v = Vec::with_capacity(POOL_PER_CREATOR);
                v.push(random_label(rng, c, cfg));
                while v.len() < POOL_PER_CREATOR {
                    let next = if rng.gen_bool(0.5) {
                        let base = v.choose(rng).expect("non-empty").clone();
                        next_label([&base], c, cfg).expect("one input always fits")
                    } else {
                        random_label(rng, c, cfg)
                    };
                    v.push(next);
                }
                v
            })
            .collect();
        Pool { by_creator }
    }

    fn of(&self, rng: &mut ChaCha8Rng, creator: ProcId) -> Label {
        self.by_creator[creator.index()]
            .choose(rng)
            .expect("non-empty")
            .clone()
    }

    fn any(&self, rng: &mut ChaCha8Rng) -> Label {
        let c = ProcId::from_index(rng.gen_range(0..self.by_creator.len()));
        self.of(rng, c)
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, maxint: u64) -> Vec<u64> {
    (0..n).map(|_| rng.gen_range(0..maxint)).collect()
}

fn small_vec(rng: &mut ChaCha8Rng, n: usize, maxint: u64) -> Vec<u64> {
    let hi = maxint.min(8);
    (0..n).map(|_| rng.gen_range(0..hi)).collect()
}

fn random_pair(rng: &mut ChaCha8Rng, pool: &Pool, sys: &SystemConfig) -> VectorClockPair {
    let n = sys.n();
    VectorClockPair::new(
        pool.any(rng),
        random_vec(rng, n, sys.maxint()),
        random_vec(rng, n, sys.maxint()),
        pool.any(rng),
        random_vec(rng, n, sys.maxint()),
    )
    .expect("equal lengths")
}

fn random_processor(
    rng: &mut ChaCha8Rng,
    pool: &Pool,
    sys: &SystemConfig,
    id: ProcId,
) -> ProcessorState {
    let n = sys.n();
    let fill = sys.queue_capacity().min(MAX_QUEUE_FILL);
    let max = (0..n)
        .map(|_| rng.gen_bool(0.9).then(|| pool.any(rng)))
        .collect();
    let stored = ProcId::all(n)
        .map(|j| {
            let len = rng.gen_range(0..=fill);
            (0..len)
                .map(|_| {
                    if rng.gen_bool(0.05) {
                        pool.any(rng)
                    } else {
                        pool.of(rng, j)
                    }
                })
                .collect()
        })
        .collect();
    let labeling = LabelingState::from_raw(id, sys, max, stored, rng.gen_bool(0.7));
    let pairs = (0..n).map(|_| random_pair(rng, pool, sys)).collect();
    let pending = rng.gen_bool(0.3).then(|| {
        let mut dests: Vec<(ProcId, Option<Label>)> = ProcId::all(n)
            .filter(|&p| p != id)
            .map(|p| (p, rng.gen_bool(0.8).then(|| pool.any(rng))))
            .collect();
        let skip = rng.gen_range(0..dests.len());
        dests.drain(..skip);
        PendingBroadcast {
            snapshot: random_pair(rng, pool, sys),
            sender_max: pool.any(rng),
            remaining: VecDeque::from(dests),
        }
    });
    ProcessorState::from_raw(id, sys, pairs, labeling, pending)
}

fn random_message(
    rng: &mut ChaCha8Rng,
    pool: &Pool,
    sys: &SystemConfig,
    src: ProcId,
    receiver_local: &VectorClockPair,
) -> Message {
    let n = sys.n();
    let sender_max = pool.any(rng);
    let plausible = rng.gen_bool(0.5);
    let arriving = if plausible {
        VectorClockPair::new(
            sender_max.without_cancel(),
            small_vec(rng, n, sys.maxint()),
            vec![0; n],
            pool.any(rng),
            vec![0; n],
        )
        .expect("equal lengths")
    } else {
        random_pair(rng, pool, sys)
    };
    let rcvd_local = if plausible || rng.gen_bool(0.3) {
        receiver_local.clone()
    } else {
        random_pair(rng, pool, sys)
    };
    let last_sent = rng.gen_bool(0.5).then(|| pool.of(rng, src));
    Message {
        sender_max,
        last_sent,
        client: ClientMessage {
            arriving,
            rcvd_local,
        },
    }
}

pub(super) fn inject(world: &mut World, seed: u64, scope: TransientScope) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = *world.sys();
    let n = sys.n();
    let pool = Pool::new(&mut rng, &sys);
    if scope == TransientScope::All {
        world.taint_all_pairs();
        for id in ProcId::all(n) {
            let state = random_processor(&mut rng, &pool, &sys, id);
            world.set_proc(id, state);
            world.set_pending_broadcast(id, None);
        }
    }
    for src in ProcId::all(n) {
        for dst in ProcId::all(n).filter(|&d| d != src) {
            let len = rng.gen_range(0..=sys.c());
            let receiver_local = world.proc(dst).local().clone();
            let msgs: Vec<Message> = (0..len)
                .map(|_| random_message(&mut rng, &pool, &sys, src, &receiver_local))
                .collect();
            let ch = world.channel_mut(src, dst);
            ch.clear();
            for msg in msgs {
                ch.push(Envelope {
                    broadcast: None,
                    stale_token: true,
                    msg,
                });
            }
        }
    }
}
